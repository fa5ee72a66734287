use std::path::Path;
use std::process::{Command, Output};

fn photonstat(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_photonstat"))
        .args(args)
        .current_dir(dir)
        .env_remove("PHOTONSTAT_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONFIG: &str = "\
# small run
crystal.n = 3
emitter.saturation = 0.002
motion.tau_m_s = 100e-6
sim.duration_s = 0.02
sim.realizations = 2
sim.seed = 7
output.dir = out
";

#[test]
fn invert_nmin_example() {
    let dir = tempfile::tempdir().unwrap();
    let o = photonstat(
        &["invert-nmin", "--alpha", "1.56", "--ntot", "202"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "153");
    let bad = photonstat(
        &["invert-nmin", "--alpha", "1.99", "--ntot", "100"],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("infeasible"));
}

#[test]
fn predict_example() {
    let dir = tempfile::tempdir().unwrap();
    let o = photonstat(
        &["predict", "--n", "3", "--c", "1", "--tau", "0"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let v: f64 = stdout(&o).trim().parse().unwrap();
    assert!((v - 4.0 / 3.0).abs() < 1e-12);
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(photonstat(&["bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(
        photonstat(&["predict", "--frobnicate"], dir.path())
            .status
            .code(),
        Some(1)
    );
    let missing = photonstat(&["--config", "nope.cfg", "predict"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
    std::fs::write(dir.path().join("bad.cfg"), "emitter.gama_hz = 1\n").unwrap();
    let typo = photonstat(&["--config", "bad.cfg", "predict"], dir.path());
    assert_eq!(typo.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&typo.stderr).contains("line 1"));
    let strong = photonstat(
        &[
            "--set",
            "emitter.saturation=0.5",
            "simulate",
            "--duration",
            "1e-4",
        ],
        dir.path(),
    );
    assert_eq!(strong.status.code(), Some(1));
}

#[test]
fn simulate_analyze_round_trip_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.cfg"), CONFIG).unwrap();
    let sim = photonstat(&["--config", "run.cfg", "simulate"], d);
    assert_eq!(
        sim.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&sim.stderr)
    );
    let first = std::fs::read(d.join("out/tags.pttg")).unwrap();
    assert_eq!(
        photonstat(&["--config", "run.cfg", "simulate"], d)
            .status
            .code(),
        Some(0)
    );
    assert_eq!(std::fs::read(d.join("out/tags.pttg")).unwrap(), first);

    let an = photonstat(&["--config", "run.cfg", "analyze", "out/tags.pttg"], d);
    assert_eq!(
        an.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&an.stderr)
    );
    let report = std::fs::read_to_string(d.join("out/report.txt")).unwrap();
    assert!(report.contains("# config_digest = "));
    assert!(report.contains("# tool = photonstat"));
    assert!(report.contains("# input_seed = 7"));
    assert!(report.contains("identity_exact = true"));
    let hist = std::fs::read_to_string(d.join("out/g2_hist.csv")).unwrap();
    assert!(hist.lines().any(|l| l == "lag_ps,g2,stderr"));

    // The text format gives the same alpha.
    assert_eq!(
        photonstat(
            &["--config", "run.cfg", "simulate", "--out", "out/tags.csv"],
            d
        )
        .status
        .code(),
        Some(0)
    );
    let csv = photonstat(
        &[
            "--config",
            "run.cfg",
            "analyze",
            "out/tags.csv",
            "--report",
            "out/r2.txt",
        ],
        d,
    );
    assert_eq!(csv.status.code(), Some(0));
    let alpha_line = |s: &str| {
        s.lines()
            .find(|l| l.starts_with("alpha ="))
            .unwrap()
            .to_string()
    };
    assert_eq!(alpha_line(&stdout(&an)), alpha_line(&stdout(&csv)));
}

#[test]
fn analyze_without_clicks_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("empty.csv"),
        "# duration_ps=1000000\nchannel,timestamp_ps\n",
    )
    .unwrap();
    let o = photonstat(&["analyze", "empty.csv", "--max-lag-ps", "0"], d);
    assert_eq!(o.status.code(), Some(2));
    let garbage = photonstat(&["analyze", "missing.pttg"], d);
    assert_eq!(garbage.status.code(), Some(2));
}

#[test]
fn predict_writes_curve_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = photonstat(&["--set", "crystal.n=4", "predict", "--out", "p.csv"], d);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(d.join("p.csv")).unwrap();
    assert!(text.contains("# config_digest = "));
    assert!(text.contains("# c_factor = 1"));
    assert!(text.contains("# alpha_windowed = "));
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "tau_s,g2");
    assert_eq!(rows.len(), 202);
    let again = photonstat(&["--set", "crystal.n=4", "predict", "--out", "q.csv"], d);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(text, std::fs::read_to_string(d.join("q.csv")).unwrap());
}

#[test]
fn sweep_writes_table_and_script() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = [
        "sweep",
        "--n-list",
        "1,2,6",
        "--realizations",
        "2",
        "--duration",
        "0.005",
    ];
    let o = photonstat(
        &[&args[..], &["--out", "s.csv", "--gnuplot", "s.gp"]].concat(),
        d,
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let table = std::fs::read_to_string(d.join("s.csv")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(rows[0].starts_with("n,alpha,alpha_stderr,beta"));
    assert_eq!(rows.len(), 4);
    assert!(std::fs::read_to_string(d.join("s.gp"))
        .unwrap()
        .contains("'s.csv'"));
    let threads = Command::new(env!("CARGO_BIN_EXE_photonstat"))
        .args(args)
        .args(["--out", "t.csv"])
        .current_dir(d)
        .env("PHOTONSTAT_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(0));
    assert_eq!(table, std::fs::read_to_string(d.join("t.csv")).unwrap());
}

#[test]
fn gen_crystal_writes_readable_positions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = photonstat(
        &[
            "gen-crystal",
            "--kind",
            "oblate",
            "--n",
            "40",
            "--seed",
            "2",
            "--out",
            "c.txt",
        ],
        d,
    );
    assert_eq!(o.status.code(), Some(0));
    let pos = photonstat::geometry::read_positions(&d.join("c.txt")).unwrap();
    assert_eq!(pos.len(), 40);
    std::fs::write(
        d.join("c.cfg"),
        "crystal.kind = file\ncrystal.file = c.txt\n",
    )
    .unwrap();
    let p = photonstat(&["--config", "c.cfg", "predict", "--out", "p.csv"], d);
    assert_eq!(
        p.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&p.stderr)
    );
    assert!(
        photonstat(&["gen-crystal", "--kind", "cube"], d)
            .status
            .code()
            == Some(1)
    );
}

#[test]
fn thread_cap_must_be_positive() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_photonstat"))
        .args(["predict", "--tau", "0"])
        .current_dir(dir.path())
        .env("PHOTONSTAT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
