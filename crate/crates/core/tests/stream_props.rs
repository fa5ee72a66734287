use std::collections::{BTreeMap, BTreeSet};

use photonstat::analytic::{click_stats, LightKind};
use photonstat::estimators::*;
use photonstat::synthetic::{one_photon_per_bin, poisson_pair, thermal_pair};
use photonstat::timetags::*;
use proptest::prelude::*;

fn tags() -> impl Strategy<Value = TimeTagStream> {
    (
        prop::collection::vec((any::<bool>(), 0u64..200_000), 0..300),
        0u64..5,
    )
        .prop_map(|(raw, extra)| {
            let recs = raw
                .into_iter()
                .map(|(a, t)| TimeTag::new(if a { Channel::A } else { Channel::B }, t))
                .collect();
            let mut meta = BTreeMap::new();
            meta.insert("seed".to_string(), extra.to_string());
            let mut s = TimeTagStream::from_unsorted(recs, meta);
            s.set_duration_ps(200_000);
            s
        })
}

/// Bin-by-bin counts with hash sets, for comparison with the sweep.
fn naive_counts(s: &TimeTagStream, width: u64, lag: i64) -> BinCounts {
    let d = s.duration_ps() as i64;
    let w = width as i64;
    let a: BTreeSet<i64> = s
        .timestamps(Channel::A)
        .iter()
        .map(|&t| t as i64 / w)
        .collect();
    let b: BTreeSet<i64> = s
        .timestamps(Channel::B)
        .iter()
        .map(|&t| (t as i64 - lag).div_euclid(w))
        .collect();
    let mut c = BinCounts::default();
    for i in 0..=d / w {
        // Pair i needs [iw, (i+1)w) and its lagged copy inside [0, d).
        let (s0, e0) = (i * w, (i + 1) * w);
        if s0 < 0 || e0 > d || s0 + lag < 0 || e0 + lag > d {
            continue;
        }
        let (ha, hb) = (a.contains(&i), b.contains(&i));
        c.n_bins += 1;
        c.clicks_a += ha as u64;
        c.clicks_b += hb as u64;
        c.coincidences += (ha && hb) as u64;
        c.empty_both += (!ha && !hb) as u64;
    }
    c
}

fn opts(window_ps: u64, lag_ps: i64, n: usize) -> BinningOptions {
    BinningOptions {
        window: window_ps as f64 * 1e-12,
        lag: lag_ps as f64 * 1e-12,
        n_segments: n,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn binary_and_csv_round_trip(s in tags()) {
        let bytes = encode_stream(&s).unwrap();
        prop_assert_eq!(&decode_stream(&bytes).unwrap(), &s);
        prop_assert_eq!(encode_stream(&s).unwrap(), bytes);
        let csv = encode_csv(&s).unwrap();
        prop_assert_eq!(decode_csv(csv.as_bytes()).unwrap(), s);
    }

    #[test]
    fn segment_counts_match_naive_binning(
        s in tags(), w in 500u64..20_000, lag in -30_000i64..30_000, k in 1usize..4
    ) {
        let seg = match segment_counts(&s.split_channels().0, &s.split_channels().1, &opts(w, lag, k)) {
            Ok(v) => v,
            Err(_) => return Ok(()),
        };
        let total = total_counts(&seg);
        prop_assert_eq!(total, naive_counts(&s, w, lag));
        prop_assert!(seg.iter().all(BinCounts::identity_holds));
    }

    #[test]
    fn segments_partition_the_stream(s in tags(), k in 1usize..8) {
        let parts = segment(&s, k).unwrap();
        prop_assert_eq!(parts.iter().map(TimeTagStream::len).sum::<usize>(), s.len());
        prop_assert_eq!(parts.iter().map(TimeTagStream::duration_ps).sum::<u64>(), s.duration_ps());
    }

    #[test]
    fn thin_keeps_a_subset(s in tags(), q in 0.0f64..=1.0, seed in any::<u64>()) {
        let t = thin(&s, q, seed).unwrap();
        let all: BTreeSet<_> = s.records().iter().map(|r| (r.timestamp_ps, r.channel.code())).collect();
        prop_assert!(t.records().iter().all(|r| all.contains(&(r.timestamp_ps, r.channel.code()))));
        prop_assert_eq!(&t, &thin(&s, q, seed).unwrap());
    }
}

#[test]
fn decreasing_timestamps_are_rejected() {
    let recs = vec![TimeTag::new(Channel::A, 10), TimeTag::new(Channel::B, 5)];
    assert!(TimeTagStream::new(recs.clone(), BTreeMap::new()).is_err());
    let mut bytes = encode_stream(&TimeTagStream::from_unsorted(recs, BTreeMap::new())).unwrap();
    // Swap the two timestamps in place.
    let n = bytes.len();
    let (r0, r1) = (n - 2 * RECORD_BYTES, n - RECORD_BYTES);
    let first: Vec<u8> = bytes[r0..r1].to_vec();
    let second: Vec<u8> = bytes[r1..].to_vec();
    bytes[r0..r1].copy_from_slice(&second);
    bytes[r1..].copy_from_slice(&first);
    assert!(matches!(
        decode_stream(&bytes),
        Err(photonstat::Error::Format { .. })
    ));
}

#[test]
fn files_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let s = poisson_pair(1e5, 1e-3, 4).unwrap();
    for name in ["a.pttg", "b.pttg", "a.csv", "b.csv"] {
        write_any(&s, &dir.path().join(name)).unwrap();
    }
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.pttg"), read("b.pttg"));
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_eq!(read_any(&dir.path().join("a.csv")).unwrap(), s);
    let empty = TimeTagStream::empty(1000);
    write_any(&empty, &dir.path().join("e.pttg")).unwrap();
    assert_eq!(read_any(&dir.path().join("e.pttg")).unwrap(), empty);
}

fn binomial_ok(k: usize, n: usize, p: f64) -> bool {
    let mean = n as f64 * p;
    (k as f64 - mean).abs() <= 3.0 * (mean * (1.0 - p)).sqrt()
}

#[test]
fn thin_is_binomial_and_composes() {
    let s = poisson_pair(5e8, 1e-3, 1).unwrap();
    let n = s.len();
    assert!(n > 900_000);
    let half = thin(&s, 0.5, 2).unwrap();
    assert!(binomial_ok(half.len(), n, 0.5), "{} of {n}", half.len());
    let twice = thin(&half, 0.4, 3).unwrap();
    let once = thin(&s, 0.2, 4).unwrap();
    assert!(binomial_ok(twice.len(), n, 0.2));
    assert!(binomial_ok(once.len(), n, 0.2));
    // Difference of two independent Binomial(n, 0.2) counts.
    let sd = (2.0 * n as f64 * 0.2 * 0.8).sqrt();
    assert!((twice.len() as f64 - once.len() as f64).abs() < 3.0 * sd);
}

#[test]
fn inject_into_empty_is_poisson() {
    let (rate, d) = (2e5, 0.5);
    let mean = rate * d;
    let mut counts = Vec::new();
    for seed in 0..20 {
        let bare = TimeTagStream::new(Vec::new(), BTreeMap::new()).unwrap();
        let s = inject_poisson(&bare, rate, d, seed).unwrap();
        for ch in [Channel::A, Channel::B] {
            let k = s.count(ch) as f64;
            assert!((k - mean).abs() < 4.0 * mean.sqrt(), "{k}");
            counts.push(k);
        }
        assert_eq!(s.duration_ps(), seconds_to_ps(d));
    }
    let m = counts.iter().sum::<f64>() / counts.len() as f64;
    let var = counts.iter().map(|k| (k - m).powi(2)).sum::<f64>() / (counts.len() - 1) as f64;
    assert!((var / mean - 1.0).abs() < 0.8, "dispersion {}", var / mean);
}

fn within(e: &Estimate, target: f64, k: f64) -> bool {
    (e.value - target).abs() <= k * e.stderr
}

#[test]
fn thermal_alpha_and_beta_match_click_stats() {
    for (nbar, bins) in [(0.02, 20_000_000u64), (0.2, 5_000_000)] {
        let s = thermal_pair(nbar, 1e-9, bins, 42).unwrap();
        let (a, b) = s.split_channels();
        let exact = click_stats(LightKind::ThermalSingleMode, nbar).unwrap();
        let alpha = estimate_alpha(&a, &b, 1e-9, 0.0).unwrap();
        let beta = estimate_beta(&a, &b, 1e-9, 0.0).unwrap();
        assert!(
            within(&alpha, exact.alpha, 3.0),
            "nbar {nbar}: {alpha:?} vs {}",
            exact.alpha
        );
        assert!(
            within(&beta, exact.beta, 3.0),
            "nbar {nbar}: {beta:?} vs {}",
            exact.beta
        );
    }
}

#[test]
fn alpha_is_loss_invariant() {
    let s = thermal_pair(0.01, 1e-9, 20_000_000, 7).unwrap();
    let (a, b) = s.split_channels();
    let before = estimate_alpha(&a, &b, 1e-9, 0.0).unwrap();
    let after = estimate_alpha(
        &thin(&a, 0.5, 1).unwrap(),
        &thin(&b, 0.5, 2).unwrap(),
        1e-9,
        0.0,
    )
    .unwrap();
    let d = difference(&before, &after);
    assert!(d.value.abs() <= 3.0 * d.stderr, "{before:?} vs {after:?}");
}

#[test]
fn beta_is_noise_invariant_and_alpha_moves_to_one() {
    let s = thermal_pair(0.2, 1e-9, 5_000_000, 9).unwrap();
    let noisy = inject_poisson(&s, 2e7, s.duration_s(), 10).unwrap();
    let (a, b) = s.split_channels();
    let (na, nb) = noisy.split_channels();
    let b0 = estimate_beta(&a, &b, 1e-9, 0.0).unwrap();
    let b1 = estimate_beta(&na, &nb, 1e-9, 0.0).unwrap();
    let d = difference(&b0, &b1);
    assert!(d.value.abs() <= 3.0 * d.stderr, "{b0:?} vs {b1:?}");
    let a0 = estimate_alpha(&a, &b, 1e-9, 0.0).unwrap();
    let a1 = estimate_alpha(&na, &nb, 1e-9, 0.0).unwrap();
    assert!(a1.value < a0.value && a1.value > 1.0, "{a0:?} -> {a1:?}");
}

#[test]
fn poisson_pair_is_uncorrelated() {
    let s = poisson_pair(2e7, 1.0, 3).unwrap();
    let (a, b) = s.split_channels();
    let alpha = estimate_alpha(&a, &b, 1e-9, 0.0).unwrap();
    assert!(within(&alpha, 1.0, 3.0), "{alpha:?}");
}

#[test]
fn one_photon_per_bin_never_coincides() {
    let s = one_photon_per_bin(1e-9, 100_000, 1).unwrap();
    let (a, b) = s.split_channels();
    let c = total_counts(&segment_counts(&a, &b, &BinningOptions::default()).unwrap());
    assert_eq!(c.coincidences, 0);
    assert_eq!(c.empty_both, 0);
    assert!(c.identity_holds());
}

#[test]
fn analysis_is_deterministic() {
    let s = thermal_pair(0.1, 1e-9, 200_000, 1).unwrap();
    let (a, b) = s.split_channels();
    let o = AnalysisOptions {
        binning: BinningOptions::default(),
        histogram: Some((1e-9, 20e-9)),
    };
    let r1 = analyze(&a, &b, &o).unwrap();
    let r2 = analyze(&a, &b, &o).unwrap();
    assert_eq!(r1.to_text(), r2.to_text());
    assert!(r1.identity_exact);
    assert!(r1.verdicts.super_poissonian.flag);
}

#[test]
fn no_clicks_is_undefined() {
    let e = TimeTagStream::empty(1_000_000);
    let s = poisson_pair(1e8, 1e-6, 1).unwrap();
    let (a, _) = s.split_channels();
    assert!(matches!(
        estimate_alpha(&a, &e, 1e-9, 0.0),
        Err(photonstat::Error::UndefinedEstimate(_))
    ));
}
