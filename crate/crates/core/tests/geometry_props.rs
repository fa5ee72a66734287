use approx::assert_abs_diff_eq;
use photonstat::analytic::{compute_c, effective_n};
use photonstat::geometry::*;
use proptest::prelude::*;

fn scheme() -> impl Strategy<Value = ModeScheme> {
    prop_oneof![
        Just(ModeScheme::SingleMode),
        Just(ModeScheme::TwoPolarizationRandom),
        Just(ModeScheme::PerEmitterPrivate),
    ]
}

#[test]
fn shell_ellipsoid_brute_force_scan() {
    let axes = [60e-6, 50e-6, 20e-6];
    let pos = generate_positions(&CrystalSpec::shell_ellipsoid(100, axes, 9)).unwrap();
    assert_eq!(pos.len(), 100);
    let mut min_d = f64::INFINITY;
    for i in 0..pos.len() {
        for j in 0..i {
            let d: f64 = (0..3)
                .map(|k| (pos[i][k] - pos[j][k]).powi(2))
                .sum::<f64>()
                .sqrt();
            min_d = min_d.min(d);
        }
        let r: f64 = (0..3).map(|k| (pos[i][k] / axes[k]).powi(2)).sum();
        assert!(r <= 1.0 + 1e-12, "ion {i} outside: {r}");
    }
    assert!(min_d > 0.0);
}

#[test]
fn chain_examples() {
    let d = 5e-6;
    let pos = generate_positions(&CrystalSpec::linear_chain(2, d)).unwrap();
    assert_eq!(pos, vec![[0.0, 0.0, -d / 2.0], [0.0, 0.0, d / 2.0]]);
    assert_eq!(
        generate_positions(&CrystalSpec::linear_chain(1, d)).unwrap(),
        vec![[0.0; 3]]
    );
}

#[test]
fn chain_effective_n_saturates_past_axial_fwhm() {
    // Spacing fixed, chain grows along the optical axis: once it is longer
    // than the 3 µm FWHM, adding ions barely raises N_eff.
    let vol = DetectionVolume::default();
    let n_eff = |n: usize| {
        let pos = generate_positions(&CrystalSpec::linear_chain(n, 1e-6)).unwrap();
        effective_n(&detection_weights(&pos, &vol)).unwrap()
    };
    let (short, long, longer) = (n_eff(3), n_eff(20), n_eff(40));
    assert!(
        long < 5.0 && (longer - long).abs() < 1e-3,
        "{short} {long} {longer}"
    );
    // Fixed ion count, growing spacing: N_eff falls once the chain exceeds the FWHM.
    let mut prev = f64::INFINITY;
    for d in [1e-6, 2e-6, 4e-6, 8e-6] {
        let pos = generate_positions(&CrystalSpec::linear_chain(10, d)).unwrap();
        let ne = effective_n(&detection_weights(&pos, &vol)).unwrap();
        assert!(ne < prev, "{d}: {ne} >= {prev}");
        prev = ne;
    }
}

#[test]
fn two_polarization_c_over_seeds() {
    let pos = vec![[0.0; 3]; 100];
    let vol = DetectionVolume::default();
    let mut sum = 0.0;
    for seed in 0..200 {
        let m =
            build_mode_matrix(&pos, &vol, ModeScheme::TwoPolarizationRandom, 1e-4, seed).unwrap();
        sum += compute_c(&m).unwrap();
    }
    assert_abs_diff_eq!(sum / 200.0, 0.5, epsilon = 0.06);
    let one = build_mode_matrix(&pos, &vol, ModeScheme::TwoPolarizationRandom, 1e-4, 7).unwrap();
    assert_abs_diff_eq!(compute_c(&one).unwrap(), 0.5, epsilon = 0.06);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weight_invariant_under_axial_rotation(
        x in -3e-4f64..3e-4, y in -3e-4f64..3e-4, z in -5e-6f64..5e-6, phi in 0.0f64..6.3
    ) {
        let vol = DetectionVolume::default();
        let (c, s) = (phi.cos(), phi.sin());
        let w = gaussian_weight(&[x, y, z], &vol);
        let wr = gaussian_weight(&[c * x - s * y, s * x + c * y, z], &vol);
        prop_assert!((w - wr).abs() <= 1e-12 * w.max(1e-300));
    }

    #[test]
    fn mode_matrices_are_normalized(
        pts in prop::collection::vec((-2e-4f64..2e-4, -2e-4f64..2e-4, -4e-6f64..4e-6), 1..30),
        sch in scheme(),
        eta in 1e-6f64..=1.0,
        seed in any::<u64>(),
    ) {
        let pos: Vec<Vec3> = pts.iter().map(|&(x, y, z)| [x, y, z]).collect();
        let vol = DetectionVolume::default();
        let m = build_mode_matrix(&pos, &vol, sch, eta, seed).unwrap();
        let w = detection_weights(&pos, &vol);
        for i in 0..pos.len() {
            let e = m.emitter_efficiency(i);
            prop_assert!((e - eta * w[i]).abs() <= 1e-12 * eta * w[i]);
        }
        if pos.len() >= 2 {
            let c = compute_c(&m).unwrap();
            prop_assert!(c <= 1.0 + 1e-10);
        }
    }

    #[test]
    fn positions_round_trip_through_text(
        pts in prop::collection::vec((-1e-3f64..1e-3, -1e-3f64..1e-3, -1e-3f64..1e-3), 1..20)
    ) {
        let pos: Vec<Vec3> = pts.iter().map(|&(x, y, z)| [x, y, z]).collect();
        prop_assert_eq!(parse_positions(&format_positions(&pos)).unwrap(), pos);
    }

    #[test]
    fn shell_crystals_keep_ion_count(n in 1usize..300, seed in any::<u64>()) {
        let spec = CrystalSpec::oblate_with_spacing(n, 40e-6, 0.15, seed);
        prop_assert_eq!(generate_positions(&spec).unwrap().len(), n);
    }
}
