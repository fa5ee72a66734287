//! Physical parameter types and single-emitter correlation functions.
//!
//! The emitter is a weakly driven two-level system: its intensity correlation
//! recovers from perfect antibunching as `(1 - exp(-Γτ/2))²`, and its field
//! correlation is a mixture of an elastic (coherent) part and an inelastic
//! part decaying at `Γ/2`. Thermal motion along the detection wave vector is
//! an Ornstein-Uhlenbeck process, which dephases pairs of emitters.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default excited-state decay rate, 2π × 20 MHz.
pub const DEFAULT_GAMMA: f64 = 2.0 * PI * 20.0e6;
/// Default scattered wavelength (m).
pub const DEFAULT_WAVELENGTH: f64 = 397e-9;
/// Default motional correlation time (s).
pub const DEFAULT_TAU_M: f64 = 1e-6;
/// Default drive saturation parameter.
pub const DEFAULT_SATURATION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmitterModel {
    /// Excited-state decay rate (s⁻¹).
    pub gamma: f64,
    /// Drive saturation parameter, `s ≪ 1` for the weak-driving regime.
    pub saturation: f64,
    /// Laser detuning (rad/s).
    pub detuning: f64,
    /// Scattered wavelength (m).
    pub wavelength: f64,
    /// Fraction of elastically scattered light, in `[0, 1]`.
    pub elastic_fraction: f64,
}

impl EmitterModel {
    pub fn new(
        gamma: f64,
        saturation: f64,
        detuning: f64,
        wavelength: f64,
        elastic_fraction: f64,
    ) -> Result<Self> {
        let em = EmitterModel {
            gamma,
            saturation,
            detuning,
            wavelength,
            elastic_fraction,
        };
        em.validate()?;
        Ok(em)
    }

    /// Weakly driven, resonant emitter. The elastic fraction of a two-level
    /// atom at saturation `s` is `1 / (1 + s)`.
    pub fn weak_drive(gamma: f64, saturation: f64) -> Result<Self> {
        Self::new(
            gamma,
            saturation,
            0.0,
            DEFAULT_WAVELENGTH,
            1.0 / (1.0 + saturation.max(0.0)),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::domain(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        if !(self.saturation >= 0.0 && self.saturation.is_finite()) {
            return Err(Error::domain(format!(
                "saturation must be >= 0, got {}",
                self.saturation
            )));
        }
        if !self.detuning.is_finite() {
            return Err(Error::domain("detuning must be finite"));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::domain(format!(
                "wavelength must be > 0, got {}",
                self.wavelength
            )));
        }
        if !(0.0..=1.0).contains(&self.elastic_fraction) {
            return Err(Error::domain(format!(
                "elastic_fraction must lie in [0, 1], got {}",
                self.elastic_fraction
            )));
        }
        Ok(())
    }

    pub fn k_mag(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Steady-state dipole amplitude of the weak-driving conditional state.
    /// Modulus `sqrt(s/2)`; the phase follows the detuning and is zero on
    /// resonance.
    pub fn steady_amplitude(&self) -> Complex64 {
        let modulus = (self.saturation / 2.0).sqrt();
        let phase = -(2.0 * self.detuning).atan2(self.gamma);
        Complex64::from_polar(modulus, phase)
    }
}

impl Default for EmitterModel {
    fn default() -> Self {
        EmitterModel::weak_drive(DEFAULT_GAMMA, DEFAULT_SATURATION)
            .expect("default emitter parameters are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    /// Stationary positional standard deviation along the wave vector (m).
    pub sigma_r: f64,
    /// Motional correlation time (s).
    pub tau_m: f64,
    /// Wave-vector magnitude `2π/λ` (m⁻¹).
    pub k_mag: f64,
}

impl MotionModel {
    pub fn new(sigma_r: f64, tau_m: f64, k_mag: f64) -> Result<Self> {
        let mm = MotionModel {
            sigma_r,
            tau_m,
            k_mag,
        };
        mm.validate()?;
        Ok(mm)
    }

    /// Motion whose phase spread `k·σ_r` equals `phase_spread` radians.
    pub fn with_phase_spread(phase_spread: f64, tau_m: f64, wavelength: f64) -> Result<Self> {
        let k = 2.0 * PI / wavelength;
        Self::new(phase_spread / k, tau_m, k)
    }

    /// Emitters that never move.
    pub fn frozen(wavelength: f64) -> Self {
        MotionModel {
            sigma_r: 0.0,
            tau_m: DEFAULT_TAU_M,
            k_mag: 2.0 * PI / wavelength,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_r >= 0.0 && self.sigma_r.is_finite()) {
            return Err(Error::domain(format!(
                "sigma_r must be >= 0, got {}",
                self.sigma_r
            )));
        }
        if !(self.tau_m > 0.0 && self.tau_m.is_finite()) {
            return Err(Error::domain(format!(
                "tau_m must be > 0, got {}",
                self.tau_m
            )));
        }
        if !(self.k_mag > 0.0 && self.k_mag.is_finite()) {
            return Err(Error::domain(format!(
                "k_mag must be > 0, got {}",
                self.k_mag
            )));
        }
        Ok(())
    }

    pub fn phase_spread(&self) -> f64 {
        self.k_mag * self.sigma_r
    }

    /// True once thermal motion spans a full optical wavelength, i.e. the
    /// relative phases of different emitters are effectively uniform.
    pub fn phase_randomized(&self) -> bool {
        self.phase_spread() >= 2.0 * PI
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub n_emitters: usize,
    /// Relative contributions, normalized so the largest is 1.
    pub weights: Vec<f64>,
}

impl EnsembleSpec {
    pub fn equal(n: usize) -> Result<Self> {
        Self::from_weights(vec![1.0; n])
    }

    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::domain("ensemble needs at least one emitter"));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::domain(format!(
                "emitter weights must be > 0, got {w}"
            )));
        }
        let max = weights.iter().cloned().fold(0.0, f64::max);
        weights.iter_mut().for_each(|w| *w /= max);
        Ok(EnsembleSpec {
            n_emitters: weights.len(),
            weights,
        })
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("delay must be >= 0, got {tau}")))
    }
}

/// Normalized intensity correlation of one weakly driven emitter.
pub fn single_emitter_g2(tau: f64, em: &EmitterModel) -> Result<f64> {
    check_tau(tau)?;
    Ok(g2_unchecked(tau.abs(), em.gamma))
}

/// Normalized field correlation of one emitter: elastic part plus an
/// inelastic part decaying at `Γ/2`, rotating at the detuning.
pub fn single_emitter_g1(tau: f64, em: &EmitterModel) -> Result<Complex64> {
    check_tau(tau)?;
    let modulus = g1_modulus_unchecked(tau, em);
    Ok(Complex64::from_polar(modulus, -em.detuning * tau))
}

/// `χ(τ)`, the squared modulus of the relative-phase coherence of two
/// independently moving emitters.
pub fn motional_coherence(tau: f64, mm: &MotionModel) -> Result<f64> {
    check_tau(tau)?;
    Ok(chi_unchecked(tau, mm))
}

// -(1 - e^{-x})² via expm1 so small delays keep full relative precision.
pub(crate) fn g2_unchecked(tau: f64, gamma: f64) -> f64 {
    let rise = -(-0.5 * gamma * tau).exp_m1();
    rise * rise
}

pub(crate) fn g1_modulus_unchecked(tau: f64, em: &EmitterModel) -> f64 {
    let p = em.elastic_fraction;
    p + (1.0 - p) * (-0.5 * em.gamma * tau).exp()
}

pub(crate) fn chi_unchecked(tau: f64, mm: &MotionModel) -> f64 {
    let spread2 = mm.phase_spread().powi(2);
    (2.0 * spread2 * (-tau / mm.tau_m).exp_m1()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn g2_limits() {
        let em = EmitterModel::default();
        assert_eq!(single_emitter_g2(0.0, &em).unwrap(), 0.0);
        assert_abs_diff_eq!(single_emitter_g2(1.0, &em).unwrap(), 1.0, epsilon = 1e-15);
        let half = 2.0 * 2f64.ln() / em.gamma;
        assert_abs_diff_eq!(single_emitter_g2(half, &em).unwrap(), 0.25, epsilon = 1e-14);
    }

    #[test]
    fn negative_delay_is_rejected() {
        let em = EmitterModel::default();
        let mm = MotionModel::frozen(DEFAULT_WAVELENGTH);
        assert!(matches!(
            single_emitter_g2(-1e-9, &em),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            single_emitter_g1(-1e-9, &em),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            motional_coherence(-1e-9, &mm),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn g1_cases() {
        let mut em = EmitterModel::default();
        em.elastic_fraction = 0.5;
        em.detuning = 0.0;
        assert_eq!(
            single_emitter_g1(0.0, &em).unwrap(),
            Complex64::new(1.0, 0.0)
        );
        let half = 2.0 * 2f64.ln() / em.gamma;
        assert_abs_diff_eq!(
            single_emitter_g1(half, &em).unwrap().re,
            0.75,
            epsilon = 1e-14
        );

        em.elastic_fraction = 1.0;
        for tau in [0.0, 1e-9, 1e-6, 1.0] {
            assert_eq!(
                single_emitter_g1(tau, &em).unwrap(),
                Complex64::new(1.0, 0.0)
            );
        }
    }

    #[test]
    fn detuning_only_rotates_g1() {
        let mut em = EmitterModel::default();
        em.elastic_fraction = 0.3;
        let tau = 7e-9;
        let resonant = single_emitter_g1(tau, &em).unwrap();
        em.detuning = 2.0 * PI * 5e6;
        let detuned = single_emitter_g1(tau, &em).unwrap();
        assert_abs_diff_eq!(resonant.norm(), detuned.norm(), epsilon = 1e-15);
        assert!(detuned.im.abs() > 0.0);
    }

    #[test]
    fn chi_cases() {
        let mm = MotionModel::with_phase_spread(2.0 * PI, 1e-6, DEFAULT_WAVELENGTH).unwrap();
        assert_eq!(motional_coherence(0.0, &mm).unwrap(), 1.0);
        let far = motional_coherence(1.0, &mm).unwrap();
        let expected = (-8.0 * PI * PI).exp();
        assert!((far - expected).abs() / expected < 1e-12);
        assert!((far - 5.1e-35).abs() < 0.05e-35);

        let still = MotionModel::frozen(DEFAULT_WAVELENGTH);
        for tau in [0.0, 1e-6, 1.0] {
            assert_eq!(motional_coherence(tau, &still).unwrap(), 1.0);
        }
        assert!(mm.phase_randomized());
        assert!(!still.phase_randomized());
    }

    #[test]
    fn invalid_parameters() {
        assert!(EmitterModel::new(0.0, 0.1, 0.0, 397e-9, 1.0).is_err());
        assert!(EmitterModel::new(1e8, -0.1, 0.0, 397e-9, 1.0).is_err());
        assert!(EmitterModel::new(1e8, 0.1, 0.0, 0.0, 1.0).is_err());
        assert!(EmitterModel::new(1e8, 0.1, 0.0, 397e-9, 1.5).is_err());
        assert!(MotionModel::new(-1.0, 1e-6, 1.0).is_err());
        assert!(MotionModel::new(1.0, 0.0, 1.0).is_err());
        assert!(EnsembleSpec::from_weights(vec![]).is_err());
        assert!(EnsembleSpec::from_weights(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn ensemble_weights_are_normalized() {
        let e = EnsembleSpec::from_weights(vec![2.0, 1.0, 0.5]).unwrap();
        assert_eq!(e.n_emitters, 3);
        assert_eq!(e.weights, vec![1.0, 0.5, 0.25]);
    }
}
