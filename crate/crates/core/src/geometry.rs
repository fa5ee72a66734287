//! Pseudo ion-crystal positions and their coupling to the detection mode.
//!
//! The optical axis is `z`. The detection volume is a Gaussian with separate
//! full widths at half maximum across (`x`, `y`) and along the axis.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::analytic::ModeMatrix;
use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Weights below this are floored so every emitter keeps a nonzero coupling.
pub const MIN_WEIGHT: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionVolume {
    pub fwhm_transverse: f64,
    pub fwhm_axial: f64,
    pub center: Vec3,
}

impl Default for DetectionVolume {
    fn default() -> Self {
        DetectionVolume {
            fwhm_transverse: 180e-6,
            fwhm_axial: 3e-6,
            center: [0.0; 3],
        }
    }
}

impl DetectionVolume {
    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm_transverse > 0.0 && self.fwhm_axial > 0.0) {
            return Err(Error::domain("detection volume FWHMs must be > 0"));
        }
        Ok(())
    }
}

/// Relative coupling of an emitter at `pos` into the detection mode.
pub fn gaussian_weight(pos: &Vec3, vol: &DetectionVolume) -> f64 {
    let dx = pos[0] - vol.center[0];
    let dy = pos[1] - vol.center[1];
    let dz = pos[2] - vol.center[2];
    let rho2 = dx * dx + dy * dy;
    let ln2x4 = 4.0 * std::f64::consts::LN_2;
    (-ln2x4 * (rho2 / vol.fwhm_transverse.powi(2) + dz * dz / vol.fwhm_axial.powi(2))).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub enum CrystalKind {
    /// Ions equally spaced along the optical axis.
    LinearChain,
    /// Ions equally spaced along the trap axis `x`, across the optical axis.
    TransverseChain,
    /// Concentric spheroidal shells filling an ellipsoid.
    ShellEllipsoid,
    FromFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrystalSpec {
    pub kind: CrystalKind,
    pub n_ions: usize,
    /// Ion spacing of a chain (m).
    pub spacing: f64,
    /// Semi-axes of the ellipsoid (m).
    pub semi_axes: Vec3,
    pub seed: u64,
}

impl CrystalSpec {
    pub fn linear_chain(n_ions: usize, spacing: f64) -> Self {
        CrystalSpec {
            kind: CrystalKind::LinearChain,
            n_ions,
            spacing,
            semi_axes: [0.0; 3],
            seed: 0,
        }
    }

    pub fn shell_ellipsoid(n_ions: usize, semi_axes: Vec3, seed: u64) -> Self {
        CrystalSpec {
            kind: CrystalKind::ShellEllipsoid,
            n_ions,
            spacing: 0.0,
            semi_axes,
            seed,
        }
    }

    pub fn transverse_chain(n_ions: usize, spacing: f64) -> Self {
        CrystalSpec {
            kind: CrystalKind::TransverseChain,
            ..Self::linear_chain(n_ions, spacing)
        }
    }

    /// Oblate shell crystal whose volume gives each ion roughly a cube of
    /// side `spacing`. It is flattened along the optical axis, the short
    /// semi-axis being `aspect` ≤ 1 times the long ones.
    pub fn oblate_with_spacing(n_ions: usize, spacing: f64, aspect: f64, seed: u64) -> Self {
        let radius = spacing * (3.0 * n_ions as f64 / (4.0 * PI)).cbrt();
        let long = radius * aspect.powf(-1.0 / 3.0);
        let short = long * aspect;
        Self::shell_ellipsoid(n_ions, [long, long, short], seed)
    }

    pub fn from_file(path: impl Into<PathBuf>) -> Self {
        CrystalSpec {
            kind: CrystalKind::FromFile(path.into()),
            n_ions: 0,
            spacing: 0.0,
            semi_axes: [0.0; 3],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            CrystalKind::LinearChain | CrystalKind::TransverseChain => {
                if self.n_ions == 0 {
                    return Err(Error::domain("crystal needs at least one ion"));
                }
                if !(self.spacing > 0.0) {
                    return Err(Error::domain("chain spacing must be > 0"));
                }
            }
            CrystalKind::ShellEllipsoid => {
                if self.n_ions == 0 {
                    return Err(Error::domain("crystal needs at least one ion"));
                }
                if self.semi_axes.iter().any(|a| !(*a > 0.0)) {
                    return Err(Error::domain("ellipsoid semi-axes must be > 0"));
                }
            }
            CrystalKind::FromFile(_) => {}
        }
        Ok(())
    }
}

pub fn generate_positions(spec: &CrystalSpec) -> Result<Vec<Vec3>> {
    spec.validate()?;
    match &spec.kind {
        CrystalKind::LinearChain | CrystalKind::TransverseChain => {
            let axis = if spec.kind == CrystalKind::LinearChain {
                2
            } else {
                0
            };
            let mid = (spec.n_ions as f64 - 1.0) / 2.0;
            Ok((0..spec.n_ions)
                .map(|k| {
                    let mut p = [0.0; 3];
                    p[axis] = (k as f64 - mid) * spec.spacing;
                    p
                })
                .collect())
        }
        CrystalKind::ShellEllipsoid => Ok(shell_ellipsoid(spec.n_ions, spec.semi_axes, spec.seed)),
        CrystalKind::FromFile(path) => read_positions(path),
    }
}

/// Number of ions on each of `shells` concentric shells, proportional to
/// shell area (`j²`), summing to `n`.
fn shell_occupancy(n: usize, shells: usize) -> Vec<usize> {
    let total: f64 = (1..=shells).map(|j| (j * j) as f64).sum();
    let exact: Vec<f64> = (1..=shells)
        .map(|j| n as f64 * (j * j) as f64 / total)
        .collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shells).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(b.cmp(&a))
    });
    let missing = n - counts.iter().sum::<usize>();
    for &j in order.iter().take(missing) {
        counts[j] += 1;
    }
    counts
}

/// Random rotation matrix from a uniformly distributed unit quaternion.
fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let mut q = [0.0f64; 4];
    loop {
        for x in q.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            q.iter_mut().for_each(|x| *x /= norm);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
        ],
        [
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
        ],
        [
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

fn shell_ellipsoid(n: usize, semi_axes: Vec3, seed: u64) -> Vec<Vec3> {
    if n == 1 {
        return vec![[0.0; 3]];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Shells one lattice spacing apart hold ~4πj² ions each.
    let shells = ((3.0 * n as f64 / (4.0 * PI)).cbrt().round() as usize).max(1);
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut out = Vec::with_capacity(n);
    for (j, &count) in shell_occupancy(n, shells).iter().enumerate() {
        let radius = (j + 1) as f64 / shells as f64;
        let rot = random_rotation(&mut rng);
        // Fibonacci lattice: near-uniform points on the unit sphere.
        for k in 0..count {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64;
            let p = [r * phi.cos(), r * phi.sin(), z];
            let mut q = [0.0; 3];
            for a in 0..3 {
                q[a] = (0..3).map(|b| rot[a][b] * p[b]).sum::<f64>() * radius * semi_axes[a];
            }
            out.push(q);
        }
    }
    out
}

/// Parses a position file: one ion per line, three coordinates in meters,
/// whitespace separated; `#` starts a comment.
pub fn parse_positions(text: &str) -> Result<Vec<Vec3>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected 3 coordinates, found {}", fields.len()),
            });
        }
        let mut p = [0.0; 3];
        for (slot, f) in p.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line: idx + 1,
                    message: format!("invalid coordinate {f:?}"),
                })?;
        }
        out.push(p);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            line: text.lines().count().max(1),
            message: "no positions found".into(),
        });
    }
    Ok(out)
}

pub fn read_positions(path: &Path) -> Result<Vec<Vec3>> {
    parse_positions(&fs::read_to_string(path)?)
}

pub fn format_positions(positions: &[Vec3]) -> String {
    let mut s = String::from("# x_m y_m z_m\n");
    for p in positions {
        s.push_str(&format!("{:e} {:e} {:e}\n", p[0], p[1], p[2]));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeScheme {
    SingleMode,
    /// Two modes with equal power and an independent uniformly random
    /// relative phase per emitter.
    TwoPolarizationRandom,
    /// Every emitter radiates into its own mode.
    PerEmitterPrivate,
}

impl ModeScheme {
    pub fn name(self) -> &'static str {
        match self {
            ModeScheme::SingleMode => "single_mode",
            ModeScheme::TwoPolarizationRandom => "two_polarization_random",
            ModeScheme::PerEmitterPrivate => "per_emitter_private",
        }
    }
}

impl std::str::FromStr for ModeScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_mode" => Ok(ModeScheme::SingleMode),
            "two_polarization_random" => Ok(ModeScheme::TwoPolarizationRandom),
            "per_emitter_private" => Ok(ModeScheme::PerEmitterPrivate),
            other => Err(Error::config(format!("unknown mode scheme {other:?}"))),
        }
    }
}

pub fn detection_weights(positions: &[Vec3], vol: &DetectionVolume) -> Vec<f64> {
    positions
        .iter()
        .map(|p| gaussian_weight(p, vol).max(MIN_WEIGHT))
        .collect()
}

pub fn build_mode_matrix(
    positions: &[Vec3],
    vol: &DetectionVolume,
    scheme: ModeScheme,
    eta: f64,
    seed: u64,
) -> Result<ModeMatrix> {
    if positions.is_empty() {
        return Err(Error::domain("no emitter positions"));
    }
    vol.validate()?;
    mode_matrix_from_weights(detection_weights(positions, vol), scheme, eta, seed)
}

/// Mode matrix with `Σ_κ |u_κi|² = η w_i`; `seed` only matters for the
/// random polarization scheme.
pub fn mode_matrix_from_weights(
    weights: Vec<f64>,
    scheme: ModeScheme,
    eta: f64,
    seed: u64,
) -> Result<ModeMatrix> {
    if weights.is_empty() {
        return Err(Error::domain("no emitters"));
    }
    match scheme {
        ModeScheme::SingleMode => ModeMatrix::single_mode(&weights, eta),
        ModeScheme::TwoPolarizationRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let amps = weights
                .iter()
                .flat_map(|w| {
                    let a = (eta * w / 2.0).sqrt();
                    let theta = rng.gen_range(0.0..2.0 * PI);
                    [Complex64::new(a, 0.0), Complex64::from_polar(a, theta)]
                })
                .collect();
            ModeMatrix::new(2, amps, eta, weights)
        }
        ModeScheme::PerEmitterPrivate => {
            let n = weights.len();
            let mut amps = vec![Complex64::new(0.0, 0.0); n * n];
            for (i, w) in weights.iter().enumerate() {
                amps[i * n + i] = Complex64::new((eta * w).sqrt(), 0.0);
            }
            ModeMatrix::new(n, amps, eta, weights)
        }
    }
}
