//! Reference light sources with known click statistics, for validating
//! estimators. Each photon is routed to A or B by a balanced splitter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use crate::error::{Error, Result};
use crate::timetags::{poisson_tags, seconds_to_ps, Channel, TimeTag, TimeTagStream};

/// Independent homogeneous Poisson tags on both channels.
pub fn poisson_pair(rate: f64, duration: f64, seed: u64) -> Result<TimeTagStream> {
    if !(rate >= 0.0) || !(duration > 0.0) {
        return Err(Error::domain("rate must be >= 0 and duration > 0"));
    }
    let d = seconds_to_ps(duration);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tags = poisson_tags(Channel::A, rate, d, &mut rng);
    tags.extend(poisson_tags(Channel::B, rate, d, &mut rng));
    let mut s = TimeTagStream::from_unsorted(tags, Default::default());
    s.set_duration_ps(d);
    Ok(s)
}

fn per_bin(
    window: f64,
    n_bins: u64,
    seed: u64,
    mut photons: impl FnMut(&mut ChaCha8Rng) -> u64,
) -> Result<TimeTagStream> {
    let w = seconds_to_ps(window);
    if w == 0 || n_bins == 0 {
        return Err(Error::domain("window and bin count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tags = Vec::new();
    for bin in 0..n_bins {
        let start = bin * w;
        let mut here: Vec<TimeTag> = (0..photons(&mut rng))
            .map(|_| {
                let ch = if rng.gen::<bool>() {
                    Channel::A
                } else {
                    Channel::B
                };
                TimeTag::new(ch, start + rng.gen_range(0..w))
            })
            .collect();
        here.sort_unstable_by_key(|t| t.timestamp_ps);
        tags.extend(here);
    }
    let mut s = TimeTagStream::new(tags, Default::default())?;
    s.set_duration_ps(w * n_bins);
    Ok(s)
}

/// Single-mode thermal light: an independent Bose–Einstein photon number
/// with mean `nbar` in every bin of width `window`.
pub fn thermal_pair(nbar: f64, window: f64, n_bins: u64, seed: u64) -> Result<TimeTagStream> {
    if !(nbar > 0.0) {
        return Err(Error::domain("nbar must be > 0"));
    }
    let geo = Geometric::new(1.0 / (1.0 + nbar)).map_err(|e| Error::domain(e.to_string()))?;
    per_bin(window, n_bins, seed, |rng| geo.sample(rng))
}

/// Exactly one photon in every bin.
pub fn one_photon_per_bin(window: f64, n_bins: u64, seed: u64) -> Result<TimeTagStream> {
    per_bin(window, n_bins, seed, |_| 1)
}
