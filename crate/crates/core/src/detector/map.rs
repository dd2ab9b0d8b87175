//! Delay-Doppler scans of a single frame.
//!
//! Each column of a path's coefficient matrix is a multiple of a steering
//! vector that depends on the Doppler tap only. The statistic at bin
//! `(k, r)` therefore does not depend on `k`. A scan evaluates one value per
//! Doppler tap and repeats it along the delay axis.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use super::{threshold_from_statistics, Calibration, WeightVector, MIN_NOISE_ENERGY};
use crate::channel::{build_projectors, steering_vector};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::scene::{OfdmGrid, Path, PathSet};
use crate::waveform::draw_noise;

#[derive(Debug, Clone, PartialEq)]
pub enum MapMode {
    /// One-path statistic with the candidate bin's own steering vector.
    SinglePath,
    /// Weighted statistic over the whole route set placed at the candidate
    /// bin: path `l` sits at the candidate plus `offsets[l]`.
    Combined {
        offsets: Vec<(i64, i64)>,
        weights: WeightVector,
    },
}

impl MapMode {
    pub fn name(&self) -> &'static str {
        match self {
            MapMode::SinglePath => "single",
            MapMode::Combined { .. } => "combined",
        }
    }

    /// Doppler slots read for candidate tap `r`.
    fn slots(&self, r: usize, m: usize) -> Vec<usize> {
        match self {
            MapMode::SinglePath => vec![r],
            MapMode::Combined { offsets, .. } => offsets
                .iter()
                .map(|&(_, dr)| (r as i64 + dr).rem_euclid(m as i64) as usize)
                .collect(),
        }
    }

    fn weights2(&self) -> Vec<f64> {
        match self {
            MapMode::SinglePath => vec![1.0],
            MapMode::Combined { weights, .. } => weights.squared(),
        }
    }

    /// Paths placed at candidate `(k, r)`.
    pub fn candidate_paths(&self, k: usize, r: usize, grid: &OfdmGrid) -> Result<PathSet> {
        let (n, m) = (grid.n_subcarriers as i64, grid.n_symbols as i64);
        let one = Complex64::new(1.0, 0.0);
        let offsets = match self {
            MapMode::SinglePath => vec![(0, 0)],
            MapMode::Combined { offsets, .. } => offsets.clone(),
        };
        let paths = offsets
            .iter()
            .map(|&(dk, dr)| {
                Path::flat(
                    (k as i64 + dk).rem_euclid(n) as usize,
                    (r as i64 + dr).rem_euclid(m) as usize,
                    one,
                    1.0,
                    grid.n_subcarriers,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        PathSet::new(paths)
    }

    fn validate(&self, grid: &OfdmGrid) -> Result<()> {
        if let MapMode::Combined { offsets, weights } = self {
            if offsets.len() != weights.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} offsets but {} weights",
                    offsets.len(),
                    weights.len()
                )));
            }
            // Every shift of the template has the same Gram matrix.
            build_projectors(&self.candidate_paths(0, 0, grid)?, grid)?;
        }
        Ok(())
    }
}

/// Tap offsets of every path relative to the first.
pub fn route_offsets(paths: &PathSet) -> Vec<(i64, i64)> {
    let Some(first) = paths.paths().first() else {
        return Vec::new();
    };
    paths
        .iter()
        .map(|p| {
            (
                p.delay_tap as i64 - first.delay_tap as i64,
                p.doppler_tap as i64 - first.doppler_tap as i64,
            )
        })
        .collect()
}

/// Statistic for each Doppler tap `0..M`.
pub fn doppler_profile(y: ArrayView2<Complex64>, grid: &OfdmGrid, mode: &MapMode) -> Result<Vec<f64>> {
    let (n, m) = (grid.n_subcarriers, grid.n_symbols);
    if y.dim() != (n, m) {
        return Err(Error::DimensionMismatch(format!("frame is {:?}, grid is {n}x{m}", y.dim())));
    }
    mode.validate(grid)?;
    let energy: Vec<f64> = (0..m)
        .map(|r| {
            let u: Array1<Complex64> = steering_vector(r, grid);
            y.axis_iter(Axis(1))
                .map(|col| col.iter().zip(u.iter()).map(|(a, b)| b.conj() * a).sum::<Complex64>().norm_sqr())
                .sum()
        })
        .collect();
    let total: f64 = y.iter().map(|v| v.norm_sqr()).sum();
    let w2 = mode.weights2();
    (0..m)
        .map(|r| {
            let slots = mode.slots(r, m);
            let captured: f64 = slots.iter().map(|&s| energy[s]).sum();
            let noise = total - captured;
            if !(noise >= MIN_NOISE_ENERGY) {
                return Err(Error::DegenerateDenominator(noise));
            }
            let num: f64 = slots.iter().zip(&w2).map(|(&s, w)| w * energy[s]).sum();
            Ok(1.0 + num / noise)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayDopplerMap {
    pub delays: Vec<usize>,
    pub dopplers: Vec<usize>,
    /// `values[[i, j]]` belongs to `(delays[i], dopplers[j])`.
    pub values: Array2<f64>,
}

impl DelayDopplerMap {
    /// Largest value and a bin attaining it (first in row-major order).
    pub fn max(&self) -> (f64, (usize, usize)) {
        let mut best = (f64::NEG_INFINITY, (0, 0));
        for ((i, j), v) in self.values.indexed_iter() {
            if *v > best.0 {
                best = (*v, (self.delays[i], self.dopplers[j]));
            }
        }
        best
    }

    /// Bins in the row of `delay` whose value exceeds `threshold`, as Doppler taps.
    pub fn exceedances_at_delay(&self, delay: usize, threshold: f64) -> Vec<usize> {
        let Some(i) = self.delays.iter().position(|k| *k == delay) else {
            return Vec::new();
        };
        self.dopplers
            .iter()
            .zip(self.values.row(i))
            .filter(|(_, v)| **v > threshold)
            .map(|(r, _)| *r)
            .collect()
    }

    pub fn value(&self, delay: usize, doppler: usize) -> Option<f64> {
        let i = self.delays.iter().position(|k| *k == delay)?;
        let j = self.dopplers.iter().position(|r| *r == doppler)?;
        Some(self.values[[i, j]])
    }
}

/// Scans the bins `delays x dopplers`.
pub fn delay_doppler_map(
    y: ArrayView2<Complex64>,
    grid: &OfdmGrid,
    mode: &MapMode,
    delays: &[usize],
    dopplers: &[usize],
) -> Result<DelayDopplerMap> {
    if let Some(k) = delays.iter().find(|k| **k >= grid.n_subcarriers) {
        return Err(Error::InvalidScene(format!("delay tap {k} outside the grid")));
    }
    if let Some(r) = dopplers.iter().find(|r| **r >= grid.n_symbols) {
        return Err(Error::InvalidScene(format!("Doppler tap {r} outside the grid")));
    }
    let profile = doppler_profile(y, grid, mode)?;
    let values = Array2::from_shape_fn((delays.len(), dopplers.len()), |(_, j)| profile[dopplers[j]]);
    Ok(DelayDopplerMap {
        delays: delays.to_vec(),
        dopplers: dopplers.to_vec(),
        values,
    })
}

/// Per-bin threshold pooled over the Doppler profiles of `n_frames` noise
/// frames drawn on the calibration stream.
pub fn calibrate_map_threshold(grid: &OfdmGrid, mode: &MapMode, p_fa: f64, n_frames: usize, seed: u64) -> Result<Calibration> {
    let (n, m) = (grid.n_subcarriers, grid.n_symbols);
    let profiles: Vec<Vec<f64>> = (0..n_frames as u64)
        .into_par_iter()
        .map(|t| {
            let z = draw_noise(n, m, 1.0, &mut rng::stream(seed, Purpose::Calibration, t));
            doppler_profile(z.view(), grid, mode)
        })
        .collect::<Result<_>>()?;
    threshold_from_statistics(profiles.into_iter().flatten().collect(), p_fa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_projectors, path_channels};
    use crate::detector::glrt_statistic;
    use crate::reference::random_path_set;
    use crate::waveform::{echo_signal, PowerAllocation, SymbolFrame};
    use crate::stats::ks_two_sample;

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn profile_matches_direct_statistic() {
        let g = OfdmGrid::table_one(16, 16).unwrap();
        let y = draw_noise(16, 16, 1.0, &mut rng::stream(1, Purpose::Oracle, 0));
        let ps = random_path_set(&g, 4, 2);
        let offsets = route_offsets(&ps);
        let w = WeightVector::normalized(&[4.0, 1.0, 2.0, 0.5]).unwrap();
        let mode = MapMode::Combined { offsets, weights: w.clone() };
        let prof = doppler_profile(y.view(), &g, &mode).unwrap();
        for r in 0..16 {
            let cand = mode.candidate_paths(0, r, &g).unwrap();
            let s = glrt_statistic(y.view(), &build_projectors(&cand, &g).unwrap(), &w).unwrap();
            assert!((s - prof[r]).abs() < 1e-10 * s);
        }
        let single = doppler_profile(y.view(), &g, &MapMode::SinglePath).unwrap();
        for r in 0..16 {
            let cand = MapMode::SinglePath.candidate_paths(3, r, &g).unwrap();
            let s = glrt_statistic(y.view(), &build_projectors(&cand, &g).unwrap(), &WeightVector::equal(1)).unwrap();
            assert!((s - single[r]).abs() < 1e-10 * s);
        }
    }

    #[test]
    fn noiseless_single_path_peaks_at_true_bin() {
        let g = OfdmGrid::table_one(16, 16).unwrap();
        let ps = PathSet::new(vec![Path::flat(5, 9, Complex64::new(1.3, 0.4), 1.0, 16).unwrap()]).unwrap();
        let ch = path_channels(&ps, &g);
        let alloc = PowerAllocation::uniform(&g);
        let lam = vec![vec![Complex64::new(1.0, 0.0); 16]];
        let mut y = echo_signal(&ch, &alloc, &SymbolFrame::ones(&g), &lam).unwrap();
        // A whisper of noise keeps the denominator away from zero.
        y += &draw_noise(16, 16, 1e-12, &mut rng::stream(1, Purpose::Oracle, 0));
        let map = delay_doppler_map(y.view(), &g, &MapMode::SinglePath, &all(16), &all(16)).unwrap();
        let (best, _) = map.max();
        assert_eq!(map.value(5, 9), Some(best));
        for r in 0..16 {
            if r != 9 {
                assert!(map.value(5, r).unwrap() < best);
            }
        }
    }

    #[test]
    fn noise_map_is_stationary() {
        let g = OfdmGrid::table_one(16, 16).unwrap();
        let mut low = Vec::new();
        let mut high = Vec::new();
        for t in 0..2000 {
            let z = draw_noise(16, 16, 1.0, &mut rng::stream(3, Purpose::Oracle, t));
            let p = doppler_profile(z.view(), &g, &MapMode::SinglePath).unwrap();
            // One value per frame from each half keeps samples independent.
            low.push(p[(t % 8) as usize]);
            high.push(p[8 + (t % 8) as usize]);
        }
        let p = ks_two_sample(&mut low, &mut high).p_value;
        assert!(p > 0.01, "KS p = {p}");
    }

    #[test]
    fn offsets_relative_to_first() {
        let g = OfdmGrid::desk();
        let ps = crate::scene::taps_from_geometry(
            &crate::scene::Geometry::table_one(),
            &g,
            &crate::scene::table_one_path_losses(),
        )
        .unwrap();
        assert_eq!(route_offsets(&ps), vec![(0, 0), (0, -1), (0, 4), (0, -2), (0, 3), (0, 8)]);
    }

    #[test]
    fn colliding_template_rejected() {
        let g = OfdmGrid::desk();
        let mode = MapMode::Combined {
            offsets: vec![(0, 0), (0, 16)],
            weights: WeightVector::equal(2),
        };
        let y = draw_noise(16, 16, 1.0, &mut rng::stream(1, Purpose::Oracle, 0));
        assert!(doppler_profile(y.view(), &g, &mode).is_err());
    }
}
