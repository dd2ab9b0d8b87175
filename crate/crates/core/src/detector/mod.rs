//! Weighted GLRT statistic, Monte Carlo threshold calibration and detection
//! probability estimates.

pub mod map;

use ndarray::ArrayView2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::{PathChannel, ProjectorSet};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::scene::{OfdmGrid, PathSet};
use crate::waveform::{compensate_symbols, synthesize_echo, Hypothesis, PowerAllocation, RcsModel, SymbolFrame};

pub use crate::reference::glrt_statistic_mle_oracle;

/// Denominators below this are treated as zero.
pub const MIN_NOISE_ENERGY: f64 = 1e-300;

/// Lower end of the statistic's support; the threshold for `p_fa = 1`.
pub const STATISTIC_FLOOR: f64 = 1.0;

/// Unit-norm non-negative per-path detector weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidWeights("weights must be finite and non-negative".into()));
        }
        let norm2: f64 = w.iter().map(|v| v * v).sum();
        if (norm2 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidWeights(format!("squared norm is {norm2}, not 1")));
        }
        Ok(Self(w))
    }

    /// Scales `d` onto the unit sphere.
    pub fn normalized(d: &[f64]) -> Result<Self> {
        if d.is_empty() || d.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidWeights("weights must be finite and non-negative".into()));
        }
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidWeights("all weights are zero".into()));
        }
        Ok(Self(d.iter().map(|v| v / norm).collect()))
    }

    /// `w_l = 1 / sqrt(L)`.
    pub fn equal(l: usize) -> Self {
        Self(vec![1.0 / (l as f64).sqrt(); l])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn squared(&self) -> Vec<f64> {
        self.0.iter().map(|v| v * v).collect()
    }
}

/// `1 + sum_l w_l^2 ||P_{s,l} Y||^2 / ||P_n Y||^2`.
pub fn glrt_statistic(y: ArrayView2<Complex64>, projectors: &ProjectorSet, w: &WeightVector) -> Result<f64> {
    if w.len() != projectors.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} projectors",
            w.len(),
            projectors.len()
        )));
    }
    let e = projectors.energies(y)?;
    if !(e.noise >= MIN_NOISE_ENERGY) {
        return Err(Error::DegenerateDenominator(e.noise));
    }
    let num: f64 = w.as_slice().iter().zip(&e.signal).map(|(wl, s)| wl * wl * s).sum();
    Ok(1.0 + num / e.noise)
}

/// Half-width of the 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson_halfwidth(k: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let z = 1.959_963_984_540_054_f64;
    let (n, p) = (n as f64, k as f64 / n as f64);
    let z2 = z * z;
    z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt()
}

/// 1-based rank `ceil((1 - p_fa) n)` of the upper empirical quantile, at
/// least 1.
pub fn quantile_rank(p_fa: f64, n: usize) -> usize {
    // The guard keeps products like 0.9 * 10000 from rounding up a rank.
    let x = (1.0 - p_fa) * n as f64;
    ((x - 1e-9 * x.max(1.0)).ceil() as usize).clamp(1, n)
}

/// Statistics of `n_trials` unit-variance noise frames on the calibration
/// stream. The statistic is scale invariant, so the noise power is irrelevant.
pub fn h0_statistics(
    projectors: &ProjectorSet,
    w: &WeightVector,
    grid: &OfdmGrid,
    n_trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let (n, m) = (grid.n_subcarriers, grid.n_symbols);
    (0..n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, Purpose::Calibration, t);
            let z = crate::waveform::draw_noise(n, m, 1.0, &mut rng);
            glrt_statistic(z.view(), projectors, w)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub p_fa_target: f64,
    /// Fraction of calibration statistics strictly above the threshold.
    pub p_fa_empirical: f64,
    pub n_trials: usize,
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidProbability(p))
    }
}

/// Threshold from already computed H0 statistics.
pub fn threshold_from_statistics(mut stats: Vec<f64>, p_fa: f64) -> Result<Calibration> {
    check_probability(p_fa)?;
    let n = stats.len();
    if (n as f64) * p_fa < 50.0 {
        return Err(Error::InsufficientTrials { n_trials: n, p_fa });
    }
    stats.sort_by(f64::total_cmp);
    let threshold = if p_fa == 1.0 {
        STATISTIC_FLOOR
    } else {
        stats[quantile_rank(p_fa, n) - 1]
    };
    let above = stats.iter().filter(|s| **s > threshold).count();
    Ok(Calibration {
        threshold,
        p_fa_target: p_fa,
        p_fa_empirical: above as f64 / n as f64,
        n_trials: n,
    })
}

/// Monte Carlo threshold at false-alarm rate `p_fa`.
pub fn calibrate_threshold(
    projectors: &ProjectorSet,
    w: &WeightVector,
    grid: &OfdmGrid,
    p_fa: f64,
    n_trials: usize,
    seed: u64,
) -> Result<Calibration> {
    check_probability(p_fa)?;
    if (n_trials as f64) * p_fa < 50.0 {
        return Err(Error::InsufficientTrials { n_trials, p_fa });
    }
    threshold_from_statistics(h0_statistics(projectors, w, grid, n_trials, seed)?, p_fa)
}

/// Everything needed to draw H1 frames and run one detector on them. The
/// echo is synthesized from `paths`; the detector sees only `projectors`.
#[derive(Debug, Clone, Copy)]
pub struct DetectionSetup<'a> {
    pub grid: &'a OfdmGrid,
    pub paths: &'a PathSet,
    pub channels: &'a [PathChannel],
    pub symbols: &'a SymbolFrame,
    pub alloc: &'a PowerAllocation,
    pub rcs_model: RcsModel,
    pub projectors: &'a ProjectorSet,
    pub w: &'a WeightVector,
}

impl DetectionSetup<'_> {
    /// Statistic of H1 trial `trial` on stream `seed`.
    pub fn h1_statistic(&self, seed: u64, trial: u64) -> Result<f64> {
        let mut rng = rng::stream(seed, Purpose::Detection, trial);
        let frame = synthesize_echo(
            self.grid,
            self.paths,
            self.channels,
            self.alloc,
            self.symbols,
            Hypothesis::H1,
            self.rcs_model,
            &mut rng,
        )?;
        let y = compensate_symbols(frame.y.view(), self.symbols);
        glrt_statistic(y.view(), self.projectors, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdEstimate {
    pub p_d: f64,
    pub halfwidth: f64,
    pub detections: usize,
    pub n_trials: usize,
}

/// Fraction of `n_trials` H1 frames whose statistic exceeds `threshold`.
/// Trial `t` always uses stream `(seed, t)`, so estimates for different
/// setups on the same seed are paired.
pub fn estimate_pd(setup: &DetectionSetup<'_>, threshold: f64, n_trials: usize, seed: u64) -> Result<PdEstimate> {
    Ok(pd_from_statistics(&h1_statistics(setup, n_trials, seed)?, threshold))
}

/// H1 statistics of trials `0..n_trials`, in trial order.
pub fn h1_statistics(setup: &DetectionSetup<'_>, n_trials: usize, seed: u64) -> Result<Vec<f64>> {
    (0..n_trials as u64)
        .into_par_iter()
        .map(|t| setup.h1_statistic(seed, t))
        .collect()
}

pub fn pd_from_statistics(stats: &[f64], threshold: f64) -> PdEstimate {
    let n_trials = stats.len();
    let detections = stats.iter().filter(|s| **s > threshold).count();
    PdEstimate {
        p_d: detections as f64 / n_trials.max(1) as f64,
        halfwidth: wilson_halfwidth(detections, n_trials),
        detections,
        n_trials,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub threshold: f64,
    pub p_fa_target: f64,
    pub p_fa_empirical: f64,
    pub p_d_empirical: f64,
    pub n_trials: usize,
    pub confidence_halfwidth: f64,
}

impl DetectionReport {
    pub fn new(cal: &Calibration, pd: &PdEstimate) -> Self {
        Self {
            threshold: cal.threshold,
            p_fa_target: cal.p_fa_target,
            p_fa_empirical: cal.p_fa_empirical,
            p_d_empirical: pd.p_d,
            n_trials: pd.n_trials,
            confidence_halfwidth: pd.halfwidth,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_projectors, path_channels};
    use crate::reference::random_path_set;
    use crate::scene::Path;
    use crate::waveform::{draw_noise, draw_symbols};
    use ndarray::Array2;
    use proptest::prelude::*;

    fn noise(n: usize, m: usize, seed: u64) -> Array2<Complex64> {
        draw_noise(n, m, 1.0, &mut rng::stream(seed, Purpose::Oracle, 0))
    }

    #[test]
    fn weights_validation() {
        assert_eq!(WeightVector::normalized(&[3.0, 4.0]).unwrap().as_slice(), &[0.6, 0.8]);
        assert!(WeightVector::new(vec![0.6, 0.8]).is_ok());
        assert!(WeightVector::new(vec![0.6, 0.7]).is_err());
        assert!(WeightVector::new(vec![-0.6, 0.8]).is_err());
        assert!(WeightVector::normalized(&[0.0, 0.0]).is_err());
        let e = WeightVector::equal(6);
        assert!((e.squared().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn statistic_is_one_on_noise_subspace() {
        let g = OfdmGrid::table_one(8, 8).unwrap();
        let ps = random_path_set(&g, 3, 1);
        let pr = build_projectors(&ps, &g).unwrap();
        let y = pr.apply_noise(noise(8, 8, 2).view()).unwrap();
        let s = glrt_statistic(y.view(), &pr, &WeightVector::equal(3)).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_denominator() {
        let g = OfdmGrid::table_one(8, 8).unwrap();
        let ps = random_path_set(&g, 1, 3);
        let pr = build_projectors(&ps, &g).unwrap();
        let y = Array2::<Complex64>::zeros((8, 8));
        assert!(matches!(
            glrt_statistic(y.view(), &pr, &WeightVector::equal(1)),
            Err(Error::DegenerateDenominator(_))
        ));
    }

    #[test]
    fn matches_dense_single_path_form() {
        let g = OfdmGrid::table_one(8, 8).unwrap();
        for seed in 0..10 {
            let ps = random_path_set(&g, 1, seed);
            let pr = build_projectors(&ps, &g).unwrap();
            let y = noise(8, 8, seed);
            let p = crate::reference::pinv_signal_projector(&ps[0], &g);
            let res = &y - &p.dot(&y);
            let dense = y.iter().map(|v| v.norm_sqr()).sum::<f64>() / res.iter().map(|v| v.norm_sqr()).sum::<f64>();
            let fast = glrt_statistic(y.view(), &pr, &WeightVector::equal(1)).unwrap();
            assert!((fast - dense).abs() <= 1e-10 * dense);
        }
    }

    #[test]
    fn oracle_examples() {
        let g = OfdmGrid::table_one(8, 8).unwrap();
        let alloc = PowerAllocation::uniform(&g);
        for seed in 0..20 {
            let ps = random_path_set(&g, 3, seed);
            let pr = build_projectors(&ps, &g).unwrap();
            let x = draw_symbols(&g, &mut rng::stream(seed, Purpose::Symbols, 0));
            let y = noise(8, 8, 100 + seed);
            let oracle = glrt_statistic_mle_oracle(y.view(), &ps, &g, &alloc, &x);
            let weighted = glrt_statistic(y.view(), &pr, &WeightVector::equal(3)).unwrap();
            assert!(((oracle - 1.0) - 3.0 * (weighted - 1.0)).abs() <= 1e-9 * (oracle - 1.0));
            let pn = pr.apply_noise(y.view()).unwrap();
            assert!((glrt_statistic_mle_oracle(pn.view(), &ps, &g, &alloc, &x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_formula() {
        assert_eq!(quantile_rank(1.0, 100), 1);
        assert_eq!(quantile_rank(0.1, 10_000), 9000);
        assert_eq!(quantile_rank(0.01, 10_000), 9900);
        assert_eq!(quantile_rank(1e-3, 100_000), 99_900);
        assert_eq!(quantile_rank(0.5, 3), 2);
    }

    #[test]
    fn p_fa_one_sits_at_the_floor() {
        let g = OfdmGrid::table_one(8, 8).unwrap();
        let pr = build_projectors(&random_path_set(&g, 2, 4), &g).unwrap();
        let w = WeightVector::equal(2);
        let stats = h0_statistics(&pr, &w, &g, 200, 9).unwrap();
        let min = stats.iter().cloned().fold(f64::INFINITY, f64::min);
        let cal = calibrate_threshold(&pr, &w, &g, 1.0, 200, 9).unwrap();
        assert_eq!(cal.threshold, STATISTIC_FLOOR);
        assert!(min > cal.threshold);
        assert_eq!(cal.p_fa_empirical, 1.0);
    }

    #[test]
    fn insufficient_trials() {
        let g = OfdmGrid::table_one(8, 8).unwrap();
        let pr = build_projectors(&random_path_set(&g, 1, 4), &g).unwrap();
        let r = calibrate_threshold(&pr, &WeightVector::equal(1), &g, 1e-3, 49_999, 1);
        assert!(matches!(r, Err(Error::InsufficientTrials { .. })));
        assert!(matches!(
            calibrate_threshold(&pr, &WeightVector::equal(1), &g, 0.0, 100, 1),
            Err(Error::InvalidProbability(_))
        ));
    }

    #[test]
    fn threshold_ignores_noise_power() {
        let mut g = OfdmGrid::table_one(8, 8).unwrap();
        let pr = build_projectors(&random_path_set(&g, 2, 4), &g).unwrap();
        let w = WeightVector::normalized(&[1.0, 2.0]).unwrap();
        let a = calibrate_threshold(&pr, &w, &g, 0.1, 2000, 5).unwrap();
        g.radar_noise_power *= 100.0;
        let b = calibrate_threshold(&pr, &w, &g, 0.1, 2000, 5).unwrap();
        assert_eq!(a.threshold.to_bits(), b.threshold.to_bits());
    }

    #[test]
    fn wilson() {
        assert!((wilson_halfwidth(50, 100) - 0.0962).abs() < 1e-3);
        assert!(wilson_halfwidth(0, 100) > 0.0);
        assert!(wilson_halfwidth(100, 100) > 0.0);
    }

    fn setup_parts(var: f64) -> (OfdmGrid, PathSet, Vec<PathChannel>, SymbolFrame, PowerAllocation) {
        let g = OfdmGrid::table_one(8, 8).unwrap();
        let ps = PathSet::new(vec![
            Path::flat(0, 1, Complex64::new(1.0, 0.0), var, 8).unwrap(),
            Path::flat(0, 4, Complex64::new(0.5, 0.0), var, 8).unwrap(),
        ])
        .unwrap();
        let ch = path_channels(&ps, &g);
        let x = draw_symbols(&g, &mut rng::stream(1, Purpose::Symbols, 0));
        let alloc = PowerAllocation::uniform(&g);
        (g, ps, ch, x, alloc)
    }

    #[test]
    fn zero_signal_gives_false_alarm_rate() {
        let (g, ps, ch, x, alloc) = setup_parts(0.0);
        let pr = build_projectors(&ps, &g).unwrap();
        let w = WeightVector::equal(2);
        let cal = calibrate_threshold(&pr, &w, &g, 0.1, 4000, 1).unwrap();
        let setup = DetectionSetup {
            grid: &g,
            paths: &ps,
            channels: &ch,
            symbols: &x,
            alloc: &alloc,
            rcs_model: RcsModel::SwerlingI,
            projectors: &pr,
            w: &w,
        };
        let pd = estimate_pd(&setup, cal.threshold, 4000, 2).unwrap();
        assert!((pd.p_d - 0.1).abs() < 3.0 * pd.halfwidth, "{pd:?}");
    }

    #[test]
    fn huge_variance_detects() {
        let (g, ps, ch, x, alloc) = setup_parts(1e-3);
        let pr = build_projectors(&ps, &g).unwrap();
        let w = WeightVector::equal(2);
        let cal = calibrate_threshold(&pr, &w, &g, 0.01, 5000, 1).unwrap();
        let setup = DetectionSetup {
            grid: &g,
            paths: &ps,
            channels: &ch,
            symbols: &x,
            alloc: &alloc,
            rcs_model: RcsModel::SwerlingI,
            projectors: &pr,
            w: &w,
        };
        let pd = estimate_pd(&setup, cal.threshold, 1000, 2).unwrap();
        assert!(pd.p_d > 0.99, "{pd:?}");
    }

    #[test]
    fn doubling_variance_never_hurts() {
        let (g, ps, ch, x, alloc) = setup_parts(2e-12);
        let mut ps2 = ps.clone();
        for p in ps2.paths_mut() {
            p.rcs_variance.iter_mut().for_each(|v| *v *= 2.0);
        }
        let pr = build_projectors(&ps, &g).unwrap();
        let w = WeightVector::equal(2);
        let cal = calibrate_threshold(&pr, &w, &g, 0.05, 4000, 1).unwrap();
        let mk = |paths| DetectionSetup {
            grid: &g,
            paths,
            channels: &ch,
            symbols: &x,
            alloc: &alloc,
            rcs_model: RcsModel::SwerlingI,
            projectors: &pr,
            w: &w,
        };
        let (s1, s2) = (mk(&ps), mk(&ps2));
        let mut worse = 0;
        let mut better = 0;
        for t in 0..3000 {
            let a = s1.h1_statistic(7, t).unwrap() > cal.threshold;
            let b = s2.h1_statistic(7, t).unwrap() > cal.threshold;
            worse += (a && !b) as usize;
            better += (b && !a) as usize;
        }
        assert!(better >= worse, "{better} vs {worse}");
        assert!(better > 0);
    }

    proptest! {
        #[test]
        fn statistic_at_least_one_and_scale_invariant(seed in 0u64..1000, l in 1usize..5, c in 0.01..100.0f64) {
            let g = OfdmGrid::table_one(16, 16).unwrap();
            let pr = build_projectors(&random_path_set(&g, l, seed), &g).unwrap();
            let w = WeightVector::normalized(&(0..l).map(|i| 1.0 + i as f64).collect::<Vec<_>>()).unwrap();
            let y = noise(16, 16, seed);
            let s = glrt_statistic(y.view(), &pr, &w).unwrap();
            prop_assert!(s >= 1.0);
            let scaled = y.mapv(|v| v * c);
            let t = glrt_statistic(scaled.view(), &pr, &w).unwrap();
            prop_assert!((s - t).abs() <= 1e-13 * s);
            let pow2 = y.mapv(|v| v * 4.0);
            prop_assert_eq!(glrt_statistic(pow2.view(), &pr, &w).unwrap().to_bits(), s.to_bits());
        }

        #[test]
        fn equal_weights_match_unweighted(seed in 0u64..1000, l in 1usize..5) {
            let g = OfdmGrid::table_one(16, 16).unwrap();
            let pr = build_projectors(&random_path_set(&g, l, seed), &g).unwrap();
            let y = noise(16, 16, seed);
            let e = pr.energies(y.view()).unwrap();
            let unweighted = e.signal.iter().sum::<f64>() / e.noise;
            let s = glrt_statistic(y.view(), &pr, &WeightVector::equal(l)).unwrap();
            prop_assert!((l as f64 * (s - 1.0) - unweighted).abs() <= 1e-12 * unweighted);
        }
    }
}
