//! Scenario assembly and the four experiment runners.
//!
//! Runners return plain rows; writing them is the command layer's job. All
//! Monte Carlo loops collect in trial order, so results do not depend on the
//! size of the worker pool.

use ndarray::Array2;
use num_complex::Complex64;

use crate::channel::{build_projectors, path_channels, PathChannel, ProjectorSet};
use crate::config::{ChannelSpec, ExperimentConfig, GainProfileKind, MapWeights, Normalization, RcsLevel};
use crate::detector::map::{calibrate_map_threshold, delay_doppler_map, route_offsets, DelayDopplerMap, MapMode};
use crate::detector::{
    h0_statistics, h1_statistics, pd_from_statistics, threshold_from_statistics, Calibration, DetectionSetup,
    WeightVector,
};
use crate::error::{Error, Result};
use crate::optimizer::{initial_allocation, joint_design, DesignOptions, DesignProblem, DesignVariant, GainProfile, JointSolution};
use crate::rng::{stream, Purpose};
use crate::scene::{db_to_linear, taps_from_geometry, OfdmGrid, Path, PathSet};
use crate::waveform::{
    comm_lower_bounds, compensate_symbols, draw_symbols, synthesize_echo, CommChannel, Hypothesis, PowerAllocation,
    RcsModel, SymbolFrame,
};

/// Per-path RCS variances for echo level `level` and NLoS share `fraction`.
/// `unit_echo` is the per-entry echo SNR of a path with `sigma^2 |beta|^2 = 1`
/// at uniform power, `P / (N M sigma_r^2)`.
pub fn rcs_variances(
    path_gains: &[f64],
    normalization: Normalization,
    level: RcsLevel,
    fraction: f64,
    unit_echo: f64,
) -> Result<Vec<f64>> {
    let l = path_gains.len();
    if l == 0 {
        return Err(Error::InvalidScene("no paths".into()));
    }
    if let Some(i) = path_gains.iter().position(|b| !(*b > 0.0 && b.is_finite())) {
        return Err(Error::InvalidScene(format!("path {i} has zero loss")));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidScene(format!("NLoS fraction {fraction} outside [0, 1]")));
    }
    let echo = |db: f64| db_to_linear(db) / unit_echo;
    if l == 1 {
        return Ok(vec![match level {
            RcsLevel::EchoSnrDb(db) => echo(db) / path_gains[0],
            RcsLevel::TotalVariance(v) => v,
        }]);
    }
    let nlos = (l - 1) as f64;
    let out = match (normalization, level) {
        (Normalization::Variance, level) => {
            let shares: Vec<f64> = (0..l).map(|i| if i == 0 { 1.0 - fraction } else { fraction / nlos }).collect();
            let total = match level {
                RcsLevel::TotalVariance(v) => v,
                RcsLevel::EchoSnrDb(db) => {
                    let per_unit: f64 = shares.iter().zip(path_gains).map(|(s, b)| s * b).sum();
                    echo(db) / per_unit
                }
            };
            shares.iter().map(|s| s * total).collect()
        }
        (Normalization::Echo, RcsLevel::EchoSnrDb(db)) => {
            let e = echo(db);
            let nlos_gain: f64 = path_gains[1..].iter().sum();
            let mut v = vec![fraction * e / nlos_gain; l];
            v[0] = (1.0 - fraction) * e / path_gains[0];
            v
        }
        (Normalization::UniformEcho, RcsLevel::EchoSnrDb(db)) => {
            let e = echo(db) / l as f64;
            path_gains.iter().map(|b| e / b).collect()
        }
        (_, RcsLevel::TotalVariance(_)) => {
            return Err(Error::InvalidScene("a total variance needs the variance split".into()));
        }
    };
    Ok(out)
}

/// Everything fixed for one experiment: paths, symbols, floors and the
/// design problem built from them.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: OfdmGrid,
    pub paths: PathSet,
    pub channels: Vec<PathChannel>,
    pub symbols: SymbolFrame,
    pub comm_channel: Vec<Complex64>,
    pub rcs_model: RcsModel,
    pub problem: DesignProblem,
    pub initial: PowerAllocation,
    pub options: DesignOptions,
    pub seed: u64,
}

/// One design variant, designed and ready to detect.
#[derive(Debug, Clone)]
pub struct Detector {
    pub variant: DesignVariant,
    pub solution: JointSolution,
    pub projectors: ProjectorSet,
}

impl Scenario {
    /// Scenario with the config's own RCS settings.
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let r = &cfg.rcs;
        Self::with_rcs(cfg, r.model, r.normalization, r.level, r.nlos_fraction)
    }

    pub fn with_rcs(
        cfg: &ExperimentConfig,
        model: RcsModel,
        normalization: Normalization,
        level: RcsLevel,
        fraction: f64,
    ) -> Result<Self> {
        let grid = cfg.ofdm_grid()?;
        let n = grid.n_subcarriers;
        let losses = cfg.path_losses();
        let mut paths = match cfg.scene.geometry() {
            Some(geom) => taps_from_geometry(&geom, &grid, &losses)?,
            None => {
                let ps = match &cfg.scene {
                    crate::config::SceneSpec::Paths(ps) => ps,
                    crate::config::SceneSpec::Geometry { .. } => unreachable!(),
                };
                PathSet::new(
                    ps.iter()
                        .zip(&losses)
                        .map(|(p, b)| Path::flat(p.delay_tap, p.doppler_tap, *b, 1.0, n))
                        .collect::<Result<_>>()?,
                )?
            }
        };
        let gains: Vec<f64> = losses.iter().map(|b| b.norm_sqr()).collect();
        let unit_echo = grid.power_budget / (grid.n_entries() as f64 * grid.radar_noise_power);
        let variances = rcs_variances(&gains, normalization, level, fraction, unit_echo)?;
        for (p, v) in paths.paths_mut().iter_mut().zip(variances) {
            p.rcs_variance = vec![v; n];
        }
        let channels = path_channels(&paths, &grid);
        let seed = cfg.run.seed;
        let symbols = draw_symbols(&grid, &mut stream(seed, Purpose::Symbols, 0));
        let comm = match &cfg.comm.channel {
            ChannelSpec::Flat => CommChannel::Flat,
            ChannelSpec::Rayleigh => CommChannel::Rayleigh,
            ChannelSpec::File { taps, .. } => CommChannel::Fixed(taps.iter().map(|z| Complex64::new(z[0], z[1])).collect()),
        };
        let comm_channel = comm.realize(&grid, &mut stream(seed, Purpose::CommChannel, 0))?;
        let lower_bounds = comm_lower_bounds(&grid, &comm_channel, &symbols)?;
        let profile = match cfg.design.gain_profile {
            GainProfileKind::Unit => GainProfile::Unit,
            GainProfileKind::RcsVariance => GainProfile::RcsVariance,
        };
        let initial = initial_allocation(&lower_bounds, grid.power_budget)?;
        let problem = DesignProblem {
            channels: channels.clone(),
            symbols: symbols.clone(),
            gains: profile.resolve(&paths, n)?,
            lower_bounds,
            power_budget: grid.power_budget,
        };
        Ok(Self {
            grid,
            paths,
            channels,
            symbols,
            comm_channel,
            rcs_model: model,
            problem,
            initial,
            options: cfg.design.options(),
            seed,
        })
    }

    pub fn design(&self, variant: DesignVariant) -> Result<JointSolution> {
        joint_design(&self.problem, &self.initial, variant, &self.options)
    }

    pub fn detector(&self, variant: DesignVariant) -> Result<Detector> {
        let solution = self.design(variant)?;
        let projectors = if variant == DesignVariant::LosOnly {
            build_projectors(&self.paths.line_of_sight()?, &self.grid)?
        } else {
            build_projectors(&self.paths, &self.grid)?
        };
        Ok(Detector {
            variant,
            solution,
            projectors,
        })
    }

    pub fn setup<'a>(&'a self, det: &'a Detector) -> DetectionSetup<'a> {
        DetectionSetup {
            grid: &self.grid,
            paths: &self.paths,
            channels: &self.channels,
            symbols: &self.symbols,
            alloc: &det.solution.alloc,
            rcs_model: self.rcs_model,
            projectors: &det.projectors,
            w: &det.solution.w,
        }
    }

    /// H0 statistics for `det` on the calibration stream.
    pub fn null_statistics(&self, det: &Detector, n: usize) -> Result<Vec<f64>> {
        h0_statistics(&det.projectors, &det.solution.w, &self.grid, n, self.seed)
    }

    /// H1 statistics for `det`; trial `t` is paired across detectors.
    pub fn alt_statistics(&self, det: &Detector, n: usize) -> Result<Vec<f64>> {
        h1_statistics(&self.setup(det), n, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocRow {
    pub variant: DesignVariant,
    pub p_fa: f64,
    pub p_d: f64,
    pub halfwidth: f64,
    pub threshold: f64,
    pub p_fa_empirical: f64,
    pub n_trials: usize,
}

/// ROC points for every configured variant and false-alarm rate. Each
/// variant draws its H0 and H1 statistics once and reuses them across rates.
pub fn run_roc(cfg: &ExperimentConfig) -> Result<Vec<RocRow>> {
    let scn = Scenario::new(cfg)?;
    let mut rows = Vec::new();
    for &variant in &cfg.run.variants {
        let det = scn.detector(variant)?;
        let null = scn.null_statistics(&det, cfg.run.calibration_trials)?;
        let alt = scn.alt_statistics(&det, cfg.run.n_trials)?;
        for &p_fa in &cfg.run.p_fa {
            let cal = threshold_from_statistics(null.clone(), p_fa)?;
            let pd = pd_from_statistics(&alt, cal.threshold);
            rows.push(RocRow {
                variant,
                p_fa,
                p_d: pd.p_d,
                halfwidth: pd.halfwidth,
                threshold: cal.threshold,
                p_fa_empirical: cal.p_fa_empirical,
                n_trials: pd.n_trials,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub nlos_fraction: f64,
    pub variant: DesignVariant,
    pub p_d: f64,
    pub halfwidth: f64,
    pub threshold: f64,
    pub n_trials: usize,
}

/// Detection probability at the sweep false-alarm rate as the NLoS share of
/// the echo varies. Every sweep point uses the same trial streams.
pub fn run_rcs_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &fraction in &cfg.run.sweep {
        let r = &cfg.rcs;
        let scn = Scenario::with_rcs(cfg, r.model, r.normalization, r.level, fraction)?;
        for &variant in &cfg.run.variants {
            let det = scn.detector(variant)?;
            let cal = threshold_from_statistics(
                scn.null_statistics(&det, cfg.run.calibration_trials)?,
                cfg.run.sweep_p_fa,
            )?;
            let pd = pd_from_statistics(&scn.alt_statistics(&det, cfg.run.n_trials)?, cal.threshold);
            rows.push(SweepRow {
                nlos_fraction: fraction,
                variant,
                p_d: pd.p_d,
                halfwidth: pd.halfwidth,
                threshold: cal.threshold,
                n_trials: pd.n_trials,
            });
        }
    }
    Ok(rows)
}

/// Both map modes on one H1 frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MapFrame {
    pub index: u64,
    /// Received frame before symbol removal.
    pub y: Array2<Complex64>,
    pub single: DelayDopplerMap,
    pub combined: DelayDopplerMap,
}

#[derive(Debug, Clone)]
pub struct MapRun {
    pub scenario: Scenario,
    /// Taps of the line-of-sight route.
    pub true_bin: (usize, usize),
    pub single_threshold: Calibration,
    pub combined_threshold: Calibration,
    pub combined_mode: MapMode,
    pub frames: Vec<MapFrame>,
}

/// Above-threshold Doppler taps on the true delay row.
#[derive(Debug, Clone, PartialEq)]
pub struct MapCounts {
    pub single: Vec<usize>,
    pub combined: Vec<usize>,
}

impl MapRun {
    pub fn counts(&self, frame: &MapFrame) -> MapCounts {
        let k = self.true_bin.0;
        MapCounts {
            single: frame.single.exceedances_at_delay(k, self.single_threshold.threshold),
            combined: frame.combined.exceedances_at_delay(k, self.combined_threshold.threshold),
        }
    }
}

/// Map scenario: the config's paths with the map's own RCS settings.
pub fn map_scenario(cfg: &ExperimentConfig) -> Result<Scenario> {
    let m = &cfg.map;
    Scenario::with_rcs(
        cfg,
        m.model,
        m.normalization,
        RcsLevel::EchoSnrDb(m.echo_snr_db),
        cfg.rcs.nlos_fraction,
    )
}

/// Calibrates both map modes and scans frames `first..first + count` on the
/// frame stream.
pub fn run_ddmap_frames(cfg: &ExperimentConfig, first: u64, count: usize) -> Result<MapRun> {
    let scn = map_scenario(cfg)?;
    let (alloc, weights) = match cfg.map.weights {
        MapWeights::Equal => (scn.initial.clone(), WeightVector::equal(scn.paths.len())),
        MapWeights::Design => {
            let sol = scn.design(DesignVariant::Joint)?;
            (sol.alloc, sol.w)
        }
    };
    let combined_mode = MapMode::Combined {
        offsets: route_offsets(&scn.paths),
        weights,
    };
    let (p_fa, n_cal) = (cfg.map.p_fa, cfg.map.calibration_frames);
    let single_threshold = calibrate_map_threshold(&scn.grid, &MapMode::SinglePath, p_fa, n_cal, scn.seed)?;
    let combined_threshold = calibrate_map_threshold(&scn.grid, &combined_mode, p_fa, n_cal, scn.seed)?;
    let delays: Vec<usize> = (0..scn.grid.n_subcarriers).collect();
    let dopplers: Vec<usize> = (0..scn.grid.n_symbols).collect();
    let mut frames = Vec::with_capacity(count);
    for index in first..first + count as u64 {
        let mut rng = stream(scn.seed, Purpose::Frame, index);
        let frame = synthesize_echo(
            &scn.grid,
            &scn.paths,
            &scn.channels,
            &alloc,
            &scn.symbols,
            Hypothesis::H1,
            scn.rcs_model,
            &mut rng,
        )?;
        let z = compensate_symbols(frame.y.view(), &scn.symbols);
        frames.push(MapFrame {
            index,
            single: delay_doppler_map(z.view(), &scn.grid, &MapMode::SinglePath, &delays, &dopplers)?,
            combined: delay_doppler_map(z.view(), &scn.grid, &combined_mode, &delays, &dopplers)?,
            y: frame.y,
        });
    }
    let los = &scn.paths[0];
    Ok(MapRun {
        true_bin: (los.delay_tap, los.doppler_tap),
        scenario: scn,
        single_threshold,
        combined_threshold,
        combined_mode,
        frames,
    })
}

pub fn run_ddmap(cfg: &ExperimentConfig) -> Result<MapRun> {
    run_ddmap_frames(cfg, 0, cfg.map.frames)
}

/// Result of the `optimize` command.
#[derive(Debug, Clone)]
pub struct OptimizeRun {
    pub variant: DesignVariant,
    pub solution: JointSolution,
    pub grid: OfdmGrid,
}

pub fn run_optimize(cfg: &ExperimentConfig) -> Result<OptimizeRun> {
    let scn = Scenario::new(cfg)?;
    let variant = cfg.design.variant;
    Ok(OptimizeRun {
        variant,
        solution: scn.design(variant)?,
        grid: scn.grid,
    })
}
