//! Experiment configuration files.
//!
//! The format is TOML. Every problem is reported with the line and column of
//! the offending value or block. See `configs/desk.toml` for a complete file
//! and the README for the schema.

use std::fmt;
use std::ops::Range;
use std::path::{Path as FsPath, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Spanned;

use crate::optimizer::{DesignOptions, DesignVariant};
use crate::scene::{db_to_linear, dbm_to_watts, Geometry, OfdmGrid};
use crate::waveform::{read_comm_channel, RcsModel};

/// Problem in a config file, located by 1-based line and column.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub origin: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}: {}", self.origin, self.line, self.column, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn locate(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, column)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 16 x 16 grid, 10^4 trials.
    #[default]
    Desk,
    /// 64 x 64 grid, 10^5 trials.
    Full,
}

impl Profile {
    pub fn grid_size(self) -> usize {
        match self {
            Profile::Desk => 16,
            Profile::Full => 64,
        }
    }

    pub fn n_trials(self) -> usize {
        match self {
            Profile::Desk => 10_000,
            Profile::Full => 100_000,
        }
    }

    /// False-alarm rate of the RCS sweep. The desk trial count cannot
    /// calibrate 1e-3.
    pub fn sweep_p_fa(self) -> f64 {
        match self {
            Profile::Desk => 1e-2,
            Profile::Full => 1e-3,
        }
    }
}

macro_rules! checked {
    ($name:ident, $inner:ty, $what:literal, |$v:ident| $ok:expr) => {
        #[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
        #[serde(try_from = $what)]
        struct $name($inner);

        impl TryFrom<$inner> for $name {
            type Error = String;
            fn try_from($v: $inner) -> Result<Self, String> {
                $ok.map(|_| $name($v))
            }
        }
    };
}

checked!(Positive, f64, "f64", |v| if v.is_finite() && v > 0.0 {
    Ok(())
} else {
    Err(format!("expected a positive number, got {v}"))
});
checked!(Finite, f64, "f64", |v| if v.is_finite() {
    Ok(())
} else {
    Err(format!("expected a finite number, got {v}"))
});
checked!(Probability, f64, "f64", |v| if v > 0.0 && v <= 1.0 {
    Ok(())
} else {
    Err(format!("expected a probability in (0, 1], got {v}"))
});
checked!(Fraction, f64, "f64", |v| if (0.0..=1.0).contains(&v) {
    Ok(())
} else {
    Err(format!("expected a fraction in [0, 1], got {v}"))
});
checked!(GridSize, usize, "usize", |v| if v >= 2 {
    Ok(())
} else {
    Err(format!("expected at least 2, got {v}"))
});
checked!(Count, usize, "usize", |v| if v >= 1 {
    Ok(())
} else {
    Err("expected at least 1".to_string())
});

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
enum RawLoss {
    Real(f64),
    Complex([f64; 2]),
}

impl RawLoss {
    fn pair(self) -> [f64; 2] {
        match self {
            RawLoss::Real(re) => [re, 0.0],
            RawLoss::Complex(z) => z,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    profile: Option<Profile>,
    grid: Spanned<RawGrid>,
    scene: Spanned<RawScene>,
    rcs: Spanned<RawRcs>,
    comm: Spanned<RawComm>,
    run: Spanned<RawRun>,
    #[serde(default)]
    design: RawDesign,
    #[serde(default)]
    map: RawMap,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    n_subcarriers: Option<GridSize>,
    n_symbols: Option<GridSize>,
    subcarrier_spacing_hz: Option<Positive>,
    carrier_freq_hz: Option<Positive>,
    comm_noise_dbm: Option<Finite>,
    radar_noise_dbm: Option<Finite>,
    power_budget_dbw: Option<Finite>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    bs: Option<[f64; 2]>,
    reflectors: Option<Vec<[f64; 2]>>,
    target: Option<[f64; 2]>,
    velocity: Option<[f64; 2]>,
    path_loss: Option<Spanned<Vec<RawLoss>>>,
    path: Option<Vec<Spanned<RawPath>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPath {
    delay_tap: usize,
    doppler_tap: usize,
    path_loss: RawLoss,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRcs {
    #[serde(default)]
    model: RcsModel,
    #[serde(default)]
    normalization: Normalization,
    echo_snr_db: Option<Spanned<Finite>>,
    total_variance: Option<Spanned<Positive>>,
    #[serde(default = "half")]
    nlos_fraction: Fraction,
}

fn half() -> Fraction {
    Fraction(0.5)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawComm {
    #[serde(default)]
    channel: ChannelKind,
    file: Option<Spanned<String>>,
    snr_target_db: Option<Finite>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ChannelKind {
    #[default]
    Flat,
    Rayleigh,
    File,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    seed: u64,
    n_trials: Option<Count>,
    calibration_trials: Option<Count>,
    p_fa: Option<Vec<Probability>>,
    variants: Option<Vec<DesignVariant>>,
    sweep: Option<Vec<Fraction>>,
    sweep_p_fa: Option<Probability>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDesign {
    gain_profile: Option<GainProfileKind>,
    variant: Option<DesignVariant>,
    outer_tol: Option<Positive>,
    max_outer: Option<Count>,
    inner_tol: Option<Positive>,
    max_inner: Option<Count>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMap {
    p_fa: Option<Probability>,
    calibration_frames: Option<Count>,
    model: Option<RcsModel>,
    normalization: Option<Normalization>,
    echo_snr_db: Option<Finite>,
    weights: Option<MapWeights>,
    frames: Option<Count>,
    dump: Option<bool>,
}

/// How the RCS variances are split between the paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// LoS variance `(1 - f) V`, every NLoS path `f V / (L - 1)`.
    Variance,
    /// LoS echo energy `(1 - f) E`; the NLoS paths share `f E` through a
    /// common variance.
    #[default]
    Echo,
    /// Every path returns `E / L`.
    UniformEcho,
}

/// Overall echo level: per-entry SNR at uniform power, or the total variance
/// for the `variance` normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RcsLevel {
    EchoSnrDb(f64),
    TotalVariance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainProfileKind {
    Unit,
    #[default]
    RcsVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapWeights {
    #[default]
    Equal,
    /// Weights of the joint design.
    Design,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub subcarrier_spacing_hz: f64,
    pub carrier_freq_hz: f64,
    pub comm_noise_dbm: f64,
    pub radar_noise_dbm: f64,
    pub power_budget_dbw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSpec {
    pub delay_tap: usize,
    pub doppler_tap: usize,
    pub path_loss: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneSpec {
    Geometry {
        bs: [f64; 2],
        reflectors: Vec<[f64; 2]>,
        target: [f64; 2],
        velocity: [f64; 2],
        path_loss: Vec<[f64; 2]>,
    },
    Paths(Vec<PathSpec>),
}

impl SceneSpec {
    pub fn geometry(&self) -> Option<Geometry> {
        match self {
            SceneSpec::Geometry {
                bs,
                reflectors,
                target,
                velocity,
                ..
            } => Some(Geometry {
                bs_position: *bs,
                reflector_positions: reflectors.clone(),
                target_position: *target,
                target_velocity: *velocity,
            }),
            SceneSpec::Paths(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RcsSpec {
    pub model: RcsModel,
    pub normalization: Normalization,
    pub level: RcsLevel,
    pub nlos_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelSpec {
    Flat,
    Rayleigh,
    /// Values are part of the config hash; the file name is not.
    File {
        #[serde(skip)]
        path: PathBuf,
        taps: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommSpec {
    pub channel: ChannelSpec,
    pub snr_target_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignSpec {
    pub gain_profile: GainProfileKind,
    pub variant: DesignVariant,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub inner_tol: f64,
    pub max_inner: usize,
}

impl DesignSpec {
    pub fn options(&self) -> DesignOptions {
        DesignOptions {
            outer_tol: self.outer_tol,
            max_outer: self.max_outer,
            inner_tol: self.inner_tol,
            max_inner: self.max_inner,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSpec {
    pub seed: u64,
    pub n_trials: usize,
    pub calibration_trials: usize,
    pub p_fa: Vec<f64>,
    pub variants: Vec<DesignVariant>,
    pub sweep: Vec<f64>,
    pub sweep_p_fa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapSpec {
    pub p_fa: f64,
    pub calibration_frames: usize,
    pub model: RcsModel,
    pub normalization: Normalization,
    pub echo_snr_db: f64,
    pub weights: MapWeights,
    /// Frames scanned by `ddmap`; the first is written out in full.
    pub frames: usize,
    pub dump: bool,
}

/// A fully resolved experiment: every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub grid: GridSpec,
    pub scene: SceneSpec,
    pub rcs: RcsSpec,
    pub comm: CommSpec,
    pub design: DesignSpec,
    pub run: RunSpec,
    pub map: MapSpec,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
}

/// Log-spaced false-alarm rates, four per decade, from the smallest rate
/// `n` calibration trials support up to 1.
pub fn default_p_fa_grid(n: usize) -> Vec<f64> {
    let lo = (4.0 * (50.0 / n as f64).log10()).ceil().min(0.0) as i32;
    (lo..=0).map(|k| 10f64.powf(k as f64 / 4.0)).collect()
}

fn map_frames_for(p_fa: f64, bins: usize) -> usize {
    (60.0 / (p_fa * bins as f64)).ceil() as usize
}

impl ExperimentConfig {
    pub fn load(path: &FsPath, overrides: &Overrides) -> Result<Self, ConfigError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            origin: origin.clone(),
            line: 0,
            column: 0,
            message: e.to_string(),
        })?;
        let base = path.parent().map(FsPath::to_path_buf).unwrap_or_default();
        Self::parse(&text, &origin, &base, overrides)
    }

    /// Parses `text`; relative file names resolve against `base`.
    pub fn parse(text: &str, origin: &str, base: &FsPath, overrides: &Overrides) -> Result<Self, ConfigError> {
        let err = |span: Range<usize>, message: String| {
            let (line, column) = locate(text, span.start);
            ConfigError {
                origin: origin.to_string(),
                line,
                column,
                message,
            }
        };
        let raw: RawConfig = toml::from_str(text).map_err(|e| err(e.span().unwrap_or(0..0), e.message().to_string()))?;
        let profile = overrides.profile.or(raw.profile).unwrap_or_default();

        let g = raw.grid.get_ref();
        let grid = GridSpec {
            n_subcarriers: g.n_subcarriers.map_or(profile.grid_size(), |v| v.0),
            n_symbols: g.n_symbols.map_or(profile.grid_size(), |v| v.0),
            subcarrier_spacing_hz: g.subcarrier_spacing_hz.map_or(OfdmGrid::DEFAULT_SUBCARRIER_SPACING, |v| v.0),
            carrier_freq_hz: g.carrier_freq_hz.map_or(OfdmGrid::DEFAULT_CARRIER_FREQ, |v| v.0),
            comm_noise_dbm: g.comm_noise_dbm.map_or(-80.0, |v| v.0),
            radar_noise_dbm: g.radar_noise_dbm.map_or(-80.0, |v| v.0),
            power_budget_dbw: g.power_budget_dbw.map_or(20.0, |v| v.0),
        };

        let s = raw.scene.get_ref();
        let scene_span = raw.scene.span();
        let scene = match (&s.path, s.bs.is_some() || s.reflectors.is_some() || s.target.is_some()) {
            (Some(_), true) => {
                return Err(err(scene_span, "give either geometry or explicit paths, not both".into()));
            }
            (Some(paths), false) => {
                if paths.is_empty() {
                    return Err(err(scene_span, "at least one path is required".into()));
                }
                let mut out = Vec::new();
                for p in paths {
                    let r = p.get_ref();
                    if r.delay_tap >= grid.n_subcarriers || r.doppler_tap >= grid.n_symbols {
                        return Err(err(
                            p.span(),
                            format!(
                                "taps ({}, {}) outside the {}x{} grid",
                                r.delay_tap, r.doppler_tap, grid.n_subcarriers, grid.n_symbols
                            ),
                        ));
                    }
                    out.push(PathSpec {
                        delay_tap: r.delay_tap,
                        doppler_tap: r.doppler_tap,
                        path_loss: r.path_loss.pair(),
                    });
                }
                SceneSpec::Paths(out)
            }
            (None, _) => {
                let need = |v: Option<[f64; 2]>, key: &str| v.ok_or_else(|| err(scene_span.clone(), format!("missing `{key}`")));
                let reflectors = s.reflectors.clone().unwrap_or_default();
                let n_routes = (reflectors.len() + 1) * (reflectors.len() + 2) / 2;
                let losses = s
                    .path_loss
                    .as_ref()
                    .ok_or_else(|| err(scene_span.clone(), "missing `path_loss`".into()))?;
                if losses.get_ref().len() != n_routes {
                    return Err(err(
                        losses.span(),
                        format!(
                            "{} reflectors give {n_routes} routes but {} path losses are listed",
                            reflectors.len(),
                            losses.get_ref().len()
                        ),
                    ));
                }
                SceneSpec::Geometry {
                    bs: need(s.bs, "bs")?,
                    reflectors,
                    target: need(s.target, "target")?,
                    velocity: need(s.velocity, "velocity")?,
                    path_loss: losses.get_ref().iter().map(|l| l.pair()).collect(),
                }
            }
        };

        let r = raw.rcs.get_ref();
        let level = match (&r.echo_snr_db, &r.total_variance) {
            (Some(_), Some(v)) => return Err(err(v.span(), "give `echo_snr_db` or `total_variance`, not both".into())),
            (None, None) => return Err(err(raw.rcs.span(), "missing `echo_snr_db` or `total_variance`".into())),
            (Some(e), None) => RcsLevel::EchoSnrDb(e.get_ref().0),
            (None, Some(v)) => {
                if r.normalization != Normalization::Variance {
                    return Err(err(v.span(), "`total_variance` needs normalization = \"variance\"".into()));
                }
                RcsLevel::TotalVariance(v.get_ref().0)
            }
        };
        let rcs = RcsSpec {
            model: r.model,
            normalization: r.normalization,
            level,
            nlos_fraction: r.nlos_fraction.0,
        };

        let c = raw.comm.get_ref();
        let channel = match (c.channel, &c.file) {
            (ChannelKind::File, Some(f)) => {
                let path = base.join(f.get_ref());
                let taps = read_comm_channel(&path).map_err(|e| err(f.span(), e.to_string()))?;
                if taps.len() != grid.n_subcarriers {
                    return Err(err(
                        f.span(),
                        format!("{} channel taps for {} subcarriers", taps.len(), grid.n_subcarriers),
                    ));
                }
                ChannelSpec::File {
                    path,
                    taps: taps.iter().map(|z| [z.re, z.im]).collect(),
                }
            }
            (ChannelKind::File, None) => return Err(err(raw.comm.span(), "channel = \"file\" needs `file`".into())),
            (_, Some(f)) => return Err(err(f.span(), "`file` is only read with channel = \"file\"".into())),
            (ChannelKind::Flat, None) => ChannelSpec::Flat,
            (ChannelKind::Rayleigh, None) => ChannelSpec::Rayleigh,
        };
        let comm = CommSpec {
            channel,
            snr_target_db: c.snr_target_db.map_or(8.0, |v| v.0),
        };

        let d = &raw.design;
        let defaults = DesignOptions::default();
        let design = DesignSpec {
            gain_profile: d.gain_profile.unwrap_or_default(),
            variant: d.variant.unwrap_or(DesignVariant::Joint),
            outer_tol: d.outer_tol.map_or(defaults.outer_tol, |v| v.0),
            max_outer: d.max_outer.map_or(defaults.max_outer, |v| v.0),
            inner_tol: d.inner_tol.map_or(defaults.inner_tol, |v| v.0),
            max_inner: d.max_inner.map_or(defaults.max_inner, |v| v.0),
        };

        let u = raw.run.get_ref();
        let n_trials = overrides.trials.unwrap_or(u.n_trials.map_or(profile.n_trials(), |v| v.0));
        if n_trials == 0 {
            return Err(err(raw.run.span(), "trial count must be positive".into()));
        }
        let calibration_trials = u.calibration_trials.map_or(n_trials, |v| v.0);
        let run = RunSpec {
            seed: overrides.seed.unwrap_or(u.seed),
            n_trials,
            calibration_trials,
            p_fa: u
                .p_fa
                .as_ref()
                .map_or_else(|| default_p_fa_grid(calibration_trials), |v| v.iter().map(|p| p.0).collect()),
            variants: u.variants.clone().unwrap_or_else(|| DesignVariant::ALL.to_vec()),
            sweep: u
                .sweep
                .as_ref()
                .map_or_else(|| vec![0.1, 0.3, 0.5, 0.7, 0.9], |v| v.iter().map(|f| f.0).collect()),
            sweep_p_fa: u.sweep_p_fa.map_or(profile.sweep_p_fa(), |v| v.0),
        };
        if run.variants.is_empty() || run.p_fa.is_empty() || run.sweep.is_empty() {
            return Err(err(raw.run.span(), "`variants`, `p_fa` and `sweep` must not be empty".into()));
        }

        let mp = &raw.map;
        let map_p_fa = mp.p_fa.map_or(1e-5, |v| v.0);
        let map = MapSpec {
            p_fa: map_p_fa,
            calibration_frames: mp
                .calibration_frames
                .map_or_else(|| map_frames_for(map_p_fa, grid.n_symbols), |v| v.0),
            model: mp.model.unwrap_or(RcsModel::Steady),
            normalization: mp.normalization.unwrap_or(Normalization::UniformEcho),
            echo_snr_db: mp.echo_snr_db.map_or(40.0, |v| v.0),
            weights: mp.weights.unwrap_or_default(),
            frames: mp.frames.map_or(1, |v| v.0),
            dump: mp.dump.unwrap_or(false),
        };

        let cfg = ExperimentConfig {
            profile,
            grid,
            scene,
            rcs,
            comm,
            design,
            run,
            map,
        };
        cfg.ofdm_grid().map_err(|e| err(raw.grid.span(), e.to_string()))?;
        if let Some(geom) = cfg.scene.geometry() {
            geom.validate().map_err(|e| err(scene_span, e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn ofdm_grid(&self) -> crate::Result<OfdmGrid> {
        let g = &self.grid;
        OfdmGrid::new(
            g.n_subcarriers,
            g.n_symbols,
            g.subcarrier_spacing_hz,
            g.carrier_freq_hz,
            dbm_to_watts(g.comm_noise_dbm),
            dbm_to_watts(g.radar_noise_dbm),
            db_to_linear(g.power_budget_dbw),
            db_to_linear(self.comm.snr_target_db),
        )
    }

    pub fn path_losses(&self) -> Vec<Complex64> {
        let pairs: Vec<[f64; 2]> = match &self.scene {
            SceneSpec::Geometry { path_loss, .. } => path_loss.clone(),
            SceneSpec::Paths(p) => p.iter().map(|p| p.path_loss).collect(),
        };
        pairs.iter().map(|z| Complex64::new(z[0], z[1])).collect()
    }

    /// Canonical JSON of the resolved config.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
