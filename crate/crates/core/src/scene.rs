//! OFDM grid parameters, scene geometry and the mapping from round-trip
//! routes to integer delay/Doppler taps.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Carrier, subcarrier and symbol-slot parameters plus the noise and power
/// figures that go with them.
#[derive(Debug, Clone, PartialEq)]
pub struct OfdmGrid {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    /// Hz.
    pub subcarrier_spacing: f64,
    /// Seconds; always `1 / subcarrier_spacing`.
    pub symbol_duration: f64,
    /// Hz.
    pub carrier_freq: f64,
    /// Watts.
    pub comm_noise_power: f64,
    /// Watts.
    pub radar_noise_power: f64,
    /// Watts.
    pub power_budget: f64,
    /// Linear ratio.
    pub comm_snr_target: f64,
}

impl OfdmGrid {
    pub const DEFAULT_CARRIER_FREQ: f64 = 24e9;
    pub const DEFAULT_SUBCARRIER_SPACING: f64 = 10e3;

    /// Table I powers (20 dBW budget, 8 dB SNR target, -80 dBm noise) on an
    /// `n x m` grid with the default carrier and spacing.
    pub fn table_one(n: usize, m: usize) -> Result<Self> {
        Self::new(
            n,
            m,
            Self::DEFAULT_SUBCARRIER_SPACING,
            Self::DEFAULT_CARRIER_FREQ,
            dbm_to_watts(-80.0),
            dbm_to_watts(-80.0),
            db_to_linear(20.0),
            db_to_linear(8.0),
        )
    }

    /// 16 x 16 grid.
    pub fn desk() -> Self {
        Self::table_one(16, 16).expect("desk grid is valid")
    }

    /// 64 x 64 grid.
    pub fn full() -> Self {
        Self::table_one(64, 64).expect("full grid is valid")
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_subcarriers: usize,
        n_symbols: usize,
        subcarrier_spacing: f64,
        carrier_freq: f64,
        comm_noise_power: f64,
        radar_noise_power: f64,
        power_budget: f64,
        comm_snr_target: f64,
    ) -> Result<Self> {
        let grid = Self {
            n_subcarriers,
            n_symbols,
            subcarrier_spacing,
            symbol_duration: 1.0 / subcarrier_spacing,
            carrier_freq,
            comm_noise_power,
            radar_noise_power,
            power_budget,
            comm_snr_target,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers < 2 || self.n_symbols < 2 {
            return Err(Error::InvalidGrid(format!(
                "need N, M >= 2, got N = {}, M = {}",
                self.n_subcarriers, self.n_symbols
            )));
        }
        let positive = [
            ("subcarrier_spacing", self.subcarrier_spacing),
            ("symbol_duration", self.symbol_duration),
            ("carrier_freq", self.carrier_freq),
            ("comm_noise_power", self.comm_noise_power),
            ("radar_noise_power", self.radar_noise_power),
            ("power_budget", self.power_budget),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidGrid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.comm_snr_target.is_finite() && self.comm_snr_target >= 0.0) {
            return Err(Error::InvalidGrid(format!(
                "comm_snr_target must be non-negative, got {}",
                self.comm_snr_target
            )));
        }
        if ((self.symbol_duration * self.subcarrier_spacing) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidGrid("symbol_duration * subcarrier_spacing != 1".into()));
        }
        Ok(())
    }

    /// N * M, the length of the power allocation vector.
    pub fn n_entries(&self) -> usize {
        self.n_subcarriers * self.n_symbols
    }

    /// Unwrapped delay tap `round(tau * N * df)`.
    pub fn delay_bin(&self, delay_s: f64) -> i64 {
        (delay_s * self.n_subcarriers as f64 * self.subcarrier_spacing).round() as i64
    }

    /// Unwrapped Doppler tap `round(nu * M * T)`.
    pub fn doppler_bin(&self, doppler_hz: f64) -> i64 {
        (doppler_hz * self.n_symbols as f64 * self.symbol_duration).round() as i64
    }
}

/// One propagation path seen at tap resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub delay_tap: usize,
    pub doppler_tap: usize,
    pub path_loss: Complex64,
    /// Per-subcarrier RCS variance, length N.
    pub rcs_variance: Vec<f64>,
}

impl Path {
    pub fn new(delay_tap: usize, doppler_tap: usize, path_loss: Complex64, rcs_variance: Vec<f64>) -> Result<Self> {
        if rcs_variance.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidScene("RCS variances must be finite and non-negative".into()));
        }
        Ok(Self {
            delay_tap,
            doppler_tap,
            path_loss,
            rcs_variance,
        })
    }

    /// Path with a flat RCS variance over `n` subcarriers.
    pub fn flat(delay_tap: usize, doppler_tap: usize, path_loss: Complex64, variance: f64, n: usize) -> Result<Self> {
        Self::new(delay_tap, doppler_tap, path_loss, vec![variance; n])
    }

    pub fn check_grid(&self, grid: &OfdmGrid) -> Result<()> {
        if self.delay_tap >= grid.n_subcarriers || self.doppler_tap >= grid.n_symbols {
            return Err(Error::InvalidScene(format!(
                "tap ({}, {}) outside the {}x{} grid",
                self.delay_tap, self.doppler_tap, grid.n_subcarriers, grid.n_symbols
            )));
        }
        if self.rcs_variance.len() != grid.n_subcarriers {
            return Err(Error::DimensionMismatch(format!(
                "rcs_variance has {} entries, grid has {} subcarriers",
                self.rcs_variance.len(),
                grid.n_subcarriers
            )));
        }
        Ok(())
    }
}

/// Ordered set of paths with pairwise distinct taps. The first path is the
/// line-of-sight route whenever the set comes from a geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    paths: Vec<Path>,
}

impl PathSet {
    pub fn new(paths: Vec<Path>) -> Result<Self> {
        for (i, a) in paths.iter().enumerate() {
            for (j, b) in paths.iter().enumerate().skip(i + 1) {
                if a.delay_tap == b.delay_tap && a.doppler_tap == b.doppler_tap {
                    return Err(Error::DuplicateTap {
                        first: i,
                        second: j,
                        delay_tap: a.delay_tap,
                        doppler_tap: a.doppler_tap,
                    });
                }
            }
        }
        Ok(Self { paths })
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn paths_mut(&mut self) -> &mut [Path] {
        &mut self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Path> {
        self.paths.iter()
    }

    /// The first path alone.
    pub fn line_of_sight(&self) -> Result<PathSet> {
        let first = self.paths.first().ok_or_else(|| Error::InvalidScene("empty path set".into()))?;
        PathSet::new(vec![first.clone()])
    }

    pub fn check_grid(&self, grid: &OfdmGrid) -> Result<()> {
        self.paths.iter().try_for_each(|p| p.check_grid(grid))
    }
}

impl std::ops::Index<usize> for PathSet {
    type Output = Path;
    fn index(&self, i: usize) -> &Path {
        &self.paths[i]
    }
}

/// Planar scene: base station, static reflectors, moving target.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub bs_position: [f64; 2],
    pub reflector_positions: Vec<[f64; 2]>,
    pub target_position: [f64; 2],
    pub target_velocity: [f64; 2],
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

impl Geometry {
    /// BS (0,0), reflectors (-30,10) and (20,30), target (0,55) moving at (30,50).
    pub fn table_one() -> Self {
        Self {
            bs_position: [0.0, 0.0],
            reflector_positions: vec![[-30.0, 10.0], [20.0, 30.0]],
            target_position: [0.0, 55.0],
            target_velocity: [30.0, 50.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut points = vec![self.bs_position, self.target_position];
        points.extend(self.reflector_positions.iter().copied());
        if points.iter().flatten().chain(self.target_velocity.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidScene("non-finite coordinate".into()));
        }
        for (i, a) in points.iter().enumerate() {
            for b in &points[i + 1..] {
                if norm(sub(*a, *b)) == 0.0 {
                    return Err(Error::InvalidScene(format!("coincident positions at {a:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn translated(&self, offset: [f64; 2]) -> Self {
        let shift = |p: [f64; 2]| [p[0] + offset[0], p[1] + offset[1]];
        Self {
            bs_position: shift(self.bs_position),
            reflector_positions: self.reflector_positions.iter().map(|p| shift(*p)).collect(),
            target_position: shift(self.target_position),
            target_velocity: self.target_velocity,
        }
    }

    /// One-way legs between BS and target: index 0 is direct, index `i + 1`
    /// bounces off reflector `i`.
    pub fn legs(&self) -> Vec<Leg> {
        let mut out = Vec::with_capacity(1 + self.reflector_positions.len());
        let mut push = |anchor: [f64; 2], prefix: f64| {
            let d = sub(self.target_position, anchor);
            let len = norm(d);
            let range_rate = (self.target_velocity[0] * d[0] + self.target_velocity[1] * d[1]) / len;
            out.push(Leg {
                length: prefix + len,
                range_rate,
            });
        };
        push(self.bs_position, 0.0);
        for &r in &self.reflector_positions {
            push(r, norm(sub(r, self.bs_position)));
        }
        out
    }
}

/// A one-way propagation leg. `range_rate` is the rate of change of the final
/// segment length at the target (positive when receding).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leg {
    pub length: f64,
    pub range_rate: f64,
}

/// A round trip built from an outbound and an inbound leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Route {
    pub outbound: usize,
    pub inbound: usize,
    /// Seconds.
    pub delay: f64,
    /// Hz; positive for a closing target.
    pub doppler: f64,
}

/// Unordered leg pairs `(i, j)` with `i <= j`, direct-direct first.
pub fn routes(geom: &Geometry, carrier_freq: f64) -> Vec<Route> {
    let legs = geom.legs();
    let mut out = Vec::new();
    for i in 0..legs.len() {
        for j in i..legs.len() {
            let (a, b) = (legs[i], legs[j]);
            out.push(Route {
                outbound: i,
                inbound: j,
                delay: (a.length + b.length) / SPEED_OF_LIGHT,
                doppler: -(carrier_freq / SPEED_OF_LIGHT) * (a.range_rate + b.range_rate),
            });
        }
    }
    out
}

/// Wrapped `(delay_tap, doppler_tap)` of a route.
pub fn route_taps(route: &Route, grid: &OfdmGrid) -> (usize, usize) {
    let k = grid.delay_bin(route.delay).rem_euclid(grid.n_subcarriers as i64) as usize;
    let r = grid.doppler_bin(route.doppler).rem_euclid(grid.n_symbols as i64) as usize;
    (k, r)
}

/// Quantizes every route of `geom` onto the grid and attaches `path_losses`
/// in route order. RCS variances start at one; callers overwrite them.
pub fn taps_from_geometry(geom: &Geometry, grid: &OfdmGrid, path_losses: &[Complex64]) -> Result<PathSet> {
    geom.validate()?;
    grid.validate()?;
    let rts = routes(geom, grid.carrier_freq);
    if rts.len() != path_losses.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} routes but {} path losses",
            rts.len(),
            path_losses.len()
        )));
    }
    let paths = rts
        .iter()
        .zip(path_losses)
        .map(|(rt, &beta)| {
            let (k, r) = route_taps(rt, grid);
            Path::flat(k, r, beta, 1.0, grid.n_subcarriers)
        })
        .collect::<Result<Vec<_>>>()?;
    PathSet::new(paths)
}

/// Table I path losses.
pub fn table_one_path_losses() -> Vec<Complex64> {
    [9.84, 1.02, 1.61, 0.10, 0.17, 0.26]
        .iter()
        .map(|&b| Complex64::new(b, 0.0))
        .collect()
}
