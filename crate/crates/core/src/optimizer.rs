//! Joint design of the transmit power allocation and the detector weights.
//!
//! The power step maximizes the linearization of `a^T R a` at the current
//! point over the budget ball intersected with the communication floors.
//! `R` is diagonal, so the KKT conditions give `a_i = max(b_i, c_i / 2mu)`
//! with `c = R a_k` and a scalar `mu` found by bisection.
//!
//! The weight step is `w = d / ||d||` with `d_l^2 = ||H_l A X||_F^2`. This
//! maximizes the deflection `sum_l w_l^2 d_l^2 / sqrt(sum_l w_l^4)`, which is
//! what the alternating loop tracks.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::channel::PathChannel;
use crate::detector::WeightVector;
use crate::error::{Error, Result};
use crate::scene::PathSet;
use crate::waveform::{PowerAllocation, SymbolFrame};

/// Per-path, per-subcarrier factor on `|h_{n,m,l}|^2` in the design
/// objective.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum GainProfile {
    /// All ones.
    #[default]
    Unit,
    /// The paths' RCS variances, i.e. the expected reflectivity power.
    RcsVariance,
    /// Explicit `[path][subcarrier]` values.
    Explicit(Vec<Vec<f64>>),
}

impl GainProfile {
    pub fn resolve(&self, paths: &PathSet, n_subcarriers: usize) -> Result<Vec<Vec<f64>>> {
        let out = match self {
            GainProfile::Unit => vec![vec![1.0; n_subcarriers]; paths.len()],
            GainProfile::RcsVariance => paths.iter().map(|p| p.rcs_variance.clone()).collect(),
            GainProfile::Explicit(g) => g.clone(),
        };
        if out.len() != paths.len() || out.iter().any(|g| g.len() != n_subcarriers) {
            return Err(Error::DimensionMismatch("gain profile must be paths x subcarriers".into()));
        }
        if out.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidScene("gain profile entries must be non-negative".into()));
        }
        Ok(out)
    }
}

/// Everything the design loop needs, fixed for the duration of a run.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub channels: Vec<PathChannel>,
    pub symbols: SymbolFrame,
    /// `[path][subcarrier]`.
    pub gains: Vec<Vec<f64>>,
    pub lower_bounds: Vec<f64>,
    pub power_budget: f64,
}

impl DesignProblem {
    pub fn n_paths(&self) -> usize {
        self.channels.len()
    }

    /// `G[l][m N + n] = g_{n,l} |h_{n,m,l}|^2 |x_{n,m}|^2`.
    fn path_gain_table(&self) -> Vec<Vec<f64>> {
        let (n, m) = self.symbols.symbols.dim();
        self.channels
            .iter()
            .zip(&self.gains)
            .map(|(ch, g)| {
                let mut row = vec![0.0; n * m];
                for j in 0..m {
                    for i in 0..n {
                        row[j * n + i] = g[i] * ch.coeffs[[i, j]].norm_sqr() * self.symbols.symbols[[i, j]].norm_sqr();
                    }
                }
                row
            })
            .collect()
    }

    /// Same problem restricted to the first path.
    pub fn first_path_only(&self) -> Self {
        Self {
            channels: self.channels[..1].to_vec(),
            symbols: self.symbols.clone(),
            gains: self.gains[..1].to_vec(),
            lower_bounds: self.lower_bounds.clone(),
            power_budget: self.power_budget,
        }
    }
}

/// Diagonal of `R`, indexed `m * N + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub r_diag: Vec<f64>,
}

pub fn build_quadratic(problem: &DesignProblem, w: &WeightVector) -> Result<QuadraticForm> {
    if w.len() != problem.n_paths() {
        return Err(Error::DimensionMismatch(format!("{} weights for {} paths", w.len(), problem.n_paths())));
    }
    let table = problem.path_gain_table();
    let nm = problem.lower_bounds.len();
    let mut r_diag = vec![0.0; nm];
    for (row, wl2) in table.iter().zip(w.squared()) {
        for (r, g) in r_diag.iter_mut().zip(row) {
            *r += wl2 * g;
        }
    }
    Ok(QuadraticForm { r_diag })
}

/// `a^T R a`.
pub fn objective(alloc: &PowerAllocation, quad: &QuadraticForm) -> f64 {
    alloc.gains.iter().zip(&quad.r_diag).map(|(a, r)| r * a * a).sum()
}

/// `d_l^2 = sum_{n,m} g_{n,l} |h_{n,m,l}|^2 a_{n,m}^2 |x_{n,m}|^2` for each path.
pub fn path_energies(problem: &DesignProblem, alloc: &PowerAllocation) -> Vec<f64> {
    problem
        .path_gain_table()
        .iter()
        .map(|row| row.iter().zip(&alloc.gains).map(|(g, a)| g * a * a).sum())
        .collect()
}

/// `sum_l w_l^2 D_l / sqrt(sum_l w_l^4)`.
pub fn deflection(energies: &[f64], w: &WeightVector) -> f64 {
    let w2 = w.squared();
    let num: f64 = w2.iter().zip(energies).map(|(a, b)| a * b).sum();
    num / w2.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn power(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum()
}

fn check_floors(bounds: &[f64], budget: f64) -> Result<f64> {
    let floor_power = power(bounds);
    if floor_power > budget * (1.0 + 1e-12) {
        return Err(Error::Infeasible { floor_power, budget });
    }
    Ok(floor_power)
}

/// Maximizes `sum_i c_i a_i` with `c = R a_k` over `sum a_i^2 <= budget`,
/// `a_i >= bounds_i`.
pub fn mm_power_step(a_k: &PowerAllocation, quad: &QuadraticForm, budget: f64) -> Result<PowerAllocation> {
    let bounds = &a_k.lower_bounds;
    if quad.r_diag.len() != bounds.len() || a_k.gains.len() != bounds.len() {
        return Err(Error::DimensionMismatch("allocation and quadratic form differ in length".into()));
    }
    let floor_power = check_floors(bounds, budget)?;
    let c: Vec<f64> = quad.r_diag.iter().zip(&a_k.gains).map(|(r, a)| r * a).collect();
    if c.iter().all(|v| *v == 0.0) || floor_power >= budget {
        return PowerAllocation::new(bounds.clone(), bounds.clone());
    }
    let at = |mu: f64| -> Vec<f64> {
        bounds.iter().zip(&c).map(|(b, ci)| b.max(ci / (2.0 * mu))).collect()
    };
    // Below mu0 the unconstrained part alone already exceeds the budget.
    let mut lo = power(&c).sqrt() / (2.0 * budget.sqrt());
    let mut hi = lo;
    while power(&at(hi)) > budget {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let p = power(&at(mid));
        if (p - budget).abs() <= 1e-10 * budget {
            lo = mid;
            hi = mid;
            break;
        }
        if p > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut mu = 0.5 * (lo + hi);
    // Closed form on the active set found by bisection; kept if it is closer.
    let active: Vec<bool> = bounds.iter().zip(&c).map(|(b, ci)| ci / (2.0 * mu) > *b).collect();
    let fixed: f64 = bounds.iter().zip(&active).filter(|(_, a)| !**a).map(|(b, _)| b * b).sum();
    let free: f64 = c.iter().zip(&active).filter(|(_, a)| **a).map(|(ci, _)| ci * ci).sum();
    if budget > fixed && free > 0.0 {
        let exact = (free / (4.0 * (budget - fixed))).sqrt();
        if (power(&at(exact)) - budget).abs() < (power(&at(mu)) - budget).abs() {
            mu = exact;
        }
    }
    let mut gains = at(mu);
    let p = power(&gains);
    if p > budget {
        let fixed: f64 = gains.iter().zip(bounds).filter(|(g, b)| g <= b).map(|(_, b)| b * b).sum();
        let shrink = ((budget - fixed) / (p - fixed)).sqrt();
        for (g, b) in gains.iter_mut().zip(bounds) {
            if *g > *b {
                *g = (*g * shrink).max(*b);
            }
        }
    }
    PowerAllocation::new(gains, bounds.clone())
}

/// `w = d / ||d||`.
pub fn update_weights(problem: &DesignProblem, alloc: &PowerAllocation) -> Result<WeightVector> {
    let d: Vec<f64> = path_energies(problem, alloc).iter().map(|e| e.sqrt()).collect();
    if d.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroSignal);
    }
    WeightVector::normalized(&d)
}

/// `max(bounds, sqrt(P / NM))`, pulled back into the budget by shrinking the
/// entries above their floors by a common factor.
pub fn initial_allocation(bounds: &[f64], budget: f64) -> Result<PowerAllocation> {
    let floor_power = check_floors(bounds, budget)?;
    let u = (budget / bounds.len() as f64).sqrt();
    let at = |s: f64| -> Vec<f64> { bounds.iter().map(|b| b.max(s * u)).collect() };
    let mut gains = at(1.0);
    if power(&gains) > budget {
        if floor_power >= budget {
            gains = bounds.to_vec();
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if power(&at(mid)) > budget {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            gains = at(lo);
        }
    }
    PowerAllocation::new(gains, bounds.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignVariant {
    /// Power allocation and weights.
    Joint,
    /// Power allocation with equal weights.
    TransmitOnly,
    /// Weights with the initial allocation.
    DetectorOnly,
    /// Initial allocation, equal weights.
    None,
    /// Initial allocation, first path only with unit weight.
    LosOnly,
}

impl DesignVariant {
    pub const ALL: [DesignVariant; 5] = [
        DesignVariant::Joint,
        DesignVariant::TransmitOnly,
        DesignVariant::DetectorOnly,
        DesignVariant::None,
        DesignVariant::LosOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DesignVariant::Joint => "joint",
            DesignVariant::TransmitOnly => "transmit-only",
            DesignVariant::DetectorOnly => "detector-only",
            DesignVariant::None => "none",
            DesignVariant::LosOnly => "los-only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|v| v.name() == s)
    }

    fn updates(self) -> (bool, bool) {
        match self {
            DesignVariant::Joint => (true, true),
            DesignVariant::TransmitOnly => (true, false),
            DesignVariant::DetectorOnly => (false, true),
            DesignVariant::None | DesignVariant::LosOnly => (false, false),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOptions {
    /// Outer loop stops when the relative deflection gain drops below this.
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Inner MM loop stops when the relative objective gain drops below this.
    pub inner_tol: f64,
    pub max_inner: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            outer_tol: 1e-6,
            max_outer: 100,
            inner_tol: 1e-10,
            max_inner: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSolution {
    pub alloc: PowerAllocation,
    pub w: WeightVector,
    /// Deflection at the start and after every outer iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub inner_iterations: usize,
}

/// Runs MM power steps at fixed `w` until the objective stalls. Returns the
/// allocation and the number of steps taken.
pub fn mm_power_loop(
    problem: &DesignProblem,
    alloc: &PowerAllocation,
    w: &WeightVector,
    opts: &DesignOptions,
) -> Result<(PowerAllocation, usize)> {
    let quad = build_quadratic(problem, w)?;
    let mut a = alloc.clone();
    let mut f = objective(&a, &quad);
    for k in 0..opts.max_inner {
        let next = mm_power_step(&a, &quad, problem.power_budget)?;
        let g = objective(&next, &quad);
        let gain = g - f;
        a = next;
        f = g;
        if gain <= opts.inner_tol * f.abs() {
            return Ok((a, k + 1));
        }
    }
    Ok((a, opts.max_inner))
}

/// Alternating maximization for `variant`, starting from `init` and equal
/// weights.
pub fn joint_design(
    problem: &DesignProblem,
    init: &PowerAllocation,
    variant: DesignVariant,
    opts: &DesignOptions,
) -> Result<JointSolution> {
    if variant == DesignVariant::LosOnly {
        let sub = problem.first_path_only();
        let w = WeightVector::equal(1);
        let f = deflection(&path_energies(&sub, init), &w);
        return Ok(JointSolution {
            alloc: init.clone(),
            w,
            objective_trace: vec![f],
            converged: true,
            inner_iterations: 0,
        });
    }
    check_floors(&problem.lower_bounds, problem.power_budget)?;
    let (do_power, do_weights) = variant.updates();
    let mut alloc = init.clone();
    let mut w = WeightVector::equal(problem.n_paths());
    let mut f = deflection(&path_energies(problem, &alloc), &w);
    let mut trace = vec![f];
    let mut converged = !(do_power || do_weights);
    let mut inner = 0;
    for _ in 0..opts.max_outer {
        if converged {
            break;
        }
        if do_power {
            let (a, k) = mm_power_loop(problem, &alloc, &w, opts)?;
            alloc = a;
            inner += k;
        }
        if do_weights {
            w = update_weights(problem, &alloc)?;
        }
        let g = deflection(&path_energies(problem, &alloc), &w);
        trace.push(g);
        converged = (g - f).abs() <= opts.outer_tol * g.abs();
        f = g;
    }
    Ok(JointSolution {
        alloc,
        w,
        objective_trace: trace,
        converged,
        inner_iterations: inner,
    })
}

/// Gain table as an `L x NM` array, for reports.
pub fn gain_table(problem: &DesignProblem) -> Array2<f64> {
    let t = problem.path_gain_table();
    let nm = problem.lower_bounds.len();
    Array2::from_shape_fn((t.len(), nm), |(l, i)| t[l][i])
}
