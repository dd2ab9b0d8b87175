//! Time-frequency path coefficients and the rank-one projectors built from
//! them.
//!
//! With `n` counting time slots and `m` counting frequency bins,
//! `h[n, m] = beta * exp(j 2pi nu n T) * exp(-j 2pi (nu + m df) tau)`. The
//! `n`-dependence comes from the Doppler tap alone, so every column of a path's
//! coefficient matrix is a multiple of the same steering vector.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::scene::{OfdmGrid, Path, PathSet};

/// Largest `|u_a^H u_b|` tolerated between distinct paths.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

/// `exp(j 2pi num / den)` with the numerator reduced first so the phase is
/// exact for integer tap arithmetic.
fn unit_phase(num: i64, den: i64) -> Complex64 {
    let reduced = num.rem_euclid(den);
    Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * reduced as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathChannel {
    /// `N x M`, indexed `[n - 1, m - 1]`.
    pub coeffs: Array2<Complex64>,
    /// Unit-norm length-N vector spanning every column of `coeffs`.
    pub steering: Array1<Complex64>,
}

/// Unit steering vector for Doppler tap `r`: `exp(j 2pi r n / M) / sqrt(N)`, `n = 1..N`.
pub fn steering_vector(doppler_tap: usize, grid: &OfdmGrid) -> Array1<Complex64> {
    let (n, m) = (grid.n_subcarriers as i64, grid.n_symbols as i64);
    let scale = 1.0 / (n as f64).sqrt();
    Array1::from_iter((1..=n).map(|i| unit_phase(doppler_tap as i64 * i, m) * scale))
}

pub fn path_coeffs(path: &Path, grid: &OfdmGrid) -> PathChannel {
    let (n, m) = (grid.n_subcarriers as i64, grid.n_symbols as i64);
    let (k, r) = (path.delay_tap as i64, path.doppler_tap as i64);
    // r n / M - r k / (M N) - m k / N, all over the common denominator M N.
    let coeffs = Array2::from_shape_fn((n as usize, m as usize), |(i, j)| {
        let (ni, mi) = (i as i64 + 1, j as i64 + 1);
        path.path_loss * unit_phase(r * ni * n - r * k - mi * k * m, m * n)
    });
    PathChannel {
        coeffs,
        steering: steering_vector(path.doppler_tap, grid),
    }
}

pub fn path_channels(paths: &PathSet, grid: &OfdmGrid) -> Vec<PathChannel> {
    paths.iter().map(|p| path_coeffs(p, grid)).collect()
}

/// Per-path signal-subspace energies of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionEnergies {
    /// `||P_{s,l} Y||_F^2` for each path.
    pub signal: Vec<f64>,
    /// `||P_n Y||_F^2`.
    pub noise: f64,
    /// `||Y||_F^2`.
    pub total: f64,
}

/// Orthogonal rank-one signal projectors `u_l u_l^H` and their complement,
/// held as the steering vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorSet {
    steering: Vec<Array1<Complex64>>,
    n: usize,
}

impl ProjectorSet {
    /// Wraps steering vectors without checks; `build_projectors` is the
    /// validated entry point.
    pub fn from_steering(steering: Vec<Array1<Complex64>>, n: usize) -> Self {
        Self { steering, n }
    }

    pub fn len(&self) -> usize {
        self.steering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steering.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn steering(&self) -> &[Array1<Complex64>] {
        &self.steering
    }

    /// `u_l^H Y`, one coefficient per column.
    fn coefficients(&self, l: usize, y: ArrayView2<Complex64>) -> Array1<Complex64> {
        let u = &self.steering[l];
        Array1::from_iter(y.axis_iter(Axis(1)).map(|col| {
            col.iter().zip(u.iter()).map(|(a, b)| b.conj() * a).sum::<Complex64>()
        }))
    }

    fn check_rows(&self, y: ArrayView2<Complex64>) -> Result<()> {
        if y.nrows() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "frame has {} rows, projectors act on {}",
                y.nrows(),
                self.n
            )));
        }
        Ok(())
    }

    pub fn apply_signal(&self, l: usize, y: ArrayView2<Complex64>) -> Result<Array2<Complex64>> {
        self.check_rows(y)?;
        let c = self.coefficients(l, y);
        let u = &self.steering[l];
        Ok(Array2::from_shape_fn(y.dim(), |(i, j)| u[i] * c[j]))
    }

    pub fn apply_noise(&self, y: ArrayView2<Complex64>) -> Result<Array2<Complex64>> {
        self.check_rows(y)?;
        let mut out = y.to_owned();
        for l in 0..self.len() {
            let c = self.coefficients(l, y);
            let u = &self.steering[l];
            for ((i, j), v) in out.indexed_iter_mut() {
                *v -= u[i] * c[j];
            }
        }
        Ok(out)
    }

    /// Signal energies from the steering inner products and the noise energy
    /// from the explicit residual.
    pub fn energies(&self, y: ArrayView2<Complex64>) -> Result<ProjectionEnergies> {
        self.check_rows(y)?;
        let mut residual = y.to_owned();
        let mut signal = Vec::with_capacity(self.len());
        for l in 0..self.len() {
            let c = self.coefficients(l, y);
            signal.push(c.iter().map(|v| v.norm_sqr()).sum());
            let u = &self.steering[l];
            for ((i, j), v) in residual.indexed_iter_mut() {
                *v -= u[i] * c[j];
            }
        }
        Ok(ProjectionEnergies {
            signal,
            noise: residual.iter().map(|v| v.norm_sqr()).sum(),
            total: y.iter().map(|v| v.norm_sqr()).sum(),
        })
    }

    pub fn dense_signal(&self, l: usize) -> Array2<Complex64> {
        let u = &self.steering[l];
        Array2::from_shape_fn((self.n, self.n), |(i, j)| u[i] * u[j].conj())
    }

    pub fn dense_noise(&self) -> Array2<Complex64> {
        let mut p = Array2::from_shape_fn((self.n, self.n), |(i, j)| {
            if i == j {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        for l in 0..self.len() {
            p -= &self.dense_signal(l);
        }
        p
    }
}

/// Builds the projector set and verifies pairwise orthogonality numerically.
pub fn build_projectors(paths: &PathSet, grid: &OfdmGrid) -> Result<ProjectorSet> {
    if paths.is_empty() {
        return Err(Error::InvalidScene("no paths".into()));
    }
    if paths.len() >= grid.n_subcarriers {
        return Err(Error::TooManyPaths {
            paths: paths.len(),
            subcarriers: grid.n_subcarriers,
        });
    }
    paths.check_grid(grid)?;
    let steering: Vec<_> = paths.iter().map(|p| steering_vector(p.doppler_tap, grid)).collect();
    for a in 0..steering.len() {
        for b in a + 1..steering.len() {
            // ||u_a u_a^H u_b u_b^H||_F = |u_a^H u_b| for unit vectors.
            let overlap = steering[a]
                .iter()
                .zip(steering[b].iter())
                .map(|(x, y)| x.conj() * y)
                .sum::<Complex64>()
                .norm();
            if overlap > ORTHOGONALITY_TOL {
                return Err(Error::NonOrthogonalPaths {
                    first: a,
                    second: b,
                    overlap,
                });
            }
        }
    }
    Ok(ProjectorSet {
        steering,
        n: grid.n_subcarriers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use crate::rng::{self, Purpose};
    use proptest::prelude::*;

    fn grid(n: usize, m: usize) -> OfdmGrid {
        OfdmGrid::table_one(n, m).unwrap()
    }

    fn frob(a: &Array2<Complex64>) -> f64 {
        a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    fn random_frame(n: usize, m: usize, seed: u64) -> Array2<Complex64> {
        let mut r = rng::stream(seed, Purpose::Oracle, 0);
        Array2::from_shape_fn((n, m), |_| rng::standard_complex_normal(&mut r))
    }

    #[test]
    fn zero_taps_give_all_ones() {
        let g = grid(8, 8);
        let p = Path::flat(0, 0, Complex64::new(1.0, 0.0), 1.0, 8).unwrap();
        let ch = path_coeffs(&p, &g);
        assert!(ch.coeffs.iter().all(|v| (*v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let s = 1.0 / 8f64.sqrt();
        assert!(ch.steering.iter().all(|v| (*v - Complex64::new(s, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn hand_evaluated_entry() {
        let g = grid(4, 4);
        let p = Path::flat(1, 1, Complex64::new(1.0, 0.0), 1.0, 4).unwrap();
        let ch = path_coeffs(&p, &g);
        let (t, df) = (g.symbol_duration, g.subcarrier_spacing);
        let nu = 1.0 / (4.0 * t);
        let tau = 1.0 / (4.0 * df);
        let (n, m) = (2.0, 3.0);
        let two_pi = 2.0 * std::f64::consts::PI;
        let expect = Complex64::from_polar(1.0, two_pi * nu * n * t) * Complex64::from_polar(1.0, -two_pi * (nu + m * df) * tau);
        assert!((ch.coeffs[[1, 2]] - expect).norm() < 1e-12);
    }

    #[test]
    fn single_zero_doppler_projector() {
        let g = grid(8, 8);
        let ps = PathSet::new(vec![Path::flat(3, 0, Complex64::new(0.5, 0.2), 1.0, 8).unwrap()]).unwrap();
        let pr = build_projectors(&ps, &g).unwrap();
        let s = pr.dense_signal(0);
        assert!(s.iter().all(|v| (*v - Complex64::new(0.125, 0.0)).norm() < 1e-15));
        let n = pr.dense_noise();
        for ((i, j), v) in n.indexed_iter() {
            let e = if i == j { 1.0 - 0.125 } else { -0.125 };
            assert!((*v - Complex64::new(e, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn distinct_doppler_orthogonal() {
        let g = grid(8, 8);
        let ps = PathSet::new(vec![
            Path::flat(2, 1, Complex64::new(1.0, 0.0), 1.0, 8).unwrap(),
            Path::flat(5, 3, Complex64::new(1.0, 0.0), 1.0, 8).unwrap(),
        ])
        .unwrap();
        let pr = build_projectors(&ps, &g).unwrap();
        let prod = pr.dense_signal(0).dot(&pr.dense_signal(1));
        assert!(frob(&prod) < 1e-12);
    }

    #[test]
    fn shared_doppler_rejected() {
        let g = grid(8, 8);
        let ps = PathSet::new(vec![
            Path::flat(0, 2, Complex64::new(1.0, 0.0), 1.0, 8).unwrap(),
            Path::flat(4, 2, Complex64::new(1.0, 0.0), 1.0, 8).unwrap(),
        ])
        .unwrap();
        assert!(matches!(build_projectors(&ps, &g), Err(Error::NonOrthogonalPaths { .. })));
    }

    #[test]
    fn too_many_paths_rejected() {
        let g = grid(4, 8);
        let ps = PathSet::new((0..4).map(|r| Path::flat(0, r, Complex64::new(1.0, 0.0), 1.0, 4).unwrap()).collect()).unwrap();
        assert!(matches!(build_projectors(&ps, &g), Err(Error::TooManyPaths { .. })));
    }

    #[test]
    fn non_square_grid_checked_numerically() {
        // M = 4 divides N = 8: distinct taps stay orthogonal.
        let g = grid(8, 4);
        let ps = PathSet::new(vec![
            Path::flat(0, 1, Complex64::new(1.0, 0.0), 1.0, 8).unwrap(),
            Path::flat(0, 3, Complex64::new(1.0, 0.0), 1.0, 8).unwrap(),
        ])
        .unwrap();
        assert!(build_projectors(&ps, &g).is_ok());
        // M = 8 does not divide N = 4: taps 1 and 2 overlap.
        let g = grid(4, 8);
        let ps = PathSet::new(vec![
            Path::flat(0, 1, Complex64::new(1.0, 0.0), 1.0, 4).unwrap(),
            Path::flat(0, 2, Complex64::new(1.0, 0.0), 1.0, 4).unwrap(),
        ])
        .unwrap();
        assert!(matches!(build_projectors(&ps, &g), Err(Error::NonOrthogonalPaths { .. })));
    }

    #[test]
    fn fast_matches_dense_pseudo_inverse() {
        let g = grid(8, 8);
        for seed in 0..20u64 {
            let ps = reference::random_path_set(&g, 1 + (seed as usize % 4), seed);
            let pr = build_projectors(&ps, &g).unwrap();
            for (l, p) in ps.iter().enumerate() {
                let dense = reference::pinv_signal_projector(p, &g);
                let diff = &pr.dense_signal(l) - &dense;
                assert!(frob(&diff) < 1e-10, "seed {seed} path {l}");
            }
        }
    }

    proptest! {
        #[test]
        fn columns_are_multiples_of_steering(k in 0usize..16, r in 0usize..16, br in -3.0..3.0f64, bi in -3.0..3.0f64) {
            let g = grid(16, 16);
            let beta = Complex64::new(br, bi);
            let ch = path_coeffs(&Path::flat(k, r, beta, 1.0, 16).unwrap(), &g);
            for v in ch.coeffs.iter() {
                prop_assert!((v.norm() - beta.norm()).abs() <= 1e-12 * beta.norm().max(1.0));
            }
            let unorm: f64 = ch.steering.iter().map(|v| v.norm_sqr()).sum();
            prop_assert!((unorm - 1.0).abs() < 1e-12);
            for col in ch.coeffs.axis_iter(Axis(1)) {
                let c: Complex64 = col.iter().zip(ch.steering.iter()).map(|(a, u)| u.conj() * a).sum();
                for (a, u) in col.iter().zip(ch.steering.iter()) {
                    prop_assert!((a - c * u).norm() < 1e-10 * beta.norm().max(1.0));
                }
            }
        }

        #[test]
        fn pythagoras_and_fast_application(seed in 0u64..1000, l in 1usize..5) {
            let g = grid(16, 16);
            let ps = reference::random_path_set(&g, l, seed);
            let pr = build_projectors(&ps, &g).unwrap();
            let y = random_frame(16, 16, seed);
            let e = pr.energies(y.view()).unwrap();
            let sum = e.signal.iter().sum::<f64>() + e.noise;
            prop_assert!((sum - e.total).abs() <= 1e-9 * e.total);
            for i in 0..l {
                let fast = pr.apply_signal(i, y.view()).unwrap();
                let dense = pr.dense_signal(i).dot(&y);
                prop_assert!(frob(&(&fast - &dense)) < 1e-10);
            }
            let fast = pr.apply_noise(y.view()).unwrap();
            let dense = pr.dense_noise().dot(&y);
            prop_assert!(frob(&(&fast - &dense)) < 1e-10);
        }
    }
}
