//! Dense reference computations. They form every matrix explicitly and use
//! LAPACK SVD pseudo-inverses, so they are slow. Tests check the fast paths
//! against them.

use ndarray::{Array1, Array2, ArrayView2};
use ndarray_linalg::SVD;
use num_complex::Complex64;
use rand::Rng;

use crate::channel::{path_coeffs, PathChannel};
use crate::rng::{self, Purpose};
use crate::scene::{OfdmGrid, Path, PathSet};
use crate::waveform::{PowerAllocation, SymbolFrame};

/// Singular values below this fraction of the largest are treated as zero.
const PINV_RTOL: f64 = 1e-10;

fn adjoint(a: &Array2<Complex64>) -> Array2<Complex64> {
    a.t().mapv(|v| v.conj())
}

fn frob2(a: &Array2<Complex64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

fn diag(v: impl ExactSizeIterator<Item = Complex64>) -> Array2<Complex64> {
    let v: Array1<Complex64> = v.collect();
    Array2::from_diag(&v)
}

/// Moore-Penrose pseudo-inverse `V S^+ U^H`.
pub fn pinv(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (u, s, vt) = a.svd(true, true).expect("LAPACK SVD");
    let (u, vt) = (u.expect("U requested"), vt.expect("V^T requested"));
    let cutoff = PINV_RTOL * s.iter().cloned().fold(0.0, f64::max);
    let (r, c) = a.dim();
    let mut out = Array2::<Complex64>::zeros((c, r));
    for (k, &sk) in s.iter().enumerate() {
        if sk <= cutoff || sk == 0.0 {
            continue;
        }
        for i in 0..c {
            let v = vt[[k, i]].conj() / sk;
            for j in 0..r {
                out[[i, j]] += v * u[[j, k]].conj();
            }
        }
    }
    out
}

/// `H (H^H H)^+ H^H` with `H` the path's `N x M` coefficient matrix.
pub fn pinv_signal_projector(path: &Path, grid: &OfdmGrid) -> Array2<Complex64> {
    let h = path_coeffs(path, grid).coeffs;
    let hh = adjoint(&h);
    h.dot(&pinv(&hh.dot(&h))).dot(&hh)
}

/// `H_l = [diag(h_1), ..., diag(h_M)]`, `N x NM`, with optional per-subcarrier
/// amplitude scaling.
fn stacked_channel(ch: &PathChannel, scale: Option<&[f64]>) -> Array2<Complex64> {
    let (n, m) = ch.coeffs.dim();
    let mut h = Array2::zeros((n, n * m));
    for j in 0..m {
        for i in 0..n {
            let s = scale.map_or(1.0, |s| s[i]);
            h[[i, j * n + i]] = ch.coeffs[[i, j]] * s;
        }
    }
    h
}

/// `X = blkdiag(x_1, ..., x_M)`, `NM x M`.
fn symbol_matrix(symbols: &SymbolFrame) -> Array2<Complex64> {
    let (n, m) = symbols.symbols.dim();
    let mut x = Array2::zeros((n * m, m));
    for j in 0..m {
        for i in 0..n {
            x[[j * n + i, j]] = symbols.symbols[[i, j]];
        }
    }
    x
}

/// `H_l A X` formed by dense products.
pub fn dense_hax(ch: &PathChannel, alloc: &PowerAllocation, symbols: &SymbolFrame, scale: Option<&[f64]>) -> Array2<Complex64> {
    let a = diag(alloc.gains.iter().map(|g| Complex64::new(*g, 0.0)));
    stacked_channel(ch, scale).dot(&a).dot(&symbol_matrix(symbols))
}

/// GLRT ratio `||Y||^2 / ||Y - sum_l Lambda_l H_l A X||^2` with
/// `Lambda_l = P_{s,l} Y (H_l A X)^+`.
///
/// The fitted term reduces to `P_{s,l} Y` whenever `H_l A X` has full column
/// rank, which generic symbols give for `N >= M`.
pub fn glrt_statistic_mle_oracle(
    y: ArrayView2<Complex64>,
    paths: &PathSet,
    grid: &OfdmGrid,
    alloc: &PowerAllocation,
    symbols: &SymbolFrame,
) -> f64 {
    let y = y.to_owned();
    let mut fitted = Array2::<Complex64>::zeros(y.dim());
    for p in paths.iter() {
        let proj = pinv_signal_projector(p, grid);
        let b = dense_hax(&path_coeffs(p, grid), alloc, symbols, None);
        let lambda = proj.dot(&y).dot(&pinv(&b));
        fitted += &lambda.dot(&b);
    }
    frob2(&y) / frob2(&(&y - &fitted))
}

/// `R = sum_{l,m} w_l^2 diag(s_m^H) H_l^H H_l diag(s_m)` with
/// `s_m = e_m (x) x_m`. `gain[l][n]` scales `|h_{n,m,l}|^2`.
pub fn dense_quadratic(channels: &[PathChannel], symbols: &SymbolFrame, w2: &[f64], gain: &[Vec<f64>]) -> Array2<Complex64> {
    let (n, m) = symbols.symbols.dim();
    let nm = n * m;
    let mut r = Array2::<Complex64>::zeros((nm, nm));
    for ((ch, wl), g) in channels.iter().zip(w2).zip(gain) {
        let amp: Vec<f64> = g.iter().map(|v| v.sqrt()).collect();
        let h = stacked_channel(ch, Some(&amp));
        let hh = adjoint(&h).dot(&h);
        for j in 0..m {
            let ds = diag((0..nm).map(|k| {
                if k / n == j {
                    symbols.symbols[[k % n, j]]
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }));
            r += &(adjoint(&ds).dot(&hh).dot(&ds) * Complex64::new(*wl, 0.0));
        }
    }
    r
}

/// `sum_l w_l^2 ||H_l A X||_F^2` from explicit matrix products.
pub fn direct_objective(
    channels: &[PathChannel],
    alloc: &PowerAllocation,
    symbols: &SymbolFrame,
    w2: &[f64],
    gain: &[Vec<f64>],
) -> f64 {
    channels
        .iter()
        .zip(w2)
        .zip(gain)
        .map(|((ch, wl), g)| {
            let amp: Vec<f64> = g.iter().map(|v| v.sqrt()).collect();
            wl * frob2(&dense_hax(ch, alloc, symbols, Some(&amp)))
        })
        .sum()
}

/// `L` paths with distinct Doppler taps, random delay taps and random complex
/// losses, drawn from the oracle stream `seed`.
pub fn random_path_set(grid: &OfdmGrid, l: usize, seed: u64) -> PathSet {
    let mut rng = rng::stream(seed, Purpose::Oracle, 1);
    let mut taps: Vec<usize> = (0..grid.n_symbols).collect();
    for i in 0..l {
        let j = rng.random_range(i..taps.len());
        taps.swap(i, j);
    }
    let paths = taps[..l]
        .iter()
        .map(|&r| {
            let k = rng.random_range(0..grid.n_subcarriers);
            let beta = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            Path::flat(k, r, beta, 1.0, grid.n_subcarriers).expect("valid path")
        })
        .collect();
    PathSet::new(paths).expect("distinct Doppler taps")
}
