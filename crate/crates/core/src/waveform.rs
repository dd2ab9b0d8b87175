//! Communication symbols, power allocation and echo synthesis.

use std::io::{Read, Write};
use std::path::Path as FsPath;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::PathChannel;
use crate::error::{Error, Result};
use crate::rng::{complex_normal, standard_complex_normal};
use crate::scene::{OfdmGrid, PathSet};

/// `N x M` matrix of communication symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub symbols: Array2<Complex64>,
}

impl SymbolFrame {
    /// All symbols equal to one.
    pub fn ones(grid: &OfdmGrid) -> Self {
        Self {
            symbols: Array2::from_elem((grid.n_subcarriers, grid.n_symbols), Complex64::new(1.0, 0.0)),
        }
    }
}

/// i.i.d. QPSK symbols `(+-1 +- j) / sqrt(2)`.
pub fn draw_symbols<R: Rng + ?Sized>(grid: &OfdmGrid, rng: &mut R) -> SymbolFrame {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let symbols = Array2::from_shape_fn((grid.n_subcarriers, grid.n_symbols), |_| {
        let bits: u8 = rng.random_range(0..4);
        let re = if bits & 1 == 0 { h } else { -h };
        let im = if bits & 2 == 0 { h } else { -h };
        Complex64::new(re, im)
    });
    SymbolFrame { symbols }
}

/// Per-subcarrier channel to the communication user.
#[derive(Debug, Clone, PartialEq)]
pub enum CommChannel {
    /// Unit gain on every subcarrier.
    Flat,
    /// i.i.d. CN(0, 1) per subcarrier.
    Rayleigh,
    Fixed(Vec<Complex64>),
}

impl CommChannel {
    pub fn realize<R: Rng + ?Sized>(&self, grid: &OfdmGrid, rng: &mut R) -> Result<Vec<Complex64>> {
        let n = grid.n_subcarriers;
        match self {
            CommChannel::Flat => Ok(vec![Complex64::new(1.0, 0.0); n]),
            CommChannel::Rayleigh => Ok((0..n).map(|_| standard_complex_normal(rng)).collect()),
            CommChannel::Fixed(h) if h.len() == n => Ok(h.clone()),
            CommChannel::Fixed(h) => Err(Error::DimensionMismatch(format!(
                "comm channel has {} taps, grid has {n} subcarriers",
                h.len()
            ))),
        }
    }
}

/// Reads `re,im` pairs, one subcarrier per line. Blank lines and `#`
/// comments are skipped.
pub fn read_comm_channel(path: &FsPath) -> anyhow::Result<Vec<Complex64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split(',').map(str::trim);
        let (re, im) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => anyhow::bail!("{}:{}: expected `re,im`", path.display(), i + 1),
        };
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), i + 1))
        };
        out.push(Complex64::new(parse(re)?, parse(im)?));
    }
    Ok(out)
}

/// Smallest amplitudes meeting the communication SNR floor on every entry,
/// indexed `m * N + n`.
pub fn comm_lower_bounds(grid: &OfdmGrid, comm_channel: &[Complex64], symbols: &SymbolFrame) -> Result<Vec<f64>> {
    let (n, m) = (grid.n_subcarriers, grid.n_symbols);
    if comm_channel.len() != n || symbols.symbols.dim() != (n, m) {
        return Err(Error::DimensionMismatch("comm channel or symbols do not match the grid".into()));
    }
    if let Some(i) = comm_channel.iter().position(|h| h.norm() == 0.0) {
        return Err(Error::ZeroChannel(i));
    }
    let num = (grid.comm_snr_target * grid.comm_noise_power).sqrt();
    let mut out = vec![0.0; n * m];
    for j in 0..m {
        for i in 0..n {
            let gain = (comm_channel[i] * symbols.symbols[[i, j]]).norm();
            if gain == 0.0 {
                return Err(Error::ZeroChannel(i));
            }
            out[j * n + i] = num / gain;
        }
    }
    Ok(out)
}

/// Diagonal of the amplification matrix, indexed `m * N + n`, with the
/// communication floors it must respect.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub gains: Vec<f64>,
    pub lower_bounds: Vec<f64>,
}

impl PowerAllocation {
    pub fn new(gains: Vec<f64>, lower_bounds: Vec<f64>) -> Result<Self> {
        if gains.len() != lower_bounds.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} gains but {} bounds",
                gains.len(),
                lower_bounds.len()
            )));
        }
        if let Some(i) = gains.iter().zip(&lower_bounds).position(|(a, b)| !(a >= b && *b >= 0.0)) {
            return Err(Error::InvalidScene(format!("gain {i} violates its floor")));
        }
        Ok(Self { gains, lower_bounds })
    }

    /// Equal amplitude `sqrt(P / NM)` everywhere, no floors.
    pub fn uniform(grid: &OfdmGrid) -> Self {
        let nm = grid.n_entries();
        Self {
            gains: vec![(grid.power_budget / nm as f64).sqrt(); nm],
            lower_bounds: vec![0.0; nm],
        }
    }

    pub fn total_power(&self) -> f64 {
        self.gains.iter().map(|a| a * a).sum()
    }

    pub fn gain(&self, n: usize, m: usize, n_subcarriers: usize) -> f64 {
        self.gains[m * n_subcarriers + n]
    }

    pub fn is_feasible(&self, budget: f64) -> bool {
        self.total_power() <= budget * (1.0 + 1e-12) + 1e-9
            && self.gains.iter().zip(&self.lower_bounds).all(|(a, b)| a >= b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hypothesis {
    H0,
    H1,
}

/// How the per-path reflectivities are drawn for a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RcsModel {
    /// One CN(0, 1) draw per path per frame, shared by all subcarriers.
    #[default]
    #[serde(rename = "swerling1")]
    SwerlingI,
    /// Independent draws per path and subcarrier.
    PerSubcarrier,
    /// Fixed amplitude `sqrt(variance)` with a uniform random phase per path.
    Steady,
}

/// Reflectivities indexed `[path][subcarrier]`.
pub fn draw_rcs<R: Rng + ?Sized>(paths: &PathSet, model: RcsModel, rng: &mut R) -> Vec<Vec<Complex64>> {
    paths
        .iter()
        .map(|p| match model {
            RcsModel::SwerlingI => {
                let xi = standard_complex_normal(rng);
                p.rcs_variance.iter().map(|v| xi * v.sqrt()).collect()
            }
            RcsModel::PerSubcarrier => p.rcs_variance.iter().map(|v| complex_normal(rng, *v)).collect(),
            RcsModel::Steady => {
                let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
                let rot = Complex64::from_polar(1.0, phase);
                p.rcs_variance.iter().map(|v| rot * v.sqrt()).collect()
            }
        })
        .collect()
}

/// One coherent processing frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoFrame {
    pub y: Array2<Complex64>,
    pub hypothesis: Hypothesis,
    /// Realized reflectivities, `[path][subcarrier]`; `None` under H0.
    pub rcs_draw: Option<Vec<Vec<Complex64>>>,
}

/// `N x M` white noise of the given variance.
pub fn draw_noise<R: Rng + ?Sized>(n: usize, m: usize, variance: f64, rng: &mut R) -> Array2<Complex64> {
    let scale = variance.sqrt();
    Array2::from_shape_fn((n, m), |_| standard_complex_normal(rng) * scale)
}

/// Target returns for given reflectivities, without noise.
pub fn echo_signal(
    channels: &[PathChannel],
    alloc: &PowerAllocation,
    symbols: &SymbolFrame,
    rcs: &[Vec<Complex64>],
) -> Result<Array2<Complex64>> {
    let (n, m) = symbols.symbols.dim();
    if channels.len() != rcs.len() || alloc.gains.len() != n * m {
        return Err(Error::DimensionMismatch("channels, reflectivities and allocation disagree".into()));
    }
    let mut y = Array2::zeros((n, m));
    for (ch, lam) in channels.iter().zip(rcs) {
        if ch.coeffs.dim() != (n, m) || lam.len() != n {
            return Err(Error::DimensionMismatch("path channel does not match the symbol frame".into()));
        }
        for ((i, j), v) in y.indexed_iter_mut() {
            *v += lam[i] * ch.coeffs[[i, j]] * alloc.gains[j * n + i] * symbols.symbols[[i, j]];
        }
    }
    Ok(y)
}

/// Draws an echo frame. Noise is drawn before the reflectivities, so H0 and
/// H1 frames on the same stream share their noise.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_echo<R: Rng + ?Sized>(
    grid: &OfdmGrid,
    paths: &PathSet,
    channels: &[PathChannel],
    alloc: &PowerAllocation,
    symbols: &SymbolFrame,
    hypothesis: Hypothesis,
    rcs_model: RcsModel,
    rng: &mut R,
) -> Result<EchoFrame> {
    let noise = draw_noise(grid.n_subcarriers, grid.n_symbols, grid.radar_noise_power, rng);
    match hypothesis {
        Hypothesis::H0 => Ok(EchoFrame {
            y: noise,
            hypothesis,
            rcs_draw: None,
        }),
        Hypothesis::H1 => {
            let rcs = draw_rcs(paths, rcs_model, rng);
            let y = echo_signal(channels, alloc, symbols, &rcs)? + noise;
            Ok(EchoFrame {
                y,
                hypothesis,
                rcs_draw: Some(rcs),
            })
        }
    }
}

/// Removes the known data symbols: `y * conj(x) / |x|^2`. Leaves white noise
/// white when the symbols have unit modulus.
pub fn compensate_symbols(y: ArrayView2<Complex64>, symbols: &SymbolFrame) -> Array2<Complex64> {
    let mut out = y.to_owned();
    out.zip_mut_with(&symbols.symbols, |v, x| *v = *v * x.conj() / x.norm_sqr());
    out
}

/// Appends one frame to a little-endian dump: `u32` N, M, L, then the frame
/// row by row as `f64` (re, im) pairs.
pub fn write_frame_dump<W: Write>(w: &mut W, y: ArrayView2<Complex64>, n_paths: usize) -> std::io::Result<()> {
    let (n, m) = y.dim();
    for v in [n, m, n_paths] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for i in 0..n {
        for j in 0..m {
            w.write_all(&y[[i, j]].re.to_le_bytes())?;
            w.write_all(&y[[i, j]].im.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads every frame of a dump as `(L, frame)` pairs.
pub fn read_frame_dump<R: Read>(r: &mut R) -> std::io::Result<Vec<(usize, Array2<Complex64>)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = || std::io::Error::new(std::io::ErrorKind::InvalidData, "truncated frame dump");
    let mut pos = 0;
    let mut take = |len: usize| -> std::io::Result<&[u8]> {
        let s = bytes.get(pos..pos + len).ok_or_else(bad)?;
        pos += len;
        Ok(s)
    };
    let mut out = Vec::new();
    loop {
        let head = match take(12) {
            Ok(h) => h,
            Err(_) => break,
        };
        let u = |i: usize| u32::from_le_bytes(head[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let (n, m, l) = (u(0), u(1), u(2));
        let body = take(16 * n * m)?;
        let f = |i: usize| f64::from_le_bytes(body[8 * i..8 * i + 8].try_into().unwrap());
        let y = Array2::from_shape_fn((n, m), |(i, j)| {
            let k = 2 * (i * m + j);
            Complex64::new(f(k), f(k + 1))
        });
        out.push((l, y));
    }
    Ok(out)
}
