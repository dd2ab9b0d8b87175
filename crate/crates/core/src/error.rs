use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("routes {first} and {second} share delay/Doppler tap ({delay_tap}, {doppler_tap})")]
    DuplicateTap {
        first: usize,
        second: usize,
        delay_tap: usize,
        doppler_tap: usize,
    },

    #[error("paths {first} and {second} are not orthogonal (overlap {overlap:.3e})")]
    NonOrthogonalPaths {
        first: usize,
        second: usize,
        overlap: f64,
    },

    #[error("{paths} paths do not fit a grid with {subcarriers} subcarriers")]
    TooManyPaths { paths: usize, subcarriers: usize },

    #[error("communication channel vanishes on subcarrier {0}")]
    ZeroChannel(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("noise-subspace energy {0:e} is too small to form the statistic")]
    DegenerateDenominator(f64),

    #[error("{n_trials} trials cannot resolve a false-alarm rate of {p_fa} (need n_trials * p_fa >= 50)")]
    InsufficientTrials { n_trials: usize, p_fa: f64 },

    #[error("SNR floors need {floor_power:e} W but the budget is {budget:e} W")]
    Infeasible { floor_power: f64, budget: f64 },

    #[error("every path carries zero signal energy")]
    ZeroSignal,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid probability {0}")]
    InvalidProbability(f64),
}
