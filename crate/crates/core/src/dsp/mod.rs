//! Short-time Fourier analysis and the multi-resolution STFT training objective.

mod loss;
mod stft;

pub use loss::{
    extractor_objective, log_magnitude_loss, multi_res_stft_loss, spectral_convergence,
    time_domain_l1, MultiResConfig, MultiResLoss, DEFAULT_LOG_FLOOR,
};
pub use stft::{hann_window, stft, Spectrogram, StftConfig, StftPlan};
