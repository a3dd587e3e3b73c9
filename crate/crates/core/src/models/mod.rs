//! Differentiable desk-scale models, parameter containers and optimizers.

mod conv;
mod encoder;
mod optim;
mod params;

pub use conv::{
    extractor_forward, init_waveform_params, se_forward, waveform_backward, waveform_forward,
    waveform_forward_cached, ConvCache, ExtractorConfig, WaveformObjective,
};
pub use encoder::{
    encoder_backward, encoder_forward, encoder_forward_cached, frame_features, init_encoder_params,
    retrieval_embed, Embedding, EncoderCache, EncoderConfig, FeatureExtractor, Features,
    UNIT_NORM_TOLERANCE,
};
pub use optim::{
    adam_step, central_difference, gradient, momentum_update, relative_error, AdamConfig,
    AdamState, Objective,
};
pub use params::{
    load_checkpoint, load_checkpoint_like, save_checkpoint, to_f32_precision, ParamSet, Tensor,
};
