//! Redundancy-reduction pretraining: encoders, projector, objective and the
//! LARS training loop.

pub mod config;
pub mod encoder;
pub mod objective;
pub mod pretrain;
pub mod projector;

pub use config::BTConfig;
pub use encoder::{encoder_registry, Encoder, EncoderFamily, EncoderInit, EncoderSpec};
pub use objective::{bt_forward_backward, bt_loss, cross_correlation, standardize, CrossCorrelation, EmbeddingBatch, LossTerms};
pub use pretrain::{pretrain, pretrain_with, EpochRecord, PretrainOutcome};
pub use projector::{projector_forward, Projector};

/// One LARS update over a parameter list (see [`pathbt_nn::optim::Lars`]).
pub fn lars_step(
    params: &mut [&mut pathbt_nn::Param],
    lr_weights: f64,
    lr_biases: f64,
    weight_decay: f64,
    momentum: f64,
    eta: f64,
    state: &mut Option<pathbt_nn::optim::Lars>,
) -> crate::Result<()> {
    let opt = state.get_or_insert_with(|| pathbt_nn::optim::Lars::new(momentum, weight_decay, eta));
    opt.step_params(params, lr_weights, lr_biases)?;
    Ok(())
}
