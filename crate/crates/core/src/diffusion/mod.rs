//! Noise schedules, forward diffusion, denoiser training and the DDPM/DDIM
//! samplers, including the deterministic η = 0 generator used for design.

mod forward;
mod sampler;
mod schedule;
mod train;

pub use forward::{
    eps_on_tape, forward_sample, forward_step, predict_eps, standard_normal, training_loss, training_loss_with,
};
pub use sampler::{
    ddim_generate, ddim_sample, ddim_update, ddpm_step, ddpm_update, generate, generator_vjp,
    DdimPlan, Spacing, Trajectory,
};
pub use schedule::NoiseSchedule;
pub use train::{train, train_from, LrSchedule, Optimizer, TrainOptions, TrainReport};
