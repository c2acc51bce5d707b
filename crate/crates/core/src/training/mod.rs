//! Training examples, losses and the optimization loop.

pub mod config;
pub mod losses;
pub mod masking;
pub mod optim;
pub mod trainer;

pub use config::TrainingConfig;
pub use losses::{
    example_loss, loss_len, loss_mlm, loss_total, loss_vis, ExamplePlan, ExampleTarget, LossParts, LossScale,
};
pub use masking::{build_visual_target, mask_count_for, sample_mask, visual_word_table, MaskedExample};
pub use optim::AdamW;
pub use trainer::{fit_model_config, greedy_caption, optimizer_path, EpochLog, Trainer};
