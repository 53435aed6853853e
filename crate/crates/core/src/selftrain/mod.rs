//! Semi-supervised training: augmentations, the supervised, self-training
//! and auxiliary MLM losses, thresholding and the epoch loop.

mod augment;
mod loss;
mod train;

pub use augment::{strong_augment, weak_augment, AugMethod, StrongAug};
pub use loss::{
    flexmatch_thresholds, mlm_aux_loss, mlm_aux_value, pseudo_labels, selftrain_loss,
    supervised_loss, total_loss, LossBreakdown, MaskedBatch, PseudoLabel, PROB_FLOOR,
};
pub use train::{
    dev_accuracy, step_loss, train_loop, train_step, write_history_csv, HistoryRow, StepGraph,
    StepInputs, TrainConfig, TrainMode, TrainOutcome, Trainer, labels_of,
};
