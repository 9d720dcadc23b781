pub mod bn_adapt;
pub mod config;
pub mod dataset;
pub mod selftrain;
pub mod step1;

pub use bn_adapt::{adapt_bn, BnAdaptReport};
pub use config::{BnAdaptConfig, BnAdaptMethod, SelfTrainConfig, TrainConfig, TrainMode};
pub use dataset::{FrameSet, PreparedFrame};
pub use selftrain::{confident_pseudo_labels, self_train, self_train_with, SelfTrainReport};
pub use step1::{
    trace_to_csv, train_min_ent, train_mixed_bn, train_source_only, train_step1,
    train_step1_with, TraceRow, TrainReport,
};
