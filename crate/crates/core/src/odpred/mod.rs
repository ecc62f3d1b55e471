//! Graph-attention OD flow prediction over a k-NN region graph, with a
//! source-trained teacher distilled into a target-city student.

mod graph;
mod model;
mod train;

pub use graph::{build_region_graph, RegionGraph};
pub use model::{
    mse_loss, pair_log_distance, schema_hash, transfer_loss, transfer_term, DistillHead, FlowHead, GatLayer, OdConfig,
    OdModelParams, PredLoss, TrainSchedule,
};
pub use train::{
    pair_split, prediction_gradients, prediction_loss, region_pair_split, teacher_targets, train_student, train_teacher, InputAdapter,
};
