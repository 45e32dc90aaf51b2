//! End-to-end runs: dataset generation, training, evaluation and the
//! grasp demo.

pub mod dataset;
pub mod demo;
pub mod evaluate;
pub mod train;

pub use dataset::{
    generate_dataset, object_library, read_dataset, write_dataset, Dataset, DatasetConfig, FrameData, ObjectTemplate,
    SceneData, Split,
};
pub use demo::{
    find_match_in_dataset, grasp_demo, write_match_visualization, GraspDemoConfig, GraspDemoReport, MatchQuery,
};
pub use evaluate::{evaluate, sample_eval_pairs, write_eval, EvalConfig, EvalPair, EvalReport};
pub use train::{
    describe, initial_checkpoint, pair_gradients, prepare_pair, train, Ablations, StepLog, TrainConfig, TrainOutcome,
    TrainingMode, TrainingPair,
};
