//! Partial scene text retrieval on synthetic scenes.
//!
//! Queries are strings; scenes hold text lines with polygons and per-character
//! widths. Both are encoded as `T x C` sequence features and compared by the
//! cosine of their `tanh`. Lines are searched for partial matches either with
//! sliding-window bags or with a monotone dynamic program over per-row
//! similarities.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod featsim;
pub mod geometry;
pub mod learning;
pub mod mil;
pub mod retrieval;
pub mod tensor;
pub mod textsim;

pub use corpus::{
    generate_corpus, is_relevant, load_corpus, queries_path_for, save_corpus, CorpusConfig, QueryKind, QuerySet, Scene,
    TextLine,
};
pub use encoder::{
    encode_query, encode_scene_span, load_checkpoint, save_checkpoint, ModelConfig, ModelParams, SequenceFeature,
};
pub use error::{Error, Result};
pub use featsim::{dpma, partial_similarity, sim_f, DpmaResult, SimilarityGrid};
pub use geometry::{slice_window, tpga_resample, BoundaryPolygon};
pub use learning::{train, GradcheckReport, LossReport, Strategy, TrainConfig};
pub use mil::{construct_bag, Bag};
pub use retrieval::{evaluate, BagPolicy, EvalOptions, Matcher, RetrievalReport, Task};
pub use tensor::Matrix;
pub use textsim::{edit_distance, sim_t};
