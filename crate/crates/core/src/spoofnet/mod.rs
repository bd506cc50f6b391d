//! The two SpoofNets and the cascade that combines them.

mod cascade;
mod model_io;
mod network;

pub use cascade::{
    cascade_score, check_threshold, classify, CascadeModel, Decision, LivenessScore, DEFAULT_GATE,
    SCORE_SCALE,
};
pub use model_io::{
    decode_model, encode_model, load_model, model_digest, save_model, FORMAT_VERSION, MAGIC,
};
pub use network::{
    ConvStage, ForwardCache, Mode, NetworkParams, NetworkSpec, ParamKind, SpoofNet, StageShape,
    CONV_LAYERS,
};
