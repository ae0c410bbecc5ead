//! The context-conditioned graph-attention network.

mod checkpoint;
mod config;
mod layers;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{ContextBlocks, ContextMode, Geometry, ModelConfig};
pub use layers::{
    context_sequence, embed_context, feature_attention, film_conv_block, forward, graph_attention,
    temporal_attention, ContextBundle, Mode, Outputs,
};
pub use params::{param_shapes, Bound, ModelState};
