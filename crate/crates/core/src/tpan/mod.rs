//! Text-prototype-guided attention.
//!
//! The reduced map `F_c` is gated per channel, then per location; the learned
//! spatial map `A` pools the gated map into the image embedding. During
//! training `A` is pulled towards `A_target`, the clipped cosine between each
//! location of `F_c` and a text prototype kept per identity.

mod attention;
mod export;
mod model;
mod prototype;

pub use attention::{
    apply_channel_attention, apply_channel_attention_backward, channel_attention,
    spatial_attention, ChannelAttention, Gate, GateTrace, SpatialAttention,
};
pub use export::{map_to_csv, map_to_pgm, write_attention_maps};
pub use model::{
    tpan_forward, tpan_forward_with_target, GuideSource, ImageForward, Mode, ModelConfig,
    TpanOutput, TpsModel,
};
pub use prototype::{
    attend_pool, attend_pool_backward, guidance_loss, target_map, update_prototype, PoolTrace,
    PrototypeTable,
};

/// An `[H, W]` map of attention values.
pub type AttentionMap = crate::autodiff::Tensor;

#[cfg(test)]
mod tests;
