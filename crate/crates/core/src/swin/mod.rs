//! Swin Transformer machinery over token grids.
//!
//! A token grid is a `(batch, Gh, Gw, D)` tensor. Window attention works on
//! `(batch * windows, w * w, D)` window sets.

mod attention;
mod block;
mod mask;
mod patch;
mod window;

pub use attention::{relative_position_index, WindowAttention};
pub use block::{SwinBlock, SwinBlockConfig, SwinStack};
pub use mask::{build_shift_mask, region_ids, MASK_NEG};
pub use patch::{patchify, unpatchify, PatchEmbed, PatchExpanding, PatchMerging};
pub use window::{cyclic_shift, cyclic_unshift, window_partition, window_reverse, WindowSet};
