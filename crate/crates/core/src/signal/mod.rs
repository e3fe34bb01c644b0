//! IQ signal synthesis: modulation, channel impairments, and frame
//! normalization.

pub mod channel;
pub mod frame;
pub mod modulate;

pub use channel::{apply_channel, ChannelSpec, Fading};
pub use frame::{to_real_frame, IQFrame};
pub use modulate::{constellation, modulate, Scheme};
