//! Frame and clip ingestion plus the synthetic scene generator.

mod clips;
pub mod image;
mod synth;

pub use clips::{
    clip_stream, clips_from_video, frame_files, load_clips, load_video, BadFramePolicy, ClipSpec,
    ColorMode, Video,
};
pub use synth::{
    generate_synthetic, read_labels, write_labels, write_synthetic, AnomalyMode, AnomalySpan,
    ObjectShape, SyntheticSceneConfig, SyntheticVideo,
};
