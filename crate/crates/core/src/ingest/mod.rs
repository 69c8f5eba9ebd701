//! Dataset readers, interchange formats, fallback backends and synthetic data.

pub mod fallback;
pub mod featfile;
pub mod pgm;
pub mod sequence;
pub mod synth;

pub use fallback::{fallback_geometric, fallback_saliency, HarrisParams};
pub use featfile::{read_feature_file, write_feature_file, FeatureFileError};
pub use pgm::{load_gray, read_heatmap, write_heatmap, PgmError};
pub use sequence::{read_sequence, Layout, SequenceManifest};
pub use synth::{render_sequence, synth_loop_sequence, SynthSpec};
