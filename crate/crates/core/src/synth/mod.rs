//! Training corpus synthesis: watermark assets, compositing, noise
//! injection, self-supervised pairing and manifest persistence.

mod assets;
mod composite;
mod corpus;
mod font;
mod sample;
mod scenes;

pub use assets::{builtin_assets, load_assets, save_assets, WatermarkAsset};
pub use composite::{add_gaussian_noise, composite_watermark, footprint_for, CorruptionSpec};
pub use corpus::{
    build_corpus, build_corpus_from, list_pngs, load_clean_images, CorpusConfig, Manifest, ManifestRecord,
    SamplePaths, Split, TrainMode,
};
pub use font::render_text;
pub use sample::{
    draw_spec, finish_sample, make_sample, redraw_from_watermarked, CleanAccessCounter, CorruptionRanges,
    PairingMode, SamplePair,
};
pub use scenes::{procedural_scene, procedural_scenes};
