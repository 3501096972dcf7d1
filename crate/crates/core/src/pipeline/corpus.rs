//! Writes a labelled synthetic corpus to disk.

use std::path::Path;

use super::manifest::{write_manifest, Manifest, ManifestEntry};
use crate::audio_io::{synthesize_scene, write_wav, PcmDepth, SceneClass};
use crate::error::{Error, Result};
use crate::rng::mix64;

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub classes: Vec<SceneClass>,
    pub clips_per_class: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
    /// Consecutive clips of a class sharing one location id.
    pub group_size: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            classes: SceneClass::ALL.to_vec(),
            clips_per_class: 4,
            duration_s: 30.0,
            sample_rate: 44100,
            seed: 0,
            group_size: 4,
        }
    }
}

/// Seed of clip `index` of `class`.
pub fn clip_seed(seed: u64, class: SceneClass, index: usize) -> u64 {
    mix64(seed ^ mix64(((class.id() as u64) << 32) | index as u64))
}

/// Renders every clip as 16-bit stereo WAV under `dir/audio` and writes
/// `dir/manifest.tsv` with paths relative to `dir`.
pub fn write_synthetic_corpus(dir: &Path, spec: &CorpusSpec) -> Result<Manifest> {
    if spec.classes.is_empty() || spec.clips_per_class == 0 || spec.group_size == 0 {
        return Err(Error::Config(
            "corpus needs at least one class, clip and group member".into(),
        ));
    }
    if !(spec.duration_s > 0.0) || spec.sample_rate == 0 {
        return Err(Error::Config(
            "duration and sample rate must be positive".into(),
        ));
    }
    let mut entries = Vec::new();
    for &class in &spec.classes {
        for i in 0..spec.clips_per_class {
            let path = format!("audio/{}_{i:03}.wav", class.slug());
            let clip = synthesize_scene(
                class,
                clip_seed(spec.seed, class, i),
                spec.duration_s,
                spec.sample_rate,
            );
            write_wav(&clip, &dir.join(&path), PcmDepth::Pcm16)?;
            entries.push(ManifestEntry {
                path,
                class,
                location: format!("{}_{}", class.slug(), i / spec.group_size),
            });
        }
    }
    let manifest = Manifest::new(entries, dir)?;
    write_manifest(&manifest, &dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
