use super::config::ChannelMode;
use super::manifest::Manifest;
use crate::audio_io::{read_wav, SceneClass};
use crate::error::Result;
use crate::features::{
    extract_patches, hex_digest, FeatureCache, FeatureConfig, FeatureExtractor, LogMelTensor,
};
use crate::fsutil;

/// Patches of one clip, restricted to the active channels and not yet normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipData {
    pub path: String,
    pub class: SceneClass,
    pub patches: Vec<LogMelTensor<f32>>,
}

/// Features for every clip of a manifest, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub clips: Vec<ClipData>,
    pub channel_mode: ChannelMode,
    pub features: FeatureConfig,
}

/// Left/right/mean log-mel tensor of a whole clip, via the cache when given.
/// Cache entries are keyed by the WAV content, so edited clips miss.
pub fn clip_features(
    path: &std::path::Path,
    extractor: &FeatureExtractor<f32>,
    cache: Option<&FeatureCache>,
) -> Result<LogMelTensor<f32>> {
    let compute = || extractor.clip_log_mel(&read_wav(path)?);
    match cache {
        None => compute(),
        Some(cache) => {
            let key = hex_digest(&fsutil::read(path)?);
            cache.get_or_compute(&key, compute)
        }
    }
}

pub fn load_dataset(
    manifest: &Manifest,
    features: &FeatureConfig,
    channel_mode: ChannelMode,
    cache: Option<&FeatureCache>,
) -> Result<Dataset> {
    let extractor = FeatureExtractor::<f32>::new(features.clone())?;
    let clips = manifest
        .entries()
        .iter()
        .map(|e| {
            let full = clip_features(&manifest.resolve(e), &extractor, cache)?;
            let selected = channel_mode.select(&full)?;
            Ok(ClipData {
                path: e.path.clone(),
                class: e.class,
                patches: extract_patches(&selected, features.patch_frames)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        clips,
        channel_mode,
        features: features.clone(),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn patch_count(&self) -> usize {
        self.clips.iter().map(|c| c.patches.len()).sum()
    }
}
