//! Audio clips, scene labels, WAV I/O and the synthetic scene corpus.

mod synth;
mod wav;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synth::{synthesize_scene, SceneRecipe};
pub use wav::{read_wav, wav_bytes, write_wav, PcmDepth, WavFormat};

/// Multi-channel PCM signal. Channel 0 is left.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f32>>,
    sample_rate: u32,
}

impl AudioClip {
    /// Validates channel count (1 or 2), equal channel lengths, a positive
    /// sample rate and finite samples in `[-1, 1]`.
    pub fn new(channels: Vec<Vec<f32>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() || channels.len() > 2 {
            return Err(Error::UnsupportedFormat(format!(
                "{} channels (expected 1 or 2)",
                channels.len()
            )));
        }
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::shape(
                "audio channels",
                len,
                channels.iter().map(Vec::len).collect::<Vec<_>>(),
            ));
        }
        for (ci, ch) in channels.iter().enumerate() {
            if let Some(i) = ch.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
                return Err(Error::NonFinite(format!(
                    "channel {ci} sample {i} = {} (must be finite and within [-1, 1])",
                    ch[i]
                )));
            }
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn stereo(left: Vec<f32>, right: Vec<f32>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![left, right], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, i: usize) -> &[f32] {
        &self.channels[i]
    }

    pub fn channels(&self) -> &[Vec<f32>] {
        &self.channels
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Same clip with left and right exchanged.
    pub fn swapped(&self) -> Self {
        let mut channels = self.channels.clone();
        channels.reverse();
        Self {
            channels,
            sample_rate: self.sample_rate,
        }
    }
}

/// Number of acoustic scene classes.
pub const NUM_CLASSES: usize = 15;

const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "bus",
    "cafe/restaurant",
    "car",
    "city_center",
    "forest_path",
    "grocery_store",
    "home",
    "beach",
    "library",
    "metro_station",
    "office",
    "residential_area",
    "train",
    "tram",
    "park",
];

/// One of the fifteen scene labels; ids follow the order of [`SceneClass::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SceneClass(u8);

impl SceneClass {
    pub const ALL: [SceneClass; NUM_CLASSES] = {
        let mut all = [SceneClass(0); NUM_CLASSES];
        let mut i = 0;
        while i < NUM_CLASSES {
            all[i] = SceneClass(i as u8);
            i += 1;
        }
        all
    };

    pub fn from_id(id: usize) -> Option<Self> {
        (id < NUM_CLASSES).then_some(SceneClass(id as u8))
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.id()]
    }

    /// Name usable as a single path component.
    pub fn slug(self) -> String {
        self.name().replace('/', "-")
    }

    /// Accepts the canonical name, its slug, spaces for underscores, and the
    /// long forms "lakeside beach" / "urban park".
    pub fn from_name(name: &str) -> Option<Self> {
        let norm = name.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        let norm = match norm.as_str() {
            "cafe_restaurant" | "cafe/restaurant" => "cafe/restaurant",
            "lakeside_beach" => "beach",
            "urban_park" => "park",
            other => other,
        };
        CLASS_NAMES
            .iter()
            .position(|n| *n == norm)
            .map(|i| SceneClass(i as u8))
    }
}

impl fmt::Display for SceneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneClass::from_name(s).ok_or_else(|| Error::Parse(format!("unknown scene class `{s}`")))
    }
}

impl TryFrom<String> for SceneClass {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SceneClass> for String {
    fn from(c: SceneClass) -> String {
        c.name().to_string()
    }
}
