//! Three-channel log-mel features: left, right and their mean, framed with a
//! periodic Hann window, projected on an HTK mel filterbank, log-compressed
//! and cut into fixed-width patches.

mod cache;
mod fft;
mod mel;
mod norm;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::Matrix;
use crate::audio_io::AudioClip;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use cache::{cache_path, load_cached, store_cached, FeatureCache};
pub use fft::{hann_window, power_spectrum, Fft};
pub use mel::{hz_to_mel, log_mel, mel_to_hz, MelFilterbank};
pub use norm::{compute_norm_stats, normalize, NormStats, STD_FLOOR};

/// Feature channels in tensor order.
pub const FEATURE_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window_s: f64,
    pub hop_s: f64,
    /// Defaults to the next power of two at or above the window length.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fft_size: Option<usize>,
    pub n_mels: usize,
    pub fmin: f64,
    /// Defaults to the Nyquist frequency.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fmax: Option<f64>,
    pub log_floor: f64,
    pub patch_frames: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self::new(44100)
    }
}

impl FeatureConfig {
    pub fn new(sample_rate: u32) -> Self {
        Self {
            sample_rate,
            window_s: 0.025,
            hop_s: 0.025,
            fft_size: None,
            n_mels: 128,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
            patch_frames: 128,
        }
    }

    fn seconds_to_samples(&self, s: f64) -> usize {
        // tolerate representation error in products like 0.025 * 16000
        (s * self.sample_rate as f64 + 1e-9).floor() as usize
    }

    pub fn window_len(&self) -> usize {
        self.seconds_to_samples(self.window_s)
    }

    pub fn hop_len(&self) -> usize {
        self.seconds_to_samples(self.hop_s)
    }

    pub fn fft_len(&self) -> usize {
        self.fft_size
            .unwrap_or_else(|| self.window_len().max(1).next_power_of_two())
    }

    pub fn fmax_hz(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.window_len() == 0 || self.hop_len() == 0 {
            return bad(format!(
                "window ({} s) and hop ({} s) must span at least one sample",
                self.window_s, self.hop_s
            ));
        }
        let fft = self.fft_len();
        if !fft.is_power_of_two() || fft < self.window_len() {
            return bad(format!(
                "fft_size {fft} must be a power of two >= window length {}",
                self.window_len()
            ));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax_hz() && self.fmax_hz() <= nyquist) {
            return bad(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= {nyquist}",
                self.fmin,
                self.fmax_hz()
            ));
        }
        if self.n_mels == 0 || self.patch_frames == 0 {
            return bad("n_mels and patch_frames must be at least 1".into());
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }

    /// Hex SHA-256 over every resolved field.
    pub fn fingerprint(&self) -> String {
        let canon = format!(
            "features/v1;sr={};win={};hop={};fft={};mels={};fmin={:?};fmax={:?};floor={:?};patch={}",
            self.sample_rate,
            self.window_len(),
            self.hop_len(),
            self.fft_len(),
            self.n_mels,
            self.fmin,
            self.fmax_hz(),
            self.log_floor,
            self.patch_frames
        );
        hex_digest(canon.as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Left, right and mean signals of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet<T> {
    pub left: Vec<T>,
    pub right: Vec<T>,
    pub mean: Vec<T>,
}

impl<T: Scalar> ChannelSet<T> {
    pub fn as_array(&self) -> [&[T]; FEATURE_CHANNELS] {
        [&self.left, &self.right, &self.mean]
    }
}

/// Stereo gives `(L, R, (L+R)/2)`; mono gives three copies.
pub fn derive_channels<T: Scalar>(clip: &AudioClip) -> ChannelSet<T> {
    let conv = |s: &[f32]| -> Vec<T> { s.iter().map(|&v| T::lit(v as f64)).collect() };
    let left = conv(clip.channel(0));
    if clip.channel_count() == 1 {
        return ChannelSet {
            right: left.clone(),
            mean: left.clone(),
            left,
        };
    }
    let right = conv(clip.channel(1));
    let half = T::lit(0.5);
    let mean = left
        .iter()
        .zip(&right)
        .map(|(&l, &r)| (l + r) * half)
        .collect();
    ChannelSet { left, right, mean }
}

/// Non-overlapping-by-default framing; trailing samples that do not fill a
/// frame are dropped.
pub fn frame_signal<T: Scalar>(signal: &[T], config: &FeatureConfig) -> Result<Matrix<T>> {
    let (win, hop) = (config.window_len(), config.hop_len());
    if win == 0 || hop == 0 {
        return Err(Error::Config(
            "window and hop must be at least one sample".into(),
        ));
    }
    if signal.len() < win {
        return Err(Error::TooShort {
            required: win,
            actual: signal.len(),
        });
    }
    let frames = (signal.len() - win) / hop + 1;
    let mut data = Vec::with_capacity(frames * win);
    for f in 0..frames {
        data.extend_from_slice(&signal[f * hop..f * hop + win]);
    }
    Ok(Matrix::from_vec(frames, win, data))
}

/// Rank-3 `channels x n_mels x frames` array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelTensor<T> {
    shape: [usize; 3],
    data: Vec<T>,
}

impl<T: Scalar> LogMelTensor<T> {
    pub fn new(shape: [usize; 3], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape("log-mel tensor", shape, data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    /// Stacks equally shaped `n_mels x frames` matrices along the channel axis.
    pub fn stack(channels: &[Matrix<T>]) -> Result<Self> {
        let first = channels.first().ok_or(Error::Empty("channel list"))?;
        let (m, t) = (first.rows(), first.cols());
        let mut data = Vec::with_capacity(channels.len() * m * t);
        for ch in channels {
            if (ch.rows(), ch.cols()) != (m, t) {
                return Err(Error::shape(
                    "channel stack",
                    (m, t),
                    (ch.rows(), ch.cols()),
                ));
            }
            data.extend_from_slice(ch.as_slice());
        }
        Ok(Self {
            shape: [channels.len(), m, t],
            data,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn n_mels(&self) -> usize {
        self.shape[1]
    }

    pub fn frames(&self) -> usize {
        self.shape[2]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, c: usize, m: usize, t: usize) -> T {
        self.data[(c * self.shape[1] + m) * self.shape[2] + t]
    }

    /// The `n_mels x frames` plane of channel `c`.
    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.shape[1] * self.shape[2];
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> LogMelTensor<U> {
        LogMelTensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> LogMelTensor<U> {
        self.map(|v| U::lit(v.as_f64()))
    }
}

/// Cuts a clip-level tensor into non-overlapping `patch_frames`-wide patches;
/// trailing frames are dropped. Patch `p` covers frames
/// `[p * patch_frames, (p + 1) * patch_frames)`.
pub fn extract_patches<T: Scalar>(
    clip: &LogMelTensor<T>,
    patch_frames: usize,
) -> Result<Vec<LogMelTensor<T>>> {
    let [c, m, t] = clip.shape();
    if patch_frames == 0 {
        return Err(Error::Config("patch_frames must be at least 1".into()));
    }
    if t < patch_frames {
        return Err(Error::TooShort {
            required: patch_frames,
            actual: t,
        });
    }
    Ok((0..t / patch_frames)
        .map(|p| {
            let mut data = Vec::with_capacity(c * m * patch_frames);
            for row in clip.data.chunks_exact(t) {
                data.extend_from_slice(&row[p * patch_frames..(p + 1) * patch_frames]);
            }
            LogMelTensor {
                shape: [c, m, patch_frames],
                data,
            }
        })
        .collect())
}

/// Reusable extraction pipeline for one configuration.
#[derive(Debug, Clone)]
pub struct FeatureExtractor<T> {
    config: FeatureConfig,
    window: Vec<T>,
    filterbank: MelFilterbank<T>,
    fft: Fft<T>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            window: hann_window(config.window_len()),
            filterbank: MelFilterbank::new(&config)?,
            fft: Fft::new(config.fft_len())?,
            config,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank<T> {
        &self.filterbank
    }

    /// Log-mel matrix of a single signal, `n_mels x frames`.
    pub fn signal_log_mel(&self, signal: &[T]) -> Result<Matrix<T>> {
        let frames = frame_signal(signal, &self.config)?;
        let power = fft::power_spectrum_with(&self.fft, &frames, &self.window)?;
        log_mel(&power, &self.filterbank, T::lit(self.config.log_floor))
    }

    /// Clip-level `3 x n_mels x frames` tensor (left, right, mean).
    pub fn clip_log_mel(&self, clip: &AudioClip) -> Result<LogMelTensor<T>> {
        if clip.sample_rate() != self.config.sample_rate {
            return Err(Error::UnsupportedFormat(format!(
                "sample rate {} Hz, features are configured for {} Hz",
                clip.sample_rate(),
                self.config.sample_rate
            )));
        }
        let set = derive_channels::<T>(clip);
        let mats = set
            .as_array()
            .iter()
            .map(|s| self.signal_log_mel(s))
            .collect::<Result<Vec<_>>>()?;
        LogMelTensor::stack(&mats)
    }

    pub fn clip_patches(&self, clip: &AudioClip) -> Result<Vec<LogMelTensor<T>>> {
        extract_patches(&self.clip_log_mel(clip)?, self.config.patch_frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_samples(win: usize, hop: usize) -> FeatureConfig {
        FeatureConfig {
            window_s: win as f64 / 1000.0,
            hop_s: hop as f64 / 1000.0,
            ..FeatureConfig::new(1000)
        }
    }

    #[test]
    fn default_lengths() {
        let c = FeatureConfig::default();
        assert_eq!(c.window_len(), 1102);
        assert_eq!(c.hop_len(), 1102);
        assert_eq!(c.fft_len(), 2048);
        assert_eq!(c.fmax_hz(), 22050.0);
        c.validate().unwrap();
        assert_eq!(FeatureConfig::new(16000).window_len(), 400);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = FeatureConfig::default();
        let cases = [
            FeatureConfig {
                fft_size: Some(1000),
                ..base.clone()
            },
            FeatureConfig {
                fft_size: Some(1024),
                ..base.clone()
            },
            FeatureConfig {
                fmin: 5000.0,
                fmax: Some(4000.0),
                ..base.clone()
            },
            FeatureConfig {
                fmax: Some(30000.0),
                ..base.clone()
            },
            FeatureConfig {
                n_mels: 0,
                ..base.clone()
            },
            FeatureConfig {
                patch_frames: 0,
                ..base.clone()
            },
            FeatureConfig {
                log_floor: 0.0,
                ..base.clone()
            },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn fingerprint_tracks_fields() {
        let a = FeatureConfig::default();
        assert_eq!(a.fingerprint(), FeatureConfig::default().fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
        let b = FeatureConfig {
            n_mels: 64,
            ..a.clone()
        };
        assert_ne!(a.fingerprint(), b.fingerprint());
        // resolved defaults fingerprint the same as explicit values
        let c = FeatureConfig {
            fft_size: Some(2048),
            fmax: Some(22050.0),
            ..a.clone()
        };
        assert_eq!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn derive_channels_cases() {
        let s = vec![0.25f32, -0.5, 0.75];
        let clip = AudioClip::stereo(s.clone(), s.clone(), 8000).unwrap();
        let set = derive_channels::<f64>(&clip);
        assert_eq!(set.left, set.mean);
        assert_eq!(set.right, set.mean);

        let clip = AudioClip::stereo(vec![1.0; 4], vec![-1.0; 4], 8000).unwrap();
        assert!(derive_channels::<f64>(&clip).mean.iter().all(|&v| v == 0.0));

        let mono = AudioClip::new(vec![s.clone()], 8000).unwrap();
        let set = derive_channels::<f64>(&mono);
        assert_eq!(set.left, set.right);
        assert_eq!(set.left, set.mean);
    }

    #[test]
    fn framing_arithmetic() {
        let sig: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let f = frame_signal(&sig, &cfg_samples(4, 4)).unwrap();
        assert_eq!((f.rows(), f.cols()), (2, 4));
        assert_eq!(f.row(0), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(f.row(1), &[4.0, 5.0, 6.0, 7.0]);

        let f = frame_signal(&sig[..4], &cfg_samples(4, 4)).unwrap();
        assert_eq!(f.rows(), 1);
        assert_eq!(f.row(0), &sig[..4]);

        match frame_signal(&sig[..3], &cfg_samples(4, 4)).unwrap_err() {
            Error::TooShort { required, actual } => assert_eq!((required, actual), (4, 3)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn thirty_seconds_gives_1200_frames() {
        let cfg = FeatureConfig::default();
        let n = 30 * 44100;
        assert_eq!((n - cfg.window_len()) / cfg.hop_len() + 1, 1200);
        let sig = vec![0.0f32; n];
        assert_eq!(frame_signal(&sig, &cfg).unwrap().rows(), 1200);
    }

    #[test]
    fn patch_counts() {
        let t = LogMelTensor::<f32>::zeros([3, 4, 1200]);
        assert_eq!(extract_patches(&t, 128).unwrap().len(), 9);
        let t = LogMelTensor::<f32>::zeros([3, 4, 255]);
        assert_eq!(extract_patches(&t, 128).unwrap().len(), 1);
        assert!(matches!(
            extract_patches(&LogMelTensor::<f32>::zeros([3, 4, 127]), 128),
            Err(Error::TooShort { .. })
        ));

        let data: Vec<f64> = (0..3 * 2 * 128).map(|i| i as f64).collect();
        let t = LogMelTensor::new([3, 2, 128], data).unwrap();
        let p = extract_patches(&t, 128).unwrap();
        assert_eq!(p, vec![t.clone()]);
    }

    #[test]
    fn patches_take_consecutive_frame_ranges() {
        let data: Vec<f64> = (0..2 * 3 * 10).map(|i| i as f64).collect();
        let t = LogMelTensor::new([2, 3, 10], data).unwrap();
        let p = extract_patches(&t, 4).unwrap();
        assert_eq!(p.len(), 2);
        for (pi, patch) in p.iter().enumerate() {
            for c in 0..2 {
                for m in 0..3 {
                    for f in 0..4 {
                        assert_eq!(patch.get(c, m, f), t.get(c, m, pi * 4 + f));
                    }
                }
            }
        }
    }

    #[test]
    fn extractor_rejects_other_sample_rates() {
        let ex = FeatureExtractor::<f32>::new(FeatureConfig::default()).unwrap();
        let clip = AudioClip::stereo(vec![0.0; 4000], vec![0.0; 4000], 16000).unwrap();
        assert!(matches!(
            ex.clip_log_mel(&clip),
            Err(Error::UnsupportedFormat(_))
        ));
    }
}
