//! Audio ingestion and the log-mel front-end.
//!
//! The raw STFT runs at 31.25 frames/s (1024-sample Hann window, 512 hop,
//! 16 kHz). Six raw frames are averaged into each output frame so the
//! spectrogram lands on the 0.192 s target grid.

use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::frames_for;

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono 16 kHz audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("audio sample {i}")));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_wav(std::io::BufReader::new(file))
}

pub fn read_wav<R: Read>(reader: R) -> Result<AudioClip> {
    let mut wav = hound::WavReader::new(reader).map_err(|e| Error::Format(e.to_string()))?;
    let spec = wav.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedRate(spec.sample_rate));
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format("zero channels".into()));
    }
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => wav
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            wav.samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(e.to_string()))?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    AudioClip::new(mono)
}

/// Writes a mono 32-bit float WAV at 16 kHz.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| Error::Format(e.to_string()))?;
    for &s in clip.samples() {
        writer
            .write_sample(s)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    writer.finalize().map_err(|e| Error::Format(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub n_fft: usize,
    pub stft_hop: usize,
    pub n_mels: usize,
    /// Raw STFT frames averaged into one output frame.
    pub pool: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            stft_hop: 512,
            n_mels: 80,
            pool: 6,
            f_min: 0.0,
            f_max: SAMPLE_RATE as f64 / 2.0,
        }
    }
}

impl FeatureConfig {
    /// Output frame hop in seconds (0.192 with the defaults).
    pub fn frame_hop(&self) -> f64 {
        (self.stft_hop * self.pool) as f64 / SAMPLE_RATE as f64
    }

    /// Audio samples per output frame.
    pub fn samples_per_frame(&self) -> usize {
        self.stft_hop * self.pool
    }
}

/// Log-mel magnitudes, `n_frames × n_bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub frame_hop: f64,
}

impl Spectrogram {
    pub fn zeros(n_frames: usize, n_bins: usize, frame_hop: f64) -> Self {
        Self {
            values: vec![0.0; n_frames * n_bins],
            n_frames,
            n_bins,
            frame_hop,
        }
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_bins..(i + 1) * self.n_bins]
    }

    /// Copies `len` frames starting at `start`, zero-filling past the end.
    pub fn window(&self, start: usize, len: usize) -> Spectrogram {
        self.window_at(start as i64, len)
    }

    /// Like [`Spectrogram::window`] but `start` may be negative; frames
    /// outside the spectrogram are zero.
    pub fn window_at(&self, start: i64, len: usize) -> Spectrogram {
        let nb = self.n_bins;
        let mut out = Spectrogram::zeros(len, nb, self.frame_hop);
        let lo = start.max(0);
        let hi = (start + len as i64).min(self.n_frames as i64);
        if lo < hi {
            let (lo, hi) = (lo as usize, hi as usize);
            let at = (lo as i64 - start) as usize;
            out.values[at * nb..(at + hi - lo) * nb]
                .copy_from_slice(&self.values[lo * nb..hi * nb]);
        }
        out
    }

    /// Same frames in reverse order.
    pub fn reversed(&self) -> Spectrogram {
        let mut out = Spectrogram::zeros(self.n_frames, self.n_bins, self.frame_hop);
        for i in 0..self.n_frames {
            let j = self.n_frames - 1 - i;
            out.values[j * self.n_bins..(j + 1) * self.n_bins].copy_from_slice(self.frame(i));
        }
        out
    }

    /// Flat dump: two little-endian u32 dims (frames, bins) then row-major f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.values.len());
        out.extend_from_slice(&(self.n_frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_bins as u32).to_le_bytes());
        for &v in &self.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], frame_hop: f64) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format(
                "spectrogram dump shorter than its header".into(),
            ));
        }
        let n_frames = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let n_bins = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() != 4 * n_frames * n_bins {
            return Err(Error::Format(format!(
                "expected {} payload bytes for {n_frames}x{n_bins}, got {}",
                4 * n_frames * n_bins,
                body.len()
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Self {
            values,
            n_frames,
            n_bins,
            frame_hop,
        })
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequency of each mel band, in Hz.
pub fn mel_center_frequencies(cfg: &FeatureConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    (1..=cfg.n_mels)
        .map(|m| mel_to_hz(lo + (hi - lo) * m as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Triangular HTK-mel filters, `n_mels` rows of `n_fft/2 + 1` weights.
fn mel_filterbank(cfg: &FeatureConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * SAMPLE_RATE as f64 / cfg.n_fft as f64;
                    if f <= left || f >= right {
                        0.0
                    } else if f <= center {
                        (f - left) / (center - left)
                    } else {
                        (right - f) / (right - center)
                    }
                })
                .collect()
        })
        .collect()
}

/// Reusable STFT → mel → log(1+x) → pooling pipeline.
pub struct LogMelFrontEnd {
    cfg: FeatureConfig,
    window: Vec<f64>,
    filters: Vec<Vec<(usize, f64)>>,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMelFrontEnd {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        if cfg.n_fft == 0 || cfg.stft_hop == 0 || cfg.pool == 0 || cfg.n_mels == 0 {
            return Err(Error::Config("feature sizes must be positive".into()));
        }
        if !(cfg.f_max > cfg.f_min && cfg.f_max <= SAMPLE_RATE as f64 / 2.0) {
            return Err(Error::Config(
                "mel range must satisfy f_min < f_max <= Nyquist".into(),
            ));
        }
        let n = cfg.n_fft;
        // periodic Hann
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let filters = mel_filterbank(&cfg)
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .enumerate()
                    .filter(|&(_, w)| w > 0.0)
                    .collect()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            cfg,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Mel energies of the raw STFT frame centred on `center` (a sample
    /// index relative to `samples`, possibly outside it; zeros are read there).
    fn raw_frame(&self, samples: &[f32], center: i64, buf: &mut [Complex<f64>], out: &mut [f64]) {
        let n = self.cfg.n_fft as i64;
        let start = center - n / 2;
        for (i, slot) in buf.iter_mut().enumerate() {
            let idx = start + i as i64;
            let s = if idx >= 0 && (idx as usize) < samples.len() {
                samples[idx as usize] as f64
            } else {
                0.0
            };
            *slot = Complex::new(s * self.window[i], 0.0);
        }
        self.fft.process(buf);
        for (m, filter) in self.filters.iter().enumerate() {
            out[m] = filter.iter().map(|&(k, w)| w * buf[k].norm()).sum();
        }
    }

    /// Computes output frames `first_frame .. first_frame + n_frames`, where
    /// output frame `g` is centred near `g * frame_hop` seconds and
    /// `samples[0]` sits at absolute sample index `origin`.
    pub fn frames(
        &self,
        samples: &[f32],
        origin: i64,
        first_frame: usize,
        n_frames: usize,
    ) -> Spectrogram {
        let nb = self.cfg.n_mels;
        let pool = self.cfg.pool as i64;
        let hop = self.cfg.stft_hop as i64;
        let mut spec = Spectrogram::zeros(n_frames, nb, self.cfg.frame_hop());
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.n_fft];
        let mut mel = vec![0.0; nb];
        // raw frames pool*g - (pool-1)/2 ..= pool*g + pool/2, i.e. 6g-2 ..= 6g+3
        let lead = (pool - 1) / 2;
        for i in 0..n_frames {
            let g = (first_frame + i) as i64;
            let row = &mut spec.values[i * nb..(i + 1) * nb];
            let mut count = 0usize;
            for r in (pool * g - lead)..(pool * g - lead + pool) {
                if r < 0 {
                    continue;
                }
                self.raw_frame(samples, r * hop - origin, &mut buf, &mut mel);
                for (acc, &m) in row.iter_mut().zip(&mel) {
                    *acc += m.ln_1p();
                }
                count += 1;
            }
            let inv = 1.0 / count as f64;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        spec
    }

    pub fn process(&self, clip: &AudioClip) -> Spectrogram {
        let n = frames_for(clip.duration(), self.cfg.frame_hop());
        self.frames(clip.samples(), 0, 0, n)
    }
}

/// Log-mel spectrogram of a whole clip on the 0.192 s grid.
pub fn stft_log_mel(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Spectrogram> {
    Ok(LogMelFrontEnd::new(cfg.clone())?.process(clip))
}
