//! Signal-to-feature pipeline: full-wave rectification, low-pass smoothing
//! (second-order Butterworth or single pole, both by bilinear transform) and
//! windowed mean absolute value.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::io::Read;
use std::path::Path;

use crate::data::{FeatureDataset, FeatureMatrix};
use crate::error::{Error, Result};

/// Multichannel recording of one trial, samples stored time-major (T × channels).
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBlock {
    samples: Vec<f64>,
    channels: usize,
    pub fs: f64,
    pub labels: Option<Vec<u32>>,
    pub trial: u32,
    pub participant: u32,
}

impl SignalBlock {
    pub fn new(
        channels: usize,
        samples: Vec<f64>,
        fs: f64,
        labels: Option<Vec<u32>>,
        trial: u32,
        participant: u32,
    ) -> Result<Self> {
        if channels == 0 || !samples.len().is_multiple_of(channels) {
            return Err(Error::invalid(format!(
                "{} samples do not divide into {channels} channels",
                samples.len()
            )));
        }
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::invalid(format!(
                "sampling rate must be positive, got {fs}"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal samples".into()));
        }
        let t = samples.len() / channels;
        if let Some(l) = &labels {
            if l.len() != t {
                return Err(Error::DimensionMismatch {
                    expected: t,
                    found: l.len(),
                });
            }
        }
        Ok(SignalBlock {
            samples,
            channels,
            fs,
            labels,
            trial,
            participant,
        })
    }

    /// Number of time steps.
    pub fn len(&self) -> usize {
        self.samples.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample(&self, t: usize, channel: usize) -> f64 {
        self.samples[t * self.channels + channel]
    }

    pub fn channel(&self, channel: usize) -> Vec<f64> {
        self.samples
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    fn map_channels(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> SignalBlock {
        let mut out = self.clone();
        for ch in 0..self.channels {
            let y = f(&self.channel(ch));
            for (t, v) in y.into_iter().enumerate() {
                out.samples[t * self.channels + ch] = v;
            }
        }
        out
    }

    fn require_labels(&self) -> Result<&[u32]> {
        self.labels.as_deref().ok_or_else(|| {
            Error::invalid(format!(
                "trial {} has no per-sample labels; features need class labels",
                self.trial
            ))
        })
    }
}

/// Biquad coefficients, normalized so a[0] = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterCoeffs {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

/// Causal single pass, or forward then time-reversed pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterMode {
    #[default]
    Causal,
    ZeroPhase,
}

fn check_cutoff(fc: f64, fs: f64) -> Result<()> {
    if !(fc > 0.0 && fc < 0.5 * fs) {
        return Err(Error::invalid(format!(
            "cut-off {fc} Hz must lie in (0, fs/2 = {} Hz)",
            0.5 * fs
        )));
    }
    Ok(())
}

impl FilterCoeffs {
    /// Second-order Butterworth low-pass with the cut-off prewarped.
    pub fn butterworth2_lowpass(fc: f64, fs: f64) -> Result<Self> {
        check_cutoff(fc, fs)?;
        let k = (PI * fc / fs).tan();
        let k2 = k * k;
        let norm = 1.0 / (1.0 + SQRT_2 * k + k2);
        let a1 = 2.0 * (k2 - 1.0) * norm;
        let a2 = (1.0 - SQRT_2 * k + k2) * norm;
        // Equals k²·norm; taken from the denominator sum so the DC gain is exactly 1.
        let b0 = (1.0 + a1 + a2) / 4.0;
        Ok(FilterCoeffs {
            b: [b0, 2.0 * b0, b0],
            a: [1.0, a1, a2],
        })
    }

    /// Single-pole low-pass with the cut-off prewarped.
    pub fn first_order_lowpass(fc: f64, fs: f64) -> Result<Self> {
        check_cutoff(fc, fs)?;
        let k = (PI * fc / fs).tan();
        let a1 = (k - 1.0) / (k + 1.0);
        // Equals k/(1+k); see the second-order case.
        let b0 = (1.0 + a1) / 2.0;
        Ok(FilterCoeffs {
            b: [b0, b0, 0.0],
            a: [1.0, a1, 0.0],
        })
    }

    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Both roots of z² + a₁z + a₂ strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        let (a1, a2) = (self.a[1], self.a[2]);
        a2.abs() < 1.0 && a1.abs() < 1.0 + a2
    }

    /// Direct form II transposed, with the state set to the steady-state
    /// response to a constant equal to the first sample.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let Some(&x0) = x.first() else {
            return Vec::new();
        };
        let mut s2 = (b2 - a2) * x0;
        let mut s1 = (b1 + b2 - a1 - a2) * x0;
        x.iter()
            .map(|&v| {
                let y = b0 * v + s1;
                s1 = b1 * v - a1 * y + s2;
                s2 = b2 * v - a2 * y;
                y
            })
            .collect()
    }

    pub fn filter_zero_phase(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.filter(x);
        y.reverse();
        let mut z = self.filter(&y);
        z.reverse();
        z
    }

    pub fn apply(&self, x: &[f64], mode: FilterMode) -> Vec<f64> {
        match mode {
            FilterMode::Causal => self.filter(x),
            FilterMode::ZeroPhase => self.filter_zero_phase(x),
        }
    }
}

pub fn rectify(s: &SignalBlock) -> SignalBlock {
    let mut out = s.clone();
    out.samples.iter_mut().for_each(|v| *v = v.abs());
    out
}

/// Causal second-order Butterworth low-pass, channel by channel.
pub fn butterworth2_lowpass(s: &SignalBlock, fc: f64) -> Result<SignalBlock> {
    butterworth2_lowpass_with(s, fc, FilterMode::Causal)
}

pub fn butterworth2_lowpass_with(s: &SignalBlock, fc: f64, mode: FilterMode) -> Result<SignalBlock> {
    let coeffs = FilterCoeffs::butterworth2_lowpass(fc, s.fs)?;
    Ok(s.map_channels(|x| coeffs.apply(x, mode)))
}

pub fn first_order_lowpass(s: &SignalBlock, fc: f64, mode: FilterMode) -> Result<SignalBlock> {
    let coeffs = FilterCoeffs::first_order_lowpass(fc, s.fs)?;
    Ok(s.map_channels(|x| coeffs.apply(x, mode)))
}

/// Most frequent label; ties go to the smallest label.
fn majority(labels: &[u32]) -> u32 {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    let mut best = (0, 0);
    for (l, c) in counts {
        if c > best.1 {
            best = (l, c);
        }
    }
    best.0
}

/// Mean absolute value over sliding windows, one feature row per window
/// labelled with the window's majority label.
pub fn mav_window(s: &SignalBlock, window_ms: f64, step_ms: f64) -> Result<FeatureDataset> {
    let w = (window_ms * s.fs / 1000.0).round() as usize;
    let step = (step_ms * s.fs / 1000.0).round() as usize;
    if w < 1 || step < 1 {
        return Err(Error::invalid(format!(
            "window ({window_ms} ms) and step ({step_ms} ms) must each cover at least one sample"
        )));
    }
    if w > s.len() {
        return Err(Error::invalid(format!(
            "window of {w} samples is longer than the {}-sample signal",
            s.len()
        )));
    }
    let labels = s.require_labels()?;
    let ch = s.channels;
    let mut out = FeatureDataset::empty(ch);
    let mut row = vec![0.0; ch];
    let mut start = 0;
    while start + w <= s.len() {
        row.iter_mut().for_each(|v| *v = 0.0);
        for t in start..start + w {
            for (c, v) in row.iter_mut().enumerate() {
                *v += s.sample(t, c).abs();
            }
        }
        row.iter_mut().for_each(|v| *v /= w as f64);
        out.push(&row, majority(&labels[start..start + w]), s.trial, s.participant)?;
        start += step;
    }
    Ok(out)
}

/// Rectify, smooth with the causal Butterworth low-pass, and emit every
/// sample as a feature row.
pub fn pipeline_rect_smooth(s: &SignalBlock, fc: f64) -> Result<FeatureDataset> {
    pipeline_rect_smooth_with(s, fc, FilterMode::Causal)
}

pub fn pipeline_rect_smooth_with(s: &SignalBlock, fc: f64, mode: FilterMode) -> Result<FeatureDataset> {
    s.require_labels()?;
    samples_as_features(&butterworth2_lowpass_with(&rectify(s), fc, mode)?)
}

/// One feature row per time step, carrying the sample's label.
pub fn samples_as_features(s: &SignalBlock) -> Result<FeatureDataset> {
    let labels = s.require_labels()?.to_vec();
    let n = s.len();
    FeatureDataset::new(
        FeatureMatrix::new(s.channels, s.samples.clone())?,
        labels,
        vec![s.trial; n],
        vec![s.participant; n],
    )
}

/// Reads a raw-signal CSV with header `t,ch1..chD,label,trial` and an
/// optional trailing `participant` column. Consecutive rows with the same
/// trial (and participant) form one block. Without `fs`, the sampling rate
/// is inferred from each block's time column.
pub fn read_signal_csv<R: Read>(reader: R, fs: Option<f64>) -> Result<Vec<SignalBlock>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(crate::data::csv_io)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let has_participant = header.last().is_some_and(|h| h == "participant");
    let tail = if has_participant { 3 } else { 2 };
    if header.len() < tail + 2 || header[0] != "t" {
        return Err(Error::Parse {
            row: 0,
            column: "header".into(),
            message: "expected t,ch1..chD,label,trial[,participant]".into(),
        });
    }
    let channels = header.len() - tail - 1;
    for (i, h) in header[1..=channels].iter().enumerate() {
        if *h != format!("ch{}", i + 1) {
            return Err(Error::Parse {
                row: 0,
                column: h.clone(),
                message: format!("expected ch{}", i + 1),
            });
        }
    }
    if header[channels + 1] != "label" || header[channels + 2] != "trial" {
        return Err(Error::Parse {
            row: 0,
            column: "header".into(),
            message: "expected label,trial after the channel columns".into(),
        });
    }

    struct Pending {
        key: (u32, u32),
        times: Vec<f64>,
        samples: Vec<f64>,
        labels: Vec<u32>,
    }
    let finish = |p: Pending| -> Result<SignalBlock> {
        let rate = match fs {
            Some(f) => f,
            None => {
                let n = p.times.len();
                let span = p.times[n - 1] - p.times[0];
                if n < 2 || !(span > 0.0) {
                    return Err(Error::invalid(format!(
                        "cannot infer the sampling rate of trial {}; pass it explicitly",
                        p.key.1
                    )));
                }
                (n - 1) as f64 / span
            }
        };
        SignalBlock::new(channels, p.samples, rate, Some(p.labels), p.key.1, p.key.0)
    };

    let mut blocks = Vec::new();
    let mut current: Option<Pending> = None;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row: line,
            column: String::new(),
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row: line,
                column: String::new(),
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let num = |j: usize| -> Result<f64> {
            let cell = rec[j].trim();
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row: line,
                    column: header[j].clone(),
                    message: format!("not a finite number: {cell:?}"),
                })
        };
        let int = |j: usize| -> Result<u32> {
            let cell = rec[j].trim();
            cell.parse::<u32>().map_err(|_| Error::Parse {
                row: line,
                column: header[j].clone(),
                message: format!("not a non-negative integer: {cell:?}"),
            })
        };
        let t = num(0)?;
        let label = int(channels + 1)?;
        let trial = int(channels + 2)?;
        let participant = if has_participant { int(channels + 3)? } else { 1 };
        let key = (participant, trial);
        if current.as_ref().is_some_and(|p| p.key != key) {
            blocks.push(finish(current.take().expect("checked above"))?);
        }
        let p = current.get_or_insert_with(|| Pending {
            key,
            times: Vec::new(),
            samples: Vec::new(),
            labels: Vec::new(),
        });
        p.times.push(t);
        for j in 1..=channels {
            p.samples.push(num(j)?);
        }
        p.labels.push(label);
    }
    if let Some(p) = current {
        blocks.push(finish(p)?);
    }
    Ok(blocks)
}

pub fn load_signal_csv(path: &Path, fs: Option<f64>) -> Result<Vec<SignalBlock>> {
    read_signal_csv(std::fs::File::open(path)?, fs)
}
