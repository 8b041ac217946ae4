//! Raw model output to binary wave and predicted heel-strike times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{signal_to_steps, StrideSignal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessConfig {
    pub threshold: f64,
    /// Minimum number of samples a new level must persist before its
    /// transition is accepted. 0 disables the filter.
    pub min_dwell: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            threshold: 0.5,
            min_dwell: 0,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// `value > threshold` maps to 1, everything else (including the threshold
/// itself) to 0.
pub fn binarize(values: &[f64], cfg: &PostprocessConfig) -> Vec<u8> {
    let bits: Vec<u8> = values.iter().map(|&v| u8::from(v > cfg.threshold)).collect();
    if cfg.min_dwell > 1 {
        debounce(&bits, cfg.min_dwell)
    } else {
        bits
    }
}

/// Suppress level changes that do not persist for `dwell` samples.
fn debounce(bits: &[u8], dwell: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(bits.len());
    let Some(&first) = bits.first() else {
        return out;
    };
    let mut level = first;
    let mut i = 0;
    while i < bits.len() {
        if bits[i] != level {
            let run = bits[i..].iter().take_while(|&&b| b == bits[i]).count();
            if run >= dwell {
                level = bits[i];
            }
        }
        out.push(level);
        i += 1;
    }
    out
}

pub fn binarize_signal(times: &[f64], values: &[f64], cfg: &PostprocessConfig) -> StrideSignal {
    StrideSignal {
        times: times.to_vec(),
        values: binarize(values, cfg),
    }
}

/// Binarize, then report the transition times.
pub fn predicted_steps(times: &[f64], values: &[f64], cfg: &PostprocessConfig) -> Vec<f64> {
    signal_to_steps(&binarize_signal(times, values, cfg))
}

pub fn signal_accuracy(predicted: &[u8], truth: &[u8]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Ok(1.0);
    }
    let same = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(same as f64 / predicted.len() as f64)
}

/// Per-sample `t,raw,binary,truth` CSV for plotting.
pub fn dump_csv(times: &[f64], raw: &[f64], binary: &[u8], truth: &[u8]) -> String {
    let mut out = String::from("t,raw,binary,truth\n");
    for i in 0..times.len() {
        out.push_str(&format!("{},{},{},{}\n", times[i], raw[i], binary[i], truth[i]));
    }
    out
}
