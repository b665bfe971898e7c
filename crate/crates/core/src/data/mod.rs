//! Dataset ingestion, chronological splits, few-shot truncation, window
//! extraction and the synthetic generator used by the desk-scale tests.

mod csv_io;
mod synthetic;

pub use csv_io::load_csv;
pub use synthetic::{gen_synthetic, AnomalySpec, SyntheticSpec};

use crate::error::{Error, Result};
use crate::patching::WindowSample;

/// Chronological split boundaries. `val_start` normally equals `train_end`;
/// few-shot truncation moves `train_end` down while validation and test
/// stay where they were, so no unused training data leaks forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_end: usize,
    pub val_start: usize,
    pub val_end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

/// Fixed-index split conventions for the public ETT distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPreset {
    /// 8640 / 2880 / 2880 steps (12 / 4 / 4 months, hourly).
    EttHourly,
    /// 34560 / 11520 / 11520 steps (15-minute resolution).
    EttMinute,
}

/// A multivariate series: `n_steps` rows by `n_variates` columns, row-major.
#[derive(Debug, Clone)]
pub struct SeriesFrame {
    pub values: Vec<f64>,
    pub n_steps: usize,
    pub n_variates: usize,
    pub variate_names: Vec<String>,
    pub timestamps: Option<Vec<String>>,
    pub split: SplitSpec,
    pub anomaly_labels: Option<Vec<bool>>,
}

impl SeriesFrame {
    /// Build a frame with the default 0.7 / 0.1 / 0.2 chronological split.
    pub fn new(values: Vec<f64>, n_steps: usize, n_variates: usize) -> Result<Self> {
        if n_steps == 0 || n_variates == 0 {
            return Err(Error::data("frame must have at least one step and one variate"));
        }
        if values.len() != n_steps * n_variates {
            return Err(Error::data(format!(
                "expected {} values for a {n_steps}x{n_variates} frame, got {}",
                n_steps * n_variates,
                values.len()
            )));
        }
        let mut frame = SeriesFrame {
            values,
            n_steps,
            n_variates,
            variate_names: (0..n_variates).map(|m| format!("v{m}")).collect(),
            timestamps: None,
            split: SplitSpec {
                train_end: 1,
                val_start: 1,
                val_end: 2.min(n_steps),
            },
            anomaly_labels: None,
        };
        frame.split_by_ratios(0.7, 0.1)?;
        Ok(frame)
    }

    pub fn value(&self, step: usize, variate: usize) -> f64 {
        self.values[step * self.n_variates + variate]
    }

    pub fn variate(&self, m: usize) -> Vec<f64> {
        (0..self.n_steps).map(|t| self.value(t, m)).collect()
    }

    /// Chronological split by train/val fractions; the remainder is test.
    pub fn split_by_ratios(&mut self, train: f64, val: f64) -> Result<()> {
        if !(train > 0.0 && val >= 0.0 && train + val <= 1.0) {
            return Err(Error::data(format!(
                "split ratios ({train}, {val}) must be positive and sum to at most 1"
            )));
        }
        if self.n_steps < 2 {
            return Err(Error::data("a frame needs at least 2 steps to split"));
        }
        // Clamp so tiny frames still get a valid chronological split.
        let train_end =
            ((self.n_steps as f64 * train).floor() as usize).clamp(1, self.n_steps - 1);
        let val_end = ((self.n_steps as f64 * (train + val)).floor() as usize)
            .clamp(train_end + 1, self.n_steps);
        self.split_by_indices(train_end, val_end)
    }

    pub fn split_by_indices(&mut self, train_end: usize, val_end: usize) -> Result<()> {
        if !(0 < train_end && train_end < val_end && val_end <= self.n_steps) {
            return Err(Error::data(format!(
                "degenerate split (train_end {train_end}, val_end {val_end}) for {} steps",
                self.n_steps
            )));
        }
        self.split = SplitSpec {
            train_end,
            val_start: train_end,
            val_end,
        };
        Ok(())
    }

    pub fn split_by_preset(&mut self, preset: SplitPreset) -> Result<()> {
        let (train, val, test) = match preset {
            SplitPreset::EttHourly => (8640, 2880, 2880),
            SplitPreset::EttMinute => (34560, 11520, 11520),
        };
        if self.n_steps < train + val + test {
            return Err(Error::data(format!(
                "preset needs {} steps, frame has {}",
                train + val + test,
                self.n_steps
            )));
        }
        self.split_by_indices(train, train + val)
    }

    /// Keep only the first `fraction` of the training split (chronological
    /// prefix); validation and test stay untouched.
    pub fn few_shot(&mut self, fraction: f64) -> Result<()> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::data(format!(
                "few-shot fraction {fraction} must lie in (0, 1]"
            )));
        }
        let kept = ((self.split.train_end as f64) * fraction).ceil() as usize;
        self.split.train_end = kept.max(1);
        Ok(())
    }

    pub fn part_range(&self, part: SplitPart) -> std::ops::Range<usize> {
        match part {
            SplitPart::Train => 0..self.split.train_end,
            SplitPart::Val => self.split.val_start..self.split.val_end,
            SplitPart::Test => self.split.val_end..self.n_steps,
        }
    }
}

/// Every (variate, start) window with a full `lookback + horizon` span
/// inside the given part. `horizon` may be zero for pretraining windows.
pub fn windows(
    frame: &SeriesFrame,
    lookback: usize,
    horizon: usize,
    part: SplitPart,
) -> Result<Vec<WindowSample>> {
    if lookback == 0 {
        return Err(Error::data("lookback must be >= 1"));
    }
    let range = frame.part_range(part);
    let span = lookback + horizon;
    let part_len = range.len();
    if part_len < span {
        return Err(Error::data(format!(
            "insufficient data: {part_len} steps in {part:?} split, window needs {span}"
        )));
    }
    let mut out = Vec::with_capacity(frame.n_variates * (part_len - span + 1));
    for m in 0..frame.n_variates {
        for start in range.start..=(range.end - span) {
            let lookback_vals: Vec<f64> =
                (start..start + lookback).map(|t| frame.value(t, m)).collect();
            let target_vals: Vec<f64> = (start + lookback..start + span)
                .map(|t| frame.value(t, m))
                .collect();
            out.push(WindowSample {
                lookback: lookback_vals,
                target: target_vals,
                variate_id: m,
                start_index: start,
                norm_stats: None,
            });
        }
    }
    Ok(out)
}
