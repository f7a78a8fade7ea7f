//! Prediction error metrics and braking-phase error breakdown.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn check_lengths(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            context: "metric inputs",
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::invalid("metrics need at least one sample"));
    }
    Ok(())
}

pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(truth, pred)?;
    let sse: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok((sse / truth.len() as f64).sqrt())
}

/// RMSE after clamping predictions into [0, 1].
pub fn rmse_clamped(truth: &[f64], pred: &[f64]) -> Result<f64> {
    let clamped: Vec<f64> = pred.iter().map(|p| p.clamp(0.0, 1.0)).collect();
    rmse(truth, &clamped)
}

/// Coefficient of determination `1 − SS_res / SS_tot` with squared sums.
pub fn r_square(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(truth, pred)?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 || truth.iter().all(|t| *t == truth[0]) {
        return Err(Error::Degenerate("R² undefined: truth has zero variance".into()));
    }
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Preparation,
    Rising,
    Sustaining,
    Attenuation,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Preparation, Phase::Rising, Phase::Sustaining, Phase::Attenuation];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Preparation => "preparation",
            Phase::Rising => "rising",
            Phase::Sustaining => "sustaining",
            Phase::Attenuation => "attenuation",
        }
    }
}

const PLATEAU_FRACTION: f64 = 0.8;

/// Labels each sample of one braking event.
///
/// Samples before `onset` are preparation. Rising runs from the onset to the
/// first local maximum that reaches 80% of the post-onset maximum, so small
/// wiggles on the ramp do not end it. Sustaining lasts until the last sample
/// at or above that level; everything later is attenuation.
pub fn phase_labels(truth: &[f64], onset: usize) -> Result<Vec<Phase>> {
    if onset >= truth.len() {
        return Err(Error::invalid(format!(
            "onset index {onset} outside a trace of {} samples",
            truth.len()
        )));
    }
    let post = &truth[onset..];
    let peak = post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let level = PLATEAU_FRACTION * peak;
    let n = post.len();
    let is_local_max = |i: usize| {
        let left = i == 0 || post[i] >= post[i - 1];
        let right = i + 1 == n || post[i] >= post[i + 1];
        left && right
    };
    let rise_end = (0..n).find(|&i| post[i] >= level && is_local_max(i)).unwrap_or(0);
    let last_high = (0..n).rev().find(|&i| post[i] >= level).unwrap_or(rise_end);
    let mut labels = vec![Phase::Preparation; onset];
    labels.extend((0..n).map(|i| {
        if i < rise_end {
            Phase::Rising
        } else if i <= last_high {
            Phase::Sustaining
        } else {
            Phase::Attenuation
        }
    }));
    Ok(labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseError {
    pub phase: Phase,
    pub n: usize,
    /// `None` when the phase holds no samples.
    pub rmse: Option<f64>,
}

pub fn phase_errors(truth: &[f64], pred: &[f64], labels: &[Phase]) -> Result<Vec<PhaseError>> {
    check_lengths(truth, pred)?;
    if labels.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "phase labels",
            expected: truth.len(),
            actual: labels.len(),
        });
    }
    Ok(Phase::ALL
        .iter()
        .map(|&phase| {
            let (mut sse, mut n) = (0.0, 0usize);
            for ((t, p), l) in truth.iter().zip(pred).zip(labels) {
                if *l == phase {
                    sse += (t - p) * (t - p);
                    n += 1;
                }
            }
            PhaseError {
                phase,
                n,
                rmse: (n > 0).then(|| (sse / n as f64).sqrt()),
            }
        })
        .collect())
}
