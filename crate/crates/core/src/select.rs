//! Braking-related component selection: delayed feature/brake pairing, the
//! per-trial Pearson coefficient, the ν consistency metric, heuristic artifact
//! labels and top-fraction selection.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ica::{self, IcaDecomposition};
use crate::signal::{BrakeTrace, Epoch};
use crate::spectral::{self, FeatureSeries, Psd, Taper, WelchConfig, DELTA_THETA};
use crate::{Error, Result};

/// Horizons accepted by the delayed pairing, in ms.
pub const HORIZONS_MS: [f64; 3] = [200.0, 300.0, 400.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IcLabel {
    Brain,
    Ocular,
    Muscular,
    Cardiac,
    LineNoise,
    ChannelNoise,
    Other,
}

impl IcLabel {
    pub const ALL: [IcLabel; 7] = [
        IcLabel::Brain,
        IcLabel::Ocular,
        IcLabel::Muscular,
        IcLabel::Cardiac,
        IcLabel::LineNoise,
        IcLabel::ChannelNoise,
        IcLabel::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IcLabel::Brain => "brain",
            IcLabel::Ocular => "ocular",
            IcLabel::Muscular => "muscular",
            IcLabel::Cardiac => "cardiac",
            IcLabel::LineNoise => "line-noise",
            IcLabel::ChannelNoise => "channel-noise",
            IcLabel::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }

    /// Brain and other components stay eligible for selection.
    pub fn is_artifact(self) -> bool {
        !matches!(self, IcLabel::Brain | IcLabel::Other)
    }
}

impl fmt::Display for IcLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuConfig {
    pub window_ms: f64,
    pub step_ms: f64,
    pub band: (f64, f64),
    pub threshold: f64,
}

impl Default for NuConfig {
    fn default() -> Self {
        Self {
            window_ms: 500.0,
            step_ms: 50.0,
            band: DELTA_THETA,
            threshold: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialCorrelation {
    pub ic_index: usize,
    pub trial_index: usize,
    pub delta_t_ms: f64,
    /// `None` when either paired sequence has zero variance.
    pub r: Option<f64>,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuCounts {
    pub n_strong: usize,
    pub n_total: usize,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcScore {
    pub ic_index: usize,
    pub nu: f64,
    pub n_strong: usize,
    pub n_total: usize,
    pub label: IcLabel,
    pub selected: bool,
}

fn check_horizon(delta_t_ms: f64) -> Result<()> {
    if HORIZONS_MS.contains(&delta_t_ms) {
        Ok(())
    } else {
        Err(Error::invalid(format!("horizon {delta_t_ms} ms must be one of 200, 300, 400")))
    }
}

/// Pairs `feature(t)` with `brake(t + Δt)` for every feature timestamp whose
/// delayed time falls inside the trace.
pub fn pair_delayed(
    features: &FeatureSeries,
    brake: &BrakeTrace,
    delta_t_ms: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_horizon(delta_t_ms)?;
    let mut f = Vec::new();
    let mut y = Vec::new();
    for (&t, &v) in features.timestamps_ms.iter().zip(&features.values) {
        if let Some(b) = brake.at_ms(t + delta_t_ms) {
            f.push(v);
            y.push(b);
        }
    }
    if f.len() < 3 {
        return Err(Error::invalid(format!(
            "only {} feature/brake pairs at Δt = {delta_t_ms} ms; need 3",
            f.len()
        )));
    }
    Ok((f, y))
}

/// Product-moment correlation; `None` when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::invalid(format!(
            "pearson needs equal lengths ≥ 3, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let flat = |s: f64, m: f64| s <= (f64::EPSILON * m).powi(2) * n;
    if sxx == 0.0 || syy == 0.0 || flat(sxx, mx) || flat(syy, my) {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// Strong trials have `r > threshold`; undefined ones count toward the total only.
pub fn nu_metric(correlations: &[Option<f64>], threshold: f64) -> Result<NuCounts> {
    if correlations.is_empty() {
        return Err(Error::invalid("ν needs at least one trial"));
    }
    let n_strong = correlations.iter().filter(|r| matches!(r, Some(v) if *v > threshold)).count();
    let n_total = correlations.len();
    Ok(NuCounts {
        n_strong,
        n_total,
        nu: n_strong as f64 / n_total as f64,
    })
}

/// Per-trial correlations of every row of `signals[trial]` against the trial's
/// brake at the given horizon.
pub fn signal_correlations(
    signals: &[DMatrix<f64>],
    brakes: &[BrakeTrace],
    fs: f64,
    delta_t_ms: f64,
    cfg: &NuConfig,
) -> Result<Vec<TrialCorrelation>> {
    if signals.len() != brakes.len() || signals.is_empty() {
        return Err(Error::invalid("need one brake trace per trial and at least one trial"));
    }
    let mut out = Vec::new();
    for (trial, (sig, brake)) in signals.iter().zip(brakes).enumerate() {
        for row in 0..sig.nrows() {
            let x: Vec<f64> = sig.row(row).iter().copied().collect();
            let series = spectral::sliding_band_power(&x, fs, cfg.window_ms, cfg.step_ms, cfg.band)?;
            let (f, y) = pair_delayed(&series, brake, delta_t_ms)?;
            out.push(TrialCorrelation {
                ic_index: row,
                trial_index: trial,
                delta_t_ms,
                r: pearson(&f, &y)?,
                n_pairs: f.len(),
            });
        }
    }
    Ok(out)
}

/// ν of each row across trials.
pub fn nu_by_row(correlations: &[TrialCorrelation], rows: usize, threshold: f64) -> Result<Vec<NuCounts>> {
    (0..rows)
        .map(|i| {
            let rs: Vec<Option<f64>> = correlations.iter().filter(|c| c.ic_index == i).map(|c| c.r).collect();
            nu_metric(&rs, threshold)
        })
        .collect()
}

/// Component activations of every epoch.
pub fn epoch_sources(epochs: &[Epoch], decomp: &IcaDecomposition) -> Result<Vec<DMatrix<f64>>> {
    epochs.iter().map(|e| ica::sources(decomp, e.eeg())).collect()
}

fn epoch_brakes(epochs: &[Epoch]) -> Result<Vec<BrakeTrace>> {
    epochs.iter().map(Epoch::brake_trace).collect()
}

/// ν of every row of the per-epoch signals at one horizon.
pub fn nu_for_signals(signals: &[DMatrix<f64>], epochs: &[Epoch], delta_t_ms: f64, cfg: &NuConfig) -> Result<Vec<NuCounts>> {
    let fs = epochs
        .first()
        .ok_or_else(|| Error::invalid("no epochs"))?
        .fs();
    let corr = signal_correlations(signals, &epoch_brakes(epochs)?, fs, delta_t_ms, cfg)?;
    nu_by_row(&corr, signals[0].nrows(), cfg.threshold)
}

/// Mean ν over components for each horizon.
pub fn horizon_sweep(
    epochs: &[Epoch],
    decomp: &IcaDecomposition,
    horizons: &[f64],
    cfg: &NuConfig,
) -> Result<Vec<(f64, Vec<NuCounts>)>> {
    let signals = epoch_sources(epochs, decomp)?;
    horizons
        .iter()
        .map(|&h| Ok((h, nu_for_signals(&signals, epochs, h, cfg)?)))
        .collect()
}

/// Spectral and spatial summaries the artifact classifier works from.
#[derive(Debug, Clone)]
pub struct IcContext {
    pub fs: f64,
    pub electrode_xy: Vec<[f64; 2]>,
    /// Scalp column per component.
    pub scalp: Vec<Vec<f64>>,
    /// Activation PSD per component (2 s Welch segments).
    pub psd: Vec<Psd>,
    /// Excess kurtosis per component.
    pub kurtosis: Vec<f64>,
    /// Largest autocorrelation at lags 0.4–1.5 s per component.
    pub cardiac_autocorr: Vec<f64>,
}

fn excess_kurtosis(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let (m2, m4) = x.iter().fold((0.0, 0.0), |(a, b), v| {
        let d = (v - m) * (v - m);
        (a + d, b + d * d)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 == 0.0 {
        0.0
    } else {
        m4 / (m2 * m2) - 3.0
    }
}

fn max_autocorr(x: &[f64], fs: f64, lags_s: (f64, f64)) -> f64 {
    let n = x.len();
    let m = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - m).collect();
    let var: f64 = d.iter().map(|v| v * v).sum();
    if var == 0.0 {
        return 0.0;
    }
    let lo = (lags_s.0 * fs).round() as usize;
    let hi = ((lags_s.1 * fs).round() as usize).min(n.saturating_sub(1));
    (lo..=hi)
        .map(|lag| d[..n - lag].iter().zip(&d[lag..]).map(|(a, b)| a * b).sum::<f64>() / var)
        .fold(0.0, f64::max)
}

impl IcContext {
    /// Summaries of every component of `decomp` applied to `data`.
    pub fn build(decomp: &IcaDecomposition, data: &DMatrix<f64>, electrode_xy: &[[f64; 2]], fs: f64) -> Result<Self> {
        let s = ica::sources(decomp, data)?;
        let welch = WelchConfig {
            segment_ms: 2000.0,
            overlap_fraction: 0.5,
            window: Taper::Hamming,
        };
        let mut psd = Vec::new();
        let mut kurtosis = Vec::new();
        let mut cardiac_autocorr = Vec::new();
        for row in s.row_iter() {
            let x: Vec<f64> = row.iter().copied().collect();
            psd.push(spectral::welch_psd(&x, fs, &welch)?);
            kurtosis.push(excess_kurtosis(&x));
            cardiac_autocorr.push(max_autocorr(&x, fs, (0.4, 1.5)));
        }
        Ok(Self {
            fs,
            electrode_xy: electrode_xy.to_vec(),
            scalp: (0..decomp.n_components())
                .map(|i| decomp.mixing.column(i).iter().copied().collect())
                .collect(),
            psd,
            kurtosis,
            cardiac_autocorr,
        })
    }

    pub fn n_components(&self) -> usize {
        self.scalp.len()
    }
}

pub trait IcClassifier {
    fn classify(&self, ctx: &IcContext, ic: usize) -> IcLabel;
}

/// Rule-based labels, first match wins:
///
/// 1. one channel holds ≥ 90% of the scalp energy → channel-noise
/// 2. ≥ 50% of power in 47–53 Hz → line-noise
/// 3. ≥ 70% of scalp energy on the two frontal-most electrodes and δ the
///    strongest band → ocular
/// 4. ≥ 60% of power above 20 Hz → muscular
/// 5. autocorrelation ≥ 0.3 at a 0.4–1.5 s lag and excess kurtosis ≥ 5 → cardiac
/// 6. log-log spectral slope over 1–40 Hz ≤ −0.5 → brain, else other
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicClassifier;

fn band_fraction(psd: &Psd, lo: f64, hi: f64) -> f64 {
    let total: f64 = psd.power.iter().skip(1).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let part: f64 = psd
        .freqs
        .iter()
        .zip(&psd.power)
        .filter(|(f, _)| **f >= lo && **f < hi)
        .map(|(_, p)| p)
        .sum();
    part / total
}

fn spectral_slope(psd: &Psd) -> Option<f64> {
    let pts: Vec<(f64, f64)> = psd
        .freqs
        .iter()
        .zip(&psd.power)
        .filter(|(f, p)| **f >= 1.0 && **f <= 40.0 && **p > 0.0)
        .map(|(f, p)| (f.log10(), p.log10()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

impl IcClassifier for HeuristicClassifier {
    fn classify(&self, ctx: &IcContext, ic: usize) -> IcLabel {
        let col = &ctx.scalp[ic];
        let energy: Vec<f64> = col.iter().map(|v| v * v).collect();
        let total: f64 = energy.iter().sum();
        let psd = &ctx.psd[ic];
        if total > 0.0 && energy.iter().cloned().fold(0.0, f64::max) / total >= 0.9 {
            return IcLabel::ChannelNoise;
        }
        if band_fraction(psd, 47.0, 53.0) >= 0.5 {
            return IcLabel::LineNoise;
        }
        if total > 0.0 && ctx.electrode_xy.len() >= 2 {
            let mut idx: Vec<usize> = (0..ctx.electrode_xy.len()).collect();
            idx.sort_by(|&a, &b| ctx.electrode_xy[b][1].total_cmp(&ctx.electrode_xy[a][1]).then(a.cmp(&b)));
            let frontal = (energy[idx[0]] + energy[idx[1]]) / total;
            let bands = [(0.5, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0), (30.0, f64::INFINITY)];
            let powers: Vec<f64> = bands.iter().map(|&(lo, hi)| band_fraction(psd, lo, hi)).collect();
            let delta_dominant = powers[1..].iter().all(|&p| powers[0] > p);
            if frontal >= 0.7 && delta_dominant {
                return IcLabel::Ocular;
            }
        }
        if band_fraction(psd, 20.0, f64::INFINITY) >= 0.6 {
            return IcLabel::Muscular;
        }
        if ctx.cardiac_autocorr[ic] >= 0.3 && ctx.kurtosis[ic] >= 5.0 {
            return IcLabel::Cardiac;
        }
        match spectral_slope(psd) {
            Some(s) if s <= -0.5 => IcLabel::Brain,
            _ => IcLabel::Other,
        }
    }
}

/// Externally supplied labels take precedence over the wrapped classifier.
#[derive(Debug, Clone, Default)]
pub struct OverrideClassifier<C> {
    pub overrides: HashMap<usize, IcLabel>,
    pub fallback: C,
}

impl<C: IcClassifier> IcClassifier for OverrideClassifier<C> {
    fn classify(&self, ctx: &IcContext, ic: usize) -> IcLabel {
        self.overrides
            .get(&ic)
            .copied()
            .unwrap_or_else(|| self.fallback.classify(ctx, ic))
    }
}

pub fn classify_artifact(classifier: &dyn IcClassifier, ctx: &IcContext, ic: usize) -> Result<IcLabel> {
    if ic >= ctx.n_components() {
        return Err(Error::invalid(format!(
            "component {ic} out of range ({} components)",
            ctx.n_components()
        )));
    }
    Ok(classifier.classify(ctx, ic))
}

/// Nearest-rank percentile of an unsorted list (`p` in (0, 1]).
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Selected component indices, ascending.
    pub indices: Vec<usize>,
    pub threshold: Option<f64>,
    /// Set when every component carried an artifact label.
    pub all_artifacts: bool,
}

fn threshold_of(scores: &[&IcScore], top_fraction: f64) -> Option<f64> {
    let nus: Vec<f64> = scores.iter().map(|s| s.nu).collect();
    nearest_rank_percentile(&nus, 1.0 - top_fraction)
}

/// Non-artifact components whose ν strictly exceeds the `(1 − top_fraction)`
/// nearest-rank percentile of the non-artifact ν values.
pub fn select_braking_ics(scores: &[IcScore], top_fraction: f64) -> Result<Selection> {
    if scores.is_empty() {
        return Err(Error::invalid("no component scores to select from"));
    }
    if !(top_fraction > 0.0 && top_fraction < 1.0) {
        return Err(Error::invalid("top fraction must lie in (0, 1)"));
    }
    let retained: Vec<&IcScore> = scores.iter().filter(|s| !s.label.is_artifact()).collect();
    let threshold = threshold_of(&retained, top_fraction);
    let mut indices: Vec<usize> = match threshold {
        Some(t) => retained.iter().filter(|s| s.nu > t).map(|s| s.ic_index).collect(),
        None => Vec::new(),
    };
    indices.sort_unstable();
    Ok(Selection {
        indices,
        threshold,
        all_artifacts: retained.is_empty(),
    })
}

/// One threshold over every subject's retained components; returns the
/// per-subject selections.
pub fn select_pooled(subjects: &[Vec<IcScore>], top_fraction: f64) -> Result<Vec<Selection>> {
    let retained: Vec<&IcScore> = subjects.iter().flatten().filter(|s| !s.label.is_artifact()).collect();
    if subjects.iter().all(Vec::is_empty) {
        return Err(Error::invalid("no component scores to select from"));
    }
    let threshold = threshold_of(&retained, top_fraction);
    Ok(subjects
        .iter()
        .map(|scores| {
            let mut indices: Vec<usize> = scores
                .iter()
                .filter(|s| !s.label.is_artifact() && threshold.is_some_and(|t| s.nu > t))
                .map(|s| s.ic_index)
                .collect();
            indices.sort_unstable();
            Selection {
                indices,
                threshold,
                all_artifacts: !scores.iter().any(|s| !s.label.is_artifact()),
            }
        })
        .collect())
}

/// Like [`select_braking_ics`], but when nothing clears the percentile the
/// `min_count` highest-ν non-artifact components with ν > 0 are taken.
pub fn select_with_floor(scores: &[IcScore], top_fraction: f64, min_count: usize) -> Result<Selection> {
    let mut sel = select_braking_ics(scores, top_fraction)?;
    if sel.indices.is_empty() && min_count > 0 {
        let mut retained: Vec<&IcScore> = scores.iter().filter(|s| !s.label.is_artifact() && s.nu > 0.0).collect();
        retained.sort_by(|a, b| b.nu.total_cmp(&a.nu).then(a.ic_index.cmp(&b.ic_index)));
        sel.indices = retained.iter().take(min_count).map(|s| s.ic_index).collect();
        sel.indices.sort_unstable();
    }
    Ok(sel)
}

/// Labels and ν for every component at one horizon, with selection applied.
pub fn score_ics(
    epochs: &[Epoch],
    decomp: &IcaDecomposition,
    ctx: &IcContext,
    classifier: &dyn IcClassifier,
    delta_t_ms: f64,
    cfg: &NuConfig,
) -> Result<Vec<IcScore>> {
    let signals = epoch_sources(epochs, decomp)?;
    let nus = nu_for_signals(&signals, epochs, delta_t_ms, cfg)?;
    nus.iter()
        .enumerate()
        .map(|(i, c)| {
            Ok(IcScore {
                ic_index: i,
                nu: c.nu,
                n_strong: c.n_strong,
                n_total: c.n_total,
                label: classify_artifact(classifier, ctx, i)?,
                selected: false,
            })
        })
        .collect()
}

/// Marks `selected` on the scores listed in `selection`.
pub fn apply_selection(scores: &mut [IcScore], selection: &Selection) {
    for s in scores {
        s.selected = selection.indices.contains(&s.ic_index);
    }
}

pub fn scores_to_csv(scores: &[IcScore]) -> String {
    let mut out = String::from("ic_index,nu,n_strong,n_total,label,selected\n");
    for s in scores {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.ic_index, s.nu, s.n_strong, s.n_total, s.label, s.selected
        );
    }
    out
}

pub fn scores_from_csv(text: &str) -> Result<Vec<IcScore>> {
    let mut lines = text.lines();
    if lines.next() != Some("ic_index,nu,n_strong,n_total,label,selected") {
        return Err(Error::invalid("unexpected score CSV header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::invalid(format!("score CSV row {} is malformed: `{line}`", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            Ok(IcScore {
                ic_index: f[0].parse().map_err(|_| bad())?,
                nu: f[1].parse().map_err(|_| bad())?,
                n_strong: f[2].parse().map_err(|_| bad())?,
                n_total: f[3].parse().map_err(|_| bad())?,
                label: IcLabel::parse(f[4]).ok_or_else(bad)?,
                selected: f[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(ts: &[f64], vals: &[f64]) -> FeatureSeries {
        FeatureSeries {
            timestamps_ms: ts.to_vec(),
            values: vals.to_vec(),
            window_ms: 500.0,
            step_ms: 50.0,
            band: DELTA_THETA,
        }
    }

    #[test]
    fn pairs_inside_range() {
        let brake = BrakeTrace::new(200.0, (0..181).map(|i| i as f64 / 180.0).collect(), vec![]).unwrap();
        let (f, y) = pair_delayed(&series(&[500.0, 550.0, 600.0], &[1.0, 2.0, 3.0]), &brake, 200.0).unwrap();
        assert_eq!(f, vec![1.0, 2.0, 3.0]);
        assert_eq!(y, vec![140.0 / 180.0, 150.0 / 180.0, 160.0 / 180.0]);
    }

    #[test]
    fn pairs_truncate_at_trace_end() {
        // brake ends at 850 ms
        let brake = BrakeTrace::new(200.0, vec![0.5; 171], vec![]).unwrap();
        let ts: Vec<f64> = (0..12).map(|k| 50.0 * k as f64).collect();
        let (f, _) = pair_delayed(&series(&ts, &ts), &brake, 400.0).unwrap();
        assert_eq!(f.last(), Some(&450.0));
        assert!(pair_delayed(&series(&ts, &ts), &brake, 250.0).is_err());
    }

    #[test]
    fn pearson_hand_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let r = pearson(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap().unwrap();
        assert!((r - 0.8).abs() < 1e-15);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap().unwrap() - 1.0).abs() < 1e-15);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &y).unwrap().unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&x, &[2.0; 4]).unwrap(), None);
    }

    #[test]
    fn nu_threshold_is_strict() {
        let c = nu_metric(&[Some(0.7), Some(0.5), Some(-0.8), Some(0.61)], 0.6).unwrap();
        assert_eq!((c.n_strong, c.n_total, c.nu), (2, 4, 0.5));
        let c = nu_metric(&[Some(0.6), None, Some(0.9)], 0.6).unwrap();
        assert_eq!((c.n_strong, c.n_total), (1, 3));
        assert_eq!(nu_metric(&[Some(0.9); 20], 0.6).unwrap().nu, 1.0);
    }

    fn score(i: usize, nu: f64, label: IcLabel) -> IcScore {
        IcScore {
            ic_index: i,
            nu,
            n_strong: 0,
            n_total: 0,
            label,
            selected: false,
        }
    }

    #[test]
    fn selection_order_statistics() {
        let mut scores: Vec<IcScore> = (0..100).map(|i| score(i, 0.05, IcLabel::Brain)).collect();
        scores[42].nu = 0.7;
        assert_eq!(select_braking_ics(&scores, 0.05).unwrap().indices, vec![42]);
        let flat: Vec<IcScore> = (0..10).map(|i| score(i, 0.3, IcLabel::Other)).collect();
        assert!(select_braking_ics(&flat, 0.05).unwrap().indices.is_empty());
        let arts: Vec<IcScore> = (0..3).map(|i| score(i, 0.9, IcLabel::Ocular)).collect();
        let sel = select_braking_ics(&arts, 0.05).unwrap();
        assert!(sel.indices.is_empty() && sel.all_artifacts);
    }

    #[test]
    fn forty_component_threshold() {
        // 40 ICs; 38 at or below 0.2242, with 0.2242 landing on rank ceil(0.95·40) = 38
        let mut scores: Vec<IcScore> = (0..37).map(|i| score(i, 0.005 * i as f64, IcLabel::Brain)).collect();
        scores.push(score(37, 0.2242, IcLabel::Brain));
        scores.push(score(38, 0.4, IcLabel::Brain));
        scores.push(score(39, 0.713, IcLabel::Brain));
        let sel = select_braking_ics(&scores, 0.05).unwrap();
        assert_eq!(sel.threshold, Some(0.2242));
        assert_eq!(sel.indices, vec![38, 39]);
    }

    #[test]
    fn floor_picks_best_when_empty() {
        let scores: Vec<IcScore> = [0.1, 0.5, 0.3, 0.9]
            .iter()
            .enumerate()
            .map(|(i, &nu)| score(i, nu, if i == 3 { IcLabel::Muscular } else { IcLabel::Brain }))
            .collect();
        assert!(select_braking_ics(&scores, 0.05).unwrap().indices.is_empty());
        assert_eq!(select_with_floor(&scores, 0.05, 1).unwrap().indices, vec![1]);
    }

    #[test]
    fn csv_round_trip() {
        let scores = vec![score(0, 0.25, IcLabel::LineNoise), score(1, 1.0 / 3.0, IcLabel::Other)];
        assert_eq!(scores_from_csv(&scores_to_csv(&scores)).unwrap(), scores);
    }
}
