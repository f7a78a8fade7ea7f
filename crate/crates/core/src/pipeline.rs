//! Stage orchestration: epoch files, component scoring, ablation arms, model
//! archives, reports and run manifests.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, CspFilters, DmdConfig};
use crate::codec::{Reader, Writer};
use crate::config::{self, PipelineConfig, SelectConfig};
use crate::ica::{self, IcaDecomposition, InfomaxConfig};
use crate::metrics::{self, Phase, PhaseError};
use crate::predict::{self, MlpModel, PredictedTrace, SampleSet};
use crate::preprocess::{self, PreprocessConfig};
use crate::select::{self, HeuristicClassifier, IcContext, IcLabel, IcScore, NuConfig, Selection};
use crate::signal::{BrakeTrace, EegRecording, Epoch};
use crate::spectral::FeatureSeries;
use crate::{Error, Result};

/// Base directory for relative output paths.
pub const OUT_DIR_ENV: &str = "BRAKECAST_OUT_DIR";

pub const EPOCHS_MAGIC: &[u8; 4] = b"NBEP";
pub const EPOCHS_VERSION: u32 = 1;
pub const ARCHIVE_MAGIC: &[u8; 4] = b"NBMA";
pub const ARCHIVE_VERSION: u32 = 1;

/// Resolves `path` against [`OUT_DIR_ENV`] when it is relative and the variable is set.
pub fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(base) if path.is_relative() => Path::new(&base).join(path),
        _ => path.to_path_buf(),
    }
}

/// Preprocessed epochs of one recording plus the channel geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochFile {
    pub channel_names: Vec<String>,
    pub electrode_xy: Vec<[f64; 2]>,
    pub fs: f64,
    pub epochs: Vec<Epoch>,
    /// Onsets dropped for lacking a full epoch margin.
    pub skipped: usize,
}

impl EpochFile {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(EPOCHS_MAGIC);
        w.u32(EPOCHS_VERSION);
        w.f64(self.fs);
        w.len_u32(self.channel_names.len());
        for name in &self.channel_names {
            w.str(name);
        }
        for [x, y] in &self.electrode_xy {
            w.f64(*x);
            w.f64(*y);
        }
        w.u64(self.skipped as u64);
        w.len_u32(self.epochs.len());
        for e in &self.epochs {
            w.len_u32(e.n_samples());
            w.len_u32(e.t0_index());
            for ch in 0..e.n_channels() {
                w.f64_slice(&e.eeg().row(ch).iter().copied().collect::<Vec<_>>());
            }
            w.f64_slice(e.brake());
        }
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(EPOCHS_MAGIC, "epoch file magic")?;
        let at = r.offset();
        if r.u32("epoch file version")? != EPOCHS_VERSION {
            return Err(Error::Format {
                offset: at,
                field: "epoch file version",
                reason: "unsupported version".into(),
            });
        }
        let fs = r.f64("sampling rate")?;
        let nc = r.count("channel count", 4)?;
        let channel_names = (0..nc).map(|_| r.str("channel name")).collect::<Result<Vec<_>>>()?;
        let mut electrode_xy = Vec::with_capacity(nc);
        for _ in 0..nc {
            electrode_xy.push([r.f64("electrode x")?, r.f64("electrode y")?]);
        }
        let skipped = r.u64("skipped count")? as usize;
        let ne = r.count("epoch count", 8)?;
        let mut epochs = Vec::with_capacity(ne);
        for _ in 0..ne {
            let n = r.count("epoch length", 8 * (nc + 1))?;
            let t0 = r.u32("epoch onset")? as usize;
            let flat = r.f64_vec(nc * n, "epoch samples")?;
            let brake = r.f64_vec(n, "epoch brake")?;
            let eeg = DMatrix::from_row_slice(nc, n, &flat);
            let at = r.offset();
            let epoch = Epoch::new(eeg, brake, t0, fs).map_err(|e| Error::Format {
                offset: at,
                field: "epoch",
                reason: e.to_string(),
            })?;
            epochs.push(epoch);
        }
        r.finish("end of file")?;
        Ok(Self {
            channel_names,
            electrode_xy,
            fs,
            epochs,
            skipped,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

pub fn preprocess_stage(recording: &EegRecording, trace: &BrakeTrace, cfg: &PreprocessConfig) -> Result<EpochFile> {
    let set = preprocess::run_chain(recording, trace, cfg)?;
    Ok(EpochFile {
        channel_names: recording.channel_names().to_vec(),
        electrode_xy: recording.electrode_xy().to_vec(),
        fs: recording.fs(),
        epochs: set.epochs,
        skipped: set.skipped,
    })
}

/// Number of leading trials used for training; at least one trial lands on each side.
pub fn split_point(n_trials: usize, train_fraction: f64) -> Result<usize> {
    if n_trials < 2 {
        return Err(Error::invalid(format!(
            "a train/test split needs at least 2 trials, got {n_trials}"
        )));
    }
    Ok(((n_trials as f64 * train_fraction).floor() as usize).clamp(1, n_trials - 1))
}

pub fn fit_ica(train: &[Epoch], cfg: &InfomaxConfig) -> Result<IcaDecomposition> {
    ica::decompose(&preprocess::concat_epochs(train)?, cfg)
}

pub fn save_decomposition(decomp: &IcaDecomposition, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    ica::encode_section(decomp, &mut w);
    fs::write(path, w.into_bytes())?;
    Ok(())
}

pub fn load_decomposition(path: &Path) -> Result<IcaDecomposition> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes);
    let d = ica::decode_section(&mut r)?;
    r.finish("end of file")?;
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub scores: Vec<IcScore>,
    pub selection: Selection,
}

/// ν of every component on the training trials, artifact labels, and the top
/// fraction selection.
pub fn select_ics(train: &[Epoch], decomp: &IcaDecomposition, electrode_xy: &[[f64; 2]], cfg: &SelectConfig) -> Result<Scored> {
    let fs = train.first().ok_or_else(|| Error::invalid("no training trials"))?.fs();
    let data = preprocess::concat_epochs(train)?;
    let ctx = IcContext::build(decomp, &data, electrode_xy, fs)?;
    let mut scores = select::score_ics(train, decomp, &ctx, &HeuristicClassifier, cfg.horizon_ms, &cfg.nu)?;
    let selection = select::select_with_floor(&scores, cfg.top_fraction, cfg.min_selected)?;
    select::apply_selection(&mut scores, &selection);
    Ok(Scored { scores, selection })
}

/// The same ranking applied to raw electrodes, with no artifact screening.
pub fn select_electrodes(train: &[Epoch], cfg: &SelectConfig) -> Result<Scored> {
    let signals: Vec<DMatrix<f64>> = train.iter().map(|e| e.eeg().clone()).collect();
    let nus = select::nu_for_signals(&signals, train, cfg.horizon_ms, &cfg.nu)?;
    let mut scores: Vec<IcScore> = nus
        .iter()
        .enumerate()
        .map(|(i, c)| IcScore {
            ic_index: i,
            nu: c.nu,
            n_strong: c.n_strong,
            n_total: c.n_total,
            label: IcLabel::Brain,
            selected: false,
        })
        .collect();
    let selection = select::select_with_floor(&scores, cfg.top_fraction, cfg.min_selected)?;
    select::apply_selection(&mut scores, &selection);
    Ok(Scored { scores, selection })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// `(horizon, mean ν over components)`.
    pub mean_nu: Vec<(f64, f64)>,
    pub best_horizon_ms: f64,
}

impl SweepReport {
    pub fn to_text(&self) -> String {
        let mut out = String::from("[horizon_sweep]\n");
        for (h, nu) in &self.mean_nu {
            let _ = writeln!(out, "mean_nu_{h} = {nu}");
        }
        let _ = writeln!(out, "argmax_horizon_ms = {}", self.best_horizon_ms);
        out
    }
}

/// Mean ν per horizon; ties go to the earliest horizon listed.
pub fn horizon_report(epochs: &[Epoch], decomp: &IcaDecomposition, cfg: &SelectConfig) -> Result<SweepReport> {
    let sweep = select::horizon_sweep(epochs, decomp, &cfg.sweep_horizons_ms, &cfg.nu)?;
    let mean_nu: Vec<(f64, f64)> = sweep
        .iter()
        .map(|(h, counts)| (*h, counts.iter().map(|c| c.nu).sum::<f64>() / counts.len() as f64))
        .collect();
    let best = mean_nu
        .iter()
        .fold(None::<(f64, f64)>, |best, &(h, nu)| match best {
            Some((_, b)) if b >= nu => best,
            _ => Some((h, nu)),
        })
        .ok_or_else(|| Error::invalid("horizon sweep needs at least one horizon"))?;
    Ok(SweepReport {
        mean_nu,
        best_horizon_ms: best.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureSource {
    BrakeOnly,
    Electrodes,
    Ic,
    Csp,
    Dmd,
}

impl FeatureSource {
    pub fn tag(self) -> &'static str {
        match self {
            FeatureSource::BrakeOnly => "brake-only",
            FeatureSource::Electrodes => "eeg-electrodes",
            FeatureSource::Ic => "ic",
            FeatureSource::Csp => "csp",
            FeatureSource::Dmd => "dmd",
        }
    }

    fn code(self) -> u32 {
        self as u32
    }

    fn from_code(code: u32) -> Option<Self> {
        [Self::BrakeOnly, Self::Electrodes, Self::Ic, Self::Csp, Self::Dmd]
            .into_iter()
            .find(|s| s.code() == code)
    }
}

/// A feature source with or without the brake history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Arm {
    pub source: FeatureSource,
    pub include_brake: bool,
}

impl Arm {
    pub const fn new(source: FeatureSource, include_brake: bool) -> Self {
        Self { source, include_brake }
    }

    /// `<source>` or `<source>-no-brake`, e.g. `ic-no-brake`.
    pub fn parse(name: &str) -> Result<Self> {
        let (base, include_brake) = match name.strip_suffix("-no-brake") {
            Some(b) => (b, false),
            None => (name, true),
        };
        let source = [
            FeatureSource::BrakeOnly,
            FeatureSource::Electrodes,
            FeatureSource::Ic,
            FeatureSource::Csp,
            FeatureSource::Dmd,
        ]
        .into_iter()
        .find(|s| s.tag() == base)
        .ok_or_else(|| Error::invalid(format!("unknown arm `{name}`")))?;
        if source == FeatureSource::BrakeOnly && !include_brake {
            return Err(Error::invalid("arm `brake-only-no-brake` has no inputs"));
        }
        Ok(Self { source, include_brake })
    }

    pub fn name(&self) -> String {
        if self.include_brake {
            self.source.tag().to_string()
        } else {
            format!("{}-no-brake", self.source.tag())
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Turns one epoch into the feature series an arm feeds the predictor.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureExtractor {
    None,
    Channels(Vec<usize>),
    Components {
        decomp: IcaDecomposition,
        indices: Vec<usize>,
    },
    Csp {
        /// Channels the filters act on.
        channels: Vec<usize>,
        filters: CspFilters,
    },
    Dmd(DmdConfig),
}

fn rows_of(data: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), data.ncols(), |r, c| data[(rows[r], c)])
}

fn band_power_rows(data: &DMatrix<f64>, fs: f64, nu: &NuConfig) -> Result<Vec<FeatureSeries>> {
    data.row_iter()
        .map(|row| {
            let x: Vec<f64> = row.iter().copied().collect();
            crate::spectral::sliding_band_power(&x, fs, nu.window_ms, nu.step_ms, nu.band)
        })
        .collect()
}

impl FeatureExtractor {
    pub fn n_features(&self) -> usize {
        match self {
            FeatureExtractor::None => 0,
            FeatureExtractor::Channels(c) => c.len(),
            FeatureExtractor::Components { indices, .. } => indices.len(),
            FeatureExtractor::Csp { filters, .. } => filters.filters.nrows(),
            FeatureExtractor::Dmd(_) => 1,
        }
    }

    pub fn features(&self, epoch: &Epoch, nu: &NuConfig) -> Result<Vec<FeatureSeries>> {
        let fs = epoch.fs();
        match self {
            FeatureExtractor::None => Ok(Vec::new()),
            FeatureExtractor::Channels(c) => band_power_rows(&rows_of(epoch.eeg(), c), fs, nu),
            FeatureExtractor::Components { decomp, indices } => {
                let s = ica::sources(decomp, epoch.eeg())?;
                band_power_rows(&rows_of(&s, indices), fs, nu)
            }
            FeatureExtractor::Csp { channels, filters } => baselines::csp_feature_series(
                filters,
                &rows_of(epoch.eeg(), channels),
                fs,
                nu.window_ms,
                nu.step_ms,
                nu.band,
            ),
            FeatureExtractor::Dmd(cfg) => Ok(vec![baselines::dmd_spectrum_series(
                epoch.eeg(),
                fs,
                nu.window_ms,
                nu.step_ms,
                nu.band,
                cfg,
            )?]),
        }
    }

    fn encode(&self, w: &mut Writer) {
        let index_list = |w: &mut Writer, v: &[usize]| {
            w.len_u32(v.len());
            for &i in v {
                w.len_u32(i);
            }
        };
        match self {
            FeatureExtractor::None => w.u32(0),
            FeatureExtractor::Channels(c) => {
                w.u32(1);
                index_list(w, c);
            }
            FeatureExtractor::Components { decomp, indices } => {
                w.u32(2);
                index_list(w, indices);
                ica::encode_section(decomp, w);
            }
            FeatureExtractor::Csp { channels, filters } => {
                w.u32(3);
                index_list(w, channels);
                w.len_u32(filters.filters.nrows());
                for row in filters.filters.row_iter() {
                    w.f64_slice(&row.iter().copied().collect::<Vec<_>>());
                }
                w.f64_slice(&filters.eigvals);
            }
            FeatureExtractor::Dmd(cfg) => {
                w.u32(4);
                w.len_u32(cfg.delays);
                w.len_u32(cfg.rank);
            }
        }
    }

    fn decode(r: &mut Reader) -> Result<Self> {
        let index_list = |r: &mut Reader| -> Result<Vec<usize>> {
            let n = r.count("index count", 4)?;
            (0..n).map(|_| r.u32("index").map(|v| v as usize)).collect()
        };
        let at = r.offset();
        match r.u32("extractor kind")? {
            0 => Ok(FeatureExtractor::None),
            1 => Ok(FeatureExtractor::Channels(index_list(r)?)),
            2 => {
                let indices = index_list(r)?;
                let decomp = ica::decode_section(r)?;
                if let Some(&i) = indices.iter().find(|&&i| i >= decomp.n_components()) {
                    return Err(r.error("component index", format!("{i} out of range")));
                }
                Ok(FeatureExtractor::Components { decomp, indices })
            }
            3 => {
                let channels = index_list(r)?;
                let k = r.count("filter count", 8 * channels.len())?;
                let flat = r.f64_vec(k * channels.len(), "CSP filters")?;
                let eigvals = r.f64_vec(k, "CSP eigenvalues")?;
                Ok(FeatureExtractor::Csp {
                    filters: CspFilters {
                        filters: DMatrix::from_row_slice(k, channels.len(), &flat),
                        eigvals,
                    },
                    channels,
                })
            }
            4 => Ok(FeatureExtractor::Dmd(DmdConfig {
                delays: r.u32("DMD delays")? as usize,
                rank: r.u32("DMD rank")? as usize,
            })),
            other => Err(Error::Format {
                offset: at,
                field: "extractor kind",
                reason: format!("unknown kind {other}"),
            }),
        }
    }
}

/// Stage outputs shared by every arm of one subject.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub decomp: IcaDecomposition,
    pub ics: Scored,
    pub electrodes: Scored,
}

pub fn prepare(train: &[Epoch], electrode_xy: &[[f64; 2]], cfg: &PipelineConfig) -> Result<Prepared> {
    let decomp = fit_ica(train, &cfg.ica)?;
    let ics = select_ics(train, &decomp, electrode_xy, &cfg.select)?;
    let electrodes = select_electrodes(train, &cfg.select)?;
    Ok(Prepared { decomp, ics, electrodes })
}

/// Builds the arm's feature extractor from the training trials.
pub fn fit_extractor(arm: Arm, train: &[Epoch], prepared: &Prepared, cfg: &PipelineConfig) -> Result<FeatureExtractor> {
    Ok(match arm.source {
        FeatureSource::BrakeOnly => FeatureExtractor::None,
        FeatureSource::Electrodes => FeatureExtractor::Channels(prepared.electrodes.selection.indices.clone()),
        FeatureSource::Ic => FeatureExtractor::Components {
            decomp: prepared.decomp.clone(),
            indices: prepared.ics.selection.indices.clone(),
        },
        FeatureSource::Csp => {
            let m = train.first().ok_or_else(|| Error::invalid("no training trials"))?.n_channels();
            // the average reference makes the last channel redundant
            let keep = if cfg.preprocess.apply_car { m - 1 } else { m };
            let channels: Vec<usize> = (0..keep).collect();
            let reduced: Vec<Epoch> = train
                .iter()
                .map(|e| e.with_eeg(rows_of(e.eeg(), &channels)))
                .collect::<Result<_>>()?;
            let (rest, braking) = baselines::csp_class_segments(&reduced)?;
            FeatureExtractor::Csp {
                channels,
                filters: baselines::csp_fit(&braking, &rest)?,
            }
        }
        FeatureSource::Dmd => FeatureExtractor::Dmd(cfg.dmd.clone()),
    })
}

pub fn epoch_samples(
    extractor: &FeatureExtractor,
    epochs: &[Epoch],
    nu: &NuConfig,
    delta_t_ms: f64,
    include_brake: bool,
) -> Result<SampleSet> {
    let sets = epochs
        .iter()
        .map(|e| predict::build_samples(&extractor.features(e, nu)?, &e.brake_trace()?, delta_t_ms, include_brake))
        .collect::<Result<Vec<_>>>()?;
    SampleSet::concat(&sets)
}

/// A trained arm: everything needed to predict from a raw epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub arm: Arm,
    pub delta_t_ms: f64,
    pub nu: NuConfig,
    pub extractor: FeatureExtractor,
    pub model: MlpModel,
    pub config_fingerprint: String,
}

impl TrainedModel {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(ARCHIVE_MAGIC);
        w.u32(ARCHIVE_VERSION);
        w.str(&self.config_fingerprint);
        w.u32(self.arm.source.code());
        w.u32(u32::from(self.arm.include_brake));
        w.f64(self.delta_t_ms);
        w.f64(self.nu.window_ms);
        w.f64(self.nu.step_ms);
        w.f64(self.nu.band.0);
        w.f64(self.nu.band.1);
        w.f64(self.nu.threshold);
        self.extractor.encode(&mut w);
        predict::encode_section(&self.model, &mut w);
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(ARCHIVE_MAGIC, "model archive magic")?;
        let at = r.offset();
        if r.u32("model archive version")? != ARCHIVE_VERSION {
            return Err(Error::Format {
                offset: at,
                field: "model archive version",
                reason: "unsupported version".into(),
            });
        }
        let config_fingerprint = r.str("config fingerprint")?;
        let at = r.offset();
        let code = r.u32("feature source")?;
        let source = FeatureSource::from_code(code).ok_or_else(|| Error::Format {
            offset: at,
            field: "feature source",
            reason: format!("unknown code {code}"),
        })?;
        let include_brake = r.u32("brake flag")? != 0;
        let delta_t_ms = r.f64("horizon")?;
        let nu = NuConfig {
            window_ms: r.f64("window")?,
            step_ms: r.f64("step")?,
            band: (r.f64("band low")?, r.f64("band high")?),
            threshold: r.f64("threshold")?,
        };
        let extractor = FeatureExtractor::decode(&mut r)?;
        let model = predict::decode_section(&mut r)?;
        r.finish("end of file")?;
        let expected = predict::n_inputs(extractor.n_features(), include_brake);
        if model.n_inputs() != expected {
            return Err(r.error(
                "model input width",
                format!("{} inputs but the extractor yields {expected}", model.n_inputs()),
            ));
        }
        Ok(Self {
            arm: Arm::new(source, include_brake),
            delta_t_ms,
            nu,
            extractor,
            model,
            config_fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    /// Open-loop predictions over one epoch.
    pub fn predict_epoch(&self, epoch: &Epoch) -> Result<PredictedTrace> {
        let features = self.extractor.features(epoch, &self.nu)?;
        predict::rolling_predict(
            &self.model,
            &features,
            &epoch.brake_trace()?,
            self.delta_t_ms,
            self.arm.include_brake,
        )
    }
}

pub fn train_arm(arm: Arm, train: &[Epoch], prepared: &Prepared, cfg: &PipelineConfig) -> Result<TrainedModel> {
    let extractor = fit_extractor(arm, train, prepared, cfg)?;
    let horizon = cfg.select.horizon_ms;
    let set = epoch_samples(&extractor, train, &cfg.select.nu, horizon, arm.include_brake)?;
    let model = MlpModel::standard(set.n_inputs(), cfg.predict.train.seed)?;
    let model = predict::train(model, &set, &cfg.predict.train)?;
    Ok(TrainedModel {
        arm,
        delta_t_ms: horizon,
        nu: cfg.select.nu.clone(),
        extractor,
        model,
        config_fingerprint: cfg.fingerprint()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub subject: String,
    pub feature_source: String,
    pub horizon_ms: f64,
    pub rmse: f64,
    pub r2: f64,
    pub rmse_clamped: f64,
    pub n_samples: usize,
    pub n_features: usize,
    pub phases: Vec<PhaseError>,
    pub config_fingerprint: String,
}

/// Predictions of every epoch, flattened, with phase labels.
pub struct Evaluation {
    pub traces: Vec<PredictedTrace>,
    pub measured: Vec<f64>,
    pub predicted: Vec<f64>,
    pub phases: Vec<Phase>,
}

pub fn predict_epochs(model: &TrainedModel, epochs: &[Epoch]) -> Result<Evaluation> {
    let mut out = Evaluation {
        traces: Vec::new(),
        measured: Vec::new(),
        predicted: Vec::new(),
        phases: Vec::new(),
    };
    for e in epochs {
        let trace = model.predict_epoch(e)?;
        let onset_ms = e.t0_index() as f64 / e.fs() * 1000.0;
        let onset = trace.timestamps_ms.iter().position(|&t| t >= onset_ms);
        match onset {
            Some(o) => out.phases.extend(metrics::phase_labels(&trace.measured, o)?),
            None => out.phases.extend(std::iter::repeat_n(Phase::Preparation, trace.measured.len())),
        }
        out.measured.extend_from_slice(&trace.measured);
        out.predicted.extend_from_slice(&trace.predicted);
        out.traces.push(trace);
    }
    Ok(out)
}

pub fn evaluate(model: &TrainedModel, test: &[Epoch], subject: &str) -> Result<EvalReport> {
    let ev = predict_epochs(model, test)?;
    Ok(EvalReport {
        subject: subject.to_string(),
        feature_source: model.arm.name(),
        horizon_ms: model.delta_t_ms,
        rmse: metrics::rmse(&ev.measured, &ev.predicted)?,
        r2: metrics::r_square(&ev.measured, &ev.predicted)?,
        rmse_clamped: metrics::rmse_clamped(&ev.measured, &ev.predicted)?,
        n_samples: ev.measured.len(),
        n_features: model.extractor.n_features(),
        phases: metrics::phase_errors(&ev.measured, &ev.predicted, &ev.phases)?,
        config_fingerprint: model.config_fingerprint.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub subject: String,
    pub n_train: usize,
    pub n_test: usize,
    pub prepared: Prepared,
    pub models: Vec<TrainedModel>,
    pub reports: Vec<EvalReport>,
}

/// Every configured arm on one subject, sharing the split, decomposition and seeds.
pub fn run_ablation(subject: &str, epochs: &EpochFile, cfg: &PipelineConfig) -> Result<AblationOutcome> {
    cfg.validate()?;
    let arms = cfg
        .ablation
        .arms
        .iter()
        .map(|a| Arm::parse(a))
        .collect::<Result<Vec<_>>>()?;
    let n_train = split_point(epochs.epochs.len(), cfg.predict.train_fraction)?;
    let (train, test) = epochs.epochs.split_at(n_train);
    let prepared = prepare(train, &epochs.electrode_xy, cfg)?;
    let mut models = Vec::new();
    let mut reports = Vec::new();
    for arm in arms {
        let model = train_arm(arm, train, &prepared, cfg)?;
        reports.push(evaluate(&model, test, subject)?);
        models.push(model);
    }
    Ok(AblationOutcome {
        subject: subject.to_string(),
        n_train,
        n_test: test.len(),
        prepared,
        models,
        reports,
    })
}

pub const REPORT_CSV_HEADER: &str = "subject,feature_source,horizon_ms,rmse,r2";

pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{REPORT_CSV_HEADER}\n");
    for r in reports {
        let _ = writeln!(out, "{},{},{},{},{}", r.subject, r.feature_source, r.horizon_ms, r.rmse, r.r2);
    }
    out
}

/// Rows of a report CSV as `(subject, feature_source, horizon_ms, rmse, r2)`.
pub fn reports_from_csv(text: &str) -> Result<Vec<(String, String, f64, f64, f64)>> {
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_CSV_HEADER) {
        return Err(Error::invalid("unexpected report CSV header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::invalid(format!("report CSV row {} is malformed: `{line}`", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            Ok((
                f[0].to_string(),
                f[1].to_string(),
                f[2].parse().map_err(|_| bad())?,
                f[3].parse().map_err(|_| bad())?,
                f[4].parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

/// `key = value` sections, one per report.
pub fn reports_to_text(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(out, "[{}.{}]", r.subject, r.feature_source);
        let _ = writeln!(out, "subject = {}", r.subject);
        let _ = writeln!(out, "feature_source = {}", r.feature_source);
        let _ = writeln!(out, "horizon_ms = {}", r.horizon_ms);
        let _ = writeln!(out, "rmse = {}", r.rmse);
        let _ = writeln!(out, "rmse_clamped = {}", r.rmse_clamped);
        let _ = writeln!(out, "r2 = {}", r.r2);
        let _ = writeln!(out, "n_samples = {}", r.n_samples);
        let _ = writeln!(out, "n_features = {}", r.n_features);
        for p in &r.phases {
            match p.rmse {
                Some(v) => {
                    let _ = writeln!(out, "rmse_{} = {v}", p.phase.as_str());
                }
                None => {
                    let _ = writeln!(out, "rmse_{} = none", p.phase.as_str());
                }
            }
        }
        let _ = writeln!(out, "config_fingerprint = {}", r.config_fingerprint);
        out.push('\n');
    }
    out
}

/// Parses [`reports_to_text`] output into `section → key → value`.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, BTreeMap<String, String>>> {
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut section = String::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.to_string();
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| Error::invalid(format!("line {} is not `key = value`: `{line}`", i + 1)))?;
        out.entry(section.clone()).or_default().insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

/// Mean RMSE and R² per `(feature_source, horizon)` across subjects.
pub fn aggregate(rows: &[(String, String, f64, f64, f64)]) -> Vec<(String, String, f64, f64, f64)> {
    let mut groups: BTreeMap<(String, u64), (f64, f64, usize)> = BTreeMap::new();
    let mut order = Vec::new();
    for (_, source, h, rmse, r2) in rows {
        let key = (source.clone(), h.to_bits());
        let e = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            (0.0, 0.0, 0)
        });
        e.0 += rmse;
        e.1 += r2;
        e.2 += 1;
    }
    order
        .into_iter()
        .map(|key| {
            let (s, r, n) = groups[&key];
            ("all".to_string(), key.0, f64::from_bits(key.1), s / n as f64, r / n as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: config::sha256_hex(&bytes),
        })
    }
}

/// What a stage ran with and what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_fingerprint: String,
    pub seed: u64,
    pub args: Vec<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arm_names_round_trip() {
        for name in ["brake-only", "eeg-electrodes", "ic", "ic-no-brake", "csp", "dmd-no-brake"] {
            assert_eq!(Arm::parse(name).unwrap().name(), name);
        }
        assert!(Arm::parse("brake-only-no-brake").is_err());
        assert!(Arm::parse("ica").is_err());
    }

    #[test]
    fn split_keeps_both_sides() {
        assert_eq!(split_point(30, 0.8).unwrap(), 24);
        assert_eq!(split_point(2, 0.8).unwrap(), 1);
        assert_eq!(split_point(10, 0.01).unwrap(), 1);
        assert!(split_point(1, 0.8).is_err());
    }

    #[test]
    fn key_values_parse() {
        let kv = parse_key_values("[a.ic]\nrmse = 0.5\n\n[b]\nx = y z\n").unwrap();
        assert_eq!(kv["a.ic"]["rmse"], "0.5");
        assert_eq!(kv["b"]["x"], "y z");
        assert!(parse_key_values("oops\n").is_err());
    }

    #[test]
    fn aggregate_means_per_source() {
        let rows = vec![
            ("s1".into(), "ic".into(), 200.0, 0.1, 0.5),
            ("s2".into(), "ic".into(), 200.0, 0.3, 0.7),
            ("s1".into(), "brake-only".into(), 200.0, 0.2, 0.4),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].1, "ic");
        assert!((agg[0].3 - 0.2).abs() < 1e-15 && (agg[0].4 - 0.6).abs() < 1e-15);
    }

    #[test]
    fn epoch_file_round_trip() {
        let eeg = DMatrix::from_fn(2, 5, |r, c| (r * 5 + c) as f64 * 0.1);
        let e = Epoch::new(eeg, vec![0.0, 0.1, 0.2, 0.3, 0.4], 2, 200.0).unwrap();
        let file = EpochFile {
            channel_names: vec!["Cz".into(), "Pz".into()],
            electrode_xy: vec![[0.0, 0.0], [0.0, -0.3]],
            fs: 200.0,
            epochs: vec![e.clone(), e],
            skipped: 7,
        };
        let bytes = file.encode();
        assert_eq!(EpochFile::decode(&bytes).unwrap(), file);
        assert!(EpochFile::decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
