use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brakecast::cluster::{self, ScalpMap};
use brakecast::config::PipelineConfig;
use brakecast::pipeline::{self, Arm, EpochFile, FileDigest, Manifest, Prepared, TrainedModel};
use brakecast::select::{self, IcScore};
use brakecast::signal;
use brakecast::synth;
use brakecast::Epoch;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "brakecast", version, about = "EEG braking-intensity prediction pipeline")]
struct Cli {
    /// TOML pipeline configuration; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic recording with known sources.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        /// Drive the brake from a source that never reaches the EEG.
        #[arg(long)]
        null: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter, epoch, baseline-correct and re-reference a recording.
    Preprocess {
        /// `.nbrk` recording, or a CSV whose last column is the brake trace.
        #[arg(long)]
        input: PathBuf,
        /// Sampling rate of a CSV input.
        #[arg(long)]
        fs: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the decomposition on the training trials.
    Ica {
        #[arg(long)]
        epochs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score and select braking-related components.
    Select {
        #[arg(long)]
        epochs: PathBuf,
        #[arg(long)]
        decomposition: PathBuf,
        /// Horizons to sweep, in ms.
        #[arg(long, value_delimiter = ',')]
        horizon: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster scalp maps of selected components across subjects.
    Cluster {
        /// One `epochs,decomposition,scores` triple per subject.
        #[arg(long = "subject", value_name = "EPOCHS,DECOMP,SCORES", required = true)]
        subjects: Vec<String>,
        /// Use every non-artifact component instead of the selected ones.
        #[arg(long)]
        all_retained: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one feature arm.
    Train {
        #[command(flatten)]
        input: TrainInput,
        #[arg(long)]
        arm: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the held-out trials with a trained arm.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        epochs: PathBuf,
        /// Predict every trial rather than the held-out ones.
        #[arg(long)]
        all: bool,
        #[arg(long, default_value = "s0")]
        subject: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every configured arm on each subject.
    Ablate {
        #[arg(long, value_delimiter = ',', required = true)]
        epochs: Vec<PathBuf>,
        /// Subject names; defaults to the file stems.
        #[arg(long, value_delimiter = ',')]
        subject: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average report CSVs over subjects.
    Report {
        #[arg(long, value_delimiter = ',', required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainInput {
    #[arg(long)]
    epochs: PathBuf,
    /// Reuse a fitted decomposition instead of fitting one.
    #[arg(long)]
    decomposition: Option<PathBuf>,
}

struct Failure {
    stage: &'static str,
    message: String,
}

type Outcome<T> = Result<T, Failure>;

trait Context<T> {
    fn during(self, stage: &'static str, what: impl std::fmt::Display) -> Outcome<T>;
}

impl<T, E: std::fmt::Display> Context<T> for Result<T, E> {
    fn during(self, stage: &'static str, what: impl std::fmt::Display) -> Outcome<T> {
        self.map_err(|e| Failure {
            stage,
            message: format!("{what}: {e}"),
        })
    }
}

fn fail<T>(stage: &'static str, message: impl Into<String>) -> Outcome<T> {
    Err(Failure {
        stage,
        message: message.into(),
    })
}

fn require(stage: &'static str, path: &Path) -> Outcome<()> {
    if path.is_file() {
        Ok(())
    } else {
        fail(stage, format!("missing input file {}", path.display()))
    }
}

fn out_dir(stage: &'static str, path: &Path) -> Outcome<PathBuf> {
    let dir = pipeline::resolve_out(path);
    fs::create_dir_all(&dir).during(stage, format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(stage: &'static str, path: &Path, bytes: impl AsRef<[u8]>) -> Outcome<PathBuf> {
    fs::write(path, bytes).during(stage, format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn digests(stage: &'static str, paths: &[&Path]) -> Outcome<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| FileDigest::of(p).during(stage, format!("hashing {}", p.display())))
        .collect()
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    args: Vec<String>,
}

impl Run<'_> {
    fn manifest(&self, stage: &'static str, dir: &Path, seed: u64, inputs: &[&Path], outputs: &[PathBuf]) -> Outcome<()> {
        let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
        let m = Manifest {
            stage: stage.to_string(),
            config_fingerprint: self.cfg.fingerprint().during(stage, "fingerprinting config")?,
            seed,
            args: self.args.clone(),
            inputs: digests(stage, inputs)?,
            outputs: digests(stage, &outs)?,
        };
        let text = m.to_toml().during(stage, "serializing manifest")?;
        write(stage, &dir.join(format!("manifest.{stage}.toml")), text)?;
        Ok(())
    }
}

fn load_epochs(stage: &'static str, path: &Path) -> Outcome<EpochFile> {
    require(stage, path)?;
    EpochFile::load(path).during(stage, format!("reading {}", path.display()))
}

fn train_split<'e>(stage: &'static str, file: &'e EpochFile, cfg: &PipelineConfig) -> Outcome<(&'e [Epoch], &'e [Epoch])> {
    let n = pipeline::split_point(file.epochs.len(), cfg.predict.train_fraction).during(stage, "splitting trials")?;
    Ok(file.epochs.split_at(n))
}

fn synth_cmd(run: &Run, seed: Option<u64>, null: bool, out: &Path) -> Outcome<()> {
    const S: &str = "synth";
    let mut cfg = run.cfg.synth.clone();
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if null {
        cfg.informative = false;
    }
    let dir = out_dir(S, out)?;
    let (rec, trace, truth) = synth::generate(&cfg).during(S, "generating data")?;
    let trials = dir.join("trials.nbrk");
    signal::save_recording(&rec, &trace, &trials).during(S, format!("writing {}", trials.display()))?;
    let truth_path = write(S, &dir.join("truth.nbtr"), synth::encode_truth(&truth))?;
    run.manifest(S, &dir, cfg.seed, &[], &[trials, truth_path])
}

fn preprocess_cmd(run: &Run, input: &Path, fs_hz: Option<f64>, out: &Path) -> Outcome<()> {
    const S: &str = "preprocess";
    require(S, input)?;
    let is_csv = input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let (rec, trace) = if is_csv {
        let Some(fs_hz) = fs_hz else {
            return fail(S, "CSV input needs --fs");
        };
        signal::load_csv(input, fs_hz)
    } else {
        signal::load_recording(input)
    }
    .during(S, format!("reading {}", input.display()))?;
    let file = pipeline::preprocess_stage(&rec, &trace, &run.cfg.preprocess).during(S, "preprocessing")?;
    if file.skipped > 0 {
        eprintln!("preprocess: skipped {} onsets without a full epoch margin", file.skipped);
    }
    let dir = out_dir(S, out)?;
    let path = dir.join("epochs.nbep");
    file.save(&path).during(S, format!("writing {}", path.display()))?;
    run.manifest(S, &dir, run.cfg.synth.seed, &[input], &[path])
}

fn ica_cmd(run: &Run, epochs: &Path, out: &Path) -> Outcome<()> {
    const S: &str = "ica";
    let file = load_epochs(S, epochs)?;
    let (train, _) = train_split(S, &file, run.cfg)?;
    let d = pipeline::fit_ica(train, &run.cfg.ica).during(S, "fitting decomposition")?;
    if !d.converged {
        eprintln!("ica: stopped after {} iterations without converging", d.iterations);
    }
    let dir = out_dir(S, out)?;
    let path = dir.join("decomposition.nbica");
    pipeline::save_decomposition(&d, &path).during(S, format!("writing {}", path.display()))?;
    run.manifest(S, &dir, run.cfg.ica.seed, &[epochs], &[path])
}

fn load_decomposition(stage: &'static str, path: &Path) -> Outcome<brakecast::ica::IcaDecomposition> {
    require(stage, path)?;
    pipeline::load_decomposition(path).during(stage, format!("reading {}", path.display()))
}

fn select_cmd(run: &Run, epochs: &Path, decomposition: &Path, horizons: &[f64], out: &Path) -> Outcome<()> {
    const S: &str = "select";
    let file = load_epochs(S, epochs)?;
    let decomp = load_decomposition(S, decomposition)?;
    let (train, _) = train_split(S, &file, run.cfg)?;
    let mut cfg = run.cfg.select.clone();
    if !horizons.is_empty() {
        cfg.sweep_horizons_ms = horizons.to_vec();
        let mut probe = run.cfg.clone();
        probe.select.sweep_horizons_ms = cfg.sweep_horizons_ms.clone();
        probe.validate().during(S, "checking --horizon")?;
    }
    let scored = pipeline::select_ics(train, &decomp, &file.electrode_xy, &cfg).during(S, "scoring components")?;
    if scored.selection.all_artifacts {
        eprintln!("select: every component carries an artifact label; nothing selected");
    }
    let sweep = pipeline::horizon_report(train, &decomp, &cfg).during(S, "sweeping horizons")?;
    let dir = out_dir(S, out)?;
    let scores = write(S, &dir.join("scores.csv"), select::scores_to_csv(&scored.scores))?;
    let mut text = String::from("[selection]\n");
    let _ = writeln!(text, "horizon_ms = {}", cfg.horizon_ms);
    match scored.selection.threshold {
        Some(t) => {
            let _ = writeln!(text, "threshold = {t}");
        }
        None => text.push_str("threshold = none\n"),
    }
    let idx: Vec<String> = scored.selection.indices.iter().map(usize::to_string).collect();
    let _ = writeln!(text, "selected = {}", idx.join(","));
    text.push('\n');
    text.push_str(&sweep.to_text());
    let report = write(S, &dir.join("select_report.txt"), text)?;
    run.manifest(S, &dir, run.cfg.ica.seed, &[epochs, decomposition], &[scores, report])
}

fn cluster_cmd(run: &Run, subjects: &[String], all_retained: bool, out: &Path) -> Outcome<()> {
    const S: &str = "cluster";
    let mut maps = Vec::new();
    let mut origin = Vec::new();
    let mut inputs = Vec::new();
    for (si, spec) in subjects.iter().enumerate() {
        let parts: Vec<PathBuf> = spec.split(',').map(PathBuf::from).collect();
        let [epochs, decomposition, scores] = parts.as_slice() else {
            return fail(S, format!("--subject `{spec}` must be EPOCHS,DECOMP,SCORES"));
        };
        let file = load_epochs(S, epochs)?;
        let decomp = load_decomposition(S, decomposition)?;
        require(S, scores)?;
        let text = fs::read_to_string(scores).during(S, format!("reading {}", scores.display()))?;
        let scores_list: Vec<IcScore> = select::scores_from_csv(&text).during(S, format!("parsing {}", scores.display()))?;
        for s in scores_list {
            let keep = if all_retained { !s.label.is_artifact() } else { s.selected };
            if !keep {
                continue;
            }
            let col = brakecast::ica::scalp_column(&decomp, s.ic_index).during(S, "reading scalp column")?;
            let w: Vec<f64> = col.iter().copied().collect();
            let map = cluster::render_scalp_map(&w, &file.electrode_xy).during(S, "rendering scalp map")?;
            maps.push(map.vectorize());
            origin.push((si, s.ic_index));
        }
        inputs.extend([epochs.clone(), decomposition.clone(), scores.clone()]);
    }
    if maps.len() < 2 {
        return fail(S, format!("clustering needs at least 2 maps, found {}", maps.len()));
    }
    let c = &run.cfg.cluster;
    let k = c.k.min(maps.len());
    let res = cluster::cluster_maps(&maps, c.variance_fraction, k, c.k_max).during(S, "clustering maps")?;
    let dir = out_dir(S, out)?;
    let mut outputs = vec![write(S, &dir.join("dendrogram.csv"), res.dendrogram.to_text())?];
    let mut wss = String::from("k,wss\n");
    for (k, w) in &res.wss {
        let _ = writeln!(wss, "{k},{w}");
    }
    outputs.push(write(S, &dir.join("wss.csv"), wss)?);
    let mut labels = String::from("subject,ic_index,sign,cluster\n");
    for (i, (s, ic)) in origin.iter().enumerate() {
        let _ = writeln!(labels, "{s},{ic},{},{}", res.signs[i], res.labels[i]);
    }
    outputs.push(write(S, &dir.join("labels.csv"), labels)?);
    let template = cluster::render_scalp_map(&vec![1.0; 4], &[[0.5, 0.0], [-0.5, 0.0], [0.0, 0.5], [0.0, -0.5]])
        .during(S, "building mask")?;
    for cl in 0..k {
        let members: Vec<usize> = (0..maps.len()).filter(|&i| res.labels[i] == cl).collect();
        let mut centroid = vec![0.0; maps[0].len()];
        for &i in &members {
            for (c, v) in centroid.iter_mut().zip(&maps[i]) {
                *c += res.signs[i] * v / members.len() as f64;
            }
        }
        let mut values = centroid.into_iter();
        let grid = template.grid.iter().map(|cell| cell.and_then(|_| values.next())).collect();
        let map = ScalpMap { grid, source_ic: None };
        outputs.push(write(S, &dir.join(format!("centroid_{cl}.csv")), map.to_csv())?);
    }
    let ins: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    run.manifest(S, &dir, run.cfg.ica.seed, &ins, &outputs)
}

fn prepared_for(stage: &'static str, run: &Run, train: &[Epoch], file: &EpochFile, decomposition: Option<&Path>) -> Outcome<Prepared> {
    let cfg = run.cfg;
    match decomposition {
        None => pipeline::prepare(train, &file.electrode_xy, cfg).during(stage, "fitting shared stages"),
        Some(p) => {
            let decomp = load_decomposition(stage, p)?;
            let ics = pipeline::select_ics(train, &decomp, &file.electrode_xy, &cfg.select).during(stage, "scoring components")?;
            let electrodes = pipeline::select_electrodes(train, &cfg.select).during(stage, "scoring electrodes")?;
            Ok(Prepared { decomp, ics, electrodes })
        }
    }
}

fn train_cmd(run: &Run, input: &TrainInput, arm: &str, out: &Path) -> Outcome<()> {
    const S: &str = "train";
    let arm = Arm::parse(arm).during(S, "parsing --arm")?;
    let file = load_epochs(S, &input.epochs)?;
    let (train, _) = train_split(S, &file, run.cfg)?;
    let prepared = prepared_for(S, run, train, &file, input.decomposition.as_deref())?;
    let model = pipeline::train_arm(arm, train, &prepared, run.cfg).during(S, format!("training arm {arm}"))?;
    let dir = out_dir(S, out)?;
    let path = dir.join(format!("{}.nbma", arm.name()));
    model.save(&path).during(S, format!("writing {}", path.display()))?;
    let mut inputs: Vec<&Path> = vec![&input.epochs];
    inputs.extend(input.decomposition.as_deref());
    run.manifest(S, &dir, run.cfg.predict.train.seed, &inputs, &[path])
}

fn predict_cmd(run: &Run, model_path: &Path, epochs: &Path, all: bool, subject: &str, out: &Path) -> Outcome<()> {
    const S: &str = "predict";
    require(S, model_path)?;
    let model = TrainedModel::load(model_path).during(S, format!("reading {}", model_path.display()))?;
    if model.config_fingerprint != run.cfg.fingerprint().during(S, "fingerprinting config")? {
        eprintln!("predict: model was trained under a different configuration");
    }
    let file = load_epochs(S, epochs)?;
    let (n_train, trials) = if all {
        (0, file.epochs.as_slice())
    } else {
        let (train, test) = train_split(S, &file, run.cfg)?;
        (train.len(), test)
    };
    let ev = pipeline::predict_epochs(&model, trials).during(S, "predicting")?;
    let report = pipeline::evaluate(&model, trials, subject).during(S, "scoring predictions")?;
    let mut csv = String::from("trial,timestamp_ms,measured,predicted\n");
    for (i, t) in ev.traces.iter().enumerate() {
        for j in 0..t.timestamps_ms.len() {
            let _ = writeln!(csv, "{},{},{},{}", n_train + i, t.timestamps_ms[j], t.measured[j], t.predicted[j]);
        }
    }
    let dir = out_dir(S, out)?;
    let outputs = vec![
        write(S, &dir.join("predictions.csv"), csv)?,
        write(S, &dir.join("report.csv"), pipeline::reports_to_csv(std::slice::from_ref(&report)))?,
        write(S, &dir.join("report.txt"), pipeline::reports_to_text(std::slice::from_ref(&report)))?,
    ];
    run.manifest(S, &dir, run.cfg.predict.train.seed, &[model_path, epochs], &outputs)
}

fn ablate_cmd(run: &Run, epochs: &[PathBuf], subjects: &[String], out: &Path) -> Outcome<()> {
    const S: &str = "ablate";
    if !subjects.is_empty() && subjects.len() != epochs.len() {
        return fail(S, format!("{} subject names for {} epoch files", subjects.len(), epochs.len()));
    }
    let names: Vec<String> = epochs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            subjects.get(i).cloned().unwrap_or_else(|| {
                p.file_stem().map_or_else(|| format!("s{i}"), |s| s.to_string_lossy().into_owned())
            })
        })
        .collect();
    let files = epochs.iter().map(|p| load_epochs(S, p)).collect::<Outcome<Vec<_>>>()?;
    let outcomes = std::thread::scope(|scope| {
        let handles: Vec<_> = files
            .iter()
            .zip(&names)
            .map(|(f, name)| scope.spawn(move || pipeline::run_ablation(name, f, run.cfg)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("ablation thread panicked")).collect::<Vec<_>>()
    });
    let dir = out_dir(S, out)?;
    let mut reports = Vec::new();
    let mut outputs = Vec::new();
    for (outcome, name) in outcomes.into_iter().zip(&names) {
        let outcome = outcome.during(S, format!("subject {name}"))?;
        let models = dir.join("models").join(name);
        fs::create_dir_all(&models).during(S, format!("creating {}", models.display()))?;
        for m in &outcome.models {
            let path = models.join(format!("{}.nbma", m.arm.name()));
            m.save(&path).during(S, format!("writing {}", path.display()))?;
            outputs.push(path);
        }
        reports.extend(outcome.reports);
    }
    outputs.push(write(S, &dir.join("reports.csv"), pipeline::reports_to_csv(&reports))?);
    outputs.push(write(S, &dir.join("report.txt"), pipeline::reports_to_text(&reports))?);
    let ins: Vec<&Path> = epochs.iter().map(PathBuf::as_path).collect();
    run.manifest(S, &dir, run.cfg.predict.train.seed, &ins, &outputs)
}

fn report_cmd(run: &Run, inputs: &[PathBuf], out: &Path) -> Outcome<()> {
    const S: &str = "report";
    let mut rows = Vec::new();
    for p in inputs {
        require(S, p)?;
        let text = fs::read_to_string(p).during(S, format!("reading {}", p.display()))?;
        rows.extend(pipeline::reports_from_csv(&text).during(S, format!("parsing {}", p.display()))?);
    }
    let agg = pipeline::aggregate(&rows);
    let mut csv = format!("{}\n", pipeline::REPORT_CSV_HEADER);
    let mut text = String::new();
    for (subject, source, h, rmse, r2) in &agg {
        let _ = writeln!(csv, "{subject},{source},{h},{rmse},{r2}");
        let _ = writeln!(text, "[{subject}.{source}]");
        let _ = writeln!(text, "horizon_ms = {h}\nrmse = {rmse}\nr2 = {r2}\n");
    }
    let dir = out_dir(S, out)?;
    let outputs = vec![
        write(S, &dir.join("summary.csv"), csv)?,
        write(S, &dir.join("summary.txt"), text)?,
    ];
    let ins: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    run.manifest(S, &dir, run.cfg.predict.train.seed, &ins, &outputs)
}

fn execute(cli: Cli, args: Vec<String>) -> Outcome<()> {
    let cfg = match &cli.config {
        Some(p) => {
            require("config", p)?;
            PipelineConfig::load(p).during("config", format!("loading {}", p.display()))?
        }
        None => PipelineConfig::default(),
    };
    let run = Run { cfg: &cfg, args };
    match &cli.command {
        Command::Synth { seed, null, out } => synth_cmd(&run, *seed, *null, out),
        Command::Preprocess { input, fs, out } => preprocess_cmd(&run, input, *fs, out),
        Command::Ica { epochs, out } => ica_cmd(&run, epochs, out),
        Command::Select {
            epochs,
            decomposition,
            horizon,
            out,
        } => select_cmd(&run, epochs, decomposition, horizon, out),
        Command::Cluster {
            subjects,
            all_retained,
            out,
        } => cluster_cmd(&run, subjects, *all_retained, out),
        Command::Train { input, arm, out } => train_cmd(&run, input, arm, out),
        Command::Predict {
            model,
            epochs,
            all,
            subject,
            out,
        } => predict_cmd(&run, model, epochs, *all, subject, out),
        Command::Ablate { epochs, subject, out } => ablate_cmd(&run, epochs, subject, out),
        Command::Report { input, out } => report_cmd(&run, input, out),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match execute(cli, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.stage, f.message);
            ExitCode::FAILURE
        }
    }
}
