//! Command-line front end: dataset synthesis, training, evaluation,
//! cross-validation, weave inspection and gradient checks.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    gen_synthetic, load_index, patient_kfold, LabelPreset, LabelSet, LoadedDataset, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::models::{weave, weave_source, FeatureMatrix, Model};
use crate::tensor::gradsuite::gradient_suite;
use crate::tensor::{ParamStore, PARAM_FILE_VERSION};
use crate::train::{
    confusion_csv, cross_validate, evaluate, run_experiment, train, train_from, EpochStats, ExperimentConfig,
    TrainConfig,
};

/// Exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit status for bad arguments or an invalid configuration.
pub const EXIT_USAGE: i32 = 1;
/// Exit status for failures while running.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "tfw", version, about = "Temporal feature weaving for echocardiogram view classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset in the patient/view/clip layout.
    Synth {
        /// JSON synthetic dataset spec; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on every clip of the dataset.
    Train(RunArgs),
    /// Score saved parameters on the dataset.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Parameter file written by `train`.
        #[arg(long)]
        params: PathBuf,
    },
    /// Patient-wise K-fold cross-validation.
    Crossval(RunArgs),
    /// Print where every weaved position comes from.
    WeaveInspect {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        k: usize,
    },
    /// Finite-difference check of every layer.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Single-frame versus temporal models on generated data.
    Experiment {
        /// JSON experiment config; the desk preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the label set in the config.
    #[arg(long, value_enum)]
    preset: Option<LabelPreset>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelChoice {
    Preset(LabelPreset),
    Custom(Vec<String>),
}

impl Default for LabelChoice {
    fn default() -> Self {
        Self::Preset(LabelPreset::Ned12)
    }
}

impl LabelChoice {
    pub fn label_set(&self) -> Result<LabelSet> {
        match self {
            Self::Preset(p) => Ok(LabelSet::preset(*p)),
            Self::Custom(names) => LabelSet::custom(names.clone()),
        }
    }
}

/// A run's configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset root or manifest. Relative paths resolve against the config
    /// file's directory.
    pub dataset: PathBuf,
    #[serde(default)]
    pub labels: LabelChoice,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Image classifier; the class count defaults to the label set size.
    #[serde(default)]
    pub classifier: Option<TrainConfig>,
    /// Head trained on the classifier's backbone. Without it the classifier
    /// is the model.
    #[serde(default)]
    pub model: Option<TrainConfig>,
}

fn default_folds() -> usize {
    5
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.dataset.is_relative() {
            cfg.dataset = path.parent().unwrap_or(Path::new(".")).join(&cfg.dataset);
        }
        Ok(cfg)
    }

    /// Applies command-line overrides and fills in defaults.
    fn resolve(mut self, seed: Option<u64>, preset: Option<LabelPreset>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(p) = preset {
            self.labels = LabelChoice::Preset(p);
        }
        let c = self.labels.label_set()?.len();
        let mut classifier = self.classifier.take().unwrap_or_else(|| TrainConfig::classifier(c));
        classifier.seed = self.seed;
        classifier.validate()?;
        self.classifier = Some(classifier);
        if let Some(m) = &mut self.model {
            m.seed = self.seed;
            m.validate()?;
        }
        self.dataset = fs::canonicalize(&self.dataset).map_err(|e| Error::from(e).at(&self.dataset))?;
        Ok(self)
    }

    fn classifier(&self) -> &TrainConfig {
        self.classifier.as_ref().expect("resolved")
    }

    fn heads(&self) -> Vec<TrainConfig> {
        self.model.iter().cloned().collect()
    }

    /// SHA-256 of the resolved configuration, dataset path excluded.
    pub fn hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("dataset");
        }
        Ok(sha256_hex(serde_json::to_string(&v)?.as_bytes()))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    config_sha256: String,
    seed: u64,
    tfw_version: &'a str,
    param_file_version: u32,
    artifacts: Vec<&'a str>,
}

fn write_meta(out: &Path, command: &str, hash: String, seed: u64, artifacts: Vec<&str>) -> Result<()> {
    let meta = RunMeta {
        command,
        config_sha256: hash,
        seed,
        tfw_version: env!("CARGO_PKG_VERSION"),
        param_file_version: PARAM_FILE_VERSION,
        artifacts,
    };
    write_file(&out.join("run_meta.json"), &(serde_json::to_string_pretty(&meta)? + "\n"))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::from(e).at(path))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::from(e).at(path))
}

fn history_csv(rows: &[(&str, &[EpochStats])]) -> String {
    let mut out = String::from("model,epoch,loss,accuracy,lr\n");
    for (name, history) in rows {
        for h in *history {
            out += &format!("{name},{},{:.6},{:.4},{:.6e}\n", h.epoch, h.loss, h.accuracy, h.lr);
        }
    }
    out
}

fn load_dataset(cfg: &RunConfig) -> Result<LoadedDataset> {
    let index = load_index(&cfg.dataset, &cfg.labels.label_set()?)?;
    log::info!("{} clips from {} patients", index.clips.len(), index.patients().len());
    LoadedDataset::load(index)
}

fn cmd_synth(spec: Option<PathBuf>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec: SyntheticSpec = match spec {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| Error::from(e).at(&p))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    create_dir(out)?;
    let index = gen_synthetic(&spec, out)?;
    log::info!("wrote {} clips to {}", index.clips.len(), out.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_dataset(cfg)?;
    let clips: Vec<usize> = (0..data.index.clips.len()).collect();
    let base = train(cfg.classifier(), &data, &clips)?;
    let mut histories = vec![("classifier", base.history.as_slice())];
    let head;
    let (store, spec) = match &cfg.model {
        Some(m) => {
            head = train_from(m, &data, &clips, Some(&base.store.params), None)?;
            histories.push(("model", head.history.as_slice()));
            (&head.store, &m.model)
        }
        None => (&base.store, &cfg.classifier().model),
    };
    create_dir(out)?;
    store.save(&out.join("params.bin"))?;
    write_file(&out.join("model.json"), &(spec.to_json()? + "\n"))?;
    write_file(&out.join("history.csv"), &history_csv(&histories))?;
    write_meta(
        out,
        "train",
        cfg.hash()?,
        cfg.seed,
        vec!["params.bin", "model.json", "history.csv"],
    )
}

fn cmd_eval(cfg: &RunConfig, params: &Path, out: &Path) -> Result<()> {
    let data = load_dataset(cfg)?;
    let tc = cfg.model.as_ref().unwrap_or_else(|| cfg.classifier());
    let mut store = ParamStore::new();
    let model = Model::build(&tc.model, &mut store)?;
    store.load(params)?;
    let clips: Vec<usize> = (0..data.index.clips.len()).collect();
    let report = evaluate(&model, &store.params, &data, &clips, tc.sampling, cfg.seed, None)?;
    create_dir(out)?;
    write_file(&out.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write_file(
        &out.join("confusion.csv"),
        &confusion_csv(&report.confusion, data.index.label_set.names()),
    )?;
    eprintln!(
        "accuracy {:.2}  precision {:.2}  recall {:.2}  f1 {:.2}",
        report.accuracy, report.precision, report.recall, report.f1
    );
    write_meta(out, "eval", cfg.hash()?, cfg.seed, vec!["report.json", "confusion.csv"])
}

fn cmd_crossval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_dataset(cfg)?;
    let plan = patient_kfold(&data.index, cfg.folds, cfg.seed)?;
    plan.verify_partition(&data.index.patients())?;
    let outcome = cross_validate(cfg.classifier(), &cfg.heads(), &data, &plan)?;
    create_dir(out)?;
    write_file(&out.join("folds.csv"), &outcome.report.to_csv())?;
    let names = data.index.label_set.names();
    let mut artifacts = vec!["folds.csv".to_string()];
    for (i, f) in outcome.report.folds.iter().enumerate() {
        let name = format!("confusion_{i}.csv");
        write_file(&out.join(&name), &confusion_csv(&f.confusion, names))?;
        artifacts.push(name);
    }
    write_file(&out.join("plan.json"), &(serde_json::to_string_pretty(&plan)? + "\n"))?;
    write_file(
        &out.join("report.json"),
        &(serde_json::to_string_pretty(&outcome.report)? + "\n"),
    )?;
    let histories: Vec<(String, &[EpochStats])> = outcome
        .folds
        .iter()
        .flat_map(|f| {
            std::iter::once((format!("fold{}_classifier", f.fold), f.classifier.history.as_slice())).chain(
                f.heads
                    .iter()
                    .map(move |h| (format!("fold{}_model", f.fold), h.history.as_slice())),
            )
        })
        .collect();
    let rows: Vec<(&str, &[EpochStats])> = histories.iter().map(|(n, h)| (n.as_str(), *h)).collect();
    write_file(&out.join("history.csv"), &history_csv(&rows))?;
    artifacts.extend(["plan.json", "report.json", "history.csv"].map(String::from));
    let m = &outcome.report.mean;
    eprintln!(
        "mean over {} folds: accuracy {:.2}  precision {:.2}  recall {:.2}  f1 {:.2}",
        outcome.report.folds.len(),
        m.accuracy,
        m.precision,
        m.recall,
        m.f1
    );
    write_meta(
        out,
        "crossval",
        cfg.hash()?,
        cfg.seed,
        artifacts.iter().map(String::as_str).collect(),
    )
}

/// The weave layout as text: one line per weaved row listing the
/// `(frame, offset)` source of each position, frames counted from 1.
pub fn weave_table(n: usize, d: usize, k: usize) -> Result<String> {
    if n == 0 || d == 0 {
        return Err(Error::Config("n and d must be positive".into()));
    }
    weave(&FeatureMatrix::new(n, d, vec![0.0; n * d])?, k)?;
    let mut out = format!("weave N={n} D={d} K={k}: {k} rows of {} values\n", n * d / k);
    for row in 0..k {
        let cells: Vec<String> = (0..n * d / k)
            .map(|col| {
                let (frame, offset) = weave_source(n, d, k, row, col);
                format!("(f{},{offset})", frame + 1)
            })
            .collect();
        out += &format!("W_{}: {}\n", row + 1, cells.join(" "));
    }
    Ok(out)
}

fn cmd_gradcheck(seeds: usize, out: Option<PathBuf>) -> Result<bool> {
    let start = std::time::Instant::now();
    let results = gradient_suite(seeds)?;
    let mut csv = String::from("layer,seeds,max_rel_err,pass\n");
    let mut all = true;
    for r in &results {
        let pass = r.max_rel_err < 1e-4;
        all &= pass;
        println!(
            "{:<11} {} seeds  max rel err {:.3e}  {}",
            r.layer,
            r.seeds,
            r.max_rel_err,
            if pass { "PASS" } else { "FAIL" }
        );
        csv += &format!("{},{},{:e},{}\n", r.layer, r.seeds, r.max_rel_err, pass);
    }
    println!("{:.2} s", start.elapsed().as_secs_f64());
    if let Some(dir) = out {
        create_dir(&dir)?;
        write_file(&dir.join("gradcheck.csv"), &csv)?;
    }
    Ok(all)
}

fn cmd_experiment(config: Option<PathBuf>, out: &Path) -> Result<()> {
    let cfg = match config {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| Error::from(e).at(&p))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::desk(),
    };
    cfg.validate()?;
    let dir = out.join("data");
    create_dir(&dir)?;
    let index = gen_synthetic(&cfg.synthetic, &dir)?;
    let data = LoadedDataset::load(index)?;
    let report = run_experiment(&cfg, &data)?;
    write_file(&out.join("experiment.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    let mut summary = format!(
        "classifier accuracy on ambiguous pairs (median): {:.2}\nclassifier F1 (median): {:.2}\n",
        report.median_classifier_ambiguous(),
        report.median_classifier_f1()
    );
    for h in &cfg.heads {
        let kind = h.model.head.kind;
        if let Some(f1) = report.median_f1(kind) {
            summary += &format!("{kind:?} F1 (median): {f1:.2}\n");
        }
    }
    print!("{summary}");
    let hash = sha256_hex(serde_json::to_string(&cfg)?.as_bytes());
    write_meta(out, "experiment", hash, cfg.seeds[0], vec!["experiment.json", "data"])
}

fn configure_threads() {
    if let Some(n) = std::env::var("TFW_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not limit worker threads: {e}");
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let run_cfg = |run: &RunArgs| RunConfig::load(&run.config)?.resolve(run.seed, run.preset);
    match cli.command {
        Command::Synth { spec, out, seed } => cmd_synth(spec, &out, seed)?,
        Command::Train(run) => cmd_train(&run_cfg(&run)?, &run.out)?,
        Command::Eval { run, params } => cmd_eval(&run_cfg(&run)?, &params, &run.out)?,
        Command::Crossval(run) => cmd_crossval(&run_cfg(&run)?, &run.out)?,
        Command::WeaveInspect { n, d, k } => {
            print!("{}", weave_table(n, d, k)?);
        }
        Command::Gradcheck { seeds, out } => {
            if !cmd_gradcheck(seeds, out)? {
                return Ok(EXIT_RUNTIME);
            }
        }
        Command::Experiment { config, out } => cmd_experiment(config, &out)?,
    }
    Ok(EXIT_OK)
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    configure_threads();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}
