//! The `mav` command line.
//!
//! Each command writes into its own directory together with a
//! `manifest.json`. Directories default to `$MAV_OUT/<kind>/<id>` (or
//! `runs/<kind>/<id>`), where the id is a digest of the inputs that
//! determine the result, so rerunning a finished command is a no-op.

mod config;
mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{FlatConfig, RunConfig, KNOWN_KEYS};
pub use manifest::{content_id, RunManifest, RunStatus, MANIFEST_FILE};

use crate::bench::test_accuracy;
use crate::corpus::{
    build_vocab, encode_all, gen_synthetic, read_jsonl, sample_few_shot, write_jsonl, FewShotSplit,
    LabeledPool, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{
    compare_table, silhouette_kmeans, vocab_attribution, write_representation_csv, AttributionMethod,
    CellResult, CompareTable,
};
use crate::model::{pretrain_mlm, Checkpoint};
use crate::selftrain::{labels_of, train_loop, write_history_csv, TrainMode};
use crate::verbalizers::{
    amulap_build, init_head, mask_representations, HeadKind, HeadVariant, LabelWordMap,
};

/// Default output root when neither `--out` nor `MAV_OUT` is given.
pub const DEFAULT_ROOT: &str = "runs";

pub fn out_root() -> PathBuf {
    std::env::var_os("MAV_OUT").map_or_else(|| PathBuf::from(DEFAULT_ROOT), PathBuf::from)
}

#[derive(Debug, Parser)]
#[command(name = "mav", version, about = "Prompt-based self-training with a mapping-free verbalizer")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.tau=0.9`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<FlatConfig> {
        let mut f = match &self.config {
            Some(p) => FlatConfig::load(p)?,
            None => FlatConfig::default(),
        };
        f.apply_overrides(&self.set)?;
        Ok(f)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (or read) the corpus and pre-train the encoder with MLM.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a few-shot split from a pre-training run's labeled pool.
    Split {
        /// Pre-training run directory.
        #[arg(long)]
        pretrain: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune one head in one mode.
    Train {
        #[arg(long)]
        pretrain: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// mav, single, multi, cls or maskrep.
        #[arg(long, default_value = "mav")]
        head: HeadKind,
        /// small, semi or full.
        #[arg(long, default_value = "semi")]
        mode: TrainMode,
        /// Label word file keyed by pool label, required for `single`.
        #[arg(long)]
        label_words: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a trained run on its test split.
    Eval {
        /// Training run directory.
        #[arg(long)]
        run: PathBuf,
        /// Cluster `[MASK]` representations and report the silhouette.
        #[arg(long)]
        silhouette: bool,
        /// Per-class vocabulary attribution (MAV only).
        #[arg(long)]
        attribution: bool,
        #[arg(long, default_value_t = 5)]
        top_n: usize,
    },
    /// Run a grid of heads × modes × hyper-parameters × seeds and report.
    Sweep {
        /// Flat config with `grid.*` lists plus any base keys.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Comma list (`0,1,2`) or half-open range (`0..5`).
        #[arg(long, default_value = "0..5")]
        seeds: String,
        /// Cells trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate completed runs into a heads × modes table.
    Report {
        /// Directory searched recursively for training runs.
        #[arg(long)]
        runs: PathBuf,
        /// Where report.{txt,csv,json} go (defaults to `--runs`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// 2 for bad input (configuration, label maps, unsupported requests,
/// mismatched artifacts), 1 for anything that went wrong while running.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::LabelMap(_)
        | Error::Unsupported(_)
        | Error::VocabMismatch { .. }
        | Error::Parse { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    let root = out_root();
    match cmd {
        Command::Pretrain { cfg, out } => {
            let r = run_pretrain(&cfg.load()?, out.as_deref(), &root)?;
            println!("{}", r.dir.display());
        }
        Command::Split { pretrain, cfg, out } => {
            let r = run_split(&pretrain, &cfg.load()?, out.as_deref(), &root)?;
            println!("{}", r.dir.display());
        }
        Command::Train {
            pretrain,
            split,
            head,
            mode,
            label_words,
            cfg,
            out,
        } => {
            let req = TrainRequest {
                pretrain: &pretrain,
                split: &split,
                head,
                mode,
                label_words: label_words.as_deref(),
                flat: &cfg.load()?,
            };
            let r = run_train(&req, out.as_deref(), &root)?;
            let m = RunManifest::load(&r.dir)?;
            println!(
                "{}\tbest dev accuracy {:.4} at epoch {}",
                r.dir.display(),
                m.results.get("best_dev_acc").copied().unwrap_or(f64::NAN),
                m.results.get("best_epoch").copied().unwrap_or(f64::NAN)
            );
        }
        Command::Eval {
            run,
            silhouette,
            attribution,
            top_n,
        } => {
            let m = run_eval(&EvalRequest {
                run: &run,
                silhouette,
                attribution,
                top_n,
            })?;
            for (k, v) in &m.results {
                println!("{k}\t{v}");
            }
        }
        Command::Sweep {
            grid,
            set,
            seeds,
            jobs,
            out,
        } => {
            let mut flat = FlatConfig::load(&grid)?;
            flat.apply_overrides(&set)?;
            let seeds = parse_seeds(&seeds)?;
            let root = out.unwrap_or(root);
            let s = run_sweep(&flat, &seeds, jobs, &root)?;
            print!("{}", s.table.to_text());
            println!(
                "{} cells: {} trained, {} reused, {} failed",
                s.cells,
                s.cells - s.reused - s.failed.len(),
                s.reused,
                s.failed.len()
            );
            for (id, msg) in &s.failed {
                eprintln!("failed {id}: {msg}");
            }
            if !s.failed.is_empty() {
                return Ok(1);
            }
        }
        Command::Report { runs, out } => {
            let out = out.unwrap_or_else(|| runs.clone());
            let t = run_report(&runs, &out)?;
            print!("{}", t.to_text());
        }
    }
    Ok(0)
}

/// `0,1,2` or `0..5`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("--seeds: expected `0,1,2` or `0..5`, got {s:?}"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Where a command wrote, and whether an earlier identical run was reused.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunDir {
    pub dir: PathBuf,
    pub reused: bool,
}

fn target(out: Option<&Path>, root: &Path, kind: &str, id: &str) -> PathBuf {
    out.map_or_else(|| root.join(kind).join(id), Path::to_path_buf)
}

fn finished(dir: &Path, id: &str) -> bool {
    RunManifest::load_complete(dir).is_some_and(|m| m.run_id == id)
}

fn require_run(dir: &Path, command: &str) -> Result<RunManifest> {
    match RunManifest::load(dir) {
        Ok(m) if m.command == command && m.status == RunStatus::Complete => Ok(m),
        Ok(m) => Err(Error::Config(format!(
            "{} is a {} run with status {:?}, expected a completed {command} run",
            dir.display(),
            m.command,
            m.status
        ))),
        Err(e) => Err(Error::Config(format!("{} is not a {command} run: {e}", dir.display()))),
    }
}

/// Runs `body` between a "running" and a final manifest.
fn tracked(dir: &Path, mut m: RunManifest, body: impl FnOnce(&mut RunManifest) -> Result<()>) -> Result<RunDir> {
    m.save(dir)?;
    let res = body(&mut m);
    m.finish(dir, &res)?;
    res.map(|()| RunDir {
        dir: dir.to_path_buf(),
        reused: false,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_vocab(pretrain_dir: &Path) -> Result<Vocabulary> {
    let path = pretrain_dir.join("vocab.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

/// Writes `corpus.jsonl`, the labeled pool, `vocab.json`, `label_words.json`
/// (synthetic data only) and `checkpoint.json`.
pub fn run_pretrain(flat: &FlatConfig, out: Option<&Path>, root: &Path) -> Result<RunDir> {
    let rc = RunConfig::from_flat(flat)?;
    let scoped = flat.without(&["split", "train", "head", "grid"]);
    let id = content_id(&["pretrain", &scoped.render()]);
    let dir = target(out, root, "pretrain", &id);
    if finished(&dir, &id) {
        log::info!("reusing {}", dir.display());
        return Ok(RunDir { dir, reused: true });
    }
    let m = RunManifest::start("pretrain", id, scoped.entries);
    tracked(&dir.clone(), m, |m| {
        let (corpus, pool, words) = match &rc.data_dir {
            Some(d) => {
                let d = Path::new(d);
                (read_jsonl(&d.join("corpus.jsonl"))?, LabeledPool::load(d)?, None)
            }
            None => {
                let (c, p) = gen_synthetic(&rc.spec, rc.data_seed)?;
                (c, p, Some(rc.spec.manual_label_words()))
            }
        };
        let mut all = corpus.clone();
        all.extend(pool.train.iter().cloned());
        let vocab = build_vocab(&all)?;
        write_jsonl(&dir.join("corpus.jsonl"), &corpus)?;
        pool.save(&dir)?;
        write_json(&dir.join("vocab.json"), &vocab)?;
        for a in ["corpus.jsonl", "pool_train.jsonl", "pool_test.jsonl", "vocab.json"] {
            m.add_artifact(a);
        }
        if let Some(w) = words {
            LabelWordMap::from_words(&w, &vocab)?.save(&dir.join("label_words.json"), &vocab)?;
            m.add_artifact("label_words.json");
        }
        let mut mc = rc.model.clone();
        mc.vocab_size = vocab.len();
        let model = pretrain_mlm(&corpus, &vocab, mc, &rc.pretrain)?;
        Checkpoint::new(&model, vocab.hash()).save(&dir.join("checkpoint.json"))?;
        m.add_artifact("checkpoint.json");
        m.vocab_hash = Some(vocab.hash());
        Ok(())
    })
}

/// Samples a split from the pool of a finished pre-training run.
pub fn run_split(pretrain: &Path, flat: &FlatConfig, out: Option<&Path>, root: &Path) -> Result<RunDir> {
    let rc = RunConfig::from_flat(flat)?;
    let pm = require_run(pretrain, "pretrain")?;
    let scoped = flat.only(&["split"]);
    let id = content_id(&["split", &pm.run_id, &scoped.render()]);
    let dir = target(out, root, "splits", &id);
    if finished(&dir, &id) {
        return Ok(RunDir { dir, reused: true });
    }
    let mut m = RunManifest::start("split", id, scoped.entries);
    m.inputs.insert("pretrain".into(), pretrain.display().to_string());
    m.seed = Some(rc.split_seed);
    tracked(&dir.clone(), m, |m| {
        let pool = LabeledPool::load(pretrain)?;
        let vocab = load_vocab(pretrain)?;
        let mut s = sample_few_shot(&pool, rc.k, rc.mu, rc.split_seed, rc.policy)?;
        s.manifest.vocab_hash = Some(vocab.hash());
        s.save(&dir)?;
        for a in ["labeled.jsonl", "unlabeled.jsonl", "dev.jsonl", "test.jsonl", "split.json"] {
            m.add_artifact(a);
        }
        m.vocab_hash = Some(vocab.hash());
        if !s.manifest.dropped_classes.is_empty() {
            log::warn!("dropped undersized classes {:?}", s.manifest.dropped_classes);
        }
        Ok(())
    })
}

#[derive(Clone, Debug)]
pub struct TrainRequest<'a> {
    pub pretrain: &'a Path,
    pub split: &'a Path,
    pub head: HeadKind,
    pub mode: TrainMode,
    pub label_words: Option<&'a Path>,
    pub flat: &'a FlatConfig,
}

fn check_split_vocab(split: &FewShotSplit, vocab_hash: &str) -> Result<()> {
    match &split.manifest.vocab_hash {
        Some(h) if h == vocab_hash => Ok(()),
        other => Err(Error::VocabMismatch {
            expected: vocab_hash.to_string(),
            found: other.clone().unwrap_or_else(|| "none".into()),
        }),
    }
}

/// Trains one head and writes `checkpoint.json` (best dev epoch, with head
/// and optimizer state), `history.csv` and, for `multi`, the label words
/// AMuLaP chose.
pub fn run_train(req: &TrainRequest, out: Option<&Path>, root: &Path) -> Result<RunDir> {
    let rc = RunConfig::from_flat(req.flat)?;
    let pm = require_run(req.pretrain, "pretrain")?;
    let sm = require_run(req.split, "split")?;
    if req.head == HeadKind::Single && req.label_words.is_none() {
        return Err(Error::Config(
            "the single head needs a label word file (--label-words) giving one word per class".into(),
        ));
    }
    let words_text = match req.label_words {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    let scoped = req.flat.only(&["train", "head"]);
    let id = content_id(&[
        "train",
        &pm.run_id,
        &sm.run_id,
        req.head.name(),
        req.mode.name(),
        &scoped.render(),
        &words_text,
    ]);
    let dir = target(out, root, "runs", &id);
    if finished(&dir, &id) {
        return Ok(RunDir { dir, reused: true });
    }
    let mut m = RunManifest::start("train", id, scoped.entries);
    m.inputs.insert("pretrain".into(), req.pretrain.display().to_string());
    m.inputs.insert("split".into(), req.split.display().to_string());
    m.head = Some(req.head.name().into());
    m.mode = Some(req.mode.name().into());
    m.seed = sm.seed;
    tracked(&dir.clone(), m, |m| {
        let vocab = load_vocab(req.pretrain)?;
        let hash = vocab.hash();
        let ck = Checkpoint::load(&req.pretrain.join("checkpoint.json"), Some(&hash))?;
        let split = FewShotSplit::load(req.split)?;
        check_split_vocab(&split, &hash)?;
        let model = ck.model()?;
        let c = split.num_classes();
        let mut rng = ChaCha8Rng::seed_from_u64(rc.train.seed ^ 0x4d41_5648);
        let single = match req.label_words.filter(|_| req.head == HeadKind::Single) {
            Some(p) => Some(remap_label_words(&LabelWordMap::load(p, &vocab)?, &split)?),
            None => None,
        };
        let multi = if req.head == HeadKind::Multi {
            let seqs = encode_all(&split.labeled, &vocab, true, model.config.max_len)?;
            let labeled: Vec<_> = seqs.into_iter().zip(labels_of(&split.labeled)?).collect();
            let map = amulap_build(&labeled, &model, c, rc.top_k)?;
            map.save(&dir.join("label_words.json"), &vocab)?;
            m.add_artifact("label_words.json");
            Some(map)
        } else {
            None
        };
        let head = init_head(req.head, &model, c, rc.d_ve, single, multi, &mut rng)?;
        let outcome = train_loop(&split, &vocab, model, head, req.mode, &rc.train)?;
        let mut out_ck = Checkpoint::new(&outcome.model, hash.clone());
        out_ck.head = Some(outcome.head.clone());
        out_ck.optimizer = Some(outcome.optimizer.clone());
        out_ck.head_optimizer = outcome.head_optimizer.clone();
        out_ck.step = outcome.steps;
        out_ck.save(&dir.join("checkpoint.json"))?;
        write_history_csv(&dir.join("history.csv"), &outcome.history)?;
        m.add_artifact("checkpoint.json");
        m.add_artifact("history.csv");
        m.vocab_hash = Some(hash);
        m.results.insert("best_dev_acc".into(), outcome.best_dev_acc);
        m.results.insert("best_epoch".into(), outcome.best_epoch as f64);
        m.results.insert("steps".into(), outcome.steps as f64);
        Ok(())
    })
}

/// Label word files are keyed by pool label; the split may have dropped or
/// renumbered classes.
fn remap_label_words(map: &LabelWordMap, split: &FewShotSplit) -> Result<LabelWordMap> {
    let ids = split
        .manifest
        .classes
        .iter()
        .map(|&orig| {
            map.ids.get(orig).copied().ok_or_else(|| {
                Error::LabelMap(format!("no label word for class {orig} ({} given)", map.ids.len()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelWordMap { ids })
}

#[derive(Clone, Debug)]
pub struct EvalRequest<'a> {
    pub run: &'a Path,
    pub silhouette: bool,
    pub attribution: bool,
    pub top_n: usize,
}

#[derive(Serialize)]
struct EvalFile<'a> {
    head: &'a str,
    mode: &'a str,
    test_examples: usize,
    test_acc: f64,
}

/// Writes `eval.json` and, on request, `cluster.json` with
/// `representations.csv`, and `attribution.json`. Results are added to the
/// training run's manifest.
pub fn run_eval(req: &EvalRequest) -> Result<RunManifest> {
    let mut m = require_run(req.run, "train")?;
    let input = |role: &str| {
        m.inputs
            .get(role)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config(format!("{}: manifest has no {role} input", req.run.display())))
    };
    let (pretrain, split_dir) = (input("pretrain")?, input("split")?);
    let vocab = load_vocab(&pretrain)?;
    let hash = vocab.hash();
    let ck = Checkpoint::load(&req.run.join("checkpoint.json"), Some(&hash))?;
    let head = ck
        .head
        .clone()
        .ok_or_else(|| Error::Config(format!("{}: checkpoint has no head", req.run.display())))?;
    if req.attribution && !matches!(head, HeadVariant::Mav(_)) {
        return Err(Error::Unsupported(format!(
            "attribution needs the mav head, this run trained `{}`: only MAV has learned weights \
             from vocabulary scores to classes to attribute through",
            head.kind()
        )));
    }
    if req.silhouette && !head.kind().uses_template() {
        return Err(Error::Unsupported(format!(
            "silhouette clusters [MASK] representations, and the `{}` head reads unprompted inputs",
            head.kind()
        )));
    }
    let split = FewShotSplit::load(&split_dir)?;
    check_split_vocab(&split, &hash)?;
    let model = ck.model()?;

    let acc = test_accuracy(&model, &head, &split.test, &vocab)?;
    let kind = head.kind();
    write_json(
        &req.run.join("eval.json"),
        &EvalFile {
            head: kind.name(),
            mode: m.mode.as_deref().unwrap_or(""),
            test_examples: split.test.len(),
            test_acc: acc,
        },
    )?;
    m.add_artifact("eval.json");
    m.results.insert("test_acc".into(), acc);

    if req.silhouette || req.attribution {
        let seqs = encode_all(&split.test, &vocab, true, model.config.max_len)?;
        let labels = labels_of(&split.test)?;
        if req.silhouette {
            let refs: Vec<_> = seqs.iter().collect();
            let reps = mask_representations(&model, &refs)?;
            let report = silhouette_kmeans(&reps, split.num_classes(), 0)?;
            write_json(&req.run.join("cluster.json"), &report)?;
            write_representation_csv(&req.run.join("representations.csv"), &reps, &labels, &report.assignment)?;
            m.add_artifact("cluster.json");
            m.add_artifact("representations.csv");
            m.results.insert("silhouette".into(), report.silhouette);
        }
        if let (true, HeadVariant::Mav(mav)) = (req.attribution, &head) {
            let report = vocab_attribution(
                &model,
                mav,
                &seqs,
                &labels,
                &vocab,
                req.top_n,
                AttributionMethod::default(),
            )?;
            write_json(&req.run.join("attribution.json"), &report)?;
            m.add_artifact("attribution.json");
        }
    }
    m.save(req.run)?;
    Ok(m)
}

/// Grid keys that only matter when unlabeled data is used.
const SEMI_ONLY: &[&str] = &["lambda1", "lambda2", "tau"];
const GRID_TARGETS: &[(&str, &str)] = &[
    ("lambda1", "train.lambda1"),
    ("lambda2", "train.lambda2"),
    ("tau", "train.tau"),
    ("lr", "train.lr"),
    ("freeze", "train.freeze"),
    ("d_ve", "head.d_ve"),
];

fn grid_list(flat: &FlatConfig, key: &str) -> Vec<String> {
    flat.get(&format!("grid.{key}"))
        .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
        .unwrap_or_default()
}

/// Hyper-parameter assignments for one mode, in grid order.
fn variants(flat: &FlatConfig, mode: TrainMode) -> Vec<Vec<(&'static str, String)>> {
    let mut out: Vec<Vec<(&'static str, String)>> = vec![Vec::new()];
    for (g, key) in GRID_TARGETS {
        if mode != TrainMode::Semi && SEMI_ONLY.contains(g) {
            continue;
        }
        let values = grid_list(flat, g);
        if values.is_empty() {
            continue;
        }
        out = out
            .into_iter()
            .flat_map(|base| {
                values.iter().map(move |v| {
                    let mut b = base.clone();
                    b.push((*key, v.clone()));
                    b
                })
            })
            .collect();
    }
    out
}

#[derive(Clone, Debug)]
pub struct SweepSummary {
    pub cells: usize,
    pub reused: usize,
    /// `(cell description, error)` for cells that failed.
    pub failed: Vec<(String, String)>,
    pub table: CompareTable,
}

/// Pre-trains once, samples one split per seed, trains and evaluates every
/// cell not already finished (up to `jobs` at a time), then writes the
/// report into `root`. A failing cell is recorded and the rest continue.
pub fn run_sweep(grid: &FlatConfig, seeds: &[u64], jobs: usize, root: &Path) -> Result<SweepSummary> {
    let base = grid.without(&["grid"]);
    RunConfig::from_flat(&base)?;
    let heads = match grid_list(grid, "heads") {
        v if v.is_empty() => vec![HeadKind::Mav, HeadKind::Single, HeadKind::Multi, HeadKind::Cls],
        v => v.iter().map(|s| s.parse()).collect::<Result<_>>()?,
    };
    let modes = match grid_list(grid, "modes") {
        v if v.is_empty() => TrainMode::ALL.to_vec(),
        v => v.iter().map(|s| s.parse()).collect::<Result<_>>()?,
    };
    for (g, key) in GRID_TARGETS {
        for v in grid_list(grid, g) {
            RunConfig::from_flat(&base.with(key, &v))?;
        }
    }

    let pre = run_pretrain(&base, None, root)?;
    let words = pre.dir.join("label_words.json");
    if heads.contains(&HeadKind::Single) && !words.exists() {
        return Err(Error::Config(
            "grid includes the single head but the corpus has no label word file".into(),
        ));
    }
    let mut cells = Vec::new();
    for &seed in seeds {
        let split = run_split(&pre.dir, &base.with("split.seed", seed), None, root)?;
        for &head in &heads {
            for &mode in &modes {
                for var in variants(grid, mode) {
                    let mut flat = base.with("train.seed", seed);
                    for (k, v) in &var {
                        flat = flat.with(k, v);
                    }
                    let desc = format!(
                        "{head}/{mode}/seed {seed}{}",
                        var.iter().map(|(k, v)| format!(" {k}={v}")).collect::<String>()
                    );
                    cells.push((split.dir.clone(), head, mode, flat, desc));
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
    let results: Vec<(String, Result<bool>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|(split, head, mode, flat, desc)| {
                let req = TrainRequest {
                    pretrain: &pre.dir,
                    split,
                    head: *head,
                    mode: *mode,
                    label_words: (*head == HeadKind::Single).then_some(words.as_path()),
                    flat,
                };
                let res = run_train(&req, None, root).and_then(|r| {
                    let evaluated = RunManifest::load(&r.dir)?.results.contains_key("test_acc");
                    if !evaluated {
                        run_eval(&EvalRequest {
                            run: &r.dir,
                            silhouette: false,
                            attribution: false,
                            top_n: 5,
                        })?;
                    }
                    Ok(r.reused && evaluated)
                });
                if let Err(e) = &res {
                    log::error!("{desc}: {e}");
                }
                (desc.clone(), res)
            })
            .collect()
    });
    let reused = results.iter().filter(|(_, r)| matches!(r, Ok(true))).count();
    let failed = results
        .into_iter()
        .filter_map(|(d, r)| r.err().map(|e| (d, e.to_string())))
        .collect();
    let table = run_report(&root.join("runs"), root)?;
    Ok(SweepSummary {
        cells: cells.len(),
        reused,
        failed,
        table,
    })
}

/// Collects finished, evaluated training runs under `runs`. Where a head,
/// mode and seed were trained with several hyper-parameter settings, the one
/// with the best dev accuracy is kept (ties go to the smaller run id), so
/// tuning happens per seed on dev data only. Writes `report.txt`,
/// `report.csv` and `report.json` into `out`; their bytes depend only on the
/// runs found.
pub fn run_report(runs: &Path, out: &Path) -> Result<CompareTable> {
    let mut best: BTreeMap<(String, TrainMode, u64), (f64, String, f64)> = BTreeMap::new();
    for entry in walkdir::WalkDir::new(runs).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Config(format!("{}: {e}", runs.display())))?;
        if entry.file_name() != MANIFEST_FILE {
            continue;
        }
        let Some(dir) = entry.path().parent() else { continue };
        let Some(m) = RunManifest::load_complete(dir) else { continue };
        if m.command != "train" {
            continue;
        }
        let (Some(head), Some(mode), Some(seed), Some(&test), Some(&dev)) = (
            m.head.clone(),
            m.mode.as_deref().and_then(|s| s.parse::<TrainMode>().ok()),
            m.seed,
            m.results.get("test_acc"),
            m.results.get("best_dev_acc"),
        ) else {
            continue;
        };
        let slot = best.entry((head, mode, seed)).or_insert((dev, m.run_id.clone(), test));
        if dev > slot.0 || (dev == slot.0 && m.run_id < slot.1) {
            *slot = (dev, m.run_id, test);
        }
    }
    if best.is_empty() {
        return Err(Error::Empty("evaluated training runs"));
    }
    let mut grouped: BTreeMap<(String, TrainMode), Vec<f64>> = BTreeMap::new();
    for ((head, mode, _), (_, _, test)) in best {
        grouped.entry((head, mode)).or_default().push(test);
    }
    let cells: Vec<CellResult> = grouped
        .into_iter()
        .map(|((head, mode), accs)| CellResult { head, mode, accs })
        .collect();
    let table = compare_table(&cells);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (name, text) in [
        ("report.txt", table.to_text()),
        ("report.csv", table.to_csv()),
        ("report.json", table.to_json()),
    ] {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    let id = content_id(&["report", &table.to_json()]);
    let mut m = RunManifest::start("report", id, BTreeMap::new());
    m.inputs.insert("runs".into(), runs.display().to_string());
    for a in ["report.txt", "report.csv", "report.json"] {
        m.add_artifact(a);
    }
    m.finish(out, &Ok(()))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_parse() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 7").unwrap(), vec![4, 7]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn grid_variants_skip_semi_only_keys_elsewhere() {
        let g = FlatConfig::parse("grid.lambda1 = 0.5,1,2\ngrid.lambda2 = 0.1,1\ngrid.lr = 1e-4", "g").unwrap();
        assert_eq!(variants(&g, TrainMode::Semi).len(), 6);
        assert_eq!(variants(&g, TrainMode::Small), vec![vec![("train.lr", "1e-4".to_string())]]);
        assert_eq!(variants(&FlatConfig::default(), TrainMode::Full).len(), 1);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), 1);
        assert_eq!(main_with_args(["mav", "frobnicate"]), 2);
        assert_eq!(main_with_args(["mav", "train", "--head", "nope", "--pretrain", "a", "--split", "b"]), 2);
    }
}
