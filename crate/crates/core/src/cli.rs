//! Command-line entry points. Exit codes: 0 success, 2 usage or configuration
//! error, 3 runtime failure.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint::{read_checkpoint, save_checkpoint};
use crate::config::{parse_bool, parse_clip, parse_split, Overrides, RunConfig};
use crate::data::{generate_synthetic, load_embeddings, read_corpus, split, write_corpus, Corpus};
use crate::depgraph::{prune_tree, Pruning};
use crate::error::{Error, Result};
use crate::model::{AggcnModel, AttentionMap};
use crate::numerics::Rng;
use crate::train::{evaluate, train, EvalResult, Optimizer};

#[derive(Debug, Parser)]
#[command(name = "aggcn", version, about = "Attention guided graph convolutional networks for relation extraction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, history and metrics to --out.
    Train(RunArgs),
    /// Score a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Show which tokens path-centric pruning keeps.
    Prune(PruneArgs),
    /// Export attention-guided adjacency matrices for one instance.
    Attention(AttentionArgs),
    /// Write a synthetic corpus as train/dev/test instance files.
    Synth(RunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// Plain-text `key = value` file; flags win over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base model: sentence, cross-sentence, desk or gcn.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "n-heads")]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long = "L1")]
    pub l1: Option<usize>,
    /// Sub-layers of the second dense group; 0 drops the group.
    #[arg(long = "L2")]
    pub l2: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "d-word")]
    pub d_word: Option<usize>,
    #[arg(long, value_parser = parse_bool)]
    pub attention: Option<bool>,
    /// full, k0, k1, k2, ...
    #[arg(long)]
    pub pruning: Option<Pruning>,
    #[arg(long)]
    pub entities: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<Optimizer>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Global gradient-norm bound, or `none`.
    #[arg(long, value_parser = parse_clip)]
    pub clip: Option<Option<f64>>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long = "eval-every")]
    pub eval_every: Option<usize>,
    #[arg(long = "negative-label")]
    pub negative_label: Option<String>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `default` or comma-separated n=, labels=, len=a-b, dist=, fillers=, seed=.
    #[arg(long)]
    pub synthetic: Option<String>,
    /// Train,dev,test fractions for a synthetic corpus.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<[f64; 3]>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Defaults to <out>/checkpoint.bin.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Corpus split to score; defaults to test, then dev, then train.
    #[arg(long, value_enum)]
    pub on: Option<Which>,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Pruning modes to report, comma-separated; defaults to --pruning.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<Pruning>,
    /// Tokens kept under one mode but not the other.
    #[arg(long, num_args = 2, value_names = ["K1", "K2"])]
    pub diff: Option<Vec<Pruning>>,
    /// Restrict to one split; defaults to every loaded instance.
    #[arg(long, value_enum)]
    pub on: Option<Which>,
}

#[derive(Debug, Args)]
pub struct AttentionArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Instance id, looked up in every loaded split.
    #[arg(long)]
    pub id: String,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset.clone(),
            n_heads: self.n_heads,
            blocks: self.blocks,
            l1: self.l1,
            l2: self.l2,
            d: self.d,
            d_word: self.d_word,
            attention: self.attention,
            pruning: self.pruning,
            entities: self.entities,
            epochs: self.epochs,
            lr: self.lr,
            optimizer: self.optimizer,
            momentum: self.momentum,
            clip: self.clip,
            batch: self.batch,
            dropout: self.dropout,
            eval_every: self.eval_every,
            seed: self.seed,
            negative_label: self.negative_label.clone(),
            train: self.train.clone(),
            dev: self.dev.clone(),
            test: self.test.clone(),
            embeddings: self.embeddings.clone(),
            out: self.out.clone(),
            synthetic: self.synthetic.clone(),
            split: self.split,
        }
    }

    /// File settings merged under flag settings.
    fn merged(&self) -> Result<Overrides> {
        let file = match &self.config {
            Some(p) => Overrides::from_file(p)?,
            None => Overrides::default(),
        };
        Ok(file.merge(self.overrides()))
    }

    fn resolve(&self) -> Result<(RunConfig, Overrides)> {
        let o = self.merged()?;
        Ok((RunConfig::from_overrides(o.clone())?, o))
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Checkpoint(_) | Error::Io { .. } => 2,
        _ => 3,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Prune(a) => cmd_prune(a, out),
        Command::Attention(a) => cmd_attention(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn out_io(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

#[derive(Debug, Default)]
struct Corpora {
    train: Option<Corpus>,
    dev: Option<Corpus>,
    test: Option<Corpus>,
}

impl Corpora {
    fn get(&self, w: Which) -> Option<&Corpus> {
        match w {
            Which::Train => self.train.as_ref(),
            Which::Dev => self.dev.as_ref(),
            Which::Test => self.test.as_ref(),
        }
        .filter(|c| !c.is_empty())
    }

    fn present(&self) -> impl Iterator<Item = (Which, &Corpus)> {
        [Which::Train, Which::Dev, Which::Test]
            .into_iter()
            .filter_map(|w| self.get(w).map(|c| (w, c)))
    }

    /// Sorted union of the label sets.
    fn labels(&self) -> Vec<String> {
        self.present()
            .flat_map(|(_, c)| c.label_vocab.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

fn load_corpora(cfg: &RunConfig) -> Result<Corpora> {
    if let Some(spec) = &cfg.synthetic {
        let corpus = generate_synthetic(spec)?;
        let (train, dev, test) = split(&corpus, cfg.split, &mut Rng::new(cfg.seed()).derive("split"))?;
        return Ok(Corpora {
            train: Some(train),
            dev: Some(dev),
            test: Some(test),
        });
    }
    let read = |p: &Option<PathBuf>| p.as_ref().map(read_corpus).transpose();
    Ok(Corpora {
        train: read(&cfg.paths.train)?,
        dev: read(&cfg.paths.dev)?,
        test: read(&cfg.paths.test)?,
    })
}

fn has_corpus_flags(o: &Overrides) -> bool {
    o.train.is_some() || o.dev.is_some() || o.test.is_some() || o.synthetic.is_some()
}

/// Re-indexes every corpus to `labels` and marks the negative label.
fn align(c: &Corpus, labels: &[String], negative: Option<&str>) -> Result<Corpus> {
    let mut c = c.with_labels(labels)?;
    c.negative_label = match negative {
        None => None,
        Some(n) => Some(
            labels
                .iter()
                .position(|l| l == n)
                .ok_or_else(|| Error::Config(format!("negative label '{n}' not in label set")))?,
        ),
    };
    Ok(c)
}

fn entity_count(c: &Corpus) -> Result<Option<usize>> {
    let counts: BTreeSet<usize> = c.instances.iter().map(|i| i.entities.len()).collect();
    match counts.len() {
        0 => Ok(None),
        1 => Ok(counts.into_iter().next()),
        _ => Err(Error::Config(format!("instances mix entity counts {counts:?}"))),
    }
}

#[derive(Serialize)]
struct Metrics<'a> {
    best_epoch: Option<usize>,
    dev: Option<&'a EvalResult>,
    test: Option<&'a EvalResult>,
}

fn write_json_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).expect("records serialize"));
        text.push('\n');
    }
    fs::write(path, text).map_err(out_io(path))
}

fn write_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("metrics serialize");
    text.push('\n');
    fs::write(path, text).map_err(out_io(path))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(out_io(dir))
}

pub fn cmd_train(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let (mut cfg, o) = args.resolve()?;
    let corpora = load_corpora(&cfg)?;
    let Some(train_raw) = corpora.get(Which::Train) else {
        return Err(Error::Config("no training data: pass --train or --synthetic".into()));
    };
    let labels = corpora.labels();
    let negative = cfg.negative_label.clone();
    let train_set = align(train_raw, &labels, negative.as_deref())?;
    let dev = corpora.get(Which::Dev).map(|c| align(c, &labels, negative.as_deref())).transpose()?;
    let test = corpora.get(Which::Test).map(|c| align(c, &labels, negative.as_deref())).transpose()?;

    if let Some(e) = entity_count(&train_set)? {
        if o.entities.is_some_and(|want| want != e) {
            return Err(Error::Config(format!(
                "--entities {} disagrees with the corpus ({e} entities per instance)",
                cfg.model.n_entities
            )));
        }
        cfg.model.n_entities = e;
    }
    cfg.model.labels = labels;
    cfg.validate()?;

    let root = Rng::new(cfg.seed());
    let vocab = train_set.token_vocab.clone();
    let table = match &cfg.paths.embeddings {
        Some(p) => Some(load_embeddings(p, &vocab, cfg.model.d_word, &mut root.derive("embeddings"))?),
        None => None,
    };
    let mut model = AggcnModel::new(cfg.model.clone(), vocab, table, &root.derive("model"))?;
    writeln!(
        out,
        "training {} instances ({} parameters, {} scalars)",
        train_set.len(),
        model.store.len(),
        model.store.num_scalars()
    )
    .map_err(out_io(Path::new("<stdout>")))?;

    let outcome = train(&mut model, &train_set, dev.as_ref(), &cfg.train)?;
    let test_result = test.as_ref().map(|t| evaluate(&model, t)).transpose()?;

    let dir = &cfg.paths.out;
    create_dir(dir)?;
    save_checkpoint(dir.join("checkpoint.bin"), &model, &cfg)?;
    write_json_lines(&dir.join("history.jsonl"), &outcome.history)?;
    write_pretty(
        &dir.join("metrics.json"),
        &Metrics {
            best_epoch: outcome.best_epoch,
            dev: outcome.best_dev.as_ref(),
            test: test_result.as_ref(),
        },
    )?;
    let shown = test_result.as_ref().or(outcome.best_dev.as_ref());
    if let Some(r) = shown {
        let path = dir.join("confusion.csv");
        fs::write(&path, r.confusion_csv()).map_err(out_io(&path))?;
    }
    let w = |e| Error::io("<stdout>", e);
    if let Some(last) = outcome.history.last() {
        writeln!(out, "epoch {} loss {:.6}", last.epoch, last.loss).map_err(w)?;
    }
    if let Some(r) = &outcome.best_dev {
        writeln!(out, "dev (epoch {}): {}", outcome.best_epoch.unwrap_or(0), r.summary()).map_err(w)?;
    }
    if let Some(r) = &test_result {
        writeln!(out, "test: {}", r.summary()).map_err(w)?;
    }
    writeln!(out, "wrote {}", dir.display()).map_err(w)?;
    Ok(())
}

/// Loads the checkpoint and the model it describes. Shape-affecting flags
/// are applied on top of the stored configuration and audited against the
/// stored parameters.
fn load_model(args: &RunArgs, checkpoint: &Option<PathBuf>) -> Result<(AggcnModel, RunConfig, Overrides)> {
    let o = args.merged()?;
    let out = o.out.clone().unwrap_or_else(|| RunConfig::default().paths.out);
    let path = checkpoint.clone().unwrap_or_else(|| out.join("checkpoint.bin"));
    let ck = read_checkpoint(&path)?;
    let mut model_cfg = ck.header.config.model.clone();
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    set!(model_cfg.n_heads, o.n_heads);
    set!(model_cfg.blocks, o.blocks);
    set!(model_cfg.d, o.d);
    set!(model_cfg.d_word, o.d_word);
    set!(model_cfg.attention, o.attention);
    set!(model_cfg.pruning, o.pruning);
    set!(model_cfg.n_entities, o.entities);
    if o.l1.is_some() || o.l2.is_some() {
        let l1 = o.l1.unwrap_or(model_cfg.sublayers[0]);
        let l2 = o.l2.unwrap_or(model_cfg.sublayers.get(1).copied().unwrap_or(0));
        model_cfg.sublayers = if l2 == 0 { vec![l1] } else { vec![l1, l2] };
    }
    model_cfg.validate()?;
    let model = ck.model_with(&model_cfg)?;

    // Corpus selection: flags when given, otherwise whatever the checkpoint was trained on.
    let mut cfg = if has_corpus_flags(&o) {
        RunConfig::from_overrides(o.clone())?
    } else {
        let mut c = ck.header.config.clone();
        c.paths.out = out.clone();
        if o.negative_label.is_some() {
            c.negative_label = o.negative_label.clone();
        }
        c
    };
    cfg.paths.out = out;
    cfg.model = model_cfg;
    Ok((model, cfg, o))
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (model, cfg, _) = load_model(&args.run, &args.checkpoint)?;
    let corpora = load_corpora(&cfg)?;
    let which = match args.on {
        Some(w) => w,
        None => [Which::Test, Which::Dev, Which::Train]
            .into_iter()
            .find(|&w| corpora.get(w).is_some())
            .ok_or_else(|| Error::Config("no corpus to evaluate".into()))?,
    };
    let corpus = corpora
        .get(which)
        .ok_or_else(|| Error::Config(format!("no {which:?} corpus loaded").to_lowercase()))?;
    let corpus = align(corpus, &model.config.labels, cfg.negative_label.as_deref())?;
    let result = evaluate(&model, &corpus)?;

    let w = |e| Error::io("<stdout>", e);
    writeln!(out, "{}", result.summary()).map_err(w)?;
    for l in &result.per_label {
        writeln!(out, "  {}: tp={} fp={} fn={}", l.label, l.tp, l.fp, l.fn_).map_err(w)?;
    }
    let dir = &cfg.paths.out;
    create_dir(dir)?;
    let path = dir.join("confusion.csv");
    fs::write(&path, result.confusion_csv()).map_err(out_io(&path))?;
    write_pretty(&dir.join("eval.json"), &result)?;
    Ok(())
}

fn fmt_indices(set: &BTreeSet<usize>) -> String {
    set.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(",")
}

/// Token indices in the output are 1-based, as in instance files.
pub fn cmd_prune(args: &PruneArgs, out: &mut dyn Write) -> Result<()> {
    let (cfg, _) = args.run.resolve()?;
    let corpora = load_corpora(&cfg)?;
    let instances: Vec<_> = match args.on {
        Some(w) => corpora
            .get(w)
            .map(|c| c.instances.iter().collect())
            .unwrap_or_default(),
        None => corpora.present().flat_map(|(_, c)| c.instances.iter()).collect(),
    };
    if instances.is_empty() {
        return Err(Error::Config("no instances to prune: pass a corpus or --synthetic".into()));
    }
    let w = |e| Error::io("<stdout>", e);

    if let Some(pair) = &args.diff {
        let (a, b) = (pair[0], pair[1]);
        let (mut only_a, mut only_b) = (0usize, 0usize);
        for inst in &instances {
            let g = inst.graph.link_sentence_roots();
            let ka = prune_tree(&g, &inst.entities, a)?;
            let kb = prune_tree(&g, &inst.entities, b)?;
            let da: BTreeSet<usize> = ka.difference(&kb).copied().collect();
            let db: BTreeSet<usize> = kb.difference(&ka).copied().collect();
            only_a += da.len();
            only_b += db.len();
            writeln!(out, "{}\tonly_{a}={}\tonly_{b}={}", inst.id, fmt_indices(&da), fmt_indices(&db)).map_err(w)?;
        }
        let n = instances.len() as f64;
        writeln!(
            out,
            "diff {a} vs {b}: mean only_{a}={:.4} mean only_{b}={:.4} over {} instances",
            only_a as f64 / n,
            only_b as f64 / n,
            instances.len()
        )
        .map_err(w)?;
        return Ok(());
    }

    let mut modes = if args.k.is_empty() { vec![cfg.model.pruning] } else { args.k.clone() };
    modes.sort_by_key(|m| match m {
        Pruning::K(k) => *k,
        Pruning::Full => usize::MAX,
    });
    modes.dedup();
    let mut fractions = vec![0.0; modes.len()];
    let mut monotone = 0usize;
    for inst in &instances {
        let g = inst.graph.link_sentence_roots();
        let mut prev: Option<BTreeSet<usize>> = None;
        let mut ok = true;
        for (j, &mode) in modes.iter().enumerate() {
            let kept = prune_tree(&g, &inst.entities, mode)?;
            let frac = kept.len() as f64 / inst.len() as f64;
            fractions[j] += frac;
            writeln!(out, "{}\t{mode}\t{}\t{frac:.4}", inst.id, fmt_indices(&kept)).map_err(w)?;
            if let Some(p) = &prev {
                ok &= p.is_subset(&kept);
            }
            prev = Some(kept);
        }
        monotone += ok as usize;
    }
    let n = instances.len() as f64;
    for (mode, f) in modes.iter().zip(&fractions) {
        writeln!(out, "summary {mode}: mean kept fraction {:.4} over {} instances", f / n, instances.len())
            .map_err(w)?;
    }
    if modes.len() > 1 {
        let chain: Vec<String> = modes.iter().map(|m| m.to_string()).collect();
        writeln!(
            out,
            "monotone {}: {} on {monotone}/{} instances",
            chain.join(" <= "),
            if monotone == instances.len() { "holds" } else { "FAILS" },
            instances.len()
        )
        .map_err(w)?;
    }
    Ok(())
}

/// Writes a matrix with the tokens as header row and first column.
pub fn attention_csv(map: &AttentionMap) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![String::new()];
    header.extend(map.tokens.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for (i, tok) in map.tokens.iter().enumerate() {
        let mut rec = vec![tok.clone()];
        rec.extend(map.matrix.row(i).iter().map(|x| x.to_string()));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub fn cmd_attention(args: &AttentionArgs, out: &mut dyn Write) -> Result<()> {
    let (model, cfg, _) = load_model(&args.run, &args.checkpoint)?;
    let corpora = load_corpora(&cfg)?;
    let inst = corpora
        .present()
        .find_map(|(_, c)| c.find(&args.id))
        .ok_or_else(|| Error::Config(format!("no instance with id '{}'", args.id)))?;
    let maps = model.attention_maps(inst)?;
    let dir = &cfg.paths.out;
    create_dir(dir)?;
    let w = |e| Error::io("<stdout>", e);
    if maps.is_empty() {
        writeln!(out, "model has no attention-guided layers (blocks < 2 or attention off)").map_err(w)?;
    }
    for map in &maps {
        let path = dir.join(format!("attention_block{}_head{}.csv", map.block + 1, map.head + 1));
        fs::write(&path, attention_csv(map)).map_err(out_io(&path))?;
        writeln!(out, "wrote {}", path.display()).map_err(w)?;
    }
    Ok(())
}

pub fn cmd_synth(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let (mut cfg, _) = args.resolve()?;
    if cfg.synthetic.is_none() {
        cfg.synthetic = Some(crate::data::SyntheticSpec {
            seed: cfg.seed(),
            ..Default::default()
        });
    }
    let corpora = load_corpora(&cfg)?;
    let dir = &cfg.paths.out;
    create_dir(dir)?;
    let w = |e| Error::io("<stdout>", e);
    for (name, c) in [("train", &corpora.train), ("dev", &corpora.dev), ("test", &corpora.test)] {
        let c = c.as_ref().expect("synthetic corpora are always split");
        let path = dir.join(format!("{name}.jsonl"));
        write_corpus(c, &path)?;
        writeln!(out, "wrote {} ({} instances)", path.display(), c.len()).map_err(w)?;
    }
    Ok(())
}
