//! Run configuration: defaults, `key = value` files and flag overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::depgraph::Pruning;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{Optimizer, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Not stored in checkpoints, so runs into different directories stay byte-identical.
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
    pub negative_label: Option<String>,
    /// Generated corpus used instead of the train/dev/test files.
    pub synthetic: Option<SyntheticSpec>,
    /// Train/dev/test fractions applied to a synthetic corpus.
    pub split: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            paths: Paths {
                out: PathBuf::from("aggcn-out"),
                ..Default::default()
            },
            negative_label: None,
            synthetic: None,
            split: [0.8, 0.1, 0.1],
        }
    }
}

/// Optional settings from a config file or the command line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub preset: Option<String>,
    pub n_heads: Option<usize>,
    pub blocks: Option<usize>,
    pub l1: Option<usize>,
    /// 0 drops the second dense group.
    pub l2: Option<usize>,
    pub d: Option<usize>,
    pub d_word: Option<usize>,
    pub attention: Option<bool>,
    pub pruning: Option<Pruning>,
    pub entities: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub optimizer: Option<Optimizer>,
    pub momentum: Option<f64>,
    /// `Some(None)` disables clipping.
    pub clip: Option<Option<f64>>,
    pub batch: Option<usize>,
    pub dropout: Option<f64>,
    pub eval_every: Option<usize>,
    pub seed: Option<u64>,
    pub negative_label: Option<String>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub synthetic: Option<String>,
    pub split: Option<[f64; 3]>,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value '{value}' for '{key}': {e}")))
}

pub fn parse_split(text: &str) -> Result<[f64; 3]> {
    let parts = text
        .split(',')
        .map(|p| parse::<f64>("split", p.trim()))
        .collect::<Result<Vec<_>>>()?;
    match parts[..] {
        [a, b, c] => Ok([a, b, c]),
        _ => Err(Error::Config(format!("split needs three fractions, got '{text}'"))),
    }
}

pub fn parse_bool(text: &str) -> std::result::Result<bool, String> {
    match text {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => Err(format!("expected a boolean, got '{other}'")),
    }
}

pub fn parse_clip(text: &str) -> std::result::Result<Option<f64>, String> {
    if text == "none" {
        return Ok(None);
    }
    text.parse().map(Some).map_err(|e| format!("{e}"))
}

impl Overrides {
    /// Sets one field from its config-file key (the flag name without dashes).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "preset" => self.preset = Some(v.to_string()),
            "n-heads" => self.n_heads = Some(parse(key, v)?),
            "blocks" => self.blocks = Some(parse(key, v)?),
            "L1" => self.l1 = Some(parse(key, v)?),
            "L2" => self.l2 = Some(parse(key, v)?),
            "d" => self.d = Some(parse(key, v)?),
            "d-word" => self.d_word = Some(parse(key, v)?),
            "attention" => self.attention = Some(parse_bool(v).map_err(Error::Config)?),
            "pruning" => self.pruning = Some(parse(key, v)?),
            "entities" => self.entities = Some(parse(key, v)?),
            "epochs" => self.epochs = Some(parse(key, v)?),
            "lr" => self.lr = Some(parse(key, v)?),
            "optimizer" => self.optimizer = Some(parse(key, v)?),
            "momentum" => self.momentum = Some(parse(key, v)?),
            "clip" => self.clip = Some(parse_clip(v).map_err(Error::Config)?),
            "batch" => self.batch = Some(parse(key, v)?),
            "dropout" => self.dropout = Some(parse(key, v)?),
            "eval-every" => self.eval_every = Some(parse(key, v)?),
            "seed" => self.seed = Some(parse(key, v)?),
            "negative-label" => self.negative_label = Some(v.to_string()),
            "train" => self.train = Some(v.into()),
            "dev" => self.dev = Some(v.into()),
            "test" => self.test = Some(v.into()),
            "embeddings" => self.embeddings = Some(v.into()),
            "out" => self.out = Some(v.into()),
            "synthetic" => self.synthetic = Some(v.to_string()),
            "split" => self.split = Some(parse_split(v)?),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse_file_text(text: &str) -> Result<Self> {
        let mut o = Overrides::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
            o.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(o)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_file_text(&text)
    }

    /// Fields set in `other` win.
    pub fn merge(self, other: Overrides) -> Overrides {
        macro_rules! pick {
            ($($f:ident),*) => { Overrides { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            preset, n_heads, blocks, l1, l2, d, d_word, attention, pruning, entities, epochs, lr,
            optimizer, momentum, clip, batch, dropout, eval_every, seed, negative_label, train, dev,
            test, embeddings, out, synthetic, split
        )
    }
}

pub fn preset(name: &str) -> Result<ModelConfig> {
    match name {
        "sentence" => Ok(ModelConfig::default()),
        "cross-sentence" => Ok(ModelConfig::cross_sentence()),
        "desk" => Ok(ModelConfig::desk()),
        "gcn" => Ok(ModelConfig::gcn_baseline(300, 2, Pruning::Full)),
        other => Err(Error::Config(format!(
            "unknown preset '{other}' (expected sentence, cross-sentence, desk or gcn)"
        ))),
    }
}

impl RunConfig {
    /// Applies overrides to the defaults and validates the result.
    pub fn from_overrides(o: Overrides) -> Result<Self> {
        let mut c = RunConfig::default();
        if let Some(p) = &o.preset {
            c.model = preset(p)?;
        }
        let m = &mut c.model;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(m.n_heads, o.n_heads);
        set!(m.blocks, o.blocks);
        set!(m.d, o.d);
        set!(m.d_word, o.d_word);
        set!(m.attention, o.attention);
        set!(m.pruning, o.pruning);
        set!(m.n_entities, o.entities);
        if o.l1.is_some() || o.l2.is_some() {
            let l1 = o.l1.unwrap_or(m.sublayers[0]);
            let l2 = o.l2.unwrap_or(m.sublayers.get(1).copied().unwrap_or(0));
            m.sublayers = if l2 == 0 { vec![l1] } else { vec![l1, l2] };
        }
        let t = &mut c.train;
        set!(t.epochs, o.epochs);
        set!(t.learning_rate, o.lr);
        set!(t.optimizer, o.optimizer);
        set!(t.momentum, o.momentum);
        set!(t.grad_clip_norm, o.clip);
        set!(t.batch_size, o.batch);
        set!(t.dropout_p, o.dropout);
        set!(t.eval_every, o.eval_every);
        set!(t.seed, o.seed);
        c.negative_label = o.negative_label;
        c.paths.train = o.train;
        c.paths.dev = o.dev;
        c.paths.test = o.test;
        c.paths.embeddings = o.embeddings;
        set!(c.paths.out, o.out);
        set!(c.split, o.split);
        if let Some(s) = o.synthetic {
            c.synthetic = Some(SyntheticSpec::parse(&s, c.train.seed)?);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let Some(s) = &self.synthetic {
            s.validate()?;
            if self.paths.train.is_some() || self.paths.dev.is_some() || self.paths.test.is_some() {
                return Err(Error::Config(
                    "--synthetic cannot be combined with corpus files".into(),
                ));
            }
        }
        let total: f64 = self.split.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.split.iter().any(|&f| f < 0.0) {
            return Err(Error::Config(format!(
                "split fractions {:?} must be nonnegative and sum to 1",
                self.split
            )));
        }
        let p = &self.paths;
        for path in [&p.train, &p.dev, &p.test, &p.embeddings].into_iter().flatten() {
            if !path.is_file() {
                return Err(Error::Config(format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_sentence_level() {
        let c = RunConfig::from_overrides(Overrides::default()).unwrap();
        assert_eq!((c.model.n_heads, c.model.blocks, c.model.d), (3, 2, 300));
        assert_eq!(c.model.sublayers, vec![2, 4]);
    }

    #[test]
    fn divisibility_checked() {
        let ok = Overrides {
            d: Some(300),
            l1: Some(2),
            l2: Some(4),
            ..Default::default()
        };
        assert!(RunConfig::from_overrides(ok).is_ok());
        let bad = Overrides {
            d: Some(301),
            l2: Some(4),
            ..Default::default()
        };
        assert!(matches!(RunConfig::from_overrides(bad), Err(Error::Config(_))));
    }

    #[test]
    fn flags_override_file() {
        let file = Overrides::parse_file_text("# comment\nd = 60\nn-heads=2\nL2 = 0\nclip = none\n").unwrap();
        let flags = Overrides {
            d: Some(30),
            ..Default::default()
        };
        let c = RunConfig::from_overrides(file.merge(flags)).unwrap();
        assert_eq!((c.model.d, c.model.n_heads), (30, 2));
        assert_eq!(c.model.sublayers, vec![2]);
        assert_eq!(c.train.grad_clip_norm, None);
    }

    #[test]
    fn file_errors_name_the_line() {
        let err = Overrides::parse_file_text("d = 4\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn missing_paths_rejected() {
        let o = Overrides {
            train: Some("/definitely/not/here.jsonl".into()),
            ..Default::default()
        };
        assert!(RunConfig::from_overrides(o).is_err());
    }

    #[test]
    fn synthetic_seed_follows_run_seed() {
        let o = Overrides {
            seed: Some(9),
            synthetic: Some("n=10".into()),
            ..Default::default()
        };
        let c = RunConfig::from_overrides(o).unwrap();
        assert_eq!(c.synthetic.unwrap().seed, 9);
    }
}
