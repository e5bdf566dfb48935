use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::depgraph::{DependencyGraph, Span};
use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: String,
    pub graph: DependencyGraph,
    /// Entity spans in increasing token order.
    pub entities: Vec<Span>,
    pub label: usize,
}

impl Instance {
    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    pub fn is_entity_token(&self, i: usize) -> bool {
        self.entities.iter().any(|s| s.contains(i))
    }
}

/// Token vocabulary with `<pad>` at 0 and `<unk>` at 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Reserved entries followed by the given tokens in order, duplicates dropped.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [PAD.to_string(), UNK.to_string()]
            .into_iter()
            .chain(tokens.into_iter().map(Into::into))
        {
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, falling back to `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub instances: Vec<Instance>,
    pub label_vocab: Vec<String>,
    pub token_vocab: Vocab,
    pub negative_label: Option<usize>,
}

/// Line format of instance files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub tokens: Vec<String>,
    pub heads: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deprels: Option<Vec<String>>,
    #[serde(default)]
    pub sent_bounds: Vec<[usize; 2]>,
    pub entities: Vec<[usize; 2]>,
    pub label: String,
}

/// An instance whose label is still a string.
#[derive(Clone, Debug)]
pub struct RawInstance {
    pub id: String,
    pub graph: DependencyGraph,
    pub entities: Vec<Span>,
    pub label: String,
}

impl RawInstance {
    pub fn from_record(r: Record) -> Result<Self> {
        let bounds: Vec<(usize, usize)> = r.sent_bounds.iter().map(|b| (b[0], b[1])).collect();
        let graph = DependencyGraph::from_conll(r.tokens, &r.heads, r.deprels, &bounds)?;
        let n = graph.len();
        if !(2..=3).contains(&r.entities.len()) {
            return Err(Error::contract(format!(
                "expected 2 or 3 entities, got {}",
                r.entities.len()
            )));
        }
        let mut entities = Vec::with_capacity(r.entities.len());
        for [s, e] in r.entities {
            if s == 0 || e < s || e > n {
                return Err(Error::contract(format!(
                    "entity span [{s}, {e}] outside 1..={n}"
                )));
            }
            entities.push(Span::new(s - 1, e));
        }
        let mut sorted = entities.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0].end > w[1].start) {
            return Err(Error::contract("entity spans overlap"));
        }
        Ok(RawInstance {
            id: r.id,
            graph,
            entities,
            label: r.label,
        })
    }
}

impl Instance {
    pub fn to_record(&self, labels: &[String]) -> Record {
        let g = &self.graph;
        Record {
            id: self.id.clone(),
            tokens: g.tokens().to_vec(),
            heads: g.conll_heads(),
            deprels: g.deprels().map(|d| d.to_vec()),
            sent_bounds: g.sentences().iter().map(|s| [s.start + 1, s.end]).collect(),
            entities: self.entities.iter().map(|s| [s.start + 1, s.end]).collect(),
            label: labels[self.label].clone(),
        }
    }
}

impl Corpus {
    /// Label vocabulary = sorted distinct labels; token vocabulary = reserved
    /// entries then sorted distinct tokens. Both are independent of instance order.
    pub fn from_raw(raw: Vec<RawInstance>) -> Self {
        let labels: Vec<String> = raw
            .iter()
            .map(|r| r.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let tokens: BTreeSet<&str> = raw
            .iter()
            .flat_map(|r| r.graph.tokens().iter().map(String::as_str))
            .collect();
        let token_vocab = Vocab::new(tokens);
        let index: HashMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let instances = raw
            .into_iter()
            .map(|r| Instance {
                label: index[r.label.as_str()],
                id: r.id,
                graph: r.graph,
                entities: r.entities,
            })
            .collect();
        Corpus {
            instances,
            label_vocab: labels,
            token_vocab,
            negative_label: None,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.label_vocab.iter().position(|l| l == name)
    }

    pub fn set_negative_label(&mut self, name: Option<&str>) -> Result<()> {
        self.negative_label = match name {
            None => None,
            Some(n) => Some(
                self.label_id(n)
                    .ok_or_else(|| Error::Config(format!("negative label '{n}' not in label set")))?,
            ),
        };
        Ok(())
    }

    /// Re-indexes labels against `labels` (e.g. a trained model's label set).
    pub fn with_labels(&self, labels: &[String]) -> Result<Corpus> {
        let mut out = self.clone();
        for inst in &mut out.instances {
            let name = &self.label_vocab[inst.label];
            inst.label = labels.iter().position(|l| l == name).ok_or_else(|| {
                Error::Config(format!("label '{name}' of instance {} is unknown", inst.id))
            })?;
        }
        out.negative_label = self
            .negative_label
            .and_then(|n| labels.iter().position(|l| *l == self.label_vocab[n]));
        out.label_vocab = labels.to_vec();
        Ok(out)
    }

    pub fn find(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    /// Subset by instance positions, keeping both vocabularies.
    pub fn select(&self, positions: &[usize]) -> Corpus {
        Corpus {
            instances: positions.iter().map(|&p| self.instances[p].clone()).collect(),
            label_vocab: self.label_vocab.clone(),
            token_vocab: self.token_vocab.clone(),
            negative_label: self.negative_label,
        }
    }

    /// Instance count per label id.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.label_vocab.len()];
        for i in &self.instances {
            counts[i.label] += 1;
        }
        counts
    }
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut raw = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let record: Record = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let inst = RawInstance::from_record(record).map_err(|e| at(e.to_string()))?;
        raw.push(inst);
    }
    Ok(Corpus::from_raw(raw))
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for inst in &corpus.instances {
        let line = serde_json::to_string(&inst.to_record(&corpus.label_vocab))
            .expect("records always serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Seeded shuffle followed by a contiguous train/dev/test split.
pub fn split(corpus: &Corpus, fractions: [f64; 3], rng: &mut Rng) -> Result<(Corpus, Corpus, Corpus)> {
    if corpus.is_empty() {
        return Err(Error::contract("cannot split an empty corpus"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f < 0.0) {
        return Err(Error::contract(format!(
            "split fractions {fractions:?} must be nonnegative and sum to 1"
        )));
    }
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_dev = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let (train, rest) = order.split_at(n_train);
    let (dev, test) = rest.split_at(n_dev);
    Ok((corpus.select(train), corpus.select(dev), corpus.select(test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    const ONE: &str = r#"{"id":"a","tokens":["x","y","z"],"heads":[0,1,1],"sent_bounds":[[1,3]],"entities":[[2,2],[3,3]],"label":"rel"}"#;

    #[test]
    fn empty_file_gives_empty_corpus() {
        let f = write_lines(&[]);
        let c = read_corpus(f.path()).unwrap();
        assert!(c.is_empty());
        assert!(c.label_vocab.is_empty());
        assert_eq!(c.token_vocab.tokens(), &[PAD, UNK]);
    }

    #[test]
    fn single_instance() {
        let f = write_lines(&[ONE]);
        let c = read_corpus(f.path()).unwrap();
        assert_eq!(c.len(), 1);
        let inst = &c.instances[0];
        assert_eq!(inst.len(), 3);
        assert_eq!(inst.entities, vec![Span::single(1), Span::single(2)]);
        assert_eq!(c.label_vocab, vec!["rel"]);
        assert_eq!(c.token_vocab.id("y"), 3);
        assert_eq!(c.token_vocab.id("never-seen"), UNK_ID);
    }

    #[test]
    fn cyclic_heads_report_line() {
        let bad = r#"{"id":"b","tokens":["x","y"],"heads":[2,1],"sent_bounds":[[1,2]],"entities":[[1,1],[2,2]],"label":"r"}"#;
        let f = write_lines(&[ONE, bad]);
        match read_corpus(f.path()) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("cyclic") || msg.contains("roots"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_and_out_of_range() {
        let f = write_lines(&["{not json"]);
        assert!(matches!(read_corpus(f.path()), Err(Error::Parse { line: 1, .. })));
        let oob = r#"{"id":"c","tokens":["x","y"],"heads":[0,5],"entities":[[1,1],[2,2]],"label":"r"}"#;
        let f = write_lines(&[oob]);
        match read_corpus(f.path()) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("out of range"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let lines: Vec<String> = (0..10).map(|i| ONE.replace("\"a\"", &format!("\"i{i}\""))).collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let f = write_lines(&refs);
        let c = read_corpus(f.path()).unwrap();
        let (tr, dv, te) = split(&c, [0.8, 0.1, 0.1], &mut Rng::new(3)).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (8, 1, 1));
        let (tr2, _, _) = split(&c, [0.8, 0.1, 0.1], &mut Rng::new(3)).unwrap();
        assert_eq!(tr, tr2);
        let (all, none, _) = split(&c, [1.0, 0.0, 0.0], &mut Rng::new(3)).unwrap();
        assert_eq!((all.len(), none.len()), (10, 0));
        let mut ids: Vec<_> = tr.instances.iter().chain(&dv.instances).chain(&te.instances).map(|i| i.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 10);
        assert!(split(&c, [0.5, 0.1, 0.1], &mut Rng::new(3)).is_err());
        assert!(split(&c.select(&[]), [1.0, 0.0, 0.0], &mut Rng::new(3)).is_err());
    }

    #[test]
    fn relabel_against_model_labels() {
        let f = write_lines(&[ONE]);
        let c = read_corpus(f.path()).unwrap();
        let labels = vec!["other".to_string(), "rel".to_string()];
        let r = c.with_labels(&labels).unwrap();
        assert_eq!(r.instances[0].label, 1);
        assert!(c.with_labels(&["x".to_string()]).is_err());
    }
}
