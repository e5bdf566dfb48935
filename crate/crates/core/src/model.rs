//! The relation-extraction model wrapped around the AGGCN encoder.
//!
//! Forward pass for one instance:
//!
//! ```text
//! tokens ─ embed ─ affine ─► x ─ M blocks ─► h
//! h_sent = max over non-entity rows of h
//! h_e    = max over the rows of each entity span
//! logits = classifier(FFNN([h_sent; h_e1; …; h_eE]))
//! ```
//!
//! Hard pruning (`Pruning::K`) restricts the tree before anything is encoded.

use serde::{Deserialize, Serialize};

use crate::data::{random_embeddings, Instance, Vocab};
use crate::depgraph::{prune_tree, restrict_graph, Pruning, Span};
use crate::error::{Error, Result};
use crate::layers::{encode, BlockParams, DenseLayerParams, Dropout};
use crate::numerics::{Matrix, ParamId, ParamStore, Rng, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// N: attention heads (and dense branches) per block.
    pub n_heads: usize,
    /// M: number of blocks.
    pub blocks: usize,
    /// Sub-layer counts of the dense groups applied in sequence per branch.
    pub sublayers: Vec<usize>,
    /// Block width.
    pub d: usize,
    pub d_word: usize,
    /// When false every block uses the hard adjacency.
    pub attention: bool,
    pub pruning: Pruning,
    pub n_entities: usize,
    pub labels: Vec<String>,
}

impl Default for ModelConfig {
    /// Sentence-level setting: N=3, M=2, L=(2, 4), d=300.
    fn default() -> Self {
        ModelConfig {
            n_heads: 3,
            blocks: 2,
            sublayers: vec![2, 4],
            d: 300,
            d_word: 300,
            attention: true,
            pruning: Pruning::Full,
            n_entities: 2,
            labels: Vec::new(),
        }
    }
}

impl ModelConfig {
    /// Cross-sentence n-ary setting: N=2, M=2, L=(2, 4), d=340.
    pub fn cross_sentence() -> Self {
        ModelConfig {
            n_heads: 2,
            d: 340,
            d_word: 300,
            n_entities: 3,
            ..Default::default()
        }
    }

    /// Same topology as the default with a small width for desk-scale runs.
    pub fn desk() -> Self {
        ModelConfig {
            d: 32,
            d_word: 32,
            ..Default::default()
        }
    }

    /// Plain GCN stack: one head, one single-sub-layer group, no attention.
    pub fn gcn_baseline(d: usize, blocks: usize, pruning: Pruning) -> Self {
        ModelConfig {
            n_heads: 1,
            blocks,
            sublayers: vec![1],
            d,
            d_word: d,
            attention: false,
            pruning,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_heads == 0 {
            return bad("n_heads must be >= 1".into());
        }
        if self.blocks == 0 {
            return bad("blocks must be >= 1".into());
        }
        if self.d == 0 || self.d_word == 0 {
            return bad("d and d_word must be positive".into());
        }
        if self.sublayers.is_empty() {
            return bad("at least one dense group is required".into());
        }
        for &l in &self.sublayers {
            DenseLayerParams::schedule(self.d, l)?;
        }
        if !(1..=3).contains(&self.n_entities) {
            return bad(format!("n_entities must be 1..=3, got {}", self.n_entities));
        }
        if !self.labels.is_empty() && self.labels.len() < 2 {
            return bad("at least two labels are required".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Affine {
    /// `[d_out × d_in]`
    pub w: ParamId,
    /// `[1 × d_out]`
    pub b: ParamId,
}

impl Affine {
    fn init(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        Affine {
            w: store.add_uniform(format!("{name}.w"), d_out, d_in, d_in, rng),
            b: store.add_zeros(format!("{name}.b"), 1, d_out),
        }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let wt = tape.transpose(w);
        let y = tape.matmul(x, wt)?;
        tape.add_row(y, b)
    }
}

/// Parameters are registered in this order, which is also the checkpoint order:
/// embeddings, input projection, blocks (heads, dense branches, combination),
/// FFNN layers, classifier.
#[derive(Clone, Debug)]
pub struct AggcnModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub embeddings: ParamId,
    pub input_proj: Affine,
    pub blocks: Vec<BlockParams>,
    pub ffnn: [Affine; 2],
    pub classifier: Affine,
}

/// Instance after pruning, ready for encoding.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub tokens: Vec<String>,
    pub token_ids: Vec<usize>,
    pub adjacency: Matrix,
    pub entities: Vec<Span>,
    /// Original index of each kept token.
    pub kept: Vec<usize>,
}

pub struct Forward {
    pub logits: Var,
    pub hidden: Var,
    pub attention: Vec<(usize, usize, Var)>,
    /// True when every token was an entity token and sentence pooling fell back to all rows.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    /// 0-based block index (always >= 1).
    pub block: usize,
    /// 0-based head index.
    pub head: usize,
    pub tokens: Vec<String>,
    pub matrix: Matrix,
}

impl AggcnModel {
    /// Builds a model; `embeddings` must be `[vocab × d_word]` when given.
    pub fn new(config: ModelConfig, vocab: Vocab, embeddings: Option<Matrix>, rng: &Rng) -> Result<Self> {
        config.validate()?;
        if config.labels.len() < 2 {
            return Err(Error::Config("model needs at least two labels".into()));
        }
        let mut init = rng.derive("init");
        let table = match embeddings {
            Some(m) => {
                if m.shape() != (vocab.len(), config.d_word) {
                    return Err(Error::Shape {
                        op: "embeddings",
                        left: m.shape(),
                        right: (vocab.len(), config.d_word),
                    });
                }
                m
            }
            None => random_embeddings(&vocab, config.d_word, &mut rng.derive("embeddings")),
        };
        let d = config.d;
        let mut store = ParamStore::new();
        let embeddings = store.add("embeddings", table);
        let input_proj = Affine::init(&mut store, "input_proj", config.d_word, d, &mut init);
        let blocks = (0..config.blocks)
            .map(|m| {
                BlockParams::init(
                    &mut store,
                    &format!("block{m}"),
                    d,
                    config.n_heads,
                    &config.sublayers,
                    &mut init,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let ffnn = [
            Affine::init(&mut store, "ffnn0", (1 + config.n_entities) * d, d, &mut init),
            Affine::init(&mut store, "ffnn1", d, d, &mut init),
        ];
        let classifier = Affine::init(&mut store, "classifier", d, config.labels.len(), &mut init);
        Ok(AggcnModel {
            config,
            vocab,
            store,
            embeddings,
            input_proj,
            blocks,
            ffnn,
            classifier,
        })
    }

    pub fn n_labels(&self) -> usize {
        self.config.labels.len()
    }

    pub fn zero_classifier(&mut self) {
        self.store.get_mut(self.classifier.w).value.fill(0.0);
        self.store.get_mut(self.classifier.b).value.fill(0.0);
    }

    /// Applies the configured pruning and builds the adjacency.
    pub fn prepare(&self, inst: &Instance) -> Result<Prepared> {
        self.prepare_with(inst, self.config.pruning)
    }

    pub fn prepare_with(&self, inst: &Instance, pruning: Pruning) -> Result<Prepared> {
        if inst.entities.len() != self.config.n_entities {
            return Err(Error::contract(format!(
                "instance {} has {} entities, model expects {}",
                inst.id,
                inst.entities.len(),
                self.config.n_entities
            )));
        }
        let linked = inst.graph.link_sentence_roots();
        let (graph, entities, kept) = match pruning {
            Pruning::Full => (linked, inst.entities.clone(), (0..inst.len()).collect()),
            Pruning::K(_) => {
                let keep = prune_tree(&linked, &inst.entities, pruning)?;
                let r = restrict_graph(&linked, &keep)?;
                let spans = inst
                    .entities
                    .iter()
                    .map(|&s| r.map_span(s))
                    .collect::<Result<Vec<_>>>()?;
                (r.graph, spans, keep.into_iter().collect())
            }
        };
        let tokens = graph.tokens().to_vec();
        let token_ids = tokens.iter().map(|t| self.vocab.id(t)).collect();
        Ok(Prepared {
            tokens,
            token_ids,
            adjacency: graph.build_adjacency().into_matrix(),
            entities,
            kept,
        })
    }

    /// Embedding rows projected to block width: `n × d`.
    pub fn lookup_embed(&self, tape: &mut Tape, token_ids: &[usize]) -> Result<Var> {
        self.lookup_embed_in(&self.store, tape, token_ids)
    }

    fn lookup_embed_in(&self, store: &ParamStore, tape: &mut Tape, token_ids: &[usize]) -> Result<Var> {
        let e = tape.gather_rows(store, self.embeddings, token_ids)?;
        self.input_proj.apply(tape, store, e)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Prepared, dropout: Option<Dropout<'_>>) -> Result<Forward> {
        self.forward_in(&self.store, tape, p, dropout)
    }

    /// Forward pass reading parameter values from `store`, which must have
    /// this model's layout (used by gradient checks).
    pub fn forward_in(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        p: &Prepared,
        dropout: Option<Dropout<'_>>,
    ) -> Result<Forward> {
        let x = self.lookup_embed_in(store, tape, &p.token_ids)?;
        let adj = tape.constant(p.adjacency.clone());
        let enc = encode(
            tape,
            store,
            x,
            adj,
            &self.blocks,
            self.config.attention,
            dropout,
        )?;
        let (sent, degenerate) = sentence_repr(tape, enc.h, &p.entities)?;
        let mut parts = vec![sent];
        for &span in &p.entities {
            parts.push(entity_repr(tape, enc.h, span)?);
        }
        let joined = tape.concat_cols(&parts)?;
        let f0 = self.ffnn[0].apply(tape, store, joined)?;
        let f0 = tape.relu(f0);
        let f1 = self.ffnn[1].apply(tape, store, f0)?;
        let logits = self.classifier.apply(tape, store, f1)?;
        Ok(Forward {
            logits,
            hidden: enc.h,
            attention: enc.attention,
            degenerate,
        })
    }

    /// Logits (`1 × C`) for an instance under the configured pruning.
    pub fn classify(&self, tape: &mut Tape, inst: &Instance) -> Result<Var> {
        let p = self.prepare(inst)?;
        Ok(self.forward(tape, &p, None)?.logits)
    }

    pub fn loss(&self, tape: &mut Tape, inst: &Instance, dropout: Option<Dropout<'_>>) -> Result<Var> {
        self.loss_in(&self.store, tape, inst, dropout)
    }

    pub fn loss_in(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        inst: &Instance,
        dropout: Option<Dropout<'_>>,
    ) -> Result<Var> {
        let p = self.prepare(inst)?;
        let f = self.forward_in(store, tape, &p, dropout)?;
        tape.cross_entropy(f.logits, inst.label)
    }

    /// Predicted label and logits.
    pub fn predict(&self, inst: &Instance) -> Result<(usize, Vec<f64>)> {
        let mut tape = Tape::new();
        let logits = self.classify(&mut tape, inst)?;
        let z = tape.value(logits).as_slice().to_vec();
        let best = z
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        Ok((best, z))
    }

    /// The attention-guided adjacency matrices computed for `inst`, keyed by (block, head).
    pub fn attention_maps(&self, inst: &Instance) -> Result<Vec<AttentionMap>> {
        let p = self.prepare(inst)?;
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, &p, None)?;
        Ok(f.attention
            .iter()
            .map(|&(block, head, a)| AttentionMap {
                block,
                head,
                tokens: p.tokens.clone(),
                matrix: tape.value(a).clone(),
            })
            .collect())
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }
}

/// Max over rows that belong to no entity span; falls back to all rows
/// (second value `true`) when every token is an entity token.
pub fn sentence_repr(tape: &mut Tape, h: Var, entities: &[Span]) -> Result<(Var, bool)> {
    let n = tape.shape(h).0;
    let rows: Vec<usize> = (0..n)
        .filter(|&i| !entities.iter().any(|s| s.contains(i)))
        .collect();
    if rows.is_empty() {
        let all: Vec<usize> = (0..n).collect();
        return Ok((tape.max_rows(h, &all)?, true));
    }
    Ok((tape.max_rows(h, &rows)?, false))
}

pub fn entity_repr(tape: &mut Tape, h: Var, span: Span) -> Result<Var> {
    if span.is_empty() {
        return Err(Error::contract("entity span is empty"));
    }
    let rows: Vec<usize> = span.tokens().collect();
    tape.max_rows(h, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depgraph::DependencyGraph;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_heads: 2,
            blocks: 2,
            sublayers: vec![2, 4],
            d: 8,
            d_word: 6,
            labels: vec!["a".into(), "b".into(), "c".into()],
            ..Default::default()
        }
    }

    fn instance() -> Instance {
        let graph = DependencyGraph::single_sentence(&["x", "y", "z", "q", "x"], &[0, 1, 2, 1, 4])
            .unwrap();
        Instance {
            id: "t".into(),
            graph,
            entities: vec![Span::single(1), Span::single(3)],
            label: 1,
        }
    }

    fn model() -> AggcnModel {
        AggcnModel::new(tiny_config(), Vocab::new(["x", "y", "z"]), None, &Rng::new(0)).unwrap()
    }

    #[test]
    fn pooling_examples() {
        let mut t = Tape::new();
        let h = t.constant(Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0], [3.0, -1.0]]));
        let (s, deg) = sentence_repr(&mut t, h, &[Span::single(0)]).unwrap();
        assert_eq!(t.value(s).as_slice(), &[3.0, 2.0]);
        assert!(!deg);
        let (s, _) = sentence_repr(&mut t, h, &[Span::new(0, 2)]).unwrap();
        assert_eq!(t.value(s).as_slice(), &[3.0, -1.0]);
        let (s, deg) = sentence_repr(&mut t, h, &[Span::new(0, 3)]).unwrap();
        assert!(deg);
        assert_eq!(t.value(s).as_slice(), &[3.0, 2.0]);

        let h2 = t.constant(Matrix::from_rows(&[[1.0, 5.0], [4.0, 2.0]]));
        let e = entity_repr(&mut t, h2, Span::new(0, 2)).unwrap();
        assert_eq!(t.value(e).as_slice(), &[4.0, 5.0]);
        let e = entity_repr(&mut t, h2, Span::single(1)).unwrap();
        assert_eq!(t.value(e).as_slice(), &[4.0, 2.0]);
        assert!(entity_repr(&mut t, h2, Span::new(1, 1)).is_err());
    }

    #[test]
    fn lookup_shapes_and_unk() {
        let m = model();
        let mut t = Tape::new();
        let ids = [m.vocab.id("x"), m.vocab.id("x"), m.vocab.id("never")];
        let e = m.lookup_embed(&mut t, &ids).unwrap();
        assert_eq!(t.shape(e), (3, 8));
        assert_eq!(t.value(e).row(0), t.value(e).row(1));
        let unk = m.lookup_embed(&mut t, &[crate::data::UNK_ID]).unwrap();
        assert_eq!(t.value(e).row(2), t.value(unk).row(0));
    }

    #[test]
    fn classify_shape_and_determinism() {
        let m = model();
        let (_, z1) = m.predict(&instance()).unwrap();
        let (_, z2) = m.predict(&instance()).unwrap();
        assert_eq!(z1.len(), 3);
        assert_eq!(z1, z2);
    }

    #[test]
    fn zero_classifier_gives_uniform_loss() {
        let mut m = model();
        m.zero_classifier();
        let mut t = Tape::new();
        let l = m.loss(&mut t, &instance(), None).unwrap();
        assert!((t.scalar(l) - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn attention_map_counts() {
        let m = model();
        let maps = m.attention_maps(&instance()).unwrap();
        assert_eq!(maps.len(), 2);
        for map in &maps {
            assert_eq!(map.block, 1);
            assert_eq!(map.matrix.shape(), (5, 5));
            for s in map.matrix.row_sums() {
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
        let one = AggcnModel::new(
            ModelConfig { blocks: 1, ..tiny_config() },
            Vocab::new(["x"]),
            None,
            &Rng::new(0),
        )
        .unwrap();
        assert!(one.attention_maps(&instance()).unwrap().is_empty());
    }

    #[test]
    fn pruned_and_full_share_label_space() {
        let full = model();
        let mut pruned = model();
        pruned.config.pruning = Pruning::K(0);
        let p = pruned.prepare(&instance()).unwrap();
        assert!(p.tokens.len() < instance().len());
        let (_, zf) = full.predict(&instance()).unwrap();
        let (_, zp) = pruned.predict(&instance()).unwrap();
        assert_eq!(zf.len(), zp.len());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { d: 301, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::cross_sentence().validate().is_ok());
        assert!(ModelConfig { blocks: 0, ..ModelConfig::default() }.validate().is_err());
        let wrong_entities = Instance {
            entities: vec![Span::single(0)],
            ..instance()
        };
        assert!(model().prepare(&wrong_entities).is_err());
    }
}
