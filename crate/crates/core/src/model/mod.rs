//! The tagging network: embedding lookup, shared bidirectional LSTM layers
//! with variational dropout, and one linear projection + linear-chain CRF
//! head per task. All heads attach to the top shared layer.

mod checkpoint;
mod crf;
mod lstm;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use crf::{crf_log_likelihood, crf_log_partition, crf_path_score, crf_viterbi, CrfScores};
pub use lstm::bilstm_layer;

use crate::data::{EmbeddingTable, Token};
use crate::graph::{Graph, GraphError, NodeId};
use crate::matrix::Matrix;
use crate::util::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("gold sequence length {got} does not match {expected} emissions")]
    GoldLength { expected: usize, got: usize },
    #[error("tag index {idx} out of range for {k} tags")]
    TagIndexOutOfRange { idx: usize, k: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("checkpoint: {0}")]
    CheckpointFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden units per shared layer and per direction.
    pub layer_sizes: Vec<usize>,
    pub input_dropout: f64,
    pub recurrent_dropout: f64,
    pub embedding_id: String,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layer_sizes: vec![100],
            input_dropout: 0.3,
            recurrent_dropout: 0.3,
            embedding_id: "default".into(),
            seed: 0,
        }
    }
}

/// Named parameter matrices in a stable order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    mats: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            mats: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, mat: Matrix) -> usize {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.mats.push(mat);
        self.mats.len() - 1
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn get(&self, idx: usize) -> &Matrix {
        &self.mats[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Matrix {
        &mut self.mats[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.mats.iter().map(|m| (m.rows(), m.cols()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(|n| n.as_str()).zip(self.mats.iter())
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Binds store parameters to graph nodes on demand, recording the binding so
/// the trainer can route gradients back to the store. Alternatively wraps a
/// caller-provided set of parameter nodes (one per store slot), which lets
/// external gradient checkers drive the same model-building code.
pub struct Binder<'a> {
    store: &'a ParamStore,
    provided: Option<&'a [NodeId]>,
    nodes: Vec<Option<NodeId>>,
    order: Vec<(usize, NodeId)>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Binder {
            store,
            provided: None,
            nodes: vec![None; store.len()],
            order: Vec::new(),
        }
    }

    /// Binder over pre-created parameter nodes, aligned with store indices.
    pub fn with_nodes(store: &'a ParamStore, nodes: &'a [NodeId]) -> Self {
        assert_eq!(nodes.len(), store.len());
        Binder {
            store,
            provided: Some(nodes),
            nodes: vec![None; store.len()],
            order: Vec::new(),
        }
    }

    pub fn node(&mut self, g: &mut Graph, idx: usize) -> NodeId {
        if let Some(provided) = self.provided {
            return provided[idx];
        }
        if let Some(id) = self.nodes[idx] {
            return id;
        }
        let id = g.parameter(self.store.get(idx).clone());
        self.nodes[idx] = Some(id);
        self.order.push((idx, id));
        id
    }

    pub fn into_bindings(self) -> Vec<(usize, NodeId)> {
        self.order
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// One mask per layer per direction, for the layer input and the recurrent
/// connection; the same mask is applied at every timestep of a sequence.
#[derive(Clone, Debug)]
pub struct MaskSet {
    /// [layer][direction] -> (input mask 1 x in_dim, recurrent mask 1 x h).
    pub layers: Vec<[(Matrix, Matrix); 2]>,
}

fn bernoulli_mask(cols: usize, rate: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let keep = 1.0 - rate;
    Matrix::from_vec(
        1,
        cols,
        (0..cols)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect(),
    )
}

/// Draws inverted-dropout masks Bernoulli(1-rate)/(1-rate) for every layer
/// and direction. In `Eval` mode all masks are ones and the rng is untouched.
pub fn make_variational_masks(
    input_dim: usize,
    layer_sizes: &[usize],
    input_rate: f64,
    recurrent_rate: f64,
    mode: DropoutMode,
    rng: &mut ChaCha8Rng,
) -> MaskSet {
    assert!((0.0..1.0).contains(&input_rate) && (0.0..1.0).contains(&recurrent_rate));
    let mut layers = Vec::with_capacity(layer_sizes.len());
    let mut in_dim = input_dim;
    for &h in layer_sizes {
        let mut dirs = Vec::with_capacity(2);
        for _ in 0..2 {
            let (input, rec) = match mode {
                DropoutMode::Train => (
                    bernoulli_mask(in_dim, input_rate, rng),
                    bernoulli_mask(h, recurrent_rate, rng),
                ),
                DropoutMode::Eval => (Matrix::filled(1, in_dim, 1.0), Matrix::filled(1, h, 1.0)),
            };
            dirs.push((input, rec));
        }
        layers.push([dirs.remove(0), dirs.remove(0)]);
        in_dim = 2 * h;
    }
    MaskSet { layers }
}

/// Embedding lookup for one sentence: row t is the vector of token t, with
/// case-fold fallback and the unknown vector for out-of-vocabulary tokens.
pub fn embed_tokens(sentence: &[Token], table: &EmbeddingTable) -> Matrix {
    let mut out = Matrix::zeros(sentence.len(), table.dim());
    for (t, tok) in sentence.iter().enumerate() {
        for (c, v) in table.lookup(&tok.surface).iter().enumerate() {
            out.set(t, c, *v);
        }
    }
    out
}

const GATES: [&str; 4] = ["i", "f", "o", "g"];
const DIRS: [&str; 2] = ["fwd", "bwd"];

#[derive(Clone, Copy, Debug)]
pub struct LstmDirIds {
    pub w: [usize; 4],
    pub u: [usize; 4],
    pub b: [usize; 4],
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstmLayerIds {
    pub dirs: [LstmDirIds; 2],
}

#[derive(Clone, Debug)]
pub struct HeadIds {
    pub proj_w: usize,
    pub proj_b: usize,
    /// Transition scores indexed [to][from].
    pub transitions: usize,
    pub start: usize,
    pub end: usize,
    pub tag_count: usize,
}

/// Shared trunk parameters plus one CRF head per task.
#[derive(Clone, Debug)]
pub struct TaskModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub input_dim: usize,
    layers: Vec<BiLstmLayerIds>,
    heads: BTreeMap<String, HeadIds>,
}

/// A built per-sequence loss graph with its parameter bindings.
pub struct LossGraph {
    pub graph: Graph,
    pub loss: NodeId,
    /// (store index, node) for every parameter bound into this graph.
    pub bound: Vec<(usize, NodeId)>,
}

impl TaskModel {
    /// Fresh model; `tasks` maps task id to its tag count. Weight matrices
    /// are Glorot-uniform, biases zero except forget-gate biases at 1.0,
    /// CRF transitions zero. Heads are created in sorted task order.
    pub fn new(config: ModelConfig, input_dim: usize, tasks: &[(String, usize)]) -> TaskModel {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xA11CE));
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        let mut in_dim = input_dim;
        for (l, &h) in config.layer_sizes.iter().enumerate() {
            let mut dirs = Vec::with_capacity(2);
            for dir in DIRS {
                let mut w = [0usize; 4];
                let mut u = [0usize; 4];
                let mut b = [0usize; 4];
                for (gi, gate) in GATES.iter().enumerate() {
                    w[gi] = params.add(
                        format!("lstm{l}.{dir}.w_{gate}"),
                        Matrix::glorot(in_dim, h, &mut rng),
                    );
                    u[gi] = params.add(
                        format!("lstm{l}.{dir}.u_{gate}"),
                        Matrix::glorot(h, h, &mut rng),
                    );
                    let bias = if *gate == "f" {
                        Matrix::filled(1, h, 1.0)
                    } else {
                        Matrix::zeros(1, h)
                    };
                    b[gi] = params.add(format!("lstm{l}.{dir}.b_{gate}"), bias);
                }
                dirs.push(LstmDirIds { w, u, b, hidden: h });
            }
            layers.push(BiLstmLayerIds {
                dirs: [dirs[0], dirs[1]],
            });
            in_dim = 2 * h;
        }

        let top = in_dim;
        let mut sorted: Vec<(String, usize)> = tasks.to_vec();
        sorted.sort();
        let mut heads = BTreeMap::new();
        for (task, k) in sorted {
            let head = HeadIds {
                proj_w: params.add(
                    format!("head.{task}.proj_w"),
                    Matrix::glorot(top, k, &mut rng),
                ),
                proj_b: params.add(format!("head.{task}.proj_b"), Matrix::zeros(1, k)),
                transitions: params.add(format!("head.{task}.trans"), Matrix::zeros(k, k)),
                start: params.add(format!("head.{task}.start"), Matrix::zeros(1, k)),
                end: params.add(format!("head.{task}.end"), Matrix::zeros(1, k)),
                tag_count: k,
            };
            heads.insert(task, head);
        }

        TaskModel {
            config,
            params,
            input_dim,
            layers,
            heads,
        }
    }

    pub fn tasks(&self) -> impl Iterator<Item = (&str, usize)> {
        self.heads.iter().map(|(t, h)| (t.as_str(), h.tag_count))
    }

    pub fn tag_count(&self, task: &str) -> Result<usize, ModelError> {
        Ok(self.head(task)?.tag_count)
    }

    fn head(&self, task: &str) -> Result<&HeadIds, ModelError> {
        self.heads
            .get(task)
            .ok_or_else(|| ModelError::UnknownTask(task.to_string()))
    }

    /// Store indices of the shared trunk (everything that is not a head).
    pub fn trunk_param_indices(&self) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| !self.params.name(i).starts_with("head."))
            .collect()
    }

    pub fn head_param_indices(&self, task: &str) -> Result<Vec<usize>, ModelError> {
        let h = self.head(task)?;
        Ok(vec![h.proj_w, h.proj_b, h.transitions, h.start, h.end])
    }

    /// Per-direction top hidden size doubled; the feature width heads see.
    pub fn feature_dim(&self) -> usize {
        self.config
            .layer_sizes
            .last()
            .map(|h| 2 * h)
            .unwrap_or(self.input_dim)
    }

    /// Fresh masks for one training sequence (or all-ones in eval mode).
    pub fn draw_masks(&self, mode: DropoutMode, rng: &mut ChaCha8Rng) -> MaskSet {
        make_variational_masks(
            self.input_dim,
            &self.config.layer_sizes,
            self.config.input_dropout,
            self.config.recurrent_dropout,
            mode,
            rng,
        )
    }

    fn features(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        embedded: &Matrix,
        masks: &MaskSet,
    ) -> Result<Vec<NodeId>, ModelError> {
        let len = embedded.rows();
        if len == 0 {
            return Err(ModelError::EmptySequence);
        }
        let x = g.input(embedded.clone());
        let mut rows: Vec<NodeId> = (0..len)
            .map(|t| g.row_select(x, t))
            .collect::<Result<_, _>>()?;
        for (l, layer) in self.layers.iter().enumerate() {
            rows = bilstm_layer(g, binder, layer, &rows, &masks.layers[l])?;
        }
        Ok(rows)
    }

    fn emission_nodes(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        head: &HeadIds,
        features: &[NodeId],
    ) -> Result<Vec<NodeId>, ModelError> {
        let w = binder.node(g, head.proj_w);
        let b = binder.node(g, head.proj_b);
        features
            .iter()
            .map(|&f| {
                let p = g.matmul(f, w)?;
                Ok(g.add(p, b)?)
            })
            .collect()
    }

    fn build_loss(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        task: &str,
        embedded: &Matrix,
        gold: &[usize],
        masks: &MaskSet,
    ) -> Result<NodeId, ModelError> {
        let head = self.head(task)?.clone();
        let feats = self.features(g, binder, embedded, masks)?;
        if gold.len() != feats.len() {
            return Err(ModelError::GoldLength {
                expected: feats.len(),
                got: gold.len(),
            });
        }
        let emissions = self.emission_nodes(g, binder, &head, &feats)?;
        let trans = binder.node(g, head.transitions);
        let start = binder.node(g, head.start);
        let end = binder.node(g, head.end);
        crf_log_likelihood(g, &emissions, trans, start, end, gold, head.tag_count)
    }

    /// CRF negative log-likelihood of `gold` for one sentence under `task`.
    pub fn loss_graph(
        &self,
        task: &str,
        embedded: &Matrix,
        gold: &[usize],
        masks: &MaskSet,
    ) -> Result<LossGraph, ModelError> {
        let mut g = Graph::new();
        let mut binder = Binder::new(&self.params);
        let loss = self.build_loss(&mut g, &mut binder, task, embedded, gold, masks)?;
        Ok(LossGraph {
            graph: g,
            loss,
            bound: binder.into_bindings(),
        })
    }

    /// Same loss, built over caller-provided parameter nodes (one per store
    /// slot, in store order). Lets a finite-difference checker perturb the
    /// parameters while reusing the exact model construction path.
    pub fn loss_node_with_params(
        &self,
        g: &mut Graph,
        param_nodes: &[NodeId],
        task: &str,
        embedded: &Matrix,
        gold: &[usize],
        masks: &MaskSet,
    ) -> Result<NodeId, ModelError> {
        let mut binder = Binder::with_nodes(&self.params, param_nodes);
        self.build_loss(g, &mut binder, task, embedded, gold, masks)
    }

    /// Emission scores (L x K) for one sentence, evaluation mode.
    pub fn emissions(&self, task: &str, embedded: &Matrix) -> Result<Matrix, ModelError> {
        let head = self.head(task)?.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let masks = self.draw_masks(DropoutMode::Eval, &mut rng);
        let mut g = Graph::new();
        let mut binder = Binder::new(&self.params);
        let feats = self.features(&mut g, &mut binder, embedded, &masks)?;
        let emissions = self.emission_nodes(&mut g, &mut binder, &head, &feats)?;
        let last = *emissions.last().expect("at least one token");
        g.evaluate(last)?;
        let mut out = Matrix::zeros(feats.len(), head.tag_count);
        for (t, &e) in emissions.iter().enumerate() {
            for c in 0..head.tag_count {
                out.set(t, c, g.value(e).get(0, c));
            }
        }
        Ok(out)
    }

    /// Viterbi decode one sentence.
    pub fn predict(&self, task: &str, embedded: &Matrix) -> Result<Vec<usize>, ModelError> {
        let head = self.head(task)?.clone();
        let emissions = self.emissions(task, embedded)?;
        let scores = CrfScores {
            transitions: self.params.get(head.transitions),
            start: self.params.get(head.start),
            end: self.params.get(head.end),
        };
        Ok(crf_viterbi(&emissions, &scores))
    }
}
