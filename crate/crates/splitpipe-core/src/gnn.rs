//! Graph-network split predictors: per-node cumulative-latency regression
//! and direct partition-index classification over encoded CNN graphs.
//!
//! Both formulations share one backbone: three (graph convolution, linear)
//! pairs build node embeddings, an LSTM sweeps them in unit order, and a
//! linear head reads each node's state. The latency model runs two such
//! networks — the first-device branch on forward edges with a forward
//! sweep, the second-device branch mirrored — and regresses cumulative
//! latencies, which combine with transfer times through the pipeline
//! max-rule at prediction time. The index model runs one network on
//! forward edges, sweeps it in both directions, and classifies the split
//! position directly; a learned virtual start node stands for split 0 so
//! the class space is exactly L+1.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cnn_ir::{EdgeDirection, NUM_FEATURES};
use crate::pipeline::{steady_from_cumulative, TransferPath};
use crate::tensor::{backward, grad_check, softmax, Matrix, Tape, TensorError, Var};

/// Default width of every hidden representation.
pub const DEFAULT_HIDDEN_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum GnnError {
    Tensor(TensorError),
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    BadShape { what: &'static str, expected: (usize, usize), got: (usize, usize) },
    InvalidEdge { from: usize, to: usize, nodes: usize },
    BadSample(&'static str),
    InvalidConfig(&'static str),
    WrongFormulation { expected: Formulation, got: Formulation },
    EmptyDataset,
    EmptyTestSet,
}

impl core::fmt::Display for GnnError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GnnError::Tensor(e) => write!(f, "{e}"),
            GnnError::LengthMismatch { what, expected, got } => {
                write!(f, "{what}: expected length {expected}, got {got}")
            }
            GnnError::BadShape { what, expected, got } => {
                write!(f, "{what}: expected {}x{}, got {}x{}", expected.0, expected.1, got.0, got.1)
            }
            GnnError::InvalidEdge { from, to, nodes } => {
                write!(f, "edge ({from}, {to}) outside graph of {nodes} nodes")
            }
            GnnError::BadSample(what) => write!(f, "bad sample: {what}"),
            GnnError::InvalidConfig(what) => write!(f, "invalid config: {what}"),
            GnnError::WrongFormulation { expected, got } => {
                write!(f, "params are for the {} formulation, not {}", got.as_str(), expected.as_str())
            }
            GnnError::EmptyDataset => write!(f, "training dataset is empty"),
            GnnError::EmptyTestSet => write!(f, "test set is empty"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GnnError {}

impl From<TensorError> for GnnError {
    fn from(e: TensorError) -> Self {
        GnnError::Tensor(e)
    }
}

/// Which predictor is being trained or applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// Regress cumulative latencies, then search the max-rule.
    Latency,
    /// Classify the split index directly.
    Index,
}

impl Formulation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Formulation::Latency => "latency",
            Formulation::Index => "index",
        }
    }
}

impl core::str::FromStr for Formulation {
    type Err = GnnError;

    fn from_str(s: &str) -> Result<Self, GnnError> {
        match s {
            "latency" => Ok(Formulation::Latency),
            "index" => Ok(Formulation::Index),
            _ => Err(GnnError::InvalidConfig("formulation must be \"latency\" or \"index\"")),
        }
    }
}

/// Training hyperparameters; defaults cover the reference runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub hidden_dim: usize,
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            seed: 0,
            train_fraction: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GnnError> {
        if self.epochs == 0 {
            return Err(GnnError::InvalidConfig("epochs must be >= 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(GnnError::InvalidConfig("learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(GnnError::InvalidConfig("adam betas must lie in [0, 1)"));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(GnnError::InvalidConfig("epsilon must be positive"));
        }
        if self.hidden_dim == 0 {
            return Err(GnnError::InvalidConfig("hidden_dim must be >= 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(GnnError::InvalidConfig("train_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// One encoded, labeled model graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSample {
    /// L x 13 node features in unit order.
    pub features: Matrix,
    pub forward_edges: Vec<(usize, usize)>,
    pub reverse_edges: Vec<(usize, usize)>,
    /// Label: latency of running units 0..=i on the first device.
    pub dpu_cum_latency: Vec<f64>,
    /// Label: latency of running units i..L-1 on the second device.
    pub gpu_cum_latency: Vec<f64>,
    /// Cut transfer time per split index; length L+1.
    pub transfer: Vec<f64>,
    pub optimal_index: usize,
}

impl GraphSample {
    pub fn num_units(&self) -> usize {
        self.features.rows()
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        let l = self.num_units();
        if l == 0 {
            return Err(GnnError::BadSample("sample has no units"));
        }
        if self.features.cols() != NUM_FEATURES {
            return Err(GnnError::LengthMismatch {
                what: "feature columns",
                expected: NUM_FEATURES,
                got: self.features.cols(),
            });
        }
        if self.dpu_cum_latency.len() != l {
            return Err(GnnError::LengthMismatch {
                what: "dpu_cum_latency",
                expected: l,
                got: self.dpu_cum_latency.len(),
            });
        }
        if self.gpu_cum_latency.len() != l {
            return Err(GnnError::LengthMismatch {
                what: "gpu_cum_latency",
                expected: l,
                got: self.gpu_cum_latency.len(),
            });
        }
        if self.transfer.len() != l + 1 {
            return Err(GnnError::LengthMismatch {
                what: "transfer",
                expected: l + 1,
                got: self.transfer.len(),
            });
        }
        if self.optimal_index > l {
            return Err(GnnError::BadSample("optimal_index exceeds the unit count"));
        }
        for &(from, to) in self.forward_edges.iter().chain(&self.reverse_edges) {
            if from >= l || to >= l {
                return Err(GnnError::InvalidEdge { from, to, nodes: l });
            }
        }
        let finite = self
            .dpu_cum_latency
            .iter()
            .chain(&self.gpu_cum_latency)
            .chain(&self.transfer)
            .all(|v| v.is_finite());
        if !finite || !self.features.is_finite() {
            return Err(GnnError::BadSample("non-finite value"));
        }
        if self.dpu_cum_latency.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GnnError::BadSample("dpu_cum_latency must be strictly increasing"));
        }
        if self.gpu_cum_latency.windows(2).any(|w| w[1] >= w[0]) {
            return Err(GnnError::BadSample("gpu_cum_latency must be strictly decreasing"));
        }
        Ok(())
    }
}

/// One graph-convolution + linear block of the backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnLinearPair {
    pub gcn_w: Matrix,
    pub lin_w: Matrix,
    pub lin_b: Matrix,
}

/// Gate weights of one LSTM: per gate, an input map W, a recurrent map U
/// and a bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_i: Matrix,
    pub u_i: Matrix,
    pub b_i: Matrix,
    pub w_f: Matrix,
    pub u_f: Matrix,
    pub b_f: Matrix,
    pub w_o: Matrix,
    pub u_o: Matrix,
    pub b_o: Matrix,
    pub w_c: Matrix,
    pub u_c: Matrix,
    pub b_c: Matrix,
}

impl LstmParams {
    fn matrices(&self) -> [&Matrix; 12] {
        [
            &self.w_i, &self.u_i, &self.b_i, &self.w_f, &self.u_f, &self.b_f, &self.w_o, &self.u_o,
            &self.b_o, &self.w_c, &self.u_c, &self.b_c,
        ]
    }

    fn matrices_mut(&mut self) -> [&mut Matrix; 12] {
        [
            &mut self.w_i, &mut self.u_i, &mut self.b_i, &mut self.w_f, &mut self.u_f, &mut self.b_f,
            &mut self.w_o, &mut self.u_o, &mut self.b_o, &mut self.w_c, &mut self.u_c, &mut self.b_c,
        ]
    }
}

/// One full predictor network. The reverse-sweep fields are present only
/// in the index model, whose head reads both sweeps; splitting its weight
/// into forward and backward halves is the same map as a single head on
/// concatenated states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub stack: Vec<GcnLinearPair>,
    pub lstm: LstmParams,
    pub lstm_back: Option<LstmParams>,
    pub head_w: Matrix,
    pub head_w_back: Option<Matrix>,
    pub head_b: Matrix,
    /// Learned feature row prepended as the split-0 node.
    pub virtual_node: Option<Matrix>,
}

impl NetParams {
    /// Every parameter matrix in one fixed order; `matrices_mut` and
    /// `assemble` must visit the same order.
    fn matrices(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for pair in &self.stack {
            out.push(&pair.gcn_w);
            out.push(&pair.lin_w);
            out.push(&pair.lin_b);
        }
        out.extend(self.lstm.matrices());
        if let Some(back) = &self.lstm_back {
            out.extend(back.matrices());
        }
        out.push(&self.head_w);
        if let Some(back) = &self.head_w_back {
            out.push(back);
        }
        out.push(&self.head_b);
        if let Some(node) = &self.virtual_node {
            out.push(node);
        }
        out
    }

    fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        for pair in &mut self.stack {
            out.push(&mut pair.gcn_w);
            out.push(&mut pair.lin_w);
            out.push(&mut pair.lin_b);
        }
        out.extend(self.lstm.matrices_mut());
        if let Some(back) = &mut self.lstm_back {
            out.extend(back.matrices_mut());
        }
        out.push(&mut self.head_w);
        if let Some(back) = &mut self.head_w_back {
            out.push(back);
        }
        out.push(&mut self.head_b);
        if let Some(node) = &mut self.virtual_node {
            out.push(node);
        }
        out
    }

    fn assemble<'t>(&self, vars: &mut impl Iterator<Item = Var<'t>>) -> NetLeaves<'t> {
        let mut next = || vars.next().expect("leaf order matches matrices()");
        let stack = self.stack.iter().map(|_| (next(), next(), next())).collect();
        let lstm = LstmLeaves::take(&mut next);
        let lstm_back = self.lstm_back.as_ref().map(|_| LstmLeaves::take(&mut next));
        let head_w = next();
        let head_w_back = self.head_w_back.as_ref().map(|_| next());
        let head_b = next();
        let virtual_node = self.virtual_node.as_ref().map(|_| next());
        NetLeaves { stack, lstm, lstm_back, head_w, head_w_back, head_b, virtual_node }
    }

    fn check_shapes(&self, d: usize, bidirectional: bool) -> Result<(), GnnError> {
        let expect = |m: &Matrix, shape: (usize, usize), what: &'static str| {
            if m.shape() != shape {
                Err(GnnError::BadShape { what, expected: shape, got: m.shape() })
            } else {
                Ok(())
            }
        };
        if self.stack.len() != 3 {
            return Err(GnnError::LengthMismatch { what: "gcn stack", expected: 3, got: self.stack.len() });
        }
        for (i, pair) in self.stack.iter().enumerate() {
            let d_in = if i == 0 { NUM_FEATURES } else { d };
            expect(&pair.gcn_w, (d_in, d), "gcn weight")?;
            expect(&pair.lin_w, (d, d), "linear weight")?;
            expect(&pair.lin_b, (1, d), "linear bias")?;
        }
        let check_lstm = |p: &LstmParams| -> Result<(), GnnError> {
            for (j, m) in p.matrices().into_iter().enumerate() {
                let shape = if j % 3 == 2 { (1, d) } else { (d, d) };
                expect(m, shape, "lstm matrix")?;
            }
            Ok(())
        };
        check_lstm(&self.lstm)?;
        expect(&self.head_w, (d, 1), "head weight")?;
        expect(&self.head_b, (1, 1), "head bias")?;
        if bidirectional {
            check_lstm(self.lstm_back.as_ref().ok_or(GnnError::InvalidConfig("missing reverse lstm"))?)?;
            expect(
                self.head_w_back.as_ref().ok_or(GnnError::InvalidConfig("missing reverse head"))?,
                (d, 1),
                "reverse head weight",
            )?;
            expect(
                self.virtual_node.as_ref().ok_or(GnnError::InvalidConfig("missing virtual node"))?,
                (1, NUM_FEATURES),
                "virtual node",
            )?;
        } else if self.lstm_back.is_some() || self.head_w_back.is_some() || self.virtual_node.is_some() {
            return Err(GnnError::InvalidConfig("one-directional net carries reverse-sweep fields"));
        }
        for m in self.matrices() {
            if !m.is_finite() {
                return Err(GnnError::InvalidConfig("non-finite parameter"));
            }
        }
        Ok(())
    }
}

/// Trained (or freshly initialized) predictor parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnParams {
    pub formulation: Formulation,
    pub hidden_dim: usize,
    pub seed: u64,
    /// Geometric mean of the training labels; the latency heads learn
    /// log-ratios against it and predictions are exp(raw) * label_scale.
    /// Stays 1.0 for the index model.
    pub label_scale: f64,
    /// First-device branch (latency) or the bidirectional net (index).
    pub primary: NetParams,
    /// Second-device branch; present only for the latency formulation.
    pub secondary: Option<NetParams>,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

fn init_lstm(rng: &mut ChaCha8Rng, d: usize) -> LstmParams {
    let mut gate = |is_bias: bool| if is_bias { uniform_matrix(rng, 1, d, d) } else { uniform_matrix(rng, d, d, d) };
    let mut params = LstmParams {
        w_i: gate(false),
        u_i: gate(false),
        b_i: gate(true),
        w_f: gate(false),
        u_f: gate(false),
        b_f: gate(true),
        w_o: gate(false),
        u_o: gate(false),
        b_o: gate(true),
        w_c: gate(false),
        u_c: gate(false),
        b_c: gate(true),
    };
    // The forget gate starts open, the usual LSTM default: an early bias
    // toward keeping cell state lets credit flow across long sweeps before
    // the gates have learned anything.
    params.b_f = Matrix::from_fn(1, d, |_, _| 1.0);
    params
}

fn init_net(rng: &mut ChaCha8Rng, d: usize, bidirectional: bool) -> NetParams {
    let stack = (0..3)
        .map(|i| {
            let d_in = if i == 0 { NUM_FEATURES } else { d };
            GcnLinearPair {
                gcn_w: uniform_matrix(rng, d_in, d, d_in),
                lin_w: uniform_matrix(rng, d, d, d),
                lin_b: uniform_matrix(rng, 1, d, d),
            }
        })
        .collect();
    let lstm = init_lstm(rng, d);
    let lstm_back = bidirectional.then(|| init_lstm(rng, d));
    let head_w = uniform_matrix(rng, d, 1, d);
    let head_w_back = bidirectional.then(|| uniform_matrix(rng, d, 1, d));
    let head_b = uniform_matrix(rng, 1, 1, d);
    let virtual_node = bidirectional.then(|| uniform_matrix(rng, 1, NUM_FEATURES, NUM_FEATURES));
    NetParams { stack, lstm, lstm_back, head_w, head_w_back, head_b, virtual_node }
}

impl GnnParams {
    /// Deterministic initialization: every matrix drawn uniform within
    /// +/- 1/sqrt(fan_in) from a stream seeded by `seed`.
    pub fn init(formulation: Formulation, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (primary, secondary) = match formulation {
            Formulation::Latency => {
                let dpu = init_net(&mut rng, hidden_dim, false);
                let gpu = init_net(&mut rng, hidden_dim, false);
                (dpu, Some(gpu))
            }
            Formulation::Index => (init_net(&mut rng, hidden_dim, true), None),
        };
        GnnParams { formulation, hidden_dim, seed, label_scale: 1.0, primary, secondary }
    }

    pub fn num_parameters(&self) -> usize {
        self.matrices().iter().map(|m| m.rows() * m.cols()).sum()
    }

    fn matrices(&self) -> Vec<&Matrix> {
        let mut out = self.primary.matrices();
        if let Some(s) = &self.secondary {
            out.extend(s.matrices());
        }
        out
    }

    fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.primary.matrices_mut();
        if let Some(s) = &mut self.secondary {
            out.extend(s.matrices_mut());
        }
        out
    }

    fn assemble<'t>(&self, vars: &[Var<'t>]) -> (NetLeaves<'t>, Option<NetLeaves<'t>>) {
        let mut it = vars.iter().copied();
        let primary = self.primary.assemble(&mut it);
        let secondary = self.secondary.as_ref().map(|n| n.assemble(&mut it));
        debug_assert!(it.next().is_none(), "leaf count matches matrices()");
        (primary, secondary)
    }

    fn leaves<'t>(&self, tape: &'t Tape) -> (Vec<Var<'t>>, (NetLeaves<'t>, Option<NetLeaves<'t>>)) {
        let vars: Vec<Var<'t>> = self.matrices().into_iter().map(|m| tape.leaf(m.clone())).collect();
        let nets = self.assemble(&vars);
        (vars, nets)
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        if self.hidden_dim == 0 {
            return Err(GnnError::InvalidConfig("hidden_dim must be >= 1"));
        }
        if !self.label_scale.is_finite() || self.label_scale <= 0.0 {
            return Err(GnnError::InvalidConfig("label_scale must be positive"));
        }
        match self.formulation {
            Formulation::Latency => {
                self.primary.check_shapes(self.hidden_dim, false)?;
                self.secondary
                    .as_ref()
                    .ok_or(GnnError::InvalidConfig("latency params need a second branch"))?
                    .check_shapes(self.hidden_dim, false)?;
            }
            Formulation::Index => {
                if self.secondary.is_some() {
                    return Err(GnnError::InvalidConfig("index params must not carry a second branch"));
                }
                self.primary.check_shapes(self.hidden_dim, true)?;
            }
        }
        Ok(())
    }
}

struct LstmLeaves<'t> {
    w_i: Var<'t>,
    u_i: Var<'t>,
    b_i: Var<'t>,
    w_f: Var<'t>,
    u_f: Var<'t>,
    b_f: Var<'t>,
    w_o: Var<'t>,
    u_o: Var<'t>,
    b_o: Var<'t>,
    w_c: Var<'t>,
    u_c: Var<'t>,
    b_c: Var<'t>,
}

impl<'t> LstmLeaves<'t> {
    fn take(next: &mut impl FnMut() -> Var<'t>) -> Self {
        LstmLeaves {
            w_i: next(),
            u_i: next(),
            b_i: next(),
            w_f: next(),
            u_f: next(),
            b_f: next(),
            w_o: next(),
            u_o: next(),
            b_o: next(),
            w_c: next(),
            u_c: next(),
            b_c: next(),
        }
    }
}

struct NetLeaves<'t> {
    stack: Vec<(Var<'t>, Var<'t>, Var<'t>)>,
    lstm: LstmLeaves<'t>,
    lstm_back: Option<LstmLeaves<'t>>,
    head_w: Var<'t>,
    head_w_back: Option<Var<'t>>,
    head_b: Var<'t>,
    virtual_node: Option<Var<'t>>,
}

// ---------------------------------------------------------------------------
// Graph plumbing
// ---------------------------------------------------------------------------

/// Symmetrically normalized adjacency with self-loops,
/// D^(-1/2) (A + I) D^(-1/2), degrees taken from row sums of A + I.
pub fn normalized_adjacency(edges: &[(usize, usize)], nodes: usize) -> Result<Matrix, GnnError> {
    let mut a = Matrix::zeros(nodes, nodes);
    for i in 0..nodes {
        a.set(i, i, 1.0);
    }
    for &(from, to) in edges {
        if from >= nodes || to >= nodes {
            return Err(GnnError::InvalidEdge { from, to, nodes });
        }
        a.set(to, from, 1.0);
    }
    let degrees: Vec<f64> = (0..nodes).map(|i| a.row(i).iter().sum()).collect();
    for i in 0..nodes {
        for j in 0..nodes {
            let v = a.get(i, j);
            if v != 0.0 {
                a.set(i, j, v / libm::sqrt(degrees[i] * degrees[j]));
            }
        }
    }
    Ok(a)
}

/// Adjacency for the index model: every node index shifted by one to make
/// room for the virtual start node, which feeds the first unit.
fn augmented_adjacency(sample: &GraphSample) -> Result<Matrix, GnnError> {
    let n = sample.num_units();
    let mut edges = Vec::with_capacity(sample.forward_edges.len() + 1);
    edges.push((0, 1));
    for &(u, v) in &sample.forward_edges {
        edges.push((u + 1, v + 1));
    }
    normalized_adjacency(&edges, n + 1)
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

/// One graph convolution: relu(adj_norm . H . W).
pub fn gcn_layer(adj_norm: &Matrix, h: &Matrix, w: &Matrix) -> Result<Matrix, GnnError> {
    let tape = Tape::new();
    let a = tape.leaf(adj_norm.clone());
    let hv = tape.leaf(h.clone());
    let wv = tape.leaf(w.clone());
    Ok(a.matmul(hv)?.matmul(wv)?.relu().value())
}

/// Standard LSTM over the rows of `sequence` with zero initial state.
/// Reverse direction processes last row first but reports every hidden
/// state at its original position.
pub fn lstm_sweep(params: &LstmParams, sequence: &Matrix, direction: EdgeDirection) -> Result<Matrix, GnnError> {
    if sequence.rows() == 0 {
        return Err(GnnError::LengthMismatch { what: "lstm sequence rows", expected: 1, got: 0 });
    }
    let tape = Tape::new();
    let mut vars = params.matrices().into_iter().map(|m| tape.leaf(m.clone()));
    let mut next = || vars.next().expect("twelve lstm matrices");
    let leaves = LstmLeaves::take(&mut next);
    let seq = tape.leaf(sequence.clone());
    let states = lstm_sweep_tape(&tape, &leaves, seq, sequence.rows(), direction)?;
    Ok(stack_rows(&states)?.value())
}

fn lstm_sweep_tape<'t>(
    tape: &'t Tape,
    p: &LstmLeaves<'t>,
    seq: Var<'t>,
    n: usize,
    direction: EdgeDirection,
) -> Result<Vec<Var<'t>>, TensorError> {
    let d = p.w_i.shape().1;
    let mut h = tape.leaf(Matrix::zeros(1, d));
    let mut c = tape.leaf(Matrix::zeros(1, d));
    let mut states: Vec<Option<Var<'t>>> = vec![None; n];
    let order: Vec<usize> = match direction {
        EdgeDirection::Forward => (0..n).collect(),
        EdgeDirection::Reverse => (0..n).rev().collect(),
    };
    for t in order {
        let x = seq.select_row(t)?;
        let gate_i = x.matmul(p.w_i)?.add(h.matmul(p.u_i)?)?.add(p.b_i)?.sigmoid();
        let gate_f = x.matmul(p.w_f)?.add(h.matmul(p.u_f)?)?.add(p.b_f)?.sigmoid();
        let gate_o = x.matmul(p.w_o)?.add(h.matmul(p.u_o)?)?.add(p.b_o)?.sigmoid();
        let cand = x.matmul(p.w_c)?.add(h.matmul(p.u_c)?)?.add(p.b_c)?.tanh();
        c = gate_f.hadamard(c)?.add(gate_i.hadamard(cand)?)?;
        h = gate_o.hadamard(c.tanh())?;
        states[t] = Some(h);
    }
    Ok(states.into_iter().map(|s| s.expect("every position visited")).collect())
}

fn stack_rows<'t>(rows: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
    let mut out = rows[0];
    for r in &rows[1..] {
        out = out.concat_rows(*r)?;
    }
    Ok(out)
}

fn stack_forward<'t>(
    tape: &'t Tape,
    net: &NetLeaves<'t>,
    adj: &Matrix,
    features: Var<'t>,
) -> Result<Var<'t>, TensorError> {
    let a = tape.leaf(adj.clone());
    let mut h = features;
    for (gcn_w, lin_w, lin_b) in &net.stack {
        h = a.matmul(h)?.matmul(*gcn_w)?.relu();
        h = h.matmul(*lin_w)?.add_row_bias(*lin_b)?.relu();
    }
    Ok(h)
}

/// One latency branch at training scale: n x 1 per-node predictions.
fn branch_forward<'t>(
    tape: &'t Tape,
    net: &NetLeaves<'t>,
    adj: &Matrix,
    features: &Matrix,
    direction: EdgeDirection,
) -> Result<Var<'t>, TensorError> {
    let feats = tape.leaf(features.clone());
    let h = stack_forward(tape, net, adj, feats)?;
    let states = lstm_sweep_tape(tape, &net.lstm, h, features.rows(), direction)?;
    stack_rows(&states)?.matmul(net.head_w)?.add_row_bias(net.head_b)
}

/// Index-model scores: (n+1) x 1, one per split position.
fn index_scores_tape<'t>(
    tape: &'t Tape,
    net: &NetLeaves<'t>,
    adj_aug: &Matrix,
    features: &Matrix,
) -> Result<Var<'t>, TensorError> {
    let virtual_node = net.virtual_node.expect("index net carries a virtual node");
    let head_back = net.head_w_back.expect("index net carries a reverse head");
    let lstm_back = net.lstm_back.as_ref().expect("index net carries a reverse lstm");
    let feats = tape.leaf(features.clone());
    let h0 = virtual_node.concat_rows(feats)?;
    let h = stack_forward(tape, net, adj_aug, h0)?;
    let n = features.rows() + 1;
    let fwd = stack_rows(&lstm_sweep_tape(tape, &net.lstm, h, n, EdgeDirection::Forward)?)?;
    let bwd = stack_rows(&lstm_sweep_tape(tape, lstm_back, h, n, EdgeDirection::Reverse)?)?;
    fwd.matmul(net.head_w)?.add(bwd.matmul(head_back)?)?.add_row_bias(net.head_b)
}

fn check_encodable(sample: &GraphSample) -> Result<(), GnnError> {
    if sample.num_units() == 0 {
        return Err(GnnError::BadSample("sample has no units"));
    }
    if sample.features.cols() != NUM_FEATURES {
        return Err(GnnError::LengthMismatch {
            what: "feature columns",
            expected: NUM_FEATURES,
            got: sample.features.cols(),
        });
    }
    Ok(())
}

/// Predicted cumulative latencies in seconds, one pair of vectors per
/// sample: first-device prefix costs and second-device suffix costs.
pub fn latency_forward(params: &GnnParams, sample: &GraphSample) -> Result<(Vec<f64>, Vec<f64>), GnnError> {
    if params.formulation != Formulation::Latency {
        return Err(GnnError::WrongFormulation {
            expected: Formulation::Latency,
            got: params.formulation,
        });
    }
    check_encodable(sample)?;
    let l = sample.num_units();
    let adj_fwd = normalized_adjacency(&sample.forward_edges, l)?;
    let adj_rev = normalized_adjacency(&sample.reverse_edges, l)?;
    let tape = Tape::new();
    let (_, (dpu_net, gpu_net)) = params.leaves(&tape);
    let gpu_net = gpu_net.ok_or(GnnError::InvalidConfig("latency params need a second branch"))?;
    let dpu = branch_forward(&tape, &dpu_net, &adj_fwd, &sample.features, EdgeDirection::Forward)?;
    let gpu = branch_forward(&tape, &gpu_net, &adj_rev, &sample.features, EdgeDirection::Reverse)?;
    let scale = params.label_scale;
    let to_seconds = |v: Var<'_>| v.value().data().iter().map(|x| libm::exp(*x) * scale).collect();
    Ok((to_seconds(dpu), to_seconds(gpu)))
}

/// Max-rule split search over predicted cumulative latencies; ties go to
/// the smallest index.
pub fn predict_split_from_latency(
    dpu_pred: &[f64],
    gpu_pred: &[f64],
    transfer: &[f64],
    path: TransferPath,
) -> Result<usize, GnnError> {
    let l = dpu_pred.len();
    if gpu_pred.len() != l {
        return Err(GnnError::LengthMismatch { what: "gpu_pred", expected: l, got: gpu_pred.len() });
    }
    if transfer.len() != l + 1 {
        return Err(GnnError::LengthMismatch { what: "transfer", expected: l + 1, got: transfer.len() });
    }
    let mut best_k = 0;
    let mut best = steady_from_cumulative(dpu_pred, gpu_pred, transfer, 0, path);
    for k in 1..=l {
        let steady = steady_from_cumulative(dpu_pred, gpu_pred, transfer, k, path);
        if steady < best {
            best = steady;
            best_k = k;
        }
    }
    Ok(best_k)
}

/// Probability of each split position 0..=L; sums to one.
pub fn index_forward(params: &GnnParams, sample: &GraphSample) -> Result<Vec<f64>, GnnError> {
    if params.formulation != Formulation::Index {
        return Err(GnnError::WrongFormulation {
            expected: Formulation::Index,
            got: params.formulation,
        });
    }
    check_encodable(sample)?;
    let adj = augmented_adjacency(sample)?;
    let tape = Tape::new();
    let (_, (net, _)) = params.leaves(&tape);
    let scores = index_scores_tape(&tape, &net, &adj, &sample.features)?;
    Ok(softmax(scores.value().data()))
}

/// Index-model prediction: argmax probability, first on ties.
pub fn predict_index(params: &GnnParams, sample: &GraphSample) -> Result<usize, GnnError> {
    let probs = index_forward(params, sample)?;
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Split prediction under either formulation.
pub fn predict_split(params: &GnnParams, sample: &GraphSample, path: TransferPath) -> Result<usize, GnnError> {
    match params.formulation {
        Formulation::Index => predict_index(params, sample),
        Formulation::Latency => {
            let (dpu, gpu) = latency_forward(params, sample)?;
            predict_split_from_latency(&dpu, &gpu, &sample.transfer, path)
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Output of `train`: final parameters plus the mean loss per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub params: GnnParams,
    pub losses: Vec<f64>,
}

struct Prepped {
    /// Forward-edge adjacency (latency first branch) or augmented
    /// virtual-node adjacency (index).
    adj_a: Matrix,
    /// Reverse-edge adjacency; latency formulation only.
    adj_b: Option<Matrix>,
    target_dpu: Option<Matrix>,
    target_gpu: Option<Matrix>,
    label: usize,
}

fn prep_samples(
    samples: &[GraphSample],
    formulation: Formulation,
    label_scale: f64,
) -> Result<Vec<Prepped>, GnnError> {
    samples
        .iter()
        .map(|s| {
            let l = s.num_units();
            if formulation == Formulation::Latency
                && s.dpu_cum_latency.iter().chain(&s.gpu_cum_latency).any(|v| *v <= 0.0)
            {
                return Err(GnnError::BadSample("latency labels must be positive"));
            }
            Ok(match formulation {
                Formulation::Latency => Prepped {
                    adj_a: normalized_adjacency(&s.forward_edges, l)?,
                    adj_b: Some(normalized_adjacency(&s.reverse_edges, l)?),
                    target_dpu: Some(Matrix::from_fn(l, 1, |i, _| libm::log(s.dpu_cum_latency[i] / label_scale))),
                    target_gpu: Some(Matrix::from_fn(l, 1, |i, _| libm::log(s.gpu_cum_latency[i] / label_scale))),
                    label: s.optimal_index,
                },
                Formulation::Index => Prepped {
                    adj_a: augmented_adjacency(s)?,
                    adj_b: None,
                    target_dpu: None,
                    target_gpu: None,
                    label: s.optimal_index,
                },
            })
        })
        .collect()
}

fn adam_step(
    params: &mut GnnParams,
    m: &mut GnnParams,
    v: &mut GnnParams,
    grads: &[Matrix],
    cfg: &TrainConfig,
    t: u64,
) {
    let bias1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bias2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    let ps = params.matrices_mut();
    let ms = m.matrices_mut();
    let vs = v.matrices_mut();
    for (((p, m), v), g) in ps.into_iter().zip(ms).zip(vs).zip(grads) {
        for (((pe, me), ve), &ge) in
            p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data())
        {
            *me = cfg.beta1 * *me + (1.0 - cfg.beta1) * ge;
            *ve = cfg.beta2 * *ve + (1.0 - cfg.beta2) * ge * ge;
            let m_hat = *me / bias1;
            let v_hat = *ve / bias2;
            *pe -= cfg.learning_rate * m_hat / (libm::sqrt(v_hat) + cfg.epsilon);
        }
    }
}

/// Adam training, one graph per step, one seeded-shuffle pass per epoch.
/// Pure function of (samples, config, formulation).
pub fn train(
    samples: &[GraphSample],
    config: &TrainConfig,
    formulation: Formulation,
) -> Result<TrainResult, GnnError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(GnnError::EmptyDataset);
    }
    for s in samples {
        s.validate()?;
    }
    let mut params = GnnParams::init(formulation, config.hidden_dim, config.seed);
    if formulation == Formulation::Latency {
        // Cumulative latencies span orders of magnitude across model sizes,
        // so the heads learn log-ratios against the geometric mean; every
        // record then weighs into the loss comparably, large or small.
        let mut log_sum = 0.0;
        let mut count = 0usize;
        for s in samples {
            for v in s.dpu_cum_latency.iter().chain(&s.gpu_cum_latency) {
                log_sum += libm::log(v.abs());
                count += 1;
            }
        }
        let scale = libm::exp(log_sum / count as f64);
        if scale.is_finite() && scale > 0.0 {
            params.label_scale = scale;
        }
    }
    let prepped = prep_samples(samples, formulation, params.label_scale)?;

    let mut m = params.clone();
    let mut v = params.clone();
    for state in [&mut m, &mut v] {
        for mat in state.matrices_mut() {
            for x in mat.data_mut() {
                *x = 0.0;
            }
        }
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0u64;
    let mut per_sample_loss = vec![0.0; samples.len()];
    let mut losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for &si in &order {
            let sample = &samples[si];
            let prep = &prepped[si];
            let tape = Tape::new();
            let (vars, (primary, secondary)) = params.leaves(&tape);
            let loss = match formulation {
                Formulation::Latency => {
                    let gpu_net = secondary.as_ref().expect("latency params carry two branches");
                    let dpu = branch_forward(
                        &tape,
                        &primary,
                        &prep.adj_a,
                        &sample.features,
                        EdgeDirection::Forward,
                    )?;
                    let gpu = branch_forward(
                        &tape,
                        gpu_net,
                        prep.adj_b.as_ref().expect("latency prep carries a reverse adjacency"),
                        &sample.features,
                        EdgeDirection::Reverse,
                    )?;
                    let td = tape.leaf(prep.target_dpu.clone().expect("latency prep carries targets"));
                    let tg = tape.leaf(prep.target_gpu.clone().expect("latency prep carries targets"));
                    dpu.mse_loss(td)?.add(gpu.mse_loss(tg)?)?
                }
                Formulation::Index => {
                    let scores = index_scores_tape(&tape, &primary, &prep.adj_a, &sample.features)?;
                    scores.softmax_cross_entropy(prep.label)?
                }
            };
            per_sample_loss[si] = loss.scalar()?;
            let grads_by_var = backward(loss)?;
            let grads: Vec<Matrix> = vars.iter().map(|var| grads_by_var.get(*var)).collect();
            step += 1;
            adam_step(&mut params, &mut m, &mut v, &grads, config, step);
        }
        // Summed in sample order, not visit order, so the curve is
        // independent of the shuffle.
        losses.push(per_sample_loss.iter().sum::<f64>() / samples.len() as f64);
    }
    Ok(TrainResult { params, losses })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Held-out quality of a split predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Mean fraction of units assigned to the correct side.
    pub layerwise_accuracy: f64,
    /// Mean |k_pred - k_true| / L, in percent.
    pub partition_index_mape: f64,
    /// Mean steady-latency error of the chosen split, in percent.
    pub latency_mape: f64,
    /// Percent of models on the correct side of the best single device.
    pub agreement_pct: f64,
}

fn score_predictions(
    preds: &[usize],
    samples: &[GraphSample],
    path: TransferPath,
) -> Result<EvalMetrics, GnnError> {
    let n = samples.len() as f64;
    let mut layer_sum = 0.0;
    let mut index_sum = 0.0;
    let mut latency_sum = 0.0;
    let mut agree = 0usize;
    for (&k_pred, sample) in preds.iter().zip(samples) {
        let l = sample.num_units();
        let k_true = sample.optimal_index;
        let diff = k_pred.abs_diff(k_true) as f64;
        layer_sum += (l as f64 - diff) / l as f64;
        index_sum += diff / l as f64 * 100.0;
        let steady = |k: usize| {
            steady_from_cumulative(&sample.dpu_cum_latency, &sample.gpu_cum_latency, &sample.transfer, k, path)
        };
        let s_pred = steady(k_pred);
        let s_true = steady(k_true);
        latency_sum += (s_pred - s_true).abs() / s_true * 100.0;
        let best_single = steady(0).min(steady(l));
        if (s_pred < best_single) == (s_true < best_single) {
            agree += 1;
        }
    }
    Ok(EvalMetrics {
        layerwise_accuracy: layer_sum / n,
        partition_index_mape: index_sum / n,
        latency_mape: latency_sum / n,
        agreement_pct: agree as f64 / n * 100.0,
    })
}

/// Predict a split for every sample and score against the stored labels.
/// Steady latencies come from the ground-truth label vectors.
pub fn evaluate(params: &GnnParams, samples: &[GraphSample], path: TransferPath) -> Result<EvalMetrics, GnnError> {
    if samples.is_empty() {
        return Err(GnnError::EmptyTestSet);
    }
    let preds: Vec<usize> = samples
        .iter()
        .map(|s| predict_split(params, s, path))
        .collect::<Result<_, _>>()?;
    score_predictions(&preds, samples, path)
}

/// Finite-difference check of one formulation's full training loss on one
/// sample: fresh `hidden_dim`-wide parameters from `seed`, every parameter
/// entry perturbed by `epsilon`. Returns the worst relative error between
/// analytic and central-difference gradients.
pub fn formulation_grad_check(
    formulation: Formulation,
    sample: &GraphSample,
    hidden_dim: usize,
    seed: u64,
    epsilon: f64,
) -> Result<f64, GnnError> {
    sample.validate()?;
    let params = GnnParams::init(formulation, hidden_dim, seed);
    let mats: Vec<Matrix> = params.matrices().into_iter().cloned().collect();
    let l = sample.num_units();
    match formulation {
        Formulation::Latency => {
            let adj_fwd = normalized_adjacency(&sample.forward_edges, l)?;
            let adj_rev = normalized_adjacency(&sample.reverse_edges, l)?;
            if sample.dpu_cum_latency.iter().chain(&sample.gpu_cum_latency).any(|v| *v <= 0.0) {
                return Err(GnnError::BadSample("latency labels must be positive"));
            }
            // Log-ratio targets exactly as in training; they keep the loss
            // near O(1) so the difference quotient stays above cancellation
            // noise.
            let scale = libm::exp(
                sample
                    .dpu_cum_latency
                    .iter()
                    .chain(&sample.gpu_cum_latency)
                    .map(|v| libm::log(*v))
                    .sum::<f64>()
                    / (2 * l) as f64,
            );
            let target_dpu = Matrix::from_fn(l, 1, |i, _| libm::log(sample.dpu_cum_latency[i] / scale));
            let target_gpu = Matrix::from_fn(l, 1, |i, _| libm::log(sample.gpu_cum_latency[i] / scale));
            let max_rel = grad_check(
                |tape, vars| {
                    let (primary, secondary) = params.assemble(vars);
                    let dpu = branch_forward(tape, &primary, &adj_fwd, &sample.features, EdgeDirection::Forward)?;
                    let gpu = branch_forward(
                        tape,
                        secondary.as_ref().expect("latency params carry two branches"),
                        &adj_rev,
                        &sample.features,
                        EdgeDirection::Reverse,
                    )?;
                    let td = tape.leaf(target_dpu.clone());
                    let tg = tape.leaf(target_gpu.clone());
                    dpu.mse_loss(td)?.add(gpu.mse_loss(tg)?)
                },
                &mats,
                epsilon,
            )?;
            Ok(max_rel)
        }
        Formulation::Index => {
            let adj = augmented_adjacency(sample)?;
            let label = sample.optimal_index;
            let max_rel = grad_check(
                |tape, vars| {
                    let (primary, _) = params.assemble(vars);
                    let scores = index_scores_tape(tape, &primary, &adj, &sample.features)?;
                    scores.softmax_cross_entropy(label)
                },
                &mats,
                epsilon,
            )?;
            Ok(max_rel)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use alloc::vec;

    fn rand_matrix(rows: usize, cols: usize, seed: u64, bound: f64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
    }

    /// Deterministic chain sample with strictly monotone labels and a
    /// consistent optimal index (Direct path).
    fn toy_sample(seed: u64, l: usize) -> GraphSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = Matrix::from_fn(l, NUM_FEATURES, |_, _| rng.gen_range(0.0..=1.0));
        let forward_edges: Vec<(usize, usize)> = (0..l - 1).map(|i| (i, i + 1)).collect();
        let reverse_edges: Vec<(usize, usize)> = forward_edges.iter().map(|&(a, b)| (b, a)).collect();
        let dpu_units: Vec<f64> = (0..l).map(|_| rng.gen_range(0.5..=2.0)).collect();
        let gpu_units: Vec<f64> = (0..l).map(|_| rng.gen_range(0.3..=1.5)).collect();
        let mut dpu_cum = vec![0.0; l];
        let mut gpu_cum = vec![0.0; l];
        for i in 0..l {
            dpu_cum[i] = dpu_units[..=i].iter().sum();
            gpu_cum[i] = gpu_units[i..].iter().sum();
        }
        let transfer: Vec<f64> = (0..=l).map(|_| rng.gen_range(0.05..=0.3)).collect();
        let mut sample = GraphSample {
            features,
            forward_edges,
            reverse_edges,
            dpu_cum_latency: dpu_cum,
            gpu_cum_latency: gpu_cum,
            transfer,
            optimal_index: 0,
        };
        sample.optimal_index = predict_split_from_latency(
            &sample.dpu_cum_latency,
            &sample.gpu_cum_latency,
            &sample.transfer,
            TransferPath::Direct,
        )
        .unwrap();
        sample.validate().unwrap();
        sample
    }

    #[test]
    fn adjacency_two_node_chain_frozen() {
        let a = normalized_adjacency(&[(0, 1)], 2).unwrap();
        assert!((a.get(0, 0) - 1.0).abs() < 1e-12);
        assert_eq!(a.get(0, 1), 0.0);
        assert!((a.get(1, 0) - 1.0 / libm::sqrt(2.0)).abs() < 1e-12);
        assert!((a.get(1, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn adjacency_rejects_out_of_range_edge() {
        assert!(matches!(
            normalized_adjacency(&[(0, 5)], 2),
            Err(GnnError::InvalidEdge { from: 0, to: 5, nodes: 2 })
        ));
    }

    #[test]
    fn gcn_single_node_identity_weight_is_relu() {
        let adj = normalized_adjacency(&[], 1).unwrap();
        let h = Matrix::from_vec(1, 4, vec![0.5, -0.3, 2.0, -1.0]).unwrap();
        let w = Matrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 });
        let out = gcn_layer(&adj, &h, &w).unwrap();
        assert_eq!(out.data(), &[0.5, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn gcn_zero_weight_is_zero() {
        let adj = normalized_adjacency(&[(0, 1), (1, 2)], 3).unwrap();
        let h = rand_matrix(3, 5, 1, 1.0);
        let out = gcn_layer(&adj, &h, &Matrix::zeros(5, 4)).unwrap();
        assert_eq!(out, Matrix::zeros(3, 4));
    }

    #[test]
    fn gcn_is_permutation_equivariant() {
        let edges = [(0usize, 1usize), (1, 2), (2, 3), (3, 4), (1, 3)];
        let h = rand_matrix(5, 4, 2, 1.0);
        let w = rand_matrix(4, 3, 3, 1.0);
        let perm = [2usize, 0, 4, 1, 3]; // old index -> new index
        let out = gcn_layer(&normalized_adjacency(&edges, 5).unwrap(), &h, &w).unwrap();

        let perm_edges: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut perm_h = Matrix::zeros(5, 4);
        for i in 0..5 {
            for j in 0..4 {
                perm_h.set(perm[i], j, h.get(i, j));
            }
        }
        let perm_out = gcn_layer(&normalized_adjacency(&perm_edges, 5).unwrap(), &perm_h, &w).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                assert!((perm_out.get(perm[i], j) - out.get(i, j)).abs() < 1e-12);
            }
        }
    }

    fn zero_lstm(d: usize) -> LstmParams {
        let sq = Matrix::zeros(d, d);
        let b = Matrix::zeros(1, d);
        LstmParams {
            w_i: sq.clone(),
            u_i: sq.clone(),
            b_i: b.clone(),
            w_f: sq.clone(),
            u_f: sq.clone(),
            b_f: b.clone(),
            w_o: sq.clone(),
            u_o: sq.clone(),
            b_o: b.clone(),
            w_c: sq.clone(),
            u_c: sq,
            b_c: b,
        }
    }

    fn rand_lstm(d: usize, seed: u64) -> LstmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |rows: usize| Matrix::from_fn(rows, d, |_, _| rng.gen_range(-0.5..=0.5));
        LstmParams {
            w_i: mat(d),
            u_i: mat(d),
            b_i: mat(1),
            w_f: mat(d),
            u_f: mat(d),
            b_f: mat(1),
            w_o: mat(d),
            u_o: mat(d),
            b_o: mat(1),
            w_c: mat(d),
            u_c: mat(d),
            b_c: mat(1),
        }
    }

    #[test]
    fn lstm_zero_params_give_zero_states() {
        let out = lstm_sweep(&zero_lstm(3), &rand_matrix(4, 3, 4, 1.0), EdgeDirection::Forward).unwrap();
        assert_eq!(out, Matrix::zeros(4, 3));
    }

    #[test]
    fn lstm_reverse_equals_forward_on_flipped_input() {
        let params = rand_lstm(3, 5);
        let seq = rand_matrix(5, 3, 6, 1.0);
        let flipped = Matrix::from_fn(5, 3, |i, j| seq.get(4 - i, j));
        let rev = lstm_sweep(&params, &seq, EdgeDirection::Reverse).unwrap();
        let fwd_flipped = lstm_sweep(&params, &flipped, EdgeDirection::Forward).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                assert!((rev.get(i, j) - fwd_flipped.get(4 - i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn lstm_single_row_ignores_direction() {
        let params = rand_lstm(4, 7);
        let seq = rand_matrix(1, 4, 8, 1.0);
        let fwd = lstm_sweep(&params, &seq, EdgeDirection::Forward).unwrap();
        let rev = lstm_sweep(&params, &seq, EdgeDirection::Reverse).unwrap();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn latency_forward_shapes_and_finiteness() {
        let params = GnnParams::init(Formulation::Latency, 16, 7);
        let sample = toy_sample(11, 6);
        let (dpu, gpu) = latency_forward(&params, &sample).unwrap();
        assert_eq!(dpu.len(), 6);
        assert_eq!(gpu.len(), 6);
        assert!(dpu.iter().chain(&gpu).all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_formulation_is_rejected() {
        let sample = toy_sample(12, 5);
        let index_params = GnnParams::init(Formulation::Index, 8, 0);
        assert!(matches!(
            latency_forward(&index_params, &sample),
            Err(GnnError::WrongFormulation { .. })
        ));
        let latency_params = GnnParams::init(Formulation::Latency, 8, 0);
        assert!(matches!(
            index_forward(&latency_params, &sample),
            Err(GnnError::WrongFormulation { .. })
        ));
    }

    #[test]
    fn latency_grad_check_on_small_graph() {
        let sample = toy_sample(21, 6);
        let max_rel = formulation_grad_check(Formulation::Latency, &sample, 8, 3, 1e-5).unwrap();
        assert!(max_rel < 1e-3, "max relative error {max_rel}");
    }

    #[test]
    fn index_grad_check_on_small_graph() {
        let sample = toy_sample(22, 6);
        let max_rel = formulation_grad_check(Formulation::Index, &sample, 8, 4, 1e-5).unwrap();
        assert!(max_rel < 1e-3, "max relative error {max_rel}");
    }

    #[test]
    fn latency_overfits_single_sample() {
        let sample = toy_sample(31, 6);
        let config = TrainConfig { epochs: 500, hidden_dim: 16, seed: 9, ..TrainConfig::default() };
        let result = train(core::slice::from_ref(&sample), &config, Formulation::Latency).unwrap();
        let first = result.losses[0];
        let last = *result.losses.last().unwrap();
        assert!(last < first / 100.0, "first {first}, last {last}");
    }

    #[test]
    fn index_overfits_single_sample() {
        let sample = toy_sample(32, 6);
        let config = TrainConfig { epochs: 500, hidden_dim: 16, seed: 10, ..TrainConfig::default() };
        let result = train(core::slice::from_ref(&sample), &config, Formulation::Index).unwrap();
        assert!(*result.losses.last().unwrap() < result.losses[0]);
        assert_eq!(predict_index(&result.params, &sample).unwrap(), sample.optimal_index);
    }

    #[test]
    fn ground_truth_labels_reproduce_optimal_index() {
        for seed in 0..20 {
            let sample = toy_sample(seed, 4 + (seed % 5) as usize);
            let k = predict_split_from_latency(
                &sample.dpu_cum_latency,
                &sample.gpu_cum_latency,
                &sample.transfer,
                TransferPath::Direct,
            )
            .unwrap();
            assert_eq!(k, sample.optimal_index, "seed {seed}");
        }
    }

    #[test]
    fn uniform_symmetric_costs_split_at_midpoint() {
        let dpu = [1.0, 2.0, 3.0, 4.0];
        let gpu = [4.0, 3.0, 2.0, 1.0];
        let transfer = [0.0; 5];
        let k = predict_split_from_latency(&dpu, &gpu, &transfer, TransferPath::Direct).unwrap();
        assert_eq!(k, 2);
    }

    #[test]
    fn prediction_stable_under_small_shift() {
        let sample = toy_sample(41, 7);
        let l = sample.num_units();
        let steady = |k: usize| {
            steady_from_cumulative(
                &sample.dpu_cum_latency,
                &sample.gpu_cum_latency,
                &sample.transfer,
                k,
                TransferPath::Direct,
            )
        };
        let best = steady(sample.optimal_index);
        let gap = (0..=l)
            .filter(|&k| k != sample.optimal_index)
            .map(|k| steady(k) - best)
            .fold(f64::INFINITY, f64::min);
        assert!(gap > 0.0, "fixture must have a unique optimum");
        let shift = 0.45 * gap;
        let dpu: Vec<f64> = sample.dpu_cum_latency.iter().map(|v| v + shift).collect();
        let gpu: Vec<f64> = sample.gpu_cum_latency.iter().map(|v| v - shift).collect();
        let k = predict_split_from_latency(&dpu, &gpu, &sample.transfer, TransferPath::Direct).unwrap();
        assert_eq!(k, sample.optimal_index);
    }

    #[test]
    fn index_probabilities_sum_to_one() {
        let params = GnnParams::init(Formulation::Index, 16, 3);
        let sample = toy_sample(51, 6);
        let probs = index_forward(&params, &sample).unwrap();
        assert_eq!(probs.len(), 7);
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let samples: Vec<GraphSample> = (0..4).map(|s| toy_sample(60 + s, 5)).collect();
        let config = TrainConfig { epochs: 3, hidden_dim: 8, seed: 5, ..TrainConfig::default() };
        let a = train(&samples, &config, Formulation::Index).unwrap();
        let b = train(&samples, &config, Formulation::Index).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn zero_learning_rate_freezes_loss() {
        let samples: Vec<GraphSample> = (0..3).map(|s| toy_sample(70 + s, 5)).collect();
        let config = TrainConfig {
            epochs: 4,
            learning_rate: 0.0,
            hidden_dim: 8,
            seed: 2,
            ..TrainConfig::default()
        };
        let result = train(&samples, &config, Formulation::Latency).unwrap();
        for loss in &result.losses {
            assert_eq!(*loss, result.losses[0]);
        }
    }

    #[test]
    fn empty_sets_are_rejected() {
        let config = TrainConfig::default();
        assert!(matches!(train(&[], &config, Formulation::Index), Err(GnnError::EmptyDataset)));
        let params = GnnParams::init(Formulation::Index, 4, 0);
        assert!(matches!(
            evaluate(&params, &[], TransferPath::Direct),
            Err(GnnError::EmptyTestSet)
        ));
    }

    /// Hand-built scoring fixture: L=10, unit costs 1.0 on the first
    /// device and 1.5 on the second, zero transfers. steady(k) =
    /// max(k, 15 - 1.5k), uniquely minimized at k=6 with value 6;
    /// steady(4) = 9, baselines 15 and 10.
    fn hand_sample() -> GraphSample {
        let l = 10;
        GraphSample {
            features: Matrix::from_fn(l, NUM_FEATURES, |_, _| 0.5),
            forward_edges: (0..l - 1).map(|i| (i, i + 1)).collect(),
            reverse_edges: (0..l - 1).map(|i| (i + 1, i)).collect(),
            dpu_cum_latency: (1..=l).map(|i| i as f64).collect(),
            gpu_cum_latency: (0..l).map(|i| 1.5 * (l - i) as f64).collect(),
            transfer: vec![0.0; l + 1],
            optimal_index: 6,
        }
    }

    #[test]
    fn evaluate_scores_the_hand_example() {
        let sample = hand_sample();
        let metrics = score_predictions(&[4], core::slice::from_ref(&sample), TransferPath::Direct).unwrap();
        assert!((metrics.layerwise_accuracy - 0.8).abs() < 1e-12);
        assert!((metrics.partition_index_mape - 20.0).abs() < 1e-12);
        assert!((metrics.latency_mape - 50.0).abs() < 1e-12);
        assert_eq!(metrics.agreement_pct, 100.0);
    }

    #[test]
    fn perfect_predictions_score_perfectly() {
        let samples: Vec<GraphSample> = (0..5).map(|s| toy_sample(80 + s, 6)).collect();
        let preds: Vec<usize> = samples.iter().map(|s| s.optimal_index).collect();
        let metrics = score_predictions(&preds, &samples, TransferPath::Direct).unwrap();
        assert_eq!(metrics.layerwise_accuracy, 1.0);
        assert_eq!(metrics.partition_index_mape, 0.0);
        assert_eq!(metrics.latency_mape, 0.0);
        assert_eq!(metrics.agreement_pct, 100.0);
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = GnnParams::init(Formulation::Index, 8, 42);
        let b = GnnParams::init(Formulation::Index, 8, 42);
        let c = GnnParams::init(Formulation::Index, 8, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn params_survive_json_round_trip() {
        for formulation in [Formulation::Latency, Formulation::Index] {
            let params = GnnParams::init(formulation, 4, 17);
            let text = serde_json::to_string(&params).unwrap();
            let back: GnnParams = serde_json::from_str(&text).unwrap();
            assert_eq!(params, back);
            back.validate().unwrap();
        }
    }

    #[test]
    fn validate_rejects_wrong_shapes() {
        let mut params = GnnParams::init(Formulation::Latency, 8, 0);
        params.primary.head_w = Matrix::zeros(3, 1);
        assert!(matches!(params.validate(), Err(GnnError::BadShape { .. })));
        let mut params = GnnParams::init(Formulation::Index, 8, 0);
        params.secondary = Some(init_net(&mut ChaCha8Rng::seed_from_u64(0), 8, false));
        assert!(matches!(params.validate(), Err(GnnError::InvalidConfig(_))));
    }

    #[test]
    fn sample_validation_catches_label_defects() {
        let mut sample = toy_sample(90, 5);
        sample.dpu_cum_latency[3] = sample.dpu_cum_latency[2];
        assert!(matches!(sample.validate(), Err(GnnError::BadSample(_))));
        let mut sample = toy_sample(91, 5);
        sample.transfer.pop();
        assert!(matches!(sample.validate(), Err(GnnError::LengthMismatch { .. })));
        let mut sample = toy_sample(92, 5);
        sample.optimal_index = 9;
        assert!(matches!(sample.validate(), Err(GnnError::BadSample(_))));
    }
}
