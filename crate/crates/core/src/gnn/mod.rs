//! Message-passing blackout-size regressor.
//!
//! Node features are (load, generation) per bus; edge features are
//! (resistance, reactance, initial-failure flag, is-statistical flag) per
//! physical line or statistical edge. Both are embedded by two-layer
//! networks, then every message-passing layer updates edges from their own
//! state and both endpoint nodes, and nodes from their own state and the sum
//! of incident edges, each with a residual connection. The prediction is a
//! single dense layer applied to the sum of node embeddings.

mod train;

pub use train::{
    predict_samples, train_gnn, EpochLog, GnnCheckpoint, Population, TrainConfig, TrainLog, CHECKPOINT_VERSION,
};

use ndarray::{concatenate, s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, GridState};
use crate::influence::AugmentedTopology;
use crate::neural::{Activation, DenseLayer, Mlp, MlpCache, LayerCache, NeuralError, Parameters};

pub const NODE_FEATURES: usize = 2;
pub const EDGE_FEATURES: usize = 4;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("line id {0} does not exist")]
    InvalidLine(usize),
    #[error("sample does not match the topology: {0}")]
    Topology(String),
    #[error("empty population: no training samples left after filtering")]
    EmptyPopulation,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Per-feature standardization constants, fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorms {
    pub node_mean: [f64; NODE_FEATURES],
    pub node_std: [f64; NODE_FEATURES],
    pub edge_mean: [f64; EDGE_FEATURES],
    pub edge_std: [f64; EDGE_FEATURES],
    pub label_mean: f64,
    pub label_std: f64,
}

impl FeatureNorms {
    pub fn identity() -> Self {
        Self {
            node_mean: [0.0; NODE_FEATURES],
            node_std: [1.0; NODE_FEATURES],
            edge_mean: [0.0; EDGE_FEATURES],
            edge_std: [1.0; EDGE_FEATURES],
            label_mean: 0.0,
            label_std: 1.0,
        }
    }

    /// Fits means and standard deviations over every node and edge of the
    /// given scenarios. Constant features get unit scale.
    pub fn fit<'a, I>(grid: &Grid, topology: &AugmentedTopology, scenarios: I) -> Self
    where
        I: IntoIterator<Item = (&'a GridState, &'a [usize], f64)>,
    {
        let mut node = [RunningStats::default(); NODE_FEATURES];
        let mut edge = [RunningStats::default(); EDGE_FEATURES];
        let mut label = RunningStats::default();
        for (state, failures, y) in scenarios {
            let (nx, ex) = raw_features(grid, state, failures, topology);
            for row in nx.rows() {
                for (k, stat) in node.iter_mut().enumerate() {
                    stat.push(row[k]);
                }
            }
            for row in ex.rows() {
                for (k, stat) in edge.iter_mut().enumerate() {
                    stat.push(row[k]);
                }
            }
            label.push(y);
        }
        Self {
            node_mean: node.map(|s| s.mean()),
            node_std: node.map(|s| s.std()),
            edge_mean: edge.map(|s| s.mean()),
            edge_std: edge.map(|s| s.std()),
            label_mean: label.mean(),
            label_std: label.std(),
        }
    }

    pub fn normalize_label(&self, mw: f64) -> f64 {
        (mw - self.label_mean) / self.label_std
    }

    pub fn denormalize_label(&self, value: f64) -> f64 {
        value * self.label_std + self.label_mean
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct RunningStats {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl RunningStats {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn mean(&self) -> f64 {
        if self.n > 0.0 {
            self.sum / self.n
        } else {
            0.0
        }
    }

    fn std(&self) -> f64 {
        if self.n == 0.0 {
            return 1.0;
        }
        let var = (self.sum_sq / self.n - self.mean().powi(2)).max(0.0);
        let sd = var.sqrt();
        if sd > 1e-12 * self.mean().abs().max(1.0) {
            sd
        } else {
            1.0
        }
    }
}

/// One scenario as a graph. Features are already standardized.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    pub node_features: Array2<f64>,
    pub edge_features: Array2<f64>,
    pub edge_index: Vec<(usize, usize)>,
    /// Blackout size, MW.
    pub label: f64,
}

impl GraphSample {
    pub fn n_nodes(&self) -> usize {
        self.node_features.nrows()
    }

    pub fn n_edges(&self) -> usize {
        self.edge_features.nrows()
    }
}

fn raw_features(
    grid: &Grid,
    state: &GridState,
    failures: &[usize],
    topology: &AugmentedTopology,
) -> (Array2<f64>, Array2<f64>) {
    let n = grid.n_buses();
    let nodes = Array2::from_shape_fn((n, NODE_FEATURES), |(b, k)| if k == 0 { state.load[b] } else { state.generation[b] });
    let mut edges = Array2::zeros((topology.n_edges(), EDGE_FEATURES));
    for line in &grid.lines {
        edges[[line.id, 0]] = line.resistance;
        edges[[line.id, 1]] = line.reactance;
    }
    for &f in failures {
        edges[[f, 2]] = 1.0;
    }
    for k in grid.n_lines()..topology.n_edges() {
        edges[[k, 3]] = 1.0;
    }
    (nodes, edges)
}

/// Encodes a scenario for the regressor. Failed lines stay in the graph with
/// their failure flag set; statistical edges follow the physical lines.
pub fn encode_sample(
    grid: &Grid,
    state: &GridState,
    failures: &[usize],
    topology: &AugmentedTopology,
    norms: &FeatureNorms,
    label_mw: f64,
) -> Result<GraphSample, GnnError> {
    if topology.physical.len() != grid.n_lines() || topology.n_buses != grid.n_buses() {
        return Err(GnnError::Topology("topology was built for a different grid".into()));
    }
    if state.load.len() != grid.n_buses() || state.generation.len() != grid.n_buses() {
        return Err(GnnError::Topology("state size differs from the grid".into()));
    }
    if let Some(&bad) = failures.iter().find(|&&f| f >= grid.n_lines()) {
        return Err(GnnError::InvalidLine(bad));
    }
    let (mut nodes, mut edges) = raw_features(grid, state, failures, topology);
    for mut row in nodes.rows_mut() {
        for k in 0..NODE_FEATURES {
            row[k] = (row[k] - norms.node_mean[k]) / norms.node_std[k];
        }
    }
    for mut row in edges.rows_mut() {
        for k in 0..EDGE_FEATURES {
            row[k] = (row[k] - norms.edge_mean[k]) / norms.edge_std[k];
        }
    }
    Ok(GraphSample { node_features: nodes, edge_features: edges, edge_index: topology.edge_index(), label: label_mw })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: usize,
    pub layers: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { hidden: 128, layers: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    pub architecture: Architecture,
    /// 2 → h → h.
    pub init_node: Mlp,
    /// 4 → h → h.
    pub init_edge: Mlp,
    /// Per layer, 2h → h.
    pub node_updates: Vec<DenseLayer>,
    /// Per layer, 3h → h.
    pub edge_updates: Vec<DenseLayer>,
    /// h → 1.
    pub readout: DenseLayer,
    pub norms: FeatureNorms,
}

impl GnnModel {
    pub fn init(architecture: Architecture, norms: FeatureNorms, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = architecture.hidden;
        let init_node = Mlp::init(&[NODE_FEATURES, h, h], Activation::Identity, &mut rng);
        let init_edge = Mlp::init(&[EDGE_FEATURES, h, h], Activation::Identity, &mut rng);
        let mut node_updates = Vec::with_capacity(architecture.layers);
        let mut edge_updates = Vec::with_capacity(architecture.layers);
        for _ in 0..architecture.layers {
            edge_updates.push(DenseLayer::init(3 * h, h, Activation::Relu, &mut rng));
            node_updates.push(DenseLayer::init(2 * h, h, Activation::Relu, &mut rng));
        }
        let readout = DenseLayer::init(h, 1, Activation::Identity, &mut rng);
        Self { architecture, init_node, init_edge, node_updates, edge_updates, readout, norms }
    }

    /// Same shapes, all parameters zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let zero = |l: &DenseLayer| DenseLayer::zeros(l.fan_in(), l.fan_out(), l.activation);
        Self {
            architecture: self.architecture,
            init_node: self.init_node.zeros_like(),
            init_edge: self.init_edge.zeros_like(),
            node_updates: self.node_updates.iter().map(zero).collect(),
            edge_updates: self.edge_updates.iter().map(zero).collect(),
            readout: zero(&self.readout),
            norms: self.norms.clone(),
        }
    }

    /// Blackout estimate in MW for one graph.
    pub fn predict(&self, sample: &GraphSample) -> Result<f64, GnnError> {
        let batch = GraphBatch::new(std::slice::from_ref(sample), &self.norms)?;
        Ok(self.norms.denormalize_label(self.infer_batch(&batch)?[0]))
    }

    /// Normalized outputs per graph, no caches kept.
    pub fn infer_batch(&self, batch: &GraphBatch) -> Result<Vec<f64>, GnnError> {
        let h = self.architecture.hidden;
        let mut v = self.init_node.infer(&batch.node_x)?;
        let mut e = self.init_edge.infer(&batch.edge_x)?;
        for (fe, fv) in self.edge_updates.iter().zip(&self.node_updates) {
            let e_in = concatenate![Axis(1), e, v.select(Axis(0), &batch.src), v.select(Axis(0), &batch.dst)];
            e += &fe.infer(&e_in)?;
            let agg = batch.aggregate(&e, h);
            let v_in = concatenate![Axis(1), v, agg];
            v += &fv.infer(&v_in)?;
        }
        let pooled = batch.pool(&v, h);
        Ok(self.readout.infer(&pooled)?.column(0).to_vec())
    }

    /// Forward with caches.
    pub fn forward_batch(&self, batch: &GraphBatch) -> Result<(Vec<f64>, ForwardCache), GnnError> {
        let h = self.architecture.hidden;
        let (mut v, node_cache) = self.init_node.forward(&batch.node_x)?;
        let (mut e, edge_cache) = self.init_edge.forward(&batch.edge_x)?;
        let mut layers = Vec::with_capacity(self.architecture.layers);
        for (fe, fv) in self.edge_updates.iter().zip(&self.node_updates) {
            let e_in = concatenate![Axis(1), e, v.select(Axis(0), &batch.src), v.select(Axis(0), &batch.dst)];
            let (de, ec) = fe.forward(&e_in)?;
            e += &de;
            let agg = batch.aggregate(&e, h);
            let v_in = concatenate![Axis(1), v, agg];
            let (dv, vc) = fv.forward(&v_in)?;
            v += &dv;
            layers.push((ec, vc));
        }
        let pooled = batch.pool(&v, h);
        let (out, readout_cache) = self.readout.forward(&pooled)?;
        Ok((out.column(0).to_vec(), ForwardCache { node_cache, edge_cache, layers, readout_cache }))
    }

    /// Gradient of a loss with `d_out[g] = dL/d(normalized output of graph g)`.
    pub fn backward_batch(&self, batch: &GraphBatch, cache: &ForwardCache, d_out: &[f64]) -> Result<GnnModel, GnnError> {
        let h = self.architecture.hidden;
        let mut grads = self.zeros_like();
        let d_out = Array2::from_shape_vec((d_out.len(), 1), d_out.to_vec()).expect("column");
        let (d_pooled, g_readout) = self.readout.backward(&cache.readout_cache, &d_out)?;
        grads.readout = g_readout;
        let mut dv = d_pooled.select(Axis(0), &batch.node_graph);
        let mut de = Array2::<f64>::zeros((batch.src.len(), h));
        for l in (0..self.architecture.layers).rev() {
            let (ec, vc) = &cache.layers[l];
            let (dv_in, g_node) = self.node_updates[l].backward(vc, &dv)?;
            grads.node_updates[l] = g_node;
            let mut dv_prev = dv;
            dv_prev += &dv_in.slice(s![.., ..h]);
            let d_agg = dv_in.slice(s![.., h..]);
            de += &d_agg.select(Axis(0), &batch.src);
            de += &d_agg.select(Axis(0), &batch.dst);
            let (de_in, g_edge) = self.edge_updates[l].backward(ec, &de)?;
            grads.edge_updates[l] = g_edge;
            de += &de_in.slice(s![.., ..h]);
            for (k, (&i, &j)) in batch.src.iter().zip(&batch.dst).enumerate() {
                let mut row = dv_prev.row_mut(i);
                row += &de_in.slice(s![k, h..2 * h]);
                let mut row = dv_prev.row_mut(j);
                row += &de_in.slice(s![k, 2 * h..]);
            }
            dv = dv_prev;
        }
        let (_, g_init_node) = self.init_node.backward(&cache.node_cache, &dv)?;
        let (_, g_init_edge) = self.init_edge.backward(&cache.edge_cache, &de)?;
        grads.init_node = g_init_node;
        grads.init_edge = g_init_edge;
        Ok(grads)
    }
}

impl Parameters for GnnModel {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        fn named<'a>(prefix: String, blocks: Vec<(String, &'a [f64])>) -> Vec<(String, &'a [f64])> {
            blocks.into_iter().map(|(n, b)| (format!("{prefix}.{n}"), b)).collect()
        }
        out.extend(named("init_node".into(), self.init_node.blocks()));
        out.extend(named("init_edge".into(), self.init_edge.blocks()));
        for (l, (fe, fv)) in self.edge_updates.iter().zip(&self.node_updates).enumerate() {
            out.extend(named(format!("edge_update{l}"), fe.blocks()));
            out.extend(named(format!("node_update{l}"), fv.blocks()));
        }
        out.extend(named("readout".into(), self.readout.blocks()));
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        fn named<'a>(prefix: String, blocks: Vec<(String, &'a mut [f64])>) -> Vec<(String, &'a mut [f64])> {
            blocks.into_iter().map(|(n, b)| (format!("{prefix}.{n}"), b)).collect()
        }
        out.extend(named("init_node".into(), self.init_node.blocks_mut()));
        out.extend(named("init_edge".into(), self.init_edge.blocks_mut()));
        for (l, (fe, fv)) in self.edge_updates.iter_mut().zip(self.node_updates.iter_mut()).enumerate() {
            out.extend(named(format!("edge_update{l}"), fe.blocks_mut()));
            out.extend(named(format!("node_update{l}"), fv.blocks_mut()));
        }
        out.extend(named("readout".into(), self.readout.blocks_mut()));
        out
    }
}

pub struct ForwardCache {
    node_cache: MlpCache,
    edge_cache: MlpCache,
    layers: Vec<(LayerCache, LayerCache)>,
    readout_cache: LayerCache,
}

/// Disjoint union of several graphs, processed as one.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub node_x: Array2<f64>,
    pub edge_x: Array2<f64>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub node_graph: Vec<usize>,
    pub n_graphs: usize,
    /// Normalized labels per graph.
    pub targets: Vec<f64>,
}

impl GraphBatch {
    pub fn new(samples: &[GraphSample], norms: &FeatureNorms) -> Result<Self, GnnError> {
        let refs: Vec<&GraphSample> = samples.iter().collect();
        Self::from_refs(&refs, norms)
    }

    pub fn from_refs(samples: &[&GraphSample], norms: &FeatureNorms) -> Result<Self, GnnError> {
        for s in samples {
            if s.node_features.ncols() != NODE_FEATURES || s.edge_features.ncols() != EDGE_FEATURES {
                return Err(GnnError::Neural(NeuralError::Shape {
                    expected: NODE_FEATURES + EDGE_FEATURES,
                    got: s.node_features.ncols() + s.edge_features.ncols(),
                }));
            }
            if s.edge_index.len() != s.n_edges() {
                return Err(GnnError::Topology(format!("{} edge rows for {} edges", s.n_edges(), s.edge_index.len())));
            }
            if let Some(&(i, j)) = s.edge_index.iter().find(|&&(i, j)| i >= s.n_nodes() || j >= s.n_nodes()) {
                return Err(GnnError::Topology(format!("edge ({i}, {j}) outside {} nodes", s.n_nodes())));
            }
        }
        let n_nodes: usize = samples.iter().map(|s| s.n_nodes()).sum();
        let n_edges: usize = samples.iter().map(|s| s.n_edges()).sum();
        let mut node_x = Array2::zeros((n_nodes, NODE_FEATURES));
        let mut edge_x = Array2::zeros((n_edges, EDGE_FEATURES));
        let mut src = Vec::with_capacity(n_edges);
        let mut dst = Vec::with_capacity(n_edges);
        let mut node_graph = Vec::with_capacity(n_nodes);
        let (mut no, mut eo) = (0, 0);
        for (g, s) in samples.iter().enumerate() {
            node_x.slice_mut(s![no..no + s.n_nodes(), ..]).assign(&s.node_features);
            edge_x.slice_mut(s![eo..eo + s.n_edges(), ..]).assign(&s.edge_features);
            for &(i, j) in &s.edge_index {
                src.push(no + i);
                dst.push(no + j);
            }
            node_graph.extend(std::iter::repeat(g).take(s.n_nodes()));
            no += s.n_nodes();
            eo += s.n_edges();
        }
        Ok(Self {
            node_x,
            edge_x,
            src,
            dst,
            node_graph,
            n_graphs: samples.len(),
            targets: samples.iter().map(|s| norms.normalize_label(s.label)).collect(),
        })
    }

    /// Sum of incident edge rows into both endpoints.
    fn aggregate(&self, e: &Array2<f64>, h: usize) -> Array2<f64> {
        let mut agg = Array2::zeros((self.node_graph.len(), h));
        for (k, (&i, &j)) in self.src.iter().zip(&self.dst).enumerate() {
            let row = e.row(k);
            let mut a = agg.row_mut(i);
            a += &row;
            let mut b = agg.row_mut(j);
            b += &row;
        }
        agg
    }

    fn pool(&self, v: &Array2<f64>, h: usize) -> Array2<f64> {
        let mut pooled = Array2::zeros((self.n_graphs, h));
        for (i, &g) in self.node_graph.iter().enumerate() {
            let mut row = pooled.row_mut(g);
            row += &v.row(i);
        }
        pooled
    }
}

/// Convenience: estimate in MW for one encoded sample.
pub fn gnn_forward(model: &GnnModel, sample: &GraphSample) -> Result<f64, GnnError> {
    model.predict(sample)
}
