use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::dataset::{NodeFeatures, Sample};
use crate::grid::Adjacency;
use crate::{Error, Result};

/// Task order used for gates, heads and reports.
pub const TASKS: [&str; 4] = ["tas_class", "tvs_class", "tas_margin", "tvs_margin"];
pub const N_TASKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub experts: usize,
    pub expert_hidden: usize,
    pub expert_out: usize,
}

impl ModelConfig {
    /// Two 64-wide GraphSAGE layers and four experts (64 hidden, 32 out).
    pub fn with_input(input_dim: usize) -> Self {
        Self { input_dim, hidden_dim: 64, layers: 2, experts: 4, expert_hidden: 64, expert_out: 32 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::InvalidArgument("the encoder needs at least one layer".into()));
        }
        if self.experts < 2 {
            return Err(Error::InvalidArgument("need at least two experts".into()));
        }
        if [self.input_dim, self.hidden_dim, self.expert_hidden, self.expert_out].contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Shapes of all parameters in declaration order: encoder layers
    /// (W_self, W_neigh, b), per-task gates (W, b), experts (W1, b1, W2, b2),
    /// then heads (W, b) in [`TASKS`] order.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        let mut s = Vec::new();
        for l in 0..self.layers {
            let d_in = if l == 0 { self.input_dim } else { self.hidden_dim };
            s.extend([(d_in, self.hidden_dim), (d_in, self.hidden_dim), (1, self.hidden_dim)]);
        }
        for _ in 0..N_TASKS {
            s.extend([(self.hidden_dim, self.experts), (1, self.experts)]);
        }
        for _ in 0..self.experts {
            s.extend([
                (self.hidden_dim, self.expert_hidden),
                (1, self.expert_hidden),
                (self.expert_hidden, self.expert_out),
                (1, self.expert_out),
            ]);
        }
        for out in [2, 2, 1, 1] {
            s.extend([(self.expert_out, out), (1, out)]);
        }
        s
    }

    fn sage(&self, l: usize) -> usize {
        3 * l
    }

    fn gate(&self, t: usize) -> usize {
        3 * self.layers + 2 * t
    }

    fn expert(&self, e: usize) -> usize {
        3 * self.layers + 2 * N_TASKS + 4 * e
    }

    fn head(&self, t: usize) -> usize {
        3 * self.layers + 2 * N_TASKS + 4 * self.experts + 2 * t
    }
}

/// One graph ready for the model: node features and the mean-aggregation
/// operator of its adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub features: Tensor,
    pub mean_op: Tensor,
}

impl GraphInput {
    pub fn new(features: Tensor, adjacency: &Adjacency) -> Result<Self> {
        let n = adjacency.len();
        if features.rows() != n {
            return Err(Error::Shape(format!("{} feature rows for {n} nodes", features.rows())));
        }
        Ok(Self { features, mean_op: Tensor::matrix(n, n, adjacency.mean_operator())? })
    }

    pub fn from_features(f: &NodeFeatures, adjacency: &Adjacency) -> Result<Self> {
        let x = Tensor::matrix(f.n_buses, f.width(), f.values.iter().map(|&v| v as f64).collect())?;
        Self::new(x, adjacency)
    }

    pub fn from_sample(sample: &Sample) -> Result<Self> {
        Self::from_features(&sample.features, &sample.adjacency)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardOptions {
    /// Replaces every task's gate with this fixed weight vector.
    pub gate_override: Option<Vec<f64>>,
}

/// Graph handles produced by one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub node_embeddings: Vec<Var>,
    pub pooled: Var,
    pub gates: [Var; N_TASKS],
    pub expert_outputs: Vec<Var>,
    pub tas_logits: Var,
    pub tvs_logits: Var,
    pub tas_margin: Var,
    pub tvs_margin: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub tas_logits: [f64; 2],
    pub tvs_logits: [f64; 2],
    pub tas_margin: f64,
    pub tvs_margin: f64,
    pub gate_weights: [Vec<f64>; N_TASKS],
}

impl ModelOutput {
    /// Class 0 is stable.
    pub fn tas_stable(&self) -> bool {
        self.tas_logits[0] > self.tas_logits[1]
    }

    pub fn tvs_stable(&self) -> bool {
        self.tvs_logits[0] > self.tvs_logits[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<Tensor>,
}

fn relu_if(g: &mut Graph, v: Var, on: bool) -> Var {
    if on {
        g.relu(v)
    } else {
        v
    }
}

impl Model {
    /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .param_shapes()
            .into_iter()
            .map(|(r, c)| {
                let data = if r == 1 {
                    vec![0.0; c]
                } else {
                    let a = (6.0 / (r + c) as f64).sqrt();
                    (0..r * c).map(|_| rng.gen_range(-a..a)).collect()
                };
                Tensor::matrix(r, c, data).expect("shape from layout")
            })
            .collect();
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn check_input(&self, x: &GraphInput) -> Result<()> {
        let n = x.features.rows();
        if x.features.cols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "model expects {} features per node, got {}",
                self.config.input_dim,
                x.features.cols()
            )));
        }
        if x.mean_op.rows() != n || x.mean_op.cols() != n {
            return Err(Error::Shape("adjacency does not match node count".into()));
        }
        Ok(())
    }

    /// Records a forward pass over `batch` on `g`.
    pub fn forward_graph(&self, g: &mut Graph, batch: &[GraphInput], opts: &ForwardOptions) -> Result<ForwardVars> {
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let c = &self.config;
        let p: Vec<Var> = self.params.iter().enumerate().map(|(i, t)| g.param(i, t)).collect();

        let mut node_embeddings = Vec::with_capacity(batch.len());
        let mut pooled_rows = Vec::with_capacity(batch.len());
        for x in batch {
            self.check_input(x)?;
            let mean = g.constant_tensor(&x.mean_op);
            let mut h = g.constant_tensor(&x.features);
            for l in 0..c.layers {
                let k = c.sage(l);
                h = sage_step(g, h, mean, p[k], p[k + 1], p[k + 2], l + 1 < c.layers)?;
            }
            pooled_rows.push(g.mean_rows(h));
            node_embeddings.push(h);
        }
        let pooled = g.concat_rows(&pooled_rows)?;
        let b = batch.len();

        let mut expert_outputs = Vec::with_capacity(c.experts);
        for e in 0..c.experts {
            let k = c.expert(e);
            let z = g.matmul(pooled, p[k])?;
            let z = g.add_row(z, p[k + 1])?;
            let z = g.relu(z);
            let z = g.matmul(z, p[k + 2])?;
            expert_outputs.push(g.add_row(z, p[k + 3])?);
        }

        let mut gates = Vec::with_capacity(N_TASKS);
        let mut heads = Vec::with_capacity(N_TASKS);
        for t in 0..N_TASKS {
            let gv = match &opts.gate_override {
                Some(w) => {
                    if w.len() != c.experts {
                        return Err(Error::Shape("gate override length differs from expert count".into()));
                    }
                    g.constant(b, c.experts, w.iter().cycle().take(b * c.experts).copied().collect())?
                }
                None => {
                    let k = c.gate(t);
                    let z = g.matmul(pooled, p[k])?;
                    let z = g.add_row(z, p[k + 1])?;
                    g.softmax_rows(z)
                }
            };
            let y = combine_vars(g, gv, &expert_outputs)?;
            let k = c.head(t);
            let o = g.matmul(y, p[k])?;
            let o = g.add_row(o, p[k + 1])?;
            heads.push(if t >= 2 { g.tanh(o) } else { o });
            gates.push(gv);
        }
        Ok(ForwardVars {
            node_embeddings,
            pooled,
            gates: [gates[0], gates[1], gates[2], gates[3]],
            expert_outputs,
            tas_logits: heads[0],
            tvs_logits: heads[1],
            tas_margin: heads[2],
            tvs_margin: heads[3],
        })
    }

    pub fn forward_with(&self, batch: &[GraphInput], opts: &ForwardOptions) -> Result<Vec<ModelOutput>> {
        let mut g = Graph::new();
        let v = self.forward_graph(&mut g, batch, opts)?;
        Ok(outputs(&g, &v, batch.len()))
    }

    pub fn forward(&self, batch: &[GraphInput]) -> Result<Vec<ModelOutput>> {
        self.forward_with(batch, &ForwardOptions::default())
    }
}

/// Reads per-sample outputs out of a recorded forward pass.
pub fn outputs(g: &Graph, v: &ForwardVars, batch: usize) -> Vec<ModelOutput> {
    let n = g.shape(v.gates[0]).1;
    (0..batch)
        .map(|i| {
            let two = |var: Var| {
                let x = g.value(var);
                [x[2 * i], x[2 * i + 1]]
            };
            ModelOutput {
                tas_logits: two(v.tas_logits),
                tvs_logits: two(v.tvs_logits),
                tas_margin: g.value(v.tas_margin)[i],
                tvs_margin: g.value(v.tvs_margin)[i],
                gate_weights: std::array::from_fn(|t| g.value(v.gates[t])[i * n..(i + 1) * n].to_vec()),
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn sage_step(
    g: &mut Graph,
    h: Var,
    mean: Var,
    w_self: Var,
    w_neigh: Var,
    b: Var,
    activate: bool,
) -> Result<Var> {
    let agg = g.matmul(mean, h)?;
    let a = g.matmul(h, w_self)?;
    let n = g.matmul(agg, w_neigh)?;
    let s = g.add(a, n)?;
    let s = g.add_row(s, b)?;
    Ok(relu_if(g, s, activate))
}

fn combine_vars(g: &mut Graph, gate: Var, experts: &[Var]) -> Result<Var> {
    let mut acc = g.mul_col(experts[0], gate, 0)?;
    for (i, &e) in experts.iter().enumerate().skip(1) {
        let term = g.mul_col(e, gate, i)?;
        acc = g.add(acc, term)?;
    }
    Ok(acc)
}

/// One mean-aggregator GraphSAGE layer:
/// `act(H W_self + mean_neighbors(H) W_neigh + b)`, ReLU when `relu`.
pub fn graphsage_layer(
    h: &Tensor,
    adjacency: &Adjacency,
    w_self: &Tensor,
    w_neigh: &Tensor,
    b: &Tensor,
    relu: bool,
) -> Result<Tensor> {
    if h.rows() != adjacency.len() {
        return Err(Error::Shape(format!("{} rows for {} nodes", h.rows(), adjacency.len())));
    }
    let mut g = Graph::new();
    let n = adjacency.len();
    let mean = g.constant(n, n, adjacency.mean_operator())?;
    let hv = g.constant_tensor(h);
    let ws = g.constant_tensor(w_self);
    let wn = g.constant_tensor(w_neigh);
    let bv = g.constant_tensor(b);
    let out = sage_step(&mut g, hv, mean, ws, wn, bv, relu)?;
    Ok(g.tensor(out))
}

/// Node embeddings after all encoder layers, and their mean over nodes.
pub fn encode(model: &Model, x: &GraphInput) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let v = model.forward_graph(&mut g, std::slice::from_ref(x), &ForwardOptions::default())?;
    Ok((g.tensor(v.node_embeddings[0]), g.tensor(v.pooled)))
}

/// `softmax(h W + b)` row-wise.
pub fn gate(h: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let hv = g.constant_tensor(h);
    let wv = g.constant_tensor(w);
    let bv = g.constant_tensor(b);
    let z = g.matmul(hv, wv)?;
    let z = g.add_row(z, bv)?;
    let s = g.softmax_rows(z);
    Ok(g.tensor(s))
}

/// `sum_i g_i E_i` for one sample.
pub fn moe_combine(weights: &[f64], experts: &[Tensor]) -> Result<Tensor> {
    if weights.len() != experts.len() || experts.is_empty() {
        return Err(Error::Shape(format!("{} weights for {} experts", weights.len(), experts.len())));
    }
    let shape = experts[0].shape.clone();
    if experts.iter().any(|e| e.shape != shape) {
        return Err(Error::Shape("expert outputs differ in shape".into()));
    }
    let mut g = Graph::new();
    let gv = g.constant(1, weights.len(), weights.to_vec())?;
    let ev: Vec<Var> = experts.iter().map(|e| g.constant(1, e.len(), e.data.clone())).collect::<Result<_>>()?;
    let y = combine_vars(&mut g, gv, &ev)?;
    Tensor::new(shape, g.value(y).to_vec())
}

/// Squared coefficient of variation of per-expert importance (column sums
/// of a `batch x experts` gate matrix).
pub fn load_balance_loss(gates: &Tensor) -> f64 {
    super::graph::cv_squared(gates.rows(), gates.cols(), &gates.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_counts() {
        let c = ModelConfig::with_input(40);
        let m = Model::new(c, 0).unwrap();
        assert_eq!(m.params.len(), 3 * 2 + 2 * 4 + 4 * 4 + 2 * 4);
        assert_eq!(m.params[c.head(0)].shape, vec![32, 2]);
        assert_eq!(m.params[c.head(3)].shape, vec![32, 1]);
        assert_eq!(m.params[c.gate(1)].shape, vec![64, 4]);
        assert_eq!(m.params[c.expert(0)].shape, vec![64, 64]);
        assert!(m.params[2].data.iter().all(|&x| x == 0.0));
        let bound = (6.0f64 / (40.0 + 64.0)).sqrt();
        assert!(m.params[0].data.iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn zero_layers_rejected() {
        let mut c = ModelConfig::with_input(4);
        c.layers = 0;
        assert!(Model::new(c, 0).is_err());
        c.layers = 1;
        c.experts = 1;
        assert!(Model::new(c, 0).is_err());
    }

    #[test]
    fn same_seed_same_init() {
        let c = ModelConfig::with_input(6);
        assert_eq!(Model::new(c, 5).unwrap(), Model::new(c, 5).unwrap());
        assert_ne!(Model::new(c, 5).unwrap(), Model::new(c, 6).unwrap());
    }
}
