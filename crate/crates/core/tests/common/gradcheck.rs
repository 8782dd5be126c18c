//! Central finite differences against the tape's analytic gradients.

use cup_curriculum::graph::{Graph, NodeId};
use cup_curriculum::model::{Batch, Mode, ModelConfig, TransformerLm};
use cup_curriculum::rng::RngStreams;
use cup_curriculum::tensor::Tensor;
use cup_curriculum::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-3;

/// Builds a scalar loss from one node per input tensor.
pub type Builder = Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>>;

pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Builder,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Report {
    pub checked: usize,
    pub max_rel_err: f64,
}

impl Report {
    fn add(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        self.max_rel_err = self.max_rel_err.max(rel_err(analytic, numeric));
    }

    pub fn merge(&mut self, other: Report) {
        self.checked += other.checked;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
    }
}

/// Relative error with an absolute floor so two near-zero gradients agree.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// `sum(out * r)` for a fixed random weighting `r` of the node's shape.
fn weighted_sum(g: &mut Graph, out: NodeId, seed: u64) -> Result<NodeId> {
    let shape = g.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(random(shape, &mut rng, -1.0, 1.0));
    let prod = g.mul(out, r)?;
    Ok(g.sum(prod))
}

fn eval(case: &Case, inputs: &[Tensor]) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = (case.build)(&mut g, &ids).unwrap();
    g.backward(loss).unwrap();
    let grads = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| g.grad(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    (g.value(loss).values()[0], grads)
}

fn forward(case: &Case, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = (case.build)(&mut g, &ids).unwrap();
    g.value(loss).values()[0]
}

/// Checks up to `per_input` random coordinates of every input.
pub fn check_case(case: &Case, per_input: usize, seed: u64) -> Report {
    let (_, analytic) = eval(case, &case.inputs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report::default();
    for (k, t) in case.inputs.iter().enumerate() {
        let picks: Vec<usize> = if t.len() <= per_input {
            (0..t.len()).collect()
        } else {
            (0..per_input).map(|_| rng.random_range(0..t.len())).collect()
        };
        for j in picks {
            let mut plus = case.inputs.clone();
            plus[k].values_mut()[j] += H;
            let mut minus = case.inputs.clone();
            minus[k].values_mut()[j] -= H;
            let numeric = (forward(case, &plus) - forward(case, &minus)) / (2.0 * H);
            report.add(analytic[k][j], numeric);
        }
    }
    report
}

/// One case per differentiable operation.
pub fn op_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut r = |shape: Vec<usize>| random(shape, &mut rng, -1.0, 1.0);
    let mut cases = Vec::new();
    let mut push = |name: &'static str, inputs: Vec<Tensor>, build: Builder| cases.push(Case { name, inputs, build });

    push(
        "matmul",
        vec![r(vec![3, 4]), r(vec![4, 5])],
        Box::new(|g, x| {
            let y = g.matmul(x[0], x[1])?;
            weighted_sum(g, y, 1)
        }),
    );
    push(
        "bmm",
        vec![r(vec![2, 3, 4]), r(vec![2, 4, 2])],
        Box::new(|g, x| {
            let y = g.bmm(x[0], x[1], false)?;
            weighted_sum(g, y, 2)
        }),
    );
    push(
        "bmm_trans_b",
        vec![r(vec![2, 3, 4]), r(vec![2, 5, 4])],
        Box::new(|g, x| {
            let y = g.bmm(x[0], x[1], true)?;
            weighted_sum(g, y, 3)
        }),
    );
    push(
        "add",
        vec![r(vec![3, 4]), r(vec![3, 4])],
        Box::new(|g, x| {
            let y = g.add(x[0], x[1])?;
            weighted_sum(g, y, 4)
        }),
    );
    push(
        "add_row",
        vec![r(vec![3, 4]), r(vec![4])],
        Box::new(|g, x| {
            let y = g.add_row(x[0], x[1])?;
            weighted_sum(g, y, 5)
        }),
    );
    push(
        "mul",
        vec![r(vec![3, 4]), r(vec![3, 4])],
        Box::new(|g, x| {
            let y = g.mul(x[0], x[1])?;
            weighted_sum(g, y, 6)
        }),
    );
    push(
        "scale",
        vec![r(vec![5])],
        Box::new(|g, x| {
            let y = g.scale(x[0], -2.5);
            weighted_sum(g, y, 7)
        }),
    );
    push(
        "relu",
        vec![r(vec![4, 6])],
        Box::new(|g, x| {
            let y = g.relu(x[0]);
            weighted_sum(g, y, 8)
        }),
    );
    push(
        "gelu",
        vec![r(vec![4, 6])],
        Box::new(|g, x| {
            let y = g.gelu(x[0]);
            weighted_sum(g, y, 9)
        }),
    );
    push(
        "layer_norm",
        vec![r(vec![3, 6]), r(vec![6]), r(vec![6])],
        Box::new(|g, x| {
            let y = g.layer_norm(x[0], x[1], x[2], 1e-5)?;
            weighted_sum(g, y, 10)
        }),
    );
    push(
        "embedding",
        vec![r(vec![7, 3])],
        Box::new(|g, x| {
            let y = g.embedding(x[0], &[3, 0, 3, 6, 1])?;
            weighted_sum(g, y, 11)
        }),
    );
    push(
        "dropout",
        vec![r(vec![4, 5])],
        Box::new(|g, x| {
            let mut rng = RngStreams::new(9).stream("dropout");
            let y = g.dropout(x[0], 0.3, true, &mut rng)?;
            weighted_sum(g, y, 12)
        }),
    );
    push(
        "transpose",
        vec![r(vec![3, 5])],
        Box::new(|g, x| {
            let y = g.transpose(x[0])?;
            weighted_sum(g, y, 13)
        }),
    );
    push(
        "reshape",
        vec![r(vec![3, 4])],
        Box::new(|g, x| {
            let y = g.reshape(x[0], vec![2, 6])?;
            weighted_sum(g, y, 14)
        }),
    );
    push(
        "split_heads",
        vec![r(vec![6, 4])],
        Box::new(|g, x| {
            let y = g.split_heads(x[0], 2, 3, 2)?;
            weighted_sum(g, y, 15)
        }),
    );
    push(
        "merge_heads",
        vec![r(vec![4, 3, 2])],
        Box::new(|g, x| {
            let y = g.merge_heads(x[0], 2, 3, 2)?;
            weighted_sum(g, y, 16)
        }),
    );
    push(
        "causal_softmax",
        vec![r(vec![2, 4, 4])],
        Box::new(|g, x| {
            let y = g.causal_softmax(x[0])?;
            weighted_sum(g, y, 17)
        }),
    );
    push(
        "softmax_cross_entropy",
        vec![r(vec![5, 7])],
        Box::new(|g, x| g.softmax_cross_entropy(x[0], &[0, 6, 3, 3, 1])),
    );
    push(
        "sum",
        vec![r(vec![3, 3])],
        Box::new(|g, x| {
            let y = g.mul(x[0], x[0])?;
            Ok(g.sum(y))
        }),
    );
    cases
}

/// Tiny transformer configuration used for whole-model checks.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 11,
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        d_ffn: 12,
        max_seq_len: 5,
        dropout: 0.0,
        positional: Default::default(),
        activation: Default::default(),
    }
}

pub fn tiny_batch() -> Batch {
    let inputs = vec![1, 4, 2, 9, 0, 3, 3, 7, 10, 5];
    let targets = vec![4, 2, 9, 0, 6, 3, 7, 10, 5, 8];
    Batch::new(2, 5, inputs, targets).unwrap()
}

/// Analytic vs. numeric gradient of the full LM loss at `weights` random
/// positions of the global weight enumeration.
pub fn check_transformer(cfg: ModelConfig, weights: usize, seed: u64) -> Report {
    let lm = TransformerLm::new(cfg).unwrap();
    let mut params = lm.init_params(seed).unwrap();
    let batch = tiny_batch();
    params.zero_grad();
    let mut rng = RngStreams::new(seed).stream("dropout");
    lm.train_loss_and_grad(&mut params, &batch, &mut rng).unwrap();

    let loss_at = |params: &cup_curriculum::param::ParamStore| {
        let mut g = Graph::new();
        let l = lm.forward(&mut g, params, &batch, &mut Mode::Eval).unwrap();
        g.value(l).values()[0]
    };
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut report = Report::default();
    for _ in 0..weights {
        let global = pick.random_range(0..params.weight_count());
        let (id, off) = params.locate(global).unwrap();
        let analytic = params.get(id).tensor.grad().unwrap()[off];
        let orig = params.get(id).tensor.values()[off];
        params.get_mut(id).tensor.values_mut()[off] = orig + H;
        let up = loss_at(&params);
        params.get_mut(id).tensor.values_mut()[off] = orig - H;
        let down = loss_at(&params);
        params.get_mut(id).tensor.values_mut()[off] = orig;
        report.add(analytic, (up - down) / (2.0 * H));
    }
    report
}
