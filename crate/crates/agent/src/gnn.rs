//! Graph attention networks for the policy and the value function.
//!
//! Each network encodes node, edge and global features to a latent width,
//! then runs message-passing rounds. In a round every link sends one message
//! per direction built from the link, both endpoints and the global latent;
//! receivers weight incoming messages by a softmax of learned attention
//! logits. Links are updated from the mean of their two messages.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::observation::{GraphBatch, ObservationSpec, NODE_FEATURES};
use crate::tape::{Matrix, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub latent: usize,
    pub rounds: usize,
    pub mlp_layers: usize,
    pub activation: Activation,
    pub capacity_features: bool,
    /// Value head reads the policy trunk instead of its own network.
    pub shared_trunk: bool,
    pub attention_slope: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            latent: 128,
            rounds: 3,
            mlp_layers: 2,
            activation: Activation::Relu,
            capacity_features: true,
            shared_trunk: false,
            attention_slope: 0.2,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.latent == 0 || self.mlp_layers == 0 {
            return Err("latent width and MLP depth must be positive".into());
        }
        if !(self.attention_slope >= 0.0 && self.attention_slope < 1.0) {
            return Err("attention slope must be in [0, 1)".into());
        }
        Ok(())
    }
}

/// Named parameter matrices in creation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub names: Vec<String>,
    pub values: Vec<Matrix>,
}

impl Params {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    fn add(&mut self, name: String, value: Matrix) -> usize {
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Round {
    message: Vec<Linear>,
    attention: usize,
    node: Vec<Linear>,
}

#[derive(Debug, Clone)]
struct Gat {
    node_enc: Linear,
    edge_enc: Linear,
    global_enc: Linear,
    rounds: Vec<Round>,
}

struct Builder<'r> {
    params: Params,
    rng: &'r mut ChaCha8Rng,
}

impl Builder<'_> {
    fn glorot(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> usize {
        let limit = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| self.rng.gen_range(-limit..=limit))
            .collect();
        self.params
            .add(name.to_string(), Matrix::from_vec(fan_in, fan_out, data))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Linear {
        let w = self.glorot(&format!("{name}.w"), fan_in, fan_out, gain);
        let b = self
            .params
            .add(format!("{name}.b"), Matrix::zeros(1, fan_out));
        Linear { w, b }
    }

    fn mlp(&mut self, name: &str, fan_in: usize, width: usize, layers: usize) -> Vec<Linear> {
        (0..layers)
            .map(|i| {
                let inp = if i == 0 { fan_in } else { width };
                self.linear(&format!("{name}.{i}"), inp, width, 1.0)
            })
            .collect()
    }

    fn gat(&mut self, prefix: &str, spec: &ObservationSpec, cfg: &GnnConfig) -> Gat {
        let d = cfg.latent;
        let node_enc = self.linear(&format!("{prefix}.enc.node"), NODE_FEATURES, d, 1.0);
        let edge_enc = self.linear(&format!("{prefix}.enc.edge"), spec.edge_features(), d, 1.0);
        let global_enc =
            self.linear(&format!("{prefix}.enc.global"), spec.global_features(), d, 1.0);
        let rounds = (0..cfg.rounds)
            .map(|r| Round {
                message: self.mlp(&format!("{prefix}.r{r}.msg"), 4 * d, d, cfg.mlp_layers),
                attention: self.glorot(&format!("{prefix}.r{r}.att"), d, 1, 1.0),
                node: self.mlp(&format!("{prefix}.r{r}.node"), 3 * d, d, cfg.mlp_layers),
            })
            .collect();
        Gat {
            node_enc,
            edge_enc,
            global_enc,
            rounds,
        }
    }
}

/// Latent states after message passing.
#[derive(Debug, Clone, Copy)]
pub struct GatOutput {
    pub node: Var,
    pub edge: Var,
    pub global: Var,
}

/// Outputs of one batched evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// Masked log-probabilities, shape `[B, K * S]`; masked cells hold 0.
    pub log_probs: Var,
    /// State values, shape `[B, 1]`.
    pub value: Var,
}

/// Policy and value networks with their parameters.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    config: GnnConfig,
    spec: ObservationSpec,
    params: Params,
    policy: Gat,
    policy_hidden: Linear,
    policy_out: Linear,
    value: Option<Gat>,
    value_hidden: Linear,
    value_out: Linear,
}

impl ActorCritic {
    pub fn new(config: GnnConfig, spec: ObservationSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: Params {
                names: Vec::new(),
                values: Vec::new(),
            },
            rng: &mut rng,
        };
        let d = config.latent;
        let policy = b.gat("policy", &spec, &config);
        let policy_hidden = b.linear("policy.head.0", d, d, 1.0);
        let policy_out = b.linear("policy.head.out", d, spec.channels, 0.01);
        let value = (!config.shared_trunk).then(|| b.gat("value", &spec, &config));
        let value_hidden = b.linear("value.head.0", 2 * d, d, 1.0);
        let value_out = b.linear("value.head.out", d, 1, 1.0);
        Self {
            config,
            spec,
            params: b.params,
            policy,
            policy_hidden,
            policy_out,
            value,
            value_hidden,
            value_out,
        }
    }

    pub fn config(&self) -> &GnnConfig {
        &self.config
    }

    pub fn spec(&self) -> &ObservationSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Replaces the parameters; names and shapes must match.
    pub fn load_params(&mut self, params: Params) -> Result<(), String> {
        if params.names != self.params.names {
            return Err("parameter names differ".into());
        }
        for ((name, a), b) in params.names.iter().zip(&params.values).zip(&self.params.values) {
            if (a.rows, a.cols) != (b.rows, b.cols) || a.len() != a.rows * a.cols {
                return Err(format!("parameter {name} has the wrong shape"));
            }
        }
        self.params = params;
        Ok(())
    }

    /// Records every parameter as a borrowed leaf.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<Var> {
        self.params.values.iter().map(|m| tape.leaf_ref(m)).collect()
    }

    fn activate(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        match self.config.activation {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }

    fn linear(tape: &mut Tape<'_>, p: &[Var], l: Linear, x: Var) -> Var {
        let y = tape.matmul(x, p[l.w]);
        tape.add_bias(y, p[l.b])
    }

    fn dense(&self, tape: &mut Tape<'_>, p: &[Var], l: Linear, x: Var) -> Var {
        let y = Self::linear(tape, p, l, x);
        self.activate(tape, y)
    }

    fn mlp(&self, tape: &mut Tape<'_>, p: &[Var], layers: &[Linear], mut x: Var) -> Var {
        for &l in layers {
            x = self.dense(tape, p, l, x);
        }
        x
    }

    fn run_gat(&self, tape: &mut Tape<'_>, p: &[Var], gat: &Gat, batch: &GraphBatch) -> GatOutput {
        let nf = tape.leaf(batch.node_features.clone());
        let ef = tape.leaf(batch.edge_features.clone());
        let gf = tape.leaf(batch.global_features.clone());
        let mut h = self.dense(tape, p, gat.node_enc, nf);
        let mut e = self.dense(tape, p, gat.edge_enc, ef);
        let g = self.dense(tape, p, gat.global_enc, gf);
        let messages = batch.msg_edge.len();
        for round in &gat.rounds {
            let me = tape.row_combine(e, batch.msg_edge.clone(), messages);
            let ms = tape.row_combine(h, batch.msg_sender.clone(), messages);
            let mr = tape.row_combine(h, batch.msg_receiver.clone(), messages);
            let mg = tape.row_combine(g, batch.msg_graph.clone(), messages);
            let z = tape.concat(&[me, ms, mr, mg]);
            let m = self.mlp(tape, p, &round.message, z);
            let logits = tape.matmul(m, p[round.attention]);
            let logits = tape.leaky_relu(logits, self.config.attention_slope);
            let alpha = tape.segment_softmax(logits, batch.receiver_segment.clone());
            let weighted = tape.mul_col(m, alpha);
            let agg = tape.row_combine(weighted, batch.aggregate.clone(), batch.nodes);
            let ng = tape.row_combine(g, batch.node_graph.clone(), batch.nodes);
            let zn = tape.concat(&[h, ng, agg]);
            let dh = self.mlp(tape, p, &round.node, zn);
            h = tape.add(h, dh);
            let de = tape.row_combine(m, batch.edge_from_msgs.clone(), batch.edges);
            e = tape.add(e, de);
        }
        GatOutput {
            node: h,
            edge: e,
            global: g,
        }
    }

    /// Latents of the policy network, exposed for inspection and tests.
    pub fn policy_latents(&self, tape: &mut Tape<'_>, p: &[Var], batch: &GraphBatch) -> GatOutput {
        self.run_gat(tape, p, &self.policy, batch)
    }

    /// Per-edge, per-channel scores before path readout, shape `[B * E, S]`.
    pub fn edge_scores(&self, tape: &mut Tape<'_>, p: &[Var], latents: &GatOutput) -> Var {
        let hidden = self.dense(tape, p, self.policy_hidden, latents.edge);
        Self::linear(tape, p, self.policy_out, hidden)
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &[Var], batch: &GraphBatch) -> Forward {
        let pol = self.policy_latents(tape, p, batch);
        let scores = self.edge_scores(tape, p, &pol);
        let paths = tape.row_combine(scores, batch.path_readout.clone(), batch.graphs * batch.k);
        let grid = tape.reshape(paths, batch.graphs, batch.k * batch.channels);
        let log_probs = tape.masked_log_softmax(grid, batch.mask.clone());

        let val = match &self.value {
            Some(gat) => self.run_gat(tape, p, gat, batch),
            None => pol,
        };
        let pooled = tape.row_combine(val.node, batch.node_pool.clone(), batch.graphs);
        let z = tape.concat(&[pooled, val.global]);
        let hidden = self.dense(tape, p, self.value_hidden, z);
        let value = Self::linear(tape, p, self.value_out, hidden);
        Forward { log_probs, value }
    }

    /// Log-probabilities and values as plain matrices.
    pub fn evaluate(&self, batch: &GraphBatch) -> (Matrix, Vec<f64>) {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let f = self.forward(&mut tape, &p, batch);
        let values = tape.value(f.value).data.clone();
        (tape.value(f.log_probs).clone(), values)
    }
}
