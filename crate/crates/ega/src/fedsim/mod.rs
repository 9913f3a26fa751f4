//! Federated optimization with encoded gradient aggregation: client local
//! training, quantize-encode upload, server-side aggregation in the encoded
//! domain, and the FedAvg / FedProx / qFedAvg variants.

pub mod mnist;
pub mod partition;
pub mod task;

pub use partition::partition_shards;
pub use task::{make_quadratic_clients, ClientDataset, TaskModel};

use crate::codec::{join_blocks, split_blocks, Codec, EncodedUpdate};
use crate::error::{EgaError, Result};
use crate::quantize::{quantize, QuantConfig};
use crate::rng;
use crate::Real;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::io::Write;

const LBL_SELECT: u64 = 0x73656c65;
const LBL_CLIENT: u64 = 0x636c6965;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum Algorithm {
    FedAvg,
    FedProx { mu: f64 },
    QFedAvg { q: f64 },
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx { .. } => "fedprox",
            Algorithm::QFedAvg { .. } => "qfedavg",
        }
    }
}

/// Per-round normalization rule. The server computes `n` and broadcasts it;
/// all clients in a round must quantize with the same `n` for the decoded
/// scale to be meaningful.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum NPolicy {
    Fixed { n0: f64 },
    Adaptive { n0: f64, safety: f64, n_min: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlConfig {
    pub rounds: u32,
    pub clients_per_round: u32,
    pub local_epochs: u32,
    pub learning_rate: f64,
    /// Scale applied to the decoded mean update on the server. 1.0 gives the
    /// standard parameter-averaging step.
    #[serde(default = "default_server_lr")]
    pub server_lr: f64,
    pub algorithm: Algorithm,
    pub n_policy: NPolicy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub ega_enabled: bool,
}

fn default_server_lr() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients_per_round == 0 {
            return Err(EgaError::config("clients_per_round must be >= 1"));
        }
        if self.local_epochs == 0 {
            return Err(EgaError::config("local_epochs must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.server_lr > 0.0) {
            return Err(EgaError::config("learning rates must be positive"));
        }
        Ok(())
    }
}

/// How client update blocks enter the quantized domain. `Passthrough` skips
/// the stochastic rounding and carries `x·s/n` exactly; it exists for the
/// oracle-equivalence and attack-telescoping tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantizer {
    Stochastic,
    Passthrough,
}

/// Upload pipeline: plaintext baseline or quantize-encode.
#[derive(Clone, Debug)]
pub enum Pipeline {
    Plaintext,
    Ega { codec: Codec, quantizer: Quantizer },
}

impl Pipeline {
    pub fn is_ega(&self) -> bool {
        matches!(self, Pipeline::Ega { .. })
    }

    /// Validate the pipeline against a run configuration.
    pub fn check_config(&self, cfg: &FlConfig) -> Result<()> {
        if let Pipeline::Ega { codec, .. } = self {
            if let Some(m_train) = codec.m_train() {
                if m_train != cfg.clients_per_round {
                    return Err(EgaError::config(format!(
                        "codec trained for m = {m_train} but clients_per_round = {}",
                        cfg.clients_per_round
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GlobalModel {
    pub w: Vec<Real>,
    pub round: u32,
}

impl GlobalModel {
    pub fn new(dim: usize) -> Self {
        GlobalModel {
            w: vec![0.0; dim],
            round: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: u32,
    pub algo: String,
    pub ega: bool,
    pub loss: f64,
    pub accuracy: f64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub n_used: f64,
}

pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "round",
        "algo",
        "ega",
        "loss",
        "accuracy",
        "uplink_bytes",
        "downlink_bytes",
        "n_used",
    ])
    .map_err(|e| EgaError::config(e.to_string()))?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            r.algo.clone(),
            r.ega.to_string(),
            format!("{:.9e}", r.loss),
            format!("{:.9e}", r.accuracy),
            r.uplink_bytes.to_string(),
            r.downlink_bytes.to_string(),
            format!("{:.9e}", r.n_used),
        ])
        .map_err(|e| EgaError::config(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Compute the round normalization from the previous round's decoded
/// aggregate (its max-abs), or the initial value on round 0.
pub fn compute_round_n(policy: &NPolicy, prev_max_abs: Option<f64>) -> f64 {
    match (policy, prev_max_abs) {
        (NPolicy::Fixed { n0 }, _) => *n0,
        (NPolicy::Adaptive { n0, .. }, None) => *n0,
        (NPolicy::Adaptive { safety, n_min, .. }, Some(max_abs)) => {
            (safety * max_abs).max(*n_min)
        }
    }
}

/// λ_i ∝ F_i(w)^q, normalized to sum to m so q = 0 reduces to uniform λ = 1.
/// All-zero losses fall back to uniform.
pub fn qfedavg_weights(local_losses: &[f64], q: f64) -> Vec<f64> {
    let m = local_losses.len();
    if m == 0 {
        return Vec::new();
    }
    let powered: Vec<f64> = local_losses.iter().map(|&l| l.max(0.0).powf(q)).collect();
    let total: f64 = powered.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return vec![1.0; m];
    }
    powered.iter().map(|&p| p * m as f64 / total).collect()
}

/// Run `k` local epochs and produce this client's upload for the round.
pub fn client_update(
    w_global: &[Real],
    client: &ClientDataset,
    task: &TaskModel,
    cfg: &FlConfig,
    pipeline: &Pipeline,
    n: f64,
    lambda: f64,
    round: u32,
) -> Result<EncodedUpdate> {
    client.validate()?;
    if !(n > 0.0) {
        return Err(EgaError::config("round normalization n must be positive"));
    }
    if lambda <= 0.0 {
        return Err(EgaError::config("client weight lambda must be positive"));
    }
    let d = w_global.len();
    let mu = match cfg.algorithm {
        Algorithm::FedProx { mu } => mu,
        _ => 0.0,
    };

    let mut stream = rng::stream(cfg.seed, &[LBL_CLIENT, round as u64, client.client_id as u64]);
    let mut w = w_global.to_vec();
    let mut grad = vec![0.0; d];
    let mut order: Vec<usize> = (0..client.sample_count()).collect();
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut stream);
        for &idx in &order {
            grad.iter_mut().for_each(|g| *g = 0.0);
            task.sample_grad(&w, &client.features[idx], client.labels[idx], &mut grad);
            if mu > 0.0 {
                for (g, (&wi, &gi)) in grad.iter_mut().zip(w.iter().zip(w_global.iter())) {
                    *g += mu * (wi - gi);
                }
            }
            for (wi, &g) in w.iter_mut().zip(grad.iter()) {
                *wi -= cfg.learning_rate * g;
            }
        }
    }

    let delta: Vec<Real> = w
        .iter()
        .zip(w_global.iter())
        .map(|(&wl, &wg)| lambda * (wl - wg))
        .collect();
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(EgaError::numeric(format!(
            "client {} produced a non-finite update",
            client.client_id
        )));
    }

    let blocks = match pipeline {
        Pipeline::Plaintext => vec![delta],
        Pipeline::Ega { codec, quantizer } => {
            let s = codec.s();
            let cfg_q = QuantConfig::new(s, n)?;
            split_blocks(&delta, codec.b())
                .into_iter()
                .map(|block| {
                    let quant_values: Vec<Real> = match quantizer {
                        Quantizer::Stochastic => quantize(&block, cfg_q, &mut stream)?
                            .values
                            .iter()
                            .map(|&v| v as Real)
                            .collect(),
                        Quantizer::Passthrough => {
                            block.iter().map(|&v| v * s as Real / n).collect()
                        }
                    };
                    codec.encode(&quant_values)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };

    Ok(EncodedUpdate {
        round,
        client_id: client.client_id,
        weight: lambda,
        blocks,
        n_used: n,
        original_dim: d as u32,
    })
}

/// Aggregate exactly `m` uploads and apply the global update. Returns the
/// decoded aggregate (the estimate of `(1/m)·Σ λ_i·Δw_i`).
pub fn server_round(
    model: &mut GlobalModel,
    updates: &[EncodedUpdate],
    pipeline: &Pipeline,
    cfg: &FlConfig,
) -> Result<Vec<Real>> {
    if updates.len() != cfg.clients_per_round as usize {
        return Err(EgaError::protocol(format!(
            "expected {} updates, got {}",
            cfg.clients_per_round,
            updates.len()
        )));
    }
    let d = model.w.len();
    let n = updates[0].n_used;
    for u in updates {
        if u.round != model.round {
            return Err(EgaError::protocol(format!(
                "update for round {} during round {}",
                u.round, model.round
            )));
        }
        if u.n_used != n {
            return Err(EgaError::protocol("updates quantized with different n"));
        }
        if u.original_dim as usize != d {
            return Err(EgaError::protocol("update dimension mismatch"));
        }
    }

    let m = updates.len() as Real;
    let aggregate = match pipeline {
        Pipeline::Plaintext => {
            let mut sum = vec![0.0; d];
            for u in updates {
                if u.blocks.len() != 1 || u.blocks[0].len() != d {
                    return Err(EgaError::protocol("plaintext update must carry one full block"));
                }
                for (s, &v) in sum.iter_mut().zip(u.blocks[0].iter()) {
                    *s += v / m;
                }
            }
            sum
        }
        Pipeline::Ega { codec, .. } => {
            let block_count = d.div_ceil(codec.b());
            for u in updates {
                if u.blocks.len() != block_count {
                    return Err(EgaError::protocol("encoded block count mismatch"));
                }
            }
            let scale = n / codec.s() as Real;
            let mut decoded_blocks = Vec::with_capacity(block_count);
            for blk in 0..block_count {
                let mut mean_enc = vec![0.0; codec.h()];
                for u in updates {
                    if u.blocks[blk].len() != codec.h() {
                        return Err(EgaError::protocol("encoded block length mismatch"));
                    }
                    for (acc, &v) in mean_enc.iter_mut().zip(u.blocks[blk].iter()) {
                        *acc += v / m;
                    }
                }
                let quant_units = codec.decode(&mean_enc)?;
                decoded_blocks.push(quant_units.into_iter().map(|v| v * scale).collect());
            }
            join_blocks(&decoded_blocks, d)
        }
    };

    for (w, &g) in model.w.iter_mut().zip(aggregate.iter()) {
        *w += cfg.server_lr * g;
    }
    if model.w.iter().any(|v| !v.is_finite()) {
        return Err(EgaError::numeric("global model became non-finite"));
    }
    model.round += 1;
    Ok(aggregate)
}

/// Select `m` distinct client indices uniformly without replacement.
pub fn select_clients(num_clients: usize, m: usize, seed: u64, round: u32) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..num_clients).collect();
    let mut stream = rng::stream(seed, &[LBL_SELECT, round as u64]);
    indices.shuffle(&mut stream);
    indices.truncate(m);
    indices
}

/// Drive `rounds` federated rounds and collect per-round metrics.
pub fn run_federated(
    cfg: &FlConfig,
    task: &TaskModel,
    clients: &[ClientDataset],
    pipeline: &Pipeline,
    test_set: &ClientDataset,
) -> Result<(GlobalModel, Vec<MetricsRecord>)> {
    cfg.validate()?;
    pipeline.check_config(cfg)?;
    let m = cfg.clients_per_round as usize;
    if m > clients.len() {
        return Err(EgaError::config(format!(
            "clients_per_round {} exceeds client count {}",
            m,
            clients.len()
        )));
    }

    let d = task.param_dim();
    let mut model = GlobalModel::new(d);
    let mut metrics = Vec::with_capacity(cfg.rounds as usize);
    let mut prev_max_abs: Option<f64> = None;

    for round in 0..cfg.rounds {
        let n = compute_round_n(&cfg.n_policy, prev_max_abs);
        let selected = select_clients(clients.len(), m, cfg.seed, round);

        let lambdas: Vec<f64> = match cfg.algorithm {
            Algorithm::QFedAvg { q } => {
                let losses: Vec<f64> = selected
                    .iter()
                    .map(|&i| task.evaluate(&model.w, &clients[i]).0)
                    .collect();
                qfedavg_weights(&losses, q)
            }
            _ => vec![1.0; m],
        };

        let updates: Vec<EncodedUpdate> = selected
            .iter()
            .zip(lambdas.iter())
            .map(|(&i, &lambda)| {
                client_update(&model.w, &clients[i], task, cfg, pipeline, n, lambda, round)
            })
            .collect::<Result<Vec<_>>>()?;

        let aggregate = server_round(&mut model, &updates, pipeline, cfg)?;
        prev_max_abs = Some(aggregate.iter().fold(0.0f64, |acc, &v| acc.max(v.abs())));

        let (loss, accuracy) = task.evaluate(&model.w, test_set);
        let uplink = match pipeline {
            Pipeline::Plaintext => m as u64 * crate::analysis::plaintext_uplink_bytes(d),
            Pipeline::Ega { codec, .. } => {
                m as u64 * crate::analysis::ega_uplink_bytes(d, codec.b(), codec.h())
            }
        };
        metrics.push(MetricsRecord {
            round,
            algo: cfg.algorithm.label().to_string(),
            ega: pipeline.is_ega(),
            loss,
            accuracy,
            uplink_bytes: uplink,
            downlink_bytes: m as u64 * 4 * d as u64,
            n_used: n,
        });
    }

    Ok((model, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg(m: u32) -> FlConfig {
        FlConfig {
            rounds: 3,
            clients_per_round: m,
            local_epochs: 1,
            learning_rate: 0.05,
            server_lr: 1.0,
            algorithm: Algorithm::FedAvg,
            n_policy: NPolicy::Fixed { n0: 1.0 },
            seed: 42,
            ega_enabled: true,
        }
    }

    #[test]
    fn zero_rounds_leaves_model_unchanged() {
        let (clients, _) = make_quadratic_clients(4, 8, 6, 1);
        let task = TaskModel::SyntheticQuadratic { dim: 6 };
        let mut cfg = base_cfg(4);
        cfg.rounds = 0;
        let (model, metrics) =
            run_federated(&cfg, &task, &clients, &Pipeline::Plaintext, &clients[0]).unwrap();
        assert!(model.w.iter().all(|&v| v == 0.0));
        assert!(metrics.is_empty());
    }

    #[test]
    fn plaintext_opposite_updates_cancel() {
        let cfg = base_cfg(2);
        let mut model = GlobalModel::new(4);
        model.w = vec![1.0, 2.0, 3.0, 4.0];
        let before = model.w.clone();
        let v = vec![0.5, -0.25, 1.0, 0.0];
        let updates = vec![
            EncodedUpdate {
                round: 0,
                client_id: 0,
                weight: 1.0,
                blocks: vec![v.clone()],
                n_used: 1.0,
                original_dim: 4,
            },
            EncodedUpdate {
                round: 0,
                client_id: 1,
                weight: 1.0,
                blocks: vec![v.iter().map(|x| -x).collect()],
                n_used: 1.0,
                original_dim: 4,
            },
        ];
        server_round(&mut model, &updates, &Pipeline::Plaintext, &cfg).unwrap();
        assert_eq!(model.w, before);
        assert_eq!(model.round, 1);
    }

    #[test]
    fn server_round_rejects_wrong_count_round_and_n() {
        let cfg = base_cfg(2);
        let mut model = GlobalModel::new(2);
        let upd = |round, n| EncodedUpdate {
            round,
            client_id: 0,
            weight: 1.0,
            blocks: vec![vec![0.0, 0.0]],
            n_used: n,
            original_dim: 2,
        };
        // wrong count
        assert!(server_round(&mut model, &[upd(0, 1.0)], &Pipeline::Plaintext, &cfg).is_err());
        // mismatched round id
        assert!(
            server_round(&mut model, &[upd(1, 1.0), upd(1, 1.0)], &Pipeline::Plaintext, &cfg)
                .is_err()
        );
        // mismatched n
        assert!(
            server_round(&mut model, &[upd(0, 1.0), upd(0, 2.0)], &Pipeline::Plaintext, &cfg)
                .is_err()
        );
    }

    #[test]
    fn fedprox_zero_mu_matches_fedavg() {
        let (clients, _) = make_quadratic_clients(2, 6, 4, 3);
        let task = TaskModel::SyntheticQuadratic { dim: 4 };
        let cfg_avg = base_cfg(2);
        let mut cfg_prox = base_cfg(2);
        cfg_prox.algorithm = Algorithm::FedProx { mu: 0.0 };
        let w = vec![0.1, -0.2, 0.3, 0.0];
        let a = client_update(&w, &clients[0], &task, &cfg_avg, &Pipeline::Plaintext, 1.0, 1.0, 0)
            .unwrap();
        let b =
            client_update(&w, &clients[0], &task, &cfg_prox, &Pipeline::Plaintext, 1.0, 1.0, 0)
                .unwrap();
        assert_eq!(a.blocks, b.blocks);
    }

    #[test]
    fn single_point_single_epoch_matches_analytic_gradient() {
        let task = TaskModel::SyntheticQuadratic { dim: 3 };
        let client = ClientDataset {
            client_id: 0,
            features: vec![vec![1.0, 2.0, -1.0]],
            labels: vec![0.5],
        };
        let cfg = base_cfg(1);
        let w = vec![0.2, -0.1, 0.4];
        let upd =
            client_update(&w, &client, &task, &cfg, &Pipeline::Plaintext, 1.0, 1.0, 0).unwrap();
        // Δw = -η·(a·w - b)·a
        let residual = 1.0 * 0.2 + 2.0 * (-0.1) + (-1.0) * 0.4 - 0.5;
        let expected: Vec<f64> = client.features[0]
            .iter()
            .map(|&a| -cfg.learning_rate * residual * a)
            .collect();
        for (got, want) in upd.blocks[0].iter().zip(expected.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn encoded_block_count_follows_ceiling() {
        let task = TaskModel::LinearClassifier {
            features: 784,
            classes: 10,
        };
        let d = task.param_dim();
        assert_eq!(d, 7850);
        let client = ClientDataset {
            client_id: 0,
            features: vec![vec![0.0; 784]],
            labels: vec![0.0],
        };
        let cfg = base_cfg(1);
        let pipeline = Pipeline::Ega {
            codec: Codec::Identity { b: 256, s: 1 << 15 },
            quantizer: Quantizer::Stochastic,
        };
        let w = vec![0.0; d];
        let upd = client_update(&w, &client, &task, &cfg, &pipeline, 1.0, 1.0, 0).unwrap();
        assert_eq!(upd.blocks.len(), 31);
    }

    #[test]
    fn qfedavg_weight_rules() {
        assert_eq!(qfedavg_weights(&[3.0, 9.0], 0.0), vec![1.0, 1.0]);
        let w = qfedavg_weights(&[1.0, 3.0], 1.0);
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 1.5).abs() < 1e-12);
        assert_eq!(qfedavg_weights(&[0.0, 0.0], 2.0), vec![1.0, 1.0]);
        let w = qfedavg_weights(&[0.5, 2.0, 4.0], 1.5);
        assert!(w[0] < w[1] && w[1] < w[2]);
    }

    #[test]
    fn round_n_policies() {
        assert_eq!(compute_round_n(&NPolicy::Fixed { n0: 1.0 }, Some(17.0)), 1.0);
        let adaptive = NPolicy::Adaptive {
            n0: 2.0,
            safety: 2.0,
            n_min: 0.01,
        };
        assert_eq!(compute_round_n(&adaptive, None), 2.0);
        assert!((compute_round_n(&adaptive, Some(0.05)) - 0.1).abs() < 1e-15);
        assert_eq!(compute_round_n(&adaptive, Some(1e-9)), 0.01);
    }

    #[test]
    fn identity_passthrough_matches_plaintext_exactly() {
        let (clients, _) = make_quadratic_clients(4, 8, 6, 9);
        let task = TaskModel::SyntheticQuadratic { dim: 6 };
        let mut cfg = base_cfg(4);
        cfg.rounds = 5;
        let stub = Pipeline::Ega {
            codec: Codec::Identity { b: 4, s: 8 },
            quantizer: Quantizer::Passthrough,
        };
        let (plain, _) =
            run_federated(&cfg, &task, &clients, &Pipeline::Plaintext, &clients[0]).unwrap();
        let (encoded, _) = run_federated(&cfg, &task, &clients, &stub, &clients[0]).unwrap();
        for (a, b) in plain.w.iter().zip(encoded.w.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn heterogeneous_lambda_weighted_mean_contract() {
        let cfg = base_cfg(2);
        let mut model = GlobalModel::new(2);
        let updates = vec![
            EncodedUpdate {
                round: 0,
                client_id: 0,
                weight: 0.5,
                blocks: vec![vec![0.5 * 1.0, 0.5 * 2.0]], // λ·Δw applied client-side
                n_used: 1.0,
                original_dim: 2,
            },
            EncodedUpdate {
                round: 0,
                client_id: 1,
                weight: 1.5,
                blocks: vec![vec![1.5 * -1.0, 1.5 * 4.0]],
                n_used: 1.0,
                original_dim: 2,
            },
        ];
        server_round(&mut model, &updates, &Pipeline::Plaintext, &cfg).unwrap();
        // (1/2)·(0.5·[1,2] + 1.5·[-1,4]) = [-0.5, 3.5]
        assert!((model.w[0] + 0.5).abs() < 1e-15);
        assert!((model.w[1] - 3.5).abs() < 1e-15);
    }
}
