//! Offline codec training: synthetic dataset generation over the quantized
//! domain, end-to-end training of the encoder/decoder pair against the
//! mean-to-mean target, held-out evaluation with best-model selection, and
//! hyperparameter sweeps.

use crate::codec::CodecModel;
use crate::error::{EgaError, Result};
use crate::numkernel::{adam_step, AdamState, DenseMatrix, ResidualMlp};
use crate::rng::{self, Stream};
use crate::Real;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub b: usize,
    pub h: usize,
    pub s: u32,
    pub m: u32,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_train_groups")]
    pub train_groups: usize,
    #[serde(default = "default_test_groups")]
    pub test_groups: usize,
    #[serde(default)]
    pub seed: u64,
    /// Hidden width; defaults to 2·max(b, h).
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
}

fn default_epochs() -> usize {
    100
}
fn default_batch_size() -> usize {
    64
}
fn default_train_groups() -> usize {
    10_000
}
fn default_test_groups() -> usize {
    5_000
}
fn default_lr() -> f64 {
    1e-3
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b == 0 || self.h == 0 || self.s == 0 || self.epochs == 0 {
            return Err(EgaError::config("b, h, s and epochs must be positive"));
        }
        if self.m < 2 {
            // m = 1 is allowed for diagnostics but the aggregation task needs
            // at least one vector; reject only zero.
            if self.m == 0 {
                return Err(EgaError::config("m must be >= 1"));
            }
        }
        if self.batch_size == 0 || self.train_groups == 0 || self.test_groups == 0 {
            return Err(EgaError::config("batch_size and group counts must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(EgaError::config("learning rate must be positive"));
        }
        Ok(())
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden.unwrap_or(2 * self.b.max(self.h))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainReport {
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    pub best_epoch: usize,
    pub sigma_hat: f64,
    pub wall_time_secs: f64,
}

/// One uniform draw from `[-s, s]`. A single `f64` draw per element keeps
/// datasets for different `s` coupled under a shared seed.
fn draw_level(s: u32, rng: &mut Stream) -> i32 {
    let u: f64 = rng.gen();
    ((u * (2 * s + 1) as f64) as i64 as i32 - s as i32).clamp(-(s as i32), s as i32)
}

/// Generate `count` groups of `m` vectors from the quantized domain.
pub fn generate_dataset(
    count: usize,
    b: usize,
    s: u32,
    m: u32,
    rng: &mut Stream,
) -> Vec<Vec<Vec<i32>>> {
    (0..count)
        .map(|_| {
            (0..m)
                .map(|_| (0..b).map(|_| draw_level(s, rng)).collect())
                .collect()
        })
        .collect()
}

/// Flat normalized dataset: `count·m·b` values of `l/s`, group-major. Uses
/// the same element draws as `generate_dataset` under the same stream.
fn generate_normalized(count: usize, b: usize, s: u32, m: u32, rng: &mut Stream) -> Vec<Real> {
    let mut out = Vec::with_capacity(count * m as usize * b);
    for _ in 0..count * m as usize * b {
        out.push(draw_level(s, rng) as Real / s as Real);
    }
    out
}

struct EvalOutcome {
    loss: f64,
    /// Mean squared per-coordinate decode error in normalized units.
    mse_norm: f64,
}

/// Forward-only evaluation of the mean-to-mean objective over a dataset.
fn evaluate(
    encoder: &ResidualMlp<Real>,
    decoder: &ResidualMlp<Real>,
    data: &[Real],
    groups: usize,
    b: usize,
    h: usize,
    m: usize,
    chunk_groups: usize,
) -> Result<EvalOutcome> {
    let mut total_sq = 0.0;
    let mut count = 0usize;
    for start in (0..groups).step_by(chunk_groups) {
        let g = chunk_groups.min(groups - start);
        let slice = &data[start * m * b..(start + g) * m * b];
        let inputs = DenseMatrix::from_vec(g * m, b, slice.to_vec())?;
        let enc = encoder.forward_batch(&inputs)?;
        let encoded = enc.outputs.last().unwrap();
        let mut mean_enc = DenseMatrix::zeros(g, h);
        for row in 0..g * m {
            let group = row / m;
            for (acc, &v) in mean_enc.row_mut(group).iter_mut().zip(encoded.row(row)) {
                *acc += v / m as Real;
            }
        }
        let dec = decoder.forward_batch(&mean_enc)?;
        let output = dec.outputs.last().unwrap();
        for group in 0..g {
            for k in 0..b {
                let mut target = 0.0;
                for j in 0..m {
                    target += slice[(group * m + j) * b + k] / m as Real;
                }
                let diff = output.get(group, k) - target;
                total_sq += diff * diff;
                count += 1;
            }
        }
    }
    let mse = total_sq / count as f64;
    Ok(EvalOutcome {
        loss: mse,
        mse_norm: mse,
    })
}

/// Train an encoder/decoder pair end-to-end on synthetic quantized groups.
pub fn train_codec(cfg: &PretrainConfig) -> Result<(CodecModel, PretrainReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let b = cfg.b;
    let h = cfg.h;
    let m = cfg.m as usize;
    let hidden = cfg.hidden_width();

    let mut init_stream = rng::stream(cfg.seed, &[0x696e6974]);
    let mut encoder = ResidualMlp::<Real>::codec_net(b, hidden, h, &mut init_stream);
    let mut decoder = ResidualMlp::<Real>::codec_net(h, hidden, b, &mut init_stream);

    let mut data_stream = rng::stream(cfg.seed, &[0x64617461]);
    let train = generate_normalized(cfg.train_groups, b, cfg.s, cfg.m, &mut data_stream);
    let test = generate_normalized(cfg.test_groups, b, cfg.s, cfg.m, &mut data_stream);

    let enc_params = encoder.param_count();
    let mut params = encoder.flatten_params();
    params.extend(decoder.flatten_params());
    let mut adam = AdamState::new(params.len(), cfg.learning_rate);

    let mut order: Vec<usize> = (0..cfg.train_groups).collect();
    let mut train_losses = Vec::with_capacity(cfg.epochs);
    let mut test_losses = Vec::with_capacity(cfg.epochs);
    let mut best_epoch = 0usize;
    let mut best_loss = f64::INFINITY;
    let mut best_params = params.clone();

    for epoch in 0..cfg.epochs {
        let mut shuffle_stream = rng::stream(cfg.seed, &[0x73687566, epoch as u64]);
        order.shuffle(&mut shuffle_stream);

        let mut epoch_sq = 0.0;
        let mut epoch_count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let g = batch.len();
            // Stack the batch: g·m encoder inputs, one target row per group.
            let mut inputs = DenseMatrix::zeros(g * m, b);
            let mut targets = DenseMatrix::<Real>::zeros(g, b);
            for (slot, &group) in batch.iter().enumerate() {
                for j in 0..m {
                    let src = &train[(group * m + j) * b..(group * m + j + 1) * b];
                    inputs.row_mut(slot * m + j).copy_from_slice(src);
                    for (t, &v) in targets.row_mut(slot).iter_mut().zip(src.iter()) {
                        *t += v / m as Real;
                    }
                }
            }

            let enc_cache = encoder.forward_batch(&inputs)?;
            let encoded = enc_cache.outputs.last().unwrap();
            let mut mean_enc = DenseMatrix::zeros(g, h);
            for row in 0..g * m {
                let group = row / m;
                for (acc, &v) in mean_enc.row_mut(group).iter_mut().zip(encoded.row(row)) {
                    *acc += v / m as Real;
                }
            }
            let dec_cache = decoder.forward_batch(&mean_enc)?;
            let output = dec_cache.outputs.last().unwrap();

            let scale = 1.0 / (g * b) as Real;
            let mut d_out = DenseMatrix::zeros(g, b);
            for group in 0..g {
                for k in 0..b {
                    let diff = output.get(group, k) - targets.get(group, k);
                    epoch_sq += diff * diff;
                    d_out.set(group, k, 2.0 * diff * scale);
                }
            }
            epoch_count += g * b;

            let (dec_grads, d_mean_enc) = decoder.backward_batch(&dec_cache, d_out);
            // Each of the m encodings contributes 1/m to the group mean.
            let mut d_encoded = DenseMatrix::zeros(g * m, h);
            for row in 0..g * m {
                let group = row / m;
                for (d, &v) in d_encoded.row_mut(row).iter_mut().zip(d_mean_enc.row(group)) {
                    *d = v / m as Real;
                }
            }
            let (enc_grads, _) = encoder.backward_batch(&enc_cache, d_encoded);

            let mut grads = enc_grads.flatten();
            grads.extend(dec_grads.flatten());
            adam_step(&mut params, &grads, &mut adam)?;
            encoder.set_params(&params[..enc_params]);
            decoder.set_params(&params[enc_params..]);
        }

        let train_loss = epoch_sq / epoch_count as f64;
        if !train_loss.is_finite() {
            return Err(EgaError::numeric(format!(
                "training diverged at epoch {epoch}: loss = {train_loss}"
            )));
        }
        let eval = evaluate(&encoder, &decoder, &test, cfg.test_groups, b, h, m, 256)?;
        train_losses.push(train_loss);
        test_losses.push(eval.loss);
        if eval.loss < best_loss {
            best_loss = eval.loss;
            best_epoch = epoch;
            best_params.copy_from_slice(&params);
        }
    }

    encoder.set_params(&best_params[..enc_params]);
    decoder.set_params(&best_params[enc_params..]);
    let final_eval = evaluate(&encoder, &decoder, &test, cfg.test_groups, b, h, m, 256)?;
    let sigma_hat = final_eval.mse_norm.sqrt() * cfg.s as f64;

    let model = CodecModel {
        encoder,
        decoder,
        b,
        h,
        s: cfg.s,
        m_train: cfg.m,
        sigma_hat,
    };
    model.validate()?;
    let report = PretrainReport {
        train_loss: train_losses,
        test_loss: test_losses,
        best_epoch,
        sigma_hat,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// One sweep cell result. `sigma_hat` is in quantized-domain units; divide by
/// `s` for the scale-free error that the effective federated noise follows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: u32,
    pub s: u32,
    pub b: usize,
    pub h: usize,
    pub seed: u64,
    pub sigma_hat: f64,
    pub best_test_loss: f64,
    pub epochs: usize,
}

/// Train one codec per config cell and collect the test errors.
pub fn sweep(cells: &[PretrainConfig]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(cells.len());
    for cfg in cells {
        let (model, report) = train_codec(cfg)?;
        rows.push(SweepRow {
            m: cfg.m,
            s: cfg.s,
            b: cfg.b,
            h: cfg.h,
            seed: cfg.seed,
            sigma_hat: model.sigma_hat,
            best_test_loss: report.test_loss[report.best_epoch],
            epochs: cfg.epochs,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["m", "s", "b", "h", "seed", "sigma_hat", "best_test_loss", "epochs"])
        .map_err(|e| EgaError::config(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.m.to_string(),
            r.s.to_string(),
            r.b.to_string(),
            r.h.to_string(),
            r.seed.to_string(),
            format!("{:.9e}", r.sigma_hat),
            format!("{:.9e}", r.best_test_loss),
            r.epochs.to_string(),
        ])
        .map_err(|e| EgaError::config(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
