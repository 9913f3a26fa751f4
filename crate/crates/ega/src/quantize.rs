//! Stochastic quantization into the integer domain `[-s, s]^d` and the
//! matching `n/s` dequantization.
//!
//! Each coordinate `x_k` (clamped to `[-n, n]`) maps to `floor(x_k·s/n)` with
//! probability `1 - frac` and to `floor(x_k·s/n) + 1` otherwise, where `frac`
//! is the fractional part of `x_k·s/n`. The scheme is unbiased:
//! `E[(n/s)·l_k] = x_k`.

use crate::error::{EgaError, Result};
use crate::numkernel::Scalar;
use crate::rng::Stream;
use rand::Rng;

/// Quantization parameters: level `s ≥ 1` and normalization `n > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantConfig<F> {
    pub s: u32,
    pub n: F,
}

impl<F: Scalar> QuantConfig<F> {
    pub fn new(s: u32, n: F) -> Result<Self> {
        if s < 1 {
            return Err(EgaError::config("quantization level s must be >= 1"));
        }
        if !(n > F::zero()) || !n.is_finite() {
            return Err(EgaError::config("normalization n must be positive and finite"));
        }
        Ok(QuantConfig { s, n })
    }
}

/// Integer vector in `[-s, s]^d` plus the scale needed to dequantize.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedVector<F> {
    pub values: Vec<i32>,
    pub config: QuantConfig<F>,
}

impl<F: Scalar> QuantizedVector<F> {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Stochastically quantize `x`. Elements with `|x_k| > n` are clamped to `±n`
/// first, so outputs always lie in `[-s, s]`.
pub fn quantize<F: Scalar>(
    x: &[F],
    cfg: QuantConfig<F>,
    rng: &mut Stream,
) -> Result<QuantizedVector<F>> {
    QuantConfig::new(cfg.s, cfg.n)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EgaError::numeric("non-finite input to quantize"));
    }
    let s = F::from(cfg.s).unwrap();
    let s_i = cfg.s as i32;
    let values = x
        .iter()
        .map(|&v| {
            let clamped = if v > cfg.n {
                cfg.n
            } else if v < -cfg.n {
                -cfg.n
            } else {
                v
            };
            let scaled = clamped / cfg.n * s;
            let floor = scaled.floor();
            let frac = (scaled - floor).to_f64().unwrap();
            let mut level = floor.to_f64().unwrap() as i32;
            if frac > 0.0 && rng.gen::<f64>() < frac {
                level += 1;
            }
            level.clamp(-s_i, s_i)
        })
        .collect();
    Ok(QuantizedVector { values, config: cfg })
}

/// Elementwise `(n/s)·l`.
pub fn dequantize<F: Scalar>(l: &QuantizedVector<F>) -> Vec<F> {
    let step = l.config.n / F::from(l.config.s).unwrap();
    l.values
        .iter()
        .map(|&v| step * F::from(v).unwrap())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_vector_quantizes_to_zero() {
        let cfg = QuantConfig::new(4, 1.0).unwrap();
        let mut stream = rng::stream(1, &[0]);
        let q = quantize(&[0.0; 16], cfg, &mut stream).unwrap();
        assert!(q.values.iter().all(|&v| v == 0));
    }

    #[test]
    fn boundary_value_is_deterministic() {
        // x = n, s = 4: scaled value is exactly 4, frac = 0.
        let cfg = QuantConfig::new(4, 2.0).unwrap();
        for seed in 0..20 {
            let mut stream = rng::stream(seed, &[0]);
            let q = quantize(&[2.0, -2.0], cfg, &mut stream).unwrap();
            assert_eq!(q.values, vec![4, -4]);
        }
    }

    #[test]
    fn two_point_distribution_matches_definition() {
        // x = 0.3, n = 1, s = 4: scaled = 1.2 → l = 1 w.p. 0.8, l = 2 w.p. 0.2.
        let cfg = QuantConfig::new(4, 1.0).unwrap();
        let mut stream = rng::stream(42, &[0]);
        let draws = 100_000;
        let mut counts = [0u32; 2];
        let mut mean = 0.0;
        for _ in 0..draws {
            let q = quantize(&[0.3], cfg, &mut stream).unwrap();
            match q.values[0] {
                1 => counts[0] += 1,
                2 => counts[1] += 1,
                other => panic!("unexpected level {other}"),
            }
            mean += dequantize(&q)[0];
        }
        mean /= draws as f64;
        let p2 = counts[1] as f64 / draws as f64;
        assert!((p2 - 0.2).abs() < 0.005, "p(l=2) = {p2}");
        // Monte-Carlo mean within 3 standard errors of 0.3.
        // Var of (n/s)·l = (1/16)·0.2·0.8 = 0.01 → se = 0.1/sqrt(draws).
        let se = 0.1 / (draws as f64).sqrt();
        assert!((mean - 0.3).abs() < 3.0 * se, "mean = {mean}");
    }

    #[test]
    fn negative_values_stay_unbiased() {
        let cfg = QuantConfig::new(8, 1.0).unwrap();
        let mut stream = rng::stream(9, &[0]);
        let x = -0.37;
        let draws = 100_000;
        let mut mean = 0.0;
        for _ in 0..draws {
            let q = quantize(&[x], cfg, &mut stream).unwrap();
            assert!(q.values[0] >= -8 && q.values[0] <= 8);
            mean += dequantize(&q)[0];
        }
        mean /= draws as f64;
        let se = (1.0 / 8.0) * 0.5 / (draws as f64).sqrt();
        assert!((mean - x).abs() < 3.0 * se, "mean = {mean}");
    }

    #[test]
    fn out_of_range_inputs_clamp() {
        let cfg = QuantConfig::new(4, 1.0).unwrap();
        let mut stream = rng::stream(3, &[0]);
        let q = quantize(&[5.0, -7.0], cfg, &mut stream).unwrap();
        assert_eq!(q.values, vec![4, -4]);
    }

    #[test]
    fn dequantize_scales_by_n_over_s() {
        let cfg = QuantConfig::new(4, 2.0).unwrap();
        let q = QuantizedVector {
            values: vec![4, 0, -2],
            config: cfg,
        };
        assert_eq!(dequantize(&q), vec![2.0, 0.0, -1.0]);
    }

    #[test]
    fn identical_seed_identical_output() {
        let cfg = QuantConfig::new(16, 0.5).unwrap();
        let x: Vec<f64> = (0..64).map(|i| (i * 37 % 101) as f64 / 101.0 - 0.5).collect();
        let a = quantize(&x, cfg, &mut rng::stream(5, &[1])).unwrap();
        let b = quantize(&x, cfg, &mut rng::stream(5, &[1])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(QuantConfig::new(0, 1.0).is_err());
        assert!(QuantConfig::new(4, 0.0).is_err());
        assert!(QuantConfig::new(4, -1.0).is_err());
        let cfg = QuantConfig::new(4, 1.0).unwrap();
        let mut stream = rng::stream(0, &[0]);
        assert!(quantize(&[f64::INFINITY], cfg, &mut stream).is_err());
    }

    #[test]
    fn f32_path_matches_range_contract() {
        let cfg = QuantConfig::new(8, 1.0f32).unwrap();
        let mut stream = rng::stream(7, &[2]);
        let x: Vec<f32> = (0..256).map(|i| (i as f32 / 128.0) - 1.0).collect();
        let q = quantize(&x, cfg, &mut stream).unwrap();
        assert!(q.values.iter().all(|&v| (-8..=8).contains(&v)));
    }
}
