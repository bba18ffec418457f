//! Trainable per-sample representations and test-time latent inference.
//!
//! During decoder training every sample owns one row of a latent table;
//! the rows are updated by SGD with per-row momentum, one update per sample
//! per epoch. For unseen samples the same minimization runs with the
//! decoder frozen: initialize a code, descend the per-sample reconstruction
//! loss, return the codes and their final losses.

use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::network::Network;
use crate::optim::sgd_step;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// The N x m matrix of trainable representations plus per-row momentum
/// buffers. Row `i` always belongs to sample id `sample_ids[i]`, no matter
/// how epochs are shuffled.
#[derive(Clone, Debug)]
pub struct LatentTable {
    z: Tensor,
    velocity: Tensor,
    sample_ids: Vec<u64>,
    lr: f64,
    momentum: f64,
}

/// Settings for test-time latent inference.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct InferConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub init_scale: f64,
    /// Independent restarts; the best final loss wins per sample.
    pub restarts: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig { steps: 500, lr: 0.01, momentum: 0.9, init_scale: 0.1, restarts: 1 }
    }
}

/// Fresh table with `Z ~ normal(0, scale)` and zeroed momentum.
pub fn init_latents(n: usize, m: usize, rng: &mut Rng, scale: f64) -> Result<LatentTable> {
    if n == 0 || m == 0 {
        return Err(Error::invalid("latent table needs n >= 1 and m >= 1"));
    }
    if scale < 0.0 {
        return Err(Error::invalid(format!("init scale must be >= 0, got {scale}")));
    }
    let z = rng.sample_normal(&[n, m], 0.0, scale);
    Ok(LatentTable {
        z,
        velocity: Tensor::zeros(&[n, m]),
        sample_ids: (0..n as u64).collect(),
        lr: 0.01,
        momentum: 0.9,
    })
}

impl LatentTable {
    pub fn from_parts(z: Tensor, velocity: Tensor, sample_ids: Vec<u64>, lr: f64, momentum: f64) -> Result<Self> {
        if z.shape() != velocity.shape() {
            return Err(Error::shape("latent and momentum shapes differ".to_string()));
        }
        if z.shape()[0] != sample_ids.len() {
            return Err(Error::shape("sample id count does not match rows".to_string()));
        }
        Ok(LatentTable { z, velocity, sample_ids, lr, momentum })
    }

    pub fn len(&self) -> usize {
        self.z.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.z.shape()[1]
    }

    pub fn z(&self) -> &Tensor {
        &self.z
    }

    pub fn velocity(&self) -> &Tensor {
        &self.velocity
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn set_hyper(&mut self, lr: f64, momentum: f64) {
        self.lr = lr;
        self.momentum = momentum;
    }

    /// Codes for a batch of rows, in the given order.
    pub fn gather(&self, rows: &[usize]) -> Tensor {
        self.z.select_rows(rows)
    }

    /// One SGD-with-momentum update applied to exactly the given rows.
    /// Rows must be unique within a call (per-row momentum would otherwise
    /// be applied twice in one logical step).
    pub fn latent_step(&mut self, rows: &[usize], grads: &Tensor) -> Result<()> {
        let m = self.dim();
        if grads.shape() != [rows.len(), m] {
            return Err(Error::shape(format!(
                "latent grads shape {:?}, expected [{}, {m}]",
                grads.shape(),
                rows.len()
            )));
        }
        let n = self.len();
        let mut seen = vec![false; n];
        for &r in rows {
            if r >= n {
                return Err(Error::invalid(format!("row {r} out of bounds for table of {n}")));
            }
            if seen[r] {
                return Err(Error::contract(format!("duplicate row {r} in one latent batch")));
            }
            seen[r] = true;
        }
        for (k, &r) in rows.iter().enumerate() {
            let grow = &grads.data()[k * m..(k + 1) * m];
            sgd_step(
                &mut self.z.data_mut()[r * m..(r + 1) * m],
                grow,
                &mut self.velocity.data_mut()[r * m..(r + 1) * m],
                self.lr,
                self.momentum,
                0.0, // representations are never weight-decayed
            );
        }
        Ok(())
    }
}

/// Recover representations for `x` by gradient descent against a frozen
/// decoder. Returns the codes (one row per sample) and each sample's final
/// per-sample loss. The decoder is bit-unchanged by construction; samples
/// are independent, so the batch is processed jointly with per-sample
/// normalized gradients.
pub fn infer_latents(
    decoder: &Network,
    x: &Tensor,
    loss: LossKind,
    cfg: &InferConfig,
    rng: &mut Rng,
) -> Result<(Tensor, Vec<f64>)> {
    let n = x.shape()[0];
    let m = decoder.input_len();
    if cfg.restarts == 0 {
        return Err(Error::invalid("restarts must be >= 1"));
    }
    let mut best_z: Option<Tensor> = None;
    let mut best_losses = vec![f64::INFINITY; n];

    for _restart in 0..cfg.restarts {
        let mut z = if cfg.init_scale == 0.0 {
            Tensor::zeros(&[n, m])
        } else {
            rng.sample_normal(&[n, m], 0.0, cfg.init_scale)
        };
        let mut velocity = Tensor::zeros(&[n, m]);
        let mut losses = per_sample_eval(decoder, &z, x, loss)?.0;
        for step in 0..cfg.steps {
            let zin = z.reshaped(&shaped(n, decoder.input_shape()))?;
            let (y, cache) = decoder.forward(&zin)?;
            let (step_losses, grad) = loss.per_sample(&y, x)?;
            if step_losses.iter().any(|l| !l.is_finite()) {
                return Err(Error::Divergence {
                    step,
                    context: "latent inference produced a non-finite loss".to_string(),
                });
            }
            losses = step_losses;
            let dz = decoder.backward_input_only(&cache, &grad)?.reshaped(&[n, m])?;
            for r in 0..n {
                sgd_step(
                    &mut z.data_mut()[r * m..(r + 1) * m],
                    &dz.data()[r * m..(r + 1) * m],
                    &mut velocity.data_mut()[r * m..(r + 1) * m],
                    cfg.lr,
                    cfg.momentum,
                    0.0,
                );
            }
        }
        if cfg.steps > 0 {
            losses = per_sample_eval(decoder, &z, x, loss)?.0;
        }
        match &mut best_z {
            None => {
                best_z = Some(z);
                best_losses = losses;
            }
            Some(bz) => {
                for r in 0..n {
                    if losses[r] < best_losses[r] {
                        best_losses[r] = losses[r];
                        bz.row_mut(r).copy_from_slice(&z.data()[r * m..(r + 1) * m]);
                    }
                }
            }
        }
    }
    Ok((best_z.expect("at least one restart"), best_losses))
}

fn per_sample_eval(decoder: &Network, z: &Tensor, x: &Tensor, loss: LossKind) -> Result<(Vec<f64>, Tensor)> {
    let n = z.shape()[0];
    let zin = z.reshaped(&shaped(n, decoder.input_shape()))?;
    let (y, _) = decoder.forward(&zin)?;
    loss.per_sample(&y, x)
}

fn shaped(batch: usize, per_sample: &[usize]) -> Vec<usize> {
    let mut s = vec![batch];
    s.extend_from_slice(per_sample);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::LayerSpec;

    #[test]
    fn zero_scale_gives_zero_table() {
        let mut rng = Rng::new(1);
        let t = init_latents(4, 3, &mut rng, 0.0).unwrap();
        assert!(t.z().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_latents(4, 2, &mut Rng::new(9), 0.1).unwrap();
        let b = init_latents(4, 2, &mut Rng::new(9), 0.1).unwrap();
        assert_eq!(a.z(), b.z());
    }

    #[test]
    fn init_scale_matches_sample_sd() {
        let mut rng = Rng::new(123);
        let t = init_latents(1000, 100, &mut rng, 0.1).unwrap();
        let n = t.z().len() as f64;
        let mean = t.z().data().iter().sum::<f64>() / n;
        let var = t.z().data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        assert!((sd - 0.1).abs() / 0.1 < 0.05, "sample sd {sd}");
    }

    #[test]
    fn empty_batch_is_a_no_op() {
        let mut rng = Rng::new(2);
        let mut t = init_latents(3, 2, &mut rng, 0.1).unwrap();
        let before = t.z().clone();
        t.latent_step(&[], &Tensor::zeros(&[0, 2])).unwrap();
        assert_eq!(t.z(), &before);
    }

    #[test]
    fn single_row_plain_sgd() {
        let mut rng = Rng::new(3);
        let mut t = init_latents(2, 2, &mut rng, 0.0).unwrap();
        t.set_hyper(0.5, 0.0);
        let g = Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap();
        t.latent_step(&[1], &g).unwrap();
        assert_eq!(t.z().row(1), &[-0.5, 1.0]);
    }

    #[test]
    fn rows_outside_batch_are_untouched_bitwise() {
        let mut rng = Rng::new(4);
        let mut t = init_latents(5, 3, &mut rng, 0.1).unwrap();
        let before = t.z().clone();
        let g = Tensor::from_rows(&[vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0]]).unwrap();
        t.latent_step(&[1, 3], &g).unwrap();
        for r in [0usize, 2, 4] {
            assert_eq!(t.z().row(r), before.row(r), "row {r} changed");
        }
    }

    #[test]
    fn duplicate_rows_are_rejected() {
        let mut rng = Rng::new(5);
        let mut t = init_latents(4, 1, &mut rng, 0.1).unwrap();
        let g = Tensor::zeros(&[2, 1]);
        assert!(matches!(t.latent_step(&[2, 2], &g), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_steps_returns_the_initialization() {
        let mut rng = Rng::new(6);
        let dec = Network::new(
            &[2],
            vec![LayerSpec::Dense { in_features: 2, out_features: 4, bias: false }],
            &mut rng,
        )
        .unwrap();
        let x = rng.sample_normal(&[3, 4], 0.0, 1.0);
        let cfg = InferConfig { steps: 0, ..Default::default() };
        let mut r1 = Rng::new(42);
        let (z, _) = infer_latents(&dec, &x, LossKind::Mse, &cfg, &mut r1).unwrap();
        let mut r2 = Rng::new(42);
        let init = r2.sample_normal(&[3, 2], 0.0, cfg.init_scale);
        assert_eq!(z, init);
    }

    #[test]
    fn linear_decoder_recovers_codes_in_output_space() {
        // x = W z0 for a full-column-rank W; inference must reproduce W z
        // even though z itself is only identified up to the null space.
        let mut rng = Rng::new(7);
        let dec = Network::new(
            &[3],
            vec![LayerSpec::Dense { in_features: 3, out_features: 8, bias: false }],
            &mut rng,
        )
        .unwrap();
        let z0 = rng.sample_normal(&[5, 3], 0.0, 1.0);
        let (x, _) = dec.forward(&z0).unwrap();
        let cfg = InferConfig { steps: 1500, lr: 0.8, momentum: 0.9, init_scale: 0.1, restarts: 1 };
        let (zhat, losses) = infer_latents(&dec, &x, LossKind::Mse, &cfg, &mut rng).unwrap();
        let (xhat, _) = dec.forward(&zhat).unwrap();
        let rel = xhat.sub(&x).unwrap().frob_norm() / x.frob_norm();
        assert!(rel < 1e-6, "output-space recovery error {rel}; losses {losses:?}");
    }

    #[test]
    fn loss_is_non_increasing_for_stable_step_size() {
        // For a linear decoder and mse, plain gradient descent with
        // lr < 2 / L is a descent method (L from the per-sample quadratic).
        let mut rng = Rng::new(8);
        let dec = Network::new(
            &[2],
            vec![LayerSpec::Dense { in_features: 2, out_features: 6, bias: false }],
            &mut rng,
        )
        .unwrap();
        let x = rng.sample_normal(&[4, 6], 0.0, 1.0);
        // Per-sample loss Hessian is (2/n) W^T W; bound lr by 2 / lambda_max
        // via the Frobenius norm upper bound.
        let w = dec.layers()[0].weights().unwrap();
        let lmax_upper = 2.0 / 6.0 * w.frob_norm().powi(2);
        let lr = 1.9 / lmax_upper;
        let mut z = rng.sample_normal(&[4, 2], 0.0, 0.1);
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            let (y, cache) = dec.forward(&z).unwrap();
            let (losses, grad) = LossKind::Mse.per_sample(&y, &x).unwrap();
            let total: f64 = losses.iter().sum();
            assert!(total <= prev + 1e-12, "loss increased: {prev} -> {total}");
            prev = total;
            let dz = dec.backward_input_only(&cache, &grad).unwrap();
            z.add_scaled(&dz, -lr);
        }
    }

    #[test]
    fn inference_never_mutates_the_decoder() {
        let mut rng = Rng::new(10);
        let dec = Network::new(
            &[2],
            vec![
                LayerSpec::Dense { in_features: 2, out_features: 5, bias: true },
                LayerSpec::Relu,
                LayerSpec::Dense { in_features: 5, out_features: 4, bias: true },
            ],
            &mut rng,
        )
        .unwrap();
        let fp = dec.fingerprint();
        let x = rng.sample_uniform(&[3, 4], 0.0, 1.0);
        let cfg = InferConfig { steps: 50, ..Default::default() };
        infer_latents(&dec, &x, LossKind::Mse, &cfg, &mut rng).unwrap();
        assert_eq!(dec.fingerprint(), fp);
    }
}
