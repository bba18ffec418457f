//! Simulated regulatory expression data.
//!
//! A set of m latent regulator levels drives n observed expression values
//! through a sparse signed bipartite graph:
//!
//! `x_i = relu( sum_j a_ij * w_ij * z_j + eps_i )`
//!
//! with `z ~ Gamma(shape, scale)`, `A ~ Bernoulli(connectivity)` (resampled
//! so no row or column is all-zero), `W ~ Uniform(lo, hi)` and Gaussian
//! noise `eps`. Train and test splits share `(A, W)` and draw independent
//! `z` and noise, so learned representations can be scored per dimension
//! against the generating `z`.

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{Distribution, Rng};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    /// Observed dimension n.
    pub n: usize,
    /// Latent dimension m (< n).
    pub m: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Fraction of nonzero entries in the adjacency, in (0, 1].
    pub connectivity: f64,
    pub noise_sd: f64,
    pub gamma_shape: f64,
    pub gamma_scale: f64,
    pub weight_low: f64,
    pub weight_high: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 1000,
            m: 100,
            n_train: 100,
            n_test: 100,
            connectivity: 0.1,
            noise_sd: 0.2,
            gamma_shape: 2.0,
            gamma_scale: 1.0,
            weight_low: -1.0,
            weight_high: 1.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.m >= self.n {
            problems.push(format!("m ({}) must be < n ({})", self.m, self.n));
        }
        if self.m == 0 || self.n == 0 {
            problems.push("n and m must be >= 1".to_string());
        }
        if !(self.connectivity > 0.0 && self.connectivity <= 1.0) {
            problems.push(format!("connectivity {} outside (0, 1]", self.connectivity));
        }
        if self.noise_sd < 0.0 {
            problems.push(format!("noise_sd {} is negative", self.noise_sd));
        }
        if self.gamma_shape <= 0.0 || self.gamma_scale <= 0.0 {
            problems.push("gamma parameters must be positive".to_string());
        }
        if self.weight_low > self.weight_high {
            problems.push("weight range is inverted".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// One split of simulated data plus the generating graph.
#[derive(Clone, Debug, PartialEq)]
pub struct SimDataset {
    /// Expressions, `[N, n]`, elementwise nonnegative.
    pub x: Tensor,
    /// Generating regulator levels, `[N, m]`.
    pub z_true: Tensor,
    /// Binary adjacency, `[n, m]`.
    pub adjacency: Tensor,
    /// Signed interaction strengths, `[n, m]`.
    pub weights: Tensor,
}

impl SimDataset {
    /// View as a generic dataset with ids starting at `first_id`.
    pub fn to_dataset(&self, first_id: u64) -> Dataset {
        let n = self.x.shape()[0] as u64;
        Dataset {
            x: self.x.clone(),
            labels: None,
            z_true: Some(self.z_true.clone()),
            sample_ids: (first_id..first_id + n).collect(),
            unit_range: false,
        }
    }
}

/// Draw the sparse graph: adjacency with no all-zero row or column, and
/// uniform signed weights. Offending rows/columns are redrawn individually
/// (bounded attempts) so the expected connectivity is preserved.
pub fn sample_graph(cfg: &SimConfig, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
    cfg.validate()?;
    let (n, m) = (cfg.n, cfg.m);
    let mut a = rng.sample(Distribution::Bernoulli { p: cfg.connectivity }, &[n, m])?;
    const ATTEMPTS: usize = 100;
    for _pass in 0..ATTEMPTS {
        let mut fixed_any = false;
        for i in 0..n {
            let mut tries = 0;
            while a.row(i).iter().all(|&v| v == 0.0) {
                let fresh = rng.sample(Distribution::Bernoulli { p: cfg.connectivity }, &[m])?;
                a.row_mut(i).copy_from_slice(fresh.data());
                fixed_any = true;
                tries += 1;
                if tries >= ATTEMPTS {
                    return Err(Error::Config(format!(
                        "connectivity {} too low to populate row {i} after {ATTEMPTS} redraws",
                        cfg.connectivity
                    )));
                }
            }
        }
        for j in 0..m {
            let mut tries = 0;
            while (0..n).all(|i| a.at(&[i, j]) == 0.0) {
                let fresh = rng.sample(Distribution::Bernoulli { p: cfg.connectivity }, &[n])?;
                for i in 0..n {
                    a.set(&[i, j], fresh.data()[i]);
                }
                fixed_any = true;
                tries += 1;
                if tries >= ATTEMPTS {
                    return Err(Error::Config(format!(
                        "connectivity {} too low to populate column {j} after {ATTEMPTS} redraws",
                        cfg.connectivity
                    )));
                }
            }
        }
        if !fixed_any {
            break;
        }
        let rows_ok = (0..n).all(|i| a.row(i).iter().any(|&v| v != 0.0));
        let cols_ok = (0..m).all(|j| (0..n).any(|i| a.at(&[i, j]) != 0.0));
        if rows_ok && cols_ok {
            break;
        }
    }
    let w = rng.sample(Distribution::Uniform { lo: cfg.weight_low, hi: cfg.weight_high }, &[n, m])?;
    Ok((a, w))
}

/// Deterministic generator core: expressions from given graph, latent
/// levels, and noise. `x = relu(z (A .* W)^T + eps)`.
pub fn synth_expressions(adjacency: &Tensor, weights: &Tensor, z: &Tensor, noise: &Tensor) -> Result<Tensor> {
    let aw = adjacency.hadamard(weights)?;
    let mut x = z.matmul_nt(&aw)?;
    if x.shape() != noise.shape() {
        return Err(Error::shape(format!(
            "noise shape {:?} does not match expressions {:?}",
            noise.shape(),
            x.shape()
        )));
    }
    x.add_scaled(noise, 1.0);
    Ok(x.map(|v| v.max(0.0)))
}

/// Generate one split on a fixed graph.
pub fn simulate_with_graph(
    cfg: &SimConfig,
    adjacency: &Tensor,
    weights: &Tensor,
    count: usize,
    rng: &mut Rng,
) -> Result<SimDataset> {
    let z = rng.sample(
        Distribution::Gamma { shape: cfg.gamma_shape, scale: cfg.gamma_scale },
        &[count, cfg.m],
    )?;
    let noise = if cfg.noise_sd > 0.0 {
        rng.sample(Distribution::Normal { mean: 0.0, sd: cfg.noise_sd }, &[count, cfg.n])?
    } else {
        Tensor::zeros(&[count, cfg.n])
    };
    let x = synth_expressions(adjacency, weights, &z, &noise)?;
    Ok(SimDataset { x, z_true: z, adjacency: adjacency.clone(), weights: weights.clone() })
}

/// Full simulation: draw the graph once, then train and test splits with
/// independent latent levels and noise.
pub fn simulate(cfg: &SimConfig) -> Result<(SimDataset, SimDataset)> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let (a, w) = sample_graph(cfg, &mut rng)?;
    let train = simulate_with_graph(cfg, &a, &w, cfg.n_train, &mut rng)?;
    let test = simulate_with_graph(cfg, &a, &w, cfg.n_test, &mut rng)?;
    Ok((train, test))
}
