//! Capacity analysis and representation scoring.
//!
//! The load of a model is its constraint-to-parameter ratio. For a decoder
//! trained jointly with per-sample codes, fitting N samples of dimension n
//! imposes N*n equations on C_d weights plus N*m code entries:
//! `alpha_d = N*n / (C_d + N*m)`. An encoder fit to fixed codes sees N*m
//! equations on C_e weights: `alpha_e = m*N / C_e`. Loads above 1 mean the
//! fit is over-determined. With equal complexities C_e = C_d the two are
//! algebraically linked: `alpha_d = (n/m) * alpha_e / (1 + alpha_e)`.

use crate::error::{Error, Result};
use crate::linalg::sym_eig;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Capacity snapshot for one experiment configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoadReport {
    /// Input dimension.
    pub n: usize,
    /// Representation dimension.
    pub m: usize,
    /// Training sample count.
    pub samples: usize,
    /// Decoder parameter count.
    pub decoder_params: usize,
    /// Encoder parameter count, when an encoder exists.
    pub encoder_params: Option<usize>,
    pub alpha_d: f64,
    pub alpha_e: Option<f64>,
}

impl LoadReport {
    pub fn new(n: usize, m: usize, samples: usize, decoder_params: usize, encoder_params: Option<usize>) -> Self {
        LoadReport {
            n,
            m,
            samples,
            decoder_params,
            encoder_params,
            alpha_d: decoder_load(n, m, decoder_params, samples),
            alpha_e: encoder_params.map(|c| encoder_load(m, samples, c)),
        }
    }
}

/// `alpha_d = N*n / (C_d + N*m)`.
pub fn decoder_load(n: usize, m: usize, decoder_params: usize, samples: usize) -> f64 {
    (samples as f64 * n as f64) / (decoder_params as f64 + samples as f64 * m as f64)
}

/// `alpha_e = m*N / C_e`.
pub fn encoder_load(m: usize, samples: usize, encoder_params: usize) -> f64 {
    (m as f64 * samples as f64) / encoder_params as f64
}

/// Decoder load implied by an encoder load under equal complexity:
/// `alpha_d = (n/m) * alpha_e / (1 + alpha_e)`.
pub fn load_relation(n: usize, m: usize, alpha_e: f64) -> f64 {
    (n as f64 / m as f64) * alpha_e / (1.0 + alpha_e)
}

/// Principal component analysis via exact covariance eigendecomposition.
///
/// The covariance is normalized by N (population form), which makes the
/// discarded-eigenvalue identity exact: the mean squared reconstruction
/// error of the top-m projection equals the sum of the dropped eigenvalues.
/// Returns `(components [n x m], mean [n], eigenvalues [m] descending)`.
pub fn pca(x: &Tensor, m: usize) -> Result<(Tensor, Tensor, Tensor)> {
    let (rows, n) = x.dims2()?;
    if rows < 2 {
        return Err(Error::invalid(format!("pca needs at least 2 samples, got {rows}")));
    }
    if m == 0 || m > n.min(rows) {
        return Err(Error::invalid(format!(
            "pca component count {m} outside 1..=min(N, n) = {}",
            n.min(rows)
        )));
    }
    let mut mean = Tensor::zeros(&[n]);
    for r in 0..rows {
        for (mv, &v) in mean.data_mut().iter_mut().zip(x.row(r)) {
            *mv += v;
        }
    }
    mean.scale(1.0 / rows as f64);

    let mut centered = x.clone();
    for r in 0..rows {
        for (v, &mu) in centered.row_mut(r).iter_mut().zip(mean.data()) {
            *v -= mu;
        }
    }
    let mut cov = centered.transposed()?.matmul(&centered)?;
    cov.scale(1.0 / rows as f64);
    // Exact symmetrization; the product is symmetric up to roundoff.
    let cov_t = cov.transposed()?;
    let mut sym = cov.clone();
    sym.add_scaled(&cov_t, 1.0);
    sym.scale(0.5);

    let (evals, evecs) = sym_eig(&sym)?;
    let mut components = Tensor::zeros(&[n, m]);
    for i in 0..n {
        for j in 0..m {
            components.data_mut()[i * m + j] = evecs.at(&[i, j]);
        }
    }
    let top = Tensor::from_vec(&[m], evals.data()[..m].to_vec())?;
    Ok((components, mean, top))
}

/// Pearson correlation of two equally long vectors. Errors on constant
/// input, where the correlation is undefined.
pub fn pcc(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!("pcc lengths differ: {} vs {}", u.len(), v.len())));
    }
    if u.len() < 2 {
        return Err(Error::invalid("pcc needs at least 2 points".to_string()));
    }
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_u = 0.0;
    let mut var_v = 0.0;
    for (&a, &b) in u.iter().zip(v) {
        cov += (a - mu) * (b - mv);
        var_u += (a - mu) * (a - mu);
        var_v += (b - mv) * (b - mv);
    }
    if var_u == 0.0 || var_v == 0.0 {
        return Err(Error::invalid("pcc undefined for constant input".to_string()));
    }
    Ok(cov / (var_u.sqrt() * var_v.sqrt()))
}

/// Column-wise correlation between true and learned representations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepScore {
    /// Correlation per latent dimension; flagged dimensions hold 0.
    pub per_dim: Vec<f64>,
    /// Dimensions whose learned column was constant (score meaningless).
    pub degenerate: Vec<bool>,
    /// Mean over the non-degenerate dimensions.
    pub mean: f64,
}

/// Score learned representations dimension-by-dimension against ground
/// truth. No permutation matching is applied: the caller's model is
/// expected to pin unit identity (e.g. via a masked decoder). Constant
/// learned columns score 0, are flagged, and are excluded from the mean.
pub fn representation_score(z_true: &Tensor, z_learned: &Tensor) -> Result<RepScore> {
    if z_true.shape() != z_learned.shape() {
        return Err(Error::shape(format!(
            "representation shapes differ: {:?} vs {:?}",
            z_true.shape(),
            z_learned.shape()
        )));
    }
    let (n, m) = z_true.dims2()?;
    let mut per_dim = Vec::with_capacity(m);
    let mut degenerate = vec![false; m];
    let mut sum = 0.0;
    let mut valid = 0usize;
    for j in 0..m {
        let tcol: Vec<f64> = (0..n).map(|i| z_true.at(&[i, j])).collect();
        let lcol: Vec<f64> = (0..n).map(|i| z_learned.at(&[i, j])).collect();
        match pcc(&tcol, &lcol) {
            Ok(r) => {
                per_dim.push(r);
                sum += r;
                valid += 1;
            }
            Err(Error::InvalidParam(_)) => {
                per_dim.push(0.0);
                degenerate[j] = true;
            }
            Err(e) => return Err(e),
        }
    }
    let mean = if valid > 0 { sum / valid as f64 } else { 0.0 };
    Ok(RepScore { per_dim, degenerate, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::principal_angles;
    use crate::rng::Rng;

    #[test]
    fn decoder_load_formula_limit() {
        // C_d = 0 collapses to n/m.
        assert!((decoder_load(784, 20, 0, 4000) - 784.0 / 20.0).abs() < 1e-12);
    }

    #[test]
    fn decoder_load_known_configurations() {
        let a = decoder_load(784, 20, 263_873, 4000);
        assert!((a - 9.1196).abs() < 1e-3, "alpha_d {a}");
        let b = decoder_load(1000, 100, 11_000, 100);
        assert!((b - 4.7619).abs() < 1e-3, "alpha_d {b}");
    }

    #[test]
    fn encoder_load_known_configurations() {
        let hi = encoder_load(20, 15_000, 257_748);
        let lo = encoder_load(20, 10_000, 257_748);
        assert!(hi > 1.0 && (hi - 1.1639).abs() < 1e-3, "alpha_e {hi}");
        assert!(lo < 1.0 && (lo - 0.7759).abs() < 1e-3, "alpha_e {lo}");
    }

    #[test]
    fn encoder_load_unity_when_params_match_constraints() {
        assert_eq!(encoder_load(7, 13, 7 * 13), 1.0);
    }

    #[test]
    fn load_relation_limits() {
        // As alpha_e grows, alpha_d approaches n/m.
        let a = load_relation(784, 20, 1e9);
        assert!((a - 39.2).abs() / 39.2 < 1e-8);
        // alpha_e = 1 gives n / (2m).
        assert!((load_relation(100, 10, 1.0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn load_relation_is_consistent_with_both_loads() {
        let mut rng = Rng::new(55);
        for _ in 0..1000 {
            let n = 1 + (rng.next_u64() % 2000) as usize;
            let m = 1 + (rng.next_u64() % 500) as usize;
            let samples = 1 + (rng.next_u64() % 100_000) as usize;
            let c = 1 + (rng.next_u64() % 1_000_000) as usize;
            let via_relation = load_relation(n, m, encoder_load(m, samples, c));
            let direct = decoder_load(n, m, c, samples);
            assert!(
                (via_relation - direct).abs() <= 1e-12 * direct.max(1.0),
                "identity violated for n={n} m={m} N={samples} C={c}"
            );
        }
    }

    #[test]
    fn decoder_load_monotonicity() {
        for samples in [10usize, 100, 1000, 10_000] {
            for c in [100usize, 1000, 10_000] {
                let a = decoder_load(50, 5, c, samples);
                assert!(decoder_load(50, 5, c, samples * 2) > a);
                assert!(decoder_load(50, 5, c * 2, samples) < a);
            }
        }
    }

    #[test]
    fn pca_recovers_a_line() {
        let mut rng = Rng::new(20);
        let dir = [3.0, -1.0, 2.0, 0.5];
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut rows = Vec::new();
        for _ in 0..100 {
            let t = rng.uniform01() * 4.0 - 2.0;
            rows.push(dir.iter().map(|&d| 1.0 + t * d).collect::<Vec<_>>());
        }
        let x = Tensor::from_rows(&rows).unwrap();
        let (comp, _, _) = pca(&x, 1).unwrap();
        let unit = Tensor::from_vec(&[4, 1], dir.iter().map(|&d| d / norm).collect()).unwrap();
        let angles = principal_angles(&comp, &unit).unwrap();
        assert!(angles.at(&[0]) < 1e-8, "line angle {}", angles.at(&[0]));
    }

    #[test]
    fn pca_first_component_tracks_dominant_axis() {
        let mut rng = Rng::new(21);
        let n = 6;
        let mut rows = Vec::new();
        for _ in 0..10_000 {
            let mut row = vec![0.0; n];
            for (j, v) in row.iter_mut().enumerate() {
                let sd = if j == 0 { 3.0 } else { 1.0 };
                *v = rng.sample_normal(&[1], 0.0, sd).data()[0];
            }
            rows.push(row);
        }
        let x = Tensor::from_rows(&rows).unwrap();
        let (comp, _, evals) = pca(&x, 1).unwrap();
        let mut e1 = Tensor::zeros(&[n, 1]);
        e1.set(&[0, 0], 1.0);
        let angle = principal_angles(&comp, &e1).unwrap().at(&[0]);
        assert!(angle < 2.0_f64.to_radians(), "angle to e1 is {angle} rad");
        assert!((evals.at(&[0]) - 9.0).abs() < 0.5);
    }

    #[test]
    fn pca_reconstruction_error_equals_discarded_eigenvalues() {
        let mut rng = Rng::new(22);
        let x = rng.sample_normal(&[200, 8], 0.0, 1.0);
        let m = 3;
        let (comp, mean, _) = pca(&x, m).unwrap();
        // Full spectrum for the discarded tail.
        let (_, _, all) = pca(&x, 8).unwrap();
        let discarded: f64 = all.data()[m..].iter().sum();
        // Mean squared reconstruction error of the top-m projection.
        let mut err = 0.0;
        for r in 0..200 {
            let xc: Vec<f64> = x.row(r).iter().zip(mean.data()).map(|(v, mu)| v - mu).collect();
            // coefficients = C^T xc; reconstruction = C coeffs
            let mut coef = vec![0.0; m];
            for j in 0..m {
                for i in 0..8 {
                    coef[j] += comp.at(&[i, j]) * xc[i];
                }
            }
            for i in 0..8 {
                let mut rec = 0.0;
                for j in 0..m {
                    rec += comp.at(&[i, j]) * coef[j];
                }
                err += (xc[i] - rec) * (xc[i] - rec);
            }
        }
        err /= 200.0;
        assert!(
            (err - discarded).abs() < 1e-8 * discarded.max(1.0),
            "error {err} vs discarded {discarded}"
        );
    }

    #[test]
    fn pca_components_are_orthonormal() {
        let mut rng = Rng::new(23);
        let x = rng.sample_normal(&[50, 10], 0.0, 2.0);
        let (comp, _, _) = pca(&x, 4).unwrap();
        let gram = comp.transposed().unwrap().matmul(&comp).unwrap();
        let dev = gram.sub(&Tensor::eye(4)).unwrap().frob_norm();
        assert!(dev < 1e-8);
    }

    #[test]
    fn pcc_identity_and_affine_cases() {
        let u = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((pcc(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        let v: Vec<f64> = u.iter().map(|&x| -2.0 * x + 7.0).collect();
        assert!((pcc(&u, &v).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pcc_five_point_fixture() {
        // Direct formula on u=(1..5), v=(2,1,4,3,6): covariance sum 10,
        // variances 10 and 14.8, so r = 10 / sqrt(148).
        let u = [1.0, 2.0, 3.0, 4.0, 5.0];
        let v = [2.0, 1.0, 4.0, 3.0, 6.0];
        let expected = 10.0 / 148.0_f64.sqrt();
        assert!((pcc(&u, &v).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn pcc_rejects_constant_input() {
        let u = [1.0, 1.0, 1.0];
        let v = [1.0, 2.0, 3.0];
        assert!(matches!(pcc(&u, &v), Err(Error::InvalidParam(_))));
    }

    #[test]
    fn representation_score_identity_and_scale() {
        let mut rng = Rng::new(30);
        let z = rng.sample(crate::rng::Distribution::Gamma { shape: 2.0, scale: 1.0 }, &[50, 4]).unwrap();
        let s = representation_score(&z, &z).unwrap();
        assert!(s.per_dim.iter().all(|&r| (r - 1.0).abs() < 1e-12));
        let z3 = z.map(|v| 3.0 * v);
        let s3 = representation_score(&z, &z3).unwrap();
        assert!((s3.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn representation_score_null_distribution() {
        let mut rng = Rng::new(31);
        let z_true = rng.sample_normal(&[1000, 10], 0.0, 1.0);
        let z_rand = rng.sample_normal(&[1000, 10], 0.0, 1.0);
        let s = representation_score(&z_true, &z_rand).unwrap();
        assert!(s.mean.abs() < 0.1, "null mean pcc {}", s.mean);
    }

    #[test]
    fn representation_score_flags_constant_columns() {
        let z_true = Tensor::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        let z_learned = Tensor::from_rows(&[vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let s = representation_score(&z_true, &z_learned).unwrap();
        assert!(!s.degenerate[0] && s.degenerate[1]);
        assert_eq!(s.per_dim[1], 0.0);
        assert!((s.mean - 1.0).abs() < 1e-12, "degenerate column leaked into mean");
    }

    #[test]
    fn representation_score_affine_invariance_property() {
        let mut rng = Rng::new(32);
        let z = rng.sample_normal(&[100, 5], 0.0, 1.0);
        let mut transformed = z.clone();
        for j in 0..5 {
            let a = 0.1 + rng.uniform01() * 5.0;
            let b = rng.uniform01() * 10.0 - 5.0;
            for i in 0..100 {
                let v = z.at(&[i, j]);
                transformed.set(&[i, j], a * v + b);
            }
        }
        let s = representation_score(&z, &transformed).unwrap();
        assert!((s.mean - 1.0).abs() < 1e-10);
    }
}
