//! Small dense linear algebra: symmetric eigendecomposition, thin QR, and
//! principal angles between subspaces.
//!
//! The eigensolver is cyclic Jacobi with an off-diagonal Frobenius-norm stop
//! at `1e-12` relative to the input norm. That is plenty for the covariance
//! matrices this crate sees (up to ~2000 on a side, in practice <= 1000).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 64;

/// Eigendecomposition of a symmetric matrix.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues sorted descending
/// and the matching orthonormal eigenvectors as the columns of the second
/// tensor. Input must be symmetric to about `1e-10` (relative to its largest
/// entry), otherwise a contract error is returned.
pub fn sym_eig(s: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, m) = s.dims2()?;
    if n != m {
        return Err(Error::shape(format!("sym_eig requires a square matrix, got {n}x{m}")));
    }
    let scale = s.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (s.at(&[i, j]) - s.at(&[j, i])).abs();
            if d > 1e-10 * scale {
                return Err(Error::contract(format!(
                    "sym_eig input is not symmetric: |S[{i},{j}] - S[{j},{i}]| = {d:.3e}"
                )));
            }
        }
    }

    let mut a: Vec<f64> = s.data().to_vec();
    let mut v = Tensor::eye(n).into_data();
    let norm = s.frob_norm();
    let tol = JACOBI_TOL * norm.max(f64::MIN_POSITIVE);

    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if (2.0 * off).sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                // Rotate rows/columns p and q of A.
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - sn * akq;
                    a[k * n + q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - sn * aqk;
                    a[q * n + k] = sn * apk + c * aqk;
                }
                // Accumulate the rotation into V (columns p, q).
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap());
    let mut vals = Vec::with_capacity(n);
    let mut vecs = Tensor::zeros(&[n, n]);
    for (new_col, &old_col) in order.iter().enumerate() {
        vals.push(a[old_col * n + old_col]);
        for k in 0..n {
            vecs.data_mut()[k * n + new_col] = v[k * n + old_col];
        }
    }
    Ok((Tensor::from_vec(&[n], vals)?, vecs))
}

/// Thin orthonormal basis of the column space of `a` (n x m, m <= n) via
/// Householder QR. Fails with a rank error when a diagonal of R collapses.
pub fn orthonormal_columns(a: &Tensor) -> Result<Tensor> {
    let (n, m) = a.dims2()?;
    if m > n {
        return Err(Error::shape(format!(
            "orthonormal_columns requires tall input, got {n}x{m}"
        )));
    }
    let mut r: Vec<f64> = a.data().to_vec();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(m);
    let scale = a.max_abs().max(f64::MIN_POSITIVE);

    for col in 0..m {
        // Householder vector for column `col`, rows col..n.
        let mut x: Vec<f64> = (col..n).map(|i| r[i * m + col]).collect();
        let norm_x = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm_x <= 1e-12 * scale * (n as f64).sqrt() {
            return Err(Error::RankDeficient(format!(
                "column {col} is linearly dependent (residual norm {norm_x:.3e})"
            )));
        }
        let alpha = if x[0] >= 0.0 { -norm_x } else { norm_x };
        x[0] -= alpha;
        let vnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if vnorm > 0.0 {
            for v in &mut x {
                *v /= vnorm;
            }
            // Apply H = I - 2 v v^T to the remaining columns.
            for j in col..m {
                let mut dot = 0.0;
                for (k, &vk) in x.iter().enumerate() {
                    dot += vk * r[(col + k) * m + j];
                }
                for (k, &vk) in x.iter().enumerate() {
                    r[(col + k) * m + j] -= 2.0 * vk * dot;
                }
            }
        }
        let rdiag = r[col * m + col].abs();
        if rdiag <= 1e-12 * scale * (n as f64).sqrt() {
            return Err(Error::RankDeficient(format!(
                "rank deficiency detected at column {col} (|R[{col},{col}]| = {rdiag:.3e})"
            )));
        }
        reflectors.push(x);
    }

    // Q_thin = H_0 H_1 ... H_{m-1} applied to the first m columns of I.
    let mut q = Tensor::zeros(&[n, m]);
    for j in 0..m {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        for (col, refl) in reflectors.iter().enumerate().rev() {
            let mut dot = 0.0;
            for (k, &vk) in refl.iter().enumerate() {
                dot += vk * e[col + k];
            }
            for (k, &vk) in refl.iter().enumerate() {
                e[col + k] -= 2.0 * vk * dot;
            }
        }
        for i in 0..n {
            q.data_mut()[i * m + j] = e[i];
        }
    }
    Ok(q)
}

/// Principal angles (radians, ascending) between the column spaces of two
/// n x m matrices of full column rank.
///
/// Both bases are orthonormalized. Large angles come from the cosine route
/// (singular values of `Qu^T Qv`); angles below pi/4 are recomputed from the
/// sine route (singular values of `Qv - Qu (Qu^T Qv)`), which keeps full
/// precision where `acos` near 1 would lose half the digits.
pub fn principal_angles(u: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (nu, mu) = u.dims2()?;
    let (nv, mv) = v.dims2()?;
    if nu != nv || mu != mv {
        return Err(Error::shape(format!(
            "principal_angles requires equal shapes, got {nu}x{mu} and {nv}x{mv}"
        )));
    }
    let qu = orthonormal_columns(u)?;
    let qv = orthonormal_columns(v)?;
    let m = qu.transposed()?.matmul(&qv)?;

    // Cosine route: singular values of M, descending = angles ascending.
    let cos_sq = singular_values_squared(&m)?;
    let mut cos_angles: Vec<f64> = cos_sq
        .iter()
        .map(|&l| l.clamp(0.0, 1.0).sqrt().clamp(-1.0, 1.0).acos())
        .collect();
    cos_angles.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Sine route: singular values of Qv - Qu M, ascending = angles ascending.
    let mut y = qv.clone();
    let qum = qu.matmul(&m)?;
    y.add_scaled(&qum, -1.0);
    let mut sin_sq = singular_values_squared(&y)?;
    sin_sq.reverse();
    let sin_angles: Vec<f64> = sin_sq.iter().map(|&l| l.clamp(0.0, 1.0).sqrt().asin()).collect();

    let angles: Vec<f64> = cos_angles
        .iter()
        .zip(&sin_angles)
        .map(|(&c, &s)| if c < std::f64::consts::FRAC_PI_4 { s } else { c })
        .collect();
    Tensor::from_vec(&[mu], angles)
}

/// Squared singular values of a tall matrix, descending, via the symmetric
/// eigendecomposition of `A^T A`.
fn singular_values_squared(a: &Tensor) -> Result<Vec<f64>> {
    let (_, m) = a.dims2()?;
    let ata = a.transposed()?.matmul(a)?;
    let mut sym = ata.clone();
    for i in 0..m {
        for j in 0..m {
            sym.set(&[i, j], 0.5 * (ata.at(&[i, j]) + ata.at(&[j, i])));
        }
    }
    let (evals, _) = sym_eig(&sym)?;
    Ok(evals.data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use std::f64::consts::FRAC_PI_2;
    use std::f64::consts::FRAC_PI_4;

    fn random_symmetric(rng: &mut Rng, n: usize) -> Tensor {
        let a = rng.sample_normal(&[n, n], 0.0, 1.0);
        let at = a.transposed().unwrap();
        let mut s = a.clone();
        s.add_scaled(&at, 1.0);
        s.scale(0.5);
        s
    }

    #[test]
    fn eig_of_diagonal() {
        let s = Tensor::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (vals, vecs) = sym_eig(&s).unwrap();
        assert!((vals.at(&[0]) - 3.0).abs() < 1e-12);
        assert!((vals.at(&[1]) - 1.0).abs() < 1e-12);
        assert!((vecs.at(&[0, 0]).abs() - 1.0).abs() < 1e-12);
        assert!((vecs.at(&[1, 1]).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eig_of_identity() {
        let (vals, _) = sym_eig(&Tensor::eye(5)).unwrap();
        for i in 0..5 {
            assert!((vals.at(&[i]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eig_two_by_two_closed_form() {
        // [[2,1],[1,2]] has eigenpairs (3, (1,1)/sqrt2) and (1, (1,-1)/sqrt2).
        let s = Tensor::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let (vals, vecs) = sym_eig(&s).unwrap();
        assert!((vals.at(&[0]) - 3.0).abs() < 1e-12);
        assert!((vals.at(&[1]) - 1.0).abs() < 1e-12);
        let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
        // Up to sign.
        let v0 = [vecs.at(&[0, 0]), vecs.at(&[1, 0])];
        assert!((v0[0].abs() - inv_sqrt2).abs() < 1e-10 && (v0[0] - v0[1]).abs() < 1e-10);
        let v1 = [vecs.at(&[0, 1]), vecs.at(&[1, 1])];
        assert!((v1[0].abs() - inv_sqrt2).abs() < 1e-10 && (v1[0] + v1[1]).abs() < 1e-10);
    }

    #[test]
    fn eig_reconstructs_random_matrices() {
        let mut rng = Rng::new(99);
        for trial in 0..100 {
            let n = 2 + (trial % 49);
            let s = random_symmetric(&mut rng, n);
            let (vals, vecs) = sym_eig(&s).unwrap();
            // V diag(vals) V^T
            let mut vd = vecs.clone();
            for i in 0..n {
                for j in 0..n {
                    vd.data_mut()[i * n + j] *= vals.at(&[j]);
                }
            }
            let recon = vd.matmul(&vecs.transposed().unwrap()).unwrap();
            let num = recon.sub(&s).unwrap().frob_norm();
            assert!(
                num <= 1e-8 * s.frob_norm().max(1e-300),
                "reconstruction failed for n={n}: {num:e}"
            );
        }
    }

    #[test]
    fn eig_rejects_asymmetric_input() {
        let s = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&s), Err(Error::Contract(_))));
    }

    #[test]
    fn angles_of_identical_subspaces_are_zero() {
        let mut rng = Rng::new(4);
        let u = rng.sample_normal(&[6, 3], 0.0, 1.0);
        let angles = principal_angles(&u, &u).unwrap();
        for i in 0..3 {
            assert!(angles.at(&[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn angles_of_orthogonal_axes() {
        let e1 = Tensor::from_vec(&[3, 1], vec![1.0, 0.0, 0.0]).unwrap();
        let e2 = Tensor::from_vec(&[3, 1], vec![0.0, 1.0, 0.0]).unwrap();
        let angles = principal_angles(&e1, &e2).unwrap();
        assert!((angles.at(&[0]) - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn angle_of_diagonal_axis_is_pi_over_four() {
        let s = 1.0 / 2.0_f64.sqrt();
        let e1 = Tensor::from_vec(&[2, 1], vec![1.0, 0.0]).unwrap();
        let diag = Tensor::from_vec(&[2, 1], vec![s, s]).unwrap();
        let angles = principal_angles(&e1, &diag).unwrap();
        assert!((angles.at(&[0]) - FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn angles_are_symmetric_in_their_arguments() {
        let mut rng = Rng::new(17);
        for _ in 0..20 {
            let u = rng.sample_normal(&[8, 3], 0.0, 1.0);
            let v = rng.sample_normal(&[8, 3], 0.0, 1.0);
            let uv = principal_angles(&u, &v).unwrap();
            let vu = principal_angles(&v, &u).unwrap();
            assert!(uv.max_abs_diff(&vu) < 1e-10);
        }
    }

    #[test]
    fn rank_deficient_input_is_detected() {
        let mut rng = Rng::new(8);
        let col = rng.sample_normal(&[5, 1], 0.0, 1.0);
        let mut dup = Tensor::zeros(&[5, 2]);
        for i in 0..5 {
            dup.set(&[i, 0], col.at(&[i, 0]));
            dup.set(&[i, 1], 2.0 * col.at(&[i, 0]));
        }
        assert!(matches!(
            principal_angles(&dup, &dup),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn orthonormalization_produces_orthonormal_columns() {
        let mut rng = Rng::new(21);
        for _ in 0..20 {
            let a = rng.sample_normal(&[10, 4], 0.0, 2.0);
            let q = orthonormal_columns(&a).unwrap();
            let qtq = q.transposed().unwrap().matmul(&q).unwrap();
            let diff = qtq.sub(&Tensor::eye(4)).unwrap().frob_norm();
            assert!(diff < 1e-10, "Q^T Q deviates from I by {diff:e}");
        }
    }
}
