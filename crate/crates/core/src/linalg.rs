//! Small dense routines: cyclic-Jacobi symmetric eigendecomposition and a
//! pivoted linear solve. Dimensions here are tiny (tens), so simplicity and
//! determinism win over speed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{CoreError, Result};

/// Eigendecomposition A = V·diag(λ)·Vᵀ of a symmetric matrix (row-major d×d).
/// Returns (λ, V) with eigenvector j stored in column j of V.
pub fn symmetric_eigen(a: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != d * d {
        return Err(CoreError::ShapeMismatch(format!(
            "expected {}x{} matrix, got {} elements",
            d,
            d,
            a.len()
        )));
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let scale: f64 = a.iter().fold(0.0, |acc, x| acc.max(x.abs())).max(1.0);
    let tol = 1e-14 * scale;

    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for p in 0..d {
            for q in (p + 1)..d {
                off += m[p * d + q] * m[p * d + q];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p * d + q];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let theta = (m[q * d + q] - m[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // rotate rows/cols p and q of m
                for i in 0..d {
                    let aip = m[i * d + p];
                    let aiq = m[i * d + q];
                    m[i * d + p] = c * aip - s * aiq;
                    m[i * d + q] = s * aip + c * aiq;
                }
                for i in 0..d {
                    let api = m[p * d + i];
                    let aqi = m[q * d + i];
                    m[p * d + i] = c * api - s * aqi;
                    m[q * d + i] = s * api + c * aqi;
                }
                for i in 0..d {
                    let vip = v[i * d + p];
                    let viq = v[i * d + q];
                    v[i * d + p] = c * vip - s * viq;
                    v[i * d + q] = s * vip + c * viq;
                }
            }
        }
    }

    let lambda = (0..d).map(|i| m[i * d + i]).collect();
    Ok((lambda, v))
}

/// Solve A·x = b by Gaussian elimination with partial pivoting.
pub fn solve(a: &[f64], b: &[f64], d: usize) -> Result<Vec<f64>> {
    if a.len() != d * d || b.len() != d {
        return Err(CoreError::ShapeMismatch(format!(
            "solve: matrix {} elements, rhs {}, d={}",
            a.len(),
            b.len(),
            d
        )));
    }
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..d {
        let mut piv = col;
        for r in (col + 1)..d {
            if m[r * d + col].abs() > m[piv * d + col].abs() {
                piv = r;
            }
        }
        if m[piv * d + col].abs() < 1e-300 {
            return Err(CoreError::Singular(format!("pivot ~0 at column {col}")));
        }
        if piv != col {
            for j in 0..d {
                m.swap(col * d + j, piv * d + j);
            }
            x.swap(col, piv);
        }
        let inv = 1.0 / m[col * d + col];
        for r in (col + 1)..d {
            let f = m[r * d + col] * inv;
            if f == 0.0 {
                continue;
            }
            for j in col..d {
                m[r * d + j] -= f * m[col * d + j];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..d).rev() {
        let mut s = x[col];
        for j in (col + 1)..d {
            s -= m[col * d + j] * x[j];
        }
        x[col] = s / m[col * d + col];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_2x2_known() {
        let a = [2.0, 1.0, 1.0, 2.0];
        let (mut l, v) = symmetric_eigen(&a, 2).unwrap();
        l.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((l[0] - 1.0).abs() < 1e-12);
        assert!((l[1] - 3.0).abs() < 1e-12);
        // columns orthonormal
        let dot01 = v[0] * v[1] + v[2] * v[3];
        assert!(dot01.abs() < 1e-12);
    }

    #[test]
    fn eigen_reconstructs_random_symmetric() {
        use crate::rng::{self, Purpose};
        let d = 9;
        let mut r = rng::stream(3, Purpose::Data);
        let g: Vec<f64> = (0..d * d).map(|_| rng::normal::<f64>(&mut r)).collect();
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = 0.5 * (g[i * d + j] + g[j * d + i]);
            }
        }
        let (l, v) = symmetric_eigen(&a, d).unwrap();
        // rebuild V diag(l) Vᵀ
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += v[i * d + k] * l[k] * v[j * d + k];
                }
                assert!((s - a[i * d + j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn solve_matches_known_system() {
        let a = [4.0, 1.0, 1.0, 3.0];
        let b = [1.0, 2.0];
        let x = solve(&a, &b, 2).unwrap();
        // exact solution of [[4,1],[1,3]] x = [1,2] is [1/11, 7/11]
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn solve_rejects_singular() {
        let a = [1.0, 2.0, 2.0, 4.0];
        assert!(solve(&a, &[1.0, 1.0], 2).is_err());
    }
}
