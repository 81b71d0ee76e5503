//! Desk-scale metrics: Fréchet distance between Gaussian feature fits, onset
//! detection by spectral flux, and tolerance-windowed onset F1.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{invalid, CoreError, Result};
use crate::linalg;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Default spectral-flux threshold for onset detection.
pub const DEFAULT_ONSET_THRESHOLD: f64 = 0.3;

/// Gaussian fit of a feature set: sample mean, covariance, and count.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Row-major d×d, symmetric.
    pub covariance: Vec<f64>,
    pub count: usize,
}

impl FeatureStats {
    /// Fit from rows of a [n, d] matrix (unbiased covariance, n ≥ 2).
    pub fn from_rows(rows: &Tensor<f64>) -> Result<Self> {
        if rows.shape().len() != 2 {
            return Err(invalid("FeatureStats::from_rows wants a [n, d] tensor"));
        }
        let (n, d) = (rows.shape()[0], rows.shape()[1]);
        if n < 2 {
            return Err(invalid(format!("need at least 2 rows, got {n}")));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, &x) in mean.iter_mut().zip(rows.row(i)) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = vec![0.0; d * d];
        for i in 0..n {
            let r = rows.row(i);
            for a in 0..d {
                let da = r[a] - mean[a];
                for b in a..d {
                    cov[a * d + b] += da * (r[b] - mean[b]);
                }
            }
        }
        let denom = (n - 1) as f64;
        for a in 0..d {
            for b in a..d {
                let v = cov[a * d + b] / denom;
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
        }
        Ok(FeatureStats {
            mean,
            covariance: cov,
            count: n,
        })
    }

    /// Build from explicit moments (e.g. an analytic target distribution).
    pub fn from_moments(mean: Vec<f64>, covariance: Vec<f64>, count: usize) -> Result<Self> {
        let s = FeatureStats {
            mean,
            covariance,
            count,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.covariance.len() != d * d {
            return Err(CoreError::ShapeMismatch(format!(
                "covariance has {} elements for dim {d}",
                self.covariance.len()
            )));
        }
        if self.count < 2 {
            return Err(invalid("count must be ≥ 2"));
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if (self.covariance[i * d + j] - self.covariance[j * d + i]).abs() > 1e-10 {
                    return Err(invalid(format!("covariance not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(())
    }
}

/// Eigenvalues clipped at this floor count as PSD; anything below is rejected.
const PSD_TOL: f64 = -1e-8;

fn psd_eigen(cov: &[f64], d: usize, name: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut l, v) = linalg::symmetric_eigen(cov, d)?;
    for x in &mut l {
        if *x < PSD_TOL {
            return Err(invalid(format!(
                "{name} covariance not PSD: eigenvalue {x}"
            )));
        }
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    Ok((l, v))
}

/// d² = ‖μ_a−μ_b‖² + Tr(Σ_a + Σ_b − 2·(Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}).
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let d = a.dim();
    if b.dim() != d {
        return Err(CoreError::ShapeMismatch(format!(
            "feature dims differ: {} vs {}",
            d,
            b.dim()
        )));
    }

    let (la, va) = psd_eigen(&a.covariance, d, "a")?;
    psd_eigen(&b.covariance, d, "b")?;

    // sqrt_a = V diag(√λ) Vᵀ
    let mut sqrt_a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += va[i * d + k] * la[k].sqrt() * va[j * d + k];
            }
            sqrt_a[i * d + j] = s;
        }
    }

    // m = sqrt_a · Σ_b · sqrt_a, symmetrized against roundoff
    let mut tmp = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += sqrt_a[i * d + k] * b.covariance[k * d + j];
            }
            tmp[i * d + j] = s;
        }
    }
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += tmp[i * d + k] * sqrt_a[k * d + j];
            }
            m[i * d + j] = s;
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (m[i * d + j] + m[j * d + i]);
            m[i * d + j] = v;
            m[j * d + i] = v;
        }
    }

    let (lm, _) = linalg::symmetric_eigen(&m, d)?;
    let tr_sqrt: f64 = lm.iter().map(|x| x.max(0.0).sqrt()).sum();

    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let tr_a: f64 = (0..d).map(|i| a.covariance[i * d + i]).sum();
    let tr_b: f64 = (0..d).map(|i| b.covariance[i * d + i]).sum();

    Ok((mean_term + tr_a + tr_b - 2.0 * tr_sqrt).max(0.0))
}

/// Frame energies e[τ] = Σ_{c,f} spec[c, f, τ].
pub fn frame_energies<T: Real>(spec: &Tensor<T>) -> Result<Vec<f64>> {
    if spec.shape().len() != 3 {
        return Err(invalid("spectrogram must be [C, F, T]"));
    }
    let (c, f, t) = (spec.shape()[0], spec.shape()[1], spec.shape()[2]);
    let mut e = vec![0.0; t];
    let data = spec.data();
    for ci in 0..c {
        for fi in 0..f {
            let base = (ci * f + fi) * t;
            for (ti, ev) in e.iter_mut().enumerate() {
                *ev += data[base + ti].to_f64();
            }
        }
    }
    Ok(e)
}

/// Spectral-flux onset detector.
///
/// Marks τ ≥ 1 where the energy flux e[τ]−e[τ−1] exceeds `threshold` times
/// the maximum flux and is a local flux maximum. Frame 0 is marked when it
/// already carries near-maximal energy and decays into frame 1 (an onset at
/// the very first frame has no flux of its own).
pub fn detect_onsets<T: Real>(spec: &Tensor<T>, threshold: f64) -> Result<Vec<bool>> {
    let e = frame_energies(spec)?;
    let t = e.len();
    let mut onsets = vec![false; t];
    if t == 0 {
        return Ok(onsets);
    }

    let flux: Vec<f64> = (1..t).map(|i| e[i] - e[i - 1]).collect();
    let max_flux = flux.iter().fold(0.0f64, |a, &x| a.max(x));

    if max_flux > 0.0 {
        for (fi, &fv) in flux.iter().enumerate() {
            let tau = fi + 1;
            if fv <= threshold * max_flux {
                continue;
            }
            let left_ok = fi == 0 || fv >= flux[fi - 1];
            let right_ok = fi + 1 >= flux.len() || fv >= flux[fi + 1];
            if left_ok && right_ok {
                onsets[tau] = true;
            }
        }
    }

    let max_e = e.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x));
    if max_e > 0.0 && e[0] > threshold * max_e && (t == 1 || e[0] > e[1]) {
        onsets[0] = true;
    }

    Ok(onsets)
}

fn positions(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect()
}

/// Number of greedily matched onset pairs within ±tol frames.
pub fn onset_matches(pred: &[bool], reference: &[bool], tol: usize) -> Result<usize> {
    if pred.len() != reference.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "onset masks differ in length: {} vs {}",
            pred.len(),
            reference.len()
        )));
    }
    let ps = positions(pred);
    let rs = positions(reference);
    let mut used = vec![false; rs.len()];
    let mut matched = 0usize;
    for &p in &ps {
        let mut best: Option<(usize, usize)> = None; // (distance, ref slot)
        for (slot, &r) in rs.iter().enumerate() {
            if used[slot] {
                continue;
            }
            let d = p.abs_diff(r);
            if d <= tol && best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, slot));
            }
        }
        if let Some((_, slot)) = best {
            used[slot] = true;
            matched += 1;
        }
    }
    Ok(matched)
}

/// Precision, recall, and F1 under greedy one-to-one matching within ±tol.
///
/// Empty prediction against a non-empty reference scores 0 across the board;
/// two empty sets count as perfect.
pub fn onset_f1(pred: &[bool], reference: &[bool], tol: usize) -> Result<(f64, f64, f64)> {
    let tp = onset_matches(pred, reference, tol)? as f64;
    let np = positions(pred).len() as f64;
    let nr = positions(reference).len() as f64;
    if np == 0.0 && nr == 0.0 {
        return Ok((1.0, 1.0, 1.0));
    }
    let precision = if np > 0.0 { tp / np } else { 0.0 };
    let recall = if nr > 0.0 { tp / nr } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((precision, recall, f1))
}
