//! Noise schedules for the stochastic-interpolant family x_t = α_t·x* + σ_t·ε,
//! together with the velocity target, velocity↔noise↔score conversions, and
//! the timestep weight used by the alignment loss.

use alloc::format;

use num_traits::Float;

use crate::error::{invalid, CoreError, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Which interpolant family to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// α_t = 1 − t, σ_t = t.
    Linear,
    /// α_t = cos(πt/2), σ_t = sin(πt/2); variance preserving (α² + σ² = 1).
    Vp,
}

/// Interpolant coefficients at one timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients<T> {
    pub alpha: T,
    pub sigma: T,
    pub dalpha: T,
    pub dsigma: T,
}

/// A noise schedule plus the guards used by the timestep weight: `eps_div`
/// keeps the ratio α/σ finite at σ = 0 and `ratio_clamp` bounds it before the
/// logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolantSchedule {
    pub kind: ScheduleKind,
    pub eps_div: f64,
    pub ratio_clamp: (f64, f64),
}

pub const DEFAULT_EPS_DIV: f64 = 1e-5;
pub const DEFAULT_RATIO_CLAMP: (f64, f64) = (1e-12, 1e12);

impl InterpolantSchedule {
    pub fn new(kind: ScheduleKind) -> Self {
        InterpolantSchedule {
            kind,
            eps_div: DEFAULT_EPS_DIV,
            ratio_clamp: DEFAULT_RATIO_CLAMP,
        }
    }

    pub fn linear() -> Self {
        Self::new(ScheduleKind::Linear)
    }

    pub fn vp() -> Self {
        Self::new(ScheduleKind::Vp)
    }

    pub fn with_eps_div(mut self, eps_div: f64) -> Result<Self> {
        if !(eps_div > 0.0) {
            return Err(invalid(format!("eps_div must be positive, got {eps_div}")));
        }
        self.eps_div = eps_div;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.ratio_clamp;
        if !(self.eps_div > 0.0) {
            return Err(invalid("eps_div must be positive"));
        }
        if !(lo > 0.0 && hi > lo) {
            return Err(invalid("ratio_clamp must satisfy 0 < lower < upper"));
        }
        Ok(())
    }

    fn check_t<T: Real>(t: T) -> Result<()> {
        if !(t >= T::zero() && t <= T::one()) {
            return Err(invalid(format!("t must lie in [0, 1], got {t:?}")));
        }
        Ok(())
    }

    /// (α_t, σ_t, α̇_t, σ̇_t) for the schedule kind.
    pub fn coefficients<T: Real>(&self, t: T) -> Result<Coefficients<T>> {
        Self::check_t(t)?;
        Ok(match self.kind {
            ScheduleKind::Linear => Coefficients {
                alpha: T::one() - t,
                sigma: t,
                dalpha: -T::one(),
                dsigma: T::one(),
            },
            ScheduleKind::Vp => {
                let half_pi = T::from_f64(core::f64::consts::FRAC_PI_2);
                let arg = half_pi * t;
                Coefficients {
                    alpha: arg.cos(),
                    sigma: arg.sin(),
                    dalpha: -half_pi * arg.sin(),
                    dsigma: half_pi * arg.cos(),
                }
            }
        })
    }

    /// x_t = α_t·x* + σ_t·ε.
    pub fn perturb<T: Real>(&self, x_star: &Tensor<T>, eps: &Tensor<T>, t: T) -> Result<Tensor<T>> {
        x_star.check_shape(eps.shape(), "perturb eps")?;
        let c = self.coefficients(t)?;
        let data = x_star
            .data()
            .iter()
            .zip(eps.data())
            .map(|(&x, &e)| c.alpha * x + c.sigma * e)
            .collect();
        Tensor::from_vec(x_star.shape(), data)
    }

    /// CFM regression target u_t = α̇_t·x* + σ̇_t·ε.
    pub fn velocity_target<T: Real>(
        &self,
        x_star: &Tensor<T>,
        eps: &Tensor<T>,
        t: T,
    ) -> Result<Tensor<T>> {
        x_star.check_shape(eps.shape(), "velocity_target eps")?;
        let c = self.coefficients(t)?;
        let data = x_star
            .data()
            .iter()
            .zip(eps.data())
            .map(|(&x, &e)| c.dalpha * x + c.dsigma * e)
            .collect();
        Tensor::from_vec(x_star.shape(), data)
    }

    /// Alignment weight w(t) = sigmoid(log(clamp(α_t / (σ_t + eps_div)))).
    ///
    /// Non-increasing in t; ≈1 near t=0 and ≈0 near t=1.
    pub fn tra_weight<T: Real>(&self, t: T) -> Result<T> {
        let c = self.coefficients(t)?;
        let ratio = c.alpha.to_f64() / (c.sigma.to_f64() + self.eps_div);
        let (lo, hi) = self.ratio_clamp;
        let clamped = ratio.max(lo).min(hi);
        let w = 1.0 / (1.0 + (-clamped.ln()).exp());
        Ok(T::from_f64(w))
    }

    /// Recover ε from a velocity: ε̂ = (α_t·v − α̇_t·x) / (α_t·σ̇_t − α̇_t·σ_t).
    pub fn velocity_to_noise<T: Real>(
        &self,
        x: &Tensor<T>,
        v: &Tensor<T>,
        t: T,
    ) -> Result<Tensor<T>> {
        x.check_shape(v.shape(), "velocity_to_noise v")?;
        let c = self.coefficients(t)?;
        let denom = c.alpha * c.dsigma - c.dalpha * c.sigma;
        if denom.abs() < T::from_f64(1e-12) {
            return Err(CoreError::Singular(format!(
                "velocity/noise conversion degenerate at t={:?}",
                t
            )));
        }
        let inv = T::one() / denom;
        let data = x
            .data()
            .iter()
            .zip(v.data())
            .map(|(&xv, &vv)| (c.alpha * vv - c.dalpha * xv) * inv)
            .collect();
        Tensor::from_vec(x.shape(), data)
    }

    /// Score ∇log p_t(x) = −ε̂/σ_t from a velocity. Requires σ_t bounded away
    /// from zero.
    pub fn velocity_to_score<T: Real>(
        &self,
        x: &Tensor<T>,
        v: &Tensor<T>,
        t: T,
    ) -> Result<Tensor<T>> {
        let c = self.coefficients(t)?;
        if c.sigma.to_f64() < 1e-6 {
            return Err(CoreError::Singular(format!(
                "score undefined: sigma underflow at t={:?}",
                t
            )));
        }
        let mut eps_hat = self.velocity_to_noise(x, v, t)?;
        let s = -T::one() / c.sigma;
        eps_hat.scale(s);
        Ok(eps_hat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Purpose};

    fn tensor1<T: Real>(v: &[T]) -> Tensor<T> {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn linear_endpoints() {
        let s = InterpolantSchedule::linear();
        let c = s.coefficients(0.0f64).unwrap();
        assert_eq!((c.alpha, c.sigma, c.dalpha, c.dsigma), (1.0, 0.0, -1.0, 1.0));
        let c = s.coefficients(1.0f64).unwrap();
        assert_eq!((c.alpha, c.sigma, c.dalpha, c.dsigma), (0.0, 1.0, -1.0, 1.0));
        assert!(s.coefficients(1.5f64).is_err());
        assert!(s.coefficients(-0.1f64).is_err());
    }

    #[test]
    fn vp_midpoint_closed_form() {
        // Frozen from the closed forms: cos(π/4) = sin(π/4) = 0.7071067811865476,
        // (π/2)·sin(π/4) = (π/2)·cos(π/4) = 1.1107207345395915.
        let s = InterpolantSchedule::vp();
        let c = s.coefficients(0.5f64).unwrap();
        assert!((c.alpha - 0.7071067811865476).abs() < 1e-12);
        assert!((c.sigma - 0.7071067811865476).abs() < 1e-12);
        assert!((c.dalpha + 1.1107207345395915).abs() < 1e-12);
        assert!((c.dsigma - 1.1107207345395915).abs() < 1e-12);
    }

    #[test]
    fn perturb_endpoints_and_midpoint() {
        let s = InterpolantSchedule::linear();
        let x = tensor1(&[1.0f64, 0.0]);
        let e = tensor1(&[0.0f64, 1.0]);
        assert_eq!(s.perturb(&x, &e, 0.0).unwrap().data(), x.data());
        assert_eq!(s.perturb(&x, &e, 1.0).unwrap().data(), e.data());
        assert_eq!(s.perturb(&x, &e, 0.5).unwrap().data(), &[0.5, 0.5]);

        let bad = tensor1(&[0.0f64]);
        assert!(s.perturb(&x, &bad, 0.5).is_err());
    }

    #[test]
    fn velocity_target_examples() {
        let lin = InterpolantSchedule::linear();
        let x = tensor1(&[1.0f64, 0.0]);
        let e = tensor1(&[0.0f64, 1.0]);
        for &t in &[0.0, 0.3, 0.9] {
            assert_eq!(lin.velocity_target(&x, &e, t).unwrap().data(), &[-1.0, 1.0]);
        }
        // eps == x* gives zero velocity under the linear schedule
        let u = lin.velocity_target(&x, &x, 0.4).unwrap();
        assert!(u.data().iter().all(|&v| v == 0.0));

        // VP at t=0: α̇=0, σ̇=π/2
        let vp = InterpolantSchedule::vp();
        let u = vp
            .velocity_target(&tensor1(&[1.0f64]), &tensor1(&[2.0f64]), 0.0)
            .unwrap();
        assert!((u.data()[0] - core::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn tra_weight_frozen_values() {
        let lin = InterpolantSchedule::linear();
        // sigmoid(log(0.5/0.50001)) evaluated in high precision.
        let w: f64 = lin.tra_weight(0.5).unwrap();
        assert!((w - 0.49999500005).abs() < 1e-9);

        // Clamped-zero numerator at t=1.
        let w1: f64 = lin.tra_weight(1.0).unwrap();
        assert!(w1 <= 1e-6);
        assert!(w1 > 0.0);

        let w0: f64 = lin.tra_weight(0.0).unwrap();
        assert!(w0 >= 0.999);

        let vp = InterpolantSchedule::vp();
        let wm: f64 = vp.tra_weight(0.5).unwrap();
        assert!((wm - 0.5).abs() < 1e-4);
    }

    #[test]
    fn tra_weight_monotone_on_grid() {
        for s in [InterpolantSchedule::linear(), InterpolantSchedule::vp()] {
            let mut prev = f64::INFINITY;
            for i in 0..=1000 {
                let t = i as f64 / 1000.0;
                let w: f64 = s.tra_weight(t).unwrap();
                assert!(w <= prev + 1e-15, "w not non-increasing at t={t}");
                assert!((0.0..=1.0).contains(&w));
                prev = w;
            }
        }
    }

    #[test]
    fn vp_normalization_on_grid() {
        let s = InterpolantSchedule::vp();
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            let c = s.coefficients(t).unwrap();
            assert!((c.alpha * c.alpha + c.sigma * c.sigma - 1.0).abs() < 1e-12);
            assert!(c.dalpha <= 0.0);
            assert!(c.dsigma >= 0.0);
        }
    }

    #[test]
    fn velocity_to_noise_perfect_velocity_case() {
        let lin = InterpolantSchedule::linear();
        let x = tensor1(&[0.5f64, 0.5]);
        let v = tensor1(&[-1.0f64, 1.0]);
        let eps_hat = lin.velocity_to_noise(&x, &v, 0.5).unwrap();
        assert!((eps_hat.data()[0] - 0.0).abs() < 1e-15);
        assert!((eps_hat.data()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn noise_recovery_round_trip() {
        // velocity_to_noise(perturb(...), velocity_target(...)) recovers eps.
        let mut r = rng::stream(13, Purpose::Data);
        for s in [InterpolantSchedule::linear(), InterpolantSchedule::vp()] {
            for i in 0..1000 {
                let x: Tensor<f64> = rng::normal_tensor(&mut r, &[6]);
                let e: Tensor<f64> = rng::normal_tensor(&mut r, &[6]);
                let t = 0.0015 + 0.997 * (i as f64 / 999.0);
                let c = s.coefficients(t).unwrap();
                if c.sigma <= 1e-3 {
                    continue;
                }
                let xt = s.perturb(&x, &e, t).unwrap();
                let u = s.velocity_target(&x, &e, t).unwrap();
                let eps_hat = s.velocity_to_noise(&xt, &u, t).unwrap();
                for (a, b) in eps_hat.data().iter().zip(e.data()) {
                    assert!((a - b).abs() < 1e-8, "kind {:?} t={t}", s.kind);
                }
            }
        }
    }

    #[test]
    fn score_guard_rejects_sigma_underflow() {
        let lin = InterpolantSchedule::linear();
        let x = tensor1(&[1.0f64]);
        let v = tensor1(&[1.0f64]);
        assert!(lin.velocity_to_score(&x, &v, 0.0).is_err());
        assert!(lin.velocity_to_score(&x, &v, 0.5).is_ok());
    }
}
