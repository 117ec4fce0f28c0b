//! Linear-path conditional flow matching: interpolation, velocity regression
//! loss, and backward ODE samplers.
//!
//! Time runs from data (`t = 0`) to noise (`t = 1`); the regression target is
//! the constant path velocity `x1 − x0`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

use crate::config::SolverMethod;
use crate::numerics::{NumericsError, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub x0: Tensor,
    pub x1: Tensor,
    pub t: f32,
    pub xt: Tensor,
    pub v_target: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub method: SolverMethod,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn euler(steps: usize, seed: u64) -> Self {
        Self { steps, method: SolverMethod::Euler, seed }
    }
}

pub fn interpolate(x0: &Tensor, x1: &Tensor, t: f32) -> Result<FlowSample> {
    x0.check_same_shape(x1, "interpolate")?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Input(format!("flow time {t} outside [0, 1]")));
    }
    let xt = x0
        .data()
        .iter()
        .zip(x1.data())
        .map(|(&a, &b)| {
            // Exact at both endpoints.
            if t == 0.0 {
                a
            } else if t == 1.0 {
                b
            } else {
                (1.0 - t) * a + t * b
            }
        })
        .collect();
    let v = x0.data().iter().zip(x1.data()).map(|(&a, &b)| b - a).collect();
    Ok(FlowSample {
        x0: x0.clone(),
        x1: x1.clone(),
        t,
        xt: Tensor::new(x0.shape(), xt)?,
        v_target: Tensor::new(x0.shape(), v)?,
    })
}

/// Slope of the best linear predictor of the velocity from `x_t` when the
/// data is `N(0, σ²)`: `(t − (1−t)σ²) / ((1−t)²σ² + t²)`.
pub fn skip_coefficient(t: f32, sigma_data: f32) -> f32 {
    let (t, s2) = (t as f64, (sigma_data as f64).powi(2));
    ((t - (1.0 - t) * s2) / ((1.0 - t).powi(2) * s2 + t * t)) as f32
}


/// Mean squared velocity error.
pub fn fm_loss(v_pred: &Tensor, v_target: &Tensor) -> Result<f32> {
    v_pred.check_same_shape(v_target, "fm_loss")?;
    let n = v_pred.len().max(1) as f64;
    let s: f64 = v_pred
        .data()
        .iter()
        .zip(v_target.data())
        .map(|(&a, &b)| {
            let d = (a - b) as f64;
            d * d
        })
        .sum();
    Ok((s / n) as f32)
}

/// Standard-normal tensor of the given shape.
pub fn standard_normal<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Tensor::new(shape, data).expect("shape product")
}

/// Draws `x(1)` from a standard normal seeded by `cfg.seed` and integrates
/// `dx/dt = v(x, t, cond)` backward from `t = 1` to `t = 0` on a uniform grid.
pub fn sample<C: ?Sized, F>(mut velocity: F, cond: &C, shape: &[usize], cfg: SamplerConfig) -> Result<Tensor>
where
    F: FnMut(&Tensor, f32, &C) -> Result<Tensor>,
{
    if cfg.steps == 0 {
        return Err(Error::Config("sampler steps must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x1 = standard_normal(shape, &mut rng);
    integrate(&mut velocity, cond, x1, cfg)
}

/// Backward integration from a given `x(1)`.
pub fn integrate<C: ?Sized, F>(velocity: &mut F, cond: &C, x1: Tensor, cfg: SamplerConfig) -> Result<Tensor>
where
    F: FnMut(&Tensor, f32, &C) -> Result<Tensor>,
{
    let n = cfg.steps;
    if n == 0 {
        return Err(Error::Config("sampler steps must be at least 1".into()));
    }
    let h = 1.0 / n as f32;
    let mut x = x1;
    let mut eval = |x: &Tensor, t: f32, step: usize| -> Result<Tensor> {
        let v = velocity(x, t, cond)?;
        v.check_same_shape(x, "velocity")?;
        if !v.is_finite() {
            return Err(Error::Numeric { step, context: format!("non-finite velocity at t={t}") });
        }
        Ok(v)
    };
    for i in 0..n {
        let t = 1.0 - i as f32 * h;
        let t_next = 1.0 - (i + 1) as f32 * h;
        let v = eval(&x, t, i)?;
        match cfg.method {
            SolverMethod::Euler => axpy(&mut x, -h, &v),
            SolverMethod::Heun => {
                let mut pred = x.clone();
                axpy(&mut pred, -h, &v);
                let v2 = eval(&pred, t_next.max(0.0), i)?;
                for ((xi, &a), &b) in x.data_mut().iter_mut().zip(v.data()).zip(v2.data()) {
                    *xi -= 0.5 * h * (a + b);
                }
            }
        }
    }
    Ok(x)
}

fn axpy(x: &mut Tensor, a: f32, v: &Tensor) {
    x.data_mut().iter_mut().zip(v.data()).for_each(|(xi, &vi)| *xi += a * vi);
}

impl From<Error> for NumericsError {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerics(n) => n,
            other => NumericsError::Contract(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f32]) -> Tensor {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn endpoints_and_midpoint() {
        let s = interpolate(&t1(&[2.0]), &t1(&[6.0]), 0.25).unwrap();
        assert_eq!(s.xt.data(), &[3.0]);
        assert_eq!(s.v_target.data(), &[4.0]);
        let a = t1(&[0.1, -3.0]);
        let b = t1(&[7.0, 0.3]);
        assert_eq!(interpolate(&a, &b, 0.0).unwrap().xt, a);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap().xt, b);
        assert!(interpolate(&a, &t1(&[1.0]), 0.5).is_err());
        assert!(interpolate(&a, &b, 1.5).is_err());
    }

    #[test]
    fn loss_mean_reduction() {
        assert_eq!(fm_loss(&t1(&[0.0, 0.0]), &t1(&[3.0, 4.0])).unwrap(), 12.5);
        assert_eq!(fm_loss(&t1(&[1.0, 2.0]), &t1(&[1.0, 2.0])).unwrap(), 0.0);
    }

    #[test]
    fn constant_field_is_exact() {
        for method in [SolverMethod::Euler, SolverMethod::Heun] {
            for steps in [1, 3, 10] {
                let cfg = SamplerConfig { steps, method, seed: 9 };
                let x = sample(|x, _, c: &f32| Ok(x.map(|_| *c)), &0.75f32, &[5], cfg).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(9);
                let x1 = standard_normal(&[5], &mut rng);
                for (a, b) in x.data().iter().zip(x1.data()) {
                    assert!((a - (b - 0.75)).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn single_euler_step() {
        let cfg = SamplerConfig::euler(1, 4);
        let x = sample(|x, t, _: &()| Ok(x.map(|v| v * v + t)), &(), &[3], cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x1 = standard_normal(&[3], &mut rng);
        for (a, b) in x.data().iter().zip(x1.data()) {
            assert!((a - (b - (b * b + 1.0))).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_velocity_reports_step() {
        let cfg = SamplerConfig::euler(4, 0);
        let r = sample(
            |x, t, _: &()| Ok(x.map(|v| if t < 0.6 { f32::NAN } else { v })),
            &(),
            &[2],
            cfg,
        );
        match r {
            Err(Error::Numeric { step, .. }) => assert_eq!(step, 2),
            other => panic!("{other:?}"),
        }
    }
}
