//! Box-constrained Levenberg–Marquardt.
//!
//! Classic Marquardt damping: the normal matrix `JᵀJ` is augmented by
//! `λ·diag(JᵀJ)`, `λ` starts at `damping_init` and is divided by
//! `damping_down` after an accepted step and multiplied by `damping_up`
//! after a rejected one. Steps are projected onto the parameter box and the
//! model is re-evaluated at the projected point, so only steps that lower χ²
//! are ever accepted.

use super::{FitOptions, FitOutcome, FitStatus, Params};
use crate::datacube::SweepAxis;
use crate::error::{Error, Result};
use crate::models::{Bounds, ModelSpec, MAX_PARAMS};
use crate::util::cholesky_solve;

const LAMBDA_MAX: f64 = 1e16;
const LAMBDA_MIN: f64 = 1e-20;

/// A scalar curve `y = f(x; p)` with an analytic gradient.
pub trait CurveModel: Sync {
    fn n_params(&self) -> usize;
    fn value(&self, x: f64, p: &[f64]) -> f64;
    fn value_and_grad(&self, x: f64, p: &[f64], grad: &mut [f64]) -> f64;
}

impl CurveModel for ModelSpec {
    fn n_params(&self) -> usize {
        ModelSpec::n_params(self)
    }

    #[inline]
    fn value(&self, x: f64, p: &[f64]) -> f64 {
        ModelSpec::value(self, x, p)
    }

    #[inline]
    fn value_and_grad(&self, x: f64, p: &[f64], grad: &mut [f64]) -> f64 {
        ModelSpec::value_and_grad(self, x, p, grad)
    }
}

fn chisq_at<M: CurveModel>(model: &M, xs: &[f64], ys: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - model.value(x, p);
        s += r * r;
    }
    s
}

/// Builds `JᵀJ` (row-major `n × n`) and `Jᵀr`, returning χ².
fn normal_equations<M: CurveModel>(
    model: &M,
    xs: &[f64],
    ys: &[f64],
    p: &[f64],
    jtj: &mut [f64; MAX_PARAMS * MAX_PARAMS],
    jtr: &mut [f64; MAX_PARAMS],
) -> f64 {
    let n = p.len();
    jtj.fill(0.0);
    jtr.fill(0.0);
    let mut grad = [0.0; MAX_PARAMS];
    let mut chisq = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let m = model.value_and_grad(x, p, &mut grad[..n]);
        let r = y - m;
        chisq += r * r;
        for i in 0..n {
            jtr[i] += grad[i] * r;
            for j in 0..=i {
                jtj[i * n + j] += grad[i] * grad[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            jtj[j * n + i] = jtj[i * n + j];
        }
    }
    chisq
}

/// Unchecked solver core. The seed is projected onto `bounds` first.
///
/// When `trace` is given, the χ² of the seed and of every accepted step is
/// appended to it.
pub fn minimize<M: CurveModel>(
    model: &M,
    xs: &[f64],
    ys: &[f64],
    seed: &[f64],
    bounds: &Bounds,
    options: &FitOptions,
    mut trace: Option<&mut Vec<f64>>,
) -> FitOutcome {
    let n = model.n_params();
    debug_assert_eq!(seed.len(), n);
    let mut p = Params::new(seed);
    for (i, v) in p.as_mut_slice().iter_mut().enumerate() {
        *v = bounds.clamp(i, *v);
    }

    let mut jtj = [0.0; MAX_PARAMS * MAX_PARAMS];
    let mut jtr = [0.0; MAX_PARAMS];
    let mut chisq = normal_equations(model, xs, ys, &p, &mut jtj, &mut jtr);
    if let Some(t) = trace.as_deref_mut() {
        t.push(chisq);
    }
    let outcome = |params: Params, chisq: f64, iterations: usize, status| FitOutcome {
        params,
        chisq,
        iterations: iterations as u32,
        status,
    };
    if !chisq.is_finite() {
        return outcome(p, chisq, 0, FitStatus::SingularNormalMatrix);
    }
    if chisq == 0.0 {
        return outcome(p, chisq, 0, FitStatus::Converged);
    }

    let mut lambda = options.damping_init;
    for iteration in 1..=options.max_iterations.max(1) {
        let max_diag = (0..n).map(|i| jtj[i * n + i]).fold(0.0, f64::max);
        if !(max_diag > 0.0) {
            return outcome(p, chisq, iteration, FitStatus::SingularNormalMatrix);
        }
        let floor = max_diag * 1e-12;

        let mut solved_any = false;
        let mut clipped = false;
        let accepted = loop {
            let mut a = [0.0; MAX_PARAMS * MAX_PARAMS];
            a[..n * n].copy_from_slice(&jtj[..n * n]);
            for i in 0..n {
                a[i * n + i] += lambda * jtj[i * n + i].max(floor);
            }
            let mut step = [0.0; MAX_PARAMS];
            step[..n].copy_from_slice(&jtr[..n]);

            if cholesky_solve(&mut a[..n * n], &mut step[..n], n) {
                solved_any = true;
                let mut trial = p;
                clipped = false;
                for (i, v) in trial.as_mut_slice().iter_mut().enumerate() {
                    let raw = *v + step[i];
                    *v = bounds.clamp(i, raw);
                    clipped |= *v != raw;
                }
                let trial_chisq = chisq_at(model, xs, ys, &trial);
                if trial_chisq < chisq {
                    break Some((trial, trial_chisq));
                }
            }
            lambda *= options.damping_up;
            if lambda > LAMBDA_MAX {
                break None;
            }
        };

        let Some((trial, trial_chisq)) = accepted else {
            // No descent is possible at any damping.
            let status = if !solved_any {
                FitStatus::SingularNormalMatrix
            } else if clipped || (0..n).any(|i| bounds.at_bound(i, p[i])) {
                FitStatus::BoundsStuck
            } else {
                FitStatus::Converged
            };
            return outcome(p, chisq, iteration, status);
        };

        let step_norm = p
            .iter()
            .zip(trial.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let p_norm = trial.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel_drop = (chisq - trial_chisq) / chisq;

        p = trial;
        chisq = normal_equations(model, xs, ys, &p, &mut jtj, &mut jtr);
        debug_assert!(chisq <= trial_chisq * (1.0 + 1e-12) + 1e-300);
        if let Some(t) = trace.as_deref_mut() {
            t.push(chisq);
        }
        lambda = (lambda / options.damping_down).max(LAMBDA_MIN);

        if chisq == 0.0
            || rel_drop < options.chisq_rel_tol
            || step_norm <= options.step_tol * (p_norm + options.step_tol)
        {
            return outcome(p, chisq, iteration, FitStatus::Converged);
        }
    }
    outcome(p, chisq, options.max_iterations, FitStatus::MaxIterations)
}

fn validate(
    series: &[f64],
    sweep: &SweepAxis,
    spec: &ModelSpec,
    seed: &[f64],
    bounds: &Bounds,
) -> Result<()> {
    spec.validate()?;
    spec.check_sweep(sweep)?;
    if series.len() != sweep.len() {
        return Err(Error::DimensionMismatch(format!(
            "series has {} points, sweep has {}",
            series.len(),
            sweep.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let n = spec.n_params();
    if series.len() < n + 1 {
        return Err(Error::SeriesTooShort {
            points: series.len(),
            params: n,
        });
    }
    if seed.len() != n || seed.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "seed must hold {n} finite values"
        )));
    }
    if !bounds.contains(seed) {
        return Err(Error::InvalidParameter(format!(
            "seed {seed:?} outside parameter bounds"
        )));
    }
    Ok(())
}

/// Fits one trace. Per-fit failures are reported in the outcome; invalid
/// input is an error.
pub fn lm_fit(
    series: &[f64],
    sweep: &SweepAxis,
    spec: &ModelSpec,
    seed: &[f64],
    options: &FitOptions,
) -> Result<FitOutcome> {
    let bounds = options.bounds.unwrap_or_else(|| spec.default_bounds());
    validate(series, sweep, spec, seed, &bounds)?;
    Ok(minimize(
        spec,
        sweep.values(),
        series,
        seed,
        &bounds,
        options,
        None,
    ))
}

/// [`lm_fit`] that also returns the χ² after the seed and each accepted step.
pub fn lm_fit_traced(
    series: &[f64],
    sweep: &SweepAxis,
    spec: &ModelSpec,
    seed: &[f64],
    options: &FitOptions,
) -> Result<(FitOutcome, Vec<f64>)> {
    let bounds = options.bounds.unwrap_or_else(|| spec.default_bounds());
    validate(series, sweep, spec, seed, &bounds)?;
    let mut trace = Vec::new();
    let out = minimize(
        spec,
        sweep.values(),
        series,
        seed,
        &bounds,
        options,
        Some(&mut trace),
    );
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datacube::SweepKind;
    use crate::models::eval_hahn;

    fn ms_axis(n: usize, stop: f64) -> SweepAxis {
        SweepAxis::linspace(SweepKind::TimeMs, 0.0, stop, n).unwrap()
    }

    #[test]
    fn recovers_noiseless_hahn() {
        let sweep = ms_axis(40, 8.0);
        let series = eval_hahn(sweep.values(), 0.1, 0.5).unwrap();
        let out = lm_fit(
            &series,
            &sweep,
            &ModelSpec::hahn(),
            &[0.08, 0.6],
            &FitOptions::default(),
        )
        .unwrap();
        assert!(out.converged(), "{out:?}");
        assert!((out.params[0] - 0.1).abs() / 0.1 < 1e-6);
        assert!((out.params[1] - 0.5).abs() / 0.5 < 1e-6);
    }

    #[test]
    fn exact_seed_converges_immediately() {
        let sweep = ms_axis(20, 5.0);
        let series = eval_hahn(sweep.values(), 0.1, 0.5).unwrap();
        let out = lm_fit(
            &series,
            &sweep,
            &ModelSpec::hahn(),
            &[0.1, 0.5],
            &FitOptions::default(),
        )
        .unwrap();
        assert!(out.converged());
        assert!(out.iterations <= 2);
        assert!(out.chisq < 1e-30);
    }

    #[test]
    fn chisq_trace_is_monotone() {
        let sweep = ms_axis(30, 6.0);
        let mut series = eval_hahn(sweep.values(), 0.2, 0.8).unwrap();
        for (i, v) in series.iter_mut().enumerate() {
            *v += 0.003 * ((i * 7 % 11) as f64 - 5.0) / 5.0;
        }
        let (out, trace) = lm_fit_traced(
            &series,
            &sweep,
            &ModelSpec::hahn(),
            &[0.05, 3.0],
            &FitOptions::default(),
        )
        .unwrap();
        assert!(out.converged());
        assert!(trace.len() >= 2);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_series_with_rabi_stays_finite() {
        let sweep = SweepAxis::linspace(SweepKind::TimeUs, 0.0, 3.0, 40).unwrap();
        let series = vec![0.0; 40];
        let out = lm_fit(
            &series,
            &sweep,
            &ModelSpec::rabi(),
            &[0.02, 1.0, 0.3],
            &FitOptions::default(),
        )
        .unwrap();
        assert!(out.params.iter().all(|v| v.is_finite()));
        assert!(out.chisq.is_finite());
        assert!(ModelSpec::rabi().default_bounds().contains(&out.params));
        assert!(
            matches!(out.status, FitStatus::Converged | FitStatus::BoundsStuck),
            "{out:?}"
        );
    }

    #[test]
    fn rejects_nan_and_short_series() {
        let sweep = ms_axis(5, 1.0);
        let spec = ModelSpec::hahn();
        let opts = FitOptions::default();
        let mut s = vec![0.1; 5];
        s[2] = f64::NAN;
        assert!(matches!(
            lm_fit(&s, &sweep, &spec, &[0.1, 0.1], &opts),
            Err(Error::NonFiniteInput)
        ));
        let spec = ModelSpec::ramsey(5.0, 2.158);
        let sweep = SweepAxis::linspace(SweepKind::TimeUs, 0.0, 1.0, 4).unwrap();
        assert!(matches!(
            lm_fit(&[0.1; 4], &sweep, &spec, &[0.1, 0.1, 0.1, 1.0], &opts),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn rejects_seed_outside_bounds() {
        let sweep = ms_axis(10, 1.0);
        let err = lm_fit(
            &[0.1; 10],
            &sweep,
            &ModelSpec::hahn(),
            &[0.1, -1.0],
            &FitOptions::default(),
        );
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }

    struct Flat;

    impl CurveModel for Flat {
        fn n_params(&self) -> usize {
            2
        }
        fn value(&self, _x: f64, _p: &[f64]) -> f64 {
            1.0
        }
        fn value_and_grad(&self, _x: f64, _p: &[f64], grad: &mut [f64]) -> f64 {
            grad.fill(0.0);
            1.0
        }
    }

    #[test]
    fn zero_jacobian_is_reported_singular() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [0.0; 4];
        let out = minimize(
            &Flat,
            &xs,
            &ys,
            &[1.0, 2.0],
            &Bounds::unbounded(),
            &FitOptions::default(),
            None,
        );
        assert_eq!(out.status, FitStatus::SingularNormalMatrix);
        assert_eq!(out.failure_reason(), Some(FitStatus::SingularNormalMatrix));
        assert_eq!(out.chisq, 4.0);
    }
}
