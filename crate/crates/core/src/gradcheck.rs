//! Central finite-difference gradient checks.

use rand::seq::index::sample;
use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore, Session};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const RTOL: f64 = 1e-4;
/// Absolute slack for entries whose true gradient is ~0, where central
/// differences are dominated by rounding.
pub const ATOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Tolerance for one-sided differences, whose truncation error is first order.
pub const ONE_SIDED_RTOL: f64 = 1e-3;

fn agrees(a: f64, n: f64, rtol: f64) -> bool {
    (a - n).abs() <= rtol * a.abs().max(n.abs()) + ATOL
}

/// A relu/min/max kink inside `[x - h, x + h]` spoils the central difference
/// but leaves the one-sided difference on the kink-free side intact, so the
/// analytic value must then match one of the two one-sided slopes.
fn agrees_near_kink(a: f64, up: f64, mid: f64, down: f64) -> bool {
    let right = (up - mid) / STEP;
    let left = (mid - down) / STEP;
    let kinked = (right - left).abs() > ONE_SIDED_RTOL * right.abs().max(left.abs()) + ATOL / STEP;
    kinked && (agrees(a, right, ONE_SIDED_RTOL) || agrees(a, left, ONE_SIDED_RTOL))
}

/// Relative error with the same absolute floor used by the pass criterion.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs().max(n.abs()) + ATOL / RTOL)
}

/// Checks every element of every input of a scalar function built on a graph.
pub fn check_gradients(
    inputs: &[Tensor],
    f: impl Fn(&Graph, &[Var]) -> Var,
) -> Result<f64, Mismatch> {
    check_gradients_tol(inputs, RTOL, f)
}

pub fn check_gradients_tol(
    inputs: &[Tensor],
    rtol: f64,
    f: impl Fn(&Graph, &[Var]) -> Var,
) -> Result<f64, Mismatch> {
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&g, &vars);
    let grads = g.backward(out);

    let eval = |inputs: &[Tensor]| {
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, &vars);
        g.scalar(out)
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].rows(), inputs[k].cols()));
        for e in 0..inputs[k].len() {
            let orig = work[k].data()[e];
            work[k].data_mut()[e] = orig + STEP;
            let up = eval(&work);
            work[k].data_mut()[e] = orig - STEP;
            let down = eval(&work);
            work[k].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.data()[e];
            if !agrees(a, numeric, rtol) && agrees_near_kink(a, up, eval(&work), down) {
                continue;
            }
            worst = worst.max(relative_error(a, numeric));
            if !agrees(a, numeric, rtol) {
                return Err(Mismatch {
                    input: k,
                    element: e,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(worst)
}

/// Checks gradients of stored parameters. With `sample = Some(n)`, only `n`
/// randomly chosen scalar entries across the selected parameters are probed.
pub fn check_param_gradients<R: Rng>(
    store: &ParamStore,
    params: &[ParamId],
    rtol: f64,
    sample_size: Option<usize>,
    rng: &mut R,
    f: impl Fn(&Session) -> Var,
) -> Result<f64, Mismatch> {
    let g = Graph::new();
    let s = Session::new(&g, store);
    let out = f(&s);
    let grads = g.backward(out);
    let analytic: Vec<Tensor> = params
        .iter()
        .map(|&id| {
            s.param_grads(&grads)
                .into_iter()
                .find(|(p, _)| *p == id)
                .map(|(_, t)| t)
                .unwrap_or_else(|| {
                    let v = store.value(id);
                    Tensor::zeros(v.rows(), v.cols())
                })
        })
        .collect();

    let mut entries: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(k, &id)| (0..store.value(id).len()).map(move |e| (k, e)))
        .collect();
    if let Some(n) = sample_size {
        if n < entries.len() {
            let picked = sample(rng, entries.len(), n);
            entries = picked.iter().map(|i| entries[i]).collect();
        }
    }

    let mut work = store.clone();
    let eval = |st: &ParamStore| {
        let g = Graph::new();
        let s = Session::new(&g, st);
        let out = f(&s);
        g.scalar(out)
    };
    let mut worst = 0.0f64;
    for (k, e) in entries {
        let id = params[k];
        let orig = work.value(id).data()[e];
        work.value_mut(id).data_mut()[e] = orig + STEP;
        let up = eval(&work);
        work.value_mut(id).data_mut()[e] = orig - STEP;
        let down = eval(&work);
        work.value_mut(id).data_mut()[e] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[k].data()[e];
        if !agrees(a, numeric, rtol) && agrees_near_kink(a, up, eval(&work), down) {
            continue;
        }
        worst = worst.max(relative_error(a, numeric));
        if !agrees(a, numeric, rtol) {
            return Err(Mismatch {
                input: k,
                element: e,
                analytic: a,
                numeric,
            });
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kink_inside_the_step_is_judged_one_sided() {
        // relu at x = 3e-6: the central difference straddles the kink.
        let x = Tensor::from_vec(1, 1, vec![3e-6]);
        assert!(check_gradients(&[x], |g, v| g.sum(g.relu(v[0]))).is_ok());
    }

    #[test]
    fn wrong_gradients_are_caught() {
        // Detached inputs leave the tape gradient short of the true slope.
        let x = Tensor::from_vec(1, 2, vec![0.3, -0.7]);
        let r = check_gradients(&[x], |g, v| {
            let value = g.value(v[0]).clone();
            let wrong = g.constant(value);
            g.sum(g.add(g.mul(wrong, wrong), g.scale(v[0], 0.0)))
        });
        assert!(r.is_err());
        let x = Tensor::from_vec(1, 1, vec![3e-6]);
        let r = check_gradients(&[x], |g, v| {
            let value = g.value(v[0]).clone();
            let detached = g.constant(value);
            g.sum(g.add(g.relu(detached), g.scale(v[0], 0.5)))
        });
        assert!(r.is_err(), "a kink must not excuse a slope matching neither side");
    }
}
