//! Central finite-difference oracle for the autodiff engine.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Which elements of each parameter leaf to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Probe {
    All,
    /// Up to `per_leaf` distinct random elements of every leaf.
    Random { per_leaf: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Leaf (position in the `params` slice) and flat element index of the
    /// worst disagreement.
    pub offending_leaf: Option<usize>,
    pub offending_element: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// `(f(p + eps) - f(p - eps)) / 2 eps`.
///
/// `loss_fn` receives a fresh graph and one parameter variable per entry of
/// `params`, and must return a scalar. It is called once for the analytic
/// pass and twice per probed element.
pub fn finite_difference_check<T, F>(
    loss_fn: F,
    params: &[Tensor<T>],
    epsilon: f64,
    probe: Probe,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.parameter(p.clone())).collect();
        let l = loss_fn(&mut g, &vars)?;
        Ok(g.value(l).item().to_f64_lossy())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.parameter(p.clone())).collect();
    let loss = loss_fn(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut rng = match probe {
        Probe::Random { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Probe::All => None,
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        offending_leaf: None,
        offending_element: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work = params.to_vec();
    let eps = T::lit(epsilon);
    for (leaf, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        let n = params[leaf].len();
        let elements: Vec<usize> = match (&probe, rng.as_mut()) {
            (Probe::Random { per_leaf, .. }, Some(rng)) => {
                let mut picked = index::sample(rng, n, (*per_leaf).min(n)).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..n).collect(),
        };
        for e in elements {
            let orig = params[leaf].data()[e];
            work[leaf].data_mut()[e] = orig + eps;
            let plus = eval(&work)?;
            work[leaf].data_mut()[e] = orig - eps;
            let minus = eval(&work)?;
            work[leaf].data_mut()[e] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.data()[e].to_f64_lossy();
            let err = relative_error(a, numeric);
            let err = if err.is_nan() { f64::INFINITY } else { err };
            report.checked += 1;
            if report.offending_leaf.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.offending_leaf = Some(leaf);
                report.offending_element = Some(e);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let r = finite_difference_check(
            |g, v| {
                let s = g.square(v[0]);
                Ok(g.sum(s))
            },
            &[x],
            1e-5,
            Probe::All,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let x = Tensor::<f64>::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let r = finite_difference_check(
            |g, _| Ok(g.constant(Tensor::scalar(4.0))),
            &[x],
            1e-5,
            Probe::All,
        )
        .unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.analytic, 0.0);
        assert_eq!(r.numeric, 0.0);
    }

    #[test]
    fn detects_wrong_gradient() {
        // GRL flips the analytic sign while the forward value is unchanged.
        let x = Tensor::<f64>::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let r = finite_difference_check(
            |g, v| {
                let r = g.gradient_reversal(v[0]);
                let s = g.square(r);
                Ok(g.sum(s))
            },
            &[x],
            1e-5,
            Probe::All,
        )
        .unwrap();
        assert!(r.max_rel_error > 1.0);
        assert_eq!(r.offending_leaf, Some(0));
    }

    #[test]
    fn random_probe_limits_elements() {
        let x = Tensor::<f64>::full(&[10, 10], 0.3);
        let r = finite_difference_check(
            |g, v| {
                let s = g.square(v[0]);
                Ok(g.sum(s))
            },
            &[x],
            1e-5,
            Probe::Random { per_leaf: 5, seed: 1 },
        )
        .unwrap();
        assert_eq!(r.checked, 5);
    }
}
