//! Central finite-difference verification of analytic gradients.

use alloc::vec::Vec;

use super::{Scalar, Tensor};
use crate::{ParamSet, Result};

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(1e-8, |a| + |n|)` over all parameter entries.
    pub max_relative_error: f64,
    /// Parameter name and flat entry index where the maximum occurred.
    pub worst: Option<(alloc::string::String, usize)>,
    pub entries: usize,
}

/// Relative error between one analytic and one numeric derivative.
#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

pub fn max_relative_error<S: Scalar, T: Scalar>(analytic: &[Tensor<S>], numeric: &[Tensor<T>]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(&a, &n)| relative_error(a.as_f64(), n.as_f64()))
        .fold(0.0, f64::max)
}

/// `(f(theta + eps) - f(theta - eps)) / (2 eps)` for every parameter entry.
pub fn numeric_gradient<S: Scalar>(
    params: &ParamSet<S>,
    eps: f64,
    mut f: impl FnMut(&ParamSet<S>) -> Result<S>,
) -> Result<Vec<Tensor<f64>>> {
    let step = S::from_f64(eps);
    let width = S::from_f64(2.0 * eps);
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let n = params.get(i).len();
        let mut g = Vec::with_capacity(n);
        for j in 0..n {
            let orig = params.get(i).data()[j];
            probe.get_mut(i).data_mut()[j] = orig + step;
            let plus = f(&probe)?;
            probe.get_mut(i).data_mut()[j] = orig - step;
            let minus = f(&probe)?;
            probe.get_mut(i).data_mut()[j] = orig;
            g.push(((plus - minus) / width).as_f64());
        }
        out.push(Tensor::new(params.get(i).shape().to_vec(), g)?);
    }
    Ok(out)
}

/// Compares `analytic` (dense, in parameter order) against central
/// differences of `f` around `params`.
pub fn grad_check<S: Scalar>(
    params: &ParamSet<S>,
    analytic: &[Tensor<S>],
    eps: f64,
    f: impl FnMut(&ParamSet<S>) -> Result<S>,
) -> Result<GradCheckReport> {
    let numeric = numeric_gradient(params, eps, f)?;
    Ok(report(params, analytic, &numeric))
}

pub(crate) fn report<S: Scalar, T: Scalar>(
    params: &ParamSet<T>,
    analytic: &[Tensor<S>],
    numeric: &[Tensor<f64>],
) -> GradCheckReport {
    let mut worst = None;
    let mut max = 0.0;
    let mut entries = 0;
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (j, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            entries += 1;
            let e = relative_error(av.as_f64(), nv);
            if e > max || worst.is_none() {
                max = f64::max(max, e);
                worst = Some((alloc::string::String::from(params.name(i)), j));
            }
        }
    }
    GradCheckReport {
        max_relative_error: max,
        worst,
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(t: Tensor<f64>) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.push("x", t);
        ps
    }

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::from_rows(&[[0.5, -1.25, 2.0]]);
        let x = Tensor::from_rows(&[[0.1, 0.2, 0.3]]);
        let ps = single(x);
        let f = |p: &ParamSet<f64>| -> Result<f64> {
            Ok(p.get(0).data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
        };
        let analytic = alloc::vec![w.clone()];
        let r = grad_check(&ps, &analytic, 1e-4, f).unwrap();
        assert!(r.max_relative_error < 1e-6, "{r:?}");
        assert_eq!(r.entries, 3);
    }

    fn softmax_ce(p: &ParamSet<f64>, label: usize) -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut g = Graph::new();
        let x = g.param(0, p.get(0));
        let l = g.cross_entropy(x, label)?;
        let v = g.value(l).data()[0];
        let grads = g.backward(l)?.into_dense(p.iter().map(|(_, t)| t.shape()));
        Ok((v, grads))
    }

    #[test]
    fn softmax_cross_entropy_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let ps = single(Tensor::matrix(1, 4, logits.clone()).unwrap());
            let label = rng.random_range(0..4);
            let (_, analytic) = softmax_ce(&ps, label).unwrap();
            // Also equals probs - onehot.
            let max = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|v| (v - max).exp()).sum();
            for (j, &v) in logits.iter().enumerate() {
                let expect = (v - max).exp() / z - if j == label { 1.0 } else { 0.0 };
                assert!((analytic[0].data()[j] - expect).abs() < 1e-12);
            }
            let r = grad_check(&ps, &analytic, 1e-4, |p| softmax_ce(p, label).map(|r| r.0)).unwrap();
            assert!(r.max_relative_error < 1e-5, "{r:?}");
        }
    }

    #[test]
    fn corrupted_softmax_rule_is_detected() {
        // d/dx sum(w * softmax(x)) with the row-sum term dropped: y * w.
        let x = Tensor::from_rows(&[[0.3, -0.2, 1.1, 0.4]]);
        let w = Tensor::from_rows(&[[1.0, -2.0, 0.5, 3.0]]);
        let ps = single(x.clone());
        let f = |p: &ParamSet<f64>| -> Result<f64> {
            let mut g = Graph::new();
            let nx = g.param(0, p.get(0));
            let nw = g.input(&w);
            let s = g.softmax_rows(nx)?;
            let m = g.mul(s, nw)?;
            let l = g.sum(m)?;
            Ok(g.value(l).data()[0])
        };
        let mut y = x.data().to_vec();
        crate::numerics::graph::softmax_in_place(&mut y);
        let wrong: Vec<f64> = y.iter().zip(w.data()).map(|(a, b)| a * b).collect();
        let analytic = alloc::vec![Tensor::matrix(1, 4, wrong).unwrap()];
        let r = grad_check(&ps, &analytic, 1e-4, f).unwrap();
        assert!(r.max_relative_error > 1e-1, "{r:?}");
    }
}
