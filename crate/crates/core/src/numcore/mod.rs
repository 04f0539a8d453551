//! Dense f64 tensors, a reverse-mode tape, MLP layers and Adam.

mod checkpoint;
mod graph;
mod mlp;
mod params;
mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{Gradients, Graph, Var};
pub use mlp::{Activation, MlpSpec};
pub use params::{grad_norm, loss_and_grads, AdamConfig, Binding, Grads, ParamSet};
pub use tensor::Tensor;

use crate::{Error, Result};

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Invalid("softmax of an empty vector".into()));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Invalid("log_softmax of an empty vector".into()));
    }
    Ok(graph::log_softmax_rows(logits, logits.len()))
}

/// Compares analytic gradients against central differences.
///
/// `f` returns the loss and its analytic gradients at the given parameters.
/// The result is the maximum over all scalars of
/// `|analytic − cd| / max(|analytic|, |cd|, 1e-8)`.
///
/// Relu kinks are not handled: callers perturb parameters away from them.
pub fn finite_diff_check<F>(params: &ParamSet, eps: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&ParamSet) -> Result<(f64, Grads)>,
{
    let (_, analytic) = f(params)?;
    let mut probe = params.clone();
    let mut worst = 0.0_f64;
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let a = analytic.get(&name).ok_or_else(|| Error::MissingGradient(name.clone()))?.clone();
        for i in 0..a.len() {
            let orig = probe.get(&name).expect("same names").data()[i];
            probe.get_mut(&name).expect("same names").data_mut()[i] = orig + eps;
            let (up, _) = f(&probe)?;
            probe.get_mut(&name).expect("same names").data_mut()[i] = orig - eps;
            let (down, _) = f(&probe)?;
            probe.get_mut(&name).expect("same names").data_mut()[i] = orig;
            let cd = (up - down) / (2.0 * eps);
            let an = a.data()[i];
            let err = (an - cd).abs() / an.abs().max(cd.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = softmax(&[2.0; 4]).unwrap();
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_analytic_pair() {
        let p = softmax(&[0.0, 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_empty() {
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn quadratic_gradcheck_is_tight() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![0.4, -1.3, 2.2]));
        let err = finite_diff_check(&p, 1e-5, |ps| {
            let mut g = Graph::new();
            let b = ps.bind(&mut g);
            let w = b.var("w")?;
            let sq = g.square(w);
            let l = g.sum(sq);
            let grads = loss_and_grads(&g, l, &b)?;
            Ok((g.value(l).item(), grads))
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn composite_loss_gradcheck() {
        use crate::rng::seeded;
        let spec = MlpSpec::new(4, &[5, 3], 3, Activation::Tanh, Activation::Identity);
        let mut p = ParamSet::new();
        spec.init("m.", &mut p, &mut seeded(3), 1.0).unwrap();
        let x = Tensor::matrix(2, 4, vec![0.1, -0.4, 0.9, 0.3, -1.0, 0.2, 0.5, 0.7]).unwrap();
        let err = finite_diff_check(&p, 1e-5, |ps| {
            let mut g = Graph::new();
            let b = ps.bind(&mut g);
            let xi = g.constant(x.clone());
            let out = spec.forward(&mut g, &b, "m.", xi)?;
            let ls = g.log_softmax(out)?;
            let picked = g.pick(ls, vec![0, 2])?;
            let e = g.exp(out);
            let s = g.sum(e);
            let m = g.mean(picked);
            let l = g.sub(s, m)?;
            let grads = loss_and_grads(&g, l, &b)?;
            Ok((g.value(l).item(), grads))
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    proptest! {
        #[test]
        fn softmax_normalised_positive_and_shift_invariant(
            logits in proptest::collection::vec(-30.0f64..30.0, 1..12),
            shift in -50.0f64..50.0,
        ) {
            let p = softmax(&logits).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
