//! Central-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

/// Denominator floor for the relative error, so parameters whose true
/// gradient is numerically zero compare on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Entries left out because the difference stencil straddled a ReLU kink.
    pub skipped_kinks: usize,
}

/// Compares the backward pass of `loss_fn` against the fourth-order central
/// difference `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, one scalar
/// parameter at a time, and reports the worst relative error
/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
///
/// The loss is piecewise smooth when the graph contains ReLUs. An entry
/// whose stencil points do not share the ReLU sign pattern of the base
/// point has no derivative to compare against; it is skipped and counted.
///
/// `loss_fn` builds a fresh forward pass on the given graph and returns the
/// scalar loss node; it must be deterministic.
pub fn gradient_check<L>(loss_fn: L, params: &mut ParamStore<f64>, h: f64) -> Result<GradCheckReport>
where
    L: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    gradient_check_subset(loss_fn, params, h, |_, _| true)
}

/// Same as [`gradient_check`], restricted to the entries selected by `keep(param, index)`.
pub fn gradient_check_subset<L, K>(loss_fn: L, params: &mut ParamStore<f64>, h: f64, keep: K) -> Result<GradCheckReport>
where
    L: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
    K: Fn(ParamId, usize) -> bool,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    params.zero_grads();
    let mut graph = Graph::new();
    let loss = loss_fn(&mut graph, params)?;
    check_finite(graph.value(loss).item())?;
    graph.backward(loss, params)?;
    drop(graph);

    let eval = |store: &ParamStore<f64>| -> Result<(f64, Vec<bool>)> {
        let mut g = Graph::inference();
        let l = loss_fn(&mut g, store)?;
        Ok((check_finite(g.value(l).item())?, g.relu_pattern()))
    };
    let base_pattern = eval(params)?.1;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    for pi in 0..params.len() {
        let id = ParamId(pi);
        let analytic: Vec<f64> = match params.tensor(id).grad() {
            Some(g) => g.to_vec(),
            None => vec![0.0; params.tensor(id).numel()],
        };
        for (i, &a) in analytic.iter().enumerate() {
            if !keep(id, i) {
                continue;
            }
            let orig = params.tensor(id).data()[i];
            let mut f = [0.0; 4];
            let mut kink = false;
            for (slot, k) in f.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
                params.get_mut(id).tensor.data_mut()[i] = orig + k * h;
                let point = eval(params);
                params.get_mut(id).tensor.data_mut()[i] = orig;
                let (value, pattern) = point?;
                *slot = value;
                kink |= pattern != base_pattern;
            }
            if kink {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((params.get(id).name.clone(), i));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn check_finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("loss evaluated to {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamGroup;
    use crate::tensor::Tensor;

    fn quadratic(g: &mut Graph<f64>, s: &ParamStore<f64>) -> Result<Var> {
        let x = g.param(s, ParamId(0));
        let c = g.constant(Tensor::from_vec(vec![0.3, -0.1, 0.7]));
        let d = g.sub(x, c)?;
        let sq = g.mul(d, d)?;
        Ok(g.sum(sq))
    }

    #[test]
    fn quadratic_loss_is_exact() {
        let mut s = ParamStore::new();
        s.add("x", ParamGroup::Denoiser, Tensor::from_vec(vec![0.5, -0.9, 0.2]));
        let r = gradient_check(quadratic, &mut s, 1e-4).unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn zero_step_is_rejected() {
        let mut s = ParamStore::new();
        s.add("x", ParamGroup::Denoiser, Tensor::from_vec(vec![0.5, -0.9, 0.2]));
        assert!(matches!(gradient_check(quadratic, &mut s, 0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut s = ParamStore::new();
        s.add("x", ParamGroup::Denoiser, Tensor::from_vec(vec![f64::INFINITY]));
        let r = gradient_check(quadratic_one, &mut s, 1e-4);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    fn quadratic_one(g: &mut Graph<f64>, s: &ParamStore<f64>) -> Result<Var> {
        let x = g.param(s, ParamId(0));
        let sq = g.mul(x, x)?;
        Ok(g.sum(sq))
    }

    #[test]
    fn elementwise_ops_match_differences() {
        let mut s = ParamStore::new();
        s.add("a", ParamGroup::Denoiser, Tensor::from_vec(vec![0.4, -0.3, 0.9, -0.8]));
        s.add("w", ParamGroup::Denoiser, Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
        s.add("e", ParamGroup::Decoder, Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 0.5, 0.0, -0.4]).unwrap());
        let f = |g: &mut Graph<f64>, s: &ParamStore<f64>| -> Result<Var> {
            let a = g.param(s, ParamId(0));
            let w = g.param(s, ParamId(1));
            let e = g.param(s, ParamId(2));
            let sg = g.sigmoid(a);
            let th = g.tanh(a);
            let sp = g.softplus(a);
            let m = g.mul(sg, th)?;
            let z = g.add(m, sp)?;
            let y = g.matvec(w, z)?;
            let row = g.embedding_row(e, 1)?;
            let y = g.add(y, row)?;
            let head = g.slice(y, 0, 2)?;
            let cat = g.concat(&[head, y])?;
            let logits = g.reshape(cat, vec![1, 5])?;
            let ce = g.cross_entropy(logits, &[2])?;
            let r = g.relu(y);
            let zero = g.constant(Tensor::zeros(&[3]));
            let mse = g.mse_loss(r, zero, MseReduction::Mean)?;
            let mse = g.scale(mse, 0.5);
            g.add(ce, mse)
        };
        let r = gradient_check(f, &mut s, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    use crate::graph::MseReduction;

    #[test]
    fn entries_straddling_a_relu_kink_are_skipped() {
        let mut s = ParamStore::new();
        s.add("x", ParamGroup::Denoiser, Tensor::from_vec(vec![1e-7, 0.5, -0.3]));
        let f = |g: &mut Graph<f64>, s: &ParamStore<f64>| -> Result<Var> {
            let x = g.param(s, ParamId(0));
            let r = g.relu(x);
            let sq = g.mul(r, x)?;
            Ok(g.sum(sq))
        };
        let r = gradient_check(f, &mut s, 1e-5).unwrap();
        assert_eq!(r.skipped_kinks, 1);
        assert_eq!(r.checked, 2);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn dilated_strided_conv_matches_differences() {
        let mut s = ParamStore::new();
        let x: Vec<f64> = (0..2 * 13 * 6).map(|i| ((i * 7 % 11) as f64 / 11.0) - 0.5).collect();
        s.add("x", ParamGroup::Denoiser, Tensor::new(vec![2, 13, 6], x).unwrap());
        let k: Vec<f64> = (0..3 * 2 * 3 * 2).map(|i| (i as f64 * 0.61).cos() * 0.5).collect();
        s.add("k", ParamGroup::Denoiser, Tensor::new(vec![3, 2, 3, 2], k).unwrap());
        s.add("b", ParamGroup::Denoiser, Tensor::from_vec(vec![0.1, -0.2, 0.05]));
        let f = |g: &mut Graph<f64>, s: &ParamStore<f64>| -> Result<Var> {
            let x = g.param(s, ParamId(0));
            let k = g.param(s, ParamId(1));
            let b = g.param(s, ParamId(2));
            let y = g.conv2d(x, k, b, (3, 2), (2, 1))?;
            let t = g.tanh(y);
            let sq = g.mul(t, y)?;
            Ok(g.sum(sq))
        };
        let r = gradient_check(f, &mut s, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
