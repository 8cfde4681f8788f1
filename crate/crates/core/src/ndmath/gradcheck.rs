use crate::error::{Error, Result};

use super::{Graph, Var};

/// Compares the recorded graph's analytic gradient against central
/// differences obtained by replaying the graph with perturbed leaves.
///
/// Returns the maximum over all parameter entries of
/// `|analytic − numeric| / max(1, |analytic|)`.
pub fn grad_check(graph: &Graph, root: Var, params: &[Var], h: f64) -> Result<f64> {
    if graph.value(root).shape() != (1, 1) {
        return Err(Error::Contract("grad_check needs a scalar root".into()));
    }
    if !(h > 0.0) {
        return Err(Error::Contract(format!("grad_check step must be positive, got {h}")));
    }
    if let Some(p) = params.iter().find(|&&p| !graph.is_leaf(p)) {
        return Err(Error::Contract(format!(
            "grad_check parameter {} is a {} node, not a leaf",
            p.index(),
            graph.op_name(*p)
        )));
    }
    let grads = graph.backward(root)?;
    let mut worst = 0.0f64;
    for &p in params {
        let analytic = grads.get(p);
        let base = graph.value(p).clone();
        for k in 0..base.len() {
            let mut plus = base.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = base.clone();
            minus.as_mut_slice()[k] -= h;
            let fp = graph.replay(root, &[(p, &plus)])?.item();
            let fm = graph.replay(root, &[(p, &minus)])?.item();
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.as_slice()[k];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
