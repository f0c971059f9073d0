use super::{Graph, Tensor, Var};
use crate::error::{usage_err, Result};

/// Compares the tape gradient of a scalar function against central finite
/// differences.
///
/// `f` receives the graph and one leaf per entry of `inputs`, and must return
/// a scalar node. Returns the maximum over all input elements of
/// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(usage_err!("finite-difference step must be positive, got {h}"));
    }
    let eval = |values: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        if !g.value(out)?.is_scalar() {
            return Err(usage_err!(
                "grad_check needs a scalar function, got shape {:?}",
                g.value(out)?.shape()
            ));
        }
        Ok((g, vars, out))
    };

    let (graph, vars, out) = eval(inputs)?;
    let grads = graph.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, &var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(&graph, var)?;
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let (g, _, o) = eval(&probe)?;
            let plus = g.value(o)?.data()[0];
            probe[i].data_mut()[j] = orig - h;
            let (g, _, o) = eval(&probe)?;
            let minus = g.value(o)?.data()[0];
            probe[i].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
