use super::graph::{Graph, Var};
use super::model::{ForwardOptions, ForwardVars, GraphInput, Model};
use crate::Result;

/// Analytic against central-difference derivative of one parameter entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub relative_error: f64,
}

/// Compares backprop gradients of `loss` with central differences at the
/// entries `picks` (tensor, flat index). Entries whose perturbation flips a
/// ReLU are returned as `None`: the loss is not differentiable across them.
pub fn check_gradients<F>(
    model: &Model,
    batch: &[GraphInput],
    loss: F,
    picks: &[(usize, usize)],
    eps: f64,
    floor: f64,
) -> Result<Vec<Option<GradCheck>>>
where
    F: Fn(&mut Graph, &ForwardVars) -> Result<Var>,
{
    let run = |m: &Model| -> Result<(Graph, Var)> {
        let mut g = Graph::new();
        let fv = m.forward_graph(&mut g, batch, &ForwardOptions::default())?;
        let l = loss(&mut g, &fv)?;
        Ok((g, l))
    };
    let mut base = model.clone();
    base.zero_grad();
    let (g, l) = run(&base)?;
    g.backward(l, &mut base.params)?;
    let pattern = g.relu_pattern();

    let mut out = Vec::with_capacity(picks.len());
    for &(t, i) in picks {
        let analytic = base.params[t].grad.as_ref().map_or(0.0, |gr| gr[i]);
        let mut m = model.clone();
        let x0 = m.params[t].data[i];
        m.params[t].data[i] = x0 + eps;
        let (gp, lp) = run(&m)?;
        m.params[t].data[i] = x0 - eps;
        let (gm, lm) = run(&m)?;
        if gp.relu_pattern() != pattern || gm.relu_pattern() != pattern {
            out.push(None);
            continue;
        }
        let numeric = (gp.scalar(lp) - gm.scalar(lm)) / (2.0 * eps);
        let relative_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        out.push(Some(GradCheck { tensor: t, index: i, analytic, numeric, relative_error }));
    }
    Ok(out)
}
