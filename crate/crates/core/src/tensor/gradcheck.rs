use super::{Gradients, Layer, ParamStore, Params, Tensor};
use crate::error::Result;

/// Default central-difference step.
pub const GRAD_CHECK_EPS: f64 = 1e-5;

/// Worst coordinate of one parameter or input tensor.
#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against central finite differences over every
/// parameter coordinate and every input coordinate.
///
/// `loss` evaluates the scalar objective; `analytic` returns the parameter
/// gradients and one gradient tensor per input.
pub fn grad_check<L, A>(
    store: &mut ParamStore,
    inputs: &mut [Tensor],
    loss: L,
    analytic: A,
    eps: f64,
) -> Result<GradCheckReport>
where
    L: Fn(&Params, &[Tensor]) -> Result<f64>,
    A: Fn(&Params, &[Tensor]) -> Result<(Gradients, Vec<Tensor>)>,
{
    let (param_grads, input_grads) = analytic(&store.params, inputs)?;
    let mut report = GradCheckReport::default();

    for id in store.params.ids().collect::<Vec<_>>() {
        let mut entry = blank(store.params.name(id));
        for i in 0..store.params.get(id).len() {
            let orig = store.params.get(id).data()[i];
            store.params.get_mut(id).data_mut()[i] = orig + eps;
            let plus = loss(&store.params, inputs)?;
            store.params.get_mut(id).data_mut()[i] = orig - eps;
            let minus = loss(&store.params, inputs)?;
            store.params.get_mut(id).data_mut()[i] = orig;
            update(&mut entry, i, param_grads.get(id).data()[i], (plus - minus) / (2.0 * eps));
        }
        report.entries.push(entry);
    }

    for (k, grad) in input_grads.iter().enumerate() {
        let mut entry = blank(&format!("input{k}"));
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            inputs[k].data_mut()[i] = orig + eps;
            let plus = loss(&store.params, inputs)?;
            inputs[k].data_mut()[i] = orig - eps;
            let minus = loss(&store.params, inputs)?;
            inputs[k].data_mut()[i] = orig;
            update(&mut entry, i, grad.data()[i], (plus - minus) / (2.0 * eps));
        }
        report.entries.push(entry);
    }
    Ok(report)
}

/// Checks a single-input layer under the objective `Σ r ⊙ layer(x)` for a
/// fixed projection `r` of the output's shape.
pub fn grad_check_layer<Ly: Layer>(
    layer: &Ly,
    store: &mut ParamStore,
    x: Tensor,
    projection: &Tensor,
    eps: f64,
) -> Result<GradCheckReport> {
    let mut inputs = [x];
    grad_check(
        store,
        &mut inputs,
        |p, xs| Ok(layer.forward(p, &xs[0])?.0.dot(projection)),
        |p, xs| {
            let mut grads = Gradients::zeros_like(p);
            let (_, cache) = layer.forward(p, &xs[0])?;
            let gx = layer.backward(p, &mut grads, &cache, projection)?;
            Ok((grads, vec![gx]))
        },
        eps,
    )
}

fn blank(name: &str) -> GradCheckEntry {
    GradCheckEntry {
        name: name.to_string(),
        max_rel_err: 0.0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    }
}

fn update(entry: &mut GradCheckEntry, index: usize, analytic: f64, numeric: f64) {
    let err = relative_error(analytic, numeric);
    if err > entry.max_rel_err || (index == 0 && entry.max_rel_err == 0.0) {
        *entry = GradCheckEntry {
            name: std::mem::take(&mut entry.name),
            max_rel_err: err,
            index,
            analytic,
            numeric,
        };
    }
}
