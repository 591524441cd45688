//! Central finite-difference checks of analytic gradients.

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Worst disagreement found by [`check_gradients`].
#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Analytic and numeric values at the worst entry.
    pub worst: (f64, f64),
}

/// Compare the gradient of the scalar built by `f` against central
/// differences. `entries` selects `(input, element)` pairs; `None` checks
/// every element of every input.
///
/// The relative error of one entry is `|a - n| / max(|a|, |n|, floor)`.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    f: F,
    step: f64,
    floor: f64,
    entries: Option<&[(usize, usize)]>,
) -> GradReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::inference();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);

    let all: Vec<(usize, usize)>;
    let entries = match entries {
        Some(e) => e,
        None => {
            all = inputs.iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j))).collect();
            &all
        }
    };

    let mut report = GradReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for &(i, j) in entries {
        let analytic = grads.get(vars[i]).map_or(0.0, |t| t.data()[j]);
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + step;
        let plus = eval(&work);
        work[i].data_mut()[j] = orig - step;
        let minus = eval(&work);
        work[i].data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(floor);
        if rel > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = (analytic, numeric);
        }
        report.max_abs_error = report.max_abs_error.max(abs);
        report.checked += 1;
    }
    report
}
