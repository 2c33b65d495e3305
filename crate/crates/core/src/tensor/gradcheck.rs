use super::{ParamSet, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares tape gradients with central differences for every scalar of
/// every parameter. `loss_fn` must be deterministic.
///
/// The relative error of one element is
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)` with
/// `floor = 1e-7 * max(1, |loss|)`. Central differences lose about
/// `eps * |loss| / h` to rounding, so gradients that are exactly zero (a
/// key bias under softmax, say) would otherwise report pure rounding noise.
pub fn grad_check<F>(params: &ParamSet, h: f64, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet, &mut Tape) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be > 0, got {h}"
        )));
    }
    let mut work = params.clone();
    work.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(&work, &mut tape)?;
    let floor = 1e-7 * tape.value(loss).item().abs().max(1.0);
    tape.backward_into(loss, &mut work)?;
    let analytic: Vec<Vec<f64>> = work
        .iter()
        .map(|(_, t)| t.grad().map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    work.zero_grad();

    let mut eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(p, &mut tape)?;
        Ok(tape.value(loss).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<_> = work.ids().collect();
    for id in ids {
        let name = work.name(id).to_string();
        for j in 0..work.get(id).len() {
            let orig = work.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[id.index()][j];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of {name}[{j}]: analytic {a}, numeric {numeric}"
                )));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), j));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
