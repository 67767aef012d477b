//! Central finite-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::Scalar;

/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    /// Coordinates whose ±step evaluations left the base point's
    /// piecewise-smooth region (a ReLU sign flip or a changed frame
    /// selection) and were therefore excluded.
    pub skipped_unstable: usize,
}

/// Checks a scalar function of one tensor at `point`.
pub fn grad_check<S, F>(f: F, point: &Tensor<S>, step: S) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var>,
{
    grad_check_many(std::slice::from_ref(point), None, step, |tape, vars| f(tape, vars[0]))
}

/// Checks a scalar function of several tensors.
///
/// `coords`, when given, restricts the check to the listed flat indices of
/// each input (one list per input); otherwise every coordinate is checked.
pub fn grad_check_many<S, F>(
    points: &[Tensor<S>],
    coords: Option<&[Vec<usize>]>,
    step: S,
    f: F,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[Var]) -> Result<Var>,
{
    if let Some(c) = coords {
        if c.len() != points.len() {
            return Err(Error::Config(format!(
                "{} coordinate lists for {} inputs",
                c.len(),
                points.len()
            )));
        }
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let base_sig = tape.branch_signature();
    let grads = tape.backward(out)?;
    drop(tape);

    let eval = |shifted: &[Tensor<S>]| -> Result<(S, u64)> {
        let mut t = Tape::new();
        let vs: Vec<Var> = shifted.iter().map(|p| t.leaf(p.clone(), false)).collect();
        let o = f(&mut t, &vs)?;
        Ok((t.value(o).item(), t.branch_signature()))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
        skipped_unstable: 0,
    };
    let mut work: Vec<Tensor<S>> = points.to_vec();
    for (p, point) in points.iter().enumerate() {
        let all: Vec<usize>;
        let idx: &[usize] = match coords {
            Some(c) => &c[p],
            None => {
                all = (0..point.numel()).collect();
                &all
            }
        };
        for &i in idx {
            let orig = point.data()[i];
            work[p].data_mut()[i] = orig + step;
            let (fp, sp) = eval(&work)?;
            work[p].data_mut()[i] = orig - step;
            let (fm, sm) = eval(&work)?;
            work[p].data_mut()[i] = orig;
            if sp != base_sig || sm != base_sig {
                report.skipped_unstable += 1;
                continue;
            }
            let numeric = ((fp - fm) / (step + step)).as_f64();
            let analytic = grads.get(vars[p]).map_or(0.0, |g| g.data()[i].as_f64());
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((p, i));
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
