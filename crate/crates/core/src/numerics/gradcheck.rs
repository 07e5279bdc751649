use super::NumericsError;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(|a|, |n|, 1e-12)` over the checked entries.
    pub max_relative_error: f64,
    /// `(parameter index, relative error)` for every checked entry.
    pub per_parameter_errors: Vec<(usize, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }

    /// Entries whose error is at or above the tolerance.
    pub fn failures(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.per_parameter_errors
            .iter()
            .copied()
            .filter(move |&(_, e)| e >= self.tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Checks every entry of `analytic` against `(f(θ+δ) - f(θ-δ)) / 2δ`.
pub fn grad_check<F>(
    loss: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NumericsError>
where
    F: FnMut(&[f64]) -> f64,
{
    let all: Vec<usize> = (0..params.len()).collect();
    grad_check_at(loss, params, analytic, &all, step, tolerance)
}

/// Like [`grad_check`] but only perturbs the listed parameter indices, for
/// parameter vectors too large to check exhaustively.
pub fn grad_check_at<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NumericsError>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(NumericsError::InvalidStep(step));
    }
    if analytic.len() != params.len() {
        return Err(NumericsError::LengthMismatch {
            context: "grad_check analytic gradient",
            expected: params.len(),
            actual: analytic.len(),
        });
    }
    let mut theta = params.to_vec();
    let mut per = Vec::with_capacity(indices.len());
    let mut max = 0.0f64;
    for &i in indices {
        let orig = theta[i];
        theta[i] = orig + step;
        let up = loss(&theta);
        theta[i] = orig - step;
        let down = loss(&theta);
        theta[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(NumericsError::NonFinite {
                context: "grad_check loss",
            });
        }
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        max = max.max(err);
        per.push((i, err));
    }
    Ok(GradCheckReport {
        max_relative_error: max,
        per_parameter_errors: per,
        tolerance,
    })
}
