use super::params::Params;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Parameter and flat index holding the largest error.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares `analytic` against central differences of `loss` around `params`.
///
/// Relative error per entry is `|a - n| / max(|a|, |n|, 1e-8)`; the report
/// carries the maximum over every entry.
pub fn gradcheck<P, F>(params: &P, analytic: &P, epsilon: f64, loss: F) -> GradcheckReport
where
    P: Params + Clone,
    F: Fn(&P) -> f64,
{
    gradcheck_with_floor(params, analytic, epsilon, 1e-8, loss)
}

/// As [`gradcheck`], with `floor` in place of `1e-8` in the denominator.
///
/// Deep recurrent stacks have entries around `1e-9` whose central
/// differences are dominated by rounding in the loss; a floor of `1e-6`
/// checks those to an absolute `1e-6 * tol` instead.
pub fn gradcheck_with_floor<P, F>(params: &P, analytic: &P, epsilon: f64, floor: f64, loss: F) -> GradcheckReport
where
    P: Params + Clone,
    F: Fn(&P) -> f64,
{
    let analytic_flat = analytic.flatten();
    let mut names = Vec::new();
    params.visit("", &mut |p| names.push(p.name.to_string()));
    assert_eq!(
        analytic_flat.len(),
        names.len(),
        "analytic gradient layout differs from parameters"
    );

    let mut work = params.clone();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (slot, grad) in analytic_flat.iter().enumerate() {
        for (j, &a) in grad.iter().enumerate() {
            let nudge = |work: &mut P, delta: f64| {
                let mut idx = 0;
                work.visit_mut("", &mut |_, d| {
                    if idx == slot {
                        d[j] += delta;
                    }
                    idx += 1;
                });
            };
            let original = {
                let mut v = 0.0;
                let mut idx = 0;
                work.visit("", &mut |p| {
                    if idx == slot {
                        v = p.data[j];
                    }
                    idx += 1;
                });
                v
            };
            nudge(&mut work, epsilon);
            let plus = loss(&work);
            nudge(&mut work, -2.0 * epsilon);
            let minus = loss(&work);
            // restore exactly rather than trusting += / -= to cancel
            let mut idx = 0;
            work.visit_mut("", &mut |_, d| {
                if idx == slot {
                    d[j] = original;
                }
                idx += 1;
            });

            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = Some((names[slot].clone(), j));
            }
        }
    }
    report
}
