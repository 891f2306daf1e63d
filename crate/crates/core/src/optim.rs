//! Derivative-free simplex minimization (Nelder-Mead). Kept deliberately
//! small: the objectives in this crate are low dimensional (one or two
//! coordinates) and only piecewise smooth, so a robust simplex with restarts
//! beats gradient methods.

#[derive(Clone, Debug)]
pub struct SimplexResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` starting from `x0` with per-coordinate initial step sizes
/// `scale`. Convergence: simplex value spread below `ftol` and vertex spread
/// below `xtol` (relative to scale).
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    scale: &[f64],
    max_iter: usize,
    ftol: f64,
    xtol: f64,
) -> SimplexResult {
    let dim = x0.len();
    assert!(dim > 0 && scale.len() == dim);
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for k in 0..dim {
        let mut v = x0.to_vec();
        v[k] += scale[k].max(1e-12);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];

        let fspread = (values[worst] - values[best]).abs();
        let xspread = (0..dim)
            .map(|k| {
                let lo = simplex.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min);
                let hi = simplex
                    .iter()
                    .map(|v| v[k])
                    .fold(f64::NEG_INFINITY, f64::max);
                (hi - lo) / scale[k].max(1e-12)
            })
            .fold(0.0, f64::max);
        if values[best].is_finite() && fspread <= ftol && xspread <= xtol {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; dim];
        for (i, v) in simplex.iter().enumerate() {
            if i == worst {
                continue;
            }
            for k in 0..dim {
                centroid[k] += v[k] / dim as f64;
            }
        }

        let reflect: Vec<f64> = (0..dim)
            .map(|k| centroid[k] + alpha * (centroid[k] - simplex[worst][k]))
            .collect();
        let fr = f(&reflect);

        if fr < values[order[0]] {
            let expand: Vec<f64> = (0..dim)
                .map(|k| centroid[k] + gamma * (reflect[k] - centroid[k]))
                .collect();
            let fe = f(&expand);
            if fe < fr {
                simplex[worst] = expand;
                values[worst] = fe;
            } else {
                simplex[worst] = reflect;
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second_worst] {
            simplex[worst] = reflect;
            values[worst] = fr;
            continue;
        }

        let contract: Vec<f64> = if fr < values[worst] {
            (0..dim)
                .map(|k| centroid[k] + rho * (reflect[k] - centroid[k]))
                .collect()
        } else {
            (0..dim)
                .map(|k| centroid[k] + rho * (simplex[worst][k] - centroid[k]))
                .collect()
        };
        let fc = f(&contract);
        if fc < values[worst].min(fr) {
            simplex[worst] = contract;
            values[worst] = fc;
            continue;
        }

        // Shrink toward the best vertex.
        let best_point = simplex[best].clone();
        for (i, v) in simplex.iter_mut().enumerate() {
            if i == best {
                continue;
            }
            for k in 0..dim {
                v[k] = best_point[k] + sigma * (v[k] - best_point[k]);
            }
            values[i] = f(v);
        }
    }

    let mut best = 0;
    for i in 1..=dim {
        if values[i] < values[best] {
            best = i;
        }
    }
    SimplexResult {
        point: simplex[best].clone(),
        value: values[best],
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn finds_quadratic_minimum() {
        let res = nelder_mead(
            |x| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2),
            &[0.0, 0.0],
            &[1.0, 1.0],
            500,
            1e-12,
            1e-8,
        );
        assert!(res.converged);
        assert_abs_diff_eq!(res.point[0], 3.0, epsilon = 1e-5);
        assert_abs_diff_eq!(res.point[1], -1.0, epsilon = 1e-5);
    }

    #[test]
    fn handles_infinite_plateaus() {
        // Objective is +inf outside the unit box.
        let res = nelder_mead(
            |x| {
                if x[0].abs() > 1.0 {
                    f64::INFINITY
                } else {
                    (x[0] - 0.4).powi(2)
                }
            },
            &[0.0],
            &[0.5],
            300,
            1e-12,
            1e-8,
        );
        assert_abs_diff_eq!(res.point[0], 0.4, epsilon = 1e-5);
    }
}
