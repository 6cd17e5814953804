//! Derivative-free Nelder–Mead simplex minimizer.
//!
//! Standard reflection/expansion/contraction/shrink coefficients with a
//! spread-based convergence test. The SML objective reaches the minimizer
//! through a closure, so it needs no trait plumbing.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Convergence when both the function spread and the simplex diameter
    /// fall below these.
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_iterations: 2000, f_tol: 1e-9, x_tol: 1e-9 }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective value after each iteration.
    pub trace: Vec<f64>,
}

/// Minimizes `f` from `x0` with per-coordinate initial steps.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    opts: &NelderMeadOptions,
) -> NelderMeadResult {
    let dim = x0.len();
    assert_eq!(steps.len(), dim, "one step per coordinate");
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        iterations += 1;
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];
        trace.push(values[best]);

        let spread = values[worst] - values[best];
        let diameter = simplex
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[best])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0_f64, f64::max)
            })
            .fold(0.0_f64, f64::max);
        if spread.abs() < opts.f_tol && diameter < opts.x_tol {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; dim];
        for (i, v) in simplex.iter().enumerate() {
            if i == worst {
                continue;
            }
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / dim as f64;
            }
        }

        let blend = |a: &[f64], b: &[f64], w: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect()
        };
        let reflected = blend(&centroid, &simplex[worst], -alpha);
        let f_r = f(&reflected);
        if f_r < values[best] {
            let expanded = blend(&centroid, &simplex[worst], -alpha * gamma);
            let f_e = f(&expanded);
            if f_e < f_r {
                simplex[worst] = expanded;
                values[worst] = f_e;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_r;
            }
            continue;
        }
        if f_r < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_r;
            continue;
        }
        let contracted = if f_r < values[worst] {
            blend(&centroid, &reflected, rho)
        } else {
            blend(&centroid, &simplex[worst], rho)
        };
        let f_c = f(&contracted);
        if f_c < values[worst].min(f_r) {
            simplex[worst] = contracted;
            values[worst] = f_c;
            continue;
        }
        // Shrink toward the best vertex.
        let best_point = simplex[best].clone();
        for (i, v) in simplex.iter_mut().enumerate() {
            if i == best {
                continue;
            }
            *v = blend(&best_point, v, sigma);
            values[i] = f(v);
        }
    }

    let mut order: Vec<usize> = (0..=dim).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let best = order[0];
    NelderMeadResult {
        x: simplex[best].clone(),
        fx: values[best],
        iterations,
        converged,
        trace,
    }
}
