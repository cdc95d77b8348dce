//! Box-constrained damped Gauss-Newton refinement.

use nalgebra::{Matrix3, Vector3};

/// Value, gradient and curvature of the objective at a feasible point.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Local {
    pub value: f64,
    pub grad: Vector3<f64>,
    pub hess: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Refined {
    pub theta: [f64; 3],
    pub value: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Limits {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iterations: usize,
}

impl Limits {
    fn at_lower(&self, x: &[f64; 3], k: usize) -> bool {
        x[k] <= self.lo[k]
    }

    fn at_upper(&self, x: &[f64; 3], k: usize) -> bool {
        x[k] >= self.hi[k]
    }

    /// Zeroes components that push against an active bound.
    fn projected(&self, x: &[f64; 3], g: &Vector3<f64>) -> Vector3<f64> {
        let mut pg = *g;
        for k in 0..3 {
            if (self.at_lower(x, k) && g[k] > 0.0) || (self.at_upper(x, k) && g[k] < 0.0) {
                pg[k] = 0.0;
            }
        }
        pg
    }
}

/// Levenberg-Marquardt on a box. `eval` returns `None` for points the
/// objective cannot be evaluated at; such trials are rejected like uphill
/// steps.
pub(crate) fn refine(
    start: [f64; 3],
    limits: &Limits,
    mut eval: impl FnMut(&[f64; 3]) -> Option<Local>,
) -> Option<Refined> {
    let mut x = start;
    for k in 0..3 {
        x[k] = x[k].clamp(limits.lo[k], limits.hi[k]);
    }
    let mut cur = eval(&x).filter(|l| l.value.is_finite())?;
    let mut lambda = 1e-3;
    for _ in 0..limits.max_iterations {
        let pg = limits.projected(&x, &cur.grad);
        if pg.norm() == 0.0 {
            return Some(done(x, cur.value, true));
        }
        let free: Vec<usize> = (0..3).filter(|&k| pg[k] != 0.0 || cur.grad[k] == 0.0).collect();
        let scale = (0..3).map(|k| cur.hess[(k, k)].abs()).fold(0.0, f64::max);
        let floor = 1e-12 * scale + 1e-300;
        let n = free.len();
        let mut h = nalgebra::DMatrix::zeros(n, n);
        let mut b = nalgebra::DVector::zeros(n);
        for (r, &i) in free.iter().enumerate() {
            b[r] = -cur.grad[i];
            for (s, &j) in free.iter().enumerate() {
                h[(r, s)] = cur.hess[(i, j)];
            }
        }
        let mut a = h.clone();
        for (r, &i) in free.iter().enumerate() {
            a[(r, r)] += lambda * cur.hess[(i, i)].abs().max(floor);
            h[(r, r)] += floor;
        }
        // Undamped step length: the distance to the minimum of the local
        // model, independent of the scale of the objective.
        let newton = h
            .cholesky()
            .map(|c| c.solve(&b).norm())
            .unwrap_or(f64::INFINITY);
        let Some(delta) = a.cholesky().map(|c| c.solve(&b)) else {
            lambda *= 4.0;
            continue;
        };
        let mut trial = x;
        for (r, &i) in free.iter().enumerate() {
            trial[i] = (x[i] + delta[r]).clamp(limits.lo[i], limits.hi[i]);
        }
        let step = (0..3).map(|k| (trial[k] - x[k]).powi(2)).sum::<f64>().sqrt();
        if step < limits.step_tol {
            return Some(done(x, cur.value, true));
        }
        match eval(&trial) {
            Some(next) if accept(&cur, &next, &limits.projected(&trial, &next.grad), &pg) => {
                x = trial;
                cur = next;
                lambda = (lambda / 3.0).max(1e-12);
            }
            _ => {
                // The gradient test only ends the search once no further
                // descent is found, so weakly curved directions still polish.
                if newton < limits.grad_tol || lambda > 1e30 {
                    return Some(done(x, cur.value, true));
                }
                lambda *= 4.0;
            }
        }
    }
    Some(done(x, cur.value, false))
}

/// Downhill, or level within rounding of the loss while the projected
/// gradient shrinks. The second case lets flat directions polish past the
/// resolution of the loss value.
fn accept(cur: &Local, next: &Local, next_pg: &Vector3<f64>, cur_pg: &Vector3<f64>) -> bool {
    if next.value < cur.value {
        return true;
    }
    let level = next.value <= cur.value + 8.0 * f64::EPSILON * cur.value.abs();
    level && next_pg.norm() < 0.5 * cur_pg.norm()
}

fn done(theta: [f64; 3], value: f64, converged: bool) -> Refined {
    Refined {
        theta,
        value,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limits() -> Limits {
        Limits {
            lo: [-1.0, -1.0, -1.0],
            hi: [1.0, 1.0, 1.0],
            grad_tol: 1e-12,
            step_tol: 1e-14,
            max_iterations: 500,
        }
    }

    fn quadratic(center: [f64; 3]) -> impl FnMut(&[f64; 3]) -> Option<Local> {
        let h = Matrix3::new(4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0);
        move |x| {
            let r = Vector3::new(x[0] - center[0], x[1] - center[1], x[2] - center[2]);
            Some(Local {
                value: 0.5 * r.dot(&(h * r)),
                grad: h * r,
                hess: h,
            })
        }
    }

    #[test]
    fn interior_minimum() {
        let r = refine([0.9, -0.9, 0.0], &limits(), quadratic([0.2, -0.3, 0.4])).unwrap();
        assert!(r.converged);
        for (a, b) in r.theta.iter().zip([0.2, -0.3, 0.4]) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn minimum_on_bound() {
        let r = refine([0.0, 0.0, 0.0], &limits(), quadratic([2.0, 0.0, 0.0])).unwrap();
        assert!(r.converged);
        assert_eq!(r.theta[0], 1.0);
    }

    #[test]
    fn infeasible_start_value_fails() {
        assert!(refine([0.0; 3], &limits(), |_| None).is_none());
    }
}
