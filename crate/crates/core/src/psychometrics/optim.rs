//! Box-constrained Nelder–Mead. Trial points outside the box are projected
//! back onto it, so solutions can sit exactly on a bound.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds<const N: usize> {
    pub lower: [f64; N],
    pub upper: [f64; N],
}

impl<const N: usize> Bounds<N> {
    pub fn project(&self, mut x: [f64; N]) -> [f64; N] {
        for i in 0..N {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions<const N: usize> {
    /// Initial simplex edge along each coordinate.
    pub step: [f64; N],
    /// Per-coordinate scale used for the simplex-size convergence test.
    pub scale: [f64; N],
    pub f_tol: f64,
    pub x_tol: f64,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum<const N: usize> {
    pub x: [f64; N],
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn lerp<const N: usize>(a: &[f64; N], b: &[f64; N], t: f64) -> [f64; N] {
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = a[i] + t * (b[i] - a[i]);
    }
    out
}

pub fn minimize<const N: usize, F>(
    f: F,
    start: [f64; N],
    bounds: &Bounds<N>,
    opts: &NelderMeadOptions<N>,
) -> Minimum<N>
where
    F: Fn(&[f64; N]) -> f64,
{
    let eval = |x: &[f64; N]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let x0 = bounds.project(start);
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((x0, eval(&x0)));
    for i in 0..N {
        let mut x = x0;
        x[i] += opts.step[i];
        if x[i] > bounds.upper[i] {
            x[i] = x0[i] - opts.step[i];
        }
        let x = bounds.project(x);
        simplex.push((x, eval(&x)));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[N].1;
        let x_best = simplex[0].0;
        let spread = simplex
            .iter()
            .skip(1)
            .flat_map(|(x, _)| (0..N).map(move |i| ((x[i] - x_best[i]) / opts.scale[i]).abs()))
            .fold(0.0_f64, f64::max);
        if (worst - best).abs() <= opts.f_tol && spread <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = [0.0; N];
        for (x, _) in &simplex[..N] {
            for i in 0..N {
                centroid[i] += x[i] / N as f64;
            }
        }
        let worst_x = simplex[N].0;

        let reflected = bounds.project(lerp(&centroid, &worst_x, -1.0));
        let f_r = eval(&reflected);
        if f_r < simplex[0].1 {
            let expanded = bounds.project(lerp(&centroid, &worst_x, -2.0));
            let f_e = eval(&expanded);
            simplex[N] = if f_e < f_r { (expanded, f_e) } else { (reflected, f_r) };
            continue;
        }
        if f_r < simplex[N - 1].1 {
            simplex[N] = (reflected, f_r);
            continue;
        }
        let (target, f_target) = if f_r < worst { (reflected, f_r) } else { (worst_x, worst) };
        let contracted = bounds.project(lerp(&centroid, &target, 0.5));
        let f_c = eval(&contracted);
        if f_c < f_target {
            simplex[N] = (contracted, f_c);
            continue;
        }
        let best_x = simplex[0].0;
        for entry in simplex.iter_mut().skip(1) {
            let x = bounds.project(lerp(&best_x, &entry.0, 0.5));
            *entry = (x, eval(&x));
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    Minimum { x: simplex[0].0, value: simplex[0].1, iterations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts<const N: usize>() -> NelderMeadOptions<N> {
        NelderMeadOptions { step: [0.5; N], scale: [1.0; N], f_tol: 1e-14, x_tol: 1e-9, max_iterations: 10_000 }
    }

    #[test]
    fn rosenbrock() {
        let b = Bounds { lower: [-5.0; 2], upper: [5.0; 2] };
        let m = minimize(|x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2), [-1.2, 1.0], &b, &opts());
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{m:?}");
    }

    #[test]
    fn active_bound() {
        let b = Bounds { lower: [0.0, 2.0], upper: [10.0, 10.0] };
        let m = minimize(|x| (x[0] - 3.0).powi(2) + x[1] * x[1], [5.0, 5.0], &b, &opts());
        assert!((m.x[0] - 3.0).abs() < 1e-5);
        assert_eq!(m.x[1], 2.0);
    }

    #[test]
    fn never_worse_than_start() {
        let b = Bounds { lower: [-1.0; 3], upper: [1.0; 3] };
        let f = |x: &[f64; 3]| (x[0] * 7.0).sin() + x[1].powi(2) - x[2];
        let start = [0.3, -0.2, 0.1];
        let m = minimize(f, start, &b, &opts());
        assert!(m.value <= f(&start));
    }
}
