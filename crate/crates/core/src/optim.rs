//! Derivative-free minimizers used by the REML fits.

use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Golden-section search for a minimum of `f` on `[lo, hi]`.
pub fn golden_section<T: Scalar>(
    mut f: impl FnMut(T) -> T,
    lo: T,
    hi: T,
    tol: T,
    max_iter: usize,
) -> Minimum<T> {
    let inv_phi = T::lit(0.5 * (5f64.sqrt() - 1.0));
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iterations = 0;
    while (b - a).abs() > tol && iterations < max_iter {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        iterations += 1;
    }
    let converged = (b - a).abs() <= tol;
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for end in [lo, hi] {
        let fe = f(end);
        if fe < best.1 {
            best = (end, fe);
        }
    }
    Minimum { x: vec![best.0], value: best.1, iterations, converged }
}

/// Nelder–Mead on a box; trial points are projected onto `[lower, upper]`.
///
/// Stops when the simplex diameter falls below `tol` or after `max_iter`
/// iterations (reported as not converged).
pub fn nelder_mead_box<T: Scalar>(
    mut f: impl FnMut(&[T]) -> T,
    x0: &[T],
    step: T,
    lower: &[T],
    upper: &[T],
    tol: T,
    max_iter: usize,
) -> Minimum<T> {
    let n = x0.len();
    let project = |x: &mut Vec<T>| {
        for i in 0..n {
            x[i] = x[i].max(lower[i]).min(upper[i]);
        }
    };
    let mut simplex: Vec<(Vec<T>, T)> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    project(&mut start);
    let f0 = f(&start);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        let mut x = start.clone();
        // Step inward when the start sits on the upper bound.
        x[i] = if x[i] + step <= upper[i] { x[i] + step } else { x[i] - step };
        project(&mut x);
        let fx = f(&x);
        simplex.push((x, fx));
    }

    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut iterations = 0;
    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (*a - *b).abs())
                    .fold(T::zero(), T::max)
            })
            .fold(T::zero(), T::max);
        if diameter < tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let mut centroid = vec![T::zero(); n];
        for (x, _) in &simplex[..n] {
            for i in 0..n {
                centroid[i] = centroid[i] + x[i] / T::from_count(n);
            }
        }
        let worst = simplex[n].clone();
        let along = |t: T| -> Vec<T> {
            let mut x: Vec<T> = (0..n).map(|i| centroid[i] + t * (worst.0[i] - centroid[i])).collect();
            project(&mut x);
            x
        };

        let xr = along(-T::one());
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(-two);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let xc = if fr < worst.1 { along(-half) } else { along(half) };
        let fc = f(&xc);
        if fc < worst.1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let mut x: Vec<T> = (0..n).map(|i| best[i] + half * (v.0[i] - best[i])).collect();
            project(&mut x);
            let fx = f(&x);
            *v = (x, fx);
        }
    }
    let (x, value) = simplex.swap_remove(0);
    Minimum { x, value, iterations, converged }
}
