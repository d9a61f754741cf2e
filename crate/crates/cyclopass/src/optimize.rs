//! Derivative-free local search: Nelder–Mead simplex with deterministic
//! seeded multistart.
//!
//! The cycle falsifier and the storage-bound estimators both optimize
//! black-box objectives built from simulations; non-finite objective values
//! (blown-up candidate trajectories) are treated as +∞ so the simplex backs
//! away from them.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::exec;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_iters: usize,
    /// Convergence test on the simplex function-value spread.
    pub f_tol: f64,
    /// Initial simplex edge length per coordinate.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iters: 250,
            f_tol: 1e-12,
            initial_step: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Standard Nelder–Mead (α=1, γ=2, ρ=½, σ=½).
pub fn nelder_mead<F>(f: F, x0: &DVector<f64>, opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &DVector<f64>| -> f64 {
        evals += 1;
        sanitize(f(x))
    };

    // initial simplex: x0 plus one displaced vertex per coordinate
    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0);
    simplex.push((x0.clone(), f0));
    for i in 0..n {
        let mut v = x0.clone();
        v[i] += opts.initial_step * v[i].abs().max(1.0);
        let fv = eval(&v);
        simplex.push((v, fv));
    }

    let mut iter = 0;
    while iter < opts.max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= opts.f_tol * (1.0 + best.abs()) {
            break;
        }

        // centroid of all but the worst
        let mut centroid = DVector::zeros(n);
        for (v, _) in simplex.iter().take(n) {
            centroid += v;
        }
        centroid /= n as f64;

        let xw = simplex[n].0.clone();
        let reflected = &centroid + (&centroid - &xw);
        let fr = eval(&reflected);

        if fr < simplex[0].1 {
            let expanded = &centroid + 2.0 * (&centroid - &xw);
            let fe = eval(&expanded);
            simplex[n] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let contracted = if fr < simplex[n].1 {
                &centroid + 0.5 * (&reflected - &centroid)
            } else {
                &centroid + 0.5 * (&xw - &centroid)
            };
            let fc = eval(&contracted);
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (contracted, fc);
            } else {
                // shrink toward the best vertex
                let x_best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    entry.0 = &x_best + 0.5 * (&entry.0 - &x_best);
                    entry.1 = eval(&entry.0);
                }
            }
        }
        iter += 1;
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    NelderMeadResult {
        x: simplex[0].0.clone(),
        f: simplex[0].1,
        iterations: iter,
        evaluations: evals,
    }
}

/// One candidate of a multistart run.
#[derive(Debug, Clone)]
pub struct StartResult {
    pub start_index: usize,
    pub result: NelderMeadResult,
}

/// Deterministic multistart: start 0 is always `x_base`; the remaining
/// starts perturb it with seeded Gaussian-free uniform noise of width
/// `spread`.  Starts run through [`exec::map_indexed`], and the winner is
/// picked by `(f, ‖x‖, index)` lexicographic order so concurrent execution
/// cannot change the outcome.
pub fn multistart<F>(
    f: F,
    x_base: &DVector<f64>,
    restarts: usize,
    spread: f64,
    seed: u64,
    opts: &NelderMeadOptions,
) -> Vec<StartResult>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let n = x_base.len();
    let starts: Vec<DVector<f64>> = (0..restarts.max(1))
        .map(|i| {
            if i == 0 {
                x_base.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
                DVector::from_fn(n, |k, _| {
                    x_base[k] + spread * (rng.random::<f64>() * 2.0 - 1.0)
                })
            }
        })
        .collect();
    exec::map_indexed(starts.len(), |i| StartResult {
        start_index: i,
        result: nelder_mead(&f, &starts[i], opts),
    })
}

/// Winner under the deterministic `(f, ‖x‖, index)` order.
pub fn best_of(results: &[StartResult]) -> &StartResult {
    results
        .iter()
        .min_by(|a, b| {
            a.result
                .f
                .total_cmp(&b.result.f)
                .then(a.result.x.norm().total_cmp(&b.result.x.norm()))
                .then(a.start_index.cmp(&b.start_index))
        })
        .expect("at least one start")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let f = |x: &DVector<f64>| (x[0] - 1.5).powi(2) + 4.0 * (x[1] + 0.5).powi(2);
        let r = nelder_mead(f, &DVector::zeros(2), &NelderMeadOptions::default());
        assert!((r.x[0] - 1.5).abs() < 1e-5, "{:?}", r.x);
        assert!((r.x[1] + 0.5).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn non_finite_regions_are_avoided() {
        let f = |x: &DVector<f64>| {
            if x[0] < -0.5 {
                f64::NAN
            } else {
                (x[0] - 1.0).powi(2)
            }
        };
        let r = nelder_mead(f, &DVector::zeros(1), &NelderMeadOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn multistart_is_deterministic() {
        let f = |x: &DVector<f64>| (x[0].sin() * 3.0).powi(2) + 0.01 * x[0] * x[0];
        let a = multistart(f, &DVector::zeros(1), 8, 5.0, 7, &NelderMeadOptions::default());
        let b = multistart(f, &DVector::zeros(1), 8, 5.0, 7, &NelderMeadOptions::default());
        let (wa, wb) = (best_of(&a), best_of(&b));
        assert_eq!(wa.start_index, wb.start_index);
        assert_eq!(wa.result.f, wb.result.f);
        assert_eq!(wa.result.x, wb.result.x);
    }
}
