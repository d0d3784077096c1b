#![allow(dead_code)]

use fogas::{DMatrix, DVector, LinearMdp, OfflineDataset, SamplingMode, TabularPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_policy(rng: &mut ChaCha8Rng, xs: usize, acts: usize) -> TabularPolicy {
    let mut p = DMatrix::from_fn(xs, acts, |_, _| rng.random::<f64>() + 1e-3);
    for mut row in p.row_iter_mut() {
        let s: f64 = row.iter().sum();
        row /= s;
    }
    TabularPolicy::new(p).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-scale..scale))
}

/// A random point of the Euclidean ball of radius `r`.
pub fn ball_point(rng: &mut ChaCha8Rng, d: usize, r: f64) -> DVector<f64> {
    loop {
        let v = random_vec(rng, d, 1.0);
        let n = v.norm();
        if n > 1e-12 && n <= 1.0 {
            return v * (r * rng.random::<f64>().powf(1.0 / d as f64) / n);
        }
    }
}

pub fn uniform_data(mdp: &LinearMdp, n: usize, seed: u64) -> OfflineDataset {
    let pi = TabularPolicy::uniform(mdp.num_states(), mdp.num_actions());
    OfflineDataset::collect(mdp, &pi, n, SamplingMode::Uniform, seed).unwrap()
}

/// Minimises `|| A w - y ||` for `A = [D / sqrt(n); sqrt(beta) I]`, the
/// stacked form of ridge regression, through an SVD.
pub fn ridge_by_svd(design: &DMatrix<f64>, y: &DVector<f64>, beta: f64) -> DVector<f64> {
    let (n, d) = design.shape();
    let s = (n as f64).sqrt();
    let mut a = DMatrix::zeros(n + d, d);
    let mut b = DVector::zeros(n + d);
    a.view_mut((0, 0), (n, d)).copy_from(&(design / s));
    b.rows_mut(0, n).copy_from(&(y / s));
    for j in 0..d {
        a[(n + j, j)] = beta.sqrt();
    }
    a.svd(true, true).solve(&b, 1e-14).unwrap()
}

/// Derivative-free maximiser of a smooth concave function on `R^2`: a
/// coarse grid over `[-box, box]^2` followed by compass search with step
/// halving.
pub fn maximise_2d(f: impl Fn(f64, f64) -> f64, half_width: f64) -> (f64, f64) {
    let steps = 80;
    let h = 2.0 * half_width / steps as f64;
    let mut best = (0.0, 0.0);
    let mut best_val = f64::NEG_INFINITY;
    for i in 0..=steps {
        for j in 0..=steps {
            let p = (-half_width + i as f64 * h, -half_width + j as f64 * h);
            let v = f(p.0, p.1);
            if v > best_val {
                best_val = v;
                best = p;
            }
        }
    }
    let dirs = [
        (1.0, 0.0),
        (-1.0, 0.0),
        (0.0, 1.0),
        (0.0, -1.0),
        (1.0, 1.0),
        (-1.0, -1.0),
        (1.0, -1.0),
        (-1.0, 1.0),
    ];
    let mut step = h;
    while step > 1e-11 {
        let mut moved = false;
        for (dx, dy) in dirs {
            let p = (best.0 + step * dx, best.1 + step * dy);
            let v = f(p.0, p.1);
            if v > best_val {
                best_val = v;
                best = p;
                moved = true;
                break;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    best
}
