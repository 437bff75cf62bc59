//! Independent reference implementations used by the acceptance checks.

use std::collections::BTreeSet;

use gns_core::tensor::{Tape, Tensor, Var};

/// All ordered pairs `(sender, receiver)` with `|p_s - p_r| <= radius`, `s != r`.
pub fn brute_force_pairs(points: &[f64], dim: usize, radius: f64) -> BTreeSet<(usize, usize)> {
    let n = points.len() / dim;
    let mut out = BTreeSet::new();
    for r in 0..n {
        for s in 0..n {
            if s == r {
                continue;
            }
            let mut d2 = 0.0;
            for k in 0..dim {
                let diff = points[s * dim + k] - points[r * dim + k];
                d2 += diff * diff;
            }
            if d2 <= radius * radius {
                out.insert((s, r));
            }
        }
    }
    out
}

/// Minimum-cost perfect matching of a square cost matrix (Hungarian method with potentials).
pub fn assignment_cost(cost: &[f64], n: usize) -> f64 {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[(matched[j] - 1) * n + (j - 1)]).sum()
}

/// Exact optimal transport between equal-size uniform point sets under squared distance.
pub fn exact_ot(a: &[f64], b: &[f64], dim: usize) -> f64 {
    let n = a.len() / dim;
    assert_eq!(b.len() / dim, n);
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = (0..dim).map(|k| (a[i * dim + k] - b[j * dim + k]).powi(2)).sum();
        }
    }
    assignment_cost(&cost, n) / n as f64
}

/// Brute force over every permutation; only for very small sets.
pub fn permutation_ot(a: &[f64], b: &[f64], dim: usize) -> f64 {
    let n = a.len() / dim;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    loop {
        let c: f64 = (0..n)
            .map(|i| (0..dim).map(|k| (a[i * dim + k] - b[perm[i] * dim + k]).powi(2)).sum::<f64>())
            .sum();
        best = best.min(c);
        // next lexicographic permutation
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| perm[i] < perm[i + 1]) else {
            break;
        };
        let j = (i + 1..n).rev().find(|&j| perm[j] > perm[i]).unwrap();
        perm.swap(i, j);
        perm[i + 1..].reverse();
    }
    best / n as f64
}

/// Biased MMD² with a Gaussian kernel, as three explicit double loops.
pub fn mmd_loops(a: &[f64], b: &[f64], dim: usize, sigma: f64) -> f64 {
    let k = |x: &[f64], y: &[f64]| {
        let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
        (-d2 / (2.0 * sigma * sigma)).exp()
    };
    let mean = |x: &[f64], y: &[f64]| {
        let mut s = 0.0;
        for p in x.chunks(dim) {
            for q in y.chunks(dim) {
                s += k(p, q);
            }
        }
        s / ((x.len() / dim) * (y.len() / dim)) as f64
    };
    (mean(a, a) + mean(b, b) - 2.0 * mean(a, b)).max(0.0)
}

/// Mean squared error over frames, particles and axes as a triple loop.
pub fn mse_loops(pred: &[Vec<f64>], truth: &[Vec<f64>], dim: usize) -> f64 {
    let mut s = 0.0;
    let mut count = 0;
    for (p, t) in pred.iter().zip(truth) {
        for i in 0..p.len() / dim {
            for k in 0..dim {
                s += (p[i * dim + k] - t[i * dim + k]).powi(2);
                count += 1;
            }
        }
    }
    s / count as f64
}

/// Largest relative error between the tape gradient of a scalar builder and
/// central differences with step `h`, over every element of every input.
pub fn gradient_error<F>(inputs: &[Tensor], build: F, h: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out);
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], input);
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    worst
}

/// `|a - n| / max(|a|, |n|, 1e-6)`: relative, with a floor so gradients that
/// are zero up to rounding do not divide by nothing.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}
