//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the code path it is used to check.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small binary classification problem.
pub struct SvmFixture {
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub c: f64,
    pub gamma: f64,
}

/// Two overlapping 2-D blobs, 4 to 12 points, both classes present.
pub fn svm_fixture(seed: u64) -> SvmFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(4..=12);
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        let center = if y > 0.0 { 0.8 } else { -0.8 };
        samples.push(vec![
            center + rng.gen_range(-1.2..1.2),
            0.5 * center + rng.gen_range(-1.2..1.2),
        ]);
        labels.push(y);
    }
    SvmFixture {
        samples,
        labels,
        c: if seed.is_multiple_of(2) { 1.0 } else { 10.0 },
        gamma: 0.5,
    }
}

pub fn rbf(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    (-gamma * d2).exp()
}

/// Solution of the SVM dual by accelerated projected gradient ascent.
pub struct QpSolution {
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
}

fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    // alpha_i = clip(v_i - lambda y_i, 0, C) with sum y_i alpha_i = 0;
    // the constraint residual is nonincreasing in lambda
    let residual = |lambda: f64| -> f64 {
        v.iter()
            .zip(y)
            .map(|(vi, yi)| yi * (vi - lambda * yi).clamp(0.0, c))
            .sum()
    };
    let bound = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    v.iter()
        .zip(y)
        .map(|(vi, yi)| (vi - lambda * yi).clamp(0.0, c))
        .collect()
}

pub fn dense_qp(fx: &SvmFixture) -> QpSolution {
    let n = fx.samples.len();
    let y = &fx.labels;
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            q[i][j] = y[i] * y[j] * rbf(&fx.samples[i], &fx.samples[j], fx.gamma);
        }
    }
    // largest eigenvalue by power iteration bounds the step size
    let mut v = vec![1.0; n];
    let mut lmax = 1.0;
    for _ in 0..500 {
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| q[i][j] * v[j]).sum()).collect();
        lmax = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / lmax).collect();
    }
    let step = 1.0 / (lmax * 1.01);
    let grad = |a: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| 1.0 - (0..n).map(|j| q[i][j] * a[j]).sum::<f64>())
            .collect()
    };
    let objective = |a: &[f64]| -> f64 {
        let quad: f64 = (0..n)
            .map(|i| (0..n).map(|j| a[i] * a[j] * q[i][j]).sum::<f64>())
            .sum();
        a.iter().sum::<f64>() - 0.5 * quad
    };
    let mut alpha = vec![0.0; n];
    let mut momentum = alpha.clone();
    let mut t = 1.0f64;
    for _ in 0..20_000 {
        let g = grad(&momentum);
        let stepped: Vec<f64> = momentum.iter().zip(&g).map(|(m, gi)| m + step * gi).collect();
        let next = project(&stepped, y, fx.c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        momentum = next
            .iter()
            .zip(&alpha)
            .map(|(a1, a0)| a1 + (t - 1.0) / t_next * (a1 - a0))
            .collect();
        alpha = next;
        t = t_next;
    }

    let f_no_bias = |i: usize| -> f64 {
        (0..n)
            .map(|j| alpha[j] * y[j] * rbf(&fx.samples[j], &fx.samples[i], fx.gamma))
            .sum()
    };
    let free_tol = 1e-6 * fx.c;
    let free: Vec<usize> = (0..n)
        .filter(|&i| alpha[i] > free_tol && alpha[i] < fx.c - free_tol)
        .collect();
    let bias = if !free.is_empty() {
        free.iter().map(|&i| y[i] - f_no_bias(i)).sum::<f64>() / free.len() as f64
    } else {
        // any b in [lo, hi] satisfies the margin conditions; take the midpoint
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..n {
            let g = f_no_bias(i);
            let at_zero = alpha[i] <= free_tol;
            // alpha = 0: y (g + b) >= 1; alpha = C: y (g + b) <= 1
            if (y[i] > 0.0) == at_zero {
                lo = lo.max(y[i] - g);
            } else {
                hi = hi.min(y[i] - g);
            }
        }
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo,
            (false, true) => hi,
            _ => 0.0,
        }
    };
    QpSolution {
        objective: objective(&alpha),
        alphas: alpha,
        bias,
    }
}

pub fn qp_decision(fx: &SvmFixture, sol: &QpSolution, x: &[f64]) -> f64 {
    fx.samples
        .iter()
        .zip(&fx.labels)
        .zip(&sol.alphas)
        .map(|((s, y), a)| a * y * rbf(s, x, fx.gamma))
        .sum::<f64>()
        + sol.bias
}

/// Outcome of comparing SMO against the dense solver on one fixture.
pub struct SmoComparison {
    pub converged: bool,
    pub objective_gap: f64,
    pub mismatches: usize,
}

pub fn compare_smo_with_qp(seed: u64) -> SmoComparison {
    use aecbir::svm::{dual_objective, kernel_matrix, train_binary_svm_detailed, SvmParams};
    let fx = svm_fixture(seed);
    let params = SvmParams {
        c: fx.c,
        gamma: fx.gamma,
        tol: 1e-3,
        max_passes: 100,
    };
    let t = train_binary_svm_detailed(&fx.samples, &fx.labels, &params, seed).unwrap();
    let smo_obj = dual_objective(&kernel_matrix(&fx.samples, fx.gamma), &fx.labels, &t.alphas);
    let qp = dense_qp(&fx);
    let mismatches = fx
        .samples
        .iter()
        .filter(|x| (t.model.decision(x).unwrap() > 0.0) != (qp_decision(&fx, &qp, x) > 0.0))
        .count();
    SmoComparison {
        converged: t.converged,
        objective_gap: (smo_obj - qp.objective).abs(),
        mismatches,
    }
}

/// Literal weighted mismatch sum over the hyphenated code string, with each
/// axis divided by its all-wrong value and scaled to a quarter.
pub fn irma_error_oracle(pred: &str, truth: &str, branching: &[u32; 13]) -> f64 {
    let pa: Vec<&str> = pred.split('-').collect();
    let ta: Vec<&str> = truth.split('-').collect();
    assert_eq!(pa.len(), 4);
    let mut global = 0;
    let mut e = 0.0;
    for (p, t) in pa.iter().zip(&ta) {
        let mut wrong = 0.0;
        let mut all = 0.0;
        for (i, (pc, tc)) in p.chars().zip(t.chars()).enumerate() {
            let term = (1.0 / branching[global] as f64) * (1.0 / (i as f64 + 1.0));
            all += term;
            if pc != tc {
                wrong += term;
            }
            global += 1;
        }
        e += wrong / all / 4.0;
    }
    e
}

const CODE_ALPHABET: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyz";

/// Random hyphenated code pair; each position of the prediction differs
/// from the truth with probability one half.
pub fn random_code_pair(rng: &mut ChaCha8Rng) -> (String, String) {
    let mut truth = String::new();
    let mut pred = String::new();
    for (axis, len) in [4, 3, 3, 3].into_iter().enumerate() {
        if axis > 0 {
            truth.push('-');
            pred.push('-');
        }
        for _ in 0..len {
            let t = CODE_ALPHABET[rng.gen_range(0..36)];
            let p = if rng.gen_bool(0.5) {
                CODE_ALPHABET[(CODE_ALPHABET.iter().position(|&c| c == t).unwrap() + rng.gen_range(1..36)) % 36]
            } else {
                t
            };
            truth.push(t as char);
            pred.push(p as char);
        }
    }
    (pred, truth)
}

/// Per-pixel LBP histogram: for every interior pixel, compare the eight
/// neighbours clockwise from the top-left and set bit `i` when the
/// neighbour is at least the centre.
pub fn lbp_oracle(pixels: &[u8], w: usize, h: usize) -> Vec<f64> {
    let clockwise: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0)];
    let mut hist = vec![0.0; 256];
    if w < 3 || h < 3 {
        return hist;
    }
    let at = |x: i64, y: i64| pixels[y as usize * w + x as usize];
    for y in 1..h as i64 - 1 {
        for x in 1..w as i64 - 1 {
            let centre = at(x, y);
            let mut code = 0usize;
            for (bit, (dx, dy)) in clockwise.iter().enumerate() {
                if at(x + dx, y + dy) >= centre {
                    code += 1 << bit;
                }
            }
            hist[code] += 1.0;
        }
    }
    let total = ((w - 2) * (h - 2)) as f64;
    hist.iter().map(|c| c / total).collect()
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences of the loss, with step `h`.
pub fn gradient_check(ae: &aecbir::autoencoder::Autoencoder, samples: &[Vec<f64>], h: f64) -> f64 {
    let (_, analytic) = ae.loss_and_gradient(samples).unwrap();
    let mut worst: f64 = 0.0;
    for (i, &grad) in analytic.iter().enumerate() {
        let mut plus = ae.clone();
        plus.params_mut()[i] += h;
        let mut minus = ae.clone();
        minus.params_mut()[i] -= h;
        let lp = plus.loss_and_gradient(samples).unwrap().0;
        let lm = minus.loss_and_gradient(samples).unwrap().0;
        let numeric = (lp - lm) / (2.0 * h);
        let scale = grad.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((grad - numeric).abs() / scale);
    }
    worst
}

/// Random `n`-dimensional samples in `[0, 1]`.
pub fn unit_samples(count: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..n).map(|_| rng.gen::<f64>()).collect()).collect()
}
