//! Hermite functions, Gauss-Hermite quadrature, Laguerre polynomials and
//! Poisson tails.

use nalgebra::DMatrix;

/// Values h_0(x), ..., h_{n-1}(x) of the normalized Hermite functions
/// h_k(x) = (2^k k! √π)^{-1/2} H_k(x) e^{-x²/2}.
pub fn hermite_functions(x: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    hermite_functions_into(x, &mut out);
    out
}

pub fn hermite_functions_into(x: f64, out: &mut [f64]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    out[0] = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    if n > 1 {
        out[1] = std::f64::consts::SQRT_2 * x * out[0];
    }
    for k in 1..n.saturating_sub(1) {
        let kf = k as f64;
        out[k + 1] = (2.0 / (kf + 1.0)).sqrt() * x * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1];
    }
}

/// Hermite functions at scale λ: λ^{-1/4} h_k(x/√λ).
pub fn scaled_hermite_functions_into(x: f64, lambda: f64, out: &mut [f64]) {
    let s = lambda.sqrt();
    hermite_functions_into(x / s, out);
    let f = lambda.powf(-0.25);
    for v in out.iter_mut() {
        *v *= f;
    }
}

/// Gauss-Hermite nodes and weights for ∫ f(x) e^{-x²} dx (Golub-Welsch).
pub fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    let jac = DMatrix::<f64>::from_fn(m, m, |i, j| {
        if i + 1 == j {
            (j as f64 / 2.0).sqrt()
        } else if j + 1 == i {
            (i as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrize to remove eigensolver rounding asymmetry.
    for k in 0..m / 2 {
        let x = 0.5 * (pairs[m - 1 - k].0 - pairs[k].0);
        let w = 0.5 * (pairs[m - 1 - k].1 + pairs[k].1);
        pairs[k] = (-x, w);
        pairs[m - 1 - k] = (x, w);
    }
    if m % 2 == 1 {
        pairs[m / 2].0 = 0.0;
    }
    pairs.into_iter().unzip()
}

/// Generalized Laguerre polynomials L_0^{(a)}(x), ..., L_{n-1}^{(a)}(x).
pub fn laguerre(n: usize, alpha: f64, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if n == 0 {
        return out;
    }
    out[0] = 1.0;
    if n > 1 {
        out[1] = 1.0 + alpha - x;
    }
    for k in 1..n.saturating_sub(1) {
        let kf = k as f64;
        out[k + 1] = ((2.0 * kf + 1.0 + alpha - x) * out[k] - (kf + alpha) * out[k - 1]) / (kf + 1.0);
    }
    out
}

pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// P(N ≥ n) for N ~ Poisson(mean).
pub fn poisson_tail(mean: f64, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if mean <= 0.0 {
        return 0.0;
    }
    // Sum the upper tail directly, each term in log form so that a head
    // term underflowing at large means does not zero the whole sum.
    let ln_mean = mean.ln();
    let mut ln_term = n as f64 * ln_mean - mean - ln_factorial(n);
    let mut tail = 0.0;
    let mut k = n;
    loop {
        if ln_term < -745.0 && k as f64 >= mean {
            break;
        }
        tail += ln_term.exp();
        k += 1;
        ln_term += ln_mean - (k as f64).ln();
        if k > n + 100_000 {
            break;
        }
    }
    tail.min(1.0)
}
