//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spademl_core::ml::fcnn::Network;
use spademl_core::optics::DetectionMode;

/// `ln Gamma(z)` by the Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(z: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if z < 0.5 {
        return (PI / (PI * z).sin()).ln() - ln_gamma(1.0 - z);
    }
    let z = z - 1.0;
    let t = z + 7.5;
    let mut a = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (z + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + a.ln()
}

/// Poisson weight `e^-mu mu^k / k!`.
pub fn poisson(k: u32, mu: f64) -> f64 {
    if mu == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (-mu + k as f64 * mu.ln() - ln_gamma(k as f64 + 1.0)).exp()
}

/// Signed square root of the Poisson-product form of `c_mn(x, y)`.
pub fn coefficient_closed_form(m: u32, n: u32, x: f64, y: f64, s: f64) -> f64 {
    let mag = (poisson(m, x * x / (4.0 * s * s)) * poisson(n, y * y / (4.0 * s * s))).sqrt();
    let sign_x = if x < 0.0 && m % 2 == 1 { -1.0 } else { 1.0 };
    let sign_y = if y < 0.0 && n % 2 == 1 { -1.0 } else { 1.0 };
    sign_x * sign_y * mag
}

/// Physicists' Hermite polynomial by the three-term recurrence.
pub fn hermite(m: u32, z: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, 2.0 * z);
    if m == 0 {
        return h0;
    }
    for k in 1..m {
        let h2 = 2.0 * z * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

fn factorial(m: u32) -> f64 {
    (1..=m).map(|k| k as f64).product()
}

/// One-dimensional HG mode of a PSF whose intensity has variance `s^2`.
pub fn hg_mode_1d(m: u32, t: f64, s: f64) -> f64 {
    (2.0 * PI * s * s).powf(-0.25) / (2f64.powi(m as i32) * factorial(m)).sqrt()
        * hermite(m, t / (2f64.sqrt() * s))
        * (-t * t / (4.0 * s * s)).exp()
}

/// `<u_m | psi(. - x)>` by the trapezoid rule on a fine grid.
pub fn overlap_1d(m: u32, x: f64, s: f64) -> f64 {
    let lo = x.min(0.0) - 14.0 * s;
    let hi = x.max(0.0) + 14.0 * s;
    let steps = 4000;
    let h = (hi - lo) / steps as f64;
    let f = |t: f64| hg_mode_1d(m, t, s) * hg_mode_1d(0, t - x, s);
    let mut acc = 0.5 * (f(lo) + f(hi));
    for i in 1..steps {
        acc += f(lo + i as f64 * h);
    }
    acc * h
}

pub fn coefficient_quadrature(m: u32, n: u32, x: f64, y: f64, s: f64) -> f64 {
    overlap_1d(m, x, s) * overlap_1d(n, y, s)
}

/// Probability of detecting a point-source photon in `mode`, using the
/// supplied coefficient oracle.
pub fn mode_probability(
    mode: &DetectionMode,
    x: f64,
    y: f64,
    s: f64,
    coeff: impl Fn(u32, u32, f64, f64, f64) -> f64,
) -> f64 {
    let amp: f64 = mode.terms.iter().map(|t| t.coeff * coeff(t.m, t.n, x, y, s)).sum();
    amp * amp
}

/// Regularized lower incomplete gamma `P(a, x)` by its power series.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    for k in 1..500 {
        term *= x / (a + k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

pub fn chi_square_cdf(x: f64, dof: u32) -> f64 {
    gamma_p(dof as f64 / 2.0, x / 2.0)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

const STEP: f64 = 1e-5;

/// Largest relative error between backprop and central differences over
/// every parameter.
pub fn max_relative_error(net: &Network, x: &Array2<f64>, y: &[usize]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, grads) = net.backprop(x.view(), y, 0.0, &mut rng);
    let analytic = grads.flat();
    let theta = net.flat_parameters();
    assert_eq!(analytic.len(), theta.len());
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + STEP;
        probe.set_flat_parameters(&t);
        let up = probe.loss(x.view(), y);
        t[i] = theta[i] - STEP;
        probe.set_flat_parameters(&t);
        let down = probe.loss(x.view(), y);
        let numeric = (up - down) / (2.0 * STEP);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale > 1e-7 {
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        } else {
            worst = worst.max((analytic[i] - numeric).abs());
        }
    }
    worst
}
