//! HG expansion coefficients of a displaced Gaussian PSF.
//!
//! A point source at `(x, y)` produces the field
//! `sum_{m,n} c_mn(x, y) |HG_mn>` with
//! `c_mn = a_m(x / 2s) * a_n(y / 2s)` and `a_k(u) = exp(-u^2/2) u^k / sqrt(k!)`,
//! where `s` is the effective PSF width. `a_k(u)^2` is the Poisson weight of
//! `k` at mean `u^2`, so the squared coefficients of every pixel sum to one.

/// `ln(k!)`, summed directly; the orders used here stay small.
pub fn ln_factorial(k: u32) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// One-dimensional amplitude `exp(-u^2/2) u^k / sqrt(k!)`, evaluated in log
/// space so that neither the power nor the factorial overflows.
pub fn hg_amplitude_1d(order: u32, u: f64) -> f64 {
    if u == 0.0 {
        return if order == 0 { 1.0 } else { 0.0 };
    }
    let ln_mag = -0.5 * u * u + order as f64 * u.abs().ln() - 0.5 * ln_factorial(order);
    let sign = if u < 0.0 && order % 2 == 1 { -1.0 } else { 1.0 };
    sign * ln_mag.exp()
}

/// Amplitudes `a_0(u) ..= a_max(u)`.
pub fn amplitude_table(max_order: u32, u: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_order as usize + 1);
    if u == 0.0 {
        out.push(1.0);
        out.resize(max_order as usize + 1, 0.0);
        return out;
    }
    let ln_u = u.abs().ln();
    let mut ln_fact = 0.0;
    for k in 0..=max_order {
        if k > 1 {
            ln_fact += (k as f64).ln();
        }
        let mag = (-0.5 * u * u + k as f64 * ln_u - 0.5 * ln_fact).exp();
        out.push(if u < 0.0 && k % 2 == 1 { -mag } else { mag });
    }
    out
}

/// Amplitude of `HG_mn` in the field of a point source at `(x, y)`.
pub fn hg_coefficient(m: u32, n: u32, x: f64, y: f64, sigma_eff: f64) -> f64 {
    debug_assert!(sigma_eff > 0.0);
    let scale = 2.0 * sigma_eff;
    hg_amplitude_1d(m, x / scale) * hg_amplitude_1d(n, y / scale)
}
