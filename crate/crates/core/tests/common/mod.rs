//! Reference implementations used only by the integration tests. None of
//! these share code with the library routines they check.

#![allow(dead_code)]

/// Closed-form sparsemax: sort descending, find the support size `k`, and
/// set `λ = (Σ_top-k u - 1) / k`.
pub fn sparsemax_closed_form(u: &[f64]) -> (Vec<f64>, f64) {
    let mut sorted = u.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    let mut support = 0;
    let mut support_sum = 0.0;
    for (k, &z) in sorted.iter().enumerate() {
        cumulative += z;
        if 1.0 + (k as f64 + 1.0) * z > cumulative {
            support = k + 1;
            support_sum = cumulative;
        }
    }
    let lambda = (support_sum - 1.0) / support as f64;
    (u.iter().map(|&z| (z - lambda).max(0.0)).collect(), lambda)
}

fn grid_mass(u: &[f64], lambda: f64, p: f64) -> f64 {
    u.iter()
        .map(|&z| if z > lambda { (z - lambda).powf(p) } else { 0.0 })
        .sum()
}

/// Brute-force threshold search: scans `λ` over a uniform grid, keeps the
/// cell in which the mass crosses 1, and rescans that cell on a finer grid
/// until the cell is narrower than 1e-14. No bisection, no derivatives.
pub fn grid_lambda_oracle(u: &[f64], alpha: f64) -> (Vec<f64>, f64) {
    const POINTS: usize = 1000;
    let p = 1.0 / (alpha - 1.0);
    let mut lo = u.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    while hi - lo > 1e-14 {
        let width = (hi - lo) / POINTS as f64;
        let mut new_lo = lo;
        let mut new_hi = hi;
        for k in 1..=POINTS {
            let lambda = lo + width * k as f64;
            if grid_mass(u, lambda, p) <= 1.0 {
                new_lo = lo + width * (k - 1) as f64;
                new_hi = lambda;
                break;
            }
        }
        if new_hi - new_lo >= hi - lo {
            break;
        }
        lo = new_lo;
        hi = new_hi;
    }
    let lambda = 0.5 * (lo + hi);
    let q = u
        .iter()
        .map(|&z| if z > lambda { (z - lambda).powf(p) } else { 0.0 })
        .collect();
    (q, lambda)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Dense exponentiated-gradient step written out directly.
pub fn eg_oracle(q: &[f64], a: &[f64], eta: f64) -> Vec<f64> {
    let raw: Vec<f64> = q.iter().zip(a).map(|(q, a)| q * (eta * a).exp()).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

/// Hardness-excess multiplier `1 + (U-1)·clip((Gq-1)/(G-1), 0, 1)^γ`.
pub fn multiplier_oracle(q: f64, groups: usize, ceiling: f64, gamma: f64) -> f64 {
    let g = groups as f64;
    let excess = ((g * q - 1.0) / (g - 1.0)).clamp(0.0, 1.0);
    if excess == 0.0 {
        1.0
    } else {
        1.0 + (ceiling - 1.0) * excess.powf(gamma)
    }
}
