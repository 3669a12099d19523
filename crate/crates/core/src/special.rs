//! Small numerical helpers: gamma-type constants, multi-indices, quadrature rules.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// `(2k-1)!!`, with `(-1)!! = 1`.
pub fn double_factorial_odd(k: usize) -> f64 {
    (1..=k).map(|i| (2 * i - 1) as f64).product()
}

/// `∫_{S^{m-1}} ν^α dσ(ν)` for an even multi-index `α` (0 for any odd component).
pub fn sphere_monomial_integral(alpha: &[usize]) -> f64 {
    if alpha.iter().any(|a| a % 2 == 1) {
        return 0.0;
    }
    let betas: Vec<f64> = alpha.iter().map(|&a| (a as f64 + 1.0) / 2.0).collect();
    let num: f64 = betas.iter().map(|&b| gamma(b)).product();
    2.0 * num / gamma(betas.iter().sum())
}

/// Surface area of the unit sphere `S^{m-1}` in `R^m`.
pub fn sphere_area(m: usize) -> f64 {
    2.0 * PI.powf(m as f64 / 2.0) / gamma(m as f64 / 2.0)
}

/// All multi-indices in `N^m` with `|α| ≤ max_order`, ordered by total order then lexicographically.
pub fn multi_indices(m: usize, max_order: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for order in 0..=max_order {
        let mut cur = vec![0; m];
        fill_order(&mut out, &mut cur, 0, order);
    }
    out
}

fn fill_order(out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, pos: usize, left: usize) {
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(cur.clone());
        return;
    }
    for a in (0..=left).rev() {
        cur[pos] = a;
        fill_order(out, cur, pos + 1, left - a);
    }
    cur[pos] = 0;
}

/// Upper-triangle index pairs `(i, j)`, `i ≤ j`, row by row.
pub fn upper_pairs(m: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        for j in i..m {
            v.push((i, j));
        }
    }
    v
}

const GK_X: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WK[7] * fc;
    let mut g = GK_WG[3] * fc;
    for i in 0..7 {
        let dx = h * GK_X[i];
        let s = f(c - dx) + f(c + dx);
        k += GK_WK[i] * s;
        if i % 2 == 1 {
            g += GK_WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// Bisects the interval with the largest error estimate until the summed
/// estimate is below `rel_tol·|I| + abs_tol`. Returns `(integral, error_estimate)`.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    what: &str,
) -> Result<(f64, f64)> {
    let mut segs = vec![(a, b, gk15(&f, a, b))];
    for _ in 0..2000 {
        let total: f64 = segs.iter().map(|s| s.2 .0).sum();
        let err: f64 = segs.iter().map(|s| s.2 .1).sum();
        if err <= rel_tol * total.abs() + abs_tol {
            return Ok((total, err));
        }
        let (idx, _) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))
            .expect("non-empty");
        let (lo, hi, _) = segs.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        segs.push((lo, mid, gk15(&f, lo, mid)));
        segs.push((mid, hi, gk15(&f, mid, hi)));
    }
    let err: f64 = segs.iter().map(|s| s.2 .1).sum();
    Err(Error::Quadrature {
        what: what.to_string(),
        residual: err,
    })
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Physicists' Hermite polynomial coefficients `H_n(v) = Σ c_k v^k`, `n ≤ 8`.
pub fn hermite_coeffs(n: usize) -> Vec<f64> {
    let mut h0 = vec![1.0];
    if n == 0 {
        return h0;
    }
    let mut h1 = vec![0.0, 2.0];
    for k in 1..n {
        let mut h2 = vec![0.0; k + 2];
        for (i, c) in h1.iter().enumerate() {
            h2[i + 1] += 2.0 * c;
        }
        for (i, c) in h0.iter().enumerate() {
            h2[i] -= 2.0 * k as f64 * c;
        }
        h0 = h1;
        h1 = h2;
    }
    h1
}

pub fn hermite(n: usize, v: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, 2.0 * v);
    if n == 0 {
        return h0;
    }
    for k in 1..n {
        let h2 = 2.0 * v * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}
