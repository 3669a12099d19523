//! Enumeration of the critical points of a sample and the counting measure
//! `Z_R(f) = Σ_{∇F(θ)=0} f(θ)`.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sampler::{FieldSample, Jet};
use crate::special::sphere_area;
use crate::MAX_DIM;

/// A located zero of `∇F`, in θ-coordinates on `[0,1)^m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    pub theta: [f64; MAX_DIM],
    pub grad_residual: f64,
    pub hess_det: f64,
    pub morse_index: usize,
    pub degenerate: bool,
}

/// The critical set of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CountingMeasure {
    pub m: usize,
    pub r: f64,
    pub points: Vec<CriticalPoint>,
    /// Newton runs that did not converge.
    pub discarded_seeds: usize,
    pub seeds: usize,
}

impl CountingMeasure {
    pub fn count(&self) -> usize {
        self.points.len()
    }

    /// True when some retained point has a degenerate Hessian.
    pub fn is_non_morse(&self) -> bool {
        self.points.iter().any(|p| p.degenerate)
    }

    /// `Σ (−1)^{index}` over the critical set.
    pub fn euler_characteristic(&self) -> i64 {
        self.points
            .iter()
            .map(|p| if p.morse_index % 2 == 0 { 1 } else { -1 })
            .sum()
    }

    pub fn index_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.m + 1];
        for p in &self.points {
            c[p.morse_index] += 1;
        }
        c
    }

    /// CSV with columns `theta0..theta{m-1}, residual, det, index`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.m).map(|j| format!("theta{j}")).collect();
        header.extend(["residual", "det", "index"].map(String::from));
        w.write_record(&header)?;
        for p in &self.points {
            let mut rec: Vec<String> = p.theta[..self.m].iter().map(|v| format!("{v:.17e}")).collect();
            rec.push(format!("{:.6e}", p.grad_residual));
            rec.push(format!("{:.17e}", p.hess_det));
            rec.push(p.morse_index.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Test functions on the torus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    /// `(1 − (|θ−c|/r0)²)³` on the geodesic ball of radius `r0 < 1/2`.
    Bump { center: [f64; MAX_DIM], r0: f64 },
    /// Indicator of the half-open box `[lo, hi)` inside `[0,1)^m`.
    Indicator { lo: [f64; MAX_DIM], hi: [f64; MAX_DIM] },
    /// The constant 1.
    FullTorus,
    /// The constant 0.
    Zero,
}

impl TestFunction {
    pub fn bump(center: &[f64], r0: f64) -> Result<Self> {
        if !(r0 > 0.0 && r0 < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "bump radius must lie in (0, 1/2), got {r0}"
            )));
        }
        let mut c = [0.0; MAX_DIM];
        c[..center.len()].copy_from_slice(center);
        Ok(TestFunction::Bump { center: c, r0 })
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        match *self {
            TestFunction::Bump { center, r0 } => {
                let d2 = torus_dist2(theta, &center[..theta.len()]);
                let u = d2 / (r0 * r0);
                if u >= 1.0 {
                    0.0
                } else {
                    (1.0 - u).powi(3)
                }
            }
            TestFunction::Indicator { lo, hi } => {
                let inside = theta.iter().enumerate().all(|(j, &t)| {
                    let t = t - t.floor();
                    t >= lo[j] && t < hi[j]
                });
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::FullTorus => 1.0,
            TestFunction::Zero => 0.0,
        }
    }

    /// `∫_{T^m} f`.
    pub fn integral(&self, m: usize) -> f64 {
        self.power_integral(m, 1)
    }

    /// `∫_{T^m} f²`.
    pub fn integral_sq(&self, m: usize) -> f64 {
        self.power_integral(m, 2)
    }

    fn power_integral(&self, m: usize, p: i32) -> f64 {
        match *self {
            TestFunction::Bump { r0, .. } => {
                // |S^{m−1}| r0^m ∫_0^1 u^{m−1}(1−u²)^{3p} du = |S^{m−1}| r0^m B(m/2, 3p+1)/2.
                use statrs::function::gamma::gamma;
                let a = m as f64 / 2.0;
                let b = 3.0 * p as f64 + 1.0;
                let beta = gamma(a) * gamma(b) / gamma(a + b);
                sphere_area(m) * r0.powi(m as i32) * beta / 2.0
            }
            TestFunction::Indicator { lo, hi } => (0..m).map(|j| hi[j] - lo[j]).product(),
            TestFunction::FullTorus => 1.0,
            TestFunction::Zero => 0.0,
        }
    }
}

/// Squared torus distance on `[0,1)^m`.
pub fn torus_dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y) - (x - y).round();
            d * d
        })
        .sum()
}

/// `Z_R(f) = Σ_points f(θ)`.
pub fn pair_measure(measure: &CountingMeasure, f: &TestFunction) -> f64 {
    measure.points.iter().map(|p| f.eval(&p.theta[..measure.m])).sum()
}

/// Numerical settings of the finder, in θ-units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinderSettings {
    pub grid_n: usize,
    pub newton_tol: f64,
    pub dedup_tol: f64,
    pub max_newton_iter: usize,
    /// `|det Hess F|` below this flags a degenerate point.
    pub degeneracy_tol: f64,
}

/// Grid size at or below which every node seeds a Newton run.
pub const SEED_ALL_NODES_MAX: usize = 64;

impl FinderSettings {
    /// Defaults derived from the sample's spectrum (or its terms for injected fields).
    ///
    /// Grid spacing is at most a quarter of `√(d/h)` in x-units where `d` and `h`
    /// are the gradient and diagonal Hessian variances; Newton tolerance is
    /// `1e-10` of the gradient scale and degeneracy is `|det| < 1e-10` times the
    /// Hessian scale to the power `m`.
    pub fn for_sample(sample: &FieldSample) -> Self {
        let m = sample.dim();
        // θ-unit variances: Var ∂₁F = Σ factor² (2πℓ₁)². Injected fields use their actual coefficients.
        let random = sample.spectrum().is_some();
        let (mut d, mut h) = (0.0, 0.0);
        for t in sample.terms() {
            let w = 2.0 * std::f64::consts::PI * t.ell[0] as f64;
            let c2 = if random {
                t.factor * t.factor
            } else {
                t.factor * t.factor * (t.a * t.a + t.b * t.b)
            };
            d += c2 * w * w;
            h += c2 * w.powi(4);
        }
        let (d, h) = if d > 0.0 && h > 0.0 { (d, h) } else { (1.0, 1.0) };
        let corr = (d / h).sqrt();
        let grid_n = ((4.0 / corr).ceil() as usize).max(8);
        Self {
            grid_n,
            newton_tol: 1e-10 * d.sqrt(),
            dedup_tol: 1e-6,
            max_newton_iter: 50,
            degeneracy_tol: 1e-10 * h.sqrt().powi(m as i32),
        }
    }
}

/// Finds all critical points of `sample` by grid-seeded Newton iteration on `∇F = 0`.
pub fn find_critical_points(sample: &FieldSample, settings: &FinderSettings) -> Result<CountingMeasure> {
    let m = sample.dim();
    let n = settings.grid_n;
    if n < 2 {
        return Err(Error::InvalidArgument("grid_n must be at least 2".into()));
    }
    if sample.is_constant() {
        return Ok(CountingMeasure {
            m,
            r: sample.scale(),
            points: vec![],
            discarded_seeds: 0,
            seeds: 0,
        });
    }
    let seeds = seed_nodes(sample, n)?;
    let spacing = 1.0 / n as f64;
    // Floating-point floor for the gradient residual.
    let grad_floor: f64 = sample
        .terms()
        .iter()
        .map(|t| {
            let l: f64 = t.ell[..m].iter().map(|&v| (v as f64).abs()).sum();
            t.factor.abs() * (t.a.abs() + t.b.abs()) * 2.0 * std::f64::consts::PI * l
        })
        .sum::<f64>()
        * 64.0
        * f64::EPSILON;
    let tol = settings.newton_tol.max(grad_floor);
    let results: Vec<Option<(CriticalPoint, Jet)>> = if seeds.len() > 256 {
        seeds
            .par_iter()
            .map(|s| newton(sample, s, tol, settings.max_newton_iter, spacing))
            .collect()
    } else {
        seeds
            .iter()
            .map(|s| newton(sample, s, tol, settings.max_newton_iter, spacing))
            .collect()
    };
    let discarded = results.iter().filter(|r| r.is_none()).count();
    if discarded > 0 {
        log::debug!("{discarded} of {} Newton seeds did not converge", seeds.len());
    }
    let mut points = dedup(
        results.into_iter().flatten().map(|(p, _)| p).collect(),
        m,
        settings.dedup_tol,
    );
    for p in &mut points {
        p.degenerate = p.hess_det.abs() < settings.degeneracy_tol;
    }
    Ok(CountingMeasure {
        m,
        r: sample.scale(),
        points,
        discarded_seeds: discarded,
        seeds: seeds.len(),
    })
}

fn unflatten(flat: usize, n: usize, m: usize) -> [usize; MAX_DIM] {
    let mut idx = [0; MAX_DIM];
    let mut rem = flat;
    for j in (0..m).rev() {
        idx[j] = rem % n;
        rem /= n;
    }
    idx
}

fn flatten(idx: &[usize], n: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * n + i)
}

/// Grid nodes that start a Newton run.
///
/// Every node when `n ≤ 64`. Otherwise a node is kept when its Newton step is
/// at most two grid spacings, or when every gradient component changes sign on
/// the corners of the cell it anchors.
fn seed_nodes(sample: &FieldSample, n: usize) -> Result<Vec<[f64; MAX_DIM]>> {
    let m = sample.dim();
    let total = n.pow(m as u32);
    let node = |flat: usize| {
        let idx = unflatten(flat, n, m);
        let mut th = [0.0; MAX_DIM];
        for j in 0..m {
            th[j] = idx[j] as f64 / n as f64;
        }
        th
    };
    if n <= SEED_ALL_NODES_MAX {
        return Ok((0..total).map(node).collect());
    }
    let mut grads = Vec::with_capacity(m);
    for j in 0..m {
        let mut a = vec![0; m];
        a[j] = 1;
        grads.push(sample.grid_derivative(n, &a)?);
    }
    let mut hess = vec![vec![]; m * m];
    for i in 0..m {
        for j in i..m {
            let mut a = vec![0; m];
            a[i] += 1;
            a[j] += 1;
            let g = sample.grid_derivative(n, &a)?;
            hess[j * m + i] = g.clone();
            hess[i * m + j] = g;
        }
    }
    let spacing = 1.0 / n as f64;
    let limit = 2.0 * spacing;
    let mut out = Vec::new();
    for flat in 0..total {
        let g = DVector::from_fn(m, |j, _| grads[j][flat]);
        let h = DMatrix::from_fn(m, m, |i, j| hess[i * m + j][flat]);
        let near = match h.lu().solve(&g) {
            Some(step) => step.amax() <= limit,
            None => false,
        };
        let bracket = near || {
            let idx = unflatten(flat, n, m);
            (0..m).all(|c| {
                let mut pos = false;
                let mut neg = false;
                for corner in 0..(1usize << m) {
                    let mut k = [0usize; MAX_DIM];
                    for j in 0..m {
                        k[j] = (idx[j] + ((corner >> j) & 1)) % n;
                    }
                    let v = grads[c][flatten(&k[..m], n)];
                    if v >= 0.0 {
                        pos = true;
                    } else {
                        neg = true;
                    }
                }
                pos && neg
            })
        };
        if bracket {
            out.push(node(flat));
        }
    }
    Ok(out)
}

fn newton(
    sample: &FieldSample,
    start: &[f64; MAX_DIM],
    tol: f64,
    max_iter: usize,
    max_step: f64,
) -> Option<(CriticalPoint, Jet)> {
    let m = sample.dim();
    let mut th = *start;
    for _ in 0..=max_iter {
        let jet = sample.jet_unchecked(&th[..m], 2);
        let g = DVector::from_fn(m, |j, _| jet.grad[j]);
        let res = g.norm();
        let h = jet.hessian_matrix(m);
        if res <= tol {
            for v in th.iter_mut().take(m) {
                *v -= v.floor();
                if *v >= 1.0 {
                    *v = 0.0;
                }
            }
            let eig = SymmetricEigen::new(h.clone());
            let index = eig.eigenvalues.iter().filter(|&&e| e < 0.0).count();
            return Some((
                CriticalPoint {
                    theta: th,
                    grad_residual: res,
                    hess_det: h.determinant(),
                    morse_index: index,
                    degenerate: false,
                },
                jet,
            ));
        }
        let step = h.lu().solve(&g)?;
        let big = step.amax();
        let scale = if big > max_step { max_step / big } else { 1.0 };
        if !big.is_finite() {
            return None;
        }
        for j in 0..m {
            th[j] -= scale * step[j];
        }
    }
    None
}

/// Removes points closer than `tol` in the torus metric, keeping the smaller residual.
fn dedup(mut pts: Vec<CriticalPoint>, m: usize, tol: f64) -> Vec<CriticalPoint> {
    pts.sort_by(|a, b| a.grad_residual.total_cmp(&b.grad_residual));
    let cell = (tol * 4.0).max(1e-12);
    let ncell = (1.0 / cell).floor() as i64;
    let key = |th: &[f64]| {
        let mut k = [0i64; MAX_DIM];
        for j in 0..m {
            k[j] = ((th[j] / cell).floor() as i64).rem_euclid(ncell);
        }
        k
    };
    let mut buckets: HashMap<[i64; MAX_DIM], Vec<usize>> = HashMap::new();
    let mut kept: Vec<CriticalPoint> = Vec::new();
    for p in pts {
        let k = key(&p.theta[..m]);
        let mut clash = false;
        'outer: for off in 0..3i64.pow(m as u32) {
            let mut nk = [0i64; MAX_DIM];
            let mut o = off;
            for j in 0..m {
                nk[j] = (k[j] + (o % 3) - 1).rem_euclid(ncell);
                o /= 3;
            }
            if let Some(list) = buckets.get(&nk) {
                for &i in list {
                    if torus_dist2(&kept[i].theta[..m], &p.theta[..m]) < tol * tol {
                        clash = true;
                        break 'outer;
                    }
                }
            }
        }
        if !clash {
            buckets.entry(k).or_default().push(kept.len());
            kept.push(p);
        }
    }
    kept.sort_by(|a, b| {
        for j in 0..m {
            let c = a.theta[j].total_cmp(&b.theta[j]);
            if c != std::cmp::Ordering::Equal {
                return c;
            }
        }
        std::cmp::Ordering::Equal
    });
    kept
}

/// Roots of `F′` for a one-dimensional sample from sign changes on a periodic grid,
/// each refined by bisection.
pub fn brute_force_roots_1d(sample: &FieldSample, grid_n: usize) -> Result<Vec<f64>> {
    if sample.dim() != 1 {
        return Err(Error::InvalidArgument("brute-force counting needs m = 1".into()));
    }
    if sample.is_constant() {
        return Ok(vec![]);
    }
    let nfreq = sample.max_index().max(1);
    if grid_n < 16 * nfreq {
        return Err(Error::InvalidArgument(format!(
            "grid_n = {grid_n} is below 16 × {nfreq} retained frequencies"
        )));
    }
    let d = sample.grid_derivative(grid_n, &[1])?;
    let scale = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let pos = |v: f64| v >= 0.0;
    let mut roots = Vec::new();
    for i in 0..grid_n {
        let (a, b) = (d[i], d[(i + 1) % grid_n]);
        if a.abs() < 1e-13 * scale && b.abs() < 1e-13 * scale {
            return Err(Error::ResolutionInsufficient(i));
        }
        if pos(a) != pos(b) {
            let mut lo = i as f64 / grid_n as f64;
            let mut hi = (i + 1) as f64 / grid_n as f64;
            let plo = pos(a);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let v = sample.jet_unchecked(&[mid], 1).grad[0];
                if pos(v) == plo {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let r = 0.5 * (lo + hi);
            roots.push(r - r.floor());
        }
    }
    Ok(roots)
}

/// Number of critical points of a one-dimensional sample by sign-change counting.
pub fn brute_force_count_1d(sample: &FieldSample, grid_n: usize) -> Result<usize> {
    Ok(brute_force_roots_1d(sample, grid_n)?.len())
}
