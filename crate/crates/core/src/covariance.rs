//! Stationary covariance kernels of the rescaled field `Φ(x) = F(x/R)`.
//!
//! The torus kernel is a finite cosine sum over the truncated lattice
//! spectrum. The continuum kernel is available in closed form for the
//! gaussian amplitude and otherwise through a dense lattice whose period is
//! large enough that periodic images are below double precision.
//!
//! Covariances of arbitrary linear functionals of the field (derivatives at
//! two points, divided gradient differences) are assembled mode by mode in
//! [`covariance_matrix`]; every Gaussian vector used elsewhere in the crate is
//! built there.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::amplitude::{Amplitude, AmplitudeKind};
use crate::error::{Error, Result};
use crate::special::{hermite, hermite_coeffs, multi_indices};
use crate::MAX_DIM;

/// Default spectral truncation level.
pub const DEFAULT_EPS_TRUNC: f64 = 1e-12;

/// Highest derivative order served by the kernel routines.
pub const MAX_KERNEL_ORDER: usize = 4;

/// One retained frequency of the half lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    /// Integer lattice vector `ℓ` (`ℓ = 0` or first nonzero entry positive).
    pub ell: [i32; MAX_DIM],
    /// Frequency `2πℓ/R` in x-units.
    pub xi: [f64; MAX_DIM],
    /// Coefficient multiplier in the series: `R^{-m/2}` for `ℓ = 0`,
    /// `√2 R^{-m/2} a(|ξ|)` otherwise.
    pub amp_factor: f64,
}

impl Mode {
    /// Weight of `cos⟨ξ, z⟩` in the kernel, `amp_factor²`.
    #[inline]
    pub fn weight(&self) -> f64 {
        self.amp_factor * self.amp_factor
    }
}

/// Where a spectrum comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumSource {
    /// The torus field at scale `R`.
    Lattice,
    /// A dense lattice standing in for the continuum kernel.
    ContinuumProxy,
}

/// Truncated lattice spectrum `{2πℓ/R}` with weights `R^{-m} a(|2πℓ|/R)²`.
#[derive(Debug, Clone)]
pub struct LatticeSpectrum {
    amp: Amplitude,
    m: usize,
    r: f64,
    eps_trunc: f64,
    l_trunc: f64,
    modes: Vec<Mode>,
    omitted_weight: f64,
    source: SpectrumSource,
}

impl LatticeSpectrum {
    pub fn new(amp: &Amplitude, m: usize, r: f64) -> Result<Self> {
        Self::with_eps(amp, m, r, DEFAULT_EPS_TRUNC)
    }

    pub fn with_eps(amp: &Amplitude, m: usize, r: f64, eps_trunc: f64) -> Result<Self> {
        check_dim(m)?;
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidArgument(format!("R must be positive, got {r}")));
        }
        let l_trunc = amp.truncation_radius(eps_trunc)?;
        let modes = enumerate_modes(amp, m, r, l_trunc);
        // Omitted mass: sum the shells between the cutoff and the point where a² underflows.
        let far = amp.truncation_radius(1e-150).unwrap_or(l_trunc);
        let omitted_weight = if far > l_trunc {
            let outer = enumerate_modes(amp, m, r, far);
            outer
                .iter()
                .filter(|md| norm(&md.xi[..m]) > l_trunc)
                .map(Mode::weight)
                .sum()
        } else {
            0.0
        };
        Ok(Self {
            amp: amp.clone(),
            m,
            r,
            eps_trunc,
            l_trunc,
            modes,
            omitted_weight,
            source: SpectrumSource::Lattice,
        })
    }

    /// Dense lattice reproducing the continuum kernel and its derivatives up to
    /// order 4 on `|z|_∞ ≤ reach`.
    pub fn continuum_proxy(amp: &Amplitude, m: usize, reach: f64) -> Result<Self> {
        check_dim(m)?;
        let decay = continuum_decay_radius(amp, m)?;
        let mut s = Self::new(amp, m, 2.0 * (reach.abs() + decay))?;
        s.source = SpectrumSource::ContinuumProxy;
        Ok(s)
    }

    /// Keeps only the first `k` modes (`ℓ = 0` comes first). Used to build degenerate spectra.
    pub fn truncated_to(&self, k: usize) -> Self {
        let mut s = self.clone();
        s.modes.truncate(k.max(1));
        s
    }

    pub fn amplitude(&self) -> &Amplitude {
        &self.amp
    }
    pub fn dim(&self) -> usize {
        self.m
    }
    pub fn scale(&self) -> f64 {
        self.r
    }
    pub fn eps_trunc(&self) -> f64 {
        self.eps_trunc
    }
    pub fn cutoff(&self) -> f64 {
        self.l_trunc
    }
    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }
    pub fn source(&self) -> SpectrumSource {
        self.source
    }
    /// Sum of kernel weights left out by the truncation.
    pub fn omitted_weight(&self) -> f64 {
        self.omitted_weight
    }
    /// Largest `|ℓ_j|` among the retained modes.
    pub fn max_index(&self) -> usize {
        self.modes
            .iter()
            .flat_map(|md| md.ell[..self.m].iter().map(|v| v.unsigned_abs() as usize))
            .max()
            .unwrap_or(0)
    }

    /// `Var[∂₁Φ(0)]`, the gradient variance in x-units.
    pub fn gradient_variance(&self) -> f64 {
        let mut a = [0usize; MAX_DIM];
        a[0] = 2;
        -kernel_deriv_lattice(self, &[0.0; MAX_DIM][..self.m], &a[..self.m]).unwrap_or(0.0)
    }

    /// `Var[∂₁₁Φ(0)]`, the diagonal Hessian variance in x-units.
    pub fn hessian_variance(&self) -> f64 {
        let mut a = [0usize; MAX_DIM];
        a[0] = 4;
        kernel_deriv_lattice(self, &[0.0; MAX_DIM][..self.m], &a[..self.m]).unwrap_or(0.0)
    }
}

fn check_dim(m: usize) -> Result<()> {
    if m == 0 || m > MAX_DIM {
        return Err(Error::InvalidArgument(format!(
            "dimension must be in 1..={MAX_DIM}, got {m}"
        )));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn enumerate_modes(amp: &Amplitude, m: usize, r: f64, l_cut: f64) -> Vec<Mode> {
    let step = 2.0 * PI / r;
    let nmax = (l_cut / step).floor() as i32;
    let base = r.powf(-(m as f64) / 2.0);
    let mut out = vec![Mode {
        ell: [0; MAX_DIM],
        xi: [0.0; MAX_DIM],
        amp_factor: base,
    }];
    let mut ell = [0i32; MAX_DIM];
    let ranges: Vec<i32> = (0..m).map(|_| nmax).collect();
    let mut idx = vec![-nmax; m];
    if nmax == 0 {
        return out;
    }
    loop {
        ell[..m].copy_from_slice(&idx);
        let positive = ell[..m].iter().find(|&&v| v != 0).is_some_and(|&v| v > 0);
        if positive {
            let mut xi = [0.0; MAX_DIM];
            for j in 0..m {
                xi[j] = step * ell[j] as f64;
            }
            let rad = norm(&xi[..m]);
            if rad <= l_cut {
                out.push(Mode {
                    ell,
                    xi,
                    amp_factor: std::f64::consts::SQRT_2 * base * amp.eval(rad),
                });
            }
        }
        // Odometer increment, last coordinate fastest.
        let mut j = m;
        loop {
            if j == 0 {
                return out;
            }
            j -= 1;
            if idx[j] < ranges[j] {
                idx[j] += 1;
                for v in idx.iter_mut().skip(j + 1) {
                    *v = -nmax;
                }
                break;
            }
        }
    }
}

/// Distance beyond which the continuum kernel and its derivatives up to order 4
/// are below `1e-14` relative to their size at the origin.
fn continuum_decay_radius(amp: &Amplitude, m: usize) -> Result<f64> {
    if let Some(s) = amp.gaussian_scale() {
        return Ok(20.0 / s);
    }
    let mut d = 16.0 * amp.correlation_length(m)?;
    for _ in 0..12 {
        let s = LatticeSpectrum::new(amp, m, 4.0 * d)?;
        // Each derivative is measured against its own scale Σ w |ξ₁|^n.
        let scales: Vec<f64> = (0..=MAX_KERNEL_ORDER)
            .map(|n| {
                s.modes
                    .iter()
                    .map(|md| md.weight() * md.xi[0].abs().powi(n as i32))
                    .sum()
            })
            .collect();
        let mut z = vec![0.0; m];
        let worst = (0..=8)
            .map(|i| {
                z[0] = d * (1.0 + i as f64 / 8.0);
                let mut a = vec![0; m];
                (0..=MAX_KERNEL_ORDER)
                    .map(|n| {
                        a[0] = n;
                        let v = kernel_deriv_lattice(&s, &z, &a).unwrap_or(f64::INFINITY);
                        v.abs() / scales[n]
                    })
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if worst < 1e-14 {
            return Ok(d);
        }
        d *= 2.0;
    }
    Err(Error::Unsupported(format!(
        "continuum kernel of {amp} does not decay within the supported range"
    )))
}

/// `n`-th derivative of cos at `φ`.
#[inline]
pub(crate) fn cos_deriv(n: usize, c: f64, s: f64) -> f64 {
    match n % 4 {
        0 => c,
        1 => -s,
        2 => -c,
        _ => s,
    }
}

/// `n`-th derivative of sin at `φ`.
#[inline]
pub(crate) fn sin_deriv(n: usize, c: f64, s: f64) -> f64 {
    match n % 4 {
        0 => s,
        1 => c,
        2 => -s,
        _ => -c,
    }
}

fn check_alpha(alpha: &[usize], m: usize) -> Result<usize> {
    if alpha.len() != m {
        return Err(Error::InvalidArgument(format!(
            "multi-index has {} entries, dimension is {m}",
            alpha.len()
        )));
    }
    let order: usize = alpha.iter().sum();
    if order > MAX_KERNEL_ORDER {
        return Err(Error::Unsupported(format!(
            "kernel derivatives of order {order} (maximum {MAX_KERNEL_ORDER})"
        )));
    }
    Ok(order)
}

#[inline]
fn monomial(xi: &[f64], alpha: &[usize]) -> f64 {
    xi.iter().zip(alpha).map(|(x, &a)| x.powi(a as i32)).product()
}

/// `∂^α K^R(z) = Σ_ℓ w_ℓ ∂^α cos⟨ξ_ℓ, z⟩`, `z` in x-units.
pub fn kernel_deriv_lattice(spec: &LatticeSpectrum, z: &[f64], alpha: &[usize]) -> Result<f64> {
    let m = spec.m;
    let order = check_alpha(alpha, m)?;
    if z.len() != m {
        return Err(Error::InvalidArgument("point dimension mismatch".into()));
    }
    let mut acc = 0.0;
    for md in &spec.modes {
        let phase: f64 = (0..m).map(|j| md.xi[j] * z[j]).sum();
        let (s, c) = phase.sin_cos();
        acc += md.weight() * monomial(&md.xi[..m], alpha) * cos_deriv(order, c, s);
    }
    Ok(acc)
}

/// `∂^α K(z)` for the continuum kernel `K = (2π)^{-m} ŵ`.
///
/// The gaussian amplitude `a(x) = e^{-(x/s)²}` has
/// `K(z) = (8π)^{-m/2} s^m e^{-s²|z|²/8}`; its derivatives factor into
/// one-dimensional Hermite functions. Other amplitudes go through a dense lattice.
pub fn kernel_deriv_continuum(amp: &Amplitude, m: usize, z: &[f64], alpha: &[usize]) -> Result<f64> {
    check_dim(m)?;
    check_alpha(alpha, m)?;
    match amp.gaussian_scale() {
        Some(s) => Ok(gaussian_kernel_deriv(s, z, alpha)),
        None => {
            let reach = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let proxy = LatticeSpectrum::continuum_proxy(amp, m, reach)?;
            kernel_deriv_lattice(&proxy, z, alpha)
        }
    }
}

fn gaussian_kernel_deriv(s: f64, z: &[f64], alpha: &[usize]) -> f64 {
    let m = z.len();
    let b = s * s / 8.0;
    let rb = b.sqrt();
    let mut v = (8.0 * PI).powf(-(m as f64) / 2.0) * s.powi(m as i32);
    for (&zj, &aj) in z.iter().zip(alpha) {
        v *= (-rb).powi(aj as i32) * hermite(aj, rb * zj) * (-b * zj * zj).exp();
    }
    v
}

/// `Σ_{k ∈ Z^m} K(Rk − z)`, the periodized continuum kernel.
pub fn kernel_poisson(amp: &Amplitude, m: usize, r: f64, z: &[f64]) -> Result<f64> {
    check_dim(m)?;
    if z.len() != m {
        return Err(Error::InvalidArgument("point dimension mismatch".into()));
    }
    // Reduce to the fundamental cell so that the image window is centered.
    let zr: Vec<f64> = z.iter().map(|&v| v - r * (v / r).round()).collect();
    let decay = continuum_decay_radius(amp, m)?;
    let kmax = ((decay + r / 2.0) / r).ceil() as i64 + 1;
    let alpha = vec![0; m];
    let proxy = match amp.gaussian_scale() {
        Some(_) => None,
        None => Some(LatticeSpectrum::continuum_proxy(amp, m, r * (kmax as f64 + 1.0))?),
    };
    let mut total = 0.0;
    let mut k = vec![-kmax; m];
    let mut y = vec![0.0; m];
    loop {
        for j in 0..m {
            y[j] = r * k[j] as f64 - zr[j];
        }
        total += match &proxy {
            None => gaussian_kernel_deriv(amp.gaussian_scale().unwrap_or(1.0), &y, &alpha),
            Some(p) => kernel_deriv_lattice(p, &y, &alpha)?,
        };
        let mut j = m;
        loop {
            if j == 0 {
                return Ok(total);
            }
            j -= 1;
            if k[j] < kmax {
                k[j] += 1;
                for v in k.iter_mut().skip(j + 1) {
                    *v = -kmax;
                }
                break;
            }
        }
    }
}

/// `sup_{v ≥ t} v^k e^{-v²}`.
fn sup_power_gauss(k: usize, t: f64) -> f64 {
    let t = t.max(0.0);
    let peak = (k as f64 / 2.0).sqrt();
    let v = t.max(peak);
    if k == 0 {
        (-v * v).exp()
    } else {
        v.powi(k as i32) * (-v * v).exp()
    }
}

/// Certified `sup_{|u| ≥ t} |d^n/du^n e^{-b u²}|`.
fn gaussian_factor_envelope(n: usize, b: f64, t: f64) -> f64 {
    let rb = b.sqrt();
    let tv = rb * t;
    let poly: f64 = hermite_coeffs(n)
        .iter()
        .enumerate()
        .map(|(k, c)| c.abs() * sup_power_gauss(k, tv))
        .sum();
    rb.powi(n as i32) * poly
}

/// Upper bound for `‖K^R − K‖_{C^ℓ(RB)}` with `B = [−r0/2, r0/2]^m`.
///
/// Bounds `Σ_{k ≠ 0} sup_{x ∈ RB} |∂^α K(x − Rk)|` using `|x_j − Rk_j| ≥ R(|k_j| − r0/2)`.
/// For the gaussian amplitude each coordinate factor has a certified Hermite
/// envelope. For other amplitudes `sup |y|_∞^p |∂^α K(y)|` over the far region is
/// sampled on a grid and the lattice sum `Σ (|k|_∞ − r0/2)^{-p}` is summed with an
/// integral tail; the result then scales exactly like `R^{-p}` times a sampled sup.
pub fn kernel_gap_bound(amp: &Amplitude, m: usize, r: f64, r0: f64, ell: usize, p: f64) -> Result<f64> {
    check_dim(m)?;
    if !(r > 2.0) {
        return Err(Error::InvalidArgument(format!("R must exceed 2, got {r}")));
    }
    if !(r0 > 0.0 && r0 < 1.0) {
        return Err(Error::InvalidArgument(format!("r0 must lie in (0,1), got {r0}")));
    }
    if ell > MAX_KERNEL_ORDER {
        return Err(Error::Unsupported(format!("C^{ell} norm")));
    }
    if !(p > m as f64) {
        return Err(Error::DivergentTailSum { p, m });
    }
    let alphas = multi_indices(m, ell);
    match amp.gaussian_scale() {
        Some(s) => {
            let b = s * s / 8.0;
            let c = (8.0 * PI).powf(-(m as f64) / 2.0) * s.powi(m as i32);
            let mut worst = 0.0f64;
            for alpha in &alphas {
                // e0[j]: sup over all u; tail[j]: Σ_{k≠0} sup over |u| ≥ R(|k| − r0/2).
                let mut e0 = [0.0; MAX_DIM];
                let mut tail = [0.0; MAX_DIM];
                for j in 0..m {
                    e0[j] = gaussian_factor_envelope(alpha[j], b, 0.0);
                    let mut k = 1;
                    loop {
                        let t = r * (k as f64 - r0 / 2.0);
                        let e = gaussian_factor_envelope(alpha[j], b, t);
                        tail[j] += 2.0 * e;
                        // Terms decay faster than geometrically with ratio < 1/2 from here.
                        if e < 1e-300 || (e <= tail[j] * 1e-18 && k > 2) {
                            tail[j] += 2.0 * e;
                            break;
                        }
                        k += 1;
                    }
                }
                // Σ over nonzero k of Π_j factor = Σ over nonempty subsets S of Π_{S} tail Π_{S^c} e0.
                let mut sum = 0.0;
                for mask in 1u32..(1 << m) {
                    let mut prod = 1.0;
                    for j in 0..m {
                        prod *= if mask & (1 << j) != 0 { tail[j] } else { e0[j] };
                    }
                    sum += prod;
                }
                worst = worst.max(c * sum);
            }
            Ok(worst)
        }
        None => {
            let t0 = r * (1.0 - r0 / 2.0);
            let width = 4.0 * t0.max(amp.correlation_length(m)?);
            let proxy = LatticeSpectrum::continuum_proxy(amp, m, t0 + width)?;
            let mut sup = 0.0f64;
            let n = if m == 1 { 400 } else { 48 };
            for alpha in &alphas {
                for_each_shell_point(m, t0, t0 + width, n, |y| {
                    let yn = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    if let Ok(v) = kernel_deriv_lattice(&proxy, y, alpha) {
                        sup = sup.max(yn.powf(p) * v.abs());
                    }
                });
            }
            Ok(sup * r.powf(-p) * lattice_zeta(m, r0, p))
        }
    }
}

/// `Σ_{k ∈ Z^m∖0} (|k|_∞ − r0/2)^{-p}` with an integral bound for the tail.
fn lattice_zeta(m: usize, r0: f64, p: f64) -> f64 {
    let shell = |n: f64| (2.0 * n + 1.0).powi(m as i32) - (2.0 * n - 1.0).powi(m as i32);
    let nmax = 20_000usize;
    let mut s = 0.0;
    for n in 1..=nmax {
        let nf = n as f64;
        s += shell(nf) * (nf - r0 / 2.0).powf(-p);
    }
    // shell(n) ≤ 2m(2n+1)^{m-1}; for n > nmax bound the remaining sum by an integral.
    let a = nmax as f64 - r0 / 2.0;
    s + 2.0 * m as f64 * 3f64.powi(m as i32 - 1) * a.powf(m as f64 - p) / (p - m as f64)
}

fn for_each_shell_point<F: FnMut(&[f64])>(m: usize, lo: f64, hi: f64, n: usize, mut f: F) {
    let mut idx = vec![0usize; m];
    let mut y = vec![0.0; m];
    loop {
        for j in 0..m {
            y[j] = -hi + 2.0 * hi * idx[j] as f64 / (n - 1) as f64;
        }
        let yn = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if yn >= lo {
            f(&y);
        }
        let mut j = m;
        loop {
            if j == 0 {
                return;
            }
            j -= 1;
            if idx[j] + 1 < n {
                idx[j] += 1;
                for v in idx.iter_mut().skip(j + 1) {
                    *v = 0;
                }
                break;
            }
        }
    }
}

/// Derivatives `∂^α K(z)` for all `|α| ≤ 4` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDerivatives {
    pub z: Vec<f64>,
    pub values: Vec<(Vec<usize>, f64)>,
    pub source: KernelSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSource {
    Continuum,
    Lattice { r: f64 },
}

impl KernelDerivatives {
    pub fn get(&self, alpha: &[usize]) -> Option<f64> {
        self.values.iter().find(|(a, _)| a == alpha).map(|(_, v)| *v)
    }
}

pub fn kernel_jet_lattice(spec: &LatticeSpectrum, z: &[f64]) -> Result<KernelDerivatives> {
    let values = multi_indices(spec.m, MAX_KERNEL_ORDER)
        .into_iter()
        .map(|a| {
            let v = kernel_deriv_lattice(spec, z, &a)?;
            Ok((a, v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KernelDerivatives {
        z: z.to_vec(),
        values,
        source: match spec.source {
            SpectrumSource::Lattice => KernelSource::Lattice { r: spec.r },
            SpectrumSource::ContinuumProxy => KernelSource::Continuum,
        },
    })
}

pub fn kernel_jet_continuum(amp: &Amplitude, m: usize, z: &[f64]) -> Result<KernelDerivatives> {
    let values = multi_indices(m, MAX_KERNEL_ORDER)
        .into_iter()
        .map(|a| {
            let v = kernel_deriv_continuum(amp, m, z, &a)?;
            Ok((a, v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KernelDerivatives {
        z: z.to_vec(),
        values,
        source: KernelSource::Continuum,
    })
}

/// `T_R(z) = Σ_{|α| ≤ 4} |∂^α K^R(z)|`.
pub fn t_r(spec: &LatticeSpectrum, z: &[f64]) -> Result<f64> {
    Ok(kernel_jet_lattice(spec, z)?.values.iter().map(|(_, v)| v.abs()).sum())
}

/// Writes kernel tables as CSV with columns `z0..z{m-1}, alpha, value`.
pub fn write_kernel_csv<W: Write>(out: W, tables: &[KernelDerivatives]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let m = tables.first().map(|t| t.z.len()).unwrap_or(1);
    let mut header: Vec<String> = (0..m).map(|j| format!("z{j}")).collect();
    header.push("alpha".into());
    header.push("value".into());
    w.write_record(&header)?;
    for t in tables {
        for (a, v) in &t.values {
            let mut rec: Vec<String> = t.z.iter().map(|x| format!("{x:.17e}")).collect();
            rec.push(a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "));
            rec.push(format!("{v:.17e}"));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_kernel_csv_file(path: &Path, tables: &[KernelDerivatives]) -> Result<()> {
    write_kernel_csv(std::fs::File::create(path)?, tables)
}

/// A linear functional of the field `Φ`, evaluated mode by mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Functional {
    /// `∂^α Φ(p)`.
    Deriv { at: [f64; MAX_DIM], alpha: [u8; MAX_DIM] },
    /// `(∂^α Φ(sep) − ∂^α Φ(0)) / r`, evaluated without cancellation.
    Divided {
        sep: [f64; MAX_DIM],
        r: f64,
        alpha: [u8; MAX_DIM],
    },
}

impl Functional {
    pub fn divided(sep: &[f64], r: f64, alpha: &[usize]) -> Self {
        let mut p = [0.0; MAX_DIM];
        p[..sep.len()].copy_from_slice(sep);
        let mut a = [0u8; MAX_DIM];
        for (d, &s) in a.iter_mut().zip(alpha) {
            *d = s as u8;
        }
        Functional::Divided { sep: p, r, alpha: a }
    }

    pub fn deriv(at: &[f64], alpha: &[usize]) -> Self {
        let mut p = [0.0; MAX_DIM];
        p[..at.len()].copy_from_slice(at);
        let mut a = [0u8; MAX_DIM];
        for (d, &s) in a.iter_mut().zip(alpha) {
            *d = s as u8;
        }
        Functional::Deriv { at: p, alpha: a }
    }

    /// Image of `cos⟨ξ,·⟩` and `sin⟨ξ,·⟩` under the functional.
    #[inline]
    fn coeffs(&self, xi: &[f64; MAX_DIM], m: usize) -> (f64, f64) {
        match *self {
            Functional::Deriv { at, alpha } => {
                let mut phase = 0.0;
                let mut mono = 1.0;
                let mut order = 0usize;
                for j in 0..m {
                    phase += xi[j] * at[j];
                    mono *= xi[j].powi(alpha[j] as i32);
                    order += alpha[j] as usize;
                }
                let (s, c) = phase.sin_cos();
                (mono * cos_deriv(order, c, s), mono * sin_deriv(order, c, s))
            }
            Functional::Divided { sep, r, alpha } => {
                let mut phase = 0.0;
                let mut mono = 1.0;
                let mut order = 0usize;
                for j in 0..m {
                    phase += xi[j] * sep[j];
                    mono *= xi[j].powi(alpha[j] as i32);
                    order += alpha[j] as usize;
                }
                // cos φ − 1 = −2 sin²(φ/2) keeps the difference accurate for small φ.
                let half = (0.5 * phase).sin();
                let cm1 = -2.0 * half * half;
                let s = phase.sin();
                let (dc, ds) = match order % 4 {
                    0 => (cm1, s),
                    1 => (-s, cm1),
                    2 => (-cm1, -s),
                    _ => (s, -cm1),
                };
                (mono * dc / r, mono * ds / r)
            }
        }
    }
}

/// `Cov(L_a Φ, L_b Φ) = Σ_modes w (c_a c_b + s_a s_b)` for the listed functionals.
///
/// Only the upper triangle is accumulated and mirrored, so the result is exactly symmetric.
pub fn covariance_matrix(spec: &LatticeSpectrum, fs: &[Functional]) -> DMatrix<f64> {
    let n = fs.len();
    let m = spec.m;
    let mut acc = vec![0.0; n * n];
    let mut c = vec![0.0; n];
    let mut s = vec![0.0; n];
    for md in &spec.modes {
        let w = md.weight();
        for (k, f) in fs.iter().enumerate() {
            let (ck, sk) = f.coeffs(&md.xi, m);
            c[k] = ck;
            s[k] = sk;
        }
        for a in 0..n {
            for b in a..n {
                acc[a * n + b] += w * (c[a] * c[b] + s[a] * s[b]);
            }
        }
    }
    DMatrix::from_fn(n, n, |a, b| if a <= b { acc[a * n + b] } else { acc[b * n + a] })
}

/// Functionals for `∇Φ(p)`.
pub fn gradient_functionals(m: usize, at: &[f64]) -> Vec<Functional> {
    (0..m)
        .map(|i| {
            let mut a = [0usize; MAX_DIM];
            a[i] = 1;
            Functional::deriv(at, &a[..m])
        })
        .collect()
}

/// Functionals for the upper triangle of `Hess Φ(p)`.
pub fn hessian_functionals(m: usize, at: &[f64]) -> Vec<Functional> {
    crate::special::upper_pairs(m)
        .into_iter()
        .map(|(i, j)| {
            let mut a = [0usize; MAX_DIM];
            a[i] += 1;
            a[j] += 1;
            Functional::deriv(at, &a[..m])
        })
        .collect()
}

/// Is the amplitude kind one with a closed-form continuum kernel?
pub fn has_closed_form(amp: &Amplitude) -> bool {
    matches!(amp.kind(), AmplitudeKind::Gaussian { .. })
}
