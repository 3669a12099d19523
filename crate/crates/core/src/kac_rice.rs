//! Kac-Rice densities of critical points and the constants built from them.
//!
//! All densities are per unit x-volume, for the field `Φ(x) = F(x/R)` with
//! kernel `K^R` (lattice source) or `K` (continuum source).

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::amplitude::Amplitude;
use crate::covariance::{
    covariance_matrix, gradient_functionals, hessian_functionals, kernel_deriv_continuum, Functional, LatticeSpectrum,
};
use crate::error::{Error, Result};
use crate::gaussian::{
    density_at_zero, expected_abs_det, gaussian_factor, lower_mul, mc_moments, min_eigenvalue, regression_covariance,
    sym_det, DensityReport,
};
use crate::rng::derive_seed;
use crate::special::{gauss_legendre, integrate_adaptive, multi_indices, sphere_area, upper_pairs};
use crate::MAX_DIM;

/// Default Monte Carlo sizes.
pub const N_MC_ONE_POINT: usize = 200_000;
pub const N_MC_TWO_POINT: usize = 100_000;

/// Dense-lattice stand-in for the continuum kernel, accurate on `|z|_∞ ≤ reach`.
pub fn continuum_spectrum(amp: &Amplitude, m: usize, reach: f64) -> Result<LatticeSpectrum> {
    LatticeSpectrum::continuum_proxy(amp, m, reach)
}

fn hess_dim(m: usize) -> usize {
    m * (m + 1) / 2
}

fn block(a: &DMatrix<f64>, r0: usize, c0: usize, nr: usize, nc: usize) -> DMatrix<f64> {
    a.view((r0, c0), (nr, nc)).into_owned()
}

/// `Var[∇Φ(0)]` and the covariance of the Hessian upper triangle at one point.
pub fn one_point_blocks(spec: &LatticeSpectrum) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = spec.dim();
    let zero = [0.0; MAX_DIM];
    let mut fs = gradient_functionals(m, &zero[..m]);
    fs.extend(hessian_functionals(m, &zero[..m]));
    let c = covariance_matrix(spec, &fs);
    let k = hess_dim(m);
    (block(&c, 0, 0, m, m), block(&c, m, m, k, k))
}

/// `ρ = E|det H| · (2π)^{-m/2} det(Var ∇)^{-1/2}` from explicit blocks.
///
/// Gradient and Hessian at the same point are independent (odd kernel
/// derivatives vanish at 0), so no conditioning is needed.
pub fn one_point_from_blocks(
    var_grad: &DMatrix<f64>,
    cov_hess: &DMatrix<f64>,
    m: usize,
    n_mc: usize,
    seed: u64,
) -> Result<DensityReport> {
    let p = density_at_zero(var_grad)?;
    let e = expected_abs_det(cov_hess, m, n_mc, seed)?;
    Ok(DensityReport {
        method: "one-point kac-rice".into(),
        ..e.scaled(p)
    })
}

/// One-point Kac-Rice density of critical points.
pub fn one_point_density(spec: &LatticeSpectrum, n_mc: usize, seed: u64) -> Result<DensityReport> {
    let (g, h) = one_point_blocks(spec);
    one_point_from_blocks(&g, &h, spec.dim(), n_mc, seed)
}

/// Covariance data for the pair `(0, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPointMatrices {
    pub z: Vec<f64>,
    /// Joint covariance of `(∇Φ(0), ∇Φ(z), H(0), H(z))`.
    pub sigma: DMatrix<f64>,
    /// `Var(H(0), H(z) | ∇Φ(0) = ∇Φ(z) = 0)`.
    pub cond_hat: DMatrix<f64>,
    /// Same with all cross blocks between the two points removed.
    pub cond_tilde: DMatrix<f64>,
    pub var_grad_hat: DMatrix<f64>,
    pub var_grad_tilde: DMatrix<f64>,
}

/// Assembles the two-point matrices from the separation `z` alone.
pub fn two_point_matrices(spec: &LatticeSpectrum, z: &[f64]) -> Result<TwoPointMatrices> {
    let m = spec.dim();
    if z.len() != m {
        return Err(Error::InvalidArgument("separation dimension mismatch".into()));
    }
    let k = hess_dim(m);
    let zero = [0.0; MAX_DIM];
    let mut fs = gradient_functionals(m, &zero[..m]);
    fs.extend(gradient_functionals(m, z));
    fs.extend(hessian_functionals(m, &zero[..m]));
    fs.extend(hessian_functionals(m, z));
    let sigma = covariance_matrix(spec, &fs);
    let g = 2 * m;
    let sgg = block(&sigma, 0, 0, g, g);
    let shg = block(&sigma, g, 0, 2 * k, g);
    let shh = block(&sigma, g, g, 2 * k, 2 * k);
    let cond_hat = regression_covariance(&shh, &shg, &sgg)?;
    // Independent copies: keep only same-point blocks. Gradient and Hessian at one
    // point are uncorrelated, so the conditional Hessian law is the marginal one.
    let mut sgg_t = sgg.clone();
    let mut shh_t = shh.clone();
    for i in 0..g {
        for j in 0..g {
            if (i < m) != (j < m) {
                sgg_t[(i, j)] = 0.0;
            }
        }
    }
    for i in 0..2 * k {
        for j in 0..2 * k {
            if (i < k) != (j < k) {
                shh_t[(i, j)] = 0.0;
            }
        }
    }
    Ok(TwoPointMatrices {
        z: z.to_vec(),
        sigma,
        cond_hat,
        cond_tilde: shh_t,
        var_grad_hat: sgg,
        var_grad_tilde: sgg_t,
    })
}

/// The same matrices for the points `x` and `y`; only `y − x` enters.
pub fn two_point_matrices_between(spec: &LatticeSpectrum, x: &[f64], y: &[f64]) -> Result<TwoPointMatrices> {
    let z: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    two_point_matrices(spec, &z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPointReport {
    pub z: Vec<f64>,
    pub rho_hat: DensityReport,
    pub rho_tilde: DensityReport,
    pub delta: DensityReport,
}

/// `ρ̂(z)`, `ρ̃(z)` and `δ = ρ̂ − ρ̃`, estimated with common random numbers.
pub fn two_point_density(spec: &LatticeSpectrum, z: &[f64], n_mc: usize, seed: u64) -> Result<TwoPointReport> {
    let m = spec.dim();
    let k = hess_dim(m);
    let mats = two_point_matrices(spec, z)?;
    let p_hat = density_at_zero(&mats.var_grad_hat)?;
    let p_tilde = density_at_zero(&mats.var_grad_tilde)?;
    let l_hat = gaussian_factor(&mats.cond_hat)?;
    let l_tilde = gaussian_factor(&mats.cond_tilde)?;
    let sums = mc_moments(2 * k, 2, n_mc, seed, |zeta, out| {
        let mut h = [0.0; 12];
        lower_mul(&l_hat, zeta, &mut h[..2 * k]);
        out[0] = (sym_det(&h[..k], m) * sym_det(&h[k..2 * k], m)).abs() * p_hat;
        lower_mul(&l_tilde, zeta, &mut h[..2 * k]);
        out[1] = (sym_det(&h[..k], m) * sym_det(&h[k..2 * k], m)).abs() * p_tilde;
    });
    let delta = DensityReport {
        value: sums.mean(0) - sums.mean(1),
        std_error: sums.std_error_of(&[1.0, -1.0]),
        mc_samples: sums.n,
        method: "paired difference".into(),
    };
    Ok(TwoPointReport {
        z: z.to_vec(),
        rho_hat: sums.report(0, "two-point kac-rice"),
        rho_tilde: sums.report(1, "independent copies"),
        delta,
    })
}

/// Covariance data for the gauge-changed pair at separation `rν`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlowUpMatrices {
    /// `Var(∇Φ(0), Ξ)` with `Ξ = (∇Φ(rν) − ∇Φ(0))/r`.
    pub var_cond: DMatrix<f64>,
    /// `Var(H(0), D | ∇Φ(0) = 0, Ξ = 0)` with `D = (H(rν) − H(0))/r`.
    pub cond: DMatrix<f64>,
}

pub fn blow_up_matrices(spec: &LatticeSpectrum, r: f64, nu: &[f64]) -> Result<BlowUpMatrices> {
    let m = spec.dim();
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("r must be positive, got {r}")));
    }
    if nu.len() != m {
        return Err(Error::InvalidArgument("direction dimension mismatch".into()));
    }
    let norm = nu.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sep: Vec<f64> = nu.iter().map(|v| r * v / norm).collect();
    let k = hess_dim(m);
    let zero = [0.0; MAX_DIM];
    let mut fs = gradient_functionals(m, &zero[..m]);
    for i in 0..m {
        let mut a = [0usize; MAX_DIM];
        a[i] = 1;
        fs.push(Functional::divided(&sep, r, &a[..m]));
    }
    fs.extend(hessian_functionals(m, &zero[..m]));
    for (i, j) in upper_pairs(m) {
        let mut a = [0usize; MAX_DIM];
        a[i] += 1;
        a[j] += 1;
        fs.push(Functional::divided(&sep, r, &a[..m]));
    }
    let sigma = covariance_matrix(spec, &fs);
    let g = 2 * m;
    let var_cond = block(&sigma, 0, 0, g, g);
    let min_eig = min_eigenvalue(&var_cond);
    let scale = (0..g).map(|i| var_cond[(i, i)]).sum::<f64>() / g as f64;
    if !(min_eig > crate::gaussian::CONDITIONING_REL * scale) {
        return Err(Error::DegenerateConditioning { min_eig, scale });
    }
    let cond = regression_covariance(
        &block(&sigma, g, g, 2 * k, 2 * k),
        &block(&sigma, g, 0, 2 * k, g),
        &var_cond,
    )?;
    Ok(BlowUpMatrices { var_cond, cond })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowUpReport {
    pub r: f64,
    /// `w = r^{m−2} ρ̂(rν)`.
    pub w: DensityReport,
    pub rho_hat: DensityReport,
}

/// Two-point density near the diagonal through the divided-gradient gauge.
///
/// `ρ̂(rν) = r^{-m} E[|det H(0) det H(rν)| | ∇Φ(0) = 0, Ξ = 0] p_{(∇Φ(0),Ξ)}(0)`,
/// where the Jacobian `r^{-m}` comes from `∇Φ(rν) = ∇Φ(0) + rΞ`.
pub fn blow_up_density(spec: &LatticeSpectrum, r: f64, nu: &[f64], n_mc: usize, seed: u64) -> Result<BlowUpReport> {
    let m = spec.dim();
    let k = hess_dim(m);
    let mats = blow_up_matrices(spec, r, nu)?;
    let p = density_at_zero(&mats.var_cond)?;
    let l = gaussian_factor(&mats.cond)?;
    let wscale = p / (r * r);
    let sums = mc_moments(2 * k, 1, n_mc, seed, |zeta, out| {
        let mut h = [0.0; 12];
        lower_mul(&l, zeta, &mut h[..2 * k]);
        let mut hz = [0.0; 6];
        for i in 0..k {
            hz[i] = h[i] + r * h[k + i];
        }
        out[0] = (sym_det(&h[..k], m) * sym_det(&hz[..k], m)).abs() * wscale;
    });
    let w = sums.report(0, "gauge-changed two-point");
    let rho_hat = w.scaled(r.powi(2 - m as i32));
    Ok(BlowUpReport { r, w, rho_hat })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZReport {
    /// `Z_m = ∫_{R^m} δ(z) dz`.
    pub z: DensityReport,
    pub r_max: f64,
    /// Certified-shape bound on the omitted `r > r_max` contribution (already in `z.std_error`).
    pub tail_bound: f64,
    /// Radius below which the gauge-changed path is used.
    pub handoff: f64,
    pub nodes: usize,
}

/// Sum of absolute continuum kernel derivatives up to order 4 at `r e₁`.
fn t_continuum(amp: &Amplitude, m: usize, r: f64) -> Result<f64> {
    let mut z = vec![0.0; m];
    z[0] = r;
    let mut t = 0.0;
    for a in multi_indices(m, 4) {
        t += kernel_deriv_continuum(amp, m, &z, &a)?.abs();
    }
    Ok(t)
}

/// `Z_m(a) = ∫_{R^m} δ_∞(0, z) dz = |S^{m−1}| ∫_0^∞ r^{m−1} δ(r) dr`.
///
/// Gauss–Legendre panels: `[0, r_h]` uses the gauge-changed density with
/// `r_h = 0.05·(correlation length)`; `[r_h, r_max]` is split into 8 panels on
/// the direct path. Each panel carries `quad_nodes` nodes. All nodes share the
/// same normal draws, so the per-draw integral is averaged and its standard
/// error is exact for the estimator. `r_max` is the first radius where
/// `T(r)^{1/2} < 1e-6·ρ̃`; the tail beyond is bounded by
/// `c·|S^{m−1}| ∫_{r_max}^∞ r^{m−1} T(r)^{1/2} dr` with `c` fitted on the last
/// two panels, and added to the error.
pub fn z_m_const(amp: &Amplitude, m: usize, n_mc: usize, quad_nodes: usize, seed: u64) -> Result<ZReport> {
    if quad_nodes == 0 {
        return Err(Error::InvalidArgument("quad_nodes must be positive".into()));
    }
    let corr = amp.correlation_length(m)?;
    let rho = one_point_density(&continuum_spectrum(amp, m, 0.0)?, n_mc / 4 + 2, derive_seed(&[seed, 1]))?;
    let rho_tilde = rho.value * rho.value;
    let mut r_max = corr;
    while t_continuum(amp, m, r_max)?.sqrt() >= 1e-6 * rho_tilde {
        r_max += 0.5 * corr;
        if r_max > 200.0 * corr {
            return Err(Error::Unsupported(
                "kernel decays too slowly for the Z_m quadrature".into(),
            ));
        }
    }
    let handoff = 0.05 * corr;
    let spec = continuum_spectrum(amp, m, r_max)?;
    let k = hess_dim(m);
    let mut nu = vec![0.0; m];
    nu[0] = 1.0;

    let (gx, gw) = gauss_legendre(quad_nodes);
    struct Node {
        r: f64,
        weight: f64,
        gauge: bool,
        factor: DMatrix<f64>,
        scale: f64,
    }
    let mut nodes = Vec::new();
    let n_panels = 8;
    let mut panels = vec![(0.0, handoff, true)];
    for p in 0..n_panels {
        let a = handoff + (r_max - handoff) * p as f64 / n_panels as f64;
        let b = handoff + (r_max - handoff) * (p + 1) as f64 / n_panels as f64;
        panels.push((a, b, false));
    }
    for &(a, b, gauge) in &panels {
        for (x, w) in gx.iter().zip(&gw) {
            let r = 0.5 * (a + b) + 0.5 * (b - a) * x;
            let weight = 0.5 * (b - a) * w * r.powi(m as i32 - 1);
            if gauge {
                let mats = blow_up_matrices(&spec, r, &nu)?;
                let p = density_at_zero(&mats.var_cond)?;
                nodes.push(Node {
                    r,
                    weight,
                    gauge,
                    factor: gaussian_factor(&mats.cond)?,
                    scale: p * r.powi(-(m as i32)),
                });
            } else {
                let mut z = vec![0.0; m];
                z[0] = r;
                let mats = two_point_matrices(&spec, &z)?;
                nodes.push(Node {
                    r,
                    weight,
                    gauge,
                    factor: gaussian_factor(&mats.cond_hat)?,
                    scale: density_at_zero(&mats.var_grad_hat)?,
                });
            }
        }
    }
    let (var_g, cov_h) = one_point_blocks(&spec);
    let l1 = gaussian_factor(&cov_h)?;
    let p1 = density_at_zero(&var_g)?;
    let p_tilde = p1 * p1;
    // Nodes on the last two panels feed the tail constant.
    let tail_nodes: Vec<usize> = (nodes.len() - 2 * quad_nodes..nodes.len()).collect();
    let nout = 1 + tail_nodes.len();
    let sums = mc_moments(2 * k, nout, n_mc, seed, |zeta, out| {
        let mut h = [0.0; 12];
        let mut hz = [0.0; 6];
        lower_mul(&l1, &zeta[..k], &mut h[..k]);
        lower_mul(&l1, &zeta[k..2 * k], &mut h[k..2 * k]);
        let tilde = (sym_det(&h[..k], m) * sym_det(&h[k..2 * k], m)).abs() * p_tilde;
        let mut total = 0.0;
        let mut t = 1;
        for (idx, nd) in nodes.iter().enumerate() {
            lower_mul(&nd.factor, zeta, &mut h[..2 * k]);
            let hat = if nd.gauge {
                for i in 0..k {
                    hz[i] = h[i] + nd.r * h[k + i];
                }
                (sym_det(&h[..k], m) * sym_det(&hz[..k], m)).abs() * nd.scale
            } else {
                (sym_det(&h[..k], m) * sym_det(&h[k..2 * k], m)).abs() * nd.scale
            };
            total += nd.weight * (hat - tilde);
            if t < out.len() && tail_nodes.get(t - 1) == Some(&idx) {
                out[t] = hat - tilde;
                t += 1;
            }
        }
        out[0] = total;
    });
    let area = sphere_area(m);
    let mut c_fit = 0.0f64;
    for (i, &idx) in tail_nodes.iter().enumerate() {
        let d = sums.mean(1 + i).abs() + 2.0 * sums.report(1 + i, "").std_error;
        let t = t_continuum(amp, m, nodes[idx].r)?.sqrt();
        if t > 0.0 {
            c_fit = c_fit.max(d / t);
        }
    }
    let (tail_int, _) = integrate_adaptive(
        |r| r.powi(m as i32 - 1) * t_continuum(amp, m, r).map(f64::sqrt).unwrap_or(0.0),
        r_max,
        r_max + 20.0 * corr,
        1e-6,
        1e-300,
        "Z_m tail",
    )?;
    let tail_bound = c_fit * area * tail_int;
    let main = sums.report(0, "");
    let value = area * main.value;
    let se = area * main.std_error;
    Ok(ZReport {
        z: DensityReport {
            value,
            std_error: (se * se + tail_bound * tail_bound).sqrt(),
            mc_samples: sums.n,
            method: "radial quadrature of paired two-point gap".into(),
        },
        r_max,
        tail_bound,
        handoff,
        nodes: nodes.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VReport {
    pub v: DensityReport,
    pub c: DensityReport,
    pub z: ZReport,
}

/// `V_m = C_m + Z_m`, with `C_m` the continuum one-point density.
pub fn v_m_const(
    amp: &Amplitude,
    m: usize,
    n_mc_one: usize,
    n_mc_two: usize,
    quad_nodes: usize,
    seed: u64,
) -> Result<VReport> {
    let c = one_point_density(&continuum_spectrum(amp, m, 0.0)?, n_mc_one, derive_seed(&[seed, 10]))?;
    let z = z_m_const(amp, m, n_mc_two, quad_nodes, derive_seed(&[seed, 11]))?;
    let v = DensityReport {
        value: c.value + z.z.value,
        std_error: c.std_error.hypot(z.z.std_error),
        mc_samples: c.mc_samples + z.z.mc_samples,
        method: "C_m + Z_m".into(),
    };
    Ok(VReport { v, c, z })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    /// Measured `|I_A − I_{A0}|`.
    pub lhs: f64,
    pub lhs_std_error: f64,
    /// `‖A − A0‖_F^{1/2}`.
    pub rhs: f64,
}

/// `I_A = E|det X|` for `X` the symmetric matrix with upper-triangle covariance `A`;
/// the difference `I_A − I_{A0}` is estimated with coupled draws `L_A ζ`, `L_{A0} ζ`.
pub fn holder_continuity_check(a0: &DMatrix<f64>, a: &DMatrix<f64>, n_mc: usize, seed: u64) -> Result<HolderReport> {
    let k = a0.nrows();
    let m = match k {
        1 => 1,
        3 => 2,
        6 => 3,
        _ => return Err(Error::InvalidArgument(format!("{k} is not m(m+1)/2 for m ≤ 3"))),
    };
    if a.nrows() != k {
        return Err(Error::InvalidArgument("matrix sizes differ".into()));
    }
    for mat in [a0, a] {
        if min_eigenvalue(mat) <= 0.0 {
            return Err(Error::InvalidArgument("matrices must be positive definite".into()));
        }
    }
    let l0 = a0
        .clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or(Error::InvalidArgument("A0 not SPD".into()))?;
    let l = a
        .clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or(Error::InvalidArgument("A not SPD".into()))?;
    let sums = mc_moments(k, 1, n_mc, seed, |zeta, out| {
        let mut x = [0.0; 6];
        let mut y = [0.0; 6];
        lower_mul(&l, zeta, &mut x[..k]);
        lower_mul(&l0, zeta, &mut y[..k]);
        out[0] = sym_det(&x[..k], m).abs() - sym_det(&y[..k], m).abs();
    });
    let d = sums.report(0, "");
    Ok(HolderReport {
        lhs: d.value.abs(),
        lhs_std_error: d.std_error,
        rhs: (a - a0).norm().sqrt(),
    })
}

/// CSV of a density scan: `r, rho_hat, rho_hat_se, rho_tilde, rho_tilde_se, delta, delta_se`.
pub fn write_two_point_csv<W: Write>(out: W, rows: &[TwoPointReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "r",
        "rho_hat",
        "rho_hat_se",
        "rho_tilde",
        "rho_tilde_se",
        "delta",
        "delta_se",
    ])?;
    for row in rows {
        let r = row.z.iter().map(|v| v * v).sum::<f64>().sqrt();
        w.write_record(&[
            format!("{r:.17e}"),
            format!("{:.17e}", row.rho_hat.value),
            format!("{:.6e}", row.rho_hat.std_error),
            format!("{:.17e}", row.rho_tilde.value),
            format!("{:.6e}", row.rho_tilde.std_error),
            format!("{:.17e}", row.delta.value),
            format!("{:.6e}", row.delta.std_error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Classical Rice value `C₁ = (1/π)√(λ₄/λ₂)` for comparison in one dimension.
pub fn rice_constant_1d(amp: &Amplitude) -> Result<f64> {
    let l2 = amp.spectral_moment(&[2])?;
    let l4 = amp.spectral_moment(&[4])?;
    Ok((l4 / l2).sqrt() / PI)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g1() -> Amplitude {
        Amplitude::gaussian(1.0).unwrap()
    }

    #[test]
    fn rice_value_for_unit_gaussian() {
        let c1 = rice_constant_1d(&g1()).unwrap();
        assert!((c1 - 3f64.sqrt() / (2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn one_point_matches_rice_formula() {
        let spec = continuum_spectrum(&g1(), 1, 0.0).unwrap();
        let r = one_point_density(&spec, N_MC_ONE_POINT, 1).unwrap();
        let c1 = 3f64.sqrt() / (2.0 * PI);
        assert!(
            (r.value - c1).abs() < 4.0 * r.std_error,
            "{} ± {}",
            r.value,
            r.std_error
        );
        assert!((r.value / c1 - 1.0).abs() < 0.01);
    }

    #[test]
    fn zero_hessian_gives_zero_density() {
        let g = DMatrix::identity(2, 2);
        let r = one_point_from_blocks(&g, &DMatrix::zeros(3, 3), 2, 1000, 1).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn lattice_one_point_approaches_continuum() {
        let cont = one_point_density(&continuum_spectrum(&g1(), 1, 0.0).unwrap(), 100_000, 3).unwrap();
        let lat = one_point_density(&LatticeSpectrum::new(&g1(), 1, 64.0).unwrap(), 100_000, 3).unwrap();
        // Same seed: the estimates differ only through the kernel, which is within 1e-12 here.
        assert!((lat.value - cont.value).abs() < 1e-9 * cont.value);
    }

    #[test]
    fn two_point_structure() {
        let spec = continuum_spectrum(&g1(), 2, 4.0).unwrap();
        let rho = one_point_density(&spec, 200_000, 5).unwrap();
        for z in [[0.7, 0.0], [1.5, 0.5]] {
            let t = two_point_density(&spec, &z, 100_000, 6).unwrap();
            let target = rho.value * rho.value;
            let se = t.rho_tilde.std_error.hypot(2.0 * rho.value * rho.std_error);
            assert!((t.rho_tilde.value - target).abs() < 3.0 * se);
            let mz = [-z[0], -z[1]];
            let a = two_point_matrices(&spec, &z).unwrap();
            let b = two_point_matrices(&spec, &mz).unwrap();
            assert_eq!(a.cond_hat, b.cond_hat);
            assert_eq!(
                a.var_grad_hat.determinant().to_bits(),
                b.var_grad_hat.determinant().to_bits()
            );
            let tb = two_point_density(&spec, &mz, 100_000, 6).unwrap();
            assert_eq!(t.rho_hat.value.to_bits(), tb.rho_hat.value.to_bits());
        }
    }

    #[test]
    fn translation_gives_identical_matrices() {
        let spec = LatticeSpectrum::new(&g1(), 2, 8.0).unwrap();
        let x = [0.25, 1.5];
        let y = [1.0, 2.125];
        let base = two_point_matrices_between(&spec, &x, &y).unwrap();
        for t in [[0.5, 0.25], [-1.0, 2.0], [3.0, -0.75]] {
            let xs = [x[0] + t[0], x[1] + t[1]];
            let ys = [y[0] + t[0], y[1] + t[1]];
            let other = two_point_matrices_between(&spec, &xs, &ys).unwrap();
            assert_eq!(base, other);
        }
    }

    #[test]
    fn far_field_gap_is_small() {
        let spec = continuum_spectrum(&g1(), 1, 10.0).unwrap();
        let t = two_point_density(&spec, &[10.0], 100_000, 7).unwrap();
        assert!(t.delta.value.abs() < 1e-3 * t.rho_tilde.value);
    }

    #[test]
    fn close_points_are_degenerate_on_the_direct_path() {
        let spec = continuum_spectrum(&g1(), 1, 1.0).unwrap();
        assert!(matches!(
            two_point_density(&spec, &[1e-7], 1000, 1),
            Err(Error::DegenerateConditioning { .. })
        ));
    }

    #[test]
    fn gauge_path_matches_direct_path() {
        for m in [1usize, 2] {
            let spec = continuum_spectrum(&g1(), m, 1.0).unwrap();
            let mut nu = vec![0.0; m];
            nu[0] = 1.0;
            let mut z = vec![0.0; m];
            z[0] = 0.5;
            let b = blow_up_density(&spec, 0.5, &nu, 200_000, 8).unwrap();
            let d = two_point_density(&spec, &z, 200_000, 9).unwrap();
            let se = b.rho_hat.std_error.hypot(d.rho_hat.std_error);
            assert!((b.rho_hat.value - d.rho_hat.value).abs() < 3.0 * se, "m={m}");
        }
    }

    #[test]
    fn blow_up_is_bounded() {
        for m in [1usize, 2] {
            let spec = continuum_spectrum(&g1(), m, 1.0).unwrap();
            let mut nu = vec![0.0; m];
            nu[0] = 1.0;
            let ws: Vec<f64> = [1e-1, 1e-2, 1e-3]
                .iter()
                .map(|&r| blow_up_density(&spec, r, &nu, 100_000, 10).unwrap().w.value)
                .collect();
            let hi = ws.iter().cloned().fold(0.0, f64::max);
            let lo = ws.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(hi / lo < 2.0, "m={m}: {ws:?}");
        }
        let spec = continuum_spectrum(&g1(), 1, 1.0).unwrap();
        let a = blow_up_density(&spec, 1e-3, &[1.0], 100_000, 11).unwrap();
        let b = blow_up_density(&spec, 1e-1, &[1.0], 100_000, 11).unwrap();
        assert!(a.rho_hat.value < b.rho_hat.value);
    }

    #[test]
    fn holder_examples() {
        let a0 = DMatrix::from_row_slice(1, 1, &[1.5]);
        let same = holder_continuity_check(&a0, &a0, 10_000, 1).unwrap();
        assert_eq!(same.lhs, 0.0);
        // 1D closed form: |√(2A/π) − √(2A0/π)| ≤ C|A − A0|^{1/2} on [1,2].
        let c = (2.0 / PI).sqrt();
        for a in [1.0, 1.2, 1.9, 2.0] {
            let am = DMatrix::from_row_slice(1, 1, &[a]);
            let h = holder_continuity_check(&a0, &am, 200_000, 2).unwrap();
            let exact = (c * (a.sqrt() - 1.5f64.sqrt())).abs();
            assert!((h.lhs - exact).abs() < 4.0 * h.lhs_std_error + 1e-12);
            assert!(h.lhs <= c * h.rhs + 4.0 * h.lhs_std_error);
        }
    }

    #[test]
    fn small_r_integrand_limits() {
        // m = 2: r·δ(r) → 0; m = 1: δ(r) → −ρ̃ since ρ̂ vanishes on the diagonal.
        let spec2 = continuum_spectrum(&g1(), 2, 1.0).unwrap();
        let rho2 = one_point_density(&spec2, 100_000, 1).unwrap().value;
        let b = blow_up_density(&spec2, 1e-3, &[1.0, 0.0], 100_000, 2).unwrap();
        assert!((1e-3 * (b.rho_hat.value - rho2 * rho2)).abs() < 1e-3 * rho2 * rho2);
        let spec1 = continuum_spectrum(&g1(), 1, 1.0).unwrap();
        let rho1 = one_point_density(&spec1, 100_000, 1).unwrap().value;
        let b = blow_up_density(&spec1, 1e-3, &[1.0], 100_000, 2).unwrap();
        assert!(b.rho_hat.value < 1e-2 * rho1 * rho1);
    }

    #[test]
    fn z_m_quadrature_is_stable() {
        let a = z_m_const(&g1(), 1, 20_000, 6, 3).unwrap();
        let b = z_m_const(&g1(), 1, 20_000, 12, 3).unwrap();
        eprintln!("{a:?}\n{b:?}");
        let se = a.z.std_error.hypot(b.z.std_error);
        assert!((a.z.value - b.z.value).abs() < 3.0 * se);
        assert!(a.tail_bound < 1e-3 * a.z.value.abs());
    }

    #[test]
    fn v_m_is_nonnegative() {
        let v = v_m_const(&g1(), 1, 50_000, 20_000, 8, 4).unwrap();
        eprintln!("{v:?}");
        assert!(v.v.value + 3.0 * v.v.std_error >= 0.0);
    }
}
