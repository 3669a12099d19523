//! Nondegeneracy diagnostics: the jet covariance at a point and the joint
//! gradient covariance at two points must be positive definite.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::amplitude::Amplitude;
use crate::covariance::{covariance_matrix, gradient_functionals, Functional, LatticeSpectrum};
use crate::error::{Error, Result};
use crate::gaussian::min_eigenvalue;
use crate::special::multi_indices;
use crate::MAX_DIM;

/// Relative threshold separating rank deficiency from roundoff.
pub const PASS_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CheckKind {
    /// `Var[J_k Φ(0)]`, value and derivatives up to order `k`.
    Jet { k: usize },
    /// `Var[∇Φ(0) ⊕ ∇Φ(z)]`.
    Pair { z: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplenessReport {
    pub check: CheckKind,
    pub r: f64,
    pub min_eigenvalue: f64,
    pub threshold: f64,
    pub pass: bool,
}

fn report(check: CheckKind, r: f64, c: &DMatrix<f64>) -> AmplenessReport {
    let min_eig = min_eigenvalue(c);
    let threshold = PASS_REL * c.trace() / c.nrows() as f64;
    AmplenessReport {
        check,
        r,
        min_eigenvalue: min_eig,
        threshold,
        pass: min_eig > threshold,
    }
}

/// Covariance of the `k`-jet at the origin, ordered by total derivative order.
pub fn jet_covariance(spec: &LatticeSpectrum, k: usize) -> Result<DMatrix<f64>> {
    if !(k == 1 || k == 2) {
        return Err(Error::InvalidArgument(format!("jet order must be 1 or 2, got {k}")));
    }
    let m = spec.dim();
    let zero = [0.0; MAX_DIM];
    let fs: Vec<Functional> = multi_indices(m, k)
        .iter()
        .map(|a| Functional::deriv(&zero[..m], a))
        .collect();
    Ok(covariance_matrix(spec, &fs))
}

/// Covariance of the two gradients, same functionals as the two-point density uses.
pub fn pair_covariance(spec: &LatticeSpectrum, z: &[f64]) -> Result<DMatrix<f64>> {
    let m = spec.dim();
    if z.len() != m {
        return Err(Error::InvalidArgument("separation dimension mismatch".into()));
    }
    let zero = [0.0; MAX_DIM];
    let mut fs = gradient_functionals(m, &zero[..m]);
    fs.extend(gradient_functionals(m, z));
    Ok(covariance_matrix(spec, &fs))
}

pub fn min_eig_jet(spec: &LatticeSpectrum, k: usize) -> Result<AmplenessReport> {
    Ok(report(CheckKind::Jet { k }, spec.scale(), &jet_covariance(spec, k)?))
}

/// `z` is in x-units; it must not be a multiple of the period `R`.
pub fn min_eig_pair(spec: &LatticeSpectrum, z: &[f64]) -> Result<AmplenessReport> {
    let r = spec.scale();
    if z.iter().all(|v| (v / r - (v / r).round()).abs() < 1e-15) {
        return Err(Error::InvalidArgument("separation is zero modulo the period".into()));
    }
    Ok(report(CheckKind::Pair { z: z.to_vec() }, r, &pair_covariance(spec, z)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub reports: Vec<AmplenessReport>,
    /// Smallest tested `R` from which every larger tested `R` also passes.
    pub r0: Option<f64>,
}

impl ScanReport {
    pub fn passes(&self, r: f64) -> bool {
        self.reports.iter().filter(|x| x.r == r).all(|x| x.pass)
    }

    /// Smallest eigenvalue over all checks at `r`.
    pub fn worst(&self, r: f64) -> Option<f64> {
        self.reports
            .iter()
            .filter(|x| x.r == r)
            .map(|x| x.min_eigenvalue)
            .min_by(f64::total_cmp)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["R", "check", "z", "min_eig", "pass"])?;
        for rep in &self.reports {
            let (check, z) = match &rep.check {
                CheckKind::Jet { k } => (format!("jet{k}"), String::new()),
                CheckKind::Pair { z } => (
                    "pair".to_string(),
                    z.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" "),
                ),
            };
            w.write_record(&[
                format!("{}", rep.r),
                check,
                z,
                format!("{:.17e}", rep.min_eigenvalue),
                rep.pass.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the jet check of order `k` and the pair check at every `z` for each spectrum.
pub fn scan_spectra(spectra: &[LatticeSpectrum], z_grid: &[Vec<f64>], k: usize) -> Result<ScanReport> {
    let mut reports = Vec::new();
    for spec in spectra {
        reports.push(min_eig_jet(spec, k)?);
        for z in z_grid {
            reports.push(min_eig_pair(spec, z)?);
        }
    }
    let rs: Vec<f64> = spectra.iter().map(|s| s.scale()).collect();
    let r0 = empirical_r0(&reports, &rs);
    Ok(ScanReport { reports, r0 })
}

fn empirical_r0(reports: &[AmplenessReport], r_list: &[f64]) -> Option<f64> {
    let mut rs = r_list.to_vec();
    rs.sort_by(f64::total_cmp);
    rs.dedup();
    let mut r0 = None;
    for &r in rs.iter().rev() {
        if !reports.iter().filter(|x| x.r == r).all(|x| x.pass) {
            break;
        }
        r0 = Some(r);
    }
    r0
}

/// Scan over a list of `R` for one amplitude. Separations that coincide with
/// the period of some `R` are skipped for that `R`.
pub fn ampleness_scan(amp: &Amplitude, m: usize, r_list: &[f64], z_grid: &[Vec<f64>], k: usize) -> Result<ScanReport> {
    let mut reports = Vec::new();
    for &r in r_list {
        let spec = LatticeSpectrum::new(amp, m, r)?;
        let zs: Vec<Vec<f64>> = z_grid
            .iter()
            .filter(|z| !z.iter().all(|v| (v / r - (v / r).round()).abs() < 1e-15))
            .cloned()
            .collect();
        reports.extend(scan_spectra(std::slice::from_ref(&spec), &zs, k)?.reports);
    }
    let r0 = empirical_r0(&reports, r_list);
    Ok(ScanReport { reports, r0 })
}

/// Default separations for the gate: a few points along each axis and a diagonal,
/// from a tenth of the correlation length up to `R/2`.
pub fn default_z_grid(amp: &Amplitude, m: usize, r: f64) -> Result<Vec<Vec<f64>>> {
    let corr = amp.correlation_length(m)?;
    let mut out = Vec::new();
    for t in [0.1, 0.5, 1.0, 2.0, 4.0] {
        let d = (t * corr).min(0.5 * r);
        let mut z = vec![0.0; m];
        z[0] = d;
        out.push(z);
        if m > 1 {
            out.push(vec![d / (m as f64).sqrt(); m]);
        }
    }
    let mut half = vec![0.0; m];
    half[0] = 0.5 * r;
    out.push(half);
    Ok(out)
}

/// Fails with the offending `R` when a spectrum is not ample for the study.
pub fn ampleness_gate(spec: &LatticeSpectrum) -> Result<()> {
    let z_grid = default_z_grid(spec.amplitude(), spec.dim(), spec.scale())?;
    let scan = scan_spectra(std::slice::from_ref(spec), &z_grid, 2)?;
    if let Some(bad) = scan.reports.iter().find(|x| !x.pass) {
        return Err(Error::AmplenessGate(format!(
            "R = {} ({:?}: min eigenvalue {:e} ≤ {:e})",
            spec.scale(),
            bad.check,
            bad.min_eigenvalue,
            bad.threshold
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kac_rice::two_point_density;

    fn g1() -> Amplitude {
        Amplitude::gaussian(1.0).unwrap()
    }

    #[test]
    fn constant_field_fails() {
        let spec = LatticeSpectrum::new(&g1(), 1, 8.0).unwrap().truncated_to(1);
        assert!(!min_eig_jet(&spec, 1).unwrap().pass);
        assert!(!min_eig_jet(&spec, 2).unwrap().pass);
        assert!(!min_eig_pair(&spec, &[1.0]).unwrap().pass);
        assert!(ampleness_gate(&spec).is_err());
    }

    #[test]
    fn jet_matches_moment_matrix() {
        let spec = LatticeSpectrum::new(&g1(), 1, 16.0).unwrap();
        let rep = min_eig_jet(&spec, 2).unwrap();
        assert!(rep.pass);
        // (value, first, second): Var = [[λ0,0,−λ2],[0,λ2,0],[−λ2,0,λ4]] for the continuum moments.
        let l0 = g1().spectral_moment(&[0]).unwrap();
        let l2 = g1().spectral_moment(&[2]).unwrap();
        let l4 = g1().spectral_moment(&[4]).unwrap();
        let c = DMatrix::from_row_slice(3, 3, &[l0, 0.0, -l2, 0.0, l2, 0.0, -l2, 0.0, l4]);
        let expect = c.symmetric_eigenvalues().min();
        assert!(
            (rep.min_eigenvalue - expect).abs() < 1e-9 * expect,
            "{} vs {expect}",
            rep.min_eigenvalue
        );
    }

    #[test]
    fn jet_interlacing() {
        for m in [1usize, 2, 3] {
            for r in [2.0, 4.0, 8.0] {
                let spec = LatticeSpectrum::new(&g1(), m, r).unwrap();
                let a = min_eig_jet(&spec, 1).unwrap();
                let b = min_eig_jet(&spec, 2).unwrap();
                assert!(a.min_eigenvalue >= b.min_eigenvalue - 1e-15);
                if b.pass {
                    assert!(a.pass);
                }
            }
        }
    }

    #[test]
    fn far_pair_approaches_gradient_variance() {
        let spec = LatticeSpectrum::new(&g1(), 1, 32.0).unwrap();
        let rep = min_eig_pair(&spec, &[8.0]).unwrap();
        let d = spec.gradient_variance();
        // [[d, c], [c, d]] has eigenvalues d ± c with c = −K''(z).
        let c = crate::covariance::kernel_deriv_continuum(&g1(), 1, &[8.0], &[2]).unwrap();
        assert!(c.abs() < 1e-2 * d);
        assert!((rep.min_eigenvalue - (d - c.abs())).abs() < 1e-9 * d);
        assert!((d - g1().gradient_variance(1).unwrap()).abs() < 1e-9 * d);
    }

    #[test]
    fn pair_degenerates_near_diagonal_and_is_even() {
        let spec = LatticeSpectrum::new(&g1(), 2, 8.0).unwrap();
        let far = min_eig_pair(&spec, &[1.0, 0.0]).unwrap().min_eigenvalue;
        let near = min_eig_pair(&spec, &[1e-3, 0.0]).unwrap().min_eigenvalue;
        assert!(near < 1e-4 * far);
        let a = min_eig_pair(&spec, &[0.7, -0.3]).unwrap();
        let b = min_eig_pair(&spec, &[-0.7, 0.3]).unwrap();
        assert_eq!(a.min_eigenvalue, b.min_eigenvalue);
        assert!(min_eig_pair(&spec, &[8.0, 0.0]).is_err());
    }

    #[test]
    fn scan_reports_r0_and_agrees_with_two_point() {
        let zs = vec![vec![0.5], vec![1.0], vec![3.0]];
        let scan = ampleness_scan(&g1(), 1, &[2.0, 4.0, 8.0, 16.0], &zs, 2).unwrap();
        let r0 = scan.r0.expect("large R passes");
        assert!(r0 <= 8.0);
        for r in [2.0, 4.0, 8.0, 16.0] {
            eprintln!("R={r} worst={:?}", scan.worst(r));
        }
        let spec = LatticeSpectrum::new(&g1(), 1, r0).unwrap();
        for z in &zs {
            if z[0] < 0.5 * r0 {
                two_point_density(&spec, z, 1000, 1).unwrap();
            }
        }
        let mut buf = Vec::new();
        scan.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("R,check,z,min_eig,pass"));
    }

    #[test]
    fn single_mode_fails_everywhere() {
        let spec = LatticeSpectrum::new(&g1(), 1, 8.0).unwrap().truncated_to(1);
        let zs: Vec<Vec<f64>> = (1..8).map(|i| vec![i as f64 * 0.9]).collect();
        let scan = scan_spectra(&[spec], &zs, 1).unwrap();
        assert!(scan.reports.iter().all(|x| !x.pass));
        assert_eq!(scan.r0, None);
    }
}
