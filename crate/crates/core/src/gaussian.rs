//! Finite-dimensional Gaussian vectors: conditioning, factorization and
//! Monte Carlo expectations of determinant functionals.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

/// Relative size of negative eigenvalues treated as rounding noise.
pub const PSD_CLIP_REL: f64 = 1e-10;

/// Relative minimum eigenvalue required of a conditioning block.
pub const CONDITIONING_REL: f64 = 1e-12;

/// Samples per Monte Carlo batch; each batch has its own derived seed.
pub const MC_BATCH: usize = 8192;

/// A Monte Carlo (or deterministic) estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub value: f64,
    pub std_error: f64,
    pub mc_samples: usize,
    pub method: String,
}

impl DensityReport {
    pub fn exact(value: f64, method: &str) -> Self {
        Self {
            value,
            std_error: 0.0,
            mc_samples: 0,
            method: method.to_string(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            value: self.value * c,
            std_error: self.std_error * c.abs(),
            ..self.clone()
        }
    }
}

/// Zero-mean Gaussian vector with labeled coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub labels: Vec<String>,
    pub cov: DMatrix<f64>,
}

impl GaussianSpec {
    pub fn new(labels: Vec<String>, cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() != labels.len() {
            return Err(Error::InvalidArgument("covariance shape does not match labels".into()));
        }
        for i in 0..cov.nrows() {
            for j in 0..i {
                if cov[(i, j)] != cov[(j, i)] {
                    return Err(Error::InvalidArgument(format!(
                        "covariance is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { labels, cov })
    }

    /// Conditional law of the coordinates not in `given`, conditioned on `given = 0`.
    pub fn condition(&self, given: &[usize]) -> Result<GaussianSpec> {
        let rest: Vec<usize> = (0..self.labels.len()).filter(|i| !given.contains(i)).collect();
        let pick = |rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.cov[(rows[i], cols[j])])
        };
        let cov = regression_covariance(&pick(&rest, &rest), &pick(&rest, given), &pick(given, given))?;
        Ok(GaussianSpec {
            labels: rest.iter().map(|&i| self.labels[i].clone()).collect(),
            cov,
        })
    }
}

fn matrix_scale(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows().max(1) as f64;
    (0..a.nrows()).map(|i| a[(i, i)].abs()).sum::<f64>() / n
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(a.clone()).eigenvalues.min()
}

/// `Σ22 − Σ21 Σ11^{-1} Σ12`, the covariance of `X₂` given `X₁ = 0`.
///
/// The result is symmetrized exactly. Negative eigenvalues within
/// `1e-10·scale` are accepted as rounding noise; anything lower is an error.
pub fn regression_covariance(
    sigma22: &DMatrix<f64>,
    sigma21: &DMatrix<f64>,
    sigma11: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if sigma11.nrows() == 0 {
        return Ok(sigma22.clone());
    }
    let scale = matrix_scale(sigma11);
    let min_eig = min_eigenvalue(sigma11);
    if !(min_eig > CONDITIONING_REL * scale) {
        return Err(Error::DegenerateConditioning { min_eig, scale });
    }
    let chol = sigma11
        .clone()
        .cholesky()
        .ok_or(Error::DegenerateConditioning { min_eig, scale })?;
    let x = chol.solve(&sigma21.transpose());
    let prod = sigma21 * x;
    let raw = sigma22 - prod;
    let out = DMatrix::from_fn(raw.nrows(), raw.ncols(), |i, j| 0.5 * (raw[(i, j)] + raw[(j, i)]));
    check_psd(&out, matrix_scale(sigma22))?;
    Ok(out)
}

fn check_psd(a: &DMatrix<f64>, scale: f64) -> Result<()> {
    if a.nrows() == 0 {
        return Ok(());
    }
    let e = min_eigenvalue(a);
    let tol = PSD_CLIP_REL * scale;
    if e < -tol {
        return Err(Error::NotPsd { eig: e, tol });
    }
    Ok(())
}

/// A factor `L` with `L Lᵀ = cov` (after clipping negative dust).
///
/// Cholesky is used when it succeeds, so the factor depends smoothly on `cov`;
/// semidefinite inputs fall back to `Q √Λ` from the eigendecomposition.
pub fn gaussian_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let scale = matrix_scale(cov);
    if scale == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    check_psd(cov, scale)?;
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(cov.clone());
    let mut l = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        for i in 0..n {
            l[(i, j)] *= s;
        }
    }
    Ok(l)
}

/// Determinant of the symmetric matrix whose upper triangle (row by row) is `v`.
#[inline]
pub fn sym_det(v: &[f64], m: usize) -> f64 {
    match m {
        1 => v[0],
        2 => v[0] * v[2] - v[1] * v[1],
        3 => {
            let (a, b, c, d, e, f) = (v[0], v[1], v[2], v[3], v[4], v[5]);
            // [[a b c] [b d e] [c e f]]
            a * (d * f - e * e) - b * (b * f - e * c) + c * (b * e - d * c)
        }
        _ => {
            let mut mat = DMatrix::zeros(m, m);
            let mut k = 0;
            for i in 0..m {
                for j in i..m {
                    mat[(i, j)] = v[k];
                    mat[(j, i)] = v[k];
                    k += 1;
                }
            }
            mat.determinant()
        }
    }
}

/// Sums of outputs and their pairwise products over Monte Carlo draws.
#[derive(Debug, Clone)]
pub struct MomentSums {
    pub n: usize,
    pub sum: Vec<f64>,
    pub cross: Vec<f64>,
}

impl MomentSums {
    fn zeros(k: usize) -> Self {
        Self {
            n: 0,
            sum: vec![0.0; k],
            cross: vec![0.0; k * k],
        }
    }

    fn merge(&mut self, o: &MomentSums) {
        self.n += o.n;
        for (a, b) in self.sum.iter_mut().zip(&o.sum) {
            *a += b;
        }
        for (a, b) in self.cross.iter_mut().zip(&o.cross) {
            *a += b;
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.sum[i] / self.n as f64
    }

    /// Sample covariance of outputs `i` and `j`.
    pub fn cov(&self, i: usize, j: usize) -> f64 {
        let k = self.sum.len();
        let n = self.n as f64;
        (self.cross[i * k + j] - self.sum[i] * self.sum[j] / n) / (n - 1.0)
    }

    /// Standard error of the mean of `Σ_i c_i X_i`.
    pub fn std_error_of(&self, c: &[f64]) -> f64 {
        let mut v = 0.0;
        for (i, &ci) in c.iter().enumerate() {
            for (j, &cj) in c.iter().enumerate() {
                v += ci * cj * self.cov(i, j);
            }
        }
        (v.max(0.0) / self.n as f64).sqrt()
    }

    pub fn report(&self, i: usize, method: &str) -> DensityReport {
        let mut c = vec![0.0; self.sum.len()];
        c[i] = 1.0;
        DensityReport {
            value: self.mean(i),
            std_error: self.std_error_of(&c),
            mc_samples: self.n,
            method: method.to_string(),
        }
    }
}

/// Runs `f(ζ, out)` on `n` standard normal vectors `ζ ∈ R^dim` and accumulates moments of `out`.
///
/// Draws come in batches of [`MC_BATCH`] with seeds derived from `(seed, batch)`;
/// batch sums are reduced in batch order, so the result is independent of the
/// number of worker threads.
pub fn mc_moments<F>(dim: usize, nout: usize, n: usize, seed: u64, f: F) -> MomentSums
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let batches = n.div_ceil(MC_BATCH);
    let parts: Vec<MomentSums> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from(derive_seed(&[seed, b as u64]));
            let count = MC_BATCH.min(n - b * MC_BATCH);
            let mut acc = MomentSums::zeros(nout);
            let mut z = vec![0.0; dim];
            let mut out = vec![0.0; nout];
            for _ in 0..count {
                for v in z.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                f(&z, &mut out);
                acc.n += 1;
                for i in 0..nout {
                    acc.sum[i] += out[i];
                    for j in 0..nout {
                        acc.cross[i * nout + j] += out[i] * out[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = MomentSums::zeros(nout);
    for p in &parts {
        total.merge(p);
    }
    total
}

#[inline]
pub(crate) fn lower_mul(l: &DMatrix<f64>, z: &[f64], out: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = 0.0;
        for k in 0..l.ncols() {
            s += l[(i, k)] * z[k];
        }
        out[i] = s;
    }
}

/// `E|det H|` for the symmetric matrix `H` whose `m(m+1)/2` upper-triangle
/// entries have covariance `cov_hessian`.
pub fn expected_abs_det(cov_hessian: &DMatrix<f64>, m: usize, n_mc: usize, seed: u64) -> Result<DensityReport> {
    let k = m * (m + 1) / 2;
    if cov_hessian.nrows() != k || cov_hessian.ncols() != k {
        return Err(Error::InvalidArgument(format!(
            "Hessian covariance must be {k}×{k} for m = {m}"
        )));
    }
    if n_mc < 2 {
        return Err(Error::InvalidArgument("n_mc must be at least 2".into()));
    }
    if cov_hessian.iter().all(|&v| v == 0.0) {
        return Ok(DensityReport::exact(0.0, "zero covariance"));
    }
    let l = gaussian_factor(cov_hessian)?;
    let sums = mc_moments(k, 1, n_mc, seed, |z, out| {
        let mut h = [0.0; 6];
        lower_mul(&l, z, &mut h[..k]);
        out[0] = sym_det(&h[..k], m).abs();
    });
    Ok(sums.report(0, "monte carlo |det|"))
}

/// Standard normal density of a Gaussian vector with covariance `cov` at 0.
pub fn density_at_zero(cov: &DMatrix<f64>) -> Result<f64> {
    let n = cov.nrows();
    let scale = matrix_scale(cov);
    let min_eig = min_eigenvalue(cov);
    if !(min_eig > CONDITIONING_REL * scale) {
        return Err(Error::DegenerateConditioning { min_eig, scale });
    }
    let det = cov.determinant();
    Ok((2.0 * std::f64::consts::PI).powf(-(n as f64) / 2.0) / det.sqrt())
}

/// Draws `n` joint samples of `N(0, cov)` and returns the empirical conditional
/// covariance of the trailing block given the leading block at 0 through the
/// joint Cholesky factor: `X₂ | X₁ = 0` equals `L₂₂ ζ₂`.
pub fn conditional_cov_by_sampling(
    cov: &DMatrix<f64>,
    n1: usize,
    n: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = cov.nrows();
    let n2 = d - n1;
    let l = cov
        .clone()
        .cholesky()
        .ok_or(Error::DegenerateConditioning {
            min_eig: min_eigenvalue(cov),
            scale: matrix_scale(cov),
        })?
        .l();
    let l22 = l.view((n1, n1), (n2, n2)).into_owned();
    let nout = n2 * n2;
    let sums = mc_moments(n2, nout, n, seed, |z, out| {
        let x = &l22 * DVector::from_column_slice(z);
        for i in 0..n2 {
            for j in 0..n2 {
                out[i * n2 + j] = x[i] * x[j];
            }
        }
    });
    let mean = DMatrix::from_fn(n2, n2, |i, j| sums.mean(i * n2 + j));
    let se = DMatrix::from_fn(n2, n2, |i, j| {
        let mut c = vec![0.0; nout];
        c[i * n2 + j] = 1.0;
        sums.std_error_of(&c)
    });
    Ok((mean, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let s = &a * a.transpose() + DMatrix::identity(n, n) * 0.2;
        DMatrix::from_fn(n, n, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]))
    }

    #[test]
    fn regression_examples() {
        let s22 = DMatrix::from_row_slice(1, 1, &[1.0]);
        let s11 = DMatrix::from_row_slice(1, 1, &[1.0]);
        let zero = DMatrix::zeros(1, 1);
        assert_eq!(regression_covariance(&s22, &zero, &s11).unwrap(), s22);
        let rho = 0.6;
        let s21 = DMatrix::from_row_slice(1, 1, &[rho]);
        let c = regression_covariance(&s22, &s21, &s11).unwrap();
        assert_relative_eq!(c[(0, 0)], 1.0 - rho * rho, max_relative = 1e-15);
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s21 = DMatrix::zeros(1, 2);
        assert!(matches!(
            regression_covariance(&s22, &s21, &sing),
            Err(Error::DegenerateConditioning { .. })
        ));
    }

    #[test]
    fn regression_matches_sampling_2x2() {
        let cov = random_spd(2, 4);
        let c = regression_covariance(
            &cov.view((1, 1), (1, 1)).into_owned(),
            &cov.view((1, 0), (1, 1)).into_owned(),
            &cov.view((0, 0), (1, 1)).into_owned(),
        )
        .unwrap();
        let (emp, se) = conditional_cov_by_sampling(&cov, 1, 1_000_000, 3).unwrap();
        assert!((emp[(0, 0)] - c[(0, 0)]).abs() < 4.0 * se[(0, 0)]);
    }

    #[test]
    fn half_normal_mean() {
        // Oracle: E|X| = σ√(2/π), itself checked by quadrature of |x|φ(x).
        let (q, _) = crate::special::integrate_adaptive(
            |x| x.abs() * (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            -40.0,
            40.0,
            1e-12,
            0.0,
            "t",
        )
        .unwrap();
        assert_relative_eq!(q, (2.0 / std::f64::consts::PI).sqrt(), max_relative = 1e-10);
        let r = expected_abs_det(&DMatrix::from_row_slice(1, 1, &[1.0]), 1, 200_000, 1).unwrap();
        assert!((r.value - 0.797_884_560_802_865_4).abs() < 4.0 * r.std_error);
        assert!(r.std_error < 3e-3);
    }

    #[test]
    fn zero_covariance_gives_zero() {
        let r = expected_abs_det(&DMatrix::zeros(3, 3), 2, 100, 1).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.std_error, 0.0);
    }

    #[test]
    fn identity_2x2_matches_tensor_quadrature() {
        // Oracle: Gauss–Hermite-free tensor midpoint rule of |h11 h22 − h12²| against N(0, I₃).
        let n = 120;
        let lim = 7.0;
        let h = 2.0 * lim / n as f64;
        let phi = |x: f64| (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let nodes: Vec<f64> = (0..n).map(|i| -lim + (i as f64 + 0.5) * h).collect();
        let mut acc = 0.0;
        for &a in &nodes {
            for &b in &nodes {
                for &c in &nodes {
                    acc += (a * c - b * b).abs() * phi(a) * phi(b) * phi(c);
                }
            }
        }
        let oracle = acc * h * h * h;
        let r = expected_abs_det(&DMatrix::identity(3, 3), 2, 200_000, 9).unwrap();
        assert!(
            (r.value - oracle).abs() < 3.0 * r.std_error,
            "{} vs {oracle} ± {}",
            r.value,
            r.std_error
        );
    }

    #[test]
    fn mc_is_thread_count_independent() {
        let cov = random_spd(3, 2);
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| expected_abs_det(&cov, 2, 50_000, 5).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn factor_handles_semidefinite_input() {
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let cov = &v * v.transpose();
        let l = gaussian_factor(&cov).unwrap();
        let back = &l * l.transpose();
        assert!((back - &cov).amax() < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(gaussian_factor(&bad), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn spec_conditioning_and_symmetry() {
        let cov = random_spd(4, 6);
        let g = GaussianSpec::new((0..4).map(|i| format!("x{i}")).collect(), cov).unwrap();
        let c = g.condition(&[0, 2]).unwrap();
        assert_eq!(c.labels, vec!["x1".to_string(), "x3".to_string()]);
        assert_eq!(c.cov[(0, 1)], c.cov[(1, 0)]);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.2, 1.0]);
        assert!(GaussianSpec::new(vec!["a".into(), "b".into()], asym).is_err());
    }

    #[test]
    fn sym_det_matches_nalgebra() {
        let v = [1.3, -0.2, 0.5, 2.0, 0.7, -1.1];
        let m = DMatrix::from_row_slice(3, 3, &[1.3, -0.2, 0.5, -0.2, 2.0, 0.7, 0.5, 0.7, -1.1]);
        assert_relative_eq!(sym_det(&v, 3), m.determinant(), max_relative = 1e-13);
    }

    proptest! {
        #[test]
        fn conditional_covariance_is_psd_and_shrinks(seed in 0u64..500, n1 in 1usize..3) {
            let cov = random_spd(4, seed);
            let rest: Vec<usize> = (n1..4).collect();
            let given: Vec<usize> = (0..n1).collect();
            let pick = |r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |i, j| cov[(r[i], c[j])]);
            let s22 = pick(&rest, &rest);
            let c = regression_covariance(&s22, &pick(&rest, &given), &pick(&given, &given)).unwrap();
            prop_assert!(min_eigenvalue(&c) > -1e-12);
            // Conditioning never increases variance.
            for i in 0..c.nrows() {
                prop_assert!(c[(i, i)] <= s22[(i, i)] + 1e-12);
            }
        }
    }
}
