//! Realizations of the random series
//! `F(θ) = R^{-m/2}[A_0 + √2 Σ_{ℓ≻0} a(|2πℓ|/R)(A_ℓ cos 2π⟨ℓ,θ⟩ + B_ℓ sin 2π⟨ℓ,θ⟩)]`
//! with exact trigonometric derivatives and FFT grid evaluation.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use sha2::{Digest, Sha256};

use crate::covariance::LatticeSpectrum;
use crate::error::{Error, Result};
use crate::rng::coefficient_pair;
use crate::MAX_DIM;

const TWO_PI: f64 = 2.0 * PI;

/// One term `factor·(A cos 2π⟨ℓ,θ⟩ + B sin 2π⟨ℓ,θ⟩)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub ell: [i32; MAX_DIM],
    pub factor: f64,
    pub a: f64,
    pub b: f64,
}

/// Value, gradient and Hessian of a sample at one point (θ-coordinates).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; MAX_DIM],
    pub hess: [[f64; MAX_DIM]; MAX_DIM],
}

/// One realization: a finite list of weighted Gaussian coefficients.
#[derive(Debug, Clone)]
pub struct FieldSample {
    m: usize,
    r: f64,
    seed: Option<u64>,
    terms: Vec<Term>,
    // Precomputed factor·A and factor·B.
    ca: Vec<f64>,
    cb: Vec<f64>,
    kmax: usize,
    spec: Option<Arc<LatticeSpectrum>>,
}

/// Draws the coefficients of `spec` under `seed`.
///
/// Each pair `(A_ℓ, B_ℓ)` depends only on `(seed, ℓ)`, so enlarging the
/// spectrum refines a sample without reshuffling it.
pub fn sample_field(spec: &Arc<LatticeSpectrum>, seed: u64) -> FieldSample {
    let m = spec.dim();
    let terms = spec
        .modes()
        .iter()
        .map(|md| {
            let (a, b) = coefficient_pair(seed, &md.ell[..m]);
            let b = if md.ell == [0; MAX_DIM] { 0.0 } else { b };
            Term {
                ell: md.ell,
                factor: md.amp_factor,
                a,
                b,
            }
        })
        .collect();
    let mut s = FieldSample::from_terms(m, spec.scale(), terms);
    s.seed = Some(seed);
    s.spec = Some(Arc::clone(spec));
    s
}

impl FieldSample {
    /// A deterministic field from explicit terms (used for injected test fields).
    pub fn from_terms(m: usize, r: f64, terms: Vec<Term>) -> Self {
        let ca = terms.iter().map(|t| t.factor * t.a).collect();
        let cb = terms.iter().map(|t| t.factor * t.b).collect();
        let kmax = terms
            .iter()
            .flat_map(|t| t.ell[..m].iter().map(|v| v.unsigned_abs() as usize))
            .max()
            .unwrap_or(0);
        Self {
            m,
            r,
            seed: None,
            terms,
            ca,
            cb,
            kmax,
            spec: None,
        }
    }

    /// `Σ_j cos 2π k_j θ_j`-type sums: each entry is `(ℓ, A, B)` with unit factor.
    pub fn from_cos_sin(m: usize, r: f64, entries: &[(&[i32], f64, f64)]) -> Self {
        let terms = entries
            .iter()
            .map(|(ell, a, b)| {
                let mut e = [0; MAX_DIM];
                e[..ell.len()].copy_from_slice(ell);
                Term {
                    ell: e,
                    factor: 1.0,
                    a: *a,
                    b: *b,
                }
            })
            .collect();
        Self::from_terms(m, r, terms)
    }

    pub fn dim(&self) -> usize {
        self.m
    }
    pub fn scale(&self) -> f64 {
        self.r
    }
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
    pub fn terms(&self) -> &[Term] {
        &self.terms
    }
    pub fn spectrum(&self) -> Option<&Arc<LatticeSpectrum>> {
        self.spec.as_ref()
    }
    /// Largest `|ℓ_j|` with a term.
    pub fn max_index(&self) -> usize {
        self.kmax
    }

    /// Is the field constant (no nonzero frequency carries weight)?
    pub fn is_constant(&self) -> bool {
        self.terms
            .iter()
            .zip(self.ca.iter().zip(&self.cb))
            .all(|(t, (a, b))| t.ell == [0; MAX_DIM] || (*a == 0.0 && *b == 0.0))
    }

    /// SHA-256 of the coefficient table.
    pub fn coefficient_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.terms {
            for e in t.ell {
                h.update(e.to_le_bytes());
            }
            h.update(t.factor.to_le_bytes());
            h.update(t.a.to_le_bytes());
            h.update(t.b.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn phase_tables(&self, theta: &[f64]) -> Vec<Vec<Complex64>> {
        let k = self.kmax as i64;
        (0..self.m)
            .map(|j| {
                let t = theta[j] - theta[j].floor();
                (-k..=k)
                    .map(|l| {
                        // Reduce 2πlθ modulo 2π before the trig call.
                        let x = l as f64 * t;
                        let x = x - x.floor();
                        let (s, c) = (TWO_PI * x).sin_cos();
                        Complex64::new(c, s)
                    })
                    .collect()
            })
            .collect()
    }

    /// Value, gradient and Hessian at `θ` (θ-coordinates), up to `order ≤ 2`.
    pub fn eval_jet(&self, theta: &[f64], order: usize) -> Result<Jet> {
        if order > 2 {
            return Err(Error::Unsupported(format!("jet order {order} (maximum 2)")));
        }
        if theta.len() != self.m {
            return Err(Error::InvalidArgument("point dimension mismatch".into()));
        }
        Ok(self.jet_unchecked(theta, order))
    }

    pub(crate) fn jet_unchecked(&self, theta: &[f64], order: usize) -> Jet {
        let m = self.m;
        let tables = self.phase_tables(theta);
        let k = self.kmax as i64;
        let mut jet = Jet::default();
        for (t, (&ca, &cb)) in self.terms.iter().zip(self.ca.iter().zip(&self.cb)) {
            let mut e = Complex64::new(1.0, 0.0);
            for j in 0..m {
                e *= tables[j][(t.ell[j] as i64 + k) as usize];
            }
            // ca cos φ + cb sin φ and its φ-derivative.
            let v = ca * e.re + cb * e.im;
            jet.value += v;
            if order >= 1 {
                let dv = -ca * e.im + cb * e.re;
                let mut w = [0.0; MAX_DIM];
                for j in 0..m {
                    w[j] = TWO_PI * t.ell[j] as f64;
                    jet.grad[j] += w[j] * dv;
                }
                if order >= 2 {
                    for i in 0..m {
                        for j in i..m {
                            jet.hess[i][j] -= w[i] * w[j] * v;
                        }
                    }
                }
            }
        }
        for i in 0..m {
            for j in 0..i {
                jet.hess[i][j] = jet.hess[j][i];
            }
        }
        jet
    }

    /// Third derivatives `∂_i∂_j∂_k F(θ)`.
    pub fn third_derivatives(&self, theta: &[f64]) -> [[[f64; MAX_DIM]; MAX_DIM]; MAX_DIM] {
        let m = self.m;
        let tables = self.phase_tables(theta);
        let k = self.kmax as i64;
        let mut out = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for (t, (&ca, &cb)) in self.terms.iter().zip(self.ca.iter().zip(&self.cb)) {
            let mut e = Complex64::new(1.0, 0.0);
            for j in 0..m {
                e *= tables[j][(t.ell[j] as i64 + k) as usize];
            }
            let dv = -ca * e.im + cb * e.re;
            for a in 0..m {
                for b in 0..m {
                    for c in 0..m {
                        let w = TWO_PI.powi(3) * (t.ell[a] * t.ell[b] * t.ell[c]) as f64;
                        out[a][b][c] -= w * dv;
                    }
                }
            }
        }
        out
    }

    /// Values of `∂^α F` on the grid `{0, 1/n, …, (n−1)/n}^m` by inverse FFT.
    ///
    /// The result is flattened with the first coordinate varying slowest.
    pub fn grid_derivative(&self, n: usize, alpha: &[usize]) -> Result<Vec<f64>> {
        let m = self.m;
        if n < 2 {
            return Err(Error::InvalidArgument(
                "grid needs at least 2 points per dimension".into(),
            ));
        }
        if alpha.len() != m {
            return Err(Error::InvalidArgument("multi-index dimension mismatch".into()));
        }
        if n < 2 * self.kmax + 1 {
            log::warn!(
                "grid of {n} points per dimension aliases frequencies up to {}",
                self.kmax
            );
        }
        let total = n.pow(m as u32);
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        let order: usize = alpha.iter().sum();
        let i_pow = match order % 4 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        };
        for (t, (&ca, &cb)) in self.terms.iter().zip(self.ca.iter().zip(&self.cb)) {
            let mut idx = 0usize;
            let mut mono = 1.0;
            for j in 0..m {
                let l = t.ell[j] as i64;
                idx = idx * n + l.rem_euclid(n as i64) as usize;
                mono *= (TWO_PI * l as f64).powi(alpha[j] as i32);
            }
            buf[idx] += Complex64::new(ca, -cb) * i_pow * mono;
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_inverse(n);
        // Transform along each axis in turn.
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..m {
            let stride = n.pow((m - 1 - axis) as u32);
            for start in 0..total {
                if !(start / stride).is_multiple_of(n) {
                    continue;
                }
                for (i, v) in line.iter_mut().enumerate() {
                    *v = buf[start + i * stride];
                }
                fft.process(&mut line);
                for (i, v) in line.iter().enumerate() {
                    buf[start + i * stride] = *v;
                }
            }
        }
        Ok(buf.into_iter().map(|c| c.re).collect())
    }

    /// Field values on the uniform grid.
    pub fn grid_values(&self, n: usize) -> Result<Vec<f64>> {
        self.grid_derivative(n, &vec![0; self.m])
    }

    /// Coefficient dump: columns `ℓ0..ℓ{m-1}, factor, A, B`.
    pub fn write_coefficients_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.m).map(|j| format!("l{j}")).collect();
        header.extend(["factor", "A", "B"].map(String::from));
        w.write_record(&header)?;
        for t in &self.terms {
            let mut rec: Vec<String> = t.ell[..self.m].iter().map(|v| v.to_string()).collect();
            rec.push(format!("{:.17e}", t.factor));
            rec.push(format!("{:.17e}", t.a));
            rec.push(format!("{:.17e}", t.b));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Grid values as CSV: columns `theta0..theta{m-1}, value`.
    pub fn write_grid_csv<W: Write>(&self, out: W, n: usize) -> Result<()> {
        let vals = self.grid_values(n)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.m).map(|j| format!("theta{j}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        for (flat, v) in vals.iter().enumerate() {
            let mut rec = Vec::with_capacity(self.m + 1);
            for j in 0..self.m {
                let i = (flat / n.pow((self.m - 1 - j) as u32)) % n;
                rec.push(format!("{:.17e}", i as f64 / n as f64));
            }
            rec.push(format!("{v:.17e}"));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Jet {
    pub fn hessian_matrix(&self, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, m, |i, j| self.hess[i][j])
    }
}
