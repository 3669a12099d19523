//! Amplitude functions and the radial spectral density they induce.
//!
//! An amplitude is an even, rapidly decaying weight `a` with `a(0) = 1`.
//! The field it shapes has spectral density `w(ξ) = a(|ξ|)²` on `R^m`, and
//! every covariance quantity in the crate is an integral or a lattice sum
//! against that density.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::special::{double_factorial_odd, integrate_adaptive, sphere_monomial_integral};

/// Relative tolerance used by the radial moment quadrature.
pub const MOMENT_REL_TOL: f64 = 1e-10;

/// Tabulated amplitude on `[0, x_last]` with an exponential tail envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct TableAmplitude {
    abscissae: Vec<f64>,
    values: Vec<f64>,
    /// Decay rate `κ` of the tail `|a(x)| ≤ B e^{-κx}` beyond the table.
    tail_rate: Option<f64>,
}

impl TableAmplitude {
    /// Builds a table. Abscissae must start at 0, increase strictly, and the
    /// value at 0 must be 1.
    pub fn new(abscissae: Vec<f64>, values: Vec<f64>, tail_rate: Option<f64>) -> Result<Self> {
        if abscissae.len() != values.len() || abscissae.len() < 2 {
            return Err(Error::InvalidAmplitude(
                "table needs at least two (abscissa, value) rows of equal length".into(),
            ));
        }
        if abscissae[0] != 0.0 {
            return Err(Error::InvalidAmplitude("table must start at abscissa 0".into()));
        }
        if abscissae.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidAmplitude("table abscissae must increase strictly".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidAmplitude("table values must be finite".into()));
        }
        if (values[0] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidAmplitude(format!(
                "amplitude must satisfy a(0) = 1, table gives {}",
                values[0]
            )));
        }
        if let Some(k) = tail_rate {
            if !(k > 0.0) {
                return Err(Error::InvalidAmplitude("tail decay rate must be positive".into()));
            }
        }
        Ok(Self {
            abscissae,
            values,
            tail_rate,
        })
    }

    /// Loads a two-column CSV `abscissa,value`. A header row is allowed.
    pub fn from_csv(path: &Path, tail_rate: Option<f64>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::InvalidAmplitude(format!("row {row}: expected two columns")));
            }
            let (x, y) = match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(x), Ok(y)) => (x, y),
                _ if row == 0 => continue,
                _ => {
                    return Err(Error::InvalidAmplitude(format!("row {row}: not numeric")));
                }
            };
            xs.push(x);
            ys.push(y);
        }
        Self::new(xs, ys, tail_rate)
    }

    fn last(&self) -> (f64, f64) {
        let n = self.abscissae.len();
        (self.abscissae[n - 1], self.values[n - 1])
    }

    /// Prefactor `B` of the tail envelope, matched at the last abscissa.
    fn tail_prefactor(&self, rate: f64) -> f64 {
        let (x, y) = self.last();
        y.abs() * (rate * x).exp()
    }

    fn eval(&self, x: f64) -> f64 {
        let (x_last, _) = self.last();
        if x >= x_last {
            return match self.tail_rate {
                Some(k) => self.tail_prefactor(k) * (-k * x).exp(),
                None => 0.0,
            };
        }
        let i = self.abscissae.partition_point(|&a| a <= x) - 1;
        let (x0, x1) = (self.abscissae[i], self.abscissae[i + 1]);
        let t = (x - x0) / (x1 - x0);
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }
}

/// The shape of an amplitude.
#[derive(Debug, Clone, PartialEq)]
pub enum AmplitudeKind {
    /// `a(x) = exp(-(x/s)²)`.
    Gaussian { scale: f64 },
    /// Smooth compactly supported bump `a(x) = exp(1 - 1/(1 - (x/r)²))` on `|x| < r`.
    Bump { radius: f64 },
    /// Piecewise linear table with an optional certified exponential tail.
    Table(TableAmplitude),
}

/// An even amplitude normalized by `a(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Amplitude {
    kind: AmplitudeKind,
}

impl Amplitude {
    pub fn gaussian(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidAmplitude(format!(
                "gaussian scale must be positive, got {scale}"
            )));
        }
        Ok(Self {
            kind: AmplitudeKind::Gaussian { scale },
        })
    }

    pub fn bump(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidAmplitude(format!(
                "bump radius must be positive, got {radius}"
            )));
        }
        Ok(Self {
            kind: AmplitudeKind::Bump { radius },
        })
    }

    pub fn table(table: TableAmplitude) -> Self {
        Self {
            kind: AmplitudeKind::Table(table),
        }
    }

    pub fn kind(&self) -> &AmplitudeKind {
        &self.kind
    }

    /// Gaussian scale, if this is a gaussian amplitude.
    pub fn gaussian_scale(&self) -> Option<f64> {
        match self.kind {
            AmplitudeKind::Gaussian { scale } => Some(scale),
            _ => None,
        }
    }

    /// Evaluates `a(x)`. Evaluation goes through `|x|`, so evenness holds bit for bit.
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.abs();
        match &self.kind {
            AmplitudeKind::Gaussian { scale } => {
                let u = x / scale;
                (-u * u).exp()
            }
            AmplitudeKind::Bump { radius } => {
                let u = x / radius;
                if u >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - u * u)).exp()
                }
            }
            AmplitudeKind::Table(t) => t.eval(x),
        }
    }

    /// Spectral density `w(ξ) = a(|ξ|)²`.
    pub fn spectral_weight(&self, xi: &[f64]) -> f64 {
        let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let a = self.eval(norm);
        a * a
    }

    /// Radius `L` with `|a(x)| ≤ eps` for every `|x| ≥ L`.
    pub fn truncation_radius(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidArgument(format!("eps must lie in (0,1), got {eps}")));
        }
        match &self.kind {
            AmplitudeKind::Gaussian { scale } => Ok(scale * (-eps.ln()).sqrt()),
            AmplitudeKind::Bump { radius } => Ok(*radius),
            AmplitudeKind::Table(t) => {
                let rate = t.tail_rate.ok_or(Error::UncertifiedTail)?;
                // Last table point whose segment can exceed eps.
                let mut inner = 0.0;
                for i in 0..t.abscissae.len() - 1 {
                    if t.values[i].abs() > eps || t.values[i + 1].abs() > eps {
                        inner = t.abscissae[i + 1];
                    }
                }
                let b = t.tail_prefactor(rate);
                let tail = if b > eps { (b / eps).ln() / rate } else { 0.0 };
                Ok(inner.max(tail))
            }
        }
    }

    /// `(2π)^{-m} ∫ ξ^α w(ξ) dξ` over `R^m`.
    ///
    /// Odd multi-indices give exactly 0. The gaussian kind uses the closed form,
    /// every other kind goes through [`Amplitude::spectral_moment_quadrature`].
    pub fn spectral_moment(&self, alpha: &[usize]) -> Result<f64> {
        check_moment_index(alpha)?;
        if alpha.iter().any(|a| a % 2 == 1) {
            return Ok(0.0);
        }
        match self.kind {
            AmplitudeKind::Gaussian { scale } => Ok(gaussian_moment(scale, alpha)),
            _ => self.spectral_moment_quadrature(alpha),
        }
    }

    /// Radial quadrature route for spectral moments, available for every kind.
    ///
    /// `∫ ξ^α w dξ = (∫_{S^{m-1}} ν^α dσ) · ∫_0^∞ ρ^{|α|+m-1} a(ρ)² dρ`.
    pub fn spectral_moment_quadrature(&self, alpha: &[usize]) -> Result<f64> {
        check_moment_index(alpha)?;
        if alpha.iter().any(|a| a % 2 == 1) {
            return Ok(0.0);
        }
        let m = alpha.len();
        let order: usize = alpha.iter().sum();
        let power = (order + m - 1) as i32;
        let upper = self.quadrature_cutoff()?;
        let radial = self.radial_integral(|rho| rho.powi(power), upper)?;
        let sphere = sphere_monomial_integral(alpha);
        Ok(sphere * radial / (2.0 * PI).powi(m as i32))
    }

    /// `∫_0^upper g(ρ) a(ρ)² dρ` by adaptive Gauss–Kronrod quadrature.
    pub(crate) fn radial_integral<G: Fn(f64) -> f64>(&self, g: G, upper: f64) -> Result<f64> {
        let (v, _) = integrate_adaptive(
            |x| {
                let amp = self.eval(x);
                g(x) * amp * amp
            },
            0.0,
            upper,
            MOMENT_REL_TOL,
            0.0,
            "radial spectral integral",
        )?;
        Ok(v)
    }

    /// Upper limit for radial integrals: beyond it `a²` is below 1e-40.
    pub(crate) fn quadrature_cutoff(&self) -> Result<f64> {
        match &self.kind {
            AmplitudeKind::Bump { radius } => Ok(*radius),
            _ => self.truncation_radius(1e-20),
        }
    }

    /// Mean-square gradient `d = -∂₁₁K(0)` of the unit-scale continuum kernel.
    pub fn gradient_variance(&self, m: usize) -> Result<f64> {
        let mut alpha = vec![0; m];
        alpha[0] = 2;
        self.spectral_moment(&alpha)
    }

    /// `∂₁₁₁₁K(0)`, the variance of a diagonal Hessian entry.
    pub fn hessian_variance(&self, m: usize) -> Result<f64> {
        let mut alpha = vec![0; m];
        alpha[0] = 4;
        self.spectral_moment(&alpha)
    }

    /// Correlation length `√(d/h)` used for grid spacing and small-r handoffs.
    pub fn correlation_length(&self, m: usize) -> Result<f64> {
        Ok((self.gradient_variance(m)? / self.hessian_variance(m)?).sqrt())
    }

    /// Parses `gaussian(s)`, `bump(r)` or `table(path, tail=κ)`.
    pub fn parse(desc: &str) -> Result<Self> {
        let desc = desc.trim();
        let (name, rest) = desc
            .split_once('(')
            .ok_or_else(|| Error::InvalidAmplitude(format!("cannot parse amplitude '{desc}'")))?;
        let arg = rest
            .strip_suffix(')')
            .ok_or_else(|| Error::InvalidAmplitude(format!("missing ')' in '{desc}'")))?;
        match name.trim() {
            "gaussian" => Self::gaussian(parse_num(arg)?),
            "bump" => Self::bump(parse_num(arg)?),
            "table" => {
                // table(path, tail=κ)
                let mut parts = arg.split(',').map(str::trim);
                let path = parts
                    .next()
                    .filter(|p| !p.is_empty())
                    .ok_or_else(|| Error::InvalidAmplitude("table(...) needs a path".into()))?;
                let mut tail = None;
                for p in parts {
                    match p.split_once('=') {
                        Some(("tail", v)) => tail = Some(parse_num(v)?),
                        _ => return Err(Error::InvalidAmplitude(format!("unknown table option '{p}'"))),
                    }
                }
                Ok(Self::table(TableAmplitude::from_csv(Path::new(path), tail)?))
            }
            other => Err(Error::InvalidAmplitude(format!("unknown amplitude kind '{other}'"))),
        }
    }
}

impl fmt::Display for Amplitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            AmplitudeKind::Gaussian { scale } => write!(f, "gaussian({scale})"),
            AmplitudeKind::Bump { radius } => write!(f, "bump({radius})"),
            AmplitudeKind::Table(t) => match t.tail_rate {
                Some(k) => write!(f, "table({} rows, tail={k})", t.abscissae.len()),
                None => write!(f, "table({} rows)", t.abscissae.len()),
            },
        }
    }
}

fn parse_num(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidAmplitude(format!("'{s}' is not a number")))
}

fn check_moment_index(alpha: &[usize]) -> Result<()> {
    if alpha.is_empty() || alpha.len() > crate::MAX_DIM {
        return Err(Error::InvalidArgument(format!(
            "dimension must be in 1..={}, got {}",
            crate::MAX_DIM,
            alpha.len()
        )));
    }
    if alpha.iter().sum::<usize>() > 6 {
        return Err(Error::InvalidArgument("moment order above 6 is not supported".into()));
    }
    Ok(())
}

/// Closed-form moment for `w(ξ) = exp(-2|ξ|²/s²)`. Each coordinate contributes
/// `∫ t^{2k} e^{-c t²} dt = (2k-1)!! (2c)^{-k} √(π/c)` with `c = 2/s²`.
fn gaussian_moment(scale: f64, alpha: &[usize]) -> f64 {
    let c = 2.0 / (scale * scale);
    let mut prod = 1.0;
    for &a in alpha {
        let k = a / 2;
        prod *= double_factorial_odd(k) / (2.0 * c).powi(k as i32) * (PI / c).sqrt();
    }
    prod / (2.0 * PI).powi(alpha.len() as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_values() {
        let a = Amplitude::gaussian(1.0).unwrap();
        assert_eq!(a.eval(0.0), 1.0);
        assert_eq!(a.eval(-2.0).to_bits(), a.eval(2.0).to_bits());
        assert_relative_eq!(a.eval(1.0), (-1.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(a.spectral_weight(&[1.0, 0.0]), (-2.0f64).exp(), max_relative = 1e-15);
        assert_eq!(a.spectral_weight(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn truncation_radii() {
        let eps = (-25.0f64).exp();
        let g1 = Amplitude::gaussian(1.0).unwrap();
        let g2 = Amplitude::gaussian(2.0).unwrap();
        assert_relative_eq!(g1.truncation_radius(eps).unwrap(), 5.0, max_relative = 1e-12);
        assert_relative_eq!(g2.truncation_radius(eps).unwrap(), 10.0, max_relative = 1e-12);
        let b = Amplitude::bump(3.0).unwrap();
        assert_eq!(b.truncation_radius(1e-30).unwrap(), 3.0);
        assert!(g1.truncation_radius(1.5).is_err());
    }

    #[test]
    fn uncertified_table_tail_is_rejected() {
        let t = TableAmplitude::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.1], None).unwrap();
        let a = Amplitude::table(t);
        assert!(matches!(a.truncation_radius(1e-6), Err(Error::UncertifiedTail)));
    }

    #[test]
    fn table_rejects_bad_normalization() {
        assert!(TableAmplitude::new(vec![0.0, 1.0], vec![2.0, 0.5], Some(1.0)).is_err());
    }

    #[test]
    fn table_tail_radius_is_certified() {
        let t = TableAmplitude::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.1], Some(2.0)).unwrap();
        let a = Amplitude::table(t);
        let eps = 1e-8;
        let l = a.truncation_radius(eps).unwrap();
        for i in 0..200 {
            let x = l + i as f64 * 0.1;
            assert!(a.eval(x).abs() <= eps * (1.0 + 1e-12), "x={x}");
        }
    }

    #[test]
    fn odd_moments_vanish() {
        for a in [Amplitude::gaussian(1.3).unwrap(), Amplitude::bump(2.0).unwrap()] {
            assert_eq!(a.spectral_moment(&[1, 0]).unwrap(), 0.0);
            assert_eq!(a.spectral_moment(&[3]).unwrap(), 0.0);
            assert_eq!(a.spectral_moment(&[2, 1, 0]).unwrap(), 0.0);
        }
    }

    #[test]
    fn gaussian_moments_match_independent_quadrature() {
        // Oracle: plain composite Simpson rule on a wide interval, written here.
        let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize| {
            let h = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for i in 1..n {
                let x = a + i as f64 * h;
                s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
            }
            s * h / 3.0
        };
        let m0 = simpson(&|x: f64| (-2.0 * x * x).exp(), -12.0, 12.0, 20000) / (2.0 * PI);
        let m2 = simpson(&|x: f64| x * x * (-2.0 * x * x).exp(), -12.0, 12.0, 20000) / (2.0 * PI);
        assert_relative_eq!(m0, 0.199_471_140_200_716_34, max_relative = 1e-9);
        assert_relative_eq!(m2, 0.049_867_785_050_179_08, max_relative = 1e-9);

        let g = Amplitude::gaussian(1.0).unwrap();
        assert_relative_eq!(g.spectral_moment(&[0]).unwrap(), m0, max_relative = 1e-10);
        assert_relative_eq!(g.spectral_moment(&[2]).unwrap(), m2, max_relative = 1e-10);
    }

    #[test]
    fn closed_form_agrees_with_radial_quadrature() {
        for s in [0.7, 1.0, 2.5] {
            let g = Amplitude::gaussian(s).unwrap();
            let idx: [&[usize]; 9] = [
                &[0],
                &[2],
                &[4],
                &[0, 0],
                &[2, 0],
                &[2, 2],
                &[4, 0],
                &[0, 2, 2],
                &[4, 0, 0],
            ];
            for alpha in idx {
                let closed = g.spectral_moment(alpha).unwrap();
                let quad = g.spectral_moment_quadrature(alpha).unwrap();
                assert_relative_eq!(closed, quad, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn parses_descriptors() {
        assert_eq!(
            Amplitude::parse("gaussian(2)").unwrap(),
            Amplitude::gaussian(2.0).unwrap()
        );
        assert_eq!(Amplitude::parse(" bump(0.5) ").unwrap(), Amplitude::bump(0.5).unwrap());
        assert!(Amplitude::parse("lorentz(1)").is_err());
        assert!(Amplitude::parse("gaussian(-1)").is_err());
    }
}
