//! Monte Carlo studies over many samples: mean and variance of `Z_R(f)`,
//! variance scaling in `R`, LLN trajectories and the blow-up bound.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ampleness::ampleness_gate;
use crate::amplitude::Amplitude;
use crate::covariance::LatticeSpectrum;
use crate::critical::{find_critical_points, pair_measure, FinderSettings, TestFunction};
use crate::error::{Error, Result};
use crate::gaussian::DensityReport;
use crate::kac_rice::blow_up_density;
use crate::rng::{derive_seed, rng_from, trial_seed};
use crate::sampler::sample_field;
use crate::MAX_DIM;

/// Fraction of non-Morse trials above which a study is rejected.
pub const MAX_NON_MORSE_FRACTION: f64 = 0.01;

/// What one study samples.
#[derive(Debug, Clone)]
pub struct StudySpec {
    pub amplitude: Amplitude,
    pub m: usize,
    pub f: TestFunction,
    pub trials: usize,
    pub seed: u64,
    /// Keep only the first `k` modes of each spectrum.
    pub modes: Option<usize>,
    /// Skip the ampleness gate (only for diagnostics on known-degenerate spectra).
    pub skip_gate: bool,
}

impl StudySpec {
    pub fn spectrum(&self, r: f64) -> Result<LatticeSpectrum> {
        let spec = LatticeSpectrum::new(&self.amplitude, self.m, r)?;
        Ok(match self.modes {
            Some(k) => spec.truncated_to(k),
            None => spec,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub count: usize,
    pub z_f: f64,
    pub euler: i64,
    pub non_morse: bool,
}

/// Samples `trials` fields at scale `r` and evaluates `Z_R(f)` on each.
///
/// Trial `i` uses `trial_seed(seed, r, i, stream)`; results come back in trial order.
pub fn run_trials(
    spec: &Arc<LatticeSpectrum>,
    f: &TestFunction,
    trials: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<TrialOutcome>> {
    let r = spec.scale();
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let s = trial_seed(seed, r, i as u64, stream);
            let sample = sample_field(spec, s);
            let measure = find_critical_points(&sample, &FinderSettings::for_sample(&sample))?;
            Ok(TrialOutcome {
                trial: i,
                seed: s,
                count: measure.count(),
                z_f: pair_measure(&measure, f),
                euler: measure.euler_characteristic(),
                non_morse: measure.is_non_morse(),
            })
        })
        .collect()
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Delete-one jackknife standard error of the sample variance.
pub fn jackknife_variance_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 3 {
        return f64::NAN;
    }
    let (mean, _) = mean_var(xs);
    // Centered sums keep the leave-one-out formula stable.
    let s1: f64 = xs.iter().map(|x| x - mean).sum();
    let s2: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let nm1 = (n - 1) as f64;
    let loo: Vec<f64> = xs
        .iter()
        .map(|x| {
            let d = x - mean;
            let a = s1 - d;
            (s2 - d * d - a * a / nm1) / (nm1 - 1.0)
        })
        .collect();
    let (lm, _) = mean_var(&loo);
    let ss: f64 = loo.iter().map(|v| (v - lm).powi(2)).sum();
    (ss * nm1 / n as f64).sqrt()
}

/// Bootstrap standard error of the sample variance with `b` resamples.
pub fn bootstrap_variance_se(xs: &[f64], b: usize, seed: u64) -> f64 {
    let n = xs.len();
    let vars: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from(derive_seed(&[seed, k as u64]));
            let sample: Vec<f64> = (0..n).map(|_| xs[rng.gen_range(0..n)]).collect();
            mean_var(&sample).1
        })
        .collect();
    mean_var(&vars).1.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub r: f64,
    pub trials: usize,
    pub excluded: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub mean_count: f64,
    pub mean_count_se: f64,
}

impl StudyRow {
    fn from_outcomes(r: f64, outcomes: &[TrialOutcome]) -> Result<Self> {
        let kept: Vec<&TrialOutcome> = outcomes.iter().filter(|o| !o.non_morse).collect();
        let excluded = outcomes.len() - kept.len();
        if excluded as f64 > MAX_NON_MORSE_FRACTION * outcomes.len() as f64 {
            return Err(Error::TooManyNonMorse {
                r,
                excluded,
                trials: outcomes.len(),
            });
        }
        if kept.len() < 2 {
            return Err(Error::InvalidArgument("need at least two usable trials".into()));
        }
        let zs: Vec<f64> = kept.iter().map(|o| o.z_f).collect();
        let cs: Vec<f64> = kept.iter().map(|o| o.count as f64).collect();
        let n = zs.len() as f64;
        let (mean, variance) = mean_var(&zs);
        let (mean_count, var_count) = mean_var(&cs);
        Ok(Self {
            r,
            trials: outcomes.len(),
            excluded,
            mean,
            mean_se: (variance / n).sqrt(),
            variance,
            variance_se: jackknife_variance_se(&zs),
            mean_count,
            mean_count_se: (var_count / n).sqrt(),
        })
    }

    /// `R^{-m}·mean` with its standard error.
    pub fn scaled_mean(&self, m: usize) -> (f64, f64) {
        let s = self.r.powi(m as i32);
        (self.mean / s, self.mean_se / s)
    }

    pub fn scaled_variance(&self, m: usize) -> (f64, f64) {
        let s = self.r.powi(m as i32);
        (self.variance / s, self.variance_se / s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub m: usize,
    pub amplitude: String,
    pub test_function: String,
    pub seed: u64,
    pub rows: Vec<StudyRow>,
}

impl StudyResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "R",
            "trials",
            "excluded",
            "mean",
            "mean_se",
            "variance",
            "variance_se",
            "mean_count",
            "mean_count_se",
            "mean_scaled",
            "variance_scaled",
        ])?;
        for row in &self.rows {
            w.write_record(&[
                format!("{}", row.r),
                row.trials.to_string(),
                row.excluded.to_string(),
                format!("{:.17e}", row.mean),
                format!("{:.17e}", row.mean_se),
                format!("{:.17e}", row.variance),
                format!("{:.17e}", row.variance_se),
                format!("{:.17e}", row.mean_count),
                format!("{:.17e}", row.mean_count_se),
                format!("{:.17e}", row.scaled_mean(self.m).0),
                format!("{:.17e}", row.scaled_variance(self.m).0),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean and variance of `Z_R(f)` for each `R`, after the ampleness gate.
pub fn run_mc_stats(study: &StudySpec, r_list: &[f64]) -> Result<StudyResult> {
    if study.trials < 2 {
        return Err(Error::InvalidArgument("trials must be at least 2".into()));
    }
    let mut rows = Vec::with_capacity(r_list.len());
    for &r in r_list {
        let spec = Arc::new(study.spectrum(r)?);
        if !study.skip_gate {
            ampleness_gate(&spec)?;
        }
        let outcomes = run_trials(&spec, &study.f, study.trials, study.seed, 0)?;
        rows.push(StudyRow::from_outcomes(r, &outcomes)?);
        log::info!(
            "R = {r}: mean {:.6}, variance {:.6}",
            rows.last().unwrap().mean,
            rows.last().unwrap().variance
        );
    }
    Ok(StudyResult {
        m: study.m,
        amplitude: study.amplitude.to_string(),
        test_function: describe_test_function(&study.f, study.m),
        seed: study.seed,
        rows,
    })
}

pub fn describe_test_function(f: &TestFunction, m: usize) -> String {
    match f {
        TestFunction::Bump { center, r0 } => format!("bump(center={:?}, r0={r0})", &center[..m]),
        TestFunction::Indicator { lo, hi } => format!("indicator(lo={:?}, hi={:?})", &lo[..m], &hi[..m]),
        TestFunction::FullTorus => "full-torus".into(),
        TestFunction::Zero => "zero".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    pub intercept_se: f64,
    /// 95% normal interval for the slope.
    pub slope_ci: (f64, f64),
    /// `log(Var/R^m)` averaged with the same weights, i.e. the intercept with the slope fixed at `m`.
    pub anchored_intercept: f64,
    pub anchored_intercept_se: f64,
    pub dropped: Vec<f64>,
}

/// Weighted least squares of `log Var` on `log R`.
///
/// Weights are `(Var/σ_Var)²` (delta method); when any row has no variance
/// error, all rows get unit weight.
pub fn scaling_fit(rows: &[StudyRow], m: usize) -> Result<ScalingFit> {
    let mut dropped = Vec::new();
    let mut pts = Vec::new();
    for row in rows {
        if row.variance > 0.0 && row.variance.is_finite() {
            pts.push((row.r.ln(), row.variance.ln(), row.variance_se / row.variance));
        } else {
            log::warn!("dropping R = {} with nonpositive variance", row.r);
            dropped.push(row.r);
        }
    }
    let mut distinct: Vec<f64> = pts.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InvalidArgument("scaling fit needs at least 3 distinct R".into()));
    }
    let unit = pts.iter().any(|p| !(p.2 > 0.0 && p.2.is_finite()));
    let w: Vec<f64> = pts.iter().map(|p| if unit { 1.0 } else { 1.0 / (p.2 * p.2) }).collect();
    let sw: f64 = w.iter().sum();
    let xb = pts.iter().zip(&w).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let yb = pts.iter().zip(&w).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.0 - xb).powi(2)).sum();
    let sxy: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.0 - xb) * (p.1 - yb)).sum();
    let slope = sxy / sxx;
    let intercept = yb - slope * xb;
    let (slope_se, intercept_se) = if unit {
        let n = pts.len() as f64;
        let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        let s2 = rss / (n - 2.0);
        ((s2 / sxx).sqrt(), (s2 * (1.0 / n + xb * xb / sxx)).sqrt())
    } else {
        ((1.0 / sxx).sqrt(), (1.0 / sw + xb * xb / sxx).sqrt())
    };
    let anchored_intercept = pts.iter().zip(&w).map(|(p, w)| w * (p.1 - m as f64 * p.0)).sum::<f64>() / sw;
    let anchored_intercept_se = if unit {
        let n = pts.len() as f64;
        let ss: f64 = pts
            .iter()
            .map(|p| (p.1 - m as f64 * p.0 - anchored_intercept).powi(2))
            .sum();
        (ss / (n - 1.0) / n).sqrt()
    } else {
        (1.0 / sw).sqrt()
    };
    Ok(ScalingFit {
        slope,
        slope_se,
        intercept,
        intercept_se,
        slope_ci: (slope - 1.96 * slope_se, slope + 1.96 * slope_se),
        anchored_intercept,
        anchored_intercept_se,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlnPoint {
    pub n: f64,
    pub stream: u64,
    pub count: usize,
    pub z_f: f64,
    /// `N^{-m} Z_N(f)`.
    pub scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlnBand {
    pub n: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    /// Max over streams of `|N^{-m}Z_N(f) − C_m∫f|`.
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlnReport {
    pub m: usize,
    /// `C_m ∫f`.
    pub reference: f64,
    /// Set for `m = 1`, where only the L² statement applies.
    pub l2_only: bool,
    pub points: Vec<LlnPoint>,
    pub bands: Vec<LlnBand>,
}

impl LlnReport {
    pub fn final_relative_deviation(&self) -> f64 {
        self.bands
            .last()
            .map_or(f64::NAN, |b| b.max_deviation / self.reference.abs())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["N", "stream", "count", "z_f", "scaled", "reference"])?;
        for p in &self.points {
            w.write_record(&[
                format!("{}", p.n),
                p.stream.to_string(),
                p.count.to_string(),
                format!("{:.17e}", p.z_f),
                format!("{:.17e}", p.scaled),
                format!("{:.17e}", self.reference),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// LLN trajectories. Stream `s` uses one coefficient seed for every `N`, so
/// the fields along a stream share their Gaussian coefficients and differ only
/// through the amplitude weights at scale `N`.
pub fn lln_trajectory(
    amp: &Amplitude,
    m: usize,
    n_list: &[f64],
    f: &TestFunction,
    streams: usize,
    seed: u64,
    c_m: f64,
) -> Result<LlnReport> {
    let reference = c_m * f.integral(m);
    let mut points = Vec::new();
    let mut bands = Vec::new();
    for &n in n_list {
        let spec = Arc::new(LatticeSpectrum::new(amp, m, n)?);
        let row: Vec<LlnPoint> = (0..streams as u64)
            .into_par_iter()
            .map(|s| {
                let sample = sample_field(&spec, derive_seed(&[seed, s]));
                let measure = find_critical_points(&sample, &FinderSettings::for_sample(&sample))?;
                let z_f = pair_measure(&measure, f);
                Ok(LlnPoint {
                    n,
                    stream: s,
                    count: measure.count(),
                    z_f,
                    scaled: z_f / n.powi(m as i32),
                })
            })
            .collect::<Result<_>>()?;
        let mut vals: Vec<f64> = row.iter().map(|p| p.scaled).collect();
        vals.sort_by(f64::total_cmp);
        bands.push(LlnBand {
            n,
            q25: quantile(&vals, 0.25),
            median: quantile(&vals, 0.5),
            q75: quantile(&vals, 0.75),
            max_deviation: vals.iter().map(|v| (v - reference).abs()).fold(0.0, f64::max),
        });
        points.extend(row);
    }
    Ok(LlnReport {
        m,
        reference,
        l2_only: m == 1,
        points,
        bands,
    })
}

/// `sup_B (|∇Φ| + ‖HessΦ‖_F + ‖∂³Φ‖_F)` over a grid on the unit x-ball `B` at the origin.
pub fn c_f_sup(sample: &crate::sampler::FieldSample, spacing: f64) -> Result<f64> {
    let m = sample.dim();
    let r = sample.scale();
    let k = (1.0 / spacing).ceil() as i64;
    let mut best = 0.0f64;
    let mut idx = vec![-k; m];
    loop {
        let x: Vec<f64> = idx.iter().map(|&i| i as f64 / k as f64).collect();
        if x.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            let theta: Vec<f64> = x.iter().map(|v| v / r).collect();
            let jet = sample.eval_jet(&theta, 2)?;
            let third = sample.third_derivatives(&theta);
            let (mut g, mut h, mut t) = (0.0, 0.0, 0.0);
            for a in 0..m {
                g += jet.grad[a].powi(2);
                for b in 0..m {
                    h += jet.hess[a][b].powi(2);
                    for c in 0..m {
                        t += third[a][b][c].powi(2);
                    }
                }
            }
            // θ-derivatives of order k carry R^{-k} in x-units.
            let v = g.sqrt() / r + h.sqrt() / (r * r) + t.sqrt() / (r * r * r);
            best = best.max(v);
        }
        let mut j = 0;
        while j < m {
            idx[j] += 1;
            if idx[j] <= k {
                break;
            }
            idx[j] = -k;
            j += 1;
        }
        if j == m {
            break;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowUpStudy {
    pub w: Vec<(f64, DensityReport)>,
    /// `E[C_F^p]` with standard error, for `p = 1, 2, 4`.
    pub moments: Vec<(u32, f64, f64)>,
    /// `sup_r w(r) / E[C_F]`.
    pub k_observed: f64,
}

/// Tabulates `w(r)` along `e₁` and estimates moments of the sup-norm constant.
pub fn blowup_bound_study(
    spec: &Arc<LatticeSpectrum>,
    r_grid: &[f64],
    trials: usize,
    n_mc: usize,
    seed: u64,
) -> Result<BlowUpStudy> {
    let m = spec.dim();
    let mut nu = [0.0; MAX_DIM];
    nu[0] = 1.0;
    let w = r_grid
        .iter()
        .map(|&r| {
            Ok((
                r,
                blow_up_density(spec, r, &nu[..m], n_mc, derive_seed(&[seed, r.to_bits()]))?.w,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let spacing = 0.125 * spec.amplitude().correlation_length(m)?;
    let cs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            c_f_sup(
                &sample_field(spec, trial_seed(seed, spec.scale(), i as u64, 7)),
                spacing,
            )
        })
        .collect::<Result<_>>()?;
    let mut moments = Vec::new();
    for p in [1u32, 2, 4] {
        let xs: Vec<f64> = cs.iter().map(|c| c.powi(p as i32)).collect();
        let (mean, var) = mean_var(&xs);
        moments.push((p, mean, (var / xs.len() as f64).sqrt()));
    }
    let sup_w = w.iter().map(|(_, d)| d.value).fold(0.0, f64::max);
    Ok(BlowUpStudy {
        k_observed: sup_w / moments[0].1,
        w,
        moments,
    })
}
