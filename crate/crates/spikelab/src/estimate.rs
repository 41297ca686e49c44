//! Spike number, location, and size estimation from sample eigenvalues.
//!
//! The detector works entirely from the descending eigenvalue list and the
//! aspect ratio c = p/n. A bulk scale t₀ is fixed by trace matching and
//! refined against the implied bulk band; eigenvalues clearing the band by a
//! Tracy–Widom-scale margin become candidates. Each candidate is inverted
//! through the empirical Stieltjes chain to a population size α̂ and a
//! centering value φ̂, and is accepted when it falls inside the two-sided
//! confidence interval built from the plug-in limit variance.

use serde::{Deserialize, Serialize};

use crate::clt::VectorRegime;
use crate::error::{Error, Result};

/// Tuning for [`detect_spikes`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Aspect ratio c = p/n.
    pub c: f64,
    /// Relative-gap threshold for excluding a candidate's own group from the
    /// local Stieltjes sum.
    pub ratio_threshold: f64,
    /// Lower acceptance quantile of the limiting normal.
    pub lower_q: f64,
    /// Upper acceptance quantile.
    pub upper_q: f64,
    pub regime: VectorRegime,
    /// E|x|⁴ of the data entries; required in the `Diagonal` regime.
    pub fourth_moment: Option<f64>,
}

impl DetectionConfig {
    pub fn new(c: f64) -> Self {
        Self {
            c,
            ratio_threshold: 0.2,
            lower_q: 0.05,
            upper_q: 0.95,
            regime: VectorRegime::Delocalized,
            fourth_moment: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.c.is_finite() || self.c <= 0.0 {
            return Err(Error::InvalidParameter(format!("c = {} must be > 0", self.c)));
        }
        if !(0.0 < self.lower_q && self.lower_q < self.upper_q && self.upper_q < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "quantiles ({}, {}) must satisfy 0 < lower < upper < 1",
                self.lower_q, self.upper_q
            )));
        }
        if !(0.0 < self.ratio_threshold && self.ratio_threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "ratio threshold {} must lie in (0,1)",
                self.ratio_threshold
            )));
        }
        if self.regime == VectorRegime::Diagonal {
            match self.fourth_moment {
                Some(m4) if m4.is_finite() && m4 >= 1.0 => {}
                _ => {
                    return Err(Error::InvalidParameter(
                        "diagonal regime needs a finite fourth moment >= 1".into(),
                    ))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateStatus {
    /// Candidate's eigenvalue sits inside its own confidence interval.
    Accepted,
    /// Interval test failed.
    Rejected,
    /// The plug-in centering φ̂ landed inside the bulk band.
    InvalidPhi,
    /// The estimation chain produced no usable variance.
    Degenerate,
}

/// Per-candidate record of the full estimation chain. Fields past the point
/// where a degenerate chain stopped are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeCandidate {
    /// 1-based rank in the descending eigenvalue list.
    pub rank: usize,
    pub eigenvalue: f64,
    pub alpha_hat: Option<f64>,
    pub phi_hat: Option<f64>,
    pub sigma2_hat: Option<f64>,
    /// Acceptance interval for the eigenvalue.
    pub interval: Option<(f64, f64)>,
    pub status: CandidateStatus,
}

/// Accepted spikes merged into groups of (approximately) equal size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedGroup {
    pub alpha_hat: f64,
    pub multiplicity: usize,
    pub ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeReport {
    /// Estimated spike count M̂₀.
    pub m_hat: usize,
    /// Every eigenvalue that cleared the bulk band, with its chain.
    pub candidates: Vec<SpikeCandidate>,
    pub groups: Vec<EstimatedGroup>,
    /// Fitted bulk scale.
    pub t0: f64,
    /// Margined bulk band; eigenvalues inside are never candidates.
    pub band: (f64, f64),
}

/// Empirical Stieltjes transform m̂(λ) = (1/p) Σ 1/(l_i − λ).
pub fn empirical_m(eigs: &[f64], lambda: f64) -> f64 {
    eigs.iter().map(|&l| 1.0 / (l - lambda)).sum::<f64>() / eigs.len() as f64
}

/// Empirical derivative m̂₂(λ) = (1/p) Σ 1/(l_i − λ)².
pub fn empirical_m2(eigs: &[f64], lambda: f64) -> f64 {
    eigs.iter()
        .map(|&l| {
            let d = l - lambda;
            1.0 / (d * d)
        })
        .sum::<f64>()
        / eigs.len() as f64
}

/// Companion transform from the p-dimensional one:
/// m̲̂(λ) = −(1−c)/λ + c m̂(λ).
pub fn underline_from_m(m: f64, c: f64, lambda: f64) -> f64 {
    -(1.0 - c) / lambda + c * m
}

/// Companion derivative: m̲̂₂(λ) = (1−c)/λ² + c m̂₂(λ).
pub fn underline2_from_m2(m2: f64, c: f64, lambda: f64) -> f64 {
    (1.0 - c) / (lambda * lambda) + c * m2
}

/// Standard normal quantile (Acklam's rational approximation, |ε| < 1.2e-9).
pub fn normal_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("quantile {q} outside (0,1)")));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    let x = if q < p_low {
        let r = (-2.0 * q.ln()).sqrt();
        (((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5])
            / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    } else if q <= 1.0 - p_low {
        let r = q - 0.5;
        let s = r * r;
        (((((A[0] * s + A[1]) * s + A[2]) * s + A[3]) * s + A[4]) * s + A[5]) * r
            / (((((B[0] * s + B[1]) * s + B[2]) * s + B[3]) * s + B[4]) * s + 1.0)
    } else {
        let r = (-2.0 * (1.0 - q).ln()).sqrt();
        -(((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5])
            / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    };
    Ok(x)
}

/// Run the full detection pipeline over a set of sample eigenvalues.
/// The input need not be sorted.
pub fn detect_spikes(eigs: &[f64], cfg: &DetectionConfig) -> Result<SpikeReport> {
    cfg.validate()?;
    let p = eigs.len();
    if p < 2 {
        return Err(Error::InvalidDimension(format!("need at least 2 eigenvalues, got {p}")));
    }
    if eigs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("eigenvalues must be finite".into()));
    }
    let mut l: Vec<f64> = eigs.to_vec();
    l.sort_by(|a, b| b.total_cmp(a));

    let c = cfg.c;
    let nf = p as f64 / c;
    let root_n = nf.sqrt();
    let sc = c.sqrt();
    let edge_lo = (1.0 - sc) * (1.0 - sc);
    let edge_hi = (1.0 + sc) * (1.0 + sc);

    // trace-matched bulk scale with two refinement passes that drop
    // eigenvalues outside the implied band
    let mut t0 = l.iter().sum::<f64>() / p as f64;
    for _ in 0..2 {
        let (mut s, mut k) = (0.0, 0usize);
        for &v in &l {
            if v >= t0 * edge_lo && v <= t0 * edge_hi {
                s += v;
                k += 1;
            }
        }
        if k > 0 {
            t0 = s / k as f64;
        }
    }
    if !(t0.is_finite() && t0 > 0.0) {
        return Err(Error::EstimationDegenerate(format!("bulk scale t0 = {t0}")));
    }

    // eigenvalue fluctuations at the band edge live on the n^{-2/3} scale
    let margin = 2.0 * nf.powf(-2.0 / 3.0);
    let band = (t0 * edge_lo * (1.0 - margin), t0 * edge_hi * (1.0 + margin));

    let z_lo = normal_quantile(cfg.lower_q)?;
    let z_hi = normal_quantile(cfg.upper_q)?;
    let beta_hat = match cfg.regime {
        VectorRegime::Delocalized => 0.0,
        VectorRegime::Diagonal => cfg.fourth_moment.expect("validated") - 3.0,
    };

    let mut candidates = Vec::new();
    for (idx, &lj) in l.iter().enumerate() {
        if lj <= 0.0 || (lj >= band.0 && lj <= band.1) {
            continue;
        }
        let rank = idx + 1;
        let degenerate = || SpikeCandidate {
            rank,
            eigenvalue: lj,
            alpha_hat: None,
            phi_hat: None,
            sigma2_hat: None,
            interval: None,
            status: CandidateStatus::Degenerate,
        };

        // local transform over eigenvalues relatively far from l_j, so the
        // candidate's own group drops out of the sum
        let mut s = 0.0;
        let mut any = false;
        for &li in &l {
            if (li - lj).abs() / li.max(lj) >= cfg.ratio_threshold {
                s += 1.0 / (li - lj);
                any = true;
            }
        }
        if !any {
            candidates.push(degenerate());
            continue;
        }
        let m_local = s / p as f64;
        let mu = underline_from_m(m_local, c, lj);
        if mu == 0.0 {
            candidates.push(degenerate());
            continue;
        }
        let alpha_hat = -1.0 / mu;
        if (alpha_hat - t0).abs() < 1e-12 * t0.max(alpha_hat.abs()) {
            candidates.push(degenerate());
            continue;
        }
        let phi_hat = alpha_hat * (1.0 + c * t0 / (alpha_hat - t0));
        if !(phi_hat.is_finite() && phi_hat > 0.0) {
            candidates.push(degenerate());
            continue;
        }
        if phi_hat >= band.0 && phi_hat <= band.1 {
            candidates.push(SpikeCandidate {
                rank,
                eigenvalue: lj,
                alpha_hat: Some(alpha_hat),
                phi_hat: Some(phi_hat),
                sigma2_hat: None,
                interval: None,
                status: CandidateStatus::InvalidPhi,
            });
            continue;
        }
        let mh = empirical_m(&l, phi_hat);
        let mu_phi = underline_from_m(mh, c, phi_hat);
        let mu2_phi = underline2_from_m2(empirical_m2(&l, phi_hat), c, phi_hat);
        let kappa_hat = 1.0 + phi_hat * alpha_hat * mu2_phi + alpha_hat * mu_phi;
        let theta_hat = alpha_hat * alpha_hat * mu2_phi;
        let denom = phi_hat * (1.0 + c * mh);
        let nu_hat = alpha_hat * alpha_hat / (denom * denom);
        let sigma2_hat = (2.0 * theta_hat + beta_hat * nu_hat) / (kappa_hat * kappa_hat);
        if !sigma2_hat.is_finite() || sigma2_hat < 0.0 {
            candidates.push(degenerate());
            continue;
        }
        let half = sigma2_hat.sqrt() / root_n;
        let interval = ((1.0 + z_lo * half) * phi_hat, (1.0 + z_hi * half) * phi_hat);
        let status = if lj >= interval.0 && lj <= interval.1 {
            CandidateStatus::Accepted
        } else {
            CandidateStatus::Rejected
        };
        candidates.push(SpikeCandidate {
            rank,
            eigenvalue: lj,
            alpha_hat: Some(alpha_hat),
            phi_hat: Some(phi_hat),
            sigma2_hat: Some(sigma2_hat),
            interval: Some(interval),
            status,
        });
    }

    let mut m_hat = 0usize;
    let mut groups: Vec<EstimatedGroup> = Vec::new();
    for cand in &candidates {
        if cand.status != CandidateStatus::Accepted {
            continue;
        }
        m_hat += 1;
        let alpha = cand.alpha_hat.expect("accepted candidates carry estimates");
        let merge = groups.last().is_some_and(|g| {
            let last_rank = *g.ranks.last().unwrap();
            let rel = (g.alpha_hat - alpha).abs() / g.alpha_hat.abs().max(alpha.abs());
            cand.rank == last_rank + 1 && rel < cfg.ratio_threshold
        });
        if merge {
            let g = groups.last_mut().unwrap();
            let k = g.multiplicity as f64;
            g.alpha_hat = (g.alpha_hat * k + alpha) / (k + 1.0);
            g.multiplicity += 1;
            g.ranks.push(cand.rank);
        } else {
            groups.push(EstimatedGroup { alpha_hat: alpha, multiplicity: 1, ranks: vec![cand.rank] });
        }
    }

    Ok(SpikeReport { m_hat, candidates, groups, t0, band })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::phi;
    use approx::assert_abs_diff_eq;

    /// Quantile grid of the Marchenko–Pastur law with ratio c < 1:
    /// k values splitting the law into equal-mass slices.
    fn mp_quantiles(c: f64, k: usize) -> Vec<f64> {
        let a = (1.0 - c.sqrt()) * (1.0 - c.sqrt());
        let b = (1.0 + c.sqrt()) * (1.0 + c.sqrt());
        let steps = 20_000usize;
        let h = (b - a) / steps as f64;
        let dens = |x: f64| {
            let v = (b - x) * (x - a);
            if v <= 0.0 {
                0.0
            } else {
                v.sqrt() / (2.0 * std::f64::consts::PI * c * x)
            }
        };
        let mut grid = Vec::with_capacity(steps + 1);
        let mut cum = Vec::with_capacity(steps + 1);
        let mut mass = 0.0;
        let mut prev = dens(a);
        grid.push(a);
        cum.push(0.0);
        for i in 1..=steps {
            let x = a + i as f64 * h;
            let d = dens(x);
            mass += 0.5 * h * (prev + d);
            grid.push(x);
            cum.push(mass);
            prev = d;
        }
        (0..k)
            .map(|i| {
                let target = (i as f64 + 0.5) / k as f64 * mass;
                let j = cum.partition_point(|&v| v < target).min(steps);
                let (c0, c1) = (cum[j - 1], cum[j]);
                let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
                grid[j - 1] + frac * h
            })
            .collect()
    }

    fn synthetic_eigs(c: f64, p: usize, spikes: &[f64]) -> Vec<f64> {
        let mut l: Vec<f64> = spikes.iter().map(|&a| phi(a, c, &crate::model::BulkMeasure::point_mass(1.0).unwrap()).unwrap()).collect();
        l.extend(mp_quantiles(c, p - spikes.len()));
        l.sort_by(|x, y| y.total_cmp(x));
        l
    }

    #[test]
    fn quantile_grid_matches_mp_moments() {
        let q = mp_quantiles(0.5, 400);
        let mean = q.iter().sum::<f64>() / 400.0;
        // ∫x dMP = 1, ∫x² dMP = 1 + c
        let second = q.iter().map(|&x| x * x).sum::<f64>() / 400.0;
        assert_abs_diff_eq!(mean, 1.0, epsilon = 2e-3);
        assert_abs_diff_eq!(second, 1.5, epsilon = 6e-3);
    }

    #[test]
    fn null_spectrum_detects_nothing() {
        let eigs = mp_quantiles(0.5, 200);
        let report = detect_spikes(&eigs, &DetectionConfig::new(0.5)).unwrap();
        assert_eq!(report.m_hat, 0);
        assert!(report.candidates.is_empty());
        assert_abs_diff_eq!(report.t0, 1.0, epsilon = 0.02);
    }

    #[test]
    fn single_spike_recovered() {
        let eigs = synthetic_eigs(0.5, 200, &[4.0]);
        let report = detect_spikes(&eigs, &DetectionConfig::new(0.5)).unwrap();
        assert_eq!(report.m_hat, 1);
        assert_eq!(report.groups.len(), 1);
        assert_eq!(report.groups[0].ranks, vec![1]);
        assert!((report.groups[0].alpha_hat / 4.0 - 1.0).abs() < 0.05, "alpha {}", report.groups[0].alpha_hat);
    }

    #[test]
    fn double_spike_grouped() {
        let eigs = synthetic_eigs(0.5, 200, &[3.0, 3.0]);
        let report = detect_spikes(&eigs, &DetectionConfig::new(0.5)).unwrap();
        assert_eq!(report.m_hat, 2);
        assert_eq!(report.groups.len(), 1);
        assert_eq!(report.groups[0].multiplicity, 2);
        assert_eq!(report.groups[0].ranks, vec![1, 2]);
        assert!((report.groups[0].alpha_hat / 3.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn lower_spike_recovered() {
        let eigs = synthetic_eigs(0.5, 400, &[0.1]);
        let report = detect_spikes(&eigs, &DetectionConfig::new(0.5)).unwrap();
        assert_eq!(report.m_hat, 1);
        assert_eq!(report.groups[0].ranks, vec![400]);
        assert!((report.groups[0].alpha_hat / 0.1 - 1.0).abs() < 0.08, "alpha {}", report.groups[0].alpha_hat);
    }

    #[test]
    fn distinct_groups_not_merged() {
        let eigs = synthetic_eigs(0.5, 300, &[4.0, 3.0, 3.0]);
        let report = detect_spikes(&eigs, &DetectionConfig::new(0.5)).unwrap();
        assert_eq!(report.m_hat, 3);
        assert_eq!(report.groups.len(), 2);
        assert_eq!(report.groups[0].multiplicity, 1);
        assert_eq!(report.groups[1].multiplicity, 2);
    }

    #[test]
    fn scale_equivariance() {
        let eigs = synthetic_eigs(0.5, 200, &[4.0]);
        let scaled: Vec<f64> = eigs.iter().map(|&v| 7.0 * v).collect();
        let a = detect_spikes(&eigs, &DetectionConfig::new(0.5)).unwrap();
        let b = detect_spikes(&scaled, &DetectionConfig::new(0.5)).unwrap();
        assert_eq!(a.m_hat, b.m_hat);
        assert_abs_diff_eq!(b.groups[0].alpha_hat, 7.0 * a.groups[0].alpha_hat, epsilon = 1e-6);
        assert_abs_diff_eq!(b.t0, 7.0 * a.t0, epsilon = 1e-9);
    }

    #[test]
    fn quantiles_golden() {
        assert_abs_diff_eq!(normal_quantile(0.5).unwrap(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(normal_quantile(0.95).unwrap(), 1.6448536269514722, epsilon = 1e-7);
        assert_abs_diff_eq!(normal_quantile(0.05).unwrap(), -1.6448536269514722, epsilon = 1e-7);
        assert_abs_diff_eq!(normal_quantile(0.975).unwrap(), 1.959963984540054, epsilon = 1e-7);
        assert_abs_diff_eq!(normal_quantile(0.001).unwrap(), -3.090232306167813, epsilon = 1e-6);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(detect_spikes(&[1.0, 2.0], &DetectionConfig::new(-0.5)).is_err());
        let mut cfg = DetectionConfig::new(0.5);
        cfg.lower_q = 0.9;
        cfg.upper_q = 0.1;
        assert!(detect_spikes(&[1.0, 2.0], &cfg).is_err());
        let mut cfg = DetectionConfig::new(0.5);
        cfg.regime = VectorRegime::Diagonal;
        assert!(detect_spikes(&[1.0, 2.0], &cfg).is_err(), "diagonal regime without moment");
        cfg.fourth_moment = Some(1.0);
        assert!(detect_spikes(&[1.0, 2.0], &cfg).is_ok());
    }

    #[test]
    fn short_input_rejected() {
        assert!(detect_spikes(&[1.0], &DetectionConfig::new(0.5)).is_err());
        assert!(detect_spikes(&[1.0, f64::NAN], &DetectionConfig::new(0.5)).is_err());
    }

    #[test]
    fn unsorted_input_is_sorted_internally() {
        let mut eigs = synthetic_eigs(0.5, 200, &[4.0]);
        eigs.reverse();
        let report = detect_spikes(&eigs, &DetectionConfig::new(0.5)).unwrap();
        assert_eq!(report.m_hat, 1);
        assert_eq!(report.groups[0].ranks, vec![1]);
    }

    #[test]
    fn empirical_transforms() {
        let eigs = [2.0, 1.0, 0.5];
        let lam = 4.0;
        assert_abs_diff_eq!(
            empirical_m(&eigs, lam),
            (1.0 / -2.0 + 1.0 / -3.0 + 1.0 / -3.5) / 3.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            empirical_m2(&eigs, lam),
            (0.25 + 1.0 / 9.0 + 1.0 / 12.25) / 3.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(underline_from_m(-0.3, 0.5, 4.0), -0.5 / 4.0 - 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(underline2_from_m2(0.1, 0.5, 4.0), 0.5 / 16.0 + 0.05, epsilon = 1e-15);
    }
}
