//! Monte Carlo verification of the limiting laws and of the detector.
//!
//! Replications are parallelized with a deterministic per-replication RNG
//! (`base_seed ⊕ rep`), so results do not depend on thread scheduling.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clt::gamma_from_eigs;
use crate::error::{Error, Result};
use crate::estimate::{detect_spikes, CandidateStatus, DetectionConfig, SpikeReport};
use crate::model::PopulationModel;
use crate::sampler::{draw_matrix, eigvals_desc, rep_rng, sample_cov, truncate_center_rescale, Distribution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub reps: usize,
    pub dist: Distribution,
    pub seed: u64,
    /// Truncate-and-standardize entries at η√n before forming S.
    pub truncate: bool,
    /// Truncation level η; `None` means n^{-1/6}.
    pub eta: Option<f64>,
}

impl ExperimentConfig {
    pub fn new(n: usize, reps: usize, dist: Distribution, seed: u64) -> Self {
        Self { n, reps, dist, seed, truncate: false, eta: None }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidDimension(format!("n = {} must be >= 2", self.n)));
        }
        if self.reps == 0 {
            return Err(Error::InvalidParameter("reps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin edges, length = counts.len() + 1.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins with the Freedman–Diaconis width 2·IQR·k^{-1/3}.
    pub fn freedman_diaconis(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self { edges: vec![0.0, 0.0], counts: vec![0] };
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        if lo == hi {
            return Self { edges: vec![lo, hi], counts: vec![samples.len() as u64] };
        }
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        let k = samples.len() as f64;
        let mut width = 2.0 * iqr / k.cbrt();
        if width <= 0.0 {
            width = (hi - lo) / k.sqrt().ceil();
        }
        let bins = (((hi - lo) / width).ceil() as usize).clamp(1, 512);
        let step = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * step).collect();
        let mut counts = vec![0u64; bins];
        for &x in samples {
            let idx = (((x - lo) / step) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        Self { edges, counts }
    }
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < n {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[n - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSummary {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Standard error of the mean.
    pub se_mean: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Histogram,
}

impl EmpiricalSummary {
    pub fn from_samples(samples: &[f64]) -> Self {
        let count = samples.len();
        if count == 0 {
            return Self {
                count,
                mean: f64::NAN,
                variance: f64::NAN,
                se_mean: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
                histogram: Histogram::freedman_diaconis(samples),
            };
        }
        let k = count as f64;
        let mean = samples.iter().sum::<f64>() / k;
        let ss = samples.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>();
        let variance = if count > 1 { ss / (k - 1.0) } else { 0.0 };
        Self {
            count,
            mean,
            variance,
            se_mean: (variance / k).sqrt(),
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            histogram: Histogram::freedman_diaconis(samples),
        }
    }
}

/// Per-spike-group output of a CLT experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRun {
    pub alpha: f64,
    pub multiplicity: usize,
    pub ranks: Vec<usize>,
    /// γ vectors, one row per completed replication (descending rank order).
    pub gammas: Vec<Vec<f64>>,
    /// One summary per rank, same order as `ranks`.
    pub summaries: Vec<EmpiricalSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltRun {
    pub p: usize,
    pub n: usize,
    pub c: f64,
    pub dist: Distribution,
    pub seed: u64,
    pub reps_requested: usize,
    pub reps_completed: usize,
    pub failures: usize,
    pub groups: Vec<GroupRun>,
}

impl CltRun {
    /// CSV with one row per replication and one `gamma_r<rank>` column per
    /// spiked rank.
    pub fn gamma_csv(&self) -> String {
        let mut header = vec!["rep".to_string()];
        for g in &self.groups {
            for &r in &g.ranks {
                header.push(format!("gamma_r{r}"));
            }
        }
        let mut out = header.join(",");
        out.push('\n');
        for rep in 0..self.reps_completed {
            let mut row = vec![rep.to_string()];
            for g in &self.groups {
                for gamma in &g.gammas[rep] {
                    row.push(format!("{gamma:.17e}"));
                }
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn run_reps<T: Send>(reps: usize, work: impl Fn(u64) -> Result<T> + Sync) -> Result<(Vec<T>, usize)> {
    let outcomes: Vec<Result<T>> = (0..reps as u64).into_par_iter().map(&work).collect();
    let total = outcomes.len();
    let mut ok = Vec::with_capacity(total);
    let mut failed = 0usize;
    for o in outcomes {
        match o {
            Ok(v) => ok.push(v),
            Err(_) => failed += 1,
        }
    }
    if failed > total / 100 {
        return Err(Error::TooManyFailures { failed, total });
    }
    Ok((ok, failed))
}

/// Draw `reps` sample covariance spectra and collect the normalized spiked
/// eigenvalues γ for every group of the model.
pub fn run_clt_experiment(model: &PopulationModel, cfg: &ExperimentConfig) -> Result<CltRun> {
    cfg.validate()?;
    let p = model.p();
    if model.m() == 0 {
        return Err(Error::InvalidParameter("model has no spikes to track".into()));
    }
    let bulk = &model.spec.bulk;
    let (rows, failures) = run_reps(cfg.reps, |rep| {
        let mut rng = rep_rng(cfg.seed, rep);
        let mut x = draw_matrix(p, cfg.n, cfg.dist, &mut rng);
        if cfg.truncate {
            truncate_center_rescale(&mut x, cfg.eta)?;
        }
        let eigs = eigvals_desc(&sample_cov(model, &x)?)?;
        model
            .spike_groups()
            .iter()
            .map(|g| gamma_from_eigs(&eigs, g, cfg.n, bulk))
            .collect::<Result<Vec<Vec<f64>>>>()
    })?;

    let completed = rows.len();
    let groups = model
        .spike_groups()
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            let gammas: Vec<Vec<f64>> = rows.iter().map(|r| r[gi].clone()).collect();
            let summaries = (0..g.multiplicity)
                .map(|j| {
                    let series: Vec<f64> = gammas.iter().map(|row| row[j]).collect();
                    EmpiricalSummary::from_samples(&series)
                })
                .collect();
            GroupRun {
                alpha: g.alpha,
                multiplicity: g.multiplicity,
                ranks: g.indices.clone(),
                gammas,
                summaries,
            }
        })
        .collect();

    Ok(CltRun {
        p,
        n: cfg.n,
        c: p as f64 / cfg.n as f64,
        dist: cfg.dist,
        seed: cfg.seed,
        reps_requested: cfg.reps,
        reps_completed: completed,
        failures,
        groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionGroupStat {
    pub alpha: f64,
    pub multiplicity: usize,
    pub ranks: Vec<usize>,
    /// Mean α̂ over all replications where a member rank was accepted;
    /// `None` when the group was never recovered.
    pub mean_alpha_hat: Option<f64>,
    /// Fraction of (replication, rank) pairs recovered.
    pub detection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRun {
    pub reps: usize,
    pub failures: usize,
    pub m_true: usize,
    /// P(M̂₀ = M).
    pub count_exact_rate: f64,
    /// P(accepted rank set = true rank set).
    pub location_exact_rate: f64,
    pub m_hat_counts: BTreeMap<usize, usize>,
    pub groups: Vec<DetectionGroupStat>,
}

/// Repeatedly sample a model's spectrum and run the spike detector on it.
pub fn run_detection_experiment(
    model: &PopulationModel,
    cfg: &ExperimentConfig,
    det: &DetectionConfig,
) -> Result<DetectionRun> {
    cfg.validate()?;
    let p = model.p();
    let expected: Vec<usize> = model.spike_groups().iter().flat_map(|g| g.indices.iter().copied()).collect();
    let (reports, failures) = run_reps(cfg.reps, |rep| -> Result<SpikeReport> {
        let mut rng = rep_rng(cfg.seed, rep);
        let mut x = draw_matrix(p, cfg.n, cfg.dist, &mut rng);
        if cfg.truncate {
            truncate_center_rescale(&mut x, cfg.eta)?;
        }
        let eigs = eigvals_desc(&sample_cov(model, &x)?)?;
        detect_spikes(&eigs, det)
    })?;

    let reps_done = reports.len();
    let mut m_hat_counts = BTreeMap::new();
    let mut count_exact = 0usize;
    let mut location_exact = 0usize;
    for r in &reports {
        *m_hat_counts.entry(r.m_hat).or_insert(0usize) += 1;
        if r.m_hat == expected.len() {
            count_exact += 1;
        }
        let accepted: Vec<usize> = r
            .candidates
            .iter()
            .filter(|cand| cand.status == CandidateStatus::Accepted)
            .map(|cand| cand.rank)
            .collect();
        if accepted == expected {
            location_exact += 1;
        }
    }

    let groups = model
        .spike_groups()
        .iter()
        .map(|g| {
            let mut sum = 0.0;
            let mut hits = 0usize;
            for r in &reports {
                for cand in &r.candidates {
                    if cand.status == CandidateStatus::Accepted && g.indices.contains(&cand.rank) {
                        if let Some(a) = cand.alpha_hat {
                            sum += a;
                            hits += 1;
                        }
                    }
                }
            }
            DetectionGroupStat {
                alpha: g.alpha,
                multiplicity: g.multiplicity,
                ranks: g.indices.clone(),
                mean_alpha_hat: if hits > 0 { Some(sum / hits as f64) } else { None },
                detection_rate: if reps_done > 0 {
                    hits as f64 / (reps_done * g.multiplicity) as f64
                } else {
                    0.0
                },
            }
        })
        .collect();

    let denom = reps_done.max(1) as f64;
    Ok(DetectionRun {
        reps: reps_done,
        failures,
        m_true: expected.len(),
        count_exact_rate: count_exact as f64 / denom,
        location_exact_rate: location_exact as f64 / denom,
        m_hat_counts,
        groups,
    })
}

/// Two-sample Kolmogorov–Smirnov distance sup|F_a − F_b|.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter("KS distance needs nonempty samples".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let x = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Large-sample two-sided KS critical value at the given level:
/// √(−ln(level/2)/2) · √((m+n)/(m·n)).
pub fn ks_critical(level: f64, m: usize, n: usize) -> Result<f64> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level {level} outside (0,1)")));
    }
    if m == 0 || n == 0 {
        return Err(Error::InvalidParameter("KS critical value needs m, n >= 1".into()));
    }
    let coef = (-(level / 2.0).ln() / 2.0).sqrt();
    Ok(coef * ((m + n) as f64 / (m * n) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub distance: f64,
    pub critical: f64,
    pub level: f64,
    /// True when the two samples are distinguishable at `level`.
    pub reject: bool,
}

/// KS comparison of two samples of normalized spiked eigenvalues.
pub fn universality_check(a: &[f64], b: &[f64], level: f64) -> Result<KsReport> {
    let distance = ks_distance(a, b)?;
    let critical = ks_critical(level, a.len(), b.len())?;
    Ok(KsReport { distance, critical, level, reject: distance > critical })
}

/// KS verdicts for one spike group, one report per spiked rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupKs {
    pub alpha: f64,
    pub ranks: Vec<usize>,
    pub reports: Vec<KsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalityRun {
    pub level: f64,
    pub groups: Vec<GroupKs>,
    pub run_a: CltRun,
    pub run_b: CltRun,
}

/// Run the same CLT experiment under two entry distributions and compare the
/// γ samples group by group. The two configs must agree on n and reps.
pub fn run_universality(
    model: &PopulationModel,
    cfg_a: &ExperimentConfig,
    cfg_b: &ExperimentConfig,
    level: f64,
) -> Result<UniversalityRun> {
    if cfg_a.n != cfg_b.n || cfg_a.reps != cfg_b.reps {
        return Err(Error::Config(format!(
            "universality runs must share n and reps (got n = {}/{}, reps = {}/{})",
            cfg_a.n, cfg_b.n, cfg_a.reps, cfg_b.reps
        )));
    }
    let run_a = run_clt_experiment(model, cfg_a)?;
    let run_b = run_clt_experiment(model, cfg_b)?;
    let groups = run_a
        .groups
        .iter()
        .zip(run_b.groups.iter())
        .map(|(ga, gb)| {
            let reports = (0..ga.multiplicity)
                .map(|j| {
                    let xs: Vec<f64> = ga.gammas.iter().map(|row| row[j]).collect();
                    let ys: Vec<f64> = gb.gammas.iter().map(|row| row[j]).collect();
                    universality_check(&xs, &ys, level)
                })
                .collect::<Result<Vec<KsReport>>>()?;
            Ok(GroupKs { alpha: ga.alpha, ranks: ga.ranks.clone(), reports })
        })
        .collect::<Result<Vec<GroupKs>>>()?;
    Ok(UniversalityRun { level, groups, run_a, run_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_case1;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ks_hand_oracle() {
        let a = [1.0, 2.0, 3.0];
        let b = [1.5, 2.5, 3.5];
        assert_abs_diff_eq!(ks_distance(&a, &b).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ks_distance(&a, &a).unwrap(), 0.0, epsilon = 1e-12);
        let c = [10.0, 11.0];
        assert_abs_diff_eq!(ks_distance(&a, &c).unwrap(), 1.0, epsilon = 1e-12);
        assert!(ks_distance(&a, &[]).is_err());
    }

    #[test]
    fn ks_critical_factor() {
        let crit = ks_critical(0.01, 1000, 1000).unwrap();
        assert_abs_diff_eq!(crit, 1.6276 * (2.0f64 / 1000.0).sqrt(), epsilon = 2e-4);
        let crit300 = ks_critical(0.01, 300, 300).unwrap();
        assert_abs_diff_eq!(crit300, 0.1329, epsilon = 5e-4);
    }

    #[test]
    fn histogram_covers_all_samples() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let h = Histogram::freedman_diaconis(&xs);
        assert_eq!(h.counts.iter().sum::<u64>(), 1000);
        assert_eq!(h.edges.len(), h.counts.len() + 1);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
        let constant = vec![2.5; 10];
        let hc = Histogram::freedman_diaconis(&constant);
        assert_eq!(hc.counts, vec![10]);
    }

    #[test]
    fn summary_moments() {
        let s = EmpiricalSummary::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(s.mean, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.variance, 5.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.se_mean, (5.0 / 12.0f64).sqrt(), epsilon = 1e-15);
        assert_eq!(s.min, 1.0);
        assert_eq!(s.max, 4.0);
    }

    #[test]
    fn clt_experiment_shapes_and_determinism() {
        let model = build_case1(30).unwrap();
        let cfg = ExperimentConfig::new(60, 8, Distribution::Gaussian, 17);
        let run = run_clt_experiment(&model, &cfg).unwrap();
        assert_eq!(run.reps_completed, 8);
        assert_eq!(run.failures, 0);
        assert_eq!(run.groups.len(), 4);
        assert_eq!(run.groups[0].gammas.len(), 8);
        assert_eq!(run.groups[0].gammas[0].len(), 1);
        assert_eq!(run.groups[1].gammas[0].len(), 2);
        assert_eq!(run.groups[1].summaries.len(), 2);

        let again = run_clt_experiment(&model, &cfg).unwrap();
        assert_eq!(run, again);
        let other = run_clt_experiment(&model, &ExperimentConfig::new(60, 8, Distribution::Gaussian, 18)).unwrap();
        assert_ne!(run.groups[0].gammas, other.groups[0].gammas);
    }

    #[test]
    fn gamma_csv_layout() {
        let model = build_case1(20).unwrap();
        let cfg = ExperimentConfig::new(40, 3, Distribution::Rademacher, 5);
        let run = run_clt_experiment(&model, &cfg).unwrap();
        let csv = run.gamma_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert_eq!(header, "rep,gamma_r1,gamma_r2,gamma_r3,gamma_r18,gamma_r19,gamma_r20");
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn detection_experiment_rates() {
        let model = build_case1(60).unwrap();
        let cfg = ExperimentConfig::new(300, 6, Distribution::Gaussian, 11);
        let det = DetectionConfig::new(0.2);
        let run = run_detection_experiment(&model, &cfg, &det).unwrap();
        assert_eq!(run.reps, 6);
        assert_eq!(run.m_true, 6);
        assert!(run.count_exact_rate >= 0.0 && run.count_exact_rate <= 1.0);
        assert!(run.location_exact_rate <= run.count_exact_rate + 1e-12);
        assert_eq!(run.m_hat_counts.values().sum::<usize>(), 6);
        assert_eq!(run.groups.len(), 4);
    }

    #[test]
    fn truncated_heavy_tail_runs() {
        let model = build_case1(24).unwrap();
        let mut cfg = ExperimentConfig::new(48, 4, Distribution::HeavyTail, 23);
        cfg.truncate = true;
        let run = run_clt_experiment(&model, &cfg).unwrap();
        assert_eq!(run.reps_completed, 4);
    }

    #[test]
    fn universality_report() {
        let a: Vec<f64> = (0..400).map(|i| (i as f64 * 0.11).sin()).collect();
        let r = universality_check(&a, &a, 0.01).unwrap();
        assert!(!r.reject);
        assert_eq!(r.distance, 0.0);
    }

    #[test]
    fn universality_same_config_is_exactly_zero() {
        let model = build_case1(24).unwrap();
        let cfg = ExperimentConfig::new(48, 5, Distribution::Gaussian, 31);
        let run = run_universality(&model, &cfg, &cfg, 0.01).unwrap();
        for g in &run.groups {
            for r in &g.reports {
                assert_eq!(r.distance, 0.0);
                assert!(!r.reject);
            }
        }
        let mismatched = ExperimentConfig::new(50, 5, Distribution::Gaussian, 31);
        assert!(matches!(
            run_universality(&model, &cfg, &mismatched, 0.01),
            Err(Error::Config(_))
        ));
    }
}
