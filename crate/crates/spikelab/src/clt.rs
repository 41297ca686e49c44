//! Limiting-law parameters for normalized spiked eigenvalues.
//!
//! For a distant spike α with multiplicity m, the normalized sample
//! eigenvalues γ_j = √n (l_j / φ_n(α) − 1) converge jointly: κ_s · (γ_j)
//! follows the ordered eigenvalues of an m×m symmetric Gaussian block with
//! independent entries, Var(diag) = 2θ + β_x ν and Var(off) = θ. For m = 1
//! this is a plain N(0, σ²) with σ² = (2θ + β_x ν)/κ_s².

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::Eigh;
use rand::Rng;
use rand_distr::{Distribution as RandDistribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BulkMeasure, PopulationModel, SpikeGroup};
use crate::spectral::{phi, phi_prime, StieltjesContext};

/// Eigenvector profile of the spike directions, which decides whether the
/// fourth cumulant of the data entries enters the limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VectorRegime {
    /// Energy of each spike eigenvector spreads out (Σ_t u_t⁴ → 0); the
    /// fourth-cumulant term vanishes and only θ survives.
    Delocalized,
    /// Spike eigenvectors are standard basis vectors (Σ_t u_t⁴ = 1).
    Diagonal,
}

impl std::str::FromStr for VectorRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "delocalized" | "deloc" => Ok(VectorRegime::Delocalized),
            "diagonal" | "diag" => Ok(VectorRegime::Diagonal),
            other => Err(Error::InvalidParameter(format!(
                "unknown regime '{other}' (expected delocalized or diagonal)"
            ))),
        }
    }
}

impl std::fmt::Display for VectorRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VectorRegime::Delocalized => "delocalized",
            VectorRegime::Diagonal => "diagonal",
        })
    }
}

/// β_x = (Σ_t u_t⁴) · E|x|⁴ − 3.
pub fn beta_x(u_fourth_sum: f64, fourth_moment: f64) -> f64 {
    u_fourth_sum * fourth_moment - 3.0
}

/// m̃(λ) = −(1/λ) ∫ t/(1 + t m̲(λ)) dH(t).
pub fn m_tilde(lambda: f64, m_under: f64, bulk: &BulkMeasure) -> f64 {
    -bulk.atoms().iter().map(|&(t, w)| w * t / (1.0 + t * m_under)).sum::<f64>() / lambda
}

/// All limit-law ingredients for one spike group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltParams {
    pub alpha: f64,
    pub multiplicity: usize,
    pub c: f64,
    /// Centering value φ(α).
    pub phi: f64,
    pub m_under: f64,
    pub m_under2: f64,
    pub m_tilde: f64,
    /// Scale factor in front of γ.
    pub kappa_s: f64,
    pub theta: f64,
    /// α² / (φ(1 + c m̃(φ)))²; identically 1 at a distant spike.
    pub nu: f64,
    pub beta_x: f64,
    pub regime: VectorRegime,
    /// Variance of a diagonal entry of the limiting block (scale of κ_s γ).
    pub var_diag: f64,
    /// Variance of an off-diagonal entry.
    pub var_off: f64,
    /// Limit variance of γ itself for a simple spike: var_diag / κ_s².
    pub sigma2: f64,
}

impl CltParams {
    /// Evaluate the limit parameters for a distant spike. `fourth_moment` is
    /// E|x|⁴ of the standardized data entries (3 for Gaussian, 1 for
    /// Rademacher); it only enters in the `Diagonal` regime.
    pub fn compute(
        alpha: f64,
        multiplicity: usize,
        c: f64,
        bulk: &BulkMeasure,
        regime: VectorRegime,
        fourth_moment: f64,
    ) -> Result<Self> {
        if multiplicity == 0 {
            return Err(Error::InvalidParameter("multiplicity must be >= 1".into()));
        }
        if !fourth_moment.is_finite() || fourth_moment < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "fourth moment {fourth_moment} must be finite and >= 1"
            )));
        }
        let d = phi_prime(alpha, c, bulk)?;
        if d <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "alpha = {alpha} is not a distant spike (phi'(alpha) = {d} <= 0)"
            )));
        }
        let lam = phi(alpha, c, bulk)?;
        let ctx = StieltjesContext::new(c, bulk.clone())?;
        if c > 0.0 {
            let inner = ctx
                .support_edges()
                .iter()
                .any(|&(lo, hi)| lam > lo + 1e-8 * (1.0 + lo.abs()) && lam < hi - 1e-8 * (1.0 + hi.abs()));
            if inner {
                return Err(Error::InsideSupport { lambda: lam });
            }
        }
        let m_under = ctx.m_underline(lam)?;
        let m_under2 = ctx.m_underline2(lam)?;
        let mt = if c == 0.0 { -1.0 / lam } else { m_tilde(lam, m_under, bulk) };
        let kappa_s = 1.0 + lam * alpha * m_under2 + alpha * m_under;
        let theta = alpha * alpha * m_under2;
        let denom = lam * (1.0 + c * mt);
        let nu = alpha * alpha / (denom * denom);
        let bx = match regime {
            VectorRegime::Delocalized => 0.0,
            VectorRegime::Diagonal => beta_x(1.0, fourth_moment),
        };
        let (var_diag, var_off) = block_variances(theta, nu, bx);
        Ok(Self {
            alpha,
            multiplicity,
            c,
            phi: lam,
            m_under,
            m_under2,
            m_tilde: mt,
            kappa_s,
            theta,
            nu,
            beta_x: bx,
            regime,
            var_diag,
            var_off,
            sigma2: var_diag / (kappa_s * kappa_s),
        })
    }

    /// Draw the limiting m×m symmetric block (entries at the κ_s γ scale).
    pub fn sample_limit_block<R: Rng>(&self, rng: &mut R) -> Array2<f64> {
        let m = self.multiplicity;
        let mut b = Array2::zeros((m, m));
        for i in 0..m {
            for j in i..m {
                let z: f64 = StandardNormal.sample(rng);
                let v = z * if i == j { self.var_diag.sqrt() } else { self.var_off.sqrt() };
                b[(i, j)] = v;
                b[(j, i)] = v;
            }
        }
        b
    }

    /// Draw the limiting γ vector for the group: ordered eigenvalues of the
    /// block divided by κ_s, descending.
    pub fn sample_limit_gamma<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let b = self.sample_limit_block(rng);
        if self.multiplicity == 1 {
            return vec![b[(0, 0)] / self.kappa_s];
        }
        let (vals, _) = b.eigh(ndarray_linalg::UPLO::Lower).expect("symmetric block");
        vals.iter().rev().map(|v| v / self.kappa_s).collect()
    }
}

/// (Var(diag), Var(off)) of the limiting block.
pub fn block_variances(theta: f64, nu: f64, beta_x: f64) -> (f64, f64) {
    (2.0 * theta + beta_x * nu, theta)
}

/// γ_kj = √n (l_j / φ_n(α_k) − 1) for the ranks of one spike group, from the
/// descending sample eigenvalues.
pub fn gamma_from_eigs(eigs: &[f64], group: &SpikeGroup, n: usize, bulk: &BulkMeasure) -> Result<Vec<f64>> {
    let p = eigs.len();
    if n == 0 || p == 0 {
        return Err(Error::InvalidDimension(format!("p = {p}, n = {n} must be positive")));
    }
    let center = phi(group.alpha, p as f64 / n as f64, bulk)?;
    let root_n = (n as f64).sqrt();
    group
        .indices
        .iter()
        .map(|&j| {
            if j == 0 || j > p {
                return Err(Error::InvalidDimension(format!("rank {j} outside 1..={p}")));
            }
            Ok(root_n * (eigs[j - 1] / center - 1.0))
        })
        .collect()
}

/// Finite-n matrix statistic Ω_M(λ) whose limit is the Gaussian block:
///
/// ```text
/// Ω(λ) = √n [ (1/n) tr(λI − C)⁻¹ · D₁
///             − (1/n) D₁^{1/2} U₁* X (λI − C)⁻¹ X* U₁ D₁^{1/2} ]
/// ```
///
/// with C = (1/n) X* U₂ D₂ U₂* X. Evaluation goes through the companion
/// matrix B = (1/n) D₂^{1/2} U₂* X X* U₂ D₂^{1/2}, which shares its nonzero
/// spectrum with C, so no n×n solve is needed.
pub fn omega_statistic(model: &PopulationModel, x: &Array2<f64>, lambda: f64) -> Result<Array2<f64>> {
    let p = model.p();
    let m = model.m();
    if x.nrows() != p {
        return Err(Error::InvalidDimension(format!("X has {} rows, model has p = {p}", x.nrows())));
    }
    let n = x.ncols();
    if n == 0 || m == 0 {
        return Err(Error::InvalidDimension("need n >= 1 and at least one spike".into()));
    }
    let nf = n as f64;

    // W = D₂^{1/2} U₂* X
    let mut w = model.u2.t().dot(x);
    for (mut row, &d) in w.axis_iter_mut(Axis(0)).zip(model.d2.iter()) {
        let s = d.sqrt();
        row.mapv_inplace(|v| v * s);
    }
    let b = w.dot(&w.t()) / nf;
    let (bvals, bvecs) = b
        .eigh(ndarray_linalg::UPLO::Lower)
        .map_err(|e| Error::Eigen(format!("companion block: {e}")))?;

    let scale = lambda.abs().max(1.0);
    let mut dist = lambda.abs();
    for &l in bvals.iter() {
        dist = dist.min((lambda - l).abs());
    }
    if dist < 1e-9 * scale {
        return Err(Error::SingularResolvent { lambda, dist });
    }

    let q = p - m;
    let trace = (nf - q as f64) / lambda + bvals.iter().map(|&l| 1.0 / (lambda - l)).sum::<f64>();

    let u1t_x = model.u1.t().dot(x); // M×n
    let s1 = u1t_x.dot(&u1t_x.t()); // U₁* X X* U₁
    let g = w.dot(&u1t_x.t()) / nf.sqrt(); // (p−M)×M
    // (λI − B)⁻¹ G via the eigenbasis of B
    let mut gt = bvecs.t().dot(&g);
    for (mut row, &l) in gt.axis_iter_mut(Axis(0)).zip(bvals.iter()) {
        let r = 1.0 / (lambda - l);
        row.mapv_inplace(|v| v * r);
    }
    let quad = g.t().dot(&bvecs.dot(&gt));
    let term = (s1 + quad) / lambda;

    let root_d1: Array1<f64> = model.d1.mapv(f64::sqrt);
    let mut omega = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let mut v = -root_d1[i] * root_d1[j] * term[(i, j)];
            if i == j {
                v += trace * model.d1[i];
            }
            omega[(i, j)] = v / nf.sqrt();
        }
    }
    Ok(omega)
}
