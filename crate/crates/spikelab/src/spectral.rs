//! Phase functions and Stieltjes transforms of the limiting spectral law.
//!
//! Everything here is driven by the map
//!
//! ```text
//! φ(α) = α · (1 + c Σ_i w_i t_i / (α − t_i))
//! ```
//!
//! defined away from the bulk atoms t_i. Values of φ on its increasing
//! branches sweep out the complement of the limiting support, the critical
//! values of φ are the support edges, and the inverse of φ restricted to the
//! increasing branches encodes the companion Stieltjes transform via
//! m̲(φ(α)) = −1/α. A spike α with φ′(α) > 0 produces a sample eigenvalue
//! near φ(α); otherwise the eigenvalue is pinned to the nearest support edge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BulkMeasure;

const ATOM_MARGIN: f64 = 1e-12;

fn validate_c(c: f64) -> Result<()> {
    if !c.is_finite() || c < 0.0 {
        return Err(Error::InvalidParameter(format!("aspect ratio c = {c} must be finite and >= 0")));
    }
    Ok(())
}

fn check_not_atom(alpha: f64, bulk: &BulkMeasure) -> Result<()> {
    let (atom, dist) = bulk.nearest_atom(alpha);
    if dist <= ATOM_MARGIN * alpha.abs().max(atom) {
        return Err(Error::Singularity { alpha, atom });
    }
    Ok(())
}

/// φ(α) = α (1 + c ∫ t/(α−t) dH(t)).
pub fn phi(alpha: f64, c: f64, bulk: &BulkMeasure) -> Result<f64> {
    validate_c(c)?;
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} must be finite")));
    }
    check_not_atom(alpha, bulk)?;
    let s: f64 = bulk.atoms().iter().map(|&(t, w)| w * t / (alpha - t)).sum();
    Ok(alpha * (1.0 + c * s))
}

/// Finite-sample version φ_n: same map evaluated at c_n = p/n.
pub fn phi_n(alpha: f64, p: usize, n: usize, bulk: &BulkMeasure) -> Result<f64> {
    if p == 0 || n == 0 {
        return Err(Error::InvalidDimension(format!("p = {p}, n = {n} must be positive")));
    }
    phi(alpha, p as f64 / n as f64, bulk)
}

/// φ′(α) = 1 − c ∫ t²/(α−t)² dH(t).
pub fn phi_prime(alpha: f64, c: f64, bulk: &BulkMeasure) -> Result<f64> {
    validate_c(c)?;
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} must be finite")));
    }
    check_not_atom(alpha, bulk)?;
    Ok(1.0 - g_sum(alpha, c, bulk))
}

/// c ∫ t²/(α−t)² dH(t); φ′ = 1 − g.
fn g_sum(alpha: f64, c: f64, bulk: &BulkMeasure) -> f64 {
    c * bulk
        .atoms()
        .iter()
        .map(|&(t, w)| {
            let d = alpha - t;
            w * t * t / (d * d)
        })
        .sum::<f64>()
}

/// dg/dα, strictly increasing on every pole-free interval.
fn g_prime(alpha: f64, c: f64, bulk: &BulkMeasure) -> f64 {
    -2.0 * c
        * bulk
            .atoms()
            .iter()
            .map(|&(t, w)| {
                let d = alpha - t;
                w * t * t / (d * d * d)
            })
            .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpikeRegime {
    /// φ′(α) > 0: the spiked eigenvalue separates from the bulk at φ(α).
    Distant,
    /// Sub-critical spike pinned to a right support edge.
    RightThreshold,
    /// Sub-critical spike pinned to a left support edge.
    LeftThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTransition {
    pub regime: SpikeRegime,
    /// Almost-sure limit of the associated sample eigenvalues.
    pub rho: f64,
    pub phi_prime: f64,
}

/// Almost-sure limit ρ(α) of the sample eigenvalues tied to spike α.
pub fn rho(alpha: f64, c: f64, bulk: &BulkMeasure) -> Result<PhaseTransition> {
    let d = phi_prime(alpha, c, bulk)?;
    if d > 0.0 {
        return Ok(PhaseTransition { regime: SpikeRegime::Distant, rho: phi(alpha, c, bulk)?, phi_prime: d });
    }
    let ctx = StieltjesContext::new(c, bulk.clone())?;
    let below: Option<f64> = bulk.atoms().iter().map(|&(t, _)| t).filter(|&t| t < alpha).fold(None, |a, t| Some(a.map_or(t, |m: f64| m.max(t))));
    let above: Option<f64> = bulk.atoms().iter().map(|&(t, _)| t).filter(|&t| t > alpha).fold(None, |a, t| Some(a.map_or(t, |m: f64| m.min(t))));
    match (below, above) {
        (Some(_), None) => {
            // above every atom: pinned to the global right edge
            Ok(PhaseTransition { regime: SpikeRegime::RightThreshold, rho: ctx.top_value, phi_prime: d })
        }
        (None, Some(_)) => Ok(PhaseTransition { regime: SpikeRegime::LeftThreshold, rho: ctx.bottom_value, phi_prime: d }),
        (Some(lo), Some(hi)) => {
            let idx = ctx.interval_index(lo, hi);
            match &ctx.gaps[idx] {
                Some(gap) if alpha <= gap.a_minus => {
                    Ok(PhaseTransition { regime: SpikeRegime::RightThreshold, rho: gap.v_minus, phi_prime: d })
                }
                Some(gap) if alpha >= gap.a_plus => {
                    Ok(PhaseTransition { regime: SpikeRegime::LeftThreshold, rho: gap.v_plus, phi_prime: d })
                }
                _ => Err(Error::InvalidParameter(format!(
                    "alpha = {alpha} has no adjacent spectral gap; its eigenvalue merges into the bulk"
                ))),
            }
        }
        (None, None) => unreachable!("bulk measure has at least one atom"),
    }
}

/// Gap branch inside a bounded pole-free interval: φ increases from the local
/// minimum (a_minus, v_minus) to the local maximum (a_plus, v_plus).
#[derive(Debug, Clone, Copy)]
struct GapBranch {
    a_minus: f64,
    a_plus: f64,
    v_minus: f64,
    v_plus: f64,
}

/// Precomputed branch catalog of φ for one (c, H) pair. Supports support-edge
/// queries and evaluation of the companion Stieltjes transform m̲ and its
/// derivative at real points outside the support.
#[derive(Debug, Clone)]
pub struct StieltjesContext {
    c: f64,
    bulk: BulkMeasure,
    /// Critical point below the lowest atom (local max of φ) and its value.
    bottom_crit: f64,
    bottom_value: f64,
    /// Critical point above the highest atom (local min of φ) and its value.
    top_crit: f64,
    top_value: f64,
    /// One entry per bounded pole-free interval, in ascending atom order.
    gaps: Vec<Option<GapBranch>>,
    edges: Vec<(f64, f64)>,
}

impl StieltjesContext {
    pub fn new(c: f64, bulk: BulkMeasure) -> Result<Self> {
        validate_c(c)?;
        if c == 0.0 {
            return Ok(Self {
                c,
                bulk,
                bottom_crit: 0.0,
                bottom_value: 0.0,
                top_crit: 0.0,
                top_value: 0.0,
                gaps: Vec::new(),
                edges: vec![(0.0, 0.0)],
            });
        }
        let atoms: Vec<f64> = bulk.atoms().iter().map(|&(t, _)| t).collect();
        let t_min = atoms[0];
        let t_max = atoms[atoms.len() - 1];

        // critical point below t_min: g increases from 0 to ∞ on (−∞, t_min)
        let hi = approach_pole(t_min, -1.0, |a| g_sum(a, c, &bulk) > 1.0)?;
        let mut lo = t_min - t_min.abs().max(1.0);
        while g_sum(lo, c, &bulk) >= 1.0 {
            lo = t_min - 2.0 * (t_min - lo);
        }
        let bottom_crit = bisect(|a| g_sum(a, c, &bulk) - 1.0, lo, hi);
        let bottom_value = phi(bottom_crit, c, &bulk)?;

        // critical point above t_max: g decreases from ∞ to 0 on (t_max, ∞)
        let lo = approach_pole(t_max, 1.0, |a| g_sum(a, c, &bulk) > 1.0)?;
        let mut hi = t_max + t_max.abs().max(1.0);
        while g_sum(hi, c, &bulk) >= 1.0 {
            hi = t_max + 2.0 * (hi - t_max);
        }
        let top_crit = bisect(|a| 1.0 - g_sum(a, c, &bulk), lo, hi);
        let top_value = phi(top_crit, c, &bulk)?;

        // bounded intervals: g is convex with poles at both ends, so a gap
        // opens exactly when its minimum dips below 1
        let mut gaps = Vec::with_capacity(atoms.len().saturating_sub(1));
        for pair in atoms.windows(2) {
            let (tl, tr) = (pair[0], pair[1]);
            let lo = approach_pole(tl, 1.0, |a| a < tr && g_prime(a, c, &bulk) < 0.0)?;
            let hi = approach_pole(tr, -1.0, |a| a > tl && g_prime(a, c, &bulk) > 0.0)?;
            let argmin = bisect(|a| g_prime(a, c, &bulk), lo, hi);
            if g_sum(argmin, c, &bulk) >= 1.0 {
                gaps.push(None);
                continue;
            }
            // the g > 1 region near a pole of the *other* atom also satisfies
            // the predicate, so keep the probes on this side of the minimum
            let pl = approach_pole(tl, 1.0, |a| a < argmin && g_sum(a, c, &bulk) > 1.0)?;
            let a_minus = bisect(|a| 1.0 - g_sum(a, c, &bulk), pl, argmin);
            let pr = approach_pole(tr, -1.0, |a| a > argmin && g_sum(a, c, &bulk) > 1.0)?;
            let a_plus = bisect(|a| g_sum(a, c, &bulk) - 1.0, argmin, pr);
            gaps.push(Some(GapBranch {
                a_minus,
                a_plus,
                v_minus: phi(a_minus, c, &bulk)?,
                v_plus: phi(a_plus, c, &bulk)?,
            }));
        }

        let mut edges = Vec::new();
        let mut left = bottom_value;
        for gap in gaps.iter().flatten() {
            edges.push((left, gap.v_minus));
            left = gap.v_plus;
        }
        edges.push((left, top_value));

        Ok(Self { c, bulk, bottom_crit, bottom_value, top_crit, top_value, gaps, edges })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn bulk(&self) -> &BulkMeasure {
        &self.bulk
    }

    /// Closed intervals of the limiting support, ascending. (For c = 0 the
    /// companion law collapses to a point mass at the origin.)
    pub fn support_edges(&self) -> &[(f64, f64)] {
        &self.edges
    }

    fn interval_index(&self, lo: f64, hi: f64) -> usize {
        self.bulk
            .atoms()
            .windows(2)
            .position(|pair| pair[0].0 == lo && pair[1].0 == hi)
            .expect("adjacent atoms delimit a catalogued interval")
    }

    /// True when λ lies within `margin` of the support.
    pub fn in_support(&self, lambda: f64, margin: f64) -> bool {
        self.edges.iter().any(|&(lo, hi)| lambda >= lo - margin && lambda <= hi + margin)
    }

    /// Preimage of λ under φ restricted to the increasing branches.
    pub fn alpha_from_lambda(&self, lambda: f64) -> Result<f64> {
        if !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda = {lambda} must be finite")));
        }
        if self.c == 0.0 {
            if lambda == 0.0 {
                return Err(Error::InsideSupport { lambda });
            }
            return Ok(lambda);
        }
        let c = self.c;
        let bulk = &self.bulk;
        // φ(0) = 0 for every bulk, so for c <= 1 (bottom critical point at or
        // right of zero) inverting λ = 0 lands on α = 0, the pole of m̲: that
        // is the companion law's atom at zero, mass 1 − c.
        if lambda == 0.0 && self.bottom_crit >= 0.0 {
            return Err(Error::InsideSupport { lambda });
        }
        let f = |a: f64| phi(a, c, bulk).expect("pole-free on an increasing branch");
        if lambda <= self.bottom_value {
            let mut lo = self.bottom_crit - self.bottom_crit.abs().max(1.0);
            while f(lo) > lambda {
                lo = self.bottom_crit - 2.0 * (self.bottom_crit - lo);
            }
            return finish_alpha(lambda, bisect(|a| f(a) - lambda, lo, self.bottom_crit));
        }
        if lambda >= self.top_value {
            let mut hi = self.top_crit + self.top_crit.abs().max(1.0);
            while f(hi) < lambda {
                hi = self.top_crit + 2.0 * (hi - self.top_crit);
            }
            return finish_alpha(lambda, bisect(|a| f(a) - lambda, self.top_crit, hi));
        }
        for gap in self.gaps.iter().flatten() {
            if lambda >= gap.v_minus && lambda <= gap.v_plus {
                return finish_alpha(lambda, bisect(|a| f(a) - lambda, gap.a_minus, gap.a_plus));
            }
        }
        Err(Error::InsideSupport { lambda })
    }

    /// Companion Stieltjes transform m̲(λ) = −1/α where φ(α) = λ on an
    /// increasing branch. Defined for real λ outside the support.
    pub fn m_underline(&self, lambda: f64) -> Result<f64> {
        if self.c == 0.0 {
            if lambda == 0.0 {
                return Err(Error::InsideSupport { lambda });
            }
            return Ok(-1.0 / lambda);
        }
        Ok(-1.0 / self.alpha_from_lambda(lambda)?)
    }

    /// m̲₂(λ) = m̲′(λ) = 1 / (1/m̲² − c ∫ t²/(1 + t m̲)² dH(t)).
    pub fn m_underline2(&self, lambda: f64) -> Result<f64> {
        let m = self.m_underline(lambda)?;
        if self.c == 0.0 {
            return Ok(m * m);
        }
        let s: f64 = self
            .bulk
            .atoms()
            .iter()
            .map(|&(t, w)| {
                let d = 1.0 + t * m;
                w * t * t / (d * d)
            })
            .sum();
        let denom = 1.0 / (m * m) - self.c * s;
        if denom <= 0.0 {
            return Err(Error::InsideSupport { lambda });
        }
        Ok(1.0 / denom)
    }
}

fn finish_alpha(lambda: f64, alpha: f64) -> Result<f64> {
    if alpha.abs() < 1e-300 {
        return Err(Error::InsideSupport { lambda });
    }
    Ok(alpha)
}

/// Step toward the pole at `t` (direction ±1) until `ok` holds; the predicate
/// always fires close enough to a pole.
fn approach_pole(t: f64, dir: f64, ok: impl Fn(f64) -> bool) -> Result<f64> {
    let mut d = 0.5 * t.abs().max(1.0);
    for _ in 0..400 {
        let a = t + dir * d;
        if a != t && ok(a) {
            return Ok(a);
        }
        d *= 0.5;
    }
    Err(Error::RootFinding(format!("could not bracket a critical point near atom t = {t}")))
}

/// Bisection for f with f(lo) < 0 < f(hi) (f increasing); runs to fixed-point
/// saturation of the midpoint.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Convenience wrapper: m̲(λ) for a one-off query.
pub fn m_underline(lambda: f64, c: f64, bulk: &BulkMeasure) -> Result<f64> {
    StieltjesContext::new(c, bulk.clone())?.m_underline(lambda)
}

/// Convenience wrapper: m̲₂(λ) = m̲′(λ) for a one-off query.
pub fn m_underline2(lambda: f64, c: f64, bulk: &BulkMeasure) -> Result<f64> {
    StieltjesContext::new(c, bulk.clone())?.m_underline2(lambda)
}

/// Support intervals of the limiting sample spectral law.
pub fn support_edges(c: f64, bulk: &BulkMeasure) -> Result<Vec<(f64, f64)>> {
    Ok(StieltjesContext::new(c, bulk.clone())?.support_edges().to_vec())
}
