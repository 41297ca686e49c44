//! Spiked population covariance models.
//!
//! A model is a population covariance Σ = T_p T_p* whose spectrum splits into a
//! bulk (a discrete probability measure H on the positive axis) and a small set
//! of spike groups (α_k, multiplicity m_k) occupying fixed ranks of the
//! descending eigenvalue list. Two concrete designs used throughout the
//! simulations are provided: a diagonal Σ (`build_case1`) and a rotated Σ
//! sharing the same spectrum but with delocalized eigenvectors (`build_case2`).

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::Eigh;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete bulk spectral measure: finitely many atoms (t_i, w_i) with
/// t_i > 0 and Σ w_i = 1. Atoms are kept sorted ascending by location.
#[derive(Debug, Clone, PartialEq)]
pub struct BulkMeasure {
    atoms: Vec<(f64, f64)>,
}

impl BulkMeasure {
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidParameter("bulk measure needs at least one atom".into()));
        }
        for &(t, w) in &atoms {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::InvalidParameter(format!("bulk atom location {t} must be > 0")));
            }
            if !w.is_finite() || w <= 0.0 || w > 1.0 {
                return Err(Error::InvalidParameter(format!("bulk atom mass {w} must be in (0,1]")));
            }
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        // merge exact duplicates so atom locations are strictly increasing
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (t, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == t => last.1 += w,
                _ => merged.push((t, w)),
            }
        }
        let total: f64 = merged.iter().map(|&(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("bulk masses sum to {total}, expected 1")));
        }
        Ok(Self { atoms: merged })
    }

    /// The measure δ_t: all mass at a single location.
    pub fn point_mass(t: f64) -> Result<Self> {
        Self::new(vec![(t, 1.0)])
    }

    /// Empirical measure of a list of values (equal values share one atom).
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let w = 1.0 / values.len() as f64;
        Self::new(values.iter().map(|&t| (t, w)).collect())
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn min_atom(&self) -> f64 {
        self.atoms[0].0
    }

    pub fn max_atom(&self) -> f64 {
        self.atoms[self.atoms.len() - 1].0
    }

    /// First moment ∫ t dH(t).
    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(t, w)| t * w).sum()
    }

    /// Distance from x to the nearest atom, and that atom's location.
    pub fn nearest_atom(&self, x: f64) -> (f64, f64) {
        let mut best = (self.atoms[0].0, (x - self.atoms[0].0).abs());
        for &(t, _) in &self.atoms {
            let d = (x - t).abs();
            if d < best.1 {
                best = (t, d);
            }
        }
        best
    }
}

/// One group of equal spikes α_k with multiplicity m_k at 1-based ranks J_k
/// of the descending population spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeGroup {
    pub alpha: f64,
    pub multiplicity: usize,
    /// Contiguous 1-based ranks occupied by this group.
    pub indices: Vec<usize>,
}

impl SpikeGroup {
    fn validate(&self, p: usize) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::InvalidParameter(format!("spike alpha {} must be > 0", self.alpha)));
        }
        if self.multiplicity == 0 || self.indices.len() != self.multiplicity {
            return Err(Error::InvalidParameter(format!(
                "spike group alpha={} declares multiplicity {} but {} indices",
                self.alpha,
                self.multiplicity,
                self.indices.len()
            )));
        }
        for (i, &j) in self.indices.iter().enumerate() {
            if j == 0 || j > p {
                return Err(Error::InvalidParameter(format!("spike rank {j} outside 1..={p}")));
            }
            if i > 0 && j != self.indices[i - 1] + 1 {
                return Err(Error::InvalidParameter(format!(
                    "spike group alpha={} has non-contiguous ranks {:?}",
                    self.alpha, self.indices
                )));
            }
        }
        Ok(())
    }
}

/// Population spectrum layout: dimension, bulk measure, spike groups, and the
/// explicit descending eigenvalue list they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSpec {
    pub p: usize,
    pub bulk: BulkMeasure,
    pub spikes: Vec<SpikeGroup>,
    /// All p population eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

impl SpectrumSpec {
    /// Total spike count M = Σ m_k.
    pub fn total_spikes(&self) -> usize {
        self.spikes.iter().map(|g| g.multiplicity).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.eigenvalues.len() != self.p {
            return Err(Error::InvalidDimension(format!(
                "{} eigenvalues for p = {}",
                self.eigenvalues.len(),
                self.p
            )));
        }
        if self.eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter("eigenvalue list is not descending".into()));
        }
        let m = self.total_spikes();
        if m >= self.p {
            return Err(Error::InvalidDimension(format!("M = {m} spikes must be < p = {}", self.p)));
        }
        for g in &self.spikes {
            g.validate(self.p)?;
            let (atom, dist) = self.bulk.nearest_atom(g.alpha);
            if dist <= 1e-12 * g.alpha.max(atom) {
                return Err(Error::Singularity { alpha: g.alpha, atom });
            }
            for &j in &g.indices {
                if (self.eigenvalues[j - 1] - g.alpha).abs() > 1e-12 * g.alpha {
                    return Err(Error::InvalidParameter(format!(
                        "eigenvalue at rank {j} is {} but group declares alpha = {}",
                        self.eigenvalues[j - 1],
                        g.alpha
                    )));
                }
            }
        }
        Ok(())
    }
}

/// How T_p acts on data: diagonal models keep only the scaling vector.
#[derive(Debug, Clone)]
pub enum TFactor {
    /// T_p = diag(d); d holds the square roots of the population eigenvalues
    /// in descending-eigenvalue order.
    Diagonal(Array1<f64>),
    /// Dense symmetric square root of Σ.
    Dense(Array2<f64>),
}

/// Full factorization Σ = T_p T_p* with T_p = U diag(D1, D2)^{1/2} V* and
/// V = U (symmetric root). U₁ holds the spike eigenvectors (p×M), U₂ the
/// bulk eigenvectors (p×(p−M)); D1, D2 the corresponding eigenvalues.
#[derive(Debug, Clone)]
pub struct PopulationModel {
    pub spec: SpectrumSpec,
    pub u1: Array2<f64>,
    pub u2: Array2<f64>,
    pub d1: Array1<f64>,
    pub d2: Array1<f64>,
    t: TFactor,
    kind: ModelKind,
    rho: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ModelKind {
    Case1,
    Case2,
    Custom,
}

impl PopulationModel {
    pub fn p(&self) -> usize {
        self.spec.p
    }

    /// Total spike count M.
    pub fn m(&self) -> usize {
        self.spec.total_spikes()
    }

    pub fn spike_groups(&self) -> &[SpikeGroup] {
        &self.spec.spikes
    }

    pub fn t_factor(&self) -> &TFactor {
        &self.t
    }

    /// T_p · X.
    pub fn apply_t(&self, x: &Array2<f64>) -> Array2<f64> {
        match &self.t {
            TFactor::Diagonal(d) => {
                let mut y = x.clone();
                for (mut row, &s) in y.axis_iter_mut(Axis(0)).zip(d.iter()) {
                    row.mapv_inplace(|v| v * s);
                }
                y
            }
            TFactor::Dense(t) => t.dot(x),
        }
    }

    /// Reconstruct Σ = T_p T_p*.
    pub fn sigma(&self) -> Array2<f64> {
        match &self.t {
            TFactor::Diagonal(d) => Array2::from_diag(&d.mapv(|s| s * s)),
            TFactor::Dense(t) => t.dot(&t.t()),
        }
    }
}

/// Case I: diagonal Σ with spikes (4, 3, 3) on top of a unit bulk and
/// (0.2, 0.2, 0.1) below it; K = 4 groups, M = 6.
pub fn build_case1(p: usize) -> Result<PopulationModel> {
    build_diagonal(p, ModelKind::Case1, None)
}

/// Case II: same spectrum as Case I, rotated by the eigenvector matrix U₀ of
/// the Toeplitz matrix (ρ^{|i−j|}); columns of U₀ are ordered by descending
/// Toeplitz eigenvalue.
pub fn build_case2(p: usize, rho: f64) -> Result<PopulationModel> {
    if !(0.0..1.0).contains(&rho) || rho <= 0.0 {
        return Err(Error::InvalidParameter(format!("case2 rho = {rho} must lie in (0,1)")));
    }
    let diag = build_diagonal(p, ModelKind::Case2, Some(rho))?;
    let toeplitz = Array2::from_shape_fn((p, p), |(i, j)| {
        rho.powi((i as i64 - j as i64).unsigned_abs() as i32)
    });
    let (_vals, vecs) = toeplitz
        .eigh(ndarray_linalg::UPLO::Lower)
        .map_err(|e| Error::Eigen(format!("toeplitz eigendecomposition: {e}")))?;
    // LAPACK returns ascending eigenvalues; flip columns for descending order
    let mut u0 = Array2::zeros((p, p));
    for j in 0..p {
        u0.column_mut(j).assign(&vecs.column(p - 1 - j));
    }
    let lam = &diag.spec.eigenvalues;
    // T = U₀ Λ^{1/2} U₀*
    let mut scaled = u0.clone();
    for (j, mut col) in scaled.axis_iter_mut(Axis(1)).enumerate() {
        let s = lam[j].sqrt();
        col.mapv_inplace(|v| v * s);
    }
    let t = scaled.dot(&u0.t());
    let m = diag.m();
    let mut u1 = Array2::zeros((p, m));
    let mut u2 = Array2::zeros((p, p - m));
    let spike_ranks: Vec<usize> = diag
        .spec
        .spikes
        .iter()
        .flat_map(|g| g.indices.iter().copied())
        .collect();
    let mut i1 = 0;
    let mut i2 = 0;
    for rank in 1..=p {
        if spike_ranks.contains(&rank) {
            u1.column_mut(i1).assign(&u0.column(rank - 1));
            i1 += 1;
        } else {
            u2.column_mut(i2).assign(&u0.column(rank - 1));
            i2 += 1;
        }
    }
    Ok(PopulationModel {
        spec: diag.spec,
        u1,
        u2,
        d1: diag.d1,
        d2: diag.d2,
        t: TFactor::Dense(t),
        kind: ModelKind::Case2,
        rho: Some(rho),
    })
}

/// Diagonal model with an arbitrary bulk and spike list. Ranks are derived by
/// sorting all declared eigenvalues descending (spikes placed before bulk
/// values on ties). The bulk fills p − M ranks with atom counts proportional
/// to the masses.
pub fn build_custom(p: usize, bulk: BulkMeasure, spikes: &[(f64, usize)]) -> Result<PopulationModel> {
    let m: usize = spikes.iter().map(|&(_, mult)| mult).sum();
    if p <= m {
        return Err(Error::InvalidDimension(format!("p = {p} too small for M = {m} spikes")));
    }
    let n_bulk = p - m;
    // largest-remainder apportionment of bulk ranks to atoms
    let mut counts: Vec<usize> = bulk.atoms().iter().map(|&(_, w)| (w * n_bulk as f64).floor() as usize).collect();
    let mut assigned: usize = counts.iter().sum();
    let mut rema: Vec<(f64, usize)> = bulk
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, &(_, w))| (w * n_bulk as f64 - counts[i] as f64, i))
        .collect();
    rema.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut k = 0;
    while assigned < n_bulk {
        counts[rema[k % rema.len()].1] += 1;
        assigned += 1;
        k += 1;
    }

    #[derive(Clone, Copy)]
    enum Item {
        Spike(usize), // group index
        Bulk,
    }
    let mut items: Vec<(f64, Item)> = Vec::with_capacity(p);
    for (gi, &(alpha, mult)) in spikes.iter().enumerate() {
        for _ in 0..mult {
            items.push((alpha, Item::Spike(gi)));
        }
    }
    for (i, &(t, _)) in bulk.atoms().iter().enumerate() {
        for _ in 0..counts[i] {
            items.push((t, Item::Bulk));
        }
    }
    // descending; spikes before bulk at equal value
    items.sort_by(|a, b| {
        b.0.total_cmp(&a.0).then_with(|| match (a.1, b.1) {
            (Item::Spike(_), Item::Bulk) => std::cmp::Ordering::Less,
            (Item::Bulk, Item::Spike(_)) => std::cmp::Ordering::Greater,
            _ => std::cmp::Ordering::Equal,
        })
    });

    let eigenvalues: Vec<f64> = items.iter().map(|&(v, _)| v).collect();
    let mut groups: Vec<SpikeGroup> = spikes
        .iter()
        .map(|&(alpha, mult)| SpikeGroup { alpha, multiplicity: mult, indices: Vec::with_capacity(mult) })
        .collect();
    for (rank0, &(_, item)) in items.iter().enumerate() {
        if let Item::Spike(gi) = item {
            groups[gi].indices.push(rank0 + 1);
        }
    }
    let spec = SpectrumSpec { p, bulk, spikes: groups, eigenvalues };
    assemble_diagonal(spec, ModelKind::Custom, None)
}

fn build_diagonal(p: usize, kind: ModelKind, rho: Option<f64>) -> Result<PopulationModel> {
    if p < 7 {
        return Err(Error::InvalidDimension(format!("case designs need p >= 7, got {p}")));
    }
    let mut eigenvalues = vec![4.0, 3.0, 3.0];
    eigenvalues.extend(std::iter::repeat(1.0).take(p - 6));
    eigenvalues.extend_from_slice(&[0.2, 0.2, 0.1]);
    let spikes = vec![
        SpikeGroup { alpha: 4.0, multiplicity: 1, indices: vec![1] },
        SpikeGroup { alpha: 3.0, multiplicity: 2, indices: vec![2, 3] },
        SpikeGroup { alpha: 0.2, multiplicity: 2, indices: vec![p - 2, p - 1] },
        SpikeGroup { alpha: 0.1, multiplicity: 1, indices: vec![p] },
    ];
    let spec = SpectrumSpec { p, bulk: BulkMeasure::point_mass(1.0)?, spikes, eigenvalues };
    assemble_diagonal(spec, kind, rho)
}

fn assemble_diagonal(spec: SpectrumSpec, kind: ModelKind, rho: Option<f64>) -> Result<PopulationModel> {
    spec.validate()?;
    let p = spec.p;
    let m = spec.total_spikes();
    let spike_ranks: Vec<usize> = spec.spikes.iter().flat_map(|g| g.indices.iter().copied()).collect();
    let mut u1 = Array2::zeros((p, m));
    let mut u2 = Array2::zeros((p, p - m));
    let mut d1 = Array1::zeros(m);
    let mut d2 = Array1::zeros(p - m);
    let mut i1 = 0;
    let mut i2 = 0;
    for rank in 1..=p {
        if spike_ranks.contains(&rank) {
            u1[(rank - 1, i1)] = 1.0;
            d1[i1] = spec.eigenvalues[rank - 1];
            i1 += 1;
        } else {
            u2[(rank - 1, i2)] = 1.0;
            d2[i2] = spec.eigenvalues[rank - 1];
            i2 += 1;
        }
    }
    let t = TFactor::Diagonal(Array1::from_iter(spec.eigenvalues.iter().map(|&v| v.sqrt())));
    Ok(PopulationModel { spec, u1, u2, d1, d2, t, kind, rho })
}

/// JSON document shape for model exchange.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelSpecJson {
    pub p: usize,
    pub bulk: Vec<BulkAtomJson>,
    pub spikes: Vec<SpikeJson>,
    pub case: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BulkAtomJson {
    pub t: f64,
    pub w: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpikeJson {
    pub alpha: f64,
    pub m: usize,
    pub ranks: Vec<usize>,
}

impl PopulationModel {
    pub fn to_spec_json(&self) -> ModelSpecJson {
        ModelSpecJson {
            p: self.spec.p,
            bulk: self.spec.bulk.atoms().iter().map(|&(t, w)| BulkAtomJson { t, w }).collect(),
            spikes: self
                .spec
                .spikes
                .iter()
                .map(|g| SpikeJson { alpha: g.alpha, m: g.multiplicity, ranks: g.indices.clone() })
                .collect(),
            case: match self.kind {
                ModelKind::Case1 => "case1".into(),
                ModelKind::Case2 => "case2".into(),
                ModelKind::Custom => "custom".into(),
            },
            rho: self.rho,
        }
    }

    pub fn from_spec_json(doc: &ModelSpecJson) -> Result<Self> {
        let model = match doc.case.as_str() {
            "case1" => build_case1(doc.p)?,
            "case2" => {
                let rho = doc
                    .rho
                    .ok_or_else(|| Error::InvalidParameter("case2 requires rho".into()))?;
                build_case2(doc.p, rho)?
            }
            "custom" => {
                let bulk = BulkMeasure::new(doc.bulk.iter().map(|a| (a.t, a.w)).collect())?;
                let spikes: Vec<(f64, usize)> = doc.spikes.iter().map(|s| (s.alpha, s.m)).collect();
                build_custom(doc.p, bulk, &spikes)?
            }
            other => return Err(Error::InvalidParameter(format!("unknown case '{other}'"))),
        };
        // declared ranks, if any, must agree with the derived layout
        for (declared, built) in doc.spikes.iter().zip(model.spec.spikes.iter()) {
            if !declared.ranks.is_empty() && declared.ranks != built.indices {
                return Err(Error::InvalidParameter(format!(
                    "declared ranks {:?} for alpha = {} disagree with derived ranks {:?}",
                    declared.ranks, declared.alpha, built.indices
                )));
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray_linalg::Eigh;

    fn reconstruction_gap(model: &PopulationModel) -> f64 {
        let sigma = model.sigma();
        let (vals, _) = sigma.eigh(ndarray_linalg::UPLO::Lower).unwrap();
        let mut sorted: Vec<f64> = vals.to_vec();
        sorted.reverse();
        sorted
            .iter()
            .zip(model.spec.eigenvalues.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn case1_layout() {
        let m = build_case1(200).unwrap();
        let ranks: Vec<usize> = m.spike_groups().iter().flat_map(|g| g.indices.clone()).collect();
        assert_eq!(ranks, vec![1, 2, 3, 198, 199, 200]);
        assert_eq!(m.m(), 6);
        assert_eq!(m.spec.eigenvalues[0], 4.0);
        assert_eq!(m.spec.eigenvalues[199], 0.1);
    }

    #[test]
    fn case1_p7_eigenvalues() {
        let m = build_case1(7).unwrap();
        assert_eq!(m.spec.eigenvalues, vec![4.0, 3.0, 3.0, 1.0, 0.2, 0.2, 0.1]);
    }

    #[test]
    fn case1_trace() {
        let m = build_case1(500).unwrap();
        let tr: f64 = m.spec.eigenvalues.iter().sum();
        assert!((tr - 504.5).abs() < 1e-9);
    }

    #[test]
    fn case1_too_small() {
        assert!(build_case1(6).is_err());
    }

    #[test]
    fn case2_spectrum_matches_case1() {
        for p in [7, 50, 200] {
            let m = build_case2(p, 0.5).unwrap();
            assert!(reconstruction_gap(&m) < 1e-8, "p = {p}");
        }
    }

    #[test]
    fn case1_reconstruction() {
        for p in [7, 50, 200] {
            let m = build_case1(p).unwrap();
            assert!(reconstruction_gap(&m) < 1e-8, "p = {p}");
        }
    }

    #[test]
    fn case2_rho_range() {
        assert!(build_case2(50, 0.0).is_err());
        assert!(build_case2(50, 1.0).is_err());
        assert!(build_case2(50, -0.3).is_err());
    }

    #[test]
    fn case2_positive_definite() {
        let m = build_case2(200, 0.5).unwrap();
        let sigma = m.sigma();
        let (vals, _) = sigma.eigh(ndarray_linalg::UPLO::Lower).unwrap();
        assert!((vals[0] - 0.1).abs() < 1e-8);
        let asym = (&sigma - &sigma.t()).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(asym < 1e-12);
    }

    #[test]
    fn case2_delocalized_top_eigenvector() {
        let m = build_case2(500, 0.5).unwrap();
        let max_sq = m.u1.column(0).iter().map(|v| v * v).fold(0.0, f64::max);
        assert!(max_sq < 0.05, "max |U0[t,1]|^2 = {max_sq}");
    }

    #[test]
    fn case2_assumption_d_proxy_decreases() {
        let mut prev = f64::INFINITY;
        for p in [50, 100, 200, 500] {
            let m = build_case2(p, 0.5).unwrap();
            let max_sq = m.u1.iter().map(|v| v * v).fold(0.0, f64::max);
            assert!(max_sq < prev, "p = {p}: {max_sq} !< {prev}");
            prev = max_sq;
        }
    }

    #[test]
    fn orthogonality() {
        let m = build_case2(60, 0.4).unwrap();
        let p = m.p();
        let mut u = Array2::zeros((p, p));
        for (j, col) in m.u1.axis_iter(Axis(1)).chain(m.u2.axis_iter(Axis(1))).enumerate() {
            u.column_mut(j).assign(&col);
        }
        let gram = u.t().dot(&u);
        let eye = Array2::<f64>::eye(p);
        let gap = (&gram - &eye).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(gap < 1e-10);
    }

    #[test]
    fn bulk_measure_validation() {
        assert!(BulkMeasure::new(vec![]).is_err());
        assert!(BulkMeasure::new(vec![(1.0, 0.5)]).is_err()); // mass deficit
        assert!(BulkMeasure::new(vec![(-1.0, 1.0)]).is_err());
        let b = BulkMeasure::new(vec![(2.0, 0.25), (1.0, 0.75)]).unwrap();
        assert_eq!(b.atoms(), &[(1.0, 0.75), (2.0, 0.25)]);
        let merged = BulkMeasure::new(vec![(1.0, 0.5), (1.0, 0.5)]).unwrap();
        assert_eq!(merged.atoms(), &[(1.0, 1.0)]);
    }

    #[test]
    fn from_values_groups_ties() {
        let b = BulkMeasure::from_values(&[1.0, 1.0, 1.0, 2.0]).unwrap();
        assert_eq!(b.atoms(), &[(1.0, 0.75), (2.0, 0.25)]);
    }

    #[test]
    fn spike_on_atom_rejected() {
        let bulk = BulkMeasure::point_mass(1.0).unwrap();
        assert!(build_custom(10, bulk, &[(1.0, 1)]).is_err());
    }

    #[test]
    fn custom_single_spike() {
        let bulk = BulkMeasure::point_mass(1.0).unwrap();
        let m = build_custom(10, bulk, &[(2.0, 1)]).unwrap();
        assert_eq!(m.spike_groups().len(), 1);
        assert_eq!(m.spike_groups()[0].indices, vec![1]);
        assert_eq!(m.spec.eigenvalues[0], 2.0);
        assert_eq!(m.spec.eigenvalues[1], 1.0);
    }

    #[test]
    fn custom_no_spikes() {
        let bulk = BulkMeasure::point_mass(1.0).unwrap();
        let m = build_custom(10, bulk, &[]).unwrap();
        assert!(m.spike_groups().is_empty());
        assert_eq!(m.m(), 0);
    }

    #[test]
    fn spec_json_round_trip() {
        for model in [build_case1(50).unwrap(), build_case2(50, 0.5).unwrap()] {
            let doc = model.to_spec_json();
            let text = serde_json::to_string(&doc).unwrap();
            let parsed: ModelSpecJson = serde_json::from_str(&text).unwrap();
            let rebuilt = PopulationModel::from_spec_json(&parsed).unwrap();
            assert_eq!(rebuilt.spec, model.spec);
        }
    }

    #[test]
    fn apply_t_diagonal_matches_dense() {
        let m = build_case1(12).unwrap();
        let x = Array2::from_shape_fn((12, 5), |(i, j)| ((i * 5 + j) as f64).sin());
        let y = m.apply_t(&x);
        let dense = Array2::from_diag(&Array1::from_iter(
            m.spec.eigenvalues.iter().map(|&v| v.sqrt()),
        ));
        let y2 = dense.dot(&x);
        let gap = (&y - &y2).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(gap < 1e-14);
    }
}
