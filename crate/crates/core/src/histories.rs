//! Coarse-grained histories and the decoherence functional.
//!
//! A history is a string of spectral-bin projectors at increasing times.
//! Branch vectors `|Psi_alpha> = P_{a_n} U(t_n - t_{n-1}) ... P_{a_1} U(t_1) |Psi>`
//! give `D(alpha, alpha') = <Psi_alpha'|Psi_alpha>`; the overall `U(-t_n)` of
//! the Heisenberg picture cancels in every inner product.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::densities::DensityObservable;
use crate::dynamics::Evolver;
use crate::error::{Error, Result};
use crate::lattice::{inner, ManyBodyState, C64};
use crate::operator::ManyBodyOperator;

/// Minimum distance between an eigenvalue and any bin edge.
pub const EDGE_TOL: f64 = 1e-9;

/// Default ceiling on the decoherence measure for assigning probabilities.
pub const DEFAULT_DECOHERENCE_THRESHOLD: f64 = 0.1;

const DIAGONAL_FLOOR: f64 = 1e-12;
const EIGEN_CLUSTER_TOL: f64 = 1e-9;

/// Projector onto the eigenvectors of one spectral bin.
#[derive(Debug, Clone)]
pub enum Projector {
    /// Position-basis mask, for observables diagonal in configurations.
    Diagonal(Vec<bool>),
    /// Orthonormal columns spanning the bin.
    Dense(DMatrix<C64>),
}

impl Projector {
    pub fn rank(&self) -> usize {
        match self {
            Projector::Diagonal(mask) => mask.iter().filter(|&&b| b).count(),
            Projector::Dense(q) => q.ncols(),
        }
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        match self {
            Projector::Diagonal(mask) => v
                .iter()
                .zip(mask)
                .map(|(&z, &keep)| if keep { z } else { C64::new(0.0, 0.0) })
                .collect(),
            Projector::Dense(q) => {
                if q.ncols() == 0 {
                    return vec![C64::new(0.0, 0.0); v.len()];
                }
                let x = DVector::from_column_slice(v);
                (q * q.ad_mul(&x)).iter().copied().collect()
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        match self {
            Projector::Diagonal(mask) => DMatrix::from_diagonal(&DVector::from_iterator(
                mask.len(),
                mask.iter()
                    .map(|&b| C64::new(if b { 1.0 } else { 0.0 }, 0.0)),
            )),
            Projector::Dense(q) => q * q.adjoint(),
        }
    }
}

/// Complete family of orthogonal projectors, one per bin `[e_i, e_{i+1})`.
#[derive(Debug, Clone)]
pub struct ProjectorFamily {
    edges: Vec<f64>,
    projectors: Vec<Projector>,
    dim: usize,
}

impl ProjectorFamily {
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn projectors(&self) -> &[Projector] {
        &self.projectors
    }

    pub fn len(&self) -> usize {
        self.projectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Smallest gap between consecutive edges.
    pub fn bin_width(&self) -> f64 {
        self.edges
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.projectors.iter().map(Projector::rank).collect()
    }
}

fn validate_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::InvalidBins("need at least two edges".into()));
    }
    if edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidBins("edges must be finite".into()));
    }
    if edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidBins(
            "edges must be strictly increasing".into(),
        ));
    }
    Ok(())
}

fn bin_of(value: f64, edges: &[f64]) -> Result<usize> {
    if let Some(&edge) = edges.iter().find(|&&e| (value - e).abs() <= EDGE_TOL) {
        return Err(Error::EigenvalueOnEdge {
            eigenvalue: value,
            edge,
            tolerance: EDGE_TOL,
        });
    }
    let last = edges.len() - 1;
    if value < edges[0] || value >= edges[last] {
        return Err(Error::InvalidBins(format!(
            "eigenvalue {value} outside [{}, {})",
            edges[0], edges[last]
        )));
    }
    Ok(edges.partition_point(|&e| e <= value) - 1)
}

/// Projectors onto the eigenspaces of `obs` falling in each bin.
pub fn bin_projectors(obs: &DensityObservable, edges: &[f64]) -> Result<ProjectorFamily> {
    bin_projectors_for(obs.operator(), edges)
}

pub fn bin_projectors_for(op: &ManyBodyOperator, edges: &[f64]) -> Result<ProjectorFamily> {
    validate_edges(edges)?;
    let nbins = edges.len() - 1;
    let dim = op.dim();
    if let Some(values) = op.diagonal_values() {
        let mut masks = vec![vec![false; dim]; nbins];
        for (idx, &v) in values.iter().enumerate() {
            masks[bin_of(v, edges)?][idx] = true;
        }
        return Ok(ProjectorFamily {
            edges: edges.to_vec(),
            projectors: masks.into_iter().map(Projector::Diagonal).collect(),
            dim,
        });
    }
    let eig = SymmetricEigen::new(op.to_dense());
    let mut columns: Vec<Vec<usize>> = vec![Vec::new(); nbins];
    for (n, &e) in eig.eigenvalues.iter().enumerate() {
        columns[bin_of(e, edges)?].push(n);
    }
    let projectors = columns
        .into_iter()
        .map(|cols| Projector::Dense(eig.eigenvectors.select_columns(&cols)))
        .collect();
    Ok(ProjectorFamily {
        edges: edges.to_vec(),
        projectors,
        dim,
    })
}

/// Distinct eigenvalues of `op`, clustered within `1e-9`.
pub fn distinct_eigenvalues(op: &ManyBodyOperator) -> Vec<f64> {
    let mut values: Vec<f64> = match op.diagonal_values() {
        Some(v) => v,
        None => SymmetricEigen::new(op.to_dense())
            .eigenvalues
            .iter()
            .copied()
            .collect(),
    };
    values.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::new();
    for v in values {
        if out.last().is_none_or(|&l| v - l > EIGEN_CLUSTER_TOL) {
            out.push(v);
        }
    }
    out
}

/// Regular edges `offset + k * width` from `offset` until past `max`.
pub fn regular_edges(offset: f64, width: f64, max: f64) -> Result<Vec<f64>> {
    if !(width > 0.0 && width.is_finite() && offset.is_finite()) {
        return Err(Error::InvalidBins(format!(
            "bin width {width} and offset {offset} must be finite, width positive"
        )));
    }
    let mut edges = vec![offset];
    let mut k = 1.0;
    while *edges.last().unwrap() <= max {
        edges.push(offset + k * width);
        k += 1.0;
        if edges.len() > 1_000_000 {
            return Err(Error::InvalidBins("too many bins".into()));
        }
    }
    Ok(edges)
}

/// Projector families at strictly increasing times.
#[derive(Debug, Clone)]
pub struct HistorySpec {
    times: Vec<f64>,
    families: Vec<ProjectorFamily>,
}

impl HistorySpec {
    pub fn new(times: Vec<f64>, families: Vec<ProjectorFamily>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidHistory("need at least one time".into()));
        }
        if times.len() != families.len() {
            return Err(Error::InvalidHistory(format!(
                "{} times but {} projector families",
                times.len(),
                families.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidHistory(
                "times must be finite and strictly increasing".into(),
            ));
        }
        let dim = families[0].dim();
        if families.iter().any(|f| f.dim() != dim) {
            return Err(Error::InvalidHistory(
                "projector families act on different spaces".into(),
            ));
        }
        Ok(Self { times, families })
    }

    /// The same family at every time.
    pub fn repeated(times: Vec<f64>, family: ProjectorFamily) -> Result<Self> {
        let families = vec![family; times.len()];
        Self::new(times, families)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn families(&self) -> &[ProjectorFamily] {
        &self.families
    }

    pub fn dim(&self) -> usize {
        self.families[0].dim()
    }

    /// Every alternative string in lexicographic order.
    pub fn alternatives(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for family in &self.families {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..family.len()).map(move |a| {
                        let mut p = prefix.clone();
                        p.push(a);
                        p
                    })
                })
                .collect();
        }
        out
    }
}

pub fn alternative_label(alpha: &[usize]) -> String {
    alpha
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(".")
}

/// `D(alpha, alpha')` over all alternative strings.
#[derive(Debug, Clone)]
pub struct DecoherenceMatrix {
    alternatives: Vec<Vec<usize>>,
    values: DMatrix<C64>,
}

impl DecoherenceMatrix {
    pub fn from_parts(alternatives: Vec<Vec<usize>>, values: DMatrix<C64>) -> Result<Self> {
        if values.nrows() != alternatives.len() || values.ncols() != alternatives.len() {
            return Err(Error::DimensionMismatch {
                expected: alternatives.len(),
                actual: values.nrows(),
            });
        }
        Ok(Self {
            alternatives,
            values,
        })
    }

    pub fn alternatives(&self) -> &[Vec<usize>] {
        &self.alternatives
    }

    pub fn values(&self) -> &DMatrix<C64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.alternatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alternatives.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.values[(i, j)]
    }

    pub fn hermiticity_defect(&self) -> f64 {
        crate::operator::hermiticity_defect(&self.values)
    }

    pub fn min_diagonal(&self) -> f64 {
        (0..self.len())
            .map(|i| self.values[(i, i)].re)
            .fold(f64::INFINITY, f64::min)
    }

    /// `sum_{alpha, alpha'} D(alpha, alpha')`.
    pub fn total(&self) -> C64 {
        self.values.iter().sum()
    }

    pub fn max_off_diagonal(&self) -> f64 {
        self.off_diagonal().fold(0.0, f64::max)
    }

    pub fn off_diagonal_sum(&self) -> f64 {
        self.off_diagonal().sum()
    }

    fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.len();
        (0..n).flat_map(move |i| {
            (0..n)
                .filter(move |&j| j != i)
                .map(move |j| self.values[(i, j)].norm())
        })
    }

    /// `|D(a,b)| / sqrt(D(a,a) D(b,b))`, or `None` for a negligible diagonal.
    pub fn pair_measure(&self, i: usize, j: usize) -> Option<f64> {
        let (da, db) = (self.values[(i, i)].re, self.values[(j, j)].re);
        if da < DIAGONAL_FLOOR || db < DIAGONAL_FLOOR {
            return None;
        }
        Some(self.values[(i, j)].norm() / (da * db).sqrt())
    }

    /// Rows `alpha, alpha_prime, re_D, im_D, epsilon`; epsilon is 0 for
    /// pairs skipped by the diagonal floor.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,alpha_prime,re_D,im_D,epsilon\n");
        for (i, a) in self.alternatives.iter().enumerate() {
            for (j, b) in self.alternatives.iter().enumerate() {
                let d = self.values[(i, j)];
                let eps = self.pair_measure(i, j).unwrap_or(0.0);
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    alternative_label(a),
                    alternative_label(b),
                    fmt_num(d.re),
                    fmt_num(d.im),
                    fmt_num(eps)
                );
            }
        }
        out
    }
}

/// Twelve significant digits, scientific notation.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        // Avoid "-0" flapping between runs of equal value.
        return format!("{:.11e}", 0.0);
    }
    format!("{x:.11e}")
}

/// Branch vectors `C_alpha |Psi>` in the order of [`HistorySpec::alternatives`].
pub fn branch_vectors(
    initial: &ManyBodyState,
    spec: &HistorySpec,
    evolver: &Evolver,
) -> Result<Vec<Vec<C64>>> {
    if initial.dim() != spec.dim() || evolver.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            actual: initial.dim(),
        });
    }
    let zero = |v: &[C64]| v.iter().all(|z| *z == C64::new(0.0, 0.0));
    let mut branches = vec![initial.amplitudes().to_vec()];
    let mut previous = 0.0;
    for (family, &t) in spec.families.iter().zip(&spec.times) {
        let dt = t - previous;
        previous = t;
        let next: Result<Vec<Vec<Vec<C64>>>> = branches
            .par_iter()
            .map(|v| {
                if zero(v) {
                    return Ok(vec![vec![C64::new(0.0, 0.0); v.len()]; family.len()]);
                }
                let evolved = evolver.propagate(v, dt)?;
                Ok(family
                    .projectors
                    .iter()
                    .map(|p| {
                        if p.rank() == 0 {
                            vec![C64::new(0.0, 0.0); v.len()]
                        } else {
                            p.apply(&evolved)
                        }
                    })
                    .collect())
            })
            .collect();
        branches = next?.into_iter().flatten().collect();
    }
    Ok(branches)
}

pub fn decoherence_functional(
    initial: &ManyBodyState,
    spec: &HistorySpec,
    evolver: &Evolver,
) -> Result<DecoherenceMatrix> {
    let branches = branch_vectors(initial, spec, evolver)?;
    let n = branches.len();
    let rows: Vec<Vec<C64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| inner(&branches[j], &branches[i])).collect())
        .collect();
    let values = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    DecoherenceMatrix::from_parts(spec.alternatives(), values)
}

/// Largest normalized off-diagonal magnitude; 0 for a single history.
pub fn decoherence_measure(d: &DecoherenceMatrix) -> f64 {
    let n = d.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                if let Some(e) = d.pair_measure(i, j) {
                    worst = worst.max(e);
                }
            }
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct ProbabilityTable {
    pub alternatives: Vec<Vec<usize>>,
    pub probabilities: Vec<f64>,
    pub measure: f64,
    pub threshold: f64,
    /// Set when the measure exceeds the threshold; probabilities are then
    /// not additive and are reported for inspection only.
    pub warning: bool,
}

impl ProbabilityTable {
    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum()
    }
}

pub fn history_probabilities(d: &DecoherenceMatrix, threshold: f64) -> Result<ProbabilityTable> {
    let mut probabilities = Vec::with_capacity(d.len());
    for (i, alpha) in d.alternatives.iter().enumerate() {
        let p = d.values[(i, i)].re;
        if p < -DIAGONAL_FLOOR {
            return Err(Error::NegativeProbability {
                history: alternative_label(alpha),
                value: p,
            });
        }
        probabilities.push(p.max(0.0));
    }
    let measure = decoherence_measure(d);
    Ok(ProbabilityTable {
        alternatives: d.alternatives.clone(),
        probabilities,
        measure,
        threshold,
        warning: measure > threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{DensitySpec, Window};
    use crate::dynamics::{build_hamiltonian, HamiltonianSpec};
    use crate::lattice::{
        build_lattice, product_state, superpose_equal, Lattice, OneParticleState,
    };

    fn number(l: &Lattice, n: usize, start: usize, len: usize) -> DensityObservable {
        DensitySpec::Number(Window::new(l, start, len).unwrap())
            .build(l, n, None)
            .unwrap()
    }

    fn half_integer_edges(n: usize) -> Vec<f64> {
        (0..=n + 1).map(|k| k as f64 - 0.5).collect()
    }

    #[test]
    fn single_bin_is_identity() {
        let l = build_lattice(4, 1.0).unwrap();
        let obs = number(&l, 2, 0, 2);
        let fam = bin_projectors(&obs, &[-1.0, 5.0]).unwrap();
        assert_eq!(fam.ranks(), vec![16]);
        let p = fam.projectors()[0].to_dense();
        assert_eq!(p, DMatrix::identity(16, 16));
    }

    #[test]
    fn occupancy_bins_ranks() {
        let l = build_lattice(4, 1.0).unwrap();
        let obs = number(&l, 2, 0, 2);
        let fam = bin_projectors(&obs, &half_integer_edges(2)).unwrap();
        // Oracle: eigendecomposition counts per occupancy.
        let eig = SymmetricEigen::new(obs.dense().clone());
        let mut counts = [0usize; 3];
        for e in eig.eigenvalues.iter() {
            counts[e.round() as usize] += 1;
        }
        assert_eq!(fam.ranks(), counts.to_vec());
        assert_eq!(fam.ranks().iter().sum::<usize>(), 16);
        assert_eq!(fam.bin_width(), 1.0);
    }

    #[test]
    fn dense_route_projectors_are_complete_and_idempotent() {
        let l = build_lattice(4, 1.0).unwrap();
        let g = DensitySpec::Momentum(Window::new(&l, 0, 2).unwrap())
            .build(&l, 2, None)
            .unwrap();
        let spectrum = distinct_eigenvalues(g.operator());
        let lo = spectrum[0] - 0.25;
        let hi = spectrum[spectrum.len() - 1] + 0.25;
        let mid = 0.5 * (lo + hi) + 0.0123;
        let fam = bin_projectors(&g, &[lo, mid, hi]).unwrap();
        let ps: Vec<DMatrix<C64>> = fam.projectors().iter().map(Projector::to_dense).collect();
        let sum = ps.iter().fold(DMatrix::zeros(16, 16), |a, p| a + p);
        assert!(crate::operator::max_abs(&(sum - DMatrix::identity(16, 16))) < 1e-10);
        for (i, p) in ps.iter().enumerate() {
            assert!(crate::operator::max_abs(&(p * p - p)) < 1e-10);
            for q in &ps[i + 1..] {
                assert!(crate::operator::max_abs(&(p * q)) < 1e-10);
            }
        }
    }

    #[test]
    fn uncovered_spectrum_and_edge_hits_rejected() {
        let l = build_lattice(4, 1.0).unwrap();
        let obs = number(&l, 2, 0, 2);
        assert!(matches!(
            bin_projectors(&obs, &[-0.5, 0.5, 1.5]),
            Err(Error::InvalidBins(_))
        ));
        assert!(matches!(
            bin_projectors(&obs, &[-0.5, 1.0, 2.5]),
            Err(Error::EigenvalueOnEdge { .. })
        ));
        assert!(bin_projectors(&obs, &[0.5, 0.2, 2.5]).is_err());
    }

    fn setup(n: usize, m: usize) -> (Lattice, Evolver) {
        let l = build_lattice(m, 1.0).unwrap();
        let h = build_hamiltonian(&HamiltonianSpec::free(), &l, n).unwrap();
        (l, Evolver::new(&h))
    }

    #[test]
    fn one_bin_history_is_trivial() {
        let (l, ev) = setup(2, 4);
        let obs = number(&l, 2, 0, 2);
        let fam = bin_projectors(&obs, &[-1.0, 3.0]).unwrap();
        let spec = HistorySpec::new(vec![0.7], vec![fam]).unwrap();
        let psi = OneParticleState::gaussian_packet(l, 1.0, 1.0, 0.5).unwrap();
        let d = decoherence_functional(&product_state(&psi, 2).unwrap(), &spec, &ev).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d.get(0, 0) - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert_eq!(decoherence_measure(&d), 0.0);
    }

    #[test]
    fn one_time_histories_never_interfere() {
        let (l, ev) = setup(1, 4);
        let obs = number(&l, 1, 0, 2);
        let fam = bin_projectors(&obs, &[-0.5, 0.5, 1.5]).unwrap();
        let spec = HistorySpec::new(vec![0.3], vec![fam]).unwrap();
        let psi = OneParticleState::gaussian_packet(l, 1.5, 1.0, 0.0).unwrap();
        let d = decoherence_functional(&product_state(&psi, 1).unwrap(), &spec, &ev).unwrap();
        assert_eq!(d.max_off_diagonal(), 0.0);
    }

    #[test]
    fn rank_one_final_bin_gives_maximal_interference() {
        // At t1 the particle straddles both halves; at t2 the final bin
        // "particle on site 0" is one-dimensional, so both branches end up
        // parallel and the normalized measure saturates.
        let (l, ev) = setup(1, 4);
        let half = bin_projectors(&number(&l, 1, 0, 2), &[-0.5, 0.5, 1.5]).unwrap();
        let site = bin_projectors(&number(&l, 1, 0, 1), &[-0.5, 0.5, 1.5]).unwrap();
        assert_eq!(site.ranks(), vec![3, 1]);
        let spec = HistorySpec::new(vec![0.4, 1.1], vec![half, site]).unwrap();
        let psi = OneParticleState::gaussian_packet(l, 1.5, 0.9, 0.2).unwrap();
        let d = decoherence_functional(&product_state(&psi, 1).unwrap(), &spec, &ev).unwrap();
        // (0,1) vs (1,1): indices 1 and 3.
        let eps = d.pair_measure(1, 3).unwrap();
        assert!((eps - 1.0).abs() < 1e-9, "{eps}");
        assert!((decoherence_measure(&d) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn conserved_bins_decohere_exactly() {
        let l = build_lattice(5, 1.0).unwrap();
        let spec = HamiltonianSpec {
            detached_sites: vec![0],
            ..HamiltonianSpec::free()
        };
        let h = build_hamiltonian(&spec, &l, 2).unwrap();
        let ev = Evolver::new(&h);
        let physical = number(&l, 2, 1, 4);
        assert_eq!(
            crate::dynamics::conservation_defect(&physical, &h).unwrap(),
            0.0
        );
        let fam = bin_projectors(&physical, &half_integer_edges(2)).unwrap();
        let hist = HistorySpec::repeated(vec![0.5, 1.3], fam).unwrap();
        let mut amps = vec![C64::new(0.0, 0.0); 5];
        for (j, a) in amps.iter_mut().enumerate().skip(1) {
            *a = C64::new(1.0 + j as f64, 0.3 * j as f64);
        }
        let a = product_state(&OneParticleState::from_amplitudes(l, amps).unwrap(), 2).unwrap();
        let b = product_state(&OneParticleState::site(l, 0).unwrap(), 2).unwrap();
        let psi = superpose_equal(&a, &b).unwrap();
        let d = decoherence_functional(&psi.state, &hist, &ev).unwrap();
        assert!(d.max_off_diagonal() <= 1e-10);
        assert!(decoherence_measure(&d) <= 1e-10);
        let p = history_probabilities(&d, DEFAULT_DECOHERENCE_THRESHOLD).unwrap();
        assert!(!p.warning);
        // Occupancy 2 for |a>, occupancy 0 for |b>, at both times.
        let idx = |a1: usize, a2: usize| a1 * 3 + a2;
        assert!((p.probabilities[idx(2, 2)] - 0.5).abs() < 1e-12);
        assert!((p.probabilities[idx(0, 0)] - 0.5).abs() < 1e-12);
        assert!((p.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn diagonal_probabilities() {
        let d = DecoherenceMatrix::from_parts(
            vec![vec![0], vec![1]],
            DMatrix::from_diagonal(&DVector::from_vec(vec![
                C64::new(0.5, 0.0),
                C64::new(0.5, 0.0),
            ])),
        )
        .unwrap();
        let p = history_probabilities(&d, 0.1).unwrap();
        assert_eq!(p.probabilities, vec![0.5, 0.5]);
        assert_eq!(decoherence_measure(&d), 0.0);
    }

    #[test]
    fn negative_diagonal_rejected() {
        let d = DecoherenceMatrix::from_parts(
            vec![vec![0], vec![1]],
            DMatrix::from_diagonal(&DVector::from_vec(vec![
                C64::new(1.0 + 1e-6, 0.0),
                C64::new(-1e-6, 0.0),
            ])),
        )
        .unwrap();
        assert!(matches!(
            history_probabilities(&d, 0.1),
            Err(Error::NegativeProbability { .. })
        ));
    }

    #[test]
    fn interfering_histories_raise_warning() {
        let (l, ev) = setup(1, 6);
        let fam = bin_projectors(&number(&l, 1, 0, 3), &[-0.5, 0.5, 1.5]).unwrap();
        let spec = HistorySpec::repeated(vec![0.5, 1.5], fam).unwrap();
        let psi = OneParticleState::gaussian_packet(l, 2.5, 0.8, 0.0).unwrap();
        let d = decoherence_functional(&product_state(&psi, 1).unwrap(), &spec, &ev).unwrap();
        let p = history_probabilities(&d, 0.1).unwrap();
        assert!(p.warning);
        assert!((p.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn csv_layout() {
        let d = DecoherenceMatrix::from_parts(
            vec![vec![0, 1], vec![1, 1]],
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    C64::new(0.75, 0.0),
                    C64::new(0.1, -0.2),
                    C64::new(0.1, 0.2),
                    C64::new(0.25, 0.0),
                ],
            ),
        )
        .unwrap();
        let csv = d.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "alpha,alpha_prime,re_D,im_D,epsilon");
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("0.1,1.1,1.00000000000e-1,-2.00000000000e-1,"));
    }

    #[test]
    fn history_spec_validation() {
        let l = build_lattice(4, 1.0).unwrap();
        let fam = bin_projectors(&number(&l, 1, 0, 2), &[-0.5, 0.5, 1.5]).unwrap();
        assert!(HistorySpec::new(vec![], vec![]).is_err());
        assert!(HistorySpec::repeated(vec![1.0, 1.0], fam.clone()).is_err());
        assert!(HistorySpec::new(vec![1.0], vec![fam.clone(), fam]).is_err());
    }

    #[test]
    fn regular_edges_cover() {
        let e = regular_edges(-0.6, 0.75, 3.0).unwrap();
        assert_eq!(e.len(), 6);
        assert!(*e.last().unwrap() > 3.0);
        assert!(regular_edges(0.0, 0.0, 1.0).is_err());
    }
}
