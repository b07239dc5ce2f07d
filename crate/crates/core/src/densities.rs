//! Smeared local densities on the lattice and their peaking statistics.
//!
//! Number, momentum and energy densities are one-particle operators restricted
//! to a top-hat window `delta_V`. Products of non-commuting factors are
//! symmetrized, `(A delta_V + delta_V A) / 2`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::dynamics::HamiltonianSpec;
use crate::error::{Error, Result};
use crate::lattice::{configuration, inner, Lattice, ManyBodyState, C64, DEFAULT_STATE_CAP};
use crate::operator::{ManyBodyOperator, OneBodyMatrix};

/// Ordering used for every product of a one-particle operator with `delta_V`.
pub const OPERATOR_ORDERING: &str = "anticommutator";

const COMMENSURATE_TOL: f64 = 1e-9;
const MEAN_IMAG_TOL: f64 = 1e-10;
const VARIANCE_FLOOR: f64 = -1e-10;
const RATIO_MEAN_FLOOR: f64 = 1e-12;

/// Contiguous run of sites, wrapping around the ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    start: usize,
    len: usize,
    sites: usize,
}

impl Window {
    pub fn new(lattice: &Lattice, start: usize, len: usize) -> Result<Self> {
        let sites = lattice.sites();
        if len == 0 || len > sites {
            return Err(Error::arg(format!(
                "window length must be in 1..={sites}, got {len}"
            )));
        }
        if start >= sites {
            return Err(Error::arg(format!("window start {start} outside lattice")));
        }
        Ok(Self { start, len, sites })
    }

    pub fn whole(lattice: &Lattice) -> Self {
        Self {
            start: 0,
            len: lattice.sites(),
            sites: lattice.sites(),
        }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `|V|` in lattice units.
    pub fn volume(&self) -> usize {
        self.len
    }

    pub fn contains(&self, site: usize) -> bool {
        (site + self.sites - self.start) % self.sites < self.len
    }

    pub fn sites_iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).map(move |i| (self.start + i) % self.sites)
    }

    /// `delta_V(x_j)` for every site.
    pub fn indicator(&self) -> Vec<f64> {
        (0..self.sites)
            .map(|j| if self.contains(j) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Lattice wavenumber `k = 2 pi m / (M a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierMode {
    index: i64,
    k: f64,
}

impl FourierMode {
    pub fn from_index(lattice: &Lattice, index: i64) -> Self {
        Self {
            index,
            k: 2.0 * PI * index as f64 / lattice.length(),
        }
    }

    pub fn new(lattice: &Lattice, k: f64) -> Result<Self> {
        let m = k * lattice.length() / (2.0 * PI);
        if !m.is_finite() || (m - m.round()).abs() > COMMENSURATE_TOL {
            return Err(Error::IncommensurateMode {
                k,
                length: lattice.length(),
            });
        }
        Ok(Self::from_index(lattice, m.round() as i64))
    }

    pub fn index(&self) -> i64 {
        self.index
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn is_zero(&self) -> bool {
        self.index == 0
    }
}

/// Where the pair energy `phi(|q_j - q_l|)` is booked in the energy density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairAssignment {
    /// `sum_{l > j} phi(|q_j - q_l|) delta_V(q_j)`, the displayed convention.
    #[default]
    Forward,
    /// Half of each pair energy to each partner.
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityKind {
    Number,
    Momentum,
    Energy,
    FourierNumber,
}

impl DensityKind {
    pub fn name(&self) -> &'static str {
        match self {
            DensityKind::Number => "number",
            DensityKind::Momentum => "momentum",
            DensityKind::Energy => "energy",
            DensityKind::FourierNumber => "fourier-number",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensitySpec {
    Number(Window),
    Momentum(Window),
    Energy(Window, PairAssignment),
    FourierNumber(FourierMode),
}

impl DensitySpec {
    pub fn kind(&self) -> DensityKind {
        match self {
            DensitySpec::Number(_) => DensityKind::Number,
            DensitySpec::Momentum(_) => DensityKind::Momentum,
            DensitySpec::Energy(..) => DensityKind::Energy,
            DensitySpec::FourierNumber(_) => DensityKind::FourierNumber,
        }
    }

    pub fn window(&self) -> Option<&Window> {
        match self {
            DensitySpec::Number(w) | DensitySpec::Momentum(w) | DensitySpec::Energy(w, _) => {
                Some(w)
            }
            DensitySpec::FourierNumber(_) => None,
        }
    }

    pub fn build(
        &self,
        lattice: &Lattice,
        particles: usize,
        hamiltonian: Option<&HamiltonianSpec>,
    ) -> Result<DensityObservable> {
        density_operator(self, lattice, particles, hamiltonian)
    }
}

/// Hermitian many-body operator for a smeared density.
#[derive(Debug)]
pub struct DensityObservable {
    spec: DensitySpec,
    lattice: Lattice,
    operator: ManyBodyOperator,
    /// Sine quadrature of a Fourier mode.
    quadrature: Option<ManyBodyOperator>,
    dense: OnceLock<DMatrix<C64>>,
}

impl Clone for DensityObservable {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec,
            lattice: self.lattice,
            operator: self.operator.clone(),
            quadrature: self.quadrature.clone(),
            dense: OnceLock::new(),
        }
    }
}

impl DensityObservable {
    pub fn spec(&self) -> &DensitySpec {
        &self.spec
    }

    pub fn kind(&self) -> DensityKind {
        self.spec.kind()
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn particles(&self) -> usize {
        self.operator.particles()
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    pub fn operator(&self) -> &ManyBodyOperator {
        &self.operator
    }

    /// `sum_j sin(k q_j)` for Fourier modes; the cosine part is [`Self::operator`].
    pub fn sine_quadrature(&self) -> Option<&ManyBodyOperator> {
        self.quadrature.as_ref()
    }

    /// Dense matrix, built on first use.
    pub fn dense(&self) -> &DMatrix<C64> {
        self.dense.get_or_init(|| self.operator.to_dense())
    }

    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        self.operator.apply(v)
    }
}

fn momentum_matrix(lattice: &Lattice, hbar: f64) -> OneBodyMatrix {
    // p = (-i hbar / 2a)(S+ - S-), (S+ psi)_j = psi_{j+1}.
    let m = lattice.sites();
    let c = hbar / (2.0 * lattice.spacing());
    let mut p = OneBodyMatrix::zeros(m);
    for j in 0..m {
        p.add(j, (j + 1) % m, C64::new(0.0, -c));
        p.add(j, (j + m - 1) % m, C64::new(0.0, c));
    }
    p
}

/// Builds the operator for `spec` acting on `particles` particles.
pub fn density_operator(
    spec: &DensitySpec,
    lattice: &Lattice,
    particles: usize,
    hamiltonian: Option<&HamiltonianSpec>,
) -> Result<DensityObservable> {
    if particles == 0 {
        return Err(Error::arg("need at least one particle"));
    }
    let dim = lattice.many_body_dim(particles, DEFAULT_STATE_CAP)?;
    let sites = lattice.sites();
    let check_window = |w: &Window| {
        if w.sites != sites {
            Err(Error::arg("window built for a different lattice"))
        } else {
            Ok(())
        }
    };
    let (operator, quadrature) = match spec {
        DensitySpec::Number(w) => {
            check_window(w)?;
            let a = OneBodyMatrix::diagonal(&w.indicator());
            (
                ManyBodyOperator::new(sites, particles, dim, Some(a), None),
                None,
            )
        }
        DensitySpec::Momentum(w) => {
            check_window(w)?;
            let hbar = hamiltonian.map_or(1.0, |h| h.hbar);
            let p = momentum_matrix(lattice, hbar);
            let g = p.anticommutator_half(&OneBodyMatrix::diagonal(&w.indicator()));
            (
                ManyBodyOperator::new(sites, particles, dim, Some(g), None),
                None,
            )
        }
        DensitySpec::Energy(w, assignment) => {
            check_window(w)?;
            let h = hamiltonian.ok_or(Error::MissingHamiltonian)?;
            h.validate(lattice)?;
            let window = w.indicator();
            let kinetic = h
                .kinetic_matrix(lattice)
                .anticommutator_half(&OneBodyMatrix::diagonal(&window));
            let diagonal = (particles > 1 && h.has_interactions()).then(|| {
                (0..dim)
                    .map(|idx| {
                        let q = configuration(sites, particles, idx);
                        pair_energy_in_window(h, lattice, &q, &window, *assignment)
                    })
                    .collect()
            });
            (
                ManyBodyOperator::new(sites, particles, dim, Some(kinetic), diagonal),
                None,
            )
        }
        DensitySpec::FourierNumber(mode) => {
            let positions = lattice.positions();
            let cos: Vec<f64> = positions.iter().map(|x| (mode.k * x).cos()).collect();
            let sin: Vec<f64> = positions.iter().map(|x| (mode.k * x).sin()).collect();
            let c = ManyBodyOperator::new(
                sites,
                particles,
                dim,
                Some(OneBodyMatrix::diagonal(&cos)),
                None,
            );
            let s = ManyBodyOperator::new(
                sites,
                particles,
                dim,
                Some(OneBodyMatrix::diagonal(&sin)),
                None,
            );
            (c, Some(s))
        }
    };
    Ok(DensityObservable {
        spec: *spec,
        lattice: *lattice,
        operator,
        quadrature,
        dense: OnceLock::new(),
    })
}

fn pair_energy_in_window(
    h: &HamiltonianSpec,
    lattice: &Lattice,
    q: &[usize],
    window: &[f64],
    assignment: PairAssignment,
) -> f64 {
    let mut e = 0.0;
    for (j, &qj) in q.iter().enumerate() {
        for (l, &ql) in q.iter().enumerate() {
            let phi = h.potential_at(lattice.site_distance(qj, ql));
            if phi == 0.0 || l == j {
                continue;
            }
            match assignment {
                PairAssignment::Forward if l > j => e += phi * window[qj],
                PairAssignment::Forward => {}
                PairAssignment::Split => e += 0.5 * phi * window[qj],
            }
        }
    }
    e
}

/// Mean, variance and `(Delta Q)^2 / <Q>^2` of an observable in a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakingStats {
    pub mean: f64,
    pub variance: f64,
    /// `None` when `|<Q>|` is too small for the ratio to mean anything.
    pub ratio: Option<f64>,
}

pub fn expectation_and_variance(
    state: &ManyBodyState,
    obs: &DensityObservable,
) -> Result<PeakingStats> {
    if state.dim() != obs.dim() || state.particles() != obs.particles() {
        return Err(Error::DimensionMismatch {
            expected: obs.dim(),
            actual: state.dim(),
        });
    }
    peaking_stats(state.amplitudes(), obs.operator())
}

pub(crate) fn peaking_stats(psi: &[C64], op: &ManyBodyOperator) -> Result<PeakingStats> {
    let q_psi = op.apply(psi)?;
    let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    let mean_c = inner(psi, &q_psi) / norm2;
    if mean_c.im.abs() > MEAN_IMAG_TOL * mean_c.re.abs().max(1.0) {
        return Err(Error::arg(format!(
            "expectation has imaginary part {:e}; operator not hermitian",
            mean_c.im
        )));
    }
    let mean = mean_c.re;
    let second: f64 = q_psi.iter().map(|z| z.norm_sqr()).sum::<f64>() / norm2;
    let mut variance = second - mean * mean;
    if variance < 0.0 {
        if variance < VARIANCE_FLOOR * mean.abs().max(1.0).powi(2) {
            return Err(Error::arg(format!("negative variance {variance:e}")));
        }
        variance = 0.0;
    }
    let ratio = (mean.abs() > RATIO_MEAN_FLOOR).then(|| variance / (mean * mean));
    Ok(PeakingStats {
        mean,
        variance,
        ratio,
    })
}
