//! Lattice Hamiltonian, unitary propagation and conservation defects.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::densities::DensityObservable;
use crate::error::{Error, Result};
use crate::lattice::{Lattice, ManyBodyState, C64, DEFAULT_STATE_CAP};
use crate::operator::{max_abs, ManyBodyOperator, OneBodyMatrix};

/// Largest Hilbert space propagated by full diagonalization.
pub const DIAGONALIZATION_LIMIT: usize = 4096;

/// Target accuracy of every propagation route, max norm on the state.
pub const PROPAGATION_TOL: f64 = 1e-9;

/// Microscopic parameters: mass, Planck constant, tabulated pair potential.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec {
    pub mass: f64,
    pub hbar: f64,
    /// `phi(r)` at integer site distances `r = 0, 1, ...`.
    pub potential: Vec<f64>,
    /// Largest distance with nonzero `phi`.
    pub range: usize,
    /// Sites with every hopping link removed; a particle there never moves.
    pub detached_sites: Vec<usize>,
}

impl Default for HamiltonianSpec {
    fn default() -> Self {
        Self::free()
    }
}

impl HamiltonianSpec {
    pub fn free() -> Self {
        Self {
            mass: 1.0,
            hbar: 1.0,
            potential: Vec::new(),
            range: 0,
            detached_sites: Vec::new(),
        }
    }

    /// Same-site repulsion of strength `strength`.
    pub fn on_site(strength: f64) -> Self {
        Self {
            potential: vec![strength],
            ..Self::free()
        }
    }

    /// Constant `strength` for distances `0..=range`.
    pub fn square_well(strength: f64, range: usize) -> Self {
        Self {
            potential: vec![strength; range + 1],
            range,
            ..Self::free()
        }
    }

    pub fn validate(&self, lattice: &Lattice) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::arg(format!(
                "mass must be positive, got {}",
                self.mass
            )));
        }
        if !(self.hbar > 0.0 && self.hbar.is_finite()) {
            return Err(Error::arg(format!(
                "hbar must be positive, got {}",
                self.hbar
            )));
        }
        for (distance, &value) in self.potential.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::arg(format!("phi({distance}) is not finite")));
            }
            if distance > self.range && value != 0.0 {
                return Err(Error::PotentialRange {
                    distance,
                    value,
                    range: self.range,
                });
            }
        }
        if let Some(&s) = self.detached_sites.iter().find(|&&s| s >= lattice.sites()) {
            return Err(Error::arg(format!("detached site {s} outside lattice")));
        }
        Ok(())
    }

    /// Hopping energy `hbar^2 / (2 m a^2)`.
    pub fn hopping(&self, lattice: &Lattice) -> f64 {
        self.hbar * self.hbar / (2.0 * self.mass * lattice.spacing().powi(2))
    }

    pub fn potential_at(&self, distance: usize) -> f64 {
        if distance > self.range {
            return 0.0;
        }
        self.potential.get(distance).copied().unwrap_or(0.0)
    }

    pub fn has_interactions(&self) -> bool {
        self.potential.iter().any(|&v| v != 0.0)
    }

    /// `p^2 / 2m` as `t_h (2 - S+ - S-)` on the ring, minus detached links.
    pub fn kinetic_matrix(&self, lattice: &Lattice) -> OneBodyMatrix {
        let m = lattice.sites();
        let t = self.hopping(lattice);
        let mut k = OneBodyMatrix::zeros(m);
        for j in 0..m {
            k.add(j, j, C64::new(2.0 * t, 0.0));
        }
        // Each undirected link once; M = 2 has a doubled link.
        for j in 0..m {
            let next = (j + 1) % m;
            if self.detached_sites.contains(&j) || self.detached_sites.contains(&next) {
                continue;
            }
            k.add(j, next, C64::new(-t, 0.0));
            k.add(next, j, C64::new(-t, 0.0));
        }
        k
    }

    /// `sum_{l > j} phi(|q_j - q_l|)` for each configuration.
    pub(crate) fn pair_energy(&self, lattice: &Lattice, config: &[usize]) -> f64 {
        let mut e = 0.0;
        for (j, &qj) in config.iter().enumerate() {
            for &ql in &config[j + 1..] {
                e += self.potential_at(lattice.site_distance(qj, ql));
            }
        }
        e
    }
}

/// The many-body Hamiltonian on a fixed lattice and particle number.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    spec: HamiltonianSpec,
    lattice: Lattice,
    operator: ManyBodyOperator,
}

impl Hamiltonian {
    pub fn spec(&self) -> &HamiltonianSpec {
        &self.spec
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

    pub fn to_dense(&self) -> DMatrix<C64> {
        self.operator.to_dense()
    }

    pub fn expectation(&self, state: &ManyBodyState) -> Result<f64> {
        let hv = self.operator.apply(state.amplitudes())?;
        Ok(crate::lattice::inner(state.amplitudes(), &hv).re)
    }
}

pub fn build_hamiltonian(
    spec: &HamiltonianSpec,
    lattice: &Lattice,
    particles: usize,
) -> Result<Hamiltonian> {
    build_hamiltonian_with_cap(spec, lattice, particles, DEFAULT_STATE_CAP)
}

pub fn build_hamiltonian_with_cap(
    spec: &HamiltonianSpec,
    lattice: &Lattice,
    particles: usize,
    cap: usize,
) -> Result<Hamiltonian> {
    spec.validate(lattice)?;
    if particles == 0 {
        return Err(Error::arg("need at least one particle"));
    }
    let dim = lattice.many_body_dim(particles, cap)?;
    let diagonal = (particles > 1 && spec.has_interactions()).then(|| {
        (0..dim)
            .into_par_iter()
            .map(|idx| {
                let config = crate::lattice::configuration(lattice.sites(), particles, idx);
                spec.pair_energy(lattice, &config)
            })
            .collect()
    });
    let operator = ManyBodyOperator::new(
        lattice.sites(),
        particles,
        dim,
        Some(spec.kinetic_matrix(lattice)),
        diagonal,
    );
    Ok(Hamiltonian {
        spec: spec.clone(),
        lattice: *lattice,
        operator,
    })
}

#[derive(Debug, Clone)]
enum Eigenvectors {
    Real(DMatrix<f64>),
    Complex(DMatrix<C64>),
}

/// Eigendecomposition of a Hamiltonian, ascending energies.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    energies: Vec<f64>,
    vectors: Eigenvectors,
}

impl EigenSystem {
    pub fn of(h: &Hamiltonian) -> Self {
        Self::of_operator(h.operator())
    }

    pub fn of_operator(op: &ManyBodyOperator) -> Self {
        let dense = op.to_dense();
        let (values, vectors) = if op.is_real() {
            let real = dense.map(|z| z.re);
            let eig = SymmetricEigen::new(real);
            (eig.eigenvalues, Eigenvectors::Real(eig.eigenvectors))
        } else {
            let eig = SymmetricEigen::new(dense);
            (eig.eigenvalues, Eigenvectors::Complex(eig.eigenvectors))
        };
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let energies = order.iter().map(|&i| values[i]).collect();
        let vectors = match vectors {
            Eigenvectors::Real(v) => Eigenvectors::Real(v.select_columns(&order)),
            Eigenvectors::Complex(v) => Eigenvectors::Complex(v.select_columns(&order)),
        };
        Self { energies, vectors }
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn vectors(&self) -> DMatrix<C64> {
        match &self.vectors {
            Eigenvectors::Real(v) => v.map(|x| C64::new(x, 0.0)),
            Eigenvectors::Complex(v) => v.clone(),
        }
    }

    /// `sum_n f(E_n) |n><n| v`.
    fn apply_function(&self, v: &[C64], f: impl Fn(f64) -> C64) -> Vec<C64> {
        match &self.vectors {
            Eigenvectors::Real(q) => {
                let re = DVector::from_iterator(v.len(), v.iter().map(|z| z.re));
                let im = DVector::from_iterator(v.len(), v.iter().map(|z| z.im));
                let cr = q.tr_mul(&re);
                let ci = q.tr_mul(&im);
                let mut out_re = DVector::zeros(cr.len());
                let mut out_im = DVector::zeros(cr.len());
                for (n, &e) in self.energies.iter().enumerate() {
                    let c = C64::new(cr[n], ci[n]) * f(e);
                    out_re[n] = c.re;
                    out_im[n] = c.im;
                }
                let re = q * out_re;
                let im = q * out_im;
                re.iter()
                    .zip(im.iter())
                    .map(|(&a, &b)| C64::new(a, b))
                    .collect()
            }
            Eigenvectors::Complex(q) => {
                let x = DVector::from_column_slice(v);
                let mut c = q.ad_mul(&x);
                for (n, &e) in self.energies.iter().enumerate() {
                    c[n] *= f(e);
                }
                (q * c).iter().copied().collect()
            }
        }
    }
}

/// How [`Evolver`] realizes `exp(-i H t / hbar)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationMethod {
    /// Full eigendecomposition, reused for every time.
    Diagonalization,
    /// Sub-stepped Taylor series of the action on a vector.
    TaylorAction,
}

/// Propagates states under one Hamiltonian; reusable across times.
#[derive(Debug, Clone)]
pub struct Evolver {
    hamiltonian: Hamiltonian,
    eigen: Option<EigenSystem>,
}

impl Evolver {
    pub fn new(hamiltonian: &Hamiltonian) -> Self {
        let method = if hamiltonian.dim() <= DIAGONALIZATION_LIMIT {
            PropagationMethod::Diagonalization
        } else {
            PropagationMethod::TaylorAction
        };
        Self::with_method(hamiltonian, method)
    }

    pub fn with_method(hamiltonian: &Hamiltonian, method: PropagationMethod) -> Self {
        let eigen = match method {
            PropagationMethod::Diagonalization => Some(EigenSystem::of(hamiltonian)),
            PropagationMethod::TaylorAction => None,
        };
        Self {
            hamiltonian: hamiltonian.clone(),
            eigen,
        }
    }

    pub fn method(&self) -> PropagationMethod {
        if self.eigen.is_some() {
            PropagationMethod::Diagonalization
        } else {
            PropagationMethod::TaylorAction
        }
    }

    pub fn hamiltonian(&self) -> &Hamiltonian {
        &self.hamiltonian
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    /// `exp(-i H t / hbar) v` for a raw amplitude vector.
    pub fn propagate(&self, v: &[C64], t: f64) -> Result<Vec<C64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: v.len(),
            });
        }
        if !t.is_finite() {
            return Err(Error::arg(format!("time must be finite, got {t}")));
        }
        if t == 0.0 {
            return Ok(v.to_vec());
        }
        let hbar = self.hamiltonian.spec.hbar;
        match &self.eigen {
            Some(eig) => Ok(eig.apply_function(v, |e| C64::from_polar(1.0, -e * t / hbar))),
            None => self.taylor(v, t / hbar),
        }
    }

    fn taylor(&self, v: &[C64], scaled_t: f64) -> Result<Vec<C64>> {
        let op = self.hamiltonian.operator();
        let bound = op.norm_bound().max(1e-300);
        // Each sub-step keeps ||H tau|| <= 1/2 so the series converges fast.
        let steps = ((bound * scaled_t.abs()) / 0.5).ceil().max(1.0) as usize;
        let tau = scaled_t / steps as f64;
        let scale = C64::new(0.0, -tau);
        let mut psi = v.to_vec();
        let input_norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for _ in 0..steps {
            let mut term = psi.clone();
            let mut sum = psi.clone();
            for k in 1..=80 {
                let hv = op.apply(&term)?;
                let factor = scale / k as f64;
                term = hv.into_iter().map(|z| z * factor).collect();
                let mut tnorm: f64 = 0.0;
                for (s, t) in sum.iter_mut().zip(&term) {
                    *s += t;
                    tnorm = tnorm.max(t.norm());
                }
                if tnorm <= 1e-17 * input_norm.max(1e-300) {
                    break;
                }
            }
            psi = sum;
        }
        Ok(psi)
    }

    pub fn evolve(&self, state: &ManyBodyState, t: f64) -> Result<ManyBodyState> {
        let amplitudes = self.propagate(state.amplitudes(), t)?;
        Ok(state.with_amplitudes(amplitudes))
    }

    /// Dense propagator `U(t)`; only for Hilbert spaces small enough to store.
    pub fn propagator(&self, t: f64) -> Result<Propagator> {
        let dim = self.dim();
        let mut matrix = DMatrix::zeros(dim, dim);
        let mut e = vec![C64::new(0.0, 0.0); dim];
        for col in 0..dim {
            e[col] = C64::new(1.0, 0.0);
            let u = self.propagate(&e, t)?;
            e[col] = C64::new(0.0, 0.0);
            matrix.set_column(col, &DVector::from_vec(u));
        }
        Ok(Propagator { time: t, matrix })
    }
}

/// `|psi(t)> = exp(-i H t / hbar) |psi>`.
pub fn evolve(state: &ManyBodyState, hamiltonian: &Hamiltonian, t: f64) -> Result<ManyBodyState> {
    if state.dim() != hamiltonian.dim() {
        return Err(Error::DimensionMismatch {
            expected: hamiltonian.dim(),
            actual: state.dim(),
        });
    }
    Evolver::new(hamiltonian).evolve(state, t)
}

/// Materialized `U(t)`.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub time: f64,
    pub matrix: DMatrix<C64>,
}

impl Propagator {
    /// `max |U^dagger U - I|`.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.matrix.nrows();
        max_abs(&(self.matrix.adjoint() * &self.matrix - DMatrix::identity(n, n)))
    }
}

/// `max |[obs, H]|` over matrix entries.
///
/// Position-diagonal observables use `[D, H]_rc = (d_r - d_c) H_rc`, so a
/// number operator that counts every hop symmetrically gives exactly zero.
pub fn conservation_defect(obs: &DensityObservable, hamiltonian: &Hamiltonian) -> Result<f64> {
    let op = obs.operator();
    if op.dim() != hamiltonian.dim() {
        return Err(Error::DimensionMismatch {
            expected: hamiltonian.dim(),
            actual: op.dim(),
        });
    }
    if let Some(d) = op.diagonal_values() {
        let worst = hamiltonian
            .operator()
            .off_diagonal_entries()
            .into_iter()
            .map(|(r, c, h)| ((d[r] - d[c]) * h).norm())
            .fold(0.0, f64::max);
        return Ok(worst);
    }
    let a = op.to_dense();
    let h = hamiltonian.to_dense();
    Ok(max_abs(&(&a * &h - &h * &a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{DensitySpec, Window};
    use crate::lattice::{build_lattice, product_state, OneParticleState};
    use crate::operator::hermiticity_defect;

    #[test]
    fn free_band_matches_analytic() {
        for (m, a) in [(7usize, 1.0), (10, 0.5)] {
            let l = build_lattice(m, a).unwrap();
            let spec = HamiltonianSpec::free();
            let h = build_hamiltonian(&spec, &l, 1).unwrap();
            let eig = EigenSystem::of(&h);
            let t = spec.hopping(&l);
            let mut band: Vec<f64> = (0..m)
                .map(|n| 2.0 * t * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / m as f64).cos()))
                .collect();
            band.sort_by(f64::total_cmp);
            for (e, b) in eig.energies().iter().zip(&band) {
                assert!((e - b).abs() < 1e-12, "{e} vs {b}");
            }
        }
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        let l = build_lattice(5, 1.0).unwrap();
        let h = build_hamiltonian(&HamiltonianSpec::square_well(0.7, 1), &l, 2).unwrap();
        assert!(hermiticity_defect(&h.to_dense()) <= 1e-12);
    }

    #[test]
    fn potential_beyond_range_rejected() {
        let l = build_lattice(6, 1.0).unwrap();
        let spec = HamiltonianSpec {
            potential: vec![1.0, 0.5],
            range: 0,
            ..HamiltonianSpec::free()
        };
        assert!(matches!(
            build_hamiltonian(&spec, &l, 2),
            Err(Error::PotentialRange { distance: 1, .. })
        ));
    }

    #[test]
    fn on_site_repulsion_conserves_total_number() {
        let l = build_lattice(5, 1.0).unwrap();
        let h = build_hamiltonian(&HamiltonianSpec::on_site(2.0), &l, 2).unwrap();
        let n = DensitySpec::Number(Window::whole(&l))
            .build(&l, 2, None)
            .unwrap();
        assert_eq!(conservation_defect(&n, &h).unwrap(), 0.0);
    }

    #[test]
    fn evolve_zero_time_is_identity() {
        let l = build_lattice(6, 1.0).unwrap();
        let h = build_hamiltonian(&HamiltonianSpec::free(), &l, 2).unwrap();
        let psi = OneParticleState::gaussian_packet(l, 2.0, 1.0, 0.4).unwrap();
        let s = product_state(&psi, 2).unwrap();
        let out = evolve(&s, &h, 0.0).unwrap();
        assert_eq!(out.amplitudes(), s.amplitudes());
    }

    #[test]
    fn forward_then_backward_returns() {
        let l = build_lattice(6, 1.0).unwrap();
        let h = build_hamiltonian(&HamiltonianSpec::on_site(1.5), &l, 2).unwrap();
        let psi = OneParticleState::gaussian_packet(l, 2.0, 1.0, 0.4).unwrap();
        let s = product_state(&psi, 2).unwrap();
        let ev = Evolver::new(&h);
        let back = ev.evolve(&ev.evolve(&s, 1.7).unwrap(), -1.7).unwrap();
        for (a, b) in back.amplitudes().iter().zip(s.amplitudes()) {
            assert!((a - b).norm() < 1e-8);
        }
        assert!((ev.evolve(&s, 3.0).unwrap().norm_sqr() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn taylor_and_diagonalization_agree() {
        let l = build_lattice(5, 1.0).unwrap();
        let h = build_hamiltonian(&HamiltonianSpec::square_well(0.8, 1), &l, 3).unwrap();
        let psi = OneParticleState::gaussian_packet(l, 1.0, 0.8, 0.9).unwrap();
        let s = product_state(&psi, 3).unwrap();
        let diag = Evolver::with_method(&h, PropagationMethod::Diagonalization);
        let taylor = Evolver::with_method(&h, PropagationMethod::TaylorAction);
        for t in [0.3, 2.5, -4.0] {
            let a = diag.propagate(s.amplitudes(), t).unwrap();
            let b = taylor.propagate(s.amplitudes(), t).unwrap();
            let err = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y).norm())
                .fold(0.0, f64::max);
            assert!(err <= PROPAGATION_TOL, "t = {t}: {err:e}");
        }
    }

    #[test]
    fn propagator_unitary_and_composes() {
        let l = build_lattice(4, 1.0).unwrap();
        let h = build_hamiltonian(&HamiltonianSpec::on_site(1.0), &l, 2).unwrap();
        let ev = Evolver::new(&h);
        let u1 = ev.propagator(0.7).unwrap();
        let u2 = ev.propagator(1.1).unwrap();
        let u12 = ev.propagator(1.8).unwrap();
        assert!(u1.unitarity_defect() <= 1e-9);
        assert!(max_abs(&(&u1.matrix * &u2.matrix - &u12.matrix)) <= 1e-8);
    }

    #[test]
    fn energy_is_constant_in_time() {
        let l = build_lattice(6, 1.0).unwrap();
        let h = build_hamiltonian(&HamiltonianSpec::square_well(0.5, 1), &l, 2).unwrap();
        let psi = OneParticleState::gaussian_packet(l, 1.0, 0.9, 1.1).unwrap();
        let s = product_state(&psi, 2).unwrap();
        let ev = Evolver::new(&h);
        let e0 = h.expectation(&s).unwrap();
        for t in [0.5, 1.0, 4.0, 9.0] {
            let e = h.expectation(&ev.evolve(&s, t).unwrap()).unwrap();
            assert!((e - e0).abs() <= 1e-9);
        }
    }

    #[test]
    fn free_packet_spreads() {
        let l = build_lattice(40, 1.0).unwrap();
        let spec = HamiltonianSpec::free();
        let h = build_hamiltonian(&spec, &l, 1).unwrap();
        let w0 = 1.5;
        let psi = OneParticleState::gaussian_packet(l, 20.0, w0, 0.0).unwrap();
        let s = product_state(&psi, 1).unwrap();
        let ev = Evolver::new(&h);
        let width = |st: &ManyBodyState| {
            let p: Vec<f64> = st.amplitudes().iter().map(|z| z.norm_sqr()).collect();
            let mean: f64 = p.iter().enumerate().map(|(j, w)| j as f64 * w).sum();
            p.iter()
                .enumerate()
                .map(|(j, w)| (j as f64 - mean).powi(2) * w)
                .sum::<f64>()
                .sqrt()
        };
        let mut last = width(&s);
        for step in 1..=10 {
            let t = 0.5 * step as f64;
            let w = width(&ev.evolve(&s, t).unwrap());
            assert!(w > last, "width not growing at t = {t}");
            // Continuum dispersion with effective mass hbar^2/(2 t_h a^2) = m.
            let analytic = (w0 * w0 + (t / (2.0 * w0)).powi(2)).sqrt();
            if t <= 2.0 {
                assert!(
                    (w - analytic).abs() / analytic < 0.05,
                    "t={t}: {w} vs {analytic}"
                );
            }
            last = w;
        }
    }

    #[test]
    fn detached_site_links_removed() {
        let l = build_lattice(4, 1.0).unwrap();
        let spec = HamiltonianSpec {
            detached_sites: vec![0],
            ..HamiltonianSpec::free()
        };
        let k = spec.kinetic_matrix(&l);
        assert_eq!(k.get(0, 1), C64::new(0.0, 0.0));
        assert_eq!(k.get(3, 0), C64::new(0.0, 0.0));
        assert_eq!(k.get(1, 2), C64::new(-0.5, 0.0));
    }
}
