//! Ring lattice geometry and the one- and many-particle states that live on it.
//!
//! Many-body amplitudes are stored in the tensor-product basis of `N`
//! distinguishable particles. Configuration `(j_1, ..., j_N)` maps to the
//! index `sum_k j_k * M^(N-1-k)`, so particle 0 is the most significant digit.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Default ceiling on the number of many-body amplitudes.
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

const ONE_PARTICLE_NORM_TOL: f64 = 1e-12;
const MANY_BODY_NORM_TOL: f64 = 1e-10;
const CANCELLATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    sites: usize,
    spacing: f64,
}

impl Lattice {
    pub fn new(sites: usize, spacing: f64) -> Result<Self> {
        if sites < 2 {
            return Err(Error::InvalidLattice(format!(
                "need at least 2 sites, got {sites}"
            )));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidLattice(format!(
                "spacing must be positive and finite, got {spacing}"
            )));
        }
        Ok(Self { sites, spacing })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Circumference `M * a` of the ring.
    pub fn length(&self) -> f64 {
        self.sites as f64 * self.spacing
    }

    pub fn position(&self, site: usize) -> f64 {
        site as f64 * self.spacing
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.sites).map(|j| self.position(j)).collect()
    }

    /// Minimum-image distance between two sites, in sites.
    pub fn site_distance(&self, a: usize, b: usize) -> usize {
        let d = a.abs_diff(b) % self.sites;
        d.min(self.sites - d)
    }

    /// Signed minimum-image displacement `x - center` on the ring.
    pub fn displacement(&self, x: f64, center: f64) -> f64 {
        let len = self.length();
        (x - center + 0.5 * len).rem_euclid(len) - 0.5 * len
    }

    /// Image of `site` under the reflection `j -> -j (mod M)`.
    pub fn reflect(&self, site: usize) -> usize {
        (self.sites - site % self.sites) % self.sites
    }

    /// Number of amplitudes for `particles` particles, or an error above `cap`.
    pub fn many_body_dim(&self, particles: usize, cap: usize) -> Result<usize> {
        let err = || Error::CapExceeded {
            sites: self.sites,
            particles,
            cap,
        };
        let exp = u32::try_from(particles).map_err(|_| err())?;
        match self.sites.checked_pow(exp) {
            Some(d) if d <= cap => Ok(d),
            _ => Err(err()),
        }
    }
}

pub fn build_lattice(sites: usize, spacing: f64) -> Result<Lattice> {
    Lattice::new(sites, spacing)
}

fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn normalize(v: &mut [C64], what: &str) -> Result<()> {
    let n2 = norm_sqr(v);
    if !n2.is_finite() || n2 <= f64::MIN_POSITIVE {
        return Err(Error::ZeroNorm(what.to_string()));
    }
    let inv = 1.0 / n2.sqrt();
    v.iter_mut().for_each(|z| *z *= inv);
    Ok(())
}

/// Normalized single-particle wavefunction on a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct OneParticleState {
    lattice: Lattice,
    amplitudes: Vec<C64>,
}

impl OneParticleState {
    /// Normalizes `amplitudes`; fails if they vanish.
    pub fn from_amplitudes(lattice: Lattice, mut amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() != lattice.sites() {
            return Err(Error::DimensionMismatch {
                expected: lattice.sites(),
                actual: amplitudes.len(),
            });
        }
        normalize(&mut amplitudes, "one-particle amplitudes")?;
        Ok(Self {
            lattice,
            amplitudes,
        })
    }

    /// Particle sitting on one site.
    pub fn site(lattice: Lattice, site: usize) -> Result<Self> {
        if site >= lattice.sites() {
            return Err(Error::arg(format!(
                "site {site} outside lattice of {} sites",
                lattice.sites()
            )));
        }
        let mut amplitudes = vec![C64::new(0.0, 0.0); lattice.sites()];
        amplitudes[site] = C64::new(1.0, 0.0);
        Ok(Self {
            lattice,
            amplitudes,
        })
    }

    /// Discretized Gaussian wavepacket `exp(-(x-c)^2 / 4w^2) exp(i k x)`.
    ///
    /// Distances to the center use the minimum image on the ring.
    pub fn gaussian_packet(
        lattice: Lattice,
        center: f64,
        width: f64,
        momentum: f64,
    ) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::arg(format!(
                "packet width must be positive, got {width}"
            )));
        }
        if !(center >= 0.0 && center < lattice.length()) {
            return Err(Error::arg(format!(
                "packet center {center} outside [0, {})",
                lattice.length()
            )));
        }
        if !momentum.is_finite() {
            return Err(Error::arg("packet momentum must be finite"));
        }
        let amplitudes: Vec<C64> = lattice
            .positions()
            .into_iter()
            .map(|x| {
                let d = lattice.displacement(x, center);
                let envelope = (-d * d / (4.0 * width * width)).exp();
                C64::from_polar(envelope, momentum * x)
            })
            .collect();
        Self::from_amplitudes(lattice, amplitudes).map_err(|_| {
            Error::ZeroNorm(format!(
                "packet of width {width} at {center} vanishes on the lattice sites"
            ))
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amplitudes)
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= ONE_PARTICLE_NORM_TOL
    }
}

/// Amplitude vector of `N` distinguishable particles on a shared lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ManyBodyState {
    lattice: Lattice,
    particles: usize,
    amplitudes: Vec<C64>,
    factor: Option<OneParticleState>,
}

impl ManyBodyState {
    pub fn from_amplitudes(
        lattice: Lattice,
        particles: usize,
        mut amplitudes: Vec<C64>,
    ) -> Result<Self> {
        if particles == 0 {
            return Err(Error::arg("need at least one particle"));
        }
        let dim = lattice.many_body_dim(particles, usize::MAX)?;
        if amplitudes.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: amplitudes.len(),
            });
        }
        normalize(&mut amplitudes, "many-body amplitudes")?;
        Ok(Self {
            lattice,
            particles,
            amplitudes,
            factor: None,
        })
    }

    /// Replaces the amplitudes of `self` with `amplitudes`, keeping the geometry.
    pub(crate) fn with_amplitudes(&self, amplitudes: Vec<C64>) -> Self {
        debug_assert_eq!(amplitudes.len(), self.amplitudes.len());
        Self {
            lattice: self.lattice,
            particles: self.particles,
            amplitudes,
            factor: None,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    /// The identical one-particle factor, when built by [`product_state`].
    pub fn factor(&self) -> Option<&OneParticleState> {
        self.factor.as_ref()
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amplitudes)
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= MANY_BODY_NORM_TOL
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &ManyBodyState) -> Result<C64> {
        if self.dim() != other.dim() || self.particles != other.particles {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(inner(&self.amplitudes, &other.amplitudes))
    }

    /// Site occupied by each particle in basis configuration `index`.
    pub fn configuration(&self, index: usize) -> Vec<usize> {
        configuration(self.lattice.sites(), self.particles, index)
    }
}

/// `<a|b>` for raw amplitude slices.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub(crate) fn configuration(sites: usize, particles: usize, mut index: usize) -> Vec<usize> {
    let mut out = vec![0; particles];
    for slot in out.iter_mut().rev() {
        *slot = index % sites;
        index /= sites;
    }
    out
}

/// `|psi> (x) |psi> (x) ... (x) |psi>` with the default cap.
pub fn product_state(psi: &OneParticleState, particles: usize) -> Result<ManyBodyState> {
    product_state_with_cap(psi, particles, DEFAULT_STATE_CAP)
}

pub fn product_state_with_cap(
    psi: &OneParticleState,
    particles: usize,
    cap: usize,
) -> Result<ManyBodyState> {
    if particles == 0 {
        return Err(Error::arg("need at least one particle"));
    }
    let lattice = *psi.lattice();
    let dim = lattice.many_body_dim(particles, cap)?;
    let mut amplitudes = Vec::with_capacity(dim);
    amplitudes.push(C64::new(1.0, 0.0));
    for _ in 0..particles {
        amplitudes = amplitudes
            .iter()
            .flat_map(|&head| psi.amplitudes().iter().map(move |&z| head * z))
            .collect();
    }
    // Products of unit vectors are unit vectors; renormalize away rounding.
    normalize(&mut amplitudes, "product state")?;
    Ok(ManyBodyState {
        lattice,
        particles,
        amplitudes,
        factor: Some(psi.clone()),
    })
}

/// Normalized `w_a |a> + w_b |b>` together with the overlap `<a|b>`.
#[derive(Debug, Clone)]
pub struct Superposition {
    pub state: ManyBodyState,
    pub overlap: C64,
}

pub fn superpose(
    a: &ManyBodyState,
    b: &ManyBodyState,
    w_a: C64,
    w_b: C64,
) -> Result<Superposition> {
    if a.lattice != b.lattice {
        return Err(Error::arg("superposed states live on different lattices"));
    }
    let overlap = a.inner(b)?;
    let mut amplitudes: Vec<C64> = a
        .amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(x, y)| w_a * x + w_b * y)
        .collect();
    let n2 = norm_sqr(&amplitudes);
    if n2 < CANCELLATION_TOL {
        return Err(Error::ZeroNorm(format!(
            "superposition cancels to squared norm {n2:e}"
        )));
    }
    normalize(&mut amplitudes, "superposition")?;
    Ok(Superposition {
        state: a.with_amplitudes(amplitudes),
        overlap,
    })
}

/// Equal-weight superposition `(|a> + |b>) / sqrt 2`.
pub fn superpose_equal(a: &ManyBodyState, b: &ManyBodyState) -> Result<Superposition> {
    let w = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    superpose(a, b, w, w)
}
