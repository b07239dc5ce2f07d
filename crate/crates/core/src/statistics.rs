//! Large-N variance calculus over one- and two-particle position densities.
//!
//! Kernels are translation invariant and radial on a periodic box of side
//! `Lambda`. Each is stored as a sum of ball indicators plus a uniform
//! background, `c(r) = sum_k a_k [|r| <= R_k] + bg`, so the pair excess over
//! a box `V` reduces to integrals of the box autocorrelation over balls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::{erf::erf, gamma::gamma};

use crate::error::{Error, Result};

pub const NORMALIZATION_TOL: f64 = 1e-8;
pub const MARGINAL_TOL: f64 = 1e-6;
pub const DEFAULT_CELLS_PER_LENGTH: usize = 64;
pub const MIN_CELLS_PER_LENGTH: usize = 16;
pub const MIN_CELLS_PER_EDGE: usize = 8;
pub const MIN_MC_SAMPLES: usize = 1000;
pub const DEFAULT_MC_BATCHES: usize = 20;
pub const MAX_REJECTION_RATE: f64 = 0.99;
pub const MIN_FIT_POINTS: usize = 4;

/// How the independent-pair sampler is related back to the full N-body
/// moment structure.
pub const PAIRING_CORRECTION: &str = "Var_full = Var_pairs + (N^2 - N - 2P) * C, \
     P = floor(N/2) sampled pairs, C = integral over V x V of the excess kernel";

/// Volume of the `d`-ball of radius `r`.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    let h = d as f64 / 2.0;
    std::f64::consts::PI.powf(h) / gamma(h + 1.0) * r.powi(d as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub enum OneParticleDensity {
    Uniform,
    /// Isotropic Gaussian truncated to the box and renormalized.
    Gaussian {
        center: Vec<f64>,
        sigma: f64,
    },
    /// Piecewise constant on `cells^d` equal cells, row-major, last axis fastest.
    Tabulated {
        cells: usize,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelShape {
    /// Uncorrelated particles.
    Zero,
    /// Lobe `c0` on `|dq| <= L/2`, compensated by a uniform background.
    TopHat,
    /// Lobe `c0` on `|dq| <= L/2`, compensated by a negative shell out to `L`.
    TopHatShell,
}

impl KernelShape {
    pub fn name(self) -> &'static str {
        match self {
            KernelShape::Zero => "zero",
            KernelShape::TopHat => "top-hat",
            KernelShape::TopHatShell => "top-hat-shell",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero" => Some(KernelShape::Zero),
            "top-hat" | "tophat" => Some(KernelShape::TopHat),
            "top-hat-shell" | "tophat-shell" => Some(KernelShape::TopHatShell),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorrelationModel {
    dim: usize,
    side: f64,
    p1: OneParticleDensity,
    shape: KernelShape,
    amplitude: f64,
    length: f64,
    balls: Vec<(f64, f64)>,
    background: f64,
}

pub fn make_correlation_model(
    dim: usize,
    side: f64,
    p1: OneParticleDensity,
    shape: KernelShape,
    amplitude: f64,
    length: f64,
) -> Result<CorrelationModel> {
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidModel(format!("dimension {dim} not in 1..=3")));
    }
    if !(side > 0.0 && side.is_finite()) {
        return Err(Error::InvalidModel(format!(
            "box side {side} must be positive"
        )));
    }
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::InvalidModel(format!(
            "correlation length {length} must be positive"
        )));
    }
    if !amplitude.is_finite() {
        return Err(Error::InvalidModel("amplitude must be finite".into()));
    }
    validate_p1(dim, side, &p1)?;

    let (balls, background) = match shape {
        KernelShape::Zero => (Vec::new(), 0.0),
        KernelShape::TopHat => {
            let r = length / 2.0;
            let mass = amplitude * ball_volume(dim, r);
            (vec![(r, amplitude)], -mass / side.powi(dim as i32))
        }
        KernelShape::TopHatShell => {
            let inner = ball_volume(dim, length / 2.0);
            let outer = ball_volume(dim, length);
            let b = amplitude * inner / (outer - inner);
            (vec![(length / 2.0, amplitude + b), (length, -b)], 0.0)
        }
    };
    let model = CorrelationModel {
        dim,
        side,
        p1,
        shape,
        amplitude,
        length,
        balls,
        background,
    };
    if model.has_kernel() {
        if model.p1 != OneParticleDensity::Uniform {
            return Err(Error::InvalidModel(
                "a nonzero kernel needs a uniform one-particle density".into(),
            ));
        }
        if model.max_radius() > side / 2.0 {
            return Err(Error::InvalidModel(format!(
                "kernel reach {} exceeds half the box side {side}",
                model.max_radius()
            )));
        }
    }
    model.check_positivity()?;
    let defect = model.marginal_defect();
    if defect > MARGINAL_TOL {
        return Err(Error::InvalidModel(format!(
            "marginal defect {defect:e} above {MARGINAL_TOL:e}"
        )));
    }
    Ok(model)
}

fn validate_p1(dim: usize, side: f64, p1: &OneParticleDensity) -> Result<()> {
    match p1 {
        OneParticleDensity::Uniform => Ok(()),
        OneParticleDensity::Gaussian { center, sigma } => {
            if center.len() != dim {
                return Err(Error::InvalidModel(format!(
                    "Gaussian center has {} coordinates, expected {dim}",
                    center.len()
                )));
            }
            if !(*sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "sigma {sigma} must be positive"
                )));
            }
            if center.iter().any(|&c| !(0.0..=side).contains(&c)) {
                return Err(Error::InvalidModel(
                    "Gaussian center outside the box".into(),
                ));
            }
            Ok(())
        }
        OneParticleDensity::Tabulated { cells, values } => {
            if *cells == 0 || values.len() != cells.pow(dim as u32) {
                return Err(Error::InvalidModel(format!(
                    "table needs {cells}^{dim} values, got {}",
                    values.len()
                )));
            }
            if values.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidModel(
                    "tabulated density must be finite and non-negative".into(),
                ));
            }
            let cell_volume = (side / *cells as f64).powi(dim as i32);
            let total: f64 = values.iter().sum::<f64>() * cell_volume;
            if (total - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::InvalidModel(format!(
                    "tabulated density integrates to {total}"
                )));
            }
            Ok(())
        }
    }
}

impl CorrelationModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn domain_volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    pub fn p1(&self) -> &OneParticleDensity {
        &self.p1
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn has_kernel(&self) -> bool {
        self.shape != KernelShape::Zero && self.amplitude != 0.0
    }

    /// Ball components `(radius, amplitude)` of the kernel.
    pub fn balls(&self) -> &[(f64, f64)] {
        if self.has_kernel() {
            &self.balls
        } else {
            &[]
        }
    }

    pub fn background(&self) -> f64 {
        if self.has_kernel() {
            self.background
        } else {
            0.0
        }
    }

    pub fn max_radius(&self) -> f64 {
        self.balls().iter().map(|b| b.0).fold(0.0, f64::max)
    }

    fn min_image(&self, dx: f64) -> f64 {
        let x = dx.rem_euclid(self.side);
        if x > self.side / 2.0 {
            x - self.side
        } else {
            x
        }
    }

    /// Minimum-image displacement `q2 - q1`.
    pub fn displacement(&self, q1: &[f64], q2: &[f64]) -> Vec<f64> {
        q1.iter()
            .zip(q2)
            .map(|(a, b)| self.min_image(b - a))
            .collect()
    }

    /// Kernel at separation distance `r`.
    pub fn kernel_at(&self, r: f64) -> f64 {
        self.background()
            + self
                .balls()
                .iter()
                .filter(|&&(radius, _)| r <= radius)
                .map(|&(_, a)| a)
                .sum::<f64>()
    }

    pub fn kernel(&self, q1: &[f64], q2: &[f64]) -> f64 {
        let r = self
            .displacement(q1, q2)
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        self.kernel_at(r)
    }

    pub fn p1_value(&self, q: &[f64]) -> f64 {
        match &self.p1 {
            OneParticleDensity::Uniform => 1.0 / self.domain_volume(),
            OneParticleDensity::Gaussian { center, sigma } => q
                .iter()
                .zip(center)
                .map(|(&x, &c)| {
                    if !(0.0..self.side).contains(&x) {
                        return 0.0;
                    }
                    let z = (x - c) / sigma;
                    (-0.5 * z * z).exp()
                        / (sigma * (2.0 * std::f64::consts::PI).sqrt())
                        / gaussian_axis_mass(c, *sigma, 0.0, self.side)
                })
                .product(),
            OneParticleDensity::Tabulated { cells, values } => {
                let h = self.side / *cells as f64;
                let mut idx = 0;
                for &x in q {
                    let x = x.rem_euclid(self.side);
                    let i = ((x / h) as usize).min(cells - 1);
                    idx = idx * cells + i;
                }
                values[idx]
            }
        }
    }

    pub fn p2_value(&self, q1: &[f64], q2: &[f64]) -> f64 {
        self.p1_value(q1) * self.p1_value(q2) + self.kernel(q1, q2)
    }

    /// Distinct kernel values on each shell between consecutive radii, plus
    /// the value beyond the outermost radius.
    fn shell_values(&self) -> Vec<(f64, f64)> {
        let mut radii: Vec<f64> = self.balls().iter().map(|b| b.0).collect();
        radii.sort_by(f64::total_cmp);
        let mut out: Vec<(f64, f64)> = radii.iter().map(|&r| (r, self.kernel_at(r))).collect();
        out.push((f64::INFINITY, self.background()));
        out
    }

    fn check_positivity(&self) -> Result<()> {
        if !self.has_kernel() {
            return Ok(());
        }
        let base = 1.0 / self.domain_volume().powi(2);
        for (r, c) in self.shell_values() {
            if base + c < -1e-15 * base {
                return Err(Error::InvalidModel(format!(
                    "p2 = {:e} < 0 at separations up to {r}; reduce the amplitude",
                    base + c
                )));
            }
        }
        Ok(())
    }

    /// `|integral of c over q2|` relative to the uniform one-particle density.
    pub fn marginal_defect(&self) -> f64 {
        let mass: f64 = self
            .balls()
            .iter()
            .map(|&(r, a)| a * ball_volume(self.dim, r))
            .sum::<f64>()
            + self.background() * self.domain_volume();
        (mass * self.domain_volume()).abs()
    }

    /// Integral of the positive part of the kernel over `dq2` at fixed `q1`.
    pub fn positive_lobe_mass(&self) -> f64 {
        let mut acc = 0.0;
        let mut prev = 0.0;
        for (r, c) in self.shell_values() {
            if !r.is_finite() {
                break;
            }
            if c > 0.0 {
                acc += c * (ball_volume(self.dim, r) - ball_volume(self.dim, prev));
            }
            prev = r;
        }
        acc
    }
}

/// Mass of a unit Gaussian centered at `c` with width `sigma` on `[a, b]`.
fn gaussian_axis_mass(c: f64, sigma: f64, a: f64, b: f64) -> f64 {
    let s = sigma * std::f64::consts::SQRT_2;
    0.5 * (erf((b - c) / s) - erf((a - c) / s))
}

/// Axis-aligned box inside the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SmearingVolume {
    origin: Vec<f64>,
    sides: Vec<f64>,
}

impl SmearingVolume {
    pub fn new(model: &CorrelationModel, origin: Vec<f64>, sides: Vec<f64>) -> Result<Self> {
        let d = model.dim();
        if origin.len() != d || sides.len() != d {
            return Err(Error::arg(format!(
                "smearing box needs {d} coordinates per corner"
            )));
        }
        for (&o, &s) in origin.iter().zip(&sides) {
            if !(s > 0.0 && o >= 0.0 && o + s <= model.side() * (1.0 + 1e-12)) {
                return Err(Error::arg(format!(
                    "box [{o}, {}) must be non-empty and inside [0, {}]",
                    o + s,
                    model.side()
                )));
            }
            if model.has_kernel() && s + model.max_radius() > model.side() {
                return Err(Error::arg(format!(
                    "box side {s} plus kernel reach {} exceeds the domain {}",
                    model.max_radius(),
                    model.side()
                )));
            }
        }
        Ok(Self { origin, sides })
    }

    /// Cube of the given side at the origin.
    pub fn cube(model: &CorrelationModel, side: f64) -> Result<Self> {
        Self::new(model, vec![0.0; model.dim()], vec![side; model.dim()])
    }

    /// Cube of volume `v`.
    pub fn cube_with_volume(model: &CorrelationModel, v: f64) -> Result<Self> {
        Self::cube(model, v.powf(1.0 / model.dim() as f64))
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn sides(&self) -> &[f64] {
        &self.sides
    }

    pub fn volume(&self) -> f64 {
        self.sides.iter().product()
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(self.origin.iter().zip(&self.sides))
            .all(|(&x, (&o, &s))| x >= o && x < o + s)
    }
}

/// `f = integral of p1 over V`.
pub fn window_fraction(model: &CorrelationModel, v: &SmearingVolume) -> f64 {
    match model.p1() {
        OneParticleDensity::Uniform => v.volume() / model.domain_volume(),
        OneParticleDensity::Gaussian { center, sigma } => v
            .origin
            .iter()
            .zip(&v.sides)
            .zip(center)
            .map(|((&o, &s), &c)| {
                gaussian_axis_mass(c, *sigma, o, o + s)
                    / gaussian_axis_mass(c, *sigma, 0.0, model.side())
            })
            .product(),
        OneParticleDensity::Tabulated { cells, values } => {
            let h = model.side() / *cells as f64;
            let overlaps: Vec<Vec<f64>> = v
                .origin
                .iter()
                .zip(&v.sides)
                .map(|(&o, &s)| {
                    (0..*cells)
                        .map(|i| {
                            let lo = i as f64 * h;
                            ((lo + h).min(o + s) - lo.max(o)).max(0.0)
                        })
                        .collect()
                })
                .collect();
            values
                .iter()
                .enumerate()
                .map(|(mut idx, &p)| {
                    let mut w = p;
                    for axis in overlaps.iter().rev() {
                        w *= axis[idx % cells];
                        idx /= cells;
                    }
                    w
                })
                .sum()
        }
    }
}

/// `<n_V> = N * integral of p1 over V`.
pub fn mean_density(model: &CorrelationModel, v: &SmearingVolume, particles: u64) -> f64 {
    particles as f64 * window_fraction(model, v)
}

/// A quadrature value with the difference to the half-resolution result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureEstimate {
    pub value: f64,
    pub error: f64,
    pub cells_per_length: usize,
}

/// `integral of (s - |x|)_+` over `|x| <= h`.
fn line_autocorrelation(h: f64, s: f64) -> f64 {
    let m = h.min(s).max(0.0);
    2.0 * (s * m - 0.5 * m * m)
}

const GAUSS_NODES: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// `integral over |r| <= R of prod_i (s_i - |r_i|)_+`.
///
/// The last axis is done exactly; every other axis uses `x = R sin(theta)`
/// to remove the square-root edge of the ball, then composite four-point
/// Gauss-Legendre panels of arc length at most `cell`.
fn ball_autocorrelation(sides: &[f64], radius: f64, cell: f64) -> f64 {
    if radius <= 0.0 {
        return 0.0;
    }
    let (s0, rest) = sides.split_first().expect("at least one axis");
    if rest.is_empty() {
        return line_autocorrelation(radius, *s0);
    }
    let m = radius.min(*s0);
    let theta_max = (m / radius).min(1.0).asin();
    let panels = ((radius * theta_max / cell).ceil() as usize).max(MIN_CELLS_PER_EDGE);
    let h = theta_max / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        for &(node, weight) in &GAUSS_NODES {
            let theta = mid + 0.5 * h * node;
            let (sin, cos) = theta.sin_cos();
            let x = radius * sin;
            total +=
                weight * (s0 - x) * ball_autocorrelation(rest, radius * cos, cell) * radius * cos;
        }
    }
    // Symmetric in x; each panel contributes h/2 times its weighted sum.
    total * h
}

fn excess_at(model: &CorrelationModel, v: &SmearingVolume, cells_per_length: usize) -> f64 {
    let cell = model.length() / cells_per_length as f64;
    let vol = v.volume();
    model
        .balls()
        .iter()
        .map(|&(r, a)| a * ball_autocorrelation(v.sides(), r, cell))
        .sum::<f64>()
        + model.background() * vol * vol
}

/// `C = integral over V x V of c(q1, q2)`, by quadrature refined once.
pub fn pair_excess(
    model: &CorrelationModel,
    v: &SmearingVolume,
    cells_per_length: usize,
) -> Result<QuadratureEstimate> {
    if cells_per_length < MIN_CELLS_PER_LENGTH {
        return Err(Error::arg(format!(
            "quadrature needs at least {MIN_CELLS_PER_LENGTH} cells per correlation length"
        )));
    }
    if !model.has_kernel() {
        return Ok(QuadratureEstimate {
            value: 0.0,
            error: 0.0,
            cells_per_length,
        });
    }
    let coarse = excess_at(model, v, cells_per_length);
    let fine = excess_at(model, v, 2 * cells_per_length);
    Ok(QuadratureEstimate {
        value: fine,
        error: (fine - coarse).abs(),
        cells_per_length: 2 * cells_per_length,
    })
}

/// Exact pair excess, valid when every box side is at least the kernel reach.
pub fn pair_excess_closed_form(model: &CorrelationModel, v: &SmearingVolume) -> Result<f64> {
    let d = model.dim();
    if v.sides().iter().any(|&s| s < model.max_radius()) {
        return Err(Error::arg(
            "closed form needs every box side at least the kernel reach",
        ));
    }
    let moment = |k: usize, r: f64| {
        std::f64::consts::PI.powf((d - k) as f64 / 2.0) / gamma((d + k) as f64 / 2.0 + 1.0)
            * r.powi((d + k) as i32)
    };
    let mut total = model.background() * v.volume() * v.volume();
    for &(r, a) in model.balls() {
        let mut integral = 0.0;
        for subset in 0u32..(1 << d) {
            let k = subset.count_ones() as usize;
            let rest: f64 = (0..d)
                .filter(|i| subset & (1 << i) == 0)
                .map(|i| v.sides()[i])
                .product();
            let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
            integral += sign * rest * moment(k, r);
        }
        total += a * integral;
    }
    Ok(total)
}

fn nonzero_fraction(model: &CorrelationModel, v: &SmearingVolume) -> Result<f64> {
    let f = window_fraction(model, v);
    if f.is_nan() || f <= 1e-300 {
        return Err(Error::ZeroMeanDensity);
    }
    Ok(f)
}

/// Ratio from the fraction `f` and excess `C` at `N` particles.
pub fn finite_n_ratio(f: f64, excess: f64, particles: f64) -> f64 {
    let n = particles;
    (n * n * excess + n * (f - f * f - excess)) / (n * f).powi(2)
}

/// `(Delta n_V)^2 / <n_V>^2` at `N` particles.
pub fn variance_ratio_finite_n(
    model: &CorrelationModel,
    v: &SmearingVolume,
    particles: u64,
) -> Result<f64> {
    if particles < 2 {
        return Err(Error::arg("finite-N ratio needs at least two particles"));
    }
    let f = nonzero_fraction(model, v)?;
    let c = pair_excess(model, v, DEFAULT_CELLS_PER_LENGTH)?.value;
    Ok(finite_n_ratio(f, c, particles as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitEstimate {
    pub ratio: f64,
    pub error: f64,
    pub fraction: f64,
    pub excess: f64,
    pub cells_per_length: usize,
}

/// Large-N ratio `C / f^2`.
pub fn variance_ratio_limit(model: &CorrelationModel, v: &SmearingVolume) -> Result<f64> {
    Ok(variance_ratio_limit_detailed(model, v, DEFAULT_CELLS_PER_LENGTH)?.ratio)
}

pub fn variance_ratio_limit_detailed(
    model: &CorrelationModel,
    v: &SmearingVolume,
    cells_per_length: usize,
) -> Result<LimitEstimate> {
    let f = nonzero_fraction(model, v)?;
    let q = pair_excess(model, v, cells_per_length)?;
    Ok(LimitEstimate {
        ratio: q.value / (f * f),
        error: q.error / (f * f),
        fraction: f,
        excess: q.value,
        cells_per_length: q.cells_per_length,
    })
}

pub fn variance_ratio_limit_closed_form(
    model: &CorrelationModel,
    v: &SmearingVolume,
) -> Result<f64> {
    let f = nonzero_fraction(model, v)?;
    Ok(pair_excess_closed_form(model, v)? / (f * f))
}

/// Least-squares `K` in `finite(N) - limit = K / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GapFit {
    pub k: f64,
    pub max_residual: f64,
    pub points: Vec<(u64, f64)>,
}

pub fn finite_n_gap(model: &CorrelationModel, v: &SmearingVolume, ns: &[u64]) -> Result<GapFit> {
    if ns.is_empty() {
        return Err(Error::Fit("no particle numbers".into()));
    }
    let limit = variance_ratio_limit(model, v)?;
    let points: Vec<(u64, f64)> = ns
        .iter()
        .map(|&n| Ok((n, variance_ratio_finite_n(model, v, n)? - limit)))
        .collect::<Result<_>>()?;
    let (num, den) = points.iter().fold((0.0, 0.0), |(a, b), &(n, g)| {
        let x = 1.0 / n as f64;
        (a + x * g, b + x * x)
    });
    let k = num / den;
    let max_residual = points
        .iter()
        .map(|&(n, g)| (g - k / n as f64).abs())
        .fold(0.0, f64::max);
    Ok(GapFit {
        k,
        max_residual,
        points,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub particles: u64,
    pub pairs: u64,
    pub samples: usize,
    pub batches: usize,
    pub seed: u64,
    pub mean: f64,
    pub variance: f64,
    /// Raw sampled ratio `s^2 / mean^2` of the pair construction.
    pub ratio: f64,
    pub ratio_stderr: f64,
    /// Estimated pair excess `C`.
    pub excess: f64,
    pub excess_stderr: f64,
    /// Finite-N ratio of the full moment structure, after the pairing correction.
    pub corrected_ratio: f64,
    pub corrected_stderr: f64,
    pub limit_ratio: f64,
    pub limit_stderr: f64,
    pub rejection_rate: f64,
}

struct Moments {
    count: u64,
    sum: u64,
    sum_sq: u128,
    proposals: u64,
    accepted: u64,
}

struct Derived {
    mean: f64,
    variance: f64,
    ratio: f64,
    excess: f64,
    corrected: f64,
    limit: f64,
}

fn derive(m: &Moments, n: u64, pairs: u64) -> Derived {
    let s = m.count as f64;
    let mean = m.sum as f64 / s;
    let variance = (m.sum_sq as f64 - s * mean * mean) / (s - 1.0);
    let nf = n as f64;
    let f = mean / nf;
    let excess = if pairs > 0 {
        (variance - nf * f * (1.0 - f)) / (2.0 * pairs as f64)
    } else {
        0.0
    };
    Derived {
        mean,
        variance,
        ratio: variance / (mean * mean),
        excess,
        corrected: finite_n_ratio(f, excess, nf),
        limit: excess / (f * f),
    }
}

struct PairSampler<'a> {
    model: &'a CorrelationModel,
    reach: f64,
    envelope: f64,
    inner_proposal: f64,
    outer_proposal: f64,
    gaussian: Option<(Normal, Vec<(f64, f64)>)>,
    table_cdf: Vec<f64>,
}

impl<'a> PairSampler<'a> {
    fn new(model: &'a CorrelationModel) -> Self {
        let vol = model.domain_volume();
        let base = 1.0 / (vol * vol);
        let reach = model.max_radius();
        let (envelope, inner_proposal, outer_proposal) = if model.has_kernel() {
            let inner = 0.5 * base + 0.5 / (vol * ball_volume(model.dim(), reach));
            let outer = 0.5 * base;
            let mut m: f64 = 0.0;
            for (r, c) in model.shell_values() {
                let g = if r.is_finite() { inner } else { outer };
                m = m.max((base + c) / g);
            }
            (m, inner, outer)
        } else {
            (1.0, 0.0, 0.0)
        };
        let gaussian = match model.p1() {
            OneParticleDensity::Gaussian { center, sigma } => {
                let unit = Normal::new(0.0, 1.0).expect("standard normal");
                let ranges = center
                    .iter()
                    .map(|&c| {
                        (
                            unit.cdf((0.0 - c) / sigma),
                            unit.cdf((model.side() - c) / sigma),
                        )
                    })
                    .collect();
                Some((unit, ranges))
            }
            _ => None,
        };
        let table_cdf = match model.p1() {
            OneParticleDensity::Tabulated { values, .. } => {
                let mut acc = 0.0;
                values
                    .iter()
                    .map(|v| {
                        acc += v;
                        acc
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        Self {
            model,
            reach,
            envelope,
            inner_proposal,
            outer_proposal,
            gaussian,
            table_cdf,
        }
    }

    fn one(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let side = self.model.side();
        match self.model.p1() {
            OneParticleDensity::Uniform => {
                for x in out.iter_mut() {
                    *x = rng.random::<f64>() * side;
                }
            }
            OneParticleDensity::Gaussian { center, sigma } => {
                let (unit, ranges) = self.gaussian.as_ref().expect("gaussian sampler");
                for ((x, &c), &(lo, hi)) in out.iter_mut().zip(center).zip(ranges) {
                    let u = lo + (hi - lo) * rng.random::<f64>();
                    *x = (c + sigma * unit.inverse_cdf(u)).clamp(0.0, side * (1.0 - 1e-15));
                }
            }
            OneParticleDensity::Tabulated { cells, .. } => {
                let total = *self.table_cdf.last().expect("non-empty table");
                let u = rng.random::<f64>() * total;
                let mut idx = self
                    .table_cdf
                    .partition_point(|&c| c <= u)
                    .min(self.table_cdf.len() - 1);
                let h = side / *cells as f64;
                for x in out.iter_mut().rev() {
                    *x = ((idx % cells) as f64 + rng.random::<f64>()) * h;
                    idx /= cells;
                }
            }
        }
    }

    fn ball_offset(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        loop {
            for x in out.iter_mut() {
                *x = (2.0 * rng.random::<f64>() - 1.0) * self.reach;
            }
            if out.iter().map(|x| x * x).sum::<f64>() <= self.reach * self.reach {
                return;
            }
        }
    }

    /// Draws a pair from `p2`; returns the number of proposals used.
    fn pair(&self, rng: &mut ChaCha8Rng, q1: &mut [f64], q2: &mut [f64]) -> u64 {
        if !self.model.has_kernel() {
            self.one(rng, q1);
            self.one(rng, q2);
            return 1;
        }
        let side = self.model.side();
        let base = 1.0 / self.model.domain_volume().powi(2);
        let mut proposals = 0;
        loop {
            proposals += 1;
            self.one(rng, q1);
            if rng.random::<bool>() {
                self.one(rng, q2);
            } else {
                self.ball_offset(rng, q2);
                for (y, &x) in q2.iter_mut().zip(q1.iter()) {
                    *y = (x + *y).rem_euclid(side);
                }
            }
            let r = self
                .model
                .displacement(q1, q2)
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            let g = if r <= self.reach {
                self.inner_proposal
            } else {
                self.outer_proposal
            };
            let target = base + self.model.kernel_at(r);
            if rng.random::<f64>() * self.envelope * g < target {
                return proposals;
            }
        }
    }
}

fn run_batch(
    sampler: &PairSampler,
    v: &SmearingVolume,
    particles: u64,
    samples: usize,
    seed: u64,
    batch: usize,
) -> Moments {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch as u64);
    let d = sampler.model.dim();
    let (mut q1, mut q2) = (vec![0.0; d], vec![0.0; d]);
    let pairs = particles / 2;
    let mut m = Moments {
        count: 0,
        sum: 0,
        sum_sq: 0,
        proposals: 0,
        accepted: 0,
    };
    for _ in 0..samples {
        let mut inside = 0u64;
        for _ in 0..pairs {
            m.proposals += sampler.pair(&mut rng, &mut q1, &mut q2);
            m.accepted += 1;
            inside += u64::from(v.contains(&q1)) + u64::from(v.contains(&q2));
        }
        if particles % 2 == 1 {
            sampler.one(&mut rng, &mut q1);
            inside += u64::from(v.contains(&q1));
        }
        m.count += 1;
        m.sum += inside;
        m.sum_sq += u128::from(inside) * u128::from(inside);
    }
    m
}

/// Monte Carlo estimate of the variance ratio from `floor(N/2)` independent
/// pairs drawn from `p2`, with batch-means standard errors.
pub fn mc_variance_oracle(
    model: &CorrelationModel,
    v: &SmearingVolume,
    particles: u64,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    mc_variance_oracle_batched(model, v, particles, samples, DEFAULT_MC_BATCHES, seed)
}

pub fn mc_variance_oracle_batched(
    model: &CorrelationModel,
    v: &SmearingVolume,
    particles: u64,
    samples: usize,
    batches: usize,
    seed: u64,
) -> Result<McEstimate> {
    if samples < MIN_MC_SAMPLES {
        return Err(Error::arg(format!(
            "need at least {MIN_MC_SAMPLES} samples"
        )));
    }
    if particles < 2 {
        return Err(Error::arg("need at least two particles"));
    }
    if batches < 2 || samples / batches < 2 {
        return Err(Error::arg("need at least two batches of two samples"));
    }
    nonzero_fraction(model, v)?;
    let sampler = PairSampler::new(model);
    let per = samples / batches;
    let extra = samples % batches;
    let parts: Vec<Moments> = (0..batches)
        .into_par_iter()
        .map(|b| {
            run_batch(
                &sampler,
                v,
                particles,
                per + usize::from(b < extra),
                seed,
                b,
            )
        })
        .collect();

    let pairs = particles / 2;
    let total = parts.iter().fold(
        Moments {
            count: 0,
            sum: 0,
            sum_sq: 0,
            proposals: 0,
            accepted: 0,
        },
        |a, m| Moments {
            count: a.count + m.count,
            sum: a.sum + m.sum,
            sum_sq: a.sum_sq + m.sum_sq,
            proposals: a.proposals + m.proposals,
            accepted: a.accepted + m.accepted,
        },
    );
    let rejection_rate = if total.proposals == 0 {
        0.0
    } else {
        1.0 - total.accepted as f64 / total.proposals as f64
    };
    if rejection_rate > MAX_REJECTION_RATE {
        return Err(Error::RejectionRate {
            rate: rejection_rate,
        });
    }
    let pooled = derive(&total, particles, pairs);
    let per_batch: Vec<Derived> = parts.iter().map(|m| derive(m, particles, pairs)).collect();
    let stderr = |get: fn(&Derived) -> f64| {
        let b = per_batch.len() as f64;
        let mean = per_batch.iter().map(get).sum::<f64>() / b;
        let var = per_batch
            .iter()
            .map(|d| (get(d) - mean).powi(2))
            .sum::<f64>()
            / (b - 1.0);
        (var / b).sqrt()
    };
    Ok(McEstimate {
        particles,
        pairs,
        samples,
        batches,
        seed,
        mean: pooled.mean,
        variance: pooled.variance,
        ratio: pooled.ratio,
        ratio_stderr: stderr(|d| d.ratio),
        excess: pooled.excess,
        excess_stderr: stderr(|d| d.excess),
        corrected_ratio: pooled.corrected,
        corrected_stderr: stderr(|d| d.corrected),
        limit_ratio: pooled.limit,
        limit_stderr: stderr(|d| d.limit),
        rejection_rate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub sweep: String,
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
}

/// Least-squares slope of `log(ratio)` against `log(x)`.
pub fn scaling_fit(sweep: &str, points: &[(f64, f64)]) -> Result<ScalingReport> {
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "{} points, need at least {MIN_FIT_POINTS}",
            points.len()
        )));
    }
    if let Some(&(x, y)) = points.iter().find(|&&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Fit(format!("non-positive point ({x}, {y})")));
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Fit("sweep grid must be strictly increasing".into()));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(ScalingReport {
        sweep: sweep.to_string(),
        points: points.to_vec(),
        slope,
        slope_stderr: (ssr / (n - 2.0) / sxx).sqrt(),
        intercept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn uniform(d: usize, side: f64, shape: KernelShape, c0: f64, l: f64) -> CorrelationModel {
        make_correlation_model(d, side, OneParticleDensity::Uniform, shape, c0, l).unwrap()
    }

    #[test]
    fn ball_volumes() {
        let pi = std::f64::consts::PI;
        assert_relative_eq!(ball_volume(1, 2.0), 4.0, max_relative = 1e-12);
        assert_relative_eq!(ball_volume(2, 1.0), pi, max_relative = 1e-12);
        assert_relative_eq!(ball_volume(3, 1.0), 4.0 / 3.0 * pi, max_relative = 1e-12);
    }

    #[test]
    fn zero_kernel_factorizes() {
        let m = uniform(2, 1.0, KernelShape::Zero, 5.0, 0.1);
        let (a, b) = ([0.1, 0.2], [0.12, 0.2]);
        assert_eq!(m.p2_value(&a, &b), m.p1_value(&a) * m.p1_value(&b));
    }

    #[test]
    fn oversized_amplitude_rejected() {
        // Positivity limit c0 * L <= 1 / Lambda for d = 1.
        assert!(make_correlation_model(
            1,
            1.0,
            OneParticleDensity::Uniform,
            KernelShape::TopHat,
            25.0,
            0.05
        )
        .is_err());
        assert!(make_correlation_model(
            1,
            1.0,
            OneParticleDensity::Uniform,
            KernelShape::TopHatShell,
            100.0,
            0.05
        )
        .is_err());
    }

    #[test]
    fn shell_kernel_invariants_and_lobe_mass() {
        let (c0, l) = (0.5, 0.05);
        let m = uniform(1, 1.0, KernelShape::TopHatShell, c0, l);
        assert!(m.marginal_defect() < 1e-12);
        assert_eq!(m.kernel_at(0.75 * l + 0.0), m.kernel_at(0.9 * l));
        assert!(m.kernel_at(0.9 * l) < 0.0);
        assert_eq!(m.kernel_at(1.01 * l), 0.0);
        // Grid quadrature of the positive lobe per unit q1.
        let n = 200_000;
        let h = 1.0 / n as f64;
        let lobe: f64 = (0..n)
            .map(|i| m.kernel(&[0.5], &[(i as f64 + 0.5) * h]).max(0.0) * h)
            .sum();
        assert_relative_eq!(lobe, c0 * l, max_relative = 1e-3);
        assert_relative_eq!(m.positive_lobe_mass(), c0 * l, max_relative = 1e-12);
    }

    #[test]
    fn nonuniform_p1_needs_zero_kernel() {
        let p1 = OneParticleDensity::Gaussian {
            center: vec![0.5],
            sigma: 0.1,
        };
        assert!(make_correlation_model(1, 1.0, p1.clone(), KernelShape::TopHat, 1.0, 0.1).is_err());
        assert!(make_correlation_model(1, 1.0, p1, KernelShape::Zero, 1.0, 0.1).is_ok());
    }

    #[test]
    fn tabulated_normalization_checked() {
        let bad = OneParticleDensity::Tabulated {
            cells: 2,
            values: vec![1.0, 1.5],
        };
        assert!(make_correlation_model(1, 1.0, bad, KernelShape::Zero, 0.0, 0.1).is_err());
    }

    #[test]
    fn uniform_mean_density() {
        let m = uniform(3, 2.0, KernelShape::Zero, 0.0, 0.1);
        let half = SmearingVolume::new(&m, vec![0.0; 3], vec![1.0, 2.0, 2.0]).unwrap();
        assert_relative_eq!(mean_density(&m, &half, 100), 50.0, epsilon = 1e-12);
        let full = SmearingVolume::cube(&m, 2.0).unwrap();
        assert_relative_eq!(mean_density(&m, &full, 100), 100.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_mean_density_matches_refined_midpoint() {
        let m = make_correlation_model(
            2,
            1.0,
            OneParticleDensity::Gaussian {
                center: vec![0.4, 0.55],
                sigma: 0.15,
            },
            KernelShape::Zero,
            0.0,
            0.1,
        )
        .unwrap();
        let v = SmearingVolume::new(&m, vec![0.3, 0.2], vec![0.4, 0.5]).unwrap();
        let midpoint = |n: usize| {
            let (hx, hy) = (0.4 / n as f64, 0.5 / n as f64);
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let q = [0.3 + (i as f64 + 0.5) * hx, 0.2 + (j as f64 + 0.5) * hy];
                    s += m.p1_value(&q);
                }
            }
            s * hx * hy
        };
        let (coarse, fine) = (midpoint(400), midpoint(800));
        let richardson = fine + (fine - coarse) / 3.0;
        assert!((window_fraction(&m, &v) - richardson).abs() < 1e-6);
        assert!((window_fraction(&m, &v) - fine).abs() < 1e-6);
    }

    #[test]
    fn zero_kernel_ratios() {
        let m = uniform(1, 1.0, KernelShape::Zero, 0.0, 0.1);
        let half = SmearingVolume::cube(&m, 0.5).unwrap();
        assert_relative_eq!(
            variance_ratio_finite_n(&m, &half, 100).unwrap(),
            0.01,
            epsilon = 1e-15
        );
        assert_eq!(variance_ratio_limit(&m, &half).unwrap(), 0.0);
        let full = SmearingVolume::cube(&m, 1.0).unwrap();
        assert_eq!(variance_ratio_finite_n(&m, &full, 100).unwrap(), 0.0);
        assert!(variance_ratio_finite_n(&m, &half, 1).is_err());
    }

    #[test]
    fn quadrature_matches_closed_form() {
        for d in 1..=3 {
            let m = uniform(d, 10.0, KernelShape::TopHatShell, 1e-7, 0.8);
            let v =
                SmearingVolume::new(&m, vec![1.0; d], vec![2.0, 2.5, 3.0][..d].to_vec()).unwrap();
            let q = pair_excess(&m, &v, 64).unwrap();
            let exact = pair_excess_closed_form(&m, &v).unwrap();
            assert!(
                (q.value - exact).abs() <= q.error.max(1e-12 * exact.abs()),
                "d={d}: {} vs {exact}",
                q.value
            );
            let t = uniform(d, 10.0, KernelShape::TopHat, 1e-7, 0.8);
            let q = pair_excess(&t, &v, 64).unwrap();
            let exact = pair_excess_closed_form(&t, &v).unwrap();
            assert!((q.value - exact).abs() <= q.error.max(1e-12 * exact.abs()));
        }
    }

    #[test]
    fn ratio_independent_of_l_inside_correlation_range() {
        let v_side = 0.01;
        let ratios: Vec<f64> = [0.2, 0.1]
            .iter()
            .map(|&l| {
                let m = uniform(1, 1.0, KernelShape::TopHatShell, 1.0, l);
                let v = SmearingVolume::cube(&m, v_side).unwrap();
                variance_ratio_limit(&m, &v).unwrap()
            })
            .collect();
        assert!((ratios[0] - ratios[1]).abs() < 1e-6, "{ratios:?}");
    }

    #[test]
    fn one_dimensional_asymptotic_ratio() {
        let (c0, l) = (500.0, 0.001);
        let m = uniform(1, 1.0, KernelShape::TopHat, c0, l);
        for v_side in [0.02, 0.01] {
            let v = SmearingVolume::cube(&m, v_side).unwrap();
            let asymptotic = c0 * l * v_side / (v_side * v_side);
            let r = variance_ratio_limit(&m, &v).unwrap();
            assert_relative_eq!(r, asymptotic, max_relative = 0.05);
        }
    }

    #[test]
    fn finite_n_approaches_limit() {
        let m = uniform(1, 1.0, KernelShape::TopHat, 500.0, 0.001);
        let v = SmearingVolume::cube(&m, 0.02).unwrap();
        let gap = finite_n_gap(&m, &v, &[1_000, 10_000, 100_000]).unwrap();
        assert!(gap.max_residual < 1e-12 * gap.k.abs().max(1.0));
        let f = 0.02;
        let c = pair_excess(&m, &v, DEFAULT_CELLS_PER_LENGTH).unwrap().value;
        assert_relative_eq!(gap.k, (f - f * f - c) / (f * f), max_relative = 1e-9);
    }

    #[test]
    fn exact_power_laws() {
        let pts: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, 3.0 / i as f64)).collect();
        assert_relative_eq!(scaling_fit("V", &pts).unwrap().slope, -1.0, epsilon = 1e-12);
        let pts: Vec<(f64, f64)> = (1..=5)
            .map(|i| (i as f64, 0.5 * (i as f64).powi(3)))
            .collect();
        assert_relative_eq!(scaling_fit("L", &pts).unwrap().slope, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(scaling_fit("N", &[(1.0, 1.0), (2.0, 0.5), (3.0, 0.3)]).is_err());
        assert!(scaling_fit("N", &[(1.0, 1.0), (2.0, 0.0), (3.0, 0.3), (4.0, 0.2)]).is_err());
        assert!(scaling_fit("N", &[(1.0, 1.0), (3.0, 0.5), (2.0, 0.3), (4.0, 0.2)]).is_err());
    }

    #[test]
    fn mc_zero_kernel_agrees_with_closed_form() {
        let m = uniform(1, 1.0, KernelShape::Zero, 0.0, 0.1);
        let v = SmearingVolume::cube(&m, 0.5).unwrap();
        let est = mc_variance_oracle(&m, &v, 100, 20_000, 7).unwrap();
        let exact = variance_ratio_finite_n(&m, &v, 100).unwrap();
        assert!(
            (est.ratio - exact).abs() <= 3.0 * est.ratio_stderr,
            "{est:?}"
        );
        assert!(est.limit_ratio.abs() <= 3.0 * est.limit_stderr);
        assert_eq!(est.rejection_rate, 0.0);
    }

    #[test]
    fn mc_is_deterministic() {
        let m = uniform(2, 1.0, KernelShape::TopHat, 20.0, 0.1);
        let v = SmearingVolume::cube(&m, 0.5).unwrap();
        let a = mc_variance_oracle(&m, &v, 11, 2_000, 42).unwrap();
        let b = mc_variance_oracle(&m, &v, 11, 2_000, 42).unwrap();
        assert_eq!(a, b);
        let c = mc_variance_oracle(&m, &v, 11, 2_000, 43).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn mc_rejects_small_sample_counts() {
        let m = uniform(1, 1.0, KernelShape::Zero, 0.0, 0.1);
        let v = SmearingVolume::cube(&m, 0.5).unwrap();
        assert!(mc_variance_oracle(&m, &v, 10, 999, 1).is_err());
    }
}
