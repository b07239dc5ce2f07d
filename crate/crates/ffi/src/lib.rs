//! C interface to `decohist`.
//!
//! Objects cross the boundary as opaque handles created by `dh_*_new`-style
//! functions and released with the matching `dh_*_free`. Every fallible call
//! returns a [`DhStatus`]; on failure, [`dh_last_error_message`] describes the
//! most recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use decohist::densities::{expectation_and_variance, DensitySpec, Window};
use decohist::dynamics::{build_hamiltonian, Evolver, HamiltonianSpec};
use decohist::harness::{emit_report, load_config, run_experiment, ReportFormat};
use decohist::histories::{
    bin_projectors, decoherence_functional, decoherence_measure, DecoherenceMatrix, HistorySpec,
};
use decohist::lattice::{
    build_lattice, product_state, superpose, ManyBodyState, OneParticleState, C64,
};
use decohist::statistics::{
    make_correlation_model, variance_ratio_finite_n, variance_ratio_limit, KernelShape,
    OneParticleDensity, SmearingVolume,
};
use decohist::Error;

pub const DH_KERNEL_ZERO: u32 = 0;
pub const DH_KERNEL_TOP_HAT: u32 = 1;
pub const DH_KERNEL_TOP_HAT_SHELL: u32 = 2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    CapExceeded = 3,
    /// Bins, histories or negative probabilities.
    History = 4,
    /// Correlation model, quadrature, sampling or fit.
    Statistics = 5,
    Config = 6,
    Io = 7,
    /// The experiment ran but at least one invariant check failed.
    InvariantFailed = 8,
    Panic = 9,
}

/// Many-body state.
pub struct DhState(ManyBodyState);

/// Hamiltonian together with its propagator.
pub struct DhHamiltonian(Evolver);

/// Decoherence functional over all alternative strings.
pub struct DhDecoherence(DecoherenceMatrix);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn status_of(err: &Error) -> DhStatus {
    match err {
        Error::CapExceeded { .. } => DhStatus::CapExceeded,
        Error::EigenvalueOnEdge { .. }
        | Error::InvalidBins(_)
        | Error::InvalidHistory(_)
        | Error::NegativeProbability { .. } => DhStatus::History,
        Error::InvalidModel(_)
        | Error::ZeroMeanDensity
        | Error::RejectionRate { .. }
        | Error::Fit(_) => DhStatus::Statistics,
        Error::Config { .. } => DhStatus::Config,
        Error::Output { .. } => DhStatus::Io,
        _ => DhStatus::InvalidArgument,
    }
}

struct Failure(DhStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DhStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> DhStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => DhStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            DhStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(DhStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or null if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dh_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// `particles` copies of a Gaussian packet on a ring of `sites` sites.
///
/// # Safety
/// `out` must be a valid pointer to write the new handle to.
#[no_mangle]
pub unsafe extern "C" fn dh_state_gaussian_product(
    sites: usize,
    center: f64,
    width: f64,
    momentum: f64,
    particles: usize,
    out: *mut *mut DhState,
) -> DhStatus {
    guard(|| {
        let lattice = build_lattice(sites, 1.0)?;
        let psi = OneParticleState::gaussian_packet(lattice, center, width, momentum)?;
        let state = product_state(&psi, particles)?;
        write_out(out, Box::into_raw(Box::new(DhState(state))), "out")
    })
}

/// State from `sites^particles` amplitudes given as real and imaginary parts.
/// The result is normalized.
///
/// # Safety
/// `re` and `im` must point to `len` doubles each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dh_state_from_amplitudes(
    sites: usize,
    particles: usize,
    re: *const f64,
    im: *const f64,
    len: usize,
    out: *mut *mut DhState,
) -> DhStatus {
    guard(|| {
        let re = slice(re, len, "re")?;
        let im = slice(im, len, "im")?;
        let lattice = build_lattice(sites, 1.0)?;
        let amps = re.iter().zip(im).map(|(&r, &i)| C64::new(r, i)).collect();
        let state = ManyBodyState::from_amplitudes(lattice, particles, amps)?;
        write_out(out, Box::into_raw(Box::new(DhState(state))), "out")
    })
}

/// Normalized `w_a |a> + w_b |b>`. `overlap_re`/`overlap_im` receive `<a|b>`
/// and may be null.
///
/// # Safety
/// `a` and `b` must be live state handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dh_state_superpose(
    a: *const DhState,
    b: *const DhState,
    wa_re: f64,
    wa_im: f64,
    wb_re: f64,
    wb_im: f64,
    overlap_re: *mut f64,
    overlap_im: *mut f64,
    out: *mut *mut DhState,
) -> DhStatus {
    guard(|| {
        let (a, b) = (handle(a, "a")?, handle(b, "b")?);
        let s = superpose(&a.0, &b.0, C64::new(wa_re, wa_im), C64::new(wb_re, wb_im))?;
        if !overlap_re.is_null() {
            overlap_re.write(s.overlap.re);
        }
        if !overlap_im.is_null() {
            overlap_im.write(s.overlap.im);
        }
        write_out(out, Box::into_raw(Box::new(DhState(s.state))), "out")
    })
}

/// Number of amplitudes, or 0 for a null handle.
///
/// # Safety
/// `state` must be null or a live state handle.
#[no_mangle]
pub unsafe extern "C" fn dh_state_dim(state: *const DhState) -> usize {
    state.as_ref().map_or(0, |s| s.0.dim())
}

/// Copies the amplitudes into `re` and `im`, each of length `len >= dim`.
///
/// # Safety
/// `state` must be a live handle; `re` and `im` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dh_state_amplitudes(
    state: *const DhState,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> DhStatus {
    guard(|| {
        let s = handle(state, "state")?;
        let amps = s.0.amplitudes();
        if len < amps.len() {
            return Err(Failure(
                DhStatus::InvalidArgument,
                format!("buffers hold {len} values, need {}", amps.len()),
            ));
        }
        if re.is_null() || im.is_null() {
            return Err(null("amplitude buffer"));
        }
        for (k, z) in amps.iter().enumerate() {
            re.add(k).write(z.re);
            im.add(k).write(z.im);
        }
        Ok(())
    })
}

/// # Safety
/// `state` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dh_state_free(state: *mut DhState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Hamiltonian on a ring with unit mass, spacing and hbar.
///
/// `potential[r]` is the pair energy at site distance `r`; `detached` lists
/// sites with their hopping links removed. Either array may be empty.
///
/// # Safety
/// Arrays must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dh_hamiltonian_new(
    sites: usize,
    particles: usize,
    potential: *const f64,
    potential_len: usize,
    detached: *const usize,
    detached_len: usize,
    out: *mut *mut DhHamiltonian,
) -> DhStatus {
    guard(|| {
        let potential = slice(potential, potential_len, "potential")?.to_vec();
        let detached = slice(detached, detached_len, "detached")?.to_vec();
        let lattice = build_lattice(sites, 1.0)?;
        let spec = HamiltonianSpec {
            range: potential.len().saturating_sub(1),
            potential,
            detached_sites: detached,
            ..HamiltonianSpec::free()
        };
        let h = build_hamiltonian(&spec, &lattice, particles)?;
        write_out(
            out,
            Box::into_raw(Box::new(DhHamiltonian(Evolver::new(&h)))),
            "out",
        )
    })
}

/// # Safety
/// `h` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dh_hamiltonian_free(h: *mut DhHamiltonian) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Evolves `state` by time `t`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dh_evolve(
    h: *const DhHamiltonian,
    state: *const DhState,
    t: f64,
    out: *mut *mut DhState,
) -> DhStatus {
    guard(|| {
        let (h, s) = (handle(h, "hamiltonian")?, handle(state, "state")?);
        let evolved = h.0.evolve(&s.0, t)?;
        write_out(out, Box::into_raw(Box::new(DhState(evolved))), "out")
    })
}

/// Mean, variance and peaking ratio of the particle number in sites
/// `start .. start + len` (mod sites). The ratio is NaN when the mean vanishes.
///
/// # Safety
/// `state` must be live; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dh_number_peaking(
    state: *const DhState,
    start: usize,
    len: usize,
    mean: *mut f64,
    variance: *mut f64,
    ratio: *mut f64,
) -> DhStatus {
    guard(|| {
        let s = handle(state, "state")?;
        let lattice = *s.0.lattice();
        let obs = DensitySpec::Number(Window::new(&lattice, start, len)?).build(
            &lattice,
            s.0.particles(),
            None,
        )?;
        let stats = expectation_and_variance(&s.0, &obs)?;
        write_out(mean, stats.mean, "mean")?;
        write_out(variance, stats.variance, "variance")?;
        write_out(ratio, stats.ratio.unwrap_or(f64::NAN), "ratio")
    })
}

/// Decoherence functional of histories that bin the particle number in a
/// window at each of `times`, all with the same `edges`.
///
/// # Safety
/// Handles must be live; arrays must hold the stated lengths; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dh_decoherence_number(
    state: *const DhState,
    h: *const DhHamiltonian,
    start: usize,
    len: usize,
    edges: *const f64,
    edges_len: usize,
    times: *const f64,
    times_len: usize,
    out: *mut *mut DhDecoherence,
) -> DhStatus {
    guard(|| {
        let (s, h) = (handle(state, "state")?, handle(h, "hamiltonian")?);
        let edges = slice(edges, edges_len, "edges")?;
        let times = slice(times, times_len, "times")?.to_vec();
        let lattice = *s.0.lattice();
        let obs = DensitySpec::Number(Window::new(&lattice, start, len)?).build(
            &lattice,
            s.0.particles(),
            None,
        )?;
        let family = bin_projectors(&obs, edges)?;
        let spec = HistorySpec::repeated(times, family)?;
        let d = decoherence_functional(&s.0, &spec, &h.0)?;
        write_out(out, Box::into_raw(Box::new(DhDecoherence(d))), "out")
    })
}

/// Number of alternative strings, or 0 for a null handle.
///
/// # Safety
/// `d` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn dh_decoherence_len(d: *const DhDecoherence) -> usize {
    d.as_ref().map_or(0, |d| d.0.len())
}

/// `D(alpha_i, alpha_j)`, alternatives in lexicographic order.
///
/// # Safety
/// `d` must be live; `re` and `im` writable.
#[no_mangle]
pub unsafe extern "C" fn dh_decoherence_get(
    d: *const DhDecoherence,
    i: usize,
    j: usize,
    re: *mut f64,
    im: *mut f64,
) -> DhStatus {
    guard(|| {
        let d = handle(d, "decoherence")?;
        let n = d.0.len();
        if i >= n || j >= n {
            return Err(Failure(
                DhStatus::InvalidArgument,
                format!("index ({i}, {j}) outside {n} x {n}"),
            ));
        }
        let z = d.0.get(i, j);
        write_out(re, z.re, "re")?;
        write_out(im, z.im, "im")
    })
}

/// Largest normalized off-diagonal magnitude and largest raw `|D|` off the
/// diagonal. Either output may be null.
///
/// # Safety
/// `d` must be live.
#[no_mangle]
pub unsafe extern "C" fn dh_decoherence_measure(
    d: *const DhDecoherence,
    epsilon: *mut f64,
    max_offdiag: *mut f64,
) -> DhStatus {
    guard(|| {
        let d = handle(d, "decoherence")?;
        if !epsilon.is_null() {
            epsilon.write(decoherence_measure(&d.0));
        }
        if !max_offdiag.is_null() {
            max_offdiag.write(d.0.max_off_diagonal());
        }
        Ok(())
    })
}

/// # Safety
/// `d` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dh_decoherence_free(d: *mut DhDecoherence) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

fn kernel_shape(kernel: u32) -> Result<KernelShape, Failure> {
    match kernel {
        DH_KERNEL_ZERO => Ok(KernelShape::Zero),
        DH_KERNEL_TOP_HAT => Ok(KernelShape::TopHat),
        DH_KERNEL_TOP_HAT_SHELL => Ok(KernelShape::TopHatShell),
        other => Err(Failure(
            DhStatus::InvalidArgument,
            format!("unknown kernel {other}"),
        )),
    }
}

fn uniform_setup(
    dim: usize,
    box_side: f64,
    kernel: u32,
    amplitude: f64,
    length: f64,
    volume_side: f64,
) -> Result<(decohist::statistics::CorrelationModel, SmearingVolume), Failure> {
    let model = make_correlation_model(
        dim,
        box_side,
        OneParticleDensity::Uniform,
        kernel_shape(kernel)?,
        amplitude,
        length,
    )?;
    let v = SmearingVolume::cube(&model, volume_side)?;
    Ok((model, v))
}

/// Large-N variance ratio for a uniform density in a periodic box of side
/// `box_side`, smeared over a cube of side `volume_side`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dh_variance_ratio_limit(
    dim: usize,
    box_side: f64,
    kernel: u32,
    amplitude: f64,
    length: f64,
    volume_side: f64,
    out: *mut f64,
) -> DhStatus {
    guard(|| {
        let (model, v) = uniform_setup(dim, box_side, kernel, amplitude, length, volume_side)?;
        write_out(out, variance_ratio_limit(&model, &v)?, "out")
    })
}

/// Variance ratio at `particles` particles for the same setup as
/// [`dh_variance_ratio_limit`].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dh_variance_ratio_finite_n(
    dim: usize,
    box_side: f64,
    kernel: u32,
    amplitude: f64,
    length: f64,
    volume_side: f64,
    particles: u64,
    out: *mut f64,
) -> DhStatus {
    guard(|| {
        let (model, v) = uniform_setup(dim, box_side, kernel, amplitude, length, volume_side)?;
        write_out(out, variance_ratio_finite_n(&model, &v, particles)?, "out")
    })
}

/// Runs the experiment in the config file at `config_path` and writes its
/// CSVs and summary to `out_dir`, or to the config's `output.dir` when
/// `out_dir` is null. Returns `InvariantFailed` if any check failed.
///
/// # Safety
/// `config_path` must be a nul-terminated string; `out_dir` null or one.
#[no_mangle]
pub unsafe extern "C" fn dh_run_experiment(
    config_path: *const c_char,
    out_dir: *const c_char,
) -> DhStatus {
    guard(|| {
        let path = path_arg(config_path, "config_path")?;
        let loaded = load_config(Path::new(path))?;
        let dir = if out_dir.is_null() {
            loaded.config.output.dir.clone()
        } else {
            path_arg(out_dir, "out_dir")?.to_string()
        };
        let report = run_experiment(&loaded)?;
        emit_report(&report, Path::new(&dir), ReportFormat::Csv)?;
        emit_report(&report, Path::new(&dir), ReportFormat::TextSummary)?;
        if report.all_passed() {
            Ok(())
        } else {
            let failed: Vec<&str> = report
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| c.name.as_str())
                .collect();
            Err(Failure(
                DhStatus::InvariantFailed,
                format!("failed checks: {}", failed.join(", ")),
            ))
        }
    })
}
