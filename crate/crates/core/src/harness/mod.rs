//! Experiment orchestration for both tiers.

pub mod config;
pub mod report;

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

pub use config::{
    load_config, parse_config, ExperimentConfig, LoadedConfig, Pipeline, SweepMethod,
    SweepVariable, Tier,
};
pub use report::{emit_report, Check, ReportFormat, RunReport};

use crate::densities::{
    expectation_and_variance, DensitySpec, FourierMode, PairAssignment, Window,
};
use crate::dynamics::{build_hamiltonian_with_cap, Evolver, HamiltonianSpec, PropagationMethod};
use crate::error::{Error, Result};
use crate::histories::{
    alternative_label, bin_projectors, decoherence_functional, decoherence_measure,
    distinct_eigenvalues, fmt_num, history_probabilities, regular_edges, HistorySpec,
    ProjectorFamily,
};
use crate::lattice::{
    build_lattice, product_state_with_cap, superpose, Lattice, ManyBodyState, OneParticleState, C64,
};
use crate::statistics::{
    finite_n_gap, finite_n_ratio, make_correlation_model, mc_variance_oracle_batched, pair_excess,
    pair_excess_closed_form, scaling_fit, window_fraction, CorrelationModel, KernelShape,
    OneParticleDensity, QuadratureEstimate, ScalingReport, SmearingVolume, PAIRING_CORRECTION,
};
use config::{
    FactorSection, ModelSection, ObservableKind, P1Key, PairAssignmentKey, PropagationKey,
    StateSection,
};

/// Bundled demo configs, by name.
pub const DEMOS: &[(&str, &str)] = &[
    (
        "exact_conserved",
        include_str!("../../configs/exact_conserved.cfg"),
    ),
    ("exact_trend", include_str!("../../configs/exact_trend.cfg")),
    ("exact_clt", include_str!("../../configs/exact_clt.cfg")),
    ("stat_clt", include_str!("../../configs/stat_clt.cfg")),
    ("stat_limit", include_str!("../../configs/stat_limit.cfg")),
    ("stat_oracle", include_str!("../../configs/stat_oracle.cfg")),
    (
        "stat_scaling_V",
        include_str!("../../configs/stat_scaling_V.cfg"),
    ),
    (
        "stat_scaling_L",
        include_str!("../../configs/stat_scaling_L.cfg"),
    ),
    (
        "stat_scaling_V_1d",
        include_str!("../../configs/stat_scaling_V_1d.cfg"),
    ),
    (
        "stat_scaling_L_1d",
        include_str!("../../configs/stat_scaling_L_1d.cfg"),
    ),
];

pub fn demo_source(name: &str) -> Option<&'static str> {
    DEMOS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load_demo(name: &str) -> Result<LoadedConfig> {
    let source = demo_source(name).ok_or_else(|| Error::Config {
        path: format!("demo:{name}"),
        line: 0,
        message: format!("no bundled demo named `{name}`"),
    })?;
    parse_config(&format!("demo:{name}.cfg"), source)
}

type Outcome = (Vec<(String, String)>, Vec<Check>);

pub fn run_experiment(loaded: &LoadedConfig) -> Result<RunReport> {
    let start = Instant::now();
    let c = &loaded.config;
    let (tables, checks) = match c.pipeline {
        Pipeline::Histories => run_histories(loaded)?,
        Pipeline::Peaking => run_peaking(loaded)?,
        Pipeline::Sweep => run_sweep(loaded)?,
        Pipeline::Oracle => run_oracle(loaded)?,
        Pipeline::Limit => run_limit(loaded)?,
    };
    Ok(RunReport {
        name: c.name.clone(),
        config_hash: c.hash(),
        seed: c.seed,
        config_text: c.materialized(),
        tables,
        checks,
        wall_clock: start.elapsed(),
    })
}

fn num_or_na(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), fmt_num)
}

// ---------------------------------------------------------------- exact tier

fn lattice_of(loaded: &LoadedConfig) -> Result<Lattice> {
    let l = loaded.config.lattice.as_ref().expect("validated");
    build_lattice(l.sites, l.spacing).map_err(|e| loaded.config_error("lattice", e.to_string()))
}

fn hamiltonian_spec(loaded: &LoadedConfig) -> HamiltonianSpec {
    let h = loaded.config.hamiltonian.clone().unwrap_or_default();
    HamiltonianSpec {
        mass: h.mass,
        hbar: h.hbar,
        potential: h.potential,
        range: h.range,
        detached_sites: h.detached_sites,
    }
}

fn factor_state(
    loaded: &LoadedConfig,
    lattice: Lattice,
    factor: &FactorSection,
    key: &str,
) -> Result<OneParticleState> {
    let built = match factor {
        FactorSection::Gaussian {
            center,
            width,
            momentum,
        } => OneParticleState::gaussian_packet(lattice, *center, *width, *momentum),
        FactorSection::Site { site } => OneParticleState::site(lattice, *site),
        FactorSection::Window {
            start,
            len,
            momentum,
        } => Window::new(&lattice, *start, *len).and_then(|w| {
            let mut amps = vec![C64::new(0.0, 0.0); lattice.sites()];
            for j in w.sites_iter() {
                amps[j] = C64::from_polar(1.0, momentum * lattice.position(j));
            }
            OneParticleState::from_amplitudes(lattice, amps)
        }),
        FactorSection::Amplitudes { re, im } => {
            if !im.is_empty() && im.len() != re.len() {
                return Err(loaded.config_error(key, "`re` and `im` differ in length"));
            }
            let amps = re
                .iter()
                .enumerate()
                .map(|(j, &r)| C64::new(r, im.get(j).copied().unwrap_or(0.0)))
                .collect();
            OneParticleState::from_amplitudes(lattice, amps)
        }
    };
    built.map_err(|e| loaded.config_error(key, e.to_string()))
}

struct Branches {
    initial: ManyBodyState,
    parts: Vec<(&'static str, ManyBodyState)>,
}

fn initial_state(
    loaded: &LoadedConfig,
    lattice: Lattice,
    state: &StateSection,
    particles: usize,
) -> Result<Branches> {
    let a_factor = factor_state(loaded, lattice, &state.a, "state.a")?;
    let a = product_state_with_cap(&a_factor, particles, state.cap)?;
    let Some(b_section) = &state.b else {
        return Ok(Branches {
            initial: a.clone(),
            parts: vec![("a", a)],
        });
    };
    let b_factor = factor_state(loaded, lattice, b_section, "state.b")?;
    let b = product_state_with_cap(&b_factor, particles, state.cap)?;
    let sup = superpose(
        &a,
        &b,
        C64::new(state.weight_a, 0.0),
        C64::new(state.weight_b, 0.0),
    )
    .map_err(|e| loaded.config_error("state", e.to_string()))?;
    Ok(Branches {
        initial: sup.state,
        parts: vec![("a", a), ("b", b)],
    })
}

fn density_spec(loaded: &LoadedConfig, lattice: &Lattice) -> Result<DensitySpec> {
    let o = loaded.config.observable.as_ref().expect("validated");
    let window = || -> Result<Window> {
        let start = o.start.unwrap_or(0);
        let len = o.len.unwrap_or(lattice.sites());
        Window::new(lattice, start, len)
            .map_err(|e| loaded.config_error("observable", e.to_string()))
    };
    Ok(match o.kind {
        ObservableKind::Number => DensitySpec::Number(window()?),
        ObservableKind::Momentum => DensitySpec::Momentum(window()?),
        ObservableKind::Energy => DensitySpec::Energy(
            window()?,
            match o.pair_assignment {
                PairAssignmentKey::Forward => PairAssignment::Forward,
                PairAssignmentKey::Split => PairAssignment::Split,
            },
        ),
        ObservableKind::Fourier => {
            let mode = o
                .mode
                .ok_or_else(|| loaded.config_error("observable", "fourier kind needs `mode`"))?;
            DensitySpec::FourierNumber(FourierMode::from_index(lattice, mode))
        }
    })
}

fn run_histories(loaded: &LoadedConfig) -> Result<Outcome> {
    let c = &loaded.config;
    let lattice = lattice_of(loaded)?;
    let state = c.state.as_ref().expect("validated");
    let particles = state.particles.expect("validated");
    let spec = hamiltonian_spec(loaded);
    let hamiltonian =
        build_hamiltonian_with_cap(&spec, &lattice, particles, state.cap).map_err(|e| match e {
            Error::CapExceeded { .. } => e,
            other => loaded.config_error("hamiltonian", other.to_string()),
        })?;
    let evolver = match c
        .propagation
        .as_ref()
        .map_or(PropagationKey::Auto, |p| p.method)
    {
        PropagationKey::Auto => Evolver::new(&hamiltonian),
        PropagationKey::Diagonalization => {
            Evolver::with_method(&hamiltonian, PropagationMethod::Diagonalization)
        }
        PropagationKey::Taylor => {
            Evolver::with_method(&hamiltonian, PropagationMethod::TaylorAction)
        }
    };
    let obs = density_spec(loaded, &lattice)?.build(&lattice, particles, Some(&spec))?;
    let branches = initial_state(loaded, lattice, state, particles)?;
    let hist = c.histories.as_ref().expect("validated");
    let bins = c.bins.as_ref().expect("validated");

    let mut families: Vec<(String, ProjectorFamily)> = Vec::new();
    if let Some(edges) = &bins.edges {
        let fam = bin_projectors(&obs, edges)
            .map_err(|e| loaded.config_error("bins.edges", e.to_string()))?;
        families.push((String::new(), fam));
    } else {
        let spectrum = distinct_eigenvalues(obs.operator());
        let top = *spectrum.last().expect("non-empty spectrum");
        let offset = bins.offset.expect("validated");
        let base = bins.width.expect("validated");
        for m in 0..=bins.doublings {
            let width = base * 2f64.powi(m as i32);
            let fam = regular_edges(offset, width, top)
                .and_then(|edges| bin_projectors(&obs, &edges))
                .map_err(|e| loaded.config_error("bins", e.to_string()))?;
            families.push((format!("w{m}"), fam));
        }
    }

    let mut tables = Vec::new();
    let mut checks = Vec::new();
    let mut eps_table =
        String::from("family,bin_width,bins,epsilon,max_offdiag,offdiag_sum,warning\n");
    let mut epsilons = Vec::new();
    let multi = families.len() > 1;
    for (label, fam) in &families {
        let suffix = if multi {
            format!("[{label}]")
        } else {
            String::new()
        };
        let file_suffix = if label.is_empty() {
            String::new()
        } else {
            format!("_{label}")
        };
        let spec = HistorySpec::repeated(hist.times.clone(), fam.clone())
            .map_err(|e| loaded.config_error("histories.times", e.to_string()))?;
        let d = decoherence_functional(&branches.initial, &spec, &evolver)?;
        let probs = history_probabilities(&d, hist.threshold)?;
        let eps = decoherence_measure(&d);
        epsilons.push(eps);
        let total = d.total();
        checks.push(Check::at_most(
            format!("hermiticity_defect{suffix}"),
            d.hermiticity_defect(),
            c.checks.hermiticity,
        ));
        checks.push(Check::at_least(
            format!("min_diagonal{suffix}"),
            d.min_diagonal(),
            c.checks.min_diagonal,
        ));
        checks.push(Check::at_most(
            format!("sum_D_defect{suffix}"),
            (total - C64::new(1.0, 0.0)).norm(),
            c.checks.total,
        ));
        checks.push(Check::at_most(
            format!("sum_p_defect{suffix}"),
            (probs.total() - 1.0).abs(),
            c.checks.probability_sum,
        ));
        if let Some(limit) = c.checks.max_offdiag {
            checks.push(Check::at_most(
                format!("max_offdiag_abs_D{suffix}"),
                d.max_off_diagonal(),
                limit,
            ));
        }
        let _ = writeln!(
            eps_table,
            "{},{},{},{},{},{},{}",
            if label.is_empty() { "single" } else { label },
            fmt_num(fam.bin_width()),
            fam.len(),
            fmt_num(eps),
            fmt_num(d.max_off_diagonal()),
            fmt_num(d.off_diagonal_sum()),
            probs.warning
        );
        tables.push((format!("decoherence{file_suffix}.csv"), d.to_csv()));
        let mut ptable = String::from("alpha,probability\n");
        for (alpha, p) in probs.alternatives.iter().zip(&probs.probabilities) {
            let _ = writeln!(ptable, "{},{}", alternative_label(alpha), fmt_num(*p));
        }
        tables.push((format!("probabilities{file_suffix}.csv"), ptable));
    }
    tables.push(("epsilon.csv".into(), eps_table));

    if c.checks.epsilon_trend {
        let worst = epsilons
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        let enough = epsilons.len() >= 3;
        checks.push(Check::holds(
            "epsilon_strictly_decreasing",
            worst,
            enough && worst < 0.0,
            "< 0 over >= 3 widths",
        ));
    }
    if c.checks.widest_below_threshold {
        let last = *epsilons.last().expect("at least one family");
        checks.push(Check::holds(
            "widest_epsilon_below_threshold",
            last,
            last < hist.threshold,
            &format!("< {}", fmt_num(hist.threshold)),
        ));
    }

    // The complement ratio measures peaking against the top of the spectrum,
    // i.e. for a number window, the particles outside it.
    let top = *distinct_eigenvalues(obs.operator())
        .last()
        .expect("non-empty spectrum");
    let mut btable = String::from("branch,time,mean,variance,ratio,complement_ratio\n");
    let mut worst_peaking = 0.0f64;
    let mut times = vec![0.0];
    times.extend(&hist.times);
    for (name, state) in &branches.parts {
        for &t in &times {
            let evolved = evolver.evolve(state, t)?;
            let s = expectation_and_variance(&evolved, &obs)?;
            let gap = top - s.mean;
            let complement = (gap > 0.0).then(|| s.variance / (gap * gap));
            let best = [s.ratio, complement]
                .into_iter()
                .flatten()
                .fold(f64::INFINITY, f64::min);
            worst_peaking = worst_peaking.max(best);
            let _ = writeln!(
                btable,
                "{name},{},{},{},{},{}",
                fmt_num(t),
                fmt_num(s.mean),
                fmt_num(s.variance),
                num_or_na(s.ratio),
                num_or_na(complement)
            );
        }
    }
    if let Some(limit) = c.checks.branch_peaking {
        checks.push(Check::at_most("branch_peaking_ratio", worst_peaking, limit));
    }
    tables.push(("branches.csv".into(), btable));
    Ok((tables, checks))
}

fn fit_footer(out: &mut String, fit: &ScalingReport) {
    let _ = writeln!(out, "# fit sweep = {}", fit.sweep);
    let _ = writeln!(out, "# fit points = {}", fit.points.len());
    let _ = writeln!(out, "# fit slope = {}", fmt_num(fit.slope));
    let _ = writeln!(out, "# fit slope_stderr = {}", fmt_num(fit.slope_stderr));
    let _ = writeln!(out, "# fit intercept = {}", fmt_num(fit.intercept));
}

fn slope_check(loaded: &LoadedConfig, fit: &ScalingReport) -> Option<Check> {
    let c = &loaded.config.checks;
    Some(Check::within(
        format!("slope_{}", fit.sweep),
        fit.slope,
        c.slope?,
        c.slope_tolerance?,
    ))
}

fn run_peaking(loaded: &LoadedConfig) -> Result<Outcome> {
    let c = &loaded.config;
    let lattice = lattice_of(loaded)?;
    let state = c.state.as_ref().expect("validated");
    let factor = factor_state(loaded, lattice, &state.a, "state.a")?;
    let ns = &c.peaking.as_ref().expect("validated").particles;
    let spec = hamiltonian_spec(loaded);
    let density = density_spec(loaded, &lattice)?;
    let mut table = String::from("particles,mean,variance,ratio\n");
    let mut points = Vec::new();
    for &n in ns {
        let psi = product_state_with_cap(&factor, n, state.cap)?;
        let obs = density.build(&lattice, n, Some(&spec))?;
        let s = expectation_and_variance(&psi, &obs)?;
        let _ = writeln!(
            table,
            "{n},{},{},{}",
            fmt_num(s.mean),
            fmt_num(s.variance),
            num_or_na(s.ratio)
        );
        let ratio = s
            .ratio
            .ok_or_else(|| Error::Fit(format!("mean vanishes at N = {n}")))?;
        points.push((n as f64, ratio));
    }
    let fit = scaling_fit("N", &points)?;
    fit_footer(&mut table, &fit);
    let checks = slope_check(loaded, &fit).into_iter().collect();
    Ok((vec![("peaking.csv".into(), table)], checks))
}

// ----------------------------------------------------------- statistical tier

fn model_of(loaded: &LoadedConfig, length: Option<f64>) -> Result<CorrelationModel> {
    let m: &ModelSection = loaded.config.model.as_ref().expect("validated");
    let p1 = match m.p1 {
        P1Key::Uniform => OneParticleDensity::Uniform,
        P1Key::Gaussian => OneParticleDensity::Gaussian {
            center: m
                .p1_center
                .clone()
                .ok_or_else(|| loaded.config_error("model", "gaussian p1 needs `p1_center`"))?,
            sigma: m
                .p1_sigma
                .ok_or_else(|| loaded.config_error("model", "gaussian p1 needs `p1_sigma`"))?,
        },
        P1Key::Tabulated => OneParticleDensity::Tabulated {
            cells: m
                .p1_cells
                .ok_or_else(|| loaded.config_error("model", "tabulated p1 needs `p1_cells`"))?,
            values: m
                .p1_values
                .clone()
                .ok_or_else(|| loaded.config_error("model", "tabulated p1 needs `p1_values`"))?,
        },
    };
    let shape = KernelShape::parse(&m.kernel).expect("validated");
    make_correlation_model(
        m.dim,
        m.side,
        p1,
        shape,
        m.amplitude,
        length.unwrap_or(m.length),
    )
    .map_err(|e| loaded.config_error("model", e.to_string()))
}

fn zero_kernel(model: &CorrelationModel) -> Result<CorrelationModel> {
    make_correlation_model(
        model.dim(),
        model.side(),
        model.p1().clone(),
        KernelShape::Zero,
        0.0,
        model.length(),
    )
}

fn volume_of(
    loaded: &LoadedConfig,
    model: &CorrelationModel,
    volume: Option<f64>,
) -> Result<SmearingVolume> {
    let section = loaded.config.volume.as_ref();
    let origin = section
        .and_then(|s| s.origin.clone())
        .unwrap_or_else(|| vec![0.0; model.dim()]);
    let sides = match (volume, section) {
        (Some(v), _) => vec![v.powf(1.0 / model.dim() as f64); model.dim()],
        (None, Some(s)) => match (&s.sides, s.side) {
            (Some(sides), None) => sides.clone(),
            (None, Some(side)) => vec![side; model.dim()],
            _ => {
                return Err(loaded.config_error("volume", "give exactly one of `side` and `sides`"))
            }
        },
        (None, None) => return Err(loaded.config_error("volume", "missing `volume`")),
    };
    SmearingVolume::new(model, origin, sides)
        .map_err(|e| loaded.config_error("volume", e.to_string()))
}

fn excess(
    loaded: &LoadedConfig,
    model: &CorrelationModel,
    v: &SmearingVolume,
    method: SweepMethod,
) -> Result<QuadratureEstimate> {
    let cells = loaded
        .config
        .quadrature
        .as_ref()
        .map_or(crate::statistics::DEFAULT_CELLS_PER_LENGTH, |q| {
            q.cells_per_length
        });
    match method {
        SweepMethod::Quadrature => pair_excess(model, v, cells),
        SweepMethod::ClosedForm => Ok(QuadratureEstimate {
            value: pair_excess_closed_form(model, v)?,
            error: 0.0,
            cells_per_length: 0,
        }),
    }
}

fn method_name(method: SweepMethod, model: &CorrelationModel) -> &'static str {
    if method == SweepMethod::ClosedForm || !model.has_kernel() {
        "closed_form"
    } else {
        "quadrature"
    }
}

fn fraction(model: &CorrelationModel, v: &SmearingVolume) -> Result<f64> {
    let f = window_fraction(model, v);
    if f > 0.0 {
        Ok(f)
    } else {
        Err(Error::ZeroMeanDensity)
    }
}

/// `(quantity, ratio, stderr, method)` row of an oracle table.
type OracleRow = (String, f64, f64, &'static str);

/// Monte Carlo comparison rows and checks at one model and volume.
fn mc_compare(
    loaded: &LoadedConfig,
    model: &CorrelationModel,
    v: &SmearingVolume,
    reference: &QuadratureEstimate,
    label: &str,
) -> Result<(Vec<OracleRow>, Vec<Check>)> {
    let c = &loaded.config;
    let mc = c.mc.as_ref().expect("caller checked");
    let est = mc_variance_oracle_batched(model, v, mc.particles, mc.samples, mc.batches, c.seed)?;
    let f = fraction(model, v)?;
    let n = mc.particles as f64;
    let limit = reference.value / (f * f);
    let finite = finite_n_ratio(f, reference.value, n);
    let gap = (finite - limit).abs();
    let sig = c.checks.mc_sigmas;
    let checks = vec![
        Check::at_most(
            format!("mc_limit_deviation{label}"),
            (est.limit_ratio - limit).abs(),
            sig * est.limit_stderr + gap,
        ),
        Check::at_most(
            format!("mc_finite_n_deviation{label}"),
            (est.corrected_ratio - finite).abs(),
            sig * est.corrected_stderr,
        ),
        Check::at_least(format!("mc_samples{label}"), mc.samples as f64, 1e5),
    ];
    let rows = vec![
        ("limit".to_string(), est.limit_ratio, est.limit_stderr, "mc"),
        (
            "finite_n".to_string(),
            est.corrected_ratio,
            est.corrected_stderr,
            "mc",
        ),
        ("pairs_raw".to_string(), est.ratio, est.ratio_stderr, "mc"),
    ];
    Ok((rows, checks))
}

fn mc_footer(out: &mut String, loaded: &LoadedConfig) {
    if let Some(mc) = &loaded.config.mc {
        let _ = writeln!(out, "# mc particles = {}", mc.particles);
        let _ = writeln!(out, "# mc samples = {}", mc.samples);
        let _ = writeln!(out, "# mc batches = {}", mc.batches);
        let _ = writeln!(out, "# mc seed = {}", loaded.config.seed);
        let _ = writeln!(out, "# mc pairing correction: {PAIRING_CORRECTION}");
    }
}

fn run_sweep(loaded: &LoadedConfig) -> Result<Outcome> {
    let c = &loaded.config;
    let sweep = c.sweep.as_ref().expect("validated");
    let var = sweep.variable;
    let setups: Vec<(CorrelationModel, SmearingVolume)> = sweep
        .values
        .iter()
        .map(|&x| {
            let model = model_of(loaded, (var == SweepVariable::L).then_some(x))?;
            let v = volume_of(loaded, &model, (var == SweepVariable::V).then_some(x))?;
            Ok((model, v))
        })
        .collect::<Result<_>>()?;
    if var == SweepVariable::N && sweep.values.iter().any(|&x| x < 2.0 || x.fract() != 0.0) {
        return Err(loaded.config_error("sweep.values", "particle numbers must be integers >= 2"));
    }
    let results: Vec<(f64, f64, QuadratureEstimate)> = setups
        .par_iter()
        .zip(&sweep.values)
        .map(|((model, v), &x)| {
            let f = fraction(model, v)?;
            let q = excess(loaded, model, v, sweep.method)?;
            let (ratio, err) = if var == SweepVariable::N {
                (finite_n_ratio(f, q.value, x), q.error / (f * f))
            } else {
                (q.value / (f * f), q.error / (f * f))
            };
            Ok((ratio, err, q))
        })
        .collect::<Result<_>>()?;

    let mut table = String::from("sweep_var,x,ratio,stderr,method\n");
    let mut points = Vec::new();
    for ((&x, (ratio, err, _)), (model, _)) in sweep.values.iter().zip(&results).zip(&setups) {
        let _ = writeln!(
            table,
            "{},{},{},{},{}",
            var.name(),
            fmt_num(x),
            fmt_num(*ratio),
            fmt_num(*err),
            method_name(sweep.method, model)
        );
        points.push((x, *ratio));
    }
    let fit = scaling_fit(var.name(), &points)?;
    let mut checks: Vec<Check> = slope_check(loaded, &fit).into_iter().collect();
    if let Some(mc) = &c.mc {
        let idx = mc.point.unwrap_or(setups.len() - 1);
        let (model, v) = setups
            .get(idx)
            .ok_or_else(|| loaded.config_error("mc.point", format!("no sweep point {idx}")))?;
        let (rows, mc_checks) = mc_compare(loaded, model, v, &results[idx].2, "")?;
        for (quantity, ratio, err, method) in rows {
            let x = if var == SweepVariable::N {
                mc.particles as f64
            } else {
                sweep.values[idx]
            };
            if quantity == "pairs_raw" || (quantity == "finite_n") != (var == SweepVariable::N) {
                continue;
            }
            let _ = writeln!(
                table,
                "{},{},{},{},{method}",
                var.name(),
                fmt_num(x),
                fmt_num(ratio),
                fmt_num(err)
            );
        }
        checks.extend(mc_checks);
    }
    fit_footer(&mut table, &fit);
    if let Some(q) = &c.quadrature {
        let _ = writeln!(
            table,
            "# quadrature cells_per_length = {}",
            q.cells_per_length
        );
    }
    mc_footer(&mut table, loaded);
    Ok((vec![("sweep.csv".into(), table)], checks))
}

fn run_oracle(loaded: &LoadedConfig) -> Result<Outcome> {
    let c = &loaded.config;
    let model = model_of(loaded, None)?;
    let v = volume_of(loaded, &model, None)?;
    let q = excess(loaded, &model, &v, SweepMethod::Quadrature)?;
    let f = fraction(&model, &v)?;
    let n = c.mc.as_ref().expect("validated").particles as f64;
    let mut table = String::from("quantity,ratio,stderr,method\n");
    let quad = method_name(SweepMethod::Quadrature, &model);
    let _ = writeln!(
        table,
        "limit,{},{},{quad}",
        fmt_num(q.value / (f * f)),
        fmt_num(q.error / (f * f))
    );
    let _ = writeln!(
        table,
        "finite_n,{},{},{quad}",
        fmt_num(finite_n_ratio(f, q.value, n)),
        fmt_num(q.error / (f * f))
    );
    if let Ok(exact) = pair_excess_closed_form(&model, &v) {
        let _ = writeln!(
            table,
            "limit,{},{},closed_form",
            fmt_num(exact / (f * f)),
            fmt_num(0.0)
        );
        let _ = writeln!(
            table,
            "finite_n,{},{},closed_form",
            fmt_num(finite_n_ratio(f, exact, n)),
            fmt_num(0.0)
        );
    }
    let (rows, checks) = mc_compare(loaded, &model, &v, &q, "")?;
    for (quantity, ratio, err, method) in rows {
        let _ = writeln!(
            table,
            "{quantity},{},{},{method}",
            fmt_num(ratio),
            fmt_num(err)
        );
    }
    mc_footer(&mut table, loaded);
    Ok((vec![("oracle.csv".into(), table)], checks))
}

fn run_limit(loaded: &LoadedConfig) -> Result<Outcome> {
    let c = &loaded.config;
    let lim = c.limit.as_ref().expect("validated");
    let model = model_of(loaded, None)?;
    let v = volume_of(loaded, &model, None)?;
    let q = excess(loaded, &model, &v, SweepMethod::Quadrature)?;
    let f = fraction(&model, &v)?;
    let limit = q.value / (f * f);
    if lim.particles.is_empty() || lim.particles.iter().any(|&n| n < 2) {
        return Err(loaded.config_error("limit.particles", "need particle numbers >= 2"));
    }
    let gap = finite_n_gap(&model, &v, &lim.particles)?;
    let mut table = String::from("particles,finite_ratio,limit_ratio,gap,fitted_gap\n");
    for &(n, g) in &gap.points {
        let _ = writeln!(
            table,
            "{n},{},{},{},{}",
            fmt_num(limit + g),
            fmt_num(limit),
            fmt_num(g),
            fmt_num(gap.k / n as f64)
        );
    }
    let _ = writeln!(table, "# fitted K = {}", fmt_num(gap.k));
    let _ = writeln!(table, "# fit max_residual = {}", fmt_num(gap.max_residual));
    let &(n_last, g_last) = gap.points.last().expect("non-empty");
    let mut checks = vec![Check::at_most(
        format!("finite_vs_limit_at_N={n_last}"),
        g_last.abs(),
        lim.relative_tolerance * limit.abs() + gap.k.abs() / n_last as f64,
    )];
    if lim.zero_kernel_control {
        let zero = zero_kernel(&model)?;
        let zf = fraction(&zero, &v)?;
        let z =
            pair_excess(&zero, &v, crate::statistics::DEFAULT_CELLS_PER_LENGTH)?.value / (zf * zf);
        let _ = writeln!(table, "# zero-kernel limit = {}", fmt_num(z));
        checks.push(Check::at_most(
            "zero_kernel_limit",
            z.abs(),
            c.checks.zero_limit,
        ));
    }
    if c.mc.is_some() {
        let (rows, mc_checks) = mc_compare(loaded, &model, &v, &q, "")?;
        for (quantity, ratio, err, _) in rows {
            let _ = writeln!(
                table,
                "# mc {quantity} = {} +- {}",
                fmt_num(ratio),
                fmt_num(err)
            );
        }
        checks.extend(mc_checks);
        mc_footer(&mut table, loaded);
    }
    Ok((vec![("limit.csv".into(), table)], checks))
}
