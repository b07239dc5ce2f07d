use decohist::densities::{expectation_and_variance, DensitySpec, Window};
use decohist::dynamics::{build_hamiltonian, Evolver, HamiltonianSpec};
use decohist::histories::bin_projectors;
use decohist::lattice::{
    build_lattice, inner, product_state, superpose, ManyBodyState, OneParticleState, C64,
};
use decohist::statistics::{
    finite_n_ratio, make_correlation_model, scaling_fit, window_fraction, KernelShape,
    OneParticleDensity, SmearingVolume,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn amplitudes(re: &[f64], im: &[f64]) -> Vec<C64> {
    re.iter().zip(im).map(|(&r, &i)| C64::new(r, i)).collect()
}

fn nonzero(re: &[f64], im: &[f64]) -> bool {
    re.iter().chain(im).map(|x| x * x).sum::<f64>() > 1e-3
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn constructors_are_normalized(
        sites in 2usize..9,
        center in 0.0f64..1.0,
        width in 0.3f64..3.0,
        k in -2.0f64..2.0,
        n in 1usize..4,
    ) {
        let lattice = build_lattice(sites, 1.0).unwrap();
        let psi = OneParticleState::gaussian_packet(lattice, center * sites as f64, width, k).unwrap();
        prop_assert!((psi.norm_sqr() - 1.0).abs() <= 1e-12);
        let state = product_state(&psi, n).unwrap();
        prop_assert!((state.norm_sqr() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn product_states_lift_one_body_expectations(
        re in prop::collection::vec(-1.0f64..1.0, 5),
        im in prop::collection::vec(-1.0f64..1.0, 5),
        n in 1usize..4,
        start in 0usize..5,
        len in 1usize..5,
        momentum in any::<bool>(),
    ) {
        prop_assume!(nonzero(&re, &im));
        let lattice = build_lattice(5, 1.0).unwrap();
        let psi = OneParticleState::from_amplitudes(lattice, amplitudes(&re, &im)).unwrap();
        let window = Window::new(&lattice, start, len).unwrap();
        let spec = if momentum { DensitySpec::Momentum(window) } else { DensitySpec::Number(window) };
        let one = spec.build(&lattice, 1, None).unwrap();
        let single = inner(psi.amplitudes(), &one.apply(psi.amplitudes()).unwrap()).re;
        let many = spec.build(&lattice, n, None).unwrap();
        let state = product_state(&psi, n).unwrap();
        let mean = expectation_and_variance(&state, &many).unwrap().mean;
        prop_assert!((mean - n as f64 * single).abs() <= 1e-10);
        if !momentum {
            let direct: f64 = window.sites_iter().map(|s| psi.probabilities()[s]).sum();
            prop_assert!((single - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn product_states_factorize(
        re in prop::collection::vec(-1.0f64..1.0, 4),
        im in prop::collection::vec(-1.0f64..1.0, 4),
        ops in prop::collection::vec(-1.0f64..1.0, 96),
    ) {
        prop_assume!(nonzero(&re, &im));
        let lattice = build_lattice(4, 1.0).unwrap();
        let psi = OneParticleState::from_amplitudes(lattice, amplitudes(&re, &im)).unwrap();
        let state = product_state(&psi, 3).unwrap();
        prop_assert!((state.norm_sqr() - 1.0).abs() <= 1e-10);
        let mats: Vec<DMatrix<C64>> = ops
            .chunks(32)
            .map(|c| DMatrix::from_fn(4, 4, |i, j| C64::new(c[4 * i + j], c[16 + 4 * i + j])))
            .collect();
        let v = nalgebra::DVector::from_column_slice(state.amplitudes());
        let one = nalgebra::DVector::from_column_slice(psi.amplitudes());
        let full = mats[0].kronecker(&mats[1].kronecker(&mats[2]));
        let joint = v.dotc(&(full * &v));
        let split: C64 = mats.iter().map(|m| one.dotc(&(m * &one))).product();
        prop_assert!((joint - split).norm() <= 1e-10);
    }

    #[test]
    fn orthogonal_superposition_follows_weights(theta in 0.05f64..1.5, phase in -3.0f64..3.0) {
        let lattice = build_lattice(4, 1.0).unwrap();
        let a = product_state(&OneParticleState::site(lattice, 0).unwrap(), 2).unwrap();
        let b = product_state(&OneParticleState::site(lattice, 3).unwrap(), 2).unwrap();
        let wa = C64::from_polar(theta.cos(), phase);
        let wb = C64::new(theta.sin(), 0.0);
        let s = superpose(&a, &b, wa, wb).unwrap();
        prop_assert!(s.overlap.norm() <= 1e-15);
        prop_assert!((s.state.norm_sqr() - 1.0).abs() <= 1e-10);
        let pa = a.inner(&s.state).unwrap().norm_sqr();
        prop_assert!((pa - wa.norm_sqr()).abs() <= 1e-12);
    }

    #[test]
    fn propagation_composes_and_conserves_energy(
        re in prop::collection::vec(-1.0f64..1.0, 16),
        im in prop::collection::vec(-1.0f64..1.0, 16),
        t1 in 0.0f64..3.0,
        t2 in 0.0f64..3.0,
        u in 0.0f64..2.0,
    ) {
        prop_assume!(nonzero(&re, &im));
        let lattice = build_lattice(4, 1.0).unwrap();
        let state = ManyBodyState::from_amplitudes(lattice, 2, amplitudes(&re, &im)).unwrap();
        let h = build_hamiltonian(&HamiltonianSpec::square_well(u, 1), &lattice, 2).unwrap();
        let evolver = Evolver::new(&h);
        let stepped = evolver.evolve(&evolver.evolve(&state, t1).unwrap(), t2).unwrap();
        let direct = evolver.evolve(&state, t1 + t2).unwrap();
        let gap = stepped.amplitudes().iter().zip(direct.amplitudes())
            .map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(gap <= 1e-8);
        prop_assert!((h.expectation(&direct).unwrap() - h.expectation(&state).unwrap()).abs() <= 1e-9);
        prop_assert!(evolver.propagator(t1).unwrap().unitarity_defect() <= 1e-9);
    }

    #[test]
    fn bin_projectors_resolve_identity(
        sites in 2usize..6,
        n in 1usize..4,
        start in 0usize..6,
        len in 1usize..6,
        offset in 0.05f64..0.95,
        width in 0.6f64..2.5,
    ) {
        let lattice = build_lattice(sites, 1.0).unwrap();
        let window = Window::new(&lattice, start % sites, len.min(sites)).unwrap();
        let obs = DensitySpec::Number(window).build(&lattice, n, None).unwrap();
        let mut edges = vec![-offset];
        while *edges.last().unwrap() <= n as f64 {
            let next = edges.last().unwrap() + width;
            edges.push(next);
        }
        prop_assume!(edges.iter().all(|e| (e - e.round()).abs() > 1e-6));
        let family = bin_projectors(&obs, &edges).unwrap();
        let dim = obs.dim();
        let mats: Vec<DMatrix<C64>> = family.projectors().iter().map(|p| p.to_dense()).collect();
        let mut sum = DMatrix::<C64>::zeros(dim, dim);
        for (i, p) in mats.iter().enumerate() {
            let idem = (p * p - p).iter().map(|z| z.norm()).fold(0.0, f64::max);
            prop_assert!(idem <= 1e-10);
            for q in &mats[i + 1..] {
                let cross = (p * q).iter().map(|z| z.norm()).fold(0.0, f64::max);
                prop_assert!(cross <= 1e-10);
            }
            sum += p;
        }
        let completeness = (sum - DMatrix::<C64>::identity(dim, dim))
            .iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(completeness <= 1e-10);
        prop_assert!((family.ranks().iter().sum::<usize>()) == dim);
    }

    #[test]
    fn correlation_kernels_are_consistent(
        dim in 1usize..4,
        side in 1.0f64..10.0,
        length_frac in 0.01f64..0.2,
        strength in 0.0f64..1.0,
        shell in any::<bool>(),
        q in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        let p1 = 1.0 / side.powi(dim as i32);
        let length = length_frac * side;
        let shape = if shell { KernelShape::TopHatShell } else { KernelShape::TopHat };
        let model = make_correlation_model(
            dim, side, OneParticleDensity::Uniform, shape, strength * p1 * p1, length,
        ).unwrap();
        prop_assert!(model.marginal_defect() <= 1e-6);
        let q1: Vec<f64> = q[..dim].iter().map(|x| x * side).collect();
        let q2: Vec<f64> = q[3..3 + dim].iter().map(|x| x * side).collect();
        prop_assert_eq!(model.kernel(&q1, &q2), model.kernel(&q2, &q1));
        prop_assert!(model.p2_value(&q1, &q2) >= 0.0);
        if shell {
            let r: f64 = model.displacement(&q1, &q2).iter().map(|x| x * x).sum::<f64>().sqrt();
            if r > length {
                prop_assert_eq!(model.kernel(&q1, &q2), 0.0);
            }
        }
    }

    #[test]
    fn power_laws_are_recovered(scale in 0.01f64..100.0, exponent in -3.0f64..3.0, x0 in 0.01f64..10.0) {
        let points: Vec<(f64, f64)> = (0..6)
            .map(|i| {
                let x = x0 * 1.7f64.powi(i);
                (x, scale * x.powf(exponent))
            })
            .collect();
        let fit = scaling_fit("x", &points).unwrap();
        prop_assert!((fit.slope - exponent).abs() <= 1e-9);
    }
}

/// The uncorrelated large-N formula agrees with exact product-state variances
/// when the one-particle density is the lattice probability `|psi|^2`.
#[test]
fn statistical_tier_matches_exact_tier_for_product_states() {
    let sites = 6;
    let lattice = build_lattice(sites, 1.0).unwrap();
    let psi = OneParticleState::gaussian_packet(lattice, 2.0, 1.1, 0.5).unwrap();
    let model = make_correlation_model(
        1,
        sites as f64,
        OneParticleDensity::Tabulated {
            cells: sites,
            values: psi.probabilities(),
        },
        KernelShape::Zero,
        0.0,
        1.0,
    )
    .unwrap();
    for (start, len) in [(0, 3), (1, 2), (2, 4)] {
        let window = Window::new(&lattice, start, len).unwrap();
        let v = SmearingVolume::new(&model, vec![start as f64], vec![len as f64]).unwrap();
        let f = window_fraction(&model, &v);
        for n in 1..=4 {
            let obs = DensitySpec::Number(window)
                .build(&lattice, n, None)
                .unwrap();
            let exact = expectation_and_variance(&product_state(&psi, n).unwrap(), &obs).unwrap();
            let predicted = finite_n_ratio(f, 0.0, n as f64);
            let ratio = exact.ratio.unwrap();
            assert!(
                (ratio - predicted).abs() <= 1e-10 * predicted.max(1.0),
                "window ({start},{len}) N={n}: {ratio} vs {predicted}"
            );
            assert!((exact.mean - n as f64 * f).abs() <= 1e-10);
        }
    }
}
