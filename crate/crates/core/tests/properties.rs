use coagfrag::grid::{diffuse, integrate};
use coagfrag::kernels::{FragmentationRates, KernelSet, PowerLawCoagulation, PowerLawDaughterDistribution};
use coagfrag::oracle::{brute_force_weak_rate, HomogeneousState};
use coagfrag::reaction::{rhs, weak_moment_rate, ConvolutionPath, ReactionOperator};
use coagfrag::{Field, Grid, TruncatedKernels, TruncatedState, TruncationMode};
use proptest::prelude::*;

fn kernels() -> impl Strategy<Value = KernelSet> {
    (
        0.1..2.0f64,
        0.0..1.0f64,
        0.0..1.0f64,
        0.0..2.0f64,
        0.0..3.0f64,
        0.0..2.0f64,
    )
        .prop_map(|(c_q, alpha, beta, c_f, gamma, nu)| {
            KernelSet::power_law(
                PowerLawCoagulation::new(c_q, alpha, beta).unwrap(),
                FragmentationRates { c_f, gamma },
                PowerLawDaughterDistribution::new(nu).unwrap(),
            )
        })
}

fn grid() -> impl Strategy<Value = Grid> {
    prop_oneof![
        (1usize..40, 0.2..3.0f64).prop_map(|(c, l)| Grid::interval(l, c).unwrap()),
        (1usize..10, 1usize..10, 0.2..3.0f64, 0.2..3.0f64)
            .prop_map(|(nx, ny, lx, ly)| Grid::rectangle(lx, ly, nx, ny).unwrap()),
    ]
}

fn field() -> impl Strategy<Value = Field> {
    grid().prop_flat_map(|g| prop::collection::vec(0.0..5.0f64, g.len()).prop_map(move |v| Field::new(g, v).unwrap()))
}

fn concentrations(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diffusion_conserves_mass_and_positivity(f in field(), d in 0.01..10.0f64, dt in 1e-4..1.0f64) {
        let g = diffuse(&f, d, dt).unwrap();
        let before = integrate(&f);
        let after = integrate(&g);
        prop_assert!((after - before).abs() <= 1e-12 * before.max(1.0));
        prop_assert!(g.values.iter().all(|&v| v >= 0.0));
        prop_assert!(g.max() <= f.max() * (1.0 + 1e-12) + 1e-300);
        prop_assert!(g.min() >= f.min() * (1.0 - 1e-12));
    }

    #[test]
    fn operator_paths_agree_and_conserve(ks in kernels(), n in 2usize..48, seed in concentrations(48)) {
        let c: Vec<f64> = seed[..n].iter().enumerate().map(|(i, v)| v * (-0.1 * i as f64).exp()).collect();
        let tk = TruncatedKernels::new(&ks, n).unwrap();
        for mode in [TruncationMode::Conservative, TruncationMode::FullLoss] {
            let direct = ReactionOperator::new(tk.clone(), mode, ConvolutionPath::Direct).unwrap();
            let fft = ReactionOperator::new(tk.clone(), mode, ConvolutionPath::Fft).unwrap();
            let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
            let leak_a = direct.evaluate(&c, &mut a, &mut direct.scratch());
            let leak_b = fft.evaluate(&c, &mut b, &mut fft.scratch());
            let scale: f64 = a.iter().map(|v| v.abs()).sum::<f64>() + 1e-300;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-10 * scale);
            }
            prop_assert!((leak_a - leak_b).abs() <= 1e-10 * (scale + leak_a.abs()));
            let mass: f64 = a.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum::<f64>() + leak_a;
            let mag: f64 = a.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v.abs()).sum::<f64>() + leak_a.abs();
            prop_assert!(mass.abs() <= 1e-12 * mag.max(1e-300));
            if mode == TruncationMode::Conservative {
                prop_assert_eq!(leak_a, 0.0);
            }
        }
    }

    #[test]
    fn weak_form_matches_strong_form(ks in kernels(), n in 2usize..32, c in concentrations(32), phi in concentrations(32)) {
        let c = c[..n].to_vec();
        let phi = phi[..n].to_vec();
        let tk = TruncatedKernels::new(&ks, n).unwrap();
        let s = TruncatedState::uniform(Grid::interval(1.0, 1).unwrap(), &c).unwrap();
        let strong: f64 = rhs(&s, &tk, TruncationMode::Conservative)
            .unwrap()
            .iter()
            .zip(&phi)
            .map(|(f, p)| f.values[0] * p)
            .sum();
        let weak = weak_moment_rate(&s, &tk, &phi).unwrap().values[0];
        let brute = brute_force_weak_rate(&HomogeneousState::new(c).unwrap(), &ks, &phi).unwrap();
        let tol = 1e-11 * (strong.abs() + weak.abs() + 1e-12);
        prop_assert!((strong - weak).abs() <= tol, "strong {} weak {}", strong, weak);
        prop_assert!((brute - weak).abs() <= tol, "brute {} weak {}", brute, weak);
    }

    #[test]
    fn fragmentation_solve_inverts_operator(ks in kernels(), n in 2usize..40, x in concentrations(40), h in 1e-3..10.0f64) {
        let x = x[..n].to_vec();
        let tk = TruncatedKernels::new(&ks, n).unwrap();
        let op = ReactionOperator::new(tk, TruncationMode::Conservative, ConvolutionPath::Direct).unwrap();
        let mut fx = vec![0.0; n];
        op.fragmentation(&x, &mut fx);
        let rhs: Vec<f64> = x.iter().zip(&fx).map(|(a, b)| a - h * b).collect();
        let mut solved = vec![0.0; n];
        op.solve_fragmentation(h, &rhs, &mut solved);
        let scale = rhs.iter().map(|v| v.abs()).fold(0.0, f64::max) + x.iter().cloned().fold(0.0, f64::max);
        for (a, b) in solved.iter().zip(&x) {
            prop_assert!((a - b).abs() <= 1e-9 * scale.max(1e-300));
        }
    }
}
