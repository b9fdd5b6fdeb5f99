//! Randomized invariants across the measure, kernel, spectral, path and
//! sampler layers.

use proptest::prelude::*;

use tempering_lab::kernels::{
    aux_chain_p1, aux_chain_p2, level_kernels, metropolis_level_kernel, product_update_t, project,
    project_to_assignments, pt_kernel, restrict, swap_kernel_q, uniform_proposal, StochasticMatrix,
};
use tempering_lab::measure::{
    bottleneck_b, overlap_phi, pi_bar, pi_bar_at, swap_acceptance_marginal, temper, FiniteTarget,
    TemperatureLadder, TemperedFamily,
};
use tempering_lab::paths::{
    level0_path, mass_ratio_check, path_length_f, swap_sequence, trajectory,
};
use tempering_lab::sampler::run_parallel_tempering;
use tempering_lab::spectral::{
    cheeger_ratio, dirichlet_form, spectral_gap, spectral_gap_with, variance, SolverChoice,
    SpectralOptions,
};
use tempering_lab::{ProductAssignment, DEFAULT_STATE_BUDGET};

const BUDGET: usize = DEFAULT_STATE_BUDGET;

/// Small families: 1 to 3 modes, 1 or 2 atoms per mode, 1 to 3 levels.
fn family_strategy(max_top: usize) -> impl Strategy<Value = TemperedFamily> {
    (1usize..=3, 1usize..=2, 0usize..=max_top).prop_flat_map(|(m, per, top)| {
        let n = m * per;
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(0.05f64..0.95, top),
        )
            .prop_map(move |(logw, mut betas)| {
                let labels: Vec<usize> = (0..n).map(|a| a / per).collect();
                betas.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for j in 1..betas.len() {
                    if betas[j] <= betas[j - 1] {
                        betas[j] = betas[j - 1] + 1e-3;
                    }
                }
                betas.push(1.0);
                let target = FiniteTarget::from_log_weights(logw, labels, m).unwrap();
                temper(&target, &TemperatureLadder::new(betas).unwrap()).unwrap()
            })
    })
}

fn multi_level() -> impl Strategy<Value = TemperedFamily> {
    family_strategy(2).prop_filter("needs two levels", |f| f.top() >= 1)
}

/// Metropolis chain for a random law under the uniform proposal.
fn chain_strategy() -> impl Strategy<Value = StochasticMatrix> {
    prop::collection::vec(0.05f64..1.0, 2..7).prop_map(|w| {
        let total: f64 = w.iter().sum();
        let pi: Vec<f64> = w.iter().map(|x| x / total).collect();
        metropolis_level_kernel(&pi, &uniform_proposal(pi.len())).unwrap()
    })
}

fn dense_gap(p: &StochasticMatrix) -> f64 {
    spectral_gap(p).unwrap().gap
}

fn row_sums_ok(p: &StochasticMatrix) -> bool {
    p.row_sum_residual() < 1e-10
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn swap_marginal_dominates_phi_squared(f in multi_level()) {
        let phi = overlap_phi(&f).unwrap();
        for i in 1..=f.top() {
            for k1 in 0..f.m() {
                for k2 in 0..f.m() {
                    let a = swap_acceptance_marginal(&f, i, k1, k2).unwrap();
                    prop_assert!(a >= phi * phi - 1e-12, "i={i} k=({k1},{k2}) a={a} phi={phi}");
                }
            }
        }
    }

    #[test]
    fn pi_bar_is_product_of_block_masses(f in family_strategy(2), seed in any::<u64>()) {
        let bar = pi_bar(&f, BUDGET).unwrap();
        prop_assert!((bar.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let mut s = seed;
        let space = f.assignment_space();
        for _ in 0..1000 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let lambda: Vec<usize> = (0..f.num_levels()).map(|j| ((s >> (8 * j + 16)) as usize) % f.m()).collect();
            let direct: f64 = lambda.iter().enumerate().map(|(i, &k)| f.block_mass(i, k)).product();
            prop_assert!((pi_bar_at(&f, &lambda) - direct).abs() <= 1e-14 * direct.max(1e-300) + 1e-300);
            prop_assert!((bar[space.encode(&lambda)] - direct).abs() <= 1e-12 * direct + 1e-300);
        }
    }

    #[test]
    fn tempering_is_monotone(logw in prop::collection::vec(-6.0f64..6.0, 2..6), b1 in 0.01f64..0.99, b2 in 0.01f64..0.99) {
        let n = logw.len();
        let target = FiniteTarget::from_log_weights(logw.clone(), vec![0; n], 1).unwrap();
        let (lo, hi) = if b1 < b2 { (b1, b2) } else { (b2, b1) };
        prop_assume!(hi - lo > 1e-6);
        let f = temper(&target, &TemperatureLadder::new(vec![lo, hi, 1.0]).unwrap()).unwrap();
        for a in 0..n {
            for b in 0..n {
                if logw[a] < logw[b] {
                    // The heavier atom gains relative to the lighter one.
                    let r_lo = f.level(0)[b] / f.level(0)[a];
                    let r_hi = f.level(1)[b] / f.level(1)[a];
                    prop_assert!(r_hi >= r_lo * (1.0 - 1e-12));
                }
            }
        }
        let heaviest = (0..n).max_by(|&a, &b| logw[a].partial_cmp(&logw[b]).unwrap()).unwrap();
        prop_assert!(f.level(1)[heaviest] >= f.level(0)[heaviest] - 1e-12);
    }

    #[test]
    fn bottleneck_in_unit_interval(f in family_strategy(3)) {
        let b = bottleneck_b(&f);
        prop_assert!(b > 0.0 && b <= 1.0);
    }

    #[test]
    fn bottleneck_is_one_for_equal_block_masses(w in prop::collection::vec(0.1f64..1.0, 4), top in 1usize..4) {
        let total: f64 = w.iter().sum();
        let level: Vec<f64> = w.iter().map(|x| x / total).collect();
        let ladder = TemperatureLadder::linear(top);
        let f = TemperedFamily::from_levels(ladder, vec![0, 0, 1, 1], 2, vec![level; top + 1]).unwrap();
        prop_assert_eq!(bottleneck_b(&f), 1.0);
    }

    #[test]
    fn kernels_are_reversible_lazy_and_stochastic(f in multi_level()) {
        let tks = level_kernels(&f, &uniform_proposal(f.n_atoms())).unwrap();
        let t = product_update_t(&f, &tks, BUDGET).unwrap();
        let q = swap_kernel_q(&f, BUDGET).unwrap();
        let ppt = pt_kernel(&t, &q).unwrap();
        let bar = project_to_assignments(&f, &ppt, BUDGET).unwrap();
        let p1 = aux_chain_p1(&f, BUDGET).unwrap();
        let p2 = aux_chain_p2(&f, BUDGET).unwrap();
        for k in tks.iter().chain([&t, &q, &ppt, &bar, &p1, &p2]) {
            prop_assert!(k.detailed_balance_residual() < 1e-10);
            prop_assert!(row_sums_ok(k));
        }
        prop_assert!(t.min_diagonal() >= 0.5 - 1e-12);
        prop_assert!(q.min_diagonal() >= 0.5 - 1e-12);
        prop_assert!(ppt.min_diagonal() >= 0.25 - 1e-12);
        let dense = SpectralOptions { solver: SolverChoice::Dense, ..SpectralOptions::default() };
        for k in [&t, &q, &ppt] {
            prop_assert_eq!(spectral_gap_with(k, &dense).unwrap().nonnegative_definite, Some(true));
        }
        let law = pi_bar(&f, BUDGET).unwrap();
        prop_assert_eq!(p1.stationary(), p2.stationary());
        for (a, b) in p1.stationary().iter().zip(&law) {
            prop_assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn project_of_restrict_is_stochastic(p in chain_strategy(), mask in any::<u8>()) {
        let n = p.dim();
        let members: Vec<usize> = (0..n).filter(|&x| mask & (1 << x) != 0).collect();
        prop_assume!(members.len() >= 2);
        let r = restrict(&p, &members).unwrap();
        prop_assert!(row_sums_ok(&r));
        let blocks: Vec<usize> = (0..members.len()).map(|j| j % 2).collect();
        let pr = project(&r, &blocks, 2).unwrap();
        prop_assert!(row_sums_ok(&pr));
        prop_assert!(pr.detailed_balance_residual() < 1e-10);
    }

    #[test]
    fn rayleigh_quotients_bound_the_gap(p in chain_strategy(), seed in any::<u64>()) {
        let gap = dense_gap(&p);
        let mut s = seed;
        for _ in 0..100 {
            let f: Vec<f64> = (0..p.dim())
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            let var = variance(p.stationary(), &f).unwrap();
            prop_assume!(var > 1e-9);
            prop_assert!(dirichlet_form(&p, &f).unwrap() / var >= gap - 1e-8);
        }
    }

    #[test]
    fn restriction_projection_sandwich(p in chain_strategy(), split in 1usize..6) {
        let n = p.dim();
        let split = split.min(n - 1);
        let blocks: Vec<usize> = (0..n).map(|x| usize::from(x >= split)).collect();
        let bar = project(&p, &blocks, 2).unwrap();
        let a: Vec<usize> = (0..split).collect();
        let b: Vec<usize> = (split..n).collect();
        let inner = dense_gap(&restrict(&p, &a).unwrap()).min(dense_gap(&restrict(&p, &b).unwrap()));
        prop_assert!(dense_gap(&p) >= 0.5 * dense_gap(&bar) * inner - 1e-10);
    }

    #[test]
    fn cheeger_upper_bound(p in chain_strategy(), mask in any::<u8>()) {
        let n = p.dim();
        let set: Vec<usize> = (0..n).filter(|&x| mask & (1 << x) != 0).collect();
        let mass: f64 = set.iter().map(|&x| p.stationary()[x]).sum();
        prop_assume!(!set.is_empty() && mass <= 0.5);
        prop_assert!(dense_gap(&p) <= 2.0 * cheeger_ratio(&p, &set).unwrap() + 1e-10);
    }

    #[test]
    fn gap_is_invariant_under_relabeling(w in prop::collection::vec(0.05f64..1.0, 2..7), rot in 1usize..6) {
        let n = w.len();
        let total: f64 = w.iter().sum();
        let pi: Vec<f64> = w.iter().map(|x| x / total).collect();
        let perm: Vec<usize> = (0..n).map(|x| (x + rot) % n).collect();
        let mut pi2 = vec![0.0; n];
        for x in 0..n {
            pi2[perm[x]] = pi[x];
        }
        let p = metropolis_level_kernel(&pi, &uniform_proposal(n)).unwrap();
        let p2 = metropolis_level_kernel(&pi2, &uniform_proposal(n)).unwrap();
        for x in 0..n {
            for y in 0..n {
                prop_assert!((p.get(x, y) - p2.get(perm[x], perm[y])).abs() < 1e-14);
            }
        }
        prop_assert!((dense_gap(&p) - dense_gap(&p2)).abs() < 1e-10);
    }

    #[test]
    fn swap_sequence_realizes_transposition(lambda in prop::collection::vec(0usize..4, 2..40), a in any::<usize>(), b in any::<usize>()) {
        let n = lambda.len();
        let (i, j) = (a % n, b % n);
        prop_assume!(i != j);
        let (i, j) = (i.min(j), i.max(j));
        let moves = swap_sequence(i, j).unwrap();
        prop_assert_eq!(moves.len() as u64, path_length_f(j - i).unwrap());
        let start = ProductAssignment(lambda.clone());
        let end = trajectory(&start, &moves, 4).unwrap().pop().unwrap();
        let mut want = lambda.clone();
        want.swap(i, j);
        prop_assert_eq!(end.0, want);
    }

    #[test]
    fn level0_path_length_and_endpoint(lambda in prop::collection::vec(0usize..3, 1..20), i in any::<usize>(), k in 0usize..3, kstar in 0usize..3) {
        let i = i % lambda.len();
        let start = ProductAssignment(lambda.clone());
        let path = level0_path(&start, i, k, kstar).unwrap();
        let want_len = if i == 0 { 1 } else { 3 + 2 * path_length_f(i).unwrap() };
        prop_assert_eq!(path.len() as u64, want_len);
        let mut want = lambda.clone();
        want[i] = k;
        prop_assert_eq!(path.endpoint(3).unwrap().0, want);
    }

    #[test]
    fn mass_ratio_law_on_paths(f in multi_level()) {
        let r = mass_ratio_check(&f, 1e-10, BUDGET).unwrap();
        prop_assert!(r.holds, "{:?}", r.violations.first());
    }

    #[test]
    fn sampler_is_deterministic(f in multi_level(), seed in any::<u64>()) {
        let props = vec![uniform_proposal(f.n_atoms()); f.num_levels()];
        let a = run_parallel_tempering(&f, &props, 50, seed).unwrap();
        let b = run_parallel_tempering(&f, &props, 50, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
