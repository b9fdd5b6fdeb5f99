//! End-to-end comparison pipeline for the spectral-gap lower bound on small
//! families: auxiliary chains, canonical-path congestion, the decomposition
//! inequalities and the path mass-ratio law.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, DEFAULT_STATE_BUDGET};
use crate::kernels::{
    aux_chain_p1, aux_chain_p2, level_kernels, product_update_t, project_to_assignments,
    projected_level_kernel, pt_kernel, restrict, swap_kernel_q, StochasticMatrix,
};
use crate::measure::{bottleneck_b, overlap_phi, TemperedFamily};
use crate::paths::{
    canonical_indexed_paths, congestion, mass_ratio_check, CongestionReport, MassRatioReport,
};
use crate::sparse::SparseMatrix;
use crate::spectral::{dirichlet_form, spectral_gap_with, SpectralOptions};

#[derive(Debug, Clone)]
pub struct LowerBoundOptions {
    pub budget: usize,
    /// Absolute slack allowed on every inequality.
    pub tol: f64,
    pub test_functions: usize,
    pub seed: u64,
    pub spectral: SpectralOptions,
}

impl Default for LowerBoundOptions {
    fn default() -> Self {
        LowerBoundOptions {
            budget: DEFAULT_STATE_BUDGET,
            tol: 1e-8,
            test_functions: 100,
            seed: 1,
            spectral: SpectralOptions::default(),
        }
    }
}

/// `lhs ≤ rhs + tol`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`.
    pub margin: f64,
    pub holds: bool,
}

impl InequalityCheck {
    fn le(name: &str, lhs: f64, rhs: f64, tol: f64) -> Self {
        InequalityCheck {
            name: name.to_string(),
            lhs,
            rhs,
            margin: rhs - lhs,
            holds: lhs <= rhs + tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub m: usize,
    pub levels: usize,
    pub n_atoms: usize,
    pub phi: f64,
    pub bottleneck: f64,
    pub gap_p1: f64,
    pub gap_p2: f64,
    pub gap_pt: f64,
    pub gap_pt_bar: f64,
    /// Gap of the projected level kernel, one per level.
    pub gap_projected_levels: Vec<f64>,
    /// `gap_restricted_levels[i][k]` is the gap of `T_i` restricted to `A_k`.
    pub gap_restricted_levels: Vec<Vec<f64>>,
    /// Gap of `P_pt` restricted to each assignment's fibre, indexed like
    /// the assignment space.
    pub gap_restricted_pt: Vec<f64>,
    pub congestion: CongestionReport,
    /// Largest `ℰ_{P₂}(f) / ℰ_{P₁}(f)` over the random test functions.
    pub max_dirichlet_ratio: f64,
    pub checks: Vec<InequalityCheck>,
    pub mass_ratio: MassRatioReport,
    pub holds: bool,
}

fn gap(p: &StochasticMatrix, opts: &SpectralOptions) -> Result<f64> {
    Ok(spectral_gap_with(p, opts)?.gap)
}

fn min(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(f64::INFINITY, f64::min)
}

/// Runs the whole pipeline on `family` with a shared symmetric proposal.
pub fn verify_lower(
    family: &TemperedFamily,
    proposal: &SparseMatrix,
    opts: &LowerBoundOptions,
) -> Result<LowerBoundReport> {
    if family.top() == 0 {
        return Err(Error::invalid(
            "the lower-bound pipeline needs at least two levels",
        ));
    }
    let budget = opts.budget;
    let spec = &opts.spectral;
    let tol = opts.tol;
    let levels = family.num_levels();
    let m = family.m();

    let tks = level_kernels(family, proposal)?;
    let t = product_update_t(family, &tks, budget)?;
    let q = swap_kernel_q(family, budget)?;
    let ppt = pt_kernel(&t, &q)?;
    let ppt_bar = project_to_assignments(family, &ppt, budget)?;
    let p1 = aux_chain_p1(family, budget)?;
    let p2 = aux_chain_p2(family, budget)?;

    let gap_p1 = gap(&p1, spec)?;
    let gap_p2 = gap(&p2, spec)?;
    let gap_pt = gap(&ppt, spec)?;
    let gap_pt_bar = gap(&ppt_bar, spec)?;
    let gap_projected_levels = tks
        .iter()
        .map(|k| gap(&projected_level_kernel(family, k)?, spec))
        .collect::<Result<Vec<_>>>()?;
    let gap_restricted_levels = tks
        .iter()
        .map(|k| {
            (0..m)
                .map(|mode| {
                    let atoms: Vec<usize> = family.atoms_of(mode).collect();
                    gap(&restrict(k, &atoms)?, spec)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let blocks = crate::kernels::assignment_blocks(family, budget)?;
    let mut fibres = vec![Vec::new(); family.assignment_space().size_exact() as usize];
    for (x, &b) in blocks.iter().enumerate() {
        fibres[b].push(x);
    }
    let gap_restricted_pt = fibres
        .iter()
        .map(|f| gap(&restrict(&ppt, f)?, spec))
        .collect::<Result<Vec<_>>>()?;

    let cong = congestion(&p1, &p2, canonical_indexed_paths(family, budget)?)?;
    let c = cong.c;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut max_ratio: f64 = 0.0;
    let mut dirichlet_ok = true;
    for _ in 0..opts.test_functions {
        let f: Vec<f64> = (0..p1.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e1 = dirichlet_form(&p1, &f)?;
        let e2 = dirichlet_form(&p2, &f)?;
        if e2 > c * e1 + tol {
            dirichlet_ok = false;
        }
        if e1 > 0.0 {
            max_ratio = max_ratio.max(e2 / e1);
        }
    }

    let min_restricted_level = min(gap_restricted_levels.iter().flatten().copied());
    let min_restricted_pt = min(gap_restricted_pt.iter().copied());
    let mut checks = vec![
        InequalityCheck::le("comparison: gap(P2) <= c gap(P1)", gap_p2, c * gap_p1, tol),
        InequalityCheck::le("dirichlet: max E_P2(f)/E_P1(f) <= c", max_ratio, c, tol),
        InequalityCheck::le(
            "decomposition: gap(P_pt_bar) min_lambda gap(P_pt|X_lambda) / 2 <= gap(P_pt)",
            0.5 * gap_pt_bar * min_restricted_pt,
            gap_pt,
            tol,
        ),
        InequalityCheck::le(
            "restriction: min_ik gap(T_i|A_k) / (8(L+1)) <= min_lambda gap(P_pt|X_lambda)",
            min_restricted_level / (8.0 * levels as f64),
            min_restricted_pt,
            tol,
        ),
        InequalityCheck::le(
            "projection: gap(P1) gap(T_0_bar) / 4 <= gap(P_pt_bar)",
            gap_p1 * gap_projected_levels[0] / 4.0,
            gap_pt_bar,
            tol,
        ),
    ];
    if !dirichlet_ok {
        checks[1].holds = false;
    }
    let mass_ratio = mass_ratio_check(family, 1e-10, budget)?;
    let holds = checks.iter().all(|c| c.holds) && mass_ratio.holds;
    Ok(LowerBoundReport {
        m,
        levels,
        n_atoms: family.n_atoms(),
        phi: overlap_phi(family)?,
        bottleneck: bottleneck_b(family),
        gap_p1,
        gap_p2,
        gap_pt,
        gap_pt_bar,
        gap_projected_levels,
        gap_restricted_levels,
        gap_restricted_pt,
        congestion: cong,
        max_dirichlet_ratio: max_ratio,
        checks,
        mass_ratio,
        holds,
    })
}
