//! Monte Carlo runs of the update-then-swap sampler on a tempered family.
//!
//! Random streams: the seed keys a ChaCha8 generator; level `i` draws its
//! proposals and acceptances from stream `i`, the swap sweep from stream
//! `L + 1`, and the initial state from stream `L + 2`. The mapping is part
//! of the output contract, so traces are reproducible across releases.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{swap_acceptance, KERNEL_TOL};
use crate::measure::TemperedFamily;
use crate::sparse::SparseMatrix;

/// Samples and swap counters of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PTTrace {
    pub seed: u64,
    pub initial: Vec<usize>,
    /// `samples[n][i]` is the atom at level `i` after iteration `n + 1`.
    pub samples: Vec<Vec<usize>>,
    /// Attempts and accepts for the pair `(i − 1, i)` at index `i − 1`.
    pub swap_attempts: Vec<u64>,
    pub swap_accepts: Vec<u64>,
}

impl PTTrace {
    pub fn iterations(&self) -> usize {
        self.samples.len()
    }

    pub fn levels(&self) -> usize {
        self.initial.len()
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw(row: impl Iterator<Item = (usize, f64)>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (c, p) in row {
        acc += p;
        last = c;
        if u < acc {
            return c;
        }
    }
    last
}

fn draw_dense(probs: &[f64], u: f64) -> usize {
    draw(probs.iter().copied().enumerate(), u)
}

fn check_proposals(family: &TemperedFamily, proposals: &[SparseMatrix]) -> Result<()> {
    if proposals.len() != family.num_levels() {
        return Err(Error::invalid(format!(
            "{} proposals for {} levels",
            proposals.len(),
            family.num_levels()
        )));
    }
    for (i, q) in proposals.iter().enumerate() {
        if q.dim() != family.n_atoms() {
            return Err(Error::invalid(format!("proposal {i} has the wrong size")));
        }
        if q.asymmetry() > 1e-12 {
            return Err(Error::invalid(format!("proposal {i} is not symmetric")));
        }
        if (0..q.dim()).any(|r| (q.row_sum(r) - 1.0).abs() > KERNEL_TOL) {
            return Err(Error::invalid(format!("proposal {i} is not stochastic")));
        }
    }
    Ok(())
}

/// Runs `n` iterations from an initial state drawn level-wise from the family.
pub fn run_parallel_tempering(
    family: &TemperedFamily,
    proposals: &[SparseMatrix],
    n: usize,
    seed: u64,
) -> Result<PTTrace> {
    let mut init_rng = rng_for(seed, family.num_levels() as u64 + 1);
    let initial: Vec<usize> = (0..family.num_levels())
        .map(|i| draw_dense(family.level(i), init_rng.random::<f64>()))
        .collect();
    run_parallel_tempering_from(family, proposals, initial, n, seed)
}

/// Runs `n` iterations from `initial`. Each iteration moves every level by
/// one Metropolis step, then sweeps swaps over `i = 1, …, L` in order.
pub fn run_parallel_tempering_from(
    family: &TemperedFamily,
    proposals: &[SparseMatrix],
    initial: Vec<usize>,
    n: usize,
    seed: u64,
) -> Result<PTTrace> {
    check_proposals(family, proposals)?;
    if initial.len() != family.num_levels() || initial.iter().any(|&x| x >= family.n_atoms()) {
        return Err(Error::invalid("initial state does not match the family"));
    }
    let levels = family.num_levels();
    let top = family.top();
    let mut level_rngs: Vec<ChaCha8Rng> = (0..levels as u64).map(|i| rng_for(seed, i)).collect();
    let mut swap_rng = rng_for(seed, levels as u64);
    let mut theta = initial.clone();
    let mut samples = Vec::with_capacity(n);
    let mut attempts = vec![0u64; top];
    let mut accepts = vec![0u64; top];
    for _ in 0..n {
        for i in 0..levels {
            let rng = &mut level_rngs[i];
            let x = theta[i];
            let y = draw(proposals[i].row(x), rng.random::<f64>());
            let pi = family.level(i);
            let u: f64 = rng.random();
            if u < (pi[y] / pi[x]).min(1.0) {
                theta[i] = y;
            }
        }
        for i in 1..=top {
            attempts[i - 1] += 1;
            let alpha = swap_acceptance(family, i, theta[i - 1], theta[i]);
            let u: f64 = swap_rng.random();
            if u < alpha {
                theta.swap(i - 1, i);
                accepts[i - 1] += 1;
            }
        }
        samples.push(theta.clone());
    }
    Ok(PTTrace {
        seed,
        initial,
        samples,
        swap_attempts: attempts,
        swap_accepts: accepts,
    })
}

/// Independent runs, one per seed, executed on the rayon pool.
pub fn run_replicas(
    family: &TemperedFamily,
    proposals: &[SparseMatrix],
    n: usize,
    seeds: &[u64],
) -> Result<Vec<PTTrace>> {
    seeds
        .par_iter()
        .map(|&s| run_parallel_tempering(family, proposals, n, s))
        .collect()
}

/// Per-pair acceptance rate; absent for pairs never attempted.
pub fn swap_stats(trace: &PTTrace) -> Vec<Option<f64>> {
    trace
        .swap_attempts
        .iter()
        .zip(&trace.swap_accepts)
        .map(|(&a, &c)| (a > 0).then(|| c as f64 / a as f64))
        .collect()
}

fn check_burn_in(trace: &PTTrace, burn_in: usize) -> Result<()> {
    if burn_in >= trace.iterations() {
        return Err(Error::invalid(format!(
            "burn-in {burn_in} leaves no samples out of {}",
            trace.iterations()
        )));
    }
    Ok(())
}

/// Empirical atom frequencies at `level` after `burn_in` iterations.
pub fn empirical_distribution(
    trace: &PTTrace,
    n_atoms: usize,
    level: usize,
    burn_in: usize,
) -> Result<Vec<f64>> {
    check_burn_in(trace, burn_in)?;
    if level >= trace.levels() {
        return Err(Error::invalid(format!("level {level} out of range")));
    }
    let mut counts = vec![0.0; n_atoms];
    for s in &trace.samples[burn_in..] {
        let a = s[level];
        if a >= n_atoms {
            return Err(Error::invalid("trace atom outside the reference support"));
        }
        counts[a] += 1.0;
    }
    let total = (trace.iterations() - burn_in) as f64;
    Ok(counts.into_iter().map(|c| c / total).collect())
}

/// `½ Σ |empirical − reference|` at the top level.
pub fn empirical_tv(trace: &PTTrace, reference: &[f64], burn_in: usize) -> Result<f64> {
    let top = trace.levels() - 1;
    empirical_tv_at(trace, reference, top, burn_in)
}

pub fn empirical_tv_at(
    trace: &PTTrace,
    reference: &[f64],
    level: usize,
    burn_in: usize,
) -> Result<f64> {
    let emp = empirical_distribution(trace, reference.len(), level, burn_in)?;
    Ok(0.5
        * emp
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

/// Fraction of post-burn-in samples at `level` in each mode.
pub fn occupancy(
    trace: &PTTrace,
    labels: &[usize],
    m: usize,
    level: usize,
    burn_in: usize,
) -> Result<Vec<f64>> {
    let emp = empirical_distribution(trace, labels.len(), level, burn_in)?;
    let mut occ = vec![0.0; m];
    for (a, p) in emp.into_iter().enumerate() {
        occ[labels[a]] += p;
    }
    Ok(occ)
}

/// Integrated autocorrelation time `1 + 2 Σ_{t≥1} ρ_t` of `f` under the
/// stationary chain `kernel`, summed until `|ρ_t|` drops below `cutoff`.
pub fn integrated_autocorrelation(
    kernel: &SparseMatrix,
    stationary: &[f64],
    f: &[f64],
    cutoff: f64,
    max_lag: usize,
) -> Result<f64> {
    if f.len() != kernel.dim() || stationary.len() != kernel.dim() {
        return Err(Error::invalid("dimension mismatch in autocorrelation"));
    }
    let mean: f64 = stationary.iter().zip(f).map(|(p, x)| p * x).sum();
    let g: Vec<f64> = f.iter().map(|x| x - mean).collect();
    let var: f64 = stationary.iter().zip(&g).map(|(p, x)| p * x * x).sum();
    if var == 0.0 {
        return Ok(1.0);
    }
    let mut kg = g.clone();
    let mut tau = 1.0;
    for _ in 0..max_lag {
        kg = kernel.matvec(&kg);
        let rho = stationary
            .iter()
            .zip(&g)
            .zip(&kg)
            .map(|((p, a), b)| p * a * b)
            .sum::<f64>()
            / var;
        tau += 2.0 * rho;
        if rho.abs() < cutoff {
            return Ok(tau);
        }
    }
    Err(Error::Contract {
        what: format!("autocorrelation did not decay within {max_lag} lags"),
        residual: cutoff,
    })
}

/// Writes `iteration,level,atom` rows; iteration 0 is the initial state.
pub fn write_trace_csv<W: Write>(mut out: W, trace: &PTTrace, all_levels: bool) -> Result<()> {
    writeln!(out, "iteration,level,atom")?;
    let top = trace.levels() - 1;
    let levels: Vec<usize> = if all_levels {
        (0..=top).collect()
    } else {
        vec![top]
    };
    let rows = std::iter::once(&trace.initial).chain(&trace.samples);
    for (n, state) in rows.enumerate() {
        for &i in &levels {
            writeln!(out, "{n},{i},{}", state[i])?;
        }
    }
    Ok(())
}

/// Summary with acceptance rates and top-level mode occupancy.
pub fn summary_json(
    trace: &PTTrace,
    family: &TemperedFamily,
    burn_in: usize,
) -> Result<serde_json::Value> {
    let occ = occupancy(trace, family.labels(), family.m(), family.top(), burn_in)?;
    Ok(serde_json::json!({
        "seed": trace.seed,
        "iterations": trace.iterations(),
        "burn_in": burn_in,
        "swap_attempts": trace.swap_attempts,
        "swap_accepts": trace.swap_accepts,
        "acceptance": swap_stats(trace),
        "occupancy_top": occ,
        "exact_top_masses": family.block_masses(family.top()),
        "empirical_tv_top": empirical_tv(trace, family.level(family.top()), burn_in)?,
    }))
}
