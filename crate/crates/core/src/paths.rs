//! Canonical paths over mode assignments built from adjacent swaps and
//! level-0 replacements, with the length, divergence and congestion
//! statistics used to compare the two auxiliary chains.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_budget, Error, Result};
use crate::kernels::StochasticMatrix;
use crate::measure::{bottleneck_b, pi_bar_at, ProductAssignment, ProductSpace, TemperedFamily};

/// One edge of the level-0-refresh-plus-swap chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Move {
    /// Exchange levels `i - 1` and `i`.
    AdjSwap(usize),
    /// Replace the mode at level 0.
    SetLevel0(usize),
}

impl Move {
    fn apply(self, state: &mut [usize], m: usize) -> Result<()> {
        match self {
            Move::AdjSwap(i) if i >= 1 && i < state.len() => state.swap(i - 1, i),
            Move::SetLevel0(k) if k < m => state[0] = k,
            other => {
                return Err(Error::invalid(format!(
                    "{other} is out of range for {} levels and {m} modes",
                    state.len()
                )))
            }
        }
        Ok(())
    }
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Move::AdjSwap(0) => write!(f, "swap(-1,0)"),
            Move::AdjSwap(i) => write!(f, "swap({},{})", i - 1, i),
            Move::SetLevel0(k) => write!(f, "set0({k})"),
        }
    }
}

/// A path given by its start and the moves applied in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveSequence {
    pub start: ProductAssignment,
    pub moves: Vec<Move>,
}

impl MoveSequence {
    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    /// Every state visited, start included.
    pub fn trajectory(&self, m: usize) -> Result<Vec<ProductAssignment>> {
        trajectory(&self.start, &self.moves, m)
    }

    pub fn endpoint(&self, m: usize) -> Result<ProductAssignment> {
        apply_moves(&self.start, &self.moves, m)
    }
}

/// Moves realizing the transposition of levels `i` and `j`, built by
/// recursive halving: `Swap(i, mid)`, `Swap(mid, j)`, `Swap(i, mid)`.
pub fn swap_sequence(i: usize, j: usize) -> Result<Vec<Move>> {
    if i >= j {
        return Err(Error::invalid(format!(
            "swap_sequence needs i < j (got {i}, {j})"
        )));
    }
    let mut out = Vec::with_capacity(path_length_f(j - i)? as usize);
    push_swaps(i, j, &mut out);
    Ok(out)
}

fn push_swaps(i: usize, j: usize, out: &mut Vec<Move>) {
    if j - i <= 1 {
        out.push(Move::AdjSwap(j));
        return;
    }
    let mid = (i + j) / 2;
    push_swaps(i, mid, out);
    push_swaps(mid, j, out);
    push_swaps(i, mid, out);
}

/// Length of [`swap_sequence`] over distance `ell`:
/// `F(1) = 1`, `F(ℓ) = 2F(⌊ℓ/2⌋) + F(⌈ℓ/2⌉)`.
pub fn path_length_f(ell: usize) -> Result<u64> {
    if ell == 0 {
        return Err(Error::invalid("path length needs distance ≥ 1"));
    }
    fn go(ell: usize) -> u64 {
        if ell == 1 {
            1
        } else {
            2 * go(ell / 2) + go(ell.div_ceil(2))
        }
    }
    Ok(go(ell))
}

/// `3⌈log₂ℓ⌉ + 2`, the unrolled divergence bound for a swap over distance `ℓ`.
pub fn divergence_bound(ell: usize) -> usize {
    3 * ceil_log2(ell) + 2
}

pub(crate) fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

pub(crate) fn floor_log2(n: usize) -> usize {
    assert!(n >= 1, "log of zero");
    (usize::BITS - 1 - n.leading_zeros()) as usize
}

pub fn apply_moves(
    lambda: &ProductAssignment,
    moves: &[Move],
    m: usize,
) -> Result<ProductAssignment> {
    let mut state = lambda.0.clone();
    for mv in moves {
        mv.apply(&mut state, m)?;
    }
    Ok(ProductAssignment(state))
}

pub fn trajectory(
    lambda: &ProductAssignment,
    moves: &[Move],
    m: usize,
) -> Result<Vec<ProductAssignment>> {
    let mut state = lambda.0.clone();
    let mut out = Vec::with_capacity(moves.len() + 1);
    out.push(lambda.clone());
    for mv in moves {
        mv.apply(&mut state, m)?;
        out.push(ProductAssignment(state.clone()));
    }
    Ok(out)
}

/// Largest Hamming distance to `lambda` over the visited states.
pub fn max_divergence(lambda: &ProductAssignment, moves: &[Move], m: usize) -> Result<usize> {
    Ok(trajectory(lambda, moves, m)?
        .iter()
        .map(|t| t.hamming(lambda))
        .max()
        .unwrap_or(0))
}

/// Mode with the largest top-level mass; ties go to the smaller index.
pub fn k_star(family: &TemperedFamily) -> usize {
    let masses = family.block_masses(family.top());
    let mut best = 0;
    for (k, &p) in masses.iter().enumerate() {
        if p > masses[best] {
            best = k;
        }
    }
    best
}

/// Path from `lambda` to `lambda` with level `i` set to `k`: park `k*` at
/// level 0, carry it to level `i`, load `k` at level 0, carry it back up, and
/// restore level 0. For `i = 0` this is the single replacement.
pub fn level0_path(
    lambda: &ProductAssignment,
    i: usize,
    k: usize,
    kstar: usize,
) -> Result<MoveSequence> {
    if i >= lambda.len() {
        return Err(Error::invalid(format!(
            "level {i} out of range for {} levels",
            lambda.len()
        )));
    }
    let moves = if i == 0 {
        vec![Move::SetLevel0(k)]
    } else {
        let swaps = swap_sequence(0, i)?;
        let mut moves = Vec::with_capacity(3 + 2 * swaps.len());
        moves.push(Move::SetLevel0(kstar));
        moves.extend_from_slice(&swaps);
        moves.push(Move::SetLevel0(k));
        moves.extend_from_slice(&swaps);
        moves.push(Move::SetLevel0(lambda.0[0]));
        moves
    };
    Ok(MoveSequence {
        start: lambda.clone(),
        moves,
    })
}

/// One canonical path per off-diagonal edge `(λ, λ_{[i,k]})`, `k ≠ λ_i`,
/// in order of `λ` index, then `i`, then `k`.
pub fn canonical_paths(
    m: usize,
    levels: usize,
    kstar: usize,
) -> impl Iterator<Item = (ProductAssignment, usize, usize, MoveSequence)> {
    let space = ProductSpace::new(m, levels);
    let n = space.size_exact() as usize;
    (0..n).flat_map(move |idx| {
        let lambda = ProductAssignment(space.decode(idx));
        (0..levels).flat_map(move |i| {
            let lambda = lambda.clone();
            let current = lambda.0[i];
            (0..m).filter(move |&k| k != current).map(move |k| {
                let path = level0_path(&lambda, i, k, kstar).expect("indices in range");
                (lambda.clone(), i, k, path)
            })
        })
    })
}

/// A path through state indices of some chain, with the edge it serves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedPath {
    pub from: usize,
    pub to: usize,
    /// Visited states, `from` first and `to` last.
    pub states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeLoad {
    pub from: usize,
    pub to: usize,
    /// `Σ |γ| π₂(ξ) P₂(ξ, ξ̃)` over paths using the edge.
    pub load: f64,
    /// `π₁(τ) P₁(τ, τ̃)`.
    pub flow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionReport {
    pub c: f64,
    /// Maximizing directed edge as `(τ, τ̃)` state indices.
    pub argmax_edge: Option<(usize, usize)>,
    pub argmax_states: Option<(Vec<usize>, Vec<usize>)>,
    pub paths: usize,
    pub max_path_length: usize,
    pub per_edge_loads: Vec<EdgeLoad>,
}

/// Congestion of a family of paths for comparing `p2` against `p1`.
///
/// Edges are directed and steps that stay put carry no Dirichlet energy,
/// so they are skipped in the accounting; `|γ|` is the full step count.
pub fn congestion<I>(
    p1: &StochasticMatrix,
    p2: &StochasticMatrix,
    paths: I,
) -> Result<CongestionReport>
where
    I: IntoIterator<Item = IndexedPath>,
{
    if p1.dim() != p2.dim() {
        return Err(Error::invalid("chains live on different state spaces"));
    }
    let diff = p1
        .stationary()
        .iter()
        .zip(p2.stationary())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if diff > crate::kernels::KERNEL_TOL {
        return Err(Error::Contract {
            what: "chains have different stationary distributions".into(),
            residual: diff,
        });
    }
    let mut loads: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut count = 0;
    let mut longest = 0;
    for path in paths {
        let (first, last) = (path.states.first(), path.states.last());
        if first != Some(&path.from) || last != Some(&path.to) {
            return Err(Error::invalid(format!(
                "path for edge ({}, {}) has wrong endpoints",
                path.from, path.to
            )));
        }
        let weight = p2.flow(path.from, path.to);
        let len = path.states.len() - 1;
        count += 1;
        longest = longest.max(len);
        for (s, w) in path.states.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            if a == b {
                continue;
            }
            if p1.get(a, b) <= 0.0 {
                return Err(Error::Contract {
                    what: format!(
                        "step {s} ({a} -> {b}) of the path for ({}, {}) is not an edge of the carrier chain",
                        path.from, path.to
                    ),
                    residual: 0.0,
                });
            }
            *loads.entry((a, b)).or_insert(0.0) += len as f64 * weight;
        }
    }
    let mut per_edge = Vec::with_capacity(loads.len());
    let mut c = 0.0;
    let mut arg = None;
    for (&(a, b), &load) in &loads {
        let flow = p1.flow(a, b);
        let ratio = load / flow;
        if ratio > c {
            c = ratio;
            arg = Some((a, b));
        }
        per_edge.push(EdgeLoad {
            from: a,
            to: b,
            load,
            flow,
        });
    }
    Ok(CongestionReport {
        c,
        argmax_edge: arg,
        argmax_states: arg.map(|(a, b)| (p1.codec().describe(a), p1.codec().describe(b))),
        paths: count,
        max_path_length: longest,
        per_edge_loads: per_edge,
    })
}

/// canonical paths for every off-diagonal edge of the refresh chain,
/// as assignment indices.
pub fn canonical_indexed_paths(
    family: &TemperedFamily,
    budget: usize,
) -> Result<impl Iterator<Item = IndexedPath>> {
    let space = family.assignment_space();
    space.size_within("assignment space", budget)?;
    let m = family.m();
    let kstar = k_star(family);
    Ok(
        canonical_paths(m, family.num_levels(), kstar).map(move |(lambda, i, k, path)| {
            let states: Vec<usize> = path
                .trajectory(m)
                .expect("valid moves")
                .iter()
                .map(|t| space.encode(&t.0))
                .collect();
            IndexedPath {
                from: space.encode(&lambda.0),
                to: space.encode(&lambda.with_level(i, k).0),
                states,
            }
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityReport {
    pub m: usize,
    pub levels: usize,
    pub paths: usize,
    /// Largest number of paths with the same `(i, k)` whose `s`-th step is
    /// the same edge.
    pub max_per_step: usize,
    /// `(i, k, s, from, to)` attaining `max_per_step`.
    pub argmax: Option<(usize, usize, usize, Vec<usize>, Vec<usize>)>,
    /// Largest number of paths through any single edge.
    pub max_per_edge: usize,
    /// The per-step bound being tested, `m`.
    pub bound: usize,
    pub holds: bool,
}

/// Exhaustive per-step edge multiplicity of the canonical paths.
pub fn edge_multiplicity_check(
    m: usize,
    levels: usize,
    kstar: usize,
    budget: usize,
) -> Result<MultiplicityReport> {
    if m == 0 || levels == 0 || kstar >= m {
        return Err(Error::invalid("need m ≥ 1, at least one level and k* < m"));
    }
    let space = ProductSpace::new(m, levels);
    let n = space.size_exact();
    check_budget("path enumeration", n * (levels * m * m) as u128, budget)?;
    let mut per_step: HashMap<(usize, usize, usize, usize, usize), usize> = HashMap::new();
    let mut per_edge: HashMap<(usize, usize), std::collections::HashSet<(usize, usize, usize)>> =
        HashMap::new();
    let mut count = 0;
    for (lambda, i, k, path) in canonical_paths(m, levels, kstar) {
        count += 1;
        let from = space.encode(&lambda.0);
        let states: Vec<usize> = path
            .trajectory(m)?
            .iter()
            .map(|t| space.encode(&t.0))
            .collect();
        for (s, w) in states.windows(2).enumerate() {
            if w[0] == w[1] {
                continue;
            }
            *per_step.entry((i, k, s, w[0], w[1])).or_insert(0) += 1;
            per_edge
                .entry((w[0], w[1]))
                .or_default()
                .insert((from, i, k));
        }
    }
    let mut best: Option<((usize, usize, usize, usize, usize), usize)> = None;
    for (&key, &c) in &per_step {
        let better = match best {
            None => true,
            Some((bk, bc)) => c > bc || (c == bc && key < bk),
        };
        if better {
            best = Some((key, c));
        }
    }
    let max_per_step = best.map_or(0, |b| b.1);
    Ok(MultiplicityReport {
        m,
        levels,
        paths: count,
        max_per_step,
        argmax: best.map(|((i, k, s, a, b), _)| (i, k, s, space.decode(a), space.decode(b))),
        max_per_edge: per_edge.values().map(|s| s.len()).max().unwrap_or(0),
        bound: m,
        holds: max_per_step <= m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassRatioViolation {
    pub lambda: Vec<usize>,
    pub i: usize,
    pub k: usize,
    pub tau: Vec<usize>,
    pub divergence: usize,
    pub ratio: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassRatioReport {
    pub bottleneck: f64,
    pub states_checked: usize,
    /// Smallest `π̄(τ) / min{π̄(λ), π̄(λ_{[i,k]})}` divided by `B^d / m`.
    pub min_slack: f64,
    pub violations: Vec<MassRatioViolation>,
    pub holds: bool,
}

/// Checks `π̄(τ) ≥ (B^d / m) · min{π̄(λ), π̄(λ_{[i,k]})}` for every state `τ`
/// on every canonical path, where `d` is the Hamming distance from `τ`
/// to `λ`. `tol` is a relative tolerance.
pub fn mass_ratio_check(
    family: &TemperedFamily,
    tol: f64,
    budget: usize,
) -> Result<MassRatioReport> {
    family
        .assignment_space()
        .size_within("assignment space", budget)?;
    let m = family.m();
    let b = bottleneck_b(family);
    let kstar = k_star(family);
    let mut checked = 0;
    let mut min_slack = f64::INFINITY;
    let mut violations = Vec::new();
    for (lambda, i, k, path) in canonical_paths(m, family.num_levels(), kstar) {
        let end = lambda.with_level(i, k);
        let floor = pi_bar_at(family, &lambda.0).min(pi_bar_at(family, &end.0));
        for tau in path.trajectory(m)? {
            checked += 1;
            let d = tau.hamming(&lambda);
            let bound = b.powi(d as i32) / m as f64;
            let ratio = pi_bar_at(family, &tau.0) / floor;
            let slack = ratio / bound;
            min_slack = min_slack.min(slack);
            if slack < 1.0 - tol {
                violations.push(MassRatioViolation {
                    lambda: lambda.0.clone(),
                    i,
                    k,
                    tau: tau.0.clone(),
                    divergence: d,
                    ratio,
                    bound,
                });
            }
        }
    }
    Ok(MassRatioReport {
        bottleneck: b,
        states_checked: checked,
        min_slack,
        holds: violations.is_empty(),
        violations,
    })
}

/// Writes `lambda,i,k,step,move,state` rows, one per move.
pub fn write_paths_csv<W, I>(mut out: W, m: usize, paths: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (ProductAssignment, usize, usize, MoveSequence)>,
{
    let join = |v: &[usize]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    writeln!(out, "lambda,i,k,step,move,state")?;
    for (lambda, i, k, path) in paths {
        let states = path.trajectory(m)?;
        for (s, mv) in path.moves.iter().enumerate() {
            writeln!(
                out,
                "{},{i},{k},{s},{mv},{}",
                join(&lambda.0),
                join(&states[s + 1].0)
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pa(v: &[usize]) -> ProductAssignment {
        ProductAssignment(v.to_vec())
    }

    #[test]
    fn swap_sequence_base_and_one_step() {
        assert_eq!(swap_sequence(0, 1).unwrap(), vec![Move::AdjSwap(1)]);
        assert_eq!(
            swap_sequence(0, 2).unwrap(),
            vec![Move::AdjSwap(1), Move::AdjSwap(2), Move::AdjSwap(1)]
        );
        let abc = pa(&[0, 1, 2]);
        assert_eq!(
            apply_moves(&abc, &swap_sequence(0, 2).unwrap(), 3).unwrap(),
            pa(&[2, 1, 0])
        );
        assert_eq!(swap_sequence(0, 4).unwrap().len(), 9);
        assert!(swap_sequence(2, 2).is_err());
    }

    #[test]
    fn f_values() {
        assert_eq!(path_length_f(1).unwrap(), 1);
        for t in 0..=6u32 {
            assert_eq!(path_length_f(1 << t).unwrap(), 3u64.pow(t));
        }
        assert!(path_length_f(0).is_err());
        assert_eq!(path_length_f(3).unwrap(), 2 + 3);
    }

    #[test]
    fn apply_moves_cases() {
        let l = pa(&[0, 1, 1, 0]);
        assert_eq!(apply_moves(&l, &[], 2).unwrap(), l);
        assert_eq!(
            apply_moves(&l, &[Move::AdjSwap(1), Move::AdjSwap(1)], 2).unwrap(),
            l
        );
        assert!(apply_moves(&l, &[Move::AdjSwap(4)], 2).is_err());
        assert!(apply_moves(&l, &[Move::AdjSwap(0)], 2).is_err());
        assert!(apply_moves(&l, &[Move::SetLevel0(2)], 2).is_err());
        let l = pa(&[0, 1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(
            apply_moves(&l, &swap_sequence(2, 7).unwrap(), 9).unwrap(),
            l.transposed(2, 7)
        );
    }

    #[test]
    fn base_swap_divergence_is_two() {
        let l = pa(&[0, 1, 2]);
        assert_eq!(
            max_divergence(&l, &swap_sequence(1, 2).unwrap(), 3).unwrap(),
            2
        );
    }

    #[test]
    fn level0_path_shapes() {
        let l = pa(&[1, 0, 2]);
        let p = level0_path(&l, 0, 2, 0).unwrap();
        assert_eq!(p.moves, vec![Move::SetLevel0(2)]);
        let p = level0_path(&l, 1, 2, 0).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(p.endpoint(3).unwrap(), l.with_level(1, 2));
        let p = level0_path(&l, 2, 1, 2).unwrap();
        assert_eq!(p.len() as u64, 3 + 2 * path_length_f(2).unwrap());
        assert_eq!(p.endpoint(3).unwrap(), l.with_level(2, 1));
    }

    #[test]
    fn log_helpers() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(5), 3);
        assert_eq!(floor_log2(1), 0);
        assert_eq!(floor_log2(7), 2);
        assert_eq!(floor_log2(8), 3);
    }

    #[test]
    fn multiplicity_trivial_for_one_mode() {
        let r = edge_multiplicity_check(1, 3, 0, 1_000_000).unwrap();
        assert_eq!(r.paths, 0);
        assert!(r.max_per_step <= 1);
    }

    #[test]
    fn paths_csv_has_one_row_per_move() {
        let mut buf = Vec::new();
        let paths: Vec<_> = canonical_paths(2, 2, 0).collect();
        let moves: usize = paths.iter().map(|p| p.3.len()).sum();
        write_paths_csv(&mut buf, 2, paths).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), moves + 1);
    }
}
