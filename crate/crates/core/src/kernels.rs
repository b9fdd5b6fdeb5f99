//! Reversible transition kernels on finite spaces.
//!
//! Product-space kernels index configurations `(θ_0, …, θ_L)` with the
//! mixed-radix encoding of [`ProductSpace`]: level 0 is the most significant
//! digit. Assignment-space kernels use the same encoding over modes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{ProductSpace, TemperedFamily};
use crate::sparse::SparseMatrix;

/// Tolerance for row sums and detailed balance.
pub const KERNEL_TOL: f64 = 1e-10;

/// Tolerance for proposal symmetry.
const SYMMETRY_TOL: f64 = 1e-12;

/// What the state indices of a kernel mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateCodec {
    /// Bare indices `0..n`.
    Indexed { n: usize },
    /// Atoms of a single level.
    Atoms { n: usize },
    /// Atom configurations `X^{levels}`, mixed radix with level 0 most significant.
    ProductAtoms { atoms: usize, levels: usize },
    /// Mode assignments `[m]^{levels}`, mixed radix with level 0 most significant.
    Assignments { modes: usize, levels: usize },
    /// Blocks of a partition of some parent space.
    Blocks { n: usize },
    /// A subset of a parent space; `members[j]` is the parent index of state `j`.
    Subset {
        parent: Box<StateCodec>,
        members: Vec<usize>,
    },
    /// Explicitly listed tuples, one per state.
    Listed { states: Vec<Vec<usize>> },
}

impl StateCodec {
    pub fn len(&self) -> usize {
        match self {
            StateCodec::Indexed { n } | StateCodec::Atoms { n } | StateCodec::Blocks { n } => *n,
            StateCodec::ProductAtoms { atoms, levels } => {
                ProductSpace::new(*atoms, *levels).size_exact() as usize
            }
            StateCodec::Assignments { modes, levels } => {
                ProductSpace::new(*modes, *levels).size_exact() as usize
            }
            StateCodec::Subset { members, .. } => members.len(),
            StateCodec::Listed { states } => states.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Semantic tuple for state `index`, where one exists.
    pub fn describe(&self, index: usize) -> Vec<usize> {
        match self {
            StateCodec::ProductAtoms { atoms, levels } => {
                ProductSpace::new(*atoms, *levels).decode(index)
            }
            StateCodec::Assignments { modes, levels } => {
                ProductSpace::new(*modes, *levels).decode(index)
            }
            StateCodec::Subset { parent, members } => parent.describe(members[index]),
            StateCodec::Listed { states } => states[index].clone(),
            _ => vec![index],
        }
    }
}

/// Row-stochastic matrix reversible with respect to `stationary`.
///
/// Construction validates nonnegativity, row sums and detailed balance to
/// [`KERNEL_TOL`]; every instance therefore satisfies them.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    matrix: SparseMatrix,
    stationary: Vec<f64>,
    codec: StateCodec,
}

impl StochasticMatrix {
    pub fn new(matrix: SparseMatrix, stationary: Vec<f64>, codec: StateCodec) -> Result<Self> {
        let n = matrix.dim();
        if n == 0 {
            return Err(Error::invalid("kernel over an empty state space"));
        }
        if stationary.len() != n || codec.len() != n {
            return Err(Error::invalid(format!(
                "kernel has {n} states but stationary has {} and codec {}",
                stationary.len(),
                codec.len()
            )));
        }
        if let Some(p) = stationary.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::invalid(format!(
                "stationary mass {p} is not positive"
            )));
        }
        let total: f64 = stationary.iter().sum();
        if (total - 1.0).abs() > KERNEL_TOL {
            return Err(Error::Contract {
                what: "stationary distribution does not sum to 1".into(),
                residual: (total - 1.0).abs(),
            });
        }
        if let Some((r, c, v)) = matrix.triplets().find(|t| t.2 < 0.0) {
            return Err(Error::invalid(format!(
                "negative transition probability {v} at ({r}, {c})"
            )));
        }
        let kernel = StochasticMatrix {
            matrix,
            stationary,
            codec,
        };
        let rows = kernel.row_sum_residual();
        if rows > KERNEL_TOL {
            return Err(Error::Contract {
                what: "rows do not sum to 1".into(),
                residual: rows,
            });
        }
        let balance = kernel.detailed_balance_residual();
        if balance > KERNEL_TOL {
            return Err(Error::Contract {
                what: "detailed balance fails".into(),
                residual: balance,
            });
        }
        Ok(kernel)
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn codec(&self) -> &StateCodec {
        &self.codec
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.matrix.get(x, y)
    }

    /// Ergodic flow `π(x) P(x, y)`.
    pub fn flow(&self, x: usize, y: usize) -> f64 {
        self.stationary[x] * self.matrix.get(x, y)
    }

    /// `max_x |Σ_y P(x, y) − 1|`.
    pub fn row_sum_residual(&self) -> f64 {
        (0..self.dim())
            .map(|r| (self.matrix.row_sum(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `max_{x,y} |π(x) P(x,y) − π(y) P(y,x)|`.
    pub fn detailed_balance_residual(&self) -> f64 {
        detailed_balance_residual(&self.matrix, &self.stationary)
    }

    pub fn min_diagonal(&self) -> f64 {
        (0..self.dim())
            .map(|x| self.matrix.get(x, x))
            .fold(f64::INFINITY, f64::min)
    }

    /// `Σ_j w_j P_j` over kernels sharing a state space and stationary law.
    pub fn mixture(terms: &[(f64, &StochasticMatrix)]) -> Result<StochasticMatrix> {
        let first = terms
            .first()
            .ok_or_else(|| Error::invalid("empty mixture"))?
            .1;
        let weight: f64 = terms.iter().map(|t| t.0).sum();
        if terms.iter().any(|t| t.0 < 0.0) || (weight - 1.0).abs() > KERNEL_TOL {
            return Err(Error::invalid(
                "mixture weights must be nonnegative and sum to 1",
            ));
        }
        for (_, k) in terms {
            check_same_space(first, k)?;
        }
        let mats: Vec<(f64, &SparseMatrix)> = terms.iter().map(|&(w, k)| (w, &k.matrix)).collect();
        StochasticMatrix::new(
            SparseMatrix::linear_combination(&mats)?,
            first.stationary.clone(),
            first.codec.clone(),
        )
    }

    /// Writes `row,col,value` lines for every nonzero entry.
    pub fn write_triplet_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "row,col,value")?;
        for (r, c, v) in self.matrix.triplets() {
            writeln!(out, "{r},{c},{v:e}")?;
        }
        Ok(())
    }

    /// JSON header accompanying the triplet CSV.
    pub fn header_json(&self) -> serde_json::Value {
        serde_json::json!({
            "states": self.dim(),
            "nnz": self.matrix.nnz(),
            "codec": self.codec,
            "stationary": self.stationary,
            "row_sum_residual": self.row_sum_residual(),
            "detailed_balance_residual": self.detailed_balance_residual(),
        })
    }
}

pub(crate) fn detailed_balance_residual(matrix: &SparseMatrix, stationary: &[f64]) -> f64 {
    matrix
        .triplets()
        .map(|(x, y, v)| (stationary[x] * v - stationary[y] * matrix.get(y, x)).abs())
        .fold(0.0, f64::max)
}

fn check_same_space(a: &StochasticMatrix, b: &StochasticMatrix) -> Result<()> {
    if a.dim() != b.dim() || a.codec != b.codec {
        return Err(Error::invalid("kernels live on different state spaces"));
    }
    let diff = a
        .stationary
        .iter()
        .zip(&b.stationary)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    if diff > KERNEL_TOL {
        return Err(Error::Contract {
            what: "kernels have different stationary distributions".into(),
            residual: diff,
        });
    }
    Ok(())
}

/// Uniform proposal over all `n` atoms, including staying put.
pub fn uniform_proposal(n: usize) -> SparseMatrix {
    let p = 1.0 / n as f64;
    SparseMatrix::from_triplets(
        n,
        (0..n)
            .flat_map(|r| (0..n).map(move |c| (r, c, p)))
            .collect(),
    )
    .expect("indices in range")
}

/// Nearest-neighbour proposal on a cycle of `n` atoms.
pub fn ring_proposal(n: usize) -> SparseMatrix {
    let triplets = match n {
        0 => vec![],
        1 => vec![(0, 0, 1.0)],
        2 => vec![(0, 1, 1.0), (1, 0, 1.0)],
        _ => (0..n)
            .flat_map(|r| [(r, (r + 1) % n, 0.5), (r, (r + n - 1) % n, 0.5)])
            .collect(),
    };
    SparseMatrix::from_triplets(n, triplets).expect("indices in range")
}

/// Metropolis kernel for `level_dist` with a symmetric proposal and
/// ½-holding: off-diagonal mass `½ · q(x,y) · min{1, π(y)/π(x)}`.
pub fn metropolis_level_kernel(
    level_dist: &[f64],
    proposal: &SparseMatrix,
) -> Result<StochasticMatrix> {
    let n = level_dist.len();
    if proposal.dim() != n {
        return Err(Error::invalid(format!(
            "proposal has {} states, distribution has {n}",
            proposal.dim()
        )));
    }
    let asym = proposal.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::invalid(format!(
            "proposal is not symmetric (residual {asym:e})"
        )));
    }
    if let Some(r) = (0..n).find(|&r| (proposal.row_sum(r) - 1.0).abs() > KERNEL_TOL) {
        return Err(Error::invalid(format!(
            "proposal row {r} does not sum to 1"
        )));
    }
    let mut triplets = Vec::with_capacity(proposal.nnz() + n);
    for x in 0..n {
        let mut moved = 0.0;
        for (y, q) in proposal.row(x) {
            if y == x {
                continue;
            }
            let p = 0.5 * q * (level_dist[y] / level_dist[x]).min(1.0);
            moved += p;
            triplets.push((x, y, p));
        }
        triplets.push((x, x, 1.0 - moved));
    }
    StochasticMatrix::new(
        SparseMatrix::from_triplets(n, triplets)?,
        level_dist.to_vec(),
        StateCodec::Atoms { n },
    )
}

/// Level kernels for every level of `family` from one shared proposal.
pub fn level_kernels(
    family: &TemperedFamily,
    proposal: &SparseMatrix,
) -> Result<Vec<StochasticMatrix>> {
    (0..family.num_levels())
        .map(|i| metropolis_level_kernel(family.level(i), proposal))
        .collect()
}

fn product_stationary(family: &TemperedFamily, space: ProductSpace) -> Vec<f64> {
    (0..space.size_exact() as usize)
        .map(|idx| {
            space
                .decode(idx)
                .iter()
                .enumerate()
                .map(|(i, &x)| family.level(i)[x])
                .product()
        })
        .collect()
}

/// Product update `T`: with probability `1/(2(L+1))` apply `T_i` to level
/// `i`, for each `i`; hold with the remaining probability ½.
pub fn product_update_t(
    family: &TemperedFamily,
    level_kernels: &[StochasticMatrix],
    budget: usize,
) -> Result<StochasticMatrix> {
    let levels = family.num_levels();
    if level_kernels.len() != levels {
        return Err(Error::invalid(format!(
            "{} level kernels for {levels} levels",
            level_kernels.len()
        )));
    }
    for (i, k) in level_kernels.iter().enumerate() {
        if k.dim() != family.n_atoms() {
            return Err(Error::invalid(format!(
                "level kernel {i} has the wrong size"
            )));
        }
        let diff = k
            .stationary()
            .iter()
            .zip(family.level(i))
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        if diff > KERNEL_TOL {
            return Err(Error::Contract {
                what: format!("level kernel {i} is not reversible w.r.t. level {i}"),
                residual: diff,
            });
        }
    }
    let space = family.atom_product_space();
    let n = space.size_within("product space", budget)?;
    let weight = 1.0 / (2.0 * levels as f64);
    let mut triplets = Vec::new();
    for idx in 0..n {
        let theta = space.decode(idx);
        triplets.push((idx, idx, 0.5));
        for (i, kernel) in level_kernels.iter().enumerate() {
            let stride = space.stride(i);
            let base = idx - theta[i] * stride;
            for (y, p) in kernel.matrix().row(theta[i]) {
                triplets.push((idx, base + y * stride, weight * p));
            }
        }
    }
    StochasticMatrix::new(
        SparseMatrix::from_triplets(n, triplets)?,
        product_stationary(family, space),
        StateCodec::ProductAtoms {
            atoms: family.n_atoms(),
            levels,
        },
    )
}

/// Metropolis acceptance of exchanging the atoms at levels `i-1` and `i`.
pub fn swap_acceptance(family: &TemperedFamily, i: usize, below: usize, above: usize) -> f64 {
    let (lo, hi) = (family.level(i - 1), family.level(i));
    ((lo[above] * hi[below]) / (lo[below] * hi[above])).min(1.0)
}

/// Swap kernel `Q`: for each `i ∈ 1..=L`, with probability `1/(2L)` propose
/// exchanging levels `i-1` and `i` and accept by the Metropolis ratio.
pub fn swap_kernel_q(family: &TemperedFamily, budget: usize) -> Result<StochasticMatrix> {
    let top = family.top();
    if top == 0 {
        return Err(Error::invalid("swap kernel needs at least two levels"));
    }
    let space = family.atom_product_space();
    let n = space.size_within("product space", budget)?;
    let propose = 1.0 / (2.0 * top as f64);
    let mut triplets = Vec::new();
    for idx in 0..n {
        let theta = space.decode(idx);
        let mut moved = 0.0;
        for i in 1..=top {
            let (a, b) = (theta[i - 1], theta[i]);
            if a == b {
                continue;
            }
            let p = propose * swap_acceptance(family, i, a, b);
            let target = idx + b * space.stride(i - 1) + a * space.stride(i)
                - a * space.stride(i - 1)
                - b * space.stride(i);
            triplets.push((idx, target, p));
            moved += p;
        }
        triplets.push((idx, idx, 1.0 - moved));
    }
    StochasticMatrix::new(
        SparseMatrix::from_triplets(n, triplets)?,
        product_stationary(family, space),
        StateCodec::ProductAtoms {
            atoms: family.n_atoms(),
            levels: family.num_levels(),
        },
    )
}

/// Parallel tempering kernel as the even mixture `½T + ½Q`.
pub fn pt_kernel(t: &StochasticMatrix, q: &StochasticMatrix) -> Result<StochasticMatrix> {
    StochasticMatrix::mixture(&[(0.5, t), (0.5, q)])
}

/// Update-then-swap composition `T·Q` as a raw row-stochastic matrix.
/// It preserves the product law but is not reversible in general.
pub fn pt_kernel_composition(t: &StochasticMatrix, q: &StochasticMatrix) -> Result<SparseMatrix> {
    check_same_space(t, q)?;
    t.matrix().matmul(q.matrix())
}

/// Projection onto a partition of the states: `block_of[x]` is the block of
/// state `x`, blocks are `0..n_blocks`.
pub fn project(
    p: &StochasticMatrix,
    block_of: &[usize],
    n_blocks: usize,
) -> Result<StochasticMatrix> {
    if block_of.len() != p.dim() {
        return Err(Error::invalid("partition does not cover the state space"));
    }
    if let Some(b) = block_of.iter().find(|&&b| b >= n_blocks) {
        return Err(Error::invalid(format!("block {b} out of range")));
    }
    let mut mass = vec![0.0; n_blocks];
    for (x, &b) in block_of.iter().enumerate() {
        mass[b] += p.stationary()[x];
    }
    if let Some(b) = mass.iter().position(|&w| w <= 0.0) {
        return Err(Error::invalid(format!(
            "block {b} is empty or has zero mass"
        )));
    }
    let mut triplets = Vec::new();
    for (x, y, v) in p.matrix().triplets() {
        let (bx, by) = (block_of[x], block_of[y]);
        triplets.push((bx, by, p.stationary()[x] * v / mass[bx]));
    }
    StochasticMatrix::new(
        SparseMatrix::from_triplets(n_blocks, triplets)?,
        mass,
        StateCodec::Blocks { n: n_blocks },
    )
}

/// Restriction to `members`: moves leaving the set are replaced by holding.
/// The stationary law is `π` conditioned on the set.
pub fn restrict(p: &StochasticMatrix, members: &[usize]) -> Result<StochasticMatrix> {
    if members.is_empty() {
        return Err(Error::invalid("restriction to an empty set"));
    }
    let mut local = vec![usize::MAX; p.dim()];
    for (j, &x) in members.iter().enumerate() {
        if x >= p.dim() {
            return Err(Error::invalid(format!("state {x} out of range")));
        }
        if local[x] != usize::MAX {
            return Err(Error::invalid(format!("state {x} listed twice")));
        }
        local[x] = j;
    }
    let mass: f64 = members.iter().map(|&x| p.stationary()[x]).sum();
    let mut triplets = Vec::new();
    for (j, &x) in members.iter().enumerate() {
        let mut escaped = 0.0;
        for (y, v) in p.matrix().row(x) {
            match local[y] {
                usize::MAX => escaped += v,
                l => triplets.push((j, l, v)),
            }
        }
        triplets.push((j, j, escaped));
    }
    StochasticMatrix::new(
        SparseMatrix::from_triplets(members.len(), triplets)?,
        members.iter().map(|&x| p.stationary()[x] / mass).collect(),
        StateCodec::Subset {
            parent: Box::new(p.codec().clone()),
            members: members.to_vec(),
        },
    )
}

/// Assignment index of every atom configuration (the map `θ ↦ λ`).
pub fn assignment_blocks(family: &TemperedFamily, budget: usize) -> Result<Vec<usize>> {
    let atoms = family.atom_product_space();
    let n = atoms.size_within("product space", budget)?;
    let modes = family.assignment_space();
    Ok((0..n)
        .map(|idx| {
            let lambda: Vec<usize> = atoms
                .decode(idx)
                .iter()
                .map(|&a| family.labels()[a])
                .collect();
            modes.encode(&lambda)
        })
        .collect())
}

/// Projects a product-space kernel onto mode assignments.
pub fn project_to_assignments(
    family: &TemperedFamily,
    p: &StochasticMatrix,
    budget: usize,
) -> Result<StochasticMatrix> {
    let blocks = assignment_blocks(family, budget)?;
    let modes = family.assignment_space();
    let projected = project(p, &blocks, modes.size_exact() as usize)?;
    with_codec(
        projected,
        StateCodec::Assignments {
            modes: family.m(),
            levels: family.num_levels(),
        },
    )
}

/// Projection of a single-level kernel onto the modes.
pub fn projected_level_kernel(
    family: &TemperedFamily,
    level_kernel: &StochasticMatrix,
) -> Result<StochasticMatrix> {
    project(level_kernel, family.labels(), family.m())
}

fn with_codec(p: StochasticMatrix, codec: StateCodec) -> Result<StochasticMatrix> {
    StochasticMatrix::new(p.matrix, p.stationary, codec)
}

/// Auxiliary chain `P₁` over assignments: with probability ½ move by the
/// projected swap chain, with probability `1/(2(L+1))` redraw `λ_0` from
/// `{π_0(A_k)}`, otherwise hold.
pub fn aux_chain_p1(family: &TemperedFamily, budget: usize) -> Result<StochasticMatrix> {
    let q = swap_kernel_q(family, budget)?;
    let q_bar = project_to_assignments(family, &q, budget)?;
    let space = family.assignment_space();
    let n = q_bar.dim();
    let refresh = 1.0 / (2.0 * family.num_levels() as f64);
    let mut triplets: Vec<(usize, usize, f64)> = q_bar
        .matrix()
        .triplets()
        .map(|(r, c, v)| (r, c, 0.5 * v))
        .collect();
    let stride = space.stride(0);
    for idx in 0..n {
        let base = idx % stride;
        for k in 0..family.m() {
            triplets.push((idx, base + k * stride, refresh * family.block_mass(0, k)));
        }
        triplets.push((idx, idx, 0.5 - refresh));
    }
    StochasticMatrix::new(
        SparseMatrix::from_triplets(n, triplets)?,
        crate::measure::pi_bar(family, budget)?,
        q_bar.codec().clone(),
    )
}

/// Auxiliary chain `P₂` over assignments: pick a level uniformly and redraw
/// its mode from `{π_i(A_k)}`.
pub fn aux_chain_p2(family: &TemperedFamily, budget: usize) -> Result<StochasticMatrix> {
    let space = family.assignment_space();
    let n = space.size_within("assignment space", budget)?;
    let levels = family.num_levels();
    let pick = 1.0 / levels as f64;
    let mut triplets = Vec::with_capacity(n * levels * family.m());
    for idx in 0..n {
        let lambda = space.decode(idx);
        for (i, &current) in lambda.iter().enumerate() {
            let stride = space.stride(i);
            let base = idx - current * stride;
            for k in 0..family.m() {
                triplets.push((idx, base + k * stride, pick * family.block_mass(i, k)));
            }
        }
    }
    StochasticMatrix::new(
        SparseMatrix::from_triplets(n, triplets)?,
        crate::measure::pi_bar(family, budget)?,
        StateCodec::Assignments {
            modes: family.m(),
            levels,
        },
    )
}

/// Exact one-iteration kernel of the literal sampler: every level applies
/// its Metropolis step (no holding), then swaps are attempted for
/// `i = 1, …, L` in order. Not reversible in general.
pub fn sweep_kernel(
    family: &TemperedFamily,
    proposal: &SparseMatrix,
    budget: usize,
) -> Result<SparseMatrix> {
    let n_atoms = family.n_atoms();
    if proposal.dim() != n_atoms {
        return Err(Error::invalid(
            "proposal size does not match the atom count",
        ));
    }
    let space = family.atom_product_space();
    let n = space.size_within("product space", budget)?;
    let mut kernel = SparseMatrix::identity(n);
    for i in 0..family.num_levels() {
        let level = family.level(i);
        let stride = space.stride(i);
        let mut triplets = Vec::new();
        for idx in 0..n {
            let x = space.decode(idx)[i];
            let base = idx - x * stride;
            let mut moved = 0.0;
            for (y, q) in proposal.row(x) {
                if y == x {
                    continue;
                }
                let p = q * (level[y] / level[x]).min(1.0);
                triplets.push((idx, base + y * stride, p));
                moved += p;
            }
            triplets.push((idx, idx, 1.0 - moved));
        }
        kernel = kernel.matmul(&SparseMatrix::from_triplets(n, triplets)?)?;
    }
    for i in 1..=family.top() {
        let mut triplets = Vec::new();
        for idx in 0..n {
            let theta = space.decode(idx);
            let (a, b) = (theta[i - 1], theta[i]);
            if a == b {
                triplets.push((idx, idx, 1.0));
                continue;
            }
            let acc = swap_acceptance(family, i, a, b);
            let mut swapped = theta.clone();
            swapped.swap(i - 1, i);
            triplets.push((idx, space.encode(&swapped), acc));
            triplets.push((idx, idx, 1.0 - acc));
        }
        kernel = kernel.matmul(&SparseMatrix::from_triplets(n, triplets)?)?;
    }
    Ok(kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{random_family, temper, FiniteTarget, TemperatureLadder};
    use approx::assert_abs_diff_eq;

    const BUDGET: usize = 1_000_000;

    fn family(weights: &[f64], labels: Vec<usize>, m: usize, betas: Vec<f64>) -> TemperedFamily {
        let t = FiniteTarget::new(weights, labels, m).unwrap();
        temper(&t, &TemperatureLadder::new(betas).unwrap()).unwrap()
    }

    #[test]
    fn metropolis_uniform_target() {
        let q = uniform_proposal(4);
        let k = metropolis_level_kernel(&[0.25; 4], &q).unwrap();
        for x in 0..4 {
            for y in 0..4 {
                let expected = if x == y { 0.5 + 0.125 } else { 0.125 };
                assert_abs_diff_eq!(k.get(x, y), expected, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn metropolis_two_atom_flip() {
        let k = metropolis_level_kernel(&[0.75, 0.25], &ring_proposal(2)).unwrap();
        assert_abs_diff_eq!(k.get(0, 1), 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k.get(1, 0), 0.5, epsilon = 1e-15);
        assert!(k.detailed_balance_residual() < 1e-12);
        assert!(k.min_diagonal() >= 0.5);
    }

    #[test]
    fn metropolis_rejects_asymmetric_proposal() {
        let q = SparseMatrix::from_dense_rows(&[vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        assert!(metropolis_level_kernel(&[0.5, 0.5], &q).is_err());
    }

    #[test]
    fn new_rejects_non_reversible() {
        let m = SparseMatrix::from_dense_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap();
        let err =
            StochasticMatrix::new(m.clone(), vec![1.0 / 3.0; 3], StateCodec::Indexed { n: 3 });
        assert!(matches!(err, Err(Error::Contract { .. })));
        let bad_rows = SparseMatrix::from_dense_rows(&[vec![0.5, 0.4], vec![0.5, 0.5]]).unwrap();
        assert!(
            StochasticMatrix::new(bad_rows, vec![0.5, 0.5], StateCodec::Indexed { n: 2 }).is_err()
        );
    }

    #[test]
    fn product_update_single_level() {
        let f = family(&[1.0, 3.0], vec![0, 1], 2, vec![1.0]);
        let ks = level_kernels(&f, &ring_proposal(2)).unwrap();
        let t = product_update_t(&f, &ks, BUDGET).unwrap();
        for x in 0..2 {
            for y in 0..2 {
                let expected = 0.5 * (x == y) as u8 as f64 + 0.5 * ks[0].get(x, y);
                assert_abs_diff_eq!(t.get(x, y), expected, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn product_update_identity_levels() {
        let f = family(&[1.0, 3.0], vec![0, 1], 2, vec![0.5, 1.0]);
        let id = |i: usize| {
            StochasticMatrix::new(
                SparseMatrix::identity(2),
                f.level(i).to_vec(),
                StateCodec::Atoms { n: 2 },
            )
            .unwrap()
        };
        let t = product_update_t(&f, &[id(0), id(1)], BUDGET).unwrap();
        assert_eq!(t.matrix(), &SparseMatrix::identity(4));
    }

    #[test]
    fn product_update_matches_tensor_oracle() {
        let f = family(&[1.0, 3.0], vec![0, 1], 2, vec![0.4, 1.0]);
        let ks = level_kernels(&f, &ring_proposal(2)).unwrap();
        let t = product_update_t(&f, &ks, BUDGET).unwrap();
        // Oracle: T = ½ I + ¼ (T0 ⊗ I) + ¼ (I ⊗ T1), state index 2·θ0 + θ1.
        for a0 in 0..2 {
            for a1 in 0..2 {
                for b0 in 0..2 {
                    for b1 in 0..2 {
                        let same = |u: usize, v: usize| (u == v) as u8 as f64;
                        let expected = 0.5 * same(a0, b0) * same(a1, b1)
                            + 0.25 * ks[0].get(a0, b0) * same(a1, b1)
                            + 0.25 * same(a0, b0) * ks[1].get(a1, b1);
                        assert_abs_diff_eq!(
                            t.get(2 * a0 + a1, 2 * b0 + b1),
                            expected,
                            epsilon = 1e-15
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn swap_kernel_uniform_holds_half() {
        let f = family(&[1.0, 1.0, 1.0], vec![0, 1, 1], 2, vec![0.3, 0.6, 1.0]);
        let q = swap_kernel_q(&f, BUDGET).unwrap();
        let space = f.atom_product_space();
        for idx in 0..q.dim() {
            let theta = space.decode(idx);
            let fixed = (1..=2).filter(|&i| theta[i - 1] == theta[i]).count() as f64;
            assert_abs_diff_eq!(q.get(idx, idx), 0.5 + fixed / 4.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn swap_kernel_rejects_single_level() {
        let f = family(&[1.0, 2.0], vec![0, 1], 2, vec![1.0]);
        assert!(swap_kernel_q(&f, BUDGET).is_err());
    }

    #[test]
    fn swap_kernel_matches_hand_oracle() {
        let f = family(&[1.0, 4.0], vec![0, 1], 2, vec![0.5, 1.0]);
        let q = swap_kernel_q(&f, BUDGET).unwrap();
        // Levels: π0 = (1/3, 2/3), π1 = (1/5, 4/5). States (θ0, θ1) -> 2θ0 + θ1.
        let p0: [f64; 2] = [1.0 / 3.0, 2.0 / 3.0];
        let p1 = [0.2, 0.8];
        let alpha = |a: usize, b: usize| ((p0[b] * p1[a]) / (p0[a] * p1[b])).min(1.0);
        let a01 = 0.5 * alpha(0, 1);
        let a10 = 0.5 * alpha(1, 0);
        let expected = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0 - a01, a01, 0.0],
            [0.0, a10, 1.0 - a10, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        for r in 0..4 {
            for c in 0..4 {
                assert_abs_diff_eq!(q.get(r, c), expected[r][c], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn pt_kernel_properties() {
        let f = random_family(2, 2, 2, 3).unwrap();
        let ks = level_kernels(&f, &uniform_proposal(f.n_atoms())).unwrap();
        let t = product_update_t(&f, &ks, BUDGET).unwrap();
        let q = swap_kernel_q(&f, BUDGET).unwrap();
        let a = pt_kernel(&t, &q).unwrap();
        let b = pt_kernel(&q, &t).unwrap();
        assert!((a.matrix().to_dense() - b.matrix().to_dense()).abs().max() < 1e-15);
        assert!(a.min_diagonal() >= 0.25);
        let id = StochasticMatrix::new(
            SparseMatrix::identity(t.dim()),
            t.stationary().to_vec(),
            t.codec().clone(),
        )
        .unwrap();
        assert_eq!(
            pt_kernel(&id, &id).unwrap().matrix(),
            &SparseMatrix::identity(t.dim())
        );
        let other = random_family(2, 1, 2, 3).unwrap();
        let t2 = product_update_t(
            &other,
            &level_kernels(&other, &uniform_proposal(4)).unwrap(),
            BUDGET,
        )
        .unwrap();
        assert!(pt_kernel(&t, &t2).is_err());
    }

    #[test]
    fn composition_preserves_product_law() {
        let f = random_family(2, 1, 2, 5).unwrap();
        let ks = level_kernels(&f, &uniform_proposal(4)).unwrap();
        let t = product_update_t(&f, &ks, BUDGET).unwrap();
        let q = swap_kernel_q(&f, BUDGET).unwrap();
        let c = pt_kernel_composition(&t, &q).unwrap();
        let moved = c.vecmat(t.stationary());
        for (a, b) in moved.iter().zip(t.stationary()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    fn random_reversible(n: usize, seed: u64) -> StochasticMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pi: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let z: f64 = pi.iter().sum();
        let pi: Vec<f64> = pi.iter().map(|p| p / z).collect();
        let prop: Vec<Vec<f64>> = {
            let mut w = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i + 1..n {
                    let v = rng.random_range(0.0..1.0) / n as f64;
                    w[i][j] = v;
                    w[j][i] = v;
                }
            }
            w
        };
        let mut rows = vec![vec![0.0; n]; n];
        for x in 0..n {
            let mut out = 0.0;
            for y in 0..n {
                if x != y {
                    rows[x][y] = 0.5 * prop[x][y] * (pi[y] / pi[x]).min(1.0);
                    out += rows[x][y];
                }
            }
            rows[x][x] = 1.0 - out;
        }
        StochasticMatrix::new(
            SparseMatrix::from_dense_rows(&rows).unwrap(),
            pi,
            StateCodec::Indexed { n },
        )
        .unwrap()
    }

    #[test]
    fn project_trivial_partitions() {
        let p = random_reversible(5, 1);
        let single = project(&p, &[0, 1, 2, 3, 4], 5).unwrap();
        assert!(
            (single.matrix().to_dense() - p.matrix().to_dense())
                .abs()
                .max()
                < 1e-15
        );
        let one = project(&p, &[0; 5], 1).unwrap();
        assert_abs_diff_eq!(one.get(0, 0), 1.0, epsilon = 1e-14);
        assert!(project(&p, &[0, 0, 0, 0, 0], 2).is_err());
    }

    #[test]
    fn project_matches_double_sum() {
        let p = random_reversible(6, 2);
        let blocks = [0, 1, 0, 1, 1, 0];
        let bar = project(&p, &blocks, 2).unwrap();
        for b1 in 0..2 {
            let mass: f64 = (0..6)
                .filter(|&x| blocks[x] == b1)
                .map(|x| p.stationary()[x])
                .sum();
            for b2 in 0..2 {
                let mut s = 0.0;
                for x in (0..6).filter(|&x| blocks[x] == b1) {
                    for y in (0..6).filter(|&y| blocks[y] == b2) {
                        s += p.stationary()[x] * p.get(x, y);
                    }
                }
                assert_abs_diff_eq!(bar.get(b1, b2), s / mass, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn restrict_cases() {
        let p = random_reversible(5, 3);
        let full = restrict(&p, &[0, 1, 2, 3, 4]).unwrap();
        assert!(
            (full.matrix().to_dense() - p.matrix().to_dense())
                .abs()
                .max()
                < 1e-15
        );
        let single = restrict(&p, &[2]).unwrap();
        assert_abs_diff_eq!(single.get(0, 0), 1.0, epsilon = 1e-14);
        assert!(restrict(&p, &[]).is_err());
        let sub = [4, 0, 2];
        let r = restrict(&p, &sub).unwrap();
        for (j, &x) in sub.iter().enumerate() {
            let escaped: f64 = (0..5)
                .filter(|y| !sub.contains(y))
                .map(|y| p.get(x, y))
                .sum();
            for (l, &y) in sub.iter().enumerate() {
                let expected = p.get(x, y) + if j == l { escaped } else { 0.0 };
                assert_abs_diff_eq!(r.get(j, l), expected, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn p2_single_level_rows_are_block_masses() {
        let f = family(&[1.0, 2.0, 5.0], vec![0, 1, 2], 3, vec![1.0]);
        let p2 = aux_chain_p2(&f, BUDGET).unwrap();
        for x in 0..3 {
            for k in 0..3 {
                assert_abs_diff_eq!(p2.get(x, k), f.block_mass(0, k), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn p1_uniform_refresh_rows() {
        let f = family(&[1.0; 4], vec![0, 0, 1, 1], 2, vec![0.5, 1.0]);
        let p1 = aux_chain_p1(&f, BUDGET).unwrap();
        // λ = (0, 1) -> index 1. Refresh to (1, 1) = 3 gets ¼ · ½.
        // Swap to (1, 0) = 2: projected swap moves with probability ½ · 1.
        assert_abs_diff_eq!(p1.get(1, 3), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(p1.get(1, 2), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p1.get(0, 2), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn p1_and_p2_share_pi_bar() {
        for seed in 0..4 {
            let f = random_family(2, 2, 2, seed).unwrap();
            let p1 = aux_chain_p1(&f, BUDGET).unwrap();
            let p2 = aux_chain_p2(&f, BUDGET).unwrap();
            let pb = crate::measure::pi_bar(&f, BUDGET).unwrap();
            for (a, b) in p1.stationary().iter().zip(&pb) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
            assert_eq!(p2.stationary(), pb.as_slice());
        }
    }

    #[test]
    fn codec_describe() {
        let c = StateCodec::Assignments {
            modes: 2,
            levels: 3,
        };
        assert_eq!(c.len(), 8);
        assert_eq!(c.describe(5), vec![1, 0, 1]);
        let s = StateCodec::Subset {
            parent: Box::new(c),
            members: vec![5, 6],
        };
        assert_eq!(s.describe(1), vec![1, 1, 0]);
    }

    #[test]
    fn triplet_csv_export() {
        let k = metropolis_level_kernel(&[0.75, 0.25], &ring_proposal(2)).unwrap();
        let mut buf = Vec::new();
        k.write_triplet_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("row,col,value\n"));
        assert_eq!(k.header_json()["codec"]["kind"], "atoms");
    }
}
