//! Finite multimodal targets, temperature ladders and the partition-level
//! quantities built from a tempered family.
//!
//! Mode indices are 0-based throughout: a target with `m` modes labels its
//! atoms with values in `0..m`. Levels run `0..=L` with level `L` at inverse
//! temperature 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_budget, Error, Result};

/// Tolerance on per-level normalization.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Unnormalized target density over a finite atom set, with a mode label
/// per atom. Weights are held as natural logarithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteTarget {
    log_weights: Vec<f64>,
    labels: Vec<usize>,
    m: usize,
}

impl FiniteTarget {
    pub fn new(weights: &[f64], labels: Vec<usize>, m: usize) -> Result<Self> {
        if let Some((a, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::invalid(format!(
                "atom {a} has non-positive or non-finite weight {w}"
            )));
        }
        Self::from_log_weights(weights.iter().map(|w| w.ln()).collect(), labels, m)
    }

    pub fn from_log_weights(log_weights: Vec<f64>, labels: Vec<usize>, m: usize) -> Result<Self> {
        if log_weights.is_empty() {
            return Err(Error::invalid("target needs at least one atom"));
        }
        if log_weights.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} weights but {} labels",
                log_weights.len(),
                labels.len()
            )));
        }
        if let Some(w) = log_weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::invalid(format!("non-finite log weight {w}")));
        }
        validate_labels(&labels, m)?;
        Ok(FiniteTarget {
            log_weights,
            labels,
            m,
        })
    }

    /// Uniform weights over `labels.len()` atoms.
    pub fn uniform(labels: Vec<usize>, m: usize) -> Result<Self> {
        Self::from_log_weights(vec![0.0; labels.len()], labels, m)
    }

    pub fn n_atoms(&self) -> usize {
        self.labels.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }
}

fn validate_labels(labels: &[usize], m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::invalid("need at least one mode"));
    }
    let mut seen = vec![false; m];
    for (a, &k) in labels.iter().enumerate() {
        if k >= m {
            return Err(Error::invalid(format!(
                "atom {a} has mode {k}, expected < {m}"
            )));
        }
        seen[k] = true;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!("mode {k} has no atoms")));
    }
    Ok(())
}

/// Inverse temperatures `β_0 < β_1 < … < β_L = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureLadder {
    betas: Vec<f64>,
}

impl TemperatureLadder {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        match betas.last() {
            None => {
                return Err(Error::invalid(
                    "ladder needs at least one inverse temperature",
                ))
            }
            Some(&b) if b != 1.0 => {
                return Err(Error::invalid(format!(
                    "last inverse temperature is {b}, must be 1"
                )))
            }
            _ => {}
        }
        if let Some(b) = betas.iter().find(|b| !b.is_finite() || **b < 0.0) {
            return Err(Error::invalid(format!("invalid inverse temperature {b}")));
        }
        if let Some(w) = betas.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "inverse temperatures must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(TemperatureLadder { betas })
    }

    /// `β_i = (i + 1) / (L + 1)`.
    pub fn linear(top: usize) -> Self {
        let n = (top + 1) as f64;
        let mut betas: Vec<f64> = (0..=top).map(|i| (i + 1) as f64 / n).collect();
        betas[top] = 1.0;
        TemperatureLadder { betas }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `L`, the index of the top level.
    pub fn top(&self) -> usize {
        self.betas.len() - 1
    }
}

/// Normalized level distributions `π_0, …, π_L` over a common atom set,
/// together with the mode partition and cached block masses `π_i(A_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperedFamily {
    ladder: TemperatureLadder,
    labels: Vec<usize>,
    m: usize,
    levels: Vec<Vec<f64>>,
    block_masses: Vec<Vec<f64>>,
}

impl TemperedFamily {
    /// Builds a family from explicit level distributions. Each level is
    /// renormalized after validating that it sums to 1 within
    /// [`NORMALIZATION_TOL`].
    pub fn from_levels(
        ladder: TemperatureLadder,
        labels: Vec<usize>,
        m: usize,
        levels: Vec<Vec<f64>>,
    ) -> Result<Self> {
        validate_labels(&labels, m)?;
        if levels.len() != ladder.betas().len() {
            return Err(Error::invalid(format!(
                "{} level distributions for {} inverse temperatures",
                levels.len(),
                ladder.betas().len()
            )));
        }
        let mut normalized = Vec::with_capacity(levels.len());
        for (i, level) in levels.into_iter().enumerate() {
            if level.len() != labels.len() {
                return Err(Error::invalid(format!(
                    "level {i} has {} atoms, expected {}",
                    level.len(),
                    labels.len()
                )));
            }
            if level.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::invalid(format!(
                    "level {i} has a negative or non-finite mass"
                )));
            }
            let total: f64 = level.iter().sum();
            if (total - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::Contract {
                    what: format!("level {i} is not normalized"),
                    residual: (total - 1.0).abs(),
                });
            }
            normalized.push(level.into_iter().map(|p| p / total).collect::<Vec<_>>());
        }
        let block_masses: Vec<Vec<f64>> = normalized
            .iter()
            .map(|level| {
                let mut masses = vec![0.0; m];
                for (p, &k) in level.iter().zip(&labels) {
                    masses[k] += p;
                }
                masses
            })
            .collect();
        for (i, masses) in block_masses.iter().enumerate() {
            if let Some(k) = masses.iter().position(|&p| p <= 0.0) {
                return Err(Error::invalid(format!(
                    "level {i} puts zero mass on mode {k}"
                )));
            }
        }
        Ok(TemperedFamily {
            ladder,
            labels,
            m,
            levels: normalized,
            block_masses,
        })
    }

    pub fn ladder(&self) -> &TemperatureLadder {
        &self.ladder
    }

    /// `L`, the index of the top level.
    pub fn top(&self) -> usize {
        self.ladder.top()
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_atoms(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn level(&self, i: usize) -> &[f64] {
        &self.levels[i]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    /// `π_i(A_k)`.
    pub fn block_mass(&self, i: usize, k: usize) -> f64 {
        self.block_masses[i][k]
    }

    pub fn block_masses(&self, i: usize) -> &[f64] {
        &self.block_masses[i]
    }

    /// Atoms belonging to mode `k`.
    pub fn atoms_of(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == k)
            .map(|(a, _)| a)
    }

    /// Mixed-radix space of mode assignments `[m]^{L+1}`.
    pub fn assignment_space(&self) -> ProductSpace {
        ProductSpace::new(self.m, self.num_levels())
    }

    /// Mixed-radix space of atom configurations `X^{L+1}`.
    pub fn atom_product_space(&self) -> ProductSpace {
        ProductSpace::new(self.n_atoms(), self.num_levels())
    }
}

/// Tempers `target` along `ladder`: level `i` is proportional to
/// `π^{β_i}`, computed in log domain and renormalized per level.
pub fn temper(target: &FiniteTarget, ladder: &TemperatureLadder) -> Result<TemperedFamily> {
    let levels = ladder
        .betas()
        .iter()
        .map(|&beta| {
            let logs: Vec<f64> = target.log_weights.iter().map(|lw| beta * lw).collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let unnorm: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = unnorm.iter().sum();
            unnorm.into_iter().map(|u| u / z).collect()
        })
        .collect();
    TemperedFamily::from_levels(ladder.clone(), target.labels.clone(), target.m, levels)
}

/// Overlap between adjacent levels, restricted to each mode:
///
/// `min over |i-j| = 1, k of Σ_{x ∈ A_k} min{π_i(x), π_j(x)} / π_i(A_k)`.
///
/// Both orderings of each adjacent pair are taken. This is the version for
/// which the swap-acceptance marginal is bounded below by `phi²`.
pub fn overlap_phi(family: &TemperedFamily) -> Result<f64> {
    overlap_min(family, true)
}

/// Same as [`overlap_phi`] but the sum runs over every atom rather than the
/// atoms of `A_k`. Always at least [`overlap_phi`]; can exceed 1.
pub fn overlap_phi_whole_space(family: &TemperedFamily) -> Result<f64> {
    overlap_min(family, false)
}

fn overlap_min(family: &TemperedFamily, within_mode: bool) -> Result<f64> {
    if family.top() == 0 {
        return Err(Error::invalid("overlap needs at least two levels"));
    }
    let mut best = f64::INFINITY;
    for lower in 0..family.top() {
        for (i, j) in [(lower, lower + 1), (lower + 1, lower)] {
            let (pi, pj) = (family.level(i), family.level(j));
            for k in 0..family.m() {
                let overlap: f64 = (0..family.n_atoms())
                    .filter(|&a| !within_mode || family.labels()[a] == k)
                    .map(|a| pi[a].min(pj[a]))
                    .sum();
                best = best.min(overlap / family.block_mass(i, k));
            }
        }
    }
    Ok(best)
}

/// Bottleneck ratio `B = min_k Π_{i=1..L} min{1, π_{i-1}(A_k) / π_i(A_k)}`.
pub fn bottleneck_b(family: &TemperedFamily) -> f64 {
    (0..family.m())
        .map(|k| {
            (1..=family.top())
                .map(|i| (family.block_mass(i - 1, k) / family.block_mass(i, k)).min(1.0))
                .product::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Stationary probability that a swap proposed between level `i - 1`
/// (holding an atom of mode `k1`) and level `i` (mode `k2`) is accepted.
pub fn swap_acceptance_marginal(
    family: &TemperedFamily,
    i: usize,
    k1: usize,
    k2: usize,
) -> Result<f64> {
    if i == 0 || i > family.top() {
        return Err(Error::invalid(format!(
            "swap level {i} out of range 1..={}",
            family.top()
        )));
    }
    if k1 >= family.m() || k2 >= family.m() {
        return Err(Error::invalid(format!("mode out of range ({k1}, {k2})")));
    }
    let (lo, hi) = (family.level(i - 1), family.level(i));
    let mut total = 0.0;
    for x in family.atoms_of(k1) {
        for y in family.atoms_of(k2) {
            total += (lo[x] * hi[y]).min(lo[y] * hi[x]);
        }
    }
    Ok(total / (family.block_mass(i - 1, k1) * family.block_mass(i, k2)))
}

/// Mixed-radix indexing of tuples `(x_0, …, x_{len-1})` with `x_j < radix`.
/// Position 0 is the most significant digit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductSpace {
    pub radix: usize,
    pub len: usize,
}

impl ProductSpace {
    pub fn new(radix: usize, len: usize) -> Self {
        ProductSpace { radix, len }
    }

    /// Exact size `radix^len`, saturating at `u128::MAX`.
    pub fn size_exact(&self) -> u128 {
        (0..self.len).fold(1u128, |acc, _| acc.saturating_mul(self.radix as u128))
    }

    /// Size, or a budget error.
    pub fn size_within(&self, what: &str, budget: usize) -> Result<usize> {
        let size = self.size_exact();
        check_budget(what, size, budget)?;
        Ok(size as usize)
    }

    pub fn encode(&self, digits: &[usize]) -> usize {
        debug_assert_eq!(digits.len(), self.len);
        digits.iter().fold(0, |acc, &d| {
            debug_assert!(d < self.radix);
            acc * self.radix + d
        })
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut digits = vec![0; self.len];
        for slot in digits.iter_mut().rev() {
            *slot = index % self.radix;
            index /= self.radix;
        }
        digits
    }

    /// Weight of digit position `j` in the encoding.
    pub fn stride(&self, j: usize) -> usize {
        self.radix.pow((self.len - 1 - j) as u32)
    }
}

/// A mode assignment `λ ∈ [m]^{L+1}`, one mode per level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProductAssignment(pub Vec<usize>);

impl ProductAssignment {
    pub fn new(lambda: Vec<usize>, m: usize) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::invalid("assignment needs at least one level"));
        }
        if let Some(k) = lambda.iter().find(|&&k| k >= m) {
            return Err(Error::invalid(format!(
                "assignment entry {k} out of range for m = {m}"
            )));
        }
        Ok(ProductAssignment(lambda))
    }

    pub fn levels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `λ_{[i,k]}`: level `i` replaced by mode `k`.
    pub fn with_level(&self, i: usize, k: usize) -> Self {
        let mut out = self.clone();
        out.0[i] = k;
        out
    }

    /// `(i, j)λ`: levels `i` and `j` exchanged.
    pub fn transposed(&self, i: usize, j: usize) -> Self {
        let mut out = self.clone();
        out.0.swap(i, j);
        out
    }

    /// Number of levels at which the two assignments differ.
    pub fn hamming(&self, other: &ProductAssignment) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

/// Product law `π̄(λ) = Π_i π_i(A_{λ_i})` over all assignments, indexed by
/// [`TemperedFamily::assignment_space`].
pub fn pi_bar(family: &TemperedFamily, budget: usize) -> Result<Vec<f64>> {
    let space = family.assignment_space();
    let size = space.size_within("assignment space", budget)?;
    let mut probs = vec![1.0];
    probs.reserve(size);
    for i in 0..family.num_levels() {
        let masses = family.block_masses(i);
        probs = probs
            .iter()
            .flat_map(|&p| masses.iter().map(move |&q| p * q))
            .collect();
    }
    Ok(probs)
}

/// `π̄(λ)` for a single assignment.
pub fn pi_bar_at(family: &TemperedFamily, lambda: &[usize]) -> f64 {
    lambda
        .iter()
        .enumerate()
        .map(|(i, &k)| family.block_mass(i, k))
        .product()
}

/// Deterministic random multimodal family for experiments.
///
/// Each mode gets `atoms_per_mode` atoms with log-weights drawn around a
/// per-mode offset, and the ladder has `top` inverse temperatures drawn
/// from `(0.05, 0.95)` below the final 1.
pub fn random_family(
    m: usize,
    top: usize,
    atoms_per_mode: usize,
    seed: u64,
) -> Result<TemperedFamily> {
    if m == 0 || atoms_per_mode == 0 {
        return Err(Error::invalid(
            "random family needs m ≥ 1 and at least one atom per mode",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_weights = Vec::with_capacity(m * atoms_per_mode);
    let mut labels = Vec::with_capacity(m * atoms_per_mode);
    for k in 0..m {
        let offset: f64 = rng.random_range(-4.0..4.0);
        for _ in 0..atoms_per_mode {
            log_weights.push(offset + rng.random_range(-2.0..2.0));
            labels.push(k);
        }
    }
    let mut betas: Vec<f64> = (0..top).map(|_| rng.random_range(0.05..0.95)).collect();
    betas.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    betas.dedup();
    while betas.len() < top {
        // Ties are measure-zero; pad deterministically if one occurs.
        let last = betas.last().copied().unwrap_or(0.05);
        betas.push((last + 0.95) / 2.0);
    }
    betas.push(1.0);
    let target = FiniteTarget::from_log_weights(log_weights, labels, m)?;
    temper(&target, &TemperatureLadder::new(betas)?)
}
