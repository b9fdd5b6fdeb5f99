//! The explicit slow-mixing instance, its exact mode masses, and the
//! Cheeger certificate on the swap-only projected chain.
//!
//! Modes are 0-based here: mode `k` is centre `k + 1` of the construction,
//! and the starting assignment is `λ = (0, 1, …, L)`.
//!
//! Comparisons against `e` use the rational bracket
//! [`E_LOWER`]`/10^14 < e <` [`E_UPPER`]`/10^14` and are arranged so that a
//! pass with the bracket implies a pass with `e` itself.

use std::collections::{HashMap, VecDeque};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{check_budget, Error, Result};
use crate::kernels::{StateCodec, StochasticMatrix};
use crate::measure::{TemperatureLadder, TemperedFamily};
use crate::paths::floor_log2;
use crate::sparse::SparseMatrix;
use crate::spectral::{cheeger_ratio, spectral_gap_with, SpectralOptions, SpectrumReport};

pub const E_LOWER: i64 = 271_828_182_845_904;
pub const E_UPPER: i64 = 271_828_182_845_905;
const E_SCALE: i64 = 100_000_000_000_000;

fn e_lower() -> BigRational {
    BigRational::new(E_LOWER.into(), E_SCALE.into())
}

fn int(n: usize) -> BigInt {
    BigInt::from(n)
}

fn rat(n: usize) -> BigRational {
    BigRational::from_integer(int(n))
}

/// `γ^e` for a possibly negative exponent.
fn gamma_pow(gamma: &BigInt, e: i64) -> BigRational {
    let p = num_traits::pow(gamma.clone(), e.unsigned_abs() as usize);
    if e >= 0 {
        BigRational::from_integer(p)
    } else {
        BigRational::new(BigInt::one(), p)
    }
}

/// Nearest `f64` to a rational, through its decimal-free binary expansion.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        if r.is_positive() {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    })
}

/// The hard instance for a given `L ≥ 1`, with `m = L + 1` modes,
/// `γ = (L+1)³` and `β_i = (i+1)/(L+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HardInstance {
    top: usize,
    gamma: BigInt,
    /// `N_i(k)`: unnormalized mass of mode `k` at level `i`, scaled by a
    /// per-level power of `γ` so every entry is an integer.
    numerators: Vec<Vec<BigInt>>,
    /// `D_i = Σ_k N_i(k)`.
    denominators: Vec<BigInt>,
    mode_masses: Vec<Vec<BigRational>>,
}

/// Per-mode weights and volumes of the construction, indexed by 0-based mode
/// (`k = 1..m` in the formulas is entry `k − 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct HardWeights {
    /// `w_k = γ^{2k}`.
    pub w: Vec<BigRational>,
    /// `V_k = γ^{1 − k²}`.
    pub v: Vec<BigRational>,
    /// `w_{kr} = γ^{2r+1}`, `r = 0..=L` (same for every `k`).
    pub w_r: Vec<BigRational>,
    /// `V_{kr} = γ^{−r² − r}`.
    pub v_r: Vec<BigRational>,
}

impl HardInstance {
    pub fn build(top: usize) -> Result<Self> {
        if top == 0 {
            return Err(Error::invalid("hard instance needs L ≥ 1"));
        }
        let m = top + 1;
        let gamma = num_traits::pow(int(m), 3);
        let mut numerators = Vec::with_capacity(m);
        let mut denominators = Vec::with_capacity(m);
        let mut mode_masses = Vec::with_capacity(m);
        for i in 0..=top as i64 {
            let core = |k: i64| 2 * (i + 1) * k - k * k + 1;
            let shell = |r: i64| (2 * r + 1) * (i + 1) - r * r - r;
            let lowest = (1..=m as i64)
                .map(core)
                .chain((0..=top as i64).map(shell))
                .min()
                .expect("nonempty");
            let shell_sum: BigInt = (0..=top as i64)
                .map(|r| num_traits::pow(gamma.clone(), (shell(r) - lowest) as usize))
                .sum();
            let row: Vec<BigInt> = (1..=m as i64)
                .map(|k| num_traits::pow(gamma.clone(), (core(k) - lowest) as usize) + &shell_sum)
                .collect();
            let d: BigInt = row.iter().sum();
            mode_masses.push(
                row.iter()
                    .map(|n| BigRational::new(n.clone(), d.clone()))
                    .collect(),
            );
            numerators.push(row);
            denominators.push(d);
        }
        Ok(HardInstance {
            top,
            gamma,
            numerators,
            denominators,
            mode_masses,
        })
    }

    pub fn top(&self) -> usize {
        self.top
    }

    pub fn m(&self) -> usize {
        self.top + 1
    }

    pub fn gamma(&self) -> &BigInt {
        &self.gamma
    }

    /// Exact `π_i(A_k)`.
    pub fn mode_mass(&self, i: usize, k: usize) -> &BigRational {
        &self.mode_masses[i][k]
    }

    pub fn mode_masses(&self) -> &[Vec<BigRational>] {
        &self.mode_masses
    }

    pub fn numerator(&self, i: usize, k: usize) -> &BigInt {
        &self.numerators[i][k]
    }

    pub fn denominator(&self, i: usize) -> &BigInt {
        &self.denominators[i]
    }

    pub fn weights(&self) -> HardWeights {
        let g = &self.gamma;
        let m = self.m() as i64;
        HardWeights {
            w: (1..=m).map(|k| gamma_pow(g, 2 * k)).collect(),
            v: (1..=m).map(|k| gamma_pow(g, 1 - k * k)).collect(),
            w_r: (0..=self.top as i64)
                .map(|r| gamma_pow(g, 2 * r + 1))
                .collect(),
            v_r: (0..=self.top as i64)
                .map(|r| gamma_pow(g, -r * r - r))
                .collect(),
        }
    }

    pub fn ladder(&self) -> TemperatureLadder {
        TemperatureLadder::linear(self.top)
    }

    /// Floating-point family with one atom per mode.
    pub fn to_family(&self) -> Result<TemperedFamily> {
        let levels = self
            .mode_masses
            .iter()
            .map(|row| row.iter().map(rational_to_f64).collect())
            .collect();
        TemperedFamily::from_levels(self.ladder(), (0..self.m()).collect(), self.m(), levels)
    }

    /// Unnormalized `π̄(ξ)` numerator `Π_i N_i(ξ_i)`.
    fn pi_bar_numerator(&self, xi: &[usize]) -> BigInt {
        xi.iter()
            .enumerate()
            .map(|(i, &k)| &self.numerators[i][k])
            .product()
    }

    /// Exact-rational table as JSON with rational strings.
    pub fn to_json(&self) -> serde_json::Value {
        let fmt = |r: &BigRational| format!("{}/{}", r.numer(), r.denom());
        let w = self.weights();
        serde_json::json!({
            "L": self.top,
            "m": self.m(),
            "gamma": self.gamma.to_string(),
            "betas": self.ladder().betas(),
            "mode_masses": self.mode_masses.iter().map(|row| row.iter().map(fmt).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "mode_masses_float": self.mode_masses.iter().map(|row| row.iter().map(rational_to_f64).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "weights": {
                "w": w.w.iter().map(fmt).collect::<Vec<_>>(),
                "V": w.v.iter().map(fmt).collect::<Vec<_>>(),
                "w_r": w.w_r.iter().map(fmt).collect::<Vec<_>>(),
                "V_r": w.v_r.iter().map(fmt).collect::<Vec<_>>(),
            },
            "precision": "exact rationals as numerator/denominator strings; *_float fields are rounded",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCheck {
    pub level: usize,
    pub mode: usize,
    pub mass: f64,
    /// Strict lower bound tested.
    pub lower: f64,
    /// Strict upper bound tested, absent for the dominant cell.
    pub upper: Option<f64>,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassBoundReport {
    pub top: usize,
    pub cells: Vec<CellCheck>,
    /// Smallest relative distance to a violated bound over all cells.
    pub min_margin: f64,
    pub holds: bool,
}

/// Dominant cell `π_i(A_i) > 1 − 1/(L+1)`, others strictly between
/// `1/(2(L+1)³)` and `1/(L+1)²`; all comparisons exact.
pub fn verify_mode_mass_bounds(inst: &HardInstance) -> MassBoundReport {
    let n = inst.m();
    let dominant = BigRational::one() - BigRational::new(BigInt::one(), int(n));
    let low = BigRational::new(BigInt::one(), int(2 * n * n * n));
    let high = BigRational::new(BigInt::one(), int(n * n));
    let mut cells = Vec::new();
    let mut min_margin = f64::INFINITY;
    for i in 0..n {
        for k in 0..n {
            let p = inst.mode_mass(i, k);
            let (holds, lower, upper, margin) = if k == i {
                let m = (p - &dominant) / &dominant;
                (
                    p > &dominant,
                    rational_to_f64(&dominant),
                    None,
                    rational_to_f64(&m),
                )
            } else {
                let a = (p - &low) / &low;
                let b = (&high - p) / &high;
                let holds = p > &low && p < &high;
                let margin = rational_to_f64(&a).min(rational_to_f64(&b));
                (
                    holds,
                    rational_to_f64(&low),
                    Some(rational_to_f64(&high)),
                    margin,
                )
            };
            min_margin = min_margin.min(margin);
            cells.push(CellCheck {
                level: i,
                mode: k,
                mass: rational_to_f64(p),
                lower,
                upper,
                holds,
            });
        }
    }
    MassBoundReport {
        top: inst.top,
        holds: cells.iter().all(|c| c.holds),
        cells,
        min_margin,
    }
}

/// Exact bottleneck ratio `min_k Π_i min{1, π_{i−1}(A_k)/π_i(A_k)}`.
pub fn exact_bottleneck(masses: &[Vec<BigRational>]) -> BigRational {
    let m = masses[0].len();
    (0..m)
        .map(|k| {
            (1..masses.len())
                .map(|i| {
                    let r = &masses[i - 1][k] / &masses[i][k];
                    if r < BigRational::one() {
                        r
                    } else {
                        BigRational::one()
                    }
                })
                .fold(BigRational::one(), |acc, r| acc * r)
        })
        .min()
        .expect("at least one mode")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckReport {
    pub top: usize,
    pub b: f64,
    pub log10_b: f64,
    pub bound: f64,
    /// `B · (L+1)⁷`; exceeds 1 exactly when the bound holds.
    pub ratio_to_bound: f64,
    pub holds: bool,
}

/// `B > 1/(L+1)⁷`, compared exactly.
pub fn verify_bottleneck_bound(inst: &HardInstance) -> BottleneckReport {
    let b = exact_bottleneck(&inst.mode_masses);
    let scale = BigRational::from_integer(num_traits::pow(int(inst.m()), 7));
    let ratio = &b * &scale;
    BottleneckReport {
        top: inst.top,
        b: rational_to_f64(&b),
        log10_b: log10(&b),
        bound: 1.0 / rational_to_f64(&scale),
        ratio_to_bound: rational_to_f64(&ratio),
        holds: ratio > BigRational::one(),
    }
}

fn log10(r: &BigRational) -> f64 {
    let scaled = |n: &BigInt| {
        let shift = n.bits().saturating_sub(60);
        (n >> shift).to_f64().expect("fits").log10() + shift as f64 * std::f64::consts::LOG10_2
    };
    scaled(r.numer()) - scaled(r.denom())
}

/// The swap-only chain on assignments reachable from `(0, 1, …, L)`.
#[derive(Debug, Clone)]
pub struct ConstrainedChain {
    pub kernel: StochasticMatrix,
    /// `states[j]` is the permutation at index `j`; index 0 is the start.
    pub states: Vec<Vec<usize>>,
    /// Exact unnormalized masses `Π_i N_i(ξ_i)`.
    pub numerators: Vec<BigInt>,
    pub total: BigInt,
    index: HashMap<Vec<usize>, usize>,
}

impl ConstrainedChain {
    pub fn index_of(&self, xi: &[usize]) -> Option<usize> {
        self.index.get(xi).copied()
    }
}

/// `(L+1)!`, saturating.
fn factorial(n: usize) -> u128 {
    (1..=n as u128).fold(1u128, |acc, x| acc.saturating_mul(x))
}

/// Builds the constrained chain: propose swap `i ∈ 1..=L` with probability
/// `1/(2L)`, accept with `min{1, π̄(ξ′)/π̄(ξ)}`, hold otherwise.
pub fn constrained_projected_chain(inst: &HardInstance, budget: usize) -> Result<ConstrainedChain> {
    let n = inst.m();
    let top = inst.top;
    check_budget("constrained chain", factorial(n), budget)?;
    let start: Vec<usize> = (0..n).collect();
    let mut states = vec![start.clone()];
    let mut index = HashMap::from([(start, 0usize)]);
    let mut queue = VecDeque::from([0usize]);
    while let Some(j) = queue.pop_front() {
        for i in 1..=top {
            let mut next = states[j].clone();
            next.swap(i - 1, i);
            if !index.contains_key(&next) {
                index.insert(next.clone(), states.len());
                queue.push_back(states.len());
                states.push(next);
            }
        }
    }
    // Acceptance depends only on (i, mode below, mode above).
    let mut accept = vec![vec![vec![0.0; n]; n]; n];
    for (i, table) in accept.iter_mut().enumerate().skip(1) {
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let num = inst.numerator(i - 1, b) * inst.numerator(i, a);
                let den = inst.numerator(i - 1, a) * inst.numerator(i, b);
                table[a][b] = if num >= den {
                    1.0
                } else {
                    rational_to_f64(&BigRational::new(num, den))
                };
            }
        }
    }
    let numerators: Vec<BigInt> = states.iter().map(|xi| inst.pi_bar_numerator(xi)).collect();
    let total: BigInt = numerators.iter().sum();
    let stationary: Vec<f64> = numerators
        .iter()
        .map(|num| rational_to_f64(&BigRational::new(num.clone(), total.clone())))
        .collect();
    let propose = 1.0 / (2.0 * top as f64);
    let mut triplets = Vec::with_capacity(states.len() * (top + 1));
    for (j, xi) in states.iter().enumerate() {
        let mut moved = 0.0;
        for i in 1..=top {
            let p = propose * accept[i][xi[i - 1]][xi[i]];
            let mut next = xi.clone();
            next.swap(i - 1, i);
            triplets.push((j, index[&next], p));
            moved += p;
        }
        triplets.push((j, j, 1.0 - moved));
    }
    let kernel = StochasticMatrix::new(
        SparseMatrix::from_triplets(states.len(), triplets)?,
        stationary,
        StateCodec::Listed {
            states: states.clone(),
        },
    )?;
    Ok(ConstrainedChain {
        kernel,
        states,
        numerators,
        total,
        index,
    })
}

/// Divergence cap `⌊log₂L⌋ − 1`, negative when no displacement is allowed.
pub fn divergence_cap(top: usize) -> i64 {
    floor_log2(top) as i64 - 1
}

/// States reachable from the start by adjacent swaps while staying within
/// Hamming distance [`divergence_cap`] of it.
pub fn enumerate_s(top: usize) -> Result<Vec<Vec<usize>>> {
    if top == 0 {
        return Err(Error::invalid("S needs L ≥ 1"));
    }
    let n = top + 1;
    let cap = divergence_cap(top);
    let start: Vec<usize> = (0..n).collect();
    let mut seen = std::collections::HashSet::from([start.clone()]);
    let mut order = vec![start.clone()];
    let mut queue = VecDeque::from([start]);
    while let Some(xi) = queue.pop_front() {
        for i in 1..=top {
            let mut next = xi.clone();
            next.swap(i - 1, i);
            let d = next.iter().enumerate().filter(|(l, &s)| *l != s).count() as i64;
            if d <= cap && seen.insert(next.clone()) {
                order.push(next.clone());
                queue.push_back(next);
            }
        }
    }
    Ok(order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub relation: String,
    /// Exact left side as a `numerator/denominator` string.
    pub lhs_exact: String,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub top: usize,
    pub divergence_cap: i64,
    pub s_size: usize,
    pub sc_size: usize,
    pub mass_s: f64,
    pub mass_sc: f64,
    pub boundary_flow: f64,
    pub cheeger_2phi_s: f64,
    /// `2 φ(S)` recomputed in floating point from the kernel.
    pub cheeger_2phi_s_float: f64,
    pub bound_rhs: f64,
    pub spectrum: Option<SpectrumReport>,
    pub measured_gap: Option<f64>,
    pub gap_within_cheeger: Option<bool>,
    pub lemmas: Vec<LemmaCheck>,
    pub holds: bool,
}

/// Tolerance on `gap ≤ 2φ(S)`.
pub const CERTIFICATE_TOL: f64 = 1e-8;

fn frac_str(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Exact Cheeger certificate for the constrained chain. The gap is
/// eigensolved when `solve_gap` is set.
pub fn certificate(
    inst: &HardInstance,
    budget: usize,
    solve_gap: bool,
    spectral: &SpectralOptions,
) -> Result<CertificateReport> {
    let chain = constrained_projected_chain(inst, budget)?;
    certificate_for(inst, &chain, solve_gap, spectral)
}

pub fn certificate_for(
    inst: &HardInstance,
    chain: &ConstrainedChain,
    solve_gap: bool,
    spectral: &SpectralOptions,
) -> Result<CertificateReport> {
    let top = inst.top;
    let n = inst.m();
    let s_states = enumerate_s(top)?;
    let mut in_s = vec![false; chain.states.len()];
    for xi in &s_states {
        let j = chain
            .index_of(xi)
            .ok_or_else(|| Error::invalid("S state outside the chain"))?;
        in_s[j] = true;
    }
    let s_idx: Vec<usize> = (0..in_s.len()).filter(|&j| in_s[j]).collect();
    let total = BigRational::from_integer(chain.total.clone());
    let num_s: BigInt = s_idx.iter().map(|&j| &chain.numerators[j]).sum();
    let mass_s = BigRational::from_integer(num_s) / &total;
    let mass_sc = BigRational::one() - &mass_s;

    // π̄_λ(ξ) P(ξ, ξ′) = min{π̄_λ(ξ), π̄_λ(ξ′)} / (2L) for an accepted swap.
    let mut flow_num = BigInt::zero();
    for &j in &s_idx {
        for i in 1..=top {
            let mut next = chain.states[j].clone();
            next.swap(i - 1, i);
            let t = chain.index_of(&next).expect("closed under swaps");
            if !in_s[t] {
                flow_num += (&chain.numerators[j]).min(&chain.numerators[t]);
            }
        }
    }
    let flow = BigRational::new(flow_num, int(2 * top)) / &total;
    let denom = if mass_s < mass_sc {
        mass_s.clone()
    } else {
        mass_sc.clone()
    };
    let two_phi = if denom.is_zero() {
        None
    } else {
        Some(BigRational::from_integer(2.into()) * &flow / &denom)
    };

    let fl = floor_log2(top) as i64;
    let inv = |exp: i64| -> BigRational {
        // (1/(L+1))^exp for any integer exponent.
        gamma_pow(&int(n), -exp)
    };
    let mut lemmas = Vec::new();
    // flow ≤ 4e (1/(L+1))^{⌊log L⌋−2}: sufficient with e replaced by its lower bracket.
    let rhs13 = BigRational::from_integer(4.into()) * e_lower() * inv(fl - 2);
    lemmas.push(LemmaCheck {
        name: "boundary flow of S".into(),
        lhs: rational_to_f64(&flow),
        rhs: 4.0 * std::f64::consts::E * rational_to_f64(&inv(fl - 2)),
        relation: "<=".into(),
        lhs_exact: frac_str(&flow),
        holds: flow <= rhs13,
    });
    // mass_S > 1/(2e): sufficient that mass_S > 1/(2 e_lower).
    let rhs14 = BigRational::new(BigInt::one(), BigInt::from(2)) / e_lower();
    lemmas.push(LemmaCheck {
        name: "mass of S".into(),
        lhs: rational_to_f64(&mass_s),
        rhs: 1.0 / (2.0 * std::f64::consts::E),
        relation: ">".into(),
        lhs_exact: frac_str(&mass_s),
        holds: mass_s > rhs14,
    });
    let rhs15 =
        BigRational::one() / (BigRational::from_integer(4.into()) * e_lower() * rat(n.pow(6)));
    lemmas.push(LemmaCheck {
        name: "mass of the complement of S".into(),
        lhs: rational_to_f64(&mass_sc),
        rhs: 1.0 / (4.0 * std::f64::consts::E * (n as f64).powi(6)),
        relation: ">".into(),
        lhs_exact: frac_str(&mass_sc),
        holds: mass_sc > rhs15,
    });
    // 2φ(S) < 32e²(1/(L+1))^{⌊log L⌋−8}: sufficient with the lower bracket.
    let rhs_final = BigRational::from_integer(32.into()) * e_lower() * e_lower() * inv(fl - 8);
    let bound_rhs = 32.0 * std::f64::consts::E.powi(2) * rational_to_f64(&inv(fl - 8));
    lemmas.push(LemmaCheck {
        name: "twice the Cheeger ratio of S against the closed-form bound".into(),
        lhs: two_phi.as_ref().map_or(f64::NAN, rational_to_f64),
        rhs: bound_rhs,
        relation: "<".into(),
        lhs_exact: two_phi
            .as_ref()
            .map_or_else(|| "undefined".into(), frac_str),
        holds: two_phi.as_ref().is_some_and(|t| t < &rhs_final),
    });

    let two_phi_f = two_phi.as_ref().map_or(f64::NAN, rational_to_f64);
    let float_check = if s_idx.len() < chain.states.len() {
        2.0 * cheeger_ratio(&chain.kernel, &s_idx)?
    } else {
        f64::NAN
    };
    let spectrum = if solve_gap {
        Some(spectral_gap_with(&chain.kernel, spectral)?)
    } else {
        None
    };
    let measured_gap = spectrum.as_ref().map(|s| s.gap);
    let within = measured_gap.map(|g| g <= two_phi_f + CERTIFICATE_TOL);
    let holds = lemmas.iter().all(|l| l.holds) && within.unwrap_or(true);
    Ok(CertificateReport {
        top,
        divergence_cap: divergence_cap(top),
        s_size: s_idx.len(),
        sc_size: chain.states.len() - s_idx.len(),
        mass_s: rational_to_f64(&mass_s),
        mass_sc: rational_to_f64(&mass_sc),
        boundary_flow: rational_to_f64(&flow),
        cheeger_2phi_s: two_phi_f,
        cheeger_2phi_s_float: float_check,
        bound_rhs,
        spectrum,
        measured_gap,
        gap_within_cheeger: within,
        lemmas,
        holds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FOracleReport {
    pub top: usize,
    pub padding: usize,
    /// Minimax in-window divergence over all swap paths.
    pub f: usize,
    pub states_explored: usize,
}

/// Minimum over adjacent-swap paths carrying the sample at level 0 to
/// level `L` of the largest number of displaced samples among levels
/// `1..=L` at any point. `padding` extra levels are added on each side.
///
/// Searches permutations exactly with a bucketed minimax search.
pub fn min_divergence_f(top: usize, padding: usize, budget: usize) -> Result<FOracleReport> {
    if top == 0 {
        return Err(Error::invalid("f needs L ≥ 1"));
    }
    let n = top + 1 + 2 * padding;
    if n > 16 {
        return Err(Error::invalid("at most 16 levels are supported"));
    }
    check_budget("permutation search", factorial(n), budget)?;
    let (lo, hi) = (padding + 1, padding + top);
    let tracked = padding as u64;
    let get = |s: u64, p: usize| (s >> (4 * p)) & 0xf;
    let swap = |s: u64, p: usize| {
        let (a, b) = (get(s, p - 1), get(s, p));
        let cleared = s & !(0xff << (4 * (p - 1)));
        cleared | (b << (4 * (p - 1))) | (a << (4 * p))
    };
    let div = |s: u64| (lo..=hi).filter(|&p| get(s, p) != p as u64).count();
    let start: u64 = (0..n).fold(0, |acc, p| acc | ((p as u64) << (4 * p)));
    let mut best: HashMap<u64, usize> = HashMap::from([(start, 0)]);
    let mut buckets: Vec<Vec<u64>> = vec![Vec::new(); top + 1];
    buckets[0].push(start);
    for h in 0..=top {
        while let Some(s) = buckets[h].pop() {
            if best[&s] < h {
                continue;
            }
            if get(s, hi) == tracked {
                return Ok(FOracleReport {
                    top,
                    padding,
                    f: h,
                    states_explored: best.len(),
                });
            }
            for p in 1..n {
                let t = swap(s, p);
                let cost = h.max(div(t));
                let improved = best.get(&t).is_none_or(|&c| cost < c);
                if improved {
                    best.insert(t, cost);
                    buckets[cost].push(t);
                }
            }
        }
    }
    Err(Error::invalid("target level unreachable"))
}
