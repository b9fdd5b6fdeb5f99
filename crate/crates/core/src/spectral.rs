//! Spectral gaps and the quadratic forms around them.
//!
//! The gap of a kernel reversible w.r.t. `π` is `1 − λ₂` where `λ₂` is the
//! second largest eigenvalue of `S = D^{½} P D^{−½}`, `D = diag(π)`. `S` is
//! symmetric with top eigenvector `sqrt(π)`, which is deflated explicitly.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::StochasticMatrix;
use crate::sparse::SparseMatrix;

/// Largest state count solved with a dense eigendecomposition by default.
pub const DENSE_LIMIT: usize = 2000;

/// Eigensolver used for a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapMethod {
    DenseSymmetrized,
    DeflatedPowerIteration,
    DeflatedLanczos,
    /// One-state chain; the gap is 1 by convention.
    Trivial,
}

/// Solver choice for [`spectral_gap_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    /// Dense up to `dense_limit` states, Lanczos above.
    Auto,
    Dense,
    Power,
    Lanczos,
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    pub solver: SolverChoice,
    pub dense_limit: usize,
    /// Target eigen-residual `‖S v − θ v‖` for the iterative solvers.
    pub tol: f64,
    pub max_iter: usize,
    /// Basis size before a Lanczos restart.
    pub krylov_dim: usize,
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            solver: SolverChoice::Auto,
            dense_limit: DENSE_LIMIT,
            tol: 1e-8,
            max_iter: 1_000_000,
            krylov_dim: 100,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub gap: f64,
    pub second_eigenvalue: f64,
    pub method: GapMethod,
    /// Eigen-residual of the reported second eigenpair.
    pub residual: f64,
    pub n_states: usize,
    /// Smallest eigenvalue, when the solver computes it.
    pub min_eigenvalue: Option<f64>,
    /// Whether all eigenvalues are ≥ −1e-10. Absent when undetermined.
    pub nonnegative_definite: Option<bool>,
    pub iterations: usize,
}

/// Eigenvalue floor for the nonnegative-definiteness flag.
const NND_TOL: f64 = 1e-10;

pub fn spectral_gap(p: &StochasticMatrix) -> Result<SpectrumReport> {
    spectral_gap_with(p, &SpectralOptions::default())
}

pub fn spectral_gap_with(p: &StochasticMatrix, opts: &SpectralOptions) -> Result<SpectrumReport> {
    let n = p.dim();
    if n == 1 {
        return Ok(SpectrumReport {
            gap: 1.0,
            second_eigenvalue: 0.0,
            method: GapMethod::Trivial,
            residual: 0.0,
            n_states: 1,
            min_eigenvalue: Some(1.0),
            nonnegative_definite: Some(true),
            iterations: 0,
        });
    }
    let sym = Symmetrized::new(p);
    match opts.solver {
        SolverChoice::Dense => dense(&sym),
        SolverChoice::Auto if n <= opts.dense_limit => dense(&sym),
        SolverChoice::Power => power(&sym, opts),
        SolverChoice::Auto | SolverChoice::Lanczos => lanczos(&sym, opts),
    }
}

struct Symmetrized {
    s: SparseMatrix,
    root: Vec<f64>,
    min_diag: f64,
}

impl Symmetrized {
    fn new(p: &StochasticMatrix) -> Self {
        let root: Vec<f64> = p.stationary().iter().map(|q| q.sqrt()).collect();
        // Average with the transpose so rounding cannot break symmetry.
        let triplets = p
            .matrix()
            .triplets()
            .map(|(x, y, v)| {
                let w = 0.5 * (root[x] / root[y] * v + root[y] / root[x] * p.get(y, x));
                (x, y, w)
            })
            .collect();
        let s = SparseMatrix::from_triplets(p.dim(), triplets).expect("same shape as P");
        let norm = root.iter().map(|r| r * r).sum::<f64>().sqrt();
        Symmetrized {
            s,
            root: root.iter().map(|r| r / norm).collect(),
            min_diag: p.min_diagonal(),
        }
    }

    fn deflate(&self, v: &mut [f64]) {
        let c = dot(v, &self.root);
        for (x, r) in v.iter_mut().zip(&self.root) {
            *x -= c * r;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual(sym: &Symmetrized, v: &[f64], theta: f64) -> f64 {
    let sv = sym.s.matvec(v);
    sv.iter()
        .zip(v)
        .map(|(a, b)| (a - theta * b).powi(2))
        .sum::<f64>()
        .sqrt()
        / norm(v)
}

fn report(
    sym: &Symmetrized,
    lambda2: f64,
    method: GapMethod,
    residual: f64,
    iterations: usize,
) -> SpectrumReport {
    // A holding probability of at least ½ on every state forces a
    // nonnegative spectrum; otherwise the iterative solvers cannot tell.
    let nnd = (sym.min_diag >= 0.5 - NND_TOL).then_some(true);
    SpectrumReport {
        gap: 1.0 - lambda2,
        second_eigenvalue: lambda2,
        method,
        residual,
        n_states: sym.s.dim(),
        min_eigenvalue: None,
        nonnegative_definite: nnd,
        iterations,
    }
}

fn dense(sym: &Symmetrized) -> Result<SpectrumReport> {
    let n = sym.s.dim();
    let eig = SymmetricEigen::new(sym.s.to_dense());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda2 = eig.eigenvalues[order[1]];
    let v: Vec<f64> = eig.eigenvectors.column(order[1]).iter().copied().collect();
    let res = residual(sym, &v, lambda2);
    let min = eig.eigenvalues[order[n - 1]];
    let mut r = report(sym, lambda2, GapMethod::DenseSymmetrized, res, 0);
    r.min_eigenvalue = Some(min);
    r.nonnegative_definite = Some(min >= -NND_TOL);
    Ok(r)
}

fn start_vector(sym: &Symmetrized, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..sym.s.dim())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    sym.deflate(&mut v);
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    v
}

/// Power iteration on `(S + I)/2`, whose spectrum lies in `[0, 1]`, inside
/// the complement of `sqrt(π)`.
fn power(sym: &Symmetrized, opts: &SpectralOptions) -> Result<SpectrumReport> {
    let mut v = start_vector(sym, opts.seed);
    let mut theta = 0.0;
    for it in 1..=opts.max_iter {
        let sv = sym.s.matvec(&v);
        theta = dot(&sv, &v);
        let res = sv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - theta * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if res <= opts.tol {
            return Ok(report(
                sym,
                theta,
                GapMethod::DeflatedPowerIteration,
                res,
                it,
            ));
        }
        let mut next: Vec<f64> = sv.iter().zip(&v).map(|(a, b)| 0.5 * (a + b)).collect();
        sym.deflate(&mut next);
        let nn = norm(&next);
        if nn == 0.0 {
            // v lies in the eigenspace of −1 exactly; the complement's top
            // eigenvalue is then what the Rayleigh quotient gave.
            return Ok(report(
                sym,
                theta,
                GapMethod::DeflatedPowerIteration,
                res,
                it,
            ));
        }
        next.iter_mut().for_each(|x| *x /= nn);
        v = next;
    }
    Err(Error::Contract {
        what: format!("power iteration did not reach residual {:e}", opts.tol),
        residual: residual(sym, &v, theta),
    })
}

/// Thick-restart Lanczos with full reorthogonalization, kept orthogonal to
/// `sqrt(π)`. When the basis is full it is compressed to the leading quarter
/// of Ritz vectors plus the current residual direction, so converged
/// directions near the top survive restarts.
///
/// The Ritz value never exceeds `λ₂`, so the reported gap is never below
/// the true one.
fn lanczos(sym: &Symmetrized, opts: &SpectralOptions) -> Result<SpectrumReport> {
    const CHECK_EVERY: usize = 25;
    let n = sym.s.dim();
    let max_dim = opts.krylov_dim.min(n - 1).max(2);
    let keep = (max_dim / 4).max(1);
    let mut basis: Vec<Vec<f64>> = vec![start_vector(sym, opts.seed)];
    // Projected matrix, filled column by column as basis vectors are applied.
    let mut h = DMatrix::<f64>::zeros(max_dim, max_dim);
    let mut applied = 0usize;
    let mut total = 0usize;
    let mut best = (f64::NAN, f64::INFINITY);
    loop {
        let j = applied;
        let mut w = sym.s.matvec(&basis[j]);
        total += 1;
        let mut coef = vec![0.0; basis.len()];
        for _ in 0..2 {
            sym.deflate(&mut w);
            for (c, q) in coef.iter_mut().zip(&basis) {
                let d = dot(&w, q);
                *c += d;
                w.iter_mut().zip(q).for_each(|(x, y)| *x -= d * y);
            }
        }
        for (i, &c) in coef.iter().enumerate() {
            h[(i, j)] = c;
            h[(j, i)] = c;
        }
        applied += 1;
        let beta = norm(&w);
        let k = applied;
        let full = k == max_dim;
        let exhausted = beta < 1e-13 || k >= n - 1;
        if !(full || exhausted || total.is_multiple_of(CHECK_EVERY) || total >= opts.max_iter) {
            w.iter_mut().for_each(|x| *x /= beta);
            basis.push(w);
            continue;
        }
        let eig = SymmetricEigen::new(h.view((0, 0), (k, k)).into_owned());
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let theta = eig.eigenvalues[order[0]];
        // ‖S u − θ u‖ = β |y_last| for the Ritz vector u = V y.
        let est = beta * eig.eigenvectors[(k - 1, order[0])].abs();
        if est < best.1 {
            best = (theta, est);
        }
        let ritz = |col: usize| {
            let mut out = vec![0.0; n];
            for (c, v) in eig.eigenvectors.column(col).iter().zip(&basis) {
                out.iter_mut().zip(v).for_each(|(o, x)| *o += c * x);
            }
            out
        };
        if est <= opts.tol || exhausted {
            let u = ritz(order[0]);
            let res = residual(sym, &u, theta);
            return Ok(report(sym, theta, GapMethod::DeflatedLanczos, res, total));
        }
        if total >= opts.max_iter {
            break;
        }
        w.iter_mut().for_each(|x| *x /= beta);
        if full {
            let mut kept: Vec<Vec<f64>> = order[..keep].iter().map(|&c| ritz(c)).collect();
            h.fill(0.0);
            for (i, &c) in order[..keep].iter().enumerate() {
                h[(i, i)] = eig.eigenvalues[c];
            }
            kept.push(w);
            basis = kept;
            applied = keep;
        } else {
            basis.push(w);
        }
    }
    Err(Error::Contract {
        what: format!(
            "Lanczos did not reach residual {:e} (best Ritz value {})",
            opts.tol, best.0
        ),
        residual: best.1,
    })
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::invalid(format!(
            "{what} has length {got}, expected {want}"
        )));
    }
    Ok(())
}

/// `½ Σ_{x,y} π(x) P(x,y) (f(x) − f(y))²`.
pub fn dirichlet_form(p: &StochasticMatrix, f: &[f64]) -> Result<f64> {
    check_len("test function", f.len(), p.dim())?;
    Ok(0.5
        * p.matrix()
            .triplets()
            .map(|(x, y, v)| p.stationary()[x] * v * (f[x] - f[y]).powi(2))
            .sum::<f64>())
}

/// `Σ π f² − (Σ π f)²`, evaluated around the mean for stability.
pub fn variance(pi: &[f64], f: &[f64]) -> Result<f64> {
    check_len("test function", f.len(), pi.len())?;
    let mean: f64 = pi.iter().zip(f).map(|(p, x)| p * x).sum();
    Ok(pi.iter().zip(f).map(|(p, x)| p * (x - mean).powi(2)).sum())
}

/// Boundary flow of `set` over the smaller of `π(set)` and `π(setᶜ)`.
pub fn cheeger_ratio(p: &StochasticMatrix, set: &[usize]) -> Result<f64> {
    let mut inside = vec![false; p.dim()];
    for &x in set {
        if x >= p.dim() {
            return Err(Error::invalid(format!("state {x} out of range")));
        }
        inside[x] = true;
    }
    let mass: f64 = (0..p.dim())
        .filter(|&x| inside[x])
        .map(|x| p.stationary()[x])
        .sum();
    let rest: f64 = (0..p.dim())
        .filter(|&x| !inside[x])
        .map(|x| p.stationary()[x])
        .sum();
    if mass <= 0.0 || rest <= 0.0 {
        return Err(Error::invalid(
            "cheeger ratio needs a proper nonempty subset",
        ));
    }
    let flow: f64 = p
        .matrix()
        .triplets()
        .filter(|&(x, y, _)| inside[x] && !inside[y])
        .map(|(x, _, v)| p.stationary()[x] * v)
        .sum();
    Ok(flow / mass.min(rest))
}

/// `sqrt(χ²) · exp(−n · gap)`.
pub fn tv_bound(chi_sq: f64, gap: f64, n: u64) -> Result<f64> {
    if !(chi_sq >= 0.0) || !(0.0..=2.0).contains(&gap) {
        return Err(Error::invalid(format!(
            "tv bound needs chi_sq ≥ 0 and gap in [0, 2] (got {chi_sq}, {gap})"
        )));
    }
    Ok(chi_sq.sqrt() * (-(n as f64) * gap).exp())
}

/// `χ²(μ, π) = Σ (μ(x) − π(x))² / π(x)`.
pub fn chi_square(mu: &[f64], pi: &[f64]) -> Result<f64> {
    check_len("initial distribution", mu.len(), pi.len())?;
    Ok(mu.iter().zip(pi).map(|(m, p)| (m - p).powi(2) / p).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::StateCodec;
    use approx::assert_abs_diff_eq;

    fn two_state(p: f64, q: f64) -> StochasticMatrix {
        let m = SparseMatrix::from_dense_rows(&[vec![1.0 - p, p], vec![q, 1.0 - q]]).unwrap();
        StochasticMatrix::new(
            m,
            vec![q / (p + q), p / (p + q)],
            StateCodec::Indexed { n: 2 },
        )
        .unwrap()
    }

    #[test]
    fn identity_has_zero_gap() {
        let k = StochasticMatrix::new(
            SparseMatrix::identity(3),
            vec![0.2, 0.3, 0.5],
            StateCodec::Indexed { n: 3 },
        )
        .unwrap();
        assert_abs_diff_eq!(spectral_gap(&k).unwrap().gap, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn two_state_gap_is_p_plus_q() {
        for (p, q) in [(0.1, 0.3), (0.5, 0.5), (0.02, 0.7)] {
            let r = spectral_gap(&two_state(p, q)).unwrap();
            assert_abs_diff_eq!(r.gap, p + q, epsilon = 1e-13);
            assert_eq!(r.method, GapMethod::DenseSymmetrized);
        }
    }

    #[test]
    fn iterative_solvers_agree_with_dense() {
        let k = two_state(0.1, 0.3);
        for solver in [SolverChoice::Power, SolverChoice::Lanczos] {
            let opts = SpectralOptions {
                solver,
                ..Default::default()
            };
            let r = spectral_gap_with(&k, &opts).unwrap();
            assert_abs_diff_eq!(r.gap, 0.4, epsilon = 1e-8);
            assert!(r.residual <= 1e-8);
        }
    }

    #[test]
    fn single_state_convention() {
        let k = StochasticMatrix::new(
            SparseMatrix::identity(1),
            vec![1.0],
            StateCodec::Indexed { n: 1 },
        )
        .unwrap();
        let r = spectral_gap(&k).unwrap();
        assert_eq!(r.gap, 1.0);
        assert_eq!(r.method, GapMethod::Trivial);
    }

    #[test]
    fn dirichlet_and_variance_basics() {
        let k = two_state(0.2, 0.4);
        assert_eq!(dirichlet_form(&k, &[3.0, 3.0]).unwrap(), 0.0);
        // Edge-sum oracle: π(0) P(0,1) (f0 − f1)².
        let pi0 = 0.4 / 0.6;
        assert_abs_diff_eq!(
            dirichlet_form(&k, &[1.0, 0.0]).unwrap(),
            pi0 * 0.2,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            variance(&[0.5, 0.5], &[1.0, 0.0]).unwrap(),
            0.25,
            epsilon = 1e-15
        );
        assert_eq!(variance(&[0.5, 0.5], &[2.0, 2.0]).unwrap(), 0.0);
        assert!(dirichlet_form(&k, &[1.0]).is_err());
    }

    #[test]
    fn cheeger_cases() {
        // Flow ½·½ over mass ½.
        let k = two_state(0.5, 0.5);
        assert_abs_diff_eq!(cheeger_ratio(&k, &[0]).unwrap(), 0.5, epsilon = 1e-15);
        let blocks = SparseMatrix::from_dense_rows(&[
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.0, 0.0, 0.5, 0.5],
            vec![0.0, 0.0, 0.5, 0.5],
        ])
        .unwrap();
        let k = StochasticMatrix::new(blocks, vec![0.25; 4], StateCodec::Indexed { n: 4 }).unwrap();
        assert_eq!(cheeger_ratio(&k, &[0, 1]).unwrap(), 0.0);
        assert!(cheeger_ratio(&k, &[]).is_err());
        assert!(cheeger_ratio(&k, &[0, 1, 2, 3]).is_err());
    }

    #[test]
    fn tv_bound_closed_forms() {
        assert_abs_diff_eq!(
            tv_bound(4.0, 0.5, 2).unwrap(),
            2.0 * (-1.0f64).exp(),
            epsilon = 1e-15
        );
        assert_eq!(tv_bound(9.0, 0.3, 0).unwrap(), 3.0);
        assert_eq!(tv_bound(9.0, 0.0, 100).unwrap(), 3.0);
        assert!(tv_bound(-1.0, 0.1, 1).is_err());
        assert!(tv_bound(1.0, 2.5, 1).is_err());
    }
}
