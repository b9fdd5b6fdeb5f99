//! Input formats and kernel selection.
//!
//! A family file looks like
//!
//! ```json
//! {"atoms": [{"weight": "0.25", "mode": 0}, {"weight": 3, "mode": 1}],
//!  "betas": [0.5, 1.0],
//!  "proposal": "uniform"}
//! ```
//!
//! Weights are numbers or decimal strings; strings are converted straight
//! to log weights so `"1e-5000"` is fine. `proposal` is `"uniform"`
//! (default), `"ring"` or a dense symmetric matrix.
//!
//! A kernel file is `{"matrix": [[...], ...], "stationary": [...]}`; when the
//! stationary law is omitted it is solved for.

use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    aux_chain_p1, aux_chain_p2, level_kernels, product_update_t, project_to_assignments,
    projected_level_kernel, pt_kernel, ring_proposal, swap_kernel_q, uniform_proposal, StateCodec,
    StochasticMatrix,
};
use crate::measure::{temper, FiniteTarget, TemperatureLadder, TemperedFamily};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Number(f64),
    Decimal(String),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub weight: WeightSpec,
    pub mode: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ProposalSpec {
    Named(String),
    Dense(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyFile {
    pub atoms: Vec<AtomSpec>,
    pub betas: Vec<f64>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub proposal: Option<ProposalSpec>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct KernelFile {
    pub matrix: Vec<Vec<f64>>,
    #[serde(default)]
    pub stationary: Option<Vec<f64>>,
}

/// A tempered family with the proposal its level kernels use.
#[derive(Debug, Clone)]
pub struct FamilySpec {
    pub family: TemperedFamily,
    pub proposal: SparseMatrix,
}

#[derive(Debug, Clone)]
pub enum Input {
    Family(FamilySpec),
    Kernel(StochasticMatrix),
}

/// Natural log of a positive decimal literal such as `"3.5e-400"`.
pub fn parse_log_decimal(s: &str) -> Result<f64> {
    let bad = || Error::Parse(format!("not a positive decimal: {s:?}"));
    let s = s.trim();
    let s = s.strip_prefix('+').unwrap_or(s);
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(p) => (&s[..p], i64::from_str(&s[p + 1..]).map_err(|_| bad())?),
        None => (s, 0),
    };
    let (int, frac) = match mantissa.split_once('.') {
        Some((a, b)) => (a, b),
        None => (mantissa, ""),
    };
    if int.is_empty() && frac.is_empty()
        || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let digits: String = int.chars().chain(frac.chars()).collect();
    let lead = digits.trim_start_matches('0');
    if lead.is_empty() {
        return Err(Error::Parse(format!("weight must be positive: {s:?}")));
    }
    // Value = 0.lead × 10^(exp + len(int) − leading zeros stripped).
    let stripped = digits.len() - lead.len();
    let shift = exp + int.len() as i64 - stripped as i64;
    let head: String = lead.chars().take(17).collect();
    let head_val = f64::from_str(&format!("0.{head}")).map_err(|_| bad())?;
    Ok(head_val.ln() + shift as f64 * std::f64::consts::LN_10)
}

fn log_weight(w: &WeightSpec) -> Result<f64> {
    match w {
        WeightSpec::Number(x) if *x > 0.0 && x.is_finite() => Ok(x.ln()),
        WeightSpec::Number(x) => Err(Error::Parse(format!(
            "weight must be positive and finite, got {x}"
        ))),
        WeightSpec::Decimal(s) => parse_log_decimal(s),
    }
}

fn dense_to_sparse(rows: &[Vec<f64>]) -> Result<SparseMatrix> {
    SparseMatrix::from_dense_rows(rows)
}

fn build_proposal(spec: Option<&ProposalSpec>, n: usize) -> Result<SparseMatrix> {
    match spec {
        None => Ok(uniform_proposal(n)),
        Some(ProposalSpec::Named(name)) => match name.as_str() {
            "uniform" => Ok(uniform_proposal(n)),
            "ring" => Ok(ring_proposal(n)),
            other => Err(Error::Parse(format!("unknown proposal {other:?}"))),
        },
        Some(ProposalSpec::Dense(rows)) => {
            let q = dense_to_sparse(rows)?;
            if q.dim() != n {
                return Err(Error::invalid(format!(
                    "proposal is {0}×{0}, expected {n}×{n}",
                    q.dim()
                )));
            }
            Ok(q)
        }
    }
}

impl FamilyFile {
    pub fn into_spec(self) -> Result<FamilySpec> {
        if self.atoms.is_empty() {
            return Err(Error::invalid("family has no atoms"));
        }
        let logs = self
            .atoms
            .iter()
            .map(|a| log_weight(&a.weight))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = self.atoms.iter().map(|a| a.mode).collect();
        let m = self
            .m
            .unwrap_or_else(|| labels.iter().max().map_or(0, |k| k + 1));
        let target = FiniteTarget::from_log_weights(logs, labels, m)?;
        let family = temper(&target, &TemperatureLadder::new(self.betas)?)?;
        let proposal = build_proposal(self.proposal.as_ref(), family.n_atoms())?;
        Ok(FamilySpec { family, proposal })
    }
}

/// Stationary law of a dense stochastic matrix via `π(P − I) = 0, Σπ = 1`.
fn solve_stationary(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = rows.len();
    let mut a = DMatrix::<f64>::zeros(n + 1, n);
    for (x, row) in rows.iter().enumerate() {
        for (y, &v) in row.iter().enumerate() {
            a[(y, x)] += v;
        }
        a[(x, x)] -= 1.0;
    }
    for y in 0..n {
        a[(n, y)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n + 1);
    b[n] = 1.0;
    let svd = a.svd(true, true);
    let pi = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::invalid(format!("stationary solve failed: {e}")))?;
    Ok(pi.iter().copied().collect())
}

impl KernelFile {
    pub fn into_kernel(self) -> Result<StochasticMatrix> {
        let n = self.matrix.len();
        if n == 0 || self.matrix.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("kernel matrix must be square and non-empty"));
        }
        let pi = match self.stationary {
            Some(p) => p,
            None => solve_stationary(&self.matrix)?,
        };
        StochasticMatrix::new(
            dense_to_sparse(&self.matrix)?,
            pi,
            StateCodec::Indexed { n },
        )
    }
}

/// Parses either a family or a kernel document.
pub fn parse_input(text: &str) -> Result<Input> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Parse("input must be a JSON object".into()))?;
    if obj.contains_key("matrix") {
        let k: KernelFile =
            serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(Input::Kernel(k.into_kernel()?))
    } else {
        let f: FamilyFile =
            serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(Input::Family(f.into_spec()?))
    }
}

pub fn read_input(path: &Path) -> Result<Input> {
    parse_input(&std::fs::read_to_string(path)?)
}

/// Which kernel of a family to analyse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelSelector {
    /// `½T + ½Q` on the atom product space.
    Pt,
    /// `P_pt` projected onto mode assignments.
    PtBar,
    T,
    Q,
    P1,
    P2,
    /// Metropolis kernel of one level.
    Level(usize),
    /// Projection of one level kernel onto the modes.
    LevelBar(usize),
}

impl FromStr for KernelSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let level = |rest: &str| {
            rest.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad level in kernel selector {s:?}")))
        };
        match s {
            "pt" => Ok(KernelSelector::Pt),
            "pt-bar" => Ok(KernelSelector::PtBar),
            "t" => Ok(KernelSelector::T),
            "q" => Ok(KernelSelector::Q),
            "p1" => Ok(KernelSelector::P1),
            "p2" => Ok(KernelSelector::P2),
            _ => {
                if let Some(rest) = s.strip_prefix("level-bar:") {
                    Ok(KernelSelector::LevelBar(level(rest)?))
                } else if let Some(rest) = s.strip_prefix("level:") {
                    Ok(KernelSelector::Level(level(rest)?))
                } else {
                    Err(Error::Parse(format!(
                        "unknown kernel {s:?}; expected pt, pt-bar, t, q, p1, p2, level:<i> or level-bar:<i>"
                    )))
                }
            }
        }
    }
}

/// Builds the selected kernel of `spec`.
pub fn select_kernel(
    spec: &FamilySpec,
    sel: KernelSelector,
    budget: usize,
) -> Result<StochasticMatrix> {
    let f = &spec.family;
    let level_of = |i: usize| {
        if i >= f.num_levels() {
            Err(Error::invalid(format!("level {i} out of range")))
        } else {
            crate::kernels::metropolis_level_kernel(f.level(i), &spec.proposal)
        }
    };
    match sel {
        KernelSelector::Pt | KernelSelector::PtBar => {
            let t = product_update_t(f, &level_kernels(f, &spec.proposal)?, budget)?;
            let q = swap_kernel_q(f, budget)?;
            let p = pt_kernel(&t, &q)?;
            if sel == KernelSelector::PtBar {
                project_to_assignments(f, &p, budget)
            } else {
                Ok(p)
            }
        }
        KernelSelector::T => product_update_t(f, &level_kernels(f, &spec.proposal)?, budget),
        KernelSelector::Q => swap_kernel_q(f, budget),
        KernelSelector::P1 => aux_chain_p1(f, budget),
        KernelSelector::P2 => aux_chain_p2(f, budget),
        KernelSelector::Level(i) => level_of(i),
        KernelSelector::LevelBar(i) => projected_level_kernel(f, &level_of(i)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_logs() {
        let cases = [
            ("1", 0.0),
            ("10", 10f64.ln()),
            ("0.25", 0.25f64.ln()),
            ("2.5e3", 2500f64.ln()),
            ("000.0040", 0.004f64.ln()),
        ];
        for (s, want) in cases {
            assert!((parse_log_decimal(s).unwrap() - want).abs() < 1e-14, "{s}");
        }
        let tiny = parse_log_decimal("3e-5000").unwrap();
        assert!((tiny - (3f64.ln() - 5000.0 * std::f64::consts::LN_10)).abs() < 1e-9);
        for bad in ["0", "-1", "abc", "", "1e", "1.2.3"] {
            assert!(parse_log_decimal(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn family_roundtrip() {
        let text = r#"{"atoms":[{"weight":"1","mode":0},{"weight":4,"mode":1}],"betas":[0.5,1.0]}"#;
        let Input::Family(spec) = parse_input(text).unwrap() else {
            panic!()
        };
        let l0 = spec.family.level(0);
        assert!((l0[0] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(spec.proposal.dim(), 2);
    }

    #[test]
    fn kernel_stationary_is_solved() {
        let text = r#"{"matrix":[[0.7,0.3],[0.1,0.9]]}"#;
        let Input::Kernel(k) = parse_input(text).unwrap() else {
            panic!()
        };
        assert!((k.stationary()[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(parse_input("{"), Err(Error::Parse(_))));
        assert!(parse_input(r#"{"atoms":[],"betas":[1.0]}"#).is_err());
        assert!(parse_input(
            r#"{"atoms":[{"weight":1,"mode":0}],"betas":[1.0],"proposal":"zigzag"}"#
        )
        .is_err());
    }

    #[test]
    fn selectors_parse() {
        assert_eq!(
            "pt-bar".parse::<KernelSelector>().unwrap(),
            KernelSelector::PtBar
        );
        assert_eq!(
            "level:2".parse::<KernelSelector>().unwrap(),
            KernelSelector::Level(2)
        );
        assert_eq!(
            "level-bar:0".parse::<KernelSelector>().unwrap(),
            KernelSelector::LevelBar(0)
        );
        assert!("nope".parse::<KernelSelector>().is_err());
    }
}
