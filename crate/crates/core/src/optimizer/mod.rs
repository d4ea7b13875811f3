//! Virtual-exemplar display learning.
//!
//! A display of `K` virtual exemplars `D` (K×d) and a row-stochastic
//! membership matrix `μ` (n×K) are found by minimising
//!
//! ```text
//! rep · Σ_ik μ_ik ‖x_i − D_k‖²  +  div · diversity(m)  +  amb · ambiguity(f(D))  +  γ Σ_ik μ_ik ln μ_ik
//! ```
//!
//! where `m_k = (1/n) Σ_i μ_ik` is the mass carried by exemplar `k` and
//! `f(D)` holds the classifier's class probabilities at each exemplar. The
//! [`Variant::Early`] objective measures diversity and ambiguity as negative
//! entropies; [`Variant::Surrogate`] replaces both with squared deviations
//! from the uniform values `1/K` and `½`.
//!
//! The minimisation alternates two closed-form steps (see [`updates`]) until
//! the summed L1 change of `μ` and `D` drops below `epsilon`.

mod solve;
mod updates;

pub use solve::{initial_state, solve_display, solve_display_from, write_trajectory_csv, SolveResult, TrajectoryPoint};
pub use updates::{
    exemplar_update, gamma_policy, membership_bracket, membership_update, membership_update_with_gamma, objective,
    objective_terms, squared_distance_matrix, ExemplarStep, MembershipStep, ObjectiveTerms, GAMMA_FLOOR,
};

use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-stochastic tolerance enforced on membership matrices, widened to a
/// few ulps per entry for single precision.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_GAMMA_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Early,
    Surrogate,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Early => "early",
            Variant::Surrogate => "surrogate",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(Variant::Early),
            "surrogate" => Ok(Variant::Surrogate),
            _ => Err(Error::invalid(format!("unknown variant `{s}`; allowed: early, surrogate"))),
        }
    }
}

/// 0/1 multipliers on the representativity, diversity and ambiguity terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Gates {
    pub rep: bool,
    pub div: bool,
    pub amb: bool,
}

impl Gates {
    pub const ALL: Gates = Gates { rep: true, div: true, amb: true };
    pub const REP_ONLY: Gates = Gates { rep: true, div: false, amb: false };

    /// The seven non-empty gate combinations, in ablation-table order.
    pub fn ablation_grid() -> [Gates; 7] {
        let g = |rep, div, amb| Gates { rep, div, amb };
        [
            g(false, false, true),
            g(false, true, false),
            g(true, false, false),
            g(true, false, true),
            g(false, true, true),
            g(true, true, false),
            g(true, true, true),
        ]
    }

    pub fn label(self) -> String {
        let mut parts = Vec::new();
        if self.rep {
            parts.push("rep");
        }
        if self.div {
            parts.push("div");
        }
        if self.amb {
            parts.push("amb");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }

    pub(crate) fn factor<T: Scalar>(on: bool) -> T {
        if on {
            T::one()
        } else {
            T::zero()
        }
    }
}

/// Parses labels such as `rep+amb`.
impl FromStr for Gates {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut g = Gates { rep: false, div: false, amb: false };
        for part in s.split('+') {
            match part.trim() {
                "rep" => g.rep = true,
                "div" => g.div = true,
                "amb" => g.amb = true,
                other => return Err(Error::invalid(format!("unknown term `{other}`; allowed: rep, div, amb"))),
            }
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OptimizerConfig<T> {
    pub variant: Variant,
    pub k: usize,
    pub alpha: T,
    pub beta: T,
    /// Proportionality constant of the iteration-dependent temperature γ.
    pub gamma_scale: T,
    /// Fixes γ instead of deriving it from the update bracket.
    pub gamma_override: Option<T>,
    pub gates: Gates,
    pub epsilon: T,
    pub max_iterations: usize,
    pub seed: u64,
}

impl<T: Scalar> OptimizerConfig<T> {
    /// Defaults: α = β = 1/K, ρ = 0.05, ε = 1e-3, 100 iterations, all gates on.
    ///
    /// With ρ near 1, γ exceeds the temperature at which the exemplars split
    /// apart and every exemplar collapses onto the data centroid.
    pub fn new(variant: Variant, k: usize) -> Self {
        let inv_k = if k == 0 { T::zero() } else { T::one() / T::from_count(k) };
        OptimizerConfig {
            variant,
            k,
            alpha: inv_k,
            beta: inv_k,
            gamma_scale: T::lit(DEFAULT_GAMMA_SCALE),
            gamma_override: None,
            gates: Gates::ALL,
            epsilon: T::lit(1e-3),
            max_iterations: 100,
            seed: 0,
        }
    }

    pub fn with_gates(mut self, gates: Gates) -> Self {
        self.gates = gates;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if self.alpha < T::zero() || self.beta < T::zero() {
            return Err(Error::invalid("alpha and beta must be non-negative"));
        }
        if !(self.gamma_scale > T::zero()) || !(self.epsilon > T::zero()) {
            return Err(Error::invalid("gamma_scale and epsilon must be positive"));
        }
        if let Some(g) = self.gamma_override {
            if !(g > T::zero()) {
                return Err(Error::invalid("gamma_override must be positive"));
            }
        }
        Ok(())
    }
}

/// n×K row-stochastic matrix of exemplar-assignment probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMatrix<T>(Array2<T>);

impl<T: Scalar> MembershipMatrix<T> {
    pub fn new(values: Array2<T>) -> Result<Self> {
        check_row_stochastic(&values)?;
        Ok(MembershipMatrix(values))
    }

    /// Normalises each row of a non-negative matrix to sum to one.
    pub fn from_unnormalized(mut values: Array2<T>) -> Result<Self> {
        for mut row in values.rows_mut() {
            let s: T = row.iter().copied().sum();
            if !(s > T::zero()) || !s.is_finite() {
                return Err(Error::Contract("membership row has no positive mass".into()));
            }
            row.mapv_inplace(|v| v / s);
        }
        Self::new(values)
    }

    pub fn values(&self) -> &Array2<T> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<T> {
        self.0
    }

    /// Column masses `1ᵀμ`.
    pub fn masses(&self) -> Vec<T> {
        column_sums(&self.0)
    }

    /// Per-row index of the largest membership (first on ties).
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.0
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                    .0
            })
            .collect()
    }
}

/// K×d matrix of virtual exemplars.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarSet<T>(Array2<T>);

impl<T: Scalar> ExemplarSet<T> {
    pub fn new(values: Array2<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("exemplar entries must be finite".into()));
        }
        Ok(ExemplarSet(values))
    }

    pub fn values(&self) -> &Array2<T> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }
}

pub(crate) fn check_row_stochastic<T: Scalar>(mu: &Array2<T>) -> Result<()> {
    let tol = T::lit(ROW_SUM_TOLERANCE).max(T::epsilon() * T::from_count(4 * mu.ncols().max(1)));
    for (i, row) in mu.rows().into_iter().enumerate() {
        if row.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
            return Err(Error::Contract(format!("membership row {i} has a negative or non-finite entry")));
        }
        let s: T = row.iter().copied().sum();
        if (s - T::one()).abs() > tol {
            return Err(Error::Contract(format!("membership row {i} sums to {s}, not 1")));
        }
    }
    Ok(())
}

pub(crate) fn column_sums<T: Scalar>(m: &Array2<T>) -> Vec<T> {
    let mut sums = vec![T::zero(); m.ncols()];
    for row in m.rows() {
        for (s, &v) in sums.iter_mut().zip(row.iter()) {
            *s = *s + v;
        }
    }
    sums
}
