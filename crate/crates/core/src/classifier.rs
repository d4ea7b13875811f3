//! Linear max-margin change classifier with sigmoid-calibrated probabilities.
//!
//! Training minimises the L2-regularised hinge loss
//!
//! ```text
//! ½ (‖w‖² + b²) + Σ_i C_i · max(0, 1 − y_i (w·x_i + b))
//! ```
//!
//! by dual coordinate descent on the bias-augmented inputs `[x, 1]`. The
//! solver stops once the duality gap falls below the configured relative
//! tolerance. Coordinates are visited in a seeded permutation that is redrawn
//! every epoch, so training is deterministic for a fixed seed.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower/upper clamp applied to class probabilities.
pub const PROBABILITY_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainConfig<T> {
    /// Inverse regularisation strength.
    pub reg_c: T,
    /// Margin divisor applied before the sigmoid.
    pub temperature: T,
    /// Reweight each class by `n / (2 n_class)`.
    pub balanced: bool,
    /// Relative duality-gap tolerance.
    pub tolerance: T,
    pub max_epochs: usize,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            reg_c: T::one(),
            temperature: T::one(),
            balanced: false,
            tolerance: T::lit(1e-8).max(T::epsilon() * T::lit(16.0)),
            max_epochs: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ClassifierModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub reg_c: T,
    pub temperature: T,
    pub trained_on: usize,
    /// Set when training saw a single class; the model then scores every
    /// input with the constant `±1`.
    pub degenerate: bool,
}

/// Two-row matrix of class probabilities: row 0 is `p_change`, row 1 is
/// `p_nochange`, one column per exemplar.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringMatrix<T>(pub Array2<T>);

impl<T: Scalar> ScoringMatrix<T> {
    pub fn values(&self) -> &Array2<T> {
        &self.0
    }

    pub fn columns(&self) -> usize {
        self.0.ncols()
    }
}

/// Class index for probability gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassIndex {
    Change,
    NoChange,
}

impl ClassIndex {
    pub const ALL: [ClassIndex; 2] = [ClassIndex::Change, ClassIndex::NoChange];
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(s: T) -> T {
    if s >= T::zero() {
        T::one() / (T::one() + (-s).exp())
    } else {
        let e = s.exp();
        e / (T::one() + e)
    }
}

pub fn train<T: Scalar>(labeled: &[(&[T], Label)], config: &TrainConfig<T>, seed: u64) -> Result<ClassifierModel<T>> {
    if labeled.is_empty() {
        return Err(Error::invalid("cannot train on an empty labelled set"));
    }
    if config.reg_c <= T::zero() || config.temperature <= T::zero() {
        return Err(Error::invalid("reg_c and temperature must be positive"));
    }
    let dim = labeled[0].0.len();
    for (x, _) in labeled {
        Error::check_dim(dim, x.len())?;
    }
    let n = labeled.len();
    let n_pos = labeled.iter().filter(|(_, y)| y.is_positive()).count();

    if n_pos == 0 || n_pos == n {
        let sign = if n_pos == n { T::one() } else { -T::one() };
        return Ok(ClassifierModel {
            weights: vec![T::zero(); dim],
            bias: sign,
            reg_c: config.reg_c,
            temperature: config.temperature,
            trained_on: n,
            degenerate: true,
        });
    }

    let upper: Vec<T> = labeled
        .iter()
        .map(|(_, y)| {
            if config.balanced {
                let n_class = if y.is_positive() { n_pos } else { n - n_pos };
                config.reg_c * T::from_count(n) / (T::lit(2.0) * T::from_count(n_class))
            } else {
                config.reg_c
            }
        })
        .collect();
    let ys: Vec<T> = labeled.iter().map(|(_, y)| y.value()).collect();
    // Diagonal of Q for the augmented input [x, 1].
    let q_diag: Vec<T> = labeled.iter().map(|(x, _)| dot(x, x) + T::one()).collect();

    let mut alpha = vec![T::zero(); n];
    let mut w = vec![T::zero(); dim];
    let mut b = T::zero();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = labeled[i].0;
            let g = ys[i] * (dot(&w, x) + b) - T::one();
            let a_old = alpha[i];
            let a_new = (a_old - g / q_diag[i]).max(T::zero()).min(upper[i]);
            let delta = a_new - a_old;
            if delta != T::zero() {
                alpha[i] = a_new;
                let step = delta * ys[i];
                for (wj, &xj) in w.iter_mut().zip(x) {
                    *wj = *wj + step * xj;
                }
                b = b + step;
            }
        }
        let norm_sq = dot(&w, &w) + b * b;
        let loss = labeled
            .iter()
            .zip(&ys)
            .zip(&upper)
            .fold(T::zero(), |acc, (((x, _), &y), &c)| {
                acc + c * (T::one() - y * (dot(&w, x) + b)).max(T::zero())
            });
        let primal = T::lit(0.5) * norm_sq + loss;
        let dual = alpha.iter().copied().sum::<T>() - T::lit(0.5) * norm_sq;
        if primal - dual <= config.tolerance * primal.abs().max(T::one()) {
            break;
        }
    }

    Ok(ClassifierModel {
        weights: w,
        bias: b,
        reg_c: config.reg_c,
        temperature: config.temperature,
        trained_on: n,
        degenerate: false,
    })
}

impl<T: Scalar> ClassifierModel<T> {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Affine decision value `w·x + b`.
    pub fn score(&self, x: &[T]) -> Result<T> {
        Error::check_dim(self.weights.len(), x.len())?;
        Ok(dot(&self.weights, x) + self.bias)
    }

    /// `(p_change, p_nochange)`, each clamped to `[ε, 1−ε]`.
    pub fn probabilities(&self, x: &[T]) -> Result<(T, T)> {
        let p = sigmoid(self.score(x)? / self.temperature);
        Ok((clamp_probability(p), clamp_probability(T::one() - p)))
    }

    pub fn scoring_matrix(&self, exemplars: &Array2<T>) -> Result<ScoringMatrix<T>> {
        Error::check_dim(self.dim(), exemplars.ncols())?;
        let k = exemplars.nrows();
        let mut m = Array2::zeros((2, k));
        for (j, row) in exemplars.rows().into_iter().enumerate() {
            let (p, q) = self.probabilities(row.as_slice().expect("standard layout"))?;
            m[[0, j]] = p;
            m[[1, j]] = q;
        }
        Ok(ScoringMatrix(m))
    }

    /// Gradient of the class probability with respect to the input.
    pub fn probability_gradient(&self, x: &[T], class: ClassIndex) -> Result<Vec<T>> {
        let (p, _) = self.probabilities(x)?;
        let scale = p * (T::one() - p) / self.temperature;
        let scale = match class {
            ClassIndex::Change => scale,
            ClassIndex::NoChange => -scale,
        };
        Ok(self.weights.iter().map(|&w| scale * w).collect())
    }

    /// Regularised hinge objective this model's trainer minimises.
    pub fn primal_objective(&self, labeled: &[(&[T], Label)]) -> Result<T> {
        let mut loss = T::zero();
        for (x, y) in labeled {
            let margin = y.value::<T>() * self.score(x)?;
            loss = loss + self.reg_c * (T::one() - margin).max(T::zero());
        }
        Ok(T::lit(0.5) * (dot(&self.weights, &self.weights) + self.bias * self.bias) + loss)
    }
}

pub fn clamp_probability<T: Scalar>(p: T) -> T {
    let eps = T::lit(PROBABILITY_CLAMP);
    p.max(eps).min(T::one() - eps)
}
