//! Objective evaluation and the two closed-form alternating steps.
//!
//! Membership step, with `d_ik = ‖x_i − D_k‖²` and `m_k` the column masses of
//! the previous membership divided by `n`:
//!
//! ```text
//! bracket_ik = rep · d_ik + div · (α/n) · g_k
//!     g_k = 1 + ln m_k          (early)
//!     g_k = m_k − 1/K           (surrogate)
//! μ_ik ∝ exp(−bracket_ik / γ)   (rows normalised)
//! ```
//!
//! Exemplar step, with `f_c` the class probabilities at the previous
//! exemplars:
//!
//! ```text
//! D_k = [ rep · Σ_i μ_ik x_i + amb · β · Σ_c ∇f_c(D_k) · h_c(D_k) ] / Σ_i μ_ik
//!     h_c = ln f_c + 1          (early)
//!     h_c = f_c − ½             (surrogate)
//! ```
//!
//! A column whose mass is below `1e-8 · n/K` keeps its previous exemplar.

use ndarray::{Array2, ArrayView2};

use super::{check_row_stochastic, column_sums, ExemplarSet, Gates, MembershipMatrix, OptimizerConfig, Variant};
use crate::classifier::{ClassIndex, ClassifierModel};
use crate::error::{Error, Result};
use crate::scalar::{xlogx, Scalar};

pub const GAMMA_FLOOR: f64 = 1e-12;
const MASS_FLOOR: f64 = 1e-8;

/// Entry `(i, k)` is `‖x_i − D_k‖²`.
pub fn squared_distance_matrix<T: Scalar>(x: ArrayView2<T>, d: ArrayView2<T>) -> Result<Array2<T>> {
    Error::check_dim(x.ncols(), d.ncols())?;
    let mut out = Array2::zeros((x.nrows(), d.nrows()));
    for (i, xi) in x.rows().into_iter().enumerate() {
        for (k, dk) in d.rows().into_iter().enumerate() {
            out[[i, k]] = xi
                .iter()
                .zip(dk.iter())
                .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        }
    }
    Ok(out)
}

/// γ = ρ · mean |bracket|, floored at [`GAMMA_FLOOR`].
pub fn gamma_policy<T: Scalar>(bracket: &Array2<T>, rho: T) -> T {
    let floor = T::lit(GAMMA_FLOOR);
    if bracket.is_empty() {
        return floor;
    }
    let mean = bracket.iter().fold(T::zero(), |acc, v| acc + v.abs()) / T::from_count(bracket.len());
    (rho * mean).max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms<T> {
    pub representativity: T,
    pub diversity: T,
    pub ambiguity: T,
    pub entropy: T,
}

impl<T: Scalar> ObjectiveTerms<T> {
    pub fn total(&self) -> T {
        self.representativity + self.diversity + self.ambiguity + self.entropy
    }
}

/// Gated objective terms; the γ-weighted entropy regulariser is always on.
pub fn objective_terms<T: Scalar>(
    x: ArrayView2<T>,
    mu: ArrayView2<T>,
    d: ArrayView2<T>,
    model: &ClassifierModel<T>,
    config: &OptimizerConfig<T>,
    gamma: T,
) -> Result<ObjectiveTerms<T>> {
    let mu = mu.to_owned();
    check_row_stochastic(&mu)?;
    check_shapes(x, mu.view(), d)?;
    let n = T::from_count(x.nrows());
    let k = d.nrows();
    let gates = config.gates;

    let dist = squared_distance_matrix(x, d)?;
    let representativity = mu.iter().zip(dist.iter()).fold(T::zero(), |acc, (&m, &v)| acc + m * v);

    let masses: Vec<T> = column_sums(&mu).into_iter().map(|s| s / n).collect();
    let diversity = match config.variant {
        Variant::Early => config.alpha * masses.iter().map(|&m| xlogx(m)).sum::<T>(),
        Variant::Surrogate => {
            let inv_k = T::one() / T::from_count(k);
            config.alpha * T::lit(0.5) * masses.iter().map(|&m| (m - inv_k) * (m - inv_k)).sum::<T>()
        }
    };

    let scores = model.scoring_matrix(&d.to_owned())?;
    let half = T::lit(0.5);
    let ambiguity = match config.variant {
        Variant::Early => config.beta * scores.values().iter().map(|&f| xlogx(f)).sum::<T>(),
        Variant::Surrogate => config.beta * half * scores.values().iter().map(|&f| (f - half) * (f - half)).sum::<T>(),
    };

    let entropy = gamma * mu.iter().map(|&m| xlogx(m)).sum::<T>();

    Ok(ObjectiveTerms {
        representativity: Gates::factor::<T>(gates.rep) * representativity,
        diversity: Gates::factor::<T>(gates.div) * diversity,
        ambiguity: Gates::factor::<T>(gates.amb) * ambiguity,
        entropy,
    })
}

pub fn objective<T: Scalar>(
    x: ArrayView2<T>,
    mu: ArrayView2<T>,
    d: ArrayView2<T>,
    model: &ClassifierModel<T>,
    config: &OptimizerConfig<T>,
    gamma: T,
) -> Result<T> {
    Ok(objective_terms(x, mu, d, model, config, gamma)?.total())
}

fn check_shapes<T: Scalar>(x: ArrayView2<T>, mu: ArrayView2<T>, d: ArrayView2<T>) -> Result<()> {
    Error::check_dim(x.ncols(), d.ncols())?;
    Error::check_dim(x.nrows(), mu.nrows())?;
    Error::check_dim(d.nrows(), mu.ncols())
}

/// The exponent bracket of the membership step (before division by γ).
pub fn membership_bracket<T: Scalar>(
    x: ArrayView2<T>,
    d: ArrayView2<T>,
    mu_prev: &MembershipMatrix<T>,
    config: &OptimizerConfig<T>,
) -> Result<Array2<T>> {
    check_shapes(x, mu_prev.values().view(), d)?;
    let n = T::from_count(x.nrows());
    let k = d.nrows();
    let gates = config.gates;

    let mut bracket = if gates.rep {
        squared_distance_matrix(x, d)?
    } else {
        Array2::zeros((x.nrows(), k))
    };
    if gates.div {
        let inv_k = T::one() / T::from_count(k);
        let shift: Vec<T> = mu_prev
            .masses()
            .into_iter()
            .map(|s| {
                let m = s / n;
                let g = match config.variant {
                    Variant::Early => T::one() + m.ln(),
                    Variant::Surrogate => m - inv_k,
                };
                config.alpha / n * g
            })
            .collect();
        for mut row in bracket.rows_mut() {
            for (b, &s) in row.iter_mut().zip(&shift) {
                *b = *b + s;
            }
        }
    }
    if let Some((i, k)) = bracket.indexed_iter().find(|(_, v)| !v.is_finite()).map(|(ix, _)| ix) {
        return Err(Error::Numerical {
            iteration: 0,
            message: format!("non-finite membership bracket at ({i}, {k})"),
        });
    }
    Ok(bracket)
}

#[derive(Debug, Clone)]
pub struct MembershipStep<T> {
    pub mu: MembershipMatrix<T>,
    pub gamma: T,
}

/// Membership step with γ from `config.gamma_override` or [`gamma_policy`].
pub fn membership_update<T: Scalar>(
    x: ArrayView2<T>,
    d: ArrayView2<T>,
    mu_prev: &MembershipMatrix<T>,
    config: &OptimizerConfig<T>,
) -> Result<MembershipStep<T>> {
    let bracket = membership_bracket(x, d, mu_prev, config)?;
    let gamma = config
        .gamma_override
        .unwrap_or_else(|| gamma_policy(&bracket, config.gamma_scale));
    Ok(MembershipStep { mu: normalized_exp(&bracket, gamma)?, gamma })
}

pub fn membership_update_with_gamma<T: Scalar>(
    x: ArrayView2<T>,
    d: ArrayView2<T>,
    mu_prev: &MembershipMatrix<T>,
    config: &OptimizerConfig<T>,
    gamma: T,
) -> Result<MembershipMatrix<T>> {
    let bracket = membership_bracket(x, d, mu_prev, config)?;
    normalized_exp(&bracket, gamma)
}

fn normalized_exp<T: Scalar>(bracket: &Array2<T>, gamma: T) -> Result<MembershipMatrix<T>> {
    let mut mu = Array2::zeros(bracket.raw_dim());
    for (mut out, row) in mu.rows_mut().into_iter().zip(bracket.rows()) {
        // Shifting by the row minimum leaves the normalised row unchanged.
        let lo = row.iter().copied().fold(T::infinity(), T::min);
        let mut total = T::zero();
        for (o, &b) in out.iter_mut().zip(row.iter()) {
            *o = (-(b - lo) / gamma).exp();
            total = total + *o;
        }
        out.mapv_inplace(|v| v / total);
    }
    MembershipMatrix::new(mu)
}

#[derive(Debug, Clone)]
pub struct ExemplarStep<T> {
    pub exemplars: ExemplarSet<T>,
    /// Columns whose mass fell below the floor and kept their previous value.
    pub frozen: Vec<usize>,
}

pub fn exemplar_update<T: Scalar>(
    x: ArrayView2<T>,
    mu: &MembershipMatrix<T>,
    d_prev: ArrayView2<T>,
    model: &ClassifierModel<T>,
    config: &OptimizerConfig<T>,
) -> Result<ExemplarStep<T>> {
    check_shapes(x, mu.values().view(), d_prev)?;
    let (n, dim) = x.dim();
    let k = d_prev.nrows();
    let gates = config.gates;
    let mass_floor = T::lit(MASS_FLOOR) * T::from_count(n) / T::from_count(k);
    let masses = mu.masses();

    let mut d_hat = Array2::zeros((k, dim));
    if gates.rep {
        // D̂ = μᵀX, accumulated in sample order.
        for (xi, mi) in x.rows().into_iter().zip(mu.values().rows()) {
            for (mut dk, &w) in d_hat.rows_mut().into_iter().zip(mi.iter()) {
                dk.scaled_add(w, &xi);
            }
        }
    }
    if gates.amb && config.beta != T::zero() {
        let half = T::lit(0.5);
        for (kk, prev) in d_prev.rows().into_iter().enumerate() {
            let point = prev.to_vec();
            let (p_change, p_nochange) = model.probabilities(&point)?;
            for (class, f) in ClassIndex::ALL.into_iter().zip([p_change, p_nochange]) {
                let h = match config.variant {
                    Variant::Early => f.ln() + T::one(),
                    Variant::Surrogate => f - half,
                };
                let grad = model.probability_gradient(&point, class)?;
                for (v, g) in d_hat.row_mut(kk).iter_mut().zip(grad) {
                    *v = *v + config.beta * g * h;
                }
            }
        }
    }

    let mut frozen = Vec::new();
    let mut out = Array2::zeros((k, dim));
    for kk in 0..k {
        if masses[kk] < mass_floor {
            frozen.push(kk);
            out.row_mut(kk).assign(&d_prev.row(kk));
        } else {
            let m = masses[kk];
            out.row_mut(kk).assign(&d_hat.row(kk).mapv(|v| v / m));
        }
    }
    Ok(ExemplarStep { exemplars: ExemplarSet::new(out)?, frozen })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_model(dim: usize) -> ClassifierModel<f64> {
        ClassifierModel {
            weights: vec![0.0; dim],
            bias: 0.0,
            reg_c: 1.0,
            temperature: 1.0,
            trained_on: 0,
            degenerate: false,
        }
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn distance_examples() {
        let d = squared_distance_matrix(array![[0.0, 0.0]].view(), array![[3.0, 4.0]].view()).unwrap();
        assert_eq!(d[[0, 0]], 25.0);
        let x = array![[1.5, -2.0, 0.25]];
        assert_eq!(squared_distance_matrix(x.view(), x.view()).unwrap()[[0, 0]], 0.0);
        assert!(squared_distance_matrix(x.view(), array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn distance_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 5, 3);
        let d = random(&mut rng, 2, 3);
        let got = squared_distance_matrix(x.view(), d.view()).unwrap();
        for i in 0..5 {
            for k in 0..2 {
                let mut s = 0.0;
                for j in 0..3 {
                    let diff = x[[i, j]] - d[[k, j]];
                    s += diff * diff;
                }
                assert_abs_diff_eq!(got[[i, k]], s, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gamma_policy_examples() {
        let zeros = Array2::<f64>::zeros((3, 2));
        assert_eq!(gamma_policy(&zeros, 1.0), GAMMA_FLOOR);
        let c = Array2::from_elem((4, 3), -2.5);
        assert_eq!(gamma_policy(&c, 1.0), 2.5);
        let b = array![[1.0, -3.0], [0.5, 2.0]];
        assert_eq!(gamma_policy(&b, 2.0), 2.0 * gamma_policy(&b, 1.0));
    }

    #[test]
    fn surrogate_terms_vanish_at_uniform_values() {
        let x = array![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [-1.0, 0.5]];
        let mu = Array2::from_elem((4, 2), 0.5);
        let d = array![[0.0, 0.0], [1.0, 1.0]];
        let cfg = OptimizerConfig::new(Variant::Surrogate, 2);
        let t = objective_terms(x.view(), mu.view(), d.view(), &flat_model(2), &cfg, 1.0).unwrap();
        assert_eq!(t.diversity, 0.0);
        assert_eq!(t.ambiguity, 0.0);
    }

    #[test]
    fn objective_rejects_non_stochastic_membership() {
        let x = array![[0.0, 1.0]];
        let d = array![[0.0, 0.0]];
        let cfg = OptimizerConfig::new(Variant::Early, 1);
        let err = objective(x.view(), array![[0.7]].view(), d.view(), &flat_model(2), &cfg, 1.0).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn objective_matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, 4, 2);
        let d = random(&mut rng, 2, 2);
        let raw = Array2::from_shape_fn((4, 2), |_| rng.random_range(0.05..1.0));
        let mu = MembershipMatrix::from_unnormalized(raw).unwrap().into_inner();
        let model = ClassifierModel {
            weights: vec![0.7, -1.2],
            bias: 0.3,
            reg_c: 1.0,
            temperature: 1.0,
            trained_on: 0,
            degenerate: false,
        };
        let gamma = 0.37;
        for variant in [Variant::Early, Variant::Surrogate] {
            let mut cfg = OptimizerConfig::new(variant, 2);
            cfg.alpha = 0.8;
            cfg.beta = 1.3;
            let got = objective(x.view(), mu.view(), d.view(), &model, &cfg, gamma).unwrap();

            let mut expected = 0.0;
            for i in 0..4 {
                for k in 0..2 {
                    let dist = (x[[i, 0]] - d[[k, 0]]).powi(2) + (x[[i, 1]] - d[[k, 1]]).powi(2);
                    expected += mu[[i, k]] * dist + gamma * mu[[i, k]] * mu[[i, k]].ln();
                }
            }
            for k in 0..2 {
                let m = (mu[[0, k]] + mu[[1, k]] + mu[[2, k]] + mu[[3, k]]) / 4.0;
                let s = 0.7 * d[[k, 0]] - 1.2 * d[[k, 1]] + 0.3;
                let p = 1.0 / (1.0 + (-s).exp());
                match variant {
                    Variant::Early => {
                        expected += 0.8 * m * m.ln();
                        expected += 1.3 * (p * p.ln() + (1.0 - p) * (1.0 - p).ln());
                    }
                    Variant::Surrogate => {
                        expected += 0.4 * (m - 0.5).powi(2);
                        expected += 0.65 * ((p - 0.5).powi(2) + (0.5 - p).powi(2));
                    }
                }
            }
            assert_abs_diff_eq!(got, expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn single_exemplar_membership_is_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 6, 2);
        let d = random(&mut rng, 1, 2);
        let prev = MembershipMatrix::new(Array2::ones((6, 1))).unwrap();
        let cfg = OptimizerConfig::new(Variant::Early, 1);
        let step = membership_update(x.view(), d.view(), &prev, &cfg).unwrap();
        assert!(step.mu.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn equidistant_exemplars_give_uniform_row() {
        let x = array![[0.0, 0.0]];
        let d = array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        let prev = MembershipMatrix::new(Array2::from_elem((1, 3), 1.0 / 3.0)).unwrap();
        let cfg = OptimizerConfig::new(Variant::Surrogate, 3).with_gates(Gates { rep: true, div: false, amb: true });
        let step = membership_update(x.view(), d.view(), &prev, &cfg).unwrap();
        for &v in step.mu.values() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn early_bracket_rejects_empty_column() {
        let x = array![[0.0], [1.0]];
        let d = array![[0.0], [1.0]];
        let prev = MembershipMatrix::new(array![[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let cfg = OptimizerConfig::new(Variant::Early, 2);
        assert!(matches!(membership_update(x.view(), d.view(), &prev, &cfg), Err(Error::Numerical { .. })));
    }

    #[test]
    fn exemplar_step_without_ambiguity_is_weighted_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&mut rng, 7, 3);
        let raw = Array2::from_shape_fn((7, 2), |_| rng.random_range(0.05..1.0));
        let mu = MembershipMatrix::from_unnormalized(raw).unwrap();
        let d_prev = random(&mut rng, 2, 3);
        let model = ClassifierModel { weights: vec![1.0, 2.0, -1.0], ..flat_model(3) };
        let cfg = OptimizerConfig::new(Variant::Early, 2).with_gates(Gates { rep: true, div: true, amb: false });
        let step = exemplar_update(x.view(), &mu, d_prev.view(), &model, &cfg).unwrap();
        for k in 0..2 {
            let mass: f64 = (0..7).map(|i| mu.values()[[i, k]]).sum();
            for j in 0..3 {
                let c: f64 = (0..7).map(|i| mu.values()[[i, k]] * x[[i, j]]).sum::<f64>() / mass;
                assert_abs_diff_eq!(step.exemplars.values()[[k, j]], c, epsilon = 1e-12);
            }
        }
        assert!(step.frozen.is_empty());

        // β = 0 with the gate on is the same step.
        let mut cfg0 = OptimizerConfig::new(Variant::Early, 2);
        cfg0.beta = 0.0;
        let step0 = exemplar_update(x.view(), &mu, d_prev.view(), &model, &cfg0).unwrap();
        assert_eq!(step0.exemplars, step.exemplars);
    }

    #[test]
    fn single_exemplar_goes_to_global_centroid() {
        let x = array![[0.0, 0.0], [2.0, 0.0], [1.0, 3.0]];
        let mu = MembershipMatrix::new(Array2::ones((3, 1))).unwrap();
        let mut cfg = OptimizerConfig::new(Variant::Surrogate, 1);
        cfg.beta = 0.0;
        let step = exemplar_update(x.view(), &mu, array![[5.0, 5.0]].view(), &flat_model(2), &cfg).unwrap();
        assert_eq!(step.exemplars.values(), &array![[1.0, 1.0]]);
    }

    #[test]
    fn surrogate_correction_vanishes_on_boundary() {
        let x = array![[0.0, 1.0], [2.0, 1.0], [4.0, -1.0]];
        let mu = MembershipMatrix::new(Array2::ones((3, 1))).unwrap();
        let model = ClassifierModel { weights: vec![1.0, 0.0], ..flat_model(2) };
        let cfg = OptimizerConfig::new(Variant::Surrogate, 1);
        // score((0, 7)) = 0
        let step = exemplar_update(x.view(), &mu, array![[0.0, 7.0]].view(), &model, &cfg).unwrap();
        assert_abs_diff_eq!(step.exemplars.values()[[0, 0]], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(step.exemplars.values()[[0, 1]], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn ambiguity_correction_follows_update_formula() {
        let x = array![[1.0, 0.0], [3.0, 2.0]];
        let mu = MembershipMatrix::new(Array2::ones((2, 1))).unwrap();
        let model = ClassifierModel { weights: vec![0.5, -1.0], bias: 0.2, ..flat_model(2) };
        let prev = array![[1.0, 0.5]];
        let s: f64 = 0.5 - 0.5 + 0.2;
        let p = 1.0 / (1.0 + (-s).exp());
        let dp = p * (1.0 - p);
        for variant in [Variant::Early, Variant::Surrogate] {
            let mut cfg = OptimizerConfig::new(variant, 1);
            cfg.beta = 0.7;
            let step = exemplar_update(x.view(), &mu, prev.view(), &model, &cfg).unwrap();
            let coef = match variant {
                Variant::Early => dp * (p.ln() + 1.0) - dp * ((1.0 - p).ln() + 1.0),
                Variant::Surrogate => dp * (p - 0.5) - dp * ((1.0 - p) - 0.5),
            };
            for (j, w) in [0.5, -1.0].into_iter().enumerate() {
                let expected = (x[[0, j]] + x[[1, j]] + 0.7 * coef * w) / 2.0;
                assert_abs_diff_eq!(step.exemplars.values()[[0, j]], expected, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn light_column_keeps_previous_exemplar() {
        let x = array![[0.0], [1.0], [2.0]];
        let mu = MembershipMatrix::new(array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]).unwrap();
        let cfg = OptimizerConfig::new(Variant::Surrogate, 2);
        let step = exemplar_update(x.view(), &mu, array![[9.0], [-4.0]].view(), &flat_model(1), &cfg).unwrap();
        assert_eq!(step.frozen, vec![1]);
        assert_eq!(step.exemplars.values(), &array![[1.0], [-4.0]]);
    }

    #[test]
    fn hard_membership_reproduces_cluster_means() {
        let x = array![[0.0, 0.0], [2.0, 2.0], [10.0, 0.0], [12.0, 1.0], [11.0, 2.0]];
        let mu = MembershipMatrix::new(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]).unwrap();
        let cfg = OptimizerConfig::new(Variant::Early, 2).with_gates(Gates::REP_ONLY);
        let step = exemplar_update(x.view(), &mu, Array2::zeros((2, 2)).view(), &flat_model(2), &cfg).unwrap();
        assert_eq!(step.exemplars.values(), &array![[1.0, 1.0], [11.0, 1.0]]);
    }
}
