use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::updates::{exemplar_update, membership_update, objective};
use super::{ExemplarSet, MembershipMatrix, OptimizerConfig};
use crate::classifier::ClassifierModel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrajectoryPoint<T> {
    pub iteration: usize,
    pub objective: T,
    pub step_l1: T,
    pub gamma: T,
    pub frozen_exemplars: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult<T> {
    pub mu: MembershipMatrix<T>,
    pub exemplars: ExemplarSet<T>,
    pub iterations_used: usize,
    pub trajectory: Vec<TrajectoryPoint<T>>,
    pub converged: bool,
}

/// Seeded starting point: `K` distinct rows of `x` as exemplars and a
/// row-normalised uniform(0, 1) membership.
pub fn initial_state<T: Scalar>(x: ArrayView2<T>, k: usize, seed: u64) -> Result<(MembershipMatrix<T>, ExemplarSet<T>)> {
    let n = x.nrows();
    if k == 0 || n < k {
        return Err(Error::invalid(format!("need n >= K >= 1, got n={n}, K={k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = sample(&mut rng, n, k);
    let mut d = Array2::zeros((k, x.ncols()));
    for (kk, i) in rows.iter().enumerate() {
        d.row_mut(kk).assign(&x.row(i));
    }
    // Strictly positive draws keep every row normalisable.
    let raw = Array2::from_shape_fn((n, k), |_| T::lit(rng.random_range(f64::EPSILON..1.0)));
    Ok((MembershipMatrix::from_unnormalized(raw)?, ExemplarSet::new(d)?))
}

/// Alternates membership and exemplar steps from the seeded initial state.
pub fn solve_display<T: Scalar>(
    x: ArrayView2<T>,
    model: &ClassifierModel<T>,
    config: &OptimizerConfig<T>,
) -> Result<SolveResult<T>> {
    config.validate()?;
    let init = initial_state(x, config.k, config.seed)?;
    solve_display_from(x, model, config, init)
}

pub fn solve_display_from<T: Scalar>(
    x: ArrayView2<T>,
    model: &ClassifierModel<T>,
    config: &OptimizerConfig<T>,
    init: (MembershipMatrix<T>, ExemplarSet<T>),
) -> Result<SolveResult<T>> {
    config.validate()?;
    let (n, k) = (x.nrows(), config.k);
    if n < k {
        return Err(Error::invalid(format!("need n >= K, got n={n}, K={k}")));
    }
    let (mut mu, mut d) = init;
    Error::check_dim(n, mu.values().nrows())?;
    Error::check_dim(k, mu.values().ncols())?;
    Error::check_dim(k, d.len())?;
    Error::check_dim(x.ncols(), d.values().ncols())?;

    let at = |iteration: usize| {
        move |e: Error| match e {
            Error::Numerical { message, .. } => Error::Numerical { iteration, message },
            other => other,
        }
    };

    let mut trajectory = Vec::new();
    let mut converged = false;
    for iteration in 1..=config.max_iterations {
        let step = membership_update(x, d.values().view(), &mu, config).map_err(at(iteration))?;
        let ex = exemplar_update(x, &step.mu, d.values().view(), model, config).map_err(at(iteration))?;

        let step_l1 = l1_distance(step.mu.values(), mu.values()) + l1_distance(ex.exemplars.values(), d.values());
        if !step_l1.is_finite() {
            return Err(Error::Numerical { iteration, message: "non-finite step".into() });
        }
        let value = objective(x, step.mu.values().view(), ex.exemplars.values().view(), model, config, step.gamma)?;
        trajectory.push(TrajectoryPoint {
            iteration,
            objective: value,
            step_l1,
            gamma: step.gamma,
            frozen_exemplars: ex.frozen,
        });
        mu = step.mu;
        d = ex.exemplars;
        if step_l1 < config.epsilon {
            converged = true;
            break;
        }
    }

    Ok(SolveResult {
        mu,
        exemplars: d,
        iterations_used: trajectory.len(),
        trajectory,
        converged,
    })
}

fn l1_distance<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (&u, &v)| acc + (u - v).abs())
}

/// CSV `iter,objective,step_l1,gamma`, one row per iteration.
pub fn write_trajectory_csv<T: Scalar, W: Write>(trajectory: &[TrajectoryPoint<T>], mut out: W) -> Result<()> {
    writeln!(out, "iter,objective,step_l1,gamma")?;
    for p in trajectory {
        writeln!(out, "{},{},{},{}", p.iteration, p.objective, p.step_l1, p.gamma)?;
    }
    Ok(())
}
