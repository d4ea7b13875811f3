//! The interactive loop: label the pending display, retrain on every label
//! gathered so far, record the evaluation EER, and build the next display.
//!
//! [`SessionState`] is a value: [`SessionState::submit`] and
//! [`SessionState::run_iteration`] return a new state and leave the input
//! untouched, so a rejected oracle answer never corrupts a session. All
//! randomness is derived from `(config.seed, t)`, which makes a resumed
//! session replay exactly like an uninterrupted one.

use std::collections::HashSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::classifier::{train, ClassifierModel, TrainConfig};
use crate::dataset::{Label, Pool, SampleId};
use crate::display::{
    initial_display, map_exemplars_to_pool, maxmin_display, random_display, uncertainty_display, Display,
    Strategy,
};
use crate::error::{Error, Result};
use crate::evaluation::{eer, sampling_percent, MetricRecord};
use crate::optimizer::{solve_display, Gates, OptimizerConfig, TrajectoryPoint, Variant};
use crate::scalar::Scalar;

/// Label source for displayed samples. Answers are raw integers so that
/// malformed responses can be rejected.
pub trait Oracle {
    fn query(&mut self, ids: &[SampleId]) -> Result<Vec<i64>>;
}

impl<F> Oracle for F
where
    F: FnMut(&[SampleId]) -> Vec<i64>,
{
    fn query(&mut self, ids: &[SampleId]) -> Result<Vec<i64>> {
        Ok(self(ids))
    }
}

/// Answers from the training split's ground truth.
pub struct GroundTruthOracle<'a, T> {
    pool: &'a Pool<T>,
}

impl<'a, T: Scalar> GroundTruthOracle<'a, T> {
    pub fn new(pool: &'a Pool<T>) -> Self {
        GroundTruthOracle { pool }
    }
}

impl<T: Scalar> Oracle for GroundTruthOracle<'_, T> {
    fn query(&mut self, ids: &[SampleId]) -> Result<Vec<i64>> {
        ids.iter()
            .map(|&id| {
                self.pool
                    .train_ground_truth(id)?
                    .map(|l| i64::from(l.sign()))
                    .ok_or_else(|| Error::InvalidState(format!("sample {id} has no ground-truth label")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SessionConfig<T> {
    pub strategy: Strategy,
    pub k: usize,
    pub iterations: usize,
    pub seed: u64,
    pub classifier: TrainConfig<T>,
    /// Hyperparameters for learned strategies. `k`, `variant` and `seed` are
    /// overwritten per iteration.
    pub optimizer: OptimizerConfig<T>,
    /// Compute the EER on the evaluation split after every iteration.
    pub evaluate: bool,
    /// Keep the optimizer trajectory of every learned display.
    pub keep_trajectories: bool,
}

impl<T: Scalar> SessionConfig<T> {
    /// K = 16, T = 10 and default hyperparameters.
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        let k = 16;
        SessionConfig {
            strategy,
            k,
            iterations: 10,
            seed,
            classifier: TrainConfig::default(),
            optimizer: OptimizerConfig::new(strategy.variant().unwrap_or(Variant::Surrogate), k),
            evaluate: true,
            keep_trajectories: false,
        }
    }

    /// Sets K and resets α, β to 1/K.
    pub fn with_k(mut self, k: usize) -> Self {
        let gates = self.optimizer.gates;
        self.k = k;
        self.optimizer = OptimizerConfig { gates, ..OptimizerConfig::new(self.optimizer.variant, k) };
        self
    }

    pub fn with_iterations(mut self, t: usize) -> Self {
        self.iterations = t;
        self
    }

    pub fn with_gates(mut self, gates: Gates) -> Self {
        self.optimizer.gates = gates;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.iterations == 0 {
            return Err(Error::invalid("K and T must be at least 1"));
        }
        if self.strategy.variant().is_some() {
            let mut opt = self.optimizer.clone();
            opt.k = self.k;
            opt.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDisplay {
    pub display: Display,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SolveSummary<T> {
    /// Iteration `t` whose classifier shaped this display.
    pub after_iteration: usize,
    pub iterations_used: usize,
    pub converged: bool,
    pub trajectory: Vec<TrajectoryPoint<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SessionState<T> {
    pub t: usize,
    pub config: SessionConfig<T>,
    pub history: Vec<LabeledDisplay>,
    /// Display awaiting labels; `None` once the session is complete.
    pub pending: Option<Display>,
    pub model: Option<ClassifierModel<T>>,
    pub metrics: Vec<MetricRecord>,
    pub solves: Vec<SolveSummary<T>>,
}

// Independent seed streams.
const STREAM_DISPLAY: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_OPTIMIZER: u64 = 3;

/// SplitMix64 finaliser over the base seed, iteration and stream.
pub fn derive_seed(base: u64, t: usize, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add((t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<T: Scalar> SessionState<T> {
    /// Validates the budget and issues the random first display.
    pub fn start(pool: &Pool<T>, config: SessionConfig<T>) -> Result<Self> {
        config.validate()?;
        let train = pool.train_ids().len();
        let budget = config.iterations * config.k;
        if budget > train {
            return Err(Error::invalid(format!(
                "budget T·K = {budget} exceeds the {train} training samples"
            )));
        }
        let first = initial_display(pool, config.k, derive_seed(config.seed, 0, STREAM_DISPLAY))?;
        Ok(SessionState {
            t: 0,
            config,
            history: Vec::new(),
            pending: Some(first),
            model: None,
            metrics: Vec::new(),
            solves: Vec::new(),
        })
    }

    pub fn is_complete(&self) -> bool {
        self.pending.is_none()
    }

    pub fn labeled_ids(&self) -> Vec<SampleId> {
        self.history.iter().flat_map(|h| h.display.sample_ids.iter().copied()).collect()
    }

    pub fn label_count(&self) -> usize {
        self.history.iter().map(|h| h.labels.len()).sum()
    }

    /// Queries the oracle on the pending display and applies its answer.
    pub fn run_iteration(&self, oracle: &mut dyn Oracle, pool: &Pool<T>) -> Result<Self> {
        let pending = self
            .pending
            .as_ref()
            .ok_or_else(|| Error::InvalidState("session is complete".into()))?;
        let answer = oracle.query(&pending.sample_ids)?;
        self.submit(&answer, pool)
    }

    /// Applies labels aligned with the pending display's ids.
    pub fn submit(&self, raw_labels: &[i64], pool: &Pool<T>) -> Result<Self> {
        let pending = self
            .pending
            .as_ref()
            .ok_or_else(|| Error::InvalidState("session is complete".into()))?;
        if raw_labels.len() != pending.len() {
            return Err(Error::Protocol(format!(
                "expected {} labels, got {}",
                pending.len(),
                raw_labels.len()
            )));
        }
        let labels = raw_labels
            .iter()
            .map(|&v| Label::from_sign(v).map_err(|e| Error::Protocol(e.to_string())))
            .collect::<Result<Vec<_>>>()?;

        let mut next = self.clone();
        next.history.push(LabeledDisplay { display: pending.clone(), labels });
        let t = self.t;
        let cfg = &self.config;

        let labeled = next.training_set(pool)?;
        let model = train(&labeled, &cfg.classifier, derive_seed(cfg.seed, t, STREAM_TRAIN))?;

        let eer_percent = if cfg.evaluate { evaluation_eer(&model, pool)? } else { None };
        next.metrics.push(MetricRecord {
            iteration: t + 1,
            sampling_percent: sampling_percent(t + 1, cfg.k, pool.len()),
            eer_percent,
        });

        next.pending = if t + 1 < cfg.iterations {
            let (display, summary) = next.next_display(&model, pool)?;
            if let Some(s) = summary {
                next.solves.push(s);
            }
            Some(display)
        } else {
            None
        };
        next.model = Some(model);
        next.t = t + 1;
        Ok(next)
    }

    fn training_set<'p>(&self, pool: &'p Pool<T>) -> Result<Vec<(&'p [T], Label)>> {
        let mut out = Vec::with_capacity(self.label_count());
        for h in &self.history {
            for (&id, &label) in h.display.sample_ids.iter().zip(&h.labels) {
                out.push((pool.features(id)?, label));
            }
        }
        Ok(out)
    }

    fn next_display(&self, model: &ClassifierModel<T>, pool: &Pool<T>) -> Result<(Display, Option<SolveSummary<T>>)> {
        let cfg = &self.config;
        let labeled = self.labeled_ids();
        let excluded: HashSet<SampleId> = labeled.iter().copied().collect();
        let seed = derive_seed(cfg.seed, self.t, STREAM_DISPLAY);
        let display = match cfg.strategy {
            Strategy::Random => random_display(pool, &excluded, cfg.k, seed)?,
            Strategy::Uncertainty => uncertainty_display(pool, model, &excluded, cfg.k)?,
            Strategy::Maxmin => maxmin_display(pool, &labeled, &excluded, cfg.k, seed)?,
            Strategy::LearnedEarly | Strategy::LearnedSurrogate => {
                let variant = cfg.strategy.variant().expect("learned strategy");
                let ids = crate::display::available_ids(pool, &excluded);
                let mut x = Array2::zeros((ids.len(), pool.dim()));
                for (mut row, &id) in x.rows_mut().into_iter().zip(&ids) {
                    row.assign(&ndarray::ArrayView1::from(pool.features(id)?));
                }
                let opt = OptimizerConfig {
                    variant,
                    k: cfg.k,
                    seed: derive_seed(cfg.seed, self.t, STREAM_OPTIMIZER),
                    ..cfg.optimizer.clone()
                };
                let result = solve_display(x.view(), model, &opt)?;
                let display = map_exemplars_to_pool(&result.exemplars, pool, &excluded, cfg.strategy.into())?;
                let summary = SolveSummary {
                    after_iteration: self.t + 1,
                    iterations_used: result.iterations_used,
                    converged: result.converged,
                    trajectory: if cfg.keep_trajectories { result.trajectory } else { Vec::new() },
                };
                return Ok((display, Some(summary)));
            }
        };
        Ok((display, None))
    }
}

/// EER of `model` on the labelled evaluation samples, if both classes occur.
pub fn evaluation_eer<T: Scalar>(model: &ClassifierModel<T>, pool: &Pool<T>) -> Result<Option<f64>> {
    let (features, labels) = pool.eval_ground_truth();
    let has_pos = labels.iter().any(|l| l.is_positive());
    let has_neg = labels.iter().any(|l| !l.is_positive());
    if !(has_pos && has_neg) {
        return Ok(None);
    }
    let scores = features.iter().map(|x| model.score(x)).collect::<Result<Vec<T>>>()?;
    eer(&scores, &labels).map(Some)
}

/// Runs `config.iterations` rounds from the initial random display.
pub fn run_session<T: Scalar>(pool: &Pool<T>, config: SessionConfig<T>, oracle: &mut dyn Oracle) -> Result<SessionState<T>> {
    let mut state = SessionState::start(pool, config)?;
    while !state.is_complete() {
        state = state.run_iteration(oracle, pool)?;
    }
    Ok(state)
}

/// Trains on every labelled training sample and reports the evaluation EER.
pub fn fully_supervised_eer<T: Scalar>(pool: &Pool<T>, config: &TrainConfig<T>, seed: u64) -> Result<Option<f64>> {
    let mut labeled = Vec::new();
    for id in pool.train_ids() {
        if let Some(label) = pool.train_ground_truth(id)? {
            labeled.push((pool.features(id)?, label));
        }
    }
    let model = train(&labeled, config, seed)?;
    evaluation_eer(&model, pool)
}
