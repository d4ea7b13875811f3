//! Display construction: the baselines and the mapping of learned virtual
//! exemplars onto real, not-yet-displayed training samples.
//!
//! Every strategy draws from the "available" set: `Train` samples that are
//! not in `excluded`, ordered by ascending id. Ties are always broken toward
//! the smaller id.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::dataset::{Pool, SampleId};
use crate::error::{Error, Result};
use crate::optimizer::{ExemplarSet, Variant};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Random,
    Uncertainty,
    Maxmin,
    LearnedEarly,
    LearnedSurrogate,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Random,
        Strategy::Uncertainty,
        Strategy::Maxmin,
        Strategy::LearnedEarly,
        Strategy::LearnedSurrogate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Uncertainty => "uncertainty",
            Strategy::Maxmin => "maxmin",
            Strategy::LearnedEarly => "learned-early",
            Strategy::LearnedSurrogate => "learned-surrogate",
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            Strategy::LearnedEarly => Some(Variant::Early),
            Strategy::LearnedSurrogate => Some(Variant::Surrogate),
            _ => None,
        }
    }

    pub fn learned(variant: Variant) -> Self {
        match variant {
            Variant::Early => Strategy::LearnedEarly,
            Variant::Surrogate => Strategy::LearnedSurrogate,
        }
    }

    pub fn allowed_names() -> String {
        Self::ALL.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`; allowed: {}", Self::allowed_names())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisplayOrigin {
    VirtualEarly,
    VirtualSurrogate,
    Random,
    Uncertainty,
    Maxmin,
}

impl From<Strategy> for DisplayOrigin {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Random => DisplayOrigin::Random,
            Strategy::Uncertainty => DisplayOrigin::Uncertainty,
            Strategy::Maxmin => DisplayOrigin::Maxmin,
            Strategy::LearnedEarly => DisplayOrigin::VirtualEarly,
            Strategy::LearnedSurrogate => DisplayOrigin::VirtualSurrogate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Display {
    pub sample_ids: Vec<SampleId>,
    pub origin: DisplayOrigin,
}

impl Display {
    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }
}

/// `Train` ids not in `excluded`, ascending.
pub fn available_ids<T: Scalar>(pool: &Pool<T>, excluded: &HashSet<SampleId>) -> Vec<SampleId> {
    let mut ids: Vec<SampleId> = pool.train_ids().into_iter().filter(|id| !excluded.contains(id)).collect();
    ids.sort_unstable();
    ids
}

fn ensure_available(available: usize, k: usize) -> Result<()> {
    if available < k {
        Err(Error::InvalidState(format!("only {available} samples available for a display of {k}")))
    } else {
        Ok(())
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&u, &v)| acc + (u - v) * (u - v))
}

pub fn initial_display<T: Scalar>(pool: &Pool<T>, k: usize, seed: u64) -> Result<Display> {
    random_display(pool, &HashSet::new(), k, seed)
}

pub fn random_display<T: Scalar>(pool: &Pool<T>, excluded: &HashSet<SampleId>, k: usize, seed: u64) -> Result<Display> {
    let mut ids = available_ids(pool, excluded);
    ensure_available(ids.len(), k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids.truncate(k);
    Ok(Display { sample_ids: ids, origin: DisplayOrigin::Random })
}

/// The `k` available samples whose decision values are closest to zero.
pub fn uncertainty_display<T: Scalar>(
    pool: &Pool<T>,
    model: &ClassifierModel<T>,
    excluded: &HashSet<SampleId>,
    k: usize,
) -> Result<Display> {
    let ids = available_ids(pool, excluded);
    ensure_available(ids.len(), k)?;
    let mut scored = ids
        .into_iter()
        .map(|id| Ok((model.score(pool.features(id)?)?.abs(), id)))
        .collect::<Result<Vec<(T, SampleId)>>>()?;
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    Ok(Display {
        sample_ids: scored.into_iter().take(k).map(|(_, id)| id).collect(),
        origin: DisplayOrigin::Uncertainty,
    })
}

/// Greedy farthest-point selection against the labelled set and the samples
/// already picked. Falls back to a random display when nothing is labelled.
pub fn maxmin_display<T: Scalar>(
    pool: &Pool<T>,
    labeled: &[SampleId],
    excluded: &HashSet<SampleId>,
    k: usize,
    seed: u64,
) -> Result<Display> {
    if labeled.is_empty() {
        let mut d = random_display(pool, excluded, k, seed)?;
        d.origin = DisplayOrigin::Maxmin;
        return Ok(d);
    }
    let ids = available_ids(pool, excluded);
    ensure_available(ids.len(), k)?;
    let feats = ids.iter().map(|&id| pool.features(id)).collect::<Result<Vec<_>>>()?;
    let anchors = labeled.iter().map(|&id| pool.features(id)).collect::<Result<Vec<_>>>()?;

    let mut min_dist: Vec<T> = feats
        .iter()
        .map(|x| anchors.iter().map(|a| sq_dist(x, a)).fold(T::infinity(), T::min))
        .collect();
    let mut taken = vec![false; ids.len()];
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for (j, &dist) in min_dist.iter().enumerate() {
            if taken[j] {
                continue;
            }
            // Strict comparison keeps the smallest id on ties.
            if best.is_none_or(|b| dist > min_dist[b]) {
                best = Some(j);
            }
        }
        let b = best.expect("availability checked");
        taken[b] = true;
        picked.push(ids[b]);
        for (j, x) in feats.iter().enumerate() {
            if !taken[j] {
                min_dist[j] = min_dist[j].min(sq_dist(x, feats[b]));
            }
        }
    }
    Ok(Display { sample_ids: picked, origin: DisplayOrigin::Maxmin })
}

/// Assigns each exemplar a distinct nearest available sample.
///
/// Repeatedly takes the unassigned exemplar whose nearest available sample is
/// closest (smaller exemplar index on ties), gives it that sample (smaller id
/// on ties) and removes the sample. Item `k` of the display belongs to
/// exemplar `k`.
pub fn map_exemplars_to_pool<T: Scalar>(
    exemplars: &ExemplarSet<T>,
    pool: &Pool<T>,
    excluded: &HashSet<SampleId>,
    origin: DisplayOrigin,
) -> Result<Display> {
    let ids = available_ids(pool, excluded);
    let k = exemplars.len();
    ensure_available(ids.len(), k)?;
    let feats = ids.iter().map(|&id| pool.features(id)).collect::<Result<Vec<_>>>()?;
    for x in &feats {
        Error::check_dim(exemplars.values().ncols(), x.len())?;
    }
    let rows: Vec<Vec<T>> = exemplars.values().rows().into_iter().map(|r| r.to_vec()).collect();

    let mut taken = vec![false; ids.len()];
    let mut assigned: Vec<Option<SampleId>> = vec![None; k];
    // Nearest available candidate per exemplar, refreshed when claimed.
    let nearest = |row: &[T], taken: &[bool]| -> (T, usize) {
        let mut best = (T::infinity(), usize::MAX);
        for (j, x) in feats.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let dist = sq_dist(row, x);
            if dist < best.0 || best.1 == usize::MAX {
                best = (dist, j);
            }
        }
        best
    };
    let mut cand: Vec<(T, usize)> = rows.iter().map(|r| nearest(r, &taken)).collect();

    for _ in 0..k {
        let mut pick: Option<usize> = None;
        for kk in 0..k {
            if assigned[kk].is_some() {
                continue;
            }
            if pick.is_none_or(|p| cand[kk].0 < cand[p].0) {
                pick = Some(kk);
            }
        }
        let kk = pick.expect("k rounds for k exemplars");
        let j = cand[kk].1;
        taken[j] = true;
        assigned[kk] = Some(ids[j]);
        for other in 0..k {
            if assigned[other].is_none() && cand[other].1 == j {
                cand[other] = nearest(&rows[other], &taken);
            }
        }
    }
    Ok(Display {
        sample_ids: assigned.into_iter().map(|a| a.expect("all assigned")).collect(),
        origin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Label, Sample};
    use ndarray::array;

    fn line_pool(xs: &[f64]) -> Pool<f64> {
        let samples = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| Sample::new(i as SampleId, vec![x], Some(Label::NoChange)))
            .collect();
        Pool::new(samples, 1).unwrap()
    }

    fn model(w: f64, b: f64) -> ClassifierModel<f64> {
        ClassifierModel { weights: vec![w], bias: b, reg_c: 1.0, temperature: 1.0, trained_on: 0, degenerate: false }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        let err = "foo".parse::<Strategy>().unwrap_err().to_string();
        assert!(err.contains("learned-surrogate"));
    }

    #[test]
    fn initial_display_is_distinct_and_seeded() {
        let pool = line_pool(&(0..100).map(f64::from).collect::<Vec<_>>());
        let a = initial_display(&pool, 16, 3).unwrap();
        let b = initial_display(&pool, 16, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sample_ids.iter().collect::<HashSet<_>>().len(), 16);
        let all = initial_display(&pool, 100, 3).unwrap();
        assert_eq!(all.sample_ids.iter().collect::<HashSet<_>>().len(), 100);
        assert!(initial_display(&pool, 101, 3).is_err());
    }

    #[test]
    fn random_display_respects_exclusions() {
        let pool = line_pool(&[0.0, 1.0, 2.0, 3.0]);
        let excluded: HashSet<_> = [0, 2].into_iter().collect();
        let d = random_display(&pool, &excluded, 2, 1).unwrap();
        let got: HashSet<_> = d.sample_ids.into_iter().collect();
        assert_eq!(got, [1, 3].into_iter().collect());
        assert!(random_display(&pool, &excluded, 3, 1).is_err());
    }

    #[test]
    fn uncertainty_picks_smallest_margin() {
        let pool = line_pool(&[-0.1, 0.5, -3.0]);
        let d = uncertainty_display(&pool, &model(1.0, 0.0), &HashSet::new(), 1).unwrap();
        assert_eq!(d.sample_ids, vec![0]);
        let constant = model(0.0, 1.0);
        let d = uncertainty_display(&pool, &constant, &HashSet::new(), 2).unwrap();
        assert_eq!(d.sample_ids, vec![0, 1]);
    }

    #[test]
    fn maxmin_examples() {
        let pool = line_pool(&[0.0, 1.0, 10.0]);
        let excluded: HashSet<_> = [0].into_iter().collect();
        assert_eq!(maxmin_display(&pool, &[0], &excluded, 1, 0).unwrap().sample_ids, vec![2]);
        assert_eq!(maxmin_display(&pool, &[0], &excluded, 2, 0).unwrap().sample_ids, vec![2, 1]);
        let fallback = maxmin_display(&pool, &[], &HashSet::new(), 2, 0).unwrap();
        assert_eq!(fallback.len(), 2);
    }

    #[test]
    fn exact_exemplar_claims_its_sample() {
        let pool = line_pool(&[0.0, 1.0, 2.5, 7.0]);
        let ex = ExemplarSet::new(array![[2.5]]).unwrap();
        let d = map_exemplars_to_pool(&ex, &pool, &HashSet::new(), DisplayOrigin::VirtualSurrogate).unwrap();
        assert_eq!(d.sample_ids, vec![2]);
    }

    #[test]
    fn collision_goes_to_closer_exemplar() {
        let pool = line_pool(&[0.0, 1.0, 5.0]);
        // Both exemplars are nearest to sample 1; the second is closer.
        let ex = ExemplarSet::new(array![[1.4], [1.1]]).unwrap();
        let d = map_exemplars_to_pool(&ex, &pool, &HashSet::new(), DisplayOrigin::VirtualEarly).unwrap();
        assert_eq!(d.sample_ids, vec![0, 1]);
        let excluded: HashSet<_> = [0, 1].into_iter().collect();
        assert!(map_exemplars_to_pool(&ex, &pool, &excluded, DisplayOrigin::VirtualEarly).is_err());
    }
}
