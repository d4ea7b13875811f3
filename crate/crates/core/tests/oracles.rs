//! Brute-force and closed-form oracles checked against the library.

use std::collections::HashSet;

use frugal_core::classifier::{train, ClassIndex, ClassifierModel, TrainConfig};
use frugal_core::dataset::{Label, Pool, Sample, SampleId};
use frugal_core::display::{map_exemplars_to_pool, maxmin_display, uncertainty_display};
use frugal_core::evaluation::eer;
use frugal_core::optimizer::{
    exemplar_update, initial_state, membership_update, objective, solve_display, solve_display_from, ExemplarSet,
    MembershipMatrix, OptimizerConfig,
};
use frugal_core::{DisplayOrigin, Gates, Variant};
use ndarray::Array2;
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

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize, spread: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-spread..spread))
}

fn sqd(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn entropy_objective(x: &Array2<f64>, mu: &Array2<f64>, d: &Array2<f64>, gamma: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..x.nrows() {
        for k in 0..d.nrows() {
            let m = mu[[i, k]];
            total += m * sqd(x.row(i).as_slice().unwrap(), d.row(k).as_slice().unwrap());
            if m > 0.0 {
                total += gamma * m * m.ln();
            }
        }
    }
    total
}

/// Plain entropy-regularised soft k-means at a fixed temperature.
fn soft_kmeans(x: &Array2<f64>, mut d: Array2<f64>, gamma: f64, iters: usize) -> (Array2<f64>, Array2<f64>) {
    let (n, k) = (x.nrows(), d.nrows());
    let mut mu = Array2::zeros((n, k));
    for _ in 0..iters {
        for i in 0..n {
            let dist: Vec<f64> = (0..k)
                .map(|kk| sqd(x.row(i).as_slice().unwrap(), d.row(kk).as_slice().unwrap()))
                .collect();
            let lo = dist.iter().cloned().fold(f64::INFINITY, f64::min);
            let w: Vec<f64> = dist.iter().map(|v| (-(v - lo) / gamma).exp()).collect();
            let s: f64 = w.iter().sum();
            for kk in 0..k {
                mu[[i, kk]] = w[kk] / s;
            }
        }
        for kk in 0..k {
            let mass: f64 = (0..n).map(|i| mu[[i, kk]]).sum();
            for j in 0..x.ncols() {
                d[[kk, j]] = (0..n).map(|i| mu[[i, kk]] * x[[i, j]]).sum::<f64>() / mass;
            }
        }
    }
    (mu, d)
}

#[test]
fn zero_weights_reduce_to_soft_kmeans() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let centers = [[0.0, 0.0], [5.0, 1.0], [1.0, 6.0]];
    let x = Array2::from_shape_fn((30, 2), |(i, j)| centers[i % 3][j] + rng.random_range(-1.5..1.5));
    let gamma = 0.8;
    for variant in [Variant::Early, Variant::Surrogate] {
        let mut cfg = OptimizerConfig::new(variant, 3).with_seed(4);
        cfg.alpha = 0.0;
        cfg.beta = 0.0;
        cfg.gamma_override = Some(gamma);
        cfg.epsilon = 1e-12;
        cfg.max_iterations = 5000;
        let init = initial_state(x.view(), 3, 4).unwrap();
        let d0 = init.1.values().clone();
        let r = solve_display_from(x.view(), &flat_model(2), &cfg, init).unwrap();
        assert!(r.converged);
        let (mu_o, d_o) = soft_kmeans(&x, d0, gamma, 5000);
        let ours = entropy_objective(&x, r.mu.values(), r.exemplars.values(), gamma);
        let oracle = entropy_objective(&x, &mu_o, &d_o, gamma);
        assert!((ours - oracle).abs() <= 1e-6, "{ours} vs {oracle}");
    }
}

#[test]
fn low_temperature_gives_hard_assignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_points(&mut rng, 200, 2, 10.0);
    let mut cfg = OptimizerConfig::new(Variant::Surrogate, 4).with_gates(Gates::REP_ONLY).with_seed(2);
    cfg.gamma_scale = 1e-3;
    let r = solve_display(x.view(), &flat_model(2), &cfg).unwrap();
    let arg = r.mu.argmax_rows();
    let d = r.exemplars.values();
    let agree = (0..x.nrows())
        .filter(|&i| {
            let xi = x.row(i).to_vec();
            let near = (0..4)
                .min_by(|&a, &b| {
                    sqd(&xi, d.row(a).as_slice().unwrap()).total_cmp(&sqd(&xi, d.row(b).as_slice().unwrap()))
                })
                .unwrap();
            near == arg[i]
        })
        .count();
    assert!(agree as f64 >= 0.99 * x.nrows() as f64, "{agree}/200");
}

/// Per-row objective of the membership step with diversity linearised at the
/// previous masses.
fn row_subproblem(dist: &[f64], lin: &[f64], gamma: f64, row: &[f64]) -> f64 {
    row.iter()
        .zip(dist.iter().zip(lin))
        .map(|(&m, (&dd, &l))| m * (dd + l) + if m > 0.0 { gamma * m * m.ln() } else { 0.0 })
        .sum()
}

fn grid_minimum(dist: &[f64], lin: &[f64], gamma: f64, step: f64) -> f64 {
    let steps = (1.0 / step).round() as usize;
    let mut best = f64::INFINITY;
    match dist.len() {
        1 => best = row_subproblem(dist, lin, gamma, &[1.0]),
        2 => {
            for a in 0..=steps {
                let p = a as f64 * step;
                best = best.min(row_subproblem(dist, lin, gamma, &[p, 1.0 - p]));
            }
        }
        3 => {
            for a in 0..=steps {
                for b in 0..=(steps - a) {
                    let (p, q) = (a as f64 * step, b as f64 * step);
                    best = best.min(row_subproblem(dist, lin, gamma, &[p, q, (1.0 - p - q).max(0.0)]));
                }
            }
        }
        _ => unreachable!(),
    }
    best
}

#[test]
fn membership_step_beats_coarse_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for inst in 0..12 {
        let n = rng.random_range(3..8);
        let k = rng.random_range(1..=3);
        let variant = if inst % 2 == 0 { Variant::Early } else { Variant::Surrogate };
        let gates = Gates { rep: true, div: inst % 3 != 0, amb: inst % 4 == 0 };
        let x = random_points(&mut rng, n, 2, 2.0);
        let d = random_points(&mut rng, k, 2, 2.0);
        let raw = Array2::from_shape_fn((n, k), |_| rng.random_range(0.05..1.0));
        let prev = MembershipMatrix::from_unnormalized(raw).unwrap();
        let mut cfg = OptimizerConfig::new(variant, k).with_gates(gates);
        cfg.alpha = 0.5;
        let step = membership_update(x.view(), d.view(), &prev, &cfg).unwrap();
        let masses: Vec<f64> = prev.masses().iter().map(|s| s / n as f64).collect();
        let lin: Vec<f64> = masses
            .iter()
            .map(|&m| {
                if !gates.div {
                    return 0.0;
                }
                let g = match variant {
                    Variant::Early => m.ln() + 1.0,
                    Variant::Surrogate => m - 1.0 / k as f64,
                };
                cfg.alpha / n as f64 * g
            })
            .collect();
        for i in 0..n {
            let dist: Vec<f64> = (0..k)
                .map(|kk| sqd(x.row(i).as_slice().unwrap(), d.row(kk).as_slice().unwrap()))
                .collect();
            let ours = row_subproblem(&dist, &lin, step.gamma, step.mu.values().row(i).as_slice().unwrap());
            let grid = grid_minimum(&dist, &lin, step.gamma, 1e-2);
            assert!(ours <= grid + 1e-9, "instance {inst} row {i}: {ours} > {grid}");
        }
    }
}

#[test]
fn alternation_never_increases_objective_without_ambiguity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let patterns = [
        Gates { rep: true, div: false, amb: false },
        Gates { rep: false, div: true, amb: false },
        Gates { rep: true, div: true, amb: false },
    ];
    for inst in 0..12 {
        let n = rng.random_range(6..25);
        let k = rng.random_range(2..5);
        let variant = if inst % 2 == 0 { Variant::Early } else { Variant::Surrogate };
        let x = random_points(&mut rng, n, 3, 3.0);
        let model = ClassifierModel { weights: vec![0.5, -1.0, 0.2], bias: 0.1, ..flat_model(3) };
        let mut cfg = OptimizerConfig::new(variant, k).with_gates(patterns[inst % 3]).with_seed(inst as u64);
        let gamma = 0.5;
        cfg.gamma_override = Some(gamma);
        let (mut mu, mut d) = initial_state(x.view(), k, inst as u64).unwrap();
        let mut prev = objective(x.view(), mu.values().view(), d.values().view(), &model, &cfg, gamma).unwrap();
        for _ in 0..30 {
            let step = membership_update(x.view(), d.values().view(), &mu, &cfg).unwrap();
            let ex = exemplar_update(x.view(), &step.mu, d.values().view(), &model, &cfg).unwrap();
            mu = step.mu;
            d = ex.exemplars;
            let now = objective(x.view(), mu.values().view(), d.values().view(), &model, &cfg, gamma).unwrap();
            assert!(now <= prev + 1e-10, "instance {inst}: {prev} -> {now}");
            prev = now;
        }
    }
}

#[test]
fn probability_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_points(&mut rng, 40, 4, 2.0);
    let labeled: Vec<(&[f64], Label)> = x
        .rows()
        .into_iter()
        .map(|r| {
            let s = r[0] + 0.5 * r[1] - 0.3;
            (r.to_slice().unwrap(), if s > 0.0 { Label::Change } else { Label::NoChange })
        })
        .collect();
    let model = train(&labeled, &TrainConfig::default(), 1).unwrap();
    let h = 1e-6;
    for _ in 0..10 {
        let p: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
        for (c, class) in ClassIndex::ALL.into_iter().enumerate() {
            let g = model.probability_gradient(&p, class).unwrap();
            for j in 0..4 {
                let (mut a, mut b) = (p.clone(), p.clone());
                a[j] += h;
                b[j] -= h;
                let pa = model.probabilities(&a).unwrap();
                let pb = model.probabilities(&b).unwrap();
                let (fa, fb) = if c == 0 { (pa.0, pb.0) } else { (pa.1, pb.1) };
                let fd = (fa - fb) / (2.0 * h);
                assert!((g[j] - fd).abs() <= 1e-5 * g[j].abs().max(1e-8), "{} vs {fd}", g[j]);
            }
        }
    }
}

/// Enumerates thresholds one by one and counts errors directly.
fn brute_force_eer(scores: &[f64], labels: &[Label]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let pos = labels.iter().filter(|l| l.is_positive()).count() as f64;
    let neg = labels.len() as f64 - pos;
    let rates: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&th| {
            let mut fp = 0.0;
            let mut fn_ = 0.0;
            for (s, l) in scores.iter().zip(labels) {
                if l.is_positive() && *s < th {
                    fn_ += 1.0;
                }
                if !l.is_positive() && *s >= th {
                    fp += 1.0;
                }
            }
            (fp / neg, fn_ / pos)
        })
        .collect();
    for w in rates.windows(2) {
        let ((fa, na), (fb, nb)) = (w[0], w[1]);
        if fa == na {
            return fa * 100.0;
        }
        if fa > na && fb <= nb {
            // Intersection of the two segments.
            let t = (fa - na) / ((fa - na) - (fb - nb));
            return (fa + t * (fb - fa)) * 100.0;
        }
    }
    rates.last().unwrap().0 * 100.0
}

#[test]
fn eer_matches_threshold_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..60 {
        let n = rng.random_range(2..60);
        let tied = case % 2 == 0;
        let mut labels: Vec<Label> = (0..n)
            .map(|_| if rng.random_bool(0.3) { Label::Change } else { Label::NoChange })
            .collect();
        labels[0] = Label::Change;
        labels[1] = Label::NoChange;
        let scores: Vec<f64> = labels
            .iter()
            .map(|l| {
                let shift: f64 = if l.is_positive() { 0.7 } else { 0.0 };
                if tied {
                    rng.random_range(0..5) as f64 + shift.round()
                } else {
                    rng.random_range(-1.0..1.0) + shift
                }
            })
            .collect();
        let ours = eer(&scores, &labels).unwrap();
        let oracle = brute_force_eer(&scores, &labels);
        assert!((ours - oracle).abs() <= 1e-9, "case {case}: {ours} vs {oracle}");
    }
}

fn plane_pool(rng: &mut ChaCha8Rng, n: usize) -> Pool<f64> {
    let samples = (0..n)
        .map(|i| {
            let f = vec![rng.random_range(0..20) as f64, rng.random_range(0..20) as f64];
            Sample::new(i as SampleId * 3 + 1, f, Some(Label::NoChange))
        })
        .collect();
    Pool::new(samples, 2).unwrap()
}

#[test]
fn mapping_is_global_greedy_over_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let pool = plane_pool(&mut rng, 30);
        let k = rng.random_range(1..8);
        let ex = Array2::from_shape_fn((k, 2), |_| rng.random_range(0..20) as f64);
        let excluded: HashSet<SampleId> = pool.train_ids().into_iter().filter(|_| rng.random_bool(0.2)).collect();
        let got = map_exemplars_to_pool(&ExemplarSet::new(ex.clone()).unwrap(), &pool, &excluded, DisplayOrigin::VirtualSurrogate)
            .unwrap();

        let mut pairs = Vec::new();
        for kk in 0..k {
            for s in pool.samples().iter().filter(|s| !excluded.contains(&s.id)) {
                pairs.push((sqd(ex.row(kk).as_slice().unwrap(), &s.features), kk, s.id));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut want = vec![None; k];
        let mut used = HashSet::new();
        for (_, kk, id) in pairs {
            if want[kk].is_none() && !used.contains(&id) {
                want[kk] = Some(id);
                used.insert(id);
            }
        }
        let want: Vec<SampleId> = want.into_iter().map(Option::unwrap).collect();
        assert_eq!(got.sample_ids, want);
    }
}

#[test]
fn maxmin_matches_direct_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let pool = plane_pool(&mut rng, 40);
        let ids = pool.train_ids();
        let labeled: Vec<SampleId> = ids.iter().copied().filter(|_| rng.random_bool(0.15)).collect();
        if labeled.is_empty() {
            continue;
        }
        let excluded: HashSet<SampleId> = labeled.iter().copied().collect();
        let k = rng.random_range(1..6);
        let got = maxmin_display(&pool, &labeled, &excluded, k, 0).unwrap();

        let mut anchors: Vec<SampleId> = labeled.clone();
        let mut want = Vec::new();
        let mut cands: Vec<SampleId> = ids.iter().copied().filter(|id| !excluded.contains(id)).collect();
        cands.sort();
        for _ in 0..k {
            let score = |id: SampleId| {
                anchors
                    .iter()
                    .map(|&a| sqd(pool.features(id).unwrap(), pool.features(a).unwrap()))
                    .fold(f64::INFINITY, f64::min)
            };
            let best = cands
                .iter()
                .copied()
                .filter(|id| !want.contains(id))
                .fold(None, |acc: Option<SampleId>, id| match acc {
                    Some(b) if score(b) >= score(id) => Some(b),
                    _ => Some(id),
                })
                .unwrap();
            want.push(best);
            anchors.push(best);
        }
        assert_eq!(got.sample_ids, want);
    }
}

#[test]
fn uncertainty_matches_sorted_margins() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pool = plane_pool(&mut rng, 50);
    let model = ClassifierModel { weights: vec![1.0, -1.0], bias: 0.5, ..flat_model(2) };
    let excluded: HashSet<SampleId> = pool.train_ids().into_iter().take(7).collect();
    let got = uncertainty_display(&pool, &model, &excluded, 9).unwrap();
    let mut all: Vec<(f64, SampleId)> = pool
        .samples()
        .iter()
        .filter(|s| !excluded.contains(&s.id))
        .map(|s| ((s.features[0] - s.features[1] + 0.5).abs(), s.id))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let want: Vec<SampleId> = all.into_iter().take(9).map(|p| p.1).collect();
    assert_eq!(got.sample_ids, want);
}
