//! Brute-force and pairwise oracles for the evaluation metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sadapter::metrics::{acer_suite, auc, eer_point, error_rates, hter, roc, tpr_at_fpr, ScoreSet};

/// Random set with both classes and plenty of ties.
fn random_set(rng: &mut ChaCha8Rng) -> ScoreSet {
    let n = rng.random_range(2..=200);
    let levels = rng.random_range(2..40) as f64;
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    labels[0] = 0;
    labels[1] = 1;
    let shift = rng.random_range(0.0..0.3);
    let scores = labels
        .iter()
        .map(|&l| {
            let s: f64 = rng.random_range(0.0..1.0) + if l == 1 { shift } else { 0.0 };
            (s * levels).round() / levels
        })
        .collect();
    ScoreSet::new(scores, labels).unwrap()
}

fn pairwise_auc(s: &ScoreSet) -> f64 {
    let (mut twice, mut p, mut n) = (0u128, 0u128, 0u128);
    for (i, &li) in s.labels.iter().enumerate() {
        if li == 1 {
            p += 1;
        } else {
            n += 1;
        }
        if li != 1 {
            continue;
        }
        for (j, &lj) in s.labels.iter().enumerate() {
            if lj == 0 {
                twice += match s.scores[i].partial_cmp(&s.scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice as f64 / (2 * p * n) as f64
}

/// Counts at every candidate threshold by full rescans, ordered from the
/// strictest threshold down.
fn sweep(s: &ScoreSet) -> Vec<(f64, usize, usize)> {
    let mut thresholds: Vec<f64> = s.scores.clone();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    thresholds
        .into_iter()
        .map(|t| {
            let fp = (0..s.scores.len()).filter(|&i| s.labels[i] == 0 && s.scores[i] >= t).count();
            let tp = (0..s.scores.len()).filter(|&i| s.labels[i] == 1 && s.scores[i] >= t).count();
            (t, fp, tp)
        })
        .collect()
}

fn brute_eer(s: &ScoreSet) -> f64 {
    let p = s.labels.iter().filter(|&&l| l == 1).count() as f64;
    let n = s.labels.len() as f64 - p;
    let pts: Vec<(f64, f64)> = sweep(s).iter().map(|&(_, fp, tp)| (fp as f64 / n, 1.0 - tp as f64 / p)).collect();
    for k in 1..pts.len() {
        let (fa, ra) = pts[k - 1];
        let (fb, rb) = pts[k];
        let (ga, gb) = (fa - ra, fb - rb);
        if gb >= 0.0 {
            if gb == 0.0 {
                return fb;
            }
            let alpha = -ga / (gb - ga);
            return fa + alpha * (fb - fa);
        }
    }
    unreachable!("the sweep ends at fpr = 1, fnr = 0")
}

fn brute_acer(s: &ScoreSet, t: f64) -> (f64, f64, f64) {
    let attacks: Vec<f64> = (0..s.scores.len()).filter(|&i| s.labels[i] == 1).map(|i| s.scores[i]).collect();
    let live: Vec<f64> = (0..s.scores.len()).filter(|&i| s.labels[i] == 0).map(|i| s.scores[i]).collect();
    let apcer = attacks.iter().filter(|&&x| x < t).count() as f64 / attacks.len() as f64;
    let bpcer = live.iter().filter(|&&x| x >= t).count() as f64 / live.len() as f64;
    (apcer, bpcer, 0.5 * (apcer + bpcer))
}

#[test]
fn auc_eer_acer_match_oracles_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..100 {
        let s = random_set(&mut rng);
        let curve = roc(&s).unwrap();
        assert_eq!(auc(&curve), pairwise_auc(&s), "auc, trial {trial}");
        assert_eq!(eer_point(&curve).eer, brute_eer(&s), "eer, trial {trial}");
        let suite = acer_suite(&s, 0.5);
        assert_eq!((suite.apcer, suite.bpcer, suite.acer), brute_acer(&s, 0.5), "acer, trial {trial}");
        let sw = sweep(&s);
        assert_eq!(curve.points.len(), sw.len());
        for (pt, &(t, fp, tp)) in curve.points.iter().zip(&sw) {
            assert_eq!((pt.threshold, pt.false_positives, pt.true_positives), (t, fp, tp));
        }
    }
}

#[test]
fn hter_at_eer_threshold_brackets_eer() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let s = random_set(&mut rng);
        let e = eer_point(&roc(&s).unwrap());
        let (fpr, fnr) = error_rates(&s, e.threshold).unwrap();
        assert!(fpr.min(fnr) <= e.eer + 1e-15 && e.eer <= fpr.max(fnr) + 1e-15);
        let h = hter(&s, e.threshold).unwrap();
        if fpr == fnr {
            assert!((h - e.eer).abs() < 1e-9);
        }
    }
}

#[test]
fn tpr_at_fpr_matches_sweep_interpolation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let s = random_set(&mut rng);
        let p = s.labels.iter().filter(|&&l| l == 1).count() as f64;
        let n = s.labels.len() as f64 - p;
        let pts: Vec<(f64, f64)> = sweep(&s).iter().map(|&(_, fp, tp)| (fp as f64 / n, tp as f64 / p)).collect();
        let target = 0.01;
        let want = match pts.iter().filter(|q| q.0 == target).map(|q| q.1).reduce(f64::max) {
            Some(t) => t,
            None => {
                let k = pts.iter().position(|q| q.0 > target).unwrap();
                let (a, b) = (pts[k - 1], pts[k]);
                a.1 + (target - a.0) / (b.0 - a.0) * (b.1 - a.1)
            }
        };
        assert_eq!(tpr_at_fpr(&s, target).unwrap(), want);
    }
}
