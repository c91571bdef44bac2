//! Anti-spoofing evaluation metrics.
//!
//! Scores are attack likelihoods; label 1 (attack) is the positive class.
//! An example is predicted as an attack when its score is at or above the
//! threshold. FPR is therefore the bona fide rejection rate and FNR
//! (`1 − TPR`) the attack acceptance rate.

use crate::error::{Error, Result};
use crate::objective::{ATTACK, BONA_FIDE};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.is_empty() || scores.len() != labels.len() {
            return Err(Error::Metric(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > ATTACK) {
            return Err(Error::Metric("labels must be 0 or 1".into()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Metric("NaN score".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == ATTACK).count()
    }

    pub fn negatives(&self) -> usize {
        self.labels.len() - self.positives()
    }

    fn require_both(&self) -> Result<()> {
        if self.positives() == 0 || self.negatives() == 0 {
            Err(Error::Metric("both classes must be present".into()))
        } else {
            Ok(())
        }
    }
}

/// One operating point: everything scoring `>= threshold` is flagged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub false_positives: usize,
    pub true_positives: usize,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC vertices from the all-negative corner `(0,0)` to `(1,1)`, one per
/// distinct score; tied scores move both rates in a single step.
#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub positives: usize,
    pub negatives: usize,
}

pub fn roc(s: &ScoreSet) -> Result<RocCurve> {
    s.require_both()?;
    let (p, n) = (s.positives(), s.negatives());
    let mut order: Vec<usize> = (0..s.scores.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        false_positives: 0,
        true_positives: 0,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = s.scores[order[i]];
        while i < order.len() && s.scores[order[i]] == t {
            if s.labels[order[i]] == ATTACK {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            false_positives: fp,
            true_positives: tp,
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
        });
    }
    Ok(RocCurve {
        points,
        positives: p,
        negatives: n,
    })
}

/// Trapezoidal area, accumulated in integer counts so that it agrees
/// exactly with the pairwise-comparison definition.
pub fn auc(curve: &RocCurve) -> f64 {
    let mut twice_area: u128 = 0;
    for w in curve.points.windows(2) {
        let dfp = (w[1].false_positives - w[0].false_positives) as u128;
        twice_area += dfp * (w[0].true_positives + w[1].true_positives) as u128;
    }
    twice_area as f64 / (2 * curve.positives as u128 * curve.negatives as u128) as f64
}

/// Equal error rate and the operating threshold closest to it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EerPoint {
    pub eer: f64,
    pub threshold: f64,
}

/// Interpolates the point where FPR equals FNR along the ROC.
pub fn eer_point(curve: &RocCurve) -> EerPoint {
    let gap = |p: &RocPoint| p.fpr - (1.0 - p.tpr);
    let pts = &curve.points;
    // gap(first) = -1 and gap(last) = 1, so a sign change exists.
    let i = pts.iter().position(|p| gap(p) >= 0.0).expect("last vertex has gap 1");
    let (a, b) = (&pts[i - 1], &pts[i]);
    let (ga, gb) = (gap(a), gap(b));
    if gb == 0.0 {
        return EerPoint {
            eer: b.fpr,
            threshold: b.threshold,
        };
    }
    let alpha = -ga / (gb - ga);
    let eer = a.fpr + alpha * (b.fpr - a.fpr);
    let threshold = if -ga < gb { a.threshold } else { b.threshold };
    EerPoint { eer, threshold }
}

pub fn eer(s: &ScoreSet) -> Result<f64> {
    Ok(eer_point(&roc(s)?).eer)
}

/// `(FPR, FNR)` at a fixed threshold.
pub fn error_rates(s: &ScoreSet, threshold: f64) -> Result<(f64, f64)> {
    s.require_both()?;
    let (mut fp, mut fneg) = (0usize, 0usize);
    for (&score, &l) in s.scores.iter().zip(&s.labels) {
        let flagged = score >= threshold;
        if l == BONA_FIDE && flagged {
            fp += 1;
        }
        if l == ATTACK && !flagged {
            fneg += 1;
        }
    }
    Ok((fp as f64 / s.negatives() as f64, fneg as f64 / s.positives() as f64))
}

/// Half-total error rate `(FAR + FRR)/2` at `threshold`.
pub fn hter(s: &ScoreSet, threshold: f64) -> Result<f64> {
    let (fpr, fnr) = error_rates(s, threshold)?;
    Ok(0.5 * (fpr + fnr))
}

/// TPR at the given FPR, linearly interpolated on the ROC; on a vertical
/// ROC segment at exactly that FPR the highest TPR is taken.
pub fn tpr_at_fpr(s: &ScoreSet, target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Metric(format!("target FPR {target} outside [0, 1]")));
    }
    Ok(tpr_at_fpr_curve(&roc(s)?, target))
}

pub fn tpr_at_fpr_curve(curve: &RocCurve, target: f64) -> f64 {
    let pts = &curve.points;
    let exact = pts.iter().filter(|p| p.fpr == target).map(|p| p.tpr).fold(None, |m: Option<f64>, v| {
        Some(m.map_or(v, |m| m.max(v)))
    });
    if let Some(t) = exact {
        return t;
    }
    let i = pts.iter().position(|p| p.fpr > target).expect("last vertex has fpr 1");
    let (a, b) = (&pts[i - 1], &pts[i]);
    a.tpr + (target - a.fpr) / (b.fpr - a.fpr) * (b.tpr - a.tpr)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcerSuite {
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
}

/// Attack and bona fide classification error rates at a fixed threshold.
/// A class absent from the set contributes a rate of 0.
pub fn acer_suite(s: &ScoreSet, threshold: f64) -> AcerSuite {
    let (mut attacks, mut missed, mut live, mut rejected) = (0usize, 0usize, 0usize, 0usize);
    for (&score, &l) in s.scores.iter().zip(&s.labels) {
        if l == ATTACK {
            attacks += 1;
            missed += usize::from(score < threshold);
        } else {
            live += 1;
            rejected += usize::from(score >= threshold);
        }
    }
    let rate = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let apcer = rate(missed, attacks);
    let bpcer = rate(rejected, live);
    AcerSuite {
        apcer,
        bpcer,
        acer: 0.5 * (apcer + bpcer),
    }
}

pub const ACER_THRESHOLD: f64 = 0.5;
pub const TPR_TARGET_FPR: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub auc: f64,
    pub eer: f64,
    pub hter: f64,
    pub acer: f64,
    pub apcer: f64,
    pub bpcer: f64,
    pub tpr_at_fpr1: f64,
    /// Threshold used for HTER.
    pub threshold: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "auc,eer,hter,acer,apcer,bpcer,tpr_at_fpr1,threshold";

    pub fn csv_fields(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.auc, self.eer, self.hter, self.acer, self.apcer, self.bpcer, self.tpr_at_fpr1, self.threshold
        )
    }
}

/// Full report. HTER is taken at `hter_threshold` when given (e.g. a
/// threshold fixed on source-domain validation data), otherwise at the
/// set's own EER operating point.
pub fn evaluate(s: &ScoreSet, hter_threshold: Option<f64>) -> Result<MetricReport> {
    let curve = roc(s)?;
    let e = eer_point(&curve);
    let threshold = hter_threshold.unwrap_or(e.threshold);
    let suite = acer_suite(s, ACER_THRESHOLD);
    Ok(MetricReport {
        auc: auc(&curve),
        eer: e.eer,
        hter: hter(s, threshold)?,
        acer: suite.acer,
        apcer: suite.apcer,
        bpcer: suite.bpcer,
        tpr_at_fpr1: tpr_at_fpr_curve(&curve, TPR_TARGET_FPR),
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(scores: &[f64], labels: &[u8]) -> ScoreSet {
        ScoreSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn perfect_separation() {
        let s = set(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]);
        assert_eq!(auc(&roc(&s).unwrap()), 1.0);
        let e = eer_point(&roc(&s).unwrap());
        assert_eq!(e.eer, 0.0);
        assert_eq!(hter(&s, e.threshold).unwrap(), 0.0);
        assert_eq!(tpr_at_fpr(&s, 0.01).unwrap(), 1.0);
    }

    #[test]
    fn inverted_labels() {
        let s = set(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0]);
        assert_eq!(auc(&roc(&s).unwrap()), 0.0);
        assert_eq!(eer(&s).unwrap(), 1.0);
    }

    #[test]
    fn constant_scores_are_chance() {
        let s = set(&[0.5; 6], &[0, 1, 0, 1, 1, 0]);
        assert_eq!(eer(&s).unwrap(), 0.5);
        assert_eq!(auc(&roc(&s).unwrap()), 0.5);
    }

    #[test]
    fn single_class_is_rejected() {
        let s = set(&[0.1, 0.2], &[0, 0]);
        assert!(roc(&s).is_err());
        assert!(eer(&s).is_err());
        assert!(hter(&s, 0.5).is_err());
        assert!(ScoreSet::new(vec![0.1], vec![2]).is_err());
        assert!(ScoreSet::new(vec![], vec![]).is_err());
    }

    #[test]
    fn acer_cases() {
        let s = set(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]);
        assert_eq!(acer_suite(&s, 0.5), AcerSuite { apcer: 0.0, bpcer: 0.0, acer: 0.0 });
        let s = set(&[0.1, 0.2, 0.3, 0.4], &[0, 0, 1, 1]);
        assert_eq!(acer_suite(&s, 0.5), AcerSuite { apcer: 1.0, bpcer: 0.0, acer: 0.5 });
    }

    #[test]
    fn ties_are_grouped() {
        let s = set(&[0.9, 0.5, 0.5, 0.1], &[1, 1, 0, 0]);
        let c = roc(&s).unwrap();
        assert_eq!(c.points.len(), 4);
        assert_eq!((c.points[2].fpr, c.points[2].tpr), (0.5, 1.0));
    }

    #[test]
    fn report_fields_are_consistent() {
        let s = set(&[0.05, 0.4, 0.35, 0.8, 0.7, 0.2, 0.6, 0.9], &[0, 0, 1, 1, 0, 0, 1, 1]);
        let r = evaluate(&s, None).unwrap();
        assert!((r.acer - 0.5 * (r.apcer + r.bpcer)).abs() < 1e-15);
        for v in [r.auc, r.eer, r.hter, r.acer, r.apcer, r.bpcer, r.tpr_at_fpr1] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(MetricReport::CSV_HEADER.split(',').count(), r.csv_fields().split(',').count());
    }
}
