//! Anti-spoofing metrics on a hand-made score set.

use sadapter::metrics::{evaluate, roc, ScoreSet};

fn main() -> sadapter::Result<()> {
    let scores = vec![0.05, 0.1, 0.2, 0.3, 0.45, 0.55, 0.4, 0.6, 0.7, 0.8, 0.9, 0.95];
    let labels = vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
    let s = ScoreSet::new(scores, labels)?;
    for p in &roc(&s)?.points {
        println!("t {:>5.2}  fpr {:.3}  tpr {:.3}", p.threshold, p.fpr, p.tpr);
    }
    let r = evaluate(&s, None)?;
    println!("auc {:.4} eer {:.4} hter {:.4} acer {:.4} (apcer {:.4}, bpcer {:.4}) tpr@fpr1% {:.4}", r.auc, r.eer, r.hter, r.acer, r.apcer, r.bpcer, r.tpr_at_fpr1);
    Ok(())
}
