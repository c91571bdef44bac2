use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sadapter::adapter::AdapterConfig;
use sadapter::harness::gradcheck::{all_pass, run_suite};
use sadapter::harness::train::{build_split, cmd_eval, cmd_train, log_csv, train, CHECKPOINT_FILE};
use sadapter::harness::RunConfig;
use sadapter::metrics::{auc, roc, ScoreSet};
use sadapter::module::{Linear, Module};
use sadapter::objective::{total_loss, tsr_average, TsrMode};
use sadapter::synth::{generate, highpass_energy, DomainStyle};
use sadapter::tensor::no_grad;
use sadapter::vit::{VisionTransformer, ViTConfig};
use sadapter::Tensor;

fn small(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        lr: 1e-2,
        epochs: 3,
        batch_size: 16,
        train_per_class: 8,
        val_per_class: 4,
        test_per_class: 8,
        ..RunConfig::default()
    }
}

#[test]
fn gradcheck_suite_passes_on_20_random_instances() {
    for seed in 0..20 {
        let reports = run_suite(seed).unwrap();
        assert!(all_pass(&reports), "seed {seed}: {:?}", reports.iter().find(|r| !r.pass));
    }
}

/// The whole adapted transformer under the total objective. Many entries
/// of these gradients are tiny, so the comparison is norm-wise.
#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = ViTConfig {
        depth: 2,
        width: 8,
        heads: 2,
        patch: 2,
        image: 6,
        mlp_ratio: 2,
        channels: 3,
        classes: 2,
    };
    let mut model = VisionTransformer::new(cfg, &mut rng).unwrap();
    model.attach_adapters(&AdapterConfig::default(), &mut rng).unwrap();
    for block in &mut model.blocks {
        for a in [&mut block.msa_adapter, &mut block.mlp_adapter].into_iter().flatten() {
            a.dim_up = Linear::init(a.bottleneck(), 8, 0.5, &mut rng);
        }
    }
    let images = Tensor::uniform(&[4, 3, 6, 6], 0.0, 1.0, &mut rng);
    let labels = [0u8, 1, 0, 0];
    let domains = [0usize, 0, 1, 2];
    let loss = |m: &VisionTransformer| {
        let out = m.forward(&images).unwrap();
        let tsr = tsr_average(out.token_map.as_ref().unwrap(), &labels, &domains, TsrMode::Aggregate)
            .unwrap()
            .loss;
        total_loss(&out.logits, &labels, &tsr, 0.1).unwrap()
    };
    loss(&model).backward().unwrap();
    let params: Vec<(String, Tensor)> = model.named_parameters().into_iter().filter(|(_, t)| t.requires_grad()).collect();
    assert!(!params.is_empty());
    let eps = 1e-5;
    for (name, p) in params {
        let analytic = p.grad().unwrap();
        let mut numeric = vec![0.0; p.numel()];
        for i in 0..p.numel() {
            let eval = |d: f64| {
                let mut m = model.clone();
                let mut v = p.to_vec();
                v[i] += d;
                m.visit_mut("", &mut |n, t| {
                    if n == name {
                        *t = Tensor::new(v.clone(), p.shape()).unwrap();
                    }
                });
                no_grad(|| loss(&m)).item().unwrap()
            };
            numeric[i] = (eval(eps) - eval(-eps)) / (2.0 * eps);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        assert!(diff / scale < 1e-6, "{name}: {}", diff / scale);
    }
}

#[test]
fn within_domain_highpass_baseline_separates_classes() {
    for d in 0..4 {
        let b = generate(&DomainStyle::preset(d), 32, 32).unwrap();
        let s = ScoreSet::new(highpass_energy(&b.images), b.labels.clone()).unwrap();
        let a = auc(&roc(&s).unwrap());
        assert!(a > 0.9, "domain {d}: auc {a}");
    }
}

#[test]
fn channel_means_follow_gain() {
    let a = DomainStyle::new([1.0, 1.0, 1.0], 0.0, 0.0, 0, 9).unwrap();
    let b = DomainStyle::new([2.0, 1.0, 0.5], 0.0, 0.0, 0, 9).unwrap();
    let (ia, ib) = (generate(&a, 4, 16).unwrap().images, generate(&b, 4, 16).unwrap().images);
    let mean = |t: &Tensor, c: usize| -> f64 {
        let d = t.data();
        let plane = 16 * 16;
        (0..t.shape()[0]).map(|i| d[(i * 3 + c) * plane..(i * 3 + c + 1) * plane].iter().sum::<f64>()).sum::<f64>()
            / (t.shape()[0] * plane) as f64
    };
    for (c, g) in [2.0, 1.0, 0.5].into_iter().enumerate() {
        assert!((mean(&ib, c) - g * mean(&ia, c)).abs() < 1e-12);
    }
    assert!(mean(&ib, 0) > mean(&ib, 1) && mean(&ib, 1) > mean(&ib, 2));
}

#[test]
fn zero_lambda_logs_zero_regularizer() {
    let mut cfg = small(1);
    cfg.lambda = 0.0;
    let split = build_split(&cfg).unwrap();
    let out = train(&cfg, &split).unwrap();
    assert!(out.log.iter().all(|e| e.tsr == 0.0 && e.bce > 0.0 && e.total == e.bce));
}

#[test]
fn training_is_deterministic() {
    let cfg = small(4);
    let split = build_split(&cfg).unwrap();
    let a = log_csv(&train(&cfg, &split).unwrap().log);
    let b = log_csv(&train(&cfg, &build_split(&cfg).unwrap()).unwrap().log);
    assert_eq!(a, b);
}

#[test]
fn loss_decreases_on_default_toy_config() {
    let cfg = RunConfig {
        epochs: 10,
        ..RunConfig::default()
    };
    let log = train(&cfg, &build_split(&cfg).unwrap()).unwrap().log;
    assert!(log[9].total < log[0].total, "{} vs {}", log[9].total, log[0].total);
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(2);
    cfg.out = dir.path().to_path_buf();
    let art = cmd_train(&cfg).unwrap();
    assert!(art.log_path.exists() && art.checkpoint_path.exists());
    let r1 = cmd_eval(&cfg, &art.checkpoint_path).unwrap();
    let r2 = cmd_eval(&cfg, &art.checkpoint_path).unwrap();
    assert_eq!(r1, r2);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    let path = dir.path().join(CHECKPOINT_FILE);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(cmd_eval(&cfg, &path).is_err());
}

#[test]
fn eval_rejects_checkpoint_of_another_variant() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(3);
    cfg.epochs = 1;
    cfg.out = dir.path().to_path_buf();
    let art = cmd_train(&cfg).unwrap();
    cfg.variant = sadapter::adapter::AdapterVariant::VanillaLinear;
    assert!(cmd_eval(&cfg, &art.checkpoint_path).is_err());
}
