//! Loop oracles for the central-difference convolution and the soft
//! histogram, written directly from their definitions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sadapter::cdc::{central_difference, CdcConv};
use sadapter::histogram::SoftHistogram;
use sadapter::Tensor;

fn at(x: &[f64], c: usize, h: usize, w: usize, ch: usize, y: isize, xx: isize) -> Option<f64> {
    let _ = c;
    if y < 0 || xx < 0 || y as usize >= h || xx as usize >= w {
        None
    } else {
        Some(x[(ch * h + y as usize) * w + xx as usize])
    }
}

/// `(1-θ)·(Σ ω·x + b) + θ·Σ_{in-image p} ω(p)·(x_p − x_n)` for one image.
fn cdc_oracle(x: &[f64], cin: usize, h: usize, w: usize, k: &[f64], b: &[f64], cout: usize, theta: f64) -> Vec<f64> {
    let mut out = vec![0.0; cout * h * w];
    for co in 0..cout {
        for y in 0..h {
            for xx in 0..w {
                let mut plain = b[co];
                let mut diff = 0.0;
                for ci in 0..cin {
                    let centre = at(x, cin, h, w, ci, y as isize, xx as isize).unwrap();
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let wt = k[((co * cin + ci) * 3 + dy) * 3 + dx];
                            if let Some(v) = at(x, cin, h, w, ci, y as isize + dy as isize - 1, xx as isize + dx as isize - 1) {
                                plain += wt * v;
                                diff += wt * (v - centre);
                            }
                        }
                    }
                }
                out[(co * h + y) * w + xx] = (1.0 - theta) * plain + theta * diff;
            }
        }
    }
    out
}

#[test]
fn cdc_matches_loop_oracle_on_random_2x5x5() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for trial in 0..50 {
        let cout = 1 + trial % 3;
        let theta = rng.random_range(0.0..=1.0);
        let x = Tensor::randn(&[2, 5, 5], 1.0, &mut rng);
        let conv = CdcConv::init(2, cout, theta, &mut rng).unwrap();
        let conv = CdcConv::new(conv.kernel, Tensor::randn(&[cout], 0.5, &mut rng), theta).unwrap();
        let got = conv.forward_tensor(&x).unwrap();
        let want = cdc_oracle(x.data(), 2, 5, 5, conv.kernel.data(), conv.bias.data(), cout, theta);
        let err = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "trial {trial}: {err}");
    }
}

#[test]
fn cdc_theta_zero_is_plain_convolution_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let x = Tensor::randn(&[3, 2, 6, 4], 1.0, &mut rng);
        let conv = CdcConv::init(2, 3, 0.0, &mut rng).unwrap();
        let got = conv.forward_tensor(&x).unwrap();
        let plain = x.conv2d(&conv.kernel, Some(&conv.bias), 1, 1).unwrap();
        assert_eq!(got.data(), plain.data());
    }
}

#[test]
fn constant_input_has_zero_difference_term_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let v = rng.random_range(-5.0..5.0);
        let x = Tensor::full(&[2, 5, 5], v);
        let k = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng);
        let zg = central_difference(&x, &k).unwrap();
        assert!(zg.data().iter().all(|&z| z == 0.0));
    }
}

/// `(1/9) Σ_{3×3 window, zero padded} exp(−(γ(z−μ))²)`.
fn histogram_oracle(z: &[f64], c: usize, h: usize, w: usize, mu: &[f64], gamma: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let v = at(z, c, h, w, ch, y as isize + dy, x as isize + dx).unwrap_or(0.0);
                        let u = gamma[ch] * (v - mu[ch]);
                        s += (-u * u).exp();
                    }
                }
                out[(ch * h + y) * w + x] = s / 9.0;
            }
        }
    }
    out
}

#[test]
fn histogram_two_convolution_form_matches_direct_form_on_1000_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..1000 {
        let c = rng.random_range(1..4);
        let h = rng.random_range(1..7);
        let w = rng.random_range(1..7);
        let z = Tensor::randn(&[c, h, w], 1.5, &mut rng);
        let mu = Tensor::uniform(&[c], -1.0, 1.0, &mut rng);
        let gamma = Tensor::uniform(&[c], -2.0, 2.0, &mut rng);
        let hist = SoftHistogram::new(mu.clone(), gamma.clone()).unwrap();
        let got = hist.forward_tensor(&z).unwrap();
        let want = histogram_oracle(z.data(), c, h, w, mu.data(), gamma.data());
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12, "trial {trial}: {a} vs {b}");
            assert!(*a > 0.0 && *a <= 1.0, "trial {trial}: {a} outside (0, 1]");
        }
    }
}

#[test]
fn histogram_hand_case() {
    let mut z = vec![0.0; 9];
    z[4] = 1.0;
    let hist = SoftHistogram::init(1);
    let out = hist.forward_tensor(&Tensor::new(z, &[1, 3, 3]).unwrap()).unwrap();
    let want = (8.0 + (-1.0f64).exp()) / 9.0;
    assert!((out.data()[4] - want).abs() < 1e-12);
}
