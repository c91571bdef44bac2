//! Procedural multi-domain bona fide / attack images.
//!
//! Bona fide images are smooth blob textures. Attacks reuse the same kind of
//! base and add a fine periodic artifact: an oriented interference pattern
//! ("replay") or a halftone dot raster ("print"), with a period of 2 to 4
//! pixels. A [`DomainStyle`] then applies low-level appearance changes that
//! never alter artifact geometry.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::objective::{DomainBatch, ATTACK, BONA_FIDE};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainStyle {
    pub color_gain: [f64; 3],
    pub brightness_offset: f64,
    pub noise_sigma: f64,
    pub blur_radius: usize,
    pub seed: u64,
}

impl DomainStyle {
    pub fn new(color_gain: [f64; 3], brightness_offset: f64, noise_sigma: f64, blur_radius: usize, seed: u64) -> Result<Self> {
        if color_gain.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::InvalidArgument(format!("color gains must be positive, got {color_gain:?}")));
        }
        if !(noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {noise_sigma}")));
        }
        Ok(Self {
            color_gain,
            brightness_offset,
            noise_sigma,
            blur_radius,
            seed,
        })
    }

    /// A fixed family of distinct styles, cycled for `index >= 4`.
    pub fn preset(index: usize) -> Self {
        let (gain, offset, noise, blur) = match index % 4 {
            0 => ([1.0, 1.0, 1.0], 0.0, 0.02, 0),
            1 => ([1.35, 0.95, 0.75], 0.12, 0.03, 0),
            2 => ([0.75, 1.0, 1.3], -0.1, 0.025, 1),
            _ => ([1.1, 1.25, 0.9], 0.06, 0.045, 0),
        };
        Self {
            color_gain: gain,
            brightness_offset: offset,
            noise_sigma: noise,
            blur_radius: blur,
            seed: 0x5eed_0000 + index as u64,
        }
    }
}

/// Kinds of presentation attack artifact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackKind {
    Replay,
    Print,
}

fn example_rng(style_seed: u64, id: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&style_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&id.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Example id layout: domain in bits 40.., stream in bits 32..40, index below.
pub fn example_id(domain: usize, stream: u8, index: usize) -> u64 {
    ((domain as u64) << 40) | ((stream as u64) << 32) | index as u64
}

/// Smooth base image in `[0, 1]`, plane-major `[3, side, side]`.
fn base_image(rng: &mut ChaCha8Rng, side: usize) -> Vec<f64> {
    let s = side as f64;
    let mut img = vec![0.0; CHANNELS * side * side];
    let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.45));
    let slope: [f64; 2] = [rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15)];
    struct Blob {
        cy: f64,
        cx: f64,
        ry: f64,
        rx: f64,
        amp: [f64; 3],
    }
    let mut blobs = vec![Blob {
        cy: s * rng.random_range(0.42..0.58),
        cx: s * rng.random_range(0.42..0.58),
        ry: s * rng.random_range(0.28..0.36),
        rx: s * rng.random_range(0.22..0.3),
        amp: std::array::from_fn(|_| rng.random_range(0.25..0.4)),
    }];
    let extra = rng.random_range(2..5);
    for _ in 0..extra {
        let r = s * rng.random_range(0.06..0.14);
        blobs.push(Blob {
            cy: s * rng.random_range(0.25..0.75),
            cx: s * rng.random_range(0.25..0.75),
            ry: r,
            rx: r,
            amp: std::array::from_fn(|_| rng.random_range(-0.2..0.2)),
        });
    }
    for y in 0..side {
        for x in 0..side {
            let (fy, fx) = (y as f64 / s - 0.5, x as f64 / s - 0.5);
            let mut v = [0.0; 3];
            for c in 0..CHANNELS {
                v[c] = bg[c] + slope[0] * fy + slope[1] * fx;
            }
            for b in &blobs {
                let dy = (y as f64 + 0.5 - b.cy) / b.ry;
                let dx = (x as f64 + 0.5 - b.cx) / b.rx;
                let w = (-(dy * dy + dx * dx)).exp();
                for c in 0..CHANNELS {
                    v[c] += b.amp[c] * w;
                }
            }
            for c in 0..CHANNELS {
                img[(c * side + y) * side + x] = v[c].clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// Multiplicative artifact mask in `[1 - amp, 1]`.
fn artifact(rng: &mut ChaCha8Rng, kind: AttackKind, side: usize) -> Vec<f64> {
    let period = rng.random_range(2.0..4.0f64);
    let amp = rng.random_range(0.35..0.5);
    let mut mask = vec![1.0; side * side];
    match kind {
        AttackKind::Replay => {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let (ky, kx) = (angle.sin(), angle.cos());
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            // A second, slightly detuned grating produces beat fringes.
            let detune = rng.random_range(0.9..1.1);
            for y in 0..side {
                for x in 0..side {
                    let u = (ky * y as f64 + kx * x as f64) * std::f64::consts::TAU / period;
                    let g = 0.5 * (1.0 + (u + phase).cos()) * (0.75 + 0.25 * (u * detune).cos());
                    mask[y * side + x] = 1.0 - amp * g;
                }
            }
        }
        AttackKind::Print => {
            let oy = rng.random_range(0.0..period);
            let ox = rng.random_range(0.0..period);
            let radius = period * rng.random_range(0.3..0.42);
            for y in 0..side {
                for x in 0..side {
                    let cy = ((y as f64 - oy) / period).round() * period + oy;
                    let cx = ((x as f64 - ox) / period).round() * period + ox;
                    let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                    let inside = (1.0 - (d - radius) / 0.75).clamp(0.0, 1.0);
                    mask[y * side + x] = 1.0 - amp * inside;
                }
            }
        }
    }
    mask
}

fn box_blur(plane: &[f64], side: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return plane.to_vec();
    }
    let mut out = vec![0.0; plane.len()];
    let r = r as isize;
    let n = side as isize;
    for y in 0..n {
        for x in 0..n {
            let (mut acc, mut count) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    if (0..n).contains(&yy) && (0..n).contains(&xx) {
                        acc += plane[(yy * n + xx) as usize];
                        count += 1.0;
                    }
                }
            }
            out[(y * n + x) as usize] = acc / count;
        }
    }
    out
}

/// Gain, offset, additive noise, then blur.
fn apply_style(img: &mut [f64], style: &DomainStyle, rng: &mut ChaCha8Rng, side: usize) {
    let noise = Normal::new(0.0, style.noise_sigma.max(0.0)).expect("finite sigma");
    let plane = side * side;
    for c in 0..CHANNELS {
        let p = &mut img[c * plane..(c + 1) * plane];
        for v in p.iter_mut() {
            *v = *v * style.color_gain[c] + style.brightness_offset;
            if style.noise_sigma > 0.0 {
                *v += noise.sample(rng);
            }
        }
        let blurred = box_blur(p, side, style.blur_radius);
        p.copy_from_slice(&blurred);
    }
}

/// One styled example as plane-major `[3, side, side]`.
pub fn render(style: &DomainStyle, label: u8, kind: AttackKind, id: u64, side: usize) -> Vec<f64> {
    let mut rng = example_rng(style.seed, id);
    let mut img = base_image(&mut rng, side);
    if label == ATTACK {
        let mask = artifact(&mut rng, kind, side);
        let plane = side * side;
        for c in 0..CHANNELS {
            for (v, m) in img[c * plane..(c + 1) * plane].iter_mut().zip(&mask) {
                *v *= m;
            }
        }
    }
    apply_style(&mut img, style, &mut rng, side);
    img
}

/// `n` bona fide followed by `n` attack examples of one domain. Attacks
/// alternate between replay and print. `stream` selects a disjoint block
/// of example ids, so different streams never share an example.
pub fn generate_stream(style: &DomainStyle, domain: usize, stream: u8, n: usize, side: usize) -> Result<DomainBatch> {
    if n == 0 || side == 0 {
        return Err(Error::InvalidArgument("need n >= 1 and side >= 1".into()));
    }
    let mut data = Vec::with_capacity(2 * n * CHANNELS * side * side);
    let mut labels = Vec::with_capacity(2 * n);
    let mut ids = Vec::with_capacity(2 * n);
    for (label, offset) in [(BONA_FIDE, 0), (ATTACK, n)] {
        for i in 0..n {
            let id = example_id(domain, stream, offset + i);
            let kind = if i % 2 == 0 { AttackKind::Replay } else { AttackKind::Print };
            data.extend(render(style, label, kind, id, side));
            labels.push(label);
            ids.push(id);
        }
    }
    let images = Tensor::new(data, &[2 * n, CHANNELS, side, side])?;
    DomainBatch::new(images, labels, vec![domain; 2 * n], ids)
}

pub fn generate(style: &DomainStyle, n: usize, side: usize) -> Result<DomainBatch> {
    generate_stream(style, 0, 0, n, side)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthProtocol {
    pub domains: Vec<DomainStyle>,
    pub held_out: usize,
    pub few_shot_k: usize,
}

impl SynthProtocol {
    /// `n_domains` preset styles with one held out.
    pub fn leave_one_out(n_domains: usize, held_out: usize, few_shot_k: usize) -> Result<Self> {
        let p = Self {
            domains: (0..n_domains).map(DomainStyle::preset).collect(),
            held_out,
            few_shot_k,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.held_out >= self.domains.len() {
            return Err(Error::Config(format!(
                "held-out domain {} not among {} domains",
                self.held_out,
                self.domains.len()
            )));
        }
        Ok(())
    }

    pub fn source_domains(&self) -> Vec<usize> {
        (0..self.domains.len()).filter(|&d| d != self.held_out).collect()
    }
}

/// Examples per class per domain in each split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug)]
pub struct ProtocolSplit {
    /// Source domains, plus `few_shot_k` per class from the held-out domain.
    pub train: DomainBatch,
    /// Source-domain validation data, used to fix decision thresholds.
    pub val: DomainBatch,
    /// Held-out domain only.
    pub test: DomainBatch,
}

const TRAIN_STREAM: u8 = 0;
const VAL_STREAM: u8 = 1;
const TEST_STREAM: u8 = 2;
const SHOT_STREAM: u8 = 3;

pub fn split_protocol(p: &SynthProtocol, sizes: SplitSizes, side: usize, tsr_enabled: bool) -> Result<ProtocolSplit> {
    p.validate()?;
    let sources = p.source_domains();
    if tsr_enabled && sources.len() < 2 {
        return Err(Error::Config(format!(
            "style regularization needs at least 2 source domains, have {}",
            sources.len()
        )));
    }
    if sources.is_empty() {
        return Err(Error::Config("no source domains".into()));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for &d in &sources {
        train.push(generate_stream(&p.domains[d], d, TRAIN_STREAM, sizes.train, side)?);
        val.push(generate_stream(&p.domains[d], d, VAL_STREAM, sizes.val, side)?);
    }
    let h = p.held_out;
    if p.few_shot_k > 0 {
        train.push(generate_stream(&p.domains[h], h, SHOT_STREAM, p.few_shot_k, side)?);
    }
    Ok(ProtocolSplit {
        train: DomainBatch::concat(&train)?,
        val: DomainBatch::concat(&val)?,
        test: generate_stream(&p.domains[h], h, TEST_STREAM, sizes.test, side)?,
    })
}

/// Pixel-statistics baseline: mean squared response of a 3×3 Laplacian
/// over all channels and interior pixels, one score per image.
pub fn highpass_energy(images: &Tensor) -> Vec<f64> {
    let s = images.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let d = images.data();
    (0..b)
        .map(|i| {
            let mut acc = 0.0;
            for ch in 0..c {
                let base = (i * c + ch) * h * w;
                let at = |y: usize, x: usize| d[base + y * w + x];
                for y in 1..h - 1 {
                    for x in 1..w - 1 {
                        let r = 4.0 * at(y, x) - at(y - 1, x) - at(y + 1, x) - at(y, x - 1) - at(y, x + 1);
                        acc += r * r;
                    }
                }
            }
            acc / (c * (h - 2) * (w - 2)) as f64
        })
        .collect()
}

/// Writes every image as binary PPM plus `manifest.csv` (path,label,domain).
pub fn dump(batch: &DomainBatch, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let s = batch.images.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    if c != CHANNELS {
        return Err(Error::shape("dump", format!("expected 3 channels, got {c}")));
    }
    let data = batch.images.data();
    let mut manifest = String::from("path,label,domain\n");
    for i in 0..batch.len() {
        let name = format!("img_{:016x}.ppm", batch.example_ids[i]);
        let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = data[((i * c + ch) * h + y) * w + x];
                    bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        fs::File::create(dir.join(&name))?.write_all(&bytes)?;
        manifest.push_str(&format!("{name},{},{}\n", batch.labels[i], batch.domain_ids[i]));
    }
    fs::write(dir.join("manifest.csv"), manifest)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn deterministic_and_balanced() {
        let st = DomainStyle::preset(1);
        let a = generate(&st, 8, 16).unwrap();
        let b = generate(&st, 8, 16).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert_eq!(a.labels.iter().filter(|&&l| l == 0).count(), 8);
        assert_eq!(a.labels.iter().filter(|&&l| l == 1).count(), 8);
    }

    #[test]
    fn style_validation() {
        assert!(DomainStyle::new([1.0, 0.0, 1.0], 0.0, 0.0, 0, 1).is_err());
        assert!(DomainStyle::new([1.0; 3], 0.0, -0.1, 0, 1).is_err());
        assert!(DomainStyle::new([1.0; 3], 0.0, 0.1, 1, 1).is_ok());
    }

    #[test]
    fn leave_one_out_structure() {
        let p = SynthProtocol::leave_one_out(4, 2, 0).unwrap();
        let s = split_protocol(&p, SplitSizes { train: 3, val: 2, test: 4 }, 8, true).unwrap();
        let domains: HashSet<usize> = s.train.domain_ids.iter().copied().collect();
        assert_eq!(domains, HashSet::from([0, 1, 3]));
        assert!(s.test.domain_ids.iter().all(|&d| d == 2));
        let train: HashSet<u64> = s.train.example_ids.iter().copied().collect();
        assert!(s.test.example_ids.iter().all(|id| !train.contains(id)));
        assert!(s.val.example_ids.iter().all(|id| !train.contains(id)));
    }

    #[test]
    fn few_shot_adds_k_per_class() {
        let p = SynthProtocol::leave_one_out(4, 0, 5).unwrap();
        let s = split_protocol(&p, SplitSizes { train: 2, val: 1, test: 3 }, 8, true).unwrap();
        let target: Vec<u8> = (0..s.train.len())
            .filter(|&i| s.train.domain_ids[i] == 0)
            .map(|i| s.train.labels[i])
            .collect();
        assert_eq!(target.iter().filter(|&&l| l == BONA_FIDE).count(), 5);
        assert_eq!(target.iter().filter(|&&l| l == ATTACK).count(), 5);
        let train: HashSet<u64> = s.train.example_ids.iter().copied().collect();
        assert!(s.test.example_ids.iter().all(|id| !train.contains(id)));
    }

    #[test]
    fn too_few_sources_with_tsr() {
        let p = SynthProtocol::leave_one_out(2, 0, 0).unwrap();
        let sizes = SplitSizes { train: 1, val: 1, test: 1 };
        assert!(split_protocol(&p, sizes, 8, true).is_err());
        assert!(split_protocol(&p, sizes, 8, false).is_ok());
        assert!(SynthProtocol::leave_one_out(3, 3, 0).is_err());
    }
}
