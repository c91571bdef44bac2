//! Training objective: cross-entropy on the two class logits plus Token
//! Style Regularization, the squared Frobenius distance between Gram
//! matrices of bona fide token maps from different domains.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::TokenGrid;
use crate::tensor::Tensor;

/// Label of a genuine (live) example.
pub const BONA_FIDE: u8 = 0;
/// Label of a presentation attack.
pub const ATTACK: u8 = 1;

/// Suggested regularization weight.
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Images with binary labels and domain identifiers.
#[derive(Clone, Debug)]
pub struct DomainBatch {
    /// `[B, 3, H, W]`
    pub images: Tensor,
    pub labels: Vec<u8>,
    pub domain_ids: Vec<usize>,
    /// Unique per generated example, used to check split disjointness.
    pub example_ids: Vec<u64>,
}

impl DomainBatch {
    pub fn new(images: Tensor, labels: Vec<u8>, domain_ids: Vec<usize>, example_ids: Vec<u64>) -> Result<Self> {
        let n = images.shape().first().copied().unwrap_or(0);
        if images.rank() != 4 || labels.len() != n || domain_ids.len() != n || example_ids.len() != n {
            return Err(Error::shape(
                "domain_batch",
                format!(
                    "images {:?} with {} labels, {} domains, {} ids",
                    images.shape(),
                    labels.len(),
                    domain_ids.len(),
                    example_ids.len()
                ),
            ));
        }
        if labels.iter().any(|&l| l > ATTACK) {
            return Err(Error::InvalidArgument("labels must be 0 (bona fide) or 1 (attack)".into()));
        }
        Ok(Self {
            images,
            labels,
            domain_ids,
            example_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Result<DomainBatch> {
        Ok(DomainBatch {
            images: self.images.index_select(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            domain_ids: indices.iter().map(|&i| self.domain_ids[i]).collect(),
            example_ids: indices.iter().map(|&i| self.example_ids[i]).collect(),
        })
    }

    pub fn concat(parts: &[DomainBatch]) -> Result<DomainBatch> {
        let images: Vec<Tensor> = parts.iter().map(|p| p.images.clone()).collect();
        Ok(DomainBatch {
            images: Tensor::concat(&images, 0)?,
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            domain_ids: parts.iter().flat_map(|p| p.domain_ids.iter().copied()).collect(),
            example_ids: parts.iter().flat_map(|p| p.example_ids.iter().copied()).collect(),
        })
    }

    pub fn class_labels(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }
}

/// Symmetric `[C, C]` channel second-moment matrix.
#[derive(Clone, Debug)]
pub struct GramMatrix(pub Tensor);

impl GramMatrix {
    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }
}

/// `G[k,k'] = Σ_{h,w} z[k,h,w]·z[k',h,w] / (C·H·W)` for a `[C,H,W]` map.
pub fn gram(z: &TokenGrid) -> Result<GramMatrix> {
    gram_tensor(&z.grid)
}

/// Gram matrix of a `[C, H, W]` map, or of `[N, C, H, W]` maps pooled by
/// concatenating them along the spatial axis.
pub fn gram_tensor(z: &Tensor) -> Result<GramMatrix> {
    let (c, flat) = match z.shape() {
        [c, h, w] => (*c, z.reshape(&[*c, h * w])?),
        [n, c, h, w] => (*c, z.permute(&[1, 0, 2, 3])?.reshape(&[*c, n * h * w])?),
        s => return Err(Error::shape("gram", format!("expected [C,H,W] or [N,C,H,W], got {s:?}"))),
    };
    let positions = flat.shape()[1];
    let g = flat.matmul(&flat.transpose()?)?.scale(1.0 / (c * positions) as f64);
    Ok(GramMatrix(g))
}

/// `‖G(z1) − G(z2)‖²_F`.
pub fn tsr_pair(z1: &TokenGrid, z2: &TokenGrid) -> Result<Tensor> {
    gram_distance(&gram(z1)?, &gram(z2)?)
}

pub fn gram_distance(g1: &GramMatrix, g2: &GramMatrix) -> Result<Tensor> {
    if g1.channels() != g2.channels() {
        return Err(Error::mismatch("tsr_pair", g1.0.shape(), g2.0.shape()));
    }
    Ok(g1.0.sub(&g2.0)?.frobenius_sq())
}

/// How bona fide maps of one domain are combined before comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TsrMode {
    /// One pooled Gram matrix per domain.
    Aggregate,
    /// Average over all cross-domain pairs of per-example Gram matrices.
    PerExample,
}

impl fmt::Display for TsrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TsrMode::Aggregate => "aggregate",
            TsrMode::PerExample => "per_example",
        })
    }
}

impl FromStr for TsrMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aggregate" => Ok(TsrMode::Aggregate),
            "per_example" => Ok(TsrMode::PerExample),
            _ => Err(Error::Config(format!("unknown tsr mode `{s}`"))),
        }
    }
}

/// Averaged style regularizer and the number of domain pairs it covers.
#[derive(Clone, Debug)]
pub struct TsrValue {
    pub loss: Tensor,
    pub pairs: usize,
}

/// Bona fide example indices grouped by domain, in domain order.
pub fn bona_fide_by_domain(labels: &[u8], domain_ids: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (&l, &d)) in labels.iter().zip(domain_ids).enumerate() {
        if l == BONA_FIDE {
            groups.entry(d).or_default().push(i);
        }
    }
    groups
}

/// Mean of the pairwise regularizer over every unordered pair of domains
/// that have bona fide examples in `maps` (`[B, C, H, W]`). Attack
/// examples never enter. Fewer than two such domains yields zero.
pub fn tsr_average(maps: &Tensor, labels: &[u8], domain_ids: &[usize], mode: TsrMode) -> Result<TsrValue> {
    let b = maps.shape().first().copied().unwrap_or(0);
    if maps.rank() != 4 || labels.len() != b || domain_ids.len() != b {
        return Err(Error::shape(
            "tsr_average",
            format!("maps {:?} with {} labels and {} domains", maps.shape(), labels.len(), domain_ids.len()),
        ));
    }
    let groups = bona_fide_by_domain(labels, domain_ids);
    if groups.len() < 2 {
        return Ok(TsrValue {
            loss: Tensor::scalar(0.0),
            pairs: 0,
        });
    }
    // Per domain: one pooled Gram, or the list of per-example Grams.
    let mut grams: Vec<Vec<GramMatrix>> = Vec::with_capacity(groups.len());
    for idx in groups.values() {
        let sel = maps.index_select(idx)?;
        grams.push(match mode {
            TsrMode::Aggregate => vec![gram_tensor(&sel)?],
            TsrMode::PerExample => (0..idx.len())
                .map(|k| gram_tensor(&sel.narrow(0, k, 1)?.reshape(&sel.shape()[1..])?))
                .collect::<Result<_>>()?,
        });
    }
    let mut total: Option<Tensor> = None;
    let mut pairs = 0;
    for i in 0..grams.len() {
        for j in i + 1..grams.len() {
            let mut pair_terms = Vec::new();
            for gi in &grams[i] {
                for gj in &grams[j] {
                    pair_terms.push(gram_distance(gi, gj)?);
                }
            }
            let n = pair_terms.len() as f64;
            let mut pair = pair_terms[0].clone();
            for t in &pair_terms[1..] {
                pair = pair.add(t)?;
            }
            let pair = pair.scale(1.0 / n);
            total = Some(match total {
                Some(t) => t.add(&pair)?,
                None => pair,
            });
            pairs += 1;
        }
    }
    let loss = total.expect("at least one pair").scale(1.0 / pairs as f64);
    Ok(TsrValue { loss, pairs })
}

/// `L_total = L_BCE + λ·L_TSR`, with `L_BCE` the mean cross-entropy of the
/// two-class logits.
pub fn total_loss(logits: &Tensor, labels: &[u8], tsr: &Tensor, lambda: f64) -> Result<Tensor> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {lambda}")));
    }
    let bce = bce_loss(logits, labels)?;
    if lambda == 0.0 {
        return Ok(bce);
    }
    bce.add(&tsr.scale(lambda))
}

pub fn bce_loss(logits: &Tensor, labels: &[u8]) -> Result<Tensor> {
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    logits.cross_entropy(&labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(t: Tensor) -> TokenGrid {
        TokenGrid {
            grid: t,
            class_token: None,
        }
    }

    #[test]
    fn gram_of_zeros() {
        let g = gram(&grid(Tensor::zeros(&[3, 2, 2]))).unwrap();
        assert!(g.0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gram_hand_case() {
        let z = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 1, 2]).unwrap();
        let g = gram(&grid(z)).unwrap();
        assert_eq!(g.0.data(), &[5.0 / 4.0, 11.0 / 4.0, 11.0 / 4.0, 25.0 / 4.0]);
    }

    #[test]
    fn gram_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = gram(&grid(Tensor::randn(&[5, 3, 4], 1.0, &mut rng))).unwrap();
        let d = g.0.data();
        for i in 0..5 {
            for j in 0..5 {
                assert!((d[i * 5 + j] - d[j * 5 + i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tsr_pair_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Tensor::randn(&[4, 3, 3], 1.0, &mut rng);
        assert_eq!(tsr_pair(&grid(z.clone()), &grid(z.clone())).unwrap().item().unwrap(), 0.0);
        assert_eq!(tsr_pair(&grid(z.clone()), &grid(z.neg())).unwrap().item().unwrap(), 0.0);
        let other = grid(Tensor::zeros(&[3, 3, 3]));
        assert!(tsr_pair(&grid(z), &other).is_err());
    }

    #[test]
    fn degenerate_batches_give_zero() {
        let maps = Tensor::ones(&[3, 2, 2, 2]);
        let v = tsr_average(&maps, &[0, 0, 1], &[0, 0, 1], TsrMode::Aggregate).unwrap();
        assert_eq!(v.pairs, 0);
        assert_eq!(v.loss.item().unwrap(), 0.0);
    }

    #[test]
    fn three_domains_three_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let maps = Tensor::randn(&[6, 2, 2, 2], 1.0, &mut rng);
        let v = tsr_average(&maps, &[0, 1, 0, 0, 1, 0], &[0, 0, 1, 2, 2, 2], TsrMode::Aggregate).unwrap();
        assert_eq!(v.pairs, 3);
        assert!(v.loss.item().unwrap() > 0.0);
        let v = tsr_average(&maps, &[0, 1, 0, 0, 1, 0], &[0, 0, 1, 2, 2, 2], TsrMode::PerExample).unwrap();
        assert_eq!(v.pairs, 3);
    }

    #[test]
    fn lambda_zero_is_plain_bce() {
        let logits = Tensor::new(vec![0.3, -0.2, 1.0, 0.5], &[2, 2]).unwrap();
        let tsr = Tensor::scalar(5.0);
        let bce = bce_loss(&logits, &[0, 1]).unwrap().item().unwrap();
        assert_eq!(total_loss(&logits, &[0, 1], &tsr, 0.0).unwrap().item().unwrap(), bce);
        let with = total_loss(&logits, &[0, 1], &tsr, 0.1).unwrap().item().unwrap();
        assert!((with - bce - 0.5).abs() < 1e-12);
        assert!(total_loss(&logits, &[0, 1], &tsr, -1.0).is_err());
    }

    #[test]
    fn batch_validation() {
        let imgs = Tensor::zeros(&[2, 3, 4, 4]);
        assert!(DomainBatch::new(imgs.clone(), vec![0, 2], vec![0, 0], vec![0, 1]).is_err());
        assert!(DomainBatch::new(imgs.clone(), vec![0], vec![0], vec![0]).is_err());
        let b = DomainBatch::new(imgs, vec![0, 1], vec![3, 4], vec![7, 8]).unwrap();
        let s = b.select(&[1]).unwrap();
        assert_eq!((s.labels[0], s.domain_ids[0], s.example_ids[0]), (1, 4, 8));
    }
}
