//! A small pre-norm vision transformer that hosts the adapters.

use rand::Rng;

use crate::adapter::{AdapterConfig, SAdapter};
use crate::error::{Error, Result};
use crate::geometry::TokenSequence;
use crate::module::{join, Linear, Module};
use crate::tensor::{no_grad, Tensor};

const LN_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ViTConfig {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub patch: usize,
    pub image: usize,
    pub mlp_ratio: usize,
    pub channels: usize,
    pub classes: usize,
}

impl ViTConfig {
    /// Desk-scale default: 32px images, 8px patches, 4 blocks of width 64.
    pub fn toy() -> Self {
        Self {
            depth: 4,
            width: 64,
            heads: 4,
            patch: 8,
            image: 32,
            mlp_ratio: 4,
            channels: 3,
            classes: 2,
        }
    }

    fn reference(depth: usize, width: usize, heads: usize) -> Self {
        Self {
            depth,
            width,
            heads,
            patch: 16,
            image: 224,
            mlp_ratio: 4,
            channels: 3,
            classes: 2,
        }
    }

    pub fn tiny() -> Self {
        Self::reference(12, 192, 3)
    }

    pub fn small() -> Self {
        Self::reference(12, 384, 6)
    }

    pub fn base() -> Self {
        Self::reference(12, 768, 12)
    }

    pub fn large() -> Self {
        Self::reference(24, 1024, 16)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "tiny" => Ok(Self::tiny()),
            "small" => Ok(Self::small()),
            "base" => Ok(Self::base()),
            "large" => Ok(Self::large()),
            _ => Err(Error::Config(format!("unknown backbone preset `{name}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.depth, self.width, self.heads, self.patch, self.image, self.mlp_ratio, self.channels, self.classes];
        if positive.contains(&0) {
            return Err(Error::Config("backbone extents must be positive".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!("width {} not divisible by {} heads", self.width, self.heads)));
        }
        if self.image % self.patch != 0 {
            return Err(Error::Config(format!("image {} not divisible by patch {}", self.image, self.patch)));
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image / self.patch
    }

    pub fn patch_count(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// Patch tokens plus the class token.
    pub fn token_count(&self) -> usize {
        self.patch_count() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    pub fn hidden(&self) -> usize {
        self.width * self.mlp_ratio
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    heads: usize,
}

impl Attention {
    pub fn init<R: Rng + ?Sized>(width: usize, heads: usize, rng: &mut R) -> Self {
        let std = 1.0 / (width as f64).sqrt();
        Self {
            query: Linear::init(width, width, std, rng),
            key: Linear::init(width, width, std, rng),
            value: Linear::init(width, width, std, rng),
            output: Linear::init(width, width, std, rng),
            heads,
        }
    }

    pub fn from_parts(query: Linear, key: Linear, value: Linear, output: Linear, heads: usize) -> Result<Self> {
        let w = query.input_dim();
        if heads == 0 || w % heads != 0 {
            return Err(Error::Config(format!("width {w} not divisible by {heads} heads")));
        }
        Ok(Self {
            query,
            key,
            value,
            output,
            heads,
        })
    }

    fn split_heads(&self, x: &Tensor, b: usize, t: usize) -> Result<Tensor> {
        let dh = x.shape()[2] / self.heads;
        x.reshape(&[b, t, self.heads, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b * self.heads, t, dh])
    }

    /// Attention probabilities `[B·heads, T, T]`.
    pub fn weights(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t) = self.dims(x)?;
        let q = self.split_heads(&self.query.forward(x)?, b, t)?;
        let k = self.split_heads(&self.key.forward(x)?, b, t)?;
        let dh = (self.query.output_dim() / self.heads) as f64;
        q.matmul(&k.transpose()?)?.scale(1.0 / dh.sqrt()).softmax_lastdim()
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize)> {
        match x.shape() {
            [b, t, c] if *c == self.query.input_dim() => Ok((*b, *t)),
            s => Err(Error::shape(
                "mhsa",
                format!("expected [B, T, {}], got {s:?}", self.query.input_dim()),
            )),
        }
    }

    /// Multi-head self-attention over `[B, T, C]` tokens.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t) = self.dims(x)?;
        let c = x.shape()[2];
        let attn = self.weights(x)?;
        let v = self.split_heads(&self.value.forward(x)?, b, t)?;
        let mixed = attn
            .matmul(&v)?
            .reshape(&[b, self.heads, t, c / self.heads])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, t, c])?;
        self.output.forward(&mixed)
    }
}

impl Module for Attention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub shift: Tensor,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gain: Tensor::ones(&[width]).to_param(),
            shift: Tensor::zeros(&[width]).to_param(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layernorm(&self.gain, &self.shift, LN_EPS)
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "gain"), &self.gain);
        f(&join(prefix, "shift"), &self.shift);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "gain"), &mut self.gain);
        f(&join(prefix, "shift"), &mut self.shift);
    }
}

/// Pre-norm transformer block: `x + MSA(LN(x))`, then `h + MLP(LN(h))`.
#[derive(Clone, Debug)]
pub struct ViTBlock {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ViTBlock {
    pub fn init<R: Rng + ?Sized>(cfg: &ViTConfig, rng: &mut R) -> Self {
        let (w, h) = (cfg.width, cfg.hidden());
        Self {
            norm1: LayerNorm::new(w),
            attn: Attention::init(w, cfg.heads, rng),
            norm2: LayerNorm::new(w),
            fc1: Linear::init(w, h, 1.0 / (w as f64).sqrt(), rng),
            fc2: Linear::init(h, w, 1.0 / (h as f64).sqrt(), rng),
        }
    }

    /// Attention sub-layer with its residual.
    pub fn msa(&self, x: &Tensor) -> Result<Tensor> {
        x.add(&self.attn.forward(&self.norm1.forward(x)?)?)
    }

    /// MLP sub-layer with its residual.
    pub fn mlp(&self, x: &Tensor) -> Result<Tensor> {
        let hidden = self.fc1.forward(&self.norm2.forward(x)?)?.gelu();
        x.add(&self.fc2.forward(&hidden)?)
    }
}

impl Module for ViTBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.fc1.visit(&join(prefix, "mlp.fc1"), f);
        self.fc2.visit(&join(prefix, "mlp.fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.fc1.visit_mut(&join(prefix, "mlp.fc1"), f);
        self.fc2.visit_mut(&join(prefix, "mlp.fc2"), f);
    }
}

/// A block with optional adapters after its attention and MLP sub-layers:
/// `Y = A_mlp(W_mlp(A_msa(W_msa(X))))`.
#[derive(Clone, Debug)]
pub struct AdaptedBlock {
    pub block: ViTBlock,
    pub msa_adapter: Option<SAdapter>,
    pub mlp_adapter: Option<SAdapter>,
}

/// Block output plus the last adapter's token map, if any adapter ran.
pub struct BlockOutput {
    pub tokens: Tensor,
    pub token_map: Option<Tensor>,
}

impl AdaptedBlock {
    pub fn plain(block: ViTBlock) -> Self {
        Self {
            block,
            msa_adapter: None,
            mlp_adapter: None,
        }
    }

    pub fn forward(&self, x: &Tensor, grid_side: usize) -> Result<BlockOutput> {
        let mut token_map = None;
        let mut run = |adapter: &Option<SAdapter>, t: Tensor| -> Result<Tensor> {
            match adapter {
                Some(a) => {
                    let out = a.apply(&TokenSequence::new(t, true, grid_side, grid_side)?)?;
                    token_map = Some(out.token_map);
                    Ok(out.tokens.tokens)
                }
                None => Ok(t),
            }
        };
        let h = run(&self.msa_adapter, self.block.msa(x)?)?;
        let y = run(&self.mlp_adapter, self.block.mlp(&h)?)?;
        Ok(BlockOutput { tokens: y, token_map })
    }
}

impl Module for AdaptedBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.block.visit(prefix, f);
        if let Some(a) = &self.msa_adapter {
            a.visit(&join(prefix, "msa_adapter"), f);
        }
        if let Some(a) = &self.mlp_adapter {
            a.visit(&join(prefix, "mlp_adapter"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.block.visit_mut(prefix, f);
        if let Some(a) = &mut self.msa_adapter {
            a.visit_mut(&join(prefix, "msa_adapter"), f);
        }
        if let Some(a) = &mut self.mlp_adapter {
            a.visit_mut(&join(prefix, "mlp_adapter"), f);
        }
    }
}

/// Wraps `block` with both adapters; the block is frozen and the
/// adapters are made trainable.
pub fn insert_into_block(mut block: ViTBlock, mut a_msa: SAdapter, mut a_mlp: SAdapter) -> Result<AdaptedBlock> {
    let width = block.attn.query.input_dim();
    for a in [&a_msa, &a_mlp] {
        if a.model_width() != width {
            return Err(Error::shape(
                "insert_into_block",
                format!("adapter width {} vs block width {width}", a.model_width()),
            ));
        }
    }
    block.set_trainable(false);
    a_msa.set_trainable(true);
    a_mlp.set_trainable(true);
    Ok(AdaptedBlock {
        block,
        msa_adapter: Some(a_msa),
        mlp_adapter: Some(a_mlp),
    })
}

pub struct ForwardOutput {
    /// `[B, classes]`
    pub logits: Tensor,
    /// Token map of the last adapter in the last block, `[B, C_a, H, W]`.
    pub token_map: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct VisionTransformer {
    config: ViTConfig,
    pub patch_embed: Linear,
    pub cls_token: Tensor,
    pub pos_embed: Tensor,
    pub blocks: Vec<AdaptedBlock>,
    pub norm: LayerNorm,
    pub head: Linear,
}

impl VisionTransformer {
    /// Randomly initialized backbone; every parameter starts trainable.
    pub fn new<R: Rng + ?Sized>(config: ViTConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let w = config.width;
        let patch_embed = Linear::init(config.patch_dim(), w, 1.0 / (config.patch_dim() as f64).sqrt(), rng);
        let cls_token = Tensor::randn(&[w], 0.02, rng).to_param();
        let pos_embed = Tensor::randn(&[config.token_count(), w], 0.02, rng).to_param();
        let blocks = (0..config.depth)
            .map(|_| AdaptedBlock::plain(ViTBlock::init(&config, rng)))
            .collect();
        let head = Linear::init(w, config.classes, 0.02, rng);
        Ok(Self {
            config,
            patch_embed,
            cls_token,
            pos_embed,
            blocks,
            norm: LayerNorm::new(w),
            head,
        })
    }

    pub fn config(&self) -> &ViTConfig {
        &self.config
    }

    /// Freezes the backbone, keeps the head trainable and inserts a pair
    /// of fresh adapters into every block.
    pub fn attach_adapters<R: Rng + ?Sized>(&mut self, cfg: &AdapterConfig, rng: &mut R) -> Result<()> {
        self.set_trainable(false);
        self.head.set_trainable(true);
        let width = self.config.width;
        for slot in &mut self.blocks {
            let a_msa = SAdapter::init(width, cfg, rng)?;
            let a_mlp = SAdapter::init(width, cfg, rng)?;
            *slot = insert_into_block(slot.block.clone(), a_msa, a_mlp)?;
        }
        Ok(())
    }

    pub fn adapter_parameter_count(&self) -> usize {
        let mut n = 0;
        for b in &self.blocks {
            for a in [&b.msa_adapter, &b.mlp_adapter].into_iter().flatten() {
                n += a.parameter_count();
            }
        }
        n
    }

    /// `[B, C, S, S]` images → `[B·P, C·p·p]` flattened patches, row-major
    /// over the patch grid.
    pub fn patchify(&self, images: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        let b = match images.shape() {
            [b, ch, h, w] if *ch == c.channels && *h == c.image && *w == c.image => *b,
            s => {
                return Err(Error::shape(
                    "patchify",
                    format!("expected [B, {}, {}, {}], got {s:?}", c.channels, c.image, c.image),
                ))
            }
        };
        let g = c.grid_side();
        images
            .reshape(&[b, c.channels, g, c.patch, g, c.patch])?
            .permute(&[0, 2, 4, 1, 3, 5])?
            .reshape(&[b * g * g, c.patch_dim()])
    }

    /// Patch embedding, class token and positions: `[B, T, C]`.
    pub fn embed(&self, images: &Tensor) -> Result<Tensor> {
        let b = images.shape()[0];
        let c = &self.config;
        let patches = self
            .patch_embed
            .forward(&self.patchify(images)?)?
            .reshape(&[b, c.patch_count(), c.width])?;
        let cls = self.cls_token.reshape(&[1, c.width])?.expand_leading(b)?;
        Tensor::concat(&[cls, patches], 1)?.add_trailing(&self.pos_embed)
    }

    pub fn forward(&self, images: &Tensor) -> Result<ForwardOutput> {
        let mut x = self.embed(images)?;
        let mut token_map = None;
        for block in &self.blocks {
            let out = block.forward(&x, self.config.grid_side())?;
            x = out.tokens;
            if out.token_map.is_some() {
                token_map = out.token_map;
            }
        }
        let b = x.shape()[0];
        let cls = x.narrow(1, 0, 1)?.reshape(&[b, self.config.width])?;
        let logits = self.head.forward(&self.norm.forward(&cls)?)?;
        Ok(ForwardOutput { logits, token_map })
    }

    /// Softmax probability of the attack class (label 1) per image,
    /// evaluated in chunks without recording a graph.
    pub fn attack_scores(&self, images: &Tensor, chunk: usize) -> Result<Vec<f64>> {
        let n = images.shape()[0];
        let mut scores = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let len = chunk.max(1).min(n - start);
            let logits = no_grad(|| self.forward(&images.narrow(0, start, len)?))?.logits;
            let probs = logits.softmax_lastdim()?;
            scores.extend(probs.data().chunks(self.config.classes).map(|r| r[1]));
            start += len;
        }
        Ok(scores)
    }
}

impl Module for VisionTransformer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.patch_embed.visit(&join(prefix, "patch_embed"), f);
        f(&join(prefix, "cls_token"), &self.cls_token);
        f(&join(prefix, "pos_embed"), &self.pos_embed);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.norm.visit(&join(prefix, "norm"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.patch_embed.visit_mut(&join(prefix, "patch_embed"), f);
        f(&join(prefix, "cls_token"), &mut self.cls_token);
        f(&join(prefix, "pos_embed"), &mut self.pos_embed);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
