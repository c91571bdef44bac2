//! Reindexing between flattened token sequences and spatial token grids.
//!
//! A sequence holds `[T, C]` (or batched `[B, T, C]`) tokens where, when a
//! class token is present, it occupies row 0 and the remaining `H·W`
//! patch tokens follow in row-major spatial order. The grid form is
//! `[C, H, W]` (or `[B, C, H, W]`) with the class token kept aside.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TokenSequence {
    pub tokens: Tensor,
    pub has_class: bool,
    pub grid_h: usize,
    pub grid_w: usize,
}

#[derive(Clone, Debug)]
pub struct TokenGrid {
    pub grid: Tensor,
    /// `[C]`, or `[B, C]` for batched grids.
    pub class_token: Option<Tensor>,
}

impl TokenSequence {
    pub fn new(tokens: Tensor, has_class: bool, grid_h: usize, grid_w: usize) -> Result<Self> {
        let s = Self {
            tokens,
            has_class,
            grid_h,
            grid_w,
        };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        let t = match self.tokens.shape() {
            [t, _] | [_, t, _] => *t,
            s => return Err(Error::shape("token_sequence", format!("expected [T,C] or [B,T,C], got {s:?}"))),
        };
        let expected = self.grid_h * self.grid_w + usize::from(self.has_class);
        if t != expected || self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::shape(
                "token_sequence",
                format!(
                    "{t} tokens do not match a {}x{} grid{}",
                    self.grid_h,
                    self.grid_w,
                    if self.has_class { " plus class token" } else { "" }
                ),
            ));
        }
        Ok(())
    }

    pub fn batched(&self) -> bool {
        self.tokens.rank() == 3
    }

    pub fn width(&self) -> usize {
        *self.tokens.shape().last().expect("rank checked")
    }

    pub fn patch_count(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Patch tokens only, `[H·W, C]` or `[B, H·W, C]`.
    pub fn patches(&self) -> Result<Tensor> {
        let axis = self.tokens.rank() - 2;
        if self.has_class {
            self.tokens.narrow(axis, 1, self.patch_count())
        } else {
            Ok(self.tokens.clone())
        }
    }

    /// Class token row as `[1, C]` or `[B, 1, C]`.
    pub fn class_row(&self) -> Result<Option<Tensor>> {
        if !self.has_class {
            return Ok(None);
        }
        let axis = self.tokens.rank() - 2;
        self.tokens.narrow(axis, 0, 1).map(Some)
    }

    /// Replaces the patch tokens, keeping the class token row as is.
    pub fn with_patches(&self, patches: Tensor) -> Result<Self> {
        let tokens = match self.class_row()? {
            Some(cls) => Tensor::concat(&[cls, patches], self.tokens.rank() - 2)?,
            None => patches,
        };
        Self::new(tokens, self.has_class, self.grid_h, self.grid_w)
    }
}

/// Sequence → grid: token `h·W + w`, feature `c` lands at `(c, h, w)`.
pub fn seq_to_grid(s: &TokenSequence) -> Result<TokenGrid> {
    s.check()?;
    let c = s.width();
    let (h, w) = (s.grid_h, s.grid_w);
    let patches = s.patches()?;
    let grid = if s.batched() {
        let b = s.tokens.shape()[0];
        patches.reshape(&[b, h, w, c])?.permute(&[0, 3, 1, 2])?
    } else {
        patches.reshape(&[h, w, c])?.permute(&[2, 0, 1])?
    };
    let class_token = match s.class_row()? {
        Some(row) if s.batched() => Some(row.reshape(&[s.tokens.shape()[0], c])?),
        Some(row) => Some(row.reshape(&[c])?),
        None => None,
    };
    Ok(TokenGrid { grid, class_token })
}

/// Grid → sequence; exact inverse of [`seq_to_grid`].
pub fn grid_to_seq(g: &TokenGrid) -> Result<TokenSequence> {
    let (tokens, h, w) = match g.grid.shape() {
        [c, h, w] => (g.grid.permute(&[1, 2, 0])?.reshape(&[h * w, *c])?, *h, *w),
        [b, c, h, w] => (g.grid.permute(&[0, 2, 3, 1])?.reshape(&[*b, h * w, *c])?, *h, *w),
        s => return Err(Error::shape("grid_to_seq", format!("expected [C,H,W] or [B,C,H,W], got {s:?}"))),
    };
    let batched = g.grid.rank() == 4;
    let c = *tokens.shape().last().expect("rank >= 2");
    match &g.class_token {
        Some(cls) => {
            let row = if batched {
                cls.reshape(&[tokens.shape()[0], 1, c])?
            } else {
                cls.reshape(&[1, c])?
            };
            let axis = tokens.rank() - 2;
            TokenSequence::new(Tensor::concat(&[row, tokens], axis)?, true, h, w)
        }
        None => TokenSequence::new(tokens, false, h, w),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn row_major_placement() {
        // 4 tokens, 2 channels; token 3 → (h=1, w=1)
        let tokens = Tensor::new((0..8).map(|v| v as f64).collect(), &[4, 2]).unwrap();
        let s = TokenSequence::new(tokens, false, 2, 2).unwrap();
        let g = seq_to_grid(&s).unwrap();
        assert_eq!(g.grid.shape(), &[2, 2, 2]);
        // grid[c, 1, 1] == token 3 feature c
        assert_eq!(g.grid.data()[3], 6.0);
        assert_eq!(g.grid.data()[4 + 3], 7.0);
    }

    #[test]
    fn base_scale_grid_with_class_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tokens = Tensor::randn(&[197, 16], 1.0, &mut rng);
        let s = TokenSequence::new(tokens.clone(), true, 14, 14).unwrap();
        let g = seq_to_grid(&s).unwrap();
        assert_eq!(g.grid.shape(), &[16, 14, 14]);
        assert_eq!(g.class_token.as_ref().unwrap().data(), &tokens.data()[..16]);
        let back = grid_to_seq(&g).unwrap();
        assert_eq!(back.tokens.data(), tokens.data());
        assert!(back.has_class);
    }

    #[test]
    fn single_cell_grid() {
        let g = TokenGrid {
            grid: Tensor::new(vec![1.0, 2.0, 3.0], &[3, 1, 1]).unwrap(),
            class_token: None,
        };
        let s = grid_to_seq(&g).unwrap();
        assert_eq!(s.tokens.shape(), &[1, 3]);
        assert_eq!(s.tokens.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn grid_element_to_sequence_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = Tensor::randn(&[8, 3, 3], 1.0, &mut rng);
        let s = grid_to_seq(&TokenGrid {
            grid: grid.clone(),
            class_token: None,
        })
        .unwrap();
        for c in 0..8 {
            // (c, 2, 1) → row 2·3 + 1 = 7
            assert_eq!(s.tokens.data()[7 * 8 + c], grid.data()[c * 9 + 2 * 3 + 1]);
        }
    }

    #[test]
    fn token_count_must_match_grid() {
        let tokens = Tensor::zeros(&[5, 2]);
        assert!(TokenSequence::new(tokens.clone(), false, 2, 2).is_err());
        assert!(TokenSequence::new(tokens, true, 2, 2).is_ok());
    }

    #[test]
    fn batched_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tokens = Tensor::randn(&[3, 10, 4], 1.0, &mut rng);
        let s = TokenSequence::new(tokens.clone(), true, 3, 3).unwrap();
        let g = seq_to_grid(&s).unwrap();
        assert_eq!(g.grid.shape(), &[3, 4, 3, 3]);
        assert_eq!(g.class_token.as_ref().unwrap().shape(), &[3, 4]);
        assert_eq!(grid_to_seq(&g).unwrap().tokens.data(), tokens.data());
    }
}
