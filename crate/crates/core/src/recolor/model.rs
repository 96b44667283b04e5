use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::nn::{dropout, normal_init, stochastic_depth};
use crate::diff::{AttnShape, Graph, LayerNorm, Linear, Mode, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// How an out-block merges the feature map popped from the skip stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipFusion {
    /// `x + skip`.
    Add,
    /// `Linear([x, skip])` from 2D back to D.
    ConcatLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmallUViTConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_factor: usize,
    pub depth_in: usize,
    pub depth_mid: usize,
    pub depth_out: usize,
    pub dropout: f64,
    pub stochastic_depth: f64,
    pub in_channels: usize,
    pub out_channels: usize,
    pub skip_fusion: SkipFusion,
}

impl Default for SmallUViTConfig {
    fn default() -> Self {
        Self {
            image_height: 256,
            image_width: 256,
            patch_size: 16,
            embed_dim: 192,
            heads: 9,
            head_dim: 32,
            mlp_factor: 2,
            depth_in: 3,
            depth_mid: 1,
            depth_out: 3,
            dropout: 0.1,
            stochastic_depth: 0.1,
            in_channels: 3,
            out_channels: 3,
            skip_fusion: SkipFusion::Add,
        }
    }
}

impl SmallUViTConfig {
    /// 64×64 images, 8-pixel patches, width 64, 4 heads, one block per stage.
    pub fn toy() -> Self {
        Self {
            image_height: 64,
            image_width: 64,
            patch_size: 8,
            embed_dim: 64,
            heads: 4,
            head_dim: 16,
            depth_in: 1,
            depth_mid: 1,
            depth_out: 1,
            ..Self::default()
        }
    }

    /// Tiny clone with every mechanism enabled, for finite-difference checks.
    pub fn reduced() -> Self {
        Self {
            image_height: 8,
            image_width: 8,
            patch_size: 4,
            embed_dim: 8,
            heads: 2,
            head_dim: 4,
            depth_in: 1,
            depth_mid: 1,
            depth_out: 1,
            dropout: 0.0,
            stochastic_depth: 0.0,
            skip_fusion: SkipFusion::ConcatLinear,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || !self.image_height.is_multiple_of(p) || !self.image_width.is_multiple_of(p) {
            return Err(Error::InvalidInput(format!(
                "image {}x{} is not divisible by patch size {p}",
                self.image_height, self.image_width
            )));
        }
        if self.depth_in != self.depth_out {
            return Err(Error::InvalidInput(
                "depth_in and depth_out must match for skip pairing".into(),
            ));
        }
        if self.embed_dim == 0
            || self.heads == 0
            || self.head_dim == 0
            || self.in_channels == 0
            || self.out_channels == 0
        {
            return Err(Error::InvalidInput("model widths must be positive".into()));
        }
        for (name, r) in [
            ("dropout", self.dropout),
            ("stochastic_depth", self.stochastic_depth),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidInput(format!(
                    "{name} rate {r} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        (self.image_height / self.patch_size) * (self.image_width / self.patch_size)
    }

    /// Length of one shifted-patch vector: p² · 5 · C.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 5 * self.in_channels
    }
}

#[derive(Debug, Clone)]
struct Block {
    norm1: LayerNorm,
    qkv: Linear,
    temperature: ParamId,
    proj: Linear,
    norm2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

/// U-shaped vision transformer with shifted patch tokens and locality
/// self-attention.
#[derive(Debug, Clone)]
pub struct SmallUViT {
    pub config: SmallUViTConfig,
    pub store: ParamStore,
    spt_norm: LayerNorm,
    spt_proj: Linear,
    pos: ParamId,
    in_blocks: Vec<Block>,
    mid_blocks: Vec<Block>,
    out_blocks: Vec<Block>,
    skip_proj: Vec<Linear>,
    head_norm: LayerNorm,
    head_proj: Linear,
    conv_w: ParamId,
    conv_b: ParamId,
    unpatch: Vec<usize>,
}

impl Block {
    fn new(
        store: &mut ParamStore,
        name: &str,
        c: &SmallUViTConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let d = c.embed_dim;
        let inner = c.heads * c.head_dim;
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d)?,
            qkv: Linear::new(store, &format!("{name}.attn.qkv"), d, 3 * inner, false, rng)?,
            temperature: store.add(
                format!("{name}.attn.temperature"),
                Tensor::full(&[c.heads], (c.head_dim as f64).sqrt()),
                true,
            )?,
            proj: Linear::new(store, &format!("{name}.attn.proj"), inner, d, true, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d)?,
            ff1: Linear::new(
                store,
                &format!("{name}.ff.0"),
                d,
                c.mlp_factor * d,
                true,
                rng,
            )?,
            ff2: Linear::new(
                store,
                &format!("{name}.ff.1"),
                c.mlp_factor * d,
                d,
                true,
                rng,
            )?,
        })
    }
}

/// Noise settings threaded through a forward pass.
struct Ctx<'a, R: Rng> {
    mode: Mode,
    batch: usize,
    rng: &'a mut R,
}

impl SmallUViT {
    pub fn new(config: SmallUViTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let d = c.embed_dim;
        let spt_norm = LayerNorm::new(&mut store, "spt.norm", c.patch_dim())?;
        let spt_proj = Linear::new(&mut store, "spt.proj", c.patch_dim(), d, true, &mut rng)?;
        let pos = store.add(
            "pos_embed",
            normal_init(&[c.tokens(), d], 0.02, &mut rng),
            true,
        )?;
        let mut stage = |prefix: &str, n: usize, store: &mut ParamStore| -> Result<Vec<Block>> {
            (0..n)
                .map(|i| Block::new(store, &format!("{prefix}.{i}"), c, &mut rng))
                .collect()
        };
        let in_blocks = stage("in_blocks", c.depth_in, &mut store)?;
        let mid_blocks = stage("mid_blocks", c.depth_mid, &mut store)?;
        let out_blocks = stage("out_blocks", c.depth_out, &mut store)?;
        let skip_proj = match c.skip_fusion {
            SkipFusion::Add => vec![],
            SkipFusion::ConcatLinear => (0..c.depth_out)
                .map(|i| {
                    Linear::new(
                        &mut store,
                        &format!("out_blocks.{i}.skip"),
                        2 * d,
                        d,
                        true,
                        &mut rng,
                    )
                })
                .collect::<Result<_>>()?,
        };
        let p = c.patch_size;
        let head_norm = LayerNorm::new(&mut store, "head.norm", d)?;
        let head_proj = Linear::new(
            &mut store,
            "head.proj",
            d,
            p * p * c.out_channels,
            true,
            &mut rng,
        )?;
        let conv_w = store.add(
            "head.conv.weight",
            normal_init(
                &[c.out_channels, c.out_channels, 3, 3],
                1.0 / ((9 * c.out_channels) as f64).sqrt(),
                &mut rng,
            ),
            true,
        )?;
        let conv_b = store.add("head.conv.bias", Tensor::zeros(&[c.out_channels]), true)?;
        let unpatch = unpatch_index(c.image_height, c.image_width, p, c.out_channels);
        Ok(Self {
            config,
            store,
            spt_norm,
            spt_proj,
            pos,
            in_blocks,
            mid_blocks,
            out_blocks,
            skip_proj,
            head_norm,
            head_proj,
            conv_w,
            conv_b,
            unpatch,
        })
    }

    pub fn with_params(config: SmallUViTConfig, params: &ParamStore) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.store.load_values(params)?;
        Ok(m)
    }

    pub fn trainable_parameters(&self) -> usize {
        self.store.trainable_count()
    }

    fn block<R: Rng>(&self, g: &mut Graph, b: &Block, x: Var, ctx: &mut Ctx<'_, R>) -> Result<Var> {
        let c = &self.config;
        let s = &self.store;
        let h = b.norm1.forward(g, s, x)?;
        let qkv = b.qkv.forward(g, s, h)?;
        let temp = g.param(s, b.temperature);
        let shape = AttnShape {
            batch: ctx.batch,
            seq: c.tokens(),
            heads: c.heads,
            head_dim: c.head_dim,
        };
        let a = g.attention(qkv, temp, shape)?;
        let a = b.proj.forward(g, s, a)?;
        let a = stochastic_depth(g, a, c.stochastic_depth, ctx.batch, ctx.mode, ctx.rng)?;
        let x = g.add(x, a)?;

        let h = b.norm2.forward(g, s, x)?;
        let f = b.ff1.forward(g, s, h)?;
        let f = dropout(g, f, c.dropout, ctx.mode, ctx.rng)?;
        let f = g.gelu(f);
        let f = b.ff2.forward(g, s, f)?;
        let f = dropout(g, f, c.dropout, ctx.mode, ctx.rng)?;
        let f = stochastic_depth(g, f, c.stochastic_depth, ctx.batch, ctx.mode, ctx.rng)?;
        g.add(x, f)
    }

    /// Token embeddings `[B·N, D]` for a `[B, C, H, W]` input.
    pub fn tokenize(&self, g: &mut Graph, x: &Tensor) -> Result<Var> {
        let c = &self.config;
        let s = x.shape();
        if s.len() != 4 || s[1] != c.in_channels || s[2] != c.image_height || s[3] != c.image_width
        {
            return Err(Error::Shape(format!(
                "input {:?} does not match model input [B, {}, {}, {}]",
                s, c.in_channels, c.image_height, c.image_width
            )));
        }
        let patches = shifted_patches(
            x.data(),
            s[0],
            c.in_channels,
            c.image_height,
            c.image_width,
            c.patch_size,
        );
        let t = g.constant(Tensor::new(&[s[0] * c.tokens(), c.patch_dim()], patches)?);
        let t = self.spt_norm.forward(g, &self.store, t)?;
        let t = self.spt_proj.forward(g, &self.store, t)?;
        let pos = g.param(&self.store, self.pos);
        g.add_broadcast(t, pos)
    }

    /// Maps `x[B, C, H, W]` to an RGB prediction `[B, 3, H, W]` in (0, 1).
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        x: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let c = &self.config;
        let batch = x.shape().first().copied().unwrap_or(0);
        let mut ctx = Ctx { mode, batch, rng };
        let mut h = self.tokenize(g, x)?;
        let mut skips = Vec::with_capacity(c.depth_in);
        for b in &self.in_blocks {
            h = self.block(g, b, h, &mut ctx)?;
            skips.push(h);
        }
        for b in &self.mid_blocks {
            h = self.block(g, b, h, &mut ctx)?;
        }
        for (i, b) in self.out_blocks.iter().enumerate() {
            let skip = skips.pop().expect("skip stack matches depth");
            h = match c.skip_fusion {
                SkipFusion::Add => g.add(h, skip)?,
                SkipFusion::ConcatLinear => {
                    let cat = g.concat_cols(h, skip)?;
                    self.skip_proj[i].forward(g, &self.store, cat)?
                }
            };
            h = self.block(g, b, h, &mut ctx)?;
        }
        debug_assert!(skips.is_empty());
        let h = self.head_norm.forward(g, &self.store, h)?;
        let h = self.head_proj.forward(g, &self.store, h)?;
        let img = g.gather(
            h,
            self.unpatch_for(batch),
            &[batch, c.out_channels, c.image_height, c.image_width],
        )?;
        let w = g.param(&self.store, self.conv_w);
        let bias = g.param(&self.store, self.conv_b);
        let y = g.conv3x3(img, w, bias)?;
        Ok(g.sigmoid(y))
    }

    fn unpatch_for(&self, batch: usize) -> Vec<usize> {
        let per = self.unpatch.len();
        (0..batch)
            .flat_map(|b| self.unpatch.iter().map(move |&i| i + b * per))
            .collect()
    }

    /// Eval-mode prediction for one `[C, H, W]` input.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let c = &self.config;
        let t = Tensor::new(
            &[1, c.in_channels, c.image_height, c.image_width],
            x.to_vec(),
        )?;
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = self.forward(&mut g, &t, Mode::Eval, &mut rng)?;
        Ok(g.value(y).data().to_vec())
    }
}

/// For a `[B, C, H, W]` input, builds the `[B·N, p·p·5C]` token matrix: the
/// input and its four half-patch diagonal shifts (zero fill) stacked on the
/// channel axis, cut into p×p patches flattened as (row, column, channel).
pub fn shifted_patches(
    x: &[f64],
    batch: usize,
    ch: usize,
    h: usize,
    w: usize,
    p: usize,
) -> Vec<f64> {
    let s = (p / 2) as isize;
    let shifts: [(isize, isize); 5] = [(0, 0), (-s, -s), (s, -s), (-s, s), (s, s)];
    let c5 = 5 * ch;
    let (gh, gw) = (h / p, w / p);
    let dim = p * p * c5;
    let mut out = vec![0.0; batch * gh * gw * dim];
    for b in 0..batch {
        for ty in 0..gh {
            for tx in 0..gw {
                let row = &mut out[((b * gh + ty) * gw + tx) * dim..][..dim];
                for py in 0..p {
                    for px in 0..p {
                        let (y, xx) = ((ty * p + py) as isize, (tx * p + px) as isize);
                        for (k, &(dy, dx)) in shifts.iter().enumerate() {
                            let (sy, sx) = (y - dy, xx - dx);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            for c in 0..ch {
                                row[(py * p + px) * c5 + k * ch + c] =
                                    x[((b * ch + c) * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gather map from a single image's `[N, p·p·C]` token outputs to `[C, H, W]`.
pub fn unpatch_index(h: usize, w: usize, p: usize, ch: usize) -> Vec<usize> {
    let gw = w / p;
    let dim = p * p * ch;
    let mut idx = Vec::with_capacity(ch * h * w);
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                let token = (y / p) * gw + x / p;
                idx.push(token * dim + ((y % p) * p + x % p) * ch + c);
            }
        }
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unpatch_is_a_bijection() {
        let idx = unpatch_index(8, 12, 4, 3);
        let mut seen = idx.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..8 * 12 * 3).collect::<Vec<_>>());
    }

    #[test]
    fn unshifted_channel_reproduces_patches() {
        let (h, w, p) = (4, 4, 2);
        let x: Vec<f64> = (0..h * w).map(|v| v as f64).collect();
        let t = shifted_patches(&x, 1, 1, h, w, p);
        // token 1 covers rows 0..2, cols 2..4; channel 0 of each pixel is the unshifted copy
        let tok = &t[20..40];
        assert_eq!([tok[0], tok[5], tok[10], tok[15]], [2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn reduced_forward_shape_and_range() {
        let m = SmallUViT::new(SmallUViTConfig::reduced(), 0).unwrap();
        let x: Vec<f64> = (0..3 * 64).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = m.predict(&x).unwrap();
        assert_eq!(y.len(), 3 * 64);
        assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(y, m.predict(&x).unwrap());
    }

    #[test]
    fn bad_divisibility() {
        let c = SmallUViTConfig {
            image_height: 30,
            ..SmallUViTConfig::default()
        };
        assert!(SmallUViT::new(c, 0).is_err());
    }
}
