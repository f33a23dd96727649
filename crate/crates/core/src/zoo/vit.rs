//! Transformer encoder/decoder for the masked-reconstruction models.
//!
//! Patch embedding is a strided convolution; fixed sinusoidal position
//! tables are added before masking; classification averages the output
//! tokens (no class token). The decoder places a learned mask token at
//! hidden slots, runs its own blocks, and projects each token back to
//! patch pixels.

use crate::nn::{Binds, Conv2d, FwdCtx, Init, Linear, Module, Result};
use crate::tensor::{DropKind, Graph, NodeId, Tensor};
use rand_chacha::ChaCha8Rng;

/// Fixed sinusoidal position table, (tokens, dim).
pub fn sincos_positions(tokens: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(&[tokens, dim]);
    let data = t.data_mut();
    for pos in 0..tokens {
        for i in 0..dim / 2 {
            let rate = 1.0 / 10_000f64.powf(2.0 * i as f64 / dim as f64);
            data[pos * dim + 2 * i] = (pos as f64 * rate).sin();
            data[pos * dim + 2 * i + 1] = (pos as f64 * rate).cos();
        }
    }
    t
}

/// Pre-norm transformer block with multi-head self-attention and a
/// 4x-expansion MLP.
#[derive(Debug, Clone)]
pub struct Block {
    pub norm1_gain: Tensor,
    pub norm1_bias: Tensor,
    pub qkv: Linear,
    pub proj: Linear,
    pub norm2_gain: Tensor,
    pub norm2_bias: Tensor,
    pub fc1: Linear,
    pub fc2: Linear,
    pub heads: usize,
    pub dropout: f64,
    pub droppath: f64,
}

impl Block {
    pub fn init(dim: usize, heads: usize, dropout: f64, droppath: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            norm1_gain: Tensor::full(&[dim], 1.0),
            norm1_bias: Tensor::zeros(&[dim]),
            qkv: Linear::init(dim, 3 * dim, Init::LinearFan, rng),
            proj: Linear::init(dim, dim, Init::LinearFan, rng),
            norm2_gain: Tensor::full(&[dim], 1.0),
            norm2_bias: Tensor::zeros(&[dim]),
            fc1: Linear::init(dim, 4 * dim, Init::LinearFan, rng),
            fc2: Linear::init(4 * dim, dim, Init::LinearFan, rng),
            heads,
            dropout,
            droppath,
        }
    }

    fn attention(&self, g: &mut Graph, x: NodeId, scope: &str, binds: &mut Binds, ctx: &mut FwdCtx) -> Result<NodeId> {
        let shape = g.value(x).shape().to_vec();
        let (b, k, dim) = (shape[0], shape[1], shape[2]);
        let dh = dim / self.heads;
        let qkv = self.qkv.forward(g, x, &format!("{scope}.qkv"), binds)?;
        let split_heads = |g: &mut Graph, part: NodeId| -> Result<NodeId> {
            let r = g.reshape(part, &[b, k, self.heads, dh])?;
            Ok(g.permute(r, &[0, 2, 1, 3])?)
        };
        let q_flat = g.slice_last(qkv, 0, dim)?;
        let k_flat = g.slice_last(qkv, dim, dim)?;
        let v_flat = g.slice_last(qkv, 2 * dim, dim)?;
        let q = split_heads(g, q_flat)?;
        let kk = split_heads(g, k_flat)?;
        let v = split_heads(g, v_flat)?;
        let k_t = g.permute(kk, &[0, 1, 3, 2])?;
        let scores = g.matmul(q, k_t)?;
        let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let attn = g.softmax(scaled);
        let ctx_heads = g.matmul(attn, v)?;
        let merged = g.permute(ctx_heads, &[0, 2, 1, 3])?;
        let flat = g.reshape(merged, &[b, k, dim])?;
        let projected = self.proj.forward(g, flat, &format!("{scope}.proj"), binds)?;
        if ctx.training && self.dropout > 0.0 {
            let seed = ctx.next_seed();
            Ok(g.dropout(projected, self.dropout, seed, DropKind::Element)?)
        } else {
            Ok(projected)
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, scope: &str, binds: &mut Binds, ctx: &mut FwdCtx) -> Result<NodeId> {
        let n1g = g.param(&self.norm1_gain)?;
        let n1b = g.param(&self.norm1_bias)?;
        binds.push(format!("{scope}.norm1.gain"), n1g);
        binds.push(format!("{scope}.norm1.bias"), n1b);
        let normed = g.layer_norm(x, n1g, n1b, 1e-6)?;
        let mut attn_out = self.attention(g, normed, scope, binds, ctx)?;
        if ctx.training && self.droppath > 0.0 {
            let seed = ctx.next_seed();
            attn_out = g.drop_path(attn_out, self.droppath, seed)?;
        }
        let x = g.add(x, attn_out)?;

        let n2g = g.param(&self.norm2_gain)?;
        let n2b = g.param(&self.norm2_bias)?;
        binds.push(format!("{scope}.norm2.gain"), n2g);
        binds.push(format!("{scope}.norm2.bias"), n2b);
        let normed = g.layer_norm(x, n2g, n2b, 1e-6)?;
        let h = self.fc1.forward(g, normed, &format!("{scope}.mlp.fc1"), binds)?;
        let h = g.gelu(h);
        let h = if ctx.training && self.dropout > 0.0 {
            let seed = ctx.next_seed();
            g.dropout(h, self.dropout, seed, DropKind::Element)?
        } else {
            h
        };
        let h = self.fc2.forward(g, h, &format!("{scope}.mlp.fc2"), binds)?;
        let mut mlp_out = if ctx.training && self.dropout > 0.0 {
            let seed = ctx.next_seed();
            g.dropout(h, self.dropout, seed, DropKind::Element)?
        } else {
            h
        };
        if ctx.training && self.droppath > 0.0 {
            let seed = ctx.next_seed();
            mlp_out = g.drop_path(mlp_out, self.droppath, seed)?;
        }
        Ok(g.add(x, mlp_out)?)
    }

    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor), scope: &str) {
        f(&format!("{scope}.norm1.gain"), &self.norm1_gain);
        f(&format!("{scope}.norm1.bias"), &self.norm1_bias);
        f(&format!("{scope}.qkv.weight"), &self.qkv.weight);
        f(&format!("{scope}.qkv.bias"), &self.qkv.bias);
        f(&format!("{scope}.proj.weight"), &self.proj.weight);
        f(&format!("{scope}.proj.bias"), &self.proj.bias);
        f(&format!("{scope}.norm2.gain"), &self.norm2_gain);
        f(&format!("{scope}.norm2.bias"), &self.norm2_bias);
        f(&format!("{scope}.mlp.fc1.weight"), &self.fc1.weight);
        f(&format!("{scope}.mlp.fc1.bias"), &self.fc1.bias);
        f(&format!("{scope}.mlp.fc2.weight"), &self.fc2.weight);
        f(&format!("{scope}.mlp.fc2.bias"), &self.fc2.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor), scope: &str) {
        f(&format!("{scope}.norm1.gain"), &mut self.norm1_gain);
        f(&format!("{scope}.norm1.bias"), &mut self.norm1_bias);
        f(&format!("{scope}.qkv.weight"), &mut self.qkv.weight);
        f(&format!("{scope}.qkv.bias"), &mut self.qkv.bias);
        f(&format!("{scope}.proj.weight"), &mut self.proj.weight);
        f(&format!("{scope}.proj.bias"), &mut self.proj.bias);
        f(&format!("{scope}.norm2.gain"), &mut self.norm2_gain);
        f(&format!("{scope}.norm2.bias"), &mut self.norm2_bias);
        f(&format!("{scope}.mlp.fc1.weight"), &mut self.fc1.weight);
        f(&format!("{scope}.mlp.fc1.bias"), &mut self.fc1.bias);
        f(&format!("{scope}.mlp.fc2.weight"), &mut self.fc2.weight);
        f(&format!("{scope}.mlp.fc2.bias"), &mut self.fc2.bias);
    }
}

#[derive(Debug, Clone)]
pub struct VitEncoder {
    pub patch_embed: Conv2d,
    pub positions: Tensor, // fixed, not trained
    pub blocks: Vec<Block>,
    pub norm_gain: Tensor,
    pub norm_bias: Tensor,
    pub patch: usize,
    pub tokens: usize,
    pub dim: usize,
}

impl VitEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        in_channels: usize,
        image_side: usize,
        patch: usize,
        dim: usize,
        depth: usize,
        heads: usize,
        dropout: f64,
        droppath: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let grid = image_side / patch;
        let tokens = grid * grid;
        Self {
            patch_embed: Conv2d::init(in_channels, dim, patch, patch, 0, Init::LinearFan, rng),
            positions: sincos_positions(tokens, dim),
            blocks: (0..depth).map(|_| Block::init(dim, heads, dropout, droppath, rng)).collect(),
            norm_gain: Tensor::full(&[dim], 1.0),
            norm_bias: Tensor::zeros(&[dim]),
            patch,
            tokens,
            dim,
        }
    }

    /// Embeds, adds positions, optionally keeps only the per-image
    /// `kept` tokens, and runs the blocks. Returns (batch, kept-or-all,
    /// dim) tokens.
    pub fn forward(
        &self,
        g: &mut Graph,
        images: NodeId,
        kept: Option<Vec<Vec<usize>>>,
        ctx: &mut FwdCtx,
        binds: &mut Binds,
    ) -> Result<NodeId> {
        let b = g.value(images).shape()[0];
        let embedded = self.patch_embed.forward(g, images, "encoder.patch_embed", binds)?;
        let flat = g.reshape(embedded, &[b, self.dim, self.tokens])?;
        let tokens = g.permute(flat, &[0, 2, 1])?;
        let pos = g.leaf(self.positions.clone())?;
        let mut x = g.add(tokens, pos)?;
        if let Some(kept) = kept {
            x = g.gather_tokens_rows(x, kept)?;
        }
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(g, x, &format!("encoder.blocks.{i}"), binds, ctx)?;
        }
        let ng = g.param(&self.norm_gain)?;
        let nb = g.param(&self.norm_bias)?;
        binds.push("encoder.norm.gain".to_string(), ng);
        binds.push("encoder.norm.bias".to_string(), nb);
        Ok(g.layer_norm(x, ng, nb, 1e-6)?)
    }
}

impl Module for VitEncoder {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("patch_embed.weight", &self.patch_embed.weight);
        f("patch_embed.bias", &self.patch_embed.bias);
        for (i, blk) in self.blocks.iter().enumerate() {
            blk.visit(f, &format!("blocks.{i}"));
        }
        f("norm.gain", &self.norm_gain);
        f("norm.bias", &self.norm_bias);
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("patch_embed.weight", &mut self.patch_embed.weight);
        f("patch_embed.bias", &mut self.patch_embed.bias);
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            blk.visit_mut(f, &format!("blocks.{i}"));
        }
        f("norm.gain", &mut self.norm_gain);
        f("norm.bias", &mut self.norm_bias);
    }
}

#[derive(Debug, Clone)]
pub struct VitDecoder {
    pub embed: Linear,
    pub mask_token: Tensor,
    pub positions: Tensor, // fixed
    pub blocks: Vec<Block>,
    pub norm_gain: Tensor,
    pub norm_bias: Tensor,
    pub head: Linear, // dim -> patch pixels
    pub patch: usize,
    pub tokens: usize,
    pub dim: usize,
    pub channels: usize,
    pub image_side: usize,
}

impl VitDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        channels: usize,
        image_side: usize,
        patch: usize,
        dim: usize,
        depth: usize,
        heads: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let grid = image_side / patch;
        let tokens = grid * grid;
        let patch_pixels = channels * patch * patch;
        let mut mask_token = Tensor::zeros(&[dim]);
        crate::rng::fill_normal(rng, 0.02, mask_token.data_mut());
        Self {
            embed: Linear::init(dim, dim, Init::LinearFan, rng),
            mask_token,
            positions: sincos_positions(tokens, dim),
            blocks: (0..depth).map(|_| Block::init(dim, heads, dropout, 0.0, rng)).collect(),
            norm_gain: Tensor::full(&[dim], 1.0),
            norm_bias: Tensor::zeros(&[dim]),
            head: Linear::init(dim, patch_pixels, Init::OutputFan, rng),
            patch,
            tokens,
            dim,
            channels,
            image_side,
        }
    }

    /// Rebuilds the full token grid (mask token at hidden slots when
    /// `kept` is partial), runs the decoder blocks, and projects back to
    /// an image.
    pub fn forward(
        &self,
        g: &mut Graph,
        encoder_tokens: NodeId,
        kept: Option<Vec<Vec<usize>>>,
        ctx: &mut FwdCtx,
        binds: &mut Binds,
    ) -> Result<NodeId> {
        let b = g.value(encoder_tokens).shape()[0];
        let x = self.embed.forward(g, encoder_tokens, "decoder.embed", binds)?;
        let mtok = g.param(&self.mask_token)?;
        binds.push("decoder.mask_token".to_string(), mtok);
        let mut x = match kept {
            Some(kept) if kept[0].len() < self.tokens => {
                // Per-image indicator column picks which slots receive
                // the mask token.
                let mut indicator = Tensor::zeros(&[b, self.tokens, 1]);
                for (bi, row) in kept.iter().enumerate() {
                    for slot in 0..self.tokens {
                        if !row.contains(&slot) {
                            indicator.data_mut()[bi * self.tokens + slot] = 1.0;
                        }
                    }
                }
                let placed = g.scatter_tokens_rows(x, kept, self.tokens)?;
                let ind = g.leaf(indicator)?;
                let mrow = g.reshape(mtok, &[1, self.dim])?;
                let fill = g.matmul(ind, mrow)?;
                g.add(placed, fill)?
            }
            _ => x,
        };
        let pos = g.leaf(self.positions.clone())?;
        x = g.add(x, pos)?;
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(g, x, &format!("decoder.blocks.{i}"), binds, ctx)?;
        }
        let ng = g.param(&self.norm_gain)?;
        let nb = g.param(&self.norm_bias)?;
        binds.push("decoder.norm.gain".to_string(), ng);
        binds.push("decoder.norm.bias".to_string(), nb);
        let x = g.layer_norm(x, ng, nb, 1e-6)?;
        let pixels = self.head.forward(g, x, "decoder.head", binds)?;
        // tokens -> image: (B, gh, gw, C, p, p) -> (B, C, gh, p, gw, p)
        let grid = self.image_side / self.patch;
        let r = g.reshape(pixels, &[b, grid, grid, self.channels, self.patch, self.patch])?;
        let p = g.permute(r, &[0, 3, 1, 4, 2, 5])?;
        Ok(g.reshape(p, &[b, self.channels, self.image_side, self.image_side])?)
    }
}

impl Module for VitDecoder {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("embed.weight", &self.embed.weight);
        f("embed.bias", &self.embed.bias);
        f("mask_token", &self.mask_token);
        for (i, blk) in self.blocks.iter().enumerate() {
            blk.visit(f, &format!("blocks.{i}"));
        }
        f("norm.gain", &self.norm_gain);
        f("norm.bias", &self.norm_bias);
        f("head.weight", &self.head.weight);
        f("head.bias", &self.head.bias);
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("embed.weight", &mut self.embed.weight);
        f("embed.bias", &mut self.embed.bias);
        f("mask_token", &mut self.mask_token);
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            blk.visit_mut(f, &format!("blocks.{i}"));
        }
        f("norm.gain", &mut self.norm_gain);
        f("norm.bias", &mut self.norm_bias);
        f("head.weight", &mut self.head.weight);
        f("head.bias", &mut self.head.bias);
    }
}
