//! The model zoo: classification-reconstruction encoders in fully
//! connected, convolutional, and vision-transformer flavours.
//!
//! Every model is an encoder + decoder + classifier triple sharing the
//! latent representation. The composite training loss is
//! `L = lambda * L_MSE + (1 - lambda) * L_CE`; transformer variants
//! support MAE-style patch masking (v1 reconstructs masked patches only,
//! v2 hides patches from the encoder but reconstructs the whole image).

mod checkpoint;
mod vit;

pub use checkpoint::{load_model, read_container as checkpoint_read, save_model, write_container as checkpoint_write, ContainerHeader, ContainerKind};
pub use vit::{sincos_positions, Block, VitDecoder, VitEncoder};

use crate::data::patches::patch_pixel_mask_rows;
use crate::nn::{
    cross_entropy_loss, masked_mse_loss, mse_loss, AdamState, BatchNorm, Binds, Conv2d, ConvTranspose2d, FwdCtx,
    Init, Layer, LayerStack, Linear, Module, NnError,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::{Graph, NodeId, Tensor};
use rand::seq::SliceRandom;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ZooError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("unknown model combination {family:?}/{size:?}")]
    UnknownCombination { family: Family, size: SizeClass },
    #[error("masking requires a vit model")]
    MaskingUnsupported,
    #[error("model expects {expected:?} input, got {got:?}")]
    InputShape { expected: (usize, usize, usize), got: Vec<usize> },
    #[error("representation of kind {kind:?} is not compatible with this operation")]
    IncompatibleRepresentation { kind: ReprKind },
    #[error("checkpoint io {path}: {source}")]
    CheckpointIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {reason}")]
    CheckpointFormat { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, ZooError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Fc,
    Cnn,
    Vit,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Fc => "fc",
            Family::Cnn => "cnn",
            Family::Vit => "vit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskingMode {
    None,
    V1,
    V2,
}

impl MaskingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskingMode::None => "none",
            MaskingMode::V1 => "v1",
            MaskingMode::V2 => "v2",
        }
    }
}

/// A seeded random choice of visible patches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    pub num_patches: usize,
    pub kept: Vec<usize>,
    pub masked: Vec<usize>,
    pub seed: u64,
}

/// Uniform subset without replacement: keeps
/// `round((1 - ratio) * num_patches)` patches, at least one.
pub fn sample_mask(num_patches: usize, ratio: f64, seed: u64) -> PatchMask {
    assert!(ratio > 0.0 && ratio < 1.0, "mask ratio in (0, 1)");
    let keep = (((1.0 - ratio) * num_patches as f64).round() as usize).max(1);
    let mut order: Vec<usize> = (0..num_patches).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut kept: Vec<usize> = order[..keep].to_vec();
    let mut masked: Vec<usize> = order[keep..].to_vec();
    kept.sort_unstable();
    masked.sort_unstable();
    PatchMask {
        num_patches,
        kept,
        masked,
        seed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReprKind {
    Latent,
    Pca,
    Rp,
}

/// A latent representation: a flat (batch, n) code for fc/cnn/pca/rp, or
/// a (batch, tokens, dim) token set for vit.
#[derive(Debug, Clone)]
pub struct Representation {
    pub kind: ReprKind,
    pub data: Tensor,
    /// For vit produced under masking: which slots the tokens occupy.
    pub kept_slots: Option<Vec<usize>>,
}

pub enum Encoder {
    Stack(LayerStack),
    Vit(VitEncoder),
}

pub enum Decoder {
    Stack(LayerStack),
    Vit(VitDecoder),
}

/// Encoder + decoder + classifier sharing a latent representation.
pub struct CreModel {
    pub family: Family,
    pub size: SizeClass,
    pub n: usize,
    pub lambda: f64,
    pub masking: MaskingMode,
    pub mask_ratio: f64,
    pub input_shape: (usize, usize, usize),
    pub dropout: f64,
    pub droppath: f64,
    pub seed: u64,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub classifier: LayerStack,
}

/// Graph handles produced by one forward pass.
pub struct ForwardNodes {
    pub latent: NodeId,
    pub reconstruction: NodeId,
    pub logits: NodeId,
    pub encoder_binds: Binds,
    pub decoder_binds: Binds,
    pub classifier_binds: Binds,
}

/// The three scalars of one composite-loss evaluation.
pub struct LossNodes {
    pub total: NodeId,
    pub mse: NodeId,
    pub ce: NodeId,
}

const NUM_CLASSES: usize = 10;

/// Builds a model per the family/size catalog.
#[allow(clippy::too_many_arguments)]
pub fn build_cre(
    family: Family,
    size: SizeClass,
    n: usize,
    input_shape: (usize, usize, usize),
    masking: MaskingMode,
    mask_ratio: f64,
    dropout: f64,
    droppath: f64,
    seed: u64,
) -> Result<CreModel> {
    if masking != MaskingMode::None && family != Family::Vit {
        return Err(ZooError::MaskingUnsupported);
    }
    let mut rng = rng_from_seed(derive_seed(seed, &[0x11]));
    let (encoder, decoder, classifier, n_effective) = match (family, size) {
        (Family::Fc, _) => fc_modules(size, n, input_shape, &mut rng)?,
        (Family::Cnn, SizeClass::Small) => cnn_small_modules(input_shape, dropout, &mut rng)?,
        (Family::Cnn, SizeClass::Large) => cnn_large_modules(input_shape, dropout, &mut rng)?,
        (Family::Vit, SizeClass::Small) => vit_modules(n, input_shape, 1, dropout, droppath, &mut rng)?,
        (Family::Vit, SizeClass::Large) => vit_modules(n, input_shape, 7, dropout, droppath, &mut rng)?,
        _ => return Err(ZooError::UnknownCombination { family, size }),
    };
    Ok(CreModel {
        family,
        size,
        n: n_effective,
        lambda: 0.0,
        masking,
        mask_ratio,
        input_shape,
        dropout,
        droppath,
        seed,
        encoder,
        decoder,
        classifier,
    })
}

fn expect_input(shape: (usize, usize, usize), family: Family, size: SizeClass) -> Result<()> {
    let ok = match family {
        Family::Fc => shape == (1, 28, 28),
        Family::Cnn | Family::Vit => match size {
            SizeClass::Large => shape == (3, 32, 32),
            _ => shape == (1, 28, 28),
        },
    };
    if ok {
        Ok(())
    } else {
        Err(ZooError::UnknownCombination { family, size })
    }
}

fn fc_modules(
    size: SizeClass,
    n: usize,
    input: (usize, usize, usize),
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Encoder, Decoder, LayerStack, usize)> {
    expect_input(input, Family::Fc, size)?;
    let (c, h, w) = input;
    let d = c * h * w;
    let (enc, dec, cls) = match size {
        SizeClass::Small => (
            vec![
                Layer::Flatten,
                Layer::Linear(Linear::init(d, n, Init::ReluFan, rng)),
                Layer::Relu,
            ],
            vec![
                Layer::Linear(Linear::init(n, d, Init::OutputFan, rng)),
                Layer::Tanh,
                Layer::Unflatten { c, h, w },
            ],
            vec![Layer::Linear(Linear::init(n, NUM_CLASSES, Init::LinearFan, rng))],
        ),
        SizeClass::Medium => (
            vec![
                Layer::Flatten,
                Layer::Linear(Linear::init(d, 616, Init::ReluFan, rng)),
                Layer::Relu,
                Layer::Linear(Linear::init(616, n, Init::ReluFan, rng)),
                Layer::Relu,
            ],
            vec![
                Layer::Linear(Linear::init(n, 616, Init::ReluFan, rng)),
                Layer::Relu,
                Layer::Linear(Linear::init(616, d, Init::OutputFan, rng)),
                Layer::Tanh,
                Layer::Unflatten { c, h, w },
            ],
            vec![
                Layer::Linear(Linear::init(n, 12, Init::ReluFan, rng)),
                Layer::Relu,
                Layer::Linear(Linear::init(12, NUM_CLASSES, Init::LinearFan, rng)),
            ],
        ),
        SizeClass::Large => (
            vec![
                Layer::Flatten,
                Layer::Linear(Linear::init(d, 716, Init::ReluFan, rng)),
                Layer::Relu,
                Layer::Linear(Linear::init(716, 684, Init::ReluFan, rng)),
                Layer::Relu,
                Layer::Linear(Linear::init(684, 616, Init::ReluFan, rng)),
                Layer::Relu,
                Layer::Linear(Linear::init(616, n, Init::ReluFan, rng)),
                Layer::Relu,
            ],
            vec![
                Layer::Linear(Linear::init(n, 616, Init::ReluFan, rng)),
                Layer::Relu,
                Layer::Linear(Linear::init(616, 684, Init::ReluFan, rng)),
                Layer::Relu,
                Layer::Linear(Linear::init(684, 716, Init::ReluFan, rng)),
                Layer::Relu,
                Layer::Linear(Linear::init(716, d, Init::OutputFan, rng)),
                Layer::Tanh,
                Layer::Unflatten { c, h, w },
            ],
            vec![
                Layer::Linear(Linear::init(n, 64, Init::ReluFan, rng)),
                Layer::Relu,
                Layer::Linear(Linear::init(64, NUM_CLASSES, Init::LinearFan, rng)),
            ],
        ),
    };
    Ok((
        Encoder::Stack(LayerStack::new(enc)),
        Decoder::Stack(LayerStack::new(dec)),
        LayerStack::new(cls),
        n,
    ))
}

fn cnn_small_modules(
    input: (usize, usize, usize),
    _dropout: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Encoder, Decoder, LayerStack, usize)> {
    expect_input(input, Family::Cnn, SizeClass::Small)?;
    // 28 -> pool 14 -> pool(8 via pad 1) -> pool 4; latent 16x4x4 = 256.
    let enc = vec![
        Layer::Conv2d(Conv2d::init(1, 16, 3, 1, 1, Init::ReluFan, rng)),
        Layer::BatchNorm(BatchNorm::new(16)),
        Layer::MaxPool2d { window: 2, stride: 2, padding: 0 },
        Layer::Relu,
        Layer::Conv2d(Conv2d::init(16, 16, 3, 1, 1, Init::ReluFan, rng)),
        Layer::BatchNorm(BatchNorm::new(16)),
        Layer::MaxPool2d { window: 2, stride: 2, padding: 1 },
        Layer::Relu,
        Layer::Conv2d(Conv2d::init(16, 16, 3, 1, 1, Init::ReluFan, rng)),
        Layer::BatchNorm(BatchNorm::new(16)),
        Layer::MaxPool2d { window: 2, stride: 2, padding: 0 },
        Layer::Relu,
    ];
    let dec = vec![
        Layer::ConvTranspose2d(ConvTranspose2d::init(16, 16, 2, 2, 0, 0, Init::ReluFan, rng)),
        Layer::Relu,
        Layer::ConvTranspose2d(ConvTranspose2d::init(16, 16, 2, 2, 1, 0, Init::ReluFan, rng)),
        Layer::Relu,
        Layer::ConvTranspose2d(ConvTranspose2d::init(16, 1, 2, 2, 0, 0, Init::OutputFan, rng)),
        Layer::Tanh,
    ];
    let cls = vec![
        Layer::Flatten,
        Layer::Linear(Linear::init(256, NUM_CLASSES, Init::LinearFan, rng)),
    ];
    Ok((
        Encoder::Stack(LayerStack::new(enc)),
        Decoder::Stack(LayerStack::new(dec)),
        LayerStack::new(cls),
        256,
    ))
}

fn cnn_large_modules(
    input: (usize, usize, usize),
    dropout: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Encoder, Decoder, LayerStack, usize)> {
    expect_input(input, Family::Cnn, SizeClass::Large)?;
    let drop = |p: f64| Layer::Dropout { p, channelwise: true };
    let enc = vec![
        Layer::Conv2d(Conv2d::init(3, 64, 3, 1, 1, Init::ReluFan, rng)),
        drop(dropout),
        Layer::BatchNorm(BatchNorm::new(64)),
        Layer::Relu,
        Layer::Conv2d(Conv2d::init(64, 64, 3, 1, 1, Init::ReluFan, rng)),
        drop(dropout),
        Layer::BatchNorm(BatchNorm::new(64)),
        Layer::Relu,
        Layer::Conv2d(Conv2d::init(64, 128, 3, 1, 1, Init::ReluFan, rng)),
        drop(dropout),
        Layer::BatchNorm(BatchNorm::new(128)),
        Layer::MaxPool2d { window: 2, stride: 2, padding: 0 },
        Layer::Relu,
        Layer::Conv2d(Conv2d::init(128, 128, 3, 1, 1, Init::ReluFan, rng)),
        drop(dropout),
        Layer::BatchNorm(BatchNorm::new(128)),
        Layer::MaxPool2d { window: 2, stride: 2, padding: 0 },
        Layer::Relu,
        Layer::Conv2d(Conv2d::init(128, 128, 3, 1, 1, Init::ReluFan, rng)),
        drop(dropout),
        Layer::BatchNorm(BatchNorm::new(128)),
        Layer::MaxPool2d { window: 2, stride: 2, padding: 0 },
        Layer::Relu,
    ];
    let dec = vec![
        Layer::ConvTranspose2d(ConvTranspose2d::init(128, 128, 2, 2, 0, 0, Init::ReluFan, rng)),
        Layer::Relu,
        Layer::ConvTranspose2d(ConvTranspose2d::init(128, 128, 2, 2, 0, 0, Init::ReluFan, rng)),
        Layer::Relu,
        Layer::ConvTranspose2d(ConvTranspose2d::init(128, 64, 2, 2, 0, 0, Init::ReluFan, rng)),
        Layer::Relu,
        Layer::ConvTranspose2d(ConvTranspose2d::init(64, 64, 3, 1, 1, 0, Init::ReluFan, rng)),
        Layer::Relu,
        Layer::ConvTranspose2d(ConvTranspose2d::init(64, 3, 3, 1, 1, 0, Init::OutputFan, rng)),
        Layer::Tanh,
    ];
    let cls = vec![
        Layer::Conv2d(Conv2d::init(128, 256, 3, 1, 1, Init::ReluFan, rng)),
        drop(dropout),
        Layer::BatchNorm(BatchNorm::new(256)),
        Layer::Relu,
        Layer::Conv2d(Conv2d::init(256, 256, 3, 1, 1, Init::ReluFan, rng)),
        drop(dropout),
        Layer::MaxPool2d { window: 2, stride: 2, padding: 0 },
        Layer::BatchNorm(BatchNorm::new(256)),
        Layer::Relu,
        Layer::Flatten,
        Layer::Linear(Linear::init(1024, NUM_CLASSES, Init::LinearFan, rng)),
    ];
    Ok((
        Encoder::Stack(LayerStack::new(enc)),
        Decoder::Stack(LayerStack::new(dec)),
        LayerStack::new(cls),
        128 * 4 * 4,
    ))
}

fn vit_modules(
    n: usize,
    input: (usize, usize, usize),
    depth: usize,
    dropout: f64,
    droppath: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Encoder, Decoder, LayerStack, usize)> {
    let size = if depth == 1 { SizeClass::Small } else { SizeClass::Large };
    expect_input(input, Family::Vit, size)?;
    let (c, h, _) = input;
    let patch = if h == 28 { 7 } else { 2 };
    // Head-dim-1 attention from the printed tables is degenerate; use
    // max(1, n/8) heads instead.
    let heads = (n / 8).max(1);
    let encoder = VitEncoder::init(c, h, patch, n, depth, heads, dropout, droppath, rng);
    let decoder = VitDecoder::init(c, h, patch, n, depth, heads, dropout, rng);
    let classifier = LayerStack::new(vec![
        Layer::BatchNorm(BatchNorm::new(n)),
        Layer::Linear(Linear::init(n, NUM_CLASSES, Init::LinearFan, rng)),
    ]);
    Ok((Encoder::Vit(encoder), Decoder::Vit(decoder), classifier, n))
}

impl CreModel {
    pub fn num_patches(&self) -> usize {
        match &self.encoder {
            Encoder::Vit(v) => v.tokens,
            _ => 0,
        }
    }

    pub fn patch_size(&self) -> usize {
        match &self.encoder {
            Encoder::Vit(v) => v.patch,
            _ => 0,
        }
    }

    fn check_input(&self, images: &Tensor) -> Result<()> {
        let s = images.shape();
        let (c, h, w) = self.input_shape;
        if s.len() != 4 || (s[1], s[2], s[3]) != (c, h, w) {
            return Err(ZooError::InputShape {
                expected: self.input_shape,
                got: s.to_vec(),
            });
        }
        Ok(())
    }

    /// Encoder forward on the graph. With masks (one per image), the
    /// transformer encoder consumes only each image's kept tokens.
    pub fn encode_nodes(
        &mut self,
        g: &mut Graph,
        images: NodeId,
        masks: Option<&[PatchMask]>,
        ctx: &mut FwdCtx,
        binds: &mut Binds,
    ) -> Result<NodeId> {
        match &mut self.encoder {
            Encoder::Stack(stack) => Ok(stack.forward(g, images, ctx, "encoder", binds)?),
            Encoder::Vit(enc) => {
                let kept = masks.map(|ms| ms.iter().map(|m| m.kept.clone()).collect());
                Ok(enc.forward(g, images, kept, ctx, binds)?)
            }
        }
    }

    /// Decoder forward: latent (or token set) back to an image.
    pub fn decode_nodes(
        &mut self,
        g: &mut Graph,
        latent: NodeId,
        masks: Option<&[PatchMask]>,
        ctx: &mut FwdCtx,
        binds: &mut Binds,
    ) -> Result<NodeId> {
        match &mut self.decoder {
            Decoder::Stack(stack) => Ok(stack.forward(g, latent, ctx, "decoder", binds)?),
            Decoder::Vit(dec) => {
                let kept = masks.map(|ms| ms.iter().map(|m| m.kept.clone()).collect());
                Ok(dec.forward(g, latent, kept, ctx, binds)?)
            }
        }
    }

    /// Classifier forward; transformer latents are token-averaged first.
    pub fn classify_nodes(
        &mut self,
        g: &mut Graph,
        latent: NodeId,
        ctx: &mut FwdCtx,
        binds: &mut Binds,
    ) -> Result<NodeId> {
        let input = match self.family {
            Family::Vit => g.mean_over_axis(latent, 1)?,
            _ => latent,
        };
        Ok(self.classifier.forward(g, input, ctx, "classifier", binds)?)
    }

    /// Full forward pass: encode, decode, classify.
    pub fn forward_nodes(
        &mut self,
        g: &mut Graph,
        images: NodeId,
        masks: Option<&[PatchMask]>,
        ctx: &mut FwdCtx,
    ) -> Result<ForwardNodes> {
        let mut encoder_binds = Binds::new();
        let mut decoder_binds = Binds::new();
        let mut classifier_binds = Binds::new();
        let latent = self.encode_nodes(g, images, masks, ctx, &mut encoder_binds)?;
        let reconstruction = self.decode_nodes(g, latent, masks, ctx, &mut decoder_binds)?;
        let logits = self.classify_nodes(g, latent, ctx, &mut classifier_binds)?;
        Ok(ForwardNodes {
            latent,
            reconstruction,
            logits,
            encoder_binds,
            decoder_binds,
            classifier_binds,
        })
    }

    /// Builds the three loss scalars for a batch already on the graph.
    /// v1 masking restricts the reconstruction loss to masked patches;
    /// v2 and unmasked models use the full-image loss.
    pub fn loss_nodes(
        &self,
        g: &mut Graph,
        reconstruction: NodeId,
        images: NodeId,
        logits: NodeId,
        labels: &[usize],
        masks: Option<&[PatchMask]>,
    ) -> Result<LossNodes> {
        let mse = match (self.masking, masks) {
            (MaskingMode::V1, Some(ms)) => {
                let (c, h, w) = self.input_shape;
                let pixel_mask = patch_pixel_mask_rows(c, h, w, self.patch_size(), ms);
                masked_mse_loss(g, reconstruction, images, &pixel_mask)?
            }
            _ => mse_loss(g, reconstruction, images)?,
        };
        let ce = cross_entropy_loss(g, logits, labels)?;
        let weighted_mse = g.scale(mse, self.lambda);
        let weighted_ce = g.scale(ce, 1.0 - self.lambda);
        let total = g.add(weighted_mse, weighted_ce)?;
        Ok(LossNodes { total, mse, ce })
    }

    /// Composite loss on a batch: returns (L, L_MSE, L_CE) values.
    pub fn cre_loss(&mut self, images: &Tensor, labels: &[usize], seed: u64) -> Result<(f64, f64, f64)> {
        self.check_input(images)?;
        let masks = self.training_masks(seed, images.shape()[0]);
        let mut g = Graph::new();
        let images_node = g.leaf(images.clone())?;
        let mut ctx = FwdCtx::train(seed);
        let nodes = self.forward_nodes(&mut g, images_node, masks.as_deref(), &mut ctx)?;
        let losses = self.loss_nodes(&mut g, nodes.reconstruction, images_node, nodes.logits, labels, masks.as_deref())?;
        Ok((
            g.scalar_value(losses.total),
            g.scalar_value(losses.mse),
            g.scalar_value(losses.ce),
        ))
    }

    /// Per-image masks for one training step (None for unmasked models).
    pub fn training_masks(&self, seed: u64, batch: usize) -> Option<Vec<PatchMask>> {
        match self.masking {
            MaskingMode::None => None,
            _ => Some(
                (0..batch)
                    .map(|i| sample_mask(self.num_patches(), self.mask_ratio, derive_seed(seed, &[0x3a5c, i as u64])))
                    .collect(),
            ),
        }
    }

    /// Evaluation-mode encoding (no masking, frozen statistics).
    pub fn encode(&mut self, images: &Tensor) -> Result<Representation> {
        self.check_input(images)?;
        let mut g = Graph::new();
        let x = g.leaf(images.clone())?;
        let mut ctx = FwdCtx::eval();
        let mut binds = Binds::new();
        let z = self.encode_nodes(&mut g, x, None, &mut ctx, &mut binds)?;
        Ok(Representation {
            kind: ReprKind::Latent,
            data: g.value(z).clone(),
            kept_slots: None,
        })
    }

    /// Evaluation-mode decoding of a latent representation.
    pub fn decode(&mut self, repr: &Representation) -> Result<Tensor> {
        if repr.kind != ReprKind::Latent {
            return Err(ZooError::IncompatibleRepresentation { kind: repr.kind });
        }
        let mut g = Graph::new();
        let z = g.leaf(repr.data.clone())?;
        let mut ctx = FwdCtx::eval();
        let mut binds = Binds::new();
        let masks: Option<Vec<PatchMask>> = repr.kept_slots.as_ref().map(|kept| {
            let mask = PatchMask {
                num_patches: self.num_patches(),
                kept: kept.clone(),
                masked: (0..self.num_patches()).filter(|s| !kept.contains(s)).collect(),
                seed: 0,
            };
            vec![mask; repr.data.shape()[0]]
        });
        let out = self.decode_nodes(&mut g, z, masks.as_deref(), &mut ctx, &mut binds)?;
        Ok(g.value(out).clone())
    }

    /// Evaluation-mode classification of a latent representation.
    pub fn classify(&mut self, repr: &Representation) -> Result<Tensor> {
        if repr.kind != ReprKind::Latent {
            return Err(ZooError::IncompatibleRepresentation { kind: repr.kind });
        }
        let mut g = Graph::new();
        let z = g.leaf(repr.data.clone())?;
        let mut ctx = FwdCtx::eval();
        let mut binds = Binds::new();
        let out = self.classify_nodes(&mut g, z, &mut ctx, &mut binds)?;
        Ok(g.value(out).clone())
    }

    pub fn encoder_module(&mut self) -> &mut dyn Module {
        match &mut self.encoder {
            Encoder::Stack(s) => s,
            Encoder::Vit(v) => v,
        }
    }

    pub fn decoder_module(&mut self) -> &mut dyn Module {
        match &mut self.decoder {
            Decoder::Stack(s) => s,
            Decoder::Vit(v) => v,
        }
    }

    pub fn classifier_module(&mut self) -> &mut dyn Module {
        &mut self.classifier
    }

    /// Independent Adam optimizers per module, as the training scheme
    /// requires (decoder from L_MSE, classifier from L_CE, encoder from
    /// the composite L).
    pub fn fresh_optimizers(&self, lr_encoder: f64, lr_decoder: f64, lr_classifier: f64) -> (AdamState, AdamState, AdamState) {
        (
            AdamState::new(lr_encoder),
            AdamState::new(lr_decoder),
            AdamState::new(lr_classifier),
        )
    }

    /// Initializes the decoder's output-layer bias to the training-set
    /// pixel marginals, so reconstruction starts at the mean image.
    ///
    /// Without this, the constant background error stays coherent across
    /// the batch for the ~1000 steps the output bias needs to reach the
    /// background level, and that coherent pressure kills the encoder's
    /// relu units (the latent collapses to zero at reconstruction-heavy
    /// lambda). Tanh decoders store atanh of the (clamped) marginal;
    /// the linear transformer head stores it directly.
    pub fn init_output_bias(&mut self, mean_image: &Tensor) {
        let squash = |v: f64| v.clamp(-0.995, 0.995).atanh();
        match &mut self.decoder {
            Decoder::Stack(stack) => {
                let last_linear = stack.layers.iter_mut().rev().find_map(|l| match l {
                    crate::nn::Layer::Linear(lin) => Some(lin),
                    _ => None,
                });
                if let Some(lin) = last_linear {
                    for (b, m) in lin.bias.data_mut().iter_mut().zip(mean_image.data()) {
                        *b = squash(*m);
                    }
                    return;
                }
                let last_convt = stack.layers.iter_mut().rev().find_map(|l| match l {
                    crate::nn::Layer::ConvTranspose2d(c) => Some(c),
                    _ => None,
                });
                if let Some(conv) = last_convt {
                    let (c, h, w) = self.input_shape;
                    for ch in 0..c {
                        let plane = &mean_image.data()[ch * h * w..(ch + 1) * h * w];
                        let mean = plane.iter().sum::<f64>() / (h * w) as f64;
                        conv.bias.data_mut()[ch] = squash(mean);
                    }
                }
            }
            Decoder::Vit(dec) => {
                let (c, h, w) = self.input_shape;
                let batched = Tensor::new(&[1, c, h, w], mean_image.data().to_vec()).expect("mean image");
                let tokens = crate::data::patchify(&batched, dec.patch).expect("divisible patches");
                let (t_count, pp) = (tokens.shape()[1], tokens.shape()[2]);
                let mut mean_patch = vec![0.0; pp];
                for t in 0..t_count {
                    for (m, v) in mean_patch.iter_mut().zip(&tokens.data()[t * pp..(t + 1) * pp]) {
                        *m += v / t_count as f64;
                    }
                }
                dec.head.bias.data_mut().copy_from_slice(&mean_patch);
            }
        }
    }
}

#[cfg(test)]
mod tests;
