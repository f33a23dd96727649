//! Versioned binary checkpoint container.
//!
//! Layout: magic tag, version, typed header, then named tensors as
//! (name length, name bytes, rank, extents, little-endian f64 data).
//! Round-trips are bit-exact.

use super::{build_cre, CreModel, Family, MaskingMode, Result, SizeClass, ZooError};
use crate::nn::Module;
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"CRECKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerKind {
    CreModel,
    PcaBasis,
    RandomProjection,
}

impl ContainerKind {
    fn to_byte(self) -> u8 {
        match self {
            ContainerKind::CreModel => 0,
            ContainerKind::PcaBasis => 1,
            ContainerKind::RandomProjection => 2,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(ContainerKind::CreModel),
            1 => Some(ContainerKind::PcaBasis),
            2 => Some(ContainerKind::RandomProjection),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContainerHeader {
    pub kind: ContainerKind,
    pub family: Family,
    pub size: SizeClass,
    pub masking: MaskingMode,
    pub n: u32,
    pub lambda: f64,
    pub mask_ratio: f64,
    pub dropout: f64,
    pub droppath: f64,
    pub seed: u64,
    pub input_shape: (u32, u32, u32),
}

fn family_byte(f: Family) -> u8 {
    match f {
        Family::Fc => 0,
        Family::Cnn => 1,
        Family::Vit => 2,
    }
}

fn family_from(b: u8) -> Option<Family> {
    match b {
        0 => Some(Family::Fc),
        1 => Some(Family::Cnn),
        2 => Some(Family::Vit),
        _ => None,
    }
}

fn size_byte(s: SizeClass) -> u8 {
    match s {
        SizeClass::Small => 0,
        SizeClass::Medium => 1,
        SizeClass::Large => 2,
    }
}

fn size_from(b: u8) -> Option<SizeClass> {
    match b {
        0 => Some(SizeClass::Small),
        1 => Some(SizeClass::Medium),
        2 => Some(SizeClass::Large),
        _ => None,
    }
}

fn masking_byte(m: MaskingMode) -> u8 {
    match m {
        MaskingMode::None => 0,
        MaskingMode::V1 => 1,
        MaskingMode::V2 => 2,
    }
}

fn masking_from(b: u8) -> Option<MaskingMode> {
    match b {
        0 => Some(MaskingMode::None),
        1 => Some(MaskingMode::V1),
        2 => Some(MaskingMode::V2),
        _ => None,
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ZooError {
    ZooError::CheckpointIo {
        path: path.to_string_lossy().into_owned(),
        source,
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> ZooError {
    ZooError::CheckpointFormat {
        path: path.to_string_lossy().into_owned(),
        reason: reason.into(),
    }
}

/// Writes a header plus named tensors.
pub fn write_container(path: &Path, header: &ContainerHeader, tensors: &[(String, &Tensor)]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(header.kind.to_byte());
    buf.push(family_byte(header.family));
    buf.push(size_byte(header.size));
    buf.push(masking_byte(header.masking));
    buf.extend_from_slice(&header.n.to_le_bytes());
    buf.extend_from_slice(&header.lambda.to_le_bytes());
    buf.extend_from_slice(&header.mask_ratio.to_le_bytes());
    buf.extend_from_slice(&header.dropout.to_le_bytes());
    buf.extend_from_slice(&header.droppath.to_le_bytes());
    buf.extend_from_slice(&header.seed.to_le_bytes());
    for d in [header.input_shape.0, header.input_shape.1, header.input_shape.2] {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        let bytes = name.as_bytes();
        buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(bytes);
        buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &e in tensor.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&buf).map_err(|e| io_err(path, e))
}

/// Reads a container back as (header, named tensors in file order).
pub fn read_container(path: &Path) -> Result<(ContainerHeader, Vec<(String, Tensor)>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > bytes.len() {
            return Err(format_err(path, format!("truncated at byte {}", bytes.len())));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    if take(&mut off, 8)? != MAGIC {
        return Err(format_err(path, "bad magic"));
    }
    let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let kind = ContainerKind::from_byte(take(&mut off, 1)?[0]).ok_or_else(|| format_err(path, "bad kind"))?;
    let family = family_from(take(&mut off, 1)?[0]).ok_or_else(|| format_err(path, "bad family"))?;
    let size = size_from(take(&mut off, 1)?[0]).ok_or_else(|| format_err(path, "bad size"))?;
    let masking = masking_from(take(&mut off, 1)?[0]).ok_or_else(|| format_err(path, "bad masking"))?;
    let n = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    let lambda = f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
    let mask_ratio = f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
    let dropout = f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
    let droppath = f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
    let seed = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
    let c = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    let h = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    let w = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    let count = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
            .map_err(|_| format_err(path, "tensor name not utf-8"))?;
        let rank = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize);
        }
        let len: usize = shape.iter().product();
        let raw = take(&mut off, len * 8)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let tensor = Tensor::new(&shape, data).map_err(|e| format_err(path, e.to_string()))?;
        tensors.push((name, tensor));
    }
    if off != bytes.len() {
        return Err(format_err(path, format!("{} trailing bytes", bytes.len() - off)));
    }
    Ok((
        ContainerHeader {
            kind,
            family,
            size,
            masking,
            n,
            lambda,
            mask_ratio,
            dropout,
            droppath,
            seed,
            input_shape: (c, h, w),
        },
        tensors,
    ))
}

fn collect_named(model: &mut CreModel) -> Vec<(String, Tensor)> {
    let mut out: Vec<(String, Tensor)> = Vec::new();
    {
        let enc = model.encoder_module();
        enc.for_each_param(&mut |n, t| out.push((format!("encoder.{n}"), t.clone())));
        enc.for_each_buffer(&mut |n, t| out.push((format!("encoder.{n}"), t.clone())));
    }
    {
        let dec = model.decoder_module();
        dec.for_each_param(&mut |n, t| out.push((format!("decoder.{n}"), t.clone())));
        dec.for_each_buffer(&mut |n, t| out.push((format!("decoder.{n}"), t.clone())));
    }
    {
        let cls = model.classifier_module();
        cls.for_each_param(&mut |n, t| out.push((format!("classifier.{n}"), t.clone())));
        cls.for_each_buffer(&mut |n, t| out.push((format!("classifier.{n}"), t.clone())));
    }
    out
}

pub fn save_model(model: &mut CreModel, path: &Path) -> Result<()> {
    let header = ContainerHeader {
        kind: ContainerKind::CreModel,
        family: model.family,
        size: model.size,
        masking: model.masking,
        n: model.n as u32,
        lambda: model.lambda,
        mask_ratio: model.mask_ratio,
        dropout: model.dropout,
        droppath: model.droppath,
        seed: model.seed,
        input_shape: (
            model.input_shape.0 as u32,
            model.input_shape.1 as u32,
            model.input_shape.2 as u32,
        ),
    };
    let named = collect_named(model);
    let refs: Vec<(String, &Tensor)> = named.iter().map(|(n, t)| (n.clone(), t)).collect();
    write_container(path, &header, &refs)
}

pub fn load_model(path: &Path) -> Result<CreModel> {
    let (header, tensors) = read_container(path)?;
    if header.kind != ContainerKind::CreModel {
        return Err(format_err(path, "container does not hold a model"));
    }
    let mut model = build_cre(
        header.family,
        header.size,
        header.n as usize,
        (
            header.input_shape.0 as usize,
            header.input_shape.1 as usize,
            header.input_shape.2 as usize,
        ),
        header.masking,
        header.mask_ratio,
        header.dropout,
        header.droppath,
        header.seed,
    )?;
    model.lambda = header.lambda;
    let by_name: BTreeMap<String, Tensor> = tensors.into_iter().collect();
    let mut missing: Vec<String> = Vec::new();
    let fill = |scope: &str, module: &mut dyn Module, missing: &mut Vec<String>| {
        let assign = |name: &str, t: &mut Tensor, missing: &mut Vec<String>| {
            let full = format!("{scope}.{name}");
            match by_name.get(&full) {
                Some(stored) if stored.shape() == t.shape() => *t = stored.clone(),
                Some(_) => missing.push(format!("{full} (shape mismatch)")),
                None => missing.push(full),
            }
        };
        module.for_each_param_mut(&mut |n, t| assign(n, t, missing));
        module.for_each_buffer_mut(&mut |n, t| assign(n, t, missing));
    };
    fill("encoder", model.encoder_module(), &mut missing);
    fill("decoder", model.decoder_module(), &mut missing);
    fill("classifier", model.classifier_module(), &mut missing);
    if !missing.is_empty() {
        return Err(format_err(path, format!("missing tensors: {}", missing.join(", "))));
    }
    Ok(model)
}
