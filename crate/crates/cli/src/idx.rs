//! Reader for the IDX container used by MNIST: a big-endian magic word
//! (`0x00000803` for rank-3 unsigned-byte images, `0x00000801` for labels),
//! one big-endian u32 per dimension, then the raw bytes.

use std::path::Path;

use scorelab::numcore::Tensor;
use scorelab::LabeledDataset;
use thiserror::Error;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error, PartialEq)]
pub enum IdxError {
    #[error("{file}: byte {offset}: {reason}")]
    Parse { file: String, offset: usize, reason: String },
    #[error("{file}: {reason}")]
    Io { file: String, reason: String },
}

fn parse_err(file: &str, offset: usize, reason: impl Into<String>) -> IdxError {
    IdxError::Parse {
        file: file.into(),
        offset,
        reason: reason.into(),
    }
}

fn be_u32(file: &str, bytes: &[u8], offset: usize) -> Result<u32, IdxError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| parse_err(file, offset, format!("header truncated ({} bytes)", bytes.len())))
}

/// Parsed image file: `count` images of `rows × cols` bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_images(file: &str, bytes: &[u8]) -> Result<IdxImages, IdxError> {
    let magic = be_u32(file, bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(parse_err(
            file,
            0,
            format!("magic mismatch: expected 0x{IMAGES_MAGIC:08x}, found 0x{magic:08x}"),
        ));
    }
    let count = be_u32(file, bytes, 4)? as usize;
    let rows = be_u32(file, bytes, 8)? as usize;
    let cols = be_u32(file, bytes, 12)? as usize;
    let need = count * rows * cols;
    let have = bytes.len() - 16;
    if have < need {
        return Err(parse_err(
            file,
            bytes.len(),
            format!("payload truncated: {need} pixel bytes declared, {have} present"),
        ));
    }
    if have > need {
        return Err(parse_err(file, 16 + need, format!("{} unexpected trailing bytes", have - need)));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_labels(file: &str, bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let magic = be_u32(file, bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(parse_err(
            file,
            0,
            format!("magic mismatch: expected 0x{LABELS_MAGIC:08x}, found 0x{magic:08x}"),
        ));
    }
    let count = be_u32(file, bytes, 4)? as usize;
    let have = bytes.len() - 8;
    if have < count {
        return Err(parse_err(
            file,
            bytes.len(),
            format!("payload truncated: {count} labels declared, {have} present"),
        ));
    }
    if have > count {
        return Err(parse_err(file, 8 + count, format!("{} unexpected trailing bytes", have - count)));
    }
    Ok(bytes[8..].to_vec())
}

/// Mean-pools one `rows × cols` image (values already scaled) down to
/// `side × side`; both extents must be divisible by `side`.
pub fn mean_pool(image: &[f64], rows: usize, cols: usize, side: usize) -> Option<Vec<f64>> {
    if side == 0 || !rows.is_multiple_of(side) || !cols.is_multiple_of(side) {
        return None;
    }
    let (fr, fc) = (rows / side, cols / side);
    let norm = 1.0 / (fr * fc) as f64;
    let mut out = vec![0.0; side * side];
    for r in 0..rows {
        for c in 0..cols {
            out[(r / fr) * side + c / fc] += image[r * cols + c];
        }
    }
    out.iter_mut().for_each(|v| *v *= norm);
    Some(out)
}

/// Builds a dataset of flattened images scaled to `[0, 1]`, optionally
/// pooled to `resolution × resolution` (`0` keeps the native size) and
/// truncated to the first `limit` items (`0` keeps all).
pub fn to_dataset(images: &IdxImages, labels: &[u8], resolution: usize, limit: usize, label_file: &str) -> Result<LabeledDataset, IdxError> {
    if labels.len() != images.count {
        return Err(parse_err(
            label_file,
            4,
            format!("label count {} does not match image count {}", labels.len(), images.count),
        ));
    }
    let n = if limit == 0 { images.count } else { limit.min(images.count) };
    let px = images.rows * images.cols;
    let side = if resolution == 0 { None } else { Some(resolution) };
    let dim = side.map_or(px, |s| s * s);
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        let img: Vec<f64> = images.pixels[i * px..(i + 1) * px].iter().map(|&b| f64::from(b) / 255.0).collect();
        match side {
            None => data.extend(img),
            Some(s) => data.extend(mean_pool(&img, images.rows, images.cols, s).ok_or_else(|| IdxError::Io {
                file: label_file.into(),
                reason: format!("{}×{} images cannot be pooled to {s}×{s}", images.rows, images.cols),
            })?),
        }
    }
    let labels: Vec<usize> = labels[..n].iter().map(|&l| l as usize).collect();
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let points = Tensor::new(vec![n, dim], data).expect("sized");
    LabeledDataset::new("idx", points, labels, n_classes).map_err(|e| IdxError::Io {
        file: label_file.into(),
        reason: e.to_string(),
    })
}

pub fn load_idx(images: &Path, labels: &Path, resolution: usize, limit: usize) -> Result<LabeledDataset, IdxError> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|e| IdxError::Io {
            file: p.display().to_string(),
            reason: e.to_string(),
        })
    };
    let (img_name, lbl_name) = (images.display().to_string(), labels.display().to_string());
    let imgs = parse_images(&img_name, &read(images)?)?;
    let lbls = parse_labels(&lbl_name, &read(labels)?)?;
    to_dataset(&imgs, &lbls, resolution, limit, &lbl_name)
}
