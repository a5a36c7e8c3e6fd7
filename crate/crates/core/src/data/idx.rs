use std::fs;
use std::path::Path;

use super::dataset::{Dataset, DatasetMeta, Image};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Extents are zero-padded up to this multiple (28 → 32).
const PAD_MULTIPLE: usize = 8;

struct Idx {
    dims: Vec<usize>,
    payload_offset: usize,
}

fn read_u32(bytes: &[u8], offset: usize, ctx: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(ctx, offset, "truncated header"))
}

fn parse_header(bytes: &[u8], magic: u32, ctx: &str) -> Result<Idx> {
    let m = read_u32(bytes, 0, ctx)?;
    if m != magic {
        return Err(Error::format(ctx, 0, format!("bad magic {m:#010x}, expected {magic:#010x}")));
    }
    let rank = (m & 0xff) as usize;
    let dims = (0..rank).map(|k| read_u32(bytes, 4 + 4 * k, ctx).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let payload_offset = 4 + 4 * rank;
    let need = payload_offset + dims.iter().product::<usize>();
    if bytes.len() < need {
        return Err(Error::format(ctx, bytes.len(), format!("truncated payload, expected {need} bytes")));
    }
    Ok(Idx { dims, payload_offset })
}

/// Loads IDX images (and optionally labels), scales to `[0,1]`, pads to a
/// multiple of 8 pixels, and keeps only `digit_filter` if given.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>, digit_filter: Option<u8>) -> Result<Dataset> {
    let ctx = images_path.display().to_string();
    let bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let idx = parse_header(&bytes, IDX_IMAGES_MAGIC, &ctx)?;
    let (n, rows, cols) = (idx.dims[0], idx.dims[1], idx.dims[2]);

    let labels = match labels_path {
        Some(path) => {
            let lctx = path.display().to_string();
            let lb = fs::read(path).map_err(|e| Error::io(path, e))?;
            let lidx = parse_header(&lb, IDX_LABELS_MAGIC, &lctx)?;
            if lidx.dims[0] != n {
                return Err(Error::format(lctx, 4, format!("{} labels for {n} images", lidx.dims[0])));
            }
            Some(lb[lidx.payload_offset..lidx.payload_offset + n].to_vec())
        }
        None => None,
    };
    if digit_filter.is_some() && labels.is_none() {
        return Err(Error::invalid("load_idx", "a digit filter needs a labels file"));
    }

    let (h, w) = (rows.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE, cols.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE);
    let (top, left) = ((h - rows) / 2, (w - cols) / 2);
    let mut images = Vec::new();
    let mut classes = Vec::new();
    for k in 0..n {
        let label = labels.as_ref().map(|l| l[k]);
        if digit_filter.is_some() && label != digit_filter {
            continue;
        }
        let src = &bytes[idx.payload_offset + k * rows * cols..idx.payload_offset + (k + 1) * rows * cols];
        let mut pix = vec![0.0; h * w];
        for r in 0..rows {
            for c in 0..cols {
                pix[(r + top) * w + c + left] = src[r * cols + c] as f64 / 255.0;
            }
        }
        images.push(Image::new(Tensor::new(&[h, w], pix)?)?);
        classes.push(label.map(|l| l.to_string()).unwrap_or_default());
    }
    Ok(Dataset {
        meta: DatasetMeta {
            count: images.len(),
            size: h,
            seed: 0,
            generator: "idx".into(),
            classes,
        },
        images,
    })
}
