//! Binary PGM (P5) and PPM (P6) files, 8 bits per sample.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, RgbImage};
use icreg_core::autodiff::Tensor;

/// Rounds `[0,1]` intensities to bytes; values outside are clamped.
pub fn to_gray(img: &Tensor) -> Result<GrayImage> {
    let s = img.shape();
    if s.len() != 2 {
        bail!("expected a 2D image, got shape {s:?}");
    }
    let bytes = img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    GrayImage::from_raw(s[1] as u32, s[0] as u32, bytes).context("image buffer size")
}

pub fn from_gray(img: &GrayImage) -> Result<Tensor> {
    let (w, h) = img.dimensions();
    Ok(Tensor::new(&[h as usize, w as usize], img.as_raw().iter().map(|&b| b as f64 / 255.0).collect())?)
}

fn encoder(path: &Path, subtype: PnmSubtype) -> Result<PnmEncoder<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(PnmEncoder::new(BufWriter::new(file)).with_subtype(subtype))
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    encoder(path, PnmSubtype::Graymap(SampleEncoding::Binary))?
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::L8)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    encoder(path, PnmSubtype::Pixmap(SampleEncoding::Binary))?
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
        .with_context(|| format!("writing {}", path.display()))
}

/// Writes `[0,1]` intensities as a PGM.
pub fn save_image(path: &Path, img: &Tensor) -> Result<()> {
    write_pgm(path, &to_gray(img)?)
}

/// Reads any PNM file as grayscale intensities in `[0,1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::ImageReader::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .with_guessed_format()
        .with_context(|| format!("reading {}", path.display()))?
        .decode()
        .with_context(|| format!("decoding {}", path.display()))?;
    from_gray(&img.to_luma8())
}
