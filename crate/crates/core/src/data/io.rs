use std::path::Path;

use image::{GrayImage, ImageReader, Luma};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads an 8-bit grayscale file (PNG or PGM) into a `1×H×W` tensor in `[0, 1]`.
pub fn read_gray_image(path: &Path) -> Result<Tensor<f32>> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?
        .into_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Tensor::new(vec![1, h as usize, w as usize], data)
}

/// Writes a `1×H×W` tensor as 8-bit grayscale, rounding to the nearest level.
/// The format follows the file extension.
pub fn write_gray_image(path: &Path, pixels: &Tensor<f32>) -> Result<()> {
    let (_, h, w) = pixels.dims3()?;
    let mut img = GrayImage::new(w as u32, h as u32);
    for (i, &v) in pixels.data().iter().enumerate() {
        let level = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        img.put_pixel((i % w) as u32, (i / w) as u32, Luma([level]));
    }
    img.save(path)
        .map_err(|e| Error::Load(format!("cannot write {}: {e}", path.display())))
}

/// Snaps values onto the 8-bit grid so that a write/read cycle is lossless.
pub(crate) fn quantize_8bit(pixels: &mut Tensor<f32>) {
    for v in pixels.data_mut() {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
}
