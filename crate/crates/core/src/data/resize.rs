use crate::data::{BBox, ImageSample};
use crate::error::{param_err, Result};
use crate::tensor::{s, Scalar, Tensor};

/// Area downsampling of a square `1×H×H` image to `1×S×S`: each output pixel
/// is the mean of its `(H/S)×(H/S)` source block.
pub fn resize_area<T: Scalar>(image: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    let (c, h, w) = image.dims3()?;
    if h != w {
        return Err(param_err!("resize_area expects a square image, got {h}×{w}"));
    }
    if target == 0 || h % target != 0 {
        return Err(param_err!("target side {target} does not divide source side {h}"));
    }
    if target == h {
        return Ok(image.clone());
    }
    let f = h / target;
    let scale: T = s(1.0 / (f * f) as f64);
    let src = image.data();
    let mut out = vec![T::zero(); c * target * target];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..][..w];
            let dst = &mut out[(ch * target + y / f) * target..][..target];
            for (x, &v) in row.iter().enumerate() {
                dst[x / f] = dst[x / f] + v;
            }
        }
    }
    for v in &mut out {
        *v = *v * scale;
    }
    Tensor::new(vec![c, target, target], out)
}

/// Rescales boxes between square image sides. Origins are rounded half-up,
/// extents are floored, the result is clamped to the target frame and boxes
/// left with zero area are dropped.
pub fn scale_boxes(boxes: &[BBox], from_side: u32, to_side: u32) -> Vec<BBox> {
    assert!(from_side > 0 && to_side > 0, "sides must be positive");
    let (num, den) = (to_side as u64, from_side as u64);
    let origin = |v: u32| ((2 * v as u64 * num + den) / (2 * den)) as u32;
    let extent = |v: u32| (v as u64 * num / den) as u32;
    boxes
        .iter()
        .filter_map(|b| {
            let x = origin(b.x).min(to_side);
            let y = origin(b.y).min(to_side);
            let w = extent(b.w).min(to_side - x);
            let h = extent(b.h).min(to_side - y);
            BBox::new(x, y, w, h).ok()
        })
        .collect()
}

/// Resizes the image and its boxes together. A positive sample whose boxes
/// all vanish keeps a single 1×1 box at the scaled origin of its first box so
/// the label invariant survives extreme downscaling.
pub fn resize_sample(sample: &ImageSample, target: u32) -> Result<ImageSample> {
    let side = sample.side();
    let pixels = resize_area(&sample.pixels, target as usize)?;
    let mut boxes = scale_boxes(&sample.boxes, side, target);
    if boxes.is_empty() {
        if let Some(first) = sample.boxes.first() {
            let cx = ((first.x as u64 * target as u64) / side as u64).min(target as u64 - 1) as u32;
            let cy = ((first.y as u64 * target as u64) / side as u64).min(target as u64 - 1) as u32;
            boxes.push(BBox::new(cx, cy, 1, 1)?);
        }
    }
    Ok(ImageSample {
        id: sample.id.clone(),
        pixels,
        label: sample.label,
        boxes,
        category: sample.category,
    })
}
