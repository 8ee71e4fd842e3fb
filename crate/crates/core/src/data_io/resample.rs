use image::{GrayImage, Luma};

use crate::error::{Error, Result};
use crate::mask::Mask;

/// Per-axis integer factors `(fy, fx)` mapping `(dst_h, dst_w)` up to `(src_h, src_w)`.
pub fn integer_factors(src: (usize, usize), dst: (usize, usize)) -> Result<(usize, usize)> {
    let (sh, sw) = src;
    let (dh, dw) = dst;
    if dh == 0 || dw == 0 || sh % dh != 0 || sw % dw != 0 {
        return Err(Error::config(format!(
            "{sw}x{sh} is not an integer multiple of {dw}x{dh}"
        )));
    }
    Ok((sh / dh, sw / dw))
}

/// Area-averages each `fy × fx` block (rounded to nearest).
pub fn downsample_image(image: &GrayImage, target: (usize, usize)) -> Result<GrayImage> {
    let (w, h) = image.dimensions();
    let (fy, fx) = integer_factors((h as usize, w as usize), target)?;
    let (th, tw) = target;
    let area = (fy * fx) as u32;
    Ok(GrayImage::from_fn(tw as u32, th as u32, |bx, by| {
        let mut sum = 0u32;
        for y in 0..fy as u32 {
            for x in 0..fx as u32 {
                sum += image.get_pixel(bx * fx as u32 + x, by * fy as u32 + y)[0] as u32;
            }
        }
        Luma([((sum + area / 2) / area) as u8])
    }))
}

/// Majority vote per block; an exact tie is labelled non-iris.
pub fn downsample_mask(mask: &Mask, target: (usize, usize)) -> Result<Mask> {
    let (fy, fx) = integer_factors(mask.dims(), target)?;
    let (th, tw) = target;
    Ok(Mask::from_fn(tw, th, |bx, by| {
        let mut iris = 0;
        for y in 0..fy {
            for x in 0..fx {
                iris += mask.get(bx * fx + x, by * fy + y) as usize;
            }
        }
        2 * iris > fy * fx
    }))
}

/// Nearest-neighbour block replication.
pub fn upscale_mask(mask: &Mask, fy: usize, fx: usize) -> Mask {
    Mask::from_fn(mask.width() * fx, mask.height() * fy, |x, y| mask.get(x / fx, y / fy))
}

pub fn upscale_mask_to(mask: &Mask, target: (usize, usize)) -> Result<Mask> {
    let (fy, fx) = integer_factors(target, mask.dims())?;
    Ok(upscale_mask(mask, fy, fx))
}
