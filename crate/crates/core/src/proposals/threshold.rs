//! Local-mean adaptive thresholding.

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Per-pixel ink mask, row-major, same dimensions as its source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Marks a pixel as ink when it is darker than the mean of its
/// `block x block` neighbourhood by more than `offset * 255`.
///
/// Neighbourhoods at the border are truncated to the image.
pub fn adaptive_threshold(img: &GrayImage, block: u32, offset: f64) -> Result<BinaryMask> {
    if block < 3 || block % 2 == 0 {
        return Err(Error::Param(format!("block must be odd and >= 3, got {block}")));
    }
    if !(0.0..1.0).contains(&offset) {
        return Err(Error::Param(format!("offset must lie in [0, 1), got {offset}")));
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let px = img.pixels();

    // (w+1) x (h+1) summed-area table
    let stride = w + 1;
    let mut integral = vec![0u64; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0u64;
        for x in 0..w {
            row += px[y * w + x] as u64;
            integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
        }
    }

    let r = (block / 2) as usize;
    let delta = offset * 255.0;
    let mut bits = vec![false; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            let sum = integral[y1 * stride + x1] + integral[y0 * stride + x0]
                - integral[y0 * stride + x1]
                - integral[y1 * stride + x0];
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            let mean = sum as f64 / count;
            bits[y * w + x] = (px[y * w + x] as f64) < mean - delta;
        }
    }
    Ok(BinaryMask {
        width: img.width(),
        height: img.height(),
        bits,
    })
}
