//! 8-bit grayscale images and binary PGM ("P5") I/O.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Row-major 8-bit intensities, 0 = black ink, 255 = white paper.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input(format!("image must be non-empty, got {width}x{height}")));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(Error::Input(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width as usize * height as usize,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }
    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }
    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = v;
    }

    pub fn bounds(&self) -> BBox {
        BBox::from_corners(0, 0, self.width - 1, self.height - 1)
    }

    /// Copy of the pixels under `bbox`, which must lie inside the image.
    pub fn crop(&self, bbox: &BBox) -> Result<GrayImage> {
        if !bbox.fits_within(self.width, self.height) {
            return Err(Error::Input(format!(
                "crop {bbox} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(bbox.area() as usize);
        let w = self.width as usize;
        for y in bbox.y()..bbox.bottom() {
            let row = y as usize * w;
            out.extend_from_slice(&self.pixels[row + bbox.x() as usize..row + bbox.right() as usize]);
        }
        GrayImage::new(bbox.w(), bbox.h(), out)
    }

    /// Bilinear resampling with pixel-center alignment, rounded to 8 bits.
    pub fn resize_bilinear(&self, width: u32, height: u32) -> Result<GrayImage> {
        if width == 0 || height == 0 {
            return Err(Error::Input("resize target must be non-empty".into()));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let mut out = Vec::with_capacity(width as usize * height as usize);
        for oy in 0..height {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let y0 = fy.floor() as u32;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for ox in 0..width {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                let x0 = fx.floor() as u32;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                let top = self.get(x0, y0) as f64 * (1.0 - tx) + self.get(x1, y0) as f64 * tx;
                let bot = self.get(x0, y1) as f64 * (1.0 - tx) + self.get(x1, y1) as f64 * tx;
                let v = top * (1.0 - ty) + bot * ty;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
        GrayImage::new(width, height, out)
    }

    /// Photometric negative.
    pub fn inverted(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| 255 - p).collect(),
        }
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let header = format!("P5\n{} {}\n255\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + self.pixels.len());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<GrayImage> {
        let mut pos = 0usize;
        let magic = next_token(bytes, &mut pos)?;
        if magic != b"P5" {
            return Err(Error::format("not a binary PGM (expected P5)"));
        }
        let width = parse_u32(next_token(bytes, &mut pos)?)?;
        let height = parse_u32(next_token(bytes, &mut pos)?)?;
        let maxval = parse_u32(next_token(bytes, &mut pos)?)?;
        if maxval != 255 {
            return Err(Error::Format(format!("PGM maxval must be 255, got {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::format("PGM header not terminated"));
        }
        pos += 1;
        let need = width as usize * height as usize;
        let raster = &bytes[pos..];
        if raster.len() < need {
            return Err(Error::Format(format!(
                "PGM raster truncated: need {need} bytes, have {}",
                raster.len()
            )));
        }
        GrayImage::new(width, height, raster[..need].to_vec())
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        Self::from_pgm_bytes(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_pgm_bytes())?;
        Ok(())
    }
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("PGM header truncated"));
    }
    Ok(&bytes[start..*pos])
}

fn parse_u32(tok: &[u8]) -> Result<u32> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad PGM header field {:?}", String::from_utf8_lossy(tok))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage::new(3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        let back = GrayImage::from_pgm_bytes(&img.to_pgm_bytes()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn pgm_header_comments() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x01\x02";
        let img = GrayImage::from_pgm_bytes(bytes).unwrap();
        assert_eq!(img.pixels(), &[1, 2]);
    }

    #[test]
    fn pgm_rejects_other_maxval() {
        let err = GrayImage::from_pgm_bytes(b"P5\n1 1\n65535\n\x00\x00").unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(GrayImage::from_pgm_bytes(b"P2\n1 1\n255\n0").is_err());
        assert!(GrayImage::from_pgm_bytes(b"P5\n4 4\n255\n\x00").is_err());
    }

    #[test]
    fn crop_and_bounds() {
        let img = GrayImage::new(4, 3, (0..12).collect()).unwrap();
        let c = img.crop(&BBox::new(1, 1, 2, 2).unwrap()).unwrap();
        assert_eq!(c.pixels(), &[5, 6, 9, 10]);
        assert!(img.crop(&BBox::new(3, 0, 2, 1).unwrap()).is_err());
    }

    #[test]
    fn resize_constant_and_identity() {
        let img = GrayImage::filled(7, 5, 123).unwrap();
        let r = img.resize_bilinear(32, 32).unwrap();
        assert!(r.pixels().iter().all(|&p| p == 123));
        let g = GrayImage::new(2, 2, vec![0, 255, 255, 0]).unwrap();
        assert_eq!(g.resize_bilinear(2, 2).unwrap(), g);
    }

    #[test]
    fn resize_halves_by_averaging() {
        // 4 -> 2 samples exactly between source pixel pairs
        let img = GrayImage::new(4, 1, vec![0, 100, 200, 250]).unwrap();
        let r = img.resize_bilinear(2, 1).unwrap();
        assert_eq!(r.pixels(), &[50, 225]);
    }
}
