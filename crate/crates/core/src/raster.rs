//! 8-bit RGB raster images and their file IO.

use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};

/// Row-major interleaved RGB, three bytes per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RasterImage({}x{})", self.width, self.height)
    }
}

impl RasterImage {
    pub const CHANNELS: usize = 3;

    pub fn new(width: u32, height: u32) -> Result<Self> {
        Self::from_raw(width, height, vec![0; width as usize * height as usize * 3])
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "degenerate image {width}x{height}"
            )));
        }
        if data.len() != width as usize * height as usize * 3 {
            return Err(Error::Shape(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width as usize * height as usize * 3,
                data.len()
            )));
        }
        Ok(RasterImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let mut img = Self::new(width, height)?;
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        Ok(img)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn as_raw_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn is_black(&self) -> bool {
        self.data.iter().all(|v| *v == 0)
    }

    /// Copies the `w x h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Result<RasterImage> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(w as usize * h as usize * 3);
        for y in y0..y0 + h {
            let start = (y as usize * self.width as usize + x0 as usize) * 3;
            out.extend_from_slice(&self.data[start..start + w as usize * 3]);
        }
        RasterImage::from_raw(w, h, out)
    }

    pub fn open(path: &Path) -> Result<RasterImage> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        RasterImage::from_raw(w, h, rgb.into_raw()).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Lossless PNG output.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer length checked at construction");
        buf.save_with_format(path, ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dimension() {
        assert!(RasterImage::new(0, 4).is_err());
        assert!(RasterImage::from_raw(2, 2, vec![0; 5]).is_err());
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = RasterImage::new(5, 3).unwrap();
        for (i, v) in img.as_raw_mut().iter_mut().enumerate() {
            *v = (i * 37 % 256) as u8;
        }
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(RasterImage::open(&p).unwrap(), img);
    }

    #[test]
    fn corrupt_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not a png").unwrap();
        let err = RasterImage::open(&p).unwrap_err();
        assert!(err.to_string().contains("bad.png"));
    }

    #[test]
    fn crop_window() {
        let mut img = RasterImage::new(4, 4).unwrap();
        img.put_pixel(2, 1, [9, 8, 7]);
        let c = img.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.pixel(1, 0), [9, 8, 7]);
        assert!(img.crop(3, 3, 2, 2).is_err());
    }
}
