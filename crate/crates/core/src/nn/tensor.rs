use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// Dense NCHW tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Tensor {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Tensor> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "{} values for shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per sample (C * H * W).
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[n * l..(n + 1) * l]
    }

    /// Scales pixels to `[-1, 1]`, channels first.
    pub fn from_images(images: &[&RasterImage]) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
        let (w, h) = (first.width() as usize, first.height() as usize);
        let plane = w * h;
        let mut t = Tensor::zeros([images.len(), 3, h, w]);
        for (n, img) in images.iter().enumerate() {
            if img.width() as usize != w || img.height() as usize != h {
                return Err(Error::Shape(format!(
                    "batch mixes {}x{} and {w}x{h} images",
                    img.width(),
                    img.height()
                )));
            }
            let dst = &mut t.data[n * 3 * plane..(n + 1) * 3 * plane];
            for (i, px) in img.as_raw().chunks_exact(3).enumerate() {
                for c in 0..3 {
                    dst[c * plane + i] = f64::from(px[c]) / 127.5 - 1.0;
                }
            }
        }
        Ok(t)
    }
}
