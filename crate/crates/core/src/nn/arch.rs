//! Backbone registry.
//!
//! Three families are registered:
//!
//! * `AlexNetStyle`: five convolutions (11/5/3/3/3) with three max pools,
//!   an adaptive 6x6 average pool and three fully connected layers. The
//!   adaptive pool is what lets the same layer stack take 350x350 inputs
//!   (the feature map before it is 9x9 instead of 6x6).
//! * `GoogleNetStyle`: the 7x7/1x1/3x3 stem followed by nine inception
//!   modules (3a-5b), global average pooling and one classifier layer.
//! * `TinySurrogate`: two 3x3 conv + max-pool stages, global average pooling
//!   and a linear classifier, for desk-scale runs and tests.
//!
//! `channel_divisor` divides every channel and hidden width (minimum 1); 1
//! gives the canonical widths. Dropout and local response normalization are
//! not part of these layer stacks.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{seq_out_shape, Conv2d, Inception, Layer, Linear, Pool2d};
use super::param::Param;
use crate::augment::{center_crop, random_crop, resize_preserve_aspect};
use crate::error::{Error, Result};
use crate::raster::RasterImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "alexnet")]
    AlexNetStyle,
    #[serde(rename = "googlenet")]
    GoogleNetStyle,
    #[serde(rename = "tiny")]
    TinySurrogate,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::AlexNetStyle => "alexnet",
            Architecture::GoogleNetStyle => "googlenet",
            Architecture::TinySurrogate => "tiny",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "alexnet" | "alexnetstyle" => Ok(Architecture::AlexNetStyle),
            "googlenet" | "googlenetstyle" => Ok(Architecture::GoogleNetStyle),
            "tiny" | "tinysurrogate" | "surrogate" => Ok(Architecture::TinySurrogate),
            other => Err(Error::InvalidArgument(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub architecture: Architecture,
    /// Square network input size in pixels.
    pub input_size: u32,
    pub num_classes: usize,
    pub pretrained_ref: Option<PathBuf>,
    /// Images are letterboxed to this size and randomly cropped to
    /// `input_size` during training (centre-cropped at inference).
    pub random_crop_from: Option<u32>,
    pub channel_divisor: u32,
}

impl BackboneSpec {
    pub fn new(architecture: Architecture, input_size: u32) -> BackboneSpec {
        BackboneSpec {
            architecture,
            input_size,
            num_classes: 2,
            pretrained_ref: None,
            random_crop_from: None,
            channel_divisor: 1,
        }
    }

    pub fn with_crop_from(mut self, size: u32) -> Self {
        self.random_crop_from = Some(size);
        self
    }

    pub fn with_divisor(mut self, divisor: u32) -> Self {
        self.channel_divisor = divisor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.channel_divisor == 0 {
            return bad("channel_divisor must be >= 1".into());
        }
        match self.architecture {
            Architecture::AlexNetStyle => {
                if !matches!(self.input_size, 224 | 350) {
                    return bad(format!("alexnet input must be 224 or 350, got {}", self.input_size));
                }
                if self.random_crop_from.is_some() {
                    return bad("alexnet backbones do not use random cropping".into());
                }
            }
            Architecture::GoogleNetStyle => {
                if self.input_size != 224 {
                    return bad(format!("googlenet input must be 224, got {}", self.input_size));
                }
            }
            Architecture::TinySurrogate => {
                if self.input_size < 4 {
                    return bad(format!("tiny surrogate input must be >= 4, got {}", self.input_size));
                }
            }
        }
        if let Some(from) = self.random_crop_from {
            if from <= self.input_size {
                return bad(format!(
                    "random_crop_from {from} must exceed input_size {}",
                    self.input_size
                ));
            }
        }
        Ok(())
    }

    /// Square size images are letterboxed to before cropping.
    pub fn load_size(&self) -> u32 {
        self.random_crop_from.unwrap_or(self.input_size)
    }

    /// Letterbox to the load size; samples keep this geometry in memory and
    /// are cropped per batch.
    pub fn prepare_load(&self, img: &RasterImage) -> Result<RasterImage> {
        resize_preserve_aspect(img, self.load_size())
    }

    /// Training view of an already letterboxed sample.
    pub fn crop_train<R: Rng + ?Sized>(&self, loaded: &RasterImage, rng: &mut R) -> Result<RasterImage> {
        if self.random_crop_from.is_some() {
            random_crop(loaded, self.input_size, rng)
        } else {
            Ok(loaded.clone())
        }
    }

    /// Evaluation view of an already letterboxed sample.
    pub fn crop_eval(&self, loaded: &RasterImage) -> Result<RasterImage> {
        if self.random_crop_from.is_some() {
            center_crop(loaded, self.input_size)
        } else {
            Ok(loaded.clone())
        }
    }

    /// Full deterministic inference preprocessing from a raw image.
    pub fn prepare_eval(&self, img: &RasterImage) -> Result<RasterImage> {
        self.crop_eval(&self.prepare_load(img)?)
    }

    pub fn model_id(&self) -> String {
        match self.random_crop_from {
            Some(from) => format!("{}{}c{}", self.architecture, from, self.input_size),
            None => format!("{}{}", self.architecture, self.input_size),
        }
    }
}

/// Layer stack; the last layer is always the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

struct Builder<'r, R: Rng> {
    shape: [usize; 3],
    divisor: usize,
    rng: &'r mut R,
    layers: Vec<Layer>,
}

/// He-normal weights, zero biases.
pub(crate) fn init_weights<R: Rng>(rng: &mut R, fan_in: usize, n: usize) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn conv_layer<R: Rng>(rng: &mut R, cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize) -> Layer {
    let fan_in = cin * kernel * kernel;
    Layer::Conv(Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel,
        stride,
        pad,
        weight: Param::new(vec![cout, fan_in], init_weights(rng, fan_in, cout * fan_in), true),
        bias: Param::new(vec![cout], vec![0.0; cout], false),
    })
}

pub(crate) fn linear_layer<R: Rng>(rng: &mut R, fin: usize, fout: usize) -> Layer {
    Layer::Linear(Linear {
        in_features: fin,
        out_features: fout,
        weight: Param::new(vec![fout, fin], init_weights(rng, fin, fout * fin), true),
        bias: Param::new(vec![fout], vec![0.0; fout], false),
    })
}

impl<'r, R: Rng> Builder<'r, R> {
    fn width(&self, canonical: usize) -> usize {
        (canonical / self.divisor).max(1)
    }

    fn push(&mut self, layer: Layer) -> Result<()> {
        self.shape = layer.out_shape(self.shape)?;
        self.layers.push(layer);
        Ok(())
    }

    fn conv(&mut self, canonical_out: usize, k: usize, s: usize, p: usize) -> Result<()> {
        let out = self.width(canonical_out);
        let layer = conv_layer(self.rng, self.shape[0], out, k, s, p);
        self.push(layer)?;
        self.push(Layer::Relu)
    }

    fn max_pool(&mut self, kernel: usize, stride: usize, pad: usize) -> Result<()> {
        self.push(Layer::MaxPool(Pool2d { kernel, stride, pad }))
    }

    fn adaptive(&mut self, out: usize) -> Result<()> {
        self.push(Layer::AdaptiveAvgPool { out_h: out, out_w: out })
    }

    fn linear(&mut self, out: usize, relu: bool) -> Result<()> {
        let fin = self.shape.iter().product();
        let layer = linear_layer(self.rng, fin, out);
        self.push(layer)?;
        if relu {
            self.push(Layer::Relu)?;
        }
        Ok(())
    }

    /// `(1x1, 3x3 reduce, 3x3, 5x5 reduce, 5x5, pool projection)`
    fn inception(&mut self, widths: [usize; 6]) -> Result<()> {
        let cin = self.shape[0];
        let [b1, r3, b3, r5, b5, pp] = widths.map(|w| self.width(w));
        let rng = &mut *self.rng;
        let branches = vec![
            vec![conv_layer(rng, cin, b1, 1, 1, 0), Layer::Relu],
            vec![
                conv_layer(rng, cin, r3, 1, 1, 0),
                Layer::Relu,
                conv_layer(rng, r3, b3, 3, 1, 1),
                Layer::Relu,
            ],
            vec![
                conv_layer(rng, cin, r5, 1, 1, 0),
                Layer::Relu,
                conv_layer(rng, r5, b5, 5, 1, 2),
                Layer::Relu,
            ],
            vec![
                Layer::MaxPool(Pool2d { kernel: 3, stride: 1, pad: 1 }),
                conv_layer(rng, cin, pp, 1, 1, 0),
                Layer::Relu,
            ],
        ];
        self.push(Layer::Inception(Inception { branches }))
    }
}

impl Network {
    /// Builds the spec's layer stack with seeded initial weights.
    pub fn build<R: Rng>(spec: &BackboneSpec, rng: &mut R) -> Result<Network> {
        spec.validate()?;
        let size = spec.input_size as usize;
        let mut b = Builder {
            shape: [3, size, size],
            divisor: spec.channel_divisor as usize,
            rng,
            layers: Vec::new(),
        };
        match spec.architecture {
            Architecture::TinySurrogate => {
                b.conv(8, 3, 1, 1)?;
                b.max_pool(2, 2, 0)?;
                b.conv(16, 3, 1, 1)?;
                b.max_pool(2, 2, 0)?;
                b.adaptive(1)?;
                b.linear(spec.num_classes, false)?;
            }
            Architecture::AlexNetStyle => {
                b.conv(96, 11, 4, 2)?;
                b.max_pool(3, 2, 0)?;
                b.conv(256, 5, 1, 2)?;
                b.max_pool(3, 2, 0)?;
                b.conv(384, 3, 1, 1)?;
                b.conv(384, 3, 1, 1)?;
                b.conv(256, 3, 1, 1)?;
                b.max_pool(3, 2, 0)?;
                b.adaptive(6)?;
                let hidden = b.width(4096);
                b.linear(hidden, true)?;
                b.linear(hidden, true)?;
                b.linear(spec.num_classes, false)?;
            }
            Architecture::GoogleNetStyle => {
                b.conv(64, 7, 2, 3)?;
                b.max_pool(3, 2, 1)?;
                b.conv(64, 1, 1, 0)?;
                b.conv(192, 3, 1, 1)?;
                b.max_pool(3, 2, 1)?;
                b.inception([64, 96, 128, 16, 32, 32])?;
                b.inception([128, 128, 192, 32, 96, 64])?;
                b.max_pool(3, 2, 1)?;
                b.inception([192, 96, 208, 16, 48, 64])?;
                b.inception([160, 112, 224, 24, 64, 64])?;
                b.inception([128, 128, 256, 24, 64, 64])?;
                b.inception([112, 144, 288, 32, 64, 64])?;
                b.inception([256, 160, 320, 32, 128, 128])?;
                b.max_pool(3, 2, 1)?;
                b.inception([256, 160, 320, 32, 128, 128])?;
                b.inception([384, 192, 384, 48, 128, 128])?;
                b.adaptive(1)?;
                b.linear(spec.num_classes, false)?;
            }
        }
        Ok(Network { layers: b.layers })
    }

    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        seq_out_shape(&self.layers, input)
    }

    pub fn classifier(&self) -> &Linear {
        match self.layers.last() {
            Some(Layer::Linear(l)) => l,
            _ => unreachable!("registry networks end in a linear classifier"),
        }
    }

    pub fn classifier_mut(&mut self) -> &mut Linear {
        match self.layers.last_mut() {
            Some(Layer::Linear(l)) => l,
            _ => unreachable!("registry networks end in a linear classifier"),
        }
    }

    pub fn num_parameters(&self) -> usize {
        let mut v = Vec::new();
        super::layers::visit_params(&self.layers, "layers.", &mut v);
        v.iter().map(|(_, p)| p.len()).sum()
    }
}
