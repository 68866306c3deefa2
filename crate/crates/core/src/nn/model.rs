use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::{linear_layer, BackboneSpec, Network};
use super::layers::{backward_seq, forward_seq, visit_params, visit_params_mut, Layer};
use super::param::Param;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::raster::RasterImage;
use crate::seed;

/// Tolerance on the probability sum of a normalized output.
pub const SOFTMAX_SUM_TOLERANCE: f64 = 1e-6;

/// A normalized class-probability vector. Index 1 is the positive class of a
/// binary task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxOutput(Vec<f64>);

impl SoftmaxOutput {
    pub fn new(probabilities: Vec<f64>) -> Result<SoftmaxOutput> {
        if probabilities.len() < 2 {
            return Err(Error::InvalidArgument("softmax output needs >= 2 classes".into()));
        }
        if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!(
                "probabilities outside [0, 1]: {probabilities:?}"
            )));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > SOFTMAX_SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!("probabilities sum to {sum}")));
        }
        Ok(SoftmaxOutput(probabilities))
    }

    /// `[1 - score, score]`
    pub fn binary(score: f64) -> Result<SoftmaxOutput> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidArgument(format!("score {score} outside [0, 1]")));
        }
        Ok(SoftmaxOutput(vec![1.0 - score, score]))
    }

    pub(crate) fn from_probabilities_unchecked(p: Vec<f64>) -> SoftmaxOutput {
        SoftmaxOutput(p)
    }

    /// Numerically stable softmax of raw logits.
    pub fn from_logits(logits: &[f64]) -> SoftmaxOutput {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        SoftmaxOutput(exps.into_iter().map(|e| e / total).collect())
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn positive(&self) -> f64 {
        self.0[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

/// One mini-batch: preprocessed inputs plus labels and ids for diagnostics.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_images(ids: Vec<String>, images: &[&RasterImage], labels: Vec<usize>) -> Result<Batch> {
        if ids.len() != images.len() || labels.len() != images.len() {
            return Err(Error::InvalidArgument("batch ids, images and labels differ in length".into()));
        }
        Ok(Batch {
            ids,
            inputs: Tensor::from_images(images)?,
            labels,
        })
    }
}

/// Network weights plus the training-side state that travels with them.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub spec: BackboneSpec,
    pub network: Network,
    /// Index of the last completed epoch (0 for a fresh model).
    pub epoch: u32,
    /// Stream for batch order and crops; owned here so checkpoints resume it.
    pub rng: ChaCha8Rng,
}

/// Builds a model, loading a pretrained checkpoint when the spec names one.
/// With pretrained weights, every layer except the classifier is copied from
/// the checkpoint and the classifier is re-initialized for `num_classes`.
pub fn build_model(spec: &BackboneSpec, init_seed: u64) -> Result<ModelState> {
    spec.validate()?;
    let mut init_rng = seed::rng_from(seed::mix(init_seed, &[0x1417]));
    let mut network = Network::build(spec, &mut init_rng)?;
    if let Some(path) = &spec.pretrained_ref {
        let donor = super::checkpoint::read_tensors(path)?;
        if donor.spec.architecture != spec.architecture {
            return Err(Error::Checkpoint {
                path: path.clone(),
                message: format!(
                    "pretrained weights are {}, spec wants {}",
                    donor.spec.architecture, spec.architecture
                ),
            });
        }
        let mut params = Vec::new();
        let n_layers = network.layers.len();
        visit_params_mut(&mut network.layers[..n_layers - 1], "layers.", &mut params);
        for (name, p) in params {
            let t = donor.tensors.get(&name).ok_or_else(|| Error::Checkpoint {
                path: path.clone(),
                message: format!("missing tensor {name}"),
            })?;
            if t.shape != p.shape {
                return Err(Error::Shape(format!(
                    "{name}: checkpoint {:?} vs model {:?}",
                    t.shape, p.shape
                )));
            }
            p.value.clone_from(&t.values);
        }
        let fin = network.classifier().in_features;
        network.layers[n_layers - 1] = linear_layer(&mut init_rng, fin, spec.num_classes);
    } else {
        log::debug!("{}: no pretrained weights, using seeded random init", spec.model_id());
    }
    Ok(ModelState {
        spec: spec.clone(),
        network,
        epoch: 0,
        rng: seed::rng_from(seed::mix(init_seed, &[0x7261])),
    })
}

fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let n = logits.batch();
    let k = logits.sample_len();
    let mut grad = Tensor::zeros(logits.shape);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidArgument(format!("label {y} for {k} classes")));
        }
        let z = logits.sample(i);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[y];
        let p = SoftmaxOutput::from_logits(z);
        let g = &mut grad.data[i * k..(i + 1) * k];
        for (c, gc) in g.iter_mut().enumerate() {
            *gc = (p.0[c] - if c == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

impl ModelState {
    pub fn model_id(&self) -> String {
        self.spec.model_id()
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        let mut v = Vec::new();
        visit_params(&self.network.layers, "layers.", &mut v);
        v
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = Vec::new();
        visit_params_mut(&mut self.network.layers, "layers.", &mut v);
        v
    }

    pub fn logits(&self, inputs: &Tensor) -> Result<Tensor> {
        Ok(forward_seq(&self.network.layers, inputs.clone(), false)?.0)
    }

    /// One probability vector per image; no randomness is involved.
    pub fn forward_softmax(&self, images: &[RasterImage]) -> Result<Vec<SoftmaxOutput>> {
        const CHUNK: usize = 64;
        let size = self.spec.input_size;
        if let Some(bad) = images.iter().find(|i| i.width() != size || i.height() != size) {
            return Err(Error::Shape(format!(
                "{} expects {size}x{size} input, got {}x{}",
                self.model_id(),
                bad.width(),
                bad.height()
            )));
        }
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            let refs: Vec<&RasterImage> = chunk.iter().collect();
            let logits = self.logits(&Tensor::from_images(&refs)?)?;
            out.extend((0..chunk.len()).map(|i| SoftmaxOutput::from_logits(logits.sample(i))));
        }
        Ok(out)
    }

    /// Zeroes gradients, runs forward and backward, and leaves the mean
    /// cross-entropy gradient in every parameter's `grad`.
    pub fn loss_and_grad(&mut self, inputs: &Tensor, labels: &[usize]) -> Result<f64> {
        if inputs.batch() == 0 || inputs.batch() != labels.len() {
            return Err(Error::InvalidArgument("empty batch or label count mismatch".into()));
        }
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
        let (logits, caches) = forward_seq(&self.network.layers, inputs.clone(), true)?;
        let (loss, grad) = cross_entropy(&logits, labels)?;
        if !loss.is_finite() {
            return Ok(loss);
        }
        backward_seq(&mut self.network.layers, caches, grad)?;
        Ok(loss)
    }

    /// Mean cross-entropy without touching gradients.
    pub fn loss(&self, inputs: &Tensor, labels: &[usize]) -> Result<f64> {
        let logits = self.logits(inputs)?;
        Ok(cross_entropy(&logits, labels)?.0)
    }

    /// Momentum SGD on the batch cross-entropy:
    /// `v = momentum * v + (g + wd * w)`, `w -= lr * v` (decay on weights only).
    pub fn sgd_step(&mut self, batch: &Batch, opt: &SgdConfig) -> Result<f64> {
        if !(opt.lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be >= 0", opt.lr)));
        }
        let loss = self.loss_and_grad(&batch.inputs, &batch.labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss,
                lr: opt.lr,
                batch_ids: batch.ids.clone(),
                epoch: None,
            });
        }
        for (_, p) in self.params_mut() {
            if p.velocity.len() != p.value.len() {
                p.velocity = vec![0.0; p.value.len()];
            }
            let wd = if p.decay { opt.weight_decay } else { 0.0 };
            for ((w, v), g) in p.value.iter_mut().zip(p.velocity.iter_mut()).zip(&p.grad) {
                *v = opt.momentum * *v + (g + wd * *w);
                *w -= opt.lr * *v;
            }
        }
        Ok(loss)
    }

    /// Sets the classifier weights and biases to zero (uniform outputs).
    pub fn zero_classifier(&mut self) {
        let c = self.network.classifier_mut();
        c.weight.value.fill(0.0);
        c.bias.value.fill(0.0);
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }

    pub fn classifier_layer(&self) -> &Layer {
        self.network.layers.last().expect("non-empty network")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;

    fn probe_images(n: usize, size: u32, seed: u64) -> Vec<RasterImage> {
        let mut rng = seed::rng_from(seed);
        (0..n)
            .map(|_| {
                let data = (0..size * size * 3).map(|_| rng.random::<u8>()).collect();
                RasterImage::from_raw(size, size, data).unwrap()
            })
            .collect()
    }

    fn tiny(size: u32) -> BackboneSpec {
        BackboneSpec::new(Architecture::TinySurrogate, size)
    }

    #[test]
    fn build_is_deterministic() {
        let imgs = probe_images(3, 12, 1);
        let a = build_model(&tiny(12), 7).unwrap();
        let b = build_model(&tiny(12), 7).unwrap();
        assert_eq!(a.forward_softmax(&imgs).unwrap(), b.forward_softmax(&imgs).unwrap());
        let c = build_model(&tiny(12), 8).unwrap();
        assert_ne!(a.forward_softmax(&imgs).unwrap(), c.forward_softmax(&imgs).unwrap());
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(build_model(&BackboneSpec::new(Architecture::GoogleNetStyle, 350), 0).is_err());
    }

    #[test]
    fn outputs_are_normalized() {
        let m = build_model(&tiny(16), 3).unwrap();
        for o in m.forward_softmax(&probe_images(8, 16, 2)).unwrap() {
            let s: f64 = o.probabilities().iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(o.probabilities().iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn zero_classifier_gives_uniform() {
        let mut m = build_model(&tiny(16), 3).unwrap();
        m.zero_classifier();
        for o in m.forward_softmax(&probe_images(4, 16, 9)).unwrap() {
            assert_eq!(o.probabilities(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn size_mismatch_rejected() {
        let m = build_model(&tiny(16), 3).unwrap();
        assert!(matches!(m.forward_softmax(&probe_images(1, 15, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut m = build_model(&tiny(12), 4).unwrap();
        let imgs = probe_images(4, 12, 5);
        let refs: Vec<&RasterImage> = imgs.iter().collect();
        let batch = Batch::from_images((0..4).map(|i| i.to_string()).collect(), &refs, vec![0, 1, 0, 1]).unwrap();
        let before: Vec<Vec<f64>> = m.params().iter().map(|(_, p)| p.value.clone()).collect();
        let opt = SgdConfig { lr: 0.0, ..Default::default() };
        let loss = m.sgd_step(&batch, &opt).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        let after: Vec<Vec<f64>> = m.params().iter().map(|(_, p)| p.value.clone()).collect();
        assert_eq!(before, after);
        assert!(m.sgd_step(&batch, &SgdConfig { lr: -1.0, ..opt }).is_err());
    }

    #[test]
    fn non_finite_loss_reports_batch() {
        let mut m = build_model(&tiny(12), 4).unwrap();
        for (_, p) in m.params_mut() {
            p.value.fill(f64::NAN);
        }
        let imgs = probe_images(2, 12, 5);
        let refs: Vec<&RasterImage> = imgs.iter().collect();
        let batch = Batch::from_images(vec!["a".into(), "b".into()], &refs, vec![0, 1]).unwrap();
        match m.sgd_step(&batch, &SgdConfig::default()) {
            Err(Error::NonFiniteLoss { batch_ids, lr, .. }) => {
                assert_eq!(batch_ids, vec!["a", "b"]);
                assert_eq!(lr, 0.001);
            }
            other => panic!("expected non-finite loss error, got {other:?}"),
        }
    }
}
