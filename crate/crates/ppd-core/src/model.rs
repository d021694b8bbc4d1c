//! The dense classifier `f`, its trainer, and the composed defended model
//! `h(x) = f(p(sigma(x)))` with input gradients for attack construction.
//!
//! The network is three fully connected layers (800x300x10 at paper scale)
//! with relu activations and a softmax head, trained with cross-entropy.
//! Phases enter the network scaled by 1/pi so inputs sit in `[-1, 1)`.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::datasets::{LabeledDataset, Split};
use crate::error::{PpdError, Result};
use crate::permutation::PermutationKey;
use crate::pixel2phase::{phase_node, Dft2};
use crate::tensor::tape::{softmax_rows, CustomOp, NodeId, Tape};
use crate::tensor::{Scalar, Tensor};
use crate::util::{fnv1a64, seeded_rng, uniform_f64};

const CKPT_MAGIC: &[u8; 8] = b"PPDCKPT1";
const CKPT_VERSION: u32 = 1;

/// Layer sizes of the dense network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkDims {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub classes: usize,
}

impl NetworkDims {
    /// The 800x300x10 configuration used for both MNIST and CIFAR-10.
    pub fn paper(input: usize) -> Self {
        NetworkDims { input, hidden1: 800, hidden2: 300, classes: 10 }
    }

    pub fn new(input: usize, hidden1: usize, hidden2: usize, classes: usize) -> Self {
        NetworkDims { input, hidden1, hidden2, classes }
    }

    pub fn parameter_count(&self) -> usize {
        self.input * self.hidden1
            + self.hidden1
            + self.hidden1 * self.hidden2
            + self.hidden2
            + self.hidden2 * self.classes
            + self.classes
    }
}

/// Weights and biases of the three-layer dense network.
///
/// `key_ref` is a fingerprint of the permutation key the model was trained
/// behind (0 when the model runs on raw pixels); the key itself never enters
/// a checkpoint.
pub struct DenseModel<T: Scalar> {
    pub dims: NetworkDims,
    pub(crate) w1: Tensor<T>,
    pub(crate) b1: Tensor<T>,
    pub(crate) w2: Tensor<T>,
    pub(crate) b2: Tensor<T>,
    pub(crate) w3: Tensor<T>,
    pub(crate) b3: Tensor<T>,
    pub key_ref: u64,
}

impl<T: Scalar> Clone for DenseModel<T> {
    fn clone(&self) -> Self {
        DenseModel {
            dims: self.dims,
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2.clone(),
            w3: self.w3.clone(),
            b3: self.b3.clone(),
            key_ref: self.key_ref,
        }
    }
}

fn fan_in_uniform<T: Scalar>(
    rng: &mut rand_chacha::ChaCha8Rng,
    rows: usize,
    cols: usize,
) -> Tensor<T> {
    // Scaled uniform init, fan-in based: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
    let limit = (6.0 / rows as f64).sqrt();
    Tensor::from_fn(&[rows, cols], |_| T::from_f64((uniform_f64(rng) * 2.0 - 1.0) * limit))
}

impl<T: Scalar> DenseModel<T> {
    /// Fresh model with fan-in scaled uniform weights and zero biases.
    pub fn new_random(dims: NetworkDims, init_seed: u64, key_ref: u64) -> Self {
        let mut rng = seeded_rng(init_seed);
        DenseModel {
            dims,
            w1: fan_in_uniform(&mut rng, dims.input, dims.hidden1),
            b1: Tensor::zeros(&[dims.hidden1]),
            w2: fan_in_uniform(&mut rng, dims.hidden1, dims.hidden2),
            b2: Tensor::zeros(&[dims.hidden2]),
            w3: fan_in_uniform(&mut rng, dims.hidden2, dims.classes),
            b3: Tensor::zeros(&[dims.classes]),
            key_ref,
        }
    }

    fn affine(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let mut out = x.matmul(w)?;
        let (rows, n) = out.dims2()?;
        for r in 0..rows {
            for c in 0..n {
                let cell = &mut out.data_mut()[r * n + c];
                *cell = *cell + b.data()[c];
            }
        }
        Ok(out)
    }

    /// Pre-softmax scores for a `[B, input]` feature batch.
    pub fn forward_logits(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, d) = features.dims2()?;
        if d != self.dims.input {
            return Err(PpdError::Dimension(format!(
                "features of width {d} for input dim {}",
                self.dims.input
            )));
        }
        let h1 = Self::affine(features, &self.w1, &self.b1)?
            .map(|v| if v > T::zero() { v } else { T::zero() });
        let h2 = Self::affine(&h1, &self.w2, &self.b2)?
            .map(|v| if v > T::zero() { v } else { T::zero() });
        Self::affine(&h2, &self.w3, &self.b3)
    }

    /// Class probabilities; each row sums to 1.
    pub fn forward_probs(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(softmax_rows(&self.forward_logits(features)?))
    }

    /// Records the forward pass on a tape. Returns the parameter leaves in
    /// optimizer order and the logits node.
    pub fn logits_on_tape(
        &self,
        tape: &mut Tape<T>,
        features: NodeId,
    ) -> Result<(DenseParamNodes, NodeId)> {
        let w1 = tape.leaf(self.w1.clone());
        let b1 = tape.leaf(self.b1.clone());
        let w2 = tape.leaf(self.w2.clone());
        let b2 = tape.leaf(self.b2.clone());
        let w3 = tape.leaf(self.w3.clone());
        let b3 = tape.leaf(self.b3.clone());
        let z1 = tape.matmul(features, w1)?;
        let z1 = tape.bias_add(z1, b1)?;
        let a1 = tape.relu(z1);
        let z2 = tape.matmul(a1, w2)?;
        let z2 = tape.bias_add(z2, b2)?;
        let a2 = tape.relu(z2);
        let z3 = tape.matmul(a2, w3)?;
        let logits = tape.bias_add(z3, b3)?;
        Ok((DenseParamNodes { w1, b1, w2, b2, w3, b3 }, logits))
    }

    fn params_mut(&mut self) -> [&mut Tensor<T>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.w1.all_finite()
            && self.b1.all_finite()
            && self.w2.all_finite()
            && self.b2.all_finite()
            && self.w3.all_finite()
            && self.b3.all_finite()
    }

    /// Writes the versioned checkpoint: header, dims, key fingerprint,
    /// little-endian parameter arrays, FNV checksum. Write-temp-rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(64 + self.dims.parameter_count() * T::PRECISION.byte_width());
        bytes.extend_from_slice(CKPT_MAGIC);
        bytes.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        bytes.push(T::PRECISION.byte_width() as u8);
        for dim in [self.dims.input, self.dims.hidden1, self.dims.hidden2, self.dims.classes] {
            bytes.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        bytes.extend_from_slice(&self.key_ref.to_le_bytes());
        for part in [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3] {
            for &v in part.data() {
                v.write_le(&mut bytes);
            }
        }
        let checksum = fnv1a64(&bytes);
        bytes.extend_from_slice(&checksum.to_le_bytes());

        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| PpdError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| PpdError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| PpdError::io(path, e))?;
        let header = 8 + 4 + 1 + 16 + 8;
        if bytes.len() < header + 8 {
            return Err(PpdError::Checkpoint(format!(
                "{}: truncated ({} bytes)",
                path.display(),
                bytes.len()
            )));
        }
        if &bytes[..8] != CKPT_MAGIC {
            return Err(PpdError::Checkpoint(format!("{}: bad magic", path.display())));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(PpdError::Checkpoint(format!(
                "{}: unsupported version {version}",
                path.display()
            )));
        }
        let width = bytes[12] as usize;
        if width != T::PRECISION.byte_width() {
            return Err(PpdError::Checkpoint(format!(
                "{}: precision {width}B does not match requested {}B",
                path.display(),
                T::PRECISION.byte_width()
            )));
        }
        let mut dims = [0usize; 4];
        for (i, d) in dims.iter_mut().enumerate() {
            *d = u32::from_le_bytes(bytes[13 + i * 4..17 + i * 4].try_into().unwrap()) as usize;
        }
        let dims = NetworkDims::new(dims[0], dims[1], dims[2], dims[3]);
        let key_ref = u64::from_le_bytes(bytes[29..37].try_into().unwrap());

        let expected = header + dims.parameter_count() * width + 8;
        if bytes.len() != expected {
            return Err(PpdError::Checkpoint(format!(
                "{}: expected {expected} bytes, got {}",
                path.display(),
                bytes.len()
            )));
        }
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        if fnv1a64(&bytes[..bytes.len() - 8]) != stored {
            return Err(PpdError::Checkpoint(format!("{}: checksum mismatch", path.display())));
        }

        let mut offset = header;
        let mut read_part = |shape: &[usize]| -> Tensor<T> {
            let n: usize = shape.iter().product();
            let t = Tensor::new(
                shape,
                (0..n).map(|i| T::read_le(&bytes[offset + i * width..])).collect(),
            )
            .expect("checkpoint part matches shape");
            offset += n * width;
            t
        };
        Ok(DenseModel {
            dims,
            w1: read_part(&[dims.input, dims.hidden1]),
            b1: read_part(&[dims.hidden1]),
            w2: read_part(&[dims.hidden1, dims.hidden2]),
            b2: read_part(&[dims.hidden2]),
            w3: read_part(&[dims.hidden2, dims.classes]),
            b3: read_part(&[dims.classes]),
            key_ref,
        })
    }
}

/// Parameter leaves recorded by [`DenseModel::logits_on_tape`], in the fixed
/// optimizer order w1, b1, w2, b2, w3, b3.
pub struct DenseParamNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub w3: NodeId,
    pub b3: NodeId,
}

impl DenseParamNodes {
    fn ordered(&self) -> [NodeId; 6] {
        [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// Adaptive moment estimation.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    /// Plain gradient descent.
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub init_seed: u64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::default(),
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 20,
            init_seed: 42,
            shuffle_seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(PpdError::Config(format!(
                "learning rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(PpdError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(PpdError::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

struct Optimizer<T: Scalar> {
    kind: OptimizerKind,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> Optimizer<T> {
    fn new(kind: OptimizerKind, shapes: &[&[usize]]) -> Self {
        Optimizer {
            kind,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            step: 0,
        }
    }

    fn update(&mut self, params: [&mut Tensor<T>; 6], grads: &[Tensor<T>], lr: f64) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = T::from_f64(lr);
                for (p, g) in params.into_iter().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv = *pv - lr * *gv;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                let b1 = T::from_f64(beta1);
                let b2 = T::from_f64(beta2);
                let one_minus_b1 = T::from_f64(1.0 - beta1);
                let one_minus_b2 = T::from_f64(1.0 - beta2);
                let eps = T::from_f64(epsilon);
                let bc1 = T::from_f64(1.0 - beta1.powi(self.step as i32));
                let bc2 = T::from_f64(1.0 - beta2.powi(self.step as i32));
                let lr = T::from_f64(lr);
                for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let m = &mut self.m[i];
                    let v = &mut self.v[i];
                    for ((pv, gv), (mv, vv)) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                    {
                        *mv = b1 * *mv + one_minus_b1 * *gv;
                        *vv = b2 * *vv + one_minus_b2 * *gv * *gv;
                        let m_hat = *mv / bc1;
                        let v_hat = *vv / bc2;
                        *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Image-to-feature front end of a classifier, both eagerly and on a tape.
pub trait Featurizer<T: Scalar>: Send + Sync {
    /// `(height, width, channels)` of the expected input images.
    fn image_shape(&self) -> (usize, usize, usize);

    fn feature_dim(&self) -> usize {
        let (h, w, c) = self.image_shape();
        h * w * c
    }

    /// `[B,H,W,C] -> [B,D]`.
    fn features(&self, images: &Tensor<T>) -> Result<Tensor<T>>;

    fn features_on_tape(&self, tape: &mut Tape<T>, images: NodeId) -> Result<FeatureNode>;
}

pub struct FeatureNode {
    pub node: NodeId,
    /// Filled by the phase front end: gradient bins suppressed by the
    /// magnitude floor during backward.
    pub masked_bins: Option<Arc<AtomicUsize>>,
}

fn batch_of<T: Scalar>(images: &Tensor<T>, expect: (usize, usize, usize)) -> Result<usize> {
    match *images.shape() {
        [b, h, w, c] if (h, w, c) == expect => Ok(b),
        [h, w, c] if (h, w, c) == expect => Ok(1),
        ref other => Err(PpdError::Dimension(format!(
            "expected images of {expect:?}, got {other:?}"
        ))),
    }
}

struct PermuteTapeOp {
    key: Arc<PermutationKey>,
}

impl<T: Scalar> CustomOp<T> for PermuteTapeOp {
    fn backward(
        &self,
        upstream: &Tensor<T>,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
    ) -> Vec<Tensor<T>> {
        // sigma is a fixed relabeling; its adjoint is the inverse relabeling.
        vec![self.key.apply_inverse(upstream).expect("shape recorded in forward")]
    }
}

/// Permutation followed by DFT phase, scaled by 1/pi and flattened.
pub struct PhaseFeaturizer<T: Scalar> {
    key: Arc<PermutationKey>,
    dft: Arc<Dft2<T>>,
    channels: usize,
}

impl<T: Scalar> PhaseFeaturizer<T> {
    pub fn new(key: Arc<PermutationKey>, channels: usize) -> Result<Self> {
        let dft = Arc::new(Dft2::new(key.height(), key.width())?);
        if channels == 0 {
            return Err(PpdError::Dimension("zero channels".into()));
        }
        Ok(PhaseFeaturizer { key, dft, channels })
    }

    pub fn key(&self) -> &PermutationKey {
        &self.key
    }

    pub fn dft(&self) -> &Arc<Dft2<T>> {
        &self.dft
    }
}

impl<T: Scalar> Featurizer<T> for PhaseFeaturizer<T> {
    fn image_shape(&self) -> (usize, usize, usize) {
        (self.key.height(), self.key.width(), self.channels)
    }

    fn features(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = batch_of(images, self.image_shape())?;
        let permuted = self.key.apply(images)?;
        let (phases, _) = crate::pixel2phase::phase(self.dft.as_ref(), &permuted)?;
        let inv_pi = T::from_f64(1.0 / std::f64::consts::PI);
        phases.into_values().scale(inv_pi).into_shape(&[batch, self.feature_dim()])
    }

    fn features_on_tape(&self, tape: &mut Tape<T>, images: NodeId) -> Result<FeatureNode> {
        let batch = batch_of(tape.value(images), self.image_shape())?;
        let permuted_value = self.key.apply(tape.value(images))?;
        let permuted = tape.custom(
            &[images],
            permuted_value,
            Box::new(PermuteTapeOp { key: Arc::clone(&self.key) }),
        );
        let (phases, masked) = phase_node(&self.dft, tape, permuted)?;
        let scaled = tape.scale(phases, T::from_f64(1.0 / std::f64::consts::PI));
        let node = tape.reshape(scaled, &[batch, self.feature_dim()])?;
        Ok(FeatureNode { node, masked_bins: Some(masked) })
    }
}

/// Flatten-only front end for models on raw pixels (the black-box
/// substitute).
#[derive(Debug, Clone, Copy)]
pub struct RawFeaturizer {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl<T: Scalar> Featurizer<T> for RawFeaturizer {
    fn image_shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    fn features(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = batch_of(images, self.image_shape())?;
        images.clone().into_shape(&[batch, self.feature_dim()])
    }

    fn features_on_tape(&self, tape: &mut Tape<T>, images: NodeId) -> Result<FeatureNode> {
        let batch = batch_of(tape.value(images), self.image_shape())?;
        let node = tape.reshape(images, &[batch, self.feature_dim()])?;
        Ok(FeatureNode { node, masked_bins: None })
    }
}

/// Loss driving gradient computation w.r.t. the input image.
#[derive(Debug, Clone, Copy)]
pub enum LossKind {
    /// Untargeted cross-entropy against the true labels.
    CrossEntropy,
    /// Summed Carlini-Wagner hinge `max(z_y - max_{j!=y} z_j, -kappa)`;
    /// minimized (not ascended) to push examples across the boundary.
    CwHinge { kappa: f64 },
}

pub struct InputGradient<T: Scalar> {
    pub grad: Tensor<T>,
    pub probs: Tensor<T>,
    pub loss: f64,
    /// Gradient bins zeroed by the phase magnitude floor.
    pub masked_bins: usize,
}

/// A classifier exposing input gradients through its whole pipeline.
pub trait DifferentiableClassifier<T: Scalar>: Send + Sync {
    fn image_shape(&self) -> (usize, usize, usize);

    fn num_classes(&self) -> usize;

    /// Records images -> logits on the tape.
    fn logits_on_tape(&self, tape: &mut Tape<T>, images: NodeId) -> Result<LogitsNode>;

    fn predict_proba(&self, images: &Tensor<T>) -> Result<Tensor<T>>;

    fn predict(&self, images: &Tensor<T>) -> Result<Vec<u8>> {
        Ok(self
            .predict_proba(images)?
            .argmax_rows()?
            .into_iter()
            .map(|c| c as u8)
            .collect())
    }

    /// Gradient of the requested loss w.r.t. the input pixels.
    fn input_gradient(
        &self,
        images: &Tensor<T>,
        labels: &[u8],
        loss: LossKind,
    ) -> Result<InputGradient<T>> {
        let mut tape = Tape::new();
        let x = tape.leaf(images.clone());
        let LogitsNode { logits, masked_bins } = self.logits_on_tape(&mut tape, x)?;
        let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let loss_node = match loss {
            LossKind::CrossEntropy => tape.softmax_cross_entropy(logits, &labels)?,
            LossKind::CwHinge { kappa } => {
                let margins = tape.cw_hinge(logits, &labels, T::from_f64(kappa))?;
                tape.sum(margins)
            }
        };
        let loss_value = tape.value(loss_node).item()?.to_f64();
        let mut grads = tape.backward(loss_node)?;
        Ok(InputGradient {
            grad: grads.take(x),
            probs: softmax_rows(tape.value(logits)),
            loss: loss_value,
            masked_bins: masked_bins.map_or(0, |m| m.load(Ordering::Relaxed)),
        })
    }
}

pub struct LogitsNode {
    pub logits: NodeId,
    pub masked_bins: Option<Arc<AtomicUsize>>,
}

/// The defended classifier: permutation, phase, dense network.
pub struct PpdModel<T: Scalar> {
    model: DenseModel<T>,
    featurizer: PhaseFeaturizer<T>,
}

impl<T: Scalar> PpdModel<T> {
    /// Binds a dense model to its permutation key. The checkpoint's key
    /// fingerprint must match the key (a fresh model adopts it).
    pub fn new(mut model: DenseModel<T>, key: PermutationKey, channels: usize) -> Result<Self> {
        let expected = key.height() * key.width() * channels;
        if model.dims.input != expected {
            return Err(PpdError::Dimension(format!(
                "model input dim {} vs {}x{}x{channels} images",
                model.dims.input,
                key.height(),
                key.width()
            )));
        }
        let fingerprint = key.fingerprint();
        if model.key_ref == 0 {
            model.key_ref = fingerprint;
        } else if model.key_ref != fingerprint {
            return Err(PpdError::Config(format!(
                "checkpoint is bound to key {:016x}, got {:016x}",
                model.key_ref, fingerprint
            )));
        }
        let featurizer = PhaseFeaturizer::new(Arc::new(key), channels)?;
        Ok(PpdModel { model, featurizer })
    }

    /// Fresh randomly initialized model behind `key`.
    pub fn new_random(
        key: PermutationKey,
        channels: usize,
        dims: NetworkDims,
        init_seed: u64,
    ) -> Result<Self> {
        let model = DenseModel::new_random(dims, init_seed, 0);
        Self::new(model, key, channels)
    }

    pub fn load(checkpoint: &Path, key_file: &Path, channels: usize) -> Result<Self> {
        let model = DenseModel::load(checkpoint)?;
        let key = PermutationKey::load(key_file)?;
        Self::new(model, key, channels)
    }

    pub fn model(&self) -> &DenseModel<T> {
        &self.model
    }

    pub fn key(&self) -> &PermutationKey {
        self.featurizer.key()
    }

    pub fn featurizer(&self) -> &PhaseFeaturizer<T> {
        &self.featurizer
    }

    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        self.model.save(checkpoint)
    }

    /// Cross-entropy training of the dense head behind the fixed
    /// permutation-phase front end.
    pub fn train(
        &mut self,
        train: &LabeledDataset,
        test: Option<&LabeledDataset>,
        config: &TrainConfig,
    ) -> Result<Vec<EpochMetrics>> {
        train_dense(&mut self.model, &self.featurizer, train, test, config)
    }
}

impl<T: Scalar> DifferentiableClassifier<T> for PpdModel<T> {
    fn image_shape(&self) -> (usize, usize, usize) {
        Featurizer::<T>::image_shape(&self.featurizer)
    }

    fn num_classes(&self) -> usize {
        self.model.dims.classes
    }

    fn logits_on_tape(&self, tape: &mut Tape<T>, images: NodeId) -> Result<LogitsNode> {
        let feats = self.featurizer.features_on_tape(tape, images)?;
        let (_, logits) = self.model.logits_on_tape(tape, feats.node)?;
        Ok(LogitsNode { logits, masked_bins: feats.masked_bins })
    }

    fn predict_proba(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let feats = self.featurizer.features(images)?;
        self.model.forward_probs(&feats)
    }
}

/// A dense model on raw flattened pixels (no permutation, no phase); the
/// black-box substitute architecture.
pub struct RawModel<T: Scalar> {
    pub model: DenseModel<T>,
    featurizer: RawFeaturizer,
}

impl<T: Scalar> RawModel<T> {
    pub fn new(model: DenseModel<T>, height: usize, width: usize, channels: usize) -> Result<Self> {
        if model.dims.input != height * width * channels {
            return Err(PpdError::Dimension(format!(
                "model input dim {} vs {height}x{width}x{channels} images",
                model.dims.input
            )));
        }
        Ok(RawModel { model, featurizer: RawFeaturizer { height, width, channels } })
    }

    pub fn train(
        &mut self,
        train: &LabeledDataset,
        test: Option<&LabeledDataset>,
        config: &TrainConfig,
    ) -> Result<Vec<EpochMetrics>> {
        let featurizer = self.featurizer;
        train_dense(&mut self.model, &featurizer, train, test, config)
    }
}

impl<T: Scalar> DifferentiableClassifier<T> for RawModel<T> {
    fn image_shape(&self) -> (usize, usize, usize) {
        (self.featurizer.height, self.featurizer.width, self.featurizer.channels)
    }

    fn num_classes(&self) -> usize {
        self.model.dims.classes
    }

    fn logits_on_tape(&self, tape: &mut Tape<T>, images: NodeId) -> Result<LogitsNode> {
        let feats = Featurizer::<T>::features_on_tape(&self.featurizer, tape, images)?;
        let (_, logits) = self.model.logits_on_tape(tape, feats.node)?;
        Ok(LogitsNode { logits, masked_bins: None })
    }

    fn predict_proba(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let feats = Featurizer::<T>::features(&self.featurizer, images)?;
        self.model.forward_probs(&feats)
    }
}

/// Accuracy of a classifier over a dataset, evaluated in chunks.
pub fn accuracy_on<T: Scalar, C: DifferentiableClassifier<T> + ?Sized>(
    classifier: &C,
    dataset: &LabeledDataset,
) -> Result<f64> {
    let mut correct = 0usize;
    let chunk = 1000;
    let n = dataset.len();
    let mut i = 0;
    while i < n {
        let end = (i + chunk).min(n);
        let idx: Vec<u32> = (i as u32..end as u32).collect();
        let images = dataset.gather::<T>(&idx);
        let pred = classifier.predict(&images)?;
        correct += pred
            .iter()
            .zip(&dataset.labels()[i..end])
            .filter(|(p, l)| p == l)
            .count();
        i = end;
    }
    Ok(correct as f64 / n as f64)
}

/// Minimizes softmax cross-entropy of `f(featurizer(x))` against labels.
/// Deterministic given the config seeds (single-threaded).
pub fn train_dense<T: Scalar, F: Featurizer<T>>(
    model: &mut DenseModel<T>,
    featurizer: &F,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    config: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    if train.split() != Split::Train {
        return Err(PpdError::Contract("training requires the train split".into()));
    }
    let (h, w, c) = featurizer.image_shape();
    if train.image_shape() != (h, w, c) {
        return Err(PpdError::Dimension(format!(
            "dataset images {:?} vs featurizer {:?}",
            train.image_shape(),
            (h, w, c)
        )));
    }
    if featurizer.feature_dim() != model.dims.input {
        return Err(PpdError::Dimension(format!(
            "feature dim {} vs model input {}",
            featurizer.feature_dim(),
            model.dims.input
        )));
    }

    let shapes: Vec<Vec<usize>> = {
        let dims = model.dims;
        vec![
            vec![dims.input, dims.hidden1],
            vec![dims.hidden1],
            vec![dims.hidden1, dims.hidden2],
            vec![dims.hidden2],
            vec![dims.hidden2, dims.classes],
            vec![dims.classes],
        ]
    };
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut optimizer = Optimizer::new(config.optimizer, &shape_refs);
    let mut metrics = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let epoch_seed = config.shuffle_seed.wrapping_add(epoch as u64);
        for (idx, labels) in train.batches(config.batch_size, epoch_seed)? {
            let images = train.gather::<T>(&idx);
            let mut tape = Tape::new();
            let x = tape.leaf(images);
            let feats = featurizer.features_on_tape(&mut tape, x)?;
            let (params, logits) = model.logits_on_tape(&mut tape, feats.node)?;
            let label_idx: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
            let loss = tape.softmax_cross_entropy(logits, &label_idx)?;

            let loss_value = tape.value(loss).item()?.to_f64();
            if !loss_value.is_finite() {
                return Err(PpdError::Training {
                    epoch,
                    reason: format!("loss became {loss_value}"),
                });
            }
            let pred = tape.value(logits).argmax_rows()?;
            correct += pred.iter().zip(&labels).filter(|(p, l)| **p == **l as usize).count();
            loss_sum += loss_value * idx.len() as f64;

            let mut grads = tape.backward(loss)?;
            let grad_list: Vec<Tensor<T>> =
                params.ordered().into_iter().map(|id| grads.take(id)).collect();
            optimizer.update(model.params_mut(), &grad_list, config.learning_rate);
        }
        if !model.all_finite() {
            return Err(PpdError::Training { epoch, reason: "non-finite parameters".into() });
        }

        let test_accuracy = match test {
            Some(ds) => Some(eval_accuracy(model, featurizer, ds)?),
            None => None,
        };
        metrics.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            test_accuracy,
        });
    }
    Ok(metrics)
}

fn eval_accuracy<T: Scalar, F: Featurizer<T>>(
    model: &DenseModel<T>,
    featurizer: &F,
    dataset: &LabeledDataset,
) -> Result<f64> {
    let mut correct = 0usize;
    let chunk = 1000;
    let n = dataset.len();
    let mut i = 0;
    while i < n {
        let end = (i + chunk).min(n);
        let idx: Vec<u32> = (i as u32..end as u32).collect();
        let images = dataset.gather::<T>(&idx);
        let feats = featurizer.features(&images)?;
        let pred = model.forward_probs(&feats)?.argmax_rows()?;
        correct += pred
            .iter()
            .zip(&dataset.labels()[i..end])
            .filter(|(p, l)| **p == **l as usize)
            .count();
        i = end;
    }
    Ok(correct as f64 / n as f64)
}
