//! The attack battery: white-box gradient attacks (FGSM, FGM, BIM,
//! PGD-linf, PGD-l2, MIM, CW-l2) mounted on a surrogate model, the
//! substitute-model black-box attack, and the median-filter denoiser.
//!
//! All attacks are untargeted and respect their budget: linf kinds keep
//! `max |x' - x| <= eps`, l2 kinds keep `||x' - x||_2 <= eps`, and every
//! adversarial pixel stays inside `[0, 1]`.

mod blackbox;
mod cw;
mod denoise;
mod gradient;

pub use blackbox::{blackbox_attack, BlackboxOutcome, BlackboxParams, EnsembleOracle, ProbabilityOracle};
pub use cw::CwParams;
pub use denoise::denoise;

use std::path::Path;

use crate::error::{PpdError, Result};
use crate::model::DifferentiableClassifier;
use crate::tensor::{NormKind, Scalar, Tensor};
use crate::util::fnv1a64;

const ADV_MAGIC: &[u8; 8] = b"PPDADV01";
const ADV_VERSION: u32 = 1;

/// Attack selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Fgsm,
    Fgm,
    Bim,
    PgdLinf,
    PgdL2,
    Mim,
    Cw,
    Blackbox,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Fgm => "fgm",
            AttackKind::Bim => "bim",
            AttackKind::PgdLinf => "pgd_linf",
            AttackKind::PgdL2 => "pgd_l2",
            AttackKind::Mim => "mim",
            AttackKind::Cw => "cw",
            AttackKind::Blackbox => "blackbox",
        }
    }

    pub fn norm(self) -> NormKind {
        match self {
            AttackKind::Fgsm | AttackKind::Bim | AttackKind::PgdLinf | AttackKind::Mim
            | AttackKind::Blackbox => NormKind::LInf,
            AttackKind::Fgm | AttackKind::PgdL2 | AttackKind::Cw => NormKind::L2,
        }
    }

    pub fn is_iterative(self) -> bool {
        matches!(
            self,
            AttackKind::Bim | AttackKind::PgdLinf | AttackKind::PgdL2 | AttackKind::Mim
                | AttackKind::Cw
        )
    }
}

impl std::str::FromStr for AttackKind {
    type Err = PpdError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fgsm" => AttackKind::Fgsm,
            "fgm" => AttackKind::Fgm,
            "bim" => AttackKind::Bim,
            "pgd" | "pgd_linf" => AttackKind::PgdLinf,
            "pgd_l2" => AttackKind::PgdL2,
            "mim" => AttackKind::Mim,
            "cw" => AttackKind::Cw,
            "blackbox" => AttackKind::Blackbox,
            other => return Err(PpdError::Config(format!("unknown attack kind `{other}`"))),
        })
    }
}

/// Full parameterization of one attack run.
#[derive(Debug, Clone)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Budget: linf pixel bound or l2 vector bound, by `kind.norm()`.
    pub epsilon: f64,
    pub iterations: usize,
    /// Step size for iterative kinds; `None` derives `2.5 * eps / iterations`.
    pub step_size: Option<f64>,
    /// MIM momentum decay.
    pub mim_decay: f64,
    pub cw: CwParams,
    pub blackbox: BlackboxParams,
    /// Seed for PGD random starts and black-box sampling.
    pub seed: u64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, epsilon: f64) -> Self {
        AttackSpec {
            kind,
            epsilon,
            iterations: if kind.is_iterative() { 40 } else { 1 },
            step_size: None,
            mim_decay: 1.0,
            cw: CwParams::default(),
            blackbox: BlackboxParams::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    /// Effective step size: `2.5 * eps / iterations` unless pinned.
    pub fn step(&self) -> f64 {
        self.step_size.unwrap_or(2.5 * self.epsilon / self.iterations as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(PpdError::Config(format!("epsilon {} < 0", self.epsilon)));
        }
        if self.iterations == 0 {
            return Err(PpdError::Config("iterations must be >= 1".into()));
        }
        if self.kind.is_iterative() && self.epsilon > 0.0 && self.step() <= 0.0 {
            return Err(PpdError::Config(format!(
                "step size {} must be > 0 for {}",
                self.step(),
                self.kind.name()
            )));
        }
        if self.kind == AttackKind::Cw && self.cw.constants.is_empty() {
            return Err(PpdError::Config("cw needs at least one constant".into()));
        }
        Ok(())
    }
}

pub const FLAG_ZERO_GRAD: u8 = 1;
pub const FLAG_NOT_CONVERGED: u8 = 2;

/// Originals, adversarials, and bookkeeping from one attack run.
pub struct AdversarialBatch<T: Scalar> {
    /// Generator name (attack kind or noise baseline).
    pub label: String,
    pub norm: NormKind,
    pub epsilon: f64,
    pub originals: Tensor<T>,
    pub adversarials: Tensor<T>,
    pub labels: Vec<u8>,
    pub surrogate_predictions: Vec<u8>,
    pub linf_distortions: Vec<f64>,
    pub l2_distortions: Vec<f64>,
    pub flags: Vec<u8>,
}

impl<T: Scalar> AdversarialBatch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fraction of items whose surrogate prediction differs from the label.
    pub fn fooling_rate(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        let fooled = self
            .labels
            .iter()
            .zip(&self.surrogate_predictions)
            .filter(|(l, p)| l != p)
            .count();
        fooled as f64 / self.labels.len() as f64
    }

    /// Checks pixels in `[0,1]` and the per-item budget in the batch's norm.
    pub fn check_budget(&self) -> Result<()> {
        if !self.adversarials.data().iter().all(|v| {
            let x = v.to_f64();
            (0.0..=1.0).contains(&x)
        }) {
            return Err(PpdError::Contract("adversarial pixel outside [0,1]".into()));
        }
        let (slack, measured) = match self.norm {
            NormKind::LInf => (1e-6, &self.linf_distortions),
            NormKind::L2 => (1e-5, &self.l2_distortions),
        };
        for (i, &d) in measured.iter().enumerate() {
            if d > self.epsilon + slack {
                return Err(PpdError::Contract(format!(
                    "item {i}: {} distortion {d} exceeds budget {}",
                    self.norm, self.epsilon
                )));
            }
        }
        Ok(())
    }

    /// Builds the per-item distortion records from originals/adversarials.
    pub(crate) fn measure_distortions(
        originals: &Tensor<T>,
        adversarials: &Tensor<T>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if originals.shape() != adversarials.shape() || originals.shape().len() != 4 {
            return Err(PpdError::Dimension(format!(
                "originals {:?} vs adversarials {:?}",
                originals.shape(),
                adversarials.shape()
            )));
        }
        let n = originals.shape()[0];
        let per = originals.numel() / n;
        let mut linf = Vec::with_capacity(n);
        let mut l2 = Vec::with_capacity(n);
        for i in 0..n {
            let mut max = 0.0f64;
            let mut sq = 0.0f64;
            for j in i * per..(i + 1) * per {
                let d = adversarials.data()[j].to_f64() - originals.data()[j].to_f64();
                max = max.max(d.abs());
                sq += d * d;
            }
            linf.push(max);
            l2.push(sq.sqrt());
        }
        Ok((linf, l2))
    }

    /// Versioned binary serialization with checksum. Write-temp-rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let n = self.len();
        let shape = self.originals.shape();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(ADV_MAGIC);
        bytes.extend_from_slice(&ADV_VERSION.to_le_bytes());
        bytes.push(T::PRECISION.byte_width() as u8);
        bytes.push(self.label.len() as u8);
        bytes.extend_from_slice(self.label.as_bytes());
        bytes.push(match self.norm {
            NormKind::LInf => 0,
            NormKind::L2 => 1,
        });
        bytes.extend_from_slice(&self.epsilon.to_le_bytes());
        for d in [n, shape[1], shape[2], shape[3]] {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for t in [&self.originals, &self.adversarials] {
            for &v in t.data() {
                v.write_le(&mut bytes);
            }
        }
        bytes.extend_from_slice(&self.labels);
        bytes.extend_from_slice(&self.surrogate_predictions);
        for list in [&self.linf_distortions, &self.l2_distortions] {
            for &d in list {
                bytes.extend_from_slice(&d.to_le_bytes());
            }
        }
        bytes.extend_from_slice(&self.flags);
        let checksum = fnv1a64(&bytes);
        bytes.extend_from_slice(&checksum.to_le_bytes());

        let tmp = path.with_extension("adv.tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| PpdError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| PpdError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| PpdError::io(path, e))?;
        let fail = |reason: &str| PpdError::format(path, reason);
        if bytes.len() < 8 + 4 + 2 + 8 + 16 + 8 || &bytes[..8] != ADV_MAGIC {
            return Err(fail("bad magic or truncated header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != ADV_VERSION {
            return Err(fail(&format!("unsupported version {version}")));
        }
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        if fnv1a64(&bytes[..bytes.len() - 8]) != stored {
            return Err(fail("checksum mismatch"));
        }
        let width = bytes[12] as usize;
        if width != T::PRECISION.byte_width() {
            return Err(fail(&format!(
                "precision {width}B does not match requested {}B",
                T::PRECISION.byte_width()
            )));
        }
        let label_len = bytes[13] as usize;
        let mut off = 14;
        let label = String::from_utf8(bytes[off..off + label_len].to_vec())
            .map_err(|_| fail("label is not utf-8"))?;
        off += label_len;
        let norm = match bytes[off] {
            0 => NormKind::LInf,
            1 => NormKind::L2,
            other => return Err(fail(&format!("unknown norm code {other}"))),
        };
        off += 1;
        let epsilon = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        off += 8;
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
            off += 4;
        }
        let [n, h, w, c] = dims;
        let pixels = n * h * w * c;
        let expected = off + 2 * pixels * width + 2 * n + 2 * n * 8 + n + 8;
        if bytes.len() != expected {
            return Err(fail(&format!("expected {expected} bytes, got {}", bytes.len())));
        }
        let mut read_tensor = |off: &mut usize| -> Tensor<T> {
            let t = Tensor::new(
                &[n, h, w, c],
                (0..pixels).map(|i| T::read_le(&bytes[*off + i * width..])).collect(),
            )
            .expect("batch tensor matches recorded dims");
            *off += pixels * width;
            t
        };
        let originals = read_tensor(&mut off);
        let adversarials = read_tensor(&mut off);
        let labels = bytes[off..off + n].to_vec();
        off += n;
        let surrogate_predictions = bytes[off..off + n].to_vec();
        off += n;
        let mut read_f64s = |off: &mut usize| -> Vec<f64> {
            let v = (0..n)
                .map(|i| f64::from_le_bytes(bytes[*off + i * 8..*off + i * 8 + 8].try_into().unwrap()))
                .collect();
            *off += n * 8;
            v
        };
        let linf_distortions = read_f64s(&mut off);
        let l2_distortions = read_f64s(&mut off);
        let flags = bytes[off..off + n].to_vec();
        Ok(AdversarialBatch {
            label,
            norm,
            epsilon,
            originals,
            adversarials,
            labels,
            surrogate_predictions,
            linf_distortions,
            l2_distortions,
            flags,
        })
    }
}

/// Runs a white-box attack against `classifier` (the adversary's surrogate).
/// Black-box runs need an oracle; see [`blackbox_attack`].
pub fn run_attack<T: Scalar, C: DifferentiableClassifier<T>>(
    spec: &AttackSpec,
    classifier: &C,
    images: &Tensor<T>,
    labels: &[u8],
) -> Result<AdversarialBatch<T>> {
    spec.validate()?;
    match spec.kind {
        AttackKind::Cw => cw::run(spec, classifier, images, labels),
        AttackKind::Blackbox => Err(PpdError::Config(
            "blackbox attack probes an oracle; call blackbox_attack".into(),
        )),
        _ => gradient::run(spec, classifier, images, labels),
    }
}

/// Sweeps `iterations` upward (doubling) until the surrogate fooling rate
/// stops improving by at least half a point, per the tuned-attack protocol.
pub fn tune_iterations<T: Scalar, C: DifferentiableClassifier<T>>(
    spec: &AttackSpec,
    classifier: &C,
    images: &Tensor<T>,
    labels: &[u8],
    max_iterations: usize,
) -> Result<(AttackSpec, AdversarialBatch<T>)> {
    if !spec.kind.is_iterative() {
        let batch = run_attack(spec, classifier, images, labels)?;
        return Ok((spec.clone(), batch));
    }
    let mut current = spec.clone();
    let mut batch = run_attack(&current, classifier, images, labels)?;
    let mut rate = batch.fooling_rate();
    loop {
        let next_iters = current.iterations * 2;
        if next_iters > max_iterations {
            break;
        }
        let candidate = current.clone().with_iterations(next_iters);
        let next_batch = run_attack(&candidate, classifier, images, labels)?;
        let next_rate = next_batch.fooling_rate();
        let improved = next_rate - rate >= 0.005;
        if next_rate > rate {
            current = candidate;
            batch = next_batch;
            rate = next_rate;
        }
        if !improved {
            break;
        }
    }
    Ok((current, batch))
}

pub(crate) fn clip01<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

#[cfg(test)]
mod tests;
