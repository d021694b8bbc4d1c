//! The gradient-step attack family: FGSM/FGM one-shots and the BIM, PGD,
//! MIM iterations, all driven by untargeted cross-entropy ascent.
//!
//! Reduction laws hold exactly: BIM with 1 iteration equals FGSM, MIM with
//! zero momentum and 1 iteration equals FGSM, and PGD is BIM from a random
//! start inside the budget ball.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{DifferentiableClassifier, LossKind};
use crate::tensor::{NormKind, Scalar, Tensor};
use crate::util::{seeded_rng, standard_normal, uniform_f64};

use super::{clip01, AdversarialBatch, AttackKind, AttackSpec, FLAG_ZERO_GRAD};

const CHUNK: usize = 250;

pub(super) fn run<T: Scalar, C: DifferentiableClassifier<T>>(
    spec: &AttackSpec,
    classifier: &C,
    images: &Tensor<T>,
    labels: &[u8],
) -> Result<AdversarialBatch<T>> {
    let shape = images.shape().to_vec();
    let n = shape[0];
    let per: usize = shape[1..].iter().product();
    let mut adversarials = images.clone();
    let mut flags = vec![0u8; n];

    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let chunk_shape: Vec<usize> = std::iter::once(end - start).chain(shape[1..].iter().copied()).collect();
        let x0 = Tensor::new(&chunk_shape, images.data()[start * per..end * per].to_vec())?;
        let chunk_labels = &labels[start..end];
        let (adv, chunk_flags) = attack_chunk(spec, classifier, &x0, chunk_labels, start as u64)?;
        adversarials.data_mut()[start * per..end * per].copy_from_slice(adv.data());
        flags[start..end].copy_from_slice(&chunk_flags);
        start = end;
    }

    let surrogate_predictions = classifier.predict(&adversarials)?;
    let (linf, l2) = AdversarialBatch::measure_distortions(images, &adversarials)?;
    Ok(AdversarialBatch {
        label: spec.kind.name().to_string(),
        norm: spec.kind.norm(),
        epsilon: spec.epsilon,
        originals: images.clone(),
        adversarials,
        labels: labels.to_vec(),
        surrogate_predictions,
        linf_distortions: linf,
        l2_distortions: l2,
        flags,
    })
}

fn attack_chunk<T: Scalar, C: DifferentiableClassifier<T>>(
    spec: &AttackSpec,
    classifier: &C,
    x0: &Tensor<T>,
    labels: &[u8],
    item_offset: u64,
) -> Result<(Tensor<T>, Vec<u8>)> {
    let n = x0.shape()[0];
    let per = x0.numel() / n;
    let eps = spec.epsilon;
    let (iterations, step) = match spec.kind {
        AttackKind::Fgsm | AttackKind::Fgm => (1, eps),
        _ => (spec.iterations, spec.step()),
    };

    let mut adv = x0.clone();
    if spec.random_start && matches!(spec.kind, AttackKind::PgdLinf | AttackKind::PgdL2) {
        random_start(spec, &mut adv, x0, item_offset);
    }

    let mut momentum = vec![0.0f64; adv.numel()];
    let mut stepped = vec![false; n];

    for _ in 0..iterations {
        if eps == 0.0 {
            break;
        }
        let ig = classifier.input_gradient(&adv, labels, LossKind::CrossEntropy)?;
        for i in 0..n {
            let g = &ig.grad.data()[i * per..(i + 1) * per];
            match spec.kind {
                AttackKind::Fgsm | AttackKind::Bim | AttackKind::PgdLinf => {
                    let mut moved = false;
                    for j in 0..per {
                        let s = g[j].to_f64();
                        if s != 0.0 {
                            moved = true;
                            let idx = i * per + j;
                            let v = adv.data()[idx].to_f64() + step * s.signum();
                            adv.data_mut()[idx] = T::from_f64(v);
                        }
                    }
                    stepped[i] |= moved;
                }
                AttackKind::Mim => {
                    // g_acc <- mu * g_acc + g / ||g||_1, then a sign step.
                    let l1: f64 = g.iter().map(|v| v.to_f64().abs()).sum();
                    for j in 0..per {
                        let idx = i * per + j;
                        let normalized = if l1 > 0.0 { g[j].to_f64() / l1 } else { 0.0 };
                        momentum[idx] = spec.mim_decay * momentum[idx] + normalized;
                        let m = momentum[idx];
                        if m != 0.0 {
                            stepped[i] = true;
                            let v = adv.data()[idx].to_f64() + step * m.signum();
                            adv.data_mut()[idx] = T::from_f64(v);
                        }
                    }
                }
                AttackKind::Fgm | AttackKind::PgdL2 => {
                    let l2: f64 = g.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt();
                    if l2 > 0.0 {
                        stepped[i] = true;
                        for j in 0..per {
                            let idx = i * per + j;
                            let v = adv.data()[idx].to_f64() + step * g[j].to_f64() / l2;
                            adv.data_mut()[idx] = T::from_f64(v);
                        }
                    }
                }
                AttackKind::Cw | AttackKind::Blackbox => unreachable!("dispatched elsewhere"),
            }
        }
        project(spec.kind.norm(), &mut adv, x0, eps);
    }

    let mut flags = vec![0u8; n];
    for i in 0..n {
        if !stepped[i] && eps > 0.0 {
            // Dead gradient for the whole run: hand back the original.
            flags[i] |= FLAG_ZERO_GRAD;
            adv.data_mut()[i * per..(i + 1) * per]
                .copy_from_slice(&x0.data()[i * per..(i + 1) * per]);
        }
    }
    Ok((adv, flags))
}

/// Uniform start inside the budget ball around `x0`, then boxed to `[0,1]`.
fn random_start<T: Scalar>(spec: &AttackSpec, adv: &mut Tensor<T>, x0: &Tensor<T>, item_offset: u64) {
    let n = x0.shape()[0];
    let per = x0.numel() / n;
    let eps = spec.epsilon;
    if eps == 0.0 {
        return;
    }
    for i in 0..n {
        let mut rng: ChaCha8Rng = seeded_rng(
            spec.seed
                .wrapping_mul(0x9E3779B97F4A7C15)
                .wrapping_add(item_offset + i as u64),
        );
        match spec.kind.norm() {
            NormKind::LInf => {
                for j in 0..per {
                    let idx = i * per + j;
                    let d = (uniform_f64(&mut rng) * 2.0 - 1.0) * eps;
                    adv.data_mut()[idx] = clip01(T::from_f64(x0.data()[idx].to_f64() + d));
                }
            }
            NormKind::L2 => {
                // Direction by normal draws, radius by u^(1/d).
                let dir: Vec<f64> = (0..per).map(|_| standard_normal(&mut rng)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                let radius = eps * uniform_f64(&mut rng).powf(1.0 / per as f64);
                for j in 0..per {
                    let idx = i * per + j;
                    let d = dir[j] / norm * radius;
                    adv.data_mut()[idx] = clip01(T::from_f64(x0.data()[idx].to_f64() + d));
                }
            }
        }
    }
}

/// Projects every item back into the eps-ball around its original and the
/// `[0,1]` box. Box clipping after ball projection only shrinks distortion,
/// so both constraints hold on exit.
fn project<T: Scalar>(norm: NormKind, adv: &mut Tensor<T>, x0: &Tensor<T>, eps: f64) {
    let n = x0.shape()[0];
    let per = x0.numel() / n;
    match norm {
        NormKind::LInf => {
            let e = T::from_f64(eps);
            for idx in 0..adv.numel() {
                let lo = x0.data()[idx] - e;
                let hi = x0.data()[idx] + e;
                let v = adv.data()[idx].max(lo).min(hi);
                adv.data_mut()[idx] = clip01(v);
            }
        }
        NormKind::L2 => {
            for i in 0..n {
                let mut sq = 0.0f64;
                for j in i * per..(i + 1) * per {
                    let d = adv.data()[j].to_f64() - x0.data()[j].to_f64();
                    sq += d * d;
                }
                let dist = sq.sqrt();
                let scale = if dist > eps { eps / dist } else { 1.0 };
                for j in i * per..(i + 1) * per {
                    let x = x0.data()[j].to_f64();
                    let d = adv.data()[j].to_f64() - x;
                    adv.data_mut()[j] = clip01(T::from_f64(x + d * scale));
                }
            }
        }
    }
}
