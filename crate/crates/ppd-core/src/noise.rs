//! Random-noise baselines against which attack effectiveness is judged.
//!
//! The linf baseline adds `+p` or `-p` to each pixel with probability 1/2;
//! the l2 baseline draws a matrix iid from `[-0.5, 0.5)` and rescales it to
//! norm exactly `p`. Images are clipped back to `[0,1]` after the noise is
//! applied, so pre-clip deltas are also reported for distortion accounting
//! both ways.

use rand_core::RngCore;

use crate::error::{PpdError, Result};
use crate::tensor::{NormKind, Scalar, Tensor};
use crate::util::{seeded_rng, uniform_f64};

#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub kind: NormKind,
    pub strength: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.strength < 0.0 {
            return Err(PpdError::Config(format!("noise strength {} < 0", self.strength)));
        }
        Ok(())
    }
}

/// A noised image with the exact pre-clip displacement norms.
pub struct NoiseOutcome<T: Scalar> {
    pub image: Tensor<T>,
    pub preclip_linf: f64,
    pub preclip_l2: f64,
}

/// Adds `+p`/`-p` per pixel (fair coin per pixel), then clips to `[0,1]`.
pub fn linf_noise<T: Scalar>(x: &Tensor<T>, p: f64, seed: u64) -> NoiseOutcome<T> {
    let mut rng = seeded_rng(seed);
    let pt = T::from_f64(p);
    let mut image = x.clone();
    for v in image.data_mut() {
        let sign = if rng.next_u32() >> 31 == 1 { pt } else { -pt };
        *v = (*v + sign).max(T::zero()).min(T::one());
    }
    let preclip_linf = if x.numel() > 0 { p } else { 0.0 };
    let preclip_l2 = p * (x.numel() as f64).sqrt();
    NoiseOutcome { image, preclip_linf, preclip_l2 }
}

/// Draws a delta iid from `[-0.5, 0.5)`, rescales it to l2 norm exactly `p`,
/// adds it, clips to `[0,1]`. A measure-zero all-zero draw is redrawn.
pub fn l2_noise<T: Scalar>(x: &Tensor<T>, p: f64, seed: u64) -> NoiseOutcome<T> {
    let mut rng = seeded_rng(seed);
    if p == 0.0 {
        return NoiseOutcome { image: x.clone(), preclip_linf: 0.0, preclip_l2: 0.0 };
    }
    let n = x.numel();
    let delta: Vec<f64> = loop {
        let draw: Vec<f64> = (0..n).map(|_| uniform_f64(&mut rng) - 0.5).collect();
        if draw.iter().any(|&d| d != 0.0) {
            break draw;
        }
    };
    let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
    let scale = p / norm;
    let mut image = x.clone();
    let mut preclip_linf = 0.0f64;
    let mut preclip_l2 = 0.0f64;
    for (v, d) in image.data_mut().iter_mut().zip(&delta) {
        let step = T::from_f64(d * scale);
        let s = step.to_f64();
        preclip_linf = preclip_linf.max(s.abs());
        preclip_l2 += s * s;
        *v = (*v + step).max(T::zero()).min(T::one());
    }
    NoiseOutcome { image, preclip_linf, preclip_l2: preclip_l2.sqrt() }
}

/// Applies the requested noise to every image of a `[B,H,W,C]` batch, one
/// independent draw per image (seed offset by the batch index).
pub fn noise_batch<T: Scalar>(
    kind: NormKind,
    images: &Tensor<T>,
    strength: f64,
    seed: u64,
) -> Result<Tensor<T>> {
    let shape = images.shape().to_vec();
    if shape.len() != 4 {
        return Err(PpdError::Dimension(format!("expected [B,H,W,C], got {shape:?}")));
    }
    let per = shape[1] * shape[2] * shape[3];
    let mut out = images.clone();
    for b in 0..shape[0] {
        let slice = &images.data()[b * per..(b + 1) * per];
        let single = Tensor::new(&shape[1..], slice.to_vec())?;
        let noised = match kind {
            NormKind::LInf => linf_noise(&single, strength, seed.wrapping_add(b as u64)),
            NormKind::L2 => l2_noise(&single, strength, seed.wrapping_add(b as u64)),
        };
        out.data_mut()[b * per..(b + 1) * per].copy_from_slice(noised.image.data());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;

    fn random_image(seed: u64) -> Tensor<f64> {
        let mut rng = seeded_rng(seed);
        Tensor::from_fn(&[6, 6, 1], |_| uniform_f64(&mut rng))
    }

    #[test]
    fn zero_strength_changes_nothing() {
        let x = random_image(1);
        assert_eq!(linf_noise(&x, 0.0, 7).image, x);
        assert_eq!(l2_noise(&x, 0.0, 7).image, x);
    }

    #[test]
    fn linf_deltas_have_magnitude_exactly_p_preclip() {
        // Unclipped case: start from 0.5 with p small enough to stay inside.
        let x = Tensor::<f64>::full(&[8, 8, 1], 0.5);
        let p = 0.25;
        let out = linf_noise(&x, p, 3);
        for (a, b) in out.image.data().iter().zip(x.data()) {
            assert_eq!((a - b).abs(), p);
        }
        assert_eq!(out.preclip_linf, p);
    }

    #[test]
    fn linf_sign_balance_over_a_million_draws() {
        let x = Tensor::<f64>::full(&[1000, 1000], 0.5);
        let out = linf_noise(&x, 0.1, 99);
        let ups = out
            .image
            .data()
            .iter()
            .filter(|&&v| v > 0.5)
            .count();
        let frac = ups as f64 / 1e6;
        assert!((0.498..=0.502).contains(&frac), "fraction of +p draws {frac}");
    }

    #[test]
    fn l2_preclip_norm_is_exactly_p() {
        let x = random_image(2);
        for &p in &[0.1, 0.7, 1.1, 3.2, 4.0] {
            let out = l2_noise(&x, p, 11);
            assert!((out.preclip_l2 - p).abs() < 1e-6, "p={p}: {}", out.preclip_l2);
        }
    }

    #[test]
    fn noise_is_seed_deterministic_and_seed_sensitive() {
        let x = random_image(3);
        let a = l2_noise(&x, 1.0, 5).image;
        let b = l2_noise(&x, 1.0, 5).image;
        let c = l2_noise(&x, 1.0, 6).image;
        assert_eq!(a, b);
        assert_ne!(a, c);
        let a = linf_noise(&x, 0.2, 5).image;
        let b = linf_noise(&x, 0.2, 5).image;
        let c = linf_noise(&x, 0.2, 6).image;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn outputs_stay_in_unit_range_and_clip_shrinks_distortion() {
        let x = random_image(4);
        for &(kind, p) in &[(NormKind::LInf, 0.4), (NormKind::L2, 3.0)] {
            let out = match kind {
                NormKind::LInf => linf_noise(&x, p, 8),
                NormKind::L2 => l2_noise(&x, p, 8),
            };
            assert!(out.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let post = out.image.sub(&x).unwrap();
            assert!(post.norm(NormKind::LInf) <= out.preclip_linf + 1e-12);
            assert!(post.norm(NormKind::L2) <= out.preclip_l2 + 1e-12);
        }
    }

    #[test]
    fn batch_noise_matches_per_image_draws() {
        let a = random_image(5);
        let b = random_image(6);
        let mut stacked = a.data().to_vec();
        stacked.extend_from_slice(b.data());
        let batch = Tensor::new(&[2, 6, 6, 1], stacked).unwrap();
        let noised = noise_batch(NormKind::L2, &batch, 1.5, 40).unwrap();
        let na = l2_noise(&a, 1.5, 40).image;
        let nb = l2_noise(&b, 1.5, 41).image;
        assert_eq!(&noised.data()[..36], na.data());
        assert_eq!(&noised.data()[36..], nb.data());
    }
}
