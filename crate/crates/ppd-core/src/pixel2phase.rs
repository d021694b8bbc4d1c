//! The differentiable pixel-to-phase block: per-channel unitary 2-D DFT
//! followed by phase extraction, with an analytic backward pass, plus the
//! phase-only / magnitude-only reconstructions.
//!
//! The transform is `F_lk = (1/sqrt(HW)) sum_hw x_hw e^{-j2pi(lh/H + kw/W)}`,
//! computed as row FFTs, a transpose, and column FFTs (rustfft handles
//! non-power-of-two sizes like 28 via mixed radix with a Bluestein fallback).
//! `dft2_naive` keeps the quadratic double sum around as the independent
//! oracle. Phases live in `[-pi, pi)`: exact `+pi` from atan2 is remapped to
//! `-pi`, and bins whose magnitude is at or below the precision floor are
//! treated as zero-magnitude — their phase is 0 by convention and no gradient
//! flows through them.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{PpdError, Result};
use crate::tensor::tape::{CustomOp, NodeId, Tape};
use crate::tensor::{Precision, Scalar, Tensor};

/// Magnitude floor below which a bin counts as zero: phase 0, no gradient.
/// atan2's derivative grows like 1/|F|, so the floor bounds the backward pass.
pub fn magnitude_floor<T: Scalar>() -> T {
    match T::PRECISION {
        Precision::Bits32 => T::from_f64(1e-8),
        Precision::Bits64 => T::from_f64(1e-12),
    }
}

/// Planned unitary 2-D DFT for one spatial size.
pub struct Dft2<T: Scalar> {
    height: usize,
    width: usize,
    fwd_row: Arc<dyn Fft<T>>,
    fwd_col: Arc<dyn Fft<T>>,
    inv_row: Arc<dyn Fft<T>>,
    inv_col: Arc<dyn Fft<T>>,
}

impl<T: Scalar> Dft2<T> {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(PpdError::Contract("DFT over an empty grid".into()));
        }
        let mut planner = FftPlanner::new();
        Ok(Dft2 {
            height,
            width,
            fwd_row: planner.plan_fft_forward(width),
            fwd_col: planner.plan_fft_forward(height),
            inv_row: planner.plan_fft_inverse(width),
            inv_col: planner.plan_fft_inverse(height),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Unitary forward transform of one real channel (row-major `H*W`).
    pub fn forward(&self, channel: &[T]) -> Result<Vec<Complex<T>>> {
        if channel.len() != self.height * self.width {
            return Err(PpdError::Dimension(format!(
                "channel of {} values for a {}x{} transform",
                channel.len(),
                self.height,
                self.width
            )));
        }
        let mut buf: Vec<Complex<T>> =
            channel.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.fft2_inplace(&mut buf, false);
        Ok(buf)
    }

    /// Unitary inverse transform of one complex channel.
    pub fn inverse(&self, spectrum: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        if spectrum.len() != self.height * self.width {
            return Err(PpdError::Dimension(format!(
                "spectrum of {} bins for a {}x{} transform",
                spectrum.len(),
                self.height,
                self.width
            )));
        }
        let mut buf = spectrum.to_vec();
        self.fft2_inplace(&mut buf, true);
        Ok(buf)
    }

    fn fft2_inplace(&self, buf: &mut [Complex<T>], inverse: bool) {
        let (h, w) = (self.height, self.width);
        let (row, col) = if inverse {
            (&self.inv_row, &self.inv_col)
        } else {
            (&self.fwd_row, &self.fwd_col)
        };
        let mut scratch =
            vec![Complex::new(T::zero(), T::zero()); row.get_inplace_scratch_len().max(col.get_inplace_scratch_len())];
        row.process_with_scratch(buf, &mut scratch);

        let mut transposed = vec![Complex::new(T::zero(), T::zero()); h * w];
        for r in 0..h {
            for c in 0..w {
                transposed[c * h + r] = buf[r * w + c];
            }
        }
        col.process_with_scratch(&mut transposed, &mut scratch);
        for r in 0..h {
            for c in 0..w {
                buf[r * w + c] = transposed[c * h + r];
            }
        }
        // rustfft is unnormalized in both directions; 1/sqrt(HW) each way
        // makes the pair unitary.
        let norm = T::from_f64(1.0 / ((h * w) as f64).sqrt());
        for v in buf.iter_mut() {
            *v = Complex::new(v.re * norm, v.im * norm);
        }
    }
}

/// Literal double-sum evaluation of the transform, kept as the independent
/// oracle for the fast path. Quadratic cost; verification use only.
pub fn dft2_naive(channel: &[f64], height: usize, width: usize) -> Vec<Complex<f64>> {
    assert_eq!(channel.len(), height * width);
    let norm = 1.0 / ((height * width) as f64).sqrt();
    let mut out = Vec::with_capacity(height * width);
    for l in 0..height {
        for k in 0..width {
            let mut re = 0.0;
            let mut im = 0.0;
            for h in 0..height {
                for w in 0..width {
                    let angle = -2.0
                        * std::f64::consts::PI
                        * (l as f64 * h as f64 / height as f64
                            + k as f64 * w as f64 / width as f64);
                    let x = channel[h * width + w];
                    re += x * angle.cos();
                    im += x * angle.sin();
                }
            }
            out.push(Complex::new(re * norm, im * norm));
        }
    }
    out
}

/// Per-channel DFT phases, each value in `[-pi, pi)`.
#[derive(Clone, Debug)]
pub struct PhaseMap<T: Scalar> {
    values: Tensor<T>,
}

impl<T: Scalar> PhaseMap<T> {
    /// Wraps raw phase values, enforcing the `[-pi, pi)` invariant.
    pub fn new(values: Tensor<T>) -> Result<Self> {
        let pi = T::from_f64(std::f64::consts::PI);
        if values.data().iter().any(|&v| v < -pi || v >= pi || !v.is_finite()) {
            return Err(PpdError::Contract("phase values outside [-pi, pi)".into()));
        }
        Ok(PhaseMap { values })
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn into_values(self) -> Tensor<T> {
        self.values
    }
}

/// Per-channel DFT magnitudes, all values >= 0.
#[derive(Clone, Debug)]
pub struct MagnitudeMap<T: Scalar> {
    values: Tensor<T>,
}

impl<T: Scalar> MagnitudeMap<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if values.data().iter().any(|&v| v < T::zero() || !v.is_finite()) {
            return Err(PpdError::Contract("negative or non-finite magnitude".into()));
        }
        Ok(MagnitudeMap { values })
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn into_values(self) -> Tensor<T> {
        self.values
    }
}

pub(crate) struct PhaseArtifacts<T: Scalar> {
    pub phases: Tensor<T>,
    pub magnitudes: Tensor<T>,
    /// Spectrum in the same flat `[..,H,W,C]` indexing as the phase tensor.
    pub spectrum: Vec<Complex<T>>,
}

fn batch_channels<T: Scalar>(dft: &Dft2<T>, shape: &[usize]) -> Result<(usize, usize)> {
    let (batch, h, w, c) = match *shape {
        [h, w, c] => (1, h, w, c),
        [b, h, w, c] => (b, h, w, c),
        _ => {
            return Err(PpdError::Dimension(format!(
                "expected [H,W,C] or [B,H,W,C], got {shape:?}"
            )))
        }
    };
    if h != dft.height() || w != dft.width() {
        return Err(PpdError::Dimension(format!(
            "image {h}x{w} does not match transform {}x{}",
            dft.height(),
            dft.width()
        )));
    }
    if c == 0 {
        return Err(PpdError::Dimension("zero channels".into()));
    }
    Ok((batch, c))
}

pub(crate) fn phase_with_spectrum<T: Scalar>(
    dft: &Dft2<T>,
    x: &Tensor<T>,
) -> Result<PhaseArtifacts<T>> {
    let (batch, channels) = batch_channels(dft, x.shape())?;
    let spatial = dft.height() * dft.width();
    let floor = magnitude_floor::<T>();
    let pi = T::from_f64(std::f64::consts::PI);

    let mut phases = Tensor::zeros(x.shape());
    let mut magnitudes = Tensor::zeros(x.shape());
    let mut spectrum = vec![Complex::new(T::zero(), T::zero()); x.numel()];
    let mut chan = vec![T::zero(); spatial];

    for b in 0..batch {
        let base = b * spatial * channels;
        for c in 0..channels {
            for i in 0..spatial {
                chan[i] = x.data()[base + i * channels + c];
            }
            let spec = dft.forward(&chan)?;
            for (i, f) in spec.iter().enumerate() {
                let idx = base + i * channels + c;
                let mag = (f.re * f.re + f.im * f.im).sqrt();
                let mut phi = if mag <= floor { T::zero() } else { f.im.atan2(f.re) };
                if phi == pi {
                    phi = -pi;
                }
                phases.data_mut()[idx] = phi;
                magnitudes.data_mut()[idx] = mag;
                spectrum[idx] = *f;
            }
        }
    }
    Ok(PhaseArtifacts { phases, magnitudes, spectrum })
}

/// Maps each channel of `x` (`[H,W,C]` or `[B,H,W,C]`) to its DFT phase and
/// magnitude.
pub fn phase<T: Scalar>(dft: &Dft2<T>, x: &Tensor<T>) -> Result<(PhaseMap<T>, MagnitudeMap<T>)> {
    let artifacts = phase_with_spectrum(dft, x)?;
    Ok((
        PhaseMap { values: artifacts.phases },
        MagnitudeMap { values: artifacts.magnitudes },
    ))
}

pub struct PhaseBackward<T: Scalar> {
    pub grad: Tensor<T>,
    /// Bins with nonzero upstream gradient that were suppressed by the
    /// magnitude floor.
    pub masked_bins: usize,
}

/// Analytic chain rule through `arg(F)` and the linear DFT.
///
/// With adjoint `u = dL/dphi`, the complex intermediate is
/// `G = u * j F / |F|^2` and `dL/dx = Re(IDFT(G))` under the unitary pair.
/// `spectrum` must come from [`phase_with_spectrum`] on the same input.
pub fn phase_backward<T: Scalar>(
    dft: &Dft2<T>,
    spectrum: &[Complex<T>],
    upstream: &Tensor<T>,
    floor: T,
) -> Result<PhaseBackward<T>> {
    let (batch, channels) = batch_channels(dft, upstream.shape())?;
    if spectrum.len() != upstream.numel() {
        return Err(PpdError::Dimension(format!(
            "spectrum of {} bins for upstream of {} values",
            spectrum.len(),
            upstream.numel()
        )));
    }
    let spatial = dft.height() * dft.width();
    let mut grad = Tensor::zeros(upstream.shape());
    let mut g_chan = vec![Complex::new(T::zero(), T::zero()); spatial];
    let mut masked = 0usize;

    for b in 0..batch {
        let base = b * spatial * channels;
        for c in 0..channels {
            for i in 0..spatial {
                let idx = base + i * channels + c;
                let f = spectrum[idx];
                let u = upstream.data()[idx];
                let mag2 = f.re * f.re + f.im * f.im;
                if mag2.sqrt() <= floor {
                    if u != T::zero() {
                        masked += 1;
                    }
                    g_chan[i] = Complex::new(T::zero(), T::zero());
                } else {
                    // u * j * F / |F|^2
                    g_chan[i] = Complex::new(-u * f.im / mag2, u * f.re / mag2);
                }
            }
            let back = dft.inverse(&g_chan)?;
            for i in 0..spatial {
                grad.data_mut()[base + i * channels + c] = back[i].re;
            }
        }
    }
    Ok(PhaseBackward { grad, masked_bins: masked })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructionMode {
    /// Unit magnitude, true phase.
    PhaseOnly,
    /// True magnitude, zero phase.
    MagnitudeOnly,
    /// True magnitude and phase; inverts the forward transform.
    Full,
}

pub struct Reconstruction<T: Scalar> {
    /// Real part of the inverse transform, before any rescaling.
    pub raw: Tensor<T>,
    /// `raw` min-max rescaled to `[0,1]` per channel for display.
    pub display: Tensor<T>,
    /// Largest imaginary component encountered in the inverse transform.
    pub max_imag_abs: f64,
}

/// Inverse DFT of `A' * exp(j phi')` with the magnitude or phase replaced
/// according to `mode`.
pub fn reconstruct<T: Scalar>(
    dft: &Dft2<T>,
    mode: ReconstructionMode,
    phases: &PhaseMap<T>,
    magnitudes: &MagnitudeMap<T>,
) -> Result<Reconstruction<T>> {
    if phases.values().shape() != magnitudes.values().shape() {
        return Err(PpdError::Dimension(format!(
            "phase {:?} vs magnitude {:?}",
            phases.values().shape(),
            magnitudes.values().shape()
        )));
    }
    let (batch, channels) = batch_channels(dft, phases.values().shape())?;
    let spatial = dft.height() * dft.width();

    let mut raw = Tensor::zeros(phases.values().shape());
    let mut spec = vec![Complex::new(T::zero(), T::zero()); spatial];
    let mut max_imag = 0.0f64;

    for b in 0..batch {
        let base = b * spatial * channels;
        for c in 0..channels {
            for i in 0..spatial {
                let idx = base + i * channels + c;
                let amp = match mode {
                    ReconstructionMode::PhaseOnly => T::one(),
                    _ => magnitudes.values().data()[idx],
                };
                let phi = match mode {
                    ReconstructionMode::MagnitudeOnly => T::zero(),
                    _ => phases.values().data()[idx],
                };
                spec[i] = Complex::new(amp * phi.cos(), amp * phi.sin());
            }
            let img = dft.inverse(&spec)?;
            for i in 0..spatial {
                raw.data_mut()[base + i * channels + c] = img[i].re;
                max_imag = max_imag.max(img[i].im.to_f64().abs());
            }
        }
    }

    let mut display = raw.clone();
    for b in 0..batch {
        let base = b * spatial * channels;
        for c in 0..channels {
            let mut lo = T::infinity();
            let mut hi = T::neg_infinity();
            for i in 0..spatial {
                let v = display.data()[base + i * channels + c];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let span = hi - lo;
            for i in 0..spatial {
                let cell = &mut display.data_mut()[base + i * channels + c];
                *cell = if span > T::zero() { (*cell - lo) / span } else { T::zero() };
            }
        }
    }

    Ok(Reconstruction { raw, display, max_imag_abs: max_imag })
}

/// Tape op for phase extraction; counts floor-masked bins during backward.
pub(crate) struct PhaseTapeOp<T: Scalar> {
    dft: Arc<Dft2<T>>,
    spectrum: Vec<Complex<T>>,
    floor: T,
    masked: Arc<AtomicUsize>,
}

impl<T: Scalar> CustomOp<T> for PhaseTapeOp<T> {
    fn backward(
        &self,
        upstream: &Tensor<T>,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
    ) -> Vec<Tensor<T>> {
        let back = phase_backward(&self.dft, &self.spectrum, upstream, self.floor)
            .expect("phase backward on shapes recorded in forward");
        self.masked.fetch_add(back.masked_bins, Ordering::Relaxed);
        vec![back.grad]
    }
}

/// Records phase extraction of node `x` on the tape. Returns the phase node
/// and the shared counter of gradient bins suppressed by the magnitude floor.
pub(crate) fn phase_node<T: Scalar>(
    dft: &Arc<Dft2<T>>,
    tape: &mut Tape<T>,
    x: NodeId,
) -> Result<(NodeId, Arc<AtomicUsize>)> {
    let artifacts = phase_with_spectrum(dft.as_ref(), tape.value(x))?;
    let masked = Arc::new(AtomicUsize::new(0));
    let op = PhaseTapeOp {
        dft: Arc::clone(dft),
        spectrum: artifacts.spectrum,
        floor: magnitude_floor::<T>(),
        masked: Arc::clone(&masked),
    };
    let node = tape.custom(&[x], artifacts.phases, Box::new(op));
    Ok((node, masked))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{seeded_rng, uniform_f64};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn random_channel(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
        let mut rng = seeded_rng(seed);
        (0..n).map(|_| lo + (hi - lo) * uniform_f64(&mut rng)).collect()
    }

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Tensor<f64> {
        let mut rng = seeded_rng(seed);
        Tensor::from_fn(&[h, w, c], |_| 0.1 + 0.8 * uniform_f64(&mut rng))
    }

    #[test]
    fn constant_two_by_two_is_dc_only() {
        let c = 0.37;
        let dft = Dft2::<f64>::new(2, 2).unwrap();
        let spec = dft.forward(&[c, c, c, c]).unwrap();
        assert!((spec[0].re - 2.0 * c).abs() < 1e-12);
        assert!(spec[0].im.abs() < 1e-12);
        for f in &spec[1..] {
            assert!(f.norm() < 1e-12);
        }
    }

    #[test]
    fn hand_evaluated_two_by_two() {
        // x = [[0,1],[0,1]] -> F00 = 1, F01 = -1, F10 = F11 = 0
        let dft = Dft2::<f64>::new(2, 2).unwrap();
        let spec = dft.forward(&[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((spec[0].re - 1.0).abs() < 1e-12 && spec[0].im.abs() < 1e-12);
        assert!((spec[1].re + 1.0).abs() < 1e-12 && spec[1].im.abs() < 1e-12);
        assert!(spec[2].norm() < 1e-12);
        assert!(spec[3].norm() < 1e-12);
    }

    #[test]
    fn fast_path_matches_naive_double_sum() {
        for &(h, w) in &[(2usize, 2usize), (8, 8), (5, 7), (28, 28)] {
            let chan = random_channel(h * w, 1000 + (h * w) as u64, 0.0, 1.0);
            let dft = Dft2::<f64>::new(h, w).unwrap();
            let fast = dft.forward(&chan).unwrap();
            let slow = dft2_naive(&chan, h, w);
            let max_err = fast
                .iter()
                .zip(&slow)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(max_err < 1e-6, "{h}x{w}: {max_err}");
        }
    }

    #[test]
    fn forward_inverse_roundtrip() {
        let chan = random_channel(28 * 28, 5, 0.0, 1.0);
        let dft = Dft2::<f64>::new(28, 28).unwrap();
        let spec = dft.forward(&chan).unwrap();
        let back = dft.inverse(&spec).unwrap();
        for (a, b) in chan.iter().zip(&back) {
            assert!((a - b.re).abs() < 1e-12);
            assert!(b.im.abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_holds_under_unitary_normalization() {
        let chan = random_channel(12 * 20, 6, 0.0, 1.0);
        let dft = Dft2::<f64>::new(12, 20).unwrap();
        let spec = dft.forward(&chan).unwrap();
        let pixel_energy: f64 = chan.iter().map(|v| v * v).sum();
        let spec_energy: f64 = spec.iter().map(|f| f.norm_sqr()).sum();
        assert!((pixel_energy - spec_energy).abs() / pixel_energy < 1e-6);
    }

    #[test]
    fn constant_image_has_all_zero_phases() {
        let dft = Dft2::<f64>::new(28, 28).unwrap();
        let x = Tensor::full(&[28, 28, 1], 0.5);
        let (phases, _) = phase(&dft, &x).unwrap();
        assert!(phases.values().data().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn phase_of_alternating_columns() {
        // From the hand-evaluated spectrum: F01 = -1 remaps to phase -pi.
        let dft = Dft2::<f64>::new(2, 2).unwrap();
        let x = Tensor::new(&[2, 2, 1], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let (phases, mags) = phase(&dft, &x).unwrap();
        assert_eq!(phases.values().data()[0], 0.0);
        assert_eq!(phases.values().data()[1], -PI);
        assert!((mags.values().data()[1] - 1.0).abs() < 1e-12);
        assert_eq!(phases.values().data()[2], 0.0);
        assert_eq!(phases.values().data()[3], 0.0);
    }

    #[test]
    fn phase_is_invariant_to_positive_scaling() {
        let dft = Dft2::<f64>::new(8, 8).unwrap();
        let x = random_image(8, 8, 1, 7);
        let half = x.scale(0.5);
        let (p1, m1) = phase(&dft, &x).unwrap();
        let (p2, _) = phase(&dft, &half).unwrap();
        for i in 0..x.numel() {
            if m1.values().data()[i] > 1e-9 {
                assert!((p1.values().data()[i] - p2.values().data()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let dft = Dft2::<f64>::new(8, 8).unwrap();
        let x = random_image(8, 8, 1, 8);
        let artifacts = phase_with_spectrum(&dft, &x).unwrap();
        let upstream = Tensor::zeros(x.shape());
        let back =
            phase_backward(&dft, &artifacts.spectrum, &upstream, magnitude_floor::<f64>())
                .unwrap();
        assert!(back.grad.data().iter().all(|&g| g == 0.0));
        assert_eq!(back.masked_bins, 0);
    }

    #[test]
    fn phase_gradient_matches_finite_differences() {
        let dft = Dft2::<f64>::new(8, 8).unwrap();
        let x = random_image(8, 8, 1, 9);
        let mut rng = seeded_rng(10);
        let upstream = Tensor::from_fn(x.shape(), |_| uniform_f64(&mut rng) * 2.0 - 1.0);
        let floor = magnitude_floor::<f64>();

        let artifacts = phase_with_spectrum(&dft, &x).unwrap();
        let back = phase_backward(&dft, &artifacts.spectrum, &upstream, floor).unwrap();

        let loss = |t: &Tensor<f64>| -> f64 {
            let (p, m) = phase(&dft, t).unwrap();
            p.values()
                .data()
                .iter()
                .zip(upstream.data())
                .zip(m.values().data())
                .map(|((phi, u), mag)| if *mag > floor { phi * u } else { 0.0 })
                .sum()
        };
        let h = 1e-6;
        let mut fd = Tensor::zeros(x.shape());
        for i in 0..x.numel() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            fd.data_mut()[i] = (loss(&xp) - loss(&xm)) / (2.0 * h);
        }
        let num: f64 = back
            .grad
            .data()
            .iter()
            .zip(fd.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den = fd.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den < 1e-4, "rel err {}", num / den);
    }

    #[test]
    fn constant_image_gradient_is_finite_and_masked() {
        let dft = Dft2::<f64>::new(8, 8).unwrap();
        let x = Tensor::full(&[8, 8, 1], 0.4);
        let artifacts = phase_with_spectrum(&dft, &x).unwrap();
        let upstream = Tensor::full(x.shape(), 1.0);
        let back =
            phase_backward(&dft, &artifacts.spectrum, &upstream, magnitude_floor::<f64>())
                .unwrap();
        assert!(back.grad.all_finite());
        // Every non-DC bin is zero-magnitude and carried upstream gradient.
        assert_eq!(back.masked_bins, 63);
    }

    #[test]
    fn full_reconstruction_inverts_the_forward_transform() {
        let dft = Dft2::<f64>::new(8, 8).unwrap();
        let x = random_image(8, 8, 1, 11);
        let (p, m) = phase(&dft, &x).unwrap();
        let rec = reconstruct(&dft, ReconstructionMode::Full, &p, &m).unwrap();
        assert!(rec.raw.max_abs_diff(&x) < 1e-6);
    }

    #[test]
    fn phase_only_reconstruction_is_real() {
        let dft = Dft2::<f64>::new(12, 10).unwrap();
        let x = random_image(12, 10, 1, 12);
        let (p, m) = phase(&dft, &x).unwrap();
        let rec = reconstruct(&dft, ReconstructionMode::PhaseOnly, &p, &m).unwrap();
        assert!(rec.max_imag_abs < 1e-9, "max imag {}", rec.max_imag_abs);
    }

    #[test]
    fn magnitude_only_reconstruction_is_shift_invariant() {
        let dft = Dft2::<f64>::new(8, 8).unwrap();
        let x = random_image(8, 8, 1, 13);
        // Circular 2-pixel row shift.
        let shifted = Tensor::from_fn(x.shape(), |idx| {
            let (h, w) = (idx / 8, idx % 8);
            x.data()[((h + 2) % 8) * 8 + w]
        });
        let (px, mx) = phase(&dft, &x).unwrap();
        let (ps, ms) = phase(&dft, &shifted).unwrap();
        let rx = reconstruct(&dft, ReconstructionMode::MagnitudeOnly, &px, &mx).unwrap();
        let rs = reconstruct(&dft, ReconstructionMode::MagnitudeOnly, &ps, &ms).unwrap();
        assert!(rx.raw.max_abs_diff(&rs.raw) < 1e-9);
    }

    #[test]
    fn display_rescale_is_in_unit_range() {
        let dft = Dft2::<f64>::new(8, 8).unwrap();
        let x = random_image(8, 8, 1, 14);
        let (p, m) = phase(&dft, &x).unwrap();
        let rec = reconstruct(&dft, ReconstructionMode::PhaseOnly, &p, &m).unwrap();
        assert!(rec.display.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn map_constructors_enforce_invariants() {
        let bad_phase = Tensor::new(&[1, 1, 1], vec![4.0f64]).unwrap();
        assert!(PhaseMap::new(bad_phase).is_err());
        let bad_mag = Tensor::new(&[1, 1, 1], vec![-0.5f64]).unwrap();
        assert!(MagnitudeMap::new(bad_mag).is_err());
        let pi_exact = Tensor::new(&[1, 1, 1], vec![PI]).unwrap();
        assert!(PhaseMap::new(pi_exact).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn phases_stay_in_range(seed in 0u64..500) {
            let dft = Dft2::<f64>::new(6, 9).unwrap();
            let mut rng = seeded_rng(seed);
            let x = Tensor::from_fn(&[6, 9, 2], |_| uniform_f64(&mut rng));
            let (p, m) = phase(&dft, &x).unwrap();
            prop_assert!(p.values().data().iter().all(|&v| (-PI..PI).contains(&v)));
            prop_assert!(m.values().data().iter().all(|&v| v >= 0.0));
        }
    }
}
