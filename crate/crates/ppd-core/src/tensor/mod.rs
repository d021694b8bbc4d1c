//! Dense row-major tensors generic over `f32`/`f64`, plus the reverse-mode
//! gradient tape in [`tape`].
//!
//! Two precision modes are supported: 32-bit for training and attack
//! throughput, 64-bit for oracle and finite-difference verification runs.
//! Layout is row-major contiguous; the only broadcasting anywhere is the
//! bias-add on the tape.

pub mod tape;

use crate::error::{PpdError, Result};

/// Element width of a tensor or model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Bits32,
    Bits64,
}

impl Precision {
    pub fn byte_width(self) -> usize {
        match self {
            Precision::Bits32 => 4,
            Precision::Bits64 => 8,
        }
    }
}

/// Scalar element type. `f32` is the training default; `f64` backs the
/// verification oracles where finite differences need the headroom.
pub trait Scalar: num_traits::Float + rustfft::FftNum {
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `c = alpha * a @ b + beta * c` with explicit strides, row-major.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Bits32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Bits64;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Norm selector for distortion measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    LInf,
    L2,
}

impl NormKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::LInf => "linf",
            NormKind::L2 => "l2",
        }
    }
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for NormKind {
    type Err = PpdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linf" => Ok(NormKind::LInf),
            "l2" => Ok(NormKind::L2),
            other => Err(PpdError::Config(format!("unknown norm kind `{other}`"))),
        }
    }
}

/// Dense N-dimensional array, row-major contiguous.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(PpdError::Dimension(format!(
                "shape {shape:?} wants {expect} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(|i| f(i)).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(PpdError::Contract(format!(
                "item() on tensor of {} elements",
                self.data.len()
            )));
        }
        Ok(self.data[0])
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(PpdError::Dimension(format!("expected rank-2 tensor, got {other:?}"))),
        }
    }

    /// Reinterpret with a new shape of equal element count.
    pub fn into_shape(mut self, shape: &[usize]) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(PpdError::Dimension(format!(
                "cannot reshape {} elements to {shape:?}",
                self.data.len()
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, rhs: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != rhs.shape {
            return Err(PpdError::Dimension(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape, rhs.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip_map(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.zip_map(rhs, |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Self) -> Result<Self> {
        self.zip_map(rhs, |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = rhs.dims2()?;
        if k != k2 {
            return Err(PpdError::Dimension(format!(
                "matmul inner dimensions {k} vs {k2} ({:?} x {:?})",
                self.shape, rhs.shape
            )));
        }
        let mut out = Tensor::zeros(&[m, n]);
        unsafe {
            T::gemm_strided(
                m,
                k,
                n,
                T::one(),
                self.data.as_ptr(),
                k as isize,
                1,
                rhs.data.as_ptr(),
                n as isize,
                1,
                T::zero(),
                out.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Ok(out)
    }

    /// `self @ rhs^T` for rank-2 tensors `[m,k] x [n,k] -> [m,n]`.
    pub(crate) fn matmul_nt(&self, rhs: &Self) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (n, k2) = rhs.dims2()?;
        if k != k2 {
            return Err(PpdError::Dimension(format!(
                "matmul_nt inner dimensions {k} vs {k2}"
            )));
        }
        let mut out = Tensor::zeros(&[m, n]);
        unsafe {
            T::gemm_strided(
                m,
                k,
                n,
                T::one(),
                self.data.as_ptr(),
                k as isize,
                1,
                rhs.data.as_ptr(),
                1,
                k as isize,
                T::zero(),
                out.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Ok(out)
    }

    /// `self^T @ rhs` for rank-2 tensors `[k,m] x [k,n] -> [m,n]`.
    pub(crate) fn matmul_tn(&self, rhs: &Self) -> Result<Self> {
        let (k, m) = self.dims2()?;
        let (k2, n) = rhs.dims2()?;
        if k != k2 {
            return Err(PpdError::Dimension(format!(
                "matmul_tn inner dimensions {k} vs {k2}"
            )));
        }
        let mut out = Tensor::zeros(&[m, n]);
        unsafe {
            T::gemm_strided(
                m,
                k,
                n,
                T::one(),
                self.data.as_ptr(),
                1,
                m as isize,
                rhs.data.as_ptr(),
                n as isize,
                1,
                T::zero(),
                out.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Ok(out)
    }

    pub fn transposed(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(out)
    }

    /// Sum of all elements, accumulated in f64.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }

    /// Vector norm over the flattened tensor, accumulated in f64.
    pub fn norm(&self, kind: NormKind) -> f64 {
        match kind {
            NormKind::LInf => {
                self.data.iter().map(|v| v.to_f64().abs()).fold(0.0, f64::max)
            }
            NormKind::L2 => {
                self.data.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt()
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, rhs: &Self) -> f64 {
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Row-wise argmax of a rank-2 tensor; ties break toward the lowest index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        let (rows, cols) = self.dims2()?;
        if cols == 0 {
            return Err(PpdError::Dimension("argmax over zero columns".into()));
        }
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &self.data[r * cols..(r + 1) * cols];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            out.push(best);
        }
        Ok(out)
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.numel() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} ({} elements)", self.shape, self.numel())
        }
    }
}
