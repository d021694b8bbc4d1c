//! Loaders for the MNIST IDX and CIFAR-10 binary formats, normalized to
//! pixel intensities in `[0, 1]`, plus deterministic shuffled batching.
//!
//! MNIST: big-endian IDX headers, magic 0x00000803 for images and 0x00000801
//! for labels. CIFAR-10: 3073-byte records (1 label byte + 3072 channel-planar
//! R,G,B pixels), stored HWC after de-planarizing. No augmentation.

use std::path::Path;

use crate::error::{PpdError, Result};
use crate::tensor::{Scalar, Tensor};
use crate::util::{seeded_rng, shuffle};

pub const MNIST_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const MNIST_LABEL_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD_BYTES: usize = 3073;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Images with class labels, pixels flattened `[n, H, W, C]` row-major.
#[derive(Clone)]
pub struct LabeledDataset {
    split: Split,
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
    labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn from_parts(
        split: Split,
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f32>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let per_image = height * width * channels;
        if per_image == 0 || pixels.len() != labels.len() * per_image {
            return Err(PpdError::Dimension(format!(
                "{} pixels for {} labels of {height}x{width}x{channels} images",
                pixels.len(),
                labels.len()
            )));
        }
        if pixels.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(PpdError::Contract("pixel outside [0, 1]".into()));
        }
        if labels.iter().any(|&l| l > 9) {
            return Err(PpdError::Contract("label outside 0..=9".into()));
        }
        Ok(LabeledDataset { split, height, width, channels, pixels, labels })
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(height, width, channels)`.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn image<T: Scalar>(&self, index: usize) -> Tensor<T> {
        let per = self.height * self.width * self.channels;
        let slice = &self.pixels[index * per..(index + 1) * per];
        Tensor::new(
            &[self.height, self.width, self.channels],
            slice.iter().map(|&p| T::from_f64(p as f64)).collect(),
        )
        .expect("image slice matches shape")
    }

    /// Stacks the given items into a `[B, H, W, C]` batch tensor.
    pub fn gather<T: Scalar>(&self, indices: &[u32]) -> Tensor<T> {
        let per = self.height * self.width * self.channels;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            let slice = &self.pixels[i as usize * per..(i as usize + 1) * per];
            data.extend(slice.iter().map(|&p| T::from_f64(p as f64)));
        }
        Tensor::new(&[indices.len(), self.height, self.width, self.channels], data)
            .expect("gathered batch matches shape")
    }

    pub fn gather_labels(&self, indices: &[u32]) -> Vec<u8> {
        indices.iter().map(|&i| self.labels[i as usize]).collect()
    }

    /// First `n` items as a new dataset (evaluation subsets).
    pub fn head(&self, n: usize) -> Result<Self> {
        if n > self.len() {
            return Err(PpdError::Contract(format!(
                "head({n}) of a {}-item dataset",
                self.len()
            )));
        }
        let per = self.height * self.width * self.channels;
        Ok(LabeledDataset {
            split: self.split,
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels: self.pixels[..n * per].to_vec(),
            labels: self.labels[..n].to_vec(),
        })
    }

    /// Shuffled epoch iterator: every item exactly once, order deterministic
    /// in `shuffle_seed`.
    pub fn batches(&self, batch_size: usize, shuffle_seed: u64) -> Result<Batches<'_>> {
        if batch_size == 0 {
            return Err(PpdError::Contract("batch_size must be >= 1".into()));
        }
        let mut order: Vec<u32> = (0..self.len() as u32).collect();
        let mut rng = seeded_rng(shuffle_seed);
        shuffle(&mut rng, &mut order);
        Ok(Batches { dataset: self, order, batch_size, cursor: 0 })
    }
}

pub struct Batches<'a> {
    dataset: &'a LabeledDataset,
    order: Vec<u32>,
    batch_size: usize,
    cursor: usize,
}

impl<'a> Iterator for Batches<'a> {
    /// Indices and labels of one batch; callers gather pixel tensors at the
    /// precision they need.
    type Item = (Vec<u32>, Vec<u8>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let idx = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        let labels = self.dataset.gather_labels(&idx);
        Some((idx, labels))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| PpdError::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| PpdError::format(path, "truncated header"))
}

/// Loads one MNIST split from `train-images-idx3-ubyte` /
/// `train-labels-idx1-ubyte` (or the `t10k-` pair) under `dir`.
pub fn load_mnist(dir: &Path, split: Split) -> Result<LabeledDataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let image_path = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let label_path = dir.join(format!("{prefix}-labels-idx1-ubyte"));

    let image_bytes = read_file(&image_path)?;
    let magic = be_u32(&image_bytes, 0, &image_path)?;
    if magic != MNIST_IMAGE_MAGIC {
        return Err(PpdError::format(&image_path, format!("bad magic {magic:#010x}")));
    }
    let count = be_u32(&image_bytes, 4, &image_path)? as usize;
    let height = be_u32(&image_bytes, 8, &image_path)? as usize;
    let width = be_u32(&image_bytes, 12, &image_path)? as usize;
    let expected = 16 + count * height * width;
    if image_bytes.len() != expected {
        return Err(PpdError::format(
            &image_path,
            format!("expected {expected} bytes for {count} images, got {}", image_bytes.len()),
        ));
    }

    let label_bytes = read_file(&label_path)?;
    let magic = be_u32(&label_bytes, 0, &label_path)?;
    if magic != MNIST_LABEL_MAGIC {
        return Err(PpdError::format(&label_path, format!("bad magic {magic:#010x}")));
    }
    let label_count = be_u32(&label_bytes, 4, &label_path)? as usize;
    if label_bytes.len() != 8 + label_count {
        return Err(PpdError::format(&label_path, "truncated label payload"));
    }
    if label_count != count {
        return Err(PpdError::format(
            &label_path,
            format!("{label_count} labels for {count} images"),
        ));
    }

    let pixels: Vec<f32> = image_bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    let labels = label_bytes[8..].to_vec();
    LabeledDataset::from_parts(split, height, width, 1, pixels, labels)
}

/// Loads one CIFAR-10 split from `data_batch_{1..5}.bin` / `test_batch.bin`
/// under `dir`.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<LabeledDataset> {
    let files: Vec<std::path::PathBuf> = match split {
        Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in &files {
        let bytes = read_file(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(PpdError::format(
                path,
                format!("length {} is not a multiple of {CIFAR_RECORD_BYTES}", bytes.len()),
            ));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
            let label = record[0];
            if label > 9 {
                return Err(PpdError::format(path, format!("label byte {label} > 9")));
            }
            labels.push(label);
            // channel-planar R,G,B -> interleaved HWC
            let planes = &record[1..];
            for i in 0..1024 {
                pixels.push(planes[i] as f32 / 255.0);
                pixels.push(planes[1024 + i] as f32 / 255.0);
                pixels.push(planes[2048 + i] as f32 / 255.0);
            }
        }
    }
    LabeledDataset::from_parts(split, 32, 32, 3, pixels, labels)
}
