//! Dataset loading, normalization, augmentation and subsampling.
//!
//! Expected layouts (relative to a dataset root directory):
//!
//! ```text
//! mnist/{train-images-idx3-ubyte,train-labels-idx1-ubyte,
//!        t10k-images-idx3-ubyte,t10k-labels-idx1-ubyte}[.gz]
//! cifar-10-batches-bin/{data_batch_1..5.bin,test_batch.bin}
//! cifar-100-binary/{train.bin,test.bin}
//! ```

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Environment variable naming the dataset root directory.
pub const DATA_DIR_ENV: &str = "COOPINIT_DATA";

pub const MNIST_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const MNIST_LABEL_MAGIC: u32 = 0x0000_0801;
pub const MNIST_MEAN: f32 = 0.1307;
pub const MNIST_STD: f32 = 0.3081;

pub const CIFAR10_RECORD: usize = 3073;
pub const CIFAR100_RECORD: usize = 3074;
pub const CIFAR10_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR10_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];
pub const CIFAR100_MEAN: [f32; 3] = [0.5071, 0.4865, 0.4409];
pub const CIFAR100_STD: [f32; 3] = [0.2673, 0.2564, 0.2762];

/// Padding used by the random-crop augmentation.
pub const CROP_PADDING: usize = 4;

/// Per-channel affine normalization `(x − mean)/std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn normalize(&self, image: &mut [f32]) {
        self.apply(image, |v, m, s| (v - m) / s);
    }

    pub fn denormalize(&self, image: &mut [f32]) {
        self.apply(image, |v, m, s| v * s + m);
    }

    fn apply(&self, image: &mut [f32], f: impl Fn(f32, f32, f32) -> f32) {
        let plane = image.len() / self.mean.len();
        for (c, chunk) in image.chunks_mut(plane).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            for v in chunk {
                *v = f(*v, m, s);
            }
        }
    }
}

/// One split of a dataset: images stored contiguously as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    shape: [usize; 3],
    images: Vec<f32>,
    labels: Vec<usize>,
}

impl Split {
    pub fn new(shape: [usize; 3], images: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        let per = shape.iter().product::<usize>();
        if per == 0 || images.len() != per * labels.len() {
            return Err(Error::shape(
                "split",
                format!("{} values for {} images of shape {shape:?}", images.len(), labels.len()),
            ));
        }
        Ok(Split { shape, images, labels })
    }

    pub fn empty(shape: [usize; 3]) -> Self {
        Split {
            shape,
            images: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.shape
    }

    fn image_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Sample `i` as a `[C, H, W]` tensor with its label.
    pub fn get(&self, i: usize) -> (Tensor<f32>, usize) {
        let t = Tensor::from_vec(self.shape.to_vec(), self.image(i).to_vec()).expect("split shape");
        (t, self.labels[i])
    }

    /// Stacks the selected samples into `[B, C, H, W]`, optionally passing
    /// each image through the random crop/flip augmentation.
    pub fn batch<T: Scalar>(&self, indices: &[usize], mut augment_rng: Option<&mut ChaCha8Rng>) -> (Tensor<T>, Vec<usize>) {
        let n = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            match augment_rng.as_deref_mut() {
                Some(rng) => {
                    let img = augment_slice(self.shape, self.image(i), rng);
                    data.extend(img.iter().map(|&v| T::from_f64_lossy(v as f64)));
                }
                None => data.extend(self.image(i).iter().map(|&v| T::from_f64_lossy(v as f64))),
            }
            labels.push(self.labels[i]);
        }
        let [c, h, w] = self.shape;
        (
            Tensor::from_vec(vec![indices.len(), c, h, w], data).expect("batch shape"),
            labels,
        )
    }

    /// The samples at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Split {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Split {
            shape: self.shape,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// The first `n` samples (all of them when `n ≥ len`).
    pub fn truncated(&self, n: usize) -> Split {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}

/// Train and test splits of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    pub name: String,
    pub train: Split,
    pub test: Split,
    pub num_classes: usize,
    pub normalization: Option<Normalization>,
}

impl DatasetPair {
    pub fn image_shape(&self) -> [usize; 3] {
        self.train.image_shape()
    }

    fn validate(&self) -> Result<()> {
        if self.train.image_shape() != self.test.image_shape() {
            return Err(Error::shape(
                "dataset",
                format!("train {:?} vs test {:?}", self.train.shape, self.test.shape),
            ));
        }
        for &l in self.train.labels.iter().chain(&self.test.labels) {
            if l >= self.num_classes {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    classes: self.num_classes,
                });
            }
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// `dir/name`, or `dir/name.gz` when only the compressed file exists.
fn locate(dir: &Path, name: &str) -> PathBuf {
    let plain = dir.join(name);
    if plain.exists() {
        return plain;
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        gz
    } else {
        plain
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            detail: "truncated header".into(),
        })
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != MNIST_IMAGE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
            expected: MNIST_IMAGE_MAGIC,
        });
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("truncated: header promises {need} pixel bytes, file has {}", body.len()),
        });
    }
    Ok((count, rows, cols, body[..need].to_vec()))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != MNIST_LABEL_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
            expected: MNIST_LABEL_MAGIC,
        });
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("truncated: header promises {count} labels, file has {}", body.len()),
        });
    }
    Ok(body[..count].to_vec())
}

fn mnist_split(dir: &Path, images: &str, labels: &str, norm: &Normalization) -> Result<Split> {
    let ipath = locate(dir, images);
    let lpath = locate(dir, labels);
    let (count, rows, cols, pixels) = parse_idx_images(&read_file(&ipath)?, &ipath)?;
    let labels = parse_idx_labels(&read_file(&lpath)?, &lpath)?;
    if labels.len() != count {
        return Err(Error::Format {
            path: lpath,
            detail: format!("{} labels for {count} images", labels.len()),
        });
    }
    let mut data: Vec<f32> = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    for img in data.chunks_mut(rows * cols) {
        norm.normalize(img);
    }
    Split::new([1, rows, cols], data, labels.into_iter().map(usize::from).collect())
}

/// Loads the four MNIST IDX files (optionally gzipped) from `dir`.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<DatasetPair> {
    let dir = dir.as_ref();
    let norm = Normalization {
        mean: vec![MNIST_MEAN],
        std: vec![MNIST_STD],
    };
    let train = mnist_split(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", &norm)?;
    let test = mnist_split(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", &norm)?;
    let pair = DatasetPair {
        name: "mnist".into(),
        train,
        test,
        num_classes: 10,
        normalization: Some(norm),
    };
    pair.validate()?;
    Ok(pair)
}

/// Decodes CIFAR binary records: label byte(s) then 3×1024 planar pixels.
/// `label_offset` selects which label byte to use (1 = CIFAR-100 fine).
pub fn parse_cifar_records(
    bytes: &[u8],
    record: usize,
    label_offset: usize,
    norm: &Normalization,
    path: &Path,
) -> Result<(Vec<f32>, Vec<usize>)> {
    if !bytes.len().is_multiple_of(record) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("length {} is not a multiple of the {record}-byte record size", bytes.len()),
        });
    }
    let header = record - 3 * 1024;
    let mut images = Vec::with_capacity(bytes.len() / record * 3072);
    let mut labels = Vec::with_capacity(bytes.len() / record);
    for rec in bytes.chunks_exact(record) {
        labels.push(rec[label_offset] as usize);
        let start = images.len();
        images.extend(rec[header..].iter().map(|&p| p as f32 / 255.0));
        norm.normalize(&mut images[start..]);
    }
    Ok((images, labels))
}

fn cifar_dir(dir: &Path, sub: &str, probe: &str) -> PathBuf {
    if dir.join(probe).exists() {
        dir.to_path_buf()
    } else {
        dir.join(sub)
    }
}

fn cifar_split(files: &[PathBuf], record: usize, label_offset: usize, norm: &Normalization) -> Result<Split> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let (i, l) = parse_cifar_records(&read_file(f)?, record, label_offset, norm, f)?;
        images.extend(i);
        labels.extend(l);
    }
    Split::new([3, 32, 32], images, labels)
}

/// Loads CIFAR-10 from `dir` or `dir/cifar-10-batches-bin`.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<DatasetPair> {
    let dir = cifar_dir(dir.as_ref(), "cifar-10-batches-bin", "data_batch_1.bin");
    let norm = Normalization {
        mean: CIFAR10_MEAN.to_vec(),
        std: CIFAR10_STD.to_vec(),
    };
    let train_files: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    let train = cifar_split(&train_files, CIFAR10_RECORD, 0, &norm)?;
    let test = cifar_split(&[dir.join("test_batch.bin")], CIFAR10_RECORD, 0, &norm)?;
    let pair = DatasetPair {
        name: "cifar10".into(),
        train,
        test,
        num_classes: 10,
        normalization: Some(norm),
    };
    pair.validate()?;
    Ok(pair)
}

/// Loads CIFAR-100 (fine labels) from `dir` or `dir/cifar-100-binary`.
pub fn load_cifar100(dir: impl AsRef<Path>) -> Result<DatasetPair> {
    let dir = cifar_dir(dir.as_ref(), "cifar-100-binary", "train.bin");
    let norm = Normalization {
        mean: CIFAR100_MEAN.to_vec(),
        std: CIFAR100_STD.to_vec(),
    };
    let train = cifar_split(&[dir.join("train.bin")], CIFAR100_RECORD, 1, &norm)?;
    let test = cifar_split(&[dir.join("test.bin")], CIFAR100_RECORD, 1, &norm)?;
    let pair = DatasetPair {
        name: "cifar100".into(),
        train,
        test,
        num_classes: 100,
        normalization: Some(norm),
    };
    pair.validate()?;
    Ok(pair)
}

/// Crops a `[C, H, W]` window at offset `(dy, dx)` of the zero-padded image
/// and optionally mirrors it horizontally. Offset `(4, 4)` without flip is
/// the identity.
pub fn augment_with(shape: [usize; 3], image: &[f32], dy: usize, dx: usize, flip: bool) -> Vec<f32> {
    let [c, h, w] = shape;
    let pad = CROP_PADDING as isize;
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let sy = y as isize + dy as isize - pad;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = x as isize + dx as isize - pad;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                let ox = if flip { w - 1 - x } else { x };
                out[(ch * h + y) * w + ox] = image[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    out
}

fn augment_slice(shape: [usize; 3], image: &[f32], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let dy = rng.random_range(0..=2 * CROP_PADDING);
    let dx = rng.random_range(0..=2 * CROP_PADDING);
    let flip = rng.random_bool(0.5);
    augment_with(shape, image, dy, dx, flip)
}

/// Random 4-pixel-padded crop plus horizontal flip with probability ½.
pub fn augment(image: &Tensor<f32>, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
    let [c, h, w] = *image.shape() else {
        return Err(Error::shape("augment", format!("expected [C,H,W], got {:?}", image.shape())));
    };
    Tensor::from_vec([c, h, w], augment_slice([c, h, w], image.data(), rng))
}

/// Indices of a stratified subsample: `floor(fraction·n_c)` per class,
/// returned in original order. Deterministic in `seed`.
pub fn stratified_indices(labels: &[usize], num_classes: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("subset fraction must be in (0, 1], got {fraction}")));
    }
    if fraction == 1.0 {
        return Ok((0..labels.len()).collect());
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for (class, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let take = (fraction * idx.len() as f64).floor() as usize;
        if take == 0 {
            return Err(Error::EmptyClass(class));
        }
        idx.shuffle(&mut rng);
        keep.extend_from_slice(&idx[..take]);
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Stratified subsample of the training split; the test split is untouched.
pub fn subset(data: &DatasetPair, fraction: f64, seed: u64) -> Result<DatasetPair> {
    let idx = stratified_indices(&data.train.labels, data.num_classes, fraction, seed)?;
    Ok(DatasetPair {
        train: if idx.len() == data.train.len() {
            data.train.clone()
        } else {
            data.train.select(&idx)
        },
        ..data.clone()
    })
}

/// Four Gaussian blobs centred at (±1, ±1); class 0 when the centre's
/// coordinates share a sign, class 1 otherwise. Each point is a `[1, 1, 2]`
/// image. Train and test each hold `n` points from independent streams.
pub fn make_synthetic_xor(n: usize, sigma: f64, seed: u64) -> Result<DatasetPair> {
    if n < 4 {
        return Err(Error::Config(format!("xor dataset needs at least 4 points, got {n}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("xor sigma must be ≥ 0, got {sigma}")));
    }
    let centers = [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)];
    let make = |stream: u64| -> Result<Split> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let noise = Normal::new(0.0, sigma).expect("sigma validated");
        let mut images = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let (cx, cy): (f64, f64) = centers[i % 4];
            images.push((cx + noise.sample(&mut rng)) as f32);
            images.push((cy + noise.sample(&mut rng)) as f32);
            labels.push(if cx * cy > 0.0 { 0 } else { 1 });
        }
        Split::new([1, 1, 2], images, labels)
    };
    Ok(DatasetPair {
        name: "xor".into(),
        train: make(0)?,
        test: make(1)?,
        num_classes: 2,
        normalization: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(magic: u32, count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [magic, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn idx_parsing_and_guards() {
        let p = Path::new("x");
        let ok = idx_images(MNIST_IMAGE_MAGIC, 2, 2, 2, &[0, 1, 2, 3, 4, 5, 6, 7]);
        let (n, r, c, px) = parse_idx_images(&ok, p).unwrap();
        assert_eq!((n, r, c), (2, 2, 2));
        assert_eq!(px[7], 7);
        let wrong = idx_images(MNIST_LABEL_MAGIC, 2, 2, 2, &[0; 8]);
        match parse_idx_images(&wrong, p) {
            Err(Error::BadMagic { found, .. }) => assert_eq!(found, 0x801),
            other => panic!("expected bad magic, got {other:?}"),
        }
        let short = idx_images(MNIST_IMAGE_MAGIC, 3, 2, 2, &[0; 8]);
        assert!(matches!(parse_idx_images(&short, p), Err(Error::Format { .. })));
        let mut labels = MNIST_LABEL_MAGIC.to_be_bytes().to_vec();
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[7, 0, 9]);
        assert_eq!(parse_idx_labels(&labels, p).unwrap(), vec![7, 0, 9]);
        assert!(parse_idx_labels(&labels[..10], p).is_err());
    }

    #[test]
    fn cifar_record_decoding() {
        let norm = Normalization {
            mean: CIFAR10_MEAN.to_vec(),
            std: CIFAR10_STD.to_vec(),
        };
        let mut rec = vec![9u8];
        rec.extend(std::iter::repeat(255u8).take(3072));
        let (img, labels) = parse_cifar_records(&rec, CIFAR10_RECORD, 0, &norm, Path::new("r")).unwrap();
        assert_eq!(labels, vec![9]);
        for c in 0..3 {
            let plane = &img[c * 1024..(c + 1) * 1024];
            let expected = (1.0 - CIFAR10_MEAN[c]) / CIFAR10_STD[c];
            assert!(plane.iter().all(|&v| v == expected));
        }
        let err = parse_cifar_records(&rec[..3000], CIFAR10_RECORD, 0, &norm, Path::new("batch.bin")).unwrap_err();
        assert!(err.to_string().contains("batch.bin"));
    }

    #[test]
    fn normalization_round_trip() {
        let norm = Normalization {
            mean: CIFAR10_MEAN.to_vec(),
            std: CIFAR10_STD.to_vec(),
        };
        let orig: Vec<f32> = (0..12).map(|i| i as f32 / 11.0).collect();
        let mut x = orig.clone();
        norm.normalize(&mut x);
        norm.denormalize(&mut x);
        for (a, b) in x.iter().zip(&orig) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn augment_identity_and_flip() {
        let shape = [2, 3, 3];
        let img: Vec<f32> = (0..18).map(|i| i as f32).collect();
        assert_eq!(augment_with(shape, &img, 4, 4, false), img);
        let flipped = augment_with(shape, &img, 4, 4, true);
        assert_eq!(&flipped[..3], &[2.0, 1.0, 0.0]);
        assert_eq!(augment_with(shape, &flipped, 4, 4, true), img);
        // Shift right by one: leftmost column comes from padding.
        let shifted = augment_with(shape, &img, 4, 3, false);
        assert_eq!(&shifted[..3], &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn augment_is_seeded() {
        let img = Tensor::from_vec([3, 8, 8], (0..192).map(|i| i as f32).collect()).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let x = augment(&img, &mut a).unwrap();
            assert_eq!(x, augment(&img, &mut b).unwrap());
            assert_eq!(x.shape(), img.shape());
        }
    }

    #[test]
    fn stratified_counts() {
        let labels: Vec<usize> = (0..50_000).map(|i| i % 10).collect();
        let idx = stratified_indices(&labels, 10, 0.25, 1).unwrap();
        assert_eq!(idx.len(), 12_500);
        for c in 0..10 {
            assert_eq!(idx.iter().filter(|&&i| labels[i] == c).count(), 1_250);
        }
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(idx, stratified_indices(&labels, 10, 0.25, 1).unwrap());
        assert_ne!(idx, stratified_indices(&labels, 10, 0.25, 2).unwrap());
        assert_eq!(stratified_indices(&labels, 10, 1.0, 9).unwrap().len(), 50_000);
        assert!(matches!(
            stratified_indices(&labels[..20], 10, 0.25, 1),
            Err(Error::EmptyClass(_))
        ));
        assert!(stratified_indices(&labels, 10, 0.0, 1).is_err());
    }

    #[test]
    fn xor_centres_without_noise() {
        let d = make_synthetic_xor(4, 0.0, 3).unwrap();
        let pts: Vec<(f32, f32, usize)> = (0..4)
            .map(|i| (d.train.image(i)[0], d.train.image(i)[1], d.train.label(i)))
            .collect();
        assert_eq!(
            pts,
            vec![(1.0, 1.0, 0), (-1.0, -1.0, 0), (1.0, -1.0, 1), (-1.0, 1.0, 1)]
        );
        assert_eq!(make_synthetic_xor(64, 0.2, 5).unwrap(), make_synthetic_xor(64, 0.2, 5).unwrap());
        assert!(make_synthetic_xor(3, 0.2, 5).is_err());
    }
}
