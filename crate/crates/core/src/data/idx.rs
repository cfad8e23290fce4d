//! The big-endian IDX container used by the MNIST distribution.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_be_bytes(b))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn expect_magic(found: u32, want: u32, path: &Path) -> Result<()> {
    if found != want {
        return Err(Error::Format(format!(
            "{}: magic {found}, expected {want}",
            path.display()
        )));
    }
    Ok(())
}

/// Raw image bytes: `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = open(path)?;
    expect_magic(read_u32(&mut r, path)?, IMAGE_MAGIC, path)?;
    let n = read_u32(&mut r, path)? as usize;
    let rows = read_u32(&mut r, path)? as usize;
    let cols = read_u32(&mut r, path)? as usize;
    let mut pixels = vec![0u8; n * rows * cols];
    r.read_exact(&mut pixels).map_err(|e| Error::io(path, e))?;
    Ok((n, rows, cols, pixels))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = open(path)?;
    expect_magic(read_u32(&mut r, path)?, LABEL_MAGIC, path)?;
    let n = read_u32(&mut r, path)? as usize;
    let mut labels = vec![0u8; n];
    r.read_exact(&mut labels).map_err(|e| Error::io(path, e))?;
    Ok(labels)
}

/// Loads an image/label file pair, scaling bytes to `[0, 1]`. The class count
/// is one past the largest label.
pub fn load_idx(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let (n, rows, cols, pixels) = read_idx_images(images)?;
    let raw = read_idx_labels(labels)?;
    if raw.len() != n {
        return Err(Error::Consistency(format!(
            "{} holds {n} images but {} holds {} labels",
            images.display(),
            labels.display(),
            raw.len()
        )));
    }
    let data = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let tensor = Tensor::new(vec![n, 1, rows, cols], data)?;
    let classes = raw.iter().copied().max().map_or(0, |m| m as usize + 1);
    LabeledDataset::new(tensor, raw.into_iter().map(usize::from).collect(), classes, Split::All)
}

/// `(train, test)` from a directory holding the four official MNIST files.
pub fn load_mnist(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let load = |img: &str, lbl: &str, split| -> Result<LabeledDataset> {
        let ds = load_idx(&dir.join(img), &dir.join(lbl))?;
        let (images, labels) = (ds.images().clone(), ds.labels().to_vec());
        LabeledDataset::new(images, labels, 10, split)
    };
    Ok((
        load("train-images-idx3-ubyte", "train-labels-idx1-ubyte", Split::Train)?,
        load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", Split::Test)?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes `N x 1 x H x W` (or `N x H x W`) images in `[0, 1]`, rounding to
/// bytes.
pub fn write_idx_images(path: &Path, images: &Tensor<f32>) -> Result<()> {
    let s = images.shape();
    let (rows, cols) = match s {
        [_, 1, h, w] | [_, h, w] => (*h, *w),
        _ => return Err(Error::Shape(format!("cannot store {s:?} as IDX images"))),
    };
    let mut out = create(path)?;
    let mut bytes = Vec::with_capacity(16 + images.numel());
    for v in [IMAGE_MAGIC, s[0] as u32, rows as u32, cols as u32] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    bytes.extend(images.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out.write_all(&bytes).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        bytes.push(u8::try_from(l).map_err(|_| Error::Input(format!("label {l} does not fit a byte")))?);
    }
    let mut out = create(path)?;
    out.write_all(&bytes).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}
