//! `root/<class>/<file>` image folders.

use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{DynamicImage, ImageBuffer, Luma};

use super::{split_per_class, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const EXTENSIONS: &[&str] = &["png", "pgm", "ppm", "pnm", "pbm"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FolderSpec {
    /// Training samples per class.
    pub train_per_class: usize,
    /// Test samples per class.
    pub test_per_class: usize,
    /// Side length every image is resized to.
    pub size: usize,
    pub seed: u64,
}

impl FolderSpec {
    pub fn new(train_per_class: usize, test_per_class: usize, seed: u64) -> Self {
        FolderSpec {
            train_per_class,
            test_per_class,
            size: 32,
            seed,
        }
    }
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn is_image(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Gray level as the plain average of the colour channels, then a bilinear
/// resize to `size x size`; values in `[0, 1]`.
pub fn decode_gray(path: &Path, size: usize) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let gray = to_gray(&img);
    let resized = if gray.width() as usize == size && gray.height() as usize == size {
        gray
    } else {
        imageops::resize(&gray, size as u32, size as u32, FilterType::Triangle)
    };
    Ok(resized.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

fn to_gray(img: &DynamicImage) -> ImageBuffer<Luma<f32>, Vec<f32>> {
    let (w, h) = (img.width(), img.height());
    if img.color().has_color() {
        let rgb = img.to_rgb32f();
        ImageBuffer::from_fn(w, h, |x, y| {
            let p = rgb.get_pixel(x, y).0;
            Luma([(p[0] + p[1] + p[2]) / 3.0])
        })
    } else {
        let l = img.to_luma32f();
        ImageBuffer::from_fn(w, h, |x, y| Luma([l.get_pixel(x, y).0[0]]))
    }
}

/// Loads every class directory under `root` holding at least
/// `train_per_class + test_per_class` images and splits it per class.
/// Smaller classes are skipped with a warning, as are unreadable files.
pub fn load_image_folder(root: &Path, spec: FolderSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    if spec.size == 0 {
        return Err(Error::Config("image size must be positive".into()));
    }
    let need = spec.train_per_class + spec.test_per_class;
    let mut names = Vec::new();
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for dir in list_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let files: Vec<_> = list_dir(&dir)?.into_iter().filter(|p| is_image(p)).collect();
        if files.len() < need {
            log::warn!("class `{name}`: {} images, {need} needed; excluded", files.len());
            continue;
        }
        let mut decoded = Vec::with_capacity(files.len());
        for f in &files {
            match decode_gray(f, spec.size) {
                Ok(px) => decoded.push(px),
                Err(e) => log::warn!("skipping unreadable image: {e}"),
            }
        }
        if decoded.len() < need {
            return Err(Error::Input(format!(
                "class `{name}` has only {} readable images, {need} needed",
                decoded.len()
            )));
        }
        let label = names.len();
        names.push(name);
        labels.extend(std::iter::repeat_n(label, decoded.len()));
        pixels.extend(decoded.into_iter().flatten());
    }
    if names.is_empty() {
        return Err(Error::Input(format!(
            "no class under {} has {need} images",
            root.display()
        )));
    }
    let images = Tensor::new(vec![labels.len(), 1, spec.size, spec.size], pixels)?;
    let all = LabeledDataset::with_names(images, labels, names, Split::All)?;
    split_per_class(&all, spec.train_per_class, spec.test_per_class, spec.seed)
}

/// Writes `ds` as 8-bit grayscale PNGs under `root/<class-name>/`.
pub fn write_image_folder(ds: &LabeledDataset, root: &Path) -> Result<()> {
    let [_, h, w] = ds.image_shape();
    for name in ds.class_names() {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for i in 0..ds.len() {
        let px: Vec<u8> = ds.images().sample(i).iter().map(|&v| (v * 255.0).round() as u8).collect();
        let img = ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, px).expect("sample size matches");
        let path = root.join(&ds.class_names()[ds.labels()[i]]).join(format!("{i:06}.png"));
        img.save(&path).map_err(|source| Error::Image { path, source })?;
    }
    Ok(())
}
