//! MNIST IDX ingestion and the optimization-subset split.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IdxError, Result};
use crate::reservoir::{IMAGE_SIDE, PIXELS};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const CLASSES: usize = 10;
pub const TRAIN_SIZE: usize = 60_000;
pub const TEST_SIZE: usize = 10_000;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Train60k,
    Test10k,
    Optimization12k,
    /// Anything else: a truncated or hand-built set.
    Custom,
}

/// Images stored back to back as 784 row-major bytes each, with one label per image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<u8>,
    labels: Vec<u8>,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(images: Vec<u8>, labels: Vec<u8>, provenance: Provenance) -> Result<Self> {
        if images.len() != labels.len() * PIXELS {
            return Err(Error::Shape {
                expected: format!(
                    "{} bytes for {} labels",
                    labels.len() * PIXELS,
                    labels.len()
                ),
                found: format!("{} bytes", images.len()),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= CLASSES) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} is not a digit"
            )));
        }
        Ok(Self {
            images,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * PIXELS..(i + 1) * PIXELS]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn images(&self) -> &[u8] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn class_histogram(&self) -> [usize; CLASSES] {
        let mut h = [0; CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Items at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], provenance: Provenance) -> Self {
        let mut images = Vec::with_capacity(indices.len() * PIXELS);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Self {
            images,
            labels,
            provenance,
        }
    }

    /// The first `n` items (or all of them).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images[..n * PIXELS].to_vec(),
            labels: self.labels[..n].to_vec(),
            provenance: if n == self.len() {
                self.provenance
            } else {
                Provenance::Custom
            },
        }
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    offset: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], IdxError> {
        let available = self.bytes.len() - self.offset;
        if available < n {
            return Err(IdxError::Truncated {
                path: self.path.to_path_buf(),
                offset: self.offset as u64,
                needed: (n - available) as u64,
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IdxError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Reads a file fully, transparently decompressing `*.gz`.
fn read_file(path: &Path) -> Result<Vec<u8>, IdxError> {
    let io = |source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = File::open(path).map_err(io)?;
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file).read_to_end(&mut bytes).map_err(io)?;
    } else {
        file.read_to_end(&mut bytes).map_err(io)?;
    }
    Ok(bytes)
}

fn check_magic(path: &Path, found: u32, expected: u32, kind: &'static str) -> Result<(), IdxError> {
    if found != expected {
        return Err(IdxError::BadMagic {
            path: path.to_path_buf(),
            kind,
            expected,
            found,
        });
    }
    Ok(())
}

/// Parses an IDX3 image file of 28×28 images.
pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let mut cur = Cursor {
        path,
        bytes,
        offset: 0,
    };
    check_magic(path, cur.u32()?, IMAGE_MAGIC, "image")?;
    let count = cur.u32()? as usize;
    let rows = cur.u32()?;
    let cols = cur.u32()?;
    if rows as usize != IMAGE_SIDE || cols as usize != IMAGE_SIDE {
        return Err(IdxError::Dimensions {
            path: path.to_path_buf(),
            rows,
            cols,
        });
    }
    Ok(cur.take(count * PIXELS)?.to_vec())
}

/// Parses an IDX1 label file.
pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let mut cur = Cursor {
        path,
        bytes,
        offset: 0,
    };
    check_magic(path, cur.u32()?, LABEL_MAGIC, "label")?;
    let count = cur.u32()? as usize;
    let start = cur.offset;
    let labels = cur.take(count)?.to_vec();
    if let Some(pos) = labels.iter().position(|&l| l as usize >= CLASSES) {
        return Err(IdxError::BadLabel {
            path: path.to_path_buf(),
            offset: (start + pos) as u64,
            value: labels[pos],
        });
    }
    Ok(labels)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = parse_images(images_path, &read_file(images_path)?)?;
    let labels = parse_labels(labels_path, &read_file(labels_path)?)?;
    if images.len() / PIXELS != labels.len() {
        return Err(IdxError::CountMismatch {
            images_path: images_path.to_path_buf(),
            images: images.len() / PIXELS,
            labels_path: labels_path.to_path_buf(),
            labels: labels.len(),
        }
        .into());
    }
    let provenance = match labels.len() {
        TRAIN_SIZE => Provenance::Train60k,
        TEST_SIZE => Provenance::Test10k,
        _ => Provenance::Custom,
    };
    LabeledDataset::new(images, labels, provenance)
}

/// Locates an IDX file in `dir`, accepting a `.gz` variant.
pub fn find_idx(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    if plain.exists() {
        return plain;
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        gz
    } else {
        plain
    }
}

/// Loads the standard training and test sets from a directory.
pub fn load_mnist_dir(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = load_idx(&find_idx(dir, TRAIN_IMAGES), &find_idx(dir, TRAIN_LABELS))?;
    let test = load_idx(&find_idx(dir, TEST_IMAGES), &find_idx(dir, TEST_LABELS))?;
    Ok((train, test))
}

pub fn write_idx_images<W: Write>(dataset: &LabeledDataset, mut out: W) -> std::io::Result<()> {
    out.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    out.write_all(&(dataset.len() as u32).to_be_bytes())?;
    out.write_all(&(IMAGE_SIDE as u32).to_be_bytes())?;
    out.write_all(&(IMAGE_SIDE as u32).to_be_bytes())?;
    out.write_all(&dataset.images)
}

pub fn write_idx_labels<W: Write>(dataset: &LabeledDataset, mut out: W) -> std::io::Result<()> {
    out.write_all(&LABEL_MAGIC.to_be_bytes())?;
    out.write_all(&(dataset.len() as u32).to_be_bytes())?;
    out.write_all(&dataset.labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub optimization_fraction: f64,
    /// Equal count per class when set; plain uniform sampling otherwise.
    pub stratified: bool,
    pub rng_seed: u64,
    /// Required size of the base set; `None` accepts any size.
    pub expected_base: Option<usize>,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            optimization_fraction: 0.2,
            stratified: true,
            rng_seed: 0,
            expected_base: Some(TRAIN_SIZE),
        }
    }
}

/// Indices of the optimization subset, ascending.
pub fn split_indices(train: &LabeledDataset, plan: &SplitPlan) -> Result<Vec<usize>> {
    if let Some(expected) = plan.expected_base {
        if train.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "split expects a base of {expected} items, got {}",
                train.len()
            )));
        }
    }
    let fraction = plan.optimization_fraction;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "optimization fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok((0..train.len()).collect());
    }
    let total = (fraction * train.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.rng_seed);
    let mut chosen = if plan.stratified {
        if !total.is_multiple_of(CLASSES) {
            return Err(Error::InvalidArgument(format!(
                "stratified subset of {total} items does not divide into {CLASSES} classes"
            )));
        }
        let quota = total / CLASSES;
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASSES];
        for (i, &l) in train.labels().iter().enumerate() {
            by_class[l as usize].push(i);
        }
        let mut chosen = Vec::with_capacity(total);
        for (class, members) in by_class.iter_mut().enumerate() {
            if members.len() < quota {
                return Err(Error::InvalidArgument(format!(
                    "class {class} has {} items, stratified split needs {quota}",
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            chosen.extend_from_slice(&members[..quota]);
        }
        chosen
    } else {
        let mut all: Vec<usize> = (0..train.len()).collect();
        all.shuffle(&mut rng);
        all.truncate(total);
        all
    };
    chosen.sort_unstable();
    Ok(chosen)
}

/// The optimization subset (12 000 of the 60 000 training items by default).
pub fn make_split(train: &LabeledDataset, plan: &SplitPlan) -> Result<LabeledDataset> {
    let indices = split_indices(train, plan)?;
    let provenance = if indices.len() == train.len() {
        train.provenance
    } else {
        Provenance::Optimization12k
    };
    Ok(train.subset(&indices, provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn synthetic(n: usize) -> LabeledDataset {
        let images = (0..n * PIXELS).map(|i| (i * 31 % 256) as u8).collect();
        let labels = (0..n).map(|i| (i * 7 % 10) as u8).collect();
        LabeledDataset::new(images, labels, Provenance::Custom).unwrap()
    }

    fn encode(ds: &LabeledDataset) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        let mut lbl = Vec::new();
        write_idx_images(ds, &mut img).unwrap();
        write_idx_labels(ds, &mut lbl).unwrap();
        (img, lbl)
    }

    #[test]
    fn label_file_with_image_magic_is_rejected() {
        let ds = synthetic(3);
        let (img, _) = encode(&ds);
        let err = parse_labels(Path::new("labels.idx"), &img).unwrap_err();
        assert!(err.to_string().contains("expected label magic"), "{err}");
        assert!(err.to_string().contains("labels.idx"));
    }

    #[test]
    fn truncated_image_file_names_offset() {
        let ds = synthetic(2);
        let (img, _) = encode(&ds);
        let err = parse_images(Path::new("img"), &img[..img.len() - 5]).unwrap_err();
        match err {
            IdxError::Truncated { offset, needed, .. } => {
                assert_eq!(offset, 16);
                assert_eq!(needed, 5);
            }
            other => panic!("{other}"),
        }
        let err = parse_images(Path::new("img"), &img[..6]).unwrap_err();
        assert!(matches!(err, IdxError::Truncated { offset: 4, .. }));
    }

    #[test]
    fn count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = encode(&synthetic(3));
        let (_, lbl) = encode(&synthetic(4));
        std::fs::write(dir.path().join("i"), img).unwrap();
        std::fs::write(dir.path().join("l"), lbl).unwrap();
        let err = load_idx(&dir.path().join("i"), &dir.path().join("l")).unwrap_err();
        assert!(matches!(
            err,
            Error::Idx(IdxError::CountMismatch {
                images: 3,
                labels: 4,
                ..
            })
        ));
    }

    #[test]
    fn non_digit_label_is_reported() {
        let ds = synthetic(3);
        let (_, mut lbl) = encode(&ds);
        lbl[9] = 12;
        let err = parse_labels(Path::new("l"), &lbl).unwrap_err();
        assert!(matches!(
            err,
            IdxError::BadLabel {
                offset: 9,
                value: 12,
                ..
            }
        ));
    }

    #[test]
    fn gzip_files_are_detected_by_extension() {
        use flate2::write::GzEncoder;
        use flate2::Compression;
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic(5);
        let (img, lbl) = encode(&ds);
        for (name, bytes) in [("a.gz", img), ("b.gz", lbl)] {
            let mut enc = GzEncoder::new(
                File::create(dir.path().join(name)).unwrap(),
                Compression::fast(),
            );
            enc.write_all(&bytes).unwrap();
            enc.finish().unwrap();
        }
        let back = load_idx(&dir.path().join("a.gz"), &dir.path().join("b.gz")).unwrap();
        assert_eq!(back.images(), ds.images());
        assert_eq!(back.labels(), ds.labels());
    }

    #[test]
    fn missing_file_is_an_io_error_naming_the_path() {
        let err = load_idx(Path::new("/nonexistent/x"), Path::new("/nonexistent/y")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x"));
    }

    #[test]
    fn split_requires_expected_base() {
        let ds = synthetic(100);
        assert!(split_indices(&ds, &SplitPlan::default()).is_err());
    }

    #[test]
    fn split_is_deterministic_and_balanced() {
        let ds = synthetic(1000);
        let plan = SplitPlan {
            expected_base: None,
            rng_seed: 9,
            ..SplitPlan::default()
        };
        let a = split_indices(&ds, &plan).unwrap();
        let b = split_indices(&ds, &plan).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        let sub = make_split(&ds, &plan).unwrap();
        assert_eq!(sub.class_histogram(), [20; CLASSES]);
        let other = split_indices(
            &ds,
            &SplitPlan {
                rng_seed: 10,
                ..plan.clone()
            },
        )
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn full_fraction_returns_the_base() {
        let ds = synthetic(50);
        let plan = SplitPlan {
            optimization_fraction: 1.0,
            expected_base: None,
            ..SplitPlan::default()
        };
        assert_eq!(make_split(&ds, &plan).unwrap(), ds);
    }

    #[test]
    fn unstratified_split_has_requested_size() {
        let ds = synthetic(500);
        let plan = SplitPlan {
            stratified: false,
            expected_base: None,
            ..SplitPlan::default()
        };
        let idx = split_indices(&ds, &plan).unwrap();
        assert_eq!(idx.len(), 100);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn idx_round_trip_is_byte_exact(n in 0usize..6, seed in any::<u8>()) {
            let images: Vec<u8> = (0..n * PIXELS).map(|i| (i as u8).wrapping_mul(seed)).collect();
            let labels: Vec<u8> = (0..n).map(|i| ((i + seed as usize) % 10) as u8).collect();
            let ds = LabeledDataset::new(images, labels, Provenance::Custom).unwrap();
            let (img, lbl) = encode(&ds);
            let parsed = LabeledDataset::new(
                parse_images(Path::new("i"), &img).unwrap(),
                parse_labels(Path::new("l"), &lbl).unwrap(),
                Provenance::Custom,
            ).unwrap();
            let (img2, lbl2) = encode(&parsed);
            prop_assert_eq!(img, img2);
            prop_assert_eq!(lbl, lbl2);
        }
    }
}
