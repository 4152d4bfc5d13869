//! IDX image/label reader (the MNIST distribution format).
//!
//! Big-endian magic 0x00000803 for image files, 0x00000801 for label files.
//! Pixels are scaled to `[0, 1]`.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, LabelKind};
use crate::seed::{derive, Domain};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_all(path: &Path) -> Result<Vec<u8>, DataError> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| DataError::Io { path: path.display().to_string(), source: e })?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Reads an IDX image file; returns `(flat rows scaled to [0,1], rows, cols)`.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<(Array2<f64>, usize, usize), DataError> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    let fail = |reason: String| DataError::Idx { path: path.display().to_string(), reason };
    if bytes.len() < 16 {
        return Err(fail("file shorter than the 16-byte header".into()));
    }
    let magic = be_u32(&bytes, 0);
    if magic != IMAGE_MAGIC {
        return Err(fail(format!("magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")));
    }
    let count = be_u32(&bytes, 4) as usize;
    let rows = be_u32(&bytes, 8) as usize;
    let cols = be_u32(&bytes, 12) as usize;
    let want = 16 + count * rows * cols;
    if bytes.len() < want {
        return Err(fail(format!("{} bytes, header implies {want}", bytes.len())));
    }
    let mut features = Array2::<f64>::zeros((count, rows * cols));
    for i in 0..count {
        let base = 16 + i * rows * cols;
        for j in 0..rows * cols {
            features[[i, j]] = bytes[base + j] as f64 / 255.0;
        }
    }
    Ok((features, rows, cols))
}

/// Reads an IDX label file.
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u32>, DataError> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    let fail = |reason: String| DataError::Idx { path: path.display().to_string(), reason };
    if bytes.len() < 8 {
        return Err(fail("file shorter than the 8-byte header".into()));
    }
    let magic = be_u32(&bytes, 0);
    if magic != LABEL_MAGIC {
        return Err(fail(format!("magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")));
    }
    let count = be_u32(&bytes, 4) as usize;
    if bytes.len() < 8 + count {
        return Err(fail(format!("{} bytes, header implies {}", bytes.len(), 8 + count)));
    }
    Ok(bytes[8..8 + count].iter().map(|&b| b as u32).collect())
}

/// Loads a paired image/label IDX dataset. `subset` caps the dataset to the
/// first N rows after a seeded shuffle (desk-scale runs); `None` keeps all.
pub fn load_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    classes: u32,
    subset: Option<(usize, u64)>,
) -> Result<Dataset, DataError> {
    let (features, rows, cols) = load_idx_images(&images)?;
    let labels_vec = load_idx_labels(&labels)?;
    if features.nrows() != labels_vec.len() {
        return Err(DataError::Schema {
            path: images.as_ref().display().to_string(),
            reason: format!("{} images but {} labels", features.nrows(), labels_vec.len()),
        });
    }
    let ds = Dataset::new(features, labels_vec, LabelKind::Classes(classes))?
        .with_image_shape((1, rows, cols))?;
    match subset {
        Some((n, seed)) if n < ds.len() => {
            let mut indices: Vec<usize> = (0..ds.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, Domain::Subset, &[]));
            indices.shuffle(&mut rng);
            indices.truncate(n);
            Ok(ds.select(&indices))
        }
        _ => Ok(ds),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&count.to_be_bytes()).unwrap();
        f.write_all(&rows.to_be_bytes()).unwrap();
        f.write_all(&cols.to_be_bytes()).unwrap();
        f.write_all(pixels).unwrap();
        f
    }

    fn write_labels(labels: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&LABEL_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
        f
    }

    #[test]
    fn roundtrip_synthetic_idx_pair() {
        let img = write_images(2, 2, 2, &[0, 51, 102, 255, 10, 20, 30, 40]);
        let lab = write_labels(&[3, 7]);
        let ds = load_idx(img.path(), lab.path(), 10, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_count(), 4);
        assert_eq!(ds.image_shape(), Some((1, 2, 2)));
        assert_eq!(ds.all_labels(), &[3, 7]);
        let batch = ds.minibatch(&[0]);
        assert_eq!(batch.batch_size(), 1);
        // 255 scales to exactly 1.0
        match batch.inputs {
            crate::nn::Inputs::Images(t) => assert_eq!(t[[0, 0, 1, 1]], 1.0),
            _ => panic!("expected image inputs"),
        }
    }

    #[test]
    fn wrong_magic_rejected() {
        let lab = write_labels(&[1]);
        assert!(load_idx_images(lab.path()).is_err());
    }

    #[test]
    fn truncated_file_rejected() {
        let img = write_images(3, 2, 2, &[0; 4]); // header says 12 pixel bytes
        assert!(load_idx_images(img.path()).is_err());
    }

    #[test]
    fn subset_takes_first_n_after_seeded_shuffle() {
        let img = write_images(5, 1, 1, &[10, 20, 30, 40, 50]);
        let lab = write_labels(&[0, 1, 2, 3, 4]);
        let a = load_idx(img.path(), lab.path(), 10, Some((3, 7))).unwrap();
        let b = load_idx(img.path(), lab.path(), 10, Some((3, 7))).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a.all_labels(), b.all_labels());
    }
}
