use std::path::{Path, PathBuf};

use super::Dataset;
use crate::error::{Error, Result};
use crate::models::Example;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            path: PathBuf::from(self.path),
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn u32_be(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.fail(self.bytes.len(), "truncated header"))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("four bytes")))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.fail(self.bytes.len(), format!("truncated payload: expected {n} bytes from offset {}", self.pos)))?;
        self.pos = end;
        Ok(chunk)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let m = self.u32_be()?;
        if m != expected {
            return Err(self.fail(0, format!("bad magic 0x{m:08x}, expected 0x{expected:08x}")));
        }
        Ok(())
    }
}

/// Parses in-memory IDX image and label files. Pixels are scaled to `[0, 1]`.
pub fn parse_idx(images: &[u8], images_path: &Path, labels: &[u8], labels_path: &Path) -> Result<Dataset> {
    let mut img = Reader { path: images_path, bytes: images, pos: 0 };
    img.magic(IMAGES_MAGIC)?;
    let count = img.u32_be()? as usize;
    let rows = img.u32_be()? as usize;
    let cols = img.u32_be()? as usize;
    let pixels = img.take(count * rows * cols)?;

    let mut lab = Reader { path: labels_path, bytes: labels, pos: 0 };
    lab.magic(LABELS_MAGIC)?;
    let label_count = lab.u32_be()? as usize;
    if label_count != count {
        return Err(lab.fail(4, format!("{label_count} labels for {count} images")));
    }
    let raw_labels = lab.take(count)?;

    let dim = rows * cols;
    let examples: Vec<Example> = raw_labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let x = pixels[i * dim..(i + 1) * dim].iter().map(|&p| p as f64 / 255.0).collect();
            Example::new(x, y as usize)
        })
        .collect();
    let num_classes = raw_labels.iter().copied().max().map_or(1, |m| m as usize + 1);
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(name, num_classes, examples)
}

/// Loads an image/label pair of IDX files (e.g. MNIST).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = std::fs::read(ip)?;
    let labels = std::fs::read(lp)?;
    parse_idx(&images, ip, &labels, lp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    /// Two 2x2 images and their labels, written out byte by byte.
    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let mut images = header(0x0803, &[2, 2, 2]);
        images.extend_from_slice(&[0, 255, 51, 102, 255, 0, 0, 204]);
        let mut labels = header(0x0801, &[2]);
        labels.extend_from_slice(&[3, 7]);
        (images, labels)
    }

    #[test]
    fn parses_hand_made_fixture() {
        let (images, labels) = fixture();
        let ds = parse_idx(&images, Path::new("img"), &labels, Path::new("lbl")).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.input_dim, 4);
        assert_eq!(ds.num_classes, 8);
        assert_eq!(ds.examples[0].features, vec![0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.examples[1].features, vec![1.0, 0.0, 0.0, 0.8]);
        assert_eq!((ds.examples[0].label, ds.examples[1].label), (3, 7));
    }

    #[test]
    fn wrong_magic_on_labels_is_rejected() {
        let (images, mut labels) = fixture();
        labels[3] = 0x03;
        let err = parse_idx(&images, Path::new("img"), &labels, Path::new("lbl")).unwrap_err();
        match err {
            Error::Format { offset, reason, .. } => {
                assert_eq!(offset, 0);
                assert!(reason.contains("magic"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_images_report_offset() {
        let (mut images, labels) = fixture();
        images.truncate(images.len() - 3);
        let err = parse_idx(&images, Path::new("img"), &labels, Path::new("lbl")).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 21, .. }), "{err}");
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let (images, _) = fixture();
        let mut labels = header(0x0801, &[3]);
        labels.extend_from_slice(&[1, 2, 3]);
        let err = parse_idx(&images, Path::new("img"), &labels, Path::new("lbl")).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 4, .. }));
    }

    #[test]
    fn loads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = fixture();
        let (ip, lp) = (dir.path().join("i.idx"), dir.path().join("l.idx"));
        std::fs::write(&ip, images).unwrap();
        std::fs::write(&lp, labels).unwrap();
        assert_eq!(load_idx(&ip, &lp).unwrap().len(), 2);
    }
}
