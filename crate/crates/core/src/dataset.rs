//! IDX arrays and the on-disk dataset container.
//!
//! An IDX file is a big-endian header followed by a raw payload:
//!
//! | offset | bytes | content                          |
//! |--------|-------|----------------------------------|
//! | 0      | 2     | `00 00`                          |
//! | 2      | 1     | type code, only `0x08` (u8)      |
//! | 3      | 1     | rank `r`                         |
//! | 4      | 4·r   | dimensions, big-endian `u32`     |
//! | 4+4r   | Π dims| payload, row-major               |
//!
//! A container directory holds `images.idx3-ubyte` (`n×H×W`, or
//! `images.idx4-ubyte` with `n×H×W×C` for colour), `labels.idx1-ubyte` and
//! `manifest.json` with class names, per-class counts, shape and a CRC32 per
//! file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::DatasetError;

pub const UBYTE: u8 = 0x08;
pub const MAX_RANK: usize = 4;
pub const LABELS_FILE: &str = "labels.idx1-ubyte";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Image file name for a channel count.
pub fn images_file(channels: usize) -> &'static str {
    if channels == 1 {
        "images.idx3-ubyte"
    } else {
        "images.idx4-ubyte"
    }
}

/// An unsigned-byte IDX array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn new(dims: Vec<usize>, data: Vec<u8>) -> Result<Self, DatasetError> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(DatasetError::CountMismatch(format!(
                "dims {dims:?} need {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(IdxArray { dims, data })
    }
}

fn take(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8], DatasetError> {
    bytes.get(offset..offset + len).ok_or(DatasetError::Truncated {
        offset,
        expected: len,
        found: bytes.len().saturating_sub(offset),
    })
}

/// Parses an in-memory IDX file.
///
/// ```
/// use gcec::dataset::parse_idx;
/// let labels = parse_idx(&[0, 0, 8, 1, 0, 0, 0, 3, 7, 2, 9]).unwrap();
/// assert_eq!(labels.dims, vec![3]);
/// assert_eq!(labels.data, vec![7, 2, 9]);
/// ```
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray, DatasetError> {
    let magic = take(bytes, 0, 2)?;
    if magic != [0, 0] {
        return Err(DatasetError::BadMagic {
            offset: 0,
            found: magic[0],
            next: magic[1],
        });
    }
    let code = take(bytes, 2, 1)?[0];
    if code != UBYTE {
        return Err(DatasetError::UnsupportedType { code, offset: 2 });
    }
    let rank = take(bytes, 3, 1)?[0] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(DatasetError::UnsupportedRank { rank, offset: 3 });
    }
    let header = take(bytes, 4, 4 * rank)?;
    let dims: Vec<usize> = header
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let offset = 4 + 4 * rank;
    let len = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(DatasetError::Truncated {
        offset,
        expected: usize::MAX,
        found: bytes.len() - offset,
    })?;
    let payload = take(bytes, offset, len)?;
    let end = offset + len;
    if bytes.len() > end {
        return Err(DatasetError::TrailingBytes {
            offset: end,
            extra: bytes.len() - end,
        });
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

/// Serializes an array; ranks 1 to 4 only.
pub fn encode_idx(array: &IdxArray) -> Result<Vec<u8>, DatasetError> {
    let rank = array.dims.len();
    if rank == 0 || rank > MAX_RANK {
        return Err(DatasetError::UnsupportedRank { rank, offset: 3 });
    }
    let expected: usize = array.dims.iter().product();
    if expected != array.data.len() {
        return Err(DatasetError::CountMismatch(format!(
            "dims {:?} need {expected} bytes, got {}",
            array.dims,
            array.data.len()
        )));
    }
    let mut out = Vec::with_capacity(4 + 4 * rank + array.data.len());
    out.extend_from_slice(&[0, 0, UBYTE, rank as u8]);
    for &d in &array.dims {
        let d32 = u32::try_from(d).map_err(|_| DatasetError::DimensionTooLarge { dim: d })?;
        out.extend_from_slice(&d32.to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    Ok(out)
}

fn read_file(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    fs::write(path, bytes).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxArray, DatasetError> {
    parse_idx(&read_file(path.as_ref())?)
}

pub fn write_idx(array: &IdxArray, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let bytes = encode_idx(array)?;
    write_file(path.as_ref(), &bytes)
}

/// Lower-case hex CRC32 of a byte string.
pub fn crc32_hex(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub counts: Vec<usize>,
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub crc32: BTreeMap<String, String>,
}

/// Validated images, labels and manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetContainer {
    images: Vec<u8>,
    labels: Vec<u8>,
    manifest: Manifest,
}

impl DatasetContainer {
    /// Builds a container from raw parts, computing per-class counts.
    /// Checksums are filled in when the container is written.
    pub fn new(
        images: Vec<u8>,
        labels: Vec<u8>,
        classes: Vec<String>,
        (height, width, channels): (usize, usize, usize),
        source: Option<String>,
    ) -> Result<Self, DatasetError> {
        let mut counts = vec![0usize; classes.len()];
        for (index, &label) in labels.iter().enumerate() {
            match counts.get_mut(label as usize) {
                Some(c) => *c += 1,
                None => {
                    return Err(DatasetError::LabelOutOfRange {
                        label,
                        index,
                        classes: classes.len(),
                    })
                }
            }
        }
        let manifest = Manifest {
            classes,
            counts,
            n: labels.len(),
            height,
            width,
            channels,
            source,
            crc32: BTreeMap::new(),
        };
        let c = DatasetContainer {
            images,
            labels,
            manifest,
        };
        c.check_shape()?;
        Ok(c)
    }

    fn check_shape(&self) -> Result<(), DatasetError> {
        let m = &self.manifest;
        if m.channels != 1 && m.channels != 3 {
            return Err(DatasetError::CountMismatch(format!("channels must be 1 or 3, got {}", m.channels)));
        }
        if m.height == 0 || m.width == 0 {
            return Err(DatasetError::CountMismatch(format!("image size {}x{}", m.height, m.width)));
        }
        if self.labels.len() != m.n {
            return Err(DatasetError::CountMismatch(format!(
                "manifest n = {}, label file has {}",
                m.n,
                self.labels.len()
            )));
        }
        let per_image = m.height * m.width * m.channels;
        if self.images.len() != m.n * per_image {
            return Err(DatasetError::CountMismatch(format!(
                "{} image bytes, expected {} images of {per_image}",
                self.images.len(),
                m.n
            )));
        }
        Ok(())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.manifest.classes.len()
    }

    pub fn height(&self) -> usize {
        self.manifest.height
    }

    pub fn width(&self) -> usize {
        self.manifest.width
    }

    pub fn channels(&self) -> usize {
        self.manifest.channels
    }

    pub fn image_len(&self) -> usize {
        self.manifest.height * self.manifest.width * self.manifest.channels
    }

    /// Raw bytes of image `i`, `H×W×C` in raster order.
    pub fn image(&self, i: usize) -> &[u8] {
        let k = self.image_len();
        &self.images[i * k..(i + 1) * k]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn images(&self) -> &[u8] {
        &self.images
    }

    /// New container holding the given samples, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, DatasetError> {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        let m = &self.manifest;
        DatasetContainer::new(
            images,
            labels,
            m.classes.clone(),
            (m.height, m.width, m.channels),
            m.source.clone(),
        )
    }

    fn image_array(&self) -> IdxArray {
        let m = &self.manifest;
        let mut dims = vec![m.n, m.height, m.width];
        if m.channels != 1 {
            dims.push(m.channels);
        }
        IdxArray {
            dims,
            data: self.images.clone(),
        }
    }

    /// Writes the three container files into `dir`, creating it if needed,
    /// and records their checksums in the manifest.
    pub fn write(&mut self, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let images = encode_idx(&self.image_array())?;
        let labels = encode_idx(&IdxArray {
            dims: vec![self.labels.len()],
            data: self.labels.clone(),
        })?;
        let image_name = images_file(self.manifest.channels);
        write_file(&dir.join(image_name), &images)?;
        write_file(&dir.join(LABELS_FILE), &labels)?;
        self.manifest.crc32 = BTreeMap::from([
            (image_name.to_string(), crc32_hex(&images)),
            (LABELS_FILE.to_string(), crc32_hex(&labels)),
        ]);
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write_file(&dir.join(MANIFEST_FILE), json.as_bytes())
    }
}

fn manifest_error(path: &Path, message: impl Into<String>) -> DatasetError {
    DatasetError::Manifest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn verify_checksum(manifest: &Manifest, manifest_path: &Path, file: &str, bytes: &[u8]) -> Result<(), DatasetError> {
    let expected = manifest
        .crc32
        .get(file)
        .ok_or_else(|| manifest_error(manifest_path, format!("no crc32 entry for {file}")))?;
    let actual = crc32_hex(bytes);
    if !expected.eq_ignore_ascii_case(&actual) {
        return Err(DatasetError::Checksum {
            file: file.to_string(),
            expected: expected.clone(),
            actual,
        });
    }
    Ok(())
}

/// Reads and validates a container directory.
pub fn load_container(dir: impl AsRef<Path>) -> Result<DatasetContainer, DatasetError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_slice(&read_file(&manifest_path)?)
        .map_err(|e| manifest_error(&manifest_path, e.to_string()))?;
    if manifest.classes.is_empty() {
        return Err(manifest_error(&manifest_path, "no classes"));
    }
    if manifest.counts.len() != manifest.classes.len() {
        return Err(manifest_error(
            &manifest_path,
            format!("{} counts for {} classes", manifest.counts.len(), manifest.classes.len()),
        ));
    }
    if manifest.channels != 1 && manifest.channels != 3 {
        return Err(manifest_error(&manifest_path, format!("channels must be 1 or 3, got {}", manifest.channels)));
    }

    let image_name = images_file(manifest.channels);
    let image_path: PathBuf = dir.join(image_name);
    let image_bytes = read_file(&image_path)?;
    let label_bytes = read_file(&dir.join(LABELS_FILE))?;
    verify_checksum(&manifest, &manifest_path, image_name, &image_bytes)?;
    verify_checksum(&manifest, &manifest_path, LABELS_FILE, &label_bytes)?;
    let images = parse_idx(&image_bytes)?;
    let labels = parse_idx(&label_bytes)?;

    let mut want = vec![manifest.n, manifest.height, manifest.width];
    if manifest.channels != 1 {
        want.push(manifest.channels);
    }
    if images.dims != want {
        return Err(DatasetError::CountMismatch(format!(
            "{image_name} has dims {:?}, manifest implies {want:?}",
            images.dims
        )));
    }
    if labels.dims != [manifest.n] {
        return Err(DatasetError::CountMismatch(format!(
            "{LABELS_FILE} has dims {:?}, manifest n = {}",
            labels.dims, manifest.n
        )));
    }
    let container = DatasetContainer::new(
        images.data,
        labels.data,
        manifest.classes.clone(),
        (manifest.height, manifest.width, manifest.channels),
        manifest.source.clone(),
    )?;
    if container.manifest.counts != manifest.counts {
        return Err(DatasetError::CountMismatch(format!(
            "manifest counts {:?}, labels give {:?}",
            manifest.counts, container.manifest.counts
        )));
    }
    Ok(DatasetContainer {
        manifest,
        ..container
    })
}
