//! Structure bitmap to bag-of-visual-words vector: Gaussian scale space,
//! DoG keypoints, 128-dim gradient descriptors, k-means vocabulary.

pub mod features;
pub mod scale;
pub mod vocab;

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub use features::{describe, detect_keypoints, Descriptor, DetectorConfig, Feature, Keypoint, DESCRIPTOR_LEN};
pub use scale::{blur, scale_space, Plane, Pyramid};
pub use vocab::{encode, train_vocabulary, Bovw, KMeansConfig, Vocabulary};

use crate::error::{Error, ParseError, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisionConfig {
    pub sigma0: f64,
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub detector: DetectorConfig,
    pub vocabulary_size: usize,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self {
            sigma0: 1.6,
            octaves: 3,
            scales_per_octave: 3,
            detector: DetectorConfig::default(),
            vocabulary_size: 64,
        }
    }
}

impl VisionConfig {
    fn fingerprint(&self) -> String {
        format!(
            "{:?} {} {} {:?} {:?}",
            self.sigma0,
            self.octaves,
            self.scales_per_octave,
            self.detector.contrast_threshold,
            self.detector.edge_ratio
        )
    }
}

/// Keypoints and descriptors of one image.
pub fn extract(img: &GrayImage, cfg: &VisionConfig) -> Result<Vec<Feature>> {
    let plane = Plane::from_image(img);
    let pyr = scale_space(&plane, cfg.sigma0, cfg.octaves, cfg.scales_per_octave)?;
    let kps = detect_keypoints(&pyr, &cfg.detector);
    Ok(features::describe_all(&pyr, &kps))
}

const MAGIC: &[u8; 8] = b"MMCDESC1";
const ENTRY_BYTES: usize = 5 * 8 + 2 * 4 + DESCRIPTOR_LEN * 8;

/// Binary feature list: magic, little-endian u32 count, then per feature
/// x, y, sigma, orientation, response (f64), octave, level (u32) and the
/// 128 descriptor values (f64).
pub fn features_to_bytes(fs: &[Feature]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + fs.len() * ENTRY_BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(fs.len() as u32).to_le_bytes());
    for f in fs {
        let k = &f.keypoint;
        for v in [k.x, k.y, k.sigma, k.orientation, k.response] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(k.octave as u32).to_le_bytes());
        out.extend_from_slice(&(k.level as u32).to_le_bytes());
        for v in &f.descriptor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn features_from_bytes(bytes: &[u8]) -> Result<Vec<Feature>, ParseError> {
    const FMT: &str = "descriptor-cache";
    let err = |m: &str| ParseError::new(FMT, 0, m);
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(err("bad magic"));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if count.checked_mul(ENTRY_BYTES) != Some(body.len()) {
        return Err(err("length does not match count"));
    }
    let f64_at = |c: &[u8], i: usize| f64::from_le_bytes(c[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
    let mut out = Vec::with_capacity(count);
    for chunk in body.chunks_exact(ENTRY_BYTES) {
        let head: Vec<f64> = (0..5).map(|i| f64_at(chunk, i)).collect();
        let octave = u32::from_le_bytes(chunk[40..44].try_into().expect("4 bytes")) as usize;
        let level = u32::from_le_bytes(chunk[44..48].try_into().expect("4 bytes")) as usize;
        let mut descriptor = [0.0; DESCRIPTOR_LEN];
        for (i, d) in descriptor.iter_mut().enumerate() {
            *d = f64::from_le_bytes(chunk[48 + i * 8..56 + i * 8].try_into().expect("8 bytes"));
        }
        if head.iter().chain(descriptor.iter()).any(|v| !v.is_finite()) {
            return Err(err("non-finite value"));
        }
        out.push(Feature {
            keypoint: Keypoint {
                x: head[0],
                y: head[1],
                sigma: head[2],
                orientation: head[3],
                response: head[4],
                octave,
                level,
            },
            descriptor,
        });
    }
    Ok(out)
}

/// On-disk feature cache keyed by a hash of the image and the vision config.
#[derive(Debug, Clone)]
pub struct DescriptorCache {
    dir: PathBuf,
}

impl DescriptorCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn key(img: &GrayImage, cfg: &VisionConfig) -> String {
        let mut h = Sha256::new();
        h.update(img.to_pgm());
        h.update(cfg.fingerprint().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.desc"))
    }

    pub fn get_or_extract(&self, img: &GrayImage, cfg: &VisionConfig) -> Result<Vec<Feature>> {
        let path = self.path(&Self::key(img, cfg));
        if let Ok(bytes) = std::fs::read(&path) {
            match features_from_bytes(&bytes) {
                Ok(fs) => return Ok(fs),
                Err(e) => log::warn!("ignoring corrupt cache entry {}: {e}", path.display()),
            }
        }
        let fs = extract(img, cfg)?;
        write_atomic(&path, &features_to_bytes(&fs))?;
        Ok(fs)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
