//! Seeded sample generation and the JSON-lines dataset manifest.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, RunConfig};
use super::label::{oracle_label, LabelOverrides};
use crate::error::{Error, ParseError, Result};
use crate::image::GrayImage;
use crate::mma::MmaParams;
use crate::runner::{run_mmc, CaseConfig, Label, SolutionRecord};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Oracle,
    File,
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Record and image paths, relative to the manifest's directory.
    pub record: String,
    pub image: String,
    pub mma_params: MmaParams,
    #[serde(with = "crate::serde_float")]
    pub compliance: f64,
    #[serde(with = "crate::serde_float")]
    pub volume_fraction: f64,
    pub converged: bool,
    pub label_source: LabelSource,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self, ParseError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(line).map_err(|e| ParseError::new("manifest", i + 1, e.to_string()))?;
            entries.push(e);
        }
        Ok(Self { entries })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }

    /// Reads `dir/manifest.jsonl` and checks that every referenced file exists.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m = Self::from_text(&text)?;
        for e in &m.entries {
            for rel in [&e.record, &e.image] {
                if !dir.join(rel).is_file() {
                    return Err(Error::record(
                        &e.id,
                        Error::io(dir.join(rel), std::io::ErrorKind::NotFound.into()),
                    ));
                }
            }
        }
        Ok(m)
    }

    pub fn labeled(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.label != Label::Unlabeled)
    }
}

/// `n` parameter points drawn uniformly from the configured box.
pub fn draw_params(cfg: &RunConfig, n: usize, seed: u64) -> Vec<MmaParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "dataset"));
    (0..n)
        .map(|_| {
            let mut a = [0.0; 4];
            for (i, v) in a.iter_mut().enumerate() {
                *v = cfg.mma_lower[i] + rng.gen::<f64>() * (cfg.mma_upper[i] - cfg.mma_lower[i]);
            }
            MmaParams::from_array(a)
        })
        .collect()
}

fn ensure_writable(dir: &Path) -> Result<()> {
    for sub in ["records", "images"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let probe = dir.join(".write-probe");
    std::fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    std::fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

pub(crate) fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs `n` seeded samples into `dir` and writes the (unlabeled) manifest.
pub fn generate_dataset(cfg: &RunConfig, n: usize, seed: u64, dir: &Path) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
    }
    ensure_writable(dir)?;
    let params = draw_params(cfg, n, seed);
    let case = &cfg.case;
    let results: Vec<Result<ManifestEntry>> = with_workers(cfg.workers, || {
        params
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let id = format!("{}-{i:04}", case.name);
                generate_one(case, p, &id, dir).map_err(|e| Error::record(&id, e))
            })
            .collect()
    })?;
    let manifest = Manifest {
        entries: results.into_iter().collect::<Result<_>>()?,
    };
    manifest.write(dir)?;
    Ok(manifest)
}

fn generate_one(case: &CaseConfig, params: &MmaParams, id: &str, dir: &Path) -> Result<ManifestEntry> {
    let mut rec = run_mmc(case, params)?;
    rec.id = id.to_string();
    let image = format!("images/{id}.pgm");
    let record = format!("records/{id}.json");
    rec.image_path = Some(image.clone());
    if let Some(img) = &rec.image {
        img.write_pgm(&dir.join(&image))?;
    }
    let path = dir.join(&record);
    std::fs::write(&path, rec.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(ManifestEntry {
        id: id.to_string(),
        record,
        image,
        mma_params: rec.mma_params,
        compliance: rec.compliance,
        volume_fraction: rec.volume_fraction,
        converged: rec.converged,
        label_source: LabelSource::Unlabeled,
        label: Label::Unlabeled,
    })
}

/// Loads a stored record together with its image.
pub fn load_record(dir: &Path, entry: &ManifestEntry) -> Result<SolutionRecord> {
    let path = dir.join(&entry.record);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut rec = SolutionRecord::from_json(&text)?;
    rec.image = Some(GrayImage::read_pgm(&dir.join(&entry.image))?);
    Ok(rec)
}

/// Labels every entry: an override wins, otherwise the oracle decides.
pub fn label_dataset(
    manifest: &Manifest,
    dir: &Path,
    case: &CaseConfig,
    overrides: &LabelOverrides,
) -> Result<Manifest> {
    let entries = manifest
        .entries
        .par_iter()
        .map(|e| {
            let mut e = e.clone();
            if let Some(l) = overrides.get(&e.id) {
                e.label = l;
                e.label_source = if l == Label::Unlabeled {
                    LabelSource::Unlabeled
                } else {
                    LabelSource::File
                };
            } else {
                let rec = load_record(dir, &e).map_err(|err| Error::record(&e.id, err))?;
                e.label = oracle_label(&rec, case);
                e.label_source = LabelSource::Oracle;
            }
            Ok(e)
        })
        .collect::<Result<_>>()?;
    Ok(Manifest { entries })
}
