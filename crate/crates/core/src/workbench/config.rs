//! Run configuration: flat `key = value` text grouped in `[section]`s.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! `to_text` writes every key, and parsing that text gives back the same
//! configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, ParseError, Result};
use crate::forest::{EtConfig, SplitScore};
use crate::geometry::{DesignDomain, Rect};
use crate::mma::MmaParams;
use crate::pso::{PsoConfig, SearchBox};
use crate::runner::{CaseConfig, FixedSegment, LoadSpec};
use crate::vision::{KMeansConfig, VisionConfig};

const FMT: &str = "config";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    Cantilever,
    Lshape,
    /// Geometry, supports and loads given explicitly in `[case]`.
    Custom,
}

impl CaseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseKind::Cantilever => "cantilever",
            CaseKind::Lshape => "lshape",
            CaseKind::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cantilever" => Some(CaseKind::Cantilever),
            "lshape" => Some(CaseKind::Lshape),
            "custom" => Some(CaseKind::Custom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Concurrent runs during dataset generation; 0 uses every core.
    pub workers: usize,
    pub label_overrides: Option<PathBuf>,
    pub case_kind: CaseKind,
    pub case: CaseConfig,
    pub samples: usize,
    pub train: usize,
    pub test: usize,
    /// MMA parameter box, in `MmaParams::NAMES` order.
    pub mma_lower: [f64; 4],
    pub mma_upper: [f64; 4],
    pub forest: EtConfig,
    pub vision: VisionConfig,
    pub kmeans_iterations: usize,
    pub kmeans_tolerance: f64,
    pub pso: PsoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_case(CaseKind::Cantilever, CaseConfig::cantilever_default())
    }
}

/// Stream seed: the first 8 bytes of SHA-256 over the master seed and the
/// stream name.
pub fn derive_seed(master: u64, stream: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stream.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

impl RunConfig {
    pub fn for_case(case_kind: CaseKind, case: CaseConfig) -> Self {
        let km = KMeansConfig::default();
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            workers: 0,
            label_overrides: None,
            case_kind,
            case,
            samples: 150,
            train: 50,
            test: 100,
            mma_lower: MmaParams::TUNING_LOWER,
            mma_upper: MmaParams::TUNING_UPPER,
            forest: EtConfig::default(),
            vision: VisionConfig::default(),
            kmeans_iterations: km.max_iterations,
            kmeans_tolerance: km.tolerance,
            pso: PsoConfig::default(),
        }
    }

    pub fn mma_box(&self) -> Result<SearchBox> {
        SearchBox::new(self.mma_lower.to_vec(), self.mma_upper.to_vec())
    }

    pub fn et_config(&self) -> EtConfig {
        EtConfig {
            seed: derive_seed(self.seed, "forest"),
            ..self.forest.clone()
        }
    }

    pub fn kmeans_config(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.vision.vocabulary_size,
            max_iterations: self.kmeans_iterations,
            tolerance: self.kmeans_tolerance,
            seed: derive_seed(self.seed, "vocabulary"),
        }
    }

    pub fn pso_config(&self) -> PsoConfig {
        PsoConfig {
            seed: derive_seed(self.seed, "pso"),
            ..self.pso.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.case.validate()?;
        self.mma_box()?;
        MmaParams::from_array(self.mma_lower).validate()?;
        MmaParams::from_array(self.mma_upper).validate()?;
        if self.samples == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
        }
        if self.vision.vocabulary_size == 0 || self.kmeans_iterations == 0 {
            return Err(Error::InvalidArgument(
                "vocabulary size and k-means iterations must be positive".into(),
            ));
        }
        self.pso.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let sections = split_sections(text)?;
        let mut cfg = match sections.get("case") {
            Some(entries) => {
                let kind = match entries.get("kind") {
                    Some((line, v)) => {
                        CaseKind::parse(v).ok_or_else(|| bad(*line, format!("unknown case kind `{v}`")))?
                    }
                    None => CaseKind::Cantilever,
                };
                Self::for_case(kind, preset(kind, entries)?)
            }
            None => Self::default(),
        };
        for (section, entries) in &sections {
            for (key, (line, value)) in entries {
                cfg.set(section, key, value).map_err(|e| match e {
                    SetError::Unknown => Error::UnknownConfigKey {
                        section: section.clone(),
                        key: key.clone(),
                    },
                    SetError::Value(m) => bad(*line, format!("[{section}] {key}: {m}")).into(),
                })?;
            }
        }
        if cfg.case_kind == CaseKind::Custom {
            let case = sections.get("case");
            for required in ["width", "height", "supports", "loads"] {
                if case.is_none_or(|c| !c.contains_key(required)) {
                    return Err(Error::InvalidArgument(format!(
                        "custom case needs `{required}` in [case]"
                    )));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> std::result::Result<(), SetError> {
        match section {
            "run" => match key {
                "seed" => self.seed = num(v)?,
                "output_dir" => self.output_dir = PathBuf::from(v),
                "workers" => self.workers = num(v)?,
                "label_overrides" => self.label_overrides = (v != "none").then(|| PathBuf::from(v)),
                _ => return Err(SetError::Unknown),
            },
            "case" => self.set_case(key, v)?,
            "dataset" => match key {
                "samples" => self.samples = num(v)?,
                "train" => self.train = num(v)?,
                "test" => self.test = num(v)?,
                _ => return Err(SetError::Unknown),
            },
            "mma" => {
                let i = MmaParams::NAMES
                    .iter()
                    .position(|n| *n == key)
                    .ok_or(SetError::Unknown)?;
                let [lo, hi] = floats::<2>(v)?;
                self.mma_lower[i] = lo;
                self.mma_upper[i] = hi;
            }
            "forest" => match key {
                "trees" => self.forest.trees = num(v)?,
                "k" => self.forest.k = if v == "auto" { None } else { Some(num(v)?) },
                "n_min" => self.forest.n_min = num(v)?,
                "split_score" => {
                    self.forest.split_score = SplitScore::parse(v)
                        .ok_or_else(|| SetError::Value(format!("expected gini or info_gain, got `{v}`")))?
                }
                _ => return Err(SetError::Unknown),
            },
            "vision" => match key {
                "sigma0" => self.vision.sigma0 = num(v)?,
                "octaves" => self.vision.octaves = num(v)?,
                "scales" => self.vision.scales_per_octave = num(v)?,
                "contrast_threshold" => self.vision.detector.contrast_threshold = num(v)?,
                "edge_ratio" => self.vision.detector.edge_ratio = num(v)?,
                "vocabulary_size" => self.vision.vocabulary_size = num(v)?,
                "kmeans_iterations" => self.kmeans_iterations = num(v)?,
                "kmeans_tolerance" => self.kmeans_tolerance = num(v)?,
                _ => return Err(SetError::Unknown),
            },
            "pso" => match key {
                "particles" => self.pso.particles = num(v)?,
                "max_iterations" => self.pso.max_iterations = num(v)?,
                "stagnation_window" => self.pso.stagnation_window = num(v)?,
                "alpha0" => self.pso.alpha0 = num(v)?,
                "alpha_decay" => self.pso.alpha_decay = num(v)?,
                "beta1" => self.pso.beta1 = num(v)?,
                "beta2" => self.pso.beta2 = num(v)?,
                "velocity_clamp" => self.pso.velocity_clamp = num(v)?,
                "max_regenerations" => self.pso.max_regenerations = num(v)?,
                _ => return Err(SetError::Unknown),
            },
            _ => return Err(SetError::Unknown),
        }
        Ok(())
    }

    fn set_case(&mut self, key: &str, v: &str) -> std::result::Result<(), SetError> {
        let c = &mut self.case;
        match key {
            // consumed when the preset was built
            "kind" | "nx" | "ny" => {}
            "width" | "height" | "cutout" => {
                let (mut w, mut h, mut cut) = (c.domain.width, c.domain.height, c.domain.cutout);
                match key {
                    "width" => w = num(v)?,
                    "height" => h = num(v)?,
                    _ => {
                        cut = if v == "none" {
                            None
                        } else {
                            let [x0, y0, x1, y1] = floats::<4>(v)?;
                            Some(Rect { x0, y0, x1, y1 })
                        }
                    }
                }
                c.domain = DesignDomain::with_cutout(w, h, cut).map_err(|e| SetError::Value(e.to_string()))?;
            }
            "supports" => {
                c.supports = list(v, |[ax, ay, bx, by]| FixedSegment {
                    from: (ax, ay),
                    to: (bx, by),
                })?
            }
            "loads" => {
                c.loads = list(v, |[px, py, fx, fy]| LoadSpec {
                    point: (px, py),
                    force: (fx, fy),
                })?
            }
            "volume_bound" => c.volume_bound = num(v)?,
            "youngs_modulus" => c.material.youngs_modulus = num(v)?,
            "poisson_ratio" => c.material.poisson_ratio = num(v)?,
            "penalty" => c.material.penalty = num(v)?,
            "exponent" => c.exponent = num(v)?,
            "layout" => {
                let mut it = v.split_whitespace();
                let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                    return Err(SetError::Value("expected two counts".into()));
                };
                c.layout = (num(a)?, num(b)?);
            }
            "layout_thickness" => c.layout_thickness = num(v)?,
            "heaviside_eps_factor" => c.heaviside_eps_factor = num(v)?,
            "heaviside_alpha" => c.heaviside_alpha = num(v)?,
            "max_iterations" => c.max_iterations = num(v)?,
            "tolerance" => c.tolerance = num(v)?,
            "stall_window" => c.stall_window = num(v)?,
            "plateau_tolerance" => c.plateau_tolerance = num(v)?,
            "plateau_window" => c.plateau_window = num(v)?,
            "render_scale" => c.render_scale = num(v)?,
            _ => return Err(SetError::Unknown),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let c = &self.case;
        let _ = writeln!(o, "[run]");
        let _ = writeln!(o, "seed = {}", self.seed);
        let _ = writeln!(o, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(o, "workers = {}", self.workers);
        let overrides = self
            .label_overrides
            .as_ref()
            .map_or("none".to_string(), |p| p.display().to_string());
        let _ = writeln!(o, "label_overrides = {overrides}");

        let _ = writeln!(o, "\n[case]");
        let _ = writeln!(o, "kind = {}", self.case_kind.as_str());
        let _ = writeln!(o, "nx = {}", c.nx);
        let _ = writeln!(o, "ny = {}", c.ny);
        let _ = writeln!(o, "width = {:?}", c.domain.width);
        let _ = writeln!(o, "height = {:?}", c.domain.height);
        let cutout = c.domain.cutout.map_or("none".to_string(), |r| {
            format!("{:?} {:?} {:?} {:?}", r.x0, r.y0, r.x1, r.y1)
        });
        let _ = writeln!(o, "cutout = {cutout}");
        let supports: Vec<String> = c
            .supports
            .iter()
            .map(|s| format!("{:?} {:?} {:?} {:?}", s.from.0, s.from.1, s.to.0, s.to.1))
            .collect();
        let _ = writeln!(o, "supports = {}", supports.join("; "));
        let loads: Vec<String> = c
            .loads
            .iter()
            .map(|l| format!("{:?} {:?} {:?} {:?}", l.point.0, l.point.1, l.force.0, l.force.1))
            .collect();
        let _ = writeln!(o, "loads = {}", loads.join("; "));
        let _ = writeln!(o, "volume_bound = {:?}", c.volume_bound);
        let _ = writeln!(o, "youngs_modulus = {:?}", c.material.youngs_modulus);
        let _ = writeln!(o, "poisson_ratio = {:?}", c.material.poisson_ratio);
        let _ = writeln!(o, "penalty = {}", c.material.penalty);
        let _ = writeln!(o, "exponent = {}", c.exponent);
        let _ = writeln!(o, "layout = {} {}", c.layout.0, c.layout.1);
        let _ = writeln!(o, "layout_thickness = {:?}", c.layout_thickness);
        let _ = writeln!(o, "heaviside_eps_factor = {:?}", c.heaviside_eps_factor);
        let _ = writeln!(o, "heaviside_alpha = {:?}", c.heaviside_alpha);
        let _ = writeln!(o, "max_iterations = {}", c.max_iterations);
        let _ = writeln!(o, "tolerance = {:?}", c.tolerance);
        let _ = writeln!(o, "stall_window = {}", c.stall_window);
        let _ = writeln!(o, "plateau_tolerance = {:?}", c.plateau_tolerance);
        let _ = writeln!(o, "plateau_window = {}", c.plateau_window);
        let _ = writeln!(o, "render_scale = {}", c.render_scale);

        let _ = writeln!(o, "\n[dataset]");
        let _ = writeln!(o, "samples = {}", self.samples);
        let _ = writeln!(o, "train = {}", self.train);
        let _ = writeln!(o, "test = {}", self.test);

        let _ = writeln!(o, "\n[mma]");
        for (i, name) in MmaParams::NAMES.iter().enumerate() {
            let _ = writeln!(o, "{name} = {:?} {:?}", self.mma_lower[i], self.mma_upper[i]);
        }

        let f = &self.forest;
        let _ = writeln!(o, "\n[forest]");
        let _ = writeln!(o, "trees = {}", f.trees);
        let _ = writeln!(o, "k = {}", f.k.map_or("auto".to_string(), |k| k.to_string()));
        let _ = writeln!(o, "n_min = {}", f.n_min);
        let _ = writeln!(o, "split_score = {}", f.split_score.as_str());

        let v = &self.vision;
        let _ = writeln!(o, "\n[vision]");
        let _ = writeln!(o, "sigma0 = {:?}", v.sigma0);
        let _ = writeln!(o, "octaves = {}", v.octaves);
        let _ = writeln!(o, "scales = {}", v.scales_per_octave);
        let _ = writeln!(o, "contrast_threshold = {:?}", v.detector.contrast_threshold);
        let _ = writeln!(o, "edge_ratio = {:?}", v.detector.edge_ratio);
        let _ = writeln!(o, "vocabulary_size = {}", v.vocabulary_size);
        let _ = writeln!(o, "kmeans_iterations = {}", self.kmeans_iterations);
        let _ = writeln!(o, "kmeans_tolerance = {:?}", self.kmeans_tolerance);

        let p = &self.pso;
        let _ = writeln!(o, "\n[pso]");
        let _ = writeln!(o, "particles = {}", p.particles);
        let _ = writeln!(o, "max_iterations = {}", p.max_iterations);
        let _ = writeln!(o, "stagnation_window = {}", p.stagnation_window);
        let _ = writeln!(o, "alpha0 = {:?}", p.alpha0);
        let _ = writeln!(o, "alpha_decay = {:?}", p.alpha_decay);
        let _ = writeln!(o, "beta1 = {:?}", p.beta1);
        let _ = writeln!(o, "beta2 = {:?}", p.beta2);
        let _ = writeln!(o, "velocity_clamp = {:?}", p.velocity_clamp);
        let _ = writeln!(o, "max_regenerations = {}", p.max_regenerations);
        o
    }
}

type Entries = BTreeMap<String, (usize, String)>;

fn bad(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::new(FMT, line, message)
}

fn split_sections(text: &str) -> Result<BTreeMap<String, Entries>> {
    let mut out: BTreeMap<String, Entries> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| bad(line_no, "unterminated section header"))?
                .trim();
            if !["run", "case", "dataset", "mma", "forest", "vision", "pso"].contains(&name) {
                return Err(bad(line_no, format!("unknown section [{name}]")).into());
            }
            out.entry(name.to_string()).or_default();
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(line_no, "expected `key = value`"))?;
        let section = current
            .as_ref()
            .ok_or_else(|| bad(line_no, "key outside of any section"))?;
        let entries = out.get_mut(section).expect("section registered");
        let key = key.trim().to_string();
        if entries
            .insert(key.clone(), (line_no, value.trim().to_string()))
            .is_some()
        {
            return Err(bad(line_no, format!("duplicate key `{key}`")).into());
        }
    }
    Ok(out)
}

fn preset(kind: CaseKind, entries: &Entries) -> Result<CaseConfig> {
    let count = |key: &str| -> Result<Option<usize>> {
        entries
            .get(key)
            .map(|(line, v)| {
                v.parse()
                    .map_err(|_| bad(*line, format!("[case] {key}: expected a count, got `{v}`")).into())
            })
            .transpose()
    };
    let (nx, ny) = (count("nx")?, count("ny")?);
    Ok(match kind {
        CaseKind::Lshape => {
            let mut c = CaseConfig::lshape(nx.or(ny).unwrap_or(80));
            c.ny = ny.or(nx).unwrap_or(80);
            c
        }
        CaseKind::Cantilever | CaseKind::Custom => {
            let mut c = CaseConfig::cantilever(nx.unwrap_or(80), ny.unwrap_or(40));
            if kind == CaseKind::Custom {
                c.name = "custom".into();
            }
            c
        }
    })
}

enum SetError {
    Unknown,
    Value(String),
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, SetError> {
    v.parse().map_err(|_| SetError::Value(format!("cannot parse `{v}`")))
}

fn floats<const N: usize>(v: &str) -> std::result::Result<[f64; N], SetError> {
    let vals: Vec<f64> = v.split_whitespace().map(num).collect::<std::result::Result<_, _>>()?;
    vals.try_into()
        .map_err(|_| SetError::Value(format!("expected {N} numbers, got `{v}`")))
}

fn list<T>(v: &str, f: impl Fn([f64; 4]) -> T) -> std::result::Result<Vec<T>, SetError> {
    v.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|s| floats::<4>(s).map(&f))
        .collect()
}
