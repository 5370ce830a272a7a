//! Train/evaluate the feasibility classifier and run the closed tuning loop.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{derive_seed, RunConfig};
use super::dataset::{with_workers, Manifest, ManifestEntry};
use super::label::LABEL_VOLUME_SLACK;
use crate::error::{Error, ParseError, Result};
use crate::forest::{self, Forest};
use crate::image::GrayImage;
use crate::metrics::{self, fmt_metric, ConfusionMatrix, Curve, ScalarMetrics};
use crate::mma::MmaParams;
use crate::pso::{self, RunOutcome, Runner, TuneResult};
use crate::runner::{run_mmc, CaseConfig, Label, SolutionRecord};
use crate::vision::{self, encode, train_vocabulary, Descriptor, DescriptorCache, VisionConfig, Vocabulary};

/// Descriptors of one labeled image.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub feasible: bool,
    pub descriptors: Vec<Descriptor>,
}

fn features(img: &GrayImage, cfg: &VisionConfig, cache: Option<&DescriptorCache>) -> Result<Vec<Descriptor>> {
    let fs = match cache {
        Some(c) => c.get_or_extract(img, cfg)?,
        None => vision::extract(img, cfg)?,
    };
    Ok(fs.into_iter().map(|f| f.descriptor).collect())
}

/// Extracts descriptors for labeled entries, in the given order.
pub fn load_samples(
    entries: &[&ManifestEntry],
    dir: &Path,
    cfg: &VisionConfig,
    cache: Option<&DescriptorCache>,
) -> Result<Vec<Sample>> {
    entries
        .par_iter()
        .map(|e| {
            let feasible = match e.label {
                Label::Feasible => true,
                Label::Infeasible => false,
                Label::Unlabeled => {
                    return Err(Error::record(
                        &e.id,
                        Error::InvalidArgument("record is unlabeled".into()),
                    ))
                }
            };
            let img = GrayImage::read_pgm(&dir.join(&e.image)).map_err(|err| Error::record(&e.id, err))?;
            let descriptors = features(&img, cfg, cache).map_err(|err| Error::record(&e.id, err))?;
            Ok(Sample {
                id: e.id.clone(),
                feasible,
                descriptors,
            })
        })
        .collect()
}

/// Vocabulary plus forest: maps a structure image to a feasibility score.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityModel {
    pub vision: VisionConfig,
    pub vocabulary: Vocabulary,
    pub forest: Forest,
}

impl FeasibilityModel {
    /// Fits the vocabulary and the forest on `train` only. Images without
    /// keypoints carry no visual words and are left out of the forest fit.
    pub fn train(train: &[Sample], cfg: &RunConfig) -> Result<Self> {
        let pooled: Vec<Descriptor> = train.iter().flat_map(|s| s.descriptors.iter().copied()).collect();
        let vocabulary = train_vocabulary(&pooled, &cfg.kmeans_config())?;
        let (x, y): (Vec<Vec<f64>>, Vec<bool>) = train
            .iter()
            .filter(|s| !s.descriptors.is_empty())
            .map(|s| (encode(&s.descriptors, &vocabulary).histogram, s.feasible))
            .unzip();
        if !(y.iter().any(|&v| v) && y.iter().any(|&v| !v)) {
            return Err(Error::SingleClass);
        }
        let forest = forest::fit(&x, &y, &cfg.et_config())?;
        Ok(Self {
            vision: cfg.vision,
            vocabulary,
            forest,
        })
    }

    /// Vote fraction for feasible; 0 for an image without keypoints.
    pub fn score_descriptors(&self, d: &[Descriptor]) -> f64 {
        if d.is_empty() {
            return 0.0;
        }
        self.forest.score(&encode(d, &self.vocabulary).histogram)
    }

    pub fn score_image(&self, img: &GrayImage) -> Result<f64> {
        Ok(self.score_descriptors(&features(img, &self.vision, None)?))
    }

    pub fn predict_image(&self, img: &GrayImage) -> Result<bool> {
        Ok(self.score_image(img)? > 0.5)
    }

    pub fn to_text(&self) -> String {
        let v = &self.vision;
        format!(
            "feasibility-model v1 sigma0={:?} octaves={} scales={} contrast={:?} edge={:?}\n--- vocabulary\n{}--- forest\n{}",
            v.sigma0,
            v.octaves,
            v.scales_per_octave,
            v.detector.contrast_threshold,
            v.detector.edge_ratio,
            self.vocabulary.to_text(),
            self.forest.to_text()
        )
    }

    pub fn from_text(text: &str) -> Result<Self, ParseError> {
        const FMT: &str = "feasibility-model";
        let (header, rest) = text
            .split_once('\n')
            .ok_or_else(|| ParseError::new(FMT, 1, "missing header"))?;
        let mut it = header.split_whitespace();
        if it.next() != Some("feasibility-model") || it.next() != Some("v1") {
            return Err(ParseError::new(FMT, 1, "not a feasibility-model v1 file"));
        }
        let mut vision = VisionConfig::default();
        let mut seen = 0;
        for field in it {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| ParseError::new(FMT, 1, format!("bad field `{field}`")))?;
            let bad = || ParseError::new(FMT, 1, format!("bad value for `{k}`"));
            match k {
                "sigma0" => vision.sigma0 = v.parse().map_err(|_| bad())?,
                "octaves" => vision.octaves = v.parse().map_err(|_| bad())?,
                "scales" => vision.scales_per_octave = v.parse().map_err(|_| bad())?,
                "contrast" => vision.detector.contrast_threshold = v.parse().map_err(|_| bad())?,
                "edge" => vision.detector.edge_ratio = v.parse().map_err(|_| bad())?,
                _ => return Err(ParseError::new(FMT, 1, format!("unknown field `{k}`"))),
            }
            seen += 1;
        }
        if seen != 5 {
            return Err(ParseError::new(FMT, 1, "header needs five fields"));
        }
        let rest = rest
            .strip_prefix("--- vocabulary\n")
            .ok_or_else(|| ParseError::new(FMT, 2, "expected `--- vocabulary`"))?;
        let (vocab, forest) = rest
            .split_once("--- forest\n")
            .ok_or_else(|| ParseError::new(FMT, 0, "expected `--- forest`"))?;
        // nested parsers count lines from their own section start
        let vocabulary = Vocabulary::from_text(vocab)?;
        let forest = Forest::from_text(forest)?;
        if forest.n_attributes != vocabulary.centers.len() {
            return Err(ParseError::new(FMT, 0, "forest and vocabulary sizes disagree"));
        }
        vision.vocabulary_size = vocabulary.centers.len();
        Ok(Self {
            vision,
            vocabulary,
            forest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_text(&text)?)
    }
}

/// Classifier output on a held-out set.
#[derive(Debug, Clone)]
pub struct TestOutcome {
    pub ids: Vec<String>,
    pub truth: Vec<bool>,
    pub scores: Vec<f64>,
    pub predictions: Vec<bool>,
    pub confusion: ConfusionMatrix,
    pub metrics: ScalarMetrics,
    /// `None` when the test set holds a single class.
    pub roc: Option<Curve>,
    /// `None` when the test set has no feasible sample.
    pub pr: Option<Curve>,
    pub zero_keypoint: usize,
}

pub fn evaluate_model(model: &FeasibilityModel, test: &[Sample]) -> Result<TestOutcome> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let scores: Vec<f64> = test.iter().map(|s| model.score_descriptors(&s.descriptors)).collect();
    let predictions: Vec<bool> = scores.iter().map(|&s| s > 0.5).collect();
    let truth: Vec<bool> = test.iter().map(|s| s.feasible).collect();
    let confusion = metrics::confusion(&truth, &predictions)?;
    Ok(TestOutcome {
        ids: test.iter().map(|s| s.id.clone()).collect(),
        metrics: metrics::scalar_metrics(&confusion),
        roc: metrics::roc_curve(&truth, &scores).ok(),
        pr: metrics::pr_curve(&truth, &scores).ok(),
        zero_keypoint: test.iter().filter(|s| s.descriptors.is_empty()).count(),
        truth,
        scores,
        predictions,
        confusion,
    })
}

/// Published reference values for a built-in case; recorded in reports for
/// comparison and never asserted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceTargets {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub acc: f64,
    pub roc_auc: Option<f64>,
    pub compliance: f64,
    pub converged_at: usize,
    pub params: MmaParams,
}

pub fn reference_targets(case: &str) -> Option<ReferenceTargets> {
    match case {
        "cantilever" => Some(ReferenceTargets {
            precision: 0.87,
            recall: 0.90,
            f1: 0.88,
            acc: 0.88,
            roc_auc: Some(0.96),
            compliance: 74.02,
            converged_at: 67,
            params: MmaParams::CANTILEVER_REFERENCE,
        }),
        "lshape" => Some(ReferenceTargets {
            precision: 0.90,
            recall: 0.94,
            f1: 0.92,
            acc: 0.92,
            roc_auc: None,
            compliance: 183.76,
            converged_at: 62,
            params: MmaParams::LSHAPE_REFERENCE,
        }),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct TrainEvalReport {
    pub case: String,
    pub seed: u64,
    pub model: FeasibilityModel,
    pub train_ids: Vec<String>,
    pub outcome: TestOutcome,
    /// Descriptors pooled from the training split; the vocabulary must have
    /// been trained on exactly this many.
    pub train_descriptors: usize,
    /// Training images with at least one keypoint; the forest must have
    /// been fitted on exactly this many.
    pub train_with_keypoints: usize,
}

/// Seeded shuffle of the labeled entries into disjoint train and test sets.
pub fn split(
    manifest: &Manifest,
    train: usize,
    test: usize,
    seed: u64,
) -> Result<(Vec<&ManifestEntry>, Vec<&ManifestEntry>)> {
    let mut labeled: Vec<&ManifestEntry> = manifest.labeled().collect();
    if train == 0 || test == 0 || train + test > labeled.len() {
        return Err(Error::InvalidArgument(format!(
            "split {train}/{test} needs that many labeled records, have {}",
            labeled.len()
        )));
    }
    labeled.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "split")));
    let test_set = labeled[train..train + test].to_vec();
    labeled.truncate(train);
    Ok((labeled, test_set))
}

/// Descriptors of the seeded train and test splits.
pub fn split_samples(
    manifest: &Manifest,
    dir: &Path,
    cfg: &RunConfig,
    cache: Option<&DescriptorCache>,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let (train_entries, test_entries) = split(manifest, cfg.train, cfg.test, cfg.seed)?;
    with_workers(cfg.workers, || -> Result<_> {
        Ok((
            load_samples(&train_entries, dir, &cfg.vision, cache)?,
            load_samples(&test_entries, dir, &cfg.vision, cache)?,
        ))
    })?
}

impl TrainEvalReport {
    /// Fails when the model was not fitted on exactly `train`, which would
    /// mean a different split or leaked test data.
    pub fn new(cfg: &RunConfig, model: FeasibilityModel, train: &[Sample], outcome: TestOutcome) -> Result<Self> {
        let train_descriptors = train.iter().map(|s| s.descriptors.len()).sum();
        let train_with_keypoints = train.iter().filter(|s| !s.descriptors.is_empty()).count();
        if model.vocabulary.training_descriptors != train_descriptors
            || model.forest.training_samples != train_with_keypoints
        {
            return Err(Error::InvalidArgument(
                "model was not trained on this configuration's training split".into(),
            ));
        }
        Ok(Self {
            case: cfg.case.name.clone(),
            seed: cfg.seed,
            train_ids: train.iter().map(|s| s.id.clone()).collect(),
            train_descriptors,
            train_with_keypoints,
            model,
            outcome,
        })
    }
}

pub fn train_and_evaluate(
    manifest: &Manifest,
    dir: &Path,
    cfg: &RunConfig,
    cache: Option<&DescriptorCache>,
) -> Result<TrainEvalReport> {
    let (train, test) = split_samples(manifest, dir, cfg, cache)?;
    let model = FeasibilityModel::train(&train, cfg)?;
    let outcome = evaluate_model(&model, &test)?;
    TrainEvalReport::new(cfg, model, &train, outcome)
}

impl TrainEvalReport {
    pub fn to_text(&self) -> String {
        let o = &self.outcome;
        let m = &o.metrics;
        let c = &o.confusion;
        let mut s = String::new();
        let _ = writeln!(s, "case: {}", self.case);
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "train_samples: {}", self.train_ids.len());
        let _ = writeln!(s, "test_samples: {}", o.ids.len());
        let _ = writeln!(s, "train_descriptors: {}", self.train_descriptors);
        let _ = writeln!(s, "vocabulary_size: {}", self.model.vocabulary.centers.len());
        let _ = writeln!(
            s,
            "vocabulary_trained_on: {}",
            self.model.vocabulary.training_descriptors
        );
        let _ = writeln!(s, "forest_trees: {}", self.model.forest.trees.len());
        let _ = writeln!(s, "forest_trained_on: {}", self.model.forest.training_samples);
        let _ = writeln!(
            s,
            "train_zero_keypoint: {}",
            self.train_ids.len() - self.train_with_keypoints
        );
        let _ = writeln!(s, "test_zero_keypoint: {}", o.zero_keypoint);
        let _ = writeln!(s, "tp: {}\nfn: {}\nfp: {}\ntn: {}", c.tp, c.fn_, c.fp, c.tn);
        for (name, v) in ScalarMetrics::NAMES.iter().zip(m.values()) {
            let _ = writeln!(s, "{name}: {}", fmt_metric(v));
        }
        let _ = writeln!(s, "roc_auc: {}", fmt_metric(o.roc.as_ref().map(|r| r.auc)));
        let _ = writeln!(s, "pr_auc: {}", fmt_metric(o.pr.as_ref().map(|r| r.auc)));
        if let Some(t) = reference_targets(&self.case) {
            let _ = writeln!(s, "reference_precision: {:.2}", t.precision);
            let _ = writeln!(s, "reference_recall: {:.2}", t.recall);
            let _ = writeln!(s, "reference_f1: {:.2}", t.f1);
            let _ = writeln!(s, "reference_acc: {:.2}", t.acc);
            let _ = writeln!(
                s,
                "reference_roc_auc: {}",
                t.roc_auc.map_or("not reported".into(), |v| format!("{v:.2}"))
            );
            let _ = writeln!(s, "reference_status: recorded for comparison, not reproduced");
        }
        s
    }

    pub fn scores_csv(&self) -> String {
        let o = &self.outcome;
        let mut s = "id,feasible,score,predicted\n".to_string();
        for i in 0..o.ids.len() {
            let _ = writeln!(
                s,
                "{},{},{:?},{}",
                o.ids[i], o.truth[i] as u8, o.scores[i], o.predictions[i] as u8
            );
        }
        s
    }

    /// report.txt, scores.csv, roc.csv, pr.csv and model.txt.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("report.txt"), &self.to_text())?;
        write_file(&dir.join("scores.csv"), &self.scores_csv())?;
        if let Some(r) = &self.outcome.roc {
            write_file(&dir.join("roc.csv"), &r.to_csv("fpr", "tpr"))?;
        }
        if let Some(p) = &self.outcome.pr {
            write_file(&dir.join("pr.csv"), &p.to_csv("recall", "precision"))?;
        }
        self.model.save(&dir.join("model.txt"))
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Inner optimizer as a swarm runner. A run counts as solvable when every
/// state solve succeeded and the volume bound holds up to the label slack.
#[derive(Debug, Clone)]
pub struct MmcRunner {
    pub case: CaseConfig,
}

impl Runner for MmcRunner {
    type Artifact = SolutionRecord;

    fn run(&self, position: &[f64]) -> Result<RunOutcome<SolutionRecord>> {
        let a: [f64; 4] = position
            .try_into()
            .map_err(|_| Error::LengthMismatch(position.len(), 4))?;
        let rec = run_mmc(&self.case, &MmaParams::from_array(a))?;
        Ok(RunOutcome {
            objective: rec.compliance,
            solvable: !rec.degenerate && rec.volume_fraction <= self.case.volume_bound * LABEL_VOLUME_SLACK,
            converged: rec.converged,
            artifact: rec,
        })
    }
}

#[derive(Debug)]
pub struct TuneBundle {
    pub case: String,
    pub seed: u64,
    pub best_params: MmaParams,
    pub result: TuneResult<SolutionRecord>,
}

/// Closed loop: swarm over the MMA box with the model as feasibility gate.
pub fn tune_case(cfg: &RunConfig, model: &FeasibilityModel) -> Result<TuneBundle> {
    let runner = MmcRunner { case: cfg.case.clone() };
    let classifier = |rec: &SolutionRecord| {
        rec.image
            .as_ref()
            .is_some_and(|img| model.predict_image(img).unwrap_or(false))
    };
    let result = with_workers(cfg.workers, || {
        pso::tune(&cfg.pso_config(), &cfg.mma_box()?, &runner, &classifier)
    })??;
    let a: [f64; 4] = result.best_position.clone().try_into().expect("4 parameters");
    Ok(TuneBundle {
        case: cfg.case.name.clone(),
        seed: cfg.seed,
        best_params: MmaParams::from_array(a),
        result,
    })
}

pub fn params_text(p: &MmaParams) -> String {
    MmaParams::NAMES
        .iter()
        .zip(p.to_array())
        .map(|(n, v)| format!("{n} = {v:.4}\n"))
        .collect()
}

impl TuneBundle {
    pub fn trace_csv(&self) -> String {
        let mut s = "iteration,gbest_compliance\n".to_string();
        for (i, c) in self.result.trace.iter().enumerate() {
            let _ = writeln!(s, "{i},{c:?}");
        }
        s
    }

    pub fn archive_csv(&self) -> String {
        let mut s = format!(
            "iteration,particle,{},compliance,feasible,converged\n",
            MmaParams::NAMES.join(",")
        );
        for r in &self.result.archive {
            let pos: Vec<String> = r.position.iter().map(|v| format!("{v:?}")).collect();
            let e = r.evaluation;
            let _ = writeln!(
                s,
                "{},{},{},{:?},{},{}",
                r.iteration,
                r.particle,
                pos.join(","),
                e.objective,
                e.feasible as u8,
                e.converged as u8
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let r = &self.result;
        let mut s = String::new();
        let _ = writeln!(s, "case: {}", self.case);
        let _ = writeln!(s, "seed: {}", self.seed);
        for (n, v) in MmaParams::NAMES.iter().zip(self.best_params.to_array()) {
            let _ = writeln!(s, "best_{n}: {v:.4}");
        }
        let _ = writeln!(s, "best_compliance: {:.4}", r.best_objective);
        if let Some(rec) = &r.best_artifact {
            let _ = writeln!(s, "best_volume_fraction: {:.4}", rec.volume_fraction);
            let _ = writeln!(s, "best_inner_iterations: {}", rec.iterations);
        }
        let _ = writeln!(s, "swarm_iterations: {}", r.iterations);
        let _ = writeln!(s, "regenerations: {}", r.regenerations);
        let _ = writeln!(s, "evaluations: {}", r.archive.len());
        let _ = writeln!(
            s,
            "feasible_evaluations: {}",
            r.archive.iter().filter(|a| a.evaluation.feasible).count()
        );
        if let Some(t) = reference_targets(&self.case) {
            let p: Vec<String> = t.params.to_array().iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(s, "reference_params: {}", p.join(" "));
            let _ = writeln!(s, "reference_compliance: {:.2}", t.compliance);
            let _ = writeln!(s, "reference_converged_at: {}", t.converged_at);
            let _ = writeln!(s, "reference_status: recorded for comparison, not reproduced");
        }
        s
    }

    /// best_params.txt, trace.csv, archive.csv, report.txt, final.pgm and
    /// final.json.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("best_params.txt"), &params_text(&self.best_params))?;
        write_file(&dir.join("trace.csv"), &self.trace_csv())?;
        write_file(&dir.join("archive.csv"), &self.archive_csv())?;
        write_file(&dir.join("report.txt"), &self.to_text())?;
        if let Some(rec) = &self.result.best_artifact {
            if let Some(img) = &rec.image {
                img.write_pgm(&dir.join("final.pgm"))?;
            }
            write_file(&dir.join("final.json"), &rec.to_json())?;
        }
        Ok(())
    }
}
