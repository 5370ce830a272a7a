//! Replays the checked-in fuzz corpus through the parsers with the same
//! round-trip checks the fuzz targets make.

use std::path::PathBuf;

use mmctune::forest::Forest;
use mmctune::geometry::DesignVector;
use mmctune::image::GrayImage;
use mmctune::runner::SolutionRecord;
use mmctune::vision::{features_from_bytes, features_to_bytes, Vocabulary};
use mmctune::workbench::{FeasibilityModel, LabelOverrides, Manifest, RunConfig};

/// Parses one input; on success, checks the serialized form re-parses to
/// the same thing.
fn replay(target: &str, data: &[u8]) -> bool {
    let text = std::str::from_utf8(data);
    macro_rules! text_round_trip {
        ($parse:expr, $print:expr) => {{
            let Ok(t) = text else { return false };
            match $parse(t) {
                Ok(v) => {
                    let printed = $print(&v);
                    assert_eq!($print(&$parse(&printed).unwrap()), printed);
                    true
                }
                Err(_) => false,
            }
        }};
    }
    match target {
        "pgm" => match GrayImage::from_pgm(data) {
            Ok(img) => {
                assert_eq!(GrayImage::from_pgm(&img.to_pgm()).unwrap(), img);
                true
            }
            Err(_) => false,
        },
        "descriptor_cache" => match features_from_bytes(data) {
            Ok(fs) => {
                assert_eq!(features_to_bytes(&fs), data);
                true
            }
            Err(_) => false,
        },
        "design_text" => text_round_trip!(DesignVector::from_text, DesignVector::to_text),
        "record_json" => text_round_trip!(SolutionRecord::from_json, SolutionRecord::to_json),
        "forest_text" => text_round_trip!(Forest::from_text, Forest::to_text),
        "vocabulary_text" => text_round_trip!(Vocabulary::from_text, Vocabulary::to_text),
        "run_config" => text_round_trip!(RunConfig::parse, RunConfig::to_text),
        "manifest" => text_round_trip!(Manifest::from_text, Manifest::to_text),
        "model_text" => text_round_trip!(FeasibilityModel::from_text, FeasibilityModel::to_text),
        "label_overrides" => text.is_ok_and(|t| LabelOverrides::parse(t).is_ok()),
        other => panic!("no replay rule for corpus directory {other}"),
    }
}

const ACCEPTED: &[(&str, &str)] = &[
    ("pgm", "small"),
    ("pgm", "comment"),
    ("design_text", "run"),
    ("design_text", "one"),
    ("record_json", "small"),
    ("forest_text", "desk"),
    ("vocabulary_text", "desk"),
    ("descriptor_cache", "smallest"),
    ("descriptor_cache", "empty"),
    ("run_config", "full"),
    ("run_config", "small"),
    ("run_config", "custom"),
    ("manifest", "three"),
    ("model_text", "desk"),
    ("label_overrides", "mixed"),
];

#[test]
fn corpus_seeds_parse_as_expected() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    let mut seen = 0;
    for dir in std::fs::read_dir(&root).unwrap() {
        let dir = dir.unwrap().path();
        let target = dir.file_name().unwrap().to_str().unwrap().to_owned();
        for file in std::fs::read_dir(&dir).unwrap() {
            let path = file.unwrap().path();
            let name = path.file_name().unwrap().to_str().unwrap().to_owned();
            let accepted = replay(&target, &std::fs::read(&path).unwrap());
            let expected = ACCEPTED.contains(&(target.as_str(), name.as_str()));
            assert_eq!(accepted, expected, "{target}/{name}");
            seen += 1;
        }
    }
    assert!(seen >= 30, "only {seen} corpus files found");
}
