//! Rule-based feasibility labels: a feasible structure carries the load to
//! the supports through solid material, converged, and respects the volume
//! bound up to a small slack.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use crate::error::{Error, ParseError, Result};
use crate::image::GrayImage;
use crate::runner::{render, CaseConfig, Label, SolutionRecord};

/// Volume fractions up to this multiple of the bound still count as feasible.
pub const LABEL_VOLUME_SLACK: f64 = 1.05;

fn pixel_center(cfg: &CaseConfig, img: &GrayImage, c: usize, r: usize) -> (f64, f64) {
    let px = cfg.domain.width / img.width() as f64;
    let py = cfg.domain.height / img.height() as f64;
    ((c as f64 + 0.5) * px, cfg.domain.height - (r as f64 + 0.5) * py)
}

/// Pixels whose centers lie within one element edge of a load point.
pub fn load_pixels(img: &GrayImage, cfg: &CaseConfig) -> Vec<(usize, usize)> {
    let (hx, hy) = cfg.element_size();
    let reach = hx.max(hy);
    let mut out = Vec::new();
    for r in 0..img.height() {
        for c in 0..img.width() {
            let (x, y) = pixel_center(cfg, img, c, r);
            if cfg.loads.iter().any(|l| (x - l.point.0).hypot(y - l.point.1) <= reach) {
                out.push((c, r));
            }
        }
    }
    out
}

/// Pixels whose centers lie within one element edge of a support segment.
pub fn support_pixels(img: &GrayImage, cfg: &CaseConfig) -> Vec<(usize, usize)> {
    let (hx, hy) = cfg.element_size();
    let reach = hx.max(hy);
    let mut out = Vec::new();
    for r in 0..img.height() {
        for c in 0..img.width() {
            let p = pixel_center(cfg, img, c, r);
            if cfg.supports.iter().any(|s| s.contains(p, reach)) {
                out.push((c, r));
            }
        }
    }
    out
}

/// True when there is at least one solid load pixel and every solid load
/// pixel reaches a solid support pixel through 4-connected solid pixels.
pub fn load_path_connected(img: &GrayImage, cfg: &CaseConfig) -> bool {
    let solid = |c: usize, r: usize| img.get(c, r) >= 128;
    let (w, h) = (img.width(), img.height());
    let mut reached = vec![false; w * h];
    let mut queue = VecDeque::new();
    for (c, r) in support_pixels(img, cfg) {
        if solid(c, r) {
            reached[r * w + c] = true;
            queue.push_back((c, r));
        }
    }
    while let Some((c, r)) = queue.pop_front() {
        let mut visit = |nc: usize, nr: usize| {
            if solid(nc, nr) && !reached[nr * w + nc] {
                reached[nr * w + nc] = true;
                queue.push_back((nc, nr));
            }
        };
        if c > 0 {
            visit(c - 1, r);
        }
        if c + 1 < w {
            visit(c + 1, r);
        }
        if r > 0 {
            visit(c, r - 1);
        }
        if r + 1 < h {
            visit(c, r + 1);
        }
    }
    let loaded: Vec<_> = load_pixels(img, cfg)
        .into_iter()
        .filter(|&(c, r)| solid(c, r))
        .collect();
    !loaded.is_empty() && loaded.iter().all(|&(c, r)| reached[r * w + c])
}

/// Label from the record's image (rendered from its design if absent).
pub fn oracle_label(record: &SolutionRecord, cfg: &CaseConfig) -> Label {
    if !record.converged || record.degenerate || !(record.volume_fraction <= cfg.volume_bound * LABEL_VOLUME_SLACK) {
        return Label::Infeasible;
    }
    let rendered;
    let img = match &record.image {
        Some(img) => img,
        None => {
            rendered = render(&record.design, cfg);
            &rendered
        }
    };
    if load_path_connected(img, cfg) {
        Label::Feasible
    } else {
        Label::Infeasible
    }
}

/// Manual labels keyed by record id, one `id label` pair per line; `#`
/// starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelOverrides(pub BTreeMap<String, Label>);

impl LabelOverrides {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        const FMT: &str = "label-overrides";
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(id), Some(label), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(ParseError::new(FMT, i + 1, "expected `<id> <label>`"));
            };
            let label =
                Label::parse(label).ok_or_else(|| ParseError::new(FMT, i + 1, format!("unknown label `{label}`")))?;
            map.insert(id.to_string(), label);
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text)?)
    }

    pub fn get(&self, id: &str) -> Option<Label> {
        self.0.get(id).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 10 x 5 elements rendered at 2 px per edge: a 20 x 10 image.
    fn small_case() -> CaseConfig {
        let mut cfg = CaseConfig::cantilever(10, 5);
        cfg.render_scale = 2;
        cfg
    }

    fn bitmap(rows: &[&str]) -> GrayImage {
        GrayImage::from_fn(rows[0].len(), rows.len(), |c, r| {
            if rows[r].as_bytes()[c] == b'#' {
                255
            } else {
                0
            }
        })
    }

    #[test]
    fn all_white_connects_and_all_black_does_not() {
        let cfg = small_case();
        assert!(load_path_connected(&GrayImage::from_fn(20, 10, |_, _| 255), &cfg));
        assert!(!load_path_connected(&GrayImage::new(20, 10), &cfg));
    }

    #[test]
    fn two_islands_are_not_connected() {
        let cfg = small_case();
        // left island touches the clamped edge, right island holds the load
        let split = [
            "........................",
            "######.......#######",
            "######.......#######",
            "######.......#######",
            "######.......#######",
            "######.......#######",
            "######.......#######",
            "######.......#######",
            "######.......#######",
            "....................",
        ];
        let rows: Vec<&str> = split.iter().map(|s| &s[..20]).collect();
        assert!(!load_path_connected(&bitmap(&rows), &cfg));
        let bridged: Vec<String> = rows
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if i == 4 {
                    "####################".to_string()
                } else {
                    s.to_string()
                }
            })
            .collect();
        let refs: Vec<&str> = bridged.iter().map(|s| s.as_str()).collect();
        assert!(load_path_connected(&bitmap(&refs), &cfg));
    }

    #[test]
    fn diagonal_contact_does_not_connect() {
        let cfg = small_case();
        let img = GrayImage::from_fn(20, 10, |c, r| {
            let left = c < 10 && r < 5;
            let right = c >= 10 && r >= 5;
            if left || right {
                255
            } else {
                0
            }
        });
        assert!(!load_path_connected(&img, &cfg));
    }

    #[test]
    fn load_pixels_surround_the_load_point() {
        let cfg = small_case();
        let img = GrayImage::new(20, 10);
        let px = load_pixels(&img, &cfg);
        assert!(!px.is_empty());
        assert!(px.iter().all(|&(c, r)| c >= 18 && (3..=6).contains(&r)));
        assert!(support_pixels(&img, &cfg).iter().all(|&(c, _)| c <= 2));
    }

    #[test]
    fn overrides_parse() {
        let o = LabelOverrides::parse("# manual\na feasible\nb infeasible # fixed\n\n").unwrap();
        assert_eq!(o.get("a"), Some(Label::Feasible));
        assert_eq!(o.get("b"), Some(Label::Infeasible));
        assert_eq!(o.get("c"), None);
        assert_eq!(LabelOverrides::parse("x maybe").unwrap_err().line, 1);
        assert!(LabelOverrides::parse("x feasible extra").is_err());
    }
}
