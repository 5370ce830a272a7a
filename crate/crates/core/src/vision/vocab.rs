//! k-means visual vocabulary and bag-of-visual-words encoding.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{Descriptor, DESCRIPTOR_LEN};
use crate::error::{Error, ParseError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub centers: Vec<Descriptor>,
    /// Sum of squared distances to the nearest center after the last
    /// assignment.
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub inertia_history: Vec<f64>,
    /// Number of descriptors the vocabulary was trained on.
    pub training_descriptors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iterations: usize,
    /// Stop when no center moves farther than this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 64,
            max_iterations: 300,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

pub fn sq_dist(a: &Descriptor, b: &Descriptor) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center, lowest index on ties.
pub fn nearest(centers: &[Descriptor], d: &Descriptor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let dist = sq_dist(c, d);
        if dist < best.1 {
            best = (i, dist);
        }
    }
    best
}

fn assign(data: &[Descriptor], centers: &[Descriptor]) -> (Vec<usize>, Vec<f64>) {
    data.iter().map(|d| nearest(centers, d)).unzip()
}

/// k-means++ seeding: first center uniform, then each next center drawn with
/// probability proportional to the squared distance to the chosen ones.
fn seed_centers(data: &[Descriptor], k: usize, rng: &mut ChaCha8Rng) -> Vec<Descriptor> {
    let mut centers = vec![data[rng.gen_range(0..data.len())]];
    let mut d2: Vec<f64> = data.iter().map(|d| sq_dist(d, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut t = rng.gen::<f64>() * total;
        let mut pick = None;
        for (i, w) in d2.iter().enumerate() {
            if *w > 0.0 {
                pick = Some(i);
                if t < *w {
                    break;
                }
                t -= w;
            }
        }
        let c = data[pick.expect("enough distinct points")];
        for (dd, p) in d2.iter_mut().zip(data) {
            *dd = dd.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn distinct_count(data: &[Descriptor], at_least: usize) -> usize {
    let mut seen: Vec<&Descriptor> = Vec::new();
    for d in data {
        if !seen.contains(&d) {
            seen.push(d);
            if seen.len() >= at_least {
                break;
            }
        }
    }
    seen.len()
}

/// Lloyd iterations from k-means++ seeding. An empty cluster is re-seeded at
/// the point farthest from its center, which keeps the inertia sequence
/// non-increasing.
pub fn train_vocabulary(data: &[Descriptor], cfg: &KMeansConfig) -> Result<Vocabulary> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let distinct = distinct_count(data, cfg.k);
    if distinct < cfg.k {
        return Err(Error::TooFewDescriptors {
            needed: cfg.k,
            got: distinct,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centers = seed_centers(data, cfg.k, &mut rng);
    let (mut labels, mut dists) = assign(data, &centers);
    let mut history = vec![dists.iter().sum::<f64>()];
    for _ in 0..cfg.max_iterations {
        let mut sums = vec![[0.0f64; DESCRIPTOR_LEN]; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for (d, &l) in data.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(d) {
                *s += v;
            }
        }
        let mut taken: Vec<usize> = Vec::new();
        let mut moved = 0.0f64;
        for c in 0..cfg.k {
            let next = if counts[c] > 0 {
                let mut m = sums[c];
                m.iter_mut().for_each(|v| *v /= counts[c] as f64);
                m
            } else {
                // farthest point not already used for a re-seed
                let far = (0..data.len())
                    .filter(|i| !taken.contains(i))
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("k <= n");
                taken.push(far);
                data[far]
            };
            moved = moved.max(sq_dist(&next, &centers[c]).sqrt());
            centers[c] = next;
        }
        (labels, dists) = assign(data, &centers);
        history.push(dists.iter().sum());
        if moved < cfg.tolerance {
            break;
        }
    }
    Ok(Vocabulary {
        centers,
        inertia: *history.last().expect("nonempty"),
        inertia_history: history,
        training_descriptors: data.len(),
    })
}

/// Normalized visual-word histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Bovw {
    pub histogram: Vec<f64>,
    pub keypoints: usize,
}

impl Bovw {
    /// No keypoints: the histogram is all zero.
    pub fn is_empty(&self) -> bool {
        self.keypoints == 0
    }
}

pub fn encode(descriptors: &[Descriptor], vocab: &Vocabulary) -> Bovw {
    let k = vocab.centers.len();
    let mut histogram = vec![0.0; k];
    for d in descriptors {
        histogram[nearest(&vocab.centers, d).0] += 1.0;
    }
    if !descriptors.is_empty() {
        let n = descriptors.len() as f64;
        histogram.iter_mut().for_each(|v| *v /= n);
    }
    Bovw {
        histogram,
        keypoints: descriptors.len(),
    }
}

impl Vocabulary {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "bovw-vocabulary v1 k={} dim={} inertia={:?} trained_on={}\n",
            self.centers.len(),
            DESCRIPTOR_LEN,
            self.inertia,
            self.training_descriptors
        );
        for c in &self.centers {
            let row: Vec<String> = c.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    /// Parse the text matrix. The inertia history is not stored.
    pub fn from_text(text: &str) -> Result<Self, ParseError> {
        const FMT: &str = "bovw-vocabulary";
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| ParseError::new(FMT, 1, "empty input"))?;
        let mut h = header.split_whitespace();
        if h.next() != Some("bovw-vocabulary") || h.next() != Some("v1") {
            return Err(ParseError::new(FMT, 1, "expected `bovw-vocabulary v1` header"));
        }
        let mut field = |key: &str| {
            h.next()
                .and_then(|t| t.strip_prefix(key)?.strip_prefix('='))
                .map(str::to_owned)
                .ok_or_else(|| ParseError::new(FMT, 1, format!("missing `{key}=`")))
        };
        let k: usize = field("k")?.parse().map_err(|_| ParseError::new(FMT, 1, "bad k"))?;
        let dim: usize = field("dim")?.parse().map_err(|_| ParseError::new(FMT, 1, "bad dim"))?;
        let inertia: f64 = field("inertia")?
            .parse()
            .map_err(|_| ParseError::new(FMT, 1, "bad inertia"))?;
        let trained: usize = field("trained_on")?
            .parse()
            .map_err(|_| ParseError::new(FMT, 1, "bad trained_on"))?;
        if dim != DESCRIPTOR_LEN || k == 0 {
            return Err(ParseError::new(FMT, 1, "unsupported shape"));
        }
        let mut centers = Vec::new();
        for (i, line) in lines.enumerate() {
            let ln = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            if centers.len() == k {
                return Err(ParseError::new(FMT, ln, "more rows than k"));
            }
            let mut row = [0.0; DESCRIPTOR_LEN];
            let mut n = 0;
            for tok in line.split_whitespace() {
                if n == DESCRIPTOR_LEN {
                    return Err(ParseError::new(FMT, ln, "row too long"));
                }
                row[n] = tok
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ParseError::new(FMT, ln, "bad number"))?;
                n += 1;
            }
            if n != DESCRIPTOR_LEN {
                return Err(ParseError::new(FMT, ln, "row too short"));
            }
            centers.push(row);
        }
        if centers.len() != k {
            return Err(ParseError::new(FMT, 0, "fewer rows than k"));
        }
        Ok(Self {
            centers,
            inertia,
            inertia_history: Vec::new(),
            training_descriptors: trained,
        })
    }
}
