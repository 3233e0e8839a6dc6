//! Landmark and face-parsing evaluation: inter-ocular normalized mean error,
//! failure rate, and per-class and merged F1 from confusion counts.

use serde::{Deserialize, Serialize};

use crate::classes::SemanticClass;
use crate::error::{Error, Result};

/// Outer eye corners in the 68-point layout.
pub const OUTER_EYE_CORNERS: (usize, usize) = (36, 45);
pub const DEFAULT_FAILURE_THRESHOLD: f64 = 0.10;

pub type Point = [f64; 2];

pub fn interocular_distance(gt: &[Point]) -> Result<f64> {
    if gt.len() != 68 {
        return Err(Error::param(format!("inter-ocular distance needs 68 points, got {}", gt.len())));
    }
    let (a, b) = (gt[OUTER_EYE_CORNERS.0], gt[OUTER_EYE_CORNERS.1]);
    let d = (a[0] - b[0]).hypot(a[1] - b[1]);
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::DegenerateGroundTruth(format!("outer eye corners are {d} apart")));
    }
    Ok(d)
}

/// Mean point-to-point error divided by `normalizer`.
pub fn nme_with(pred: &[Point], gt: &[Point], normalizer: f64) -> Result<f64> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::param(format!("prediction has {} points, ground truth {}", pred.len(), gt.len())));
    }
    if pred.iter().chain(gt).flatten().any(|x| !x.is_finite()) {
        return Err(Error::param("landmark coordinates must be finite"));
    }
    let total: f64 = pred.iter().zip(gt).map(|(p, g)| (p[0] - g[0]).hypot(p[1] - g[1])).sum();
    Ok(total / gt.len() as f64 / normalizer)
}

/// NME normalized by the ground truth's inter-ocular distance.
pub fn nme(pred: &[Point], gt: &[Point]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::param(format!("prediction has {} points, ground truth {}", pred.len(), gt.len())));
    }
    nme_with(pred, gt, interocular_distance(gt)?)
}

/// Fraction of images whose NME exceeds `threshold`.
pub fn failure_rate(per_image: &[f64], threshold: f64) -> Result<f64> {
    if per_image.is_empty() {
        return Err(Error::param("failure rate of an empty list"));
    }
    Ok(per_image.iter().filter(|&&e| e > threshold).count() as f64 / per_image.len() as f64)
}

/// Full confusion matrix, rows ground truth and columns prediction, so
/// merged categories can be recounted exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub classes: usize,
    pub matrix: Vec<u64>,
}

impl ConfusionCounts {
    pub fn zeros(classes: usize) -> Self {
        Self { classes, matrix: vec![0; classes * classes] }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.matrix[gt * self.classes + pred]
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.classes).filter(|&g| g != c).map(|g| self.get(g, c)).sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.classes).filter(|&p| p != c).map(|p| self.get(c, p)).sum()
    }

    pub fn ground_truth_pixels(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    pub fn add(&mut self, other: &ConfusionCounts) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::param("cannot add confusion counts over different class sets"));
        }
        for (a, b) in self.matrix.iter_mut().zip(&other.matrix) {
            *a += b;
        }
        Ok(())
    }

    /// Recounts under a class map; ids mapping to `None` form one extra
    /// "rest" class at the end.
    pub fn merged(&self, map: impl Fn(usize) -> Option<usize>, groups: usize) -> ConfusionCounts {
        let target = |c: usize| map(c).unwrap_or(groups);
        let mut out = ConfusionCounts::zeros(groups + 1);
        for g in 0..self.classes {
            for p in 0..self.classes {
                out.matrix[target(g) * (groups + 1) + target(p)] += self.get(g, p);
            }
        }
        out
    }

    /// Transposed counts, as if prediction and ground truth were swapped.
    pub fn swapped(&self) -> ConfusionCounts {
        let mut out = ConfusionCounts::zeros(self.classes);
        for g in 0..self.classes {
            for p in 0..self.classes {
                out.matrix[p * self.classes + g] = self.get(g, p);
            }
        }
        out
    }
}

pub fn confusion_counts(pred: &[u8], gt: &[u8], classes: usize) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::param(format!("mask sizes differ: {} vs {}", pred.len(), gt.len())));
    }
    let mut out = ConfusionCounts::zeros(classes);
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (p as usize, g as usize);
        if p >= classes || g >= classes {
            return Err(Error::param(format!("class id {} outside the {classes}-class vocabulary", p.max(g))));
        }
        out.matrix[g * classes + p] += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub name: String,
    pub f1: f64,
    /// Class absent from both prediction and ground truth; `f1` is then 1.
    pub absent: bool,
}

fn score(name: &str, counts: &ConfusionCounts, c: usize) -> ClassScore {
    let tp = counts.true_positives(c) as f64;
    let denom = 2.0 * tp + counts.false_positives(c) as f64 + counts.false_negatives(c) as f64;
    if denom == 0.0 {
        ClassScore { name: name.to_string(), f1: 1.0, absent: true }
    } else {
        ClassScore { name: name.to_string(), f1: 2.0 * tp / denom, absent: false }
    }
}

/// Super-classes built from class ids, plus the ids merged into the single
/// "overall" category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeSpec {
    pub groups: Vec<(String, Vec<u8>)>,
    pub overall: Vec<u8>,
}

impl MergeSpec {
    /// Helen convention: brows, eyes and mouth grouped; overall merges nose,
    /// brows, eyes and mouth.
    pub fn helen() -> Self {
        use SemanticClass::*;
        let ids = |cs: &[SemanticClass]| cs.iter().map(|c| c.id()).collect::<Vec<_>>();
        Self {
            groups: vec![
                ("brows".into(), ids(&[LeftBrow, RightBrow])),
                ("eyes".into(), ids(&[LeftEye, RightEye])),
                ("mouth".into(), ids(&[UpperLip, InnerMouth, LowerLip])),
            ],
            overall: ids(&[Nose, LeftBrow, RightBrow, LeftEye, RightEye, UpperLip, InnerMouth, LowerLip]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class: Vec<ClassScore>,
    pub merged: Vec<ClassScore>,
    /// Helen-style overall score over the merged super-class.
    pub overall: ClassScore,
    /// LaPa-style mean over foreground classes.
    pub mean_foreground: f64,
}

fn class_name(c: usize) -> String {
    SemanticClass::from_id(c as u8).map_or_else(|| format!("class-{c}"), |k| k.name().to_string())
}

pub fn f1_scores(counts: &ConfusionCounts, merge: &MergeSpec) -> F1Report {
    let per_class: Vec<ClassScore> = (0..counts.classes).map(|c| score(&class_name(c), counts, c)).collect();
    let merged = merge
        .groups
        .iter()
        .map(|(name, ids)| {
            let m = counts.merged(|c| ids.contains(&(c as u8)).then_some(0), 1);
            score(name, &m, 0)
        })
        .collect();
    let all = counts.merged(|c| merge.overall.contains(&(c as u8)).then_some(0), 1);
    let overall = score("overall", &all, 0);
    let foreground = &per_class[1.min(per_class.len())..];
    let mean_foreground = if foreground.is_empty() {
        1.0
    } else {
        foreground.iter().map(|s| s.f1).sum::<f64>() / foreground.len() as f64
    };
    F1Report { per_class, merged, overall, mean_foreground }
}

/// Maps a rendered mask into the 11-class parsing vocabulary.
pub fn to_parsing_mask(mask: &[u8]) -> Vec<u8> {
    mask.iter()
        .map(|&c| SemanticClass::from_id(c).map_or(0, |k| k.parsing_class().id()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageError {
    pub id: String,
    pub nme: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkReport {
    pub normalizer: String,
    pub per_image: Vec<ImageError>,
    pub mean_nme: f64,
    pub failure_threshold: f64,
    pub failure_rate: f64,
}

/// One landmark evaluation item: image id, prediction, ground truth.
pub type LandmarkPair = (String, Vec<Point>, Vec<Point>);

/// Evaluates images in parallel and reduces in image-id order.
pub fn evaluate_landmarks(items: &[LandmarkPair], threshold: f64) -> Result<LandmarkReport> {
    use rayon::prelude::*;
    if items.is_empty() {
        return Err(Error::param("no landmark predictions to evaluate"));
    }
    let mut per_image = items
        .par_iter()
        .map(|(id, p, g)| nme(p, g).map(|e| ImageError { id: id.clone(), nme: e }))
        .collect::<Result<Vec<_>>>()?;
    per_image.sort_by(|a, b| a.id.cmp(&b.id));
    let errors: Vec<f64> = per_image.iter().map(|e| e.nme).collect();
    Ok(LandmarkReport {
        normalizer: "inter-ocular (outer eye corners 36/45)".into(),
        mean_nme: errors.iter().sum::<f64>() / errors.len() as f64,
        failure_rate: failure_rate(&errors, threshold)?,
        failure_threshold: threshold,
        per_image,
    })
}

/// Sums confusion counts of many mask pairs in id order.
pub fn evaluate_parsing(items: &[(String, Vec<u8>, Vec<u8>)], merge: &MergeSpec) -> Result<F1Report> {
    use rayon::prelude::*;
    let mut sorted: Vec<&(String, Vec<u8>, Vec<u8>)> = items.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let counts = sorted
        .par_iter()
        .map(|(_, p, g)| confusion_counts(&to_parsing_mask(p), &to_parsing_mask(g), SemanticClass::PARSING_COUNT))
        .collect::<Result<Vec<_>>>()?;
    let mut total = ConfusionCounts::zeros(SemanticClass::PARSING_COUNT);
    for c in &counts {
        total.add(c)?;
    }
    Ok(f1_scores(&total, merge))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsReport {
    pub landmarks: Option<LandmarkReport>,
    pub parsing: Option<F1Report>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text tables; NME and FR are shown as percentages.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        if let Some(l) = &self.landmarks {
            out.push_str(&format!("# NME normalized by {}\n", l.normalizer));
            out.push_str(&format!("{:<10} {:>10} {:>10}\n", "images", "NME (%)", format!("FR{:.0}% (%)", 100.0 * l.failure_threshold)));
            out.push_str(&format!(
                "{:<10} {:>10.2} {:>10.2}\n",
                l.per_image.len(),
                100.0 * l.mean_nme,
                100.0 * l.failure_rate
            ));
        }
        if let Some(p) = &self.parsing {
            if !out.is_empty() {
                out.push('\n');
            }
            let mut columns: Vec<&ClassScore> = p.per_class.iter().skip(1).collect();
            columns.extend(&p.merged);
            columns.push(&p.overall);
            let header: Vec<String> = columns.iter().map(|s| format!("{:>12}", s.name)).collect();
            out.push_str(&format!("{}{:>12}\n", header.join(""), "mean"));
            let values: Vec<String> = columns
                .iter()
                .map(|s| format!("{:>12}", format!("{:.1}{}", 100.0 * s.f1, if s.absent { "*" } else { "" })))
                .collect();
            out.push_str(&format!("{}{:>12.1}\n", values.join(""), 100.0 * p.mean_foreground));
            if columns.iter().any(|s| s.absent) {
                out.push_str("* class absent from both prediction and ground truth\n");
            }
        }
        out
    }
}
