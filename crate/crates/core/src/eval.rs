//! Detection and end-to-end precision, recall and F-measure, plus the
//! prediction file format.
//!
//! A prediction line is the image id followed by nine comma-separated
//! numbers per quad (`x1,y1,...,x4,y4,score`), then optionally one
//! tab-separated transcription per quad.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{polygon_iou, Quad};
use crate::synth::Instance;

pub const IOU_THRESHOLD: f64 = 0.5;

/// Levenshtein distance with unit costs, over characters.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let next = (diag + usize::from(ca != cb)).min(row[j] + 1).min(row[j + 1] + 1);
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[b.len()]
}

/// Closest lexicon word; ties go to the lexicographically smallest.
pub fn nearest_word<'a>(word: &str, lexicon: &'a [String]) -> Option<&'a str> {
    lexicon
        .iter()
        .map(|w| (edit_distance(word, w), w.as_str()))
        .min()
        .map(|(_, w)| w)
}

/// Result of matching one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    /// `(prediction, ground truth, IoU)` in matching order.
    pub pairs: Vec<(usize, usize, f64)>,
    /// Predictions whose best overlap is an ignored ground truth.
    pub excluded: Vec<usize>,
}

/// Greedy one-to-one matching in descending IoU order among pairs with
/// IoU at least 0.5. Predictions whose highest-IoU ground truth is flagged
/// ignore (at IoU at least 0.5) are set aside first and take no part.
pub fn match_detections(pred: &[Quad], gt: &[(Quad, bool)]) -> Result<MatchSet> {
    let mut iou = vec![vec![0.0; gt.len()]; pred.len()];
    for (i, p) in pred.iter().enumerate() {
        for (j, (g, _)) in gt.iter().enumerate() {
            iou[i][j] = polygon_iou(p, g)?;
        }
    }
    let mut excluded = Vec::new();
    for (i, row) in iou.iter().enumerate() {
        let best = row
            .iter()
            .enumerate()
            .fold(None::<(usize, f64)>, |acc, (j, &v)| match acc {
                Some((_, b)) if b >= v => acc,
                _ => Some((j, v)),
            });
        if let Some((j, v)) = best {
            if gt[j].1 && v >= IOU_THRESHOLD {
                excluded.push(i);
            }
        }
    }
    let mut candidates = Vec::new();
    for (i, row) in iou.iter().enumerate() {
        if excluded.contains(&i) {
            continue;
        }
        for (j, &v) in row.iter().enumerate() {
            if !gt[j].1 && v >= IOU_THRESHOLD {
                candidates.push((i, j, v));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let (mut used_p, mut used_g) = (vec![false; pred.len()], vec![false; gt.len()]);
    let mut pairs = Vec::new();
    for (i, j, v) in candidates {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            pairs.push((i, j, v));
        }
    }
    Ok(MatchSet { pairs, excluded })
}

/// Precision, recall and F-measure from counts. An empty prediction set
/// has precision 1 and an empty ground-truth set recall 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub tp: usize,
    pub predictions: usize,
    pub ground_truth: usize,
}

impl Prf {
    pub fn precision(&self) -> f64 {
        if self.predictions == 0 {
            1.0
        } else {
            self.tp as f64 / self.predictions as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.ground_truth == 0 {
            1.0
        } else {
            self.tp as f64 / self.ground_truth as f64
        }
    }

    pub fn f_measure(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Per-image outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub id: String,
    pub matches: MatchSet,
    /// Matched pairs whose transcriptions agree.
    pub correct: Vec<bool>,
    pub predictions: usize,
    pub ground_truth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub detection: Prf,
    pub end_to_end: Prf,
    pub images: Vec<ImageEval>,
    /// Predictions set aside for overlapping ignored ground truth.
    pub ignored: usize,
}

/// One image of predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredRecord {
    pub id: String,
    pub quads: Vec<Quad>,
    /// Empty when the file carries no transcriptions.
    pub texts: Vec<String>,
}

fn normalize(text: &str) -> String {
    text.to_lowercase()
}

/// Scores one image; `texts` may be empty for detection-only predictions.
pub fn evaluate_image(
    id: &str,
    pred: &[Quad],
    texts: &[String],
    gt: &[Instance],
    lexicon: Option<&[String]>,
) -> Result<ImageEval> {
    if let Some(g) = gt.iter().find(|g| !g.ignore && g.text.is_empty()) {
        return Err(Error::Data(format!("{id}: ground truth {:?} has no transcription", g.quad.pts)));
    }
    let boxes: Vec<_> = gt.iter().map(|g| (g.quad, g.ignore)).collect();
    let matches = match_detections(pred, &boxes)?;
    let correct = matches
        .pairs
        .iter()
        .map(|&(i, j, _)| {
            let Some(raw) = texts.get(i) else { return false };
            let mut guess = normalize(raw);
            if let Some(lex) = lexicon {
                if let Some(w) = nearest_word(&guess, lex) {
                    guess = w.to_string();
                }
            }
            guess == normalize(&gt[j].text)
        })
        .collect();
    Ok(ImageEval {
        id: id.to_string(),
        predictions: pred.len() - matches.excluded.len(),
        ground_truth: gt.iter().filter(|g| !g.ignore).count(),
        matches,
        correct,
    })
}

/// Scores every ground-truth image; images without a prediction record
/// count as having no predictions. Lexicon words are case-folded.
pub fn end_to_end_score(
    preds: &[PredRecord],
    gt: &[(String, Vec<Instance>)],
    lexicon: Option<&[String]>,
) -> Result<EvalReport> {
    let lexicon: Option<Vec<String>> = lexicon.map(|l| {
        let mut words: Vec<String> = l.iter().map(|w| normalize(w)).collect();
        words.sort();
        words.dedup();
        words
    });
    let mut by_id: HashMap<&str, &PredRecord> = HashMap::new();
    for p in preds {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(Error::Data(format!("duplicate prediction record for {}", p.id)));
        }
        if !p.texts.is_empty() && p.texts.len() != p.quads.len() {
            return Err(Error::Data(format!(
                "{}: {} transcriptions for {} quads",
                p.id,
                p.texts.len(),
                p.quads.len()
            )));
        }
    }
    if let Some(extra) = preds.iter().find(|p| !gt.iter().any(|(id, _)| *id == p.id)) {
        return Err(Error::Data(format!("prediction for unknown image {}", extra.id)));
    }
    let mut images = Vec::with_capacity(gt.len());
    let mut det = Prf {
        tp: 0,
        predictions: 0,
        ground_truth: 0,
    };
    let mut e2e = det;
    let mut ignored = 0;
    for (id, instances) in gt {
        let (quads, texts) = by_id
            .get(id.as_str())
            .map_or((&[][..], &[][..]), |p| (&p.quads[..], &p.texts[..]));
        let img = evaluate_image(id, quads, texts, instances, lexicon.as_deref())?;
        det.tp += img.matches.pairs.len();
        det.predictions += img.predictions;
        det.ground_truth += img.ground_truth;
        e2e.tp += img.correct.iter().filter(|&&c| c).count();
        ignored += img.matches.excluded.len();
        images.push(img);
    }
    e2e.predictions = det.predictions;
    e2e.ground_truth = det.ground_truth;
    Ok(EvalReport {
        detection: det,
        end_to_end: e2e,
        images,
        ignored,
    })
}

impl EvalReport {
    /// Machine-readable `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let d = &self.detection;
        let e = &self.end_to_end;
        [
            ("images", self.images.len().to_string()),
            ("predictions", d.predictions.to_string()),
            ("ground_truth", d.ground_truth.to_string()),
            ("ignored", self.ignored.to_string()),
            ("det_tp", d.tp.to_string()),
            ("det_precision", format!("{:.6}", d.precision())),
            ("det_recall", format!("{:.6}", d.recall())),
            ("det_f", format!("{:.6}", d.f_measure())),
            ("e2e_tp", e.tp.to_string()),
            ("e2e_precision", format!("{:.6}", e.precision())),
            ("e2e_recall", format!("{:.6}", e.recall())),
            ("e2e_f", format!("{:.6}", e.f_measure())),
        ]
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>10} {:>10} {:>10}", "", "precision", "recall", "F-measure")?;
        for (name, p) in [("detection", &self.detection), ("end-to-end", &self.end_to_end)] {
            writeln!(
                f,
                "{:<12} {:>10.4} {:>10.4} {:>10.4}",
                name,
                p.precision(),
                p.recall(),
                p.f_measure()
            )?;
        }
        write!(
            f,
            "images {}, predictions {}, ground truth {}, ignored {}",
            self.images.len(),
            self.detection.predictions,
            self.detection.ground_truth,
            self.ignored
        )
    }
}

/// Formats one prediction line.
pub fn format_prediction(id: &str, quads: &[Quad], texts: &[String]) -> String {
    let mut line = id.to_string();
    for q in quads {
        for p in &q.pts {
            line.push_str(&format!(",{},{}", p[0], p[1]));
        }
        line.push_str(&format!(",{}", q.score));
    }
    for t in texts {
        line.push('\t');
        line.push_str(t);
    }
    line
}

/// Parses a prediction file.
pub fn parse_predictions(text: &str) -> Result<Vec<PredRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: n + 1, msg };
        let mut fields = line.split('\t');
        let head = fields.next().unwrap_or_default();
        let texts: Vec<String> = fields.map(str::to_string).collect();
        let mut parts = head.split(',');
        let id = parts.next().unwrap_or_default().trim().to_string();
        if id.is_empty() {
            return Err(bad("missing image id".into()));
        }
        let nums = parts
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad(format!("bad number {p:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if nums.len() % 9 != 0 {
            return Err(bad(format!("{} numbers is not a multiple of 9", nums.len())));
        }
        let quads: Vec<Quad> = nums
            .chunks(9)
            .map(|c| Quad::with_score([[c[0], c[1]], [c[2], c[3]], [c[4], c[5]], [c[6], c[7]]], c[8]))
            .collect();
        if !texts.is_empty() && texts.len() != quads.len() {
            return Err(bad(format!("{} transcriptions for {} quads", texts.len(), quads.len())));
        }
        out.push(PredRecord { id, quads, texts });
    }
    Ok(out)
}

/// Parses a lexicon: one word per line, blank lines skipped.
pub fn parse_lexicon(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}
