//! BIO label set, span extraction, and span-level precision/recall/F1 for
//! typed recognition and untyped segmentation.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

pub const ENTITY_TYPES: [EntityType; 4] = [
    EntityType::Per,
    EntityType::Loc,
    EntityType::Org,
    EntityType::Misc,
];

/// The 9 labels in decoding-index order. Index 0 is O so that all-zero
/// models decode to the empty prediction under the lowest-index tie rule.
pub const LABELS: [&str; 9] = [
    "O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG", "B-MISC", "I-MISC",
];

pub const N_LABELS: usize = LABELS.len();
pub const OUTSIDE: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EntityType {
    Per,
    Loc,
    Org,
    Misc,
}

impl EntityType {
    pub fn as_str(&self) -> &'static str {
        match self {
            EntityType::Per => "PER",
            EntityType::Loc => "LOC",
            EntityType::Org => "ORG",
            EntityType::Misc => "MISC",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "PER" => Some(EntityType::Per),
            "LOC" => Some(EntityType::Loc),
            "ORG" => Some(EntityType::Org),
            "MISC" => Some(EntityType::Misc),
            _ => None,
        }
    }

    pub fn begin_label(&self) -> usize {
        1 + 2 * ENTITY_TYPES.iter().position(|t| t == self).unwrap()
    }

    pub fn inside_label(&self) -> usize {
        self.begin_label() + 1
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn label_index(label: &str) -> Option<usize> {
    LABELS.iter().position(|l| *l == label)
}

/// Parse a label into (is_begin, type); None for "O".
fn split_label(label: &str) -> Result<Option<(bool, EntityType)>> {
    if label == "O" {
        return Ok(None);
    }
    let (prefix, ty) = label
        .split_once('-')
        .ok_or_else(|| Error::InvalidArgument(format!("unknown label {label}")))?;
    let ety = EntityType::from_str(ty)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown label {label}")))?;
    match prefix {
        "B" => Ok(Some((true, ety))),
        "I" => Ok(Some((false, ety))),
        _ => Err(Error::InvalidArgument(format!("unknown label {label}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    /// Inclusive end index.
    pub end: usize,
    pub kind: EntityType,
}

/// Maximal B-X (I-X)* runs become spans. An I-X with no compatible open
/// span opens one (relaxed convention); an I-Y after a run of type X != Y
/// closes the X span and opens a Y span.
pub fn extract_spans<S: AsRef<str>>(labels: &[S]) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, EntityType)> = None;
    for (i, label) in labels.iter().enumerate() {
        match split_label(label.as_ref())? {
            None => {
                if let Some((start, kind)) = open.take() {
                    spans.push(Span {
                        start,
                        end: i - 1,
                        kind,
                    });
                }
            }
            Some((is_begin, kind)) => {
                let continues = !is_begin && matches!(open, Some((_, k)) if k == kind);
                if !continues {
                    if let Some((start, prev)) = open.take() {
                        spans.push(Span {
                            start,
                            end: i - 1,
                            kind: prev,
                        });
                    }
                    open = Some((i, kind));
                }
            }
        }
    }
    if let Some((start, kind)) = open {
        spans.push(Span {
            start,
            end: labels.len() - 1,
            kind,
        });
    }
    Ok(spans)
}

/// Inverse of `extract_spans` for well-formed span sets (sorted,
/// non-overlapping, within bounds).
pub fn spans_to_bio(spans: &[Span], len: usize) -> Result<Vec<String>> {
    let mut labels = vec!["O".to_string(); len];
    let mut last_end: Option<usize> = None;
    for span in spans {
        if span.start > span.end || span.end >= len {
            return Err(Error::InvalidArgument(format!(
                "span ({}, {}) out of bounds for length {len}",
                span.start, span.end
            )));
        }
        if let Some(prev) = last_end {
            if span.start <= prev {
                return Err(Error::InvalidArgument(
                    "spans overlap or are unsorted".into(),
                ));
            }
        }
        last_end = Some(span.end);
        labels[span.start] = format!("B-{}", span.kind);
        for l in labels.iter_mut().take(span.end + 1).skip(span.start + 1) {
            *l = format!("I-{}", span.kind);
        }
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TaskScores {
    /// Percent, in [0, 100].
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TaskScores {
    fn from_counts(tp: usize, n_pred: usize, n_gold: usize) -> Self {
        let precision = if n_pred > 0 {
            100.0 * tp as f64 / n_pred as f64
        } else {
            0.0
        };
        let recall = if n_gold > 0 {
            100.0 * tp as f64 / n_gold as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        TaskScores {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Metrics {
    pub typed: TaskScores,
    pub segmentation: TaskScores,
    pub per_type: BTreeMap<EntityType, TaskScores>,
}

/// Micro-averaged exact-span matching over a corpus. Typed: (start, end,
/// type) must all agree; segmentation: (start, end) only.
pub fn score_predictions<S: AsRef<str>, T: AsRef<str>>(
    gold: &[Vec<S>],
    pred: &[Vec<T>],
) -> Result<Metrics> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "corpus length mismatch: {} gold vs {} predicted sentences",
            gold.len(),
            pred.len()
        )));
    }
    let mut typed_tp = 0;
    let mut seg_tp = 0;
    let mut n_gold = 0;
    let mut n_pred = 0;
    let mut per_type: BTreeMap<EntityType, (usize, usize, usize)> = BTreeMap::new();
    for ty in ENTITY_TYPES {
        per_type.insert(ty, (0, 0, 0));
    }

    for (idx, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::BadSentence {
                index: idx,
                message: format!(
                    "label length mismatch: {} gold vs {} predicted",
                    g.len(),
                    p.len()
                ),
            });
        }
        let gs = extract_spans(g)?;
        let ps = extract_spans(p)?;
        n_gold += gs.len();
        n_pred += ps.len();
        for span in &gs {
            per_type.get_mut(&span.kind).unwrap().2 += 1;
        }
        for span in &ps {
            let entry = per_type.get_mut(&span.kind).unwrap();
            entry.1 += 1;
            if gs.contains(span) {
                typed_tp += 1;
                entry.0 += 1;
            }
            if gs
                .iter()
                .any(|gspan| gspan.start == span.start && gspan.end == span.end)
            {
                seg_tp += 1;
            }
        }
    }

    Ok(Metrics {
        typed: TaskScores::from_counts(typed_tp, n_pred, n_gold),
        segmentation: TaskScores::from_counts(seg_tp, n_pred, n_gold),
        per_type: per_type
            .into_iter()
            .map(|(ty, (tp, np, ng))| (ty, TaskScores::from_counts(tp, np, ng)))
            .collect(),
    })
}

impl Metrics {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("task\ttype\tprecision\trecall\tf1\n");
        let mut push = |task: &str, ty: &str, s: &TaskScores| {
            out.push_str(&format!(
                "{task}\t{ty}\t{:.2}\t{:.2}\t{:.2}\n",
                s.precision, s.recall, s.f1
            ));
        };
        push("typed", "ALL", &self.typed);
        for (ty, s) in &self.per_type {
            push("typed", ty.as_str(), s);
        }
        push("segmentation", "ALL", &self.segmentation);
        out
    }
}
