//! Evaluation metrics: ROC-AUC and PR-AUC for tagging, OA/RPA/VR for
//! melody, WCSR for chords. All return fractions in [0, 1].

use serde::Serialize;

use crate::error::{Error, Result};

/// Probability that a random positive outranks a random negative, ties
/// counted ½ (Mann–Whitney U / (n₊·n₋)).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("ROC-AUC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks, 1-based
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: Σ (R_k − R_{k−1})·P_k over descending score
/// thresholds, where tied scores form one threshold.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(Error::UndefinedMetric("PR-AUC needs at least one positive label".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let new_tp = order[i..=j].iter().filter(|&&k| labels[k]).count();
        tp += new_tp;
        seen += j - i + 1;
        ap += new_tp as f64 / pos as f64 * (tp as f64 / seen as f64);
        i = j + 1;
    }
    Ok(ap)
}

/// Macro average over classes of a per-class metric on `[n × classes]`
/// row-major score/label matrices. Classes where the metric is undefined
/// are skipped; the count of classes used is returned alongside.
pub fn macro_average(
    scores: &[f64],
    labels: &[bool],
    classes: usize,
    metric: fn(&[f64], &[bool]) -> Result<f64>,
) -> Result<(f64, usize)> {
    if classes == 0 || scores.len() != labels.len() || scores.len() % classes != 0 {
        return Err(Error::contract("score/label matrices do not match the class count"));
    }
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..classes {
        let s: Vec<f64> = scores.iter().skip(c).step_by(classes).copied().collect();
        let l: Vec<bool> = labels.iter().skip(c).step_by(classes).copied().collect();
        match metric(&s, &l) {
            Ok(v) => {
                total += v;
                used += 1;
            }
            Err(Error::UndefinedMetric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("no class has both label values".into()));
    }
    Ok((total / used as f64, used))
}

pub const PITCH_TOLERANCE_CENTS: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MelodyScores {
    pub oa: f64,
    pub rpa: f64,
    pub vr: f64,
    pub frames: usize,
    pub voiced_frames: usize,
    /// RPA and VR are reported as 0 because no reference frame is voiced.
    pub no_voiced_reference: bool,
}

/// Melody metrics on F0 tracks in Hz, 0 meaning unvoiced.
pub fn melody_metrics(est_f0: &[f64], ref_f0: &[f64]) -> Result<MelodyScores> {
    if est_f0.len() != ref_f0.len() {
        return Err(Error::contract(format!(
            "estimate has {} frames, reference {}",
            est_f0.len(),
            ref_f0.len()
        )));
    }
    if est_f0.is_empty() {
        return Err(Error::UndefinedMetric("melody metrics on zero frames".into()));
    }
    let close = |e: f64, r: f64| e > 0.0 && (1200.0 * (e / r).log2()).abs() <= PITCH_TOLERANCE_CENTS;
    let (mut voiced, mut pitch_ok, mut recalled, mut correct) = (0, 0, 0, 0);
    for (&e, &r) in est_f0.iter().zip(ref_f0) {
        if r > 0.0 {
            voiced += 1;
            recalled += usize::from(e > 0.0);
            let ok = close(e, r);
            pitch_ok += usize::from(ok);
            correct += usize::from(ok);
        } else {
            correct += usize::from(e <= 0.0);
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(MelodyScores {
        oa: frac(correct, est_f0.len()),
        rpa: frac(pitch_ok, voiced),
        vr: frac(recalled, voiced),
        frames: est_f0.len(),
        voiced_frames: voiced,
        no_voiced_reference: voiced == 0,
    })
}

/// A labelled time span `[start, end)` in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub label: usize,
}

fn check_segments(s: &[Segment], which: &str) -> Result<()> {
    for (i, seg) in s.iter().enumerate() {
        if !(seg.end > seg.start) {
            return Err(Error::contract(format!("{which} segment {i} has non-positive duration")));
        }
        if i > 0 && seg.start < s[i - 1].end {
            return Err(Error::contract(format!("{which} segments {} and {i} overlap or are unsorted", i - 1)));
        }
    }
    Ok(())
}

/// Weighted chord symbol recall: duration where the estimate matches the
/// reference label, over total reference duration.
pub fn wcsr(est: &[Segment], reference: &[Segment]) -> Result<f64> {
    check_segments(est, "estimated")?;
    check_segments(reference, "reference")?;
    let total: f64 = reference.iter().map(|s| s.end - s.start).sum();
    if total <= 0.0 {
        return Err(Error::UndefinedMetric("empty reference annotation".into()));
    }
    let (mut i, mut j, mut correct) = (0, 0, 0.0);
    while i < est.len() && j < reference.len() {
        let (e, r) = (est[i], reference[j]);
        let overlap = e.end.min(r.end) - e.start.max(r.start);
        if overlap > 0.0 && e.label == r.label {
            correct += overlap;
        }
        if e.end < r.end {
            i += 1;
        } else {
            j += 1;
        }
    }
    Ok(correct / total)
}

/// Merges runs of equal frame labels into segments of `frame_seconds` each.
pub fn frames_to_segments(labels: &[usize], frame_seconds: f64) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (t, &l) in labels.iter().enumerate() {
        let end = (t + 1) as f64 * frame_seconds;
        match out.last_mut() {
            Some(s) if s.label == l => s.end = end,
            _ => out.push(Segment {
                start: t as f64 * frame_seconds,
                end,
                label: l,
            }),
        }
    }
    out
}
