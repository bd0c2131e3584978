use crate::error::{Error, Result};
use crate::volume::Box3;

pub const DEFAULT_IOU_THRESHOLDS: [f64; 7] = [0.01, 0.15, 0.30, 0.45, 0.60, 0.75, 0.90];

/// Intersection over union of two axis-aligned boxes.
pub fn iou(a: &Box3, b: &Box3) -> f64 {
    let mut inter = 1.0;
    for ax in 0..3 {
        let lo = a.min[ax].max(b.min[ax]);
        let hi = a.max[ax].min(b.max[ax]);
        if hi <= lo {
            return 0.0;
        }
        inter *= hi - lo;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// All-points interpolated average precision for one class.
///
/// Predictions are visited by descending confidence (stable on ties) and
/// each claims the unmatched truth of highest IoU at or above `threshold`.
/// A precision/recall point is taken after each distinct confidence level.
pub fn average_precision(preds: &[Box3], truths: &[Box3], threshold: f64) -> f64 {
    if truths.is_empty() {
        return if preds.is_empty() { 1.0 } else { 0.0 };
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[j].confidence.total_cmp(&preds[i].confidence));

    let mut matched = vec![false; truths.len()];
    let mut tp = 0usize;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (n, &i) in order.iter().enumerate() {
        let p = &preds[i];
        let mut best: Option<(usize, f64)> = None;
        for (t, truth) in truths.iter().enumerate() {
            if matched[t] {
                continue;
            }
            let v = iou(p, truth);
            if v > 0.0 && v >= threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((t, v));
            }
        }
        if let Some((t, _)) = best {
            matched[t] = true;
            tp += 1;
        }
        let last_of_level = order.get(n + 1).is_none_or(|&k| preds[k].confidence != p.confidence);
        if last_of_level {
            points.push((tp as f64 / truths.len() as f64, tp as f64 / (n + 1) as f64));
        }
    }

    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut run_max = vec![0.0; points.len()];
    let mut m: f64 = 0.0;
    for (k, &(_, prec)) in points.iter().enumerate().rev() {
        m = m.max(prec);
        run_max[k] = m;
    }
    for (k, &(rec, _)) in points.iter().enumerate() {
        ap += (rec - prev_recall) * run_max[k];
        prev_recall = rec;
    }
    ap
}

/// Mean over classes of the mean AP over IoU thresholds. With `classes`
/// absent the classes present in either list are used; with none present the
/// result is 1.
pub fn mean_ap(preds: &[Box3], truths: &[Box3], thresholds: &[f64], classes: Option<&[u32]>) -> Result<f64> {
    if thresholds.is_empty() {
        return Err(Error::InvalidParameter("mean_ap needs at least one IoU threshold".into()));
    }
    let classes: Vec<u32> = match classes {
        Some(c) => c.to_vec(),
        None => {
            let mut c: Vec<u32> = truths.iter().chain(preds).map(|b| b.class_id).collect();
            c.sort_unstable();
            c.dedup();
            c
        }
    };
    if classes.is_empty() {
        return Ok(1.0);
    }
    let mut total = 0.0;
    for &c in &classes {
        let p: Vec<Box3> = preds.iter().filter(|b| b.class_id == c).copied().collect();
        let t: Vec<Box3> = truths.iter().filter(|b| b.class_id == c).copied().collect();
        total += thresholds.iter().map(|&thr| average_precision(&p, &t, thr)).sum::<f64>() / thresholds.len() as f64;
    }
    Ok(total / classes.len() as f64)
}
