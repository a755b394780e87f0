//! Set-prediction evaluation. Predictions of each view are scored against the
//! scene's sources separately — views are never merged. Per class, predictions
//! and sources are paired by minimal total distance; each distance threshold
//! then splits the pairs into hits and misses, and the per-cell counts are
//! summed over the whole split before any ratio is formed.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};
use crate::losses::hungarian;
use serde::{Deserialize, Serialize};

/// Localization tolerances in meters.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.5, 0.8, 1.2];

/// One retained prediction: world-frame position, argmax class, and that
/// class's probability. Queries whose argmax is the no-source class are
/// dropped before evaluation and never appear here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub position: [f64; 3],
    pub class_id: usize,
    pub prob: f64,
}

/// One annotated source: world-frame position and class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalGroundTruth {
    pub position: [f64; 3],
    pub class_id: usize,
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Turn one view's decoded outputs into world-frame predictions. `positions`
/// is q×3 in the view's camera frame, `logits` q×(k+1) with the last column
/// the no-source class; rows whose argmax lands there are dropped.
pub fn extract_predictions(positions: &Tensor, logits: &Tensor, pose: &RigidTransform) -> Result<Vec<Prediction>> {
    if positions.shape().len() != 2 || positions.cols() != 3 {
        return Err(Error::Shape(format!(
            "extract_predictions: positions {:?}",
            positions.shape()
        )));
    }
    if logits.shape().len() != 2 || logits.rows() != positions.rows() || logits.cols() < 2 {
        return Err(Error::Shape(format!(
            "extract_predictions: logits {:?} for {} queries",
            logits.shape(),
            positions.rows()
        )));
    }
    let classes = logits.cols();
    let mut out = Vec::new();
    for r in 0..positions.rows() {
        let row: Vec<f64> = (0..classes).map(|c| logits.at2(r, c)).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numeric("extract_predictions: non-finite logits".into()));
        }
        let denom: f64 = row.iter().map(|x| (x - max).exp()).sum();
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if argmax == classes - 1 {
            continue; // no source here
        }
        let world = pose.apply(&Vec3::new(positions.at2(r, 0), positions.at2(r, 1), positions.at2(r, 2)));
        if !world.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("extract_predictions: non-finite position".into()));
        }
        out.push(Prediction {
            position: [world.x, world.y, world.z],
            class_id: argmax,
            prob: ((row[argmax] - max).exp() / denom),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Cell {
    tp: u64,
    fp: u64,
    missed: u64,
    ale_sum: f64,
}

/// Running TP/FP/FN counts per (class, threshold) cell, summed over views.
#[derive(Debug, Clone)]
pub struct EvalTally {
    classes: usize,
    thresholds: Vec<f64>,
    cells: Vec<Cell>,
}

impl EvalTally {
    /// `classes` counts the real classes only (no-source excluded).
    pub fn new(classes: usize, thresholds: &[f64]) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Invalid("eval: need at least one class".into()));
        }
        if thresholds.is_empty() || thresholds.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(Error::Invalid(format!("eval: bad thresholds {thresholds:?}")));
        }
        Ok(Self {
            classes,
            thresholds: thresholds.to_vec(),
            cells: vec![Cell::default(); classes * thresholds.len()],
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Score one view. Per class: pair predictions with sources by minimal
    /// total distance (rectangular matching through zero padding), then for
    /// every threshold count pairs within tolerance as hits; too-far pairs
    /// and unpaired predictions are false positives, sources without a hit
    /// are misses. Paired-hit distances accumulate into the localization
    /// error.
    pub fn add_view(&mut self, preds: &[Prediction], gts: &[EvalGroundTruth]) -> Result<()> {
        for p in preds {
            if p.class_id >= self.classes {
                return Err(Error::Invalid(format!(
                    "eval: prediction class {} out of range {}",
                    p.class_id, self.classes
                )));
            }
            if !p.position.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric("eval: non-finite prediction".into()));
            }
        }
        for g in gts {
            if g.class_id >= self.classes {
                return Err(Error::Invalid(format!(
                    "eval: ground-truth class {} out of range {}",
                    g.class_id, self.classes
                )));
            }
        }
        for class in 0..self.classes {
            let ps: Vec<&Prediction> = preds.iter().filter(|p| p.class_id == class).collect();
            let gs: Vec<&EvalGroundTruth> = gts.iter().filter(|g| g.class_id == class).collect();
            let n = ps.len().max(gs.len());
            if n == 0 {
                continue;
            }
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            if i < ps.len() && j < gs.len() {
                                dist(&ps[i].position, &gs[j].position)
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect();
            let assignment = hungarian(&cost)?;
            let pair_dists: Vec<f64> = assignment
                .iter()
                .enumerate()
                .filter(|&(i, &j)| i < ps.len() && j < gs.len())
                .map(|(i, &j)| cost[i][j])
                .collect();
            for (ti, &t) in self.thresholds.iter().enumerate() {
                let cell = &mut self.cells[class * self.thresholds.len() + ti];
                let hits = pair_dists.iter().filter(|d| **d <= t).count() as u64;
                cell.tp += hits;
                cell.fp += ps.len() as u64 - hits;
                cell.missed += gs.len() as u64 - hits;
                cell.ale_sum += pair_dists.iter().filter(|d| **d <= t).sum::<f64>();
            }
        }
        Ok(())
    }

    /// Merge another tally (same shape) into this one.
    pub fn merge(&mut self, other: &EvalTally) -> Result<()> {
        if self.classes != other.classes || self.thresholds != other.thresholds {
            return Err(Error::Invalid("eval: cannot merge tallies of different shapes".into()));
        }
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.missed += b.missed;
            a.ale_sum += b.ale_sum;
        }
        Ok(())
    }

    /// Reduce the summed counts to ratios. Cells no prediction or source ever
    /// touched are left out of the averages so unused classes cannot dilute
    /// the score; a zero denominator inside a touched cell reports 0.
    pub fn report(&self) -> MetricsReport {
        let mut cells = Vec::with_capacity(self.cells.len());
        let mut p_sum = 0.0;
        let mut r_sum = 0.0;
        let mut used = 0usize;
        let mut ale_total = 0.0;
        let mut tp_total = 0u64;
        for class in 0..self.classes {
            for (ti, &threshold) in self.thresholds.iter().enumerate() {
                let c = self.cells[class * self.thresholds.len() + ti];
                let precision = if c.tp + c.fp > 0 {
                    c.tp as f64 / (c.tp + c.fp) as f64
                } else {
                    0.0
                };
                let recall = if c.tp + c.missed > 0 {
                    c.tp as f64 / (c.tp + c.missed) as f64
                } else {
                    0.0
                };
                let touched = c.tp + c.fp + c.missed > 0;
                if touched {
                    p_sum += precision;
                    r_sum += recall;
                    used += 1;
                }
                ale_total += c.ale_sum;
                tp_total += c.tp;
                cells.push(MetricsCell {
                    class_id: class,
                    threshold,
                    tp: c.tp,
                    fp: c.fp,
                    missed: c.missed,
                    precision,
                    recall,
                    ale: if c.tp > 0 { Some(c.ale_sum / c.tp as f64) } else { None },
                });
            }
        }
        MetricsReport {
            map: if used > 0 { p_sum / used as f64 } else { 0.0 },
            mar: if used > 0 { r_sum / used as f64 } else { 0.0 },
            male: if tp_total > 0 { Some(ale_total / tp_total as f64) } else { None },
            thresholds: self.thresholds.clone(),
            cells,
        }
    }
}

/// One (class, threshold) row of the final table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsCell {
    pub class_id: usize,
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub missed: u64,
    pub precision: f64,
    pub recall: f64,
    pub ale: Option<f64>,
}

/// Final metrics. `male` is `None` when nothing was ever localized within
/// tolerance; treat that as worse than any finite error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: f64,
    pub mar: f64,
    pub male: Option<f64>,
    pub thresholds: Vec<f64>,
    pub cells: Vec<MetricsCell>,
}

impl MetricsReport {
    /// class × threshold grid as CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,threshold,tp,fp,fn,precision,recall,ale\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.6},{}\n",
                c.class_id,
                c.threshold,
                c.tp,
                c.fp,
                c.missed,
                c.precision,
                c.recall,
                c.ale.map_or_else(|| "nan".into(), |a| format!("{a:.6}")),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand::SeedableRng as _;

    fn gt(p: [f64; 3], class_id: usize) -> EvalGroundTruth {
        EvalGroundTruth { position: p, class_id }
    }

    fn pred(p: [f64; 3], class_id: usize) -> Prediction {
        Prediction {
            position: p,
            class_id,
            prob: 0.9,
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let mut tally = EvalTally::new(2, &DEFAULT_THRESHOLDS).unwrap();
        let gts = vec![gt([0.0, 0.0, 1.0], 0), gt([1.0, 0.5, 1.2], 1)];
        let preds: Vec<Prediction> = gts.iter().map(|g| pred(g.position, g.class_id)).collect();
        tally.add_view(&preds, &gts).unwrap();
        let rep = tally.report();
        assert_eq!(rep.map, 1.0);
        assert_eq!(rep.mar, 1.0);
        assert_eq!(rep.male, Some(0.0));
        for c in &rep.cells {
            assert_eq!(c.tp, 1);
            assert_eq!(c.fp, 0);
            assert_eq!(c.missed, 0);
        }
    }

    #[test]
    fn empty_predictions_are_all_misses() {
        let mut tally = EvalTally::new(1, &DEFAULT_THRESHOLDS).unwrap();
        let gts = vec![gt([0.0, 0.0, 1.0], 0), gt([1.0, 0.0, 1.0], 0), gt([2.0, 0.0, 1.0], 0)];
        tally.add_view(&[], &gts).unwrap();
        let rep = tally.report();
        assert_eq!(rep.map, 0.0);
        assert_eq!(rep.mar, 0.0);
        assert_eq!(rep.male, None);
        for c in &rep.cells {
            assert_eq!(c.missed, 3);
            assert_eq!(c.precision, 0.0);
        }
    }

    #[test]
    fn offset_pair_crosses_thresholds() {
        // two sources 2 m apart, both predictions 0.6 m off: misses at the
        // 0.5 m tolerance, hits at 0.8 m and 1.2 m
        let mut tally = EvalTally::new(1, &DEFAULT_THRESHOLDS).unwrap();
        let gts = vec![gt([0.0, 0.0, 0.0], 0), gt([2.0, 0.0, 0.0], 0)];
        let preds = vec![pred([0.0, 0.6, 0.0], 0), pred([2.0, 0.6, 0.0], 0)];
        tally.add_view(&preds, &gts).unwrap();
        let rep = tally.report();
        let by_t: Vec<&MetricsCell> = rep.cells.iter().collect();
        assert_eq!((by_t[0].tp, by_t[0].fp, by_t[0].missed), (0, 2, 2));
        assert_eq!((by_t[1].tp, by_t[1].fp, by_t[1].missed), (2, 0, 0));
        assert_eq!((by_t[2].tp, by_t[2].fp, by_t[2].missed), (2, 0, 0));
        assert!((by_t[1].ale.unwrap() - 0.6).abs() < 1e-12);
        assert!((rep.male.unwrap() - 0.6).abs() < 1e-12);
        assert!((rep.map - (0.0 + 1.0 + 1.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn duplicates_halve_precision_not_recall() {
        let mut tally = EvalTally::new(1, &DEFAULT_THRESHOLDS).unwrap();
        let gts = vec![gt([0.0, 0.0, 1.0], 0), gt([1.5, 0.0, 1.0], 0)];
        let mut preds: Vec<Prediction> = gts.iter().map(|g| pred(g.position, 0)).collect();
        preds.extend(gts.iter().map(|g| pred(g.position, 0)));
        tally.add_view(&preds, &gts).unwrap();
        let rep = tally.report();
        assert!((rep.map - 0.5).abs() < 1e-12);
        assert_eq!(rep.mar, 1.0);
        for c in &rep.cells {
            assert_eq!(c.tp, 2);
            assert_eq!(c.fp, 2);
            assert_eq!(c.missed, 0);
        }
    }

    #[test]
    fn extra_prediction_matches_nearest() {
        let mut tally = EvalTally::new(1, &[0.5]).unwrap();
        let gts = vec![gt([0.0, 0.0, 0.0], 0)];
        let preds = vec![pred([1.0, 0.0, 0.0], 0), pred([0.3, 0.0, 0.0], 0)];
        tally.add_view(&preds, &gts).unwrap();
        let rep = tally.report();
        assert_eq!((rep.cells[0].tp, rep.cells[0].fp, rep.cells[0].missed), (1, 1, 0));
        assert!((rep.cells[0].ale.unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn classes_never_cross_match() {
        let mut tally = EvalTally::new(2, &[1.2]).unwrap();
        // prediction of the wrong class sits exactly on the source
        tally
            .add_view(&[pred([0.0, 0.0, 1.0], 1)], &[gt([0.0, 0.0, 1.0], 0)])
            .unwrap();
        let rep = tally.report();
        let c0 = &rep.cells[0];
        let c1 = &rep.cells[1];
        assert_eq!((c0.tp, c0.fp, c0.missed), (0, 0, 1));
        assert_eq!((c1.tp, c1.fp, c1.missed), (0, 1, 0));
        assert_eq!(rep.map, 0.0);
    }

    #[test]
    fn unused_classes_do_not_dilute() {
        let mut tally = EvalTally::new(5, &DEFAULT_THRESHOLDS).unwrap();
        let gts = vec![gt([0.0, 0.0, 1.0], 0)];
        tally.add_view(&[pred([0.0, 0.0, 1.0], 0)], &gts).unwrap();
        let rep = tally.report();
        assert_eq!(rep.map, 1.0, "classes 1..4 never appear and must not count");
        assert_eq!(rep.mar, 1.0);
    }

    fn rand_point(rng: &mut impl rand::Rng) -> [f64; 3] {
        [
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(0.0..3.0),
        ]
    }

    #[test]
    fn counting_identities_and_monotonicity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..40 {
            let classes = rng.gen_range(1..4usize);
            let n_gt = rng.gen_range(0..5usize);
            let n_pred = rng.gen_range(0..5usize);
            let gts: Vec<EvalGroundTruth> = (0..n_gt)
                .map(|_| {
                    let p = rand_point(&mut rng);
                    gt(p, rng.gen_range(0..classes))
                })
                .collect();
            let preds: Vec<Prediction> = (0..n_pred)
                .map(|_| {
                    let p = rand_point(&mut rng);
                    pred(p, rng.gen_range(0..classes))
                })
                .collect();
            let mut tally = EvalTally::new(classes, &DEFAULT_THRESHOLDS).unwrap();
            tally.add_view(&preds, &gts).unwrap();
            let rep = tally.report();
            for class in 0..classes {
                let gt_c = gts.iter().filter(|g| g.class_id == class).count() as u64;
                let pred_c = preds.iter().filter(|p| p.class_id == class).count() as u64;
                let mut prev_tp = 0;
                for (ti, _) in DEFAULT_THRESHOLDS.iter().enumerate() {
                    let c = &rep.cells[class * 3 + ti];
                    assert_eq!(c.tp + c.missed, gt_c, "per-class source count");
                    assert_eq!(c.tp + c.fp, pred_c, "per-class prediction count");
                    assert!(c.tp >= prev_tp, "hits grow with tolerance");
                    prev_tp = c.tp;
                }
            }
        }
    }

    #[test]
    fn invariant_to_input_order() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let gts: Vec<EvalGroundTruth> = (0..4).map(|i| gt(rand_point(&mut rng), i % 2)).collect();
        let preds: Vec<Prediction> = (0..5).map(|i| pred(rand_point(&mut rng), i % 2)).collect();

        let mut a = EvalTally::new(2, &DEFAULT_THRESHOLDS).unwrap();
        a.add_view(&preds, &gts).unwrap();

        let mut preds_rev = preds.clone();
        preds_rev.reverse();
        let mut gts_rev = gts.clone();
        gts_rev.reverse();
        let mut b = EvalTally::new(2, &DEFAULT_THRESHOLDS).unwrap();
        b.add_view(&preds_rev, &gts_rev).unwrap();

        assert_eq!(a.report(), b.report());
    }

    #[test]
    fn merge_equals_sequential_accumulation() {
        let gts1 = vec![gt([0.0, 0.0, 1.0], 0)];
        let gts2 = vec![gt([1.0, 1.0, 1.0], 1), gt([0.5, 0.2, 2.0], 0)];
        let preds1 = vec![pred([0.1, 0.0, 1.0], 0)];
        let preds2 = vec![pred([1.0, 1.0, 1.6], 1)];

        let mut seq = EvalTally::new(2, &DEFAULT_THRESHOLDS).unwrap();
        seq.add_view(&preds1, &gts1).unwrap();
        seq.add_view(&preds2, &gts2).unwrap();

        let mut left = EvalTally::new(2, &DEFAULT_THRESHOLDS).unwrap();
        left.add_view(&preds1, &gts1).unwrap();
        let mut right = EvalTally::new(2, &DEFAULT_THRESHOLDS).unwrap();
        right.add_view(&preds2, &gts2).unwrap();
        left.merge(&right).unwrap();

        assert_eq!(seq.report(), left.report());

        let other = EvalTally::new(3, &DEFAULT_THRESHOLDS).unwrap();
        assert!(left.merge(&other).is_err());
    }

    #[test]
    fn extraction_drops_no_source_rows_and_maps_to_world() {
        let positions =
            Tensor::from_vec(&[3, 3], vec![0.0, 0.0, 2.0, 1.0, -1.0, 3.0, 0.5, 0.5, 0.5]).unwrap();
        // rows: class 0 confident, no-source, class 1
        let logits = Tensor::from_vec(
            &[3, 3],
            vec![4.0, 0.0, 0.0, 0.0, 0.0, 5.0, -1.0, 3.0, 0.0],
        )
        .unwrap();
        let pose = RigidTransform::from_euler_zyx(0.0, 0.0, 0.0, Vec3::new(10.0, 0.0, 0.0));
        let preds = extract_predictions(&positions, &logits, &pose).unwrap();
        assert_eq!(preds.len(), 2);
        assert_eq!(preds[0].class_id, 0);
        assert_eq!(preds[0].position, [10.0, 0.0, 2.0]);
        let e = |x: f64| x.exp();
        let want = e(4.0) / (e(4.0) + 2.0 * e(0.0));
        assert!((preds[0].prob - want).abs() < 1e-12);
        assert_eq!(preds[1].class_id, 1);
        assert_eq!(preds[1].position, [10.5, 0.5, 0.5]);
    }

    #[test]
    fn report_serializes_and_tabulates() {
        let mut tally = EvalTally::new(2, &DEFAULT_THRESHOLDS).unwrap();
        tally
            .add_view(&[pred([0.0, 0.0, 1.0], 0)], &[gt([0.3, 0.0, 1.0], 0)])
            .unwrap();
        let rep = tally.report();
        let text = serde_json::to_string_pretty(&rep).unwrap();
        let back: MetricsReport = serde_json::from_str(&text).unwrap();
        assert_eq!(rep, back);
        assert!(text.contains("\"fn\""));

        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "class,threshold,tp,fp,fn,precision,recall,ale");
        assert_eq!(lines.len(), 1 + 2 * 3);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(EvalTally::new(0, &DEFAULT_THRESHOLDS).is_err());
        assert!(EvalTally::new(2, &[]).is_err());
        assert!(EvalTally::new(2, &[-0.5]).is_err());
        let mut tally = EvalTally::new(2, &DEFAULT_THRESHOLDS).unwrap();
        assert!(tally.add_view(&[pred([0.0, 0.0, 0.0], 7)], &[]).is_err());
        assert!(tally
            .add_view(&[pred([f64::NAN, 0.0, 0.0], 0)], &[])
            .is_err());
        assert!(tally.add_view(&[], &[gt([0.0, 0.0, 0.0], 9)]).is_err());
    }
}
