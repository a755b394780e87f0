//! Set-prediction training objective: per-view bipartite matching between
//! queries and sources, a position + classification loss, a depth-consistency
//! hinge, a cross-view consistency term, and their weighted total evaluated on
//! both the initial and the updated query sets (deep supervision).
//!
//! Conventions: each view predicts `q` queries in its own camera frame; the
//! common frame shared by the depth and cross-view terms is view 0's camera
//! frame. Matchings are recomputed per view and per stage and are not
//! differentiated through.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{backproject, project, Intrinsics, PixelPoint, RigidTransform, Vec3};
use crate::scene::DepthMap;
use serde::{Deserialize, Serialize};

/// Loss weights and matching-cost weights. All λ default to 1.0; σ is the
/// hinge slack in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_bm: f64,
    pub lambda_depth: f64,
    pub lambda_crossview: f64,
    pub sigma: f64,
    pub match_pos_weight: f64,
    pub match_class_weight: f64,
    pub use_depth: bool,
    pub use_crossview: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_bm: 1.0,
            lambda_depth: 1.0,
            lambda_crossview: 1.0,
            sigma: 0.3,
            match_pos_weight: 1.0,
            match_class_weight: 1.0,
            use_depth: true,
            use_crossview: true,
        }
    }
}

/// One view's decoded query set on the tape: positions `q×3` in the view's
/// camera frame and class logits `q×(k+1)` (last column = no-source).
#[derive(Debug, Clone, Copy)]
pub struct PredictedSet {
    pub positions: Var,
    pub logits: Var,
}

/// Ground truth expressed in one view's camera frame.
#[derive(Debug, Clone, Copy)]
pub struct ViewGroundTruth {
    pub position: Vec3,
    pub class_id: usize,
}

/// Ground truth in the world frame.
#[derive(Debug, Clone, Copy)]
pub struct SceneGroundTruth {
    pub position: Vec3,
    pub class_id: usize,
}

/// Per-view rendering inputs needed by the depth term.
#[derive(Debug, Clone, Copy)]
pub struct ViewLossInput<'a> {
    pub pose: RigidTransform,
    pub intrinsics: Intrinsics,
    pub depth: &'a DepthMap,
}

/// A perfect matching of the `q` queries onto `q` slots, where slots
/// `0..n_real` are real sources and the rest are no-source padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    slot_of_query: Vec<usize>,
    n_real: usize,
}

impl Assignment {
    pub fn len(&self) -> usize {
        self.slot_of_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slot_of_query.is_empty()
    }

    pub fn n_real(&self) -> usize {
        self.n_real
    }

    pub fn slot_of_query(&self, query: usize) -> usize {
        self.slot_of_query[query]
    }

    /// The real source index a query is matched to, if any.
    pub fn gt_of_query(&self, query: usize) -> Option<usize> {
        let slot = self.slot_of_query[query];
        (slot < self.n_real).then_some(slot)
    }

    /// The query matched to real source `gt` (every real slot is covered).
    pub fn query_of_gt(&self, gt: usize) -> usize {
        assert!(gt < self.n_real);
        self.slot_of_query
            .iter()
            .position(|&s| s == gt)
            .expect("assignment is a bijection")
    }

    /// Queries matched to real sources, ordered by source index.
    pub fn queries_by_gt(&self) -> Vec<usize> {
        (0..self.n_real).map(|g| self.query_of_gt(g)).collect()
    }
}

/// Minimum total cost over all perfect assignments of `rows × rows`
/// (Jonker–Volgenant shortest augmenting paths with potentials).
fn assignment_value(cost: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = 1-based row assigned to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[(p[j] - 1) * n + (j - 1)]).sum()
}

/// Minimum-cost perfect matching on a square matrix; returns the column
/// assigned to each row. Among equal-cost optima the lexicographically
/// smallest assignment vector is returned, so tie-heavy matrices (e.g. many
/// identical padding columns) give deterministic output.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    for row in cost {
        if row.len() != n {
            return Err(Error::Shape(format!(
                "hungarian: matrix must be square, got row of {} in n = {n}",
                row.len()
            )));
        }
        if let Some(bad) = row.iter().find(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("hungarian: non-finite cost {bad}")));
        }
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let flat: Vec<f64> = cost.iter().flat_map(|r| r.iter().copied()).collect();
    let base = assignment_value(&flat, n);
    let tol = 1e-9 * (1.0 + base.abs());

    // Fix rows one at a time to the smallest column that still admits an
    // optimal completion; each check re-solves the remaining submatrix.
    let mut out = vec![0usize; n];
    let mut used_col = vec![false; n];
    let mut fixed = 0.0f64;
    for r in 0..n {
        let free_rows: Vec<usize> = (r + 1..n).collect();
        let mut chosen = None;
        for c in 0..n {
            if used_col[c] {
                continue;
            }
            let free_cols: Vec<usize> = (0..n).filter(|&j| !used_col[j] && j != c).collect();
            let m = free_rows.len();
            let mut sub = Vec::with_capacity(m * m);
            for &fr in &free_rows {
                for &fc in &free_cols {
                    sub.push(cost[fr][fc]);
                }
            }
            let rest = assignment_value(&sub, m);
            if fixed + cost[r][c] + rest <= base + tol {
                chosen = Some(c);
                break;
            }
        }
        let c = chosen.ok_or_else(|| Error::Numeric("hungarian: no completion within tolerance".into()))?;
        out[r] = c;
        used_col[c] = true;
        fixed += cost[r][c];
    }
    Ok(out)
}

/// Row-wise softmax probabilities with a stable log-sum-exp.
fn softmax_rows_plain(logits: &Tensor) -> Vec<Vec<f64>> {
    let (r, c) = (logits.rows(), logits.cols());
    (0..r)
        .map(|i| {
            let row: Vec<f64> = (0..c).map(|j| logits.at2(i, j)).collect();
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / s).collect()
        })
        .collect()
}

/// Match `q` queries against the real sources padded with no-source slots.
/// Cost of (query, source) = w_pos·ℓ1(position) + w_cls·(1 − p(class));
/// cost of (query, padding) = w_cls·(1 − p(no-source)).
pub fn match_queries(
    positions: &Tensor,
    logits: &Tensor,
    gts: &[ViewGroundTruth],
    cfg: &LossConfig,
) -> Result<Assignment> {
    if positions.shape().len() != 2 || positions.cols() != 3 {
        return Err(Error::Shape(format!("match_queries: positions must be q×3, got {:?}", positions.shape())));
    }
    if logits.shape().len() != 2 || logits.rows() != positions.rows() {
        return Err(Error::Shape(format!(
            "match_queries: logits {:?} incompatible with positions {:?}",
            logits.shape(),
            positions.shape()
        )));
    }
    let q = positions.rows();
    let classes = logits.cols();
    if classes < 2 {
        return Err(Error::Shape("match_queries: need at least one real class plus no-source".into()));
    }
    let null_class = classes - 1;
    if gts.len() > q {
        return Err(Error::Invalid(format!(
            "match_queries: {} sources but only {q} queries — increase q",
            gts.len()
        )));
    }
    if let Some(bad) = gts.iter().find(|g| g.class_id >= null_class) {
        return Err(Error::Invalid(format!(
            "match_queries: class id {} out of {} real classes",
            bad.class_id, null_class
        )));
    }
    let probs = softmax_rows_plain(logits);
    let mut cost = vec![vec![0.0f64; q]; q];
    for (i, row) in cost.iter_mut().enumerate() {
        let null_cost = cfg.match_class_weight * (1.0 - probs[i][null_class]);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = if j < gts.len() {
                let l1 = (positions.at2(i, 0) - gts[j].position.x).abs()
                    + (positions.at2(i, 1) - gts[j].position.y).abs()
                    + (positions.at2(i, 2) - gts[j].position.z).abs();
                cfg.match_pos_weight * l1 + cfg.match_class_weight * (1.0 - probs[i][gts[j].class_id])
            } else {
                null_cost
            };
        }
    }
    Ok(Assignment {
        slot_of_query: hungarian(&cost)?,
        n_real: gts.len(),
    })
}

/// One view's matching loss: mean over queries of the matched-position ℓ1
/// (zero for no-source matches) plus the mean cross-entropy of every query's
/// logits against its matched slot's class.
pub fn loss_bm(tape: &mut Tape, pred: &PredictedSet, gts: &[ViewGroundTruth], assign: &Assignment) -> Result<Var> {
    let q = tape.value(pred.positions).rows();
    let classes = tape.value(pred.logits).cols();
    if assign.len() != q {
        return Err(Error::Shape(format!("loss_bm: assignment of {} vs {q} queries", assign.len())));
    }
    if assign.n_real() != gts.len() {
        return Err(Error::Shape(format!(
            "loss_bm: assignment covers {} sources but {} given",
            assign.n_real(),
            gts.len()
        )));
    }
    let targets: Vec<usize> = (0..q)
        .map(|i| match assign.gt_of_query(i) {
            Some(g) => gts[g].class_id,
            None => classes - 1,
        })
        .collect();
    let ce = tape.cross_entropy_mean(pred.logits, &targets)?;
    if assign.n_real() == 0 {
        return Ok(ce);
    }
    let idx = assign.queries_by_gt();
    let gathered = tape.gather_rows(pred.positions, &idx)?;
    let mut target = Tensor::zeros(&[idx.len(), 3]);
    for (g, gt) in gts.iter().enumerate() {
        target.data_mut()[g * 3] = gt.position.x;
        target.data_mut()[g * 3 + 1] = gt.position.y;
        target.data_mut()[g * 3 + 2] = gt.position.z;
    }
    let target = tape.leaf(target);
    let diff = tape.sub(gathered, target)?;
    let l1 = tape.abs(diff);
    let sum = tape.sum_all(l1);
    let pos_term = tape.scale(sum, 1.0 / q as f64);
    tape.add(ce, pos_term)
}

fn rigid_to_arrays(t: &RigidTransform) -> ([f64; 9], [f64; 3]) {
    let m = t.rotation_matrix();
    (
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ],
        [t.translation.x, t.translation.y, t.translation.z],
    )
}

/// Anchor a point (given in view 0's camera frame) to the scene surfaces: in
/// every view, look up the rendered depth behind the point's projection and
/// backproject that cell; the centroid of the collected surface points, again
/// in view 0's frame. `None` when no view sees the point or every lookup hits
/// the no-surface sentinel.
pub fn depth_centroid(p_common: &Vec3, views: &[ViewLossInput]) -> Option<Vec3> {
    if views.is_empty() {
        return None;
    }
    let common = views[0].pose;
    let p_world = common.apply(p_common);
    let mut sum = Vec3::zeros();
    let mut count = 0usize;
    for view in views {
        let w2c = view.pose.inverse();
        let pix = project(&view.intrinsics, &w2c.apply(&p_world));
        if !pix.valid {
            continue;
        }
        let px = (pix.x.floor() as usize).min(view.intrinsics.width - 1);
        let py = (pix.y.floor() as usize).min(view.intrinsics.height - 1);
        let d = view.depth.at(px, py);
        if !d.is_finite() {
            continue;
        }
        let center = PixelPoint {
            x: px as f64 + 0.5,
            y: py as f64 + 0.5,
            valid: true,
        };
        let surface_cam = backproject(&view.intrinsics, &center, d).expect("finite positive depth");
        sum += view.pose.apply(&surface_cam);
        count += 1;
    }
    if count == 0 {
        None
    } else {
        Some(common.inverse().apply(&(sum / count as f64)))
    }
}

/// Depth-consistency hinge, pooled over every (view, matched-real-query)
/// pair: max(‖P⁺ − centroid‖₂ − σ, 0) where P⁺ is the prediction mapped to
/// the common frame. Pairs without a centroid contribute zero but stay in the
/// denominator.
pub fn loss_depth(
    tape: &mut Tape,
    preds: &[PredictedSet],
    assigns: &[Assignment],
    views: &[ViewLossInput],
    sigma: f64,
) -> Result<Var> {
    if preds.len() != assigns.len() || preds.len() != views.len() {
        return Err(Error::Shape("loss_depth: preds/assigns/views length mismatch".into()));
    }
    let n_gt = assigns.first().map_or(0, |a| a.n_real());
    if preds.is_empty() || n_gt == 0 {
        return Ok(tape.leaf(Tensor::scalar(0.0)));
    }
    let common_inv = views[0].pose.inverse();
    let mut acc: Option<Var> = None;
    for ((pred, assign), view) in preds.iter().zip(assigns).zip(views) {
        let idx = assign.queries_by_gt();
        let gathered = tape.gather_rows(pred.positions, &idx)?;
        let (rot, trans) = rigid_to_arrays(&common_inv.compose(&view.pose));
        let p_plus = tape.affine_rows(gathered, &rot, &trans)?;

        let vals = tape.value(p_plus).clone();
        let mut centroid = Tensor::zeros(&[n_gt, 3]);
        let mut mask = Tensor::zeros(&[n_gt]);
        for g in 0..n_gt {
            let p = Vec3::new(vals.at2(g, 0), vals.at2(g, 1), vals.at2(g, 2));
            match depth_centroid(&p, views) {
                Some(c) => {
                    centroid.data_mut()[g * 3] = c.x;
                    centroid.data_mut()[g * 3 + 1] = c.y;
                    centroid.data_mut()[g * 3 + 2] = c.z;
                    mask.data_mut()[g] = 1.0;
                }
                None => {
                    // masked out; keep the row equal to the prediction so the
                    // norm guard never sees a spurious large value
                    centroid.data_mut()[g * 3] = p.x;
                    centroid.data_mut()[g * 3 + 1] = p.y;
                    centroid.data_mut()[g * 3 + 2] = p.z;
                }
            }
        }
        let centroid = tape.leaf(centroid);
        let mask = tape.leaf(mask);
        let diff = tape.sub(p_plus, centroid)?;
        let dist = tape.row_norm(diff)?;
        let hinged = tape.hinge_shift(dist, sigma);
        let masked = tape.mul(hinged, mask)?;
        let s = tape.sum_all(masked);
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    let total = acc.expect("at least one view");
    Ok(tape.scale(total, 1.0 / (preds.len() * n_gt) as f64))
}

/// Cross-view consistency: for every real source and every unordered view
/// pair (i, j), the distance between view i's matched prediction and view j's
/// matched prediction carried into view i's frame; summed over pairs, divided
/// by C(N,2), averaged over sources. Zero for a single view or no sources.
pub fn loss_crossview(
    tape: &mut Tape,
    preds: &[PredictedSet],
    assigns: &[Assignment],
    poses: &[RigidTransform],
) -> Result<Var> {
    if preds.len() != assigns.len() || preds.len() != poses.len() {
        return Err(Error::Shape("loss_crossview: preds/assigns/poses length mismatch".into()));
    }
    let n = preds.len();
    let n_gt = assigns.first().map_or(0, |a| a.n_real());
    if n < 2 || n_gt == 0 {
        return Ok(tape.leaf(Tensor::scalar(0.0)));
    }
    let gathered: Vec<Var> = preds
        .iter()
        .zip(assigns)
        .map(|(p, a)| tape.gather_rows(p.positions, &a.queries_by_gt()))
        .collect::<Result<_>>()?;
    let mut acc: Option<Var> = None;
    for i in 0..n {
        let w2i = poses[i].inverse();
        for j in i + 1..n {
            let (rot, trans) = rigid_to_arrays(&w2i.compose(&poses[j]));
            let carried = tape.affine_rows(gathered[j], &rot, &trans)?;
            let diff = tape.sub(carried, gathered[i])?;
            let dist = tape.row_norm(diff)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, dist)?,
                None => dist,
            });
        }
    }
    let summed = tape.sum_all(acc.expect("n ≥ 2"));
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(tape.scale(summed, 1.0 / (pairs * n_gt as f64)))
}

/// Per-term values of one total-loss evaluation. Each `l_*` already sums the
/// initial-stage and updated-stage contributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_bm: f64,
    pub l_depth: f64,
    pub l_crossview: f64,
    pub total: f64,
    pub lambdas: [f64; 3],
    pub sigma: f64,
}

fn stage_terms(
    tape: &mut Tape,
    preds: &[PredictedSet],
    views: &[ViewLossInput],
    view_gts: &[Vec<ViewGroundTruth>],
    cfg: &LossConfig,
) -> Result<(Var, Var, Var)> {
    let assigns: Vec<Assignment> = preds
        .iter()
        .zip(view_gts)
        .map(|(p, gts)| {
            let pos = tape.value(p.positions).clone();
            let logits = tape.value(p.logits).clone();
            match_queries(&pos, &logits, gts, cfg)
        })
        .collect::<Result<_>>()?;

    let mut bm_acc: Option<Var> = None;
    for ((pred, gts), assign) in preds.iter().zip(view_gts).zip(&assigns) {
        let v = loss_bm(tape, pred, gts, assign)?;
        bm_acc = Some(match bm_acc {
            Some(a) => tape.add(a, v)?,
            None => v,
        });
    }
    let bm_sum = bm_acc.expect("at least one view");
    let bm = tape.scale(bm_sum, 1.0 / preds.len() as f64);

    let depth = if cfg.use_depth {
        loss_depth(tape, preds, &assigns, views, cfg.sigma)?
    } else {
        tape.leaf(Tensor::scalar(0.0))
    };
    let poses: Vec<RigidTransform> = views.iter().map(|v| v.pose).collect();
    let crossview = if cfg.use_crossview {
        loss_crossview(tape, preds, &assigns, &poses)?
    } else {
        tape.leaf(Tensor::scalar(0.0))
    };
    Ok((bm, depth, crossview))
}

/// The full objective with deep supervision: every term is computed once on
/// the initial predictions and once on the updated ones (each stage gets its
/// own matching) and the two are added before weighting.
pub fn total_loss(
    tape: &mut Tape,
    initial: &[PredictedSet],
    updated: &[PredictedSet],
    views: &[ViewLossInput],
    gts: &[SceneGroundTruth],
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    if initial.is_empty() || initial.len() != updated.len() || initial.len() != views.len() {
        return Err(Error::Shape(format!(
            "total_loss: {} initial / {} updated / {} views",
            initial.len(),
            updated.len(),
            views.len()
        )));
    }
    let view_gts: Vec<Vec<ViewGroundTruth>> = views
        .iter()
        .map(|v| {
            let w2c = v.pose.inverse();
            gts.iter()
                .map(|g| ViewGroundTruth {
                    position: w2c.apply(&g.position),
                    class_id: g.class_id,
                })
                .collect()
        })
        .collect();

    let (bm_i, depth_i, cv_i) = stage_terms(tape, initial, views, &view_gts, cfg)?;
    let (bm_u, depth_u, cv_u) = stage_terms(tape, updated, views, &view_gts, cfg)?;

    let bm = tape.add(bm_i, bm_u)?;
    let depth = tape.add(depth_i, depth_u)?;
    let crossview = tape.add(cv_i, cv_u)?;

    let wb = tape.scale(bm, cfg.lambda_bm);
    let wd = tape.scale(depth, cfg.lambda_depth);
    let wc = tape.scale(crossview, cfg.lambda_crossview);
    let partial = tape.add(wb, wd)?;
    let total = tape.add(partial, wc)?;

    let breakdown = LossBreakdown {
        l_bm: tape.value(bm).item(),
        l_depth: tape.value(depth).item(),
        l_crossview: tape.value(crossview).item(),
        total: tape.value(total).item(),
        lambdas: [cfg.lambda_bm, cfg.lambda_depth, cfg.lambda_crossview],
        sigma: cfg.sigma,
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::geometry::Intrinsics;
    use crate::scene::{generate_scene, render_views, AppearanceFieldSpec, SceneConfig, ViewConfig};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lex_permutations(n: usize) -> Vec<Vec<usize>> {
        let mut p: Vec<usize> = (0..n).collect();
        let mut all = vec![p.clone()];
        loop {
            let mut i = n - 1;
            while i > 0 && p[i - 1] >= p[i] {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            let mut j = n - 1;
            while p[j] <= p[i - 1] {
                j -= 1;
            }
            p.swap(i - 1, j);
            p[i..].reverse();
            all.push(p.clone());
        }
        all
    }

    fn brute_force(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
        let n = cost.len();
        let mut best: Option<(Vec<usize>, f64)> = None;
        for perm in lex_permutations(n) {
            let total: f64 = perm.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
            // strict < keeps the first (lexicographically smallest) optimum
            if best.as_ref().map_or(true, |(_, b)| total < *b) {
                best = Some((perm, total));
            }
        }
        best.unwrap()
    }

    #[test]
    fn hungarian_hand_cases() {
        assert_eq!(hungarian(&[]).unwrap(), Vec::<usize>::new());
        assert_eq!(hungarian(&[vec![7.0]]).unwrap(), vec![0]);
        // 0-diagonal: identity is the unique optimum
        let eye = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(hungarian(&eye).unwrap(), vec![0, 1]);
        assert_eq!(hungarian(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap(), vec![0, 1]);
        // anti-diagonal optimum
        assert_eq!(hungarian(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap(), vec![1, 0]);
        // all ties → lexicographically smallest assignment
        assert_eq!(hungarian(&[vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]]).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn hungarian_rejects_bad_input() {
        assert!(matches!(
            hungarian(&[vec![1.0, 2.0], vec![3.0]]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            hungarian(&[vec![1.0, f64::NAN], vec![3.0, 4.0]]),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            hungarian(&[vec![1.0, f64::INFINITY], vec![3.0, 4.0]]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn hungarian_matches_brute_force_on_random_7x7() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..200 {
            let cost: Vec<Vec<f64>> = (0..7)
                .map(|_| (0..7).map(|_| rng.gen_range(0.0..10.0)).collect())
                .collect();
            let got = hungarian(&cost).unwrap();
            let (want, want_total) = brute_force(&cost);
            let got_total: f64 = got.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
            assert!((got_total - want_total).abs() < 1e-9);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn hungarian_tie_break_matches_brute_force() {
        // coarse quantization forces many exactly-equal optima
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let cost: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..5).map(|_| rng.gen_range(0..3) as f64 * 0.5).collect())
                .collect();
            let got = hungarian(&cost).unwrap();
            let (want, want_total) = brute_force(&cost);
            let got_total: f64 = got.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
            assert_eq!(got_total, want_total);
            assert_eq!(got, want, "cost {cost:?}");
        }
    }

    #[test]
    fn hungarian_output_is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let cost: Vec<Vec<f64>> = (0..8)
                .map(|_| (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect())
                .collect();
            let mut a = hungarian(&cost).unwrap();
            a.sort_unstable();
            assert_eq!(a, (0..8).collect::<Vec<_>>());
        }
    }

    fn pos_tensor(rows: &[[f64; 3]]) -> Tensor {
        Tensor::from_vec(&[rows.len(), 3], rows.iter().flatten().copied().collect()).unwrap()
    }

    fn logit_tensor(rows: &[Vec<f64>]) -> Tensor {
        let c = rows[0].len();
        Tensor::from_vec(&[rows.len(), c], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn matching_prefers_uncrossed_pairing() {
        let cfg = LossConfig::default();
        let positions = pos_tensor(&[[0.0, 0.0, 1.0], [1.0, 0.0, 1.0]]);
        // both queries uninformative about class
        let logits = logit_tensor(&[vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]);
        let gts = [
            ViewGroundTruth {
                position: Vec3::new(1.0, 0.0, 1.0),
                class_id: 0,
            },
            ViewGroundTruth {
                position: Vec3::new(0.0, 0.0, 1.0),
                class_id: 0,
            },
        ];
        let a = match_queries(&positions, &logits, &gts, &cfg).unwrap();
        assert_eq!(a.gt_of_query(0), Some(1));
        assert_eq!(a.gt_of_query(1), Some(0));
        assert_eq!(a.query_of_gt(0), 1);
        assert_eq!(a.query_of_gt(1), 0);
    }

    #[test]
    fn matching_uses_class_probability() {
        let cfg = LossConfig::default();
        // two queries at the same spot; only the second believes in class 0
        let positions = pos_tensor(&[[0.5, 0.5, 1.0], [0.5, 0.5, 1.0]]);
        let logits = logit_tensor(&[vec![-4.0, 0.0, 4.0], vec![4.0, 0.0, -4.0]]);
        let gts = [ViewGroundTruth {
            position: Vec3::new(0.5, 0.5, 1.0),
            class_id: 0,
        }];
        let a = match_queries(&positions, &logits, &gts, &cfg).unwrap();
        assert_eq!(a.gt_of_query(0), None);
        assert_eq!(a.gt_of_query(1), Some(0));
    }

    #[test]
    fn matching_edge_cases() {
        let cfg = LossConfig::default();
        let positions = pos_tensor(&[[0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]);
        let logits = logit_tensor(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        // no sources → every query on a padding slot
        let a = match_queries(&positions, &logits, &[], &cfg).unwrap();
        assert_eq!(a.n_real(), 0);
        assert!((0..2).all(|q| a.gt_of_query(q).is_none()));
        // more sources than queries
        let gts: Vec<ViewGroundTruth> = (0..3)
            .map(|i| ViewGroundTruth {
                position: Vec3::new(i as f64, 0.0, 1.0),
                class_id: 0,
            })
            .collect();
        match match_queries(&positions, &logits, &gts, &cfg) {
            Err(Error::Invalid(msg)) => assert!(msg.contains("increase q")),
            other => panic!("expected invalid, got {other:?}"),
        }
        // class id out of range (only one real class here)
        let bad = [ViewGroundTruth {
            position: Vec3::new(0.0, 0.0, 1.0),
            class_id: 1,
        }];
        assert!(match_queries(&positions, &logits, &bad, &cfg).is_err());
    }

    #[test]
    fn bm_loss_hand_case() {
        let cfg = LossConfig::default();
        let mut tape = Tape::new();
        let positions = tape.leaf(pos_tensor(&[[0.0, 0.0, 1.0]]));
        let logits = tape.leaf(logit_tensor(&[vec![0.0, 0.0]]));
        let pred = PredictedSet { positions, logits };
        let gts = [ViewGroundTruth {
            position: Vec3::new(0.1, 0.0, 1.0),
            class_id: 0,
        }];
        let pv = tape.value(positions).clone();
        let lv = tape.value(logits).clone();
        let assign = match_queries(&pv, &lv, &gts, &cfg).unwrap();
        let loss = loss_bm(&mut tape, &pred, &gts, &assign).unwrap();
        let want = 0.1 + (2.0f64).ln();
        assert!((tape.value(loss).item() - want).abs() < 1e-4);
    }

    #[test]
    fn bm_loss_uniform_logits_is_ln_classes() {
        let cfg = LossConfig::default();
        let mut tape = Tape::new();
        let positions = tape.leaf(pos_tensor(&[[0.2, 0.0, 1.0], [-0.4, 0.1, 2.0]]));
        let logits = tape.leaf(logit_tensor(&[vec![0.0; 6], vec![0.0; 6]]));
        let pred = PredictedSet { positions, logits };
        let gts = [
            ViewGroundTruth {
                position: Vec3::new(0.2, 0.0, 1.0),
                class_id: 2,
            },
            ViewGroundTruth {
                position: Vec3::new(-0.4, 0.1, 2.0),
                class_id: 4,
            },
        ];
        let pv = tape.value(positions).clone();
        let lv = tape.value(logits).clone();
        let assign = match_queries(&pv, &lv, &gts, &cfg).unwrap();
        let loss = loss_bm(&mut tape, &pred, &gts, &assign).unwrap();
        assert!((tape.value(loss).item() - (6.0f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn bm_loss_is_permutation_invariant() {
        let cfg = LossConfig::default();
        let pos_rows = [[0.3, -0.1, 1.2], [0.9, 0.4, 2.0], [-0.5, 0.2, 1.7], [0.1, 0.1, 0.8]];
        let logit_rows: Vec<Vec<f64>> = vec![
            vec![1.0, -0.5, 0.2],
            vec![-0.3, 0.8, 0.1],
            vec![0.4, 0.4, -0.2],
            vec![0.0, -0.1, 0.9],
        ];
        let gts = [
            ViewGroundTruth {
                position: Vec3::new(0.8, 0.5, 2.1),
                class_id: 1,
            },
            ViewGroundTruth {
                position: Vec3::new(0.2, -0.2, 1.1),
                class_id: 0,
            },
        ];
        let eval = |order: &[usize]| -> f64 {
            let mut tape = Tape::new();
            let p: Vec<[f64; 3]> = order.iter().map(|&i| pos_rows[i]).collect();
            let l: Vec<Vec<f64>> = order.iter().map(|&i| logit_rows[i].clone()).collect();
            let positions = tape.leaf(pos_tensor(&p));
            let logits = tape.leaf(logit_tensor(&l));
            let pred = PredictedSet { positions, logits };
            let pv = tape.value(positions).clone();
            let lv = tape.value(logits).clone();
            let assign = match_queries(&pv, &lv, &gts, &cfg).unwrap();
            let loss = loss_bm(&mut tape, &pred, &gts, &assign).unwrap();
            tape.value(loss).item()
        };
        let base = eval(&[0, 1, 2, 3]);
        for order in [[3, 1, 0, 2], [2, 3, 1, 0], [1, 0, 3, 2]] {
            assert!((eval(&order) - base).abs() < 1e-9);
        }
    }

    /// A single frontal view of the desk wall for depth-term tests.
    fn frontal_wall_view() -> (RigidTransform, Intrinsics, DepthMap) {
        let scene = crate::scene::AcousticScene {
            scene_id: 0,
            seed: 1,
            surfaces: vec![crate::scene::wall_patch(3.0, 2.0)],
            sources: vec![],
        };
        let pose = RigidTransform::look_at(
            &Vec3::new(0.0, -3.0, 0.0),
            &Vec3::new(0.0, 0.0, 0.0),
            &Vec3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        let k = Intrinsics::square_fov90(64);
        let depth = crate::scene::render_depth(&scene, &pose, &k);
        (pose, k, depth)
    }

    #[test]
    fn depth_centroid_lands_on_the_wall() {
        let (pose, k, depth) = frontal_wall_view();
        let views = [ViewLossInput {
            pose,
            intrinsics: k,
            depth: &depth,
        }];
        // 0.5 m in front of the wall on the optical axis
        let p = Vec3::new(0.0, 0.0, 2.5);
        let c = depth_centroid(&p, &views).unwrap();
        assert!((c.z - 3.0).abs() < 1e-9, "centroid depth {}", c.z);
        assert!(((c - p).norm() - 0.5).abs() < 0.1);
        // behind the camera → no view sees it
        assert!(depth_centroid(&Vec3::new(0.0, 0.0, -1.0), &views).is_none());
        // aimed above the wall: visible pixel, but the depth there is the
        // no-surface sentinel
        let above = pose.inverse().apply(&Vec3::new(0.0, 0.0, 1.4));
        assert!(depth_centroid(&above, &views).is_none());
        assert!(depth_centroid(&p, &[]).is_none());
    }

    fn one_hot_logits(class: usize, classes: usize, margin: f64) -> Vec<f64> {
        let mut row = vec![0.0; classes];
        row[class] = margin;
        row
    }

    /// loss_depth for a single matched query placed `d` meters from its own
    /// centroid along the optical axis.
    fn depth_loss_at_distance(d: f64) -> f64 {
        let (pose, k, depth) = frontal_wall_view();
        let views = [ViewLossInput {
            pose,
            intrinsics: k,
            depth: &depth,
        }];
        let c = depth_centroid(&Vec3::new(0.0, 0.0, 2.5), &views).unwrap();
        let p = c - Vec3::new(0.0, 0.0, d);
        // the prediction must anchor to the same cell as the probe point
        assert_eq!(depth_centroid(&p, &views), Some(c));

        let cfg = LossConfig::default();
        let mut tape = Tape::new();
        let positions = tape.leaf(pos_tensor(&[[p.x, p.y, p.z]]));
        let logits = tape.leaf(logit_tensor(&[one_hot_logits(0, 3, 30.0)]));
        let pred = PredictedSet { positions, logits };
        let gts = [ViewGroundTruth {
            position: p,
            class_id: 0,
        }];
        let pv = tape.value(positions).clone();
        let lv = tape.value(logits).clone();
        let assign = match_queries(&pv, &lv, &gts, &cfg).unwrap();
        let loss = loss_depth(&mut tape, &[pred], &[assign], &views, cfg.sigma).unwrap();
        tape.value(loss).item()
    }

    #[test]
    fn depth_loss_hinges_at_sigma() {
        assert_eq!(depth_loss_at_distance(0.2), 0.0);
        assert_eq!(depth_loss_at_distance(0.3), 0.0);
        assert!((depth_loss_at_distance(0.5) - 0.2).abs() < 1e-9);
    }

    fn identity_pose(t: Vec3) -> RigidTransform {
        RigidTransform {
            rotation: nalgebra::Rotation3::identity(),
            translation: t,
        }
    }

    fn matched_single(tape: &mut Tape, p: Vec3) -> (PredictedSet, Assignment) {
        let cfg = LossConfig::default();
        let positions = tape.leaf(pos_tensor(&[[p.x, p.y, p.z]]));
        let logits = tape.leaf(logit_tensor(&[one_hot_logits(0, 2, 20.0)]));
        let pred = PredictedSet { positions, logits };
        let pv = tape.value(positions).clone();
        let lv = tape.value(logits).clone();
        let gts = [ViewGroundTruth {
            position: p,
            class_id: 0,
        }];
        let assign = match_queries(&pv, &lv, &gts, &cfg).unwrap();
        (pred, assign)
    }

    #[test]
    fn crossview_loss_translation_frame_algebra() {
        let w = Vec3::new(0.3, 0.5, 2.0);
        let poses = [identity_pose(Vec3::zeros()), identity_pose(Vec3::new(1.0, 0.0, 0.0))];

        // consistent predictions: each view sees w in its own frame
        let mut tape = Tape::new();
        let (p0, a0) = matched_single(&mut tape, w);
        let (p1, a1) = matched_single(&mut tape, w - Vec3::new(1.0, 0.0, 0.0));
        let loss = loss_crossview(&mut tape, &[p0, p1], &[a0, a1], &poses).unwrap();
        assert!(tape.value(loss).item() < 1e-12);

        // offset view 1 by 0.2 m
        let mut tape = Tape::new();
        let (p0, a0) = matched_single(&mut tape, w);
        let (p1, a1) = matched_single(&mut tape, w - Vec3::new(1.0, 0.0, 0.0) + Vec3::new(0.2, 0.0, 0.0));
        let loss = loss_crossview(&mut tape, &[p0, p1], &[a0, a1], &poses).unwrap();
        assert!((tape.value(loss).item() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn crossview_loss_normalizes_by_view_pairs() {
        let w = Vec3::new(0.1, -0.2, 1.5);
        let delta = 0.12;
        let poses = [identity_pose(Vec3::zeros()); 4];
        let mut tape = Tape::new();
        let mut preds = Vec::new();
        let mut assigns = Vec::new();
        for v in 0..4 {
            let p = if v == 3 { w + Vec3::new(0.0, delta, 0.0) } else { w };
            let (pred, assign) = matched_single(&mut tape, p);
            preds.push(pred);
            assigns.push(assign);
        }
        let loss = loss_crossview(&mut tape, &preds, &assigns, &poses).unwrap();
        // 3 of the 6 unordered pairs differ by delta → 3·delta/6
        assert!((tape.value(loss).item() - delta / 2.0).abs() < 1e-12);
    }

    #[test]
    fn crossview_loss_trivial_cases_and_symmetry() {
        let w = Vec3::new(0.4, 0.1, 1.0);
        let mut tape = Tape::new();
        let (p0, a0) = matched_single(&mut tape, w);
        let poses1 = [identity_pose(Vec3::zeros())];
        let l1 = loss_crossview(&mut tape, &[p0], &[a0.clone()], &poses1).unwrap();
        assert_eq!(tape.value(l1).item(), 0.0);

        let pose_a = RigidTransform::look_at(&Vec3::new(0.3, -2.0, 0.2), &Vec3::zeros(), &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let pose_b = RigidTransform::look_at(&Vec3::new(-0.5, -2.3, -0.1), &Vec3::zeros(), &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let pa = pose_a.inverse().apply(&w) + Vec3::new(0.05, -0.02, 0.03);
        let pb = pose_b.inverse().apply(&w);
        let run = |first: (Vec3, RigidTransform), second: (Vec3, RigidTransform)| -> f64 {
            let mut tape = Tape::new();
            let (q0, s0) = matched_single(&mut tape, first.0);
            let (q1, s1) = matched_single(&mut tape, second.0);
            let loss = loss_crossview(&mut tape, &[q0, q1], &[s0, s1], &[first.1, second.1]).unwrap();
            tape.value(loss).item()
        };
        let ab = run((pa, pose_a), (pb, pose_b));
        let ba = run((pb, pose_b), (pa, pose_a));
        assert!(ab > 0.01);
        assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn total_loss_breakdown_invariant_and_flags() {
        let (pose, k, depth) = frontal_wall_view();
        let views = [ViewLossInput {
            pose,
            intrinsics: k,
            depth: &depth,
        }];
        let gts = [SceneGroundTruth {
            position: Vec3::new(0.4, 0.0, 0.3),
            class_id: 1,
        }];
        let build = |cfg: &LossConfig| -> LossBreakdown {
            let mut tape = Tape::new();
            let mk = |tape: &mut Tape, off: f64| -> PredictedSet {
                let positions = tape.leaf(pos_tensor(&[[0.3 + off, -0.1, 2.2], [1.4, 0.9, 3.1]]));
                let logits = tape.leaf(logit_tensor(&[
                    vec![0.2, 2.0, -0.4],
                    vec![-0.3, 0.1, 1.2],
                ]));
                PredictedSet { positions, logits }
            };
            let initial = [mk(&mut tape, 0.0)];
            let updated = [mk(&mut tape, 0.15)];
            let (var, breakdown) = total_loss(&mut tape, &initial, &updated, &views, &gts, cfg).unwrap();
            assert_eq!(tape.value(var).item(), breakdown.total);
            breakdown
        };
        let mut cfg = LossConfig {
            lambda_bm: 1.0,
            lambda_depth: 0.7,
            lambda_crossview: 1.3,
            ..LossConfig::default()
        };
        let b = build(&cfg);
        let want = cfg.lambda_bm * b.l_bm + cfg.lambda_depth * b.l_depth + cfg.lambda_crossview * b.l_crossview;
        assert!((b.total - want).abs() < 1e-12);
        assert!(b.l_bm > 0.0 && b.l_depth > 0.0);

        cfg.use_depth = false;
        cfg.use_crossview = false;
        let b2 = build(&cfg);
        assert_eq!(b2.l_depth, 0.0);
        assert_eq!(b2.l_crossview, 0.0);
        assert!((b2.total - cfg.lambda_bm * b2.l_bm).abs() < 1e-12);
        assert!((b2.l_bm - b.l_bm).abs() < 1e-12, "ablations must not change the matching term");
    }

    #[test]
    fn teacher_forced_predictions_reach_the_loss_floor() {
        let scene = generate_scene(&SceneConfig::desk(), 0, 17).unwrap();
        let vc = ViewConfig::desk();
        let field = AppearanceFieldSpec::generate(vc.appearance_dim, vc.appearance_freq_scale, 17).unwrap();
        let recordings = render_views(&scene, &vc, &field, None).unwrap();
        let k = vc.intrinsics();
        let views: Vec<ViewLossInput> = recordings
            .iter()
            .map(|r| ViewLossInput {
                pose: r.pose,
                intrinsics: k,
                depth: &r.depth,
            })
            .collect();
        let gts: Vec<SceneGroundTruth> = scene
            .sources
            .iter()
            .map(|s| SceneGroundTruth {
                position: s.position_v(),
                class_id: s.class_id,
            })
            .collect();

        let q = 4;
        let classes = 3; // two real classes + no-source
        let mut tape = Tape::new();
        let mut stage = Vec::new();
        for r in &recordings {
            let w2c = r.pose.inverse();
            let mut pos_rows = vec![[4.0, 4.0, 4.0]; q];
            let mut logit_rows = vec![one_hot_logits(classes - 1, classes, 30.0); q];
            for (i, g) in gts.iter().enumerate() {
                let p = w2c.apply(&g.position);
                pos_rows[i] = [p.x, p.y, p.z];
                logit_rows[i] = one_hot_logits(g.class_id, classes, 30.0);
            }
            let positions = tape.leaf(pos_tensor(&pos_rows));
            let logits = tape.leaf(logit_tensor(&logit_rows));
            stage.push(PredictedSet { positions, logits });
        }
        let cfg = LossConfig::default();
        let (_, b) = total_loss(&mut tape, &stage, &stage, &views, &gts, &cfg).unwrap();
        assert_eq!(b.l_depth, 0.0, "on-surface predictions sit within σ of their centroids");
        assert!(b.l_crossview < 1e-9, "crossview {}", b.l_crossview);
        assert!(b.l_bm < 1e-6, "bm {}", b.l_bm);
        assert!(b.total < 1e-6, "total {}", b.total);
    }

    #[test]
    fn total_loss_gradients_match_finite_differences() {
        let pose0 = RigidTransform::look_at(&Vec3::new(0.2, -2.0, 0.1), &Vec3::zeros(), &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let pose1 = RigidTransform::look_at(&Vec3::new(-0.3, -2.1, 0.2), &Vec3::zeros(), &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let k = Intrinsics::square_fov90(8);
        let flat = DepthMap {
            width: 8,
            height: 8,
            data: vec![2.5; 64],
        };
        let views = [
            ViewLossInput {
                pose: pose0,
                intrinsics: k,
                depth: &flat,
            },
            ViewLossInput {
                pose: pose1,
                intrinsics: k,
                depth: &flat,
            },
        ];
        let gts = [
            SceneGroundTruth {
                position: Vec3::new(0.31, 0.07, 0.22),
                class_id: 0,
            },
            SceneGroundTruth {
                position: Vec3::new(-0.23, -0.11, -0.17),
                class_id: 1,
            },
        ];
        let cfg = LossConfig::default();

        // 2 stages × 2 views × (positions, logits); offsets keep every ℓ1
        // coordinate, hinge, and matching decision away from its kink
        let mut inputs = Vec::new();
        for stage in 0..2 {
            for view in [&pose0, &pose1] {
                let w2c = view.inverse();
                let s = 0.1 + 0.07 * stage as f64;
                let mut pos_rows = Vec::new();
                let mut logit_rows = Vec::new();
                for (i, g) in gts.iter().enumerate() {
                    let p = w2c.apply(&g.position) + Vec3::new(0.21 + s, -0.17 + s, 0.23 - 0.4 * i as f64);
                    pos_rows.push([p.x, p.y, p.z]);
                    logit_rows.push(one_hot_logits(g.class_id, 3, 4.0));
                }
                pos_rows.push([1.9, 1.4, 4.3]);
                logit_rows.push(one_hot_logits(2, 3, 4.0));
                inputs.push(pos_tensor(&pos_rows));
                inputs.push(logit_tensor(&logit_rows));
            }
        }
        let err = grad_check(&inputs, |tape, vars| {
            let set = |i: usize| PredictedSet {
                positions: vars[2 * i],
                logits: vars[2 * i + 1],
            };
            let initial = [set(0), set(1)];
            let updated = [set(2), set(3)];
            let (total, _) = total_loss(tape, &initial, &updated, &views, &gts, &cfg)?;
            Ok(total)
        })
        .unwrap();
        assert!(err < 1e-5, "max relative gradient error {err}");
    }

    #[test]
    fn losses_are_nonnegative_under_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5150);
        let (pose, k, depth) = frontal_wall_view();
        let views = [ViewLossInput {
            pose,
            intrinsics: k,
            depth: &depth,
        }];
        let cfg = LossConfig::default();
        for _ in 0..25 {
            let n_gt = rng.gen_range(0..3);
            let gts: Vec<SceneGroundTruth> = (0..n_gt)
                .map(|_| SceneGroundTruth {
                    position: Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.8..0.8)),
                    class_id: rng.gen_range(0..2),
                })
                .collect();
            let mut tape = Tape::new();
            let mk = |tape: &mut Tape, rng: &mut ChaCha8Rng| -> PredictedSet {
                let pos_rows: Vec<[f64; 3]> = (0..4)
                    .map(|_| {
                        [
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(0.5..4.0),
                        ]
                    })
                    .collect();
                let logit_rows: Vec<Vec<f64>> = (0..4)
                    .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
                    .collect();
                let positions = tape.leaf(pos_tensor(&pos_rows));
                let logits = tape.leaf(logit_tensor(&logit_rows));
                PredictedSet { positions, logits }
            };
            let initial = [mk(&mut tape, &mut rng)];
            let updated = [mk(&mut tape, &mut rng)];
            let (_, b) = total_loss(&mut tape, &initial, &updated, &views, &gts, &cfg).unwrap();
            assert!(b.l_bm >= 0.0 && b.l_depth >= 0.0 && b.l_crossview >= 0.0 && b.total >= 0.0);
        }
    }
}
