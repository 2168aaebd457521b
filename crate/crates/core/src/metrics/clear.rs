use serde::{Deserialize, Serialize};

use super::{align, EvalConfig};
use crate::association::{hungarian, CostMatrix};
use crate::tracks::TrackSet;
use crate::Result;

/// CLEAR and identity metrics. Percentages except the raw counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearMetrics {
    pub idf1: f64,
    pub mota: f64,
    pub motp: f64,
    pub mt: f64,
    pub ml: f64,
    pub num_gt: usize,
    pub num_pred: usize,
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub id_switches: usize,
}

const CONTINUATION_BONUS: f64 = 1000.0;
const INELIGIBLE: f64 = CONTINUATION_BONUS + 2.0;

pub fn clear_identity(gt: &TrackSet, pred: &TrackSet, config: &EvalConfig) -> Result<ClearMetrics> {
    let aligned = align(gt, pred)?;
    let (ng, np) = (aligned.num_gt_ids, aligned.num_pred_ids);
    let thr = config.clear_threshold;

    let mut num_gt = 0usize;
    let mut num_pred = 0usize;
    let mut tp = 0usize;
    let mut id_switches = 0usize;
    let mut motp_sum = 0.0;
    let mut prev_match: Vec<Option<usize>> = vec![None; ng];
    let mut last_match: Vec<Option<usize>> = vec![None; ng];
    let mut gt_len = vec![0usize; ng];
    let mut gt_matched = vec![0usize; ng];
    let mut pair_count = vec![0usize; ng * np];

    for f in &aligned.frames {
        num_gt += f.gt.len();
        num_pred += f.pred.len();
        for &(g, _) in &f.gt {
            gt_len[g] += 1;
        }
        let dist: Vec<Vec<f64>> = f
            .gt
            .iter()
            .map(|(_, g)| f.pred.iter().map(|(_, p)| g.ground_distance(p)).collect())
            .collect();
        for (i, &(g, _)) in f.gt.iter().enumerate() {
            for (j, &(p, _)) in f.pred.iter().enumerate() {
                if dist[i][j] <= thr {
                    pair_count[g * np + p] += 1;
                }
            }
        }
        if f.gt.is_empty() || f.pred.is_empty() {
            prev_match.iter_mut().for_each(|m| *m = None);
            continue;
        }
        // Continuing the previous frame's pairing dominates any distance gain.
        let costs = CostMatrix::from_fn(f.gt.len(), f.pred.len(), |i, j| {
            let d = dist[i][j];
            if d > thr {
                return INELIGIBLE;
            }
            let cont = prev_match[f.gt[i].0] == Some(f.pred[j].0);
            let score = if cont { CONTINUATION_BONUS } else { 0.0 } + 1.0 + (1.0 - d / thr);
            INELIGIBLE - score
        });
        let mut current = vec![None; ng];
        for (i, j) in hungarian(&costs) {
            if dist[i][j] > thr {
                continue;
            }
            let (g, p) = (f.gt[i].0, f.pred[j].0);
            if matches!(last_match[g], Some(prev) if prev != p) {
                id_switches += 1;
            }
            last_match[g] = Some(p);
            current[g] = Some(p);
            gt_matched[g] += 1;
            tp += 1;
            motp_sum += 1.0 - dist[i][j] / thr;
        }
        prev_match = current;
    }

    let fn_ = num_gt - tp;
    let fp = num_pred - tp;
    let mota = (tp as f64 - fp as f64 - id_switches as f64) / num_gt.max(1) as f64 * 100.0;
    let motp = if tp > 0 { motp_sum / tp as f64 * 100.0 } else { 0.0 };

    let (mut mt, mut ml) = (0usize, 0usize);
    for g in 0..ng {
        let ratio = gt_matched[g] as f64 / gt_len[g].max(1) as f64;
        if ratio >= 0.8 {
            mt += 1;
        }
        if ratio <= 0.2 {
            ml += 1;
        }
    }
    let pct = |n: usize| if ng == 0 { 0.0 } else { n as f64 / ng as f64 * 100.0 };

    let idtp = if ng == 0 || np == 0 {
        0
    } else {
        let max_count = pair_count.iter().copied().max().unwrap_or(0) as f64;
        let costs = CostMatrix::from_fn(ng, np, |g, p| max_count - pair_count[g * np + p] as f64);
        hungarian(&costs)
            .into_iter()
            .map(|(g, p)| pair_count[g * np + p])
            .sum::<usize>()
    };
    let denom = num_gt + num_pred;
    let idf1 = if denom == 0 { 100.0 } else { 2.0 * idtp as f64 / denom as f64 * 100.0 };

    Ok(ClearMetrics {
        idf1,
        mota: if num_gt == 0 && num_pred == 0 { 100.0 } else { mota },
        motp,
        mt: pct(mt),
        ml: pct(ml),
        num_gt,
        num_pred,
        tp,
        fn_,
        fp,
        id_switches,
    })
}
