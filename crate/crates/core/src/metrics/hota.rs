use serde::{Deserialize, Serialize};

use super::{align, similarity, EvalConfig};
use crate::association::{hungarian, CostMatrix};
use crate::tracks::TrackSet;
use crate::Result;

/// HOTA family, each in `[0, 100]`, averaged over the alpha grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HotaMetrics {
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub loca: f64,
}

pub fn hota(gt: &TrackSet, pred: &TrackSet, config: &EvalConfig) -> Result<HotaMetrics> {
    let aligned = align(gt, pred)?;
    let (ng, np) = (aligned.num_gt_ids, aligned.num_pred_ids);
    let grid = &config.hota_alpha_grid;

    if ng == 0 || np == 0 {
        let v = if ng == 0 && np == 0 { 100.0 } else { 0.0 };
        return Ok(HotaMetrics { hota: v, deta: v, assa: v, loca: v });
    }

    let sims: Vec<Vec<Vec<f64>>> = aligned
        .frames
        .iter()
        .map(|f| {
            f.gt.iter()
                .map(|(_, g)| {
                    f.pred
                        .iter()
                        .map(|(_, p)| similarity(g, p, config.zero_distance))
                        .collect()
                })
                .collect()
        })
        .collect();

    // Global alignment between identities from soft per-frame overlaps.
    let mut gt_count = vec![0.0; ng];
    let mut pred_count = vec![0.0; np];
    let mut potential = vec![0.0; ng * np];
    for (f, s) in aligned.frames.iter().zip(&sims) {
        for &(g, _) in &f.gt {
            gt_count[g] += 1.0;
        }
        for &(p, _) in &f.pred {
            pred_count[p] += 1.0;
        }
        let row_sums: Vec<f64> = s.iter().map(|r| r.iter().sum()).collect();
        let col_sums: Vec<f64> = (0..f.pred.len())
            .map(|j| s.iter().map(|r| r[j]).sum())
            .collect();
        for (i, &(g, _)) in f.gt.iter().enumerate() {
            for (j, &(p, _)) in f.pred.iter().enumerate() {
                let denom = row_sums[i] + col_sums[j] - s[i][j];
                if denom > f64::EPSILON {
                    potential[g * np + p] += s[i][j] / denom;
                }
            }
        }
    }
    let alignment: Vec<f64> = (0..ng * np)
        .map(|k| {
            let (g, p) = (k / np, k % np);
            let denom = gt_count[g] + pred_count[p] - potential[k];
            if denom > 0.0 {
                potential[k] / denom
            } else {
                0.0
            }
        })
        .collect();

    let na = grid.len();
    let mut tp = vec![0usize; na];
    let mut fn_ = vec![0usize; na];
    let mut fp = vec![0usize; na];
    let mut loc_sum = vec![0.0; na];
    let mut matches = vec![vec![0.0f64; ng * np]; na];

    for (f, s) in aligned.frames.iter().zip(&sims) {
        let (g_n, p_n) = (f.gt.len(), f.pred.len());
        let pairs = if g_n == 0 || p_n == 0 {
            Vec::new()
        } else {
            // maximize alignment-weighted similarity
            let costs = CostMatrix::from_fn(g_n, p_n, |i, j| {
                1.0 - alignment[f.gt[i].0 * np + f.pred[j].0] * s[i][j]
            });
            hungarian(&costs)
        };
        for (a, &alpha) in grid.iter().enumerate() {
            let mut matched = 0;
            for &(i, j) in &pairs {
                if s[i][j] >= alpha - f64::EPSILON {
                    matched += 1;
                    loc_sum[a] += s[i][j];
                    matches[a][f.gt[i].0 * np + f.pred[j].0] += 1.0;
                }
            }
            tp[a] += matched;
            fn_[a] += g_n - matched;
            fp[a] += p_n - matched;
        }
    }

    let (mut hota_sum, mut det_sum, mut ass_sum, mut loc_total) = (0.0, 0.0, 0.0, 0.0);
    for a in 0..na {
        let mut ass = 0.0;
        for k in 0..ng * np {
            let m = matches[a][k];
            if m > 0.0 {
                let (g, p) = (k / np, k % np);
                ass += m * m / (gt_count[g] + pred_count[p] - m);
            }
        }
        let ass_a = ass / (tp[a].max(1) as f64);
        let det_a = tp[a] as f64 / ((tp[a] + fn_[a] + fp[a]).max(1) as f64);
        let loc_a = if tp[a] > 0 { loc_sum[a] / tp[a] as f64 } else { 0.0 };
        hota_sum += (det_a * ass_a).sqrt();
        det_sum += det_a;
        ass_sum += ass_a;
        loc_total += loc_a;
    }
    let scale = 100.0 / na as f64;
    Ok(HotaMetrics {
        hota: hota_sum * scale,
        deta: det_sum * scale,
        assa: ass_sum * scale,
        loca: loc_total * scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::WorldPoint;
    use crate::metrics::similarity;
    use crate::tracks::TrackPoint;
    use crate::Error;
    use std::collections::BTreeMap;

    fn set(tracks: &[(u64, &[(u32, f64, f64)])]) -> TrackSet {
        let mut t = TrackSet::new();
        for (id, pts) in tracks {
            for &(f, x, y) in pts.iter() {
                t.push(*id, TrackPoint { frame: f, position: WorldPoint::new(x, y, 0.0), observation: None });
            }
        }
        t
    }

    /// Reference evaluator: enumerates every per-frame matching instead of
    /// running an assignment solver.
    fn reference(gt: &TrackSet, pred: &TrackSet, cfg: &EvalConfig) -> (f64, f64, f64, f64) {
        let gf = gt.by_frame();
        let pf = pred.by_frame();
        let mut frames: Vec<u32> = gf.keys().chain(pf.keys()).copied().collect();
        frames.sort_unstable();
        frames.dedup();
        let empty = Vec::new();
        let mut gcount: BTreeMap<u64, f64> = BTreeMap::new();
        let mut pcount: BTreeMap<u64, f64> = BTreeMap::new();
        let mut pot: BTreeMap<(u64, u64), f64> = BTreeMap::new();
        for f in &frames {
            let g = gf.get(f).unwrap_or(&empty);
            let p = pf.get(f).unwrap_or(&empty);
            for (gid, _) in g {
                *gcount.entry(*gid).or_default() += 1.0;
            }
            for (pid, _) in p {
                *pcount.entry(*pid).or_default() += 1.0;
            }
            for (gid, gp) in g {
                for (pid, pp) in p {
                    let s = similarity(gp, pp, cfg.zero_distance);
                    let rs: f64 = p.iter().map(|(_, q)| similarity(gp, q, cfg.zero_distance)).sum();
                    let cs: f64 = g.iter().map(|(_, q)| similarity(q, pp, cfg.zero_distance)).sum();
                    if rs + cs - s > f64::EPSILON {
                        *pot.entry((*gid, *pid)).or_default() += s / (rs + cs - s);
                    }
                }
            }
        }
        let align = |g: u64, p: u64| {
            let pm = pot.get(&(g, p)).copied().unwrap_or(0.0);
            pm / (gcount[&g] + pcount[&p] - pm)
        };
        let mut out = (0.0, 0.0, 0.0, 0.0);
        for &alpha in &cfg.hota_alpha_grid {
            let (mut tp, mut fnn, mut fpp, mut loc) = (0.0, 0.0, 0.0, 0.0);
            let mut mc: BTreeMap<(u64, u64), f64> = BTreeMap::new();
            for f in &frames {
                let g = gf.get(f).unwrap_or(&empty);
                let p = pf.get(f).unwrap_or(&empty);
                // enumerate injective maps gt -> pred-or-none
                let mut best: Option<(f64, Vec<Option<usize>>)> = None;
                let mut cur = vec![None; g.len()];
                fn rec(
                    i: usize,
                    g: &[(u64, WorldPoint)],
                    p: &[(u64, WorldPoint)],
                    cur: &mut Vec<Option<usize>>,
                    best: &mut Option<(f64, Vec<Option<usize>>)>,
                    score: &dyn Fn(usize, usize) -> f64,
                ) {
                    if i == g.len() {
                        let used = cur.iter().flatten().count();
                        if used < g.len().min(p.len()) {
                            return;
                        }
                        let total: f64 = cur.iter().enumerate().filter_map(|(a, b)| b.map(|b| score(a, b))).sum();
                        if best.as_ref().map_or(true, |(t, _)| total > *t + 1e-12) {
                            *best = Some((total, cur.clone()));
                        }
                        return;
                    }
                    for j in 0..p.len() {
                        if !cur.contains(&Some(j)) {
                            cur[i] = Some(j);
                            rec(i + 1, g, p, cur, best, score);
                            cur[i] = None;
                        }
                    }
                    rec(i + 1, g, p, cur, best, score);
                }
                let score = |a: usize, b: usize| align(g[a].0, p[b].0) * similarity(&g[a].1, &p[b].1, cfg.zero_distance);
                rec(0, g, p, &mut cur, &mut best, &score);
                let assignment = best.map(|b| b.1).unwrap_or_default();
                let mut m = 0.0;
                for (a, b) in assignment.iter().enumerate() {
                    if let Some(b) = b {
                        let s = similarity(&g[a].1, &p[*b].1, cfg.zero_distance);
                        if s >= alpha - f64::EPSILON {
                            m += 1.0;
                            loc += s;
                            *mc.entry((g[a].0, p[*b].0)).or_default() += 1.0;
                        }
                    }
                }
                tp += m;
                fnn += g.len() as f64 - m;
                fpp += p.len() as f64 - m;
            }
            let ass: f64 = mc
                .iter()
                .map(|(&(gi, pi), &m)| m * m / (gcount[&gi] + pcount[&pi] - m))
                .sum::<f64>()
                / tp.max(1.0);
            let det = tp / (tp + fnn + fpp).max(1.0);
            out.0 += (det * ass).sqrt();
            out.1 += det;
            out.2 += ass;
            out.3 += if tp > 0.0 { loc / tp } else { 0.0 };
        }
        let k = 100.0 / cfg.hota_alpha_grid.len() as f64;
        (out.0 * k, out.1 * k, out.2 * k, out.3 * k)
    }

    fn assert_matches_reference(gt: &TrackSet, pred: &TrackSet) {
        let cfg = EvalConfig::default();
        let m = hota(gt, pred, &cfg).unwrap();
        let r = reference(gt, pred, &cfg);
        for (a, b) in [(m.hota, r.0), (m.deta, r.1), (m.assa, r.2), (m.loca, r.3)] {
            assert!((a - b).abs() < 1e-9, "{m:?} vs {r:?}");
        }
    }

    const A: &[(u32, f64, f64)] = &[(0, 0.0, 0.0), (1, 0.0, 0.0), (2, 0.0, 0.0)];
    const B: &[(u32, f64, f64)] = &[(0, 5.0, 0.0), (1, 5.0, 0.0), (2, 5.0, 0.0)];

    #[test]
    fn perfect_prediction_scores_100() {
        let gt = set(&[(1, A), (2, B)]);
        let m = hota(&gt, &gt.relabeled(|i| i + 10), &EvalConfig::default()).unwrap();
        for v in [m.hota, m.deta, m.assa, m.loca] {
            assert!((v - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let gt = set(&[(1, A)]);
        let m = hota(&gt, &TrackSet::new(), &EvalConfig::default()).unwrap();
        assert_eq!((m.hota, m.deta), (0.0, 0.0));
    }

    #[test]
    fn disjoint_frames_are_misaligned() {
        let gt = set(&[(1, &[(0, 0.0, 0.0)])]);
        let pred = set(&[(1, &[(5, 0.0, 0.0)])]);
        assert!(matches!(hota(&gt, &pred, &EvalConfig::default()), Err(Error::MisalignedFrames)));
    }

    #[test]
    fn one_switch_matches_reference() {
        let gt = set(&[(1, A), (2, B)]);
        // identities swap at frame 1
        let pred = set(&[
            (7, &[(0, 0.0, 0.0), (1, 5.0, 0.0), (2, 5.0, 0.0)]),
            (8, &[(0, 5.0, 0.0), (1, 0.0, 0.0), (2, 0.0, 0.0)]),
        ]);
        assert_matches_reference(&gt, &pred);
        let m = hota(&gt, &pred, &EvalConfig::default()).unwrap();
        assert!((m.deta - 100.0).abs() < 1e-9);
        assert!(m.assa < 100.0);
    }

    #[test]
    fn noisy_scenes_match_reference() {
        let gt = set(&[(1, A), (2, B), (3, &[(1, 2.0, 0.0), (2, 2.2, 0.0)])]);
        let pred = set(&[
            (1, &[(0, 0.1, 0.0), (1, 0.3, 0.1), (2, 4.9, 0.0)]),
            (2, &[(0, 5.2, 0.0), (1, 2.1, 0.0), (2, 2.3, 0.3)]),
            (3, &[(1, 5.5, 0.0), (2, 0.6, 0.0), (3, 9.0, 9.0)]),
        ]);
        assert_matches_reference(&gt, &pred);
        let miss = set(&[(1, &A[..2]), (2, B)]);
        assert_matches_reference(&gt, &miss);
    }

    #[test]
    fn relabeling_and_switch_response() {
        let gt = set(&[(1, A), (2, B)]);
        let pred = set(&[(4, &A[..2]), (5, B)]);
        let cfg = EvalConfig::default();
        let base = hota(&gt, &pred, &cfg).unwrap();
        assert_eq!(base, hota(&gt.relabeled(|i| 100 - i), &pred.relabeled(|i| i * 3), &cfg).unwrap());
        let perfect = hota(&gt, &gt, &cfg).unwrap();
        // a miss lowers DetA
        assert!(base.deta < perfect.deta);
    }
}
