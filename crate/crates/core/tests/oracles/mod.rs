//! Slow, direct reference implementations used to cross-check the library.
#![allow(dead_code)]

use smartjourney_core::gbdt::{Tree, TreeNode};

/// Great-circle distance from the atan2 (Vincenty, spherical) form, which
/// shares no code path with the haversine implementation.
pub fn great_circle_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dl = (lon2 - lon1).to_radians();
    let a = p2.cos() * dl.sin();
    let b = p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos();
    let c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
    6371.0088 * (a * a + b * b).sqrt().atan2(c)
}

/// Index of the closest point, first one on ties.
pub fn nearest(lat: f64, lon: f64, points: &[(f64, f64)]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &(plat, plon)) in points.iter().enumerate() {
        let d = great_circle_km(lat, lon, plat, plon);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// (MAPE percent or None, MAE, RMSE, excluded) by explicit loops.
pub fn metrics(actual: &[f64], predicted: &[f64], floor: f64) -> (Option<f64>, f64, f64, usize) {
    let n = actual.len();
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut pct_sum = 0.0;
    let mut kept = 0;
    for i in 0..n {
        let e = predicted[i] - actual[i];
        abs_sum += e.abs();
        sq_sum += e * e;
        if actual[i] >= floor && actual[i] != 0.0 {
            pct_sum += (e / actual[i]).abs();
            kept += 1;
        }
    }
    let mape = if kept == 0 { None } else { Some(pct_sum / kept as f64 * 100.0) };
    (mape, abs_sum / n as f64, (sq_sum / n as f64).sqrt(), n - kept)
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleTree {
    Leaf(f64),
    Split(usize, f64, Box<OracleTree>, Box<OracleTree>),
}

pub fn from_tree(t: &Tree) -> OracleTree {
    fn go(t: &Tree, i: usize) -> OracleTree {
        match t.nodes[i] {
            TreeNode::Leaf { weight } => OracleTree::Leaf(weight),
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => OracleTree::Split(feature, threshold, Box::new(go(t, left)), Box::new(go(t, right))),
        }
    }
    go(t, 0)
}

pub struct OracleParams {
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
}

/// Exhaustive split enumeration: every feature, every midpoint between
/// consecutive distinct values, sums recomputed from scratch per candidate.
pub fn exhaustive_tree(x: &[Vec<f64>], g: &[f64], h: &[f64], rows: &[usize], depth: usize, p: &OracleParams) -> OracleTree {
    let sum = |idx: &[usize], v: &[f64]| idx.iter().fold(0.0, |acc, &i| acc + v[i]);
    let (gs, hs) = (sum(rows, g), sum(rows, h));
    let leaf = OracleTree::Leaf(-gs / (hs + p.lambda));
    if depth == p.max_depth {
        return leaf;
    }
    let mut best: Option<(usize, f64)> = None;
    let mut best_gain: f64 = 0.0;
    let features = x.first().map_or(0, Vec::len);
    for f in 0..features {
        let mut values: Vec<f64> = rows.iter().map(|&r| x[r][f]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for pair in values.windows(2) {
            let mut thr = 0.5 * (pair[0] + pair[1]);
            if thr <= pair[0] {
                thr = pair[1];
            }
            let left: Vec<usize> = rows.iter().copied().filter(|&r| x[r][f] < thr).collect();
            let right: Vec<usize> = rows.iter().copied().filter(|&r| !(x[r][f] < thr)).collect();
            let (gl, hl, gr, hr) = (sum(&left, g), sum(&left, h), sum(&right, g), sum(&right, h));
            if hl < p.min_child_weight || hr < p.min_child_weight {
                continue;
            }
            let gain = 0.5 * (gl * gl / (hl + p.lambda) + gr * gr / (hr + p.lambda) - gs * gs / (hs + p.lambda));
            // Same tie margin as the library, restated here.
            if gain > best_gain + 1e-12 * (1.0 + best_gain.abs()) {
                best_gain = gain;
                best = Some((f, thr));
            }
        }
    }
    match best {
        None => leaf,
        Some((f, thr)) => {
            let left: Vec<usize> = rows.iter().copied().filter(|&r| x[r][f] < thr).collect();
            let right: Vec<usize> = rows.iter().copied().filter(|&r| !(x[r][f] < thr)).collect();
            OracleTree::Split(
                f,
                thr,
                Box::new(exhaustive_tree(x, g, h, &left, depth + 1, p)),
                Box::new(exhaustive_tree(x, g, h, &right, depth + 1, p)),
            )
        }
    }
}

/// For every leaf, the rows routed to it (ascending).
pub fn leaf_rows(t: &Tree, x: &[Vec<f64>], rows: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut out: Vec<(usize, Vec<usize>)> = Vec::new();
    for &r in rows {
        let mut i = 0;
        while let TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } = t.nodes[i]
        {
            i = if x[r][feature] < threshold { left } else { right };
        }
        match out.iter_mut().find(|(leaf, _)| *leaf == i) {
            Some((_, v)) => v.push(r),
            None => out.push((i, vec![r])),
        }
    }
    out
}
