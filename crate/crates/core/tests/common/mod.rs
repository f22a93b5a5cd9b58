//! Brute-force reference implementations shared by the oracle and
//! acceptance test targets.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use cardcorr::baselines::isotonic_fit;
use cardcorr::dataset::FeatureMatrix;
use cardcorr::learners::{GbdtModel, GbdtParams, ReferenceSetModel, TreeNode, Weighting};
use cardcorr::quantile;
use cardcorr::trace::{PlanNode, PlanTrace, TraceSource};
use std::collections::BTreeMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, integer: bool) -> FeatureMatrix {
    let data = (0..rows * cols)
        .map(|_| {
            if integer {
                rng.random_range(0..6) as f64
            } else {
                rng.random_range(-3.0..3.0)
            }
        })
        .collect();
    FeatureMatrix::new(rows, cols, data).unwrap()
}

pub fn sse(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - m) * (v - m)).sum()
}

pub struct OracleSplit {
    pub feature: usize,
    pub threshold: f64,
    pub left: Vec<bool>,
}

/// Scans every feature and every midpoint between consecutive distinct
/// values, scoring by direct two-pass SSE. The first candidate (feature,
/// then threshold ascending) within rounding of the best gain wins.
pub fn oracle_split(x: &FeatureMatrix, r: &[f64], rows: &[usize], min_leaf: usize) -> Option<OracleSplit> {
    let vals: Vec<f64> = rows.iter().map(|&i| r[i]).collect();
    let parent = sse(&vals);
    let mut cands: Vec<(usize, f64, f64)> = Vec::new();
    for f in 0..x.n_cols {
        let mut distinct: Vec<f64> = rows.iter().map(|&i| x.get(i, f)).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        for w in distinct.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (l, rr): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x.get(i, f) <= t);
            if l.len() < min_leaf || rr.len() < min_leaf {
                continue;
            }
            let lv: Vec<f64> = l.iter().map(|&i| r[i]).collect();
            let rv: Vec<f64> = rr.iter().map(|&i| r[i]).collect();
            cands.push((f, t, parent - sse(&lv) - sse(&rv)));
        }
    }
    let best = cands.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    let scale = 1.0 + parent.abs();
    if !(best > 1e-9 * scale) {
        return None;
    }
    let (feature, threshold, _) = *cands.iter().find(|c| c.2 >= best - 1e-9 * scale).unwrap();
    Some(OracleSplit {
        feature,
        threshold,
        left: (0..x.n_rows).map(|i| x.get(i, feature) <= threshold).collect(),
    })
}

/// Recursive oracle tree; returns the prediction for every row.
pub fn oracle_tree(x: &FeatureMatrix, r: &[f64], rows: &[usize], depth: usize, min_leaf: usize, out: &mut [f64]) {
    let split = if depth > 0 && rows.len() >= 2 * min_leaf {
        oracle_split(x, r, rows, min_leaf)
    } else {
        None
    };
    match split {
        None => {
            let m = rows.iter().map(|&i| r[i]).sum::<f64>() / rows.len() as f64;
            rows.iter().for_each(|&i| out[i] = m);
        }
        Some(s) => {
            let (l, rr): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| s.left[i]);
            oracle_tree(x, r, &l, depth - 1, min_leaf, out);
            oracle_tree(x, r, &rr, depth - 1, min_leaf, out);
        }
    }
}

/// Exhaustive isotonic regression: every partition of the distinct x values
/// into consecutive blocks whose weighted means are non-decreasing; the
/// least-squares one is optimal.
pub fn isotonic_oracle(xs: &[f64], ys: &[f64]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64, f64)> = Vec::new();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    for i in order {
        match pts.iter_mut().find(|p| p.0 == xs[i]) {
            Some(p) => {
                p.1 += ys[i];
                p.2 += 1.0;
            }
            None => pts.push((xs[i], ys[i], 1.0)),
        }
    }
    let m = pts.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (m - 1)) {
        let mut levels = vec![0.0; m];
        let mut start = 0;
        let mut prev = f64::NEG_INFINITY;
        let mut ok = true;
        for end in 0..m {
            if end == m - 1 || mask & (1 << end) != 0 {
                let (s, w) = pts[start..=end].iter().fold((0.0, 0.0), |a, p| (a.0 + p.1, a.1 + p.2));
                let mean = s / w;
                if mean < prev - 1e-12 {
                    ok = false;
                    break;
                }
                prev = mean;
                levels[start..=end].iter_mut().for_each(|l| *l = mean);
                start = end + 1;
            }
        }
        if !ok {
            continue;
        }
        let cost: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let j = pts.iter().position(|p| p.0 == *x).unwrap();
                (y - levels[j]).powi(2)
            })
            .sum();
        if best.as_ref().is_none_or(|b| cost < b.0 - 1e-12) {
            best = Some((cost, levels));
        }
    }
    let levels = best.unwrap().1;
    pts.iter().zip(levels).map(|(p, l)| (p.0, l)).collect()
}

/// Linear interpolation between the order statistics placed at i/(n-1).
pub fn quantile_oracle(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 1 {
        return s[0];
    }
    for i in 0..n - 1 {
        let (a, b) = (i as f64 / (n - 1) as f64, (i + 1) as f64 / (n - 1) as f64);
        if p >= a && p <= b {
            let w = (p - a) / (b - a);
            return s[i] * (1.0 - w) + s[i + 1] * w;
        }
    }
    s[n - 1]
}

/// Exhaustive nearest neighbours: (squared distance, index) sorted by
/// distance then index, truncated to `k`.
pub fn knn_scan(refs: &FeatureMatrix, q: &[f64], k: usize) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = (0..refs.n_rows)
        .map(|i| (refs.row(i).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all
}

/// Prediction from an exhaustive neighbour list, summed in list order.
pub fn knn_predict(nn: &[(f64, usize)], y: &[f64], weighting: Weighting) -> f64 {
    match weighting {
        Weighting::Uniform => nn.iter().map(|(_, i)| y[*i]).sum::<f64>() / nn.len() as f64,
        Weighting::InverseDistance => {
            let (mut num, mut den) = (0.0, 0.0);
            for (dist, i) in nn {
                let w = 1.0 / (dist + 1e-9);
                num += w * y[*i];
                den += w;
            }
            num / den
        }
    }
}

/// Root split of a single depth-1 tree versus [`oracle_split`] on `cases`
/// random datasets, half of them integer-valued so ties are common.
pub fn check_root_splits(seed: u64, cases: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let rows = rng.random_range(10..=200);
        let cols = rng.random_range(1..=5);
        let x = random_matrix(&mut rng, rows, cols, case % 2 == 0);
        let y: Vec<f64> = (0..rows)
            .map(|i| 2.0 * x.get(i, rng.random_range(0..cols)) + rng.random_range(-1.0..1.0))
            .collect();
        let min_leaf = rng.random_range(1..=5);
        let params = GbdtParams {
            n_trees: 1,
            max_depth: 1,
            learning_rate: 1.0,
            min_samples_leaf: min_leaf,
            ..GbdtParams::default()
        };
        let model = GbdtModel::train(&x, &y, params).map_err(|e| e.to_string())?.model;
        let mean = y.iter().sum::<f64>() / rows as f64;
        let resid: Vec<f64> = y.iter().map(|v| v - mean).collect();
        let all: Vec<usize> = (0..rows).collect();
        let expected = oracle_split(&x, &resid, &all, min_leaf);
        let root = model.trees.first().map(|t| t.nodes[0].clone());
        match (expected, root) {
            (None, None | Some(TreeNode::Leaf { .. })) => {}
            (Some(o), Some(TreeNode::Split { feature, threshold, .. })) => {
                if feature != o.feature {
                    return Err(format!("case {case}: feature {feature} vs oracle {}", o.feature));
                }
                if (threshold - o.threshold).abs() > 1e-12 * (1.0 + o.threshold.abs()) {
                    return Err(format!("case {case}: threshold {threshold} vs oracle {}", o.threshold));
                }
                let left: Vec<bool> = (0..rows).map(|i| x.get(i, feature) <= threshold).collect();
                if left != o.left {
                    return Err(format!("case {case}: partitions differ"));
                }
            }
            (o, r) => {
                return Err(format!(
                    "case {case}: oracle split {:?} vs tree root {r:?}",
                    o.map(|s| (s.feature, s.threshold))
                ))
            }
        }
    }
    Ok(())
}

/// PAVA versus [`isotonic_oracle`]; returns the worst absolute difference.
pub fn check_pava(seed: u64, cases: usize) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let n = rng.random_range(1..=8);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let f = isotonic_fit(&xs, &ys).map_err(|e| e.to_string())?;
        for (x, level) in isotonic_oracle(&xs, &ys) {
            let diff = (f.eval(x) - level).abs();
            worst = worst.max(diff);
            if diff > 1e-9 {
                return Err(format!("case {case}: at x={x} fit {} vs oracle {level}", f.eval(x)));
            }
        }
    }
    Ok(worst)
}

/// Library quantiles versus [`quantile_oracle`]; returns the worst difference.
pub fn check_quantiles(seed: u64, cases: usize) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = rng.random_range(1..=60);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        for p in [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0, rng.random::<f64>()] {
            let got = quantile::quantile(&v, p).map_err(|e| e.to_string())?;
            let diff = (got - quantile_oracle(&v, p)).abs();
            worst = worst.max(diff);
            if diff > 1e-12 {
                return Err(format!("n={n} p={p}: {got} vs oracle {}", quantile_oracle(&v, p)));
            }
        }
    }
    Ok(worst)
}

/// Reference-set predictions and neighbour lists versus an exhaustive scan,
/// compared with exact equality under both weightings.
pub fn check_knn(seed: u64, cases: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let n = rng.random_range(1..=60);
        let d = rng.random_range(1..=5);
        let refs = random_matrix(&mut rng, n, d, true);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let k = rng.random_range(1..=n);
        let weighting = if case % 2 == 0 { Weighting::Uniform } else { Weighting::InverseDistance };
        let model = ReferenceSetModel::setup(&refs, &y, k, weighting).map_err(|e| e.to_string())?.model;
        for _ in 0..10 {
            let q: Vec<f64> = (0..d).map(|_| rng.random_range(0..6) as f64).collect();
            let nn = knn_scan(&refs, &q, k);
            let expected = knn_predict(&nn, &y, weighting);
            let got = model.predict_row(&q);
            if got != expected {
                return Err(format!("case {case}: prediction {got} vs oracle {expected}"));
            }
            let idx: Vec<usize> = model.neighbors(&q).iter().map(|p| p.0).collect();
            if idx != nn.iter().map(|p| p.1).collect::<Vec<_>>() {
                return Err(format!("case {case}: neighbour lists differ"));
            }
        }
    }
    Ok(())
}

/// Random plan tree mixing every operator shape the semantic rules cover.
pub fn random_tree(rng: &mut ChaCha8Rng, depth: usize, serial: &mut usize) -> PlanNode {
    *serial += 1;
    let id = *serial;
    let est = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1e6) };
    let leaf = |rng: &mut ChaCha8Rng, id: usize| {
        let op = ["TableFullScan", "IndexRangeScan", "TableDual"][rng.random_range(0..3)];
        PlanNode::new(format!("{op}_{id}"), est, "cop[tikv]")
    };
    if depth == 0 || rng.random_bool(0.2) {
        return leaf(rng, id);
    }
    match rng.random_range(0..7) {
        0 | 1 => {
            let mut node = PlanNode::new(format!("HashJoin_{id}"), est, "root");
            let (jt, outer) = match rng.random_range(0..3) {
                0 => ("inner", None),
                1 => ("left outer", Some(0)),
                _ => ("right outer", Some(1)),
            };
            node.join_type = Some(jt.into());
            node.extra_info = Some(format!("{jt} join, equal:[eq(a, b)]"));
            node.outer_child_index = outer;
            node.children = vec![random_tree(rng, depth - 1, serial), random_tree(rng, depth - 1, serial)];
            node
        }
        k => {
            let (op, info) = match k {
                2 => ("Selection", None),
                3 => ("Projection", None),
                4 => ("Limit", Some(format!("offset:0, count:{}", rng.random_range(0..1000)))),
                5 => ("TopN", Some(format!("col:desc, offset:0, count:{}", rng.random_range(0..1000)))),
                _ => (
                    "HashAgg",
                    Some(if rng.random_bool(0.7) { "group by:c, funcs:count(1)".to_string() } else { "funcs:count(1)".to_string() }),
                ),
            };
            let mut node = PlanNode::new(format!("{op}_{id}"), est, "root");
            node.extra_info = info;
            node.children = vec![random_tree(rng, depth - 1, serial)];
            node
        }
    }
}

pub fn random_trace(rng: &mut ChaCha8Rng, id: usize) -> PlanTrace {
    let mut serial = 0;
    let depth = rng.random_range(0..7);
    PlanTrace {
        execution_id: format!("t{id}"),
        query_tag: None,
        source: TraceSource::ExplainOnly,
        root: random_tree(rng, depth, &mut serial),
    }
}

/// Checks the operator semantics on `rows`, written directly from the rule
/// table rather than through the library's rule lookup. Projection must copy
/// its input; aggregates are bounded only when grouped.
pub fn check_semantics(node: &PlanNode, rows: &BTreeMap<String, f64>) -> Result<(), String> {
    for c in &node.children {
        check_semantics(c, rows)?;
    }
    let v = rows[&node.node_id];
    if !(v >= 0.0) {
        return Err(format!("{} has negative or NaN value {v}", node.node_id));
    }
    let child = |i: usize| rows[&node.children[i].node_id];
    let op = node.operator_type.as_str();
    let info = node.extra_info.as_deref().unwrap_or("");
    let fail = |rule: &str| Err(format!("{} = {v} violates {rule}", node.node_id));
    if node.children.len() == 1 {
        let input = child(0);
        match op {
            "Selection" if v > input => return fail("filter out <= in"),
            "Projection" if v != input => return fail("projection out = in"),
            "Limit" | "TopN" => {
                let n: f64 = info.rsplit("count:").next().unwrap().trim().parse().unwrap();
                if v > input || v > n {
                    return fail("limit out <= min(n, in)");
                }
            }
            "HashAgg" if info.contains("group by") && v > input => return fail("agg out <= in"),
            _ => {}
        }
    }
    if let (Some(idx), Some(jt)) = (node.outer_child_index, node.join_type.as_deref()) {
        if jt.contains("outer") && v < child(idx) {
            return fail("outer join out >= outer side");
        }
    }
    Ok(())
}
