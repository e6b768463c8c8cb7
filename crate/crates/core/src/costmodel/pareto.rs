/// Indices of the non-dominated `(accuracy, latency)` points, sorted by
/// latency ascending. A point is dominated when another has accuracy at
/// least as high and latency at most as high, with one strictly better.
/// Exact duplicates collapse to their first occurrence.
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| points[a].1.total_cmp(&points[b].1).then(points[b].0.total_cmp(&points[a].0)).then(a.cmp(&b)));
    let mut best = f64::NEG_INFINITY;
    let mut out = Vec::new();
    for i in idx {
        if points[i].0 > best {
            best = points[i].0;
            out.push(i);
        }
    }
    out
}

pub fn pareto_frontier(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    pareto_indices(points).into_iter().map(|i| points[i]).collect()
}
