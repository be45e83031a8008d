//! Greedy modularity agglomeration (Clauset, Newman and Moore) stopped at a
//! fixed number of communities.
//!
//! Every step merges the pair of communities with the largest modularity
//! gain. Pairs without connecting edges are allowed, with gain
//! `-2 a_i a_j`, so the target count is always reached even on forests with
//! more components than requested.

use std::collections::{BTreeMap, BTreeSet};

/// Partitions nodes `0..n` of an undirected multigraph into `k` communities.
///
/// Communities are returned largest first, ties by smallest member.
pub fn greedy_modularity(n: usize, edges: &[(usize, usize)], k: usize) -> Vec<BTreeSet<usize>> {
    let k = k.clamp(1, n.max(1));
    if n == 0 {
        return vec![];
    }
    let m2 = 2.0 * edges.iter().filter(|(a, b)| a != b).count() as f64;
    let mut members: Vec<Option<BTreeSet<usize>>> = (0..n).map(|i| Some([i].into())).collect();
    let mut a = vec![0.0; n];
    // e[i][j]: fraction of edge ends joining community i to j, stored both ways.
    let mut e: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    if m2 > 0.0 {
        for &(u, v) in edges {
            if u == v {
                continue;
            }
            *e[u].entry(v).or_default() += 1.0 / m2;
            *e[v].entry(u).or_default() += 1.0 / m2;
            a[u] += 1.0 / m2;
            a[v] += 1.0 / m2;
        }
    }

    let mut live = n;
    while live > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, row) in e.iter().enumerate() {
            if members[i].is_none() {
                continue;
            }
            for (&j, &eij) in row.range(i + 1..) {
                let gain = 2.0 * (eij - a[i] * a[j]);
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, i, j));
                }
            }
        }
        if best.is_none_or(|(g, _, _)| g < 0.0) {
            if let Some((gain, i, j)) = best_unconnected(&members, &a, &e) {
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("at least two live communities");

        let moved = members[j].take().expect("live community");
        members[i].as_mut().expect("live community").extend(moved);
        a[i] += a[j];
        a[j] = 0.0;
        let row_j = std::mem::take(&mut e[j]);
        for (l, w) in row_j {
            e[l].remove(&j);
            if l == i {
                continue;
            }
            *e[i].entry(l).or_default() += w;
            *e[l].entry(i).or_default() += w;
        }
        live -= 1;
    }

    let mut out: Vec<BTreeSet<usize>> = members.into_iter().flatten().collect();
    out.sort_by(|x, y| y.len().cmp(&x.len()).then_with(|| x.first().cmp(&y.first())));
    out
}

/// The non-adjacent live pair with the smallest `a_i a_j`, smallest indices first.
fn best_unconnected(
    members: &[Option<BTreeSet<usize>>],
    a: &[f64],
    e: &[BTreeMap<usize, f64>],
) -> Option<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..members.len()).filter(|&i| members[i].is_some()).collect();
    order.sort_by(|&x, &y| a[x].total_cmp(&a[y]).then(x.cmp(&y)));
    let mut best: Option<(f64, usize, usize)> = None;
    for (p, &i) in order.iter().enumerate() {
        if let (Some((g, _, _)), Some(&next)) = (best, order.get(p + 1)) {
            if -2.0 * a[i] * a[next] < g {
                break;
            }
        }
        for &j in &order[p + 1..] {
            if e[i].contains_key(&j) {
                continue;
            }
            let gain = -2.0 * a[i] * a[j];
            let (lo, hi) = (i.min(j), i.max(j));
            let better = match best {
                None => true,
                Some((g, bi, bj)) => gain > g || (gain == g && (lo, hi) < (bi, bj)),
            };
            if better {
                best = Some((gain, lo, hi));
            }
            break;
        }
    }
    best
}

/// Modularity of a partition of an undirected graph.
pub fn modularity(n: usize, edges: &[(usize, usize)], communities: &[BTreeSet<usize>]) -> f64 {
    let mut label = vec![usize::MAX; n];
    for (c, set) in communities.iter().enumerate() {
        for &v in set {
            label[v] = c;
        }
    }
    let m2 = 2.0 * edges.len() as f64;
    if m2 == 0.0 {
        return 0.0;
    }
    let mut inside = vec![0.0; communities.len()];
    let mut degree = vec![0.0; communities.len()];
    for &(u, v) in edges {
        degree[label[u]] += 1.0;
        degree[label[v]] += 1.0;
        if label[u] == label[v] {
            inside[label[u]] += 2.0;
        }
    }
    inside
        .iter()
        .zip(&degree)
        .map(|(i, d)| i / m2 - (d / m2) * (d / m2))
        .sum()
}
