//! Independent reference implementations used only by tests.

use std::collections::HashMap;

/// Exact balanced transport by successive shortest paths (Bellman-Ford on the
/// residual network). Returns `(optimal cost, plan)`, the plan row-major.
pub fn exact_transport(cost: &[f64], rows: usize, cols: usize, mu: &[f64], nu: &[f64]) -> (f64, Vec<f64>) {
    // nodes: 0 = source, 1..=rows, rows+1..=rows+cols, sink
    let n = rows + cols + 2;
    let (src, sink) = (0, n - 1);
    struct Edge {
        to: usize,
        cap: f64,
        cost: f64,
    }
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let add = |edges: &mut Vec<Edge>, adj: &mut Vec<Vec<usize>>, a: usize, b: usize, cap: f64, c: f64| {
        adj[a].push(edges.len());
        edges.push(Edge { to: b, cap, cost: c });
        adj[b].push(edges.len());
        edges.push(Edge { to: a, cap: 0.0, cost: -c });
    };
    for (i, &m) in mu.iter().enumerate() {
        add(&mut edges, &mut adj, src, 1 + i, m, 0.0);
    }
    let mut cell_edge = vec![0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            cell_edge[i * cols + j] = edges.len();
            add(&mut edges, &mut adj, 1 + i, 1 + rows + j, f64::INFINITY, cost[i * cols + j]);
        }
    }
    for (j, &n) in nu.iter().enumerate() {
        add(&mut edges, &mut adj, 1 + rows + j, sink, n, 0.0);
    }
    const CAP_EPS: f64 = 1e-15;
    loop {
        let mut dist = vec![f64::INFINITY; n];
        let mut prev: Vec<Option<usize>> = vec![None; n];
        dist[src] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if dist[u] == f64::INFINITY {
                    continue;
                }
                for &e in &adj[u] {
                    let ed = &edges[e];
                    if ed.cap > CAP_EPS && dist[u] + ed.cost < dist[ed.to] - 1e-15 {
                        dist[ed.to] = dist[u] + ed.cost;
                        prev[ed.to] = Some(e);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink] == f64::INFINITY {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while let Some(e) = prev[v] {
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while let Some(e) = prev[v] {
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            v = edges[e ^ 1].to;
        }
    }
    let plan: Vec<f64> = cell_edge.iter().map(|&e| edges[e ^ 1].cap).collect();
    let total = plan.iter().zip(cost).map(|(f, c)| f * c).sum();
    (total, plan)
}

/// Minimum over all permutations of `sum_i cost[i][perm(i)] / m` (the optimum
/// for uniform marginals on a square problem).
pub fn assignment_brute_force(cost: &[f64], m: usize) -> f64 {
    fn rec(cost: &[f64], m: usize, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == m {
            *best = best.min(acc);
            return;
        }
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                rec(cost, m, row + 1, used, acc + cost[row * m + j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(cost, m, 0, &mut vec![false; m], 0.0, &mut best);
    best / m as f64
}

/// Straight double-loop cosine distance.
pub fn cosine_distance_naive(u: &[f32], v: &[f32]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| *a as f64 * *b as f64).sum();
    let nu: f64 = u.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
    1.0 - dot / (nu * nv)
}

/// Brute-force kNN: sort (distance, id) pairs, count votes, break vote ties by
/// the earliest-ranked member. Returns (ranked ids, label, count).
pub fn knn_brute_force(
    query: &[f32],
    gallery: &[(String, u32, Vec<f32>)],
    k: usize,
) -> (Vec<String>, u32, usize) {
    let mut scored: Vec<(f64, &str, u32)> = gallery
        .iter()
        .map(|(id, c, g)| (cosine_distance_naive(query, g), id.as_str(), *c))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for s in &scored[..k] {
        *counts.entry(s.2).or_default() += 1;
    }
    let best = *counts.values().max().unwrap();
    let label = scored[..k].iter().find(|s| counts[&s.2] == best).unwrap().2;
    (scored.iter().map(|s| s.1.to_string()).collect(), label, best)
}

/// Two-sided exact Mann-Whitney p-value by enumerating every way of choosing
/// which pooled observations belong to the first sample.
pub fn mann_whitney_enumerated(a: &[f64], b: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let total = pooled.len();
    // midranks
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&x, &y| pooled[x].partial_cmp(&pooled[y]).unwrap());
    let mut ranks = vec![0.0; total];
    let mut s = 0;
    while s < total {
        let mut e = s;
        while e + 1 < total && pooled[order[e + 1]] == pooled[order[s]] {
            e += 1;
        }
        let r = (s + e) as f64 / 2.0 + 1.0;
        for &o in &order[s..=e] {
            ranks[o] = r;
        }
        s = e + 1;
    }
    let n = a.len();
    let m = b.len();
    let u_of = |members: &[usize]| members.iter().map(|&i| ranks[i]).sum::<f64>() - (n * (n + 1)) as f64 / 2.0;
    let observed = u_of(&(0..n).collect::<Vec<_>>());
    let center = (n * m) as f64 / 2.0;
    let obs_dev = (observed - center).abs();
    let mut extreme = 0u64;
    let mut count = 0u64;
    let mut combo: Vec<usize> = (0..n).collect();
    loop {
        count += 1;
        if (u_of(&combo) - center).abs() >= obs_dev - 1e-9 {
            extreme += 1;
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                return (observed, (extreme as f64 / count as f64).min(1.0));
            }
            i -= 1;
            if combo[i] < total - n + i {
                break;
            }
        }
        combo[i] += 1;
        for j in i + 1..n {
            combo[j] = combo[j - 1] + 1;
        }
    }
}

/// MS-SSIM computed with a direct 2D window sum per output pixel, per-window
/// moments, and explicit 2x2 block averaging between scales.
pub fn ms_ssim_direct(a: &[f64], b: &[f64], width: usize, height: usize, data_range: f64) -> f64 {
    const WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let mut kernel = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (y, row) in kernel.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (y as f64 - 5.0, x as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    let (mut w, mut h) = (width, height);
    let mut result = 1.0;
    for (s, weight) in WEIGHTS.iter().enumerate() {
        let (mut ssim_sum, mut cs_sum, mut count) = (0.0, 0.0, 0.0);
        for oy in 0..=h - 11 {
            for ox in 0..=w - 11 {
                let (mut ma, mut mb, mut eaa, mut ebb, mut eab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for ky in 0..11 {
                    for kx in 0..11 {
                        let k = kernel[ky][kx] / total;
                        let pa = a[(oy + ky) * w + ox + kx];
                        let pb = b[(oy + ky) * w + ox + kx];
                        ma += k * pa;
                        mb += k * pb;
                        eaa += k * pa * pa;
                        ebb += k * pb * pb;
                        eab += k * pa * pb;
                    }
                }
                let va = eaa - ma * ma;
                let vb = ebb - mb * mb;
                let cov = eab - ma * mb;
                let cs = (2.0 * cov + c2) / (va + vb + c2);
                let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
                cs_sum += cs;
                ssim_sum += lum * cs;
                count += 1.0;
            }
        }
        let term = if s == 4 { ssim_sum / count } else { cs_sum / count };
        result *= term.max(0.0).powf(*weight);
        if s < 4 {
            let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
            let pool = |img: &[f64]| {
                let mut out = Vec::with_capacity(nw * nh);
                for y in 0..nh {
                    for x in 0..nw {
                        let mut vals = Vec::new();
                        for (yy, xx) in [(2 * y, 2 * x), (2 * y, 2 * x + 1), (2 * y + 1, 2 * x), (2 * y + 1, 2 * x + 1)] {
                            if yy < h && xx < w {
                                vals.push(img[yy * w + xx]);
                            }
                        }
                        out.push(vals.iter().sum::<f64>() / vals.len() as f64);
                    }
                }
                out
            };
            a = pool(&a);
            b = pool(&b);
            w = nw;
            h = nh;
        }
    }
    result.min(1.0)
}
