//! Brute-force oracles and synthetic data shared by the integration tests.
//!
//! Nothing here calls into the code paths it is used to check.

#![allow(dead_code)]

use rand::Rng;
use vlloc::world_model::{Scan, View};

pub const REGIONS: [&str; 4] = ["bathroom_0", "bathroom_1", "kitchen_0", ""];

/// Random scan with `n` views and edge probability `p`. Every fourth region
/// is left unannotated.
pub fn random_scan(rng: &mut impl Rng, id: &str, n: usize, p: f64, connected: bool) -> Scan {
    let views = (0..n)
        .map(|i| View {
            view_id: format!("{id}_{i:02}"),
            position: [
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(0.0..3.0),
            ],
            region_id: REGIONS[rng.gen_range(0..REGIONS.len())].to_owned(),
            region_label: String::new(),
        })
        .collect::<Vec<_>>();
    let mut edges = Vec::new();
    if connected {
        // random spanning tree first
        for i in 1..n {
            let j = rng.gen_range(0..i);
            edges.push((views[j].view_id.clone(), views[i].view_id.clone()));
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((views[i].view_id.clone(), views[j].view_id.clone()));
            }
        }
    }
    Scan::new(id, views, edges).unwrap()
}

fn weight(a: &View, b: &View) -> f64 {
    let d: Vec<f64> = (0..3).map(|k| a.position[k] - b.position[k]).collect();
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// All-pairs shortest paths by Floyd–Warshall: distance matrix plus, for each
/// pair, the path's length re-summed edge by edge starting at the lower index.
pub struct AllPairs {
    pub dist: Vec<Vec<f64>>,
    pub path_len: Vec<Vec<f64>>,
}

pub fn floyd_warshall(scan: &Scan) -> AllPairs {
    let n = scan.len();
    let views = scan.views();
    let mut dist = vec![vec![f64::INFINITY; n]; n];
    let mut next = vec![vec![usize::MAX; n]; n];
    for i in 0..n {
        dist[i][i] = 0.0;
        next[i][i] = i;
    }
    for &(a, b) in scan.edges() {
        let w = weight(&views[a], &views[b]);
        dist[a][b] = w;
        dist[b][a] = w;
        next[a][b] = b;
        next[b][a] = a;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if dist[i][k] + dist[k][j] < dist[i][j] {
                    dist[i][j] = dist[i][k] + dist[k][j];
                    next[i][j] = next[i][k];
                }
            }
        }
    }
    let mut path_len = vec![vec![f64::INFINITY; n]; n];
    for i in 0..n {
        for j in 0..n {
            if !dist[i][j].is_finite() {
                continue;
            }
            let (mut u, t) = (i.min(j), i.max(j));
            let mut total = 0.0;
            while u != t {
                let v = next[u][t];
                total += weight(&views[u], &views[v]);
                u = v;
            }
            path_len[i][j] = total;
        }
    }
    AllPairs { dist, path_len }
}

/// Naive `temperature * <t, i>` with optional normalization.
pub fn naive_similarity(texts: &[Vec<f32>], images: &[Vec<f32>], normalize: bool, temperature: f64) -> Vec<Vec<f64>> {
    let prep = |v: &Vec<f32>| -> Vec<f64> {
        let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        if !normalize {
            return v;
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    };
    let mut out = vec![vec![0.0; images.len()]; texts.len()];
    for (n, t) in texts.iter().enumerate() {
        let t = prep(t);
        for (m, i) in images.iter().enumerate() {
            let i = prep(i);
            let mut acc = 0.0;
            for k in 0..t.len() {
                acc += t[k] * i[k];
            }
            out[n][m] = temperature * acc;
        }
    }
    out
}

/// Elementwise BCE of row-softmax against the identity, one cell at a time.
pub fn bce_loss_oracle(logits: &[Vec<f64>]) -> f64 {
    let n = logits.len();
    let eps = 1e-7;
    let mut total = 0.0;
    for i in 0..n {
        let z: f64 = logits[i].iter().map(|x| x.exp()).sum();
        for j in 0..n {
            let p = (logits[i][j].exp() / z).max(eps).min(1.0 - eps);
            let y = if i == j { 1.0 } else { 0.0 };
            total += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        }
    }
    total / (n * n) as f64
}

/// 1-based rank of `target` when sorting by (prob desc, id asc).
pub fn sort_rank_oracle(ids: &[String], probs: &[f64], target: &str) -> usize {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(ids[a].cmp(&ids[b])));
    order.iter().position(|&i| ids[i] == target).unwrap() + 1
}

/// `H_k / k`: expected reciprocal rank of a uniformly placed target among `k`.
pub fn expected_uniform_mrr(k: usize) -> f64 {
    (1..=k).map(|r| 1.0 / r as f64).sum::<f64>() / k as f64
}

pub fn random_vec(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

pub fn fixtures_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}
