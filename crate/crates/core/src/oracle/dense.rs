//! Dense references for SA and HA built from plain loops: full score
//! matrices with explicit −∞ masks, no tape and no index plans.

use crate::error::{Error, Result};
use crate::etdnet::{EtdnetParams, Mode, ModelConfig};
use crate::fhgraph::{EdgeFamily, FullHistoryGraph};
use crate::numerics::{Tensor, LAYER_NORM_EPS};

pub(crate) fn param<'a>(p: &'a EtdnetParams, path: &str) -> Result<&'a Tensor> {
    p.get(path).ok_or_else(|| Error::config("params", format!("no parameter at path {path}")))
}

/// `W · x` for `W` stored `[out × in]`.
pub(crate) fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = w.dims2();
    assert_eq!(cols, x.len(), "matvec width");
    (0..rows)
        .map(|i| (0..cols).map(|j| w.data()[i * cols + j] * x[j]).sum())
        .collect()
}

pub(crate) fn layer_norm(x: &[f64], gain: &Tensor, bias: &Tensor) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) * inv * gain.data()[i] + bias.data()[i])
        .collect()
}

fn softmax_masked(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; scores.len()];
    }
    let e: Vec<f64> = scores.iter().map(|&s| if s == f64::NEG_INFINITY { 0.0 } else { (s - max).exp() }).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn to_tensor(rows: &[Vec<f64>], cols: usize) -> Tensor {
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    Tensor::new(vec![rows.len(), cols], data).expect("rectangular rows")
}

/// m^D for every node, from the full N×N masked score matrix of each
/// sublayer and head.
pub fn dense_sa_reference(g: &FullHistoryGraph, h: &Tensor, cfg: &ModelConfig, params: &EtdnetParams, layer: usize) -> Result<Tensor> {
    let n = g.len();
    let d = cfg.d;
    let ds = cfg.sa_width();
    let mut adj = vec![vec![false; n]; n];
    for e in g.edges().iter().filter(|e| e.family == EdgeFamily::Intra) {
        adj[g.index_of(&e.dst)?][g.index_of(&e.src)?] = true;
    }
    let mut cur = rows(h);
    for k in 0..cfg.sa_sublayers {
        let prefix = format!("layer{layer}/sa/k{k}");
        let mut agg = vec![vec![0.0; d]; n];
        for r in 0..cfg.sa_heads {
            let hp = format!("{prefix}/head{r}");
            let wq = param(params, &format!("{hp}/WQ"))?;
            let wk = param(params, &format!("{hp}/WK"))?;
            let wv = param(params, &format!("{hp}/WV"))?;
            let a = param(params, &format!("{hp}/a"))?.data();
            let q: Vec<Vec<f64>> = cur.iter().map(|x| matvec(wq, x)).collect();
            let kk: Vec<Vec<f64>> = cur.iter().map(|x| matvec(wk, x)).collect();
            let v: Vec<Vec<f64>> = cur.iter().map(|x| matvec(wv, x)).collect();
            for u in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|w| {
                        if !adj[u][w] {
                            return f64::NEG_INFINITY;
                        }
                        let s = dot(&a[..ds], &q[u]) + dot(&a[ds..], &kk[w]);
                        if s >= 0.0 {
                            s
                        } else {
                            cfg.leaky_slope * s
                        }
                    })
                    .collect();
                let alpha = softmax_masked(&scores);
                for w in 0..n {
                    for c in 0..ds {
                        agg[u][r * ds + c] += alpha[w] * v[w][c];
                    }
                }
            }
        }
        let o = param(params, &format!("{prefix}/O"))?;
        let gain = param(params, &format!("{prefix}/ln_gain"))?;
        let bias = param(params, &format!("{prefix}/ln_bias"))?;
        cur = (0..n)
            .map(|u| {
                let msg = matvec(o, &agg[u]);
                let res: Vec<f64> = msg.iter().zip(&cur[u]).map(|(a, b)| a + b).collect();
                layer_norm(&res, gain, bias)
            })
            .collect();
    }
    Ok(to_tensor(&cur, d))
}

/// m^H for every node: the predecessor window is zero-padded to `B` rows,
/// the full B×B attention is formed with padded rows and columns masked,
/// and row m−1 is read out.
pub fn dense_ha_reference(g: &FullHistoryGraph, h: &Tensor, cfg: &ModelConfig, params: &EtdnetParams, layer: usize) -> Result<Tensor> {
    let n = g.len();
    let d = cfg.d;
    let b = cfg.window;
    let dt = cfg.ha_width();
    let prefix = format!("layer{layer}/ha");
    let gain = param(params, &format!("{prefix}/ln_gain"))?;
    let bias = param(params, &format!("{prefix}/ln_bias"))?;
    let mut out = vec![vec![0.0; d]; n];
    for (i, node) in g.nodes().iter().enumerate() {
        if node.id.is_static() {
            continue;
        }
        let preds = g.predecessors_window(&node.id, b)?;
        let m = preds.len();
        if m == 0 {
            continue;
        }
        let mut z = vec![vec![0.0; d]; b];
        for (row, id) in preds.iter().enumerate() {
            z[row] = h.row(g.index_of(id)?).to_vec();
        }
        let pre = if cfg.mode == Mode::HaMeanpool {
            let mut mean = vec![0.0; d];
            for row in &z[..m] {
                for c in 0..d {
                    mean[c] += row[c] / m as f64;
                }
            }
            matvec(param(params, &format!("{prefix}/mean_proj"))?, &mean)
        } else {
            let mut cat = Vec::with_capacity(d);
            for r in 0..cfg.ha_heads {
                let hr = format!("{prefix}/head{r}");
                let wq = param(params, &format!("{hr}/WQ"))?;
                let wk = param(params, &format!("{hr}/WK"))?;
                let wv = param(params, &format!("{hr}/WV"))?;
                let q: Vec<Vec<f64>> = z.iter().map(|x| matvec(wq, x)).collect();
                let k: Vec<Vec<f64>> = z.iter().map(|x| matvec(wk, x)).collect();
                let v: Vec<Vec<f64>> = z.iter().map(|x| matvec(wv, x)).collect();
                let mut o = vec![vec![0.0; dt]; b];
                for row in 0..b {
                    let scores: Vec<f64> = (0..b)
                        .map(|col| {
                            if row >= m || col >= m {
                                f64::NEG_INFINITY
                            } else {
                                dot(&q[row], &k[col]) / (dt as f64).sqrt()
                            }
                        })
                        .collect();
                    let a = softmax_masked(&scores);
                    for col in 0..b {
                        for c in 0..dt {
                            o[row][c] += a[col] * v[col][c];
                        }
                    }
                }
                cat.extend_from_slice(&o[m - 1]);
            }
            // cat · O with O stored [(H_t·d'') × d].
            let o = param(params, &format!("{prefix}/O"))?;
            (0..d).map(|j| (0..cat.len()).map(|c| cat[c] * o.get2(c, j)).sum()).collect()
        };
        out[i] = layer_norm(&pre, gain, bias);
    }
    Ok(to_tensor(&out, d))
}
