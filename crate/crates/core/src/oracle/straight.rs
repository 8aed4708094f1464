//! The whole forward pass as one function over plain vectors.

use super::dense::{layer_norm, matvec, param};
use crate::error::Result;
use crate::etdnet::{EtdnetParams, Head, LogitValues, Mode, ModelConfig};
use crate::fhgraph::{EdgeFamily, FullHistoryGraph};
use crate::numerics::Tensor;

/// Evaluation-mode logits computed node by node: neighbour lists come from a
/// scan of the edge list and history windows from the graph query, with
/// every projection, softmax and normalization written out inline.
pub fn straight_line_forward(g: &FullHistoryGraph, cfg: &ModelConfig, params: &EtdnetParams) -> Result<LogitValues> {
    let n = g.len();
    let d = cfg.d;
    let ds = cfg.sa_width();
    let dt = cfg.ha_width();
    let p = |path: &str| param(params, path);

    let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in g.edges().iter().filter(|e| e.family == EdgeFamily::Intra) {
        nbrs[g.index_of(&e.dst)?].push(g.index_of(&e.src)?);
    }
    let mut windows: Vec<Vec<usize>> = Vec::with_capacity(n);
    for node in g.nodes() {
        windows.push(if node.id.is_static() {
            Vec::new()
        } else {
            g.predecessors_window(&node.id, cfg.window)?
                .iter()
                .map(|id| g.index_of(id))
                .collect::<Result<_>>()?
        });
    }

    let add = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + y).collect() };
    let (w_in, b_in) = (p("input/W")?, p("input/b")?);
    let h0: Vec<Vec<f64>> = g.nodes().iter().map(|r| add(&matvec(w_in, &r.features), b_in.data())).collect();

    let sa = |h: &Vec<Vec<f64>>, l: usize| -> Result<Vec<Vec<f64>>> {
        let mut cur = h.clone();
        for k in 0..cfg.sa_sublayers {
            let pre = format!("layer{l}/sa/k{k}");
            let mut next = Vec::with_capacity(n);
            for u in 0..n {
                let mut cat = vec![0.0; d];
                if !nbrs[u].is_empty() {
                    for r in 0..cfg.sa_heads {
                        let hp = format!("{pre}/head{r}");
                        let q = matvec(p(&format!("{hp}/WQ"))?, &cur[u]);
                        let a = p(&format!("{hp}/a"))?.data();
                        let mut e = Vec::new();
                        let mut vals = Vec::new();
                        for &v in &nbrs[u] {
                            let kv = matvec(p(&format!("{hp}/WK"))?, &cur[v]);
                            let mut s = 0.0;
                            for c in 0..ds {
                                s += a[c] * q[c] + a[ds + c] * kv[c];
                            }
                            e.push(if s > 0.0 { s } else { cfg.leaky_slope * s });
                            vals.push(matvec(p(&format!("{hp}/WV"))?, &cur[v]));
                        }
                        let mx = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let ex: Vec<f64> = e.iter().map(|s| (s - mx).exp()).collect();
                        let z: f64 = ex.iter().sum();
                        for (j, v) in vals.iter().enumerate() {
                            for c in 0..ds {
                                cat[r * ds + c] += ex[j] / z * v[c];
                            }
                        }
                    }
                }
                let msg = matvec(p(&format!("{pre}/O"))?, &cat);
                next.push(layer_norm(&add(&msg, &cur[u]), p(&format!("{pre}/ln_gain"))?, p(&format!("{pre}/ln_bias"))?));
            }
            cur = next;
        }
        Ok(cur)
    };

    let ha = |h: &Vec<Vec<f64>>, l: usize| -> Result<Vec<Vec<f64>>> {
        let pre = format!("layer{l}/ha");
        let mut out = vec![vec![0.0; d]; n];
        for u in 0..n {
            let win = &windows[u];
            let m = win.len();
            if m == 0 {
                continue;
            }
            let y = if cfg.mode == Mode::HaMeanpool {
                let mut mean = vec![0.0; d];
                for &w in win {
                    for c in 0..d {
                        mean[c] += h[w][c];
                    }
                }
                for v in &mut mean {
                    *v /= m as f64;
                }
                matvec(p(&format!("{pre}/mean_proj"))?, &mean)
            } else {
                let o = p(&format!("{pre}/O"))?;
                let mut cat = Vec::new();
                for r in 0..cfg.ha_heads {
                    let hr = format!("{pre}/head{r}");
                    let q = matvec(p(&format!("{hr}/WQ"))?, &h[win[m - 1]]);
                    let mut s = Vec::new();
                    for &w in win {
                        let k = matvec(p(&format!("{hr}/WK"))?, &h[w]);
                        s.push(q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (dt as f64).sqrt());
                    }
                    let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let ex: Vec<f64> = s.iter().map(|x| (x - mx).exp()).collect();
                    let z: f64 = ex.iter().sum();
                    let mut acc = vec![0.0; dt];
                    for (j, &w) in win.iter().enumerate() {
                        let v = matvec(p(&format!("{hr}/WV"))?, &h[w]);
                        for c in 0..dt {
                            acc[c] += ex[j] / z * v[c];
                        }
                    }
                    cat.extend(acc);
                }
                let mut y = vec![0.0; d];
                for (c, x) in cat.iter().enumerate() {
                    for j in 0..d {
                        y[j] += x * o.data()[c * d + j];
                    }
                }
                y
            };
            out[u] = layer_norm(&y, p(&format!("{pre}/ln_gain"))?, p(&format!("{pre}/ln_bias"))?);
        }
        Ok(out)
    };

    let fl = |h: &Vec<Vec<f64>>, md: &Vec<Vec<f64>>, mh: &Vec<Vec<f64>>, pre: &str| -> Result<Vec<Vec<f64>>> {
        let f = p(&format!("{pre}/F"))?;
        (0..n)
            .map(|u| {
                let cat: Vec<f64> = h[u].iter().chain(&md[u]).chain(&mh[u]).copied().collect();
                let z: Vec<f64> = matvec(f, &cat).into_iter().map(|v| v.max(0.0)).collect();
                Ok(layer_norm(&add(&h[u], &z), p(&format!("{pre}/ln_gain"))?, p(&format!("{pre}/ln_bias"))?))
            })
            .collect()
    };

    let zero = vec![vec![0.0; d]; n];
    let emb = if cfg.mode == Mode::LateFusion {
        let (mut hs, mut ht) = (h0.clone(), h0);
        for l in 0..cfg.layers {
            let md = sa(&hs, l)?;
            hs = fl(&hs, &md, &zero, &format!("layer{l}/fl_sa"))?;
            let mh = ha(&ht, l)?;
            ht = fl(&ht, &zero, &mh, &format!("layer{l}/fl_ha"))?;
        }
        let proj = p("late/proj")?;
        (0..n)
            .map(|u| matvec(proj, &hs[u].iter().chain(&ht[u]).copied().collect::<Vec<_>>()))
            .collect()
    } else {
        let mut h = h0;
        for l in 0..cfg.layers {
            let md = if cfg.mode.uses_sa() { sa(&h, l)? } else { zero.clone() };
            let mh = if cfg.mode.uses_ha() { ha(&h, l)? } else { zero.clone() };
            h = fl(&h, &md, &mh, &format!("layer{l}/fl"))?;
        }
        h
    };

    let (wh, bh) = (p("head/hidden/W")?, p("head/hidden/b")?);
    let hidden: Vec<Vec<f64>> = emb
        .iter()
        .map(|x| add(&matvec(wh, x), bh.data()).into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    let out = |name: &str| -> Result<Tensor> {
        let w = p(&format!("head/{name}/W"))?;
        let b = p(&format!("head/{name}/b"))?;
        let rows: Vec<Vec<f64>> = hidden.iter().map(|x| add(&matvec(w, x), b.data())).collect();
        Ok(Tensor::from_rows(&rows))
    };
    Ok(match cfg.head {
        Head::DualClass { .. } => LogitValues::Dual {
            speed: out("speed")?,
            dir: out("dir")?,
        },
        Head::Binary => LogitValues::Binary(out("out")?),
    })
}
