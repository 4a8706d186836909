//! Straight-line recomputations with nested loops, independent of the tape.

use bic::data::Dataset;
use bic::model::BicModel;
use bic::numerics::ParamStore;

pub type Mat = Vec<Vec<f64>>;

pub fn param(m: &BicModel<f64>, name: &str) -> Mat {
    stored(&m.params, name)
}

pub fn stored(store: &ParamStore<f64>, name: &str) -> Mat {
    store.by_name(name).unwrap_or_else(|| panic!("missing {name}")).to_nested_f64()
}

pub fn mm(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|row| (0..b[0].len()).map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
        .collect()
}

pub fn plus_row(a: &Mat, r: &Mat) -> Mat {
    a.iter().map(|row| row.iter().zip(&r[0]).map(|(x, y)| x + y).collect()).collect()
}

pub fn lrelu(a: &Mat, s: f64) -> Mat {
    a.iter().map(|row| row.iter().map(|&x| if x > 0.0 { x } else { s * x }).collect()).collect()
}

pub fn layer_norm(a: &Mat, g: &Mat, b: &Mat, eps: f64) -> Mat {
    a.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(j, x)| g[0][j] * (x - mu) / (var + eps).sqrt() + b[0][j])
                .collect()
        })
        .collect()
}

/// Straight-line transformer layer; returns hidden states and the
/// head-averaged attention.
pub fn oracle_layer(store: &ParamStore<f64>, heads: usize, eps: f64, prefix: &str, x: &Mat, mask: &[bool]) -> (Mat, Mat) {
    let p = |n: &str| stored(store, &format!("{prefix}.{n}"));
    let n = x.len();
    let d = x[0].len();
    let dh = d / heads;
    let q = plus_row(&mm(x, &p("wq")), &p("bq"));
    let k = plus_row(&mm(x, &p("wk")), &p("bk"));
    let v = plus_row(&mm(x, &p("wv")), &p("bv"));
    let mut att = vec![vec![0.0; n]; n];
    let mut o = vec![vec![0.0; d]; n];
    for h in 0..heads {
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let s: Vec<f64> = (0..n)
                .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = (0..n).filter(|&j| mask[j]).map(|j| s[j]).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = (0..n).map(|j| if mask[j] { (s[j] - mx).exp() } else { 0.0 }).collect();
            let z: f64 = e.iter().sum();
            for j in 0..n {
                let a = e[j] / z;
                att[i][j] += a / heads as f64;
                for c in 0..dh {
                    o[i][h * dh + c] += a * v[j][h * dh + c];
                }
            }
        }
    }
    let o = plus_row(&mm(&o, &p("wo")), &p("bo"));
    let r1: Mat = x.iter().zip(&o).map(|(a, b)| a.iter().zip(b).map(|(u, w)| u + w).collect()).collect();
    let x1 = layer_norm(&r1, &p("ln1_g"), &p("ln1_b"), eps);
    let f = plus_row(&mm(&x1, &p("w1")), &p("b1"));
    let f: Mat = f.iter().map(|r| r.iter().map(|&v| v.max(0.0)).collect()).collect();
    let f = plus_row(&mm(&f, &p("w2")), &p("b2"));
    let r2: Mat = x1.iter().zip(&f).map(|(a, b)| a.iter().zip(b).map(|(u, w)| u + w).collect()).collect();
    (layer_norm(&r2, &p("ln2_g"), &p("ln2_b"), eps), att)
}

/// Every equation recomputed with nested loops from the raw dataset and the
/// named parameters, in column-vector form for the interaction scores.
/// `interact = false` skips the interaction step, as for the `none` variant.
pub fn oracle_logits(m: &BicModel<f64>, ds: &Dataset, id: &str, interact: bool) -> ([f64; 2], Vec<Mat>) {
    let (heads, eps) = (m.config.heads, m.config.ln_eps);
    let s = m.config.leaky_slope;
    let u = ds.user(id).unwrap();
    let mut x: Mat = std::iter::once(u.description_emb.clone()).chain(u.tweet_embs.iter().cloned()).collect();
    let tmask = vec![true; x.len()];

    let rel_idx = |r: &str| ds.relations().iter().position(|x| x == r).unwrap();
    let mut nbrs: Vec<(String, Vec<usize>)> = Vec::new();
    for e in ds.edges() {
        let other = if e.0 == id { &e.1 } else if e.1 == id { &e.0 } else { continue };
        match nbrs.iter_mut().find(|(n, _)| n == other) {
            Some((_, rs)) => rs.push(rel_idx(&e.2)),
            None => nbrs.push((other.clone(), vec![rel_idx(&e.2)])),
        }
    }
    let node = |uid: &str| {
        let r = ds.user(uid).unwrap();
        let mut v = r.features.clone();
        v.extend(&r.description_emb);
        let t = r.tweet_embs.len() as f64;
        v.extend((0..ds.dim()).map(|c| r.tweet_embs.iter().map(|tw| tw[c]).sum::<f64>() / t));
        v
    };
    let nodes: Mat = std::iter::once(node(id)).chain(nbrs.iter().map(|(n, _)| node(n))).collect();
    let mut g = lrelu(&plus_row(&mm(&nodes, &param(m, "graph_in.w")), &param(m, "graph_in.b")), s);
    let gmask = vec![true; g.len()];

    let mut atts = Vec::new();
    for l in 0..m.config.steps {
        let (nx, att) = oracle_layer(&m.params, heads, eps, &format!("step{l}.text"), &x, &tmask);
        x = nx;
        atts.push(att);

        let w0 = param(m, &format!("step{l}.rgcn.w_self"));
        let wr: Vec<Mat> = ds.relations().iter().map(|r| param(m, &format!("step{l}.rgcn.w_rel.{r}"))).collect();
        let mut conv = mm(&g, &w0);
        for (r, w) in wr.iter().enumerate() {
            let members: Vec<usize> = (0..nbrs.len()).filter(|&j| nbrs[j].1.contains(&r)).collect();
            for &j in &members {
                let msg_in = mm(&vec![g[j + 1].clone()], w);
                let msg_out = mm(&vec![g[0].clone()], w);
                for c in 0..g[0].len() {
                    conv[0][c] += msg_in[0][c] / members.len() as f64;
                    conv[j + 1][c] += msg_out[0][c];
                }
            }
        }
        let conv = lrelu(&conv, s);
        g = oracle_layer(&m.params, heads, eps, &format!("step{l}.graph"), &conv, &gmask).0;

        if !interact {
            continue;
        }
        // column form: w_ab = a · (θ b) with θ the transpose of the stored matrix
        let t1 = param(m, &format!("step{l}.interaction.theta1"));
        let t2 = param(m, &format!("step{l}.interaction.theta2"));
        let bil = |a: &[f64], t: &Mat, b: &[f64]| -> f64 {
            let dd = a.len();
            (0..dd).map(|i| (0..dd).map(|j| a[i] * t[j][i] * b[j]).sum::<f64>()).sum()
        };
        let (h0, g0) = (x[0].clone(), g[0].clone());
        let w_hh = bil(&h0, &t1, &h0);
        let w_hg = bil(&h0, &t2, &g0);
        let w_gg = bil(&g0, &t2, &g0);
        let w_gh = bil(&g0, &t1, &h0);
        let sm = |a: f64, b: f64| (1.0 / (1.0 + (b - a).exp()), 1.0 / (1.0 + (a - b).exp()));
        let (a1, a2) = sm(w_hh, w_hg);
        let (b1, b2) = sm(w_gg, w_gh);
        x[0] = h0.iter().zip(&g0).map(|(h, gg)| a1 * h + a2 * gg).collect();
        g[0] = g0.iter().zip(&h0).map(|(gg, h)| b1 * gg + b2 * h).collect();
    }

    let k = m.config.pool;
    let theta = param(m, "consistency.theta_sc");
    let mut cat = Vec::new();
    for a in &atts {
        let n = a.len();
        let mut flat = Vec::new();
        for bi in 0..k {
            for bj in 0..k {
                let mut best = f64::NEG_INFINITY;
                for r in bi * n / k..(bi + 1) * n / k {
                    for c in bj * n / k..(bj + 1) * n / k {
                        best = best.max(a[r][c]);
                    }
                }
                flat.push(best);
            }
        }
        cat.extend(mm(&vec![flat], &theta).remove(0));
    }
    let d = lrelu(&plus_row(&mm(&vec![cat], &param(m, "consistency.w_out")), &param(m, "consistency.b_out")), s);
    let mut z = x[0].clone();
    z.extend(&g[0]);
    z.extend(&d[0]);
    let lg = plus_row(&mm(&vec![z], &param(m, "classifier.w")), &param(m, "classifier.b"));
    ([lg[0][0], lg[0][1]], atts)
}

