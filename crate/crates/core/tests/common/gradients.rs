use bic::model::grad_check_model;
use bic::numerics::{
    grad_check, rng_from, Bound, GradCheckConfig, GradCheckReport, ParamStore, SoftmaxMask, Tape, Tensor, Var,
};
use bic::Result;
use rand::Rng;

use super::oracle::oracle_logits;
use super::{inputs, tiny_config, tiny_dataset, tiny_model};

pub fn rand_tensor(rng: &mut impl Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub type OpResult = (&'static str, std::result::Result<(), String>);

/// Runs a per-op gradient check at 1e-4 over several random shapes.
pub fn check_op<F>(out: &mut Vec<OpResult>, name: &'static str, shapes: &[(usize, usize)], mut f: F)
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    for trial in 0..4u64 {
        let mut rng = rng_from(1000 + trial);
        let scale = 1 + trial as usize % 3;
        let mut store = ParamStore::new();
        for (i, &(r, c)) in shapes.iter().enumerate() {
            let grow = |d: usize| if d == 1 { 1 } else { d * scale };
            let (r, c) = (grow(r), grow(c));
            store.register(format!("x{i}"), rand_tensor(&mut rng, r, c)).unwrap();
        }
        // A fixed random projection turns any output into a scalar with
        // non-uniform upstream gradients.
        let proj_rng = rng_from(77 + trial);
        let report = grad_check(
            &mut store,
            |tape, b: &Bound| {
                let ids: Vec<Var> = (0..shapes.len())
                    .map(|i| b.var(bic::numerics::ParamId::from_index(i)))
                    .collect();
                let out = f(tape, &ids)?;
                let s = tape.shape(out);
                let mut prng = proj_rng.clone();
                let w = tape.constant(rand_tensor(&mut prng, s[0], s[1]));
                tape.dot(out, w)
            },
            &GradCheckConfig::with_tol(1e-4),
        )
        .unwrap();
        if !report.passed() {
            out.push((name, Err(format!("trial {trial}: worst {:?}", report.worst()))));
            return;
        }
    }
    out.push((name, Ok(())));
}

/// Every differentiable tape op, each checked on four random shapes.
pub fn per_op_suite() -> Vec<OpResult> {
    let mut out = Vec::new();
    check_op(&mut out, "matmul", &[(2, 3), (3, 2)], |t, v| t.matmul(v[0], v[1]));
    check_op(&mut out, "matmul_nt", &[(2, 3), (4, 3)], |t, v| t.matmul_nt(v[0], v[1]));
    check_op(&mut out, "transpose", &[(2, 3)], |t, v| Ok(t.transpose(v[0])));
    check_op(&mut out, "add", &[(2, 3), (2, 3)], |t, v| t.add(v[0], v[1]));
    check_op(&mut out, "sub", &[(2, 3), (2, 3)], |t, v| t.sub(v[0], v[1]));
    check_op(&mut out, "mul", &[(2, 3), (2, 3)], |t, v| t.mul(v[0], v[1]));
    check_op(&mut out, "mul_self", &[(2, 2)], |t, v| t.mul(v[0], v[0]));
    check_op(&mut out, "add_row", &[(3, 2), (1, 2)], |t, v| t.add_row(v[0], v[1]));
    check_op(&mut out, "scale", &[(2, 2)], |t, v| Ok(t.scale(v[0], -1.7)));
    check_op(&mut out, "mul_scalar", &[(2, 3), (1, 1)], |t, v| {
        let s = t.sum(v[1]);
        t.mul_scalar(v[0], s)
    });
    check_op(&mut out, "concat_cols", &[(2, 1), (2, 3)], |t, v| t.concat_cols(&[v[0], v[1], v[0]]));
    check_op(&mut out, "concat_rows", &[(1, 2), (3, 2)], |t, v| t.concat_rows(&[v[1], v[0]]));
    check_op(&mut out, "slice_rows", &[(3, 2)], |t, v| t.slice_rows(v[0], 1, 2));
    check_op(&mut out, "slice_cols", &[(2, 3)], |t, v| t.slice_cols(v[0], 1, 2));
    check_op(&mut out, "flatten", &[(2, 3)], |t, v| Ok(t.flatten(v[0])));
    check_op(&mut out, "sum", &[(2, 3)], |t, v| Ok(t.sum(v[0])));
    check_op(&mut out, "mean", &[(2, 3)], |t, v| Ok(t.mean(v[0])));
    check_op(&mut out, "mean_rows", &[(3, 2)], |t, v| Ok(t.mean_rows(v[0])));
    check_op(&mut out, "relu", &[(2, 3)], |t, v| Ok(t.relu(v[0])));
    check_op(&mut out, "leaky_relu", &[(2, 3)], |t, v| Ok(t.leaky_relu(v[0], 0.01)));
    check_op(&mut out, "sigmoid", &[(2, 3)], |t, v| Ok(t.sigmoid(v[0])));
    check_op(&mut out, "softmax_rows", &[(2, 3)], |t, v| t.softmax(v[0], 1));
    check_op(&mut out, "softmax_cols", &[(2, 3)], |t, v| t.softmax(v[0], 0));
    check_op(&mut out, "softmax_masked", &[(3, 3)], |t, v| {
        let n = t.shape(v[0])[0];
        let cols: Vec<bool> = (0..n).map(|j| j != 1).collect();
        let rows: Vec<bool> = (0..n).map(|j| j != n - 1).collect();
        t.softmax_masked(v[0], SoftmaxMask { rows: Some(&rows), cols: Some(&cols) })
    });
    check_op(&mut out, "layer_norm", &[(3, 4), (1, 4), (1, 4)], |t, v| {
        t.layer_norm(v[0], v[1], v[2], 1e-5)
    });
    check_op(&mut out, "dot", &[(2, 3), (2, 3)], |t, v| t.dot(v[0], v[1]));
    check_op(&mut out, "maxpool", &[(5, 5)], |t, v| {
        let n = t.shape(v[0])[0];
        t.maxpool_fixed(v[0], 2.min(n))
    });
    check_op(&mut out, "cross_entropy", &[(4, 2)], |t, v| {
        let n = t.shape(v[0])[0];
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        t.cross_entropy(v[0], &labels)
    });
    check_op(&mut out, "sum_squares", &[(2, 3)], |t, v| Ok(t.sum_squares(v[0])));
    out
}

/// Whole-model check on the tiny instance: two tweets, two neighbors,
/// `D = 4`, `M = 2`, `K = 2`, in f64.
pub fn whole_model_check() -> GradCheckReport {
    let ds = tiny_dataset(4, 6);
    let m = tiny_model(tiny_config(2), &ds);
    let xs = inputs(&m, &ds, &["a", "b"]);
    grad_check_model(&m, &xs, &GradCheckConfig::with_tol(1e-3)).unwrap()
}

/// Largest absolute gap between model and oracle logits and attention, over
/// every user of the tiny instance with one and two steps.
pub fn forward_oracle_gap() -> f64 {
    let ds = tiny_dataset(4, 5);
    let mut worst = 0.0f64;
    for steps in [1, 2] {
        let m = tiny_model(tiny_config(steps), &ds);
        for x in inputs(&m, &ds, &["a", "b", "c", "d"]) {
            let tr = m.forward(&x).unwrap();
            let (want, atts) = oracle_logits(&m, &ds, &x.id, true);
            assert_eq!(tr.attention.len(), atts.len());
            for c in 0..2 {
                worst = worst.max((tr.logits[c] - want[c]).abs());
            }
            for (a, b) in tr.attention.iter().zip(&atts) {
                for (r, row) in b.iter().enumerate() {
                    for (c, v) in row.iter().enumerate() {
                        worst = worst.max((a.get(r, c) - v).abs());
                    }
                }
            }
        }
    }
    worst
}
