//! Exchange of information between the text and graph interaction tokens.

use serde::{Deserialize, Serialize};

use crate::error::{BicError, Result};
use crate::numerics::{Bound, Init, ParamId, ParamStore, Real, SeededRng, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    /// Similarity-weighted mixing (the default).
    Similarity,
    /// Both tokens become their plain average.
    Hard,
    /// Mixing weights are learned sigmoid gates.
    Soft,
    /// A shared one-layer perceptron over the concatenated tokens.
    Mlp,
    /// Both tokens come from a linear map of the text token.
    Text,
    /// Both tokens come from a linear map of the graph token.
    Graph,
    /// Tokens pass through unchanged.
    None,
}

impl InteractionKind {
    pub const ALL: [InteractionKind; 7] = [
        InteractionKind::Similarity,
        InteractionKind::Hard,
        InteractionKind::Soft,
        InteractionKind::Mlp,
        InteractionKind::Text,
        InteractionKind::Graph,
        InteractionKind::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InteractionKind::Similarity => "similarity",
            InteractionKind::Hard => "hard",
            InteractionKind::Soft => "soft",
            InteractionKind::Mlp => "mlp",
            InteractionKind::Text => "text",
            InteractionKind::Graph => "graph",
            InteractionKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| BicError::Config(format!("unknown interaction variant `{s}`")))
    }
}

/// Un-normalized similarity scores for one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionWeights {
    pub hh: f64,
    pub hg: f64,
    pub gg: f64,
    pub gh: f64,
}

impl InteractionWeights {
    /// Softmax-normalized `(w_hh, w_hg)` and `(w_gg, w_gh)`.
    pub fn normalized(&self) -> ([f64; 2], [f64; 2]) {
        fn sm(a: f64, b: f64) -> [f64; 2] {
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            [ea / (ea + eb), eb / (ea + eb)]
        }
        (sm(self.hh, self.hg), sm(self.gg, self.gh))
    }
}

/// Starting point of the similarity matrices. Zero makes every score 0, so
/// mixing starts at an even split instead of a saturated softmax.
const THETA_INIT: Init = Init::Zeros;

/// Parameters of one interaction step.
///
/// Similarity scores are `w_hh = h·θ₁·h`, `w_hg = h·θ₂·g`, `w_gg = g·θ₂·g`,
/// `w_gh = g·θ₁·h` with row vectors. With `four` set, `w_gg` and `w_gh` get
/// their own matrices.
#[derive(Clone, Debug)]
pub enum InteractionParams {
    Similarity { theta: [ParamId; 2], extra: Option<[ParamId; 2]> },
    Hard,
    Soft { s1: ParamId, s2: ParamId },
    Mlp { w: ParamId, b: ParamId },
    Text { w: ParamId, b: ParamId },
    Graph { w: ParamId, b: ParamId },
    None,
}

pub struct InteractionOut {
    pub h: Var,
    pub g: Var,
    /// Raw `[hh, hg, gg, gh]` scores for the similarity variant.
    pub scores: Option<[Var; 4]>,
}

impl InteractionParams {
    pub fn register<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        kind: InteractionKind,
        dim: usize,
        four: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut w = |name: &str, r: usize, c: usize, init: Init| store.init(format!("{prefix}.{name}"), r, c, init, rng);
        Ok(match kind {
            InteractionKind::Similarity => {
                let theta = [w("theta1", dim, dim, THETA_INIT)?, w("theta2", dim, dim, THETA_INIT)?];
                let extra = if four {
                    Some([w("theta3", dim, dim, THETA_INIT)?, w("theta4", dim, dim, THETA_INIT)?])
                } else {
                    None
                };
                InteractionParams::Similarity { theta, extra }
            }
            InteractionKind::Hard => InteractionParams::Hard,
            InteractionKind::Soft => InteractionParams::Soft {
                s1: w("s1", 1, 1, Init::Zeros)?,
                s2: w("s2", 1, 1, Init::Zeros)?,
            },
            InteractionKind::Mlp => InteractionParams::Mlp {
                w: w("w", 2 * dim, 2 * dim, Init::XavierUniform)?,
                b: w("b", 1, 2 * dim, Init::Zeros)?,
            },
            InteractionKind::Text => InteractionParams::Text {
                w: w("w", dim, dim, Init::XavierUniform)?,
                b: w("b", 1, dim, Init::Zeros)?,
            },
            InteractionKind::Graph => InteractionParams::Graph {
                w: w("w", dim, dim, Init::XavierUniform)?,
                b: w("b", 1, dim, Init::Zeros)?,
            },
            InteractionKind::None => InteractionParams::None,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            InteractionParams::Similarity { theta, extra } => {
                theta.iter().chain(extra.iter().flatten()).copied().collect()
            }
            InteractionParams::Soft { s1, s2 } => vec![*s1, *s2],
            InteractionParams::Mlp { w, b } | InteractionParams::Text { w, b } | InteractionParams::Graph { w, b } => {
                vec![*w, *b]
            }
            InteractionParams::Hard | InteractionParams::None => Vec::new(),
        }
    }

    /// `h` and `g` are `1×D`.
    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, b: &Bound, h: Var, g: Var, slope: f64) -> Result<InteractionOut> {
        let (hs, gs) = (tape.shape(h), tape.shape(g));
        if hs != gs || hs[0] != 1 {
            return Err(BicError::dim("interaction", &hs, &gs));
        }
        let same = |v: Var| InteractionOut { h: v, g: v, scores: None };
        Ok(match self {
            InteractionParams::Similarity { theta, extra } => {
                let h1 = tape.matmul(h, b.var(theta[0]))?;
                let g2 = tape.matmul(g, b.var(theta[1]))?;
                let (g_gg, h_gh) = match extra {
                    Some(e) => (tape.matmul(g, b.var(e[0]))?, tape.matmul(h, b.var(e[1]))?),
                    None => (g2, h1),
                };
                let hh = tape.dot(h, h1)?;
                let hg = tape.dot(h, g2)?;
                let gg = tape.dot(g, g_gg)?;
                let gh = tape.dot(g, h_gh)?;
                let wh = tape.concat_cols(&[hh, hg])?;
                let wh = tape.softmax(wh, 1)?;
                let wg = tape.concat_cols(&[gg, gh])?;
                let wg = tape.softmax(wg, 1)?;
                let h_new = mix(tape, wh, h, g)?;
                let g_new = mix(tape, wg, g, h)?;
                InteractionOut { h: h_new, g: g_new, scores: Some([hh, hg, gg, gh]) }
            }
            InteractionParams::Hard => {
                let s = tape.add(h, g)?;
                same(tape.scale(s, R::lit(0.5)))
            }
            InteractionParams::Soft { s1, s2 } => {
                let a = tape.sigmoid(b.var(*s1));
                let c = tape.sigmoid(b.var(*s2));
                let h_new = gate(tape, a, h, g)?;
                let g_new = gate(tape, c, g, h)?;
                InteractionOut { h: h_new, g: g_new, scores: None }
            }
            InteractionParams::Mlp { w, b: bias } => {
                let dim = hs[1];
                let x = tape.concat_cols(&[h, g])?;
                let y = tape.matmul(x, b.var(*w))?;
                let y = tape.add_row(y, b.var(*bias))?;
                let y = tape.leaky_relu(y, R::lit(slope));
                InteractionOut {
                    h: tape.slice_cols(y, 0, dim)?,
                    g: tape.slice_cols(y, dim, dim)?,
                    scores: None,
                }
            }
            InteractionParams::Text { w, b: bias } => {
                let y = tape.matmul(h, b.var(*w))?;
                same(tape.add_row(y, b.var(*bias))?)
            }
            InteractionParams::Graph { w, b: bias } => {
                let y = tape.matmul(g, b.var(*w))?;
                same(tape.add_row(y, b.var(*bias))?)
            }
            InteractionParams::None => InteractionOut { h, g, scores: None },
        })
    }
}

/// `w[0]·own + w[1]·other` for a `1×2` weight row.
fn mix<R: Real>(tape: &mut Tape<R>, w: Var, own: Var, other: Var) -> Result<Var> {
    let a = tape.slice_cols(w, 0, 1)?;
    let c = tape.slice_cols(w, 1, 1)?;
    let x = tape.mul_scalar(own, a)?;
    let y = tape.mul_scalar(other, c)?;
    tape.add(x, y)
}

/// `a·own + (1−a)·other` for a `1×1` gate.
fn gate<R: Real>(tape: &mut Tape<R>, a: Var, own: Var, other: Var) -> Result<Var> {
    let diff = tape.sub(own, other)?;
    let d = tape.mul_scalar(diff, a)?;
    tape.add(other, d)
}

/// Similarity interaction on plain vectors with frozen `θ₁`, `θ₂` (stored
/// `[D, D]`, applied on the right of a row vector).
pub fn interact_similarity<R: Real>(
    h: &[R],
    g: &[R],
    theta1: &Tensor<R>,
    theta2: &Tensor<R>,
) -> Result<(Vec<R>, Vec<R>, InteractionWeights)> {
    let mut store = ParamStore::new();
    let t1 = store.register("theta1", theta1.clone())?;
    let t2 = store.register("theta2", theta2.clone())?;
    let p = InteractionParams::Similarity { theta: [t1, t2], extra: None };
    let (h2, g2, w) = run_frozen(&p, &store, h, g)?;
    Ok((h2, g2, w.expect("similarity variant yields scores")))
}

/// Runs any interaction variant with frozen parameters.
pub fn interact_variant<R: Real>(
    params: &InteractionParams,
    store: &ParamStore<R>,
    h: &[R],
    g: &[R],
) -> Result<(Vec<R>, Vec<R>)> {
    let (h2, g2, _) = run_frozen(params, store, h, g)?;
    Ok((h2, g2))
}

fn run_frozen<R: Real>(
    params: &InteractionParams,
    store: &ParamStore<R>,
    h: &[R],
    g: &[R],
) -> Result<(Vec<R>, Vec<R>, Option<InteractionWeights>)> {
    let mut tape = Tape::new();
    let b = store.bind_frozen(&mut tape);
    let hv = tape.constant(Tensor::row_vector(h));
    let gv = tape.constant(Tensor::row_vector(g));
    let out = params.forward(&mut tape, &b, hv, gv, 0.01)?;
    let w = out.scores.map(|s| InteractionWeights {
        hh: tape.value(s[0]).item().as_f64(),
        hg: tape.value(s[1]).item().as_f64(),
        gg: tape.value(s[2]).item().as_f64(),
        gh: tape.value(s[3]).item().as_f64(),
    });
    Ok((tape.value(out.h).data().to_vec(), tape.value(out.g).data().to_vec(), w))
}
