//! Control networks `u(x, n)`: a two-hidden-layer tanh MLP over the state and a
//! sinusoidal embedding of `n/N`, optionally plus a scaled target score.

use lps_tape::{Parameter, Tape, TapeError, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{substream, Substream};
use crate::targets::TargetDensity;

/// `[sin(2^j π t), cos(2^j π t)]` for `j = 0..width/2`, `t = n/N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    width: usize,
}

impl TimeEmbedding {
    pub fn new(width: usize) -> Result<Self> {
        if width == 0 || width % 2 != 0 {
            return Err(Error::Invalid(format!("embedding width {width} must be even and positive")));
        }
        Ok(Self { width })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn embed(&self, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width);
        for j in 0..self.width / 2 {
            let a = (1u64 << j) as f64 * std::f64::consts::PI * t;
            out.push(a.sin());
            out.push(a.cos());
        }
        out
    }

    fn embed_step(&self, n: usize, steps: usize) -> Vec<f64> {
        self.embed(if steps == 0 { 0.0 } else { n as f64 / steps as f64 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    weight: Parameter,
    bias: Parameter,
}

impl Dense {
    fn init<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize, zero: bool) -> Self {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| if zero { 0.0 } else { scale * rng.sample::<f64, _>(StandardNormal) })
            .collect();
        Self {
            weight: Parameter::new(Tensor::new(vec![fan_in, fan_out], w).expect("sized")),
            bias: Parameter::new(Tensor::zeros(&[1, fan_out])),
        }
    }

    fn params(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Architecture choices for a [`ControlNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlSpec {
    pub dim: usize,
    pub hidden: usize,
    pub embed_width: usize,
    pub zero_final: bool,
    pub score_head: bool,
}

impl ControlSpec {
    pub fn new(dim: usize) -> Self {
        Self { dim, hidden: 128, embed_width: 32, zero_final: true, score_head: false }
    }
}

/// Scalar time network `f₂(t)` multiplying the target score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHead {
    first: Dense,
    last: Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlNet {
    spec: ControlSpec,
    embedding: TimeEmbedding,
    input: Dense,
    hidden: Dense,
    output: Dense,
    score_head: Option<ScoreHead>,
}

impl ControlNet {
    pub fn init<R: Rng + ?Sized>(spec: ControlSpec, rng: &mut R) -> Result<Self> {
        if spec.dim == 0 || spec.hidden == 0 {
            return Err(Error::Invalid("control dimensions must be positive".into()));
        }
        let embedding = TimeEmbedding::new(spec.embed_width)?;
        let e = spec.embed_width;
        let input = Dense::init(rng, spec.dim + e, spec.hidden, false);
        let hidden = Dense::init(rng, spec.hidden, spec.hidden, false);
        let output = Dense::init(rng, spec.hidden, spec.dim, spec.zero_final);
        let score_head = spec.score_head.then(|| ScoreHead {
            first: Dense::init(rng, e, e, false),
            last: Dense::init(rng, e, 1, spec.zero_final),
        });
        Ok(Self { spec, embedding, input, hidden, output, score_head })
    }

    pub fn spec(&self) -> &ControlSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = Vec::new();
        v.extend(self.input.params());
        v.extend(self.hidden.params());
        v.extend(self.output.params());
        if let Some(h) = &self.score_head {
            v.extend(h.first.params());
            v.extend(h.last.params());
        }
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = Vec::new();
        v.extend(self.input.params_mut());
        v.extend(self.hidden.params_mut());
        v.extend(self.output.params_mut());
        if let Some(h) = &mut self.score_head {
            v.extend(h.first.params_mut());
            v.extend(h.last.params_mut());
        }
        v
    }

    /// Records the weights on `tape`. The score head, when present, reads the
    /// score of `target`.
    pub fn bind<'t, 'a>(
        &self,
        tape: &'t Tape,
        target: Option<&'a dyn TargetDensity>,
    ) -> Result<BoundControlNet<'t, 'a>> {
        if self.score_head.is_some() && target.is_none() {
            return Err(Error::Invalid("score head needs a target".into()));
        }
        let params: Vec<Var<'t>> = self.parameters().into_iter().map(|p| tape.param(p)).collect();
        let d = self.spec.dim;
        let w_in = params[0];
        let head = self.score_head.as_ref().map(|_| [params[6], params[7], params[8], params[9]]);
        Ok(BoundControlNet {
            dim: d,
            embedding: self.embedding,
            w_x: w_in.slice(0, 0, d)?,
            w_t: w_in.slice(0, d, self.spec.embed_width)?,
            b_in: params[1],
            w_h: params[2],
            b_h: params[3],
            w_out: params[4],
            b_out: params[5],
            head,
            target,
            params,
        })
    }
}

/// `init_control` with default width and embedding, seeded through the control substream.
pub fn init_control(dim: usize, seed: u64, zero_final: bool) -> Result<ControlNet> {
    let spec = ControlSpec { zero_final, ..ControlSpec::new(dim) };
    ControlNet::init(spec, &mut substream(seed, Substream::ControlInit))
}

/// A control evaluable on a batch `B×d` at step `n` of `N`.
pub trait BoundControl<'t> {
    fn eval(&self, x: Var<'t>, n: usize, steps: usize) -> Result<Var<'t>, TapeError>;
}

pub struct BoundControlNet<'t, 'a> {
    dim: usize,
    embedding: TimeEmbedding,
    w_x: Var<'t>,
    w_t: Var<'t>,
    b_in: Var<'t>,
    w_h: Var<'t>,
    b_h: Var<'t>,
    w_out: Var<'t>,
    b_out: Var<'t>,
    head: Option<[Var<'t>; 4]>,
    target: Option<&'a dyn TargetDensity>,
    params: Vec<Var<'t>>,
}

impl<'t> BoundControlNet<'t, '_> {
    /// Tape handles in the order of [`ControlNet::parameters`].
    pub fn params(&self) -> &[Var<'t>] {
        &self.params
    }
}

impl<'t> BoundControl<'t> for BoundControlNet<'t, '_> {
    fn eval(&self, x: Var<'t>, n: usize, steps: usize) -> Result<Var<'t>, TapeError> {
        let tape = x.tape();
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(TapeError::ShapeMismatch {
                op: "control",
                lhs: shape,
                rhs: vec![0, self.dim],
            });
        }
        let emb = tape.constant(Tensor::row(&self.embedding.embed_step(n, steps)));
        let time_bias = emb.matmul(self.w_t)?.add(self.b_in)?;
        let h1 = x.matmul(self.w_x)?.add(time_bias)?.tanh();
        let h2 = h1.matmul(self.w_h)?.add(self.b_h)?.tanh();
        let out = h2.matmul(self.w_out)?.add(self.b_out)?;
        match (self.head, self.target) {
            (Some([w1, b1, w2, b2]), Some(target)) => {
                let gain = emb.matmul(w1)?.add(b1)?.tanh().matmul(w2)?.add(b2)?;
                let score = target.score_batch(x.stop_gradient())?;
                out.add(score.mul(gain)?)
            }
            _ => Ok(out),
        }
    }
}

/// Per-sample Jacobians `∂u/∂x` (row-major `d_out×d_in`) of a batched map,
/// one reverse sweep per output coordinate.
pub fn batch_jacobians<F>(x: &Tensor, f: F) -> Result<Vec<Vec<f64>>>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, TapeError>,
{
    let (b, d_in) = (x.shape()[0], x.shape()[1]);
    let probe = Tape::new();
    let d_out = f(&probe, probe.constant(x.clone()))?.shape()[1];
    let mut jac = vec![vec![0.0; d_out * d_in]; b];
    for j in 0..d_out {
        let tape = Tape::new();
        let xv = tape.leaf(x.clone(), true);
        let out = f(&tape, xv)?.slice(1, j, 1)?.sum();
        let g = tape.backward(out)?.wrt_or_zeros(xv);
        for (i, row) in jac.iter_mut().enumerate() {
            row[j * d_in..(j + 1) * d_in].copy_from_slice(g.row_slice(i));
        }
    }
    Ok(jac)
}

/// Checks a state batch has `dim` columns.
pub(crate) fn check_batch(x: &Tensor, dim: usize) -> Result<()> {
    if x.rank() != 2 {
        return Err(Error::Invalid(format!("expected a B×{dim} batch, got shape {:?}", x.shape())));
    }
    check_dim(dim, x.shape()[1])
}
