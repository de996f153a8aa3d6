//! Euler–Maruyama transition kernels and path simulation.
//!
//! Every kernel is Gaussian with covariance `2σ²δt_n I`. For a state `x` at
//! index `n` the forward kernel has mean `x + F(x, n)·δt_n` and the backward
//! kernel (to index `n−1`) has mean `x + G(x, n)·δt_{n−1}`, where
//!
//! | method | F | G |
//! |--------|---|---|
//! | DIS  | `−σ²∇log p₀ + σu` | `σ²∇log p₀` |
//! | MCD  | `σ²∇log πₙ` | `−σ²∇log πₙ + σv` |
//! | CMCD | `σ²∇log πₙ + σu` | `σ²∇log πₙ − σu` |
//! | DBS  | `σ²∇log ρ + σu` | `−σ²∇log ρ + σv` |
//!
//! with `log πₙ = (1−βₙ)·log p₀ + βₙ·log ρ` and `βₙ = n/N`.

use std::fmt;
use std::str::FromStr;

use lps_tape::{kernels, Parameter, Tape, TapeError, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controls::{BoundControl, ControlNet, ControlSpec};
use crate::error::{check_dim, Error, Result};
use crate::priors::{BoundPrior, MixturePrior};
use crate::rng::{normal_vec, substream, PathRngs, Substream};
use crate::targets::{TargetDensity, LN_2PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dis,
    Mcd,
    Cmcd,
    Dbs,
    None,
}

impl Method {
    pub fn has_forward_control(self) -> bool {
        matches!(self, Method::Dis | Method::Cmcd | Method::Dbs)
    }

    pub fn has_backward_control(self) -> bool {
        matches!(self, Method::Mcd | Method::Dbs)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dis => "dis",
            Method::Mcd => "mcd",
            Method::Cmcd => "cmcd",
            Method::Dbs => "dbs",
            Method::None => "none",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dis" => Ok(Method::Dis),
            "mcd" => Ok(Method::Mcd),
            "cmcd" => Ok(Method::Cmcd),
            "dbs" => Ok(Method::Dbs),
            "none" | "gvi" | "gmvi" => Ok(Method::None),
            other => Err(Error::Invalid(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub method: Method,
    pub steps: usize,
    pub sigma: f64,
    pub use_score_head: bool,
    pub hidden: usize,
    pub embed_width: usize,
    pub init_amplitude: f64,
}

impl DiffusionConfig {
    pub fn new(method: Method, steps: usize) -> Self {
        Self {
            method,
            steps: if method == Method::None { 0 } else { steps },
            sigma: 1.0,
            use_score_head: false,
            hidden: 128,
            embed_width: 32,
            init_amplitude: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Invalid(format!("sigma {} must be positive", self.sigma)));
        }
        if self.method == Method::None && self.steps != 0 {
            return Err(Error::Invalid("method none requires zero steps".into()));
        }
        if self.method != Method::None && self.steps == 0 {
            return Err(Error::Invalid(format!("method {} needs at least one step", self.method)));
        }
        if !(self.init_amplitude > 0.0) {
            return Err(Error::Invalid("initial amplitude must be positive".into()));
        }
        Ok(())
    }
}

/// `δt_n = a·cos²(π n / 2N)` with `a = softplus(raw)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    raw_amplitude: Parameter,
    steps: usize,
}

impl StepSchedule {
    pub fn new(amplitude: f64, steps: usize) -> Self {
        Self {
            raw_amplitude: Parameter::new(Tensor::scalar(kernels::softplus_inv(amplitude))),
            steps,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn amplitude(&self) -> f64 {
        kernels::softplus(self.raw_amplitude.value().data()[0])
    }

    pub fn parameter(&self) -> &Parameter {
        &self.raw_amplitude
    }

    pub fn parameter_mut(&mut self) -> &mut Parameter {
        &mut self.raw_amplitude
    }

    fn shape_factor(n: usize, steps: usize) -> f64 {
        let c = (std::f64::consts::FRAC_PI_2 * n as f64 / steps as f64).cos();
        c * c
    }

    pub fn step_sizes(&self) -> Vec<f64> {
        let a = self.amplitude();
        (0..self.steps).map(|n| a * Self::shape_factor(n, self.steps)).collect()
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> (Var<'t>, Vec<Var<'t>>) {
        let raw = tape.param(&self.raw_amplitude);
        let a = raw.softplus();
        let dts = (0..self.steps).map(|n| a.scale(Self::shape_factor(n, self.steps))).collect();
        (raw, dts)
    }
}

/// Linear annealing exponent `βₙ = n/N`; `β = 1` when `N = 0`.
pub fn beta(n: usize, steps: usize) -> f64 {
    if steps == 0 {
        1.0
    } else {
        n as f64 / steps as f64
    }
}

/// Which optimizer group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Prior,
    Dynamics,
}

/// Prior, step schedule and controls of one sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerModel {
    pub config: DiffusionConfig,
    pub prior: MixturePrior,
    pub schedule: StepSchedule,
    pub forward_control: Option<ControlNet>,
    pub backward_control: Option<ControlNet>,
}

impl SamplerModel {
    /// Fresh model with zero-output controls, initialized from the control substream of `seed`.
    pub fn new(config: DiffusionConfig, prior: MixturePrior, seed: u64) -> Result<Self> {
        config.validate()?;
        let spec = ControlSpec {
            dim: prior.dim(),
            hidden: config.hidden,
            embed_width: config.embed_width,
            zero_final: true,
            score_head: config.use_score_head,
        };
        let mut rng = substream(seed, Substream::ControlInit);
        let forward_control = if config.method.has_forward_control() {
            Some(ControlNet::init(spec, &mut rng)?)
        } else {
            None
        };
        let backward_control = if config.method.has_backward_control() {
            Some(ControlNet::init(ControlSpec { score_head: false, ..spec }, &mut rng)?)
        } else {
            None
        };
        Ok(Self {
            config,
            schedule: StepSchedule::new(config.init_amplitude, config.steps),
            prior,
            forward_control,
            backward_control,
        })
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    /// Schedule, forward control, backward control, then prior components; new
    /// prior components therefore always append.
    pub fn parameters(&self) -> Vec<(ParamGroup, &Parameter)> {
        let mut v = Vec::new();
        if self.config.steps > 0 {
            v.push((ParamGroup::Dynamics, self.schedule.parameter()));
        }
        for c in [&self.forward_control, &self.backward_control].into_iter().flatten() {
            v.extend(c.parameters().into_iter().map(|p| (ParamGroup::Dynamics, p)));
        }
        v.extend(self.prior.parameters().into_iter().map(|p| (ParamGroup::Prior, p)));
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<(ParamGroup, &mut Parameter)> {
        let mut v = Vec::new();
        if self.config.steps > 0 {
            v.push((ParamGroup::Dynamics, self.schedule.parameter_mut()));
        }
        for c in [&mut self.forward_control, &mut self.backward_control].into_iter().flatten() {
            v.extend(c.parameters_mut().into_iter().map(|p| (ParamGroup::Dynamics, p)));
        }
        v.extend(self.prior.parameters_mut().into_iter().map(|p| (ParamGroup::Prior, p)));
        v
    }

    pub fn bind<'t, 'a>(
        &'a self,
        tape: &'t Tape,
        target: &'a dyn TargetDensity,
    ) -> Result<BoundSampler<'t, 'a>>
    where
        'a: 't,
    {
        check_dim(self.dim(), target.dim())?;
        let mut params = Vec::new();
        let (raw, dts) = self.schedule.bind(tape);
        if self.config.steps > 0 {
            params.push(raw);
        }
        let bind_net = |net: &Option<ControlNet>, params: &mut Vec<Var<'t>>| -> Result<_> {
            Ok(match net {
                Some(c) => {
                    let b = c.bind(tape, Some(target))?;
                    params.extend_from_slice(b.params());
                    Some(Box::new(b) as Box<dyn BoundControl<'t> + 't>)
                }
                None => None,
            })
        };
        let forward = bind_net(&self.forward_control, &mut params)?;
        let backward = bind_net(&self.backward_control, &mut params)?;
        let prior = self.prior.bind(tape)?;
        params.extend_from_slice(prior.params());
        Ok(BoundSampler {
            tape,
            method: self.config.method,
            sigma: self.config.sigma,
            steps: self.config.steps,
            dt_values: self.schedule.step_sizes(),
            dts,
            prior,
            forward,
            backward,
            target,
            params,
            max_non_finite: MAX_NON_FINITE_FRACTION,
        })
    }
}

/// A sampler whose parameters are recorded on a tape.
pub struct BoundSampler<'t, 'a> {
    tape: &'t Tape,
    method: Method,
    sigma: f64,
    steps: usize,
    dts: Vec<Var<'t>>,
    dt_values: Vec<f64>,
    prior: BoundPrior<'t>,
    forward: Option<Box<dyn BoundControl<'t> + 't>>,
    backward: Option<Box<dyn BoundControl<'t> + 't>>,
    target: &'a dyn TargetDensity,
    params: Vec<Var<'t>>,
    max_non_finite: f64,
}

/// Drift terms of one state, computed once and shared by its two kernels.
struct StateTerms<'t> {
    forward: Option<Var<'t>>,
    backward: Option<Var<'t>>,
}

/// How the simulated states enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathMode {
    /// Reparameterized: gradients flow through the states.
    Attached,
    /// States are constants; only the density evaluations carry gradients.
    Detached,
}

/// Simulated paths with per-path log importance weights, split into
/// `log ρ(x_N)` and the remaining terms.
pub struct PathBatch<'t> {
    pub states: Vec<Var<'t>>,
    pub components: Vec<usize>,
    pub log_target: Var<'t>,
    pub log_rest: Var<'t>,
    pub log_weights: Var<'t>,
    /// Rows whose weight and final state are finite.
    pub finite: Vec<usize>,
}

impl<'t> PathBatch<'t> {
    pub fn batch(&self) -> usize {
        self.log_weights.shape()[0]
    }

    pub fn dropped(&self) -> usize {
        self.batch() - self.finite.len()
    }

    /// Log weights of the finite rows.
    pub fn log_weight_values(&self) -> Vec<f64> {
        let lw = self.log_weights.value();
        self.finite.iter().map(|&i| lw.data()[i]).collect()
    }

    /// `x_N` rows of the finite paths.
    pub fn final_samples(&self) -> Vec<Vec<f64>> {
        let x = self.states.last().expect("at least one state").value();
        self.finite.iter().map(|&i| x.row_slice(i).to_vec()).collect()
    }

    /// `(log_target, log_rest)` restricted to finite rows.
    pub fn finite_terms(&self) -> Result<(Var<'t>, Var<'t>), TapeError> {
        if self.finite.len() == self.batch() {
            return Ok((self.log_target, self.log_rest));
        }
        Ok((
            self.log_target.index_select(0, &self.finite)?,
            self.log_rest.index_select(0, &self.finite)?,
        ))
    }

    fn flag(mut self, max_fraction: f64) -> Result<Self> {
        let lw = self.log_weights.value();
        let xn = self.states.last().expect("at least one state").value();
        self.finite = (0..self.batch())
            .filter(|&i| lw.data()[i].is_finite() && xn.row_slice(i).iter().all(|v| v.is_finite()))
            .collect();
        let dropped = self.dropped();
        if dropped as f64 > max_fraction * self.batch() as f64 || self.finite.is_empty() {
            return Err(Error::NonFinitePaths { dropped, total: self.batch() });
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} of {} non-finite paths", self.batch());
        }
        Ok(self)
    }
}

/// Largest fraction of non-finite paths tolerated in one batch.
pub const MAX_NON_FINITE_FRACTION: f64 = 0.1;

impl<'t, 'a> BoundSampler<'t, 'a> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn step_sizes(&self) -> &[f64] {
        &self.dt_values
    }

    pub fn prior(&self) -> &BoundPrior<'t> {
        &self.prior
    }

    /// Tape handles in the order of [`SamplerModel::parameters`].
    pub fn params(&self) -> &[Var<'t>] {
        &self.params
    }

    /// Fraction of non-finite paths above which simulation fails.
    pub fn with_max_non_finite(mut self, fraction: f64) -> Self {
        self.max_non_finite = fraction;
        self
    }

    /// Replaces the bound controls, e.g. with analytic ones in tests.
    pub fn with_controls(
        mut self,
        forward: Option<Box<dyn BoundControl<'t> + 't>>,
        backward: Option<Box<dyn BoundControl<'t> + 't>>,
    ) -> Self {
        self.forward = forward;
        self.backward = backward;
        self
    }

    /// `∇ log πₙ` on the geometric path.
    fn path_score(&self, x: Var<'t>, n: usize) -> Result<Var<'t>, TapeError> {
        let b = beta(n, self.steps);
        if b == 0.0 {
            self.prior.score(x)
        } else if b == 1.0 {
            self.target.score_batch(x)
        } else {
            let p = self.prior.score(x)?.scale(1.0 - b);
            p.add(self.target.score_batch(x)?.scale(b))
        }
    }

    /// The uncontrolled drift `f(x, n)`.
    pub fn drift(&self, x: Var<'t>, n: usize) -> Result<Var<'t>, TapeError> {
        let s2 = self.sigma * self.sigma;
        match self.method {
            Method::Dis => Ok(self.prior.score(x)?.scale(-s2)),
            Method::Mcd | Method::Cmcd => Ok(self.path_score(x, n)?.scale(s2)),
            Method::Dbs => Ok(self.target.score_batch(x)?.scale(s2)),
            Method::None => Ok(x.scale(0.0)),
        }
    }

    fn control(
        &self,
        which: &Option<Box<dyn BoundControl<'t> + 't>>,
        x: Var<'t>,
        n: usize,
    ) -> Result<Option<Var<'t>>, TapeError> {
        match which {
            Some(c) => Ok(Some(c.eval(x, n, self.steps)?.scale(self.sigma))),
            None => Ok(None),
        }
    }

    fn terms(&self, x: Var<'t>, n: usize, fwd: bool, bwd: bool) -> Result<StateTerms<'t>, TapeError> {
        if !fwd && !bwd {
            return Ok(StateTerms { forward: None, backward: None });
        }
        let f = self.drift(x, n)?;
        let plus = |a: Var<'t>, b: Option<Var<'t>>| match b {
            Some(b) => a.add(b),
            None => Ok(a),
        };
        let u = if fwd || self.method == Method::Cmcd {
            self.control(&self.forward, x, n)?
        } else {
            None
        };
        let forward = if fwd { Some(plus(f, u)?) } else { None };
        let backward = if bwd {
            Some(match self.method {
                Method::Dis => f.neg(),
                Method::Cmcd => match u {
                    Some(u) => f.sub(u)?,
                    None => f,
                },
                _ => plus(f.neg(), self.control(&self.backward, x, n)?)?,
            })
        } else {
            None
        };
        Ok(StateTerms { forward, backward })
    }

    pub fn forward_mean(&self, x: Var<'t>, n: usize) -> Result<Var<'t>, TapeError> {
        let shift = self.terms(x, n, true, false)?.forward.expect("requested");
        x.add(shift.mul(self.dts[n])?)
    }

    /// Mean of the backward kernel from state index `n ≥ 1` to `n−1`.
    pub fn backward_mean(&self, x: Var<'t>, n: usize) -> Result<Var<'t>, TapeError> {
        let shift = self.terms(x, n, false, true)?.backward.expect("requested");
        x.add(shift.mul(self.dts[n - 1])?)
    }

    /// `log N(y; mean, 2σ²δt I)` per row.
    fn kernel_logpdf(&self, y: Var<'t>, mean: Var<'t>, dt: Var<'t>) -> Result<Var<'t>, TapeError> {
        let d = y.shape()[1] as f64;
        let var2 = dt.scale(4.0 * self.sigma * self.sigma);
        let q = y.sub(mean)?.square().sum_axis(1)?.div(var2)?;
        let norm = var2.scale(std::f64::consts::PI).log()?.scale(-0.5 * d);
        q.neg().add(norm)
    }

    /// Log density of the forward transition `x → x_next` at step `n`.
    pub fn forward_logpdf(&self, x_next: Var<'t>, x: Var<'t>, n: usize) -> Result<Var<'t>> {
        self.check_step(n)?;
        Ok(self.kernel_logpdf(x_next, self.forward_mean(x, n)?, self.dts[n])?)
    }

    /// Log density of the backward transition from `x` (index `n`) to `x_prev` (index `n−1`).
    pub fn backward_logpdf(&self, x_prev: Var<'t>, x: Var<'t>, n: usize) -> Result<Var<'t>> {
        if n == 0 {
            return Err(Error::Invalid("backward kernel needs n ≥ 1".into()));
        }
        self.check_step(n - 1)?;
        Ok(self.kernel_logpdf(x_prev, self.backward_mean(x, n)?, self.dts[n - 1])?)
    }

    fn check_step(&self, n: usize) -> Result<()> {
        if n >= self.steps {
            return Err(Error::Invalid(format!("step {n} out of range for N={}", self.steps)));
        }
        if !(self.dt_values[n] > 0.0) {
            return Err(Error::Invalid(format!("step size {} must be positive", self.dt_values[n])));
        }
        Ok(())
    }

    /// `log bwd(x_n | x_{n+1}) − log fwd(x_{n+1} | x_n)`; the shared normalizers cancel.
    fn log_ratio(
        &self,
        x_n: Var<'t>,
        x_next: Var<'t>,
        fwd_shift: Var<'t>,
        bwd_shift: Var<'t>,
        n: usize,
    ) -> Result<Var<'t>, TapeError> {
        let dt = self.dts[n];
        let fwd_res = x_next.sub(x_n)?.sub(fwd_shift.mul(dt)?)?;
        let bwd_res = x_n.sub(x_next)?.sub(bwd_shift.mul(dt)?)?;
        let diff = fwd_res.square().sub(bwd_res.square())?.sum_axis(1)?;
        diff.div(dt.scale(4.0 * self.sigma * self.sigma))
    }

    fn noise(&self, rng: &mut impl Rng, batch: usize, d: usize) -> Var<'t> {
        let z = normal_vec(rng, batch * d);
        self.tape.constant(Tensor::new(vec![batch, d], z).expect("sized"))
    }

    fn step_noise(&self, eps: Var<'t>, n: usize) -> Result<Var<'t>, TapeError> {
        let scale = self.dts[n].scale(2.0).sqrt()?.scale(self.sigma);
        eps.mul(scale)
    }

    /// Draws `x₀` from the prior and runs the forward chain.
    pub fn simulate_forward(&self, batch: usize, rngs: &mut PathRngs, mode: PathMode) -> Result<PathBatch<'t>> {
        if batch == 0 {
            return Err(Error::Empty("batch"));
        }
        let d = self.prior.dim();
        let k = self.prior.k();
        let components: Vec<usize> = if k > 1 {
            (0..batch).map(|_| rngs.components.gen_range(0..k)).collect()
        } else {
            vec![0; batch]
        };
        let xi = self.noise(&mut rngs.noise, batch, d);
        let mut x0 = self.prior.sample(xi, &components)?;
        if mode == PathMode::Detached {
            x0 = x0.stop_gradient();
        }
        self.run_forward(x0, components, rngs, mode)
    }

    /// Runs the forward chain from given start states.
    pub fn simulate_forward_from(&self, x0: &Tensor, rngs: &mut PathRngs) -> Result<PathBatch<'t>> {
        crate::controls::check_batch(x0, self.prior.dim())?;
        let x0v = self.tape.constant(x0.clone());
        self.run_forward(x0v, vec![0; x0.shape()[0]], rngs, PathMode::Attached)
    }

    fn run_forward(
        &self,
        x0: Var<'t>,
        components: Vec<usize>,
        rngs: &mut PathRngs,
        mode: PathMode,
    ) -> Result<PathBatch<'t>> {
        let (batch, d) = (x0.shape()[0], x0.shape()[1]);
        let n_steps = self.steps;
        let mut rest = self.prior.log_density(x0)?.neg();
        let mut states = Vec::with_capacity(n_steps + 1);
        states.push(x0);
        let mut pending: Option<Var<'t>> = None;
        for n in 0..=n_steps {
            let x = states[n];
            let terms = self.terms(x, n, n < n_steps, n > 0)?;
            if let (Some(fwd), Some(bwd)) = (pending.take(), terms.backward) {
                rest = rest.add(self.log_ratio(states[n - 1], x, fwd, bwd, n - 1)?)?;
            }
            if n == n_steps {
                break;
            }
            let fwd = terms.forward.expect("requested");
            let eps = self.noise(&mut rngs.noise, batch, d);
            let mut next = x.add(fwd.mul(self.dts[n])?)?.add(self.step_noise(eps, n)?)?;
            if mode == PathMode::Detached {
                next = next.stop_gradient();
            }
            states.push(next);
            pending = Some(fwd);
        }
        let log_target = self.target.log_rho_batch(states[n_steps])?;
        let log_weights = log_target.add(rest)?;
        PathBatch { states, components, log_target, log_rest: rest, log_weights, finite: Vec::new() }
            .flag(self.max_non_finite)
    }

    /// Runs the backward chain from given end states `x_N`; weights use the
    /// same convention as the forward simulation.
    pub fn simulate_backward_from(&self, x_end: &Tensor, rng: &mut impl Rng) -> Result<PathBatch<'t>> {
        crate::controls::check_batch(x_end, self.prior.dim())?;
        let (batch, d) = (x_end.shape()[0], x_end.shape()[1]);
        let n_steps = self.steps;
        let xn = self.tape.constant(x_end.clone());
        let log_target = self.target.log_rho_batch(xn)?;
        let mut rev = vec![xn];
        let mut bwd = self.terms(xn, n_steps, false, n_steps > 0)?.backward;
        let mut ratio: Option<Var<'t>> = None;
        for n in (0..n_steps).rev() {
            let x_next = *rev.last().expect("nonempty");
            let shift = bwd.take().expect("backward term");
            let eps = self.noise(rng, batch, d);
            let x = x_next.add(shift.mul(self.dts[n])?)?.add(self.step_noise(eps, n)?)?;
            let terms = self.terms(x, n, true, n > 0)?;
            let r = self.log_ratio(x, x_next, terms.forward.expect("requested"), shift, n)?;
            ratio = Some(match ratio {
                Some(acc) => acc.add(r)?,
                None => r,
            });
            bwd = terms.backward;
            rev.push(x);
        }
        rev.reverse();
        let mut rest = self.prior.log_density(rev[0])?.neg();
        if let Some(r) = ratio {
            rest = rest.add(r)?;
        }
        let log_weights = log_target.add(rest)?;
        PathBatch {
            states: rev,
            components: vec![0; batch],
            log_target,
            log_rest: rest,
            log_weights,
            finite: Vec::new(),
        }
        .flag(self.max_non_finite)
    }
}

/// Settings for [`stationarity_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationarityOptions {
    pub dt: f64,
    pub chains: usize,
    pub burn_in: usize,
    pub samples_per_chain: usize,
    pub thin: usize,
    pub bins: usize,
    pub init_std: f64,
}

impl Default for StationarityOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            chains: 10_000,
            burn_in: 2_000,
            samples_per_chain: 100,
            thin: 100,
            bins: 40,
            init_std: 2.0,
        }
    }
}

/// Simulates `x ← x + σ²∇log p(x)·δt + σ√(2δt)·ε`, whose stationary law is the
/// prior `p`, and returns the total-variation distance between the pooled
/// histogram and exact bin masses. Supports `d ∈ {1, 2}`.
pub fn stationarity_check(
    prior: &MixturePrior,
    sigma: f64,
    opts: &StationarityOptions,
    rng: &mut impl Rng,
) -> Result<f64> {
    let d = prior.dim();
    if d > 2 {
        return Err(Error::Invalid("stationarity check supports d ≤ 2".into()));
    }
    if opts.samples_per_chain == 0 || opts.chains == 0 || opts.thin == 0 {
        return Err(Error::Invalid("stationarity run has zero length".into()));
    }
    if !(opts.dt > 0.0) || opts.bins == 0 {
        return Err(Error::Invalid("step size and bin count must be positive".into()));
    }
    let (lo, hi) = support(prior);
    let width = (hi - lo) / opts.bins as f64;
    let cells = opts.bins.pow(d as u32) + 1;
    let mut counts = vec![0u64; cells];
    let s2dt = sigma * sigma * opts.dt;
    let noise = sigma * (2.0 * opts.dt).sqrt();
    let mut total = 0u64;
    let cell_of = |x: &[f64]| -> usize {
        let mut idx = 0;
        for &v in x {
            let b = ((v - lo) / width).floor();
            if !(b >= 0.0 && b < opts.bins as f64) {
                return cells - 1;
            }
            idx = idx * opts.bins + b as usize;
        }
        idx
    };
    for _ in 0..opts.chains {
        let mut x: Vec<f64> = normal_vec(rng, d).into_iter().map(|z| opts.init_std * z).collect();
        let steps = opts.burn_in + opts.samples_per_chain * opts.thin;
        for s in 1..=steps {
            let g = prior.score(&x)?;
            let z = normal_vec(rng, d);
            for j in 0..d {
                x[j] += s2dt * g[j] + noise * z[j];
            }
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("stationarity chain diverged".into()));
            }
            if s > opts.burn_in && (s - opts.burn_in) % opts.thin == 0 {
                counts[cell_of(&x)] += 1;
                total += 1;
            }
        }
    }
    let exact = bin_masses(prior, lo, width, opts.bins)?;
    let tv = counts
        .iter()
        .zip(&exact)
        .map(|(&c, &p)| (c as f64 / total as f64 - p).abs())
        .sum::<f64>();
    Ok(0.5 * tv)
}

fn support(prior: &MixturePrior) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in prior.components() {
        for (m, s) in c.mean().iter().zip(c.std()) {
            lo = lo.min(m - 6.0 * s);
            hi = hi.max(m + 6.0 * s);
        }
    }
    (lo, hi)
}

/// Exact mass of each histogram cell by composite Simpson quadrature, plus the
/// mass outside the grid as the final entry.
fn bin_masses(prior: &MixturePrior, lo: f64, width: f64, bins: usize) -> Result<Vec<f64>> {
    const SUB: usize = 8;
    let d = prior.dim();
    let h = width / SUB as f64;
    let simpson: Vec<f64> = (0..=SUB)
        .map(|i| if i == 0 || i == SUB { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 } * h / 3.0)
        .collect();
    let mut masses = Vec::with_capacity(bins.pow(d as u32) + 1);
    if d == 1 {
        for b in 0..bins {
            let a = lo + b as f64 * width;
            let mut m = 0.0;
            for (i, w) in simpson.iter().enumerate() {
                m += w * prior.log_density(&[a + i as f64 * h])?.exp();
            }
            masses.push(m);
        }
    } else {
        for bx in 0..bins {
            for by in 0..bins {
                let (ax, ay) = (lo + bx as f64 * width, lo + by as f64 * width);
                let mut m = 0.0;
                for (i, wi) in simpson.iter().enumerate() {
                    for (j, wj) in simpson.iter().enumerate() {
                        let p = [ax + i as f64 * h, ay + j as f64 * h];
                        m += wi * wj * prior.log_density(&p)?.exp();
                    }
                }
                masses.push(m);
            }
        }
    }
    let inside: f64 = masses.iter().sum();
    masses.push((1.0 - inside).max(0.0));
    Ok(masses)
}

/// `log N(y; mean, 2σ²δt I)` on plain vectors; used by callers outside the tape.
pub fn transition_logpdf(y: &[f64], mean: &[f64], sigma: f64, dt: f64) -> f64 {
    let var = 2.0 * sigma * sigma * dt;
    let q: f64 = y.iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum();
    -0.5 * q / var - 0.5 * y.len() as f64 * (LN_2PI + var.ln())
}
