use lps_tape::{TapeError, Var};

use super::TargetDensity;

/// `Σ_x φ_x` over all lattice sites.
pub fn magnetization(field: &[f64]) -> f64 {
    field.iter().sum()
}

/// Scalar φ⁴ theory on a periodic `L×L` lattice, `log ρ = −U`.
///
/// Sites are stored row-major (time-major), site `(t, x)` at index `t·L + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Phi4Lattice {
    extent: usize,
    kappa: f64,
    lambda: f64,
    right: Vec<usize>,
    left: Vec<usize>,
    up: Vec<usize>,
    down: Vec<usize>,
}

impl Phi4Lattice {
    pub const DEFAULT_LAMBDA: f64 = 0.022;

    pub fn new(extent: usize, kappa: f64, lambda: f64) -> Self {
        assert!(extent >= 1);
        let l = extent;
        let site = |t: usize, x: usize| (t % l) * l + (x % l);
        let mut right = Vec::with_capacity(l * l);
        let mut left = Vec::with_capacity(l * l);
        let mut up = Vec::with_capacity(l * l);
        let mut down = Vec::with_capacity(l * l);
        for t in 0..l {
            for x in 0..l {
                right.push(site(t, x + 1));
                left.push(site(t, x + l - 1));
                up.push(site(t + 1, x));
                down.push(site(t + l - 1, x));
            }
        }
        Self { extent, kappa, lambda, right, left, up, down }
    }

    pub fn extent(&self) -> usize {
        self.extent
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The action `U(φ)`.
    pub fn action(&self, phi: &[f64]) -> f64 {
        let mass = 1.0 - 2.0 * self.lambda;
        let mut u = 0.0;
        for (i, &p) in phi.iter().enumerate() {
            u += -2.0 * self.kappa * p * (phi[self.right[i]] + phi[self.up[i]]);
            u += mass * p * p + self.lambda * p.powi(4);
        }
        u
    }
}

impl TargetDensity for Phi4Lattice {
    fn name(&self) -> String {
        "phi4".into()
    }

    fn dim(&self) -> usize {
        self.extent * self.extent
    }

    fn eval_log_rho(&self, phi: &[f64]) -> f64 {
        -self.action(phi)
    }

    fn eval_grad_log_rho(&self, phi: &[f64]) -> Vec<f64> {
        let mass = 1.0 - 2.0 * self.lambda;
        (0..phi.len())
            .map(|i| {
                let nb = phi[self.right[i]] + phi[self.left[i]] + phi[self.up[i]] + phi[self.down[i]];
                2.0 * self.kappa * nb - 2.0 * mass * phi[i] - 4.0 * self.lambda * phi[i].powi(3)
            })
            .collect()
    }

    fn log_rho_batch<'t>(&self, phi: Var<'t>) -> Result<Var<'t>, TapeError> {
        let mass = 1.0 - 2.0 * self.lambda;
        let sq = phi.square();
        let local = sq.scale(-mass).sub(sq.square().scale(self.lambda))?;
        let nb = phi.index_select(1, &self.right)?.add(phi.index_select(1, &self.up)?)?;
        let hop = phi.mul(nb)?.scale(2.0 * self.kappa);
        local.add(hop)?.sum_axis(1)
    }

    fn score_batch<'t>(&self, phi: Var<'t>) -> Result<Var<'t>, TapeError> {
        let mass = 1.0 - 2.0 * self.lambda;
        let nb = phi
            .index_select(1, &self.right)?
            .add(phi.index_select(1, &self.left)?)?
            .add(phi.index_select(1, &self.up)?)?
            .add(phi.index_select(1, &self.down)?)?;
        let cube = phi.square().mul(phi)?;
        nb.scale(2.0 * self.kappa)
            .sub(phi.scale(2.0 * mass))?
            .sub(cube.scale(4.0 * self.lambda))
    }
}
