//! Generalized divisive normalization and its inverse.
//!
//! ```text
//! GDN:  y_i = x_i / sqrt(beta_i + sum_j gamma_ij * x_j^2)
//! IGDN: y_i = x_i * sqrt(beta_i + sum_j gamma_ij * x_j^2)
//! ```
//!
//! Learned layers store unconstrained `beta_raw`, `gamma_raw` and map them
//! through `beta = BETA_MIN + softplus(beta_raw)`, `gamma = softplus(gamma_raw)`,
//! so the denominator never drops below `sqrt(BETA_MIN)`.

use rand_chacha::ChaCha8Rng;
use semcom_tensor::{softplus, Graph, Real, Tensor, Var};

use super::params::{inverse_softplus, Ctx, ParamStore};
use super::NnError;

pub const BETA_MIN: f64 = 1e-6;

const GAMMA_INIT_DIAG: f64 = 0.1;
const GAMMA_INIT_OFF: f64 = 1e-4;

/// Effective (already positive) GDN parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GdnParams<T> {
    /// `[c]`
    pub beta: Tensor<T>,
    /// `[c, c]`, row `i` holds `gamma_ij`.
    pub gamma: Tensor<T>,
}

impl<T: Real> GdnParams<T> {
    pub fn new(beta: Tensor<T>, gamma: Tensor<T>) -> Result<Self, NnError> {
        let c = beta.len();
        if gamma.shape() != [c, c] {
            return Err(NnError::ChannelMismatch { expected: c, got: gamma.dim(0) });
        }
        Ok(GdnParams { beta, gamma })
    }

    /// Apply the positivity reparameterization to raw values.
    pub fn from_raw(beta_raw: &Tensor<T>, gamma_raw: &Tensor<T>) -> Result<Self, NnError> {
        let bmin = T::from_f64_lossy(BETA_MIN);
        Self::new(beta_raw.map(|v| bmin + softplus(v)), gamma_raw.map(softplus))
    }

    /// `beta = 1`, `gamma = 0`: both directions reduce to the identity.
    pub fn identity(channels: usize) -> Self {
        GdnParams { beta: Tensor::full(&[channels], T::one()), gamma: Tensor::zeros(&[channels, channels]) }
    }

    pub fn channels(&self) -> usize {
        self.beta.len()
    }
}

/// GDN (or IGDN when `inverse`) on graph nodes holding effective parameters.
pub fn gdn_graph<T: Real>(g: &mut Graph<T>, x: Var, beta: Var, gamma: Var, inverse: bool) -> Var {
    let shape = g.shape(x).to_vec();
    let c = *shape.last().expect("gdn input has a channel axis");
    let rows = g.value(x).len() / c;
    let x2 = g.square(x);
    let flat = g.reshape(x2, &[rows, c]);
    let mixed = g.matmul(flat, gamma, false, true);
    let mixed = g.reshape(mixed, &shape);
    let norm = g.add_last(mixed, beta);
    let root = g.sqrt(norm);
    if inverse {
        g.mul(x, root)
    } else {
        g.div(x, root)
    }
}

/// GDN over the last axis of `x` (any rank).
pub fn gdn<T: Real>(x: &Tensor<T>, p: &GdnParams<T>, inverse: bool) -> Result<Tensor<T>, NnError> {
    if x.last_dim() != p.channels() {
        return Err(NnError::ChannelMismatch { expected: p.channels(), got: x.last_dim() });
    }
    let mut g = Graph::inference();
    let xv = g.constant(x.clone());
    let b = g.constant(p.beta.clone());
    let gm = g.constant(p.gamma.clone());
    let y = gdn_graph(&mut g, xv, b, gm, inverse);
    Ok(g.value(y).clone())
}

/// Learned GDN/IGDN layer.
#[derive(Clone, Debug)]
pub struct Gdn {
    name: String,
    channels: usize,
    inverse: bool,
}

impl Gdn {
    pub fn new(name: impl Into<String>, channels: usize, inverse: bool) -> Self {
        Gdn { name: name.into(), channels, inverse }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, _rng: &mut ChaCha8Rng) {
        let c = self.channels;
        let beta_raw = T::from_f64_lossy(inverse_softplus(1.0 - BETA_MIN));
        store.insert(format!("{}.beta_raw", self.name), Tensor::full(&[c], beta_raw));
        let diag = T::from_f64_lossy(inverse_softplus(GAMMA_INIT_DIAG));
        let off = T::from_f64_lossy(inverse_softplus(GAMMA_INIT_OFF));
        store.insert(
            format!("{}.gamma_raw", self.name),
            Tensor::from_fn(&[c, c], |i| if i / c == i % c { diag } else { off }),
        );
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Var {
        let beta_raw = ctx.p(&format!("{}.beta_raw", self.name));
        let gamma_raw = ctx.p(&format!("{}.gamma_raw", self.name));
        let beta = ctx.g.softplus(beta_raw);
        let beta = ctx.g.affine(beta, 1.0, BETA_MIN);
        let gamma = ctx.g.softplus(gamma_raw);
        gdn_graph(&mut ctx.g, x, beta, gamma, self.inverse)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_configuration_is_exact() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 3, 4], |i| (i as f64 * 0.37).sin() * 3.0);
        let p = GdnParams::identity(4);
        assert_eq!(gdn(&x, &p, false).unwrap(), x);
        assert_eq!(gdn(&x, &p, true).unwrap(), x);
    }

    #[test]
    fn single_channel_closed_form() {
        let p = GdnParams::new(Tensor::full(&[1], 1.0), Tensor::full(&[1, 1], 1.0)).unwrap();
        let y = gdn(&Tensor::<f64>::full(&[1, 1, 1, 1], 1.0), &p, false).unwrap();
        assert!((y.item() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let p = GdnParams::<f64>::identity(3);
        let err = gdn(&Tensor::zeros(&[1, 2, 2, 4]), &p, false).unwrap_err();
        assert_eq!(err, NnError::ChannelMismatch { expected: 3, got: 4 });
    }

    #[test]
    fn reparameterization_keeps_beta_above_minimum() {
        let raw_b = Tensor::<f64>::from_vec(&[3], vec![-500.0, 0.0, 40.0]);
        let raw_g = Tensor::<f64>::full(&[3, 3], -800.0);
        let p = GdnParams::from_raw(&raw_b, &raw_g).unwrap();
        assert!(p.beta.data().iter().all(|&b| b >= BETA_MIN));
        assert!(p.gamma.data().iter().all(|&g| g >= 0.0));
    }
}
