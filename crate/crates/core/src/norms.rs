//! Errors of finite element fields against exact fields, and observed orders.

use crate::error::{PnpError, Result};
use crate::fem::{basis_gradients, FeFunction, QuadratureRule};

/// Per-field triple ordered as (φ, p¹, p²).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldErrors {
    pub phi: f64,
    pub p1: f64,
    pub p2: f64,
}

impl FieldErrors {
    pub fn as_array(&self) -> [f64; 3] {
        [self.phi, self.p1, self.p2]
    }

    pub fn from_array([phi, p1, p2]: [f64; 3]) -> Self {
        FieldErrors { phi, p1, p2 }
    }
}

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub h: f64,
    pub coarse_h: Option<f64>,
    pub l2: FieldErrors,
    pub h1: FieldErrors,
    pub order_l2: Option<FieldErrors>,
    pub order_h1: Option<FieldErrors>,
}

impl ErrorRecord {
    /// Fills in the orders relative to the previous (coarser) row.
    pub fn with_orders_from(mut self, previous: &ErrorRecord) -> Result<Self> {
        let orders = |fine: &FieldErrors, coarse: &FieldErrors| -> Result<FieldErrors> {
            let f = fine.as_array();
            let c = coarse.as_array();
            let mut out = [0.0; 3];
            for i in 0..3 {
                out[i] = convergence_order(c[i], f[i], previous.h, self.h)?;
            }
            Ok(FieldErrors::from_array(out))
        };
        self.order_l2 = Some(orders(&self.l2, &previous.l2)?);
        self.order_h1 = Some(orders(&self.h1, &previous.h1)?);
        Ok(self)
    }
}

/// Accumulates `(value error², gradient error²)` over the mesh with the
/// degree-4 rule. Triangles are summed in index order.
fn error_integrals(
    f: &FeFunction,
    exact: impl Fn(f64, f64) -> f64,
    exact_grad: Option<&dyn Fn(f64, f64) -> [f64; 2]>,
) -> (f64, f64) {
    let mesh = f.mesh();
    let rule = QuadratureRule::degree4();
    let (mut value_sq, mut grad_sq) = (0.0, 0.0);
    for t in 0..mesh.num_triangles() {
        let verts = mesh.vertices(t);
        let (area, _) = basis_gradients(&verts);
        let grad_h = f.gradient_on(t);
        for ((lambda, w), [x, y]) in rule
            .points
            .iter()
            .zip(&rule.weights)
            .zip(rule.physical_points(&verts))
        {
            let e = f.evaluate_in(t, *lambda) - exact(x, y);
            value_sq += area * w * e * e;
            if let Some(g) = exact_grad {
                let ge = g(x, y);
                let (dx, dy) = (grad_h[0] - ge[0], grad_h[1] - ge[1]);
                grad_sq += area * w * (dx * dx + dy * dy);
            }
        }
    }
    (value_sq, grad_sq)
}

/// `‖f − u(·, t)‖_{L²}`.
pub fn l2_error(f: &FeFunction, exact: impl Fn(f64, f64, f64) -> f64, t: f64) -> f64 {
    error_integrals(f, |x, y| exact(x, y, t), None).0.sqrt()
}

/// Full `H¹` norm of `f − u(·, t)`: value and gradient parts together.
pub fn h1_error(
    f: &FeFunction,
    exact: impl Fn(f64, f64, f64) -> f64,
    exact_grad: impl Fn(f64, f64, f64) -> [f64; 2],
    t: f64,
) -> f64 {
    let grad = |x, y| exact_grad(x, y, t);
    let (v, g) = error_integrals(f, |x, y| exact(x, y, t), Some(&grad));
    (v + g).sqrt()
}

/// `H¹` seminorm of the error (gradient part only).
pub fn h1_seminorm_error(
    f: &FeFunction,
    exact: impl Fn(f64, f64, f64) -> f64,
    exact_grad: impl Fn(f64, f64, f64) -> [f64; 2],
    t: f64,
) -> f64 {
    let grad = |x, y| exact_grad(x, y, t);
    error_integrals(f, |x, y| exact(x, y, t), Some(&grad))
        .1
        .sqrt()
}

/// `log(e_H / e_h) / log(H / h)`.
pub fn convergence_order(
    err_coarse: f64,
    err_fine: f64,
    h_coarse: f64,
    h_fine: f64,
) -> Result<f64> {
    if !(err_coarse > 0.0 && err_fine > 0.0 && h_coarse > 0.0 && h_fine > 0.0) {
        return Err(PnpError::invalid(
            "convergence order needs positive errors and sizes",
        ));
    }
    if !(h_fine < h_coarse) {
        return Err(PnpError::invalid(
            "fine size must be smaller than coarse size",
        ));
    }
    Ok((err_coarse / err_fine).ln() / (h_coarse / h_fine).ln())
}
