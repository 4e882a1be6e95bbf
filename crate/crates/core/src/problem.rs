//! Problem data: charges, source terms and exact fields.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// Scalar field `(x, y, t) -> value`.
pub type ScalarField = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// Vector field `(x, y, t) -> [vx, vy]`.
pub type VectorField = Arc<dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync>;

/// An exact field together with its spatial gradient.
#[derive(Clone)]
pub struct ExactField {
    pub value: ScalarField,
    pub gradient: VectorField,
}

impl ExactField {
    pub fn zero() -> Self {
        ExactField {
            value: Arc::new(|_, _, _| 0.0),
            gradient: Arc::new(|_, _, _| [0.0, 0.0]),
        }
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        (self.value)(x, y, t)
    }

    pub fn grad(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        (self.gradient)(x, y, t)
    }
}

/// Two-species PNP problem on the unit square with homogeneous Dirichlet data:
///
/// ```text
/// ∂ₜpⁱ − ∇·(∇pⁱ + qⁱ pⁱ ∇φ) = Fᵢ,   i = 1, 2
/// −Δφ − (q¹p¹ + q²p²)       = F₃
/// ```
#[derive(Clone)]
pub struct ProblemSpec {
    pub q1: f64,
    pub q2: f64,
    pub f1: ScalarField,
    pub f2: ScalarField,
    pub f3: ScalarField,
    pub exact_p1: ExactField,
    pub exact_p2: ExactField,
    pub exact_phi: ExactField,
    pub final_time: f64,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("q1", &self.q1)
            .field("q2", &self.q2)
            .field("final_time", &self.final_time)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// Charges `±1` with every source and exact field identically zero.
    pub fn zero(final_time: f64) -> Self {
        let zero: ScalarField = Arc::new(|_, _, _| 0.0);
        ProblemSpec {
            q1: 1.0,
            q2: -1.0,
            f1: zero.clone(),
            f2: zero.clone(),
            f3: zero,
            exact_p1: ExactField::zero(),
            exact_p2: ExactField::zero(),
            exact_phi: ExactField::zero(),
            final_time,
        }
    }

    pub fn charge(&self, species: Species) -> f64 {
        match species {
            Species::First => self.q1,
            Species::Second => self.q2,
        }
    }

    pub fn source(&self, species: Species) -> &ScalarField {
        match species {
            Species::First => &self.f1,
            Species::Second => &self.f2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Species {
    First,
    Second,
}

/// `sin(kπs)` and `cos(kπs)` for `k = 1, 2, 3`, from a single `sin_cos`.
#[derive(Clone, Copy)]
struct Harmonics {
    sin: [f64; 4],
    cos: [f64; 4],
}

impl Harmonics {
    fn new(s: f64) -> Self {
        let (s1, c1) = (PI * s).sin_cos();
        Harmonics {
            sin: [0.0, s1, 2.0 * s1 * c1, s1 * (3.0 - 4.0 * s1 * s1)],
            cos: [1.0, c1, 1.0 - 2.0 * s1 * s1, c1 * (4.0 * c1 * c1 - 3.0)],
        }
    }
}

#[derive(Clone, Copy)]
struct Point {
    x: Harmonics,
    y: Harmonics,
}

impl Point {
    fn new(x: f64, y: f64) -> Self {
        Point {
            x: Harmonics::new(x),
            y: Harmonics::new(y),
        }
    }

    /// `sin(kπx) sin(kπy)` and its gradient.
    fn mode(&self, k: usize) -> (f64, [f64; 2]) {
        let (sx, cx, sy, cy) = (self.x.sin[k], self.x.cos[k], self.y.sin[k], self.y.cos[k]);
        let kp = k as f64 * PI;
        (sx * sy, [kp * cx * sy, kp * sx * cy])
    }
}

fn scaled(a: f64, (v, g): (f64, [f64; 2])) -> (f64, [f64; 2]) {
    (a * v, [a * g[0], a * g[1]])
}

fn p1(pt: &Point, t: f64) -> (f64, [f64; 2]) {
    scaled(t.sin(), pt.mode(2))
}

fn p2(w: f64, pt: &Point, t: f64) -> (f64, [f64; 2]) {
    scaled((w * t).sin(), pt.mode(3))
}

fn phi(pt: &Point, t: f64) -> (f64, [f64; 2]) {
    scaled(1.0 - (-t).exp(), pt.mode(1))
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

// Each mode sin(kπx)sin(kπy) has Laplacian −2k²π² times itself.
fn source1(x: f64, y: f64, t: f64) -> f64 {
    let pt = Point::new(x, y);
    let (p, gp) = p1(&pt, t);
    let (f, gf) = phi(&pt, t);
    let dt_p = t.cos() * pt.mode(2).0;
    let lap_p = -8.0 * PI * PI * p;
    let lap_f = -2.0 * PI * PI * f;
    dt_p - lap_p - (dot(gp, gf) + p * lap_f)
}

fn source2(w: f64, x: f64, y: f64, t: f64) -> f64 {
    let pt = Point::new(x, y);
    let (p, gp) = p2(w, &pt, t);
    let (f, gf) = phi(&pt, t);
    let dt_p = w * (w * t).cos() * pt.mode(3).0;
    let lap_p = -18.0 * PI * PI * p;
    let lap_f = -2.0 * PI * PI * f;
    dt_p - lap_p + (dot(gp, gf) + p * lap_f)
}

fn source3(w: f64, x: f64, y: f64, t: f64) -> f64 {
    let pt = Point::new(x, y);
    let (f, _) = phi(&pt, t);
    2.0 * PI * PI * f - (p1(&pt, t).0 - p2(w, &pt, t).0)
}

/// The manufactured benchmark: `q = (+1, −1)`, final time 0.5, and
///
/// ```text
/// p¹ = sin t · sin 2πx · sin 2πy
/// p² = sin t · sin 3πx · sin 3πy
/// φ  = (1 − e⁻ᵗ) · sin πx · sin πy
/// ```
pub fn manufactured_benchmark() -> ProblemSpec {
    manufactured_benchmark_with_rate(1.0)
}

/// The manufactured benchmark with `p²` oscillating as `sin(wt)` in time;
/// `w = 1` gives [`manufactured_benchmark`]. The published convergence tables
/// are matched by `w = 2` (see the README).
pub fn manufactured_benchmark_with_rate(w: f64) -> ProblemSpec {
    ProblemSpec {
        q1: 1.0,
        q2: -1.0,
        f1: Arc::new(source1),
        f2: Arc::new(move |x, y, t| source2(w, x, y, t)),
        f3: Arc::new(move |x, y, t| source3(w, x, y, t)),
        exact_p1: ExactField {
            value: Arc::new(|x, y, t| p1(&Point::new(x, y), t).0),
            gradient: Arc::new(|x, y, t| p1(&Point::new(x, y), t).1),
        },
        exact_p2: ExactField {
            value: Arc::new(move |x, y, t| p2(w, &Point::new(x, y), t).0),
            gradient: Arc::new(move |x, y, t| p2(w, &Point::new(x, y), t).1),
        },
        exact_phi: ExactField {
            value: Arc::new(|x, y, t| phi(&Point::new(x, y), t).0),
            gradient: Arc::new(|x, y, t| phi(&Point::new(x, y), t).1),
        },
        final_time: 0.5,
    }
}
