//! Backward-Euler time stepping for the PNP system: the coupled scheme with
//! Gummel iteration, and the semi- and fully decoupled two-grid schemes.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use crate::error::{PnpError, Result};
use crate::fem::{
    assemble_drift_with, assemble_mass, assemble_stiffness, dirichlet_matrix_in_place,
    dirichlet_rhs_in_place, prolongation_matrix, EdgeLoad, ElementPattern, FeFunction,
};
use crate::mesh::{Diagonal, Mesh};
use crate::problem::{ProblemSpec, ScalarField, Species};
use crate::sparse::{
    default_max_iter, solve_nonsymmetric_from, solve_spd_from, SparseMatrix, DEFAULT_LINEAR_TOL,
};

/// Norm used by the Gummel stopping test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GummelNorm {
    /// Finite element `L²` norm, `sqrt(vᵀ M v)`.
    #[default]
    L2,
    /// Plain Euclidean norm of the coefficient vector.
    Euclidean,
}

impl FromStr for GummelNorm {
    type Err = PnpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(GummelNorm::L2),
            "euclidean" => Ok(GummelNorm::Euclidean),
            other => Err(PnpError::invalid(format!("unknown Gummel norm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub gummel_tol: f64,
    pub max_gummel: usize,
    pub lin_tol: f64,
    /// Krylov iteration cap; `None` means ten sweeps per unknown.
    pub max_lin_iter: Option<usize>,
    pub gummel_norm: GummelNorm,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            gummel_tol: 1e-6,
            max_gummel: 100,
            lin_tol: DEFAULT_LINEAR_TOL,
            max_lin_iter: None,
            gummel_norm: GummelNorm::L2,
        }
    }
}

/// Uniform partition of `[0, T]` into `n_steps` steps of size `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub tau: f64,
    pub n_steps: usize,
    pub final_time: f64,
}

impl TimeGrid {
    pub fn new(final_time: f64, n_steps: usize) -> Result<Self> {
        if !(final_time >= 0.0) || !final_time.is_finite() {
            return Err(PnpError::invalid(
                "final time must be finite and nonnegative",
            ));
        }
        if n_steps == 0 {
            if final_time != 0.0 {
                return Err(PnpError::invalid(
                    "a positive horizon needs at least one step",
                ));
            }
            return Ok(TimeGrid {
                tau: 0.0,
                n_steps,
                final_time,
            });
        }
        Ok(TimeGrid {
            tau: final_time / n_steps as f64,
            n_steps,
            final_time,
        })
    }

    /// Step count closest to a requested step size: `round(T / tau)`, at least one.
    pub fn with_step(final_time: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(PnpError::invalid("time step must be positive"));
        }
        TimeGrid::new(final_time, ((final_time / tau).round() as usize).max(1))
    }

    /// `tau ≈ h²` for a mesh with `m` subdivisions.
    pub fn squared_mesh_size(final_time: f64, m: usize) -> Result<Self> {
        let steps = (final_time * (m * m) as f64).round() as usize;
        TimeGrid::new(final_time, steps.max(1))
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.tau
    }
}

/// `(p¹, p², φ)` at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct PnpState {
    pub t: f64,
    pub p1: FeFunction,
    pub p2: FeFunction,
    pub phi: FeFunction,
}

impl PnpState {
    pub fn zero(mesh: Arc<Mesh>, t: f64) -> Self {
        PnpState {
            t,
            p1: FeFunction::zero(mesh.clone()),
            p2: FeFunction::zero(mesh.clone()),
            phi: FeFunction::zero(mesh),
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.p1.mesh()
    }

    pub fn concentration(&self, species: Species) -> &FeFunction {
        match species {
            Species::First => &self.p1,
            Species::Second => &self.p2,
        }
    }

    pub fn vanishes_on_boundary(&self) -> bool {
        self.p1.vanishes_on_boundary()
            && self.p2.vanishes_on_boundary()
            && self.phi.vanishes_on_boundary()
    }

    /// Linear extrapolation `2 self − older` to the next time level.
    pub fn extrapolated(&self, older: &PnpState) -> Result<PnpState> {
        older.check_mesh(self.mesh())?;
        let ext = |a: &FeFunction, b: &FeFunction| {
            let c = a
                .coeffs()
                .iter()
                .zip(b.coeffs())
                .map(|(x, y)| 2.0 * x - y)
                .collect();
            FeFunction::new(a.mesh().clone(), c)
        };
        Ok(PnpState {
            t: 2.0 * self.t - older.t,
            p1: ext(&self.p1, &older.p1)?,
            p2: ext(&self.p2, &older.p2)?,
            phi: ext(&self.phi, &older.phi)?,
        })
    }

    fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        if !(self.p1.same_mesh(mesh) && self.p2.same_mesh(mesh) && self.phi.same_mesh(mesh)) {
            return Err(PnpError::invalid(
                "state fields do not live on the solver mesh",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub gummel_iterations: usize,
    pub linear_solve_count: usize,
    pub wall_seconds: f64,
}

impl std::ops::AddAssign for StepStats {
    fn add_assign(&mut self, rhs: Self) {
        self.gummel_iterations += rhs.gummel_iterations;
        self.linear_solve_count += rhs.linear_solve_count;
        self.wall_seconds += rhs.wall_seconds;
    }
}

/// Operators of one mesh that do not change between time steps.
#[derive(Debug, Clone)]
pub struct Discretization {
    mesh: Arc<Mesh>,
    pattern: ElementPattern,
    mass: SparseMatrix,
    stiffness: SparseMatrix,
    poisson: SparseMatrix,
    boundary_mask: Vec<bool>,
    edge_load: EdgeLoad,
}

impl Discretization {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let pattern = ElementPattern::new(&mesh);
        let mass = assemble_mass(&mesh);
        let stiffness = assemble_stiffness(&mesh);
        let boundary_mask: Vec<bool> = (0..mesh.num_nodes()).map(|k| mesh.is_boundary(k)).collect();
        let mut poisson = stiffness.clone();
        dirichlet_matrix_in_place(&mut poisson, &boundary_mask);
        Discretization {
            edge_load: EdgeLoad::new(&mesh),
            mesh,
            pattern,
            mass,
            stiffness,
            poisson,
            boundary_mask,
        }
    }

    pub fn uniform(m: usize) -> Result<Self> {
        Discretization::with_diagonal(m, Diagonal::Main)
    }

    pub fn with_diagonal(m: usize, diagonal: Diagonal) -> Result<Self> {
        Ok(Discretization::new(Arc::new(Mesh::with_diagonal(
            m, diagonal,
        )?)))
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn mass(&self) -> &SparseMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &SparseMatrix {
        &self.stiffness
    }

    fn max_iter(&self, tols: &Tolerances) -> usize {
        tols.max_lin_iter
            .unwrap_or_else(|| default_max_iter(self.mesh.num_nodes()))
    }

    /// `sqrt(vᵀ M v)` of a coefficient vector.
    pub fn l2_norm(&self, coeffs: &[f64]) -> f64 {
        let mv = self
            .mass
            .spmv(coeffs)
            .expect("coefficient length matches mesh");
        mv.iter()
            .zip(coeffs)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .max(0.0)
            .sqrt()
    }

    fn difference_norm(&self, a: &FeFunction, b: &FeFunction, norm: GummelNorm) -> f64 {
        let d: Vec<f64> = a
            .coeffs()
            .iter()
            .zip(b.coeffs())
            .map(|(x, y)| x - y)
            .collect();
        match norm {
            GummelNorm::L2 => self.l2_norm(&d),
            GummelNorm::Euclidean => d.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    /// Edge-midpoint load vector `(f(·, t), ψ_j)`.
    pub fn load(&self, f: &ScalarField, t: f64) -> Vec<f64> {
        self.edge_load.assemble(|x, y, s| f(x, y, s), t)
    }

    fn check(&self, f: &FeFunction) -> Result<()> {
        if !f.same_mesh(&self.mesh) {
            return Err(PnpError::invalid(format!(
                "function on mesh m={} used with mesh m={}",
                f.mesh().m(),
                self.mesh.m()
            )));
        }
        Ok(())
    }

    /// Poisson solve `Sφ = M(q¹p¹ + q²p²) + b₃` given a precomputed `b₃`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn poisson_with_load(
        &self,
        p1: &FeFunction,
        p2: &FeFunction,
        q1: f64,
        q2: f64,
        load: &[f64],
        guess: Option<&FeFunction>,
        tols: &Tolerances,
    ) -> Result<FeFunction> {
        self.check(p1)?;
        self.check(p2)?;
        let charge: Vec<f64> = p1
            .coeffs()
            .iter()
            .zip(p2.coeffs())
            .map(|(a, b)| q1 * a + q2 * b)
            .collect();
        let mut rhs = self.mass.spmv(&charge)?;
        for (r, l) in rhs.iter_mut().zip(load) {
            *r += l;
        }
        dirichlet_rhs_in_place(&mut rhs, &self.boundary_mask);
        let (x, _) = solve_spd_from(
            &self.poisson,
            &rhs,
            guess.map(FeFunction::coeffs),
            tols.lin_tol,
            self.max_iter(tols),
        )?;
        FeFunction::new(self.mesh.clone(), clean_boundary(x, &self.boundary_mask))
    }

    /// Nernst–Planck solve `(M/τ + S + D(φ, q)) p = M p_prev / τ + b`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn np_with_load(
        &self,
        p_prev: &FeFunction,
        phi: &FeFunction,
        q: f64,
        tau: f64,
        load: &[f64],
        guess: Option<&FeFunction>,
        tols: &Tolerances,
    ) -> Result<FeFunction> {
        self.check(p_prev)?;
        self.check(phi)?;
        if !(tau > 0.0) {
            return Err(PnpError::invalid("time step must be positive"));
        }
        let drift = assemble_drift_with(&self.pattern, &self.mesh, phi, q)?;
        let mut a = self.mass.add_scaled(1.0 / tau, &self.stiffness, 1.0)?;
        a = a.add_scaled(1.0, &drift, 1.0)?;
        dirichlet_matrix_in_place(&mut a, &self.boundary_mask);
        let mut rhs = self.mass.spmv(p_prev.coeffs())?;
        for (r, l) in rhs.iter_mut().zip(load) {
            *r = *r / tau + l;
        }
        dirichlet_rhs_in_place(&mut rhs, &self.boundary_mask);
        let (x, _) = solve_nonsymmetric_from(
            &a,
            &rhs,
            guess.map(FeFunction::coeffs),
            tols.lin_tol,
            self.max_iter(tols),
        )?;
        FeFunction::new(self.mesh.clone(), clean_boundary(x, &self.boundary_mask))
    }

    /// Potential for given concentrations at time `t`.
    pub fn solve_poisson(
        &self,
        p1: &FeFunction,
        p2: &FeFunction,
        problem: &ProblemSpec,
        t: f64,
        tols: &Tolerances,
    ) -> Result<FeFunction> {
        let load = self.load(&problem.f3, t);
        self.poisson_with_load(p1, p2, problem.q1, problem.q2, &load, None, tols)
    }

    /// One backward-Euler Nernst–Planck step with a frozen potential.
    #[allow(clippy::too_many_arguments)]
    pub fn solve_np(
        &self,
        p_prev: &FeFunction,
        phi: &FeFunction,
        q: f64,
        source: &ScalarField,
        tau: f64,
        t_next: f64,
        tols: &Tolerances,
    ) -> Result<FeFunction> {
        let load = self.load(source, t_next);
        self.np_with_load(p_prev, phi, q, tau, &load, None, tols)
    }
}

/// The Krylov solvers return tiny but nonzero values on identity rows when
/// started from a nonzero guess; boundary values are exactly zero.
fn clean_boundary(mut x: Vec<f64>, mask: &[bool]) -> Vec<f64> {
    for (v, &b) in x.iter_mut().zip(mask) {
        if b {
            *v = 0.0;
        }
    }
    x
}

/// Free-standing Poisson solve on `mesh`.
pub fn solve_poisson(
    mesh: &Arc<Mesh>,
    p1: &FeFunction,
    p2: &FeFunction,
    problem: &ProblemSpec,
    t: f64,
    lin_tol: f64,
) -> Result<FeFunction> {
    let tols = Tolerances {
        lin_tol,
        ..Tolerances::default()
    };
    Discretization::new(mesh.clone()).solve_poisson(p1, p2, problem, t, &tols)
}

/// Free-standing Nernst–Planck step on `mesh`.
#[allow(clippy::too_many_arguments)]
pub fn solve_np(
    mesh: &Arc<Mesh>,
    p_prev: &FeFunction,
    phi: &FeFunction,
    q: f64,
    source: &ScalarField,
    tau: f64,
    t_next: f64,
    lin_tol: f64,
) -> Result<FeFunction> {
    let tols = Tolerances {
        lin_tol,
        ..Tolerances::default()
    };
    Discretization::new(mesh.clone()).solve_np(p_prev, phi, q, source, tau, t_next, &tols)
}

/// Result of a Gummel iteration at one time level.
#[derive(Debug, Clone)]
pub struct GummelOutcome {
    pub state: PnpState,
    /// Iterate preceding `state`; the last residual is measured between them.
    pub previous_iterate: PnpState,
    /// Stopping-test value after each iteration.
    pub residuals: Vec<f64>,
    pub stats: StepStats,
}

/// Gummel iteration for the level after `prev`, started from `guess`.
///
/// Each sweep solves both Nernst–Planck equations with the current potential,
/// then the Poisson equation with the new concentrations, and stops once the
/// summed change of the three fields is at most `gummel_tol`.
pub fn gummel_solve(
    disc: &Discretization,
    prev: &PnpState,
    guess: &PnpState,
    problem: &ProblemSpec,
    tau: f64,
    tols: &Tolerances,
) -> Result<GummelOutcome> {
    let start = Instant::now();
    prev.check_mesh(disc.mesh())?;
    guess.check_mesh(disc.mesh())?;
    if !(tols.gummel_tol > 0.0) {
        return Err(PnpError::invalid("Gummel tolerance must be positive"));
    }
    let t_next = prev.t + tau;
    let load1 = disc.load(&problem.f1, t_next);
    let load2 = disc.load(&problem.f2, t_next);
    let load3 = disc.load(&problem.f3, t_next);

    let mut current = PnpState {
        t: t_next,
        ..guess.clone()
    };
    let mut residuals = Vec::new();
    let mut solves = 0;
    while residuals.len() < tols.max_gummel {
        let p1 = disc.np_with_load(
            &prev.p1,
            &current.phi,
            problem.q1,
            tau,
            &load1,
            Some(&current.p1),
            tols,
        )?;
        let p2 = disc.np_with_load(
            &prev.p2,
            &current.phi,
            problem.q2,
            tau,
            &load2,
            Some(&current.p2),
            tols,
        )?;
        let phi = disc.poisson_with_load(
            &p1,
            &p2,
            problem.q1,
            problem.q2,
            &load3,
            Some(&current.phi),
            tols,
        )?;
        solves += 3;
        let next = PnpState {
            t: t_next,
            p1,
            p2,
            phi,
        };
        let change = disc.difference_norm(&next.p1, &current.p1, tols.gummel_norm)
            + disc.difference_norm(&next.p2, &current.p2, tols.gummel_norm)
            + disc.difference_norm(&next.phi, &current.phi, tols.gummel_norm);
        residuals.push(change);
        let previous_iterate = std::mem::replace(&mut current, next);
        if change <= tols.gummel_tol {
            let stats = StepStats {
                gummel_iterations: residuals.len(),
                linear_solve_count: solves,
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            return Ok(GummelOutcome {
                state: current,
                previous_iterate,
                residuals,
                stats,
            });
        }
    }
    Err(PnpError::Gummel { history: residuals })
}

/// The Gummel stopping-test value between two states.
pub fn gummel_change(disc: &Discretization, a: &PnpState, b: &PnpState, norm: GummelNorm) -> f64 {
    disc.difference_norm(&a.p1, &b.p1, norm)
        + disc.difference_norm(&a.p2, &b.p2, norm)
        + disc.difference_norm(&a.phi, &b.phi, norm)
}

/// Advances the coupled scheme by one step, iterating from the current level.
pub fn gummel_step(
    disc: &Discretization,
    state: &PnpState,
    problem: &ProblemSpec,
    tau: f64,
    tols: &Tolerances,
) -> Result<(PnpState, StepStats)> {
    let out = gummel_solve(disc, state, state, problem, tau, tols)?;
    Ok((out.state, out.stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Coupled scheme with Gummel iteration on a single mesh.
    Fem,
    /// Coarse Gummel, then fine Poisson from coarse concentrations and fine
    /// transport with the resulting fine potential.
    TwoGridSemi,
    /// Coarse Gummel, then fine transport with the coarse potential and a
    /// closing fine Poisson solve.
    TwoGridFull,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Fem => "fem",
            Method::TwoGridSemi => "tg-semi",
            Method::TwoGridFull => "tg-full",
        }
    }

    pub fn is_two_grid(&self) -> bool {
        !matches!(self, Method::Fem)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = PnpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fem" => Ok(Method::Fem),
            "tg-semi" => Ok(Method::TwoGridSemi),
            "tg-full" => Ok(Method::TwoGridFull),
            other => Err(PnpError::invalid(format!("unknown method `{other}`"))),
        }
    }
}

/// A nested coarse/fine mesh pair.
#[derive(Debug, Clone)]
pub struct TwoGrid {
    pub coarse: Discretization,
    pub fine: Discretization,
    /// Run the two fine transport solves of the fully decoupled scheme on
    /// separate threads.
    pub concurrent_species: bool,
    transfer: SparseMatrix,
}

impl TwoGrid {
    pub fn new(m_coarse: usize, m_fine: usize) -> Result<Self> {
        TwoGrid::with_diagonal(m_coarse, m_fine, Diagonal::Main)
    }

    pub fn with_diagonal(m_coarse: usize, m_fine: usize, diagonal: Diagonal) -> Result<Self> {
        if m_coarse == 0 || m_fine == 0 || !m_fine.is_multiple_of(m_coarse) {
            return Err(PnpError::invalid(format!(
                "fine mesh m={m_fine} is not a refinement of coarse mesh m={m_coarse}"
            )));
        }
        let coarse = Discretization::with_diagonal(m_coarse, diagonal)?;
        let fine = Discretization::with_diagonal(m_fine, diagonal)?;
        let transfer = prolongation_matrix(coarse.mesh(), fine.mesh())?;
        Ok(TwoGrid {
            coarse,
            fine,
            concurrent_species: true,
            transfer,
        })
    }

    /// Coarse-to-fine transfer of a coarse function.
    pub fn prolongate(&self, f: &FeFunction) -> Result<FeFunction> {
        if !f.same_mesh(self.coarse.mesh()) {
            return Err(PnpError::invalid(
                "function does not live on the coarse mesh",
            ));
        }
        FeFunction::new(self.fine.mesh().clone(), self.transfer.spmv(f.coeffs())?)
    }

    fn check_states(&self, coarse: &PnpState, fine: &PnpState) -> Result<()> {
        coarse.check_mesh(self.coarse.mesh())?;
        fine.check_mesh(self.fine.mesh())
    }

    /// Semi-decoupled step. Returns the new coarse and fine states.
    pub fn semi_step(
        &self,
        coarse: &PnpState,
        fine: &PnpState,
        problem: &ProblemSpec,
        tau: f64,
        tols: &Tolerances,
    ) -> Result<(PnpState, PnpState, StepStats)> {
        self.semi_step_from(coarse, fine, fine, problem, tau, tols)
    }

    /// [`TwoGrid::semi_step`] with `guess` as the starting point of the fine
    /// linear solves.
    pub fn semi_step_from(
        &self,
        coarse: &PnpState,
        fine: &PnpState,
        guess: &PnpState,
        problem: &ProblemSpec,
        tau: f64,
        tols: &Tolerances,
    ) -> Result<(PnpState, PnpState, StepStats)> {
        let start = Instant::now();
        self.check_states(coarse, fine)?;
        guess.check_mesh(self.fine.mesh())?;
        let (coarse_next, mut stats) = gummel_step(&self.coarse, coarse, problem, tau, tols)?;
        let t_next = fine.t + tau;

        let p1_h = self.prolongate(&coarse_next.p1)?;
        let p2_h = self.prolongate(&coarse_next.p2)?;
        let load3 = self.fine.load(&problem.f3, t_next);
        let phi = self.fine.poisson_with_load(
            &p1_h,
            &p2_h,
            problem.q1,
            problem.q2,
            &load3,
            Some(&guess.phi),
            tols,
        )?;
        let load1 = self.fine.load(&problem.f1, t_next);
        let load2 = self.fine.load(&problem.f2, t_next);
        let p1 = self.fine.np_with_load(
            &fine.p1,
            &phi,
            problem.q1,
            tau,
            &load1,
            Some(&guess.p1),
            tols,
        )?;
        let p2 = self.fine.np_with_load(
            &fine.p2,
            &phi,
            problem.q2,
            tau,
            &load2,
            Some(&guess.p2),
            tols,
        )?;

        stats.linear_solve_count += 3;
        stats.wall_seconds = start.elapsed().as_secs_f64();
        Ok((
            coarse_next,
            PnpState {
                t: t_next,
                p1,
                p2,
                phi,
            },
            stats,
        ))
    }

    /// Fine transport solve of one species driven by the prolongated coarse
    /// potential.
    #[allow(clippy::too_many_arguments)]
    fn full_species(
        &self,
        species: Species,
        fine: &PnpState,
        guess: &PnpState,
        phi_h: &FeFunction,
        problem: &ProblemSpec,
        tau: f64,
        tols: &Tolerances,
    ) -> Result<FeFunction> {
        let t_next = fine.t + tau;
        let load = self.fine.load(problem.source(species), t_next);
        let prev = fine.concentration(species);
        self.fine.np_with_load(
            prev,
            phi_h,
            problem.charge(species),
            tau,
            &load,
            Some(guess.concentration(species)),
            tols,
        )
    }

    /// Fully decoupled step. Returns the new coarse and fine states.
    pub fn full_step(
        &self,
        coarse: &PnpState,
        fine: &PnpState,
        problem: &ProblemSpec,
        tau: f64,
        tols: &Tolerances,
    ) -> Result<(PnpState, PnpState, StepStats)> {
        self.full_step_from(coarse, fine, fine, problem, tau, tols)
    }

    /// [`TwoGrid::full_step`] with `guess` as the starting point of the fine
    /// linear solves.
    pub fn full_step_from(
        &self,
        coarse: &PnpState,
        fine: &PnpState,
        guess: &PnpState,
        problem: &ProblemSpec,
        tau: f64,
        tols: &Tolerances,
    ) -> Result<(PnpState, PnpState, StepStats)> {
        let start = Instant::now();
        self.check_states(coarse, fine)?;
        guess.check_mesh(self.fine.mesh())?;
        let (coarse_next, mut stats) = gummel_step(&self.coarse, coarse, problem, tau, tols)?;
        let t_next = fine.t + tau;
        let phi_h = self.prolongate(&coarse_next.phi)?;

        let species = |s| self.full_species(s, fine, guess, &phi_h, problem, tau, tols);
        let (p1, p2) = if self.concurrent_species {
            std::thread::scope(|scope| {
                let second = scope.spawn(|| species(Species::Second));
                let first = species(Species::First);
                let second = second.join().expect("species solve panicked");
                (first, second)
            })
        } else {
            (species(Species::First), species(Species::Second))
        };
        let (p1, p2) = (p1?, p2?);

        let load3 = self.fine.load(&problem.f3, t_next);
        let phi = self.fine.poisson_with_load(
            &p1,
            &p2,
            problem.q1,
            problem.q2,
            &load3,
            Some(&guess.phi),
            tols,
        )?;
        stats.linear_solve_count += 3;
        stats.wall_seconds = start.elapsed().as_secs_f64();
        Ok((
            coarse_next,
            PnpState {
                t: t_next,
                p1,
                p2,
                phi,
            },
            stats,
        ))
    }
}

/// Final states of a time march.
#[derive(Debug, Clone)]
pub struct MarchResult {
    pub fine: PnpState,
    pub coarse: Option<PnpState>,
    pub stats: StepStats,
}

/// Marches from zero initial data at `t = 0` through `time.n_steps` steps.
///
/// `m_coarse` is ignored for [`Method::Fem`]. Mesh construction is excluded
/// from the reported wall time.
pub fn march(
    method: Method,
    problem: &ProblemSpec,
    m_fine: usize,
    m_coarse: Option<usize>,
    time: &TimeGrid,
    tols: &Tolerances,
) -> Result<MarchResult> {
    march_on(
        method,
        problem,
        m_fine,
        m_coarse,
        Diagonal::Main,
        time,
        tols,
    )
}

/// [`march`] on meshes cut by the given diagonal.
pub fn march_on(
    method: Method,
    problem: &ProblemSpec,
    m_fine: usize,
    m_coarse: Option<usize>,
    diagonal: Diagonal,
    time: &TimeGrid,
    tols: &Tolerances,
) -> Result<MarchResult> {
    let tau = time.tau;
    match method {
        Method::Fem => {
            let disc = Discretization::with_diagonal(m_fine, diagonal)?;
            let mut state = PnpState::zero(disc.mesh().clone(), 0.0);
            let mut total = StepStats::default();
            let start = Instant::now();
            for step in 0..time.n_steps {
                let (next, stats) = gummel_step(&disc, &state, problem, tau, tols)
                    .map_err(|e| step_error(step, e))?;
                state = next;
                total += stats;
            }
            total.wall_seconds = start.elapsed().as_secs_f64();
            Ok(MarchResult {
                fine: state,
                coarse: None,
                stats: total,
            })
        }
        Method::TwoGridSemi | Method::TwoGridFull => {
            let m_coarse =
                m_coarse.ok_or_else(|| PnpError::invalid("two-grid methods need a coarse mesh"))?;
            let grids = TwoGrid::with_diagonal(m_coarse, m_fine, diagonal)?;
            let mut coarse = PnpState::zero(grids.coarse.mesh().clone(), 0.0);
            let mut fine = PnpState::zero(grids.fine.mesh().clone(), 0.0);
            let mut older: Option<PnpState> = None;
            let mut total = StepStats::default();
            let start = Instant::now();
            for step in 0..time.n_steps {
                // the fine levels are linear solves, so a better starting
                // point only saves Krylov iterations
                let guess = match &older {
                    Some(o) => fine.extrapolated(o)?,
                    None => fine.clone(),
                };
                let stepped = if method == Method::TwoGridSemi {
                    grids.semi_step_from(&coarse, &fine, &guess, problem, tau, tols)
                } else {
                    grids.full_step_from(&coarse, &fine, &guess, problem, tau, tols)
                };
                let (c, f, stats) = stepped.map_err(|e| step_error(step, e))?;
                coarse = c;
                older = Some(std::mem::replace(&mut fine, f));
                total += stats;
            }
            total.wall_seconds = start.elapsed().as_secs_f64();
            Ok(MarchResult {
                fine,
                coarse: Some(coarse),
                stats: total,
            })
        }
    }
}

fn step_error(step: usize, source: PnpError) -> PnpError {
    PnpError::Step {
        step,
        source: Box::new(source),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::manufactured_benchmark;

    #[test]
    fn time_grid_rounding() {
        let g = TimeGrid::squared_mesh_size(0.5, 9).unwrap();
        // 40.5 rounds away from zero
        assert_eq!(g.n_steps, 41);
        assert!((g.tau * g.n_steps as f64 - 0.5).abs() < 1e-12);
        assert!(((g.tau - 1.0 / 81.0) / (1.0 / 81.0)).abs() < 0.013);
        let g = TimeGrid::squared_mesh_size(0.5, 16).unwrap();
        assert_eq!(g.n_steps, 128);
        assert_eq!(g.tau, 1.0 / 256.0);
        assert!(TimeGrid::new(0.5, 0).is_err());
        assert_eq!(TimeGrid::new(0.0, 0).unwrap().n_steps, 0);
        assert!(TimeGrid::with_step(0.5, 0.0).is_err());
    }

    #[test]
    fn parse_names() {
        for m in [Method::Fem, Method::TwoGridSemi, Method::TwoGridFull] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("newton".parse::<Method>().is_err());
        assert_eq!(
            "euclidean".parse::<GummelNorm>().unwrap(),
            GummelNorm::Euclidean
        );
        assert!("linf".parse::<GummelNorm>().is_err());
    }

    #[test]
    fn zero_data_gives_zero_fields() {
        let disc = Discretization::uniform(4).unwrap();
        let pb = ProblemSpec::zero(0.5);
        let state = PnpState::zero(disc.mesh().clone(), 0.0);
        let tols = Tolerances::default();
        let phi = disc
            .solve_poisson(&state.p1, &state.p2, &pb, 0.0, &tols)
            .unwrap();
        assert!(phi.coeffs().iter().all(|&v| v == 0.0));
        let p = disc
            .solve_np(&state.p1, &state.phi, 1.0, &pb.f1, 0.01, 0.01, &tols)
            .unwrap();
        assert!(p.coeffs().iter().all(|&v| v == 0.0));
        let (next, stats) = gummel_step(&disc, &state, &pb, 0.01, &tols).unwrap();
        assert_eq!(stats.gummel_iterations, 1);
        assert_eq!(stats.linear_solve_count, 3);
        assert_eq!(next.t, 0.01);
        assert!(next
            .p1
            .coeffs()
            .iter()
            .chain(next.phi.coeffs())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn benchmark_has_zero_potential_at_start() {
        let disc = Discretization::uniform(6).unwrap();
        let pb = manufactured_benchmark();
        let state = PnpState::zero(disc.mesh().clone(), 0.0);
        let phi = disc
            .solve_poisson(&state.p1, &state.p2, &pb, 0.0, &Tolerances::default())
            .unwrap();
        assert!(phi.coeffs().iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn mesh_mismatch_rejected() {
        let disc = Discretization::uniform(4).unwrap();
        let other = PnpState::zero(Arc::new(Mesh::uniform(3).unwrap()), 0.0);
        let pb = ProblemSpec::zero(0.5);
        assert!(gummel_step(&disc, &other, &pb, 0.1, &Tolerances::default()).is_err());
        assert!(TwoGrid::new(3, 8).is_err());
    }

    #[test]
    fn gummel_failure_carries_history() {
        let disc = Discretization::uniform(6).unwrap();
        let pb = manufactured_benchmark();
        let state = PnpState::zero(disc.mesh().clone(), 0.0);
        let tols = Tolerances {
            max_gummel: 2,
            gummel_tol: 1e-14,
            ..Tolerances::default()
        };
        match gummel_step(&disc, &state, &pb, 0.05, &tols) {
            Err(PnpError::Gummel { history }) => assert_eq!(history.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn march_zero_steps_returns_initial_state() {
        let pb = manufactured_benchmark();
        let grid = TimeGrid::new(0.0, 0).unwrap();
        let out = march(
            Method::TwoGridSemi,
            &pb,
            4,
            Some(2),
            &grid,
            &Tolerances::default(),
        )
        .unwrap();
        assert_eq!(out.fine.t, 0.0);
        assert!(out.fine.p1.coeffs().iter().all(|&v| v == 0.0));
        assert_eq!(out.stats.linear_solve_count, 0);
        assert!(march(
            Method::TwoGridFull,
            &pb,
            4,
            None,
            &grid,
            &Tolerances::default()
        )
        .is_err());
    }
}
