//! Piecewise-linear finite elements: basis gradients, quadrature, operator
//! assembly, homogeneous Dirichlet elimination and coarse-to-fine transfer.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{PnpError, Result};
use crate::mesh::Mesh;
use crate::sparse::SparseMatrix;

/// Triangle quadrature in barycentric coordinates. Weights sum to one and are
/// scaled by the triangle area on use.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: u32,
}

impl QuadratureRule {
    /// Three edge midpoints, weights 1/3; exact for quadratics.
    pub fn edge_midpoint() -> Self {
        QuadratureRule {
            points: vec![[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]],
            weights: vec![1.0 / 3.0; 3],
            degree: 2,
        }
    }

    /// Six-point symmetric rule (Dunavant), exact for quartics.
    pub fn degree4() -> Self {
        const A: f64 = 0.445_948_490_915_965;
        const B: f64 = 0.091_576_213_509_771;
        const WA: f64 = 0.223_381_589_678_011;
        const WB: f64 = 0.109_951_743_655_322;
        let a0 = 1.0 - 2.0 * A;
        let b0 = 1.0 - 2.0 * B;
        QuadratureRule {
            points: vec![
                [a0, A, A],
                [A, a0, A],
                [A, A, a0],
                [b0, B, B],
                [B, b0, B],
                [B, B, b0],
            ],
            weights: vec![WA, WA, WA, WB, WB, WB],
            degree: 4,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Physical coordinates of the rule's points on a triangle.
    pub fn physical_points(&self, verts: &[[f64; 2]; 3]) -> impl Iterator<Item = [f64; 2]> + '_ {
        let verts = *verts;
        self.points.iter().map(move |l| {
            [
                l[0] * verts[0][0] + l[1] * verts[1][0] + l[2] * verts[2][0],
                l[0] * verts[0][1] + l[1] * verts[1][1] + l[2] * verts[2][1],
            ]
        })
    }
}

/// Area and the three (constant) gradients of the barycentric basis.
pub fn basis_gradients(verts: &[[f64; 2]; 3]) -> (f64, [[f64; 2]; 3]) {
    let [a, b, c] = *verts;
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let grads = [
        [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
        [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
        [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
    ];
    (0.5 * det, grads)
}

/// A P1 function: one coefficient per mesh node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeFunction {
    mesh: Arc<Mesh>,
    coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn new(mesh: Arc<Mesh>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != mesh.num_nodes() {
            return Err(PnpError::invalid(format!(
                "{} coefficients for {} nodes",
                coeffs.len(),
                mesh.num_nodes()
            )));
        }
        Ok(FeFunction { mesh, coeffs })
    }

    pub fn zero(mesh: Arc<Mesh>) -> Self {
        let n = mesh.num_nodes();
        FeFunction {
            mesh,
            coeffs: vec![0.0; n],
        }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: Arc<Mesh>, f: impl Fn(f64, f64) -> f64) -> Self {
        let coeffs = mesh.nodes().iter().map(|&[x, y]| f(x, y)).collect();
        FeFunction { mesh, coeffs }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Uniform meshes are determined by their subdivision count and diagonal.
    pub fn same_mesh(&self, other: &Mesh) -> bool {
        self.mesh.m() == other.m() && self.mesh.diagonal() == other.diagonal()
    }

    /// True when every boundary coefficient is exactly zero.
    pub fn vanishes_on_boundary(&self) -> bool {
        (0..self.coeffs.len())
            .filter(|&k| self.mesh.is_boundary(k))
            .all(|k| self.coeffs[k] == 0.0)
    }

    pub fn evaluate(&self, p: [f64; 2]) -> Result<f64> {
        let t = self.mesh.locate(p)?;
        Ok(self.evaluate_in(t, self.mesh.barycentric(t, p)))
    }

    pub fn evaluate_gradient(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let t = self.mesh.locate(p)?;
        Ok(self.gradient_on(t))
    }

    pub(crate) fn evaluate_in(&self, t: usize, lambda: [f64; 3]) -> f64 {
        let tri = self.mesh.triangle(t);
        (0..3).map(|a| lambda[a] * self.coeffs[tri[a]]).sum()
    }

    /// Constant gradient of the function on triangle `t`.
    pub fn gradient_on(&self, t: usize) -> [f64; 2] {
        let tri = self.mesh.triangle(t);
        let (_, grads) = basis_gradients(&self.mesh.vertices(t));
        let mut g = [0.0; 2];
        for a in 0..3 {
            g[0] += self.coeffs[tri[a]] * grads[a][0];
            g[1] += self.coeffs[tri[a]] * grads[a][1];
        }
        g
    }
}

/// Sparsity pattern of the P1 operators on a mesh together with, for every
/// triangle, the storage slot of each local `(row, col)` pair.
#[derive(Debug, Clone)]
pub struct ElementPattern {
    template: SparseMatrix,
    slots: Vec<[usize; 9]>,
}

impl ElementPattern {
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.num_nodes();
        let triplets = mesh
            .triangles()
            .iter()
            .flat_map(|tri| (0..9).map(move |ab| (tri[ab / 3], tri[ab % 3], 0.0)));
        let template = SparseMatrix::from_triplets(n, n, triplets).expect("mesh indices in range");
        let slots = mesh
            .triangles()
            .iter()
            .map(|tri| {
                let mut s = [0usize; 9];
                for (ab, slot) in s.iter_mut().enumerate() {
                    let (i, j) = (tri[ab / 3], tri[ab % 3]);
                    let span = template.row_span(i);
                    let pos = template.col_indices()[span.clone()]
                        .binary_search(&j)
                        .expect("pattern contains every element pair");
                    *slot = span.start + pos;
                }
                s
            })
            .collect();
        ElementPattern { template, slots }
    }

    /// Sums per-triangle 3x3 blocks (row = test, col = trial) into a matrix.
    pub fn assemble(&self, mut local: impl FnMut(usize) -> [[f64; 3]; 3]) -> SparseMatrix {
        let mut out = self.template.clone();
        let values = out.values_mut();
        for (t, slots) in self.slots.iter().enumerate() {
            let block = local(t);
            for ab in 0..9 {
                values[slots[ab]] += block[ab / 3][ab % 3];
            }
        }
        out
    }
}

fn stiffness_block(mesh: &Mesh, t: usize) -> [[f64; 3]; 3] {
    let (area, g) = basis_gradients(&mesh.vertices(t));
    let mut k = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            k[a][b] = area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
        }
    }
    k
}

fn mass_block(mesh: &Mesh, t: usize) -> [[f64; 3]; 3] {
    let s = mesh.signed_area(t) / 12.0;
    let mut k = [[s; 3]; 3];
    for (a, row) in k.iter_mut().enumerate() {
        row[a] = 2.0 * s;
    }
    k
}

fn drift_block(
    mesh: &Mesh,
    t: usize,
    phi: &FeFunction,
    q: f64,
    rule: &QuadratureRule,
) -> [[f64; 3]; 3] {
    let (area, g) = basis_gradients(&mesh.vertices(t));
    let grad_phi = phi.gradient_on(t);
    let mut k = [[0.0; 3]; 3];
    for (lambda, w) in rule.points.iter().zip(&rule.weights) {
        for j in 0..3 {
            let conv = grad_phi[0] * g[j][0] + grad_phi[1] * g[j][1];
            for kk in 0..3 {
                k[j][kk] += q * area * w * lambda[kk] * conv;
            }
        }
    }
    k
}

/// `S_jk = ∫ ∇ψ_k · ∇ψ_j`.
pub fn assemble_stiffness(mesh: &Mesh) -> SparseMatrix {
    ElementPattern::new(mesh).assemble(|t| stiffness_block(mesh, t))
}

/// `M_jk = ∫ ψ_k ψ_j`.
pub fn assemble_mass(mesh: &Mesh) -> SparseMatrix {
    ElementPattern::new(mesh).assemble(|t| mass_block(mesh, t))
}

/// `D_jk = q ∫ ψ_k (∇φ · ∇ψ_j)`.
pub fn assemble_drift(mesh: &Mesh, phi: &FeFunction, q: f64) -> Result<SparseMatrix> {
    assemble_drift_with(&ElementPattern::new(mesh), mesh, phi, q)
}

pub fn assemble_drift_with(
    pattern: &ElementPattern,
    mesh: &Mesh,
    phi: &FeFunction,
    q: f64,
) -> Result<SparseMatrix> {
    if !phi.same_mesh(mesh) {
        return Err(PnpError::invalid("potential lives on a different mesh"));
    }
    let rule = QuadratureRule::edge_midpoint();
    Ok(pattern.assemble(|t| drift_block(mesh, t, phi, q, &rule)))
}

/// `b_j ≈ ∫ f(·, t) ψ_j` with the edge-midpoint rule.
pub fn assemble_load(mesh: &Mesh, f: impl Fn(f64, f64, f64) -> f64, t: f64) -> Vec<f64> {
    let rule = QuadratureRule::edge_midpoint();
    let mut b = vec![0.0; mesh.num_nodes()];
    for (tri_idx, tri) in mesh.triangles().iter().enumerate() {
        let verts = mesh.vertices(tri_idx);
        let area = mesh.signed_area(tri_idx);
        for ((lambda, w), [x, y]) in rule
            .points
            .iter()
            .zip(&rule.weights)
            .zip(rule.physical_points(&verts))
        {
            let fw = area * w * f(x, y, t);
            for a in 0..3 {
                b[tri[a]] += fw * lambda[a];
            }
        }
    }
    b
}

/// Edge-midpoint load assembly that visits every edge once.
///
/// Equivalent to [`assemble_load`] (each midpoint carries the weight
/// `|T|/6` towards both edge endpoints for every adjacent triangle), but each
/// interior midpoint is evaluated once instead of twice.
#[derive(Debug, Clone)]
pub struct EdgeLoad {
    edges: Vec<([usize; 2], [f64; 2], f64)>,
    num_nodes: usize,
}

impl EdgeLoad {
    pub fn new(mesh: &Mesh) -> Self {
        let mut weight: HashMap<(usize, usize), f64> = HashMap::new();
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let w = mesh.signed_area(t) / 6.0;
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                *weight.entry((a.min(b), a.max(b))).or_default() += w;
            }
        }
        let mut edges: Vec<_> = weight
            .into_iter()
            .map(|((a, b), w)| {
                let (pa, pb) = (mesh.node(a), mesh.node(b));
                ([a, b], [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])], w)
            })
            .collect();
        edges.sort_by_key(|e| e.0);
        EdgeLoad {
            edges,
            num_nodes: mesh.num_nodes(),
        }
    }

    pub fn assemble(&self, f: impl Fn(f64, f64, f64) -> f64, t: f64) -> Vec<f64> {
        let mut b = vec![0.0; self.num_nodes];
        for &([a, c], [x, y], w) in &self.edges {
            let v = w * f(x, y, t);
            b[a] += v;
            b[c] += v;
        }
        b
    }
}

/// Replaces boundary rows by identity rows, zeroes boundary columns and the
/// matching right-hand side entries. Valid for homogeneous Dirichlet data.
pub fn apply_dirichlet(
    a: &SparseMatrix,
    b: &[f64],
    bnodes: &[usize],
) -> Result<(SparseMatrix, Vec<f64>)> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(PnpError::invalid(
            "Dirichlet elimination needs a square system",
        ));
    }
    let mut mask = vec![false; n];
    for &k in bnodes {
        if k >= n {
            return Err(PnpError::invalid(format!("boundary node {k} out of range")));
        }
        mask[k] = true;
    }
    let mut a = a.clone();
    let mut b = b.to_vec();
    dirichlet_in_place(&mut a, &mut b, &mask);
    Ok((a, b))
}

/// In-place elimination; keeps the sparsity pattern (zeroed entries stay stored).
pub(crate) fn dirichlet_in_place(a: &mut SparseMatrix, b: &mut [f64], mask: &[bool]) {
    dirichlet_matrix_in_place(a, mask);
    dirichlet_rhs_in_place(b, mask);
}

pub(crate) fn dirichlet_matrix_in_place(a: &mut SparseMatrix, mask: &[bool]) {
    a.for_each_entry_mut(|i, j, v| {
        if mask[i] {
            *v = if i == j { 1.0 } else { 0.0 };
        } else if mask[j] {
            *v = 0.0;
        }
    });
}

pub(crate) fn dirichlet_rhs_in_place(b: &mut [f64], mask: &[bool]) {
    for (bi, &on) in b.iter_mut().zip(mask) {
        if on {
            *bi = 0.0;
        }
    }
}

/// Transfers a coarse function onto a nested fine mesh by nodal evaluation.
pub fn prolongate(coarse: &FeFunction, fine: &Arc<Mesh>) -> Result<FeFunction> {
    let (mc, mf) = (coarse.mesh().m(), fine.m());
    if mf % mc != 0 || coarse.mesh().diagonal() != fine.diagonal() {
        return Err(PnpError::invalid(format!(
            "fine mesh m={mf} is not a refinement of coarse mesh m={mc}"
        )));
    }
    if mc == mf {
        return FeFunction::new(fine.clone(), coarse.coeffs().to_vec());
    }
    let coeffs = fine
        .nodes()
        .iter()
        .map(|&p| coarse.evaluate(p))
        .collect::<Result<Vec<_>>>()?;
    FeFunction::new(fine.clone(), coeffs)
}

/// Sparse nodal-interpolation operator taking coarse coefficients to fine
/// ones; applying it matches [`prolongate`].
pub fn prolongation_matrix(coarse: &Mesh, fine: &Mesh) -> Result<SparseMatrix> {
    let (mc, mf) = (coarse.m(), fine.m());
    if mf % mc != 0 || coarse.diagonal() != fine.diagonal() {
        return Err(PnpError::invalid(format!(
            "fine mesh m={mf} is not a refinement of coarse mesh m={mc}"
        )));
    }
    let mut triplets = Vec::with_capacity(3 * fine.num_nodes());
    for (k, &p) in fine.nodes().iter().enumerate() {
        let t = coarse.locate(p)?;
        let tri = coarse.triangle(t);
        for (a, l) in coarse.barycentric(t, p).into_iter().enumerate() {
            if l.abs() > 1e-14 {
                triplets.push((k, tri[a], l));
            }
        }
    }
    SparseMatrix::from_triplets(fine.num_nodes(), coarse.num_nodes(), triplets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mesh(m: usize) -> Arc<Mesh> {
        Arc::new(Mesh::uniform(m).unwrap())
    }

    #[test]
    fn edge_load_matches_element_load() {
        for d in [crate::mesh::Diagonal::Main, crate::mesh::Diagonal::Anti] {
            let mesh = Mesh::with_diagonal(7, d).unwrap();
            let f = |x: f64, y: f64, t: f64| (x * 3.0 + t).sin() * (y - 0.2).exp();
            let a = assemble_load(&mesh, f, 0.3);
            let b = EdgeLoad::new(&mesh).assemble(f, 0.3);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn prolongation_matrix_matches_evaluation() {
        let (c, f) = (mesh(3), mesh(9));
        let coarse = FeFunction::interpolate(c.clone(), |x, y| x * x - y + x * y);
        let p = prolongation_matrix(&c, &f).unwrap();
        let by_matrix = p.spmv(coarse.coeffs()).unwrap();
        let by_eval = prolongate(&coarse, &f).unwrap();
        for (x, y) in by_matrix.iter().zip(by_eval.coeffs()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(prolongation_matrix(&f, &c).is_err());
    }

    #[test]
    fn rules_sum_to_one() {
        for rule in [QuadratureRule::edge_midpoint(), QuadratureRule::degree4()] {
            let s: f64 = rule.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for p in &rule.points {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn degree4_rule_integrates_quartic_monomials() {
        // ∫_ref x^a y^b = a! b! / (a+b+2)!
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        let rule = QuadratureRule::degree4();
        let verts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for a in 0..=4u32 {
            for b in 0..=(4 - a) {
                let approx: f64 = rule
                    .physical_points(&verts)
                    .zip(&rule.weights)
                    .map(|([x, y], w)| 0.5 * w * x.powi(a as i32) * y.powi(b as i32))
                    .sum();
                let exact = fact(a) * fact(b) / fact(a + b + 2);
                assert!((approx - exact).abs() < 1e-13, "x^{a} y^{b}");
            }
        }
    }

    #[test]
    fn stiffness_interior_stencil() {
        let msh = mesh(4);
        let s = assemble_stiffness(&msh);
        let k = 2 + 2 * 5;
        assert!((s.get(k, k) - 4.0).abs() < 1e-13);
        for nb in [k - 1, k + 1, k - 5, k + 5] {
            assert!((s.get(k, nb) + 1.0).abs() < 1e-13);
        }
        for diag in [k + 6, k - 6, k + 4, k - 4] {
            assert!(s.get(k, diag).abs() < 1e-13);
        }
        for i in 0..s.nrows() {
            assert!(s.row(i).map(|(_, v)| v).sum::<f64>().abs() < 1e-13);
        }
        assert!(s.is_symmetric(1e-14));
    }

    #[test]
    fn stiffness_single_cell_matches_hand_blocks() {
        // lower (0,1,3) and upper (0,3,2), both congruent to ½[[2,-1,-1],[-1,1,0],[-1,0,1]]
        // with the right-angle vertex at node 1 resp. node 2
        let s = assemble_stiffness(&mesh(1)).to_dense();
        let expect = [
            [1.0, -0.5, -0.5, 0.0],
            [-0.5, 1.0, 0.0, -0.5],
            [-0.5, 0.0, 1.0, -0.5],
            [0.0, -0.5, -0.5, 1.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((s[i][j] - expect[i][j]).abs() < 1e-14, "({i},{j})");
            }
        }
    }

    #[test]
    fn mass_properties() {
        let msh = mesh(4);
        let m = assemble_mass(&msh);
        let total: f64 = m.values().iter().sum();
        assert!((total - 1.0).abs() < 1e-13);
        let k = 1 + 5;
        assert!((m.get(k, k) - 0.25f64.powi(2) / 2.0).abs() < 1e-15);
        assert!(m.is_symmetric(1e-14));
    }

    #[test]
    fn drift_vanishes_for_constant_potential() {
        let msh = mesh(3);
        let phi = FeFunction::new(msh.clone(), vec![2.5; msh.num_nodes()]).unwrap();
        let d = assemble_drift(&msh, &phi, 1.0).unwrap();
        assert!(d.values().iter().all(|v| v.abs() < 1e-14));
        let other = FeFunction::zero(mesh(2));
        assert!(assemble_drift(&msh, &other, 1.0).is_err());
    }

    #[test]
    fn load_of_unit_source() {
        let msh = mesh(4);
        let b = assemble_load(&msh, |_, _, _| 1.0, 0.0);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        assert!((b[6] - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn dirichlet_idempotent_and_symmetric() {
        let msh = mesh(3);
        let s = assemble_stiffness(&msh);
        let b = assemble_load(&msh, |x, y, _| x + y, 0.0);
        let bn = msh.boundary_nodes();
        let (a1, b1) = apply_dirichlet(&s, &b, &bn).unwrap();
        let (a2, b2) = apply_dirichlet(&a1, &b1, &bn).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert!(a1.is_symmetric(0.0));
        for &k in &bn {
            assert_eq!(b1[k], 0.0);
            assert_eq!(
                a1.row(k).filter(|&(_, v)| v != 0.0).collect::<Vec<_>>(),
                vec![(k, 1.0)]
            );
        }
        assert!(apply_dirichlet(&s, &b, &[999]).is_err());
    }

    #[test]
    fn evaluate_reproduces_linears() {
        let msh = mesh(3);
        let f = FeFunction::interpolate(msh.clone(), |x, _| x);
        for &p in &[[0.1, 0.7], [0.5, 0.5], [0.99, 0.01], [1.0, 1.0]] {
            assert!((f.evaluate(p).unwrap() - p[0]).abs() < 1e-14);
            let g = f.evaluate_gradient(p).unwrap();
            assert!((g[0] - 1.0).abs() < 1e-13 && g[1].abs() < 1e-13);
        }
        let g = FeFunction::interpolate(msh.clone(), |x, y| (7.0 * x).sin() + y * y);
        for k in 0..msh.num_nodes() {
            assert!((g.evaluate(msh.node(k)).unwrap() - g.coeffs()[k]).abs() < 1e-14);
        }
        // midpoint of edge 5-6
        let mid = [(msh.node(5)[0] + msh.node(6)[0]) / 2.0, msh.node(5)[1]];
        let expect = 0.5 * (g.coeffs()[5] + g.coeffs()[6]);
        assert!((g.evaluate(mid).unwrap() - expect).abs() < 1e-14);
        assert!(g.evaluate([1.5, 0.0]).is_err());
    }

    #[test]
    fn prolongation_basics() {
        let coarse = mesh(3);
        let fine = mesh(9);
        let c = FeFunction::new(coarse.clone(), vec![1.25; coarse.num_nodes()]).unwrap();
        let f = prolongate(&c, &fine).unwrap();
        assert!(f.coeffs().iter().all(|&v| (v - 1.25).abs() < 1e-15));
        let lin = FeFunction::interpolate(coarse.clone(), |x, _| x);
        let f = prolongate(&lin, &fine).unwrap();
        let expect = FeFunction::interpolate(fine.clone(), |x, _| x);
        for (a, b) in f.coeffs().iter().zip(expect.coeffs()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(prolongate(&lin, &mesh(10)).is_err());
    }
}
