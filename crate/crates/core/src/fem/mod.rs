//! Ersatz-material plane-stress analysis on a structured bilinear-quad mesh.
//!
//! Nodes are numbered row-major from the lower-left corner: node `(i, j)` has
//! id `j * (nx + 1) + i`, dofs `2 * id` (x) and `2 * id + 1` (y). Elements are
//! numbered the same way, `e = j * nx + i`.

mod banded;
mod element;

pub use banded::{BandCholesky, BandMatrix};
pub use element::plane_stress_quad;

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{DesignDomain, DesignVector, SmoothHeaviside, PARAMS_PER_COMPONENT};

/// Step for the central differences of a component function with respect to
/// its own parameters.
pub const PHI_FD_STEP: f64 = 1e-6;

/// Iterative refinement steps allowed after the direct solve.
const MAX_REFINEMENTS: usize = 8;

/// Relative residual required of every linear solve.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    fn offset(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialModel {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// Ersatz penalization exponent applied to element densities in stiffness.
    pub penalty: i32,
}

impl Default for MaterialModel {
    fn default() -> Self {
        Self {
            youngs_modulus: 1.0,
            poisson_ratio: 0.3,
            penalty: 2,
        }
    }
}

impl MaterialModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0) {
            return Err(Error::InvalidArgument("Young's modulus must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return Err(Error::InvalidArgument("Poisson's ratio must lie in [0, 0.5)".into()));
        }
        if self.penalty < 2 {
            return Err(Error::InvalidArgument("penalty exponent must be an integer > 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLoad {
    pub node: usize,
    pub axis: Axis,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub node: usize,
    pub axis: Axis,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    active: Vec<bool>,
    supports: Vec<Support>,
    loads: Vec<PointLoad>,
    /// Body force density; only zero is supported.
    pub body_force: (f64, f64),
}

impl Mesh {
    /// Structured `nx x ny` grid over the domain's bounding box; an element is
    /// active when its center lies in the active region.
    pub fn structured(domain: &DesignDomain, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument(
                "mesh needs at least one element per axis".into(),
            ));
        }
        let hx = domain.width / nx as f64;
        let hy = domain.height / ny as f64;
        let mut active = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let cx = (i as f64 + 0.5) * hx;
                let cy = (j as f64 + 0.5) * hy;
                active.push(domain.is_active(cx, cy));
            }
        }
        Ok(Self {
            nx,
            ny,
            hx,
            hy,
            active,
            supports: Vec::new(),
            loads: Vec::new(),
            body_force: (0.0, 0.0),
        })
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn dof_count(&self) -> usize {
        2 * self.node_count()
    }

    pub fn element_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node_id(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        let i = node % (self.nx + 1);
        let j = node / (self.nx + 1);
        (i as f64 * self.hx, j as f64 * self.hy)
    }

    /// Grid node nearest to `(x, y)`.
    pub fn nearest_node(&self, x: f64, y: f64) -> usize {
        let i = (x / self.hx).round().clamp(0.0, self.nx as f64) as usize;
        let j = (y / self.hy).round().clamp(0.0, self.ny as f64) as usize;
        self.node_id(i, j)
    }

    /// Nodes of element `e`, counter-clockwise from lower-left.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let i = e % self.nx;
        let j = e / self.nx;
        let n0 = self.node_id(i, j);
        let n3 = self.node_id(i, j + 1);
        [n0, n0 + 1, n3 + 1, n3]
    }

    pub fn element_dofs(&self, e: usize) -> [usize; 8] {
        let n = self.element_nodes(e);
        [
            2 * n[0],
            2 * n[0] + 1,
            2 * n[1],
            2 * n[1] + 1,
            2 * n[2],
            2 * n[2] + 1,
            2 * n[3],
            2 * n[3] + 1,
        ]
    }

    pub fn element_center(&self, e: usize) -> (f64, f64) {
        let i = e % self.nx;
        let j = e / self.nx;
        ((i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy)
    }

    pub fn is_active(&self, e: usize) -> bool {
        self.active[e]
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    pub fn active_element_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    pub fn element_area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn active_area(&self) -> f64 {
        self.active_element_count() as f64 * self.element_area()
    }

    /// Nodes attached to at least one active element.
    pub fn active_nodes(&self) -> Vec<bool> {
        let mut used = vec![false; self.node_count()];
        for e in (0..self.element_count()).filter(|&e| self.active[e]) {
            for n in self.element_nodes(e) {
                used[n] = true;
            }
        }
        used
    }

    pub fn fix(&mut self, node: usize, axis: Axis, value: f64) {
        self.supports.retain(|s| !(s.node == node && s.axis == axis));
        self.supports.push(Support { node, axis, value });
    }

    pub fn add_load(&mut self, node: usize, axis: Axis, magnitude: f64) {
        self.loads.push(PointLoad { node, axis, magnitude });
    }

    pub fn supports(&self) -> &[Support] {
        &self.supports
    }

    pub fn loads(&self) -> &[PointLoad] {
        &self.loads
    }

    pub fn load_vector(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.dof_count()];
        for l in &self.loads {
            f[2 * l.node + l.axis.offset()] += l.magnitude;
        }
        f
    }

    pub fn validate(&self) -> Result<()> {
        if self.supports.is_empty() {
            return Err(Error::InvalidArgument("mesh has no Dirichlet supports".into()));
        }
        if self.body_force != (0.0, 0.0) {
            return Err(Error::InvalidArgument("non-zero body force is not supported".into()));
        }
        let n = self.node_count();
        if self.supports.iter().any(|s| s.node >= n) || self.loads.iter().any(|l| l.node >= n) {
            return Err(Error::InvalidArgument(
                "boundary condition references a missing node".into(),
            ));
        }
        Ok(())
    }

    /// Dof permutation that keeps the band narrow: nodes are ordered along the
    /// shorter grid direction first.
    fn solver_order(&self) -> (Vec<usize>, usize) {
        let (cols, rows) = (self.nx + 1, self.ny + 1);
        let mut perm = vec![0usize; self.dof_count()];
        for j in 0..rows {
            for i in 0..cols {
                let node = self.node_id(i, j);
                let p = if cols >= rows { i * rows + j } else { j * cols + i };
                perm[2 * node] = 2 * p;
                perm[2 * node + 1] = 2 * p + 1;
            }
        }
        let stride = cols.min(rows);
        (perm, 2 * (stride + 1) + 1)
    }

    /// Element densities as a CSV grid: `ny` rows of `nx` values, row 0 at the top.
    pub fn densities_csv(&self, densities: &[f64]) -> String {
        let mut out = String::new();
        for j in (0..self.ny).rev() {
            let row: Vec<String> = (0..self.nx)
                .map(|i| format!("{}", densities[j * self.nx + i]))
                .collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Nodal description-function values and the resulting element densities.
#[derive(Debug, Clone)]
pub struct DensityField {
    /// Structure function at every node (NaN for nodes off the active region).
    pub nodal_phi: Vec<f64>,
    /// Index of the component attaining the max at every node.
    pub nodal_argmax: Vec<usize>,
    /// Element densities; zero for inactive elements.
    pub densities: Vec<f64>,
}

/// Average of the smoothed step over each active element's four nodes.
pub fn element_density(d: &DesignVector, mesh: &Mesh, h: &SmoothHeaviside) -> Result<DensityField> {
    if d.is_empty() {
        return Err(Error::EmptyDesign);
    }
    let used = mesh.active_nodes();
    let mut nodal_phi = vec![f64::NAN; mesh.node_count()];
    let mut nodal_argmax = vec![0; mesh.node_count()];
    for node in 0..mesh.node_count() {
        if used[node] {
            let (v, i) = d.level_argmax(mesh.node_coords(node))?;
            nodal_phi[node] = v;
            nodal_argmax[node] = i;
        }
    }
    let densities = densities_from_nodal(mesh, &nodal_phi, h);
    Ok(DensityField {
        nodal_phi,
        nodal_argmax,
        densities,
    })
}

pub(crate) fn densities_from_nodal(mesh: &Mesh, nodal_phi: &[f64], h: &SmoothHeaviside) -> Vec<f64> {
    (0..mesh.element_count())
        .map(|e| {
            if mesh.is_active(e) {
                mesh.element_nodes(e)
                    .iter()
                    .map(|&n| h.value(nodal_phi[n]))
                    .sum::<f64>()
                    / 4.0
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct StateSolution {
    pub displacements: Vec<f64>,
    pub densities: Vec<f64>,
    pub compliance: f64,
    pub volume_fraction: f64,
    /// Unpenalized element energies `u_e^T k0 u_e` (zero for inactive elements).
    pub element_energy: Vec<f64>,
}

/// Assemble the penalized stiffness, eliminate supports and solve `K u = F`.
pub fn assemble_and_solve(densities: &[f64], mesh: &Mesh, mat: &MaterialModel) -> Result<StateSolution> {
    mesh.validate()?;
    mat.validate()?;
    if densities.len() != mesh.element_count() {
        return Err(Error::LengthMismatch(densities.len(), mesh.element_count()));
    }
    let k0 = plane_stress_quad(mat.youngs_modulus, mat.poisson_ratio, mesh.hx, mesh.hy);
    let (perm, bw) = mesh.solver_order();
    let n = mesh.dof_count();
    let mut k = BandMatrix::zeros(n, bw);
    for e in (0..mesh.element_count()).filter(|&e| mesh.is_active(e)) {
        let scale = densities[e].powi(mat.penalty);
        let dofs = mesh.element_dofs(e);
        for a in 0..8 {
            for b in 0..=a {
                let (pa, pb) = (perm[dofs[a]], perm[dofs[b]]);
                k.add(pa, pb, scale * k0[a][b]);
            }
        }
    }

    let f_full = mesh.load_vector();
    let mut rhs = vec![0.0; n];
    for dof in 0..n {
        rhs[perm[dof]] = f_full[dof];
    }

    // prescribed dofs: move K_fd * u_bar to the right-hand side, then decouple
    let mut prescribed = vec![None; n];
    for s in mesh.supports() {
        prescribed[perm[2 * s.node + s.axis.offset()]] = Some(s.value);
    }
    let used = mesh.active_nodes();
    for node in (0..mesh.node_count()).filter(|&nd| !used[nd]) {
        prescribed[perm[2 * node]] = Some(0.0);
        prescribed[perm[2 * node + 1]] = Some(0.0);
    }
    let ubar: Vec<f64> = prescribed.iter().map(|p| p.unwrap_or(0.0)).collect();
    if ubar.iter().any(|v| *v != 0.0) {
        let kb = k.mul_vec(&ubar);
        for i in 0..n {
            rhs[i] -= kb[i];
        }
    }
    for (i, p) in prescribed.iter().enumerate() {
        if let Some(v) = p {
            k.set_identity_row(i, 1.0);
            rhs[i] = *v;
        }
    }

    let chol = k.cholesky()?;
    let mut x = chol.solve(&rhs);
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual = |x: &[f64]| -> Vec<f64> { k.mul_vec(x).iter().zip(&rhs).map(|(a, b)| b - a).collect() };
    let mut r = residual(&x);
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    for _ in 0..MAX_REFINEMENTS {
        if norm(&r) <= RESIDUAL_TOL * rhs_norm {
            break;
        }
        let dx = chol.solve(&r);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        r = residual(&x);
    }
    if !(norm(&r) <= RESIDUAL_TOL * rhs_norm) {
        return Err(Error::Solver(format!(
            "residual {:e} exceeds {:e} of the load norm",
            norm(&r),
            RESIDUAL_TOL
        )));
    }

    let mut u = vec![0.0; n];
    for dof in 0..n {
        u[dof] = x[perm[dof]];
    }
    let compliance = f_full.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
    let element_energy = (0..mesh.element_count())
        .map(|e| {
            if !mesh.is_active(e) {
                return 0.0;
            }
            let dofs = mesh.element_dofs(e);
            let ue: Vec<f64> = dofs.iter().map(|&d| u[d]).collect();
            (0..8)
                .map(|a| ue[a] * (0..8).map(|b| k0[a][b] * ue[b]).sum::<f64>())
                .sum()
        })
        .collect();
    let (_, volume_fraction) = volume(densities, mesh);
    Ok(StateSolution {
        displacements: u,
        densities: densities.to_vec(),
        compliance,
        volume_fraction,
        element_energy,
    })
}

fn volume(densities: &[f64], mesh: &Mesh) -> (f64, f64) {
    let area = mesh.element_area();
    let solid: f64 = (0..mesh.element_count())
        .filter(|&e| mesh.is_active(e))
        .map(|e| densities[e] * area)
        .sum();
    (solid, solid / mesh.active_area())
}

/// `C = F . u` and the active-area volume fraction of the solved state.
pub fn compliance_and_volume(sol: &StateSolution, mesh: &Mesh) -> (f64, f64) {
    let f = mesh.load_vector();
    let c = f.iter().zip(&sol.displacements).map(|(a, b)| a * b).sum();
    (c, volume(&sol.densities, mesh).1)
}

/// Energy `u^T K u` of the penalized stiffness, for self-adjointness checks.
pub fn strain_energy(sol: &StateSolution, mesh: &Mesh, mat: &MaterialModel) -> f64 {
    (0..mesh.element_count())
        .filter(|&e| mesh.is_active(e))
        .map(|e| sol.densities[e].powi(mat.penalty) * sol.element_energy[e])
        .sum()
}

#[derive(Debug, Clone)]
pub struct Sensitivities {
    pub compliance: Vec<f64>,
    pub volume: Vec<f64>,
}

/// Design sensitivities of compliance and volume fraction.
///
/// At each node only the arg-max component's level contributes; its
/// derivative with respect to that component's parameters is a central
/// difference with step [`PHI_FD_STEP`]. The Heaviside derivative, element
/// averaging and the adjoint product are exact.
pub fn sensitivities(
    d: &DesignVector,
    field: &DensityField,
    sol: &StateSolution,
    mesh: &Mesh,
    mat: &MaterialModel,
    h: &SmoothHeaviside,
) -> Sensitivities {
    let nvar = d.len() * PARAMS_PER_COMPONENT;
    let mut dc = vec![0.0; nvar];
    let mut dv = vec![0.0; nvar];

    // per-node H'(phi) and d(phi)/d(params of the arg-max component)
    let mut nodal: Vec<Option<(f64, [f64; PARAMS_PER_COMPONENT])>> = vec![None; mesh.node_count()];
    for (node, slot) in nodal.iter_mut().enumerate() {
        let phi = field.nodal_phi[node];
        if phi.is_nan() {
            continue;
        }
        let hp = h.derivative(phi);
        if hp == 0.0 {
            continue;
        }
        let c = &d.components[field.nodal_argmax[node]];
        let pt = mesh.node_coords(node);
        let grad = std::array::from_fn(|k| c.level_param_derivative(pt, d.exponent, k, PHI_FD_STEP));
        *slot = Some((hp, grad));
    }

    let q = mat.penalty;
    let vol_scale = mesh.element_area() / mesh.active_area() / 4.0;
    for e in (0..mesh.element_count()).filter(|&e| mesh.is_active(e)) {
        let rho = sol.densities[e];
        let c_scale = -(q as f64) * rho.powi(q - 1) * sol.element_energy[e] / 4.0;
        for node in mesh.element_nodes(e) {
            if let Some((hp, grad)) = &nodal[node] {
                let base = field.nodal_argmax[node] * PARAMS_PER_COMPONENT;
                for k in 0..PARAMS_PER_COMPONENT {
                    dc[base + k] += c_scale * hp * grad[k];
                    dv[base + k] += vol_scale * hp * grad[k];
                }
            }
        }
    }
    Sensitivities {
        compliance: dc,
        volume: dv,
    }
}
