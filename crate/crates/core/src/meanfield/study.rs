//! Study drivers: self-energy decay with N, finite-N versus continuum
//! convergence, and the mesh-refinement consistency check.

use crate::error::Result;
use crate::geometry::{CoarseGrid, Domain};
use crate::meanfield::continuum::{
    laplacian_residual, solve_continuum, ContinuumOptions, MeanField,
};
use crate::meanfield::{
    beta_from_scaled, mean_field_lambda, occupation_fixed_point, scaling_limits, self_energy_bound,
    FixedPointOptions, OccupationSolution,
};
use crate::numeric::KahanSum;
use crate::scalar::Real;
use serde::Serialize;

/// One row of the self-energy decay table.
#[derive(Debug, Clone, Serialize)]
pub struct DecayRow<S> {
    pub n: u64,
    pub m: usize,
    /// max_i |E1_i| over the boxes.
    pub max_abs_e1: S,
    /// max_i of the per-box analytic bound.
    pub bound: S,
    /// Whether |E1_i| <= bound_i held box by box.
    pub per_box_ok: bool,
    pub residual: S,
    pub iterations: usize,
}

/// Solves the occupation fixed point for each N at scaled inverse
/// temperature `beta_scaled` with lambda = 1/N and M = m_rule(N) boxes, and
/// reports the self-energy field against its analytic bound.
pub fn self_energy_decay_study<S: Real>(
    domain: &Domain<S>,
    n_list: &[u64],
    beta_scaled: S,
    m_rule: impl Fn(u64) -> usize,
    opts: &FixedPointOptions<S>,
) -> Result<Vec<DecayRow<S>>> {
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let m = m_rule(n);
        let grid = CoarseGrid::with_box_count(*domain, m)?;
        let lambda = mean_field_lambda::<S>(n);
        let beta = beta_from_scaled(beta_scaled, n, lambda);
        let sol = occupation_fixed_point(&grid, n, beta, lambda, opts)?;
        let fields = scaling_limits(&sol, &grid);
        let area = domain.area();
        let mut max_abs_e1 = S::zero();
        let mut bound = S::zero();
        let mut per_box_ok = true;
        for (&e1, &occ) in fields.e1.iter().zip(&sol.occupations) {
            let b = self_energy_bound(occ, n, area);
            per_box_ok &= e1.abs() <= b;
            max_abs_e1 = max_abs_e1.max(e1.abs());
            bound = bound.max(b);
        }
        rows.push(DecayRow {
            n,
            m,
            max_abs_e1,
            bound,
            per_box_ok,
            residual: sol.residual,
            iterations: sol.iterations,
        });
    }
    Ok(rows)
}

/// One row of the finite-N versus continuum comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow<S> {
    pub n: u64,
    pub m: usize,
    /// L1 distance between the normalized occupation density and the
    /// box-averaged continuum density.
    pub l1_distance: S,
}

/// Box-average of a mesh field over a coarse grid; the mesh resolution must
/// be divisible by both box counts.
fn box_average<S: Real>(mf: &MeanField<S>, grid: &CoarseGrid<S>) -> Result<Vec<S>> {
    let p = mf.mesh.resolution;
    let mx = grid.boxes_x();
    let my = grid.boxes_y();
    if !p.is_multiple_of(mx) || !p.is_multiple_of(my) {
        return Err(crate::error::Error::InvalidParameter(format!(
            "mesh resolution {p} not divisible by box counts {mx} x {my}"
        )));
    }
    let sx = p / mx;
    let sy = p / my;
    let mut out = vec![S::zero(); grid.box_count()];
    for (b, slot) in out.iter_mut().enumerate() {
        let bx = b % mx;
        let by = b / mx;
        let mut acc = KahanSum::new();
        for iy in by * sy..(by + 1) * sy {
            for ix in bx * sx..(bx + 1) * sx {
                acc.add(mf.xi.values[iy * p + ix]);
            }
        }
        *slot = acc.value() / S::of_usize(sx * sy);
    }
    Ok(out)
}

/// Compares the finite-N occupation density against the continuum limit
/// density at the same scaled inverse temperature, for each N with
/// M = m_rule(N). Returns rows in the order of `n_list`.
pub fn finite_vs_continuum<S: Real>(
    domain: &Domain<S>,
    n_list: &[u64],
    beta_scaled: S,
    m_rule: impl Fn(u64) -> usize,
    mesh_resolution: usize,
    fp_opts: &FixedPointOptions<S>,
    ct_opts: &ContinuumOptions<S>,
) -> Result<Vec<ConvergenceRow<S>>> {
    let continuum = solve_continuum(domain, beta_scaled, mesh_resolution, None, ct_opts)?;
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let m = m_rule(n);
        let grid = CoarseGrid::with_box_count(*domain, m)?;
        let lambda = mean_field_lambda::<S>(n);
        let beta = beta_from_scaled(beta_scaled, n, lambda);
        let sol = occupation_fixed_point(&grid, n, beta, lambda, fp_opts)?;
        rows.push(ConvergenceRow {
            n,
            m,
            l1_distance: density_l1_distance(&sol, &grid, &continuum)?,
        });
    }
    Ok(rows)
}

/// L1 distance between a solution's normalized occupation density and the
/// box-averaged continuum density.
pub fn density_l1_distance<S: Real>(
    sol: &OccupationSolution<S>,
    grid: &CoarseGrid<S>,
    continuum: &MeanField<S>,
) -> Result<S> {
    let averaged = box_average(continuum, grid)?;
    let n_f = S::of_usize(sol.n as usize);
    let box_area = grid.box_area();
    let mut acc = KahanSum::new();
    for (&occ, &avg) in sol.occupations.iter().zip(&averaged) {
        let density = occ / (n_f * box_area);
        acc.add((density - avg).abs() * box_area);
    }
    Ok(acc.value())
}

/// One row of the mesh-refinement study.
#[derive(Debug, Clone, Serialize)]
pub struct MeshResidualRow<S> {
    pub resolution: usize,
    /// Interior max of |Lap5(e0) - 2 pi xi| at a fixed physical margin.
    pub residual: S,
}

/// Interior margin used by the refinement study, as a fraction of the side:
/// the residual is compared on the same physical subdomain at every
/// resolution. The quadrature error of the log-kernel sum has a boundary
/// tail decaying into the interior, so the margin keeps the comparison away
/// from it.
pub const INTERIOR_MARGIN_FRACTION: f64 = 1.0 / 8.0;

/// Solves the limit equation at each resolution and reports the interior
/// Laplacian-consistency residual. Halving the spacing should shrink the
/// residual by roughly four.
pub fn mesh_convergence_study<S: Real>(
    domain: &Domain<S>,
    beta_scaled: S,
    resolutions: &[usize],
    opts: &ContinuumOptions<S>,
) -> Result<Vec<MeshResidualRow<S>>> {
    let mut rows = Vec::with_capacity(resolutions.len());
    for &p in resolutions {
        let mf = solve_continuum(domain, beta_scaled, p, None, opts)?;
        let margin = ((p as f64) * INTERIOR_MARGIN_FRACTION).ceil() as usize;
        rows.push(MeshResidualRow {
            resolution: p,
            residual: laplacian_residual(&mf, margin),
        });
    }
    Ok(rows)
}
