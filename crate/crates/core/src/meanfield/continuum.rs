//! Continuum mean-field solvers on a uniform cell-centered mesh.
//!
//! The solvers work in the integral formulation: the log-kernel potential
//! E0[xi](x) = int log|x - y| xi(y) dy is evaluated by direct mesh
//! convolution with the exact cell self-integral on the diagonal, and the
//! density is iterated as xi <- normalize(exp(-beta (E0 + E1))). This avoids
//! committing to boundary conditions for the stream function; psi = E0/(2 pi)
//! satisfies the five-point Laplacian identity up to O(mesh^2) in the
//! interior, which the convergence study verifies.

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::hamiltonian::{mean_value_constant, mean_value_derivative};
use crate::numeric::{KahanSum, LogSumExp};
use crate::scalar::Real;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Uniform P x P cell-centered mesh over the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mesh<S> {
    pub resolution: usize,
    pub side: S,
}

impl<S: Real> Mesh<S> {
    pub fn new(domain: &Domain<S>, resolution: usize) -> Result<Self> {
        if resolution < 16 {
            return Err(Error::InvalidParameter(format!(
                "mesh resolution must be at least 16, got {resolution}"
            )));
        }
        Ok(Self {
            resolution,
            side: domain.side(),
        })
    }

    pub fn spacing(&self) -> S {
        self.side / S::of_usize(self.resolution)
    }

    pub fn cell_area(&self) -> S {
        self.spacing() * self.spacing()
    }

    pub fn len(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn is_empty(&self) -> bool {
        self.resolution == 0
    }

    /// Cell-center coordinate of flat index `idx` (row-major, y-major).
    pub fn node(&self, idx: usize) -> (S, S) {
        let p = self.resolution;
        let delta = self.spacing();
        let half = S::of(0.5);
        let ix = idx % p;
        let iy = idx / p;
        (
            (S::of_usize(ix) + half) * delta,
            (S::of_usize(iy) + half) * delta,
        )
    }
}

/// Field of values on a [`Mesh`], row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarField<S> {
    pub resolution: usize,
    pub values: Vec<S>,
}

impl<S: Real> ScalarField<S> {
    pub fn constant(mesh: &Mesh<S>, value: S) -> Self {
        Self {
            resolution: mesh.resolution,
            values: vec![value; mesh.len()],
        }
    }

    pub fn max_abs(&self) -> S {
        self.values
            .iter()
            .fold(S::zero(), |acc, &v| acc.max(v.abs()))
    }

    /// Writes the field as row-major CSV, one mesh row per line.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for row in self.values.chunks(self.resolution) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                out.push_str(&format!("{v}"));
                first = false;
            }
            out.push('\n');
        }
        std::fs::write(path, out)
    }
}

/// Tabulated log-kernel weights for the mesh convolution. Entry (dx, dy)
/// holds cell_area * log(r) at offset r = delta * |(dx, dy)|; the diagonal
/// holds the exact integral of log|u| over one square cell, which is what
/// keeps the scheme second order.
pub struct LogKernel<S> {
    resolution: usize,
    table: Vec<S>,
}

impl<S: Real> LogKernel<S> {
    pub fn build(mesh: &Mesh<S>) -> Self {
        let p = mesh.resolution;
        let delta = mesh.spacing();
        let area = mesh.cell_area();
        let mut table = vec![S::zero(); p * p];
        for dy in 0..p {
            for dx in 0..p {
                table[dy * p + dx] = if dx == 0 && dy == 0 {
                    // int_{[-a,a]^2} log|u| du with a = delta/2:
                    // (delta^2/2) (log(delta^2/2) - 3 + pi/2)
                    let half_sq = delta * delta * S::of(0.5);
                    half_sq * (half_sq.ln() - S::of(3.0) + S::PI() * S::of(0.5))
                } else {
                    let rx = S::of_usize(dx) * delta;
                    let ry = S::of_usize(dy) * delta;
                    (rx * rx + ry * ry).sqrt().ln() * area
                };
            }
        }
        Self {
            resolution: p,
            table,
        }
    }

    /// E0[src](x_p) = sum_q K(p - q) src_q for every mesh point. Each output
    /// point is an independent ordered reduction, so the result does not
    /// depend on the worker count.
    pub fn convolve(&self, src: &[S]) -> Vec<S> {
        let p = self.resolution;
        assert_eq!(src.len(), p * p);
        let mut out = vec![S::zero(); p * p];
        out.par_chunks_mut(p).enumerate().for_each(|(iy, row)| {
            for (ix, slot) in row.iter_mut().enumerate() {
                let mut acc = KahanSum::new();
                for qy in 0..p {
                    let dy = iy.abs_diff(qy);
                    let krow = &self.table[dy * p..dy * p + p];
                    let srow = &src[qy * p..qy * p + p];
                    for (qx, &sv) in srow.iter().enumerate() {
                        let dx = ix.abs_diff(qx);
                        acc.add(krow[dx] * sv);
                    }
                }
                *slot = acc.value();
            }
        });
        out
    }
}

/// Solver knobs for the continuum iterations.
#[derive(Debug, Clone, Copy)]
pub struct ContinuumOptions<S> {
    /// Tolerance on max|xi_new - xi| / max xi.
    pub tol: S,
    pub max_iter: usize,
    /// Initial damping; halved on oscillation down to 1/64.
    pub damping: S,
    /// Density cap (in units of 1/A) above which the negative-temperature
    /// iteration is declared blown up.
    pub density_cap: S,
}

impl<S: Real> Default for ContinuumOptions<S> {
    fn default() -> Self {
        Self {
            tol: S::of(1e-11),
            max_iter: 20_000,
            damping: S::of(0.5),
            density_cap: S::of(1e9),
        }
    }
}

/// Converged single-species mean field.
#[derive(Debug, Clone, Serialize)]
pub struct MeanField<S> {
    pub mesh: Mesh<S>,
    /// Scaled inverse temperature beta_hat = beta lambda^2 N of the limit
    /// equation.
    pub beta: S,
    /// Density, normalized so int xi dA = 1.
    pub xi: ScalarField<S>,
    /// Log-kernel potential of xi.
    pub e0: ScalarField<S>,
    /// Self-energy field entering the exponent next to e0; identically zero
    /// in the limit solver.
    pub e1: ScalarField<S>,
    /// Stream function psi = e0 / (2 pi), so the five-point Laplacian of e0
    /// approximates 2 pi xi.
    pub psi: ScalarField<S>,
    /// Normalization constant: xi = d exp(-beta (e0 + e1)).
    pub d: S,
    pub iterations: usize,
    pub residual: S,
    /// Finite-N label when the self-energy field is active.
    pub finite_n: Option<u64>,
}

fn normalized_density<S: Real>(u: &[S], cell_area: S) -> (Vec<S>, S) {
    // xi_i = exp(-u_i + log d); log d = -log(sum exp(-u) dA)
    let mut lse = LogSumExp::new();
    for &ui in u {
        lse.add(-ui);
    }
    let log_d = -(lse.value() + cell_area.ln());
    (
        u.iter().map(|&ui| (log_d - ui).exp()).collect(),
        log_d.exp(),
    )
}

/// Damped Picard iteration for the single-species mean-field density
/// xi = d exp(-beta (E0[xi] + E1)) at scaled inverse temperature `beta`.
///
/// With `finite_n = None` the self-energy field is zero and this is the
/// limit equation; with `finite_n = Some(n)` the field carries the finite-N
/// correction at the matched coarse-graining M = n (box area A/n), which is
/// the scaling regime where the correction provably fades.
pub fn solve_continuum<S: Real>(
    domain: &Domain<S>,
    beta: S,
    resolution: usize,
    finite_n: Option<u64>,
    opts: &ContinuumOptions<S>,
) -> Result<MeanField<S>> {
    let mesh = Mesh::new(domain, resolution)?;
    let kernel = LogKernel::build(&mesh);
    let area = domain.area();
    let cell_area = mesh.cell_area();
    let cap = opts.density_cap / area;
    let mut xi = vec![area.recip(); mesh.len()];
    let mut gamma = opts.damping;
    let mut prev_residual = S::infinity();
    let mut trace = Vec::new();

    // finite-N self-energy at matched coarse-graining: n(x) = N xi(x) h^2
    // with h^2 = A/N; the exponent-scale field is N * E1_raw
    let e1_field = |xi_now: &[S]| -> Vec<S> {
        match finite_n {
            None => vec![S::zero(); xi_now.len()],
            Some(n) => {
                let n_f = S::of_usize(n as usize);
                let h_sq = area / n_f;
                let h = h_sq.sqrt();
                let floor = S::of(1e-12) * n_f;
                let quarter = S::of(0.25);
                xi_now
                    .iter()
                    .map(|&x| {
                        let occ = (n_f * x * h_sq).max(floor);
                        (occ * (occ - S::one()) * quarter * mean_value_derivative(occ)
                            + (S::of(2.0) * occ * occ - S::one())
                                * quarter
                                * mean_value_constant(occ, h))
                            / n_f
                    })
                    .collect()
            }
        }
    };

    for iter in 1..=opts.max_iter {
        let e0 = kernel.convolve(&xi);
        let e1 = e1_field(&xi);
        let u: Vec<S> = e0.iter().zip(&e1).map(|(&a, &b)| beta * (a + b)).collect();
        let (xi_new, d) = normalized_density(&u, cell_area);
        let max_xi = xi.iter().fold(S::zero(), |acc, &v| acc.max(v));
        let mut defect = S::zero();
        for (&a, &b) in xi_new.iter().zip(&xi) {
            defect = defect.max((a - b).abs());
        }
        let residual = defect / max_xi;
        trace.push(residual.to_f64().unwrap_or(f64::NAN));
        if trace.len() > 8 {
            trace.remove(0);
        }
        let new_max = xi_new.iter().fold(S::zero(), |acc, &v| acc.max(v));
        if new_max > cap {
            return Err(Error::DensityBlowUp {
                beta: beta.to_f64().unwrap_or(f64::NAN),
                max_density: new_max.to_f64().unwrap_or(f64::NAN),
                cap: cap.to_f64().unwrap_or(f64::NAN),
            });
        }
        if residual <= opts.tol {
            let psi: Vec<S> = e0.iter().map(|&v| v / (S::of(2.0) * S::PI())).collect();
            let p = mesh.resolution;
            return Ok(MeanField {
                mesh,
                beta,
                xi: ScalarField {
                    resolution: p,
                    values: xi,
                },
                e0: ScalarField {
                    resolution: p,
                    values: e0,
                },
                e1: ScalarField {
                    resolution: p,
                    values: e1,
                },
                psi: ScalarField {
                    resolution: p,
                    values: psi,
                },
                d,
                iterations: iter,
                residual,
                finite_n,
            });
        }
        if residual > prev_residual {
            gamma = (gamma * S::of(0.5)).max(S::of(1.0 / 64.0));
        }
        prev_residual = residual;
        for (x, &x_new) in xi.iter_mut().zip(&xi_new) {
            *x = (S::one() - gamma) * *x + gamma * x_new;
        }
        // keep exact unit mass under damping
        let total = crate::numeric::ksum(xi.iter().copied()) * cell_area;
        let scale = total.recip();
        for x in xi.iter_mut() {
            *x *= scale;
        }
    }
    Err(Error::IterationLimit {
        iterations: opts.max_iter,
        residual: prev_residual.to_f64().unwrap_or(f64::NAN),
        trace,
    })
}

impl<S: Real> MeanField<S> {
    /// Serializes the field set: `header.json` plus row-major CSV dumps.
    /// Returns the written paths.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let header = serde_json::json!({
            "resolution": self.mesh.resolution,
            "side": self.mesh.side.to_f64(),
            "beta": self.beta.to_f64(),
            "d": self.d.to_f64(),
            "iterations": self.iterations,
            "residual": self.residual.to_f64(),
            "finite_n": self.finite_n,
        });
        let header_path = dir.join("header.json");
        let mut f = std::fs::File::create(&header_path)?;
        writeln!(f, "{}", serde_json::to_string_pretty(&header)?)?;
        written.push(header_path);
        for (name, field) in [("xi", &self.xi), ("e0", &self.e0), ("psi", &self.psi)] {
            let path = dir.join(format!("{name}.csv"));
            field.write_csv(&path)?;
            written.push(path);
        }
        if self.finite_n.is_some() {
            let path = dir.join("e1.csv");
            self.e1.write_csv(&path)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Interior residual of the Laplacian identity: max over mesh points at
/// least `margin` cells from the boundary of |Lap5(e0) - 2 pi xi|.
pub fn laplacian_residual<S: Real>(mf: &MeanField<S>, margin: usize) -> S {
    let p = mf.mesh.resolution;
    let delta = mf.mesh.spacing();
    let inv_d2 = (delta * delta).recip();
    let two_pi = S::of(2.0) * S::PI();
    let e0 = &mf.e0.values;
    let xi = &mf.xi.values;
    let margin = margin.max(1);
    let mut worst = S::zero();
    for iy in margin..p - margin {
        for ix in margin..p - margin {
            let idx = iy * p + ix;
            let lap = (e0[idx - 1] + e0[idx + 1] + e0[idx - p] + e0[idx + p]
                - S::of(4.0) * e0[idx])
                * inv_d2;
            worst = worst.max((lap - two_pi * xi[idx]).abs());
        }
    }
    worst
}

/// Converged two-species field. The species carry equal and opposite unit
/// strengths with total density one and zero net circulation.
#[derive(Debug, Clone, Serialize)]
pub struct SinhPoissonField<S> {
    pub mesh: Mesh<S>,
    /// Scaled inverse temperature (sign orients the species).
    pub beta: S,
    /// Net vorticity omega = xi_plus - xi_minus.
    pub omega: ScalarField<S>,
    pub xi_plus: ScalarField<S>,
    pub xi_minus: ScalarField<S>,
    /// Log-kernel potential of omega.
    pub e0: ScalarField<S>,
    pub psi: ScalarField<S>,
    pub iterations: usize,
    pub residual: S,
}

impl<S: Real> SinhPoissonField<S> {
    /// Least-squares fit of omega against the two-parameter family
    /// p sinh(-beta e0) + q cosh(-beta e0); returns (p, q, rms residual).
    /// A converged solution lies on this curve up to iteration tolerance.
    pub fn sinh_fit(&self) -> (S, S, S) {
        let mut s_ss = KahanSum::new();
        let mut s_cc = KahanSum::new();
        let mut s_sc = KahanSum::new();
        let mut s_sy = KahanSum::new();
        let mut s_cy = KahanSum::new();
        for (&w, &e) in self.omega.values.iter().zip(&self.e0.values) {
            let arg = -self.beta * e;
            let sh = arg.sinh();
            let ch = arg.cosh();
            s_ss.add(sh * sh);
            s_cc.add(ch * ch);
            s_sc.add(sh * ch);
            s_sy.add(sh * w);
            s_cy.add(ch * w);
        }
        let (ss, cc, sc, sy, cy) = (
            s_ss.value(),
            s_cc.value(),
            s_sc.value(),
            s_sy.value(),
            s_cy.value(),
        );
        let det = ss * cc - sc * sc;
        let (p, q) = if det.abs() < S::of(1e-300) {
            (S::zero(), cy / cc)
        } else {
            ((sy * cc - cy * sc) / det, (cy * ss - sy * sc) / det)
        };
        let mut rss = KahanSum::new();
        for (&w, &e) in self.omega.values.iter().zip(&self.e0.values) {
            let arg = -self.beta * e;
            let r = w - (p * arg.sinh() + q * arg.cosh());
            rss.add(r * r);
        }
        let rms = (rss.value() / S::of_usize(self.omega.values.len())).sqrt();
        (p, q, rms)
    }
}

/// Two-species self-consistent iteration. Half the density carries strength
/// +1 and half -1; each species relaxes to
/// xi_pm = normalize_half(exp(-/+ |beta| E0[omega])) and the net vorticity
/// omega = xi_plus - xi_minus then satisfies a sinh relation in E0[omega].
///
/// The species labels are symmetric, so the iteration couples through the
/// magnitude of beta while its sign orients the symmetry-breaking seed;
/// flipping the sign of beta therefore relabels the species and negates
/// omega exactly, operation for operation. The uniform state omega = 0 is
/// always a fixed point, which is why a seed is needed at all; at beta = 0
/// the seed vanishes and omega stays identically zero.
pub fn solve_sinh_poisson<S: Real>(
    domain: &Domain<S>,
    beta: S,
    resolution: usize,
    opts: &ContinuumOptions<S>,
) -> Result<SinhPoissonField<S>> {
    let mesh = Mesh::new(domain, resolution)?;
    let kernel = LogKernel::build(&mesh);
    let area = domain.area();
    let cell_area = mesh.cell_area();
    let p = mesh.resolution;
    let cap = opts.density_cap / area;
    let coupling = beta.abs();
    let orientation = if beta > S::zero() {
        S::one()
    } else if beta < S::zero() {
        -S::one()
    } else {
        S::zero()
    };

    // dipole-mode seed with zero mean; sign(beta) picks the orientation
    let seed_amp = S::of(0.05) / area;
    let mut omega: Vec<S> = (0..mesh.len())
        .map(|idx| {
            let (x, _) = mesh.node(idx);
            orientation * seed_amp * (S::of(2.0) * S::PI() * x / mesh.side).sin()
        })
        .collect();

    let mut gamma = opts.damping;
    let mut prev_residual = S::infinity();
    let mut trace = Vec::new();

    let species = |u: &[S]| -> (Vec<S>, Vec<S>) {
        // each species normalized to mass 1/2
        let mut lse_p = LogSumExp::new();
        let mut lse_m = LogSumExp::new();
        for &ui in u {
            lse_p.add(-ui);
            lse_m.add(ui);
        }
        let log_half = S::of(0.5).ln();
        let log_dp = log_half - (lse_p.value() + cell_area.ln());
        let log_dm = log_half - (lse_m.value() + cell_area.ln());
        (
            u.iter().map(|&ui| (log_dp - ui).exp()).collect(),
            u.iter().map(|&ui| (log_dm + ui).exp()).collect(),
        )
    };

    for iter in 1..=opts.max_iter {
        let e0 = kernel.convolve(&omega);
        let u: Vec<S> = e0.iter().map(|&e| coupling * e).collect();
        let (xi_p, xi_m) = species(&u);
        let omega_new: Vec<S> = xi_p.iter().zip(&xi_m).map(|(&a, &b)| a - b).collect();
        let mut defect = S::zero();
        for (&a, &b) in omega_new.iter().zip(&omega) {
            defect = defect.max((a - b).abs());
        }
        // species-symmetric scale so the sign-flipped run sees identical
        // residuals and damping decisions
        let max_p = xi_p.iter().fold(S::zero(), |acc, &v| acc.max(v));
        let max_m = xi_m.iter().fold(S::zero(), |acc, &v| acc.max(v));
        let scale = max_p.max(max_m).max(area.recip());
        if scale > cap {
            return Err(Error::DensityBlowUp {
                beta: beta.to_f64().unwrap_or(f64::NAN),
                max_density: scale.to_f64().unwrap_or(f64::NAN),
                cap: cap.to_f64().unwrap_or(f64::NAN),
            });
        }
        let residual = defect / scale;
        trace.push(residual.to_f64().unwrap_or(f64::NAN));
        if trace.len() > 8 {
            trace.remove(0);
        }
        if residual <= opts.tol {
            let psi: Vec<S> = e0.iter().map(|&v| v / (S::of(2.0) * S::PI())).collect();
            return Ok(SinhPoissonField {
                mesh,
                beta,
                omega: ScalarField {
                    resolution: p,
                    values: omega_new,
                },
                xi_plus: ScalarField {
                    resolution: p,
                    values: xi_p,
                },
                xi_minus: ScalarField {
                    resolution: p,
                    values: xi_m,
                },
                e0: ScalarField {
                    resolution: p,
                    values: e0,
                },
                psi: ScalarField {
                    resolution: p,
                    values: psi,
                },
                iterations: iter,
                residual,
            });
        }
        if residual > prev_residual {
            gamma = (gamma * S::of(0.5)).max(S::of(1.0 / 64.0));
        }
        prev_residual = residual;
        for (w, &w_new) in omega.iter_mut().zip(&omega_new) {
            *w = (S::one() - gamma) * *w + gamma * w_new;
        }
        // zero net circulation, kept exactly
        let mean = crate::numeric::ksum(omega.iter().copied()) / S::of_usize(omega.len());
        for w in omega.iter_mut() {
            *w -= mean;
        }
    }
    Err(Error::IterationLimit {
        iterations: opts.max_iter,
        residual: prev_residual.to_f64().unwrap_or(f64::NAN),
        trace,
    })
}

impl<S: Real> SinhPoissonField<S> {
    /// Serializes omega, e0 and psi alongside a JSON header.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let (fit_p, fit_q, fit_rms) = self.sinh_fit();
        let mut written = Vec::new();
        let header = serde_json::json!({
            "resolution": self.mesh.resolution,
            "side": self.mesh.side.to_f64(),
            "beta": self.beta.to_f64(),
            "iterations": self.iterations,
            "residual": self.residual.to_f64(),
            "fit_sinh_amplitude": fit_p.to_f64(),
            "fit_cosh_amplitude": fit_q.to_f64(),
            "fit_rms": fit_rms.to_f64(),
        });
        let header_path = dir.join("header.json");
        std::fs::write(
            &header_path,
            format!("{}\n", serde_json::to_string_pretty(&header)?),
        )?;
        written.push(header_path);
        for (name, field) in [
            ("omega", &self.omega),
            ("e0", &self.e0),
            ("psi", &self.psi),
            ("xi_plus", &self.xi_plus),
            ("xi_minus", &self.xi_minus),
        ] {
            let path = dir.join(format!("{name}.csv"));
            field.write_csv(&path)?;
            written.push(path);
        }
        Ok(written)
    }
}
