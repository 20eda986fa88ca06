//! The finite-N occupation fixed point, its stationarity residual, the
//! scaling-limit fields, and the self-energy decay study.
//!
//! Occupations are relaxed to continuous reals: the stationarity condition
//! differentiates log n_i, so the solver works with n_i >= n_floor and keeps
//! sum_i n_i = N through the multiplier alpha, re-solved every sweep in
//! closed form (the constraint is linear in e^{-alpha}).

pub mod continuum;
pub mod study;

use crate::error::{Error, Result};
use crate::geometry::CoarseGrid;
use crate::hamiltonian::{mean_value_constant, mean_value_derivative};
use crate::numeric::{KahanSum, LogSumExp};
use crate::sampler::beta_min_default;
use crate::scalar::Real;
use serde::Serialize;

/// Inverse temperature realizing a scaled target beta_hat = beta lambda^2 N.
pub fn beta_from_scaled<S: Real>(beta_scaled: S, n: u64, lambda: S) -> S {
    beta_scaled / (lambda * lambda * S::of_usize(n as usize))
}

/// The mean-field strength scaling lambda = 1/N.
pub fn mean_field_lambda<S: Real>(n: u64) -> S {
    S::of_usize(n as usize).recip()
}

/// Solver knobs for [`occupation_fixed_point`].
#[derive(Debug, Clone, Copy)]
pub struct FixedPointOptions<S> {
    /// Tolerance on the normalized fixed-point defect max|update - n| * M/N.
    pub tol: S,
    pub max_iter: usize,
    /// Initial damping; halved on oscillation down to 1/64.
    pub damping: S,
    /// Admissibility floor override (default: scaled -4 pi).
    pub beta_min: Option<S>,
}

impl<S: Real> Default for FixedPointOptions<S> {
    fn default() -> Self {
        Self {
            tol: S::of(1e-11),
            max_iter: 20_000,
            damping: S::of(0.5),
            beta_min: None,
        }
    }
}

const DAMPING_FLOOR: f64 = 1.0 / 64.0;

/// Occupations are clamped at this fraction of N to keep log n finite.
/// Boxes pinned at the floor are an active bound, not interior stationary
/// points, so [`stationarity_residual`] skips them.
pub const OCCUPATION_FLOOR_SCALE: f64 = 1e-12;

/// Converged occupation vector with its multiplier and diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct OccupationSolution<S> {
    pub occupations: Vec<S>,
    /// Normalization multiplier in the convention n_i = e^{-alpha} e^{g_i};
    /// at beta = 0 this is -log(N/M).
    pub alpha: S,
    pub beta: S,
    pub lambda: S,
    pub n: u64,
    /// Final normalized fixed-point defect.
    pub residual: S,
    pub iterations: usize,
}

/// Update exponents g_i of the solved stationarity form, so that the fixed
/// point satisfies n_i = e^{-alpha} e^{g_i}:
/// g_i = -beta (lambda^2 sum_{j != i} n_j log d_ij
///              + lambda^2 [n_i(n_i-1)/4 L'(n_i) + (2 n_i^2 - 1)/4 L(n_i)]).
pub fn fixed_point_exponents<S: Real>(
    occupations: &[S],
    grid: &CoarseGrid<S>,
    beta: S,
    lambda: S,
) -> Vec<S> {
    let m = occupations.len();
    let centers = grid.centers();
    let h = grid.h();
    let lambda_sq = lambda * lambda;
    let quarter = S::of(0.25);
    (0..m)
        .map(|i| {
            let mut interaction = KahanSum::new();
            for j in 0..m {
                if j != i {
                    interaction.add(occupations[j] * centers[i].dist(&centers[j]).ln());
                }
            }
            let n_i = occupations[i];
            let self_term = n_i * (n_i - S::one()) * quarter * mean_value_derivative(n_i)
                + (S::of(2.0) * n_i * n_i - S::one()) * quarter * mean_value_constant(n_i, h);
            -beta * lambda_sq * (interaction.value() + self_term)
        })
        .collect()
}

/// Damped fixed-point iteration on the occupation numbers under the
/// constraint sum n_i = N. The multiplier is recovered in closed form every
/// sweep: alpha = logsumexp(g) - log N, so the normalized update is
/// N * softmax(g).
pub fn occupation_fixed_point<S: Real>(
    grid: &CoarseGrid<S>,
    n: u64,
    beta: S,
    lambda: S,
    opts: &FixedPointOptions<S>,
) -> Result<OccupationSolution<S>> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one vortex".into()));
    }
    let beta_min = opts
        .beta_min
        .unwrap_or_else(|| beta_min_default(lambda, n as usize));
    if beta < beta_min {
        return Err(Error::Admissibility {
            beta: beta.to_f64().unwrap_or(f64::NAN),
            beta_min: beta_min.to_f64().unwrap_or(f64::NAN),
        });
    }
    let m = grid.box_count();
    let n_f = S::of_usize(n as usize);
    let m_f = S::of_usize(m);
    let floor = S::of(OCCUPATION_FLOOR_SCALE) * n_f;
    let mut occ = vec![n_f / m_f; m];
    let mut gamma = opts.damping;
    let mut prev_residual = S::infinity();
    let mut trace = Vec::new();

    for iter in 1..=opts.max_iter {
        let g = fixed_point_exponents(&occ, grid, beta, lambda);
        let mut lse = LogSumExp::new();
        for &gi in &g {
            lse.add(gi);
        }
        let log_norm = lse.value();
        let alpha = log_norm - n_f.ln();
        // the composite map is clamp-then-renormalize; measure the defect
        // against its output or floor-pinned boxes stall the residual
        let mut update: Vec<S> = g
            .iter()
            .map(|&gi| ((gi - log_norm).exp() * n_f).max(floor))
            .collect();
        let update_total = crate::numeric::ksum(update.iter().copied());
        let update_scale = n_f / update_total;
        for u in update.iter_mut() {
            *u *= update_scale;
        }
        let mut defect = S::zero();
        for (&u, &o) in update.iter().zip(&occ) {
            defect = defect.max((u - o).abs());
        }
        let residual = defect * m_f / n_f;
        trace.push(residual.to_f64().unwrap_or(f64::NAN));
        if trace.len() > 8 {
            trace.remove(0);
        }
        if residual <= opts.tol {
            return Ok(OccupationSolution {
                occupations: occ,
                alpha,
                beta,
                lambda,
                n,
                residual,
                iterations: iter,
            });
        }
        // halve on growth or stagnation; a symmetric limit cycle keeps the
        // defect exactly constant, which plain growth detection misses
        if residual > prev_residual * S::of(0.999) {
            gamma = (gamma * S::of(0.5)).max(S::of(DAMPING_FLOOR));
        }
        prev_residual = residual;
        for (o, &u) in occ.iter_mut().zip(&update) {
            *o = ((S::one() - gamma) * *o + gamma * u).max(floor);
        }
        // flooring perturbs the constraint; rescale to sum N
        let total = crate::numeric::ksum(occ.iter().copied());
        let scale = n_f / total;
        for o in occ.iter_mut() {
            *o *= scale;
        }
    }
    Err(Error::IterationLimit {
        iterations: opts.max_iter,
        residual: prev_residual.to_f64().unwrap_or(f64::NAN),
        trace,
    })
}

/// Max-norm of the constrained stationarity gradient at a solution:
/// r_i = (1/beta)(log n_i + 1) + lambda^2 sum_{j != i} n_j log d_ij
///     + lambda^2 [n(n-1)/4 L' + (2n-1)/4 L + n(n-1)/2 L] + alpha_g,
/// with the multiplier alpha_g = (alpha - 1)/beta absorbing the entropy
/// offset. At beta = 0 the stationary point is uniform and the residual
/// degenerates to max|n_i - N/M|.
pub fn stationarity_residual<S: Real>(sol: &OccupationSolution<S>, grid: &CoarseGrid<S>) -> S {
    let m = sol.occupations.len();
    let n_f = S::of_usize(sol.n as usize);
    if sol.beta == S::zero() {
        let uniform = n_f / S::of_usize(m);
        return sol
            .occupations
            .iter()
            .fold(S::zero(), |acc, &o| acc.max((o - uniform).abs()));
    }
    let centers = grid.centers();
    let h = grid.h();
    let lambda_sq = sol.lambda * sol.lambda;
    let quarter = S::of(0.25);
    let half = S::of(0.5);
    let alpha_g = (sol.alpha - S::one()) / sol.beta;
    let active_floor = S::of(2.0 * OCCUPATION_FLOOR_SCALE) * n_f;
    let mut worst = S::zero();
    for i in 0..m {
        if sol.occupations[i] <= active_floor {
            continue;
        }
        let mut interaction = KahanSum::new();
        for j in 0..m {
            if j != i {
                interaction.add(sol.occupations[j] * centers[i].dist(&centers[j]).ln());
            }
        }
        let n_i = sol.occupations[i];
        let l = mean_value_constant(n_i, h);
        let bracket = n_i * (n_i - S::one()) * quarter * mean_value_derivative(n_i)
            + (S::of(2.0) * n_i - S::one()) * quarter * l
            + n_i * (n_i - S::one()) * half * l;
        let r = (n_i.ln() + S::one()) / sol.beta
            + lambda_sq * (interaction.value() + bracket)
            + alpha_g;
        worst = worst.max(r.abs());
    }
    worst
}

/// Discrete fields obtained from a solution at the mean-field scaling.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingFields<S> {
    /// Density estimate xi_i = n_i / (N h^2); sums to 1 against box areas.
    pub xi: Vec<S>,
    /// Normalization constant estimate d = e^{-alpha} / (N h^2).
    pub d: S,
    /// Discrete log-potential E0_i = sum_{j != i} (n_j / N^2) log d_ij.
    pub e0: Vec<S>,
    /// Self-energy field E1_i = (1/N^2)[n(n-1)/4 L'(n) + (2n^2-1)/4 L(n)].
    pub e1: Vec<S>,
}

/// Evaluates the scaling-limit fields of a converged solution. Meaningful at
/// the mean-field scaling lambda = 1/N, which is the solver default in the
/// CLI and studies.
pub fn scaling_limits<S: Real>(
    sol: &OccupationSolution<S>,
    grid: &CoarseGrid<S>,
) -> ScalingFields<S> {
    let m = sol.occupations.len();
    let n_f = S::of_usize(sol.n as usize);
    let n_sq = n_f * n_f;
    let h = grid.h();
    let h_sq = h * h;
    let centers = grid.centers();
    let quarter = S::of(0.25);
    let xi: Vec<S> = sol.occupations.iter().map(|&o| o / (n_f * h_sq)).collect();
    let d = (-sol.alpha).exp() / (n_f * h_sq);
    let e0: Vec<S> = (0..m)
        .map(|i| {
            let mut acc = KahanSum::new();
            for j in 0..m {
                if j != i {
                    acc.add(sol.occupations[j] * centers[i].dist(&centers[j]).ln());
                }
            }
            acc.value() / n_sq
        })
        .collect();
    let e1: Vec<S> = sol
        .occupations
        .iter()
        .map(|&n_i| {
            (n_i * (n_i - S::one()) * quarter * mean_value_derivative(n_i)
                + (S::of(2.0) * n_i * n_i - S::one()) * quarter * mean_value_constant(n_i, h))
                / n_sq
        })
        .collect();
    ScalingFields { xi, d, e0, e1 }
}

/// Per-box bound on |E1| from the occupation chain:
/// 1/(2N) + (n_i/N)(log(N)/2 - log(A)/2).
pub fn self_energy_bound<S: Real>(n_i: S, n_total: u64, area: S) -> S {
    let n_f = S::of_usize(n_total as usize);
    let half = S::of(0.5);
    (S::of(2.0) * n_f).recip() + n_i / n_f * (half * n_f.ln() - half * area.ln())
}
