//! Metropolis Monte Carlo sampling of the canonical point-vortex ensemble
//! exp(-beta H) at positive and negative inverse temperature, with
//! occupation and clustering observables.
//!
//! One chain is strictly sequential and fully determined by its seed.
//! Proposals move a single vortex inside a square window; moves leaving the
//! domain or landing within the singularity guard of another vortex count as
//! rejections, which keeps the kernel trivially reversible on the confined
//! target.

use crate::error::{Error, Result};
use crate::geometry::{CoarseGrid, Domain, Point, VortexConfiguration};
use crate::hamiltonian::{full_energy, move_energy_delta};
use crate::numeric::KahanSum;
use crate::scalar::Real;
use rand::distr::{Distribution, Uniform};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

/// Scaled admissibility floor: beta * lambda^2 * N is kept above -4 pi by
/// default. The true validity threshold of the mean-field limit is sharper
/// but comes from the thermodynamic-limit literature, not from anything
/// computed here; override it when you know better.
pub const DEFAULT_BETA_MIN_SCALED: f64 = -4.0 * std::f64::consts::PI;

/// Default floor on beta for a gas of `n` vortices of strength `lambda`.
pub fn beta_min_default<S: Real>(lambda: S, n: usize) -> S {
    S::of(DEFAULT_BETA_MIN_SCALED) / (lambda * lambda * S::of_usize(n))
}

/// Sampler parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig<S> {
    /// Inverse temperature; negative values are the clustering regime.
    pub beta: S,
    /// Total Metropolis steps, including burn-in.
    pub steps: usize,
    /// Half-width of the square proposal window.
    pub step_size: S,
    pub seed: u64,
    /// Record every `thin`-th post-burn-in state.
    pub thin: usize,
    pub burn_in: usize,
    /// Override of the admissibility floor; `None` uses
    /// [`beta_min_default`].
    pub beta_min: Option<S>,
    /// Adapt the step size toward a sane acceptance window during burn-in.
    /// Frozen at measurement start either way.
    pub tune_during_burn_in: bool,
}

impl<S: Real> SamplerConfig<S> {
    pub fn new(beta: S, steps: usize, step_size: S, seed: u64) -> Self {
        Self {
            beta,
            steps,
            step_size,
            seed,
            thin: 1,
            burn_in: 0,
            beta_min: None,
            tune_during_burn_in: false,
        }
    }

    pub fn with_thinning(mut self, burn_in: usize, thin: usize) -> Self {
        self.burn_in = burn_in;
        self.thin = thin;
        self
    }

    fn validate(&self, domain: &Domain<S>, n: usize, lambda: S) -> Result<()> {
        let mut problems = Vec::new();
        if self.steps <= self.burn_in {
            problems.push(format!(
                "steps ({}) must exceed burn_in ({})",
                self.steps, self.burn_in
            ));
        }
        if !(self.step_size > S::zero() && self.step_size <= domain.side()) {
            problems.push(format!(
                "step_size ({}) must lie in (0, side = {}]",
                self.step_size,
                domain.side()
            ));
        }
        if self.thin == 0 {
            problems.push("thin must be at least 1".into());
        }
        if !problems.is_empty() {
            return Err(Error::InvalidParameter(problems.join("; ")));
        }
        let beta_min = self.beta_min.unwrap_or_else(|| beta_min_default(lambda, n));
        if self.beta < beta_min {
            return Err(Error::Admissibility {
                beta: self.beta.to_f64().unwrap_or(f64::NAN),
                beta_min: beta_min.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(())
    }
}

/// Recorded Markov chain.
#[derive(Debug, Clone)]
pub struct Chain<S> {
    pub samples: Vec<VortexConfiguration<S>>,
    /// Accepted / proposed over the measurement phase.
    pub acceptance_rate: S,
    pub beta: S,
    pub seed: u64,
    /// Step size in force when measurement started (after any tuning).
    pub final_step_size: S,
}

/// Metropolis acceptance probability for an energy change `delta_h` at
/// inverse temperature `beta`. Shared with the detailed-balance tests.
#[inline]
pub fn accept_probability<S: Real>(beta: S, delta_h: S) -> S {
    let a = -beta * delta_h;
    if a >= S::zero() {
        S::one()
    } else {
        a.exp()
    }
}

/// Runs the Metropolis chain targeting exp(-beta H) restricted to the
/// domain. Deterministic for a fixed `(initial, cfg)` pair.
pub fn sample_canonical<S: Real>(
    initial: &VortexConfiguration<S>,
    domain: &Domain<S>,
    cfg: &SamplerConfig<S>,
) -> Result<Chain<S>> {
    let n = initial.len();
    cfg.validate(domain, n, initial.lambda())?;
    initial.validate_in(domain)?;
    // surfaces a singular initial state before stepping
    full_energy(initial, domain)?;

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut state = initial.clone();
    let mut step_size = cfg.step_size;
    let unit =
        Uniform::new(S::zero(), S::one()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut window =
        Uniform::new(-step_size, step_size).map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let expected = (cfg.steps - cfg.burn_in).div_ceil(cfg.thin);
    let mut samples = Vec::with_capacity(expected);
    let mut accepted_measure = 0usize;
    let mut tune_accepted = 0usize;
    let mut tune_window = 0usize;

    for step in 0..cfg.steps {
        let k = rng.random_range(0..n);
        let old = state.positions()[k];
        let proposal = Point::new(
            old.x + window.sample(&mut rng),
            old.y + window.sample(&mut rng),
        );
        let measuring = step >= cfg.burn_in;

        let accept = if !domain.contains(&proposal) {
            false
        } else if cfg.beta == S::zero() {
            // exp(0) = 1: every in-domain proposal passes
            true
        } else {
            match move_energy_delta(&state, domain, k, &proposal) {
                Ok(delta) => {
                    let a = accept_probability(cfg.beta, delta);
                    a >= S::one() || unit.sample(&mut rng) < a
                }
                // inside the singularity guard: reject instead of +/- inf
                Err(Error::SingularConfiguration { .. }) => false,
                Err(e) => return Err(e),
            }
        };
        if accept {
            state.positions_mut()[k] = proposal;
            if measuring {
                accepted_measure += 1;
            } else {
                tune_accepted += 1;
            }
        }

        if !measuring && cfg.tune_during_burn_in {
            tune_window += 1;
            if tune_window == 200 {
                let rate = tune_accepted as f64 / tune_window as f64;
                if rate < 0.2 {
                    step_size *= S::of(0.8);
                } else if rate > 0.6 {
                    step_size = (step_size * S::of(1.25)).min(domain.side());
                }
                window = Uniform::new(-step_size, step_size)
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?;
                tune_window = 0;
                tune_accepted = 0;
            }
        }

        if measuring && (step - cfg.burn_in).is_multiple_of(cfg.thin) {
            samples.push(state.clone());
        }
    }

    let measured = cfg.steps - cfg.burn_in;
    Ok(Chain {
        samples,
        acceptance_rate: S::of_usize(accepted_measure) / S::of_usize(measured),
        beta: cfg.beta,
        seed: cfg.seed,
        final_step_size: step_size,
    })
}

/// Per-box mean occupation over the chain; sums to N.
pub fn occupation_histogram<S: Real>(chain: &Chain<S>, grid: &CoarseGrid<S>) -> Result<Vec<S>> {
    if chain.samples.is_empty() {
        return Err(Error::InvalidParameter("empty chain".into()));
    }
    let counts = occupation_counts(chain, grid)?;
    let samples = S::of_usize(chain.samples.len());
    Ok(counts
        .into_iter()
        .map(|c| S::of_usize(c as usize) / samples)
        .collect())
}

/// Total per-box occupation counts aggregated over all samples.
pub fn occupation_counts<S: Real>(chain: &Chain<S>, grid: &CoarseGrid<S>) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; grid.box_count()];
    for sample in &chain.samples {
        let s = grid.assign_boxes(sample)?;
        for (c, &n) in counts.iter_mut().zip(s.occupations()) {
            *c += n;
        }
    }
    Ok(counts)
}

/// Frequency table of full macrostates; practical only for small M and N.
pub fn macrostate_frequencies<S: Real>(
    chain: &Chain<S>,
    grid: &CoarseGrid<S>,
) -> Result<BTreeMap<Vec<u64>, u64>> {
    let mut table = BTreeMap::new();
    for sample in &chain.samples {
        let s = grid.assign_boxes(sample)?;
        *table.entry(s.occupations().to_vec()).or_insert(0) += 1;
    }
    Ok(table)
}

/// Root-mean-square distance of the vortices from their centroid, one value
/// per sample.
pub fn clustering_radius_series<S: Real>(chain: &Chain<S>) -> Vec<S> {
    chain
        .samples
        .iter()
        .map(|sample| {
            let n = S::of_usize(sample.len());
            let mut cx = KahanSum::new();
            let mut cy = KahanSum::new();
            for p in sample.positions() {
                cx.add(p.x);
                cy.add(p.y);
            }
            let centroid = Point::new(cx.value() / n, cy.value() / n);
            let mut sq = KahanSum::new();
            for p in sample.positions() {
                let d = p.sub(&centroid);
                sq.add(d.x * d.x + d.y * d.y);
            }
            (sq.value() / n).sqrt()
        })
        .collect()
}

/// Mean of [`clustering_radius_series`] over the chain.
pub fn clustering_radius<S: Real>(chain: &Chain<S>) -> Result<S> {
    if chain.samples.is_empty() {
        return Err(Error::InvalidParameter("empty chain".into()));
    }
    let series = clustering_radius_series(chain);
    Ok(crate::numeric::ksum(series.iter().copied()) / S::of_usize(series.len()))
}

/// Energy of every `stride`-th recorded sample, for stationarity checks.
pub fn energy_series<S: Real>(
    chain: &Chain<S>,
    domain: &Domain<S>,
    stride: usize,
) -> Result<Vec<(usize, S)>> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for (i, sample) in chain.samples.iter().enumerate().step_by(stride) {
        out.push((i, full_energy(sample, domain)?));
    }
    Ok(out)
}

/// Chain file header: configuration echo plus provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainHeader<S> {
    pub kind: String,
    pub n: usize,
    pub lambda: S,
    pub side: S,
    pub beta: S,
    pub seed: u64,
    pub steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub step_size: S,
    pub acceptance_rate: S,
    pub samples: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleLine<S> {
    positions: Vec<(S, S)>,
}

/// Writes the chain as JSON lines: a header record, then one configuration
/// per line.
pub fn write_chain_jsonl<S: Real, W: Write>(
    chain: &Chain<S>,
    domain: &Domain<S>,
    cfg: &SamplerConfig<S>,
    mut w: W,
) -> std::io::Result<()> {
    let first = chain.samples.first();
    let header = ChainHeader {
        kind: "header".to_string(),
        n: first.map_or(0, |c| c.len()),
        lambda: first.map_or(S::one(), |c| c.lambda()),
        side: domain.side(),
        beta: chain.beta,
        seed: chain.seed,
        steps: cfg.steps,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        step_size: cfg.step_size,
        acceptance_rate: chain.acceptance_rate,
        samples: chain.samples.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for sample in &chain.samples {
        let line = SampleLine {
            positions: sample.positions().iter().map(|p| (p.x, p.y)).collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a chain written by [`write_chain_jsonl`].
pub fn read_chain_jsonl<S: Real, R: BufRead>(r: R) -> Result<(ChainHeader<S>, Chain<S>)> {
    let mut lines = r.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::InvalidParameter("empty chain file".into()))?
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let header: ChainHeader<S> =
        serde_json::from_str(&header_line).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut samples = Vec::with_capacity(header.samples);
    for line in lines {
        let line = line.map_err(|e| Error::InvalidParameter(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SampleLine<S> =
            serde_json::from_str(&line).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        samples.push(VortexConfiguration::new(
            parsed
                .positions
                .into_iter()
                .map(|(x, y)| Point::new(x, y))
                .collect(),
            header.lambda,
        )?);
    }
    let chain = Chain {
        samples,
        acceptance_rate: header.acceptance_rate,
        beta: header.beta,
        seed: header.seed,
        final_step_size: header.step_size,
    };
    Ok((header, chain))
}
