use crate::manifest::{write_atomic, RunManifest};
use crate::{
    BoundsArgs, Cli, Command, ConvergeArgs, DecayArgs, ModeArg, SampleArgs, SinhPoissonArgs,
    SolveFiniteArgs, SolvePdeArgs,
};
use anyhow::{anyhow, Context};
use pointvortex::ensemble::{bounds_report, FVarMode, FreeEnergyReport};
use pointvortex::error::Error as CoreError;
use pointvortex::geometry::{CoarseGrid, Domain, VortexConfiguration};
use pointvortex::meanfield::continuum::{solve_continuum, solve_sinh_poisson, ContinuumOptions};
use pointvortex::meanfield::study::{finite_vs_continuum, self_energy_decay_study};
use pointvortex::meanfield::{
    beta_from_scaled, mean_field_lambda, occupation_fixed_point, scaling_limits,
    stationarity_residual, FixedPointOptions,
};
use pointvortex::sampler::{sample_canonical, write_chain_jsonl, SamplerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

/// Decorrelates the chain stream from the initial-placement stream.
const CHAIN_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

fn validation(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn from_core(error: CoreError) -> Failure {
    let code = match &error {
        CoreError::IterationLimit { .. }
        | CoreError::OracleUnconverged { .. }
        | CoreError::DensityBlowUp { .. } => 3,
        _ => 2,
    };
    Failure {
        code,
        error: error.into(),
    }
}

fn from_io(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn check(problems: Vec<String>) -> Result<(), Failure> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(validation(anyhow!(
            "invalid parameters: {}",
            problems.join("; ")
        )))
    }
}

fn resolve(out_dir: &Path, out: &Path) -> PathBuf {
    if out.is_absolute() {
        out.to_path_buf()
    } else {
        out_dir.join(out)
    }
}

fn parse_n_list(spec: &str) -> Result<Vec<u64>, Failure> {
    let list: Result<Vec<u64>, _> = spec.split(',').map(|s| s.trim().parse::<u64>()).collect();
    match list {
        Ok(v) if !v.is_empty() && v.iter().all(|&n| n >= 1) => Ok(v),
        _ => Err(validation(anyhow!("bad --n-list {spec:?}"))),
    }
}

fn parse_sweep(spec: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || {
        validation(anyhow!(
            "bad --beta-sweep {spec:?}, expected start:stop:count"
        ))
    };
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].parse().map_err(|_| bad())?;
    let stop: f64 = parts[1].parse().map_err(|_| bad())?;
    let count: usize = parts[2].parse().map_err(|_| bad())?;
    if count < 2 {
        return Err(bad());
    }
    let step = (stop - start) / (count - 1) as f64;
    Ok((0..count).map(|k| start + step * k as f64).collect())
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    std::fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))
        .map_err(from_io)?;
    match &cli.command {
        Command::Sample(args) => sample(&cli, args),
        Command::Bounds(args) => bounds(&cli, args),
        Command::SolveFinite(args) => solve_finite(&cli, args),
        Command::SolvePde(args) => solve_pde(&cli, args),
        Command::SinhPoisson(args) => sinh_poisson(&cli, args),
        Command::Converge(args) => converge(&cli, args),
        Command::Decay(args) => decay(&cli, args),
    }
}

fn sample(cli: &Cli, args: &SampleArgs) -> Result<(), Failure> {
    let mut problems = Vec::new();
    if args.n == 0 {
        problems.push("n must be at least 1".into());
    }
    if args.replicates == 0 {
        problems.push("replicates must be at least 1".into());
    }
    if args.side.is_nan() || args.side <= 0.0 {
        problems.push(format!("side ({}) must be positive", args.side));
    }
    if args.lambda == 0.0 {
        problems.push("lambda must be nonzero".into());
    }
    if args.steps <= args.burn_in {
        problems.push(format!(
            "steps ({}) must exceed burn-in ({})",
            args.steps, args.burn_in
        ));
    }
    if args.thin == 0 {
        problems.push("thin must be at least 1".into());
    }
    let step_size = args.step_size.unwrap_or(args.side / 8.0);
    if step_size.is_nan() || step_size <= 0.0 || step_size > args.side {
        problems.push(format!("step-size ({step_size}) must lie in (0, side]"));
    }
    check(problems)?;

    let domain = Domain::new(args.side).map_err(from_core)?;
    let seeds: Vec<u64> = (0..args.replicates as u64).map(|k| args.seed + k).collect();
    let mut manifest =
        RunManifest::start("sample", serde_json::to_value(args).unwrap(), seeds.clone());

    type ChainRow = (PathBuf, Vec<u8>, usize, f64);
    let results: Vec<Result<ChainRow, Failure>> = seeds
        .par_iter()
        .enumerate()
        .map(|(k, &seed)| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let init = VortexConfiguration::random_uniform(&domain, args.n, args.lambda, &mut rng)
                .map_err(from_core)?;
            let mut cfg =
                SamplerConfig::new(args.beta, args.steps, step_size, seed ^ CHAIN_SEED_SALT)
                    .with_thinning(args.burn_in, args.thin);
            cfg.beta_min = cli.beta_min;
            let chain = sample_canonical(&init, &domain, &cfg).map_err(from_core)?;
            let mut buf = Vec::new();
            write_chain_jsonl(&chain, &domain, &cfg, &mut buf)
                .context("serializing chain")
                .map_err(from_io)?;
            let path = if args.replicates == 1 {
                resolve(&cli.out_dir, &args.out)
            } else {
                let stem = args.out.file_stem().unwrap_or_default().to_string_lossy();
                let ext = args
                    .out
                    .extension()
                    .map(|e| e.to_string_lossy().to_string());
                let name = match ext {
                    Some(e) => format!("{stem}-r{k}.{e}"),
                    None => format!("{stem}-r{k}"),
                };
                resolve(&cli.out_dir, &args.out.with_file_name(name))
            };
            Ok((path, buf, chain.samples.len(), chain.acceptance_rate))
        })
        .collect();

    for result in results {
        let (path, buf, samples, acceptance) = result?;
        write_atomic(&path, &buf)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(from_io)?;
        manifest.record(&path).map_err(from_io)?;
        println!(
            "wrote {} ({samples} samples, acceptance {acceptance:.3})",
            path.display()
        );
    }
    manifest.finish(&cli.out_dir).map_err(from_io)?;
    Ok(())
}

fn sweep_csv(reports: &[FreeEnergyReport<f64>]) -> String {
    let mut out = String::from(
        "beta,f0,f_var,f_var_gibbs,f_exact,bound_gap,o_h_budget,intra_spread_budget,oracle_tolerance,bound_satisfied,p_star\n",
    );
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.beta,
            r.f0,
            r.f_var,
            r.f_var_gibbs,
            opt(r.f_exact),
            opt(r.bound_gap),
            r.o_h_budget,
            r.intra_spread_budget,
            opt(r.oracle_tolerance),
            r.bound_satisfied.map_or(String::new(), |b| b.to_string()),
            r.p_star,
        ));
    }
    out
}

fn bounds(cli: &Cli, args: &BoundsArgs) -> Result<(), Failure> {
    let mut problems = Vec::new();
    if args.n == 0 {
        problems.push("n must be at least 1".into());
    }
    if args.m == 0 {
        problems.push("m must be at least 1".into());
    }
    if args.side.is_nan() || args.side <= 0.0 {
        problems.push(format!("side ({}) must be positive", args.side));
    }
    if args.lambda == 0.0 {
        problems.push("lambda must be nonzero".into());
    }
    check(problems)?;

    let domain = Domain::new(args.side).map_err(from_core)?;
    let grid = CoarseGrid::with_box_count(domain, args.m).map_err(from_core)?;
    let mode = match args.mode {
        ModeArg::Landau => FVarMode::Landau,
        ModeArg::Full => FVarMode::Full,
    };
    let betas = match &args.beta_sweep {
        Some(spec) => parse_sweep(spec)?,
        None => vec![args.beta],
    };
    let mut manifest =
        RunManifest::start("bounds", serde_json::to_value(args).unwrap(), Vec::new());
    let reports: Vec<FreeEnergyReport<f64>> = betas
        .iter()
        .map(|&beta| {
            bounds_report(
                args.n,
                &grid,
                beta,
                args.lambda,
                mode,
                args.oracle_resolution,
            )
            .map_err(from_core)
        })
        .collect::<Result<_, _>>()?;

    let json_path = resolve(&cli.out_dir, &args.out);
    let body = if reports.len() == 1 {
        serde_json::to_string_pretty(&reports[0]).unwrap()
    } else {
        serde_json::to_string_pretty(&reports).unwrap()
    };
    write_atomic(&json_path, format!("{body}\n").as_bytes())
        .context("writing report")
        .map_err(from_io)?;
    manifest.record(&json_path).map_err(from_io)?;
    println!("wrote {}", json_path.display());

    if args.beta_sweep.is_some() {
        let csv_path = json_path.with_extension("csv");
        write_atomic(&csv_path, sweep_csv(&reports).as_bytes())
            .context("writing sweep table")
            .map_err(from_io)?;
        manifest.record(&csv_path).map_err(from_io)?;
        println!("wrote {}", csv_path.display());
    }
    for r in &reports {
        println!(
            "beta {:+.4}: f_var {:+.6}{}{}",
            r.beta,
            r.f_var,
            r.f_exact
                .map_or(String::new(), |f| format!(", f_exact {f:+.6}")),
            r.bound_satisfied
                .map_or(String::new(), |ok| format!(", bound_satisfied {ok}")),
        );
    }
    manifest.finish(&cli.out_dir).map_err(from_io)?;
    Ok(())
}

fn solve_finite(cli: &Cli, args: &SolveFiniteArgs) -> Result<(), Failure> {
    let mut problems = Vec::new();
    if args.n == 0 {
        problems.push("n must be at least 1".into());
    }
    if args.m == 0 {
        problems.push("m must be at least 1".into());
    }
    if args.tol.is_nan() || args.tol <= 0.0 {
        problems.push(format!("tol ({}) must be positive", args.tol));
    }
    if args.damping.is_nan() || args.damping <= 0.0 || args.damping > 1.0 {
        problems.push(format!("damping ({}) must lie in (0, 1]", args.damping));
    }
    if args.max_iter == 0 {
        problems.push("max-iter must be at least 1".into());
    }
    if args.lambda == Some(0.0) {
        problems.push("lambda must be nonzero".into());
    }
    check(problems)?;

    let domain = Domain::new(args.side).map_err(from_core)?;
    let grid = CoarseGrid::with_box_count(domain, args.m).map_err(from_core)?;
    let lambda = args.lambda.unwrap_or_else(|| mean_field_lambda(args.n));
    let beta = beta_from_scaled(args.beta, args.n, lambda);
    let opts = FixedPointOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        damping: args.damping,
        beta_min: cli.beta_min,
    };
    let mut manifest = RunManifest::start(
        "solve-finite",
        serde_json::to_value(args).unwrap(),
        Vec::new(),
    );
    let sol = occupation_fixed_point(&grid, args.n, beta, lambda, &opts).map_err(from_core)?;
    let fields = scaling_limits(&sol, &grid);
    let residual = stationarity_residual(&sol, &grid);
    let body = serde_json::json!({
        "grid": { "boxes_x": grid.boxes_x(), "boxes_y": grid.boxes_y(), "side": args.side },
        "beta_scaled": args.beta,
        "solution": sol,
        "scaling": fields,
        "stationarity_residual": residual,
    });
    let path = resolve(&cli.out_dir, &args.out);
    write_atomic(
        &path,
        format!("{}\n", serde_json::to_string_pretty(&body).unwrap()).as_bytes(),
    )
    .context("writing solution")
    .map_err(from_io)?;
    manifest.record(&path).map_err(from_io)?;
    println!(
        "wrote {} (iterations {}, residual {:.3e}, stationarity {:.3e})",
        path.display(),
        sol.iterations,
        sol.residual,
        residual
    );
    manifest.finish(&cli.out_dir).map_err(from_io)?;
    Ok(())
}

fn solve_pde(cli: &Cli, args: &SolvePdeArgs) -> Result<(), Failure> {
    let mut problems = Vec::new();
    if args.mesh < 16 {
        problems.push(format!("mesh ({}) must be at least 16", args.mesh));
    }
    if args.tol.is_nan() || args.tol <= 0.0 {
        problems.push(format!("tol ({}) must be positive", args.tol));
    }
    if args.finite_n == Some(0) {
        problems.push("finite-n must be at least 1".into());
    }
    check(problems)?;

    let domain = Domain::new(args.side).map_err(from_core)?;
    let opts = ContinuumOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        ..Default::default()
    };
    let mut manifest =
        RunManifest::start("solve-pde", serde_json::to_value(args).unwrap(), Vec::new());
    let mf =
        solve_continuum(&domain, args.beta, args.mesh, args.finite_n, &opts).map_err(from_core)?;
    let written = mf
        .write_dir(&cli.out_dir)
        .context("writing fields")
        .map_err(from_io)?;
    for path in &written {
        manifest.record(path).map_err(from_io)?;
        println!("wrote {}", path.display());
    }
    println!(
        "converged in {} iterations (residual {:.3e}, d {:.6e})",
        mf.iterations, mf.residual, mf.d
    );
    manifest.finish(&cli.out_dir).map_err(from_io)?;
    Ok(())
}

fn sinh_poisson(cli: &Cli, args: &SinhPoissonArgs) -> Result<(), Failure> {
    let mut problems = Vec::new();
    if args.mesh < 16 {
        problems.push(format!("mesh ({}) must be at least 16", args.mesh));
    }
    if args.tol.is_nan() || args.tol <= 0.0 {
        problems.push(format!("tol ({}) must be positive", args.tol));
    }
    check(problems)?;

    let domain = Domain::new(args.side).map_err(from_core)?;
    let opts = ContinuumOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        ..Default::default()
    };
    let mut manifest = RunManifest::start(
        "sinh-poisson",
        serde_json::to_value(args).unwrap(),
        Vec::new(),
    );
    let field = solve_sinh_poisson(&domain, args.beta, args.mesh, &opts).map_err(from_core)?;
    let written = field
        .write_dir(&cli.out_dir)
        .context("writing fields")
        .map_err(from_io)?;
    for path in &written {
        manifest.record(path).map_err(from_io)?;
        println!("wrote {}", path.display());
    }
    let (p, q, rms) = field.sinh_fit();
    println!(
        "converged in {} iterations (residual {:.3e}, fit p {:.4e} q {:.4e} rms {:.3e})",
        field.iterations, field.residual, p, q, rms
    );
    manifest.finish(&cli.out_dir).map_err(from_io)?;
    Ok(())
}

fn converge(cli: &Cli, args: &ConvergeArgs) -> Result<(), Failure> {
    let n_list = parse_n_list(&args.n_list)?;
    if args.mesh < 16 {
        return Err(validation(anyhow!(
            "mesh ({}) must be at least 16",
            args.mesh
        )));
    }
    let domain = Domain::new(args.side).map_err(from_core)?;
    let mut manifest =
        RunManifest::start("converge", serde_json::to_value(args).unwrap(), Vec::new());
    let fp_opts = FixedPointOptions {
        beta_min: cli.beta_min,
        ..Default::default()
    };
    let rows = finite_vs_continuum(
        &domain,
        &n_list,
        args.beta,
        |n| n as usize,
        args.mesh,
        &fp_opts,
        &ContinuumOptions::default(),
    )
    .map_err(from_core)?;
    let mut csv = String::from("n,m,l1_distance\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.n, r.m, r.l1_distance));
    }
    let path = resolve(&cli.out_dir, &args.out);
    write_atomic(&path, csv.as_bytes())
        .context("writing table")
        .map_err(from_io)?;
    manifest.record(&path).map_err(from_io)?;
    let monotone = rows
        .windows(2)
        .all(|w| w[1].l1_distance <= w[0].l1_distance);
    println!("wrote {} (monotone decrease: {monotone})", path.display());
    manifest.finish(&cli.out_dir).map_err(from_io)?;
    Ok(())
}

fn decay(cli: &Cli, args: &DecayArgs) -> Result<(), Failure> {
    let n_list = parse_n_list(&args.n_list)?;
    let domain = Domain::new(args.side).map_err(from_core)?;
    let mut manifest = RunManifest::start("decay", serde_json::to_value(args).unwrap(), Vec::new());
    let fp_opts = FixedPointOptions {
        beta_min: cli.beta_min,
        ..Default::default()
    };
    let rows = self_energy_decay_study(&domain, &n_list, args.beta, |n| n as usize, &fp_opts)
        .map_err(from_core)?;
    let mut csv = String::from("n,m,max_abs_e1,bound,per_box_ok\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.n, r.m, r.max_abs_e1, r.bound, r.per_box_ok
        ));
    }
    let path = resolve(&cli.out_dir, &args.out);
    write_atomic(&path, csv.as_bytes())
        .context("writing table")
        .map_err(from_io)?;
    manifest.record(&path).map_err(from_io)?;
    let monotone = rows.windows(2).all(|w| w[1].max_abs_e1 < w[0].max_abs_e1);
    let bounded = rows.iter().all(|r| r.per_box_ok);
    println!(
        "wrote {} (monotone decrease: {monotone}, bound satisfied: {bounded})",
        path.display()
    );
    manifest.finish(&cli.out_dir).map_err(from_io)?;
    Ok(())
}
