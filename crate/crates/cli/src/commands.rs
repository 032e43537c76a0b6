//! Subcommand implementations. Each writes its tables, a copy of the
//! resolved configuration and `manifest.json` into the output directory.

use mfpc_core::checks::run_checks;
use mfpc_core::dynamics::{transient_moments, ChannelStats, Ensemble, InitialChannel, Stepper};
use mfpc_core::hjb::{extract_policy, off_probability, solve_value};
use mfpc_core::kplayer::{convergence_report, simulate, ConvergenceConfig, InitialPopulation, SimConfig};
use mfpc_core::mfg::{consistency_check, default_initial_density, solve_fpk, solve_mfg, MfgSolution};
use mfpc_core::static_game::{static_ne, StaticProfile};
use mfpc_core::{ConstantPolicy, FeedbackPolicy, GameParams, GenericState, Grid, GridField, InterferencePath};

use crate::output::{num, OutputDir};
use crate::{CliError, Command, RunConfig};

pub fn execute(command: Command, cfg: &RunConfig) -> Result<(), CliError> {
    if command == Command::ShowConfig {
        print!("{}", cfg.to_flat_toml());
        return Ok(());
    }
    let params = cfg.game_params()?;
    let mut out = OutputDir::create(&cfg.output.dir)?;
    out.text("config.toml", &cfg.to_flat_toml())?;
    let outcome = match command {
        Command::StaticNe => static_ne_cmd(cfg, &params, &mut out),
        Command::SimulateChannel => simulate_channel(cfg, &params, &mut out),
        Command::SolveSingle => solve_single(cfg, &params, &mut out),
        Command::OffProbability => off_probability_cmd(cfg, &params, &mut out),
        Command::SimulateK => simulate_k(cfg, &params, &mut out),
        Command::SolveMfg => solve_mfg_cmd(cfg, &params, &mut out),
        Command::Check => check(cfg, &params, &mut out),
        Command::ShowConfig => unreachable!(),
    };
    // Partial results (an unconverged MFG run, failed checks) still get a manifest.
    if matches!(
        outcome,
        Ok(()) | Err(CliError::NotConverged { .. } | CliError::ChecksFailed { .. })
    ) {
        let path = out.finish(command.name(), cfg)?;
        println!("wrote {}", path.display());
    }
    outcome
}

fn snapshot_slices(grid: &Grid, every: usize) -> Vec<usize> {
    let last = grid.slices() - 1;
    let mut slices: Vec<usize> = (0..=last).step_by(every.max(1)).collect();
    if slices.last() != Some(&last) {
        slices.push(last);
    }
    slices
}

/// Writes one row per node of the selected slices; `fields` are named
/// columns appended after `t, E, h_x, h_y`.
fn write_fields(
    out: &mut OutputDir,
    name: &str,
    grid: &Grid,
    slices: &[usize],
    fields: &[(&str, &GridField)],
) -> Result<(), CliError> {
    let mut header = vec!["t", "E", "h_x", "h_y"];
    header.extend(fields.iter().map(|f| f.0));
    let mut table = out.table(name, &header)?;
    for &n in slices {
        for k in 0..grid.nodes() {
            let (ie, ix, iy) = grid.unindex(k);
            let mut row = vec![
                num(grid.times[n]),
                num(grid.energy[ie]),
                num(grid.x[ix]),
                num(grid.y[iy]),
            ];
            row.extend(fields.iter().map(|f| num(f.1.slices[n][k])));
            table.row(&row)?;
        }
    }
    table.finish()
}

fn static_ne_cmd(cfg: &RunConfig, params: &GameParams, out: &mut OutputDir) -> Result<(), CliError> {
    let gains = &cfg.static_game.gains;
    if gains.is_empty() {
        return Err(CliError::Config("static.gains: at least one gain required".into()));
    }
    if let Some(g) = gains.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(CliError::Config(format!(
            "static.gains: gains must be positive, got {g}"
        )));
    }
    let profile = params.efficiency.profile()?;
    let ne = static_ne(gains, params.sigma2, &profile, Some(params.p_max))?;
    let sp = StaticProfile::new(ne.powers.clone(), gains.clone(), params.sigma2, params.rate)?;
    let mut table = out.table("static_ne.csv", &["player", "gain", "power", "sinr", "utility"])?;
    for (i, (g, p)) in gains.iter().zip(&ne.powers).enumerate() {
        table.row([
            i.to_string(),
            num(*g),
            num(*p),
            num(sp.sinr(i)?),
            num(sp.utility(i, &params.efficiency)?),
        ])?;
    }
    table.finish()?;
    println!("beta* = {:.12e}, K = {}", ne.beta_star, gains.len());
    if ne.exceeds_cap {
        println!("warning: some equilibrium powers exceed game.p_max = {}", params.p_max);
    }
    Ok(())
}

fn simulate_channel(cfg: &RunConfig, params: &GameParams, out: &mut OutputDir) -> Result<(), CliError> {
    cfg.check_channel()?;
    let c = &cfg.channel;
    let ens = Ensemble {
        paths: c.paths,
        dt: c.dt,
        steps: c.steps,
        power: 0.0,
        energy: params.initial_energy,
        initial: InitialChannel::Fixed(c.h0),
        stepper: if c.stepper == "exact" {
            Stepper::Exact
        } else {
            Stepper::EulerMaruyama
        },
    };
    let rows = ens.record(&params.ou, cfg.sim.seed, c.record_every);
    let mut stats = out.table(
        "channel_stats.csv",
        &[
            "t",
            "mean_x",
            "mean_y",
            "var_x",
            "var_y",
            "exact_mean_x",
            "exact_mean_y",
            "exact_var_x",
            "exact_var_y",
        ],
    )?;
    let mut paths = out.table("channel_paths.csv", &["t", "path", "h_x", "h_y"])?;
    let mut worst_z: f64 = 0.0;
    for chunk in rows.chunks(c.paths) {
        let t = chunk[0].0;
        let states: Vec<GenericState> = chunk.iter().map(|r| r.2).collect();
        let s = ChannelStats::from_states(&states);
        let exact = transient_moments(c.h0, &params.ou, t);
        let var = exact.variance();
        stats.row([
            num(t),
            num(s.mean[0]),
            num(s.mean[1]),
            num(s.variance[0]),
            num(s.variance[1]),
            num(exact.mean[0]),
            num(exact.mean[1]),
            num(var[0]),
            num(var[1]),
        ])?;
        for comp in 0..2 {
            if s.stderr[comp] > 0.0 {
                worst_z = worst_z.max((s.mean[comp] - exact.mean[comp]).abs() / s.stderr[comp]);
            }
        }
        for r in chunk.iter().filter(|r| r.1 < c.export_paths) {
            paths.row([num(r.0), r.1.to_string(), num(r.2.h[0]), num(r.2.h[1])])?;
        }
    }
    stats.finish()?;
    paths.finish()?;
    println!("{} paths, max |mean z-score| = {worst_z:.3}", c.paths);
    Ok(())
}

fn solve_single(cfg: &RunConfig, params: &GameParams, out: &mut OutputDir) -> Result<(), CliError> {
    let i = cfg.solver.interference;
    if !(i >= 0.0 && i.is_finite()) {
        return Err(CliError::Config(format!("solver.interference: must be >= 0, got {i}")));
    }
    let grid = Grid::new(cfg.grid_spec(params)?, params)?;
    let path = InterferencePath::Constant(i);
    let value = solve_value(params, &path, &grid)?;
    let policy = extract_policy(&value, params, &path)?;
    let slices = snapshot_slices(&grid, cfg.output.snapshot_every);
    write_fields(
        out,
        "value_policy.csv",
        &grid,
        &slices,
        &[("v", &value.values), ("p", &policy.power)],
    )?;
    let v0 = value
        .values
        .interpolate(&grid, params.t0, params.initial_energy, params.ou.mu);
    println!(
        "v(t0, E0, mu) = {v0:.12e} on {} nodes x {} slices",
        grid.nodes(),
        grid.slices()
    );
    Ok(())
}

fn off_probability_cmd(cfg: &RunConfig, params: &GameParams, out: &mut OutputDir) -> Result<(), CliError> {
    cfg.check_off_probability()?;
    let o = &cfg.off_probability;
    let sweep: Vec<f64> = (0..o.points)
        .map(|i| o.v_e_max * i as f64 / (o.points - 1) as f64)
        .collect();
    let rows = off_probability(&sweep, params, o.samples, cfg.sim.seed)?;
    let mut table = out.table("off_probability.csv", &["v_E", "lower_bound", "mc_estimate", "stderr"])?;
    for r in &rows {
        table.row([num(r.v_e), num(r.lower_bound), num(r.mc_estimate), num(r.stderr)])?;
    }
    table.finish()?;
    println!("{} shadow prices, {} samples each", rows.len(), o.samples);
    Ok(())
}

fn solve_equilibrium(cfg: &RunConfig, params: &GameParams, grid: &Grid) -> Result<(MfgSolution, Vec<f64>), CliError> {
    let options = cfg.mfg_options()?;
    let m0 = default_initial_density(grid, params)?;
    let sol = solve_mfg(params, grid, &m0, &options)?;
    Ok((sol, m0))
}

fn simulate_k(cfg: &RunConfig, params: &GameParams, out: &mut OutputDir) -> Result<(), CliError> {
    cfg.check_sim()?;
    let s = &cfg.sim;
    let grid = Grid::new(cfg.grid_spec(params)?, params)?;
    let equilibrium;
    let constant = ConstantPolicy(s.p0);
    let (policy, i_hat): (&dyn FeedbackPolicy, InterferencePath) = if s.policy == "mfg" {
        equilibrium = solve_equilibrium(cfg, params, &grid)?.0;
        if !equilibrium.converged {
            return Err(CliError::NotConverged {
                iterations: equilibrium.iterations,
                residual: equilibrium.residual,
                tol: cfg.solver.tol,
            });
        }
        (&equilibrium.policy, equilibrium.interference_path())
    } else {
        let m0 = default_initial_density(&grid, params)?;
        let fwd = solve_fpk(&constant, &m0, &grid, &InterferencePath::Constant(0.0))?;
        (
            &constant,
            InterferencePath::sampled(&grid.times, fwd.interference(&grid)),
        )
    };
    let initial = if s.initial == "common" {
        InitialPopulation::Common(GenericState::new(params.initial_energy, params.ou.mu))
    } else {
        InitialPopulation::Stationary {
            energy: params.initial_energy,
        }
    };
    let sim = SimConfig {
        players: s.players,
        dt: s.dt,
        initial,
        record_every: s.record_every.max(1),
    };
    let traj = simulate(&sim, policy, params, s.seed)?;
    let mut table = out.table(
        "trajectory.csv",
        &["t", "player", "E", "h_x", "h_y", "p", "I", "u_running"],
    )?;
    for snap in &traj.snapshots {
        for i in 0..snap.states.len() {
            let st = &snap.states[i];
            table.row([
                num(snap.t),
                i.to_string(),
                num(st.energy),
                num(st.h[0]),
                num(st.h[1]),
                num(snap.powers[i]),
                num(snap.interference[i]),
                num(snap.running[i]),
            ])?;
        }
    }
    table.finish()?;
    let mut table = out.table("utilities.csv", &["player", "utility"])?;
    for (i, u) in traj.utilities.iter().enumerate() {
        table.row([i.to_string(), num(*u)])?;
    }
    table.finish()?;
    let mean_u = traj.utilities.iter().sum::<f64>() / traj.utilities.len() as f64;
    println!("{} players, mean utility {mean_u:.6e}", s.players);

    if s.k_list.is_empty() {
        return Ok(());
    }
    let experiment = ConvergenceConfig {
        k_list: s.k_list.clone(),
        replications: s.replications,
        probe_times: s.probe_times.clone(),
        dt: s.dt,
        initial,
    };
    let report = convergence_report(policy, params, &i_hat, &experiment, s.seed)?;
    let mut table = out.table("convergence.csv", &["K", "probe_t", "mean_dev", "std_dev", "samples"])?;
    for r in &report.rows {
        table.row([
            r.k.to_string(),
            num(r.probe_t),
            num(r.mean_dev),
            num(r.std_dev),
            r.samples.to_string(),
        ])?;
    }
    table.finish()?;
    let mut table = out.table(
        "convergence_pooled.csv",
        &["K", "mean_dev", "std_dev", "samples", "exchangeable"],
    )?;
    for (r, ex) in report.pooled.iter().zip(&report.exchangeable) {
        table.row([
            r.k.to_string(),
            num(r.mean_dev),
            num(r.std_dev),
            r.samples.to_string(),
            ex.to_string(),
        ])?;
        println!("K = {:>5}: mean |I - I_hat| = {:.4e}", r.k, r.mean_dev);
    }
    table.finish()
}

fn solve_mfg_cmd(cfg: &RunConfig, params: &GameParams, out: &mut OutputDir) -> Result<(), CliError> {
    let grid = Grid::new(cfg.grid_spec(params)?, params)?;
    let (sol, m0) = solve_equilibrium(cfg, params, &grid)?;
    let mut table = out.table("i_hat.csv", &["t", "I_hat"])?;
    for (t, i) in grid.times.iter().zip(&sol.i_hat) {
        table.row([num(*t), num(*i)])?;
    }
    table.finish()?;
    let mut table = out.table("mfg_convergence.csv", &["iter", "residual"])?;
    for (k, r) in sol.history.iter().enumerate() {
        table.row([(k + 1).to_string(), num(*r)])?;
    }
    table.finish()?;
    let slices = snapshot_slices(&grid, cfg.output.snapshot_every);
    write_fields(
        out,
        "mfg_fields.csv",
        &grid,
        &slices,
        &[("v", &sol.value.values), ("p", &sol.powers), ("m", &sol.density.values)],
    )?;
    println!(
        "{} after {} iterations, residual {:.3e}",
        if sol.converged { "converged" } else { "not converged" },
        sol.iterations,
        sol.residual
    );
    if !sol.converged {
        return Err(CliError::NotConverged {
            iterations: sol.iterations,
            residual: sol.residual,
            tol: cfg.solver.tol,
        });
    }
    let rep = consistency_check(&sol, params, &m0)?;
    println!(
        "consistency: sup |I - I_hat| = {:.3e}, hjb {:.1e}, fpk {:.1e}, mass drift {:.1e}",
        rep.sup_deviation, rep.hjb_residual, rep.fpk_residual, rep.mass_drift
    );
    Ok(())
}

fn check(cfg: &RunConfig, params: &GameParams, out: &mut OutputDir) -> Result<(), CliError> {
    let outcomes = run_checks(params, cfg.grid_spec(params)?, cfg.sim.seed)?;
    let mut table = out.table("check.csv", &["name", "passed", "detail"])?;
    for o in &outcomes {
        table.row([o.name, if o.passed { "true" } else { "false" }, o.detail.as_str()])?;
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    table.finish()?;
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed {
            failed,
            total: outcomes.len(),
        });
    }
    Ok(())
}
