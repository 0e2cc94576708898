use std::path::PathBuf;

use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use stopflow::analytic::vanishing_sweep;
use stopflow::learner::{
    learn_initial_mass, spi_run, zero_state_oracle, ExactValues, InitMassConfig, LearnConfig, MonteCarloValues,
};
use stopflow::policy_iteration::{init_boundary, run, InitKind, IterationReport, PiConfig};
use stopflow::simulator::{estimate_value, simulate_policy, Policy};
use stopflow::{Boundary, ClosedFormSolution, Grid, Interpolation, Model, ModelParams, SimConfig};

use crate::error::CliError;
use crate::report::{line_chart, Cell, Csv, Outputs, Series};

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
pub enum Command {
    /// Closed-form boundary, inverse, value, HJB residuals and the vanishing-entropy table.
    Analytic(AnalyticArgs),
    /// Model-based policy iteration.
    Pi(PiArgs),
    /// Sample-based policy iteration from simulated values.
    Spi(SpiArgs),
    /// Monte-Carlo value of a reflection boundary.
    Simulate(SimulateArgs),
    /// Zeroth-order search for the starting mass level g(0).
    LearnY0(LearnY0Args),
    /// Free-boundary gaps b_lambda(y) - b* over a temperature sequence.
    Vanish(VanishArgs),
    /// Desk-scale learning experiment for both initial boundaries.
    Reproduce(ReproduceArgs),
    /// Re-run the command recorded in a manifest.
    #[serde(skip)]
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analytic(_) => "analytic",
            Command::Pi(_) => "pi",
            Command::Spi(_) => "spi",
            Command::Simulate(_) => "simulate",
            Command::LearnY0(_) => "learn-y0",
            Command::Vanish(_) => "vanish",
            Command::Reproduce(_) => "reproduce",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize, Deserialize)]
pub enum InitArg {
    Linear,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize, Deserialize)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize, Deserialize)]
pub enum InterpArg {
    Linear,
    LogPower,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AnalyticArgs {
    #[arg(long, default_value_t = 10.0)]
    pub x_max: f64,
    #[arg(long, default_value_t = 200)]
    pub nx: usize,
    #[arg(long, default_value_t = 100)]
    pub ny: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PiArgs {
    #[arg(long, value_enum, default_value_t = InitArg::Exponential)]
    pub init: InitArg,
    /// Exponent of the exponential initial boundary, in (0, theta].
    #[arg(long, default_value_t = 0.4)]
    pub zeta: f64,
    /// Number of x-intervals on [0, x-max].
    #[arg(long, default_value_t = 250)]
    pub nx: usize,
    #[arg(long, default_value_t = 5.0)]
    pub x_max: f64,
    #[arg(long, default_value_t = 0.02)]
    pub dy: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SpiArgs {
    #[arg(long, default_value_t = 0.02)]
    pub grid_dx: f64,
    #[arg(long, default_value_t = 0.02)]
    pub grid_dy: f64,
    #[arg(long, default_value_t = 5.0)]
    pub x_max: f64,
    #[arg(long, default_value_t = 20)]
    pub paths_per_node: usize,
    #[arg(long, default_value_t = 10)]
    pub outer_iters: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Exponential)]
    pub init: InitArg,
    #[arg(long, default_value_t = 0.4)]
    pub zeta: f64,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub crn: Switch,
    #[arg(long, default_value_t = 1e-2)]
    pub dt: f64,
    #[arg(long, default_value_t = 20.0)]
    pub horizon: f64,
    /// Keep a node unless its cross-difference is below -gate * stderr.
    #[arg(long, default_value_t = 3.0)]
    pub noise_gate: f64,
    #[arg(long)]
    pub antithetic: bool,
    /// Use exact policy values instead of simulation.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[group(id = "policy", required = true, args = ["boundary", "analytic"])]
pub struct SimulateArgs {
    /// Boundary table with header `x,y`.
    #[arg(long)]
    pub boundary: Option<PathBuf>,
    /// Use the closed-form boundary.
    #[arg(long)]
    pub analytic: bool,
    /// Interpolation between rows of --boundary.
    #[arg(long, value_enum, default_value_t = InterpArg::LogPower)]
    pub interp: InterpArg,
    #[arg(long, default_value_t = 2.0)]
    pub x0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub y0: f64,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 20.0)]
    pub horizon: f64,
    #[arg(long)]
    pub antithetic: bool,
    /// Number of trajectories to write to paths.csv.
    #[arg(long, default_value_t = 0)]
    pub dump_paths: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LearnY0Args {
    #[arg(long, default_value_t = 0.5)]
    pub y_init: f64,
    #[arg(long, default_value_t = 0.05)]
    pub eta0: f64,
    #[arg(long, default_value_t = 0.01)]
    pub c0: f64,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub dt: f64,
    #[arg(long, default_value_t = 20.0)]
    pub horizon: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VanishArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.1,0.01,0.001")]
    pub lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,1")]
    pub ys: Vec<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReproduceArgs {
    #[arg(long, default_value_t = 20)]
    pub paths_per_node: usize,
    #[arg(long, default_value_t = 10)]
    pub exponential_iters: usize,
    #[arg(long, default_value_t = 20)]
    pub linear_iters: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub dt: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

pub struct Ctx {
    pub params: ModelParams<f64>,
    pub seed: u64,
}

impl Ctx {
    fn model(&self) -> Result<Model<f64>, CliError> {
        Ok(self.params.validate()?)
    }
}

/// Runs one command, writing its artifacts into `out`; returns a short
/// human-readable summary.
pub fn execute(cmd: &Command, ctx: &Ctx, out: &mut Outputs) -> Result<String, CliError> {
    match cmd {
        Command::Analytic(a) => analytic(a, ctx, out),
        Command::Pi(a) => pi(a, ctx, out),
        Command::Spi(a) => spi(a, ctx, out),
        Command::Simulate(a) => simulate(a, ctx, out),
        Command::LearnY0(a) => learn_y0(a, ctx, out),
        Command::Vanish(a) => vanish(a, ctx, out),
        Command::Reproduce(a) => reproduce(a, ctx, out),
        Command::Replay(_) => Err(CliError::Validation("replay cannot be nested".into())),
    }
}

fn positive(name: &str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        return Err(CliError::Validation(format!("--{name} must be positive")));
    }
    Ok(())
}

fn analytic(a: &AnalyticArgs, ctx: &Ctx, out: &mut Outputs) -> Result<String, CliError> {
    positive("nx", a.nx)?;
    positive("ny", a.ny)?;
    if !(a.x_max > 0.05) {
        return Err(CliError::Validation("--x-max must exceed 0.05".into()));
    }
    let model = ctx.model()?;
    let sol = ClosedFormSolution::new(&model)?;
    let xs: Vec<f64> = (0..=a.nx).map(|i| a.x_max * i as f64 / a.nx as f64).collect();
    let ys: Vec<f64> = (1..=a.ny).map(|j| j as f64 / a.ny as f64).collect();

    let mut t = Csv::new(&["x", "g_lambda"]);
    for &x in &xs {
        t.row(&[Cell::F(x), Cell::F(sol.g_lambda(x).map_err(|e| CliError::Validation(e.to_string()))?)]);
    }
    out.csv("boundary.csv", &t)?;

    let mut t = Csv::new(&["y", "b_lambda"]);
    for &y in &ys {
        t.row(&[Cell::F(y), Cell::F(sol.b_lambda(y)?)]);
    }
    out.csv("inverse.csv", &t)?;

    let mut t = Csv::new(&["x", "y", "value"]);
    for &x in &xs[1..] {
        for &y in &ys {
            t.row(&[Cell::F(x), Cell::F(y), Cell::F(sol.value(x, y)?)]);
        }
    }
    out.csv("value.csv", &t)?;

    let hx: Vec<f64> = (0..a.nx).map(|i| 0.05 + (a.x_max - 0.05) * i as f64 / (a.nx - 1).max(1) as f64).collect();
    let hjb = sol.verify_hjb(&hx, &ys)?;
    let mut t = Csv::new(&["x", "y", "region", "pde_residual", "u_y"]);
    for r in &hjb.rows {
        let region = if r.in_exploration { "exploration" } else { "stopping" };
        t.row(&[Cell::F(r.x), Cell::F(r.y), Cell::S(region), Cell::F(r.pde_residual), Cell::F(r.u_y)]);
    }
    out.csv("hjb_residuals.csv", &t)?;

    let table = vanishing_sweep(&model, &[1.0, 0.5, 0.1, 0.01, 0.001], &[0.1, 1.0])?;
    out.csv("vanish.csv", &vanish_csv(&table))?;

    Ok(format!(
        "b* = {}, y_lambda = {}, x_hat = {}, worst exploration PDE residual = {:e}",
        sol.b_star(),
        sol.y_lambda(),
        sol.x_hat(),
        hjb.exploration_pde.value
    ))
}

fn vanish_csv(table: &stopflow::analytic::VanishTable) -> Csv {
    let mut t = Csv::new(&["lambda", "y", "b_lambda", "gap"]);
    for r in &table.rows {
        t.row(&[Cell::F(r.lambda), Cell::F(r.y), Cell::F(r.b_lambda), Cell::F(r.gap)]);
    }
    t
}

fn vanish(a: &VanishArgs, ctx: &Ctx, out: &mut Outputs) -> Result<String, CliError> {
    if a.lambdas.iter().any(|&l| !(l > 0.0)) || a.ys.iter().any(|&y| !(y > 0.0 && y <= 1.0)) {
        return Err(CliError::Validation("lambdas must be positive and ys in (0, 1]".into()));
    }
    let table = vanishing_sweep(&ctx.model()?, &a.lambdas, &a.ys)?;
    out.csv("vanish.csv", &vanish_csv(&table))?;
    let flags: Vec<String> = table
        .flags
        .iter()
        .map(|f| format!("y = {}: expected sign {}, shrinking {}", f.y, f.sign_ok, f.shrinking))
        .collect();
    Ok(flags.join("; "))
}

fn init_kind(init: InitArg, zeta: f64) -> InitKind<f64> {
    match init {
        InitArg::Linear => InitKind::Linear,
        InitArg::Exponential => InitKind::Exponential { zeta },
    }
}

fn boundary_series(name: impl Into<String>, b: &Boundary<f64>) -> Series {
    Series::new(name, b.x_nodes().iter().copied().zip(b.y_values().iter().copied()).collect())
}

fn reference_series(sol: &ClosedFormSolution<f64>, xs: &[f64]) -> Series {
    Series::new("g_lambda", xs.iter().map(|&x| (x, sol.level(x))).collect()).dashed()
}

fn write_iterates(out: &mut Outputs, prefix: &str, rep: &IterationReport<f64>) -> Result<(), CliError> {
    for (k, b) in rep.boundaries.iter().enumerate() {
        out.write(&format!("{prefix}g_iter_{k}.csv"), &b.to_csv())?;
    }
    Ok(())
}

/// At most ~8 evenly spaced iterates plus the last one.
fn sampled_iterates(rep: &IterationReport<f64>) -> Vec<usize> {
    let n = rep.boundaries.len();
    let step = n.div_ceil(8).max(1);
    let mut ks: Vec<usize> = (0..n).step_by(step).collect();
    if ks.last() != Some(&(n - 1)) {
        ks.push(n - 1);
    }
    ks
}

fn pi(a: &PiArgs, ctx: &Ctx, out: &mut Outputs) -> Result<String, CliError> {
    positive("nx", a.nx)?;
    let model = ctx.model()?;
    let grid = Grid::uniform(a.x_max, a.x_max / a.nx as f64, a.dy)?;
    let cfg = PiConfig {
        grid,
        max_iters: a.max_iters,
        boundary_tol: a.tol,
        root_tol: a.tol,
        init: init_kind(a.init, a.zeta),
    };
    let rep = run(&model, &cfg)?;
    write_iterates(out, "", &rep)?;
    let mut t = Csv::new(&["iter", "sup_err", "l1_err", "min_improvement"]);
    for k in 0..rep.boundaries.len() {
        t.row(&[
            Cell::U(k as u64),
            Cell::F(rep.sup_err[k]),
            Cell::F(rep.l1_err[k]),
            Cell::F(rep.min_value_improvement[k]),
        ]);
    }
    out.csv("report.csv", &t)?;
    let sol = ClosedFormSolution::new(&model)?;
    let mut series: Vec<Series> = sampled_iterates(&rep)
        .into_iter()
        .map(|k| boundary_series(format!("iteration {k}"), &rep.boundaries[k]))
        .collect();
    series.push(reference_series(&sol, &cfg.grid.x_nodes));
    out.write("boundary_evolution.svg", &line_chart("Policy iteration", "x", "g(x)", &series, false))?;
    let k = rep.boundaries.len() - 1;
    Ok(format!(
        "{k} iterations, converged = {}, sup error {:e}, L1 error {:e}",
        rep.converged, rep.sup_err[k], rep.l1_err[k]
    ))
}

fn learn_config(a: &SpiArgs, seed: u64) -> Result<LearnConfig, CliError> {
    Ok(LearnConfig {
        grid: Grid::uniform(a.x_max, a.grid_dx, a.grid_dy)?,
        n_paths_per_node: a.paths_per_node,
        outer_iters: a.outer_iters,
        sim: SimConfig {
            dt: a.dt,
            horizon: a.horizon,
            n_paths: a.paths_per_node,
            seed,
            antithetic: a.antithetic,
        },
        crn: a.crn == Switch::On,
        noise_gate: a.noise_gate,
    })
}

fn run_spi(model: &Model<f64>, a: &SpiArgs, seed: u64) -> Result<(IterationReport<f64>, ClosedFormSolution<f64>), CliError> {
    let cfg = learn_config(a, seed)?;
    let sol = ClosedFormSolution::new(model)?;
    let g0 = init_boundary(model, &cfg.grid, init_kind(a.init, a.zeta))?;
    let reference = |x: f64| sol.level(x);
    let rep = if a.oracle {
        spi_run(&ExactValues { model: *model }, &g0, &cfg, Some(&reference))?
    } else {
        spi_run(&MonteCarloValues::new(*model, &cfg), &g0, &cfg, Some(&reference))?
    };
    Ok((rep, sol))
}

fn trace_csv(rep: &IterationReport<f64>) -> Csv {
    let mut t = Csv::new(&["iter", "l1", "sup"]);
    for k in 0..rep.l1_err.len() {
        t.row(&[Cell::U(k as u64), Cell::F(rep.l1_err[k]), Cell::F(rep.sup_err[k])]);
    }
    t
}

fn l1_series(name: &str, rep: &IterationReport<f64>) -> Series {
    Series::new(name, rep.l1_err.iter().enumerate().map(|(k, &v)| (k as f64, v)).collect())
}

fn spi(a: &SpiArgs, ctx: &Ctx, out: &mut Outputs) -> Result<String, CliError> {
    let model = ctx.model()?;
    let (rep, _) = run_spi(&model, a, ctx.seed)?;
    write_iterates(out, "", &rep)?;
    out.csv("l1_trace.csv", &trace_csv(&rep))?;
    let chart = line_chart("Learned boundary: L1 distance to g_lambda", "outer iteration", "L1 error", &[l1_series("L1", &rep)], true);
    out.write("convergence.svg", &chart)?;
    let k = rep.l1_err.len() - 1;
    Ok(format!("L1 error {} -> {} after {k} outer iterations", rep.l1_err[0], rep.l1_err[k]))
}

fn simulate(a: &SimulateArgs, ctx: &Ctx, out: &mut Outputs) -> Result<String, CliError> {
    let model = ctx.model()?;
    let policy: Box<dyn Policy> = match (&a.boundary, a.analytic) {
        (Some(_), true) => return Err(CliError::Validation("use either --boundary or --analytic".into())),
        (Some(path), false) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let b = Boundary::from_csv(&text)?;
            Box::new(match a.interp {
                InterpArg::Linear => b,
                InterpArg::LogPower => b.with_interpolation(Interpolation::LogPower { p: model.theta() }),
            })
        }
        (None, _) => Box::new(ClosedFormSolution::new(&model)?),
    };
    let cfg = SimConfig {
        dt: a.dt,
        horizon: a.horizon,
        n_paths: a.paths,
        seed: ctx.seed,
        antithetic: a.antithetic,
    };
    let e = estimate_value(&model, policy.as_ref(), a.x0, a.y0, &cfg)?;
    let mut t = Csv::new(&["x0", "y0", "mean", "stderr", "n_paths"]);
    t.row(&[Cell::F(a.x0), Cell::F(a.y0), Cell::F(e.mean), Cell::F(e.stderr), Cell::U(e.n_paths as u64)]);
    out.csv("estimate.csv", &t)?;
    if a.dump_paths > 0 {
        let mut t = Csv::new(&["path_id", "t", "x", "y", "xi"]);
        for p in 0..a.dump_paths.min(a.paths) as u64 {
            let tr = simulate_policy(&model, policy.as_ref(), a.x0, a.y0, &cfg, p)?;
            for k in 0..tr.times.len() {
                t.row(&[Cell::U(p), Cell::F(tr.times[k]), Cell::F(tr.x_path[k]), Cell::F(tr.y_path[k]), Cell::F(tr.xi_path[k])]);
            }
        }
        out.csv("paths.csv", &t)?;
    }
    Ok(format!("mean {} +- {} over {} paths", e.mean, e.stderr, e.n_paths))
}

fn learn_y0(a: &LearnY0Args, ctx: &Ctx, out: &mut Outputs) -> Result<String, CliError> {
    let model = ctx.model()?;
    let sim = SimConfig {
        dt: a.dt,
        horizon: a.horizon,
        n_paths: 1,
        seed: ctx.seed,
        antithetic: false,
    };
    sim.validate()?;
    let cfg = InitMassConfig {
        eta0: a.eta0,
        c0: a.c0,
        max_iters: a.iters,
        grad_tol: a.grad_tol,
    };
    let trace = learn_initial_mass(zero_state_oracle(model, sim), a.y_init, &cfg)?;
    let mut t = Csv::new(&["iter", "y", "grad_estimate"]);
    for (k, &y) in trace.iterates.iter().enumerate() {
        let g = trace.gradients.get(k).copied().unwrap_or(f64::NAN);
        t.row(&[Cell::U(k as u64), Cell::F(y), Cell::F(g)]);
    }
    out.csv("y0_trace.csv", &t)?;
    Ok(format!("y0 estimate {} after {} steps", trace.estimate(), trace.iterates.len() - 1))
}

fn reproduce(a: &ReproduceArgs, ctx: &Ctx, out: &mut Outputs) -> Result<String, CliError> {
    let model = ctx.model()?;
    let mut summary = Vec::new();
    let mut traces = Vec::new();
    let mut finals = Vec::new();
    let mut sol = None;
    for (name, init, iters) in [("exponential", InitArg::Exponential, a.exponential_iters), ("linear", InitArg::Linear, a.linear_iters)] {
        let args = SpiArgs {
            grid_dx: 0.02,
            grid_dy: 0.02,
            x_max: 5.0,
            paths_per_node: a.paths_per_node,
            outer_iters: iters,
            init,
            zeta: 0.4,
            crn: Switch::On,
            dt: a.dt,
            horizon: 20.0,
            noise_gate: 3.0,
            antithetic: false,
            oracle: false,
        };
        let (rep, s) = run_spi(&model, &args, ctx.seed)?;
        write_iterates(out, &format!("{name}_"), &rep)?;
        out.csv(&format!("{name}_l1_trace.csv"), &trace_csv(&rep))?;
        summary.push(format!("{name}: L1 {} -> {}", rep.l1_err[0], rep.l1_err.last().unwrap()));
        traces.push(l1_series(&format!("{name} init"), &rep));
        finals.push(boundary_series(format!("{name} init, final"), rep.boundaries.last().unwrap()));
        finals.push(boundary_series(format!("{name} init, start"), &rep.boundaries[0]).dashed());
        sol = Some(s);
    }
    let sol = sol.expect("two runs");
    let xs = Grid::reference().x_nodes;
    let mut t = Csv::new(&["x", "g_lambda"]);
    for &x in &xs {
        t.row(&[Cell::F(x), Cell::F(sol.level(x))]);
    }
    out.csv("g_lambda.csv", &t)?;
    finals.push(reference_series(&sol, &xs));
    out.write("boundary_overlay.svg", &line_chart("Learned and optimal boundaries", "x", "y", &finals, false))?;
    out.write("l1_trace.svg", &line_chart("Convergence to the optimal boundary in L1", "outer iteration", "L1 error", &traces, true))?;
    Ok(summary.join("; "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iterate_sampling_keeps_ends() {
        let b = Boundary::new(vec![0.0, 1.0], vec![0.5, 1.0]).unwrap();
        let rep = IterationReport {
            boundaries: vec![b; 20],
            sup_err: vec![],
            l1_err: vec![],
            min_value_improvement: vec![],
            converged: false,
        };
        let ks = sampled_iterates(&rep);
        assert_eq!(ks.first(), Some(&0));
        assert_eq!(ks.last(), Some(&19));
        assert!(ks.len() <= 9);
    }
}
