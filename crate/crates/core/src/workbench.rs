//! Runs scenario experiments and writes their CSV outputs.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::families::{verify_axioms, AxiomReport, EvolutionKernel};
use crate::inclusion::{impulsive_solve, sweep_regularization_with, MildSolution};
use crate::oracle::{
    closed_form_kernel, dense_integrate_from, dense_sine_kernel, quadrature_gramian_reference,
    DenseState,
};
use crate::scenario::Scenario;
use crate::space::{SpectralVector, C64};
use crate::synthesis::{
    assemble_gramian, h0_diagnostic, linear_terminal_error, residual_target, Gramian,
    RegularizationParam,
};

/// Limits used by `verify` and `oracle`.
pub const DIAGONAL_DERIVATIVE_LIMIT: f64 = 1e-5;
pub const SECOND_ORDER_LIMIT: f64 = 1e-5;
pub const GRONWALL_SLACK_FLOOR: f64 = -1e-9;
pub const ORACLE_LIMIT: f64 = 1e-6;
pub const CLOSED_FORM_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Verify,
    Gramian,
    Solve,
    Sweep,
    Oracle,
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verify" => Ok(Command::Verify),
            "gramian" => Ok(Command::Gramian),
            "solve" => Ok(Command::Solve),
            "sweep" => Ok(Command::Sweep),
            "oracle" => Ok(Command::Oracle),
            other => Err(Error::invalid(format!("unknown command \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    NotConverged,
    CheckFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    fn below(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            passed: value < limit,
        }
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            passed: value >= limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GramianSummary {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub hermitian_defect: f64,
    pub nhat: f64,
    pub ntilde: f64,
    pub lipschitz: f64,
    /// `||a R(a,G) p||` for the free terminal residual at the scenario's `a`.
    pub predicted_terminal_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub a: f64,
    pub terminal_error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub contraction_constant: f64,
    pub observed_ratio: f64,
}

impl SolveReport {
    fn from_solution(sol: &MildSolution, floor: f64) -> Self {
        Self {
            a: sol.a,
            terminal_error: sol.terminal_error,
            iterations: sol.iterations,
            converged: sol.converged(),
            contraction_constant: sol.contraction_constant,
            observed_ratio: sol.observed_ratio(floor),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    /// Largest per-mode relative gap between kernel and direct integration.
    pub kernel_gap: f64,
    /// Gap to the closed form, undamped scenarios only.
    pub closed_form_gap: Option<f64>,
    /// Largest relative diagonal gap to the analytic Gramian, undamped `B = I` only.
    pub gramian_gap: Option<f64>,
    /// `||x(T) - x_oracle(T)||` for the solved trajectory.
    pub trajectory_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub command: Command,
    pub scenario: String,
    pub digest: String,
    pub seed: u64,
    pub axioms: Option<AxiomReport>,
    pub gramian: Option<GramianSummary>,
    pub solves: Vec<SolveReport>,
    pub decay_non_decay: Option<Vec<bool>>,
    pub sweep_non_decay: Option<bool>,
    pub oracle: Option<OracleReport>,
    pub checks: Vec<Check>,
    pub outputs: Vec<String>,
    pub status: RunStatus,
}

impl RunReport {
    fn new(command: Command, scenario: &Scenario) -> Self {
        Self {
            command,
            scenario: scenario.name.clone(),
            digest: scenario.digest.clone(),
            seed: scenario.seed,
            axioms: None,
            gramian: None,
            solves: Vec::new(),
            decay_non_decay: None,
            sweep_non_decay: None,
            oracle: None,
            checks: Vec::new(),
            outputs: Vec::new(),
            status: RunStatus::Ok,
        }
    }

    fn finish(&mut self) {
        if self.solves.iter().any(|s| !s.converged) {
            self.status = RunStatus::NotConverged;
        } else if self.checks.iter().any(|c| !c.passed) {
            self.status = RunStatus::CheckFailed;
        }
    }

    /// Human-readable digest of the run.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:?} on {} (sha256 {})",
            self.command,
            self.scenario,
            &self.digest[..12]
        );
        if let Some(ax) = &self.axioms {
            let _ = writeln!(
                s,
                "  axioms: S(t,t) {:.1e}  C(t,t) {:.1e}  dtS {:.2e}  dsS {:.2e}  2nd-order {:.2e}  gronwall slack {:.2e}",
                ax.s_diagonal, ax.c_diagonal, ax.dt_at_diagonal, ax.ds_at_diagonal, ax.second_order, ax.gronwall_min_slack
            );
            let _ = writeln!(
                s,
                "  bounds: Nhat {:.4}  Ntilde {:.4}  N1 {:.4}",
                ax.nhat, ax.ntilde, ax.lipschitz
            );
        }
        if let Some(g) = &self.gramian {
            let _ = writeln!(
                s,
                "  gramian: lambda_min {:.4e}  lambda_max {:.4e}  predicted terminal error {:.4e}",
                g.lambda_min, g.lambda_max, g.predicted_terminal_error
            );
        }
        if let Some(flags) = &self.decay_non_decay {
            let _ = writeln!(s, "  decay: non-decay flags {flags:?}");
        }
        for r in &self.solves {
            let _ = writeln!(
                s,
                "  a {:.1e}: terminal error {:.4e}, {} iterations, converged {}, contraction {:.3e}, ratio {:.3e}",
                r.a, r.terminal_error, r.iterations, r.converged, r.contraction_constant, r.observed_ratio
            );
        }
        if let Some(flag) = self.sweep_non_decay {
            let _ = writeln!(s, "  sweep: non-decay {flag}");
        }
        if let Some(o) = &self.oracle {
            let _ = writeln!(
                s,
                "  oracle: kernel gap {:.3e}  trajectory gap {:.3e}",
                o.kernel_gap, o.trajectory_gap
            );
        }
        for c in &self.checks {
            let _ = writeln!(
                s,
                "  [{}] {} = {:.3e} (limit {:.1e})",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.value,
                c.limit
            );
        }
        for p in &self.outputs {
            let _ = writeln!(s, "  wrote {p}");
        }
        let _ = write!(s, "  status: {:?}", self.status);
        s
    }
}

struct Context<'a> {
    scenario: &'a Scenario,
    kernel: Arc<EvolutionKernel>,
    out_dir: &'a Path,
}

impl Context<'_> {
    fn create(&self, report: &mut RunReport, name: &str) -> Result<BufWriter<File>> {
        report.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(self.out_dir.join(name))?))
    }

    fn gramian(&self) -> Result<Arc<Gramian>> {
        Ok(Arc::new(assemble_gramian(
            &self.kernel,
            &self.scenario.input,
        )?))
    }

    fn free_residual(&self) -> Result<SpectralVector> {
        let zero = vec![SpectralVector::zeros(self.scenario.dim()); self.scenario.grid.len()];
        residual_target(
            &self.kernel,
            &self.scenario.x0,
            &self.scenario.y0,
            &self.scenario.target,
            &zero,
        )
    }

    fn solve(&self, gramian: Arc<Gramian>) -> Result<MildSolution> {
        let s = self.scenario;
        let problem = s.problem(self.kernel.clone(), gramian)?;
        impulsive_solve(&problem, &s.nonlocal_or_none(), &s.impulses, s.strategy)
    }
}

/// Runs `command` on `scenario`, writing outputs (and `report.json`) into `out_dir`.
pub fn run(command: Command, scenario: &Scenario, out_dir: impl AsRef<Path>) -> Result<RunReport> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let kernel = Arc::new(scenario.build_kernel()?);
    let ctx = Context {
        scenario,
        kernel,
        out_dir,
    };
    let mut report = RunReport::new(command, scenario);
    match command {
        Command::Verify => verify(&ctx, &mut report)?,
        Command::Gramian => gramian(&ctx, &mut report)?,
        Command::Solve => solve(&ctx, &mut report)?,
        Command::Sweep => sweep(&ctx, &mut report)?,
        Command::Oracle => oracle(&ctx, &mut report)?,
    }
    report.finish();
    report.outputs.push("report.json".into());
    let file = BufWriter::new(File::create(out_dir.join("report.json"))?);
    serde_json::to_writer_pretty(file, &report).map_err(|e| Error::Io(e.into()))?;
    Ok(report)
}

fn verify(ctx: &Context, report: &mut RunReport) -> Result<()> {
    let ax = verify_axioms(&ctx.kernel);
    let kernel_gap = kernel_oracle_gap(ctx)?;
    report.checks.extend([
        Check::below("s_diagonal", ax.s_diagonal, f64::MIN_POSITIVE),
        Check::below(
            "dt_at_diagonal",
            ax.dt_at_diagonal,
            DIAGONAL_DERIVATIVE_LIMIT,
        ),
        Check::below(
            "ds_at_diagonal",
            ax.ds_at_diagonal,
            DIAGONAL_DERIVATIVE_LIMIT,
        ),
        Check::below("second_order", ax.second_order, SECOND_ORDER_LIMIT),
        Check::at_least(
            "gronwall_min_slack",
            ax.gronwall_min_slack,
            GRONWALL_SLACK_FLOOR,
        ),
        Check::below("oracle_kernel_gap", kernel_gap, ORACLE_LIMIT),
    ]);
    let mut w = csv::Writer::from_writer(ctx.create(report, "axioms.csv")?);
    w.write_record(["metric", "value"])?;
    for (name, value) in [
        ("s_diagonal", ax.s_diagonal),
        ("c_diagonal", ax.c_diagonal),
        ("dt_at_diagonal", ax.dt_at_diagonal),
        ("ds_at_diagonal", ax.ds_at_diagonal),
        ("second_order", ax.second_order),
        ("gronwall_min_slack", ax.gronwall_min_slack),
        ("nhat", ax.nhat),
        ("ntilde", ax.ntilde),
        ("lipschitz", ax.lipschitz),
        ("self_check", ax.self_check),
        ("oracle_kernel_gap", kernel_gap),
    ] {
        w.write_record([name.to_string(), value.to_string()])?;
    }
    w.flush()?;
    report.axioms = Some(ax);
    Ok(())
}

fn gramian(ctx: &Context, report: &mut RunReport) -> Result<()> {
    let g = ctx.gramian()?;
    let p = ctx.free_residual()?;
    let dim = ctx.scenario.dim();
    let probes = [
        p.clone(),
        SpectralVector::basis(dim, 0),
        SpectralVector::basis(dim, dim - 1),
    ];
    let table = h0_diagnostic(&g, &ctx.scenario.a_list, &probes)?;
    table.write_csv(ctx.create(report, "decay.csv")?)?;

    let mut w = csv::Writer::from_writer(ctx.create(report, "eigenvalues.csv")?);
    w.write_record(["index", "eigenvalue"])?;
    for (i, l) in g.eigenvalues().iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;

    report.gramian = Some(gramian_summary(ctx, &g, &p)?);
    report.decay_non_decay = Some(table.non_decay);
    Ok(())
}

fn gramian_summary(ctx: &Context, g: &Gramian, p: &SpectralVector) -> Result<GramianSummary> {
    Ok(GramianSummary {
        lambda_min: g.lambda_min(),
        lambda_max: g.lambda_max(),
        hermitian_defect: g.hermitian_defect(),
        nhat: ctx.kernel.nhat(),
        ntilde: ctx.kernel.ntilde(),
        lipschitz: ctx.kernel.lipschitz_estimate(),
        predicted_terminal_error: linear_terminal_error(
            g,
            RegularizationParam::new(ctx.scenario.a)?,
            p,
        )?,
    })
}

fn solve(ctx: &Context, report: &mut RunReport) -> Result<()> {
    let g = ctx.gramian()?;
    let sol = ctx.solve(g.clone())?;
    sol.write_csv(ctx.create(report, "solution.csv")?)?;
    let mut w = csv::Writer::from_writer(ctx.create(report, "residuals.csv")?);
    w.write_record(["iteration", "residual"])?;
    for (k, r) in sol.residual_history.iter().enumerate() {
        w.write_record([k.to_string(), r.to_string()])?;
    }
    w.flush()?;
    if !sol.impulses.is_empty() {
        let mut w = csv::Writer::from_writer(ctx.create(report, "impulses.csv")?);
        w.write_record([
            "node",
            "t",
            "pre_norm",
            "post_norm",
            "pre_velocity_norm",
            "post_velocity_norm",
        ])?;
        for r in &sol.impulses {
            w.write_record([
                r.node.to_string(),
                r.time.to_string(),
                r.pre_state.norm().to_string(),
                r.post_state.norm().to_string(),
                r.pre_velocity.norm().to_string(),
                r.post_velocity.norm().to_string(),
            ])?;
        }
        w.flush()?;
    }
    report.gramian = Some(gramian_summary(ctx, &g, &ctx.free_residual()?)?);
    report.solves.push(SolveReport::from_solution(
        &sol,
        1e3 * ctx.scenario.options.tolerance,
    ));
    Ok(())
}

fn sweep(ctx: &Context, report: &mut RunReport) -> Result<()> {
    let s = ctx.scenario;
    let problem = s.problem(ctx.kernel.clone(), ctx.gramian()?)?;
    let nonlocal = s.nonlocal.as_ref();
    let impulses = (!s.impulses.is_empty()).then_some(&s.impulses);
    let table = sweep_regularization_with(&problem, nonlocal, impulses, &s.a_list, s.strategy)?;
    table.write_csv(ctx.create(report, "sweep.csv")?)?;
    report.solves = table
        .rows
        .iter()
        .map(|r| SolveReport {
            a: r.a,
            terminal_error: r.terminal_error,
            iterations: r.iterations,
            converged: r.converged,
            contraction_constant: r.contraction_constant,
            observed_ratio: r.observed_ratio,
        })
        .collect();
    report.sweep_non_decay = Some(table.non_decay);
    Ok(())
}

fn oracle(ctx: &Context, report: &mut RunReport) -> Result<()> {
    let s = ctx.scenario;
    let kernel_gap = kernel_oracle_gap(ctx)?;
    report
        .checks
        .push(Check::below("oracle_kernel_gap", kernel_gap, ORACLE_LIMIT));

    let closed_form_gap = s.damping.is_zero().then(|| closed_form_gap(&ctx.kernel));
    if let Some(gap) = closed_form_gap {
        report
            .checks
            .push(Check::below("closed_form_gap", gap, CLOSED_FORM_LIMIT));
    }

    let g = ctx.gramian()?;
    let identity_input = s.input == crate::space::OperatorMatrix::identity(s.dim());
    let gramian_gap = (s.damping.is_zero() && identity_input).then(|| {
        let reference = quadrature_gramian_reference(&s.modes, s.grid.horizon(), s.grid.steps());
        (0..s.dim())
            .map(|i| {
                let expected = reference.matrix().get(i, i).re;
                (g.matrix().get(i, i).re - expected).abs() / expected
            })
            .fold(0.0, f64::max)
    });
    if let Some(gap) = gramian_gap {
        report
            .checks
            .push(Check::below("gramian_gap", gap, ORACLE_LIMIT));
    }

    let sol = ctx.solve(g)?;
    let forcing = sol
        .selections
        .iter()
        .zip(&sol.controls)
        .map(|(f, u)| f.add(&s.input.apply(u)?))
        .collect::<Result<Vec<_>>>()?;
    let start = DenseState::new(sol.states[0].clone(), sol.velocities[0].clone())?;
    let impulses = (!s.impulses.is_empty()).then_some(&s.impulses);
    let dense = dense_integrate_from(&s.modes, &s.damping, &forcing, start, 0, &s.grid, impulses)?;
    let mut w = csv::Writer::from_writer(ctx.create(report, "oracle.csv")?);
    w.write_record(["t", "solver_norm", "oracle_norm", "gap"])?;
    for (j, d) in dense.iter().enumerate() {
        let gap = d.pos.distance(&sol.states[j])?;
        w.write_record([
            s.grid.node(j).to_string(),
            sol.states[j].norm().to_string(),
            d.pos.norm().to_string(),
            gap.to_string(),
        ])?;
    }
    w.flush()?;
    let trajectory_gap = dense
        .last()
        .expect("non-empty")
        .pos
        .distance(sol.terminal_state())?;
    report
        .checks
        .push(Check::below("trajectory_gap", trajectory_gap, ORACLE_LIMIT));
    report
        .solves
        .push(SolveReport::from_solution(&sol, 1e3 * s.options.tolerance));
    report.oracle = Some(OracleReport {
        kernel_gap,
        closed_form_gap,
        gramian_gap,
        trajectory_gap,
    });
    Ok(())
}

fn kernel_oracle_gap(ctx: &Context) -> Result<f64> {
    let s = ctx.scenario;
    let dense = dense_sine_kernel(&s.modes, &s.damping, &s.grid)?;
    Ok(dense
        .iter()
        .enumerate()
        .map(|(mi, column)| {
            let scale = column.iter().map(|z| z.norm()).fold(0.0, f64::max);
            column
                .iter()
                .enumerate()
                .map(|(j, z)| (ctx.kernel.q(mi, j, 0) - z).norm())
                .fold(0.0, f64::max)
                / scale
        })
        .fold(0.0, f64::max))
}

fn closed_form_gap(kernel: &EvolutionKernel) -> f64 {
    let grid = kernel.grid();
    let stride = (grid.steps() / 64).max(1);
    let mut worst: f64 = 0.0;
    for (mi, n) in kernel.modes().iter().enumerate() {
        for j in (0..grid.len()).step_by(stride) {
            for k in (0..=j).step_by(stride) {
                let (q, r) = closed_form_kernel(n, grid.node(j), grid.node(k));
                let scale = C64::new(f64::from(n), 0.0);
                worst = worst.max(((kernel.q(mi, j, k) - q) * scale).norm());
                worst = worst.max((kernel.r(mi, j, k) - r).norm());
            }
        }
    }
    worst
}

/// Paths of the files a run wrote, resolved against `out_dir`.
pub fn output_paths(report: &RunReport, out_dir: impl AsRef<Path>) -> Vec<PathBuf> {
    report
        .outputs
        .iter()
        .map(|p| out_dir.as_ref().join(p))
        .collect()
}
