//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p evoctl --test acceptance`.

mod common;

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command as Process;
use std::sync::Arc;
use std::time::Instant;

use evoctl::families::{build_kernel, verify_axioms, DampingSpec, TimeGrid};
use evoctl::inclusion::{
    impulsive_solve, nonlocal_solve, picard_solve, sweep_regularization, ControlProblem, Impulse,
    ImpulseSpec, JumpMap, NonlocalMap, NonlocalSpec, SelectionStrategy, SetValuedMap,
};
use evoctl::oracle::{
    closed_form_kernel, dense_integrate_from, dense_sine_kernel, quadrature_gramian_reference,
    DenseState,
};
use evoctl::scenario::{load_scenario, Scenario};
use evoctl::space::{ModeSet, OperatorMatrix, SpectralVector, C64};
use evoctl::synthesis::{
    assemble_gramian, h0_diagnostic, linear_terminal_error, RegularizationParam,
};

use common::{gramian_entry, max_abs, max_gap, scalar_mode, scenario_path, sine_cosine};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scenario(name: &str) -> Scenario {
    load_scenario(scenario_path(name)).expect("bundled scenario")
}

fn problem(s: &Scenario) -> ControlProblem {
    let kernel = Arc::new(s.build_kernel().unwrap());
    let g = Arc::new(assemble_gramian(&kernel, &s.input).unwrap());
    s.problem(kernel, g).unwrap()
}

fn evolution_axioms() -> Outcome {
    let s = scenario("wave_example");
    let kernel = s.build_kernel().map_err(|e| e.to_string())?;
    let ax = verify_axioms(&kernel);
    let detail = format!(
        "S(t,t) {:e}, dtS {:.2e} (<1e-5), dsS {:.2e}, gronwall slack {:.2e} (>=-1e-9)",
        ax.s_diagonal, ax.dt_at_diagonal, ax.ds_at_diagonal, ax.gronwall_min_slack
    );
    ensure(
        ax.s_diagonal == 0.0
            && ax.dt_at_diagonal < 1e-5
            && ax.ds_at_diagonal < 1e-5
            && ax.gronwall_min_slack >= -1e-9,
        detail,
    )
}

fn oracle_kernel_equivalence() -> Outcome {
    let modes = ModeSet::first(32).unwrap();
    let grid = TimeGrid::new(PI, 1024).unwrap();
    let mut worst_dense: f64 = 0.0;
    let mut worst_local: f64 = 0.0;
    let mut worst_closed: f64 = 0.0;
    for amplitude in [0.0, 0.5] {
        let damping = if amplitude == 0.0 {
            DampingSpec::zero()
        } else {
            DampingSpec::cos(amplitude, PI).unwrap()
        };
        let kernel = build_kernel(&modes, &damping, &grid).map_err(|e| e.to_string())?;
        let dense = dense_sine_kernel(&modes, &damping, &grid).map_err(|e| e.to_string())?;
        for (mi, n) in modes.iter().enumerate() {
            let ours: Vec<C64> = (0..grid.len()).map(|j| kernel.q(mi, j, 0)).collect();
            worst_dense = worst_dense.max(max_gap(&ours, &dense[mi]) / max_abs(&dense[mi]));
            let per_interval = 8 * ((f64::from(n) * grid.spacing() / 5e-3).ceil() as usize).max(1);
            let local = scalar_mode(
                n,
                |t| amplitude * t.cos(),
                PI,
                grid.steps(),
                per_interval,
                C64::new(0.0, 0.0),
                C64::new(1.0, 0.0),
            );
            worst_local = worst_local.max(max_gap(&ours, &local) / max_abs(&local));
            if amplitude == 0.0 {
                for j in (0..grid.len()).step_by(3) {
                    for k in (0..=j).step_by(5) {
                        let (q, r) = sine_cosine(n, grid.node(j), grid.node(k));
                        worst_closed = worst_closed
                            .max((kernel.q(mi, j, k) - q).norm() / (1.0 / f64::from(n)));
                        worst_closed = worst_closed.max((kernel.r(mi, j, k) - r).norm());
                        let (lq, lr) = closed_form_kernel(n, grid.node(j), grid.node(k));
                        if (lq.re - q).abs() > 1e-15 || (lr.re - r).abs() > 1e-15 {
                            return Err(format!("library closed form disagrees at n={n}"));
                        }
                    }
                }
            }
        }
    }
    ensure(
        worst_dense < 1e-6 && worst_local < 1e-6 && worst_closed < 1e-8,
        format!(
            "n<=32: vs dense {worst_dense:.2e}, vs scalar RK4 {worst_local:.2e} (<1e-6), vs closed form {worst_closed:.2e} (<1e-8)"
        ),
    )
}

fn gramian_correctness() -> Outcome {
    let modes = ModeSet::first(16).unwrap();
    let grid = TimeGrid::new(PI, 1024).unwrap();
    let kernel = build_kernel(&modes, &DampingSpec::zero(), &grid).map_err(|e| e.to_string())?;
    let g = assemble_gramian(&kernel, &OperatorMatrix::identity(16)).map_err(|e| e.to_string())?;
    let reference = quadrature_gramian_reference(&modes, PI, 1024);
    let mut worst: f64 = 0.0;
    let mut off_diagonal: f64 = 0.0;
    for (i, n) in modes.iter().enumerate() {
        let expected = gramian_entry(n, PI);
        worst = worst.max((g.matrix().get(i, i).re - expected).abs() / expected);
        if (reference.matrix().get(i, i).re - expected).abs() > 1e-15 * expected {
            return Err(format!("library reference disagrees at n={n}"));
        }
        for j in 0..16 {
            if j != i {
                off_diagonal = off_diagonal.max(g.matrix().get(i, j).norm());
            }
        }
    }
    let defect = g.hermitian_defect();
    let norm = g.lambda_max();
    ensure(
        worst < 1e-6 && defect <= 1e-12 * norm && g.lambda_min() >= -1e-10,
        format!(
            "diagonal rel. gap {worst:.2e} (<1e-6), off-diagonal {off_diagonal:.1e}, hermitian defect {defect:.1e}, lambda_min {:.3e}",
            g.lambda_min()
        ),
    )
}

fn linear_controllability() -> Outcome {
    let s = scenario("wave_example");
    let base = problem(&s);
    let a_list = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    let lambda_min = base.gramian().lambda_min();
    let mut errors = Vec::new();
    let mut worst_match: f64 = 0.0;
    let mut p_norm = 0.0;
    for &a in &a_list {
        let reg = RegularizationParam::new(a).unwrap();
        let sol = picard_solve(&base.with_regularization(reg), SelectionStrategy::Center)
            .map_err(|e| e.to_string())?;
        let p = &sol.terminal_residual;
        p_norm = p.norm();
        let closed = linear_terminal_error(base.gramian(), reg, p).map_err(|e| e.to_string())?;
        worst_match = worst_match.max((sol.terminal_error - closed).abs() / closed);
        let envelope = a / (a + lambda_min) * p_norm;
        if sol.terminal_error > envelope * (1.0 + 1e-12) {
            return Err(format!(
                "a={a:e}: error {:.3e} above envelope {envelope:.3e}",
                sol.terminal_error
            ));
        }
        if sol.iterations != 1 {
            return Err(format!("a={a:e}: {} iterations", sol.iterations));
        }
        errors.push(sol.terminal_error);
    }
    let strictly = errors.windows(2).all(|w| w[1] < w[0]);
    let last = *errors.last().unwrap();
    ensure(
        worst_match < 1e-8 && strictly && last < 1e-4 * p_norm,
        format!(
            "match {worst_match:.1e} (<1e-8), strictly decreasing {strictly}, error(1e-6)/|p| = {:.2e} (<1e-4)",
            last / p_norm
        ),
    )
}

fn nonlinear_sweep() -> Outcome {
    let s = scenario("wave_inclusion");
    let p = problem(&s);
    let table = sweep_regularization(&p, &s.a_list, s.strategy).map_err(|e| e.to_string())?;
    let nonincreasing = table
        .rows
        .windows(2)
        .all(|w| w[1].terminal_error <= w[0].terminal_error);
    let mut worst_margin = f64::NEG_INFINITY;
    for r in &table.rows {
        if !r.converged {
            return Err(format!("a={:e} did not converge", r.a));
        }
        if r.contraction_constant < 0.9 {
            worst_margin = worst_margin.max(r.observed_ratio - (r.contraction_constant + 0.1));
        }
    }
    ensure(
        nonincreasing && worst_margin <= 0.0,
        format!(
            "{} rows converged, nonincreasing {nonincreasing}, max ratio {:.2e} vs contraction {:.1e} + 0.1",
            table.rows.len(),
            table.rows.iter().map(|r| r.observed_ratio).fold(0.0, f64::max),
            table.rows.iter().map(|r| r.contraction_constant).fold(0.0, f64::max)
        ),
    )
}

fn reduction_chain() -> Outcome {
    let s = scenario("wave_inclusion");
    let p = problem(&s);
    let plain = picard_solve(&p, s.strategy).map_err(|e| e.to_string())?;
    let nonlocal =
        nonlocal_solve(&p, &NonlocalSpec::none(), s.strategy).map_err(|e| e.to_string())?;
    let impulsive = impulsive_solve(&p, &NonlocalSpec::none(), &ImpulseSpec::none(), s.strategy)
        .map_err(|e| e.to_string())?;
    let same = plain.states == nonlocal.states
        && nonlocal.states == impulsive.states
        && plain.controls == impulsive.controls
        && plain.iterations == impulsive.iterations;
    ensure(
        same,
        format!(
            "bitwise-equal states and controls across {} nodes",
            plain.states.len()
        ),
    )
}

fn impulse_consistency() -> Outcome {
    let n = 8;
    let modes = ModeSet::first(n).unwrap();
    let grid = TimeGrid::new(PI, 1024).unwrap();
    let damping = DampingSpec::zero();
    let kernel = Arc::new(build_kernel(&modes, &damping, &grid).unwrap());
    let x0 = SpectralVector::from_real(&(1..=n).map(|k| 1.0 / (k * k) as f64).collect::<Vec<_>>())
        .unwrap();
    let y0 =
        SpectralVector::from_real(&(1..=n).map(|k| 0.3 / k as f64).collect::<Vec<_>>()).unwrap();
    let problem = ControlProblem::new(
        kernel,
        OperatorMatrix::zeros(n),
        SetValuedMap::zero(),
        x0,
        y0,
        SpectralVector::zeros(n),
        RegularizationParam::new(1e-3).unwrap(),
    )
    .unwrap();
    let jump_v =
        SpectralVector::from_real(&(1..=n).map(|k| 0.2 / k as f64).collect::<Vec<_>>()).unwrap();
    let spec = ImpulseSpec {
        impulses: vec![Impulse {
            time: grid.node(384),
            position: JumpMap::Saturating(0.4),
            velocity: JumpMap::Constant(jump_v),
        }],
    };
    let sol = impulsive_solve(
        &problem,
        &NonlocalSpec::none(),
        &spec,
        SelectionStrategy::Center,
    )
    .map_err(|e| e.to_string())?;
    let rec = &sol.impulses[0];
    let jump = JumpMap::Saturating(0.4).eval(&rec.pre_state);
    let exact = rec.post_state == rec.pre_state.add(&jump).unwrap();
    let residual = rec
        .post_state
        .sub(&rec.pre_state)
        .unwrap()
        .distance(&jump)
        .unwrap();

    let zero = vec![SpectralVector::zeros(n); grid.len()];
    let start = DenseState::new(rec.post_state.clone(), rec.post_velocity.clone()).unwrap();
    let dense = dense_integrate_from(&modes, &damping, &zero, start, rec.node, &grid, None)
        .map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (offset, d) in dense.iter().enumerate().skip(1) {
        worst = worst.max(d.pos.distance(&sol.states[rec.node + offset]).unwrap());
    }
    // closed form of the reset evolution
    let mut worst_closed: f64 = 0.0;
    for j in (rec.node + 1..grid.len()).step_by(17) {
        for (i, k) in modes.iter().enumerate() {
            let (q, r) = sine_cosine(k, grid.node(j), rec.time);
            let expected = rec.post_state.get(i) * r + rec.post_velocity.get(i) * q;
            worst_closed = worst_closed.max((sol.states[j].get(i) - expected).norm());
        }
    }
    ensure(
        exact && residual <= 1e-15 && worst < 1e-6 && worst_closed < 1e-6,
        format!(
            "jump exact {exact} (post-pre-I = {residual:.1e}), post-impulse vs oracle {worst:.2e}, vs closed form {worst_closed:.2e} (<1e-6)"
        ),
    )
}

fn nonlocal_consistency() -> Outcome {
    let s = scenario("wave_inclusion");
    let p = problem(&s);
    let spec = NonlocalSpec {
        g: NonlocalMap::Point { eps: 0.1, index: 0 },
        h: NonlocalMap::Zero,
    };
    let sol = nonlocal_solve(&p, &spec, s.strategy).map_err(|e| e.to_string())?;
    let gap = sol.states[0]
        .add(&spec.g.eval(&sol.states))
        .unwrap()
        .distance(p.x0())
        .unwrap();
    ensure(
        sol.converged() && gap < 1e-8,
        format!(
            "|x(0) + g(x) - x0| = {gap:.2e} (<1e-8) after {} iterations",
            sol.iterations
        ),
    )
}

fn h0_failure_detection() -> Outcome {
    let s = scenario("uncontrolled");
    let p = problem(&s);
    let dim = s.dim();
    let probes = [
        p.target().sub(p.x0()).unwrap(),
        SpectralVector::basis(dim, 0),
        SpectralVector::basis(dim, dim - 1),
    ];
    let decay = h0_diagnostic(p.gramian(), &s.a_list, &probes).map_err(|e| e.to_string())?;
    let table = sweep_regularization(&p, &s.a_list, s.strategy).map_err(|e| e.to_string())?;
    let first = table.rows[0].terminal_error;
    let constant = table.rows.iter().all(|r| r.terminal_error == first);
    ensure(
        decay.non_decay.iter().all(|&f| f) && table.non_decay && constant,
        format!(
            "decay flags {:?}, sweep flagged {}, terminal error constant {first:.4e}",
            decay.non_decay, table.non_decay
        ),
    )
}

fn determinism() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_evoctl");
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for (cmd, name) in [
        ("verify", "wave_example"),
        ("gramian", "wave_example"),
        ("sweep", "wave_inclusion"),
        ("solve", "impulsive_nonlocal"),
        ("oracle", "impulsive_nonlocal"),
    ] {
        let mut dirs = Vec::new();
        for run in 0..2 {
            let dir = root.path().join(format!("{cmd}-{name}-{run}"));
            let status = Process::new(exe)
                .args([cmd, "--scenario"])
                .arg(scenario_path(name))
                .arg("--out")
                .arg(&dir)
                .output()
                .map_err(|e| e.to_string())?;
            if !status.status.success() {
                return Err(format!("{cmd} {name} exited with {}", status.status));
            }
            dirs.push(dir);
        }
        for entry in std::fs::read_dir(&dirs[0]).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.extension().is_some_and(|e| e == "csv") {
                let file = path.file_name().unwrap();
                if read(&path)? != read(&dirs[1].join(file))? {
                    return Err(format!(
                        "{cmd} {name}: {} differs between runs",
                        file.to_string_lossy()
                    ));
                }
                compared += 1;
            }
        }
    }
    ensure(
        compared >= 5,
        format!("{compared} CSV files identical across repeated runs"),
    )
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("evolution-family axioms", evolution_axioms),
        ("kernel vs oracle", oracle_kernel_equivalence),
        ("Gramian correctness", gramian_correctness),
        ("linear approximate controllability", linear_controllability),
        ("nonlinear regularization sweep", nonlinear_sweep),
        ("reduction chain", reduction_chain),
        ("impulse consistency", impulse_consistency),
        ("nonlocal consistency", nonlocal_consistency),
        ("H0 failure detection", h0_failure_detection),
        ("determinism", determinism),
    ];
    let started = Instant::now();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = check();
        let elapsed = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] C{:<2} {name}: {detail} ({elapsed:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] C{:<2} {name}: {detail} ({elapsed:.1}s)", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        criteria.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
