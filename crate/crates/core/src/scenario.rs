//! TOML scenario files.
//!
//! ```toml
//! name = "wave_example"
//! modes = 16
//! steps = 1024
//! horizon = 3.141592653589793
//! seed = 7
//!
//! [damping]
//! kind = "cos"
//! amplitude = 0.5
//!
//! [input]
//! kind = "identity"
//!
//! [inclusion]
//! center = "saturating"
//! gain = 0.01
//! radius = 0.1
//!
//! [initial]
//! position = { profile = "inverse_square" }
//!
//! [target]
//! position = { profile = "inverse_square", scale = -0.5 }
//!
//! [regularization]
//! a = 1e-3
//! a_list = [1.0, 0.1, 0.01]
//!
//! [[impulses]]
//! time = 1.0471975511965976
//! position = { kind = "saturating", eps = 0.3 }
//!
//! [selection]
//! strategy = "center"
//!
//! [tolerances]
//! fixed_point = 1e-9
//! max_iterations = 200
//! relaxation = 1.0
//! ```
//!
//! Coefficient lists are either explicit (`[1.0, 0.5]` or `[[1.0, 0.0], [0.0, 1.0]]`
//! for complex entries) or generated from a profile.

use std::ops::Range;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::families::{build_kernel, DampingProfile, DampingSpec, EvolutionKernel, TimeGrid};
use crate::inclusion::{
    ControlProblem, Impulse, ImpulseSpec, JumpMap, NonlocalMap, NonlocalSpec, SelectionStrategy,
    SetValuedMap, SolverOptions,
};
use crate::space::{ModeSet, OperatorMatrix, SpectralVector, C64};
use crate::synthesis::{Gramian, RegularizationParam};

const DEFAULT_A: f64 = 1e-3;
const DEFAULT_A_LIST: [f64; 7] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    modes: Spanned<usize>,
    steps: Spanned<usize>,
    horizon: Spanned<f64>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    damping: Option<RawDamping>,
    #[serde(default)]
    input: Option<RawInput>,
    #[serde(default)]
    inclusion: Option<RawInclusion>,
    #[serde(default)]
    initial: Option<RawInitial>,
    #[serde(default)]
    target: Option<RawTarget>,
    #[serde(default)]
    regularization: Option<RawRegularization>,
    #[serde(default)]
    nonlocal: Option<RawNonlocal>,
    #[serde(default)]
    impulses: Vec<RawImpulse>,
    #[serde(default)]
    selection: Option<RawSelection>,
    #[serde(default)]
    tolerances: Option<RawTolerances>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
enum RawDamping {
    Zero,
    Cos {
        amplitude: f64,
    },
    Sin {
        amplitude: f64,
    },
    Piecewise {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
enum RawInput {
    Identity,
    Zero,
    Diagonal {
        values: Coefficients,
    },
    /// Row-major entries; `im` defaults to zero.
    Dense {
        re: Vec<Vec<f64>>,
        im: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInclusion {
    #[serde(default = "default_center")]
    center: String,
    #[serde(default)]
    gain: f64,
    offset: Option<Coefficients>,
    radius: Option<Spanned<f64>>,
}

fn default_center() -> String {
    "zero".into()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    position: Option<Coefficients>,
    velocity: Option<Coefficients>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    position: Option<Coefficients>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegularization {
    a: Option<Spanned<f64>>,
    a_list: Option<Spanned<Vec<f64>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNonlocal {
    g: Option<RawNonlocalMap>,
    h: Option<RawNonlocalMap>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
enum RawNonlocalMap {
    Zero,
    Constant { value: Coefficients },
    Point { eps: f64, time: f64 },
    Mean { eps: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawImpulse {
    time: Spanned<f64>,
    position: Option<RawJump>,
    velocity: Option<RawJump>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
enum RawJump {
    Zero,
    Constant { value: Coefficients },
    Scaled { eps: f64 },
    Saturating { eps: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSelection {
    strategy: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTolerances {
    fixed_point: Option<f64>,
    max_iterations: Option<usize>,
    relaxation: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Coefficients {
    Real(Vec<f64>),
    Complex(Vec<[f64; 2]>),
    Profile(Profile),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Profile {
    profile: String,
    #[serde(default = "one")]
    scale: f64,
    #[serde(default = "two")]
    power: f64,
    index: Option<usize>,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

impl Coefficients {
    fn resolve(&self, modes: &ModeSet, what: &str) -> Result<SpectralVector> {
        let dim = modes.dim();
        let values: Vec<C64> = match self {
            Coefficients::Real(v) => v.iter().map(|&x| C64::new(x, 0.0)).collect(),
            Coefficients::Complex(v) => v.iter().map(|&[re, im]| C64::new(re, im)).collect(),
            Coefficients::Profile(p) => {
                let shape: Box<dyn Fn(u32) -> f64> = match p.profile.as_str() {
                    "zero" => Box::new(|_| 0.0),
                    "constant" => Box::new(|_| 1.0),
                    "inverse_square" => Box::new(|n| 1.0 / f64::from(n * n)),
                    "inverse_power" => {
                        let power = p.power;
                        Box::new(move |n| f64::from(n).powf(-power))
                    }
                    "basis" => {
                        let index = p.index.ok_or_else(|| {
                            Error::Scenario(format!("{what}: profile \"basis\" needs `index` (a mode number)"))
                        })?;
                        Box::new(move |n| if n as usize == index { 1.0 } else { 0.0 })
                    }
                    other => {
                        return Err(Error::Scenario(format!(
                            "{what}: unknown profile \"{other}\" (expected zero, constant, inverse_square, inverse_power, basis)"
                        )))
                    }
                };
                modes
                    .iter()
                    .map(|n| C64::new(p.scale * shape(n), 0.0))
                    .collect()
            }
        };
        if values.len() != dim {
            return Err(Error::Scenario(format!(
                "{what}: expected {dim} coefficients, found {}",
                values.len()
            )));
        }
        SpectralVector::from_vec(values)
            .map_err(|_| Error::Scenario(format!("{what}: coefficients must be finite")))
    }
}

/// Description of the ball-valued right-hand side, kept so it can be rebuilt.
#[derive(Debug, Clone, PartialEq)]
pub enum InclusionSpec {
    Zero,
    Ball {
        radius: f64,
    },
    Constant {
        offset: SpectralVector,
        radius: f64,
    },
    Saturating {
        gain: f64,
        offset: SpectralVector,
        radius: f64,
    },
    Linear {
        gain: f64,
        radius: f64,
    },
}

impl InclusionSpec {
    pub fn build(&self) -> Result<SetValuedMap> {
        match self {
            InclusionSpec::Zero => Ok(SetValuedMap::zero()),
            InclusionSpec::Ball { radius } => SetValuedMap::ball(*radius),
            InclusionSpec::Constant { offset, radius } => {
                SetValuedMap::constant(offset.clone(), *radius)
            }
            InclusionSpec::Saturating {
                gain,
                offset,
                radius,
            } => SetValuedMap::saturating(*gain, offset.clone(), *radius),
            InclusionSpec::Linear { gain, radius } => SetValuedMap::linear(*gain, *radius),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, InclusionSpec::Zero)
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub modes: ModeSet,
    pub grid: TimeGrid,
    pub damping: DampingSpec,
    pub input: OperatorMatrix,
    pub inclusion: InclusionSpec,
    pub x0: SpectralVector,
    pub y0: SpectralVector,
    pub target: SpectralVector,
    pub a: f64,
    pub a_list: Vec<f64>,
    pub nonlocal: Option<NonlocalSpec>,
    pub impulses: ImpulseSpec,
    pub strategy: SelectionStrategy,
    pub options: SolverOptions,
    pub seed: u64,
    /// SHA-256 of the source text.
    pub digest: String,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| match e {
        Error::Scenario(msg) => Error::Scenario(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    if text.trim().is_empty() {
        return Err(Error::Scenario("empty scenario file".into()));
    }
    let raw: RawScenario =
        toml::from_str(text).map_err(|e| Error::Scenario(e.to_string().trim_end().to_string()))?;
    let at = |span: Range<usize>, msg: String| {
        let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
        Error::Scenario(format!("line {line}: {msg}"))
    };

    let modes =
        ModeSet::first(*raw.modes.get_ref()).map_err(|e| at(raw.modes.span(), e.to_string()))?;
    let grid = TimeGrid::new(*raw.horizon.get_ref(), *raw.steps.get_ref()).map_err(|e| {
        let span = if *raw.steps.get_ref() < 2 {
            raw.steps.span()
        } else {
            raw.horizon.span()
        };
        at(span, e.to_string())
    })?;
    let horizon = grid.horizon();
    let dim = modes.dim();

    let damping_profile = match raw.damping {
        None | Some(RawDamping::Zero) => DampingProfile::Zero,
        Some(RawDamping::Cos { amplitude }) => DampingProfile::Cos { amplitude },
        Some(RawDamping::Sin { amplitude }) => DampingProfile::Sin { amplitude },
        Some(RawDamping::Piecewise {
            breakpoints,
            values,
        }) => DampingProfile::Piecewise {
            breakpoints,
            values,
        },
    };
    let damping = DampingSpec::new(damping_profile, horizon)
        .map_err(|e| Error::Scenario(format!("[damping] {e}")))?;

    let input = match raw.input {
        None | Some(RawInput::Identity) => OperatorMatrix::identity(dim),
        Some(RawInput::Zero) => OperatorMatrix::zeros(dim),
        Some(RawInput::Diagonal { values }) => {
            OperatorMatrix::diagonal(values.resolve(&modes, "[input] values")?.as_slice())
        }
        Some(RawInput::Dense { re, im }) => dense_input(dim, &re, im.as_deref())?,
    };

    let inclusion = match raw.inclusion {
        None => InclusionSpec::Zero,
        Some(inc) => {
            let radius = inc.radius.as_ref().map_or(0.0, |r| *r.get_ref());
            if !(radius.is_finite() && radius >= 0.0) {
                let span = inc.radius.as_ref().map_or(0..0, |r| r.span());
                return Err(at(
                    span,
                    format!("inclusion radius must be nonnegative, got {radius}"),
                ));
            }
            let offset = match &inc.offset {
                Some(c) => c.resolve(&modes, "[inclusion] offset")?,
                None => SpectralVector::zeros(dim),
            };
            match inc.center.as_str() {
                "zero" if radius == 0.0 => InclusionSpec::Zero,
                "zero" => InclusionSpec::Ball { radius },
                "constant" => InclusionSpec::Constant { offset, radius },
                "saturating" => InclusionSpec::Saturating {
                    gain: inc.gain,
                    offset,
                    radius,
                },
                "linear" => InclusionSpec::Linear { gain: inc.gain, radius },
                other => {
                    return Err(Error::Scenario(format!(
                        "[inclusion] unknown center \"{other}\" (expected zero, constant, saturating, linear)"
                    )))
                }
            }
        }
    };

    let initial = raw.initial.unwrap_or_default();
    let x0 = resolve_or_zero(initial.position.as_ref(), &modes, "[initial] position")?;
    let y0 = resolve_or_zero(initial.velocity.as_ref(), &modes, "[initial] velocity")?;
    let target = resolve_or_zero(
        raw.target.unwrap_or_default().position.as_ref(),
        &modes,
        "[target] position",
    )?;

    let reg = raw.regularization.unwrap_or_default();
    let a = match &reg.a {
        Some(a) => {
            let v = *a.get_ref();
            if !(v.is_finite() && v > 0.0) {
                return Err(at(
                    a.span(),
                    format!("regularization a must be positive, got {v}"),
                ));
            }
            v
        }
        None => DEFAULT_A,
    };
    let a_list = match &reg.a_list {
        Some(list) => {
            let values = list.get_ref().clone();
            if values.is_empty()
                || values.iter().any(|&v| !(v.is_finite() && v > 0.0))
                || values.windows(2).any(|w| w[1] >= w[0])
            {
                return Err(at(
                    list.span(),
                    "a_list must be nonempty, positive and strictly decreasing".into(),
                ));
            }
            values
        }
        None => DEFAULT_A_LIST.to_vec(),
    };

    let nonlocal = match raw.nonlocal {
        None => None,
        Some(nl) => Some(NonlocalSpec {
            g: nonlocal_map(nl.g, &modes, &grid, "g")?,
            h: nonlocal_map(nl.h, &modes, &grid, "h")?,
        }),
    };

    let mut impulses = Vec::with_capacity(raw.impulses.len());
    let mut last_node = 0;
    for (i, imp) in raw.impulses.iter().enumerate() {
        let time = *imp.time.get_ref();
        let node = grid.index_of(time).map_err(|_| {
            at(
                imp.time.span(),
                format!("impulse time {time} is not a grid node"),
            )
        })?;
        if node == 0 || node == grid.steps() {
            return Err(at(
                imp.time.span(),
                format!("impulse time {time} must lie strictly inside (0, {horizon})"),
            ));
        }
        if i > 0 && node <= last_node {
            return Err(at(
                imp.time.span(),
                format!("impulse time {time} is not after the previous one"),
            ));
        }
        last_node = node;
        impulses.push(Impulse {
            time: grid.node(node),
            position: jump_map(imp.position.as_ref(), &modes, "impulse position")?,
            velocity: jump_map(imp.velocity.as_ref(), &modes, "impulse velocity")?,
        });
    }

    let strategy = match raw.selection.as_ref().map(|s| s.strategy.as_str()) {
        None | Some("center") => SelectionStrategy::Center,
        Some("min-norm-shift") => SelectionStrategy::MinNormShift,
        Some("random-extreme") => SelectionStrategy::RandomExtreme { seed: raw.seed },
        Some(other) => {
            return Err(Error::Scenario(format!(
                "[selection] unknown strategy \"{other}\" (expected center, min-norm-shift, random-extreme)"
            )))
        }
    };

    let defaults = SolverOptions::default();
    let options = match raw.tolerances {
        None => defaults,
        Some(t) => SolverOptions {
            tolerance: t.fixed_point.unwrap_or(defaults.tolerance),
            max_iterations: t.max_iterations.unwrap_or(defaults.max_iterations),
            relaxation: t.relaxation.unwrap_or(defaults.relaxation),
        },
    };
    if !(options.tolerance > 0.0)
        || options.max_iterations == 0
        || !(options.relaxation > 0.0 && options.relaxation <= 1.0)
    {
        return Err(Error::Scenario(
            "[tolerances] need fixed_point > 0, max_iterations >= 1, relaxation in (0, 1]".into(),
        ));
    }

    let scenario = Scenario {
        name: raw.name.unwrap_or_else(|| "unnamed".into()),
        modes,
        grid,
        damping,
        input,
        inclusion,
        x0,
        y0,
        target,
        a,
        a_list,
        nonlocal,
        impulses: ImpulseSpec { impulses },
        strategy,
        options,
        seed: raw.seed,
        digest: hex::encode(Sha256::digest(text.as_bytes())),
    };
    scenario
        .inclusion
        .build()
        .map_err(|e| Error::Scenario(format!("[inclusion] {e}")))?;
    Ok(scenario)
}

fn resolve_or_zero(
    c: Option<&Coefficients>,
    modes: &ModeSet,
    what: &str,
) -> Result<SpectralVector> {
    match c {
        Some(c) => c.resolve(modes, what),
        None => Ok(SpectralVector::zeros(modes.dim())),
    }
}

fn dense_input(dim: usize, re: &[Vec<f64>], im: Option<&[Vec<f64>]>) -> Result<OperatorMatrix> {
    let shape_ok = |m: &[Vec<f64>]| m.len() == dim && m.iter().all(|r| r.len() == dim);
    if !shape_ok(re) || im.is_some_and(|m| !shape_ok(m)) {
        return Err(Error::Scenario(format!(
            "[input] dense matrix must be {dim}x{dim}"
        )));
    }
    let mut entries = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            entries.push(C64::new(re[i][j], im.map_or(0.0, |m| m[i][j])));
        }
    }
    OperatorMatrix::from_rows(dim, &entries).map_err(|e| Error::Scenario(format!("[input] {e}")))
}

fn nonlocal_map(
    raw: Option<RawNonlocalMap>,
    modes: &ModeSet,
    grid: &TimeGrid,
    name: &str,
) -> Result<NonlocalMap> {
    Ok(match raw {
        None | Some(RawNonlocalMap::Zero) => NonlocalMap::Zero,
        Some(RawNonlocalMap::Constant { value }) => {
            NonlocalMap::Constant(value.resolve(modes, &format!("[nonlocal] {name} value"))?)
        }
        Some(RawNonlocalMap::Point { eps, time }) => {
            let index = grid.index_of(time).map_err(|_| {
                Error::Scenario(format!("[nonlocal] {name} time {time} is not a grid node"))
            })?;
            NonlocalMap::Point { eps, index }
        }
        Some(RawNonlocalMap::Mean { eps }) => NonlocalMap::Mean { eps },
    })
}

fn jump_map(raw: Option<&RawJump>, modes: &ModeSet, what: &str) -> Result<JumpMap> {
    Ok(match raw {
        None | Some(RawJump::Zero) => JumpMap::Zero,
        Some(RawJump::Constant { value }) => JumpMap::Constant(value.resolve(modes, what)?),
        Some(RawJump::Scaled { eps }) => JumpMap::Scaled(*eps),
        Some(RawJump::Saturating { eps }) => JumpMap::Saturating(*eps),
    })
}

impl Scenario {
    pub fn dim(&self) -> usize {
        self.modes.dim()
    }

    pub fn build_kernel(&self) -> Result<EvolutionKernel> {
        build_kernel(&self.modes, &self.damping, &self.grid)
    }

    pub fn is_linear(&self) -> bool {
        self.inclusion.is_zero()
    }

    /// Control problem at the scenario's own `a`.
    pub fn problem(
        &self,
        kernel: std::sync::Arc<EvolutionKernel>,
        gramian: std::sync::Arc<Gramian>,
    ) -> Result<ControlProblem> {
        Ok(ControlProblem::with_gramian(
            kernel,
            self.input.clone(),
            gramian,
            self.inclusion.build()?,
            self.x0.clone(),
            self.y0.clone(),
            self.target.clone(),
            RegularizationParam::new(self.a)?,
        )?
        .with_options(self.options))
    }

    pub fn nonlocal_or_none(&self) -> NonlocalSpec {
        self.nonlocal.clone().unwrap_or_else(NonlocalSpec::none)
    }
}
