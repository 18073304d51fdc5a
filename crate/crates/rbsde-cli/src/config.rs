//! Experiment configuration: TOML sections per module, fail-closed on
//! unknown keys, with named presets for the standard test problems.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Deserialize;

/// Raised for malformed configs; the message carries the offending field.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type CResult<T> = Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> CResult<T> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub scenario: String,
    pub seed: Option<u64>,
    pub out_dir: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub horizon: Option<f64>,
    pub steps: Option<usize>,
    pub paths: Option<usize>,
    pub space_nodes: Option<usize>,
    pub space_radius: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedSection {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarriersSection {
    pub lower: String,
    pub upper: String,
    #[serde(default)]
    pub lower_params: BTreeMap<String, f64>,
    #[serde(default)]
    pub upper_params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub family: Option<String>,
    pub degree: Option<usize>,
    pub count: Option<usize>,
    pub clip_lo: Option<f64>,
    pub clip_hi: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySection {
    pub max_exponent: Option<u32>,
    pub levels: Option<Vec<f64>>,
    /// "increasing" or "decreasing" for the double-barrier schemes.
    pub direction: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSection {
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesSection {
    /// |y0 - target_y0| bound when a target is configured.
    pub y0: Option<f64>,
    pub target_y0: Option<f64>,
    pub cross_validation: Option<f64>,
    pub sup_residual: Option<f64>,
    pub skorokhod: Option<f64>,
    pub complementarity: Option<f64>,
    pub saddle_y0_gap: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSection {
    pub phi: String,
    pub h_run: String,
    #[serde(default)]
    pub phi_params: BTreeMap<String, f64>,
    #[serde(default)]
    pub h_run_params: BTreeMap<String, f64>,
    pub u_grid: Vec<f64>,
    pub v_grid: Vec<f64>,
    pub growth_k: Option<f64>,
    pub perturbations: Option<usize>,
    pub tol_hit: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: ExperimentSection,
    pub grid: Option<GridSection>,
    pub generator: Option<NamedSection>,
    pub terminal: Option<NamedSection>,
    pub barriers: Option<BarriersSection>,
    pub sde: Option<NamedSection>,
    pub basis: Option<BasisSection>,
    pub penalty: Option<PenaltySection>,
    pub pde: Option<PdeSection>,
    pub tolerances: Option<TolerancesSection>,
    pub game: Option<GameSection>,
}

/// Scenario kinds the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Bsde,
    Penalized,
    DoubleBarrier,
    Pde,
    CrossValidate,
    Game,
}

impl Scenario {
    pub fn label(&self) -> &'static str {
        match self {
            Scenario::Bsde => "bsde",
            Scenario::Penalized => "penalized",
            Scenario::DoubleBarrier => "double-barrier",
            Scenario::Pde => "pde",
            Scenario::CrossValidate => "cross-validate",
            Scenario::Game => "game",
        }
    }
}

/// Fully resolved configuration with defaults and presets applied.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub scenario: Scenario,
    pub scenario_name: String,
    pub seed: u64,
    pub out_dir: String,
    pub horizon: f64,
    pub steps: usize,
    pub paths: usize,
    pub space_nodes: usize,
    pub space_radius: f64,
    pub generator: NamedSection,
    pub terminal: NamedSection,
    pub barriers: BarriersSection,
    pub sde: NamedSection,
    pub basis: BasisSection,
    pub penalty: PenaltySection,
    pub theta: f64,
    pub tolerances: TolerancesSection,
    pub game: Option<GameSection>,
}

fn named(name: &str, pairs: &[(&str, f64)]) -> NamedSection {
    NamedSection {
        name: name.to_string(),
        params: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

fn barriers(lower: &str, lp: &[(&str, f64)], upper: &str, up: &[(&str, f64)]) -> BarriersSection {
    BarriersSection {
        lower: lower.to_string(),
        upper: upper.to_string(),
        lower_params: lp.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        upper_params: up.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

/// A preset pre-fills sections the user left out; user sections win.
struct Preset {
    scenario: Scenario,
    grid: GridSection,
    generator: Option<NamedSection>,
    terminal: Option<NamedSection>,
    barriers: Option<BarriersSection>,
    sde: Option<NamedSection>,
    tolerances: TolerancesSection,
    game: Option<GameSection>,
}

fn preset_for(name: &str) -> CResult<Option<Preset>> {
    match name {
        // Deterministic logarithmic-driver problem with the closed-form
        // ODE value exp(e^{-1}) at the root.
        "log-ode" => Ok(Some(Preset {
            scenario: Scenario::Bsde,
            grid: GridSection {
                horizon: Some(1.0),
                steps: Some(200),
                paths: Some(1),
                ..GridSection::default()
            },
            generator: Some(named("neg_y_log_y", &[("k", 1.0)])),
            terminal: Some(named("const", &[("value", std::f64::consts::E)])),
            barriers: Some(barriers("none", &[], "none", &[])),
            sde: Some(named("deterministic", &[("x0", 0.0)])),
            tolerances: TolerancesSection {
                y0: Some(5e-3),
                target_y0: Some((1.0f64 / std::f64::consts::E).exp()),
                ..TolerancesSection::default()
            },
            game: None,
        })),
        // Degenerate game: zero drift and reward, zero terminal, slack
        // barriers. Every payoff is exactly zero.
        "zero-game" => Ok(Some(Preset {
            scenario: Scenario::Game,
            grid: GridSection {
                horizon: Some(1.0),
                steps: Some(10),
                paths: Some(500),
                ..GridSection::default()
            },
            generator: None,
            terminal: Some(named("const", &[("value", 0.0)])),
            barriers: Some(barriers(
                "const",
                &[("level", -5.0)],
                "const",
                &[("level", 5.0)],
            )),
            sde: Some(named("brownian", &[("x0", 0.0), ("sigma", 1.0)])),
            tolerances: TolerancesSection::default(),
            game: Some(GameSection {
                phi: "zero".to_string(),
                h_run: "zero".to_string(),
                phi_params: BTreeMap::new(),
                h_run_params: BTreeMap::new(),
                u_grid: vec![-1.0, 0.0, 1.0],
                v_grid: vec![-1.0, 0.0, 1.0],
                growth_k: Some(5.0),
                perturbations: Some(5),
                tol_hit: None,
            }),
        })),
        _ => Ok(None),
    }
}

fn scenario_from(name: &str) -> CResult<Scenario> {
    match name {
        "bsde" => Ok(Scenario::Bsde),
        "penalized" => Ok(Scenario::Penalized),
        "double-barrier" => Ok(Scenario::DoubleBarrier),
        "pde" => Ok(Scenario::Pde),
        "cross-validate" => Ok(Scenario::CrossValidate),
        "game" => Ok(Scenario::Game),
        other => err(format!(
            "experiment.scenario: unknown scenario '{other}' (known: bsde, penalized, \
             double-barrier, pde, cross-validate, game, log-ode, zero-game)"
        )),
    }
}

pub fn load(path: &Path) -> CResult<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| ConfigError(e.to_string()))
}

/// Applies presets and defaults and validates sizes. CLI overrides for
/// seed/out_dir are applied before calling this.
pub fn resolve(mut file: FileConfig) -> CResult<ResolvedConfig> {
    let scenario_name = file.experiment.scenario.clone();
    let preset = preset_for(&scenario_name)?;
    let scenario = match &preset {
        Some(p) => p.scenario,
        None => scenario_from(&scenario_name)?,
    };
    if let Some(p) = preset {
        let g = file.grid.get_or_insert_with(GridSection::default);
        g.horizon = g.horizon.or(p.grid.horizon);
        g.steps = g.steps.or(p.grid.steps);
        g.paths = g.paths.or(p.grid.paths);
        if file.generator.is_none() {
            file.generator = p.generator;
        }
        if file.terminal.is_none() {
            file.terminal = p.terminal;
        }
        if file.barriers.is_none() {
            file.barriers = p.barriers;
        }
        if file.sde.is_none() {
            file.sde = p.sde;
        }
        if file.game.is_none() {
            file.game = p.game;
        }
        let t = file.tolerances.get_or_insert_with(TolerancesSection::default);
        t.y0 = t.y0.or(p.tolerances.y0);
        t.target_y0 = t.target_y0.or(p.tolerances.target_y0);
    }

    let grid = file.grid.unwrap_or_default();
    let horizon = grid.horizon.unwrap_or(1.0);
    let steps = grid.steps.unwrap_or(50);
    let paths = grid.paths.unwrap_or(10_000);
    if !(horizon > 0.0) {
        return err(format!("grid.horizon: must be positive, got {horizon}"));
    }
    if steps == 0 {
        return err("grid.steps: must be at least 1");
    }
    if paths == 0 {
        return err("grid.paths: must be at least 1");
    }
    let space_nodes = grid.space_nodes.unwrap_or(400);
    if space_nodes < 3 {
        return err("grid.space_nodes: must be at least 3");
    }
    let space_radius = grid.space_radius.unwrap_or(6.0);
    if !(space_radius > 0.0) {
        return err("grid.space_radius: must be positive");
    }

    let generator = file
        .generator
        .unwrap_or_else(|| named("zero", &[]));
    let terminal = file
        .terminal
        .unwrap_or_else(|| named("clamp", &[("lo", -1.0), ("hi", 1.0)]));
    let barriers_cfg = file.barriers.unwrap_or_else(|| {
        barriers("const", &[("level", -1.0)], "const", &[("level", 1.0)])
    });
    let sde = file
        .sde
        .unwrap_or_else(|| named("brownian", &[("x0", 0.0), ("sigma", 1.0)]));

    let basis = file.basis.unwrap_or(BasisSection {
        family: None,
        degree: None,
        count: None,
        clip_lo: None,
        clip_hi: None,
    });
    let penalty = file.penalty.unwrap_or_default();
    if let Some(direction) = &penalty.direction {
        if direction != "increasing" && direction != "decreasing" {
            return err(format!(
                "penalty.direction: expected 'increasing' or 'decreasing', got '{direction}'"
            ));
        }
    }
    let theta = file.pde.unwrap_or_default().theta.unwrap_or(1.0);
    if !(0.0..=1.0).contains(&theta) {
        return err(format!("pde.theta: must lie in [0, 1], got {theta}"));
    }
    let tolerances = file.tolerances.unwrap_or_default();

    if scenario == Scenario::Game && file.game.is_none() {
        return err("game: section required for game scenarios");
    }

    Ok(ResolvedConfig {
        scenario,
        scenario_name,
        seed: file.experiment.seed.unwrap_or(0),
        out_dir: file.experiment.out_dir.unwrap_or_else(|| "out".to_string()),
        horizon,
        steps,
        paths,
        space_nodes,
        space_radius,
        generator,
        terminal,
        barriers: barriers_cfg,
        sde,
        basis,
        penalty,
        theta,
        tolerances,
        game: file.game,
    })
}
