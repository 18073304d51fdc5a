//! Built-in registry: generators, barriers, terminal conditions, forward
//! dynamics and game maps selected by name with numeric parameters. No
//! dynamic code loading; unknown names and unused parameters are errors.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::barrier::{Barrier, TerminalCondition};
use crate::error::{Error, Result};
use crate::forward::SdeSpec;
use crate::game::{ControlledDriftFn, RunningRewardFn};
use crate::generator::{safe_ylogy, safe_zsqrtlog, GeneratorSpec};

/// Named numeric parameters. Every parameter must be consumed by the
/// builder (fail closed on typos).
#[derive(Debug, Clone, Default)]
pub struct Params {
    kind: &'static str,
    entry: String,
    map: BTreeMap<String, f64>,
}

impl Params {
    pub fn new(kind: &'static str, entry: &str, map: BTreeMap<String, f64>) -> Self {
        Self { kind, entry: entry.to_string(), map }
    }

    pub fn empty(kind: &'static str, entry: &str) -> Self {
        Self::new(kind, entry, BTreeMap::new())
    }

    fn take(&mut self, key: &str) -> Option<f64> {
        self.map.remove(key)
    }

    fn take_or(&mut self, key: &str, default: f64) -> f64 {
        self.take(key).unwrap_or(default)
    }

    fn require(&mut self, key: &str) -> Result<f64> {
        self.take(key).ok_or_else(|| Error::MissingParam {
            kind: self.kind,
            entry: self.entry.clone(),
            param: key.to_string(),
        })
    }

    fn finish(self) -> Result<()> {
        if self.map.is_empty() {
            Ok(())
        } else {
            Err(Error::UnusedParams {
                kind: self.kind,
                entry: self.entry,
                params: self.map.keys().cloned().collect::<Vec<_>>().join(", "),
            })
        }
    }
}

fn unknown(kind: &'static str, name: &str, known: &[&str]) -> Error {
    Error::UnknownRegistryEntry { kind, name: name.to_string(), known: known.join(", ") }
}

pub const GENERATORS: &[&str] =
    &["zero", "constant", "neg_y_log_y", "z_sqrt_log", "linear_y", "abs_z"];

/// Builds a generator by name. Every entry accepts an optional `offset`
/// parameter adding a constant to the driver.
pub fn generator(name: &str, params: BTreeMap<String, f64>) -> Result<GeneratorSpec> {
    let mut p = Params::new("generator", name, params);
    let offset = p.take_or("offset", 0.0);
    let spec = match name {
        "zero" => GeneratorSpec::zero(),
        "constant" => {
            let value = p.require("value")?;
            GeneratorSpec::constant(value)
        }
        "neg_y_log_y" => {
            let k = p.require("k")?;
            GeneratorSpec::neg_y_log_y(k)
        }
        "z_sqrt_log" => {
            let c = p.require("c")?;
            GeneratorSpec::z_sqrt_log(c)
        }
        "linear_y" => {
            // f(y) = a y; |a y| <= a e + a |y ln|y|| for all y since
            // |y| <= e + |y||ln|y|| pointwise.
            let a = p.require("a")?;
            GeneratorSpec::new(
                Arc::new(move |_, _, y, _| a * y),
                a.abs() * std::f64::consts::E,
                a.abs(),
                0.0,
            )?
        }
        "abs_z" => {
            // f(z) = c |z|, the saddle driver of affine-drift games;
            // |c z| <= c e + c |z| sqrt(|ln|z||) pointwise.
            let c = p.require("c")?;
            GeneratorSpec::new(
                Arc::new(move |_, _, _, z: &[f64]| {
                    c * z.iter().map(|v| v * v).sum::<f64>().sqrt()
                }),
                c.abs() * std::f64::consts::E,
                0.0,
                c.abs(),
            )?
        }
        _ => return Err(unknown("generator", name, GENERATORS)),
    };
    p.finish()?;
    if offset != 0.0 {
        Ok(spec.with_offset(offset))
    } else {
        Ok(spec)
    }
}

pub const BARRIERS: &[&str] = &["none", "const", "step", "linear"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierSide {
    Lower,
    Upper,
}

/// Builds a barrier by name. `none` is -inf or +inf depending on the side;
/// `step` holds a level until time `until` and is absent afterwards;
/// `linear` is level + slope * t.
pub fn barrier(side: BarrierSide, name: &str, params: BTreeMap<String, f64>) -> Result<Barrier> {
    let mut p = Params::new("barrier", name, params);
    let absent = match side {
        BarrierSide::Lower => f64::NEG_INFINITY,
        BarrierSide::Upper => f64::INFINITY,
    };
    let b = match name {
        "none" => Barrier::new(Arc::new(move |_, _| absent)),
        "const" => {
            let level = p.require("level")?;
            Barrier::constant(level)
        }
        "step" => {
            let level = p.require("level")?;
            let until = p.require("until")?;
            Barrier::new(Arc::new(move |t, _| if t <= until { level } else { absent }))
        }
        "linear" => {
            let level = p.require("level")?;
            let slope = p.take_or("slope", 0.0);
            Barrier::new(Arc::new(move |t, _| level + slope * t))
        }
        _ => return Err(unknown("barrier", name, BARRIERS)),
    };
    p.finish()?;
    Ok(b)
}

pub const TERMINALS: &[&str] = &["const", "clamp", "identity"];

/// Builds a terminal condition by name. `clamp` maps
/// x -> clamp(scale * x_0 + shift, lo, hi).
pub fn terminal(name: &str, params: BTreeMap<String, f64>) -> Result<TerminalCondition> {
    let mut p = Params::new("terminal", name, params);
    let t = match name {
        "const" => {
            let value = p.require("value")?;
            TerminalCondition::constant(value)
        }
        "clamp" => {
            let lo = p.require("lo")?;
            let hi = p.require("hi")?;
            let scale = p.take_or("scale", 1.0);
            let shift = p.take_or("shift", 0.0);
            if !(lo <= hi) {
                return Err(Error::InvalidParam(format!(
                    "clamp terminal needs lo <= hi, got [{lo}, {hi}]"
                )));
            }
            TerminalCondition::new(Arc::new(move |x: &[f64]| {
                (scale * x[0] + shift).clamp(lo, hi)
            }))
        }
        "identity" => TerminalCondition::new(Arc::new(|x: &[f64]| x[0])),
        _ => return Err(unknown("terminal", name, TERMINALS)),
    };
    p.finish()?;
    Ok(t)
}

pub const SDES: &[&str] = &["deterministic", "brownian", "drifted", "linear_vol"];

/// Builds one-dimensional forward dynamics by name.
pub fn sde(name: &str, params: BTreeMap<String, f64>) -> Result<SdeSpec> {
    let mut p = Params::new("sde", name, params);
    let x0 = p.take_or("x0", 0.0);
    let spec = match name {
        "deterministic" => SdeSpec::deterministic(&[x0])?,
        "brownian" => {
            let sigma = p.take_or("sigma", 1.0);
            SdeSpec::brownian(&[x0], sigma)?
        }
        "drifted" => {
            let sigma = p.take_or("sigma", 1.0);
            let drift = p.require("drift")?;
            SdeSpec::markov(vec![x0], move |_, _| vec![drift], move |_, _| vec![sigma])?
        }
        "linear_vol" => {
            // sigma(x) = sigma * x, b(x) = drift * x (geometric dynamics).
            let sigma = p.take_or("sigma", 1.0);
            let drift = p.take_or("drift", 0.0);
            SdeSpec::markov(
                vec![x0],
                move |_, x| vec![drift * x[0]],
                move |_, x| vec![sigma * x[0]],
            )?
        }
        _ => return Err(unknown("sde", name, SDES)),
    };
    p.finish()?;
    Ok(spec)
}

pub const GAME_DRIFTS: &[&str] = &["zero", "affine_controls"];

/// Controlled-drift maps for the game: `affine_controls` is
/// phi = a_u u + a_v v in d = 1.
pub fn game_drift(name: &str, params: BTreeMap<String, f64>) -> Result<ControlledDriftFn> {
    let mut p = Params::new("game drift", name, params);
    let f: ControlledDriftFn = match name {
        "zero" => Arc::new(|_, _, _, _| vec![0.0]),
        "affine_controls" => {
            let a_u = p.take_or("a_u", 1.0);
            let a_v = p.take_or("a_v", 1.0);
            Arc::new(move |_, _, u, v| vec![a_u * u + a_v * v])
        }
        _ => return Err(unknown("game drift", name, GAME_DRIFTS)),
    };
    p.finish()?;
    Ok(f)
}

pub const GAME_REWARDS: &[&str] = &["zero", "constant", "quadratic_controls"];

/// Running-reward maps: `quadratic_controls` is h = c_u u^2 + c_v v^2.
pub fn game_reward(name: &str, params: BTreeMap<String, f64>) -> Result<RunningRewardFn> {
    let mut p = Params::new("game reward", name, params);
    let f: RunningRewardFn = match name {
        "zero" => Arc::new(|_, _, _, _| 0.0),
        "constant" => {
            let value = p.require("value")?;
            Arc::new(move |_, _, _, _| value)
        }
        "quadratic_controls" => {
            let c_u = p.take_or("c_u", -1.0);
            let c_v = p.take_or("c_v", 1.0);
            Arc::new(move |_, _, u, v| c_u * u * u + c_v * v * v)
        }
        _ => return Err(unknown("game reward", name, GAME_REWARDS)),
    };
    p.finish()?;
    Ok(f)
}

/// Re-exports used by the harness when building PDE drivers from generator
/// names: the (t, x, y, q) driver matching a registry generator in d = 1.
pub fn pde_driver(name: &str, params: BTreeMap<String, f64>) -> Result<crate::pde::PdeDriverFn> {
    let mut p = Params::new("generator", name, params);
    let offset = p.take_or("offset", 0.0);
    let f: crate::pde::PdeDriverFn = match name {
        "zero" => Arc::new(move |_, _, _, _| offset),
        "constant" => {
            let value = p.require("value")? + offset;
            Arc::new(move |_, _, _, _| value)
        }
        "neg_y_log_y" => {
            let k = p.require("k")?;
            Arc::new(move |_, _, y, _| -k * safe_ylogy(y) + offset)
        }
        "z_sqrt_log" => {
            let c = p.require("c")?;
            Arc::new(move |_, _, _, q: f64| c * safe_zsqrtlog(q.abs()) + offset)
        }
        "linear_y" => {
            let a = p.require("a")?;
            Arc::new(move |_, _, y, _| a * y + offset)
        }
        "abs_z" => {
            let c = p.require("c")?;
            Arc::new(move |_, _, _, q: f64| c * q.abs() + offset)
        }
        _ => return Err(unknown("generator", name, GENERATORS)),
    };
    p.finish()?;
    Ok(f)
}
