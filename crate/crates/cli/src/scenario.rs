//! Scenario files: a JSON description of the chain, the initial state, the
//! lock schedule and the integration settings.
//!
//! Joint indices in scenario files are 1-based. Defaults: gravity 9.81,
//! no applied impulses, sample stride 10.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use vtm_core::{
    ChainModel, ConstraintSchedule, Formulation, LinkParams, LockEvent, RunConfig, State,
    TransitionMethod,
};

use crate::error::{CliError, Result};

fn default_gravity() -> f64 {
    9.81
}

fn default_stride() -> usize {
    10
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub length: f64,
    pub mass: f64,
    pub com_offset: f64,
    pub inertia_com: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub links: Vec<LinkConfig>,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EventConfig {
    pub time_s: f64,
    /// 1-based joint index.
    pub joint: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model: ModelConfig,
    pub initial: InitialConfig,
    pub t_end: f64,
    pub dt: f64,
    #[serde(default)]
    pub events: Vec<EventConfig>,
    pub formulation: String,
    pub transition: String,
    /// Optional applied impulse per event, aligned with `events`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impulses: Option<Vec<Option<Vec<f64>>>>,
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.model.links.len()
    }

    pub fn chain_model(&self) -> Result<ChainModel> {
        let links = self
            .model
            .links
            .iter()
            .map(|l| LinkParams {
                length: l.length,
                mass: l.mass,
                com_offset: l.com_offset,
                inertia_com: l.inertia_com,
            })
            .collect();
        Ok(ChainModel::new(links, self.model.gravity)?)
    }

    pub fn schedule(&self) -> Result<ConstraintSchedule> {
        let n = self.n();
        let mut events = Vec::with_capacity(self.events.len());
        for ev in &self.events {
            if ev.joint == 0 || ev.joint > n {
                return Err(CliError::Validation(format!(
                    "events: joint {} out of range 1..={}",
                    ev.joint, n
                )));
            }
            events.push(LockEvent::new(ev.time_s, ev.joint - 1));
        }
        Ok(ConstraintSchedule::new(n, events)?)
    }

    pub fn initial_state(&self) -> Result<State> {
        Ok(State::new(
            0.0,
            DVector::from_vec(self.initial.q.clone()),
            DVector::from_vec(self.initial.qd.clone()),
        )?)
    }

    pub fn formulation(&self) -> Result<Formulation> {
        Ok(self.formulation.parse()?)
    }

    pub fn transition(&self) -> Result<TransitionMethod> {
        Ok(self.transition.parse()?)
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let mut config = RunConfig::new(self.t_end, self.dt, self.formulation()?, self.transition()?);
        config.sample_stride = self.sample_stride;
        if let Some(impulses) = &self.impulses {
            config.event_impulses = impulses
                .iter()
                .map(|u| u.as_ref().map(|v| DVector::from_vec(v.clone())))
                .collect();
        }
        Ok(config)
    }

    /// Checks every invariant that does not require running the simulation.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.initial.q.len() != n || self.initial.qd.len() != n {
            return Err(CliError::Validation(format!(
                "initial: q has {} and qd has {} entries for {} links",
                self.initial.q.len(),
                self.initial.qd.len(),
                n
            )));
        }
        if !(self.dt > 0.0) {
            return Err(CliError::Validation(format!("dt: must be positive, got {}", self.dt)));
        }
        if self.sample_stride == 0 {
            return Err(CliError::Validation("sample_stride: must be at least 1".into()));
        }
        self.chain_model()?;
        self.schedule()?;
        self.formulation()?;
        self.transition()?;

        let mut last_time = f64::NEG_INFINITY;
        for ev in &self.events {
            let k = (ev.time_s / self.dt).round();
            if ev.time_s < 0.0 || (k * self.dt - ev.time_s).abs() > 1e-12 {
                return Err(CliError::Validation(format!(
                    "events: time {} is not a multiple of dt = {}",
                    ev.time_s, self.dt
                )));
            }
            if ev.time_s > self.t_end {
                return Err(CliError::Validation(format!(
                    "events: time {} exceeds t_end = {}",
                    ev.time_s, self.t_end
                )));
            }
            last_time = last_time.max(ev.time_s);
        }
        if let Some(impulses) = &self.impulses {
            if impulses.len() != self.events.len() {
                return Err(CliError::Validation(format!(
                    "impulses: {} entries for {} events",
                    impulses.len(),
                    self.events.len()
                )));
            }
            for (i, u) in impulses.iter().enumerate() {
                if let Some(u) = u {
                    if u.len() != n {
                        return Err(CliError::Validation(format!(
                            "impulses[{}]: {} entries for {} joints",
                            i,
                            u.len(),
                            n
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Loads and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let scenario: Scenario = serde_json::from_str(&text).map_err(|e| {
        CliError::Validation(format!("{}: {}", path.display(), e))
    })?;
    scenario.validate()?;
    Ok(scenario)
}
