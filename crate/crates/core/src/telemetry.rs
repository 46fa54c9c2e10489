//! Per-step telemetry emitted by the inner loops.

use serde::Serialize;

use crate::cmdp::Signal;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriticRow {
    pub k: usize,
    pub h: usize,
    pub which: Signal,
    pub level: u32,
    pub samples: usize,
    pub eta: f64,
    pub zeta_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub err_to_oracle: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActorRow {
    pub k: usize,
    pub h: usize,
    pub which: Signal,
    pub level: u32,
    pub samples: usize,
    pub omega_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub err_to_oracle: Option<f64>,
}

pub trait TelemetrySink {
    /// Inner-loop rows are only built when this returns true.
    fn wants_inner(&self) -> bool {
        false
    }

    fn critic(&mut self, _row: &CriticRow) {}

    fn actor(&mut self, _row: &ActorRow) {}
}

/// Discards everything.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullSink;

impl TelemetrySink for NullSink {}

/// Keeps every row in memory.
#[derive(Clone, Debug, Default)]
pub struct VecSink {
    pub critic: Vec<CriticRow>,
    pub actor: Vec<ActorRow>,
}

impl TelemetrySink for VecSink {
    fn wants_inner(&self) -> bool {
        true
    }

    fn critic(&mut self, row: &CriticRow) {
        self.critic.push(row.clone());
    }

    fn actor(&mut self, row: &ActorRow) {
        self.actor.push(row.clone());
    }
}
