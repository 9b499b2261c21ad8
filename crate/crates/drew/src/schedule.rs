//! Layer schedules for dynamically rewired message passing, and the buffer
//! of past node states that realizes delayed aggregation.
//!
//! At layer `l` the active hops are `1..=min(l+1, k_cap)`: hop `k` joins
//! the computation at layer `k-1` and stays. Each scheduled hop reads node
//! states from layer `l - tau(k)`, where the delay `tau` is set by
//! [`DelayPolicy`].

use crate::tensor::{Shape, TRef, Tape};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("no stored state for layer {t}; buffer holds {len}")]
    MissingState { t: usize, len: usize },
    #[error("state shape {got} does not match buffer layout {want}")]
    ShapeMismatch { got: String, want: String },
}

/// Delay setting: hop `k` reads states delayed by `max(0, k - nu)`.
/// `Infinite` means no delay anywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayPolicy {
    Finite(u32),
    Infinite,
}

impl DelayPolicy {
    pub fn finite(nu: u32) -> Self {
        assert!(nu >= 1, "nu must be at least 1");
        DelayPolicy::Finite(nu)
    }

    /// The delay `tau(k) = max(0, k - nu)` applied to hop `k >= 1`.
    pub fn tau(self, k: usize) -> usize {
        match self {
            DelayPolicy::Infinite => 0,
            DelayPolicy::Finite(nu) => k.saturating_sub(nu as usize),
        }
    }
}

impl std::fmt::Display for DelayPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DelayPolicy::Finite(nu) => write!(f, "{nu}"),
            DelayPolicy::Infinite => write!(f, "inf"),
        }
    }
}

// serialized as an integer or the string "inf"
impl Serialize for DelayPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            DelayPolicy::Finite(nu) => s.serialize_u32(*nu),
            DelayPolicy::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for DelayPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(0) => Err(D::Error::custom("nu must be at least 1")),
            Raw::Num(n) => Ok(DelayPolicy::Finite(n)),
            Raw::Text(s) if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") => {
                Ok(DelayPolicy::Infinite)
            }
            Raw::Text(s) => Err(D::Error::custom(format!(
                "delay must be a positive integer or \"inf\", got {s:?}"
            ))),
        }
    }
}

/// One scheduled aggregation: hop distance and the index of the stored
/// state it reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub hop: usize,
    pub source: usize,
}

/// The full per-layer plan of hop aggregations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSchedule {
    layers: Vec<Vec<ScheduleEntry>>,
    k_cap: usize,
    policy: DelayPolicy,
}

/// Builds the schedule for `l_count` layers capped at hop `k_cap`.
pub fn build_schedule(l_count: usize, policy: DelayPolicy, k_cap: usize) -> LayerSchedule {
    assert!(l_count >= 1, "need at least one layer");
    assert!(k_cap >= 1, "k_cap must be at least 1");
    let layers = (0..l_count)
        .map(|l| {
            (1..=(l + 1).min(k_cap))
                .map(|k| ScheduleEntry {
                    hop: k,
                    source: l - policy.tau(k),
                })
                .collect()
        })
        .collect();
    LayerSchedule {
        layers,
        k_cap,
        policy,
    }
}

impl LayerSchedule {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn k_cap(&self) -> usize {
        self.k_cap
    }

    pub fn policy(&self) -> DelayPolicy {
        self.policy
    }

    /// Scheduled aggregations for layer `l`, in increasing hop order.
    pub fn layer(&self, l: usize) -> &[ScheduleEntry] {
        &self.layers[l]
    }

    /// Largest hop scheduled anywhere (`min(L, k_cap)`).
    pub fn max_hop(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.iter().map(|e| e.hop))
            .max()
            .unwrap_or(0)
    }

    /// Total number of scheduled hop aggregations across all layers.
    pub fn total_aggregations(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Text dump, one `layer hop source` triple per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (l, entries) in self.layers.iter().enumerate() {
            for e in entries {
                writeln!(out, "{l} {} {}", e.hop, e.source).expect("string write");
            }
        }
        out
    }
}

/// Stored node-state matrices, one per processed layer, all recorded on
/// the same tape so gradients flow into past states.
pub struct DelayBuffer {
    states: Vec<TRef>,
    layout: Shape,
}

impl DelayBuffer {
    /// Starts a buffer with the layer-0 state.
    pub fn new(tape: &Tape, initial: TRef) -> Self {
        DelayBuffer {
            layout: tape.shape(initial).clone(),
            states: vec![initial],
        }
    }

    /// Number of stored states (initial state included).
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Appends the state produced by the latest layer.
    pub fn push(&mut self, tape: &Tape, state: TRef) -> Result<(), ScheduleError> {
        if tape.shape(state) != &self.layout {
            return Err(ScheduleError::ShapeMismatch {
                got: tape.shape(state).to_string(),
                want: self.layout.to_string(),
            });
        }
        self.states.push(state);
        Ok(())
    }

    /// The exact tensor pushed for layer `t`.
    pub fn get(&self, t: usize) -> Result<TRef, ScheduleError> {
        self.states
            .get(t)
            .copied()
            .ok_or(ScheduleError::MissingState {
                t,
                len: self.states.len(),
            })
    }

    /// Latest stored state.
    pub fn last(&self) -> TRef {
        *self.states.last().expect("buffer is never empty")
    }

    /// All stored states in push order.
    pub fn states(&self) -> &[TRef] {
        &self.states
    }
}
