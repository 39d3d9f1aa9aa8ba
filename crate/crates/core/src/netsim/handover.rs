//! Hysteresis plus time-to-trigger serving-cell selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack on the time-to-trigger comparison, absorbs accumulated sample spacing.
const TTT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandoverParams {
    /// Margin (dB) a neighbour must exceed the serving cell by.
    pub hysteresis: f64,
    /// Seconds the margin must hold continuously.
    pub time_to_trigger: f64,
}

impl Default for HandoverParams {
    fn default() -> Self {
        HandoverParams {
            hysteresis: 3.0,
            time_to_trigger: 0.5,
        }
    }
}

impl HandoverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.hysteresis >= 0.0) {
            return Err(Error::config("handover.hysteresis", "must be nonnegative"));
        }
        if !(self.time_to_trigger >= 0.0) {
            return Err(Error::config(
                "handover.time_to_trigger",
                "must be nonnegative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HandoverState {
    serving: Option<usize>,
    candidate: Option<usize>,
    timer: f64,
}

impl HandoverState {
    pub fn serving(&self) -> Option<usize> {
        self.serving
    }
}

fn argmax(values: &[f64], skip: Option<usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Advances the handover state by one sample and returns the serving station
/// index. The first call attaches to the strongest station.
pub fn serving_cell_step(
    state: &mut HandoverState,
    rsrp: &[f64],
    dt: f64,
    params: &HandoverParams,
) -> usize {
    let Some(serving) = state.serving else {
        let first = argmax(rsrp, None).expect("at least one station");
        state.serving = Some(first);
        return first;
    };
    let Some(best) = argmax(rsrp, Some(serving)) else {
        return serving;
    };
    if rsrp[best] > rsrp[serving] + params.hysteresis {
        if state.candidate == Some(best) {
            state.timer += dt;
        } else {
            state.candidate = Some(best);
            state.timer = 0.0;
        }
        if state.timer + TTT_SLACK >= params.time_to_trigger {
            state.serving = Some(best);
            state.candidate = None;
            state.timer = 0.0;
            return best;
        }
    } else {
        state.candidate = None;
        state.timer = 0.0;
    }
    serving
}
