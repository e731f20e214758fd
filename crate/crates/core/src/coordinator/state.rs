use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-device progress through one coordinator session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum DevicePhase {
    Unreached,
    Deployed,
    Running,
    Reported,
    TornDown,
    Failed { cause: String },
}

impl DevicePhase {
    pub fn name(&self) -> &'static str {
        match self {
            DevicePhase::Unreached => "unreached",
            DevicePhase::Deployed => "deployed",
            DevicePhase::Running => "running",
            DevicePhase::Reported => "reported",
            DevicePhase::TornDown => "torn_down",
            DevicePhase::Failed { .. } => "failed",
        }
    }

    /// Forward steps only, plus a move to `Failed` from anywhere not already failed.
    pub fn can_transition(&self, to: &DevicePhase) -> bool {
        use DevicePhase::*;
        matches!(
            (self, to),
            (Unreached, Deployed) | (Deployed, Running) | (Running, Reported) | (Reported, TornDown)
        ) || (matches!(to, Failed { .. }) && !matches!(self, Failed { .. }))
    }

    /// Reported or beyond, or failed: teardown may be sent to this device.
    pub fn is_settled(&self) -> bool {
        matches!(self, DevicePhase::Reported | DevicePhase::TornDown | DevicePhase::Failed { .. })
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, DevicePhase::Failed { .. })
    }
}

impl fmt::Display for DevicePhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DevicePhase::Failed { cause } => write!(f, "failed ({cause})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal transition for device `{device}`: {from} -> {to}")]
pub struct IllegalTransition {
    pub device: String,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub plan_id: String,
    pub phases: BTreeMap<String, DevicePhase>,
}

impl SessionState {
    pub fn new<'a>(plan_id: &str, devices: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            plan_id: plan_id.to_string(),
            phases: devices.into_iter().map(|d| (d.to_string(), DevicePhase::Unreached)).collect(),
        }
    }

    pub fn phase(&self, device: &str) -> Option<&DevicePhase> {
        self.phases.get(device)
    }

    pub fn transition(&mut self, device: &str, to: DevicePhase) -> Result<(), IllegalTransition> {
        let current = self.phases.get_mut(device).ok_or_else(|| IllegalTransition {
            device: device.to_string(),
            from: "<unknown device>".into(),
            to: to.name().into(),
        })?;
        if !current.can_transition(&to) {
            return Err(IllegalTransition {
                device: device.to_string(),
                from: current.name().into(),
                to: to.name().into(),
            });
        }
        *current = to;
        Ok(())
    }

    /// True once every device has reported or failed.
    pub fn teardown_allowed(&self) -> bool {
        self.phases.values().all(DevicePhase::is_settled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn failed() -> DevicePhase {
        DevicePhase::Failed { cause: "x".into() }
    }

    #[test]
    fn only_forward_or_failed() {
        use DevicePhase::*;
        let all = [Unreached, Deployed, Running, Reported, TornDown, failed()];
        let legal: Vec<(usize, usize)> = (0..all.len())
            .flat_map(|i| (0..all.len()).map(move |j| (i, j)))
            .filter(|&(i, j)| all[i].can_transition(&all[j]))
            .collect();
        assert_eq!(legal, vec![(0, 1), (0, 5), (1, 2), (1, 5), (2, 3), (2, 5), (3, 4), (3, 5), (4, 5)]);
    }

    #[test]
    fn teardown_waits_for_every_device() {
        let mut s = SessionState::new("p", ["a", "b"]);
        for p in [DevicePhase::Deployed, DevicePhase::Running, DevicePhase::Reported] {
            s.transition("a", p).unwrap();
        }
        assert!(!s.teardown_allowed());
        s.transition("b", failed()).unwrap();
        assert!(s.teardown_allowed());
        assert!(s.transition("b", DevicePhase::Deployed).is_err());
        assert!(s.transition("zz", DevicePhase::Deployed).is_err());
    }
}
