use serde::{Deserialize, Serialize};

use crate::mano::{InstanceId, InstanceState};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub cpu_work: f64,
    /// MB × seconds.
    pub memory_mb_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub cpu: f64,
    pub mem: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingRecord {
    pub instance_id: InstanceId,
    pub cpu_work_consumed: f64,
    pub memory_mb_time: f64,
    pub cost: f64,
}

impl ChargingRecord {
    /// Row for the UDM charging table.
    pub fn to_row(&self) -> Vec<String> {
        vec![
            self.instance_id.to_string(),
            self.cpu_work_consumed.to_string(),
            self.memory_mb_time.to_string(),
            self.cost.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("instance {instance} is {state}; charging needs a completed instance")]
pub struct InstanceNotCompleted {
    pub instance: InstanceId,
    pub state: InstanceState,
}

pub fn charge(
    instance: InstanceId,
    state: InstanceState,
    usage: Usage,
    rates: Rates,
) -> Result<ChargingRecord, InstanceNotCompleted> {
    if !matches!(state, InstanceState::Completed | InstanceState::MemoryHeld | InstanceState::Released) {
        return Err(InstanceNotCompleted { instance, state });
    }
    Ok(ChargingRecord {
        instance_id: instance,
        cpu_work_consumed: usage.cpu_work,
        memory_mb_time: usage.memory_mb_time,
        cost: usage.cpu_work * rates.cpu + usage.memory_mb_time * rates.mem,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_is_linear_in_usage() {
        let r = Rates { cpu: 2.0, mem: 1.0 };
        let rec = charge(InstanceId(1), InstanceState::Completed, Usage { cpu_work: 10.0, memory_mb_time: 0.0 }, r).unwrap();
        assert_eq!(rec.cost, 20.0);
        let zero = charge(InstanceId(1), InstanceState::MemoryHeld, Usage::default(), r).unwrap();
        assert_eq!(zero.cost, 0.0);
    }

    #[test]
    fn active_instance_is_not_charged() {
        let err = charge(InstanceId(3), InstanceState::Active, Usage::default(), Rates { cpu: 1.0, mem: 1.0 }).unwrap_err();
        assert_eq!(err.state, InstanceState::Active);
    }
}
