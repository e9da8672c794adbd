use serde::{Deserialize, Serialize};

pub use crate::consensus::{Behavior, Strategy};

use super::trace::Time;

/// How a faulty node misbehaves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    /// Stops at `at`: every later message to or from it, and every timer it
    /// owns, is dropped.
    Crash {
        at: Time,
    },
    /// Messages it sends during any of `intervals` take longer than the
    /// synchrony bound (up to `max`, default three bounds).
    Sluggish {
        intervals: Vec<(Time, Time)>,
        #[serde(default)]
        max: Option<Time>,
    },
    Byzantine {
        strategy: Strategy,
    },
}

/// Sluggish windows for one node.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SluggishWindows {
    pub intervals: Vec<(Time, Time)>,
    pub max: Time,
}

impl SluggishWindows {
    pub fn active(&self, t: Time) -> bool {
        self.intervals.iter().any(|(a, b)| *a <= t && t < *b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_json_shapes() {
        let f: FaultKind =
            serde_json::from_str(r#"{"kind":"byzantine","strategy":"stale-tip"}"#).unwrap();
        assert_eq!(
            f,
            FaultKind::Byzantine {
                strategy: Strategy::StaleTip
            }
        );
        let f: FaultKind =
            serde_json::from_str(r#"{"kind":"sluggish","intervals":[[0,10]]}"#).unwrap();
        assert_eq!(
            f,
            FaultKind::Sluggish {
                intervals: vec![(0, 10)],
                max: None
            }
        );
        let w = SluggishWindows {
            intervals: vec![(5, 10)],
            max: 0,
        };
        assert!(!w.active(4) && w.active(5) && !w.active(10));
    }
}
