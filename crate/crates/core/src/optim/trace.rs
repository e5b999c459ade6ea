use serde::{Deserialize, Serialize};

/// One optimizer step: the best objective so far (evolution) or the group
/// mean reward (policy gradient), and the L1 norm of the free weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub value: f64,
    pub l1_norm: f64,
    /// Only filled when wall-clock recording is enabled, so traces stay
    /// byte-identical across reruns by default.
    pub wallclock_ms: Option<f64>,
}

pub const TRACE_CSV_HEADER: &str = "step,objective_or_mean_reward,l1_norm,wallclock_ms";

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_CSV_HEADER}\r\n");
    for r in rows {
        let wall = r.wallclock_ms.map(|w| format!("{w:.3}")).unwrap_or_default();
        out.push_str(&format!("{},{},{},{wall}\r\n", r.step, r.value, r.l1_norm));
    }
    out
}

pub(crate) struct Stopwatch(Option<std::time::Instant>);

impl Stopwatch {
    pub fn start(enabled: bool) -> Self {
        Self(enabled.then(std::time::Instant::now))
    }

    pub fn elapsed_ms(&self) -> Option<f64> {
        self.0.map(|t| t.elapsed().as_secs_f64() * 1e3)
    }
}
