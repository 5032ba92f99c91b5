//! Wall-clock sources behind the core `Clock` trait.

use std::time::Instant;

use bdpl_core::model::Clock;

/// Monotonic seconds since construction.
pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { start: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_seconds(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

/// Always reads zero; used by `fixed_clock` runs so telemetry and metric
/// files are byte-identical across repetitions.
pub struct FixedClock;

impl Clock for FixedClock {
    fn now_seconds(&mut self) -> f64 {
        0.0
    }
}

pub fn for_config(fixed: bool) -> Box<dyn Clock> {
    if fixed {
        Box::new(FixedClock)
    } else {
        Box::new(SystemClock::new())
    }
}
