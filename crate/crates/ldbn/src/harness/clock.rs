//! Time source for per-frame deadline accounting.
//!
//! The engine never calls `Instant::now` directly; it reads a [`Clock`], so
//! tests can script exact readings and assert on latency arithmetic.

use std::collections::VecDeque;
use std::time::Instant;

/// Monotonic milliseconds. Readings never decrease.
pub trait Clock {
    fn now_ms(&mut self) -> f64;
}

/// Wall-clock time relative to construction.
pub struct RealClock {
    origin: Instant,
}

impl RealClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for RealClock {
    fn now_ms(&mut self) -> f64 {
        self.origin.elapsed().as_secs_f64() * 1e3
    }
}

/// Deterministic clock for tests: serves scripted readings first, then
/// advances by a fixed step per read.
pub struct FakeClock {
    scripted: VecDeque<f64>,
    current: f64,
    auto_step: f64,
}

impl FakeClock {
    /// Serves the given readings in order; afterwards repeats the last
    /// value (time stands still).
    pub fn scripted(readings: Vec<f64>) -> Self {
        Self {
            scripted: readings.into(),
            current: 0.0,
            auto_step: 0.0,
        }
    }

    /// First read returns `start`, each subsequent read adds `step`.
    pub fn stepping(start: f64, step: f64) -> Self {
        Self {
            scripted: VecDeque::new(),
            current: start,
            auto_step: step,
        }
    }

    /// Readings served so far is not tracked; remaining scripted count is.
    pub fn remaining_scripted(&self) -> usize {
        self.scripted.len()
    }
}

impl Clock for FakeClock {
    fn now_ms(&mut self) -> f64 {
        if let Some(v) = self.scripted.pop_front() {
            self.current = v;
            v
        } else {
            let v = self.current;
            self.current += self.auto_step;
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_clock_is_monotonic() {
        let mut c = RealClock::new();
        let a = c.now_ms();
        let b = c.now_ms();
        assert!(b >= a && a >= 0.0);
    }

    #[test]
    fn scripted_then_flat() {
        let mut c = FakeClock::scripted(vec![1.0, 4.0, 9.0]);
        assert_eq!(c.now_ms(), 1.0);
        assert_eq!(c.now_ms(), 4.0);
        assert_eq!(c.now_ms(), 9.0);
        assert_eq!(c.now_ms(), 9.0);
    }

    #[test]
    fn stepping_advances_uniformly() {
        let mut c = FakeClock::stepping(10.0, 2.5);
        assert_eq!(c.now_ms(), 10.0);
        assert_eq!(c.now_ms(), 12.5);
        assert_eq!(c.now_ms(), 15.0);
    }
}
