use serde::{Deserialize, Serialize};

/// Linear interpolation from `initial` to `final_value` over `horizon`
/// steps, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub initial: f64,
    pub final_value: f64,
    pub horizon: u64,
}

impl LinearSchedule {
    pub fn new(initial: f64, final_value: f64, horizon: u64) -> Self {
        LinearSchedule {
            initial,
            final_value,
            horizon,
        }
    }

    /// Exploration schedule reaching `final_value` after `fraction` of `total_steps`.
    pub fn exploration(initial: f64, final_value: f64, fraction: f64, total_steps: u64) -> Self {
        Self::new(initial, final_value, (fraction * total_steps as f64).round() as u64)
    }

    pub fn value(&self, step: u64) -> f64 {
        if step >= self.horizon {
            return self.final_value;
        }
        let progress = step as f64 / self.horizon as f64;
        self.initial + progress * (self.final_value - self.initial)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints() {
        let eps = LinearSchedule::exploration(1.0, 0.02, 0.1, 100_000);
        assert_eq!(eps.horizon, 10_000);
        assert_eq!(eps.value(0), 1.0);
        assert_eq!(eps.value(10_000), 0.02);
        assert_eq!(eps.value(100_000), 0.02);
        assert!((eps.value(5_000) - 0.51).abs() < 1e-12);
    }

    #[test]
    fn zero_horizon_is_constant() {
        let eps = LinearSchedule::new(1.0, 0.1, 0);
        assert_eq!(eps.value(0), 0.1);
    }

    proptest! {
        #[test]
        fn non_increasing(a in 0u64..200_000, b in 0u64..200_000) {
            let eps = LinearSchedule::exploration(1.0, 0.02, 0.1, 100_000);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(eps.value(hi) <= eps.value(lo));
            prop_assert!(eps.value(hi) >= 0.02);
        }
    }
}
