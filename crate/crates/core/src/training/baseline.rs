use crate::error::{contract_err, Result};
use crate::tensor::Real;

/// Exponential moving average of the mean reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineState {
    pub b: Real,
}

impl Default for BaselineState {
    fn default() -> Self {
        Self { b: 0.5 }
    }
}

impl BaselineState {
    pub fn new() -> Self {
        Self::default()
    }

    /// `b ← 0.9·b + 0.1·mean(rewards)`; rewards must be 0 or 1.
    pub fn update(&self, rewards: &[Real]) -> Result<Self> {
        if rewards.is_empty() {
            return Err(contract_err!("baseline update without rewards"));
        }
        if let Some(r) = rewards.iter().find(|&&r| r != 0.0 && r != 1.0) {
            return Err(contract_err!("reward {r} is not an indicator"));
        }
        let mean = rewards.iter().sum::<Real>() / rewards.len() as Real;
        Ok(Self { b: (0.9 * self.b + 0.1 * mean).clamp(0.0, 1.0) })
    }
}

/// Baselines for the sequence reward and the per-location rewards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Baselines {
    pub sequence: BaselineState,
    pub location: BaselineState,
    /// One baseline, driven by the sequence rewards, serves both advantages.
    pub shared: bool,
}

impl Default for Baselines {
    fn default() -> Self {
        Self { sequence: BaselineState::new(), location: BaselineState::new(), shared: true }
    }
}

impl Baselines {
    pub fn separate() -> Self {
        Self { shared: false, ..Self::default() }
    }

    /// Baseline subtracted from per-location rewards.
    pub fn for_locations(&self) -> Real {
        if self.shared {
            self.sequence.b
        } else {
            self.location.b
        }
    }

    pub fn update(&self, sequence_rewards: &[Real], location_rewards: &[Real]) -> Result<Self> {
        let sequence = self.sequence.update(sequence_rewards)?;
        let location = if self.shared || location_rewards.is_empty() {
            self.location
        } else {
            self.location.update(location_rewards)?
        };
        Ok(Self { sequence, location, shared: self.shared })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn update_examples() {
        let b = BaselineState::new();
        assert!((b.update(&[1.0, 1.0]).unwrap().b - 0.55).abs() < 1e-15);
        assert!((b.update(&[0.0]).unwrap().b - 0.45).abs() < 1e-15);
        assert!(b.update(&[]).is_err());
        assert!(b.update(&[0.5]).is_err());
    }

    #[test]
    #[allow(clippy::unnecessary_cast)]
    fn converges_geometrically() {
        let target = 0.75;
        let mut b = BaselineState { b: 0.1 };
        let rewards = [1.0, 1.0, 1.0, 0.0];
        for n in 1..=50 {
            b = b.update(&rewards).unwrap();
            let expected = 0.9f64.powi(n) * (0.1 - target as f64).abs();
            assert!(((b.b - target).abs() as f64 - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_baseline_ignores_location_rewards() {
        let b = Baselines::default().update(&[1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(b.for_locations(), b.sequence.b);
        let s = Baselines::separate().update(&[1.0], &[0.0, 0.0]).unwrap();
        assert!((s.for_locations() - 0.45).abs() < 1e-15);
    }
}
