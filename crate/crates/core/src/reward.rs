//! Exploration/coverage primitive rewards and the weighted role reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::RoleAction;
use crate::world::StepEvents;

/// Weights of the exploration and coverage terms in the role reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl RewardWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(alpha) || !in_unit(beta) {
            return Err(Error::InvalidConfig(format!("reward weights must lie in [0, 1], got {alpha}, {beta}")));
        }
        if (alpha + beta - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("alpha + beta must equal 1, got {}", alpha + beta)));
        }
        Ok(Self { alpha, beta })
    }
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.5 }
    }
}

/// How the exploration-ability normaliser is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AbilityMode {
    /// `B = 2π r² − (2 r² acos(d² / (2 d r)) − sqrt(4 r² − d²))`
    #[default]
    AsPrinted,
    /// Disc area minus the circle-circle lens area.
    Geometric,
}

/// Largest area a robot with sensing radius `rad_e` can newly explore when it
/// moves a distance `d`.
pub fn exploration_ability(rad_e: f64, d: f64, mode: AbilityMode) -> Result<f64> {
    if !(rad_e > 0.0) {
        return Err(Error::DomainError(format!("rad_e must be positive, got {rad_e}")));
    }
    if !(d >= 0.0) || d > 2.0 * rad_e {
        return Err(Error::DomainError(format!("d must lie in [0, 2·rad_e], got {d}")));
    }
    let r2 = rad_e * rad_e;
    let chord = (4.0 * r2 - d * d).max(0.0).sqrt();
    match mode {
        AbilityMode::AsPrinted => {
            if d == 0.0 {
                return Err(Error::DomainError("d = 0 divides by zero in the as-printed form".into()));
            }
            let arg = (d * d / (2.0 * d * rad_e)).clamp(-1.0, 1.0);
            let overlap = 2.0 * r2 * arg.acos() - chord;
            Ok(2.0 * std::f64::consts::PI * r2 - overlap)
        }
        AbilityMode::Geometric => {
            let arg = (d / (2.0 * rad_e)).clamp(-1.0, 1.0);
            let overlap = 2.0 * r2 * arg.acos() - 0.5 * d * chord;
            Ok(std::f64::consts::PI * r2 - overlap)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    /// Shared exploration reward of all Explore-role robots.
    pub r_e: f64,
    /// Shared coverage reward of all Cover-role robots.
    pub r_c: f64,
    pub r_role: f64,
    pub per_robot_primitive: Vec<f64>,
}

/// Role-gated primitive rewards. Robots sharing a role share that role's
/// global reward; the role reward mixes both with `weights`.
pub fn primitive_rewards(events: &StepEvents, roles: &[RoleAction], b_e: f64, weights: RewardWeights) -> RewardRecord {
    debug_assert_eq!(roles.len(), events.newly_explored.len());
    debug_assert!(b_e > 0.0);
    let mut r_e = 0.0;
    let mut r_c = 0.0;
    for (i, role) in roles.iter().enumerate() {
        match role {
            RoleAction::Explore => r_e += events.newly_explored[i] as f64 / b_e,
            RoleAction::Cover => r_c += events.targets_covered[i] as f64,
        }
    }
    let per_robot_primitive = roles
        .iter()
        .map(|role| match role {
            RoleAction::Explore => r_e,
            RoleAction::Cover => r_c,
        })
        .collect();
    RewardRecord { r_e, r_c, r_role: role_reward(r_e, r_c, weights), per_robot_primitive }
}

pub fn role_reward(r_e: f64, r_c: f64, weights: RewardWeights) -> f64 {
    weights.alpha * r_e + weights.beta * r_c
}
