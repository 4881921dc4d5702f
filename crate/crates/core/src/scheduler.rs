//! Loss-driven inference schedule: time steps are placed by inverse-transform
//! sampling of a density proportional to the per-time training loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean training loss on the uniform grid `t_i = i / K`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossProfile {
    grid: Vec<f64>,
    losses: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub t: f64,
    pub loss: f64,
}

impl LossProfile {
    /// Builds a profile on the uniform grid of `losses.len() - 1` intervals.
    pub fn uniform(losses: Vec<f64>) -> Result<Self> {
        if losses.len() < 2 {
            return Err(Error::invalid("a loss profile needs at least two grid points"));
        }
        let k = losses.len() - 1;
        let grid = (0..=k).map(|i| i as f64 / k as f64).collect();
        Self::new(grid, losses)
    }

    pub fn new(grid: Vec<f64>, losses: Vec<f64>) -> Result<Self> {
        if grid.len() != losses.len() || grid.len() < 2 {
            return Err(Error::invalid(format!(
                "profile grid ({}) and losses ({}) must have equal length of at least 2",
                grid.len(),
                losses.len()
            )));
        }
        if grid[0] != 0.0 || *grid.last().expect("nonempty") != 1.0 {
            return Err(Error::invalid("profile grid must run from 0 to 1"));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("profile grid must be strictly increasing"));
        }
        if let Some(bad) = losses.iter().find(|l| !l.is_finite() || **l < 0.0) {
            return Err(Error::invalid(format!("profile loss {bad} is not finite and nonnegative")));
        }
        Ok(Self { grid, losses })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn entries(&self) -> Vec<ProfileEntry> {
        self.grid
            .iter()
            .zip(&self.losses)
            .map(|(&t, &loss)| ProfileEntry { t, loss })
            .collect()
    }

    pub fn from_entries(entries: &[ProfileEntry]) -> Result<Self> {
        Self::new(
            entries.iter().map(|e| e.t).collect(),
            entries.iter().map(|e| e.loss).collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub beta: f64,
    pub psi: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { beta: 1.0, psi: 1e-3 }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.psi >= 0.0 && self.psi.is_finite()) {
            return Err(Error::invalid(format!("psi must be nonnegative, got {}", self.psi)));
        }
        Ok(())
    }
}

/// Strictly increasing times from exactly 0 to exactly 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSchedule {
    times: Vec<f64>,
}

impl TimeSchedule {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 || *times.last().expect("nonempty") != 1.0 {
            return Err(Error::invalid("a schedule must start at 0, end at 1 and have at least one step"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(format!("schedule times are not strictly increasing: {times:?}")));
        }
        Ok(Self { times })
    }

    /// `t_s = s / S`.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("a schedule needs at least one step"));
        }
        Self::new((0..=steps).map(|s| s as f64 / steps as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }
}

/// `w_i = (L_i + psi)^beta`.
pub fn difficulty_density(profile: &LossProfile, config: &SchedulerConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let w: Vec<f64> = profile
        .losses
        .iter()
        .map(|l| (l + config.psi).powf(config.beta))
        .collect();
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("difficulty density is zero everywhere; raise psi"));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("difficulty density overflowed"));
    }
    Ok(w)
}

/// Discrete CDF with trapezoidal interval masses; `F_0 = 0`, `F_K = 1`.
pub fn build_cdf(weights: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != grid.len() || grid.len() < 2 {
        return Err(Error::invalid("weights and grid must have equal length of at least 2"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    // Equal weights give F(t) = t; returning the grid avoids rounding drift.
    if weights.iter().all(|&w| w == weights[0]) && weights[0] > 0.0 && grid[0] == 0.0 && grid[grid.len() - 1] == 1.0 {
        return Ok(grid.to_vec());
    }
    let masses: Vec<f64> = (1..grid.len())
        .map(|i| 0.5 * (weights[i - 1] + weights[i]) * (grid[i] - grid[i - 1]))
        .collect();
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("weights carry no mass"));
    }
    let mut cdf = Vec::with_capacity(grid.len());
    cdf.push(0.0);
    let mut acc = 0.0;
    for m in &masses[..masses.len() - 1] {
        acc += m;
        cdf.push(acc / total);
    }
    cdf.push(1.0);
    Ok(cdf)
}

/// Piecewise-linear inverse of `cdf` at `o_s = s / S`.
pub fn invert_schedule(cdf: &[f64], grid: &[f64], steps: usize) -> Result<TimeSchedule> {
    if steps == 0 {
        return Err(Error::invalid("a schedule needs at least one step"));
    }
    if cdf.len() != grid.len() || cdf.len() < 2 || cdf[0] != 0.0 || *cdf.last().expect("nonempty") != 1.0 {
        return Err(Error::invalid("cdf must match the grid and run from 0 to 1"));
    }
    if cdf.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("cdf must be nondecreasing"));
    }
    if cdf == grid {
        return TimeSchedule::uniform(steps);
    }
    let k = grid.len() - 1;
    let mut times = Vec::with_capacity(steps + 1);
    times.push(0.0);
    let mut i = 1;
    for s in 1..steps {
        let o = s as f64 / steps as f64;
        // First interval with F_{i-1} <= o < F_i.
        while i < k && cdf[i] <= o {
            i += 1;
        }
        let (f0, f1) = (cdf[i - 1], cdf[i]);
        let t = grid[i - 1] + (o - f0) / (f1 - f0) * (grid[i] - grid[i - 1]);
        times.push(t);
    }
    times.push(grid[k]);
    TimeSchedule::new(times)
}

/// Full pipeline from a profile to an `S`-step schedule.
pub fn schedule_from_profile(profile: &LossProfile, config: &SchedulerConfig, steps: usize) -> Result<TimeSchedule> {
    let w = difficulty_density(profile, config)?;
    let cdf = build_cdf(&w, &profile.grid)?;
    invert_schedule(&cdf, &profile.grid, steps)
}

/// Evaluates the piecewise-linear CDF at `t`.
pub fn cdf_at(cdf: &[f64], grid: &[f64], t: f64) -> f64 {
    let k = grid.len() - 1;
    if t <= grid[0] {
        return cdf[0];
    }
    if t >= grid[k] {
        return cdf[k];
    }
    let i = grid.partition_point(|&g| g <= t).clamp(1, k);
    let (t0, t1) = (grid[i - 1], grid[i]);
    cdf[i - 1] + (t - t0) / (t1 - t0) * (cdf[i] - cdf[i - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_examples() {
        let p = LossProfile::new(vec![0.0, 1.0], vec![1.0, 3.0]).unwrap();
        let w = difficulty_density(&p, &SchedulerConfig { beta: 2.0, psi: 1.0 }).unwrap();
        assert_eq!(w, vec![4.0, 16.0]);
        let w = difficulty_density(&p, &SchedulerConfig { beta: 1.0, psi: 0.0 }).unwrap();
        assert_eq!(w, vec![1.0, 3.0]);
        let zero = LossProfile::new(vec![0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert!(difficulty_density(&zero, &SchedulerConfig { beta: 1.0, psi: 0.0 }).is_err());
        assert!(difficulty_density(&p, &SchedulerConfig { beta: 0.0, psi: 1.0 }).is_err());
    }

    #[test]
    fn hand_cdf_and_inverse() {
        let grid = [0.0, 0.5, 1.0];
        let cdf = build_cdf(&[1.0, 1.0, 3.0], &grid).unwrap();
        assert_eq!(cdf[0], 0.0);
        assert!((cdf[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(cdf[2], 1.0);
        let s = invert_schedule(&cdf, &grid, 2).unwrap();
        assert!((s.times()[1] - 0.625).abs() < 1e-12);
        assert_eq!(s.times()[0], 0.0);
        assert_eq!(s.times()[2], 1.0);
    }

    #[test]
    fn uniform_weights_give_uniform_schedule_exactly() {
        let p = LossProfile::uniform(vec![0.7; 51]).unwrap();
        for steps in [1, 2, 3, 6, 7, 100] {
            let s = schedule_from_profile(&p, &SchedulerConfig::default(), steps).unwrap();
            for (i, &t) in s.times().iter().enumerate() {
                assert_eq!(t, i as f64 / steps as f64);
            }
        }
    }

    #[test]
    fn single_step_ignores_cdf() {
        let grid = [0.0, 0.5, 1.0];
        let cdf = build_cdf(&[5.0, 0.1, 2.0], &grid).unwrap();
        assert_eq!(invert_schedule(&cdf, &grid, 1).unwrap().times(), &[0.0, 1.0]);
    }

    #[test]
    fn schedule_validation() {
        assert!(TimeSchedule::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeSchedule::new(vec![0.1, 1.0]).is_err());
        assert!(TimeSchedule::uniform(0).is_err());
        assert!(LossProfile::uniform(vec![1.0, f64::NAN]).is_err());
    }
}
