use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    #[serde(alias = "linear")]
    LinearBeta,
    Cosine,
}

/// Schedule settings as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub tau_count: usize,
    pub schedule_kind: ScheduleKind,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 1000, tau_count: 50, schedule_kind: ScheduleKind::LinearBeta, beta_start: 1e-4, beta_end: 2e-2 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match self.schedule_kind {
            ScheduleKind::LinearBeta => {
                NoiseSchedule::linear(self.steps, self.tau_count, self.beta_start, self.beta_end)
            }
            ScheduleKind::Cosine => NoiseSchedule::cosine(self.steps, self.tau_count),
        }
    }
}

/// Cumulative signal levels `alpha_bar[0..=T]` plus the sampling subsequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
    tau: Vec<usize>,
}

/// Schedule with default linear-beta endpoints or the cosine form.
pub fn make_schedule(steps: usize, kind: ScheduleKind, tau_count: usize) -> Result<NoiseSchedule> {
    ScheduleConfig { steps, tau_count, schedule_kind: kind, ..ScheduleConfig::default() }.build()
}

impl NoiseSchedule {
    /// Linearly spaced betas from `beta_start` to `beta_end` over steps `1..=T`.
    pub fn linear(steps: usize, tau_count: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        check_sizes(steps, tau_count)?;
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
            return Err(Error::InvalidParameter(format!(
                "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas = (0..steps).map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        });
        Self::from_betas(betas, steps, tau_count)
    }

    /// Squared-cosine schedule with offset 0.008 and betas capped at 0.999.
    pub fn cosine(steps: usize, tau_count: usize) -> Result<Self> {
        check_sizes(steps, tau_count)?;
        const OFFSET: f64 = 0.008;
        let f = |t: usize| {
            let x = (t as f64 / steps as f64 + OFFSET) / (1.0 + OFFSET) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let betas = (1..=steps).map(|t| (1.0 - f(t) / f(t - 1)).clamp(1e-12, 0.999));
        Self::from_betas(betas, steps, tau_count)
    }

    fn from_betas(betas: impl Iterator<Item = f64>, steps: usize, tau_count: usize) -> Result<Self> {
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        for beta in betas {
            let prev = *alpha_bar.last().unwrap();
            alpha_bar.push(prev * (1.0 - beta));
        }
        let tau = (0..=tau_count).map(|k| k * steps / tau_count).collect();
        Self::from_parts(alpha_bar, tau)
    }

    /// Validates an explicit schedule.
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks
    pub fn from_parts(alpha_bar: Vec<f64>, tau: Vec<usize>) -> Result<Self> {
        if alpha_bar.len() < 2 || alpha_bar[0] != 1.0 {
            return Err(Error::InvalidParameter("alpha_bar must start at 1 and have T >= 1".into()));
        }
        if alpha_bar.windows(2).any(|w| !(w[1] < w[0])) || alpha_bar.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::InvalidParameter("alpha_bar must be strictly decreasing within (0, 1]".into()));
        }
        let last = alpha_bar.len() - 1;
        if tau.first() != Some(&0) || tau.last() != Some(&last) || tau.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(format!("tau must increase strictly from 0 to {last}")));
        }
        Ok(Self { alpha_bar, tau })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, step: usize) -> f64 {
        self.alpha_bar[step]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Sampling subsequence, ascending from 0 to `T`.
    pub fn tau(&self) -> &[usize] {
        &self.tau
    }

    pub(crate) fn check_step(&self, step: usize) -> Result<()> {
        if step > self.steps() {
            return Err(Error::InvalidParameter(format!("step {step} exceeds T = {}", self.steps())));
        }
        Ok(())
    }
}

fn check_sizes(steps: usize, tau_count: usize) -> Result<()> {
    if steps == 0 || tau_count == 0 || tau_count > steps {
        return Err(Error::InvalidParameter(format!(
            "need T >= 1 and 1 <= tau_count <= T, got T = {steps}, tau_count = {tau_count}"
        )));
    }
    Ok(())
}
