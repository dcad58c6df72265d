//! Nadaraya-Watson kernel smoothing of daily series.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Gaussian,
    Epanechnikov,
}

impl Kernel {
    fn weight(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-0.5 * u * u).exp(),
            Kernel::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Whether the pre- and post-treatment stretches are smoothed separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    WholeSeries,
    SplitAtTPre,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothConfig {
    /// Kernel bandwidth in days.
    pub bandwidth: f64,
    pub kernel: Kernel,
    pub boundary_mode: BoundaryMode,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        SmoothConfig {
            bandwidth: 7.0,
            kernel: Kernel::Gaussian,
            boundary_mode: BoundaryMode::SplitAtTPre,
        }
    }
}

impl SmoothConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(invalid(format!(
                "smoothing bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }
}

/// Smooths `series` on the integer day grid.
///
/// Each output is a kernel-weighted average of the inputs inside its
/// segment, so it stays within `[min, max]` of that segment. Under
/// [`BoundaryMode::SplitAtTPre`] the first `t_pre` days and the remainder
/// are smoothed independently; `t_pre` is ignored for the whole-series mode.
pub fn nw_smooth(series: &[f64], config: &SmoothConfig, t_pre: usize) -> Result<Vec<f64>> {
    config.validate()?;
    if series.len() < 2 {
        return Err(invalid("smoothing needs at least two observations"));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(invalid("series contains missing or non-finite values"));
    }
    let mut out = Vec::with_capacity(series.len());
    match config.boundary_mode {
        BoundaryMode::WholeSeries => smooth_segment(series, config, &mut out),
        BoundaryMode::SplitAtTPre => {
            if t_pre == 0 || t_pre > series.len() {
                return Err(invalid(format!(
                    "split point {t_pre} outside series of length {}",
                    series.len()
                )));
            }
            smooth_segment(&series[..t_pre], config, &mut out);
            smooth_segment(&series[t_pre..], config, &mut out);
        }
    }
    Ok(out)
}

fn smooth_segment(y: &[f64], config: &SmoothConfig, out: &mut Vec<f64>) {
    let h = config.bandwidth;
    for t in 0..y.len() {
        let mut num = 0.0;
        let mut den = 0.0;
        for (s, &ys) in y.iter().enumerate() {
            let w = config.kernel.weight((t as f64 - s as f64) / h);
            num += w * ys;
            den += w;
        }
        // den >= K(0) > 0 because the point itself is always in the window
        out.push(num / den);
    }
}
