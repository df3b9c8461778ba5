//! Gaussian kernel density estimate with Silverman's bandwidth.

use crate::error::{Error, Result};

pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (n - 1.0);
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Density estimate at each grid point.
pub fn gaussian_kde(samples: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::InvalidSpec("a density estimate needs at least two samples".into()));
    }
    let h = bandwidth.unwrap_or_else(|| silverman_bandwidth(samples));
    if !(h > 0.0) {
        return Err(Error::InvalidSpec(format!("bandwidth must be positive, got {h}")));
    }
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&x| norm * samples.iter().map(|s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum::<f64>())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_to_one() {
        let samples: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let grid: Vec<f64> = (0..4001).map(|i| -3.0 + 6.0 * i as f64 / 4000.0).collect();
        let d = gaussian_kde(&samples, &grid, None).unwrap();
        let mass: f64 = d.iter().sum::<f64>() * 6.0 / 4000.0;
        assert!((mass - 1.0).abs() < 1e-3);
    }
}
