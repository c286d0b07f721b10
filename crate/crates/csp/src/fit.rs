//! Least-squares order estimates on `(ln eps, ln metric)`.

use crate::error::{AppError, AppResult};

/// Fewest usable points accepted by [`fit_order`].
pub const MIN_FIT_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub used: usize,
    /// Points dropped because the metric was zero, negative or not finite.
    pub excluded: usize,
}

pub fn fit_order(eps: &[f64], metric: &[f64]) -> AppResult<OrderFit> {
    if eps.len() != metric.len() {
        return Err(AppError::Fit(format!(
            "{} eps values but {} metrics",
            eps.len(),
            metric.len()
        )));
    }
    let points: Vec<(f64, f64)> = eps
        .iter()
        .zip(metric)
        .filter(|(e, v)| **e > 0.0 && e.is_finite() && **v > 0.0 && v.is_finite())
        .map(|(e, v)| (e.ln(), v.ln()))
        .collect();
    let excluded = eps.len() - points.len();
    if points.len() < MIN_FIT_POINTS {
        return Err(AppError::Fit(format!(
            "need {MIN_FIT_POINTS} positive points, have {} ({excluded} excluded)",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(AppError::Fit("all eps values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    // A flat metric is fitted exactly.
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(OrderFit {
        slope,
        intercept,
        r2,
        used: points.len(),
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn exact_power_law() {
        let eps = [1e-2, 1e-3, 1e-4, 3e-3, 3e-4];
        let metric: Vec<f64> = eps.iter().map(|e| e * e).collect();
        let fit = fit_order(&eps, &metric).unwrap();
        assert_relative_eq!(fit.slope, 2.0, epsilon = 1e-12);
        assert_relative_eq!(fit.r2, 1.0, epsilon = 1e-12);
        assert_eq!((fit.used, fit.excluded), (5, 0));
    }

    #[test]
    fn constant_metric_has_zero_slope() {
        let eps = log_grid(-4.0, -1.5, 7);
        let fit = fit_order(&eps, &[0.3; 7]).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert_eq!(fit.r2, 1.0);
    }

    #[test]
    fn mixed_orders_bias_the_slope_upward() {
        let eps = log_grid(-4.0, -2.0, 7);
        let metric: Vec<f64> = eps.iter().map(|e| e + 100.0 * e * e).collect();
        let fit = fit_order(&eps, &metric).unwrap();
        assert!((1.0..=1.3).contains(&fit.slope), "{}", fit.slope);
        assert!(fit.r2 < 1.0);
    }

    #[test]
    fn zeros_are_excluded_and_short_tables_rejected() {
        let eps = log_grid(-4.0, -1.5, 7);
        let mut metric: Vec<f64> = eps.iter().map(|e| e.powi(3)).collect();
        metric[0] = 0.0;
        let fit = fit_order(&eps, &metric).unwrap();
        assert_eq!((fit.used, fit.excluded), (6, 1));
        assert_relative_eq!(fit.slope, 3.0, epsilon = 1e-12);
        metric[1] = 0.0;
        metric[2] = f64::NAN;
        assert!(matches!(fit_order(&eps, &metric), Err(AppError::Fit(_))));
        assert!(fit_order(&eps[..4], &metric[..4]).is_err());
        assert!(fit_order(&eps, &metric[..3]).is_err());
    }
}
