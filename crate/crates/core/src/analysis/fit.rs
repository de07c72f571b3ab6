//! Least-squares lines for the scatter analyses.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XTransform {
    Identity,
    Log10,
}

impl std::fmt::Display for XTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            XTransform::Identity => "identity",
            XTransform::Log10 => "log10",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub x_transform: XTransform,
}

/// Least-squares fit of y against (transformed) x. Constant-y data gets
/// r_squared 0 by convention; constant-x data is an error.
pub fn linear_fit(xs: &[f64], ys: &[f64], x_transform: XTransform) -> Result<FitSummary> {
    if xs.len() != ys.len() {
        return Err(Error::DegenerateFit(format!(
            "{} xs vs {} ys",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateFit(format!("{} points", xs.len())));
    }
    let txs: Vec<f64> = match x_transform {
        XTransform::Identity => xs.to_vec(),
        XTransform::Log10 => {
            if xs.iter().any(|&x| x <= 0.0) {
                return Err(Error::DegenerateFit("log10 needs positive x".into()));
            }
            xs.iter().map(|x| x.log10()).collect()
        }
    };
    let n = txs.len() as f64;
    let mean_x = txs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in txs.iter().zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("zero variance in x".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r_squared = if syy == 0.0 {
        0.0
    } else {
        let ss_res: f64 = txs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| {
                let r = y - (slope * x + intercept);
                r * r
            })
            .sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(FitSummary { slope, intercept, r_squared, n_points: xs.len(), x_transform })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points_fit_perfectly() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let fit = linear_fit(&xs, &ys, XTransform::Identity).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept + 1.0).abs() < 1e-12);
        assert_eq!(fit.r_squared, 1.0);
        assert_eq!(fit.n_points, 4);
    }

    #[test]
    fn constant_y_convention() {
        let fit = linear_fit(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0], XTransform::Identity).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.r_squared, 0.0);
    }

    #[test]
    fn matches_closed_form_on_fixture() {
        // Hand-computed normal equations on five points.
        let xs = [1.0, 2.0, 4.0, 5.0, 8.0];
        let ys = [1.1, 1.9, 4.2, 4.8, 8.3];
        let n = 5.0;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        let fit = linear_fit(&xs, &ys, XTransform::Identity).unwrap();
        assert!((fit.slope - slope).abs() < 1e-12);
        assert!((fit.intercept - intercept).abs() < 1e-12);
        assert!(fit.r_squared > 0.99);
    }

    #[test]
    fn log10_transform_and_errors() {
        let xs = [10.0, 100.0, 1000.0];
        let ys = [1.0, 2.0, 3.0];
        let fit = linear_fit(&xs, &ys, XTransform::Log10).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[0.0, 1.0], &[0.0, 1.0], XTransform::Log10).is_err());
        assert!(linear_fit(&[2.0, 2.0], &[0.0, 1.0], XTransform::Identity).is_err());
        assert!(linear_fit(&[1.0], &[1.0], XTransform::Identity).is_err());
    }
}
