//! Ordinary least squares through a thin QR decomposition.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::StatsError;

/// Relative size below which a diagonal entry of R marks a dependent column.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub y: DVector<f64>,
    /// n × k, intercept first.
    pub x: DMatrix<f64>,
    pub columns: Vec<String>,
    pub family_id: Option<String>,
}

impl Design {
    pub fn new(y: Vec<f64>, rows: Vec<Vec<f64>>, columns: Vec<String>) -> Result<Self, StatsError> {
        let n = rows.len();
        let k = columns.len();
        if y.len() != n {
            return Err(StatsError::DimensionMismatch(format!("{} outcomes, {n} rows", y.len())));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != k) {
            return Err(StatsError::DimensionMismatch(format!("row of width {}, {k} columns", r.len())));
        }
        let x = DMatrix::from_fn(n, k, |i, j| rows[i][j]);
        Ok(Self { y: DVector::from_vec(y), x, columns, family_id: None })
    }

    fn validate(&self) -> Result<(), StatsError> {
        let (n, k) = self.x.shape();
        if self.y.len() != n {
            return Err(StatsError::DimensionMismatch(format!("{} outcomes, {n} rows", self.y.len())));
        }
        if self.columns.len() != k {
            return Err(StatsError::DimensionMismatch(format!("{} names, {k} columns", self.columns.len())));
        }
        if k == 0 || n <= k {
            return Err(StatsError::InvalidDesign(format!("need n > k, got n={n}, k={k}")));
        }
        if self.x.iter().chain(self.y.iter()).any(|v| !v.is_finite()) {
            return Err(StatsError::InvalidDesign("non-finite entry".into()));
        }
        if self.x.column(0).iter().any(|&v| v != 1.0) {
            return Err(StatsError::InvalidDesign("first column must be the intercept".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OlsOptions {
    /// HC1 heteroskedasticity-robust standard errors.
    pub robust: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub columns: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub df_resid: usize,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
}

impl Fit {
    pub fn index(&self, column: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == column)
    }

    /// Two-sided confidence interval for one coefficient.
    pub fn conf_int(&self, j: usize, level: f64) -> (f64, f64) {
        let crit = t_quantile(self.df_resid, 0.5 + level / 2.0);
        let half = crit * self.std_errors[j];
        (self.coefficients[j] - half, self.coefficients[j] + half)
    }
}

fn t_quantile(df: usize, p: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64).expect("df > 0").inverse_cdf(p)
}

fn two_sided_p(t: f64, df: usize) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df > 0");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

pub fn ols(design: &Design) -> Result<Fit, StatsError> {
    ols_with(design, OlsOptions::default())
}

pub fn ols_with(design: &Design, options: OlsOptions) -> Result<Fit, StatsError> {
    design.validate()?;
    let (n, k) = design.x.shape();
    let qr = design.x.clone().qr();
    let r = qr.r();
    let q = qr.q();

    let scale = (0..k).map(|j| design.x.column(j).norm()).fold(0.0_f64, f64::max).max(1.0);
    let dependent: Vec<String> =
        (0..k).filter(|&j| r[(j, j)].abs() <= RANK_TOL * scale).map(|j| design.columns[j].clone()).collect();
    if !dependent.is_empty() {
        return Err(StatsError::RankDeficient(dependent));
    }

    let qty = q.transpose() * &design.y;
    let beta = r.solve_upper_triangular(&qty).ok_or_else(|| StatsError::RankDeficient(design.columns.clone()))?;
    let fitted = &design.x * &beta;
    let resid = &design.y - fitted;
    let rss = resid.norm_squared();
    let df = n - k;

    // (X'X)^-1 = R^-1 R^-T
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| StatsError::RankDeficient(design.columns.clone()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let cov = if options.robust {
        let mut meat = DMatrix::zeros(k, k);
        for i in 0..n {
            let xi = design.x.row(i).transpose();
            meat += (&xi * xi.transpose()) * resid[i].powi(2);
        }
        (&xtx_inv * meat * &xtx_inv) * (n as f64 / df as f64)
    } else {
        xtx_inv * (rss / df as f64)
    };

    let mean_y = design.y.mean();
    let tss: f64 = design.y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };

    let mut std_errors = Vec::with_capacity(k);
    let mut t_stats = Vec::with_capacity(k);
    let mut p_values = Vec::with_capacity(k);
    for j in 0..k {
        let se = cov[(j, j)].max(0.0).sqrt();
        let t = if se > 0.0 {
            beta[j] / se
        } else if beta[j] == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(beta[j])
        };
        std_errors.push(se);
        t_stats.push(t);
        p_values.push(two_sided_p(t, df));
    }
    Ok(Fit {
        columns: design.columns.clone(),
        coefficients: beta.iter().copied().collect(),
        std_errors,
        t_stats,
        p_values,
        df_resid: df,
        r_squared,
        residuals: resid.iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn exact_line() {
        let d =
            Design::new(vec![1.0, 2.0, 3.0], vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]], names(2)).unwrap();
        let fit = ols(&d).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[1], 1.0, epsilon = 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn intercept_only_is_mean() {
        let d = Design::new(vec![0.0, 1.0], vec![vec![1.0], vec![1.0]], names(1)).unwrap();
        assert_abs_diff_eq!(ols(&d).unwrap().coefficients[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let rows = vec![vec![1.0, 2.0, 2.0], vec![1.0, 3.0, 3.0], vec![1.0, 5.0, 5.0], vec![1.0, 1.0, 1.0]];
        let d = Design::new(vec![1.0, 2.0, 3.0, 4.0], rows, names(3)).unwrap();
        assert_eq!(ols(&d), Err(StatsError::RankDeficient(vec!["x2".into()])));
    }

    #[test]
    fn textbook_regression() {
        // Sxx = 10, Sxy = 19.7 by hand.
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.0, 4.1, 5.9, 8.2, 9.8];
        let rows = x.iter().map(|&v| vec![1.0, v]).collect();
        let fit = ols(&Design::new(y.to_vec(), rows, names(2)).unwrap()).unwrap();
        assert_abs_diff_eq!(fit.coefficients[1], 1.97, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[0], 0.09, epsilon = 1e-12);
        // sigma^2 = RSS/3 with RSS = 0.091; se(slope) = sqrt(sigma^2 / Sxx)
        assert_abs_diff_eq!(fit.std_errors[1], (0.091_f64 / 3.0 / 10.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn robust_matches_classical_under_symmetry() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![1.0, (i % 2) as f64]).collect();
        let y = vec![1.0, 2.0, 3.0, 2.0, 1.0, 4.0, 3.0, 4.0];
        let d = Design::new(y, rows, names(2)).unwrap();
        let c = ols(&d).unwrap();
        let r = ols_with(&d, OlsOptions { robust: true }).unwrap();
        assert_eq!(c.coefficients, r.coefficients);
        assert!(r.std_errors[1] > 0.0);
    }

    #[test]
    fn rejects_bad_designs() {
        let d = Design::new(vec![1.0], vec![vec![1.0]], names(1)).unwrap();
        assert!(matches!(ols(&d), Err(StatsError::InvalidDesign(_))));
        assert!(matches!(
            Design::new(vec![1.0, 2.0], vec![vec![1.0]], names(1)),
            Err(StatsError::DimensionMismatch(_))
        ));
        let d = Design::new(vec![1.0, 2.0, 3.0], vec![vec![2.0], vec![1.0], vec![1.0]], names(1)).unwrap();
        assert!(matches!(ols(&d), Err(StatsError::InvalidDesign(_))));
    }
}
