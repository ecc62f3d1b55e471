//! Flow and reconstruction metrics.

use serde::{Deserialize, Serialize};

use crate::cevae::GaussianBelief;
use crate::error::{Error, Result};
use crate::nn::gaussian_log_density_f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowMetricReport {
    pub rmse: f64,
    pub smape: f64,
    pub cpc: f64,
    pub n_pairs: usize,
}

/// `L` is `None` for point reconstructors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconMetricReport {
    #[serde(rename = "L")]
    pub log_likelihood: Option<f64>,
    pub mse: f64,
}

fn check_pair(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::invalid("metric over an empty set"));
    }
    if truth.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            what: "metric inputs",
            expected: truth.len(),
            found: pred.len(),
        });
    }
    Ok(())
}

pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(truth, pred)?;
    let ss: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    Ok((ss / truth.len() as f64).sqrt())
}

/// Symmetric absolute percentage error as a fraction in `[0, 2]`;
/// pairs where both values are zero contribute 0.
pub fn smape(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(truth, pred)?;
    let total: f64 = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| {
            let denom = (t.abs() + p.abs()) / 2.0;
            if denom == 0.0 {
                0.0
            } else {
                (t - p).abs() / denom
            }
        })
        .sum();
    Ok(total / truth.len() as f64)
}

/// Common part of commuters: `2 Σ min / (Σ truth + Σ pred)`.
pub fn cpc(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(truth, pred)?;
    if truth.iter().chain(pred).any(|&v| v < 0.0) {
        return Err(Error::invalid("cpc needs nonnegative flows"));
    }
    let denom: f64 = truth.iter().sum::<f64>() + pred.iter().sum::<f64>();
    if denom == 0.0 {
        return Err(Error::invalid("cpc undefined when both totals are zero"));
    }
    let common: f64 = truth.iter().zip(pred).map(|(t, p)| t.min(*p)).sum();
    Ok(2.0 * common / denom)
}

pub fn flow_metrics(truth: &[f64], pred: &[f64]) -> Result<FlowMetricReport> {
    Ok(FlowMetricReport {
        rmse: rmse(truth, pred)?,
        smape: smape(truth, pred)?,
        cpc: cpc(truth, pred)?,
        n_pairs: truth.len(),
    })
}

/// Mean squared error of belief means and mean log-density of the truth,
/// over every masked column and row. `truth[k]` pairs with `beliefs[k]`.
/// Beliefs without a standard deviation (point estimates) give no `L`.
pub fn recon_metrics(truth: &[Vec<f64>], beliefs: &[GaussianBelief], point_estimate: bool) -> Result<ReconMetricReport> {
    if truth.is_empty() {
        return Err(Error::invalid("no masked columns to score"));
    }
    if truth.len() != beliefs.len() {
        return Err(Error::DimensionMismatch {
            what: "masked columns",
            expected: truth.len(),
            found: beliefs.len(),
        });
    }
    let mut se = 0.0;
    let mut ll = 0.0;
    let mut count = 0usize;
    for (t, b) in truth.iter().zip(beliefs) {
        check_pair(t, &b.mean)?;
        for (k, &y) in t.iter().enumerate() {
            se += (y - b.mean[k]).powi(2);
            if !point_estimate {
                ll += gaussian_log_density_f64(y, b.mean[k], b.std[k]);
            }
            count += 1;
        }
    }
    let n = count as f64;
    Ok(ReconMetricReport {
        log_likelihood: (!point_estimate).then_some(ll / n),
        mse: se / n,
    })
}
