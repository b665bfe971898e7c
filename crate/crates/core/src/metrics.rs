//! Forecast accuracy metrics and the anomaly P/R/F1 computation, plus the
//! seasonal-naive reference forecast used for scaling MASE and OWA.

use crate::error::{Error, Result};

/// The metric bundle every evaluation run produces. Optional fields stay
/// `None` when their inputs are unavailable or the value is undefined
/// (e.g. recall without any positive labels).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub smape: Option<f64>,
    pub mase: Option<f64>,
    pub owa: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl MetricReport {
    fn fields(&self) -> [(&'static str, Option<f64>); 8] {
        [
            ("mse", self.mse),
            ("mae", self.mae),
            ("smape", self.smape),
            ("mase", self.mase),
            ("owa", self.owa),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ]
    }

    /// `metric,value` lines; absent metrics are skipped.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, value) in self.fields() {
            if let Some(v) = value {
                out.push_str(&format!("{name},{v:.16e}\n"));
            }
        }
        out
    }

    /// Aligned plain-text table for console output.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (name, value) in self.fields() {
            match value {
                Some(v) => out.push_str(&format!("{name:>10}  {v:.6}\n")),
                None => {}
            }
        }
        out
    }
}

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::shape(format!(
            "metric length mismatch: {} vs {}",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::shape("metrics need at least one value".to_string()));
    }
    Ok(())
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let sum: f64 = y.iter().zip(y_hat).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(sum / y.len() as f64)
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let sum: f64 = y.iter().zip(y_hat).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(sum / y.len() as f64)
}

/// Symmetric MAPE in [0, 200]; terms with `|y| + |y_hat| = 0` contribute 0.
pub fn smape(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let sum: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(&a, &b)| {
            let denom = a.abs() + b.abs();
            if denom == 0.0 {
                0.0
            } else {
                (a - b).abs() / denom
            }
        })
        .sum();
    Ok(200.0 * sum / y.len() as f64)
}

/// Mean absolute error scaled by the seasonal-naive error over the
/// in-sample series. A zero denominator is reported as undefined.
pub fn mase(y: &[f64], y_hat: &[f64], insample: &[f64], season: usize) -> Result<f64> {
    check_pair(y, y_hat)?;
    if season == 0 {
        return Err(Error::shape("season must be >= 1".to_string()));
    }
    if insample.len() <= season {
        return Err(Error::shape(format!(
            "in-sample length {} must exceed season {season}",
            insample.len()
        )));
    }
    let n = insample.len();
    let denom: f64 = (season..n)
        .map(|j| (insample[j] - insample[j - season]).abs())
        .sum::<f64>()
        / (n - season) as f64;
    if denom == 0.0 {
        return Err(Error::numeric(
            "MASE undefined: seasonal-naive in-sample error is zero".to_string(),
        ));
    }
    let num: f64 = y.iter().zip(y_hat).map(|(&a, &b)| (a - b).abs()).sum::<f64>() / y.len() as f64;
    Ok(num / denom)
}

/// Overall weighted average against the Naive2 baseline.
pub fn owa(smape: f64, mase: f64, smape_naive2: f64, mase_naive2: f64) -> Result<f64> {
    if smape_naive2 <= 0.0 || mase_naive2 <= 0.0 {
        return Err(Error::numeric(format!(
            "OWA baselines must be positive, got ({smape_naive2}, {mase_naive2})"
        )));
    }
    Ok(0.5 * (smape / smape_naive2 + mase / mase_naive2))
}

/// Seasonal-naive forecast: tile the last `season` in-sample values.
/// `season = 1` degenerates to repeating the last value.
pub fn naive2_forecast(insample: &[f64], horizon: usize, season: usize) -> Result<Vec<f64>> {
    if season == 0 {
        return Err(Error::shape("season must be >= 1".to_string()));
    }
    if insample.len() < season {
        return Err(Error::shape(format!(
            "in-sample length {} shorter than season {season}",
            insample.len()
        )));
    }
    let tail = &insample[insample.len() - season..];
    Ok((0..horizon).map(|i| tail[i % season]).collect())
}

/// Confusion counts for boolean predictions against labels.
fn confusion(predicted: &[bool], labels: &[bool]) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (&p, &l) in predicted.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    (tp, fp, fn_)
}

pub fn precision_recall_f1(predicted: &[bool], labels: &[bool]) -> Result<MetricReport> {
    if predicted.len() != labels.len() {
        return Err(Error::shape(format!(
            "prediction/label length mismatch: {} vs {}",
            predicted.len(),
            labels.len()
        )));
    }
    let (tp, fp, fn_) = confusion(predicted, labels);
    let precision = if tp + fp > 0 {
        Some(tp as f64 / (tp + fp) as f64)
    } else {
        None
    };
    let recall = if tp + fn_ > 0 {
        Some(tp as f64 / (tp + fn_) as f64)
    } else {
        None
    };
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Ok(MetricReport {
        precision,
        recall,
        f1,
        ..MetricReport::default()
    })
}

/// Nearest-rank empirical quantile (`p` in (0, 1]); used for anomaly
/// thresholds.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::shape("quantile of empty slice".to_string()));
    }
    if !(0.0 < p && p <= 1.0) {
        return Err(Error::numeric(format!("quantile p {p} must be in (0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_vecs(rng: &mut Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
        let a = (0..n).map(|_| rng.next_normal() * 3.0).collect();
        let b = (0..n).map(|_| rng.next_normal() * 3.0).collect();
        (a, b)
    }

    #[test]
    fn identical_vectors_score_zero() {
        let y = vec![1.0, -2.0, 3.0];
        assert_eq!(mse(&y, &y).unwrap(), 0.0);
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        assert_eq!(smape(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn unit_errors() {
        let y = vec![0.0, 0.0];
        let y_hat = vec![1.0, 1.0];
        assert_eq!(mse(&y, &y_hat).unwrap(), 1.0);
        assert_eq!(mae(&y, &y_hat).unwrap(), 1.0);
    }

    #[test]
    fn smape_hand_case() {
        assert_eq!(smape(&[1.0], &[3.0]).unwrap(), 100.0);
        assert_eq!(smape(&[0.0], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn metrics_match_naive_loop_oracle() {
        let mut rng = Rng::new(50);
        for _ in 0..200 {
            let n = 1 + rng.next_below(100);
            let (y, y_hat) = rand_vecs(&mut rng, n);
            let mut mse_o = 0.0;
            let mut mae_o = 0.0;
            let mut smape_o = 0.0;
            for i in 0..n {
                let d = y[i] - y_hat[i];
                mse_o += d * d;
                mae_o += d.abs();
                let denom = y[i].abs() + y_hat[i].abs();
                if denom > 0.0 {
                    smape_o += d.abs() / denom;
                }
            }
            mse_o /= n as f64;
            mae_o /= n as f64;
            smape_o *= 200.0 / n as f64;
            assert!((mse(&y, &y_hat).unwrap() - mse_o).abs() < 1e-12);
            assert!((mae(&y, &y_hat).unwrap() - mae_o).abs() < 1e-12);
            assert!((smape(&y, &y_hat).unwrap() - smape_o).abs() < 1e-12);
        }
    }

    #[test]
    fn smape_bounded_by_200() {
        let mut rng = Rng::new(51);
        for _ in 0..100 {
            let n = 1 + rng.next_below(50);
            let (y, y_hat) = rand_vecs(&mut rng, n);
            let v = smape(&y, &y_hat).unwrap();
            assert!((0.0..=200.0).contains(&v));
        }
    }

    #[test]
    fn mase_perfect_forecast_is_zero() {
        let insample: Vec<f64> = (0..20).map(|x| x as f64).collect();
        let y = vec![1.0, 2.0, 3.0];
        assert_eq!(mase(&y, &y, &insample, 1).unwrap(), 0.0);
    }

    #[test]
    fn mase_seasonal_naive_scale_ratio_is_one() {
        // Construct a case where the forecast error exactly matches the
        // in-sample seasonal-naive error scale.
        let season = 4;
        // In-sample: every step differs from its seasonal predecessor by 2.
        let insample: Vec<f64> = (0..16).map(|t| (t / season) as f64 * 2.0).collect();
        // Forecast off by exactly 2 everywhere.
        let y = vec![10.0, 10.0, 10.0, 10.0];
        let y_hat = vec![8.0, 8.0, 8.0, 8.0];
        let v = mase(&y, &y_hat, &insample, season).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "mase {v}");
    }

    #[test]
    fn mase_matches_loop_oracle() {
        let mut rng = Rng::new(52);
        for _ in 0..100 {
            let n = 2 + rng.next_below(50);
            let (y, y_hat) = rand_vecs(&mut rng, n);
            let ins_len = 10 + rng.next_below(40);
            let insample: Vec<f64> = (0..ins_len).map(|_| rng.next_normal()).collect();
            let season = 1 + rng.next_below(ins_len - 1);
            let mut denom = 0.0;
            for j in season..ins_len {
                denom += (insample[j] - insample[j - season]).abs();
            }
            denom /= (ins_len - season) as f64;
            let mut num = 0.0;
            for i in 0..n {
                num += (y[i] - y_hat[i]).abs();
            }
            num /= n as f64;
            let got = mase(&y, &y_hat, &insample, season).unwrap();
            assert!((got - num / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn mase_scale_invariance() {
        let mut rng = Rng::new(53);
        let (y, y_hat) = rand_vecs(&mut rng, 24);
        let insample: Vec<f64> = (0..48).map(|_| rng.next_normal()).collect();
        let base = mase(&y, &y_hat, &insample, 6).unwrap();
        for c in [0.001, 0.5, 3.0, 1000.0] {
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let yhs: Vec<f64> = y_hat.iter().map(|v| v * c).collect();
            let inss: Vec<f64> = insample.iter().map(|v| v * c).collect();
            let scaled = mase(&ys, &yhs, &inss, 6).unwrap();
            assert!((scaled - base).abs() < 1e-9 * base.abs().max(1.0), "c={c}");
        }
    }

    #[test]
    fn mase_zero_denominator_undefined() {
        let insample = vec![3.0; 10];
        assert!(mase(&[1.0], &[2.0], &insample, 2).is_err());
    }

    #[test]
    fn owa_hand_cases() {
        assert_eq!(owa(10.0, 1.0, 10.0, 1.0).unwrap(), 1.0);
        assert_eq!(owa(10.0, 1.0, 20.0, 2.0).unwrap(), 0.5);
        assert!(owa(10.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn owa_matches_loop_oracle() {
        let mut rng = Rng::new(54);
        for _ in 0..100 {
            let s = rng.next_f64() * 50.0 + 0.1;
            let m = rng.next_f64() * 5.0 + 0.1;
            let sn = rng.next_f64() * 50.0 + 0.1;
            let mn = rng.next_f64() * 5.0 + 0.1;
            let expect = 0.5 * (s / sn) + 0.5 * (m / mn);
            assert!((owa(s, m, sn, mn).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn naive2_repeats_last_season() {
        let insample = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(naive2_forecast(&insample, 3, 1).unwrap(), vec![6.0, 6.0, 6.0]);
        assert_eq!(
            naive2_forecast(&insample, 4, 2).unwrap(),
            vec![5.0, 6.0, 5.0, 6.0]
        );
        // A periodic series continues exactly.
        let periodic: Vec<f64> = (0..12).map(|t| (t % 3) as f64).collect();
        let fc = naive2_forecast(&periodic, 6, 3).unwrap();
        for (i, v) in fc.iter().enumerate() {
            assert_eq!(*v, ((12 + i) % 3) as f64);
        }
        assert!(naive2_forecast(&[1.0], 3, 2).is_err());
    }

    #[test]
    fn f1_hand_cases() {
        // TP=2, FP=1, FN=1.
        let predicted = vec![true, true, true, false, false];
        let labels = vec![true, true, false, true, false];
        let r = precision_recall_f1(&predicted, &labels).unwrap();
        assert!((r.precision.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.recall.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.f1.unwrap() - 2.0 / 3.0).abs() < 1e-15);

        // Perfect separation.
        let r = precision_recall_f1(&labels, &labels).unwrap();
        assert_eq!(r.f1, Some(1.0));

        // All-negative predictions with positives present: recall 0.
        let r = precision_recall_f1(&[false, false, false], &[true, false, true]).unwrap();
        assert_eq!(r.recall, Some(0.0));
        assert_eq!(r.precision, None);

        // No positive labels: recall undefined.
        let r = precision_recall_f1(&[true, false], &[false, false]).unwrap();
        assert_eq!(r.recall, None);
        assert_eq!(r.f1, None);
    }

    #[test]
    fn f1_matches_loop_oracle() {
        let mut rng = Rng::new(55);
        for _ in 0..100 {
            let n = 5 + rng.next_below(100);
            let predicted: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.3).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.3).collect();
            let mut tp = 0.0;
            let mut fp = 0.0;
            let mut fn_ = 0.0;
            for i in 0..n {
                if predicted[i] && labels[i] {
                    tp += 1.0;
                } else if predicted[i] {
                    fp += 1.0;
                } else if labels[i] {
                    fn_ += 1.0;
                }
            }
            let r = precision_recall_f1(&predicted, &labels).unwrap();
            if tp + fp > 0.0 {
                assert!((r.precision.unwrap() - tp / (tp + fp)).abs() < 1e-12);
            }
            if tp + fn_ > 0.0 {
                assert!((r.recall.unwrap() - tp / (tp + fn_)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quantile_nearest_rank() {
        let vals = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        assert_eq!(quantile(&vals, 0.5).unwrap(), 5.0);
        assert_eq!(quantile(&vals, 1.0).unwrap(), 10.0);
        assert_eq!(quantile(&vals, 0.05).unwrap(), 1.0);
        assert!(quantile(&vals, 0.0).is_err());
        assert!(quantile(&[], 0.5).is_err());
    }

    #[test]
    fn report_csv_and_table_render() {
        let r = MetricReport {
            mse: Some(0.5),
            mae: Some(0.25),
            smape: Some(12.0),
            ..MetricReport::default()
        };
        let csv = r.to_csv();
        assert!(csv.starts_with("metric,value\n"));
        assert!(csv.contains("mse,"));
        assert!(!csv.contains("precision"));
        let table = r.to_table();
        assert!(table.contains("mse"));
    }
}
