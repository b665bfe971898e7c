//! Non-parametric initialization of prediction-horizon anchors. Each
//! method sits behind [`AnchorStrategy`] and is selected by name from the
//! config or CLI; all of them return exactly `horizon` finite values.

use crate::error::{Error, Result};
use crate::rng::Rng;

pub trait AnchorStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn generate(&self, lookback: &[f64], horizon: usize, rng: &mut Rng) -> Result<Vec<f64>>;
}

/// Config-level description of an anchor initializer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorInit {
    RecentHistory,
    FourierExtrapolation { top_k: usize },
    Random { std: f64 },
}

impl AnchorInit {
    pub fn from_name(name: &str, top_k: usize, std: f64) -> Result<Self> {
        match name {
            "recent" | "recent-history" => Ok(AnchorInit::RecentHistory),
            "fft" | "fourier" => {
                if top_k == 0 {
                    return Err(Error::config("fourier top_k must be >= 1"));
                }
                Ok(AnchorInit::FourierExtrapolation { top_k })
            }
            "random" => {
                if std <= 0.0 {
                    return Err(Error::config("random anchor std must be > 0"));
                }
                Ok(AnchorInit::Random { std })
            }
            other => Err(Error::config(format!(
                "unknown anchor init {other:?}; expected one of: recent, fft, random"
            ))),
        }
    }

    pub fn strategy(&self) -> Box<dyn AnchorStrategy> {
        match *self {
            AnchorInit::RecentHistory => Box::new(RecentHistory),
            AnchorInit::FourierExtrapolation { top_k } => Box::new(FourierExtrapolation { top_k }),
            AnchorInit::Random { std } => Box::new(RandomInit { std }),
        }
    }
}

/// All registered strategies with their default parameters, for listings.
pub fn registry() -> Vec<Box<dyn AnchorStrategy>> {
    vec![
        Box::new(RecentHistory),
        Box::new(FourierExtrapolation { top_k: 5 }),
        Box::new(RandomInit { std: 1.0 }),
    ]
}

/// The last `horizon` values of the look-back window. When the horizon is
/// longer than the window, the window is tiled periodically from its end.
pub struct RecentHistory;

impl AnchorStrategy for RecentHistory {
    fn name(&self) -> &'static str {
        "recent"
    }

    fn generate(&self, lookback: &[f64], horizon: usize, _rng: &mut Rng) -> Result<Vec<f64>> {
        if lookback.is_empty() {
            return Err(Error::data("recent-history anchors need a nonempty lookback"));
        }
        let l = lookback.len() as i64;
        Ok((0..horizon as i64)
            .map(|i| lookback[(l - horizon as i64 + i).rem_euclid(l) as usize])
            .collect())
    }
}

/// Truncated-DFT extrapolation: keep the `top_k` largest-magnitude nonzero
/// frequencies of the mean-removed window and evaluate the series at the
/// horizon positions.
pub struct FourierExtrapolation {
    pub top_k: usize,
}

impl AnchorStrategy for FourierExtrapolation {
    fn name(&self) -> &'static str {
        "fft"
    }

    fn generate(&self, lookback: &[f64], horizon: usize, _rng: &mut Rng) -> Result<Vec<f64>> {
        let l = lookback.len();
        if l < 2 {
            return Err(Error::data("fourier anchors need a lookback of length >= 2"));
        }
        if self.top_k == 0 {
            return Err(Error::config("fourier top_k must be >= 1"));
        }
        let lf = l as f64;
        let mean = lookback.iter().sum::<f64>() / lf;
        let centered: Vec<f64> = lookback.iter().map(|&x| x - mean).collect();

        let tau = 2.0 * std::f64::consts::PI;
        let n_freqs = l / 2;
        let mut bins: Vec<(usize, f64, f64, f64)> = Vec::with_capacity(n_freqs);
        for f in 1..=n_freqs {
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, &x) in centered.iter().enumerate() {
                let angle = tau * f as f64 * t as f64 / lf;
                re += x * angle.cos();
                im -= x * angle.sin();
            }
            bins.push((f, re, im, re * re + im * im));
        }
        // Largest magnitude first; frequency index breaks ties for
        // determinism.
        bins.sort_by(|a, b| b.3.partial_cmp(&a.3).unwrap().then(a.0.cmp(&b.0)));
        bins.truncate(self.top_k);

        let out = (l..l + horizon)
            .map(|t| {
                let mut v = mean;
                for &(f, re, im, _) in &bins {
                    let coef = if l % 2 == 0 && f == l / 2 { 1.0 } else { 2.0 };
                    let angle = tau * f as f64 * t as f64 / lf;
                    v += coef / lf * (re * angle.cos() - im * angle.sin());
                }
                v
            })
            .collect();
        Ok(out)
    }
}

/// Seeded i.i.d. Gaussian anchors, the noisiest ablation baseline.
pub struct RandomInit {
    pub std: f64,
}

impl AnchorStrategy for RandomInit {
    fn name(&self) -> &'static str {
        "random"
    }

    fn generate(&self, _lookback: &[f64], horizon: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        let std = self.std.max(1e-12);
        Ok((0..horizon).map(|_| rng.next_normal() * std).collect())
    }
}
