//! Probabilistic Turvey characteristic function.
//!
//! A coalition's grown yearly peak is taken as the mean of a Weibull
//! distribution; its worth is the probability of exceeding the line limit
//! times the augmentation cost, or zero when that probability is negligible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{check_worth, CharacteristicFunction, Coalition};
use crate::peaks::{self, PeakTable, SeriesSet};

/// kWh per half-hour to kW.
pub const KW_PER_KWH_INTERVAL: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameConfig {
    /// Yearly peak-demand growth applied to every coalition peak.
    pub growth_rate: f64,
    /// Weibull shape.
    pub shape_beta: f64,
    /// Line limit as a multiple of the grand coalition's peak.
    pub emergency_factor: f64,
    /// Cost of the augmentation, in currency.
    pub augmentation_cost: f64,
    /// Exceedance probabilities below this are treated as zero cost.
    pub negligibility_threshold: f64,
    /// Fixed line limit in kW, replacing the derived one.
    pub line_limit_override: Option<f64>,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            growth_rate: 0.01,
            shape_beta: 1.5,
            emergency_factor: 1.5,
            augmentation_cost: 1e6,
            negligibility_threshold: 0.001,
            line_limit_override: None,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::argument(format!("{what} out of range: {v}")));
        if !(self.growth_rate >= 0.0 && self.growth_rate.is_finite()) {
            return bad("growth_rate", self.growth_rate);
        }
        if !(self.shape_beta > 0.0 && self.shape_beta.is_finite()) {
            return bad("shape_beta", self.shape_beta);
        }
        if !(self.emergency_factor > 0.0 && self.emergency_factor.is_finite()) {
            return bad("emergency_factor", self.emergency_factor);
        }
        if !(self.augmentation_cost > 0.0 && self.augmentation_cost.is_finite()) {
            return bad("augmentation_cost", self.augmentation_cost);
        }
        if !(0.0..1.0).contains(&self.negligibility_threshold) {
            return bad("negligibility_threshold", self.negligibility_threshold);
        }
        if let Some(x) = self.line_limit_override {
            if !(x > 0.0 && x.is_finite()) {
                return bad("line_limit_override", x);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    pub scale_alpha: f64,
    pub shape_beta: f64,
}

impl WeibullParams {
    pub fn new(scale_alpha: f64, shape_beta: f64) -> Result<Self> {
        if !(scale_alpha > 0.0 && scale_alpha.is_finite() && shape_beta > 0.0 && shape_beta.is_finite()) {
            return Err(Error::argument(format!(
                "Weibull parameters must be positive, got scale {scale_alpha}, shape {shape_beta}"
            )));
        }
        Ok(WeibullParams { scale_alpha, shape_beta })
    }

    pub fn mean(&self) -> f64 {
        self.scale_alpha * gamma(1.0 + 1.0 / self.shape_beta)
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Gamma function (Lanczos, g = 7, n = 9; reflection below 1/2).
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut a = LANCZOS_COEF[0];
        let t = x + LANCZOS_G + 0.5;
        for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }
}

/// Weibull parameters whose mean is `mu`.
pub fn weibull_from_mean(mu: f64, beta: f64) -> Result<WeibullParams> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::argument(format!("Weibull mean must be positive, got {mu}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::argument(format!("Weibull shape must be positive, got {beta}")));
    }
    WeibullParams::new(mu / gamma(1.0 + 1.0 / beta), beta)
}

/// `P(X >= x) = exp(-(x/alpha)^beta)`.
pub fn tail_probability(params: &WeibullParams, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::argument(format!("exceedance level must be nonnegative, got {x}")));
    }
    Ok((-(x / params.scale_alpha).powf(params.shape_beta)).exp())
}

/// Line limit in kW from the grand coalition's aggregate (kWh per interval).
pub fn line_limit(grand_aggregate: &[f64], config: &GameConfig) -> Result<f64> {
    if let Some(x) = config.line_limit_override {
        return Ok(x);
    }
    let (peak, _) = peaks::argmax(grand_aggregate).ok_or_else(|| Error::data("empty aggregate trace"))?;
    Ok(config.emergency_factor * KW_PER_KWH_INTERVAL * peak)
}

/// Worth of a coalition whose aggregate peak is `peak_kw`.
pub fn worth_from_peak(peak_kw: f64, config: &GameConfig, line_limit_kw: f64) -> f64 {
    if !(peak_kw > 0.0) {
        return 0.0;
    }
    let mu = (1.0 + config.growth_rate) * peak_kw;
    let scale = mu / gamma(1.0 + 1.0 / config.shape_beta);
    let tail = (-(line_limit_kw / scale).powf(config.shape_beta)).exp();
    if tail < config.negligibility_threshold {
        0.0
    } else {
        tail * config.augmentation_cost
    }
}

/// Worth of `coalition` over per-player traces (kWh per half-hour).
pub fn coalition_worth(
    coalition: Coalition,
    traces: &[&[f64]],
    config: &GameConfig,
    line_limit_kw: f64,
) -> Result<f64> {
    match peaks::SeriesSet::new(traces.to_vec())?.peak(coalition)? {
        None => Ok(0.0),
        Some((peak, _)) => Ok(worth_from_peak(KW_PER_KWH_INTERVAL * peak, config, line_limit_kw)),
    }
}

/// Turvey game over a fixed set of aligned traces. The line limit is
/// derived once from the grand coalition.
#[derive(Debug, Clone)]
pub struct TurveyGame<'a> {
    traces: SeriesSet<'a>,
    config: GameConfig,
    line_limit_kw: f64,
}

impl<'a> TurveyGame<'a> {
    pub fn new(traces: Vec<&'a [f64]>, config: GameConfig) -> Result<Self> {
        config.validate()?;
        if traces.is_empty() {
            return Err(Error::argument("a Turvey game needs at least one trace"));
        }
        if traces.len() > crate::game::MAX_PLAYERS {
            return Err(Error::capacity(format!("at most {} players, got {}", crate::game::MAX_PLAYERS, traces.len())));
        }
        let traces = SeriesSet::new(traces)?;
        let grand = traces
            .aggregate(Coalition::grand(traces.player_count()))?
            .expect("nonempty coalition");
        let line_limit_kw = line_limit(&grand, &config)?;
        Ok(TurveyGame { traces, config, line_limit_kw })
    }

    pub fn line_limit(&self) -> f64 {
        self.line_limit_kw
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    pub fn traces(&self) -> &[&'a [f64]] {
        self.traces.series()
    }

    pub fn series_set(&self) -> &SeriesSet<'a> {
        &self.traces
    }

    /// Worths derived from a precomputed peak table over the same traces.
    pub fn worths_from_peaks(&self, table: &PeakTable) -> Vec<f64> {
        table
            .peaks
            .iter()
            .enumerate()
            .map(|(mask, &p)| {
                if mask == 0 {
                    0.0
                } else {
                    worth_from_peak(KW_PER_KWH_INTERVAL * p, &self.config, self.line_limit_kw)
                }
            })
            .collect()
    }
}

impl CharacteristicFunction for TurveyGame<'_> {
    fn player_count(&self) -> usize {
        self.traces.player_count()
    }

    fn worth(&self, coalition: Coalition) -> Result<f64> {
        let worth = match self.traces.peak(coalition)? {
            None => 0.0,
            Some((peak, _)) => worth_from_peak(KW_PER_KWH_INTERVAL * peak, &self.config, self.line_limit_kw),
        };
        check_worth(coalition, worth)
    }

    fn worth_table(&self) -> Result<Vec<f64>> {
        let table = self.traces.peaks()?;
        Ok(self.worths_from_peaks(&table))
    }
}
