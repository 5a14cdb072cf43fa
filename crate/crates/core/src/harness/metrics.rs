//! Per-epoch run metrics, EMA smoothing and the competition/collusion summary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::episode::EpisodeLog;
use crate::market::{Platform, SimConfig};

/// Raw per-epoch quantities, taken at the final step of the episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub seed: u64,
    pub profit_u: f64,
    pub profit_l: f64,
    pub mean_r_u: f64,
    pub mean_c_u: f64,
    pub mean_r_l: f64,
    pub mean_c_l: f64,
    pub margin_u: f64,
    pub margin_l: f64,
    pub gap_cu_g: f64,
    pub gap_cl_g: f64,
}

const SERIES: usize = 10;

impl EpochMetrics {
    pub fn from_log(log: &EpisodeLog, gas_cost: f64) -> Result<Self> {
        let last = log
            .steps
            .last()
            .ok_or_else(|| Error::Usage("episode log has no steps".into()))?;
        let u = &last.prices.u;
        let l = &last.prices.l;
        let mean_c_u = u.commission.off_diagonal_mean();
        let mean_c_l = l.commission.off_diagonal_mean();
        Ok(Self {
            epoch: log.epoch,
            seed: log.seed,
            profit_u: last.profit_u,
            profit_l: last.profit_l,
            mean_r_u: u.rate.off_diagonal_mean(),
            mean_c_u,
            mean_r_l: l.rate.off_diagonal_mean(),
            mean_c_l,
            margin_u: u.margin().off_diagonal_mean(),
            margin_l: l.margin().off_diagonal_mean(),
            gap_cu_g: mean_c_u - gas_cost,
            gap_cl_g: mean_c_l - gas_cost,
        })
    }

    fn series(&self) -> [f64; SERIES] {
        [
            self.profit_u,
            self.profit_l,
            self.mean_r_u,
            self.mean_c_u,
            self.mean_r_l,
            self.mean_c_l,
            self.margin_u,
            self.margin_l,
            self.gap_cu_g,
            self.gap_cl_g,
        ]
    }
}

/// One row of the metrics CSV: raw values followed by their EMA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub seed: u64,
    pub profit_u: f64,
    pub profit_l: f64,
    pub mean_r_u: f64,
    pub mean_c_u: f64,
    pub mean_r_l: f64,
    pub mean_c_l: f64,
    pub margin_u: f64,
    pub margin_l: f64,
    pub gap_cu_g: f64,
    pub gap_cl_g: f64,
    pub profit_u_ema: f64,
    pub profit_l_ema: f64,
    pub mean_r_u_ema: f64,
    pub mean_c_u_ema: f64,
    pub mean_r_l_ema: f64,
    pub mean_c_l_ema: f64,
    pub margin_u_ema: f64,
    pub margin_l_ema: f64,
    pub gap_cu_g_ema: f64,
    pub gap_cl_g_ema: f64,
}

impl MetricsRow {
    pub fn raw(&self) -> EpochMetrics {
        EpochMetrics {
            epoch: self.epoch,
            seed: self.seed,
            profit_u: self.profit_u,
            profit_l: self.profit_l,
            mean_r_u: self.mean_r_u,
            mean_c_u: self.mean_c_u,
            mean_r_l: self.mean_r_l,
            mean_c_l: self.mean_c_l,
            margin_u: self.margin_u,
            margin_l: self.margin_l,
            gap_cu_g: self.gap_cu_g,
            gap_cl_g: self.gap_cl_g,
        }
    }

    fn from_parts(m: &EpochMetrics, e: [f64; SERIES]) -> Self {
        Self {
            epoch: m.epoch,
            seed: m.seed,
            profit_u: m.profit_u,
            profit_l: m.profit_l,
            mean_r_u: m.mean_r_u,
            mean_c_u: m.mean_c_u,
            mean_r_l: m.mean_r_l,
            mean_c_l: m.mean_c_l,
            margin_u: m.margin_u,
            margin_l: m.margin_l,
            gap_cu_g: m.gap_cu_g,
            gap_cl_g: m.gap_cl_g,
            profit_u_ema: e[0],
            profit_l_ema: e[1],
            mean_r_u_ema: e[2],
            mean_c_u_ema: e[3],
            mean_r_l_ema: e[4],
            mean_c_l_ema: e[5],
            margin_u_ema: e[6],
            margin_l_ema: e[7],
            gap_cu_g_ema: e[8],
            gap_cl_g_ema: e[9],
        }
    }

    pub fn profit_ema(&self, p: Platform) -> f64 {
        match p {
            Platform::U => self.profit_u_ema,
            Platform::L => self.profit_l_ema,
        }
    }

    pub fn rate_ema(&self, p: Platform) -> f64 {
        match p {
            Platform::U => self.mean_r_u_ema,
            Platform::L => self.mean_r_l_ema,
        }
    }

    pub fn commission_ema(&self, p: Platform) -> f64 {
        match p {
            Platform::U => self.mean_c_u_ema,
            Platform::L => self.mean_c_l_ema,
        }
    }

    pub fn margin_ema(&self, p: Platform) -> f64 {
        match p {
            Platform::U => self.margin_u_ema,
            Platform::L => self.margin_l_ema,
        }
    }
}

/// `x̂_0 = x_0`, `x̂_t = α x_t + (1 − α) x̂_{t−1}`.
pub fn ema(series: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut prev: Option<f64> = None;
    for &x in series {
        let y = match prev {
            None => x,
            Some(p) => alpha * x + (1.0 - alpha) * p,
        };
        out.push(y);
        prev = Some(y);
    }
    out
}

/// Attaches EMA columns to a run's raw epoch metrics.
pub fn with_ema(raw: &[EpochMetrics], alpha: f64) -> Vec<MetricsRow> {
    let smoothed: Vec<Vec<f64>> = (0..SERIES)
        .map(|k| ema(&raw.iter().map(|m| m.series()[k]).collect::<Vec<_>>(), alpha))
        .collect();
    raw.iter()
        .enumerate()
        .map(|(t, m)| MetricsRow::from_parts(m, std::array::from_fn(|k| smoothed[k][t])))
        .collect()
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassificationThresholds {
    /// Fraction of the final epochs summarized.
    pub final_fraction: f64,
    /// Competitive-like when commission ≥ rate − this · price range.
    pub competitive_band: f64,
    /// Collusive-like when commission ≤ gas cost + this · price range.
    pub collusive_band: f64,
}

impl Default for ClassificationThresholds {
    fn default() -> Self {
        Self {
            final_fraction: 0.1,
            competitive_band: 0.15,
            collusive_band: 0.125,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarketOutcome {
    CompetitiveLike,
    CollusiveLike,
    Indeterminate,
}

/// Final-window averages of the EMA series for one platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformSummary {
    pub mean_rate: f64,
    pub mean_commission: f64,
    pub mean_margin: f64,
    pub commission_gap: f64,
    pub transit_gap: f64,
    /// Mean EMA profit over the window.
    pub end_profit: f64,
    /// Largest EMA profit over the whole run.
    pub peak_profit: f64,
    pub outcome: MarketOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollusionSummary {
    pub seed: u64,
    pub epochs: usize,
    pub window: usize,
    pub u: PlatformSummary,
    pub l: PlatformSummary,
}

impl CollusionSummary {
    pub fn platform(&self, p: Platform) -> &PlatformSummary {
        match p {
            Platform::U => &self.u,
            Platform::L => &self.l,
        }
    }
}

pub fn classify(
    mean_rate: f64,
    mean_commission: f64,
    config: &SimConfig,
    th: &ClassificationThresholds,
) -> MarketOutcome {
    let range = config.price_range();
    if mean_commission >= mean_rate - th.competitive_band * range {
        MarketOutcome::CompetitiveLike
    } else if mean_commission <= config.gas_cost + th.collusive_band * range {
        MarketOutcome::CollusiveLike
    } else {
        MarketOutcome::Indeterminate
    }
}

/// Number of trailing epochs in the summary window.
pub fn window_len(epochs: usize, final_fraction: f64) -> usize {
    ((epochs as f64 * final_fraction).ceil() as usize).clamp(1, epochs)
}

pub fn collusion_metrics(
    rows: &[MetricsRow],
    config: &SimConfig,
    th: &ClassificationThresholds,
) -> Result<CollusionSummary> {
    if rows.len() < 10 {
        return Err(Error::Usage(format!(
            "collusion summary needs at least 10 epochs, got {}",
            rows.len()
        )));
    }
    let window = window_len(rows.len(), th.final_fraction);
    let tail = &rows[rows.len() - window..];
    let mean = |f: &dyn Fn(&MetricsRow) -> f64| tail.iter().map(f).sum::<f64>() / window as f64;
    let summarize = |p: Platform| {
        let mean_rate = mean(&|r| r.rate_ema(p));
        let mean_commission = mean(&|r| r.commission_ema(p));
        PlatformSummary {
            mean_rate,
            mean_commission,
            mean_margin: mean(&|r| r.margin_ema(p)),
            commission_gap: mean_commission - config.gas_cost,
            transit_gap: mean_rate - config.transit_rate,
            end_profit: mean(&|r| r.profit_ema(p)),
            peak_profit: rows
                .iter()
                .map(|r| r.profit_ema(p))
                .fold(f64::NEG_INFINITY, f64::max),
            outcome: classify(mean_rate, mean_commission, config, th),
        }
    };
    Ok(CollusionSummary {
        seed: rows[0].seed,
        epochs: rows.len(),
        window,
        u: summarize(Platform::U),
        l: summarize(Platform::L),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_examples() {
        assert_eq!(ema(&[3.0, -1.0, 7.5], 1.0), vec![3.0, -1.0, 7.5]);
        assert_eq!(ema(&[0.0, 10.0], 0.5), vec![0.0, 5.0]);
        assert_eq!(ema(&[8.0, 4.0, 2.0], 0.5), vec![8.0, 6.0, 4.0]);
        assert!(ema(&[], 0.5).is_empty());
    }

    fn tape(rate: f64, commission: f64, epochs: usize) -> Vec<MetricsRow> {
        let raw: Vec<EpochMetrics> = (0..epochs)
            .map(|e| EpochMetrics {
                epoch: e,
                seed: 0,
                profit_u: 1.0,
                profit_l: 1.0,
                mean_r_u: rate,
                mean_c_u: commission,
                mean_r_l: rate,
                mean_c_l: commission,
                margin_u: rate - commission,
                margin_l: rate - commission,
                gap_cu_g: commission - 5.0,
                gap_cl_g: commission - 5.0,
            })
            .collect();
        with_ema(&raw, 0.5)
    }

    #[test]
    fn degenerate_tapes_classify() {
        let cfg = SimConfig::two_node_example(1.0);
        let th = ClassificationThresholds::default();
        let s = collusion_metrics(&tape(12.0, 12.0, 20), &cfg, &th).unwrap();
        assert_eq!(s.u.outcome, MarketOutcome::CompetitiveLike);
        assert_eq!(s.u.mean_margin, 0.0);
        let s = collusion_metrics(&tape(20.0, 5.0, 20), &cfg, &th).unwrap();
        assert_eq!(s.l.outcome, MarketOutcome::CollusiveLike);
        assert_eq!(s.l.commission_gap, 0.0);
        let s = collusion_metrics(&tape(20.0, 12.0, 20), &cfg, &th).unwrap();
        assert_eq!(s.u.outcome, MarketOutcome::Indeterminate);
        assert!(matches!(
            collusion_metrics(&tape(1.0, 1.0, 9), &cfg, &th),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn window_is_final_tenth() {
        assert_eq!(window_len(500, 0.1), 50);
        assert_eq!(window_len(10, 0.1), 1);
        assert_eq!(window_len(15, 0.1), 2);
    }

    #[test]
    fn metrics_csv_round_trip_and_columns() {
        let rows = tape(13.25, 7.125, 12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics(&path, &rows).unwrap();
        assert_eq!(read_metrics(&path).unwrap(), rows);
        let header = std::fs::read_to_string(&path).unwrap();
        let header = header.lines().next().unwrap();
        assert!(header.starts_with(
            "epoch,seed,profit_u,profit_l,mean_r_u,mean_c_u,mean_r_l,mean_c_l,margin_u,margin_l,gap_cu_g,gap_cl_g,profit_u_ema"
        ));
    }
}
