//! Flat result rows shared by Monte-Carlo and deterministic outputs.

use serde::{Deserialize, Serialize};

use crate::asymptotics::DetEquivResult;
use crate::model::linear_to_db;
use crate::montecarlo::{DetEquivSweep, Metric, MonteCarloResult};
use crate::transceiver::Protocol;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario_id: String,
    pub curve: String,
    pub x_name: String,
    pub x_value: f64,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    /// Zero for deterministic quantities.
    pub trials: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

/// Value of `metric` in a deterministic-equivalent result.
pub fn det_metric(r: &DetEquivResult, net_sum_rate: f64, metric: Metric) -> f64 {
    let k = r.k().max(1) as f64;
    match metric {
        Metric::MeanSinr => r.mean_gamma(),
        Metric::MeanSinrDb => linear_to_db(r.mean_gamma()),
        Metric::MeanRate => r.sum_rate / k,
        Metric::SumRate => r.sum_rate,
        Metric::NetSumRate => net_sum_rate,
    }
}

impl ResultTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push_mc(&mut self, result: &MonteCarloResult, curve: impl Fn(Protocol) -> String, metrics: &[Metric]) {
        for c in &result.curves {
            let name = curve(c.protocol);
            for p in &c.points {
                for &m in metrics {
                    let e = p.metric(m);
                    self.rows.push(ResultRow {
                        scenario_id: result.scenario_id.clone(),
                        curve: name.clone(),
                        x_name: result.x_name.clone(),
                        x_value: p.x,
                        metric: m.name().to_string(),
                        value: e.mean,
                        stderr: e.stderr,
                        trials: e.trials,
                    });
                }
            }
        }
    }

    pub fn push_det(&mut self, sweep: &DetEquivSweep, curve: impl Fn(Protocol) -> String, metrics: &[Metric]) {
        for (protocol, points) in &sweep.curves {
            let name = curve(*protocol);
            for (x, r, net) in points {
                for &m in metrics {
                    self.rows.push(ResultRow {
                        scenario_id: sweep.scenario_id.clone(),
                        curve: name.clone(),
                        x_name: sweep.x_name.clone(),
                        x_value: *x,
                        metric: m.name().to_string(),
                        value: det_metric(r, *net, m),
                        stderr: 0.0,
                        trials: 0,
                    });
                }
            }
        }
    }

    pub fn extend(&mut self, other: ResultTable) {
        self.rows.extend(other.rows);
    }

    /// Order rows by curve, then x; rows that tie keep their insertion order.
    pub fn sort(&mut self) {
        self.rows
            .sort_by(|a, b| a.curve.cmp(&b.curve).then(a.x_value.total_cmp(&b.x_value)));
    }

    pub fn find(&self, curve: &str, x: f64, metric: Metric) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.curve == curve && r.x_value == x && r.metric == metric.name())
    }

    pub fn curve(&self, curve: &str, metric: Metric) -> Vec<&ResultRow> {
        self.rows
            .iter()
            .filter(|r| r.curve == curve && r.metric == metric.name())
            .collect()
    }
}
