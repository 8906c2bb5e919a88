//! Daily metric rows and console tables.

use gridmarket_core::env::AgentTotals;

pub const METRIC_NAMES: [&str; 5] = [
    "Total Profit",
    "Emergency Purchase",
    "Total FIT",
    "P2P Trade Volume",
    "Average SoC",
];

/// Published daily means for MRDAC, VDA and Greedy, shown next to ours.
pub const PUBLISHED_PROFIT: [f64; 3] = [-123.81, -185.53, -221.02];
pub const PUBLISHED_EMERGENCY: [f64; 3] = [30.33, 34.00, 34.37];
pub(crate) const PUBLISHED_TABLE: [[f64; 3]; 5] = [
    PUBLISHED_PROFIT,
    PUBLISHED_EMERGENCY,
    [18.95, 32.24, 43.74],
    [10.58, 9.96, 9.55],
    [16.56, 16.69, 16.60],
];

/// The five community metrics of one day, or their mean over days.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricRow {
    pub values: [f64; 5],
}

impl MetricRow {
    pub fn from_totals(t: &AgentTotals) -> Self {
        Self {
            values: [t.total_profit, t.emergency_kwh, t.fit_kwh, t.p2p_kwh, t.avg_soc],
        }
    }

    pub fn total_profit(&self) -> f64 {
        self.values[0]
    }

    pub fn emergency(&self) -> f64 {
        self.values[1]
    }

    pub fn mean(rows: &[MetricRow]) -> Option<MetricRow> {
        if rows.is_empty() {
            return None;
        }
        let mut values = [0.0; 5];
        for r in rows {
            for (v, x) in values.iter_mut().zip(r.values) {
                *v += x;
            }
        }
        let n = rows.len() as f64;
        Some(MetricRow {
            values: values.map(|v| v / n),
        })
    }

    pub(crate) fn csv_fields(&self) -> Vec<String> {
        self.values.iter().map(|v| v.to_string()).collect()
    }
}

/// Left-aligned first column, right-aligned others.
pub(crate) fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for r in std::iter::once(header).chain(rows.iter().map(|r| r.as_slice())) {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |r: &[String]| -> String {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if k == 0 {
                    format!("{c:<w$}", w = width[k])
                } else {
                    format!("{c:>w$}", w = width[k])
                }
            })
            .collect();
        cells.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}
