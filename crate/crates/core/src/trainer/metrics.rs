use std::fmt;

pub const METRICS_HEADER: &str = "step,train_loss,val_loss,lr,tokens,perplexity,wall_time";

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub lr: Option<f64>,
    pub tokens: u64,
    /// `exp(val_loss)` whenever `val_loss` is present.
    pub perplexity: Option<f64>,
    pub wall_time: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl fmt::Display for MetricsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{:.3}",
            self.step,
            opt(self.train_loss),
            opt(self.val_loss),
            self.lr.map(|x| format!("{x:e}")).unwrap_or_default(),
            self.tokens,
            opt(self.perplexity),
            self.wall_time
        )
    }
}

impl MetricsRecord {
    /// Parses a row written by `Display`.
    pub fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return None;
        }
        let o = |s: &str| -> Option<Option<f64>> {
            if s.is_empty() {
                Some(None)
            } else {
                s.parse().ok().map(Some)
            }
        };
        Some(Self {
            step: f[0].parse().ok()?,
            train_loss: o(f[1])?,
            val_loss: o(f[2])?,
            lr: o(f[3])?,
            tokens: f[4].parse().ok()?,
            perplexity: o(f[5])?,
            wall_time: f[6].parse().ok()?,
        })
    }
}
