//! Per-step CSV log.

use std::fmt::Write as _;

use peftlab_core::adapters::Method;

pub const HEADER: &str = "step,loss,ms,trainable_params,method";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    /// Wall-clock milliseconds for the step; 0 when timing is disabled.
    pub ms: f64,
    pub trainable_params: usize,
    pub method: Method,
}

impl MetricsRow {
    /// One CSV line without the newline. Losses use shortest round-trip
    /// formatting so equal values always print identically.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        write!(s, "{},{},", self.step, self.loss).unwrap();
        if self.ms == 0.0 {
            s.push('0');
        } else {
            write!(s, "{:.3}", self.ms).unwrap();
        }
        write!(s, ",{},{}", self.trainable_params, self.method).unwrap();
        s
    }
}

/// Header plus rows, newline-terminated.
pub fn render(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(48 * (rows.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Parses a file written by [`render`] into `(step, loss)` pairs.
pub fn parse_losses(csv: &str) -> Option<Vec<(u64, f64)>> {
    let mut lines = csv.lines();
    if lines.next()? != HEADER {
        return None;
    }
    lines
        .map(|l| {
            let mut f = l.split(',');
            Some((f.next()?.parse().ok()?, f.next()?.parse().ok()?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_render_and_parse() {
        let rows = vec![
            MetricsRow {
                step: 1,
                loss: 5.545177444479562,
                ms: 0.0,
                trainable_params: 1200,
                method: Method::Qaa,
            },
            MetricsRow {
                step: 2,
                loss: 0.1,
                ms: 12.34567,
                trainable_params: 1200,
                method: Method::Qaa,
            },
        ];
        let csv = render(&rows);
        assert_eq!(
            csv,
            "step,loss,ms,trainable_params,method\n1,5.545177444479562,0,1200,qaa\n2,0.1,12.346,1200,qaa\n"
        );
        assert_eq!(parse_losses(&csv).unwrap(), vec![(1, 5.545177444479562), (2, 0.1)]);
        assert_eq!(render(&[]), "step,loss,ms,trainable_params,method\n");
        assert!(parse_losses("bad\n").is_none());
    }
}
