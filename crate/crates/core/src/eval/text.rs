//! Aligned plain-text tables.

use std::fmt::Write as _;

use super::harness::{EvalReport, PrfSummary, Summary};

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let cols = self.header.len();
        let mut width = vec![0; cols];
        for r in std::iter::once(&self.header).chain(&self.rows) {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (k, (c, w)) in cells.iter().zip(&width).enumerate() {
                if k == 0 {
                    let _ = write!(s, "{c:<w$}");
                } else {
                    let _ = write!(s, "  {c:>w$}");
                }
            }
            s.trim_end().to_string() + "\n"
        };
        let mut out = line(&self.header);
        out.push_str(&line(
            &width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>(),
        ));
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }
}

fn pm(s: &Summary) -> String {
    format!("{:.4} ± {:.4}", s.mean, s.sd)
}

fn pct(s: &Summary) -> String {
    format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.sd)
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

fn prf_table(title: &str, rows: Vec<(String, &PrfSummary)>) -> String {
    if rows.is_empty() {
        return String::new();
    }
    let mut t = Table::new(&["model", "precision", "recall", "f1"]);
    for (name, p) in rows {
        t.row(vec![name, pct(&p.precision), pct(&p.recall), pct(&p.f1)]);
    }
    format!("{title}\n{}\n", t.render())
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Corpus: {} instances, {} annotators, {} annotations; {} runs; seed {}\n",
            self.corpus.instances,
            self.corpus.annotators,
            self.corpus.annotations,
            self.runs.len(),
            self.seed
        );
        out.push_str(&prf_table(
            "Majority vote (%)",
            self.summaries
                .iter()
                .filter_map(|s| s.majority.as_ref().map(|p| (s.model.name().to_string(), p)))
                .collect(),
        ));
        out.push_str(&prf_table(
            "Individual labels (%)",
            self.summaries
                .iter()
                .filter_map(|s| {
                    s.individual
                        .as_ref()
                        .map(|p| (s.model.name().to_string(), p))
                        .or_else(|| {
                            s.majority_vs_annotations
                                .as_ref()
                                .map(|p| (format!("{} (majority label)", s.model.name()), p))
                        })
                })
                .collect(),
        ));
        if let Some(r) = self.summaries.iter().find_map(|s| s.regression_mse) {
            let _ = writeln!(out, "Regressor squared error: {}\n", pm(&r));
        }
        if !self.correlations.is_empty() {
            let mut t = Table::new(&["estimator", "reference", "pearson r", "iterations"]);
            for c in &self.correlations {
                t.row(vec![
                    c.series.clone(),
                    c.reference.clone(),
                    c.summary.as_ref().map_or("undefined".into(), pm),
                    format!("{}/{}", c.summary.map_or(0, |s| s.n), c.per_iteration.len()),
                ]);
            }
            let _ = writeln!(out, "Uncertainty vs disagreement\n{}", t.render());
        }
        if let Some(m) = &self.pairwise {
            let mut header = vec![""];
            header.extend(m.names.iter().map(String::as_str));
            let mut t = Table::new(&header);
            for (name, row) in m.names.iter().zip(&m.values) {
                let mut cells = vec![name.clone()];
                cells.extend(row.iter().map(|v| format!("{v:.3}")));
                t.row(cells);
            }
            let _ = writeln!(out, "Estimator correlation\n{}", t.render());
        }
        if !self.buckets.is_empty() {
            let mut t = Table::new(&["estimator", "correct", "incorrect", "TP", "FP", "FN", "TN"]);
            for b in &self.buckets {
                let cell = |d: &super::Distribution| format!("{} (n={})", opt(d.mean), d.count);
                let k = &b.buckets;
                t.row(vec![
                    b.series.clone(),
                    cell(&k.correct),
                    cell(&k.incorrect),
                    cell(&k.tp),
                    cell(&k.fp),
                    cell(&k.fn_),
                    cell(&k.tn),
                ]);
            }
            let _ = writeln!(out, "Mean uncertainty by outcome\n{}", t.render());
        }
        if let Some(m) = &self.mismatch {
            let mut t = Table::new(&[
                "gold",
                "baseline",
                "multi-task",
                "count",
                "%",
                "heads +",
                "annotations +",
            ]);
            for c in &m.categories {
                t.row(vec![
                    u8::from(c.gold).to_string(),
                    u8::from(c.baseline).to_string(),
                    u8::from(c.multitask).to_string(),
                    c.count.to_string(),
                    format!("{:.2}", c.percent),
                    opt(c.mean_head_fraction),
                    opt(c.mean_annotation_fraction),
                ]);
            }
            let _ = writeln!(
                out,
                "Baseline / multi-task disagreements: {} of {}\n{}",
                m.disagreements,
                m.instances,
                t.render()
            );
        }
        if !self.ranges.is_empty() {
            let mut t = Table::new(&["estimator", "min", "max", "in range"]);
            for r in &self.ranges {
                t.row(vec![
                    r.series.clone(),
                    format!("{:.4}", r.min),
                    format!("{:.4}", r.max),
                    if r.within_bounds { "yes" } else { "no" }.into(),
                ]);
            }
            let _ = writeln!(out, "Uncertainty ranges\n{}", t.render());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_align() {
        let mut t = Table::new(&["name", "v"]);
        t.row(vec!["a".into(), "1.5".into()]);
        t.row(vec!["longer".into(), "10".into()]);
        let s = t.render();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "name      v");
        assert_eq!(lines[2], "a       1.5");
        assert_eq!(lines[3], "longer   10");
    }
}
