//! Ranked result tables in CSV, aligned text and JSON form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{class_stats, ClassStats, Direction, MetricRecord, ScoreCard, ScoreWeights};
use crate::error::{Error, Result};

/// Column holding the relative score.
pub const SCORE_COLUMN: &str = "Score";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    Best,
    Second,
    None,
}

impl Mark {
    fn as_str(self) -> &'static str {
        match self {
            Mark::Best => "best",
            Mark::Second => "second",
            Mark::None => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub rank: usize,
    pub name: String,
    /// One entry per column; `None` where the card has no score.
    pub values: Vec<Option<f64>>,
    pub marks: Vec<Mark>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
}

fn metric_names(card: &ScoreCard) -> Vec<&str> {
    let mut names: Vec<&str> = card.aggregate.iter().map(|m| m.name.as_str()).collect();
    names.sort_unstable();
    names
}

/// Ranks cards by Score (ascending, ties by name, unscored last) and
/// marks the best and second-best value in every column.
pub fn render_leaderboard(cards: &[ScoreCard]) -> Result<Leaderboard> {
    let Some(first) = cards.first() else {
        return Ok(Leaderboard { columns: Vec::new(), rows: Vec::new() });
    };
    let reference = metric_names(first);
    for card in &cards[1..] {
        if metric_names(card) != reference {
            return Err(Error::Scoring {
                metric: reference.join(","),
                reason: format!("card `{}` reports a different metric set", card.name),
            });
        }
    }
    let mut columns: Vec<Column> = first
        .aggregate
        .iter()
        .map(|m| Column { name: m.name.clone(), direction: m.direction })
        .collect();
    columns.push(Column { name: SCORE_COLUMN.into(), direction: Direction::LowerBetter });

    let mut order: Vec<&ScoreCard> = cards.iter().collect();
    order.sort_by(|a, b| match (a.score, b.score) {
        (Some(x), Some(y)) => x.total_cmp(&y).then_with(|| a.name.cmp(&b.name)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.name.cmp(&b.name),
    });

    let mut rows: Vec<Row> = order
        .iter()
        .enumerate()
        .map(|(i, card)| {
            let mut values: Vec<Option<f64>> =
                columns[..columns.len() - 1].iter().map(|c| card.metric(&c.name)).collect();
            values.push(card.score);
            Row { rank: i + 1, name: card.name.clone(), marks: vec![Mark::None; values.len()], values }
        })
        .collect();

    for (j, col) in columns.iter().enumerate() {
        let mut distinct: Vec<f64> = rows.iter().filter_map(|r| r.values[j]).collect();
        distinct.sort_by(|a, b| match col.direction {
            Direction::LowerBetter => a.total_cmp(b),
            Direction::HigherBetter => b.total_cmp(a),
        });
        distinct.dedup();
        for row in &mut rows {
            row.marks[j] = match row.values[j] {
                Some(v) if Some(&v) == distinct.first() => Mark::Best,
                Some(v) if Some(&v) == distinct.get(1) => Mark::Second,
                _ => Mark::None,
            };
        }
    }
    Ok(Leaderboard { columns, rows })
}

fn fmt_value(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

impl Leaderboard {
    /// Delimited form: every value column is followed by `<name>_flag`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["rank".to_string(), "method".to_string()];
        for c in &self.columns {
            header.push(c.name.clone());
            header.push(format!("{}_flag", c.name));
        }
        w.write_record(&header).map_err(csv_err)?;
        for row in &self.rows {
            let mut rec = vec![row.rank.to_string(), row.name.clone()];
            for (v, m) in row.values.iter().zip(&row.marks) {
                rec.push(v.map(|v| v.to_string()).unwrap_or_default());
                rec.push(m.as_str().into());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
    }

    /// Aligned plain text. `*` marks the best value, `+` the second best.
    pub fn to_text(&self) -> String {
        let mut header = vec!["#".to_string(), "Method".to_string()];
        header.extend(self.columns.iter().map(|c| {
            let arrow = match c.direction {
                Direction::LowerBetter => "↓",
                Direction::HigherBetter => "↑",
            };
            format!("{}{arrow}", c.name)
        }));
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![r.rank.to_string(), r.name.clone()];
                cells.extend(r.values.iter().zip(&r.marks).map(|(v, m)| {
                    let tag = match m {
                        Mark::Best => "*",
                        Mark::Second => "+",
                        Mark::None => " ",
                    };
                    format!("{}{tag}", fmt_value(*v))
                }));
                cells
            })
            .collect();
        let mut out = align(&header, &body);
        out.push_str("* best, + second best\n");
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn names(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.name.as_str()).collect()
    }
}

fn align(header: &[String], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                let pad = w - c.chars().count();
                if i == 1 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header);
    for row in body {
        line(row);
    }
    out
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

/// Parses `method,<metric>...` rows into aggregate-only cards and scores
/// each of them against the row named `baseline`.
pub fn cards_from_csv(text: &str, baseline: &str, weights: &ScoreWeights) -> Result<Vec<ScoreCard>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.len() < 2 {
        return Err(Error::Config("results table needs a method column and at least one metric".into()));
    }
    let mut directions = Vec::new();
    for name in headers.iter().skip(1) {
        let dir = Direction::of(name)
            .ok_or_else(|| Error::Config(format!("metric `{name}` has no known direction")))?;
        directions.push((name.to_string(), dir));
    }
    let mut cards = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let metrics = directions
            .iter()
            .zip(rec.iter().skip(1))
            .map(|((name, dir), cell)| {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value `{cell}` for {name}")))?;
                MetricRecord::new(name, *dir, v)
            })
            .collect::<Result<Vec<_>>>()?;
        cards.push(ScoreCard::from_aggregate(&rec[0], metrics));
    }
    let base = cards
        .iter()
        .find(|c| c.name == baseline)
        .map(|c| c.aggregate.clone())
        .ok_or_else(|| Error::Config(format!("baseline row `{baseline}` not found")))?;
    cards.into_iter().map(|c| c.with_baseline(&base, weights)).collect()
}

/// Per-method, per-metric descriptive statistics over class means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTable {
    pub metrics: Vec<String>,
    /// method → metric → statistics, in insertion order of methods.
    pub rows: Vec<(String, BTreeMap<String, ClassStats>)>,
}

impl ClassTable {
    /// Statistics from the per-class aggregates of evaluated cards. Cards
    /// without class labels are skipped; `None` when no card has any.
    pub fn from_cards(cards: &[ScoreCard]) -> Result<Option<Self>> {
        let mut table = ClassTable { metrics: Vec::new(), rows: Vec::new() };
        for card in cards.iter().filter(|c| !c.per_class.is_empty()) {
            let mut per_metric: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
            for (class, records) in &card.per_class {
                for m in records {
                    per_metric.entry(m.name.clone()).or_default().insert(class.clone(), m.value);
                }
            }
            table.push(&card.name, &per_metric)?;
        }
        Ok((!table.rows.is_empty()).then_some(table))
    }

    /// Parses long-format rows `method,class,<metric>...`.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(csv_err)?.clone();
        if headers.len() < 3 {
            return Err(Error::Config("per-class table needs method, class and metric columns".into()));
        }
        let names: Vec<String> = headers.iter().skip(2).map(String::from).collect();
        let mut methods: Vec<(String, BTreeMap<String, BTreeMap<String, f64>>)> = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(csv_err)?;
            let method = &rec[0];
            let idx = match methods.iter().position(|(m, _)| m == method) {
                Some(i) => i,
                None => {
                    methods.push((method.to_string(), BTreeMap::new()));
                    methods.len() - 1
                }
            };
            for (name, cell) in names.iter().zip(rec.iter().skip(2)) {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value `{cell}` for {name}")))?;
                methods[idx].1.entry(name.clone()).or_default().insert(rec[1].to_string(), v);
            }
        }
        let mut table = ClassTable { metrics: Vec::new(), rows: Vec::new() };
        for (method, per_metric) in &methods {
            table.push(method, per_metric)?;
        }
        Ok(table)
    }

    fn push(&mut self, method: &str, per_metric: &BTreeMap<String, BTreeMap<String, f64>>) -> Result<()> {
        let mut stats = BTreeMap::new();
        for (metric, values) in per_metric {
            if !self.metrics.contains(metric) {
                self.metrics.push(metric.clone());
            }
            stats.insert(metric.clone(), class_stats(values)?);
        }
        self.rows.push((method.to_string(), stats));
        Ok(())
    }

    pub fn get(&self, method: &str, metric: &str) -> Option<&ClassStats> {
        self.rows.iter().find(|(m, _)| m == method).and_then(|(_, s)| s.get(metric))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "metric", "mean", "median", "std"]).map_err(csv_err)?;
        for (method, stats) in &self.rows {
            for (metric, s) in stats {
                w.write_record([
                    method.clone(),
                    metric.clone(),
                    s.mean.to_string(),
                    s.median.to_string(),
                    s.std.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut header = vec!["".to_string(), "Method".to_string()];
        for m in &self.metrics {
            header.extend([format!("{m} mean"), format!("{m} median"), format!("{m} std")]);
        }
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, (method, stats))| {
                let mut cells = vec![(i + 1).to_string(), method.clone()];
                for m in &self.metrics {
                    match stats.get(m) {
                        Some(s) => cells.extend([s.mean, s.median, s.std].map(|v| format!("{v:.4}"))),
                        None => cells.extend(["-", "-", "-"].map(String::from)),
                    }
                }
                cells
            })
            .collect();
        align(&header, &body)
    }
}

/// One card's metric means per class, with a mean/median/std footer
/// computed across classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub method: String,
    pub metrics: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
    /// Empty when fewer than two classes are present.
    pub footer: Vec<(String, Vec<f64>)>,
}

impl ClassReport {
    /// `None` when the card carries no class labels.
    pub fn from_card(card: &ScoreCard) -> Result<Option<Self>> {
        if card.per_class.is_empty() {
            return Ok(None);
        }
        let metrics: Vec<String> = card.aggregate.iter().map(|m| m.name.clone()).collect();
        let rows: Vec<(String, Vec<Option<f64>>)> = card
            .per_class
            .iter()
            .map(|(class, recs)| {
                let vals = metrics
                    .iter()
                    .map(|m| recs.iter().find(|r| &r.name == m).map(|r| r.value))
                    .collect();
                (class.clone(), vals)
            })
            .collect();
        let mut footer = Vec::new();
        if rows.len() >= 2 {
            let mut stats = Vec::new();
            for (j, m) in metrics.iter().enumerate() {
                let vals: Vec<f64> = rows.iter().filter_map(|(_, v)| v[j]).collect();
                stats.push(super::describe(&vals).map_err(|e| Error::Scoring {
                    metric: m.clone(),
                    reason: e.to_string(),
                })?);
            }
            footer.push(("mean".to_string(), stats.iter().map(|s| s.mean).collect()));
            footer.push(("median".to_string(), stats.iter().map(|s| s.median).collect()));
            footer.push(("std".to_string(), stats.iter().map(|s| s.std).collect()));
        }
        Ok(Some(Self { method: card.name.clone(), metrics, rows, footer }))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string(), "class".to_string()];
        header.extend(self.metrics.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (class, vals) in &self.rows {
            let mut rec = vec![self.method.clone(), class.clone()];
            rec.extend(vals.iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        for (label, vals) in &self.footer {
            let mut rec = vec![self.method.clone(), label.clone()];
            rec.extend(vals.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut header = vec!["".to_string(), "Class".to_string()];
        header.extend(self.metrics.iter().cloned());
        let mut body: Vec<Vec<String>> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, (class, vals))| {
                let mut cells = vec![(i + 1).to_string(), class.clone()];
                cells.extend(vals.iter().map(|v| fmt_value(*v)));
                cells
            })
            .collect();
        for (label, vals) in &self.footer {
            let mut cells = vec![String::new(), label.clone()];
            cells.extend(vals.iter().map(|v| format!("{v:.4}")));
            body.push(cells);
        }
        format!("{}\n{}", self.method, align(&header, &body))
    }
}
