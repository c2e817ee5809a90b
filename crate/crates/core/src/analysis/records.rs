//! Structured text output: `[kind]` blocks of `key = value` lines and
//! whitespace-separated numeric tables.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub kind: String,
    pub fields: Vec<(String, String)>,
}

impl Record {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            fields: Vec::new(),
        }
    }

    pub fn field(mut self, key: impl Into<String>, value: impl fmt::Display) -> Self {
        self.fields.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[{}]", self.kind)?;
        for (k, v) in &self.fields {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

pub fn format_records(records: &[Record]) -> String {
    records.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("\n")
}

pub fn parse_records(text: &str) -> Result<Vec<Record>> {
    let mut out: Vec<Record> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(kind) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            out.push(Record::new(kind));
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::data(n + 1, "expected `[kind]` or `key = value`"))?;
        out.last_mut()
            .ok_or_else(|| Error::data(n + 1, "field before any `[kind]` line"))?
            .fields
            .push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// A plot-ready numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            title: title.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut title = String::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(t) = comment.strip_prefix("table:") {
                    title = t.trim().to_string();
                } else if columns.is_none() && !comment.is_empty() {
                    columns = Some(comment.split_whitespace().map(String::from).collect());
                }
                continue;
            }
            let cols = columns
                .as_ref()
                .ok_or_else(|| Error::data(n + 1, "data before the column header"))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|x| x.parse().map_err(|_| Error::data(n + 1, format!("bad number `{x}`"))))
                .collect::<Result<_>>()?;
            if row.len() != cols.len() {
                return Err(Error::data(
                    n + 1,
                    format!("{} values for {} columns", row.len(), cols.len()),
                ));
            }
            rows.push(row);
        }
        Ok(Self {
            title,
            columns: columns.ok_or_else(|| Error::data(0, "missing column header"))?,
            rows,
        })
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# table: {}", self.title)?;
        writeln!(f, "# {}", self.columns.join(" "))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
            writeln!(f, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip() {
        let recs = vec![
            Record::new("E").field("value", 0.5).field("sigma", 0.01),
            Record::new("S").field("value", 2.7),
        ];
        let text = format_records(&recs);
        assert_eq!(parse_records(&text).unwrap(), recs);
        assert_eq!(recs[0].get("sigma"), Some("0.01"));
        assert!(parse_records("value = 1").is_err());
    }

    #[test]
    fn tables_round_trip() {
        let mut t = Table::new("S vs g12", &["g12", "s", "sigma"]);
        t.push(vec![57.0, 2.6, 0.1]);
        t.push(vec![3.0, 1.3, 0.05]);
        let back = Table::parse(&t.to_string()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column("s").unwrap(), [2.6, 1.3]);
        assert!(Table::parse("# a b\n1 2 3\n").is_err());
        assert!(Table::parse("1 2\n").is_err());
    }
}
