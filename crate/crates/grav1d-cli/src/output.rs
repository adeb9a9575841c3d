//! Rendering of series, outer series, tables and reports in the three output formats.

use grav1d::series_core::fmt_rational;
use grav1d::{OuterSeries, Report, Series};
use serde_json::{json, Value};

use crate::config::Format;

/// A header plus string rows, rendered as CSV or Markdown.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// An empty table with the given column names.
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    /// CSV with the header line first.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).expect("writing to memory");
        for r in &self.rows {
            w.write_record(r).expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("flushing to memory")).expect("csv output is UTF-8")
    }

    /// A Markdown table.
    pub fn to_md(&self) -> String {
        let mut out = format!("| {} |\n", self.header.join(" | "));
        out += &format!("|{}\n", " --- |".repeat(self.header.len()));
        for r in &self.rows {
            out += &format!("| {} |\n", r.join(" | "));
        }
        out
    }
}

/// Rows `t_exponents, l, coefficient` of a series, in canonical order.
pub fn series_table(s: &Series, md: bool) -> Table {
    let mut t = Table::new(&["t_exponents", "l", "coefficient"]);
    for (m, c) in s.terms() {
        let l = if md { format!("l={}", m.l()) } else { m.l().to_string() };
        t.rows.push(vec![m.t_string(), l, fmt_rational(c)]);
    }
    t
}

/// Renders a series.
pub fn render_series(s: &Series, format: Format) -> String {
    match format {
        Format::Json => s.to_json_string() + "\n",
        Format::Csv => series_table(s, false).to_csv(),
        Format::Md => series_table(s, true).to_md(),
    }
}

/// Renders named series, e.g. `I_0 … I_K`.
pub fn render_named(items: &[(String, Series)], format: Format) -> String {
    match format {
        Format::Json => {
            let obj: serde_json::Map<String, Value> = items.iter().map(|(n, s)| (n.clone(), s.to_json())).collect();
            Value::Object(obj).to_string() + "\n"
        }
        Format::Csv | Format::Md => {
            let md = format == Format::Md;
            let mut t = Table::new(&["series", "t_exponents", "l", "coefficient"]);
            for (name, s) in items {
                for r in series_table(s, md).rows {
                    t.rows.push(std::iter::once(name.clone()).chain(r).collect());
                }
            }
            if md {
                t.to_md()
            } else {
                t.to_csv()
            }
        }
    }
}

/// Renders an outer series; CSV and Markdown add a leading slot-exponent column.
pub fn render_outer(o: &OuterSeries, format: Format) -> String {
    match format {
        Format::Json => o.to_json().to_string() + "\n",
        Format::Csv | Format::Md => {
            let md = format == Format::Md;
            let names: Vec<&str> = o.slots().iter().map(|s| s.name.as_str()).collect();
            let mut t = Table::new(&["slot_exponents", "t_exponents", "l", "coefficient"]);
            for (e, s) in o.terms() {
                let slot: Vec<String> = names.iter().zip(e).map(|(n, x)| format!("{n}^{x}")).collect();
                for r in series_table(s, md).rows {
                    t.rows.push(std::iter::once(slot.join("*")).chain(r).collect());
                }
            }
            if md {
                t.to_md()
            } else {
                t.to_csv()
            }
        }
    }
}

/// Renders a table; JSON becomes an array of objects keyed by the header.
pub fn render_table(t: &Table, format: Format) -> String {
    match format {
        Format::Json => {
            let rows: Vec<Value> = t
                .rows
                .iter()
                .map(|r| Value::Object(t.header.iter().cloned().zip(r.iter().map(|x| json!(x))).collect()))
                .collect();
            Value::Array(rows).to_string() + "\n"
        }
        Format::Csv => t.to_csv(),
        Format::Md => t.to_md(),
    }
}

/// Renders a report; JSON is `{"ok": bool, "checks": [...]}`.
pub fn render_report(r: &Report, format: Format) -> String {
    match format {
        Format::Json => json!({"ok": r.all_ok(), "checks": r.to_json()}).to_string() + "\n",
        Format::Csv | Format::Md => {
            let mut t = Table::new(&["name", "ok", "detail"]);
            for c in &r.checks {
                t.rows.push(vec![c.name.clone(), c.ok.to_string(), c.detail.clone()]);
            }
            if format == Format::Md {
                t.to_md()
            } else {
                t.to_csv()
            }
        }
    }
}
