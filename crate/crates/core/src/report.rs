//! Bit-stable report emission: canonical JSON with 17-significant-digit
//! floats and sorted keys, and RFC-4180 CSV tables with '.' decimals.

use std::io::Write;
use std::path::Path;

use serde_json::Value;

use crate::bounds::BoundPart;
use crate::error::Result;
use crate::risk::RiskEstimate;

/// 17 significant digits: enough to reproduce any f64 exactly.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        // Reports never carry non-finite values; keep the file parseable.
        String::from("null")
    }
}

fn write_json(value: &Value, indent: usize, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else {
                out.push_str(&fmt17(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string escapes"));
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                out.push_str(&" ".repeat(indent + 2));
                write_json(item, indent + 2, out);
            }
            out.push('\n');
            out.push_str(&" ".repeat(indent));
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                out.push_str(&" ".repeat(indent + 2));
                out.push_str(&serde_json::to_string(key).expect("key escapes"));
                out.push_str(": ");
                write_json(&map[key.as_str()], indent + 2, out);
            }
            out.push('\n');
            out.push_str(&" ".repeat(indent));
            out.push('}');
        }
    }
}

/// Canonical rendering: sorted keys, fixed float format, trailing newline.
pub fn to_canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_json(value, 0, &mut out);
    out.push('\n');
    out
}

/// One table cell; floats render with 17 significant digits.
#[derive(Debug, Clone)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Float(x) => {
                if x.is_finite() {
                    fmt17(*x)
                } else {
                    String::new()
                }
            }
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

/// A named table destined for tables/<name>.csv.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        self.rows.push(row);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_path(path)
            .map_err(csv_io)?;
        w.write_record(&self.columns).map_err(csv_io)?;
        for row in &self.rows {
            let rendered: Vec<String> = row.iter().map(Cell::render).collect();
            w.write_record(&rendered).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long-format rows (t, term, value, stderr) for a bound part.
    pub fn from_bound_part(name: &str, nodes: &[f64], prefix: &str, part: &BoundPart) -> Table {
        let mut table = Table::new(name, &["t", "term", "value", "stderr"]);
        table.extend_bound_part(nodes, prefix, part);
        table
    }

    pub fn extend_bound_part(&mut self, nodes: &[f64], prefix: &str, part: &BoundPart) {
        for term in &part.terms {
            for (t, v) in nodes.iter().zip(term.per_node.iter()) {
                self.push(vec![
                    Cell::Float(*t),
                    Cell::Text(format!("{prefix}.{}", term.name)),
                    Cell::Float(*v),
                    Cell::Empty,
                ]);
            }
        }
        for (t, v) in nodes.iter().zip(part.per_node.iter()) {
            self.push(vec![
                Cell::Float(*t),
                Cell::Text(format!("{prefix}.total")),
                Cell::Float(*v),
                Cell::Empty,
            ]);
        }
        self.push(vec![
            Cell::Empty,
            Cell::Text(format!("{prefix}.average")),
            Cell::Float(part.average),
            part.stderr.map_or(Cell::Empty, Cell::Float),
        ]);
    }

    pub fn extend_risk(&mut self, nodes: &[f64], name: &str, est: &RiskEstimate) {
        for (t, v) in nodes.iter().zip(est.per_node.iter()) {
            self.push(vec![
                Cell::Float(*t),
                Cell::Text(name.to_string()),
                Cell::Float(*v),
                Cell::Empty,
            ]);
        }
        self.push(vec![
            Cell::Empty,
            Cell::Text(format!("{name}.average")),
            Cell::Float(est.value),
            Cell::Float(est.stderr),
        ]);
    }
}

fn csv_io(e: csv::Error) -> crate::error::Error {
    crate::error::Error::Io(std::io::Error::other(e))
}

/// Writes bytes only if the content differs, creating parent directories.
pub fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(content.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_json_sorts_keys_and_pins_floats() {
        let v = json!({"b": 1.5, "a": {"z": 2u64, "y": [0.1]}});
        let text = to_canonical_json(&v);
        let a_pos = text.find("\"a\"").unwrap();
        let b_pos = text.find("\"b\"").unwrap();
        assert!(a_pos < b_pos);
        assert!(text.contains("1.5000000000000000e0"));
        assert!(text.contains("1.0000000000000001e-1"));
        assert!(text.contains("\"z\": 2"));
    }

    #[test]
    fn fmt17_round_trips_f64() {
        for &x in &[0.1, -0.45136081579927445, 1.0 / 3.0, 6.02e23, -5e-324, 0.0] {
            let back: f64 = fmt17(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x}");
        }
    }

    #[test]
    fn canonical_json_is_deterministic() {
        let v = json!({"k": [1.0, 2.0, 3.0], "m": {"x": true}});
        assert_eq!(to_canonical_json(&v), to_canonical_json(&v));
    }

    #[test]
    fn csv_table_renders_rfc4180() {
        let dir = std::env::temp_dir().join("latent-reuse-report-test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut t = Table::new("demo", &["t", "term", "value", "stderr"]);
        t.push(vec![
            Cell::Float(0.25),
            Cell::Text("lower.signal".into()),
            Cell::Float(1.0),
            Cell::Empty,
        ]);
        let path = dir.join("demo.csv");
        t.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,term,value,stderr\r\n"));
        assert!(text.contains("2.5000000000000000e-1,lower.signal,1.0000000000000000e0,\r\n"));
    }
}
