//! Report assembly and deterministic JSON output.
//!
//! Every run writes one JSON report.  Two runs with the same configuration
//! must produce byte-identical files, so maps are emitted in sorted key
//! order and every float is printed with 17 significant digits through a
//! fixed formatter.  No timestamps or absolute paths enter a report.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde_json::ser::{CompactFormatter, Formatter, Serializer};
use serde_json::{Map, Number, Value};
use todalax::grid::{GridField, ResidualReport};
use todalax::{CMatrix, C64};

use crate::config::DumpFormat;

/// One named residual line: worst value, quadratic mean, and the bound it
/// was held to.
#[derive(Clone, Copy, Debug)]
pub struct ResidualEntry {
    pub max_abs: f64,
    pub rms: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Accumulated outcome of one subcommand.
pub struct Report {
    command: String,
    slug: String,
    config: Map<String, Value>,
    residuals: BTreeMap<String, ResidualEntry>,
    artifacts: Vec<String>,
    extra: BTreeMap<String, Value>,
}

impl Report {
    /// `command` is the user-facing name ("cat limit"); `slug` names the
    /// report file and must be unique within a bundle.
    pub fn new(command: &str, slug: &str) -> Self {
        Report {
            command: command.into(),
            slug: slug.into(),
            config: Map::new(),
            residuals: BTreeMap::new(),
            artifacts: Vec::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn echo(&mut self, key: &str, value: Value) {
        self.config.insert(key.into(), value);
    }

    /// NaN never passes: the comparison is `max_abs <= tolerance`.
    pub fn push(&mut self, name: &str, max_abs: f64, rms: f64, tolerance: f64) {
        let pass = max_abs <= tolerance;
        self.residuals
            .insert(name.into(), ResidualEntry { max_abs, rms, tolerance, pass });
    }

    pub fn push_report(&mut self, name: &str, r: &ResidualReport, tolerance: f64) {
        self.push(name, r.max_abs, r.rms, tolerance);
    }

    /// Integer-valued check (violation counts, boolean defects): the
    /// tolerance is zero and the value doubles as the quadratic mean.
    pub fn push_count(&mut self, name: &str, count: usize) {
        self.push(name, count as f64, count as f64, 0.0);
    }

    pub fn add_artifact(&mut self, name: &str) {
        self.artifacts.push(name.into());
    }

    pub fn set_extra(&mut self, key: &str, value: Value) {
        self.extra.insert(key.into(), value);
    }

    pub fn passed(&self) -> bool {
        self.residuals.values().all(|e| e.pass)
    }

    pub fn slug(&self) -> &str {
        &self.slug
    }

    pub fn file_name(&self) -> String {
        format!("{}.json", self.slug)
    }

    pub fn to_value(&self) -> Value {
        let mut residuals = Map::new();
        for (name, e) in &self.residuals {
            let mut entry = Map::new();
            entry.insert("max_abs".into(), num(e.max_abs));
            entry.insert("rms".into(), num(e.rms));
            entry.insert("tolerance".into(), num(e.tolerance));
            entry.insert("pass".into(), Value::Bool(e.pass));
            residuals.insert(name.clone(), Value::Object(entry));
        }
        let mut top = Map::new();
        top.insert("command".into(), Value::String(self.command.clone()));
        top.insert("config_echo".into(), Value::Object(self.config.clone()));
        top.insert("residuals".into(), Value::Object(residuals));
        top.insert(
            "artifacts".into(),
            Value::Array(self.artifacts.iter().map(|a| Value::String(a.clone())).collect()),
        );
        for (k, v) in &self.extra {
            top.insert(k.clone(), v.clone());
        }
        Value::Object(top)
    }

    /// Serialize into `dir`, creating it if needed.  Returns the path of
    /// the report file.
    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(self.file_name());
        let mut buf = Vec::new();
        write_value(&mut buf, &self.to_value())?;
        buf.push(b'\n');
        fs::write(&path, buf)?;
        Ok(path)
    }
}

/// JSON numbers cannot hold NaN or infinities; residual math never
/// produces them on the shipped paths, but a corrupted value must not
/// panic the writer.  It is clamped and the pass flag has already judged
/// the raw value.
pub fn num(v: f64) -> Value {
    let safe = if v.is_finite() { v } else { f64::MAX };
    Value::Number(Number::from_f64(safe).expect("finite float"))
}

pub fn cnum(c: C64) -> Value {
    let mut m = Map::new();
    m.insert("re".into(), num(c.re));
    m.insert("im".into(), num(c.im));
    Value::Object(m)
}

struct SciFormatter;

impl Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        // 1 leading + 16 fractional digits: every f64 round-trips and the
        // text is invariant across runs.
        write!(writer, "{:.16e}", value)
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{:.16e}", value)
    }
}

pub fn write_value(w: &mut impl Write, v: &Value) -> io::Result<()> {
    let mut ser = Serializer::with_formatter(w, PrettyScientific::new());
    serde::Serialize::serialize(v, &mut ser).map_err(io::Error::other)
}

/// Two-space pretty printer that delegates float output to the scientific
/// formatter; everything else is the stock compact behaviour plus
/// indentation.
struct PrettyScientific {
    depth: usize,
    inner: CompactFormatter,
}

impl PrettyScientific {
    fn new() -> Self {
        PrettyScientific { depth: 0, inner: CompactFormatter }
    }

    fn newline<W: ?Sized + io::Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(b"\n")?;
        for _ in 0..self.depth {
            w.write_all(b"  ")?;
        }
        Ok(())
    }
}

impl Formatter for PrettyScientific {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        SciFormatter.write_f64(writer, value)
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        SciFormatter.write_f32(writer, value)
    }

    fn begin_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.depth += 1;
        self.inner.begin_array(writer)
    }

    fn end_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.depth -= 1;
        self.inner.end_array(writer)
    }

    fn begin_array_value<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_array_value(writer, first)?;
        if !first {
            writer.write_all(b" ")?;
        }
        Ok(())
    }

    fn begin_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.depth += 1;
        self.inner.begin_object(writer)
    }

    fn end_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.depth -= 1;
        self.newline(writer)?;
        writer.write_all(b"}")
    }

    fn begin_object_key<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        if !first {
            writer.write_all(b",")?;
        }
        self.newline(writer)
    }

    fn begin_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        writer.write_all(b": ")
    }
}

/// Write a scalar field dump in the requested encodings and return the
/// relative file names produced.  CSV columns: re, im, value_re,
/// value_im; JSON mirrors the same rows.
pub fn dump_scalar(
    field: &GridField<C64>,
    dir: &Path,
    stem: &str,
    format: DumpFormat,
) -> io::Result<Vec<String>> {
    let mut names = Vec::new();
    fs::create_dir_all(dir)?;
    if format.wants_csv() {
        let name = format!("{stem}.csv");
        let mut f = fs::File::create(dir.join(&name))?;
        field
            .write_csv(&mut f)
            .map_err(|e| io::Error::other(e.to_string()))?;
        names.push(name);
    }
    if format.wants_json() {
        let name = format!("{stem}.json");
        let rows = scalar_rows(field);
        let v = grid_dump_value(field, vec!["re", "im", "value_re", "value_im"], rows);
        let mut buf = Vec::new();
        write_value(&mut buf, &v)?;
        buf.push(b'\n');
        fs::write(dir.join(&name), buf)?;
        names.push(name);
    }
    Ok(names)
}

/// Matrix dump: the value columns list the entries row-major, real and
/// imaginary interleaved.
pub fn dump_matrix(
    field: &GridField<CMatrix>,
    dir: &Path,
    stem: &str,
    format: DumpFormat,
) -> io::Result<Vec<String>> {
    let mut names = Vec::new();
    fs::create_dir_all(dir)?;
    if format.wants_csv() {
        let name = format!("{stem}.csv");
        let mut f = fs::File::create(dir.join(&name))?;
        field
            .write_csv(&mut f)
            .map_err(|e| io::Error::other(e.to_string()))?;
        names.push(name);
    }
    if format.wants_json() {
        let name = format!("{stem}.json");
        let n = field.values.first().map_or(0, |m| m.rows());
        let mut cols = vec!["re".to_string(), "im".to_string()];
        for r in 0..n {
            for c in 0..n {
                cols.push(format!("m{r}{c}_re"));
                cols.push(format!("m{r}{c}_im"));
            }
        }
        let rows = matrix_rows(field);
        let v = grid_dump_value_owned(field, cols, rows);
        let mut buf = Vec::new();
        write_value(&mut buf, &v)?;
        buf.push(b'\n');
        fs::write(dir.join(&name), buf)?;
        names.push(name);
    }
    Ok(names)
}

fn scalar_rows(field: &GridField<C64>) -> Vec<Value> {
    let grid = &field.grid;
    let mut rows = Vec::new();
    for jy in 0..grid.ny {
        for ix in 0..grid.nx {
            if !grid.active(ix, jy) {
                continue;
            }
            let z = grid.point(ix, jy);
            let v = field.at(ix, jy);
            rows.push(Value::Array(vec![num(z.re), num(z.im), num(v.re), num(v.im)]));
        }
    }
    rows
}

fn matrix_rows(field: &GridField<CMatrix>) -> Vec<Value> {
    let grid = &field.grid;
    let mut rows = Vec::new();
    for jy in 0..grid.ny {
        for ix in 0..grid.nx {
            if !grid.active(ix, jy) {
                continue;
            }
            let z = grid.point(ix, jy);
            let m = field.at(ix, jy);
            let mut row = vec![num(z.re), num(z.im)];
            for r in 0..m.rows() {
                for c in 0..m.cols() {
                    let e = m[(r, c)];
                    row.push(num(e.re));
                    row.push(num(e.im));
                }
            }
            rows.push(Value::Array(row));
        }
    }
    rows
}

fn grid_dump_value<T>(field: &GridField<T>, cols: Vec<&str>, rows: Vec<Value>) -> Value {
    grid_dump_value_owned(field, cols.into_iter().map(String::from).collect(), rows)
}

fn grid_dump_value_owned<T>(field: &GridField<T>, cols: Vec<String>, rows: Vec<Value>) -> Value {
    let grid = &field.grid;
    let mut gv = Map::new();
    gv.insert("re_min".into(), num(grid.re_min));
    gv.insert("re_max".into(), num(grid.re_max));
    gv.insert("im_min".into(), num(grid.im_min));
    gv.insert("im_max".into(), num(grid.im_max));
    gv.insert("nx".into(), Value::Number(Number::from(grid.nx as u64)));
    gv.insert("ny".into(), Value::Number(Number::from(grid.ny as u64)));
    let mut top = Map::new();
    top.insert("grid".into(), Value::Object(gv));
    top.insert(
        "columns".into(),
        Value::Array(cols.into_iter().map(Value::String).collect()),
    );
    top.insert("rows".into(), Value::Array(rows));
    Value::Object(top)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_are_17_digit_scientific() {
        let mut buf = Vec::new();
        write_value(&mut buf, &num(0.1)).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1.0000000000000001e-1");
    }

    #[test]
    fn report_rounds_trip_and_sorts_keys() {
        let mut r = Report::new("demo cmd", "demo_cmd");
        r.push("zeta", 1.0, 0.5, 2.0);
        r.push("alpha", 3.0, 3.0, 1.0);
        let v = r.to_value();
        let names: Vec<&String> = v["residuals"].as_object().unwrap().keys().collect();
        assert_eq!(names, ["alpha", "zeta"]);
        assert!(v["residuals"]["zeta"]["pass"].as_bool().unwrap());
        assert!(!v["residuals"]["alpha"]["pass"].as_bool().unwrap());
        assert!(!r.passed());
    }

    #[test]
    fn nan_never_passes() {
        let mut r = Report::new("x", "x");
        r.push("bad", f64::NAN, f64::NAN, 1.0);
        assert!(!r.passed());
    }
}
