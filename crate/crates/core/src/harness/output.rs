//! Manifest and table writers. Every float is written with 17 significant
//! digits so a parse gives back the same bits.

use super::{HarnessError, ResultManifest, Series};
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    Table,
    Summary,
    #[default]
    Both,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(Format::Table),
            "summary" => Ok(Format::Summary),
            "both" => Ok(Format::Both),
            other => Err(format!("unknown format `{other}` (table, summary, both)")),
        }
    }
}

pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

struct Precise<'a>(PrettyFormatter<'a>);

impl Formatter for Precise<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

pub fn to_precise_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Precise(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("in-memory serialization");
    out.push(b'\n');
    out
}

pub fn write_manifest(manifest: &ResultManifest, path: &Path) -> Result<(), HarnessError> {
    std::fs::write(path, to_precise_json(manifest)).map_err(|e| HarnessError::io(path, e))
}

pub fn write_table(series: &Series, path: &Path) -> Result<(), HarnessError> {
    let err = |e: csv::Error| HarnessError::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(&series.columns).map_err(err)?;
    for row in &series.rows {
        w.write_record(row.iter().map(|v| format_f64(*v))).map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_table(path: &Path) -> Result<Series, HarnessError> {
    let err = |e: csv::Error| HarnessError::io(path, e);
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let columns = r.headers().map_err(err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(err)?;
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| HarnessError::io(path, format!("`{f}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Series { columns, rows })
}

/// Writes `manifest.json` and/or one `<series>.csv` per series into `dir`.
pub fn emit(manifest: &ResultManifest, dir: &Path, format: Format) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written = Vec::new();
    if format != Format::Table {
        let path = dir.join("manifest.json");
        write_manifest(manifest, &path)?;
        written.push(path);
    }
    if format != Format::Summary {
        for (name, series) in &manifest.series {
            let path = dir.join(format!("{name}.csv"));
            write_table(series, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}
