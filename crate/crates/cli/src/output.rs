//! CSV result files and their provenance.

use std::io::Write;
use std::path::Path;

use irsim::report::ResultTable;

pub const CSV_HEADER: [&str; 8] = ["scenario_id", "curve", "x_name", "x_value", "metric", "value", "stderr", "trials"];

/// Tool version baked in at build time (git describe when available).
pub const VERSION: &str = env!("IRSIM_VERSION");

/// Shortest decimal that parses back to the same `f64`.
pub fn format_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        ryu::Buffer::new().format_finite(x).to_string()
    }
}

/// Scenario label carrying the tool version and seed.
pub fn provenance_id(name: &str, seed: u64) -> String {
    format!("{name};irsim {VERSION};seed={seed}")
}

pub fn stamp(table: &mut ResultTable, name: &str, seed: u64) {
    let id = provenance_id(name, seed);
    for row in &mut table.rows {
        row.scenario_id = id.clone();
    }
}

/// Write `table` (sorted by curve, then x) as LF-terminated CSV.
pub fn write_csv<W: Write>(table: &ResultTable, out: W) -> std::io::Result<()> {
    let mut sorted = table.clone();
    sorted.sort();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &sorted.rows {
        w.write_record([
            r.scenario_id.as_str(),
            r.curve.as_str(),
            r.x_name.as_str(),
            &format_f64(r.x_value),
            r.metric.as_str(),
            &format_f64(r.value),
            &format_f64(r.stderr),
            &r.trials.to_string(),
        ])?;
    }
    w.flush()
}

pub fn emit_csv(table: &ResultTable, path: &Path) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(table, file)
}
