use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::validate::{validate_record, FileKind};
use crate::corpus::CommentRecord;
use crate::error::{Error, Result};

/// Reads a line-delimited dataset, validating every line. Blank lines are
/// skipped; the first invalid line aborts with its line number.
pub fn read_dataset(path: &Path, kind: FileKind) -> Result<Vec<CommentRecord>> {
    let f = File::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    parse_dataset(BufReader::new(f), kind).map_err(|e| match e {
        Error::Data(m) => Error::data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_dataset(r: impl BufRead, kind: FileKind) -> Result<Vec<CommentRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("line {}: malformed JSON: {e}", i + 1)))?;
        let rec = validate_record(&raw, kind)
            .map_err(|v| Error::data(format!("line {}: {v}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records(w: impl Write, records: &[CommentRecord]) -> Result<()> {
    let mut w = BufWriter::new(w);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a dataset atomically (temp file then rename).
pub fn write_dataset(path: &Path, records: &[CommentRecord]) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    write_records(File::create(&tmp)?, records)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
