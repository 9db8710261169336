//! Interaction logs: one JSON object per line with keys `user_id`,
//! `history`, `target`, `label`. Any malformed line aborts the load.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionRecord {
    pub user_id: String,
    /// Item ids, oldest first.
    pub history: Vec<String>,
    pub target: String,
    pub label: u8,
}

pub fn load_interactions(path: impl AsRef<Path>) -> Result<Vec<InteractionRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    parse_interactions(BufReader::new(file), path)
}

pub fn parse_interactions<R: BufRead>(reader: R, path: &Path) -> Result<Vec<InteractionRecord>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let record: InteractionRecord =
            serde_json::from_str(&line).map_err(|e| err(lineno, format!("malformed record: {e}")))?;
        if record.label > 1 {
            return Err(err(lineno, format!("label must be 0 or 1, got {}", record.label)));
        }
        if record.target.is_empty() {
            return Err(err(lineno, "empty target item id".into()));
        }
        if record.history.iter().any(String::is_empty) {
            return Err(err(lineno, "empty item id in history".into()));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_interactions<W: Write>(records: &[InteractionRecord], mut out: W) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).expect("records always serialize");
        writeln!(out, "{line}").map_err(|e| Error::io("writing interactions", e))?;
    }
    Ok(())
}

pub fn save_interactions(path: impl AsRef<Path>, records: &[InteractionRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(file);
    write_interactions(records, &mut w)?;
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
