//! Tab-separated embedding tables.
//!
//! One item per line: the item id, then `D` decimal floats, all separated by
//! tabs. Lines starting with `#` are comments; a comment of the form
//! `# strategy=v4` tags a fused table with the strategy that produced it.
//! Floats are written in shortest round-trip form, so save→load is exact.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::{ItemEmbeddingTable, Modality, RawModalityTable, Strategy};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub item_ids: Vec<String>,
    pub vectors: Tensor,
    pub strategy: Option<Strategy>,
}

impl EmbeddingFile {
    pub fn into_modality(self, modality: Modality) -> RawModalityTable {
        RawModalityTable {
            item_ids: self.item_ids,
            vectors: self.vectors,
            modality,
        }
    }

    pub fn into_item_table(self) -> ItemEmbeddingTable {
        ItemEmbeddingTable {
            item_ids: self.item_ids,
            vectors: self.vectors,
            strategy: self.strategy,
        }
    }
}

pub fn load_embedding_table(path: impl AsRef<Path>) -> Result<EmbeddingFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_embedding_table(&text, path)
}

pub fn parse_embedding_table(text: &str, path: &Path) -> Result<EmbeddingFile> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut ids = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut data = Vec::new();
    let mut width = None;
    let mut strategy = None;

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(tag) = comment.trim().strip_prefix("strategy=") {
                strategy = Some(tag.trim().parse().map_err(|e: Error| err(lineno, e.to_string()))?);
            }
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default();
        if id.is_empty() {
            return Err(err(lineno, "missing item id".into()));
        }
        if let Some(first) = seen.insert(id.to_string(), lineno) {
            return Err(err(
                lineno,
                format!("duplicate item id {id:?} (first seen on line {first})"),
            ));
        }
        let start = data.len();
        for (col, field) in fields.enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| err(lineno, format!("column {}: {field:?} is not a number", col + 2)))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("column {}: non-finite value", col + 2)));
            }
            data.push(v);
        }
        let n = data.len() - start;
        if n == 0 {
            return Err(err(lineno, "row has no values".into()));
        }
        match width {
            None => width = Some(n),
            Some(w) if w != n => {
                return Err(err(lineno, format!("ragged row: {n} values, expected {w}")));
            }
            _ => {}
        }
        ids.push(id.to_string());
    }
    let Some(width) = width else {
        return Err(err(0, "no embedding rows".into()));
    };
    Ok(EmbeddingFile {
        vectors: Tensor::new(&[ids.len(), width], data)?,
        item_ids: ids,
        strategy,
    })
}

pub fn format_embedding_table(item_ids: &[String], vectors: &Tensor, strategy: Option<Strategy>) -> Result<String> {
    if vectors.rank() != 2 || vectors.rows() != item_ids.len() {
        return Err(Error::dim(
            "write_embedding_table",
            format!("{} ids for {:?}", item_ids.len(), vectors.shape()),
        ));
    }
    let mut out = String::new();
    if let Some(s) = strategy {
        writeln!(out, "# strategy={s}").unwrap();
    }
    for (i, id) in item_ids.iter().enumerate() {
        if id.is_empty() || id.contains(['\t', '\n', '\r']) || id.starts_with('#') {
            return Err(Error::invalid(format!("item id {id:?} cannot be written to TSV")));
        }
        out.push_str(id);
        for v in vectors.row(i) {
            write!(out, "\t{v}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_embedding_table(
    path: impl AsRef<Path>,
    item_ids: &[String],
    vectors: &Tensor,
    strategy: Option<Strategy>,
) -> Result<()> {
    let path = path.as_ref();
    let text = format_embedding_table(item_ids, vectors, strategy)?;
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
