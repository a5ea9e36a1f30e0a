//! Tab-separated click log files.
//!
//! One record per line:
//!
//! ```text
//! session_id TAB query TAB doc_id TAB label TAB dense_csv TAB sparse_csv
//! ```
//!
//! `dense_csv` holds the twelve searcher/result features. `sparse_csv` is
//! `region,city` where either slot may be empty for a missing id. Text
//! relevance features are not stored; they are recomputed from the index
//! on load, which also resolves the result title and body.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::graph::NodeId;
use crate::index::InvertedIndex;
use crate::ranker::{tr_dense, ClickRecord, DenseFeatures, SparseFeatures};

#[derive(Debug, Error)]
pub enum ClickLogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("record {index}: query contains a tab or line break")]
    BadQuery { index: usize },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: unknown result id {id}")]
    UnknownDoc { line: usize, id: u64 },
}

fn malformed(line: usize, msg: impl Into<String>) -> ClickLogError {
    ClickLogError::Malformed {
        line,
        msg: msg.into(),
    }
}

fn opt_u32(s: &str, line: usize, what: &str) -> Result<Option<u32>, ClickLogError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<u32>()
        .map(Some)
        .map_err(|_| malformed(line, format!("bad {what} {s:?}")))
}

pub fn write_click_log<W: Write>(
    mut w: W,
    records: &[ClickRecord],
) -> Result<(), ClickLogError> {
    for (index, r) in records.iter().enumerate() {
        if r.query.contains(['\t', '\n', '\r']) {
            return Err(ClickLogError::BadQuery { index });
        }
        let dense: Vec<String> = r.dense.0.iter().map(|v| v.to_string()).collect();
        let region = r.sparse.region_id.map_or(String::new(), |v| v.to_string());
        let city = r.sparse.city_id.map_or(String::new(), |v| v.to_string());
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{},{}",
            r.session_id,
            r.query,
            r.doc_id.0,
            r.label,
            dense.join(","),
            region,
            city,
        )?;
    }
    Ok(())
}

pub fn read_click_log<R: BufRead>(
    r: R,
    idx: &InvertedIndex,
) -> Result<Vec<ClickRecord>, ClickLogError> {
    let mut records = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let n = n + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(malformed(n, format!("expected 6 fields, got {}", fields.len())));
        }
        let session_id: u64 = fields[0]
            .parse()
            .map_err(|_| malformed(n, format!("bad session id {:?}", fields[0])))?;
        let query = fields[1].to_string();
        let doc_raw: u64 = fields[2]
            .parse()
            .map_err(|_| malformed(n, format!("bad result id {:?}", fields[2])))?;
        let label: u8 = match fields[3] {
            "0" => 0,
            "1" => 1,
            other => return Err(malformed(n, format!("bad label {other:?}"))),
        };
        let dense_parts: Vec<&str> = fields[4].split(',').collect();
        if dense_parts.len() != DenseFeatures::DIM {
            return Err(malformed(
                n,
                format!(
                    "expected {} dense features, got {}",
                    DenseFeatures::DIM,
                    dense_parts.len()
                ),
            ));
        }
        let mut dense = [0.0f64; 12];
        for (slot, part) in dense.iter_mut().zip(&dense_parts) {
            *slot = part
                .parse()
                .map_err(|_| malformed(n, format!("bad dense feature {part:?}")))?;
        }
        let sparse_parts: Vec<&str> = fields[5].split(',').collect();
        if sparse_parts.len() != 2 {
            return Err(malformed(n, "sparse field must be region,city"));
        }
        let sparse = SparseFeatures {
            region_id: opt_u32(sparse_parts[0], n, "region id")?,
            city_id: opt_u32(sparse_parts[1], n, "city id")?,
        };
        let doc_id = NodeId(doc_raw);
        let doc = idx
            .doc(doc_id)
            .ok_or(ClickLogError::UnknownDoc { line: n, id: doc_raw })?;
        records.push(ClickRecord {
            session_id,
            query: query.clone(),
            doc_id,
            doc_title: doc.title.clone(),
            doc_body: doc.body.clone(),
            dense: DenseFeatures(dense),
            sparse,
            tr_dense: tr_dense(idx, &query, doc),
            label,
        });
    }
    Ok(records)
}

pub fn save_click_log<P: AsRef<Path>>(
    path: P,
    records: &[ClickRecord],
) -> Result<(), ClickLogError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_click_log(&mut w, records)?;
    w.flush()?;
    Ok(())
}

pub fn load_click_log<P: AsRef<Path>>(
    path: P,
    idx: &InvertedIndex,
) -> Result<Vec<ClickRecord>, ClickLogError> {
    read_click_log(BufReader::new(File::open(path)?), idx)
}
