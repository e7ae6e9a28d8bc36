//! File formats: trace JSONL, score/verdict/ROC/density CSVs, JSON reports.
//!
//! Every CSV may open with `#` comment lines carrying provenance; the readers
//! here skip them.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{DensityTable, ScoreEntry, ScoreSet, Verdict};
use crate::trace::{validate_trace, Label, SampleTrace};

pub const TOOL_NAME: &str = "acmia";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Who produced a report and from what configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl Provenance {
    /// Hashes the canonical JSON encoding of `config`.
    pub fn new<C: Serialize>(config: &C, seed: Option<u64>) -> Self {
        let bytes = serde_json::to_vec(config).expect("config serializes");
        Provenance {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            config_hash: sha256_hex(&bytes),
            seed,
        }
    }

    fn comment_line(&self) -> String {
        let seed = self
            .seed
            .map_or_else(|| "none".to_string(), |s| s.to_string());
        format!(
            "# {} {} config_hash={} seed={}\n",
            self.tool, self.version, self.config_hash, seed
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// A JSON report: provenance header followed by the body's fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub header: Provenance,
    #[serde(flatten)]
    pub body: T,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    })?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    })
}

/// Writes one trace per line.
pub fn write_traces(path: &Path, traces: &[SampleTrace]) -> Result<()> {
    let mut w = create(path)?;
    for t in traces {
        serde_json::to_writer(&mut w, t).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: 0,
            source,
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads and validates a trace JSONL file. Blank lines are skipped.
pub fn read_traces(path: &Path) -> Result<Vec<SampleTrace>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: SampleTrace = serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(validate_trace(raw)?);
    }
    crate::trace::check_unique_ids(&out)?;
    Ok(out)
}

fn csv_writer(
    path: &Path,
    header: Option<&Provenance>,
    extra_comments: &[String],
) -> Result<csv::Writer<BufWriter<File>>> {
    let mut w = create(path)?;
    if let Some(h) = header {
        w.write_all(h.comment_line().as_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    for c in extra_comments {
        writeln!(w, "# {c}").map_err(|e| Error::io(path, e))?;
    }
    Ok(csv::Writer::from_writer(w))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
}

fn finish<W: Write>(path: &Path, w: csv::Writer<W>) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
struct ScoreRow {
    id: String,
    label: String,
    score: f64,
}

/// `id,label,score`, one row per entry in order. Unlabeled rows have an empty label.
pub fn write_scores(path: &Path, s: &ScoreSet, header: Option<&Provenance>) -> Result<()> {
    let mut w = csv_writer(path, header, &[])?;
    for e in &s.entries {
        w.serialize(ScoreRow {
            id: e.id.clone(),
            label: e.label.as_str().to_string(),
            score: e.score,
        })
        .map_err(csv_err(path))?;
    }
    finish(path, w)
}

pub fn read_scores(path: &Path) -> Result<ScoreSet> {
    let mut r = csv_reader(path)?;
    let mut entries = Vec::new();
    for row in r.deserialize::<ScoreRow>() {
        let row = row.map_err(csv_err(path))?;
        let label = Label::parse(row.label.trim()).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            message: format!("unknown label {:?} for sample {}", row.label, row.id),
        })?;
        entries.push(ScoreEntry {
            id: row.id,
            label,
            score: row.score,
        });
    }
    let s = ScoreSet::new(entries);
    s.validate()?;
    Ok(s)
}

pub fn write_verdicts(path: &Path, v: &[Verdict], header: Option<&Provenance>) -> Result<()> {
    let mut w = csv_writer(path, header, &[])?;
    for row in v {
        w.serialize(row).map_err(csv_err(path))?;
    }
    finish(path, w)
}

pub fn read_verdicts(path: &Path) -> Result<Vec<Verdict>> {
    let mut r = csv_reader(path)?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err(path))
}

#[derive(Serialize, Deserialize)]
struct RocRow {
    fpr: f64,
    tpr: f64,
}

/// `fpr,tpr` rows.
pub fn write_roc_points(
    path: &Path,
    points: &[(f64, f64)],
    header: Option<&Provenance>,
) -> Result<()> {
    let mut w = csv_writer(path, header, &[])?;
    for &(fpr, tpr) in points {
        w.serialize(RocRow { fpr, tpr }).map_err(csv_err(path))?;
    }
    finish(path, w)
}

pub fn read_roc_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv_reader(path)?;
    r.deserialize::<RocRow>()
        .map(|row| row.map(|r| (r.fpr, r.tpr)))
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err(path))
}

/// `bin_left,bin_right,density_member,density_nonmember` rows; the mean gap
/// goes in a comment line.
pub fn write_density(path: &Path, d: &DensityTable, header: Option<&Provenance>) -> Result<()> {
    let comment = vec![format!(
        "normalization={} mean_gap={}",
        match d.normalization {
            crate::metrics::Normalization::Zscore => "zscore",
            crate::metrics::Normalization::Minmax => "minmax",
        },
        d.mean_gap
    )];
    let mut w = csv_writer(path, header, &comment)?;
    for b in &d.bins {
        w.serialize(b).map_err(csv_err(path))?;
    }
    finish(path, w)
}

pub fn read_density_bins(path: &Path) -> Result<Vec<crate::metrics::DensityBin>> {
    let mut r = csv_reader(path)?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub id: String,
    pub label: String,
    pub overlap: f64,
}

pub fn write_overlaps(path: &Path, rows: &[OverlapRow], header: Option<&Provenance>) -> Result<()> {
    let mut w = csv_writer(path, header, &[])?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    finish(path, w)
}

pub fn read_overlaps(path: &Path) -> Result<Vec<OverlapRow>> {
    let mut r = csv_reader(path)?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err(path))
}

/// `token_id,count` rows covering the whole vocabulary.
pub fn write_counts(path: &Path, counts: &[u64]) -> Result<()> {
    let mut w = csv_writer(path, None, &[])?;
    w.write_record(["token_id", "count"])
        .map_err(csv_err(path))?;
    for (i, c) in counts.iter().enumerate() {
        w.write_record([i.to_string(), c.to_string()])
            .map_err(csv_err(path))?;
    }
    finish(path, w)
}
