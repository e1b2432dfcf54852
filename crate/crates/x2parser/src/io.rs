//! Dataset, frame and vocabulary files.
//!
//! * JSONL: one object per line with `id`, `locale`, `domain`,
//!   `utterance`, `tree` and an optional `split`.
//! * TSV: MTOP-style rows read through a user-supplied [`ColumnMap`]; the
//!   representation may omit tokens outside slots.
//! * Frame files: the flattened layers, one blank-line separated record per
//!   example (see [`write_frames`]).
//! * Vocabulary files: one symbol per line, in index order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use x2parser_core::corpus::{Dataset, Example, Split, Vocab};
use x2parser_core::decomposer::{format_frame, parse_frame, DecomposedFrame};
use x2parser_core::treebank::{align_decoupled, parse_top, serialize};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Record(RecordError),
    #[error("line {line}: column {column} is missing (row has {found} columns)")]
    MissingColumn { line: usize, column: usize, found: usize },
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

/// A record that could not be read, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub line: usize,
    pub id: Option<String>,
    pub message: String,
}

impl std::fmt::Display for RecordError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} (`{id}`): {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

/// Records read successfully plus the ones that were skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReadReport<T> {
    pub records: T,
    pub errors: Vec<RecordError>,
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(|source| IoError::File { path: path.into(), source })
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(|source| IoError::File { path: path.into(), source })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.into(), source }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    id: String,
    locale: String,
    domain: String,
    utterance: String,
    tree: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

/// One JSONL line, without the newline. Field order is fixed, so equal
/// examples always give identical bytes.
pub fn example_to_json(example: &Example) -> String {
    let record = JsonRecord {
        id: example.id.clone(),
        locale: example.locale.clone(),
        domain: example.domain.clone(),
        utterance: example.utterance(),
        tree: serialize(example.tree()),
        split: example.split,
    };
    serde_json::to_string(&record).expect("records serialize")
}

fn example_from_json(line: &str) -> Result<Example, (Option<String>, String)> {
    let record: JsonRecord = serde_json::from_str(line).map_err(|e| (None, e.to_string()))?;
    let id = Some(record.id.clone());
    let tree = parse_top(&record.tree).map_err(|e| (id.clone(), e.to_string()))?;
    let utterance: Vec<&str> = record.utterance.split_whitespace().collect();
    if utterance != tree.surfaces() {
        return Err((id, "utterance does not match the tree's tokens".into()));
    }
    Example::new(record.id, record.locale, record.domain, tree)
        .map(|e| e.with_split(record.split))
        .map_err(|e| (id, e.to_string()))
}

/// Reads JSONL from any reader. Blank lines are skipped. With `fail_fast`
/// the first bad record is returned as an error; otherwise bad records are
/// collected in the report.
pub fn parse_jsonl<R: Read>(reader: R, fail_fast: bool) -> Result<ReadReport<Dataset>, IoError> {
    let mut examples = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(io_err(Path::new("<input>")))?;
        if line.trim().is_empty() {
            continue;
        }
        match example_from_json(&line) {
            Ok(e) => examples.push(e),
            Err((id, message)) => {
                let err = RecordError { line: i + 1, id, message };
                if fail_fast {
                    return Err(IoError::Record(err));
                }
                errors.push(err);
            }
        }
    }
    Ok(ReadReport { records: Dataset::new(examples), errors })
}

pub fn read_jsonl(path: &Path, fail_fast: bool) -> Result<ReadReport<Dataset>, IoError> {
    parse_jsonl(open(path)?, fail_fast).map_err(|e| match e {
        IoError::File { source, .. } => IoError::File { path: path.into(), source },
        other => other,
    })
}

pub fn write_jsonl_to<W: Write>(mut writer: W, dataset: &Dataset) -> std::io::Result<()> {
    for e in dataset {
        writeln!(writer, "{}", example_to_json(e))?;
    }
    writer.flush()
}

pub fn write_jsonl(path: &Path, dataset: &Dataset) -> Result<(), IoError> {
    write_jsonl_to(create(path)?, dataset).map_err(io_err(path))
}

/// 0-based TSV column positions. Without an id column, ids are
/// `<file stem>-<line>`; without a locale column, `default_locale` is used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub id: Option<usize>,
    pub utterance: usize,
    pub domain: usize,
    pub representation: usize,
    pub locale: Option<usize>,
    pub default_locale: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self { id: None, utterance: 0, domain: 1, representation: 2, locale: None, default_locale: "en".into() }
    }
}

/// Reads tab-separated rows. Representations are aligned to the utterance
/// tokens, so decoupled forms are accepted. Rows that fail to align or
/// validate are reported and skipped; a missing column aborts the read.
pub fn read_mtop_tsv(path: &Path, columns: &ColumnMap) -> Result<ReadReport<Dataset>, IoError> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("tsv").to_string();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(open(path)?);
    let mut examples = Vec::new();
    let mut errors = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 1;
        if row.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let get = |column: usize| {
            row.get(column).ok_or(IoError::MissingColumn { line, column, found: row.len() })
        };
        let id = match columns.id {
            Some(c) => get(c)?.to_string(),
            None => format!("{stem}-{line}"),
        };
        let locale = match columns.locale {
            Some(c) => get(c)?.to_string(),
            None => columns.default_locale.clone(),
        };
        let utterance: Vec<&str> = get(columns.utterance)?.split_whitespace().collect();
        let domain = get(columns.domain)?;
        let representation = get(columns.representation)?;
        let result = align_decoupled(&utterance, representation)
            .map_err(|e| e.to_string())
            .and_then(|tree| Example::new(id.clone(), locale, domain, tree).map_err(|e| e.to_string()));
        match result {
            Ok(e) => examples.push(e),
            Err(message) => errors.push(RecordError { line, id: Some(id), message }),
        }
    }
    Ok(ReadReport { records: Dataset::new(examples), errors })
}

/// An example in flattened form: metadata, tokens and the three layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRecord {
    pub id: String,
    pub locale: String,
    pub domain: String,
    pub split: Option<Split>,
    pub tokens: Vec<String>,
    pub frame: DecomposedFrame,
}

impl FrameRecord {
    pub fn from_example(example: &Example) -> Self {
        Self {
            id: example.id.clone(),
            locale: example.locale.clone(),
            domain: example.domain.clone(),
            split: example.split,
            tokens: example.tokens().into_iter().map(String::from).collect(),
            frame: example.frame().clone(),
        }
    }
}

fn split_name(split: Split) -> String {
    serde_json::to_value(split).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

/// Writes each record as five lines followed by a blank line:
///
/// ```text
/// id<TAB>locale<TAB>domain[<TAB>split]
/// token<TAB>token...
/// COARSE_INTENT
/// intent tags, tab-separated
/// slot stacks, tab-separated, `|` inside a stack
/// ```
pub fn write_frames_to<W: Write>(mut writer: W, records: &[FrameRecord]) -> std::io::Result<()> {
    for r in records {
        let mut header = format!("{}\t{}\t{}", r.id, r.locale, r.domain);
        if let Some(s) = r.split {
            header.push('\t');
            header.push_str(&split_name(s));
        }
        writeln!(writer, "{header}\n{}\n{}\n", r.tokens.join("\t"), format_frame(&r.frame))?;
    }
    writer.flush()
}

pub fn write_frames(path: &Path, records: &[FrameRecord]) -> Result<(), IoError> {
    write_frames_to(create(path)?, records).map_err(io_err(path))
}

fn parse_record(lines: &[&str]) -> Result<FrameRecord, (Option<String>, String)> {
    let header: Vec<&str> = lines[0].split('\t').collect();
    let id = header.first().map(|s| s.to_string());
    if !(3..=4).contains(&header.len()) || lines.len() != 5 {
        return Err((id, format!("expected a 3- or 4-field header and 5 lines, found {} lines", lines.len())));
    }
    let split = match header.get(3) {
        Some(s) => Some(serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| (id.clone(), format!("unknown split `{s}`")))?),
        None => None,
    };
    let tokens: Vec<String> = lines[1].split('\t').map(String::from).collect();
    let frame = parse_frame(&lines[2..].join("\n")).map_err(|e| (id.clone(), e.to_string()))?;
    if frame.len() != tokens.len() {
        return Err((id, format!("{} tokens but {} tags", tokens.len(), frame.len())));
    }
    Ok(FrameRecord {
        id: header[0].to_string(),
        locale: header[1].to_string(),
        domain: header[2].to_string(),
        split,
        tokens,
        frame,
    })
}

/// Reads records written by [`write_frames_to`]. Malformed records are
/// reported with the line of their header.
pub fn parse_frames<R: Read>(reader: R) -> Result<ReadReport<Vec<FrameRecord>>, IoError> {
    let mut text = String::new();
    BufReader::new(reader).read_to_string(&mut text).map_err(io_err(Path::new("<input>")))?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    let mut start = 0;
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().chain(std::iter::once(&"")).enumerate() {
        if line.is_empty() {
            if !block.is_empty() {
                match parse_record(&block) {
                    Ok(r) => records.push(r),
                    Err((id, message)) => errors.push(RecordError { line: start + 1, id, message }),
                }
                block.clear();
            }
        } else {
            if block.is_empty() {
                start = i;
            }
            block.push(line);
        }
    }
    Ok(ReadReport { records, errors })
}

pub fn read_frames(path: &Path) -> Result<ReadReport<Vec<FrameRecord>>, IoError> {
    parse_frames(open(path)?)
}

pub fn write_vocab(path: &Path, vocab: &Vocab) -> Result<(), IoError> {
    let mut w = create(path)?;
    for s in vocab.symbols() {
        writeln!(w, "{s}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_vocab(path: &Path) -> Result<Vocab, IoError> {
    let symbols = open(path)?.lines().collect::<Result<Vec<_>, _>>().map_err(io_err(path))?;
    Ok(Vocab::from_symbols(symbols))
}
