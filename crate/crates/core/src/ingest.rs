//! Report-table ingestion: CSV parsing, the cleaning rules applied to the
//! exported PAHO tables, row validation and deduplication.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epiweek::iso_weeks_in_year;

/// Calendar years covered by the bundled report corpus.
pub const DEFAULT_YEAR_RANGE: RangeInclusive<i32> = 2013..=2017;

/// Report columns, in canonical order.
pub const REPORT_COLUMNS: [&str; 8] = [
    "Country",
    "Epidemiological Weeks",
    "Suspected Cases",
    "Confirmed Cases",
    "Imported Cases",
    "Deaths",
    "Incidence Rate",
    "Population X 1000",
];

const YEAR_COLUMN: &str = "Year";

/// Substrings removed from country cells, in the order they are applied.
const COUNTRY_GARBAGE: [&str; 12] = [
    ">", "*", "(1)", "(2)", "(^)", "()", "#", "^", "?", "$", "/", "&",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read report file {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: no header row found; expected columns (any order): {}", REPORT_COLUMNS.join(", "))]
    UnknownHeader { file: String },
    #[error("{file}: unexpected column {column:?}; expected columns (any order): {}", REPORT_COLUMNS.join(", "))]
    UnexpectedColumn { file: String, column: String },
    #[error("{file}: no year given; pass --year or add a Year column")]
    MissingYear { file: String },
    #[error("{file}: malformed CSV: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
}

/// One uncleaned data line from a report file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawReportRow {
    pub country_raw: String,
    pub epi_week_raw: String,
    pub suspected_raw: String,
    pub confirmed_raw: String,
    pub imported_raw: String,
    pub deaths_raw: String,
    pub incidence_raw: String,
    pub population_k_raw: String,
    pub year: i32,
    pub source_file: String,
    pub source_line: u64,
}

/// A validated surveillance record keyed by `(country, year, week)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanRecord {
    pub country: String,
    pub year: i32,
    pub week: u32,
    pub suspected: u64,
    pub confirmed: u64,
    pub imported: Option<u64>,
    pub deaths: Option<u64>,
    /// Cases per 100,000.
    pub incidence_rate: Option<f64>,
    /// Population in thousands.
    pub population_k: Option<u64>,
    pub source_file: String,
    pub source_line: u64,
}

/// Identity of a surveillance record across every pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub country: String,
    pub year: i32,
    pub week: u32,
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/W{:02}", self.country, self.year, self.week)
    }
}

impl CleanRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            country: self.country.clone(),
            year: self.year,
            week: self.week,
        }
    }

    fn key_ref(&self) -> (&str, i32, u32) {
        (&self.country, self.year, self.week)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectCode {
    MissingWeek,
    MissingSuspected,
    MissingConfirmed,
    UnparseableNumber,
    EmptyCountry,
    WeekOutOfRange,
    YearOutOfRange,
    MalformedLine,
}

impl fmt::Display for RejectCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectReason {
    pub source_file: String,
    pub source_line: u64,
    pub code: RejectCode,
    pub detail: String,
}

impl RejectReason {
    fn new(file: &str, line: u64, code: RejectCode, detail: impl Into<String>) -> Self {
        Self {
            source_file: file.to_owned(),
            source_line: line,
            code,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    Country,
    Week,
    Suspected,
    Confirmed,
    Imported,
    Deaths,
    Incidence,
    Population,
    Year,
}

fn column_for(name: &str) -> Option<Column> {
    let name = name.trim();
    let cols = [
        Column::Country,
        Column::Week,
        Column::Suspected,
        Column::Confirmed,
        Column::Imported,
        Column::Deaths,
        Column::Incidence,
        Column::Population,
    ];
    REPORT_COLUMNS
        .iter()
        .zip(cols)
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, c)| c)
        .or_else(|| YEAR_COLUMN.eq_ignore_ascii_case(name).then_some(Column::Year))
}

/// Maps a candidate header record onto column slots. `Ok(None)` means the
/// record is not a header at all (no report column names in it).
fn header_layout(
    record: &csv::StringRecord,
    file: &str,
) -> Result<Option<Vec<Option<Column>>>, IngestError> {
    let layout: Vec<Option<Column>> = record.iter().map(column_for).collect();
    let found = layout.iter().flatten().filter(|c| **c != Column::Year).count();
    if found == 0 {
        return Ok(None);
    }
    let all_present = [
        Column::Country,
        Column::Week,
        Column::Suspected,
        Column::Confirmed,
        Column::Imported,
        Column::Deaths,
        Column::Incidence,
        Column::Population,
    ]
    .iter()
    .all(|c| layout.iter().filter(|l| **l == Some(*c)).count() == 1);
    if !all_present {
        return Err(IngestError::UnknownHeader { file: file.to_owned() });
    }
    if let Some((name, _)) = record
        .iter()
        .zip(&layout)
        .find(|(name, col)| col.is_none() && !name.trim().is_empty())
    {
        return Err(IngestError::UnexpectedColumn {
            file: file.to_owned(),
            column: name.to_owned(),
        });
    }
    Ok(Some(layout))
}

/// Parses one report table. Lines before the header row are preamble (titles,
/// logos), and after it blank lines and single-cell lines (notes, region
/// captions, data-source footers) are skipped. Everything else is a data line
/// and yields exactly one row or one reject.
///
/// `year` overrides any `Year` column.
pub fn parse_report_file(
    content: &[u8],
    source_file: &str,
    year: Option<i32>,
) -> Result<(Vec<RawReportRow>, Vec<RejectReason>), IngestError> {
    let content = content.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(content);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::None)
        .from_reader(content);

    let mut layout: Option<Vec<Option<Column>>> = None;
    let mut rows = Vec::new();
    let mut rejects = Vec::new();

    for result in reader.byte_records() {
        let record = result.map_err(|source| IngestError::Csv {
            file: source_file.to_owned(),
            source,
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);

        let Some(cols) = &layout else {
            if let Ok(text) = csv::StringRecord::from_byte_record(record.clone()) {
                layout = header_layout(&text, source_file)?;
                if layout.is_some() && year.is_none() && !layout.iter().flatten().any(|c| *c == Some(Column::Year)) {
                    return Err(IngestError::MissingYear { file: source_file.to_owned() });
                }
            }
            continue;
        };

        let nonblank = record.iter().filter(|f| !f.iter().all(u8::is_ascii_whitespace)).count();
        let first_only = nonblank == 1 && record.get(0).is_some_and(|f| !f.iter().all(u8::is_ascii_whitespace));
        if nonblank == 0 || first_only {
            continue;
        }

        let text = match csv::StringRecord::from_byte_record(record) {
            Ok(t) => t,
            Err(e) => {
                rejects.push(RejectReason::new(source_file, line, RejectCode::MalformedLine, format!("invalid UTF-8: {e}")));
                continue;
            }
        };
        if text.iter().skip(cols.len()).any(|f| !f.trim().is_empty()) {
            rejects.push(RejectReason::new(
                source_file,
                line,
                RejectCode::MalformedLine,
                format!("{} cells but header has {}", text.len(), cols.len()),
            ));
            continue;
        }

        let cell = |want: Column| -> String {
            cols.iter()
                .position(|c| *c == Some(want))
                .and_then(|i| text.get(i))
                .unwrap_or("")
                .to_owned()
        };

        let row_year = match year {
            Some(y) => y,
            None => {
                let raw = cell(Column::Year);
                match raw.trim().parse::<i32>() {
                    Ok(y) => y,
                    Err(_) => {
                        rejects.push(RejectReason::new(
                            source_file,
                            line,
                            RejectCode::MalformedLine,
                            format!("unparseable year {raw:?}"),
                        ));
                        continue;
                    }
                }
            }
        };

        rows.push(RawReportRow {
            country_raw: cell(Column::Country),
            epi_week_raw: cell(Column::Week),
            suspected_raw: cell(Column::Suspected),
            confirmed_raw: cell(Column::Confirmed),
            imported_raw: cell(Column::Imported),
            deaths_raw: cell(Column::Deaths),
            incidence_raw: cell(Column::Incidence),
            population_k_raw: cell(Column::Population),
            year: row_year,
            source_file: source_file.to_owned(),
            source_line: line,
        });
    }

    if layout.is_none() {
        // A file with no lines at all has nothing to misread; anything else
        // without a recognizable header is an error.
        if content.iter().all(u8::is_ascii_whitespace) {
            return Ok((rows, rejects));
        }
        return Err(IngestError::UnknownHeader { file: source_file.to_owned() });
    }
    Ok((rows, rejects))
}

/// Reads and parses a report file from disk; the file name (not the full
/// path) becomes `source_file`.
pub fn parse_report_path(path: &Path, year: Option<i32>) -> Result<(Vec<RawReportRow>, Vec<RejectReason>), IngestError> {
    let display = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let content = std::fs::read(path).map_err(|source| IngestError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    parse_report_file(&content, &display, year)
}

fn strip_garbage_tokens(s: &str) -> String {
    let mut out = s.to_owned();
    for token in COUNTRY_GARBAGE {
        if out.contains(token) {
            out = out.replace(token, "");
        }
    }
    out
}

fn clean_step(s: &str) -> String {
    let s = strip_garbage_tokens(s);
    s.trim().trim_end_matches('g').trim().to_owned()
}

/// Removes the PDF-conversion debris from a country cell and trailing `g`s.
///
/// The removal is repeated until nothing changes, so inputs like `"(#)"`
/// (which leave a `()` behind after one pass) are fully cleaned and the
/// function is idempotent. Returns `None` when nothing is left.
pub fn clean_country_name(raw: &str) -> Option<String> {
    let mut current = raw.to_owned();
    loop {
        let next = clean_step(&current);
        if next == current {
            break;
        }
        current = next;
    }
    (!current.is_empty()).then_some(current)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeekError {
    Missing,
    Unparseable,
}

/// Normalizes an epidemiological-week cell: drops `WEEK`/`Week`, then any
/// other letters, and parses what is left.
pub fn normalize_week(raw: &str) -> Result<u32, WeekError> {
    let stripped = raw.replace("WEEK", "").replace("Week", "");
    let digits: String = stripped.chars().filter(|c| !c.is_alphabetic()).collect();
    let digits = digits.trim();
    if digits.is_empty() {
        return Err(WeekError::Missing);
    }
    digits.parse::<u32>().map_err(|_| WeekError::Unparseable)
}

/// Parses a count, accepting surrounding whitespace and thousands commas.
/// `Ok(None)` for a blank cell.
pub fn parse_count(raw: &str) -> Result<Option<u64>, String> {
    let s = raw.trim().replace(',', "");
    if s.is_empty() {
        return Ok(None);
    }
    if !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("not a non-negative integer: {raw:?}"));
    }
    s.parse::<u64>().map(Some).map_err(|e| format!("{raw:?}: {e}"))
}

/// Like [`parse_count`] for a non-negative decimal.
pub fn parse_rate(raw: &str) -> Result<Option<f64>, String> {
    let s = raw.trim().replace(',', "");
    if s.is_empty() {
        return Ok(None);
    }
    let well_formed = s.bytes().all(|b| b.is_ascii_digit() || b == b'.')
        && s.bytes().filter(|b| *b == b'.').count() <= 1
        && s.bytes().any(|b| b.is_ascii_digit());
    if !well_formed {
        return Err(format!("not a non-negative number: {raw:?}"));
    }
    s.parse::<f64>().map(Some).map_err(|e| format!("{raw:?}: {e}"))
}

/// Population in thousands; unparseable or zero values are treated as absent.
pub fn normalize_population(raw: &str) -> Option<u64> {
    raw.replace(',', "").trim().parse::<u64>().ok().filter(|p| *p > 0)
}

/// Validates against the default year range.
pub fn validate_row(row: &RawReportRow) -> Result<CleanRecord, RejectReason> {
    validate_row_in(row, &DEFAULT_YEAR_RANGE)
}

pub fn validate_row_in(row: &RawReportRow, years: &RangeInclusive<i32>) -> Result<CleanRecord, RejectReason> {
    let reject = |code, detail: String| RejectReason::new(&row.source_file, row.source_line, code, detail);

    let country = clean_country_name(&row.country_raw)
        .ok_or_else(|| reject(RejectCode::EmptyCountry, format!("country {:?} is empty after cleaning", row.country_raw)))?;

    if !years.contains(&row.year) {
        return Err(reject(
            RejectCode::YearOutOfRange,
            format!("year {} outside {}..={}", row.year, years.start(), years.end()),
        ));
    }

    let week = normalize_week(&row.epi_week_raw).map_err(|e| match e {
        WeekError::Missing => reject(RejectCode::MissingWeek, format!("week {:?}", row.epi_week_raw)),
        WeekError::Unparseable => reject(RejectCode::UnparseableNumber, format!("week {:?}", row.epi_week_raw)),
    })?;
    let max_week = iso_weeks_in_year(row.year);
    if week == 0 || week > max_week {
        return Err(reject(
            RejectCode::WeekOutOfRange,
            format!("week {week} outside 1..={max_week} for {}", row.year),
        ));
    }

    let required = |raw: &str, missing: RejectCode, what: &str| -> Result<u64, RejectReason> {
        match parse_count(raw) {
            Ok(Some(v)) => Ok(v),
            Ok(None) => Err(reject(missing, format!("{what} is blank"))),
            Err(e) => Err(reject(RejectCode::UnparseableNumber, format!("{what}: {e}"))),
        }
    };
    let suspected = required(&row.suspected_raw, RejectCode::MissingSuspected, "suspected")?;
    let confirmed = required(&row.confirmed_raw, RejectCode::MissingConfirmed, "confirmed")?;

    let optional = |raw: &str, what: &str| -> Result<Option<u64>, RejectReason> {
        parse_count(raw).map_err(|e| reject(RejectCode::UnparseableNumber, format!("{what}: {e}")))
    };
    let imported = optional(&row.imported_raw, "imported")?;
    let deaths = optional(&row.deaths_raw, "deaths")?;
    let incidence_rate = parse_rate(&row.incidence_raw)
        .map_err(|e| reject(RejectCode::UnparseableNumber, format!("incidence: {e}")))?;

    Ok(CleanRecord {
        country,
        year: row.year,
        week,
        suspected,
        confirmed,
        imported,
        deaths,
        incidence_rate,
        population_k: normalize_population(&row.population_k_raw),
        source_file: row.source_file.clone(),
        source_line: row.source_line,
    })
}

/// Splits raw rows into clean records and rejects, one outcome per row.
pub fn validate_rows(rows: &[RawReportRow], years: &RangeInclusive<i32>) -> (Vec<CleanRecord>, Vec<RejectReason>) {
    let mut clean = Vec::with_capacity(rows.len());
    let mut rejects = Vec::new();
    for row in rows {
        match validate_row_in(row, years) {
            Ok(r) => clean.push(r),
            Err(r) => rejects.push(r),
        }
    }
    (clean, rejects)
}

/// One record per `(country, year, week)`. The record from the
/// lexicographically latest source file wins; within one file, the later line.
pub fn dedupe(records: Vec<CleanRecord>) -> Vec<CleanRecord> {
    let mut best: BTreeMap<(String, i32, u32), CleanRecord> = BTreeMap::new();
    for rec in records {
        let key = (rec.country.clone(), rec.year, rec.week);
        match best.get(&key) {
            Some(existing)
                if (existing.source_file.as_str(), existing.source_line)
                    >= (rec.source_file.as_str(), rec.source_line) => {}
            _ => {
                best.insert(key, rec);
            }
        }
    }
    let out: Vec<CleanRecord> = best.into_values().collect();
    debug_assert!(out.windows(2).all(|w| w[0].key_ref() < w[1].key_ref()));
    out
}
