//! Aggregate series and actual-vs-scored comparisons, written as CSV (and
//! optionally as static SVG charts).

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::enrich::EnrichedRecord;
use crate::fsutil::write_atomic;
use crate::ingest::{CleanRecord, RecordKey};
use crate::model::{predict, ModelCoefficients};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearAggregate {
    pub year: i32,
    pub suspected_total: u64,
    pub confirmed_total: u64,
    pub incidence_sum: f64,
    pub record_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryAggregate {
    pub weather_summary: String,
    pub record_count: u64,
    pub incidence_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub country: String,
    pub year: i32,
    pub week: u32,
    pub actual: f64,
    pub scored: f64,
    pub residual: f64,
}

impl ComparisonRow {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            country: self.country.clone(),
            year: self.year,
            week: self.week,
        }
    }
}

/// Order-independent sum: the same multiset of values always gives the same
/// bits.
fn stable_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

/// Per-year totals; absent incidence rates contribute nothing to the sum.
pub fn aggregate_by_year<'a>(records: impl IntoIterator<Item = &'a CleanRecord>) -> Vec<YearAggregate> {
    let mut groups: BTreeMap<i32, (u64, u64, Vec<f64>, u64)> = BTreeMap::new();
    for r in records {
        let g = groups.entry(r.year).or_default();
        g.0 += r.suspected;
        g.1 += r.confirmed;
        g.2.extend(r.incidence_rate);
        g.3 += 1;
    }
    groups
        .into_iter()
        .map(|(year, (s, c, inc, n))| YearAggregate {
            year,
            suspected_total: s,
            confirmed_total: c,
            incidence_sum: stable_sum(inc),
            record_count: n,
        })
        .collect()
}

/// Per weather summary, most frequent first (ties by name).
pub fn aggregate_by_summary(records: &[EnrichedRecord]) -> Vec<SummaryAggregate> {
    let mut groups: BTreeMap<&str, (u64, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let g = groups.entry(&r.weather.summary).or_default();
        g.0 += 1;
        g.1.extend(r.record.incidence_rate);
    }
    let mut out: Vec<SummaryAggregate> = groups
        .into_iter()
        .map(|(name, (n, inc))| SummaryAggregate {
            weather_summary: name.to_owned(),
            record_count: n,
            incidence_sum: stable_sum(inc),
        })
        .collect();
    out.sort_by(|a, b| b.record_count.cmp(&a.record_count).then_with(|| a.weather_summary.cmp(&b.weather_summary)));
    out
}

/// One row per record with a target, sorted by key.
pub fn comparison_series(records: &[EnrichedRecord], model: &ModelCoefficients) -> Vec<ComparisonRow> {
    let mut rows: Vec<ComparisonRow> = records
        .iter()
        .filter_map(|r| {
            let actual = r.record.incidence_rate?;
            let scored = predict(model, r);
            Some(ComparisonRow {
                country: r.record.country.clone(),
                year: r.record.year,
                week: r.record.week,
                actual,
                scored,
                residual: actual - scored,
            })
        })
        .collect();
    rows.sort_by_key(ComparisonRow::key);
    rows
}

fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> io::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(io::Error::other)?;
    for r in rows {
        w.serialize(r).map_err(io::Error::other)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

/// Writes `agg_year.csv`, `agg_summary.csv` and `compare_<year>.csv` under
/// `dir`; returns the written paths in order.
pub fn write_report(
    dir: &Path,
    years: &[YearAggregate],
    summaries: &[SummaryAggregate],
    comparisons: &[ComparisonRow],
) -> io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> io::Result<()> {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
        Ok(())
    };
    put(
        "agg_year.csv".into(),
        csv_bytes(years, &["year", "suspected_total", "confirmed_total", "incidence_sum", "record_count"])?,
    )?;
    put(
        "agg_summary.csv".into(),
        csv_bytes(summaries, &["weather_summary", "record_count", "incidence_sum"])?,
    )?;
    let mut by_year: BTreeMap<i32, Vec<&ComparisonRow>> = BTreeMap::new();
    for c in comparisons {
        by_year.entry(c.year).or_default().push(c);
    }
    for (year, rows) in by_year {
        put(
            format!("compare_{year}.csv"),
            csv_bytes(&rows, &["country", "year", "week", "actual", "scored", "residual"])?,
        )?;
    }
    Ok(written)
}

pub mod chart {
    //! Minimal static SVG bar and line charts.

    use std::fmt::Write;

    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const PAD: f64 = 48.0;

    fn escape(s: &str) -> String {
        s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
    }

    fn frame(title: &str, body: &str) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n\
             <line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n{body}</svg>\n",
            W / 2.0,
            escape(title),
            H - PAD,
            W - PAD / 2.0,
            H - PAD
        )
    }

    pub fn bars(title: &str, bars: &[(String, f64)]) -> String {
        let max = bars.iter().map(|b| b.1).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
        let slot = (W - 1.5 * PAD) / bars.len().max(1) as f64;
        let mut body = String::new();
        for (i, (label, v)) in bars.iter().enumerate() {
            let h = (H - 2.0 * PAD) * v.max(0.0) / max;
            let x = PAD + slot * i as f64 + slot * 0.15;
            let _ = writeln!(
                body,
                "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"steelblue\"><title>{}: {v}</title></rect>",
                H - PAD - h,
                slot * 0.7,
                escape(label)
            );
            let _ = writeln!(
                body,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
                x + slot * 0.35,
                H - PAD + 14.0,
                escape(label)
            );
        }
        frame(title, &body)
    }

    pub fn lines(title: &str, series: &[(&str, &str, Vec<f64>)]) -> String {
        let all = series.iter().flat_map(|s| s.2.iter().copied());
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) };
        let mut body = String::new();
        for (name, colour, ys) in series {
            let step = (W - 1.5 * PAD) / (ys.len().max(2) - 1) as f64;
            let pts: Vec<String> = ys
                .iter()
                .enumerate()
                .map(|(i, y)| format!("{:.1},{:.1}", PAD + step * i as f64, H - PAD - (H - 2.0 * PAD) * (y - lo) / (hi - lo)))
                .collect();
            let _ = writeln!(
                body,
                "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"><title>{}</title></polyline>",
                pts.join(" "),
                escape(name)
            );
        }
        frame(title, &body)
    }
}

/// Writes one SVG per series next to the CSV files.
pub fn write_charts(
    dir: &Path,
    years: &[YearAggregate],
    summaries: &[SummaryAggregate],
    comparisons: &[ComparisonRow],
) -> io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: String, svg: String| -> io::Result<()> {
        let path = dir.join(name);
        write_atomic(&path, svg.as_bytes())?;
        written.push(path);
        Ok(())
    };
    let by_year = |f: fn(&YearAggregate) -> f64| years.iter().map(|y| (y.year.to_string(), f(y))).collect::<Vec<_>>();
    put("suspected_by_year.svg".into(), chart::bars("Suspected cases by year", &by_year(|y| y.suspected_total as f64)))?;
    put("confirmed_by_year.svg".into(), chart::bars("Confirmed cases by year", &by_year(|y| y.confirmed_total as f64)))?;
    put("incidence_by_year.svg".into(), chart::bars("Sum of incidence rate by year", &by_year(|y| y.incidence_sum)))?;
    put(
        "incidence_by_summary.svg".into(),
        chart::bars(
            "Records by weather summary",
            &summaries.iter().map(|s| (s.weather_summary.clone(), s.record_count as f64)).collect::<Vec<_>>(),
        ),
    )?;
    let mut grouped: BTreeMap<i32, Vec<&ComparisonRow>> = BTreeMap::new();
    for c in comparisons {
        grouped.entry(c.year).or_default().push(c);
    }
    for (year, rows) in grouped {
        let svg = chart::lines(
            &format!("Actual vs scored incidence rate, {year}"),
            &[
                ("actual", "black", rows.iter().map(|r| r.actual).collect()),
                ("scored", "crimson", rows.iter().map(|r| r.scored).collect()),
            ],
        );
        put(format!("compare_{year}.svg"), svg)?;
    }
    Ok(written)
}
