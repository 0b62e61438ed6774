use std::fs::File;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, Duration, Timelike, Utc};

use crate::error::{Error, Result};
use crate::pricing::MarketSnapshot;
use crate::schema::{Feature, CSV_HEADER};

pub const RESOLUTION_MINUTES: i64 = 15;

pub fn step() -> Duration {
    Duration::minutes(RESOLUTION_MINUTES)
}

pub fn is_aligned(ts: DateTime<Utc>) -> bool {
    ts.minute().is_multiple_of(RESOLUTION_MINUTES as u32) && ts.second() == 0 && ts.nanosecond() == 0
}

/// Quarter-hour-of-day index in `0..96`.
pub fn delivery_index(ts: DateTime<Utc>) -> usize {
    (ts.hour() * 4 + ts.minute() / 15) as usize
}

pub fn format_ts(ts: DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn parse_ts(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GapPolicy {
    #[default]
    Reject,
    ForwardFill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Reject rows with invalid values instead of dropping them.
    pub strict: bool,
    pub gaps: GapPolicy,
}

impl LoadOptions {
    pub fn strict() -> Self {
        Self {
            strict: true,
            gaps: GapPolicy::Reject,
        }
    }

    /// Drops invalid rows and forward-fills the holes they leave.
    pub fn lenient() -> Self {
        Self {
            strict: false,
            gaps: GapPolicy::ForwardFill,
        }
    }
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self::strict()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadReport {
    pub rows_read: usize,
    pub dropped: usize,
    pub filled: usize,
}

/// Validated 15-minute market history with the observed imbalance price.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureFrame {
    snapshots: Vec<MarketSnapshot>,
    prices: Vec<f64>,
}

impl FeatureFrame {
    /// Builds a frame, checking alignment, ordering, contiguity and values.
    pub fn new(mut snapshots: Vec<MarketSnapshot>, prices: Vec<f64>) -> Result<Self> {
        if snapshots.len() != prices.len() {
            return Err(Error::Dimension {
                expected: snapshots.len(),
                actual: prices.len(),
            });
        }
        for (i, (s, &p)) in snapshots.iter_mut().zip(&prices).enumerate() {
            s.p_observed = Some(p);
            s.check().map_err(|(column, message)| Error::Cell {
                row: i + 1,
                column: column.to_string(),
                message,
            })?;
        }
        let frame = Self { snapshots, prices };
        frame.check_index()?;
        Ok(frame)
    }

    fn check_index(&self) -> Result<()> {
        for (i, s) in self.snapshots.iter().enumerate() {
            if !is_aligned(s.ts) {
                return Err(Error::Cell {
                    row: i + 1,
                    column: "ts".into(),
                    message: format!("{} is not on the 15-minute grid", format_ts(s.ts)),
                });
            }
        }
        for (i, w) in self.snapshots.windows(2).enumerate() {
            if w[1].ts <= w[0].ts {
                return Err(Error::Cell {
                    row: i + 2,
                    column: "ts".into(),
                    message: format!(
                        "timestamp {} does not follow {}",
                        format_ts(w[1].ts),
                        format_ts(w[0].ts)
                    ),
                });
            }
            if w[1].ts - w[0].ts != step() {
                return Err(Error::Data(format!(
                    "gap between {} and {}",
                    format_ts(w[0].ts),
                    format_ts(w[1].ts)
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[MarketSnapshot] {
        &self.snapshots
    }

    pub fn snapshot(&self, i: usize) -> &MarketSnapshot {
        &self.snapshots[i]
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn ts(&self, i: usize) -> DateTime<Utc> {
        self.snapshots[i].ts
    }

    pub fn first_ts(&self) -> Option<DateTime<Utc>> {
        self.snapshots.first().map(|s| s.ts)
    }

    /// One past the last covered period.
    pub fn end_ts(&self) -> Option<DateTime<Utc>> {
        self.snapshots.last().map(|s| s.ts + step())
    }

    pub fn column(&self, feature: Feature) -> Vec<f64> {
        self.snapshots
            .iter()
            .zip(&self.prices)
            .map(|(s, &p)| feature.read(s, p))
            .collect()
    }

    pub fn slice(&self, rows: Range<usize>) -> FeatureFrame {
        FeatureFrame {
            snapshots: self.snapshots[rows.clone()].to_vec(),
            prices: self.prices[rows].to_vec(),
        }
    }

    /// Rows whose timestamp falls in `[start, end)`.
    pub fn rows_between(&self, start: DateTime<Utc>, end: DateTime<Utc>) -> Range<usize> {
        let lo = self.snapshots.partition_point(|s| s.ts < start);
        let hi = self.snapshots.partition_point(|s| s.ts < end);
        lo..hi.max(lo)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(CSV_HEADER)?;
        let mut record = Vec::with_capacity(CSV_HEADER.len());
        for (s, &p) in self.snapshots.iter().zip(&self.prices) {
            record.clear();
            record.push(format_ts(s.ts));
            record.extend(Feature::ALL.iter().map(|f| f.read(s, p).to_string()));
            out.write_record(&record)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load_csv(path: impl AsRef<Path>, options: LoadOptions) -> Result<(Self, LoadReport)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, options)
    }

    pub fn read_csv<R: Read>(reader: R, options: LoadOptions) -> Result<(Self, LoadReport)> {
        let mut input = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = input.headers()?.iter().map(str::to_string).collect();
        check_header(&header)?;

        let mut report = LoadReport::default();
        let mut snapshots = Vec::new();
        let mut prices = Vec::new();
        for (i, record) in input.records().enumerate() {
            let row = i + 1;
            let record = record?;
            report.rows_read += 1;
            if record.len() != CSV_HEADER.len() {
                return Err(Error::Cell {
                    row,
                    column: "*".into(),
                    message: format!("expected {} fields, found {}", CSV_HEADER.len(), record.len()),
                });
            }
            let ts = parse_ts(&record[0]).ok_or_else(|| Error::Cell {
                row,
                column: "ts".into(),
                message: format!("unparseable timestamp `{}`", &record[0]),
            })?;
            match parse_row(ts, &record) {
                Ok((snapshot, price)) => {
                    snapshots.push(snapshot);
                    prices.push(price);
                }
                Err((column, message)) if options.strict => {
                    return Err(Error::Cell {
                        row,
                        column: column.to_string(),
                        message,
                    })
                }
                Err((column, message)) => {
                    log::warn!("row {row}: dropping, column `{column}`: {message}");
                    report.dropped += 1;
                }
            }
        }

        for (i, w) in snapshots.windows(2).enumerate() {
            if w[1].ts == w[0].ts {
                return Err(Error::Cell {
                    row: i + 2,
                    column: "ts".into(),
                    message: format!("duplicate timestamp {}", format_ts(w[1].ts)),
                });
            }
        }

        if options.gaps == GapPolicy::ForwardFill {
            let (filled_s, filled_p, filled) = forward_fill(snapshots, prices)?;
            snapshots = filled_s;
            prices = filled_p;
            report.filled = filled;
        }
        if report.dropped > 0 || report.filled > 0 {
            log::warn!(
                "loaded {} rows: {} dropped, {} forward-filled",
                report.rows_read,
                report.dropped,
                report.filled
            );
        }
        Ok((Self::new(snapshots, prices)?, report))
    }
}

fn check_header(header: &[String]) -> Result<()> {
    let missing: Vec<&str> = CSV_HEADER
        .iter()
        .copied()
        .filter(|name| !header.iter().any(|h| h == name))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!("missing column(s): {}", missing.join(", "))));
    }
    if header.len() != CSV_HEADER.len() || header.iter().zip(CSV_HEADER).any(|(h, e)| h != e) {
        return Err(Error::Schema(format!(
            "header must be exactly `{}`",
            CSV_HEADER.join(",")
        )));
    }
    Ok(())
}

fn parse_row(
    ts: DateTime<Utc>,
    record: &csv::StringRecord,
) -> std::result::Result<(MarketSnapshot, f64), (&'static str, String)> {
    let mut values = [0.0; 17];
    for (slot, (name, raw)) in values.iter_mut().zip(CSV_HEADER[1..].iter().zip(record.iter().skip(1))) {
        *slot = raw
            .parse::<f64>()
            .map_err(|_| (*name, format!("`{raw}` is not a number")))?;
    }
    let snapshot = MarketSnapshot {
        ts,
        v: values[0],
        e_afrr_pos: values[1],
        e_afrr_neg: values[2],
        e_mfrr_pos: values[3],
        e_mfrr_neg: values[4],
        p_afrr_pos: values[5],
        p_afrr_neg: values[6],
        p_mfrr_pos: values[7],
        p_mfrr_neg: values[8],
        p_voaa_pos: values[9],
        p_voaa_neg: values[10],
        p_id15: values[11],
        p_id60: values[12],
        p_da: values[13],
        l_id15: values[14],
        l_id60: values[15],
        p_observed: Some(values[16]),
    };
    snapshot.check()?;
    Ok((snapshot, values[16]))
}

fn forward_fill(
    snapshots: Vec<MarketSnapshot>,
    prices: Vec<f64>,
) -> Result<(Vec<MarketSnapshot>, Vec<f64>, usize)> {
    let mut out_s: Vec<MarketSnapshot> = Vec::with_capacity(snapshots.len());
    let mut out_p: Vec<f64> = Vec::with_capacity(prices.len());
    let mut filled = 0;
    for (s, p) in snapshots.into_iter().zip(prices) {
        if let Some(prev) = out_s.last().copied() {
            if s.ts < prev.ts {
                // ordering errors are reported by FeatureFrame::new
                out_s.push(s);
                out_p.push(p);
                continue;
            }
            let prev_price = *out_p.last().unwrap_or(&p);
            let mut next = prev.ts + step();
            while next < s.ts {
                let mut copy = prev;
                copy.ts = next;
                out_s.push(copy);
                out_p.push(prev_price);
                filled += 1;
                next += step();
            }
        }
        out_s.push(s);
        out_p.push(p);
    }
    Ok((out_s, out_p, filled))
}
