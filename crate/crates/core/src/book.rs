//! Ten-level limit order book snapshots.
//!
//! A snapshot stores the 10 best ask and bid levels as dense arrays. Level 1
//! is the best price on each side: asks ascend and bids descend from there.
//!
//! The on-disk format is one comma-separated record per line:
//!
//! ```text
//! timestamp, ask_price_1..10, ask_volume_1..10, bid_price_1..10, bid_volume_1..10
//! ```
//!
//! An optional header line is recognised by a non-numeric first field.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Levels per side.
pub const DEPTH: usize = 10;

/// Fields per record: timestamp plus 4 blocks of [`DEPTH`] values.
pub const RECORD_FIELDS: usize = 1 + 4 * DEPTH;

#[derive(Debug, Error, PartialEq)]
pub enum BookError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{}invalid snapshot: {violation}", line_prefix(*.line))]
    Invalid {
        line: Option<usize>,
        violation: Violation,
    },
    #[error("empty series")]
    EmptySeries,
    #[error("timestamps not strictly increasing at snapshot {index} ({prev} then {next})")]
    NonMonotonicTimestamp { index: usize, prev: u64, next: u64 },
    #[error("io: {0}")]
    Io(String),
}

fn line_prefix(line: Option<usize>) -> String {
    match line {
        Some(l) => format!("line {l}: "),
        None => String::new(),
    }
}

impl From<std::io::Error> for BookError {
    fn from(e: std::io::Error) -> Self {
        BookError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Ask,
    Bid,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Ask => f.write_str("ask"),
            Side::Bid => f.write_str("bid"),
        }
    }
}

/// A broken snapshot invariant. Levels are 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Violation {
    CrossedBook { level: usize },
    NonPositivePrice { side: Side, level: usize },
    NonPositiveVolume { side: Side, level: usize },
    NonFinite { side: Side, level: usize },
    OutOfOrder { side: Side, level: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::CrossedBook { level } => write!(f, "crossed book at level {level}"),
            Violation::NonPositivePrice { side, level } => {
                write!(f, "non-positive price at {side} level {level}")
            }
            Violation::NonPositiveVolume { side, level } => {
                write!(f, "non-positive volume at {side} level {level}")
            }
            Violation::NonFinite { side, level } => {
                write!(f, "non-finite value at {side} level {level}")
            }
            Violation::OutOfOrder { side, level } => {
                let dir = match side {
                    Side::Ask => "increasing",
                    Side::Bid => "decreasing",
                };
                write!(f, "{side} prices not strictly {dir} at level {level}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub price: f64,
    pub volume: f64,
}

impl Level {
    pub fn new(price: f64, volume: f64) -> Self {
        Level { price, volume }
    }
}

/// One book state after a state-altering event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookSnapshot {
    /// Event index, not wall-clock time.
    pub timestamp: u64,
    pub asks: [Level; DEPTH],
    pub bids: [Level; DEPTH],
}

impl BookSnapshot {
    /// Builds a snapshot and checks every invariant.
    pub fn new(timestamp: u64, asks: [Level; DEPTH], bids: [Level; DEPTH]) -> Result<Self, BookError> {
        let s = BookSnapshot {
            timestamp,
            asks,
            bids,
        };
        s.check().map_err(|violation| BookError::Invalid {
            line: None,
            violation,
        })?;
        Ok(s)
    }

    /// Returns the first broken invariant, if any.
    pub fn check(&self) -> Result<(), Violation> {
        for (side, levels) in [(Side::Ask, &self.asks), (Side::Bid, &self.bids)] {
            for (i, lv) in levels.iter().enumerate() {
                let level = i + 1;
                if !lv.price.is_finite() || !lv.volume.is_finite() {
                    return Err(Violation::NonFinite { side, level });
                }
                if lv.price <= 0.0 {
                    return Err(Violation::NonPositivePrice { side, level });
                }
                if lv.volume <= 0.0 {
                    return Err(Violation::NonPositiveVolume { side, level });
                }
            }
        }
        if self.asks[0].price <= self.bids[0].price {
            return Err(Violation::CrossedBook { level: 1 });
        }
        for k in 1..DEPTH {
            if self.asks[k].price <= self.asks[k - 1].price {
                return Err(Violation::OutOfOrder {
                    side: Side::Ask,
                    level: k + 1,
                });
            }
            if self.bids[k].price >= self.bids[k - 1].price {
                return Err(Violation::OutOfOrder {
                    side: Side::Bid,
                    level: k + 1,
                });
            }
        }
        Ok(())
    }

    pub fn best_ask(&self) -> f64 {
        self.asks[0].price
    }

    pub fn best_bid(&self) -> f64 {
        self.bids[0].price
    }

    pub fn mid_price(&self) -> f64 {
        mid_price(self)
    }

    /// Copy with every price multiplied by `c`; volumes untouched.
    pub fn scale_prices(&self, c: f64) -> BookSnapshot {
        let mut out = self.clone();
        for lv in out.asks.iter_mut().chain(out.bids.iter_mut()) {
            lv.price *= c;
        }
        out
    }

    fn write_record<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "{}", self.timestamp)?;
        for lv in &self.asks {
            write!(w, ",{}", lv.price)?;
        }
        for lv in &self.asks {
            write!(w, ",{}", lv.volume)?;
        }
        for lv in &self.bids {
            write!(w, ",{}", lv.price)?;
        }
        for lv in &self.bids {
            write!(w, ",{}", lv.volume)?;
        }
        writeln!(w)
    }
}

/// Mid-point of the best ask and best bid.
pub fn mid_price(s: &BookSnapshot) -> f64 {
    (s.best_ask() + s.best_bid()) / 2.0
}

/// All snapshots of one stock over one trading day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSeries {
    pub stock_id: String,
    pub day_id: String,
    snapshots: Vec<BookSnapshot>,
}

impl SnapshotSeries {
    pub fn new(
        stock_id: impl Into<String>,
        day_id: impl Into<String>,
        snapshots: Vec<BookSnapshot>,
    ) -> Result<Self, BookError> {
        if snapshots.is_empty() {
            return Err(BookError::EmptySeries);
        }
        for (i, pair) in snapshots.windows(2).enumerate() {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(BookError::NonMonotonicTimestamp {
                    index: i + 1,
                    prev: pair[0].timestamp,
                    next: pair[1].timestamp,
                });
            }
        }
        Ok(SnapshotSeries {
            stock_id: stock_id.into(),
            day_id: day_id.into(),
            snapshots,
        })
    }

    pub fn snapshots(&self) -> &[BookSnapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn mid_prices(&self) -> Vec<f64> {
        self.snapshots.iter().map(mid_price).collect()
    }

    pub fn scale_prices(&self, c: f64) -> SnapshotSeries {
        SnapshotSeries {
            stock_id: self.stock_id.clone(),
            day_id: self.day_id.clone(),
            snapshots: self.snapshots.iter().map(|s| s.scale_prices(c)).collect(),
        }
    }

    /// Writes the series in the snapshot file format.
    pub fn write_to<W: Write>(&self, w: &mut W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(w, "{}", header_line())?;
        }
        for s in &self.snapshots {
            s.write_record(w)?;
        }
        Ok(())
    }
}

fn header_line() -> String {
    let mut cols = vec!["timestamp".to_string()];
    for block in ["ask_price", "ask_volume", "bid_price", "bid_volume"] {
        cols.extend((1..=DEPTH).map(|k| format!("{block}_{k}")));
    }
    cols.join(",")
}

/// How invariant violations are treated while parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Validation {
    /// First violation aborts the parse.
    #[default]
    Strict,
    /// Invalid snapshots (and out-of-order timestamps) are dropped and counted.
    Lenient,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseReport {
    pub records: usize,
    pub dropped_invalid: usize,
    pub dropped_out_of_order: usize,
    pub header: bool,
}

/// Parses a snapshot stream.
///
/// Malformed records are always fatal. Invariant violations are fatal in
/// [`Validation::Strict`] and dropped in [`Validation::Lenient`].
pub fn parse_snapshot_stream<R: BufRead>(
    reader: R,
    stock_id: &str,
    day_id: &str,
    validation: Validation,
) -> Result<(SnapshotSeries, ParseReport), BookError> {
    let mut report = ParseReport::default();
    let mut snapshots: Vec<BookSnapshot> = Vec::new();
    let mut seen_content = false;
    let mut fields: Vec<f64> = Vec::with_capacity(RECORD_FIELDS);

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let first = trimmed.split(',').next().unwrap_or("").trim();
        if !seen_content {
            seen_content = true;
            if first.parse::<f64>().is_err() {
                report.header = true;
                continue;
            }
        }

        let mut parts = trimmed.split(',').map(str::trim);
        let ts_str = parts.next().unwrap_or("");
        let timestamp: u64 = ts_str.parse().map_err(|_| BookError::Parse {
            line: lineno,
            message: format!("timestamp {ts_str:?} is not a non-negative integer"),
        })?;
        fields.clear();
        for (col, p) in parts.enumerate() {
            let v: f64 = p.parse().map_err(|_| BookError::Parse {
                line: lineno,
                message: format!("field {} ({p:?}) is not numeric", col + 2),
            })?;
            fields.push(v);
        }
        if fields.len() + 1 != RECORD_FIELDS {
            return Err(BookError::Parse {
                line: lineno,
                message: format!(
                    "expected {RECORD_FIELDS} fields, found {}",
                    fields.len() + 1
                ),
            });
        }
        report.records += 1;

        let mut asks = [Level::new(0.0, 0.0); DEPTH];
        let mut bids = [Level::new(0.0, 0.0); DEPTH];
        for k in 0..DEPTH {
            asks[k] = Level::new(fields[k], fields[DEPTH + k]);
            bids[k] = Level::new(fields[2 * DEPTH + k], fields[3 * DEPTH + k]);
        }
        let snap = BookSnapshot {
            timestamp,
            asks,
            bids,
        };
        if let Err(violation) = snap.check() {
            match validation {
                Validation::Strict => {
                    return Err(BookError::Invalid {
                        line: Some(lineno),
                        violation,
                    })
                }
                Validation::Lenient => {
                    report.dropped_invalid += 1;
                    continue;
                }
            }
        }
        if let Some(prev) = snapshots.last() {
            if timestamp <= prev.timestamp {
                match validation {
                    Validation::Strict => {
                        return Err(BookError::NonMonotonicTimestamp {
                            index: snapshots.len(),
                            prev: prev.timestamp,
                            next: timestamp,
                        })
                    }
                    Validation::Lenient => {
                        report.dropped_out_of_order += 1;
                        continue;
                    }
                }
            }
        }
        snapshots.push(snap);
    }

    if report.dropped_invalid + report.dropped_out_of_order > 0 {
        log::warn!(
            "{stock_id}/{day_id}: dropped {} invalid and {} out-of-order snapshots",
            report.dropped_invalid,
            report.dropped_out_of_order
        );
    }
    let series = SnapshotSeries::new(stock_id, day_id, snapshots)?;
    Ok((series, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ladder(best_ask: f64, best_bid: f64, tick: f64, vol: f64) -> BookSnapshot {
        let mut asks = [Level::new(0.0, 0.0); DEPTH];
        let mut bids = [Level::new(0.0, 0.0); DEPTH];
        for k in 0..DEPTH {
            asks[k] = Level::new(best_ask + k as f64 * tick, vol);
            bids[k] = Level::new(best_bid - k as f64 * tick, vol);
        }
        BookSnapshot {
            timestamp: 0,
            asks,
            bids,
        }
    }

    fn record(ts: u64, s: &BookSnapshot) -> String {
        let mut buf = Vec::new();
        let mut s = s.clone();
        s.timestamp = ts;
        s.write_record(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn parses_direct_field_mapping() {
        let snap = ladder(10.02, 10.00, 0.02, 5.0);
        let text = record(0, &snap);
        let (series, report) =
            parse_snapshot_stream(text.as_bytes(), "s", "d", Validation::Strict).unwrap();
        assert_eq!(report.records, 1);
        let s = &series.snapshots()[0];
        assert_eq!(s.best_ask(), 10.02);
        assert_eq!(s.best_bid(), 10.00);
        assert_eq!(s.asks[9].price, 10.02 + 9.0 * 0.02);
        assert_eq!(s.bids[3].volume, 5.0);
    }

    #[test]
    fn crossed_book_is_rejected() {
        let mut snap = ladder(10.02, 10.00, 0.02, 5.0);
        snap.asks[0].price = 9.99;
        let text = record(0, &snap);
        let err = parse_snapshot_stream(text.as_bytes(), "s", "d", Validation::Strict).unwrap_err();
        assert_eq!(err.to_string(), "line 1: invalid snapshot: crossed book at level 1");
    }

    #[test]
    fn non_positive_volume_names_the_level() {
        let mut snap = ladder(10.02, 10.00, 0.02, 5.0);
        snap.bids[6].volume = 0.0;
        let err = snap.check().unwrap_err();
        assert_eq!(err.to_string(), "non-positive volume at bid level 7");
    }

    #[test]
    fn empty_stream_is_an_error() {
        let err = parse_snapshot_stream("".as_bytes(), "s", "d", Validation::Strict).unwrap_err();
        assert_eq!(err, BookError::EmptySeries);
        assert_eq!(err.to_string(), "empty series");
    }

    #[test]
    fn wrong_field_count_reports_line() {
        let text = format!("{}1,2,3\n", record(0, &ladder(10.02, 10.0, 0.01, 1.0)));
        match parse_snapshot_stream(text.as_bytes(), "s", "d", Validation::Strict) {
            Err(BookError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_is_parse_error() {
        let rec = record(3, &ladder(10.02, 10.0, 0.01, 1.0)).replacen(",10.02", ",abc", 1);
        let text = format!("{}{}", record(1, &ladder(10.02, 10.0, 0.01, 1.0)), rec);
        let err = parse_snapshot_stream(text.as_bytes(), "s", "d", Validation::Strict).unwrap_err();
        assert!(matches!(err, BookError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn header_is_detected_and_skipped() {
        let snap = ladder(10.02, 10.0, 0.01, 1.0);
        let mut buf = Vec::new();
        SnapshotSeries::new("s", "d", vec![snap]).unwrap().write_to(&mut buf, true).unwrap();
        let (series, report) =
            parse_snapshot_stream(buf.as_slice(), "s", "d", Validation::Strict).unwrap();
        assert!(report.header);
        assert_eq!(series.len(), 1);
    }

    #[test]
    fn lenient_mode_drops_and_counts() {
        let good = ladder(10.02, 10.0, 0.01, 1.0);
        let mut bad = good.clone();
        bad.asks[0].price = 9.0;
        let text = format!(
            "{}{}{}{}",
            record(0, &good),
            record(1, &bad),
            record(1, &good),
            record(0, &good)
        );
        assert!(parse_snapshot_stream(text.as_bytes(), "s", "d", Validation::Strict).is_err());
        let (series, report) =
            parse_snapshot_stream(text.as_bytes(), "s", "d", Validation::Lenient).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(report.dropped_invalid, 1);
        assert_eq!(report.dropped_out_of_order, 1);
    }

    #[test]
    fn mid_price_examples() {
        let s = ladder(10.02, 10.00, 0.02, 5.0);
        assert!((mid_price(&s) - 10.01).abs() < 1e-12);
        let p = 37.5;
        let eps = 0.125;
        let sym = ladder(p + eps, p - eps, 0.25, 1.0);
        assert_eq!(mid_price(&sym), p);
    }

    fn random_snapshot(rng: &mut ChaCha8Rng) -> BookSnapshot {
        let bid = rng.random_range(1.0..500.0);
        let ask = bid + rng.random_range(1e-3..1.0);
        let mut asks = [Level::new(0.0, 0.0); DEPTH];
        let mut bids = [Level::new(0.0, 0.0); DEPTH];
        let (mut a, mut b) = (ask, bid);
        for k in 0..DEPTH {
            asks[k] = Level::new(a, rng.random_range(1.0..1e4));
            bids[k] = Level::new(b, rng.random_range(1.0..1e4));
            a += rng.random_range(1e-3..0.5);
            b -= rng.random_range(1e-3..0.05);
        }
        BookSnapshot::new(0, asks, bids).unwrap()
    }

    #[test]
    fn mid_price_matches_recomputation_on_random_snapshots() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let s = random_snapshot(&mut rng);
            let oracle = 0.5 * (s.asks[0].price + s.bids[0].price);
            let m = mid_price(&s);
            assert!((m - oracle).abs() <= 1e-12 * oracle);
            assert!(s.best_bid() < m && m < s.best_ask());
        }
    }

    proptest! {
        #[test]
        fn mid_price_scale_equivariant(seed in any::<u64>(), exp in -8i32..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_snapshot(&mut rng);
            let c = 2f64.powi(exp);
            prop_assert_eq!(mid_price(&s.scale_prices(c)), c * mid_price(&s));
        }

        #[test]
        fn write_parse_round_trip_is_bit_exact(seed in any::<u64>(), n in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let snaps: Vec<_> = (0..n)
                .map(|i| {
                    let mut s = random_snapshot(&mut rng);
                    s.timestamp = i as u64 * 3;
                    s
                })
                .collect();
            let series = SnapshotSeries::new("s", "d", snaps).unwrap();
            let mut buf = Vec::new();
            series.write_to(&mut buf, seed % 2 == 0).unwrap();
            let (back, _) =
                parse_snapshot_stream(buf.as_slice(), "s", "d", Validation::Strict).unwrap();
            prop_assert_eq!(back, series);
        }
    }
}
