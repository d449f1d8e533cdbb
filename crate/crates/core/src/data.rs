//! Timestamp ingestion, session filtering and descriptive statistics.
//!
//! Plain files hold one timestamp (seconds) per line. Long files hold
//! `series_id,t` rows with an optional `series,t` header.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{HawkesError, Result};
use crate::model::EventSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimestampFormat {
    Plain,
    Long,
}

impl std::str::FromStr for TimestampFormat {
    type Err = HawkesError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "long" => Ok(Self::Long),
            other => Err(HawkesError::InvalidParameter(format!(
                "unknown timestamp format '{other}'"
            ))),
        }
    }
}

/// Handling of repeated timestamps within one series.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Dedup {
    #[default]
    Reject,
    /// The k-th repeat of a value is moved forward by `k·eps`.
    Jitter(f64),
}

pub const DEFAULT_JITTER: f64 = 1e-9;

impl std::str::FromStr for Dedup {
    type Err = HawkesError;

    /// `reject`, `jitter` or `jitter:<eps>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || HawkesError::InvalidParameter(format!("bad dedup option '{s}'"));
        match s.split_once(':') {
            None if s == "reject" => Ok(Dedup::Reject),
            None if s == "jitter" => Ok(Dedup::Jitter(DEFAULT_JITTER)),
            Some(("jitter", eps)) => {
                let eps: f64 = eps.trim().parse().map_err(|_| bad())?;
                if eps > 0.0 && eps.is_finite() {
                    Ok(Dedup::Jitter(eps))
                } else {
                    Err(bad())
                }
            }
            _ => Err(bad()),
        }
    }
}

/// Parsed data together with the number of timestamps moved by jittering.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingest<T> {
    pub data: T,
    pub jittered: usize,
}

/// Accumulates one strictly increasing series, applying the dedup policy.
#[derive(Default)]
struct SeriesBuilder {
    times: Vec<f64>,
    last_raw: Option<f64>,
    repeat: usize,
    jittered: usize,
}

impl SeriesBuilder {
    fn push(&mut self, value: f64, line: usize, dedup: Dedup) -> Result<()> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(HawkesError::Parse {
                line,
                message: format!("timestamp {value} must be finite and non-negative"),
            });
        }
        let t = match (self.last_raw, dedup) {
            (Some(prev), Dedup::Jitter(eps)) if value == prev => {
                self.repeat += 1;
                self.jittered += 1;
                value + self.repeat as f64 * eps
            }
            _ => {
                self.repeat = 0;
                value
            }
        };
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(HawkesError::NonMonotonic { line, value });
            }
        }
        self.last_raw = Some(value);
        self.times.push(t);
        Ok(())
    }
}

fn parse_time(field: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| HawkesError::Parse {
        line,
        message: format!("cannot parse '{}' as a timestamp", field.trim()),
    })
}

pub fn parse_plain(text: &str, dedup: Dedup) -> Result<Ingest<EventSeries>> {
    let mut b = SeriesBuilder::default();
    for (i, raw) in text.lines().enumerate() {
        let field = raw.trim();
        if field.is_empty() {
            continue;
        }
        b.push(parse_time(field, i + 1)?, i + 1, dedup)?;
    }
    if b.times.is_empty() {
        return Err(HawkesError::EmptySeries);
    }
    Ok(Ingest {
        jittered: b.jittered,
        data: EventSeries::new(b.times)?,
    })
}

/// Series of a long file, ordered by id: numerically when every id is an
/// integer, lexicographically otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct LongSeries {
    pub ids: Vec<String>,
    pub series: Vec<EventSeries>,
}

pub fn parse_long(text: &str, dedup: Dedup) -> Result<Ingest<LongSeries>> {
    let mut builders: BTreeMap<String, SeriesBuilder> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (id, t) = line.split_once(',').ok_or_else(|| HawkesError::Parse {
            line: i + 1,
            message: "expected 'series_id,t'".into(),
        })?;
        let (id, t) = (id.trim(), t.trim());
        if builders.is_empty() && id == "series" && t == "t" {
            continue;
        }
        if id.is_empty() {
            return Err(HawkesError::Parse {
                line: i + 1,
                message: "empty series id".into(),
            });
        }
        let value = parse_time(t, i + 1)?;
        builders
            .entry(id.to_string())
            .or_default()
            .push(value, i + 1, dedup)?;
    }
    if builders.is_empty() {
        return Err(HawkesError::EmptySeries);
    }
    let mut entries: Vec<(String, SeriesBuilder)> = builders.into_iter().collect();
    if entries.iter().all(|(id, _)| id.parse::<u64>().is_ok()) {
        entries.sort_by_key(|(id, _)| id.parse::<u64>().unwrap_or(u64::MAX));
    }
    let jittered = entries.iter().map(|(_, b)| b.jittered).sum();
    let mut ids = Vec::with_capacity(entries.len());
    let mut series = Vec::with_capacity(entries.len());
    for (id, b) in entries {
        series.push(EventSeries::new(b.times)?.with_label(id.clone()));
        ids.push(id);
    }
    Ok(Ingest {
        data: LongSeries { ids, series },
        jittered,
    })
}

pub fn read_plain(path: &Path, dedup: Dedup) -> Result<Ingest<EventSeries>> {
    let text = fs::read_to_string(path)?;
    let mut out = parse_plain(&text, dedup)?;
    out.data = out.data.with_label(path.display().to_string());
    Ok(out)
}

pub fn read_long(path: &Path, dedup: Dedup) -> Result<Ingest<LongSeries>> {
    parse_long(&fs::read_to_string(path)?, dedup)
}

/// Reads either format; a plain file yields a single series.
pub fn read_timestamps(
    path: &Path,
    format: TimestampFormat,
    dedup: Dedup,
) -> Result<Ingest<Vec<EventSeries>>> {
    match format {
        TimestampFormat::Plain => {
            let r = read_plain(path, dedup)?;
            Ok(Ingest {
                data: vec![r.data],
                jittered: r.jittered,
            })
        }
        TimestampFormat::Long => {
            let r = read_long(path, dedup)?;
            Ok(Ingest {
                data: r.data.series,
                jittered: r.jittered,
            })
        }
    }
}

pub fn format_plain(series: &EventSeries) -> String {
    let mut out = String::with_capacity(series.len() * 20);
    for t in series.times() {
        out.push_str(&format!("{t}\n"));
    }
    out
}

/// Rows are grouped by series, in the given order, under a `series,t` header.
pub fn format_long(ids: &[String], series: &[EventSeries]) -> String {
    let mut out = String::from("series,t\n");
    for (id, s) in ids.iter().zip(series) {
        for t in s.times() {
            out.push_str(&format!("{id},{t}\n"));
        }
    }
    out
}

/// Writes through a temporary file in the same directory and a rename, so
/// readers never see a partial file.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| HawkesError::Io(e.to_string()))?;
    Ok(())
}

pub fn write_plain(path: &Path, series: &EventSeries) -> Result<()> {
    atomic_write(path, format_plain(series).as_bytes())
}

pub fn write_long(path: &Path, ids: &[String], series: &[EventSeries]) -> Result<()> {
    if ids.len() != series.len() {
        return Err(HawkesError::InvalidParameter(
            "one id per series is required".into(),
        ));
    }
    atomic_write(path, format_long(ids, series).as_bytes())
}

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Intra-day window `[start, end)` in seconds after midnight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionWindow {
    start: f64,
    end: f64,
}

impl SessionWindow {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start >= 0.0 && start < end && end <= SECONDS_PER_DAY) {
            return Err(HawkesError::InvalidParameter(format!(
                "session window [{start}, {end}) must satisfy 0 <= start < end <= 86400"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn from_hours(start: f64, end: f64) -> Result<Self> {
        Self::new(start * 3600.0, end * 3600.0)
    }

    pub fn full_day() -> Self {
        Self {
            start: 0.0,
            end: SECONDS_PER_DAY,
        }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn seconds(&self) -> f64 {
        self.end - self.start
    }
}

impl std::str::FromStr for SessionWindow {
    type Err = HawkesError;

    /// `START-END`, each side either `HH:MM[:SS]` or a number of seconds.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || HawkesError::InvalidParameter(format!("bad session window '{s}'"));
        let clock = |part: &str| -> Result<f64> {
            let part = part.trim();
            if !part.contains(':') {
                return part.parse::<f64>().map_err(|_| bad());
            }
            let fields: Vec<f64> = part
                .split(':')
                .map(|f| f.parse::<f64>().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            match fields.as_slice() {
                [h, m] => Ok(h * 3600.0 + m * 60.0),
                [h, m, sec] => Ok(h * 3600.0 + m * 60.0 + sec),
                _ => Err(bad()),
            }
        };
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        Self::new(clock(a)?, clock(b)?)
    }
}

/// Keeps `start ≤ t < end`; with `rebase` the window start becomes time zero.
pub fn filter_session(series: &EventSeries, window: &SessionWindow, rebase: bool) -> EventSeries {
    let t = series.times();
    let lo = t.partition_point(|&x| x < window.start);
    let hi = t.partition_point(|&x| x < window.end);
    let shift = if rebase { window.start } else { 0.0 };
    let kept: Vec<f64> = t[lo..hi].iter().map(|&x| x - shift).collect();
    // subtracting a constant keeps order but may merge neighbours
    let out = EventSeries::new(kept.clone()).unwrap_or_else(|_| {
        let mut dedup = kept;
        dedup.dedup();
        EventSeries::new(dedup).unwrap_or_else(|_| EventSeries::empty())
    });
    match series.origin_label() {
        Some(label) => out.with_label(label.to_string()),
        None => out,
    }
}

pub const QUANTILE_LEVELS: [f64; 6] = [0.10, 0.15, 0.25, 0.50, 0.75, 0.90];

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalStats {
    pub n_events: usize,
    /// Inter-event time quantiles at [`QUANTILE_LEVELS`].
    pub quantiles: [f64; 6],
    pub mean: f64,
    pub latency: f64,
    /// Fraction of inter-event times strictly below `latency`.
    pub below_latency: f64,
}

impl IntervalStats {
    pub fn median(&self) -> f64 {
        self.quantiles[3]
    }

    /// Mean above median, i.e. a heavier right tail than an exponential law
    /// (whose mean exceeds its median only by the factor 1/ln 2).
    pub fn fat_tailed(&self) -> bool {
        self.mean > self.median()
    }
}

/// Lower nearest-rank quantile of sorted data: the value at rank `⌈p·n⌉`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

pub fn interval_stats(series: &EventSeries, latency: f64) -> Result<IntervalStats> {
    if !(latency.is_finite() && latency >= 0.0) {
        return Err(HawkesError::InvalidParameter(format!(
            "latency = {latency}"
        )));
    }
    let t = series.times();
    if t.len() < 2 {
        return Err(HawkesError::InsufficientData(format!(
            "interval statistics need at least 2 events, got {}",
            t.len()
        )));
    }
    let mut dt: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let n = dt.len() as f64;
    let mean = dt.iter().sum::<f64>() / n;
    let below = dt.iter().filter(|&&d| d < latency).count() as f64 / n;
    dt.sort_by(f64::total_cmp);
    Ok(IntervalStats {
        n_events: t.len(),
        quantiles: QUANTILE_LEVELS.map(|p| nearest_rank(&dt, p)),
        mean,
        latency,
        below_latency: below,
    })
}

/// Baseline rate over the empirical event rate of a session.
pub fn exogeneity_ratio(lambda0: f64, n_events: usize, session_seconds: f64) -> Result<f64> {
    if n_events == 0 {
        return Err(HawkesError::InvalidParameter(
            "exogeneity ratio needs at least one event".into(),
        ));
    }
    if !(session_seconds > 0.0 && session_seconds.is_finite()) {
        return Err(HawkesError::InvalidParameter(format!(
            "session length {session_seconds} must be positive"
        )));
    }
    if !(lambda0 >= 0.0 && lambda0.is_finite()) {
        return Err(HawkesError::InvalidParameter(format!(
            "lambda0 = {lambda0}"
        )));
    }
    Ok(lambda0 / (n_events as f64 / session_seconds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(t: &[f64]) -> EventSeries {
        EventSeries::new(t.to_vec()).unwrap()
    }

    #[test]
    fn plain_parse() {
        let s = parse_plain("1.0\n2.5\n7.0", Dedup::Reject).unwrap();
        assert_eq!(s.data.times(), &[1.0, 2.5, 7.0]);
        assert_eq!(s.jittered, 0);
    }

    #[test]
    fn plain_non_monotonic_names_the_line() {
        let err = parse_plain("2.0\n1.0", Dedup::Reject).unwrap_err();
        assert_eq!(
            err,
            HawkesError::NonMonotonic {
                line: 2,
                value: 1.0
            }
        );
    }

    #[test]
    fn plain_errors() {
        assert_eq!(
            parse_plain("", Dedup::Reject),
            Err(HawkesError::EmptySeries)
        );
        assert_eq!(
            parse_plain("\n\n", Dedup::Reject),
            Err(HawkesError::EmptySeries)
        );
        assert!(matches!(
            parse_plain("1\nx\n", Dedup::Reject),
            Err(HawkesError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_plain("-1\n", Dedup::Reject),
            Err(HawkesError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn long_parse_splits_by_id() {
        let s = parse_long("0,1.0\n1,1.5\n0,2.0", Dedup::Reject)
            .unwrap()
            .data;
        assert_eq!(s.ids, vec!["0", "1"]);
        assert_eq!(s.series[0].times(), &[1.0, 2.0]);
        assert_eq!(s.series[1].times(), &[1.5]);
    }

    #[test]
    fn long_header_and_id_order() {
        let s = parse_long("series,t\n10,1\n2,1\n10,3\n", Dedup::Reject)
            .unwrap()
            .data;
        assert_eq!(s.ids, vec!["2", "10"]);
        let s = parse_long("b,1\nPu,2\na,3\n", Dedup::Reject).unwrap().data;
        assert_eq!(s.ids, vec!["Pu", "a", "b"]);
        let err = parse_long("0,1\n1,5\n0,0.5\n", Dedup::Reject).unwrap_err();
        assert_eq!(
            err,
            HawkesError::NonMonotonic {
                line: 3,
                value: 0.5
            }
        );
        assert!(matches!(
            parse_long("0;1\n", Dedup::Reject),
            Err(HawkesError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn duplicates_rejected_or_jittered() {
        assert!(matches!(
            parse_plain("1\n1\n2\n", Dedup::Reject),
            Err(HawkesError::NonMonotonic { line: 2, .. })
        ));
        let s = parse_plain("1\n1\n1\n2\n", Dedup::Jitter(1e-6)).unwrap();
        assert_eq!(s.jittered, 2);
        assert_eq!(s.data.times(), &[1.0, 1.0 + 1e-6, 1.0 + 2e-6, 2.0]);
        // a jitter that overtakes the next value is still an error
        assert!(parse_plain("1\n1\n1.0000001\n", Dedup::Jitter(1e-6)).is_err());
    }

    #[test]
    fn dedup_option_parsing() {
        assert_eq!("reject".parse::<Dedup>().unwrap(), Dedup::Reject);
        assert_eq!("jitter".parse::<Dedup>().unwrap(), Dedup::Jitter(1e-9));
        assert_eq!("jitter:1e-6".parse::<Dedup>().unwrap(), Dedup::Jitter(1e-6));
        assert!("jitter:0".parse::<Dedup>().is_err());
        assert!("merge".parse::<Dedup>().is_err());
    }

    #[test]
    fn session_window_parsing() {
        let w: SessionWindow = "10:00-18:00".parse().unwrap();
        assert_eq!((w.start(), w.end()), (36_000.0, 64_800.0));
        assert_eq!(w.seconds(), 28_800.0);
        let w: SessionWindow = "100-200.5".parse().unwrap();
        assert_eq!((w.start(), w.end()), (100.0, 200.5));
        assert!("18:00-10:00".parse::<SessionWindow>().is_err());
        assert!(SessionWindow::new(0.0, 86_401.0).is_err());
    }

    #[test]
    fn filter_session_examples() {
        let w = SessionWindow::from_hours(10.0, 18.0).unwrap();
        let s = series(&[9.0 * 3600.0, 11.0 * 3600.0, 19.0 * 3600.0]);
        assert_eq!(filter_session(&s, &w, true).times(), &[3600.0]);
        assert!(filter_session(&EventSeries::empty(), &w, true).is_empty());
        let s = series(&[0.0, 5.0, 86_399.0]);
        assert_eq!(filter_session(&s, &SessionWindow::full_day(), false), s);
        let edge = series(&[36_000.0, 64_800.0]);
        assert_eq!(filter_session(&edge, &w, false).times(), &[36_000.0]);
    }

    #[test]
    fn interval_stats_examples() {
        let st = interval_stats(&series(&[0.0, 1.0, 2.0, 3.0, 4.0]), 0.5).unwrap();
        assert_eq!(st.quantiles, [1.0; 6]);
        assert_eq!(st.mean, 1.0);
        assert_eq!(st.below_latency, 0.0);
        assert!(!st.fat_tailed());

        let st = interval_stats(&series(&[0.0, 1e-4, 1.0, 2.0]), 2.5e-4).unwrap();
        assert!((st.below_latency - 1.0 / 3.0).abs() < 1e-15);

        assert!(matches!(
            interval_stats(&series(&[1.0]), 0.0),
            Err(HawkesError::InsufficientData(_))
        ));
    }

    #[test]
    fn up_move_column_is_fat_tailed() {
        // P_up column of the published interval statistics
        let st = IntervalStats {
            n_events: 4569,
            quantiles: [196e-6, 241e-6, 342e-6, 14.1e-3, 2.5, 16.9],
            mean: 6.3,
            latency: 250e-6,
            below_latency: 0.125,
        };
        assert!(st.fat_tailed());
    }

    #[test]
    fn exogeneity_examples() {
        let r = exogeneity_ratio(0.04, 4569, 8.0 * 3600.0).unwrap();
        assert!((r - 0.252).abs() < 5e-4, "{r}");
        assert_eq!((r * 100.0).round(), 25.0);
        let rate = 1234.0 / 500.0;
        assert!((exogeneity_ratio(rate, 1234, 500.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(exogeneity_ratio(0.0, 17, 10.0).unwrap(), 0.0);
        assert!(exogeneity_ratio(0.1, 0, 10.0).is_err());
        assert!(exogeneity_ratio(0.1, 3, 0.0).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("hawkes-data-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let s = series(&[0.1, 0.2 + 1e-17, 1.0 / 3.0, 12345.678901234567]);
        let p = dir.join("plain.txt");
        write_plain(&p, &s).unwrap();
        assert_eq!(
            read_plain(&p, Dedup::Reject).unwrap().data.times(),
            s.times()
        );
        let ids = vec!["0".to_string(), "1".to_string()];
        let both = vec![s.clone(), series(&[0.05, 7.0])];
        let p = dir.join("long.csv");
        write_long(&p, &ids, &both).unwrap();
        let back = read_long(&p, Dedup::Reject).unwrap().data;
        assert_eq!(back.ids, ids);
        assert_eq!(back.series[0].times(), both[0].times());
        assert_eq!(back.series[1].times(), both[1].times());
        fs::remove_dir_all(&dir).unwrap();
    }

    fn increasing() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(1e-9f64..1e3, 1..60).prop_map(|gaps| {
            let mut t = 0.0;
            gaps.into_iter()
                .map(|g| {
                    t += g;
                    t
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn plain_text_round_trip(t in increasing()) {
            let s = EventSeries::new(t).unwrap();
            let back = parse_plain(&format_plain(&s), Dedup::Reject).unwrap().data;
            prop_assert_eq!(back.times(), s.times());
        }

        #[test]
        fn long_text_round_trip(a in increasing(), b in increasing()) {
            let ids = vec!["0".to_string(), "1".to_string()];
            let all = vec![EventSeries::new(a).unwrap(), EventSeries::new(b).unwrap()];
            let back = parse_long(&format_long(&ids, &all), Dedup::Reject).unwrap().data;
            prop_assert_eq!(back.ids, ids);
            prop_assert_eq!(back.series[0].times(), all[0].times());
            prop_assert_eq!(back.series[1].times(), all[1].times());
        }

        #[test]
        fn filter_is_idempotent(t in increasing(), start in 0.0f64..2e4, len in 1.0f64..4e4) {
            let s = EventSeries::new(t).unwrap();
            let w = SessionWindow::new(start, (start + len).min(SECONDS_PER_DAY)).unwrap();
            let once = filter_session(&s, &w, false);
            prop_assert_eq!(filter_session(&once, &w, false), once);
        }

        #[test]
        fn quantiles_match_direct_sort(t in increasing()) {
            prop_assume!(t.len() >= 2);
            let s = EventSeries::new(t.clone()).unwrap();
            let st = interval_stats(&s, 0.0).unwrap();
            let mut dt: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
            dt.sort_by(f64::total_cmp);
            for (k, p) in QUANTILE_LEVELS.iter().enumerate() {
                // smallest value with at least a fraction p of the sample at or below it
                let direct = *dt
                    .iter()
                    .find(|&&v| dt.iter().filter(|&&u| u <= v).count() as f64 >= p * dt.len() as f64 - 1e-9)
                    .unwrap();
                prop_assert_eq!(st.quantiles[k], direct);
            }
            prop_assert!(st.quantiles.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(st.mean >= 0.0);
        }

        #[test]
        fn ratio_is_homogeneous(l in 1e-4f64..10.0, n in 1usize..100_000, secs in 1.0f64..1e5, k in 1u32..50) {
            let r1 = exogeneity_ratio(l, n, secs).unwrap();
            let r2 = exogeneity_ratio(l * k as f64, n * k as usize, secs).unwrap();
            prop_assert!((r1 - r2).abs() <= 1e-12 * r1.abs().max(1e-300));
        }
    }
}
