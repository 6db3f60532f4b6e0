//! SCADA table and alarm-log ingestion.
//!
//! A SCADA CSV has a header `timestamp,<param>...` followed by one row per
//! 10-minute interval; empty cells are missing values. An alarm CSV has the
//! header `start_time,duration_s,code,description,category`. Timestamps in
//! either file may be epoch seconds or ISO-8601 (`2020-01-01T00:10:00Z`,
//! `2020-01-01 00:10:00`).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{data, Error, Result};
use crate::ROW_SECONDS;

/// Raw SCADA records of one turbine.
#[derive(Debug, Clone, PartialEq)]
pub struct ScadaTable {
    pub turbine_id: String,
    pub timestamps: Vec<i64>,
    pub param_ids: Vec<String>,
    /// Row-major `timestamps.len() x param_ids.len()`, NaN where absent.
    pub values: Vec<f64>,
}

impl ScadaTable {
    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_params(&self) -> usize {
        self.param_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub start_time: i64,
    pub duration: i64,
    pub raw_code: u32,
    pub description: String,
    pub category: String,
}

impl AlarmEvent {
    /// Whether the event touches the 10-minute interval starting at `row_start`.
    ///
    /// Both intervals are half-open. A zero-duration event is treated as an
    /// instant and marks the interval containing it.
    pub fn touches_row(&self, row_start: i64) -> bool {
        let row_end = row_start + ROW_SECONDS;
        if self.duration == 0 {
            row_start <= self.start_time && self.start_time < row_end
        } else {
            self.start_time < row_end && self.start_time + self.duration > row_start
        }
    }
}

/// Bijection between raw alarm codes and contiguous tags `1..=K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmCodebook {
    /// Raw codes in ascending order; the tag of `raw_codes[i]` is `i + 1`.
    raw_codes: Vec<u32>,
}

impl AlarmCodebook {
    pub fn from_raw_codes(codes: impl IntoIterator<Item = u32>) -> Result<Self> {
        let mut raw_codes: Vec<u32> = codes.into_iter().filter(|&c| c != 0).collect();
        raw_codes.sort_unstable();
        raw_codes.dedup();
        if raw_codes.is_empty() {
            return Err(data("alarm logs contain no non-zero alarm codes"));
        }
        Ok(Self { raw_codes })
    }

    /// Number of distinct alarm tags (K).
    pub fn len(&self) -> usize {
        self.raw_codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_codes.is_empty()
    }

    pub fn tag(&self, raw_code: u32) -> Option<u32> {
        self.raw_codes
            .binary_search(&raw_code)
            .ok()
            .map(|i| i as u32 + 1)
    }

    pub fn raw_code(&self, tag: u32) -> Option<u32> {
        (tag as usize)
            .checked_sub(1)
            .and_then(|i| self.raw_codes.get(i).copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.raw_codes
            .iter()
            .enumerate()
            .map(|(i, &raw)| (raw, i as u32 + 1))
    }
}

/// One turbine's parameters with the binary alarm identifier (`y1`) and the
/// alarm tag column (`y2`, 0 = no alarm).
#[derive(Debug, Clone, PartialEq)]
pub struct MergedDataset {
    pub turbine_id: String,
    pub timestamps: Vec<i64>,
    pub param_ids: Vec<String>,
    pub values: Vec<f64>,
    pub y1: Vec<u8>,
    pub y2: Vec<u32>,
}

impl MergedDataset {
    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_params(&self) -> usize {
        self.param_ids.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let m = self.n_params();
        &self.values[t * m..(t + 1) * m]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        let m = self.n_params();
        self.values.iter().skip(j).step_by(m).copied()
    }

    pub fn alarm_count(&self) -> usize {
        self.y1.iter().filter(|&&v| v == 1).count()
    }

    /// Checks the shape and `y2 > 0 <=> y1 == 1` invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_rows();
        if self.values.len() != n * self.n_params() {
            return Err(data(format!(
                "{}: value matrix has {} cells, expected {}x{}",
                self.turbine_id,
                self.values.len(),
                n,
                self.n_params()
            )));
        }
        if self.y1.len() != n || self.y2.len() != n {
            return Err(data(format!("{}: label columns do not match row count", self.turbine_id)));
        }
        if let Some(t) = (0..n).find(|&t| (self.y2[t] > 0) != (self.y1[t] == 1) || self.y1[t] > 1) {
            return Err(data(format!("{}: inconsistent alarm labels at row {t}", self.turbine_id)));
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 4] = b"AFCD";
    const VERSION: u32 = 1;

    /// Little-endian binary cache used between pipeline stages.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_u32::<LittleEndian>(Self::VERSION)?;
        write_str(&mut w, &self.turbine_id)?;
        w.write_u64::<LittleEndian>(self.n_rows() as u64)?;
        w.write_u64::<LittleEndian>(self.n_params() as u64)?;
        for p in &self.param_ids {
            write_str(&mut w, p)?;
        }
        for &t in &self.timestamps {
            w.write_i64::<LittleEndian>(t)?;
        }
        for &v in &self.values {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.write_all(&self.y1)?;
        for &c in &self.y2 {
            w.write_u32::<LittleEndian>(c)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let bad = |e: std::io::Error| Error::Parse(format!("dataset cache: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != Self::MAGIC {
            return Err(Error::Parse("dataset cache: bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(bad)?;
        if version != Self::VERSION {
            return Err(Error::Parse(format!("dataset cache: unsupported version {version}")));
        }
        let turbine_id = read_str(&mut r).map_err(bad)?;
        let n = r.read_u64::<LittleEndian>().map_err(bad)? as usize;
        let m = r.read_u64::<LittleEndian>().map_err(bad)? as usize;
        let param_ids = (0..m).map(|_| read_str(&mut r)).collect::<std::io::Result<_>>().map_err(bad)?;
        let mut timestamps = vec![0i64; n];
        r.read_i64_into::<LittleEndian>(&mut timestamps).map_err(bad)?;
        let mut values = vec![0f64; n * m];
        r.read_f64_into::<LittleEndian>(&mut values).map_err(bad)?;
        let mut y1 = vec![0u8; n];
        r.read_exact(&mut y1).map_err(bad)?;
        let mut y2 = vec![0u32; n];
        r.read_u32_into::<LittleEndian>(&mut y2).map_err(bad)?;
        let ds = Self { turbine_id, timestamps, param_ids, values, y1, y2 };
        ds.validate()?;
        Ok(ds)
    }
}

impl From<&MergedDataset> for ScadaTable {
    fn from(ds: &MergedDataset) -> Self {
        ScadaTable {
            turbine_id: ds.turbine_id.clone(),
            timestamps: ds.timestamps.clone(),
            param_ids: ds.param_ids.clone(),
            values: ds.values.clone(),
        }
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> std::io::Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// Parses epoch seconds or an ISO-8601 date-time (UTC when no offset given).
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

pub fn format_timestamp(epoch: i64) -> String {
    DateTime::from_timestamp(epoch, 0)
        .map(|dt| dt.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| epoch.to_string())
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Reads a SCADA CSV. The turbine id is the file stem up to the first `.`.
pub fn parse_scada(path: &Path) -> Result<ScadaTable> {
    let turbine_id = path
        .file_name()
        .and_then(|s| s.to_str())
        .and_then(|s| s.split('.').next())
        .unwrap_or("turbine")
        .to_string();
    let mut rdr = open_csv(path)?;
    parse_scada_reader(turbine_id, &mut rdr).map_err(|e| e.context(path.display()))
}

pub fn parse_scada_reader<R: Read>(turbine_id: String, rdr: &mut csv::Reader<R>) -> Result<ScadaTable> {
    let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(Error::Parse("missing header row".into()));
    }
    let param_ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let m = param_ids.len();

    let mut rows: Vec<(i64, Vec<f64>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row_no = i + 1;
        let rec = rec.map_err(|e| Error::Parse(format!("row {row_no}: {e}")))?;
        if rec.len() != m + 1 {
            return Err(Error::Parse(format!(
                "row {row_no}: expected {} fields, found {}",
                m + 1,
                rec.len()
            )));
        }
        let ts = parse_timestamp(&rec[0])
            .ok_or_else(|| Error::Parse(format!("row {row_no}: malformed timestamp {:?}", &rec[0])))?;
        let vals = rec
            .iter()
            .skip(1)
            .enumerate()
            .map(|(j, cell)| {
                if cell.is_empty() {
                    Ok(f64::NAN)
                } else {
                    cell.parse::<f64>().map_err(|_| {
                        Error::Parse(format!("row {row_no}, column {}: not a number: {cell:?}", param_ids[j]))
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((ts, vals));
    }
    if rows.is_empty() {
        return Err(data("SCADA file has no data rows"));
    }
    rows.sort_by_key(|(ts, _)| *ts);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(data(format!("duplicate timestamp {}", format_timestamp(w[0].0))));
    }
    let timestamps = rows.iter().map(|(t, _)| *t).collect();
    let values = rows.into_iter().flat_map(|(_, v)| v).collect();
    Ok(ScadaTable { turbine_id, timestamps, param_ids, values })
}

#[derive(Debug, Deserialize)]
struct AlarmRecord {
    start_time: String,
    duration_s: String,
    code: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    category: String,
}

pub fn parse_alarm_log(path: &Path) -> Result<Vec<AlarmEvent>> {
    let mut rdr = open_csv(path)?;
    parse_alarm_reader(&mut rdr).map_err(|e| e.context(path.display()))
}

pub fn parse_alarm_reader<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<AlarmEvent>> {
    let mut events = Vec::new();
    for (i, rec) in rdr.deserialize::<AlarmRecord>().enumerate() {
        let row_no = i + 1;
        let rec = rec.map_err(|e| Error::Parse(format!("row {row_no}: {e}")))?;
        let start_time = parse_timestamp(&rec.start_time)
            .ok_or_else(|| Error::Parse(format!("row {row_no}: malformed start_time {:?}", rec.start_time)))?;
        let duration: f64 = rec
            .duration_s
            .parse()
            .map_err(|_| Error::Parse(format!("row {row_no}: malformed duration {:?}", rec.duration_s)))?;
        if !duration.is_finite() {
            return Err(Error::Parse(format!("row {row_no}: malformed duration {:?}", rec.duration_s)));
        }
        if duration < 0.0 {
            return Err(data(format!("row {row_no}: negative duration {duration}")));
        }
        let raw_code = rec
            .code
            .parse()
            .map_err(|_| Error::Parse(format!("row {row_no}: malformed alarm code {:?}", rec.code)))?;
        events.push(AlarmEvent {
            start_time,
            duration: duration.ceil() as i64,
            raw_code,
            description: rec.description,
            category: rec.category,
        });
    }
    events.sort_by_key(|e| e.start_time);
    Ok(events)
}

/// Re-tags the distinct non-zero raw codes of all turbines as `1..=K` in
/// ascending numeric order.
pub fn build_codebook<'a>(events: impl IntoIterator<Item = &'a AlarmEvent>) -> Result<AlarmCodebook> {
    AlarmCodebook::from_raw_codes(events.into_iter().map(|e| e.raw_code))
}

/// Marks every SCADA row whose 10-minute interval intersects an alarm.
///
/// Code-0 events (normal operation) are ignored. When several events touch
/// one row, the earliest start wins, then the lowest tag.
pub fn merge_alarms(scada: &ScadaTable, events: &[AlarmEvent], codebook: &AlarmCodebook) -> Result<MergedDataset> {
    let n = scada.n_rows();
    let mut best: Vec<Option<(i64, u32)>> = vec![None; n];
    for ev in events.iter().filter(|e| e.raw_code != 0) {
        let tag = codebook
            .tag(ev.raw_code)
            .ok_or_else(|| data(format!("alarm code {} is missing from the codebook", ev.raw_code)))?;
        // Candidate rows have start in (ev.start - ROW_SECONDS, ev.end].
        let lo = scada.timestamps.partition_point(|&ts| ts + ROW_SECONDS <= ev.start_time);
        let hi = scada
            .timestamps
            .partition_point(|&ts| ts <= ev.start_time + ev.duration);
        for (slot, &ts) in best[lo..hi].iter_mut().zip(&scada.timestamps[lo..hi]) {
            if !ev.touches_row(ts) {
                continue;
            }
            let key = (ev.start_time, tag);
            if slot.is_none_or(|cur| key < cur) {
                *slot = Some(key);
            }
        }
    }
    let y2: Vec<u32> = best.iter().map(|b| b.map_or(0, |(_, tag)| tag)).collect();
    let y1 = y2.iter().map(|&c| u8::from(c > 0)).collect();
    Ok(MergedDataset {
        turbine_id: scada.turbine_id.clone(),
        timestamps: scada.timestamps.clone(),
        param_ids: scada.param_ids.clone(),
        values: scada.values.clone(),
        y1,
        y2,
    })
}

/// Writes the SCADA layout read by [`parse_scada`].
pub fn write_scada<W: Write>(w: W, timestamps: &[i64], param_ids: &[String], values: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["timestamp".to_string()];
    header.extend(param_ids.iter().cloned());
    wtr.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
    let m = param_ids.len();
    let mut rec = Vec::with_capacity(m + 1);
    for (t, &ts) in timestamps.iter().enumerate() {
        rec.clear();
        rec.push(format_timestamp(ts));
        rec.extend(values[t * m..(t + 1) * m].iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
        wtr.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::Io { context: "scada csv".into(), source: e })
}

pub fn write_alarm_log<W: Write>(w: W, events: &[AlarmEvent]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["start_time", "duration_s", "code", "description", "category"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    for ev in events {
        wtr.write_record([
            format_timestamp(ev.start_time),
            ev.duration.to_string(),
            ev.raw_code.to_string(),
            ev.description.clone(),
            ev.category.clone(),
        ])
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::Io { context: "alarm csv".into(), source: e })
}

/// Per-turbine raw-code counts, handy for codebook diagnostics.
pub fn code_histogram(events: &[AlarmEvent]) -> BTreeMap<u32, usize> {
    let mut hist = BTreeMap::new();
    for e in events {
        *hist.entry(e.raw_code).or_insert(0) += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reader(text: &str) -> csv::Reader<&[u8]> {
        csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes())
    }

    fn event(start: i64, duration: i64, code: u32) -> AlarmEvent {
        AlarmEvent { start_time: start, duration, raw_code: code, description: String::new(), category: String::new() }
    }

    fn table(n: usize) -> ScadaTable {
        ScadaTable {
            turbine_id: "WT01".into(),
            timestamps: (0..n as i64).map(|t| t * ROW_SECONDS).collect(),
            param_ids: vec!["a".into()],
            values: vec![0.0; n],
        }
    }

    #[test]
    fn empty_cell_becomes_nan() {
        let t = parse_scada_reader("x".into(), &mut reader("timestamp,a,b\n0,1,2\n600,,4\n1200,5,6\n")).unwrap();
        assert_eq!(t.n_rows(), 3);
        let nans: Vec<usize> = (0..t.values.len()).filter(|&i| t.values[i].is_nan()).collect();
        assert_eq!(nans, vec![2]);
    }

    #[test]
    fn rows_sorted_by_time() {
        let t = parse_scada_reader("x".into(), &mut reader("timestamp,a\n1200,3\n0,1\n600,2\n")).unwrap();
        assert_eq!(t.timestamps, vec![0, 600, 1200]);
        assert_eq!(t.values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn iso_timestamps() {
        let t = parse_scada_reader(
            "x".into(),
            &mut reader("timestamp,a\n2020-01-01T00:10:00Z,1\n2020-01-01 00:00:00,2\n"),
        )
        .unwrap();
        assert_eq!(t.timestamps, vec![1_577_836_800, 1_577_837_400]);
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let err = parse_scada_reader("x".into(), &mut reader("timestamp,a,b\n0,1,2\n600,3,abc\n")).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse(_)));
        assert!(msg.contains("row 2") && msg.contains("column b"), "{msg}");
    }

    #[test]
    fn scada_errors() {
        let e = parse_scada_reader("x".into(), &mut reader("timestamp,a\n0,1\nnoon,2\n")).unwrap_err();
        assert!(matches!(e, Error::Parse(ref m) if m.contains("row 2")));
        let e = parse_scada_reader("x".into(), &mut reader("timestamp,a\n0,1\n0,2\n")).unwrap_err();
        assert!(matches!(e, Error::Data(_)));
        let e = parse_scada_reader("x".into(), &mut reader("timestamp,a\n")).unwrap_err();
        assert!(matches!(e, Error::Data(_)));
    }

    #[test]
    fn alarm_log_sorted_and_validated() {
        let text = "start_time,duration_s,code,description,category\n1200,60,7,b,x\n0,0,3,a,\n";
        let evs = parse_alarm_reader(&mut reader(text)).unwrap();
        assert_eq!(evs.iter().map(|e| e.start_time).collect::<Vec<_>>(), vec![0, 1200]);
        assert_eq!(evs[0].duration, 0);

        let bad = "start_time,duration_s,code,description,category\n0,-5,3,a,b\n";
        assert!(matches!(parse_alarm_reader(&mut reader(bad)), Err(Error::Data(_))));
        let bad = "start_time,duration_s,code,description,category\n0,5,x,a,b\n";
        assert!(matches!(parse_alarm_reader(&mut reader(bad)), Err(Error::Parse(_))));
    }

    #[test]
    fn zero_duration_marks_containing_row() {
        let cb = AlarmCodebook::from_raw_codes([9]).unwrap();
        let ds = merge_alarms(&table(5), &[event(2 * 600 + 17, 0, 9)], &cb).unwrap();
        assert_eq!(ds.y1, vec![0, 0, 1, 0, 0]);
    }

    #[test]
    fn codebook_ascending_tags() {
        let cb = AlarmCodebook::from_raw_codes([901, 12, 507]).unwrap();
        assert_eq!(cb.iter().collect::<Vec<_>>(), vec![(12, 1), (507, 2), (901, 3)]);
        let cb = AlarmCodebook::from_raw_codes([0, 7]).unwrap();
        assert_eq!(cb.len(), 1);
        assert_eq!(cb.tag(7), Some(1));
        assert_eq!(cb.tag(0), None);
        assert!(matches!(AlarmCodebook::from_raw_codes([0, 0]), Err(Error::Data(_))));
    }

    #[test]
    fn merge_spans_rows() {
        let cb = AlarmCodebook::from_raw_codes([40]).unwrap();
        let ds = merge_alarms(&table(10), &[event(4 * 600, 25 * 60, 40)], &cb).unwrap();
        assert_eq!(ds.y1, vec![0, 0, 0, 0, 1, 1, 1, 0, 0, 0]);
        assert_eq!(ds.y2[4..7], [1, 1, 1]);
        // brute-force oracle over every row
        for t in 0..10 {
            let (rs, re) = (t as i64 * 600, t as i64 * 600 + 600);
            let hit = rs < 4 * 600 + 1500 && 4 * 600 < re;
            assert_eq!(ds.y1[t] == 1, hit, "row {t}");
        }
    }

    #[test]
    fn merge_without_events() {
        let cb = AlarmCodebook::from_raw_codes([1]).unwrap();
        let ds = merge_alarms(&table(4), &[], &cb).unwrap();
        assert!(ds.y1.iter().all(|&v| v == 0) && ds.y2.iter().all(|&v| v == 0));
    }

    #[test]
    fn merge_tie_lowest_tag() {
        let cb = AlarmCodebook::from_raw_codes([2, 5]).unwrap();
        let evs = [event(600, 100, 5), event(600, 100, 2)];
        let ds = merge_alarms(&table(3), &evs, &cb).unwrap();
        assert_eq!(ds.y2, vec![0, 1, 0]);
        // earliest start beats lower tag
        let evs = [event(610, 100, 2), event(605, 100, 5)];
        let ds = merge_alarms(&table(3), &evs, &cb).unwrap();
        assert_eq!(ds.y2, vec![0, 2, 0]);
    }

    #[test]
    fn merge_unknown_code() {
        let cb = AlarmCodebook::from_raw_codes([2]).unwrap();
        assert!(matches!(merge_alarms(&table(3), &[event(0, 1, 3)], &cb), Err(Error::Data(_))));
    }

    #[test]
    fn binary_cache_roundtrip() {
        let cb = AlarmCodebook::from_raw_codes([2]).unwrap();
        let mut t = table(3);
        t.values[1] = f64::NAN;
        let ds = merge_alarms(&t, &[event(600, 1, 2)], &cb).unwrap();
        let mut buf = Vec::new();
        ds.write_binary(&mut buf).unwrap();
        let back = MergedDataset::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back.y2, ds.y2);
        assert!(back.values[1].is_nan());
        assert_eq!(back.timestamps, ds.timestamps);
    }

    proptest! {
        #[test]
        fn merge_matches_bruteforce(
            evs in prop::collection::vec((0i64..12_000, 0i64..2_000, 1u32..6), 0..12),
        ) {
            let events: Vec<AlarmEvent> = evs.iter().map(|&(s, d, c)| event(s, d, c)).collect();
            let cb = AlarmCodebook::from_raw_codes(1..6).unwrap();
            let scada = table(20);
            let ds = merge_alarms(&scada, &events, &cb).unwrap();
            prop_assert_eq!(ds.y1.iter().filter(|&&v| v == 1).count(), ds.y2.iter().filter(|&&v| v > 0).count());
            for t in 0..20 {
                let rs = t as i64 * ROW_SECONDS;
                let expect = events
                    .iter()
                    .filter(|e| {
                        let re = rs + ROW_SECONDS;
                        if e.duration == 0 { rs <= e.start_time && e.start_time < re }
                        else { e.start_time < re && e.start_time + e.duration > rs }
                    })
                    .map(|e| (e.start_time, e.raw_code))
                    .min()
                    .map_or(0, |(_, c)| c);
                prop_assert_eq!(ds.y2[t], expect);
            }
            let again = merge_alarms(&ScadaTable::from(&ds), &events, &cb).unwrap();
            prop_assert_eq!(&again, &ds);
            let bare = merge_alarms(&ScadaTable::from(&ds), &[], &cb).unwrap();
            prop_assert_eq!(&bare.values, &ds.values);
            prop_assert_eq!(&bare.timestamps, &ds.timestamps);
        }

        #[test]
        fn codebook_roundtrip(codes in prop::collection::vec(1u32..10_000, 1..50)) {
            let cb = AlarmCodebook::from_raw_codes(codes.iter().copied()).unwrap();
            for &c in &codes {
                let tag = cb.tag(c).unwrap();
                prop_assert_eq!(cb.raw_code(tag), Some(c));
            }
            for tag in 1..=cb.len() as u32 {
                prop_assert_eq!(cb.tag(cb.raw_code(tag).unwrap()), Some(tag));
            }
        }
    }
}
