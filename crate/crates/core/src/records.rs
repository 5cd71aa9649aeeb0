//! Time-stamped detection records: event model, text and binary files,
//! merging, cropping, detector post-processing and synthetic generators.
//!
//! Timestamps are integer picoseconds. Text files carry them in a `t_ns`
//! column as fixed-point nanoseconds with exactly three decimals, so the
//! round trip is exact.
//!
//! ```text
//! # format=cavity-beats-record/1
//! # duration_ns=5000.000
//! # truth=1
//! # seed=7
//! t_ns,channel,truth
//! 12.340,H_det_A,1
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PS_PER_S: f64 = 1e12;
const FORMAT_TAG: &str = "cavity-beats-record/1";
const BINARY_MAGIC: &[u8; 8] = b"CBREC\x00\x01\n";
const COLUMNS: &str = "t_ns,channel,truth";

/// Seconds to the nearest picosecond (negative values clamp to 0).
pub fn ps(seconds: f64) -> u64 {
    (seconds * PS_PER_S).round().max(0.0) as u64
}

pub fn seconds(ps: u64) -> f64 {
    ps as f64 / PS_PER_S
}

/// Detection channels, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "H_det_A")]
    HDetA,
    #[serde(rename = "H_det_B")]
    HDetB,
    #[serde(rename = "V_out")]
    VOut,
    #[serde(rename = "side_pi")]
    SidePi,
    #[serde(rename = "side_sigma_plus")]
    SideSigmaPlus,
    #[serde(rename = "side_sigma_minus")]
    SideSigmaMinus,
}

impl Channel {
    pub const ALL: [Channel; 6] = [
        Channel::HDetA,
        Channel::HDetB,
        Channel::VOut,
        Channel::SidePi,
        Channel::SideSigmaPlus,
        Channel::SideSigmaMinus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::HDetA => "H_det_A",
            Channel::HDetB => "H_det_B",
            Channel::VOut => "V_out",
            Channel::SidePi => "side_pi",
            Channel::SideSigmaPlus => "side_sigma_plus",
            Channel::SideSigmaMinus => "side_sigma_minus",
        }
    }

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    pub fn from_ordinal(o: u8) -> Option<Channel> {
        Self::ALL.get(o as usize).copied()
    }

    /// Side emission into free space (never detected in an experiment).
    pub fn is_side(self) -> bool {
        matches!(self, Channel::SidePi | Channel::SideSigmaPlus | Channel::SideSigmaMinus)
    }

    pub fn is_h(self) -> bool {
        matches!(self, Channel::HDetA | Channel::HDetB)
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown channel '{s}'"))
    }
}

/// Set of channels given on the command line as `H` (both H detectors),
/// `side` (all side channels) or a comma list of channel names.
pub fn parse_channel_set(s: &str) -> Result<Vec<Channel>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "H" => out.extend([Channel::HDetA, Channel::HDetB]),
            "side" => out.extend(Channel::ALL.into_iter().filter(|c| c.is_side())),
            name => out.push(name.parse().map_err(Error::Config)?),
        }
    }
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(Error::Config(format!("empty channel set '{s}'")));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JumpEvent {
    /// Time in picoseconds from the record start.
    pub t_ps: u64,
    pub channel: Channel,
    /// Emitted by the simulation, as opposed to an injected dark count.
    pub truth: bool,
}

impl JumpEvent {
    pub fn new(t_ps: u64, channel: Channel) -> Self {
        Self {
            t_ps,
            channel,
            truth: true,
        }
    }

    pub fn time(&self) -> f64 {
        seconds(self.t_ps)
    }

    fn key(&self) -> (u64, u8, bool) {
        (self.t_ps, self.channel.ordinal(), self.truth)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub events: Vec<JumpEvent>,
    pub duration_ps: u64,
    /// Side-channel events are complete (simulation output).
    pub has_truth: bool,
    /// Sorted, disjoint `[start, end)` spans (ps) removed by post-selection;
    /// they count as unobserved time.
    #[serde(default)]
    pub excluded_ps: Vec<(u64, u64)>,
    /// Parameter snapshot and seed lineage as `key=value` pairs.
    pub metadata: BTreeMap<String, String>,
}

impl DetectionRecord {
    pub fn new(duration_ps: u64, has_truth: bool) -> Self {
        Self {
            events: Vec::new(),
            duration_ps,
            has_truth,
            excluded_ps: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn duration(&self) -> f64 {
        seconds(self.duration_ps)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Observed time: duration minus excluded spans.
    pub fn live_ps(&self) -> u64 {
        self.duration_ps - self.excluded_ps.iter().map(|(s, e)| e - s).sum::<u64>()
    }

    pub fn count(&self, channel: Channel) -> usize {
        self.events.iter().filter(|e| e.channel == channel).count()
    }

    /// Times (ps) of events on any of `channels`.
    pub fn times(&self, channels: &[Channel]) -> Vec<u64> {
        self.events
            .iter()
            .filter(|e| channels.contains(&e.channel))
            .map(|e| e.t_ps)
            .collect()
    }

    /// Copy restricted to `channels`.
    pub fn select(&self, channels: &[Channel]) -> Self {
        Self {
            events: self.events.iter().filter(|e| channels.contains(&e.channel)).copied().collect(),
            ..self.clone_header()
        }
    }

    pub(crate) fn clone_header(&self) -> Self {
        Self {
            events: Vec::new(),
            duration_ps: self.duration_ps,
            has_truth: self.has_truth,
            excluded_ps: self.excluded_ps.clone(),
            metadata: self.metadata.clone(),
        }
    }

    /// Checks ordering and bounds. Line numbers in errors are 1-based event
    /// positions.
    pub fn validate(&self) -> Result<()> {
        let mut prev_end = 0;
        for &(s, e) in &self.excluded_ps {
            if s >= e || s < prev_end || e > self.duration_ps {
                return Err(Error::Validation {
                    line: 0,
                    reason: format!("excluded span {s}..{e} ps is empty, unsorted or out of range"),
                });
            }
            prev_end = e;
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.t_ps > self.duration_ps {
                return Err(Error::Validation {
                    line: i + 1,
                    reason: format!("timestamp {} ps exceeds duration {} ps", e.t_ps, self.duration_ps),
                });
            }
            if i > 0 && e.key() < self.events[i - 1].key() {
                return Err(Error::Validation {
                    line: i + 1,
                    reason: "events out of time order".into(),
                });
            }
        }
        Ok(())
    }

    /// Events within `[start, end)` shifted to start at zero.
    pub fn crop(&self, start_ps: u64, end_ps: u64) -> Self {
        let end = end_ps.max(start_ps);
        Self {
            events: self
                .events
                .iter()
                .filter(|e| e.t_ps >= start_ps && e.t_ps < end)
                .map(|e| JumpEvent {
                    t_ps: e.t_ps - start_ps,
                    ..*e
                })
                .collect(),
            duration_ps: end - start_ps,
            excluded_ps: self
                .excluded_ps
                .iter()
                .map(|&(s, e)| (s.clamp(start_ps, end) - start_ps, e.clamp(start_ps, end) - start_ps))
                .filter(|(s, e)| s < e)
                .collect(),
            ..self.clone_header()
        }
    }

    fn sort(&mut self) {
        self.events.sort_by_key(JumpEvent::key);
    }
}

fn check_meta(key: &str, value: &str) -> Result<()> {
    let bad = |s: &str| s.contains('\n') || s.contains('\r');
    if key.is_empty() || key.contains('=') || bad(key) || bad(value) {
        return Err(Error::Config(format!("metadata entry '{key}' is not a single-line key=value")));
    }
    Ok(())
}

fn format_ns(t_ps: u64) -> String {
    format!("{}.{:03}", t_ps / 1000, t_ps % 1000)
}

fn parse_ns(s: &str) -> std::result::Result<u64, String> {
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    let digits = |x: &str| !x.is_empty() && x.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || !(frac.is_empty() || (digits(frac) && frac.len() <= 3)) {
        return Err(format!("malformed timestamp '{s}'"));
    }
    let whole: u64 = int.parse().map_err(|_| format!("timestamp '{s}' out of range"))?;
    let mut sub = 0u64;
    for (k, b) in frac.bytes().enumerate() {
        sub += (b - b'0') as u64 * 10u64.pow(2 - k as u32);
    }
    whole
        .checked_mul(1000)
        .and_then(|w| w.checked_add(sub))
        .ok_or_else(|| format!("timestamp '{s}' out of range"))
}

fn header_lines(record: &DetectionRecord) -> Result<Vec<String>> {
    let mut lines = vec![
        format!("format={FORMAT_TAG}"),
        format!("duration_ns={}", format_ns(record.duration_ps)),
        format!("truth={}", u8::from(record.has_truth)),
    ];
    if !record.excluded_ps.is_empty() {
        let spans: Vec<String> = record
            .excluded_ps
            .iter()
            .map(|&(s, e)| format!("{}:{}", format_ns(s), format_ns(e)))
            .collect();
        lines.push(format!("excluded_ns={}", spans.join(",")));
    }
    for (k, v) in &record.metadata {
        check_meta(k, v)?;
        if matches!(k.as_str(), "format" | "duration_ns" | "truth" | "excluded_ns") {
            return Err(Error::Config(format!("metadata key '{k}' is reserved")));
        }
        lines.push(format!("{k}={v}"));
    }
    Ok(lines)
}

/// Serializes to the text format.
pub fn to_text(record: &DetectionRecord) -> Result<String> {
    record.validate()?;
    let mut s = String::new();
    for l in header_lines(record)? {
        s.push_str("# ");
        s.push_str(&l);
        s.push('\n');
    }
    s.push_str(COLUMNS);
    s.push('\n');
    for e in &record.events {
        s.push_str(&format!("{},{},{}\n", format_ns(e.t_ps), e.channel, u8::from(e.truth)));
    }
    Ok(s)
}

struct HeaderState {
    duration_ps: Option<u64>,
    has_truth: bool,
    excluded_ps: Vec<(u64, u64)>,
    metadata: BTreeMap<String, String>,
}

impl HeaderState {
    fn new() -> Self {
        Self {
            duration_ps: None,
            has_truth: false,
            excluded_ps: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    fn accept(&mut self, line_no: usize, body: &str) -> Result<()> {
        let parse_err = |reason: String| Error::Parse { line: line_no, reason };
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| parse_err(format!("header line without '=': '{body}'")))?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "format" => {
                if v != FORMAT_TAG {
                    return Err(parse_err(format!("unsupported format '{v}'")));
                }
            }
            "duration_ns" => self.duration_ps = Some(parse_ns(v).map_err(parse_err)?),
            "excluded_ns" => {
                for span in v.split(',') {
                    let (a, b) = span
                        .split_once(':')
                        .ok_or_else(|| parse_err(format!("malformed excluded span '{span}'")))?;
                    let a = parse_ns(a).map_err(parse_err)?;
                    let b = parse_ns(b).map_err(parse_err)?;
                    self.excluded_ps.push((a, b));
                }
            }
            "truth" => {
                self.has_truth = match v {
                    "1" => true,
                    "0" => false,
                    _ => return Err(parse_err(format!("truth must be 0 or 1, got '{v}'"))),
                }
            }
            _ => {
                self.metadata.insert(k.to_string(), v.to_string());
            }
        }
        Ok(())
    }

    fn finish(self, events: Vec<JumpEvent>) -> Result<DetectionRecord> {
        let duration_ps = self
            .duration_ps
            .ok_or_else(|| Error::Parse { line: 1, reason: "missing duration_ns header".into() })?;
        let record = DetectionRecord {
            events,
            duration_ps,
            has_truth: self.has_truth,
            excluded_ps: self.excluded_ps,
            metadata: self.metadata,
        };
        record.validate()?;
        Ok(record)
    }
}

fn check_order(events: &[JumpEvent], e: &JumpEvent, duration: Option<u64>, line: usize) -> Result<()> {
    if let Some(prev) = events.last() {
        if e.key() < prev.key() {
            return Err(Error::Validation {
                line,
                reason: format!(
                    "timestamp {} ns precedes previous {} ns",
                    format_ns(e.t_ps),
                    format_ns(prev.t_ps)
                ),
            });
        }
    }
    if let Some(d) = duration {
        if e.t_ps > d {
            return Err(Error::Validation {
                line,
                reason: format!("timestamp {} ns beyond duration", format_ns(e.t_ps)),
            });
        }
    }
    Ok(())
}

/// Parses the text format; errors carry 1-based file line numbers.
pub fn from_text(reader: impl BufRead) -> Result<DetectionRecord> {
    let mut header = HeaderState::new();
    let mut events = Vec::new();
    let mut seen_columns = false;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, reason: e.to_string() })?;
        let line = line.trim_end();
        if !seen_columns {
            if let Some(body) = line.strip_prefix('#') {
                header.accept(line_no, body.trim())?;
                continue;
            }
            if line.trim() != COLUMNS {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!("expected column header '{COLUMNS}'"),
                });
            }
            seen_columns = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse { line: line_no, reason };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, got {}", fields.len())));
        }
        let t_ps = parse_ns(fields[0].trim()).map_err(parse_err)?;
        let channel: Channel = fields[1].trim().parse().map_err(parse_err)?;
        let truth = match fields[2].trim() {
            "1" => true,
            "0" => false,
            other => return Err(parse_err(format!("truth must be 0 or 1, got '{other}'"))),
        };
        let e = JumpEvent { t_ps, channel, truth };
        check_order(&events, &e, header.duration_ps, line_no)?;
        events.push(e);
    }
    if !seen_columns {
        return Err(Error::Parse { line: 0, reason: "missing column header".into() });
    }
    header.finish(events)
}

/// Serializes to the compact binary format: magic, u32 header length,
/// header text (same `key=value` lines), u64 event count, then per event a
/// little-endian u64 picosecond time and a u8 holding the channel ordinal
/// with bit 7 set for truth events.
pub fn to_binary(record: &DetectionRecord) -> Result<Vec<u8>> {
    record.validate()?;
    let header = header_lines(record)?.join("\n");
    let mut out = Vec::with_capacity(24 + header.len() + 9 * record.events.len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(record.events.len() as u64).to_le_bytes());
    for e in &record.events {
        out.extend_from_slice(&e.t_ps.to_le_bytes());
        out.push(e.channel.ordinal() | if e.truth { 0x80 } else { 0 });
    }
    Ok(out)
}

pub fn from_binary(bytes: &[u8]) -> Result<DetectionRecord> {
    let short = |what: &str| Error::Parse { line: 0, reason: format!("truncated binary record ({what})") };
    let rest = bytes.strip_prefix(BINARY_MAGIC.as_slice()).ok_or_else(|| Error::Parse {
        line: 0,
        reason: "bad binary magic".into(),
    })?;
    let (len, rest) = rest.split_at_checked(4).ok_or_else(|| short("header length"))?;
    let len = u32::from_le_bytes(len.try_into().unwrap()) as usize;
    let (text, rest) = rest.split_at_checked(len).ok_or_else(|| short("header"))?;
    let text = std::str::from_utf8(text).map_err(|e| Error::Parse { line: 0, reason: e.to_string() })?;
    let mut header = HeaderState::new();
    for (i, l) in text.lines().enumerate() {
        header.accept(i + 1, l)?;
    }
    let (count, mut rest) = rest.split_at_checked(8).ok_or_else(|| short("event count"))?;
    let count = u64::from_le_bytes(count.try_into().unwrap()) as usize;
    if rest.len() != count.checked_mul(9).ok_or_else(|| short("event count"))? {
        return Err(short("events"));
    }
    let mut events = Vec::with_capacity(count);
    for i in 0..count {
        let (chunk, tail) = rest.split_at(9);
        rest = tail;
        let t_ps = u64::from_le_bytes(chunk[..8].try_into().unwrap());
        let channel = Channel::from_ordinal(chunk[8] & 0x7f).ok_or_else(|| Error::Parse {
            line: i + 1,
            reason: format!("unknown channel ordinal {}", chunk[8] & 0x7f),
        })?;
        let e = JumpEvent {
            t_ps,
            channel,
            truth: chunk[8] & 0x80 != 0,
        };
        check_order(&events, &e, header.duration_ps, i + 1)?;
        events.push(e);
    }
    header.finish(events)
}

/// Writes the text format, or the binary format when the extension is `bin`.
pub fn write_record(record: &DetectionRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if path.extension().is_some_and(|e| e == "bin") {
        to_binary(record)?
    } else {
        to_text(record)?.into_bytes()
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Reads either format (detected from the leading bytes).
pub fn read_record(path: impl AsRef<Path>) -> Result<DetectionRecord> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        from_binary(&bytes)
    } else {
        from_text(bytes.as_slice())
    }
}

/// Time-sorted union of records shifted by `offsets_ps`. Ties are ordered by
/// channel ordinal, so the result does not depend on input order.
pub fn merge_records(records: &[DetectionRecord], offsets_ps: &[u64]) -> Result<DetectionRecord> {
    if records.len() != offsets_ps.len() {
        return Err(Error::Config(format!(
            "{} records but {} offsets",
            records.len(),
            offsets_ps.len()
        )));
    }
    let duration_ps = records
        .iter()
        .zip(offsets_ps)
        .map(|(r, &o)| r.duration_ps + o)
        .max()
        .unwrap_or(0);
    let mut merged = DetectionRecord::new(duration_ps, !records.is_empty() && records.iter().all(|r| r.has_truth));
    merged.events.reserve(records.iter().map(|r| r.len()).sum());
    for (r, &o) in records.iter().zip(offsets_ps) {
        merged.events.extend(r.events.iter().map(|e| JumpEvent { t_ps: e.t_ps + o, ..*e }));
    }
    merged.sort();
    let mut spans: Vec<(u64, u64)> = records
        .iter()
        .zip(offsets_ps)
        .flat_map(|(r, &o)| r.excluded_ps.iter().map(move |&(s, e)| (s + o, e + o)))
        .collect();
    merged.excluded_ps = union_spans(&mut spans);
    if let [single] = records {
        merged.metadata = single.metadata.clone();
    } else {
        merged.metadata.insert("merged_records".into(), records.len().to_string());
    }
    Ok(merged)
}

/// Sorts and merges overlapping `[start, end)` spans.
pub fn union_spans(spans: &mut [(u64, u64)]) -> Vec<(u64, u64)> {
    spans.sort();
    let mut out: Vec<(u64, u64)> = Vec::new();
    for &(s, e) in spans.iter().filter(|(s, e)| s < e) {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// Detector post-processing applied to the H detection channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    /// Probability that an H photon is registered.
    pub efficiency: f64,
    /// Non-paralyzable dead time per detector, seconds.
    pub dead_time: f64,
    /// Dark count rate per detector, 1/s.
    pub dark_rate: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            efficiency: 1.0,
            dead_time: 0.0,
            dark_rate: 0.0,
        }
    }
}

impl DetectorModel {
    pub fn is_ideal(&self) -> bool {
        *self == Self::default()
    }
}

/// Applies efficiency thinning, dark counts (truth = 0) and dead-time
/// censoring to both H detectors. Other channels pass through unchanged.
pub fn apply_detector(record: &DetectionRecord, model: &DetectorModel, seed: u64) -> Result<DetectionRecord> {
    if !(0.0..=1.0).contains(&model.efficiency) || model.dead_time < 0.0 || model.dark_rate < 0.0 {
        return Err(Error::Config(format!("invalid detector model {model:?}")));
    }
    if model.is_ideal() {
        return Ok(record.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = record.clone_header();
    out.events = record
        .events
        .iter()
        .filter(|e| !e.channel.is_h() || rng.gen::<f64>() < model.efficiency)
        .copied()
        .collect();
    if model.dark_rate > 0.0 {
        for ch in [Channel::HDetA, Channel::HDetB] {
            let dark = poisson_times(model.dark_rate, record.duration_ps, &mut rng);
            out.events.extend(dark.into_iter().map(|t_ps| JumpEvent {
                t_ps,
                channel: ch,
                truth: false,
            }));
        }
        out.sort();
    }
    let dead = ps(model.dead_time);
    if dead > 0 {
        let mut last: [Option<u64>; 2] = [None, None];
        out.events.retain(|e| {
            let k = match e.channel {
                Channel::HDetA => 0,
                Channel::HDetB => 1,
                _ => return true,
            };
            match last[k] {
                Some(t) if e.t_ps < t + dead => false,
                _ => {
                    last[k] = Some(e.t_ps);
                    true
                }
            }
        });
    }
    Ok(out)
}

/// Homogeneous Poisson arrival times in `[0, duration_ps)`.
pub fn poisson_times(rate: f64, duration_ps: u64, rng: &mut impl Rng) -> Vec<u64> {
    let mut out = Vec::new();
    if !(rate > 0.0) {
        return out;
    }
    let exp = Exp::new(rate).expect("positive rate");
    let end = seconds(duration_ps);
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t >= end {
            break;
        }
        let p = ps(t);
        if p < duration_ps {
            out.push(p);
        }
    }
    out
}

/// Single-channel Poisson record (coherent light of rate `rate`).
pub fn poisson_record(rate: f64, duration_ps: u64, channel: Channel, seed: u64) -> DetectionRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = DetectionRecord::new(duration_ps, false);
    r.events = poisson_times(rate, duration_ps, &mut rng)
        .into_iter()
        .map(|t| JumpEvent::new(t, channel))
        .collect();
    r.metadata.insert("generator".into(), "poisson".into());
    r.metadata.insert("rate_per_s".into(), format!("{rate:e}"));
    r.metadata.insert("seed".into(), seed.to_string());
    r
}

/// Result of overlaying single-atom records at Poisson arrival times.
#[derive(Debug, Clone)]
pub struct MultiAtomRecord {
    pub record: DetectionRecord,
    pub n_atoms: usize,
    /// `arrival_rate · mean_transit`, the implied average atom number.
    pub mean_atom_number: f64,
}

/// Builds a record of length `duration_ps` from independent single-atom
/// transit records (each centered on its own window) overlaid at Poisson
/// arrival times. `V_out` events are dropped because each single-atom record
/// carries the full drive transmission; the pool is consumed cyclically.
pub fn synthesize_multi_atom(
    pool: &[DetectionRecord],
    arrival_rate: f64,
    mean_transit: f64,
    duration_ps: u64,
    seed: u64,
) -> Result<MultiAtomRecord> {
    if pool.is_empty() {
        return Err(Error::DegenerateInput("empty single-atom record pool".into()));
    }
    let window = pool.iter().map(|r| r.duration_ps).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Atoms centered anywhere in [-window/2, duration + window/2) can
    // contribute; generate over the padded span and crop.
    let arrivals = poisson_times(arrival_rate, duration_ps + window, &mut rng);
    let keep: Vec<Channel> = Channel::ALL.into_iter().filter(|&c| c != Channel::VOut).collect();
    let chosen: Vec<DetectionRecord> = (0..arrivals.len())
        .map(|k| pool[k % pool.len()].select(&keep))
        .collect();
    let mut merged = merge_records(&chosen, &arrivals)?;
    merged = merged.crop(window / 2, window / 2 + duration_ps);
    merged.has_truth = pool.iter().all(|r| r.has_truth);
    merged.metadata = BTreeMap::new();
    merged.metadata.insert("generator".into(), "multi_atom".into());
    merged.metadata.insert("arrival_rate_per_s".into(), format!("{arrival_rate:e}"));
    merged.metadata.insert("mean_atom_number".into(), format!("{}", arrival_rate * mean_transit));
    merged.metadata.insert("seed".into(), seed.to_string());
    Ok(MultiAtomRecord {
        record: merged,
        n_atoms: arrivals.len(),
        mean_atom_number: arrival_rate * mean_transit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DetectionRecord {
        let mut r = DetectionRecord::new(10_000_000, true);
        r.events = vec![
            JumpEvent::new(1, Channel::HDetA),
            JumpEvent::new(12_345, Channel::SidePi),
            JumpEvent {
                t_ps: 9_999_999,
                channel: Channel::VOut,
                truth: false,
            },
        ];
        r.metadata.insert("seed".into(), "42".into());
        r.excluded_ps = vec![(20_000, 30_500), (40_000, 41_000)];
        r
    }

    #[test]
    fn text_round_trip() {
        let r = sample();
        let text = to_text(&r).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 4);
        assert!(text.contains("0.001,H_det_A,1"));
        assert_eq!(from_text(text.as_bytes()).unwrap(), r);
    }

    #[test]
    fn empty_record_is_header_only() {
        let r = DetectionRecord::new(5, false);
        let text = to_text(&r).unwrap();
        assert_eq!(text.lines().last(), Some(COLUMNS));
        assert_eq!(from_text(text.as_bytes()).unwrap(), r);
    }

    #[test]
    fn binary_round_trip() {
        let r = sample();
        assert_eq!(from_binary(&to_binary(&r).unwrap()).unwrap(), r);
    }

    #[test]
    fn integer_nanoseconds_accepted() {
        let text = "# duration_ns=100\nt_ns,channel,truth\n5,H_det_B,1\n";
        let r = from_text(text.as_bytes()).unwrap();
        assert_eq!(r.events[0].t_ps, 5000);
    }

    #[test]
    fn decreasing_time_reports_line() {
        let text = "# duration_ns=100\nt_ns,channel,truth\n5.000,H_det_B,1\n4.999,H_det_A,1\n";
        match from_text(text.as_bytes()) {
            Err(Error::Validation { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_line_is_parse_error() {
        let text = "# duration_ns=100\nt_ns,channel,truth\n5.0001,H_det_B,1\n";
        assert!(matches!(from_text(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let text = "# duration_ns=100\nt_ns,channel,truth\n5,X,1\n";
        assert!(matches!(from_text(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn merge_identity_and_counts() {
        let a = sample();
        let empty = DetectionRecord::new(0, true);
        let m = merge_records(&[a.clone(), empty], &[0, 0]).unwrap();
        assert_eq!(m.events, a.events);
        assert_eq!(m.duration_ps, a.duration_ps);
        let b = poisson_record(1e6, 10_000_000, Channel::HDetB, 3);
        let m = merge_records(&[a.clone(), b.clone()], &[0, 100]).unwrap();
        assert_eq!(m.len(), a.len() + b.len());
        m.validate().unwrap();
    }

    #[test]
    fn detector_thinning_and_dead_time() {
        let r = poisson_record(5e7, 100_000_000, Channel::HDetA, 1);
        let ideal = apply_detector(&r, &DetectorModel::default(), 0).unwrap();
        assert_eq!(ideal, r);
        let half = apply_detector(
            &r,
            &DetectorModel {
                efficiency: 0.5,
                ..Default::default()
            },
            9,
        )
        .unwrap();
        let ratio = half.len() as f64 / r.len() as f64;
        assert!((ratio - 0.5).abs() < 0.05, "{ratio}");
        let dead = apply_detector(
            &r,
            &DetectorModel {
                dead_time: 50e-9,
                ..Default::default()
            },
            9,
        )
        .unwrap();
        let t = dead.times(&[Channel::HDetA]);
        assert!(t.windows(2).all(|w| w[1] - w[0] >= 50_000));
    }

    #[test]
    fn channel_sets() {
        assert_eq!(parse_channel_set("H").unwrap(), vec![Channel::HDetA, Channel::HDetB]);
        assert_eq!(parse_channel_set("side_pi,H_det_B").unwrap(), vec![Channel::HDetB, Channel::SidePi]);
        assert!(parse_channel_set("nope").is_err());
    }
}
