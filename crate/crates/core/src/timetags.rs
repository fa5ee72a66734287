//! Time-tag streams and their on-disk formats.
//!
//! Binary layout: `PTTG`, version (u16 LE), metadata length (u32 LE), UTF-8
//! metadata as sorted `key=value` lines, then 9-byte records: channel u8
//! (0 = A, 1 = B) and timestamp u64 LE in picoseconds.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PTTG";
pub const FORMAT_VERSION: u16 = 1;
pub const RECORD_BYTES: usize = 9;
const HEADER_BYTES: usize = 10;
pub const PS_PER_S: f64 = 1e12;
/// Shortest segment `segment` will produce.
pub const MIN_SEGMENT_PS: u64 = 1000;

pub const KEY_DURATION: &str = "duration_ps";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    A,
    B,
}

impl Channel {
    pub fn code(self) -> u8 {
        match self {
            Channel::A => 0,
            Channel::B => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Channel> {
        match code {
            0 => Some(Channel::A),
            1 => Some(Channel::B),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Channel::A => "A",
            Channel::B => "B",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTag {
    pub channel: Channel,
    pub timestamp_ps: u64,
}

impl TimeTag {
    pub fn new(channel: Channel, timestamp_ps: u64) -> Self {
        TimeTag {
            channel,
            timestamp_ps,
        }
    }
}

pub fn seconds_to_ps(t: f64) -> u64 {
    (t * PS_PER_S).round().max(0.0) as u64
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TimeTagStream {
    records: Vec<TimeTag>,
    pub metadata: BTreeMap<String, String>,
}

impl TimeTagStream {
    /// Fails with a format error (offset 0) if timestamps decrease.
    pub fn new(records: Vec<TimeTag>, metadata: BTreeMap<String, String>) -> Result<Self> {
        if let Some(i) = first_unsorted(&records) {
            return Err(Error::Format {
                offset: 0,
                message: format!("record {i} has a decreasing timestamp"),
            });
        }
        Ok(TimeTagStream { records, metadata })
    }

    /// Sorts `records` (stable by timestamp) before building the stream.
    pub fn from_unsorted(mut records: Vec<TimeTag>, metadata: BTreeMap<String, String>) -> Self {
        records.sort_by_key(|r| r.timestamp_ps);
        TimeTagStream { records, metadata }
    }

    pub fn empty(duration_ps: u64) -> Self {
        let mut s = TimeTagStream::default();
        s.set_duration_ps(duration_ps);
        s
    }

    pub fn records(&self) -> &[TimeTag] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TimeTag> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Declared duration, or one past the last timestamp if none is declared.
    pub fn duration_ps(&self) -> u64 {
        self.metadata
            .get(KEY_DURATION)
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| self.records.last().map_or(0, |r| r.timestamp_ps + 1))
    }

    pub fn set_duration_ps(&mut self, d: u64) {
        self.metadata.insert(KEY_DURATION.into(), d.to_string());
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ps() as f64 / PS_PER_S
    }

    pub fn timestamps(&self, channel: Channel) -> Vec<u64> {
        self.records
            .iter()
            .filter(|r| r.channel == channel)
            .map(|r| r.timestamp_ps)
            .collect()
    }

    pub fn all_timestamps(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.timestamp_ps).collect()
    }

    pub fn count(&self, channel: Channel) -> usize {
        self.records.iter().filter(|r| r.channel == channel).count()
    }

    /// Splits into one stream per channel, each keeping the metadata.
    pub fn split_channels(&self) -> (TimeTagStream, TimeTagStream) {
        let pick = |c| TimeTagStream {
            records: self
                .records
                .iter()
                .copied()
                .filter(|r| r.channel == c)
                .collect(),
            metadata: self.metadata.clone(),
        };
        (pick(Channel::A), pick(Channel::B))
    }

    /// Merges two sorted streams; metadata is taken from `self`.
    pub fn merge(&self, other: &TimeTagStream) -> TimeTagStream {
        let mut out = Vec::with_capacity(self.len() + other.len());
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.records, &other.records);
        while i < a.len() && j < b.len() {
            if b[j].timestamp_ps < a[i].timestamp_ps {
                out.push(b[j]);
                j += 1;
            } else {
                out.push(a[i]);
                i += 1;
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        TimeTagStream {
            records: out,
            metadata: self.metadata.clone(),
        }
    }
}

fn first_unsorted(records: &[TimeTag]) -> Option<usize> {
    records
        .windows(2)
        .position(|w| w[1].timestamp_ps < w[0].timestamp_ps)
        .map(|i| i + 1)
}

fn metadata_text(meta: &BTreeMap<String, String>) -> Result<String> {
    let mut s = String::new();
    for (k, v) in meta {
        if k.is_empty() || k.contains(['=', '\n', '\r']) || v.contains(['\n', '\r']) {
            return Err(Error::domain(format!(
                "metadata entry {k:?} cannot be serialized"
            )));
        }
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    Ok(s)
}

fn parse_metadata_line(line: &str) -> Option<(String, String)> {
    let (k, v) = line.split_once('=')?;
    Some((k.to_string(), v.to_string()))
}

pub fn encode_stream(stream: &TimeTagStream) -> Result<Vec<u8>> {
    let meta = metadata_text(&stream.metadata)?;
    let meta_len = u32::try_from(meta.len()).map_err(|_| Error::domain("metadata too large"))?;
    let mut buf = Vec::with_capacity(HEADER_BYTES + meta.len() + RECORD_BYTES * stream.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&meta_len.to_le_bytes());
    buf.extend_from_slice(meta.as_bytes());
    for r in &stream.records {
        buf.push(r.channel.code());
        buf.extend_from_slice(&r.timestamp_ps.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_stream(bytes: &[u8]) -> Result<TimeTagStream> {
    let fail = |offset: usize, message: String| Error::Format {
        offset: offset as u64,
        message,
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(fail(0, "bad magic".into()));
    }
    if bytes.len() < HEADER_BYTES {
        return Err(fail(bytes.len(), "truncated header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let meta_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let meta_end = HEADER_BYTES
        .checked_add(meta_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| fail(6, format!("metadata length {meta_len} exceeds file")))?;
    let meta = std::str::from_utf8(&bytes[HEADER_BYTES..meta_end]).map_err(|e| {
        fail(
            HEADER_BYTES + e.valid_up_to(),
            "metadata is not UTF-8".into(),
        )
    })?;
    let mut metadata = BTreeMap::new();
    let mut line_start = HEADER_BYTES;
    for line in meta.split_terminator('\n') {
        let (k, v) = parse_metadata_line(line)
            .ok_or_else(|| fail(line_start, format!("malformed metadata line {line:?}")))?;
        metadata.insert(k, v);
        line_start += line.len() + 1;
    }
    let body = &bytes[meta_end..];
    if body.len() % RECORD_BYTES != 0 {
        let offset = meta_end + body.len() / RECORD_BYTES * RECORD_BYTES;
        return Err(fail(offset, "truncated record".into()));
    }
    let mut records = Vec::with_capacity(body.len() / RECORD_BYTES);
    let mut prev = 0u64;
    for (i, chunk) in body.chunks_exact(RECORD_BYTES).enumerate() {
        let offset = meta_end + i * RECORD_BYTES;
        let channel = Channel::from_code(chunk[0])
            .ok_or_else(|| fail(offset, format!("invalid channel code {}", chunk[0])))?;
        let t = u64::from_le_bytes(chunk[1..].try_into().unwrap());
        if t < prev {
            return Err(fail(
                offset + 1,
                format!("timestamp {t} decreases from {prev}"),
            ));
        }
        prev = t;
        records.push(TimeTag::new(channel, t));
    }
    Ok(TimeTagStream { records, metadata })
}

pub fn write_stream(stream: &TimeTagStream, path: &Path) -> Result<()> {
    let bytes = encode_stream(stream)?;
    write_atomic(path, &bytes)
}

pub fn read_stream(path: &Path) -> Result<TimeTagStream> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_stream(&bytes)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = BufWriter::new(fs::File::create(&tmp)?);
        f.write_all(bytes)?;
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// CSV form: metadata as leading `# key=value` lines, then
/// `channel,timestamp_ps` and one record per line.
pub fn encode_csv(stream: &TimeTagStream) -> Result<String> {
    let mut s = String::new();
    for line in metadata_text(&stream.metadata)?.lines() {
        s.push_str("# ");
        s.push_str(line);
        s.push('\n');
    }
    s.push_str("channel,timestamp_ps\n");
    for r in &stream.records {
        s.push_str(r.channel.label());
        s.push(',');
        s.push_str(&r.timestamp_ps.to_string());
        s.push('\n');
    }
    Ok(s)
}

pub fn decode_csv(reader: impl Read) -> Result<TimeTagStream> {
    let mut metadata = BTreeMap::new();
    let mut records = Vec::new();
    let mut header_seen = false;
    let parse_err = |line: usize, message: String| Error::Parse { line, message };
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if let Some(meta) = trimmed.strip_prefix('#') {
            let (k, v) = parse_metadata_line(meta.trim_start())
                .ok_or_else(|| parse_err(lineno, "malformed metadata comment".into()))?;
            metadata.insert(k, v);
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        if !header_seen {
            if trimmed != "channel,timestamp_ps" {
                return Err(parse_err(
                    lineno,
                    "expected header channel,timestamp_ps".into(),
                ));
            }
            header_seen = true;
            continue;
        }
        let (c, t) = trimmed
            .split_once(',')
            .ok_or_else(|| parse_err(lineno, "expected two fields".into()))?;
        let channel = match c.trim() {
            "A" | "0" => Channel::A,
            "B" | "1" => Channel::B,
            other => return Err(parse_err(lineno, format!("invalid channel {other:?}"))),
        };
        let t: u64 = t
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("invalid timestamp {t:?}")))?;
        if records.last().is_some_and(|r: &TimeTag| t < r.timestamp_ps) {
            return Err(parse_err(lineno, "timestamps must be nondecreasing".into()));
        }
        records.push(TimeTag::new(channel, t));
    }
    if !header_seen {
        return Err(parse_err(1, "missing header".into()));
    }
    Ok(TimeTagStream { records, metadata })
}

pub fn write_csv(stream: &TimeTagStream, path: &Path) -> Result<()> {
    write_atomic(path, encode_csv(stream)?.as_bytes())
}

pub fn read_csv(path: &Path) -> Result<TimeTagStream> {
    decode_csv(fs::File::open(path)?)
}

/// Reads either format, choosing CSV for a `.csv` extension.
pub fn read_any(path: &Path) -> Result<TimeTagStream> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => read_csv(path),
        _ => read_stream(path),
    }
}

pub fn write_any(stream: &TimeTagStream, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => write_csv(stream, path),
        _ => write_stream(stream, path),
    }
}

/// Keeps each record independently with probability `q`.
pub fn thin(stream: &TimeTagStream, q: f64, seed: u64) -> Result<TimeTagStream> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::domain(format!(
            "survival probability must lie in [0, 1], got {q}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = stream
        .records
        .iter()
        .copied()
        .filter(|_| rng.gen::<f64>() < q)
        .collect();
    Ok(TimeTagStream {
        records,
        metadata: stream.metadata.clone(),
    })
}

/// Uniform tags on `[0, duration_ps)` with a Poisson number of events.
pub(crate) fn poisson_tags(
    channel: Channel,
    rate: f64,
    duration_ps: u64,
    rng: &mut ChaCha8Rng,
) -> Vec<TimeTag> {
    let mean = rate * duration_ps as f64 / PS_PER_S;
    if mean <= 0.0 || duration_ps == 0 {
        return Vec::new();
    }
    let n = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
    let mut tags: Vec<TimeTag> = (0..n)
        .map(|_| TimeTag::new(channel, rng.gen_range(0..duration_ps)))
        .collect();
    tags.sort_unstable_by_key(|r| r.timestamp_ps);
    tags
}

/// Adds homogeneous Poisson tags at `rate` counts/s to each channel over
/// `duration` seconds.
pub fn inject_poisson(
    stream: &TimeTagStream,
    rate: f64,
    duration: f64,
    seed: u64,
) -> Result<TimeTagStream> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::domain(format!("rate must be >= 0, got {rate}")));
    }
    if !(duration >= 0.0) {
        return Err(Error::domain(format!(
            "duration must be >= 0, got {duration}"
        )));
    }
    let duration_ps = seconds_to_ps(duration);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = poisson_tags(Channel::A, rate, duration_ps, &mut rng);
    let b = poisson_tags(Channel::B, rate, duration_ps, &mut rng);
    let noise = TimeTagStream {
        records: a,
        metadata: BTreeMap::new(),
    }
    .merge(&TimeTagStream {
        records: b,
        metadata: BTreeMap::new(),
    });
    let mut out = stream.merge(&noise);
    if !out.metadata.contains_key(KEY_DURATION) {
        out.set_duration_ps(duration_ps);
    }
    Ok(out)
}

/// Splits the time axis `[0, duration)` into `k` contiguous pieces, rebasing
/// timestamps to each piece's start. A tag on a boundary belongs to the later
/// piece; tags at or beyond the duration are dropped.
pub fn segment(stream: &TimeTagStream, k: usize) -> Result<Vec<TimeTagStream>> {
    let duration = stream.duration_ps();
    if k == 0 {
        return Err(Error::domain("segment count must be >= 1"));
    }
    if k as u64 > duration / MIN_SEGMENT_PS {
        return Err(Error::domain(format!(
            "{k} segments exceed the {} ns of data",
            duration / MIN_SEGMENT_PS
        )));
    }
    let bound = |j: usize| (duration as u128 * j as u128 / k as u128) as u64;
    let mut out = Vec::with_capacity(k);
    let mut rest = stream.records.as_slice();
    for j in 0..k {
        let (start, end) = (bound(j), bound(j + 1));
        let skip = rest.partition_point(|r| r.timestamp_ps < start);
        rest = &rest[skip..];
        let take = rest.partition_point(|r| r.timestamp_ps < end);
        let records = rest[..take]
            .iter()
            .map(|r| TimeTag::new(r.channel, r.timestamp_ps - start))
            .collect();
        rest = &rest[take..];
        let mut metadata = stream.metadata.clone();
        metadata.insert(KEY_DURATION.into(), (end - start).to_string());
        if k > 1 {
            metadata.insert("segment_index".into(), j.to_string());
            metadata.insert("segment_offset_ps".into(), start.to_string());
        }
        out.push(TimeTagStream { records, metadata });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TimeTagStream {
        let mut s = TimeTagStream::new(
            vec![
                TimeTag::new(Channel::A, 5),
                TimeTag::new(Channel::B, 5),
                TimeTag::new(Channel::A, 1_000_000),
            ],
            BTreeMap::new(),
        )
        .unwrap();
        s.set_duration_ps(2_000_000);
        s.metadata.insert("seed".into(), "42".into());
        s
    }

    #[test]
    fn binary_round_trip() {
        for s in [TimeTagStream::default(), TimeTagStream::empty(10), sample()] {
            let bytes = encode_stream(&s).unwrap();
            assert_eq!(decode_stream(&bytes).unwrap(), s);
            assert_eq!(encode_stream(&s).unwrap(), bytes);
        }
    }

    #[test]
    fn csv_round_trip() {
        let s = sample();
        let text = encode_csv(&s).unwrap();
        assert!(text.contains("channel,timestamp_ps\nA,5\nB,5\n"));
        assert_eq!(decode_csv(text.as_bytes()).unwrap(), s);
    }

    #[test]
    fn decreasing_timestamps_rejected() {
        let mut bytes = encode_stream(&sample()).unwrap();
        let n = bytes.len();
        // Make the last timestamp smaller than its predecessor.
        bytes[n - 8..].copy_from_slice(&1u64.to_le_bytes());
        match decode_stream(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, n - 8),
            other => panic!("expected format error, got {other:?}"),
        }
        assert!(TimeTagStream::new(
            vec![TimeTag::new(Channel::A, 2), TimeTag::new(Channel::A, 1)],
            BTreeMap::new()
        )
        .is_err());
    }

    #[test]
    fn header_errors_name_offsets() {
        let good = encode_stream(&sample()).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_stream(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_stream(&bad),
            Err(Error::Format { offset: 4, .. })
        ));
        let bad = &good[..good.len() - 3];
        assert!(matches!(decode_stream(bad), Err(Error::Format { .. })));
        let mut bad = good;
        let n = bad.len();
        bad[n - 9] = 7;
        assert!(matches!(decode_stream(&bad), Err(Error::Format { .. })));
    }

    #[test]
    fn thin_limits() {
        let s = sample();
        assert_eq!(thin(&s, 1.0, 3).unwrap(), s);
        assert!(thin(&s, 0.0, 3).unwrap().is_empty());
        assert!(thin(&s, 1.5, 3).is_err());
    }

    #[test]
    fn inject_zero_rate_is_identity() {
        let s = sample();
        assert_eq!(inject_poisson(&s, 0.0, 1e-6, 1).unwrap(), s);
    }

    #[test]
    fn segment_rules() {
        let s = sample();
        let one = segment(&s, 1).unwrap();
        assert_eq!(one, vec![s.clone()]);
        let two = segment(&s, 2).unwrap();
        assert_eq!(two[0].len(), 2);
        // 1_000_000 is exactly the boundary: it goes to the later piece at 0.
        assert_eq!(two[1].records(), &[TimeTag::new(Channel::A, 0)]);
        assert_eq!(two[1].duration_ps(), 1_000_000);
        assert!(segment(&s, 0).is_err());
        assert!(segment(&s, 2001).is_err());
        assert!(segment(&s, 2000).is_ok());
    }
}
