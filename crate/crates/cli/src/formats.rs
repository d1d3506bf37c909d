//! Time-tag stream files: a fixed-width binary format and a CSV twin.
//!
//! The binary layout is a 16-byte magic, a little-endian u32 format
//! version, the stated duration and tag count, the origin block (seed and
//! description), then one 16-byte record per tag: u64 timestamp in
//! picoseconds, u8 channel, seven zero pad bytes. Picoseconds in 64 bits
//! cover runs nine orders of magnitude past the second mark at
//! sub-jitter resolution. The CSV twin carries the same header fields as
//! `#` comments above a `timestamp_ps,channel` table.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Lines, Read, Write};
use std::path::Path;

use spekit_core::sim::{Origin, Tag, TimeTagStream};

/// First bytes of every binary stream file.
pub const MAGIC: [u8; 16] = *b"SPEKITTAGSTREAM\0";
pub const FORMAT_VERSION: u32 = 1;
/// Bytes per binary tag record.
pub const RECORD_BYTES: usize = 16;

/// On-disk encoding of a time-tag stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamFormat {
    Binary,
    Csv,
}

impl StreamFormat {
    /// `.csv` paths hold the text twin; everything else is binary.
    pub fn for_path(path: &Path) -> StreamFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => StreamFormat::Csv,
            _ => StreamFormat::Binary,
        }
    }
}

pub fn write_stream(path: &Path, stream: &TimeTagStream, format: StreamFormat) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        StreamFormat::Binary => write_binary(&mut w, stream)?,
        StreamFormat::Csv => write_csv(&mut w, stream)?,
    }
    w.flush()
}

fn write_binary<W: Write>(w: &mut W, stream: &TimeTagStream) -> io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&stream.duration_ps.to_le_bytes())?;
    w.write_all(&(stream.tags.len() as u64).to_le_bytes())?;
    match stream.origin.seed {
        Some(seed) => {
            w.write_all(&[1])?;
            w.write_all(&seed.to_le_bytes())?;
        }
        None => {
            w.write_all(&[0])?;
            w.write_all(&0u64.to_le_bytes())?;
        }
    }
    let desc = stream.origin.description.as_bytes();
    w.write_all(&(desc.len() as u32).to_le_bytes())?;
    w.write_all(desc)?;
    for tag in &stream.tags {
        let mut record = [0u8; RECORD_BYTES];
        record[..8].copy_from_slice(&tag.time_ps.to_le_bytes());
        record[8] = tag.channel;
        w.write_all(&record)?;
    }
    Ok(())
}

fn write_csv<W: Write>(w: &mut W, stream: &TimeTagStream) -> io::Result<()> {
    writeln!(w, "# spekit time tags v{FORMAT_VERSION}")?;
    writeln!(w, "# duration_ps = {}", stream.duration_ps)?;
    if let Some(seed) = stream.origin.seed {
        writeln!(w, "# seed = {seed}")?;
    }
    if !stream.origin.description.is_empty() {
        // The header is line oriented; a description cannot span lines.
        writeln!(w, "# description = {}", stream.origin.description.replace('\n', " "))?;
    }
    writeln!(w, "timestamp_ps,channel")?;
    for tag in &stream.tags {
        writeln!(w, "{},{}", tag.time_ps, tag.channel)?;
    }
    Ok(())
}

/// Header fields read before any tag record.
#[derive(Debug, Clone, Default)]
pub struct StreamHeader {
    /// Stated record length; absent in a CSV twin written without it.
    pub duration_ps: Option<u64>,
    pub origin: Origin,
}

enum Source {
    Binary { reader: BufReader<File>, remaining: u64 },
    Csv { lines: Lines<BufReader<File>>, line_no: usize },
}

/// Incremental tag reader; memory use is one buffered block regardless of
/// file size.
pub struct TagReader {
    source: Source,
    header: StreamHeader,
}

impl TagReader {
    pub fn open(path: &Path) -> Result<TagReader, String> {
        let file = File::open(path).map_err(|e| format!("cannot open {}: {e}", path.display()))?;
        let reader = BufReader::new(file);
        let label = path.display().to_string();
        match StreamFormat::for_path(path) {
            StreamFormat::Binary => open_binary(reader, &label),
            StreamFormat::Csv => open_csv(reader, &label),
        }
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }
}

fn read_u8(reader: &mut BufReader<File>, label: &str) -> Result<u8, String> {
    let mut buf = [0u8; 1];
    reader.read_exact(&mut buf).map_err(|_| format!("{label}: truncated header"))?;
    Ok(buf[0])
}

fn read_u32(reader: &mut BufReader<File>, label: &str) -> Result<u32, String> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf).map_err(|_| format!("{label}: truncated header"))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(reader: &mut BufReader<File>, label: &str) -> Result<u64, String> {
    let mut buf = [0u8; 8];
    reader.read_exact(&mut buf).map_err(|_| format!("{label}: truncated header"))?;
    Ok(u64::from_le_bytes(buf))
}

fn open_binary(mut reader: BufReader<File>, label: &str) -> Result<TagReader, String> {
    let mut magic = [0u8; 16];
    reader.read_exact(&mut magic).map_err(|_| format!("{label}: too short for a time-tag file"))?;
    if magic != MAGIC {
        return Err(format!("{label}: bad magic, not a spekit time-tag file"));
    }
    let version = read_u32(&mut reader, label)?;
    if version != FORMAT_VERSION {
        return Err(format!("{label}: unsupported format version {version}"));
    }
    let duration_ps = read_u64(&mut reader, label)?;
    let count = read_u64(&mut reader, label)?;
    let seed_flag = read_u8(&mut reader, label)?;
    let seed_value = read_u64(&mut reader, label)?;
    let seed = match seed_flag {
        0 => None,
        1 => Some(seed_value),
        other => return Err(format!("{label}: corrupt seed flag {other}")),
    };
    let desc_len = read_u32(&mut reader, label)? as usize;
    if desc_len > 1 << 20 {
        return Err(format!("{label}: implausible description length {desc_len}"));
    }
    let mut desc = vec![0u8; desc_len];
    reader.read_exact(&mut desc).map_err(|_| format!("{label}: truncated header"))?;
    let description =
        String::from_utf8(desc).map_err(|_| format!("{label}: description is not UTF-8"))?;
    Ok(TagReader {
        source: Source::Binary { reader, remaining: count },
        header: StreamHeader {
            duration_ps: Some(duration_ps),
            origin: Origin { description, seed },
        },
    })
}

fn open_csv(reader: BufReader<File>, label: &str) -> Result<TagReader, String> {
    let mut lines = reader.lines();
    let mut header = StreamHeader::default();
    let mut line_no = 0usize;
    loop {
        let Some(line) = lines.next() else {
            return Err(format!("{label}: missing 'timestamp_ps,channel' header"));
        };
        let line = line.map_err(|e| format!("{label}: {e}"))?;
        line_no += 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                match key.trim() {
                    "duration_ps" => {
                        let v = value.trim().parse().map_err(|_| {
                            format!("{label}: line {line_no}: bad duration_ps value")
                        })?;
                        header.duration_ps = Some(v);
                    }
                    "seed" => {
                        let v = value
                            .trim()
                            .parse()
                            .map_err(|_| format!("{label}: line {line_no}: bad seed value"))?;
                        header.origin.seed = Some(v);
                    }
                    "description" => header.origin.description = value.trim().to_string(),
                    _ => {}
                }
            }
            continue;
        }
        if trimmed != "timestamp_ps,channel" {
            return Err(format!(
                "{label}: line {line_no}: expected 'timestamp_ps,channel' header, got '{trimmed}'"
            ));
        }
        break;
    }
    Ok(TagReader { source: Source::Csv { lines, line_no }, header })
}

impl Iterator for TagReader {
    type Item = Result<Tag, String>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.source {
            Source::Binary { reader, remaining } => {
                if *remaining == 0 {
                    return None;
                }
                let mut record = [0u8; RECORD_BYTES];
                if let Err(e) = reader.read_exact(&mut record) {
                    *remaining = 0;
                    return Some(Err(format!("truncated record: {e}")));
                }
                *remaining -= 1;
                if record[9..] != [0u8; 7] {
                    *remaining = 0;
                    return Some(Err("corrupt record padding".into()));
                }
                let time_ps = u64::from_le_bytes(record[..8].try_into().expect("8 bytes"));
                Some(Ok(Tag { time_ps, channel: record[8] }))
            }
            Source::Csv { lines, line_no } => loop {
                let line = match lines.next()? {
                    Ok(l) => l,
                    Err(e) => return Some(Err(format!("read error: {e}"))),
                };
                *line_no += 1;
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                let Some((t, c)) = trimmed.split_once(',') else {
                    return Some(Err(format!("line {line_no}: expected 'timestamp_ps,channel'")));
                };
                let Ok(time_ps) = t.trim().parse::<u64>() else {
                    return Some(Err(format!("line {line_no}: bad timestamp '{t}'")));
                };
                let Ok(channel) = c.trim().parse::<u8>() else {
                    return Some(Err(format!("line {line_no}: bad channel '{c}'")));
                };
                return Some(Ok(Tag { time_ps, channel }));
            },
        }
    }
}

/// Reads a whole stream file, validating it as a [`TimeTagStream`].
pub fn read_stream(path: &Path) -> Result<TimeTagStream, String> {
    let mut reader = TagReader::open(path)?;
    let header = reader.header().clone();
    let mut tags = Vec::new();
    let mut max_seen = 0u64;
    for item in &mut reader {
        let tag = item.map_err(|e| format!("{}: {e}", path.display()))?;
        max_seen = max_seen.max(tag.time_ps);
        tags.push(tag);
    }
    let duration_ps = header.duration_ps.unwrap_or(max_seen);
    TimeTagStream::new(tags, duration_ps, header.origin)
        .map_err(|e| format!("{}: {e}", path.display()))
}
