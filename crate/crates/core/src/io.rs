//! File formats shared by the pipeline stages: flat `key = value` configs,
//! CSV tables with provenance comments, 32-bit float stereo WAV, and a
//! minimal SVG line chart.
//!
//! Everything here is deliberately small and byte-stable: identical inputs
//! produce identical files, which is what lets a re-run with the same seed
//! and config be compared with `cmp`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

// ---------------------------------------------------------------------------
// key = value files
// ---------------------------------------------------------------------------

/// An ordered list of `key = value` pairs, the format used for run configs
/// and model-parameter files. `#` lines and blank lines are ignored when
/// parsing; duplicate keys are allowed and the last occurrence wins, so a
/// config can be extended by appending overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    pairs: Vec<(String, String)>,
}

impl KvFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing every earlier occurrence.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.pairs.retain(|(k, _)| k != key);
        self.pairs.push((key.to_string(), value.to_string()));
    }

    /// Last value bound to `key`, if any.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let raw = self.get(key).ok_or_else(|| Error::Format(format!("missing key `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("key `{key}`: `{raw}` is not a number")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        let raw = self.get(key).ok_or_else(|| Error::Format(format!("missing key `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("key `{key}`: `{raw}` is not an integer")))
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Format(format!("line {}: empty key", i + 1)));
            }
            pairs.push((key.to_string(), value.trim().to_string()));
        }
        Ok(Self { pairs })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_text())?)
    }
}

/// 16-hex-digit digest of the key/value *content* (keys sorted first, so two
/// configs that bind the same values hash alike regardless of line order).
/// Every artifact embeds this hash so outputs can be traced to their config.
pub fn config_hash(kv: &KvFile) -> String {
    let mut sorted: Vec<&(String, String)> = kv.pairs.iter().collect();
    sorted.sort();
    let mut hasher = Sha256::new();
    for (k, v) in sorted {
        hasher.update(k.as_bytes());
        hasher.update(b"=");
        hasher.update(v.as_bytes());
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(16);
    for byte in &digest[..8] {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

// ---------------------------------------------------------------------------
// CSV tables
// ---------------------------------------------------------------------------

/// A CSV table in a deliberately restricted dialect: optional leading `#`
/// comment lines (provenance), one header line, comma-separated fields with
/// no quoting. Fields must therefore not contain commas, quotes, or
/// newlines; the writer rejects them instead of escaping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn check_field(field: &str) -> Result<()> {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        return Err(Error::Format(format!("CSV field `{field}` needs quoting (unsupported)")));
    }
    Ok(())
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            comments: Vec::new(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Index of the named column.
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing CSV column `{name}`")))
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        for c in &self.comments {
            let _ = writeln!(out, "# {c}");
        }
        for field in &self.header {
            check_field(field)?;
        }
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            if row.len() != self.header.len() {
                return Err(Error::Format(format!(
                    "CSV row has {} fields, header has {}",
                    row.len(),
                    self.header.len()
                )));
            }
            for field in row {
                check_field(field)?;
            }
            let _ = writeln!(out, "{}", row.join(","));
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Self::default();
        for line in text.lines() {
            if let Some(comment) = line.strip_prefix('#') {
                if table.header.is_empty() {
                    table.comments.push(comment.trim().to_string());
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<String> = line.split(',').map(|f| f.to_string()).collect();
            if table.header.is_empty() {
                table.header = fields;
            } else {
                table.rows.push(fields);
            }
        }
        if table.header.is_empty() {
            return Err(Error::Format("CSV has no header line".into()));
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_text()?)?)
    }
}

/// Shortest round-trip decimal form of `x` — the one number format used in
/// CSV bodies, so identical values always serialize identically.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

// ---------------------------------------------------------------------------
// 32-bit float stereo WAV
// ---------------------------------------------------------------------------

fn le32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn le16(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

/// Writes a two-channel IEEE-float WAV (format tag 3, 32-bit), interleaved
/// left/right.
pub fn write_wav_stereo(path: &Path, fs_hz: u32, left: &[f32], right: &[f32]) -> Result<()> {
    if left.len() != right.len() {
        return Err(Error::LengthMismatch { left: left.len(), right: right.len() });
    }
    let data_len = (left.len() * 2 * 4) as u32;
    let mut bytes = Vec::with_capacity(58 + data_len as usize);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(50 + data_len).to_le_bytes()); // chunks after this field
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&3u16.to_le_bytes()); // IEEE float
    bytes.extend_from_slice(&2u16.to_le_bytes()); // stereo
    bytes.extend_from_slice(&fs_hz.to_le_bytes());
    bytes.extend_from_slice(&(fs_hz * 8).to_le_bytes()); // byte rate
    bytes.extend_from_slice(&8u16.to_le_bytes()); // block align
    bytes.extend_from_slice(&32u16.to_le_bytes()); // bits per sample
    bytes.extend_from_slice(b"fact");
    bytes.extend_from_slice(&4u32.to_le_bytes());
    bytes.extend_from_slice(&(left.len() as u32).to_le_bytes());
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    for (l, r) in left.iter().zip(right) {
        bytes.extend_from_slice(&l.to_le_bytes());
        bytes.extend_from_slice(&r.to_le_bytes());
    }
    Ok(fs::write(path, bytes)?)
}

/// Reads a WAV written by [`write_wav_stereo`] (or any float-32 stereo WAV)
/// back as `(sample_rate, left, right)`.
pub fn read_wav_stereo(path: &Path) -> Result<(u32, Vec<f32>, Vec<f32>)> {
    let bytes = fs::read(path)?;
    let bad = |what: &str| Error::Format(format!("{}: {what}", path.display()));
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let mut fs_hz = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let len = le32(&bytes, at + 4) as usize;
        let body_end = at + 8 + len;
        if body_end > bytes.len() {
            return Err(bad("truncated chunk"));
        }
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(bad("short fmt chunk"));
                }
                let format = le16(&bytes, at + 8);
                let channels = le16(&bytes, at + 10);
                let bits = le16(&bytes, at + 22);
                if format != 3 || channels != 2 || bits != 32 {
                    return Err(bad("expected 32-bit float stereo"));
                }
                fs_hz = Some(le32(&bytes, at + 12));
            }
            b"data" => data = Some(&bytes[at + 8..body_end]),
            _ => {}
        }
        at = body_end + (len & 1); // chunks are word-aligned
    }
    let fs_hz = fs_hz.ok_or_else(|| bad("missing fmt chunk"))?;
    let data = data.ok_or_else(|| bad("missing data chunk"))?;
    if data.len() % 8 != 0 {
        return Err(bad("data chunk is not whole stereo frames"));
    }
    let frames = data.len() / 8;
    let mut left = Vec::with_capacity(frames);
    let mut right = Vec::with_capacity(frames);
    for i in 0..frames {
        left.push(f32::from_le_bytes(data[8 * i..8 * i + 4].try_into().unwrap()));
        right.push(f32::from_le_bytes(data[8 * i + 4..8 * i + 8].try_into().unwrap()));
    }
    Ok((fs_hz, left, right))
}

// ---------------------------------------------------------------------------
// minimal SVG line chart
// ---------------------------------------------------------------------------

/// Renders named (x, y) series as a self-contained SVG line chart with axes,
/// tick labels, and a legend. Enough for the report figures; not a plotting
/// library.
pub fn svg_line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(&str, Vec<(f64, f64)>)],
) -> Result<String> {
    if series.is_empty() || series.iter().any(|(_, pts)| pts.is_empty()) {
        return Err(Error::EmptyInput);
    }
    let (width, height) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (64.0, 24.0, 40.0, 52.0);
    let (pw, ph) = (width - ml - mr, height - mt - mb);

    let all = series.iter().flat_map(|(_, pts)| pts.iter());
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + (1.0 - (y - y0) / (y1 - y0)) * ph;

    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(svg, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{title}</text>",
        ml + pw / 2.0
    );

    // Axes with five ticks each.
    let _ = writeln!(
        svg,
        "<path d=\"M {ml} {mt} V {} H {}\" fill=\"none\" stroke=\"black\"/>",
        mt + ph,
        ml + pw
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let (px, py) = (sx(fx), sy(fy));
        let _ = writeln!(
            svg,
            "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>",
            mt + ph,
            mt + ph + 4.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            mt + ph + 18.0,
            trim_tick(fx)
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{ml}\" y2=\"{py}\" stroke=\"black\"/>",
            ml - 4.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            ml - 8.0,
            py + 4.0,
            trim_tick(fy)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>",
        ml + pw / 2.0,
        height - 12.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{y_label}</text>",
        mt + ph / 2.0,
        mt + ph / 2.0
    );

    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> =
            pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            path.join(" ")
        );
        let ly = mt + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"3\"/>",
            ml + pw - 90.0,
            ml + pw - 70.0
        );
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\">{name}</text>", ml + pw - 64.0, ly + 4.0);
    }
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

fn trim_tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("pinna-sonar-io-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    // ---- key = value ----

    #[test]
    fn kv_round_trips_through_text() {
        let mut kv = KvFile::new();
        kv.set("chirp.f_start_hz", 5000.0);
        kv.set("chirp.f_end_hz", 20000.0);
        kv.set("label", "parallel");
        let parsed = KvFile::parse(&kv.to_text()).unwrap();
        assert_eq!(parsed, kv);
    }

    #[test]
    fn kv_skips_comments_and_blank_lines() {
        let kv = KvFile::parse("# a comment\n\n  seed = 7 \n# trailing\n").unwrap();
        assert_eq!(kv.pairs().len(), 1);
        assert_eq!(kv.get("seed"), Some("7"));
        assert_eq!(kv.get_u64("seed").unwrap(), 7);
    }

    #[test]
    fn kv_reports_bad_lines_with_numbers() {
        let err = KvFile::parse("a = 1\nnot a pair\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "got: {err}");
        assert!(KvFile::parse(" = 3\n").is_err());
    }

    #[test]
    fn kv_duplicate_keys_last_wins() {
        let kv = KvFile::parse("x = 1\nx = 2\n").unwrap();
        assert_eq!(kv.get("x"), Some("2"));
        let mut kv = kv;
        kv.set("x", 9);
        assert_eq!(kv.pairs().iter().filter(|(k, _)| k == "x").count(), 1);
    }

    #[test]
    fn kv_typed_getters_report_key_names() {
        let kv = KvFile::parse("x = abc\n").unwrap();
        assert!(kv.get_f64("x").unwrap_err().to_string().contains("`x`"));
        assert!(kv.get_f64("missing").unwrap_err().to_string().contains("missing"));
    }

    #[test]
    fn config_hash_ignores_order_but_not_values() {
        let a = KvFile::parse("a = 1\nb = 2\n").unwrap();
        let b = KvFile::parse("b = 2\na = 1\n").unwrap();
        let c = KvFile::parse("a = 1\nb = 3\n").unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&c));
        assert_eq!(config_hash(&a).len(), 16);
        assert!(config_hash(&a).chars().all(|c| c.is_ascii_hexdigit()));
    }

    // ---- CSV ----

    #[test]
    fn csv_round_trips() {
        let mut t = CsvTable::new(&["site", "az_deg", "ratio"]);
        t.comments.push("config_hash = deadbeef01234567".into());
        t.push_row(vec!["0".into(), "-28".into(), fmt_f64(0.8125)]);
        t.push_row(vec!["1".into(), "7".into(), fmt_f64(1.0)]);
        let text = t.to_text().unwrap();
        let back = CsvTable::parse(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column("ratio").unwrap(), 2);
        assert!(back.column("nope").is_err());
        // Byte stability.
        assert_eq!(text, t.to_text().unwrap());
    }

    #[test]
    fn csv_rejects_fields_needing_quotes() {
        let mut t = CsvTable::new(&["a"]);
        t.push_row(vec!["x,y".into()]);
        assert!(t.to_text().is_err());
    }

    #[test]
    fn csv_rejects_ragged_rows_and_headerless_text() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.rows.push(vec!["1".into()]);
        assert!(t.to_text().is_err());
        assert!(CsvTable::parse("# only a comment\n").is_err());
    }

    // ---- WAV ----

    #[test]
    fn wav_round_trips_exact_samples() {
        let path = tmp("roundtrip.wav");
        let left: Vec<f32> = (0..777).map(|i| (i as f32 * 0.01).sin()).collect();
        let right: Vec<f32> = (0..777).map(|i| (i as f32 * 0.02).cos()).collect();
        write_wav_stereo(&path, 100_000, &left, &right).unwrap();
        let (fs_hz, l, r) = read_wav_stereo(&path).unwrap();
        assert_eq!(fs_hz, 100_000);
        assert_eq!(l, left);
        assert_eq!(r, right);
    }

    #[test]
    fn wav_rejects_mismatched_channels_and_garbage() {
        let path = tmp("garbage.wav");
        assert!(matches!(
            write_wav_stereo(&path, 100_000, &[0.0], &[0.0, 1.0]),
            Err(Error::LengthMismatch { .. })
        ));
        fs::write(&path, b"not a wav at all").unwrap();
        assert!(read_wav_stereo(&path).is_err());
    }

    // ---- SVG ----

    #[test]
    fn svg_chart_contains_series_and_labels() {
        let svg = svg_line_chart(
            "Accuracy vs train size",
            "pulses per train",
            "ratio",
            &[
                ("±3°", vec![(3.0, 0.7), (5.0, 0.8), (20.0, 0.95)]),
                ("±5°", vec![(3.0, 0.9), (5.0, 0.95), (20.0, 1.0)]),
            ],
        )
        .unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("Accuracy vs train size"));
        assert!(svg.contains("pulses per train"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn svg_chart_rejects_empty_series() {
        assert!(svg_line_chart("t", "x", "y", &[]).is_err());
        assert!(svg_line_chart("t", "x", "y", &[("s", vec![])]).is_err());
    }
}
