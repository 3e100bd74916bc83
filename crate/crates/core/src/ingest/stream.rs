use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::sensor::SensorId;

const HEADER_NAMES: &str = "sensor_id,rate_hz,channels,start_ms";

/// One timestamped channel group at its nominal rate. Sample `j` is taken at
/// `start_us + j * period_us`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorStream {
    pub sensor: SensorId,
    pub rate_hz: u32,
    pub channels: usize,
    /// Epoch microseconds; files carry milliseconds.
    pub start_us: i64,
    /// Row-major, `len() x channels`.
    pub samples: Vec<f64>,
}

impl SensorStream {
    /// Stream with the rate and channel count prescribed for `sensor`.
    pub fn new(sensor: SensorId, start_ms: i64, samples: Vec<f64>) -> Result<Self> {
        let s = SensorStream {
            sensor,
            rate_hz: sensor.rate_hz(),
            channels: sensor.channels(),
            start_us: start_ms * 1000,
            samples,
        };
        if !s.samples.len().is_multiple_of(s.channels) {
            return Err(Error::InvalidInput(format!(
                "{sensor}: {} values is not a multiple of {} channels",
                s.samples.len(),
                s.channels
            )));
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn period_us(&self) -> i64 {
        1_000_000 / self.rate_hz as i64
    }

    pub fn start_ms(&self) -> f64 {
        self.start_us as f64 / 1000.0
    }

    /// Exclusive end: one period past the last sample.
    pub fn end_us(&self) -> i64 {
        self.start_us + self.len() as i64 * self.period_us()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.rate_hz as f64
    }

    pub fn sample(&self, t: usize) -> &[f64] {
        &self.samples[t * self.channels..(t + 1) * self.channels]
    }

    /// CSV form: one header line of values, then one sample per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 12 + 64);
        let ms = if self.start_us % 1000 == 0 {
            (self.start_us / 1000).to_string()
        } else {
            format!("{:.3}", self.start_us as f64 / 1000.0)
        };
        let _ = writeln!(
            out,
            "{},{},{},{}",
            self.sensor, self.rate_hz, self.channels, ms
        );
        for t in 0..self.len() {
            let row = self.sample(t);
            for (c, v) in row.iter().enumerate() {
                if c > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn parse_err(origin: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_start_us(s: &str) -> Option<i64> {
    if let Ok(ms) = s.parse::<i64>() {
        return ms.checked_mul(1000);
    }
    let ms: f64 = s.parse().ok()?;
    ms.is_finite().then(|| (ms * 1000.0).round() as i64)
}

/// Parse a stream file. `origin` names the source in error messages. The first
/// line holds `sensor_id,rate_hz,channels,start_ms` values; a preceding line of
/// those literal column names is also accepted.
pub fn parse_stream_str(text: &str, origin: &str) -> Result<SensorStream> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (mut hline, mut header) = lines
        .next()
        .ok_or_else(|| parse_err(origin, 1, "malformed header: empty file"))?;
    if header.eq_ignore_ascii_case(HEADER_NAMES) {
        (hline, header) = lines
            .next()
            .ok_or_else(|| parse_err(origin, 2, "malformed header: missing header values"))?;
    }
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(parse_err(
            origin,
            hline,
            format!(
                "malformed header: expected 4 fields ({HEADER_NAMES}), found {}",
                fields.len()
            ),
        ));
    }
    let sensor: SensorId = fields[0]
        .parse()
        .map_err(|e: Error| parse_err(origin, hline, format!("malformed header: {e}")))?;
    let rate: u32 = fields[1].parse().map_err(|_| {
        parse_err(
            origin,
            hline,
            format!("malformed header: bad rate_hz `{}`", fields[1]),
        )
    })?;
    let channels: usize = fields[2].parse().map_err(|_| {
        parse_err(
            origin,
            hline,
            format!("malformed header: bad channels `{}`", fields[2]),
        )
    })?;
    let start_us = parse_start_us(fields[3]).ok_or_else(|| {
        parse_err(
            origin,
            hline,
            format!("malformed header: bad start_ms `{}`", fields[3]),
        )
    })?;
    if rate != sensor.rate_hz() {
        return Err(parse_err(
            origin,
            hline,
            format!("rate mismatch: expected {}", sensor.rate_hz()),
        ));
    }
    if channels != sensor.channels() {
        return Err(parse_err(
            origin,
            hline,
            format!("channel-count mismatch: expected {}", sensor.channels()),
        ));
    }

    let mut samples = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut n = 0;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(
                    origin,
                    lineno,
                    format!("non-numeric sample `{}`", field.trim()),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    origin,
                    lineno,
                    format!("non-finite sample `{}`", field.trim()),
                ));
            }
            samples.push(v);
            n += 1;
        }
        if n != channels {
            return Err(parse_err(
                origin,
                lineno,
                format!("channel-count mismatch: expected {channels}, found {n}"),
            ));
        }
    }
    Ok(SensorStream {
        sensor,
        rate_hz: rate,
        channels,
        start_us,
        samples,
    })
}

pub fn parse_stream(path: &Path) -> Result<SensorStream> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_stream_str(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(header: &str, rows: usize, row: &str) -> String {
        let mut s = format!("{header}\n");
        for _ in 0..rows {
            s.push_str(row);
            s.push('\n');
        }
        s
    }

    #[test]
    fn gsr_sixty_rows_is_fifteen_seconds() {
        let s = parse_stream_str(&csv("GSR,4,1,1000", 60, "0.5"), "gsr.csv").unwrap();
        assert_eq!(s.len(), 60);
        assert_eq!(s.duration_s(), 15.0);
        assert_eq!(s.end_us() - s.start_us, 15_000_000);
    }

    #[test]
    fn temp_450_rows_is_ninety_seconds() {
        let text = csv(
            "sensor_id,rate_hz,channels,start_ms\nTemp,5,1,0",
            450,
            "21.5",
        );
        let s = parse_stream_str(&text, "temp.csv").unwrap();
        // recount independently of the stream's own bookkeeping
        let rows = text.lines().skip(2).filter(|l| !l.is_empty()).count();
        assert_eq!(rows as f64 / 5.0, 90.0);
        assert_eq!(s.duration_s(), 90.0);
    }

    #[test]
    fn accw_two_columns_is_rejected() {
        let e = parse_stream_str(&csv("AccW,32,3,0", 4, "1.0,2.0"), "accw.csv").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("channel-count mismatch: expected 3"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
        let e = parse_stream_str(&csv("AccW,32,2,0", 4, "1.0,2.0"), "accw.csv").unwrap_err();
        assert!(e.to_string().contains("channel-count mismatch: expected 3"));
    }

    #[test]
    fn malformed_inputs_name_the_line() {
        let e = parse_stream_str("GSR,4,1\n0.1\n", "x").unwrap_err();
        assert!(e.to_string().contains("line 1: malformed header"));
        let e = parse_stream_str("GSR,4,1,0\n0.1\nabc\n", "x").unwrap_err();
        assert!(e.to_string().contains("line 3: non-numeric sample"));
        let e = parse_stream_str("GSR,8,1,0\n", "x").unwrap_err();
        assert!(e.to_string().contains("rate mismatch: expected 4"));
        let e = parse_stream_str("", "x").unwrap_err();
        assert!(e.to_string().contains("malformed header"));
        let e = parse_stream_str("GSR,4,1,0\nNaN\n", "x").unwrap_err();
        assert!(e.to_string().contains("non-finite"));
    }

    #[test]
    fn csv_round_trip_preserves_rows() {
        let s = SensorStream::new(
            SensorId::Grav,
            1234,
            vec![0.1, -2.5, 9.81, 1e-300, 3.0, 7.25],
        )
        .unwrap();
        let back = parse_stream_str(&s.to_csv(), "grav").unwrap();
        assert_eq!(back, s);
    }
}
