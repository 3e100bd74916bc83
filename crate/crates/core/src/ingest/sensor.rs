use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    Watch,
    Phone,
}

/// The eight data categories, declared in canonical order. The declaration
/// order fixes both the flattening order and the subset bit positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SensorId {
    Gsr,
    St,
    Ibi,
    AccW,
    Temp,
    Grav,
    AccP,
    Vel,
}

impl SensorId {
    pub const ALL: [SensorId; 8] = [
        SensorId::Gsr,
        SensorId::St,
        SensorId::Ibi,
        SensorId::AccW,
        SensorId::Temp,
        SensorId::Grav,
        SensorId::AccP,
        SensorId::Vel,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SensorId::Gsr => "GSR",
            SensorId::St => "ST",
            SensorId::Ibi => "IBI",
            SensorId::AccW => "AccW",
            SensorId::Temp => "Temp",
            SensorId::Grav => "Grav",
            SensorId::AccP => "AccP",
            SensorId::Vel => "Vel",
        }
    }

    /// Nominal sampling rate in Hz.
    pub fn rate_hz(self) -> u32 {
        match self {
            SensorId::Gsr | SensorId::St => 4,
            SensorId::Ibi => 1,
            SensorId::AccW => 32,
            SensorId::Temp | SensorId::Grav | SensorId::AccP | SensorId::Vel => 5,
        }
    }

    pub fn channels(self) -> usize {
        match self {
            SensorId::AccW | SensorId::Grav | SensorId::AccP | SensorId::Vel => 3,
            _ => 1,
        }
    }

    pub fn source(self) -> Source {
        match self {
            SensorId::Gsr | SensorId::St | SensorId::Ibi | SensorId::AccW => Source::Watch,
            _ => Source::Phone,
        }
    }

    /// Samples per window, across all channels.
    pub fn window_dims(self, window_s: u32) -> usize {
        (self.rate_hz() * window_s) as usize * self.channels()
    }

    /// Sample period in microseconds. Exact for every rate in the table.
    pub fn period_us(self) -> i64 {
        1_000_000 / self.rate_hz() as i64
    }
}

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SensorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        SensorId::ALL
            .into_iter()
            .find(|id| {
                id.name().eq_ignore_ascii_case(t)
                    || (t.eq_ignore_ascii_case("Acc-W") && *id == SensorId::AccW)
                    || (t.eq_ignore_ascii_case("Acc-P") && *id == SensorId::AccP)
            })
            .ok_or_else(|| Error::InvalidInput(format!("unknown sensor id `{t}`")))
    }
}

/// A non-empty subset of the eight categories, stored as a bitmask where bit
/// `i` is `SensorId::ALL[i]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CategorySet(u8);

impl CategorySet {
    pub const ALL: CategorySet = CategorySet(0xff);
    pub const WATCH: CategorySet = CategorySet(0x0f);
    pub const PHONE: CategorySet = CategorySet(0xf0);

    pub fn from_bits(bits: u8) -> Result<Self> {
        if bits == 0 {
            return Err(Error::InvalidInput("category set must be non-empty".into()));
        }
        Ok(CategorySet(bits))
    }

    pub fn from_sensors(sensors: impl IntoIterator<Item = SensorId>) -> Result<Self> {
        Self::from_bits(sensors.into_iter().fold(0u8, |b, s| b | (1 << s.index())))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, s: SensorId) -> bool {
        self.0 & (1 << s.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Members in canonical order.
    pub fn iter(self) -> impl Iterator<Item = SensorId> {
        SensorId::ALL.into_iter().filter(move |s| self.contains(*s))
    }

    pub fn dims(self, window_s: u32) -> usize {
        self.iter().map(|s| s.window_dims(window_s)).sum()
    }
}

impl fmt::Display for CategorySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(SensorId::name).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for CategorySet {
    type Err = Error;

    /// Accepts a bitmask (`31`, `0x1f`, `0b11111`), `all`, `watch`, `phone`,
    /// or sensor names separated by `,` or `+`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let lower = t.to_ascii_lowercase();
        match lower.as_str() {
            "all" => return Ok(Self::ALL),
            "watch" => return Ok(Self::WATCH),
            "phone" => return Ok(Self::PHONE),
            _ => {}
        }
        let numeric = if let Some(h) = lower.strip_prefix("0x") {
            Some(u8::from_str_radix(h, 16))
        } else if let Some(b) = lower.strip_prefix("0b") {
            Some(u8::from_str_radix(b, 2))
        } else if lower.chars().all(|c| c.is_ascii_digit()) && !lower.is_empty() {
            Some(lower.parse::<u8>())
        } else {
            None
        };
        if let Some(n) = numeric {
            let bits =
                n.map_err(|e| Error::InvalidInput(format!("bad category bitmask `{t}`: {e}")))?;
            return Self::from_bits(bits);
        }
        let sensors = t
            .split([',', '+'])
            .filter(|p| !p.trim().is_empty())
            .map(SensorId::from_str)
            .collect::<Result<Vec<_>>>()?;
        Self::from_sensors(sensors)
    }
}

impl TryFrom<String> for CategorySet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CategorySet> for String {
    fn from(c: CategorySet) -> String {
        c.to_string()
    }
}

/// Feature length of one window over the given categories (duplicates count once).
pub fn category_dims(categories: impl IntoIterator<Item = SensorId>) -> Result<usize> {
    Ok(CategorySet::from_sensors(categories)?.dims(super::WINDOW_S))
}
