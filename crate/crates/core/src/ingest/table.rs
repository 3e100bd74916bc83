//! Instance table: provenance lines starting with `#`, a column header, then
//! one instance per row (`participant_id,window_index,label,f0,f1,...`).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::window::DataInstance;

const MAGIC: &str = "# mhdeep-instances v1";

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceTable<T> {
    /// `(key, value)` provenance pairs, in file order.
    pub provenance: Vec<(String, String)>,
    pub instances: Vec<DataInstance<T>>,
}

impl<T: Scalar> InstanceTable<T> {
    pub fn to_text(&self) -> String {
        let dim = self.instances.first().map_or(0, |i| i.features.len());
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for (k, v) in &self.provenance {
            let _ = writeln!(out, "# {k}: {}", v.replace('\n', " "));
        }
        out.push_str("participant_id,window_index,label");
        for j in 0..dim {
            let _ = write!(out, ",f{j}");
        }
        out.push('\n');
        for inst in &self.instances {
            let _ = write!(
                out,
                "{},{},{}",
                inst.participant_id, inst.window_index, inst.label
            );
            for v in &inst.features {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut provenance = Vec::new();
        let mut instances = Vec::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() || line.trim() == MAGIC {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once(':') {
                    provenance.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if dim.is_none() {
                if fields.len() < 3 || fields[0] != "participant_id" {
                    return Err(err(lineno, "missing column header".into()));
                }
                dim = Some(fields.len() - 3);
                continue;
            }
            let d = dim.unwrap_or(0);
            if fields.len() != d + 3 {
                return Err(err(
                    lineno,
                    format!("expected {} fields, found {}", d + 3, fields.len()),
                ));
            }
            let window_index = fields[1]
                .parse()
                .map_err(|_| err(lineno, "bad window_index".into()))?;
            let label: u8 = fields[2]
                .parse()
                .map_err(|_| err(lineno, "bad label".into()))?;
            if label > 1 {
                return Err(err(lineno, format!("label must be 0 or 1, found {label}")));
            }
            let features = fields[3..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(T::of)
                        .ok_or_else(|| err(lineno, format!("non-numeric feature `{f}`")))
                })
                .collect::<Result<Vec<T>>>()?;
            instances.push(DataInstance {
                participant_id: fields[0].to_string(),
                window_index,
                features,
                label,
            });
        }
        Ok(InstanceTable {
            provenance,
            instances,
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.provenance
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn write_instances<T: Scalar>(path: &Path, table: &InstanceTable<T>) -> Result<()> {
    std::fs::write(path, table.to_text()).map_err(|e| Error::io(path, e))
}

pub fn read_instances<T: Scalar>(path: &Path) -> Result<InstanceTable<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    InstanceTable::parse(&text, &path.display().to_string())
}
