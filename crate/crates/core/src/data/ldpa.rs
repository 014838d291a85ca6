//! Ingestion of the localization-data CSV format (one row per sensor reading).

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sensor identifiers and the body location each one is strapped to.
pub const SENSOR_TAGS: [(&str, BodyLocation); 4] = [
    ("010-000-024-033", BodyLocation::LeftAnkle),
    ("010-000-030-096", BodyLocation::RightAnkle),
    ("020-000-033-111", BodyLocation::Chest),
    ("020-000-032-221", BodyLocation::Belt),
];

pub const ACTIVITIES: [&str; 11] = [
    "walking",
    "falling",
    "lying down",
    "lying",
    "sitting down",
    "sitting on the ground",
    "standing up from lying",
    "on all fours",
    "sitting",
    "standing up from sitting",
    "standing up from sitting on the ground",
];

pub const FALLING: &str = "falling";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BodyLocation {
    LeftAnkle,
    RightAnkle,
    Chest,
    Belt,
}

impl BodyLocation {
    pub fn from_tag(tag: &str) -> Option<Self> {
        SENSOR_TAGS
            .iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, loc)| *loc)
    }

    pub fn is_ankle(self) -> bool {
        matches!(self, BodyLocation::LeftAnkle | BodyLocation::RightAnkle)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub sequence_name: String,
    pub sensor_tag: String,
    pub timestamp: i64,
    pub date: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub activity: String,
}

impl RawRecord {
    pub fn location(&self) -> BodyLocation {
        BodyLocation::from_tag(&self.sensor_tag).expect("validated at parse time")
    }

    pub fn is_falling(&self) -> bool {
        self.activity == FALLING
    }

    /// Individual letter of the sequence name ("E02" → "E").
    pub fn individual(&self) -> &str {
        individual_of(&self.sequence_name)
    }
}

pub fn individual_of(sequence_name: &str) -> &str {
    let end = sequence_name
        .char_indices()
        .find(|(_, c)| c.is_ascii_digit())
        .map(|(i, _)| i)
        .unwrap_or(sequence_name.len());
    &sequence_name[..end]
}

/// Column of each field. Either positional indices or header names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub sequence_name: ColumnRef,
    pub sensor_tag: ColumnRef,
    pub timestamp: ColumnRef,
    pub date: ColumnRef,
    pub x: ColumnRef,
    pub y: ColumnRef,
    pub z: ColumnRef,
    pub activity: ColumnRef,
    /// When `None`, a header is assumed iff the first row's x column is not numeric.
    pub has_header: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            sequence_name: ColumnRef::Index(0),
            sensor_tag: ColumnRef::Index(1),
            timestamp: ColumnRef::Index(2),
            date: ColumnRef::Index(3),
            x: ColumnRef::Index(4),
            y: ColumnRef::Index(5),
            z: ColumnRef::Index(6),
            activity: ColumnRef::Index(7),
            has_header: None,
        }
    }
}

impl ColumnMap {
    fn refs(&self) -> [(&'static str, &ColumnRef); 8] {
        [
            ("sequence_name", &self.sequence_name),
            ("sensor_tag", &self.sensor_tag),
            ("timestamp", &self.timestamp),
            ("date", &self.date),
            ("x", &self.x),
            ("y", &self.y),
            ("z", &self.z),
            ("activity", &self.activity),
        ]
    }

    fn resolve(&self, header: Option<&csv::StringRecord>) -> Result<[usize; 8]> {
        let mut out = [0usize; 8];
        for (slot, (field, r)) in out.iter_mut().zip(self.refs()) {
            *slot = match r {
                ColumnRef::Index(i) => *i,
                ColumnRef::Name(name) => {
                    let header = header.ok_or_else(|| {
                        Error::Config(format!(
                            "column '{name}' for {field} is named but the file has no header"
                        ))
                    })?;
                    header
                        .iter()
                        .position(|h| h.trim().eq_ignore_ascii_case(name))
                        .ok_or_else(|| Error::Config(format!("missing column '{name}' for {field}")))?
                }
            };
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub records: Vec<RawRecord>,
    pub malformed_rows: usize,
    /// First few malformed rows with the reason, for diagnostics.
    pub malformed_examples: Vec<(usize, String)>,
}

pub fn parse_ldpa_csv(path: &Path, columns: &ColumnMap) -> Result<ParseOutcome> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ldpa_reader(file, columns)
}

pub fn parse_ldpa_reader(reader: impl std::io::Read, columns: &ColumnMap) -> Result<ParseOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = rdr.records();
    let first = match rows.next() {
        None => {
            return Ok(ParseOutcome {
                records: Vec::new(),
                malformed_rows: 0,
                malformed_examples: Vec::new(),
            })
        }
        Some(r) => r?,
    };
    let header_present = match columns.has_header {
        Some(h) => h,
        None => {
            let x_idx = match &columns.x {
                ColumnRef::Index(i) => *i,
                ColumnRef::Name(_) => usize::MAX,
            };
            first.get(x_idx).map_or(true, |v| v.parse::<f64>().is_err())
        }
    };
    let idx = columns.resolve(header_present.then_some(&first))?;
    let max_idx = *idx.iter().max().unwrap();

    let mut out = ParseOutcome {
        records: Vec::new(),
        malformed_rows: 0,
        malformed_examples: Vec::new(),
    };
    let handle = |line: usize, row: csv::StringRecord, out: &mut ParseOutcome| {
        match parse_row(&row, &idx, max_idx) {
            Ok(rec) => out.records.push(rec),
            Err(reason) => {
                out.malformed_rows += 1;
                if out.malformed_examples.len() < 10 {
                    out.malformed_examples.push((line, reason));
                }
            }
        }
    };
    if !header_present {
        handle(1, first, &mut out);
    }
    for (i, row) in rows.enumerate() {
        match row {
            Ok(row) => handle(i + 2, row, &mut out),
            Err(e) => {
                out.malformed_rows += 1;
                if out.malformed_examples.len() < 10 {
                    out.malformed_examples.push((i + 2, e.to_string()));
                }
            }
        }
    }
    if out.malformed_rows > 0 {
        log::warn!("skipped {} malformed rows", out.malformed_rows);
    }
    Ok(out)
}

fn parse_row(row: &csv::StringRecord, idx: &[usize; 8], max_idx: usize) -> Result<RawRecord, String> {
    if row.len() <= max_idx {
        return Err(format!("expected at least {} fields, got {}", max_idx + 1, row.len()));
    }
    let field = |k: usize| row.get(idx[k]).unwrap_or("");
    let num = |k: usize, name: &str| -> Result<f64, String> {
        let v: f64 = field(k)
            .parse()
            .map_err(|_| format!("{name} '{}' is not numeric", field(k)))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{name} is not finite"))
        }
    };
    let sensor_tag = field(1).to_string();
    if BodyLocation::from_tag(&sensor_tag).is_none() {
        return Err(format!("unknown sensor tag '{sensor_tag}'"));
    }
    let activity = field(7).to_ascii_lowercase().replace('_', " ");
    if !ACTIVITIES.contains(&activity.as_str()) {
        return Err(format!("unknown activity '{}'", field(7)));
    }
    let sequence_name = field(0).to_string();
    if sequence_name.is_empty() || individual_of(&sequence_name).is_empty() {
        return Err(format!("bad sequence name '{sequence_name}'"));
    }
    Ok(RawRecord {
        sequence_name,
        sensor_tag,
        timestamp: field(2)
            .parse()
            .map_err(|_| format!("timestamp '{}' is not an integer", field(2)))?,
        date: field(3).to_string(),
        x: num(4, "x")?,
        y: num(5, "y")?,
        z: num(6, "z")?,
        activity,
    })
}

/// Groups records by sequence name, keeping file order within each group.
pub fn group_by_sequence(records: Vec<RawRecord>) -> Vec<(String, Vec<RawRecord>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<RawRecord>> = HashMap::new();
    for r in records {
        if !groups.contains_key(&r.sequence_name) {
            order.push(r.sequence_name.clone());
        }
        groups.entry(r.sequence_name.clone()).or_default().push(r);
    }
    order.sort();
    order
        .into_iter()
        .map(|name| {
            let recs = groups.remove(&name).unwrap_or_default();
            (name, recs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROW: &str = "A01,010-000-024-033,633790226051280329,27.05.2009 14:03:25:127,4.0629,1.8924,0.5074,walking\n";

    #[test]
    fn parses_single_row() {
        let out = parse_ldpa_reader(ROW.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(out.malformed_rows, 0);
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.sequence_name, "A01");
        assert_eq!(r.individual(), "A");
        assert_eq!(r.timestamp, 633790226051280329);
        assert_eq!(r.date, "27.05.2009 14:03:25:127");
        assert_eq!((r.x, r.y, r.z), (4.0629, 1.8924, 0.5074));
        assert_eq!(r.activity, "walking");
        assert_eq!(r.location(), BodyLocation::LeftAnkle);
    }

    #[test]
    fn sensor_table() {
        assert_eq!(BodyLocation::from_tag("010-000-024-033"), Some(BodyLocation::LeftAnkle));
        assert_eq!(BodyLocation::from_tag("010-000-030-096"), Some(BodyLocation::RightAnkle));
        assert_eq!(BodyLocation::from_tag("020-000-033-111"), Some(BodyLocation::Chest));
        assert_eq!(BodyLocation::from_tag("020-000-032-221"), Some(BodyLocation::Belt));
        assert_eq!(BodyLocation::from_tag("999"), None);
    }

    #[test]
    fn skips_and_counts_malformed_rows() {
        let text = format!(
            "{ROW}A01,010-000-024-033,1,d,abc,1.0,1.0,walking\nA01,999,1,d,1,1,1,walking\nA01,010-000-024-033,1,d,1,1,1,dancing\nshort,row\n{ROW}"
        );
        let out = parse_ldpa_reader(text.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.malformed_rows, 4);
    }

    #[test]
    fn header_with_named_columns() {
        let text = format!("seq,tag,ts,date,x,y,z,activity\n{ROW}");
        let mut cols = ColumnMap::default();
        cols.x = ColumnRef::Name("X".into());
        let out = parse_ldpa_reader(text.as_bytes(), &cols).unwrap();
        assert_eq!(out.records.len(), 1);

        cols.x = ColumnRef::Name("missing".into());
        assert!(matches!(
            parse_ldpa_reader(text.as_bytes(), &cols),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = parse_ldpa_csv(Path::new("/nonexistent/file.csv"), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
