//! JSON-lines dataset files and long-format CSV import.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "covfield-dataset";
pub const DATASET_VERSION: u32 = 1;

/// First line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    /// Master seed of simulated data; `null` for imported data.
    pub seed: Option<u64>,
    /// Hex SHA-256 of the generating truth; `null` for imported data.
    pub truth_digest: Option<String>,
    /// Per-coordinate `[lo, hi]` mapped onto `[0, 1]` at import, if any.
    pub rescale: Option<Vec<[f64; 2]>>,
}

impl DatasetHeader {
    pub fn new(data: &FunctionalDataset) -> Self {
        Self {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            d: data.d(),
            n: data.n(),
            m: data.m(),
            seed: None,
            truth_digest: None,
            rescale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubjectRecord {
    i: usize,
    t: Vec<Vec<f64>>,
    y: Vec<f64>,
}

/// Header line plus one `{"i", "t", "y"}` line per subject, `\n`-terminated.
pub fn write_dataset(header: &DatasetHeader, data: &FunctionalDataset) -> String {
    let mut out = serde_json::to_string(header).expect("header serializes");
    out.push('\n');
    for i in 0..data.n() {
        let rec = SubjectRecord {
            i,
            t: data.subject_locations(i).chunks(data.d()).map(|c| c.to_vec()).collect(),
            y: data.subject_values(i).to_vec(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_dataset(text: &str) -> Result<(DatasetHeader, FunctionalDataset)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::Format("empty dataset file".into()))?;
    let header: DatasetHeader =
        serde_json::from_str(first).map_err(|e| Error::Format(format!("line 1: bad header: {e}")))?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "line 1: expected format {DATASET_FORMAT:?} version {DATASET_VERSION}"
        )));
    }
    let (d, n, m) = (header.d, header.n, header.m);
    let mut locations = Vec::with_capacity(n * m * d);
    let mut values = Vec::with_capacity(n * m);
    let mut count = 0;
    for (lineno, line) in lines {
        let rec: SubjectRecord = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("line {}: bad record: {e}", lineno + 1)))?;
        if rec.i != count {
            return Err(Error::Format(format!("line {}: expected subject {count}, found {}", lineno + 1, rec.i)));
        }
        if rec.t.len() != m || rec.y.len() != m || rec.t.iter().any(|p| p.len() != d) {
            return Err(Error::Format(format!("line {}: subject {} does not have {m} points of dimension {d}", lineno + 1, rec.i)));
        }
        locations.extend(rec.t.into_iter().flatten());
        values.extend(rec.y);
        count += 1;
    }
    if count != n {
        return Err(Error::Format(format!("header says n = {n}, found {count} records")));
    }
    let data = FunctionalDataset::new(d, n, m, locations, values).map_err(|e| Error::Format(e.to_string()))?;
    Ok((header, data))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImportOptions {
    pub subject_column: String,
    pub location_columns: Vec<String>,
    pub value_column: String,
    /// Map each coordinate's observed `[min, max]` affinely onto `[0, 1]`.
    pub rescale: bool,
    /// Keep the first `min_i m_i` rows of every subject instead of failing.
    pub subsample_to_min: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportOutcome {
    pub header: DatasetHeader,
    pub data: FunctionalDataset,
    /// Subjects truncated by `subsample_to_min`.
    pub truncated: Vec<String>,
}

/// Long-format CSV (one row per measurement) to a dataset. Subjects are
/// ordered by first appearance; rows keep file order within a subject.
pub fn import_long_csv(text: &str, opts: &ImportOptions) -> Result<ImportOutcome> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Format(format!("column {name:?} not found")))
    };
    let sc = col(&opts.subject_column)?;
    let tc: Vec<usize> = opts.location_columns.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let yc = col(&opts.value_column)?;
    if tc.is_empty() {
        return Err(Error::Format("at least one location column is required".into()));
    }
    let d = tc.len();

    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(Vec<f64>, f64)>> = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let line = k + 2;
        let field = |c: usize| -> Result<f64> {
            let raw = rec.get(c).ok_or_else(|| Error::Format(format!("line {line}: missing column")))?;
            let v: f64 = raw.trim().parse().map_err(|_| Error::Format(format!("line {line}: bad number {raw:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Format(format!("line {line}: non-finite value")))
            }
        };
        let subject = rec.get(sc).ok_or_else(|| Error::Format(format!("line {line}: missing subject")))?.trim().to_string();
        let t = tc.iter().map(|&c| field(c)).collect::<Result<Vec<_>>>()?;
        let y = field(yc)?;
        if !rows.contains_key(&subject) {
            order.push(subject.clone());
        }
        rows.entry(subject).or_default().push((t, y));
    }
    if order.is_empty() {
        return Err(Error::Format("no data rows".into()));
    }
    let counts: Vec<usize> = order.iter().map(|s| rows[s].len()).collect();
    let m_max = *counts.iter().max().expect("nonempty");
    let m_min = *counts.iter().min().expect("nonempty");
    let mut truncated = Vec::new();
    let m = if m_min == m_max {
        m_max
    } else if opts.subsample_to_min {
        truncated = order.iter().zip(&counts).filter(|(_, &c)| c > m_min).map(|(s, _)| s.clone()).collect();
        m_min
    } else {
        let modal = modal_count(&counts);
        let offending: Vec<String> = order
            .iter()
            .zip(&counts)
            .filter(|(_, &c)| c != modal)
            .map(|(s, c)| format!("{s} (m = {c})"))
            .collect();
        return Err(Error::Format(format!(
            "unequal measurement counts; expected m = {modal} for every subject; offending: {}",
            offending.join(", ")
        )));
    };
    if m < 2 {
        return Err(Error::TooFewMeasurements);
    }

    let mut locations = Vec::with_capacity(order.len() * m * d);
    let mut values = Vec::with_capacity(order.len() * m);
    for s in &order {
        for (t, y) in rows[s].iter().take(m) {
            locations.extend_from_slice(t);
            values.push(*y);
        }
    }
    let rescale = if opts.rescale {
        let mut ranges = Vec::with_capacity(d);
        for r in 0..d {
            let (lo, hi) = locations
                .iter()
                .skip(r)
                .step_by(d)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if !(hi > lo) {
                return Err(Error::Format(format!("coordinate {r} has zero range; cannot rescale")));
            }
            ranges.push([lo, hi]);
        }
        for (k, v) in locations.iter_mut().enumerate() {
            let [lo, hi] = ranges[k % d];
            *v = if *v == hi { 1.0 } else { (*v - lo) / (hi - lo) };
        }
        Some(ranges)
    } else {
        if let Some(v) = locations.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("location {v} outside [0, 1]; pass --rescale")));
        }
        None
    };
    let data = FunctionalDataset::new(d, order.len(), m, locations, values)?;
    let mut header = DatasetHeader::new(&data);
    header.rescale = rescale;
    Ok(ImportOutcome { header, data, truncated })
}

fn modal_count(counts: &[usize]) -> usize {
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in counts {
        *freq.entry(c).or_default() += 1;
    }
    // Most frequent; ties go to the larger count.
    freq.into_iter().max_by_key(|&(c, f)| (f, c)).map(|(c, _)| c).expect("nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let data = FunctionalDataset::new(1, 2, 3, vec![0.1, 0.5, 0.9, 0.2, 1.0 / 3.0, 0.0], vec![1.0, -2.5, 3e-9, 0.0, 7.25, -1.0]).unwrap();
        let mut header = DatasetHeader::new(&data);
        header.seed = Some(42);
        let text = write_dataset(&header, &data);
        assert_eq!(text.lines().count(), 3);
        let (h, back) = read_dataset(&text).unwrap();
        assert_eq!(back, data);
        assert_eq!(write_dataset(&h, &back), text);
    }

    fn opts() -> ImportOptions {
        ImportOptions {
            subject_column: "id".into(),
            location_columns: vec!["t".into()],
            value_column: "y".into(),
            ..Default::default()
        }
    }

    #[test]
    fn import_well_formed() {
        let csv = "id,t,y\na,0.1,1\na,0.5,2\nb,0.2,3\nb,0.9,4\n";
        let out = import_long_csv(csv, &opts()).unwrap();
        assert_eq!(out.data.n(), 2);
        assert_eq!(out.data.value(1, 1), 4.0);
    }

    #[test]
    fn ragged_subject_is_named() {
        let csv = "id,t,y\na,0.1,1\na,0.5,2\na,0.6,2\nb,0.2,3\nb,0.9,4\nb,0.3,1\nc,0.4,1\nc,0.5,1\n";
        let err = import_long_csv(csv, &opts()).unwrap_err().to_string();
        assert!(err.contains("c (m = 2)"), "{err}");
        let out = import_long_csv(csv, &ImportOptions { subsample_to_min: true, ..opts() }).unwrap();
        assert_eq!(out.data.m(), 2);
        assert_eq!(out.truncated, vec!["a", "b"]);
    }

    #[test]
    fn rescale_hits_endpoints() {
        let csv = "id,t,y\na,10,1\na,12,2\nb,11,3\nb,14,4\n";
        assert!(import_long_csv(csv, &opts()).is_err());
        let out = import_long_csv(csv, &ImportOptions { rescale: true, ..opts() }).unwrap();
        assert_eq!(out.data.location(0, 0), &[0.0]);
        assert_eq!(out.data.location(1, 1), &[1.0]);
        assert_eq!(out.header.rescale, Some(vec![[10.0, 14.0]]));
    }
}
