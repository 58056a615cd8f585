//! Observation records, dataset container, splitting, and CSV ingestion.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One observation `(x, s, l, a, r)`.
///
/// `s` is the binary sensitive attribute, `l` the legitimate-group label,
/// `a` the treatment in `{-1, +1}`, and `r` the observed outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub s: u8,
    pub l: i64,
    pub a: i8,
    pub r: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, s: u8, l: i64, a: i8, r: f64) -> Self {
        Sample { x, s, l, a, r }
    }
}

/// Immutable collection of samples sharing one covariate dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    p: usize,
}

/// Fractions and seed for a train/validation/test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, seed: u64) -> Self {
        SplitSpec { train_frac, val_frac, seed }
    }
}

/// Column-name mapping for CSV files.
///
/// `a_zero_one` declares that the treatment column is encoded as `{0, 1}`
/// and must be recoded to `{-1, +1}`; it is never inferred from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub x_cols: Vec<String>,
    pub s_col: String,
    pub l_col: String,
    pub a_col: String,
    pub r_col: String,
    #[serde(default)]
    pub a_zero_one: bool,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema error: column {column:?} not found in header")]
    Schema { column: String },
    #[error("parse error at data row {row}, column {column:?}: {value:?} is not numeric")]
    Parse { row: usize, column: String, value: String },
    #[error("validation error at data row {row}: {reason}")]
    Validation { row: usize, reason: String },
    #[error("io error on {path:?}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path:?}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("invalid split spec: {reason}")]
    SplitSpec { reason: String },
    #[error("sizing error: partition {part:?} is empty for n = {n} with fractions ({train_frac}, {val_frac})")]
    Sizing { part: &'static str, n: usize, train_frac: f64, val_frac: f64 },
    #[error("dimension mismatch at sample {index}: expected {expected} covariates, got {got}")]
    Dimension { index: usize, expected: usize, got: usize },
    #[error("invalid field at sample {index}: {reason}")]
    Field { index: usize, reason: String },
}

impl Dataset {
    /// Builds a dataset, validating that every sample is finite, shares the
    /// same covariate dimension, and uses the `{0,1}` / `{-1,+1}` codings.
    pub fn new(samples: Vec<Sample>) -> Result<Self, DatasetError> {
        let p = samples.first().map_or(0, |s| s.x.len());
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != p {
                return Err(DatasetError::Dimension { index: i, expected: p, got: s.x.len() });
            }
            if s.x.iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::Field { index: i, reason: "non-finite covariate".into() });
            }
            if !s.r.is_finite() {
                return Err(DatasetError::Field { index: i, reason: "non-finite outcome".into() });
            }
            if s.s > 1 {
                return Err(DatasetError::Field {
                    index: i,
                    reason: format!("sensitive attribute must be 0 or 1, got {}", s.s),
                });
            }
            if s.a != 1 && s.a != -1 {
                return Err(DatasetError::Field {
                    index: i,
                    reason: format!("treatment must be -1 or +1, got {}", s.a),
                });
            }
        }
        Ok(Dataset { samples, p })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// Counts of samples per treatment arm `(n_plus, n_minus)`.
    pub fn arm_counts(&self) -> (usize, usize) {
        let n1 = self.samples.iter().filter(|s| s.a == 1).count();
        (n1, self.samples.len() - n1)
    }
}

/// Per-group totals: `n` observations, of which `s1` have `S = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCount {
    pub n: usize,
    pub s1: usize,
    pub s0: usize,
}

impl fmt::Display for GroupCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(n={}, s1={}, s0={})", self.n, self.s1, self.s0)
    }
}

/// Exact counts per legitimate group: `l -> (N_l, #S=1, #S=0)`.
pub fn group_counts(ds: &Dataset) -> BTreeMap<i64, GroupCount> {
    let mut counts: BTreeMap<i64, GroupCount> = BTreeMap::new();
    for s in ds.iter() {
        let e = counts.entry(s.l).or_insert(GroupCount { n: 0, s1: 0, s0: 0 });
        e.n += 1;
        if s.s == 1 {
            e.s1 += 1;
        } else {
            e.s0 += 1;
        }
    }
    counts
}

/// Splits into `(train, val, test)` by a single seeded shuffle followed by
/// contiguous slicing. Sizes are `⌊train_frac·n⌋`, `⌊val_frac·n⌋`, and the
/// remainder; identical seeds give identical partitions.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset), DatasetError> {
    if !(spec.train_frac > 0.0 && spec.train_frac < 1.0) {
        return Err(DatasetError::SplitSpec { reason: format!("train_frac must be in (0,1), got {}", spec.train_frac) });
    }
    if !(spec.val_frac > 0.0 && spec.val_frac < 1.0) {
        return Err(DatasetError::SplitSpec { reason: format!("val_frac must be in (0,1), got {}", spec.val_frac) });
    }
    if spec.train_frac + spec.val_frac > 1.0 + 1e-12 {
        return Err(DatasetError::SplitSpec {
            reason: format!("train_frac + val_frac = {} exceeds 1", spec.train_frac + spec.val_frac),
        });
    }
    let n = ds.len();
    if n == 0 {
        return Err(DatasetError::Sizing { part: "train", n, train_frac: spec.train_frac, val_frac: spec.val_frac });
    }

    let n_train = (spec.train_frac * n as f64).floor() as usize;
    let n_val = (spec.val_frac * n as f64).floor() as usize;
    let n_test = n - n_train - n_val;
    let test_frac = 1.0 - spec.train_frac - spec.val_frac;

    if n_train == 0 {
        return Err(DatasetError::Sizing { part: "train", n, train_frac: spec.train_frac, val_frac: spec.val_frac });
    }
    if n_val == 0 {
        return Err(DatasetError::Sizing { part: "val", n, train_frac: spec.train_frac, val_frac: spec.val_frac });
    }
    if test_frac > 1e-12 && n_test == 0 {
        return Err(DatasetError::Sizing { part: "test", n, train_frac: spec.train_frac, val_frac: spec.val_frac });
    }

    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    idx.shuffle(&mut rng);

    let take = |range: std::ops::Range<usize>| -> Dataset {
        let samples: Vec<Sample> = idx[range].iter().map(|&i| ds.samples[i].clone()).collect();
        Dataset { samples, p: ds.p }
    };
    Ok((
        take(0..n_train),
        take(n_train..n_train + n_val),
        take(n_train + n_val..n),
    ))
}

/// Loads a header-first CSV per the schema. `{0,1}` treatments are recoded
/// to `{-1,+1}` only when the schema declares `a_zero_one`.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let file = File::open(path).map_err(|source| DatasetError::Io { path: pstr.clone(), source })?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));

    let headers = reader
        .headers()
        .map_err(|source| DatasetError::Csv { path: pstr.clone(), source })?
        .clone();
    let col = |name: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::Schema { column: name.to_string() })
    };
    let x_idx: Vec<usize> = schema.x_cols.iter().map(|c| col(c)).collect::<Result<_, _>>()?;
    let s_idx = col(&schema.s_col)?;
    let l_idx = col(&schema.l_col)?;
    let a_idx = col(&schema.a_col)?;
    let r_idx = col(&schema.r_col)?;

    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|source| DatasetError::Csv { path: pstr.clone(), source })?;
        let cell = |i: usize, name: &str| -> Result<f64, DatasetError> {
            let raw = record.get(i).unwrap_or("");
            let v: f64 = raw.trim().parse().map_err(|_| DatasetError::Parse {
                row,
                column: name.to_string(),
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::Validation { row, reason: format!("column {name:?} is {v}") });
            }
            Ok(v)
        };

        let x: Vec<f64> = x_idx
            .iter()
            .zip(&schema.x_cols)
            .map(|(&i, name)| cell(i, name))
            .collect::<Result<_, _>>()?;
        let s_raw = cell(s_idx, &schema.s_col)?;
        let s = match s_raw {
            v if v == 0.0 => 0u8,
            v if v == 1.0 => 1u8,
            v => return Err(DatasetError::Validation { row, reason: format!("s must be 0 or 1, got {v}") }),
        };
        let l_raw = cell(l_idx, &schema.l_col)?;
        if l_raw.fract() != 0.0 {
            return Err(DatasetError::Validation { row, reason: format!("l must be an integer, got {l_raw}") });
        }
        let a_raw = cell(a_idx, &schema.a_col)?;
        let a = if schema.a_zero_one {
            match a_raw {
                v if v == 0.0 => -1i8,
                v if v == 1.0 => 1i8,
                v => {
                    return Err(DatasetError::Validation {
                        row,
                        reason: format!("a must be 0 or 1 under the declared encoding, got {v}"),
                    })
                }
            }
        } else {
            match a_raw {
                v if v == -1.0 => -1i8,
                v if v == 1.0 => 1i8,
                v => return Err(DatasetError::Validation { row, reason: format!("a must be -1 or +1, got {v}") }),
            }
        };
        let r = cell(r_idx, &schema.r_col)?;
        samples.push(Sample { x, s, l: l_raw as i64, a, r });
    }

    Dataset::new(samples)
}

/// Writes a dataset back to CSV under the schema's column names. Treatments
/// are written in the schema's declared encoding, floats in the shortest
/// form that round-trips exactly.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>, schema: &CsvSchema) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    if schema.x_cols.len() != ds.p() {
        return Err(DatasetError::Schema {
            column: format!("schema has {} x columns, dataset has p = {}", schema.x_cols.len(), ds.p()),
        });
    }
    let file = File::create(path).map_err(|source| DatasetError::Io { path: pstr.clone(), source })?;
    let mut out = BufWriter::new(file);

    let mut header: Vec<&str> = schema.x_cols.iter().map(|s| s.as_str()).collect();
    header.push(&schema.s_col);
    header.push(&schema.l_col);
    header.push(&schema.a_col);
    header.push(&schema.r_col);
    writeln!(out, "{}", header.join(",")).map_err(|source| DatasetError::Io { path: pstr.clone(), source })?;

    for s in ds.iter() {
        let mut fields: Vec<String> = s.x.iter().map(|v| format!("{v}")).collect();
        fields.push(s.s.to_string());
        fields.push(s.l.to_string());
        let a_out = if schema.a_zero_one { i8::from(s.a == 1) } else { s.a };
        fields.push(a_out.to_string());
        fields.push(format!("{}", s.r));
        writeln!(out, "{}", fields.join(",")).map_err(|source| DatasetError::Io { path: pstr.clone(), source })?;
    }
    out.flush().map_err(|source| DatasetError::Io { path: pstr, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| Sample::new(vec![i as f64, -(i as f64)], (i % 2) as u8, (i % 3) as i64, if i % 2 == 0 { 1 } else { -1 }, i as f64 * 0.5))
            .collect();
        Dataset::new(samples).unwrap()
    }

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn schema2() -> CsvSchema {
        CsvSchema {
            x_cols: vec!["x1".into(), "x2".into()],
            s_col: "s".into(),
            l_col: "l".into(),
            a_col: "a".into(),
            r_col: "r".into(),
            a_zero_one: false,
        }
    }

    #[test]
    fn load_four_rows() {
        let f = write_csv("x1,x2,s,l,a,r\n1.0,2.0,1,0,1,0.5\n-1.0,0.25,0,0,-1,1.5\n0.5,0.5,1,1,1,-2.0\n3.0,4.0,0,1,-1,0.0\n");
        let ds = load_csv(f.path(), &schema2()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.p(), 2);
        assert_eq!(ds.samples()[0].x, vec![1.0, 2.0]);
        assert_eq!(ds.samples()[3].a, -1);
    }

    #[test]
    fn load_recodes_declared_zero_one_treatment() {
        let f = write_csv("x1,x2,s,l,a,r\n1.0,2.0,1,0,1,0.5\n-1.0,0.25,0,0,0,1.5\n");
        let mut schema = schema2();
        schema.a_zero_one = true;
        let ds = load_csv(f.path(), &schema).unwrap();
        assert_eq!(ds.samples()[0].a, 1);
        assert_eq!(ds.samples()[1].a, -1);
    }

    #[test]
    fn load_rejects_undeclared_zero_one_treatment() {
        let f = write_csv("x1,x2,s,l,a,r\n1.0,2.0,1,0,0,0.5\n");
        let err = load_csv(f.path(), &schema2()).unwrap_err();
        assert!(matches!(err, DatasetError::Validation { row: 0, .. }), "{err}");
    }

    #[test]
    fn missing_column_names_it() {
        let f = write_csv("x1,x2,l,a,r\n1.0,2.0,0,1,0.5\n");
        let err = load_csv(f.path(), &schema2()).unwrap_err();
        match err {
            DatasetError::Schema { column } => assert_eq!(column, "s"),
            other => panic!("expected schema error, got {other}"),
        }
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let f = write_csv("x1,x2,s,l,a,r\n1.0,2.0,1,0,1,0.5\n1.0,oops,0,0,-1,0.1\n");
        let err = load_csv(f.path(), &schema2()).unwrap_err();
        match err {
            DatasetError::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "x2");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn nan_rejected() {
        let f = write_csv("x1,x2,s,l,a,r\nNaN,2.0,1,0,1,0.5\n");
        assert!(matches!(load_csv(f.path(), &schema2()), Err(DatasetError::Validation { .. })));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = toy(10);
        let spec = SplitSpec::new(0.8, 0.2, 42);
        let (tr, va, te) = split(&ds, &spec).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (8, 2, 0));

        let (tr2, va2, te2) = split(&ds, &spec).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);
        assert_eq!(te, te2);
    }

    #[test]
    fn split_72_8_20() {
        let ds = toy(1000);
        let (tr, va, te) = split(&ds, &SplitSpec::new(0.72, 0.08, 7)).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (720, 80, 200));
    }

    #[test]
    fn split_too_small_errors() {
        let ds = toy(3);
        let err = split(&ds, &SplitSpec::new(0.5, 0.1, 1)).unwrap_err();
        assert!(matches!(err, DatasetError::Sizing { part: "val", .. }), "{err}");
    }

    #[test]
    fn split_is_partition() {
        let ds = toy(257);
        let (tr, va, te) = split(&ds, &SplitSpec::new(0.6, 0.2, 9)).unwrap();
        assert_eq!(tr.len() + va.len() + te.len(), ds.len());
        // Multiset equality via sorted r values (all distinct in toy()).
        let mut got: Vec<f64> = tr.iter().chain(va.iter()).chain(te.iter()).map(|s| s.r).collect();
        let mut want: Vec<f64> = ds.iter().map(|s| s.r).collect();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        assert_eq!(got, want);
    }

    #[test]
    fn group_counts_examples() {
        let samples = vec![
            Sample::new(vec![0.0], 1, 0, 1, 0.0),
            Sample::new(vec![0.0], 0, 0, -1, 0.0),
            Sample::new(vec![0.0], 1, 1, 1, 0.0),
        ];
        let ds = Dataset::new(samples).unwrap();
        let counts = group_counts(&ds);
        assert_eq!(counts[&0], GroupCount { n: 2, s1: 1, s0: 1 });
        assert_eq!(counts[&1], GroupCount { n: 1, s1: 1, s0: 0 });

        let empty = Dataset::new(vec![]).unwrap();
        assert!(group_counts(&empty).is_empty());

        let one_group = Dataset::new(vec![Sample::new(vec![0.0], 0, 5, 1, 0.0); 4]).unwrap();
        let counts = group_counts(&one_group);
        assert_eq!(counts.len(), 1);
        assert_eq!(counts[&5].n, 4);
    }

    #[test]
    fn group_counts_sum_to_n() {
        let ds = toy(100);
        let counts = group_counts(&ds);
        let total: usize = counts.values().map(|c| c.n).sum();
        assert_eq!(total, ds.len());
        for c in counts.values() {
            assert_eq!(c.n, c.s1 + c.s0);
        }
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let samples = vec![
            Sample::new(vec![0.1 + 0.2, 1.0 / 3.0], 1, 0, 1, std::f64::consts::PI),
            Sample::new(vec![-1e-17, 2.5e16], 0, 2, -1, -0.0),
            Sample::new(vec![f64::MIN_POSITIVE, 1.0], 0, 1, 1, f64::MAX / 2.0),
        ];
        let ds = Dataset::new(samples).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.csv");
        save_csv(&ds, &path, &schema2()).unwrap();
        let back = load_csv(&path, &schema2()).unwrap();
        assert_eq!(ds, back);
    }
}
