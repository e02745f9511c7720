//! Descriptor dataset files, pair lists, key=value configs and CSV reports.
//!
//! Dataset layout (`FDS1`), all integers little-endian:
//!
//! ```text
//! magic  "FDS1"            4 bytes
//! version u32              currently 1
//! count   u64              number of records
//! dim     u32              floats per record
//! count × { identity u64, attribute u8 (0 = female, 1 = male), dim × f32 }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, FormatError, Result};
use crate::linalg::Matrix;
use crate::rng::substream;

pub const DATASET_MAGIC: [u8; 4] = *b"FDS1";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: u64 = 20;
/// Default ceiling on the payload a reader will allocate (8 GiB).
pub const DEFAULT_READ_CAP: u64 = 8 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Attribute {
    Female = 0,
    Male = 1,
}

impl Attribute {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Attribute::Female),
            1 => Some(Attribute::Male),
            _ => None,
        }
    }

    /// 1.0 for male, 0.0 for female.
    pub fn as_label(self) -> f64 {
        self as u8 as f64
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Female => "female",
            Attribute::Male => "male",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorRecord {
    pub identity: u64,
    pub attribute: Attribute,
    pub vector: Vec<f32>,
}

/// A set of equal-dimension descriptor records.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    records: Vec<DescriptorRecord>,
}

impl Dataset {
    pub fn new(dim: usize, records: Vec<DescriptorRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.vector.len() != dim {
                return Err(Error::Dimension(format!(
                    "record {i} has dimension {}, dataset dimension is {dim}",
                    r.vector.len()
                )));
            }
            if !r.vector.iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("record {i} has non-finite values")));
            }
        }
        Ok(Dataset { dim, records })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[DescriptorRecord] {
        &self.records
    }

    /// Descriptor matrix widened to `f64`, one row per record.
    pub fn features(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.len() * self.dim);
        for r in &self.records {
            data.extend(r.vector.iter().map(|&v| v as f64));
        }
        Matrix::from_vec(self.len(), self.dim, data).expect("consistent shape")
    }

    pub fn attributes(&self) -> Vec<Attribute> {
        self.records.iter().map(|r| r.attribute).collect()
    }

    /// Attribute labels as floats (1 = male).
    pub fn attribute_labels(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.attribute.as_label()).collect()
    }

    pub fn identities(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.identity).collect()
    }

    pub fn count(&self, attribute: Attribute) -> usize {
        self.records.iter().filter(|r| r.attribute == attribute).count()
    }

    pub fn has_both_attributes(&self) -> bool {
        self.count(Attribute::Male) > 0 && self.count(Attribute::Female) > 0
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            dim: self.dim,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Same labels, new vectors (one matrix row per record, narrowed to `f32`).
    pub fn with_vectors(&self, vectors: &Matrix) -> Result<Dataset> {
        if vectors.rows() != self.len() {
            return Err(Error::Dimension(format!(
                "{} vectors for {} records",
                vectors.rows(),
                self.len()
            )));
        }
        let records = self
            .records
            .iter()
            .zip(vectors.row_iter())
            .map(|(r, v)| DescriptorRecord {
                identity: r.identity,
                attribute: r.attribute,
                vector: v.iter().map(|&x| x as f32).collect(),
            })
            .collect();
        Dataset::new(vectors.cols(), records)
    }

    /// Splits by identity so no identity lands on both sides; identities
    /// are shuffled within each attribute group, and `second_fraction` of
    /// each group goes to the second part.
    pub fn split_by_identity(&self, second_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(second_fraction > 0.0 && second_fraction < 1.0) {
            return Err(Error::Validation(format!(
                "split fraction must be in (0,1), got {second_fraction}"
            )));
        }
        let mut by_attr: BTreeMap<Attribute, BTreeSet<u64>> = BTreeMap::new();
        for r in &self.records {
            by_attr.entry(r.attribute).or_default().insert(r.identity);
        }
        let mut rng = substream(seed, "split_by_identity", 0);
        let mut second = BTreeSet::new();
        for ids in by_attr.values() {
            let mut ids: Vec<u64> = ids.iter().copied().collect();
            ids.shuffle(&mut rng);
            let take = ((ids.len() as f64) * second_fraction).round() as usize;
            let take = take.clamp(usize::from(ids.len() > 1), ids.len().saturating_sub(1));
            second.extend(ids.into_iter().take(take));
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, r) in self.records.iter().enumerate() {
            if second.contains(&r.identity) {
                b.push(i);
            } else {
                a.push(i);
            }
        }
        Ok((self.subset(&a), self.subset(&b)))
    }
}

/// Serializes a dataset into the `FDS1` byte layout.
pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN as usize + ds.len() * record_len(ds.dim) as usize);
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.extend_from_slice(&(ds.dim as u32).to_le_bytes());
    for r in &ds.records {
        out.extend_from_slice(&r.identity.to_le_bytes());
        out.push(r.attribute as u8);
        for v in &r.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn record_len(dim: usize) -> u64 {
    9 + 4 * dim as u64
}

struct Header {
    count: u64,
    dim: usize,
    payload: u64,
}

fn parse_header(bytes: &[u8], path: &Path, cap: u64) -> Result<Header> {
    if (bytes.len() as u64) < HEADER_LEN {
        return Err(Error::format(
            path,
            FormatError::Truncated {
                expected: HEADER_LEN,
                actual: bytes.len() as u64,
            },
        ));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != DATASET_MAGIC {
        return Err(Error::format(
            path,
            FormatError::BadMagic {
                expected: DATASET_MAGIC,
                found: magic,
            },
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::format(
            path,
            FormatError::VersionMismatch {
                expected: DATASET_VERSION,
                found: version,
            },
        ));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let payload = count
        .checked_mul(record_len(dim))
        .filter(|&p| p <= cap)
        .ok_or_else(|| {
            Error::format(
                path,
                FormatError::TooLarge {
                    requested: count.saturating_mul(record_len(dim)),
                    cap,
                },
            )
        })?;
    Ok(Header {
        count,
        dim,
        payload,
    })
}

/// Parses `FDS1` bytes; `path` only labels errors.
pub fn decode_dataset(bytes: &[u8], path: &Path, cap: u64) -> Result<Dataset> {
    let header = parse_header(bytes, path, cap)?;
    let expected = HEADER_LEN + header.payload;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::format(path, FormatError::Truncated { expected, actual }));
    }
    if actual > expected {
        return Err(Error::format(path, FormatError::TrailingBytes { expected, actual }));
    }
    let rec_len = record_len(header.dim) as usize;
    let mut records = Vec::with_capacity(header.count as usize);
    for (i, chunk) in bytes[HEADER_LEN as usize..].chunks_exact(rec_len).enumerate() {
        let identity = u64::from_le_bytes(chunk[0..8].try_into().unwrap());
        let attribute = Attribute::from_byte(chunk[8]).ok_or_else(|| {
            Error::format(
                path,
                FormatError::InvalidAttribute {
                    record: i as u64,
                    value: chunk[8],
                },
            )
        })?;
        let vector: Vec<f32> = chunk[9..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if !vector.iter().all(|v| v.is_finite()) {
            return Err(Error::format(path, FormatError::NonFinite { record: i as u64 }));
        }
        records.push(DescriptorRecord {
            identity,
            attribute,
            vector,
        });
    }
    Ok(Dataset {
        dim: header.dim,
        records,
    })
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset_with_cap(path, DEFAULT_READ_CAP)
}

/// Reads a dataset, refusing headers that declare more than `cap` payload
/// bytes before anything is allocated.
pub fn read_dataset_with_cap(path: impl AsRef<Path>, cap: u64) -> Result<Dataset> {
    use std::io::Read;
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; HEADER_LEN as usize];
    let mut got = 0;
    while got < header.len() {
        match file.read(&mut header[got..]).map_err(|e| Error::io(path, e))? {
            0 => break,
            n => got += n,
        }
    }
    let h = parse_header(&header[..got], path, cap)?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let expected = HEADER_LEN + h.payload;
    if file_len < expected {
        return Err(Error::format(
            path,
            FormatError::Truncated {
                expected,
                actual: file_len,
            },
        ));
    }
    let mut bytes = Vec::with_capacity(expected as usize);
    bytes.extend_from_slice(&header);
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes, path, cap)
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_dataset(ds)).map_err(|e| Error::io(path, e))
}

/// One line of a pair-protocol CSV.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairRow {
    pub index_a: usize,
    pub index_b: usize,
    pub genuine: bool,
}

/// Parses `index_a,index_b,genuine` lines; a header line and `#` comments
/// are skipped.
pub fn parse_pairs(text: &str, path: &Path) -> Result<Vec<PairRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("index_a") {
            continue;
        }
        let malformed = |message: String| {
            Error::format(
                path,
                FormatError::Malformed {
                    line: lineno + 1,
                    message,
                },
            )
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(malformed(format!("expected 3 fields, got {}", fields.len())));
        }
        let index_a = fields[0]
            .parse()
            .map_err(|_| malformed(format!("bad index {:?}", fields[0])))?;
        let index_b = fields[1]
            .parse()
            .map_err(|_| malformed(format!("bad index {:?}", fields[1])))?;
        let genuine = match fields[2] {
            "1" => true,
            "0" => false,
            other => return Err(malformed(format!("genuine flag must be 0 or 1, got {other:?}"))),
        };
        rows.push(PairRow {
            index_a,
            index_b,
            genuine,
        });
    }
    Ok(rows)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PairRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text, path)
}

pub fn write_pairs(rows: &[PairRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("index_a,index_b,genuine\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.index_a, r.index_b, u8::from(r.genuine));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Parses `key = value` lines. Blank lines and `#` comments are ignored;
/// a repeated key is an error.
pub fn parse_key_values(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let malformed = |message: String| {
            Error::format(
                path,
                FormatError::Malformed {
                    line: lineno + 1,
                    message,
                },
            )
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| malformed(format!("expected key=value, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(malformed("empty key".into()));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(malformed(format!("duplicate key {k:?}")));
        }
    }
    Ok(map)
}

pub fn read_key_values(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_key_values(&text, path)
}

/// Pulls typed values out of a key=value map, tracking which keys were used
/// so leftovers can be rejected.
pub struct KeyValueReader {
    map: BTreeMap<String, String>,
}

impl KeyValueReader {
    pub fn new(map: BTreeMap<String, String>) -> Self {
        KeyValueReader { map }
    }

    pub fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Validation(format!("cannot parse {key} = {v:?}"))),
        }
    }

    /// Fails on any key not consumed by `take`.
    pub fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            None => Ok(()),
            Some(k) => Err(Error::Validation(format!("unknown config key {k:?}"))),
        }
    }
}

/// CSV table with a `# key=value` comment header.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvReport {
    pub header: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvReport {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        CsvReport {
            header: Vec::new(),
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.header.push((key.into(), value.to_string()));
        self
    }

    pub fn push_row<S: ToString>(&mut self, row: impl IntoIterator<Item = S>) {
        let row: Vec<String> = row.into_iter().map(|s| s.to_string()).collect();
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(s, "# {k}={v}");
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Formats a float so reports are stable and round-trippable.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.10}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Dataset {
        Dataset::new(
            2,
            vec![
                DescriptorRecord {
                    identity: 1,
                    attribute: Attribute::Male,
                    vector: vec![1.0, -2.5],
                },
                DescriptorRecord {
                    identity: 2,
                    attribute: Attribute::Female,
                    vector: vec![0.0, 0.25],
                },
                DescriptorRecord {
                    identity: 0xdead_beef,
                    attribute: Attribute::Female,
                    vector: vec![3.0, 1e-3],
                },
            ],
        )
        .unwrap()
    }

    fn hex(s: &str) -> Vec<u8> {
        let s: String = s.split_whitespace().collect();
        (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
            .collect()
    }

    #[test]
    fn hand_built_fixture_parses() {
        let bytes = hex(
            "46445331 01000000 0300000000000000 02000000
             0100000000000000 01 0000803f 000020c0
             0200000000000000 00 00000000 0000803e
             efbeadde00000000 00 00004040 6f12833a",
        );
        let ds = decode_dataset(&bytes, Path::new("fixture"), DEFAULT_READ_CAP).unwrap();
        assert_eq!(ds, sample());
        assert_eq!(encode_dataset(&ds), bytes);
    }

    #[test]
    fn file_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.fds");
        write_dataset(&sample(), &p).unwrap();
        let first = std::fs::read(&p).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back, sample());
        let p2 = dir.path().join("e.fds");
        write_dataset(&back, &p2).unwrap();
        assert_eq!(first, std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_reports_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.fds");
        let mut bytes = encode_dataset(&sample());
        let full = bytes.len() as u64;
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p, &bytes).unwrap();
        match read_dataset(&p) {
            Err(Error::Format {
                kind: FormatError::Truncated { expected, actual },
                ..
            }) => {
                assert_eq!(expected, full);
                assert_eq!(actual, full - 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn distinct_error_codes() {
        let p = Path::new("x");
        let good = encode_dataset(&sample());

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        let e = decode_dataset(&bad_magic, p, DEFAULT_READ_CAP).unwrap_err();
        assert_eq!(e.code(), "bad_magic");

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        let e = decode_dataset(&bad_version, p, DEFAULT_READ_CAP).unwrap_err();
        assert_eq!(e.code(), "version_mismatch");

        let mut nan = good.clone();
        nan[20 + 9..20 + 13].copy_from_slice(&f32::NAN.to_le_bytes());
        let e = decode_dataset(&nan, p, DEFAULT_READ_CAP).unwrap_err();
        assert_eq!(e.code(), "non_finite");

        let mut attr = good.clone();
        attr[20 + 8] = 7;
        let e = decode_dataset(&attr, p, DEFAULT_READ_CAP).unwrap_err();
        assert_eq!(e.code(), "invalid_attribute");
    }

    #[test]
    fn oversized_header_fails_before_allocation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("big.fds");
        let mut bytes = encode_dataset(&sample());
        bytes[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert_eq!(read_dataset(&p).unwrap_err().code(), "too_large");
        let mut modest = encode_dataset(&sample());
        modest[8..16].copy_from_slice(&1000u64.to_le_bytes());
        std::fs::write(&p, &modest).unwrap();
        assert_eq!(read_dataset_with_cap(&p, 100).unwrap_err().code(), "too_large");
        assert_eq!(read_dataset(&p).unwrap_err().code(), "truncated");
    }

    #[test]
    fn pairs_and_key_values() {
        let rows = parse_pairs("index_a,index_b,genuine\n0,1,1\n2, 3 ,0\n", Path::new("p")).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].genuine && !rows[1].genuine && rows[1].index_b == 3);
        assert!(parse_pairs("0,1,2\n", Path::new("p")).is_err());

        let kv = parse_key_values("# c\nlambda = 10\n\nk=5 # five\n", Path::new("c")).unwrap();
        assert_eq!(kv["lambda"], "10");
        assert_eq!(kv["k"], "5");
        assert!(parse_key_values("a=1\na=2\n", Path::new("c")).is_err());
        assert!(parse_key_values("novalue\n", Path::new("c")).is_err());
    }

    #[test]
    fn identity_split_is_disjoint_and_stratified() {
        let mut records = Vec::new();
        for id in 0..20u64 {
            for _ in 0..3 {
                records.push(DescriptorRecord {
                    identity: id,
                    attribute: if id % 2 == 0 { Attribute::Male } else { Attribute::Female },
                    vector: vec![id as f32],
                });
            }
        }
        let ds = Dataset::new(1, records).unwrap();
        let (a, b) = ds.split_by_identity(0.3, 4).unwrap();
        let ia: BTreeSet<u64> = a.identities().into_iter().collect();
        let ib: BTreeSet<u64> = b.identities().into_iter().collect();
        assert!(ia.is_disjoint(&ib));
        assert_eq!(a.len() + b.len(), ds.len());
        assert_eq!(b.count(Attribute::Male), 9);
        assert_eq!(b.count(Attribute::Female), 9);
        assert_eq!(ds.split_by_identity(0.3, 4).unwrap(), (a, b));
    }

    proptest! {
        #[test]
        fn round_trip_any_dataset(
            dim in 0usize..6,
            rows in prop::collection::vec((any::<u64>(), any::<bool>(), prop::collection::vec(-1e6f32..1e6, 6)), 0..12),
        ) {
            let records = rows
                .into_iter()
                .map(|(identity, male, v)| DescriptorRecord {
                    identity,
                    attribute: if male { Attribute::Male } else { Attribute::Female },
                    vector: v[..dim].to_vec(),
                })
                .collect();
            let ds = Dataset::new(dim, records).unwrap();
            let bytes = encode_dataset(&ds);
            let back = decode_dataset(&bytes, Path::new("p"), DEFAULT_READ_CAP).unwrap();
            prop_assert_eq!(encode_dataset(&back), bytes);
            prop_assert_eq!(back, ds);
        }
    }
}
