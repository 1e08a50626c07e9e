//! Action-unit registries, occurrence patterns and annotated frame tables.
//!
//! A pattern is the full active/inactive vector over every AU of interest in
//! one frame. Patterns are stored MSB-first: the first registry code occupies
//! the highest used bit, so integer order on the packed word is the
//! bitwise-lexicographic order over the registry sequence.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on the number of AUs a registry can hold (one packed `u64`).
pub const MAX_AUS: usize = 64;

const BP4D_CODES: [u16; 12] = [1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24];
const DISFA_CODES: [u16; 12] = [1, 2, 4, 5, 6, 9, 12, 15, 17, 20, 25, 26];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnnotationError {
    #[error("registry must contain at least one AU code")]
    EmptyRegistry,
    #[error("registry holds {0} codes, at most {MAX_AUS} are supported")]
    RegistryTooLarge(usize),
    #[error("registry codes must be positive and strictly increasing (offending code AU{0})")]
    RegistryOrder(u16),
    #[error("pattern width {found} does not match registry width {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("invalid pattern string {0:?}: expected only '0' and '1'")]
    PatternString(String),
    #[error("header error: {0}")]
    Header(String),
    #[error("row {row}: expected {expected} fields, found {found}")]
    FieldCount { row: usize, expected: usize, found: usize },
    #[error("row {row}: column {column} has value {value:?}, expected 0 or 1")]
    Value { row: usize, column: String, value: String },
    #[error("row {row}: frame index {value:?} is not a non-negative integer")]
    FrameIndex { row: usize, value: String },
    #[error("row {row}: duplicate frame key ({subject}, {task}, {frame})")]
    Duplicate { row: usize, subject: String, task: String, frame: u64 },
    #[error("no frames")]
    NoFrames,
    #[error("csv error: {0}")]
    Csv(String),
}

/// Ordered list of AU codes that fixes the pattern width `k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u16>", into = "Vec<u16>")]
pub struct AuRegistry {
    codes: Vec<u16>,
}

impl AuRegistry {
    pub fn new(codes: Vec<u16>) -> Result<Self, AnnotationError> {
        if codes.is_empty() {
            return Err(AnnotationError::EmptyRegistry);
        }
        if codes.len() > MAX_AUS {
            return Err(AnnotationError::RegistryTooLarge(codes.len()));
        }
        let mut prev = 0u16;
        for &c in &codes {
            if c <= prev {
                return Err(AnnotationError::RegistryOrder(c));
            }
            prev = c;
        }
        Ok(Self { codes })
    }

    /// The twelve AUs studied on BP4D.
    pub fn bp4d() -> Self {
        Self { codes: BP4D_CODES.to_vec() }
    }

    /// All twelve annotated DISFA AUs.
    pub fn disfa() -> Self {
        Self { codes: DISFA_CODES.to_vec() }
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn k(&self) -> usize {
        self.codes.len()
    }

    pub fn index_of(&self, code: u16) -> Option<usize> {
        self.codes.binary_search(&code).ok()
    }

    /// Column names as they appear in annotation headers (`AU1`, `AU2`, ...).
    pub fn column_names(&self) -> Vec<String> {
        self.codes.iter().map(|c| format!("AU{c}")).collect()
    }
}

impl TryFrom<Vec<u16>> for AuRegistry {
    type Error = AnnotationError;
    fn try_from(codes: Vec<u16>) -> Result<Self, Self::Error> {
        Self::new(codes)
    }
}

impl From<AuRegistry> for Vec<u16> {
    fn from(r: AuRegistry) -> Self {
        r.codes
    }
}

/// Fixed-width active/inactive vector over a registry.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct AuPattern {
    bits: u64,
    width: u8,
}

impl AuPattern {
    pub fn zeros(width: usize) -> Self {
        assert!((1..=MAX_AUS).contains(&width), "pattern width out of range");
        Self { bits: 0, width: width as u8 }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut p = Self::zeros(bits.len());
        for (j, &b) in bits.iter().enumerate() {
            p.set(j, b);
        }
        p
    }

    /// Build from the set of active AU positions (registry indices).
    pub fn from_active(width: usize, active: &[usize]) -> Self {
        let mut p = Self::zeros(width);
        for &j in active {
            p.set(j, true);
        }
        p
    }

    /// Parse a `0`/`1` string in registry order.
    pub fn parse(s: &str) -> Result<Self, AnnotationError> {
        if s.is_empty() || s.len() > MAX_AUS {
            return Err(AnnotationError::PatternString(s.to_string()));
        }
        let mut p = Self::zeros(s.len());
        for (j, ch) in s.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => p.set(j, true),
                _ => return Err(AnnotationError::PatternString(s.to_string())),
            }
        }
        Ok(p)
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    #[inline]
    fn mask(&self, j: usize) -> u64 {
        debug_assert!(j < self.width());
        1u64 << (self.width() - 1 - j)
    }

    #[inline]
    pub fn get(&self, j: usize) -> bool {
        self.bits & self.mask(j) != 0
    }

    #[inline]
    pub fn set(&mut self, j: usize, active: bool) {
        assert!(j < self.width(), "AU index {j} out of range for width {}", self.width);
        let m = self.mask(j);
        if active {
            self.bits |= m;
        } else {
            self.bits &= !m;
        }
    }

    pub fn count_active(&self) -> u32 {
        self.bits.count_ones()
    }

    pub fn is_zero(&self) -> bool {
        self.bits == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.width()).map(move |j| self.get(j))
    }

    /// Bits as `0.0`/`1.0`, the form training targets use.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.iter().map(|b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Packed MSB-first word; integer order equals pattern order.
    pub fn packed(&self) -> u64 {
        self.bits
    }
}

impl Ord for AuPattern {
    fn cmp(&self, other: &Self) -> Ordering {
        self.width.cmp(&other.width).then(self.bits.cmp(&other.bits))
    }
}

impl PartialOrd for AuPattern {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for AuPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for AuPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AuPattern({self})")
    }
}

impl Serialize for AuPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AuPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        AuPattern::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedFrame {
    pub subject: String,
    pub task: String,
    pub frame: u64,
    pub pattern: AuPattern,
}

impl AnnotatedFrame {
    /// Stable key used to address per-frame payloads such as images.
    pub fn key(&self) -> String {
        frame_key(&self.subject, &self.task, self.frame)
    }
}

pub fn frame_key(subject: &str, task: &str, frame: u64) -> String {
    format!("{subject}/{task}/{frame}")
}

/// Immutable table of annotated frames over one registry.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTable {
    registry: AuRegistry,
    frames: Vec<AnnotatedFrame>,
    task_emotions: Option<BTreeMap<String, String>>,
}

impl DatasetTable {
    /// Validates pattern widths and `(subject, task, frame)` uniqueness.
    /// Empty tables are allowed here; analysis operations reject them.
    pub fn new(registry: AuRegistry, frames: Vec<AnnotatedFrame>) -> Result<Self, AnnotationError> {
        let mut seen = HashSet::with_capacity(frames.len());
        for (i, f) in frames.iter().enumerate() {
            if f.pattern.width() != registry.k() {
                return Err(AnnotationError::WidthMismatch { expected: registry.k(), found: f.pattern.width() });
            }
            if !seen.insert((f.subject.as_str(), f.task.as_str(), f.frame)) {
                return Err(AnnotationError::Duplicate { row: i + 1, subject: f.subject.clone(), task: f.task.clone(), frame: f.frame });
            }
        }
        Ok(Self { registry, frames, task_emotions: None })
    }

    pub fn with_task_emotions(mut self, map: BTreeMap<String, String>) -> Self {
        self.task_emotions = Some(map);
        self
    }

    pub fn registry(&self) -> &AuRegistry {
        &self.registry
    }

    pub fn frames(&self) -> &[AnnotatedFrame] {
        &self.frames
    }

    pub fn task_emotions(&self) -> Option<&BTreeMap<String, String>> {
        self.task_emotions.as_ref()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Distinct subject ids in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.frames.iter().filter(|f| seen.insert(f.subject.as_str())).map(|f| f.subject.clone()).collect()
    }

    /// New table over a subset of frames (by index), keeping order.
    pub fn select(&self, indices: &[usize]) -> DatasetTable {
        DatasetTable {
            registry: self.registry.clone(),
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
            task_emotions: self.task_emotions.clone(),
        }
    }
}

/// Parse an annotations CSV (`subject,task,frame,AU<c1>,...,AU<ck>`).
///
/// Row numbers in errors are 1-based data rows (the header is row 0).
pub fn parse_annotations(text: &str, registry: &AuRegistry) -> Result<DatasetTable, AnnotationError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::None).from_reader(text.as_bytes());
    let mut records = rdr.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| AnnotationError::Csv(e.to_string()))?,
        None => return Err(AnnotationError::Header("missing header line".into())),
    };
    check_header(&header, registry)?;

    let k = registry.k();
    let columns = registry.column_names();
    let mut frames = Vec::new();
    let mut seen: HashSet<(String, String, u64)> = HashSet::new();
    for (i, rec) in records.enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| AnnotationError::Csv(e.to_string()))?;
        // A bare trailing line with only whitespace is not a frame.
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != k + 3 {
            return Err(AnnotationError::FieldCount { row, expected: k + 3, found: rec.len() });
        }
        let subject = rec[0].to_string();
        let task = rec[1].to_string();
        let frame: u64 = rec[2].trim().parse().map_err(|_| AnnotationError::FrameIndex { row, value: rec[2].to_string() })?;
        let mut pattern = AuPattern::zeros(k);
        for j in 0..k {
            let cell = rec[3 + j].trim_end();
            match cell {
                "0" => {}
                "1" => pattern.set(j, true),
                other => return Err(AnnotationError::Value { row, column: columns[j].clone(), value: other.to_string() }),
            }
        }
        if !seen.insert((subject.clone(), task.clone(), frame)) {
            return Err(AnnotationError::Duplicate { row, subject, task, frame });
        }
        frames.push(AnnotatedFrame { subject, task, frame, pattern });
    }
    if frames.is_empty() {
        return Err(AnnotationError::NoFrames);
    }
    DatasetTable::new(registry.clone(), frames)
}

fn check_header(header: &csv::StringRecord, registry: &AuRegistry) -> Result<(), AnnotationError> {
    let mut expected = vec!["subject".to_string(), "task".to_string(), "frame".to_string()];
    expected.extend(registry.column_names());
    let found: Vec<&str> = header.iter().map(str::trim_end).collect();
    for name in &expected {
        if !found.contains(&name.as_str()) {
            return Err(AnnotationError::Header(format!("missing column {name}")));
        }
    }
    for name in &found {
        if !expected.iter().any(|e| e == name) {
            return Err(AnnotationError::Header(format!("unexpected column {name}")));
        }
    }
    if found.len() != expected.len() || found.iter().zip(&expected).any(|(f, e)| f != e) {
        return Err(AnnotationError::Header(format!("columns out of order: expected {}", expected.join(","))));
    }
    Ok(())
}

/// Inverse of [`parse_annotations`]: header plus one LF-terminated row per frame.
pub fn write_annotations(table: &DatasetTable) -> String {
    let mut out = String::with_capacity(32 + table.len() * (16 + 2 * table.registry().k()));
    out.push_str("subject,task,frame");
    for c in table.registry().column_names() {
        out.push(',');
        out.push_str(&c);
    }
    out.push('\n');
    for f in table.frames() {
        out.push_str(&f.subject);
        out.push(',');
        out.push_str(&f.task);
        out.push(',');
        out.push_str(&f.frame.to_string());
        for b in f.pattern.iter() {
            out.push_str(if b { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_au() -> AuRegistry {
        AuRegistry::new(vec![1, 2]).unwrap()
    }

    #[test]
    fn single_row_parse() {
        let t = parse_annotations("subject,task,frame,AU1,AU2\nS1,T1,0,1,0\n", &two_au()).unwrap();
        assert_eq!(t.len(), 1);
        let f = &t.frames()[0];
        assert_eq!((f.subject.as_str(), f.task.as_str(), f.frame), ("S1", "T1", 0));
        assert_eq!(f.pattern.iter().collect::<Vec<_>>(), vec![true, false]);
    }

    #[test]
    fn empty_data_section_is_rejected() {
        let err = parse_annotations("subject,task,frame,AU1,AU2\n", &two_au()).unwrap_err();
        assert_eq!(err, AnnotationError::NoFrames);
        assert_eq!(err.to_string(), "no frames");
    }

    #[test]
    fn crlf_is_accepted() {
        let t = parse_annotations("subject,task,frame,AU1,AU2\r\nS1,T1,0,1,0\r\nS1,T1,1,0,1\r\n", &two_au()).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.frames()[1].pattern.get(1));
    }

    #[test]
    fn header_errors_name_the_column() {
        let err = parse_annotations("subject,task,frame,AU1\nS1,T1,0,1\n", &two_au()).unwrap_err();
        assert_eq!(err, AnnotationError::Header("missing column AU2".into()));
        let err = parse_annotations("subject,task,frame,AU1,AU2,AU4\nS1,T1,0,1,0,0\n", &two_au()).unwrap_err();
        assert_eq!(err, AnnotationError::Header("unexpected column AU4".into()));
    }

    #[test]
    fn intensity_values_are_rejected_with_row() {
        let err = parse_annotations("subject,task,frame,AU1,AU2\nS1,T1,0,1,0\nS1,T1,1,3,0\n", &two_au()).unwrap_err();
        assert_eq!(err, AnnotationError::Value { row: 2, column: "AU1".into(), value: "3".into() });
        // FACS "missing" codes are rejected rather than imputed.
        let err = parse_annotations("subject,task,frame,AU1,AU2\nS1,T1,0,9,0\n", &two_au()).unwrap_err();
        assert!(matches!(err, AnnotationError::Value { row: 1, .. }));
    }

    #[test]
    fn duplicate_keys_are_errors() {
        let err = parse_annotations("subject,task,frame,AU1,AU2\nS1,T1,0,1,0\nS1,T1,0,0,0\n", &two_au()).unwrap_err();
        assert!(matches!(err, AnnotationError::Duplicate { row: 2, frame: 0, .. }));
    }

    #[test]
    fn builtin_registries() {
        let bp4d = AuRegistry::bp4d();
        assert_eq!(bp4d.k(), 12);
        assert_eq!(bp4d.codes(), &[1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24]);
        let disfa = AuRegistry::disfa();
        assert!(disfa.codes().contains(&25) && disfa.codes().contains(&26));
        for r in [bp4d, disfa] {
            assert!(r.codes().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn registry_rejects_bad_order() {
        assert_eq!(AuRegistry::new(vec![]), Err(AnnotationError::EmptyRegistry));
        assert_eq!(AuRegistry::new(vec![2, 1]), Err(AnnotationError::RegistryOrder(1)));
        assert_eq!(AuRegistry::new(vec![1, 1]), Err(AnnotationError::RegistryOrder(1)));
        assert_eq!(AuRegistry::new(vec![0]), Err(AnnotationError::RegistryOrder(0)));
    }

    #[test]
    fn pattern_order_is_bitwise_lexicographic() {
        let a = AuPattern::parse("0110").unwrap();
        let b = AuPattern::parse("1000").unwrap();
        let c = AuPattern::parse("0111").unwrap();
        assert!(a < b);
        assert!(a < c);
        assert!(c < b);
        assert_eq!(a.to_string(), "0110");
        assert_eq!(AuPattern::from_active(4, &[1, 2]), a);
    }
}
