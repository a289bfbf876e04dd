//! Entity labels, tagged-output parsing, BIO alignment, window merging and
//! entity-level scoring.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NerClass {
    Person,
    Organization,
    Location,
    Value,
    Date,
}

impl NerClass {
    pub const ALL: [NerClass; 5] = [
        NerClass::Person,
        NerClass::Organization,
        NerClass::Location,
        NerClass::Value,
        NerClass::Date,
    ];

    /// Three-letter code used in BIO tags.
    pub fn code(self) -> &'static str {
        match self {
            NerClass::Person => "PER",
            NerClass::Organization => "ORG",
            NerClass::Location => "LOC",
            NerClass::Value => "VAL",
            NerClass::Date => "DAT",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.code() == code)
    }

    /// Name used in report tables.
    pub fn name(self) -> &'static str {
        match self {
            NerClass::Person => "Person",
            NerClass::Organization => "Organization",
            NerClass::Location => "Location",
            NerClass::Value => "Value",
            NerClass::Date => "Date",
        }
    }
}

/// Language of the natural-language labels written into generation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelLanguage {
    #[default]
    Portuguese,
    English,
}

impl LabelLanguage {
    /// Label text for a class, `None` meaning the non-entity label.
    pub fn label(self, class: Option<NerClass>) -> &'static str {
        use NerClass::*;
        match (self, class) {
            (LabelLanguage::Portuguese, Some(Person)) => "Pessoa",
            (LabelLanguage::Portuguese, Some(Organization)) => "Organização",
            (LabelLanguage::Portuguese, Some(Location)) => "Local",
            (LabelLanguage::Portuguese, Some(Value)) => "Valor",
            (LabelLanguage::Portuguese, Some(Date)) => "Data",
            (LabelLanguage::Portuguese, None) => "Outro",
            (LabelLanguage::English, Some(Person)) => "Person",
            (LabelLanguage::English, Some(Organization)) => "Organization",
            (LabelLanguage::English, Some(Location)) => "Local",
            (LabelLanguage::English, Some(Value)) => "Value",
            (LabelLanguage::English, Some(Date)) => "Date",
            (LabelLanguage::English, None) => "Other",
        }
    }
}

impl FromStr for LabelLanguage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pt" | "portuguese" => Ok(LabelLanguage::Portuguese),
            "en" | "english" => Ok(LabelLanguage::English),
            _ => Err(Error::invalid(format!("unknown label language {s:?}"))),
        }
    }
}

/// Maps label text in either language (plus a few aliases) to a class.
/// `Some(None)` is the non-entity label; `None` means unknown.
pub fn parse_label(text: &str) -> Option<Option<NerClass>> {
    use NerClass::*;
    let class = match text.trim() {
        "Pessoa" | "Person" | "PER" => Some(Person),
        "Organização" | "Organizacao" | "Organization" | "ORG" => Some(Organization),
        "Local" | "Location" | "LOC" => Some(Location),
        "Valor" | "Value" | "VAL" => Some(Value),
        "Data" | "Date" | "Tempo" | "Time" | "DAT" => Some(Date),
        "Outro" | "Other" | "O" => None,
        _ => return None,
    };
    Some(class)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bio {
    O,
    B(NerClass),
    I(NerClass),
}

impl fmt::Display for Bio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bio::O => f.write_str("O"),
            Bio::B(c) => write!(f, "B-{}", c.code()),
            Bio::I(c) => write!(f, "I-{}", c.code()),
        }
    }
}

impl FromStr for Bio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidBio(format!("unknown tag {s:?}"));
        if s == "O" {
            return Ok(Bio::O);
        }
        let (prefix, code) = s.split_once('-').ok_or_else(bad)?;
        let class = NerClass::from_code(code).ok_or_else(bad)?;
        match prefix {
            "B" => Ok(Bio::B(class)),
            "I" => Ok(Bio::I(class)),
            _ => Err(bad()),
        }
    }
}

impl Bio {
    pub fn class(self) -> Option<NerClass> {
        match self {
            Bio::O => None,
            Bio::B(c) | Bio::I(c) => Some(c),
        }
    }
}

/// Fails on an I-X that does not continue a B-X or I-X.
pub fn validate_bio(tags: &[Bio]) -> Result<()> {
    let mut prev = Bio::O;
    for (i, &t) in tags.iter().enumerate() {
        if let Bio::I(c) = t {
            if prev.class() != Some(c) {
                return Err(Error::InvalidBio(format!("{t} at position {i} follows {prev}")));
            }
        }
        prev = t;
    }
    Ok(())
}

/// Turns every I-X that does not continue an X entity into B-X.
pub fn repair_bio(tags: &mut [Bio]) {
    let mut prev = Bio::O;
    for t in tags.iter_mut() {
        if let Bio::I(c) = *t {
            if prev.class() != Some(c) {
                *t = Bio::B(c);
            }
        }
        prev = *t;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSegment {
    pub words: Vec<String>,
    /// `None` for the non-entity label.
    pub class: Option<NerClass>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedOutput {
    pub segments: Vec<TaggedSegment>,
    /// Words after the last label, kept as a non-entity segment.
    pub dangling: bool,
    /// Bracketed labels outside the table, read as non-entity.
    pub unknown_labels: usize,
    /// Labels with no preceding words, dropped.
    pub empty_segments: usize,
}

/// Splits generated text into word runs closed by `[Label]` markers.
pub fn parse_tagged_output(text: &str) -> ParsedOutput {
    let mut out = ParsedOutput::default();
    let mut pending: Vec<String> = Vec::new();
    let mut rest = text;
    loop {
        let label = rest.find('[').and_then(|open| rest[open..].find(']').map(|close| (open, open + close)));
        let Some((open, close)) = label else {
            pending.extend(rest.split_whitespace().map(str::to_string));
            break;
        };
        pending.extend(rest[..open].split_whitespace().map(str::to_string));
        let class = match parse_label(&rest[open + 1..close]) {
            Some(c) => c,
            None => {
                out.unknown_labels += 1;
                None
            }
        };
        if pending.is_empty() {
            out.empty_segments += 1;
        } else {
            out.segments.push(TaggedSegment {
                words: std::mem::take(&mut pending),
                class,
            });
        }
        rest = &rest[close + 1..];
    }
    if !pending.is_empty() {
        out.dangling = true;
        out.segments.push(TaggedSegment {
            words: pending,
            class: None,
        });
    }
    out
}

/// Positional alignment of segment words onto `input_len` input words.
/// Returns the tags and the number of surplus generated words dropped.
pub fn to_bio(segments: &[TaggedSegment], input_len: usize) -> (Vec<Bio>, usize) {
    let mut tags = Vec::with_capacity(input_len);
    let mut produced = 0usize;
    for seg in segments {
        for k in 0..seg.words.len() {
            produced += 1;
            if tags.len() == input_len {
                continue;
            }
            tags.push(match seg.class {
                None => Bio::O,
                Some(c) if k == 0 => Bio::B(c),
                Some(c) => Bio::I(c),
            });
        }
    }
    let surplus = produced.saturating_sub(input_len);
    tags.resize(input_len, Bio::O);
    (tags, surplus)
}

/// Combines per-window tags of one document. Each word takes the label of
/// the window where its distance to the nearer window edge is largest (ties
/// to the earlier window); the result is BIO-repaired.
pub fn merge_windows(per_window: &[(usize, Vec<Bio>)], doc_len: usize) -> Result<Vec<Bio>> {
    let mut order: Vec<usize> = (0..per_window.len()).collect();
    order.sort_by_key(|&i| per_window[i].0);
    let mut best: Vec<Option<(usize, Bio)>> = vec![None; doc_len];
    for &wi in &order {
        let (offset, tags) = &per_window[wi];
        for (k, &tag) in tags.iter().enumerate() {
            let w = offset + k;
            if w >= doc_len {
                break;
            }
            let dist = k.min(tags.len() - 1 - k);
            if best[w].is_none_or(|(d, _)| dist > d) {
                best[w] = Some((dist, tag));
            }
        }
    }
    let mut merged = best
        .into_iter()
        .map(|b| b.map(|(_, t)| t).ok_or(Error::CoverageGap))
        .collect::<Result<Vec<_>>>()?;
    repair_bio(&mut merged);
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntitySpan {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub class: NerClass,
}

/// Maximal `B-X I-X*` runs; a stray `I-X` opens a new span.
pub fn extract_entities(tags: &[Bio]) -> Vec<EntitySpan> {
    let mut spans: Vec<EntitySpan> = Vec::new();
    let mut open: Option<EntitySpan> = None;
    for (i, &t) in tags.iter().enumerate() {
        match t {
            Bio::I(c) if open.is_some_and(|s| s.class == c) => {
                open.as_mut().expect("checked").end = i;
            }
            Bio::B(c) | Bio::I(c) => {
                spans.extend(open.take());
                open = Some(EntitySpan { start: i, end: i, class: c });
            }
            Bio::O => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    spans
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SpanCounts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl SpanCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, o: SpanCounts) {
        self.gold += o.gold;
        self.predicted += o.predicted;
        self.correct += o.correct;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NerReport {
    /// Indexed like [`NerClass::ALL`].
    pub per_class: [SpanCounts; 5],
    pub micro: SpanCounts,
}

/// Exact-match span scoring.
pub fn entity_prf(gold: &[EntitySpan], pred: &[EntitySpan]) -> NerReport {
    let mut report = NerReport::default();
    let idx = |c: NerClass| NerClass::ALL.iter().position(|&x| x == c).expect("known class");
    let gold_set: std::collections::HashSet<&EntitySpan> = gold.iter().collect();
    let pred_set: std::collections::HashSet<&EntitySpan> = pred.iter().collect();
    for s in &gold_set {
        report.per_class[idx(s.class)].gold += 1;
    }
    for s in &pred_set {
        report.per_class[idx(s.class)].predicted += 1;
        if gold_set.contains(s) {
            report.per_class[idx(s.class)].correct += 1;
        }
    }
    for c in report.per_class {
        report.micro.add(c);
    }
    report
}

impl NerReport {
    /// Adds another document's counts.
    pub fn merge(&mut self, other: &NerReport) {
        for (a, b) in self.per_class.iter_mut().zip(&other.per_class) {
            a.add(*b);
        }
        self.micro.add(other.micro);
    }

    /// Flat `key=value` lines.
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        let rows = NerClass::ALL
            .iter()
            .zip(&self.per_class)
            .map(|(c, n)| (c.name().to_lowercase(), *n))
            .chain(std::iter::once(("micro".to_string(), self.micro)));
        for (name, c) in rows {
            out += &format!(
                "{name}.precision={:.6}\n{name}.recall={:.6}\n{name}.f1={:.6}\n{name}.gold={}\n{name}.predicted={}\n{name}.correct={}\n",
                c.precision(),
                c.recall(),
                c.f1(),
                c.gold,
                c.predicted,
                c.correct
            );
        }
        out
    }

    /// Tab-separated per-class table with a header and a final micro row.
    pub fn to_table(&self) -> String {
        let mut out = String::from("class\tprecision\trecall\tf1\tgold\tpredicted\tcorrect\n");
        let rows = NerClass::ALL
            .iter()
            .zip(&self.per_class)
            .map(|(c, n)| (c.name(), *n))
            .chain(std::iter::once(("Micro", self.micro)));
        for (name, c) in rows {
            out += &format!(
                "{name}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\n",
                c.precision(),
                c.recall(),
                c.f1(),
                c.gold,
                c.predicted,
                c.correct
            );
        }
        out
    }
}

/// Three-column `word gold pred` lines, one blank line after each document.
pub fn write_conll_predictions(docs: &[(Vec<String>, Vec<Bio>, Vec<Bio>)]) -> String {
    let mut out = String::new();
    for (words, gold, pred) in docs {
        for ((w, g), p) in words.iter().zip(gold).zip(pred) {
            out += &format!("{w}\t{g}\t{p}\n");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use NerClass::*;

    #[test]
    fn worked_example() {
        let parsed = parse_tagged_output("John [Person] lives in [Other] New York [Local]");
        assert_eq!(parsed.segments.len(), 3);
        assert_eq!(parsed.segments[2].class, Some(Location));
        assert!(!parsed.dangling && parsed.unknown_labels == 0);
        let (tags, surplus) = to_bio(&parsed.segments, 5);
        assert_eq!(tags, vec![Bio::B(Person), Bio::O, Bio::O, Bio::B(Location), Bio::I(Location)]);
        assert_eq!(surplus, 0);
    }

    #[test]
    fn degenerate_outputs_are_flagged() {
        let p = parse_tagged_output("[Person]");
        assert!(p.segments.is_empty());
        assert_eq!(p.empty_segments, 1);
        let p = parse_tagged_output("a [Thing] b c");
        assert_eq!(p.unknown_labels, 1);
        assert!(p.dangling);
        assert_eq!(p.segments[0].class, None);
        assert_eq!(to_bio(&[], 3).0, vec![Bio::O; 3]);
        let (tags, surplus) = to_bio(&p.segments, 1);
        assert_eq!((tags.len(), surplus), (1, 2));
    }

    #[test]
    fn bio_round_trips_text() {
        for s in ["O", "B-PER", "I-ORG", "B-LOC", "I-VAL", "B-DAT"] {
            assert_eq!(s.parse::<Bio>().unwrap().to_string(), s);
        }
        assert!("B-XYZ".parse::<Bio>().is_err());
        assert!(validate_bio(&[Bio::O, Bio::I(Person)]).is_err());
        let mut t = vec![Bio::B(Person), Bio::I(Location)];
        repair_bio(&mut t);
        assert_eq!(t, vec![Bio::B(Person), Bio::B(Location)]);
    }

    #[test]
    fn merge_prefers_window_centre() {
        let w1 = (0, vec![Bio::O; 512]);
        let mut w2 = (256, vec![Bio::O; 512]);
        w2.1[300 - 256] = Bio::B(Person);
        let merged = merge_windows(&[w1.clone(), w2.clone()], 768).unwrap();
        assert_eq!(merged[300], Bio::O);
        w2.1[500 - 256] = Bio::B(Date);
        let merged = merge_windows(&[w2, w1], 768).unwrap();
        assert_eq!(merged[500], Bio::B(Date));
        assert!(matches!(merge_windows(&[(0, vec![Bio::O; 4])], 5), Err(Error::CoverageGap)));
    }

    #[test]
    fn spans_and_scores() {
        assert_eq!(
            extract_entities(&[Bio::B(Person), Bio::I(Person), Bio::O]),
            vec![EntitySpan { start: 0, end: 1, class: Person }]
        );
        assert!(extract_entities(&[Bio::O, Bio::O]).is_empty());
        let gold = [
            EntitySpan { start: 0, end: 0, class: Person },
            EntitySpan { start: 3, end: 4, class: Location },
        ];
        let r = entity_prf(&gold, &gold);
        assert_eq!(r.micro.f1(), 1.0);
        let r = entity_prf(&gold, &gold[..1]);
        assert_eq!((r.micro.precision(), r.micro.recall()), (1.0, 0.5));
        assert!((r.micro.f1() - 2.0 / 3.0).abs() < 1e-15);
        assert!(r.to_table().starts_with("class\tprecision"));
    }
}
