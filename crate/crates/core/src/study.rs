//! Matched case-referent study data: parsing, validation and pair summaries.
//!
//! The canonical input is a long CSV with one row per unit:
//!
//! ```text
//! set_id,unit_id,exposed,case,subtype
//! 1,1a,1,1,hormone_sensitive
//! 1,1b,0,0,
//! ```
//!
//! Sets are grouped by `set_id` in order of first appearance and rows keep
//! their order within a set. The subtype of a set is the label on its case
//! row; labels on referent rows are ignored.
//!
//! Published studies often only report the 2×2 pair table, so a compact
//! summary CSV (`subtype,a,b,c,d`) is accepted as well.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One matched set: a single case and `size() - 1` referents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchedSet {
    pub set_id: String,
    pub unit_ids: Vec<String>,
    pub exposed: Vec<bool>,
    pub case: Vec<bool>,
    pub subtype: Option<String>,
}

impl MatchedSet {
    pub fn size(&self) -> usize {
        self.exposed.len()
    }

    /// Number of exposed units in the set.
    pub fn exposed_count(&self) -> usize {
        self.exposed.iter().filter(|&&z| z).count()
    }

    /// Whether the set's case is exposed (the sign-score contribution).
    pub fn case_exposed(&self) -> bool {
        self.exposed.iter().zip(&self.case).any(|(&z, &r)| z && r)
    }

    fn validate(&self) -> Result<()> {
        let j = self.size();
        if self.case.len() != j || self.unit_ids.len() != j {
            return Err(Error::validation(format!(
                "set {}: ragged unit vectors",
                self.set_id
            )));
        }
        if j < 2 {
            return Err(Error::validation(format!(
                "set {} has {} unit(s); a matched set needs at least 2",
                self.set_id, j
            )));
        }
        let cases = self.case.iter().filter(|&&r| r).count();
        if cases != 1 {
            return Err(Error::validation(format!(
                "set {} has {} cases; exactly one is required",
                self.set_id, cases
            )));
        }
        Ok(())
    }
}

/// McNemar-style summary of a 1:1 matched study.
///
/// Rows are the case's exposure, columns the referent's:
/// `a` both exposed, `b` only the case, `c` only the referent, `d` neither.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairCounts {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl PairCounts {
    pub const fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn pairs(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    /// Exposed cases, `a + b`.
    pub fn exposed_cases(&self) -> u64 {
        self.a + self.b
    }

    pub fn discordant(&self) -> u64 {
        self.b + self.c
    }
}

impl std::ops::Add for PairCounts {
    type Output = PairCounts;

    fn add(self, rhs: PairCounts) -> PairCounts {
        PairCounts {
            a: self.a + rhs.a,
            b: self.b + rhs.b,
            c: self.c + rhs.c,
            d: self.d + rhs.d,
        }
    }
}

impl std::iter::Sum for PairCounts {
    fn sum<I: Iterator<Item = PairCounts>>(iter: I) -> Self {
        iter.fold(PairCounts::default(), |acc, pc| acc + pc)
    }
}

/// Conditional (matched-pair) odds ratio with a log-scale Wald interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OddsRatio {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Matched-pair odds ratio `b / c` with the 95% interval
/// `exp(ln(b/c) ± z·sqrt(1/b + 1/c))`.
pub fn odds_ratio(pc: &PairCounts) -> Result<OddsRatio> {
    if pc.b == 0 || pc.c == 0 {
        return Err(Error::domain(format!(
            "odds ratio undefined with b = {} and c = {}",
            pc.b, pc.c
        )));
    }
    let (b, c) = (pc.b as f64, pc.c as f64);
    let z: f64 = crate::special::normal_isf(0.025);
    let log_or = (b / c).ln();
    let half = z * (1.0 / b + 1.0 / c).sqrt();
    Ok(OddsRatio {
        estimate: b / c,
        lower: (log_or - half).exp(),
        upper: (log_or + half).exp(),
    })
}

/// A validated collection of matched sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Study {
    sets: Vec<MatchedSet>,
    subtype_labels: Vec<String>,
}

/// Borrowed subset of a study sharing one case subtype.
#[derive(Debug, Clone)]
pub struct SubtypeView<'a> {
    pub label: &'a str,
    pub sets: Vec<&'a MatchedSet>,
}

impl SubtypeView<'_> {
    pub fn pair_counts(&self) -> Result<PairCounts> {
        pair_counts_of(self.sets.iter().copied())
    }
}

impl Study {
    /// Validates the sets against the declared subtype labels.
    pub fn new(sets: Vec<MatchedSet>, subtype_labels: Vec<String>) -> Result<Self> {
        let mut seen = HashMap::with_capacity(sets.len());
        for set in &sets {
            set.validate()?;
            if seen.insert(set.set_id.as_str(), ()).is_some() {
                return Err(Error::validation(format!(
                    "duplicate set_id {}",
                    set.set_id
                )));
            }
            if let Some(label) = &set.subtype {
                if !subtype_labels.iter().any(|l| l == label) {
                    return Err(Error::validation(format!(
                        "set {}: unknown subtype label {label:?}",
                        set.set_id
                    )));
                }
            }
        }
        Ok(Self {
            sets,
            subtype_labels,
        })
    }

    /// Builds a 1:1 matched study whose pair table per subtype equals the
    /// given counts. Units are named `<set_id>c` (case) and `<set_id>r`.
    pub fn from_pair_counts(groups: &[(Option<String>, PairCounts)]) -> Result<Self> {
        let mut sets = Vec::new();
        let mut labels = Vec::new();
        let mut next_id = 1u64;
        for (label, pc) in groups {
            if let Some(l) = label {
                if !labels.contains(l) {
                    labels.push(l.clone());
                }
            }
            let cells = [
                (pc.a, true, true),
                (pc.b, true, false),
                (pc.c, false, true),
                (pc.d, false, false),
            ];
            for (count, case_exp, ref_exp) in cells {
                for _ in 0..count {
                    let id = next_id.to_string();
                    next_id += 1;
                    sets.push(MatchedSet {
                        unit_ids: vec![format!("{id}c"), format!("{id}r")],
                        set_id: id,
                        exposed: vec![case_exp, ref_exp],
                        case: vec![true, false],
                        subtype: label.clone(),
                    });
                }
            }
        }
        Study::new(sets, labels)
    }

    pub fn sets(&self) -> &[MatchedSet] {
        &self.sets
    }

    pub fn subtype_labels(&self) -> &[String] {
        &self.subtype_labels
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Total number of units, `N`.
    pub fn units(&self) -> usize {
        self.sets.iter().map(MatchedSet::size).sum()
    }

    pub fn exposed_cases(&self) -> usize {
        self.sets.iter().filter(|s| s.case_exposed()).count()
    }

    /// Pair table over all sets, or only those with the given subtype.
    pub fn summarize_pairs(&self, subtype: Option<&str>) -> Result<PairCounts> {
        match subtype {
            None => pair_counts_of(self.sets.iter()),
            Some(label) => pair_counts_of(
                self.sets
                    .iter()
                    .filter(|s| s.subtype.as_deref() == Some(label)),
            ),
        }
    }

    /// Splits the study by case subtype, in declared label order. Labels
    /// without sets yield empty views.
    pub fn partition_by_subtype(&self) -> Result<Vec<SubtypeView<'_>>> {
        let mut views: Vec<SubtypeView<'_>> = self
            .subtype_labels
            .iter()
            .map(|l| SubtypeView {
                label: l.as_str(),
                sets: Vec::new(),
            })
            .collect();
        for set in &self.sets {
            let label = set.subtype.as_deref().ok_or_else(|| {
                Error::validation(format!("set {} has no subtype label", set.set_id))
            })?;
            let idx = self
                .subtype_labels
                .iter()
                .position(|l| l == label)
                .expect("labels validated at construction");
            views[idx].sets.push(set);
        }
        Ok(views)
    }
}

fn pair_counts_of<'a>(sets: impl IntoIterator<Item = &'a MatchedSet>) -> Result<PairCounts> {
    let mut pc = PairCounts::default();
    for set in sets {
        if set.size() != 2 {
            return Err(Error::validation(format!(
                "pair summary requires 1:1 matching; set {} has {} units",
                set.set_id,
                set.size()
            )));
        }
        let case_exp = set.case_exposed();
        let ref_exp = set.exposed.iter().zip(&set.case).any(|(&z, &r)| z && !r);
        match (case_exp, ref_exp) {
            (true, true) => pc.a += 1,
            (true, false) => pc.b += 1,
            (false, true) => pc.c += 1,
            (false, false) => pc.d += 1,
        }
    }
    Ok(pc)
}

#[derive(Debug, Deserialize, Serialize)]
struct UnitRow {
    set_id: String,
    unit_id: String,
    exposed: String,
    case: String,
    #[serde(default)]
    subtype: String,
}

fn parse_flag(field: &str, value: &str, line: u64) -> Result<bool> {
    match value.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse {
            line,
            message: format!("{field} must be 0 or 1, got {other:?}"),
        }),
    }
}

const STUDY_HEADER: [&str; 5] = ["set_id", "unit_id", "exposed", "case", "subtype"];
const SUMMARY_HEADER: [&str; 5] = ["subtype", "a", "b", "c", "d"];

fn check_header(rdr: &mut csv::Reader<impl Read>, want: &[&str]) -> Result<()> {
    let header = rdr.headers()?.clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != want {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}, got {}", want.join(","), got.join(",")),
        });
    }
    Ok(())
}

/// Parses the long study CSV.
///
/// With `declared_labels` the subtype labels are checked against that list
/// (and keep its order); otherwise labels are collected in order of first
/// appearance on case rows.
pub fn parse_study<R: Read>(source: R, declared_labels: Option<&[String]>) -> Result<Study> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    check_header(&mut rdr, &STUDY_HEADER)?;

    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, MatchedSet> = HashMap::new();
    let mut labels: Vec<String> = declared_labels.map(<[String]>::to_vec).unwrap_or_default();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: UnitRow = record.deserialize(None).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if row.set_id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty set_id".into(),
            });
        }
        let exposed = parse_flag("exposed", &row.exposed, line)?;
        let case = parse_flag("case", &row.case, line)?;

        let set = by_id.entry(row.set_id.clone()).or_insert_with(|| {
            order.push(row.set_id.clone());
            MatchedSet {
                set_id: row.set_id.clone(),
                unit_ids: Vec::new(),
                exposed: Vec::new(),
                case: Vec::new(),
                subtype: None,
            }
        });
        set.unit_ids.push(row.unit_id);
        set.exposed.push(exposed);
        set.case.push(case);

        if case && !row.subtype.is_empty() {
            if !labels.contains(&row.subtype) {
                if declared_labels.is_some() {
                    return Err(Error::validation(format!(
                        "set {}: unknown subtype label {:?} (line {line})",
                        row.set_id, row.subtype
                    )));
                }
                labels.push(row.subtype.clone());
            }
            set.subtype = Some(row.subtype);
        }
    }

    let sets = order
        .into_iter()
        .map(|id| by_id.remove(&id).expect("set recorded"))
        .collect();
    Study::new(sets, labels)
}

/// Writes a study in the long CSV format accepted by [`parse_study`].
pub fn write_study<W: Write>(study: &Study, sink: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(sink);
    wtr.write_record(STUDY_HEADER)?;
    for set in study.sets() {
        for j in 0..set.size() {
            let subtype = if set.case[j] {
                set.subtype.as_deref().unwrap_or("")
            } else {
                ""
            };
            wtr.write_record([
                set.set_id.as_str(),
                set.unit_ids[j].as_str(),
                if set.exposed[j] { "1" } else { "0" },
                if set.case[j] { "1" } else { "0" },
                subtype,
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// One row of the summary CSV. An empty subtype marks an unstratified table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub subtype: Option<String>,
    pub counts: PairCounts,
}

/// Parses the summary CSV (`subtype,a,b,c,d`).
pub fn parse_summary<R: Read>(source: R) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    check_header(&mut rdr, &SUMMARY_HEADER)?;
    let mut rows: Vec<SummaryRow> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 5 {
            return Err(Error::Parse {
                line,
                message: format!("expected 5 fields, got {}", record.len()),
            });
        }
        let count = |i: usize| -> Result<u64> {
            record[i].parse::<u64>().map_err(|e| Error::Parse {
                line,
                message: format!("{}: {e}", SUMMARY_HEADER[i]),
            })
        };
        let subtype = (!record[0].is_empty()).then(|| record[0].to_string());
        if rows.iter().any(|r| r.subtype == subtype) {
            return Err(Error::validation(format!(
                "duplicate summary row for subtype {:?} (line {line})",
                subtype.as_deref().unwrap_or("")
            )));
        }
        rows.push(SummaryRow {
            subtype,
            counts: PairCounts::new(count(1)?, count(2)?, count(3)?, count(4)?),
        });
    }
    if rows.is_empty() {
        return Err(Error::validation("summary file has no rows"));
    }
    if rows.len() > 1 && rows.iter().any(|r| r.subtype.is_none()) {
        return Err(Error::validation(
            "an unlabeled summary row cannot be mixed with subtype rows",
        ));
    }
    Ok(rows)
}

/// Writes the summary CSV (`subtype,a,b,c,d`).
pub fn write_summary<W: Write>(rows: &[SummaryRow], sink: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(sink);
    wtr.write_record(SUMMARY_HEADER)?;
    for r in rows {
        let c = r.counts;
        wtr.write_record([
            r.subtype.clone().unwrap_or_default(),
            c.a.to_string(),
            c.b.to_string(),
            c.c.to_string(),
            c.d.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
