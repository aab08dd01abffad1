use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metrics::fmt_f64;
use crate::{Error, Result};

/// Ground-truth split membership of an evaluated example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Membership {
    Member,
    Nonmember,
}

impl Membership {
    pub fn is_member(self) -> bool {
        self == Membership::Member
    }
}

impl fmt::Display for Membership {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Membership::Member => "member",
            Membership::Nonmember => "nonmember",
        })
    }
}

impl FromStr for Membership {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "member" => Ok(Membership::Member),
            "nonmember" => Ok(Membership::Nonmember),
            other => Err(Error::Parse(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub example_id: u64,
    pub label: Membership,
    pub attack: String,
    pub score: f64,
}

/// One attack's scores, aligned by example id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreColumn {
    pub attack: String,
    pub ids: Vec<u64>,
    pub labels: Vec<Membership>,
    pub scores: Vec<f64>,
}

impl ScoreColumn {
    pub fn member_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|l| l.is_member()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub records: Vec<ScoreRecord>,
}

#[derive(Deserialize)]
struct CsvRow {
    example_id: u64,
    label: String,
    attack: String,
    score: String,
}

impl ScoreTable {
    /// Attack names in first-appearance order.
    pub fn attacks(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.attack.clone()))
            .map(|r| r.attack.clone())
            .collect()
    }

    /// Records of one attack, sorted by example id.
    pub fn column(&self, attack: &str) -> Result<ScoreColumn> {
        let mut rows: Vec<&ScoreRecord> =
            self.records.iter().filter(|r| r.attack == attack).collect();
        if rows.is_empty() {
            return Err(Error::invalid(format!("no scores for attack `{attack}`")));
        }
        rows.sort_by_key(|r| r.example_id);
        if rows.windows(2).any(|w| w[0].example_id == w[1].example_id) {
            return Err(Error::Misaligned(format!(
                "duplicate example id in `{attack}`"
            )));
        }
        Ok(ScoreColumn {
            attack: attack.to_string(),
            ids: rows.iter().map(|r| r.example_id).collect(),
            labels: rows.iter().map(|r| r.label).collect(),
            scores: rows.iter().map(|r| r.score).collect(),
        })
    }

    pub fn push_column(&mut self, col: &ScoreColumn) {
        for ((id, label), score) in col.ids.iter().zip(&col.labels).zip(&col.scores) {
            self.records.push(ScoreRecord {
                example_id: *id,
                label: *label,
                attack: col.attack.clone(),
                score: *score,
            });
        }
    }

    /// `example_id,label,attack,score`, LF line endings, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["example_id", "label", "attack", "score"])
            .expect("in-memory write");
        for r in &self.records {
            w.write_record([
                r.example_id.to_string(),
                r.label.to_string(),
                r.attack.clone(),
                fmt_f64(r.score),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse(e.to_string()))?
            .clone();
        if headers != vec!["example_id", "label", "attack", "score"] {
            return Err(Error::Parse(format!("unexpected score header {headers:?}")));
        }
        let mut records = Vec::new();
        for row in rdr.deserialize::<CsvRow>() {
            let row = row.map_err(|e| Error::Parse(e.to_string()))?;
            let score: f64 = row
                .score
                .parse()
                .map_err(|_| Error::Parse(format!("bad score `{}`", row.score)))?;
            records.push(ScoreRecord {
                example_id: row.example_id,
                label: row.label.parse()?,
                attack: row.attack,
                score,
            });
        }
        Ok(Self { records })
    }
}
