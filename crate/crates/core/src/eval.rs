//! Average precision, MAP across classes and learning-curve tables.
//!
//! AP is the non-interpolated retrieval variant normalized by the total
//! number of relevant items, so relevant items missing from a ranking count
//! as misses.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};

/// Ids ordered best first, with non-increasing scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    ids: Vec<String>,
    scores: Vec<f64>,
}

impl RankedList {
    pub fn new(ids: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        if ids.len() != scores.len() {
            return Err(Error::Eval(format!(
                "{} ids but {} scores",
                ids.len(),
                scores.len()
            )));
        }
        if scores.windows(2).any(|w| w[1] > w[0]) || scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Eval("ranking scores must be non-increasing".into()));
        }
        let distinct: HashSet<&String> = ids.iter().collect();
        if distinct.len() != ids.len() {
            return Err(Error::Eval("ranking contains a duplicate id".into()));
        }
        Ok(RankedList { ids, scores })
    }

    /// Sorts by score descending, ties by id ascending.
    pub fn from_scores(mut scored: Vec<(String, f64)>) -> Result<Self> {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let (ids, scores) = scored.into_iter().unzip();
        RankedList::new(ids, scores)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `rank,id,probability` rows, rank starting at 1.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let fail = |e: csv::Error| Error::format("eval", e);
        writer
            .write_record(["rank", "id", "probability"])
            .map_err(fail)?;
        for (rank, (id, score)) in self.ids.iter().zip(&self.scores).enumerate() {
            writer
                .write_record([&(rank + 1).to_string(), id, &score.to_string()])
                .map_err(fail)?;
        }
        writer.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn read_csv(input: impl std::io::Read) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let mut ids = Vec::new();
        let mut scores = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| Error::format("eval", e))?;
            let (Some(id), Some(score)) = (row.get(1), row.get(2)) else {
                return Err(Error::Eval("ranking row needs rank,id,probability".into()));
            };
            ids.push(id.to_string());
            scores.push(score.parse::<f64>().map_err(|e| Error::format("eval", e))?);
        }
        RankedList::new(ids, scores)
    }
}

/// Average precision of `ranked` ids against the `relevant` set.
pub fn average_precision<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<String>) -> f64 {
    if relevant.is_empty() {
        log::warn!("eval: empty relevant set, AP defined as 0");
        return 0.0;
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (k, id) in ranked.iter().enumerate() {
        if relevant.contains(id.as_ref()) {
            hits += 1;
            total += hits as f64 / (k + 1) as f64;
        }
    }
    total / relevant.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: ClassLabel,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub train_size: usize,
    /// In class-index order.
    pub per_class_ap: Vec<ClassAp>,
    pub map: f64,
}

impl MapReport {
    pub fn classes(&self) -> Vec<&ClassLabel> {
        self.per_class_ap.iter().map(|c| &c.class).collect()
    }
}

/// Per-class AP with relevance from `truth`, and their unweighted mean.
pub fn map_over_classes(
    rankings: &[(ClassLabel, RankedList)],
    truth: &HashMap<String, ClassLabel>,
    train_size: usize,
) -> Result<MapReport> {
    let universe: Option<HashSet<&String>> = rankings.first().map(|(_, r)| r.ids.iter().collect());
    let mut per_class_ap = Vec::with_capacity(rankings.len());
    for (class, ranking) in rankings {
        let ids: HashSet<&String> = ranking.ids.iter().collect();
        if Some(&ids) != universe.as_ref() {
            return Err(Error::Eval(format!(
                "ranking for {class} covers a different set of test ids"
            )));
        }
        if let Some(missing) = ranking.ids.iter().find(|id| !truth.contains_key(*id)) {
            return Err(Error::Eval(format!(
                "test id {missing:?} has no ground-truth label"
            )));
        }
        let relevant: HashSet<String> = ranking
            .ids
            .iter()
            .filter(|id| truth.get(*id) == Some(class))
            .cloned()
            .collect();
        per_class_ap.push(ClassAp {
            class: class.clone(),
            ap: average_precision(&ranking.ids, &relevant),
        });
    }
    let map = if per_class_ap.is_empty() {
        0.0
    } else {
        per_class_ap.iter().map(|c| c.ap).sum::<f64>() / per_class_ap.len() as f64
    };
    Ok(MapReport {
        train_size,
        per_class_ap,
        map,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub train_size: usize,
    pub map: f64,
    pub ap: Vec<f64>,
}

/// MAP and per-class AP against training size.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub classes: Vec<ClassLabel>,
    pub rows: Vec<CurveRow>,
}

impl CurveTable {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let fail = |e: csv::Error| Error::format("eval", e);
        let mut header = vec!["train_size".to_string(), "map".to_string()];
        header.extend(self.classes.iter().map(|c| format!("ap_{c}")));
        writer.write_record(&header).map_err(fail)?;
        for row in &self.rows {
            let mut fields = vec![row.train_size.to_string(), row.map.to_string()];
            fields.extend(row.ap.iter().map(f64::to_string));
            writer.write_record(&fields).map_err(fail)?;
        }
        writer.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Builds the curve from reports sorted by strictly increasing size.
pub fn learning_curve(reports: &[MapReport]) -> Result<CurveTable> {
    let Some(first) = reports.first() else {
        return Err(Error::Eval(
            "learning curve needs at least one report".into(),
        ));
    };
    for w in reports.windows(2) {
        if w[1].train_size == w[0].train_size {
            return Err(Error::Eval(format!(
                "duplicate train size {}",
                w[0].train_size
            )));
        }
        if w[1].train_size < w[0].train_size {
            return Err(Error::Eval("reports must be sorted by train size".into()));
        }
    }
    let classes: Vec<ClassLabel> = first.per_class_ap.iter().map(|c| c.class.clone()).collect();
    let rows = reports
        .iter()
        .map(|r| {
            if r.per_class_ap.iter().map(|c| &c.class).ne(classes.iter()) {
                return Err(Error::Eval("reports disagree on the class list".into()));
            }
            Ok(CurveRow {
                train_size: r.train_size,
                map: r.map,
                ap: r.per_class_ap.iter().map(|c| c.ap).collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(CurveTable { classes, rows })
}
