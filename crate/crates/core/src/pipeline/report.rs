//! Report layouts. All reports are UTF-8 with LF line endings and fixed
//! column orders; numbers are printed deterministically so reruns are
//! byte-identical.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::assessment::{CapriClass, DecoyAssessment};
use crate::clustering::Cluster;
use crate::error::{Error, Result};

pub const SCORE_HEADER: &str = "decoy_id\texternal_score\tcontactnet_score\tstatus";
pub const SKIPPED_HEADER: &str = "case_id\tdecoy_id\treason";
pub const ASSESS_HEADER: &str = "decoy_id,lrmsd,irmsd,capri_class,epitope_recall,epitope_precision,epitope_correct";
pub const FUNNEL_HEADER: &str = "decoy_id,score,irmsd,capri_class";
pub const CLUSTER_HEADER: &str = "cluster_rank\trepresentative_id\trepresentative_score\tmember_count\tmember_ids";
pub const MANIFEST_HEADER: &str = "case_id\tdecoy_id\tcapri_class\tlabel";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowStatus {
    /// Evaluated by the network.
    Scored,
    /// Evaluated, but no inter-protein contact was found; score 0.
    NoContact,
    /// Below the top-K cut; passed through in external-score order.
    Unscored,
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RowStatus::Scored => "scored",
            RowStatus::NoContact => "no_contact",
            RowStatus::Unscored => "unscored",
        }
    }

    pub fn has_score(self) -> bool {
        self != RowStatus::Unscored
    }
}

impl FromStr for RowStatus {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scored" => Ok(RowStatus::Scored),
            "no_contact" => Ok(RowStatus::NoContact),
            "unscored" => Ok(RowStatus::Unscored),
            _ => Err(Error::Data(format!("unknown row status {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub decoy_id: String,
    /// Raw value of the ranking column, as ingested.
    pub external_score: Option<f64>,
    pub contactnet_score: Option<f64>,
    pub status: RowStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skipped {
    pub case_id: String,
    pub decoy_id: String,
    pub reason: String,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn parse_opt(s: &str, line: usize) -> Result<Option<f64>> {
    if s == "NA" {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        line,
        message: format!("malformed number {s:?}"),
    })
}

/// Rows in final rank order. Values are printed in shortest round-trip form.
pub fn format_scores(rows: &[ScoreRow]) -> String {
    let mut out = format!("{SCORE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.decoy_id,
            opt(r.external_score),
            opt(r.contactnet_score),
            r.status.as_str()
        );
    }
    out
}

pub fn parse_scores(text: &str) -> Result<Vec<ScoreRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SCORE_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "not a score table".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let c: Vec<&str> = line.split('\t').collect();
        if c.len() != 4 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 4 columns, found {}", c.len()),
            });
        }
        rows.push(ScoreRow {
            decoy_id: c[0].to_string(),
            external_score: parse_opt(c[1], i + 1)?,
            contactnet_score: parse_opt(c[2], i + 1)?,
            status: c[3].parse()?,
        });
    }
    Ok(rows)
}

pub fn format_skipped(rows: &[Skipped]) -> String {
    let mut out = format!("{SKIPPED_HEADER}\n");
    for s in rows {
        let _ = writeln!(out, "{}\t{}\t{}", s.case_id, s.decoy_id, s.reason.replace(['\t', '\n'], " "));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssessRow {
    pub decoy_id: String,
    pub assessment: DecoyAssessment,
}

impl AssessRow {
    pub fn epitope_correct(&self) -> bool {
        self.assessment.epitope_recall >= 0.5 && self.assessment.epitope_precision >= 0.5
    }
}

pub fn format_assessment(rows: &[AssessRow]) -> String {
    let mut out = format!("{ASSESS_HEADER}\n");
    for r in rows {
        let a = &r.assessment;
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{},{:.4},{:.4},{}",
            r.decoy_id,
            a.lrmsd,
            a.irmsd,
            a.capri,
            a.epitope_recall,
            a.epitope_precision,
            r.epitope_correct()
        );
    }
    out
}

/// Decoy id, irmsd and class of each assessed decoy (rounded as written).
pub fn parse_assessment(text: &str) -> Result<Vec<(String, f64, CapriClass)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == ASSESS_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "not an assessment table".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let c: Vec<&str> = line.split(',').collect();
        let err = |m: String| Error::Parse { line: i + 1, message: m };
        if c.len() != 7 {
            return Err(err(format!("expected 7 columns, found {}", c.len())));
        }
        let irmsd = c[2].parse::<f64>().map_err(|_| err(format!("malformed irmsd {:?}", c[2])))?;
        let class = c[3].parse::<CapriClass>().map_err(|_| err(format!("unknown class {:?}", c[3])))?;
        rows.push((c[0].to_string(), irmsd, class));
    }
    Ok(rows)
}

pub struct FunnelRow<'a> {
    pub decoy_id: &'a str,
    pub score: Option<f64>,
    pub irmsd: f64,
    pub capri: CapriClass,
}

pub fn format_funnel(rows: &[FunnelRow<'_>]) -> String {
    let mut out = format!("{FUNNEL_HEADER}\n");
    for r in rows {
        let score = r.score.map_or_else(String::new, |s| s.to_string());
        let _ = writeln!(out, "{},{},{:.4},{}", r.decoy_id, score, r.irmsd, r.capri);
    }
    out
}

/// One line per cluster; member ids comma-separated in rank order.
pub fn format_clusters<S: AsRef<str>>(ids: &[S], clusters: &[Cluster]) -> String {
    let mut out = format!("{CLUSTER_HEADER}\n");
    for (k, c) in clusters.iter().enumerate() {
        let members: Vec<&str> = c.members.iter().map(|&m| ids[m].as_ref()).collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            k + 1,
            ids[c.representative].as_ref(),
            c.representative_score,
            c.members.len(),
            members.join(",")
        );
    }
    out
}

/// Per scoring column: success rates keyed `top{N}` and per-case hit counts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ColumnSummary {
    pub cases: usize,
    #[serde(flatten)]
    pub success: std::collections::BTreeMap<String, f64>,
    pub hit_rates: std::collections::BTreeMap<String, std::collections::BTreeMap<String, usize>>,
}

pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}
