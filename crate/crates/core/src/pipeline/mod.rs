//! The rescoring protocol as commands over a [`PipelineConfig`]: featurize,
//! score, assess, funnel, cluster, train and grad-check.
//!
//! Commands read the configured cases plus the reports of earlier commands
//! from the output directory, and write their own reports there:
//!
//! ```text
//! features/<case>[.<variant>].{receptor,ligand}.tsv
//! scores/<case>.tsv            decoy_id, external_score, contactnet_score, status
//! scores/skipped.tsv           case_id, decoy_id, reason
//! assessment/<case>.csv        decoy_id, lrmsd, irmsd, capri_class, epitope_recall, epitope_precision, epitope_correct
//! assessment/summary.json      per scoring column: top{N} success rates and per-case hit counts
//! funnel/<case>.<column>.csv   decoy_id, score, irmsd, capri_class
//! clusters/<case>.tsv          cluster_rank, representative_id, representative_score, member_count, member_ids
//! clusters/summary.json        success rates before and after clustering
//! training/history.csv, training/manifest.tsv, training/checkpoints/
//! ```

mod config;
mod data;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{CaseSpec, DecoySource, MicroCorpusSpec, PipelineConfig, Split, TrainingSpec};
pub use data::{load_cases, read_complex, read_score_table, Decoy, Entry, LoadedCase, Pose};
pub use report::{
    format_assessment, format_clusters, format_funnel, format_scores, format_skipped, parse_assessment, parse_scores,
    AssessRow, ColumnSummary, FunnelRow, RowStatus, ScoreRow, Skipped, ASSESS_HEADER, CLUSTER_HEADER, FUNNEL_HEADER,
    MANIFEST_HEADER, SCORE_HEADER, SKIPPED_HEADER,
};

use crate::assessment::{hit_rate, ranking, success_rate, Assessor, CapriClass, NativeInterface};
use crate::clustering::{greedy_cluster, Cluster, DecoyView, InterfaceRmsd};
use crate::error::{Error, Result};
use crate::geometry::Coord;
use crate::network::{load_weights, save_weights, ComponentInput, HyperParams, ModelWeights, Scorer, Side};
use crate::par::{self, Exec};
use crate::structure::write_feature_sidecar;
use crate::tensor::{grad_check, GradCheckConfig, GradCheckReport, Precision, Scalar};
use crate::trainer::{
    assemble_case_decoys, history_csv, LabeledDecoy, TrainConfig, TrainState, Trainer, TrainingCase, TrainingSet,
};

/// Process exit code for an error: 2 for configuration errors, 3 otherwise.
/// Verification failures (exit 4) are reported as values, not errors.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 3,
    }
}

/// Name of the network's scoring column in summaries.
pub const CONTACTNET: &str = "contactnet";

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn exec_for(cfg: &PipelineConfig) -> Exec {
    if cfg.workers == Some(1) {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

pub fn scores_path(cfg: &PipelineConfig, case_id: &str) -> PathBuf {
    cfg.output_dir.join("scores").join(format!("{case_id}.tsv"))
}

pub fn assessment_path(cfg: &PipelineConfig, case_id: &str) -> PathBuf {
    cfg.output_dir.join("assessment").join(format!("{case_id}.csv"))
}

pub fn clusters_path(cfg: &PipelineConfig, case_id: &str) -> PathBuf {
    cfg.output_dir.join("clusters").join(format!("{case_id}.tsv"))
}

fn no_cases() -> Error {
    Error::Data("empty report: no cases configured".into())
}

/// Writes the residue feature sidecar of every configured component.
pub fn cmd_featurize(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let cases = load_cases(&cfg.cases)?;
    let mut written = Vec::new();
    for case in &cases {
        for e in &case.entries {
            let stem = match &e.spec.variant {
                Some(v) => format!("{}.{v}", case.case_id),
                None => case.case_id.clone(),
            };
            for (side, protein, input) in [
                ("receptor", &e.receptor, &e.receptor_input),
                ("ligand", &e.ligand, &e.ligand_input),
            ] {
                let path = cfg.output_dir.join("features").join(format!("{stem}.{side}.tsv"));
                write(&path, &write_feature_sidecar(protein, &input.features))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// The external column that drives the top-K cut, if the case has any.
pub fn rank_column(case: &LoadedCase, cfg: &PipelineConfig) -> Result<Option<String>> {
    match &cfg.rank_by {
        Some(c) if case.external.contains_key(c) => Ok(Some(c.clone())),
        Some(c) => Err(Error::Config(format!("case {}: no external score column {c:?}", case.case_id))),
        None => Ok(case.external.keys().next().cloned()),
    }
}

/// External scores of `column` oriented so that higher is better.
fn oriented(case: &LoadedCase, cfg: &PipelineConfig, column: &str) -> BTreeMap<String, f64> {
    let sign = if cfg.inverted(column) { -1.0 } else { 1.0 };
    case.external
        .get(column)
        .map(|t| t.iter().map(|(k, &v)| (k.clone(), sign * v)).collect())
        .unwrap_or_default()
}

/// Decoy indices ranked by an oriented column (best first, ties by id),
/// and the indices without a value in it, in load order.
fn rank_by_column(case: &LoadedCase, values: &BTreeMap<String, f64>) -> (Vec<usize>, Vec<usize>) {
    let (with, without): (Vec<usize>, Vec<usize>) = (0..case.decoys.len()).partition(|&k| values.contains_key(&case.decoys[k].id));
    let ids: Vec<&str> = with.iter().map(|&k| case.decoys[k].id.as_str()).collect();
    let scores: Vec<f64> = with.iter().map(|&k| values[&case.decoys[k].id]).collect();
    (ranking(&ids, &scores).into_iter().map(|i| with[i]).collect(), without)
}

/// Scores one case: the top `top_k_rescore` decoys by the ranking column go
/// through the network, the rest pass through unscored. Decoys without a
/// ranking score, or whose model cannot be read, are reported as skipped.
pub fn score_case<T: Scalar>(
    case: &LoadedCase,
    scorer: &Scorer<T>,
    cfg: &PipelineConfig,
    exec: Exec,
) -> Result<(Vec<ScoreRow>, Vec<Skipped>)> {
    let column = rank_column(case, cfg)?;
    let raw = column.as_ref().and_then(|c| case.external.get(c));
    let (order, missing) = match &column {
        Some(c) => rank_by_column(case, &oriented(case, cfg, c)),
        None => {
            let mut all: Vec<usize> = (0..case.decoys.len()).collect();
            all.sort_by(|&a, &b| case.decoys[a].id.cmp(&case.decoys[b].id));
            (all, Vec::new())
        }
    };
    let mut skipped: Vec<Skipped> = missing
        .iter()
        .map(|&k| Skipped {
            case_id: case.case_id.clone(),
            decoy_id: case.decoys[k].id.clone(),
            reason: format!("no {} score", column.as_deref().unwrap_or("external")),
        })
        .collect();
    let cut = order.len().min(cfg.top_k_rescore);
    let (top, rest) = order.split_at(cut);

    let encoded = case
        .entries
        .iter()
        .map(|e| Ok((scorer.encode(&e.receptor_input, Side::Receptor)?, scorer.encode(&e.ligand_input, Side::Ligand)?)))
        .collect::<Result<Vec<_>>>()?;
    let results = par::map(exec, top, |&k| {
        let d = &case.decoys[k];
        match &d.pose {
            Pose::Transform(t) => {
                let (r, l) = &encoded[d.entry];
                scorer.score_encoded(r, &l.transformed(t))
            }
            Pose::File(_) => {
                let e = case.entry(d);
                let (r, l) = case.model_ca(d)?;
                let r = ComponentInput::new(r, e.receptor_input.features.clone())?;
                let l = ComponentInput::new(l, e.ligand_input.features.clone())?;
                scorer.score(&r, &l)
            }
        }
    });

    let external = |k: usize| raw.and_then(|t| t.get(&case.decoys[k].id).copied());
    let oriented_ext = column.as_ref().map(|c| oriented(case, cfg, c)).unwrap_or_default();
    let mut scored: Vec<(usize, f64, bool)> = Vec::with_capacity(top.len());
    for (&k, r) in top.iter().zip(results) {
        match r {
            Ok(s) => scored.push((k, s.score, s.no_contact())),
            Err(e) => skipped.push(Skipped {
                case_id: case.case_id.clone(),
                decoy_id: case.decoys[k].id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    let ext_key = |k: usize| oriented_ext.get(&case.decoys[k].id).copied().unwrap_or(f64::NEG_INFINITY);
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| ext_key(b.0).total_cmp(&ext_key(a.0)))
            .then_with(|| case.decoys[a.0].id.cmp(&case.decoys[b.0].id))
    });
    let mut rows: Vec<ScoreRow> = scored
        .into_iter()
        .map(|(k, s, none)| ScoreRow {
            decoy_id: case.decoys[k].id.clone(),
            external_score: external(k),
            contactnet_score: Some(s),
            status: if none { RowStatus::NoContact } else { RowStatus::Scored },
        })
        .collect();
    rows.extend(rest.iter().map(|&k| ScoreRow {
        decoy_id: case.decoys[k].id.clone(),
        external_score: external(k),
        contactnet_score: None,
        status: RowStatus::Unscored,
    }));
    Ok((rows, skipped))
}

#[derive(Clone, Debug, Default)]
pub struct ScoreSummary {
    pub scored: usize,
    pub unscored: usize,
    pub skipped: usize,
    pub written: Vec<PathBuf>,
}

pub fn cmd_score(cfg: &PipelineConfig, weights: &ModelWeights) -> Result<ScoreSummary> {
    let cases = load_cases(&cfg.cases)?;
    match cfg.precision {
        Precision::F32 => score_cases(cfg, &cases, &Scorer::<f32>::new(weights)),
        Precision::F64 => score_cases(cfg, &cases, &Scorer::<f64>::new(weights)),
    }
}

fn score_cases<T: Scalar>(cfg: &PipelineConfig, cases: &[LoadedCase], scorer: &Scorer<T>) -> Result<ScoreSummary> {
    let exec = exec_for(cfg);
    let mut summary = ScoreSummary::default();
    let mut skipped = Vec::new();
    for case in cases {
        let (rows, skip) = score_case(case, scorer, cfg, exec)?;
        summary.scored += rows.iter().filter(|r| r.status.has_score()).count();
        summary.unscored += rows.iter().filter(|r| !r.status.has_score()).count();
        let path = scores_path(cfg, &case.case_id);
        write(&path, &format_scores(&rows))?;
        summary.written.push(path);
        skipped.extend(skip);
    }
    summary.skipped = skipped.len();
    let path = cfg.output_dir.join("scores").join("skipped.tsv");
    write(&path, &format_skipped(&skipped))?;
    summary.written.push(path);
    Ok(summary)
}

/// Assesses every decoy of a case against its native.
pub fn assess_case(case: &LoadedCase, exec: Exec) -> Result<Vec<AssessRow>> {
    let (nr, nl) = case.native()?;
    let assessor = Assessor::new(nr, nl).map_err(|e| Error::Data(format!("case {}: native: {e}", case.case_id)))?;
    let rows = par::map(exec, &case.decoys, |d| {
        let (r, l) = case.model(d)?;
        if r.len() != nr.len() || l.len() != nl.len() {
            return Err(Error::Data(format!(
                "case {}, decoy {}: {}+{} residues, native has {}+{}",
                case.case_id,
                d.id,
                r.len(),
                l.len(),
                nr.len(),
                nl.len()
            )));
        }
        let a = assessor
            .assess(&r, &l)
            .map_err(|e| Error::Data(format!("case {}, decoy {}: {e}", case.case_id, d.id)))?;
        Ok(AssessRow {
            decoy_id: d.id.clone(),
            assessment: a,
        })
    });
    rows.into_iter().collect()
}

/// Success rates and hit counts for one scoring column. `ranked` holds, per
/// case, the CAPRI classes of its decoys from best to worst score.
pub fn summarize_column(ranked: &BTreeMap<String, Vec<CapriClass>>, ns: &[usize]) -> Result<ColumnSummary> {
    let lists: Vec<&Vec<CapriClass>> = ranked.values().collect();
    let mut success = BTreeMap::new();
    for &n in ns {
        success.insert(format!("top{n}"), success_rate(&lists, n)?);
    }
    let hit_rates = ranked
        .iter()
        .map(|(case, classes)| (case.clone(), ns.iter().map(|&n| (format!("top{n}"), hit_rate(classes, n))).collect()))
        .collect();
    Ok(ColumnSummary {
        cases: ranked.len(),
        success,
        hit_rates,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssessSummary {
    pub cases: Vec<String>,
    pub report_ns: Vec<usize>,
    pub columns: BTreeMap<String, ColumnSummary>,
}

/// Ranked classes of a case by the network, if it has been scored: the
/// score table's order, skipped decoys left out.
fn contactnet_ranking(cfg: &PipelineConfig, case_id: &str, classes: &BTreeMap<String, CapriClass>) -> Result<Option<Vec<CapriClass>>> {
    let path = scores_path(cfg, case_id);
    if !path.is_file() {
        return Ok(None);
    }
    let rows = parse_scores(&read(&path)?).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    rows.iter()
        .map(|r| {
            classes
                .get(&r.decoy_id)
                .copied()
                .ok_or_else(|| Error::Data(format!("{}: decoy {} was not assessed", path.display(), r.decoy_id)))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn cmd_assess(cfg: &PipelineConfig) -> Result<AssessSummary> {
    let cases = load_cases(&cfg.cases)?;
    if cases.is_empty() {
        return Err(no_cases());
    }
    let exec = exec_for(cfg);
    let mut columns: BTreeMap<String, BTreeMap<String, Vec<CapriClass>>> = BTreeMap::new();
    let mut unscored = Vec::new();
    for case in &cases {
        let rows = assess_case(case, exec)?;
        write(&assessment_path(cfg, &case.case_id), &format_assessment(&rows))?;
        let classes: BTreeMap<String, CapriClass> = rows.iter().map(|r| (r.decoy_id.clone(), r.assessment.capri)).collect();
        match contactnet_ranking(cfg, &case.case_id, &classes)? {
            Some(ranked) => {
                columns.entry(CONTACTNET.into()).or_default().insert(case.case_id.clone(), ranked);
            }
            None => unscored.push(case.case_id.clone()),
        }
        for col in case.columns() {
            let (order, _) = rank_by_column(case, &oriented(case, cfg, &col));
            let ranked = order.iter().map(|&k| classes[&case.decoys[k].id]).collect();
            columns.entry(col).or_default().insert(case.case_id.clone(), ranked);
        }
    }
    if !unscored.is_empty() {
        log::warn!("no score table for {}; the {CONTACTNET} column covers the scored cases only", unscored.join(", "));
    }
    let summary = AssessSummary {
        cases: cases.iter().map(|c| c.case_id.clone()).collect(),
        report_ns: cfg.report_ns.clone(),
        columns: columns
            .iter()
            .map(|(c, r)| Ok((c.clone(), summarize_column(r, &cfg.report_ns)?)))
            .collect::<Result<_>>()?,
    };
    write(&cfg.output_dir.join("assessment").join("summary.json"), &report::to_json(&summary)?)?;
    Ok(summary)
}

fn read_assessment(cfg: &PipelineConfig, case_id: &str) -> Result<BTreeMap<String, (f64, CapriClass)>> {
    let path = assessment_path(cfg, case_id);
    if !path.is_file() {
        return Err(Error::Data(format!("case {case_id}: no assessment at {}; run assess first", path.display())));
    }
    let rows = parse_assessment(&read(&path)?).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(rows.into_iter().map(|(id, i, c)| (id, (i, c))).collect())
}

/// Funnel tables: every decoy of a case with its score under one column,
/// in that column's rank order; decoys without a score follow, unscored.
pub fn cmd_funnel(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let cases = load_cases(&cfg.cases)?;
    let mut written = Vec::new();
    for case in &cases {
        let assessed = read_assessment(cfg, &case.case_id)?;
        let lookup = |id: &str| {
            assessed
                .get(id)
                .copied()
                .ok_or_else(|| Error::Data(format!("case {}: decoy {id} was not assessed", case.case_id)))
        };
        let mut tables: Vec<(String, Vec<(&str, Option<f64>)>)> = Vec::new();
        let sp = scores_path(cfg, &case.case_id);
        if sp.is_file() {
            let rows = parse_scores(&read(&sp)?)?;
            let mut listed: Vec<(&str, Option<f64>)> = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for r in &rows {
                let d = case
                    .decoys
                    .iter()
                    .find(|d| d.id == r.decoy_id)
                    .ok_or_else(|| Error::Data(format!("{}: unknown decoy {}", sp.display(), r.decoy_id)))?;
                seen.insert(d.id.as_str());
                listed.push((d.id.as_str(), r.contactnet_score));
            }
            listed.extend(case.decoys.iter().filter(|d| !seen.contains(d.id.as_str())).map(|d| (d.id.as_str(), None)));
            tables.push((CONTACTNET.into(), listed));
        }
        for col in case.columns() {
            let raw = &case.external[&col];
            let (order, without) = rank_by_column(case, &oriented(case, cfg, &col));
            let listed = order
                .iter()
                .chain(&without)
                .map(|&k| (case.decoys[k].id.as_str(), raw.get(&case.decoys[k].id).copied()))
                .collect();
            tables.push((col, listed));
        }
        for (col, listed) in tables {
            let rows = listed
                .into_iter()
                .map(|(id, score)| {
                    let (irmsd, capri) = lookup(id)?;
                    Ok(FunnelRow {
                        decoy_id: id,
                        score,
                        irmsd,
                        capri,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let path = cfg.output_dir.join("funnel").join(format!("{}.{col}.csv", case.case_id));
            write(&path, &format_funnel(&rows))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Clusters of one case's scored decoys, in score-table order.
pub struct CaseClusters {
    pub ids: Vec<String>,
    pub clusters: Vec<Cluster>,
    /// Unscored pass-through ids, after the clustered pool in rank order.
    pub tail: Vec<String>,
}

pub fn cluster_case(case: &LoadedCase, rows: &[ScoreRow], threshold: f64, exec: Exec) -> Result<CaseClusters> {
    let index: BTreeMap<&str, usize> = case.decoys.iter().enumerate().map(|(k, d)| (d.id.as_str(), k)).collect();
    let pool: Vec<&ScoreRow> = rows.iter().filter(|r| r.status.has_score()).collect();
    let coords = par::map(exec, &pool, |r| {
        let k = *index
            .get(r.decoy_id.as_str())
            .ok_or_else(|| Error::Data(format!("case {}: unknown decoy {}", case.case_id, r.decoy_id)))?;
        case.model_ca(&case.decoys[k])
    })
    .into_iter()
    .collect::<Result<Vec<(Vec<Coord>, Vec<Coord>)>>>()?;
    let views = coords
        .iter()
        .map(|(r, l)| DecoyView { receptor: r, ligand: l })
        .collect();
    let metric = InterfaceRmsd::new(views)
        .map_err(|e| Error::Data(format!("case {}: {e}", case.case_id)))?
        .with_exec(exec);
    let ids: Vec<String> = pool.iter().map(|r| r.decoy_id.clone()).collect();
    // Rank by table position so ties keep the score table's tie-breaks.
    let position: Vec<f64> = (0..pool.len()).map(|k| -(k as f64)).collect();
    let mut clusters = greedy_cluster(&ids, &position, &metric, threshold)?;
    for c in &mut clusters {
        c.representative_score = pool[c.representative].contactnet_score.unwrap_or(0.0);
    }
    let tail = rows.iter().filter(|r| !r.status.has_score()).map(|r| r.decoy_id.clone()).collect();
    Ok(CaseClusters { ids, clusters, tail })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterSummary {
    pub cases: Vec<String>,
    pub report_ns: Vec<usize>,
    pub threshold: f64,
    pub clusters: BTreeMap<String, usize>,
    /// Success of the network's ranking before and after clustering, when
    /// every case has been assessed.
    pub before: Option<ColumnSummary>,
    pub after: Option<ColumnSummary>,
}

pub fn cmd_cluster(cfg: &PipelineConfig) -> Result<ClusterSummary> {
    let cases = load_cases(&cfg.cases)?;
    if cases.is_empty() {
        return Err(no_cases());
    }
    let exec = exec_for(cfg);
    let mut counts = BTreeMap::new();
    let mut before = BTreeMap::new();
    let mut after = BTreeMap::new();
    let mut assessed_all = true;
    for case in &cases {
        let sp = scores_path(cfg, &case.case_id);
        if !sp.is_file() {
            return Err(Error::Data(format!("case {}: no score table at {}; run score first", case.case_id, sp.display())));
        }
        let rows = parse_scores(&read(&sp)?)?;
        let cc = cluster_case(case, &rows, cfg.cluster_threshold, exec)?;
        write(&clusters_path(cfg, &case.case_id), &format_clusters(&cc.ids, &cc.clusters))?;
        counts.insert(case.case_id.clone(), cc.clusters.len());
        if !assessment_path(cfg, &case.case_id).is_file() {
            assessed_all = false;
            continue;
        }
        let assessed = read_assessment(cfg, &case.case_id)?;
        let class = |id: &str| {
            assessed
                .get(id)
                .map(|a| a.1)
                .ok_or_else(|| Error::Data(format!("case {}: decoy {id} was not assessed", case.case_id)))
        };
        let ranked_before = rows.iter().map(|r| class(&r.decoy_id)).collect::<Result<Vec<_>>>()?;
        let ranked_after = cc
            .clusters
            .iter()
            .map(|c| cc.ids[c.representative].as_str())
            .chain(cc.tail.iter().map(String::as_str))
            .map(class)
            .collect::<Result<Vec<_>>>()?;
        before.insert(case.case_id.clone(), ranked_before);
        after.insert(case.case_id.clone(), ranked_after);
    }
    let (before, after) = if assessed_all {
        (
            Some(summarize_column(&before, &cfg.report_ns)?),
            Some(summarize_column(&after, &cfg.report_ns)?),
        )
    } else {
        (None, None)
    };
    let summary = ClusterSummary {
        cases: cases.iter().map(|c| c.case_id.clone()).collect(),
        report_ns: cfg.report_ns.clone(),
        threshold: cfg.cluster_threshold,
        clusters: counts,
        before,
        after,
    };
    write(&cfg.output_dir.join("clusters").join("summary.json"), &report::to_json(&summary)?)?;
    Ok(summary)
}

/// A training case per configured entry, labelled against the native, and
/// restricted per case to the top `top_k` by the ranking column plus up to
/// `max_positives` further positives.
pub fn build_training_set(cases: &[LoadedCase], cfg: &PipelineConfig) -> Result<TrainingSet> {
    let spec = &cfg.training;
    let mut tcases = Vec::new();
    let mut decoys = Vec::new();
    for case in cases {
        let (nr, nl) = case.native()?;
        let (nr, nl) = (nr.ca_coords(), nl.ca_coords());
        let interface = NativeInterface::new(&nr, &nl).map_err(|e| Error::Data(format!("case {}: native: {e}", case.case_id)))?;
        let base = tcases.len();
        for e in &case.entries {
            tcases.push(TrainingCase {
                case_id: match &e.spec.variant {
                    Some(v) => format!("{}/{v}", case.case_id),
                    None => case.case_id.clone(),
                },
                receptor: e.receptor_input.clone(),
                ligand: e.ligand_input.clone(),
            });
        }
        let labeled = case
            .decoys
            .iter()
            .map(|d| {
                let t = case.ligand_transform(d)?;
                LabeledDecoy::assess(base + d.entry, &tcases[base + d.entry], d.id.clone(), t, &nr, &nl, &interface)
                    .map_err(|err| Error::Data(format!("case {}, decoy {}: {err}", case.case_id, d.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let keep = match rank_column(case, cfg)? {
            Some(col) => {
                let values = oriented(case, cfg, &col);
                let ids: Vec<&str> = case.decoys.iter().map(|d| d.id.as_str()).collect();
                let scores: Vec<f64> = ids.iter().map(|id| values.get(*id).copied().unwrap_or(f64::NEG_INFINITY)).collect();
                let positive: Vec<bool> = labeled.iter().map(|d| d.positive()).collect();
                assemble_case_decoys(&ids, &scores, &positive, spec.top_k, spec.max_positives)?
            }
            None => (0..labeled.len()).collect(),
        };
        let mut keep = keep;
        keep.sort_unstable();
        let mut labeled: Vec<Option<LabeledDecoy>> = labeled.into_iter().map(Some).collect();
        decoys.extend(keep.into_iter().filter_map(|k| labeled[k].take()));
    }
    TrainingSet::new(tcases, decoys)
}

/// Top-10 success rate of `weights` over validation cases.
struct Validation {
    cases: Vec<LoadedCase>,
    /// Per case: decoys fed to the network, and the class of every decoy.
    selected: Vec<Vec<usize>>,
    classes: Vec<Vec<CapriClass>>,
}

impl Validation {
    fn new(cases: Vec<LoadedCase>, cfg: &PipelineConfig) -> Result<Self> {
        let mut selected = Vec::new();
        let mut classes = Vec::new();
        for case in &cases {
            let (nr, nl) = case.native()?;
            let assessor_rec = nr.ca_coords();
            let assessor_lig = nl.ca_coords();
            let interface = NativeInterface::new(&assessor_rec, &assessor_lig)?;
            let c = case
                .decoys
                .iter()
                .map(|d| {
                    let (r, l) = case.model_ca(d)?;
                    let lr = crate::assessment::ligand_rmsd(&r, &l, &assessor_rec, &assessor_lig)?;
                    let ir = interface.rmsd(&r, &l, &assessor_rec, &assessor_lig)?;
                    Ok(crate::assessment::capri_classify(lr, ir))
                })
                .collect::<Result<Vec<_>>>()?;
            let order = match rank_column(case, cfg)? {
                Some(col) => rank_by_column(case, &oriented(case, cfg, &col)).0,
                None => (0..case.decoys.len()).collect(),
            };
            selected.push(order.into_iter().take(cfg.top_k_rescore).collect());
            classes.push(c);
        }
        Ok(Self { cases, selected, classes })
    }

    fn top10(&self, weights: &ModelWeights) -> Result<f64> {
        let scorer = Scorer::<f32>::new(weights);
        let mut ranked = Vec::new();
        for ((case, sel), classes) in self.cases.iter().zip(&self.selected).zip(&self.classes) {
            let enc = case
                .entries
                .iter()
                .map(|e| Ok((scorer.encode(&e.receptor_input, Side::Receptor)?, scorer.encode(&e.ligand_input, Side::Ligand)?)))
                .collect::<Result<Vec<_>>>()?;
            let scores = sel
                .iter()
                .map(|&k| {
                    let d = &case.decoys[k];
                    let (r, l) = &enc[d.entry];
                    Ok(scorer.score_encoded(r, &l.transformed(&case.ligand_transform(d)?))?.score)
                })
                .collect::<Result<Vec<f64>>>()?;
            let ids: Vec<&str> = sel.iter().map(|&k| case.decoys[k].id.as_str()).collect();
            ranked.push(ranking(&ids, &scores).into_iter().map(|i| classes[sel[i]]).collect::<Vec<_>>());
        }
        success_rate(&ranked, 10)
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub weights_path: PathBuf,
    pub best_epoch: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub positives: usize,
    pub negatives: usize,
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainReport> {
    let spec = &cfg.training;
    let (set, validation) = match &spec.micro_corpus {
        Some(m) => (
            crate::synth::micro_corpus(m.seed, m.cases, m.positives_per_case, m.negatives_per_case)?,
            None,
        ),
        None => {
            let specs = cfg.training_cases()?;
            let (train, val): (Vec<CaseSpec>, Vec<CaseSpec>) = specs
                .into_iter()
                .filter(|c| c.split != Split::Test)
                .partition(|c| c.split == Split::Train);
            let train = load_cases(&train)?;
            if train.is_empty() {
                return Err(Error::Config("no training cases configured".into()));
            }
            let val = load_cases(&val)?;
            let validation = if val.is_empty() { None } else { Some(Validation::new(val, cfg)?) };
            (build_training_set(&train, cfg)?, validation)
        }
    };
    let (positives, negatives) = set.counts();
    let dir = cfg.output_dir.join("training");
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for d in &set.decoys {
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            set.cases[d.case].case_id,
            d.decoy_id,
            d.capri(),
            u8::from(d.positive())
        ));
    }
    write(&dir.join("manifest.tsv"), &manifest)?;

    let optimizer = TrainConfig { ..spec.optimizer.clone() };
    let trainer = match &spec.resume {
        Some(p) => Trainer::resume(&set, optimizer, TrainState::load(p)?)?,
        None => Trainer::new(&set, &spec.hyper, optimizer)?,
    };
    let mut trainer = trainer.with_checkpoints(dir.join("checkpoints"));
    if let Some(v) = &validation {
        trainer = trainer.with_validation(move |w| v.top10(w));
    }
    let outcome = trainer.run()?;
    write(&dir.join("history.csv"), &history_csv(&outcome.history))?;
    let weights_path = spec.output.clone().unwrap_or_else(|| cfg.output_dir.join("model.cnwt"));
    if let Some(d) = weights_path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    save_weights(&weights_path, &outcome.weights)?;
    let final_loss = outcome.history.last().map_or(f64::NAN, |r| r.mean_loss);
    Ok(TrainReport {
        train_accuracy: crate::trainer::training_accuracy(&set, &outcome.weights)?,
        weights_path,
        best_epoch: outcome.best_epoch,
        final_loss,
        positives,
        negatives,
    })
}

/// Outcome of an end-to-end gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckOutcome {
    pub report: GradCheckReport,
    pub contacts: usize,
    pub passed: bool,
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

/// Checks the training-loss gradient of the whole network on a synthetic
/// two-contact complex against central differences (ε = 1e-4, 64-bit).
/// Without `weights`, a fresh initialisation is moved off its zero biases
/// by one large optimiser step first, so that no ReLU sits on its kink.
pub fn network_gradcheck(
    hyper: &HyperParams,
    weights: Option<&ModelWeights>,
    seed: u64,
    max_coords: usize,
) -> Result<GradCheckOutcome> {
    let hyper = HyperParams {
        max_contacts: 2,
        ..weights.map_or_else(|| hyper.clone(), |w| w.hyper.clone())
    };
    let set = crate::synth::two_contact_set(hyper.segment_half_len, seed)?;
    let cfg = TrainConfig {
        lr0: 1e-2,
        lr_floor: 1e-2,
        epochs: 1,
        batches_per_epoch: 1,
        seed,
        ..Default::default()
    };
    let start = match weights {
        Some(w) => {
            let named = w.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
            let w = ModelWeights::from_named(hyper.clone(), named)?;
            TrainState {
                optimizer: crate::trainer::OptimizerState::new(w.tensors()),
                weights: w,
                epoch: 0,
            }
        }
        None => {
            let mut t = Trainer::new(&set, &hyper, cfg.clone())?;
            t.step(&[0, 1])?;
            t.state().clone()
        }
    };
    let batch = [0usize];
    let w0 = start.weights.clone();
    let trainer = Trainer::resume(&set, cfg.clone(), start)?;
    let contacts = trainer.contacts()[0].len();
    let (_, grads) = trainer.batch_gradients(&batch)?;
    let grads = grads.ok_or_else(|| Error::Data("gradient check complex has no contacts".into()))?;
    let report = grad_check(
        w0.tensors(),
        &grads,
        |ps| {
            let state = TrainState {
                weights: w0.with_tensors(ps.to_vec())?,
                optimizer: crate::trainer::OptimizerState::new(ps),
                epoch: 0,
            };
            let t = Trainer::resume(&set, cfg.clone(), state)?;
            t.batch_gradients(&batch)?
                .0
                .loss
                .ok_or_else(|| Error::Data("gradient check complex lost its contacts".into()))
        },
        &GradCheckConfig {
            eps: 1e-4,
            max_coords,
            seed,
            ..Default::default()
        },
    )?;
    Ok(GradCheckOutcome {
        passed: report.max_rel_error < GRADCHECK_TOLERANCE,
        report,
        contacts,
    })
}

/// Weights from the configured file.
pub fn load_configured_weights(cfg: &PipelineConfig) -> Result<ModelWeights> {
    load_weights(cfg.weights_path()?)
}

#[cfg(test)]
mod tests;
