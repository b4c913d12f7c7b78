use super::*;
use crate::network::init_weights;
use crate::structure::{write_transform_table, DecoyTransform};
use crate::synth::{write_case_fixture, CaseFixture};
use crate::trainer::TrainConfig;

fn small() -> HyperParams {
    HyperParams {
        d_model: 8,
        n_heads: 2,
        segment_half_len: 3,
        max_contacts: 4,
        d_contact: 8,
        cnn_channels: [4, 6, 6],
        head_hidden: 4,
        n_enc_layers: 1,
        n_tx_layers: 1,
        ffn_mult: 2,
        ..Default::default()
    }
}

fn setup(dir: &Path, fixtures: &[CaseFixture]) -> PipelineConfig {
    let cases = fixtures.iter().map(|f| write_case_fixture(&dir.join("data"), f).unwrap()).collect();
    PipelineConfig {
        output_dir: dir.join("out"),
        cases,
        ..Default::default()
    }
}

fn weights() -> ModelWeights {
    init_weights(&small(), 5).unwrap()
}

fn read_text(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn top_k_cut_splits_scored_and_unscored() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), &[CaseFixture::new("c1", 10, 1)]);
    cfg.top_k_rescore = 5;
    let s = cmd_score(&cfg, &weights()).unwrap();
    assert_eq!((s.scored, s.unscored, s.skipped), (5, 5, 0));
    let rows = parse_scores(&read_text(&scores_path(&cfg, "c1"))).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows[..5].iter().all(|r| r.status.has_score() && r.contactnet_score.is_some()));
    assert!(rows[5..].iter().all(|r| r.status == RowStatus::Unscored && r.contactnet_score.is_none()));
    // The scored set is the top five by external score.
    let ext = |r: &ScoreRow| r.external_score.unwrap();
    let worst_scored = rows[..5].iter().map(ext).fold(f64::INFINITY, f64::min);
    assert!(rows[5..].iter().all(|r| ext(r) <= worst_scored));
    assert!(rows[5..].windows(2).all(|w| ext(&w[0]) >= ext(&w[1])));
    assert!(rows[..5].windows(2).all(|w| w[0].contactnet_score >= w[1].contactnet_score));
}

#[test]
fn inverted_columns_rank_low_first() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), &[CaseFixture::new("c1", 10, 1)]);
    cfg.top_k_rescore = 3;
    cfg.invert.insert("ext".into(), true);
    cmd_score(&cfg, &weights()).unwrap();
    let rows = parse_scores(&read_text(&scores_path(&cfg, "c1"))).unwrap();
    let best_unscored = rows[3..].iter().map(|r| r.external_score.unwrap()).fold(f64::INFINITY, f64::min);
    assert!(rows[..3].iter().all(|r| r.external_score.unwrap() <= best_unscored));
}

#[test]
fn missing_external_score_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), &[CaseFixture::new("c1", 6, 2)]);
    let ext = cfg.cases[0].external_scores["ext"].clone();
    let text: String = read_text(&ext).lines().filter(|l| !l.starts_with("m00003")).map(|l| format!("{l}\n")).collect();
    std::fs::write(&ext, text).unwrap();
    cfg.rank_by = Some("ext".into());
    let s = cmd_score(&cfg, &weights()).unwrap();
    assert_eq!((s.scored, s.skipped), (5, 1));
    let skipped = read_text(&cfg.output_dir.join("scores/skipped.tsv"));
    assert!(skipped.contains("c1\tm00003\t"), "{skipped}");
    cfg.rank_by = Some("other".into());
    assert!(matches!(cmd_score(&cfg, &weights()), Err(Error::Config(_))));
}

#[test]
fn scores_are_identical_across_worker_counts_and_precisions_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &[CaseFixture::new("c1", 12, 3), CaseFixture::new("c2", 8, 4)]);
    let w = weights();
    let run = |workers: usize, seq: bool| {
        let mut c = cfg.clone();
        c.workers = Some(if seq { 1 } else { workers });
        par::with_workers(workers, || cmd_score(&c, &w)).unwrap();
        (read_text(&scores_path(&c, "c1")), read_text(&scores_path(&c, "c2")))
    };
    let a = run(1, true);
    let b = run(4, false);
    let c = run(2, false);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn transform_and_model_file_routes_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut f = CaseFixture::new("c1", 6, 9);
    let cfg_t = setup(&dir.path().join("t"), &[f.clone()]);
    f.pdb_models = true;
    let cfg_p = setup(&dir.path().join("p"), &[f]);
    let mut cfg_p = cfg_p;
    cfg_p.precision = Precision::F64;
    let mut cfg_t = cfg_t;
    cfg_t.precision = Precision::F64;
    let w = weights();
    cmd_score(&cfg_t, &w).unwrap();
    cmd_score(&cfg_p, &w).unwrap();
    let rt = parse_scores(&read_text(&scores_path(&cfg_t, "c1"))).unwrap();
    let rp = parse_scores(&read_text(&scores_path(&cfg_p, "c1"))).unwrap();
    assert_eq!(rt.len(), rp.len());
    for (a, b) in rt.iter().zip(&rp) {
        assert_eq!(a.decoy_id, b.decoy_id);
        // Model files carry coordinates at 1e-3 Å.
        assert!((a.contactnet_score.unwrap() - b.contactnet_score.unwrap()).abs() < 1e-3);
    }
    let at = assess_case(&load_cases(&cfg_t.cases).unwrap()[0], Exec::Sequential).unwrap();
    let ap = assess_case(&load_cases(&cfg_p.cases).unwrap()[0], Exec::Sequential).unwrap();
    for (a, b) in at.iter().zip(&ap) {
        assert!((a.assessment.irmsd - b.assessment.irmsd).abs() < 1e-2);
        assert_eq!(a.assessment.capri, b.assessment.capri);
    }
}

#[test]
fn native_pose_is_high_quality() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &[CaseFixture::new("c1", 5, 6)]);
    let case = &load_cases(&cfg.cases).unwrap()[0];
    let rows = assess_case(case, Exec::Sequential).unwrap();
    let native = rows.iter().find(|r| r.decoy_id == "m00000").unwrap();
    assert!(native.assessment.lrmsd < 1e-9 && native.assessment.irmsd < 1e-9);
    assert_eq!(native.assessment.capri, CapriClass::High);
    assert!((native.assessment.epitope_recall - 1.0).abs() < 1e-12);
    assert!(native.epitope_correct());
}

#[test]
fn assessment_summary_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &[CaseFixture::new("c1", 12, 7), CaseFixture::new("c2", 12, 8)]);
    cmd_score(&cfg, &weights()).unwrap();
    let s = cmd_assess(&cfg).unwrap();
    assert_eq!(s.cases, vec!["c1", "c2"]);
    assert_eq!(s.columns.keys().collect::<Vec<_>>(), vec!["contactnet", "ext"]);
    let json: serde_json::Value = serde_json::from_str(&read_text(&cfg.output_dir.join("assessment/summary.json"))).unwrap();
    for col in ["contactnet", "ext"] {
        for key in ["top1", "top5", "top10"] {
            let v = json["columns"][col][key].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(json["columns"][col]["hit_rates"]["c1"]["top10"].is_u64());
    }
    for col in s.columns.values() {
        let hit = col.hit_rates.values().filter(|h| h["top10"] > 0).count();
        assert_eq!(col.success["top10"], hit as f64 / 2.0);
    }
    let csv = read_text(&assessment_path(&cfg, "c1"));
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with(ASSESS_HEADER));

    let empty = PipelineConfig {
        output_dir: dir.path().join("empty"),
        ..Default::default()
    };
    assert!(matches!(cmd_assess(&empty), Err(Error::Data(_))));
    assert!(matches!(cmd_cluster(&empty), Err(Error::Data(_))));
}

#[test]
fn success_rate_counts_hits_within_n() {
    use CapriClass::*;
    let ranked: BTreeMap<String, Vec<CapriClass>> = [
        ("a".to_string(), vec![Incorrect, Acceptable, Incorrect]),
        ("b".to_string(), vec![Incorrect, Incorrect, Incorrect]),
    ]
    .into_iter()
    .collect();
    let s = summarize_column(&ranked, &[1, 2]).unwrap();
    assert_eq!(s.success["top1"], 0.0);
    assert_eq!(s.success["top2"], 0.5);
    assert_eq!(s.hit_rates["a"]["top2"], 1);
    assert!(summarize_column(&BTreeMap::new(), &[1]).is_err());
}

#[test]
fn funnel_lists_every_decoy_per_column() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), &[CaseFixture::new("c1", 9, 10)]);
    cfg.top_k_rescore = 4;
    assert!(matches!(cmd_funnel(&cfg), Err(Error::Data(_))));
    cmd_score(&cfg, &weights()).unwrap();
    cmd_assess(&cfg).unwrap();
    let written = cmd_funnel(&cfg).unwrap();
    assert_eq!(written.len(), 2);
    for p in &written {
        let text = read_text(p);
        assert!(text.starts_with(FUNNEL_HEADER));
        assert_eq!(text.lines().count(), 10, "{}", p.display());
    }
    let cn = read_text(&cfg.output_dir.join("funnel/c1.contactnet.csv"));
    assert_eq!(cn.lines().filter(|l| l.split(',').nth(1) == Some("")).count(), 5);
}

fn table_case(dir: &Path, transforms: &[RigidTransformSpec]) -> PipelineConfig {
    let mut cfg = setup(dir, &[CaseFixture::new("c1", 1, 11)]);
    let decoys: Vec<DecoyTransform> = transforms
        .iter()
        .enumerate()
        .map(|(k, t)| DecoyTransform {
            model_id: format!("d{k:02}"),
            transform: crate::geometry::RigidTransform::from_euler_zyx(t.0, t.1, t.2, Coord::new(t.3, t.4, t.5)),
        })
        .collect();
    let table = dir.join("table.tsv");
    std::fs::write(&table, write_transform_table(&decoys)).unwrap();
    cfg.cases[0].decoys = DecoySource::Transforms(table);
    cfg.cases[0].external_scores.clear();
    cfg
}

type RigidTransformSpec = (f64, f64, f64, f64, f64, f64);

#[test]
fn single_decoy_forms_one_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = table_case(dir.path(), &[(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)]);
    cmd_score(&cfg, &weights()).unwrap();
    let s = cmd_cluster(&cfg).unwrap();
    assert_eq!(s.clusters["c1"], 1);
    assert!(s.before.is_none());
    let text = read_text(&clusters_path(&cfg, "c1"));
    assert_eq!(text.lines().nth(1).unwrap().split('\t').collect::<Vec<_>>()[..4], ["1", "d00", text.lines().nth(1).unwrap().split('\t').nth(2).unwrap(), "1"]);
}

#[test]
fn duplicate_poses_collapse_and_representatives_are_separated() {
    let dir = tempfile::tempdir().unwrap();
    let mut poses = vec![(0.3, 0.0, 0.0, 1.0, 0.0, 0.0); 3];
    for k in 0..30 {
        let a = k as f64 * 0.21;
        poses.push((a, 0.5 * (a * 1.7).sin(), 0.0, (a * 2.3).cos() * 4.0, 0.0, (a * 0.7).sin() * 4.0));
    }
    let cfg = table_case(dir.path(), &poses);
    cmd_score(&cfg, &weights()).unwrap();
    cmd_assess(&cfg).unwrap();
    let s = cmd_cluster(&cfg).unwrap();
    assert!(s.before.is_some() && s.after.is_some());

    let case = &load_cases(&cfg.cases).unwrap()[0];
    let rows = parse_scores(&read_text(&scores_path(&cfg, "c1"))).unwrap();
    let cc = cluster_case(case, &rows, 5.0, Exec::Sequential).unwrap();
    let with_dup = cc
        .clusters
        .iter()
        .find(|c| c.members.iter().any(|&m| cc.ids[m] == "d00"))
        .unwrap();
    for id in ["d01", "d02"] {
        assert!(with_dup.members.iter().any(|&m| cc.ids[m] == id));
    }
    let members: usize = cc.clusters.iter().map(|c| c.members.len()).sum();
    assert_eq!(members, 33);

    let reps: Vec<usize> = cc.clusters.iter().take(10).map(|c| c.representative).collect();
    let index: BTreeMap<&str, usize> = case.decoys.iter().enumerate().map(|(k, d)| (d.id.as_str(), k)).collect();
    let ca: Vec<(Vec<Coord>, Vec<Coord>)> = cc.ids.iter().map(|id| case.model_ca(&case.decoys[index[id.as_str()]]).unwrap()).collect();
    let views = ca.iter().map(|(r, l)| DecoyView { receptor: r, ligand: l }).collect();
    let metric = InterfaceRmsd::new(views).unwrap();
    for (i, &a) in reps.iter().enumerate() {
        for &b in &reps[i + 1..] {
            assert!(metric.distance(a, b) >= 5.0);
        }
    }
    // Representatives are listed in score order.
    let pos = |id: &str| rows.iter().position(|r| r.decoy_id == id).unwrap();
    assert!(cc.clusters.windows(2).all(|w| pos(&cc.ids[w[0].representative]) < pos(&cc.ids[w[1].representative])));
}

#[test]
fn featurize_writes_sidecars_that_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &[CaseFixture::new("c1", 2, 12)]);
    let written = cmd_featurize(&cfg).unwrap();
    assert_eq!(written.len(), 2);
    let mut with = cfg.clone();
    with.cases[0].receptor_features = Some(written[0].clone());
    with.cases[0].ligand_features = Some(written[1].clone());
    let a = &load_cases(&cfg.cases).unwrap()[0].entries[0];
    let b = &load_cases(&with.cases).unwrap()[0].entries[0];
    for (x, y) in [(&a.receptor_input, &b.receptor_input), (&a.ligand_input, &b.ligand_input)] {
        assert_eq!(x.features.len(), y.features.len());
        for i in 0..x.features.len() {
            assert_eq!(x.features.secondary_structure(i), y.features.secondary_structure(i));
            assert!((x.features.rsa(i) - y.features.rsa(i)).abs() < 1e-3);
        }
    }
}

#[test]
fn pooled_entries_prefix_decoy_ids() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), &[CaseFixture::new("c1", 3, 13)]);
    let mut second = cfg.cases[0].clone();
    cfg.cases[0].variant = Some("a".into());
    second.variant = Some("b".into());
    cfg.cases.push(second);
    let cases = load_cases(&cfg.cases).unwrap();
    assert_eq!(cases.len(), 1);
    let ids: Vec<&str> = cases[0].decoys.iter().map(|d| d.id.as_str()).collect();
    assert_eq!(ids, ["a/m00000", "a/m00001", "a/m00002", "b/m00000", "b/m00001", "b/m00002"]);
    assert_eq!(cases[0].external["ext"].len(), 6);
}

#[test]
fn gradcheck_on_two_contact_complex() {
    let out = network_gradcheck(&small(), None, 3, 6).unwrap();
    assert_eq!(out.contacts, 2);
    assert!(out.report.checked() > 50);
    assert!(out.passed, "max relative error {}", out.report.max_rel_error);
}

fn train_cfg(dir: &Path) -> PipelineConfig {
    PipelineConfig {
        output_dir: dir.join("out"),
        training: TrainingSpec {
            micro_corpus: Some(MicroCorpusSpec {
                seed: 2,
                cases: 2,
                positives_per_case: 3,
                negatives_per_case: 3,
            }),
            hyper: small(),
            optimizer: TrainConfig {
                epochs: 2,
                batches_per_epoch: 2,
                batch_size: 8,
                lr0: 1e-3,
                seed: 4,
                ..Default::default()
            },
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn train_writes_reports_and_resumes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_cfg(dir.path());
    let report = cmd_train(&cfg).unwrap();
    assert_eq!((report.positives, report.negatives), (6, 6));
    let manifest = read_text(&cfg.output_dir.join("training/manifest.tsv"));
    assert!(manifest.starts_with(MANIFEST_HEADER));
    assert_eq!(manifest.lines().count(), 13);
    assert_eq!(read_text(&cfg.output_dir.join("training/history.csv")).lines().count(), 3);
    let full = load_weights(&report.weights_path).unwrap();

    let mut resumed = train_cfg(&dir.path().join("again"));
    resumed.training.resume = Some(cfg.output_dir.join("training/checkpoints/epoch_0001.cnwt"));
    let r2 = cmd_train(&resumed).unwrap();
    let again = load_weights(&r2.weights_path).unwrap();
    assert_eq!(full.tensors(), again.tensors());
}

#[test]
fn train_from_case_files_labels_against_the_native() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), &[CaseFixture::new("c1", 16, 14), CaseFixture::new("c2", 6, 15)]);
    cfg.cases[1].split = Split::Validation;
    cfg.training.hyper = small();
    cfg.training.top_k = 8;
    cfg.training.max_positives = 2;
    cfg.training.optimizer = TrainConfig {
        epochs: 1,
        batches_per_epoch: 1,
        batch_size: 4,
        ..Default::default()
    };
    let cases = load_cases(&cfg.cases[..1]).unwrap();
    let set = build_training_set(&cases, &cfg).unwrap();
    // Top 8 by external score plus at most 2 further positives.
    let (p, n) = set.counts();
    assert!(p + n <= 10 && p + n >= 8, "{p} {n}");
    assert!(set.decoys.iter().any(|d| d.decoy_id == "m00000" && d.positive()) || p >= 2);
    let report = cmd_train(&cfg).unwrap();
    assert!(report.weights_path.is_file());
    let history = read_text(&cfg.output_dir.join("training/history.csv"));
    let last = history.lines().last().unwrap();
    assert!(!last.ends_with(','), "validation column filled: {last}");
}

#[test]
fn exit_codes() {
    assert_eq!(exit_code(&Error::Config("x".into())), 2);
    assert_eq!(exit_code(&Error::Data("x".into())), 3);
    assert_eq!(exit_code(&Error::EmptyStructure), 3);
}

