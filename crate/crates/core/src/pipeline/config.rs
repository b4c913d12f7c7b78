//! Pipeline configuration, read from JSON. Relative paths are resolved
//! against the directory of the file they appear in.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::DEFAULT_THRESHOLD;
use crate::error::{Error, Result};
use crate::network::HyperParams;
use crate::tensor::Precision;
use crate::trainer::TrainConfig;

/// Where a case's docking models come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoySource {
    /// Rigid ligand placements over the base complex.
    Transforms(PathBuf),
    /// One PDB file per model, holding both the receptor and ligand chains;
    /// the file stem is the decoy id.
    PdbDir(PathBuf),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Validation,
    Test,
}

/// One set of docking models. Entries sharing a `case_id` are pooled into
/// one case (for example models docked against several antibody models).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub case_id: String,
    /// Distinguishes pooled entries; prefixes their decoy ids as `variant/id`.
    #[serde(default)]
    pub variant: Option<String>,
    /// Native complex. Required for assessment and training.
    #[serde(default)]
    pub native: Option<PathBuf>,
    /// Base receptor structure; defaults to the native.
    #[serde(default)]
    pub receptor: Option<PathBuf>,
    /// Base ligand structure; defaults to the native.
    #[serde(default)]
    pub ligand: Option<PathBuf>,
    /// Chain letters of the receptor (antigen), e.g. `"A"`.
    pub receptor_chains: String,
    /// Chain letters of the ligand (antibody), e.g. `"HL"`.
    pub ligand_chains: String,
    #[serde(default)]
    pub receptor_features: Option<PathBuf>,
    #[serde(default)]
    pub ligand_features: Option<PathBuf>,
    pub decoys: DecoySource,
    /// External score TSVs (`decoy_id`, `score`) by column name.
    #[serde(default)]
    pub external_scores: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub split: Split,
}

impl CaseSpec {
    pub fn receptor_path(&self) -> Result<&Path> {
        self.receptor
            .as_deref()
            .or(self.native.as_deref())
            .ok_or_else(|| Error::Config(format!("case {}: needs a receptor or a native structure", self.case_id)))
    }

    pub fn ligand_path(&self) -> Result<&Path> {
        self.ligand
            .as_deref()
            .or(self.native.as_deref())
            .ok_or_else(|| Error::Config(format!("case {}: needs a ligand or a native structure", self.case_id)))
    }

    pub fn receptor_chain_ids(&self) -> Vec<char> {
        self.receptor_chains.chars().filter(|c| !c.is_whitespace() && *c != ',').collect()
    }

    pub fn ligand_chain_ids(&self) -> Vec<char> {
        self.ligand_chains.chars().filter(|c| !c.is_whitespace() && *c != ',').collect()
    }

    /// Pooled decoy id.
    pub fn decoy_id(&self, raw: &str) -> String {
        match &self.variant {
            Some(v) => format!("{v}/{raw}"),
            None => raw.to_string(),
        }
    }

    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.native,
            &mut self.receptor,
            &mut self.ligand,
            &mut self.receptor_features,
            &mut self.ligand_features,
        ]
        .into_iter()
        .flatten()
        {
            *p = base.join(&*p);
        }
        match &mut self.decoys {
            DecoySource::Transforms(p) | DecoySource::PdbDir(p) => *p = base.join(&*p),
        }
        for p in self.external_scores.values_mut() {
            *p = base.join(&*p);
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("case {}: {m}", self.case_id)));
        if self.case_id.is_empty() || self.case_id.contains(['/', '\\']) {
            return bad("case_id must be non-empty and contain no path separators".into());
        }
        if self.receptor_chain_ids().is_empty() || self.ligand_chain_ids().is_empty() {
            return bad("receptor_chains and ligand_chains must name at least one chain".into());
        }
        if self.receptor_chain_ids().iter().any(|c| self.ligand_chain_ids().contains(c)) {
            return bad("a chain cannot be both receptor and ligand".into());
        }
        self.receptor_path()?;
        self.ligand_path()?;
        let mut paths: Vec<&Path> = [&self.native, &self.receptor, &self.ligand, &self.receptor_features, &self.ligand_features]
            .into_iter()
            .flatten()
            .map(|p| p.as_path())
            .collect();
        match &self.decoys {
            DecoySource::Transforms(p) => paths.push(p),
            DecoySource::PdbDir(p) => {
                if !p.is_dir() {
                    return bad(format!("decoy directory {} does not exist", p.display()));
                }
            }
        }
        paths.extend(self.external_scores.values().map(|p| p.as_path()));
        for p in paths {
            if !p.is_file() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        Ok(())
    }
}

/// Synthetic training data in place of a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroCorpusSpec {
    pub seed: u64,
    pub cases: usize,
    pub positives_per_case: usize,
    pub negatives_per_case: usize,
}

impl Default for MicroCorpusSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 2,
            positives_per_case: 8,
            negatives_per_case: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    /// JSON list of cases; defaults to the config's own `cases`.
    pub manifest: Option<PathBuf>,
    /// Train on a generated corpus instead of real cases.
    pub micro_corpus: Option<MicroCorpusSpec>,
    pub hyper: HyperParams,
    pub optimizer: TrainConfig,
    /// Per case, the best-ranked models kept by the external score.
    pub top_k: usize,
    /// Per case, positives kept beyond the top `top_k`.
    pub max_positives: usize,
    /// Checkpoint to resume from (its `.state.json` sidecar must sit beside it).
    pub resume: Option<PathBuf>,
    /// Where the selected weights are written; defaults to `<output_dir>/model.cnwt`.
    pub output: Option<PathBuf>,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            manifest: None,
            micro_corpus: None,
            hyper: HyperParams::default(),
            optimizer: TrainConfig::default(),
            top_k: 2500,
            max_positives: 50,
            resume: None,
            output: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub weights: Option<PathBuf>,
    pub cases: Vec<CaseSpec>,
    /// Models per case passed to the network, best external score first.
    pub top_k_rescore: usize,
    pub report_ns: Vec<usize>,
    pub cluster_threshold: f64,
    /// External column used for the top-K cut; defaults to the first column
    /// name in sorted order.
    pub rank_by: Option<String>,
    /// Per-column sign override. Columns whose name starts with `soap` are
    /// lower-is-better and inverted by default.
    pub invert: BTreeMap<String, bool>,
    pub precision: Precision,
    pub workers: Option<usize>,
    pub seed: u64,
    pub training: TrainingSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("contactnet-out"),
            weights: None,
            cases: Vec::new(),
            top_k_rescore: 3000,
            report_ns: vec![1, 5, 10],
            cluster_threshold: DEFAULT_THRESHOLD,
            rank_by: None,
            invert: BTreeMap::new(),
            precision: Precision::F32,
            workers: None,
            seed: 0,
            training: TrainingSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes every relative path absolute against `base` and reads the
    /// training manifest, if any.
    pub fn resolve(&mut self, base: &Path) -> Result<()> {
        self.output_dir = base.join(&self.output_dir);
        for p in [&mut self.weights, &mut self.training.resume, &mut self.training.output]
            .into_iter()
            .flatten()
        {
            *p = base.join(&*p);
        }
        for c in &mut self.cases {
            c.resolve(base);
        }
        if let Some(m) = &mut self.training.manifest {
            *m = base.join(&*m);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.top_k_rescore < 1 {
            return bad("top_k_rescore must be at least 1".into());
        }
        if self.report_ns.is_empty() || self.report_ns.contains(&0) {
            return bad("report_ns must be non-empty and positive".into());
        }
        if !(self.cluster_threshold > 0.0) {
            return bad(format!("cluster_threshold {} must be positive", self.cluster_threshold));
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if let Some(w) = &self.weights {
            if !w.is_file() {
                return bad(format!("weights {} does not exist", w.display()));
            }
        }
        if let Some(r) = &self.training.resume {
            if !r.is_file() {
                return bad(format!("checkpoint {} does not exist", r.display()));
            }
        }
        if let Some(m) = &self.training.manifest {
            if !m.is_file() {
                return bad(format!("training manifest {} does not exist", m.display()));
            }
        }
        self.training.hyper.validate()?;
        self.training.optimizer.validate()?;
        let mut seen: BTreeMap<(&str, Option<&str>), ()> = BTreeMap::new();
        for c in &self.cases {
            c.validate()?;
            if seen.insert((&c.case_id, c.variant.as_deref()), ()).is_some() {
                return bad(format!(
                    "case {} has two entries without distinct variants",
                    c.case_id
                ));
            }
        }
        Ok(())
    }

    /// Whether column `name` is lower-is-better.
    pub fn inverted(&self, name: &str) -> bool {
        self.invert
            .get(name)
            .copied()
            .unwrap_or_else(|| name.to_ascii_lowercase().starts_with("soap"))
    }

    /// Training cases: the manifest's if one is configured, else the config's own.
    pub fn training_cases(&self) -> Result<Vec<CaseSpec>> {
        let Some(path) = &self.training.manifest else {
            return Ok(self.cases.clone());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cases: Vec<CaseSpec> =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for c in &mut cases {
            c.resolve(base);
            c.validate()?;
        }
        Ok(cases)
    }

    pub fn weights_path(&self) -> Result<&Path> {
        self.weights
            .as_deref()
            .ok_or_else(|| Error::Config("no weights file configured".into()))
    }
}
