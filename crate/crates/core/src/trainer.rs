//! Balanced-batch training of the scoring network: weighted binary
//! cross-entropy, Adam with decoupled weight decay, a cosine learning-rate
//! schedule, checkpoints and per-epoch history.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assessment::{capri_classify, ligand_rmsd, ranking, CapriClass, NativeInterface};
use crate::error::{Error, Result};
use crate::geometry::{distance_matrix, Coord, RigidTransform};
use crate::network::{
    complex_logits, contact_nms, decays, encode_protein, init_weights, load_weights, save_weights, Bound,
    ComponentInput, ContactSet, HyperParams, ModelWeights, Side,
};
use crate::tensor::{sigmoid, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_floor: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub positive_fraction: f64,
    pub batches_per_epoch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            lr_floor: 1e-6,
            weight_decay: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 52,
            positive_fraction: 0.25,
            batches_per_epoch: 2000,
            epochs: 160,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("training: {m}")));
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return bad(format!("positive_fraction {} must lie in (0, 1)", self.positive_fraction));
        }
        let pos = self.batch_size as f64 * self.positive_fraction;
        if (pos - pos.round()).abs() > 1e-9 || pos.round() < 1.0 || pos.round() as usize >= self.batch_size {
            return bad(format!(
                "batch_size {} × positive_fraction {} is not a whole number of positives and negatives",
                self.batch_size, self.positive_fraction
            ));
        }
        if self.epochs == 0 || self.batches_per_epoch == 0 {
            return bad("epochs and batches_per_epoch must be positive".into());
        }
        if !(self.lr0 > 0.0 && self.lr_floor >= 0.0 && self.lr_floor <= self.lr0) {
            return bad(format!("learning rates lr0 {} / floor {} are inconsistent", self.lr0, self.lr_floor));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        Ok(())
    }

    pub fn positives_per_batch(&self) -> usize {
        (self.batch_size as f64 * self.positive_fraction).round() as usize
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.batches_per_epoch
    }

    /// Learning rate of 0-based optimisation step `step`; the last step of
    /// the run gets the floor.
    pub fn lr_at(&self, step: usize) -> f64 {
        cosine_lr(step, self.total_steps().saturating_sub(1), self.lr0, self.lr_floor)
    }
}

/// Mean binary cross-entropy of `logits` against 0/1 `labels`.
pub fn bce_loss(logits: &[f64], labels: &[f64]) -> Result<f64> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::contract(format!(
            "bce_loss: {} logits and {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut tape = Tape::<f64>::inference();
    let z = tape.constant(Tensor::new(vec![logits.len()], logits.to_vec())?);
    let l = tape.bce_with_logits(z, labels, None)?;
    Ok(tape.value(l).item())
}

/// `lr_floor + (lr0 − lr_floor)(1 + cos(π·step/total))/2`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64, lr_floor: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let x = step.min(total_steps) as f64 / total_steps as f64;
    let c = (std::f64::consts::PI * x).cos();
    // Two equivalent forms, each exact at its own endpoint.
    if x <= 0.5 {
        lr0 - (lr0 - lr_floor) * (1.0 - c) / 2.0
    } else {
        lr_floor + (lr0 - lr_floor) * (1.0 + c) / 2.0
    }
}

/// Adam moments per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor<f64>>,
    pub v: Vec<Tensor<f64>>,
}

impl OptimizerState {
    pub fn new(params: &[Tensor<f64>]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamParams {
    fn from(c: &TrainConfig) -> Self {
        Self {
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.adam_eps,
            weight_decay: c.weight_decay,
        }
    }
}

/// One AdamW update in place. Decay `θ ← θ − lr·wd·θ` is applied first and
/// only to tensors with `decay[i]`; then the bias-corrected Adam step.
pub fn adamw_step(
    params: &mut [Tensor<f64>],
    grads: &[Tensor<f64>],
    decay: &[bool],
    state: &mut OptimizerState,
    lr: f64,
    hp: &AdamParams,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || decay.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::contract("adamw_step: parameter, gradient and state counts differ"));
    }
    for i in 0..n {
        let s = params[i].shape();
        if grads[i].shape() != s || state.m[i].shape() != s || state.v[i].shape() != s {
            return Err(Error::contract(format!("adamw_step: shape mismatch on tensor {i}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for i in 0..n {
        let shrink = if decay[i] { 1.0 - lr * hp.weight_decay } else { 1.0 };
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, th) in params[i].data_mut().iter_mut().enumerate() {
            *th *= shrink;
            m[k] = hp.beta1 * m[k] + (1.0 - hp.beta1) * g[k];
            v[k] = hp.beta2 * v[k] + (1.0 - hp.beta2) * g[k] * g[k];
            *th -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + hp.eps);
        }
    }
    Ok(())
}

/// One complex's components in the frame its decoy transforms refer to.
#[derive(Clone, Debug)]
pub struct TrainingCase {
    pub case_id: String,
    pub receptor: ComponentInput,
    pub ligand: ComponentInput,
}

/// A docking model: the case's ligand moved by `transform`, with the CAPRI
/// class it earns against the native complex.
#[derive(Clone, Debug)]
pub struct LabeledDecoy {
    pub case: usize,
    pub decoy_id: String,
    pub transform: RigidTransform,
    capri: CapriClass,
}

impl LabeledDecoy {
    /// Labels a decoy by assessing it against the native complex.
    pub fn assess(
        case_index: usize,
        case: &TrainingCase,
        decoy_id: impl Into<String>,
        transform: RigidTransform,
        native_rec: &[Coord],
        native_lig: &[Coord],
        interface: &NativeInterface,
    ) -> Result<Self> {
        let lig: Vec<Coord> = case.ligand.ca.iter().map(|p| transform.apply(p)).collect();
        let l = ligand_rmsd(&case.receptor.ca, &lig, native_rec, native_lig)?;
        let i = interface.rmsd(&case.receptor.ca, &lig, native_rec, native_lig)?;
        Ok(Self {
            case: case_index,
            decoy_id: decoy_id.into(),
            transform,
            capri: capri_classify(l, i),
        })
    }

    /// Labels a decoy from a class already computed by the assessment module.
    pub fn from_assessment(case: usize, decoy_id: impl Into<String>, transform: RigidTransform, capri: CapriClass) -> Self {
        Self {
            case,
            decoy_id: decoy_id.into(),
            transform,
            capri,
        }
    }

    pub fn capri(&self) -> CapriClass {
        self.capri
    }

    /// Acceptable or better.
    pub fn positive(&self) -> bool {
        self.capri.is_hit()
    }
}

#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub cases: Vec<TrainingCase>,
    pub decoys: Vec<LabeledDecoy>,
}

impl TrainingSet {
    pub fn new(cases: Vec<TrainingCase>, decoys: Vec<LabeledDecoy>) -> Result<Self> {
        if let Some(d) = decoys.iter().find(|d| d.case >= cases.len()) {
            return Err(Error::Data(format!(
                "decoy {} refers to case {} of {}",
                d.decoy_id,
                d.case,
                cases.len()
            )));
        }
        Ok(Self { cases, decoys })
    }

    pub fn counts(&self) -> (usize, usize) {
        let pos = self.decoys.iter().filter(|d| d.positive()).count();
        (pos, self.decoys.len() - pos)
    }

    /// Contacts of every decoy under `hyper`, in decoy order.
    pub fn contacts(&self, hyper: &HyperParams) -> Vec<ContactSet> {
        self.decoys
            .iter()
            .map(|d| {
                let case = &self.cases[d.case];
                let lig: Vec<Coord> = case.ligand.ca.iter().map(|p| d.transform.apply(p)).collect();
                let dist = distance_matrix(&case.receptor.ca, &lig);
                contact_nms(&dist, hyper.segment_half_len, hyper.max_contacts, hyper.contact_cutoff)
            })
            .collect()
    }
}

/// Training subset for one case: the `top_k` best by external score plus
/// up to `max_positives` positives taken best-ranked first from anywhere in
/// the list. Indices are returned in rank order.
pub fn assemble_case_decoys<S: AsRef<str>>(
    ids: &[S],
    scores: &[f64],
    positive: &[bool],
    top_k: usize,
    max_positives: usize,
) -> Result<Vec<usize>> {
    if ids.len() != scores.len() || ids.len() != positive.len() {
        return Err(Error::contract("assemble_case_decoys: ids, scores and labels differ in length"));
    }
    let order = ranking(ids, scores);
    let mut chosen = 0;
    Ok(order
        .iter()
        .enumerate()
        .filter(|&(rank, &k)| {
            let extra = positive[k] && chosen < max_positives;
            if positive[k] {
                chosen += 1;
            }
            rank < top_k || extra
        })
        .map(|(_, &k)| k)
        .collect())
}

/// Draws one training batch of decoy indices: positives first, then
/// negatives, each drawn with replacement. Items come from cases not yet
/// used in the batch while any remain, so a batch repeats a case only when
/// it must; within a case the decoy is uniform.
pub fn sample_batch(set: &TrainingSet, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let (np, nn) = set.counts();
    if np == 0 || nn == 0 {
        return Err(Error::Config(format!(
            "training data needs positives and negatives, found {np} positive and {nn} negative decoys"
        )));
    }
    let mut by_case: Vec<[Vec<usize>; 2]> = vec![[Vec::new(), Vec::new()]; set.cases.len()];
    for (k, d) in set.decoys.iter().enumerate() {
        by_case[d.case][usize::from(d.positive())].push(k);
    }
    let n_pos = cfg.positives_per_batch();
    let mut used = vec![false; set.cases.len()];
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for (label, count) in [(1usize, n_pos), (0, cfg.batch_size - n_pos)] {
        for _ in 0..count {
            let mut open: Vec<usize> = (0..set.cases.len())
                .filter(|&c| !used[c] && !by_case[c][label].is_empty())
                .collect();
            if open.is_empty() {
                used.iter_mut().for_each(|u| *u = false);
                open = (0..set.cases.len()).filter(|&c| !by_case[c][label].is_empty()).collect();
            }
            let c = open[rng.random_range(0..open.len())];
            used[c] = true;
            let pool = &by_case[c][label];
            batch.push(pool[rng.random_range(0..pool.len())]);
        }
    }
    Ok(batch)
}

/// Parameters and optimiser moments, enough to continue a run exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub weights: ModelWeights,
    pub optimizer: OptimizerState,
    /// Epochs completed.
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct StateSidecar {
    epoch: usize,
    step: u64,
    names: Vec<String>,
    params: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl TrainState {
    pub fn fresh(hyper: &HyperParams, seed: u64) -> Result<Self> {
        let weights = init_weights(hyper, seed)?;
        let optimizer = OptimizerState::new(weights.tensors());
        Ok(Self {
            weights,
            optimizer,
            epoch: 0,
        })
    }

    /// Writes `<stem>.cnwt` (f32 weights) and `<stem>.state.json` (exact
    /// f64 parameters and moments). Returns the weights path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let wpath = dir.join(format!("{stem}.cnwt"));
        save_weights(&wpath, &self.weights)?;
        let flat = |ts: &[Tensor<f64>]| ts.iter().map(|t| t.data().to_vec()).collect::<Vec<_>>();
        let sidecar = StateSidecar {
            epoch: self.epoch,
            step: self.optimizer.step,
            names: self.weights.names().to_vec(),
            params: flat(self.weights.tensors()),
            m: flat(&self.optimizer.m),
            v: flat(&self.optimizer.v),
        };
        let spath = dir.join(format!("{stem}.state.json"));
        std::fs::write(&spath, serde_json::to_vec(&sidecar)?).map_err(|e| Error::io(&spath, e))?;
        Ok(wpath)
    }

    /// Reads a checkpoint written by [`TrainState::save`], given its weights path.
    pub fn load(weights_path: &Path) -> Result<Self> {
        let skeleton = load_weights(weights_path)?;
        let spath = weights_path.with_extension("state.json");
        let text = std::fs::read(&spath).map_err(|e| Error::io(&spath, e))?;
        let s: StateSidecar = serde_json::from_slice(&text)?;
        if s.names != skeleton.names() {
            return Err(Error::Data(format!("{}: tensor names differ from the weights file", spath.display())));
        }
        let rebuild = |flat: Vec<Vec<f64>>| -> Result<Vec<Tensor<f64>>> {
            flat.into_iter()
                .zip(skeleton.tensors())
                .map(|(d, t)| Tensor::new(t.shape().to_vec(), d))
                .collect()
        };
        if s.params.len() != skeleton.len() || s.m.len() != skeleton.len() || s.v.len() != skeleton.len() {
            return Err(Error::Data(format!("{}: tensor count differs from the weights file", spath.display())));
        }
        let weights = skeleton.with_tensors(rebuild(s.params)?)?;
        Ok(Self {
            weights,
            optimizer: OptimizerState {
                step: s.step,
                m: rebuild(s.m)?,
                v: rebuild(s.v)?,
            },
            epoch: s.epoch,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_acc: f64,
    pub lr: f64,
    pub wall_seconds: f64,
    pub validation: Option<f64>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,mean_loss,train_acc,lr,wall_seconds,validation\n");
    for r in history {
        let v = r.validation.map_or_else(String::new, |v| format!("{v:.6}"));
        let _ = writeln!(out, "{},{:.8},{:.6},{:.6e},{:.3},{v}", r.epoch, r.mean_loss, r.train_acc, r.lr, r.wall_seconds);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Weighted BCE over batch items that have contacts; `None` when none do.
    pub loss: Option<f64>,
    /// Items classified correctly, counting contact-free items as predicted negative.
    pub correct: usize,
    pub items: usize,
    pub lr: f64,
}

pub struct TrainOutcome {
    /// Best weights by validation metric when a validation hook is set,
    /// otherwise the final weights.
    pub weights: ModelWeights,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub step_losses: Vec<Option<f64>>,
    pub state: TrainState,
}

type Validation<'s> = Box<dyn Fn(&ModelWeights) -> Result<f64> + 's>;

/// Owns one training run.
pub struct Trainer<'s> {
    set: &'s TrainingSet,
    cfg: TrainConfig,
    contacts: Vec<ContactSet>,
    decay: Vec<bool>,
    state: TrainState,
    checkpoint_dir: Option<PathBuf>,
    last_checkpoint: Option<PathBuf>,
    validation: Option<Validation<'s>>,
    best: Option<(f64, usize, ModelWeights)>,
}

impl<'s> Trainer<'s> {
    pub fn new(set: &'s TrainingSet, hyper: &HyperParams, cfg: TrainConfig) -> Result<Self> {
        let state = TrainState::fresh(hyper, cfg.seed)?;
        Self::resume(set, cfg, state)
    }

    pub fn resume(set: &'s TrainingSet, cfg: TrainConfig, state: TrainState) -> Result<Self> {
        cfg.validate()?;
        let (np, nn) = set.counts();
        if np == 0 || nn == 0 {
            return Err(Error::Config(format!(
                "training data needs positives and negatives, found {np} positive and {nn} negative decoys"
            )));
        }
        let contacts = set.contacts(&state.weights.hyper);
        let decay = state.weights.names().iter().map(|n| decays(n)).collect();
        Ok(Self {
            set,
            cfg,
            contacts,
            decay,
            state,
            checkpoint_dir: None,
            last_checkpoint: None,
            validation: None,
            best: None,
        })
    }

    pub fn with_checkpoints(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    /// Metric to maximise after each epoch; the best epoch's weights are returned.
    pub fn with_validation(mut self, f: impl Fn(&ModelWeights) -> Result<f64> + 's) -> Self {
        self.validation = Some(Box::new(f));
        self
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn contacts(&self) -> &[ContactSet] {
        &self.contacts
    }

    /// Batch sequence of epoch `epoch`, reproducible from the seed alone.
    pub fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        rng
    }

    /// Loss and gradients of a batch without updating anything.
    pub fn batch_gradients(&self, batch: &[usize]) -> Result<(StepStats, Option<Vec<Tensor<f64>>>)> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &k in batch {
            *counts.entry(k).or_default() += 1;
        }
        let weights = &self.state.weights;
        let mut tape = Tape::new();
        let b = Bound::bind(&mut tape, weights);
        let mut encoded: BTreeMap<usize, (crate::tensor::Var, crate::tensor::Var)> = BTreeMap::new();
        let mut complexes = Vec::new();
        let mut unique = Vec::new();
        for (&k, &n) in &counts {
            if self.contacts[k].is_empty() {
                continue;
            }
            let c = self.set.decoys[k].case;
            if !encoded.contains_key(&c) {
                let case = &self.set.cases[c];
                let fr = tape.constant(case.receptor.features.matrix.clone());
                let fl = tape.constant(case.ligand.features.matrix.clone());
                let re = encode_protein(&mut tape, &b, Side::Receptor, fr, &case.receptor.ca)?;
                let le = encode_protein(&mut tape, &b, Side::Ligand, fl, &case.ligand.ca)?;
                encoded.insert(c, (re, le));
            }
            let (re, le) = encoded[&c];
            complexes.push((re, le, &self.contacts[k]));
            unique.push((k, n));
        }
        let mut correct = counts
            .iter()
            .filter(|&(&k, _)| self.contacts[k].is_empty() && !self.set.decoys[k].positive())
            .map(|(_, &n)| n)
            .sum::<usize>();
        let lr = self.cfg.lr_at(self.state.optimizer.step as usize);
        if complexes.is_empty() {
            return Ok((
                StepStats {
                    loss: None,
                    correct,
                    items: batch.len(),
                    lr,
                },
                None,
            ));
        }
        let logits: Vec<_> = complex_logits(&mut tape, &b, &complexes)?
            .into_iter()
            .map(|z| z.expect("contacts present"))
            .collect();
        let z = tape.concat(&logits, 0)?;
        let labels: Vec<f64> = unique.iter().map(|&(k, _)| f64::from(u8::from(self.set.decoys[k].positive()))).collect();
        let w: Vec<f64> = unique.iter().map(|&(_, n)| n as f64).collect();
        for ((&zk, &y), &(_, n)) in tape.value(z).data().iter().zip(&labels).zip(&unique) {
            if (sigmoid(zk) >= 0.5) == (y == 1.0) {
                correct += n;
            }
        }
        let loss = tape.bce_with_logits(z, &labels, Some(&w))?;
        let loss_value = tape.value(loss).item();
        let vars = b.vars().to_vec();
        let grads = if loss_value.is_finite() {
            let mut g = tape.backward(loss)?;
            Some(vars.iter().map(|&v| g.take(v)).collect())
        } else {
            None
        };
        Ok((
            StepStats {
                loss: Some(loss_value),
                correct,
                items: batch.len(),
                lr,
            },
            grads,
        ))
    }

    /// Forward, backward and one AdamW update on `batch`.
    pub fn step(&mut self, batch: &[usize]) -> Result<StepStats> {
        let (stats, grads) = self.batch_gradients(batch)?;
        if let Some(l) = stats.loss {
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.state.epoch,
                    step: self.state.optimizer.step as usize,
                    checkpoint: self.last_checkpoint.clone(),
                });
            }
        }
        let hp = AdamParams::from(&self.cfg);
        match grads {
            Some(g) => adamw_step(
                self.state.weights.tensors_mut(),
                &g,
                &self.decay,
                &mut self.state.optimizer,
                stats.lr,
                &hp,
            )?,
            // Nothing to learn from; the schedule still advances.
            None => self.state.optimizer.step += 1,
        }
        Ok(stats)
    }

    /// Runs the next epoch and returns its record and per-step losses.
    pub fn run_epoch(&mut self) -> Result<(EpochRecord, Vec<Option<f64>>)> {
        let start = Instant::now();
        let epoch = self.state.epoch;
        let mut rng = self.epoch_rng(epoch);
        let mut losses = Vec::with_capacity(self.cfg.batches_per_epoch);
        let (mut loss_sum, mut loss_n, mut correct, mut items, mut lr) = (0.0, 0usize, 0usize, 0usize, self.cfg.lr0);
        for _ in 0..self.cfg.batches_per_epoch {
            let batch = sample_batch(self.set, &self.cfg, &mut rng)?;
            let s = self.step(&batch)?;
            if let Some(l) = s.loss {
                loss_sum += l;
                loss_n += 1;
            }
            losses.push(s.loss);
            correct += s.correct;
            items += s.items;
            lr = s.lr;
        }
        self.state.epoch += 1;
        let validation = match &self.validation {
            Some(f) => Some(f(&self.state.weights)?),
            None => None,
        };
        if let Some(v) = validation {
            if self.best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                self.best = Some((v, epoch, self.state.weights.clone()));
            }
        }
        if let Some(dir) = &self.checkpoint_dir {
            let path = self.state.save(dir, &format!("epoch_{:04}", epoch + 1))?;
            self.last_checkpoint = Some(path);
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            mean_loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN },
            train_acc: correct as f64 / items.max(1) as f64,
            lr,
            wall_seconds: start.elapsed().as_secs_f64(),
            validation,
        };
        log::info!(
            "epoch {} loss {:.5} acc {:.3} lr {:.3e} ({:.1}s)",
            record.epoch,
            record.mean_loss,
            record.train_acc,
            record.lr,
            record.wall_seconds
        );
        Ok((record, losses))
    }

    /// Runs the remaining epochs of the configured schedule.
    pub fn run(mut self) -> Result<TrainOutcome> {
        let mut history = Vec::new();
        let mut step_losses = Vec::new();
        while self.state.epoch < self.cfg.epochs {
            let (r, l) = self.run_epoch()?;
            history.push(r);
            step_losses.extend(l);
        }
        let (weights, best_epoch) = match self.best.take() {
            Some((_, e, w)) => (w, e + 1),
            None => (self.state.weights.clone(), self.state.epoch),
        };
        Ok(TrainOutcome {
            weights,
            best_epoch,
            history,
            step_losses,
            state: self.state,
        })
    }
}

/// Fraction of the set's decoys classified correctly at threshold 0.5;
/// contact-free decoys count as predicted negative.
pub fn training_accuracy(set: &TrainingSet, weights: &ModelWeights) -> Result<f64> {
    let scorer = crate::network::Scorer::<f64>::new(weights);
    let mut encoded = BTreeMap::new();
    let mut correct = 0;
    for d in &set.decoys {
        if !encoded.contains_key(&d.case) {
            let case = &set.cases[d.case];
            encoded.insert(
                d.case,
                (scorer.encode(&case.receptor, Side::Receptor)?, scorer.encode(&case.ligand, Side::Ligand)?),
            );
        }
        let (r, l) = &encoded[&d.case];
        let s = scorer.score_encoded(r, &l.transformed(&d.transform))?;
        if (s.score >= 0.5 && !s.no_contact()) == d.positive() {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.decoys.len().max(1) as f64)
}

#[cfg(test)]
mod tests;
