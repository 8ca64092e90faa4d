//! Toy training harness: one synthetic scene, TLAM plus per-pixel heads,
//! trained with L2 or hinge-adversarial losses under sparsity augmentation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::fusion::{merge, ConceptTensor, Exec, LabelBinding, MergerConfig, MergerParams, Variant};
use crate::graph::{
    discriminate_on_tape, generate_on_tape, hinge_d_on_tape, hinge_g_on_tape, l2_on_tape, merge_on_tape,
};
use crate::heads::{forward_generate, image_rows, l2_loss, HeadParams, DISC_PREFIX};
use crate::labels::{apply_masks, generate_sparse_masks, synth_scene, LabelSet, Scene};
use crate::optim::{AdamState, DISCRIMINATOR_LR, GENERATOR_LR};
use crate::rng::Rng;
use crate::store::ParamStore;

/// Sparsity levels of the final evaluation, ascending.
pub const EVAL_SPARSITIES: [f64; 4] = [0.0, 0.3, 0.5, 0.7];

/// Weight of the L2 term in the adversarial generator loss.
pub const ADV_L2_WEIGHT: f64 = 10.0;

/// Step size for L2-only training.
pub const L2_MODE_LR: f64 = 2e-3;

/// A finite loss above this multiple of the first loss counts as divergence.
pub const BLOWUP_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    L2,
    Adversarial,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::L2 => "l2",
            TrainMode::Adversarial => "adv",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(TrainMode::L2),
            "adv" | "adversarial" => Ok(TrainMode::Adversarial),
            _ => Err(Error::Contract(format!("unknown training mode `{s}` (expected l2 or adv)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub height: usize,
    pub width: usize,
    pub regions: usize,
    pub seed: u64,
    pub iters: usize,
    pub sparsity: f64,
    pub mode: TrainMode,
    pub d: usize,
    pub depth: usize,
    pub heads: usize,
    pub gen_hidden: usize,
    pub disc_hidden: usize,
    /// Merger and generator step size.
    pub lr: f64,
    pub disc_lr: f64,
    /// Anneal both step sizes to zero along a half cosine.
    pub cosine_decay: bool,
    /// Independent mask draws averaged into each step.
    pub masks_per_step: usize,
    /// Mask draws averaged per evaluation level.
    pub eval_draws: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            regions: 4,
            seed: 42,
            iters: 500,
            sparsity: 0.5,
            mode: TrainMode::L2,
            d: 16,
            depth: 2,
            heads: 2,
            gen_hidden: 64,
            disc_hidden: 64,
            lr: L2_MODE_LR,
            disc_lr: DISCRIMINATOR_LR,
            cosine_decay: true,
            masks_per_step: 1,
            eval_draws: 8,
        }
    }
}

impl TrainConfig {
    /// Default config for `mode`, with the mode's generator step size.
    pub fn for_mode(mode: TrainMode) -> Self {
        let lr = match mode {
            TrainMode::L2 => L2_MODE_LR,
            TrainMode::Adversarial => GENERATOR_LR,
        };
        Self {
            mode,
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::Range {
                name: "sparsity",
                value: self.sparsity,
                expected: "within [0, 1]",
            });
        }
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Contract(format!(
                "width {} is not divisible into {} heads",
                self.d, self.heads
            )));
        }
        if self.gen_hidden == 0 || self.disc_hidden == 0 || self.eval_draws == 0 || self.masks_per_step == 0 {
            return Err(Error::Contract("hidden widths, mask draws and eval draws must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0 && self.disc_lr.is_finite() && self.disc_lr > 0.0) {
            return Err(Error::Contract("learning rates must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn merger_config(&self) -> MergerConfig {
        MergerConfig {
            variant: Variant::Tlam,
            width: self.d,
            depth: self.depth,
            heads: self.heads,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    /// Training loss per iteration, averaged over that step's mask draws
    /// (the L2 term in adversarial mode).
    pub loss: Vec<f64>,
    /// Hinge discriminator loss per iteration; adversarial mode only.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub disc_loss: Vec<f64>,
    pub initial_eval: BTreeMap<String, f64>,
    pub eval: BTreeMap<String, f64>,
    /// Eval loss with all labels present except the named one.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub per_label_ablation: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
}

impl TrainReport {
    pub fn diverged(&self) -> bool {
        self.failure.is_some()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn sparsity_key(s: f64) -> String {
    format!("s{s:.1}")
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub merger: MergerParams,
    pub heads: HeadParams,
    pub scene: Scene,
    /// Concept tensor of the dense scene under the final parameters.
    pub concept: ConceptTensor,
}

/// Fixed seeds shared by every evaluation level, so masks are nested in S.
fn eval_seeds(cfg: &TrainConfig) -> Vec<u64> {
    let mut rng = Rng::new(cfg.seed ^ 0xE7A1_0000_0000_0000);
    (0..cfg.eval_draws).map(|_| rng.split()).collect()
}

fn dense_eval(scene: &Scene, merger: &MergerParams, heads: &HeadParams, set: &LabelSet, exec: Exec) -> Result<f64> {
    let z = merge(set, merger, exec)?.concept;
    l2_loss(&forward_generate(&z, heads)?, &scene.target)
}

/// Mean eval loss at each of [`EVAL_SPARSITIES`].
pub fn evaluate(
    cfg: &TrainConfig,
    scene: &Scene,
    merger: &MergerParams,
    heads: &HeadParams,
    exec: Exec,
) -> Result<BTreeMap<String, f64>> {
    let seeds = eval_seeds(cfg);
    let mut out = BTreeMap::new();
    for s in EVAL_SPARSITIES {
        let mut total = 0.0;
        for &seed in &seeds {
            let masks = generate_sparse_masks(&scene.instances, &scene.labels, s, seed)?;
            total += dense_eval(scene, merger, heads, &apply_masks(&scene.labels, &masks)?, exec)?;
        }
        out.insert(sparsity_key(s), total / seeds.len() as f64);
    }
    Ok(out)
}

/// Eval loss with each label removed in turn, all others dense.
pub fn ablate_labels(scene: &Scene, merger: &MergerParams, heads: &HeadParams, exec: Exec) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (k, l) in scene.labels.labels().iter().enumerate() {
        let set = scene.labels.without_label(k);
        out.insert(l.name.clone(), dense_eval(scene, merger, heads, &set, exec)?);
    }
    Ok(out)
}

fn select(grads: ParamStore, keep: impl Fn(&str) -> bool) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, g) in grads.iter() {
        if keep(name) {
            out.insert(name.clone(), g.clone());
        }
    }
    out
}

fn mean_of(tape: &mut Tape, terms: &[Var], share: f64) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, share))
}

fn is_disc(name: &str) -> bool {
    name.starts_with(DISC_PREFIX) && name[DISC_PREFIX.len()..].starts_with('.')
}

/// Runs the toy loop. Divergence is not an error: it ends training early
/// and is recorded in `report.failure`.
pub fn train_toy(cfg: &TrainConfig, exec: Exec) -> Result<TrainOutcome> {
    cfg.validate()?;
    let scene = synth_scene(cfg.height, cfg.width, cfg.regions, cfg.seed)?;
    let mcfg = cfg.merger_config();
    let mut seeds = Rng::new(cfg.seed);
    let merger0 = MergerParams::init(mcfg, LabelBinding::from_set(&scene.labels), seeds.split())?;
    let heads0 = HeadParams::init(cfg.d, cfg.gen_hidden, cfg.disc_hidden, seeds.split());
    let mut mask_rng = Rng::new(seeds.split());

    let initial_eval = evaluate(cfg, &scene, &merger0, &heads0, exec)?;
    let mut store = merger0.to_store();
    store.extend(heads0.to_store());
    let target = image_rows(&scene.target)?;

    let mut gen_opt = AdamState::new(cfg.lr);
    let mut disc_opt = AdamState::new(cfg.disc_lr);
    let mut loss = Vec::with_capacity(cfg.iters);
    let mut disc_loss = Vec::new();
    let mut failure = None;

    for it in 0..cfg.iters {
        if cfg.cosine_decay {
            let f = 0.5 * (1.0 + (std::f64::consts::PI * it as f64 / cfg.iters as f64).cos());
            gen_opt.lr = cfg.lr * f;
            disc_opt.lr = cfg.disc_lr * f;
        }
        let sets = (0..cfg.masks_per_step)
            .map(|_| {
                let masks = generate_sparse_masks(&scene.instances, &scene.labels, cfg.sparsity, mask_rng.split())?;
                apply_masks(&scene.labels, &masks)
            })
            .collect::<Result<Vec<_>>>()?;
        let share = 1.0 / sets.len() as f64;

        if cfg.mode == TrainMode::Adversarial {
            let mut tape = Tape::new();
            let mut terms = Vec::with_capacity(sets.len());
            for set in &sets {
                let z = merge_on_tape(&mut tape, &store, &mcfg, set)?;
                let fake = generate_on_tape(&mut tape, &store, z)?;
                let real = tape.leaf(target.clone());
                let real_score = discriminate_on_tape(&mut tape, &store, z, real)?;
                let fake_score = discriminate_on_tape(&mut tape, &store, z, fake)?;
                terms.push(hinge_d_on_tape(&mut tape, real_score, fake_score)?);
            }
            let d_loss = mean_of(&mut tape, &terms, share)?;
            let value = tape.scalar(d_loss);
            disc_loss.push(value);
            if !value.is_finite() {
                failure = Some(Failure { iteration: it, loss: value });
                break;
            }
            let grads = tape.backward(d_loss)?.for_store(&store);
            disc_opt.step(&mut store, &select(grads, is_disc))?;
        }

        let mut tape = Tape::new();
        let (mut l2_terms, mut objective_terms) = (vec![], vec![]);
        for set in &sets {
            let z = merge_on_tape(&mut tape, &store, &mcfg, set)?;
            let img = generate_on_tape(&mut tape, &store, z)?;
            let tgt = tape.leaf(target.clone());
            let l2 = l2_on_tape(&mut tape, img, tgt)?;
            l2_terms.push(l2);
            objective_terms.push(match cfg.mode {
                TrainMode::L2 => l2,
                TrainMode::Adversarial => {
                    let score = discriminate_on_tape(&mut tape, &store, z, img)?;
                    let g = hinge_g_on_tape(&mut tape, score);
                    let weighted = tape.scale(l2, ADV_L2_WEIGHT);
                    tape.add(g, weighted)?
                }
            });
        }
        let l2 = mean_of(&mut tape, &l2_terms, share)?;
        let objective = mean_of(&mut tape, &objective_terms, share)?;
        let value = tape.scalar(l2);
        loss.push(value);
        let blown = loss.first().is_some_and(|&first| value > BLOWUP_FACTOR * first.max(f64::MIN_POSITIVE));
        if !value.is_finite() || !tape.scalar(objective).is_finite() || blown {
            failure = Some(Failure { iteration: it, loss: value });
            break;
        }
        let grads = tape.backward(objective)?.for_store(&store);
        gen_opt.step(&mut store, &select(grads, |n| !is_disc(n)))?;
    }

    let merger = MergerParams::from_store(mcfg, merger0.labels.clone(), &store)?;
    let heads = HeadParams::from_store(&store)?;
    let (eval, per_label_ablation) = if failure.is_some() {
        (BTreeMap::new(), BTreeMap::new())
    } else if cfg.iters == 0 {
        (initial_eval.clone(), BTreeMap::new())
    } else {
        (
            evaluate(cfg, &scene, &merger, &heads, exec)?,
            ablate_labels(&scene, &merger, &heads, exec)?,
        )
    };
    let concept = merge(&scene.labels, &merger, exec)?.concept;
    Ok(TrainOutcome {
        report: TrainReport {
            config: cfg.clone(),
            loss,
            disc_loss,
            initial_eval,
            eval,
            per_label_ablation,
            failure,
        },
        merger,
        heads,
        scene,
        concept,
    })
}
