//! Central finite-difference verification of tape gradients.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::fusion::{LabelBinding, MergerConfig, MergerParams, Variant};
use crate::graph::{generate_on_tape, l2_on_tape, merge_on_tape};
use crate::heads::HeadParams;
use crate::labels::random_label_set;
use crate::mat::Mat;
use crate::rng::Rng;
use crate::store::ParamStore;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Stores larger than this are subsampled.
    pub full_limit: usize,
    /// Elements drawn when subsampling.
    pub sample: usize,
    pub seed: u64,
    /// Multiplies every analytic gradient; 1.0 except in negative controls.
    pub corrupt_scale: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            full_limit: 10_000,
            sample: 200,
            seed: 0,
            corrupt_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Worst relative error per parameter name.
    pub per_param: BTreeMap<String, f64>,
    pub failures: Vec<Mismatch>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.max_rel_err <= self.tol
    }

    /// Worst error over parameters grouped by `group(name)`.
    pub fn by_group(&self, group: impl Fn(&str) -> String) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (name, &e) in &self.per_param {
            let slot = out.entry(group(name)).or_insert(0f64);
            *slot = slot.max(e);
        }
        out
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compares tape gradients of `loss_fn` with central differences
/// `(f(θ+h) − f(θ−h)) / 2h` for every element of `store` (or a seeded
/// subsample of `sample` elements when the store exceeds `full_limit`).
pub fn finite_diff_check<F>(store: &ParamStore, loss_fn: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    let grads = tape.backward(loss)?.for_store(store);

    let names: Vec<String> = store.names().cloned().collect();
    let mut elements: Vec<(usize, usize)> = Vec::new();
    if store.numel() > cfg.full_limit {
        let mut rng = Rng::new(cfg.seed);
        let total = store.numel();
        let offsets: Vec<usize> = names
            .iter()
            .scan(0, |acc, n| {
                let start = *acc;
                *acc += store.get(n).map(|m| m.len()).unwrap_or(0);
                Some(start)
            })
            .collect();
        for _ in 0..cfg.sample {
            let flat = rng.below(total);
            let pi = offsets.partition_point(|&o| o <= flat) - 1;
            elements.push((pi, flat - offsets[pi]));
        }
    } else {
        for (pi, n) in names.iter().enumerate() {
            for i in 0..store.get(n)?.len() {
                elements.push((pi, i));
            }
        }
    }

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = loss_fn(&mut t, s)?;
        Ok(t.scalar(l))
    };

    let mut report = GradCheckReport {
        tol: cfg.tol,
        ..Default::default()
    };
    let mut probe = store.clone();
    for (pi, i) in elements {
        let name = &names[pi];
        let theta = store.get(name)?.data[i];
        probe.get_mut(name).expect("same names").data[i] = theta + cfg.step;
        let up = eval(&probe)?;
        probe.get_mut(name).expect("same names").data[i] = theta - cfg.step;
        let down = eval(&probe)?;
        probe.get_mut(name).expect("same names").data[i] = theta;

        let numeric = (up - down) / (2.0 * cfg.step);
        let analytic = grads.get(name)?.data[i] * cfg.corrupt_scale;
        let rel = relative_error(analytic, numeric);
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(rel);
        let slot = report.per_param.entry(name.clone()).or_insert(0.0);
        *slot = slot.max(rel);
        if !(rel <= cfg.tol) {
            report.failures.push(Mismatch {
                param: name.clone(),
                index: i,
                analytic,
                numeric,
                rel_err: rel,
            });
        }
    }
    Ok(report)
}

/// One end-to-end check: merger → generator → L2 against a random target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCase {
    pub labels: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub size: usize,
    pub variant: Variant,
}

/// Hidden width of the generator head used by the presets.
pub const CASE_GEN_HIDDEN: usize = 6;

/// Five TLAM configurations on 4×4 grids.
pub fn small_preset() -> Vec<GradCase> {
    let case = |labels, width, depth| GradCase {
        labels,
        width,
        depth,
        heads: 2,
        size: 4,
        variant: Variant::Tlam,
    };
    vec![case(1, 8, 1), case(3, 8, 2), case(5, 8, 1), case(3, 16, 1), case(5, 16, 2)]
}

/// The small preset plus wider, deeper and CLAM configurations.
pub fn full_preset() -> Vec<GradCase> {
    let mut cases = small_preset();
    cases.extend([
        GradCase { labels: 5, width: 12, depth: 3, heads: 3, size: 6, variant: Variant::Tlam },
        GradCase { labels: 4, width: 16, depth: 2, heads: 4, size: 5, variant: Variant::Tlam },
        GradCase { labels: 3, width: 8, depth: 2, heads: 1, size: 4, variant: Variant::Clam },
        GradCase { labels: 5, width: 16, depth: 3, heads: 2, size: 4, variant: Variant::Clam },
    ]);
    cases
}

pub fn preset(name: &str) -> Result<Vec<GradCase>> {
    match name {
        "small" => Ok(small_preset()),
        "full" => Ok(full_preset()),
        _ => Err(Error::Contract(format!("unknown gradcheck preset `{name}` (expected small or full)"))),
    }
}

/// Parameter group for reporting: `proj`, `enc`, `attn`, `ln`, `mlp`,
/// `clam` or `gen`.
pub fn param_group(name: &str) -> String {
    let mut parts = name.split('.');
    let head = parts.next().unwrap_or_default();
    if head.starts_with("block") {
        let part = parts.next().unwrap_or_default();
        return if part.starts_with("ln") { "ln".into() } else { part.into() };
    }
    head.into()
}

/// Builds the case's random labels, parameters and target from `seed` and
/// checks every gradient of the L2 loss.
pub fn check_case(case: &GradCase, seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let set = random_label_set(case.labels, case.size, case.size, 0.3, rng.split())?;
    let mcfg = MergerConfig {
        variant: case.variant,
        width: case.width,
        depth: case.depth,
        heads: case.heads,
    };
    let mut merger = MergerParams::init(mcfg, LabelBinding::from_set(&set), rng.split())?;
    // Nonzero biases, gains and encodings so every parameter path is generic.
    for b in merger.projections.iter_mut().map(|a| &mut a.b) {
        b.data.iter_mut().for_each(|v| *v = 0.3 * rng.normal());
    }
    for e in merger.encodings.iter_mut() {
        e.data.iter_mut().for_each(|v| *v = 0.3 * rng.normal());
    }
    for blk in merger.blocks.iter_mut() {
        for m in [&mut blk.ln1.gamma, &mut blk.ln2.gamma] {
            m.data.iter_mut().for_each(|v| *v = 1.0 + 0.2 * rng.normal());
        }
        for m in [&mut blk.ln1.beta, &mut blk.ln2.beta, &mut blk.attn.bo, &mut blk.mlp.b1, &mut blk.mlp.b2] {
            m.data.iter_mut().for_each(|v| *v = 0.2 * rng.normal());
        }
    }
    let heads = HeadParams::init(case.width, CASE_GEN_HIDDEN, 1, rng.split());
    let mut store = merger.to_store();
    let gen = heads.to_store();
    for (name, m) in gen.iter().filter(|(n, _)| n.starts_with("gen.")) {
        store.insert(name.clone(), m.clone());
    }
    let target = Mat::new(
        case.size * case.size,
        3,
        (0..case.size * case.size * 3).map(|_| rng.uniform()).collect(),
    )?;
    let loss = |tape: &mut Tape, s: &ParamStore| -> Result<Var> {
        let z = merge_on_tape(tape, s, &mcfg, &set)?;
        let img = generate_on_tape(tape, s, z)?;
        let t = tape.leaf(target.clone());
        l2_on_tape(tape, img, t)
    };
    finite_diff_check(&store, loss, cfg)
}
