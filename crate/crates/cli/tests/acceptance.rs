//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed even when a
//! criterion fails; the process exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use labelfuse::fusion::{
    clam_merge, count_attention_macs, project_label, tlam_merge, Affine, Exec, LabelBinding, MergerConfig,
    MergerParams, Variant,
};
use labelfuse::gradcheck::{check_case, small_preset, GradCheckConfig};
use labelfuse::labels::{generate_sparse_masks, random_label_set, InstanceMap, LabelKind, LabelMap, LabelSet};
use labelfuse::mat::Mat;
use labelfuse::metrics::{mean_iou, pixel_accuracy, SegMap};
use labelfuse::nn::{gelu, mlp_block, msa_block, multi_head_self_attention, softmax, AttentionParams, BlockParams};
use labelfuse::optim::{AdamState, ADAM_BETA1, ADAM_BETA2};
use labelfuse::rng::Rng;
use labelfuse::store::ParamStore;
use labelfuse::tensor::Tensor;
use labelfuse::train::{sparsity_key, train_toy, TrainConfig, EVAL_SPARSITIES};
use labelfuse::tlt;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    ensure!(
        elapsed.as_secs_f64() <= limit_s,
        "{what} took {:.1}s (limit {limit_s}s)",
        elapsed.as_secs_f64()
    );
    Ok(())
}

fn random_mat(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    Mat::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

fn tlam(width: usize, depth: usize, heads: usize) -> MergerConfig {
    MergerConfig {
        variant: Variant::Tlam,
        width,
        depth,
        heads,
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let cases = small_preset();
    ensure!(cases.len() >= 5, "only {} configs", cases.len());
    let mut worst = 0f64;
    let mut checked = 0;
    for (i, case) in cases.iter().enumerate() {
        ensure!(case.size == 4 && [1, 3, 5].contains(&case.labels), "config {i} outside the grid");
        let r = check_case(case, 1000 + i as u64, &GradCheckConfig::default()).map_err(|e| e.to_string())?;
        ensure!(
            r.passed(),
            "config {i} (N={} d={} l={}): max rel err {:.3e}",
            case.labels,
            case.width,
            case.depth,
            r.max_rel_err
        );
        worst = worst.max(r.max_rel_err);
        checked += r.checked;
    }
    within(start.elapsed(), 60.0, "gradient suite")?;
    Ok(format!(
        "{} configs, {checked} elements, max rel err {worst:.2e}, {:.1}s",
        cases.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn absent_token_semantics() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(11);
    let proj = Affine {
        a: random_mat(8, 3, &mut rng),
        b: random_mat(1, 8, &mut rng),
    };
    let junk = [rng.normal(), rng.normal(), rng.normal()];
    let token = project_label(&junk, false, &proj).map_err(|e| e.to_string())?;
    let expect: Vec<f64> = proj.b.data.iter().map(|&b| gelu(b)).collect();
    ensure!(
        token.iter().zip(&expect).all(|(a, b)| a.to_bits() == b.to_bits()),
        "absent token differs from gelu(b)"
    );

    let set = random_label_set(3, 6, 6, 0.4, 12).map_err(|e| e.to_string())?;
    let p = MergerParams::init(tlam(8, 2, 2), LabelBinding::from_set(&set), 13).map_err(|e| e.to_string())?;
    let base = tlam_merge(&set, &p).map_err(|e| e.to_string())?.concept;
    let mut scrambled = Vec::new();
    for l in set.labels() {
        let c = l.channels();
        let mut values = l.value_slice().to_vec();
        for pix in 0..set.pixels() {
            if !l.is_present(pix) {
                values[pix * c..(pix + 1) * c].iter_mut().for_each(|v| *v = 1e3 * rng.normal() as f32);
            }
        }
        let t = Tensor::from_f32(l.values().dims().to_vec(), values).unwrap();
        scrambled.push(LabelMap::new(l.name.clone(), l.kind, t, l.mask().clone()).unwrap());
    }
    let scrambled = LabelSet::new(scrambled).unwrap();
    let other = tlam_merge(&scrambled, &p).map_err(|e| e.to_string())?.concept;
    ensure!(base.tensor().bit_eq(other.tensor()), "concept changed with masked values");
    within(start.elapsed(), 1.0, "absent-token checks")?;
    Ok(format!("bit-exact, {:.3}s", start.elapsed().as_secs_f64()))
}

fn block_structure() -> Outcome {
    let mut rng = Rng::new(21);
    let mut block = BlockParams::init(8, 2, &mut rng).unwrap();
    for m in [&mut block.ln1.beta, &mut block.ln2.beta, &mut block.mlp.b1] {
        m.data.iter_mut().for_each(|x| *x = 0.3 * rng.normal());
    }
    let z = random_mat(5, 8, &mut rng);
    block.attn.wo = Mat::zeros(8, 8);
    block.attn.bo = Mat::zeros(1, 8);
    ensure!(msa_block(&z, &block).unwrap() == z, "zeroed attention branch is not the identity");
    block.mlp.w2 = Mat::zeros(32, 8);
    block.mlp.b2 = Mat::zeros(1, 8);
    ensure!(mlp_block(&z, &block).unwrap() == z, "zeroed MLP branch is not the identity");

    let mut worst_row = 0f64;
    for _ in 0..200 {
        let n = 1 + rng.below(8);
        let v: Vec<f64> = (0..n).map(|_| 10.0 * rng.normal()).collect();
        let s = softmax(&v);
        ensure!(s.iter().all(|&x| x >= 0.0), "negative probability");
        worst_row = worst_row.max((s.iter().sum::<f64>() - 1.0).abs());
    }
    ensure!(worst_row <= 1e-12, "softmax row sum error {worst_row:e}");

    let set = random_label_set(4, 5, 5, 0.3, 22).unwrap();
    let p = MergerParams::init(tlam(8, 2, 2), LabelBinding::from_set(&set), 23).unwrap();
    let base = tlam_merge(&set, &p).unwrap().concept;
    let perm = [2usize, 0, 3, 1];
    let permuted_set = LabelSet::new(perm.iter().map(|&k| set.labels()[k].clone()).collect()).unwrap();
    let mut q = p.clone();
    q.labels = perm.iter().map(|&k| p.labels[k].clone()).collect();
    q.projections = perm.iter().map(|&k| p.projections[k].clone()).collect();
    q.encodings = perm.iter().map(|&k| p.encodings[k].clone()).collect();
    let other = tlam_merge(&permuted_set, &q).unwrap().concept;
    let scale = base.data().iter().fold(0f64, |m, x| m.max(x.abs()));
    let worst = base
        .data()
        .iter()
        .zip(other.data())
        .fold(0f64, |m, (a, b)| m.max((a - b).abs() / scale));
    ensure!(worst <= 1e-6, "permutation changed output by {worst:e}");
    Ok(format!(
        "identities exact, softmax err {worst_row:.1e}, permutation err {worst:.1e}"
    ))
}

fn mac_counter() -> Outcome {
    let run = |n: usize, h: usize, w: usize| -> Result<u64, String> {
        let set = random_label_set(n, h, w, 0.2, 31).map_err(|e| e.to_string())?;
        let p = MergerParams::init(tlam(12, 2, 3), LabelBinding::from_set(&set), 32).map_err(|e| e.to_string())?;
        let macs = tlam_merge(&set, &p).map_err(|e| e.to_string())?.attention_macs;
        let formula = (h * w) as u64 * 2 * 3 * 2 * (n * n) as u64 * 4;
        ensure!(macs == formula, "N={n} {h}x{w}: counted {macs}, formula {formula}");
        ensure!(macs == count_attention_macs(n, 12, 3, 2, h * w), "count_attention_macs disagrees");
        Ok(macs)
    };
    let base = run(3, 4, 4)?;
    let double_n = run(6, 4, 4)?;
    let double_hw = run(3, 8, 4)?;
    ensure!(double_n == 4 * base, "doubling N: {base} -> {double_n}");
    ensure!(double_hw == 2 * base, "doubling HW: {base} -> {double_hw}");
    Ok(format!("{base} MACs; x{} for 2N, x{} for 2HW", double_n / base, double_hw / base))
}

/// Pixel-by-pixel counts for one class, written independently of the
/// library's confusion bookkeeping.
fn brute_metrics(pred: &[u32], gt: &[u32], k: usize) -> (f64, f64) {
    let mut ious = Vec::new();
    for c in 0..k as u32 {
        let mut inter = 0;
        let mut union = 0;
        for i in 0..pred.len() {
            let (p, g) = (pred[i] == c, gt[i] == c);
            if p && g {
                inter += 1;
            }
            if p || g {
                union += 1;
            }
        }
        if union > 0 {
            ious.push(inter as f64 / union as f64);
        }
    }
    let miou = ious.iter().sum::<f64>() / ious.len() as f64;
    let same = pred.iter().zip(gt).filter(|(a, b)| a == b).count();
    (miou, same as f64 / pred.len() as f64)
}

fn oracle_equivalences() -> Outcome {
    let set = random_label_set(3, 5, 5, 0.3, 41).unwrap();
    let labels = LabelBinding::from_set(&set);
    let mut t = MergerParams::init(tlam(8, 0, 2), labels.clone(), 42).unwrap();
    t.encodings.iter_mut().for_each(|e| *e = Mat::zeros(1, 8));
    let mut c = MergerParams::init(MergerConfig { variant: Variant::Clam, ..t.config }, labels, 0).unwrap();
    c.projections = t.projections.clone();
    let zt = tlam_merge(&set, &t).unwrap().concept;
    let zc = clam_merge(&set, &c).unwrap().concept;
    ensure!(zt.tensor().bit_eq(zc.tensor()), "CLAM(l=0) differs from TLAM(l=0)");

    let one = Mat::filled(1, 1, 1.0);
    let scalar = AttentionParams {
        heads: 1,
        wq: one.clone(),
        wk: one.clone(),
        wv: one.clone(),
        wo: one,
        bo: Mat::zeros(1, 1),
    };
    let out = multi_head_self_attention(&Mat::from_rows(&[vec![0.0], vec![1.0]]).unwrap(), &scalar).unwrap();
    let e = std::f64::consts::E;
    ensure!(
        (out.data[0] - 0.5).abs() <= 1e-12 && (out.data[1] - e / (1.0 + e)).abs() <= 1e-12,
        "two-token attention {:?}",
        out.data
    );

    // Brute-force two-token, two-head attention.
    let mut rng = Rng::new(43);
    let p = AttentionParams::init(4, 2, &mut rng).unwrap();
    let z = random_mat(2, 4, &mut rng);
    let got = multi_head_self_attention(&z, &p).unwrap();
    let (q, k, v) = (z.matmul(&p.wq).unwrap(), z.matmul(&p.wk).unwrap(), z.matmul(&p.wv).unwrap());
    let mut concat = Mat::zeros(2, 4);
    for head in 0..2 {
        let cols = head * 2..head * 2 + 2;
        for i in 0..2 {
            let s: Vec<f64> = (0..2)
                .map(|j| cols.clone().map(|c| q.at(i, c) * k.at(j, c)).sum::<f64>() / 2f64.sqrt())
                .collect();
            let w0 = 1.0 / (1.0 + (s[1] - s[0]).exp());
            for c in cols.clone() {
                concat.data[i * 4 + c] = w0 * v.at(0, c) + (1.0 - w0) * v.at(1, c);
            }
        }
    }
    let want = concat.matmul(&p.wo).unwrap().add_row(&p.bo).unwrap();
    let err = got.data.iter().zip(&want.data).fold(0f64, |m, (a, b)| m.max((a - b).abs()));
    ensure!(err <= 1e-12, "two-head oracle error {err:e}");

    let mut rng = Rng::new(44);
    for case in 0..1000 {
        let k = 1 + rng.below(4);
        let pred: Vec<u32> = (0..64).map(|_| rng.below(k) as u32).collect();
        let gt: Vec<u32> = (0..64).map(|_| rng.below(k) as u32).collect();
        let (bm, ba) = brute_metrics(&pred, &gt, k);
        let pm = SegMap::new(8, 8, k, pred).unwrap();
        let gm = SegMap::new(8, 8, k, gt).unwrap();
        ensure!(mean_iou(&pm, &gm).unwrap() == bm, "mIoU mismatch in case {case}");
        ensure!(pixel_accuracy(&pm, &gm).unwrap() == ba, "accuracy mismatch in case {case}");
    }
    Ok(format!("CLAM/TLAM bit-equal, attention err {err:.1e}, 1000 metric cases exact"))
}

fn sparsity_protocol() -> Outcome {
    let dense_labels = |n: usize, h: usize, w: usize| {
        LabelSet::new(
            (0..n)
                .map(|k| {
                    let t = Tensor::from_f32(vec![h, w, 1], vec![1.0; h * w]).unwrap();
                    LabelMap::dense(format!("l{k}"), LabelKind::Continuous, t).unwrap()
                })
                .collect(),
        )
        .unwrap()
    };
    // 2000 single-pixel regions × 5 labels = 10 000 pairs.
    let inst = InstanceMap::new(40, 50, (0..2000).collect()).unwrap();
    let labels = dense_labels(5, 40, 50);
    let mut rates = Vec::new();
    for s in [0.1, 0.3, 0.5, 0.7] {
        let m = generate_sparse_masks(&inst, &labels, s, 51).unwrap();
        let rate = m.absent_fraction();
        ensure!((rate - s).abs() <= 0.02, "S={s}: drop rate {rate}");
        rates.push(rate);
    }

    let ids: Vec<u32> = (0..24 * 24).map(|p| ((p / 24) / 6 * 4 + (p % 24) / 6) as u32).collect();
    let blocky = InstanceMap::new(24, 24, ids.clone()).unwrap();
    let m = generate_sparse_masks(&blocky, &dense_labels(3, 24, 24), 0.5, 52).unwrap();
    for mask in &m.masks {
        for p in 0..ids.len() {
            let first = ids.iter().position(|&r| r == ids[p]).unwrap();
            ensure!(mask[p] == mask[first], "mask not constant on region {}", ids[p]);
        }
    }

    let inst = InstanceMap::new(100, 100, (0..10_000).collect()).unwrap();
    let m = generate_sparse_masks(&inst, &dense_labels(2, 100, 100), 0.5, 53).unwrap();
    let a: Vec<f64> = m.masks[0].iter().map(|&x| f64::from(x)).collect();
    let b: Vec<f64> = m.masks[1].iter().map(|&x| f64::from(x)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&a), mean(&b));
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    let corr = cov / (var(&a, ma) * var(&b, mb)).sqrt();
    ensure!(corr.abs() <= 0.03, "cross-label correlation {corr}");
    Ok(format!("drop rates {rates:.4?}, region-constant, corr {corr:+.4}"))
}

fn toy_training() -> Outcome {
    let start = Instant::now();
    let cfg = TrainConfig::default();
    ensure!(
        (cfg.height, cfg.width, cfg.regions, cfg.d, cfg.depth, cfg.iters, cfg.seed) == (16, 16, 4, 16, 2, 500, 42)
            && cfg.sparsity == 0.5,
        "default toy config drifted"
    );
    let out = train_toy(&cfg, Exec::default()).map_err(|e| e.to_string())?;
    let r = &out.report;
    ensure!(r.failure.is_none(), "diverged: {:?}", r.failure);

    // Training objective before and after, on the same fixed S = 0.5 mask draws.
    let key = sparsity_key(cfg.sparsity);
    let ratio = r.eval[&key] / r.initial_eval[&key];
    let step_ratio = r.loss[r.loss.len() - 1] / r.loss[0];
    ensure!(
        ratio <= 0.1,
        "train loss ratio {ratio:.4} (single-draw iteration ratio {step_ratio:.4})"
    );

    let levels: Vec<f64> = EVAL_SPARSITIES.iter().map(|&s| r.eval[&sparsity_key(s)]).collect();
    for w in levels.windows(2) {
        ensure!(w[1] >= w[0] / 1.05, "eval not monotone in sparsity: {levels:.5?}");
    }
    let dense = levels[0];
    for (name, &loss) in &r.per_label_ablation {
        ensure!(loss >= dense, "dropping {name} lowered eval loss: {loss:.5} < {dense:.5}");
    }
    ensure!(r.per_label_ablation.len() == 5, "ablation covers {} labels", r.per_label_ablation.len());
    within(start.elapsed(), 300.0, "toy training")?;
    let min_abl = r.per_label_ablation.values().fold(f64::INFINITY, |m, &v| m.min(v / dense));
    Ok(format!(
        "loss ratio {ratio:.4} (iteration {step_ratio:.4}), eval {levels:.4?}, min ablation x{min_abl:.2}, {:.0}s",
        start.elapsed().as_secs_f64()
    ))
}

fn optimizer() -> Outcome {
    ensure!(ADAM_BETA1 == 0.0 && ADAM_BETA2 == 0.999, "betas");
    let single = |v: f64| {
        let mut s = ParamStore::new();
        s.insert("w", Mat::filled(1, 1, v));
        s
    };
    let (lr, g) = (0.01, 0.7);
    let mut p = single(0.0);
    let mut adam = AdamState::new(lr);
    adam.step(&mut p, &single(g)).unwrap();
    let first = p.get("w").unwrap().data[0];
    ensure!((first.abs() - lr).abs() <= 1e-6 * lr, "first step {first}");
    adam.step(&mut p, &single(g)).unwrap();

    let b2 = 0.999f64;
    let v1 = (1.0 - b2) * g * g;
    let th1 = 0.0 - lr * (g / 1.0) / ((v1 / (1.0 - b2)).sqrt() + 1e-8);
    let v2 = b2 * v1 + (1.0 - b2) * g * g;
    let th2 = th1 - lr * (g / 1.0) / ((v2 / (1.0 - b2 * b2)).sqrt() + 1e-8);
    ensure!(first == th1, "step 1: {first} vs {th1}");
    let second = p.get("w").unwrap().data[0];
    ensure!(second == th2, "step 2: {second} vs {th2}");
    Ok(format!("theta {first:.9} -> {second:.9}, exact"))
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_labelfuse"))
            .args(["--threads", "1", "--seed", "42", "train-toy", "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(status.status.success(), "train-toy failed: {}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(&out).map_err(|e| e.to_string())
    };
    let a = run("a.json")?;
    let b = run("b.json")?;
    ensure!(a == b, "reports differ");

    let mut rng = Rng::new(91);
    for i in 0..100 {
        let rank = rng.below(4) + 1;
        let dims: Vec<usize> = (0..rank).map(|_| rng.below(5) + 1).collect();
        let n: usize = dims.iter().product();
        let t = match i % 3 {
            0 => Tensor::from_f32(dims, (0..n).map(|_| rng.normal() as f32).collect()),
            1 => Tensor::from_f64(dims, (0..n).map(|_| rng.normal()).collect()),
            _ => Tensor::from_u8(dims, (0..n).map(|_| rng.below(256) as u8).collect()),
        }
        .unwrap();
        let mut buf = Vec::new();
        tlt::write_tensor(&t, &mut buf).unwrap();
        let back = tlt::read_tensor(buf.as_slice()).unwrap();
        ensure!(back.bit_eq(&t), "tensor {i} ({:?}) changed", t.dtype());
    }
    Ok(format!("{}-byte report identical across runs, 100 tensors round-trip", a.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient suite", gradient_suite),
        ("absent-token semantics", absent_token_semantics),
        ("block structure", block_structure),
        ("attention MAC counter", mac_counter),
        ("oracle equivalences", oracle_equivalences),
        ("sparsity protocol", sparsity_protocol),
        ("toy training", toy_training),
        ("optimizer", optimizer),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
