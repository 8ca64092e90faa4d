use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use labelfuse::tlt;

fn labelfuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_labelfuse"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A synthetic 8×8 scene with tlam and clam parameter directories.
fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&labelfuse(d, &["synth", "--size", "8x8", "--regions", "3", "--out-dir", "scene"])), 0);
    for v in ["tlam", "clam"] {
        let out = labelfuse(
            d,
            &["init-params", "--manifest", "scene/manifest.json", "--variant", v, "--d", "6", "--blocks", "2", "--heads", "2", "--out", v],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    dir
}

#[test]
fn merge_variants_write_expected_shapes() {
    let dir = fixture();
    let d = dir.path();
    let out = labelfuse(d, &["merge", "--manifest", "scene/manifest.json", "--params", "tlam", "--variant", "tlam", "--out", "z.tlt"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("attention MACs: 38400"), "{}", stdout(&out));
    assert_eq!(tlt::load(d.join("z.tlt")).unwrap().dims(), &[8, 8, 6]);

    let out = labelfuse(d, &["merge", "--manifest", "scene/manifest.json", "--params", "clam", "--variant", "clam", "--out", "c.tlt"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(tlt::load(d.join("c.tlt")).unwrap().dims(), &[8, 8, 6]);

    // semantics 3 + depth 1 + normals 3 + edges 1 + curvature 1
    let out = labelfuse(d, &["merge", "--manifest", "scene/manifest.json", "--variant", "naive", "--out", "n.tlt"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(tlt::load(d.join("n.tlt")).unwrap().dims(), &[8, 8, 9]);
}

#[test]
fn validation_failures_exit_1() {
    let dir = fixture();
    let d = dir.path();
    let out = labelfuse(d, &["merge", "--manifest", "scene/manifest.json", "--params", "missing_params", "--out", "z.tlt"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("missing_params"), "{}", stderr(&out));

    let out = labelfuse(d, &["merge", "--manifest", "scene/manifest.json", "--params", "clam", "--variant", "tlam", "--out", "z.tlt"]);
    assert_eq!(code(&out), 1);
    assert_eq!(code(&labelfuse(d, &["merge", "--manifest", "nope.json", "--variant", "naive", "--out", "z.tlt"])), 1);
    assert_eq!(code(&labelfuse(d, &["merge", "--bogus-flag"])), 1);
    assert_eq!(code(&labelfuse(d, &["train-toy", "--sparsity", "1.5", "--out", "r.json"])), 1);
    assert_eq!(code(&labelfuse(d, &["bench", "--size", "8by8"])), 1);
    assert_eq!(code(&labelfuse(d, &["--help"])), 0);
}

#[test]
fn sparsify_extremes_and_reproducibility() {
    let dir = fixture();
    let d = dir.path();
    fs::create_dir_all(d.join("s0")).unwrap();
    let run = |s: &str, out: &str, seed: &str| {
        labelfuse(
            d,
            &["--seed", seed, "sparsify", "--manifest", "scene/manifest.json", "--instances", "scene/instances.tlt", "--sparsity", s, "--out-manifest", out],
        )
    };
    assert_eq!(code(&run("0", "s0/m.json", "1")), 0);
    for entry in fs::read_dir(d.join("s0")).unwrap() {
        let name = entry.unwrap().file_name();
        if name.to_string_lossy().ends_with(".tlt") {
            assert_eq!(fs::read(d.join("s0").join(&name)).unwrap(), fs::read(d.join("scene").join(&name)).unwrap());
        }
    }

    fs::create_dir_all(d.join("s1")).unwrap();
    assert_eq!(code(&run("1", "s1/m.json", "1")), 0);
    let mask = tlt::load(d.join("s1/depth.mask.tlt")).unwrap();
    assert!(mask.as_u8().unwrap().iter().all(|&m| m == 0));

    fs::create_dir_all(d.join("a")).unwrap();
    fs::create_dir_all(d.join("b")).unwrap();
    assert_eq!(code(&run("0.5", "a/m.json", "9")), 0);
    assert_eq!(code(&run("0.5", "b/m.json", "9")), 0);
    for name in ["semantics.mask.tlt", "normals.values.tlt", "m.json"] {
        assert_eq!(fs::read(d.join("a").join(name)).unwrap(), fs::read(d.join("b").join(name)).unwrap());
    }
}

#[test]
fn gradcheck_presets_and_negative_control() {
    let dir = tempfile::tempdir().unwrap();
    let out = labelfuse(dir.path(), &["gradcheck", "--preset", "small"]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    for group in ["attn", "enc", "gen", "ln", "mlp", "proj"] {
        assert!(text.lines().any(|l| l.starts_with(group)), "no {group} row in\n{text}");
    }

    let out = labelfuse(dir.path(), &["gradcheck", "--preset", "small", "--corrupt-gradient", "1.1"]);
    assert_eq!(code(&out), 2);
    assert!(stdout(&out).contains("FAIL"));
    assert_eq!(code(&labelfuse(dir.path(), &["gradcheck", "--preset", "huge"])), 1);
}

#[test]
fn train_toy_outputs_and_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = labelfuse(d, &["train-toy", "--iters", "0", "--out", "r0.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("r0.json")).unwrap()).unwrap();
    assert_eq!(report["loss"].as_array().unwrap().len(), 0);
    for key in ["s0.0", "s0.3", "s0.5", "s0.7"] {
        assert!(report["eval"][key].is_number());
    }
    assert!(d.join("r0.ppm").is_file());
    assert!(d.join("r0.params/params.json").is_file());
    assert!(d.join("r0.params/gen.w1.tlt").is_file());

    let out = labelfuse(d, &["train-toy", "--iters", "40", "--size", "8x8", "--regions", "3", "--out", "r.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("r.json")).unwrap()).unwrap();
    let loss: Vec<f64> = report["loss"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(loss.len(), 40);
    assert!(loss[35..].iter().sum::<f64>() < loss[..5].iter().sum::<f64>());
    assert_eq!(report["per_label_ablation"].as_object().unwrap().len(), 5);

    let merged = labelfuse(d, &["merge", "--manifest", "missing.json", "--params", "r.params", "--out", "z.tlt"]);
    assert_eq!(code(&merged), 1);

    let out = labelfuse(d, &["train-toy", "--iters", "50", "--size", "8x8", "--lr", "1e3", "--out", "bad.json"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged at iteration"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("bad.json")).unwrap()).unwrap();
    assert!(report["failure"]["iteration"].is_u64());
}

#[test]
fn adversarial_mode_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = labelfuse(dir.path(), &["train-toy", "--mode", "adv", "--iters", "5", "--size", "6x6", "--regions", "2", "--out", "adv.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("adv.json")).unwrap()).unwrap();
    assert_eq!(report["disc_loss"].as_array().unwrap().len(), 5);
    assert_eq!(report["config"]["mode"], "adversarial");
}

#[test]
fn bench_reports_exact_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let out = labelfuse(dir.path(), &["bench", "--labels", "3", "--size", "6x6", "--d", "8", "--blocks", "1", "--heads", "2", "--repeat", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("ratio 2N/N    4"), "{text}");
    assert!(text.contains("ratio 2HW/HW  2"), "{text}");
    assert!(text.contains("min") && text.contains("median"));
    assert!(text.contains("MACs      5184  (formula 5184)"), "{text}");
}

#[test]
fn visualize_rank_one_and_narrow_concepts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (h, w, c) = (4usize, 5usize, 4usize);
    let v = [1.0, -2.0, 0.5, 3.0];
    let data: Vec<f64> = (0..h * w).flat_map(|p| v.iter().map(move |x| x * p as f64)).collect();
    tlt::save(&labelfuse::Tensor::from_f64(vec![h, w, c], data).unwrap(), d.join("r1.tlt")).unwrap();
    let out = labelfuse(d, &["visualize", "--concept", "r1.tlt", "--out", "r1.ppm"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bytes = fs::read(d.join("r1.ppm")).unwrap();
    let header = format!("P6\n{w} {h}\n255\n");
    assert!(bytes.starts_with(header.as_bytes()));
    let px = &bytes[header.len()..];
    assert_eq!(px.len(), h * w * 3);
    assert!(px.chunks(3).all(|rgb| rgb[1] == 128 && rgb[2] == 128));

    tlt::save(&labelfuse::Tensor::from_f64(vec![2, 2, 2], vec![0.0; 8]).unwrap(), d.join("narrow.tlt")).unwrap();
    assert_eq!(code(&labelfuse(d, &["visualize", "--concept", "narrow.tlt", "--out", "n.ppm"])), 1);
}
