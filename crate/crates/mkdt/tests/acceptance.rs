//! Acceptance checks, one line per criterion. Runs with its own harness so
//! the PASS/FAIL lines always reach the test output; pass substrings as
//! arguments to run a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use mkdt::checkpoint::Checkpoint;
use mkdt::format::{encode_clip, read_clip, read_dataset, read_manifest, write_dataset};
use mkdt::metrics::{read_metrics, Kind};
use mkdt::Rayon;
use mkdt_core::backbone::attention::{bias_table_len, register_bias_table, WindowAttention};
use mkdt_core::backbone::block::{BlockSpec, SwinBlock};
use mkdt_core::backbone::grid::{window_partition, window_reverse, TokenGrid, Windows};
use mkdt_core::backbone::layers::{gelu, LAYER_NORM_EPS};
use mkdt_core::backbone::{Backbone, BackboneConfig, ParamLayout};
use mkdt_core::data::{
    all_split_plans, denormalize_frames, generate_synthetic_dataset, make_cross_view_split, normalize_frames,
    sample_indices, Dataset, Frames, Normalization, Preprocess, SynthConfig,
};
use mkdt_core::distill::{kl_distill, student_losses, FusionMode, LossWeights, Mkdt, Networks, TeacherOutput};
use mkdt_core::gradcheck::gradcheck_mkdt;
use mkdt_core::matrix::{execute_run, RunMode, RunResult, RunSettings, RunSpec};
use mkdt_core::report::ReportTable;
use mkdt_core::rng::seeded;
use mkdt_core::train::TrainConfig;
use rand::Rng;
use rayon::prelude::*;
use serde_json::Value;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed < Duration::from_secs(limit_s), || format!("took {elapsed:.1?}, limit {limit_s} s"))
}

fn uniform_f32(n: usize, scale: f32, seed: u64) -> Vec<f32> {
    let mut r = seeded(seed);
    (0..n).map(|_| r.gen_range(-scale..scale)).collect()
}

fn coords(dims: [usize; 3], i: usize) -> [usize; 3] {
    [i / (dims[1] * dims[2]), (i / dims[2]) % dims[1], i % dims[2]]
}

/// Bias table row for the offset `a - b`, indexed independently of the library.
fn bias_row(window: [usize; 3], a: [usize; 3], b: [usize; 3]) -> usize {
    let span = |ax: usize| 2 * window[ax] - 1;
    let off = |ax: usize| (a[ax] as isize - b[ax] as isize + window[ax] as isize - 1) as usize;
    (off(0) * span(1) + off(1)) * span(2) + off(2)
}

fn linear64(p: &[f32], weight: usize, bias: Option<usize>, inp: usize, out: usize, x: &[f64]) -> Vec<f64> {
    let rows = x.len() / inp;
    let mut y = vec![0.0; rows * out];
    for r in 0..rows {
        for o in 0..out {
            let mut s = bias.map_or(0.0, |b| p[b + o] as f64);
            for i in 0..inp {
                s += x[r * inp + i] * p[weight + i * out + o] as f64;
            }
            y[r * out + o] = s;
        }
    }
    y
}

/// Multi-head attention over all tokens, restricted to pairs `allowed(i, j)`,
/// in double precision.
fn reference_attention(
    attn: &WindowAttention,
    p: &[f32],
    x: &[f64],
    dims: [usize; 3],
    allowed: impl Fn(usize, usize) -> bool,
) -> Vec<f64> {
    let (c, heads) = (attn.dim, attn.heads);
    let hd = c / heads;
    let n = x.len() / c;
    let qkv = linear64(p, attn.qkv.weight, attn.qkv.bias, c, 3 * c, x);
    let table = attn.bias_table;
    let mut ctx = vec![0.0; n * c];
    for h in 0..heads {
        for i in 0..n {
            let js: Vec<usize> = (0..n).filter(|&j| allowed(i, j)).collect();
            let scores: Vec<f64> = js
                .iter()
                .map(|&j| {
                    let dot: f64 = (0..hd).map(|e| qkv[i * 3 * c + h * hd + e] * qkv[j * 3 * c + c + h * hd + e]).sum();
                    let row = bias_row(attn.window, coords(dims, i), coords(dims, j));
                    dot / (hd as f64).sqrt() + p[table + row * heads + h] as f64
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (&j, e) in js.iter().zip(&exps) {
                for d in 0..hd {
                    ctx[i * c + h * hd + d] += e / z * qkv[j * 3 * c + 2 * c + h * hd + d];
                }
            }
        }
    }
    linear64(p, attn.proj.weight, attn.proj.bias, c, c, &ctx)
}

fn layer_norm64(p: &[f32], weight: usize, bias: usize, dim: usize, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for row in y.chunks_mut(dim) {
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * rstd * p[weight + k] as f64 + p[bias + k] as f64;
        }
    }
    y
}

fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let (dims, c, heads) = ([4, 8, 8], 24, 3);
    let mut layout = ParamLayout::default();
    let table = register_bias_table(&mut layout, "bias", dims, heads);
    let attn = WindowAttention::new(&mut layout, "attn", c, heads, dims, table);
    assert_eq!(layout.len() - table - bias_table_len(dims) * heads, 3 * c * c + 3 * c + c * c + c);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let p = uniform_f32(layout.len(), 0.3, 1000 + trial);
        let x = uniform_f32(4 * 8 * 8 * c, 1.0, 2000 + trial);
        let grid = TokenGrid::new(dims, c, x.clone()).unwrap();
        let windows = window_partition(&grid, dims);
        let (y, _) = attn.forward(&p, &windows.data, None);
        let out = window_reverse(&Windows { data: y, ..windows }, dims);
        let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let reference = reference_attention(&attn, &p, &x64, dims, |_, _| true);
        worst = worst.max(max_abs_diff(&out.data, &reference));
    }
    ensure(worst < 1e-5, || format!("max abs diff {worst:e}"))?;
    within(start.elapsed(), 10)?;
    Ok(format!("20 grids 4x8x8x24, max abs diff {worst:.2e}, {:.1?}", start.elapsed()))
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let (dims, window, shift, c, heads) = ([4, 8, 8], [2, 4, 4], [1, 2, 2], 24, 3);
    let mut layout = ParamLayout::default();
    let table = register_bias_table(&mut layout, "bias", window, heads);
    let spec = BlockSpec {
        dim: c,
        heads,
        hidden: 4 * c,
        dims,
        window,
        shift,
        bias_table: table,
        drop_path: 0.0,
        dropout: 0.0,
    };
    let block = SwinBlock::new(&mut layout, "block", spec);
    assert!(block.is_shifted());
    // region of a coordinate in the real, non-cyclic shifted tiling
    let region = |p: [usize; 3]| -> [usize; 3] { std::array::from_fn(|a| (p[a] + window[a] - shift[a]) / window[a]) };
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let p = uniform_f32(layout.len(), 0.3, 3000 + trial);
        let x = uniform_f32(4 * 8 * 8 * c, 1.0, 4000 + trial);
        let (y, _) = block.forward(&p, &x, None);

        let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let n1 = layer_norm64(&p, block.norm1.weight, block.norm1.bias, c, &x64);
        let attn_out =
            reference_attention(&block.attn, &p, &n1, dims, |i, j| region(coords(dims, i)) == region(coords(dims, j)));
        let x1: Vec<f64> = x64.iter().zip(&attn_out).map(|(a, b)| a + b).collect();
        let n2 = layer_norm64(&p, block.norm2.weight, block.norm2.bias, c, &x1);
        let h: Vec<f64> = linear64(&p, block.fc1.weight, block.fc1.bias, c, 4 * c, &n2).into_iter().map(gelu).collect();
        let m = linear64(&p, block.fc2.weight, block.fc2.bias, 4 * c, c, &h);
        let reference: Vec<f64> = x1.iter().zip(&m).map(|(a, b)| a + b).collect();
        worst = worst.max(max_abs_diff(&y, &reference));
    }
    ensure(worst < 1e-5, || format!("max abs diff {worst:e}"))?;
    within(start.elapsed(), 30)?;
    Ok(format!("20 grids, window 2x4x4 shift 1x2x2, max abs diff {worst:.2e}, {:.1?}", start.elapsed()))
}

fn prepared_views(backbone: &Backbone, seed: u64) -> (BTreeMap<u32, Vec<f64>>, usize) {
    let ds = generate_synthetic_dataset(&SynthConfig {
        n_actors: 1,
        clips_per_actor_per_class: 1,
        seed,
        ..Default::default()
    })
    .unwrap();
    let sample = Preprocess::default().sample(&ds.samples()[1]).unwrap();
    let views = sample
        .views
        .iter()
        .filter(|(&v, _)| v != 1)
        .map(|(&v, f)| (v, backbone.input_from::<f64>(f).unwrap()))
        .collect();
    (views, sample.label)
}

fn criterion_3() -> Check {
    let start = Instant::now();
    let backbone = Backbone::new(BackboneConfig::default()).map_err(|e| e.to_string())?;
    let teacher: Vec<f64> = backbone.init_params(1);
    let student: Vec<f64> = backbone.init_params(2);
    let (views, label) = prepared_views(&backbone, 5);
    let mut parts = Vec::new();
    for mode in [FusionMode::Separate, FusionMode::Joint] {
        let model = Mkdt::new(backbone.clone(), LossWeights { gamma: 1.0, temperature: 1.0 }, mode).unwrap();
        let report = gradcheck_mkdt(&model, &teacher, &student, &views, label, 100, 7).map_err(|e| e.to_string())?;
        let err = report.max_rel_error();
        ensure(report.probe_count() >= 200, || format!("{mode:?}: only {} probes", report.probe_count()))?;
        ensure(err < 1e-4, || format!("{mode:?}: max rel error {err:e} at {:?}", report.teacher.worst()))?;
        parts.push(format!("{mode:?} {} probes max rel err {err:.2e}", report.probe_count()));
    }
    within(start.elapsed(), 120)?;
    Ok(format!("{}, {:.1?}", parts.join("; "), start.elapsed()))
}

fn criterion_4() -> Check {
    let start = Instant::now();
    let mut r = seeded(44);
    let mut logits = |n: usize| -> Vec<f64> { (0..n).map(|_| r.gen_range(-4.0..4.0)).collect() };
    let mut min_kl = f64::INFINITY;
    for trial in 0..500 {
        let per_view: BTreeMap<u32, Vec<f64>> = (1..=3).map(|v| (v, logits(5))).collect();
        let fused = mkdt_core::distill::fuse_logits(&per_view).unwrap();
        let teacher = TeacherOutput { per_view: per_view.clone(), fused: fused.clone() };
        let student: BTreeMap<u32, Vec<f64>> = (1..=3).map(|v| (v, logits(5))).collect();
        let label = trial % 5;
        for mode in [FusionMode::Separate, FusionMode::Joint] {
            let zero = LossWeights { gamma: 0.0, temperature: 1.0 + (trial % 3) as f64 };
            let l = student_losses(&teacher, &student, label, &zero, mode).unwrap();
            ensure(l.total_student == l.l_cls_student, || {
                format!("gamma 0: {} vs {}", l.total_student, l.l_cls_student)
            })?;
            for &k in l.l_kld_per_view.values() {
                min_kl = min_kl.min(k);
            }
            let matched: BTreeMap<u32, Vec<f64>> = match mode {
                FusionMode::Separate => per_view.clone(),
                FusionMode::Joint => per_view.keys().map(|&v| (v, fused.clone())).collect(),
            };
            let same = student_losses(&teacher, &matched, label, &LossWeights::default(), mode).unwrap();
            ensure(same.l_kld_per_view.values().all(|&k| k == 0.0), || {
                format!("{mode:?}: KL {:?} for matching logits", same.l_kld_per_view)
            })?;
        }
        let t = per_view[&1].clone();
        ensure(kl_distill(&t, &t, 2.0).unwrap() == 0.0, || "KL(p||p) != 0".into())?;
    }
    ensure(min_kl >= 0.0, || format!("negative KL {min_kl}"))?;

    // teacher gradients do not depend on gamma
    let backbone = Backbone::new(BackboneConfig { dropout: 0.1, drop_path: 0.1, ..Default::default() }).unwrap();
    let tp: Vec<f32> = backbone.init_params(3);
    let sp: Vec<f32> = backbone.init_params(4);
    let (views64, label) = prepared_views(&backbone, 9);
    let views: BTreeMap<u32, Vec<f32>> =
        views64.iter().map(|(&v, x)| (v, x.iter().map(|&a| a as f32).collect())).collect();
    let mut grads = Vec::new();
    for gamma in [0.0, 1.0, 10.0] {
        for mode in [FusionMode::Separate, FusionMode::Joint] {
            let model = Mkdt::new(backbone.clone(), LossWeights { gamma, temperature: 1.0 }, mode).unwrap();
            let step = model.sample_step(Networks::Both, Some(&tp), &sp, &views, label, Some(77)).unwrap();
            grads.push(step.teacher_grads.unwrap().iter().map(|g| g.to_bits()).collect::<Vec<u32>>());
        }
    }
    ensure(grads.iter().all(|g| g == &grads[0]), || "teacher gradients differ across gamma".into())?;
    ensure(grads[0].iter().any(|&b| f32::from_bits(b) != 0.0), || "teacher gradients are all zero".into())?;
    Ok(format!(
        "gamma=0 exact, min KL {min_kl:.3e}, teacher grads bit-identical for gamma 0/1/10, {:.1?}",
        start.elapsed()
    ))
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let ds = generate_synthetic_dataset(&SynthConfig { frames: 2, height: 8, width: 8, ..Default::default() }).unwrap();
    let plans = all_split_plans(&ds, 5, 0).map_err(|e| e.to_string())?;
    ensure(plans.len() == 15, || format!("{} plans, expected 15", plans.len()))?;
    let mut validated: BTreeMap<u32, BTreeMap<u32, usize>> = BTreeMap::new();
    for plan in &plans {
        let split = make_cross_view_split(&ds, plan).map_err(|e| e.to_string())?;
        let train_pairs: BTreeSet<(u32, u32)> =
            split.train.iter().flat_map(|s| s.clips.values().map(|c| (c.actor_id, c.view_id))).collect();
        let val_pairs: BTreeSet<(u32, u32)> = split.val.iter().map(|c| (c.actor_id, c.view_id)).collect();
        let train_actors: BTreeSet<u32> = train_pairs.iter().map(|p| p.0).collect();
        let val_actors: BTreeSet<u32> = val_pairs.iter().map(|p| p.0).collect();
        ensure(train_actors.is_disjoint(&val_actors), || format!("actor leakage in {plan:?}"))?;
        ensure(train_pairs.iter().all(|p| p.1 != plan.test_view), || format!("test view trained on in {plan:?}"))?;
        ensure(val_pairs.iter().all(|p| p.1 == plan.test_view), || format!("val clip off the test view in {plan:?}"))?;
        ensure(train_pairs.is_disjoint(&val_pairs), || format!("clip in both sets in {plan:?}"))?;
        let vtv_ok = split
            .val_train_views
            .iter()
            .all(|s| val_actors.contains(&s.actor_id) && !s.clips.contains_key(&plan.test_view));
        ensure(vtv_ok, || format!("teacher validation samples leak in {plan:?}"))?;
        let labels: BTreeSet<usize> = split.val.iter().map(|c| c.label).collect();
        ensure(labels.len() == ds.n_classes(), || format!("fold misses a class in {plan:?}"))?;
        for a in val_actors {
            *validated.entry(plan.test_view).or_default().entry(a).or_default() += 1;
        }
    }
    for (view, counts) in &validated {
        ensure(counts.len() == 10 && counts.values().all(|&n| n == 1), || {
            format!("view {view}: validation counts {counts:?}")
        })?;
    }
    Ok(format!("15 plans, no actor/view leakage, each actor validated once per test view, {:.1?}", start.elapsed()))
}

fn criterion_6() -> Check {
    let start = Instant::now();
    let seeds = [0u64, 1, 2];
    let ds = generate_synthetic_dataset(&SynthConfig::default()).unwrap();
    let jobs: Vec<(u64, RunMode)> = seeds.iter().flat_map(|&s| RunMode::ALL.map(|m| (s, m))).collect();
    let results: Vec<(u64, RunResult)> = jobs
        .par_iter()
        .map(|&(seed, mode)| {
            let settings = RunSettings { train: TrainConfig { seed, ..Default::default() }, ..Default::default() };
            let spec = RunSpec { test_view: ds.view_ids()[seed as usize % 3], fold: 0, mode };
            (seed, execute_run(&ds, &settings, 5, 0, spec, &Rayon, &mut ()).unwrap())
        })
        .collect();
    let mean = |f: &dyn Fn(&RunResult) -> Option<f64>| -> f64 {
        let v: Vec<f64> = results.iter().filter_map(|(_, r)| f(r)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let distilled = mean(&|r| (r.spec.mode == RunMode::MultiViewDistilled).then_some(r.accuracy));
    let baseline = mean(&|r| (r.spec.mode == RunMode::SingleViewBaseline).then_some(r.accuracy));
    let teacher_train_min =
        results.iter().filter_map(|(_, r)| r.teacher.as_ref().map(|t| t.train.fused)).fold(f64::INFINITY, f64::min);
    let fused = mean(&|r| r.teacher.as_ref().map(|t| t.val.fused));
    let best_single = mean(&|r| r.teacher.as_ref().map(|t| t.val.best_single_view()));
    for (seed, r) in &results {
        eprintln!(
            "  seed {seed} view {} {}: acc {:.3}{}",
            r.spec.test_view,
            r.spec.mode.as_str(),
            r.accuracy,
            r.teacher
                .as_ref()
                .map(|t| format!(
                    ", teacher train {:.3}, val fused {:.3} vs per-view {:?}",
                    t.train.fused, t.val.fused, t.val.per_view
                ))
                .unwrap_or_default()
        );
    }
    ensure(teacher_train_min >= 0.95, || format!("teacher training accuracy {teacher_train_min:.3} < 0.95"))?;
    ensure(distilled >= baseline - 0.02, || format!("distilled {distilled:.3} < baseline {baseline:.3} - 0.02"))?;
    ensure(fused > best_single, || format!("fused {fused:.3} <= best single view {best_single:.3}"))?;
    within(start.elapsed(), 20 * 60)?;
    Ok(format!(
        "teacher train acc min {teacher_train_min:.3}; student {distilled:.3} vs single-view baseline {baseline:.3}; \
         teacher fused {fused:.3} vs best single view {best_single:.3}; {:.1?}",
        start.elapsed()
    ))
}

const DETERMINISM_CONFIG: &str = r#"{
  "dataset": {"synth": {"n_classes": 4, "n_views": 3, "n_actors": 4, "clips_per_actor_per_class": 1,
                        "frames": 16, "height": 32, "width": 32, "view_noise": 0.1, "seed": 3}},
  "backbone": {"input": [8, 32, 32], "patch_size": [2, 4, 4], "embed_dim": 24,
               "stages": [{"depth": 2, "heads": 3}, {"depth": 2, "heads": 6}], "window": [2, 4, 4],
               "mlp_ratio": 4.0, "n_classes": 4, "drop_path": 0.1, "dropout": 0.1},
  "train": {"epochs": 3, "batch_size": 3, "seed": 11},
  "matrix": {"k_folds": 2},
  "run": {"test_view": 2, "fold": 1, "mode": "multi_view_distilled"}
}"#;

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn criterion_7() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.json");
    fs::write(&cfg, DETERMINISM_CONFIG).unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_mkdt"))
            .args(["--serial", "train", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        runs.push(files(&out.join("view2_fold1_multi_view_distilled")));
    }
    let (a, b) = (&runs[0], &runs[1]);
    ensure(a.keys().eq(b.keys()), || format!("artifact sets differ: {:?} vs {:?}", a.keys(), b.keys()))?;
    for (name, bytes) in a {
        if name == "config.json" {
            let strip = |b: &[u8]| {
                let mut v: Value = serde_json::from_slice(b).unwrap();
                v.as_object_mut().unwrap().remove("out");
                v
            };
            ensure(strip(bytes) == strip(&b[name]), || "config snapshots differ beyond `out`".into())?;
            continue;
        }
        ensure(bytes == &b[name], || format!("{name} differs between runs"))?;
    }
    let ckpts: Vec<&String> = a.keys().filter(|k| k.ends_with(".ckpt")).collect();
    ensure(!ckpts.is_empty() && a.contains_key("metrics.ndjson"), || format!("missing artifacts: {:?}", a.keys()))?;
    let run_dir = tmp.path().join("a/view2_fold1_multi_view_distilled");
    let records = read_metrics(&run_dir.join("metrics.ndjson")).map_err(|e| e.to_string())?;
    let epochs = records.iter().filter(|(k, _)| *k == Kind::Epoch).count();
    ensure(epochs == 3, || format!("{epochs} epoch records"))?;
    for name in &ckpts {
        let c = Checkpoint::load(&run_dir.join(name)).map_err(|e| e.to_string())?;
        ensure(c.teacher.is_some() && c.backbone.dropout > 0.0, || format!("{name}: unexpected contents"))?;
    }
    Ok(format!(
        "metrics log ({} records) and {} checkpoints byte-identical across two serial runs, {:.1?}",
        records.len(),
        ckpts.len(),
        start.elapsed()
    ))
}

fn values(row: &Value) -> Vec<f64> {
    row["values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect()
}

fn criterion_8() -> Check {
    let start = Instant::now();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/reference_tables.json");
    let fixtures: Vec<Value> = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let mut cells = 0;
    for f in &fixtures {
        let name = f["table"].as_str().unwrap();
        let caption = f["caption"].as_str().unwrap();
        let rows = f["rows"].as_array().unwrap();
        let table = match f["layout"].as_str().unwrap() {
            "methods_by_view" => {
                let cols: Vec<&str> = f["columns"].as_array().unwrap().iter().map(|c| c.as_str().unwrap()).collect();
                let vals: Vec<(String, Vec<f64>)> =
                    rows.iter().map(|r| (r["label"].as_str().unwrap().to_string(), values(r))).collect();
                let refs: Vec<(&str, &[f64])> = vals.iter().map(|(l, v)| (l.as_str(), v.as_slice())).collect();
                ReportTable::methods_by_view(caption, &cols, &refs)
            }
            "methods_by_grouped_view" => {
                let groups: Vec<(String, Vec<String>)> = serde_json::from_value(f["groups"].clone()).unwrap();
                let gcols: Vec<Vec<&str>> =
                    groups.iter().map(|(_, c)| c.iter().map(String::as_str).collect()).collect();
                let grefs: Vec<(&str, &[&str])> =
                    groups.iter().zip(&gcols).map(|((g, _), c)| (g.as_str(), c.as_slice())).collect();
                let vals: Vec<(String, Vec<f64>)> =
                    rows.iter().map(|r| (r["label"].as_str().unwrap().to_string(), values(r))).collect();
                let refs: Vec<(&str, &[f64])> = vals.iter().map(|(l, v)| (l.as_str(), v.as_slice())).collect();
                ReportTable::methods_by_grouped_view(caption, &grefs, &refs)
            }
            "single_vs_multi" => {
                let vals: Vec<(&str, &str, f64, f64)> = rows
                    .iter()
                    .map(|r| {
                        let v = values(r);
                        (r["dataset"].as_str().unwrap(), r["view"].as_str().unwrap(), v[0], v[1])
                    })
                    .collect();
                for (d, v, s, m) in &vals {
                    ensure(m >= s, || format!("{name} {d} {v}: multi-view {m} < single-view {s}"))?;
                }
                ReportTable::single_vs_multi(caption, &vals)
            }
            other => panic!("unknown layout {other}"),
        }
        .map_err(|e| format!("{name}: {e}"))?;
        let grid = table.grid().unwrap();
        let expected: Vec<Vec<String>> = f["expected"]
            .as_array()
            .unwrap()
            .iter()
            .map(|l| l.as_str().unwrap().split('\t').map(str::to_string).collect())
            .collect();
        ensure(grid == expected, || format!("{name}: rendered {grid:?}\nexpected {expected:?}"))?;
        let text = table.to_text().unwrap();
        for line in &expected {
            let tokens: Vec<&str> = line.iter().map(String::as_str).filter(|t| !t.is_empty()).collect();
            ensure(text.lines().any(|l| l.split_whitespace().eq(tokens.iter().copied())), || {
                format!("{name}: text grid lacks row {tokens:?}")
            })?;
        }
        let back = ReportTable::from_csv(caption, table.row_header.len(), &table.to_csv().unwrap()).unwrap();
        ensure(back == table, || format!("{name}: CSV round trip changed the table"))?;
        cells += table.rows.len() * table.columns.len();
    }
    Ok(format!(
        "{} reference tables reproduced ({cells} cells), CSV round trip exact, {:.1?}",
        fixtures.len(),
        start.elapsed()
    ))
}

type ClipBits = (usize, u32, u32, usize, [usize; 4], Vec<u32>);

fn bits(ds: &Dataset) -> Vec<ClipBits> {
    ds.samples()
        .iter()
        .flat_map(|s| {
            s.clips.values().map(move |c| {
                (
                    s.label,
                    s.actor_id,
                    c.view_id,
                    c.label,
                    c.frames.dims(),
                    c.frames.data.iter().map(|v| v.to_bits()).collect(),
                )
            })
        })
        .collect()
}

fn criterion_9() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let ds = generate_synthetic_dataset(&SynthConfig::default()).unwrap();
    write_dataset(tmp.path(), &ds).map_err(|e| e.to_string())?;
    let manifest = read_manifest(tmp.path()).unwrap();
    let clip_files = fs::read_dir(tmp.path().join("clips")).unwrap().count();
    ensure(manifest.samples.len() == 120 && clip_files == 360, || {
        format!("{} samples, {clip_files} clip files", manifest.samples.len())
    })?;
    let back = read_dataset(tmp.path()).map_err(|e| e.to_string())?;
    ensure(back.view_ids() == ds.view_ids() && back.n_classes() == ds.n_classes(), || "header fields differ".into())?;
    ensure(bits(&back) == bits(&ds), || "round trip is not bit-identical".into())?;

    let header = encode_clip(&Frames::zeros(8, 32, 32));
    let dims: Vec<u32> = header[4..20].chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    ensure(&header[..4] == b"MVK1" && dims == [8, 32, 32, 3], || format!("header {:?} {dims:?}", &header[..4]))?;

    let victim = tmp.path().join(&manifest.samples[7].clips["2"]);
    let mut bytes = fs::read(&victim).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&victim, &bytes).unwrap();
    let err = read_dataset(tmp.path()).unwrap_err().to_string();
    ensure(err.contains(victim.to_str().unwrap()), || format!("truncation error does not name the file: {err}"))?;
    bytes[0] = b'Z';
    fs::write(&victim, &bytes).unwrap();
    ensure(read_clip(&victim).unwrap_err().to_string().contains("magic"), || "bad magic not reported".into())?;

    ensure(sample_indices(20, 8) == [1, 3, 6, 8, 11, 13, 16, 18], || format!("{:?}", sample_indices(20, 8)))?;
    ensure(sample_indices(8, 8) == (0..8).collect::<Vec<_>>(), || format!("{:?}", sample_indices(8, 8)))?;
    ensure(sample_indices(3, 8) == [0, 0, 0, 1, 1, 2, 2, 2], || format!("{:?}", sample_indices(3, 8)))?;
    let x = Frames::new(2, 2, 2, uniform_f32(24, 1.0, 9).iter().map(|v| v.abs()).collect()).unwrap();
    let identity = Normalization { mean: [0.0; 3], std: [1.0; 3] };
    ensure(normalize_frames(&x, &identity).unwrap() == x, || "identity normalization changed data".into())?;
    let half = Normalization { mean: [0.5; 3], std: [0.5; 3] };
    let constant = Frames::new(1, 2, 2, vec![0.5; 12]).unwrap();
    ensure(normalize_frames(&constant, &half).unwrap().data.iter().all(|&v| v == 0.0), || {
        "0.5 does not map to 0".into()
    })?;
    let odd = Normalization { mean: [0.1, 0.4, 0.7], std: [0.2, 0.9, 0.3] };
    let back = denormalize_frames(&normalize_frames(&x, &odd).unwrap(), &odd).unwrap();
    let dev = back.data.iter().zip(&x.data).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    ensure(dev < 1e-6, || format!("denormalize(normalize(x)) off by {dev}"))?;
    ensure(normalize_frames(&x, &Normalization { mean: [0.0; 3], std: [1.0, 0.0, 1.0] }).is_err(), || {
        "zero std accepted".into()
    })?;
    Ok(format!(
        "120 samples / 360 clips round-trip bit-identical, format and preprocessing examples hold, {:.1?}",
        start.elapsed()
    ))
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 9] = [
        ("1 attention oracle equivalence", criterion_1),
        ("2 shift-mask oracle equivalence", criterion_2),
        ("3 gradient correctness", criterion_3),
        ("4 loss algebra", criterion_4),
        ("5 protocol audit", criterion_5),
        ("6 end-to-end single-view vs multi-view", criterion_6),
        ("7 determinism", criterion_7),
        ("8 report fidelity", criterion_8),
        ("9 data layer", criterion_9),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
