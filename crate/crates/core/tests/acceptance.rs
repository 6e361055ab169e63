//! Acceptance suite. Each check prints exactly one verdict line per criterion
//! (`criterion NN PASS|FAIL ...`) before asserting, so a red run still shows
//! the measured numbers. Runs under its own harness so the verdict lines are
//! never captured; non-flag arguments filter checks by substring.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sshnet_core::blocks::{
    attention_scores, masked_softmax, multi_branch_attention, topk_mask, NafBlock, ParamStore, SelectAxis,
    SparseOptions, SparseSelfAttention, SparseTransformerBlock, TopKConfig,
};
use sshnet_core::imgcore::{load_image, psnr, ssim_y, to_luma_ycbcr, Image};
use sshnet_core::losses::{mixed_loss, Vgg16};
use sshnet_core::sshnet::{infer_tiled, ForwardOutputs, FusionUnit, ModelConfig, SshNet, Variant};
use sshnet_core::synth::{
    build_corpus_from, builtin_assets, composite_watermark, procedural_scenes, CorpusConfig, CorruptionRanges,
    CorruptionSpec, Manifest, Split, WatermarkAsset,
};
use sshnet_core::trainer::{evaluate, EvalOptions, IdentityRestorer, StepLog, TrainConfig, TrainData, Trainer};

fn verdict(n: u32, title: &str, ok: bool, detail: &str) {
    println!("criterion {n:02} {} {title}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn cpu() -> Device {
    Device::Cpu
}

fn uniform_f32(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor::from_vec(v, shape, &cpu()).unwrap()
}

fn values_f64(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Criterion 1

fn sort_mask(row: &[f64], keep: usize) -> Vec<u8> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|a, b| row[*b].partial_cmp(&row[*a]).unwrap().then(a.cmp(b)));
    let mut m = vec![0u8; row.len()];
    for &i in &idx[..keep] {
        m[i] = 1;
    }
    m
}

/// Dense softmax over a row whose pruned entries were set to −∞.
fn masked_row_softmax(row: &[f64], mask: &[u8]) -> Vec<f64> {
    let filled: Vec<f64> = row.iter().zip(mask).map(|(&s, &m)| if m == 1 { s } else { f64::NEG_INFINITY }).collect();
    let max = filled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = filled.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn oracle_scores(q: &[f64], k: &[f64], temp: &[f64], heads: usize, d: usize, n: usize) -> Vec<f64> {
    let norm = |x: &[f64]| -> Vec<f64> {
        let s = (x.iter().map(|v| v * v).sum::<f64>() + 1e-12).sqrt();
        x.iter().map(|v| v / s).collect()
    };
    let mut out = vec![0.0; heads * d * d];
    for h in 0..heads {
        for i in 0..d {
            let qi = norm(&q[(h * d + i) * n..(h * d + i + 1) * n]);
            for j in 0..d {
                let kj = norm(&k[(h * d + j) * n..(h * d + j + 1) * n]);
                out[(h * d + i) * d + j] = qi.iter().zip(&kj).map(|(a, b)| a * b).sum::<f64>() * temp[h];
            }
        }
    }
    out
}

fn criterion_01_sparse_attention_matches_sort_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let topk = TopKConfig::default();
    let opts = SparseOptions::default();
    let heads = 2;
    let (mut mask_mismatches, mut worst_out, mut worst_scores) = (0usize, 0.0f64, 0.0f64);
    let draws = 1000;
    for draw in 0..draws {
        let d = [4, 8, 16][draw % 3];
        let n = 8 + draw % 17;
        let q = uniform_f32(&mut rng, &[1, heads, d, n]);
        let k = uniform_f32(&mut rng, &[1, heads, d, n]);
        let v = uniform_f32(&mut rng, &[1, heads, d, n]);
        let temp_vals: Vec<f32> = (0..heads).map(|_| rng.random_range(0.5f32..3.0)).collect();
        let temp = Tensor::from_vec(temp_vals, heads, &cpu()).unwrap();

        let scores = attention_scores(&q, &k, &temp).unwrap();
        let s = values_f64(&scores);
        let reference = oracle_scores(&values_f64(&q), &values_f64(&k), &values_f64(&temp), heads, d, n);
        worst_scores = worst_scores.max(max_abs_diff(&s, &reference));

        let kept = topk.kept_counts(d);
        let vv = values_f64(&v);
        let mut expected = vec![0.0; heads * d * n];
        for &keep in &kept {
            let mask = values_f64(&topk_mask(&scores, keep, SelectAxis::Row).unwrap());
            for (r, row) in s.chunks_exact(d).enumerate() {
                let oracle = sort_mask(row, keep);
                let got: Vec<u8> = mask[r * d..(r + 1) * d].iter().map(|&m| m as u8).collect();
                if got != oracle {
                    mask_mismatches += 1;
                }
                let p = masked_row_softmax(row, &oracle);
                let h = r / d;
                for t in 0..n {
                    let acc: f64 = (0..d).map(|j| p[j] * vv[(h * d + j) * n + t]).sum();
                    expected[r * n + t] += acc / kept.len() as f64;
                }
            }
        }
        let out = multi_branch_attention(&scores, &v, &kept, opts).unwrap();
        worst_out = worst_out.max(max_abs_diff(&values_f64(&out), &expected));
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = mask_mismatches == 0 && worst_out <= 1e-6 && worst_scores <= 1e-5 && secs < 60.0;
    verdict(
        1,
        "sparse attention vs full-sort oracle",
        ok,
        &format!(
            "{draws} draws, d_h in {{4,8,16}}, mask mismatches {mask_mismatches}, max output error {worst_out:.2e} (f32, tol 1e-6), max score error {worst_scores:.2e}, {secs:.1}s"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2

fn criterion_02_all_ones_rates_reduce_to_dense_attention() {
    let start = Instant::now();
    let (c, heads) = (16, 2);
    let build = |topk: TopKConfig| {
        let store = ParamStore::new(cpu(), DType::F32, 17);
        let layer = SparseSelfAttention::new(&store.root().pp("attn"), c, heads, &topk, SparseOptions::default()).unwrap();
        (store, layer)
    };
    let (_s1, sparse) = build(TopKConfig { rates: vec![1.0; 4] });
    let (_s2, dense) = build(TopKConfig::dense());
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (h, w) = [(4, 4), (8, 8), (6, 10), (12, 4)][i % 4];
        let x = uniform_f32(&mut rng, &[1, c, h, w]);
        let a = values_f64(&sparse.forward(&x).unwrap());
        let b = values_f64(&dense.forward(&x).unwrap());
        worst = worst.max(max_abs_diff(&a, &b));
    }
    verdict(
        2,
        "dense limit of sparse attention",
        worst <= 1e-6,
        &format!("100 inputs, max |SSA(rates=1) - MDTA| = {worst:.2e} (tol 1e-6), {:.1}s", start.elapsed().as_secs_f64()),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3

const FD_STEP: f64 = 1e-4;

struct GradReport {
    worst: f64,
    location: String,
    checked: usize,
    kinks: usize,
}

/// Central-difference check of every listed variable against autodiff.
///
/// Relative error is `|ad − fd| / max(|ad|, |fd|, floor)`; the floor is 1e-3
/// of the largest gradient magnitude of that variable, so entries that are
/// numerically zero do not turn roundoff into spurious relative error.
///
/// ReLU, max pooling, top-k selection and L1 are piecewise smooth. An entry
/// whose ±step stencil straddles a kink has no derivative to compare against;
/// it is detected by the step and half-step differences disagreeing, counted
/// in `kinks` and left out of the error.
fn grad_check(
    name: &str,
    vars: &[(String, Var)],
    loss: &dyn Fn() -> Tensor,
    per_var: usize,
    rng: &mut ChaCha8Rng,
    report: &mut GradReport,
) {
    let grads = loss().backward().unwrap();
    for (vname, var) in vars {
        let ad = match grads.get(var.as_tensor()) {
            Some(g) => values_f64(g),
            None => vec![0.0; var.elem_count()],
        };
        let base = values_f64(var.as_tensor());
        let shape = var.as_tensor().dims().to_vec();
        let scale = ad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let floor = (1e-3 * scale).max(1e-10);
        let picks: Vec<usize> = if base.len() <= per_var {
            (0..base.len()).collect()
        } else {
            (0..per_var).map(|_| rng.random_range(0..base.len())).collect()
        };
        for i in picks {
            let eval = |delta: f64| -> f64 {
                let mut v = base.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, shape.as_slice(), &cpu()).unwrap()).unwrap();
                loss().to_scalar::<f64>().unwrap()
            };
            let fd = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            let fd_half = (eval(FD_STEP / 2.0) - eval(-FD_STEP / 2.0)) / FD_STEP;
            report.checked += 1;
            if (fd - fd_half).abs() > 1e-6 * fd.abs().max(floor) {
                report.kinks += 1;
                continue;
            }
            let rel = (ad[i] - fd).abs() / ad[i].abs().max(fd.abs()).max(floor);
            if rel > report.worst {
                report.worst = rel;
                report.location = format!("{name}:{vname}[{i}] ad={:.6e} fd={fd:.6e}", ad[i]);
            }
        }
        var.set(&Tensor::from_vec(base, shape.as_slice(), &cpu()).unwrap()).unwrap();
    }
}

fn input_var(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Var {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Var::from_tensor(&Tensor::from_vec(v, shape, &cpu()).unwrap()).unwrap()
}

fn projection(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, shape, &cpu()).unwrap()
}

fn with_input(store: &ParamStore, inputs: &[(&str, &Var)]) -> Vec<(String, Var)> {
    let mut vars: Vec<(String, Var)> = inputs.iter().map(|(n, v)| (n.to_string(), (*v).clone())).collect();
    vars.extend(store.vars());
    vars
}

fn criterion_03_autodiff_matches_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut report = GradReport { worst: 0.0, location: String::new(), checked: 0, kinks: 0 };

    {
        let store = ParamStore::new(cpu(), DType::F64, 1);
        let block = NafBlock::new(&store.root().pp("naf"), 4).unwrap();
        let x = input_var(&mut rng, &[1, 4, 6, 6], -1.0, 1.0);
        let r = projection(&mut rng, &[1, 4, 6, 6]);
        let vars = with_input(&store, &[("x", &x)]);
        let loss = || (block.forward(x.as_tensor()).unwrap() * &r).unwrap().sum_all().unwrap();
        grad_check("naf", &vars, &loss, 48, &mut rng, &mut report);
    }
    {
        let store = ParamStore::new(cpu(), DType::F64, 2);
        let attn = SparseSelfAttention::new(&store.root().pp("ssa"), 8, 2, &TopKConfig::default(), SparseOptions::default())
            .unwrap();
        let x = input_var(&mut rng, &[1, 8, 4, 4], -1.0, 1.0);
        let r = projection(&mut rng, &[1, 8, 4, 4]);
        let vars = with_input(&store, &[("x", &x)]);
        let loss = || (attn.forward(x.as_tensor()).unwrap() * &r).unwrap().sum_all().unwrap();
        grad_check("ssa", &vars, &loss, 48, &mut rng, &mut report);
    }
    {
        let store = ParamStore::new(cpu(), DType::F64, 3);
        let stb = SparseTransformerBlock::new(
            &store.root().pp("stb"),
            8,
            2,
            &TopKConfig::default(),
            2.66,
            SparseOptions::default(),
        )
        .unwrap();
        let x = input_var(&mut rng, &[1, 8, 4, 4], -1.0, 1.0);
        let r = projection(&mut rng, &[1, 8, 4, 4]);
        let vars = with_input(&store, &[("x", &x)]);
        let loss = || (stb.forward(x.as_tensor()).unwrap() * &r).unwrap().sum_all().unwrap();
        grad_check("stb", &vars, &loss, 48, &mut rng, &mut report);
    }
    {
        let store = ParamStore::new(cpu(), DType::F64, 4);
        let ffu = FusionUnit::new(&store.root().pp("ffu"), 4).unwrap();
        let f_n = input_var(&mut rng, &[1, 4, 6, 6], -1.0, 1.0);
        let f_wn = input_var(&mut rng, &[1, 4, 6, 6], -1.0, 1.0);
        let r = projection(&mut rng, &[1, 4, 6, 6]);
        let vars = with_input(&store, &[("f_n", &f_n), ("f_wn", &f_wn)]);
        let loss = || {
            let (fused, _) = ffu.forward(f_n.as_tensor(), f_wn.as_tensor()).unwrap();
            (fused * &r).unwrap().sum_all().unwrap()
        };
        grad_check("ffu", &vars, &loss, 48, &mut rng, &mut report);
    }
    {
        let fx = Vgg16::random(&["relu3_3"], 5, &cpu(), DType::F64).unwrap();
        let shape = [1, 3, 16, 16];
        let y_n = input_var(&mut rng, &shape, 0.1, 0.9);
        let y_wn = input_var(&mut rng, &shape, 0.1, 0.9);
        let y_hat = input_var(&mut rng, &shape, 0.1, 0.9);
        let x_w = input_var(&mut rng, &shape, 0.1, 0.9).as_tensor().detach();
        let y_w = input_var(&mut rng, &shape, 0.1, 0.9).as_tensor().detach();
        let vars = vec![("y_n".to_string(), y_n.clone()), ("y_wn".to_string(), y_wn.clone()), ("y_hat".to_string(), y_hat.clone())];
        let loss = || {
            let outs = ForwardOutputs {
                y_n: Some(y_n.as_tensor().clone()),
                y_wn: Some(y_wn.as_tensor().clone()),
                y_hat: y_hat.as_tensor().clone(),
                gate: None,
            };
            mixed_loss(&outs, &x_w, &y_w, 0.5, Some(&fx)).unwrap().total
        };
        grad_check("mixed_loss", &vars, &loss, 24, &mut rng, &mut report);
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        3,
        "autodiff vs central differences (f64, step 1e-4)",
        report.worst < 1e-4 && report.kinks * 50 <= report.checked && secs < 300.0,
        &format!(
            "{} entries over NAFBlock, SSA, STB, FFU, mixed loss; {} straddle a kink and are excluded (cap 2%); max relative error {:.2e} at {} (tol 1e-4), {secs:.1}s",
            report.checked, report.kinks, report.worst, report.location
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4

fn tiny_model(variant: Variant, seed: u64) -> SshNet {
    let cfg = ModelConfig { base_width: 8, ..ModelConfig::desk() }.with_variant(variant);
    SshNet::new(&cfg, &cpu(), DType::F32, seed).unwrap()
}

fn criterion_04_structural_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut problems = Vec::new();

    let mut identity_worst = 0.0f64;
    for v in Variant::ALL {
        let net = tiny_model(v, 1);
        net.params().zero_where(|_| true).unwrap();
        let x = uniform_f32(&mut rng, &[2, 3, 32, 48]);
        let y = net.forward(&x).unwrap().y_hat;
        identity_worst = identity_worst.max(max_abs_diff(&values_f64(&y), &values_f64(&x)));
    }
    if identity_worst != 0.0 {
        problems.push(format!("zero-parameter output differs from input by {identity_worst:e}"));
    }

    let net = tiny_model(Variant::Full, 2);
    let grid = [(16, 16), (32, 32), (16, 48), (48, 16), (64, 32), (32, 80), (48, 48)];
    for (h, w) in grid {
        let out = net.forward(&uniform_f32(&mut rng, &[1, 3, h, w])).unwrap();
        if out.y_hat.dims() != [1, 3, h, w] {
            problems.push(format!("{h}x{w} gave {:?}", out.y_hat.dims()));
        }
    }
    let odd = [(17, 23), (50, 31), (5, 70)];
    for (h, w) in odd {
        let img = Image::from_fn(h, w, "odd", |r, c| [(r as f32 / h as f32), (c as f32 / w as f32), 0.5]).unwrap();
        let out = infer_tiled(&net, &img).unwrap();
        if out.dims() != (h, w) {
            problems.push(format!("tiled {h}x{w} gave {:?}", out.dims()));
        }
    }

    let gate = net.forward(&uniform_f32(&mut rng, &[2, 3, 32, 32])).unwrap().gate.unwrap();
    let g = values_f64(&gate);
    let (gmin, gmax) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(gmin > 0.0 && gmax < 1.0) {
        problems.push(format!("gate range [{gmin}, {gmax}]"));
    }

    let (d, keep) = (8, 3);
    let scores = Tensor::randn(0f64, 1.0, (2, 3, d, d), &cpu()).unwrap();
    let probs = values_f64(&masked_softmax(&scores, keep, SparseOptions::default()).unwrap());
    let mut row_err = 0.0f64;
    let mut bad_rows = 0;
    for row in probs.chunks_exact(d) {
        row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
        let zeros = row.iter().filter(|&&p| p == 0.0).count();
        let positive = row.iter().filter(|&&p| p > 0.0).count();
        if zeros != d - keep || positive != keep {
            bad_rows += 1;
        }
    }
    if row_err > 1e-12 || bad_rows > 0 {
        problems.push(format!("masked softmax: row-sum error {row_err:e}, {bad_rows} rows without exact zeros"));
    }

    verdict(
        4,
        "structural identities",
        problems.is_empty(),
        &format!(
            "identity over {} variants exact, {} direct + {} tiled sizes, gate in [{gmin:.4}, {gmax:.4}], softmax row error {row_err:.1e}{}",
            Variant::ALL.len(),
            grid.len(),
            odd.len(),
            if problems.is_empty() { String::new() } else { format!("; problems: {}", problems.join("; ")) }
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5

fn solid_asset(h: usize, w: usize, rgb: [f32; 3], alpha: f32) -> WatermarkAsset {
    let rgba = (0..h * w).flat_map(|_| [rgb[0], rgb[1], rgb[2], alpha]).collect();
    WatermarkAsset::new("solid", h, w, rgba).unwrap()
}

fn spec_at(transparency: f32, position: (usize, usize), footprint: (usize, usize)) -> CorruptionSpec {
    CorruptionSpec {
        transparency,
        scale: 1.0,
        coverage: 0.0,
        position,
        footprint,
        watermark_index: 0,
        noise_sigma: 0.0,
    }
}

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_05_compositing() {
    let mut problems = Vec::new();
    let base = procedural_scenes(1, 40, 56, 5, "base").remove(0);
    let mark = builtin_assets().remove(3);
    let (mh, mw) = mark.dims();
    let fp = (mh.min(20), mw.min(30));
    let pos = (7, 11);

    let same = composite_watermark(&base, &mark, &spec_at(0.0, pos, fp)).unwrap();
    if same.pixels() != base.pixels() {
        problems.push("transparency 0 changed the image".to_string());
    }

    let colors = solid_asset(fp.0, fp.1, [0.9, 0.2, 0.6], 1.0);
    let replaced = composite_watermark(&base, &colors, &spec_at(1.0, pos, fp)).unwrap();
    let mut replace_err = 0.0f32;
    for r in 0..fp.0 {
        for c in 0..fp.1 {
            let p = replaced.get(pos.0 + r, pos.1 + c);
            replace_err = replace_err.max((p[0] - 0.9).abs()).max((p[1] - 0.2).abs()).max((p[2] - 0.6).abs());
        }
    }
    if replace_err != 0.0 {
        problems.push(format!("opaque mark at transparency 1 is off by {replace_err}"));
    }

    let black = Image::filled(4, 4, [0.0; 3], "black").unwrap();
    let white = solid_asset(1, 1, [1.0; 3], 1.0);
    let hand = composite_watermark(&black, &white, &spec_at(0.3, (2, 1), (1, 1))).unwrap().get(2, 1);
    let hand_err = hand.iter().map(|v| (v - 0.3).abs()).fold(0.0f32, f32::max);
    if hand_err > 1e-7 {
        problems.push(format!("0.3·1 + 0.7·0 gave {hand:?}"));
    }

    let marked = composite_watermark(&base, &mark, &spec_at(0.7, pos, fp)).unwrap();
    let mut outside_changed = 0;
    for r in 0..base.height() {
        for c in 0..base.width() {
            let inside = (pos.0..pos.0 + fp.0).contains(&r) && (pos.1..pos.1 + fp.1).contains(&c);
            if !inside && marked.get(r, c) != base.get(r, c) {
                outside_changed += 1;
            }
        }
    }
    if outside_changed > 0 {
        problems.push(format!("{outside_changed} pixels outside the footprint changed"));
    }

    let images = procedural_scenes(3, 48, 48, 8, "regen");
    let cfg = CorpusConfig { variants_per_image: 2, ..CorpusConfig::default() };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    build_corpus_from(&images, &builtin_assets(), &cfg, a.path(), 99).unwrap();
    build_corpus_from(&images, &builtin_assets(), &cfg, b.path(), 99).unwrap();
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    if ta != tb {
        problems.push("regenerated corpus differs byte-wise".to_string());
    }

    verdict(
        5,
        "watermark compositing",
        problems.is_empty(),
        &format!(
            "identity, replacement error {replace_err:e}, hand value {:.6}, outside pixels changed {outside_changed}, {} files byte-identical on regeneration{}",
            hand[0],
            ta.len(),
            if problems.is_empty() { String::new() } else { format!("; problems: {}", problems.join("; ")) }
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6

const REF_PARAMS: f64 = 5.89e6;
const REF_COMPUTE: f64 = 18.21e9;
const REF_DUAL_PARAMS: f64 = 6.04e6;
const REF_DUAL_COMPUTE: f64 = 21.62e9;

fn criterion_06_complexity_accounting() {
    let full = SshNet::new(&ModelConfig::default(), &cpu(), DType::F32, 0).unwrap();
    let dual = SshNet::new(&ModelConfig::default().with_variant(Variant::DualEncoders), &cpu(), DType::F32, 0).unwrap();
    let (p, m, f) = (full.count_params() as f64, full.count_macs(256, 256) as f64, full.count_flops(256, 256) as f64);
    let (pd, md) = (dual.count_params() as f64, dual.count_macs(256, 256) as f64);

    // The reference table's compute column counts multiply-accumulates: its
    // dual-encoder row adds 0.15M parameters and 3.41G, which is exactly one
    // extra encoder here (0.149M parameters, 3.40G MACs). Twice that would be
    // 6.8G. The MAC count is therefore the comparable quantity.
    let param_dev = p / REF_PARAMS - 1.0;
    let mac_dev = m / REF_COMPUTE - 1.0;
    let ok = param_dev.abs() <= 0.20 && mac_dev.abs() <= 0.25 && pd > p && md > m;
    verdict(
        6,
        "complexity accounting",
        ok,
        &format!(
            "params {:.3}M ({:+.1}% vs 5.89M, tol 20%), MACs@256 {:.2}G ({:+.1}% vs 18.21G, tol 25%), FLOPs=2xMACs {:.2}G; dual_encoders {:.3}M / {:.2}G exceeds full (delta {:.3}M / {:.2}G vs reference {:.2}M / {:.2}G)",
            p / 1e6,
            100.0 * param_dev,
            m / 1e9,
            100.0 * mac_dev,
            f / 1e9,
            pd / 1e6,
            md / 1e9,
            (pd - p) / 1e6,
            (md - m) / 1e9,
            (REF_DUAL_PARAMS - REF_PARAMS) / 1e6,
            (REF_DUAL_COMPUTE - REF_COMPUTE) / 1e9,
        ),
    );
}

// ---------------------------------------------------------------------------
// Criteria 7 and 8

fn pinned(alpha: f32, sigma: f32) -> CorruptionRanges {
    CorruptionRanges { transparencies: vec![alpha], sigmas: vec![sigma], ..CorruptionRanges::default() }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Desk-scale smoke configuration: narrow network, constant learning rate.
fn smoke_train_cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        batch: 4,
        crop: 64,
        alpha: 0.0,
        epochs: 1000,
        decay_every: 1000,
        max_steps: Some(steps),
        seed: 7,
        ..TrainConfig::default()
    }
}

fn criterion_07_08_smoke_training_and_firewall() {
    let start = Instant::now();
    let work = tempfile::tempdir().unwrap();
    let assets = builtin_assets();
    let train_images = procedural_scenes(16, 96, 96, 70, "train");
    let train_cfg = CorpusConfig { ranges: pinned(0.3, 25.0), previews: false, ..CorpusConfig::default() };
    let train = build_corpus_from(&train_images, &assets, &train_cfg, work.path().join("corpus"), 70).unwrap();

    let held_out = procedural_scenes(8, 64, 64, 71, "heldout");
    let test_ranges = CorruptionRanges { watermarks: vec![5], ..pinned(0.3, 25.0) };
    let test_cfg = CorpusConfig { split: Split::Test, ranges: test_ranges, previews: false, ..CorpusConfig::default() };
    let test = build_corpus_from(&held_out, &assets, &test_cfg, work.path().join("corpus"), 71).unwrap();

    let steps = 300u64;
    let model = SshNet::new(&ModelConfig::desk(), &cpu(), DType::F32, 7).unwrap();
    let data = TrainData::from_manifest(&train).unwrap();
    let mut trainer = Trainer::new(model, smoke_train_cfg(steps), data, None).unwrap();
    let logs = trainer.run_steps(steps, |_| Ok(())).unwrap();
    let clean_reads = trainer.data.clean_reads().count();
    let totals: Vec<f64> = logs.iter().map(|l| l.total).collect();
    let (first, last) = (mean(&totals[..50]), mean(&totals[totals.len() - 50..]));
    let ratio = last / first;

    let restored = evaluate(&trainer.model, &test, &EvalOptions::default()).unwrap();
    let baseline = evaluate(&IdentityRestorer, &test, &EvalOptions::default()).unwrap();
    let gain = restored.mean_psnr() - baseline.mean_psnr();
    let secs = start.elapsed().as_secs_f64();

    let ok7 = ratio < 0.6 && gain >= 2.0 && restored.items.len() == 8;
    let ok8 = clean_reads == 0;
    println!(
        "criterion 07 {} desk-scale training smoke: {steps} steps, loss first50 {first:.4} last50 {last:.4} ratio {ratio:.3} (< 0.6), held-out PSNR {:.2} dB vs degraded {:.2} dB, gain {gain:+.2} dB (>= 2), {} images, {secs:.0}s",
        if ok7 { "PASS" } else { "FAIL" },
        restored.mean_psnr(),
        baseline.mean_psnr(),
        restored.items.len(),
    );
    println!(
        "criterion 08 {} self-supervision firewall: clean-image reads during training = {clean_reads}",
        if ok8 { "PASS" } else { "FAIL" }
    );
    assert!(ok7, "criterion 7 failed");
    assert!(ok8, "criterion 8 failed");
}

// ---------------------------------------------------------------------------
// Criterion 9

fn determinism_cfg() -> TrainConfig {
    TrainConfig { batch: 2, crop: 32, alpha: 0.0, epochs: 1000, seed: 31, ..TrainConfig::default() }
}

fn determinism_corpus(dir: &Path) -> Manifest {
    let images = procedural_scenes(6, 48, 48, 30, "det");
    let cfg = CorpusConfig { previews: false, variants_per_image: 2, ..CorpusConfig::default() };
    build_corpus_from(&images, &builtin_assets(), &cfg, dir, 30).unwrap()
}

fn fresh_trainer(manifest: &Manifest, model_seed: u64) -> Trainer<'static> {
    let cfg = ModelConfig { base_width: 8, ..ModelConfig::desk() };
    let model = SshNet::new(&cfg, &cpu(), DType::F32, model_seed).unwrap();
    Trainer::new(model, determinism_cfg(), TrainData::from_manifest(manifest).unwrap(), None).unwrap()
}

fn param_bits(model: &SshNet) -> Vec<u32> {
    model
        .params()
        .vars()
        .iter()
        .flat_map(|(_, v)| v.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap())
        .map(f32::to_bits)
        .collect()
}

fn log_bits(logs: &[StepLog]) -> Vec<u64> {
    logs.iter().flat_map(|l| [l.total.to_bits(), l.l_s3.to_bits(), l.lr.to_bits()]).collect()
}

fn criterion_09_determinism_and_resume() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let manifest = determinism_corpus(dir.path());
    let (warm, tail) = (10u64, 50u64);

    let mut a = fresh_trainer(&manifest, 3);
    let logs_a = a.run_steps(warm + tail, |_| Ok(())).unwrap();
    let mut b = fresh_trainer(&manifest, 3);
    let logs_b = b.run_steps(warm + tail, |_| Ok(())).unwrap();
    let same_seed = log_bits(&logs_a) == log_bits(&logs_b) && param_bits(&a.model) == param_bits(&b.model);

    let mut c = fresh_trainer(&manifest, 3);
    c.run_steps(warm, |_| Ok(())).unwrap();
    let ck = dir.path().join("mid.ck");
    c.save(&ck).unwrap();
    drop(c);
    let mut d = fresh_trainer(&manifest, 12345);
    d.resume(&ck).unwrap();
    let logs_d = d.run_steps(tail, |_| Ok(())).unwrap();
    let resumed = log_bits(&logs_d) == log_bits(&logs_a[warm as usize..]) && param_bits(&d.model) == param_bits(&a.model);
    let reads = a.data.clean_reads().count() + d.data.clean_reads().count();

    verdict(
        9,
        "determinism and resume",
        same_seed && resumed && reads == 0,
        &format!(
            "two {}-step runs bit-identical: {same_seed}; resume at step {warm} then {tail} steps bit-identical (loss log and parameters): {resumed}; clean reads {reads}; {:.0}s",
            warm + tail,
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 10

/// Direct SSIM: every 11×11 window evaluated independently, no separable filtering.
fn brute_force_ssim(a: &Image, b: &Image) -> f64 {
    let (h, w) = a.dims();
    let x: Vec<f64> = to_luma_ycbcr(a).into_iter().map(f64::from).collect();
    let y: Vec<f64> = to_luma_ycbcr(b).into_iter().map(f64::from).collect();
    let n = 11;
    let g: Vec<f64> = (0..n).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let gs: f64 = g.iter().sum();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for r in 0..=h - n {
        for c in 0..=w - n {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let wt = g[i] * g[j] / (gs * gs);
                    let (u, v) = (x[(r + i) * w + c + j], y[(r + i) * w + c + j]);
                    mx += wt * u;
                    my += wt * v;
                    sxx += wt * u * u;
                    syy += wt * v * v;
                    sxy += wt * u * v;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[derive(serde::Deserialize)]
struct SsimRecord {
    a: String,
    b: String,
    ssim: f64,
}

fn criterion_10_metric_sanity() {
    let mut problems = Vec::new();
    let base = procedural_scenes(1, 32, 32, 10, "psnr").remove(0).clamped();
    // Keep every channel below 1 − 10/255 so the offset is never clipped.
    let dim = Image::from_fn(32, 32, "dim", |r, c| base.get(r, c).map(|v| v * 0.9)).unwrap();
    let shifted = Image::from_fn(32, 32, "shifted", |r, c| dim.get(r, c).map(|v| v + 10.0 / 255.0)).unwrap();
    let p = psnr(&shifted, &dim, 1.0).unwrap();
    let closed = 20.0 * 25.5f64.log10();
    if (p - closed).abs() > 1e-4 || (p - 28.136).abs() > 1e-2 {
        problems.push(format!("PSNR {p}"));
    }

    let identity = ssim_y(&base, &base).unwrap();
    if identity != 1.0 {
        problems.push(format!("SSIM(x, x) = {identity}"));
    }

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ssim");
    let records: Vec<SsimRecord> =
        serde_json::from_str(&std::fs::read_to_string(fixtures.join("reference.json")).unwrap()).unwrap();
    let (mut worst_ref, mut worst_brute) = (0.0f64, 0.0f64);
    for rec in &records {
        let a = load_image(fixtures.join(&rec.a)).unwrap();
        let b = load_image(fixtures.join(&rec.b)).unwrap();
        let s = ssim_y(&a, &b).unwrap();
        worst_ref = worst_ref.max((s - rec.ssim).abs());
        worst_brute = worst_brute.max((s - brute_force_ssim(&a, &b)).abs());
    }
    if records.len() < 20 || worst_ref > 1e-4 || worst_brute > 1e-4 {
        problems.push(format!("SSIM disagreement: reference {worst_ref:e}, brute force {worst_brute:e}"));
    }

    verdict(
        10,
        "metric sanity",
        problems.is_empty(),
        &format!(
            "PSNR for a 10/255 offset {p:.4} dB (closed form {closed:.4}, quoted 28.136), SSIM(x,x) = {identity}, {} pairs vs scikit-image max error {worst_ref:.1e}, vs brute-force windows {worst_brute:.1e} (tol 1e-4){}",
            records.len(),
            if problems.is_empty() { String::new() } else { format!("; problems: {}", problems.join("; ")) }
        ),
    );
}

const CHECKS: [(&str, fn()); 9] = [
    ("criterion_01_sparse_attention_matches_sort_oracle", criterion_01_sparse_attention_matches_sort_oracle),
    ("criterion_02_all_ones_rates_reduce_to_dense_attention", criterion_02_all_ones_rates_reduce_to_dense_attention),
    ("criterion_03_autodiff_matches_finite_differences", criterion_03_autodiff_matches_finite_differences),
    ("criterion_04_structural_identities", criterion_04_structural_identities),
    ("criterion_05_compositing", criterion_05_compositing),
    ("criterion_06_complexity_accounting", criterion_06_complexity_accounting),
    ("criterion_07_08_smoke_training_and_firewall", criterion_07_08_smoke_training_and_firewall),
    ("criterion_09_determinism_and_resume", criterion_09_determinism_and_resume),
    ("criterion_10_metric_sanity", criterion_10_metric_sanity),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<_> = CHECKS
        .iter()
        .filter(|(name, _)| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str())))
        .collect();
    let mut failed = Vec::new();
    for (name, check) in &selected {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check));
        let status = if outcome.is_ok() { "ok" } else { "FAILED" };
        println!("check {name} ... {status} ({:.1}s)", start.elapsed().as_secs_f64());
        if outcome.is_err() {
            failed.push(*name);
        }
    }
    println!("acceptance: {} of {} checks passed", selected.len() - failed.len(), selected.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
