//! Instance generators, brute-force oracles, and measurement routines shared
//! by the integration suites and the acceptance runner.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anomaly_forge_core::dataset::{forge_normals, forge_split, ForgeConfig, Split};
use anomaly_forge_core::eval::report::{export_heatmap, MetricsReport};
use anomaly_forge_core::learn::losses::{
    cross_entropy, cross_entropy_vjp, dice_loss, dice_loss_vjp, focal_loss, focal_loss_vjp, FocalConfig,
};
use anomaly_forge_core::learn::model::{sample_gradient, sample_losses, EncodedSample};
use anomaly_forge_core::learn::plan::DEFAULT_BASE_LR;
use anomaly_forge_core::learn::train::train;
use anomaly_forge_core::learn::{ModelConfig, ModelParams, PromptContext, StagePlan};
use anomaly_forge_core::numerics::{vjp_check, AdjointRecord};
use anomaly_forge_core::pipeline::{encode_samples, evaluate, evaluate_fewshot, fewshot_maps, FewShotMetrics};
use anomaly_forge_core::prompt_bank::bundled_prompt_bank;
use anomaly_forge_core::rng::{stream, StreamRng};
use anomaly_forge_core::scoring::build_memory_bank;
use anomaly_forge_core::synth::{poisson_normal_clone, poisson_solve};
use anomaly_forge_core::{EncoderConfig, ImageEncoder, Label, Tensor, ToyEncoder};
use rand::Rng;

pub fn rng(seed: u64, salt: u64) -> StreamRng {
    stream(seed, salt)
}

pub fn small_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            image_size: (16, 16),
            level_grids: [(8, 8), (4, 4), (4, 4), (4, 4)],
            c1: 6,
            c2: 5,
            c3: 3,
            ..EncoderConfig::default()
        },
        base_rows: 2,
        head_hidden: 7,
        ..ModelConfig::default()
    }
}

pub fn context(cfg: &ModelConfig, class: &str) -> PromptContext {
    let enc = ToyEncoder::new(cfg.encoder.clone()).unwrap();
    PromptContext::new(bundled_prompt_bank().class(class).unwrap(), &enc).unwrap()
}

/// Brute-force cell quantizer: pixel `p` on an axis of length `n` lies in the
/// band `k` with `⌊k·n/3⌋ ≤ p < ⌊(k+1)·n/3⌋`.
pub fn oracle_cells(mask: &Tensor, coverage: f64) -> BTreeSet<u8> {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    let band = |p: usize, n: usize| (0..3).find(|&k| k * n / 3 <= p && p < (k + 1) * n / 3).unwrap();
    let mut counts = [0u64; 9];
    let mut pts = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if mask.data()[r * w + c] > 0.5 {
                counts[3 * band(r, h) + band(c, w)] += 1;
                pts.push((r as f64, c as f64));
            }
        }
    }
    let total: u64 = counts.iter().sum();
    let set: BTreeSet<u8> = (0..9u8).filter(|&i| counts[i as usize] as f64 >= coverage * total as f64).collect();
    if !set.is_empty() {
        return set;
    }
    let n = pts.len() as f64;
    let cy = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cx = pts.iter().map(|p| p.1).sum::<f64>() / n;
    BTreeSet::from([(3 * band(cy.floor() as usize, h) + band(cx.floor() as usize, w)) as u8])
}

/// O(n²) Mann-Whitney AUROC: wins plus half the ties over all
/// positive-negative pairs.
pub fn oracle_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Random scored instance with both classes present. Every third instance
/// draws scores from four levels so ties dominate; every seventh is all
/// equal.
pub fn auroc_instance(seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut r = rng(seed, 0xa0c);
    let n = r.random_range(2..=100);
    let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..n)
        .map(|_| match seed % 7 {
            0 => 0.5,
            _ if seed.is_multiple_of(3) => r.random_range(1..=4) as f64 / 4.0,
            _ => r.random_range(0.01..1.0),
        })
        .collect();
    (scores, labels)
}

pub struct PoissonCase {
    pub residual: f64,
    /// Non-interior pixels of both the raw solve and the clamped clone equal
    /// the destination bitwise.
    pub outside_exact: bool,
    pub identity_error: f64,
    pub size: (usize, usize),
}

/// One random cloning case with destination extents in 16..=64.
pub fn poisson_case(seed: u64) -> PoissonCase {
    let mut r = rng(seed, 0x9015);
    let (dh, dw) = (r.random_range(16..=64), r.random_range(16..=64));
    let c = if r.random_bool(0.3) { 3 } else { 1 };
    let (ph, pw) = (r.random_range(3..=dh.min(40)), r.random_range(3..=dw.min(40)));
    let (top, left) = (r.random_range(0..=dh - ph), r.random_range(0..=dw - pw));
    let center = (top + ph / 2, left + pw / 2);
    let dst = Tensor::uniform(vec![dh, dw, c], 0.0, 1.0, &mut r);
    let src = Tensor::uniform(vec![ph, pw, c], -0.5, 1.5, &mut r);
    let ellipse = r.random_bool(0.5) && ph >= 5 && pw >= 5;
    let mask = Tensor::from_fn(vec![ph, pw], |i| {
        let (y, x) = ((i / pw) as f64, (i % pw) as f64);
        let (cy, cx) = ((ph as f64 - 1.0) / 2.0, (pw as f64 - 1.0) / 2.0);
        let inside = !ellipse || ((y - cy) / (ph as f64 / 2.0)).powi(2) + ((x - cx) / (pw as f64 / 2.0)).powi(2) <= 1.0;
        inside as u8 as f64
    });

    let sol = poisson_solve(&src, &dst, &mask, center).unwrap();
    let f = |y: usize, x: usize, ch: usize| sol.image.data()[(y * dw + x) * c + ch];
    let s = |y: usize, x: usize, ch: usize| src.data()[(y * pw + x) * c + ch];
    let mut residual: f64 = 0.0;
    for y in 0..ph {
        for x in 0..pw {
            let (gy, gx) = (top + y, left + x);
            if sol.interior.data()[gy * dw + gx] < 0.5 {
                continue;
            }
            for ch in 0..c {
                let lap = 4.0 * f(gy, gx, ch) - f(gy - 1, gx, ch) - f(gy + 1, gx, ch) - f(gy, gx - 1, ch) - f(gy, gx + 1, ch);
                let div = 4.0 * s(y, x, ch) - s(y - 1, x, ch) - s(y + 1, x, ch) - s(y, x - 1, ch) - s(y, x + 1, ch);
                residual = residual.max((lap - div).abs());
            }
        }
    }
    let clone = poisson_normal_clone(&src, &dst, &mask, center).unwrap();
    let outside_exact = (0..dh * dw).filter(|&i| sol.interior.data()[i] < 0.5).all(|i| {
        (0..c).all(|ch| {
            let k = i * c + ch;
            sol.image.data()[k].to_bits() == dst.data()[k].to_bits() && clone.data()[k].to_bits() == dst.data()[k].to_bits()
        })
    });

    let crop = Tensor::from_fn(vec![ph, pw, c], |i| {
        let (y, x, ch) = (i / (pw * c), (i / c) % pw, i % c);
        dst.data()[((top + y) * dw + left + x) * c + ch]
    });
    let same = poisson_normal_clone(&crop, &dst, &mask, center).unwrap();
    let identity_error = same.data().iter().zip(dst.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    PoissonCase { residual, outside_exact, identity_error, size: (dh, dw) }
}

/// Seeded random instance of one primitive op. `kind` cycles through all of
/// them.
pub const OP_KINDS: [&str; 7] = [
    "matmul",
    "softmax_rows",
    "conv2d",
    "depthwise_separable_conv2d",
    "bilinear_upsample",
    "adaptive_avg_pool",
    "cg_solve",
];

pub fn op_instance(kind: &str, seed: u64) -> AdjointRecord {
    let mut r = rng(seed, 0x0b5);
    let mut dim = |lo: usize, hi: usize| r.random_range(lo..=hi);
    match kind {
        "matmul" => {
            let (m, k, n) = (dim(1, 5), dim(1, 5), dim(1, 5));
            let mut r = rng(seed, 1);
            AdjointRecord::matmul(Tensor::randn(vec![m, k], 1.0, &mut r), Tensor::randn(vec![k, n], 1.0, &mut r)).unwrap()
        }
        "softmax_rows" => {
            let (m, n) = (dim(1, 4), dim(1, 7));
            AdjointRecord::softmax_rows(Tensor::randn(vec![m, n], 3.0, &mut rng(seed, 1))).unwrap()
        }
        "conv2d" => {
            let (h, w, cin, cout) = (dim(3, 7), dim(3, 7), dim(1, 3), dim(1, 3));
            let (stride, padding) = (dim(1, 2), dim(0, 1));
            let (kh, kw) = (dim(1, 3), dim(1, 3));
            let mut r = rng(seed, 1);
            AdjointRecord::conv2d(
                Tensor::randn(vec![h, w, cin], 1.0, &mut r),
                Tensor::randn(vec![kh, kw, cin, cout], 1.0, &mut r),
                stride,
                padding,
            )
            .unwrap()
        }
        "depthwise_separable_conv2d" => {
            let (h, w, c, cout) = (dim(2, 6), dim(2, 6), dim(1, 3), dim(1, 3));
            let k = if dim(0, 1) == 0 { 1 } else { 3 };
            let mut r = rng(seed, 1);
            AdjointRecord::depthwise_separable_conv2d(
                Tensor::randn(vec![h, w, c], 1.0, &mut r),
                Tensor::randn(vec![k, k, c], 1.0, &mut r),
                Tensor::randn(vec![1, 1, c, cout], 1.0, &mut r),
            )
            .unwrap()
        }
        "bilinear_upsample" => {
            let (h, w) = (dim(1, 5), dim(1, 5));
            let (oh, ow) = (h + dim(0, 6), w + dim(0, 6));
            AdjointRecord::bilinear_upsample(Tensor::randn(vec![h, w], 1.0, &mut rng(seed, 1)), oh, ow).unwrap()
        }
        "adaptive_avg_pool" => {
            let (h, w, c, g) = (dim(1, 7), dim(1, 7), dim(1, 3), dim(1, 3));
            AdjointRecord::adaptive_avg_pool(Tensor::randn(vec![h, w, c], 1.0, &mut rng(seed, 1)), g).unwrap()
        }
        "cg_solve" => {
            let n = dim(1, 6);
            let mut r = rng(seed, 1);
            let m = Tensor::randn(vec![n, n], 1.0, &mut r);
            let a = Tensor::from_fn(vec![n, n], |i| {
                let (p, q) = (i / n, i % n);
                let dot: f64 = (0..n).map(|k| m.data()[k * n + p] * m.data()[k * n + q]).sum();
                dot + if p == q { n as f64 } else { 0.0 }
            });
            AdjointRecord::spd_solve(a, Tensor::randn(vec![n, 1], 1.0, &mut r)).unwrap()
        }
        other => panic!("unknown op {other}"),
    }
}

/// Worst `vjp_check` discrepancy over `n` instances of each primitive op.
pub fn op_suite(n: u64) -> Vec<(&'static str, f64)> {
    OP_KINDS
        .iter()
        .map(|&kind| {
            let worst = (0..n)
                .map(|s| vjp_check(&op_instance(kind, s), s).unwrap())
                .fold(0.0, f64::max);
            (kind, worst)
        })
        .collect()
}

fn scalar(v: f64) -> Tensor {
    Tensor::new(vec![1], vec![v]).unwrap()
}

pub const LOSS_KINDS: [&str; 3] = ["cross_entropy", "focal_loss", "dice_loss"];

pub fn loss_instance(kind: &str, seed: u64) -> AdjointRecord {
    let mut r = rng(seed, 0x1055);
    match kind {
        "cross_entropy" => {
            let (n, k) = (r.random_range(1..=5), r.random_range(2..=9));
            let probs = Tensor::uniform(vec![n, k], 0.02, 1.0, &mut r);
            let targets = Tensor::from_fn(vec![n, k], {
                let hot: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
                move |i| (hot[i / k] == i % k) as u8 as f64
            });
            AdjointRecord::new(
                kind,
                vec![probs],
                {
                    let t = targets.clone();
                    move |x| Ok(scalar(cross_entropy(&x[0], &t)?))
                },
                move |x, g| Ok(vec![cross_entropy_vjp(&x[0], &targets)?.scale(g.data()[0])]),
            )
            .unwrap()
        }
        "focal_loss" | "dice_loss" => {
            let (h, w) = (r.random_range(2..=8), r.random_range(2..=8));
            let pred = Tensor::uniform(vec![h, w], 0.03, 0.97, &mut r);
            // At least one positive pixel: with an empty mask the Dice loss is
            // flat to within its smoothing constant and central differences
            // are noise-dominated.
            let mut gt = Tensor::from_fn(vec![h, w], |_| r.random_bool(0.3) as u8 as f64);
            gt.data_mut()[r.random_range(0..h * w)] = 1.0;
            let cfg = FocalConfig { alpha: r.random_range(0.1..0.9), gamma: r.random_range(0.0..3.0) };
            if kind == "focal_loss" {
                let (g1, c1) = (gt.clone(), cfg);
                AdjointRecord::new(
                    kind,
                    vec![pred],
                    move |x| Ok(scalar(focal_loss(&x[0], &g1, &c1)?)),
                    move |x, g| Ok(vec![focal_loss_vjp(&x[0], &gt, &cfg)?.scale(g.data()[0])]),
                )
                .unwrap()
            } else {
                let g1 = gt.clone();
                AdjointRecord::new(
                    kind,
                    vec![pred],
                    move |x| Ok(scalar(dice_loss(&x[0], &g1)?)),
                    move |x, g| Ok(vec![dice_loss_vjp(&x[0], &gt)?.scale(g.data()[0])]),
                )
                .unwrap()
            }
        }
        other => panic!("unknown loss {other}"),
    }
}

pub fn loss_suite(n: u64) -> Vec<(&'static str, f64)> {
    LOSS_KINDS
        .iter()
        .map(|&kind| {
            let worst = (0..n)
                .map(|s| vjp_check(&loss_instance(kind, s), s).unwrap())
                .fold(0.0, f64::max);
            (kind, worst)
        })
        .collect()
}

/// Random 16×16 training sample; abnormal ones carry a rectangular mask.
pub fn encoded_sample(cfg: &ModelConfig, seed: u64, abnormal: bool) -> EncodedSample {
    let enc = ToyEncoder::new(cfg.encoder.clone()).unwrap();
    let (h, w) = cfg.encoder.image_size;
    let mut r = rng(seed, 0x5a);
    let img = Tensor::uniform(vec![h, w, 1], 0.0, 1.0, &mut r);
    let (t, l) = (r.random_range(0..h - 4), r.random_range(0..w - 4));
    let (bh, bw) = (r.random_range(3..=4), r.random_range(3..=4));
    let gt = Tensor::from_fn(vec![h, w], |i| {
        let (y, x) = (i / w, i % w);
        (abnormal && y >= t && y < t + bh && x >= l && x < l + bw) as u8 as f64
    });
    let cells = if abnormal {
        anomaly_forge_core::eval::grid::position_cells(&gt, 0.1).unwrap()
    } else {
        vec![]
    };
    EncodedSample {
        features: enc.encode_image(&img).unwrap(),
        gt,
        label: if abnormal { Label::Abnormal } else { Label::Normal },
        cells,
    }
}

/// End-to-end gradient of the staged total loss (cross-entropy, focal, Dice
/// through decoder, enhancer, fusion, and answer head) against central
/// differences.
///
/// Returns `(directional, elementwise)` discrepancies. The directional value
/// compares three random-direction derivatives; the elementwise value
/// compares `per_tensor` random entries of every trainable tensor, relative
/// to the largest analytic gradient entry.
pub fn model_gradient_check(seed: u64, per_tensor: usize) -> (f64, f64) {
    let cfg = small_config();
    let class = if seed.is_multiple_of(2) { "fabric" } else { "leather" };
    let ctx = context(&cfg, class);
    let params = ModelParams::init(&cfg, 2, seed).unwrap();
    let stage = (seed % 3) as u8 + 1;
    let plan = StagePlan::standard(stage, 1, 1.0).unwrap();
    let sample = encoded_sample(&cfg, seed, seed % 4 < 2);
    let (_, grad) = sample_gradient(&params, &ctx, &sample, &cfg, &plan).unwrap();
    let total = |p: &ModelParams| sample_losses(p, &ctx, &sample, &cfg, &plan).unwrap().total(&plan);
    let h = 1e-6;

    let mut r = rng(seed, 0xd1);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for _ in 0..3 {
        let mut dir = params.zeros_like();
        for (_, group, t) in dir.tensors_mut() {
            if plan.trains(group) {
                *t = Tensor::randn(t.shape().to_vec(), 1.0, &mut r);
            }
        }
        let (mut a, mut b) = (params.clone(), params.clone());
        a.axpy(h, &dir).unwrap();
        b.axpy(-h, &dir).unwrap();
        numeric.push((total(&a) - total(&b)) / (2.0 * h));
        analytic.push(grad.tensors().iter().zip(dir.tensors()).map(|((_, _, g), (_, _, d))| g.dot(d)).sum());
    }
    let directional = anomaly_forge_core::numerics::adjoint::relative_discrepancy(&analytic, &numeric);

    let mut scale: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let names: Vec<(String, bool)> = grad.tensors().iter().map(|(n, g, _)| (n.clone(), plan.trains(*g))).collect();
    for (k, (name, trained)) in names.iter().enumerate() {
        let g = grad.tensors()[k].2.clone();
        if !trained {
            assert!(g.data().iter().all(|&v| v == 0.0), "{name} is frozen but has a gradient");
            continue;
        }
        scale = scale.max(g.data().iter().fold(0.0f64, |m, v| m.max(v.abs())));
        for _ in 0..per_tensor {
            let j = r.random_range(0..g.numel());
            let bump = |delta: f64| {
                let mut p = params.clone();
                for (n, _, t) in p.tensors_mut() {
                    if &n == name {
                        t.data_mut()[j] += delta;
                    }
                }
                total(&p)
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            scale = scale.max(fd.abs());
            worst_abs = worst_abs.max((fd - g.data()[j]).abs());
        }
    }
    let elementwise = if scale == 0.0 { 0.0 } else { worst_abs / scale };
    (directional, elementwise)
}

pub struct DeskRun {
    pub report: MetricsReport,
    /// `(k, bank seed, metrics)`.
    pub fewshot: Vec<(usize, u64, FewShotMetrics)>,
    pub train_time: Duration,
    pub total_time: Duration,
}

pub const DESK_SEED: u64 = 7;
pub const DESK_EPOCHS: usize = 20;
pub const SHOTS: [usize; 3] = [1, 2, 4];
pub const BANK_SEEDS: u64 = 5;
pub const REFERENCE_POOL: usize = 16;

/// Forges the desk-scale splits, trains the three stages, scores the test
/// split on both paths, and writes checkpoints, reports, and heatmaps under
/// `dir`.
pub fn desk_run(dir: &Path) -> DeskRun {
    let t0 = Instant::now();
    let forge = ForgeConfig::default();
    let cfg = ModelConfig::default();
    let enc = ToyEncoder::new(cfg.encoder.clone()).unwrap();
    let ctx = PromptContext::new(bundled_prompt_bank().class("fabric").unwrap(), &enc).unwrap();
    let train_set = encode_samples(&enc, &forge_split(&forge, DESK_SEED, Split::Train).unwrap()).unwrap();
    let test_set = encode_samples(&enc, &forge_split(&forge, DESK_SEED, Split::Test).unwrap()).unwrap();
    let init = ModelParams::init(&cfg, 2, DESK_SEED).unwrap();
    let t_train = Instant::now();
    let plans = StagePlan::standard_sequence(DESK_EPOCHS, DEFAULT_BASE_LR);
    let outcome = train(&train_set, &ctx, &cfg, &plans, DESK_SEED, init).unwrap();
    let train_time = t_train.elapsed();
    for (i, ck) in outcome.checkpoints.iter().enumerate() {
        ck.save(&dir.join("checkpoints").join(format!("stage{}.json", i + 1))).unwrap();
    }

    let eval = evaluate(&outcome.params, &ctx, &test_set, "test", false).unwrap();
    eval.report.write(&dir.join("reports"), "metrics_test").unwrap();
    let heat = dir.join("heatmaps").join("test");
    std::fs::create_dir_all(&heat).unwrap();
    for (i, p) in eval.predictions.iter().enumerate() {
        export_heatmap(&p.maps.fused, &heat.join(format!("map_{i:05}.pgm"))).unwrap();
    }

    let normals = forge_normals(&forge, DESK_SEED, REFERENCE_POOL);
    let mut fewshot = Vec::new();
    for k in SHOTS {
        for s in 0..BANK_SEEDS {
            let bank = build_memory_bank(&normals, &enc, k, s).unwrap();
            let m = evaluate_fewshot(&bank, &test_set).unwrap();
            let stem = format!("fewshot_k{k}_s{s}");
            std::fs::write(
                dir.join("reports").join(format!("{stem}.json")),
                format!("{{\"k\": {k}, \"seed\": {s}, \"i_auroc\": {}, \"p_auroc\": {}}}\n", m.i_auroc, m.p_auroc),
            )
            .unwrap();
            let fdir = dir.join("heatmaps").join(&stem);
            std::fs::create_dir_all(&fdir).unwrap();
            for (i, maps) in fewshot_maps(&bank, &test_set).unwrap().iter().enumerate() {
                export_heatmap(&maps.fused, &fdir.join(format!("map_{i:05}.pgm"))).unwrap();
            }
            fewshot.push((k, s, m));
        }
    }
    DeskRun { report: eval.report, fewshot, train_time, total_time: t0.elapsed() }
}

/// Relative paths of all files below `root`, sorted.
pub fn files_below(root: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out
}

/// First file that differs between the two trees, or the count of
/// identical files.
pub fn compare_trees(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (files_below(a), files_below(b));
    if fa != fb {
        return Err(format!("file lists differ ({} vs {} files)", fa.len(), fb.len()));
    }
    for f in &fa {
        if std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap() {
            return Err(format!("{} differs", f.display()));
        }
    }
    Ok(fa.len())
}

/// One crafted position-grid case.
pub struct GridCase {
    pub name: &'static str,
    pub mask: Tensor,
    pub coverage: f64,
    pub expected: &'static [u8],
}

fn rect_mask(h: usize, w: usize, rects: &[(usize, usize, usize, usize)]) -> Tensor {
    Tensor::from_fn(vec![h, w], |i| {
        let (y, x) = (i / w, i % w);
        rects.iter().any(|&(t, l, bh, bw)| y >= t && y < t + bh && x >= l && x < l + bw) as u8 as f64
    })
}

/// Twenty masks with hand-derived cell sets. On a 64-pixel axis the bands are
/// `[0, 21)`, `[21, 42)`, `[42, 64)`.
pub fn grid_cases() -> Vec<GridCase> {
    let case = |name, mask, coverage, expected| GridCase { name, mask, coverage, expected };
    vec![
        case("top-left corner blob", rect_mask(64, 64, &[(0, 0, 8, 8)]), 0.1, &[0]),
        case("top-right corner blob", rect_mask(64, 64, &[(0, 56, 8, 8)]), 0.1, &[2]),
        case("bottom-left corner blob", rect_mask(64, 64, &[(56, 0, 8, 8)]), 0.1, &[6]),
        case("bottom-right corner blob", rect_mask(64, 64, &[(56, 56, 8, 8)]), 0.1, &[8]),
        case("full image", rect_mask(64, 64, &[(0, 0, 64, 64)]), 0.1, &[0, 1, 2, 3, 4, 5, 6, 7, 8]),
        case("centre blob", rect_mask(64, 64, &[(28, 28, 8, 8)]), 0.1, &[4]),
        case("straddle top-left/top", rect_mask(64, 64, &[(5, 16, 10, 10)]), 0.1, &[0, 1]),
        case("straddle top-right/right", rect_mask(64, 64, &[(16, 45, 10, 10)]), 0.1, &[2, 5]),
        case("straddle centre/bottom", rect_mask(64, 64, &[(38, 30, 8, 4)]), 0.1, &[4, 7]),
        case("straddle left/bottom-left", rect_mask(64, 64, &[(37, 3, 10, 6)]), 0.1, &[3, 6]),
        case("spill below threshold", rect_mask(64, 64, &[(0, 0, 10, 22)]), 0.1, &[0]),
        case("spill at threshold", rect_mask(64, 64, &[(0, 12, 10, 10)]), 0.1, &[0, 1]),
        case("pixel at band start", rect_mask(64, 64, &[(21, 21, 1, 1)]), 0.1, &[4]),
        case("pixel at band end", rect_mask(64, 64, &[(20, 20, 1, 1)]), 0.1, &[0]),
        case("last pixel", rect_mask(64, 64, &[(63, 63, 1, 1)]), 0.1, &[8]),
        case("horizontal bar", rect_mask(64, 64, &[(30, 0, 2, 64)]), 0.1, &[3, 4, 5]),
        case("vertical bar", rect_mask(64, 64, &[(0, 0, 64, 2)]), 0.1, &[0, 3, 6]),
        case(
            "diagonal blobs, centroid fallback",
            rect_mask(64, 64, &[(2, 2, 4, 4), (30, 30, 4, 4), (58, 58, 4, 4)]),
            0.5,
            &[4],
        ),
        case("224 blob around (30, 30)", rect_mask(224, 224, &[(25, 25, 11, 11)]), 0.1, &[0]),
        case("uneven 30×31 four-cell straddle", rect_mask(30, 31, &[(8, 18, 4, 4)]), 0.1, &[1, 2, 4, 5]),
    ]
}

pub const CELL_LABELS: [&str; 9] =
    ["top left", "top", "top right", "left", "center", "right", "bottom left", "bottom", "bottom right"];
