use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anomaly_forge_core::dataset::{self, Split};
use anomaly_forge_core::eval::report::export_heatmap;
use anomaly_forge_core::learn::checkpoint::Checkpoint;
use anomaly_forge_core::learn::train::{train_stage, LogRow};
use anomaly_forge_core::learn::{predict, ModelParams, PromptContext};
use anomaly_forge_core::pipeline::{encode_samples, evaluate};
use anomaly_forge_core::prompt_bank::{bundled_prompt_bank, load_prompt_bank, PromptBank};
use anomaly_forge_core::scoring::{build_memory_bank, fewshot_map, image_score, MemoryBank};
use anomaly_forge_core::{pnm, ImageEncoder, Tensor, ToyEncoder};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn prompt_bank(cfg: &RunConfig) -> CliResult<PromptBank> {
    Ok(match &cfg.prompt_bank {
        Some(p) => load_prompt_bank(p)?,
        None => bundled_prompt_bank(),
    })
}

fn context(cfg: &RunConfig, encoder: &ToyEncoder) -> CliResult<PromptContext> {
    let bank = prompt_bank(cfg)?;
    Ok(PromptContext::new(bank.class(&cfg.class)?, encoder)?)
}

fn categories(ctx: &PromptContext) -> usize {
    ctx.f_win_cat.shape()[0]
}

pub fn forge(cfg: &RunConfig) -> CliResult<String> {
    let seed = cfg.seed()?;
    let mut summary = String::new();
    for split in [Split::Train, Split::Test] {
        let samples = dataset::forge_split(&cfg.forge, seed, split)?;
        let dir = cfg.out.join(split.name());
        dataset::write_split(&dir, seed, split, &samples)?;
        let abnormal = samples.iter().filter(|s| s.label.is_abnormal()).count();
        writeln!(summary, "{}: {} samples ({abnormal} abnormal) in {}", split.name(), samples.len(), dir.display())
            .expect("string write");
    }
    Ok(summary)
}

pub fn checkpoint_path(out: &Path, stage: u8) -> PathBuf {
    out.join("checkpoints").join(format!("stage{stage}.json"))
}

pub const LOG_HEADER: &str = "step,stage,lr,L_c,L_f,L_d";

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{},{}", r.step, r.stage, r.lr, r.losses.ce, r.losses.focal, r.losses.dice)
            .expect("string write");
    }
    s
}

/// Stages to run given an optional resume point and an optional explicit
/// list; they must continue the 1 → 2 → 3 order without gaps.
pub fn stage_sequence(resumed_stage: u8, requested: Option<&[u8]>) -> CliResult<Vec<u8>> {
    let next = resumed_stage + 1;
    let stages: Vec<u8> = match requested {
        Some(list) => list.to_vec(),
        None => (next..=3).collect(),
    };
    if stages.is_empty() {
        return Err(CliError::Usage(format!("nothing to train: stage {resumed_stage} is already the last")));
    }
    for (i, &s) in stages.iter().enumerate() {
        if s as usize != next as usize + i || s > 3 {
            return Err(CliError::Usage(format!(
                "stage order violated: after stage {resumed_stage} the next stages are {next}..=3, got {stages:?}"
            )));
        }
    }
    Ok(stages)
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>, stages: Option<&[u8]>) -> CliResult<String> {
    let seed = cfg.seed()?;
    let encoder = ToyEncoder::new(cfg.model.encoder.clone())?;
    let ctx = context(cfg, &encoder)?;
    let (mut params, done) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.seed != seed {
                return Err(CliError::Usage(format!(
                    "{} was trained with seed {}, not {seed}",
                    path.display(),
                    ck.seed
                )));
            }
            (ck.params(&cfg.model, categories(&ctx))?, ck.stage)
        }
        None => (ModelParams::init(&cfg.model, categories(&ctx), seed)?, 0),
    };
    let stages = stage_sequence(done, stages)?;
    let samples = dataset::read_split(&cfg.dataset_root().join(Split::Train.name()))?;
    let encoded = encode_samples(&encoder, &samples)?;
    create_dir(&cfg.out.join("checkpoints"))?;
    let mut log = Vec::new();
    let mut summary = String::new();
    for stage in stages {
        let plan = cfg.train.plan(stage)?;
        params = train_stage(params, &encoded, &ctx, &cfg.model, &plan, seed, &mut log)?;
        let path = checkpoint_path(&cfg.out, stage);
        Checkpoint::from_params(&params, seed, stage).save(&path)?;
        writeln!(summary, "stage {stage}: wrote {}", path.display()).expect("string write");
    }
    let log_path = cfg.out.join("train_log.csv");
    write_file(&log_path, log_csv(&log))?;
    writeln!(summary, "log: {}", log_path.display()).expect("string write");
    Ok(summary)
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, split: Split, heatmaps: bool, oracle_maps: bool) -> CliResult<String> {
    let encoder = ToyEncoder::new(cfg.model.encoder.clone())?;
    let ctx = context(cfg, &encoder)?;
    let params = Checkpoint::load(checkpoint)?.params(&cfg.model, categories(&ctx))?;
    let samples = dataset::read_split(&cfg.dataset_root().join(split.name()))?;
    let encoded = encode_samples(&encoder, &samples)?;
    let result = evaluate(&params, &ctx, &encoded, split.name(), oracle_maps)?;
    let reports = cfg.out.join("reports");
    let stem = format!("metrics_{}", split.name());
    result.report.write(&reports, &stem)?;
    if heatmaps {
        let dir = cfg.out.join("heatmaps").join(split.name());
        create_dir(&dir)?;
        for (i, p) in result.predictions.iter().enumerate() {
            export_heatmap(&p.maps.fused, &dir.join(format!("map_{i:05}.pgm")))?;
        }
    }
    Ok(format!("{}written to {}\n", result.report.csv(), reports.join(format!("{stem}.csv")).display()))
}

/// Normal images from `dir`: only normal-labelled samples when the directory
/// holds a dataset split, otherwise every image in it.
fn read_normals(dir: &Path) -> CliResult<Vec<Tensor>> {
    if dir.join(dataset::MANIFEST_FILE).is_file() {
        let samples = dataset::read_split(dir)?;
        return Ok(samples.into_iter().filter(|s| !s.label.is_abnormal()).map(|s| s.image).collect());
    }
    Ok(dataset::read_image_dir(dir)?.into_iter().map(|(_, t)| t).collect())
}

pub fn bank_path(out: &Path, k: usize) -> PathBuf {
    out.join("bank").join(format!("bank_k{k}.json"))
}

pub fn bank(cfg: &RunConfig, k: usize, normals_dir: &Path, bank_seed: Option<u64>) -> CliResult<String> {
    let seed = bank_seed.map_or_else(|| cfg.seed(), Ok)?;
    let encoder = ToyEncoder::new(cfg.model.encoder.clone())?;
    let normals = read_normals(normals_dir)?;
    let bank = build_memory_bank(&normals, &encoder, k, seed)?;
    let path = bank_path(&cfg.out, k);
    create_dir(path.parent().expect("bank path has a parent"))?;
    bank.save(&path)?;
    let rows: Vec<String> = bank.levels.iter().map(|t| t.shape()[0].to_string()).collect();
    Ok(format!(
        "memory bank k={k} from {} normals, rows per level [{}], written to {}\n",
        normals.len(),
        rows.join(", "),
        path.display()
    ))
}

pub enum MapSource<'a> {
    Checkpoint(&'a Path),
    Bank(&'a Path),
}

pub fn map(cfg: &RunConfig, image: &Path, source: MapSource<'_>) -> CliResult<String> {
    let encoder = ToyEncoder::new(cfg.model.encoder.clone())?;
    let img = pnm::read(image)?;
    let features = encoder.encode_image(&img)?;
    let size = cfg.model.encoder.image_size;
    let (maps, extra) = match source {
        MapSource::Bank(path) => (fewshot_map(&features.patches, &MemoryBank::load(path)?, size)?, String::new()),
        MapSource::Checkpoint(path) => {
            let ctx = context(cfg, &encoder)?;
            let params = Checkpoint::load(path)?.params(&cfg.model, categories(&ctx))?;
            let p = predict(&params, &ctx, &features, size)?;
            let verdict = if p.is_abnormal() { "abnormal" } else { "normal" };
            (p.maps, format!("answer: {verdict} (logit {:.4})\n", p.anomaly_logit))
        }
    };
    let dir = cfg.out.join("maps");
    create_dir(&dir)?;
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
    let path = dir.join(format!("{stem}.pgm"));
    export_heatmap(&maps.fused, &path)?;
    Ok(format!("image score {:.6}\n{extra}heatmap: {}\n", image_score(&maps), path.display()))
}

pub fn prompts(path: Option<&Path>) -> CliResult<String> {
    let bank = match path {
        Some(p) => load_prompt_bank(p)?,
        None => bundled_prompt_bank(),
    };
    let mut s = String::from("valid\n");
    for c in bank.classes() {
        writeln!(
            s,
            "{}: {} normal, {} abnormal templates, {} keyword prompts",
            c.class_name,
            c.normal_templates.len(),
            c.abnormal_templates.len(),
            c.keywords.len()
        )
        .expect("string write");
    }
    Ok(s)
}
