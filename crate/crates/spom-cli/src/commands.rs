use crate::config::{
    load_pipeline_config, load_registry, profile, write_json, EffectiveConfig, PipelineConfig,
};
use anyhow::{anyhow, bail, Context, Result};
use spom::dataset::synthetic::{
    generate_synthetic, generate_video_episode, SignalRouting, SynthConfig,
};
use spom::dataset::{
    cleanse_negatives, dataset_stats, instruction_pool, load_manifest, save_manifest,
    split_dataset_with, DatasetSplit, Episode,
};
use spom::decoder::{
    flat_gradients, forward_on, load_checkpoint, save_checkpoint, AttentionMode, DecoderConfig,
    DecoderParams,
};
use spom::harness::{
    classify_video, config_digest, evaluate, run_ablation, standard_conditions, train as train_run,
    EvalOptions, TrainConfig, TrainInputs,
};
use spom::numerics::{central_diff_gradient, max_relative_error, Tape};
use spom::representation::{
    fetch_episode_features, register_sources, FileProvider, Group, Phase, RegistryConfig,
    SeededProvider, SourceRegistry, SourceSpec,
};
use spom::rng::fnv1a64;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

pub fn stats(manifest: &Path, json: bool) -> Result<()> {
    let episodes = load_manifest(manifest)?;
    let report = dataset_stats(&episodes);
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("episodes            {}", report.total);
        println!("  positives         {}", report.positives);
        println!("  negatives         {}", report.negatives);
        println!("vocabulary          {}", report.vocabulary_size);
        println!("total words         {}", report.total_words);
        println!("mean words/sentence {:.4}", report.mean_instruction_len);
    }
    Ok(())
}

pub fn cleanse(manifest: &Path, out: &Path, seed: u64) -> Result<()> {
    let episodes = load_manifest(manifest)?;
    let pool = instruction_pool(&episodes);
    let flagged = episodes
        .iter()
        .filter(|e| e.flagged_mislabel == Some(true))
        .count();
    let cleansed = cleanse_negatives(episodes, &pool, seed)?;
    std::fs::create_dir_all(out)?;
    save_manifest(&out.join("cleansed.jsonl"), &cleansed)?;
    let report = serde_json::json!({
        "replaced": flagged,
        "seed": seed,
        "pool_size": pool.len(),
    });
    write_json(&out.join("cleanse.json"), &report)?;
    println!("replaced instructions for {flagged} flagged negatives");
    Ok(())
}

fn parse_sizes(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing sizes '{s}'"))?;
    match parts.as_slice() {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => bail!("--sizes wants exactly three comma-separated numbers"),
    }
}

pub fn split(manifest: &Path, sizes: &str, seed: u64, stratified: bool, out: &Path) -> Result<()> {
    let episodes = load_manifest(manifest)?;
    let sizes = parse_sizes(sizes)?;
    let split = split_dataset_with(&episodes, sizes, seed, stratified)?;
    let digest = fnv1a64(format!("split|{sizes:?}|{seed}|{stratified}").as_bytes());
    let mut value = serde_json::to_value(&split)?;
    value["digest"] = serde_json::json!(digest);
    write_json(&out.join("split.json"), &value)?;
    println!(
        "split {} episodes into {}/{}/{}",
        episodes.len(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(())
}

fn parse_routing(s: &str) -> Result<SignalRouting> {
    Ok(match s {
        "balanced" => SignalRouting::Balanced,
        "scene" => SignalRouting::SceneOnly,
        "aligned" => SignalRouting::AlignedOnly,
        "narrative" => SignalRouting::NarrativeOnly,
        other => bail!("unknown routing '{other}'"),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn synth(
    episodes: usize,
    failure_rate: f64,
    seed: u64,
    routing: &str,
    videos: usize,
    frames: usize,
    change_at: Option<usize>,
    out: &Path,
) -> Result<()> {
    let config = SynthConfig {
        n_episodes: episodes,
        failure_rate,
        seed,
        routing: parse_routing(routing)?,
        ..SynthConfig::default()
    };
    let mut data = generate_synthetic(&config)?;

    let mut manifest = data.episodes.clone();
    for tag in 0..videos {
        let change = match change_at {
            Some(t) => Some(t),
            // No explicit change point: alternate successful and
            // unsuccessful clips, picking a seeded change frame.
            None if tag % 2 == 0 => Some(1 + (seed as usize + tag) % (frames - 1)),
            None => None,
        };
        let episode = generate_video_episode(
            &config,
            &mut data.store,
            &format!("video_{tag:04}"),
            frames,
            change,
            tag as u64,
        )?;
        manifest.push(episode);
    }

    std::fs::create_dir_all(out)?;
    save_manifest(&out.join("manifest.jsonl"), &manifest)?;
    write_json(&out.join("registry.json"), data.registry.config())?;
    data.store.write_to_dir(&out.join("features"))?;
    let digest = fnv1a64(serde_json::to_string(&config)?.as_bytes());
    let echo = serde_json::json!({ "config": config, "digest": digest });
    write_json(&out.join("synth.json"), &echo)?;
    println!(
        "wrote {} episodes ({} video) under {}",
        manifest.len(),
        videos,
        out.display()
    );
    Ok(())
}

fn default_registry_path(features: &Path) -> PathBuf {
    features
        .parent()
        .map(|p| p.join("registry.json"))
        .unwrap_or_else(|| PathBuf::from("registry.json"))
}

fn resolve_registry(
    explicit: Option<&Path>,
    file_section: Option<&RegistryConfig>,
    features: &Path,
) -> Result<SourceRegistry> {
    if let Some(path) = explicit {
        return load_registry(path);
    }
    if let Some(config) = file_section {
        return Ok(register_sources(config.clone())?);
    }
    let fallback = default_registry_path(features);
    if fallback.exists() {
        return load_registry(&fallback);
    }
    bail!(
        "no registry: pass --registry, add a registry section to --config, or put registry.json at {}",
        fallback.display()
    );
}

fn parse_groups(s: &str) -> Result<BTreeSet<Group>> {
    let mut groups = BTreeSet::new();
    for part in s.split(',') {
        groups.insert(Group::parse(part)?);
    }
    Ok(groups)
}

fn load_split(path: &Path) -> Result<DatasetSplit> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading split {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing split {}", path.display()))
}

/// Merge JSON objects recursively: fields in `overlay` win.
fn merge_json(base: &mut serde_json::Value, overlay: &serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, value) => *slot = value.clone(),
    }
}

pub struct TrainArgs {
    pub manifest: PathBuf,
    pub features: PathBuf,
    pub registry: Option<PathBuf>,
    pub split: PathBuf,
    pub out: PathBuf,
    pub profile: String,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub groups: Option<String>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub threshold: Option<f64>,
}

struct Resolved {
    config: TrainConfig,
    registry: SourceRegistry,
}

#[allow(clippy::too_many_arguments)]
fn resolve_train_config(args: &TrainArgs) -> Result<Resolved> {
    let pipeline: PipelineConfig = match &args.config {
        Some(path) => load_pipeline_config(path)?,
        None => PipelineConfig::default(),
    };

    let mut value = serde_json::to_value(profile(&args.profile)?)?;
    if let Some(overlay) = &pipeline.train {
        merge_json(&mut value, overlay);
    }
    let mut config: TrainConfig = serde_json::from_value(value).context("merged train config")?;

    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(mode) = &args.mode {
        config.mode = AttentionMode::parse(mode)?;
    }
    if let Some(groups) = &args.groups {
        config.enabled_groups = parse_groups(groups)?;
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let Some(lr) = args.lr {
        config.lr = lr;
    }
    if let Some(batch) = args.batch_size {
        config.batch_size = batch;
    }
    if let Some(threshold) = args.threshold {
        config.threshold = threshold;
    }
    config.validate()?;

    let registry = resolve_registry(
        args.registry.as_deref(),
        pipeline.registry.as_ref(),
        &args.features,
    )?;
    Ok(Resolved { config, registry })
}

pub fn train(args: TrainArgs) -> Result<()> {
    let resolved = resolve_train_config(&args)?;
    let episodes = load_manifest(&args.manifest)?;
    let split = load_split(&args.split)?;
    let provider = FileProvider::new(&args.features);
    let inputs = TrainInputs {
        episodes: &episodes,
        split: &split,
        provider: &provider,
        registry: &resolved.registry,
    };
    let outcome = train_run(&inputs, &resolved.config)?;

    std::fs::create_dir_all(&args.out)?;
    let effective = EffectiveConfig::new(resolved.config.clone(), &resolved.registry);
    effective.save(&args.out.join("config.json"))?;
    save_checkpoint(
        &args.out.join("checkpoint.lrck"),
        &outcome.params,
        effective.digest,
    )?;
    write_json(&args.out.join("run.json"), &outcome.result)?;
    let mut curve = String::from("epoch,train_loss,val_accuracy\n");
    for (epoch, (loss, acc)) in outcome
        .result
        .train_loss
        .iter()
        .zip(&outcome.result.val_accuracy)
        .enumerate()
    {
        curve.push_str(&format!("{epoch},{loss},{acc}\n"));
    }
    std::fs::write(args.out.join("run.csv"), curve)?;

    println!(
        "best epoch {} (val {:.4}); test accuracy {:.4}",
        outcome.result.best_epoch,
        outcome.result.val_accuracy[outcome.result.best_epoch],
        outcome.result.test.accuracy()
    );
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub run_config: Option<PathBuf>,
    pub manifest: PathBuf,
    pub features: PathBuf,
    pub split: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub skip_missing: bool,
    pub out: PathBuf,
}

fn load_run(checkpoint: &Path, run_config: Option<&Path>) -> Result<(EffectiveConfig, DecoderParams, SourceRegistry)> {
    let config_path = match run_config {
        Some(p) => p.to_path_buf(),
        None => checkpoint
            .parent()
            .map(|p| p.join("config.json"))
            .ok_or_else(|| anyhow!("cannot infer run config path; pass --run-config"))?,
    };
    let effective = EffectiveConfig::load(&config_path)?;
    let registry = effective.registry()?;
    let params = load_checkpoint(checkpoint, &effective.train.decoder, effective.digest)?;
    Ok((effective, params, registry))
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let (effective, params, registry) = load_run(&args.checkpoint, args.run_config.as_deref())?;
    let filtered = registry.with_groups(&effective.train.enabled_groups);
    let provider = FileProvider::new(&args.features);
    let episodes = load_manifest(&args.manifest)?;

    let selected: Vec<Episode> = match &args.split {
        Some(path) => {
            let split = load_split(path)?;
            let wanted: BTreeSet<&String> = split.test.iter().collect();
            episodes
                .into_iter()
                .filter(|e| wanted.contains(&e.episode_id))
                .collect()
        }
        None => episodes,
    };

    let options = EvalOptions {
        threshold: args.threshold.unwrap_or(effective.train.threshold),
        skip_missing: args.skip_missing,
    };
    let report = evaluate(
        &params,
        effective.train.mode,
        &provider,
        &filtered,
        &selected,
        &options,
    )?;

    std::fs::create_dir_all(&args.out)?;
    let payload = serde_json::json!({
        "matrix": report.matrix,
        "skipped": report.skipped,
        "accuracy": report.matrix.accuracy(),
        "digest": effective.digest,
    });
    write_json(&args.out.join("eval.json"), &payload)?;
    println!(
        "accuracy {:.4} over {} episodes (tp {} fp {} tn {} fn {})",
        report.matrix.accuracy(),
        report.matrix.total(),
        report.matrix.true_pos,
        report.matrix.false_pos,
        report.matrix.true_neg,
        report.matrix.false_neg,
    );
    Ok(())
}

pub struct AblateArgs {
    pub manifest: PathBuf,
    pub features: PathBuf,
    pub registry: Option<PathBuf>,
    pub split: PathBuf,
    pub out: PathBuf,
    pub profile: String,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let train_args = TrainArgs {
        manifest: args.manifest.clone(),
        features: args.features.clone(),
        registry: args.registry.clone(),
        split: args.split.clone(),
        out: args.out.clone(),
        profile: args.profile.clone(),
        config: args.config.clone(),
        seed: args.seed,
        mode: None,
        groups: None,
        epochs: None,
        lr: None,
        batch_size: None,
        threshold: None,
    };
    let resolved = resolve_train_config(&train_args)?;
    let episodes = load_manifest(&args.manifest)?;
    let split = load_split(&args.split)?;
    let provider = FileProvider::new(&args.features);
    let inputs = TrainInputs {
        episodes: &episodes,
        split: &split,
        provider: &provider,
        registry: &resolved.registry,
    };
    let table = run_ablation(&inputs, &resolved.config, &standard_conditions())?;

    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("ablation.json"), table.to_json())?;
    std::fs::write(args.out.join("ablation.csv"), table.to_csv())?;
    let effective = EffectiveConfig::new(resolved.config, &resolved.registry);
    effective.save(&args.out.join("config.json"))?;
    for row in &table.rows {
        println!("{:<18} accuracy {:.4}", row.label, row.accuracy);
    }
    Ok(())
}

pub fn video(
    checkpoint: &Path,
    run_config: Option<&Path>,
    manifest: &Path,
    features: &Path,
    episode_id: Option<&str>,
    out: Option<&Path>,
) -> Result<()> {
    let (effective, params, registry) = load_run(checkpoint, run_config)?;
    let filtered = registry.with_groups(&effective.train.enabled_groups);
    let provider = FileProvider::new(features);
    let episodes = load_manifest(manifest)?;

    let targets: Vec<&Episode> = match episode_id {
        Some(id) => {
            let e = episodes
                .iter()
                .find(|e| e.episode_id == id)
                .ok_or_else(|| anyhow!("episode '{id}' not in manifest"))?;
            vec![e]
        }
        None => episodes.iter().filter(|e| e.frames.is_some()).collect(),
    };
    if targets.is_empty() {
        bail!("no video episodes found");
    }

    let mut outcomes = Vec::with_capacity(targets.len());
    for episode in targets {
        let outcome = classify_video(
            &params,
            effective.train.mode,
            &provider,
            &filtered,
            episode,
            effective.train.threshold,
        )?;
        println!(
            "{}: {} (first success pair: {})",
            outcome.episode_id,
            if outcome.predicted_success { "success" } else { "failure" },
            outcome
                .first_success
                .map(|i| i.to_string())
                .unwrap_or_else(|| "-".into()),
        );
        outcomes.push(outcome);
    }
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        let payload = serde_json::json!({
            "outcomes": outcomes,
            "digest": effective.digest,
        });
        write_json(&out.join("video.json"), &payload)?;
    }
    Ok(())
}

/// Toy problem for the gradient check: `tokens` image tokens, all source
/// dims equal to `dims`.
fn gradcheck_registry(dims: usize, tokens: usize) -> Result<SourceRegistry> {
    let scene = tokens.saturating_sub(2).max(1);
    let aligned = usize::from(tokens >= 2);
    let narrative = usize::from(tokens >= 3);
    let spec = |prefix: &str, n: usize| -> Vec<SourceSpec> {
        (0..n)
            .map(|i| SourceSpec::new(format!("{prefix}{i}"), dims))
            .collect()
    };
    Ok(register_sources(RegistryConfig {
        scene: spec("scene", scene),
        aligned: spec("aligned", aligned),
        narrative: spec("narrative", narrative),
        instruction: spec("inst", 2),
    })?)
}

pub fn gradcheck(dims: usize, tokens: usize, seeds: u64, step: f64) -> ExitCode {
    let run = || -> Result<f64> {
        if dims == 0 || tokens == 0 {
            bail!("--dims and --tokens must be positive");
        }
        let registry = gradcheck_registry(dims, tokens)?;
        let decoder = DecoderConfig {
            d_model: dims,
            d_k: dims,
            d_v: dims,
            mlp_hidden: vec![dims],
            ..DecoderConfig::default()
        };
        let mut worst: f64 = 0.0;
        for seed in 0..seeds {
            let params = DecoderParams::init(&registry, &decoder, seed)?;
            let provider = SeededProvider::new(seed ^ 0x5EED, registry.clone());
            let features = fetch_episode_features(
                &provider,
                &registry,
                "gradcheck",
                &Phase::Before,
                &Phase::After,
            )?;

            let loss_of = |flat: &[f64]| -> f64 {
                let mut p = params.clone();
                p.unflatten_into(flat).expect("same layout");
                let mut tape = Tape::new();
                let staged = p.stage(&mut tape);
                let graph =
                    forward_on(&mut tape, &staged, &p, &features, AttentionMode::Cross).unwrap();
                let loss = tape.softmax_cross_entropy(graph.logits, 1).unwrap();
                tape.value(loss).at(0, 0)
            };

            let flat = params.flatten();
            let mut tape = Tape::new();
            let staged = params.stage(&mut tape);
            let graph = forward_on(&mut tape, &staged, &params, &features, AttentionMode::Cross)?;
            let loss = tape.softmax_cross_entropy(graph.logits, 1)?;
            let grads = tape.backward(loss)?;
            let analytic = flat_gradients(&params, &staged, &grads);
            let numeric = central_diff_gradient(&loss_of, &flat, step)?;
            let err = max_relative_error(&analytic, &numeric);
            println!("seed {seed}: max relative error {err:.3e}");
            worst = worst.max(err);
        }
        println!("max relative error: {worst:.3e}");
        Ok(worst)
    };
    match run() {
        Ok(worst) if worst < 1e-4 => ExitCode::SUCCESS,
        Ok(_) => {
            eprintln!("{}", serde_json::json!({"error": "gradient check exceeded 1e-4"}));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({"error": e.to_string()}));
            ExitCode::from(1)
        }
    }
}

pub fn params(profile_name: &str, config: Option<&Path>, registry: Option<&Path>) -> Result<()> {
    let pipeline = match config {
        Some(path) => load_pipeline_config(path)?,
        None => PipelineConfig::default(),
    };
    let mut value = serde_json::to_value(profile(profile_name)?)?;
    if let Some(overlay) = &pipeline.train {
        merge_json(&mut value, overlay);
    }
    let train: TrainConfig = serde_json::from_value(value)?;
    let registry = match registry {
        Some(path) => load_registry(path)?,
        None => match &pipeline.registry {
            Some(cfg) => register_sources(cfg.clone())?,
            None => SourceRegistry::standard(),
        },
    };
    let filtered = registry.with_groups(&train.enabled_groups);
    let params = DecoderParams::init(&filtered, &train.decoder, train.seed)?;
    println!("{}", params.count_params());
    println!("config digest: {:#018x}", config_digest(&train, &registry));
    Ok(())
}
