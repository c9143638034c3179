//! The thirteen pipeline subcommands.
//!
//! Each command reads its inputs, verifies that every artifact it touches
//! was built from the same corpus and model (stale artifacts abort with
//! exit 2), delegates the actual work to the library, and writes artifacts
//! plus a stage stamp. The bodies hold no math of their own.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use cgc::alloc::{
    calibration_fitness, cgc_f, cgc_l, inverted_alloc, uniform_alloc, AllocMethod, Allocation,
    AllocationProblem, Grid,
};
use cgc::artifact::{sha256_hex, write_json};
use cgc::density::{build_density_map, DensityMap};
use cgc::importance::{
    ablation_scan, build_importance_map, AblationScan, ImportanceMap, WandaAggregation,
};
use cgc::redsim::{theorem1_experiment, theorem2_experiment};
use cgc::sae::{train_bank, SaeBank};
use cgc::stats::{pearson_test, spearman_test, Correlation, PValueMethod};
use cgc::tinylm::{
    capture_activations, checkpoint_fingerprint, evaluate_ppl, read_checkpoint, split_corpus,
    write_checkpoint, ActivationDump, Checkpoint, ComponentId, EvalParams,
};

use crate::config::PipelineConfig;
use crate::corpus;
use crate::stage::{self, Ctx};
use crate::CliError;

// ---------------------------------------------------------------------------
// Artifact wrapper documents (library structs + provenance fingerprints).

/// A perplexity measurement of one checkpoint.
#[derive(Serialize, Deserialize)]
struct EvalDoc {
    tag: String,
    params: EvalParams,
    ppl: f64,
    mean_nll: f64,
    n_predictions: usize,
    corpus_fingerprint: String,
    model_fingerprint: String,
}

/// A correlation with the method it was computed by.
#[derive(Serialize, Deserialize)]
struct LabeledCorrelation {
    method: String,
    coefficient: f64,
    p_value: f64,
    n: usize,
}

impl LabeledCorrelation {
    fn new(method: &str, c: Correlation) -> Self {
        LabeledCorrelation {
            method: method.to_string(),
            coefficient: c.coefficient,
            p_value: c.p_value,
            n: c.n,
        }
    }
}

/// Output of the correlate subcommand.
#[derive(Serialize, Deserialize)]
struct CorrelateDoc {
    n_components: usize,
    density_vs_wanda_spearman: LabeledCorrelation,
    /// Present only when an ablation scan artifact exists.
    density_vs_ablation_pearson: Option<LabeledCorrelation>,
    density_vs_ablation_spearman: Option<LabeledCorrelation>,
    corpus_fingerprint: String,
    model_fingerprint: String,
}

/// An allocation plus the provenance of the density map it came from.
#[derive(Serialize, Deserialize)]
struct AllocDoc {
    allocation: Allocation,
    corpus_fingerprint: String,
    model_fingerprint: String,
}

/// The run manifest: every seed and artifact hash of a pipeline run.
#[derive(Serialize)]
struct Manifest {
    config_fingerprint: String,
    preset: String,
    corpus_fingerprint: String,
    model_fingerprint: String,
    seeds: BTreeMap<&'static str, u64>,
    /// Artifact name (workdir-relative) to SHA-256 of its bytes.
    artifacts: BTreeMap<String, String>,
}

// ---------------------------------------------------------------------------
// Shared loaders.

fn load_checkpoint(ctx: &Ctx, name: &str, produced_by: &str) -> Result<Checkpoint, CliError> {
    let path = ctx.artifact(name);
    if !path.exists() {
        return Err(CliError::Artifact(format!(
            "missing artifact {}; run `cgc {produced_by}` first",
            path.display()
        )));
    }
    read_checkpoint(&path).map_err(CliError::from)
}

fn load_dump(ctx: &Ctx) -> Result<ActivationDump, CliError> {
    let path = ctx.artifact(stage::ACTS);
    if !path.exists() {
        return Err(CliError::Artifact(format!(
            "missing artifact {}; run `cgc dump-acts` first",
            path.display()
        )));
    }
    ActivationDump::read(&path).map_err(CliError::from)
}

fn load_bank(ctx: &Ctx) -> Result<SaeBank, CliError> {
    let path = ctx.artifact(stage::SAES);
    if !path.exists() {
        return Err(CliError::Artifact(format!(
            "missing artifact {}; run `cgc train-saes` first",
            path.display()
        )));
    }
    SaeBank::read(&path).map_err(CliError::from)
}

/// Corpus bytes plus their fingerprint.
fn corpus_with_sha(ctx: &Ctx) -> Result<(Vec<u8>, String), CliError> {
    let bytes = ctx.read_corpus()?;
    let sha = sha256_hex(&bytes);
    Ok((bytes, sha))
}

fn method_name(m: AllocMethod) -> String {
    m.to_string()
}

// ---------------------------------------------------------------------------
// Subcommands.

pub fn gen_corpus(
    ctx: &Ctx,
    cfg: &PipelineConfig,
    seed: Option<u64>,
    bytes: Option<usize>,
) -> Result<(), CliError> {
    let mut params = cfg.corpus.resolve();
    if let Some(s) = seed {
        params.seed = s;
    }
    if let Some(b) = bytes {
        params.bytes = b;
    }
    let out_name = ctx
        .corpus_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus.txt".into());
    ctx.stage("gen-corpus", &(&params, &out_name), &[], || {
        let text = corpus::generate(&params).map_err(CliError::from)?;
        stage::write_bytes(&ctx.corpus_path, &text)?;
        println!(
            "gen-corpus: {} bytes ({} words, zipf {}), wrote {}",
            text.len(),
            params.vocab_words,
            params.zipf_exponent,
            ctx.corpus_path.display()
        );
        Ok(())
    })?;
    Ok(())
}

pub fn train_lm(
    ctx: &Ctx,
    cfg: &PipelineConfig,
    seed: Option<u64>,
    steps: Option<usize>,
) -> Result<(), CliError> {
    let model_cfg = cfg.model.resolve();
    let (mut params, mut train_seed) = cfg.train.resolve();
    if let Some(s) = seed {
        train_seed = s;
    }
    if let Some(s) = steps {
        params.steps = s;
    }
    let eval_params = cfg.eval.resolve();
    let (corpus, corpus_sha) = corpus_with_sha(ctx)?;
    let inputs = (&model_cfg, &params, train_seed, &eval_params, &corpus_sha);
    let outputs = vec![stage::MODEL.to_string(), stage::TRAIN_REPORT.to_string()];
    ctx.stage("train-lm", &inputs, &outputs, || {
        let (train_region, _) = split_corpus(&corpus, &eval_params).map_err(CliError::from)?;
        let (ckpt, report) =
            cgc::tinylm::train_lm(&model_cfg, train_region, &params, train_seed, &corpus_sha)
                .map_err(CliError::from)?;
        write_checkpoint(&ctx.artifact(stage::MODEL), &ckpt).map_err(CliError::from)?;
        write_json(&ctx.artifact(stage::TRAIN_REPORT), &report).map_err(CliError::from)?;
        println!(
            "train-lm: {} steps, final loss {:.4} nats/byte, wrote {}",
            params.steps,
            report.final_loss,
            stage::MODEL
        );
        Ok(())
    })?;
    Ok(())
}

pub fn eval_ppl(
    ctx: &Ctx,
    cfg: &PipelineConfig,
    checkpoint: Option<PathBuf>,
    tag: Option<String>,
) -> Result<(), CliError> {
    let eval_params = cfg.eval.resolve();
    let (ckpt_path, tag) = match (checkpoint, tag) {
        (None, t) => (
            ctx.artifact(stage::MODEL),
            t.unwrap_or_else(|| "dense".into()),
        ),
        (Some(p), Some(t)) => (p, t),
        (Some(p), None) => {
            // model.<tag>.cgc1 carries its tag in the name.
            let stem = p.file_name().map(|n| n.to_string_lossy().into_owned());
            let derived = stem
                .as_deref()
                .and_then(|s| s.strip_prefix("model."))
                .and_then(|s| s.strip_suffix(".cgc1"))
                .map(str::to_string);
            match derived {
                Some(t) => (p, t),
                None => {
                    return Err(CliError::Usage(
                        "cannot derive a tag from the checkpoint name; pass --tag".into(),
                    ))
                }
            }
        }
    };
    if tag.is_empty() || !tag.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
        return Err(CliError::Usage(format!(
            "tag must be nonempty ASCII alphanumeric/dash, got {tag:?}"
        )));
    }
    if !ckpt_path.exists() {
        return Err(CliError::Artifact(format!(
            "missing artifact {}; run `cgc train-lm` (or `cgc prune`) first",
            ckpt_path.display()
        )));
    }
    let (corpus, corpus_sha) = corpus_with_sha(ctx)?;
    let ckpt_sha = stage::input_sha(&ckpt_path, "train-lm")?;
    let out_name = stage::eval_json(&tag);
    let inputs = (&eval_params, &ckpt_sha, &corpus_sha, &tag);
    ctx.stage(
        &format!("eval-ppl-{tag}"),
        &inputs,
        std::slice::from_ref(&out_name),
        || {
            let ckpt = read_checkpoint(&ckpt_path).map_err(CliError::from)?;
            stage::require_match("corpus fingerprint", &corpus_sha, &ckpt.corpus_fingerprint)?;
            let (_, eval_region) = split_corpus(&corpus, &eval_params).map_err(CliError::from)?;
            let report = evaluate_ppl(&ckpt, eval_region, &eval_params).map_err(CliError::from)?;
            let doc = EvalDoc {
                tag: tag.clone(),
                params: eval_params,
                ppl: report.ppl,
                mean_nll: report.mean_nll,
                n_predictions: report.n_predictions,
                corpus_fingerprint: corpus_sha.clone(),
                model_fingerprint: checkpoint_fingerprint(&ckpt),
            };
            write_json(&ctx.artifact(&out_name), &doc).map_err(CliError::from)?;
            println!(
                "eval-ppl[{tag}]: ppl {:.4} ({} predictions), wrote {out_name}",
                report.ppl, report.n_predictions
            );
            Ok(())
        },
    )?;
    Ok(())
}

pub fn dump_acts(ctx: &Ctx, cfg: &PipelineConfig) -> Result<(), CliError> {
    let calibration = cfg.calibration.resolve();
    let eval_params = cfg.eval.resolve();
    let (corpus, corpus_sha) = corpus_with_sha(ctx)?;
    let model_sha = stage::input_sha(&ctx.artifact(stage::MODEL), "train-lm")?;
    let inputs = (&calibration, &eval_params, &model_sha, &corpus_sha);
    ctx.stage("dump-acts", &inputs, &[stage::ACTS.to_string()], || {
        let ckpt = load_checkpoint(ctx, stage::MODEL, "train-lm")?;
        stage::require_match("corpus fingerprint", &corpus_sha, &ckpt.corpus_fingerprint)?;
        let (train_region, _) = split_corpus(&corpus, &eval_params).map_err(CliError::from)?;
        let dump =
            capture_activations(&ckpt, train_region, &calibration).map_err(CliError::from)?;
        dump.write(&ctx.artifact(stage::ACTS))
            .map_err(CliError::from)?;
        println!(
            "dump-acts: {} components x {} rows, wrote {}",
            dump.components.len(),
            dump.n_rows(),
            stage::ACTS
        );
        Ok(())
    })?;
    Ok(())
}

pub fn train_saes(ctx: &Ctx, cfg: &PipelineConfig, seed: Option<u64>) -> Result<(), CliError> {
    let acts_sha = stage::input_sha(&ctx.artifact(stage::ACTS), "dump-acts")?;
    // d_input is fixed by the dump's model config; resolve after loading.
    let dump = load_dump(ctx)?;
    let (sae_cfg, mut base_seed) = cfg.sae.resolve(dump.config.d_head);
    if let Some(s) = seed {
        base_seed = s;
    }
    let inputs = (&sae_cfg, base_seed, &acts_sha);
    let outputs = vec![stage::SAES.to_string(), stage::SAE_STATS.to_string()];
    ctx.stage("train-saes", &inputs, &outputs, || {
        let bank = train_bank(&dump, &sae_cfg, base_seed).map_err(CliError::from)?;
        bank.write(&ctx.artifact(stage::SAES))
            .map_err(CliError::from)?;
        let mut csv = String::from("layer,head,initial_recon,final_recon\n");
        let mut improved = 0usize;
        for (id, _, stats) in &bank.components {
            if let ComponentId::AttnHead { layer, head } = id {
                csv.push_str(&format!(
                    "{},{},{:.6},{:.6}\n",
                    layer, head, stats.initial_recon, stats.final_recon
                ));
            }
            if stats.final_recon < stats.initial_recon {
                improved += 1;
            }
        }
        stage::write_bytes(&ctx.artifact(stage::SAE_STATS), csv.as_bytes())?;
        println!(
            "train-saes: {} autoencoders ({} improved), wrote {} {}",
            bank.components.len(),
            improved,
            stage::SAES,
            stage::SAE_STATS
        );
        Ok(())
    })?;
    Ok(())
}

pub fn density(ctx: &Ctx, cfg: &PipelineConfig) -> Result<(), CliError> {
    let params = cfg.density.resolve();
    let acts_sha = stage::input_sha(&ctx.artifact(stage::ACTS), "dump-acts")?;
    let saes_sha = stage::input_sha(&ctx.artifact(stage::SAES), "train-saes")?;
    let inputs = (&params, &acts_sha, &saes_sha);
    let outputs = vec![
        stage::DENSITY_JSON.to_string(),
        stage::DENSITY_CSV.to_string(),
    ];
    ctx.stage("density", &inputs, &outputs, || {
        let dump = load_dump(ctx)?;
        let bank = load_bank(ctx)?;
        stage::require_match(
            "corpus fingerprint",
            &dump.corpus_fingerprint,
            &bank.corpus_fingerprint,
        )?;
        stage::require_match(
            "model fingerprint",
            &dump.model_fingerprint,
            &bank.model_fingerprint,
        )?;
        let map = build_density_map(&dump, &bank, &params).map_err(CliError::from)?;
        write_json(&ctx.artifact(stage::DENSITY_JSON), &map).map_err(CliError::from)?;
        stage::write_bytes(&ctx.artifact(stage::DENSITY_CSV), map.to_csv().as_bytes())?;
        println!(
            "density: {} components, delta in [{:.4}, {:.4}] (mean {:.4}), wrote {} {}",
            map.records.len(),
            map.summary.min,
            map.summary.max,
            map.summary.mean,
            stage::DENSITY_JSON,
            stage::DENSITY_CSV
        );
        Ok(())
    })?;
    Ok(())
}

pub fn wanda(ctx: &Ctx, cfg: &PipelineConfig) -> Result<(), CliError> {
    let _ = cfg;
    let model_sha = stage::input_sha(&ctx.artifact(stage::MODEL), "train-lm")?;
    let acts_sha = stage::input_sha(&ctx.artifact(stage::ACTS), "dump-acts")?;
    let aggregation = WandaAggregation::Mean;
    let inputs = (&aggregation, &model_sha, &acts_sha);
    let outputs = vec![
        stage::IMPORTANCE_JSON.to_string(),
        stage::IMPORTANCE_CSV.to_string(),
    ];
    ctx.stage("wanda", &inputs, &outputs, || {
        let ckpt = load_checkpoint(ctx, stage::MODEL, "train-lm")?;
        let dump = load_dump(ctx)?;
        stage::require_match(
            "model fingerprint",
            &checkpoint_fingerprint(&ckpt),
            &dump.model_fingerprint,
        )?;
        let map = build_importance_map(&ckpt, &dump, aggregation).map_err(CliError::from)?;
        write_json(&ctx.artifact(stage::IMPORTANCE_JSON), &map).map_err(CliError::from)?;
        stage::write_bytes(
            &ctx.artifact(stage::IMPORTANCE_CSV),
            map.to_csv().as_bytes(),
        )?;
        println!(
            "wanda: {} components, wrote {} {}",
            map.records.len(),
            stage::IMPORTANCE_JSON,
            stage::IMPORTANCE_CSV
        );
        Ok(())
    })?;
    Ok(())
}

pub fn ablate_scan(ctx: &Ctx, cfg: &PipelineConfig) -> Result<(), CliError> {
    let eval_params = cfg.eval.resolve();
    let (corpus, corpus_sha) = corpus_with_sha(ctx)?;
    let model_sha = stage::input_sha(&ctx.artifact(stage::MODEL), "train-lm")?;
    let inputs = (&eval_params, &model_sha, &corpus_sha);
    let outputs = vec![
        stage::ABLATE_JSON.to_string(),
        stage::ABLATE_CSV.to_string(),
    ];
    ctx.stage("ablate-scan", &inputs, &outputs, || {
        let ckpt = load_checkpoint(ctx, stage::MODEL, "train-lm")?;
        stage::require_match("corpus fingerprint", &corpus_sha, &ckpt.corpus_fingerprint)?;
        let (_, eval_region) = split_corpus(&corpus, &eval_params).map_err(CliError::from)?;
        let components = ckpt.config.attention_heads();
        let scan =
            ablation_scan(&ckpt, eval_region, &eval_params, &components).map_err(CliError::from)?;
        write_json(&ctx.artifact(stage::ABLATE_JSON), &scan).map_err(CliError::from)?;
        stage::write_bytes(&ctx.artifact(stage::ABLATE_CSV), scan.to_csv().as_bytes())?;
        let max = scan
            .records
            .iter()
            .map(|(_, d)| *d)
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "ablate-scan: {} heads, baseline ppl {:.4}, max dppl {:.4}, wrote {} {}",
            scan.records.len(),
            scan.baseline_ppl,
            max,
            stage::ABLATE_JSON,
            stage::ABLATE_CSV
        );
        Ok(())
    })?;
    Ok(())
}

pub fn correlate(ctx: &Ctx, cfg: &PipelineConfig, method: PValueMethod) -> Result<(), CliError> {
    let _ = cfg;
    let density_sha = stage::input_sha(&ctx.artifact(stage::DENSITY_JSON), "density")?;
    let importance_sha = stage::input_sha(&ctx.artifact(stage::IMPORTANCE_JSON), "wanda")?;
    let ablate_path = ctx.artifact(stage::ABLATE_JSON);
    let ablate_sha = if ablate_path.exists() {
        Some(stage::input_sha(&ablate_path, "ablate-scan")?)
    } else {
        None
    };
    let method_label = match method {
        PValueMethod::TApprox => "t",
        PValueMethod::Permutation => "permutation",
    };
    let inputs = (&density_sha, &importance_sha, &ablate_sha, method_label);
    ctx.stage(
        "correlate",
        &inputs,
        &[stage::CORRELATE_JSON.to_string()],
        || {
            let density: DensityMap =
                stage::read_json_artifact(&ctx.artifact(stage::DENSITY_JSON), "density")?;
            let importance: ImportanceMap =
                stage::read_json_artifact(&ctx.artifact(stage::IMPORTANCE_JSON), "wanda")?;
            stage::require_match(
                "corpus fingerprint",
                &density.corpus_fingerprint,
                &importance.corpus_fingerprint,
            )?;
            stage::require_match(
                "model fingerprint",
                &density.model_fingerprint,
                &importance.model_fingerprint,
            )?;
            // Align importance (and ablation) values to density record order.
            let deltas = density.deltas();
            let mut wandas = Vec::with_capacity(deltas.len());
            for r in &density.records {
                wandas.push(
                    importance
                        .record(r.component)
                        .map_err(CliError::from)?
                        .wanda,
                );
            }
            let dw = spearman_test(&deltas, &wandas, method).map_err(CliError::from)?;
            let (mut pa, mut sa) = (None, None);
            if ablate_sha.is_some() {
                let scan: AblationScan = stage::read_json_artifact(&ablate_path, "ablate-scan")?;
                stage::require_match(
                    "corpus fingerprint",
                    &density.corpus_fingerprint,
                    &scan.corpus_fingerprint,
                )?;
                stage::require_match(
                    "model fingerprint",
                    &density.model_fingerprint,
                    &scan.model_fingerprint,
                )?;
                let mut dppl = Vec::with_capacity(deltas.len());
                for r in &density.records {
                    let v = scan
                        .records
                        .iter()
                        .find(|(id, _)| *id == r.component)
                        .map(|(_, d)| *d)
                        .ok_or_else(|| {
                            CliError::Artifact(format!(
                                "stale artifact: ablation scan lacks component {}",
                                r.component
                            ))
                        })?;
                    dppl.push(v);
                }
                pa = Some(LabeledCorrelation::new(
                    "pearson",
                    pearson_test(&deltas, &dppl, method).map_err(CliError::from)?,
                ));
                sa = Some(LabeledCorrelation::new(
                    "spearman",
                    spearman_test(&deltas, &dppl, method).map_err(CliError::from)?,
                ));
            }
            let doc = CorrelateDoc {
                n_components: deltas.len(),
                density_vs_wanda_spearman: LabeledCorrelation::new("spearman", dw),
                density_vs_ablation_pearson: pa,
                density_vs_ablation_spearman: sa,
                corpus_fingerprint: density.corpus_fingerprint.clone(),
                model_fingerprint: density.model_fingerprint.clone(),
            };
            write_json(&ctx.artifact(stage::CORRELATE_JSON), &doc).map_err(CliError::from)?;
            println!(
                "correlate: spearman(density, wanda) rho {:.4} p {:.4} n {}, wrote {}",
                doc.density_vs_wanda_spearman.coefficient,
                doc.density_vs_wanda_spearman.p_value,
                doc.n_components,
                stage::CORRELATE_JSON
            );
            Ok(())
        },
    )?;
    Ok(())
}

pub fn allocate(
    ctx: &Ctx,
    cfg: &PipelineConfig,
    method: AllocMethod,
    rho: Option<f64>,
) -> Result<(), CliError> {
    let mut settings = cfg.alloc.resolve();
    if let Some(r) = rho {
        settings.rho = r;
    }
    let evo = cfg.evo.resolve();
    let name = method_name(method);
    let density_sha = stage::input_sha(&ctx.artifact(stage::DENSITY_JSON), "density")?;
    let model_sha = stage::input_sha(&ctx.artifact(stage::MODEL), "train-lm")?;
    let evo_part = if method == AllocMethod::CgcF {
        Some(&evo)
    } else {
        None
    };
    let inputs = (&settings, &name, &density_sha, &model_sha, evo_part);
    let mut outputs = vec![stage::alloc_json(&name)];
    if method == AllocMethod::CgcF {
        outputs.push(stage::EVO_TRACE_CSV.to_string());
    }
    ctx.stage(&format!("allocate-{name}"), &inputs, &outputs, || {
        let density: DensityMap =
            stage::read_json_artifact(&ctx.artifact(stage::DENSITY_JSON), "density")?;
        let ckpt = load_checkpoint(ctx, stage::MODEL, "train-lm")?;
        stage::require_match(
            "model fingerprint",
            &checkpoint_fingerprint(&ckpt),
            &density.model_fingerprint,
        )?;
        let components: Vec<(ComponentId, usize, f64)> = density
            .records
            .iter()
            .map(|r| (r.component, ckpt.config.d_head, r.delta))
            .collect();
        let problem = AllocationProblem::new(
            components,
            settings.rho,
            settings.rho_min,
            settings.rho_max,
            Grid::uniform(settings.grid_steps).map_err(CliError::from)?,
            settings.transfer,
        )
        .map_err(CliError::from)?;
        let allocation = match method {
            AllocMethod::Uniform => uniform_alloc(&problem).map_err(CliError::from)?,
            AllocMethod::CgcL => cgc_l(&problem).map_err(CliError::from)?,
            AllocMethod::Inverted => inverted_alloc(&problem).map_err(CliError::from)?,
            AllocMethod::CgcF => {
                // Fitness: calibration NLL of the pruned model on a seeded
                // sample of the captured calibration sequences.
                let (corpus, corpus_sha) = corpus_with_sha(ctx)?;
                stage::require_match("corpus fingerprint", &corpus_sha, &ckpt.corpus_fingerprint)?;
                let dump = load_dump(ctx)?;
                stage::require_match(
                    "model fingerprint",
                    &checkpoint_fingerprint(&ckpt),
                    &dump.model_fingerprint,
                )?;
                let eval_params = cfg.eval.resolve();
                let (train_region, _) =
                    split_corpus(&corpus, &eval_params).map_err(CliError::from)?;
                let seqs = fitness_sequences(&dump, train_region, evo.fitness_sample, evo.seed)?;
                let init = cgc_l(&problem).map_err(CliError::from)?;
                let mut fitness = calibration_fitness(&ckpt, &seqs);
                let alloc = cgc_f(&problem, &init, &evo, &mut fitness).map_err(CliError::from)?;
                stage::write_bytes(
                    &ctx.artifact(stage::EVO_TRACE_CSV),
                    alloc.trace_csv().as_bytes(),
                )?;
                alloc
            }
        };
        let doc = AllocDoc {
            allocation,
            corpus_fingerprint: density.corpus_fingerprint.clone(),
            model_fingerprint: density.model_fingerprint.clone(),
        };
        write_json(&ctx.artifact(&stage::alloc_json(&name)), &doc).map_err(CliError::from)?;
        println!(
            "allocate[{name}]: achieved ratio {:.4} (target {}), budget {}, wrote {}",
            doc.allocation.achieved_ratio,
            settings.rho,
            if doc.allocation.budget_met {
                "met"
            } else {
                "capped"
            },
            stage::alloc_json(&name)
        );
        Ok(())
    })?;
    Ok(())
}

/// Deterministic sample of calibration sequences for the evolutionary
/// fitness oracle: `n` of the dump's sequences, chosen by `seed`, sliced
/// back out of the training region.
fn fitness_sequences(
    dump: &ActivationDump,
    train_region: &[u8],
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<u8>>, CliError> {
    if dump.sequences.is_empty() {
        return Err(CliError::Numeric("activation dump has no sequences".into()));
    }
    let mut idx: Vec<usize> = (0..dump.sequences.len()).collect();
    let mut rng = cgc::rng::rng_from(seed);
    let take = n.min(idx.len()).max(1);
    for t in 0..take {
        let pick = t + rand::Rng::gen_range(&mut rng, 0..idx.len() - t);
        idx.swap(t, pick);
    }
    let mut seqs = Vec::with_capacity(take);
    for &i in &idx[..take] {
        let info = dump.sequences[i];
        let end = info.corpus_start + info.len;
        if end > train_region.len() {
            return Err(CliError::Artifact(
                "stale artifact: dump sequences fall outside the current corpus".into(),
            ));
        }
        seqs.push(train_region[info.corpus_start..end].to_vec());
    }
    Ok(seqs)
}

pub fn prune(ctx: &Ctx, cfg: &PipelineConfig, method: AllocMethod) -> Result<(), CliError> {
    let _ = cfg;
    let name = method_name(method);
    let alloc_name = stage::alloc_json(&name);
    let alloc_path = ctx.artifact(&alloc_name);
    if !alloc_path.exists() {
        return Err(CliError::Artifact(format!(
            "missing artifact {}; run `cgc allocate --method {name}` first",
            alloc_path.display()
        )));
    }
    let model_sha = stage::input_sha(&ctx.artifact(stage::MODEL), "train-lm")?;
    let alloc_sha = stage::input_sha(&alloc_path, "allocate")?;
    let out_name = stage::pruned_model(&name);
    let inputs = (&model_sha, &alloc_sha, &name);
    ctx.stage(
        &format!("prune-{name}"),
        &inputs,
        std::slice::from_ref(&out_name),
        || {
            let ckpt = load_checkpoint(ctx, stage::MODEL, "train-lm")?;
            let doc: AllocDoc = stage::read_json_artifact(&alloc_path, "allocate")?;
            stage::require_match(
                "model fingerprint",
                &checkpoint_fingerprint(&ckpt),
                &doc.model_fingerprint,
            )?;
            let spec = doc.allocation.to_prune_spec();
            let pruned = cgc::tinylm::apply_prune(&ckpt, &spec).map_err(CliError::from)?;
            write_checkpoint(&ctx.artifact(&out_name), &pruned).map_err(CliError::from)?;
            println!(
                "prune[{name}]: retained ratio {:.4}, wrote {out_name}",
                doc.allocation.achieved_ratio
            );
            Ok(())
        },
    )?;
    Ok(())
}

pub fn simulate_theorems(
    ctx: &Ctx,
    cfg: &PipelineConfig,
    trials: Option<usize>,
) -> Result<(), CliError> {
    let mut t1 = cfg.theorem1.resolve();
    let mut t2 = cfg.theorem2.resolve();
    if let Some(n) = trials {
        t1.trials = n;
        t2.trials = n;
    }
    let outputs = vec![
        stage::THEOREM1_JSON.to_string(),
        stage::THEOREM1_CSV.to_string(),
        stage::THEOREM2_JSON.to_string(),
        stage::THEOREM2_CSV.to_string(),
    ];
    ctx.stage("simulate-theorems", &(&t1, &t2), &outputs, || {
        let r1 = theorem1_experiment(&t1).map_err(CliError::from)?;
        write_json(&ctx.artifact(stage::THEOREM1_JSON), &r1).map_err(CliError::from)?;
        stage::write_bytes(&ctx.artifact(stage::THEOREM1_CSV), r1.to_csv().as_bytes())?;
        match &r1.spearman {
            Some(c) => println!(
                "simulate-theorems: entropy sweep rho {:.4} p {:.4} over {} levels",
                c.coefficient,
                c.p_value,
                r1.levels.len()
            ),
            None => println!(
                "simulate-theorems: entropy sweep untestable ({} level)",
                r1.levels.len()
            ),
        }
        let r2 = theorem2_experiment(&t2).map_err(CliError::from)?;
        write_json(&ctx.artifact(stage::THEOREM2_JSON), &r2).map_err(CliError::from)?;
        stage::write_bytes(&ctx.artifact(stage::THEOREM2_CSV), r2.to_csv().as_bytes())?;
        println!(
            "simulate-theorems: guided {:.4} vs uniform {:.4} (difference {:+.4} +- {:.4})",
            r2.aggregate_guided, r2.aggregate_uniform, r2.difference, r2.combined_stderr
        );
        println!(
            "simulate-theorems: wrote {} {} {} {}",
            stage::THEOREM1_JSON,
            stage::THEOREM1_CSV,
            stage::THEOREM2_JSON,
            stage::THEOREM2_CSV
        );
        Ok(())
    })?;
    Ok(())
}

/// Methods the report covers, in table order.
const REPORT_METHODS: [AllocMethod; 4] = [
    AllocMethod::Uniform,
    AllocMethod::CgcL,
    AllocMethod::CgcF,
    AllocMethod::Inverted,
];

pub fn report(ctx: &Ctx, cfg: &PipelineConfig) -> Result<(), CliError> {
    let eval_params = cfg.eval.resolve();
    let (corpus, corpus_sha) = corpus_with_sha(ctx)?;

    // Which pruned models exist? Uniform is required as the baseline the
    // table's last column is defined against.
    let mut tags: Vec<(String, String)> = vec![("dense".into(), stage::MODEL.into())];
    for m in REPORT_METHODS {
        let name = method_name(m);
        let file = stage::pruned_model(&name);
        if ctx.artifact(&file).exists() {
            tags.push((name, file));
        }
    }
    if !tags.iter().any(|(t, _)| t == "uniform") {
        return Err(CliError::Artifact(
            "report needs the uniform baseline; run `cgc allocate --method uniform` and `cgc prune --method uniform` first".into(),
        ));
    }

    // Stage fingerprint: every artifact the manifest will hash.
    let mut artifact_hashes = BTreeMap::new();
    for name in known_artifacts(&tags) {
        let path = ctx.artifact(&name);
        if path.exists() {
            artifact_hashes.insert(name, stage::input_sha(&path, "report")?);
        }
    }
    let corpus_name = ctx
        .corpus_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus.txt".into());
    let inputs = (&eval_params, &corpus_sha, &artifact_hashes);
    let mut outputs = vec![stage::REPORT_CSV.to_string(), stage::MANIFEST.to_string()];
    for (tag, _) in &tags {
        outputs.push(stage::eval_json(tag));
    }
    ctx.stage("report", &inputs, &outputs, || {
        // Collect (tag, ppl), evaluating any checkpoint that lacks a
        // current eval document.
        let (_, eval_region) = split_corpus(&corpus, &eval_params).map_err(CliError::from)?;
        let mut rows: Vec<(String, f64)> = Vec::with_capacity(tags.len());
        let mut dense_fp = String::new();
        for (tag, file) in &tags {
            let ckpt =
                load_checkpoint(ctx, file, if tag == "dense" { "train-lm" } else { "prune" })?;
            stage::require_match("corpus fingerprint", &corpus_sha, &ckpt.corpus_fingerprint)?;
            let model_fp = checkpoint_fingerprint(&ckpt);
            if tag == "dense" {
                dense_fp = model_fp.clone();
            }
            let eval_path = ctx.artifact(&stage::eval_json(tag));
            let cached: Option<EvalDoc> = if eval_path.exists() {
                let doc: EvalDoc = stage::read_json_artifact(&eval_path, "eval-ppl")?;
                let current = doc.model_fingerprint == model_fp
                    && doc.corpus_fingerprint == corpus_sha
                    && doc.params == eval_params;
                current.then_some(doc)
            } else {
                None
            };
            let doc = match cached {
                Some(doc) => doc,
                None => {
                    let report =
                        evaluate_ppl(&ckpt, eval_region, &eval_params).map_err(CliError::from)?;
                    let doc = EvalDoc {
                        tag: tag.clone(),
                        params: eval_params,
                        ppl: report.ppl,
                        mean_nll: report.mean_nll,
                        n_predictions: report.n_predictions,
                        corpus_fingerprint: corpus_sha.clone(),
                        model_fingerprint: model_fp,
                    };
                    write_json(&eval_path, &doc).map_err(CliError::from)?;
                    doc
                }
            };
            rows.push((tag.clone(), doc.ppl));
        }
        let dense_ppl = rows[0].1;
        let uniform_ppl = rows
            .iter()
            .find(|(t, _)| t == "uniform")
            .map(|(_, p)| *p)
            .expect("uniform presence checked above");

        let mut csv = String::from("method,ppl,dppl_vs_dense,dppl_vs_uniform\n");
        for (tag, ppl) in &rows {
            csv.push_str(&format!(
                "{tag},{:.6},{:.6},{:.6}\n",
                ppl,
                ppl - dense_ppl,
                ppl - uniform_ppl
            ));
        }
        stage::write_bytes(&ctx.artifact(stage::REPORT_CSV), csv.as_bytes())?;

        // Refresh hashes for anything the loop above just (re)wrote, then
        // write the manifest.
        let mut artifacts = artifact_hashes.clone();
        for (tag, _) in &tags {
            let name = stage::eval_json(tag);
            artifacts.insert(
                name.clone(),
                stage::input_sha(&ctx.artifact(&name), "report")?,
            );
        }
        artifacts.insert(
            stage::REPORT_CSV.to_string(),
            stage::input_sha(&ctx.artifact(stage::REPORT_CSV), "report")?,
        );
        artifacts.insert(corpus_name.clone(), corpus_sha.clone());
        let manifest = Manifest {
            config_fingerprint: config_fingerprint(cfg)?,
            preset: cfg.preset.clone(),
            corpus_fingerprint: corpus_sha.clone(),
            model_fingerprint: dense_fp,
            seeds: seed_table(cfg),
            artifacts,
        };
        write_json(&ctx.artifact(stage::MANIFEST), &manifest).map_err(CliError::from)?;

        print!("{csv}");
        println!("report: wrote {} {}", stage::REPORT_CSV, stage::MANIFEST);
        Ok(())
    })?;
    Ok(())
}

/// Every canonical artifact name that might exist for the manifest.
fn known_artifacts(tags: &[(String, String)]) -> Vec<String> {
    let mut names = vec![
        stage::MODEL.to_string(),
        stage::TRAIN_REPORT.to_string(),
        stage::ACTS.to_string(),
        stage::SAES.to_string(),
        stage::SAE_STATS.to_string(),
        stage::DENSITY_JSON.to_string(),
        stage::DENSITY_CSV.to_string(),
        stage::IMPORTANCE_JSON.to_string(),
        stage::IMPORTANCE_CSV.to_string(),
        stage::ABLATE_JSON.to_string(),
        stage::ABLATE_CSV.to_string(),
        stage::CORRELATE_JSON.to_string(),
        stage::THEOREM1_JSON.to_string(),
        stage::THEOREM1_CSV.to_string(),
        stage::THEOREM2_JSON.to_string(),
        stage::THEOREM2_CSV.to_string(),
        stage::EVO_TRACE_CSV.to_string(),
    ];
    for m in REPORT_METHODS {
        let name = method_name(m);
        names.push(stage::alloc_json(&name));
    }
    for (tag, file) in tags {
        if tag != "dense" {
            names.push(file.clone());
        }
    }
    names
}

/// Fingerprint of every resolved parameter block — the manifest's summary
/// of "what configuration produced this run".
fn config_fingerprint(cfg: &PipelineConfig) -> Result<String, CliError> {
    let model = cfg.model.resolve();
    let (train, train_seed) = cfg.train.resolve();
    let (sae, sae_seed) = cfg.sae.resolve(model.d_head);
    let bundle = (
        &model,
        (&train, train_seed),
        cfg.eval.resolve(),
        cfg.calibration.resolve(),
        (&sae, sae_seed),
        cfg.density.resolve(),
        cfg.alloc.resolve(),
        cfg.evo.resolve(),
        cfg.corpus.resolve(),
    );
    cgc::artifact::fingerprint(&bundle).map_err(CliError::from)
}

/// All named seeds of the pipeline, for the manifest.
fn seed_table(cfg: &PipelineConfig) -> BTreeMap<&'static str, u64> {
    let model = cfg.model.resolve();
    let (_, train_seed) = cfg.train.resolve();
    let (_, sae_seed) = cfg.sae.resolve(model.d_head);
    let mut seeds = BTreeMap::new();
    seeds.insert("corpus", cfg.corpus.resolve().seed);
    seeds.insert("model_init", model.seed);
    seeds.insert("train_batches", train_seed);
    seeds.insert("calibration", cfg.calibration.resolve().seed);
    seeds.insert("sae_base", sae_seed);
    seeds.insert("density_pairs", cfg.density.resolve().pair_seed);
    seeds.insert("evo", cfg.evo.resolve().seed);
    seeds.insert("theorem1", cfg.theorem1.resolve().seed);
    seeds.insert("theorem2", cfg.theorem2.resolve().seed);
    seeds
}
