//! `habitat-forge`: command-line pipelines for habitat-aware bird datasets.
//!
//! One binary, one subcommand per stage: ingest, cluster, augment, perturb,
//! flybird, prompts, eval, compare, report. A TOML config file can supply
//! any setting; flags override it. Every randomized stage draws from a
//! stage-keyed stream derived from the run seed, outputs are stamped with a
//! hash of the effective settings, and a rerun with the same config
//! reproduces every output byte for byte.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use habitat_forge_core::augment::{self, AugmentationPlan, ExecuteOptions, Strategy};
use habitat_forge_core::composite::DiffusionInpainter;
use habitat_forge_core::corpus::{DatasetManifest, DescriptorKind, DescriptorSet, NameDirection};
use habitat_forge_core::flybird::{self, FlyBirdRule};
use habitat_forge_core::perturb::{self, PerturbOptions, PerturbationKind};
use habitat_forge_core::prompt::{
    baseline_records, build_ensembles, ensemble_records, read_prompt_file, swap_descriptor_names,
    write_prompt_file, MissingHabitatPolicy,
};
use habitat_forge_core::report::{emit_report, ReportLayout};
use habitat_forge_core::seedstream::derive_seed;
use habitat_forge_core::textcluster::{build_habitat_groups, HabitatGroups};
use habitat_forge_core::zseval::{
    compare_runs, evaluate, few_shot_extend, group_overlap, ClassifierEnsemble, EmbeddingMatrix,
    EvalReport,
};

use config::{pick, require, FileConfig, ResolvedSettings};

#[derive(Parser)]
#[command(
    name = "habitat-forge",
    version,
    about = "Habitat-aware dataset tooling: clustering, augmentation, perturbation, prompts, evaluation"
)]
struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap data-parallel workers (mirrors HABITAT_FORGE_JOBS).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a manifest (and optional descriptor coverage), emit the
    /// canonical serialization.
    Ingest {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Habitat descriptors to check coverage against the manifest.
        #[arg(long)]
        habitat: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster habitat descriptions into habitat groups.
    Cluster {
        #[arg(long)]
        habitat: Option<PathBuf>,
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan and execute a habitat-mixing augmentation run.
    Augment {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// mixed-s | mixed-g | mixed-i
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root all manifest paths resolve against (default: manifest dir).
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        copies: Option<usize>,
        /// Square canvas size both overlay operands are resized to.
        #[arg(long)]
        canvas: Option<u32>,
        #[arg(long)]
        inpaint_iters: Option<usize>,
        /// Audit-load a previously dumped plan instead of planning afresh.
        #[arg(long)]
        plan_in: Option<PathBuf>,
        /// Plan only: dump the pairing list and skip execution.
        #[arg(long)]
        plan_only: bool,
    },
    /// Build perturbed test-set variants.
    Perturb {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Comma-separated: original,black-background,no-bird,black-boxes,big-box
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<String>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        box_frac: Option<f64>,
        #[arg(long)]
        boxes: Option<usize>,
        #[arg(long)]
        inpaint_iters: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        root: Option<PathBuf>,
        /// Accept a bounding box as a rectangular mask when no mask ships.
        #[arg(long)]
        bbox_as_mask: bool,
        /// Skip instances missing a prerequisite and list them in the report.
        #[arg(long)]
        skip_missing: bool,
    },
    /// Partition a manifest into FlyBird / Non-FlyBird subsets.
    Flybird {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// TOML rule file: sky_ids, ground_ids, optional thresholds.
        #[arg(long)]
        rule: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Emit prompt files: baseline or descriptor ensembles.
    Prompts {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        visual: Option<PathBuf>,
        /// mv | peeb | ssc
        #[arg(long)]
        visual_kind: Option<String>,
        #[arg(long)]
        habitat: Option<PathBuf>,
        /// none | common-to-scientific | scientific-to-common
        #[arg(long)]
        direction: Option<String>,
        /// error | visual-only (classes without habitat text)
        #[arg(long)]
        policy: Option<String>,
        /// Emit only the baseline template for every class.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score image embeddings against a prompt-file ensemble.
    Eval {
        /// Image embeddings (EMB1).
        #[arg(long)]
        images: Option<PathBuf>,
        /// Prompt file naming the class of each text-embedding row.
        #[arg(long)]
        prompts: Option<PathBuf>,
        /// Text embeddings (EMB1), rows parallel to the prompt file.
        #[arg(long)]
        text_embeddings: Option<PathBuf>,
        /// Labels: `<image_id>\t<class>` per line.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Support-image embeddings (EMB1) for few-shot extension.
        #[arg(long)]
        support: Option<PathBuf>,
        #[arg(long)]
        support_labels: Option<PathBuf>,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rank class-wise accuracy improvement between two reports.
    Compare {
        #[arg(long)]
        a: Option<PathBuf>,
        #[arg(long)]
        b: Option<PathBuf>,
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render accuracy tables (text + JSON twin).
    Report {
        #[arg(long, num_args = 1..)]
        reports: Option<Vec<PathBuf>>,
        /// Column labels, parallel to --reports (default: file stems).
        #[arg(long, num_args = 1..)]
        labels: Option<Vec<String>>,
        /// table3 | table6
        #[arg(long)]
        layout: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let stage = stage_name(&cli.command);
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            let record = serde_json::json!({
                "stage": stage,
                "instance": instance_of(&err),
                "cause": format!("{err:#}"),
            });
            eprintln!("{record}");
            std::process::exit(1);
        }
    }
}

fn stage_name(command: &Command) -> &'static str {
    match command {
        Command::Ingest { .. } => "ingest",
        Command::Cluster { .. } => "cluster",
        Command::Augment { .. } => "augment",
        Command::Perturb { .. } => "perturb",
        Command::Flybird { .. } => "flybird",
        Command::Prompts { .. } => "prompts",
        Command::Eval { .. } => "eval",
        Command::Compare { .. } => "compare",
        Command::Report { .. } => "report",
    }
}

/// Best-effort instance extraction for the machine-readable error record.
fn instance_of(err: &anyhow::Error) -> serde_json::Value {
    for cause in err.chain() {
        let text = cause.to_string();
        if let Some(rest) = text.strip_prefix("instance ") {
            if let Some(end) = rest.find(" has no") {
                return serde_json::Value::String(rest[..end].to_string());
            }
        }
    }
    serde_json::Value::Null
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;

    let jobs = cli
        .jobs
        .or_else(|| {
            std::env::var("HABITAT_FORGE_JOBS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .or(cfg.jobs);
    if let Some(n) = jobs {
        if n > 0 {
            // A pool may already exist when this runs in-process twice.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }

    match cli.command {
        Command::Ingest {
            manifest,
            habitat,
            out,
        } => cmd_ingest(&cfg, manifest, habitat, out),
        Command::Cluster {
            habitat,
            k_min,
            k_max,
            seed,
            out,
        } => cmd_cluster(&cfg, habitat, k_min, k_max, seed, out),
        Command::Augment {
            manifest,
            strategy,
            groups,
            seed,
            out,
            root,
            copies,
            canvas,
            inpaint_iters,
            plan_in,
            plan_only,
        } => cmd_augment(
            &cfg,
            manifest,
            strategy,
            groups,
            seed,
            out,
            root,
            copies,
            canvas,
            inpaint_iters,
            plan_in,
            plan_only,
        ),
        Command::Perturb {
            manifest,
            kinds,
            seed,
            box_frac,
            boxes,
            inpaint_iters,
            out,
            root,
            bbox_as_mask,
            skip_missing,
        } => cmd_perturb(
            &cfg,
            manifest,
            kinds,
            seed,
            box_frac,
            boxes,
            inpaint_iters,
            out,
            root,
            bbox_as_mask,
            skip_missing,
        ),
        Command::Flybird {
            manifest,
            rule,
            out,
            root,
        } => cmd_flybird(&cfg, manifest, rule, out, root),
        Command::Prompts {
            manifest,
            visual,
            visual_kind,
            habitat,
            direction,
            policy,
            baseline,
            out,
        } => cmd_prompts(
            &cfg,
            manifest,
            visual,
            visual_kind,
            habitat,
            direction,
            policy,
            baseline,
            out,
        ),
        Command::Eval {
            images,
            prompts,
            text_embeddings,
            labels,
            report,
            support,
            support_labels,
            shots,
            seed,
        } => cmd_eval(
            &cfg,
            images,
            prompts,
            text_embeddings,
            labels,
            report,
            support,
            support_labels,
            shots,
            seed,
        ),
        Command::Compare {
            a,
            b,
            top,
            groups,
            out,
        } => cmd_compare(&cfg, a, b, top, groups, out),
        Command::Report {
            reports,
            labels,
            layout,
            out,
        } => cmd_report(&cfg, reports, labels, layout, out),
    }
}

/// Stage seed: explicit per-stage seed wins; otherwise derived from the run
/// seed by stage name, so adding a stage never perturbs another's draws.
fn stage_seed(
    explicit: Option<u64>,
    cfg_stage: Option<u64>,
    run_seed: Option<u64>,
    stage: &str,
) -> anyhow::Result<u64> {
    if let Some(s) = explicit.or(cfg_stage) {
        return Ok(s);
    }
    match run_seed {
        Some(s) => Ok(derive_seed(s, &[stage])),
        None => bail!("missing seed: give --seed or set `seed` in the config"),
    }
}

fn default_root(manifest_path: &Path, root: Option<PathBuf>) -> PathBuf {
    root.unwrap_or_else(|| {
        manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    })
}

fn cmd_ingest(
    cfg: &FileConfig,
    manifest: Option<PathBuf>,
    habitat: Option<PathBuf>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let manifest_path = require(manifest, cfg.ingest.manifest.clone(), "ingest.manifest")?;
    let habitat_path = habitat.or(cfg.ingest.habitat.clone());
    let out_path = require(out, cfg.ingest.out.clone(), "ingest.out")?;

    let manifest = DatasetManifest::load(&manifest_path)
        .with_context(|| format!("loading manifest {}", manifest_path.display()))?;

    let mut settings = ResolvedSettings::new("ingest");
    settings.put_path("manifest", &manifest_path);
    settings.put_opt_path("habitat", &habitat_path);
    settings.put_path("out", &out_path);

    if let Some(habitat_path) = &habitat_path {
        let habitat = DescriptorSet::load(habitat_path, DescriptorKind::Habitat)?;
        let uncovered = habitat.validate_against(&manifest)?;
        if !uncovered.is_empty() {
            eprintln!(
                "warning: {} class(es) lack habitat text: {}",
                uncovered.len(),
                uncovered.join(", ")
            );
        }
    }

    manifest.save(&out_path)?;
    settings.write_meta(&out_path)?;
    println!(
        "ingest: {} classes, {} instances -> {}",
        manifest.class_count(),
        manifest.instances.len(),
        out_path.display()
    );
    Ok(())
}

fn cmd_cluster(
    cfg: &FileConfig,
    habitat: Option<PathBuf>,
    k_min: Option<usize>,
    k_max: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let habitat_path = require(habitat, cfg.cluster.habitat.clone(), "cluster.habitat")?;
    let out_path = require(out, cfg.cluster.out.clone(), "cluster.out")?;
    let seed = stage_seed(seed, cfg.cluster.seed, cfg.seed, "cluster")?;

    let habitat = DescriptorSet::load(&habitat_path, DescriptorKind::Habitat)?;
    let zero_rows = habitat_forge_core::textcluster::all_stop_word_classes(&habitat);
    if !zero_rows.is_empty() {
        eprintln!(
            "warning: {} class(es) vectorize to zero (all stop words): {}",
            zero_rows.len(),
            zero_rows.join(", ")
        );
    }
    let n = habitat.entries.len();
    let k_min = pick(k_min, cfg.cluster.k_min, 2);
    let k_max = pick(k_max, cfg.cluster.k_max, n.saturating_sub(1).clamp(2, 250));

    let groups = build_habitat_groups::<f64>(&habitat, k_min, k_max, seed)?;
    groups.save(&out_path)?;

    let mut settings = ResolvedSettings::new("cluster");
    settings.put_path("habitat", &habitat_path);
    settings.put("k-min", k_min);
    settings.put("k-max", k_max);
    settings.put("seed", seed);
    settings.put_path("out", &out_path);
    settings.write_meta(&out_path)?;

    println!(
        "cluster: {n} classes -> {} groups (chosen k = {}, silhouette = {})",
        groups.group_count(),
        groups.chosen_k,
        groups.silhouette_by_k[&groups.chosen_k]
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_augment(
    cfg: &FileConfig,
    manifest: Option<PathBuf>,
    strategy: Option<String>,
    groups: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    root: Option<PathBuf>,
    copies: Option<usize>,
    canvas: Option<u32>,
    inpaint_iters: Option<usize>,
    plan_in: Option<PathBuf>,
    plan_only: bool,
) -> anyhow::Result<()> {
    let manifest_path = require(manifest, cfg.augment.manifest.clone(), "augment.manifest")?;
    let strategy_name = require(strategy, cfg.augment.strategy.clone(), "augment.strategy")?;
    let strategy = Strategy::parse(&strategy_name)
        .ok_or_else(|| anyhow::anyhow!("unknown strategy {strategy_name:?}"))?;
    let out_dir = require(out, cfg.augment.out.clone(), "augment.out")?;
    let groups_path = groups.or(cfg.augment.groups.clone());
    let copies = pick(copies, cfg.augment.copies, 1);
    let canvas = pick(canvas, cfg.augment.canvas, 256);
    let inpaint_iterations = pick(inpaint_iters, cfg.augment.inpaint_iters, 8);
    let seed = stage_seed(seed, cfg.augment.seed, cfg.seed, "augment")?;

    let manifest = DatasetManifest::load(&manifest_path)?;
    let root = default_root(&manifest_path, root.or(cfg.augment.root.clone()));
    let groups = match &groups_path {
        Some(p) => Some(HabitatGroups::load(p)?),
        None => None,
    };

    let plan = match &plan_in {
        Some(p) => AugmentationPlan::load(p)?,
        None => augment::plan(&manifest, strategy, groups.as_ref(), seed, copies)?,
    };
    augment::validate_plan(&plan, &manifest, groups.as_ref())?;

    let mut settings = ResolvedSettings::new("augment");
    settings.put_path("manifest", &manifest_path);
    settings.put("strategy", strategy);
    settings.put_opt_path("groups", &groups_path);
    settings.put("seed", seed);
    settings.put("copies", copies);
    settings.put("canvas", canvas);
    settings.put("inpaint-iters", inpaint_iterations);
    settings.put_path("out", &out_dir);

    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    plan.save(&out_dir.join("plan.txt"))?;

    if plan_only {
        settings.write_meta(&out_dir)?;
        println!(
            "augment: planned {} pairings (plan only)",
            plan.pairings.len()
        );
        return Ok(());
    }

    let options = ExecuteOptions {
        canvas: (canvas, canvas),
        inpaint_iterations,
    };
    let blended = augment::execute(&plan, &manifest, &root, &out_dir, &options)?;
    settings.write_meta(&out_dir)?;
    println!(
        "augment: {} pairings -> {} ({} instances blended)",
        plan.pairings.len(),
        out_dir.display(),
        blended.instances.len()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_perturb(
    cfg: &FileConfig,
    manifest: Option<PathBuf>,
    kinds: Option<Vec<String>>,
    seed: Option<u64>,
    box_frac: Option<f64>,
    boxes: Option<usize>,
    inpaint_iters: Option<usize>,
    out: Option<PathBuf>,
    root: Option<PathBuf>,
    bbox_as_mask: bool,
    skip_missing: bool,
) -> anyhow::Result<()> {
    let manifest_path = require(manifest, cfg.perturb.manifest.clone(), "perturb.manifest")?;
    let out_dir = require(out, cfg.perturb.out.clone(), "perturb.out")?;
    let seed = stage_seed(seed, cfg.perturb.seed, cfg.seed, "perturb")?;
    let kind_names = kinds.or(cfg.perturb.kinds.clone()).unwrap_or_else(|| {
        PerturbationKind::ALL
            .iter()
            .map(|k| k.to_string())
            .collect()
    });
    let mut kinds = Vec::new();
    for name in &kind_names {
        kinds.push(
            PerturbationKind::parse(name)
                .ok_or_else(|| anyhow::anyhow!("unknown perturbation kind {name:?}"))?,
        );
    }

    let options = PerturbOptions {
        seed,
        box_count: pick(boxes, cfg.perturb.boxes, 8),
        box_frac: pick(box_frac, cfg.perturb.box_frac, 0.15),
        bbox_as_mask: bbox_as_mask || cfg.perturb.bbox_as_mask.unwrap_or(false),
        skip_missing: skip_missing || cfg.perturb.skip_missing.unwrap_or(false),
    };
    let inpaint_iterations = pick(inpaint_iters, cfg.perturb.inpaint_iters, 8);

    let manifest = DatasetManifest::load(&manifest_path)?;
    let root = default_root(&manifest_path, root.or(cfg.perturb.root.clone()));
    let inpainter = DiffusionInpainter {
        iterations: inpaint_iterations,
    };

    std::fs::create_dir_all(&out_dir)?;
    let (manifests, report) =
        perturb::build_suite(&manifest, &root, &kinds, &out_dir, &options, &inpainter)?;
    std::fs::write(out_dir.join("report.txt"), report.serialize())?;

    let mut settings = ResolvedSettings::new("perturb");
    settings.put_path("manifest", &manifest_path);
    settings.put("kinds", kind_names.join(","));
    settings.put("seed", seed);
    settings.put("box-count", options.box_count);
    settings.put("box-frac", options.box_frac);
    settings.put("inpaint-iters", inpaint_iterations);
    settings.put("bbox-as-mask", options.bbox_as_mask);
    settings.put("skip-missing", options.skip_missing);
    settings.put_path("out", &out_dir);
    settings.write_meta(&out_dir)?;

    for (kind, m) in &manifests {
        println!("perturb: {kind}: {} instances", m.instances.len());
    }
    if !report.skipped.is_empty() {
        println!(
            "perturb: skipped {} instance/kind pairs",
            report.skipped.len()
        );
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    sky_ids: Vec<u16>,
    ground_ids: Vec<u16>,
    sky_min_frac: Option<f64>,
    ground_max_frac: Option<f64>,
}

fn cmd_flybird(
    cfg: &FileConfig,
    manifest: Option<PathBuf>,
    rule: Option<PathBuf>,
    out: Option<PathBuf>,
    root: Option<PathBuf>,
) -> anyhow::Result<()> {
    let manifest_path = require(manifest, cfg.flybird.manifest.clone(), "flybird.manifest")?;
    let rule_path = require(rule, cfg.flybird.rule.clone(), "flybird.rule")?;
    let out_dir = require(out, cfg.flybird.out.clone(), "flybird.out")?;

    let rule_text = std::fs::read_to_string(&rule_path)
        .with_context(|| format!("reading rule {}", rule_path.display()))?;
    let rule_file: RuleFile = toml::from_str(&rule_text)
        .with_context(|| format!("parsing rule {}", rule_path.display()))?;
    let rule = FlyBirdRule::new(
        rule_file.sky_ids.iter().copied().collect(),
        rule_file.ground_ids.iter().copied().collect(),
    )?
    .with_thresholds(
        rule_file.sky_min_frac.unwrap_or(f64::EPSILON),
        rule_file.ground_max_frac.unwrap_or(1.0),
    );

    let manifest = DatasetManifest::load(&manifest_path)?;
    let root = default_root(&manifest_path, root.or(cfg.flybird.root.clone()));
    let (fly, nonfly, stats) = flybird::partition(&manifest, &root, &rule)?;

    std::fs::create_dir_all(&out_dir)?;
    fly.save(&out_dir.join("flybird.manifest"))?;
    nonfly.save(&out_dir.join("nonflybird.manifest"))?;
    std::fs::write(
        out_dir.join("stats.txt"),
        format!(
            "#flybird-stats\ntotal {}\nfly {}\nnonfly {}\nfly-fraction {}\n",
            stats.total,
            stats.fly,
            stats.nonfly,
            stats.fly_fraction()
        ),
    )?;

    let mut settings = ResolvedSettings::new("flybird");
    settings.put_path("manifest", &manifest_path);
    settings.put_path("rule", &rule_path);
    settings.put("sky-min-frac", rule.sky_min_frac);
    settings.put("ground-max-frac", rule.ground_max_frac);
    settings.put_path("out", &out_dir);
    settings.write_meta(&out_dir)?;

    println!(
        "flybird: {} fly / {} nonfly (fly fraction {:.4})",
        stats.fly,
        stats.nonfly,
        stats.fly_fraction()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_prompts(
    cfg: &FileConfig,
    manifest: Option<PathBuf>,
    visual: Option<PathBuf>,
    visual_kind: Option<String>,
    habitat: Option<PathBuf>,
    direction: Option<String>,
    policy: Option<String>,
    baseline: bool,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let manifest_path = require(manifest, cfg.prompts.manifest.clone(), "prompts.manifest")?;
    let out_path = require(out, cfg.prompts.out.clone(), "prompts.out")?;
    let visual_path = visual.or(cfg.prompts.visual.clone());
    let habitat_path = habitat.or(cfg.prompts.habitat.clone());
    let direction_name = pick(direction, cfg.prompts.direction.clone(), "none".into());
    let policy_name = pick(policy, cfg.prompts.policy.clone(), "error".into());

    let manifest = DatasetManifest::load(&manifest_path)?;
    let direction = match direction_name.as_str() {
        "none" => None,
        "common-to-scientific" => Some(NameDirection::CommonToScientific),
        "scientific-to-common" => Some(NameDirection::ScientificToCommon),
        other => bail!("unknown direction {other:?}"),
    };
    let policy = match policy_name.as_str() {
        "error" => MissingHabitatPolicy::Error,
        "visual-only" => MissingHabitatPolicy::VisualOnly,
        other => bail!("unknown policy {other:?}"),
    };

    // The class list follows the requested naming direction.
    let classes: Vec<String> = match direction {
        None | Some(NameDirection::ScientificToCommon) => manifest
            .classes
            .iter()
            .map(|c| c.common_name.clone())
            .collect(),
        Some(NameDirection::CommonToScientific) => manifest
            .classes
            .iter()
            .map(|c| {
                c.scientific_name.clone().ok_or_else(|| {
                    anyhow::anyhow!("class {:?} has no scientific name", c.common_name)
                })
            })
            .collect::<Result<_, _>>()?,
    };

    let records = match (&visual_path, baseline) {
        (None, _) | (_, true) => {
            if visual_path.is_none() && habitat_path.is_some() && !baseline {
                bail!("--habitat needs --visual; habitat prompts extend a visual ensemble");
            }
            baseline_records(&classes)?
        }
        (Some(visual_path), false) => {
            let visual_kind_name = pick(visual_kind, cfg.prompts.visual_kind.clone(), "mv".into());
            let kind = DescriptorKind::parse(&visual_kind_name)
                .ok_or_else(|| anyhow::anyhow!("unknown visual kind {visual_kind_name:?}"))?;
            let mut visual_set = DescriptorSet::load(visual_path, kind)?;
            let mut habitat_set = match &habitat_path {
                Some(p) => Some(DescriptorSet::load(p, DescriptorKind::Habitat)?),
                None => None,
            };
            if let Some(direction) = direction {
                visual_set = swap_descriptor_names(&visual_set, &manifest, direction)?;
                if let Some(h) = habitat_set.take() {
                    habitat_set = Some(swap_descriptor_names(&h, &manifest, direction)?);
                }
            }
            let ensembles = build_ensembles(&classes, &visual_set, habitat_set.as_ref(), policy)?;
            ensemble_records(&ensembles)
        }
    };

    std::fs::write(&out_path, write_prompt_file(&records))?;

    let mut settings = ResolvedSettings::new("prompts");
    settings.put_path("manifest", &manifest_path);
    settings.put_opt_path("visual", &visual_path);
    settings.put_opt_path("habitat", &habitat_path);
    settings.put("direction", &direction_name);
    settings.put("policy", &policy_name);
    settings.put("baseline", baseline);
    settings.put_path("out", &out_path);
    settings.write_meta(&out_path)?;

    println!(
        "prompts: {} records -> {}",
        records.len(),
        out_path.display()
    );
    Ok(())
}

fn read_labels(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading labels {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, class) = line
            .split_once('\t')
            .ok_or_else(|| anyhow::anyhow!("labels line {} needs `<id>\\t<class>`", idx + 1))?;
        out.insert(id.to_string(), class.to_string());
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    cfg: &FileConfig,
    images: Option<PathBuf>,
    prompts: Option<PathBuf>,
    text_embeddings: Option<PathBuf>,
    labels: Option<PathBuf>,
    report: Option<PathBuf>,
    support: Option<PathBuf>,
    support_labels: Option<PathBuf>,
    shots: Option<usize>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let images_path = require(images, cfg.eval.images.clone(), "eval.images")?;
    let prompts_path = require(prompts, cfg.eval.prompts.clone(), "eval.prompts")?;
    let text_path = require(
        text_embeddings,
        cfg.eval.text_embeddings.clone(),
        "eval.text_embeddings",
    )?;
    let labels_path = require(labels, cfg.eval.labels.clone(), "eval.labels")?;
    let report_path = require(report, cfg.eval.report.clone(), "eval.report")?;
    let support_path = support.or(cfg.eval.support.clone());
    let support_labels_path = support_labels.or(cfg.eval.support_labels.clone());
    let shots = pick(shots, cfg.eval.shots, 0);

    let prompt_records = read_prompt_file(&std::fs::read_to_string(&prompts_path)?)?;
    let text_emb: EmbeddingMatrix<f64> = EmbeddingMatrix::read(&text_path)?;
    if prompt_records.len() != text_emb.rows() {
        bail!(
            "prompt file has {} records but text embeddings have {} rows",
            prompt_records.len(),
            text_emb.rows()
        );
    }
    let row_classes: Vec<String> = prompt_records.iter().map(|r| r.class.clone()).collect();
    let mut ensemble = ClassifierEnsemble::from_text_embeddings(&text_emb, &row_classes)?;

    let mut settings = ResolvedSettings::new("eval");
    settings.put_path("images", &images_path);
    settings.put_path("prompts", &prompts_path);
    settings.put_path("text-embeddings", &text_path);
    settings.put_path("labels", &labels_path);
    settings.put("shots", shots);

    if shots > 0 {
        let support_path =
            support_path.ok_or_else(|| anyhow::anyhow!("--shots needs --support embeddings"))?;
        let support_labels_path =
            support_labels_path.ok_or_else(|| anyhow::anyhow!("--shots needs --support-labels"))?;
        let seed = stage_seed(seed, cfg.eval.seed, cfg.seed, "eval")?;
        let support_emb: EmbeddingMatrix<f64> = EmbeddingMatrix::read(&support_path)?;
        let support_lab = read_labels(&support_labels_path)?;
        ensemble = few_shot_extend(&ensemble, &support_emb, &support_lab, shots, seed)?;
        settings.put_path("support", &support_path);
        settings.put_path("support-labels", &support_labels_path);
        settings.put("seed", seed);
    }

    let image_emb: EmbeddingMatrix<f64> = EmbeddingMatrix::read(&images_path)?;
    let image_labels = read_labels(&labels_path)?;
    let config_hash = settings.config_hash();
    let report = evaluate(&image_emb, &image_labels, &ensemble, &config_hash)?;
    report.save(&report_path)?;
    settings.put_path("report", &report_path);
    settings.write_meta(&report_path)?;

    println!(
        "eval: top-1 {:.4} over {} images, {} classes -> {}",
        report.top1(),
        report.n_images,
        report.per_class.len(),
        report_path.display()
    );
    Ok(())
}

fn cmd_compare(
    cfg: &FileConfig,
    a: Option<PathBuf>,
    b: Option<PathBuf>,
    top: Option<usize>,
    groups: Option<PathBuf>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let a_path = require(a, cfg.compare.a.clone(), "compare.a")?;
    let b_path = require(b, cfg.compare.b.clone(), "compare.b")?;
    let out_path = require(out, cfg.compare.out.clone(), "compare.out")?;
    let top = pick(top, cfg.compare.top, 20);
    let groups_path = groups.or(cfg.compare.groups.clone());

    let a = EvalReport::load(&a_path)?;
    let b = EvalReport::load(&b_path)?;
    let ranking = compare_runs(&a, &b, top)?;

    let mut body = String::from("#compare\n");
    body.push_str(&format!("#top {top}\n"));
    for (rank, (class, delta)) in ranking.iter().enumerate() {
        body.push_str(&format!("{}\t{class}\t{delta}\n", rank + 1));
    }
    if let Some(groups_path) = &groups_path {
        let groups = HabitatGroups::load(groups_path)?;
        let overlap = group_overlap(&ranking, &groups)?;
        body.push_str(&format!("#group-overlap {}\n", overlap.len()));
        for (class, group) in &overlap {
            body.push_str(&format!("{class}\t{group}\n"));
        }
        println!(
            "compare: {} of the top {} classes share a habitat group",
            overlap.len(),
            ranking.len()
        );
    }
    std::fs::write(&out_path, body)?;

    let mut settings = ResolvedSettings::new("compare");
    settings.put_path("a", &a_path);
    settings.put_path("b", &b_path);
    settings.put("top", top);
    settings.put_opt_path("groups", &groups_path);
    settings.put_path("out", &out_path);
    settings.write_meta(&out_path)?;

    println!(
        "compare: top-{} deltas -> {}",
        ranking.len(),
        out_path.display()
    );
    Ok(())
}

fn cmd_report(
    cfg: &FileConfig,
    reports: Option<Vec<PathBuf>>,
    labels: Option<Vec<String>>,
    layout: Option<String>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let report_paths = require(reports, cfg.report.reports.clone(), "report.reports")?;
    let out_path = require(out, cfg.report.out.clone(), "report.out")?;
    let layout_name = pick(layout, cfg.report.layout.clone(), "table3".into());
    let layout = ReportLayout::parse(&layout_name)
        .ok_or_else(|| anyhow::anyhow!("unknown layout {layout_name:?}"))?;
    let labels = labels.or(cfg.report.labels.clone()).unwrap_or_else(|| {
        report_paths
            .iter()
            .map(|p| {
                p.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string())
            })
            .collect()
    });
    if labels.len() != report_paths.len() {
        bail!("{} labels for {} reports", labels.len(), report_paths.len());
    }

    let mut loaded = Vec::new();
    for (label, path) in labels.iter().zip(&report_paths) {
        loaded.push((label.clone(), EvalReport::load(path)?));
    }
    let table = emit_report(&loaded, layout)?;

    std::fs::write(&out_path, table.to_text())?;
    let mut json_path = out_path.as_os_str().to_os_string();
    json_path.push(".json");
    std::fs::write(PathBuf::from(&json_path), table.to_json())?;

    let mut settings = ResolvedSettings::new("report");
    for (i, p) in report_paths.iter().enumerate() {
        settings.put(&format!("report-{i}"), p.display());
    }
    settings.put("layout", &layout_name);
    settings.put_path("out", &out_path);
    settings.write_meta(&out_path)?;

    print!("{}", table.to_text());
    Ok(())
}
