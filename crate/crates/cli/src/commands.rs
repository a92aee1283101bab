//! The six subcommands. Each resolves its configuration (defaults <-
//! config file <- flags), loads inputs, runs the engine, and leaves one
//! run directory behind: artifacts plus exactly one `manifest.json`.

use serde::Serialize;
use std::path::Path;

use graphfill::attribution::{attribute_test_span, parse_grouping, AttributionReport};
use graphfill::dataio::synth::{generate, SynthConfig};
use graphfill::dataio::{make_split, write_panel, Panel, SplitPlan};
use graphfill::graph::{write_edge_list, Graph};
use graphfill::metrics::{interpolate, MetricsReport, CSV_HEADER};
use graphfill::trainer::{
    ablation_csv, ablation_run, standard_variants, train, validation_loss, AblationVariant,
    Checkpoint, TrainReport,
};
use graphfill::{Error, Result};

use crate::args;
use crate::config;
use crate::inputs;
use crate::runs::RunContext;

pub fn dispatch(cli: args::Cli) -> Result<()> {
    match cli.command {
        args::Command::Synth(a) => cmd_synth(a),
        args::Command::BuildGraph(a) => cmd_build_graph(a),
        args::Command::Train(a) => cmd_train(a),
        args::Command::Eval(a) => cmd_eval(a),
        args::Command::Ablate(a) => cmd_ablate(a),
        args::Command::Attribute(a) => cmd_attribute(a),
    }
}

// -------------------------------------------------------------------
// synth
// -------------------------------------------------------------------

fn cmd_synth(a: args::SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_nodes: a.nodes,
        steps: a.steps,
        zero_inflation: a.zero_inflation,
        dispersion: a.dispersion,
        missing_rate: a.missing_rate,
        seed: a.seed,
    };
    let out = generate(&cfg)?;

    let mut run = RunContext::create(&a.out.out, "synth", a.seed, &cfg)?;
    write_panel(&out.panel, &run.dir.join("features.csv"), &run.dir.join("targets.csv"))?;
    write_edge_list(&out.graph, &run.dir.join("edges.csv"))?;
    run.note_artifact("features.csv")?;
    run.note_artifact("targets.csv")?;
    run.note_artifact("edges.csv")?;

    // Latent truth: the pre-inflation negative-binomial mean per cell.
    let mut truth = String::from("node_id,time,mean\n");
    for (i, id) in out.panel.node_ids().iter().enumerate() {
        for (j, tm) in out.panel.time_index().iter().enumerate() {
            truth.push_str(&format!("{id},{tm},{}\n", out.truth.mean.get(i, j)));
        }
    }
    run.write_artifact("truth.csv", truth.as_bytes())?;

    let dir = run.finish()?;
    println!("run dir: {}", dir.display());
    println!(
        "synthetic panel: {} nodes x {} steps, {} observed entries",
        out.panel.n(),
        out.panel.p(),
        out.panel.observed_count()
    );
    Ok(())
}

// -------------------------------------------------------------------
// build-graph
// -------------------------------------------------------------------

fn cmd_build_graph(a: args::BuildGraphArgs) -> Result<()> {
    let file = config::ConfigFile::default();
    let choice = config::resolve_graph(&file.graph, &a.graph);
    let kinds = inputs::parse_adjacency(&choice.adjacency)?;
    if kinds.len() != 1 {
        return Err(Error::Config(
            "build-graph constructs one stack at a time; run it once per dual component".into(),
        ));
    }
    let ids = inputs::standalone_node_ids(kinds[0], a.nodes_file.as_deref(), &choice)?;
    let graph = inputs::build_graph(kinds[0], ids, &choice)?;

    let mut run = RunContext::create(&a.out.out, "build-graph", 0, &choice)?;
    run.record_inputs([
        choice.edges.as_deref(),
        choice.coords.as_deref(),
        choice.infra.as_deref(),
        choice.graph.as_deref(),
        a.nodes_file.as_deref(),
    ])?;
    write_edge_list(&graph, &run.dir.join("graph.csv"))?;
    run.note_artifact("graph.csv")?;
    let dir = run.finish()?;

    let edges = graph.weights().as_slice().iter().filter(|&&w| w > 0.0).count();
    println!("run dir: {}", dir.display());
    println!(
        "{} adjacency: {} nodes, {} nonzero directed weights",
        choice.adjacency,
        graph.n(),
        edges
    );
    Ok(())
}

// -------------------------------------------------------------------
// train
// -------------------------------------------------------------------

/// Everything a training-shaped command resolved from flags + file.
#[derive(Serialize)]
struct TrainManifestConfig<'a> {
    data: &'a config::DataChoice,
    graph: &'a config::GraphChoice,
    train: &'a graphfill::trainer::TrainConfig,
}

/// Shared loading for train/eval/ablate/attribute: panel plus graphs.
fn load_panel_and_graphs(
    data: &config::DataChoice,
    graph: &config::GraphChoice,
) -> Result<(Panel, Vec<Graph>)> {
    let panel = inputs::load_data(data)?;
    let graphs = inputs::build_graphs(&panel, graph)?;
    Ok((panel, graphs))
}

fn record_common_inputs(
    run: &mut RunContext,
    data: &config::DataChoice,
    graph: &config::GraphChoice,
    config_file: Option<&Path>,
) -> Result<()> {
    run.record_inputs([
        Some(data.targets.as_path()),
        data.features.as_deref(),
        graph.edges.as_deref(),
        graph.coords.as_deref(),
        graph.infra.as_deref(),
        graph.graph.as_deref(),
        config_file,
    ])
}

/// Relativize the checkpoint path in a report so run artifacts carry
/// no volatile absolute paths.
fn relativized(report: &TrainReport) -> TrainReport {
    let mut r = report.clone();
    if let Some(name) = r.checkpoint_path.file_name() {
        r.checkpoint_path = name.into();
    }
    r
}

fn write_train_artifacts(run: &mut RunContext, report: &TrainReport) -> Result<()> {
    let report_json = serde_json::to_string_pretty(&relativized(report))
        .map_err(|e| Error::Schema(format!("report not serializable: {e}")))?;
    run.write_artifact("report.json", report_json.as_bytes())?;

    let mut traj = String::from("epoch,train_loss,val_loss,lr\n");
    for e in &report.epochs {
        traj.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.lr));
    }
    run.write_artifact("trajectory.csv", traj.as_bytes())?;
    Ok(())
}

fn cmd_train(a: args::TrainArgs) -> Result<()> {
    let file = config::load(a.config.as_deref())?;
    let data = config::resolve_data(&file.data, &a.data)?;
    let graph = config::resolve_graph(&file.graph, &a.graph);
    let cfg = config::resolve_train(&file.train, &a.train)?;
    let (panel, graphs) = load_panel_and_graphs(&data, &graph)?;
    let split = make_split(&panel, cfg.coverage, cfg.temporal_mode, cfg.seed)?;

    let mut run = RunContext::create(
        &a.out.out,
        "train",
        cfg.seed,
        &TrainManifestConfig { data: &data, graph: &graph, train: &cfg },
    )?;
    record_common_inputs(&mut run, &data, &graph, a.config.as_deref())?;

    let ckpt_path = run.dir.join("checkpoint.json");
    match train(&panel, &graphs, &split, &cfg, &ckpt_path) {
        Ok(report) => {
            run.note_artifact("checkpoint.json")?;
            // Persist the scaling statistics next to the checkpoint for
            // external consumers; the checkpoint embeds them too.
            let ckpt = Checkpoint::load(&ckpt_path)?;
            let scale = serde_json::to_string_pretty(&ckpt.scale)
                .map_err(|e| Error::Schema(format!("scale not serializable: {e}")))?;
            run.write_artifact("scale.json", scale.as_bytes())?;
            write_train_artifacts(&mut run, &report)?;
            let dir = run.finish()?;

            println!("run dir: {}", dir.display());
            match (report.best_epoch, report.best_val_loss) {
                (Some(e), Some(v)) => println!(
                    "trained {} epoch(s); best validation loss {v:.6} at epoch {e}",
                    report.epochs.len()
                ),
                _ => println!("trained {} epoch(s); no validation epochs ran", report.epochs.len()),
            }
            Ok(())
        }
        Err(e @ Error::Diverged { .. }) => {
            // The trainer left the last good checkpoint and a divergence
            // report behind; still close the run with a manifest.
            for name in ["checkpoint.json", "checkpoint.divergence.json"] {
                if run.dir.join(name).exists() {
                    run.note_artifact(name)?;
                }
            }
            run.finish()?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

// -------------------------------------------------------------------
// eval
// -------------------------------------------------------------------

#[derive(Serialize)]
struct EvalManifestConfig<'a> {
    data: &'a config::DataChoice,
    graph: &'a config::GraphChoice,
    eval: &'a graphfill::metrics::EvalConfig,
    checkpoint: &'a Path,
    variant: &'a str,
    coverage: f64,
    split_seed: u64,
}

/// Rebuild the split a checkpoint was trained against, honoring any
/// explicit overrides.
fn split_for_checkpoint(
    panel: &Panel,
    ckpt: &Checkpoint,
    coverage: Option<f64>,
    split_seed: Option<u64>,
) -> Result<(SplitPlan, f64, u64)> {
    let coverage = coverage.unwrap_or(ckpt.train_config.coverage);
    let seed = split_seed.unwrap_or(ckpt.train_config.seed);
    let split = make_split(panel, coverage, ckpt.train_config.temporal_mode, seed)?;
    Ok((split, coverage, seed))
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    metrics: &'a MetricsReport,
    /// Best validation loss recorded in the checkpoint at train time.
    best_val_loss_recorded: Option<f64>,
    /// The same quantity recomputed from the reloaded parameters.
    val_loss_recomputed: f64,
    /// Absolute difference between the two (when recorded).
    val_loss_gap: Option<f64>,
}

fn cmd_eval(a: args::EvalArgs) -> Result<()> {
    let file = config::load(a.config.as_deref())?;
    let data = config::resolve_data(&file.data, &a.data)?;
    let graph = config::resolve_graph(&file.graph, &a.graph);
    let eval_cfg = config::resolve_eval(&file.eval, &a.eval);
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let (panel, graphs) = load_panel_and_graphs(&data, &graph)?;
    let (split, coverage, split_seed) =
        split_for_checkpoint(&panel, &ckpt, a.coverage, a.split_seed)?;

    let bundle = interpolate(&panel, &graphs, &split, &ckpt)?;
    let report =
        MetricsReport::compute(&bundle, &eval_cfg, &a.variant, &graph.adjacency, coverage, split_seed)?;
    let recomputed =
        validation_loss(&panel, &graphs, &split, &ckpt.train_config, &ckpt.scale, &ckpt.to_params()?)?;

    let mut run = RunContext::create(
        &a.out.out,
        "eval",
        split_seed,
        &EvalManifestConfig {
            data: &data,
            graph: &graph,
            eval: &eval_cfg,
            checkpoint: &a.checkpoint,
            variant: &a.variant,
            coverage,
            split_seed,
        },
    )?;
    record_common_inputs(&mut run, &data, &graph, a.config.as_deref())?;
    run.record_input(&a.checkpoint)?;

    let out = EvalOutput {
        metrics: &report,
        best_val_loss_recorded: ckpt.best_val_loss,
        val_loss_recomputed: recomputed,
        val_loss_gap: ckpt.best_val_loss.map(|v| (v - recomputed).abs()),
    };
    let json = serde_json::to_string_pretty(&out)
        .map_err(|e| Error::Schema(format!("eval output not serializable: {e}")))?;
    run.write_artifact("eval.json", json.as_bytes())?;
    run.write_artifact("metrics.csv", format!("{CSV_HEADER}\n{}\n", report.csv_row()).as_bytes())?;
    let dir = run.finish()?;

    println!("run dir: {}", dir.display());
    println!(
        "mae {:.6}  rmse {:.6}  kl {:.6}  zero {}  nll {}  ({} entries)",
        report.mae,
        report.rmse,
        report.kl,
        report.zero.map_or("-".to_string(), |v| format!("{v:.4}")),
        report.nll.map_or("-".to_string(), |v| format!("{v:.4}")),
        report.n_entries
    );
    if let Some(gap) = out.val_loss_gap {
        println!(
            "validation loss: recorded {:.10}, recomputed {:.10}, gap {gap:.3e}",
            ckpt.best_val_loss.unwrap_or(f64::NAN),
            recomputed
        );
    }
    Ok(())
}

// -------------------------------------------------------------------
// ablate
// -------------------------------------------------------------------

#[derive(Serialize)]
struct AblateManifestConfig<'a> {
    data: &'a config::DataChoice,
    graph: &'a config::GraphChoice,
    train: &'a graphfill::trainer::TrainConfig,
    eval: &'a graphfill::metrics::EvalConfig,
    variants: &'a [AblationVariant],
    seeds: &'a [u64],
}

fn load_variants(path: Option<&Path>) -> Result<Vec<AblationVariant>> {
    let Some(path) = path else {
        return Ok(standard_variants());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        location: path.display().to_string(),
        reason: format!("variant file must be a JSON array of variants: {e}"),
    })
}

fn cmd_ablate(a: args::AblateArgs) -> Result<()> {
    let file = config::load(a.config.as_deref())?;
    let data = config::resolve_data(&file.data, &a.data)?;
    let graph = config::resolve_graph(&file.graph, &a.graph);
    let base = config::resolve_train(&file.train, &a.train)?;
    let eval_cfg = config::resolve_eval(&file.eval, &a.eval);
    let (panel, graphs) = load_panel_and_graphs(&data, &graph)?;

    let variants_path = a.variants.clone().or_else(|| file.ablate.variants.clone());
    let variants = load_variants(variants_path.as_deref())?;
    let seeds: Vec<u64> = a
        .seeds
        .clone()
        .or_else(|| file.ablate.seeds.clone())
        .unwrap_or_else(|| (0..3).map(|i| base.seed + i).collect());
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }

    let mut run = RunContext::create(
        &a.out.out,
        "ablate",
        base.seed,
        &AblateManifestConfig {
            data: &data,
            graph: &graph,
            train: &base,
            eval: &eval_cfg,
            variants: &variants,
            seeds: &seeds,
        },
    )?;
    record_common_inputs(&mut run, &data, &graph, a.config.as_deref())?;
    if let Some(p) = &variants_path {
        run.record_input(p)?;
    }

    let rows = ablation_run(
        &panel,
        &graphs,
        &base,
        &variants,
        &seeds,
        &eval_cfg,
        &graph.adjacency,
        &run.dir,
    );
    run.write_artifact("grid.csv", ablation_csv(&rows).as_bytes())?;
    // The per-variant checkpoints land in the run dir as well.
    let mut names: Vec<String> = std::fs::read_dir(&run.dir)
        .map_err(|e| Error::io(run.dir.display().to_string(), e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.starts_with("ckpt-") && n.ends_with(".json"))
        .collect();
    names.sort();
    for name in names {
        run.note_artifact(&name)?;
    }
    let dir = run.finish()?;

    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    println!("run dir: {}", dir.display());
    println!(
        "{} variant(s) x {} seed(s): {} rows, {} with errors",
        variants.len(),
        seeds.len(),
        rows.len(),
        failures
    );
    Ok(())
}

// -------------------------------------------------------------------
// attribute
// -------------------------------------------------------------------

#[derive(Serialize)]
struct AttributeManifestConfig<'a> {
    data: &'a config::DataChoice,
    graph: &'a config::GraphChoice,
    checkpoint: &'a Path,
    steps: usize,
    groups: Option<&'a Path>,
}

fn cmd_attribute(a: args::AttributeArgs) -> Result<()> {
    let file = config::load(a.config.as_deref())?;
    let data = config::resolve_data(&file.data, &a.data)?;
    let graph = config::resolve_graph(&file.graph, &a.graph);
    let steps = a.steps.or(file.attribute.steps).unwrap_or(50);
    let groups_path = a.groups.clone().or_else(|| file.attribute.groups.clone());
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let (panel, graphs) = load_panel_and_graphs(&data, &graph)?;
    let (split, _, _) = split_for_checkpoint(&panel, &ckpt, None, None)?;

    let mapping = match &groups_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::io(p.display().to_string(), e))?;
            parse_grouping(&text)?
        }
        None => Vec::new(),
    };

    let (channels, attributions) = attribute_test_span(&panel, &graphs, &split, &ckpt, steps)?;
    let report = AttributionReport::build(channels, &attributions, &mapping, steps)?;

    let mut run = RunContext::create(
        &a.out.out,
        "attribute",
        ckpt.train_config.seed,
        &AttributeManifestConfig {
            data: &data,
            graph: &graph,
            checkpoint: &a.checkpoint,
            steps,
            groups: groups_path.as_deref(),
        },
    )?;
    record_common_inputs(&mut run, &data, &graph, a.config.as_deref())?;
    run.record_input(&a.checkpoint)?;
    if let Some(p) = &groups_path {
        run.record_input(p)?;
    }

    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Schema(format!("attribution not serializable: {e}")))?;
    run.write_artifact("attribution.json", json.as_bytes())?;
    run.write_artifact("attribution.csv", report.csv().as_bytes())?;
    let dir = run.finish()?;

    println!("run dir: {}", dir.display());
    let mut ranked: Vec<_> = report.channels.iter().collect();
    ranked.sort_by(|x, y| y.score.total_cmp(&x.score));
    for c in ranked.iter().take(3) {
        println!("  {:<12} {:.6}", c.channel, c.score);
    }
    let worst_gap = report
        .completeness
        .iter()
        .map(|c| c.gap)
        .fold(0.0f64, f64::max);
    println!("{} window(s), worst completeness gap {worst_gap:.3e}", report.completeness.len());
    Ok(())
}
