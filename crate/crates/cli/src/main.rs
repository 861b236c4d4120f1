//! `seec` — train, search, and evaluate federated semantic embeddings from
//! scenario config files.
//!
//! Every run is driven by a JSON scenario (see `seec run --help`); partial
//! pipelines reuse the same config so artifacts line up across commands.
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seec_core::embedding::io::load_model;
use seec_core::evaluation::{mean_sim_k, record_id_sets, write_overlap_csv, write_overlap_json};
use seec_core::federation::SiteId;
use seec_core::orchestrator::{
    load_scenario, run_scenario, stage_gen_data, stage_train_central, stage_train_joint,
    stage_train_local, stage_train_mapper, Scenario, ScenarioError,
};
use seec_core::search::{
    local_topk, read_results_jsonl, result_records, write_results_jsonl, SearchQuery,
};

#[derive(Parser)]
#[command(name = "seec", version, about = "Federated semantic embedding toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full scenario: train, search, and report against the pooled
    /// baseline.
    Run(ScenarioArgs),
    /// Train and save only the pooled-data baseline model.
    TrainCentral(ScenarioArgs),
    /// Run federated rounds and save the joint model plus per-round losses.
    TrainJoint(ScenarioArgs),
    /// Train and save each site's independent local model.
    TrainLocal(ScenarioArgs),
    /// Train local models, then a vector-space mapper for every site pair.
    TrainMapper(ScenarioArgs),
    /// Generate a scenario's synthetic datasets as plain data files.
    GenData(ScenarioArgs),
    /// Query one saved model for the nearest neighbors of a stored item.
    Search(SearchArgs),
    /// Compare two result files query-by-query and report overlap.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the scenario's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the scenario's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the scenario's evaluation list length.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct SearchArgs {
    /// Saved model file to query.
    #[arg(long)]
    model: PathBuf,
    /// Id of the stored item whose neighbors to retrieve.
    #[arg(long)]
    query_id: String,
    /// How many neighbors to return.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Also write the results as JSONL records.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Reference results (JSONL).
    #[arg(long)]
    baseline: PathBuf,
    /// Results to score against the reference (JSONL).
    #[arg(long)]
    candidate: PathBuf,
    /// List length to compare at.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Also write report.json and report.csv here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn load_with_overrides(args: &ScenarioArgs) -> Result<Scenario, ScenarioError> {
    let mut scenario = load_scenario(&args.config)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(dir) = &args.out_dir {
        scenario.output_dir = dir.clone();
    }
    if let Some(k) = args.k {
        scenario.evaluation.k = k;
    }
    Ok(scenario)
}

fn cmd_run(args: &ScenarioArgs) -> Result<(), ScenarioError> {
    let scenario = load_with_overrides(args)?;
    let outputs = run_scenario(&scenario)?;
    println!(
        "mean_sim_{} = {:.4} over {} queries",
        outputs.report.k,
        outputs.report.mean_sim_k,
        outputs.report.per_query.len()
    );
    if let Some(control) = &outputs.control_report {
        println!(
            "unmapped control mean_sim_{} = {:.4}",
            control.k, control.mean_sim_k
        );
    }
    for path in &outputs.model_paths {
        println!("model:   {}", path.display());
    }
    for path in &outputs.mapper_paths {
        println!("mapper:  {}", path.display());
    }
    println!("results: {}", outputs.results_central.display());
    if outputs.results_primary != outputs.results_central {
        println!("results: {}", outputs.results_primary.display());
    }
    if let Some(path) = &outputs.results_control {
        println!("results: {}", path.display());
    }
    if let Some(path) = &outputs.losses_csv {
        println!("losses:  {}", path.display());
    }
    println!("report:  {}", outputs.report_json.display());
    println!("report:  {}", outputs.report_csv.display());
    if let Some(path) = &outputs.control_report_json {
        println!("report:  {}", path.display());
    }
    if let Some(path) = &outputs.control_report_csv {
        println!("report:  {}", path.display());
    }
    Ok(())
}

fn cmd_train_central(args: &ScenarioArgs) -> Result<(), ScenarioError> {
    let path = stage_train_central(&load_with_overrides(args)?)?;
    println!("model:   {}", path.display());
    Ok(())
}

fn cmd_train_joint(args: &ScenarioArgs) -> Result<(), ScenarioError> {
    let (model, losses) = stage_train_joint(&load_with_overrides(args)?)?;
    println!("model:   {}", model.display());
    println!("losses:  {}", losses.display());
    Ok(())
}

fn cmd_train_local(args: &ScenarioArgs) -> Result<(), ScenarioError> {
    for path in stage_train_local(&load_with_overrides(args)?)? {
        println!("model:   {}", path.display());
    }
    Ok(())
}

fn cmd_train_mapper(args: &ScenarioArgs) -> Result<(), ScenarioError> {
    for path in stage_train_mapper(&load_with_overrides(args)?)? {
        println!("mapper:  {}", path.display());
    }
    Ok(())
}

fn cmd_gen_data(args: &ScenarioArgs) -> Result<(), ScenarioError> {
    for path in stage_gen_data(&load_with_overrides(args)?)? {
        println!("data:    {}", path.display());
    }
    Ok(())
}

fn cmd_search(args: &SearchArgs) -> Result<(), ScenarioError> {
    let model = load_model(&args.model)?;
    let query = SearchQuery {
        vector: model.vectorize(&args.query_id)?,
        k: args.k,
        exclude: Some(args.query_id.clone()),
    };
    let site = SiteId::new(0, model.space_tag());
    let result = local_topk(&model, &query, &site)?;
    let records = result_records(&args.query_id, &result);
    for record in &records {
        println!("{:>4}  {:+.6}  {}", record.rank, record.score, record.doc_id);
    }
    if let Some(out) = &args.out {
        write_results_jsonl(&records, out)?;
        println!("results: {}", out.display());
    }
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), ScenarioError> {
    let baseline = record_id_sets(&read_results_jsonl(&args.baseline)?, args.k);
    let candidate = record_id_sets(&read_results_jsonl(&args.candidate)?, args.k);
    let report = mean_sim_k(&baseline, &candidate, args.k)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| ScenarioError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        let json = dir.join("report.json");
        let csv = dir.join("report.csv");
        write_overlap_json(&report, &json)?;
        write_overlap_csv(&report, &csv)?;
        println!("report:  {}", json.display());
        println!("report:  {}", csv.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::TrainCentral(args) => cmd_train_central(args),
        Command::TrainJoint(args) => cmd_train_joint(args),
        Command::TrainLocal(args) => cmd_train_local(args),
        Command::TrainMapper(args) => cmd_train_mapper(args),
        Command::GenData(args) => cmd_gen_data(args),
        Command::Search(args) => cmd_search(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
