use std::path::PathBuf;
use std::process::ExitCode;

use cfaa::config::RunConfig;
use cfaa::pipeline;

const USAGE: &str = "usage: cfaa <synth-data|featurize|train|evaluate|align-diagnostics> [--config FILE] [--KEY VALUE]...";

fn parse(args: &[String]) -> Result<(String, RunConfig), String> {
    let (command, rest) = args.split_first().ok_or_else(|| USAGE.to_string())?;
    let mut config_path: Option<PathBuf> = None;
    let mut overrides = Vec::new();
    let mut it = rest.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| format!("expected --KEY, got {flag:?}\n{USAGE}"))?;
        let value = it.next().ok_or_else(|| format!("missing value for --{key}"))?;
        if key == "config" {
            config_path = Some(PathBuf::from(value));
        } else {
            overrides.push((key.replace('-', "_"), value.clone()));
        }
    }
    let mut cfg = match &config_path {
        Some(p) => RunConfig::from_file(p).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    for (k, v) in &overrides {
        cfg.set(k, v).map_err(|e| e.to_string())?;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok((command.clone(), cfg))
}

fn run(command: &str, cfg: &RunConfig) -> Result<Vec<PathBuf>, String> {
    let out = match command {
        "synth-data" => pipeline::run_synth_data(cfg),
        "featurize" => pipeline::run_featurize(cfg),
        "train" => pipeline::run_train(cfg),
        "evaluate" => pipeline::run_evaluate(cfg),
        "align-diagnostics" => pipeline::run_align_diagnostics(cfg),
        other => return Err(format!("unknown command {other:?}\n{USAGE}")),
    };
    out.map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "-h" || a == "--help") {
        println!("{USAGE}");
        return ExitCode::SUCCESS;
    }
    let result = parse(&args).and_then(|(command, cfg)| run(&command, &cfg));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
