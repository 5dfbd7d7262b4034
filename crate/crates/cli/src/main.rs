mod args;
mod report;

use std::fs::File;
use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use csmart::gee::{fit, FitConfig};
use csmart::harness::{emit_table, render_text, run_experiment, RunOptions, Variant};
use csmart::inference::{effect_contrasts, pairwise_contrast, report};
use csmart::oracles::run_suite;
use csmart::parallel::Workers;
use csmart::sandwich::{sandwich, Preset};
use csmart::simgen::SimulationDesign;
use csmart::trial_data::{load_csv, validate_design};
use csmart::{EmbeddedAI, Sign};

use args::{AnalyzeArgs, Cli, Command, SimulateArgs, ValidateArgs};
use report::Block;

/// Process exit status with its message.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Validation(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Validation(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<csmart::Error> for Failure {
    fn from(e: csmart::Error) -> Self {
        use csmart::Error as E;
        match e {
            e if e.is_numerical() => Failure::Numerical(e.to_string()),
            e @ E::NonPositiveDf { .. } => Failure::Numerical(e.to_string()),
            e @ E::Io(_) => Failure::Usage(e.to_string()),
            e => Failure::Validation(e.to_string()),
        }
    }
}

fn io_failure(what: &std::path::Path, e: impl std::fmt::Display) -> Failure {
    Failure::Usage(format!("{}: {e}", what.display()))
}

/// Primary effect tracked by `simulate`: regimen (+,+) against (−,−).
const TARGET: (EmbeddedAI, EmbeddedAI) = (EmbeddedAI::new(Sign::Plus, Sign::Plus), EmbeddedAI::new(Sign::Minus, Sign::Minus));

fn analyze(a: &AnalyzeArgs) -> Result<(), Failure> {
    let adjustments = a.model.adjustments(&[Preset::Minimal, Preset::Proposed]).map_err(Failure::Usage)?;
    let ds = load_csv(&a.data)?;
    let check = validate_design(&ds);
    if !check.passed() {
        return Err(Failure::Validation(check.to_string()));
    }
    for issue in &check.issues {
        log::warn!("{}", issue.message);
    }
    let config = FitConfig {
        covariance: a.model.covariance(),
        weights: a.model.weight_mode(),
        ..FitConfig::default()
    };
    let fitted = fit(&ds, &config)?;
    for note in &fitted.notes {
        log::warn!("{note}");
    }
    log::info!(
        "fit: {} covariance updates, converged {}, last change {:.3e}",
        fitted.iterations,
        fitted.converged,
        fitted.final_change
    );
    let contrasts = effect_contrasts(&config.design, ds.p);
    let mut blocks = Vec::with_capacity(adjustments.len());
    for adj in adjustments {
        let sigma = sandwich(&fitted, adj.fsa)?;
        let rep = report(&fitted, &sigma, &contrasts, adj.fsa, a.model.level)?;
        blocks.push(Block {
            label: adj.label,
            report: rep,
        });
    }
    let text = report::render_text(&blocks);
    print!("{text}");
    if let Some(out) = &a.out {
        let file = File::create(out).map_err(|e| io_failure(out, e))?;
        report::write_csv(&blocks, file).map_err(|e| io_failure(out, e))?;
        let txt = out.with_extension("txt");
        std::fs::write(&txt, &text).map_err(|e| io_failure(&txt, e))?;
    }
    Ok(())
}

fn simulate(s: &SimulateArgs) -> Result<(), Failure> {
    let adjustments = s.model.adjustments(&Preset::ALL).map_err(Failure::Usage)?;
    if s.workers == Some(0) {
        return Err(Failure::Usage("--workers must be positive".into()));
    }
    let text = std::fs::read_to_string(&s.design).map_err(|e| io_failure(&s.design, e))?;
    let mut design = SimulationDesign::from_json(&text)?;
    design.base_seed = s.seed;
    if let Some(r) = s.replications {
        design.replications = r;
    }
    let (weights, covariance) = (s.model.weight_mode(), s.model.covariance());
    let variants: Vec<Variant> = adjustments
        .into_iter()
        .map(|a| Variant {
            label: a.label,
            fsa: a.fsa,
            weights,
            covariance,
        })
        .collect();
    let contrast = pairwise_contrast(TARGET.0, TARGET.1, 1);
    let options = RunOptions {
        level: s.model.level,
        workers: Workers(s.workers),
    };
    let result = run_experiment(&design, &variants, &contrast, &options)?;
    let written = emit_table(&result, &s.out)?;
    print!("{}", render_text(&result));
    for p in &written {
        log::info!("wrote {}", p.display());
    }
    if result.any_flagged() {
        return Err(Failure::Numerical("one or more design points were flagged for excess failures".into()));
    }
    Ok(())
}

fn validate(v: &ValidateArgs) -> Result<(), Failure> {
    let reports = run_suite()?;
    for r in &reports {
        println!("{r}");
    }
    if let Some(out) = &v.out {
        let mut file = File::create(out).map_err(|e| io_failure(out, e))?;
        for r in &reports {
            let line = serde_json::to_string(r).map_err(|e| io_failure(out, e))?;
            writeln!(file, "{line}").map_err(|e| io_failure(out, e))?;
        }
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    println!("{} checks, {} passed, {} failed", reports.len(), reports.len() - failed, failed);
    if failed > 0 {
        return Err(Failure::Validation(format!("{failed} oracle checks failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(s) => simulate(s),
        Command::Validate(v) => validate(v),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message().trim_end());
            ExitCode::from(f.code())
        }
    }
}
