use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mbo::harness::{emit_report, load_results, parse_report, run_with, save_results, ReportFormat, RunConfig};
use mbo::optimizers::{MethodSpec, METHOD_NAMES};
use mbo::space::DesignSpace;
use mbo::tasks::{build_dataset, load_dataset, resample_histogram, save_dataset, Task, TASK_NAMES};
use mbo::Error;

/// Offline model-based optimization benchmarks.
#[derive(Parser)]
#[command(name = "mbo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in tasks.
    ListTasks,
    /// List the available methods.
    ListMethods,
    /// Run seeded trials of one method on one task.
    Run {
        #[arg(long)]
        task: String,
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 128)]
        k: usize,
        #[arg(long, default_value_t = 8)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "json")]
        format: String,
        /// Method or training override, `key=value`; repeatable.
        #[arg(long = "method-opt")]
        method_opt: Vec<String>,
        /// Use this saved dataset in every trial instead of building one.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score histograms of the dataset and of uniform resamples.
    Histogram {
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 3200)]
        n: usize,
        #[arg(long, default_value_t = 40)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize saved run results.
    Report {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "markdown")]
        format: String,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a task's dataset and save it.
    Dataset {
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Manifest path; rows go to a sibling `.csv`.
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(Error),
    Runtime(Error),
}

fn usage<T>(r: mbo::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Usage)
}

fn runtime<T>(r: mbo::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Runtime)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn describe(space: &DesignSpace) -> String {
    match space {
        DesignSpace::Continuous { bounds } => format!("continuous, {} dims", bounds.len()),
        DesignSpace::Discrete { length, categories } => {
            format!("discrete, length {length}, {categories} categories")
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Runtime(Error::Io { path: path.into(), source: e }))
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::ListTasks => {
            for name in TASK_NAMES {
                let task = runtime(Task::by_name(name))?;
                println!("{name}\t{}", describe(task.space()));
            }
        }
        Command::ListMethods => {
            for name in METHOD_NAMES {
                println!("{name}");
            }
        }
        Command::Run {
            task,
            method,
            k,
            trials,
            seed,
            out,
            format,
            method_opt,
            dataset,
        } => {
            let format: ReportFormat = usage(format.parse())?;
            let (task, data) = match dataset {
                Some(path) => {
                    let (t, d, _) = runtime(load_dataset(&path))?;
                    if t.name() != usage(Task::by_name(&task))?.name() {
                        return Err(Failure::Usage(Error::Parameter(format!(
                            "dataset belongs to task {}, not {task}",
                            t.name()
                        ))));
                    }
                    (t, Some(d))
                }
                None => (usage(Task::by_name(&task))?, None),
            };
            let spec = usage(MethodSpec::new(&method, task.space()).and_then(|s| s.with_options(&method_opt)))?;
            let config = RunConfig {
                task: task.name().to_string(),
                method: spec,
                k,
                trials,
                base_seed: seed,
                output_path: Some(out.clone()),
            };
            usage(config.validate())?;
            let record = runtime(run_with(&config, data.as_ref()))?;
            match format {
                ReportFormat::Json => runtime(save_results(&out, &record))?,
                ReportFormat::Markdown => write(&out, &runtime(emit_report(std::slice::from_ref(&record), format))?)?,
            }
            print!("{}", runtime(emit_report(&[record], ReportFormat::Markdown))?);
        }
        Command::Histogram {
            task,
            n,
            bins,
            seed,
            out,
        } => {
            let task = usage(Task::by_name(&task))?;
            let dataset = runtime(build_dataset(&task, seed))?;
            let pair = usage(resample_histogram(&task, &dataset, n, bins, seed))?;
            let text = serde_json::to_string_pretty(&pair).map_err(|e| Failure::Runtime(Error::Malformed(e.to_string())))?;
            write(&out, &(text + "\n"))?;
            println!("dataset mean {:.6}\tuniform mean {:.6}", pair.dataset.mean, pair.resampled.mean);
        }
        Command::Report { inputs, format, out } => {
            let format: ReportFormat = usage(format.parse())?;
            let mut runs = Vec::new();
            for path in &inputs {
                match load_results(path) {
                    Ok(r) => runs.push(r),
                    // A combined JSON report is also accepted as input.
                    Err(Error::Malformed(_)) => {
                        let text = fs::read_to_string(path).map_err(|e| Failure::Runtime(Error::Io { path: path.clone(), source: e }))?;
                        let doc = parse_report(&text).map_err(|_| {
                            Failure::Runtime(Error::Malformed(format!("{} is not a results file", path.display())))
                        })?;
                        runs.extend(doc.runs);
                    }
                    Err(e) => return Err(Failure::Runtime(e)),
                }
            }
            let text = runtime(emit_report(&runs, format))?;
            match out {
                Some(path) => write(&path, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Dataset { task, seed, out } => {
            let task = usage(Task::by_name(&task))?;
            let dataset = runtime(build_dataset(&task, seed))?;
            let manifest = runtime(save_dataset(&out, &task, &dataset, seed))?;
            println!("{} rows written to {}", manifest.rows, out.display());
        }
    }
    Ok(())
}
