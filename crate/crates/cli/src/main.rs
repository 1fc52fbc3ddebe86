//! `ambsec`: run simulator experiments from a JSON configuration.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ambsec_core::experiment::{self, ExperimentConfig};
use ambsec_core::Error;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ambsec", version, about = "Ambient-backscatter anti-eavesdropping simulator")]
struct Cli {
    /// JSON configuration file; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (CSV/JSON to stdout when omitted, where allowed).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for Monte-Carlo loops.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the configured trials per grid point.
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a labelled feature dataset (binary records).
    GenDataset,
    /// Bit error rate per detector over the configured grid.
    BerSweep,
    /// Maximum tag rate over the configured grid.
    RateSweep,
    /// Train the neural detector; writes the model and `<out>.history.csv`.
    Train,
    /// Meta-train across fading families, then fine-tune on the target.
    MetaTrain,
    /// Guessing entropy of the hidden positions versus splitting ratio.
    GuessEntropy,
    /// Split, transmit, detect and merge one or more messages.
    E2eDemo,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Io(_) | Error::Format(_) => 3,
        Error::SingularMatrix { .. } | Error::Numerical(_) | Error::FrameIntegrity(_) => 4,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = cli.trials {
        cfg.trials = trials;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required_out(cli: &Cli) -> Result<&Path, Error> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --out PATH".into()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Names the file in I/O errors.
fn at<T>(path: &Path, r: Result<T, Error>) -> Result<T, Error> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(at(p, File::create(p).map_err(Error::from))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit(cfg: &ExperimentConfig, out: Option<&Path>, table: (Vec<&str>, Vec<Vec<String>>)) -> Result<(), Error> {
    experiment::write_csv(open_out(out)?, &cfg.header_comment(), &table.0, &table.1)
}

fn emit_file(cfg: &ExperimentConfig, path: &Path, table: (Vec<&str>, Vec<Vec<String>>)) -> Result<(), Error> {
    emit(cfg, Some(path), table)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    let out = cli.out.as_deref();
    experiment::with_workers(cli.workers, || -> Result<(), Error> {
        match cli.command {
            Command::GenDataset => {
                let path = required_out(cli)?;
                let generated = experiment::gen_dataset(&cfg)?;
                at(path, experiment::save_dataset(path, &generated.dataset))?;
                eprintln!(
                    "wrote {} records ({} ones) to {}",
                    generated.dataset.len(),
                    generated.dataset.count_label(1),
                    path.display()
                );
            }
            Command::BerSweep => {
                let rows = experiment::run_ber_sweep(&cfg)?;
                emit(&cfg, out, experiment::ber_table(&rows))?;
            }
            Command::RateSweep => {
                let rows = experiment::run_rate_sweep(&cfg)?;
                emit(&cfg, out, experiment::rate_table(&rows))?;
            }
            Command::Train => {
                let path = required_out(cli)?;
                let (model, history) = experiment::run_train(&cfg)?;
                at(path, model.save(path))?;
                emit_file(&cfg, &sibling(path, ".history.csv"), experiment::epoch_table(&history))?;
                if let Some(last) = history.last() {
                    eprintln!("epoch {}: loss {:.4}, accuracy {:.4}", last.epoch, last.loss, last.accuracy);
                }
            }
            Command::MetaTrain => {
                let path = required_out(cli)?;
                let outcome = experiment::run_meta_train(&cfg)?;
                at(path, outcome.meta_model.save(path))?;
                emit_file(&cfg, &sibling(path, ".history.csv"), experiment::episode_table(&outcome.history))?;
                if let Some((model, history)) = &outcome.finetuned {
                    let tuned = sibling(path, ".finetuned");
                    at(&tuned, model.save(&tuned))?;
                    emit_file(&cfg, &sibling(&tuned, ".history.csv"), experiment::epoch_table(history))?;
                }
            }
            Command::GuessEntropy => {
                let rows = experiment::run_guess_entropy(&cfg)?;
                emit(&cfg, out, experiment::bound_table(&rows))?;
            }
            Command::E2eDemo => {
                let report = experiment::run_e2e_demo(&cfg)?;
                let mut w = open_out(out)?;
                serde_json::to_writer_pretty(&mut w, &report).map_err(|e| Error::Io(e.into()))?;
                writeln!(w)?;
                w.flush()?;
            }
        }
        Ok(())
    })?
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Format("x".into())), 3);
        assert_eq!(exit_code(&Error::Io(io::Error::other("x"))), 3);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 4);
    }

    #[test]
    fn sidecar_names_extend_the_output_path() {
        assert_eq!(sibling(Path::new("out/model.bin"), ".history.csv"), PathBuf::from("out/model.bin.history.csv"));
    }

    #[test]
    fn global_flags_parse_after_subcommand() {
        let cli = Cli::try_parse_from(["ambsec", "rate-sweep", "--seed", "4", "--workers", "2"]).unwrap();
        assert_eq!(cli.seed, Some(4));
        assert_eq!(cli.workers, Some(2));
        assert!(matches!(cli.command, Command::RateSweep));
        assert!(Cli::try_parse_from(["ambsec", "bogus"]).is_err());
    }

    #[test]
    fn overrides_apply_and_are_validated() {
        let cli = Cli::try_parse_from(["ambsec", "--trials", "7", "--seed", "9", "ber-sweep"]).unwrap();
        let cfg = load_config(&cli).unwrap();
        assert_eq!((cfg.trials, cfg.seed), (7, 9));
        let bad = Cli::try_parse_from(["ambsec", "--trials", "0", "ber-sweep"]).unwrap();
        assert!(matches!(load_config(&bad), Err(Error::Config(_))));
    }
}
