mod args;
mod commands;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Bad invocation or input; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<hcocoa::Error>() {
        Some(
            hcocoa::Error::InvalidArgument(_)
            | hcocoa::Error::Infeasible(_)
            | hcocoa::Error::Dimension { .. }
            | hcocoa::Error::Parse { .. }
            | hcocoa::Error::Format(_)
            | hcocoa::Error::Unsupported(_),
        ) => 2,
        Some(hcocoa::Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

/// Finds `--config FILE` and splices its entries in right after the
/// subcommand, ahead of the explicit flags so those take precedence.
fn expand_config(raw: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let mut config = None;
    let mut rest = Vec::with_capacity(raw.len());
    let mut it = raw.into_iter();
    if let Some(bin) = it.next() {
        rest.push(bin);
    }
    while let Some(arg) = it.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            config = Some(it.next().ok_or_else(|| UsageError("--config needs a file".into()))?);
        } else if let Some(v) = s.strip_prefix("--config=") {
            config = Some(OsString::from(v));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| UsageError(format!("cannot read config file {}: {e}", path.to_string_lossy())))?;
    let mut flags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected key=value", i + 1)))?;
        let key = key.trim().replace('_', "-");
        match value.trim() {
            "true" => flags.push(OsString::from(format!("--{key}"))),
            "false" => {}
            v => flags.push(OsString::from(format!("--{key}={v}"))),
        }
    }
    let sub = rest.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map(|p| p + 2);
    match sub {
        Some(at) => {
            let tail = rest.split_off(at);
            rest.extend(flags);
            rest.extend(tail);
        }
        None => rest.extend(flags),
    }
    Ok(rest)
}

fn run() -> anyhow::Result<()> {
    let argv = expand_config(std::env::args_os().collect())?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Chunk(a) => commands::chunk(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::AllreduceCheck(a) => commands::allreduce_check(a),
    }
}

/// A closed downstream pipe (`hcocoa predict … | head`) is not a failure.
fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        c.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
            || matches!(c.downcast_ref::<hcocoa::Error>(), Some(hcocoa::Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
