mod args;
mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use gcdlab::error::LabError;

use args::{Cli, Format};
use output::{render, RunHeader};

#[derive(Debug)]
pub enum CliError {
    Lab(LabError),
    Io(String),
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        CliError::Lab(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lab(e) if e.is_size_or_feasibility() => 3,
            CliError::Lab(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lab(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment.
fn parse_config(text: &str) -> Result<Vec<(String, String)>, LabError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(LabError::Parse { line: i + 1, msg: "expected key = value".into() })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(argv: &[String]) -> Option<String> {
    argv.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            argv.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    })
}

/// Appends config entries whose flag is absent from the command line.
fn with_config(mut argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
    for (k, v) in parse_config(&text)? {
        let flag = format!("--{k}");
        let given = argv.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if given {
            continue;
        }
        match v.as_str() {
            "true" => argv.push(flag),
            "false" => {}
            _ => {
                argv.push(flag);
                argv.push(v);
            }
        }
    }
    Ok(argv)
}

fn destination(out: Option<PathBuf>, command: &str, format: Format) -> Option<PathBuf> {
    let dir = std::env::var_os("GCDLAB_OUT_DIR").map(PathBuf::from);
    match (out, dir) {
        (Some(p), Some(d)) if p.is_relative() => Some(d.join(p)),
        (Some(p), _) => Some(p),
        (None, Some(d)) => Some(d.join(format!("{command}.{}", if format == Format::Json { "json" } else { "csv" }))),
        (None, None) => None,
    }
}

fn command_name(cmd: &args::Command) -> String {
    let debug = format!("{cmd:?}");
    let name = debug.split([' ', '{', '(']).next().unwrap_or_default();
    let mut out = String::new();
    for (i, ch) in name.chars().enumerate() {
        if ch.is_uppercase() && i > 0 {
            out.push('-');
        }
        out.push(ch.to_ascii_lowercase());
    }
    out
}

fn main() -> ExitCode {
    let argv = match with_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let g = &cli.global;
    let name = command_name(&cli.command);
    let header = RunHeader { command: name.clone(), seed: g.seed, config: format!("{:?}", cli.command) };
    let result = gcdlab::par::with_threads(g.threads, || commands::run(&cli.command, g.seed));
    let out = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let text = render(&out, &header, g.format);
    match destination(g.out.clone(), &name, g.format) {
        None => print!("{text}"),
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                if let Err(e) = std::fs::create_dir_all(parent) {
                    eprintln!("error: {}: {e}", parent.display());
                    return ExitCode::from(1);
                }
            }
            if let Err(e) = std::fs::write(&p, text) {
                eprintln!("error: {}: {e}", p.display());
                return ExitCode::from(1);
            }
        }
    }
    ExitCode::SUCCESS
}
