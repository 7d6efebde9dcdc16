use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};

use waveprior::commands;
use waveprior::config::{Settings, SCHEMA};
use waveprior::Result;

fn with_settings_args(mut cmd: Command) -> Command {
    cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("PATH")
            .help("INI file with flat `key = value` settings"),
    );
    for d in SCHEMA {
        cmd = cmd.arg(Arg::new(d.key).long(d.key).value_name("VALUE").help(d.help));
    }
    cmd
}

fn path_arg(name: &'static str, help: &'static str, required: bool) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .help(help)
        .required(required)
        .value_parser(clap::value_parser!(PathBuf))
}

fn cli() -> Command {
    Command::new("waveprior")
        .about("Waveform diffusion prior: training, sampling, and guided restoration")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_settings_args(
            Command::new("train")
                .about("Train the toy denoiser on synthetic harmonic clips")
                .arg(path_arg("out", "checkpoint file to write", true)),
        ))
        .subcommand(with_settings_args(
            Command::new("sample")
                .about("Draw an unconditional sample from a trained model")
                .arg(path_arg("checkpoint", "trained model checkpoint", true))
                .arg(path_arg("out", "output WAV", true)),
        ))
        .subcommand(with_settings_args(
            Command::new("bwe")
                .about("Bandwidth extension of a low-passed signal (imputation guidance)")
                .arg(path_arg("checkpoint", "trained model checkpoint", true))
                .arg(path_arg("input", "low-passed WAV observation", false))
                .arg(path_arg(
                    "reference",
                    "clean WAV; degraded internally if --input is absent",
                    false,
                ))
                .arg(path_arg("out", "restored WAV", true))
                .arg(path_arg("trace", "per-step diagnostics CSV", false)),
        ))
        .subcommand(with_settings_args(
            Command::new("declip")
                .about("Restore a hard-clipped signal (reconstruction guidance)")
                .arg(path_arg("checkpoint", "trained model checkpoint", true))
                .arg(path_arg("input", "clipped WAV observation", false))
                .arg(path_arg(
                    "reference",
                    "clean WAV; clipped internally if --input is absent",
                    false,
                ))
                .arg(path_arg("out", "restored WAV", true))
                .arg(path_arg("trace", "per-step diagnostics CSV", false)),
        ))
        .subcommand(with_settings_args(
            Command::new("vocode")
                .about("Invert a log-mel spectrogram to a waveform (reconstruction guidance)")
                .arg(path_arg("checkpoint", "trained model checkpoint", true))
                .arg(path_arg("input", "mel tensor observation", false))
                .arg(path_arg(
                    "reference",
                    "clean WAV; analyzed internally if --input is absent",
                    false,
                ))
                .arg(path_arg("out", "synthesized WAV", true))
                .arg(path_arg("save-mel", "write the observed mel tensor", false))
                .arg(path_arg("trace", "per-step diagnostics CSV", false)),
        ))
        .subcommand(with_settings_args(
            Command::new("separate")
                .about("Split a two-source mixture with coupled chains")
                .arg(path_arg(
                    "checkpoint",
                    "model for the first source (and second unless --checkpoint2)",
                    true,
                ))
                .arg(path_arg(
                    "checkpoint2",
                    "optional model for the second source",
                    false,
                ))
                .arg(path_arg(
                    "input",
                    "mixture WAV; built from references if absent",
                    false,
                ))
                .arg(path_arg("ref1", "clean WAV of source 1", false))
                .arg(path_arg("ref2", "clean WAV of source 2", false))
                .arg(path_arg("out1", "estimated source 1 WAV", true))
                .arg(path_arg("out2", "estimated source 2 WAV", true))
                .arg(path_arg("trace", "per-step diagnostics CSV", false)),
        ))
        .subcommand(
            Command::new("oracle-check")
                .about("Run fast numerical self-checks and exit non-zero on any failure"),
        )
}

fn settings_from(m: &ArgMatches) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = m.get_one::<String>("config") {
        s.load_ini(Path::new(path))?;
    }
    for d in SCHEMA {
        if let Some(v) = m.get_one::<String>(d.key) {
            s.set(d.key, v)?;
        }
    }
    Ok(s)
}

fn opt_path<'a>(m: &'a ArgMatches, name: &str) -> Option<&'a Path> {
    m.get_one::<PathBuf>(name).map(PathBuf::as_path)
}

fn req_path<'a>(m: &'a ArgMatches, name: &str) -> &'a Path {
    m.get_one::<PathBuf>(name).expect("required by clap")
}

fn run() -> Result<()> {
    let matches = cli().get_matches();
    match matches.subcommand().expect("subcommand required") {
        ("train", m) => commands::cmd_train(&settings_from(m)?, req_path(m, "out")),
        ("sample", m) => commands::cmd_sample(
            &settings_from(m)?,
            req_path(m, "checkpoint"),
            req_path(m, "out"),
        ),
        ("bwe", m) => commands::cmd_bwe(
            &settings_from(m)?,
            req_path(m, "checkpoint"),
            opt_path(m, "input"),
            opt_path(m, "reference"),
            req_path(m, "out"),
            opt_path(m, "trace"),
        ),
        ("declip", m) => commands::cmd_declip(
            &settings_from(m)?,
            req_path(m, "checkpoint"),
            opt_path(m, "input"),
            opt_path(m, "reference"),
            req_path(m, "out"),
            opt_path(m, "trace"),
        ),
        ("vocode", m) => commands::cmd_vocode(
            &settings_from(m)?,
            req_path(m, "checkpoint"),
            opt_path(m, "input"),
            opt_path(m, "reference"),
            req_path(m, "out"),
            opt_path(m, "save-mel"),
            opt_path(m, "trace"),
        ),
        ("separate", m) => commands::cmd_separate(
            &settings_from(m)?,
            req_path(m, "checkpoint"),
            opt_path(m, "checkpoint2"),
            opt_path(m, "input"),
            opt_path(m, "ref1"),
            opt_path(m, "ref2"),
            req_path(m, "out1"),
            req_path(m, "out2"),
            opt_path(m, "trace"),
        ),
        ("oracle-check", _) => commands::cmd_oracle_check(),
        (other, _) => unreachable!("unknown subcommand {other}"),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
