mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};

use config::{all_keys, corpus_keys, segmentation_keys, synth_keys, to_args, train_keys, ConfigFile, Key, Settings};

fn align_keys() -> Vec<Key> {
    let mut keys = corpus_keys();
    keys.extend(train_keys());
    keys.extend(segmentation_keys());
    keys.push(out_key());
    keys
}

fn grid_keys() -> Vec<Key> {
    let all = all_keys();
    let mut keys = align_keys();
    keys.extend(all.into_iter().filter(|k| matches!(k.name, "lambda_grid" | "dev_manifest" | "test_manifest")));
    keys
}

fn eval_keys() -> Vec<Key> {
    all_keys().into_iter().filter(|k| matches!(k.name, "predicted" | "gold" | "report")).collect()
}

fn synth_cmd_keys() -> Vec<Key> {
    let mut keys = synth_keys();
    keys.push(out_key());
    keys
}

fn out_key() -> Key {
    all_keys().into_iter().find(|k| k.name == "out").expect("out key")
}

fn cli() -> Command {
    Command::new("spanalign")
        .about("Unsupervised alignment of speech feature frames to translated words")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("threads")
                .long("threads")
                .env("SPANALIGN_THREADS")
                .value_parser(value_parser!(usize))
                .global(true)
                .help("worker threads [default: available cores]"),
        )
        .arg(
            Arg::new("config")
                .long("config")
                .value_parser(value_parser!(PathBuf))
                .global(true)
                .help("flat key = value config file; flags override it"),
        )
        .subcommand(Command::new("align").about("Train the model and write alignments").args(to_args(&align_keys())))
        .subcommand(
            Command::new("eval")
                .about("Score predicted alignments against gold links")
                .args(to_args(&eval_keys())),
        )
        .subcommand(
            Command::new("grid")
                .about("Pick lambda by dev-set F-score, then align the test split with it")
                .args(to_args(&grid_keys())),
        )
        .subcommand(Command::new("synth").about("Write a synthetic corpus with gold links").args(to_args(&synth_cmd_keys())))
        .subcommand(
            Command::new("dtw")
                .about("Print the DTW alignment between two feature files")
                .arg(Arg::new("a").required(true).value_parser(value_parser!(PathBuf)))
                .arg(Arg::new("b").required(true).value_parser(value_parser!(PathBuf)))
                .arg(Arg::new("path").long("path").action(ArgAction::SetTrue).help("also print the warping path")),
        )
}

fn dispatch(matches: &ArgMatches) -> Result<()> {
    let file = match matches.get_one::<PathBuf>("config") {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match name {
        "align" => commands::align(&Settings::resolve(&align_keys(), &file, sub)),
        "eval" => commands::eval(&Settings::resolve(&eval_keys(), &file, sub)),
        "grid" => commands::grid(&Settings::resolve(&grid_keys(), &file, sub)),
        "synth" => commands::synth(&Settings::resolve(&synth_cmd_keys(), &file, sub)),
        "dtw" => commands::dtw(
            sub.get_one::<PathBuf>("a").expect("required"),
            sub.get_one::<PathBuf>("b").expect("required"),
            sub.get_flag("path"),
        ),
        _ => unreachable!("clap rejects unknown subcommands"),
    }
}

fn run() -> Result<()> {
    let matches = cli().get_matches();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(&n) = matches.get_one::<usize>("threads") {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("starting worker threads")?;
    pool.install(|| dispatch(&matches))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        cli().debug_assert();
    }

    #[test]
    fn help_lists_every_key_with_default() {
        for (name, keys) in [("align", align_keys()), ("grid", grid_keys()), ("synth", synth_cmd_keys()), ("eval", eval_keys())] {
            let mut cmd = cli();
            let help = cmd.find_subcommand_mut(name).unwrap().render_long_help().to_string();
            for k in keys {
                assert!(help.contains(&format!("--{}", config::flag_name(k.name))), "{name}: {}", k.name);
                if let Some(d) = &k.default {
                    assert!(help.contains(&format!("[default: {d}]")), "{name}: {} default", k.name);
                }
            }
        }
    }
}
