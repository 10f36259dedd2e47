//! `prompt-replay`: run, compare and sweep prompt replay experiments.
//!
//! Exit codes: 0 on success, 1 for configuration errors, 2 for runtime errors.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Arg, ArgAction, ArgMatches, Command};
use prompt_replay::runner::{self, snapshot, MetricsWriter, Run, RunConfig, SweepParam, CONFIG_KEYS};
use prompt_replay::Error;

const METRICS_FILE: &str = "metrics.jsonl";
const SUMMARY_FILE: &str = "summary.txt";
const CONFIG_FILE: &str = "config.txt";
const SNAPSHOT_FILE: &str = "snapshot.bin";

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn common_args(cmd: Command) -> Command {
    let cmd = cmd
        .arg(Arg::new("config").long("config").value_name("PATH").help("key=value config file"))
        .arg(Arg::new("seed").long("seed").value_name("N").help("run seed"))
        .arg(Arg::new("steps").long("steps").value_name("N").help("override run.total_steps"))
        .arg(Arg::new("mode").long("mode").value_name("MODE").help("baseline | prompt_replay"))
        .arg(Arg::new("out").long("out").value_name("DIR").help("output directory"))
        .arg(
            Arg::new("set")
                .long("set")
                .value_name("KEY=VALUE")
                .action(ArgAction::Append)
                .help("override any config key"),
        );
    CONFIG_KEYS.iter().fold(cmd, |cmd, &key| {
        cmd.arg(Arg::new(key).long(key).value_name("VALUE").hide(true))
    })
}

fn cli() -> Command {
    let seeds = || {
        Arg::new("seeds")
            .long("seeds")
            .value_name("LIST")
            .help("comma-separated seeds or a range such as 1..20 [default: 1..20]")
    };
    Command::new("prompt-replay")
        .about("Prompt replay experiments on a synthetic RLVR simulator")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            common_args(Command::new("run").about("Run one training simulation"))
                .arg(Arg::new("resume").long("resume").value_name("SNAPSHOT").help("continue from a snapshot file"))
                .arg(
                    Arg::new("snapshot-at")
                        .long("snapshot-at")
                        .value_name("STEP")
                        .action(ArgAction::Append)
                        .help("also write snapshot-STEP.bin after this step"),
                ),
        )
        .subcommand(common_args(Command::new("ab").about("Paired baseline vs prompt replay comparison")).arg(seeds()))
        .subcommand(
            common_args(Command::new("sweep").about("One comparison per value of a buffer or scheduler parameter"))
                .arg(seeds())
                .arg(
                    Arg::new("param")
                        .long("param")
                        .required(true)
                        .value_name("NAME")
                        .help("cooldown_steps | max_reuse | replay_fraction | p_min | p_max"),
                )
                .arg(Arg::new("values").long("values").required(true).value_name("LIST").help("comma-separated values")),
        )
}

fn load_config(m: &ArgMatches) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        let text = fs::read_to_string(path).map_err(|e| config_error(format!("cannot read config {path}: {e}")))?;
        cfg.apply_text(&text).map_err(|e| config_error(format!("{path}: {e}")))?;
    }
    for &key in CONFIG_KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    for kv in m.get_many::<String>("set").into_iter().flatten() {
        let (k, v) = kv.split_once('=').ok_or_else(|| config_error(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    for (flag, key) in [("seed", "run.seed"), ("steps", "run.total_steps"), ("mode", "run.mode")] {
        if let Some(v) = m.get_one::<String>(flag) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_seeds(m: &ArgMatches) -> anyhow::Result<Vec<u64>> {
    let Some(list) = m.get_one::<String>("seeds") else {
        return Ok((1..=20).collect());
    };
    let bad = || config_error(format!("cannot parse seeds `{list}`"));
    let mut seeds = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (a.parse().map_err(|_| bad())?, b.trim_start_matches('=').parse().map_err(|_| bad())?);
            if a > b {
                return Err(bad());
            }
            seeds.extend(a..=b);
        } else {
            seeds.push(part.parse().map_err(|_| bad())?);
        }
    }
    Ok(seeds)
}

fn out_dir(m: &ArgMatches) -> anyhow::Result<Option<PathBuf>> {
    let Some(dir) = m.get_one::<String>("out") else { return Ok(None) };
    let dir = PathBuf::from(dir);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(Some(dir))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(m: &ArgMatches) -> anyhow::Result<()> {
    let mut run = match m.get_one::<String>("resume") {
        Some(path) => {
            let mut run: Run = snapshot::read_file(Path::new(path)).with_context(|| format!("restoring {path}"))?;
            if let Some(steps) = m.get_one::<String>("steps") {
                run.set_total_steps(steps.parse().map_err(|_| config_error(format!("invalid --steps `{steps}`")))?)?;
            }
            run
        }
        None => Run::new(load_config(m)?)?,
    };
    let snapshot_at = m
        .get_many::<String>("snapshot-at")
        .into_iter()
        .flatten()
        .map(|s| s.parse::<u64>().map_err(|_| config_error(format!("invalid --snapshot-at `{s}`"))))
        .collect::<anyhow::Result<Vec<_>>>()?;

    let out = out_dir(m)?;
    let sink: Box<dyn std::io::Write> = match &out {
        Some(dir) => {
            write(&dir.join(CONFIG_FILE), &run.config().to_text())?;
            let path = dir.join(METRICS_FILE);
            Box::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?)
        }
        None => Box::new(std::io::stdout().lock()),
    };
    let mut writer = MetricsWriter::new(sink);
    let mut records = Vec::new();
    let result = (|| -> anyhow::Result<()> {
        while !run.is_finished() {
            let r = run.step()?;
            writer.write(&r)?;
            if let (Some(dir), true) = (&out, snapshot_at.contains(&r.step)) {
                snapshot::write_file(&dir.join(format!("snapshot-{}.bin", r.step)), &run)?;
            }
            records.push(r);
        }
        Ok(())
    })();
    writer.finish()?;
    result?;

    if let Some(dir) = &out {
        let summary = runner::summarize(run.config(), &records);
        write(&dir.join(SUMMARY_FILE), &summary.to_text())?;
        snapshot::write_file(&dir.join(SNAPSHOT_FILE), &run)?;
        eprintln!("{} steps written to {}", records.len(), dir.display());
    }
    Ok(())
}

fn cmd_ab(m: &ArgMatches) -> anyhow::Result<()> {
    let cfg = load_config(m)?;
    let summary = runner::ab_compare(&cfg, &parse_seeds(m)?)?;
    let text = summary.to_text();
    print!("{text}");
    if let Some(dir) = out_dir(m)? {
        write(&dir.join(CONFIG_FILE), &cfg.to_text())?;
        write(&dir.join("comparison.txt"), &text)?;
        let mut per_seed = String::from("seed\tarm\tfinal_skill\ttotal_rollouts\twindow_mean_zero_variance\twindow_mean_abs_adv\trollouts_to_threshold\n");
        for p in &summary.pairs {
            for (arm, s) in [("baseline", &p.baseline), ("prompt_replay", &p.replay)] {
                let reach = s.rollouts_to_threshold.map_or_else(|| "none".into(), |v| v.to_string());
                per_seed.push_str(&format!(
                    "{}\t{arm}\t{}\t{}\t{}\t{}\t{reach}\n",
                    p.seed, s.final_skill, s.total_rollouts, s.window_mean_zero_variance, s.window_mean_abs_adv
                ));
            }
        }
        write(&dir.join("pairs.tsv"), &per_seed)?;
    }
    Ok(())
}

fn cmd_sweep(m: &ArgMatches) -> anyhow::Result<()> {
    let cfg = load_config(m)?;
    let param: SweepParam = m.get_one::<String>("param").expect("required").parse()?;
    let values: Vec<String> =
        m.get_one::<String>("values").expect("required").split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    let table = runner::sweep(&cfg, param, &values, &parse_seeds(m)?)?;
    let tsv = table.to_tsv();
    print!("{tsv}");
    if let Some(dir) = out_dir(m)? {
        write(&dir.join(CONFIG_FILE), &cfg.to_text())?;
        write(&dir.join("sweep.tsv"), &tsv)?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Validation(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match matches.subcommand() {
        Some(("run", m)) => cmd_run(m),
        Some(("ab", m)) => cmd_ab(m),
        Some(("sweep", m)) => cmd_sweep(m),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
