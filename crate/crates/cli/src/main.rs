use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use itae::config::RunConfig;
use itae::data::{
    generate_synthetic, write_synthetic, AnomalySpan, ObjectShape, SyntheticSceneConfig,
};
use itae::pipeline;
use itae::scoring::LAMBDA_GRID;
use itae::Error;

fn config_args(cmd: Command) -> Command {
    let mut cmd = cmd
        .arg(
            Arg::new("preset")
                .long("preset")
                .default_value("desk")
                .help("desk, ucsd, cuhk or st"),
        )
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value file applied over the preset"),
        );
    // one flag per config key, applied last
    for key in RunConfig::keys() {
        cmd = cmd.arg(
            Arg::new(key)
                .long(key.replace('_', "-"))
                .value_name("VALUE")
                .help_heading("Config keys"),
        );
    }
    cmd
}

fn resolve(m: &ArgMatches) -> itae::Result<RunConfig> {
    let preset = m
        .get_one::<String>("preset")
        .map(String::as_str)
        .unwrap_or("desk");
    let mut cfg = RunConfig::preset(preset)?;
    if let Some(path) = m.get_one::<String>("config") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {path}: {e}")))?;
        cfg.apply_text(&text)?;
    }
    let mut errs = Vec::new();
    for key in RunConfig::keys() {
        if let Some(v) = m.get_one::<String>(key) {
            match cfg.set(key, v) {
                Err(Error::Config(msg)) => errs.push(msg),
                Err(e) => errs.push(e.to_string()),
                Ok(()) => {}
            }
        }
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    Ok(cfg)
}

fn scores_args(cmd: Command) -> Command {
    cmd.arg(
        Arg::new("scores")
            .long("scores")
            .required(true)
            .value_name("CSV"),
    )
    .arg(
        Arg::new("labels")
            .long("labels")
            .value_name("FILE")
            .help("label file; defaults to the label column of the CSV"),
    )
    .arg(Arg::new("out").long("out").value_name("FILE"))
}

fn cli() -> Command {
    Command::new("itae")
        .about(
            "Two-step video anomaly detection: autoencoder, then normalizing flows on its features",
        )
        .subcommand_required(true)
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .action(ArgAction::Count)
                .global(true),
        )
        .subcommand(config_args(
            Command::new("train-itae").about("Train the autoencoder on normal clips"),
        ))
        .subcommand(config_args(
            Command::new("train-nf").about("Train the flows on features of the frozen autoencoder"),
        ))
        .subcommand(config_args(
            Command::new("score").about("Write per-frame scores of the test video"),
        ))
        .subcommand(
            scores_args(Command::new("eval").about("AUC and EER of a score CSV")).arg(
                Arg::new("lambda")
                    .long("lambda")
                    .value_parser(clap::value_parser!(f64)),
            ),
        )
        .subcommand(
            scores_args(Command::new("sweep-lambda").about("Metrics for each fusion weight")).arg(
                Arg::new("grid")
                    .long("grid")
                    .value_delimiter(',')
                    .value_parser(clap::value_parser!(f64)),
            ),
        )
        .subcommand(
            Command::new("gen-synth")
                .about("Render a synthetic scene with labeled anomaly spans")
                .arg(Arg::new("out").long("out").required(true).value_name("DIR"))
                .arg(
                    Arg::new("frames")
                        .long("frames")
                        .default_value("200")
                        .value_parser(clap::value_parser!(usize)),
                )
                .arg(
                    Arg::new("canvas")
                        .long("canvas")
                        .default_value("64")
                        .value_parser(clap::value_parser!(usize)),
                )
                .arg(
                    Arg::new("objects")
                        .long("objects")
                        .default_value("3")
                        .value_parser(clap::value_parser!(usize)),
                )
                .arg(
                    Arg::new("shapes")
                        .long("shapes")
                        .default_value("square")
                        .help("comma list of square, bar"),
                )
                .arg(
                    Arg::new("speed")
                        .long("speed")
                        .default_value("1,2")
                        .help("min,max px per frame"),
                )
                .arg(
                    Arg::new("noise")
                        .long("noise")
                        .default_value("2")
                        .value_parser(clap::value_parser!(f64)),
                )
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .default_value("0")
                        .value_parser(clap::value_parser!(u64)),
                )
                .arg(
                    Arg::new("anomaly")
                        .long("anomaly")
                        .action(ArgAction::Append)
                        .value_name("MODE:START:END")
                        .help("speed, shape-swap or reverse over frames START..END; repeatable"),
                ),
        )
}

fn parse_span(s: &str) -> itae::Result<AnomalySpan> {
    let bad = || Error::Config(format!("anomaly {s:?} is not MODE:START:END"));
    let mut it = s.split(':');
    let (Some(mode), Some(a), Some(b), None) = (it.next(), it.next(), it.next(), it.next()) else {
        return Err(bad());
    };
    Ok(AnomalySpan {
        mode: mode.parse()?,
        start: a.parse().map_err(|_| bad())?,
        end: b.parse().map_err(|_| bad())?,
    })
}

fn gen_synth(m: &ArgMatches) -> itae::Result<()> {
    let speed: Vec<f64> = m
        .get_one::<String>("speed")
        .unwrap()
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::Config("speed must be min,max".into()))?;
    let [lo, hi] = speed[..] else {
        return Err(Error::Config("speed must be min,max".into()));
    };
    let shapes = m
        .get_one::<String>("shapes")
        .unwrap()
        .split(',')
        .map(|s| match s.trim() {
            "square" => Ok(ObjectShape::Square),
            "bar" => Ok(ObjectShape::Bar),
            other => Err(Error::Config(format!("unknown shape {other:?}"))),
        })
        .collect::<itae::Result<Vec<_>>>()?;
    let cfg = SyntheticSceneConfig {
        canvas: *m.get_one("canvas").unwrap(),
        objects: *m.get_one("objects").unwrap(),
        shapes,
        speed: (lo, hi),
        noise_sigma: *m.get_one("noise").unwrap(),
        seed: *m.get_one("seed").unwrap(),
        ..Default::default()
    };
    let spans = m
        .get_many::<String>("anomaly")
        .into_iter()
        .flatten()
        .map(|s| parse_span(s))
        .collect::<itae::Result<Vec<_>>>()?;
    let n: usize = *m.get_one("frames").unwrap();
    let out = PathBuf::from(m.get_one::<String>("out").unwrap());
    let video = generate_synthetic(&cfg, n, &spans)?;
    write_synthetic(&video, &out)?;
    log::info!("wrote {n} frames to {}", out.display());
    Ok(())
}

fn write_or_print(out: Option<&String>, text: &str) -> itae::Result<()> {
    match out {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| Error::Config(format!("cannot write {p}: {e}")))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(m: &ArgMatches) -> itae::Result<()> {
    match m.subcommand() {
        Some(("train-itae", sub)) => {
            let report = pipeline::cmd_train_itae(&resolve(sub)?)?;
            if let Some(last) = report.losses.last() {
                println!(
                    "final loss {:.6} after {} steps",
                    last.total,
                    report.losses.len()
                );
            }
        }
        Some(("train-nf", sub)) => {
            let out = pipeline::cmd_train_nf(&resolve(sub)?)?;
            for (name, log) in [
                ("static", &out.logs.static_log),
                ("dynamic", &out.logs.dynamic_log),
            ] {
                if let Some(nll) = log.as_ref().and_then(|l| l.nll.last()) {
                    println!("{name} flow final nll {nll:.6}");
                }
            }
            println!("autoencoder checkpoint unchanged ({})", out.itae_hash_after);
        }
        Some(("score", sub)) => {
            let cfg = resolve(sub)?;
            let series = pipeline::cmd_score(&cfg)?;
            println!(
                "scored {} frames into {}",
                series.frame_index.len(),
                pipeline::RunLayout::new(&cfg).scores().display()
            );
        }
        Some(("eval", sub)) => {
            let scores = PathBuf::from(sub.get_one::<String>("scores").unwrap());
            let labels = sub.get_one::<String>("labels").map(PathBuf::from);
            let lambda = sub
                .get_one::<f64>("lambda")
                .copied()
                .unwrap_or(RunConfig::desk().lambda);
            let metrics = pipeline::cmd_eval(&scores, labels.as_deref(), lambda)?;
            write_or_print(
                sub.get_one::<String>("out"),
                &format!("{}\n", metrics.to_json()),
            )?;
        }
        Some(("sweep-lambda", sub)) => {
            let scores = PathBuf::from(sub.get_one::<String>("scores").unwrap());
            let labels = sub.get_one::<String>("labels").map(PathBuf::from);
            let grid: Vec<f64> = match sub.get_many::<f64>("grid") {
                Some(g) => g.copied().collect(),
                None => LAMBDA_GRID.to_vec(),
            };
            let rows = pipeline::cmd_sweep(&scores, labels.as_deref(), &grid)?;
            write_or_print(sub.get_one::<String>("out"), &pipeline::sweep_table(&rows))?;
        }
        Some(("gen-synth", sub)) => gen_synth(sub)?,
        _ => unreachable!("subcommand required"),
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric(_) | Error::NonFinite(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let m = cli().get_matches();
    let level = match m.get_count("verbose") {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&m) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
