use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use unrig::config::{RunConfig, KEYS};
use unrig::gradcheck::run_gradcheck;
use unrig::mesh::{load_obj, save_obj, Mesh};
use unrig::metrics::evaluate;
use unrig::nn::{Checkpoint, Tensor};
use unrig::pose::{train_pose_module, transfer_pose, PoseNet};
use unrig::shape::{codes_for, fit_shape_code, segment_mesh, train_shape_module, ShapeCode, ShapeDecoder};
use unrig::synth::dataset::{
    load_asset, load_pose_training_set, load_shape_items, read_jsonl, save_labels, write_dataset, TestRecord,
    TEST_MANIFEST_FILE,
};
use unrig::synth::gen_dataset;
use unrig::ttt::{run_ttt, DrivingSource, TttSubject};
use unrig::{seed, Error};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name("PATH").value_parser(clap::value_parser!(PathBuf)).help(help)
}

fn cli() -> Command {
    let mut cmd = Command::new("unrig")
        .about("Pose transfer onto unrigged stylized characters")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(path_arg("config", "key = value configuration file").global(true));
    for key in KEYS {
        let long: &'static str = Box::leak(key.replace('_', "-").into_boxed_str());
        cmd = cmd.arg(
            Arg::new(*key)
                .long(long)
                .value_name("VALUE")
                .global(true)
                .hide_short_help(true)
                .help(format!("override the `{key}` setting")),
        );
    }
    let shape = || path_arg("shape-ckpt", "shape checkpoint (default: <out_dir>/shape.ckpt)");
    let pose = || path_arg("pose-ckpt", "pose checkpoint (default: <out_dir>/pose.ckpt)");
    let mesh = || path_arg("mesh", "input OBJ");
    let output = || path_arg("output", "output file");
    let code = || path_arg("code", "shape code checkpoint; fitted when absent");
    let pose_code = || {
        Arg::new("pose-code")
            .long("pose-code")
            .value_name("CODE")
            .help("comma-separated pose code, or a file holding a JSON array")
    };
    let item = || {
        Arg::new("test-item")
            .long("test-item")
            .value_name("INDEX")
            .value_parser(clap::value_parser!(usize))
            .help("take mesh, pose and source from this line of the test manifest")
    };
    cmd.subcommand(Command::new("gen-data").about("generate the synthetic dataset into <data_dir>"))
        .subcommand(Command::new("train-shape").about("train the shape module").arg(shape()))
        .subcommand(
            Command::new("fit-shape")
                .about("fit a shape code to a mesh")
                .arg(mesh().required(true))
                .arg(shape())
                .arg(output().required(true)),
        )
        .subcommand(
            Command::new("segment")
                .about("predict per-vertex part labels")
                .arg(mesh().required(true))
                .arg(shape())
                .arg(code())
                .arg(output().required(true)),
        )
        .subcommand(Command::new("train-pose").about("train the pose module").arg(shape()).arg(pose()))
        .subcommand(
            Command::new("transfer")
                .about("deform a mesh into a pose")
                .arg(mesh())
                .arg(pose_code())
                .arg(item())
                .arg(shape())
                .arg(pose())
                .arg(code())
                .arg(output().required(true)),
        )
        .subcommand(
            Command::new("ttt-transfer")
                .about("deform a mesh into a pose with test-time training")
                .arg(mesh())
                .arg(pose_code())
                .arg(item())
                .arg(shape())
                .arg(pose())
                .arg(code())
                .arg(path_arg("source-mesh", "driving character in rest pose"))
                .arg(path_arg("source-target", "driving character in the target pose"))
                .arg(path_arg("source-code", "driving character shape code; fitted when absent"))
                .arg(output().required(true)),
        )
        .subcommand(
            Command::new("eval")
                .about("score transfers over the test manifest")
                .arg(shape())
                .arg(pose())
                .arg(Arg::new("ttt").long("ttt").action(ArgAction::SetTrue).help("apply test-time training"))
                .arg(path_arg("report", "JSON-lines report (default: <out_dir>/eval.jsonl)"))
                .arg(path_arg("csv", "also write a CSV table")),
        )
        .subcommand(Command::new("gradcheck").about("finite-difference check of every loss gradient"))
}

fn load_config(m: &ArgMatches) -> CliResult<RunConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for key in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(m: &ArgMatches, name: &str, cfg: &RunConfig, default: &str) -> CliResult<PathBuf> {
    let p = m.get_one::<PathBuf>(name).cloned().unwrap_or_else(|| cfg.out_dir.join(default));
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::io(dir, e)))?;
    }
    Ok(p)
}

fn in_path(m: &ArgMatches, name: &str, cfg: &RunConfig, default: &str) -> PathBuf {
    m.get_one::<PathBuf>(name).cloned().unwrap_or_else(|| cfg.out_dir.join(default))
}

fn save_code(code: &[f64], path: &Path) -> CliResult<()> {
    let mut ck = Checkpoint::new();
    ck.insert("code", Tensor::vector(code));
    Ok(ck.save(path)?)
}

fn load_code(path: &Path, d: usize) -> CliResult<ShapeCode> {
    let ck = Checkpoint::load(path)?;
    let code = ck.vector("code").map_err(Error::from)?.to_vec();
    unrig::error::check_dims("shape code", d, code.len())?;
    Ok(code)
}

fn parse_pose_code(text: &str) -> CliResult<Vec<f64>> {
    let inline: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    if let Ok(v) = inline {
        return Ok(v);
    }
    let p = Path::new(text);
    let raw = std::fs::read_to_string(p).map_err(|e| Failure::from(Error::io(p, e)))?;
    serde_json::from_str(&raw).map_err(|e| Failure::Usage(format!("pose code {text}: {e}")))
}

fn fitted_code(mesh: &Mesh, decoder: &ShapeDecoder, cfg: &RunConfig, label: &str) -> CliResult<ShapeCode> {
    let fit = unrig::shape::FitConfig {
        seed: seed::derive(cfg.fit_config().seed, label),
        ..cfg.fit.clone()
    };
    Ok(fit_shape_code(mesh, decoder, &fit, None)?.code)
}

struct TransferInputs {
    mesh: Mesh,
    code: ShapeCode,
    pose: Vec<f64>,
    record: Option<TestRecord>,
}

fn transfer_inputs(m: &ArgMatches, cfg: &RunConfig, decoder: &ShapeDecoder) -> CliResult<TransferInputs> {
    let record = match m.get_one::<usize>("test-item") {
        Some(&i) => {
            let records: Vec<TestRecord> = read_jsonl(&cfg.data_dir.join(TEST_MANIFEST_FILE))?;
            let n = records.len();
            Some(
                records
                    .into_iter()
                    .nth(i)
                    .ok_or_else(|| Failure::Usage(format!("test item {i} out of range ({n} items)")))?,
            )
        }
        None => None,
    };
    let mesh = match (m.get_one::<PathBuf>("mesh"), &record) {
        (Some(p), _) => load_obj(p)?,
        (None, Some(r)) => load_asset(&cfg.data_dir, &r.character_id, &r.obj_path)?,
        (None, None) => return Err(Failure::Usage("either --mesh or --test-item is required".into())),
    };
    let pose = match (m.get_one::<String>("pose-code"), &record) {
        (Some(t), _) => parse_pose_code(t)?,
        (None, Some(r)) => r.pose_code.clone(),
        (None, None) => return Err(Failure::Usage("either --pose-code or --test-item is required".into())),
    };
    let code = match m.get_one::<PathBuf>("code") {
        Some(p) => load_code(p, decoder.code_dim())?,
        None => fitted_code(&mesh, decoder, cfg, "subject")?,
    };
    Ok(TransferInputs {
        mesh,
        code,
        pose,
        record,
    })
}

fn run(m: &ArgMatches) -> CliResult<()> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    let cfg = load_config(sub)?;
    match name {
        "gen-data" => {
            let ds = gen_dataset(&cfg.dataset_config())?;
            write_dataset(&ds, &cfg.data_dir)?;
            println!(
                "wrote {} characters and {} training poses to {}",
                ds.characters.len(),
                ds.train_poses.len(),
                cfg.data_dir.display()
            );
        }
        "train-shape" => {
            let items = load_shape_items(&cfg.data_dir)?;
            let tr = train_shape_module(&items, &cfg.shape_config())?;
            let path = out_path(sub, "shape-ckpt", &cfg, "shape.ckpt")?;
            tr.decoder.save(&tr.named_codes(&items), &path)?;
            let acc = tr.occupancy_accuracy.iter().sum::<f64>() / tr.occupancy_accuracy.len() as f64;
            println!("trained on {} characters, mean occupancy accuracy {acc:.4}", items.len());
        }
        "fit-shape" => {
            let (decoder, _) = ShapeDecoder::load(in_path(sub, "shape-ckpt", &cfg, "shape.ckpt"))?;
            let mesh = load_obj(sub.get_one::<PathBuf>("mesh").expect("required"))?;
            let fit = fit_shape_code(&mesh, &decoder, &cfg.fit_config(), None)?;
            save_code(&fit.code, &out_path(sub, "output", &cfg, "code.ckpt")?)?;
            if let Some(last) = fit.history.last() {
                println!("final loss {:.6}", last.total);
            }
        }
        "segment" => {
            let (decoder, _) = ShapeDecoder::load(in_path(sub, "shape-ckpt", &cfg, "shape.ckpt"))?;
            let mesh = load_obj(sub.get_one::<PathBuf>("mesh").expect("required"))?;
            let code = match sub.get_one::<PathBuf>("code") {
                Some(p) => load_code(p, decoder.code_dim())?,
                None => fit_shape_code(&mesh, &decoder, &cfg.fit_config(), None)?.code,
            };
            let labels = segment_mesh(&mesh, &code, &decoder)?;
            save_labels(&labels, &out_path(sub, "output", &cfg, "labels.ckpt")?)?;
            let mut counts = vec![0usize; decoder.part_count()];
            labels.iter().for_each(|&l| counts[l] += 1);
            println!("vertices per part: {counts:?}");
        }
        "train-pose" => {
            let (_, codes) = ShapeDecoder::load(in_path(sub, "shape-ckpt", &cfg, "shape.ckpt"))?;
            let (set, ids) = load_pose_training_set(&cfg.data_dir)?;
            let ordered = codes_for(&codes, &ids)?;
            let pose_dim = set.pairs.first().map_or(cfg.dataset.pose_dim, |p| p.code.len());
            let tr = train_pose_module(&set, &ordered, pose_dim, &cfg.pose_config())?;
            tr.net.save(out_path(sub, "pose-ckpt", &cfg, "pose.ckpt")?)?;
            if let (Some(a), Some(b)) = (tr.history.first(), tr.history.last()) {
                println!("per-point loss {a:.6} -> {b:.6}");
            }
        }
        "transfer" => {
            let (decoder, _) = ShapeDecoder::load(in_path(sub, "shape-ckpt", &cfg, "shape.ckpt"))?;
            let net = PoseNet::load(in_path(sub, "pose-ckpt", &cfg, "pose.ckpt"))?;
            let inp = transfer_inputs(sub, &cfg, &decoder)?;
            let out = transfer_pose(&inp.mesh, &inp.code, &inp.pose, &net)?;
            save_obj(&out, out_path(sub, "output", &cfg, "transfer.obj")?)?;
        }
        "ttt-transfer" => {
            let (decoder, codes) = ShapeDecoder::load(in_path(sub, "shape-ckpt", &cfg, "shape.ckpt"))?;
            let net = PoseNet::load(in_path(sub, "pose-ckpt", &cfg, "pose.ckpt"))?;
            let inp = transfer_inputs(sub, &cfg, &decoder)?;
            let (rest, posed, source_id) = match (
                sub.get_one::<PathBuf>("source-mesh"),
                sub.get_one::<PathBuf>("source-target"),
                &inp.record,
            ) {
                (Some(a), Some(b), _) => (load_obj(a)?, load_obj(b)?, None),
                (None, None, Some(r)) => (
                    load_asset(&cfg.data_dir, &r.source_id, &r.source_obj_path)?,
                    load_asset(&cfg.data_dir, &r.source_id, &r.source_target_obj_path)?,
                    Some(r.source_id.clone()),
                ),
                _ => {
                    return Err(Failure::Usage(
                        "give --source-mesh and --source-target, or --test-item".into(),
                    ))
                }
            };
            let known = source_id.and_then(|id| codes.into_iter().find(|(k, _)| *k == id).map(|(_, c)| c));
            let source_code = match (sub.get_one::<PathBuf>("source-code"), known) {
                (Some(p), _) => load_code(p, decoder.code_dim())?,
                (None, Some(c)) => c,
                (None, None) => fitted_code(&rest, &decoder, &cfg, "source")?,
            };
            let ttt = cfg.ttt_config();
            let subject = TttSubject::prepare(
                inp.mesh,
                inp.code,
                &decoder,
                ttt.surface_samples,
                seed::derive(ttt.seed, "surface"),
            )?;
            let source = DrivingSource::from_meshes(&rest, &posed, source_code)?;
            let out = run_ttt(&subject, &source, &inp.pose, &net, &ttt)?;
            save_obj(&out.mesh, out_path(sub, "output", &cfg, "transfer.obj")?)?;
            if out.diverged {
                eprintln!("warning: test-time training diverged; wrote the untuned result");
            } else if let Some(last) = out.history.last() {
                println!("final TTT loss {:.6}", last.total);
            }
        }
        "eval" => {
            let (decoder, codes) = ShapeDecoder::load(in_path(sub, "shape-ckpt", &cfg, "shape.ckpt"))?;
            let net = PoseNet::load(in_path(sub, "pose-ckpt", &cfg, "pose.ckpt"))?;
            let ttt = sub.get_flag("ttt").then(|| cfg.ttt_config());
            let report = evaluate(&cfg.data_dir, &decoder, &codes, &net, ttt.as_ref(), &cfg.eval_options())?;
            let path = out_path(sub, "report", &cfg, "eval.jsonl")?;
            let csv = match sub.get_one::<PathBuf>("csv") {
                Some(_) => Some(out_path(sub, "csv", &cfg, "eval.csv")?),
                None => None,
            };
            report.save(&path, csv.as_deref())?;
            match &report.aggregate {
                Some(a) => println!(
                    "{} items: pmd {:.4} els {:.4} part accuracy {}",
                    a.count,
                    a.mean_pmd,
                    a.mean_els,
                    a.mean_part_accuracy.map_or("-".to_string(), |p| format!("{p:.4}"))
                ),
                None => println!("0 items"),
            }
        }
        "gradcheck" => {
            let results = run_gradcheck(&cfg.gradcheck_config())?;
            let mut ok = true;
            for r in &results {
                ok &= r.max_relative_error < GRADCHECK_TOLERANCE && r.checked > 0;
                println!(
                    "{} max_rel_err={:.3e} checked={} skipped={}",
                    r.loss, r.max_relative_error, r.checked, r.skipped
                );
            }
            if !ok {
                return Err(Failure::Runtime(format!(
                    "gradient check exceeded relative error {GRADCHECK_TOLERANCE:e}"
                )));
            }
        }
        other => unreachable!("unknown subcommand {other}"),
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("usage error");
            eprintln!("error: {}", one_line(first.trim_start_matches("error:")));
            return ExitCode::from(2);
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {}", one_line(&msg));
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {}", one_line(&msg));
            ExitCode::from(1)
        }
    }
}
