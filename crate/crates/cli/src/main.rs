use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use spectnt::data::synth::{split_dataset, SynthSpec};
use spectnt::data::{chord_label, Dataset, PitchGrid};
use spectnt::features::{load_wav, task_spectrogram};
use spectnt::gradcheck::{check_model, micro_config, CheckObjective, GradCheckOptions, GradCheckReport};
use spectnt::io::{fmt6, load_checkpoint, read_tensor, save_checkpoint, to_json6, write_atomic, Preset, RunConfig};
use spectnt::model::{OutputSpec, SpecTnt, Variant};
use spectnt::params::ParamStore;
use spectnt::train::{ablation_table, evaluate, run_ablation, train, write_history, TrainOptions};
use spectnt::{Error, Task, Tensor};

#[derive(Parser)]
#[command(name = "spectnt", version, about = "Train and evaluate SpecTNT models on spectrogram-like inputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and keep the checkpoint that scores best on validation data.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset; metrics JSON goes to stdout.
    Eval(EvalArgs),
    /// Run a checkpoint on a dataset, a WAV file or a tensor file; writes CSV.
    Predict(PredictArgs),
    /// Finite-difference check of the micro model in all variants.
    Gradcheck(GradcheckArgs),
    /// Train full, A1, A2 and A3 on one split and compare them.
    Ablate(AblateArgs),
    /// Write synthetic train/val/test datasets.
    GenData(GenDataArgs),
}

/// Flags that override RunConfig fields.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long)]
    val_data: Option<PathBuf>,
}

impl Overrides {
    fn into_config(self) -> RunConfig {
        RunConfig {
            task: self.task,
            preset: self.preset,
            variant: self.variant,
            steps: self.steps,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            seed: self.seed,
            eval_every: self.eval_every,
            dropout: self.dropout,
            train_data: self.train_data,
            val_data: self.val_data,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// RunConfig JSON; flags take precedence over its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory for checkpoints, history and the resolved config.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset JSON, WAV, or tensor file of shape [T, F, K] or [B, T, F, K].
    #[arg(long)]
    input: PathBuf,
    /// Output layout; inferred from the model head when omitted.
    #[arg(long)]
    task: Option<Task>,
    /// Lowest MIDI note of melody class 1, for inputs without a pitch grid.
    #[arg(long, default_value_t = spectnt::data::synth::MELODY_BASE_MIDI)]
    pitch_base_midi: f64,
    /// Semitones between adjacent melody classes.
    #[arg(long, default_value_t = 1.0)]
    pitch_step: f64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, default_value = "melody")]
    task: Task,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    eval_every: usize,
    /// Stop a variant once its validation score reaches this value.
    #[arg(long)]
    target: Option<f64>,
    /// Directory with train.json, val.json and test.json; synthetic data otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also write the rows as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    task: Task,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    val: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

/// Failure that maps onto an exit code.
enum Failure {
    Error(Error),
    /// A check ran to completion and did not pass.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::GenData(a) => cmd_gen_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("spectnt: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Error(e)) => {
            eprintln!("spectnt: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::UndefinedMetric(_) => 1,
                _ => 3,
            })
        }
    }
}

fn load_dataset(path: &Path) -> Result<Dataset, Error> {
    Dataset::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read dataset {}: {io}", path.display())),
        other => other,
    })
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let file = match &a.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("cannot read {}: {io}", p.display())),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    let rc = file.merge(a.overrides.into_config());
    let cfg = rc.model()?;
    let tc = rc.train()?;
    let train_path = rc.train_data.as_deref().ok_or_else(|| Error::Config("no training data (train_data)".into()))?;
    let train_set = load_dataset(train_path)?;
    let val_set = rc.val_data.as_deref().map(load_dataset).transpose()?;

    std::fs::create_dir_all(&a.out)?;
    write_atomic(&a.out.join("run.json"), to_json6(&rc)?.as_bytes())?;
    write_atomic(&a.out.join("model.json"), to_json6(&cfg)?.as_bytes())?;

    let (model, mut store) = SpecTnt::init::<f32>(&cfg, tc.seed)?;
    eprintln!(
        "{} {} model, {} parameters, {} training clips",
        rc.task()?,
        cfg.variant,
        store.param_count(),
        train_set.len()
    );
    let opts = TrainOptions::from(&tc);
    let out = train(&model, &mut store, &train_set, val_set.as_ref(), &opts, |r| {
        if let Some(score) = r.val_score {
            eprintln!("step {:>6}  loss {}  val {}", r.step, fmt6(r.loss), fmt6(score));
        }
    })?;
    write_history(a.out.join("history.csv"), &out.history)?;
    save_checkpoint(a.out.join("best.ckpt"), &cfg, &out.best)?;
    save_checkpoint(a.out.join("last.ckpt"), &cfg, &store)?;
    if let Some(why) = out.diverged {
        return Err(Error::NonFinite(format!("training stopped: {why}; best.ckpt holds step {}", out.best_step)).into());
    }
    if let Some(report) = &out.best_report {
        write_atomic(&a.out.join("metrics.json"), to_json6(report)?.as_bytes())?;
        println!("{}", to_json6(report)?);
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let (model, store) = load_checkpoint::<f32>(&a.checkpoint)?;
    let data = load_dataset(&a.data)?;
    let report = evaluate(&model, &store, &data, a.batch_size)?;
    println!("{}", to_json6(&report)?);
    Ok(())
}

fn infer_task(o_d: OutputSpec) -> Task {
    match o_d {
        OutputSpec::Clip(_) => Task::Tagging,
        OutputSpec::Frame(25) => Task::Chord,
        OutputSpec::Frame(_) => Task::Melody,
    }
}

/// Splits `[T_total, F, K]` features into consecutive model-sized clips.
fn windows(x: &Tensor<f32>, n_frames: usize) -> Result<Tensor<f32>, Error> {
    let s = x.shape();
    let clips = s[0] / n_frames;
    if clips == 0 {
        return Err(Error::Contract(format!("input has {} frames, the model needs {n_frames}", s[0])));
    }
    let row = s[1] * s[2];
    Tensor::new(&[clips, n_frames, s[1], s[2]], x.data()[..clips * n_frames * row].to_vec())
}

fn cmd_predict(a: PredictArgs) -> CliResult {
    let (model, store) = load_checkpoint::<f32>(&a.checkpoint)?;
    let cfg = &model.cfg;
    let task = a.task.unwrap_or_else(|| infer_task(cfg.o_d));
    let mut grid = PitchGrid {
        base_midi: a.pitch_base_midi,
        step: a.pitch_step,
    };
    let mut frame_seconds = match task {
        Task::Tagging => 512.0 / 22050.0,
        Task::Melody => 320.0 / 16000.0,
        Task::Chord => 0.1,
    };
    let ext = a.input.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let input = match ext.as_str() {
        "json" => {
            let d = load_dataset(&a.input)?;
            grid = d.pitch_grid.unwrap_or(grid);
            frame_seconds = d.frame_seconds;
            let all: Vec<usize> = (0..d.len()).collect();
            Tensor::new(&[d.len(), d.n_frames, d.n_freq, d.channels], d.stack(&all))?
        }
        "wav" => windows(&task_spectrogram(task, &load_wav(&a.input)?)?, cfg.n_frames)?,
        _ => {
            let t = read_tensor::<f32>(&a.input)?;
            match t.ndim() {
                3 => windows(&t, cfg.n_frames)?,
                4 => t,
                n => return Err(Error::Contract(format!("tensor input must be 3-D or 4-D, found {n}-D")).into()),
            }
        }
    };
    let want = model.input_shape(input.shape()[0]);
    if input.shape() != want {
        return Err(Error::Config(format!("input is {:?}, the model expects {want:?}", input.shape())).into());
    }
    let y = predict_batched(&model, &store, &input)?;
    let csv = prediction_csv(task, cfg.o_d, cfg.p_t, &y, grid, frame_seconds);
    match &a.out {
        Some(p) => write_atomic(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn predict_batched(model: &SpecTnt, store: &ParamStore<f32>, x: &Tensor<f32>) -> Result<Tensor<f32>, Error> {
    let clips = x.shape()[0];
    let per: usize = x.shape()[1..].iter().product();
    let mut data = Vec::new();
    let mut shape = Vec::new();
    for start in (0..clips).step_by(16) {
        let end = (start + 16).min(clips);
        let mut s = x.shape().to_vec();
        s[0] = end - start;
        let chunk = Tensor::new(&s, x.data()[start * per..end * per].to_vec())?;
        let y = model.predict(store, &chunk)?;
        shape = y.shape().to_vec();
        data.extend_from_slice(y.data());
    }
    shape[0] = clips;
    Tensor::new(&shape, data)
}

fn prediction_csv(task: Task, o_d: OutputSpec, p_t: usize, y: &Tensor<f32>, grid: PitchGrid, frame_seconds: f64) -> String {
    let classes = o_d.classes();
    let mut s = String::new();
    match o_d {
        OutputSpec::Clip(_) => {
            s.push_str("clip");
            (0..classes).for_each(|c| {
                let _ = write!(s, ",tag{c}");
            });
            s.push('\n');
            for (i, row) in y.data().chunks_exact(classes).enumerate() {
                let _ = write!(s, "{i}");
                row.iter().for_each(|p| {
                    let _ = write!(s, ",{}", fmt6(*p as f64));
                });
                s.push('\n');
            }
        }
        OutputSpec::Frame(_) => {
            let t_hat = y.shape()[1];
            let step = frame_seconds * p_t as f64;
            s.push_str(match task {
                Task::Melody => "clip,frame,time,class,f0_hz,prob\n",
                _ => "clip,frame,time,class,label,prob\n",
            });
            for (r, row) in y.data().chunks_exact(classes).enumerate() {
                let (clip, frame) = (r / t_hat, r % t_hat);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                let time = (clip * t_hat + frame) as f64 * step;
                let tag = match task {
                    Task::Melody => fmt6(grid.f0(best)),
                    _ => chord_label(best),
                };
                let _ = writeln!(s, "{clip},{frame},{},{best},{tag},{}", fmt6(time), fmt6(row[best] as f64));
            }
        }
    }
    s
}

#[derive(Serialize)]
struct GradcheckRow {
    variant: Variant,
    output: &'static str,
    objective: &'static str,
    max_rel_error: f64,
    worst_param: String,
    pass: bool,
}

fn cmd_gradcheck(a: GradcheckArgs) -> CliResult {
    let opts = GradCheckOptions {
        eps: a.eps,
        tolerance: a.tolerance,
        max_checks_per_param: None,
    };
    let start = std::time::Instant::now();
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        for (o_d, output) in [(OutputSpec::Clip(3), "clip"), (OutputSpec::Frame(3), "frame")] {
            for (objective, name) in [(CheckObjective::WeightedOutputs, "outputs"), (CheckObjective::TaskLoss, "loss")] {
                let r: GradCheckReport = check_model(&micro_config(variant, o_d), objective, a.seed, &opts)?;
                let worst = r.worst().map(|w| w.name.clone()).unwrap_or_default();
                println!(
                    "{:<5} {:<6} {:<8} max rel err {:<12} {:<32} {}",
                    variant.name(),
                    output,
                    name,
                    fmt6(r.max_rel_error),
                    worst,
                    if r.pass { "ok" } else { "FAIL" }
                );
                rows.push(GradcheckRow {
                    variant,
                    output,
                    objective: name,
                    max_rel_error: r.max_rel_error,
                    worst_param: worst,
                    pass: r.pass,
                });
            }
        }
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    println!("{} checks, {failed} failed, {}s", rows.len(), fmt6(start.elapsed().as_secs_f64()));
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} gradient checks above tolerance {}", a.tolerance)));
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> CliResult {
    let (train_set, val_set, test_set) = match &a.data {
        Some(dir) => (
            load_dataset(&dir.join("train.json"))?,
            load_dataset(&dir.join("val.json"))?,
            load_dataset(&dir.join("test.json"))?,
        ),
        None => {
            let s = split_dataset(&SynthSpec {
                seed: a.seed,
                ..SynthSpec::desk(a.task)
            })?;
            (s.train, s.val, s.test)
        }
    };
    let base = RunConfig {
        task: Some(a.task),
        preset: Some(Preset::Desk),
        ..Default::default()
    }
    .model()?;
    let lr = a.lr.unwrap_or(spectnt::io::default_lr(a.task));
    let target = a.target;
    let opts = || TrainOptions {
        eval_every: a.eval_every,
        weight_decay: 0.01,
        stop_when: target.map(|t| Box::new(move |r: &spectnt::train::EvalReport| r.score() >= t) as Box<_>),
        ..TrainOptions::new(a.steps, a.batch_size, lr, a.seed)
    };
    let rows = run_ablation(&base, &Variant::ALL, &train_set, &val_set, &test_set, opts, |v, r| {
        if let Some(score) = r.val_score {
            eprintln!("{:<4} step {:>6}  loss {}  val {}", v.name(), r.step, fmt6(r.loss), fmt6(score));
        }
    })?;
    print!("{}", ablation_table(&rows));
    if let Some(p) = &a.out {
        write_atomic(p, to_json6(&rows)?.as_bytes())?;
    }
    Ok(())
}

fn cmd_gen_data(a: GenDataArgs) -> CliResult {
    let base = SynthSpec::desk(a.task);
    let spec = SynthSpec {
        seed: a.seed,
        noise: a.noise.unwrap_or(base.noise),
        train: a.train.unwrap_or(base.train),
        val: a.val.unwrap_or(base.val),
        test: a.test.unwrap_or(base.test),
        ..base
    };
    let splits = split_dataset(&spec)?;
    std::fs::create_dir_all(&a.out)?;
    for (name, d) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        d.save(a.out.join(format!("{name}.json")))?;
    }
    write_atomic(&a.out.join("spec.json"), to_json6(&spec)?.as_bytes())?;
    println!(
        "{} clips of [{}, {}, 1] in {} ({} / {} / {})",
        spec.train + spec.val + spec.test,
        spec.n_frames,
        spec.n_freq,
        a.out.display(),
        spec.train,
        spec.val,
        spec.test
    );
    Ok(())
}
