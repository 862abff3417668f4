mod dataset;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, Parser, Subcommand};
use log::info;
use num_complex::Complex;
use radpose::cfar::{ca_cfar_detect, detections_to_points, CfarConfig};
use radpose::container::Container;
use radpose::decode::{decode, DecodeConfig};
use radpose::dsp::{doppler_fft, process_frame, range_fft, Detector, ProcessOptions, RadarTensor4D, WindowKind};
use radpose::metrics::{report, Sequence};
use radpose::net::{focal_loss_grad, train_micro, HeadOutput, LossConfig, Network, NetworkConfig, TrainOptions};
use radpose::oracle::{focal_loss_scalar, max_relative_error, naive_dft};
use radpose::pose::{dist, PoseSet};
use radpose::scene::{skeleton_to_scatterers, template_person, JointReflectivity, RadarConfig, Scene};
use radpose::sim::{synthesize_frame, AdcCube};
use radpose::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dataset::{frame_path, frames_with, is_dataset, Manifest};

/// FMCW radar to 3D pose pipeline.
///
/// Commands that take `--in` accept either a single file or a sequence
/// directory holding `frames/NNNNNN.*`.
#[derive(Parser, Debug)]
#[command(name = "radpose", version)]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize ADC cubes for a scene into a sequence directory.
    Simulate(SimulateArgs),
    /// ADC cube to 4D radar tensor.
    Process(ProcessArgs),
    /// CA-CFAR point cloud from an ADC cube.
    Cfar(CfarArgs),
    /// Overfit the pose network on a small sequence.
    TrainMicro(TrainArgs),
    /// Network head outputs for radar tensors.
    Infer(InferArgs),
    /// Poses from head outputs.
    Decode(DecodeArgs),
    /// Per-action error report of predicted against ground-truth poses.
    Eval(EvalArgs),
    /// Compare fast transforms and losses with brute-force oracles.
    Oracle(OracleArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Radar config TOML (defaults to the built-in sensor).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene TOML with scatterers.
    #[arg(long, conflicts_with = "persons")]
    scene: Option<PathBuf>,
    /// Place this many random standing persons instead of a scene file.
    #[arg(long)]
    persons: Option<usize>,
    /// Noise standard deviation per ADC sample for `--persons`.
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, default_value = "unlabeled")]
    action: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ProcessArgs {
    /// Radar config TOML (defaults to the sequence's config.toml).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "in")]
    input: PathBuf,
    /// Output file, or directory in sequence mode (defaults to the input).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "hann", value_parser = parse_window)]
    window: WindowKind,
    /// Store |X|^2 instead of |X|.
    #[arg(long)]
    power: bool,
}

#[derive(Args, Debug)]
struct CfarArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "none", value_parser = parse_window)]
    window: WindowKind,
    #[arg(long, default_value_t = CfarConfig::default().pfa)]
    pfa: f64,
    #[arg(long, default_value_t = CfarConfig::default().guard_cells)]
    guard: usize,
    #[arg(long, default_value_t = CfarConfig::default().train_cells)]
    train: usize,
    #[arg(long, default_value_t = 0)]
    antenna: usize,
    /// Report every cell over threshold rather than one per peak.
    #[arg(long)]
    no_grouping: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Network config TOML (defaults to the micro network).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sequence directory with `.tensor` and `.pose` frames.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = TrainOptions::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainOptions::default().lr)]
    lr: f64,
    /// Parameter file to write.
    #[arg(long)]
    out: PathBuf,
    /// Write `epoch,loss` rows here.
    #[arg(long)]
    losses: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Pose file, or prediction directory in sequence mode.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DecodeConfig::default().k)]
    k: usize,
    #[arg(long, default_value_t = DecodeConfig::default().score_threshold)]
    threshold: f64,
    /// Metres.
    #[arg(long, default_value_t = DecodeConfig::default().nms_radius)]
    nms_radius: f64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Ground-truth sequence directories.
    #[arg(long, required = true, num_args = 1..)]
    gt: Vec<PathBuf>,
    /// Prediction directories, one per `--gt`.
    #[arg(long, required = true, num_args = 1..)]
    pred: Vec<PathBuf>,
    /// Pelvis matching distance, metres.
    #[arg(long, default_value_t = 0.5)]
    max_dist: f64,
    /// Text report path (printed to stdout either way).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// Random inputs per stage.
    #[arg(long, default_value_t = 20)]
    cases: usize,
}

fn parse_window(s: &str) -> std::result::Result<WindowKind, String> {
    WindowKind::parse(s).ok_or_else(|| format!("unknown window `{s}` (hann or none)"))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

fn load_radar(path: Option<&Path>, dir: Option<&Path>) -> Result<RadarConfig> {
    let path = path.map(Path::to_path_buf).or_else(|| {
        dir.map(|d| d.join(dataset::CONFIG)).filter(|p| p.exists())
    });
    match path {
        Some(p) => RadarConfig::from_toml(&read_text(&p)?),
        None => Ok(RadarConfig::default()),
    }
}

/// Input/output file pairs for a single-file or sequence-mode command.
fn plan(input: &Path, out: Option<&Path>, in_ext: &str, out_ext: &str) -> Result<Vec<(usize, PathBuf, PathBuf)>> {
    if is_dataset(input) {
        let out_dir = out.unwrap_or(input);
        dataset::copy_metadata(input, out_dir)?;
        Ok(frames_with(input, in_ext)?
            .into_iter()
            .map(|i| (i, frame_path(input, i, in_ext), frame_path(out_dir, i, out_ext)))
            .collect())
    } else {
        let out = out.map(Path::to_path_buf).unwrap_or_else(|| input.with_extension(out_ext));
        Ok(vec![(0, input.to_path_buf(), out)])
    }
}

fn random_persons(n: usize, cfg: &RadarConfig, rng: &mut ChaCha8Rng) -> Result<PoseSet> {
    let g = cfg.grid;
    let (lo, hi) = (g.origin, g.max_corner());
    // room for a 1.35 m skeleton: ankles 0.72 m below the pelvis, head 0.62 above
    let bounds = [
        (lo[0] + 0.5, hi[0] - 0.5),
        (lo[1] + 1.0, hi[1] - 1.0),
        (lo[2] + 0.8, (hi[2] - 0.7).max(lo[2] + 0.8)),
    ];
    if bounds.iter().any(|(a, b)| a > b) {
        return Err(Error::Validation("detection volume too small for a standing person".into()));
    }
    let mut persons = Vec::with_capacity(n);
    let mut tries = 0;
    while persons.len() < n {
        tries += 1;
        if tries > 10_000 {
            return Err(Error::Validation(format!("cannot place {n} persons 1 m apart")));
        }
        let pelvis = std::array::from_fn(|a| {
            let (x, y) = bounds[a];
            if x < y {
                rng.gen_range(x..y)
            } else {
                x
            }
        });
        let jitter = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-0.03..0.03)));
        let p = template_person(pelvis, rng.gen_range(0.0..std::f64::consts::TAU), &jitter);
        if persons.iter().all(|q: &radpose::pose::Person| dist(q.pelvis(), p.pelvis()) >= 1.0) {
            persons.push(p);
        }
    }
    Ok(PoseSet::new(persons))
}

fn simulate(a: &SimulateArgs, seed: u64) -> Result<()> {
    let cfg = load_radar(a.config.as_deref(), None)?;
    let mut scene = match (&a.scene, a.persons) {
        (Some(p), None) => Scene::from_toml(&read_text(p)?)?,
        (None, Some(n)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let poses = random_persons(n, &cfg, &mut rng)?;
            let mut s = skeleton_to_scatterers(&poses, &JointReflectivity::default(), &cfg.grid)?;
            s.noise_stddev = a.noise;
            s.duration_frames = a.frames.unwrap_or(1);
            s
        }
        _ => return Err(Error::Validation("give exactly one of --scene or --persons".into())),
    };
    scene.validate(&cfg.grid)?;
    let frames = a.frames.unwrap_or(scene.duration_frames);
    if frames > scene.duration_frames {
        scene.duration_frames = frames;
    }
    let static_scene = scene.scatterers.iter().all(|s| s.velocity == [0.0; 3]);
    dataset::create(&a.out)?;
    let canonical = cfg.to_toml();
    fs::write(a.out.join(dataset::CONFIG), &canonical)?;
    for i in 0..frames {
        let cube: AdcCube<f32> = synthesize_frame(&scene, &cfg, i, seed)?;
        cube.to_container().save(frame_path(&a.out, i, "adc"))?;
        let truth = scene.poses.get(i).or(if static_scene { scene.poses.first() } else { None });
        if let Some(p) = truth {
            dataset::write_pose(&frame_path(&a.out, i, "pose"), i, p)?;
        }
        info!("frame {i} written");
    }
    Manifest {
        format_version: 1,
        action: a.action.clone(),
        seed,
        config_hash: dataset::config_hash(&canonical),
        frames,
    }
    .save(&a.out)?;
    println!("{frames} frames in {}", a.out.display());
    Ok(())
}

fn check_hash(dir: &Path, cfg: &RadarConfig) {
    if let Ok(m) = Manifest::load(dir) {
        if m.config_hash != dataset::config_hash(&cfg.to_toml()) {
            log::warn!("radar config differs from the one {} was simulated with", dir.display());
        }
    }
}

fn process(a: &ProcessArgs) -> Result<()> {
    let dir = dataset::root_of(&a.input);
    let cfg = load_radar(a.config.as_deref(), dir)?;
    if let Some(d) = dir {
        check_hash(d, &cfg);
    }
    let options = ProcessOptions {
        window: a.window,
        detector: if a.power { Detector::Power } else { Detector::Magnitude },
    };
    let jobs = plan(&a.input, a.out.as_deref(), "adc", "tensor")?;
    for (_, src, dst) in &jobs {
        let cube = AdcCube::<f32>::from_container(&Container::load(src)?)?;
        let t = process_frame(&cube, &cfg, &cfg.grid, options)?;
        if !t.data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("{}: non-finite tensor", src.display())));
        }
        t.to_container().save(dst)?;
        info!("{} -> {}", src.display(), dst.display());
    }
    println!("{} tensors written", jobs.len());
    Ok(())
}

fn cfar(a: &CfarArgs) -> Result<()> {
    let dir = dataset::root_of(&a.input);
    let cfg = load_radar(a.config.as_deref(), dir)?;
    let c = CfarConfig {
        guard_cells: a.guard,
        train_cells: a.train,
        pfa: a.pfa,
        antenna: a.antenna,
        peak_grouping: !a.no_grouping,
    };
    let jobs = plan(&a.input, a.out.as_deref(), "adc", "points")?;
    for (i, src, dst) in &jobs {
        let cube = AdcCube::<f32>::from_container(&Container::load(src)?)?;
        cube.validate(&cfg)?;
        let rd = doppler_fft(&range_fft(&cube, a.window)?, &cfg, a.window)?;
        let dets = ca_cfar_detect(&rd, &c)?;
        let cloud = detections_to_points(&dets, &rd, &cfg, *i)?;
        fs::write(dst, cloud.to_text())?;
        println!("{}: {} detections, {} points", src.display(), dets.len(), cloud.points.len());
    }
    Ok(())
}

fn train(a: &TrainArgs, seed: u64) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => NetworkConfig::from_toml(&read_text(p)?)?,
        None => NetworkConfig::micro(),
    };
    if !is_dataset(&a.data) {
        return Err(Error::Validation(format!("{} is not a sequence directory", a.data.display())));
    }
    let mut frames = Vec::new();
    for i in frames_with(&a.data, "tensor")? {
        let t = RadarTensor4D::<f32>::from_container(&Container::load(frame_path(&a.data, i, "tensor"))?)?;
        let p = dataset::read_pose(&frame_path(&a.data, i, "pose"))?;
        frames.push((t, p));
    }
    let refs: Vec<_> = frames.iter().map(|(t, p)| (t, p)).collect();
    let opts = TrainOptions {
        epochs: a.epochs,
        lr: a.lr,
        seed,
        loss: LossConfig::default(),
    };
    let r = train_micro(&refs, &cfg, &opts)?;
    r.network.to_container()?.save(&a.out)?;
    if let Some(p) = &a.losses {
        let mut s = String::from("epoch,loss\n");
        for (e, l) in r.losses.iter().enumerate() {
            s += &format!("{e},{l:.9}\n");
        }
        s += &format!("{},{:.9}\n", r.losses.len(), r.final_loss);
        fs::write(p, s)?;
    }
    println!(
        "{} frames, {} epochs, {} parameters, final loss {:.6}",
        frames.len(),
        a.epochs,
        r.network.params.count(),
        r.final_loss
    );
    Ok(())
}

fn infer(a: &InferArgs) -> Result<()> {
    let net = Network::<f32>::from_container(&Container::load(&a.params)?)?;
    let jobs = plan(&a.input, a.out.as_deref(), "tensor", "head")?;
    for (_, src, dst) in &jobs {
        let t = RadarTensor4D::<f32>::from_container(&Container::load(src)?)?;
        let head = net.infer(&[&t])?.remove(0);
        if !head.keypoint_offsets.iter().chain(&head.center_confidence).all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("{}: non-finite head output", src.display())));
        }
        head.to_container(&net.head_grid(&t.grid)).save(dst)?;
    }
    println!("{} head outputs written", jobs.len());
    Ok(())
}

fn decode_cmd(a: &DecodeArgs) -> Result<()> {
    let cfg = DecodeConfig {
        k: a.k,
        score_threshold: a.threshold,
        nms_radius: a.nms_radius,
    };
    cfg.validate()?;
    let jobs = if is_dataset(&a.input) {
        dataset::create(&a.out)?;
        if a.input.join(dataset::MANIFEST).exists() && a.input != a.out {
            fs::copy(a.input.join(dataset::MANIFEST), a.out.join(dataset::MANIFEST))?;
        }
        frames_with(&a.input, "head")?
            .into_iter()
            .map(|i| (i, frame_path(&a.input, i, "head"), frame_path(&a.out, i, "pose")))
            .collect()
    } else {
        vec![(0, a.input.clone(), a.out.clone())]
    };
    let mut persons = 0;
    for (i, src, dst) in &jobs {
        let (head, grid) = HeadOutput::from_container(&Container::load(src)?)?;
        let poses = decode(&head, &grid, &cfg)?;
        persons += poses.len();
        dataset::write_pose(dst, *i, &poses)?;
    }
    println!("{} frames, {persons} persons", jobs.len());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    if a.gt.len() != a.pred.len() {
        return Err(Error::Validation("need one --pred directory per --gt directory".into()));
    }
    let mut sequences = Vec::new();
    for (g, p) in a.gt.iter().zip(&a.pred) {
        let action = Manifest::load(g).map(|m| m.action).unwrap_or_else(|_| "unlabeled".into());
        let mut frames = Vec::new();
        for i in frames_with(g, "pose")? {
            let truth = dataset::read_pose(&frame_path(g, i, "pose"))?;
            let pp = frame_path(p, i, "pose");
            let pred = if pp.exists() { dataset::read_pose(&pp)? } else { PoseSet::default() };
            frames.push((pred, truth));
        }
        sequences.push(Sequence { action, frames });
    }
    let r = report(&sequences, a.max_dist)?;
    let text = r.to_text();
    print!("{text}");
    if let Some(p) = &a.out {
        fs::write(p, &text)?;
    }
    if let Some(p) = &a.json {
        fs::write(p, r.to_json()? + "\n")?;
    }
    Ok(())
}

fn oracle(a: &OracleArgs, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = RadarConfig::default().with_tx_offsets(&[[0, 0]], 2);
    cfg.chirps_per_frame = 16;
    cfg.samples_per_chirp = 64;
    cfg.azimuth_bins = 16;
    cfg.elevation_bins = 1;
    let c = |rng: &mut ChaCha8Rng| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let (mut range_err, mut doppler_err, mut focal_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..a.cases {
        let cube = AdcCube::<f64> {
            data: (0..16 * 2 * 64).map(|_| c(&mut rng)).collect(),
            chirps: 16,
            antennas: 2,
            samples: 64,
            frame_index: 0,
        };
        let prof = range_fft(&cube, WindowKind::None)?;
        for m in 0..16 {
            for ant in 0..2 {
                range_err = range_err.max(max_relative_error(prof.profile(m, ant), &naive_dft(cube.chirp(m, ant))));
            }
        }
        let rd = doppler_fft(&prof, &cfg, WindowKind::None)?;
        for ant in 0..2 {
            for r in 0..64 {
                let col: Vec<_> = (0..16).map(|m| prof.profile(m, ant)[r]).collect();
                let fast: Vec<_> = (0..16).map(|k| rd.get((k + 8) % 16, ant, r)).collect();
                doppler_err = doppler_err.max(max_relative_error(&fast, &naive_dft(&col)));
            }
        }
        let y: Vec<f64> = (0..27).map(|i| if i == 13 { 1.0 } else { rng.gen_range(0.0..0.99) }).collect();
        let p: Vec<f64> = (0..27).map(|_| rng.gen_range(0.0..1.0)).collect();
        let fast = focal_loss_grad(&p, &y, 2.0, 4.0)?.0;
        focal_err = focal_err.max((fast - focal_loss_scalar(&p, &y, 2.0, 4.0, 1e-6)).abs());
    }
    println!("{:<12} {:>6} {:>12}", "stage", "cases", "max error");
    println!("{:<12} {:>6} {:>12.3e}", "range fft", a.cases, range_err);
    println!("{:<12} {:>6} {:>12.3e}", "doppler fft", a.cases, doppler_err);
    println!("{:<12} {:>6} {:>12.3e}", "focal loss", a.cases, focal_err);
    if range_err > 1e-6 || doppler_err > 1e-6 || focal_err > 1e-9 {
        return Err(Error::Numerical("fast path disagrees with its oracle".into()));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a, cli.seed),
        Command::Process(a) => process(a),
        Command::Cfar(a) => cfar(a),
        Command::TrainMicro(a) => train(a, cli.seed),
        Command::Infer(a) => infer(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Oracle(a) => oracle(a, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Numerical(_)) { 2 } else { 1 })
        }
    }
}
