//! Subcommand implementations.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use rawnoise::augment::{self, AugmentConfig, Method};
use rawnoise::calibration::{self, CalibrationConfig, CalibrationInput, MeanEstimate, PatchRegion};
use rawnoise::isp::{self, RgbImage, ToneCurve};
use rawnoise::kernel::{BlurDirection, BlurKernel};
use rawnoise::noise_model::{ModelFile, NoiseModel};
use rawnoise::raw::{self, Burst, GainValue, RawFrame};
use rawnoise::rng::NoiseStream;
use rawnoise::sensor_sim;
use rawnoise::validate::{self, AlignmentData, BenchConfig, BlurMode, ChartSetup, ConversionMethod};
use rawnoise::{Error, Result};

use crate::params::{RegionsFile, SimParams};
use crate::{
    AlignmentArgs, AugmentArgs, AugmentMode, BenchArgs, BlurArgs, BlurModeArg, CalibrateArgs, Command, DevelopArgs,
    DirectionArg, ExperimentArgs, Failure, MeanArg, MethodArg, NormalityArgs, SimKind, SimulateArgs, ValidateCommand,
};

pub struct Context {
    pub seed: u64,
    pub verbose: u8,
}

impl Context {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 {
            eprintln!("rawnoise: {}", msg.as_ref());
        }
    }
}

pub fn run(ctx: &Context, command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Calibrate(a) => calibrate(ctx, a),
        Command::Simulate(a) => simulate(ctx, a),
        Command::Augment(a) => augment_cmd(ctx, a),
        Command::Develop(a) => develop(ctx, a),
        Command::Validate(ValidateCommand::Alignment(a)) => alignment(ctx, a),
        Command::Validate(ValidateCommand::Blur(a)) => blur(ctx, a),
        Command::Validate(ValidateCommand::Normality(a)) => normality(ctx, a),
        Command::Bench(a) => bench(ctx, a),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn summary(value: serde_json::Value) {
    println!("{value}");
}

fn load_model(path: &Path) -> Result<ModelFile> {
    ModelFile::load(path)
}

/// A burst directory, or a single frame as a one-frame list.
fn load_frames(path: &Path) -> Result<Vec<RawFrame>> {
    if path.is_dir() {
        Ok(raw::load_burst(path)?.frames().to_vec())
    } else {
        Ok(vec![raw::load_frame(path)?])
    }
}

fn calibrate(ctx: &Context, a: CalibrateArgs) -> std::result::Result<(), Failure> {
    let mut config: CalibrationConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => CalibrationConfig::default(),
    };
    if let Some(b) = a.normality_buckets {
        config.normality_buckets = b;
    }
    if let Some(m) = a.mean_estimate {
        config.mean_estimate = match m {
            MeanArg::Pixel => MeanEstimate::Pixel,
            MeanArg::RegionPhase => MeanEstimate::RegionPhase,
        };
    }
    let regions = read_json::<RegionsFile>(&a.regions)?.for_bursts(a.bursts.len())?;
    ctx.log(format!("loading {} bursts", a.bursts.len()));
    let bursts = a.bursts.par_iter().map(raw::load_burst).collect::<Result<Vec<Burst>>>()?;
    let inputs: Vec<CalibrationInput> =
        bursts.into_iter().zip(regions).map(|(burst, regions)| CalibrationInput { burst, regions }).collect();
    let report = calibration::calibrate(&inputs, &config, ctx.seed)?;
    report.model_file().save(&a.out)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    summary(json!({ "model": report.model, "clamped": report.clamped }));
    Ok(())
}

fn simulate(ctx: &Context, a: SimulateArgs) -> std::result::Result<(), Failure> {
    let mut p: SimParams = match &a.params {
        Some(path) => read_json(path)?,
        None => SimParams::default(),
    };
    if let Some(n) = a.frames {
        p.n_frames = n;
    }
    if let Some(g) = a.gains {
        p.gains_db = g;
    }
    p.validate()?;
    create_dir(&a.out)?;
    let sensor = p.sensor();
    let base = p.base_scene()?;
    let root = NoiseStream::new(ctx.seed).derive_str("simulate");
    let jobs: Vec<(usize, usize)> = match a.kind {
        SimKind::Burst => (0..p.gains_db.len()).flat_map(|g| (0..p.fractions.len()).map(move |f| (g, f))).collect(),
        SimKind::Blur | SimKind::Scene => (0..p.gains_db.len()).map(|g| (g, 0)).collect(),
    };
    let kernel = p.kernel();
    let entries = jobs
        .par_iter()
        .map(|&(gi, fi)| {
            let gain = GainValue::from_db(p.gains_db[gi]);
            let fraction = p.fractions[fi];
            let scene = base.scaled(sensor.illumination_for(&base, gain, fraction))?;
            let stream = root.derive((gi * p.fractions.len() + fi) as u64);
            let name = match a.kind {
                SimKind::Burst => {
                    let name = format!("burst_g{gi:02}_f{fi:02}");
                    let burst = sensor_sim::capture_burst(&scene, gain, &sensor, p.n_frames, &stream)?;
                    raw::save_burst(&burst, a.out.join(&name))?;
                    name
                }
                SimKind::Scene => {
                    let name = format!("scene_g{gi:02}.raw16");
                    raw::save_frame(&sensor_sim::capture(&scene, gain, &sensor, &stream)?, a.out.join(&name))?;
                    name
                }
                SimKind::Blur => {
                    let name = format!("blur_g{gi:02}.raw16");
                    let f = sensor_sim::capture_motion_blur(&scene, gain, &sensor, &kernel, &stream)?;
                    raw::save_frame(&f, a.out.join(&name))?;
                    name
                }
            };
            ctx.log(format!("wrote {name}"));
            Ok(json!({ "path": name, "gain_db": gain.db, "fraction": fraction }))
        })
        .collect::<Result<Vec<_>>>()?;
    let regions = p.regions();
    write_json(&a.out.join("regions.json"), &regions)?;
    write_json(&a.out.join("manifest.json"), &json!({ "params": p, "outputs": entries }))?;
    summary(json!({ "outputs": entries.len(), "out": a.out }));
    Ok(())
}

fn augment_cmd(ctx: &Context, a: AugmentArgs) -> std::result::Result<(), Failure> {
    let model = load_model(&a.model)?.model()?;
    let mut config: AugmentConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => AugmentConfig::default(),
    };
    if let Some(c) = a.contrast {
        config.contrast = (c, c);
    }
    config.validate()?;
    let frames = load_frames(&a.input)?;
    create_dir(&a.out)?;
    ctx.log(format!("augmenting {} frames", frames.len()));
    let root = NoiseStream::new(ctx.seed).derive_str("augment");
    let method = match a.mode {
        AugmentMode::Ours => Some(Method::Ours),
        AugmentMode::Naive => Some(Method::Naive),
        AugmentMode::WoPrior => Some(Method::WoPrior),
        AugmentMode::Ksigma | AugmentMode::Varmap => None,
    };
    let records = frames
        .par_iter()
        .enumerate()
        .map(|(i, frame)| {
            let name = format!("frame_{i:04}");
            match method {
                Some(method) => {
                    let spec = augment::sample_spec(&config, &mut root.frame(i as u64).rng())?;
                    let out = augment::augment(frame, &model, &spec, method)?;
                    raw::save_frame(&out.frame, a.out.join(format!("{name}.raw16")))?;
                    Ok(json!({ "frame": name, "spec": spec, "stats": out.stats }))
                }
                None => {
                    let values = match a.mode {
                        AugmentMode::Ksigma => augment::ksigma_forward(frame, &model)?,
                        _ => augment::variance_map(frame, &model),
                    };
                    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
                    let path = a.out.join(format!("{name}.f64"));
                    fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
                    Ok(json!({ "frame": name, "width": frame.width(), "height": frame.height() }))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(
        &a.out.join("augment.json"),
        &json!({ "mode": format!("{:?}", a.mode).to_lowercase(), "frames": records }),
    )?;
    summary(json!({ "frames": records.len(), "out": a.out }));
    Ok(())
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| io_err(path, std::io::Error::other(e));
    let mut w = enc.write_header().map_err(to_io)?;
    w.write_image_data(&img.data).map_err(to_io)?;
    w.finish().map_err(to_io)
}

fn develop(ctx: &Context, a: DevelopArgs) -> std::result::Result<(), Failure> {
    let curve: ToneCurve =
        serde_json::from_str(&a.curve).map_err(|e| Failure::Usage(format!("invalid --curve: {e}")))?;
    let ext = a.out.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    if !matches!(ext.as_deref(), Some("ppm" | "png")) {
        return Err(Failure::Usage(format!("output {} must end in .ppm or .png", a.out.display())));
    }
    let frame = raw::load_frame(&a.input)?;
    let img = isp::develop(&frame, &curve)?;
    match ext.as_deref() {
        Some("png") => save_png(&img, &a.out)?,
        _ => img.save_ppm(&a.out)?,
    }
    ctx.log(format!("wrote {}", a.out.display()));
    summary(json!({ "width": img.width, "height": img.height, "out": a.out }));
    Ok(())
}

struct Experiment {
    model: NoiseModel,
    setup: ChartSetup,
    gain: GainValue,
    frames: usize,
    out: PathBuf,
}

fn experiment(c: &ExperimentArgs) -> Result<Experiment> {
    let model = load_model(&c.model)?.model()?;
    let truth = match &c.truth {
        Some(p) => load_model(p)?.model()?,
        None => model,
    };
    let mut setup: ChartSetup = match &c.setup {
        Some(p) => read_json(p)?,
        None => ChartSetup::standard(truth),
    };
    if c.truth.is_some() || c.setup.is_none() {
        setup.sensor.model = truth;
    }
    let frames = c.frames.unwrap_or(setup.n_frames);
    create_dir(&c.out)?;
    Ok(Experiment { model, setup, gain: GainValue::from_db(c.gain_db), frames, out: c.out.clone() })
}

fn write_jobs(ctx: &Context, out: &Path, results: Vec<(String, AlignmentData)>) -> Result<()> {
    let mut index = Vec::with_capacity(results.len());
    for (job, data) in &results {
        write_json(&out.join(format!("{job}.json")), &data.report)?;
        validate::write_pairs_csv(out.join(format!("{job}_pairs.csv")), data)?;
        ctx.log(format!(
            "{job}: slope {:+.2}% intercept {:+.2}%",
            100.0 * data.report.slope_signed_err,
            100.0 * data.report.intercept_signed_err
        ));
        index.push(json!({
            "job": job,
            "slope_rel_err": data.report.slope_rel_err,
            "intercept_rel_err": data.report.intercept_rel_err,
        }));
    }
    write_json(&out.join("index.json"), &index)?;
    summary(json!({ "jobs": index }));
    Ok(())
}

fn alignment(ctx: &Context, a: AlignmentArgs) -> std::result::Result<(), Failure> {
    let e = experiment(&a.common)?;
    let scene = e.setup.scene(e.gain, 1.0)?;
    let regions = e.setup.regions();
    let jobs: Vec<(f64, ConversionMethod)> = a
        .contrast
        .iter()
        .flat_map(|&c| {
            a.methods.iter().map(move |m| {
                let m = match m {
                    MethodArg::Ours => ConversionMethod::Ours,
                    MethodArg::WoPrior => ConversionMethod::WoPrior,
                    MethodArg::None => ConversionMethod::None,
                };
                (c, m)
            })
        })
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(c, m)| {
            let d = validate::alignment_experiment(
                &e.model,
                &e.setup.sensor,
                &scene,
                &regions,
                e.gain,
                c,
                m,
                e.frames,
                ctx.seed,
            )?;
            Ok((format!("alignment_{}_x{c}", m.name()), d))
        })
        .collect::<Result<Vec<_>>>()?;
    write_jobs(ctx, &e.out, results)?;
    Ok(())
}

fn blur(ctx: &Context, a: BlurArgs) -> std::result::Result<(), Failure> {
    let e = experiment(&a.common)?;
    let scene = e.setup.scene(e.gain, 1.0)?;
    let regions = e.setup.regions();
    let direction = match a.direction {
        DirectionArg::Horizontal => BlurDirection::Horizontal,
        DirectionArg::Vertical => BlurDirection::Vertical,
    };
    let jobs: Vec<(u32, BlurMode)> = a
        .distances
        .iter()
        .flat_map(|&d| {
            a.modes.iter().map(move |m| {
                let m = match m {
                    BlurModeArg::NoiseAccounted => BlurMode::NoiseAccounted,
                    BlurModeArg::Naive => BlurMode::Naive,
                };
                (d, m)
            })
        })
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(d, m)| {
            let kernel = BlurKernel::linear(d, direction);
            let data = validate::blur_alignment_experiment(
                &e.model,
                &e.setup.sensor,
                &scene,
                &regions,
                e.gain,
                &kernel,
                m,
                e.frames,
                ctx.seed,
            )?;
            Ok((format!("blur_{}_d{d}", m.name()), data))
        })
        .collect::<Result<Vec<_>>>()?;
    write_jobs(ctx, &e.out, results)?;
    Ok(())
}

fn normality(ctx: &Context, a: NormalityArgs) -> std::result::Result<(), Failure> {
    let (burst, regions): (Burst, Vec<PatchRegion>) = match (&a.burst, &a.model) {
        (Some(dir), _) => {
            let Some(rp) = &a.regions else {
                return Err(Failure::Usage("--burst needs --regions".into()));
            };
            let regions = read_json::<RegionsFile>(rp)?.for_bursts(1)?.remove(0);
            (raw::load_burst(dir)?, regions)
        }
        (None, Some(mp)) => {
            let setup = ChartSetup::standard(load_model(mp)?.model()?);
            let gain = GainValue::from_db(a.gain_db);
            let n = a.frames.unwrap_or(setup.n_frames);
            let stream = NoiseStream::new(ctx.seed).derive_str("normality");
            let burst = sensor_sim::capture_burst(&setup.scene(gain, 1.0)?, gain, &setup.sensor, n, &stream)?;
            (burst, setup.regions())
        }
        (None, None) => return Err(Failure::Usage("validate normality needs --burst or --model".into())),
    };
    create_dir(&a.out)?;
    let table = validate::normality_report(&burst, &regions, a.buckets)?;
    write_json(&a.out.join("normality.json"), &table.report)?;
    write_text(&a.out.join("normality.csv"), &table.to_csv())?;
    ctx.log(format!("tested {} pixels", table.points.len()));
    summary(json!({ "buckets": table.report.buckets.len(), "pixels": table.points.len(), "out": a.out }));
    Ok(())
}

fn bench(ctx: &Context, a: BenchArgs) -> std::result::Result<(), Failure> {
    let mut config: BenchConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => BenchConfig::default(),
    };
    config.width = a.width.unwrap_or(config.width);
    config.height = a.height.unwrap_or(config.height);
    config.repetitions = a.repetitions.unwrap_or(config.repetitions);
    ctx.log(format!("bench {}x{} x{}", config.width, config.height, config.repetitions));
    let report = validate::bench(&config)?;
    match &a.out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?),
    }
    Ok(())
}
