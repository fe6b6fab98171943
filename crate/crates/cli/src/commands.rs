use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use tnet_core::checkpoint::{manifest_of, read_manifest, Checkpoint};
use tnet_core::data::{self, downscaled_glyph_pixels, generate_with, Dataset};
use tnet_core::eval::{evaluate, fit};
use tnet_core::nn::{Graph, Model};
use tnet_core::parallel::{with_workers, Execution};
use tnet_core::profiler::{count_params, profile_traversal};
use tnet_core::runconfig::RunConfig;
use tnet_core::training::Trainer;
use tnet_core::traversal::{traverse, Prediction, TopK, TraverseOptions};
use tnet_core::{Error, Result};

use crate::overlay;
use crate::Common;

fn apply_common(cfg: &mut RunConfig, common: Common) {
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
}

fn load_config(path: &Path, common: Common) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    apply_common(&mut cfg, common);
    cfg.validate()?;
    Ok(cfg)
}

fn execution(cfg: &RunConfig) -> Execution {
    cfg.train_config().execution
}

fn load_data(path: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let data = data::load(path).map_err(|e| match e {
        Error::Io(m) => Error::Io(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let extent = cfg.traversal.image_extent()?;
    if data.spec.image_extent != extent {
        return Err(Error::Config(format!(
            "dataset images are {} px, the configuration expects {extent} px",
            data.spec.image_extent
        )));
    }
    if data.spec.num_classes != cfg.classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, the configuration expects {}",
            data.spec.num_classes, cfg.classes
        )));
    }
    Ok(data)
}

pub fn gen_data(config: &Path, out: &Path, common: Common) -> Result<()> {
    let mut cfg = load_config(config, Common { seed: None, ..common })?;
    if let Some(seed) = common.seed {
        cfg.data.seed = seed;
    }
    with_workers(cfg.workers, || {
        let data = generate_with(&cfg.data, cfg.data_count, execution(&cfg))?;
        let crc = data::save(&data, out)?;
        let r = cfg.data.readability();
        let pixels = downscaled_glyph_pixels(&cfg.data, &data.samples)?;
        println!(
            "samples={} checksum={crc:08x} downscaled_glyph_extent={} max_downscaled_glyph_pixels={pixels} limited={}",
            data.len(),
            r.downscaled_extent,
            r.limited
        );
        Ok(())
    })
}

pub fn train(
    config: &Path,
    data_path: &Path,
    out: &Path,
    steps: Option<usize>,
    resume: Option<&Path>,
    common: Common,
) -> Result<()> {
    let mut cfg = load_config(config, common)?;
    if let Some(s) = steps {
        cfg.steps = s;
    }
    let data = load_data(data_path, &cfg)?;
    fs::create_dir_all(out)?;
    let model = Model::new(cfg.model_spec()?, cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.traversal.clone(), cfg.train_config())?;
    if let Some(path) = resume {
        let ckpt = Checkpoint::load(path, Some(&manifest_of(&trainer.model.store)))?;
        ckpt.restore_trainer(&mut trainer)?;
    }
    let config_text = cfg.serialize();

    with_workers(cfg.workers, || {
        if trainer.step < cfg.steps {
            let file = OpenOptions::new()
                .create(true)
                .append(resume.is_some())
                .write(true)
                .truncate(resume.is_none())
                .open(out.join("metrics.txt"))?;
            let mut metrics = BufWriter::new(file);
            let every = cfg.checkpoint_every;
            fit(&mut trainer, &data, cfg.batch, cfg.steps, |t, m| {
                let line = m.to_record();
                println!("{line}");
                writeln!(metrics, "{line}")?;
                if every > 0 && t.step % every == 0 {
                    Checkpoint::from_trainer(t, config_text.clone()).save(&out.join(format!("checkpoint-{}.bin", t.step)))?;
                }
                Ok(())
            })?;
            metrics.flush()?;
        }
        Checkpoint::from_trainer(&trainer, config_text.clone()).save(&out.join("checkpoint.bin"))?;
        println!("checkpoint={} step={}", out.join("checkpoint.bin").display(), trainer.step);
        Ok(())
    })
}

/// Rebuilds the model a checkpoint belongs to; shape mismatches fail before weights are read.
fn load_model(checkpoint: &Path, config: Option<&Path>, common: Common) -> Result<(RunConfig, Model)> {
    let (_, text) = read_manifest(checkpoint)?;
    let cfg = match config {
        Some(p) => load_config(p, common)?,
        None => {
            let mut cfg = RunConfig::parse(&text)?;
            apply_common(&mut cfg, common);
            cfg.validate()?;
            cfg
        }
    };
    let mut model = Model::new(cfg.model_spec()?, cfg.seed)?;
    let ckpt = Checkpoint::load(checkpoint, Some(&manifest_of(&model.store)))?;
    ckpt.apply_to_store(&mut model.store)?;
    Ok((cfg, model))
}

pub fn eval(checkpoint: &Path, data_path: &Path, locations: &[usize], config: Option<&Path>, common: Common) -> Result<()> {
    let (cfg, model) = load_model(checkpoint, config, common)?;
    let data = load_data(data_path, &cfg)?;
    if data.is_empty() {
        return Err(Error::Config("evaluation dataset is empty".into()));
    }
    let configured = cfg.traversal.locations.last().copied().unwrap_or(0);
    let counts: Vec<usize> = if locations.is_empty() { (0..=configured).collect() } else { locations.to_vec() };
    let k = cfg.traversal.grid_n * cfg.traversal.grid_n;
    if let Some(bad) = counts.iter().find(|&&n| n > k) {
        return Err(Error::Config(format!("cannot attend {bad} of {k} cells")));
    }
    with_workers(cfg.workers, || {
        for &n in &counts {
            let report = evaluate(&model, &cfg.traversal, &data, n, execution(&cfg))?;
            println!("{}", report.to_record());
        }
        Ok(())
    })
}

pub fn profile(config: Option<&Path>, spec: Option<&str>, locations: &[usize], common: Common) -> Result<()> {
    let cfg = match (config, spec) {
        (Some(p), _) => load_config(p, common)?,
        (None, Some(name)) => {
            let mut cfg = RunConfig::preset(name)?;
            apply_common(&mut cfg, common);
            cfg
        }
        (None, None) => return Err(Error::Config("profile needs --config or --spec".into())),
    };
    let model = cfg.model_spec()?;
    cfg.traversal.validate(&model)?;
    let configured = cfg.traversal.locations.last().copied().unwrap_or(0);
    let report = profile_traversal(&model, &cfg.traversal, configured)?;
    print!("{}", report.to_table());
    println!("parameters: {}", count_params(&model)?);
    let counts: Vec<usize> = if locations.is_empty() { (0..=configured).collect() } else { locations.to_vec() };
    for n in counts {
        let r = profile_traversal(&model, &cfg.traversal, n)?;
        println!("locations={n} total={} delta={}", r.total, r.delta);
    }
    Ok(())
}

pub fn visualize(
    checkpoint: &Path,
    data_path: &Path,
    out: &Path,
    count: usize,
    locations: Option<usize>,
    common: Common,
) -> Result<()> {
    let (cfg, model) = load_model(checkpoint, None, common)?;
    let data = load_data(data_path, &cfg)?;
    let traversal = match locations {
        Some(n) => cfg.traversal.with_final_locations(n),
        None => cfg.traversal.clone(),
    };
    traversal.validate(&model.spec)?;
    fs::create_dir_all(out)?;
    for (i, sample) in data.samples.iter().take(count).enumerate() {
        let mut g = Graph::new(&model.store);
        let output = traverse(&model, &traversal, &mut g, &sample.input(), &mut TopK, TraverseOptions::default())?;
        let pred = Prediction::from_output(&g, &output)?;
        let weights = model.weighting.is_some().then_some(pred.weights.as_slice());
        let image = overlay::render(&sample.image, &pred, sample.label, weights);
        let path = out.join(format!("sample_{i:04}.ppm"));
        let mut f = BufWriter::new(File::create(&path)?);
        image.write_ppm(&mut f)?;
        f.flush()?;
        println!(
            "{} label={} predicted={} rects={}",
            path.display(),
            sample.label,
            pred.class,
            pred.attended.len()
        );
    }
    Ok(())
}
