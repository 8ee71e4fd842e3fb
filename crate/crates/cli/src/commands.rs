use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pmiris::baseline::segment;
use pmiris::data_io::{
    downsample_image, downsample_mask, generate_synthetic, load_sample, render_overlay, write_synthetic, Sample,
};
use pmiris::eval::{iou, make_splits, mean, CompareReport, EvalReport, ImageRecord, SplitPlan};
use pmiris::segnet::{image_to_tensor, load_checkpoint, save_checkpoint, segment_image, train_with, Model};
use pmiris::{Error, Mask};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{config_error, resolve_model, FileConfig, RunConfig, SynthVariant};
use crate::io::{self, Side};
use crate::{Cli, Command, SplitSelect};

pub fn run(cli: &Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if cli.jobs.is_none() {
        if let Some(n) = file.jobs.filter(|&n| n > 0) {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let jobs = cli.jobs.or(file.jobs);
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    let rc = |name: &str, out: &Path| {
        let mut r = RunConfig::new(name, seed, jobs, out);
        if let Some(c) = &cli.config {
            r = r.input("config", c);
        }
        r
    };

    match &cli.command {
        Command::Synth { n, variant, scale } => {
            let out = out("synth");
            if *n == 0 {
                return Err(config_error("--n must be positive"));
            }
            let mut cfg = match (&file.synth, variant) {
                (Some(_), Some(_)) => return Err(config_error("--variant conflicts with the [synth] table")),
                (Some(c), None) => c.clone(),
                (None, v) => v.unwrap_or(SynthVariant::Default).config(),
            };
            if let Some(f) = scale {
                if !(*f > 0.0) {
                    return Err(config_error("--scale must be positive"));
                }
                cfg = cfg.rescaled(*f);
            }
            cfg.seed = seed;
            let samples = generate_synthetic(&cfg, *n)?;
            let staging = staging_dir(&out);
            write_synthetic(&staging, &samples)?;
            publish_dir(&staging, &out)?;
            let mut r = rc("synth", &out);
            r.synth = Some(cfg);
            r.write_beside(&out, true)?;
            eprintln!("wrote {n} synthetic samples to {}", out.display());
        }

        Command::Split {
            manifest,
            n_splits,
            n_test,
        } => {
            let out = out("splits.json");
            let mut params = file.split.clone().unwrap_or_default();
            params.n_splits = n_splits.unwrap_or(params.n_splits);
            params.n_test = n_test.unwrap_or(params.n_test);
            let m = io::open_manifest(manifest)?;
            let plan = make_splits(&m.subjects(), params.n_splits, params.n_test, seed)?;
            io::write_json(&out, &plan)?;
            let mut r = rc("split", &out).input("manifest", manifest);
            r.split = Some(params);
            r.write_beside(&out, false)?;
            eprintln!("wrote {} splits to {}", plan.splits.len(), out.display());
        }

        Command::Train {
            manifest,
            select,
            epochs,
            batch_size,
            learning_rate,
        } => {
            let out = out("model.ckpt");
            let model_cfg = resolve_model(&file, cli.preset)?;
            let mut tcfg = file.train.clone().unwrap_or_default();
            tcfg.epochs = epochs.unwrap_or(tcfg.epochs);
            tcfg.batch_size = batch_size.unwrap_or(tcfg.batch_size);
            tcfg.learning_rate = learning_rate.unwrap_or(tcfg.learning_rate);
            tcfg.seed = seed;
            let m = io::open_manifest(manifest)?;
            let plan = io::open_plan(select.splits.as_deref())?;
            let records = io::select_records(&m, plan.as_ref(), select.split_index, Side::Train)?;
            let size = model_cfg.input_size;
            let data: Vec<_> = io::load_all(&m, &records)?
                .into_par_iter()
                .map(|(s, mask)| -> pmiris::Result<_> {
                    Ok((image_to_tensor(&downsample_image(&s.image, size)?), downsample_mask(&mask, size)?))
                })
                .collect::<pmiris::Result<Vec<_>>>()?;
            let model = Model::build(&model_cfg, seed)?;
            eprintln!(
                "training {} parameters on {} images for {} epochs",
                model.parameter_count(),
                data.len(),
                tcfg.epochs
            );
            let outcome = train_with(model, &data, &tcfg, |e, loss| eprintln!("epoch {:>3}  loss {loss:.6}", e + 1))?;
            io::with_temp(&out, |tmp| Ok(save_checkpoint(&outcome.model, tmp)?))?;

            #[derive(Serialize)]
            struct History<'a> {
                steps: usize,
                loss: &'a [f32],
            }
            let mut hist = out.file_name().unwrap_or_default().to_os_string();
            hist.push(".loss.json");
            io::write_json(
                &out.with_file_name(hist),
                &History {
                    steps: outcome.steps,
                    loss: &outcome.loss_history,
                },
            )?;
            let mut r = rc("train", &out).input("manifest", manifest);
            if let Some(p) = &select.splits {
                r = r.input("splits", p);
            }
            r.model = Some(model_cfg);
            r.train = Some(tcfg);
            r.write_beside(&out, false)?;
        }

        Command::Predict { model, manifest, select } => {
            let out = out("predictions");
            let net = load_checkpoint(model)?;
            let m = io::open_manifest(manifest)?;
            let plan = io::open_plan(select.splits.as_deref())?;
            let records = io::select_records(&m, plan.as_ref(), select.split_index, Side::Test)?;
            io::create_dir(&out)?;
            records.par_iter().try_for_each(|rec| -> Result<()> {
                let (sample, _) = load_sample(&m, rec)?;
                let mask = segment_image(&net, &sample.image)?;
                io::save_mask(&mask, &out.join(format!("{}.png", sample.id())))
            })?;
            let mut r = rc("predict", &out).input("model", model).input("manifest", manifest);
            if let Some(p) = &select.splits {
                r = r.input("splits", p);
            }
            r.model = Some(net.config.clone());
            r.write_beside(&out, true)?;
            eprintln!("wrote {} masks to {}", records.len(), out.display());
        }

        Command::SegmentBaseline { manifest, select, scale } => {
            let out = out("baseline_masks");
            let mut cfg = file.baseline.clone().unwrap_or_default();
            if let Some(f) = scale {
                if !(*f > 0.0) {
                    return Err(config_error("--scale must be positive"));
                }
                cfg = cfg.scaled(*f);
            }
            cfg.validate()?;
            let m = io::open_manifest(manifest)?;
            let plan = io::open_plan(select.splits.as_deref())?;
            let records = io::select_records(&m, plan.as_ref(), select.split_index, Side::Test)?;
            io::create_dir(&out)?;

            #[derive(Serialize)]
            struct Failure {
                id: String,
                error: String,
            }
            let results: Vec<Result<Option<Failure>>> = records
                .par_iter()
                .map(|rec| {
                    let (sample, _) = load_sample(&m, rec)?;
                    match segment(&sample.image, &cfg) {
                        Ok(mask) => io::save_mask(&mask, &out.join(format!("{}.png", sample.id()))).map(|_| None),
                        Err(e @ (Error::NoBoundaryFound { .. } | Error::OutOfBand { .. })) => Ok(Some(Failure {
                            id: sample.id(),
                            error: e.to_string(),
                        })),
                        Err(e) => Err(e.into()),
                    }
                })
                .collect();
            let failures: Vec<Failure> = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
            io::write_json(&out.join("failures.json"), &failures)?;
            let mut r = rc("segment-baseline", &out).input("manifest", manifest);
            r.baseline = Some(cfg);
            r.write_beside(&out, true)?;
            eprintln!(
                "segmented {} images ({} failures) into {}",
                records.len() - failures.len(),
                failures.len(),
                out.display()
            );
        }

        Command::Eval {
            manifest,
            masks,
            select,
            method,
        } => {
            let out = out("report.json");
            let m = io::open_manifest(manifest)?;
            let plan = io::open_plan(select.splits.as_deref())?;
            let method = method.clone().unwrap_or_else(|| {
                masks.file_name().map_or("method".into(), |n| n.to_string_lossy().into_owned())
            });
            let report = evaluate_masks(&m, masks, plan.as_ref(), select, &method)?;
            io::write_json(&out, &report)?;
            let mut r = rc("eval", &out).input("manifest", manifest).input("masks", masks);
            if let Some(p) = &select.splits {
                r = r.input("splits", p);
            }
            r.write_beside(&out, false)?;
            print!("{}", report.to_text());
        }

        Command::Compare { a, b, table } => {
            let out = out("comparison.json");
            let report = match (a, b, table) {
                (_, _, Some(t)) => compare_table(t)?,
                (Some(a), Some(b), None) => {
                    CompareReport::from_reports(&io::read_json(a)?, &io::read_json(b)?)?
                }
                _ => return Err(config_error("compare needs --a and --b, or --table")),
            };
            io::write_json(&out, &report)?;
            let mut r = rc("compare", &out);
            for (k, p) in [("a", a), ("b", b), ("table", table)] {
                if let Some(p) = p {
                    r = r.input(k, p);
                }
            }
            r.write_beside(&out, false)?;
            print!("{}", report.to_text());
        }

        Command::Overlay { manifest, masks, select } => {
            let out = out("overlays");
            let m = io::open_manifest(manifest)?;
            let plan = io::open_plan(select.splits.as_deref())?;
            let records = io::select_records(&m, plan.as_ref(), select.split_index, Side::Test)?;
            io::create_dir(&out)?;
            let written: Vec<bool> = records
                .par_iter()
                .map(|rec| -> Result<bool> {
                    let (sample, truth) = load_sample(&m, rec)?;
                    let path = io::mask_path(masks, select.split_index, &sample.id());
                    if !path.exists() {
                        return Ok(false);
                    }
                    let pred = Mask::load(&path)?;
                    let (img, _) = render_overlay(&sample.image, &pred, Some(&truth))?;
                    let dst = out.join(format!("{}.png", sample.id()));
                    io::with_temp(&dst, |tmp| {
                        img.save_with_format(tmp, image::ImageFormat::Png)
                            .with_context(|| format!("writing {}", tmp.display()))
                    })?;
                    Ok(true)
                })
                .collect::<Result<_>>()?;
            let n = written.iter().filter(|&&w| w).count();
            let mut r = rc("overlay", &out).input("manifest", manifest).input("masks", masks);
            if let Some(p) = &select.splits {
                r = r.input("splits", p);
            }
            r.write_beside(&out, true)?;
            eprintln!(
                "wrote {n} overlays to {} ({} images had no mask)",
                out.display(),
                records.len() - n
            );
        }
    }
    Ok(())
}

fn score(sample: &Sample, truth: &Mask, path: &Path) -> Result<ImageRecord> {
    let (iou_value, failure) = if path.exists() {
        let pred = Mask::load(path)?;
        (iou(&pred, truth)?, None)
    } else {
        (0.0, Some(format!("missing mask {}", path.display())))
    };
    Ok(ImageRecord {
        id: sample.id(),
        subject_id: sample.subject_id.clone(),
        iou: iou_value,
        failure,
    })
}

/// Per-split IoU of the masks in `dir` against the manifest's ground truth.
/// Without a plan all images form one group.
fn evaluate_masks(
    m: &pmiris::data_io::Manifest,
    dir: &Path,
    plan: Option<&SplitPlan>,
    select: &SplitSelect,
    method: &str,
) -> Result<EvalReport> {
    let Some(plan) = plan else {
        if select.split_index.is_some() {
            return Err(config_error("--split-index needs --splits"));
        }
        let samples = io::load_all(m, &m.records)?;
        let images = samples
            .par_iter()
            .map(|(s, t)| score(s, t, &io::mask_path(dir, None, &s.id())))
            .collect::<Result<Vec<_>>>()?;
        return Ok(EvalReport::build(method, &images, None, None)?);
    };
    let indices: Vec<usize> = match select.split_index {
        Some(k) if k >= plan.splits.len() => {
            return Err(config_error(format!("split index {k} out of range")));
        }
        Some(k) => vec![k],
        None => (0..plan.splits.len()).collect(),
    };
    let mut splits = Vec::new();
    for k in indices {
        let records = io::select_records(m, Some(plan), Some(k), Side::Test)?;
        let samples = io::load_all(m, &records)?;
        let images = samples
            .par_iter()
            .map(|(s, t)| score(s, t, &io::mask_path(dir, Some(k), &s.id())))
            .collect::<Result<Vec<_>>>()?;
        splits.extend(EvalReport::build(method, &images, Some(plan), Some(k))?.splits);
    }
    let means: Vec<f64> = splits.iter().map(|s| s.mean_iou).collect();
    Ok(EvalReport {
        method: method.to_string(),
        mean_iou: mean(&means),
        splits,
    })
}

fn compare_table(path: &Path) -> Result<CompareReport> {
    let bad = |line: usize, message: String| Error::Load {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(0, e.to_string()))?;
    let header = rdr.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if header.len() != 3 {
        return Err(bad(1, "expected header split,<method a>,<method b>".into()).into());
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| bad(line, e.to_string()))?;
        let num = |j: usize| -> Result<f64> {
            row.get(j)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| bad(line, format!("column {} is not a number", j + 1)).into())
        };
        a.push(num(1)?);
        b.push(num(2)?);
    }
    Ok(CompareReport::from_means(&header[1], &a, &header[2], &b)?)
}

fn staging_dir(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    out.with_file_name(name)
}

/// Moves every file under `staging` to the same relative place under `out`,
/// then removes `staging`.
fn publish_dir(staging: &Path, out: &Path) -> Result<()> {
    io::create_dir(out)?;
    let entries = std::fs::read_dir(staging).with_context(|| format!("reading {}", staging.display()))?;
    for entry in entries {
        let entry = entry?;
        let dst = out.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            publish_dir(&entry.path(), &dst)?;
        } else {
            std::fs::rename(entry.path(), &dst).with_context(|| format!("moving into {}", dst.display()))?;
        }
    }
    std::fs::remove_dir(staging).with_context(|| format!("removing {}", staging.display()))?;
    Ok(())
}
