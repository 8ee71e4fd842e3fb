//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion does.

mod common;

use std::time::Instant;

use pmiris::baseline::{path_value, segment, solve_exact, viterbi_refine, BaselineConfig, Circle, EdgeLattice};
use pmiris::data_io::{downsample_image, downsample_mask, generate_synthetic, SynthConfig, SynthSample};
use pmiris::eval::{compare, improvement_pct, iou, make_splits, mean, EvalReport, ImageRecord};
use pmiris::rng::Stream;
use pmiris::segnet::{image_to_tensor, segment_image, train, Model, ModelConfig, TrainConfig};
use pmiris::tensor::Tensor;
use pmiris::Mask;

const OSIRIS: [f64; 10] = [0.7793, 0.6002, 0.7786, 0.7533, 0.8715, 0.6203, 0.4823, 0.8032, 0.8078, 0.8621];
const CNN: [f64; 10] = [0.8587, 0.7657, 0.8681, 0.8427, 0.8853, 0.7986, 0.6794, 0.8700, 0.8564, 0.8822];
const IMPROVEMENT: [f64; 10] = [10.2, 27.6, 11.5, 11.9, 1.6, 28.7, 40.9, 8.3, 6.0, 2.3];
const AVERAGE: (f64, f64, f64) = (0.7358, 0.8303, 12.8);

const DESK_SEED: u64 = 20;
const DESK_EPOCHS: usize = 30;
const DESK_TRAIN: usize = 64;

struct Outcome {
    pass: bool,
    detail: String,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// 160×128 eyes: a quarter of the default geometry, sized so the 32×40
/// network input divides it exactly.
fn desk_synth(base: SynthConfig, seed: u64) -> SynthConfig {
    SynthConfig {
        height: 128,
        seed,
        ..base.rescaled(0.25)
    }
}

fn statistics() -> Outcome {
    let c = compare(&OSIRIS, &CNN).expect("ten rows");
    let rows: Vec<f64> = c.rows.iter().map(|r| round1(r.improvement_pct.unwrap())).collect();
    let rows_ok = rows == IMPROVEMENT;
    let avg = round1(improvement_pct(AVERAGE.0, AVERAGE.1).unwrap());
    let column_avg = round1(c.average.improvement_pct.unwrap());
    Outcome {
        pass: rows_ok && avg == AVERAGE.2,
        detail: format!(
            "split improvements {rows:?}; average of printed means {avg}% (column-mean average of rounded rows {column_avg}%)"
        ),
    }
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let reports = common::gradient_suite(2024, 20);
    let secs = t.elapsed().as_secs_f64();
    let worst = reports.iter().map(|r| r.worst_rel_err).fold(0.0, f64::max);
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.op).collect();
    Outcome {
        pass: failed.is_empty() && reports.iter().all(|r| r.instances >= 20) && secs < 60.0,
        detail: format!(
            "{} ops x 20 instances, worst relative error {worst:.2e}, failed {failed:?}, {secs:.1}s",
            reports.len()
        ),
    }
}

fn brute_iou(a: &Mask, b: &Mask) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn enumerate_paths(lat: &EdgeLattice, lambda: f64) -> Vec<usize> {
    let (na, nr) = (lat.n_angles, lat.n_radii);
    let mut best = (vec![], f64::NEG_INFINITY);
    let mut path = vec![0; na];
    for code in 0..nr.pow(na as u32) {
        let mut c = code;
        for p in path.iter_mut() {
            *p = c % nr;
            c /= nr;
        }
        let v = path_value(lat, &path, lambda, None).unwrap();
        if v > best.1 {
            best = (path.clone(), v);
        }
    }
    best.0
}

fn bilinear(img: &image::GrayImage, x: f64, y: f64) -> f64 {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let fx = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let p = |x: usize, y: usize| img.get_pixel(x as u32, y as u32)[0] as f64;
    (p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx) * (1.0 - ty) + (p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx) * ty
}

fn oracles() -> Outcome {
    let mut s = Stream::new(31);
    let mut iou_mismatch = 0;
    for _ in 0..1000 {
        let density = s.unit();
        let a = Mask::from_fn(8, 8, |_, _| s.unit() < density);
        let b = Mask::from_fn(8, 8, |_, _| s.unit() < density);
        if iou(&a, &b).unwrap() != brute_iou(&a, &b) {
            iou_mismatch += 1;
        }
    }

    // solver on random lattices
    let mut dp_mismatch = 0;
    let lattices = 100;
    for i in 0..lattices {
        let lat = EdgeLattice::new(8, 4, (0..32).map(|_| s.range(0.0, 10.0)).collect());
        let lambda = [0.0, 0.7, 2.0, 5.0][i % 4];
        if solve_exact(&lat, lambda, None).unwrap().radii != enumerate_paths(&lat, lambda) {
            dp_mismatch += 1;
        }
    }

    // full refinement on random images: lattice rebuilt here from the definition
    let mut refine_mismatch = 0;
    let images = 30;
    let cfg = BaselineConfig {
        n_angles: 8,
        n_radii: 4,
        ..Default::default()
    };
    for _ in 0..images {
        let img = image::GrayImage::from_fn(48, 48, |_, _| image::Luma([s.range_inclusive(0, 200) as u8]));
        let circle = Circle {
            cx: s.range(18.0, 30.0),
            cy: s.range(18.0, 30.0),
            r: s.range(6.0, 14.0),
        };
        let contour = viterbi_refine(&img, &circle, &cfg).unwrap();
        let (lo, hi) = (circle.r * (1.0 - cfg.band_fraction), circle.r * (1.0 + cfg.band_fraction));
        let step = (hi - lo) / 3.0;
        let mut scores = Vec::new();
        for a in 0..8 {
            let t = std::f64::consts::TAU * a as f64 / 8.0;
            for j in 0..4 {
                let r = lo + j as f64 * step;
                let at = |rr: f64| bilinear(&img, circle.cx + rr * t.cos(), circle.cy + rr * t.sin());
                scores.push((at(r + 0.5) - at(r - 0.5)).abs());
            }
        }
        let best = enumerate_paths(&EdgeLattice::new(8, 4, scores), cfg.smoothness);
        let expected: Vec<f64> = best.iter().map(|&j| lo + j as f64 * step).collect();
        if contour.radii.iter().zip(&expected).any(|(a, b)| (a - b).abs() > 1e-9) {
            refine_mismatch += 1;
        }
    }
    Outcome {
        pass: iou_mismatch == 0 && dp_mismatch == 0 && refine_mismatch == 0,
        detail: format!(
            "iou mismatches {iou_mismatch}/1000; solver mismatches {dp_mismatch}/{lattices} lattices; \
             viterbi_refine mismatches {refine_mismatch}/{images} images (8 angles x 4 radii)"
        ),
    }
}

struct Desk {
    train: Vec<(Tensor, Mask)>,
    test: Vec<SynthSample>,
}

fn desk_data() -> Desk {
    let cfg = desk_synth(SynthConfig::default(), DESK_SEED);
    let samples = generate_synthetic(&cfg, 17 * 5).unwrap();
    let subjects: Vec<String> = samples.iter().map(|s| s.sample.subject_id.clone()).collect();
    let plan = make_splits(&subjects, 1, 3, DESK_SEED).unwrap();
    let held_out = &plan.splits[0].test;
    let size = ModelConfig::mini().input_size;
    let (test, train): (Vec<SynthSample>, Vec<SynthSample>) =
        samples.into_iter().partition(|s| held_out.contains(&s.sample.subject_id));
    let train = train
        .iter()
        .take(DESK_TRAIN)
        .map(|s| {
            (
                image_to_tensor(&downsample_image(&s.sample.image, size).unwrap()),
                downsample_mask(&s.mask, size).unwrap(),
            )
        })
        .collect();
    Desk { train, test }
}

fn mean_model_iou(model: &Model, test: &[SynthSample]) -> f64 {
    let scores: Vec<f64> = test
        .iter()
        .map(|s| segment_image(model, &s.sample.image).map_or(0.0, |m| iou(&m, &s.mask).unwrap()))
        .collect();
    mean(&scores)
}

fn desk_train_config() -> TrainConfig {
    TrainConfig {
        epochs: DESK_EPOCHS,
        seed: DESK_SEED,
        ..Default::default()
    }
}

fn pipeline(desk: &Desk) -> (Outcome, Model) {
    let t = Instant::now();
    let untrained = Model::build(&ModelConfig::mini(), DESK_SEED).unwrap();
    let before = mean_model_iou(&untrained, &desk.test);
    let all_iris = mean(
        &desk
            .test
            .iter()
            .map(|s| iou(&Mask::filled(s.mask.width(), s.mask.height(), true), &s.mask).unwrap())
            .collect::<Vec<_>>(),
    );
    let out = train(untrained, &desk.train, &desk_train_config()).unwrap();
    let after = mean_model_iou(&out.model, &desk.test);
    let (first, last) = (out.loss_history[0], *out.loss_history.last().unwrap());
    let secs = t.elapsed().as_secs_f64();
    let pass = desk.train.len() == DESK_TRAIN && after >= before + 0.2 && after > all_iris && last < first && secs < 600.0;
    (
        Outcome {
            pass,
            detail: format!(
                "{} train / {} held-out images; held-out IoU trained {after:.4} vs untrained {before:.4} \
                 vs all-iris {all_iris:.4}; loss {first:.4} -> {last:.4}; {secs:.1}s",
                desk.train.len(),
                desk.test.len()
            ),
        },
        out.model,
    )
}

fn baseline_fidelity() -> Outcome {
    let cfg = SynthConfig {
        seed: 55,
        ..SynthConfig::clean()
    };
    let samples = generate_synthetic(&cfg, 30).unwrap();
    let base = BaselineConfig::default();
    let mut worst: f64 = 0.0;
    let mut misses = 0;
    let mut scores = Vec::new();
    for s in &samples {
        let g = &s.geometry;
        let pupil = pmiris::baseline::find_pupil_circle(&s.sample.image, &base);
        let limbus = pupil
            .as_ref()
            .ok()
            .map(|p| pmiris::baseline::find_iris_circle(&s.sample.image, p, &base));
        match (pupil, limbus) {
            (Ok(p), Some(Ok(l))) => {
                let errs = [
                    (p.cx - g.pupil.cx).abs(),
                    (p.cy - g.pupil.cy).abs(),
                    (p.r - g.pupil.semi_major).abs(),
                    (l.cx - g.limbus_cx).abs(),
                    (l.cy - g.limbus_cy).abs(),
                    (l.r - g.limbus_r).abs(),
                ];
                let e = errs.iter().copied().fold(0.0, f64::max);
                worst = worst.max(e);
                if e > 2.0 {
                    misses += 1;
                }
            }
            _ => misses += 1,
        }
        scores.push(segment(&s.sample.image, &base).map_or(0.0, |m| iou(&m, &s.mask).unwrap()));
    }
    let m = mean(&scores);
    Outcome {
        pass: misses == 0 && m >= 0.9,
        detail: format!(
            "30 clean 640x480 eyes: {misses} circles off by > 2 px (worst {worst:.2} px); mean segment IoU {m:.4}"
        ),
    }
}

fn protocol(desk: &Desk) -> Outcome {
    let subjects: Vec<String> = (0..17).map(|i| format!("S{i:02}")).collect();
    let mut bad_plans = 0;
    for seed in 0..100 {
        let plan = make_splits(&subjects, 10, 3, seed).unwrap();
        let ok = plan.is_subject_disjoint()
            && plan.splits.iter().all(|s| {
                let mut all: Vec<&String> = s.train.iter().chain(&s.test).collect();
                all.sort();
                all.dedup();
                s.train.len() == 14 && s.test.len() == 3 && all.len() == 17
            })
            && make_splits(&subjects, 10, 3, seed).unwrap() == plan;
        bad_plans += (!ok) as usize;
    }

    let short = TrainConfig {
        epochs: 2,
        ..desk_train_config()
    };
    let run = || train(Model::build(&ModelConfig::mini(), DESK_SEED).unwrap(), &desk.train[..16], &short).unwrap();
    let (a, b) = (run(), run());
    let bits = |m: &Model| -> Vec<u32> { m.parameters().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect() };
    let train_same = a.model == b.model && bits(&a.model) == bits(&b.model) && a.loss_history == b.loss_history;

    let report = |m: &Model| {
        let images: Vec<ImageRecord> = desk
            .test
            .iter()
            .map(|s| ImageRecord {
                id: s.geometry.id.clone(),
                subject_id: s.sample.subject_id.clone(),
                iou: iou(&segment_image(m, &s.sample.image).unwrap(), &s.mask).unwrap(),
                failure: None,
            })
            .collect();
        serde_json::to_string(&EvalReport::build("mini", &images, None, None).unwrap()).unwrap()
    };
    let report_same = report(&a.model) == report(&b.model);
    Outcome {
        pass: bad_plans == 0 && train_same && report_same,
        detail: format!(
            "{bad_plans}/100 plans violate 14/3 disjointness or reproducibility; \
             training bit-identical {train_same}; reports byte-identical {report_same}"
        ),
    }
}

fn directional(model: &Model) -> Outcome {
    let heavy = generate_synthetic(&desk_synth(SynthConfig::heavy(), 909), 30).unwrap();
    let base = BaselineConfig::default().scaled(0.25);
    let mut failures = 0;
    let b: Vec<f64> = heavy
        .iter()
        .map(|s| match segment(&s.sample.image, &base) {
            Ok(m) => iou(&m, &s.mask).unwrap(),
            Err(_) => {
                failures += 1;
                0.0
            }
        })
        .collect();
    let (net, conv) = (mean_model_iou(model, &heavy), mean(&b));
    Outcome {
        pass: net > conv,
        detail: format!(
            "30 heavy-deformation eyes: trained mini IoU {net:.4} vs baseline {conv:.4} ({failures} baseline failures scored 0)"
        ),
    }
}

fn main() {
    // `cargo test` passes harness flags such as --nocapture or a name filter; ignore them.
    let start = Instant::now();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("1 statistics reproduction", statistics()));
    results.push(("2 gradient suite", gradients()));
    results.push(("3 oracle equivalence", oracles()));
    let desk = desk_data();
    let (o4, model) = pipeline(&desk);
    results.push(("4 desk-scale pipeline", o4));
    results.push(("5 baseline fidelity", baseline_fidelity()));
    results.push(("6 protocol invariants", protocol(&desk)));
    results.push(("7 directional replication (soft)", directional(&model)));

    for (name, o) in &results {
        println!("[{}] criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    // the soft criterion pins no margin; it is reported but does not gate the exit status
    let is_soft = |name: &str| name.contains("(soft)");
    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    let hard_failed = results.iter().filter(|(n, o)| !o.pass && !is_soft(n)).count();
    println!(
        "acceptance: {} passed, {failed} failed ({hard_failed} hard) in {:.1}s",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if hard_failed > 0 {
        std::process::exit(1);
    }
}
