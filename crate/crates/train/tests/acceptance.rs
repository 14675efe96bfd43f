//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::time::Instant;

use pnl_core::data::{generate_synthetic_case, SyntheticSpec, PECTORAL_MARGIN};
use pnl_core::evaluation::{
    aggregate_runs, classification_table, confusion_metrics, landmark_table, ConfusionCounts, LandmarkErrors,
};
use pnl_core::geometry::{mm_distance, perpendicular_foot, Point2};
use pnl_core::imaging::{native_landmarks, preprocess_case, standardize_pectoral_line, PreprocessParams};
use pnl_core::loss::{law_grad, law_loss, wing, LawWeights, WingParams};
use pnl_nnet::model::forward_graph;
use pnl_nnet::{
    add_coord_channels, attention_gate, forward, init_params, AttentionForm, ExecMode, Graph, ModelConfig,
    ParamStore, Tensor, Variant,
};
use pnl_train::desk::{constant_baseline, desk_samples, run_desk, synthetic_splits, DeskRun};
use pnl_train::{cyclic_lr, TrainConfig, TrainOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    failed: Vec<&'static str>,
}

impl Outcome {
    fn report(&mut self, name: &'static str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(name);
        }
    }
}

fn geometry_oracle(out: &mut Outcome) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pt = |rng: &mut ChaCha8Rng| Point2::new(rng.random_range(-500.0..1500.0), rng.random_range(-500.0..1500.0));
    let (mut worst_dist, mut worst_orth): (f64, f64) = (0.0, 0.0);
    const SAMPLES: usize = 1_000_000;
    const REACH: f64 = 4000.0;
    for _ in 0..1000 {
        let (p1, p2, n) = (pt(&mut rng), pt(&mut rng), pt(&mut rng));
        if p1.distance(p2) < 1.0 {
            continue;
        }
        let foot = perpendicular_foot(p1, p2, n).unwrap();
        let u = p2.sub(p1).scale(1.0 / p2.distance(p1));
        // nearest of a dense walk along the line
        let mut best = (f64::INFINITY, p1);
        for k in 0..=SAMPLES {
            let q = p1.add(u.scale(-REACH + 2.0 * REACH * k as f64 / SAMPLES as f64));
            let d = q.distance(n);
            if d < best.0 {
                best = (d, q);
            }
        }
        worst_dist = worst_dist.max(best.1.distance(foot));
        let r = foot.sub(n);
        if r.norm() > 0.0 {
            worst_orth = worst_orth.max((r.dot(p2.sub(p1)) / (r.norm() * p2.distance(p1))).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    out.report(
        "geometry oracle",
        worst_dist <= 0.01 && worst_orth < 1e-9 && secs < 30.0,
        format!("max |foot - brute force| {worst_dist:.2e} px, max orthogonality residual {worst_orth:.2e}, {secs:.1}s"),
    );
}

fn wing_checks(out: &mut Outcome) {
    let p = WingParams::new(3.0, 1.5).unwrap();
    let e1 = (wing(1.5, &p) - 3.0 * 2f64.ln()).abs();
    let e2 = (wing(3.0, &p) - 3.0 * 3f64.ln()).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut jump: f64 = 0.0;
    for _ in 0..100 {
        let q = WingParams::new(rng.random_range(0.1..20.0), rng.random_range(0.05..10.0)).unwrap();
        let left = q.w() * (q.w() / q.epsilon()).ln_1p();
        jump = jump.max((left - wing(q.w(), &q)).abs());
        jump = jump.max((wing(q.w() * (1.0 - 1e-12), &q) - wing(q.w(), &q)).abs());
    }
    out.report(
        "wing closed form",
        e1 <= 1e-12 && e2 <= 1e-12 && jump < 1e-6,
        format!("|wing(1.5) - 3 ln 2| {e1:.1e}, |wing(3) - 3 ln 3| {e2:.1e}, max branch jump {jump:.1e}"),
    );
}

fn law_fd_error() -> f64 {
    let (p, w) = (WingParams::default(), LawWeights::default());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let t: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..64.0));
        let mut y: [f64; 6] = std::array::from_fn(|i| t[i] + rng.random_range(-10.0..10.0));
        // keep clear of the kink at zero and the branch point
        for (v, tv) in y.iter_mut().zip(&t) {
            let d = (*v - tv).abs();
            if d < 1e-3 || (d - p.w()).abs() < 1e-3 {
                *v += 0.01;
            }
        }
        let g = law_grad(&y, &t, &p, &w);
        let h = 1e-6;
        for i in 0..6 {
            let (mut up, mut dn) = (y, y);
            up[i] += h;
            dn[i] -= h;
            let fd = (law_loss(&up, &t, &p, &w) - law_loss(&dn, &t, &p, &w)) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs());
        }
    }
    worst
}

fn network_fd_error() -> (usize, usize, f64) {
    let cfg = ModelConfig::toy(Variant::CoordAttUNet);
    let params = init_params(&cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = Tensor::new(vec![2, 1, 64, 64], (0..2 * 64 * 64).map(|_| rng.random::<f64>()).collect()).unwrap();
    let target: Vec<[f64; 6]> = (0..2).map(|i| std::array::from_fn(|j| 10.0 + 7.0 * j as f64 + 3.0 * i as f64)).collect();
    let (wing_p, wts) = (WingParams::default(), LawWeights::default());
    let objective = |p: &ParamStore| {
        let y = forward(&cfg, p, &x, ExecMode::Sequential).unwrap();
        y.data().chunks(6).zip(&target).map(|(r, t)| law_loss(r.try_into().unwrap(), t, &wing_p, &wts)).sum::<f64>()
    };
    let mut g = Graph::new(ExecMode::Sequential);
    let xv = g.input(x.clone()).unwrap();
    let y = forward_graph(&mut g, &cfg, &params, xv).unwrap();
    let seed: Vec<f64> = g
        .value(y)
        .data()
        .chunks(6)
        .zip(&target)
        .flat_map(|(r, t)| law_grad(r.try_into().unwrap(), t, &wing_p, &wts))
        .collect();
    let grads = g.backward(y, Tensor::new(vec![2, 6], seed).unwrap()).unwrap();

    let f0 = objective(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (mut checked, mut worst) = (0, 0.0f64);
    for (name, grad) in &grads {
        for i in 0..grad.len() {
            if rng.random::<f64>() >= 0.01 {
                continue;
            }
            let an = grad.data()[i];
            let mut h = 1e-6;
            let fd = loop {
                let mut up = params.clone();
                up.get_mut(name).unwrap().data_mut()[i] += h;
                let mut dn = params.clone();
                dn.get_mut(name).unwrap().data_mut()[i] -= h;
                let (fu, fdn) = (objective(&up), objective(&dn));
                let (fwd, bwd) = ((fu - f0) / h, (f0 - fdn) / h);
                // shrink the step while a ReLU or pool switch lies within it
                if (fwd - bwd).abs() <= 1e-4 * fwd.abs().max(bwd.abs()).max(1e-2) || h < 1e-8 {
                    break (fu - fdn) / (2.0 * h);
                }
                h /= 10.0;
            };
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-4));
            checked += 1;
        }
    }
    (checked, cfg.param_count(), worst)
}

fn gradient_checks(out: &mut Outcome) {
    let start = Instant::now();
    let law = law_fd_error();
    let (checked, total, net) = network_fd_error();
    let secs = start.elapsed().as_secs_f64();
    out.report(
        "gradient checks",
        law <= 1e-6 && net <= 1e-3 && checked * 100 >= total && secs < 300.0,
        format!(
            "LAW max abs error {law:.1e}; network {checked}/{total} params, max rel error {net:.1e}; {secs:.0}s"
        ),
    );
}

fn coordconv_and_gate(out: &mut Outcome) {
    let c = add_coord_channels(&Tensor::zeros(&[1, 1, 4, 4])).unwrap();
    let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    let xs_ok = (0..4).all(|r| (0..4).all(|j| c.data()[16 + r * 4 + j] == want[j]));
    let ys_ok = (0..4).all(|r| (0..4).all(|j| c.data()[32 + r * 4 + j] == want[r]));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rand_t = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let (x, gate) = (rand_t(&[2, 3, 5, 5]), rand_t(&[2, 3, 5, 5]));
    let mut p = ParamStore::new();
    for m in ["wg", "wx"] {
        p.insert(format!("g.{m}.weight"), Tensor::zeros(&[3, 3, 1, 1]));
        p.insert(format!("g.{m}.bias"), Tensor::zeros(&[3]));
    }
    let a = attention_gate(&x, &gate, &p, "g", AttentionForm::PaperLiteral).unwrap();
    let half = a.data().iter().zip(x.data()).all(|(a, x)| *a == 0.5 * x);
    out.report(
        "coordconv channels and zeroed gate",
        xs_ok && ys_ok && half,
        format!("W=4 channel {:?}, zeroed gate A == 0.5 X: {half}", &c.data()[16..20]),
    );
}

fn preprocessing_round_trip(out: &mut Outcome) {
    let spec = SyntheticSpec { seed: 21, ..Default::default() };
    let params = PreprocessParams { output_size: 64, ..Default::default() };
    let (mut px, mut mm, mut idem): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for i in 0..100 {
        let (img, rec) = generate_synthetic_case(&spec, i).unwrap();
        let shape = img.shape().unwrap();
        let native = native_landmarks(&rec, shape, PECTORAL_MARGIN).unwrap();
        let (_, lm, log) = preprocess_case(&rec, &img, &params).unwrap();
        let back = log.landmarks_to_native(&lm);
        for (a, b) in [(native.nipple, back.nipple), (native.pec1, back.pec1), (native.pec2, back.pec2)] {
            px = px.max(a.distance(b));
        }
        for (a, b, c, d) in [
            (native.nipple, native.pec1, lm.nipple, lm.pec1),
            (native.nipple, native.pec2, lm.nipple, lm.pec2),
            (native.pec1, native.pec2, lm.pec1, lm.pec2),
        ] {
            mm = mm.max((mm_distance(a, b, rec.pixel_spacing) - mm_distance(c, d, log.effective_spacing)).abs());
        }
        let again = standardize_pectoral_line(&native, shape, PECTORAL_MARGIN).unwrap();
        idem = idem.max(again.pec1.distance(native.pec1)).max(again.pec2.distance(native.pec2));
    }
    out.report(
        "preprocessing round trip",
        px <= 0.51 && mm <= 1e-6 && idem == 0.0,
        format!("max landmark error {px:.3} px, max mm drift {mm:.1e}, standardize drift {idem:.1e}"),
    );
}

fn cyclic_schedule(out: &mut Outcome) {
    let (lo, hi, s) = (1e-5, 5e-4, 125);
    let marks = [cyclic_lr(0, lo, hi, s), cyclic_lr(s, lo, hi, s), cyclic_lr(2 * s, lo, hi, s)];
    let bounded = (0..10 * s).map(|i| cyclic_lr(i, lo, hi, s)).all(|v| (lo..=hi).contains(&v));
    out.report(
        "cyclic learning rate",
        marks == [lo, hi, lo] && bounded,
        format!("lr(0), lr(S), lr(2S) = {marks:?}; bounded over 5 cycles: {bounded}"),
    );
}

fn metrics_identity(out: &mut Outcome) {
    let m = confusion_metrics(&ConfusionCounts::new(70, 7, 110, 13)).unwrap();
    let example = (m.accuracy - 0.90).abs() <= 1e-4
        && (m.sensitivity - 0.9091).abs() <= 1e-4
        && (m.specificity - 0.8943).abs() <= 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut holds = 0;
    for _ in 0..1000 {
        let (tp, fnb, tn, fp) = (
            rng.random_range(0..500usize),
            rng.random_range(0..500usize),
            rng.random_range(0..500usize),
            rng.random_range(0..500usize),
        );
        if tp + fnb == 0 || tn + fp == 0 {
            holds += 1;
            continue;
        }
        let r = confusion_metrics(&ConfusionCounts::new(tp, fnb, tn, fp)).unwrap();
        let (bad, good, n) = ((tp + fnb) as f64, (tn + fp) as f64, (tp + fnb + tn + fp) as f64);
        // recover integer counts and compare the weighted sum exactly
        let correct = (r.accuracy * n).round() as usize;
        let from_rates = (r.sensitivity * bad).round() as usize + (r.specificity * good).round() as usize;
        let blended = bad / n * r.sensitivity + good / n * r.specificity;
        if correct == tp + tn && from_rates == correct && (r.accuracy - blended).abs() <= 1e-12 {
            holds += 1;
        }
    }
    out.report(
        "metrics identity",
        example && holds == 1000,
        format!(
            "(70,7,110,13) -> ({:.4}, {:.4}, {:.4}); identity holds on {holds}/1000",
            m.accuracy, m.sensitivity, m.specificity
        ),
    );
}

fn desk_scale(out: &mut Outcome) {
    let splits = synthetic_splits(&SyntheticSpec::default(), [200, 50, 50], 0).unwrap();
    let toy = ModelConfig::toy(Variant::CoordAttUNet);
    let samples = desk_samples(&splits, &PreprocessParams { output_size: toy.input_size, ..Default::default() }).unwrap();
    let baseline = constant_baseline(&splits, &samples.0, toy.input_size).unwrap();
    let nipple = |e: &LandmarkErrors| e.nipple;
    let base_mm = baseline.stats(nipple).unwrap().mean;
    let run = |variant, seed| -> DeskRun {
        let cfg = TrainConfig { seed, ..TrainConfig::toy() };
        let r = run_desk(&ModelConfig::toy(variant), &cfg, &splits, &samples, &TrainOptions::default()).unwrap();
        eprintln!(
            "  {variant} seed {seed}: accuracy {:.3}, nipple {:.2} mm, {:.0}s",
            r.result.metrics().unwrap().accuracy,
            r.result.stats(nipple).unwrap().mean,
            r.elapsed.as_secs_f64()
        );
        r
    };

    let main = run(Variant::CoordAttUNet, 7);
    let acc = main.result.metrics().unwrap().accuracy;
    let net_mm = main.result.stats(nipple).unwrap().mean;
    let ratio = base_mm / net_mm;
    let mins = main.elapsed.as_secs_f64() / 60.0;
    out.report(
        "desk-scale end to end",
        acc >= 0.85 && ratio >= 3.0 && mins <= 15.0,
        format!(
            "CoordAttUNet seed 7 accuracy {:.1}%, nipple {net_mm:.2} mm vs constant {base_mm:.2} mm ({ratio:.2}x), \
             training {mins:.1} min on {} thread(s)",
            100.0 * acc,
            cpu_threads()
        ),
    );

    let mut reports = Vec::new();
    let mut means = Vec::new();
    for variant in Variant::ALL {
        let runs: Vec<DeskRun> = [7, 8, 9]
            .into_iter()
            .map(|seed| if variant == Variant::CoordAttUNet && seed == 7 { main.clone() } else { run(variant, seed) })
            .collect();
        let results: Vec<_> = runs.into_iter().map(|r| r.result).collect();
        let report = aggregate_runs(&variant.to_string(), &results).unwrap();
        means.push(report.accuracy.mean);
        reports.push(report);
    }
    let (unet, att, coord) = (means[0], means[1], means[2]);
    let strict = coord >= att && att >= unet;
    let banded = coord >= att - 0.02 && att >= unet - 0.02;
    out.report(
        "ablation ordering",
        banded,
        format!(
            "mean accuracy UNet {:.1}%, AttentionUNet {:.1}%, CoordAttUNet {:.1}%; strict ordering {}",
            100.0 * unet,
            100.0 * att,
            100.0 * coord,
            if strict { "holds" } else { "violated within the 2-point band" }
        ),
    );
    println!("\n{}", classification_table(&reports));
    println!("{}", landmark_table(&reports));
}

fn cpu_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn main() {
    let mut out = Outcome { failed: Vec::new() };
    geometry_oracle(&mut out);
    wing_checks(&mut out);
    gradient_checks(&mut out);
    coordconv_and_gate(&mut out);
    preprocessing_round_trip(&mut out);
    cyclic_schedule(&mut out);
    metrics_identity(&mut out);
    desk_scale(&mut out);
    if !out.failed.is_empty() {
        println!("failed: {}", out.failed.join(", "));
        std::process::exit(1);
    }
}
