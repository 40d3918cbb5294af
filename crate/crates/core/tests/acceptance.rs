//! End-to-end acceptance checks on MNIST.
//!
//! Runs without the libtest harness and prints one PASS/FAIL line per
//! criterion. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 6 11`. The MNIST training files are read
//! from `SPADEML_MNIST_DIR`, defaulting to `data/mnist` at the workspace root.

mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use spademl_core::dataset::{load_idx, to_source_object, LabelSet, RawImageSet, SourceObject};
use spademl_core::experiment::{run_cells, write_outputs, worker_pool, ExperimentConfig, ExperimentReport};
use spademl_core::features::{moments_exact, moments_from_di};
use spademl_core::ml::fcnn::Network;
use spademl_core::ml::OutputHead;
use spademl_core::optics::{
    build_mode_set, di_distribution, spade_distribution, DiGrid, ModeSetKind, OpticsParams,
};
use spademl_core::sampler::sample_frequencies;

/// Master seed for every acceptance run, fixed once and never tuned.
const SEED: u64 = 1;
const SIGMA: f64 = 9.5;

const KINDS: [ModeSetKind; 4] = [
    ModeSetKind::CartesianLowest,
    ModeSetKind::DiagonalLowest,
    ModeSetKind::SecondOrder5dim,
    ModeSetKind::ExtendedThirdOrder,
];

struct Mnist {
    images: RawImageSet,
    labels: LabelSet,
}

fn load_mnist() -> Mnist {
    let dir = std::env::var_os("SPADEML_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    let (images, labels) = load_idx(
        &dir.join("train-images-idx3-ubyte.gz"),
        &dir.join("train-labels-idx1-ubyte.gz"),
    )
    .unwrap_or_else(|e| panic!("cannot load MNIST from {}: {e}", dir.display()));
    Mnist { images, labels }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scale_for(sigma_eff: f64) -> f64 {
    SIGMA / sigma_eff
}

fn config(classes: &[u8], cap: usize, measurement: &str, model: &str) -> ExperimentConfig {
    let classes: Vec<String> = classes.iter().map(|c| c.to_string()).collect();
    ExperimentConfig::from_json(&format!(
        r#"{{
            "schema_version": 1,
            "dataset": {{"images": "unused", "labels": "unused"}},
            "classes": [{}],
            "cap_per_class": {cap},
            "photon_counts": [1000],
            "measurement": "{measurement}",
            "model": "{model}",
            "seed": {SEED},
            "output_dir": "unused"
        }}"#,
        classes.join(",")
    ))
    .unwrap()
}

fn run(cfg: &ExperimentConfig, data: &Mnist) -> ExperimentReport {
    let report = worker_pool()
        .unwrap()
        .install(|| run_cells(cfg, &data.images, &data.labels))
        .unwrap_or_else(|e| panic!("experiment failed: {e}"));
    for c in &report.cells {
        eprintln!(
            "    {} sigma_eff={:.3} N={}: {:.4} +- {:.4}",
            cfg_tag(cfg),
            c.sigma_eff,
            c.photons,
            c.report.accuracy_mean,
            c.report.accuracy_std
        );
    }
    report
}

fn cfg_tag(cfg: &ExperimentConfig) -> String {
    format!("{:?}+{:?}", cfg.measurement, cfg.model).to_lowercase()
}

fn random_digits(data: &Mnist, count: usize, seed: u64) -> Vec<SourceObject> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, data.labels.count(), count).into_vec();
    idx.sort_unstable();
    idx.into_iter()
        .map(|i| to_source_object(&data.images, &data.labels, i).unwrap())
        .collect()
}

fn c1_spade_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_closed: f64 = 0.0;
    let mut worst_quad: f64 = 0.0;
    for _ in 0..1000 {
        let x = rng.gen_range(-10.0..=10.0);
        let y = rng.gen_range(-10.0..=10.0);
        let s = rng.gen_range(1.0..=10.0);
        // the quadrature is separable, so tabulate the 1-D overlaps once
        let ox: Vec<f64> = (0..4).map(|m| overlap_1d(m, x, s)).collect();
        let oy: Vec<f64> = (0..4).map(|n| overlap_1d(n, y, s)).collect();
        let quad = |m: u32, n: u32, _: f64, _: f64, _: f64| ox[m as usize] * oy[n as usize];
        let params = OpticsParams::with_sigma_eff(s).unwrap();
        for kind in KINDS {
            let set = build_mode_set(kind, s);
            let p = spade_distribution(&SourceObject::point(x, y), &params, &set).unwrap();
            for (i, mode) in set.modes().iter().enumerate() {
                worst_closed = worst_closed.max((p.p[i] - mode_probability(mode, x, y, s, coefficient_closed_form)).abs());
                worst_quad = worst_quad.max((p.p[i] - mode_probability(mode, x, y, s, quad)).abs());
            }
        }
    }
    outcome(
        worst_closed < 1e-12 && worst_quad < 1e-6,
        format!("max |p - closed form| = {worst_closed:.2e} (< 1e-12), max |p - quadrature| = {worst_quad:.2e} (< 1e-6)"),
    )
}

fn c2_normalization(data: &Mnist) -> Outcome {
    let digits = random_digits(data, 1000, SEED);
    let mut worst: f64 = 0.0;
    let mut negative = 0;
    let mut vectors = 0;
    for src in &digits {
        for k in 1..=10 {
            let s = k as f64;
            let params = OpticsParams::with_sigma_eff(s).unwrap();
            let mut check = |p: &[f64]| {
                worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
                negative += p.iter().filter(|&&v| v < 0.0).count();
                vectors += 1;
            };
            check(&di_distribution(src, &params, &DiGrid::covering(src.radius(), s)).unwrap().p);
            for kind in KINDS {
                check(&spade_distribution(src, &params, &build_mode_set(kind, s)).unwrap().p);
            }
        }
    }
    outcome(
        worst < 1e-9 && negative == 0,
        format!("{vectors} vectors, max |sum - 1| = {worst:.2e} (< 1e-9), {negative} negative entries"),
    )
}

fn c3_symmetries(data: &Mnist) -> Outcome {
    let digits = random_digits(data, 200, SEED + 1);
    let mut mirror_exact = true;
    let mut rotation: f64 = 0.0;
    let mut scale_exact = true;
    let mut parallelogram: f64 = 0.0;
    for (i, src) in digits.iter().enumerate() {
        let m = moments_exact(src);
        parallelogram = parallelogram.max((m.diag_plus + m.diag_minus - m.m20 - m.m02).abs());
        for k in 1..=10 {
            let s = k as f64;
            let params = OpticsParams::with_sigma_eff(s).unwrap();
            let diag = build_mode_set(ModeSetKind::DiagonalLowest, s);
            let cart = build_mode_set(ModeSetKind::CartesianLowest, s);
            let d = spade_distribution(src, &params, &diag).unwrap();
            let dm = spade_distribution(&src.mirrored_x(), &params, &diag).unwrap();
            mirror_exact &= d.get("HG10+HG01") == dm.get("HG10-HG01")
                && d.get("HG10-HG01") == dm.get("HG10+HG01")
                && d.get("HG00") == dm.get("HG00");
            let c = spade_distribution(src, &params, &cart).unwrap();
            let cm = spade_distribution(&src.mirrored_x(), &params, &cart).unwrap();
            mirror_exact &= c.p == cm.p;
            let pm = d.get("HG10+HG01").unwrap() + d.get("HG10-HG01").unwrap();
            rotation = rotation.max((pm - c.get("HG10").unwrap() - c.get("HG01").unwrap()).abs());

            // doubling the object is the same as halving the blur
            let doubled = src.scaled(2.0);
            let wide = OpticsParams::with_sigma_eff(2.0 * s).unwrap();
            for kind in KINDS {
                let set = build_mode_set(kind, s);
                let a = spade_distribution(&doubled, &wide, &set).unwrap();
                let b = spade_distribution(src, &params, &set).unwrap();
                scale_exact &= a.p == b.p;
            }

            let di = di_distribution(src, &params, &DiGrid::covering(src.radius(), s)).unwrap();
            let est = moments_from_di(&sample_frequencies(&di, 1000, i as u64).unwrap()).unwrap();
            parallelogram = parallelogram.max((est.diag_plus + est.diag_minus - est.m20 - est.m02).abs());
        }
    }
    outcome(
        mirror_exact && rotation < 1e-12 && scale_exact && parallelogram < 1e-9,
        format!(
            "mirror swap exact: {mirror_exact}; max |p+ + p- - p10 - p01| = {rotation:.2e}; \
             scale equivalence exact: {scale_exact}; max parallelogram defect = {parallelogram:.2e}"
        ),
    )
}

fn c4_di_moment_bias() -> Outcome {
    let n = 100_000u64;
    let mut pass = true;
    let mut parts = Vec::new();
    for s in [2.0f64, 5.0, 10.0] {
        let params = OpticsParams::with_sigma_eff(s).unwrap();
        let p = di_distribution(&SourceObject::point(0.0, 0.0), &params, &DiGrid::covering(0.0, s)).unwrap();
        let m = moments_from_di(&sample_frequencies(&p, n, SEED).unwrap()).unwrap();
        let se = (2.0 * s.powi(4) / n as f64).sqrt();
        let z = (m.m20 - s * s) / se;
        pass &= z.abs() < 4.0;
        parts.push(format!("s={s}: m20={:.4} z={z:+.2}", m.m20));
    }
    outcome(pass, format!("{} (|z| < 4)", parts.join(", ")))
}

fn c5_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut batch = |rows: usize, cols: usize, classes: usize| {
        let x = Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.5..1.5));
        (x, (0..rows).map(|i| i % classes).collect::<Vec<_>>())
    };
    let (x1, y1) = batch(6, 1, 2);
    let (x2, y2) = batch(9, 4, 2);
    let (x3, y3) = batch(8, 3, 3);
    let mut init = ChaCha8Rng::seed_from_u64(SEED + 1);
    let nets = [
        (Network::new(1, &[3], 1, OutputHead::Logistic, &mut init), x1, y1),
        (Network::new(4, &[6, 5, 3], 1, OutputHead::Logistic, &mut init), x2, y2),
        (Network::new(3, &[5, 4], 3, OutputHead::Softmax, &mut init), x3, y3),
    ];
    let errors: Vec<f64> = nets.iter().map(|(n, x, y)| max_relative_error(n, x, y)).collect();
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    outcome(
        worst < 1e-4,
        format!(
            "max relative error {worst:.2e} (< 1e-4) over a {}-parameter logistic net, a 3-hidden-layer logistic net and a softmax net",
            nets[0].0.parameter_count()
        ),
    )
}

struct Headline {
    spade: ExperimentReport,
    di: ExperimentReport,
    config: ExperimentConfig,
    seconds: f64,
}

fn headline_config() -> ExperimentConfig {
    let mut cfg = config(&[0, 1], 1000, "spade_diagonal", "rf");
    cfg.scale_factors = (1..=10).map(|k| scale_for(k as f64)).collect();
    cfg.photon_counts = vec![5000];
    cfg
}

fn run_headline(data: &Mnist) -> Headline {
    let started = Instant::now();
    let cfg = headline_config();
    let spade = run(&cfg, data);
    let mut di_cfg = config(&[0, 1], 1000, "di", "rf");
    di_cfg.scale_factors = vec![scale_for(10.0)];
    di_cfg.photon_counts = vec![5000];
    let di = run(&di_cfg, data);
    Headline {
        spade,
        di,
        config: cfg,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn c6_headline(h: &Headline) -> Outcome {
    let accs: Vec<f64> = h.spade.cells.iter().map(|c| c.report.accuracy_mean).collect();
    let min = accs.iter().cloned().fold(1.0, f64::min);
    let at10 = *accs.last().unwrap();
    let di10 = h.di.cells[0].report.accuracy_mean;
    let counts: Vec<String> = h.spade.realized_counts.iter().map(|c| format!("{}:{}", c.class, c.count)).collect();
    outcome(
        min >= 0.85 && at10 - di10 >= 0.05,
        format!(
            "[{}] SPADE accuracy over sigma_eff 1..10: {} (min {min:.4} >= 0.85); \
             SPADE - DI at sigma_eff 10 = {at10:.4} - {di10:.4} = {:.4} (>= 0.05); {:.0} s (target < 900 s)",
            counts.join(" "),
            accs.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" "),
            at10 - di10,
            h.seconds
        ),
    )
}

fn c7_trends(data: &Mnist) -> Outcome {
    let sigmas = [1.0, 4.0, 7.0, 10.0];
    let photons = vec![100, 1000, 5000];
    let mut pass = true;
    let mut parts = Vec::new();
    for (measurement, model, cap) in [
        ("di", "rf", 1000),
        ("di", "fcnn", 300),
        ("di_moments", "rf", 1000),
        ("spade_diagonal", "rf", 1000),
    ] {
        let mut cfg = config(&[0, 1], cap, measurement, model);
        cfg.scale_factors = sigmas.iter().map(|&s| scale_for(s)).collect();
        cfg.photon_counts = photons.clone();
        let report = run(&cfg, data);
        let acc: Vec<f64> = report.cells.iter().map(|c| c.report.accuracy_mean).collect();
        let sig: Vec<f64> = report.cells.iter().map(|c| c.sigma_eff).collect();
        let n: Vec<f64> = report.cells.iter().map(|c| c.photons as f64).collect();
        let (rs, rn) = (spearman(&sig, &acc), spearman(&n, &acc));
        let ok = rs <= 0.1 && rn >= -0.1;
        pass &= ok;
        parts.push(format!(
            "{measurement}+{model} ({} images): rho_sigma={rs:+.3} rho_N={rn:+.3}{}",
            2 * cap,
            if ok { "" } else { " <- out of band" }
        ));
    }
    outcome(pass, format!("{} (rho_sigma <= 0.1, rho_N >= -0.1)", parts.join("; ")))
}

fn c8_second_moment_nullity(data: &Mnist) -> Outcome {
    let mut cfg = config(&[6, 9], 1000, "spade_half_half", "rf");
    cfg.scale_factors = vec![scale_for(10.0)];
    cfg.photon_counts = vec![5000];
    let acc = run(&cfg, data).cells[0].report.accuracy_mean;
    outcome(
        (0.40..=0.65).contains(&acc),
        format!("6 vs 9, Cartesian + diagonal second-moment modes, sigma_eff 10, N 5000: accuracy {acc:.4} (in [0.40, 0.65])"),
    )
}

fn c9_third_moment_recovery(data: &Mnist) -> Outcome {
    let mut cfg = config(&[6, 9], 1000, "spade_extended", "rf");
    cfg.scale_factors = [1.0, 2.0, 3.0].iter().map(|&s| scale_for(s)).collect();
    cfg.photon_counts = vec![100, 20000];
    let report = run(&cfg, data);
    let mut pass = true;
    let mut parts = Vec::new();
    for pair in report.cells.chunks(2) {
        let (low, high) = (pair[0].report.accuracy_mean, pair[1].report.accuracy_mean);
        pass &= high >= 0.70 && high - low >= 0.10;
        parts.push(format!("sigma_eff {:.0}: N=20000 {high:.4}, N=100 {low:.4}, gain {:.4}", pair[0].sigma_eff, high - low));
    }
    outcome(pass, format!("{} (N=20000 >= 0.70, gain >= 0.10)", parts.join("; ")))
}

/// Share of `truth`'s row that lands on `predicted[0]`, counting only the
/// columns listed in `predicted`.
fn row_share(report: &ExperimentReport, truth: u8, predicted: &[u8]) -> f64 {
    let r = &report.cells[0].report;
    let col = |c: u8| r.classes.iter().position(|&k| k == c).unwrap();
    let row = &r.confusion[col(truth)];
    let den: u64 = predicted.iter().map(|&p| row[col(p)]).sum();
    row[col(predicted[0])] as f64 / den as f64
}

fn mean_diagonal_mass(report: &ExperimentReport) -> f64 {
    let conf = &report.cells[0].report.confusion;
    conf.iter()
        .enumerate()
        .map(|(i, row)| row[i] as f64 / row.iter().sum::<u64>() as f64)
        .sum::<f64>()
        / conf.len() as f64
}

fn full_row_share(report: &ExperimentReport, truth: u8, predicted: u8) -> f64 {
    let r = &report.cells[0].report;
    let i = r.classes.iter().position(|&c| c == truth).unwrap();
    let j = r.classes.iter().position(|&c| c == predicted).unwrap();
    r.confusion[i][j] as f64 / r.confusion[i].iter().sum::<u64>() as f64
}

fn c10_multiclass(data: &Mnist) -> Outcome {
    let all: Vec<u8> = (0..10).collect();
    let mut runs = BTreeMap::new();
    for m in ["spade_half_half", "spade_extended"] {
        let mut cfg = config(&all, 1000, m, "rf");
        cfg.scale_factors = vec![scale_for(10.0)];
        cfg.photon_counts = vec![5000];
        runs.insert(m, run(&cfg, data));
    }
    let hh = &runs["spade_half_half"];
    let ext = &runs["spade_extended"];
    // within-block shares: each row restricted to the two classes of its block
    let zero = row_share(hh, 0, &[0, 1]);
    let one = row_share(hh, 1, &[1, 0]);
    let six_to_nine = row_share(hh, 6, &[9, 6]);
    let (d_hh, d_ext) = (mean_diagonal_mass(hh), mean_diagonal_mass(ext));
    outcome(
        zero >= 0.8 && one >= 0.8 && six_to_nine >= 0.2 && d_ext > d_hh,
        format!(
            "{{0,1}} block diagonal shares {zero:.3}, {one:.3} (>= 0.8; full-row {:.3}, {:.3}); \
             {{6,9}} block 6->9 share {six_to_nine:.3} (>= 0.2; full-row {:.3}); \
             mean diagonal mass extended {d_ext:.4} vs half/half {d_hh:.4} (strictly greater)",
            full_row_share(hh, 0, 0),
            full_row_share(hh, 1, 1),
            full_row_share(hh, 6, 9),
        ),
    )
}

fn c11_reproducibility(data: &Mnist, first: &Headline) -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_outputs(&first.spade, a.path()).unwrap();
    let again = run(&first.config, data);
    write_outputs(&again, b.path()).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| std::fs::read(a.path().join(n)).ok() != std::fs::read(b.path().join(n)).ok())
        .collect();
    outcome(
        differing.is_empty() && !names.is_empty(),
        format!("{} CSV files compared bytewise, {} differ", names.len(), differing.len()),
    )
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |c: u32| wanted.is_empty() || wanted.contains(&c);
    let needs_data = (2..=11).any(|c| c != 4 && c != 5 && want(c));
    let data = needs_data.then(load_mnist);
    let data = || data.as_ref().unwrap();

    let mut failed = Vec::new();
    let mut report = |c: u32, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let o = f();
        println!(
            "[{}] C{c} {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            started.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(c);
        }
    };

    if want(1) {
        report(1, &mut c1_spade_oracle);
    }
    if want(2) {
        report(2, &mut || c2_normalization(data()));
    }
    if want(3) {
        report(3, &mut || c3_symmetries(data()));
    }
    if want(4) {
        report(4, &mut c4_di_moment_bias);
    }
    if want(5) {
        report(5, &mut c5_gradients);
    }
    let headline = (want(6) || want(11)).then(|| run_headline(data()));
    if want(6) {
        report(6, &mut || c6_headline(headline.as_ref().unwrap()));
    }
    if want(7) {
        report(7, &mut || c7_trends(data()));
    }
    if want(8) {
        report(8, &mut || c8_second_moment_nullity(data()));
    }
    if want(9) {
        report(9, &mut || c9_third_moment_recovery(data()));
    }
    if want(10) {
        report(10, &mut || c10_multiclass(data()));
    }
    if want(11) {
        report(11, &mut || c11_reproducibility(data(), headline.as_ref().unwrap()));
    }

    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all requested criteria passed");
}
