//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line per criterion and exits non-zero if any fails or overruns its budget.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use calibkit::binning::{
    build_binning, debias_ece, ece_binned, expected_abs_gap, reliability_diagram, tilted_roof_map, BinningScheme,
};
use calibkit::cv::select_regularised;
use calibkit::harness::{evaluate_evaluator, fit_on_test_ece, spearman_rank, EvaluatorSpec};
use calibkit::loss::BregmanKind;
use calibkit::metrics::{true_ce, Atom, FiniteDistribution};
use calibkit::numeric::{derive_seed, logit, logit_unclipped, sigmoid};
use calibkit::piecewise::{pl_gradient, train_pl, PlModel, Space, TrainConfig};
use calibkit::scalers::{apply_scaler, fit_isotonic, fit_temperature, ScalerModel};
use calibkit::synth::{generate_dataset, solve_mixing, Derivate, Shape};
use calibkit::{BinaryDataset, CalibrationMap, LossKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize) -> BinaryDataset {
    let grid: bool = rng.gen_bool(0.3);
    let p: Vec<f64> = (0..n)
        .map(|_| if grid { f64::from(rng.gen_range(0..=20u8)) / 20.0 } else { rng.gen() })
        .collect();
    let y = p.iter().map(|&q| u8::from(rng.gen::<f64>() < q * q)).collect();
    BinaryDataset::new(p, y).unwrap()
}

fn c1_tilted_roof_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_ece, mut worst_node, mut checks) = (0.0f64, 0.0f64, 0);
    for _ in 0..200 {
        let n = rng.gen_range(2..=2000);
        let d = random_dataset(&mut rng, n);
        for scheme in [BinningScheme::EqualWidth, BinningScheme::EqualSize] {
            for b in [1, 2, 5, 15, n / 2] {
                if scheme == BinningScheme::EqualSize && b > n {
                    continue;
                }
                let diagram = reliability_diagram(&d, &build_binning(&d, scheme, b).unwrap());
                let map = tilted_roof_map(&diagram);
                for alpha in [1.0, 2.0] {
                    let ece = ece_binned(&diagram, alpha).unwrap();
                    let fit: f64 = d.predictions().iter().map(|&p| (map.apply(p) - p).abs().powf(alpha)).sum::<f64>()
                        / n as f64;
                    worst_ece = worst_ece.max((ece - fit).abs());
                    checks += 1;
                }
                for s in diagram.bins() {
                    if let (Some(p), Some(y)) = (s.mean_pred, s.mean_label) {
                        worst_node = worst_node.max((map.apply(p) - y).abs());
                    }
                }
            }
        }
    }
    check(
        worst_ece <= 1e-10 && worst_node <= 1e-12,
        format!("{checks} comparisons, max |ECE − fit| = {worst_ece:.2e}, max |ĉ(p̄) − ȳ| = {worst_node:.2e}"),
    )
}

fn c2_bregman_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst1, mut worst3) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let support = rng.gen_range(1..=20);
        let mut preds: Vec<f64> = Vec::new();
        while preds.len() < support {
            let p = f64::from(rng.gen_range(1..1000u32)) / 1000.0;
            if !preds.contains(&p) {
                preds.push(p);
            }
        }
        let atoms: Vec<Atom> = preds
            .iter()
            .map(|&p| Atom { prediction: p, weight: rng.gen_range(0.1..1.0), c_star: rng.gen_range(0.02..0.98) })
            .collect();
        let dist = FiniteDistribution::new(atoms).unwrap();
        // Few distinct outputs so that the maps introduce ties.
        let levels: Vec<f64> = (0..rng.gen_range(1..=4)).map(|_| rng.gen_range(0.05..0.95)).collect();
        let table = |choice: Vec<usize>| {
            let preds = preds.clone();
            let levels = levels.clone();
            move |p: f64| levels[choice[preds.iter().position(|&q| q == p).unwrap()]]
        };
        let c1 = table((0..support).map(|_| rng.gen_range(0..levels.len())).collect());
        let c2 = table((0..support).map(|_| rng.gen_range(0..levels.len())).collect());
        for kind in [BregmanKind::Squared, BregmanKind::BinaryEntropy] {
            let l1 = dist.conditional_expected_loss(&c1, kind).unwrap();
            let l2 = dist.conditional_expected_loss(&c2, kind).unwrap();
            for (i, a) in dist.atoms().iter().enumerate() {
                let lhs = l1[i] - l2[i];
                let rhs = kind.divergence(c1(a.prediction), a.c_star).unwrap()
                    - kind.divergence(c2(a.prediction), a.c_star).unwrap();
                worst1 = worst1.max((lhs - rhs).abs());
            }
            let cmee = dist.cmee(&c1, kind).unwrap();
            let ceac = dist.ceac(&c1, kind).unwrap();
            let grouping = dist.grouping_loss(&c1, kind).unwrap();
            worst3 = worst3.max((cmee - ceac - grouping).abs());
        }
    }
    check(
        worst1 <= 1e-10 && worst3 <= 1e-10,
        format!("100 distributions × 2 divergences, loss-difference identity max err {worst1:.2e}, CMEE = CEAC + grouping max err {worst3:.2e}"),
    )
}

fn c3_derivate_targeting() -> Outcome {
    let (mut worst_analytic, mut worst_empirical) = (0.0f64, 0.0f64);
    for shape in Shape::ALL {
        for target in [0.01, 0.05, 0.10] {
            let lambda = solve_mixing(shape, target).map_err(|e| e.to_string())?;
            let analytic = Derivate::new(shape, lambda).unwrap().calibration_error();
            worst_analytic = worst_analytic.max((analytic - target).abs());
            let synth = generate_dataset(shape, lambda, 1_000_000, derive_seed(3, lambda.to_bits())).unwrap();
            let empirical: f64 = synth
                .calibrated
                .iter()
                .zip(synth.dataset.predictions())
                .map(|(c, p)| (c - p).abs())
                .sum::<f64>()
                / 1e6;
            worst_empirical = worst_empirical.max((empirical - target).abs());
        }
    }
    check(
        worst_analytic <= 1e-6 && worst_empirical <= 5e-4,
        format!("max analytic error {worst_analytic:.2e}, max empirical error at n=10⁶ {worst_empirical:.2e}"),
    )
}

fn mean_cmee(shape: Shape, specs: &[&str]) -> Vec<f64> {
    let lambda = solve_mixing(shape, 0.10).unwrap();
    let mut sums = vec![0.0; specs.len()];
    for seed in 0..5u64 {
        let test = generate_dataset(shape, lambda, 10_000, seed).unwrap();
        let eval = generate_dataset(shape, lambda, 100_000, derive_seed(seed, 0xE7A1)).unwrap();
        for (i, tag) in specs.iter().enumerate() {
            let spec: EvaluatorSpec = tag.parse().unwrap();
            let row = evaluate_evaluator(&spec, &test.dataset, &test.ground_truth, &eval.dataset, 1.0, seed).unwrap();
            sums[i] += row.cmee_abs;
        }
    }
    sums.iter().map(|s| s / 5.0 * 1e3).collect()
}

fn c4_synthetic_orderings() -> Outcome {
    let sq = mean_cmee(Shape::Square, &["platt", "pl:ce", "es:15"]);
    let st = mean_cmee(Shape::Stairs, &["pl:ce", "isotonic", "beta", "platt"]);
    let square_ok = sq[0] < sq[1] && sq[1] < sq[2];
    let stairs_ok = st[0] < st[1] && st[1] < st[2] && st[2] < st[3];
    check(
        square_ok && stairs_ok,
        format!(
            "square: platt {:.2} < pl {:.2} < es15 {:.2} [{}]; stairs: pl {:.2} < isotonic {:.2} < beta {:.2} < platt {:.2} [{}] (mean CMEE ×10⁻³)",
            sq[0], sq[1], sq[2], square_ok, st[0], st[1], st[2], st[3], stairs_ok
        ),
    )
}

fn c5_debiasing() -> Outcome {
    let (mut raw_sum, mut debiased_sum) = (0.0, 0.0);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(5, seed));
        let p: Vec<f64> = (0..3000).map(|_| rng.gen()).collect();
        let y = p.iter().map(|&q| u8::from(rng.gen::<f64>() < q)).collect();
        let d = BinaryDataset::new(p, y).unwrap();
        let diagram = reliability_diagram(&d, &build_binning(&d, BinningScheme::EqualSize, 15).unwrap());
        raw_sum += ece_binned(&diagram, 1.0).unwrap();
        debiased_sum += debias_ece(&diagram).abs();
    }
    let (raw, debiased) = (raw_sum / 20.0, debiased_sum / 20.0);

    // One bin whose mean prediction equals its mean label.
    let d = BinaryDataset::new(vec![0.25, 0.75, 0.25, 0.75], vec![0, 1, 1, 0]).unwrap();
    let diagram = reliability_diagram(&d, &build_binning(&d, BinningScheme::EqualWidth, 1).unwrap());
    let sigma = (0.5f64 * 0.5 / 4.0).sqrt();
    let closed = sigma * (2.0 / std::f64::consts::PI).sqrt();
    let gap = expected_abs_gap(0.5, 0.5, sigma);
    let single_ok = (gap - closed).abs() < 1e-5 && (debias_ece(&diagram) + closed).abs() < 1e-5;
    check(
        debiased < raw && single_ok,
        format!("mean raw ECE {raw:.5}, mean |debiased| {debiased:.5}; single-bin E|gap| {gap:.8} vs σ√(2/π) {closed:.8}"),
    )
}

fn c6_pl_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for space in [Space::Probability, Space::Logit] {
        for loss in [LossKind::Mse, LossKind::CrossEntropy] {
            let mut done = 0;
            while done < 100 {
                let b = rng.gen_range(1..=8);
                let theta_b = (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let spread = if space == Space::Logit { 4.0 } else { 2.5 };
                let theta_h = (0..=b).map(|_| rng.gen_range(-spread..spread)).collect();
                let model = PlModel::new(space, theta_b, theta_h).unwrap();
                let size = rng.gen_range(1..=32);
                let preds: Vec<f64> = (0..size).map(|_| rng.gen_range(0.005..0.995)).collect();
                let near_knot = preds.iter().any(|&p| {
                    let x = space.to_working(p);
                    model.knot_positions().iter().any(|k| (x - k).abs() < 1e-3)
                });
                if near_knot {
                    continue;
                }
                let labels: Vec<u8> = (0..size).map(|_| rng.gen_range(0..2)).collect();
                let batch = BinaryDataset::new(preds, labels).unwrap();
                let analytic = pl_gradient(&model, &batch, loss).unwrap();
                let objective = |params: &[f64]| {
                    let mut m = model.clone();
                    m.set_params(params).unwrap();
                    loss.mean_loss(|p| m.apply(p), batch.predictions(), batch.labels())
                };
                let h = 1e-6;
                let numeric: Vec<f64> = (0..analytic.len())
                    .map(|i| {
                        let mut up = model.params().to_vec();
                        let mut down = up.clone();
                        up[i] += h;
                        down[i] -= h;
                        (objective(&up) - objective(&down)) / (2.0 * h)
                    })
                    .collect();
                let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
                let scale = numeric.iter().map(|n| n * n).sum::<f64>().sqrt().max(1e-8);
                worst = worst.max(diff / scale);
                done += 1;
                pairs += 1;
            }
        }
    }
    check(worst < 1e-4, format!("{pairs} (model, batch) pairs, max relative error {worst:.2e}"))
}

fn c7_pl3_temperature() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 100_000;
    let mut p = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let c: f64 = rng.gen();
        y.push(u8::from(rng.gen::<f64>() < c));
        p.push(sigmoid(2.0 * logit(c)));
    }
    let d = BinaryDataset::new(p, y).unwrap();
    let model = train_pl(&d, 1, Space::Logit, &TrainConfig::new(LossKind::CrossEntropy, 7)).unwrap();
    let (x, h) = (model.knot_positions(), model.knot_heights());
    let slope = (h[1] - h[0]) / (x[1] - x[0]);
    let ScalerModel::Temperature { t } = fit_temperature(&d).unwrap() else { unreachable!() };
    check(
        (slope - 0.5).abs() <= 0.05 && (t - 2.0).abs() <= 0.1,
        format!("1-piece logit-space slope {slope:.4} (target 0.5), fitted temperature {t:.4} (target 2)"),
    )
}

fn c8_beta_asymptotes() -> Outcome {
    let model = ScalerModel::Beta { a: 0.3, b: 1.4, c: 0.0 };
    let slope_at = |z: f64| {
        let h = 1e-3;
        (logit_unclipped(apply_scaler(&model, sigmoid(z + h))) - logit_unclipped(apply_scaler(&model, sigmoid(z - h)))) / (2.0 * h)
    };
    let (low, high) = (slope_at(-12.0), slope_at(12.0));
    check(
        (low - 0.3).abs() <= 0.3 * 0.02 && (high - 1.4).abs() <= 1.4 * 0.02,
        format!("logit-logit slopes {low:.5} near 0 and {high:.5} near 1"),
    )
}

fn c9_cv_regularisation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let k = rng.gen_range(2..=30);
        let base: f64 = rng.gen_range(0.05..0.5);
        // Every candidate within 0.1 % of the minimum, in random order.
        let mut table: Vec<(usize, f64)> = (1..=k).map(|b| (b, base * (1.0 + rng.gen_range(0.0..0.00099)))).collect();
        let min_at = rng.gen_range(0..k);
        table[min_at].1 = base;
        table.shuffle(&mut rng);
        if select_regularised(&table).unwrap() != 1 {
            return Err(format!("tie table {table:?} did not select 1"));
        }
        // One candidate beats all others by 0.2 %.
        let best = rng.gen_range(1..=k);
        let gap: Vec<(usize, f64)> =
            (1..=k).map(|b| (b, if b == best { base } else { base * (1.002 + rng.gen_range(0.0..0.1)) })).collect();
        if select_regularised(&gap).unwrap() != best {
            return Err(format!("gap table {gap:?} did not select {best}"));
        }
    }
    Ok("1000 tie tables chose the smallest count; 1000 gap tables chose the argmin".into())
}

fn c10_ranking() -> Outcome {
    let targets = [0.0, 0.02, 0.04, 0.06, 0.08, 0.10];
    let spec: EvaluatorSpec = "isotonic".parse().unwrap();
    let mut correlations = Vec::new();
    for shape in Shape::ALL {
        for seed in 0..5u64 {
            let mut fit = Vec::new();
            let mut truth = Vec::new();
            for &target in &targets {
                let lambda = solve_mixing(shape, target).unwrap();
                let synth = generate_dataset(shape, lambda, 1000, seed).unwrap();
                fit.push(fit_on_test_ece(&spec, &synth.dataset, 1.0, seed).unwrap().ece_fit);
                truth.push(true_ce(&synth.dataset, &synth.ground_truth, 1.0).unwrap());
            }
            correlations.push(spearman_rank(&fit, &truth).map_err(|e| e.to_string())?);
        }
    }
    let mean = correlations.iter().sum::<f64>() / correlations.len() as f64;
    check(mean >= 0.5, format!("mean Spearman {mean:.3} over {} (shape, seed) series at n=1000", correlations.len()))
}

/// Exact least-squares nondecreasing fit by enumerating contiguous partitions.
fn monotone_oracle(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        let mut fitted = Vec::with_capacity(n);
        let mut start = 0;
        let mut prev = f64::NEG_INFINITY;
        let mut feasible = true;
        for end in 1..=n {
            if end == n || mask & (1 << (end - 1)) != 0 {
                let mean = y[start..end].iter().sum::<f64>() / (end - start) as f64;
                if mean < prev {
                    feasible = false;
                    break;
                }
                prev = mean;
                fitted.extend(std::iter::repeat_n(mean, end - start));
                start = end;
            }
        }
        if !feasible {
            continue;
        }
        let sse: f64 = fitted.iter().zip(y).map(|(f, t)| (f - t).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b - 1e-12) {
            best = Some((sse, fitted));
        }
    }
    best.unwrap().1
}

fn c11_isotonic_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut datasets = 0;
    for n in 1..=8usize {
        let preds: Vec<f64> = (1..=n).map(|i| i as f64 / (n + 1) as f64).collect();
        for bits in 0u32..(1 << n) {
            let labels: Vec<u8> = (0..n).map(|i| ((bits >> i) & 1) as u8).collect();
            let d = BinaryDataset::new(preds.clone(), labels.clone()).unwrap();
            let model = fit_isotonic(&d).unwrap();
            let oracle = monotone_oracle(&labels.iter().map(|&l| f64::from(l)).collect::<Vec<_>>());
            for (p, o) in preds.iter().zip(&oracle) {
                worst = worst.max((model.apply(*p) - o).abs());
            }
            datasets += 1;
        }
    }
    check(worst <= 1e-9, format!("{datasets} datasets, max deviation from exhaustive oracle {worst:.2e}"))
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "tilted-roof equals binned ECE", budget: Duration::from_secs(10), run: c1_tilted_roof_equivalence },
        Criterion { id: 2, name: "Bregman loss and CMEE identities", budget: Duration::from_secs(5), run: c2_bregman_identities },
        Criterion { id: 3, name: "synthetic derivate targeting", budget: Duration::from_secs(30), run: c3_derivate_targeting },
        Criterion { id: 4, name: "synthetic CMEE orderings", budget: Duration::from_secs(30 * 60), run: c4_synthetic_orderings },
        Criterion { id: 5, name: "debiasing sanity", budget: Duration::from_secs(60), run: c5_debiasing },
        Criterion { id: 6, name: "PL gradient correctness", budget: Duration::from_secs(60), run: c6_pl_gradients },
        Criterion { id: 7, name: "one-piece PL3 versus temperature", budget: Duration::from_secs(5 * 60), run: c7_pl3_temperature },
        Criterion { id: 8, name: "beta logit-logit asymptotes", budget: Duration::from_secs(1), run: c8_beta_asymptotes },
        Criterion { id: 9, name: "CV regularisation rule", budget: Duration::from_secs(1), run: c9_cv_regularisation },
        Criterion { id: 10, name: "isotonic ranking objective", budget: Duration::from_secs(10 * 60), run: c10_ranking },
        Criterion { id: 11, name: "PAVA versus exhaustive oracle", budget: Duration::from_secs(60), run: c11_isotonic_oracle },
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if elapsed <= c.budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; exceeded budget {:?}", c.budget)),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {:>2} {status}: {} ({:.2?}) {detail}", c.id, c.name, elapsed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
