//! Acceptance checks, one line per criterion. Runs as a plain binary so the
//! lines are always printed.

mod common;

use std::fs;
use std::time::{Duration, Instant};

use common::*;
use mixlasso::bounds::*;
use mixlasso::divergence::{kl_conditional_mc, kl_gaussian};
use mixlasso::estimator::{fit_lasso, lambda_max, FitConfig, InitStrategy};
use mixlasso::harness::{emit_report, run_oracle_experiment, ExperimentConfig, LambdaPolicy, OutputFormat};
use mixlasso::model::{gradient_bound_constant, log_density_gradient, ModelParams, ParameterBox};
use mixlasso::simulator::{
    event_t_indicator, make_ground_truth, sample_design, sample_responses, simulate, DesignKind, SimSpec,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Outcome {
    id: &'static str,
    pass: bool,
    informational: bool,
    detail: String,
}

struct Report {
    outcomes: Vec<Outcome>,
}

impl Report {
    fn record(&mut self, id: &'static str, pass: bool, detail: String) {
        self.push(id, pass, false, detail);
    }

    fn inform(&mut self, id: &'static str, pass: bool, detail: String) {
        self.push(id, pass, true, detail);
    }

    fn push(&mut self, id: &'static str, pass: bool, informational: bool, detail: String) {
        let tag = match (informational, pass) {
            (true, _) => "INFO",
            (false, true) => "PASS",
            (false, false) => "FAIL",
        };
        println!("criterion {id:<4} {tag}  {detail}");
        self.outcomes.push(Outcome {
            id,
            pass,
            informational,
            detail,
        });
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn criterion_1(rep: &mut Report) {
    let t = Instant::now();
    let mut g = rng(101);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let k = g.random_range(1..=3);
        let q = g.random_range(1..=3);
        let p = g.random_range(1..=4);
        let bx = random_box(&mut g, k, 0.0);
        let params = random_params(&mut g, &bx, k, p, q, case % 4 == 0);
        let x = uniform_vector(&mut g, p, 1.0);
        let y = uniform_vector(&mut g, q, 2.0);
        worst = worst.max(finite_difference_error(&params, &x, &y, 1e-5));
    }
    let el = t.elapsed();
    rep.record(
        "1",
        worst <= 1e-6 && el < Duration::from_secs(10),
        format!(
            "gradient vs central differences (h=1e-5): max abs err {worst:.3e} <= 1e-6 on 100 instances; {:.2} s < 10 s",
            secs(el)
        ),
    );
}

fn gradient_bound_violations(diagonal: bool, seed: u64) -> (usize, f64) {
    let mut g = rng(seed);
    let mut violations = 0;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..1000 {
        let k = g.random_range(1..=3);
        let q = g.random_range(1..=3);
        let p = g.random_range(1..=4);
        let bx = random_box(&mut g, k, 0.5);
        let params = random_params(&mut g, &bx, k, p, q, diagonal);
        let y_sup = g.random_range(0.0..5.0);
        let x = uniform_vector(&mut g, p, 1.0);
        let y = uniform_vector(&mut g, q, y_sup);
        let grad = log_density_gradient(&params, &x, &y).unwrap();
        let bound = gradient_bound_constant(&bx, q, y_sup);
        let ratio = grad.max_abs() / bound;
        worst_ratio = worst_ratio.max(ratio);
        if ratio > 1.0 {
            violations += 1;
        }
    }
    (violations, worst_ratio)
}

fn criterion_2(rep: &mut Report) {
    let t = Instant::now();
    let (violations, worst) = gradient_bound_violations(true, 202);
    let el = t.elapsed();
    rep.record(
        "2",
        violations == 0 && el < Duration::from_secs(30),
        format!(
            "gradient bound C_y, diagonal covariances, A_sigma >= 0.5: {violations} violations in 1000 draws (max |grad|/C_y = {worst:.3}); {:.2} s < 30 s",
            secs(el)
        ),
    );
    let (violations, worst) = gradient_bound_violations(false, 203);
    rep.inform(
        "2b",
        violations == 0,
        format!("gradient bound C_y, full covariances: {violations} violations in 1000 draws (max |grad|/C_y = {worst:.3})"),
    );
}

fn criterion_3(rep: &mut Report) {
    let t = Instant::now();
    let mut g = rng(303);
    let mut worst_rise = f64::NEG_INFINITY;
    let mut failures = 0;
    for i in 0..200u64 {
        let k = 1 + (i % 3) as usize;
        let bx = ParameterBox::new(0.1, 2.0, 0.25, 4.0, 0.25, 4.0, 0.05).unwrap();
        let spec = SimSpec {
            n: g.random_range(30..=120),
            p: g.random_range(2..=10),
            q: g.random_range(1..=2),
            k,
            sparsity: g.random_range(0.0..1.0),
            design_kind: [DesignKind::IidUniform, DesignKind::IidGaussianClipped, DesignKind::OrthogonalRows]
                [g.random_range(0..3)],
            noise_scale: g.random_range(0.3..2.0),
            separation: g.random_range(0.0..1.0),
            intercept: g.random_bool(0.5),
            seed: i,
            bx,
        };
        let sim = simulate(&spec).unwrap();
        let mut cfg = FitConfig::new(bx, g.random_range(0.0..0.3));
        cfg.seed = i;
        if i % 4 == 3 {
            cfg.init_strategy = InitStrategy::RandomInBox;
        }
        match fit_lasso(&sim.data, k, &cfg) {
            Ok(fit) => {
                for w in fit.objective_trace.windows(2) {
                    worst_rise = worst_rise.max(w[1] - w[0]);
                }
            }
            Err(_) => failures += 1,
        }
    }
    let el = t.elapsed();
    rep.record(
        "3",
        worst_rise <= 1e-9 && failures == 0 && el < Duration::from_secs(300),
        format!(
            "EM monotonicity over 200 fits (k in 1..3): largest step change {worst_rise:.3e} <= 1e-9, {failures} failed fits; {:.1} s < 300 s",
            secs(el)
        ),
    );
}

fn quadrature_kl(a: &ModelParams, b: &ModelParams, x: &DVector<f64>) -> f64 {
    let h = 1e-3;
    (-30_000..=30_000)
        .map(|i| {
            let y = DVector::from_vec(vec![i as f64 * h]);
            let la = lu_log_density_params(a, x, &y);
            la.exp() * (la - lu_log_density_params(b, x, &y))
        })
        .sum::<f64>()
        * h
}

fn criterion_4(rep: &mut Report) {
    let t = Instant::now();
    let mut g = rng(404);
    let mut worst_gauss: f64 = 0.0;
    for i in 0..20 {
        let q = g.random_range(1..=3);
        let bx = random_box(&mut g, 1, 0.0);
        let a = random_params(&mut g, &bx, 1, 3, q, false);
        let b = random_params(&mut g, &bx, 1, 3, q, false);
        let x = uniform_vector(&mut g, 3, 1.0);
        let est = kl_conditional_mc(&a, &b, &x, 100_000, 4000 + i).unwrap();
        let want = kl_gaussian(
            &a.component_mean(0, &x),
            &a.covariances()[0],
            &b.component_mean(0, &x),
            &b.covariances()[0],
        )
        .unwrap();
        worst_gauss = worst_gauss.max((est.value - want).abs() / est.std_error);
    }
    let bx = ParameterBox::new(0.1, 2.0, 0.25, 4.0, 0.25, 4.0, 0.1).unwrap();
    let mut worst_mix: f64 = 0.0;
    for i in 0..5 {
        let a = random_params(&mut g, &bx, 2, 2, 1, true);
        let b = random_params(&mut g, &bx, 3, 2, 1, true);
        let x = uniform_vector(&mut g, 2, 1.0);
        let est = kl_conditional_mc(&a, &b, &x, 100_000, 4100 + i).unwrap();
        worst_mix = worst_mix.max((est.value - quadrature_kl(&a, &b, &x)).abs() / est.std_error);
    }
    let el = t.elapsed();
    rep.record(
        "4",
        worst_gauss <= 4.0 && worst_mix <= 4.0 && el < Duration::from_secs(120),
        format!(
            "MC KL at 100000 samples: Gaussian pairs max |err|/SE {worst_gauss:.2} <= 4 (20 pairs), q=1 mixtures vs quadrature {worst_mix:.2} <= 4 (5 pairs); {:.1} s < 120 s",
            secs(el)
        ),
    );
}

fn criterion_5(rep: &mut Report) {
    let t = Instant::now();
    let raw: Vec<serde_json::Value> = serde_json::from_str(include_str!("data/bounds_oracle.json")).unwrap();
    let mut worst: f64 = 0.0;
    let mut worst_name = String::new();
    for (i, c) in raw.iter().enumerate() {
        let bx: ParameterBox = serde_json::from_value(c["box"].clone()).unwrap();
        let f = |k: &str| c[k].as_f64().unwrap();
        let u = |k: &str| c[k].as_u64().unwrap() as usize;
        let (n, p, q, k) = (u("n"), u("p"), u("q"), u("k"));
        let rows: Vec<Vec<f64>> = serde_json::from_value(c["design"].clone()).unwrap();
        let design = DMatrix::from_fn(rows.len(), rows[0].len(), |a, b| rows[a][b]);
        let xm = x_max_n(&design).unwrap();
        let mn = m_n(&bx, n).unwrap();
        let cm = c_mn(&bx, mn, q);
        let rhs = oracle_rhs(&OracleQuery {
            bx,
            n,
            p,
            q,
            k,
            x_max_n: xm,
            lambda: f("lambda"),
            kl_ref: f("kl_ref"),
            l1_ref: f("l1_ref"),
            kappa: f("kappa"),
            kappa_prime: f("kappa_prime"),
            form: RemainderForm::Lasso,
        })
        .unwrap();
        let got = [
            ("lambda_threshold", lambda_threshold(&bx, n, p, q, k, xm, f("kappa")).unwrap()),
            ("m_n", mn),
            ("c_mn", cm),
            ("r_n", r_n(&bx, k, cm)),
            ("delta_m", delta_m(f("m"), xm, n, k, p, &bx).unwrap()),
            (
                "log_packing",
                packing_bound(f("delta"), f("m"), cm, k, p, q, xm, bx.precision_max).unwrap(),
            ),
            ("tail_statement", tail_bound(&bx, n, k, q, mn)),
            ("tail_proof", tail_bound_proof(&bx, n, k, q, mn)),
            ("rhs_total", rhs.oracle_rhs_total),
        ];
        for (name, v) in got {
            let e = relative_error(v, c["expected"][name].as_f64().unwrap());
            if e > worst || e.is_nan() {
                worst = e;
                worst_name = format!("{name} (box {i})");
            }
        }
    }
    let bx = ParameterBox::new(0.5, 1.0, 1.0, 1.0, 0.5, 1.0, 0.5).unwrap();
    let worked = lambda_threshold(&bx, 100, 10, 1, 2, 1.0, 1.0).unwrap();
    let worked_err = relative_error(worked, 160.30);
    let el = t.elapsed();
    rep.record(
        "5",
        worst <= 1e-9 && worked_err <= 1e-3 && el < Duration::from_secs(5),
        format!(
            "bound formulas vs 50-digit scripted oracle on {} boxes: max rel err {worst:.2e} <= 1e-9 (at {worst_name}); worked threshold {worked:.4} vs 160.30 rel {worked_err:.1e} <= 1e-3; {:.3} s < 5 s",
            raw.len(),
            secs(el)
        ),
    );
}

fn experiment_box() -> ParameterBox {
    ParameterBox::new(0.1, 1.0, 0.5, 2.0, 0.5, 2.0, 0.2).unwrap()
}

fn experiment_config(out: &std::path::Path) -> ExperimentConfig {
    let sim = SimSpec {
        n: 200,
        p: 50,
        q: 2,
        k: 2,
        sparsity: 0.9,
        design_kind: DesignKind::IidUniform,
        noise_scale: 1.0,
        separation: 1.0,
        intercept: false,
        seed: 20_240_611,
        bx: experiment_box(),
    };
    let mut cfg = ExperimentConfig::new(sim, 30);
    cfg.lambda_policy = LambdaPolicy::ThresholdMultiples { multiples: vec![1.0] };
    cfg.kl_samples = 20_000;
    cfg.kappa = 36.0;
    cfg.kappa_prime = 332.0;
    cfg.output_dir = out.to_path_buf();
    cfg.formats = vec![OutputFormat::Csv, OutputFormat::Json, OutputFormat::Svg];
    cfg
}

fn criterion_6(rep: &mut Report, dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let t = Instant::now();
    let cfg_a = experiment_config(&dir.join("a"));
    let first = run_oracle_experiment(&cfg_a).unwrap();
    let el = t.elapsed();
    let files_a = emit_report(&first, &cfg_a).unwrap();
    let agg = &first.aggregates[0];
    let rhs = agg.bound_report.oracle_rhs_total;
    rep.record(
        "6",
        agg.mean_kl + 2.0 * agg.pooled_se <= rhs && el < Duration::from_secs(1200),
        format!(
            "oracle inequality (n=200 p=50 q=2 k=2 sparsity 0.9, 30 reps, lambda = threshold {:.4}): mean KL {:.4e} + 2 x pooled SE {:.2e} <= RHS {rhs:.4e} (replicate SE {:.2e}); {:.1} s < 1200 s",
            agg.lambda,
            agg.mean_kl,
            agg.pooled_se,
            agg.replicate_se,
            secs(el)
        ),
    );

    files_a
}

fn criterion_9(rep: &mut Report, dir: &std::path::Path, files_a: &[std::path::PathBuf]) {
    let cfg_b = experiment_config(&dir.join("b"));
    let second = run_oracle_experiment(&cfg_b).unwrap();
    let files_b = emit_report(&second, &cfg_b).unwrap();
    let mut same = true;
    let mut compared = Vec::new();
    for (a, b) in files_a.iter().zip(&files_b) {
        let ext = a.extension().and_then(|e| e.to_str()).unwrap_or("");
        if ext == "csv" || ext == "json" {
            same &= fs::read(a).unwrap() == fs::read(b).unwrap();
            compared.push(a.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    rep.record(
        "9",
        same && compared.len() == 2,
        format!(
            "determinism: rerun of criterion 6 with the same master seed gives byte-identical {}",
            compared.join(" and ")
        ),
    );
}

fn criterion_7(rep: &mut Report) {
    let t = Instant::now();
    let cfg = experiment_config(std::path::Path::new("."));
    let spec = &cfg.sim;
    let truth = make_ground_truth(spec).unwrap();
    let design = sample_design(spec).unwrap();
    let mn = m_n(&spec.bx, spec.n).unwrap();
    let reps = 10_000u64;
    let misses = (0..reps)
        .filter(|&r| {
            let (y, _) = sample_responses(&truth, &design, mixlasso::seeding::derive_seed(77, &[r])).unwrap();
            !event_t_indicator(&y, mn)
        })
        .count();
    let rate = misses as f64 / reps as f64;
    let proof = tail_bound_proof(&spec.bx, spec.n, spec.k, spec.q, mn);
    let stated = tail_bound(&spec.bx, spec.n, spec.k, spec.q, mn);
    let se = |b: f64| (b.min(1.0) * (1.0 - b.min(1.0)) / reps as f64).sqrt();
    let el = t.elapsed();
    rep.record(
        "7",
        rate <= proof + 3.0 * se(proof) && el < Duration::from_secs(120),
        format!(
            "tail event at M_n = {mn:.4}: empirical P(T^c) {rate:.2e} ({misses}/{reps}) <= proof-variant bound {proof:.3e} + 3 SE; {:.1} s < 120 s",
            secs(el)
        ),
    );
    rep.inform(
        "7b",
        rate <= stated + 3.0 * se(stated),
        format!("tail event, statement-variant bound {stated:.3e} vs empirical {rate:.2e}"),
    );
}

fn criterion_8(rep: &mut Report) {
    let t = Instant::now();
    let mut g = rng(808);
    let mut nonzero = 0usize;
    let mut worst_l1: f64 = 0.0;
    for i in 0..50u64 {
        let k = g.random_range(1..=3);
        let spec = SimSpec {
            n: g.random_range(40..=100),
            p: g.random_range(2..=12),
            q: g.random_range(1..=2),
            k,
            sparsity: g.random_range(0.0..0.8),
            design_kind: DesignKind::IidUniform,
            noise_scale: 0.5,
            separation: 0.5,
            intercept: g.random_bool(0.5),
            seed: 8000 + i,
            bx: ParameterBox::new(0.1, 2.0, 0.25, 4.0, 0.25, 4.0, 0.1).unwrap(),
        };
        let sim = simulate(&spec).unwrap();
        let mut cfg = FitConfig::new(spec.bx, 0.0);
        cfg.seed = i;
        let (lmax, _) = lambda_max(&sim.data, k, &cfg).unwrap();
        cfg.lambda = if i % 2 == 0 { lmax } else { lmax * g.random_range(1.0..3.0) };
        let fit = fit_lasso(&sim.data, k, &cfg).unwrap();
        let l1 = fit.params.l1_norm();
        worst_l1 = worst_l1.max(l1);
        nonzero += fit
            .params
            .coefficients()
            .iter()
            .map(|b| b.iter().filter(|v| **v != 0.0).count())
            .sum::<usize>();
    }
    let el = t.elapsed();
    rep.record(
        "8",
        nonzero == 0 && el < Duration::from_secs(120),
        format!(
            "sparsity at lambda >= lambda_max on 50 instances: {nonzero} nonzero coefficients (max l1 {worst_l1:e}); {:.1} s < 120 s",
            secs(el)
        ),
    );
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut rep = Report { outcomes: Vec::new() };
    criterion_1(&mut rep);
    criterion_2(&mut rep);
    criterion_3(&mut rep);
    criterion_4(&mut rep);
    criterion_5(&mut rep);
    let dir = tempfile::tempdir().unwrap();
    let files = criterion_6(&mut rep, dir.path());
    criterion_7(&mut rep);
    criterion_8(&mut rep);
    criterion_9(&mut rep, dir.path(), &files);

    let failed: Vec<&Outcome> = rep.outcomes.iter().filter(|o| !o.informational && !o.pass).collect();
    let gated = rep.outcomes.iter().filter(|o| !o.informational).count();
    println!("acceptance: {} of {gated} criteria passed", gated - failed.len());
    if !failed.is_empty() {
        for o in &failed {
            eprintln!("failed criterion {}: {}", o.id, o.detail);
        }
        std::process::exit(1);
    }
}
