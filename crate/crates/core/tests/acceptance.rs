//! Acceptance criteria 1-10. Each test prints one `criterion N: PASS|FAIL`
//! line (run with `--nocapture` to see them) and then asserts.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use segregation::analysis::{spectral_heat_1d, stefan_enthalpy_oracle, stefan_similarity_lambda, OracleDomain, Verdict};
use segregation::entropy::{concentration_check, default_gammas, flow_scaling, kappa, DiscreteVariable};
use segregation::experiment::{initial_data, preset, run_experiment, ExperimentConfig, RunOutcome};
use segregation::kmc::{run_replicas, SimParams};
use segregation::lattice::{heat_kernel, Field, TorusGeometry};
use segregation::master::{entropy_trajectory, evolve_distribution, generator_matrix, Distribution, ProductBernoulli, ReferencePath};
use segregation::rates::make_preset;
use segregation::rd::{case1_envelope, gradient_monitor, solve, solve_fields, RdParams, SolveOptions, GRADIENT_C_MAX};

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn demo(name: &str) -> ExperimentConfig {
    preset(name).expect("known preset")
}

/// Each preset is run once and shared by criteria 4-6 and 10.
fn preset_run(name: &'static str) -> &'static RunOutcome {
    static RUNS: [OnceLock<RunOutcome>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let slot = match name {
        "case1-demo" => &RUNS[0],
        "case2-demo" => &RUNS[1],
        _ => &RUNS[2],
    };
    slot.get_or_init(|| {
        let dir = scratch(&format!("{name}-a"));
        run_experiment(&demo(name), Some(&dir), false).expect("preset runs")
    })
}

fn metric_series(run: &RunOutcome, key: &str) -> Vec<f64> {
    run.report.as_ref().unwrap().points.iter().map(|p| p.metrics[key]).collect()
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

#[test]
fn criterion_01_a_priori_monitors() {
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for name in ["case1-demo", "case2-demo", "case3-demo"] {
        let cfg = demo(name);
        let (c1, c2) = cfg.rates().unwrap();
        let times = cfg.solve_times();
        let mut fitted = Vec::new();
        for &n in &cfg.n {
            let geom = TorusGeometry::new(n, cfg.d).unwrap();
            let k = cfg.k_rule.k(n);
            let init = initial_data(&cfg, &geom, k).unwrap();
            let params = RdParams::new(geom, k, c1.clone(), c2.clone()).unwrap();
            let clock = Instant::now();
            let traj = solve(&init, &params, cfg.horizon, &times, SolveOptions { dt: None, strict: false }).unwrap();
            let secs = clock.elapsed().as_secs_f64();
            let m = &traj.monitors;
            let tag = format!("{name} N={n}");
            if m.box_excursion > 1e-12 {
                failures.push(format!("{tag}: box excursion {}", m.box_excursion));
            }
            if m.lower_margin_u < -1e-9 || m.lower_margin_v < -1e-9 {
                failures.push(format!("{tag}: lower margins {} {}", m.lower_margin_u, m.lower_margin_v));
            }
            if m.energy > 0.5 {
                failures.push(format!("{tag}: energy {}", m.energy));
            }
            if m.reaction > 1.0 {
                failures.push(format!("{tag}: reaction {}", m.reaction));
            }
            if secs >= 60.0 {
                failures.push(format!("{tag}: took {secs:.1}s"));
            }
            let grad = gradient_monitor(&traj, init.c0);
            if grad.flagged {
                failures.push(format!("{tag}: gradient bound flagged (C = {})", grad.fitted_c));
            }
            fitted.push(grad.fitted_c);
        }
        let hi = fitted.iter().cloned().fold(0.0, f64::max);
        let lo = fitted.iter().cloned().fold(f64::INFINITY, f64::min);
        if hi > GRADIENT_C_MAX || (hi > 0.0 && hi - lo > 0.5 * hi) {
            failures.push(format!("{name}: fitted C unstable across N: {fitted:?}"));
        }
        summary.push(format!("{name} C={fitted:?}"));
    }
    let detail = if failures.is_empty() { summary.join("; ") } else { failures.join("; ") };
    report(1, failures.is_empty(), detail);
}

#[test]
fn criterion_02_kmc_matches_master_equation() {
    let geom = TorusGeometry::new(3, 1).unwrap();
    let (c1, c2) = make_preset(2, 1, None, 1).unwrap();
    let t = 0.1;
    let u0 = vec![0.7, 0.2, 0.5];
    let v0 = vec![0.1, 0.6, 0.3];
    let params = SimParams::new(geom, 2.0, c1, c2, t, 7).unwrap();
    let replicas = 100_000;
    let clock = Instant::now();
    let states = run_replicas(&params, &Field::new(u0.clone()), &Field::new(v0.clone()), &[t], replicas, |snaps| {
        snaps[0].1.state_index()
    })
    .unwrap();
    let mut counts = vec![0.0; 64];
    for s in states {
        counts[s] += 1.0 / replicas as f64;
    }
    let empirical = Distribution::new(3, counts).unwrap();
    let gen = generator_matrix(&params).unwrap();
    let mu0 = ProductBernoulli::new(u0, v0).unwrap().distribution();
    let exact = evolve_distribution(&gen, &mu0, t).unwrap();
    let tv = empirical.total_variation(&exact);
    let secs = clock.elapsed().as_secs_f64();
    report(2, tv < 0.02 && secs < 300.0, format!("TV = {tv:.4} (< 0.02) in {secs:.1}s"));
}

#[test]
fn criterion_03_entropy_per_site_non_increasing() {
    let t = 0.1;
    let delta = 1.0;
    let (c1, c2) = make_preset(2, 1, None, 1).unwrap();
    let mut per_site = Vec::new();
    let clock = Instant::now();
    for n in [4usize, 5, 6] {
        let geom = TorusGeometry::new(n, 1).unwrap();
        let k = delta * (n as f64).ln().sqrt();
        let u0 = Field::sample(&geom, |th| 0.5 + 0.3 * (2.0 * PI * th[0]).cos());
        let v0 = Field::sample(&geom, |th| 0.4 - 0.25 * (2.0 * PI * th[0]).cos());
        let times: Vec<f64> = (0..=20).map(|i| t * i as f64 / 20.0).collect();
        let params = RdParams::new(geom, k, c1.clone(), c2.clone()).unwrap();
        let traj = solve_fields(&u0.values, &v0.values, &params, t, &times, SolveOptions::default()).unwrap();
        let reference = ReferencePath { times: traj.times.clone(), u: traj.u, v: traj.v };
        let sim = SimParams::new(geom, k, c1.clone(), c2.clone(), t, 0).unwrap();
        let mu0 = ProductBernoulli::from_fields(&u0, &v0).unwrap().distribution();
        let series = entropy_trajectory(&sim, &reference, &mu0, &[t]).unwrap();
        per_site.push(series[0].h_per_site);
    }
    let secs = clock.elapsed().as_secs_f64();
    let finite = per_site.iter().all(|h| h.is_finite());
    let monotone = per_site.windows(2).all(|w| w[1] <= w[0]);
    report(3, finite && monotone && secs < 600.0, format!("H/N at N = 4,5,6: {per_site:?} in {secs:.1}s"));
}

#[test]
fn criterion_04_case1_interface_vanishes() {
    let run = preset_run("case1-demo");
    let cfg = demo("case1-demo");
    let sup_v = metric_series(run, "sup_v");
    let heat = metric_series(run, "heat_error");
    let (c1, c2) = cfg.rates().unwrap();
    let times = cfg.solve_times();
    let mut envelope_ok = true;
    let mut widths = Vec::new();
    for &n in &cfg.n {
        let geom = TorusGeometry::new(n, 1).unwrap();
        let k = cfg.k_rule.k(n);
        let init = initial_data(&cfg, &geom, k).unwrap();
        let params = RdParams::new(geom, k, c1.clone(), c2.clone()).unwrap();
        let traj = solve(&init, &params, cfg.horizon, &times, SolveOptions::default()).unwrap();
        let env = case1_envelope(&geom, k, cfg.m, &init.u0.values, &init.v_support, 0.37, 1.0, cfg.horizon, &traj.times)
            .unwrap();
        for (i, u) in traj.u.iter().enumerate() {
            for x in 0..u.len() {
                if env.lower[i][x] > u[x] + 1e-6 || u[x] > env.upper[i][x] + 1e-6 {
                    envelope_ok = false;
                }
            }
        }
        let (w, bound) = (env.max_width(), env.width_bound(cfg.horizon));
        envelope_ok &= w <= bound;
        widths.push((w, bound));
    }
    let pass = strictly_decreasing(&sup_v) && strictly_decreasing(&heat) && envelope_ok;
    report(4, pass, format!("sup v {sup_v:?}; heat error {heat:?}; envelope ok = {envelope_ok}, (width, bound) {widths:?}"));
}

#[test]
fn criterion_05_case2_weak_stefan() {
    let run = preset_run("case2-demo");
    let l2 = metric_series(run, "oracle_l2");
    let trend = run.report.as_ref().unwrap().trends.iter().find(|t| t.metric == "oracle_l2").unwrap().verdict == Verdict::Decreasing;

    let t = 0.1;
    let times = [t / 4.0, t / 2.0, t];
    let oracle = stefan_enthalpy_oracle(&|_| 0.0, &|_| 1.0, 1.0, 2048, t, &times, OracleDomain::Segment { left: 1.0 }, None)
        .unwrap();
    let lambda = stefan_similarity_lambda(1.0, 1.0).unwrap();
    let i = oracle.times.iter().position(|&s| (s - t).abs() < 1e-12).unwrap();
    let front = oracle.melted_length(i);
    let exact = 2.0 * lambda * t.sqrt();
    let rel = (front / exact - 1.0).abs();
    report(5, trend && rel <= 0.02, format!("L2 distance {l2:?}; front {front:.5} vs {exact:.5} (rel {rel:.2e})"));
}

#[test]
fn criterion_06_case3_immovable_interface() {
    let run = preset_run("case3-demo");
    let rep = run.report.as_ref().unwrap();
    let band = rep.checks.iter().find(|c| c.name == "front_displacement_band").expect("band check");
    let inner = rep.checks.iter().find(|c| c.name == "v_inner_change").expect("inner check");
    let residual = metric_series(run, "weak_residual");
    let trend = rep.trends.iter().find(|t| t.metric == "weak_residual").unwrap().verdict == Verdict::Decreasing;
    let pass = band.pass && inner.pass && trend;
    report(
        6,
        pass,
        format!(
            "displacement {:.4} <= {:.4}; weak residual {residual:?}; inner v change {:.2e}",
            band.value, band.bound, inner.value
        ),
    );
}

#[test]
fn criterion_07_flow_energy_scaling() {
    let ells = [2, 4, 8, 16, 32];
    let d1 = flow_scaling(1, &ells).unwrap();
    let d2 = flow_scaling(2, &ells).unwrap();
    let d3 = flow_scaling(3, &ells).unwrap();
    let ok1 = d1.ratios.iter().all(|r| (1.8..=2.2).contains(r));
    let (lo, hi) = d2.differences.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    let ok2 = hi <= 1.3 * lo;
    // Ratios E(2l)/E(l) for l >= 8.
    let tail3: Vec<f64> = d3.ratios[2..].to_vec();
    let ok3 = tail3.iter().all(|r| (0.95..=1.1).contains(r));
    report(
        7,
        ok1 && ok2 && ok3,
        format!(
            "d=1 ratios {:?} ({}); d=2 differences {:?} ({}); d=3 ratios {:?} ({})",
            d1.ratios, ok1, d2.differences, ok2, tail3, ok3
        ),
    );
}

#[test]
fn criterion_08_concentration_inequality() {
    let mut min_slack = f64::INFINITY;
    let mut pass = true;
    for p in [0.1, 0.5, 0.9] {
        let vars = vec![DiscreteVariable::bernoulli(p); 10];
        let gammas = default_gammas(kappa(&vars));
        assert_eq!(gammas.len(), 5);
        let rep = concentration_check(&vars, &gammas).unwrap();
        pass &= rep.pass;
        min_slack = rep.rows.iter().map(|r| r.slack).fold(min_slack, f64::min);
    }
    report(8, pass && min_slack >= 0.0, format!("minimum slack {min_slack:.4e}"));
}

#[test]
fn criterion_09_heat_approximation_rate() {
    let t = 0.05;
    let u0 = |x: f64| (0.8 * (2.0 * PI * x).cos()).exp() / 3.0 + 0.1 * (6.0 * PI * x).sin();
    let mut errors = Vec::new();
    for n in [32usize, 64, 128, 256] {
        let geom = TorusGeometry::new(n, 1).unwrap();
        let thetas: Vec<f64> = (0..n).map(|x| x as f64 / n as f64).collect();
        let init: Vec<f64> = thetas.iter().map(|&x| u0(x)).collect();
        let discrete = heat_kernel(&geom, t).unwrap().apply(&init);
        let exact = spectral_heat_1d(&u0, t, &thetas);
        errors.push(discrete.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    report(9, ratios.iter().all(|&r| r >= 3.5), format!("errors {errors:?}, ratios {ratios:?}"));
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_10_reruns_are_byte_identical() {
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for name in ["case1-demo", "case2-demo", "case3-demo"] {
        let first = preset_run(name);
        let dir = scratch(&format!("{name}-b"));
        let second = run_experiment(&demo(name), Some(&dir), false).unwrap();
        let (a, b) = (csv_files(&first.dir), csv_files(&second.dir));
        if a != b {
            mismatches.push(format!("{name}: file lists differ"));
            continue;
        }
        for rel in &a {
            compared += 1;
            if fs::read(first.dir.join(rel)).unwrap() != fs::read(second.dir.join(rel)).unwrap() {
                mismatches.push(format!("{name}/{}", rel.display()));
            }
        }
    }
    let detail = if mismatches.is_empty() {
        format!("{compared} CSV files identical")
    } else {
        format!("differing: {mismatches:?}")
    };
    report(10, mismatches.is_empty() && compared > 0, detail);
}
