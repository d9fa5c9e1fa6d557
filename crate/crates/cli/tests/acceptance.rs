//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sre_core::coefficients::{validate_assumption, CoefficientSpec, ConstantSet, Interval, RegularityCertificate};
use sre_core::entropy::{
    closed_form_functional, discrete_entropy_mc, proof_functional_bracket, qv_comparison, EntropyEstimate,
};
use sre_core::kernels::fd::{kernel_fd_oracle, FdMesh};
use sre_core::kernels::{
    kernel_bridge_mc, kernel_exact_constant, lemma1_envelope_with, BridgeMcKernel, ExactConstantKernel,
    SurrogateKernel,
};
use sre_core::lamperti::TransformContext;
use sre_core::paths::{simulate_ensemble, PathEnsemble};
use sre_core::rng::{derive_seed, Domain};
use sre_core::slln::{ksslln_diagnostic, slln_run};
use sre_core::stats::{combine_se, MeanSe};

const HALF_GAMMA_4: f64 = 0.806_852_819_440_054_7;
const SEED: u64 = 20_240_601;
const N_PATHS: usize = 100_000;
const SUBSTEPS: usize = 32;

fn domain() -> Interval {
    Interval::new(-10.0, 10.0).unwrap()
}

fn sine() -> CoefficientSpec {
    CoefficientSpec::sinusoidal(2.0, 0.5, 1.0, 0.39, 0.51).unwrap()
}

fn two() -> CoefficientSpec {
    CoefficientSpec::constant(2.0, 0.49, 0.01).unwrap()
}

fn one() -> CoefficientSpec {
    CoefficientSpec::constant(1.0, 0.9, 0.01).unwrap()
}

fn cert(spec: &CoefficientSpec) -> RegularityCertificate {
    validate_assumption(spec, domain(), 2001).unwrap()
}

fn ctx(spec: CoefficientSpec) -> TransformContext {
    TransformContext::new(spec, 0.0).unwrap()
}

/// Ensembles shared between criteria.
struct Shared {
    two: TransformContext,
    one: TransformContext,
    sine: TransformContext,
    eta2: TransformContext,
    gauss: PathEnsemble,
    sine_paths: PathEnsemble,
}

impl Shared {
    fn new() -> Self {
        let two = ctx(two());
        let one = ctx(one());
        let sine = ctx(sine());
        let eta2 = two.clone();
        let gauss = simulate_ensemble(&two, 0.0, 64, 1, N_PATHS, SEED).unwrap();
        let sine_paths = simulate_ensemble(&sine, 0.0, 64, SUBSTEPS, N_PATHS, SEED + 1).unwrap();
        Self {
            two,
            one,
            sine,
            eta2,
            gauss,
            sine_paths,
        }
    }
}

type Outcome = (bool, String);

fn c1_gaussian(s: &Shared) -> Outcome {
    let cf = closed_form_functional(&s.two, &s.one, &s.gauss).unwrap();
    let mut ok = (cf.value - HALF_GAMMA_4).abs() < 1e-12 && cf.std_error == 0.0;
    let mut detail = format!("closed form {:.7} (se {})", cf.value, cf.std_error);
    let (kq, kp) = (ExactConstantKernel { c: 2.0 }, ExactConstantKernel { c: 1.0 });
    for n in [4, 8, 16, 32, 64] {
        let d = discrete_entropy_mc(n, &s.gauss, &kq, &kp).unwrap();
        let inside = (d.value - HALF_GAMMA_4).abs() <= 3.0 * d.std_error && d.std_error <= 5e-3;
        ok &= inside;
        detail += &format!("; n={n}: {:.5}±{:.1e}", d.value, d.std_error);
    }
    (ok, detail)
}

fn zero_within(e: &EntropyEstimate) -> bool {
    e.value.abs() <= 3.0 * e.std_error || e.value == 0.0
}

fn c2_degenerate(s: &Shared) -> Outcome {
    let ens = simulate_ensemble(&s.sine, 0.0, 16, 4, 2000, SEED + 2).unwrap();
    let c = cert(&sine());
    let cf = closed_form_functional(&s.sine, &s.sine, &ens).unwrap();
    let mut ok = cf.value == 0.0 && cf.std_error == 0.0;
    let sur = SurrogateKernel { ctx: s.sine.clone() };
    let bridge = BridgeMcKernel {
        ctx: s.sine.clone(),
        m: 16,
        n_inner: 20,
        seed: SEED,
    };
    let d_sur = discrete_entropy_mc(16, &ens, &sur, &sur).unwrap();
    let d_bridge = discrete_entropy_mc(4, &ens, &bridge, &bridge).unwrap();
    ok &= zero_within(&d_sur) && zero_within(&d_bridge);
    let (lo, hi) = proof_functional_bracket(16, &ens, &c, &c, &s.sine, &s.sine).unwrap();
    let centre = lo.value + (c.c2 + c.c1) / 16.0;
    ok &= centre.abs() <= 3.0 * lo.std_error + 1e-15 && lo.value <= 0.0 && 0.0 <= hi.value;
    (
        ok,
        format!(
            "closed form {}; discrete (surrogate) {}; discrete (bridge) {}; bracket [{:.4}, {:.4}] around path term {:.1e}",
            cf.value, d_sur.value, d_bridge.value, lo.value, hi.value, centre
        ),
    )
}

const SWEEP_T: [f64; 5] = [0.05, 0.1, 0.25, 0.5, 1.0];
const SWEEP_X: [f64; 3] = [-1.0, 0.0, 1.0];

/// (points inside, total, worst relative shortfall below the lower envelope, max fd budget)
fn envelope_sweep(set: ConstantSet) -> (usize, usize, f64, f64) {
    let c = cert(&sine());
    let tc = ctx(sine());
    let offsets: Vec<f64> = (0..13).map(|i| -1.0 + i as f64 / 6.0).collect();
    let (mut inside, mut total, mut worst, mut budget) = (0, 0, 0.0f64, 0.0f64);
    for t in SWEEP_T {
        for x in SWEEP_X {
            let ys: Vec<f64> = offsets.iter().map(|o| x + o).collect();
            let table = kernel_fd_oracle(&tc, t, x, FdMesh::auto(&tc, t, x, &ys)).unwrap();
            for &y in &ys {
                let fd = table.eval(y).unwrap();
                let env = lemma1_envelope_with(&c, set, &tc, t, x, y).unwrap();
                budget = budget.max(fd.disc_error);
                total += 1;
                if env.contains_with(fd.value, fd.disc_error + 1e-3) {
                    inside += 1;
                }
                worst = worst.max((env.lower - fd.value) / env.lower);
            }
        }
    }
    (inside, total, worst, budget)
}

fn c3_sandwich(_: &Shared) -> Outcome {
    let (inside, total, worst, budget) = envelope_sweep(ConstantSet::Stated);
    (
        inside == total && total == 195,
        format!(
            "{inside}/{total} points inside the envelope with stated constants; worst shortfall {:.1}% below the lower envelope; max fd budget {budget:.1e}",
            100.0 * worst
        ),
    )
}

fn c3_supplementary() -> Outcome {
    let (inside, total, _, budget) = envelope_sweep(ConstantSet::Corrected);
    (
        inside == total,
        format!("{inside}/{total} points inside with C2 = L/(4 delta) + L^2/8; max fd budget {budget:.1e}"),
    )
}

fn c4_bridge(s: &Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut pass = 0;
    let mut worst = 0.0f64;
    for i in 0..20 {
        let t: f64 = rng.random_range(0.05..=1.0);
        let x: f64 = rng.random_range(-1.0..=1.0);
        let y = x + rng.random_range(-1.0..=1.0);
        let table = kernel_fd_oracle(&s.sine, t, x, FdMesh::auto(&s.sine, t, x, &[y])).unwrap();
        let fd = table.eval(y).unwrap().value;
        let b = kernel_bridge_mc(&s.sine, t, x, y, 64, 4000, derive_seed(SEED, Domain::Bridge, i)).unwrap();
        let tol = 3.0 * (b.std_error + 1e-3);
        worst = worst.max((b.value - fd).abs() / tol);
        if (b.value - fd).abs() <= tol {
            pass += 1;
        }
    }
    let c15 = ctx(CoefficientSpec::constant(1.5, 0.6, 0.01).unwrap());
    let mut constant_ok = true;
    for (t, x, y) in [(0.1, 0.0, 0.2), (0.5, -1.0, 0.3), (1.0, 0.4, 2.0)] {
        let b = kernel_bridge_mc(&c15, t, x, y, 16, 100, 1).unwrap();
        let g = kernel_exact_constant(1.5, t, x, y).unwrap().value;
        constant_ok &= b.std_error == 0.0 && (b.value - g).abs() <= 1e-14 * g;
    }
    (
        pass == 20 && constant_ok,
        format!("{pass}/20 points agree (worst |bridge - fd| / tol = {worst:.2}); constant sigma exact with se 0: {constant_ok}"),
    )
}

fn c5_bracket(s: &Shared) -> Outcome {
    let (cq, cp) = (cert(&sine()), cert(&two()));
    let cf = closed_form_functional(&s.sine, &s.eta2, &s.sine_paths).unwrap();
    let mut ok = true;
    let mut detail = format!("closed form {:.5}±{:.1e}", cf.value, cf.std_error);
    let mut widths = Vec::new();
    for n in [8, 16, 32, 64] {
        let (lo, hi) = proof_functional_bracket(n, &s.sine_paths, &cq, &cp, &s.sine, &s.eta2).unwrap();
        let lo_band = lo.value - 3.0 * combine_se(lo.std_error, cf.std_error);
        let hi_band = hi.value + 3.0 * combine_se(hi.std_error, cf.std_error);
        ok &= lo_band <= cf.value && cf.value <= hi_band;
        widths.push(hi.value - lo.value);
        detail += &format!("; n={n}: [{:.5}, {:.5}]", lo.value, hi.value);
    }
    let ratios: Vec<f64> = widths.windows(2).map(|w| w[1] / w[0]).collect();
    ok &= ratios.iter().all(|r| (0.45..=0.55).contains(r));
    detail += &format!("; width ratios {:?}", ratios.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>());
    (ok, detail)
}

fn c6_riemann(s: &Shared) -> Outcome {
    let g = qv_comparison(&s.gauss, &s.two, &s.one, 64).unwrap();
    let gauss_ok = (g.riemann.value - 4.0).abs() <= 3.0 * g.riemann.std_error;
    let w = qv_comparison(&s.sine_paths, &s.sine, &s.eta2, 64).unwrap();
    let sine_ok = w.difference.value.abs() <= 3.0 * w.difference.std_error;
    (
        gauss_ok && sine_ok,
        format!(
            "gaussian {:.5}±{:.1e} vs 4; sine riemann {:.5} vs quadrature {:.5}, paired difference {:.2e}±{:.1e}",
            g.riemann.value,
            g.riemann.std_error,
            w.riemann.value,
            w.quadrature.value,
            w.difference.value,
            w.difference.std_error
        ),
    )
}

fn c7_concentration(s: &Shared) -> Outcome {
    let (kq, kp) = (SurrogateKernel { ctx: s.two.clone() }, SurrogateKernel { ctx: s.one.clone() });
    let runs: Vec<_> = (0..50)
        .map(|r| slln_run(&s.two, 0.0, 200, 1, &kq, &kp, derive_seed(SEED, Domain::Slln, r)).unwrap())
        .collect();
    let within = runs
        .iter()
        .filter(|r| (r.running_avg[199] - HALF_GAMMA_4).abs() < 0.1)
        .count();
    let sd = |n: usize| {
        let v: Vec<f64> = runs.iter().map(|r| r.running_avg[n - 1]).collect();
        MeanSe::from_samples(&v).variance().sqrt()
    };
    let (sd50, sd200) = (sd(50), sd(200));
    (
        within >= 47 && sd200 < sd50,
        format!("{within}/50 runs within 0.1 at n=200; cross-run sd {sd50:.4} at n=50, {sd200:.4} at n=200"),
    )
}

fn c8_kslln(s: &Shared) -> Outcome {
    let (kq, kp) = (ExactConstantKernel { c: 2.0 }, ExactConstantKernel { c: 1.0 });
    let ks: Vec<usize> = (8..=128).collect();
    let rep = ksslln_diagnostic(&s.two, 0.0, &ks, 200, 1, &kq, &kp, SEED).unwrap();
    let increasing = rep.rows.windows(2).all(|w| w[1].partial_sum >= w[0].partial_sum);
    let ok = (-1.3..=-0.7).contains(&rep.variance_exponent) && rep.partial_sum_exponent < 1.0 && increasing;
    (
        ok,
        format!(
            "Var(Y_k) exponent {:.3}; partial sums of Var/k^2 reach {:.4e} with growth exponent {:.3}",
            rep.variance_exponent,
            rep.rows.last().unwrap().partial_sum,
            rep.partial_sum_exponent
        ),
    )
}

const DETERMINISM_CONFIG: &str = "\
seed = 77
backend = \"surrogate\"

[q]
family = \"sinusoidal\"
a = 2.0
b = 0.5
omega = 1.0
delta = 0.39
l = 0.51

[p]
family = \"constant\"
c = 2.0
delta = 0.49
l = 0.01

[scale]
n_list = [8, 16, 32]
n_paths = 5000
substeps = 4
n_inner = 200
bridge_steps = 16

[density]
t_list = [0.25, 1.0]
x_list = [0.0, 1.0]

[slln]
n_max = 100
reps = 3
k_min = 8
k_max = 32
k_reps = 20
";

fn run_cli(config: &Path, study: &str, out: &Path, workers: usize) {
    let status = Command::new(env!("CARGO_BIN_EXE_sre-lab"))
        .args([study, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("SRE_LAB_WORKERS", workers.to_string())
        .output()
        .unwrap()
        .status;
    // exit 1 only reports failed study checks; artifacts are still written
    assert!(matches!(status.code(), Some(0 | 1)), "{study}: {status}");
}

fn c9_determinism(_: &Shared) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.toml");
    fs::write(&config, DETERMINISM_CONFIG).unwrap();
    let studies = ["validate", "density-check", "entropy-converge", "qv-check", "slln"];
    let (a, b) = (tmp.path().join("w1"), tmp.path().join("w4"));
    let mut compared = 0;
    let mut differing = Vec::new();
    for study in studies {
        run_cli(&config, study, &a, 1);
        run_cli(&config, study, &b, 4);
        let mut names: Vec<_> = fs::read_dir(a.join(study))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .filter(|n| n.to_string_lossy().ends_with(".csv"))
            .collect();
        names.sort();
        for name in names {
            compared += 1;
            let x = fs::read(a.join(study).join(&name)).unwrap();
            let y = fs::read(b.join(study).join(&name)).unwrap_or_default();
            if x != y {
                differing.push(format!("{study}/{}", name.to_string_lossy()));
            }
        }
    }
    (
        differing.is_empty() && compared > 0,
        format!("{compared} CSV files compared between 1 and 4 workers; differing: {differing:?}"),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let shared = Shared::new();
    println!("shared ensembles ready in {:.1}s", start.elapsed().as_secs_f64());
    let criteria: [(usize, &str, fn(&Shared) -> Outcome); 9] = [
        (1, "gaussian exactness", c1_gaussian),
        (2, "degenerate zero", c2_degenerate),
        (3, "envelope sandwich", c3_sandwich),
        (4, "bridge representation", c4_bridge),
        (5, "bracket convergence", c5_bracket),
        (6, "riemann-sum limit", c6_riemann),
        (7, "running-average concentration", c7_concentration),
        (8, "variance summability", c8_kslln),
        (9, "determinism", c9_determinism),
    ];
    let mut failed = Vec::new();
    for (i, name, f) in criteria {
        let t = Instant::now();
        let (ok, detail) = f(&shared);
        println!(
            "criterion {i} ({name}): {} [{:.1}s] {detail}",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        if i == 3 {
            let t = Instant::now();
            let (ok, detail) = c3_supplementary();
            println!(
                "criterion 3 supplementary (corrected lower-envelope rate): {} [{:.1}s] {detail}",
                if ok { "PASS" } else { "FAIL" },
                t.elapsed().as_secs_f64()
            );
        }
        if !ok {
            failed.push(i);
        }
    }
    println!("acceptance finished in {:.1}s; failed criteria: {failed:?}", start.elapsed().as_secs_f64());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
