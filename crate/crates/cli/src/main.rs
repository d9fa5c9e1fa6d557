use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use sre_core::config::load_config;
use sre_core::kernels::KernelChoice;
use sre_core::runner::{self, Study};
use sre_core::Error;

/// Runs one specific-relative-entropy study and writes its CSV artifacts.
///
/// Exit status: 0 when every check passes, 1 when a study check fails
/// (listed in `failures.csv`), 2 on configuration or runtime errors.
/// Set SRE_LAB_WORKERS to fix the number of worker threads.
#[derive(Parser, Debug)]
#[command(name = "sre-lab", version)]
struct Args {
    /// validate | density-check | entropy-converge | qv-check | slln
    study: Study,

    #[arg(long)]
    config: PathBuf,

    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Overrides the kernel backend (exact | surrogate | bridge_mc).
    #[arg(long)]
    backend: Option<KernelChoice>,

    /// Overrides the SLLN resolution limit.
    #[arg(long)]
    n_max: Option<usize>,

    /// Overrides the number of independent SLLN runs.
    #[arg(long)]
    reps: Option<usize>,
}

fn main() -> ExitCode {
    ExitCode::from(exit_status(Args::parse()))
}

fn exit_status(args: Args) -> u8 {
    match run(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("sre-lab: {e}");
            2
        }
    }
}

fn run(args: Args) -> Result<u8, Error> {
    runner::configure_workers()?;
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    if let Some(b) = args.backend {
        config.backend = b;
    }
    for (flag, v) in [("--n-max", args.n_max), ("--reps", args.reps)] {
        if v == Some(0) {
            return Err(Error::Config {
                line: None,
                key: Some(flag.into()),
                message: "must be positive".into(),
            });
        }
    }
    if let Some(n) = args.n_max {
        config.slln.n_max = n;
    }
    if let Some(r) = args.reps {
        config.slln.reps = r;
    }

    let outcome = runner::run(&config, args.study)?;
    for a in &outcome.artifacts {
        println!("wrote {}", a.display());
    }
    if outcome.passed() {
        println!("{}: all checks passed", args.study);
        Ok(0)
    } else {
        for f in &outcome.failures {
            eprintln!("FAIL {}: {}", f.check, f.message);
        }
        eprintln!("{}: {} check(s) failed", args.study, outcome.failures.len());
        Ok(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;
    use std::path::Path;

    const GAUSSIAN: &str = "\
seed = 11
backend = \"exact\"

[q]
family = \"constant\"
c = 2.0
delta = 0.49
l = 0.01

[p]
family = \"constant\"
c = 1.0
delta = 0.9
l = 0.01

[scale]
n_list = [4, 8]
n_paths = 500
substeps = 1

[slln]
n_max = 30
k_min = 4
k_max = 8
k_reps = 10
";

    const SINE_Q: &str = "family = \"sinusoidal\"\na = 2.0\nb = 0.5\nomega = 1.0\ndelta = 0.39\nl = 0.51";

    fn status(dir: &Path, config: &str, args: &[&str]) -> u8 {
        let cfg = dir.join("config.toml");
        fs::write(&cfg, config).unwrap();
        let out = dir.join("out");
        let mut argv = vec!["sre-lab"];
        argv.extend_from_slice(args);
        argv.extend_from_slice(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        exit_status(Args::try_parse_from(argv).unwrap())
    }

    #[test]
    fn validate_unit_constant() {
        let tmp = tempfile::tempdir().unwrap();
        let text = GAUSSIAN.replace("c = 2.0\ndelta = 0.49", "c = 1.0\ndelta = 0.9");
        assert_eq!(status(tmp.path(), &text, &["validate"]), 0);
        let cert = fs::read_to_string(tmp.path().join("out/validate/certificate.csv")).unwrap();
        assert!(cert.starts_with("role,spec,delta,l,c1,c2,"));
        assert_eq!(cert.lines().count(), 3);
        assert!(tmp.path().join("out/validate/manifest.toml").exists());
    }

    #[test]
    fn config_errors_exit_two() {
        let tmp = tempfile::tempdir().unwrap();
        let text = GAUSSIAN.replace(
            "family = \"constant\"\nc = 2.0\ndelta = 0.49",
            "family = \"sinusoidal\"\na = 2.0\nb = 0.5\nomega = 1.0\ndelta = 0.8",
        );
        assert_eq!(status(tmp.path(), &text, &["validate"]), 2);
        let text = GAUSSIAN.replace("n_paths = 500", "n_paths = -500");
        assert_eq!(status(tmp.path(), &text, &["entropy-converge"]), 2);
        assert_eq!(status(tmp.path(), GAUSSIAN, &["slln", "--reps", "0"]), 2);
    }

    #[test]
    fn failed_checks_exit_one() {
        // Stated lower-envelope rate is too small for this coefficient.
        let tmp = tempfile::tempdir().unwrap();
        let text = GAUSSIAN
            .replace("family = \"constant\"\nc = 2.0\ndelta = 0.49\nl = 0.01", SINE_Q)
            .replace("backend = \"exact\"", "backend = \"surrogate\"")
            + "\n[density]\nt_list = [1.0]\nx_list = [1.0]\noffsets = [0.5]\n";
        assert_eq!(status(tmp.path(), &text, &["density-check"]), 1);
        let failures = fs::read_to_string(tmp.path().join("out/density-check/failures.csv")).unwrap();
        assert!(failures.starts_with("check,message\nenvelope[q],"), "{failures}");
        let text = text.replace("backend = \"surrogate\"", "backend = \"surrogate\"\nenvelope_constants = \"corrected\"");
        assert_eq!(status(tmp.path(), &text, &["density-check"]), 0);
    }

    #[test]
    fn entropy_converge_gaussian_rows() {
        let tmp = tempfile::tempdir().unwrap();
        assert_eq!(status(tmp.path(), GAUSSIAN, &["entropy-converge"]), 0);
        let text = fs::read_to_string(tmp.path().join("out/entropy-converge/entropy_converge.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
        for line in text.lines().skip(1) {
            let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            assert!((cols[1] - 0.8068528).abs() < 3.0 * cols[2] + 1e-7, "{line}");
        }
    }

    #[test]
    fn slln_flags_override_config() {
        let tmp = tempfile::tempdir().unwrap();
        let args = ["slln", "--seed", "5", "--n-max", "40", "--reps", "2", "--backend", "surrogate"];
        assert_eq!(status(tmp.path(), GAUSSIAN, &args), 0);
        let first = fs::read(tmp.path().join("out/slln/slln.csv")).unwrap();
        let text = String::from_utf8(first.clone()).unwrap();
        assert!(text.starts_with("k,Y_k,running_avg\n"));
        assert_eq!(text.lines().count(), 41);
        let runs = fs::read_to_string(tmp.path().join("out/slln/slln_runs.csv")).unwrap();
        assert_eq!(runs.lines().count(), 3);
        assert_eq!(status(tmp.path(), GAUSSIAN, &args), 0);
        assert_eq!(fs::read(tmp.path().join("out/slln/slln.csv")).unwrap(), first);
    }

    #[test]
    fn argument_parsing() {
        assert!(Args::try_parse_from(["sre-lab", "explode", "--config", "c.toml"]).is_err());
        assert!(Args::try_parse_from(["sre-lab", "slln"]).is_err());
        let a = Args::try_parse_from(["sre-lab", "qv-check", "--config", "c.toml", "--backend", "bridge_mc"]).unwrap();
        assert_eq!(a.study, Study::QvCheck);
        assert_eq!(a.backend, Some(KernelChoice::BridgeMc));
    }
}
