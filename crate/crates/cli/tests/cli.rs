use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qfa_core::io::{load_chain, load_condition, load_screen, read_plot_points, LoadOptions};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_qfa-infer"));
    c.env_remove("QFA_INFER_THREADS");
    c
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/two_genes.tsv")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn ok(o: &Output) {
    assert_eq!(code(o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

const SHORT: [&str; 6] = ["--set", "burn_in=300", "--set", "thin=1", "--set", "samples=200"];

#[test]
fn fixture_loads_with_both_genes() {
    let d = load_screen(&fixture(), "control", "query", &LoadOptions::default()).unwrap();
    for s in [&d.control, &d.query] {
        assert_eq!(s.genes.len(), 2);
        assert!(s.genes.values().all(|r| r.len() == 3 && r.iter().all(|r| r.curve.len() == 10)));
    }
}

#[test]
fn screen_fits_write_the_interaction_table() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture();
    for stage in ["--one-stage", "--two-stage"] {
        let out = dir.path().join(format!("res{stage}.csv"));
        let chain = dir.path().join(format!("chain{stage}.csv"));
        let mut args = vec!["fit-screen", "--data", f.to_str().unwrap(), stage, "--out", out.to_str().unwrap()];
        args.extend(["--chain", chain.to_str().unwrap()]);
        args.extend(SHORT);
        ok(&run(&args));
        let text = std::fs::read_to_string(&out).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, "gene,delta_mean,gamma_strength,omega_strength,control_fitness,query_fitness,classification");
        assert_eq!(text.lines().count(), 3);
        assert_eq!(load_chain(&chain).unwrap().len(), 200);

        let plot = dir.path().join(format!("plot{stage}.csv"));
        ok(&run(&["export-plot-data", "--results", out.to_str().unwrap(), "--out", plot.to_str().unwrap()]));
        let pts = read_plot_points(std::fs::File::open(&plot).unwrap(), &plot).unwrap();
        assert_eq!(pts.len(), 2);
    }
}

#[test]
fn baseline_and_diagnose_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("base.csv");
    ok(&run(&["baseline", "--data", fixture().to_str().unwrap(), "--out", out.to_str().unwrap()]));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("gene,gamma_hat,p_value,q_value,"));
    assert_eq!(text.lines().count(), 3);

    let sim = dir.path().join("row_a.tsv");
    ok(&run(&["simulate", "--preset", "row-a", "--paths", "1", "--out", sim.to_str().unwrap()]));
    let chain = dir.path().join("chain.csv");
    let mut args = vec!["fit-growth", "--data", sim.to_str().unwrap(), "--model", "lnaa", "--out", chain.to_str().unwrap()];
    args.extend(SHORT);
    let fit = run(&args);
    ok(&fit);
    assert!(String::from_utf8_lossy(&fit.stdout).contains("\"K\""));
    let rep = run(&["diagnose", "--chain", chain.to_str().unwrap()]);
    ok(&rep);
    let json = String::from_utf8_lossy(&rep.stdout);
    for name in ["K", "r", "P", "sigma", "nu"] {
        assert!(json.contains(&format!("\"name\": \"{name}\"")), "{json}");
    }
    assert!(json.contains("\"ess\"") && json.contains("\"hw_pvalue\""));
}

#[test]
fn simulate_fig4nonu_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("paths.tsv");
    let o = run(&["simulate", "--preset", "fig4nonu", "--out", out.to_str().unwrap()]);
    ok(&o);
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("K=0.11, r=4, P=0.00005, sigma=0.05"), "{msg}");
    let s = load_condition(&out, "sim", &LoadOptions::default()).unwrap();
    let reps = &s.genes["sim"];
    assert_eq!(reps.len(), 100);
    assert!(reps.iter().all(|r| r.curve.values[0] == 5e-5 && r.curve.len() == 27));
    let end: f64 = reps.iter().map(|r| *r.curve.values.last().unwrap()).sum::<f64>() / 100.0;
    assert!((end / 0.11 - 1.0).abs() < 0.1, "{end}");
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    assert_eq!(code(&run(&["fit-screen", "--bogus"])), 2);
    assert_eq!(code(&run(&["simulate", "--out", out.to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["diagnose", "--chain", "x.csv", "--set", "nonsense=1"])), 2);
    assert_eq!(code(&bin().env("QFA_INFER_THREADS", "0").args(["diagnose", "--chain", "x.csv"]).output().unwrap()), 2);

    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "ORF\tExpt.Time\tTreatment\nA\t0\tcontrol\n").unwrap();
    let o = run(&["baseline", "--data", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Growth"));
    assert_eq!(code(&run(&["diagnose", "--chain", dir.path().join("missing.csv").to_str().unwrap()])), 3);
}

#[test]
fn log_scale_fit_needs_positive_data_unless_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let chain = dir.path().join("chain.csv");
    let f = fixture();
    let base = ["fit-growth", "--data", f.to_str().unwrap(), "--model", "rrtr", "--error", "lognormal"];
    let mut args = base.to_vec();
    args.extend(["--out", chain.to_str().unwrap()]);
    args.extend(SHORT);
    assert_eq!(code(&run(&args)), 3);
    args.push("--drop-nonpositive");
    let o = run(&args);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dropped 1 non-positive"));
    assert_eq!(load_chain(&chain).unwrap().len(), 200);
}
