use std::path::Path;
use std::process::Command;

const EXAMPLE1: &str = "hawkes-model v1
dimension = 2
baseline = 1.0, 1.0
kernel.0.0 = exponential alpha=0.2 beta=1.0
kernel.0.1 = exponential alpha=0.3 beta=1.0
kernel.1.0 = exponential alpha=0.3 beta=1.0
kernel.1.1 = exponential alpha=0.2 beta=1.0
";

fn hawkes(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hawkes")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_csv_column(path: &Path, col: &str) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == col).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().to_string()).collect()
}

#[test]
fn stats_reports_example_one_mean_intensity() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.txt");
    std::fs::write(&model, EXAMPLE1).unwrap();
    let out = dir.path().join("stats");
    let (code, err) = hawkes(&["stats", "--model", p(&model), "--out", p(&out)]);
    assert_eq!(code, 0, "{err}");
    for v in read_csv_column(&out.join("mean_intensity.csv"), "lambda") {
        assert!((v.parse::<f64>().unwrap() - 2.0).abs() < 1e-12);
    }
    for f in ["covariance.csv", "causality.csv", "diffusion.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn simulate_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.txt");
    std::fs::write(&model, EXAMPLE1).unwrap();
    let sim = dir.path().join("sim");
    let (code, err) = hawkes(&["simulate", "--model", p(&model), "--horizon", "5000", "--seed", "11", "--out", p(&sim)]);
    assert_eq!(code, 0, "{err}");
    let fit = dir.path().join("fit");
    let events = sim.join("events.csv");
    let (code, err) = hawkes(&["fit", "--events", p(&events), "--method", "mle", "--beta", "shared", "--out", p(&fit)]);
    assert_eq!(code, 0, "{err}");
    let names = read_csv_column(&fit.join("parameters.csv"), "name");
    let values = read_csv_column(&fit.join("parameters.csv"), "value");
    let ses = read_csv_column(&fit.join("parameters.csv"), "stderr");
    let truth = |name: &str| match name {
        "mu[0]" | "mu[1]" | "beta" => 1.0,
        "alpha[0][0]" | "alpha[1][1]" => 0.2,
        _ => 0.3,
    };
    for k in 0..names.len() {
        let v: f64 = values[k].parse().unwrap();
        let se: f64 = ses[k].parse().unwrap();
        assert!((v - truth(&names[k])).abs() < 4.0 * se, "{} = {v} ± {se}", names[k]);
    }
    // The fitted spec is a valid model file.
    let (code, err) = hawkes(&["stats", "--model", p(&fit.join("model.txt")), "--out", p(&dir.path().join("s"))]);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn gof_rejection_is_a_result() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.txt");
    std::fs::write(&model, "hawkes-model v1\ndimension = 1\nbaseline = 0.2\nkernel.0.0 = exponential alpha=0.8 beta=1.0\n").unwrap();
    let sim = dir.path().join("sim");
    assert_eq!(hawkes(&["simulate", "--model", p(&model), "--horizon", "5000", "--seed", "1", "--out", p(&sim)]).0, 0);
    let poisson = dir.path().join("poisson.txt");
    std::fs::write(&poisson, "hawkes-model v1\ndimension = 1\nbaseline = 1.0\nkernel.0.0 = zero\n").unwrap();
    let out = dir.path().join("gof");
    let (code, err) = hawkes(&["gof", "--model", p(&poisson), "--events", p(&sim.join("events.csv")), "--out", p(&out)]);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(out.join("ks.csv")).unwrap();
    let pooled = text.lines().find(|l| l.starts_with("pooled")).unwrap();
    let pv: f64 = pooled.split(',').nth(3).unwrap().parse().unwrap();
    assert!(pv < 0.001, "{pooled}");
}

#[test]
fn exit_codes_by_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    // Usage: missing file, bad flag.
    assert_eq!(hawkes(&["fit", "--events", "/no/such/file.csv", "--out", p(&out)]).0, 1);
    assert_eq!(hawkes(&["simulate", "--horizon", "1"]).0, 1);
    // Data: unknown label, listed in the message.
    let ev = dir.path().join("ev.csv");
    std::fs::write(&ev, "time,component\n0.5,up\n1.0,sideways\n").unwrap();
    let (code, err) = hawkes(&["reflexivity", "--events", p(&ev), "--labels", "up=0,down=1", "--out", p(&out)]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("sideways"), "{err}");
    // Numerical: unstable model.
    let model = dir.path().join("m.txt");
    std::fs::write(&model, "hawkes-model v1\ndimension = 1\nbaseline = 1.0\nkernel.0.0 = exponential alpha=1.5 beta=1.0\n").unwrap();
    assert_eq!(hawkes(&["stats", "--model", p(&model), "--out", p(&out)]).0, 3);
    // Conflicting method/family.
    std::fs::write(&ev, "time,component\n0.5,0\n1.0,0\n").unwrap();
    assert_eq!(hawkes(&["fit", "--events", p(&ev), "--method", "contrast", "--out", p(&out)]).0, 1);
}

#[test]
fn labelled_ndjson_signature_and_impact() {
    let dir = tempfile::tempdir().unwrap();
    let ev = dir.path().join("ev.ndjson");
    let mut text = String::new();
    for k in 0..400 {
        let label = if k % 3 == 0 { "down" } else { "up" };
        text.push_str(&format!("{{\"t\": {}, \"c\": \"{label}\"}}\n", 1000 * k + 500));
    }
    std::fs::write(&ev, text).unwrap();
    let out = dir.path().join("sig");
    let (code, err) = hawkes(&[
        "signature", "--events", p(&ev), "--labels", "up=0,down=1", "--time-scale", "0.001", "--taus", "1,2", "--out", p(&out),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(read_csv_column(&out.join("signature.csv"), "tau"), vec!["1.0", "2.0"]);

    let cfg = dir.path().join("him.txt");
    std::fs::write(&cfg, "hawkes-him v1\nkernel = exponential alpha=0.5 beta=1.0\ncontrarian = 0.0\n").unwrap();
    let out = dir.path().join("imp");
    let (code, err) = hawkes(&[
        "impact", "--config", p(&cfg), "--breaks", "0,2", "--rates", "1", "--paths", "50", "--until", "10", "--grid-points", "5",
        "--out", p(&out),
    ]);
    assert_eq!(code, 0, "{err}");
    let header = std::fs::read_to_string(out.join("impact.csv")).unwrap();
    assert!(header.starts_with("grid,value,stderr\n"));
}

#[test]
fn manifests_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.txt");
    std::fs::write(&model, EXAMPLE1).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        assert_eq!(hawkes(&["simulate", "--model", p(&model), "--horizon", "200", "--seed", "5", "--out", p(&out)]).0, 0);
        std::fs::read(out.join("manifest.json")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let m: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(m["seed"], 5);
    assert_eq!(m["outputs"][0]["path"], "events.csv");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}
