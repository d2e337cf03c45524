use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn selbayes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selbayes")).args(args).env("RUST_BACKTRACE", "0").output().expect("spawn selbayes")
}

fn ok(args: &[&str]) -> String {
    let out = selbayes(args);
    assert!(out.status.success(), "{:?} failed: {}", args, String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_data(path: &Path) {
    // small deterministic design with two strong signals
    let mut text = String::from("a,b,c,resp\n");
    for i in 0..12 {
        let t = i as f64;
        let a = (0.7 * t).sin() / 3.5;
        let b = (1.3 * t + 0.4).cos() / 3.5;
        let c = ((t * t) % 5.0 - 2.0) / 10.0;
        let y = 8.0 * a - 6.0 * c + 0.3 * (2.1 * t).sin();
        text.push_str(&format!("{a},{b},{c},{y}\n"));
    }
    fs::write(path, text).unwrap();
}

const CONFIG: &str = r#"
name = "tiny"
n = 30
p = 6
trials = 3
seed = 11
formulation = "dual"
model = { kind = "sparse", support = 2, amplitude = 5.0 }
query = { kind = "lasso_fixed" }

[sampler]
burn_in = 100
draws = 300
"#;

#[test]
fn query_selectprob_oracle_and_sample() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_data(&data);
    let prob = dir.path().join("p.json");
    let q: serde_json::Value =
        serde_json::from_str(&ok(&["query", "lasso", "--data", data.to_str().unwrap(), "--response", "resp", "--lambda", "0.5", "--seed", "4", "--out", prob.to_str().unwrap()])).unwrap();
    let e = q["E"].as_array().unwrap().len();
    assert!(e >= 1);
    let beta = vec!["0.5"; e].join(",");
    let p = prob.to_str().unwrap();

    let sp: serde_json::Value = serde_json::from_str(&ok(&["selectprob", "--problem", p, "--beta", &beta])).unwrap();
    let value = sp["value"].as_f64().unwrap();
    assert!(value <= 0.0 && value.is_finite());
    assert!(sp["converged"].as_bool().unwrap());
    assert_eq!(sp["s_star"].as_array().unwrap().len(), 12);

    let mc: serde_json::Value = serde_json::from_str(&ok(&["oracle", "--problem", p, "--beta", &beta, "--draws", "20000", "--seed", "1"])).unwrap();
    let lp = mc["log_probability"].as_f64().unwrap();
    assert!(lp <= 0.0);

    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["sample", "--problem", p, "--iterations", "400", "--burn-in", "100", "--seed", "9", "--out", out.to_str().unwrap()]);
        (fs::read(out.join("chain.csv")).unwrap(), fs::read_to_string(out.join("summary.json")).unwrap())
    };
    let (c1, s1) = run("s1");
    let (c2, s2) = run("s2");
    assert_eq!(c1, c2);
    assert_eq!(s1, s2);
    let summary: serde_json::Value = serde_json::from_str(&s1).unwrap();
    for key in ["mean", "ci_lower", "ci_upper", "ess_estimate"] {
        assert_eq!(summary[key].as_array().unwrap().len(), e, "{key}");
    }
    assert_eq!(String::from_utf8(c1).unwrap().lines().count(), 301);
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        ok(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        outputs.push(files);
    }
    let names: Vec<&str> = outputs[0].iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"metrics.csv") && names.contains(&"manifest.json"));
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, format!("{CONFIG}\nunknown_key = 3\n")).unwrap();
    let out = selbayes(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown"));

    let data = dir.path().join("d.csv");
    write_data(&data);
    let out = selbayes(&["query", "lasso", "--data", data.to_str().unwrap(), "--response", "nope", "--out", dir.path().join("p.json").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}
