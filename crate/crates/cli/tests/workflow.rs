use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
[model]
neighbors = 3
scenario = 0
sites = 6
years = 36

[surrogate]
rows = 600
hidden = [8]
epochs = 2
batch_size = 100
test_rows = 200

[mcmc]
iterations = 300
burn_in = 100
thin = 2

[mcmc.marginal]
kind = "pooled"
active = [true, true, false, false, false, false, true, true]

[projection]
draws = 50
exceedance_draws = 4
exceedance_replicates = 2
"#;

fn npmm(args: &[&str], dir: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_npmm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "npmm {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn full_workflow_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("config.toml"), CONFIG).unwrap();
    let common = ["--config", "config.toml", "--seed", "17", "--threads", "1"];
    let with = |extra: &[&str]| -> Vec<String> { common.iter().chain(extra).map(|s| s.to_string()).collect() };
    let run = |args: Vec<String>| npmm(&args.iter().map(String::as_str).collect::<Vec<_>>(), d);

    run(with(&["simulate", "--out", "data"]));
    for f in ["sites.csv", "obs.csv", "covs.csv", "gcm.csv", "manifest.json"] {
        assert!(d.join("data").join(f).is_file(), "{f}");
    }
    let data = ["--sites", "data/sites.csv", "--obs", "data/obs.csv", "--covs", "data/covs.csv"];

    run(with(&["make-training", "--sites", "data/sites.csv", "--out", "rows"]));
    run(with(&["train", "--sites", "data/sites.csv", "--training", "rows", "--out", "nn"]));
    run(with(&["train", "--sites", "data/sites.csv", "--out", "nn2"]));
    // stored rows and on-the-fly rows share streams
    assert_eq!(read(d.join("nn/surrogate.ckpt")), read(d.join("nn2/surrogate.ckpt")));

    let mut fit = with(&["fit", "--surrogate", "nn/surrogate.ckpt", "--out", "fit1"]);
    fit.extend(data.iter().map(|s| s.to_string()));
    run(fit.clone());
    let fit2: Vec<String> = fit.iter().map(|s| if s == "fit1" { "fit2".into() } else { s.clone() }).collect();
    run(fit2);
    let a = read(d.join("fit1/posterior.csv"));
    assert!(!a.is_empty());
    assert_eq!(a, read(d.join("fit2/posterior.csv")));
    assert_eq!(read(d.join("fit1/run_manifest.json")), read(d.join("fit2/run_manifest.json")));

    let mut proj = with(&["project", "--fit", "fit1", "--gcm", "data/gcm.csv", "--out", "proj"]);
    proj.extend(data.iter().map(|s| s.to_string()));
    run(proj);
    for f in ["projection_summary.csv", "exceedance.csv", "projection/wet-model_summary.csv"] {
        assert!(d.join("proj").join(f).is_file(), "{f}");
    }

    let mut diag = with(&["diagnose", "--surrogate", "nn/surrogate.ckpt", "--fit", "fit1", "--out", "diag"]);
    diag.extend(data.iter().map(|s| s.to_string()));
    run(diag);
    for f in ["pit_summary.csv", "importance.csv", "posterior_summary.csv", "chi_empirical.csv"] {
        assert!(d.join("diag").join(f).is_file(), "{f}");
    }
}

#[test]
fn missing_inputs_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_npmm"))
        .args(["fit", "--surrogate", "none.ckpt", "--seed", "1"])
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--sites"));
}
