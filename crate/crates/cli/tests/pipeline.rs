use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fsu_demand::{AidsParameters, GroundTruth};
use fsu_demand_cli::commands::{self, Context};
use fsu_demand_cli::PipelineConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn bin(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsu-demand"))
        .arg("--config")
        .arg(config)
        .arg("--output-dir")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("pipeline.toml");
    fs::write(&path, body).unwrap();
    path
}

const SMALL_SIM: &str = "seed = 3\ncramer_permutations = 100\n\
    [simulate]\nn_households = 400\nn_fsus = 40\nn_states = 4\nseed = 11\n";

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_report(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("error report on stderr");
    serde_json::from_str(line).unwrap()
}

#[test]
fn zero_noise_simulation_is_recovered_by_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: PipelineConfig = PipelineConfig {
        output_dir: dir.path().to_path_buf(),
        ..PipelineConfig::from_toml(
            "[simulate]\nn_households = 600\nn_fsus = 60\nshare_noise_sd = 0.0\nseed = 5\n",
        )
        .unwrap()
    };
    let ctx = Context::new(cfg).unwrap();
    commands::cmd_simulate(&ctx).unwrap();
    commands::cmd_ingest(&ctx).unwrap();
    commands::cmd_fit(&ctx).unwrap();
    let truth: GroundTruth = read_json(&dir.path().join("simulate/ground_truth.json"));
    let fitted: AidsParameters = read_json(&dir.path().join("fit/original_params.json"));
    let n = fitted.items.len();
    for i in 0..n {
        assert!((fitted.alpha[i] - truth.params.alpha[i]).abs() < 1e-8);
        assert!((fitted.beta[i] - truth.params.beta[i]).abs() < 1e-8);
        for j in 0..n {
            assert!((fitted.gamma[(i, j)] - truth.params.gamma[(i, j)]).abs() < 1e-8);
        }
    }
    // only the original dataset exists, so nothing was fitted for the uniform one
    assert!(!dir.path().join("fit/uniform_params.json").exists());
}

#[test]
fn dataset_compared_with_itself_is_accepted_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("{SMALL_SIM}state_effect_sd = 0.02\n"));
    let out = dir.path().join("out");
    let run = |cmd: &str| {
        let o = bin(&[cmd], &config, &out);
        assert!(
            o.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    };
    run("simulate");
    run("ingest");
    // stand the original dataset in for the uniform one
    fs::create_dir_all(out.join("uniformize")).unwrap();
    fs::copy(
        out.join("ingest/original.csv"),
        out.join("uniformize/uniform.csv"),
    )
    .unwrap();
    for cmd in ["fit", "state-effects", "compare-shares"] {
        run(cmd);
    }
    let ks: Vec<Value> = read_json(&out.join("compare-shares/ks_table.json"));
    assert_eq!(ks.len(), 4);
    for row in &ks {
        assert_eq!(row["d_without_state_effects"], 0.0);
        assert_eq!(row["p_without_state_effects"], 1.0);
        assert_eq!(row["p_with_state_effects"], 1.0);
        assert_eq!(row["decision_with_state_effects"], "accept");
    }
    let cramer: Value = read_json(&out.join("compare-shares/cramer.json"));
    for key in ["without_state_effects", "with_state_effects"] {
        assert_eq!(cramer[key]["statistic"], 0.0);
        assert_eq!(cramer[key]["p_value"], 1.0);
    }
}

#[test]
fn rerunning_a_command_reproduces_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_SIM);
    let out = dir.path().join("out");
    assert!(bin(&["run"], &config, &out).status.success());
    let first = fs::read(out.join("mecor-cv/cv_result.json")).unwrap();
    let manifest = fs::read(out.join("mecor-cv/manifest.json")).unwrap();
    assert!(bin(&["mecor-cv"], &config, &out).status.success());
    assert_eq!(
        fs::read(out.join("mecor-cv/cv_result.json")).unwrap(),
        first
    );
    assert_eq!(
        fs::read(out.join("mecor-cv/manifest.json")).unwrap(),
        manifest
    );

    let m: Value = read_json(&out.join("mecor-cv/manifest.json"));
    assert_eq!(m["seeds"]["cv"], 3);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    let text = String::from_utf8(manifest).unwrap();
    assert!(!text.contains(&*dir.path().to_string_lossy()));
}

#[test]
fn seed_flag_changes_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_SIM);
    let out = dir.path().join("out");
    assert!(bin(&["simulate"], &config, &out).status.success());
    let a: Value = read_json(&out.join("simulate/manifest.json"));
    assert!(bin(&["--seed", "99", "simulate"], &config, &out)
        .status
        .success());
    let b: Value = read_json(&out.join("simulate/manifest.json"));
    assert_ne!(a["config_sha256"], b["config_sha256"]);
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("level = 1.5\n{SMALL_SIM}"));
    let o = bin(&["simulate"], &config, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let r = stderr_report(&o);
    assert_eq!(r["class"], "config");
    assert_eq!(r["command"], "simulate");

    let config = write_config(
        dir.path(),
        "folds = 1\ninput = \"x.csv\"\nitems = [\"a\", \"b\"]\n",
    );
    assert_eq!(
        bin(&["ingest"], &config, &dir.path().join("out"))
            .status
            .code(),
        Some(2)
    );

    let config = write_config(dir.path(), "colour = \"blue\"\n");
    assert_eq!(
        bin(&["ingest"], &config, &dir.path().join("out"))
            .status
            .code(),
        Some(2)
    );

    // uniformize before ingest: the upstream artifact is missing
    let config = write_config(dir.path(), SMALL_SIM);
    let o = bin(&["uniformize"], &config, &dir.path().join("empty"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_report(&o)["message"]
        .as_str()
        .unwrap()
        .contains("ingest"));
}

#[test]
fn data_errors_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "input = \"missing.csv\"\nitems = [\"a\", \"b\"]\n",
    );
    let o = bin(&["ingest"], &config, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_report(&o)["class"], "data");

    fs::write(dir.path().join("missing.csv"), "HHID,STATE,MULT,MPCE\n").unwrap();
    let o = bin(&["ingest"], &config, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
}

fn constant_price_survey(path: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut text = String::from("HHID,STATE,MULT,MPCE,NHQ_a,NHV_a,NHQ_b,NHV_b\n");
    for h in 0..40 {
        // equal unit values everywhere: the price regressors are collinear with the intercept
        let qa: f64 = rng.random_range(1.0..5.0);
        let qb: f64 = rng.random_range(1.0..5.0);
        text.push_str(&format!(
            "{:07}{:02},{},1,100,{qa},{},{qb},{}\n",
            h / 4 + 1,
            h % 4 + 1,
            h % 3 + 1,
            qa * 2.0,
            qb * 3.0
        ));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn estimation_errors_exit_with_code_4_and_leave_only_partials() {
    let dir = tempfile::tempdir().unwrap();
    constant_price_survey(&dir.path().join("survey.csv"));
    let config = write_config(
        dir.path(),
        "input = \"survey.csv\"\nitems = [\"a\", \"b\"]\n",
    );
    let out = dir.path().join("out");
    assert!(bin(&["ingest"], &config, &out).status.success());
    let o = bin(&["fit"], &config, &out);
    assert_eq!(o.status.code(), Some(4));
    let r = stderr_report(&o);
    assert_eq!(r["class"], "estimation");
    assert!(r["message"].as_str().unwrap().contains("rank-deficient"));
    assert!(!out.join("fit/original_params.json").exists());
    assert!(!out.join("fit/manifest.json").exists());
}

#[test]
fn column_mapping_renames_headers() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "hh,st,wt,pce,NHQ_a,NHV_a,NHQ_b,NHV_b\n\
               123456701,1,2,10,1,4,2,6\n\
               123456702,1,2,10,,,2,6\n\
               123456801,2,1,10,2,5,1,5\n";
    fs::write(dir.path().join("s.csv"), csv).unwrap();
    let config = write_config(
        dir.path(),
        "input = \"s.csv\"\nitems = [\"a\", \"b\"]\n\
         [columns]\nHHID = \"hh\"\nSTATE = \"st\"\nMULT = \"wt\"\nMPCE = \"pce\"\n",
    );
    let out = dir.path().join("out");
    let o = bin(&["ingest"], &config, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value = read_json(&out.join("ingest/original.json"));
    assert_eq!(m["n_rows"], 2);
    assert_eq!(m["build"]["na_dropped"], 1);
    let data = fsu_demand::DemandDataset::read_csv_file(out.join("ingest/original.csv")).unwrap();
    assert_eq!(data.households[0].fsu_id, "1234567");
    assert_eq!(data.households[1].weight, 1.0);
    let im: Value = read_json(&out.join("ingest/manifest.json"));
    assert_eq!(im["inputs"][0]["path"], "s.csv");
}

#[test]
fn run_writes_every_documented_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_SIM);
    let out = dir.path().join("out");
    let o = bin(
        &["--grid-preset", "joint-theta", "--folds", "4", "run"],
        &config,
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for rel in [
        "simulate/survey.csv",
        "ingest/original.csv",
        "uniformize/uniform.csv",
        "fit/original_residuals.csv",
        "state-effects/uniform.csv",
        "compare-shares/ks_table.csv",
        "mecor-cv/cv_grid.csv",
        "mecor-cv/corrected_params.json",
        "inequality/gini_table.csv",
        "inequality/lorenz/uniform_item4.csv",
        "elasticities/expenditure.csv",
        "elasticities/hicksian_original.csv",
        "elasticities/summary.json",
    ] {
        assert!(out.join(rel).is_file(), "{rel}");
    }
    let grid = fs::read_to_string(out.join("mecor-cv/cv_grid.csv")).unwrap();
    // header plus the 35 joint points
    assert_eq!(grid.lines().count(), 36);
    let cv: Value = read_json(&out.join("mecor-cv/cv_result.json"));
    assert_eq!(cv["folds"], 4);
    let gini = fs::read_to_string(out.join("inequality/gini_table.csv")).unwrap();
    assert!(gini.starts_with("item,data1,data2,phi_gap,decision\n"));
    let partials = walk_partials(&out);
    assert!(partials.is_empty(), "{partials:?}");
}

fn walk_partials(dir: &Path) -> Vec<String> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            found.extend(walk_partials(&p));
        } else if p.to_string_lossy().ends_with(".partial") {
            found.push(p.display().to_string());
        }
    }
    found
}
