use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fepls::basis::BasisSpec;
use fepls::coords::{CoordMethod, FunctionalDataset, Response};
use fepls::io;
use fepls::pipeline::{self, Dimension};

fn fepls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fepls"))
        .args(args)
        .env("FEPLS_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = fepls(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn generate(dir: &Path, scenario: &str, n: usize, seed: u64) -> PathBuf {
    let out = dir.join(scenario);
    ok(&[
        "simulate",
        "--experiment",
        "data",
        "--scenario",
        scenario,
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        out.to_str().unwrap(),
    ]);
    out
}

fn read_csv(path: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    (header, rows)
}

fn assert_user_error(out: &Output) {
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));
}

#[test]
fn simulate_table_has_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "table.csv");
    ok(&[
        "simulate",
        "--scenario",
        "categorical",
        "--n",
        "640",
        "--reps",
        "5",
        "--seed",
        "1",
        "--test-size",
        "1000",
        "--out",
        &out,
    ]);
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["scenario", "method", "n", "mean", "mc_se", "reps"]);
    let methods: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(methods, ["gfepls", "glm"]);
    for r in &rows {
        assert_eq!(r[5], "5");
        let rate: f64 = r[3].parse().unwrap();
        assert!((0.0..0.5).contains(&rate));
    }
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path(dir.path(), "table.config.json")).unwrap()).unwrap();
    assert_eq!(echo["invocation"]["seed"], 1);
    assert_eq!(
        echo["resolved"]["table"]["methods"],
        serde_json::json!(["gfepls", "glm"])
    );
}

#[test]
fn fit_then_predict_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "functional_response", 80, 3);
    let xs: Vec<String> = (1..=3).map(|j| path(&data, &format!("x{j}.csv"))).collect();
    let model = path(dir.path(), "model.json");
    let mut args = vec!["fit"];
    for x in &xs {
        args.extend(["--x", x.as_str()]);
    }
    let y = path(&data, "y.csv");
    args.extend([
        "--y",
        &y,
        "--basis-x",
        "spline:k=5",
        "--basis-y",
        "spline:k=6",
        "--u",
        "2",
        "--out",
        &model,
    ]);
    ok(&args);
    assert!(Path::new(&path(dir.path(), "model.config.json")).exists());

    let pred = path(dir.path(), "pred.csv");
    let mut args = vec!["predict", "--model", &model];
    for x in &xs {
        args.extend(["--x", x.as_str()]);
    }
    args.extend(["--out", &pred]);
    ok(&args);

    let loaded: Vec<_> = xs
        .iter()
        .map(|x| io::read_functional_csv(Path::new(x), None).unwrap())
        .collect();
    let yv = io::read_functional_csv(Path::new(&y), None).unwrap();
    let data = FunctionalDataset::new(
        loaded.iter().map(|l| l.variable.clone()).collect(),
        Response::Functional(yv.variable.clone()),
    )
    .unwrap();
    let bx = vec![
        BasisSpec::NaturalSpline {
            knots: fepls::basis::equispaced_grid(5),
            quadrature_nodes: 2001
        }
        .build()
        .unwrap();
        3
    ];
    let by = "spline:k=6".parse::<BasisSpec>().unwrap().build().unwrap();
    let fit = pipeline::fit_fepls(&data, &bx, Some(&by), Dimension::Fixed(2), CoordMethod::Ols).unwrap();
    let fepls::coords::FunctionalVariable::Common { grid, .. } = &yv.variable else {
        panic!("common grid expected")
    };
    let expected = pipeline::predict_function(&fit, data.predictors(), grid).unwrap();

    let (header, rows) = read_csv(&pred);
    assert_eq!(header.len(), grid.len());
    assert_eq!(rows.len(), 80);
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            assert_eq!(v.parse::<f64>().unwrap().to_bits(), expected[(i, j)].to_bits());
        }
    }
}

#[test]
fn intervals_are_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "vector_response", 120, 2);
    let x = path(&data, "x1.csv");
    let model = path(dir.path(), "m.json");
    ok(&[
        "fit",
        "--x",
        &x,
        "--y",
        &path(&data, "y.csv"),
        "--response",
        "vector",
        "--basis-x",
        "spline:k=6",
        "--out",
        &model,
    ]);
    let out = path(dir.path(), "iv.csv");
    ok(&["interval", "--model", &model, "--x", &x, "--t0", "0,3", "--out", &out]);
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["subject", "t0", "kind", "point", "lower", "upper", "level"]);
    assert_eq!(rows.len(), 120 * 2 * 2);
    for pair in rows.chunks(2) {
        let num = |r: &Vec<String>, k: usize| r[k].parse::<f64>().unwrap();
        assert_eq!(pair[0][2], "confidence");
        assert_eq!(pair[1][2], "prediction");
        assert_eq!(num(&pair[0], 3), num(&pair[1], 3));
        assert!(num(&pair[1], 4) <= num(&pair[0], 4) && num(&pair[0], 4) <= num(&pair[0], 3));
        assert!(num(&pair[0], 3) <= num(&pair[0], 5) && num(&pair[0], 5) <= num(&pair[1], 5));
    }
    let json_out = path(dir.path(), "iv.json");
    ok(&[
        "interval",
        "--model",
        &model,
        "--x",
        &x,
        "--t0",
        "1",
        "--kind",
        "confidence",
        "--format",
        "json",
        "--out",
        &json_out,
    ]);
    let parsed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json_out).unwrap()).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), 120);
    assert_user_error(&fepls(&[
        "interval", "--model", &model, "--x", &x, "--t0", "7", "--out", &out,
    ]));
}

// In five spline coordinates the population envelope is not exactly
// two-dimensional, and BIC lands on 1 or 2 depending on the draw.
#[test]
fn select_dim_reports_the_bic_argmin() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "categorical", 640, 0);
    let out = path(dir.path(), "bic.csv");
    let run = ok(&[
        "select-dim",
        "--x",
        &path(&data, "x1.csv"),
        "--y",
        &path(&data, "y.csv"),
        "--response",
        "binary",
        "--basis-x",
        "spline:k=5",
        "--out",
        &out,
    ]);
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["u", "loglik", "params", "bic", "ok"]);
    assert_eq!(rows[0][0], "0");
    let argmin = rows
        .iter()
        .min_by(|a, b| a[3].parse::<f64>().unwrap().total_cmp(&b[3].parse::<f64>().unwrap()))
        .unwrap()[0]
        .clone();
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains(&format!("selected u = {argmin}")), "{stderr}");
    assert!(argmin == "1" || argmin == "2", "{argmin}");
}

#[test]
fn binary_predictions_and_json_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "categorical", 200, 4);
    let x = path(&data, "x1.csv");
    let model = path(dir.path(), "m.json");
    ok(&[
        "fit",
        "--x",
        &x,
        "--y",
        &path(&data, "y.csv"),
        "--response",
        "binary",
        "--basis-x",
        "spline:k=5",
        "--u",
        "1",
        "--out",
        &model,
    ]);
    let text = std::fs::read_to_string(&model).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed["format"], "fepls-model");
    assert_eq!(parsed["model"]["fit"]["family"], "binomial");
    assert_eq!(parsed["x_domains"][0]["lo"], 0.0);
    let out = path(dir.path(), "p.json");
    ok(&[
        "predict", "--model", &model, "--x", &x, "--format", "json", "--out", &out,
    ]);
    let p: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(p["label"].as_array().unwrap().len(), 200);
    assert_user_error(&fepls(&[
        "interval", "--model", &model, "--x", &x, "--t0", "0", "--out", &out,
    ]));
}

#[test]
fn user_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = path(dir.path(), "missing.csv");
    let out = path(dir.path(), "o.json");
    assert_user_error(&fepls(&[
        "fit",
        "--x",
        &missing,
        "--y",
        &missing,
        "--basis-x",
        "fourier:m=3",
        "--out",
        &out,
    ]));

    let bad = path(dir.path(), "bad.csv");
    std::fs::write(&bad, "0,0.5,1\n1,2,3\n4,oops,6\n").unwrap();
    let run = fepls(&[
        "fit",
        "--x",
        &bad,
        "--y",
        &bad,
        "--basis-x",
        "fourier:m=3",
        "--basis-y",
        "fourier:m=3",
        "--out",
        &out,
    ]);
    assert_user_error(&run);
    assert!(String::from_utf8_lossy(&run.stderr).contains("line 3"));

    let data = generate(dir.path(), "vector_response", 40, 0);
    let x = path(&data, "x1.csv");
    let y = path(&data, "y.csv");
    assert_user_error(&fepls(&[
        "fit",
        "--x",
        &x,
        "--y",
        &y,
        "--response",
        "vector",
        "--basis-x",
        "wavelet:m=3",
        "--out",
        &out,
    ]));
    assert_user_error(&fepls(&[
        "fit",
        "--x",
        &x,
        "--y",
        &y,
        "--response",
        "vector",
        "--basis-x",
        "spline:k=6",
        "--u",
        "9",
        "--out",
        &out,
    ]));
    ok(&[
        "fit",
        "--x",
        &x,
        "--y",
        &y,
        "--response",
        "vector",
        "--basis-x",
        "spline:k=6",
        "--out",
        &out,
    ]);
    assert_user_error(&fepls(&[
        "predict",
        "--model",
        &out,
        "--x",
        &x,
        "--x",
        &x,
        "--out",
        &path(dir.path(), "p.csv"),
    ]));
    assert_user_error(&fepls(&[
        "simulate",
        "--scenario",
        "nope",
        "--out",
        &path(dir.path(), "s.csv"),
    ]));

    let run = Command::new(env!("CARGO_BIN_EXE_fepls"))
        .args([
            "simulate",
            "--experiment",
            "data",
            "--n",
            "5",
            "--out",
            &path(dir.path(), "d"),
        ])
        .env("FEPLS_THREADS", "many")
        .output()
        .unwrap();
    assert_user_error(&run);
}

#[test]
fn convergence_and_coverage_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "conv.csv");
    ok(&[
        "simulate",
        "--experiment",
        "convergence",
        "--m-x",
        "4,6",
        "--n",
        "200,400",
        "--reps",
        "2",
        "--out",
        &out,
    ]);
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["m_x", "n", "u", "error", "error_se", "truncation_bias"]);
    assert_eq!(rows.len(), 2);
    let out = path(dir.path(), "cov.json");
    ok(&[
        "simulate",
        "--experiment",
        "coverage",
        "--n",
        "200",
        "--reps",
        "3",
        "--format",
        "json",
        "--out",
        &out,
    ]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["points"].as_array().unwrap().len(), 5);
}
