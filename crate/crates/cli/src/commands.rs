//! Subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fepls::basis::{BasisSet, BasisSpec};
use fepls::coords::{CoordMethod, FunctionalDataset, FunctionalVariable, Response};
use fepls::io::{self, fmt_f64, Domain};
use fepls::pipeline::{self, Dimension, FeplsModel, IntervalKind};
use fepls::simlab::{self, ScenarioKind, ScenarioSpec};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::model_file::ModelFile;
use crate::{
    Cli, CliError, Command, DataArgs, Experiment, FitArgs, Format, IntervalArgs, IntervalChoice, PredictArgs,
    ResponseKind, SelectDimArgs, SimulateArgs,
};

type Result<T> = std::result::Result<T, CliError>;

fn user(msg: impl Into<String>) -> CliError {
    CliError::User(msg.into())
}

fn at(path: &Path, e: fepls::error::Error) -> CliError {
    match CliError::from(e) {
        CliError::User(m) => CliError::User(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let extra = match &cli.command {
        Command::Fit(a) => fit(a)?,
        Command::Predict(a) => predict(a)?,
        Command::Interval(a) => interval(a)?,
        Command::SelectDim(a) => select_dim(a)?,
        Command::Simulate(a) => simulate(a)?,
    };
    let out = match &cli.command {
        Command::Fit(a) => &a.out,
        Command::Predict(a) => &a.out,
        Command::Interval(a) => &a.out,
        Command::SelectDim(a) => &a.out,
        Command::Simulate(a) => &a.out,
    };
    write_config_echo(cli, out, extra)
}

/// Path of the resolved-config JSON written next to `out`.
pub fn config_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("config.json")
    } else {
        out.with_extension("config.json")
    }
}

fn write_config_echo(cli: &Cli, out: &Path, resolved: Value) -> Result<()> {
    let echo = json!({
        "fepls_version": env!("CARGO_PKG_VERSION"),
        "threads": rayon::current_num_threads(),
        "invocation": &cli.command,
        "resolved": resolved,
    });
    let path = config_path(out);
    let text = serde_json::to_string_pretty(&echo).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| user(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Internal(e.to_string()))?;
    writeln!(w)
        .and_then(|()| w.flush())
        .map_err(|e| user(format!("{}: {e}", path.display())))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| user(format!("{}: {e}", path.display())))
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = create(path)?;
    let io_err = |e: std::io::Error| user(format!("{}: {e}", path.display()));
    writeln!(w, "{}", header.join(",")).map_err(io_err)?;
    for r in rows {
        writeln!(w, "{}", r.join(",")).map_err(io_err)?;
    }
    finish(w, path)
}

fn parse_bases(specs: &[String], count: usize) -> Result<(Vec<BasisSpec>, Vec<BasisSet>)> {
    let parsed: Vec<BasisSpec> = specs
        .iter()
        .map(|s| s.parse::<BasisSpec>().map_err(|e| user(format!("basis `{s}`: {e}"))))
        .collect::<Result<_>>()?;
    let specs = match parsed.len() {
        1 => vec![parsed[0].clone(); count],
        k if k == count => parsed,
        k => return Err(user(format!("{k} predictor bases given for {count} predictors"))),
    };
    let sets = specs.iter().map(|s| s.build()).collect::<std::result::Result<_, _>>()?;
    Ok((specs, sets))
}

fn read_predictors(paths: &[PathBuf], domains: Option<&[Domain]>) -> Result<(Vec<FunctionalVariable>, Vec<Domain>)> {
    if let Some(d) = domains {
        if d.len() != paths.len() {
            return Err(user(format!(
                "model has {} predictors, {} files given",
                d.len(),
                paths.len()
            )));
        }
    }
    let mut vars = Vec::with_capacity(paths.len());
    let mut doms = Vec::with_capacity(paths.len());
    for (j, p) in paths.iter().enumerate() {
        let loaded = io::read_functional_csv(p, domains.map(|d| d[j])).map_err(|e| at(p, e))?;
        vars.push(loaded.variable);
        doms.push(loaded.domain);
    }
    let n = vars[0].n();
    if let Some((j, v)) = vars.iter().enumerate().find(|(_, v)| v.n() != n) {
        return Err(user(format!(
            "{} has {} subjects, {} has {n}",
            paths[j].display(),
            v.n(),
            paths[0].display()
        )));
    }
    Ok((vars, doms))
}

struct Training {
    data: FunctionalDataset,
    x_domains: Vec<Domain>,
    y_domain: Option<Domain>,
    y_grid: Option<Vec<f64>>,
    bases_x: Vec<BasisSet>,
    basis_y: Option<BasisSet>,
    method: CoordMethod,
    resolved: Value,
}

fn load_training(a: &DataArgs) -> Result<Training> {
    let (predictors, x_domains) = read_predictors(&a.x, None)?;
    let (specs_x, bases_x) = parse_bases(&a.basis_x, predictors.len())?;
    let mut y_domain = None;
    let mut y_grid = None;
    let response = match a.response {
        ResponseKind::Functional => {
            let loaded = io::read_functional_csv(&a.y, None).map_err(|e| at(&a.y, e))?;
            if let FunctionalVariable::Common { grid, .. } = &loaded.variable {
                y_grid = Some(grid.iter().map(|&t| loaded.domain.from_unit(t)).collect());
            }
            y_domain = Some(loaded.domain);
            Response::Functional(loaded.variable)
        }
        ResponseKind::Vector => Response::Vector {
            values: io::read_matrix_csv(&a.y).map_err(|e| at(&a.y, e))?,
        },
        ResponseKind::Binary => Response::Binary {
            labels: io::read_labels_csv(&a.y).map_err(|e| at(&a.y, e))?,
        },
    };
    let spec_y = match (a.response, &a.basis_y) {
        (ResponseKind::Functional, Some(s)) => {
            Some(s.parse::<BasisSpec>().map_err(|e| user(format!("basis `{s}`: {e}")))?)
        }
        (ResponseKind::Functional, None) => return Err(user("a functional response needs --basis-y")),
        (_, Some(_)) => return Err(user("--basis-y applies only to a functional response")),
        (_, None) => None,
    };
    let basis_y = spec_y.as_ref().map(BasisSpec::build).transpose()?;
    let method = match a.ridge {
        Some(lambda) if lambda > 0.0 && lambda.is_finite() => CoordMethod::Ridge { lambda },
        Some(lambda) => return Err(user(format!("ridge penalty {lambda} must be positive"))),
        None => CoordMethod::Ols,
    };
    let data = FunctionalDataset::new(predictors, response)?;
    let resolved = json!({
        "n": data.n(),
        "bases_x": specs_x,
        "basis_y": spec_y,
        "coord_method": method,
        "x_domains": x_domains,
        "y_domain": y_domain,
    });
    Ok(Training {
        data,
        x_domains,
        y_domain,
        y_grid,
        bases_x,
        basis_y,
        method,
        resolved,
    })
}

fn parse_dimension(u: &str, u_max: Option<usize>) -> Result<Dimension> {
    if u.eq_ignore_ascii_case("auto") {
        return Ok(Dimension::Auto { u_max });
    }
    u.parse::<usize>()
        .map(Dimension::Fixed)
        .map_err(|_| user(format!("--u `{u}` is neither a dimension nor `auto`")))
}

fn fit_training(t: &Training, dim: Dimension) -> Result<FeplsModel> {
    let model = if t.data.response().is_binary() {
        pipeline::fit_gfepls(&t.data, &t.bases_x, dim, t.method)?
    } else {
        pipeline::fit_fepls(&t.data, &t.bases_x, t.basis_y.as_ref(), dim, t.method)?
    };
    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
    Ok(model)
}

fn fit(a: &FitArgs) -> Result<Value> {
    let t = load_training(&a.data)?;
    let model = fit_training(&t, parse_dimension(&a.u, a.u_max)?)?;
    let u = model.u();
    let mut resolved = t.resolved.clone();
    resolved["u"] = json!(u);
    ModelFile::new(model, t.x_domains, t.y_domain, t.y_grid).save(&a.out)?;
    Ok(resolved)
}

fn unit_grid(points: &[f64], domain: Domain) -> Result<Vec<f64>> {
    points
        .iter()
        .map(|&t| {
            if t < domain.lo || t > domain.hi {
                Err(user(format!(
                    "point {t} lies outside the response domain [{}, {}]",
                    domain.lo, domain.hi
                )))
            } else {
                Ok(domain.to_unit(t))
            }
        })
        .collect()
}

fn predict(a: &PredictArgs) -> Result<Value> {
    let file = ModelFile::load(&a.model)?;
    let model = &file.model;
    let (predictors, _) = read_predictors(&a.x, Some(&file.x_domains))?;
    if model.logistic().is_ok() {
        let prob = pipeline::predict_prob(model, &predictors)?;
        let labels: Vec<u8> = prob.iter().map(|&p| u8::from(p > a.threshold)).collect();
        match a.format {
            Format::Csv => {
                let rows: Vec<Vec<String>> = prob
                    .iter()
                    .zip(&labels)
                    .map(|(&p, &l)| vec![fmt_f64(p), l.to_string()])
                    .collect();
                write_rows(&a.out, &["prob".into(), "label".into()], &rows)?;
            }
            Format::Json => write_json(&a.out, &json!({"prob": prob.as_slice(), "label": labels}))?,
        }
        return Ok(json!({"n": prob.len(), "threshold": a.threshold}));
    }
    let (header, values, grid) = match (&model.basis_y, file.y_domain) {
        (Some(_), Some(domain)) => {
            let grid = match (&a.grid, &file.y_grid) {
                (Some(g), _) => g.0.clone(),
                (None, Some(g)) => g.clone(),
                (None, None) => return Err(user("model has no common response grid; pass --grid")),
            };
            let pred = pipeline::predict_function(model, &predictors, &unit_grid(&grid, domain)?)?;
            (grid.iter().map(|&t| fmt_f64(t)).collect::<Vec<_>>(), pred, Some(grid))
        }
        _ => {
            let x = model.coordinates(&predictors)?;
            let pred = pipeline::predict_coords(model, &x)?;
            ((1..=pred.ncols()).map(|j| format!("y{j}")).collect(), pred, None)
        }
    };
    match a.format {
        Format::Csv => write_rows(&a.out, &header, &matrix_rows(&values))?,
        Format::Json => write_json(&a.out, &json!({"grid": grid, "predictions": row_vectors(&values)}))?,
    }
    Ok(json!({"n": values.nrows(), "grid": grid}))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<String>> {
    m.row_iter().map(|r| r.iter().map(|&v| fmt_f64(v)).collect()).collect()
}

fn row_vectors(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Serialize)]
struct IntervalRow {
    subject: usize,
    t0: f64,
    kind: IntervalKind,
    point: f64,
    lower: f64,
    upper: f64,
    level: f64,
}

fn interval(a: &IntervalArgs) -> Result<Value> {
    let file = ModelFile::load(&a.model)?;
    let model = &file.model;
    model.linear()?;
    let (predictors, _) = read_predictors(&a.x, Some(&file.x_domains))?;
    let positions = match file.y_domain {
        Some(domain) if model.basis_y.is_some() => unit_grid(&a.t0, domain)?,
        _ => a.t0.clone(),
    };
    let kinds = match a.kind {
        IntervalChoice::Confidence => vec![IntervalKind::Confidence],
        IntervalChoice::Prediction => vec![IntervalKind::Prediction],
        IntervalChoice::Both => vec![IntervalKind::Confidence, IntervalKind::Prediction],
    };
    let mut rows = Vec::new();
    for i in 0..predictors[0].n() {
        let one: Vec<FunctionalVariable> = predictors.iter().map(|p| p.select(&[i])).collect();
        for (&t0, &pos) in a.t0.iter().zip(&positions) {
            for &kind in &kinds {
                let est = pipeline::interval(model, &one, pos, a.level, kind)?;
                rows.push(IntervalRow {
                    subject: i,
                    t0,
                    kind,
                    point: est.point,
                    lower: est.lower,
                    upper: est.upper,
                    level: a.level,
                });
            }
        }
    }
    match a.format {
        Format::Csv => {
            let header: Vec<String> = ["subject", "t0", "kind", "point", "lower", "upper", "level"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.subject.to_string(),
                        fmt_f64(r.t0),
                        match r.kind {
                            IntervalKind::Confidence => "confidence".into(),
                            IntervalKind::Prediction => "prediction".into(),
                        },
                        fmt_f64(r.point),
                        fmt_f64(r.lower),
                        fmt_f64(r.upper),
                        fmt_f64(r.level),
                    ]
                })
                .collect();
            write_rows(&a.out, &header, &body)?;
        }
        Format::Json => write_json(&a.out, &rows)?,
    }
    Ok(json!({"rows": rows.len(), "z": pipeline::normal_quantile(a.level)?}))
}

fn select_dim(a: &SelectDimArgs) -> Result<Value> {
    let t = load_training(&a.data)?;
    let model = fit_training(&t, Dimension::Auto { u_max: a.u_max })?;
    let table = model
        .bic_table
        .clone()
        .ok_or_else(|| CliError::Internal("dimension selection produced no table".into()))?;
    let selected = model.u();
    match a.format {
        Format::Csv => {
            let header: Vec<String> = ["u", "loglik", "params", "bic", "ok"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let rows: Vec<Vec<String>> = table
                .iter()
                .map(|r| {
                    vec![
                        r.u.to_string(),
                        fmt_f64(r.loglik),
                        r.params.to_string(),
                        fmt_f64(r.bic),
                        r.ok.to_string(),
                    ]
                })
                .collect();
            write_rows(&a.out, &header, &rows)?;
        }
        Format::Json => write_json(&a.out, &json!({"selected_u": selected, "table": table}))?,
    }
    eprintln!("selected u = {selected}");
    let mut resolved = t.resolved.clone();
    resolved["selected_u"] = json!(selected);
    resolved["u_max"] = json!(table.last().map(|r| r.u));
    Ok(resolved)
}

fn simulate(a: &SimulateArgs) -> Result<Value> {
    let scenario: ScenarioKind = a.scenario.parse()?;
    if a.n.is_empty() {
        return Err(user("--n needs at least one sample size"));
    }
    match a.experiment {
        Experiment::Table => {
            let mut cfg = simlab::TableConfig::new(scenario, a.n.clone(), a.reps, a.seed);
            if let Some(ms) = &a.methods {
                cfg.methods = ms.iter().map(|m| m.parse()).collect::<std::result::Result<_, _>>()?;
            }
            cfg.test_size = a.test_size;
            let report = simlab::run_table(&cfg)?;
            match a.format {
                Format::Csv => {
                    let mut w = create(&a.out)?;
                    report.write_csv(&mut w)?;
                    finish(w, &a.out)?;
                }
                Format::Json => write_json(&a.out, &report)?,
            }
            Ok(json!({"table": cfg}))
        }
        Experiment::Coverage => {
            let cfg = simlab::CoverageConfig::new(a.n[0], a.reps, a.level, a.seed);
            let report = simlab::coverage_experiment(scenario, &cfg)?;
            match a.format {
                Format::Csv => {
                    let header: Vec<String> = ["t0", "confidence", "confidence_se", "prediction", "prediction_se"]
                        .iter()
                        .map(|s| s.to_string())
                        .collect();
                    let rows: Vec<Vec<String>> = report
                        .points
                        .iter()
                        .map(|p| {
                            [p.t0, p.confidence, p.confidence_se, p.prediction, p.prediction_se]
                                .iter()
                                .map(|&v| fmt_f64(v))
                                .collect()
                        })
                        .collect();
                    write_rows(&a.out, &header, &rows)?;
                }
                Format::Json => write_json(&a.out, &report)?,
            }
            Ok(json!({"coverage": cfg, "u": report.u}))
        }
        Experiment::Convergence => {
            let m_x = a
                .m_x
                .clone()
                .ok_or_else(|| user("the convergence experiment needs --m-x"))?;
            let mut cfg = simlab::ConvergenceConfig::new(m_x, a.n.clone(), !a.no_tail, a.seed);
            cfg.replications = a.reps;
            let report = simlab::convergence_experiment(&cfg)?;
            let slope = simlab::loglog_slope(&report.points);
            match a.format {
                Format::Csv => {
                    let header: Vec<String> = ["m_x", "n", "u", "error", "error_se", "truncation_bias"]
                        .iter()
                        .map(|s| s.to_string())
                        .collect();
                    let rows: Vec<Vec<String>> = report
                        .points
                        .iter()
                        .map(|p| {
                            vec![
                                p.m_x.to_string(),
                                p.n.to_string(),
                                p.u.to_string(),
                                fmt_f64(p.error),
                                fmt_f64(p.error_se),
                                fmt_f64(p.truncation_bias),
                            ]
                        })
                        .collect();
                    write_rows(&a.out, &header, &rows)?;
                }
                Format::Json => write_json(&a.out, &json!({"report": report, "loglog_slope": slope}))?,
            }
            Ok(json!({"convergence": cfg, "loglog_slope": slope}))
        }
        Experiment::Data => write_dataset(scenario, a),
    }
}

fn write_wide(path: &Path, grid: &[f64], values: &DMatrix<f64>) -> Result<()> {
    let header: Vec<String> = grid.iter().map(|&t| fmt_f64(t)).collect();
    write_rows(path, &header, &matrix_rows(values))
}

fn write_dataset(scenario: ScenarioKind, a: &SimulateArgs) -> Result<Value> {
    std::fs::create_dir_all(&a.out).map_err(|e| user(format!("{}: {e}", a.out.display())))?;
    let spec = ScenarioSpec::new(scenario, a.seed);
    let draw = spec.generate(&mut simlab::stream_rng(a.seed, 1), a.n[0])?;
    let mut files = Vec::new();
    for (j, p) in draw.data.predictors().iter().enumerate() {
        let FunctionalVariable::Common { grid, values } = p else {
            return Err(CliError::Internal("scenarios use a common grid".into()));
        };
        let path = a.out.join(format!("x{}.csv", j + 1));
        write_wide(&path, grid, values)?;
        files.push(path);
    }
    let y_path = a.out.join("y.csv");
    match draw.data.response() {
        Response::Functional(FunctionalVariable::Common { grid, values }) => write_wide(&y_path, grid, values)?,
        Response::Functional(_) => return Err(CliError::Internal("scenarios use a common grid".into())),
        Response::Vector { values } => {
            let header: Vec<String> = (1..=values.ncols()).map(|j| format!("y{j}")).collect();
            write_rows(&y_path, &header, &matrix_rows(values))?;
        }
        Response::Binary { labels } => {
            let rows: Vec<Vec<String>> = labels.iter().map(|l| vec![l.to_string()]).collect();
            write_rows(&y_path, &["label".into()], &rows)?;
        }
    }
    files.push(y_path);
    let (bx, _) = spec.bases()?;
    Ok(json!({
        "scenario": scenario,
        "n": draw.data.n(),
        "files": files,
        "suggested_basis_x": format!("spline:k={}", spec.knots_x.len()),
        "suggested_basis_y": spec.knots_y.as_ref().map(|k| format!("spline:k={}", k.len())),
        "m_x": bx.iter().map(BasisSet::size).sum::<usize>(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_path_sits_next_to_output() {
        assert_eq!(
            config_path(Path::new("/tmp/none/model.json")),
            PathBuf::from("/tmp/none/model.config.json")
        );
        assert_eq!(config_path(Path::new("out.csv")), PathBuf::from("out.config.json"));
    }

    #[test]
    fn dimensions_parse() {
        assert_eq!(
            parse_dimension("auto", Some(3)).unwrap(),
            Dimension::Auto { u_max: Some(3) }
        );
        assert_eq!(parse_dimension("2", None).unwrap(), Dimension::Fixed(2));
        assert!(parse_dimension("two", None).is_err());
    }

    #[test]
    fn one_basis_is_shared() {
        let (specs, sets) = parse_bases(&["fourier:m=5".into()], 3).unwrap();
        assert_eq!(specs.len(), 3);
        assert!(sets.iter().all(|b| b.size() == 5));
        assert!(parse_bases(&["fourier:m=5".into(), "fourier:m=3".into()], 3).is_err());
        assert!(parse_bases(&["wavelet:m=5".into()], 1).is_err());
    }

    #[test]
    fn grid_outside_domain_is_rejected() {
        let d = Domain::new(10.0, 20.0).unwrap();
        assert_eq!(unit_grid(&[10.0, 15.0], d).unwrap(), vec![0.0, 0.5]);
        assert!(unit_grid(&[25.0], d).is_err());
    }

    #[test]
    fn coordinate_errors_are_user_errors() {
        let e: CliError = fepls::coords::reconstruct(
            &nalgebra::DVector::zeros(2),
            &BasisSpec::Fourier {
                m: 3,
                quadrature_nodes: 11,
            }
            .build()
            .unwrap(),
            &[0.5],
        )
        .unwrap_err()
        .into();
        assert!(matches!(e, CliError::User(_)));
    }
}
