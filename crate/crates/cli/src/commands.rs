use crate::error::{CliError, CliResult};
use crate::io::{
    curve_csv, ensure_dir, manifest_files, read_events, read_json, write_json, write_text, Manifest, ManifestEntry,
    ModelFile,
};
use crate::{DataArgs, EvaluateArgs, FitArgs, Method, PredictArgs, QqArgs, SimulateArgs, TruthSource};
use hawkes_emv::baselines::{fit_misd, fit_parametric};
use hawkes_emv::emv::{fit_observed, FitConfig, IterationRecord};
use hawkes_emv::eval::{self, KsResult, DEFAULT_WARMUP_FRAC};
use hawkes_emv::simulate::{sample_many, synthetic_case, GroundTruth, TruthSpec};
use hawkes_emv::{EventSequence, Exec, FittedModel, HawkesModel};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Default triggering support when neither the flag nor a manifest gives one.
const DEFAULT_T_PHI: f64 = 6.0;

fn load_truth(source: &TruthSource) -> CliResult<Option<GroundTruth>> {
    match (source.case, &source.truth) {
        (Some(id), _) => Ok(Some(synthetic_case(id)?)),
        (None, Some(path)) => Ok(Some(GroundTruth::new(read_json::<TruthSpec>(path)?)?)),
        (None, None) => Ok(None),
    }
}

fn same_window(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

struct LoadedData {
    files: Vec<PathBuf>,
    /// How each file is named in reports: as given, or as listed in the manifest.
    labels: Vec<String>,
    seqs: Vec<EventSequence>,
    t_end: f64,
    manifest: Option<Manifest>,
}

/// Resolve the window from `--t-end`, the manifest and `fixed` (a model's
/// window); every source that is present must agree.
fn load_data(args: &DataArgs, fixed: Option<f64>) -> CliResult<LoadedData> {
    let manifest: Option<Manifest> = args.manifest.as_deref().map(read_json).transpose()?;
    let candidates = [
        ("the model", fixed),
        ("--t-end", args.t_end),
        ("the manifest", manifest.as_ref().map(|m| m.t_end)),
    ];
    let mut present = candidates.iter().filter_map(|(name, v)| v.map(|v| (*name, v)));
    let (first_name, t_end) = present
        .next()
        .ok_or_else(|| CliError::input("the observation window is unknown: pass --t-end or --manifest"))?;
    if let Some((name, other)) = present.find(|(_, v)| !same_window(*v, t_end)) {
        return Err(CliError::input(format!(
            "window mismatch: {first_name} has T = {t_end} but {name} has T = {other}"
        )));
    }
    let (files, labels) = if !args.data.is_empty() {
        let labels = args.data.iter().map(|p| p.display().to_string()).collect();
        (args.data.clone(), labels)
    } else if let (Some(path), Some(m)) = (&args.manifest, &manifest) {
        (
            manifest_files(path, m),
            m.sequences.iter().map(|e| e.file.clone()).collect(),
        )
    } else {
        return Err(CliError::input("no data files given"));
    };
    let seqs = files
        .iter()
        .map(|f| read_events(f, t_end))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(LoadedData {
        files,
        labels,
        seqs,
        t_end,
        manifest,
    })
}

pub fn simulate(args: &SimulateArgs, exec: Exec) -> CliResult<()> {
    let truth = load_truth(&args.source)?.ok_or_else(|| CliError::input("pass --case or --truth"))?;
    let seeds: Vec<u64> = (0..args.seeds)
        .map(|k| {
            args.seed
                .checked_add(k)
                .ok_or_else(|| CliError::input("seed range overflows u64"))
        })
        .collect::<CliResult<_>>()?;
    let seqs = sample_many(&truth, truth.t_end(), &seeds, exec)?;
    ensure_dir(&args.out)?;
    let mut entries = Vec::with_capacity(seqs.len());
    for (seed, seq) in seeds.iter().zip(&seqs) {
        let file = format!("events_{seed}.csv");
        write_text(&args.out.join(&file), &seq.to_csv())?;
        entries.push(ManifestEntry {
            seed: *seed,
            file,
            n_events: seq.len(),
        });
    }
    let manifest = Manifest {
        case: args.source.case,
        truth: truth.spec().clone(),
        t_end: truth.t_end(),
        t_phi: truth.t_phi(),
        sequences: entries,
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    log::info!("wrote {} sequences to {}", seqs.len(), args.out.display());
    Ok(())
}

/// What `fit` leaves behind when the solver fails part-way.
#[derive(Serialize)]
struct PartialState<'a> {
    method: &'a str,
    error: String,
    completed_iterations: &'a [IterationRecord],
}

#[derive(Serialize)]
#[serde(untagged)]
enum FitTraceFile {
    Emv(hawkes_emv::emv::FitTrace),
    Parametric { loglik: f64, grad_norm: f64 },
    Histogram { q_trace: Vec<f64>, max_row_deviation: f64 },
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Emv => "emv",
        Method::EmvConst => "emv-const",
        Method::Ph => "ph",
        Method::Misd => "misd",
    }
}

pub fn fit(args: &FitArgs, exec: Exec) -> CliResult<()> {
    if args.resolution < 2 {
        return Err(CliError::input("--resolution must be at least 2"));
    }
    let data = load_data(&args.data, None)?;
    if let Some((f, _)) = data.files.iter().zip(&data.seqs).find(|(_, s)| s.is_empty()) {
        return Err(CliError::input(format!(
            "{}: data file contains no events",
            f.display()
        )));
    }
    let t_phi = args
        .tphi
        .or(data.manifest.as_ref().map(|m| m.t_phi))
        .unwrap_or(DEFAULT_T_PHI);
    if !(t_phi > 0.0 && t_phi.is_finite()) {
        return Err(CliError::input("--tphi must be positive"));
    }
    ensure_dir(&args.out)?;

    let (model, trace) = match args.method {
        Method::Emv | Method::EmvConst => {
            let cfg = FitConfig {
                m_f: args.mf,
                m_g: args.mg,
                t_phi,
                max_em_iters: args.iters,
                seed: args.seed,
                exec,
                ..FitConfig::default()
            };
            let mut records = Vec::new();
            let mut observer = |r: &IterationRecord| {
                log::info!(
                    "iteration {}: elbo_mu {:?}, elbo_phi {}, max change {:e}",
                    r.iteration,
                    r.elbo_mu,
                    r.elbo_phi,
                    r.max_change
                );
                records.push(r.clone());
            };
            match fit_observed(&data.seqs, &cfg, args.method == Method::EmvConst, &mut observer) {
                Ok(out) => (out.model.into(), FitTraceFile::Emv(out.trace)),
                Err(e) if !e.is_input_error() => {
                    let partial = PartialState {
                        method: method_name(args.method),
                        error: e.to_string(),
                        completed_iterations: &records,
                    };
                    write_json(&args.out.join("partial.json"), &partial)?;
                    return Err(e.into());
                }
                Err(e) => return Err(e.into()),
            }
        }
        Method::Ph => {
            let out = fit_parametric(&data.seqs, exec)?;
            (
                FittedModel::Parametric(out.params),
                FitTraceFile::Parametric {
                    loglik: out.loglik,
                    grad_norm: out.grad_norm,
                },
            )
        }
        Method::Misd => {
            let out = fit_misd(&data.seqs, t_phi, args.bins, args.iters, exec)?;
            (
                FittedModel::Histogram(out.kernel),
                FitTraceFile::Histogram {
                    q_trace: out.q_trace,
                    max_row_deviation: out.max_row_deviation,
                },
            )
        }
    };

    let mu = eval::sample_curve(|t| model.baseline(t), 0.0, data.t_end, args.resolution);
    let phi = eval::sample_curve(|tau| model.trigger(tau), 0.0, t_phi, args.resolution);
    let file = ModelFile {
        t_end: data.t_end,
        t_phi,
        n_sequences: data.seqs.len(),
        n_events: data.seqs.iter().map(EventSequence::len).sum(),
        model,
    };
    write_json(&args.out.join("model.json"), &file)?;
    write_text(&args.out.join("mu.csv"), &curve_csv(("t", "mu"), &mu))?;
    write_text(&args.out.join("phi.csv"), &curve_csv(("tau", "phi"), &phi))?;
    write_json(&args.out.join("trace.json"), &trace)?;
    log::info!("wrote {} model to {}", file.model.method_name(), args.out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    Loglik,
    EstErr,
    Qq,
    PreAcc,
}

const METRIC_NAMES: [(&str, Metric); 4] = [
    ("loglik", Metric::Loglik),
    ("est_err", Metric::EstErr),
    ("qq", Metric::Qq),
    ("pre_acc", Metric::PreAcc),
];

fn parse_metrics(names: &[String]) -> CliResult<Vec<Metric>> {
    let mut out = Vec::new();
    for name in names.iter().map(|n| n.trim()).filter(|n| !n.is_empty()) {
        let metric = METRIC_NAMES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, m)| *m)
            .ok_or_else(|| {
                let known: Vec<&str> = METRIC_NAMES.iter().map(|(n, _)| *n).collect();
                CliError::input(format!("unknown metric {name:?}; expected one of {}", known.join(", ")))
            })?;
        if !out.contains(&metric) {
            out.push(metric);
        }
    }
    if out.is_empty() {
        return Err(CliError::input("no metrics requested"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method: String,
    pub t_end: f64,
    pub t_phi: f64,
    pub metrics: Vec<String>,
    pub sequences: Vec<SequenceReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loglik_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub est_err: Option<EstErrReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub file: String,
    pub n_events: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loglik: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ks: Option<KsResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub qq_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pre_acc: Option<PreAccReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreAccReport {
    pub pre_acc: f64,
    pub epsilon: f64,
    pub first_index: usize,
    pub n_predicted: usize,
    pub n_mc: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstErrReport {
    pub mu: f64,
    pub phi: f64,
}

pub fn evaluate(args: &EvaluateArgs, exec: Exec) -> CliResult<()> {
    let metrics = parse_metrics(&args.metrics)?;
    let mf: ModelFile = read_json(&args.model)?;
    let data = load_data(&args.data, Some(mf.t_end))?;
    let truth = match load_truth(&args.source)? {
        Some(t) => Some(t),
        None => data
            .manifest
            .as_ref()
            .map(|m| GroundTruth::new(m.truth.clone()))
            .transpose()?,
    };
    let model = &mf.model;

    let est_err = if metrics.contains(&Metric::EstErr) {
        let truth = truth.ok_or_else(|| CliError::input("est_err needs --case, --truth or --manifest"))?;
        if !same_window(truth.t_end(), mf.t_end) {
            return Err(CliError::input(format!(
                "window mismatch: the model has T = {} but the truth has T = {}",
                mf.t_end,
                truth.t_end()
            )));
        }
        Some(EstErrReport {
            mu: eval::est_err(|t| model.baseline(t), |t| truth.baseline(t), 0.0, mf.t_end),
            phi: eval::est_err(|s| model.trigger(s), |s| truth.trigger(s), 0.0, mf.t_phi),
        })
    } else {
        None
    };

    let epsilon = if metrics.contains(&Metric::PreAcc) {
        Some(args.epsilon.ok_or_else(|| CliError::input("pre_acc needs --epsilon"))?)
    } else {
        None
    };

    ensure_dir(&args.out)?;
    let mut sequences = Vec::with_capacity(data.seqs.len());
    for (k, (label, seq)) in data.labels.iter().zip(&data.seqs).enumerate() {
        let mut rep = SequenceReport {
            file: label.clone(),
            n_events: seq.len(),
            loglik: None,
            ks: None,
            qq_file: None,
            pre_acc: None,
        };
        if metrics.contains(&Metric::Loglik) {
            rep.loglik = Some(eval::loglik(model, seq)?);
        }
        if metrics.contains(&Metric::Qq) && !seq.is_empty() {
            let z = eval::rescale(model, seq).z;
            rep.ks = Some(eval::ks_uniform(&z)?);
            let name = format!("qq_{k}.csv");
            write_text(&args.out.join(&name), &eval::qq_csv(&z))?;
            rep.qq_file = Some(name);
        }
        if let Some(epsilon) = epsilon {
            let r = eval::pre_acc(model, seq, epsilon, DEFAULT_WARMUP_FRAC, args.n_mc, args.seed, exec)?;
            rep.pre_acc = Some(PreAccReport {
                pre_acc: r.pre_acc,
                epsilon: r.epsilon,
                first_index: r.first_index,
                n_predicted: r.predictions.len(),
                n_mc: r.n_mc,
            });
        }
        sequences.push(rep);
    }
    let loglik_total = metrics
        .contains(&Metric::Loglik)
        .then(|| sequences.iter().filter_map(|s| s.loglik).sum());
    let report = Report {
        method: model.method_name().to_string(),
        t_end: mf.t_end,
        t_phi: mf.t_phi,
        metrics: metrics
            .iter()
            .map(|m| {
                METRIC_NAMES
                    .iter()
                    .find(|(_, x)| x == m)
                    .map(|(n, _)| n.to_string())
                    .unwrap_or_default()
            })
            .collect(),
        sequences,
        loglik_total,
        est_err,
    };
    write_json(&args.out.join("report.json"), &report)
}

#[derive(Debug, Serialize)]
struct PredictOutput {
    n_history: usize,
    last_event: f64,
    mean: f64,
    std_err: f64,
    n_mc: usize,
}

pub fn predict(args: &PredictArgs, exec: Exec) -> CliResult<()> {
    let mf: ModelFile = read_json(&args.model)?;
    let events = read_events(&args.data, mf.t_end)?;
    let history = match args.prefix {
        Some(n) if n > events.len() => {
            return Err(CliError::input(format!(
                "--prefix {n} exceeds the {} events in the file",
                events.len()
            )))
        }
        Some(n) => &events.times()[..n],
        None => events.times(),
    };
    let p = eval::predict_next(&mf.model, history, args.n_mc, args.seed, exec)?;
    let out = PredictOutput {
        n_history: history.len(),
        last_event: history.last().copied().unwrap_or(0.0),
        mean: p.mean,
        std_err: p.std_err,
        n_mc: p.n_mc,
    };
    match &args.out {
        Some(path) => write_json(path, &out),
        None => {
            println!(
                "{}",
                serde_json::to_string_pretty(&out).map_err(|e| CliError::Io(e.to_string()))?
            );
            Ok(())
        }
    }
}

pub fn qq(args: &QqArgs) -> CliResult<()> {
    let mf: ModelFile = read_json(&args.model)?;
    let events = read_events(&args.data, mf.t_end)?;
    if events.is_empty() {
        return Err(CliError::input(format!(
            "{}: no events to rescale",
            args.data.display()
        )));
    }
    let z = eval::rescale(&mf.model, &events).z;
    let ks = eval::ks_uniform(&z)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_text(&args.out, &eval::qq_csv(&z))?;
    println!(
        "n = {}, KS statistic {:.6}, p-value {:.6}",
        ks.n, ks.statistic, ks.p_value
    );
    Ok(())
}
