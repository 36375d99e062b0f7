use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use super::config::{ModelConfig, RunConfig};
use super::{provenance, sha256_hex, Cli, CliError, Command};
use crate::bounds::{bound_report, model_norm_budget, theorem4_check, BoundReport, Theorem4Check};
use crate::dataio::{self, split, write_atomic, LabeledDataset};
use crate::embed::{self, EmbeddingModel, GevpSummary, ModelKind, UncertaintyRecipe};
use crate::eval::{self, Embedder, Fold, FoldReport, MethodSummary};
use crate::graphs::build_graphs;
use crate::kernels::{kernel_matrix, DiagonalConvention, FirstLevelKernel, KernelSpec};
use crate::uncertainty::UncertainDataset;

type CliResult<T> = Result<T, CliError>;

pub(super) fn dispatch(cli: Cli) -> CliResult<()> {
    let seed_flag = cli.global.seed;
    match cli.command {
        Command::Fit { config, out } => fit(&config, &out, seed_flag),
        Command::Transform { model, input, out } => transform(&model, &input, &out, seed_flag),
        Command::Evaluate { config, out, k } => evaluate(&config, &out, k, seed_flag),
        Command::Toy2d { out, scale } => toy2d(&out, scale, seed_flag),
        Command::Bounds {
            kernel,
            model,
            config,
            norm_budget,
            n_sigma,
            verify_thm4,
            n_datasets,
            out,
        } => bounds(BoundsArgs {
            kernel,
            model,
            config,
            norm_budget,
            n_sigma,
            verify_thm4,
            n_datasets,
            out,
            seed_flag,
        }),
        Command::Rankreport { config, out } => rankreport(&config, out.as_deref(), seed_flag),
    }
}

fn effective_seed(flag: Option<u64>, cfg: Option<&RunConfig>) -> u64 {
    let seed = flag.or(cfg.and_then(|c| c.seed)).unwrap_or(0);
    println!("seed = {seed}");
    seed
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
    }
    write_atomic(path, bytes).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn toml_report<T: Serialize>(header: &str, body: &T) -> CliResult<String> {
    let text = toml::to_string(body).map_err(|e| CliError {
        code: 1,
        message: format!("cannot serialise report: {e}"),
    })?;
    Ok(format!("{header}\n{text}"))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn require_model(cfg: &RunConfig) -> CliResult<&ModelConfig> {
    cfg.model.as_ref().ok_or_else(|| CliError::config("config has no [model] section"))
}

/// Training part of the first configured split, or the whole dataset.
fn training_set(cfg: &RunConfig, seed: u64) -> CliResult<LabeledDataset> {
    let ds = cfg.dataset(seed)?;
    match cfg.splits().first() {
        None => Ok(ds),
        Some(spec) => {
            let idx = split(&ds.labels, spec).map_err(|e| CliError::config(format!("split: {e}")))?;
            Ok(ds.subset(&idx.train)?)
        }
    }
}

fn training_distributions(m: &ModelConfig, train: &LabeledDataset) -> CliResult<UncertainDataset> {
    Ok(m.scheme.apply(train, m.width)?)
}

#[derive(Serialize)]
struct FitReport<'a> {
    kind: &'a str,
    family: &'a str,
    requested_dim: usize,
    dim: usize,
    train_samples: usize,
    model_sha256: String,
    solver: &'a GevpSummary,
}

fn fit(config: &Path, out: &Path, seed_flag: Option<u64>) -> CliResult<()> {
    let (cfg, bytes) = RunConfig::load(config)?;
    let seed = effective_seed(seed_flag, Some(&cfg));
    let m = require_model(&cfg)?;
    let train = training_set(&cfg, seed)?;
    let graphs = build_graphs(m.family, &train.features, &train.labels, m.k1, m.k2)?;
    let opts = m.fit_options();
    let model = match m.embedder {
        Embedder::LinearGe => embed::fit_ge_linear(&train, &graphs, m.d, &opts)?,
        Embedder::KernelGe => embed::fit_ge_kernel(&train, m.kernel, &graphs, m.d, &opts)?,
        Embedder::Ngeu => {
            let data = training_distributions(m, &train)?;
            let mut model = embed::fit_ngeu(&data, &m.spec(seed)?, &graphs, m.d, &opts)?;
            model.uncertainty = Some(UncertaintyRecipe {
                scheme: m.scheme,
                width: m.width,
            });
            model
        }
    };
    let blob = embed::model_to_bytes(&model)?;
    let report = FitReport {
        kind: model.kind_name(),
        family: model.family.name(),
        requested_dim: model.requested_dim,
        dim: model.dim(),
        train_samples: train.len(),
        model_sha256: sha256_hex(&blob),
        solver: &model.diagnostics,
    };
    let text = toml_report(&provenance(seed, &bytes), &report)?;
    write(out, &blob)?;
    write(&sidecar(out, ".report.toml"), text.as_bytes())?;
    println!("model written to {} ({} of {} directions)", out.display(), model.dim(), model.requested_dim);
    Ok(())
}

const IDX_IMAGES_MAGIC: [u8; 4] = [0, 0, 8, 3];

fn read_input(path: &Path, dim: usize) -> CliResult<(LabeledDataset, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let ds = if bytes.starts_with(&IDX_IMAGES_MAGIC) {
        match dataio::parse_idx(&bytes)? {
            dataio::IdxData::Images(m) => LabeledDataset::new(m.clone(), vec![0; m.nrows()], "input")?,
            dataio::IdxData::Labels(_) => unreachable!("magic checked"),
        }
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|_| CliError::data(format!("{} is not UTF-8", path.display())))?;
        dataio::parse_csv(text, dim, false).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
    };
    Ok((ds, bytes))
}

fn embedding_csv(y: &DMatrix<f64>, labels: &[usize]) -> String {
    let mut out = String::from("label");
    for j in 0..y.ncols() {
        let _ = write!(out, ",y{}", j + 1);
    }
    out.push('\n');
    for i in 0..y.nrows() {
        let _ = write!(out, "{}", labels[i]);
        for v in y.row(i).iter() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct OutputManifest {
    files: BTreeMap<String, String>,
}

fn manifest(files: &[(&str, &[u8])]) -> OutputManifest {
    OutputManifest {
        files: files.iter().map(|(n, b)| (n.to_string(), sha256_hex(b))).collect(),
    }
}

fn transform(model_path: &Path, input: &Path, out: &Path, seed_flag: Option<u64>) -> CliResult<()> {
    let seed = effective_seed(seed_flag, None);
    let model_bytes =
        std::fs::read(model_path).map_err(|e| CliError::data(format!("cannot read {}: {e}", model_path.display())))?;
    let model = embed::model_from_bytes(&model_bytes)?;
    let (ds, input_bytes) = read_input(input, model.input_dim())?;
    let y = model.transform(&ds)?;
    let csv = embedding_csv(&y, &ds.labels);
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut key = model_bytes;
    key.extend_from_slice(&input_bytes);
    let text = toml_report(&provenance(seed, &key), &manifest(&[(&name, csv.as_bytes())]))?;
    write(out, csv.as_bytes())?;
    write(&sidecar(out, ".report.toml"), text.as_bytes())?;
    println!("{} rows embedded into {} dimensions", y.nrows(), y.ncols());
    Ok(())
}

#[derive(Serialize)]
struct EvaluateReport<'a> {
    summaries: &'a [MethodSummary],
    folds: Vec<Vec<FoldEntry<'a>>>,
    files: BTreeMap<String, String>,
}

/// Fold report without the per-cell table, which lives in CSV files.
#[derive(Serialize)]
struct FoldEntry<'a> {
    label: &'a str,
    test_accuracy: f64,
    selected: &'a Option<eval::Cell>,
    notes: &'a [String],
    diagnostics: &'a Option<eval::Diagnostics>,
}

fn kernel_name(k: &Option<FirstLevelKernel>) -> String {
    k.map(|k| k.label()).unwrap_or_else(|| "none".into())
}

fn accuracy_table(folds: &[&FoldReport]) -> String {
    let mut out = String::from("fold,kernel,width,d,val_accuracy,test_accuracy\n");
    for (f, r) in folds.iter().enumerate() {
        match &r.selected {
            Some(c) => {
                let _ = writeln!(
                    out,
                    "{},\"{}\",{},{},{:.6},{:.6}",
                    f + 1,
                    kernel_name(&c.kernel),
                    c.width,
                    c.d,
                    c.val_accuracy,
                    r.test_accuracy
                );
            }
            None => {
                let _ = writeln!(out, "{},none,,,,{:.6}", f + 1, r.test_accuracy);
            }
        }
    }
    out
}

fn cells_table(folds: &[&FoldReport]) -> String {
    let mut out = String::from("fold,kernel,width,d,val_accuracy,note\n");
    for (f, r) in folds.iter().enumerate() {
        for c in &r.cells {
            let note = c.note.as_deref().unwrap_or("").replace('"', "'");
            let _ = writeln!(
                out,
                "{},\"{}\",{},{},{:.6},\"{note}\"",
                f + 1,
                kernel_name(&c.kernel),
                c.width,
                c.d,
                c.val_accuracy
            );
        }
    }
    out
}

fn evaluate(config: &Path, out: &Path, k: Option<usize>, seed_flag: Option<u64>) -> CliResult<()> {
    let (cfg, bytes) = RunConfig::load(config)?;
    let seed = effective_seed(seed_flag, Some(&cfg));
    let e = cfg.experiment.as_ref().ok_or_else(|| CliError::config("config has no [experiment] section"))?;
    let specs = cfg.splits();
    if specs.is_empty() {
        return Err(CliError::config("evaluate needs a [split] section"));
    }
    let mut plan = Vec::new();
    for m in &e.methods {
        let mut grid = cfg.grid(e, m.widths.as_deref());
        if let Some(k) = k {
            grid.knn_k = k;
        }
        grid.validate().map_err(|err| CliError::config(format!("experiment: {err}")))?;
        plan.push((m.method(), grid));
    }
    let ds = cfg.dataset(seed)?;
    let mut folds = Vec::new();
    for spec in &specs {
        let idx = split(&ds.labels, spec).map_err(|err| CliError::config(format!("split: {err}")))?;
        if idx.val.is_empty() || idx.test.is_empty() {
            return Err(CliError::config("split: evaluation needs non-empty validation and test parts"));
        }
        folds.push(Fold {
            train: ds.subset(&idx.train)?,
            val: ds.subset(&idx.val)?,
            test: ds.subset(&idx.test)?,
        });
    }
    let report = eval::run_experiment(&plan, &folds)?;

    let mut files: Vec<(String, String)> = vec![("summary.csv".into(), report.accuracy_csv())];
    let mut seen = BTreeMap::new();
    for (m, summary) in report.summaries.iter().enumerate() {
        let count = seen.entry(summary.label.clone()).or_insert(0usize);
        *count += 1;
        let stem = if *count == 1 { summary.label.clone() } else { format!("{}-{count}", summary.label) };
        let per_fold: Vec<&FoldReport> = report.folds.iter().map(|f| &f[m]).collect();
        files.push((format!("{stem}.accuracy.csv"), accuracy_table(&per_fold)));
        files.push((format!("{stem}.cells.csv"), cells_table(&per_fold)));
    }
    let body = EvaluateReport {
        summaries: &report.summaries,
        folds: report
            .folds
            .iter()
            .map(|f| {
                f.iter()
                    .map(|r| FoldEntry {
                        label: &r.label,
                        test_accuracy: r.test_accuracy,
                        selected: &r.selected,
                        notes: &r.notes,
                        diagnostics: &r.diagnostics,
                    })
                    .collect()
            })
            .collect(),
        files: files.iter().map(|(n, t)| (n.clone(), sha256_hex(t.as_bytes()))).collect(),
    };
    let text = toml_report(&provenance(seed, &bytes), &body)?;
    for (name, content) in &files {
        write(&out.join(name), content.as_bytes())?;
    }
    write(&out.join("report.toml"), text.as_bytes())?;
    print!("{}", report.accuracy_csv());
    Ok(())
}

#[derive(Serialize)]
struct ToyReport {
    scale: f64,
    angle_lda: f64,
    angle_mfa: f64,
    files: BTreeMap<String, String>,
}

fn toy2d(out: &Path, scale: f64, seed_flag: Option<u64>) -> CliResult<()> {
    let seed = effective_seed(seed_flag, None);
    if !scale.is_finite() || scale < 0.0 {
        return Err(CliError::config(format!("--scale must be finite and >= 0, got {scale}")));
    }
    let t = eval::toy2d_experiment(seed, scale)?;
    let (dirs, ells) = (t.directions_csv(), t.ellipses_csv());
    let files = manifest(&[("directions.csv", dirs.as_bytes()), ("ellipses.csv", ells.as_bytes())]).files;
    let body = ToyReport {
        scale,
        angle_lda: t.angle_lda,
        angle_mfa: t.angle_mfa,
        files,
    };
    let key = format!("toy2d scale={scale}");
    let text = toml_report(&provenance(seed, key.as_bytes()), &body)?;
    write(&out.join("directions.csv"), dirs.as_bytes())?;
    write(&out.join("ellipses.csv"), ells.as_bytes())?;
    write(&out.join("report.toml"), text.as_bytes())?;
    println!("angle_lda = {}\nangle_mfa = {}", t.angle_lda, t.angle_mfa);
    Ok(())
}

struct BoundsArgs {
    kernel: Option<PathBuf>,
    model: Option<PathBuf>,
    config: Option<PathBuf>,
    norm_budget: Option<f64>,
    n_sigma: usize,
    verify_thm4: bool,
    n_datasets: usize,
    out: Option<PathBuf>,
    seed_flag: Option<u64>,
}

/// Dense square rows, or `i,j,value` triples with that header.
fn parse_kernel_csv(text: &str) -> CliResult<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<String>> = Vec::new();
    for r in reader.records() {
        let r = r.map_err(|e| CliError::data(format!("kernel CSV: {e}")))?;
        rows.push(r.iter().map(str::to_owned).collect());
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| CliError::data(format!("kernel CSV: non-numeric cell {s:?}")));
    let is_triples = rows.first().is_some_and(|r| r.len() == 3 && r[0] == "i" && r[1] == "j");
    let m = if is_triples {
        let mut entries = Vec::new();
        let mut n = 0;
        for r in &rows[1..] {
            if r.len() != 3 {
                return Err(CliError::data("kernel CSV: triples need three fields"));
            }
            let (i, j) = (num(&r[0])? as usize, num(&r[1])? as usize);
            n = n.max(i + 1).max(j + 1);
            entries.push((i, j, num(&r[2])?));
        }
        let mut m = DMatrix::zeros(n, n);
        for (i, j, v) in entries {
            m[(i, j)] = v;
        }
        m
    } else {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(CliError::data("kernel CSV: matrix must be square"));
        }
        let mut m = DMatrix::zeros(n, n);
        for (i, r) in rows.iter().enumerate() {
            for (j, c) in r.iter().enumerate() {
                m[(i, j)] = num(c)?;
            }
        }
        m
    };
    if m.nrows() == 0 {
        return Err(CliError::data("kernel CSV is empty"));
    }
    if crate::linalg::relative_asymmetry(&m) > 1e-12 {
        return Err(CliError::data("kernel matrix is not symmetric"));
    }
    Ok(m)
}

#[derive(Serialize)]
struct BoundsOutput {
    #[serde(flatten)]
    bounds: BoundReport,
    theorem4: Option<Theorem4Check>,
}

fn bounds(a: BoundsArgs) -> CliResult<()> {
    let cfg = match &a.config {
        Some(p) => Some(RunConfig::load(p)?),
        None => None,
    };
    let seed = effective_seed(a.seed_flag, cfg.as_ref().map(|c| &c.0));
    if let Some(b) = a.norm_budget {
        if !(b > 0.0) || !b.is_finite() {
            return Err(CliError::config(format!("--norm-budget must be positive, got {b}")));
        }
    }
    let read = |p: &Path| std::fs::read(p).map_err(|e| CliError::data(format!("cannot read {}: {e}", p.display())));
    // Kernel matrix, budget, distributions (for split terms and the
    // distribution comparison) and the bytes identifying the run.
    let (k, budget, dists, spec, key): (DMatrix<f64>, f64, Option<UncertainDataset>, Option<KernelSpec>, Vec<u8>) =
        if let Some(p) = &a.kernel {
            let bytes = read(p)?;
            let text = std::str::from_utf8(&bytes).map_err(|_| CliError::data("kernel CSV is not UTF-8"))?;
            (parse_kernel_csv(text)?, a.norm_budget.unwrap_or(1.0), None, None, bytes)
        } else if let Some(p) = &a.model {
            let bytes = read(p)?;
            let model = embed::model_from_bytes(&bytes)?;
            let budget = match a.norm_budget {
                Some(b) => b,
                None => model_norm_budget(&model)?,
            };
            let (k, dists, spec) = model_kernel(&model)?;
            (k, budget, dists, spec, bytes)
        } else if let Some((cfg, bytes)) = &cfg {
            let m = require_model(cfg)?;
            let train = training_set(cfg, seed)?;
            let data = training_distributions(m, &train)?;
            let spec = m.spec(seed)?;
            let k = kernel_matrix(&data, &spec)?.k;
            (k, a.norm_budget.unwrap_or(1.0), Some(data), Some(spec), bytes.clone())
        } else {
            return Err(CliError::config("bounds needs --kernel, --model or --config"));
        };
    let split_data = match (&dists, &spec) {
        (Some(d), Some(s)) if s.first == FirstLevelKernel::Linear && s.diagonal == DiagonalConvention::TraceAugmented => Some(d),
        _ => None,
    };
    let report = bound_report(&k, budget, a.n_sigma, seed, split_data)?;
    let theorem4 = if a.verify_thm4 {
        let (Some(d), Some(s)) = (&dists, &spec) else {
            return Err(CliError::config("--verify-thm4 needs distribution inputs (--config or an NGEU --model)"));
        };
        Some(theorem4_check(d, s.first, s.diagonal, budget, a.n_datasets, a.n_sigma, seed)?)
    } else {
        None
    };
    let body = BoundsOutput { bounds: report, theorem4 };
    let text = toml_report(&provenance(seed, &key), &body)?;
    if let Some(out) = &a.out {
        write(out, text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

type ModelKernel = (DMatrix<f64>, Option<UncertainDataset>, Option<KernelSpec>);

fn model_kernel(model: &EmbeddingModel) -> CliResult<ModelKernel> {
    match &model.kind {
        ModelKind::LinearGe { .. } => Err(CliError::config("linear GE models keep no training kernel")),
        ModelKind::KernelGe { train, first, .. } => {
            let pts = UncertainDataset::from_points(train, vec![0; train.nrows()])?;
            Ok((kernel_matrix(&pts, &KernelSpec::default_for(*first))?.k, None, None))
        }
        ModelKind::Ngeu { train, spec, .. } => Ok((kernel_matrix(train, spec)?.k, Some(train.clone()), Some(*spec))),
    }
}

fn rankreport(config: &Path, out: Option<&Path>, seed_flag: Option<u64>) -> CliResult<()> {
    let (cfg, bytes) = RunConfig::load(config)?;
    let seed = effective_seed(seed_flag, Some(&cfg));
    let m = require_model(&cfg)?;
    let train = training_set(&cfg, seed)?;
    let data = training_distributions(m, &train)?;
    let graphs = build_graphs(m.family, &train.features, &train.labels, m.k1, m.k2)?;
    let r = eval::rank_report(&data, &graphs, &m.spec(seed)?)?;
    let text = toml_report(&provenance(seed, &bytes), &r)?;
    if let Some(out) = out {
        write(out, text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}
