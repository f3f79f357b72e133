//! The `rrt` command line: fit, infer, simulate and compare.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{Result, RrtError};
use crate::grow::{grow, TauRule};
use crate::inference::{estimate_sigma, PivotEvaluator, QuadratureSettings, VariantKind};
use crate::io::{read_csv, GrowSettings, RunManifest, TreeDocument};
use crate::model::{Dataset, FittedTree, NodeKind};
use crate::simlab::{run_experiment_with_progress, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(
    name = "rrt",
    version,
    about = "Randomized regression trees with selective inference"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grow a randomized tree and write it, with its selection traces, as JSON.
    Fit(FitArgs),
    /// Selective intervals and p-values for every leaf of a fitted tree.
    Infer(InferArgs),
    /// Run a replicated simulation experiment.
    Simulate(SimulateArgs),
    /// Join result tables side by side on (cell, method).
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SigmaArgs {
    /// Known noise SD.
    #[arg(long, conflicts_with = "estimate_sigma")]
    pub sigma: Option<f64>,
    /// Plug in the residual SD of a deep CART fit instead of a known sigma.
    #[arg(long)]
    pub estimate_sigma: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub response: String,
    /// Grow settings (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub sigma: SigmaArgs,
    /// tau = tau_mult * sigma.
    #[arg(long)]
    pub tau_mult: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Tree JSON written by `fit`.
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub response: String,
    #[command(flatten)]
    pub sigma: SigmaArgs,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = VariantKind::Conditioned)]
    pub variant: VariantKind,
    /// Free coordinates per level for the conditioned variant.
    #[arg(long, default_value_t = 1)]
    pub r: usize,
    /// Recompute gains directly at a few points and check the fast path.
    #[arg(long)]
    pub verify_gains: bool,
    /// Results CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment TOML.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named experiment (smoke, fig1, fig2, sigma-grid, p-grid, laplace, pivot-check).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Output prefix: writes <out>.csv, <out>.summary.json and <out>.figure.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Result CSVs, each optionally prefixed `label=`.
    #[arg(required = true)]
    pub inputs: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit status for an error: 2 user or config problem, 3 integrity, 4 numerical.
pub fn exit_code(e: &RrtError) -> i32 {
    match e {
        RrtError::Integrity(_) => 3,
        RrtError::Numerical(_) | RrtError::UnboundedInterval { .. } => 4,
        _ => 2,
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let args: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match run(cli.command, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command, args: Vec<String>) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(&a, args),
        Command::Infer(a) => cmd_infer(&a, args),
        Command::Simulate(a) => cmd_simulate(&a, args),
        Command::Compare(a) => cmd_compare(&a, args),
    }
}

fn resolve_sigma(args: &SigmaArgs, dataset: &Dataset) -> Result<Option<(f64, &'static str)>> {
    if let Some(s) = args.sigma {
        if !(s > 0.0 && s.is_finite()) {
            return Err(RrtError::Config(format!(
                "--sigma must be positive, got {s}"
            )));
        }
        return Ok(Some((s, "given")));
    }
    if args.estimate_sigma {
        return Ok(Some((estimate_sigma(dataset)?, "estimated")));
    }
    Ok(None)
}

pub fn cmd_fit(a: &FitArgs, args: Vec<String>) -> Result<()> {
    let dataset = read_csv(&a.data, &a.response)?;
    let settings = match &a.config {
        Some(p) => GrowSettings::read(p)?,
        None => GrowSettings::default(),
    };
    let sigma = resolve_sigma(&a.sigma, &dataset)?.map(|s| s.0);
    let cfg = settings.resolve(a.seed, sigma, a.tau_mult)?;
    let tree = grow(&dataset, &cfg)?;
    let tau = match cfg.tau_rule {
        TauRule::Constant(t) => t,
        _ => f64::NAN,
    };
    let snapshot = json!({
        "max_depth": cfg.max_depth,
        "min_split_size": cfg.min_split_size,
        "min_leaf_size": cfg.min_leaf_size,
        "tau": tau,
        "stopping": cfg.stopping,
        "seed": cfg.seed,
        "sigma": sigma,
    });
    let mut manifest = RunManifest::start("fit", args, snapshot, Some(cfg.seed));
    let mut doc = TreeDocument::new(tree, &dataset);
    doc.manifest = crate::io::manifest_path(&a.out)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned());
    fs::write(&a.out, doc.to_json()?)?;
    manifest.add_artifact(&a.data)?;
    manifest.add_artifact(&a.out)?;
    manifest.finish(&a.out)?;
    print!("{}", render_tree(&doc.tree, &dataset));
    Ok(())
}

/// Indented text view: the split rule, size and mean of every node.
pub fn render_tree(tree: &FittedTree, dataset: &Dataset) -> String {
    fn walk(
        tree: &FittedTree,
        ds: &Dataset,
        id: usize,
        label: &str,
        indent: usize,
        out: &mut String,
    ) {
        let node = &tree.nodes[id];
        let pad = "  ".repeat(indent);
        match &node.kind {
            NodeKind::Internal { trace, left, right } => {
                let y = ds.y();
                out.push_str(&format!(
                    "{pad}{label} n={} mean={:.4}\n",
                    trace.region.len(),
                    trace.region.mean(y)
                ));
                let s = trace.chosen();
                let name = ds.feature_name(s.feature);
                walk(
                    tree,
                    ds,
                    *left,
                    &format!("{name} <= {}", s.threshold),
                    indent + 1,
                    out,
                );
                walk(
                    tree,
                    ds,
                    *right,
                    &format!("{name} > {}", s.threshold),
                    indent + 1,
                    out,
                );
            }
            NodeKind::Terminal { terminal } => {
                let t = &tree.terminals[*terminal];
                out.push_str(&format!(
                    "{pad}{label} n={} mean={:.4} [leaf {terminal}]\n",
                    t.region.len(),
                    t.mean
                ));
            }
        }
    }
    let mut out = String::new();
    walk(tree, dataset, 0, "root", 0, &mut out);
    out
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

pub fn cmd_infer(a: &InferArgs, args: Vec<String>) -> Result<()> {
    let text = fs::read_to_string(&a.tree)?;
    let doc = TreeDocument::from_json(&text)?;
    let dataset = read_csv(&a.data, &a.response)?;
    doc.check_dataset(&dataset)?;
    let (sigma, source) = resolve_sigma(&a.sigma, &dataset)?
        .ok_or_else(|| RrtError::Config("inference needs --sigma or --estimate-sigma".into()))?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(RrtError::Config(format!(
            "--alpha must lie in (0, 1), got {}",
            a.alpha
        )));
    }
    let tree = &doc.tree;
    let variant = a.variant.with_r(a.r);
    let settings = QuadratureSettings {
        verify_gains: a.verify_gains,
        ..Default::default()
    };
    let tau = tree.traces().next().map_or(f64::NAN, |t| t.tau);
    let results = crate::par::map_range(tree.n_terminals(), |k| -> Result<Vec<String>> {
        let ev = PivotEvaluator::new(tree, &dataset, k, sigma, variant, settings)?;
        let (lo, hi) = match ev.invert_ci(a.alpha) {
            Ok(ci) => ci,
            Err(RrtError::UnboundedInterval { lower, upper }) => (
                lower.unwrap_or(f64::NEG_INFINITY),
                upper.unwrap_or(f64::INFINITY),
            ),
            Err(e) => return Err(e),
        };
        let term = &tree.terminals[k];
        let d = ev.diagnostics();
        Ok(vec![
            k.to_string(),
            term.region.len().to_string(),
            term.mean.to_string(),
            term.mean.to_string(),
            lo.to_string(),
            hi.to_string(),
            ev.p_value().to_string(),
            a.variant.with_r(a.r).to_string(),
            a.r.to_string(),
            fmt_f(tau),
            sigma.to_string(),
            source.to_string(),
            d.half_width.to_string(),
            d.points.to_string(),
            d.widened.to_string(),
            d.log_f_observed.to_string(),
        ])
    });
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record([
            "leaf",
            "n_r",
            "ybar",
            "estimate",
            "lower",
            "upper",
            "p_value",
            "variant",
            "r",
            "tau",
            "sigma",
            "sigma_source",
            "grid_half_width",
            "grid_points",
            "grid_widened",
            "log_f_observed",
        ])?;
        for row in results {
            w.write_record(row?)?;
        }
        w.flush()?;
    }
    match &a.out {
        Some(path) => {
            fs::write(path, &buf)?;
            let mut m = RunManifest::start(
                "infer",
                args,
                json!({"alpha": a.alpha, "variant": variant, "sigma": sigma, "sigma_source": source}),
                Some(tree.seed),
            );
            m.add_artifact(&a.tree)?;
            m.add_artifact(&a.data)?;
            m.add_artifact(path)?;
            m.finish(path)?;
        }
        None => io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_simulate(a: &SimulateArgs, args: Vec<String>) -> Result<()> {
    let mut cfg = match (&a.config, &a.preset) {
        (Some(p), _) => ExperimentConfig::from_toml(&fs::read_to_string(p)?)?,
        (None, Some(name)) => ExperimentConfig::preset(name).ok_or_else(|| {
            RrtError::Config(format!(
                "unknown preset {name:?}; choose one of {:?}",
                ExperimentConfig::PRESETS
            ))
        })?,
        (None, None) => return Err(RrtError::Config("give --config or --preset".into())),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.reps {
        cfg.reps = r;
    }
    cfg.validate()?;
    let step = (cfg.reps * cfg.cells().len() / 20).max(1);
    let report = run_experiment_with_progress(&cfg, &|done, total| {
        if done % step == 0 || done == total {
            eprintln!("[{}] {done}/{total} replicates", cfg.name);
        }
    })?;
    let csv_path = with_suffix(&a.out, ".csv");
    let summary_path = with_suffix(&a.out, ".summary.json");
    let figure_path = with_suffix(&a.out, ".figure.csv");
    report.write_csv(fs::File::create(&csv_path)?)?;
    let mut summary = report.summary_json();
    summary["manifest"] = json!(crate::io::manifest_path(&summary_path)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned()));
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    report.write_figure_csv(fs::File::create(&figure_path)?)?;
    let snapshot = serde_json::to_value(&cfg)?;
    let mut m = RunManifest::start("simulate", args, snapshot, Some(cfg.seed));
    for p in [&csv_path, &summary_path, &figure_path] {
        m.add_artifact(p)?;
    }
    m.finish(&summary_path)?;
    for s in report.summary() {
        eprintln!(
            "{:<28} {:<28} coverage={:.3} length={:.3} mse={:.3} failed={}",
            s.cell, s.method, s.mean_coverage, s.mean_ci_length, s.mean_test_mse, s.reps_failed
        );
    }
    Ok(())
}

const DESCRIPTOR_COLUMNS: [&str; 5] = ["replicate", "p", "sigma", "noise", "status"];

struct Table {
    label: String,
    metrics: Vec<String>,
    /// (cell, method) -> metric -> mean over rows with that key
    values: HashMap<(String, String), Vec<f64>>,
    keys: Vec<(String, String)>,
}

fn load_table(input: &str) -> Result<Table> {
    let (label, path) = match input.split_once('=') {
        Some((l, p)) if !l.is_empty() && !l.contains('/') => (l.to_string(), PathBuf::from(p)),
        _ => {
            let p = PathBuf::from(input);
            let stem = p
                .file_stem()
                .map_or(input.to_string(), |s| s.to_string_lossy().into_owned());
            (stem, p)
        }
    };
    let mut rdr = csv::Reader::from_path(&path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| RrtError::Schema(format!("{} has no {name:?} column", path.display())))
    };
    let (ci, mi) = (find("cell")?, find("method")?);
    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    let metric_idx: Vec<usize> = (0..headers.len())
        .filter(|&j| j != ci && j != mi && !DESCRIPTOR_COLUMNS.contains(&headers[j].as_str()))
        .filter(|&j| {
            records
                .iter()
                .all(|r| r[j].is_empty() || r[j].parse::<f64>().is_ok())
        })
        .collect();
    let mut sums: HashMap<(String, String), (Vec<f64>, Vec<usize>)> = HashMap::new();
    let mut keys = Vec::new();
    for r in &records {
        let key = (r[ci].to_string(), r[mi].to_string());
        let entry = sums.entry(key.clone()).or_insert_with(|| {
            keys.push(key);
            (vec![0.0; metric_idx.len()], vec![0; metric_idx.len()])
        });
        for (k, &j) in metric_idx.iter().enumerate() {
            if let Ok(v) = r[j].parse::<f64>() {
                if !v.is_nan() {
                    entry.0[k] += v;
                    entry.1[k] += 1;
                }
            }
        }
    }
    let values = sums
        .into_iter()
        .map(|(k, (s, c))| {
            let means = s
                .iter()
                .zip(&c)
                .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
                .collect();
            (k, means)
        })
        .collect();
    Ok(Table {
        label,
        metrics: metric_idx.iter().map(|&j| headers[j].clone()).collect(),
        values,
        keys,
    })
}

/// Full outer join of the inputs on (cell, method); repeated keys within
/// one input (per-replicate rows) are averaged.
pub fn compare_tables(inputs: &[String]) -> Result<Vec<Vec<String>>> {
    let tables = inputs
        .iter()
        .map(|s| load_table(s))
        .collect::<Result<Vec<_>>>()?;
    let mut labels: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &tables {
        *labels.entry(&t.label).or_default() += 1;
    }
    if let Some((l, _)) = labels.iter().find(|(_, &c)| c > 1) {
        return Err(RrtError::Config(format!(
            "input label {l:?} is used twice; prefix inputs with label="
        )));
    }
    let mut metrics: Vec<String> = Vec::new();
    let mut keys: Vec<(String, String)> = Vec::new();
    for t in &tables {
        for m in &t.metrics {
            if !metrics.contains(m) {
                metrics.push(m.clone());
            }
        }
        for k in &t.keys {
            if !keys.contains(k) {
                keys.push(k.clone());
            }
        }
    }
    let mut header = vec!["cell".to_string(), "method".to_string()];
    for m in &metrics {
        for t in &tables {
            header.push(format!("{m}@{}", t.label));
        }
    }
    let mut rows = vec![header];
    for key in &keys {
        let mut row = vec![key.0.clone(), key.1.clone()];
        for m in &metrics {
            for t in &tables {
                let v = t
                    .metrics
                    .iter()
                    .position(|x| x == m)
                    .and_then(|j| t.values.get(key).map(|vals| vals[j]));
                row.push(v.map_or(String::new(), fmt_f));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn cmd_compare(a: &CompareArgs, args: Vec<String>) -> Result<()> {
    let rows = compare_tables(&a.inputs)?;
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in &rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    match &a.out {
        Some(path) => {
            fs::write(path, &buf)?;
            let mut m = RunManifest::start("compare", args, json!({"inputs": a.inputs}), None);
            m.add_artifact(path)?;
            m.finish(path)?;
        }
        None => io::stdout().write_all(&buf)?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&RrtError::Config("x".into())), 2);
        assert_eq!(exit_code(&RrtError::Integrity("x".into())), 3);
        assert_eq!(exit_code(&RrtError::Numerical("x".into())), 4);
    }

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from([
            "rrt",
            "infer",
            "--tree",
            "t.json",
            "--data",
            "d.csv",
            "--response",
            "y",
            "--sigma",
            "2",
            "--variant",
            "full",
            "--r",
            "3",
        ])
        .unwrap();
        match cli.command {
            Command::Infer(a) => {
                assert_eq!(a.variant, VariantKind::Full);
                assert_eq!(a.r, 3);
                assert_eq!(a.sigma.sigma, Some(2.0));
                assert_eq!(a.alpha, 0.1);
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from([
            "rrt",
            "infer",
            "--tree",
            "t",
            "--data",
            "d",
            "--response",
            "y",
            "--sigma",
            "1",
            "--estimate-sigma"
        ])
        .is_err());
    }

    #[test]
    fn compare_outer_join() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        fs::write(
            &a,
            "cell,method,coverage\nc1,naive,0.8\nc1,rrt,0.9\nc1,rrt,0.7\n",
        )
        .unwrap();
        fs::write(&b, "cell,method,coverage,test_mse\nc1,uv,0.91,4.5\n").unwrap();
        let rows =
            compare_tables(&[format!("A={}", a.display()), format!("B={}", b.display())]).unwrap();
        assert_eq!(
            rows[0],
            [
                "cell",
                "method",
                "coverage@A",
                "coverage@B",
                "test_mse@A",
                "test_mse@B"
            ]
        );
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1], ["c1", "naive", "0.8", "", "", ""]);
        assert_eq!(rows[2][2].parse::<f64>().unwrap(), 0.8);
        assert_eq!(rows[3], ["c1", "uv", "", "0.91", "", "4.5"]);
        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "x,y\n1,2\n").unwrap();
        assert!(matches!(
            compare_tables(&[bad.display().to_string()]),
            Err(RrtError::Schema(_))
        ));
    }
}
