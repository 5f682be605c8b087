//! End-to-end driver: ingest a CSV dataset and domain file, take noisy
//! measurements under a privacy budget, fit a graphical model, and emit
//! marginals, synthetic data, and machine-readable reports.
//!
//! The raw dataset is touched only by the measurement phase (and by the
//! workload-error evaluation report); estimation and inference operate
//! solely on the measurement log.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use pgm_core::io::{
    parse_config, parse_dataset_csv, parse_domain, parse_measurement_spec, parse_query_spec,
    parse_workload_spec, Algorithm, AttributeCoding, DomainSpec, InlineOrPath, RunConfig,
    TotalMode, ValueDictionary,
};
use pgm_core::{
    accelerated_estimate, answer_factored_query, estimate_total, laplace_measure, mirror_descent,
    model_marginal, mwem_pgm, rescale_measurements, sample_synthetic, workload_error, Clique,
    CliqueVector, Dataset, EstimationReport, GraphicalModel, JunctionTree, LinearMeasurement,
    LossSpec, ModelSize, MwemConfig, PrivacyAccountant, StepRule, Workload,
};

#[derive(Parser)]
#[command(
    name = "pgm",
    version,
    about = "Fit a graphical model to noisy linear measurements of a dataset and answer queries from the model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full measure-estimate-report pipeline from a config file.
    Run {
        /// Path to the JSON run configuration.
        config: PathBuf,
        /// Override the master seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Test mode: skip noise entirely; outputs carry no privacy
        /// guarantee and are marked non-private in the accountant report.
        #[arg(long)]
        noiseless: bool,
        /// Print progress to stderr.
        #[arg(short, long)]
        verbose: bool,
    },
    /// Report the junction-tree model size implied by a config, without
    /// touching the dataset or running estimation.
    ModelSize {
        /// Path to the JSON run configuration.
        config: PathBuf,
    },
    /// Answer a factored linear query from a previous run's model, given the
    /// run config and a query spec file.
    Query {
        /// Path to the JSON run configuration of the finished run.
        config: PathBuf,
        /// Path to the factored-query spec (per-attribute blocks).
        query: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            output_dir,
            noiseless,
            verbose,
        } => run(&config, seed, output_dir, noiseless, verbose),
        Command::ModelSize { config } => model_size(&config),
        Command::Query { config, query } => query_model(&config, &query),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

/// Prefixes library errors with the pipeline stage that produced them.
fn stage<T>(name: &str, result: pgm_core::Result<T>) -> Result<T, String> {
    result.map_err(|e| format!("{name}: {e}"))
}

fn read_file(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("io: {}: {e}", path.display()))
}

/// Resolves a config-relative path against the config file's directory.
fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn spec_text(base: &Path, spec: &InlineOrPath) -> Result<String, String> {
    match spec {
        InlineOrPath::Path(p) => read_file(&resolve(base, p)),
        InlineOrPath::Inline(v) => {
            serde_json::to_string(v).map_err(|e| format!("config: {e}"))
        }
    }
}

/// Derives an independent per-phase seed from the master seed (splitmix64
/// finalizer), so the measurement, selection, and sampling streams never
/// overlap.
fn phase_seed(master: u64, phase: u64) -> u64 {
    let mut z = master ^ phase.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PHASE_MEASURE: u64 = 0;
const PHASE_SELECT: u64 = 1;
const PHASE_SAMPLE: u64 = 2;

struct LoadedConfig {
    config: RunConfig,
    base: PathBuf,
    domain_spec: DomainSpec,
}

fn load_config(path: &Path) -> Result<LoadedConfig, String> {
    let text = read_file(path)?;
    let config = stage("config", parse_config(&text))?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let domain_text = read_file(&resolve(&base, &config.domain))?;
    let domain_spec = stage("domain", parse_domain(&domain_text))?;
    Ok(LoadedConfig {
        config,
        base,
        domain_spec,
    })
}

/// The cliques the junction tree must cover: measurement cliques for a
/// direct run, workload cliques for the select-measure-estimate loop.
fn planned_cliques(loaded: &LoadedConfig) -> Result<Vec<Clique>, String> {
    let domain = &loaded.domain_spec.domain;
    if loaded.config.mwem_rounds.is_some() {
        let workload = load_workload(loaded)?
            .ok_or_else(|| "config: mwem_rounds requires a workload spec".to_string())?;
        Ok(workload.cliques().cloned().collect())
    } else {
        let spec = loaded
            .config
            .measurements
            .as_ref()
            .ok_or_else(|| "config: a measurement spec is required".to_string())?;
        let text = spec_text(&loaded.base, spec)?;
        let measurements = stage("measurements", parse_measurement_spec(&text, domain))?;
        Ok(measurements.into_iter().map(|(c, _)| c).collect())
    }
}

fn load_workload(loaded: &LoadedConfig) -> Result<Option<Workload>, String> {
    match &loaded.config.workload {
        None => Ok(None),
        Some(spec) => {
            let text = spec_text(&loaded.base, spec)?;
            let w = stage(
                "workload",
                parse_workload_spec(&text, &loaded.domain_spec.domain),
            )?;
            Ok(Some(w))
        }
    }
}

fn model_size(config_path: &Path) -> Result<(), String> {
    let loaded = load_config(config_path)?;
    let cliques = planned_cliques(&loaded)?;
    let tree = stage(
        "junction-tree",
        JunctionTree::build(loaded.domain_spec.domain.clone(), &cliques),
    )?;
    print_model_size(&loaded.domain_spec, &tree.model_size());
    if let Some(cap) = loaded.config.parameter_cap {
        stage("junction-tree", tree.model_size().check_cap(cap))?;
        println!("within the configured parameter cap of {cap}");
    }
    Ok(())
}

fn print_model_size(spec: &DomainSpec, size: &ModelSize) {
    println!(
        "domain: {} attributes, log10 size {:.2}",
        spec.domain.len(),
        spec.domain.log10_size()
    );
    println!(
        "model: {} maximal cliques, treewidth proxy {} (largest clique attribute count)",
        size.clique_sizes.len(),
        size.max_clique_len
    );
    println!(
        "parameters: {} total, estimated peak working set {} bytes",
        size.total_parameters, size.estimated_peak_bytes
    );
    for (clique, cells) in &size.clique_sizes {
        println!("  clique {clique}: {cells} cells");
    }
}

// ---------------------------------------------------------------------------
// run subcommand
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct MeasurementRecord {
    clique: Vec<String>,
    rows: usize,
    noise_scale: f64,
    answer: Vec<f64>,
}

#[derive(Serialize)]
struct AccountantRecord {
    budget: f64,
    consumed_fraction: [u64; 2],
    consumed_epsilon: f64,
    all_private: bool,
    entries: Vec<BudgetRecord>,
}

#[derive(Serialize)]
struct BudgetRecord {
    mechanism: String,
    clique: Option<Vec<String>>,
    share: [u64; 2],
    epsilon: f64,
    private: bool,
}

#[derive(Serialize)]
struct MeasurementLog {
    measurements: Vec<MeasurementRecord>,
    accountant: AccountantRecord,
}

#[derive(Serialize)]
struct MarginalRecord {
    clique: Vec<String>,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct MarginalsFile {
    total: f64,
    marginals: Vec<MarginalRecord>,
}

#[derive(Serialize)]
struct EstimationReportFile {
    algorithm: String,
    iterations: usize,
    final_loss: f64,
    theta_max_abs: f64,
    loss_trace: Vec<f64>,
    step_sizes: Vec<f64>,
}

#[derive(Serialize)]
struct WorkloadErrorFile {
    workload_error: f64,
    entries: usize,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), String> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).map_err(|e| format!("output: {e}"))?;
    fs::write(&path, text + "\n").map_err(|e| format!("output: {}: {e}", path.display()))
}

fn clique_names(domain: &pgm_core::Domain, clique: &Clique) -> Vec<String> {
    clique.names(domain).iter().map(|s| s.to_string()).collect()
}

fn accountant_record(domain: &pgm_core::Domain, acc: &PrivacyAccountant) -> AccountantRecord {
    let (num, den) = acc.consumed_fraction();
    AccountantRecord {
        budget: acc.budget(),
        consumed_fraction: [num, den],
        consumed_epsilon: acc.consumed_epsilon(),
        all_private: acc.all_private(),
        entries: acc
            .entries()
            .iter()
            .map(|e| BudgetRecord {
                mechanism: e.mechanism.clone(),
                clique: e.clique.as_ref().map(|c| clique_names(domain, c)),
                share: [e.share.0, e.share.1],
                epsilon: e.epsilon,
                private: e.private,
            })
            .collect(),
    }
}

fn run(
    config_path: &Path,
    seed_override: Option<u64>,
    output_override: Option<PathBuf>,
    noiseless: bool,
    verbose: bool,
) -> Result<(), String> {
    let started = Instant::now();
    let loaded = load_config(config_path)?;
    let mut config = loaded.config.clone();
    if let Some(s) = seed_override {
        config.seed = s;
    }
    let out_dir = output_override
        .unwrap_or_else(|| resolve(&loaded.base, &config.output_dir));
    fs::create_dir_all(&out_dir).map_err(|e| format!("output: {}: {e}", out_dir.display()))?;
    let domain = loaded.domain_spec.domain.clone();

    if verbose {
        eprintln!("loading dataset {}", config.dataset);
    }
    let csv_path = resolve(&loaded.base, &config.dataset);
    let bytes = fs::read(&csv_path).map_err(|e| format!("io: {}: {e}", csv_path.display()))?;
    let (dataset, dictionary) = stage(
        "dataset",
        parse_dataset_csv(&bytes, &loaded.domain_spec, &config.bins),
    )?;
    let m = dataset.len();
    if m == 0 {
        return Err("dataset: the CSV has no records".to_string());
    }
    if verbose {
        eprintln!("dataset: {m} records, {} attributes", domain.len());
    }

    let workload = load_workload(&LoadedConfig {
        config: config.clone(),
        base: loaded.base.clone(),
        domain_spec: loaded.domain_spec.clone(),
    })?;

    // Report the model size before any estimation work begins.
    let planned = planned_cliques(&LoadedConfig {
        config: config.clone(),
        base: loaded.base.clone(),
        domain_spec: loaded.domain_spec.clone(),
    })?;
    let tree = stage("junction-tree", JunctionTree::build(domain.clone(), &planned))?;
    let size = tree.model_size();
    print_model_size(&loaded.domain_spec, &size);
    if let Some(cap) = config.parameter_cap {
        stage("junction-tree", size.check_cap(cap))?;
    }

    let (model, accountant, report, measurement_records) = if let Some(rounds) =
        config.mwem_rounds
    {
        let workload = workload
            .as_ref()
            .ok_or_else(|| "config: mwem_rounds requires a workload spec".to_string())?;
        if verbose {
            eprintln!("running the select-measure-estimate loop for {rounds} rounds");
        }
        let mwem_config = MwemConfig {
            iterations: config.iterations,
            accelerated: config.algorithm == Algorithm::Alg2,
            noiseless,
            parameter_cap: config.parameter_cap,
        };
        let (model, accountant) = stage(
            "mechanisms",
            mwem_pgm(
                &dataset,
                workload,
                config.epsilon,
                rounds,
                &mwem_config,
                phase_seed(config.seed, PHASE_SELECT),
            ),
        )?;
        (model, accountant, None, Vec::new())
    } else {
        direct_pipeline(&config, &loaded, &dataset, &tree, noiseless, verbose)?
    };

    // --- reports -----------------------------------------------------------
    write_json(
        &out_dir,
        "measurement_log.json",
        &MeasurementLog {
            measurements: measurement_records,
            accountant: accountant_record(&domain, &accountant),
        },
    )?;

    let mut marginal_records = Vec::new();
    for clique in model.tree().maximal_cliques() {
        let factor = stage("inference", model_marginal(&model, clique))?;
        marginal_records.push(MarginalRecord {
            clique: clique_names(&domain, clique),
            shape: domain.shape(clique),
            values: factor.flat(),
        });
    }
    write_json(
        &out_dir,
        "marginals.json",
        &MarginalsFile {
            total: model.total(),
            marginals: marginal_records,
        },
    )?;

    if let Some(report) = &report {
        write_json(
            &out_dir,
            "estimation_report.json",
            &EstimationReportFile {
                algorithm: match config.algorithm {
                    Algorithm::Alg1 => "alg1".to_string(),
                    Algorithm::Alg2 => "alg2".to_string(),
                },
                iterations: report.iterations,
                final_loss: report.final_loss,
                theta_max_abs: report.theta_max_abs,
                loss_trace: report.loss_trace.clone(),
                step_sizes: report.step_sizes.clone(),
            },
        )?;
    }

    write_json(&out_dir, "value_dictionary.json", &dictionary)?;

    let mut error_line = String::new();
    if let Some(workload) = &workload {
        // Evaluation-only report: compares the fitted model against the true
        // data marginals (on the model's scale).
        let mut truth = CliqueVector::new(domain.clone());
        for clique in workload.cliques() {
            let mut factor = stage("dataset", dataset.marginal(clique))?;
            factor.scale(model.total() / m as f64);
            stage("dataset", truth.insert(factor))?;
        }
        let err = stage("mechanisms", workload_error(&truth, &model, workload))?;
        write_json(
            &out_dir,
            "workload_error.json",
            &WorkloadErrorFile {
                workload_error: err,
                entries: workload.entries().len(),
            },
        )?;
        error_line = format!("workload error: {err:.6e}\n");
    }

    if let Some(n) = config.synthetic_records {
        if verbose {
            eprintln!("sampling {n} synthetic records");
        }
        let synthetic = stage(
            "inference",
            sample_synthetic(&model, n, phase_seed(config.seed, PHASE_SAMPLE)),
        )?;
        write_synthetic_csv(&out_dir, &synthetic, &dictionary)?;
    }

    // Human-readable summary; timing lives here (and only here) so the
    // machine-readable outputs stay byte-identical under a fixed seed.
    let mut summary = String::new();
    summary.push_str(&format!(
        "records: {m}\nepsilon budget: {}\nconsumed epsilon: {}\nall outputs private: {}\n",
        accountant.budget(),
        accountant.consumed_epsilon(),
        accountant.all_private(),
    ));
    summary.push_str(&format!(
        "model total: {}\nmodel parameters: {}\n",
        model.total(),
        size.total_parameters
    ));
    if let Some(report) = &report {
        summary.push_str(&format!(
            "estimation: {} iterations, final loss {:.6e}\n",
            report.iterations, report.final_loss
        ));
        let spent: f64 = report.seconds_per_iteration.iter().sum();
        summary.push_str(&format!("estimation time: {spent:.3}s\n"));
    }
    summary.push_str(&error_line);
    summary.push_str(&format!("wall time: {:.3}s\n", started.elapsed().as_secs_f64()));
    fs::write(out_dir.join("summary.txt"), &summary)
        .map_err(|e| format!("output: {e}"))?;
    print!("{summary}");
    println!("outputs written to {}", out_dir.display());
    Ok(())
}

type DirectOutcome = (
    GraphicalModel,
    PrivacyAccountant,
    Option<EstimationReport>,
    Vec<MeasurementRecord>,
);

/// Measure every configured clique under the Laplace mechanism with equal
/// budget shares, then fit the model to the (rescaled) measurement log.
fn direct_pipeline(
    config: &RunConfig,
    loaded: &LoadedConfig,
    dataset: &Dataset,
    tree: &JunctionTree,
    noiseless: bool,
    verbose: bool,
) -> Result<DirectOutcome, String> {
    let domain = &loaded.domain_spec.domain;
    let spec = config
        .measurements
        .as_ref()
        .ok_or_else(|| "config: a measurement spec is required".to_string())?;
    let text = spec_text(&loaded.base, spec)?;
    let planned = stage("measurements", parse_measurement_spec(&text, domain))?;

    let mut accountant = stage("mechanisms", PrivacyAccountant::new(config.epsilon))?;
    let mut rng = ChaCha12Rng::seed_from_u64(phase_seed(config.seed, PHASE_MEASURE));
    let share = (1u64, planned.len() as u64);
    let mut measurements: Vec<LinearMeasurement> = Vec::with_capacity(planned.len());
    for (clique, q) in &planned {
        let data_marginal = stage("dataset", dataset.marginal(clique))?;
        let mm = stage(
            "mechanisms",
            laplace_measure(
                &data_marginal,
                q,
                share,
                dataset.len(),
                noiseless,
                &mut accountant,
                &mut rng,
            ),
        )?;
        measurements.push(mm);
    }
    if verbose {
        eprintln!(
            "measured {} cliques, consumed epsilon {}",
            measurements.len(),
            accountant.consumed_epsilon()
        );
    }

    // Measurements are on the normalized (sums-to-1) scale. A known total
    // rescales them (post-processing); otherwise the total is estimated from
    // the measurements by inverse-variance combination.
    let total = match config.total {
        TotalMode::Known(t) => {
            for mm in &mut measurements {
                mm.answer *= t;
                mm.noise_scale *= t;
            }
            t
        }
        TotalMode::Estimate => {
            let (t, _) = stage("estimation", estimate_total(&measurements))?;
            if !(t > 0.0) {
                return Err(format!(
                    "estimation: the estimated total {t} is not positive; \
                     supply a known total or increase the budget"
                ));
            }
            t
        }
    };

    let rescaled = rescale_measurements(&measurements);
    let spec = LossSpec::l2(rescaled);
    let tree = Arc::new(tree.clone());
    if verbose {
        eprintln!(
            "fitting with {:?} for up to {} iterations at total {total}",
            config.algorithm, config.iterations
        );
    }
    let (model, report) = match config.algorithm {
        Algorithm::Alg1 => stage(
            "estimation",
            mirror_descent(&tree, &spec, total, config.iterations, StepRule::default()),
        )?,
        Algorithm::Alg2 => stage(
            "estimation",
            accelerated_estimate(&tree, &spec, total, config.iterations, None),
        )?,
    };

    let records = measurements
        .iter()
        .map(|mm| MeasurementRecord {
            clique: clique_names(domain, &mm.clique),
            rows: mm.query.nrows(),
            noise_scale: mm.noise_scale,
            answer: mm.answer.to_vec(),
        })
        .collect();
    Ok((model, accountant, Some(report), records))
}

fn write_synthetic_csv(
    dir: &Path,
    synthetic: &Dataset,
    dictionary: &ValueDictionary,
) -> Result<(), String> {
    let path = dir.join("synthetic.csv");
    let mut writer = csv::Writer::from_path(&path)
        .map_err(|e| format!("output: {}: {e}", path.display()))?;
    let header: Vec<&str> = dictionary.iter().map(|(name, _)| name.as_str()).collect();
    writer
        .write_record(&header)
        .map_err(|e| format!("output: {e}"))?;
    for record in synthetic.records() {
        let mut row = Vec::with_capacity(record.len());
        for (a, &code) in record.iter().enumerate() {
            row.push(decode_value(&dictionary[a].1, code));
        }
        writer.write_record(&row).map_err(|e| format!("output: {e}"))?;
    }
    writer.flush().map_err(|e| format!("output: {e}"))
}

/// Maps an integer code back to a printable value. Categorical codes the
/// dataset never exhibited (possible under first-seen coding) get a stable
/// placeholder; binned codes decode to the bin midpoint.
fn decode_value(coding: &AttributeCoding, code: usize) -> String {
    match coding {
        AttributeCoding::Categorical { labels } => labels
            .get(code)
            .cloned()
            .unwrap_or_else(|| format!("__unseen_{code}")),
        AttributeCoding::Binned { min, max, count } => {
            let width = (max - min) / *count as f64;
            let midpoint = min + (code as f64 + 0.5) * width;
            format!("{midpoint}")
        }
    }
}

// ---------------------------------------------------------------------------
// query subcommand
// ---------------------------------------------------------------------------

/// Re-runs the (deterministic) pipeline to rebuild the model, then answers a
/// factored query from it. Post-processing only: no extra budget is spent
/// because the measurement noise stream is identical.
fn query_model(config_path: &Path, query_path: &Path) -> Result<(), String> {
    let loaded = load_config(config_path)?;
    let domain = loaded.domain_spec.domain.clone();
    let query_text = read_file(query_path)?;
    let query = stage("query", parse_query_spec(&query_text, &domain))?;

    let csv_path = resolve(&loaded.base, &loaded.config.dataset);
    let bytes = fs::read(&csv_path).map_err(|e| format!("io: {}: {e}", csv_path.display()))?;
    let (dataset, _) = stage(
        "dataset",
        parse_dataset_csv(&bytes, &loaded.domain_spec, &loaded.config.bins),
    )?;
    let planned = planned_cliques(&loaded)?;
    let tree = stage("junction-tree", JunctionTree::build(domain.clone(), &planned))?;
    let (model, _, _, _) = if loaded.config.mwem_rounds.is_some() {
        return Err("query: rerun with the run subcommand for the select-measure loop".into());
    } else {
        direct_pipeline(&loaded.config, &loaded, &dataset, &tree, false, false)?
    };

    let answer = stage("inference", answer_factored_query(&model, &query))?;
    let axes: Vec<&str> = answer.axes.iter().map(|&a| domain.name(a)).collect();
    let out = serde_json::json!({
        "axes": axes,
        "shape": answer.values.shape(),
        "values": answer.values.iter().copied().collect::<Vec<f64>>(),
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&out).map_err(|e| format!("output: {e}"))?
    );
    Ok(())
}
