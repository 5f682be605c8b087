//! File-format parsing: domain JSON, measurement/workload/query specs, the
//! run configuration, and CSV dataset ingestion with value coding.
//!
//! Every parser takes raw text/bytes and never panics on malformed input.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::domain::{Clique, Domain};
use crate::error::{Error, Result};
use crate::inference::{build_block, FactoredQuery, QueryBlock};
use crate::mechanisms::{adjacent_triples_workload, Workload};

/// A parsed domain file: the domain plus any declared category labels.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub domain: Arc<Domain>,
    /// Per attribute: declared category labels (None for plain cardinality).
    pub categories: Vec<Option<Vec<String>>>,
}

/// Parses a domain file: a JSON object mapping attribute name to either a
/// cardinality or a list of category labels. Attribute order = file order.
pub fn parse_domain(text: &str) -> Result<DomainSpec> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Parse("domain file must be a JSON object".into()))?;
    let mut attrs = Vec::with_capacity(obj.len());
    let mut categories = Vec::with_capacity(obj.len());
    for (name, v) in obj {
        match v {
            serde_json::Value::Number(n) => {
                let card = n
                    .as_u64()
                    .ok_or_else(|| Error::Parse(format!("attribute {name}: cardinality must be a positive integer")))?;
                attrs.push((name.clone(), card as usize));
                categories.push(None);
            }
            serde_json::Value::Array(items) => {
                let mut labels = Vec::with_capacity(items.len());
                for item in items {
                    let s = item.as_str().ok_or_else(|| {
                        Error::Parse(format!("attribute {name}: category labels must be strings"))
                    })?;
                    labels.push(s.to_string());
                }
                attrs.push((name.clone(), labels.len()));
                categories.push(Some(labels));
            }
            _ => {
                return Err(Error::Parse(format!(
                    "attribute {name}: expected a cardinality or a label list"
                )))
            }
        }
    }
    let domain = Domain::new(attrs)?;
    Ok(DomainSpec { domain, categories })
}

/// A per-attribute query block in spec files: either a table name or a
/// parameterized form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlockSpec {
    Name(String),
    Detailed(DetailedBlock),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetailedBlock {
    Evidence(usize),
    EvidenceSet(Vec<usize>),
    Bucket { map: Vec<usize>, buckets: usize },
    Moments(usize),
    Dense(Vec<Vec<f64>>),
}

impl BlockSpec {
    pub fn to_block(&self) -> Result<QueryBlock> {
        match self {
            BlockSpec::Name(name) => match name.as_str() {
                "identity" => Ok(QueryBlock::Identity),
                "ones" | "total" => Ok(QueryBlock::Ones),
                "prefix" | "cdf" => Ok(QueryBlock::Prefix),
                "mean" => Ok(QueryBlock::Mean),
                other => Err(Error::Parse(format!("unknown query block '{other}'"))),
            },
            BlockSpec::Detailed(d) => Ok(match d {
                DetailedBlock::Evidence(j) => QueryBlock::Evidence(*j),
                DetailedBlock::EvidenceSet(s) => QueryBlock::EvidenceSet(s.clone()),
                DetailedBlock::Bucket { map, buckets } => QueryBlock::Bucket {
                    map: map.clone(),
                    buckets: *buckets,
                },
                DetailedBlock::Moments(k) => QueryBlock::Moments(*k),
                DetailedBlock::Dense(rows) => QueryBlock::Dense(rows.clone()),
            }),
        }
    }
}

/// The query matrix of one measurement or workload entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CliqueQuerySpec {
    /// One named block applied to every attribute of the clique (Kronecker).
    Name(String),
    /// Explicit dense matrix over the flattened clique cells.
    Dense { dense: Vec<Vec<f64>> },
    /// Per-attribute blocks, Kronecker product in clique order; attributes
    /// not listed default to identity.
    Blocks { blocks: HashMap<String, BlockSpec> },
}

fn kron(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::linalg::kron(a, b)
}

/// Upper bound on the entries of any dense query matrix a spec file may
/// request (512 MiB of f64); adversarial or mistaken specs fail cleanly
/// instead of exhausting memory.
const MAX_QUERY_CELLS: usize = 1 << 26;

fn check_query_size(rows: usize, cols: usize) -> Result<()> {
    if rows.saturating_mul(cols) > MAX_QUERY_CELLS {
        return Err(Error::Feasibility(format!(
            "query matrix of {rows} x {cols} exceeds the dense construction limit"
        )));
    }
    Ok(())
}

fn clique_from_names(domain: &Domain, names: &[String]) -> Result<Clique> {
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    Clique::from_names(domain, &refs)
}

fn build_clique_query(
    domain: &Domain,
    clique: &Clique,
    spec: Option<&CliqueQuerySpec>,
) -> Result<Array2<f64>> {
    let per_attr: Vec<Array2<f64>> = match spec {
        None => clique
            .attrs()
            .iter()
            .map(|&a| build_block(&QueryBlock::Identity, domain.cardinality(a)))
            .collect::<Result<_>>()?,
        Some(CliqueQuerySpec::Name(name)) => {
            let block = BlockSpec::Name(name.clone()).to_block()?;
            clique
                .attrs()
                .iter()
                .map(|&a| build_block(&block, domain.cardinality(a)))
                .collect::<Result<_>>()?
        }
        Some(CliqueQuerySpec::Dense { dense }) => {
            let size = domain.clique_size(clique);
            check_query_size(dense.len(), size)?;
            let block = build_block(&QueryBlock::Dense(dense.clone()), size)?;
            return Ok(block);
        }
        Some(CliqueQuerySpec::Blocks { blocks }) => {
            let mut out = Vec::with_capacity(clique.attrs().len());
            for &a in clique.attrs() {
                let block = match blocks.get(domain.name(a)) {
                    Some(spec) => spec.to_block()?,
                    None => QueryBlock::Identity,
                };
                out.push(build_block(&block, domain.cardinality(a))?);
            }
            for name in blocks.keys() {
                let idx = domain.index_of(name)?;
                if !clique.contains(idx) {
                    return Err(Error::Parse(format!(
                        "block for attribute {name} outside the clique {clique}"
                    )));
                }
            }
            out
        }
    };
    let rows = per_attr
        .iter()
        .fold(1usize, |acc, m| acc.saturating_mul(m.nrows()));
    let cols = per_attr
        .iter()
        .fold(1usize, |acc, m| acc.saturating_mul(m.ncols()));
    check_query_size(rows, cols)?;
    let mut q = Array2::eye(1);
    for m in &per_attr {
        q = kron(&q, m);
    }
    Ok(q)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasurementEntry {
    pub clique: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<CliqueQuerySpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeasurementSpecJson {
    measurements: Vec<MeasurementEntry>,
}

/// Parses a measurement spec: which cliques to measure and with which query
/// matrices (default identity).
pub fn parse_measurement_spec(
    text: &str,
    domain: &Domain,
) -> Result<Vec<(Clique, Array2<f64>)>> {
    let spec: MeasurementSpecJson = serde_json::from_str(text)?;
    if spec.measurements.is_empty() {
        return Err(Error::Parse("measurement spec lists no measurements".into()));
    }
    let mut out = Vec::with_capacity(spec.measurements.len());
    for entry in &spec.measurements {
        let clique = clique_from_names(domain, &entry.clique)?;
        let q = build_clique_query(domain, &clique, entry.query.as_ref())?;
        out.push((clique, q));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum WorkloadSpecJson {
    AdjacentTriples { adjacent_triples: bool },
    List { workload: Vec<MeasurementEntry> },
}

/// Parses a workload spec: either an explicit clique list (same schema as
/// measurements) or the adjacent-triples generator.
pub fn parse_workload_spec(text: &str, domain: &Domain) -> Result<Workload> {
    let spec: WorkloadSpecJson = serde_json::from_str(text)?;
    match spec {
        WorkloadSpecJson::AdjacentTriples { adjacent_triples } => {
            if !adjacent_triples {
                return Err(Error::Parse("adjacent_triples must be true".into()));
            }
            let card = domain.cardinality(0);
            for i in 0..domain.len() {
                if domain.cardinality(i) != card {
                    return Err(Error::Parse(
                        "adjacent_triples needs a uniform cardinality".into(),
                    ));
                }
            }
            let (_, w) = adjacent_triples_workload(domain.len(), card)?;
            Ok(w)
        }
        WorkloadSpecJson::List { workload } => {
            let mut entries = Vec::with_capacity(workload.len());
            for entry in &workload {
                let clique = clique_from_names(domain, &entry.clique)?;
                let q = build_clique_query(domain, &clique, entry.query.as_ref())?;
                entries.push((clique, q));
            }
            Workload::new(entries)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QuerySpecJson {
    blocks: HashMap<String, BlockSpec>,
}

/// Parses a factored-query spec: per-attribute blocks, unlisted attributes
/// marginalized out (all-ones).
pub fn parse_query_spec(text: &str, domain: &Domain) -> Result<FactoredQuery> {
    let spec: QuerySpecJson = serde_json::from_str(text)?;
    let mut blocks = Vec::with_capacity(spec.blocks.len());
    for (name, b) in &spec.blocks {
        blocks.push((domain.index_of(name)?, b.to_block()?));
    }
    FactoredQuery::from_blocks(domain, &blocks)
}

/// Equal-width binning rule for a numeric CSV column over [min, max).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinRule {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum TotalMode {
    Estimate,
    Known(f64),
}

impl Default for TotalMode {
    fn default() -> Self {
        TotalMode::Estimate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Alg1,
    Alg2,
}

/// Inline content or a path to another file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InlineOrPath {
    Path(String),
    Inline(serde_json::Value),
}

fn default_iterations() -> usize {
    1000
}

/// Declarative description of one end-to-end run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: String,
    pub domain: String,
    pub measurements: Option<InlineOrPath>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<InlineOrPath>,
    pub epsilon: f64,
    pub algorithm: Algorithm,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: String,
    #[serde(default)]
    pub total: TotalMode,
    /// Binning rules keyed by numeric column name.
    #[serde(default)]
    pub bins: HashMap<String, BinRule>,
    /// Synthetic records to sample (omit to skip sampling).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_records: Option<usize>,
    /// Run the select-measure-estimate loop with this many rounds instead of
    /// measuring every listed clique directly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mwem_rounds: Option<usize>,
    /// Junction-tree parameter cap; runs above it fail with a size report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_cap: Option<usize>,
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = serde_json::from_str(text)?;
    if !(config.epsilon > 0.0) {
        return Err(Error::Parse("epsilon must be positive".into()));
    }
    if config.iterations < 1 {
        return Err(Error::Parse("iterations must be >= 1".into()));
    }
    if let TotalMode::Known(m) = config.total {
        if !(m > 0.0) {
            return Err(Error::Parse("known total must be positive".into()));
        }
    }
    Ok(config)
}

/// How each attribute's raw values were coded to integers; emitted alongside
/// outputs so synthetic data can be decoded.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeCoding {
    Categorical { labels: Vec<String> },
    Binned { min: f64, max: f64, count: usize },
}

pub type ValueDictionary = Vec<(String, AttributeCoding)>;

/// Parses a CSV dataset against a domain. Categorical columns use the label
/// order declared in the domain file, or first-seen order otherwise; numeric
/// columns require a binning rule. Unknown values error with the row number.
pub fn parse_dataset_csv(
    bytes: &[u8],
    spec: &DomainSpec,
    bins: &HashMap<String, BinRule>,
) -> Result<(Dataset, ValueDictionary)> {
    let domain = &spec.domain;
    for (name, rule) in bins {
        let idx = domain.index_of(name)?;
        if rule.count != domain.cardinality(idx) {
            return Err(Error::Parse(format!(
                "column {name}: {} bins declared but cardinality is {}",
                rule.count,
                domain.cardinality(idx)
            )));
        }
        if !(rule.max > rule.min) || rule.count == 0 {
            return Err(Error::Parse(format!("column {name}: invalid bin range")));
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("bad CSV header: {e}")))?
        .clone();
    let mut column_of = vec![usize::MAX; domain.len()];
    for a in 0..domain.len() {
        let name = domain.name(a);
        match headers.iter().position(|h| h == name) {
            Some(col) => column_of[a] = col,
            None => {
                return Err(Error::Parse(format!(
                    "domain attribute {name} missing from the CSV header"
                )))
            }
        }
    }

    // label -> code per attribute, seeded from declared label lists
    let mut coding: Vec<HashMap<String, usize>> = Vec::with_capacity(domain.len());
    for a in 0..domain.len() {
        let mut map = HashMap::new();
        if let Some(labels) = &spec.categories[a] {
            for (i, l) in labels.iter().enumerate() {
                map.insert(l.clone(), i);
            }
        }
        coding.push(map);
    }
    let declared: Vec<bool> = spec.categories.iter().map(|c| c.is_some()).collect();

    let mut records = Vec::new();
    for (row_idx, row) in reader.records().enumerate() {
        let line = row_idx + 2; // 1-based, after the header
        let row = row.map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        let mut record = Vec::with_capacity(domain.len());
        for a in 0..domain.len() {
            let name = domain.name(a);
            let raw = row.get(column_of[a]).ok_or_else(|| {
                Error::Parse(format!("line {line}: missing value for column {name}"))
            })?;
            let code = if let Some(rule) = bins.get(name) {
                let v: f64 = raw.trim().parse().map_err(|_| {
                    Error::Parse(format!(
                        "line {line}: column {name}: '{raw}' is not a number"
                    ))
                })?;
                if v < rule.min || v >= rule.max {
                    return Err(Error::Parse(format!(
                        "line {line}: column {name}: value {v} outside [{}, {})",
                        rule.min, rule.max
                    )));
                }
                let width = (rule.max - rule.min) / rule.count as f64;
                (((v - rule.min) / width) as usize).min(rule.count - 1)
            } else if let Some(&code) = coding[a].get(raw) {
                code
            } else if declared[a] {
                return Err(Error::Parse(format!(
                    "line {line}: column {name}: unknown category '{raw}'"
                )));
            } else {
                let next = coding[a].len();
                if next >= domain.cardinality(a) {
                    return Err(Error::Parse(format!(
                        "line {line}: column {name}: more than {} distinct values",
                        domain.cardinality(a)
                    )));
                }
                coding[a].insert(raw.to_string(), next);
                next
            };
            record.push(code);
        }
        records.push(record);
    }

    let mut dictionary = Vec::with_capacity(domain.len());
    for a in 0..domain.len() {
        let name = domain.name(a).to_string();
        let entry = if let Some(rule) = bins.get(domain.name(a)) {
            AttributeCoding::Binned {
                min: rule.min,
                max: rule.max,
                count: rule.count,
            }
        } else {
            let mut labels = vec![String::new(); coding[a].len()];
            for (label, &code) in &coding[a] {
                labels[code] = label.clone();
            }
            AttributeCoding::Categorical { labels }
        };
        dictionary.push((name, entry));
    }

    let dataset = Dataset::new(domain.clone(), records)?;
    Ok((dataset, dictionary))
}
