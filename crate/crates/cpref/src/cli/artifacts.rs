//! Flat CSV/JSON artifacts exchanged between pipeline stages.
//!
//! Every artifact embeds its schema version, the producing configuration
//! digest and the attribute universe: CSV files carry them in one leading
//! `#` comment line, JSON files in wrapper fields. Rule slots use the
//! canonical text convention (items comma-separated, lexicographically
//! sorted, `NULL` for the empty context).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::belief::{Branch, ScoredRule};
use crate::error::{Error, Result};
use crate::eval::TopkRow;
use crate::measures::MeasureRecord;
use crate::model::{AttributeUniverse, Itemset, Rule};
use crate::pra::PraTrace;

pub const SCHEMA_RULES: &str = "rules/v1";
pub const SCHEMA_SCORED: &str = "scored/v1";
pub const SCHEMA_MEASURES: &str = "measures/v1";
pub const SCHEMA_EVAL: &str = "eval/v1";
pub const SCHEMA_TRACE: &str = "pra-trace/v1";
pub const SCHEMA_MANIFEST: &str = "manifest/v1";

pub fn digest_hex(digest: &[u8; 32]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn header_line(schema: &str, digest: &[u8; 32], universe: &AttributeUniverse) -> String {
    format!(
        "# cpref schema={schema} config={} universe={}",
        digest_hex(digest),
        universe.names().join("|")
    )
}

#[derive(Debug, Clone)]
pub struct ArtifactHeader {
    pub schema: String,
    pub config: String,
    pub universe: Vec<String>,
}

/// Reads the leading `#` metadata line, if any.
pub fn read_header(path: &Path) -> Result<Option<ArtifactHeader>> {
    let file = std::fs::File::open(path)?;
    let mut first = String::new();
    std::io::BufReader::new(file).read_line(&mut first)?;
    let Some(rest) = first.trim_end().strip_prefix("# cpref ") else {
        return Ok(None);
    };
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for token in rest.split_whitespace() {
        if let Some((k, v)) = token.split_once('=') {
            fields.insert(k, v);
        }
    }
    Ok(Some(ArtifactHeader {
        schema: fields.get("schema").unwrap_or(&"").to_string(),
        config: fields.get("config").unwrap_or(&"").to_string(),
        universe: fields
            .get("universe")
            .map(|u| u.split('|').map(str::to_string).collect())
            .unwrap_or_default(),
    }))
}

fn check_header(path: &Path, expected_schema: &str, universe: &AttributeUniverse) -> Result<()> {
    if let Some(header) = read_header(path)? {
        if header.schema != expected_schema {
            return Err(Error::SchemaMismatch {
                expected: expected_schema.to_string(),
                found: header.schema,
            });
        }
        if !header.universe.is_empty() && header.universe != universe.names() {
            return Err(Error::UniverseMismatch);
        }
    }
    Ok(())
}

fn slot_text(itemset: &Itemset, universe: &AttributeUniverse, null_when_empty: bool) -> String {
    if itemset.is_empty() && null_when_empty {
        return "NULL".to_string();
    }
    universe.decode(itemset).collect::<Vec<_>>().join(",")
}

fn parse_slot(text: &str, universe: &AttributeUniverse, allow_null: bool) -> Result<Itemset> {
    let trimmed = text.trim();
    if allow_null && (trimmed == "NULL" || trimmed.is_empty()) {
        return universe.encode(Vec::<&str>::new());
    }
    universe.encode(trimmed.split(',').map(str::trim).filter(|s| !s.is_empty()))
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_opt(text: &str, what: &str, line: usize) -> Result<Option<f64>> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    trimmed
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::MalformedRow {
            line,
            reason: format!("bad {what} `{trimmed}`"),
        })
}

fn parse_f64(text: &str, what: &str, line: usize) -> Result<f64> {
    text.trim().parse::<f64>().map_err(|_| Error::MalformedRow {
        line,
        reason: format!("bad {what} `{text}`"),
    })
}

fn csv_writer(path: &Path, header: String) -> Result<csv::Writer<std::fs::File>> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{header}")?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(std::fs::File::open(path)?))
}

/// One parsed row of a ruleset artifact.
#[derive(Debug, Clone)]
pub struct RuleRow {
    pub user: Option<String>,
    pub rule: Rule,
    pub support: f64,
    pub confidence: Option<f64>,
}

/// Writes `i_plus,i_minus,context,support,confidence` rows, with a
/// leading `user` column when any row carries one.
pub fn write_rules_csv(
    path: &Path,
    universe: &AttributeUniverse,
    rows: &[(Option<String>, Rule, MeasureRecord)],
    digest: &[u8; 32],
) -> Result<()> {
    let with_user = rows.iter().any(|(user, _, _)| user.is_some());
    let mut writer = csv_writer(path, header_line(SCHEMA_RULES, digest, universe))?;
    let mut header = Vec::new();
    if with_user {
        header.push("user");
    }
    header.extend(["i_plus", "i_minus", "context", "support", "confidence"]);
    writer.write_record(&header)?;
    for (user, rule, record) in rows {
        let mut fields = Vec::new();
        if with_user {
            fields.push(user.clone().unwrap_or_default());
        }
        fields.push(slot_text(rule.plus(), universe, false));
        fields.push(slot_text(rule.minus(), universe, false));
        fields.push(slot_text(rule.context(), universe, true));
        fields.push(record.support.to_string());
        fields.push(fmt_opt(record.confidence));
        writer.write_record(&fields)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_rules_csv(path: &Path, universe: &AttributeUniverse) -> Result<Vec<RuleRow>> {
    check_header(path, SCHEMA_RULES, universe)?;
    let mut reader = csv_reader(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let user_col = col("user");
    let (plus_col, minus_col, ctx_col) = match (col("i_plus"), col("i_minus"), col("context")) {
        (Some(p), Some(m), Some(c)) => (p, m, c),
        _ => {
            return Err(Error::SchemaMismatch {
                expected: "columns i_plus,i_minus,context".into(),
                found: headers.iter().collect::<Vec<_>>().join(","),
            })
        }
    };
    let supp_col = col("support");
    let conf_col = col("confidence");

    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::MalformedRow {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        let line = idx + 1;
        let get = |i: usize| record.get(i).unwrap_or("");
        let rule = Rule::new(
            parse_slot(get(plus_col), universe, false)?,
            parse_slot(get(minus_col), universe, false)?,
            parse_slot(get(ctx_col), universe, true)?,
        )?;
        rows.push(RuleRow {
            user: user_col.map(|i| get(i).to_string()).filter(|u| !u.is_empty()),
            rule,
            support: supp_col.map_or(Ok(0.0), |i| parse_f64(get(i), "support", line))?,
            confidence: conf_col.map_or(Ok(None), |i| parse_opt(get(i), "confidence", line))?,
        });
    }
    Ok(rows)
}

/// Writes scored rules; the `user` column appears when any row carries one.
pub fn write_scored_csv(
    path: &Path,
    universe: &AttributeUniverse,
    rows: &[(Option<String>, ScoredRule)],
    digest: &[u8; 32],
) -> Result<()> {
    let with_user = rows.iter().any(|(user, _)| user.is_some());
    let mut writer = csv_writer(path, header_line(SCHEMA_SCORED, digest, universe))?;
    let mut header = Vec::new();
    if with_user {
        header.push("user");
    }
    header.extend([
        "rule",
        "support",
        "confidence",
        "belief",
        "deviation",
        "eta",
        "branch",
    ]);
    writer.write_record(&header)?;
    for (user, scored) in rows {
        let mut fields = Vec::new();
        if with_user {
            fields.push(user.clone().unwrap_or_default());
        }
        fields.push(scored.text.clone());
        fields.push(scored.support.to_string());
        fields.push(fmt_opt(scored.confidence));
        fields.push(scored.belief.to_string());
        fields.push(scored.deviation.to_string());
        fields.push(scored.eta.to_string());
        fields.push(scored.branch.to_string());
        writer.write_record(&fields)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_scored_csv(
    path: &Path,
    universe: &AttributeUniverse,
) -> Result<Vec<(Option<String>, ScoredRule)>> {
    check_header(path, SCHEMA_SCORED, universe)?;
    let mut reader = csv_reader(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let user_col = col("user");
    let need = |name: &str| {
        col(name).ok_or_else(|| Error::SchemaMismatch {
            expected: format!("column {name}"),
            found: headers.iter().collect::<Vec<_>>().join(","),
        })
    };
    let rule_col = need("rule")?;
    let supp_col = need("support")?;
    let conf_col = need("confidence")?;
    let belief_col = need("belief")?;
    let dev_col = need("deviation")?;
    let eta_col = need("eta")?;
    let branch_col = need("branch")?;

    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::MalformedRow {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        let line = idx + 1;
        let get = |i: usize| record.get(i).unwrap_or("");
        let text = get(rule_col).to_string();
        let rule = Rule::parse(&text, universe)?;
        let branch = match get(branch_col) {
            "generalized" => Branch::Generalized,
            "personalized" => Branch::Personalized,
            other => {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("bad branch `{other}`"),
                })
            }
        };
        rows.push((
            user_col.map(|i| get(i).to_string()).filter(|u| !u.is_empty()),
            ScoredRule {
                rule,
                text,
                support: parse_f64(get(supp_col), "support", line)?,
                confidence: parse_opt(get(conf_col), "confidence", line)?,
                belief: parse_f64(get(belief_col), "belief", line)?,
                deviation: parse_f64(get(dev_col), "deviation", line)?,
                eta: parse_f64(get(eta_col), "eta", line)?,
                branch,
            },
        ));
    }
    Ok(rows)
}

/// Per-rule measure records: `rule,agree,against,support,confidence`.
pub fn write_measures_csv(
    path: &Path,
    universe: &AttributeUniverse,
    rows: &[(Rule, MeasureRecord)],
    digest: &[u8; 32],
) -> Result<()> {
    let mut writer = csv_writer(path, header_line(SCHEMA_MEASURES, digest, universe))?;
    writer.write_record(["rule", "agree", "against", "support", "confidence"])?;
    for (rule, record) in rows {
        writer.write_record([
            rule.canonical_text(universe),
            record.agree.to_string(),
            record.against.to_string(),
            record.support.to_string(),
            fmt_opt(record.confidence),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Long-format experiment table: `key,K,metric,value,users`.
pub fn write_eval_csv(
    path: &Path,
    universe: &AttributeUniverse,
    rows: &[TopkRow],
    digest: &[u8; 32],
) -> Result<()> {
    let mut writer = csv_writer(path, header_line(SCHEMA_EVAL, digest, universe))?;
    writer.write_record(["key", "K", "metric", "value", "users"])?;
    for row in rows {
        writer.write_record([
            row.key.clone(),
            row.k.to_string(),
            row.metric.clone(),
            fmt_opt(row.value),
            row.users.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TraceDocument<'a> {
    schema: &'static str,
    config: String,
    universe: &'a [String],
    trace: &'a PraTrace,
}

pub fn write_trace_json(
    path: &Path,
    universe: &AttributeUniverse,
    trace: &PraTrace,
    digest: &[u8; 32],
) -> Result<()> {
    let doc = TraceDocument {
        schema: SCHEMA_TRACE,
        config: digest_hex(digest),
        universe: universe.names(),
        trace,
    };
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, &doc)
        .map_err(|e| Error::InvalidConfig(format!("trace serialization: {e}")))?;
    writeln!(file)?;
    Ok(())
}

/// Run manifest: configuration echo, input digests and artifact list.
#[derive(Serialize)]
pub struct Manifest<C: Serialize> {
    pub schema: &'static str,
    pub tool: String,
    pub config_digest: String,
    pub config: C,
    pub inputs: BTreeMap<String, String>,
    pub artifacts: Vec<String>,
}

impl<C: Serialize> Manifest<C> {
    pub fn new(config: C, digest: &[u8; 32]) -> Self {
        Manifest {
            schema: SCHEMA_MANIFEST,
            tool: format!("cpref {}", env!("CARGO_PKG_VERSION")),
            config_digest: digest_hex(digest),
            config,
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Artifacts are recorded by file name: they always live next to the
    /// manifest, and bare names keep reruns into different directories
    /// byte-identical.
    pub fn record_artifact(&mut self, path: &Path) {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.artifacts.push(name);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut file, self)
            .map_err(|e| Error::InvalidConfig(format!("manifest serialization: {e}")))?;
        writeln!(file)?;
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest: [u8; 32] = hasher.finalize().into();
    Ok(digest_hex(&digest))
}

/// Machine-readable failure record written next to the artifacts of the
/// failing stage.
#[derive(Serialize)]
pub struct FailureRecord {
    pub schema: &'static str,
    pub stage: String,
    pub error: String,
}

pub fn write_failure(dir: &Path, stage: &str, error: &Error) {
    let record = FailureRecord {
        schema: "failure/v1",
        stage: stage.to_string(),
        error: error.to_string(),
    };
    let _ = std::fs::create_dir_all(dir);
    if let Ok(mut file) = std::fs::File::create(dir.join("failure.json")) {
        let _ = serde_json::to_writer_pretty(&mut file, &record);
        let _ = writeln!(file);
    }
}
