//! Instance generators and the text file format.
//!
//! Files are TOML documents tagged with `format_version = "1"` and a `kind`
//! of `instance`, `profile` or `trace`. Routing rows are bitstrings, so the
//! two-link example reads:
//!
//! ```toml
//! format_version = "1"
//! kind = "instance"
//! links = 2
//! flows = 3
//! gamma = 1.0
//! payoff_mode = "uniform"
//! routing = ["110", "101"]
//! capacities = [10.0, 100.0]
//! weights = [1.0, 1.0, 1.0]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alloc::{AllocationTrace, IterationRecord};
use crate::model::{ModelError, NetworkInstance, PayoffMode, StrategyProfile};

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("unsupported format version {found:?} (expected \"{FORMAT_VERSION}\")")]
    VersionMismatch { found: String },
    #[error("invalid contents: {0}")]
    Invalid(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FormatError {
    /// Stable numeric code per failure class.
    pub fn code(&self) -> i32 {
        match self {
            FormatError::Malformed(_) => 1,
            FormatError::VersionMismatch { .. } => 2,
            FormatError::Invalid(_) => 3,
            FormatError::Io { .. } => 4,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("routing probability must lie in (0, 1], got {0}")]
    Probability(f64),
    #[error("capacity range ({0}, {1}) must be positive and ordered")]
    CapRange(f64, f64),
    #[error("serial topology needs at least 2 links, got {0}")]
    SerialLength(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Parameters of [`random_instance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomInstanceSpec {
    pub links: usize,
    pub flows: usize,
    pub p_route: f64,
    pub cap_range: (f64, f64),
    pub gamma: f64,
    pub payoff_mode: PayoffMode,
    pub seed: u64,
    /// Draw flow weights uniformly from `[0.5, 2]` instead of using 1.
    pub randomize_weights: bool,
}

impl Default for RandomInstanceSpec {
    fn default() -> Self {
        Self {
            links: 5,
            flows: 8,
            p_route: 0.5,
            cap_range: (10.0, 100.0),
            gamma: 0.5,
            payoff_mode: PayoffMode::PathLength,
            seed: 0,
            randomize_weights: false,
        }
    }
}

/// Random topology: each flow crosses each link independently with
/// probability `p_route`; a flow left on no link is put on one link chosen
/// uniformly. Capacities are uniform in `cap_range`.
pub fn random_instance(spec: &RandomInstanceSpec) -> Result<NetworkInstance, GenError> {
    let p = spec.p_route;
    if !(p > 0.0 && p <= 1.0) {
        return Err(GenError::Probability(p));
    }
    let (lo, hi) = spec.cap_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(GenError::CapRange(lo, hi));
    }
    let (links, flows) = (spec.links, spec.flows);
    if links == 0 || flows == 0 {
        return Err(ModelError::EmptyInstance { links, flows }.into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut routing: Vec<bool> = (0..links * flows).map(|_| rng.gen_bool(p)).collect();
    for r in 0..flows {
        if (0..links).all(|l| !routing[l * flows + r]) {
            let l = rng.gen_range(0..links);
            routing[l * flows + r] = true;
        }
    }
    let capacities = (0..links)
        .map(|_| if hi > lo { rng.gen_range(lo..hi) } else { lo })
        .collect();
    let weights = if spec.randomize_weights {
        (0..flows).map(|_| rng.gen_range(0.5..2.0)).collect()
    } else {
        vec![1.0; flows]
    };
    Ok(NetworkInstance::new(
        links,
        flows,
        routing,
        capacities,
        spec.gamma,
        weights,
        spec.payoff_mode,
    )?)
}

/// `L` links of capacity `cap` in a row. Flow `l < L` is local to link `l`,
/// flow `L` crosses every link.
pub fn serial_instance(
    links: usize,
    cap: f64,
    local_weights: &[f64],
    long_weight: f64,
    gamma: f64,
    payoff_mode: PayoffMode,
) -> Result<NetworkInstance, GenError> {
    if links < 2 {
        return Err(GenError::SerialLength(links));
    }
    if local_weights.len() != links {
        return Err(ModelError::Length {
            what: "local weights",
            expected: links,
            got: local_weights.len(),
        }
        .into());
    }
    let flows = links + 1;
    let mut routing = vec![false; links * flows];
    for l in 0..links {
        routing[l * flows + l] = true;
        routing[l * flows + links] = true;
    }
    let mut weights = local_weights.to_vec();
    weights.push(long_weight);
    Ok(NetworkInstance::new(
        links,
        flows,
        routing,
        vec![cap; links],
        gamma,
        weights,
        payoff_mode,
    )?)
}

/// Two links of capacity 10 and 100; flow 0 crosses both, flows 1 and 2 are
/// local. Logarithmic utilities with unit weights.
pub fn two_link(payoff_mode: PayoffMode) -> NetworkInstance {
    NetworkInstance::from_rows(
        &["110", "101"],
        vec![10.0, 100.0],
        1.0,
        vec![1.0; 3],
        payoff_mode,
    )
    .expect("valid fixture")
}

/// Ten links of capacity 6; flow 0 (weight 10) crosses all of them, flow 1
/// (weight 2) is local to link 0. Logarithmic utilities, path-length payoffs.
pub fn long_path() -> NetworkInstance {
    let mut rows = vec!["11"];
    rows.extend(["10"; 9]);
    NetworkInstance::from_rows(&rows, vec![6.0; 10], 1.0, vec![10.0, 2.0], PayoffMode::PathLength)
        .expect("valid fixture")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    format_version: String,
    kind: String,
    links: usize,
    flows: usize,
    gamma: f64,
    payoff_mode: PayoffMode,
    routing: Vec<String>,
    capacities: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    format_version: String,
    kind: String,
    links: usize,
    flows: usize,
    alloc: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IterationTable {
    phi: usize,
    unsaturated: Vec<usize>,
    filled: Vec<usize>,
    newly_saturated: Vec<usize>,
    alloc: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceFile {
    format_version: String,
    kind: String,
    links: usize,
    flows: usize,
    #[serde(default)]
    iterations: Vec<IterationTable>,
}

fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("file structs always serialize")
}

/// Parses `text`, checks the version and kind tags, then deserializes.
fn parse_tagged<T: for<'de> Deserialize<'de>>(text: &str, kind: &str) -> Result<T, FormatError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| FormatError::Malformed(e.message().to_string()))?;
    match table.get("format_version") {
        Some(toml::Value::String(v)) if v == FORMAT_VERSION => {}
        Some(toml::Value::String(v)) => {
            return Err(FormatError::VersionMismatch { found: v.clone() })
        }
        Some(other) => {
            return Err(FormatError::VersionMismatch {
                found: other.to_string(),
            })
        }
        None => return Err(FormatError::Malformed("missing format_version".into())),
    }
    match table.get("kind").and_then(toml::Value::as_str) {
        Some(k) if k == kind => {}
        Some(k) => {
            return Err(FormatError::Malformed(format!(
                "expected kind {kind:?}, found {k:?}"
            )))
        }
        None => return Err(FormatError::Malformed("missing kind".into())),
    }
    table
        .try_into()
        .map_err(|e: toml::de::Error| FormatError::Malformed(e.message().to_string()))
}

fn check_rows(rows: &[Vec<f64>], links: usize, flows: usize) -> Result<(), FormatError> {
    if rows.len() != links || rows.iter().any(|r| r.len() != flows) {
        return Err(FormatError::Malformed(format!(
            "alloc must be {links} rows of {flows} values"
        )));
    }
    Ok(())
}

fn profile_from_rows(rows: Vec<Vec<f64>>, links: usize, flows: usize) -> Result<StrategyProfile, FormatError> {
    check_rows(&rows, links, flows)?;
    if links == 0 {
        return Ok(StrategyProfile::zeros(0, flows));
    }
    Ok(StrategyProfile::from_rows(rows)?)
}

pub fn instance_to_string(inst: &NetworkInstance) -> String {
    let flows = inst.num_flows();
    let routing = inst
        .routing()
        .chunks(flows)
        .map(|row| row.iter().map(|&b| if b { '1' } else { '0' }).collect())
        .collect();
    to_toml(&InstanceFile {
        format_version: FORMAT_VERSION.into(),
        kind: "instance".into(),
        links: inst.num_links(),
        flows,
        gamma: inst.gamma(),
        payoff_mode: inst.payoff_mode(),
        routing,
        capacities: inst.capacities().to_vec(),
        weights: inst.weights().to_vec(),
    })
}

pub fn instance_from_str(text: &str) -> Result<NetworkInstance, FormatError> {
    let f: InstanceFile = parse_tagged(text, "instance")?;
    if f.routing.len() != f.links {
        return Err(FormatError::Malformed(format!(
            "routing has {} rows, links = {}",
            f.routing.len(),
            f.links
        )));
    }
    let mut routing = Vec::with_capacity(f.links * f.flows);
    for (l, row) in f.routing.iter().enumerate() {
        if row.len() != f.flows {
            return Err(FormatError::Malformed(format!(
                "routing row {l} has {} entries, flows = {}",
                row.len(),
                f.flows
            )));
        }
        for c in row.chars() {
            routing.push(match c {
                '0' => false,
                '1' => true,
                _ => {
                    return Err(FormatError::Malformed(format!(
                        "routing row {l} contains {c:?}"
                    )))
                }
            });
        }
    }
    Ok(NetworkInstance::new(
        f.links,
        f.flows,
        routing,
        f.capacities,
        f.gamma,
        f.weights,
        f.payoff_mode,
    )?)
}

pub fn profile_to_string(s: &StrategyProfile) -> String {
    to_toml(&ProfileFile {
        format_version: FORMAT_VERSION.into(),
        kind: "profile".into(),
        links: s.num_links(),
        flows: s.num_flows(),
        alloc: s.to_rows(),
    })
}

pub fn profile_from_str(text: &str) -> Result<StrategyProfile, FormatError> {
    let f: ProfileFile = parse_tagged(text, "profile")?;
    profile_from_rows(f.alloc, f.links, f.flows)
}

pub fn trace_to_string(trace: &AllocationTrace) -> String {
    let (links, flows) = trace
        .iterations
        .first()
        .map_or((0, 0), |it| (it.profile.num_links(), it.profile.num_flows()));
    to_toml(&TraceFile {
        format_version: FORMAT_VERSION.into(),
        kind: "trace".into(),
        links,
        flows,
        iterations: trace
            .iterations
            .iter()
            .map(|it| IterationTable {
                phi: it.phi,
                unsaturated: it.unsaturated.clone(),
                filled: it.filled.clone(),
                newly_saturated: it.newly_saturated.clone(),
                alloc: it.profile.to_rows(),
            })
            .collect(),
    })
}

pub fn trace_from_str(text: &str) -> Result<AllocationTrace, FormatError> {
    let f: TraceFile = parse_tagged(text, "trace")?;
    let iterations = f
        .iterations
        .into_iter()
        .map(|t| {
            Ok(IterationRecord {
                profile: profile_from_rows(t.alloc, f.links, f.flows)?,
                unsaturated: t.unsaturated,
                filled: t.filled,
                phi: t.phi,
                newly_saturated: t.newly_saturated,
            })
        })
        .collect::<Result<_, FormatError>>()?;
    Ok(AllocationTrace { iterations })
}

fn read(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), FormatError> {
    fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<NetworkInstance, FormatError> {
    instance_from_str(&read(path.as_ref())?)
}

pub fn save_instance(path: impl AsRef<Path>, inst: &NetworkInstance) -> Result<(), FormatError> {
    write(path.as_ref(), &instance_to_string(inst))
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<StrategyProfile, FormatError> {
    profile_from_str(&read(path.as_ref())?)
}

pub fn save_profile(path: impl AsRef<Path>, s: &StrategyProfile) -> Result<(), FormatError> {
    write(path.as_ref(), &profile_to_string(s))
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<AllocationTrace, FormatError> {
    trace_from_str(&read(path.as_ref())?)
}

pub fn save_trace(path: impl AsRef<Path>, trace: &AllocationTrace) -> Result<(), FormatError> {
    write(path.as_ref(), &trace_to_string(trace))
}
