//! Trace records. One JSON object per line.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::operator::FiniteSet;
use crate::tree::{Node, Requirement};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessSource {
    Pick,
    Stream,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefinedMarker {
    pub owner: Node,
    pub z: u64,
    pub x: u64,
    pub value: u64,
}

/// Exact state of `A` and `D` (both cofinite) plus the live parameters that
/// replay must reproduce.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub stage: u64,
    pub a_extracted: Vec<u64>,
    pub d_extracted: Vec<u64>,
    pub d_reentered: Vec<u64>,
    pub markers: Vec<DefinedMarker>,
    pub witnesses: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventBody {
    #[serde(rename = "run_started")]
    RunStarted { mode: String, stages: u64, ordering: String, scenario: String },
    #[serde(rename = "axiom_entered")]
    AxiomEntered { op: Requirement, head: u64, body: FiniteSet },
    #[serde(rename = "axiom_dropped")]
    AxiomDropped { op: Requirement, axiom: String, reason: String },
    #[serde(rename = "witness_appointed")]
    WitnessAppointed { node: Node, x: u64, source: WitnessSource },
    #[serde(rename = "witness_canceled")]
    WitnessCanceled { node: Node, x: u64 },
    #[serde(rename = "realized")]
    Realized { node: Node, x: u64, uses: FiniteSet },
    #[serde(rename = "extractA")]
    ExtractA { x: u64, derived: bool },
    #[serde(rename = "extractD")]
    ExtractD { d: u64 },
    #[serde(rename = "enumD")]
    EnumD { d: u64 },
    #[serde(rename = "marker_defined")]
    MarkerDefined { owner: Node, z: u64, x: u64, value: u64 },
    #[serde(rename = "marker_canceled")]
    MarkerCanceled { owner: Node, value: u64 },
    #[serde(rename = "gamma_axiom")]
    GammaAxiom { node: Node, z: u64, body: FiniteSet },
    #[serde(rename = "delta_axiom")]
    DeltaAxiom { node: Node, x: u64, body: FiniteSet },
    #[serde(rename = "stream_add")]
    StreamAdd { node: Node, x: u64 },
    #[serde(rename = "outcome_taken")]
    OutcomeTaken { node: Node, case: String, stream: Vec<(u64, u64)>, p: u64 },
    #[serde(rename = "setup_created")]
    SetupCreated { node: Node, i: u32, x: u64, z: u64, d: u64 },
    #[serde(rename = "gamma_killed")]
    GammaKilled { node: Node, i: u32, markers: Vec<u64> },
    #[serde(rename = "initialize")]
    Initialize {
        node: Node,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        witness: Option<u64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        markers: Vec<u64>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        subtree: bool,
    },
    #[serde(rename = "stage_end")]
    StageEnd { f: Node },
    #[serde(rename = "run_finished")]
    RunFinished { snapshot: Snapshot },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub stage: u64,
    pub substage: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

pub fn write_jsonl<W: Write>(mut w: W, events: &[Event]) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn to_jsonl(events: &[Event]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, events).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

#[derive(Debug, thiserror::Error)]
pub enum TraceReadError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Event>, TraceReadError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|source| TraceReadError::Parse { line: i + 1, source })?;
        out.push(e);
    }
    Ok(out)
}
