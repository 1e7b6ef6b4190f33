//! Lockstep message-passing execution of the iterated allocation algorithm.
//!
//! Every link and every source is an isolated agent. A round has four
//! phases, each followed by a delivery barrier:
//!
//! 1. links recompute their rows and send `AllocationUpdate` for changed
//!    entries of unsaturated flows;
//! 2. unsaturated sources take the minimum allocation on their path and send
//!    `RateReport` to every path link when it changed;
//! 3. links whose reported rates fill their capacity send `SaturationSignal`
//!    to their unsaturated flows and pin them at the reported rate;
//! 4. sources that received a signal mark themselves saturated and forward
//!    `SaturationSignal` to the path links that did not signal them.
//!
//! Saturated flows never trigger messages again, so once every flow is
//! saturated the network is silent. Each round sends at most `3 * nnz`
//! messages, where `nnz` is the number of ones in the routing matrix.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::alloc::SATURATION_TOL;
use crate::model::{NetworkInstance, StrategyProfile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("simulation did not finish within {rounds} rounds")]
    RoundLimit { rounds: usize },
    #[error("round {round}: no agent changed state with {unsaturated} flows unsaturated")]
    Stalled { round: usize, unsaturated: usize },
    #[error("message log line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Endpoint {
    Link(usize),
    Source(usize),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Link(l) => write!(f, "L{l}"),
            Endpoint::Source(r) => write!(f, "S{r}"),
        }
    }
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |rest: &str| rest.parse::<usize>().map_err(|e| format!("endpoint {s:?}: {e}"));
        if let Some(rest) = s.strip_prefix('L') {
            parse(rest).map(Endpoint::Link)
        } else if let Some(rest) = s.strip_prefix('S') {
            parse(rest).map(Endpoint::Source)
        } else {
            Err(format!("unknown endpoint {s:?}"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MessageKind {
    RateReport { flow: usize, rate: f64 },
    SaturationSignal { flow: usize },
    AllocationUpdate { flow: usize, value: f64 },
}

impl MessageKind {
    pub fn flow(&self) -> usize {
        match *self {
            MessageKind::RateReport { flow, .. }
            | MessageKind::SaturationSignal { flow }
            | MessageKind::AllocationUpdate { flow, .. } => flow,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::RateReport { .. } => "rate-report",
            MessageKind::SaturationSignal { .. } => "saturation-signal",
            MessageKind::AllocationUpdate { .. } => "allocation-update",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Message {
    pub kind: MessageKind,
    pub sender: Endpoint,
    pub receiver: Endpoint,
    pub round: usize,
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t",
            self.round,
            self.kind.name(),
            self.sender,
            self.receiver
        )?;
        match self.kind {
            MessageKind::RateReport { flow, rate } => write!(f, "flow={flow},rate={rate:?}"),
            MessageKind::SaturationSignal { flow } => write!(f, "flow={flow}"),
            MessageKind::AllocationUpdate { flow, value } => write!(f, "flow={flow},value={value:?}"),
        }
    }
}

impl FromStr for Message {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = line.split('\t').collect();
        let [round, kind, sender, receiver, payload] = fields[..] else {
            return Err(format!("expected 5 tab-separated fields, got {}", fields.len()));
        };
        let round = round.parse().map_err(|e| format!("round: {e}"))?;
        let mut flow = None;
        let mut number = None;
        for pair in payload.split(',') {
            match pair.split_once('=') {
                Some(("flow", v)) => flow = Some(v.parse::<usize>().map_err(|e| format!("flow: {e}"))?),
                Some(("rate" | "value", v)) => {
                    number = Some(v.parse::<f64>().map_err(|e| format!("payload value: {e}"))?)
                }
                _ => return Err(format!("bad payload entry {pair:?}")),
            }
        }
        let flow = flow.ok_or("payload lacks flow")?;
        let kind = match (kind, number) {
            ("rate-report", Some(rate)) => MessageKind::RateReport { flow, rate },
            ("allocation-update", Some(value)) => MessageKind::AllocationUpdate { flow, value },
            ("saturation-signal", None) => MessageKind::SaturationSignal { flow },
            _ => return Err(format!("bad kind/payload combination {kind:?}")),
        };
        Ok(Message {
            kind,
            sender: sender.parse()?,
            receiver: receiver.parse()?,
            round,
        })
    }
}

/// Writes one message per line.
pub fn dump_log(log: &[Message]) -> String {
    let mut out = String::new();
    for m in log {
        out.push_str(&m.to_string());
        out.push('\n');
    }
    out
}

/// Inverse of [`dump_log`]. Blank lines and `#` comments are skipped.
pub fn parse_log(text: &str) -> Result<Vec<Message>, SimError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            l.parse().map_err(|reason| SimError::Parse {
                line: i + 1,
                reason,
            })
        })
        .collect()
}

/// A router interface. It knows only its capacity, the flows crossing it
/// with their share weights, and what those flows told it.
#[derive(Debug, Clone)]
pub struct LinkAgent {
    pub link: usize,
    pub capacity: f64,
    flows: Vec<usize>,
    weights: Vec<f64>,
    alloc: Vec<f64>,
    sent: Vec<Option<f64>>,
    reported: Vec<f64>,
    pins: Vec<Option<f64>>,
}

impl LinkAgent {
    fn new(inst: &NetworkInstance, link: usize) -> Self {
        let flows = inst.flows_on(link).to_vec();
        let n = flows.len();
        Self {
            link,
            capacity: inst.capacity(link),
            weights: flows.iter().map(|&r| inst.share_weight(r)).collect(),
            flows,
            alloc: vec![0.0; n],
            sent: vec![None; n],
            reported: vec![0.0; n],
            pins: vec![None; n],
        }
    }

    fn slot(&self, flow: usize) -> usize {
        self.flows
            .iter()
            .position(|&r| r == flow)
            .expect("message delivered to a link the flow does not cross")
    }

    /// Pinned flows keep their pins; the rest of the capacity is split in
    /// proportion to share weights.
    fn recompute(&mut self) {
        let mut pinned = 0.0;
        for (a, pin) in self.alloc.iter_mut().zip(&self.pins) {
            *a = 0.0;
            if let Some(p) = pin {
                *a = *p;
                pinned += *p;
            }
        }
        let residual = (self.capacity - pinned).max(0.0);
        let total: f64 = self
            .weights
            .iter()
            .zip(&self.pins)
            .filter(|(_, p)| p.is_none())
            .map(|(w, _)| *w)
            .sum();
        if total <= 0.0 {
            return;
        }
        for ((a, w), pin) in self.alloc.iter_mut().zip(&self.weights).zip(&self.pins) {
            if pin.is_none() {
                *a = residual * w / total;
            }
        }
    }

    fn load(&self) -> f64 {
        self.reported.iter().sum()
    }

    fn is_filled(&self) -> bool {
        self.load() >= self.capacity * (1.0 - SATURATION_TOL)
    }

    /// Allocations of this link, indexed like its flow list.
    pub fn allocations(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.flows.iter().copied().zip(self.alloc.iter().copied())
    }

    pub fn saturated_flows(&self) -> Vec<usize> {
        self.flows
            .iter()
            .zip(&self.pins)
            .filter(|(_, p)| p.is_some())
            .map(|(r, _)| *r)
            .collect()
    }
}

/// A traffic source. It sees the allocations its path links sent it.
#[derive(Debug, Clone)]
pub struct SourceAgent {
    pub flow: usize,
    links: Vec<usize>,
    view: Vec<f64>,
    pub rate: f64,
    reported: Option<f64>,
    pub saturated: bool,
    signalled_by: Vec<usize>,
}

impl SourceAgent {
    fn new(inst: &NetworkInstance, flow: usize) -> Self {
        let links = inst.links_of(flow).to_vec();
        Self {
            flow,
            view: vec![0.0; links.len()],
            links,
            rate: 0.0,
            reported: None,
            saturated: false,
            signalled_by: Vec::new(),
        }
    }

    fn slot(&self, link: usize) -> usize {
        self.links
            .iter()
            .position(|&l| l == link)
            .expect("message delivered to a source not routed through the link")
    }
}

/// Messages and state changes of one round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundSummary {
    pub round: usize,
    pub messages: Vec<Message>,
    pub newly_saturated: Vec<usize>,
    pub changed: bool,
}

/// Agents plus the round counter.
#[derive(Debug, Clone)]
pub struct Simulation {
    links: Vec<LinkAgent>,
    sources: Vec<SourceAgent>,
    round: usize,
}

impl Simulation {
    pub fn new(inst: &NetworkInstance) -> Self {
        Self {
            links: (0..inst.num_links()).map(|l| LinkAgent::new(inst, l)).collect(),
            sources: (0..inst.num_flows()).map(|r| SourceAgent::new(inst, r)).collect(),
            round: 0,
        }
    }

    pub fn links(&self) -> &[LinkAgent] {
        &self.links
    }

    pub fn sources(&self) -> &[SourceAgent] {
        &self.sources
    }

    pub fn all_saturated(&self) -> bool {
        self.sources.iter().all(|s| s.saturated)
    }

    pub fn rates(&self) -> Vec<f64> {
        self.sources.iter().map(|s| s.rate).collect()
    }

    /// Executes one lockstep round.
    pub fn step(&mut self) -> RoundSummary {
        self.round += 1;
        let round = self.round;
        let mut out = RoundSummary {
            round,
            ..RoundSummary::default()
        };

        // Phase 1: allocation updates.
        let updates: Vec<Vec<Message>> = self
            .links
            .par_iter_mut()
            .map(|agent| {
                agent.recompute();
                let mut msgs = Vec::new();
                for i in 0..agent.flows.len() {
                    if agent.pins[i].is_some() || agent.sent[i] == Some(agent.alloc[i]) {
                        continue;
                    }
                    agent.sent[i] = Some(agent.alloc[i]);
                    msgs.push(Message {
                        kind: MessageKind::AllocationUpdate {
                            flow: agent.flows[i],
                            value: agent.alloc[i],
                        },
                        sender: Endpoint::Link(agent.link),
                        receiver: Endpoint::Source(agent.flows[i]),
                        round,
                    });
                }
                msgs
            })
            .collect();
        for m in updates.into_iter().flatten() {
            if let (Endpoint::Link(l), MessageKind::AllocationUpdate { flow, value }) = (m.sender, m.kind) {
                let src = &mut self.sources[flow];
                let k = src.slot(l);
                src.view[k] = value;
                out.changed = true;
            }
            out.messages.push(m);
        }

        // Phase 2: rate reports.
        let reports: Vec<Vec<Message>> = self
            .sources
            .par_iter_mut()
            .map(|src| {
                if src.saturated {
                    return Vec::new();
                }
                src.rate = src.view.iter().copied().fold(f64::INFINITY, f64::min);
                if src.reported == Some(src.rate) {
                    return Vec::new();
                }
                src.reported = Some(src.rate);
                src.links
                    .iter()
                    .map(|&l| Message {
                        kind: MessageKind::RateReport {
                            flow: src.flow,
                            rate: src.rate,
                        },
                        sender: Endpoint::Source(src.flow),
                        receiver: Endpoint::Link(l),
                        round,
                    })
                    .collect()
            })
            .collect();
        for m in reports.into_iter().flatten() {
            if let (Endpoint::Link(l), MessageKind::RateReport { flow, rate }) = (m.receiver, m.kind) {
                let agent = &mut self.links[l];
                let k = agent.slot(flow);
                agent.reported[k] = rate;
                out.changed = true;
            }
            out.messages.push(m);
        }

        // Phase 3: filled links signal their unsaturated flows.
        let signals: Vec<Vec<Message>> = self
            .links
            .par_iter_mut()
            .map(|agent| {
                if !agent.is_filled() {
                    return Vec::new();
                }
                let mut msgs = Vec::new();
                for i in 0..agent.flows.len() {
                    if agent.pins[i].is_none() {
                        agent.pins[i] = Some(agent.reported[i]);
                        msgs.push(Message {
                            kind: MessageKind::SaturationSignal { flow: agent.flows[i] },
                            sender: Endpoint::Link(agent.link),
                            receiver: Endpoint::Source(agent.flows[i]),
                            round,
                        });
                    }
                }
                msgs
            })
            .collect();
        for m in signals.into_iter().flatten() {
            if let (Endpoint::Link(l), Endpoint::Source(r)) = (m.sender, m.receiver) {
                self.sources[r].signalled_by.push(l);
            }
            out.messages.push(m);
        }

        // Phase 4: newly saturated sources notify the rest of their path.
        let forwards: Vec<Vec<Message>> = self
            .sources
            .par_iter_mut()
            .map(|src| {
                if src.saturated || src.signalled_by.is_empty() {
                    return Vec::new();
                }
                src.saturated = true;
                src.links
                    .iter()
                    .filter(|l| !src.signalled_by.contains(l))
                    .map(|&l| Message {
                        kind: MessageKind::SaturationSignal { flow: src.flow },
                        sender: Endpoint::Source(src.flow),
                        receiver: Endpoint::Link(l),
                        round,
                    })
                    .collect()
            })
            .collect();
        for m in forwards.into_iter().flatten() {
            if let (Endpoint::Link(l), MessageKind::SaturationSignal { flow }) = (m.receiver, m.kind) {
                let agent = &mut self.links[l];
                let k = agent.slot(flow);
                agent.pins[k] = Some(agent.reported[k]);
            }
            out.messages.push(m);
        }
        for src in &mut self.sources {
            if !src.signalled_by.is_empty() {
                out.newly_saturated.push(src.flow);
                out.changed = true;
                src.signalled_by.clear();
            }
        }
        out
    }

    /// Final profile with every flow's allocation equal to its rate on each
    /// link of its path.
    pub fn profile(&self, inst: &NetworkInstance) -> StrategyProfile {
        StrategyProfile::pinned_to_rates(inst, &self.rates())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub profile: StrategyProfile,
    pub rounds: usize,
    pub messages: usize,
    pub log: Vec<Message>,
    /// Source rates at the end of each round.
    pub rate_history: Vec<Vec<f64>>,
}

/// Runs rounds until every flow is saturated.
pub fn run_simulation(inst: &NetworkInstance, max_rounds: usize) -> Result<SimOutcome, SimError> {
    let mut sim = Simulation::new(inst);
    let mut log = Vec::new();
    let mut rate_history = Vec::new();
    while !sim.all_saturated() {
        if sim.round >= max_rounds {
            return Err(SimError::RoundLimit { rounds: max_rounds });
        }
        let summary = sim.step();
        log::debug!(
            "round {}: {} messages, saturated {:?}",
            summary.round,
            summary.messages.len(),
            summary.newly_saturated
        );
        log.extend(summary.messages);
        rate_history.push(sim.rates());
        if !summary.changed {
            return Err(SimError::Stalled {
                round: summary.round,
                unsaturated: sim.sources.iter().filter(|s| !s.saturated).count(),
            });
        }
    }
    Ok(SimOutcome {
        profile: sim.profile(inst),
        rounds: sim.round,
        messages: log.len(),
        log,
        rate_history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageAudit {
    /// Message count of round `i + 1` at index `i`.
    pub per_round_counts: Vec<usize>,
    pub locality_ok: bool,
    pub offending: Option<Message>,
}

/// Checks that every message travels between a link and a flow routed
/// through it, and counts messages per round.
pub fn message_audit(inst: &NetworkInstance, log: &[Message]) -> MessageAudit {
    let mut per_round_counts: Vec<usize> = Vec::new();
    let mut offending = None;
    for m in log {
        if m.round == 0 {
            offending.get_or_insert(*m);
            continue;
        }
        if per_round_counts.len() < m.round {
            per_round_counts.resize(m.round, 0);
        }
        per_round_counts[m.round - 1] += 1;
        let pair = match (m.sender, m.receiver) {
            (Endpoint::Link(l), Endpoint::Source(r)) | (Endpoint::Source(r), Endpoint::Link(l)) => {
                Some((l, r))
            }
            _ => None,
        };
        let local = pair.is_some_and(|(l, r)| {
            l < inst.num_links()
                && r < inst.num_flows()
                && inst.routes(l, r)
                && m.kind.flow() == r
        });
        if !local && offending.is_none() {
            offending = Some(*m);
        }
    }
    MessageAudit {
        per_round_counts,
        locality_ok: offending.is_none(),
        offending,
    }
}
