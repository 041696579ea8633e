//! Likely-happened-before tournaments and ranked batch formation.
//!
//! Every unordered pair of buffered messages gets one directed edge: i -> j
//! with weight p when P(i happened before j) = p > 0.5, else j -> i with
//! 1 - p. High-confidence tournaments are transitive; near-tie regions can
//! produce cycles, which are broken by removing the weakest edge on each
//! cycle found. Batch boundaries appear only where the kept edge weight
//! clears the confidence threshold.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::clock::{preceding_prob, round12, ClockModel};
use crate::error::{Error, Result};

pub type MessageId = String;
pub type ClientId = String;

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub id: MessageId,
    pub client: ClientId,
    /// Send time stamped by the client's own clock, microseconds.
    pub local_ts: f64,
    /// Ground-truth send time; only simulated workloads have one.
    pub true_ts: Option<f64>,
}

impl Message {
    pub fn new(id: impl Into<MessageId>, client: impl Into<ClientId>, local_ts: f64) -> Self {
        Message { id: id.into(), client: client.into(), local_ts, true_ts: None }
    }
}

/// Batch boundaries must clear this half-open range: [0.5, 1).
pub(crate) fn validate_threshold(threshold: f64) -> Result<()> {
    if !(threshold >= 0.5 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must lie in [0.5, 1), got {threshold}"
        )));
    }
    Ok(())
}

/// An edge dropped while breaking cycles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemovedEdge {
    pub from: MessageId,
    pub to: MessageId,
    pub weight: f64,
}

/// Complete directed graph over a message set; each pair keeps the edge
/// direction whose probability exceeds one half.
#[derive(Debug, Clone)]
pub struct Tournament {
    nodes: Vec<Message>,
    by_id: HashMap<MessageId, usize>,
    edges: BTreeMap<(u32, u32), f64>,
}

impl Tournament {
    /// Compare every pair through the clock models.
    pub fn build(
        messages: &[Message],
        models: &BTreeMap<ClientId, ClockModel>,
        resolution: f64,
    ) -> Result<Self> {
        for m in messages {
            if !models.contains_key(&m.client) {
                return Err(Error::UnknownClient(m.client.clone()));
            }
        }
        Self::from_pairwise_result(messages, |i, j| {
            let (a, b) = (&messages[i], &messages[j]);
            preceding_prob(a.local_ts, b.local_ts, &models[&a.client], &models[&b.client], resolution)
        })
    }

    /// Build from a caller-supplied pairwise probability; `prob(i, j)` is
    /// P(message i happened before message j) for i < j.
    pub fn from_pairwise(
        messages: &[Message],
        mut prob: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        Self::from_pairwise_result(messages, |i, j| Ok(prob(i, j)))
    }

    fn from_pairwise_result(
        messages: &[Message],
        mut prob: impl FnMut(usize, usize) -> Result<f64>,
    ) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(messages.len());
        for (k, m) in messages.iter().enumerate() {
            if !m.local_ts.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "message {} has non-finite timestamp {}",
                    m.id, m.local_ts
                )));
            }
            if by_id.insert(m.id.clone(), k).is_some() {
                return Err(Error::DuplicateId(m.id.clone()));
            }
        }
        let mut edges = BTreeMap::new();
        for i in 0..messages.len() {
            for j in (i + 1)..messages.len() {
                let p = match prob(i, j) {
                    Ok(p) => p,
                    Err(Error::ExactTie) => {
                        return Err(Error::TiedPair {
                            first: messages[i].id.clone(),
                            second: messages[j].id.clone(),
                        })
                    }
                    Err(e) => return Err(e),
                };
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidParameter(format!(
                        "pairwise probability for {} vs {} is {p}, outside [0, 1]",
                        messages[i].id, messages[j].id
                    )));
                }
                if round12(p) == 0.5 {
                    return Err(Error::TiedPair {
                        first: messages[i].id.clone(),
                        second: messages[j].id.clone(),
                    });
                }
                if p > 0.5 {
                    edges.insert((i as u32, j as u32), p);
                } else {
                    edges.insert((j as u32, i as u32), 1.0 - p);
                }
            }
        }
        Ok(Tournament { nodes: messages.to_vec(), by_id, edges })
    }

    #[cfg(test)]
    fn from_explicit_edges(messages: &[Message], edges: &[(&str, &str, f64)]) -> Self {
        let by_id: HashMap<MessageId, usize> =
            messages.iter().enumerate().map(|(k, m)| (m.id.clone(), k)).collect();
        let edges = edges
            .iter()
            .map(|(f, t, w)| ((by_id[*f] as u32, by_id[*t] as u32), *w))
            .collect();
        Tournament { nodes: messages.to_vec(), by_id, edges }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn messages(&self) -> &[Message] {
        &self.nodes
    }

    /// Weight of the kept edge from `from` to `to`, if that direction won.
    pub fn edge_weight(&self, from: &str, to: &str) -> Option<f64> {
        let f = *self.by_id.get(from)?;
        let t = *self.by_id.get(to)?;
        self.edges.get(&(f as u32, t as u32)).copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn adjacency(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(f, t) in self.edges.keys() {
            adj[f as usize].push(t);
        }
        adj
    }

    /// Find one directed cycle, if any. The returned ids are in cycle order:
    /// each consecutive pair is an edge, and so is last -> first.
    pub fn detect_cycle(&self) -> Option<Vec<MessageId>> {
        let n = self.nodes.len();
        let adj = self.adjacency();
        // 0 unvisited, 1 on the current path, 2 done.
        let mut color = vec![0u8; n];
        for start in 0..n {
            if color[start] != 0 {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
            color[start] = 1;
            while let Some(top) = stack.last_mut() {
                let (u, next) = (top.0, top.1);
                if next < adj[u].len() {
                    top.1 += 1;
                    let v = adj[u][next] as usize;
                    match color[v] {
                        0 => {
                            color[v] = 1;
                            stack.push((v, 0));
                        }
                        1 => {
                            // Back edge u -> v closes a cycle along the path.
                            let pos = stack.iter().position(|&(w, _)| w == v).expect("on path");
                            return Some(
                                stack[pos..].iter().map(|&(w, _)| self.nodes[w].id.clone()).collect(),
                            );
                        }
                        _ => {}
                    }
                } else {
                    color[u] = 2;
                    stack.pop();
                }
            }
        }
        None
    }

    /// Remove the weakest edge of each detected cycle until none remain.
    /// Weight ties break on (from, to) id order, so the result is
    /// deterministic for a given tournament.
    pub fn into_acyclic(mut self) -> (Self, Vec<RemovedEdge>) {
        let mut removed = Vec::new();
        while let Some(cycle) = self.detect_cycle() {
            let mut weakest: Option<((f64, &MessageId, &MessageId), (u32, u32))> = None;
            for k in 0..cycle.len() {
                let from = &cycle[k];
                let to = &cycle[(k + 1) % cycle.len()];
                let key = (self.by_id[from] as u32, self.by_id[to] as u32);
                let w = *self.edges.get(&key).expect("cycle edges exist");
                let cand = ((round12(w), from, to), key);
                match &weakest {
                    Some((best, _)) if *best <= cand.0 => {}
                    _ => weakest = Some(cand),
                }
            }
            let ((_, from, to), key) = weakest.expect("cycle is nonempty");
            let (from, to) = (from.clone(), to.clone());
            let weight = self.edges.remove(&key).expect("edge present");
            removed.push(RemovedEdge { from, to, weight });
        }
        (self, removed)
    }

    /// Kahn's algorithm. Nodes left incomparable by cycle breaking are taken
    /// in (local_ts, client, id) order so the result is deterministic.
    pub fn topological_order(&self) -> Result<Vec<MessageId>> {
        let n = self.nodes.len();
        let mut stable: Vec<usize> = (0..n).collect();
        stable.sort_by(|&a, &b| {
            let (ma, mb) = (&self.nodes[a], &self.nodes[b]);
            ma.local_ts
                .total_cmp(&mb.local_ts)
                .then_with(|| ma.client.cmp(&mb.client))
                .then_with(|| ma.id.cmp(&mb.id))
        });
        let mut rank = vec![0usize; n];
        for (r, &k) in stable.iter().enumerate() {
            rank[k] = r;
        }

        let adj = self.adjacency();
        let mut indegree = vec![0usize; n];
        for &(_, t) in self.edges.keys() {
            indegree[t as usize] += 1;
        }
        let mut ready: BTreeSet<(usize, usize)> = (0..n)
            .filter(|&k| indegree[k] == 0)
            .map(|k| (rank[k], k))
            .collect();
        let mut out = Vec::with_capacity(n);
        while let Some(&(r, u)) = ready.iter().next() {
            ready.remove(&(r, u));
            out.push(self.nodes[u].id.clone());
            for &v in &adj[u] {
                let v = v as usize;
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    ready.insert((rank[v], v));
                }
            }
        }
        if out.len() < n {
            return Err(Error::CyclePresent);
        }
        Ok(out)
    }

    /// Split an order into ranked batches. A boundary goes between adjacent
    /// messages whose kept edge weight exceeds `threshold`; a pair whose
    /// edge was removed while breaking cycles never forms a boundary.
    ///
    /// `order` must list every tournament message exactly once and must not
    /// contradict any kept edge.
    pub fn form_batches(&self, order: &[MessageId], threshold: f64) -> Result<SequencedOutput> {
        validate_threshold(threshold)?;
        if order.len() != self.nodes.len() {
            return Err(Error::OrderMismatch(format!(
                "order lists {} messages, tournament has {}",
                order.len(),
                self.nodes.len()
            )));
        }
        let mut position = HashMap::with_capacity(order.len());
        for (k, id) in order.iter().enumerate() {
            let idx = *self
                .by_id
                .get(id)
                .ok_or_else(|| Error::OrderMismatch(format!("unknown id {id}")))?;
            if position.insert(idx, k).is_some() {
                return Err(Error::OrderMismatch(format!("id {id} listed twice")));
            }
        }
        for (&(f, t), _) in &self.edges {
            if position[&(f as usize)] > position[&(t as usize)] {
                return Err(Error::OrderMismatch(format!(
                    "edge {} -> {} contradicts the order",
                    self.nodes[f as usize].id, self.nodes[t as usize].id
                )));
            }
        }

        let mut batches = Vec::new();
        let mut boundary_ps = Vec::new();
        let mut current: Vec<MessageId> = Vec::new();
        for (k, id) in order.iter().enumerate() {
            if k > 0 {
                if let Some(w) = self.edge_weight(&order[k - 1], id) {
                    if w > threshold {
                        batches.push(RankedBatch { rank: batches.len(), ids: std::mem::take(&mut current) });
                        boundary_ps.push(w);
                    }
                }
            }
            current.push(id.clone());
        }
        if !current.is_empty() {
            batches.push(RankedBatch { rank: batches.len(), ids: current });
        }
        Ok(SequencedOutput { batches, boundary_ps })
    }
}

/// One emission unit: rank is the batch's position in the total order,
/// ids keep their within-batch order (which carries no guarantee).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedBatch {
    pub rank: usize,
    pub ids: Vec<MessageId>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SequencedOutput {
    pub batches: Vec<RankedBatch>,
    /// Edge weight that justified each boundary; one entry per boundary.
    pub boundary_ps: Vec<f64>,
}

impl SequencedOutput {
    pub fn rank_map(&self) -> BTreeMap<MessageId, usize> {
        let mut ranks = BTreeMap::new();
        for batch in &self.batches {
            for id in &batch.ids {
                ranks.insert(id.clone(), batch.rank);
            }
        }
        ranks
    }

    pub fn message_count(&self) -> usize {
        self.batches.iter().map(|b| b.ids.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SequenceReport {
    pub output: SequencedOutput,
    pub removed_edges: Vec<RemovedEdge>,
}

/// Full offline pipeline: tournament, cycle breaking, topological order,
/// batching.
pub fn sequence(
    messages: &[Message],
    models: &BTreeMap<ClientId, ClockModel>,
    threshold: f64,
    resolution: f64,
) -> Result<SequencedOutput> {
    Ok(sequence_report(messages, models, threshold, resolution)?.output)
}

/// Like [`sequence`], also reporting which edges cycle breaking dropped.
pub fn sequence_report(
    messages: &[Message],
    models: &BTreeMap<ClientId, ClockModel>,
    threshold: f64,
    resolution: f64,
) -> Result<SequenceReport> {
    validate_threshold(threshold)?;
    let tournament = Tournament::build(messages, models, resolution)?;
    let (tournament, removed_edges) = tournament.into_acyclic();
    let order = tournament.topological_order()?;
    let output = tournament.form_batches(&order, threshold)?;
    Ok(SequenceReport { output, removed_edges })
}
