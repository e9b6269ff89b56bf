use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::module::ModuleDescriptor;
use crate::token::{DataType, ModuleId};

use super::graph::{FlowGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCode {
    Cycle,
    Dangling,
    DupNode,
    DupLink,
    UnknownModule,
    Empty,
    RouteMismatch,
    MissingSource,
}

impl IssueCode {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueCode::Cycle => "CYCLE",
            IssueCode::Dangling => "DANGLING",
            IssueCode::DupNode => "DUP_NODE",
            IssueCode::DupLink => "DUP_LINK",
            IssueCode::UnknownModule => "UNKNOWN_MODULE",
            IssueCode::Empty => "EMPTY",
            IssueCode::RouteMismatch => "ROUTE_MISMATCH",
            IssueCode::MissingSource => "MISSING_SOURCE",
        }
    }
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub code: IssueCode,
    pub detail: String,
}

/// Every problem found in a candidate graph. `ok` is true iff `errors` is empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub errors: Vec<Issue>,
}

impl ValidationReport {
    pub fn from_errors(errors: Vec<Issue>) -> Self {
        Self {
            ok: errors.is_empty(),
            errors,
        }
    }

    pub fn has(&self, code: IssueCode) -> bool {
        self.errors.iter().any(|e| e.code == code)
    }

    pub fn count(&self, code: IssueCode) -> usize {
        self.errors.iter().filter(|e| e.code == code).count()
    }

    pub fn push(&mut self, code: IssueCode, detail: String) {
        self.errors.push(Issue { code, detail });
        self.ok = false;
    }
}

/// Reports every structural violation plus, when `registry` is non-empty,
/// nodes naming a module missing from it.
pub fn validate_graph(graph: &FlowGraph, registry: &[ModuleDescriptor]) -> ValidationReport {
    let mut report = validate_structure(graph);
    if !registry.is_empty() {
        let known: BTreeSet<&ModuleId> = registry.iter().map(|d| &d.module_id).collect();
        let mut nodes: Vec<_> = graph.nodes.iter().collect();
        nodes.sort_by_key(|n| n.id);
        for n in nodes {
            if !known.contains(&n.module) {
                report.push(
                    IssueCode::UnknownModule,
                    format!("node {} names unregistered module {}", n.id, n.module),
                );
            }
        }
    }
    report
}

/// One `ROUTE_MISMATCH` per link whose head module produces no datatype the
/// tail module accepts. Links touching unregistered modules are skipped; they
/// are reported as `UNKNOWN_MODULE` by [`validate_graph`].
pub fn check_routes(
    graph: &FlowGraph,
    registry: &[ModuleDescriptor],
    produces: impl Fn(&ModuleDescriptor) -> BTreeSet<DataType>,
) -> Vec<Issue> {
    let by_id: BTreeMap<&ModuleId, &ModuleDescriptor> =
        registry.iter().map(|d| (&d.module_id, d)).collect();
    let module_of = |id: NodeId| graph.node(id).and_then(|n| by_id.get(&n.module).copied());
    let mut links: Vec<_> = graph.links.iter().collect();
    links.sort();
    let mut out = Vec::new();
    for l in links {
        let (Some(from), Some(to)) = (module_of(l.from), module_of(l.to)) else {
            continue;
        };
        let made = produces(from);
        if !made.iter().any(|d| to.accepts(d)) {
            out.push(Issue {
                code: IssueCode::RouteMismatch,
                detail: format!(
                    "link {}->{}: {} produces {:?}, {} accepts {:?}",
                    l.from,
                    l.to,
                    from.module_id,
                    made.iter().map(DataType::as_str).collect::<Vec<_>>(),
                    to.module_id,
                    to.input_datatypes
                        .iter()
                        .map(DataType::as_str)
                        .collect::<Vec<_>>()
                ),
            });
        }
    }
    out
}

pub(crate) fn validate_structure(graph: &FlowGraph) -> ValidationReport {
    let mut report = ValidationReport::from_errors(Vec::new());
    if graph.nodes.is_empty() {
        report.push(IssueCode::Empty, "graph has no nodes".into());
    }

    let mut seen: BTreeMap<NodeId, usize> = BTreeMap::new();
    for n in &graph.nodes {
        *seen.entry(n.id).or_default() += 1;
    }
    for (id, count) in &seen {
        if *count > 1 {
            report.push(
                IssueCode::DupNode,
                format!("node id {id} appears {count} times"),
            );
        }
    }

    let mut link_seen: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();
    for l in &graph.links {
        let dangling: Vec<NodeId> = [l.from, l.to]
            .into_iter()
            .filter(|id| !seen.contains_key(id))
            .collect();
        if !dangling.is_empty() {
            report.push(
                IssueCode::Dangling,
                format!(
                    "link {}->{} references missing node(s) {:?}",
                    l.from, l.to, dangling
                ),
            );
        }
        *link_seen.entry((l.from, l.to)).or_default() += 1;
    }
    for ((from, to), count) in &link_seen {
        if *count > 1 {
            report.push(
                IssueCode::DupLink,
                format!("link {from}->{to} appears {count} times"),
            );
        }
    }

    for cycle in cyclic_components(seen.keys().copied(), link_seen.keys().copied()) {
        report.push(IssueCode::Cycle, format!("cycle through nodes {cycle:?}"));
    }
    report
}

/// Strongly connected components that contain a cycle (size > 1 or a
/// self-loop), each sorted, in order of their smallest node. Links with a
/// missing endpoint are ignored.
fn cyclic_components(
    nodes: impl Iterator<Item = NodeId>,
    links: impl Iterator<Item = (NodeId, NodeId)>,
) -> Vec<Vec<NodeId>> {
    let ids: Vec<NodeId> = nodes.collect();
    let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); ids.len()];
    let mut self_loop = vec![false; ids.len()];
    for (from, to) in links {
        if let (Some(&a), Some(&b)) = (index.get(&from), index.get(&to)) {
            adj[a].push(b);
            if a == b {
                self_loop[a] = true;
            }
        }
    }

    // Iterative Tarjan.
    const UNSEEN: usize = usize::MAX;
    let n = ids.len();
    let mut disc = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut counter = 0usize;
    let mut out = Vec::new();

    for root in 0..n {
        if disc[root] != UNSEEN {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        disc[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(frame) = call.last_mut() {
            let (v, i) = *frame;
            if i < adj[v].len() {
                frame.1 += 1;
                let w = adj[v][i];
                if disc[w] == UNSEEN {
                    disc[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(disc[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == disc[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack");
                    on_stack[w] = false;
                    comp.push(ids[w]);
                    if w == v {
                        break;
                    }
                }
                if comp.len() > 1 || self_loop[v] {
                    comp.sort_unstable();
                    out.push(comp);
                }
            }
        }
    }
    out.sort();
    out
}
