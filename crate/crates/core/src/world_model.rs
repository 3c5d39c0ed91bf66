//! Scans as navigable view graphs.
//!
//! A [`Scan`] is one building: a set of [`View`]s with 3D positions (meters)
//! and region annotations, connected by undirected edges. Graph distance is the
//! shortest-path length over those edges, with each edge weighted by the
//! Euclidean distance between its endpoints unless another [`EdgeWeight`] is
//! supplied.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Prefix of the region id assigned to views without a region annotation.
///
/// Annotated region ids may not start with it, so a sentinel region is never
/// shared between two distinct views.
pub const UNANNOTATED_REGION_PREFIX: &str = "~unannotated/";

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("{context}: malformed scan document: {source}")]
    Malformed {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{context}: duplicate view id {id:?} (views[{index}])")]
    DuplicateView {
        context: String,
        id: String,
        index: usize,
    },
    #[error("{context}: edges[{index}] references unknown view {id:?}")]
    UnknownEdgeEndpoint {
        context: String,
        id: String,
        index: usize,
    },
    #[error("{context}: edges[{index}] is a self-loop on {id:?}")]
    SelfLoop {
        context: String,
        id: String,
        index: usize,
    },
    #[error("{context}: view {id:?} has a non-finite position")]
    NonFinitePosition { context: String, id: String },
    #[error("{context}: view {id:?} uses reserved region id {region:?}")]
    ReservedRegion {
        context: String,
        id: String,
        region: String,
    },
    #[error("{context}: empty view id (views[{index}])")]
    EmptyViewId { context: String, index: usize },
    #[error("scan {scan:?} has no view {id:?}")]
    UnknownView { scan: String, id: String },
    #[error("duplicate scan id {0:?} in scan set")]
    DuplicateScan(String),
    #[error("no scan {0:?} in scan set")]
    UnknownScan(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ScanError> = std::result::Result<T, E>;

/// A discrete location in a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub view_id: String,
    pub position: [f64; 3],
    pub region_id: String,
    pub region_label: String,
}

impl View {
    pub fn is_annotated(&self) -> bool {
        !self.region_id.starts_with(UNANNOTATED_REGION_PREFIX)
    }
}

/// Shortest-path length between two views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distance {
    Meters(f64),
    Unreachable,
}

impl Distance {
    pub fn meters(self) -> Option<f64> {
        match self {
            Distance::Meters(m) => Some(m),
            Distance::Unreachable => None,
        }
    }

    pub fn is_reachable(self) -> bool {
        matches!(self, Distance::Meters(_))
    }
}

/// Weight assigned to an edge between two views. Must be nonnegative.
pub trait EdgeWeight {
    fn weight(&self, a: &View, b: &View) -> f64;
}

/// 3D Euclidean distance between endpoint positions.
#[derive(Debug, Clone, Copy, Default)]
pub struct Euclidean;

impl EdgeWeight for Euclidean {
    fn weight(&self, a: &View, b: &View) -> f64 {
        euclidean(&a.position, &b.position)
    }
}

impl<F: Fn(&View, &View) -> f64> EdgeWeight for F {
    fn weight(&self, a: &View, b: &View) -> f64 {
        self(a, b)
    }
}

pub fn euclidean(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

// On-disk shape of a scan document.
#[derive(Deserialize)]
struct ScanDoc {
    scan_id: String,
    views: Vec<ViewDoc>,
    #[serde(default)]
    edges: Vec<[String; 2]>,
}

#[derive(Deserialize)]
struct ViewDoc {
    id: String,
    position: [f64; 3],
    #[serde(default)]
    region_id: Option<String>,
    #[serde(default)]
    region_label: Option<String>,
}

/// A building's view graph. Immutable once built.
#[derive(Debug, Clone)]
pub struct Scan {
    scan_id: String,
    views: Vec<View>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Scan {
    /// Builds a scan from parts, enforcing every invariant.
    ///
    /// Views with an empty `region_id` receive a per-view sentinel region.
    /// Duplicate edges are collapsed.
    pub fn new(
        scan_id: impl Into<String>,
        views: Vec<View>,
        edges: Vec<(String, String)>,
    ) -> Result<Self> {
        Self::build(scan_id.into(), views, edges, "scan")
    }

    fn build(
        scan_id: String,
        mut views: Vec<View>,
        edges: Vec<(String, String)>,
        context: &str,
    ) -> Result<Self> {
        let ctx = || format!("{context} {scan_id:?}");
        let mut index = HashMap::with_capacity(views.len());
        for (i, view) in views.iter_mut().enumerate() {
            if view.view_id.is_empty() {
                return Err(ScanError::EmptyViewId { context: ctx(), index: i });
            }
            if view.position.iter().any(|c| !c.is_finite()) {
                return Err(ScanError::NonFinitePosition {
                    context: ctx(),
                    id: view.view_id.clone(),
                });
            }
            let sentinel = format!("{UNANNOTATED_REGION_PREFIX}{}", view.view_id);
            if view.region_id.is_empty() {
                view.region_id = sentinel;
            } else if view.region_id.starts_with(UNANNOTATED_REGION_PREFIX)
                && view.region_id != sentinel
            {
                return Err(ScanError::ReservedRegion {
                    context: ctx(),
                    id: view.view_id.clone(),
                    region: view.region_id.clone(),
                });
            }
            if index.insert(view.view_id.clone(), i).is_some() {
                return Err(ScanError::DuplicateView {
                    context: ctx(),
                    id: view.view_id.clone(),
                    index: i,
                });
            }
        }

        let mut adjacency = vec![Vec::new(); views.len()];
        let mut edge_list = Vec::with_capacity(edges.len());
        for (i, (a, b)) in edges.iter().enumerate() {
            let lookup = |id: &String| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| ScanError::UnknownEdgeEndpoint {
                        context: ctx(),
                        id: id.clone(),
                        index: i,
                    })
            };
            let (ia, ib) = (lookup(a)?, lookup(b)?);
            if ia == ib {
                return Err(ScanError::SelfLoop {
                    context: ctx(),
                    id: a.clone(),
                    index: i,
                });
            }
            if adjacency[ia].contains(&ib) {
                continue;
            }
            adjacency[ia].push(ib);
            adjacency[ib].push(ia);
            edge_list.push((ia.min(ib), ia.max(ib)));
        }

        Ok(Self {
            scan_id,
            views,
            index,
            edges: edge_list,
            adjacency,
        })
    }

    pub fn scan_id(&self) -> &str {
        &self.scan_id
    }

    /// Views in document order.
    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Edges as index pairs into [`Scan::views`], smaller index first.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn view(&self, id: &str) -> Result<&View> {
        self.index_of(id).map(|i| &self.views[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| ScanError::UnknownView {
                scan: self.scan_id.clone(),
                id: id.to_owned(),
            })
    }

    /// Graph distance with Euclidean edge weights.
    pub fn graph_distance(&self, a: &str, b: &str) -> Result<Distance> {
        self.graph_distance_with(a, b, &Euclidean)
    }

    pub fn graph_distance_with(
        &self,
        a: &str,
        b: &str,
        weight: &impl EdgeWeight,
    ) -> Result<Distance> {
        let (ia, ib) = (self.index_of(a)?, self.index_of(b)?);
        if ia == ib {
            return Ok(Distance::Meters(0.0));
        }
        // search from the lower index so d(a, b) and d(b, a) sum identically
        let (s, t) = (ia.min(ib), ia.max(ib));
        Ok(self.dijkstra(s, Some(t), weight)[t])
    }

    /// Distances from `source` to every view, indexed like [`Scan::views`].
    pub fn distances_from(&self, source: &str, weight: &impl EdgeWeight) -> Result<Vec<Distance>> {
        let s = self.index_of(source)?;
        Ok(self.dijkstra(s, None, weight))
    }

    fn dijkstra(&self, source: usize, target: Option<usize>, weight: &impl EdgeWeight) -> Vec<Distance> {
        let mut dist = vec![f64::INFINITY; self.views.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(State { cost: 0.0, node: source });

        while let Some(State { cost, node }) = heap.pop() {
            if cost > dist[node] {
                continue;
            }
            if Some(node) == target {
                break;
            }
            for &next in &self.adjacency[node] {
                let c = cost + weight.weight(&self.views[node], &self.views[next]);
                if c < dist[next] {
                    dist[next] = c;
                    heap.push(State { cost: c, node: next });
                }
            }
        }

        dist.into_iter()
            .map(|d| if d.is_finite() { Distance::Meters(d) } else { Distance::Unreachable })
            .collect()
    }

    /// True iff both views carry the same region id. Sentinel regions only
    /// match themselves.
    pub fn same_region(&self, a: &str, b: &str) -> Result<bool> {
        Ok(self.view(a)?.region_id == self.view(b)?.region_id)
    }
}

#[derive(Copy, Clone, PartialEq)]
struct State {
    cost: f64,
    node: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, ties on node index for a total order
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Parses a JSON scan document. `context` names the source in error messages.
pub fn load_scan(mut source: impl Read, context: &str) -> Result<Scan> {
    let mut text = String::new();
    source.read_to_string(&mut text).map_err(|e| ScanError::Io {
        path: PathBuf::from(context),
        source: e,
    })?;
    parse_scan(&text, context)
}

pub fn parse_scan(text: &str, context: &str) -> Result<Scan> {
    let doc: ScanDoc = serde_json::from_str(text).map_err(|e| ScanError::Malformed {
        context: context.to_owned(),
        source: e,
    })?;
    let views = doc
        .views
        .into_iter()
        .map(|v| View {
            view_id: v.id,
            position: v.position,
            region_id: v.region_id.unwrap_or_default(),
            region_label: v.region_label.unwrap_or_default(),
        })
        .collect();
    let edges = doc.edges.into_iter().map(|[a, b]| (a, b)).collect();
    Scan::build(doc.scan_id, views, edges, context)
}

/// Scans keyed by scan id.
#[derive(Debug, Clone, Default)]
pub struct ScanSet {
    scans: HashMap<String, Scan>,
}

impl ScanSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, scan: Scan) -> Result<()> {
        if self.scans.contains_key(scan.scan_id()) {
            return Err(ScanError::DuplicateScan(scan.scan_id().to_owned()));
        }
        self.scans.insert(scan.scan_id().to_owned(), scan);
        Ok(())
    }

    pub fn get(&self, scan_id: &str) -> Result<&Scan> {
        self.scans
            .get(scan_id)
            .ok_or_else(|| ScanError::UnknownScan(scan_id.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Scan> {
        self.scans.values()
    }

    /// Loads every `*.json` file in `dir` as a scan document.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let io = |path: &Path, source| ScanError::Io {
            path: path.to_owned(),
            source,
        };
        let mut paths = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| io(dir, e))? {
            let path = entry.map_err(|e| io(dir, e))?.path();
            if path.extension().is_some_and(|ext| ext == "json") {
                paths.push(path);
            }
        }
        paths.sort();

        let mut set = Self::new();
        for path in paths {
            let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
            set.insert(parse_scan(&text, &path.display().to_string())?)?;
        }
        Ok(set)
    }
}

impl FromIterator<Scan> for ScanSet {
    /// Later scans with a repeated id replace earlier ones.
    fn from_iter<I: IntoIterator<Item = Scan>>(iter: I) -> Self {
        Self {
            scans: iter
                .into_iter()
                .map(|s| (s.scan_id().to_owned(), s))
                .collect(),
        }
    }
}
