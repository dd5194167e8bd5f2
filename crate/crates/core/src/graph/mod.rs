//! The PV-plant graph: node geometry, k-nearest-neighbour adjacency,
//! Laplacians and Chebyshev graph convolution.

mod cheb;
mod laplacian;

pub use cheb::{
    cheb_apply, cheb_basis, graph_conv, graph_conv_mat, graph_conv_seq_mat, weight_matrix,
    ChebConv, ChebConvWeights, TapeLaplacian,
};
pub use laplacian::{laplacian, scale_laplacian, ScaledLaplacian, POWER_ITER_MAX, POWER_ITER_TOL};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::{self, Exec};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Geographic position of a plant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeLocation {
    /// Degrees north.
    pub latitude: f64,
    /// Degrees east.
    pub longitude: f64,
    /// Meters above sea level.
    pub altitude: f64,
}

impl NodeLocation {
    pub fn new(latitude: f64, longitude: f64, altitude: f64) -> Result<Self> {
        let loc = Self {
            latitude,
            longitude,
            altitude,
        };
        loc.validate()?;
        Ok(loc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(invalid(format!("latitude {} out of range", self.latitude)));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(invalid(format!(
                "longitude {} out of range",
                self.longitude
            )));
        }
        if !(self.altitude >= -500.0) {
            return Err(invalid(format!("altitude {} below -500 m", self.altitude)));
        }
        Ok(())
    }

    /// Great-circle distance on a 6371 km sphere; altitude is ignored.
    pub fn distance_km(&self, other: &NodeLocation) -> f64 {
        haversine_km(
            self.latitude,
            self.longitude,
            other.latitude,
            other.longitude,
        )
    }
}

pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Undirected weighted graph over plant locations.
///
/// Adjacency is stored as sorted neighbour lists; it is symmetric with an
/// empty diagonal and non-negative weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    locations: Vec<NodeLocation>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeJson {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub n_nodes: usize,
    pub locations: Vec<NodeLocation>,
    pub edges: Vec<EdgeJson>,
}

impl Graph {
    /// Builds a graph from undirected weighted edges `(i, j, w)`.
    pub fn from_edges(
        locations: Vec<NodeLocation>,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let n = locations.len();
        for loc in &locations {
            loc.validate()?;
        }
        let mut neighbors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return Err(invalid(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            if i == j {
                return Err(invalid(format!("self-loop at node {i}")));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(invalid(format!("edge ({i}, {j}) has weight {w}")));
            }
            if w == 0.0 {
                continue;
            }
            for (a, b) in [(i, j), (j, i)] {
                match neighbors[a].iter_mut().find(|(c, _)| *c == b) {
                    Some(entry) => entry.1 = w,
                    None => neighbors[a].push((b, w)),
                }
            }
        }
        for list in &mut neighbors {
            list.sort_by_key(|&(j, _)| j);
        }
        Ok(Self {
            locations,
            neighbors,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.locations.len()
    }

    pub fn locations(&self) -> &[NodeLocation] {
        &self.locations
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.neighbors[i]
            .iter()
            .find(|(c, _)| *c == j)
            .map_or(0.0, |&(_, w)| w)
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Dense row-major adjacency matrix.
    pub fn dense_adjacency(&self) -> Vec<f64> {
        let n = self.n_nodes();
        let mut a = vec![0.0; n * n];
        for (i, list) in self.neighbors.iter().enumerate() {
            for &(j, w) in list {
                a[i * n + j] = w;
            }
        }
        a
    }

    /// Undirected edges with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.neighbors.iter().enumerate().flat_map(|(i, list)| {
            list.iter()
                .filter(move |(j, _)| *j > i)
                .map(move |&(j, w)| (i, j, w))
        })
    }

    /// Relabels nodes so that new node `perm[i]` is old node `i`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_nodes();
        let mut locations = self.locations.clone();
        for (old, &new) in perm.iter().enumerate() {
            locations[new] = self.locations[old];
        }
        let edges: Vec<_> = self
            .edges()
            .map(|(i, j, w)| (perm[i], perm[j], w))
            .collect();
        debug_assert_eq!(perm.len(), n);
        Self::from_edges(locations, edges)
    }

    /// Distance from every node to its closest other node, in km.
    pub fn nearest_neighbor_km(&self) -> Vec<f64> {
        let locs = &self.locations;
        (0..locs.len())
            .map(|i| {
                locs.iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, l)| locs[i].distance_km(l))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            n_nodes: self.n_nodes(),
            locations: self.locations.clone(),
            edges: self.edges().map(|(i, j, w)| EdgeJson { i, j, w }).collect(),
        }
    }

    pub fn from_json(doc: &GraphJson) -> Result<Self> {
        if doc.locations.len() != doc.n_nodes {
            return Err(invalid(format!(
                "graph declares {} nodes but lists {} locations",
                doc.n_nodes,
                doc.locations.len()
            )));
        }
        Self::from_edges(
            doc.locations.clone(),
            doc.edges.iter().map(|e| (e.i, e.j, e.w)),
        )
    }
}

/// Unit-weight k-nearest-neighbour graph, symmetrised by union.
///
/// Ties in distance are broken by node index.
pub fn build_knn_graph(locations: &[NodeLocation], k: usize) -> Result<Graph> {
    build_knn_graph_with(Exec::default(), locations, k)
}

pub fn build_knn_graph_with(exec: Exec, locations: &[NodeLocation], k: usize) -> Result<Graph> {
    let n = locations.len();
    if n < 2 {
        return Err(invalid(format!(
            "kNN graph needs at least 2 nodes, got {n}"
        )));
    }
    if k == 0 || k >= n {
        return Err(invalid(format!("k = {k} must satisfy 1 <= k < N = {n}")));
    }
    for loc in locations {
        loc.validate()?;
    }
    let nodes: Vec<usize> = (0..n).collect();
    let nearest = exec::map(exec, &nodes, |&i| {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (locations[i].distance_km(&locations[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        others.truncate(k);
        others.into_iter().map(|(_, j)| j).collect::<Vec<_>>()
    });
    let edges = nearest
        .iter()
        .enumerate()
        .flat_map(|(i, list)| list.iter().map(move |&j| (i, j, 1.0)));
    Graph::from_edges(locations.to_vec(), edges)
}
