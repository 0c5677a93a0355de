//! Site ordering, neighbour sets and surrogate feature vectors.

mod gaussian;

pub use gaussian::{gaussian_conditional_params, gaussian_copula_logdensity, GaussianVecchia};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dependence::{DependenceParams, SiteSet};
use crate::error::{NpmmError, Result};

/// Maximum-minimum distance ordering starting next to the centroid.
pub fn order_sites(sites: &SiteSet) -> Vec<usize> {
    let n = sites.len();
    if n == 0 {
        return Vec::new();
    }
    let cx = sites.coords.iter().map(|c| c[0]).sum::<f64>() / n as f64;
    let cy = sites.coords.iter().map(|c| c[1]).sum::<f64>() / n as f64;
    let mut first = 0;
    let mut best = f64::INFINITY;
    for (i, c) in sites.coords.iter().enumerate() {
        let d = (c[0] - cx).hypot(c[1] - cy);
        if d < best {
            best = d;
            first = i;
        }
    }
    let mut order = vec![first];
    let mut placed = vec![false; n];
    placed[first] = true;
    let mut min_dist: Vec<f64> = (0..n).map(|j| sites.distance(first, j)).collect();
    while order.len() < n {
        let mut pick = usize::MAX;
        let mut far = f64::NEG_INFINITY;
        for j in 0..n {
            if !placed[j] && min_dist[j] > far {
                far = min_dist[j];
                pick = j;
            }
        }
        placed[pick] = true;
        order.push(pick);
        for j in 0..n {
            min_dist[j] = min_dist[j].min(sites.distance(pick, j));
        }
    }
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecchiaStructure {
    /// `ordering[p]` is the original index of the site at position `p`.
    pub ordering: Vec<usize>,
    /// Neighbour positions of each position, nearest first.
    pub neighbors: Vec<Vec<usize>>,
    pub m: usize,
}

impl VecchiaStructure {
    pub fn n_sites(&self) -> usize {
        self.ordering.len()
    }

    /// Position of each original site.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.ordering.len()];
        for (p, &s) in self.ordering.iter().enumerate() {
            pos[s] = p;
        }
        pos
    }

    /// Factors whose value depends on the score at position `p`:
    /// its own factor and every factor that conditions on it.
    pub fn dependents(&self) -> Vec<Vec<usize>> {
        let n = self.n_sites();
        let mut out: Vec<Vec<usize>> = (0..n).map(|p| vec![p]).collect();
        for (q, nb) in self.neighbors.iter().enumerate() {
            for &p in nb {
                out[p].push(q);
            }
        }
        out
    }

    /// Hex digest identifying the ordering and neighbour lists.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.m as u64).to_le_bytes());
        h.update((self.ordering.len() as u64).to_le_bytes());
        for &s in &self.ordering {
            h.update((s as u64).to_le_bytes());
        }
        for nb in &self.neighbors {
            h.update((nb.len() as u64).to_le_bytes());
            for &p in nb {
                h.update((p as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Nearest previously ordered positions, at most `m` of them.
pub fn neighbor_sets(sites: &SiteSet, ordering: &[usize], m: usize) -> Result<VecchiaStructure> {
    if m == 0 {
        return Err(NpmmError::InvalidArgument(
            "neighbour count must be at least 1".into(),
        ));
    }
    if ordering.len() != sites.len() {
        return Err(NpmmError::InvalidArgument(format!(
            "ordering has {} entries for {} sites",
            ordering.len(),
            sites.len()
        )));
    }
    let neighbors = (0..ordering.len())
        .map(|i| {
            let mut prev: Vec<(f64, usize)> = (0..i)
                .map(|p| (sites.distance(ordering[i], ordering[p]), p))
                .collect();
            prev.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            prev.truncate(m);
            prev.into_iter().map(|(_, p)| p).collect()
        })
        .collect();
    Ok(VecchiaStructure {
        ordering: ordering.to_vec(),
        neighbors,
        m,
    })
}

/// Ordering plus neighbour sets in one call.
pub fn build_structure(sites: &SiteSet, m: usize) -> Result<VecchiaStructure> {
    let ordering = order_sites(sites);
    neighbor_sets(sites, &ordering, m)
}

/// Scale applied to the log weight gap before it enters a network.
pub const DELTA_GAP_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// Neighbour scores, nearest first, zero-padded to `m`.
    pub u_neighbors: Vec<f64>,
    pub mask: Vec<bool>,
    pub rho: f64,
    pub r: f64,
    pub delta_y: f64,
    pub delta_gap: f64,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.u_neighbors.len() + 4
    }

    /// Network input: scores, `rho`, `r`, `delta_y`, `delta_gap / 10`.
    pub fn write_input(&self, out: &mut [f64]) {
        let m = self.u_neighbors.len();
        out[..m].copy_from_slice(&self.u_neighbors);
        out[m] = self.rho;
        out[m + 1] = self.r;
        out[m + 2] = self.delta_y;
        out[m + 3] = self.delta_gap / DELTA_GAP_SCALE;
    }

    pub fn input(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.write_input(&mut v);
        v
    }
}

/// `(δ_y, log δ_y − log δ_y')` for the site at `pos` given the two region weights.
pub fn delta_features(
    pos: usize,
    structure: &VecchiaStructure,
    regions: &[u8],
    delta1: f64,
    delta2: f64,
) -> (f64, f64) {
    let own = regions[structure.ordering[pos]];
    let (dy, other) = if own == 1 {
        (delta1, delta2)
    } else {
        (delta2, delta1)
    };
    let mixed = structure.neighbors[pos]
        .iter()
        .any(|&p| regions[structure.ordering[p]] != own);
    let dy_prime = if mixed { other } else { dy };
    (dy, dy.ln() - dy_prime.ln())
}

/// Writes the network input of position `pos` from ordered scores `u_ord`.
pub fn write_input_ordered(
    pos: usize,
    u_ord: &[f64],
    structure: &VecchiaStructure,
    regions: &[u8],
    rho: f64,
    r: f64,
    delta1: f64,
    delta2: f64,
    out: &mut [f64],
) {
    let m = structure.m;
    let nb = &structure.neighbors[pos];
    for k in 0..m {
        out[k] = if k < nb.len() { u_ord[nb[k]] } else { 0.0 };
    }
    let (dy, gap) = delta_features(pos, structure, regions, delta1, delta2);
    out[m] = rho;
    out[m + 1] = r;
    out[m + 2] = dy;
    out[m + 3] = gap / DELTA_GAP_SCALE;
}

/// Feature vector of ordered position `i` at time `t`; `u` is indexed by original site.
pub fn build_features(
    i: usize,
    u: &[f64],
    params: &DependenceParams,
    deltas: &crate::dependence::DeltaField,
    t: usize,
    structure: &VecchiaStructure,
    sites: &SiteSet,
) -> Result<FeatureVector> {
    let m = structure.m;
    let nb = &structure.neighbors[i];
    let mut u_neighbors = vec![0.0; m];
    let mut mask = vec![false; m];
    for (k, &p) in nb.iter().enumerate() {
        let s = structure.ordering[p];
        let val = u.get(s).copied().filter(|x| x.is_finite()).ok_or_else(|| {
            NpmmError::Data(format!(
                "missing score for neighbour site {s} of ordered position {i}"
            ))
        })?;
        u_neighbors[k] = val;
        mask[k] = true;
    }
    let (delta_y, delta_gap) = delta_features(
        i,
        structure,
        &sites.region,
        deltas.delta1[t],
        deltas.delta2[t],
    );
    Ok(FeatureVector {
        u_neighbors,
        mask,
        rho: params.rho,
        r: params.r,
        delta_y,
        delta_gap,
    })
}
