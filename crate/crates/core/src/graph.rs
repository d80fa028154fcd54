//! Domain discretization and graph construction.
//!
//! The PDE domain is discretized into an even grid of `N` nodes. Nodes
//! adjacent along exactly one axis are connected, self-loops are added via
//! `Ã = A + I`, and the propagation operator `D̃^{-1/2} Ã D̃^{-1/2}` is stored
//! in compressed sparse row form. Node indexing is row-major with the time
//! axis last (and fastest-varying).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// Evenly spaced grid over 2 or 3 axes; the last axis is time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<AxisSpec>,
}

impl GridSpec {
    pub fn new(axes: Vec<AxisSpec>) -> Result<Self> {
        if axes.len() < 2 || axes.len() > 3 {
            return Err(Error::Grid(format!(
                "expected 2 or 3 axes, got {}",
                axes.len()
            )));
        }
        for (k, a) in axes.iter().enumerate() {
            if a.count < 2 {
                return Err(Error::Grid(format!("axis {} count {} < 2", k, a.count)));
            }
            if !(a.min < a.max) {
                return Err(Error::Grid(format!(
                    "axis {} bounds [{}, {}] invalid",
                    k, a.min, a.max
                )));
            }
        }
        Ok(GridSpec { axes })
    }

    pub fn rect(bounds: &[(f64, f64)], counts: &[usize]) -> Result<Self> {
        GridSpec::new(
            bounds
                .iter()
                .zip(counts)
                .map(|(&(min, max), &count)| AxisSpec { min, max, count })
                .collect(),
        )
    }

    /// Number of axes.
    pub fn p(&self) -> usize {
        self.axes.len()
    }

    /// Total node count.
    pub fn n(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    /// Index of the time axis (last by convention).
    pub fn time_axis(&self) -> usize {
        self.axes.len() - 1
    }

    /// Grid coordinate `min + i·(max-min)/(count-1)` along one axis.
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        let a = &self.axes[axis];
        a.min + (i as f64) * (a.max - a.min) / ((a.count - 1) as f64)
    }

    /// Row-major node index of a multi-index (last axis fastest).
    pub fn node_index(&self, idx: &[usize]) -> usize {
        let mut n = 0;
        for (k, &i) in idx.iter().enumerate() {
            n = n * self.axes[k].count + i;
        }
        n
    }

    /// Multi-index of a row-major node index.
    pub fn multi_index(&self, mut node: usize) -> Vec<usize> {
        let mut idx = vec![0; self.p()];
        for k in (0..self.p()).rev() {
            idx[k] = node % self.axes[k].count;
            node /= self.axes[k].count;
        }
        idx
    }
}

/// `N×P` node coordinate matrix produced by [`discretize`].
pub fn discretize(spec: &GridSpec) -> Vec<f64> {
    let p = spec.p();
    let n = spec.n();
    let mut coords = Vec::with_capacity(n * p);
    let mut idx = vec![0usize; p];
    for _ in 0..n {
        for k in 0..p {
            coords.push(spec.coord(k, idx[k]));
        }
        // Odometer increment, last axis fastest.
        for k in (0..p).rev() {
            idx[k] += 1;
            if idx[k] < spec.axes[k].count {
                break;
            }
            idx[k] = 0;
        }
    }
    coords
}

/// Undirected edges between nodes adjacent along exactly one axis.
pub fn build_grid_graph(spec: &GridSpec) -> Vec<(u32, u32)> {
    let p = spec.p();
    let n = spec.n();
    let mut strides = vec![1usize; p];
    for k in (0..p - 1).rev() {
        strides[k] = strides[k + 1] * spec.axes[k + 1].count;
    }
    let mut edges = Vec::new();
    for node in 0..n {
        let idx = spec.multi_index(node);
        for k in 0..p {
            if idx[k] + 1 < spec.axes[k].count {
                edges.push((node as u32, (node + strides[k]) as u32));
            }
        }
    }
    edges
}

/// Sparse symmetric matrix in compressed sparse row form. Row iteration (and
/// therefore every matrix-vector product) visits entries in a fixed order.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_triplets(n: usize, mut triplets: Vec<(u32, u32, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for &(r, c, v) in &triplets {
            row_ptr[r as usize + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `y = M x`, rows in ascending order.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c as usize];
            }
            y[i] = acc;
        }
    }

    /// Dense product `Y = M X` with `X` an `n×p` row-major matrix.
    pub fn matmat(&self, x: &[f64], p: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.n * p];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let xr = &x[c as usize * p..c as usize * p + p];
                for (yk, &xk) in y[i * p..i * p + p].iter_mut().zip(xr) {
                    *yk += v * xk;
                }
            }
        }
        y
    }
}

/// Symmetric normalized propagation matrix `D̃^{-1/2} Ã D̃^{-1/2}` with
/// `Ã = A + I`.
pub fn normalize_adjacency(edges: &[(u32, u32)], n: usize) -> CsrMatrix {
    let mut deg = vec![1.0f64; n]; // self-connection
    for &(a, b) in edges {
        deg[a as usize] += 1.0;
        deg[b as usize] += 1.0;
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut triplets = Vec::with_capacity(2 * edges.len() + n);
    for i in 0..n {
        triplets.push((i as u32, i as u32, 1.0 / deg[i]));
    }
    for &(a, b) in edges {
        let w = inv_sqrt[a as usize] * inv_sqrt[b as usize];
        triplets.push((a, b, w));
        triplets.push((b, a, w));
    }
    CsrMatrix::from_triplets(n, triplets)
}

/// Boolean node sets over one grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Masks {
    pub interior: Vec<bool>,
    pub initial: Vec<bool>,
    pub boundary: Vec<bool>,
    pub train: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn count(mask: &[bool]) -> usize {
        mask.iter().filter(|&&b| b).count()
    }
}

/// Classifies nodes: initial (`t = t_min`), boundary (non-initial nodes with
/// any spatial coordinate at an axis extreme), interior (the rest).
pub fn classify_nodes(spec: &GridSpec) -> (Vec<bool>, Vec<bool>, Vec<bool>) {
    let n = spec.n();
    let t_axis = spec.time_axis();
    let mut initial = vec![false; n];
    let mut boundary = vec![false; n];
    let mut interior = vec![false; n];
    for node in 0..n {
        let idx = spec.multi_index(node);
        if idx[t_axis] == 0 {
            initial[node] = true;
        } else if (0..t_axis).any(|k| idx[k] == 0 || idx[k] == spec.axes[k].count - 1) {
            boundary[node] = true;
        } else {
            interior[node] = true;
        }
    }
    (initial, boundary, interior)
}

/// Inside-domain split: whole coordinate lines along the spatial axes are
/// held out as test nodes. For `P = 2` that is `round(fraction·count_x)`
/// x-lines; for `P = 3`, `(x, y)` columns.
pub fn split_inside(spec: &GridSpec, fraction: f64, seed: u64) -> Result<(Vec<bool>, Vec<bool>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {} not in (0,1)", fraction)));
    }
    let spatial: usize = spec.axes[..spec.time_axis()].iter().map(|a| a.count).product();
    let k = (fraction * spatial as f64).round() as usize;
    if k == 0 {
        return Err(Error::Config(format!(
            "fraction {} selects zero test lines out of {}",
            fraction, spatial
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, spatial, k);
    let mut line_is_test = vec![false; spatial];
    for i in chosen {
        line_is_test[i] = true;
    }
    let n = spec.n();
    let ct = spec.axes[spec.time_axis()].count;
    let mut test = vec![false; n];
    for node in 0..n {
        // Spatial line index: node with time stripped (time is fastest).
        if line_is_test[node / ct] {
            test[node] = true;
        }
    }
    let train = test.iter().map(|&t| !t).collect();
    Ok((train, test))
}

/// Outside-domain split: the trailing `round(fraction·count_t)` time levels
/// become test nodes. Also returns the truncated grid used for training
/// (`None` when fewer than two time levels remain).
pub fn split_outside(
    spec: &GridSpec,
    fraction: f64,
) -> Result<(Vec<bool>, Vec<bool>, Option<GridSpec>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {} not in (0,1)", fraction)));
    }
    let t_axis = spec.time_axis();
    let ct = spec.axes[t_axis].count;
    let k = (fraction * ct as f64).round() as usize;
    let train_ct = ct - k;
    if train_ct == 0 {
        return Err(Error::Config(format!(
            "fraction {} leaves no training time levels",
            fraction
        )));
    }
    let n = spec.n();
    let mut test = vec![false; n];
    for node in 0..n {
        if node % ct >= train_ct {
            test[node] = true;
        }
    }
    let train = test.iter().map(|&t| !t).collect();
    let train_spec = if train_ct >= 2 {
        let mut train_axes = spec.axes.clone();
        train_axes[t_axis] = AxisSpec {
            min: spec.axes[t_axis].min,
            max: spec.coord(t_axis, train_ct - 1),
            count: train_ct,
        };
        Some(GridSpec::new(train_axes)?)
    } else {
        None
    };
    Ok((train, test, train_spec))
}

/// Discretized domain with its graph, propagation operator and node masks.
#[derive(Clone, Debug)]
pub struct GraphData {
    pub spec: GridSpec,
    /// `N×P` row-major coordinates.
    pub coords: Vec<f64>,
    pub edges: Vec<(u32, u32)>,
    pub propagation: CsrMatrix,
    pub masks: Masks,
}

impl GraphData {
    /// Builds the graph with classification masks; train/test default to
    /// all-train until a split is applied.
    pub fn build(spec: GridSpec) -> Self {
        let coords = discretize(&spec);
        let edges = build_grid_graph(&spec);
        let propagation = normalize_adjacency(&edges, spec.n());
        let (initial, boundary, interior) = classify_nodes(&spec);
        let n = spec.n();
        GraphData {
            spec,
            coords,
            edges,
            propagation,
            masks: Masks {
                interior,
                initial,
                boundary,
                train: vec![true; n],
                test: vec![false; n],
            },
        }
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        let p = self.spec.p();
        &self.coords[i * p..i * p + p]
    }

    pub fn apply_split(&mut self, train: Vec<bool>, test: Vec<bool>) {
        self.masks.train = train;
        self.masks.test = test;
    }

    /// JSON export of coordinates, edges and masks for inspection.
    pub fn to_json(&self) -> serde_json::Value {
        let p = self.spec.p();
        let coords: Vec<Vec<f64>> = (0..self.n())
            .map(|i| self.coords[i * p..i * p + p].to_vec())
            .collect();
        serde_json::json!({
            "spec": self.spec,
            "coords": coords,
            "edges": self.edges.iter().map(|&(a, b)| vec![a, b]).collect::<Vec<_>>(),
            "masks": self.masks,
        })
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &self.to_json())
            .map_err(|e| Error::Config(format!("graph json: {}", e)))?;
        Ok(())
    }
}
