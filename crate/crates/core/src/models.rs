//! The two stream networks, the fusion head, parameter layout and
//! initialization.
//!
//! Forward passes are generic over [`Scalar`], so the same code runs on plain
//! values, dual numbers (input derivatives) and tape variables (parameter
//! gradients).

use std::io::Read as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::graph::CsrMatrix;
use crate::problems::Problem;

/// Dense collocation network: `layers` weight layers, tanh between them,
/// linear output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FfnnSpec {
    pub input_dim: usize,
    pub layers: usize,
    pub hidden: usize,
    pub output_dim: usize,
}

impl FfnnSpec {
    /// `(fan_in, fan_out)` of each weight layer in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.layers);
        dims.push((self.input_dim, if self.layers == 1 { self.output_dim } else { self.hidden }));
        for _ in 0..self.layers.saturating_sub(2) {
            dims.push((self.hidden, self.hidden));
        }
        if self.layers >= 2 {
            dims.push((self.hidden, self.output_dim));
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(fi, fo)| fi * fo + fo).sum()
    }

    pub fn layout(&self) -> Layout {
        let mut b = LayoutBuilder::new("ffnn");
        for (li, &(fi, fo)) in self.layer_dims().iter().enumerate() {
            b.weight(&format!("ffnn.w{}", li), fi, fo);
            b.bias(&format!("ffnn.b{}", li), fi, fo);
        }
        b.finish()
    }
}

/// Graph stream: one propagation layer plus a learned residual input
/// projection, three node-wise tanh layers, linear output map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GcnSpec {
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
}

impl GcnSpec {
    pub fn param_count(&self) -> usize {
        let (p, h, m) = (self.input_dim, self.hidden, self.output_dim);
        2 * (p * h + h) + 3 * (h * h + h) + (h * m + m)
    }

    pub fn layout(&self) -> Layout {
        let (p, h, m) = (self.input_dim, self.hidden, self.output_dim);
        let mut b = LayoutBuilder::new("gcn");
        b.weight("gcn.wg", p, h);
        b.bias("gcn.bg", p, h);
        b.weight("gcn.wr", p, h);
        b.bias("gcn.br", p, h);
        for li in 1..=3 {
            b.weight(&format!("gcn.w{}", li), h, h);
            b.bias(&format!("gcn.b{}", li), h, h);
        }
        b.weight("gcn.wo", h, m);
        b.bias("gcn.bo", h, m);
        b.finish()
    }
}

/// Bias-free head combining the two stream outputs per component, weights
/// shared across components. One linear layer, or tanh hidden + linear.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FusionSpec {
    pub layers: usize,
    pub hidden: usize,
}

impl FusionSpec {
    pub fn param_count(&self) -> usize {
        if self.layers == 1 {
            2
        } else {
            3 * self.hidden
        }
    }

    pub fn layout(&self) -> Layout {
        let mut b = LayoutBuilder::new("fusion");
        if self.layers == 1 {
            b.weight("fusion.w0", 2, 1);
        } else {
            b.weight("fusion.w0", 2, self.hidden);
            b.weight("fusion.w1", self.hidden, 1);
        }
        b.finish()
    }

    /// Weights making the head return the first stream unchanged; only
    /// representable without a hidden layer.
    pub fn pass_through_params(&self) -> Option<Vec<f64>> {
        if self.layers == 1 {
            Some(vec![1.0, 0.0])
        } else {
            None
        }
    }
}

/// Both streams plus the fusion head; parameters live in one flat vector
/// ordered ffnn, gcn, fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TwoStreamSpec {
    pub ffnn: FfnnSpec,
    pub gcn: GcnSpec,
    pub fusion: FusionSpec,
}

impl TwoStreamSpec {
    pub fn param_count(&self) -> usize {
        self.ffnn.param_count() + self.gcn.param_count() + self.fusion.param_count()
    }

    pub fn ffnn_range(&self) -> std::ops::Range<usize> {
        0..self.ffnn.param_count()
    }

    pub fn gcn_range(&self) -> std::ops::Range<usize> {
        let a = self.ffnn.param_count();
        a..a + self.gcn.param_count()
    }

    pub fn fusion_range(&self) -> std::ops::Range<usize> {
        let a = self.ffnn.param_count() + self.gcn.param_count();
        a..a + self.fusion.param_count()
    }

    pub fn layout(&self) -> Layout {
        let mut segments = Vec::new();
        let mut offset = 0;
        for part in [self.ffnn.layout(), self.gcn.layout(), self.fusion.layout()] {
            for mut s in part.segments {
                s.offset += offset;
                segments.push(s);
            }
            offset += part.count;
        }
        Layout {
            kind: "two-stream".into(),
            count: offset,
            segments,
        }
    }
}

/// The benchmark architectures per problem.
pub fn table_specs(problem: Problem) -> TwoStreamSpec {
    let p = problem.p();
    let m = problem.arity();
    let (ffnn_layers, ffnn_hidden, gcn_hidden, fusion) = match problem {
        Problem::Burgers1d => (8, 20, 12, FusionSpec { layers: 2, hidden: 48 }),
        Problem::Schrodinger1d => (6, 100, 256, FusionSpec { layers: 1, hidden: 1 }),
        Problem::Burgers2d => (8, 20, 12, FusionSpec { layers: 2, hidden: 16 }),
        Problem::Schrodinger2d => (5, 50, 18, FusionSpec { layers: 2, hidden: 16 }),
    };
    TwoStreamSpec {
        ffnn: FfnnSpec {
            input_dim: p,
            layers: ffnn_layers,
            hidden: ffnn_hidden,
            output_dim: m,
        },
        gcn: GcnSpec {
            input_dim: p,
            hidden: gcn_hidden,
            output_dim: m,
        },
        fusion,
    }
}

/// One named slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub fan_in: usize,
    pub fan_out: usize,
    pub is_bias: bool,
}

/// Flat parameter layout; the serialization manifest.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Layout {
    pub kind: String,
    pub count: usize,
    pub segments: Vec<Segment>,
}

struct LayoutBuilder {
    kind: &'static str,
    segments: Vec<Segment>,
    offset: usize,
}

impl LayoutBuilder {
    fn new(kind: &'static str) -> Self {
        LayoutBuilder {
            kind,
            segments: Vec::new(),
            offset: 0,
        }
    }

    fn push(&mut self, name: &str, len: usize, fan_in: usize, fan_out: usize, is_bias: bool) {
        self.segments.push(Segment {
            name: name.into(),
            offset: self.offset,
            len,
            fan_in,
            fan_out,
            is_bias,
        });
        self.offset += len;
    }

    fn weight(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        self.push(name, fan_in * fan_out, fan_in, fan_out, false);
    }

    fn bias(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        self.push(name, fan_out, fan_in, fan_out, true);
    }

    fn finish(self) -> Layout {
        Layout {
            kind: self.kind.into(),
            count: self.offset,
            segments: self.segments,
        }
    }
}

/// Glorot-uniform weights, zero biases, deterministic under `seed`.
pub fn init_params(layout: &Layout, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0; layout.count];
    for s in &layout.segments {
        if s.is_bias {
            continue;
        }
        let a = (6.0 / (s.fan_in + s.fan_out) as f64).sqrt();
        for v in params[s.offset..s.offset + s.len].iter_mut() {
            *v = rng.gen_range(-a..a);
        }
    }
    params
}

fn check_len(context: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            context: context.into(),
            expected,
            got,
        });
    }
    Ok(())
}

/// Dense forward pass. Weight matrices are row-major `[out][in]`.
pub fn ffnn_forward<S: Scalar>(spec: &FfnnSpec, params: &[S], point: &[S]) -> Result<Vec<S>> {
    check_len("ffnn params", spec.param_count(), params.len())?;
    check_len("ffnn input", spec.input_dim, point.len())?;
    let dims = spec.layer_dims();
    let mut h: Vec<S> = point.to_vec();
    let mut off = 0;
    for (li, &(fi, fo)) in dims.iter().enumerate() {
        let w = &params[off..off + fi * fo];
        let b = &params[off + fi * fo..off + fi * fo + fo];
        off += fi * fo + fo;
        let mut out = Vec::with_capacity(fo);
        for o in 0..fo {
            let mut acc = b[o];
            for (i, &x) in h.iter().enumerate() {
                acc = acc + w[o * fi + i] * x;
            }
            out.push(if li + 1 < dims.len() { acc.tanh() } else { acc });
        }
        h = out;
    }
    Ok(h)
}

fn gcn_slices<'a, S>(spec: &GcnSpec, params: &'a [S]) -> (Vec<&'a [S]>, Vec<&'a [S]>) {
    let (p, h, m) = (spec.input_dim, spec.hidden, spec.output_dim);
    let sizes = [
        (p * h, h),
        (p * h, h),
        (h * h, h),
        (h * h, h),
        (h * h, h),
        (h * m, m),
    ];
    let mut weights = Vec::with_capacity(6);
    let mut biases = Vec::with_capacity(6);
    let mut off = 0;
    for (wlen, blen) in sizes {
        weights.push(&params[off..off + wlen]);
        biases.push(&params[off + wlen..off + wlen + blen]);
        off += wlen + blen;
    }
    (weights, biases)
}

/// Full graph forward pass: `tanh(M·XW_gᵀ + b_g + XW_rᵀ + b_r)`, three
/// node-wise tanh layers, linear output. Returns N×m row-major.
pub fn gcn_forward(
    spec: &GcnSpec,
    params: &[f64],
    features: &[f64],
    prop: &CsrMatrix,
) -> Result<Vec<f64>> {
    check_len("gcn params", spec.param_count(), params.len())?;
    let n = prop.n;
    let (p, h, m) = (spec.input_dim, spec.hidden, spec.output_dim);
    check_len("gcn features", n * p, features.len())?;
    let (w, b) = gcn_slices(spec, params);

    // X·W_gᵀ, then propagate.
    let mut xwg = vec![0.0; n * h];
    for i in 0..n {
        let x = &features[i * p..(i + 1) * p];
        for k in 0..h {
            let row = &w[0][k * p..(k + 1) * p];
            xwg[i * h + k] = row.iter().zip(x).map(|(a, c)| a * c).sum();
        }
    }
    let agg = prop.matmat(&xwg, h);

    let mut hcur = vec![0.0; n * h];
    for i in 0..n {
        let x = &features[i * p..(i + 1) * p];
        for k in 0..h {
            let row = &w[1][k * p..(k + 1) * p];
            let res: f64 = row.iter().zip(x).map(|(a, c)| a * c).sum();
            hcur[i * h + k] = (agg[i * h + k] + b[0][k] + res + b[1][k]).tanh();
        }
    }

    for l in 2..5 {
        let mut next = vec![0.0; n * h];
        for i in 0..n {
            let hin = &hcur[i * h..(i + 1) * h];
            for k in 0..h {
                let row = &w[l][k * h..(k + 1) * h];
                let dot: f64 = row.iter().zip(hin).map(|(a, c)| a * c).sum();
                next[i * h + k] = (dot + b[l][k]).tanh();
            }
        }
        hcur = next;
    }

    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let hin = &hcur[i * h..(i + 1) * h];
        for k in 0..m {
            let row = &w[5][k * h..(k + 1) * h];
            out[i * m + k] = row.iter().zip(hin).map(|(a, c)| a * c).sum::<f64>() + b[5][k];
        }
    }
    Ok(out)
}

/// Off-diagonal propagation inputs per node: `agg_i = Σ_{j≠i} M_ij·(W_g x_j)`
/// plus the diagonal weight `M_ii`. Combined with [`gcn_forward_node`] this
/// reproduces the full forward pass while exposing node i's own coordinates
/// as the only differentiable inputs.
pub fn gcn_aggregates<S: Scalar>(
    spec: &GcnSpec,
    params: &[S],
    features: &[f64],
    prop: &CsrMatrix,
) -> Result<(Vec<S>, Vec<f64>)> {
    check_len("gcn params", spec.param_count(), params.len())?;
    let n = prop.n;
    let (p, h) = (spec.input_dim, spec.hidden);
    check_len("gcn features", n * p, features.len())?;
    let (w, _) = gcn_slices(spec, params);
    let zero = params[0].lift(0.0);

    let mut xwg = vec![zero; n * h];
    for i in 0..n {
        let x = &features[i * p..(i + 1) * p];
        for k in 0..h {
            let mut acc = zero;
            for c in 0..p {
                acc = acc + w[0][k * p + c] * params[0].lift(x[c]);
            }
            xwg[i * h + k] = acc;
        }
    }

    let mut agg = vec![zero; n * h];
    let mut diag = vec![0.0; n];
    for i in 0..n {
        let (cols, vals) = prop.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            let j = j as usize;
            if j == i {
                diag[i] = v;
                continue;
            }
            for k in 0..h {
                agg[i * h + k] = agg[i * h + k] + params[0].lift(v) * xwg[j * h + k];
            }
        }
    }
    Ok((agg, diag))
}

/// Forward pass at one node given its off-diagonal aggregate; `point` is the
/// node's own feature vector and the only path derivatives flow through.
pub fn gcn_forward_node<S: Scalar>(
    spec: &GcnSpec,
    params: &[S],
    point: &[S],
    agg: &[S],
    diag: f64,
) -> Result<Vec<S>> {
    check_len("gcn params", spec.param_count(), params.len())?;
    check_len("gcn input", spec.input_dim, point.len())?;
    let (p, h, m) = (spec.input_dim, spec.hidden, spec.output_dim);
    check_len("gcn aggregate", h, agg.len())?;
    let (w, b) = gcn_slices(spec, params);
    let mdiag = point[0].lift(diag);

    let mut hcur = Vec::with_capacity(h);
    for k in 0..h {
        let mut own = w[0][k * p] * point[0];
        let mut res = w[1][k * p] * point[0];
        for c in 1..p {
            own = own + w[0][k * p + c] * point[c];
            res = res + w[1][k * p + c] * point[c];
        }
        hcur.push((agg[k] + mdiag * own + b[0][k] + res + b[1][k]).tanh());
    }

    for l in 2..5 {
        let mut next = Vec::with_capacity(h);
        for k in 0..h {
            let mut acc = b[l][k];
            for (i, &x) in hcur.iter().enumerate() {
                acc = acc + w[l][k * h + i] * x;
            }
            next.push(acc.tanh());
        }
        hcur = next;
    }

    let mut out = Vec::with_capacity(m);
    for k in 0..m {
        let mut acc = b[5][k];
        for (i, &x) in hcur.iter().enumerate() {
            acc = acc + w[5][k * h + i] * x;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Combines the per-component stream outputs through the shared head.
pub fn fusion_forward<S: Scalar>(
    spec: &FusionSpec,
    params: &[S],
    ffnn_out: &[S],
    gcn_out: &[S],
) -> Result<Vec<S>> {
    check_len("fusion params", spec.param_count(), params.len())?;
    check_len("fusion inputs", ffnn_out.len(), gcn_out.len())?;
    let mut out = Vec::with_capacity(ffnn_out.len());
    for (&f, &g) in ffnn_out.iter().zip(gcn_out) {
        if spec.layers == 1 {
            out.push(params[0] * f + params[1] * g);
        } else {
            let w = spec.hidden;
            let mut acc = params[0].lift(0.0);
            for k in 0..w {
                let hk = (params[2 * k] * f + params[2 * k + 1] * g).tanh();
                acc = acc + params[2 * w + k] * hk;
            }
            out.push(acc);
        }
    }
    Ok(out)
}

/// Writes `<stem>.params.bin` (little-endian f64) and `<stem>.manifest.json`.
pub fn save_params(dir: &Path, stem: &str, layout: &Layout, params: &[f64]) -> Result<()> {
    check_len("save params", layout.count, params.len())?;
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for v in params {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(dir.join(format!("{}.params.bin", stem)), &bytes)?;
    let manifest = serde_json::to_string_pretty(layout)
        .map_err(|e| Error::Checkpoint(format!("manifest encode: {}", e)))?;
    std::fs::write(dir.join(format!("{}.manifest.json", stem)), manifest)?;
    Ok(())
}

/// Loads a parameter file, validating the stored manifest against `expected`.
pub fn load_params(dir: &Path, stem: &str, expected: &Layout) -> Result<Vec<f64>> {
    let manifest_path = dir.join(format!("{}.manifest.json", stem));
    let mut text = String::new();
    std::fs::File::open(&manifest_path)?.read_to_string(&mut text)?;
    let stored: Layout = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("manifest decode: {}", e)))?;
    if &stored != expected {
        return Err(Error::Checkpoint(format!(
            "manifest {} does not match the expected layout",
            manifest_path.display()
        )));
    }
    let bytes = std::fs::read(dir.join(format!("{}.params.bin", stem)))?;
    if bytes.len() != expected.count * 8 {
        return Err(Error::Checkpoint(format!(
            "parameter file holds {} bytes, expected {}",
            bytes.len(),
            expected.count * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Convenience: a sink for save_params on nonexistent directories.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_grid_graph, normalize_adjacency, GraphData, GridSpec};

    fn all_problems() -> [Problem; 4] {
        [
            Problem::Burgers1d,
            Problem::Schrodinger1d,
            Problem::Burgers2d,
            Problem::Schrodinger2d,
        ]
    }

    #[test]
    fn table_parameter_counts() {
        let expected = [
            (Problem::Burgers1d, 2601, 553, 144),
            (Problem::Schrodinger1d, 40902, 199426, 2),
            (Problem::Burgers2d, 2621, 577, 48),
            (Problem::Schrodinger2d, 7952, 1208, 48),
        ];
        for (problem, ffnn, gcn, fusion) in expected {
            let spec = table_specs(problem);
            assert_eq!(spec.ffnn.param_count(), ffnn, "{} ffnn", problem.name());
            assert_eq!(spec.gcn.param_count(), gcn, "{} gcn", problem.name());
            assert_eq!(spec.fusion.param_count(), fusion, "{} fusion", problem.name());
            assert_eq!(spec.param_count(), ffnn + gcn + fusion);
            assert_eq!(spec.layout().count, spec.param_count());
        }
    }

    #[test]
    fn ffnn_zero_params_zero_output() {
        let spec = FfnnSpec {
            input_dim: 2,
            layers: 3,
            hidden: 4,
            output_dim: 1,
        };
        let params = vec![0.0; spec.param_count()];
        let out = ffnn_forward(&spec, &params, &[0.7, -0.2]).unwrap();
        assert_eq!(out, vec![0.0]);
    }

    #[test]
    fn ffnn_two_layer_is_tanh_affine_composition() {
        // L=2: tanh on the hidden layer only, linear output.
        let spec = FfnnSpec {
            input_dim: 1,
            layers: 2,
            hidden: 2,
            output_dim: 1,
        };
        // w0 = [[1], [2]], b0 = [0.1, -0.2], w1 = [[3, 4]], b1 = [0.5]
        let params = vec![1.0, 2.0, 0.1, -0.2, 3.0, 4.0, 0.5];
        let x = 0.3;
        let out = ffnn_forward(&spec, &params, &[x]).unwrap();
        let expect = 3.0 * (x + 0.1).tanh() + 4.0 * (2.0 * x - 0.2).tanh() + 0.5;
        assert!((out[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn ffnn_single_layer_is_affine() {
        let spec = FfnnSpec {
            input_dim: 2,
            layers: 1,
            hidden: 0,
            output_dim: 1,
        };
        let params = vec![2.0, -1.0, 0.25];
        for &(a, b) in &[(0.0, 0.0), (1.0, 2.0), (-0.5, 0.7)] {
            let out = ffnn_forward(&spec, &params, &[a, b]).unwrap();
            assert!((out[0] - (2.0 * a - b + 0.25)).abs() < 1e-15);
        }
    }

    #[test]
    fn ffnn_output_layer_oddness() {
        let spec = FfnnSpec {
            input_dim: 2,
            layers: 3,
            hidden: 5,
            output_dim: 2,
        };
        let layout = spec.layout();
        let mut params = init_params(&layout, 7);
        // Give biases values too so the check is not vacuous.
        for s in &layout.segments {
            if s.is_bias {
                for (j, v) in params[s.offset..s.offset + s.len].iter_mut().enumerate() {
                    *v = 0.01 * (j as f64 + 1.0);
                }
            }
        }
        let out = ffnn_forward(&spec, &params, &[0.4, -0.9]).unwrap();
        let mut negated = params.clone();
        for s in &layout.segments {
            if s.name == "ffnn.w2" || s.name == "ffnn.b2" {
                for v in negated[s.offset..s.offset + s.len].iter_mut() {
                    *v = -*v;
                }
            }
        }
        let out_neg = ffnn_forward(&spec, &negated, &[0.4, -0.9]).unwrap();
        for (a, b) in out.iter().zip(&out_neg) {
            assert!((a + b).abs() < 1e-15);
        }
    }

    #[test]
    fn ffnn_param_length_mismatch_errors() {
        let spec = FfnnSpec {
            input_dim: 2,
            layers: 2,
            hidden: 3,
            output_dim: 1,
        };
        assert!(ffnn_forward(&spec, &[0.0; 5], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn gcn_isolated_node_is_per_node_mlp() {
        let spec = GcnSpec {
            input_dim: 2,
            hidden: 3,
            output_dim: 1,
        };
        let params = init_params(&spec.layout(), 3);
        // Single node, self-loop only: M = [1].
        let prop = CsrMatrix::from_triplets(1, vec![(0, 0, 1.0)]);
        let features = vec![0.3, -0.6];
        let out = gcn_forward(&spec, &params, &features, &prop).unwrap();
        let (agg, diag) = gcn_aggregates(&spec, &params, &features, &prop).unwrap();
        let per_node = gcn_forward_node(&spec, &params, &features, &agg, diag[0]).unwrap();
        assert!((out[0] - per_node[0]).abs() < 1e-15);
        assert_eq!(diag[0], 1.0);
        assert!(agg.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn gcn_regular_ring_symmetry() {
        // Ring of 6 nodes, all identical features: equal degrees, so all
        // outputs coincide.
        let spec = GcnSpec {
            input_dim: 2,
            hidden: 4,
            output_dim: 2,
        };
        let params = init_params(&spec.layout(), 5);
        let n = 6;
        let mut edges = Vec::new();
        for i in 0..n as u32 {
            edges.push((i, (i + 1) % n as u32));
        }
        let prop = normalize_adjacency(&edges, n);
        let features: Vec<f64> = (0..n).flat_map(|_| [0.2, -0.5]).collect();
        let out = gcn_forward(&spec, &params, &features, &prop).unwrap();
        for i in 1..n {
            for c in 0..2 {
                assert!((out[i * 2 + c] - out[c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gcn_matches_dense_reimplementation() {
        // Brute-force dense forward on a small grid graph.
        let spec = GcnSpec {
            input_dim: 2,
            hidden: 5,
            output_dim: 2,
        };
        let params = init_params(&spec.layout(), 11);
        let grid = GridSpec::rect(&[(0.0, 1.0), (0.0, 1.0)], &[4, 4]).unwrap();
        let graph = GraphData::build(grid);
        let n = graph.n();
        let (p, h, m) = (2, 5, 2);
        let (w, b) = gcn_slices(&spec, &params);

        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dense[i * n + j] = graph.propagation.get(i, j);
            }
        }
        let mut h1 = vec![0.0; n * h];
        for i in 0..n {
            for k in 0..h {
                let mut acc = b[0][k] + b[1][k];
                for j in 0..n {
                    let xj = graph.node(j);
                    let wx: f64 = (0..p).map(|c| w[0][k * p + c] * xj[c]).sum();
                    acc += dense[i * n + j] * wx;
                }
                let xi = graph.node(i);
                acc += (0..p).map(|c| w[1][k * p + c] * xi[c]).sum::<f64>();
                h1[i * h + k] = acc.tanh();
            }
        }
        let mut cur = h1;
        for l in 2..5 {
            let mut next = vec![0.0; n * h];
            for i in 0..n {
                for k in 0..h {
                    let mut acc = b[l][k];
                    for q in 0..h {
                        acc += w[l][k * h + q] * cur[i * h + q];
                    }
                    next[i * h + k] = acc.tanh();
                }
            }
            cur = next;
        }
        let mut expect = vec![0.0; n * m];
        for i in 0..n {
            for k in 0..m {
                let mut acc = b[5][k];
                for q in 0..h {
                    acc += w[5][k * h + q] * cur[i * h + q];
                }
                expect[i * m + k] = acc;
            }
        }

        let got = gcn_forward(&spec, &params, &graph.coords, &graph.propagation).unwrap();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gcn_per_node_matches_matrix_form() {
        let spec = GcnSpec {
            input_dim: 2,
            hidden: 6,
            output_dim: 1,
        };
        let params = init_params(&spec.layout(), 17);
        let grid = GridSpec::rect(&[(-1.0, 1.0), (0.0, 1.0)], &[5, 3]).unwrap();
        let graph = GraphData::build(grid);
        let full = gcn_forward(&spec, &params, &graph.coords, &graph.propagation).unwrap();
        let (agg, diag) = gcn_aggregates(&spec, &params, &graph.coords, &graph.propagation).unwrap();
        let h = spec.hidden;
        for i in 0..graph.n() {
            let out = gcn_forward_node(
                &spec,
                &params,
                graph.node(i),
                &agg[i * h..(i + 1) * h],
                diag[i],
            )
            .unwrap();
            assert!((out[0] - full[i]).abs() < 1e-13, "node {}", i);
        }
    }

    #[test]
    fn gcn_locality_one_hop() {
        let spec = GcnSpec {
            input_dim: 2,
            hidden: 4,
            output_dim: 1,
        };
        let params = init_params(&spec.layout(), 23);
        let grid = GridSpec::rect(&[(0.0, 1.0), (0.0, 1.0)], &[4, 3]).unwrap();
        let spec_grid = grid.clone();
        let graph = GraphData::build(grid);
        let base = gcn_forward(&spec, &params, &graph.coords, &graph.propagation).unwrap();
        let edges = build_grid_graph(&spec_grid);
        let perturbed_node = 5;
        let mut features = graph.coords.clone();
        features[perturbed_node * 2] += 0.25;
        let out = gcn_forward(&spec, &params, &features, &graph.propagation).unwrap();
        let mut neighbors = vec![false; graph.n()];
        neighbors[perturbed_node] = true;
        for &(a, b) in &edges {
            if a as usize == perturbed_node {
                neighbors[b as usize] = true;
            }
            if b as usize == perturbed_node {
                neighbors[a as usize] = true;
            }
        }
        for i in 0..graph.n() {
            let changed = (out[i] - base[i]).abs() > 1e-13;
            assert_eq!(changed, neighbors[i], "node {}", i);
        }
    }

    #[test]
    fn fusion_examples() {
        let one = FusionSpec { layers: 1, hidden: 1 };
        let out = fusion_forward(&one, &[1.0, 0.0], &[0.7, -0.3], &[9.0, 9.0]).unwrap();
        assert_eq!(out, vec![0.7, -0.3]);
        let avg = fusion_forward(&one, &[0.5, 0.5], &[2.0], &[4.0]).unwrap();
        assert_eq!(avg, vec![3.0]);

        let two = FusionSpec { layers: 2, hidden: 3 };
        let zeros = vec![0.0; two.param_count()];
        let out = fusion_forward(&two, &zeros, &[5.0], &[-5.0]).unwrap();
        assert_eq!(out, vec![0.0]);
    }

    #[test]
    fn fusion_two_layer_hand_value() {
        let spec = FusionSpec { layers: 2, hidden: 2 };
        // W1 = [[1, 2], [0.5, -1]], W2 = [3, -2]
        let params = vec![1.0, 2.0, 0.5, -1.0, 3.0, -2.0];
        let (f, g) = (0.2, -0.4);
        let out = fusion_forward(&spec, &params, &[f], &[g]).unwrap();
        let expect = 3.0 * (f + 2.0 * g).tanh() - 2.0 * (0.5 * f - g).tanh();
        assert!((out[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn fusion_arity_mismatch_errors() {
        let spec = FusionSpec { layers: 1, hidden: 1 };
        assert!(fusion_forward(&spec, &[1.0, 0.0], &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn init_deterministic_and_biases_zero() {
        for problem in all_problems() {
            let layout = table_specs(problem).layout();
            let a = init_params(&layout, 42);
            let b = init_params(&layout, 42);
            assert_eq!(a, b);
            assert_ne!(a, init_params(&layout, 43));
            for s in &layout.segments {
                if s.is_bias {
                    assert!(a[s.offset..s.offset + s.len].iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn init_variance_near_glorot() {
        // 256×256 node-wise layer of the 1D-Schrödinger graph stream.
        let spec = GcnSpec {
            input_dim: 2,
            hidden: 256,
            output_dim: 2,
        };
        let layout = spec.layout();
        let params = init_params(&layout, 1);
        let s = layout.segments.iter().find(|s| s.name == "gcn.w1").unwrap();
        let slice = &params[s.offset..s.offset + s.len];
        let var = slice.iter().map(|v| v * v).sum::<f64>() / slice.len() as f64;
        let target = 2.0 / (s.fan_in + s.fan_out) as f64;
        assert!((var - target).abs() < 0.2 * target, "var {} target {}", var, target);
    }

    #[test]
    fn params_roundtrip_and_manifest_validation() {
        let dir = tempfile::tempdir().unwrap();
        let spec = table_specs(Problem::Burgers1d);
        let layout = spec.layout();
        let params = init_params(&layout, 9);
        save_params(dir.path(), "model", &layout, &params).unwrap();
        let loaded = load_params(dir.path(), "model", &layout).unwrap();
        assert_eq!(params, loaded);

        let other = table_specs(Problem::Burgers2d).layout();
        assert!(load_params(dir.path(), "model", &other).is_err());
    }

    #[test]
    fn pass_through_only_for_single_layer() {
        assert_eq!(
            FusionSpec { layers: 1, hidden: 1 }.pass_through_params(),
            Some(vec![1.0, 0.0])
        );
        assert_eq!(FusionSpec { layers: 2, hidden: 16 }.pass_through_params(), None);
    }
}
