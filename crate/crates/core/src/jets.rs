//! Hand-rolled derivative propagation for the training hot path.
//!
//! A "jet" carries, per network unit, the value plus the derivative
//! components the physics loss needs: [v, dt, dx, dxx] for two input axes,
//! [v, dt, dx, dxx, dy, dyy] for three. All components flow through the
//! layers together in contiguous arrays, and every layer has a matching
//! reverse pass accumulating parameter gradients. This replaces running the
//! general tape per node, which is far too slow for full training runs. The
//! kernels are cross-checked against the dual-number and tape paths in tests.

use crate::error::{Error, Result};
use crate::models::{FfnnSpec, FusionSpec, GcnSpec};

/// Component count for a problem with `p` input axes (time included).
pub fn ncomp(p: usize) -> usize {
    match p {
        2 => 4,
        3 => 6,
        _ => unreachable!("grids have 2 or 3 axes"),
    }
}

/// Unpaired first-order component indices (time derivative).
const DT: usize = 1;

/// (first, second) component pairs per axis count.
fn pairs(nc: usize) -> &'static [(usize, usize)] {
    match nc {
        4 => &[(2, 3)],
        6 => &[(2, 3), (4, 5)],
        _ => unreachable!(),
    }
}

fn firsts(nc: usize) -> &'static [usize] {
    match nc {
        4 => &[DT, 2],
        6 => &[DT, 2, 4],
        _ => unreachable!(),
    }
}

/// Seed jets for a node's coordinates: spatial axes first, time last, unit
/// first-derivative seeds, zero second-order seeds.
pub fn seed_input(point: &[f64]) -> Vec<f64> {
    let p = point.len();
    let nc = ncomp(p);
    let mut jets = vec![0.0; p * nc];
    for (c, &x) in point.iter().enumerate() {
        jets[c * nc] = x;
        if c == p - 1 {
            jets[c * nc + DT] = 1.0;
        } else if c == 0 {
            jets[c * nc + 2] = 1.0;
        } else {
            jets[c * nc + 4] = 1.0;
        }
    }
    jets
}

/// `out = W·in (+ b on the value component)`; `W` row-major `[out][in]`.
fn dense_forward(w: &[f64], b: Option<&[f64]>, fi: usize, fo: usize, nc: usize, input: &[f64], out: &mut [f64]) {
    for k in 0..fo {
        let wrow = &w[k * fi..(k + 1) * fi];
        let o = &mut out[k * nc..(k + 1) * nc];
        o.fill(0.0);
        for (i, &wi) in wrow.iter().enumerate() {
            let inj = &input[i * nc..(i + 1) * nc];
            for c in 0..nc {
                o[c] += wi * inj[c];
            }
        }
        if let Some(b) = b {
            o[0] += b[k];
        }
    }
}

/// Reverse of [`dense_forward`]: accumulates parameter gradients and, when
/// `adj_in` is given, the input adjoint.
fn dense_backward(
    w: &[f64],
    fi: usize,
    fo: usize,
    nc: usize,
    input: &[f64],
    adj_out: &[f64],
    adj_in: Option<&mut [f64]>,
    grad_w: &mut [f64],
    grad_b: Option<&mut [f64]>,
) {
    for k in 0..fo {
        let ao = &adj_out[k * nc..(k + 1) * nc];
        let grow = &mut grad_w[k * fi..(k + 1) * fi];
        for i in 0..fi {
            let inj = &input[i * nc..(i + 1) * nc];
            let mut acc = 0.0;
            for c in 0..nc {
                acc += ao[c] * inj[c];
            }
            grow[i] += acc;
        }
    }
    if let Some(gb) = grad_b {
        for k in 0..fo {
            gb[k] += adj_out[k * nc];
        }
    }
    if let Some(ai) = adj_in {
        ai.fill(0.0);
        for k in 0..fo {
            let ao = &adj_out[k * nc..(k + 1) * nc];
            let wrow = &w[k * fi..(k + 1) * fi];
            for (i, &wi) in wrow.iter().enumerate() {
                let aij = &mut ai[i * nc..(i + 1) * nc];
                for c in 0..nc {
                    aij[c] += wi * ao[c];
                }
            }
        }
    }
}

/// Exact second-order tanh rule on every unit:
/// `v' = tanh v`, `g' = s·g`, `h' = s·h − 2v's·g²` with `s = 1 − v'²`.
fn tanh_forward(nc: usize, pre: &[f64], post: &mut [f64]) {
    let units = pre.len() / nc;
    for u in 0..units {
        let p = &pre[u * nc..(u + 1) * nc];
        let q = &mut post[u * nc..(u + 1) * nc];
        let tv = p[0].tanh();
        let s = 1.0 - tv * tv;
        q[0] = tv;
        for &i in firsts(nc) {
            q[i] = s * p[i];
        }
        for &(g, h) in pairs(nc) {
            q[h] = s * p[h] - 2.0 * tv * s * p[g] * p[g];
        }
    }
}

/// Adjoint of [`tanh_forward`] (derived from the forward rule):
/// `Ag = s·Ag' − 4v's·g·Ah'` (paired), `Ah = s·Ah'`, and the value adjoint
/// collects the `s`-dependence of every output.
fn tanh_backward(nc: usize, pre: &[f64], post: &[f64], adj_post: &[f64], adj_pre: &mut [f64]) {
    let units = pre.len() / nc;
    for u in 0..units {
        let p = &pre[u * nc..(u + 1) * nc];
        let tv = post[u * nc];
        let a = &adj_post[u * nc..(u + 1) * nc];
        let o = &mut adj_pre[u * nc..(u + 1) * nc];
        let s = 1.0 - tv * tv;
        let mut av = a[0] * s;
        for &i in firsts(nc) {
            av += a[i] * (-2.0 * tv * s * p[i]);
            o[i] = a[i] * s;
        }
        for &(g, h) in pairs(nc) {
            av += a[h] * (-2.0 * tv * s * p[h] - 2.0 * s * (s - 2.0 * tv * tv) * p[g] * p[g]);
            o[g] += a[h] * (-4.0 * tv * s * p[g]);
            o[h] = a[h] * s;
        }
        o[0] = av;
    }
}

/// Per-node buffers reused across evaluations; `pre[l]`/`post[l]` hold the
/// pre-activation and activated jets of layer `l`.
pub struct Workspace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    adj_a: Vec<f64>,
    adj_b: Vec<f64>,
}

impl Workspace {
    fn with_dims(nc: usize, widths: &[usize]) -> Self {
        let max = widths.iter().copied().max().unwrap_or(0);
        Workspace {
            pre: widths.iter().map(|&w| vec![0.0; w * nc]).collect(),
            post: widths.iter().map(|&w| vec![0.0; w * nc]).collect(),
            adj_a: vec![0.0; max * nc],
            adj_b: vec![0.0; max * nc],
        }
    }
}

/// Jet evaluator for the dense stream.
pub struct FfnnJets {
    spec: FfnnSpec,
    dims: Vec<(usize, usize)>,
    nc: usize,
}

impl FfnnJets {
    pub fn new(spec: FfnnSpec) -> Self {
        let dims = spec.layer_dims();
        FfnnJets {
            spec,
            nc: ncomp(spec.input_dim),
            dims,
        }
    }

    pub fn workspace(&self) -> Workspace {
        let widths: Vec<usize> = self.dims.iter().map(|&(_, fo)| fo).collect();
        Workspace::with_dims(self.nc, &widths)
    }

    pub fn nc(&self) -> usize {
        self.nc
    }

    /// Forward pass; output jets (`m·nc`) end up in `ws.post.last()`.
    pub fn forward<'w>(&self, params: &[f64], input: &[f64], ws: &'w mut Workspace) -> Result<&'w [f64]> {
        if params.len() != self.spec.param_count() {
            return Err(Error::Dimension {
                context: "ffnn jet params".into(),
                expected: self.spec.param_count(),
                got: params.len(),
            });
        }
        let nc = self.nc;
        let nl = self.dims.len();
        let mut off = 0;
        for (l, &(fi, fo)) in self.dims.iter().enumerate() {
            let w = &params[off..off + fi * fo];
            let b = &params[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let src = if l == 0 { input } else { &ws.post[l - 1] };
            // Split borrow: pre[l] written from src which never aliases it.
            let pre = std::mem::take(&mut ws.pre[l]);
            let mut pre = pre;
            dense_forward(w, Some(b), fi, fo, nc, src, &mut pre);
            if l + 1 < nl {
                tanh_forward(nc, &pre, &mut ws.post[l]);
            } else {
                ws.post[l].copy_from_slice(&pre);
            }
            ws.pre[l] = pre;
        }
        Ok(&ws.post[nl - 1])
    }

    /// Reverse pass from an output-jet adjoint; call directly after
    /// [`FfnnJets::forward`] on the same workspace. Accumulates into `grad`.
    pub fn backward(&self, params: &[f64], input: &[f64], adj_out: &[f64], ws: &mut Workspace, grad: &mut [f64]) {
        let nc = self.nc;
        let nl = self.dims.len();
        let mut offsets = Vec::with_capacity(nl);
        let mut off = 0;
        for &(fi, fo) in &self.dims {
            offsets.push(off);
            off += fi * fo + fo;
        }
        ws.adj_a[..adj_out.len()].copy_from_slice(adj_out);
        for l in (0..nl).rev() {
            let (fi, fo) = self.dims[l];
            let w = &params[offsets[l]..offsets[l] + fi * fo];
            let (gw, gb) = grad[offsets[l]..offsets[l] + fi * fo + fo].split_at_mut(fi * fo);
            // adj_a currently holds the adjoint of post[l]; convert to the
            // pre-activation adjoint for hidden layers.
            if l + 1 < nl {
                let (adj_post, adj_pre) = (&ws.adj_a, &mut ws.adj_b);
                tanh_backward(nc, &ws.pre[l], &ws.post[l], &adj_post[..fo * nc], &mut adj_pre[..fo * nc]);
                std::mem::swap(&mut ws.adj_a, &mut ws.adj_b);
            }
            let src = if l == 0 { input } else { &ws.post[l - 1] };
            if l == 0 {
                dense_backward(w, fi, fo, nc, src, &ws.adj_a[..fo * nc], None, gw, Some(gb));
            } else {
                let adj_out_slice = std::mem::take(&mut ws.adj_a);
                dense_backward(
                    w,
                    fi,
                    fo,
                    nc,
                    &ws.post[l - 1],
                    &adj_out_slice[..fo * nc],
                    Some(&mut ws.adj_b[..fi * nc]),
                    gw,
                    Some(gb),
                );
                ws.adj_a = adj_out_slice;
                std::mem::swap(&mut ws.adj_a, &mut ws.adj_b);
            }
        }
    }
}

/// Jet evaluator for the graph stream at one node.
///
/// The propagation layer is linear in features, so node i sees its neighbors
/// only through the constant `agg_x = Σ_j M_ij x_j − M_ii x_i` (computable
/// once per graph); derivatives flow through the diagonal weight `M_ii` and
/// the residual projection.
pub struct GcnJets {
    spec: GcnSpec,
    nc: usize,
}

impl GcnJets {
    pub fn new(spec: GcnSpec) -> Self {
        GcnJets {
            spec,
            nc: ncomp(spec.input_dim),
        }
    }

    pub fn nc(&self) -> usize {
        self.nc
    }

    pub fn workspace(&self) -> Workspace {
        let h = self.spec.hidden;
        let m = self.spec.output_dim;
        // Layer 0 additionally stores the effective propagated input jets.
        let widths = [h, h, h, h, m, self.spec.input_dim];
        Workspace::with_dims(self.nc, &widths)
    }

    fn offsets(&self) -> [usize; 12] {
        let (p, h, m) = (self.spec.input_dim, self.spec.hidden, self.spec.output_dim);
        let mut out = [0usize; 12];
        let sizes = [
            p * h, h, p * h, h, h * h, h, h * h, h, h * h, h, h * m, m,
        ];
        let mut off = 0;
        for (i, s) in sizes.iter().enumerate() {
            out[i] = off;
            off += s;
        }
        out
    }

    /// `agg_x` is `Σ_{j≠i} M_ij x_j` (length P); `diag` is `M_ii`.
    pub fn forward<'w>(
        &self,
        params: &[f64],
        input: &[f64],
        agg_x: &[f64],
        diag: f64,
        ws: &'w mut Workspace,
    ) -> Result<&'w [f64]> {
        if params.len() != self.spec.param_count() {
            return Err(Error::Dimension {
                context: "gcn jet params".into(),
                expected: self.spec.param_count(),
                got: params.len(),
            });
        }
        let (p, h, m) = (self.spec.input_dim, self.spec.hidden, self.spec.output_dim);
        let nc = self.nc;
        let o = self.offsets();

        // Effective propagated input jet: diag·J with the constant neighbor
        // sum added on the value component. Stored in pre[5].
        let mut prop_in = std::mem::take(&mut ws.pre[5]);
        for c in 0..p {
            for k in 0..nc {
                prop_in[c * nc + k] = diag * input[c * nc + k];
            }
            prop_in[c * nc] += agg_x[c];
        }

        let mut pre0 = std::mem::take(&mut ws.pre[0]);
        dense_forward(&params[o[0]..o[0] + p * h], Some(&params[o[1]..o[1] + h]), p, h, nc, &prop_in, &mut pre0);
        // Residual projection added in place.
        {
            let wr = &params[o[2]..o[2] + p * h];
            let br = &params[o[3]..o[3] + h];
            for k in 0..h {
                let dst = &mut pre0[k * nc..(k + 1) * nc];
                for (i, &wi) in wr[k * p..(k + 1) * p].iter().enumerate() {
                    for c in 0..nc {
                        dst[c] += wi * input[i * nc + c];
                    }
                }
                dst[0] += br[k];
            }
        }
        tanh_forward(nc, &pre0, &mut ws.post[0]);
        ws.pre[0] = pre0;
        ws.pre[5] = prop_in;

        for l in 1..4 {
            let w = &params[o[2 + 2 * l]..o[2 + 2 * l] + h * h];
            let b = &params[o[3 + 2 * l]..o[3 + 2 * l] + h];
            let mut pre = std::mem::take(&mut ws.pre[l]);
            dense_forward(w, Some(b), h, h, nc, &ws.post[l - 1], &mut pre);
            tanh_forward(nc, &pre, &mut ws.post[l]);
            ws.pre[l] = pre;
        }

        let mut pre = std::mem::take(&mut ws.pre[4]);
        dense_forward(&params[o[10]..o[10] + h * m], Some(&params[o[11]..o[11] + m]), h, m, nc, &ws.post[3], &mut pre);
        ws.post[4].copy_from_slice(&pre);
        ws.pre[4] = pre;
        Ok(&ws.post[4])
    }

    /// Reverse pass; accumulates into `grad` (same layout as `params`).
    pub fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        adj_out: &[f64],
        ws: &mut Workspace,
        grad: &mut [f64],
    ) {
        let (p, h, m) = (self.spec.input_dim, self.spec.hidden, self.spec.output_dim);
        let nc = self.nc;
        let o = self.offsets();

        // Output layer.
        {
            let w = &params[o[10]..o[10] + h * m];
            let (gw, rest) = grad[o[10]..].split_at_mut(h * m);
            let gb = &mut rest[..m];
            dense_backward(
                w,
                h,
                m,
                nc,
                &ws.post[3],
                adj_out,
                Some(&mut ws.adj_a[..h * nc]),
                gw,
                Some(gb),
            );
        }

        for l in (1..4).rev() {
            let w = &params[o[2 + 2 * l]..o[2 + 2 * l] + h * h];
            tanh_backward(nc, &ws.pre[l], &ws.post[l], &ws.adj_a[..h * nc], &mut ws.adj_b[..h * nc]);
            std::mem::swap(&mut ws.adj_a, &mut ws.adj_b);
            let (gw, rest) = grad[o[2 + 2 * l]..].split_at_mut(h * h);
            let gb = &mut rest[..h];
            let adj = std::mem::take(&mut ws.adj_a);
            dense_backward(
                w,
                h,
                h,
                nc,
                &ws.post[l - 1],
                &adj[..h * nc],
                Some(&mut ws.adj_b[..h * nc]),
                gw,
                Some(gb),
            );
            ws.adj_a = adj;
            std::mem::swap(&mut ws.adj_a, &mut ws.adj_b);
        }

        // Layer 1: tanh, then both projections.
        tanh_backward(nc, &ws.pre[0], &ws.post[0], &ws.adj_a[..h * nc], &mut ws.adj_b[..h * nc]);
        let adj_pre = &ws.adj_b[..h * nc];
        {
            let (gw, rest) = grad[o[0]..].split_at_mut(p * h);
            let gb = &mut rest[..h];
            dense_backward(&params[o[0]..o[0] + p * h], p, h, nc, &ws.pre[5], adj_pre, None, gw, Some(gb));
        }
        {
            let (gw, rest) = grad[o[2]..].split_at_mut(p * h);
            let gb = &mut rest[..h];
            dense_backward(&params[o[2]..o[2] + p * h], p, h, nc, input, adj_pre, None, gw, Some(gb));
        }
    }
}

/// Jet evaluator for the fusion head: inputs are the per-component output
/// jets of the two streams.
pub struct FusionJets {
    spec: FusionSpec,
    nc: usize,
}

impl FusionJets {
    pub fn new(spec: FusionSpec, p: usize) -> Self {
        FusionJets { spec, nc: ncomp(p) }
    }

    pub fn nc(&self) -> usize {
        self.nc
    }

    /// Fuses one component's stream jets (`jf`, `jg`, each length nc) into
    /// `out`; `hidden_pre`/`hidden_post` scratch must hold `hidden·nc` for
    /// the two-layer head (unused otherwise).
    pub fn forward(
        &self,
        params: &[f64],
        jf: &[f64],
        jg: &[f64],
        hidden_pre: &mut [f64],
        hidden_post: &mut [f64],
        out: &mut [f64],
    ) {
        let nc = self.nc;
        if self.spec.layers == 1 {
            for c in 0..nc {
                out[c] = params[0] * jf[c] + params[1] * jg[c];
            }
            return;
        }
        let w = self.spec.hidden;
        for k in 0..w {
            for c in 0..nc {
                hidden_pre[k * nc + c] = params[2 * k] * jf[c] + params[2 * k + 1] * jg[c];
            }
        }
        tanh_forward(nc, &hidden_pre[..w * nc], &mut hidden_post[..w * nc]);
        out.fill(0.0);
        for k in 0..w {
            for c in 0..nc {
                out[c] += params[2 * w + k] * hidden_post[k * nc + c];
            }
        }
    }

    /// Reverse pass matching [`FusionJets::forward`]; accumulates parameter
    /// gradients only (streams are frozen during fusion training).
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &[f64],
        jf: &[f64],
        jg: &[f64],
        hidden_pre: &[f64],
        hidden_post: &[f64],
        adj_out: &[f64],
        adj_hidden: &mut [f64],
        grad: &mut [f64],
    ) {
        let nc = self.nc;
        if self.spec.layers == 1 {
            for c in 0..nc {
                grad[0] += adj_out[c] * jf[c];
                grad[1] += adj_out[c] * jg[c];
            }
            return;
        }
        let w = self.spec.hidden;
        // Output weights, then adjoint of the hidden activations.
        let mut adj_post = vec![0.0; w * nc];
        for k in 0..w {
            for c in 0..nc {
                grad[2 * w + k] += adj_out[c] * hidden_post[k * nc + c];
                adj_post[k * nc + c] = params[2 * w + k] * adj_out[c];
            }
        }
        tanh_backward(nc, &hidden_pre[..w * nc], &hidden_post[..w * nc], &adj_post, &mut adj_hidden[..w * nc]);
        for k in 0..w {
            for c in 0..nc {
                grad[2 * k] += adj_hidden[k * nc + c] * jf[c];
                grad[2 * k + 1] += adj_hidden[k * nc + c] * jg[c];
            }
        }
    }
}
