//! Physics-loss assembly and the two-phase training pipeline.
//!
//! The loss is `MSE_D + MSE_BI`: the mean squared PDE residual over train
//! interior nodes plus the mean squared initial/boundary condition violation.
//! A Dirichlet node is one condition term (components summed); a periodic
//! pair contributes a value-match term and an x-derivative-match term, and
//! enters training only when both endpoints are train nodes.
//!
//! Evaluation parallelizes over a fixed 64-band partition of the term list
//! with ordered reduction, so results are bit-identical at any thread count.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::GraphData;
use crate::jets::{ncomp, seed_input, FfnnJets, FusionJets, GcnJets, Workspace};
use crate::lbfgs::{lbfgs_minimize_cb, LbfgsConfig, LbfgsResult};
use crate::models::{
    init_params, save_params, FfnnSpec, GcnSpec, Layout, TwoStreamSpec,
};
use crate::problems::{condition_data, CompDerivs, ConditionTerm, DerivativeBundle, Problem};

pub const BANDS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ffnn,
    Gcn,
    GcnFfnn,
}

impl ModelKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "ffnn" => Ok(ModelKind::Ffnn),
            "gcn" => Ok(ModelKind::Gcn),
            "gcn-ffnn" => Ok(ModelKind::GcnFfnn),
            _ => Err(Error::Config(format!(
                "unknown model '{}'; valid: ffnn, gcn, gcn-ffnn",
                name
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Ffnn => "ffnn",
            ModelKind::Gcn => "gcn",
            ModelKind::GcnFfnn => "gcn-ffnn",
        }
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub mse_d: f64,
    pub mse_bi: f64,
    pub total: f64,
}

impl LossReport {
    pub fn from_sums(d_sum: f64, n_d: usize, bi_sum: f64, n_bi: usize) -> Self {
        let mse_d = d_sum / n_d as f64;
        let mse_bi = bi_sum / n_bi as f64;
        LossReport {
            mse_d,
            mse_bi,
            total: mse_d + mse_bi,
        }
    }
}

/// Graph constants the GCN stream needs per node: the raw feature
/// aggregates `Σ_{j≠i} M_ij x_j` (row-major N×P) and the diagonal weights
/// `M_ii` of the normalized propagation matrix.
pub fn gcn_constants(graph: &GraphData) -> (Vec<f64>, Vec<f64>) {
    let p = graph.spec.p();
    let mut agg_x = vec![0.0; graph.n() * p];
    let mut diag = vec![0.0; graph.n()];
    for i in 0..graph.n() {
        let (cols, vals) = graph.propagation.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            let j = j as usize;
            if j == i {
                diag[i] = v;
            } else {
                for c in 0..p {
                    agg_x[i * p + c] += v * graph.coords[j * p + c];
                }
            }
        }
    }
    (agg_x, diag)
}

/// One loss term over specific nodes.
#[derive(Clone, Debug)]
enum Term {
    Interior(usize),
    Dirichlet { node: usize, target: Vec<f64> },
    Pair { a: usize, b: usize },
}

/// Precomputed training data for one problem/graph/split: term list, GCN
/// propagation constants and normalization counts.
pub struct TrainSetup {
    pub problem: Problem,
    terms: Vec<Term>,
    pub n_interior: usize,
    pub n_bi_terms: usize,
    /// Per node: `Σ_{j≠i} M_ij x_j`, row-major N×P.
    pub agg_x: Vec<f64>,
    /// Per node: `M_ii`.
    pub diag: Vec<f64>,
}

impl TrainSetup {
    pub fn new(problem: Problem, graph: &GraphData) -> Result<Self> {
        let masks = &graph.masks;
        let mut terms = Vec::new();
        let mut n_interior = 0;
        for node in 0..graph.n() {
            if masks.interior[node] && masks.train[node] {
                terms.push(Term::Interior(node));
                n_interior += 1;
            }
        }
        if n_interior == 0 {
            return Err(Error::Empty("no interior training nodes".into()));
        }
        let conditions = condition_data(problem, &graph.spec, &masks.initial, &masks.boundary)?;
        let mut n_bi_terms = 0;
        for term in conditions {
            match term {
                ConditionTerm::Dirichlet { node, target } => {
                    if masks.train[node] {
                        terms.push(Term::Dirichlet { node, target });
                        n_bi_terms += 1;
                    }
                }
                ConditionTerm::PeriodicPair { node_a, node_b } => {
                    if masks.train[node_a] && masks.train[node_b] {
                        terms.push(Term::Pair {
                            a: node_a,
                            b: node_b,
                        });
                        n_bi_terms += 2; // value match + derivative match
                    }
                }
            }
        }
        if n_bi_terms == 0 {
            return Err(Error::Empty("no condition training terms".into()));
        }

        let (agg_x, diag) = gcn_constants(graph);

        Ok(TrainSetup {
            problem,
            terms,
            n_interior,
            n_bi_terms,
            agg_x,
            diag,
        })
    }

    /// Nodes touched by any term, each once, in term order.
    fn term_nodes(&self) -> Vec<usize> {
        let mut seen = std::collections::HashSet::new();
        let mut nodes = Vec::new();
        for t in &self.terms {
            let push = |n: usize, seen: &mut std::collections::HashSet<usize>, v: &mut Vec<usize>| {
                if seen.insert(n) {
                    v.push(n);
                }
            };
            match t {
                Term::Interior(n) => push(*n, &mut seen, &mut nodes),
                Term::Dirichlet { node, .. } => push(*node, &mut seen, &mut nodes),
                Term::Pair { a, b } => {
                    push(*a, &mut seen, &mut nodes);
                    push(*b, &mut seen, &mut nodes);
                }
            }
        }
        nodes
    }
}

fn bundle_from_jets(jets: &[f64], m: usize, nc: usize) -> DerivativeBundle {
    let mut comps = Vec::with_capacity(m);
    for c in 0..m {
        let j = &jets[c * nc..(c + 1) * nc];
        comps.push(CompDerivs {
            value: j[0],
            dt: j[1],
            dx: j[2],
            dxx: j[3],
            dy: if nc == 6 { j[4] } else { 0.0 },
            dyy: if nc == 6 { j[5] } else { 0.0 },
        });
    }
    DerivativeBundle { comps }
}

fn seed_from_adjoint(adj: &DerivativeBundle, nc: usize) -> Vec<f64> {
    let m = adj.comps.len();
    let mut seed = vec![0.0; m * nc];
    for (c, a) in adj.comps.iter().enumerate() {
        let s = &mut seed[c * nc..(c + 1) * nc];
        s[0] = a.value;
        s[1] = a.dt;
        s[2] = a.dx;
        s[3] = a.dxx;
        if nc == 6 {
            s[4] = a.dy;
            s[5] = a.dyy;
        }
    }
    seed
}

/// Abstracts one forward/backward node evaluation for a given model.
trait NodeModel: Sync {
    fn m(&self) -> usize;
    fn nc(&self) -> usize;
    fn param_len(&self) -> usize;
    fn make_scratch(&self) -> Scratch;
    /// Writes the node's output jets (m·nc) into `out`.
    fn forward(&self, params: &[f64], node: usize, scratch: &mut Scratch, out: &mut [f64]) -> Result<()>;
    /// Reverse pass for the node most recently forwarded on this scratch.
    fn backward(&self, params: &[f64], node: usize, seed: &[f64], scratch: &mut Scratch, grad: &mut [f64]);
}

/// Per-band mutable state; one per worker band, never shared.
pub struct Scratch {
    ws: Option<Workspace>,
    hidden_pre: Vec<f64>,
    hidden_post: Vec<f64>,
    adj_hidden: Vec<f64>,
}

struct FfnnModel<'a> {
    net: FfnnJets,
    spec: FfnnSpec,
    graph: &'a GraphData,
}

impl NodeModel for FfnnModel<'_> {
    fn m(&self) -> usize {
        self.spec.output_dim
    }
    fn nc(&self) -> usize {
        self.net.nc()
    }
    fn param_len(&self) -> usize {
        self.spec.param_count()
    }
    fn make_scratch(&self) -> Scratch {
        Scratch {
            ws: Some(self.net.workspace()),
            hidden_pre: Vec::new(),
            hidden_post: Vec::new(),
            adj_hidden: Vec::new(),
        }
    }
    fn forward(&self, params: &[f64], node: usize, scratch: &mut Scratch, out: &mut [f64]) -> Result<()> {
        let input = seed_input(self.graph.node(node));
        let ws = scratch.ws.as_mut().unwrap();
        let jets = self.net.forward(params, &input, ws)?;
        out.copy_from_slice(jets);
        Ok(())
    }
    fn backward(&self, params: &[f64], node: usize, seed: &[f64], scratch: &mut Scratch, grad: &mut [f64]) {
        let input = seed_input(self.graph.node(node));
        let ws = scratch.ws.as_mut().unwrap();
        self.net.backward(params, &input, seed, ws, grad);
    }
}

struct GcnModel<'a> {
    net: GcnJets,
    spec: GcnSpec,
    graph: &'a GraphData,
    setup: &'a TrainSetup,
}

impl NodeModel for GcnModel<'_> {
    fn m(&self) -> usize {
        self.spec.output_dim
    }
    fn nc(&self) -> usize {
        self.net.nc()
    }
    fn param_len(&self) -> usize {
        self.spec.param_count()
    }
    fn make_scratch(&self) -> Scratch {
        Scratch {
            ws: Some(self.net.workspace()),
            hidden_pre: Vec::new(),
            hidden_post: Vec::new(),
            adj_hidden: Vec::new(),
        }
    }
    fn forward(&self, params: &[f64], node: usize, scratch: &mut Scratch, out: &mut [f64]) -> Result<()> {
        let p = self.spec.input_dim;
        let input = seed_input(self.graph.node(node));
        let agg = &self.setup.agg_x[node * p..(node + 1) * p];
        let ws = scratch.ws.as_mut().unwrap();
        let jets = self.net.forward(params, &input, agg, self.setup.diag[node], ws)?;
        out.copy_from_slice(jets);
        Ok(())
    }
    fn backward(&self, params: &[f64], node: usize, seed: &[f64], scratch: &mut Scratch, grad: &mut [f64]) {
        let input = seed_input(self.graph.node(node));
        let ws = scratch.ws.as_mut().unwrap();
        self.net.backward(params, &input, seed, ws, grad);
    }
}

/// Fusion head over frozen stream jets: the stream jets at every term node
/// are constants precomputed once per phase.
pub struct FrozenStreams {
    /// node -> slot in the jet arrays, usize::MAX when absent.
    slot: Vec<usize>,
    jf: Vec<f64>,
    jg: Vec<f64>,
    m: usize,
    nc: usize,
}

impl FrozenStreams {
    pub fn new(
        graph: &GraphData,
        setup: &TrainSetup,
        specs: &TwoStreamSpec,
        ffnn_params: &[f64],
        gcn_params: &[f64],
    ) -> Result<Self> {
        let nodes = setup.term_nodes();
        let m = specs.ffnn.output_dim;
        let nc = ncomp(specs.ffnn.input_dim);
        let mut slot = vec![usize::MAX; graph.n()];
        let mut jf = vec![0.0; nodes.len() * m * nc];
        let mut jg = vec![0.0; nodes.len() * m * nc];
        let fnet = FfnnJets::new(specs.ffnn);
        let gnet = GcnJets::new(specs.gcn);
        let mut fws = fnet.workspace();
        let mut gws = gnet.workspace();
        let p = specs.ffnn.input_dim;
        for (s, &node) in nodes.iter().enumerate() {
            slot[node] = s;
            let input = seed_input(graph.node(node));
            let out = fnet.forward(ffnn_params, &input, &mut fws)?;
            jf[s * m * nc..(s + 1) * m * nc].copy_from_slice(out);
            let agg = &setup.agg_x[node * p..(node + 1) * p];
            let out = gnet.forward(gcn_params, &input, agg, setup.diag[node], &mut gws)?;
            jg[s * m * nc..(s + 1) * m * nc].copy_from_slice(out);
        }
        Ok(FrozenStreams { slot, jf, jg, m, nc })
    }
}

struct FusionModel<'a> {
    head: FusionJets,
    spec: crate::models::FusionSpec,
    frozen: &'a FrozenStreams,
}

impl NodeModel for FusionModel<'_> {
    fn m(&self) -> usize {
        self.frozen.m
    }
    fn nc(&self) -> usize {
        self.frozen.nc
    }
    fn param_len(&self) -> usize {
        self.spec.param_count()
    }
    fn make_scratch(&self) -> Scratch {
        let cap = self.spec.hidden * self.frozen.nc * self.frozen.m;
        Scratch {
            ws: None,
            hidden_pre: vec![0.0; cap.max(1)],
            hidden_post: vec![0.0; cap.max(1)],
            adj_hidden: vec![0.0; cap.max(1)],
        }
    }
    fn forward(&self, params: &[f64], node: usize, scratch: &mut Scratch, out: &mut [f64]) -> Result<()> {
        let (m, nc) = (self.frozen.m, self.frozen.nc);
        let s = self.frozen.slot[node];
        if s == usize::MAX {
            return Err(Error::Empty(format!("node {} has no frozen stream jets", node)));
        }
        let hw = self.spec.hidden * nc;
        for c in 0..m {
            let jf = &self.frozen.jf[(s * m + c) * nc..(s * m + c + 1) * nc];
            let jg = &self.frozen.jg[(s * m + c) * nc..(s * m + c + 1) * nc];
            self.head.forward(
                params,
                jf,
                jg,
                &mut scratch.hidden_pre[c * hw.max(1)..],
                &mut scratch.hidden_post[c * hw.max(1)..],
                &mut out[c * nc..(c + 1) * nc],
            );
        }
        Ok(())
    }
    fn backward(&self, params: &[f64], node: usize, seed: &[f64], scratch: &mut Scratch, grad: &mut [f64]) {
        let (m, nc) = (self.frozen.m, self.frozen.nc);
        let s = self.frozen.slot[node];
        let hw = self.spec.hidden * nc;
        for c in 0..m {
            let jf = &self.frozen.jf[(s * m + c) * nc..(s * m + c + 1) * nc];
            let jg = &self.frozen.jg[(s * m + c) * nc..(s * m + c + 1) * nc];
            self.head.backward(
                params,
                jf,
                jg,
                &scratch.hidden_pre[c * hw.max(1)..],
                &scratch.hidden_post[c * hw.max(1)..],
                &seed[c * nc..(c + 1) * nc],
                &mut scratch.adj_hidden,
                grad,
            );
        }
    }
}

/// Evaluates the physics loss (and optionally its gradient) over the term
/// list, banded for deterministic parallel reduction.
fn run_terms<M: NodeModel>(
    model: &M,
    setup: &TrainSetup,
    graph: &GraphData,
    params: &[f64],
    want_grad: bool,
) -> Result<(LossReport, Option<Vec<f64>>)> {
    let terms = &setup.terms;
    let nbands = BANDS.min(terms.len());
    let chunk = terms.len().div_ceil(nbands);
    let m = model.m();
    let nc = model.nc();
    let inv_d = 1.0 / setup.n_interior as f64;
    let inv_bi = 1.0 / setup.n_bi_terms as f64;

    let band_results: Vec<Result<(f64, f64, Option<Vec<f64>>)>> = (0..nbands)
        .into_par_iter()
        .map(|band| {
            let lo = (band * chunk).min(terms.len());
            let hi = ((band + 1) * chunk).min(terms.len());
            let mut scratch = model.make_scratch();
            let mut scratch_b = model.make_scratch();
            let mut grad = want_grad.then(|| vec![0.0; model.param_len()]);
            let mut jets = vec![0.0; m * nc];
            let mut jets_b = vec![0.0; m * nc];
            let mut d_sum = 0.0;
            let mut bi_sum = 0.0;
            for t in &terms[lo..hi] {
                match t {
                    Term::Interior(node) => {
                        model.forward(params, *node, &mut scratch, &mut jets)?;
                        let bundle = bundle_from_jets(&jets, m, nc);
                        let point = graph.node(*node);
                        let r = setup.problem.residual(&bundle, point);
                        d_sum += r.iter().map(|v| v * v).sum::<f64>();
                        if let Some(grad) = grad.as_deref_mut() {
                            let rbar: Vec<f64> = r.iter().map(|v| 2.0 * v * inv_d).collect();
                            let adj = setup.problem.residual_adjoint(&bundle, point, &rbar);
                            let seed = seed_from_adjoint(&adj, nc);
                            model.backward(params, *node, &seed, &mut scratch, grad);
                        }
                    }
                    Term::Dirichlet { node, target } => {
                        model.forward(params, *node, &mut scratch, &mut jets)?;
                        let mut seed = vec![0.0; m * nc];
                        for c in 0..m {
                            let e = jets[c * nc] - target[c];
                            bi_sum += e * e;
                            seed[c * nc] = 2.0 * e * inv_bi;
                        }
                        if let Some(grad) = grad.as_deref_mut() {
                            model.backward(params, *node, &seed, &mut scratch, grad);
                        }
                    }
                    Term::Pair { a, b } => {
                        model.forward(params, *a, &mut scratch, &mut jets)?;
                        model.forward(params, *b, &mut scratch_b, &mut jets_b)?;
                        let mut seed_a = vec![0.0; m * nc];
                        let mut seed_b = vec![0.0; m * nc];
                        for c in 0..m {
                            let ev = jets[c * nc] - jets_b[c * nc];
                            let ed = jets[c * nc + 2] - jets_b[c * nc + 2];
                            bi_sum += ev * ev + ed * ed;
                            seed_a[c * nc] = 2.0 * ev * inv_bi;
                            seed_b[c * nc] = -2.0 * ev * inv_bi;
                            seed_a[c * nc + 2] = 2.0 * ed * inv_bi;
                            seed_b[c * nc + 2] = -2.0 * ed * inv_bi;
                        }
                        if let Some(grad) = grad.as_deref_mut() {
                            model.backward(params, *a, &seed_a, &mut scratch, grad);
                            model.backward(params, *b, &seed_b, &mut scratch_b, grad);
                        }
                    }
                }
            }
            Ok((d_sum, bi_sum, grad))
        })
        .collect();

    // Ordered reduction: band order is fixed, so sums are reproducible.
    let mut d_sum = 0.0;
    let mut bi_sum = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; model.param_len()]);
    for r in band_results {
        let (d, bi, g) = r?;
        d_sum += d;
        bi_sum += bi;
        if let (Some(total), Some(part)) = (grad.as_deref_mut(), g) {
            for (t, p) in total.iter_mut().zip(&part) {
                *t += p;
            }
        }
    }
    let report = LossReport::from_sums(d_sum, setup.n_interior, bi_sum, setup.n_bi_terms);
    if !report.total.is_finite() {
        // Leave handling to the optimizer's line search; still report.
    }
    Ok((report, grad))
}

/// Loss evaluator for one stream.
pub struct StreamEval<'a> {
    setup: &'a TrainSetup,
    graph: &'a GraphData,
    model: StreamModel<'a>,
}

enum StreamModel<'a> {
    Ffnn(FfnnModel<'a>),
    Gcn(GcnModel<'a>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    Ffnn,
    Gcn,
}

impl<'a> StreamEval<'a> {
    pub fn new(
        setup: &'a TrainSetup,
        graph: &'a GraphData,
        kind: StreamKind,
        specs: &TwoStreamSpec,
    ) -> Self {
        let model = match kind {
            StreamKind::Ffnn => StreamModel::Ffnn(FfnnModel {
                net: FfnnJets::new(specs.ffnn),
                spec: specs.ffnn,
                graph,
            }),
            StreamKind::Gcn => StreamModel::Gcn(GcnModel {
                net: GcnJets::new(specs.gcn),
                spec: specs.gcn,
                graph,
                setup,
            }),
        };
        StreamEval { setup, graph, model }
    }

    pub fn loss(&self, params: &[f64]) -> Result<LossReport> {
        self.eval(params, false).map(|(r, _)| r)
    }

    pub fn loss_grad(&self, params: &[f64]) -> Result<(LossReport, Vec<f64>)> {
        self.eval(params, true).map(|(r, g)| (r, g.unwrap()))
    }

    fn eval(&self, params: &[f64], want_grad: bool) -> Result<(LossReport, Option<Vec<f64>>)> {
        match &self.model {
            StreamModel::Ffnn(m) => run_terms(m, self.setup, self.graph, params, want_grad),
            StreamModel::Gcn(m) => run_terms(m, self.setup, self.graph, params, want_grad),
        }
    }
}

/// Loss evaluator for the fusion head over frozen streams.
pub struct FusionEval<'a> {
    setup: &'a TrainSetup,
    graph: &'a GraphData,
    model: FusionModel<'a>,
}

impl<'a> FusionEval<'a> {
    pub fn new(
        setup: &'a TrainSetup,
        graph: &'a GraphData,
        specs: &TwoStreamSpec,
        frozen: &'a FrozenStreams,
    ) -> Self {
        FusionEval {
            setup,
            graph,
            model: FusionModel {
                head: FusionJets::new(specs.fusion, specs.ffnn.input_dim),
                spec: specs.fusion,
                frozen,
            },
        }
    }

    pub fn loss(&self, params: &[f64]) -> Result<LossReport> {
        run_terms(&self.model, self.setup, self.graph, params, false).map(|(r, _)| r)
    }

    pub fn loss_grad(&self, params: &[f64]) -> Result<(LossReport, Vec<f64>)> {
        run_terms(&self.model, self.setup, self.graph, params, true).map(|(r, g)| (r, g.unwrap()))
    }
}

/// The physics loss of any model kind on the graph's current train split.
/// For `gcn-ffnn`, `params` is the full two-stream vector.
pub fn assemble_loss(
    problem: Problem,
    graph: &GraphData,
    kind: ModelKind,
    specs: &TwoStreamSpec,
    params: &[f64],
) -> Result<LossReport> {
    let setup = TrainSetup::new(problem, graph)?;
    match kind {
        ModelKind::Ffnn => StreamEval::new(&setup, graph, StreamKind::Ffnn, specs).loss(params),
        ModelKind::Gcn => StreamEval::new(&setup, graph, StreamKind::Gcn, specs).loss(params),
        ModelKind::GcnFfnn => {
            if params.len() != specs.param_count() {
                return Err(Error::Dimension {
                    context: "two-stream params".into(),
                    expected: specs.param_count(),
                    got: params.len(),
                });
            }
            let frozen = FrozenStreams::new(
                graph,
                &setup,
                specs,
                &params[specs.ffnn_range()],
                &params[specs.gcn_range()],
            )?;
            FusionEval::new(&setup, graph, specs, &frozen).loss(&params[specs.fusion_range()])
        }
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct TracePoint {
    pub iter: usize,
    pub mse_d: f64,
    pub mse_bi: f64,
    pub total: f64,
}

/// Outcome of one optimization phase.
pub struct PhaseRun {
    pub params: Vec<f64>,
    pub trace: Vec<TracePoint>,
    pub line_search_failed: bool,
    pub iterations: usize,
    pub final_loss: f64,
}

#[derive(Clone, Debug)]
pub struct CheckpointCfg {
    pub dir: PathBuf,
    pub stem: String,
    pub every: usize,
}

/// Builds the per-iteration trace by matching optimizer losses to the split
/// reports recorded during objective calls (keyed by exact loss bits).
fn build_trace(trace: &[f64], reports: &HashMap<u64, (f64, f64)>) -> Vec<TracePoint> {
    trace
        .iter()
        .enumerate()
        .map(|(iter, &total)| {
            let (mse_d, mse_bi) = reports
                .get(&total.to_bits())
                .copied()
                .unwrap_or((f64::NAN, f64::NAN));
            TracePoint {
                iter,
                mse_d,
                mse_bi,
                total,
            }
        })
        .collect()
}

pub fn write_trace(path: &Path, trace: &[TracePoint]) -> Result<()> {
    let text = serde_json::to_string_pretty(trace)
        .map_err(|e| Error::Checkpoint(format!("trace encode: {}", e)))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn optimize<F>(
    objective: F,
    x0: &[f64],
    cfg: &LbfgsConfig,
    layout: &Layout,
    checkpoint: Option<&CheckpointCfg>,
    reports: &std::cell::RefCell<HashMap<u64, (f64, f64)>>,
) -> Result<PhaseRun>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let res: LbfgsResult = lbfgs_minimize_cb(objective, x0, cfg, |iter, x, _loss| {
        if let Some(ck) = checkpoint {
            if iter % ck.every == 0 {
                // Checkpoint failures must not abort training.
                let _ = save_params(&ck.dir, &format!("{}.iter{}", ck.stem, iter), layout, x);
            }
        }
    })?;
    let trace = build_trace(&res.trace, &reports.borrow());
    Ok(PhaseRun {
        params: res.x,
        trace,
        line_search_failed: res.line_search_failed,
        iterations: res.iterations,
        final_loss: res.loss,
    })
}

/// Trains one stream from its seeded initialization.
pub fn train_stream(
    problem: Problem,
    graph: &GraphData,
    kind: StreamKind,
    specs: &TwoStreamSpec,
    cfg: &LbfgsConfig,
    seed: u64,
    checkpoint: Option<&CheckpointCfg>,
) -> Result<PhaseRun> {
    let setup = TrainSetup::new(problem, graph)?;
    let eval = StreamEval::new(&setup, graph, kind, specs);
    let layout = match kind {
        StreamKind::Ffnn => specs.ffnn.layout(),
        StreamKind::Gcn => specs.gcn.layout(),
    };
    let x0 = init_params(&layout, seed);
    let reports = std::cell::RefCell::new(HashMap::new());
    let objective = |p: &[f64]| {
        let (report, grad) = eval.loss_grad(p)?;
        reports
            .borrow_mut()
            .insert(report.total.to_bits(), (report.mse_d, report.mse_bi));
        Ok((report.total, grad))
    };
    optimize(objective, &x0, cfg, &layout, checkpoint, &reports)
}

pub struct TwoPhaseRun {
    /// Full two-stream parameter vector (ffnn | gcn | fusion).
    pub params: Vec<f64>,
    pub ffnn: PhaseRun,
    pub gcn: PhaseRun,
    pub fusion: PhaseRun,
}

/// Phase 1 trains both streams separately (seeds `seed` and `seed+1`);
/// phase 2 freezes them and trains the fusion head (seed `seed+2`, or the
/// explicit `fusion_init` weights).
pub fn train_two_phase(
    problem: Problem,
    graph: &GraphData,
    specs: &TwoStreamSpec,
    cfg: &LbfgsConfig,
    seed: u64,
    fusion_init: Option<Vec<f64>>,
    checkpoint: Option<&CheckpointCfg>,
) -> Result<TwoPhaseRun> {
    let ffnn = train_stream(problem, graph, StreamKind::Ffnn, specs, cfg, seed, checkpoint)?;
    let gcn = train_stream(
        problem,
        graph,
        StreamKind::Gcn,
        specs,
        cfg,
        seed.wrapping_add(1),
        checkpoint,
    )?;

    let setup = TrainSetup::new(problem, graph)?;
    let frozen = FrozenStreams::new(graph, &setup, specs, &ffnn.params, &gcn.params)?;
    let eval = FusionEval::new(&setup, graph, specs, &frozen);
    let layout = specs.fusion.layout();
    let x0 = match fusion_init {
        Some(v) => {
            if v.len() != specs.fusion.param_count() {
                return Err(Error::Dimension {
                    context: "fusion init".into(),
                    expected: specs.fusion.param_count(),
                    got: v.len(),
                });
            }
            v
        }
        None => init_params(&layout, seed.wrapping_add(2)),
    };
    let reports = std::cell::RefCell::new(HashMap::new());
    let objective = |p: &[f64]| {
        let (report, grad) = eval.loss_grad(p)?;
        reports
            .borrow_mut()
            .insert(report.total.to_bits(), (report.mse_d, report.mse_bi));
        Ok((report.total, grad))
    };
    let fusion = optimize(objective, &x0, cfg, &layout, checkpoint, &reports)?;

    let mut params = Vec::with_capacity(specs.param_count());
    params.extend_from_slice(&ffnn.params);
    params.extend_from_slice(&gcn.params);
    params.extend_from_slice(&fusion.params);
    Ok(TwoPhaseRun {
        params,
        ffnn,
        gcn,
        fusion,
    })
}
