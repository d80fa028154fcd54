//! Test-set scoring against reference solutions and result artifacts.
//!
//! Errors are `e_i = u_pred - u_true` over test nodes; `mse_test` is the mean
//! squared error and `l_inf` the largest absolute error. Two-component
//! problems pool both components into one error sequence and also report a
//! per-component breakdown.

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::GraphData;
use crate::jets::{ncomp, seed_input, FfnnJets, FusionJets, GcnJets};
use crate::models::TwoStreamSpec;
use crate::oracle::ReferenceField;
use crate::problems::{CompDerivs, DerivativeBundle, Problem};
use crate::train::{gcn_constants, ModelKind};

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ComponentMetrics {
    pub mse: f64,
    pub l_inf: f64,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub mse_test: f64,
    pub l_inf: f64,
    pub per_component: Vec<ComponentMetrics>,
    pub n_test: usize,
}

/// Mean squared error and max absolute error of an error sequence.
pub fn metrics(errors: &[f64]) -> Result<(f64, f64)> {
    if errors.is_empty() {
        return Err(Error::Empty("metrics over an empty error sequence".into()));
    }
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64;
    let l_inf = errors.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    Ok((mse, l_inf))
}

/// Node-wise forward pass of any model kind, returning values together with
/// the derivative bundle needed for residual reporting.
pub struct Predictor<'a> {
    kind: ModelKind,
    specs: &'a TwoStreamSpec,
    params: &'a [f64],
    graph: &'a GraphData,
    ffnn: FfnnJets,
    gcn: GcnJets,
    fusion: FusionJets,
    agg_x: Vec<f64>,
    diag: Vec<f64>,
    fws: crate::jets::Workspace,
    gws: crate::jets::Workspace,
    hidden_pre: Vec<f64>,
    hidden_post: Vec<f64>,
    fused_out: Vec<f64>,
}

impl<'a> Predictor<'a> {
    pub fn new(
        kind: ModelKind,
        specs: &'a TwoStreamSpec,
        params: &'a [f64],
        graph: &'a GraphData,
    ) -> Result<Self> {
        let expected = match kind {
            ModelKind::Ffnn => specs.ffnn.param_count(),
            ModelKind::Gcn => specs.gcn.param_count(),
            ModelKind::GcnFfnn => specs.param_count(),
        };
        if params.len() != expected {
            return Err(Error::Dimension {
                context: format!("{} predictor params", kind.name()),
                expected,
                got: params.len(),
            });
        }
        let ffnn = FfnnJets::new(specs.ffnn);
        let gcn = GcnJets::new(specs.gcn);
        let fusion = FusionJets::new(specs.fusion, specs.ffnn.input_dim);
        let (agg_x, diag) = gcn_constants(graph);
        let fws = ffnn.workspace();
        let gws = gcn.workspace();
        let nc = ncomp(specs.ffnn.input_dim);
        let cap = (specs.fusion.hidden * nc).max(1);
        Ok(Predictor {
            kind,
            specs,
            params,
            graph,
            ffnn,
            gcn,
            fusion,
            agg_x,
            diag,
            fws,
            gws,
            hidden_pre: vec![0.0; cap],
            hidden_post: vec![0.0; cap],
            fused_out: vec![0.0; specs.ffnn.output_dim * nc],
        })
    }

    pub fn arity(&self) -> usize {
        self.specs.ffnn.output_dim
    }

    /// Output jets (m consecutive blocks of nc) at one node.
    fn jets(&mut self, node: usize) -> Result<&[f64]> {
        let input = seed_input(self.graph.node(node));
        let p = self.specs.ffnn.input_dim;
        match self.kind {
            ModelKind::Ffnn => self.ffnn.forward(self.params, &input, &mut self.fws),
            ModelKind::Gcn => {
                let agg = &self.agg_x[node * p..(node + 1) * p];
                self.gcn
                    .forward(self.params, &input, agg, self.diag[node], &mut self.gws)
            }
            ModelKind::GcnFfnn => {
                let fp = &self.params[self.specs.ffnn_range()];
                let gp = &self.params[self.specs.gcn_range()];
                let hp = &self.params[self.specs.fusion_range()];
                let nc = self.ffnn.nc();
                let m = self.specs.ffnn.output_dim;
                let agg = &self.agg_x[node * p..(node + 1) * p];
                let jf = self.ffnn.forward(fp, &input, &mut self.fws)?.to_vec();
                let jg = self
                    .gcn
                    .forward(gp, &input, agg, self.diag[node], &mut self.gws)?;
                for c in 0..m {
                    let (jfc, jgc) = (&jf[c * nc..(c + 1) * nc], &jg[c * nc..(c + 1) * nc]);
                    let out = &mut self.fused_out[c * nc..(c + 1) * nc];
                    self.fusion.forward(
                        hp,
                        jfc,
                        jgc,
                        &mut self.hidden_pre,
                        &mut self.hidden_post,
                        out,
                    );
                }
                Ok(&self.fused_out)
            }
        }
    }

    /// Predicted component values and the derivative bundle at one node.
    pub fn predict(&mut self, node: usize) -> Result<(Vec<f64>, DerivativeBundle)> {
        let nc = self.ffnn.nc();
        let m = self.arity();
        let jets = self.jets(node)?;
        let mut values = Vec::with_capacity(m);
        let mut comps = Vec::with_capacity(m);
        for c in 0..m {
            let j = &jets[c * nc..(c + 1) * nc];
            values.push(j[0]);
            comps.push(CompDerivs {
                value: j[0],
                dt: j[1],
                dx: j[2],
                dxx: j[3],
                dy: if nc == 6 { j[4] } else { 0.0 },
                dyy: if nc == 6 { j[5] } else { 0.0 },
            });
        }
        Ok((values, DerivativeBundle { comps }))
    }
}

fn reference_value(reference: &ReferenceField, node: usize) -> Result<&[f64]> {
    if node >= reference.grid.n() {
        return Err(Error::Empty(format!(
            "reference has no value for node {}",
            node
        )));
    }
    Ok(reference.value(node))
}

/// Scores a model on the test-masked nodes of a graph against a reference
/// field on the same grid.
pub fn evaluate(
    kind: ModelKind,
    specs: &TwoStreamSpec,
    params: &[f64],
    graph: &GraphData,
    test_mask: &[bool],
    reference: &ReferenceField,
) -> Result<MetricReport> {
    let mut predictor = Predictor::new(kind, specs, params, graph)?;
    let m = predictor.arity();
    if reference.arity != m {
        return Err(Error::Dimension {
            context: "reference arity".into(),
            expected: m,
            got: reference.arity,
        });
    }
    let mut pooled = Vec::new();
    let mut by_comp: Vec<Vec<f64>> = vec![Vec::new(); m];
    for node in 0..graph.n() {
        if !test_mask[node] {
            continue;
        }
        let truth = reference_value(reference, node)?;
        let (values, _) = predictor.predict(node)?;
        for c in 0..m {
            let e = values[c] - truth[c];
            pooled.push(e);
            by_comp[c].push(e);
        }
    }
    let n_test = pooled.len() / m;
    let (mse_test, l_inf) = metrics(&pooled)?;
    let per_component = by_comp
        .iter()
        .map(|errs| {
            let (mse, l_inf) = metrics(errs)?;
            Ok(ComponentMetrics { mse, l_inf })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        mse_test,
        l_inf,
        per_component,
        n_test,
    })
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct MetricsFile {
    pub problem: String,
    pub model: String,
    pub scenario: String,
    pub seed: u64,
    pub mse_test: f64,
    pub l_inf: f64,
    pub per_component: Vec<ComponentMetrics>,
    pub n_test: usize,
    pub wall_time_s: f64,
}

pub fn write_metrics(path: &Path, file: &MetricsFile) -> Result<()> {
    let text = serde_json::to_string_pretty(file)
        .map_err(|e| Error::Checkpoint(format!("metrics encode: {}", e)))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn split_tag(graph: &GraphData, node: usize) -> &'static str {
    if graph.masks.test[node] {
        "test"
    } else if graph.masks.train[node] {
        "train"
    } else {
        "none"
    }
}

fn csv_header(p: usize, m: usize, value_cols: &str) -> String {
    let coords = if p == 3 { "x,y,t" } else { "x,t" };
    let vals: Vec<String> = value_cols
        .split(',')
        .flat_map(|stem| {
            if m == 2 {
                vec![format!("u_{}", stem), format!("v_{}", stem)]
            } else {
                vec![format!("u_{}", stem)]
            }
        })
        .collect();
    format!("{},split,{}", coords, vals.join(","))
}

/// `predictions.csv`: every node's coordinates, split tag, reference value
/// and model value, interleaved per component for m = 2.
pub fn write_predictions(
    path: &Path,
    kind: ModelKind,
    specs: &TwoStreamSpec,
    params: &[f64],
    graph: &GraphData,
    reference: &ReferenceField,
) -> Result<()> {
    let mut predictor = Predictor::new(kind, specs, params, graph)?;
    let m = predictor.arity();
    let p = graph.spec.p();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", csv_header(p, m, "true,pred"))?;
    for node in 0..graph.n() {
        let truth = reference_value(reference, node)?;
        let (values, _) = predictor.predict(node)?;
        let mut fields: Vec<String> = graph
            .node(node)
            .iter()
            .map(|v| format!("{:.16e}", v))
            .collect();
        fields.push(split_tag(graph, node).to_string());
        for c in 0..m {
            fields.push(format!("{:.16e}", truth[c]));
            fields.push(format!("{:.16e}", values[c]));
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// `residuals.csv`: every node's coordinates, split tag and the PDE residual
/// components of the model output.
pub fn write_residuals(
    path: &Path,
    kind: ModelKind,
    specs: &TwoStreamSpec,
    params: &[f64],
    problem: Problem,
    graph: &GraphData,
) -> Result<()> {
    let mut predictor = Predictor::new(kind, specs, params, graph)?;
    let m = predictor.arity();
    let p = graph.spec.p();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", csv_header(p, m, "residual"))?;
    for node in 0..graph.n() {
        let (_, bundle) = predictor.predict(node)?;
        let r = problem.residual(&bundle, graph.node(node));
        let mut fields: Vec<String> = graph
            .node(node)
            .iter()
            .map(|v| format!("{:.16e}", v))
            .collect();
        fields.push(split_tag(graph, node).to_string());
        fields.extend(r.iter().map(|v| format!("{:.16e}", v)));
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}
