//! The four benchmark equations: residual operators, initial/boundary
//! condition data and default grids.

use crate::error::{Error, Result};
use crate::graph::GridSpec;
use crate::oracle::{exact_2d_burgers, exact_2d_schrodinger, BURGERS_NU};

/// Value and derivatives of one output component at a point. `dy`/`dyy` are
/// zero for two-axis problems; no residual uses mixed derivatives.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompDerivs {
    pub value: f64,
    pub dt: f64,
    pub dx: f64,
    pub dxx: f64,
    pub dy: f64,
    pub dyy: f64,
}

/// Per-component derivative data consumed by a residual operator.
#[derive(Clone, Debug)]
pub struct DerivativeBundle {
    pub comps: Vec<CompDerivs>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    #[serde(rename = "1d-burgers")]
    Burgers1d,
    #[serde(rename = "1d-schrodinger")]
    Schrodinger1d,
    #[serde(rename = "2d-burgers")]
    Burgers2d,
    #[serde(rename = "2d-schrodinger")]
    Schrodinger2d,
}

pub const PROBLEM_NAMES: [&str; 4] = ["1d-burgers", "1d-schrodinger", "2d-burgers", "2d-schrodinger"];

impl Problem {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "1d-burgers" => Ok(Problem::Burgers1d),
            "1d-schrodinger" => Ok(Problem::Schrodinger1d),
            "2d-burgers" => Ok(Problem::Burgers2d),
            "2d-schrodinger" => Ok(Problem::Schrodinger2d),
            _ => Err(Error::Config(format!(
                "unknown problem '{}'; valid names: {}",
                name,
                PROBLEM_NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Problem::Burgers1d => "1d-burgers",
            Problem::Schrodinger1d => "1d-schrodinger",
            Problem::Burgers2d => "2d-burgers",
            Problem::Schrodinger2d => "2d-schrodinger",
        }
    }

    /// Number of input axes (including time).
    pub fn p(&self) -> usize {
        match self {
            Problem::Burgers1d | Problem::Schrodinger1d => 2,
            Problem::Burgers2d | Problem::Schrodinger2d => 3,
        }
    }

    /// Output arity: 1, or 2 for the real/imaginary Schrödinger split.
    pub fn arity(&self) -> usize {
        match self {
            Problem::Burgers1d | Problem::Burgers2d => 1,
            Problem::Schrodinger1d | Problem::Schrodinger2d => 2,
        }
    }

    /// The benchmark discretization for this equation.
    pub fn default_grid(&self) -> GridSpec {
        let spec = match self {
            Problem::Burgers1d => GridSpec::rect(&[(-1.0, 1.0), (0.0, 0.99)], &[256, 100]),
            Problem::Schrodinger1d => {
                GridSpec::rect(&[(-5.0, 5.0), (0.0, std::f64::consts::FRAC_PI_2)], &[257, 201])
            }
            Problem::Burgers2d => {
                GridSpec::rect(&[(0.0, 1.0), (0.0, 1.0), (0.0, 3.0)], &[26, 26, 31])
            }
            Problem::Schrodinger2d => {
                GridSpec::rect(&[(-5.0, 5.0), (-5.0, 5.0), (0.0, 1.0)], &[26, 26, 11])
            }
        };
        spec.expect("built-in grid is valid")
    }

    /// Residual components `f[û]` at one point. `point` supplies the spatial
    /// coordinates for the 2D-Schrödinger potential; the operators are
    /// otherwise autonomous.
    pub fn residual(&self, b: &DerivativeBundle, point: &[f64]) -> Vec<f64> {
        match self {
            Problem::Burgers1d => {
                let c = &b.comps[0];
                vec![c.dt + c.value * c.dx - BURGERS_NU * c.dxx]
            }
            Problem::Schrodinger1d => {
                let (cu, cv) = (&b.comps[0], &b.comps[1]);
                let (u, v) = (cu.value, cv.value);
                let m = u * u + v * v;
                vec![cu.dt + 0.5 * cv.dxx + m * v, cv.dt - 0.5 * cu.dxx - m * u]
            }
            Problem::Burgers2d => {
                let c = &b.comps[0];
                vec![c.dt + c.value * (c.dx + c.dy) - 0.1 * (c.dxx + c.dyy)]
            }
            Problem::Schrodinger2d => {
                let (cu, cv) = (&b.comps[0], &b.comps[1]);
                let w = potential_2d(point[0], point[1]);
                vec![
                    cu.dt + cv.dxx + cv.dyy + w * cv.value,
                    cv.dt - cu.dxx - cu.dyy - w * cu.value,
                ]
            }
        }
    }

    /// Adjoint of the residual: given weights `rbar` on the residual
    /// components, the derivative of `Σ rbar_c · r_c` with respect to every
    /// bundle entry. Used by the reverse pass of the physics loss.
    pub fn residual_adjoint(
        &self,
        b: &DerivativeBundle,
        point: &[f64],
        rbar: &[f64],
    ) -> DerivativeBundle {
        let mut adj = DerivativeBundle {
            comps: vec![CompDerivs::default(); b.comps.len()],
        };
        match self {
            Problem::Burgers1d => {
                let c = &b.comps[0];
                let a = &mut adj.comps[0];
                let r = rbar[0];
                a.dt = r;
                a.value = r * c.dx;
                a.dx = r * c.value;
                a.dxx = -r * BURGERS_NU;
            }
            Problem::Burgers2d => {
                let c = &b.comps[0];
                let a = &mut adj.comps[0];
                let r = rbar[0];
                a.dt = r;
                a.value = r * (c.dx + c.dy);
                a.dx = r * c.value;
                a.dy = r * c.value;
                a.dxx = -0.1 * r;
                a.dyy = -0.1 * r;
            }
            Problem::Schrodinger1d => {
                let (u, v) = (b.comps[0].value, b.comps[1].value);
                let (r0, r1) = (rbar[0], rbar[1]);
                adj.comps[0].dt = r0;
                adj.comps[1].dxx = 0.5 * r0;
                adj.comps[1].dt = r1;
                adj.comps[0].dxx = -0.5 * r1;
                adj.comps[0].value = r0 * 2.0 * u * v - r1 * (3.0 * u * u + v * v);
                adj.comps[1].value = r0 * (u * u + 3.0 * v * v) - r1 * 2.0 * u * v;
            }
            Problem::Schrodinger2d => {
                let w = potential_2d(point[0], point[1]);
                let (r0, r1) = (rbar[0], rbar[1]);
                adj.comps[0].dt = r0;
                adj.comps[1].dxx = r0;
                adj.comps[1].dyy = r0;
                adj.comps[1].value = r0 * w;
                adj.comps[1].dt = r1;
                adj.comps[0].dxx = -r1;
                adj.comps[0].dyy = -r1;
                adj.comps[0].value = -r1 * w;
            }
        }
        adj
    }
}

/// The 2D-Schrödinger trapping potential `w(x,y) = 3 - 2tanh²x - 2tanh²y`.
pub fn potential_2d(x: f64, y: f64) -> f64 {
    let (tx, ty) = (x.tanh(), y.tanh());
    3.0 - 2.0 * tx * tx - 2.0 * ty * ty
}

/// One enforced initial/boundary condition term.
#[derive(Clone, Debug, PartialEq)]
pub enum ConditionTerm {
    /// Model output at `node` must equal `target` (per component).
    Dirichlet { node: usize, target: Vec<f64> },
    /// Model outputs and x-derivatives at the paired nodes must match
    /// (all components).
    PeriodicPair { node_a: usize, node_b: usize },
}

impl ConditionTerm {
    pub fn nodes(&self) -> Vec<usize> {
        match self {
            ConditionTerm::Dirichlet { node, .. } => vec![*node],
            ConditionTerm::PeriodicPair { node_a, node_b } => vec![*node_a, *node_b],
        }
    }
}

/// Condition terms for every initial/boundary node of the grid.
///
/// Every node of `Z_BI` is covered exactly once: Dirichlet data on initial
/// nodes (and on Dirichlet boundaries), periodic value/derivative pairs for
/// the 1D-Schrödinger spatial boundary.
pub fn condition_data(
    problem: Problem,
    spec: &GridSpec,
    initial: &[bool],
    boundary: &[bool],
) -> Result<Vec<ConditionTerm>> {
    let mut terms = Vec::new();
    let t_axis = spec.time_axis();
    for node in 0..spec.n() {
        if initial[node] {
            let idx = spec.multi_index(node);
            let target = match problem {
                Problem::Burgers1d => {
                    let x = spec.coord(0, idx[0]);
                    vec![-(std::f64::consts::PI * x).sin()]
                }
                Problem::Schrodinger1d => {
                    let x = spec.coord(0, idx[0]);
                    vec![2.0 / x.cosh(), 0.0]
                }
                Problem::Burgers2d => {
                    vec![exact_2d_burgers(spec.coord(0, idx[0]), spec.coord(1, idx[1]), 0.0)]
                }
                Problem::Schrodinger2d => {
                    let (u, v) =
                        exact_2d_schrodinger(spec.coord(0, idx[0]), spec.coord(1, idx[1]), 0.0);
                    vec![u, v]
                }
            };
            terms.push(ConditionTerm::Dirichlet { node, target });
        } else if boundary[node] {
            let idx = spec.multi_index(node);
            match problem {
                Problem::Burgers1d => {
                    terms.push(ConditionTerm::Dirichlet {
                        node,
                        target: vec![0.0],
                    });
                }
                Problem::Schrodinger1d => {
                    // Emit the pair once, from the x-min side.
                    if idx[0] == 0 {
                        let mut other = idx.clone();
                        other[0] = spec.axes[0].count - 1;
                        terms.push(ConditionTerm::PeriodicPair {
                            node_a: node,
                            node_b: spec.node_index(&other),
                        });
                    } else if idx[0] != spec.axes[0].count - 1 {
                        return Err(Error::Config(format!(
                            "node {} unclassified for periodic boundary",
                            node
                        )));
                    }
                }
                Problem::Burgers2d => {
                    terms.push(ConditionTerm::Dirichlet {
                        node,
                        target: vec![exact_2d_burgers(
                            spec.coord(0, idx[0]),
                            spec.coord(1, idx[1]),
                            spec.coord(t_axis, idx[t_axis]),
                        )],
                    });
                }
                Problem::Schrodinger2d => {
                    let (u, v) = exact_2d_schrodinger(
                        spec.coord(0, idx[0]),
                        spec.coord(1, idx[1]),
                        spec.coord(t_axis, idx[t_axis]),
                    );
                    terms.push(ConditionTerm::Dirichlet {
                        node,
                        target: vec![u, v],
                    });
                }
            }
        }
    }
    Ok(terms)
}

/// Analytic derivative bundle of the 2D-Burgers traveling wave.
pub fn exact_bundle_2d_burgers(x: f64, y: f64, t: f64) -> DerivativeBundle {
    let u = exact_2d_burgers(x, y, t);
    let g = u * (1.0 - u) / 0.2;
    let gx = u * (1.0 - u) * (1.0 - 2.0 * u) / 0.04;
    DerivativeBundle {
        comps: vec![CompDerivs {
            value: u,
            dt: g,
            dx: -g,
            dy: -g,
            dxx: gx,
            dyy: gx,
        }],
    }
}

/// Analytic derivative bundle of the 2D-Schrödinger closed form.
pub fn exact_bundle_2d_schrodinger(x: f64, y: f64, t: f64) -> DerivativeBundle {
    let h = 1.0 / (x.cosh() * y.cosh());
    let (st, ct) = (t.sin(), t.cos());
    let (sx, sy) = (1.0 / x.cosh(), 1.0 / y.cosh());
    // (sech a sech b)_xx = sech a sech b (1 - 2 sech² a)
    let lx = 1.0 - 2.0 * sx * sx;
    let ly = 1.0 - 2.0 * sy * sy;
    let hx = -x.tanh() * h;
    let hy = -y.tanh() * h;
    DerivativeBundle {
        comps: vec![
            CompDerivs {
                value: -st * h,
                dt: -ct * h,
                dx: -st * hx,
                dy: -st * hy,
                dxx: -st * h * lx,
                dyy: -st * h * ly,
            },
            CompDerivs {
                value: ct * h,
                dt: -st * h,
                dx: ct * hx,
                dy: ct * hy,
                dxx: ct * h * lx,
                dyy: ct * h * ly,
            },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::classify_nodes;
    use rand::SeedableRng;

    fn zero_bundle(m: usize) -> DerivativeBundle {
        DerivativeBundle {
            comps: vec![CompDerivs::default(); m],
        }
    }

    #[test]
    fn burgers_1d_residual_cases() {
        let p = Problem::Burgers1d;
        assert_eq!(p.residual(&zero_bundle(1), &[0.0, 0.0]), vec![0.0]);
        // u = x at x₀ = 0.5
        let b = DerivativeBundle {
            comps: vec![CompDerivs {
                value: 0.5,
                dx: 1.0,
                ..Default::default()
            }],
        };
        assert_eq!(p.residual(&b, &[0.5, 0.3]), vec![0.5]);
    }

    #[test]
    fn schrodinger_1d_residual_cases() {
        let p = Problem::Schrodinger1d;
        assert_eq!(p.residual(&zero_bundle(2), &[0.0, 0.0]), vec![0.0, 0.0]);
        let mut b = zero_bundle(2);
        b.comps[0].value = 1.0;
        assert_eq!(p.residual(&b, &[0.0, 0.0]), vec![0.0, -1.0]);
    }

    #[test]
    fn burgers_2d_residual_cases() {
        let p = Problem::Burgers2d;
        assert_eq!(p.residual(&zero_bundle(1), &[0.0; 3]), vec![0.0]);
        let mut b = zero_bundle(1);
        b.comps[0].dt = 1.0;
        assert_eq!(p.residual(&b, &[0.0; 3]), vec![1.0]);
    }

    #[test]
    fn potential_at_origin() {
        assert_eq!(potential_2d(0.0, 0.0), 3.0);
    }

    #[test]
    fn schrodinger_2d_residual_zero_field() {
        let p = Problem::Schrodinger2d;
        assert_eq!(p.residual(&zero_bundle(2), &[0.4, -0.3]), vec![0.0, 0.0]);
    }

    fn lcg_points(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    }

    #[test]
    fn burgers_2d_closed_form_annihilates() {
        let xs = lcg_points(1, 20, 0.0, 1.0);
        let ys = lcg_points(2, 20, 0.0, 1.0);
        let ts = lcg_points(3, 20, 0.0, 3.0);
        for i in 0..20 {
            let b = exact_bundle_2d_burgers(xs[i], ys[i], ts[i]);
            let r = Problem::Burgers2d.residual(&b, &[xs[i], ys[i], ts[i]]);
            assert!(r[0].abs() < 1e-10, "residual {}", r[0]);
        }
    }

    #[test]
    fn schrodinger_2d_closed_form_annihilates() {
        let xs = lcg_points(4, 20, -5.0, 5.0);
        let ys = lcg_points(5, 20, -5.0, 5.0);
        let ts = lcg_points(6, 20, 0.0, 1.0);
        for i in 0..20 {
            let b = exact_bundle_2d_schrodinger(xs[i], ys[i], ts[i]);
            let r = Problem::Schrodinger2d.residual(&b, &[xs[i], ys[i]]);
            assert!(r[0].abs() < 1e-10 && r[1].abs() < 1e-10, "residual {:?}", r);
        }
    }

    #[test]
    fn burgers_residual_is_autonomous() {
        // Residual depends only on the bundle, not on where in time it is
        // evaluated.
        let b = DerivativeBundle {
            comps: vec![CompDerivs {
                value: 0.3,
                dt: -0.2,
                dx: 0.9,
                dxx: 1.7,
                ..Default::default()
            }],
        };
        let r1 = Problem::Burgers1d.residual(&b, &[0.5, 0.1]);
        let r2 = Problem::Burgers1d.residual(&b, &[0.5, 7.1]);
        assert_eq!(r1, r2);
    }

    #[test]
    fn schrodinger_1d_antisymmetry() {
        let mut b = zero_bundle(2);
        b.comps[0] = CompDerivs {
            value: 0.4,
            dt: 0.1,
            dx: -0.3,
            dxx: 0.8,
            ..Default::default()
        };
        b.comps[1] = CompDerivs {
            value: -0.2,
            dt: 0.6,
            dx: 0.2,
            dxx: -0.5,
            ..Default::default()
        };
        let r = Problem::Schrodinger1d.residual(&b, &[0.0, 0.0]);
        let mut neg = b.clone();
        for c in neg.comps.iter_mut() {
            c.value = -c.value;
            c.dt = -c.dt;
            c.dx = -c.dx;
            c.dxx = -c.dxx;
        }
        let rn = Problem::Schrodinger1d.residual(&neg, &[0.0, 0.0]);
        assert!((r[0] + rn[0]).abs() < 1e-15);
        assert!((r[1] + rn[1]).abs() < 1e-15);
    }

    #[test]
    fn residual_adjoint_matches_finite_differences() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for problem in [
            Problem::Burgers1d,
            Problem::Schrodinger1d,
            Problem::Burgers2d,
            Problem::Schrodinger2d,
        ] {
            let m = problem.arity();
            let point = [0.3, -0.4, 0.2];
            let mut b = zero_bundle(m);
            for c in b.comps.iter_mut() {
                *c = CompDerivs {
                    value: rng.gen_range(-1.0..1.0),
                    dt: rng.gen_range(-1.0..1.0),
                    dx: rng.gen_range(-1.0..1.0),
                    dxx: rng.gen_range(-1.0..1.0),
                    dy: rng.gen_range(-1.0..1.0),
                    dyy: rng.gen_range(-1.0..1.0),
                };
            }
            let rbar: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let adj = problem.residual_adjoint(&b, &point, &rbar);
            let weighted = |b: &DerivativeBundle| -> f64 {
                problem
                    .residual(b, &point)
                    .iter()
                    .zip(&rbar)
                    .map(|(r, w)| r * w)
                    .sum()
            };
            let h = 1e-6;
            for ci in 0..m {
                for field in 0..6 {
                    let get = |c: &CompDerivs| [c.value, c.dt, c.dx, c.dxx, c.dy, c.dyy][field];
                    let setf = |c: &mut CompDerivs, v: f64| match field {
                        0 => c.value = v,
                        1 => c.dt = v,
                        2 => c.dx = v,
                        3 => c.dxx = v,
                        4 => c.dy = v,
                        _ => c.dyy = v,
                    };
                    let orig = get(&b.comps[ci]);
                    let mut bp = b.clone();
                    setf(&mut bp.comps[ci], orig + h);
                    let mut bm = b.clone();
                    setf(&mut bm.comps[ci], orig - h);
                    let fd = (weighted(&bp) - weighted(&bm)) / (2.0 * h);
                    let an = get(&adj.comps[ci]);
                    assert!(
                        (fd - an).abs() < 1e-6,
                        "{} comp {} field {}: {} vs {}",
                        problem.name(),
                        ci,
                        field,
                        an,
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn condition_targets_examples() {
        // 1D-Burgers initial node at x = 0 has target 0.
        let spec = Problem::Burgers1d.default_grid();
        let (initial, boundary, _) = classify_nodes(&spec);
        let terms = condition_data(Problem::Burgers1d, &spec, &initial, &boundary).unwrap();
        let x0_node = spec.node_index(&[128, 0]); // not exactly x=0 on a 256 grid
        let x = spec.coord(0, 128);
        let found = terms.iter().find_map(|t| match t {
            ConditionTerm::Dirichlet { node, target } if *node == x0_node => Some(target.clone()),
            _ => None,
        });
        assert!((found.unwrap()[0] + (std::f64::consts::PI * x).sin()).abs() < 1e-15);

        // 1D-Schrödinger initial node at x = 0 targets (2, 0).
        let spec = Problem::Schrodinger1d.default_grid();
        let (initial, boundary, _) = classify_nodes(&spec);
        let terms = condition_data(Problem::Schrodinger1d, &spec, &initial, &boundary).unwrap();
        let node0 = spec.node_index(&[128, 0]); // x index 128 of 257 is x = 0
        assert_eq!(spec.coord(0, 128), 0.0);
        let found = terms.iter().find_map(|t| match t {
            ConditionTerm::Dirichlet { node, target } if *node == node0 => Some(target.clone()),
            _ => None,
        });
        assert_eq!(found.unwrap(), vec![2.0, 0.0]);

        // 2D-Schrödinger initial node at the origin targets (0, 1).
        let spec = Problem::Schrodinger2d.default_grid();
        let (initial, boundary, _) = classify_nodes(&spec);
        let terms = condition_data(Problem::Schrodinger2d, &spec, &initial, &boundary).unwrap();
        let mid = spec.node_index(&[12, 12, 0]);
        let found = terms.iter().find_map(|t| match t {
            ConditionTerm::Dirichlet { node, target } if *node == mid => Some(target.clone()),
            _ => None,
        });
        let target = found.unwrap();
        let x = spec.coord(0, 12);
        let c = x.cosh() * x.cosh();
        assert_eq!(target[0], 0.0);
        assert!((target[1] - 1.0 / c).abs() < 1e-15);
    }

    #[test]
    fn condition_coverage_per_problem() {
        for problem in [
            Problem::Burgers1d,
            Problem::Schrodinger1d,
            Problem::Burgers2d,
            Problem::Schrodinger2d,
        ] {
            let spec = problem.default_grid();
            let (initial, boundary, _) = classify_nodes(&spec);
            let terms = condition_data(problem, &spec, &initial, &boundary).unwrap();
            let mut covered = vec![0usize; spec.n()];
            for t in &terms {
                for node in t.nodes() {
                    covered[node] += 1;
                }
            }
            for node in 0..spec.n() {
                let expected = (initial[node] || boundary[node]) as usize;
                assert_eq!(
                    covered[node],
                    expected,
                    "{} node {} covered {} times",
                    problem.name(),
                    node,
                    covered[node]
                );
            }
        }
    }

    #[test]
    fn cole_hopf_consistency_with_residual() {
        // Finite differences of the oracle solution approximately annihilate
        // the 1D-Burgers residual.
        use crate::oracle::cole_hopf_burgers;
        let h = 1e-4;
        let pts = [(0.31, 0.2), (-0.55, 0.45), (0.12, 0.8), (0.83, 0.11)];
        for &(x, t) in &pts {
            let u = cole_hopf_burgers(x, t).unwrap();
            let uxp = cole_hopf_burgers(x + h, t).unwrap();
            let uxm = cole_hopf_burgers(x - h, t).unwrap();
            let utp = cole_hopf_burgers(x, t + h).unwrap();
            let utm = cole_hopf_burgers(x, t - h).unwrap();
            let b = DerivativeBundle {
                comps: vec![CompDerivs {
                    value: u,
                    dt: (utp - utm) / (2.0 * h),
                    dx: (uxp - uxm) / (2.0 * h),
                    dxx: (uxp - 2.0 * u + uxm) / (h * h),
                    ..Default::default()
                }],
            };
            let r = Problem::Burgers1d.residual(&b, &[x, t]);
            assert!(r[0].abs() < 1e-4, "({}, {}): residual {}", x, t, r[0]);
        }
    }
}
