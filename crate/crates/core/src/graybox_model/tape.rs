//! Reverse-mode tape over the model's primitive layers.
//!
//! Nodes are appended in evaluation order, so every input id is smaller than
//! the id of the node that consumes it and a single reverse sweep is a valid
//! topological order. Complex adjoints follow `G = ∂L/∂Re + i·∂L/∂Im`.

use super::gru::{gemv_add, gemv_t_add, ger_add, gru_layer, gru_layer_backward, sigmoid, GruDims, GruLayerCache};
use super::whitebox::VoParams;
use crate::linalg2::{expm_pauli, expm_pauli_partials, pauli, Axis, Operator2};
use crate::mc_simulator::step_components;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(Vec<f64>),
    Op(Operator2),
}

impl Value {
    pub fn real(&self) -> &[f64] {
        match self {
            Value::Real(v) => v,
            Value::Op(_) => panic!("expected a real node"),
        }
    }

    pub fn op(&self) -> &Operator2 {
        match self {
            Value::Op(o) => o,
            Value::Real(_) => panic!("expected an operator node"),
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf,
    /// A GRU run over a `T × input` sequence from a zero state. Emits the
    /// `T × hidden` state sequence, or only the final state when `last_only`.
    GruLayer {
        dims: GruDims,
        offset: usize,
        x: NodeId,
        last_only: bool,
        cache: GruLayerCache,
    },
    Dense {
        rows: usize,
        offset: usize,
        x: NodeId,
    },
    /// Identity on the first three entries, sigmoid on the fourth.
    Head {
        x: NodeId,
    },
    ConstructVo {
        params: NodeId,
        obs: Axis,
    },
    /// Step Hamiltonian components read from a stacked `[x | y | z]` waveform leaf.
    StepComponents {
        wave: NodeId,
        j: usize,
        m: usize,
    },
    Expm {
        b: NodeId,
        dt: f64,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Measure {
        v: NodeId,
        u: NodeId,
        rho: Operator2,
        obs: Axis,
    },
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<Value>,
}

/// `Re Σ conj(G_ij)·D_ij`: the directional derivative of `L` along `D`.
#[inline]
pub fn re_inner(g: &Operator2, d: &Operator2) -> f64 {
    g.m.iter().zip(d.m.iter()).map(|(a, b)| (a.conj() * b).re).sum()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Value {
        &self.values[id]
    }

    fn push(&mut self, node: Node, value: Value) -> NodeId {
        self.nodes.push(node);
        self.values.push(value);
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Value) -> NodeId {
        self.push(Node::Leaf, value)
    }

    pub fn gru_layer(&mut self, params: &[f64], dims: GruDims, offset: usize, x: NodeId, last_only: bool) -> NodeId {
        let p = &params[offset..offset + dims.len()];
        let (mut out, cache) = gru_layer(dims, p, self.values[x].real());
        if last_only {
            out = out[out.len() - dims.hidden..].to_vec();
        }
        self.push(
            Node::GruLayer {
                dims,
                offset,
                x,
                last_only,
                cache,
            },
            Value::Real(out),
        )
    }

    pub fn dense(&mut self, params: &[f64], rows: usize, offset: usize, x: NodeId) -> NodeId {
        let xv = self.values[x].real();
        let cols = xv.len();
        let w = &params[offset..offset + rows * cols];
        let mut out = params[offset + rows * cols..offset + rows * cols + rows].to_vec();
        gemv_add(&mut out, w, xv);
        self.push(Node::Dense { rows, offset, x }, Value::Real(out))
    }

    pub fn head(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x].real();
        let out = vec![v[0], v[1], v[2], sigmoid(v[3])];
        self.push(Node::Head { x }, Value::Real(out))
    }

    pub fn construct_vo(&mut self, params: NodeId, obs: Axis) -> NodeId {
        let p = vo_params(self.values[params].real());
        // μ comes out of a sigmoid, so it is always in range.
        let v = pauli(obs) * p.hermitian_part();
        self.push(Node::ConstructVo { params, obs }, Value::Op(v))
    }

    pub fn step_components(&mut self, wave: NodeId, j: usize, m: usize, omega: f64) -> NodeId {
        let w = self.values[wave].real();
        let b = step_components(omega, w[j], w[m + j], w[2 * m + j], 0.0, 0.0, 0.0);
        self.push(Node::StepComponents { wave, j, m }, Value::Real(b.to_vec()))
    }

    pub fn expm(&mut self, b: NodeId, dt: f64) -> NodeId {
        let v = self.values[b].real();
        let e = expm_pauli(0.0, [v[0], v[1], v[2]], dt);
        self.push(Node::Expm { b, dt }, Value::Op(e))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let c = *self.values[a].op() * *self.values[b].op();
        self.push(Node::MatMul { a, b }, Value::Op(c))
    }

    pub fn measure(&mut self, v: NodeId, u: NodeId, rho: Operator2, obs: Axis) -> NodeId {
        let vv = self.values[v].op();
        let uu = self.values[u].op();
        let y = (*vv * *uu * rho * uu.dagger() * pauli(obs)).trace().re;
        self.push(Node::Measure { v, u, rho, obs }, Value::Real(vec![y]))
    }

    /// Reverse sweep from the seeded adjoints. Parameter gradients are
    /// accumulated into `grad_params`; leaf adjoints are returned.
    pub fn backward(&self, params: &[f64], grad_params: &mut [f64], seeds: Vec<(NodeId, Value)>) -> Adjoints {
        let mut adj: Vec<Option<Value>> = vec![None; self.nodes.len()];
        for (id, v) in seeds {
            accumulate(&mut adj, id, v);
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.nodes[i] {
                Node::Leaf => {
                    adj[i] = Some(g);
                }
                Node::GruLayer {
                    dims,
                    offset,
                    x,
                    last_only,
                    cache,
                } => {
                    let xv = self.values[*x].real();
                    let steps = xv.len() / dims.input;
                    let dys = if *last_only {
                        let mut d = vec![0.0; steps * dims.hidden];
                        d[(steps - 1) * dims.hidden..].copy_from_slice(g.real());
                        d
                    } else {
                        g.real().to_vec()
                    };
                    let mut dx = vec![0.0; xv.len()];
                    let range = *offset..*offset + dims.len();
                    gru_layer_backward(*dims, &params[range.clone()], xv, cache, &dys, &mut grad_params[range], &mut dx);
                    accumulate(&mut adj, *x, Value::Real(dx));
                }
                Node::Dense { rows, offset, x } => {
                    let xv = self.values[*x].real();
                    let cols = xv.len();
                    let dy = g.real();
                    let w_end = offset + rows * cols;
                    ger_add(&mut grad_params[*offset..w_end], dy, xv);
                    for (gb, d) in grad_params[w_end..w_end + rows].iter_mut().zip(dy) {
                        *gb += d;
                    }
                    let mut dx = vec![0.0; cols];
                    gemv_t_add(&mut dx, &params[*offset..w_end], dy);
                    accumulate(&mut adj, *x, Value::Real(dx));
                }
                Node::Head { x } => {
                    let mu = self.values[i].real()[3];
                    let d = g.real();
                    let dx = vec![d[0], d[1], d[2], d[3] * mu * (1.0 - mu)];
                    accumulate(&mut adj, *x, Value::Real(dx));
                }
                Node::ConstructVo { params: pid, obs } => {
                    let p = vo_params(self.values[*pid].real());
                    // V = O·H with O Hermitian, so G_H = O·G_V.
                    let gh = pauli(*obs) * *g.op();
                    let n = p.axis();
                    let nsig = Operator2::from_pauli_components(0.0, n);
                    let d_mu = re_inner(&gh, &nsig);
                    let dn = [
                        p.mu * re_inner(&gh, &pauli(Axis::X)),
                        p.mu * re_inner(&gh, &pauli(Axis::Y)),
                        p.mu * re_inner(&gh, &pauli(Axis::Z)),
                    ];
                    let (dn_dtheta, dn_dpsi) = p.axis_partials();
                    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
                    let d = vec![dot(dn, dn_dpsi), dot(dn, dn_dtheta), 0.0, d_mu];
                    accumulate(&mut adj, *pid, Value::Real(d));
                }
                Node::StepComponents { wave, j, m } => {
                    let d = g.real();
                    let total = 3 * m;
                    let slot = adj[*wave].get_or_insert_with(|| Value::Real(vec![0.0; total]));
                    if let Value::Real(w) = slot {
                        w[*j] += 0.5 * d[0];
                        w[m + j] += 0.5 * d[1];
                        w[2 * m + j] += 0.5 * d[2];
                    }
                }
                Node::Expm { b, dt } => {
                    let bv = self.values[*b].real();
                    let (_, d_b) = expm_pauli_partials(0.0, [bv[0], bv[1], bv[2]], *dt);
                    let go = g.op();
                    let d = d_b.iter().map(|db| re_inner(go, db)).collect();
                    accumulate(&mut adj, *b, Value::Real(d));
                }
                Node::MatMul { a, b } => {
                    let av = self.values[*a].op();
                    let bv = self.values[*b].op();
                    let gc = g.op();
                    accumulate(&mut adj, *a, Value::Op(*gc * bv.dagger()));
                    accumulate(&mut adj, *b, Value::Op(av.dagger() * *gc));
                }
                Node::Measure { v, u, rho, obs } => {
                    let dy = g.real()[0];
                    let vv = *self.values[*v].op();
                    let uu = *self.values[*u].op();
                    let o = pauli(*obs);
                    let w = uu * *rho * uu.dagger() * o;
                    let z = o * vv;
                    let gv = w.dagger().scale_re(dy);
                    let gu = ((z.dagger() + z) * uu * *rho).scale_re(dy);
                    accumulate(&mut adj, *v, Value::Op(gv));
                    accumulate(&mut adj, *u, Value::Op(gu));
                }
            }
        }
        Adjoints { adj }
    }
}

fn vo_params(v: &[f64]) -> VoParams {
    VoParams {
        psi: v[0],
        theta: v[1],
        delta: v[2],
        mu: v[3],
    }
}

fn accumulate(adj: &mut [Option<Value>], id: NodeId, v: Value) {
    match (&mut adj[id], v) {
        (slot @ None, v) => *slot = Some(v),
        (Some(Value::Real(a)), Value::Real(b)) => {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        (Some(Value::Op(a)), Value::Op(b)) => *a = *a + b,
        _ => panic!("adjoint kind mismatch"),
    }
}

/// Adjoints left on leaf nodes after a reverse sweep.
#[derive(Debug, Clone)]
pub struct Adjoints {
    adj: Vec<Option<Value>>,
}

impl Adjoints {
    pub fn real(&self, id: NodeId) -> Option<&[f64]> {
        match &self.adj[id] {
            Some(Value::Real(v)) => Some(v),
            _ => None,
        }
    }

    pub fn op(&self, id: NodeId) -> Option<Operator2> {
        match &self.adj[id] {
            Some(Value::Op(o)) => Some(*o),
            _ => None,
        }
    }
}
