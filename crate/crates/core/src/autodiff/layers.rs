use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::graph::{Graph, NormAdjacency, Var};
use super::AutodiffError;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    #[default]
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

/// `x W + b` for `x: n x in`, `W: in x out`, `b: out`.
pub fn affine<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

/// Handles to the weights of one gated recurrent cell. Gate blocks are laid
/// out as `[input | forget | candidate | output]` along the column axis.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
    pub hidden: usize,
}

/// One LSTM update:
/// `i, f, o = sigmoid(.)`, `g = tanh(.)`, `c' = f*c + i*g`, `h' = o*tanh(c')`.
pub fn recurrent_cell<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmVars,
) -> Result<(Var, Var), AutodiffError> {
    let hs = p.hidden;
    let (hr, hc) = g.value(h_prev).dims2();
    let (cr, cc) = g.value(c_prev).dims2();
    if hc != hs || cc != hs || hr != cr || g.value(x).rows() != hr {
        return Err(AutodiffError::Shape {
            op: "recurrent_cell",
            lhs: vec![hr, hc],
            rhs: vec![cr, cc],
        });
    }
    let xi = g.matmul(x, p.w_input)?;
    let hh = g.matmul(h_prev, p.w_hidden)?;
    let pre = g.add(xi, hh)?;
    let pre = g.add_row(pre, p.bias)?;
    let i_raw = g.slice_cols(pre, 0, hs)?;
    let f_raw = g.slice_cols(pre, hs, hs)?;
    let c_raw = g.slice_cols(pre, 2 * hs, hs)?;
    let o_raw = g.slice_cols(pre, 3 * hs, hs)?;
    let i = g.sigmoid(i_raw);
    let f = g.sigmoid(f_raw);
    let cand = g.tanh(c_raw);
    let o = g.sigmoid(o_raw);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let ct = g.tanh(c);
    let h = g.mul(o, ct)?;
    Ok((h, c))
}

/// Graph convolution `h_i' = act( sum_{j in N_i} h_j W / sqrt(d_i d_j) )`
/// over an undirected edge list with self-loops on every node.
pub fn gnn_layer<T: Scalar>(
    g: &mut Graph<T>,
    h: Var,
    edges: &[(usize, usize)],
    w: Var,
    activation: Activation,
) -> Result<Var, AutodiffError> {
    let adj = NormAdjacency::from_edges(g.value(h).rows(), edges)?;
    gnn_layer_with(g, h, Rc::new(adj), w, activation)
}

/// [`gnn_layer`] with a prebuilt normalized adjacency.
pub fn gnn_layer_with<T: Scalar>(
    g: &mut Graph<T>,
    h: Var,
    adj: Rc<NormAdjacency<T>>,
    w: Var,
    activation: Activation,
) -> Result<Var, AutodiffError> {
    let hw = g.matmul(h, w)?;
    let agg = g.aggregate(hw, adj)?;
    Ok(activation.apply(g, agg))
}

/// Stable log-sum-exp of a vector, returned as a `1 x 1` node.
pub fn log_sum_exp<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var, AutodiffError> {
    let (r, c) = g.value(x).dims2();
    if r * c == 0 {
        return Err(AutodiffError::Empty("log_sum_exp"));
    }
    if r != 1 {
        return Err(AutodiffError::Shape {
            op: "log_sum_exp",
            lhs: vec![r, c],
            rhs: vec![1, c],
        });
    }
    g.log_sum_exp_rows(x)
}
