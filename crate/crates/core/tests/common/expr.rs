//! Random compositions of tape primitives, checked against central finite
//! differences.

use std::rc::Rc;

use rand::Rng;
use synthgrid::autodiff::{bce, mse, Tape, Var};
use synthgrid::Tensor;

pub const ROWS: usize = 3;
pub const COLS: usize = 2;

/// Shape-preserving unary nodes over `[ROWS, COLS]` values. Primitives that
/// change shape are wrapped so the node maps back to `[ROWS, COLS]`.
#[derive(Debug, Clone, Copy)]
pub enum Unary {
    Neg,
    Scale,
    AddScalar,
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Ln,
    Sqrt,
    Square,
    Clamp,
    DoubleTranspose,
    MatmulW,
    AddBias,
    SumRows,
    SumCols,
    MeanRows,
    SumExpand,
    MeanExpand,
    SwapCols,
    Gather,
    GatherScatter,
    RowNorm,
    Gram,
}

pub const UNARY: [Unary; 24] = [
    Unary::Neg,
    Unary::Scale,
    Unary::AddScalar,
    Unary::Relu,
    Unary::Sigmoid,
    Unary::Tanh,
    Unary::Exp,
    Unary::Ln,
    Unary::Sqrt,
    Unary::Square,
    Unary::Clamp,
    Unary::DoubleTranspose,
    Unary::MatmulW,
    Unary::AddBias,
    Unary::SumRows,
    Unary::SumCols,
    Unary::MeanRows,
    Unary::SumExpand,
    Unary::MeanExpand,
    Unary::SwapCols,
    Unary::Gather,
    Unary::GatherScatter,
    Unary::RowNorm,
    Unary::Gram,
];

#[derive(Debug, Clone, Copy)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

pub const BINARY: [Binary; 4] = [Binary::Add, Binary::Sub, Binary::Mul, Binary::Div];

/// Reductions to a scalar loss.
#[derive(Debug, Clone, Copy)]
pub enum Loss {
    Sum,
    Mean,
    Mse,
    Bce,
}

pub const LOSSES: [Loss; 4] = [Loss::Sum, Loss::Mean, Loss::Mse, Loss::Bce];

#[derive(Debug, Clone)]
pub enum Node {
    /// Leaf 0 is `x`, leaf 1 is `y`.
    Leaf(usize),
    Unary(Unary, Box<Node>),
    Binary(Binary, Box<Node>, Box<Node>),
}

impl Node {
    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Unary(_, a) => 1 + a.depth(),
            Node::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }
}

/// A composition plus its inputs.
#[derive(Debug, Clone)]
pub struct Composition {
    pub root: Node,
    pub loss: Loss,
    /// `x`, `y` (`[ROWS, COLS]`), `w` (`[COLS, COLS]`), `b` (`[1, COLS]`).
    pub inputs: Vec<Tensor>,
}

fn random_node(rng: &mut impl Rng, depth: usize) -> Node {
    if depth == 0 || rng.random_bool(0.2) {
        return Node::Leaf(rng.random_range(0..2));
    }
    if rng.random_bool(0.7) {
        let op = UNARY[rng.random_range(0..UNARY.len())];
        Node::Unary(op, Box::new(random_node(rng, depth - 1)))
    } else {
        let op = BINARY[rng.random_range(0..BINARY.len())];
        Node::Binary(op, Box::new(random_node(rng, depth - 1)), Box::new(random_node(rng, depth - 1)))
    }
}

/// Composition number `k`: its root cycles through every unary and binary
/// node kind, so a batch of at least 28 covers all primitives.
pub fn composition(k: usize, max_depth: usize, rng: &mut impl Rng) -> Composition {
    let kinds = UNARY.len() + BINARY.len();
    let sub = max_depth.saturating_sub(1);
    let root = match k % kinds {
        i if i < UNARY.len() => Node::Unary(UNARY[i], Box::new(random_node(rng, sub))),
        i => Node::Binary(
            BINARY[i - UNARY.len()],
            Box::new(random_node(rng, sub)),
            Box::new(random_node(rng, sub)),
        ),
    };
    let inputs = vec![
        Tensor::uniform([ROWS, COLS], -1.0, 1.0, rng),
        Tensor::uniform([ROWS, COLS], -1.0, 1.0, rng),
        Tensor::uniform([COLS, COLS], -1.0, 1.0, rng),
        Tensor::uniform([1, COLS], -1.0, 1.0, rng),
    ];
    Composition {
        root,
        loss: LOSSES[k % LOSSES.len()],
        inputs,
    }
}

fn eval<'t>(node: &Node, v: &[Var<'t, f64>]) -> Var<'t, f64> {
    let tape = v[0].tape();
    match node {
        Node::Leaf(i) => v[*i],
        Node::Binary(op, a, b) => {
            let (a, b) = (eval(a, v), eval(b, v));
            match op {
                Binary::Add => a.add(b),
                Binary::Sub => a.sub(b),
                Binary::Mul => a.mul(b),
                Binary::Div => a.div(b.square().add_scalar(1.0)),
            }
            .unwrap()
        }
        Node::Unary(op, a) => {
            let a = eval(a, v);
            match op {
                Unary::Neg => a.neg(),
                Unary::Scale => a.scale(0.7),
                Unary::AddScalar => a.add_scalar(0.3),
                Unary::Relu => a.relu(),
                Unary::Sigmoid => a.sigmoid(),
                Unary::Tanh => a.tanh(),
                Unary::Exp => a.tanh().exp(),
                Unary::Ln => a.square().add_scalar(0.5).ln(),
                Unary::Sqrt => a.square().add_scalar(0.5).sqrt(),
                Unary::Square => a.square(),
                Unary::Clamp => a.clamp(-0.8, 0.8),
                Unary::DoubleTranspose => a.t().t(),
                Unary::MatmulW => a.matmul(v[2]).unwrap(),
                Unary::AddBias => a.add_bias(v[3]).unwrap(),
                Unary::SumRows => a.sum_rows().broadcast_rows(ROWS).unwrap(),
                Unary::SumCols => a.sum_cols().broadcast_cols(COLS).unwrap(),
                Unary::MeanRows => a.mean_rows().broadcast_rows(ROWS).unwrap(),
                Unary::SumExpand => a.mul(a.sum().expand([ROWS, COLS]).unwrap()).unwrap(),
                Unary::MeanExpand => a.sub(a.mean().expand([ROWS, COLS]).unwrap()).unwrap(),
                Unary::SwapCols => {
                    let left = a.slice_cols(0, 1).unwrap();
                    let right = a.slice_cols(1, COLS).unwrap();
                    tape.concat_cols(&[right, left]).unwrap()
                }
                Unary::Gather => a.gather_rows(Rc::from(vec![2, 0, 1])),
                Unary::GatherScatter => a.gather_rows(Rc::from(vec![0, 2, 2])).scatter_rows(Rc::from(vec![1, 0, 2]), ROWS),
                Unary::RowNorm => a.add_scalar(0.5).l2_norm_rows().broadcast_cols(COLS).unwrap(),
                Unary::Gram => a.matmul(a.t()).unwrap().matmul(a).unwrap().scale(0.2),
            }
        }
    }
}

/// Scalar loss of the composition on a tape whose first leaves are
/// `inputs`.
pub fn forward<'t>(c: &Composition, leaves: &[Var<'t, f64>]) -> Var<'t, f64> {
    let out = eval(&c.root, leaves);
    let tape = out.tape();
    match c.loss {
        Loss::Sum => out.sum(),
        Loss::Mean => out.mean(),
        Loss::Mse => mse(out, tape.leaf(Tensor::full([ROWS, COLS], 0.25))).unwrap(),
        Loss::Bce => {
            let y = Tensor::new([ROWS, COLS], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
            bce(out.sigmoid(), tape.leaf(y)).unwrap()
        }
    }
}

pub fn value(c: &Composition, inputs: &[Tensor]) -> f64 {
    let tape = Tape::<f64>::new();
    let leaves: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    forward(c, &leaves).item()
}

/// Largest relative error between reverse-mode and central-difference
/// gradients over every input entry, using `|g - fd| / max(|g|, |fd|, 1e-3)`.
pub fn max_relative_error(c: &Composition, h: f64) -> f64 {
    let tape = Tape::<f64>::new();
    let leaves: Vec<_> = c.inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = forward(c, &leaves);
    let grads = tape.backward(loss, &leaves).unwrap();
    let mut worst = 0.0f64;
    for (k, g) in grads.iter().enumerate() {
        for e in 0..g.len() {
            let mut plus = c.inputs.clone();
            plus[k].data_mut()[e] += h;
            let mut minus = c.inputs.clone();
            minus[k].data_mut()[e] -= h;
            let fd = (value(c, &plus) - value(c, &minus)) / (2.0 * h);
            let an = g.data()[e];
            let err = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}
