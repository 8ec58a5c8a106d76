use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Affine layer `y = x W + b` with `W` stored `(fan_in, fan_out)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut dyn RngCore) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..=limit));
        Self {
            w,
            b: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    fn sq_norm_w(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum()
    }

    fn sq_norm_b(&self) -> f64 {
        self.b.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// One affine output per action.
    Plain,
    /// Value and advantage heads combined as `V + A - max A`.
    Dueling,
}

/// Which parameters enter the robustness penalty norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegMode {
    /// Weights of the value head only (bias excluded).
    LastLayer,
    /// Every parameter on the value path except the value-head bias.
    AllButBias,
}

impl fmt::Display for RegMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegMode::LastLayer => f.write_str("last-layer"),
            RegMode::AllButBias => f.write_str("all-but-bias"),
        }
    }
}

impl FromStr for RegMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last-layer" => Ok(RegMode::LastLayer),
            "all-but-bias" => Ok(RegMode::AllButBias),
            other => Err(Error::config(format!("unknown reg_mode `{other}`"))),
        }
    }
}

/// ReLU trunk followed by a linear head.
///
/// `layers` holds the trunk layers first, then the head: one layer for a
/// plain head, `[value, advantage]` for a dueling head. An empty trunk
/// feeds the input straight into the head.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    layers: Vec<Dense>,
    n_trunk: usize,
    head: HeadKind,
    n_actions: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub q: Array2<f64>,
    pub v: Array1<f64>,
    pub a: Array2<f64>,
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every trunk layer plus the trunk output (`n_trunk + 1` entries).
    hidden: Vec<Array2<f64>>,
    /// Pre-activations of every trunk layer.
    pre: Vec<Array2<f64>>,
    adv_argmax: Vec<usize>,
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn global_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.sq_norm_w() + l.sq_norm_b())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for l in self.layers.iter_mut() {
            l.w.mapv_inplace(|v| v * factor);
            l.b.mapv_inplace(|v| v * factor);
        }
    }

    /// Rescales so the global ℓ2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.w.iter());
        out.extend(l.b.iter());
    }
    out
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn row_argmax(a: &Array2<f64>) -> Vec<usize> {
    a.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

impl QNetwork {
    /// `widths` = `[input, hidden_1, ..., hidden_k]`; the head maps the last
    /// width to `n_actions` outputs.
    pub fn new(
        widths: &[usize],
        n_actions: usize,
        head: HeadKind,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        Self::build(widths, n_actions, head, |i, o| Dense::glorot(i, o, rng))
    }

    pub fn zeros(widths: &[usize], n_actions: usize, head: HeadKind) -> Result<Self> {
        Self::build(widths, n_actions, head, Dense::zeros)
    }

    fn build(
        widths: &[usize],
        n_actions: usize,
        head: HeadKind,
        mut make: impl FnMut(usize, usize) -> Dense,
    ) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) || n_actions == 0 {
            return Err(Error::config("layer widths and n_actions must be positive"));
        }
        let mut layers: Vec<Dense> = widths.windows(2).map(|w| make(w[0], w[1])).collect();
        let n_trunk = layers.len();
        let last = *widths.last().unwrap();
        match head {
            HeadKind::Plain => layers.push(make(last, n_actions)),
            HeadKind::Dueling => {
                layers.push(make(last, 1));
                layers.push(make(last, n_actions));
            }
        }
        Ok(Self {
            layers,
            n_trunk,
            head,
            n_actions,
        })
    }

    /// Assembles a network from explicit layers.
    pub fn from_layers(layers: Vec<Dense>, n_trunk: usize, head: HeadKind) -> Result<Self> {
        let n_head = match head {
            HeadKind::Plain => 1,
            HeadKind::Dueling => 2,
        };
        if layers.len() != n_trunk + n_head {
            return Err(Error::contract("layer count does not match head kind"));
        }
        for pair in layers[..n_trunk].windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Dimension {
                    expected: pair[0].fan_out(),
                    got: pair[1].fan_in(),
                });
            }
        }
        for l in &layers {
            if l.b.len() != l.fan_out() {
                return Err(Error::Dimension {
                    expected: l.fan_out(),
                    got: l.b.len(),
                });
            }
        }
        let trunk_out = if n_trunk > 0 {
            layers[n_trunk - 1].fan_out()
        } else {
            layers[0].fan_in()
        };
        for l in &layers[n_trunk..] {
            if l.fan_in() != trunk_out {
                return Err(Error::Dimension {
                    expected: trunk_out,
                    got: l.fan_in(),
                });
            }
        }
        let n_actions = layers.last().unwrap().fan_out();
        if head == HeadKind::Dueling && layers[n_trunk].fan_out() != 1 {
            return Err(Error::contract("value head must have a single output"));
        }
        Ok(Self {
            layers,
            n_trunk,
            head,
            n_actions,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn n_trunk(&self) -> usize {
        self.n_trunk
    }

    /// `[input, hidden_1, ..., hidden_k]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers[..self.n_trunk].iter().map(Dense::fan_out));
        w
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Dimension {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter();
        for l in self.layers.iter_mut() {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<ForwardOutput> {
        self.forward_cached(x).map(|(out, _)| out)
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<(ForwardOutput, ForwardCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let mut hidden = Vec::with_capacity(self.n_trunk + 1);
        let mut pre = Vec::with_capacity(self.n_trunk);
        let mut h = x.to_owned();
        for layer in &self.layers[..self.n_trunk] {
            let z = layer.forward(&h);
            let next = z.mapv(relu);
            hidden.push(h);
            pre.push(z);
            h = next;
        }
        let (out, adv_argmax) = match self.head {
            HeadKind::Plain => {
                let q = self.layers[self.n_trunk].forward(&h);
                let idx = row_argmax(&q);
                let v = Array1::from_iter(idx.iter().enumerate().map(|(i, &j)| q[[i, j]]));
                let a = &q - &v.view().insert_axis(Axis(1));
                (ForwardOutput { q, v, a }, idx)
            }
            HeadKind::Dueling => {
                let v = self.layers[self.n_trunk].forward(&h).column(0).to_owned();
                let a = self.layers[self.n_trunk + 1].forward(&h);
                let idx = row_argmax(&a);
                let mut q = a.clone();
                for (i, mut row) in q.rows_mut().into_iter().enumerate() {
                    let amax = a[[i, idx[i]]];
                    row.mapv_inplace(|aij| v[i] + (aij - amax));
                }
                (ForwardOutput { q, v, a }, idx)
            }
        };
        hidden.push(h);
        Ok((
            out,
            ForwardCache {
                hidden,
                pre,
                adv_argmax,
            },
        ))
    }

    /// Gradients of a loss given `dL/dQ` (`batch x n_actions`).
    pub fn backward(&self, cache: &ForwardCache, d_q: &Array2<f64>) -> Result<Gradients> {
        let batch = cache.hidden[0].nrows();
        if d_q.dim() != (batch, self.n_actions) {
            return Err(Error::contract(format!(
                "loss gradient has shape {:?}, expected ({batch}, {})",
                d_q.dim(),
                self.n_actions
            )));
        }
        let mut grads = self.zero_gradients();
        let h = &cache.hidden[self.n_trunk];
        let mut d_h = match self.head {
            HeadKind::Plain => {
                let out = &self.layers[self.n_trunk];
                grads.layers[self.n_trunk].w = h.t().dot(d_q);
                grads.layers[self.n_trunk].b = d_q.sum_axis(Axis(0));
                d_q.dot(&out.w.t())
            }
            HeadKind::Dueling => {
                let d_v = d_q.sum_axis(Axis(1)).insert_axis(Axis(1));
                let mut d_a = d_q.clone();
                for (i, &m) in cache.adv_argmax.iter().enumerate() {
                    d_a[[i, m]] -= d_v[[i, 0]];
                }
                let (vl, al) = (&self.layers[self.n_trunk], &self.layers[self.n_trunk + 1]);
                grads.layers[self.n_trunk].w = h.t().dot(&d_v);
                grads.layers[self.n_trunk].b = d_v.sum_axis(Axis(0));
                grads.layers[self.n_trunk + 1].w = h.t().dot(&d_a);
                grads.layers[self.n_trunk + 1].b = d_a.sum_axis(Axis(0));
                d_v.dot(&vl.w.t()) + d_a.dot(&al.w.t())
            }
        };
        for k in (0..self.n_trunk).rev() {
            let z = &cache.pre[k];
            ndarray::Zip::from(&mut d_h).and(z).for_each(|d, &zv| {
                if zv <= 0.0 {
                    *d = 0.0;
                }
            });
            grads.layers[k].w = cache.hidden[k].t().dot(&d_h);
            grads.layers[k].b = d_h.sum_axis(Axis(0));
            if k > 0 {
                d_h = d_h.dot(&self.layers[k].w.t());
            }
        }
        Ok(grads)
    }

    /// Norm entering the robustness penalty. Requires a dueling head.
    pub fn value_weight_norm(&self, mode: RegMode) -> Result<f64> {
        if self.head != HeadKind::Dueling {
            return Err(Error::contract("penalty norm requires a value head"));
        }
        let value = &self.layers[self.n_trunk];
        let sq = match mode {
            RegMode::LastLayer => value.sq_norm_w(),
            RegMode::AllButBias => {
                self.layers[..self.n_trunk]
                    .iter()
                    .map(|l| l.sq_norm_w() + l.sq_norm_b())
                    .sum::<f64>()
                    + value.sq_norm_w()
            }
        };
        Ok(sq.sqrt())
    }

    /// Q-values for a single input row.
    pub fn q_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| Error::contract(e.to_string()))?;
        Ok(self.forward(&m)?.q.row(0).to_vec())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// Slice of the head's advantage weights; exposed for inspection.
    pub fn advantage_layer(&self) -> Option<&Dense> {
        match self.head {
            HeadKind::Dueling => Some(&self.layers[self.n_trunk + 1]),
            HeadKind::Plain => None,
        }
    }

    pub fn value_layer(&self) -> Option<&Dense> {
        match self.head {
            HeadKind::Dueling => Some(&self.layers[self.n_trunk]),
            HeadKind::Plain => None,
        }
    }

    /// Row `i` of a batch output as a plain vector.
    pub fn row(m: &Array2<f64>, i: usize) -> Vec<f64> {
        m.slice(s![i, ..]).to_vec()
    }
}
