use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bisim::{Measurement, MeasurementKind};
use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

/// Below this value of `1 - cos^2` the angle is treated as flat.
const ANGLE_EPS: f64 = 1e-12;
/// Added after the final rectification of cosine encoders so a state whose
/// outputs all die still normalizes (to the uniform direction).
pub const RECTIFY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistanceKind {
    /// `1 - <u, v>` on nonnegative unit vectors.
    Cosine,
    /// `(|u|^2 + |v|^2) / 2 + beta * angle(u, v)`.
    MicoAngular { beta: f64 },
}

impl DistanceKind {
    pub fn mico() -> Self {
        Self::MicoAngular { beta: 0.1 }
    }

    pub fn distance(&self, u: &[f64], v: &[f64]) -> f64 {
        match *self {
            Self::Cosine => {
                if u == v {
                    return 0.0;
                }
                (1.0 - dot(u, v)).clamp(0.0, 1.0)
            }
            Self::MicoAngular { beta } => 0.5 * (dot(u, u) + dot(v, v)) + beta * angle(u, v),
        }
    }

    /// `(dD/du, dD/dv)`.
    pub fn grad(&self, u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match *self {
            Self::Cosine => (v.iter().map(|x| -x).collect(), u.iter().map(|x| -x).collect()),
            Self::MicoAngular { beta } => {
                let mut gu = u.to_vec();
                let mut gv = v.to_vec();
                let (nu, nv) = (dot(u, u).sqrt(), dot(v, v).sqrt());
                if nu > 0.0 && nv > 0.0 {
                    let c = (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0);
                    let s2 = 1.0 - c * c;
                    if s2 > ANGLE_EPS {
                        // d acos(c) = -dc / sqrt(1 - c^2)
                        let k = -beta / s2.sqrt();
                        for t in 0..u.len() {
                            gu[t] += k * (v[t] / (nu * nv) - c * u[t] / (nu * nu));
                            gv[t] += k * (u[t] / (nu * nv) - c * v[t] / (nv * nv));
                        }
                    }
                }
                (gu, gv)
            }
        }
    }
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn angle(u: &[f64], v: &[f64]) -> f64 {
    let (nu, nv) = (dot(u, u).sqrt(), dot(v, v).sqrt());
    if nu == 0.0 || nv == 0.0 || u == v {
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0).acos()
}

/// Multilayer perceptron with rectification between layers. Parameters are one
/// flat vector: for each layer, the row-major weight matrix then the bias.
///
/// Cosine encoders rectify and unit-normalize the output; MICo encoders return
/// the last affine output as is.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    sizes: Vec<usize>,
    pub params: Vec<f64>,
    pub kind: DistanceKind,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (post-rectification for hidden layers).
    inputs: Vec<Vec<f64>>,
    /// Affine output of each layer.
    pre: Vec<Vec<f64>>,
    /// Rectified output before normalization (cosine only).
    rectified: Vec<f64>,
    pub output: Vec<f64>,
}

impl ForwardCache {
    /// Affine output of every layer, first to last.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Encoder {
    /// Layer widths from input to output; at least one layer.
    pub fn new(sizes: Vec<usize>, params: Vec<f64>, kind: DistanceKind) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid("encoder needs at least two positive layer sizes"));
        }
        if params.len() != param_count(&sizes) {
            return Err(invalid(format!(
                "encoder with sizes {sizes:?} needs {} parameters, got {}",
                param_count(&sizes),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("encoder parameters must be finite"));
        }
        if let DistanceKind::MicoAngular { beta } = kind {
            if !(beta > 0.0) {
                return Err(invalid(format!("beta = {beta} must be positive")));
            }
        }
        Ok(Self { sizes, params, kind })
    }

    /// Uniform weights in `+-1/sqrt(fan_in)`, zero hidden biases, and for the
    /// cosine kind a positive output bias so no input maps to the zero vector.
    pub fn init(sizes: Vec<usize>, kind: DistanceKind, rng: &mut Rng) -> Result<Self> {
        let mut params = Vec::with_capacity(param_count(&sizes));
        let layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                params.push(rng.random_range(-bound..bound));
            }
            let bias = if l + 1 == layers && kind == DistanceKind::Cosine { 0.1 } else { 0.0 };
            params.extend(std::iter::repeat_n(bias, w[1]));
        }
        Self::new(sizes, params, kind)
    }

    /// One-hot input, one hidden layer of width `4 d`, output width `d`.
    pub fn tabular(n_states: usize, d: usize, kind: DistanceKind, rng: &mut Rng) -> Result<Self> {
        Self::init(vec![n_states, 4 * d, d], kind, rng)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap_or(&0)
    }

    fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut at = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let start = at;
                at += w[0] * w[1] + w[1];
                (start, start + w[0] * w[1])
            })
            .collect()
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.input_dim() {
            return Err(invalid(format!(
                "input has dimension {}, encoder expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let offsets = self.layer_offsets();
        let layers = offsets.len();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut act = x.to_vec();
        for (l, &(w_at, b_at)) in offsets.iter().enumerate() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &self.params[w_at + o * n_in..w_at + (o + 1) * n_in];
                    self.params[b_at + o] + dot(row, &act)
                })
                .collect();
            inputs.push(act);
            act = if l + 1 < layers {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
        }
        let (rectified, output) = match self.kind {
            DistanceKind::Cosine => {
                let y: Vec<f64> = act.iter().map(|v| v.max(0.0) + RECTIFY_FLOOR).collect();
                let norm = dot(&y, &y).sqrt();
                if !norm.is_finite() {
                    return Err(Error::Validation("embedding norm is not finite".into()));
                }
                let e = y.iter().map(|v| v / norm).collect();
                (y, e)
            }
            DistanceKind::MicoAngular { .. } => (Vec::new(), act),
        };
        Ok(ForwardCache {
            inputs,
            pre,
            rectified,
            output,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.output)
    }

    /// Accumulates `d(loss)/d(params)` into `grad` given `d(loss)/d(output)`.
    pub fn backward(&self, cache: &ForwardCache, g_out: &[f64], grad: &mut [f64]) {
        let mut g: Vec<f64> = match self.kind {
            DistanceKind::Cosine => {
                let e = &cache.output;
                let norm = dot(&cache.rectified, &cache.rectified).sqrt();
                let proj = dot(e, g_out);
                // through e = y / |y| and y = max(z, 0)
                let last = cache.pre.last().map(Vec::as_slice).unwrap_or_default();
                (0..e.len())
                    .map(|k| if last[k] > 0.0 { (g_out[k] - e[k] * proj) / norm } else { 0.0 })
                    .collect()
            }
            DistanceKind::MicoAngular { .. } => g_out.to_vec(),
        };
        let offsets = self.layer_offsets();
        for l in (0..offsets.len()).rev() {
            let (w_at, b_at) = offsets[l];
            let n_in = self.sizes[l];
            let input = &cache.inputs[l];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                grad[b_at + o] += go;
                for (i, &xi) in input.iter().enumerate() {
                    grad[w_at + o * n_in + i] += go * xi;
                }
            }
            if l == 0 {
                break;
            }
            let prev_pre = &cache.pre[l - 1];
            g = (0..n_in)
                .map(|i| {
                    if prev_pre[i] <= 0.0 {
                        return 0.0;
                    }
                    g.iter()
                        .enumerate()
                        .map(|(o, &go)| go * self.params[w_at + o * n_in + i])
                        .sum()
                })
                .collect();
        }
    }

    /// Embeddings of one-hot states `0..n` as rows.
    pub fn embed_states(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.input_dim();
        (0..n).map(|s| self.forward(&one_hot(n, s))).collect()
    }

    /// Checkpoint text: a shape header, then one parameter per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        let kind = match self.kind {
            DistanceKind::Cosine => "cosine".to_string(),
            DistanceKind::MicoAngular { beta } => format!("mico_angular {beta}"),
        };
        let _ = writeln!(out, "encoder {kind}");
        let _ = writeln!(out, "sizes {}", sizes.join(" "));
        for p in &self.params {
            let _ = writeln!(out, "{p}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |line: usize, msg: &str| Error::Parse {
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or_else(|| perr(1, "empty checkpoint"))?;
        let head: Vec<&str> = head.split_whitespace().collect();
        let kind = match head.as_slice() {
            ["encoder", "cosine"] => DistanceKind::Cosine,
            ["encoder", "mico_angular", beta] => DistanceKind::MicoAngular {
                beta: beta.parse().map_err(|_| perr(1, "bad beta"))?,
            },
            _ => return Err(perr(1, "expected `encoder <kind>`")),
        };
        let (ln, shape) = lines.next().ok_or_else(|| perr(2, "missing sizes line"))?;
        let mut toks = shape.split_whitespace();
        if toks.next() != Some("sizes") {
            return Err(perr(ln + 1, "expected `sizes ...`"));
        }
        let sizes = toks
            .map(|t| t.parse().map_err(|_| perr(ln + 1, "bad layer size")))
            .collect::<Result<Vec<usize>>>()?;
        let params = lines
            .map(|(k, l)| l.trim().parse().map_err(|_| perr(k + 1, "bad parameter")))
            .collect::<Result<Vec<f64>>>()?;
        Self::new(sizes, params, kind)
    }
}

pub fn one_hot(n: usize, s: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    x[s] = 1.0;
    x
}

/// `G_phi` over the given embeddings.
pub fn distance_table(embeddings: &[Vec<f64>], kind: DistanceKind) -> Measurement {
    let n = embeddings.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let d = kind.distance(&embeddings[i], &embeddings[j]);
            g[(i, j)] = d;
            g[(j, i)] = d;
        }
    }
    Measurement::new(g, MeasurementKind::Learned)
}

/// Number of singular values at least `delta` times the largest.
pub fn effective_dimension(embeddings: &[Vec<f64>], delta: f64) -> usize {
    let n = embeddings.len();
    let d = embeddings.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return 0;
    }
    let m = DMatrix::from_fn(n, d, |i, j| embeddings[i][j]);
    let sv = m.singular_values();
    let top = sv.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s >= delta * top).count()
}
