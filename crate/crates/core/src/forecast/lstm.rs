use std::ops::Range;

use super::ModelSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerLayout {
    pub input: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub hidden: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub layers: Vec<LayerLayout>,
    pub head_weights: Range<usize>,
    pub head_bias: Range<usize>,
    pub total: usize,
}

impl Layout {
    pub fn new(spec: &ModelSpec) -> Self {
        let h = spec.hidden_size;
        let mut offset = 0;
        let mut layers = Vec::with_capacity(spec.lstm_layers);
        for l in 0..spec.lstm_layers {
            let input = spec.layer_input(l);
            let w = 4 * h * (input + h);
            let weights = offset..offset + w;
            offset += w;
            let bias = offset..offset + 4 * h;
            offset += 4 * h;
            layers.push(LayerLayout { input, weights, bias });
        }
        let head_weights = offset..offset + spec.horizon * h;
        offset += spec.horizon * h;
        let head_bias = offset..offset + spec.horizon;
        offset += spec.horizon;
        Self {
            hidden: h,
            lookback: spec.lookback,
            horizon: spec.horizon,
            layers,
            head_weights,
            head_bias,
            total: offset,
        }
    }
}

/// Per-layer activations kept for the backward pass.
#[derive(Debug, Clone)]
struct LayerCache {
    /// Hidden states h_0..h_P, `(P + 1) x H`; h_0 = 0.
    h: Vec<f64>,
    /// Cell states c_0..c_P, `(P + 1) x H`; c_0 = 0.
    c: Vec<f64>,
    /// Post-activation gates (i, f, g, o) per step, `P x 4H`.
    gates: Vec<f64>,
    /// tanh(c_t) per step, `P x H`.
    tanh_c: Vec<f64>,
}

/// Scratch buffers for one sample; reused across samples to avoid allocation.
#[derive(Debug, Clone)]
pub struct Workspace {
    layers: Vec<LayerCache>,
    dz: Vec<f64>,
    dh_rec: Vec<f64>,
    dc_rec: Vec<f64>,
    dv: Vec<f64>,
    /// Gradient flowing into the current layer's outputs, `P x H`.
    dh_above: Vec<f64>,
    dh_below: Vec<f64>,
}

impl Workspace {
    pub fn new(spec: &ModelSpec) -> Self {
        let (h, p) = (spec.hidden_size, spec.lookback);
        let layers = (0..spec.lstm_layers)
            .map(|_| LayerCache {
                h: vec![0.0; (p + 1) * h],
                c: vec![0.0; (p + 1) * h],
                gates: vec![0.0; p * 4 * h],
                tanh_c: vec![0.0; p * h],
            })
            .collect();
        let widest = spec.input_channels.max(h) + h;
        Self {
            layers,
            dz: vec![0.0; 4 * h],
            dh_rec: vec![0.0; h],
            dc_rec: vec![0.0; h],
            dv: vec![0.0; widest],
            dh_above: vec![0.0; p * h],
            dh_below: vec![0.0; p * spec.input_channels.max(h)],
        }
    }

    /// Final hidden state of the top layer after the last `forward`.
    pub fn top_hidden(&self) -> &[f64] {
        let top = self.layers.last().expect("at least one layer");
        let h = self.dh_rec.len();
        &top.h[top.h.len() - h..]
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Runs the network on `input` (`P x channels`, time-major) and writes the
/// `horizon` outputs to `out`, caching activations in `ws`.
pub fn forward(params: &[f64], layout: &Layout, input: &[f64], ws: &mut Workspace, out: &mut [f64]) {
    let hsz = layout.hidden;
    let p = layout.lookback;
    for (l, spec) in layout.layers.iter().enumerate() {
        let (below, rest) = ws.layers.split_at_mut(l);
        let cache = &mut rest[0];
        let w = &params[spec.weights.clone()];
        let b = &params[spec.bias.clone()];
        let cols = spec.input + hsz;
        for t in 0..p {
            let x: &[f64] = if l == 0 {
                &input[t * spec.input..(t + 1) * spec.input]
            } else {
                let prev = &below[l - 1].h;
                &prev[(t + 1) * hsz..(t + 2) * hsz]
            };
            let (h_hist, h_next) = cache.h.split_at_mut((t + 1) * hsz);
            let h_prev = &h_hist[t * hsz..];
            let gates = &mut cache.gates[t * 4 * hsz..(t + 1) * 4 * hsz];
            for r in 0..4 * hsz {
                let row = &w[r * cols..(r + 1) * cols];
                gates[r] = b[r] + dot(&row[..spec.input], x) + dot(&row[spec.input..], h_prev);
            }
            let (c_hist, c_next) = cache.c.split_at_mut((t + 1) * hsz);
            let c_prev = &c_hist[t * hsz..];
            let tanh_c = &mut cache.tanh_c[t * hsz..(t + 1) * hsz];
            for j in 0..hsz {
                let i = sigmoid(gates[j]);
                let f = sigmoid(gates[hsz + j]);
                let g = gates[2 * hsz + j].tanh();
                let o = sigmoid(gates[3 * hsz + j]);
                gates[j] = i;
                gates[hsz + j] = f;
                gates[2 * hsz + j] = g;
                gates[3 * hsz + j] = o;
                let c = f * c_prev[j] + i * g;
                c_next[j] = c;
                let tc = c.tanh();
                tanh_c[j] = tc;
                h_next[j] = o * tc;
            }
        }
    }
    let top = ws.top_hidden();
    let hw = &params[layout.head_weights.clone()];
    let hb = &params[layout.head_bias.clone()];
    for (k, o) in out.iter_mut().enumerate() {
        *o = hb[k] + dot(&hw[k * hsz..(k + 1) * hsz], top);
    }
}

/// Accumulates into `grad` the gradient of a loss whose derivative with respect
/// to the outputs of the last `forward` on `input` is `d_out`.
pub fn backward(params: &[f64], layout: &Layout, input: &[f64], ws: &mut Workspace, d_out: &[f64], grad: &mut [f64]) {
    let hsz = layout.hidden;
    let p = layout.lookback;

    // Head.
    {
        let top = ws.top_hidden().to_vec();
        let hw = &params[layout.head_weights.clone()];
        let (gw, gb) = (layout.head_weights.start, layout.head_bias.start);
        ws.dh_above.iter_mut().for_each(|v| *v = 0.0);
        let last = &mut ws.dh_above[(p - 1) * hsz..p * hsz];
        for (k, &dy) in d_out.iter().enumerate() {
            grad[gb + k] += dy;
            axpy(dy, &top, &mut grad[gw + k * hsz..gw + (k + 1) * hsz]);
            axpy(dy, &hw[k * hsz..(k + 1) * hsz], last);
        }
    }

    for l in (0..layout.layers.len()).rev() {
        let spec = &layout.layers[l];
        let cols = spec.input + hsz;
        let w = &params[spec.weights.clone()];
        let (gw0, gb0) = (spec.weights.start, spec.bias.start);
        ws.dh_rec.iter_mut().for_each(|v| *v = 0.0);
        ws.dc_rec.iter_mut().for_each(|v| *v = 0.0);
        ws.dh_below[..p * spec.input].iter_mut().for_each(|v| *v = 0.0);
        for t in (0..p).rev() {
            let cache = &ws.layers[l];
            let gates = &cache.gates[t * 4 * hsz..(t + 1) * 4 * hsz];
            let tanh_c = &cache.tanh_c[t * hsz..(t + 1) * hsz];
            let c_prev = &cache.c[t * hsz..(t + 1) * hsz];
            let h_prev = &cache.h[t * hsz..(t + 1) * hsz];
            for j in 0..hsz {
                let (i, f, g, o) = (gates[j], gates[hsz + j], gates[2 * hsz + j], gates[3 * hsz + j]);
                let dh = ws.dh_above[t * hsz + j] + ws.dh_rec[j];
                let tc = tanh_c[j];
                let dc = ws.dc_rec[j] + dh * o * (1.0 - tc * tc);
                ws.dz[j] = dc * g * i * (1.0 - i);
                ws.dz[hsz + j] = dc * c_prev[j] * f * (1.0 - f);
                ws.dz[2 * hsz + j] = dc * i * (1.0 - g * g);
                ws.dz[3 * hsz + j] = dh * tc * o * (1.0 - o);
                ws.dc_rec[j] = dc * f;
            }
            let x: &[f64] = if l == 0 {
                &input[t * spec.input..(t + 1) * spec.input]
            } else {
                &ws.layers[l - 1].h[(t + 1) * hsz..(t + 2) * hsz]
            };
            let dv = &mut ws.dv[..cols];
            dv.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..4 * hsz {
                let dz = ws.dz[r];
                if dz == 0.0 {
                    continue;
                }
                grad[gb0 + r] += dz;
                let g_row = &mut grad[gw0 + r * cols..gw0 + (r + 1) * cols];
                axpy(dz, x, &mut g_row[..spec.input]);
                axpy(dz, h_prev, &mut g_row[spec.input..]);
                axpy(dz, &w[r * cols..(r + 1) * cols], dv);
            }
            ws.dh_below[t * spec.input..(t + 1) * spec.input].copy_from_slice(&dv[..spec.input]);
            ws.dh_rec.copy_from_slice(&dv[spec.input..]);
        }
        if l > 0 {
            let (above, below) = (&mut ws.dh_above, &ws.dh_below);
            above.copy_from_slice(&below[..p * hsz]);
        }
    }
}
