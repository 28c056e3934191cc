//! Batched LSTM cell with exact backward pass.
//!
//! Rows are batch entries. Gate columns are laid out `[input, forget, output, candidate]`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

/// Weights of one LSTM layer (one direction).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `input_dim × 4H`
    pub w_x: Array2<f64>,
    /// `H × 4H`
    pub w_h: Array2<f64>,
    /// `4H`
    pub bias: Array1<f64>,
}

impl LstmLayer {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w_x: Array2::zeros((input_dim, 4 * hidden)),
            w_h: Array2::zeros((hidden, 4 * hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.nrows()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Everything the backward pass needs from one step.
#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// Post-activation gates, `B × 4H`.
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
    /// 1.0 where the step is real, 0.0 where the state is carried through.
    mask: Option<Array1<f64>>,
}

/// One LSTM step: returns `(h, c)`.
pub fn lstm_step(
    layer: &LstmLayer,
    x: ArrayView2<'_, f64>,
    h_prev: ArrayView2<'_, f64>,
    c_prev: ArrayView2<'_, f64>,
) -> (Array2<f64>, Array2<f64>) {
    let (h, c, _) = lstm_forward(layer, x, h_prev, c_prev, None);
    (h, c)
}

pub(crate) fn lstm_forward(
    layer: &LstmLayer,
    x: ArrayView2<'_, f64>,
    h_prev: ArrayView2<'_, f64>,
    c_prev: ArrayView2<'_, f64>,
    mask: Option<&Array1<f64>>,
) -> (Array2<f64>, Array2<f64>, LstmCache) {
    let hidden = layer.hidden();
    let mut z = x.dot(&layer.w_x) + h_prev.dot(&layer.w_h) + &layer.bias;
    z.slice_mut(s![.., ..3 * hidden]).mapv_inplace(sigmoid);
    z.slice_mut(s![.., 3 * hidden..]).mapv_inplace(f64::tanh);
    let gates = z;
    let i = gates.slice(s![.., ..hidden]);
    let f = gates.slice(s![.., hidden..2 * hidden]);
    let o = gates.slice(s![.., 2 * hidden..3 * hidden]);
    let g = gates.slice(s![.., 3 * hidden..]);

    let mut c = &f * &c_prev + &i * &g;
    let tanh_c = c.mapv(f64::tanh);
    let mut h = &o * &tanh_c;
    if let Some(m) = mask {
        blend_rows(&mut h, h_prev, m);
        blend_rows(&mut c, c_prev, m);
    }
    let cache = LstmCache {
        x: x.to_owned(),
        h_prev: h_prev.to_owned(),
        c_prev: c_prev.to_owned(),
        gates,
        tanh_c,
        mask: mask.cloned(),
    };
    (h, c, cache)
}

// new = m * new + (1 - m) * old, row-wise.
fn blend_rows(new: &mut Array2<f64>, old: ArrayView2<'_, f64>, mask: &Array1<f64>) {
    for ((mut row, old_row), &m) in new.outer_iter_mut().zip(old.outer_iter()).zip(mask) {
        if m == 0.0 {
            row.assign(&old_row);
        }
    }
}

fn scale_rows(a: &Array2<f64>, mask: &Array1<f64>, keep: bool) -> Array2<f64> {
    let mut out = a.clone();
    for (mut row, &m) in out.outer_iter_mut().zip(mask) {
        let factor = if keep { m } else { 1.0 - m };
        if factor != 1.0 {
            row.mapv_inplace(|v| v * factor);
        }
    }
    out
}

/// Backpropagates one step, accumulating weight gradients into `grads`.
/// Returns `(dx, dh_prev, dc_prev)`.
pub(crate) fn lstm_backward(
    layer: &LstmLayer,
    grads: &mut LstmLayer,
    cache: &LstmCache,
    dh_out: &Array2<f64>,
    dc_out: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let hidden = layer.hidden();
    let (dh, dc, carry_h, carry_c) = match &cache.mask {
        Some(m) => (
            scale_rows(dh_out, m, true),
            scale_rows(dc_out, m, true),
            Some(scale_rows(dh_out, m, false)),
            Some(scale_rows(dc_out, m, false)),
        ),
        None => (dh_out.clone(), dc_out.clone(), None, None),
    };
    let gates = &cache.gates;
    let i = gates.slice(s![.., ..hidden]);
    let f = gates.slice(s![.., hidden..2 * hidden]);
    let o = gates.slice(s![.., 2 * hidden..3 * hidden]);
    let g = gates.slice(s![.., 3 * hidden..]);

    // dc_total = dc + dh * o * (1 - tanh(c)^2)
    let mut dc_total = dc;
    Zip::from(&mut dc_total)
        .and(&dh)
        .and(&o)
        .and(&cache.tanh_c)
        .for_each(|dct, &dh, &o, &tc| *dct += dh * o * (1.0 - tc * tc));

    let batch = dh.nrows();
    let mut dz = Array2::<f64>::zeros((batch, 4 * hidden));
    Zip::from(dz.slice_mut(s![.., ..hidden]))
        .and(&dc_total)
        .and(&i)
        .and(&g)
        .for_each(|d, &dct, &i, &g| *d = dct * g * i * (1.0 - i));
    Zip::from(dz.slice_mut(s![.., hidden..2 * hidden]))
        .and(&dc_total)
        .and(&f)
        .and(&cache.c_prev)
        .for_each(|d, &dct, &f, &cp| *d = dct * cp * f * (1.0 - f));
    Zip::from(dz.slice_mut(s![.., 2 * hidden..3 * hidden]))
        .and(&dh)
        .and(&o)
        .and(&cache.tanh_c)
        .for_each(|d, &dh, &o, &tc| *d = dh * tc * o * (1.0 - o));
    Zip::from(dz.slice_mut(s![.., 3 * hidden..]))
        .and(&dc_total)
        .and(&i)
        .and(&g)
        .for_each(|d, &dct, &i, &g| *d = dct * i * (1.0 - g * g));

    grads.w_x += &cache.x.t().dot(&dz);
    grads.w_h += &cache.h_prev.t().dot(&dz);
    grads.bias += &dz.sum_axis(Axis(0));

    let dx = dz.dot(&layer.w_x.t());
    let mut dh_prev = dz.dot(&layer.w_h.t());
    let mut dc_prev = dc_total * &f;
    if let Some(ch) = carry_h {
        dh_prev += &ch;
    }
    if let Some(cc) = carry_c {
        dc_prev += &cc;
    }
    (dx, dh_prev, dc_prev)
}
