//! Small dense-matrix helpers over flat row-major slices.
//!
//! Matrices are stored row-major as `out_dim x in_dim`, matching the layout
//! used by the parameter vector. Everything is f64.

/// y = W x + b, W: out x in.
pub fn affine(w: &[f64], b: &[f64], x: &[f64], out_dim: usize, in_dim: usize, y: &mut [f64]) {
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(x.len(), in_dim);
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = b[o];
        for i in 0..in_dim {
            acc += row[i] * x[i];
        }
        y[o] = acc;
    }
}

/// dx += W^T dy, W: out x in.
pub fn matvec_t_acc(w: &[f64], dy: &[f64], out_dim: usize, in_dim: usize, dx: &mut [f64]) {
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let g = dy[o];
        for i in 0..in_dim {
            dx[i] += g * row[i];
        }
    }
}

/// dW += dy x^T, dW: out x in.
pub fn outer_acc(dy: &[f64], x: &[f64], out_dim: usize, in_dim: usize, dw: &mut [f64]) {
    for o in 0..out_dim {
        let g = dy[o];
        let row = &mut dw[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            row[i] += g * x[i];
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Numerically stabilized in-place softmax.
pub fn softmax_inplace(x: &mut [f64]) {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in x.iter_mut() {
        *v /= s;
    }
}

const GELU_A: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_B: f64 = 0.044_715;

/// tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_A * (x + GELU_B * x * x * x)).tanh())
}

pub fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_A * (x + GELU_B * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_A * (1.0 + 3.0 * GELU_B * x * x)
}

/// Round half away from zero at one decimal, normalizing -0.0 to 0.0.
pub fn round1(x: f64) -> f64 {
    let r = (x.abs() * 10.0 + 0.5).floor() / 10.0 * x.signum();
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator); 0 for fewer than 2 points.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
