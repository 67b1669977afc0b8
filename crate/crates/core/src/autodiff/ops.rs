//! Primitive operations with their pullbacks.
//!
//! Non-smooth primitives (`relu`, `abs`) use the subgradient 0 exactly at the
//! kink.

use std::f64::consts::PI;

use super::kernels::{self, ConvGeom};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: op.into(),
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn rank(op: &str, t: &Tensor, r: usize) -> Result<()> {
    if t.ndim() != r {
        return Err(Error::contract(format!(
            "{op}: expected rank-{r} input, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    let k = (2.0 / PI).sqrt();
    0.5 * x * (1.0 + (k * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let k = (2.0 / PI).sqrt();
    let u = k * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * GELU_C * x * x)
}

impl Tape {
    fn unary(
        &self,
        name: &str,
        x: Var,
        f: fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var> {
        self.record(
            name,
            &[x],
            |xs| Ok(xs[0].map(f)),
            move |a| {
                let g = a.inputs[0]
                    .data()
                    .iter()
                    .zip(a.output.data())
                    .zip(a.cotangent.data())
                    .map(|((&x, &y), &c)| c * df(x, y))
                    .collect();
                Ok(vec![Some(Tensor::from_vec(a.inputs[0].shape(), g))])
            },
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.record(
            "add",
            &[a, b],
            |xs| {
                same_shape("add", xs[0], xs[1])?;
                Ok(xs[0].zip_map(xs[1], |p, q| p + q))
            },
            |a| Ok(vec![Some(a.cotangent.clone()), Some(a.cotangent.clone())]),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.record(
            "sub",
            &[a, b],
            |xs| {
                same_shape("sub", xs[0], xs[1])?;
                Ok(xs[0].zip_map(xs[1], |p, q| p - q))
            },
            |a| Ok(vec![Some(a.cotangent.clone()), Some(a.cotangent.scale(-1.0))]),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.record(
            "mul",
            &[a, b],
            |xs| {
                same_shape("mul", xs[0], xs[1])?;
                Ok(xs[0].zip_map(xs[1], |p, q| p * q))
            },
            |a| {
                Ok(vec![
                    a.needs[0].then(|| a.cotangent.zip_map(&a.inputs[1], |c, q| c * q)),
                    a.needs[1].then(|| a.cotangent.zip_map(&a.inputs[0], |c, p| c * p)),
                ])
            },
        )
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.record(
            "div",
            &[a, b],
            |xs| {
                same_shape("div", xs[0], xs[1])?;
                Ok(xs[0].zip_map(xs[1], |p, q| p / q))
            },
            |a| {
                let ga = a.cotangent.zip_map(&a.inputs[1], |c, q| c / q);
                let gb = ga.zip_map(a.output, |g, y| -g * y);
                Ok(vec![Some(ga), Some(gb)])
            },
        )
    }

    /// `a * s` for a constant `s`.
    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        self.record(
            "scale",
            &[a],
            |xs| Ok(xs[0].scale(s)),
            move |a| Ok(vec![Some(a.cotangent.scale(s))]),
        )
    }

    /// `a + c` for a constant `c`.
    pub fn add_scalar(&self, a: Var, c: f64) -> Result<Var> {
        self.record(
            "add_scalar",
            &[a],
            |xs| Ok(xs[0].map(|x| x + c)),
            |a| Ok(vec![Some(a.cotangent.clone())]),
        )
    }

    /// `alpha * a + beta * b` with constant coefficients.
    pub fn axpby(&self, alpha: f64, a: Var, beta: f64, b: Var) -> Result<Var> {
        self.record(
            "axpby",
            &[a, b],
            |xs| {
                same_shape("axpby", xs[0], xs[1])?;
                Ok(xs[0].zip_map(xs[1], |p, q| alpha * p + beta * q))
            },
            move |a| {
                Ok(vec![
                    Some(a.cotangent.scale(alpha)),
                    Some(a.cotangent.scale(beta)),
                ])
            },
        )
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn square(&self, x: Var) -> Result<Var> {
        self.unary("square", x, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn tanh(&self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, |_, y| y)
    }

    pub fn log(&self, x: Var) -> Result<Var> {
        self.unary("log", x, f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self, x: Var) -> Result<Var> {
        self.unary("sqrt", x, f64::sqrt, |_, y| 0.5 / y)
    }

    /// Logistic-weighted identity `x·σ(x)` (Swish / SiLU).
    pub fn swish(&self, x: Var) -> Result<Var> {
        self.unary(
            "swish",
            x,
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self, x: Var) -> Result<Var> {
        self.unary("gelu", x, gelu, |x, _| gelu_grad(x))
    }

    /// Ramp `max(x, 0)`.
    pub fn relu(&self, x: Var) -> Result<Var> {
        self.unary("relu", x, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn abs(&self, x: Var) -> Result<Var> {
        self.unary(
            "abs",
            x,
            f64::abs,
            |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            },
        )
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        self.record(
            "sum",
            &[x],
            |xs| Ok(Tensor::scalar(xs[0].sum())),
            |a| {
                let c = a.cotangent.item();
                Ok(vec![Some(Tensor::full(a.inputs[0].shape(), c))])
            },
        )
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        self.record(
            "mean",
            &[x],
            |xs| {
                if xs[0].is_empty() {
                    return Err(Error::contract("mean of an empty tensor"));
                }
                Ok(Tensor::scalar(xs[0].sum() / xs[0].len() as f64))
            },
            |a| {
                let n = a.inputs[0].len() as f64;
                let c = a.cotangent.item() / n;
                Ok(vec![Some(Tensor::full(a.inputs[0].shape(), c))])
            },
        )
    }

    /// Sums a `[rows, cols]` tensor over its rows, giving `[cols]`.
    pub fn sum_rows(&self, x: Var) -> Result<Var> {
        self.record(
            "sum_rows",
            &[x],
            |xs| {
                rank("sum_rows", xs[0], 2)?;
                let (r, c) = (xs[0].shape()[0], xs[0].shape()[1]);
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        out[j] += xs[0].data()[i * c + j];
                    }
                }
                Ok(Tensor::vector(out))
            },
            |a| {
                let (r, c) = (a.inputs[0].shape()[0], a.inputs[0].shape()[1]);
                let mut g = Vec::with_capacity(r * c);
                for _ in 0..r {
                    g.extend_from_slice(a.cotangent.data());
                }
                Ok(vec![Some(Tensor::from_vec(&[r, c], g))])
            },
        )
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let shape = shape.to_vec();
        self.record(
            "reshape",
            &[x],
            |xs| xs[0].reshaped(&shape),
            |a| Ok(vec![Some(a.cotangent.reshaped(a.inputs[0].shape())?)]),
        )
    }

    pub fn permute(&self, x: Var, axes: &[usize]) -> Result<Var> {
        let axes = axes.to_vec();
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.record(
            "permute",
            &[x],
            |xs| {
                let mut seen = axes.clone();
                seen.sort_unstable();
                if xs[0].ndim() != axes.len() || seen.iter().enumerate().any(|(i, &a)| i != a) {
                    return Err(Error::contract(format!(
                        "permute: axes {axes:?} invalid for shape {:?}",
                        xs[0].shape()
                    )));
                }
                let (d, s) = kernels::permute(xs[0].data(), xs[0].shape(), &axes);
                Ok(Tensor::from_vec(&s, d))
            },
            move |a| {
                let (d, s) = kernels::permute(a.cotangent.data(), a.cotangent.shape(), &inverse);
                Ok(vec![Some(Tensor::from_vec(&s, d))])
            },
        )
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.record(
            "matmul",
            &[a, b],
            |xs| {
                rank("matmul", xs[0], 2)?;
                rank("matmul", xs[1], 2)?;
                let (m, k) = (xs[0].shape()[0], xs[0].shape()[1]);
                let (k2, n) = (xs[1].shape()[0], xs[1].shape()[1]);
                if k != k2 {
                    return Err(Error::Shape {
                        op: "matmul".into(),
                        expected: vec![k, n],
                        got: xs[1].shape().to_vec(),
                    });
                }
                let mut c = vec![0.0; m * n];
                kernels::gemm(m, k, n, 1.0, xs[0].data(), false, xs[1].data(), false, 0.0, &mut c);
                Ok(Tensor::from_vec(&[m, n], c))
            },
            |a| {
                let (m, k) = (a.inputs[0].shape()[0], a.inputs[0].shape()[1]);
                let n = a.inputs[1].shape()[1];
                let ga = a.needs[0].then(|| {
                    let mut g = vec![0.0; m * k];
                    kernels::gemm(m, n, k, 1.0, a.cotangent.data(), false, a.inputs[1].data(), true, 0.0, &mut g);
                    Tensor::from_vec(&[m, k], g)
                });
                let gb = a.needs[1].then(|| {
                    let mut g = vec![0.0; k * n];
                    kernels::gemm(k, m, n, 1.0, a.inputs[0].data(), true, a.cotangent.data(), false, 0.0, &mut g);
                    Tensor::from_vec(&[k, n], g)
                });
                Ok(vec![ga, gb])
            },
        )
    }

    /// Batched matrix product `[b,m,k] × [b,k,n] → [b,m,n]`.
    pub fn bmm(&self, a: Var, b: Var) -> Result<Var> {
        self.record(
            "bmm",
            &[a, b],
            |xs| {
                rank("bmm", xs[0], 3)?;
                rank("bmm", xs[1], 3)?;
                let (bs, m, k) = (xs[0].shape()[0], xs[0].shape()[1], xs[0].shape()[2]);
                let n = xs[1].shape()[2];
                if xs[1].shape()[0] != bs || xs[1].shape()[1] != k {
                    return Err(Error::Shape {
                        op: "bmm".into(),
                        expected: vec![bs, k, n],
                        got: xs[1].shape().to_vec(),
                    });
                }
                let mut c = vec![0.0; bs * m * n];
                for i in 0..bs {
                    kernels::gemm(
                        m, k, n, 1.0,
                        &xs[0].data()[i * m * k..], false,
                        &xs[1].data()[i * k * n..], false,
                        0.0, &mut c[i * m * n..],
                    );
                }
                Ok(Tensor::from_vec(&[bs, m, n], c))
            },
            |a| {
                let (bs, m, k) = (a.inputs[0].shape()[0], a.inputs[0].shape()[1], a.inputs[0].shape()[2]);
                let n = a.inputs[1].shape()[2];
                let dc = a.cotangent.data();
                let ga = a.needs[0].then(|| {
                    let mut g = vec![0.0; bs * m * k];
                    for i in 0..bs {
                        kernels::gemm(m, n, k, 1.0, &dc[i * m * n..], false, &a.inputs[1].data()[i * k * n..], true, 0.0, &mut g[i * m * k..]);
                    }
                    Tensor::from_vec(&[bs, m, k], g)
                });
                let gb = a.needs[1].then(|| {
                    let mut g = vec![0.0; bs * k * n];
                    for i in 0..bs {
                        kernels::gemm(k, m, n, 1.0, &a.inputs[0].data()[i * m * k..], true, &dc[i * m * n..], false, 0.0, &mut g[i * k * n..]);
                    }
                    Tensor::from_vec(&[bs, k, n], g)
                });
                Ok(vec![ga, gb])
            },
        )
    }

    /// Adds a `[n]` bias to every row of a `[m,n]` matrix.
    pub fn add_row_bias(&self, x: Var, b: Var) -> Result<Var> {
        self.record(
            "add_row_bias",
            &[x, b],
            |xs| {
                rank("add_row_bias", xs[0], 2)?;
                let n = xs[0].shape()[1];
                if xs[1].shape() != [n] {
                    return Err(Error::Shape {
                        op: "add_row_bias".into(),
                        expected: vec![n],
                        got: xs[1].shape().to_vec(),
                    });
                }
                let mut out = xs[0].clone();
                for row in out.data_mut().chunks_mut(n) {
                    for (o, bb) in row.iter_mut().zip(xs[1].data()) {
                        *o += bb;
                    }
                }
                Ok(out)
            },
            |a| {
                let n = a.inputs[0].shape()[1];
                let gb = a.needs[1].then(|| {
                    let mut g = vec![0.0; n];
                    for row in a.cotangent.data().chunks(n) {
                        for (gg, c) in g.iter_mut().zip(row) {
                            *gg += c;
                        }
                    }
                    Tensor::vector(g)
                });
                Ok(vec![Some(a.cotangent.clone()), gb])
            },
        )
    }

    /// Adds a per-sample, per-channel offset `[n,c]` to a `[n,c,h,w]` map.
    pub fn add_channel_bias(&self, x: Var, b: Var) -> Result<Var> {
        self.record(
            "add_channel_bias",
            &[x, b],
            |xs| {
                rank("add_channel_bias", xs[0], 4)?;
                let s = xs[0].shape();
                if xs[1].shape() != [s[0], s[1]] {
                    return Err(Error::Shape {
                        op: "add_channel_bias".into(),
                        expected: vec![s[0], s[1]],
                        got: xs[1].shape().to_vec(),
                    });
                }
                let hw = s[2] * s[3];
                let mut out = xs[0].clone();
                for (chunk, &bb) in out.data_mut().chunks_mut(hw).zip(xs[1].data()) {
                    for o in chunk {
                        *o += bb;
                    }
                }
                Ok(out)
            },
            |a| {
                let s = a.inputs[0].shape();
                let hw = s[2] * s[3];
                let gb = a.needs[1].then(|| {
                    let g = a.cotangent.data().chunks(hw).map(|c| c.iter().sum()).collect();
                    Tensor::from_vec(&[s[0], s[1]], g)
                });
                Ok(vec![Some(a.cotangent.clone()), gb])
            },
        )
    }

    /// Zero padding of the two trailing (spatial) axes of `[n,c,h,w]`.
    pub fn pad2d(&self, x: Var, pad: usize) -> Result<Var> {
        self.record(
            "pad2d",
            &[x],
            |xs| {
                rank("pad2d", xs[0], 4)?;
                let s = xs[0].shape();
                let (h, w) = (s[2], s[3]);
                let (ph, pw) = (h + 2 * pad, w + 2 * pad);
                let mut out = vec![0.0; s[0] * s[1] * ph * pw];
                for (img, dst) in xs[0].data().chunks(h * w).zip(out.chunks_mut(ph * pw)) {
                    for i in 0..h {
                        dst[(i + pad) * pw + pad..(i + pad) * pw + pad + w]
                            .copy_from_slice(&img[i * w..(i + 1) * w]);
                    }
                }
                Ok(Tensor::from_vec(&[s[0], s[1], ph, pw], out))
            },
            move |a| {
                let s = a.inputs[0].shape();
                let (h, w) = (s[2], s[3]);
                let (ph, pw) = (h + 2 * pad, w + 2 * pad);
                let mut g = vec![0.0; a.inputs[0].len()];
                for (src, dst) in a.cotangent.data().chunks(ph * pw).zip(g.chunks_mut(h * w)) {
                    for i in 0..h {
                        dst[i * w..(i + 1) * w]
                            .copy_from_slice(&src[(i + pad) * pw + pad..(i + pad) * pw + pad + w]);
                    }
                }
                Ok(vec![Some(Tensor::from_vec(s, g))])
            },
        )
    }

    /// 2D cross-correlation, stride 1, zero padding `pad`:
    /// `x [n,cin,h,w]`, `weight [cout,cin,k,k]`, `bias [cout]`.
    pub fn conv2d(&self, x: Var, weight: Var, bias: Var, pad: usize) -> Result<Var> {
        self.record(
            "conv2d",
            &[x, weight, bias],
            |xs| {
                rank("conv2d", xs[0], 4)?;
                rank("conv2d", xs[1], 4)?;
                let (n, cin, h, w) = (xs[0].shape()[0], xs[0].shape()[1], xs[0].shape()[2], xs[0].shape()[3]);
                let (cout, cin2, k, k2) = (xs[1].shape()[0], xs[1].shape()[1], xs[1].shape()[2], xs[1].shape()[3]);
                if cin != cin2 || k != k2 || xs[2].shape() != [cout] || h + 2 * pad < k || w + 2 * pad < k {
                    return Err(Error::Shape {
                        op: "conv2d".into(),
                        expected: vec![cout, cin, k, k],
                        got: xs[1].shape().to_vec(),
                    });
                }
                let g = ConvGeom::new(cin, h, w, k, pad);
                let (rows, ncol) = (g.col_rows(), g.col_cols());
                let mut cols = vec![0.0; rows * ncol];
                let mut out = vec![0.0; n * cout * ncol];
                for s in 0..n {
                    kernels::im2col(&xs[0].data()[s * cin * h * w..(s + 1) * cin * h * w], &g, &mut cols);
                    let o = &mut out[s * cout * ncol..(s + 1) * cout * ncol];
                    for (c, row) in o.chunks_mut(ncol).enumerate() {
                        row.fill(xs[2].data()[c]);
                    }
                    kernels::gemm(cout, rows, ncol, 1.0, xs[1].data(), false, &cols, false, 1.0, o);
                }
                Ok(Tensor::from_vec(&[n, cout, g.oh, g.ow], out))
            },
            move |a| {
                let (x, wt) = (&a.inputs[0], &a.inputs[1]);
                let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
                let (cout, k) = (wt.shape()[0], wt.shape()[2]);
                let g = ConvGeom::new(cin, h, w, k, pad);
                let (rows, ncol) = (g.col_rows(), g.col_cols());
                let dout = a.cotangent.data();
                let mut cols = vec![0.0; rows * ncol];
                let mut dcols = vec![0.0; rows * ncol];
                let mut dx = a.needs[0].then(|| vec![0.0; x.len()]);
                let mut dw = a.needs[1].then(|| vec![0.0; wt.len()]);
                let db = a.needs[2].then(|| {
                    let mut db = vec![0.0; cout];
                    for (i, chunk) in dout.chunks(ncol).enumerate() {
                        db[i % cout] += chunk.iter().sum::<f64>();
                    }
                    Tensor::vector(db)
                });
                for s in 0..n {
                    let ds = &dout[s * cout * ncol..(s + 1) * cout * ncol];
                    if let Some(dw) = dw.as_mut() {
                        kernels::im2col(&x.data()[s * cin * h * w..(s + 1) * cin * h * w], &g, &mut cols);
                        kernels::gemm(cout, ncol, rows, 1.0, ds, false, &cols, true, 1.0, dw);
                    }
                    if let Some(dx) = dx.as_mut() {
                        kernels::gemm(rows, cout, ncol, 1.0, wt.data(), true, ds, false, 0.0, &mut dcols);
                        kernels::col2im(&dcols, &g, &mut dx[s * cin * h * w..(s + 1) * cin * h * w]);
                    }
                }
                Ok(vec![
                    dx.map(|d| Tensor::from_vec(x.shape(), d)),
                    dw.map(|d| Tensor::from_vec(wt.shape(), d)),
                    db,
                ])
            },
        )
    }

    /// 2×2 average pooling of `[n,c,h,w]` (h, w even).
    pub fn avg_pool2(&self, x: Var) -> Result<Var> {
        self.record(
            "avg_pool2",
            &[x],
            |xs| {
                rank("avg_pool2", xs[0], 4)?;
                let s = xs[0].shape();
                let (h, w) = (s[2], s[3]);
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::contract(format!("avg_pool2 needs even sides, got {h}x{w}")));
                }
                let (oh, ow) = (h / 2, w / 2);
                let mut out = vec![0.0; s[0] * s[1] * oh * ow];
                for (src, dst) in xs[0].data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
                    for i in 0..oh {
                        for j in 0..ow {
                            dst[i * ow + j] = 0.25
                                * (src[2 * i * w + 2 * j]
                                    + src[2 * i * w + 2 * j + 1]
                                    + src[(2 * i + 1) * w + 2 * j]
                                    + src[(2 * i + 1) * w + 2 * j + 1]);
                        }
                    }
                }
                Ok(Tensor::from_vec(&[s[0], s[1], oh, ow], out))
            },
            |a| {
                let s = a.inputs[0].shape();
                let (h, w) = (s[2], s[3]);
                let (oh, ow) = (h / 2, w / 2);
                let mut g = vec![0.0; a.inputs[0].len()];
                for (src, dst) in a.cotangent.data().chunks(oh * ow).zip(g.chunks_mut(h * w)) {
                    for i in 0..h {
                        for j in 0..w {
                            dst[i * w + j] = 0.25 * src[(i / 2) * ow + j / 2];
                        }
                    }
                }
                Ok(vec![Some(Tensor::from_vec(s, g))])
            },
        )
    }

    /// Nearest-neighbour 2× upsampling of `[n,c,h,w]`.
    pub fn upsample2(&self, x: Var) -> Result<Var> {
        self.record(
            "upsample2",
            &[x],
            |xs| {
                rank("upsample2", xs[0], 4)?;
                let s = xs[0].shape();
                let (h, w) = (s[2], s[3]);
                let (oh, ow) = (2 * h, 2 * w);
                let mut out = vec![0.0; s[0] * s[1] * oh * ow];
                for (src, dst) in xs[0].data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
                    for i in 0..oh {
                        for j in 0..ow {
                            dst[i * ow + j] = src[(i / 2) * w + j / 2];
                        }
                    }
                }
                Ok(Tensor::from_vec(&[s[0], s[1], oh, ow], out))
            },
            |a| {
                let s = a.inputs[0].shape();
                let (h, w) = (s[2], s[3]);
                let ow = 2 * w;
                let mut g = vec![0.0; a.inputs[0].len()];
                for (src, dst) in a.cotangent.data().chunks(4 * h * w).zip(g.chunks_mut(h * w)) {
                    for i in 0..2 * h {
                        for j in 0..ow {
                            dst[(i / 2) * w + j / 2] += src[i * ow + j];
                        }
                    }
                }
                Ok(vec![Some(Tensor::from_vec(s, g))])
            },
        )
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        self.record(
            "concat",
            xs,
            |vals| {
                let first = vals
                    .first()
                    .ok_or_else(|| Error::contract("concat of zero tensors"))?;
                let nd = first.ndim();
                if axis >= nd {
                    return Err(Error::contract(format!("concat axis {axis} out of range")));
                }
                let mut shape = first.shape().to_vec();
                shape[axis] = 0;
                for v in vals {
                    let ok = v.ndim() == nd
                        && (0..nd).all(|d| d == axis || v.shape()[d] == first.shape()[d]);
                    if !ok {
                        return Err(Error::Shape {
                            op: "concat".into(),
                            expected: first.shape().to_vec(),
                            got: v.shape().to_vec(),
                        });
                    }
                    shape[axis] += v.shape()[axis];
                }
                let outer: usize = shape[..axis].iter().product();
                let mut out = Vec::with_capacity(shape.iter().product());
                for o in 0..outer {
                    for v in vals {
                        let blk: usize = v.shape()[axis..].iter().product();
                        out.extend_from_slice(&v.data()[o * blk..(o + 1) * blk]);
                    }
                }
                Ok(Tensor::from_vec(&shape, out))
            },
            move |a| {
                let shape = a.output.shape();
                let outer: usize = shape[..axis].iter().product();
                let mut grads: Vec<Vec<f64>> = a.inputs.iter().map(|v| Vec::with_capacity(v.len())).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (v, g) in a.inputs.iter().zip(grads.iter_mut()) {
                        let blk: usize = v.shape()[axis..].iter().product();
                        g.extend_from_slice(&a.cotangent.data()[off..off + blk]);
                        off += blk;
                    }
                }
                Ok(grads
                    .into_iter()
                    .zip(a.inputs)
                    .map(|(g, v)| Some(Tensor::from_vec(v.shape(), g)))
                    .collect())
            },
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, x: Var) -> Result<Var> {
        self.record(
            "softmax",
            &[x],
            |xs| {
                let n = *xs[0]
                    .shape()
                    .last()
                    .ok_or_else(|| Error::contract("softmax of a scalar"))?;
                let mut out = xs[0].clone();
                for row in out.data_mut().chunks_mut(n) {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - m).exp();
                        z += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= z;
                    }
                }
                Ok(out)
            },
            |a| {
                let n = *a.output.shape().last().unwrap();
                let mut g = a.cotangent.clone();
                for (grow, yrow) in g.data_mut().chunks_mut(n).zip(a.output.data().chunks(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(c, y)| c * y).sum();
                    for (gg, y) in grow.iter_mut().zip(yrow) {
                        *gg = y * (*gg - dot);
                    }
                }
                Ok(vec![Some(g)])
            },
        )
    }

    /// Group normalization of `[n,c,h,w]` with per-channel affine `gamma`, `beta`.
    pub fn group_norm(&self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Result<Var> {
        self.record(
            "group_norm",
            &[x, gamma, beta],
            |xs| {
                rank("group_norm", xs[0], 4)?;
                let s = xs[0].shape();
                let c = s[1];
                if groups == 0 || c % groups != 0 || xs[1].shape() != [c] || xs[2].shape() != [c] {
                    return Err(Error::contract(format!(
                        "group_norm: {c} channels, {groups} groups, affine shapes {:?}/{:?}",
                        xs[1].shape(),
                        xs[2].shape()
                    )));
                }
                let (xhat, _) = normalize_groups(xs[0], groups, eps);
                let hw = s[2] * s[3];
                let mut out = xhat;
                for (i, chunk) in out.chunks_mut(hw).enumerate() {
                    let ch = i % c;
                    let (gm, bt) = (xs[1].data()[ch], xs[2].data()[ch]);
                    for v in chunk {
                        *v = gm * *v + bt;
                    }
                }
                Ok(Tensor::from_vec(s, out))
            },
            move |a| {
                let x = &a.inputs[0];
                let s = x.shape();
                let (c, hw) = (s[1], s[2] * s[3]);
                let cg = c / groups;
                let m = (cg * hw) as f64;
                let (xhat, inv_std) = normalize_groups(x, groups, eps);
                let dy = a.cotangent.data();
                let gamma = a.inputs[1].data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (i, (dyc, xc)) in dy.chunks(hw).zip(xhat.chunks(hw)).enumerate() {
                    let ch = i % c;
                    for (d, xh) in dyc.iter().zip(xc) {
                        dgamma[ch] += d * xh;
                        dbeta[ch] += d;
                    }
                }
                let mut dx = vec![0.0; x.len()];
                let gsize = cg * hw;
                for (gi, ((dxg, dyg), xg)) in dx
                    .chunks_mut(gsize)
                    .zip(dy.chunks(gsize))
                    .zip(xhat.chunks(gsize))
                    .enumerate()
                {
                    let c0 = (gi % groups) * cg;
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..gsize {
                        let d = dyg[j] * gamma[c0 + j / hw];
                        sum_d += d;
                        sum_dx += d * xg[j];
                    }
                    let is = inv_std[gi];
                    for j in 0..gsize {
                        let d = dyg[j] * gamma[c0 + j / hw];
                        dxg[j] = is / m * (m * d - sum_d - xg[j] * sum_dx);
                    }
                }
                Ok(vec![
                    Some(Tensor::from_vec(s, dx)),
                    Some(Tensor::vector(dgamma)),
                    Some(Tensor::vector(dbeta)),
                ])
            },
        )
    }
}

fn normalize_groups(x: &Tensor, groups: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let gsize = (s[1] / groups) * s[2] * s[3];
    let mut out = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(s[0] * groups);
    for g in x.data().chunks(gsize) {
        let mean = g.iter().sum::<f64>() / gsize as f64;
        let var = g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / gsize as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        out.extend(g.iter().map(|v| (v - mean) * is));
    }
    (out, inv_std)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mul_product_rule() {
        let t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let y = t.leaf(Tensor::scalar(3.0));
        let z = t.mul(x, y).unwrap();
        let g = t.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 3.0);
        assert_eq!(g.get(y).unwrap().item(), 2.0);
    }

    #[test]
    fn tanh_at_zero() {
        let t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let z = t.tanh(x).unwrap();
        assert_eq!(t.backward(z).unwrap().get(x).unwrap().item(), 1.0);
    }

    #[test]
    fn sum_and_square_norm() {
        let t = Tape::new();
        let w = t.leaf(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
        let s = t.sum(w).unwrap();
        assert_eq!(t.backward(s).unwrap().get(w).unwrap().data(), &[1.0; 4]);

        let t = Tape::new();
        let w = t.leaf(Tensor::vector(vec![1.0, -2.0]));
        let sq = t.square(w).unwrap();
        let l = t.sum(sq).unwrap();
        assert_eq!(t.backward(l).unwrap().get(w).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn kinks_use_zero_subgradient() {
        let t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.0, 0.0]));
        let r = t.relu(x).unwrap();
        let a = t.abs(x).unwrap();
        let s = t.add(r, a).unwrap();
        let l = t.sum(s).unwrap();
        assert_eq!(t.backward(l).unwrap().get(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let c = t.constant(Tensor::scalar(5.0));
        let z = t.mul(x, c).unwrap();
        let g = t.backward(z).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().item(), 5.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = t.tanh(x).unwrap();
        assert!(matches!(t.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn mismatched_vjp_is_structural_error() {
        let t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = t
            .record("bad", &[x], |xs| Ok(xs[0].clone()), |_| Ok(vec![Some(Tensor::scalar(1.0))]))
            .unwrap();
        let l = t.sum(y).unwrap();
        assert!(matches!(t.backward(l), Err(Error::Structural { .. })));
    }

    #[test]
    fn foreign_variable_is_rejected() {
        let a = Tape::new();
        let b = Tape::new();
        let x = a.leaf(Tensor::scalar(1.0));
        assert!(b.tanh(x).is_err());
    }

    #[test]
    fn concat_then_split_gradients() {
        let t = Tape::new();
        let a = t.leaf(Tensor::from_vec(&[2, 1], vec![1.0, 2.0]));
        let b = t.leaf(Tensor::from_vec(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]));
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = t.constant(Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let p = t.mul(c, w).unwrap();
        let l = t.sum(p).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1.0, 4.0]);
        assert_eq!(g.get(b).unwrap().data(), &[2.0, 3.0, 5.0, 6.0]);
    }
}
