use super::embedding::embed_steps;
use super::params::{BoundParams, Init, UnetSpec};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

const GN_EPS: f64 = 1e-5;

/// Largest group count not exceeding 8 that divides `c`.
pub fn norm_groups(c: usize) -> usize {
    (1..=8.min(c)).rev().find(|g| c % g == 0).unwrap_or(1)
}

fn time_dim(spec: &UnetSpec) -> usize {
    spec.emb_dim
}

type Layout = Vec<(String, Vec<usize>, Init)>;

fn push_norm(out: &mut Layout, p: &str, c: usize) {
    out.push((format!("{p}.g"), vec![c], Init::Ones));
    out.push((format!("{p}.b"), vec![c], Init::Zeros));
}

fn push_conv(out: &mut Layout, p: &str, cin: usize, cout: usize, k: usize) {
    out.push((format!("{p}.w"), vec![cout, cin, k, k], Init::FanIn(cin * k * k)));
    out.push((format!("{p}.b"), vec![cout], Init::Zeros));
}

fn push_res(out: &mut Layout, p: &str, cin: usize, cout: usize, td: usize) {
    push_norm(out, &format!("{p}.n1"), cin);
    push_conv(out, &format!("{p}.c1"), cin, cout, 3);
    out.push((format!("{p}.t.w"), vec![td, cout], Init::FanIn(td)));
    out.push((format!("{p}.t.b"), vec![cout], Init::Zeros));
    push_norm(out, &format!("{p}.n2"), cout);
    push_conv(out, &format!("{p}.c2"), cout, cout, 3);
    if cin != cout {
        push_conv(out, &format!("{p}.skip"), cin, cout, 1);
    }
}

fn push_attn(out: &mut Layout, p: &str, c: usize) {
    push_norm(out, &format!("{p}.n"), c);
    for m in ["q", "k", "v", "o"] {
        out.push((format!("{p}.{m}.w"), vec![c, c], Init::FanIn(c)));
        out.push((format!("{p}.{m}.b"), vec![c], Init::Zeros));
    }
}

pub(crate) fn layout(spec: &UnetSpec) -> Layout {
    let td = time_dim(spec);
    let mut out = vec![
        ("time.l1.w".to_string(), vec![spec.emb_dim, td], Init::FanIn(spec.emb_dim)),
        ("time.l1.b".to_string(), vec![td], Init::Zeros),
        ("time.l2.w".to_string(), vec![td, td], Init::FanIn(td)),
        ("time.l2.b".to_string(), vec![td], Init::Zeros),
    ];
    push_conv(&mut out, "in", spec.in_channels, spec.channels(0), 3);
    let mut c = spec.channels(0);
    for l in 0..spec.levels {
        for r in 0..spec.res_blocks {
            push_res(&mut out, &format!("down{l}.res{r}"), c, spec.channels(l), td);
            c = spec.channels(l);
        }
        if spec.attention_level == Some(l) {
            push_attn(&mut out, &format!("down{l}.attn"), c);
        }
    }
    push_res(&mut out, "mid.res", c, c, td);
    for l in (0..spec.levels).rev() {
        for r in 0..spec.res_blocks {
            let cin = if r == 0 { c + spec.channels(l) } else { c };
            push_res(&mut out, &format!("up{l}.res{r}"), cin, spec.channels(l), td);
            c = spec.channels(l);
        }
        if spec.attention_level == Some(l) {
            push_attn(&mut out, &format!("up{l}.attn"), c);
        }
    }
    push_norm(&mut out, "out.n", c);
    out.push((
        "out.w".to_string(),
        vec![spec.in_channels, c, 3, 3],
        Init::Head(c * 9),
    ));
    out.push(("out.b".to_string(), vec![spec.in_channels], Init::Zeros));
    out
}

struct Ctx<'a> {
    tape: &'a Tape,
    p: &'a BoundParams,
    heads: usize,
}

impl Ctx<'_> {
    fn norm(&self, x: Var, p: &str) -> Result<Var> {
        let c = self.tape.shape(x)[1];
        self.tape.group_norm(
            x,
            self.p.var(&format!("{p}.g"))?,
            self.p.var(&format!("{p}.b"))?,
            norm_groups(c),
            GN_EPS,
        )
    }

    fn norm_act(&self, x: Var, p: &str) -> Result<Var> {
        let y = self.norm(x, p)?;
        self.tape.swish(y)
    }

    fn conv(&self, x: Var, p: &str, pad: usize) -> Result<Var> {
        self.tape.conv2d(
            x,
            self.p.var(&format!("{p}.w"))?,
            self.p.var(&format!("{p}.b"))?,
            pad,
        )
    }

    fn linear(&self, x: Var, p: &str) -> Result<Var> {
        let y = self.tape.matmul(x, self.p.var(&format!("{p}.w"))?)?;
        self.tape.add_row_bias(y, self.p.var(&format!("{p}.b"))?)
    }

    fn res(&self, x: Var, temb: Var, p: &str) -> Result<Var> {
        let t = self.tape;
        let h = self.norm_act(x, &format!("{p}.n1"))?;
        let h = self.conv(h, &format!("{p}.c1"), 1)?;
        let te = t.swish(temb)?;
        let te = self.linear(te, &format!("{p}.t"))?;
        // The step shift goes in after the norm: with one channel per group
        // a per-channel bias before it would be normalized away.
        let h = self.norm(h, &format!("{p}.n2"))?;
        let h = t.swish(t.add_channel_bias(h, te)?)?;
        let h = self.conv(h, &format!("{p}.c2"), 1)?;
        let skip = if self.p.var(&format!("{p}.skip.w")).is_ok() {
            self.conv(x, &format!("{p}.skip"), 0)?
        } else {
            x
        };
        t.add(h, skip)
    }

    fn attn(&self, x: Var, p: &str) -> Result<Var> {
        let t = self.tape;
        let s = t.shape(x);
        let (n, c, hh, ww) = (s[0], s[1], s[2], s[3]);
        let hw = hh * ww;
        let heads = self.heads;
        let dh = c / heads;
        let h = t.group_norm(
            x,
            self.p.var(&format!("{p}.n.g"))?,
            self.p.var(&format!("{p}.n.b"))?,
            norm_groups(c),
            GN_EPS,
        )?;
        let tokens = t.reshape(h, &[n, c, hw])?;
        let tokens = t.permute(tokens, &[0, 2, 1])?;
        let tokens = t.reshape(tokens, &[n * hw, c])?;
        let split = |m: &str| -> Result<Var> {
            let y = self.linear(tokens, &format!("{p}.{m}"))?;
            let y = t.reshape(y, &[n, hw, heads, dh])?;
            let y = t.permute(y, &[0, 2, 1, 3])?;
            t.reshape(y, &[n * heads, hw, dh])
        };
        let q = split("q")?;
        let k = split("k")?;
        let v = split("v")?;
        let kt = t.permute(k, &[0, 2, 1])?;
        let scores = t.bmm(q, kt)?;
        let scores = t.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let w = t.softmax(scores)?;
        let o = t.bmm(w, v)?;
        let o = t.reshape(o, &[n, heads, hw, dh])?;
        let o = t.permute(o, &[0, 2, 1, 3])?;
        let o = t.reshape(o, &[n * hw, c])?;
        let o = self.linear(o, &format!("{p}.o"))?;
        let o = t.reshape(o, &[n, hw, c])?;
        let o = t.permute(o, &[0, 2, 1])?;
        let o = t.reshape(o, &[n, c, hh, ww])?;
        t.add(x, o)
    }
}

/// ε-prediction of the convolutional denoiser on `[batch, C, H, W]` images.
pub fn unet_denoiser_apply(
    tape: &Tape,
    params: &BoundParams,
    spec: &UnetSpec,
    x: Var,
    ts: &[usize],
) -> Result<Var> {
    let shape = tape.shape(x);
    if shape.len() != 4
        || shape[0] != ts.len()
        || shape[1] != spec.in_channels
        || shape[2] != shape[3]
    {
        return Err(Error::Shape {
            op: "unet_denoiser_apply".into(),
            expected: vec![ts.len(), spec.in_channels, spec.side, spec.side],
            got: shape,
        });
    }
    let div = 1usize << (spec.levels - 1);
    if shape[2] % div != 0 {
        return Err(Error::contract(format!(
            "image side {} not divisible by {div}",
            shape[2]
        )));
    }
    let cx = Ctx {
        tape,
        p: params,
        heads: spec.heads.max(1),
    };
    let emb = tape.constant(embed_steps(ts, spec.emb_dim)?);
    let temb = cx.linear(emb, "time.l1")?;
    let temb = tape.gelu(temb)?;
    let temb = cx.linear(temb, "time.l2")?;

    let mut h = cx.conv(x, "in", 1)?;
    let mut skips = Vec::with_capacity(spec.levels);
    for l in 0..spec.levels {
        if l > 0 {
            h = tape.avg_pool2(h)?;
        }
        for r in 0..spec.res_blocks {
            h = cx.res(h, temb, &format!("down{l}.res{r}"))?;
        }
        if spec.attention_level == Some(l) {
            h = cx.attn(h, &format!("down{l}.attn"))?;
        }
        skips.push(h);
    }
    h = cx.res(h, temb, "mid.res")?;
    for l in (0..spec.levels).rev() {
        if l + 1 < spec.levels {
            h = tape.upsample2(h)?;
        }
        h = tape.concat(&[h, skips[l]], 1)?;
        for r in 0..spec.res_blocks {
            h = cx.res(h, temb, &format!("up{l}.res{r}"))?;
        }
        if spec.attention_level == Some(l) {
            h = cx.attn(h, &format!("up{l}.attn"))?;
        }
    }
    let h = cx.norm_act(h, "out.n")?;
    cx.conv(h, "out", 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{init_params, ArchSpec};
    use crate::tensor::Tensor;

    #[test]
    fn groups_divide_channels() {
        assert_eq!(norm_groups(8), 8);
        assert_eq!(norm_groups(24), 8);
        assert_eq!(norm_groups(6), 6);
        assert_eq!(norm_groups(10), 5);
        assert_eq!(norm_groups(1), 1);
    }

    #[test]
    fn default_unet_preserves_shape_and_zero_head() {
        let spec = UnetSpec::default();
        let p = init_params(&ArchSpec::Unet(spec.clone()), 0).unwrap();
        let tape = Tape::new();
        let b = p.bind(&tape, false);
        let x = tape.constant(Tensor::from_vec(
            &[2, 1, 16, 16],
            (0..512).map(|i| (i as f64 * 0.1).sin()).collect(),
        ));
        let y = unet_denoiser_apply(&tape, &b, &spec, x, &[5, 700]).unwrap();
        assert_eq!(tape.shape(y), vec![2, 1, 16, 16]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }
}
