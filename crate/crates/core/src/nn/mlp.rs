use super::embedding::embed_steps;
use super::params::{BoundParams, Init, MlpSpec};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

pub(crate) fn layout(spec: &MlpSpec) -> Vec<(String, Vec<usize>, Init)> {
    let (d, h, e) = (spec.data_dim, spec.hidden, spec.emb_dim);
    let mut out = vec![
        ("in.w".to_string(), vec![d, h], Init::FanIn(d)),
        ("in.b".to_string(), vec![h], Init::Zeros),
        ("in.temb".to_string(), vec![e, h], Init::FanIn(e)),
    ];
    for l in 0..spec.depth.saturating_sub(1) {
        out.push((format!("hidden{l}.w"), vec![h, h], Init::FanIn(h)));
        out.push((format!("hidden{l}.b"), vec![h], Init::Zeros));
        out.push((format!("hidden{l}.temb"), vec![e, h], Init::FanIn(e)));
    }
    out.push(("out.w".to_string(), vec![h, d], Init::Head(h)));
    out.push(("out.b".to_string(), vec![d], Init::Zeros));
    out
}

/// ε-prediction of the fully connected denoiser.
///
/// `x` is `[batch, data_dim]`, `ts` holds one step per row. Each hidden layer
/// computes `act(W h + b + E emb(t))`.
pub fn mlp_denoiser_apply(
    tape: &Tape,
    params: &BoundParams,
    spec: &MlpSpec,
    x: Var,
    ts: &[usize],
) -> Result<Var> {
    let shape = tape.shape(x);
    if shape.len() != 2 || shape[1] != spec.data_dim || shape[0] != ts.len() {
        return Err(Error::Shape {
            op: "mlp_denoiser_apply".into(),
            expected: vec![ts.len(), spec.data_dim],
            got: shape,
        });
    }
    let emb = tape.constant(embed_steps(ts, spec.emb_dim)?);
    let layer = |h: Var, prefix: &str| -> Result<Var> {
        let z = tape.matmul(h, params.var(&format!("{prefix}.w"))?)?;
        let z = tape.add_row_bias(z, params.var(&format!("{prefix}.b"))?)?;
        let t = tape.matmul(emb, params.var(&format!("{prefix}.temb"))?)?;
        let z = tape.add(z, t)?;
        spec.activation.apply(tape, z)
    };
    let mut h = layer(x, "in")?;
    for l in 0..spec.depth.saturating_sub(1) {
        h = layer(h, &format!("hidden{l}"))?;
    }
    let y = tape.matmul(h, params.var("out.w")?)?;
    tape.add_row_bias(y, params.var("out.b")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{init_params, init_params_with, ArchSpec, InitOptions};
    use crate::tensor::Tensor;

    #[test]
    fn zero_head_predicts_zero() {
        let spec = MlpSpec::default();
        let p = init_params(&ArchSpec::Mlp(spec.clone()), 0).unwrap();
        let tape = Tape::new();
        let b = p.bind(&tape, false);
        let x = tape.constant(Tensor::from_vec(&[3, 1], vec![-1.0, 0.3, 2.0]));
        let y = mlp_denoiser_apply(&tape, &b, &spec, x, &[0, 10, 999]).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_wrong_width() {
        let spec = MlpSpec::default();
        let p = init_params(&ArchSpec::Mlp(spec.clone()), 0).unwrap();
        let tape = Tape::new();
        let b = p.bind(&tape, false);
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(mlp_denoiser_apply(&tape, &b, &spec, x, &[1, 2]).is_err());
    }

    #[test]
    fn deterministic_output() {
        let spec = MlpSpec::default();
        let p = init_params_with(&ArchSpec::Mlp(spec.clone()), 4, InitOptions { zero_head: false }).unwrap();
        let run = || {
            let tape = Tape::new();
            let b = p.bind(&tape, false);
            let x = tape.constant(Tensor::from_vec(&[1, 1], vec![0.7]));
            let y = mlp_denoiser_apply(&tape, &b, &spec, x, &[123]).unwrap();
            tape.item(y)
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
