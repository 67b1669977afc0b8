use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Swish,
    Gelu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Swish => "swish",
            Activation::Gelu => "gelu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "swish" | "silu" => Ok(Activation::Swish),
            "gelu" => Ok(Activation::Gelu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::contract(format!("unknown activation `{other}`"))),
        }
    }

    pub(crate) fn apply(self, tape: &Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Swish => tape.swish(x),
            Activation::Gelu => tape.gelu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Fully connected denoiser for low-dimensional samples.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub data_dim: usize,
    pub hidden: usize,
    /// Number of hidden layers; the network has `depth + 1` dense layers.
    pub depth: usize,
    pub activation: Activation,
    pub emb_dim: usize,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            data_dim: 1,
            hidden: 64,
            depth: 2,
            activation: Activation::Swish,
            emb_dim: 64,
        }
    }
}

/// What the raw network output means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputKind {
    /// The output is ε directly.
    Epsilon,
    /// The output `F` gives `ε = √ᾱ_t F + √(1−ᾱ_t) x_t`, so the implied
    /// `x̂₀ = √ᾱ_t x_t − √(1−ᾱ_t) F` stays bounded at high noise levels.
    #[default]
    Velocity,
}

impl OutputKind {
    pub fn name(self) -> &'static str {
        match self {
            OutputKind::Epsilon => "epsilon",
            OutputKind::Velocity => "velocity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "epsilon" => Ok(OutputKind::Epsilon),
            "velocity" => Ok(OutputKind::Velocity),
            _ => Err(Error::contract(format!("unknown output kind `{s}` (epsilon | velocity)"))),
        }
    }
}

/// Encoder–decoder convolutional denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct UnetSpec {
    pub in_channels: usize,
    pub side: usize,
    pub levels: usize,
    pub base_channels: usize,
    /// Channel multiplier per level (length `levels`).
    pub channel_mult: Vec<usize>,
    pub res_blocks: usize,
    /// Level index (0 = full resolution) that gets self-attention.
    pub attention_level: Option<usize>,
    pub heads: usize,
    pub emb_dim: usize,
    pub output: OutputKind,
}

impl Default for UnetSpec {
    fn default() -> Self {
        Self {
            in_channels: 1,
            side: 16,
            levels: 3,
            base_channels: 8,
            channel_mult: vec![1, 2, 2],
            res_blocks: 1,
            attention_level: Some(1),
            heads: 1,
            emb_dim: 32,
            output: OutputKind::Velocity,
        }
    }
}

impl UnetSpec {
    /// Four levels over 32×32 with attention at 8×8.
    pub fn full_scale() -> Self {
        Self {
            side: 32,
            levels: 4,
            base_channels: 16,
            channel_mult: vec![1, 2, 2, 2],
            attention_level: Some(2),
            heads: 4,
            emb_dim: 64,
            ..Self::default()
        }
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_mult[level]
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = vec![];
        if self.levels == 0 {
            problems.push("levels must be >= 1".to_string());
        }
        if self.channel_mult.len() != self.levels {
            problems.push(format!(
                "channel_mult has {} entries for {} levels",
                self.channel_mult.len(),
                self.levels
            ));
        }
        let div = 1usize << self.levels.saturating_sub(1);
        if self.side == 0 || self.side % div != 0 {
            problems.push(format!(
                "input side {} not divisible by 2^(levels-1) = {div}",
                self.side
            ));
        }
        if let Some(a) = self.attention_level {
            if a >= self.levels {
                problems.push(format!("attention level {a} >= levels {}", self.levels));
            }
            for l in 0..self.levels.min(self.channel_mult.len()) {
                if l == a && self.channels(l) % self.heads.max(1) != 0 {
                    problems.push(format!(
                        "{} channels at attention level not divisible by {} heads",
                        self.channels(l),
                        self.heads
                    ));
                }
            }
        }
        if self.emb_dim % 2 != 0 {
            problems.push("emb_dim must be even".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::contract(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ArchSpec {
    Mlp(MlpSpec),
    Unet(UnetSpec),
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ArchSpec::Mlp(m) => {
                if m.data_dim == 0 || m.hidden == 0 || m.emb_dim % 2 != 0 {
                    return Err(Error::contract(format!("invalid MLP spec {m:?}")));
                }
                Ok(())
            }
            ArchSpec::Unet(u) => u.validate(),
        }
    }

    pub fn output_kind(&self) -> OutputKind {
        match self {
            ArchSpec::Mlp(_) => OutputKind::Epsilon,
            ArchSpec::Unet(u) => u.output,
        }
    }

    /// Shape of one sample (without the batch axis).
    pub fn sample_shape(&self) -> Vec<usize> {
        match self {
            ArchSpec::Mlp(m) => vec![m.data_dim],
            ArchSpec::Unet(u) => vec![u.in_channels, u.side, u.side],
        }
    }

    /// Key–value text form stored in checkpoints.
    pub fn to_text(&self) -> String {
        match self {
            ArchSpec::Mlp(m) => format!(
                "variant=mlp\ndata_dim={}\nhidden={}\ndepth={}\nactivation={}\nemb_dim={}\n",
                m.data_dim,
                m.hidden,
                m.depth,
                m.activation.name(),
                m.emb_dim
            ),
            ArchSpec::Unet(u) => format!(
                "variant=unet\nin_channels={}\nside={}\nlevels={}\nbase_channels={}\nchannel_mult={}\nres_blocks={}\nattention_level={}\nheads={}\nemb_dim={}\noutput={}\n",
                u.in_channels,
                u.side,
                u.levels,
                u.base_channels,
                u.channel_mult
                    .iter()
                    .map(|m| m.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
                u.res_blocks,
                u.attention_level.map_or("none".to_string(), |a| a.to_string()),
                u.heads,
                u.emb_dim,
                u.output.name()
            ),
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv: BTreeMap<&str, &str> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        let get = |k: &str| -> Result<&str> {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::contract(format!("architecture descriptor missing `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::contract(format!("architecture key `{k}` is not an integer")))
        };
        let spec = match get("variant")? {
            "mlp" => ArchSpec::Mlp(MlpSpec {
                data_dim: num("data_dim")?,
                hidden: num("hidden")?,
                depth: num("depth")?,
                activation: Activation::parse(get("activation")?)?,
                emb_dim: num("emb_dim")?,
            }),
            "unet" => ArchSpec::Unet(UnetSpec {
                in_channels: num("in_channels")?,
                side: num("side")?,
                levels: num("levels")?,
                base_channels: num("base_channels")?,
                channel_mult: get("channel_mult")?
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| Error::contract("bad channel_mult entry"))
                    })
                    .collect::<Result<_>>()?,
                res_blocks: num("res_blocks")?,
                attention_level: match get("attention_level")? {
                    "none" => None,
                    s => Some(s.parse().map_err(|_| Error::contract("bad attention_level"))?),
                },
                heads: num("heads")?,
                emb_dim: num("emb_dim")?,
                output: match kv.get("output") {
                    Some(o) => OutputKind::parse(o)?,
                    None => OutputKind::Epsilon,
                },
            }),
            other => return Err(Error::contract(format!("unknown variant `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// How a parameter entry is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// Gaussian with standard deviation `1/√fan_in`.
    FanIn(usize),
    Zeros,
    Ones,
    /// Output head; zero unless the caller asks otherwise.
    Head(usize),
}

/// Named weight arrays of a denoiser, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams {
    pub arch: ArchSpec,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct InitOptions {
    /// Zero the final layer so the untrained network predicts ε ≡ 0.
    pub zero_head: bool,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self { zero_head: true }
    }
}

/// Deterministic parameter initialization.
pub fn init_params(spec: &ArchSpec, seed: u64) -> Result<DenoiserParams> {
    init_params_with(spec, seed, InitOptions::default())
}

pub fn init_params_with(spec: &ArchSpec, seed: u64, opts: InitOptions) -> Result<DenoiserParams> {
    spec.validate()?;
    let layout = match spec {
        ArchSpec::Mlp(m) => super::mlp::layout(m),
        ArchSpec::Unet(u) => super::unet::layout(u),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::with_capacity(layout.len());
    let mut tensors = Vec::with_capacity(layout.len());
    for (name, shape, init) in layout {
        let n: usize = shape.iter().product();
        let gauss = |rng: &mut ChaCha8Rng, fan_in: usize| -> Vec<f64> {
            let std = 1.0 / (fan_in as f64).sqrt();
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * std
                })
                .collect()
        };
        let data = match init {
            Init::FanIn(f) => gauss(&mut rng, f),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Head(f) => {
                if opts.zero_head {
                    vec![0.0; n]
                } else {
                    gauss(&mut rng, f)
                }
            }
        };
        names.push(name);
        tensors.push(Tensor::from_vec(&shape, data));
    }
    DenoiserParams::from_parts(spec.clone(), names, tensors)
}

const MAGIC: &[u8; 8] = b"NDPARAMS";
const VERSION: u32 = 1;

impl DenoiserParams {
    pub fn from_parts(arch: ArchSpec, names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        let layout = match &arch {
            ArchSpec::Mlp(m) => super::mlp::layout(m),
            ArchSpec::Unet(u) => super::unet::layout(u),
        };
        if layout.len() != names.len() || names.len() != tensors.len() {
            return Err(Error::contract(format!(
                "architecture expects {} arrays, got {}",
                layout.len(),
                names.len()
            )));
        }
        for ((lname, lshape, _), (name, t)) in layout.iter().zip(names.iter().zip(&tensors)) {
            if lname != name || lshape.as_slice() != t.shape() {
                return Err(Error::Shape {
                    op: format!("parameter `{name}` (expected `{lname}`)"),
                    expected: lshape.clone(),
                    got: t.shape().to_vec(),
                });
            }
            if !t.all_finite() {
                return Err(Error::NonFinite(format!("parameter `{name}`")));
            }
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self {
            arch,
            names,
            tensors,
            index,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every array on `tape`, as leaves when `trainable`, else as constants.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        BoundParams {
            vars,
            index: self.index.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let text = self.arch.to_text();
        w.write_all(&(text.len() as u32).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        w.write_all(&(self.names.len() as u32).to_le_bytes())?;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut bytes.as_slice())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut rd = ByteReader { inner: r, offset: 0 };
        let mut magic = [0u8; 8];
        rd.exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "not a parameter checkpoint (bad magic)".into(),
            });
        }
        let version = rd.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 8,
                msg: format!("unsupported checkpoint version {version}"),
            });
        }
        let tlen = rd.u32()? as usize;
        let text = rd.string(tlen)?;
        let arch = ArchSpec::from_text(&text)?;
        let count = rd.u32()? as usize;
        let mut names = Vec::with_capacity(count);
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = rd.u32()? as usize;
            names.push(rd.string(nlen)?);
            let nd = rd.u32()? as usize;
            let mut shape = Vec::with_capacity(nd);
            for _ in 0..nd {
                shape.push(rd.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_bits(rd.u64()?));
            }
            tensors.push(Tensor::from_vec(&shape, data));
        }
        Self::from_parts(arch, names, tensors)
    }
}

struct ByteReader<'a, R: Read> {
    inner: &'a mut R,
    offset: usize,
}

impl<R: Read> ByteReader<'_, R> {
    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|_| Error::Format {
            offset: self.offset,
            msg: format!("truncated checkpoint (wanted {} more bytes)", buf.len()),
        })?;
        self.offset += buf.len();
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        let mut b = vec![0u8; len];
        let at = self.offset;
        self.exact(&mut b)?;
        String::from_utf8(b).map_err(|_| Error::Format {
            offset: at,
            msg: "invalid UTF-8".into(),
        })
    }
}

/// Parameter arrays recorded on a tape, addressable by name.
pub struct BoundParams {
    vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::contract(format!("no parameter named `{name}`")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let spec = ArchSpec::Mlp(MlpSpec::default());
        assert_eq!(init_params(&spec, 7).unwrap(), init_params(&spec, 7).unwrap());
        assert_ne!(init_params(&spec, 7).unwrap(), init_params(&spec, 8).unwrap());
    }

    #[test]
    fn fan_in_scaling() {
        let spec = ArchSpec::Mlp(MlpSpec::default());
        let p = init_params(&spec, 3).unwrap();
        let w = p.get("hidden0.w").unwrap();
        assert_eq!(w.shape(), &[64, 64]);
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let target = 1.0 / 8.0;
        assert!((std - target).abs() < 0.2 * target, "std {std}");
    }

    #[test]
    fn arch_text_round_trip() {
        for spec in [
            ArchSpec::Mlp(MlpSpec::default()),
            ArchSpec::Unet(UnetSpec::default()),
            ArchSpec::Unet(UnetSpec::full_scale()),
        ] {
            assert_eq!(ArchSpec::from_text(&spec.to_text()).unwrap(), spec);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let spec = ArchSpec::Unet(UnetSpec::default());
        let p = init_params_with(&spec, 11, InitOptions { zero_head: false }).unwrap();
        let mut buf = vec![];
        p.write_to(&mut buf).unwrap();
        let q = DenoiserParams::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn truncated_checkpoint_reports_offset() {
        let p = init_params(&ArchSpec::Mlp(MlpSpec::default()), 1).unwrap();
        let mut buf = vec![];
        p.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        let err = DenoiserParams::read_from(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn indivisible_resolution_rejected() {
        let spec = UnetSpec {
            side: 18,
            ..UnetSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
