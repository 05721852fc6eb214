use std::collections::BTreeMap;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;

use super::{ExtractorConfig, ModelError};

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, ModelError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ModelError::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn rows_cols(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (*n, 1),
            other => panic!("tensor of shape {other:?} is not a matrix"),
        }
    }

    pub fn mat(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(self.rows_cols(), &self.data).expect("shape checked at construction")
    }

    pub fn mat_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let rc = self.rows_cols();
        ArrayViewMut2::from_shape(rc, &mut self.data).expect("shape checked at construction")
    }

    pub fn vec(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[..])
    }

    pub fn vec_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.data[..])
    }

    pub fn scalar(&self) -> f64 {
        self.data[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    /// `FanIn` shrunk by `MASK_INIT_SCALE`: the mask starts close to a
    /// constant 0.5, so together with `Synthesis` the untrained extractor
    /// is nearly a passthrough.
    DampedFanIn(usize),
    Ones,
    Zeros,
    /// PReLU negative slope.
    Slope,
    /// Fan-in uniform rows in mirrored pairs: the second half of the rows is
    /// the negation of the first, so ReLU activations keep the sign
    /// information.
    MirroredPairs(usize),
    /// Least-squares synthesis filters for the paired encoder: with a 0.5
    /// mask everywhere the decoder reproduces its input.
    Synthesis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

const PRELU_INIT: f64 = 0.25;
const MASK_INIT_SCALE: f64 = 0.1;
const DCONV_TAPS: usize = 3;

fn push(specs: &mut Vec<ParamSpec>, name: String, shape: &[usize], init: Init) {
    specs.push(ParamSpec {
        name,
        shape: shape.to_vec(),
        init,
    });
}

fn block_specs(specs: &mut Vec<ParamSpec>, prefix: &str, b: usize, h: usize) {
    push(specs, format!("{prefix}.conv_in.weight"), &[h, b], Init::FanIn(b));
    push(specs, format!("{prefix}.conv_in.bias"), &[h], Init::Zeros);
    push(specs, format!("{prefix}.prelu1.alpha"), &[1], Init::Slope);
    push(specs, format!("{prefix}.norm1.gamma"), &[h], Init::Ones);
    push(specs, format!("{prefix}.norm1.beta"), &[h], Init::Zeros);
    push(specs, format!("{prefix}.dconv.weight"), &[h, DCONV_TAPS], Init::FanIn(DCONV_TAPS));
    push(specs, format!("{prefix}.dconv.bias"), &[h], Init::Zeros);
    push(specs, format!("{prefix}.prelu2.alpha"), &[1], Init::Slope);
    push(specs, format!("{prefix}.norm2.gamma"), &[h], Init::Ones);
    push(specs, format!("{prefix}.norm2.beta"), &[h], Init::Zeros);
    push(specs, format!("{prefix}.conv_out.weight"), &[b, h], Init::FanIn(h));
    push(specs, format!("{prefix}.conv_out.bias"), &[b], Init::Zeros);
}

/// Every learnable tensor of a configuration, in initialization order.
pub fn param_specs(cfg: &ExtractorConfig) -> Vec<ParamSpec> {
    let (n, l, b, h, e) = (
        cfg.n_filters,
        cfg.kernel_len,
        cfg.bottleneck_ch,
        cfg.conv_ch,
        cfg.embed_dim,
    );
    let mut s = Vec::new();
    push(&mut s, "encoder.weight".into(), &[n, l], Init::MirroredPairs(l));
    push(&mut s, "sep.norm.gamma".into(), &[n], Init::Ones);
    push(&mut s, "sep.norm.beta".into(), &[n], Init::Zeros);
    push(&mut s, "sep.bottleneck.weight".into(), &[b, n], Init::FanIn(n));
    push(&mut s, "sep.bottleneck.bias".into(), &[b], Init::Zeros);
    for i in 0..cfg.n_blocks() {
        block_specs(&mut s, &format!("sep.blocks.{i}"), b, h);
    }
    push(&mut s, "sep.mask.prelu.alpha".into(), &[1], Init::Slope);
    push(&mut s, "sep.mask.weight".into(), &[cfg.n_outputs * n, b], Init::DampedFanIn(b));
    push(&mut s, "sep.mask.bias".into(), &[cfg.n_outputs * n], Init::Zeros);
    push(&mut s, "decoder.weight".into(), &[n, l], Init::Synthesis);
    if cfg.is_extractor() {
        push(&mut s, "aux.encoder.weight".into(), &[n, l], Init::FanIn(l));
        push(&mut s, "aux.norm.gamma".into(), &[n], Init::Ones);
        push(&mut s, "aux.norm.beta".into(), &[n], Init::Zeros);
        push(&mut s, "aux.bottleneck.weight".into(), &[b, n], Init::FanIn(n));
        push(&mut s, "aux.bottleneck.bias".into(), &[b], Init::Zeros);
        block_specs(&mut s, "aux.block", b, h);
        push(&mut s, "aux.embed.weight".into(), &[e, b], Init::FanIn(b));
        push(&mut s, "aux.embed.bias".into(), &[e], Init::Zeros);
        push(&mut s, "fusion.weight".into(), &[h, e], Init::FanIn(e));
        push(&mut s, "fusion.bias".into(), &[h], Init::Zeros);
    }
    s
}

/// Decoder rows for a mirrored-pair encoder `[W; -W]`: the base half gets
/// `pinv(W)^T`, the mirrored half its negation, any unpaired row zero. With
/// a uniform 0.5 mask each frame is then reproduced at half amplitude, and
/// the two frames overlapping every sample add back to the input.
fn synthesis_filters(encoder: &Tensor) -> Tensor {
    let (rows, cols) = (encoder.shape()[0], encoder.shape()[1]);
    let half = rows / 2;
    let mut out = Tensor::zeros(&[rows, cols]);
    if half == 0 {
        return out;
    }
    let w = nalgebra::DMatrix::from_row_slice(half, cols, &encoder.data()[..half * cols]);
    let pinv = w.pseudo_inverse(1e-10).expect("non-negative tolerance");
    let d = out.data_mut();
    for i in 0..half {
        for j in 0..cols {
            d[i * cols + j] = pinv[(j, i)];
            d[(i + half) * cols + j] = -pinv[(j, i)];
        }
    }
    out
}

/// Named learnable tensors. Also used for gradients and optimizer moments,
/// which share the same names and shapes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn from_tensors(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    pub fn zeros(cfg: &ExtractorConfig) -> Self {
        Self {
            tensors: param_specs(cfg)
                .into_iter()
                .map(|s| (s.name, Tensor::zeros(&s.shape)))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn init<R: Rng + ?Sized>(cfg: &ExtractorConfig, rng: &mut R) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut tensors = BTreeMap::new();
        for spec in param_specs(cfg) {
            let count: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..count).map(|_| rng.random_range(-bound..bound)).collect()
                }
                Init::DampedFanIn(fan_in) => {
                    let bound = MASK_INIT_SCALE / (fan_in as f64).sqrt();
                    (0..count).map(|_| rng.random_range(-bound..bound)).collect()
                }
                Init::Ones => vec![1.0; count],
                Init::Zeros => vec![0.0; count],
                Init::Slope => vec![PRELU_INIT; count],
                Init::MirroredPairs(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let (rows, cols) = (spec.shape[0], spec.shape[1]);
                    let half = rows / 2;
                    let mut d: Vec<f64> = (0..count).map(|_| rng.random_range(-bound..bound)).collect();
                    for i in half..2 * half {
                        for j in 0..cols {
                            d[i * cols + j] = -d[(i - half) * cols + j];
                        }
                    }
                    d
                }
                Init::Synthesis => vec![0.0; count],
            };
            tensors.insert(spec.name, Tensor::from_vec(&spec.shape, data)?);
        }
        let decoder = synthesis_filters(&tensors["encoder.weight"]);
        tensors.insert("decoder.weight".into(), decoder);
        Ok(Self { tensors })
    }

    /// Checks that names and shapes match `cfg` exactly and all values are finite.
    pub fn validate(&self, cfg: &ExtractorConfig) -> Result<(), ModelError> {
        let specs = param_specs(cfg);
        if specs.len() != self.tensors.len() {
            return Err(ModelError::Shape(format!(
                "expected {} tensors, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for s in specs {
            let t = self
                .tensors
                .get(&s.name)
                .ok_or_else(|| ModelError::Shape(format!("missing tensor {}", s.name)))?;
            if t.shape() != s.shape.as_slice() {
                return Err(ModelError::Shape(format!(
                    "{}: expected shape {:?}, found {:?}",
                    s.name,
                    s.shape,
                    t.shape()
                )));
            }
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(s.name));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing; params were not validated"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("parameter {name} missing; params were not validated"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// `self += other` for every tensor. Both sides must share names.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (k, t) in self.tensors.iter_mut() {
            let o = other.get(k);
            for (a, b) in t.data.iter_mut().zip(&o.data) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.tensors.values_mut() {
            t.data.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}
