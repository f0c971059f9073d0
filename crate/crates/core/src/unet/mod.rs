//! Configurable U-Net: encoder levels of two 3×3 convolutions followed by 2×2
//! max pooling, a two-convolution bottleneck, and decoder levels that upsample,
//! convolve, concatenate the matching encoder output and convolve twice more.
//! A 1×1 convolution with a sigmoid produces per-pixel probabilities.

mod checkpoint;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{kernels, Graph, Scalar, Tensor, Var};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

/// Architecture hyperparameters. Every parameter name and shape is a pure
/// function of these five numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Number of pooling stages.
    pub depth: usize,
    /// Channels at the first encoder level; doubled at every level below.
    pub base_channels: usize,
    /// Expected square input size.
    pub input_size: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl UNetConfig {
    /// Full-resolution profile: 512×512 input, four pooling stages, 64 base channels.
    pub fn paper() -> Self {
        UNetConfig {
            in_channels: 1,
            out_channels: 1,
            depth: 4,
            base_channels: 64,
            input_size: 512,
        }
    }

    /// Small profile for CPU experiments: 64×64 input, three stages, 8 base channels.
    pub fn desk() -> Self {
        UNetConfig {
            in_channels: 1,
            out_channels: 1,
            depth: 3,
            base_channels: 8,
            input_size: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("depth", self.depth),
            ("base_channels", self.base_channels),
            ("input_size", self.input_size),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.depth >= usize::BITS as usize - 1 || self.input_size % (1 << self.depth) != 0 {
            return Err(Error::Config(format!(
                "input_size {} is not divisible by 2^{}",
                self.input_size, self.depth
            )));
        }
        Ok(())
    }

    /// Channels produced at encoder/decoder level `level` (`depth` is the bottleneck).
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Every convolution in evaluation order.
    pub fn layers(&self) -> Vec<ConvLayer> {
        let mut layers = Vec::new();
        let mut c_in = self.in_channels;
        for i in 0..self.depth {
            let c = self.channels_at(i);
            layers.push(ConvLayer::new(format!("enc{i}.conv1"), c_in, c, 3));
            layers.push(ConvLayer::new(format!("enc{i}.conv2"), c, c, 3));
            c_in = c;
        }
        let c = self.channels_at(self.depth);
        layers.push(ConvLayer::new("mid.conv1".into(), c_in, c, 3));
        layers.push(ConvLayer::new("mid.conv2".into(), c, c, 3));
        c_in = c;
        for i in (0..self.depth).rev() {
            let c = self.channels_at(i);
            layers.push(ConvLayer::new(format!("dec{i}.up"), c_in, c, 3));
            layers.push(ConvLayer::new(format!("dec{i}.conv1"), 2 * c, c, 3));
            layers.push(ConvLayer::new(format!("dec{i}.conv2"), c, c, 3));
            c_in = c;
        }
        layers.push(ConvLayer::new("head".into(), c_in, self.out_channels, 1));
        layers
    }

    /// Expected parameter names and shapes.
    pub fn param_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        self.layers()
            .into_iter()
            .flat_map(|l| {
                [
                    (l.weight_name(), vec![l.cout, l.cin, l.kernel, l.kernel]),
                    (l.bias_name(), vec![l.cout]),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
}

impl ConvLayer {
    fn new(name: String, cin: usize, cout: usize, kernel: usize) -> Self {
        ConvLayer {
            name,
            cin,
            cout,
            kernel,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    /// Zero padding that keeps the spatial size for an odd kernel.
    pub fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }
}

/// Named parameter tensors, iterated in lexicographic name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T = f32> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn element_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Checks that names and shapes are exactly those `cfg` generates.
    pub fn matches(&self, cfg: &UNetConfig) -> Result<()> {
        let expected = cfg.param_shapes();
        for (name, shape) in &expected {
            match self.params.get(name) {
                None => return Err(shape_err!("missing parameter {name}")),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(shape_err!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    ))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.params.keys().find(|k| !expected.contains_key(*k)) {
            return Err(shape_err!("unexpected parameter {extra}"));
        }
        Ok(())
    }
}

/// A U-Net: its configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T = f32> {
    config: UNetConfig,
    params: ParamStore<T>,
}

/// Parameter leaves registered on a [`Graph`], keyed by parameter name.
pub type ParamVars = BTreeMap<String, Var>;

impl<T: Scalar> UNet<T> {
    /// Builds a freshly initialised network. Weights are drawn from
    /// `N(0, 2 / fan_in)` in layer order from a generator seeded with `seed`;
    /// biases start at zero.
    pub fn build(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for layer in config.layers() {
            let fan_in = (layer.cin * layer.kernel * layer.kernel) as f64;
            let std = (2.0 / fan_in).sqrt();
            let shape = [layer.cout, layer.cin, layer.kernel, layer.kernel];
            let w = Tensor::from_fn(&shape, |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::from_f64(z * std)
            });
            params.insert(layer.weight_name(), w);
            params.insert(layer.bias_name(), Tensor::zeros(&[layer.cout]));
        }
        Ok(UNet { config, params })
    }

    /// Wraps existing parameters after checking they fit `config`.
    pub fn from_parts(config: UNetConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        params.matches(&config)?;
        Ok(UNet { config, params })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn cast<U: Scalar>(&self) -> UNet<U> {
        UNet {
            config: self.config,
            params: self.params.cast(),
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let &[_, c, h, w] = shape else {
            return Err(shape_err!("U-Net input must be NCHW, got {shape:?}"));
        };
        if c != self.config.in_channels {
            return Err(shape_err!(
                "U-Net expects {} input channels, got {c}",
                self.config.in_channels
            ));
        }
        let div = 1usize << self.config.depth;
        if h % div != 0 || w % div != 0 {
            return Err(shape_err!(
                "spatial size {h}x{w} is not divisible by 2^{}",
                self.config.depth
            ));
        }
        Ok(())
    }

    /// Inference forward pass. Intermediate activations are dropped as soon
    /// as they are no longer needed.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let mut exec = Eager {
            params: &self.params,
        };
        run(&self.config, &mut exec, x.clone())
    }

    /// Registers every parameter as a leaf on `graph`.
    pub fn register(&self, graph: &mut Graph<T>) -> ParamVars {
        self.params
            .iter()
            .map(|(name, t)| (name.to_string(), graph.leaf(t.clone())))
            .collect()
    }

    /// Differentiable forward pass recorded on `graph`.
    pub fn forward_tracked(&self, graph: &mut Graph<T>, vars: &ParamVars, x: Var) -> Result<Var> {
        self.check_input(graph.value(x)?.shape())?;
        let mut exec = Tracked { graph, vars };
        run(&self.config, &mut exec, x)
    }
}

/// The U-Net schedule is written once against this interface and executed
/// either eagerly or on a tape.
trait Exec<T: Scalar> {
    type V;
    fn conv(&mut self, x: &Self::V, layer: &ConvLayer) -> Result<Self::V>;
    fn relu(&mut self, x: Self::V) -> Result<Self::V>;
    fn sigmoid(&mut self, x: Self::V) -> Result<Self::V>;
    fn pool(&mut self, x: &Self::V) -> Result<Self::V>;
    fn upsample(&mut self, x: &Self::V) -> Result<Self::V>;
    fn concat(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
}

fn run<T: Scalar, E: Exec<T>>(cfg: &UNetConfig, exec: &mut E, x: E::V) -> Result<E::V> {
    let layers = cfg.layers();
    let mut layers = layers.iter();
    let mut next = || layers.next().expect("layer schedule matches forward pass");

    let block = |exec: &mut E, h: &E::V, layer: &ConvLayer| -> Result<E::V> {
        let y = exec.conv(h, layer)?;
        exec.relu(y)
    };

    let mut h = x;
    let mut skips = Vec::with_capacity(cfg.depth);
    for _ in 0..cfg.depth {
        h = block(exec, &h, next())?;
        h = block(exec, &h, next())?;
        let pooled = exec.pool(&h)?;
        skips.push(std::mem::replace(&mut h, pooled));
    }
    h = block(exec, &h, next())?;
    h = block(exec, &h, next())?;
    for skip in skips.iter().rev() {
        let up = exec.upsample(&h)?;
        h = block(exec, &up, next())?;
        let merged = exec.concat(skip, &h)?;
        h = block(exec, &merged, next())?;
        h = block(exec, &h, next())?;
    }
    let logits = exec.conv(&h, next())?;
    exec.sigmoid(logits)
}

struct Eager<'a, T> {
    params: &'a ParamStore<T>,
}

impl<T: Scalar> Exec<T> for Eager<'_, T> {
    type V = Tensor<T>;

    fn conv(&mut self, x: &Tensor<T>, layer: &ConvLayer) -> Result<Tensor<T>> {
        let w = self.params.get(&layer.weight_name());
        let b = self.params.get(&layer.bias_name());
        let (Some(w), Some(b)) = (w, b) else {
            return Err(shape_err!("missing parameters for layer {}", layer.name));
        };
        kernels::conv2d_forward(x, w, b, 1, layer.pad())
    }

    fn relu(&mut self, mut x: Tensor<T>) -> Result<Tensor<T>> {
        x.data_mut().iter_mut().for_each(|v| *v = kernels::relu(*v));
        Ok(x)
    }

    fn sigmoid(&mut self, mut x: Tensor<T>) -> Result<Tensor<T>> {
        x.data_mut().iter_mut().for_each(|v| *v = kernels::sigmoid(*v));
        Ok(x)
    }

    fn pool(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(kernels::max_pool2_forward(x)?.0)
    }

    fn upsample(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        kernels::upsample2_forward(x)
    }

    fn concat(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        kernels::concat_forward(a, b)
    }
}

struct Tracked<'a, T: Scalar> {
    graph: &'a mut Graph<T>,
    vars: &'a ParamVars,
}

impl<T: Scalar> Exec<T> for Tracked<'_, T> {
    type V = Var;

    fn conv(&mut self, x: &Var, layer: &ConvLayer) -> Result<Var> {
        let w = self.vars.get(&layer.weight_name());
        let b = self.vars.get(&layer.bias_name());
        let (Some(&w), Some(&b)) = (w, b) else {
            return Err(shape_err!("missing parameters for layer {}", layer.name));
        };
        self.graph.conv2d(*x, w, b, 1, layer.pad())
    }

    fn relu(&mut self, x: Var) -> Result<Var> {
        self.graph.relu(x)
    }

    fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.graph.sigmoid(x)
    }

    fn pool(&mut self, x: &Var) -> Result<Var> {
        self.graph.max_pool2(*x)
    }

    fn upsample(&mut self, x: &Var) -> Result<Var> {
        self.graph.upsample2(*x)
    }

    fn concat(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.graph.concat_channels(*a, *b)
    }
}
