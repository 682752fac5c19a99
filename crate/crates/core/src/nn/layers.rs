use super::init::he_uniform;
use super::{as2, as3, NnError, Param};
use ndarray::{Array2, Array3, ArrayD, Axis, Ix1, Ix2, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Swish,
    Sigmoid,
    #[default]
    Linear,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Swish => z * sigmoid(z),
            Activation::Sigmoid => sigmoid(z),
            Activation::Linear => z,
        }
    }

    /// Derivative with respect to the pre-activation.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Swish => {
                let s = sigmoid(z);
                s + z * s * (1.0 - s)
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Linear => 1.0,
        }
    }
}

fn shape_err(layer: &'static str, msg: String) -> NnError {
    NnError::ShapeMismatch { layer, msg }
}

fn view2(p: &Param) -> ndarray::ArrayView2<'_, f64> {
    p.value.view().into_dimensionality::<Ix2>().expect("rank-2 parameter")
}

fn view1(p: &Param) -> ndarray::ArrayView1<'_, f64> {
    p.value.view().into_dimensionality::<Ix1>().expect("rank-1 parameter")
}

fn standard3(x: Array3<f64>) -> Array3<f64> {
    if x.is_standard_layout() {
        x
    } else {
        x.as_standard_layout().into_owned()
    }
}

fn standard2(x: Array2<f64>) -> Array2<f64> {
    if x.is_standard_layout() {
        x
    } else {
        x.as_standard_layout().into_owned()
    }
}

fn add_grad(p: &mut Param, g: ArrayD<f64>) {
    if p.grad.shape() != p.value.shape() {
        p.zero_grad();
    }
    p.grad += &g;
}

/// Depthwise convolution per channel, then a 1×1 mix across channels.
/// Input `B × N × C`, output `B × (N−k+1) × F`.
#[derive(Debug, Clone, PartialEq)]
pub struct DwsConv1d {
    /// `C × k`
    pub depth: Param,
    /// `C × F`
    pub point: Param,
    /// `F`
    pub bias: Param,
    pub activation: Activation,
    cache: Option<(Array3<f64>, Array2<f64>, Array2<f64>)>,
}

impl DwsConv1d {
    pub fn new<R: Rng + ?Sized>(channels: usize, kernel: usize, filters: usize, l2: f64, activation: Activation, rng: &mut R) -> Self {
        let depth = he_uniform(&[channels, kernel], kernel, rng);
        let point = he_uniform(&[channels, filters], channels, rng);
        Self::from_params(
            Param::new("dws.depth", depth, l2),
            Param::new("dws.point", point, l2),
            Param::new("dws.bias", ArrayD::zeros(IxDyn(&[filters])), 0.0),
            activation,
        )
    }

    pub fn from_params(depth: Param, point: Param, bias: Param, activation: Activation) -> Self {
        Self { depth, point, bias, activation, cache: None }
    }

    fn dims(&self) -> (usize, usize, usize) {
        let (c, k) = (self.depth.value.shape()[0], self.depth.value.shape()[1]);
        (c, k, self.point.value.shape()[1])
    }

    fn output_shape(&self, s: &[usize]) -> Result<Vec<usize>, NnError> {
        let (c, k, f) = self.dims();
        match s {
            [b, n, ch] if *ch == c => {
                if *n < k {
                    Err(NnError::WindowTooShort { got: *n, kernel: k })
                } else {
                    Ok(vec![*b, n - k + 1, f])
                }
            }
            _ => Err(shape_err("dws_conv1d", format!("expected [B, N, {c}], got {s:?}"))),
        }
    }

    fn forward(&mut self, x: ArrayD<f64>) -> Result<ArrayD<f64>, NnError> {
        let out = self.output_shape(x.shape())?;
        let x = as3(x, "dws_conv1d")?;
        let (c, k, f) = self.dims();
        let (b, n2) = (out[0], out[1]);
        let x = standard3(x);
        let n = x.dim().1;
        let dkt = view2(&self.depth).t().as_standard_layout().into_owned();
        let (xs, dks) = (x.as_slice().expect("standard layout"), dkt.as_slice().expect("standard layout"));
        let mut d = Array2::<f64>::zeros((b * n2, c));
        let ds = d.as_slice_mut().expect("standard layout");
        for bi in 0..b {
            for t in 0..n2 {
                let dst = &mut ds[(bi * n2 + t) * c..][..c];
                for j in 0..k {
                    let src = &xs[(bi * n + t + j) * c..][..c];
                    for ((o, v), w) in dst.iter_mut().zip(src).zip(&dks[j * c..][..c]) {
                        *o += v * w;
                    }
                }
            }
        }
        let z = standard2(d.dot(&view2(&self.point)) + &view1(&self.bias));
        let y = z.mapv(|v| self.activation.apply(v));
        self.cache = Some((x, d, z));
        Ok(y.into_shape_with_order((b, n2, f)).expect("contiguous").into_dyn())
    }

    fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>, NnError> {
        let (x, d, z) = self.cache.take().ok_or(NnError::NoGraph("dws_conv1d"))?;
        let (c, k, f) = self.dims();
        let (b, n, _) = x.dim();
        let n2 = n - k + 1;
        let dy = as3(dy, "dws_conv1d")?;
        if dy.dim() != (b, n2, f) {
            return Err(shape_err("dws_conv1d", format!("gradient {:?}, expected {:?}", dy.dim(), (b, n2, f))));
        }
        let act = self.activation;
        let mut dz = dy.into_shape_with_order((b * n2, f)).expect("contiguous");
        dz.zip_mut_with(&z, |g, &zz| *g *= act.derivative(zz));
        add_grad(&mut self.point, d.t().dot(&dz).into_dyn());
        add_grad(&mut self.bias, dz.sum_axis(Axis(0)).into_dyn());
        let dd = standard2(dz.dot(&view2(&self.point).t()));
        let dkt = view2(&self.depth).t().as_standard_layout().into_owned();
        let mut gkt = Array2::<f64>::zeros((k, c));
        let mut dx = Array3::<f64>::zeros((b, n, c));
        let (xs, dds, dks) = (x.as_slice().expect("standard layout"), dd.as_slice().expect("standard layout"), dkt.as_slice().expect("standard layout"));
        let gks = gkt.as_slice_mut().expect("standard layout");
        let dxs = dx.as_slice_mut().expect("standard layout");
        for bi in 0..b {
            for t in 0..n2 {
                let g = &dds[(bi * n2 + t) * c..][..c];
                for j in 0..k {
                    let off = (bi * n + t + j) * c;
                    let gk = &mut gks[j * c..][..c];
                    for (((gkv, gv), xv), (dxv, w)) in gk.iter_mut().zip(g).zip(&xs[off..off + c]).zip(dxs[off..off + c].iter_mut().zip(&dks[j * c..][..c])) {
                        *gkv += gv * xv;
                        *dxv += gv * w;
                    }
                }
            }
        }
        add_grad(&mut self.depth, gkt.t().as_standard_layout().into_owned().into_dyn());
        Ok(dx.into_dyn())
    }
}

/// Multi-channel valid convolution. Input `B × N × C`, output
/// `B × (N−k+1) × F`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `k × C × F`
    pub kernel: Param,
    pub bias: Param,
    pub activation: Activation,
    cache: Option<(Vec<usize>, Array2<f64>, Array2<f64>)>,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(channels: usize, kernel: usize, filters: usize, l2: f64, activation: Activation, rng: &mut R) -> Self {
        let w = he_uniform(&[kernel, channels, filters], kernel * channels, rng);
        Self::from_params(Param::new("conv.kernel", w, l2), Param::new("conv.bias", ArrayD::zeros(IxDyn(&[filters])), 0.0), activation)
    }

    pub fn from_params(kernel: Param, bias: Param, activation: Activation) -> Self {
        Self { kernel, bias, activation, cache: None }
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.kernel.value.shape();
        (s[0], s[1], s[2])
    }

    fn output_shape(&self, s: &[usize]) -> Result<Vec<usize>, NnError> {
        let (k, c, f) = self.dims();
        match s {
            [b, n, ch] if *ch == c => {
                if *n < k {
                    Err(NnError::WindowTooShort { got: *n, kernel: k })
                } else {
                    Ok(vec![*b, n - k + 1, f])
                }
            }
            _ => Err(shape_err("conv1d", format!("expected [B, N, {c}], got {s:?}"))),
        }
    }

    fn forward(&mut self, x: ArrayD<f64>) -> Result<ArrayD<f64>, NnError> {
        let out = self.output_shape(x.shape())?;
        let in_shape = x.shape().to_vec();
        let x = as3(x, "conv1d")?;
        let (k, c, f) = self.dims();
        let (b, n2) = (out[0], out[1]);
        let x = standard3(x);
        let n = x.dim().1;
        let xs = x.as_slice().expect("standard layout");
        let mut cols = Array2::<f64>::zeros((b * n2, k * c));
        for (r, row) in cols.as_slice_mut().expect("standard layout").chunks_exact_mut(k * c).enumerate() {
            let (bi, t) = (r / n2, r % n2);
            row.copy_from_slice(&xs[(bi * n + t) * c..][..k * c]);
        }
        let w = self.kernel.value.view().into_shape_with_order((k * c, f)).expect("contiguous");
        let z = standard2(cols.dot(&w) + &view1(&self.bias));
        let y = z.mapv(|v| self.activation.apply(v));
        self.cache = Some((in_shape, cols, z));
        Ok(y.into_shape_with_order((b, n2, f)).expect("contiguous").into_dyn())
    }

    fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>, NnError> {
        let (in_shape, cols, z) = self.cache.take().ok_or(NnError::NoGraph("conv1d"))?;
        let (k, c, f) = self.dims();
        let (b, n) = (in_shape[0], in_shape[1]);
        let n2 = n - k + 1;
        let dy = as3(dy, "conv1d")?;
        if dy.dim() != (b, n2, f) {
            return Err(shape_err("conv1d", format!("gradient {:?}, expected {:?}", dy.dim(), (b, n2, f))));
        }
        let act = self.activation;
        let mut dz = dy.into_shape_with_order((b * n2, f)).expect("contiguous");
        dz.zip_mut_with(&z, |g, &zz| *g *= act.derivative(zz));
        let gw = standard2(cols.t().dot(&dz)).into_shape_with_order((k, c, f)).expect("contiguous");
        add_grad(&mut self.kernel, gw.into_dyn());
        add_grad(&mut self.bias, dz.sum_axis(Axis(0)).into_dyn());
        let w = self.kernel.value.view().into_shape_with_order((k * c, f)).expect("contiguous");
        let dcols = standard2(dz.dot(&w.t()));
        let mut dx = Array3::<f64>::zeros((b, n, c));
        let dxs = dx.as_slice_mut().expect("standard layout");
        for (r, row) in dcols.as_slice().expect("standard layout").chunks_exact(k * c).enumerate() {
            let (bi, t) = (r / n2, r % n2);
            for (d, v) in dxs[(bi * n + t) * c..][..k * c].iter_mut().zip(row) {
                *d += *v;
            }
        }
        Ok(dx.into_dyn())
    }
}

/// Max over non-overlapping time segments; a ragged tail is dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool1d {
    pub pool: usize,
    pub stride: usize,
    cache: Option<(Vec<usize>, Array3<usize>)>,
}

impl MaxPool1d {
    pub fn new(pool: usize, stride: usize) -> Self {
        Self { pool, stride, cache: None }
    }

    fn output_shape(&self, s: &[usize]) -> Result<Vec<usize>, NnError> {
        match s {
            [b, n, c] if *n >= self.pool => Ok(vec![*b, (n - self.pool) / self.stride + 1, *c]),
            [_, n, _] => Err(NnError::WindowTooShort { got: *n, kernel: self.pool }),
            _ => Err(shape_err("maxpool1d", format!("expected rank 3, got {s:?}"))),
        }
    }

    fn forward(&mut self, x: ArrayD<f64>) -> Result<ArrayD<f64>, NnError> {
        let out = self.output_shape(x.shape())?;
        let in_shape = x.shape().to_vec();
        let x = as3(x, "maxpool1d")?;
        let (b, n2, c) = (out[0], out[1], out[2]);
        let mut y = Array3::<f64>::zeros((b, n2, c));
        let mut arg = Array3::<usize>::zeros((b, n2, c));
        for bi in 0..b {
            for t in 0..n2 {
                for ch in 0..c {
                    let start = t * self.stride;
                    let mut best = start;
                    for i in start + 1..start + self.pool {
                        if x[[bi, i, ch]] > x[[bi, best, ch]] {
                            best = i;
                        }
                    }
                    y[[bi, t, ch]] = x[[bi, best, ch]];
                    arg[[bi, t, ch]] = best;
                }
            }
        }
        self.cache = Some((in_shape, arg));
        Ok(y.into_dyn())
    }

    fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>, NnError> {
        let (in_shape, arg) = self.cache.take().ok_or(NnError::NoGraph("maxpool1d"))?;
        let dy = as3(dy, "maxpool1d")?;
        if dy.dim() != arg.dim() {
            return Err(shape_err("maxpool1d", format!("gradient {:?}, expected {:?}", dy.dim(), arg.dim())));
        }
        let mut dx = Array3::<f64>::zeros((in_shape[0], in_shape[1], in_shape[2]));
        for ((bi, t, ch), g) in dy.indexed_iter() {
            dx[[bi, arg[[bi, t, ch]], ch]] += *g;
        }
        Ok(dx.into_dyn())
    }
}

/// Channel attention: a per-time-step dense map whose activations scale the
/// input elementwise, `y = x ⊙ act(x·W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cam {
    /// `C × C`
    pub weight: Param,
    pub bias: Param,
    pub activation: Activation,
    cache: Option<(Array2<f64>, Array2<f64>, Array2<f64>)>,
}

impl Cam {
    pub fn new<R: Rng + ?Sized>(channels: usize, units: usize, l2: f64, activation: Activation, rng: &mut R) -> Result<Self, NnError> {
        if units != channels {
            return Err(NnError::BadLayer(format!("attention units {units} must equal channel count {channels}")));
        }
        let w = he_uniform(&[channels, units], channels, rng);
        Ok(Self::from_params(Param::new("cam.weight", w, l2), Param::new("cam.bias", ArrayD::zeros(IxDyn(&[units])), 0.0), activation))
    }

    pub fn from_params(weight: Param, bias: Param, activation: Activation) -> Self {
        Self { weight, bias, activation, cache: None }
    }

    fn output_shape(&self, s: &[usize]) -> Result<Vec<usize>, NnError> {
        let c = self.weight.value.shape()[0];
        match s {
            [_, _, ch] if *ch == c => Ok(s.to_vec()),
            _ => Err(shape_err("cam", format!("expected [B, T, {c}], got {s:?}"))),
        }
    }

    fn forward(&mut self, x: ArrayD<f64>) -> Result<ArrayD<f64>, NnError> {
        let shape = self.output_shape(x.shape())?;
        let x = as3(x, "cam")?;
        let (b, t, c) = x.dim();
        let x2 = x.into_shape_with_order((b * t, c)).expect("contiguous");
        let z = standard2(x2.dot(&view2(&self.weight)) + &view1(&self.bias));
        let a = z.mapv(|v| self.activation.apply(v));
        let y = &x2 * &a;
        self.cache = Some((x2, z, a));
        Ok(y.into_shape_with_order(IxDyn(&shape)).expect("contiguous"))
    }

    fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>, NnError> {
        let (x2, z, a) = self.cache.take().ok_or(NnError::NoGraph("cam"))?;
        let shape = dy.shape().to_vec();
        if shape.iter().product::<usize>() != x2.len() {
            return Err(shape_err("cam", format!("gradient {shape:?} does not match input")));
        }
        let dy = dy.into_shape_with_order(x2.dim()).expect("contiguous");
        let act = self.activation;
        let mut dz = &dy * &x2;
        dz.zip_mut_with(&z, |g, &zz| *g *= act.derivative(zz));
        add_grad(&mut self.weight, x2.t().dot(&dz).into_dyn());
        add_grad(&mut self.bias, dz.sum_axis(Axis(0)).into_dyn());
        let dx = standard2(&dy * &a + dz.dot(&view2(&self.weight).t()));
        Ok(dx.into_shape_with_order(IxDyn(&shape)).expect("contiguous"))
    }
}

/// `B × T × C` to `B × (T·C)`, time-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Flatten {
    cache: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }

    fn output_shape(&self, s: &[usize]) -> Result<Vec<usize>, NnError> {
        match s {
            [b, rest @ ..] if !rest.is_empty() => Ok(vec![*b, rest.iter().product()]),
            _ => Err(shape_err("flatten", format!("expected batch plus features, got {s:?}"))),
        }
    }

    fn forward(&mut self, x: ArrayD<f64>) -> Result<ArrayD<f64>, NnError> {
        let out = self.output_shape(x.shape())?;
        self.cache = Some(x.shape().to_vec());
        Ok(x.as_standard_layout().into_owned().into_shape_with_order(IxDyn(&out)).expect("contiguous"))
    }

    fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>, NnError> {
        let shape = self.cache.take().ok_or(NnError::NoGraph("flatten"))?;
        dy.into_shape_with_order(IxDyn(&shape)).map_err(|e| shape_err("flatten", e.to_string()))
    }
}

/// Inverted dropout: kept units are scaled by `1/(1−rate)` during training;
/// inference is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    rng: ChaCha8Rng,
    mask: Option<ArrayD<f64>>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::BadLayer(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate, rng: ChaCha8Rng::seed_from_u64(seed), mask: None })
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn forward(&mut self, x: ArrayD<f64>, train: bool) -> Result<ArrayD<f64>, NnError> {
        if !train || self.rate == 0.0 {
            self.mask = Some(ArrayD::ones(x.raw_dim()));
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let rng = &mut self.rng;
        let mask = ArrayD::from_shape_simple_fn(x.raw_dim(), || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let y = &x * &mask;
        self.mask = Some(mask);
        Ok(y)
    }

    fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>, NnError> {
        let mask = self.mask.take().ok_or(NnError::NoGraph("dropout"))?;
        if mask.shape() != dy.shape() {
            return Err(shape_err("dropout", format!("gradient {:?}, mask {:?}", dy.shape(), mask.shape())));
        }
        Ok(dy * &mask)
    }
}

/// Fully connected layer on `B × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`
    pub weight: Param,
    pub bias: Param,
    pub activation: Activation,
    cache: Option<(Array2<f64>, Array2<f64>)>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, units: usize, l2: f64, activation: Activation, rng: &mut R) -> Self {
        let w = he_uniform(&[inputs, units], inputs, rng);
        Self::from_params(
            Param::new(format!("{name}.weight"), w, l2),
            Param::new(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[units])), 0.0),
            activation,
        )
    }

    pub fn from_params(weight: Param, bias: Param, activation: Activation) -> Self {
        Self { weight, bias, activation, cache: None }
    }

    fn output_shape(&self, s: &[usize]) -> Result<Vec<usize>, NnError> {
        let (i, o) = (self.weight.value.shape()[0], self.weight.value.shape()[1]);
        match s {
            [b, n] if *n == i => Ok(vec![*b, o]),
            _ => Err(shape_err("dense", format!("expected [B, {i}], got {s:?}"))),
        }
    }

    fn forward(&mut self, x: ArrayD<f64>) -> Result<ArrayD<f64>, NnError> {
        self.output_shape(x.shape())?;
        let x = as2(x, "dense")?;
        let z = standard2(x.dot(&view2(&self.weight)) + &view1(&self.bias));
        let y = z.mapv(|v| self.activation.apply(v));
        self.cache = Some((x, z));
        Ok(y.into_dyn())
    }

    fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>, NnError> {
        let (x, z) = self.cache.take().ok_or(NnError::NoGraph("dense"))?;
        let mut dz = as2(dy, "dense")?;
        if dz.dim() != z.dim() {
            return Err(shape_err("dense", format!("gradient {:?}, expected {:?}", dz.dim(), z.dim())));
        }
        let act = self.activation;
        dz.zip_mut_with(&z, |g, &zz| *g *= act.derivative(zz));
        add_grad(&mut self.weight, x.t().dot(&dz).into_dyn());
        add_grad(&mut self.bias, dz.sum_axis(Axis(0)).into_dyn());
        Ok(standard2(dz.dot(&view2(&self.weight).t())).into_dyn())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    DwsConv1d(DwsConv1d),
    Conv1d(Conv1d),
    MaxPool1d(MaxPool1d),
    Cam(Cam),
    Flatten(Flatten),
    Dropout(Dropout),
    Dense(Dense),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::DwsConv1d(_) => "dws_conv1d",
            Layer::Conv1d(_) => "conv1d",
            Layer::MaxPool1d(_) => "maxpool1d",
            Layer::Cam(_) => "cam",
            Layer::Flatten(_) => "flatten",
            Layer::Dropout(_) => "dropout",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn forward(&mut self, x: ArrayD<f64>, train: bool) -> Result<ArrayD<f64>, NnError> {
        match self {
            Layer::DwsConv1d(l) => l.forward(x),
            Layer::Conv1d(l) => l.forward(x),
            Layer::MaxPool1d(l) => l.forward(x),
            Layer::Cam(l) => l.forward(x),
            Layer::Flatten(l) => l.forward(x),
            Layer::Dropout(l) => l.forward(x, train),
            Layer::Dense(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>, NnError> {
        match self {
            Layer::DwsConv1d(l) => l.backward(dy),
            Layer::Conv1d(l) => l.backward(dy),
            Layer::MaxPool1d(l) => l.backward(dy),
            Layer::Cam(l) => l.backward(dy),
            Layer::Flatten(l) => l.backward(dy),
            Layer::Dropout(l) => l.backward(dy),
            Layer::Dense(l) => l.backward(dy),
        }
    }

    pub fn output_shape(&self, s: &[usize]) -> Result<Vec<usize>, NnError> {
        match self {
            Layer::DwsConv1d(l) => l.output_shape(s),
            Layer::Conv1d(l) => l.output_shape(s),
            Layer::MaxPool1d(l) => l.output_shape(s),
            Layer::Cam(l) => l.output_shape(s),
            Layer::Flatten(l) => l.output_shape(s),
            Layer::Dropout(_) => Ok(s.to_vec()),
            Layer::Dense(l) => l.output_shape(s),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::DwsConv1d(l) => vec![&l.depth, &l.point, &l.bias],
            Layer::Conv1d(l) => vec![&l.kernel, &l.bias],
            Layer::Cam(l) => vec![&l.weight, &l.bias],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::DwsConv1d(l) => vec![&mut l.depth, &mut l.point, &mut l.bias],
            Layer::Conv1d(l) => vec![&mut l.kernel, &mut l.bias],
            Layer::Cam(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            _ => vec![],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand3(b: usize, n: usize, c: usize, seed: u64) -> Array3<f64> {
        let mut r = rng(seed);
        Array3::from_shape_simple_fn((b, n, c), || r.random_range(-1.0..1.0))
    }

    #[test]
    fn swish_values() {
        assert_eq!(Activation::Swish.apply(0.0), 0.0);
        assert!((Activation::Swish.apply(10.0) - 9.99955).abs() < 1e-5);
        assert_eq!(Activation::Linear.apply(-3.5), -3.5);
    }

    #[test]
    fn dws_shape_and_oracle() {
        let l = DwsConv1d::new(34, 5, 32, 0.0, Activation::Relu, &mut rng(0));
        assert_eq!(l.output_shape(&[1, 200, 34]).unwrap(), vec![1, 196, 32]);
        let mut l = DwsConv1d::new(2, 3, 3, 0.0, Activation::Linear, &mut rng(1));
        let x = rand3(1, 8, 2, 2);
        let y = as3(l.forward(x.clone().into_dyn()).unwrap(), "t").unwrap();
        let (dk, pk) = (view2(&l.depth).to_owned(), view2(&l.point).to_owned());
        for t in 0..6 {
            for f in 0..3 {
                let mut acc = 0.0;
                for c in 0..2 {
                    let mut d = 0.0;
                    for j in 0..3 {
                        d += x[[0, t + j, c]] * dk[[c, j]];
                    }
                    acc += d * pk[[c, f]];
                }
                assert!((y[[0, t, f]] - acc).abs() < 1e-10);
            }
        }
        let err = l.forward(Array3::<f64>::zeros((1, 2, 2)).into_dyn()).unwrap_err();
        assert_eq!(err, NnError::WindowTooShort { got: 2, kernel: 3 });
    }

    #[test]
    fn dws_identity_kernels() {
        let c = 3;
        let mut depth = ArrayD::zeros(IxDyn(&[c, 5]));
        for ch in 0..c {
            depth[[ch, 0]] = 1.0;
        }
        let point = ArrayD::ones(IxDyn(&[c, 1]));
        let mut l = DwsConv1d::from_params(
            Param::new("d", depth, 0.0),
            Param::new("p", point, 0.0),
            Param::new("b", ArrayD::zeros(IxDyn(&[1])), 0.0),
            Activation::Relu,
        );
        let x = rand3(1, 10, c, 4).mapv(f64::abs);
        let y = l.forward(x.clone().into_dyn()).unwrap();
        for t in 0..6 {
            let sum: f64 = (0..c).map(|ch| x[[0, t, ch]]).sum();
            assert!((y[[0, t, 0]] - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_oracle_and_average() {
        let l = Conv1d::new(32, 5, 32, 0.0, Activation::Relu, &mut rng(0));
        assert_eq!(l.output_shape(&[1, 196, 32]).unwrap(), vec![1, 192, 32]);
        let mut l = Conv1d::new(3, 4, 2, 0.0, Activation::Linear, &mut rng(5));
        let x = rand3(1, 10, 3, 6);
        let y = l.forward(x.clone().into_dyn()).unwrap();
        let w = l.kernel.value.clone();
        for t in 0..7 {
            for f in 0..2 {
                let mut acc = 0.0;
                for j in 0..4 {
                    for c in 0..3 {
                        acc += x[[0, t + j, c]] * w[[j, c, f]];
                    }
                }
                assert!((y[[0, t, f]] - acc).abs() < 1e-10);
            }
        }
        let avg = Param::new("k", ArrayD::from_elem(IxDyn(&[5, 1, 1]), 0.2), 0.0);
        let mut l = Conv1d::from_params(avg, Param::new("b", ArrayD::zeros(IxDyn(&[1])), 0.0), Activation::Relu);
        let y = l.forward(ArrayD::from_elem(IxDyn(&[1, 9, 1]), 2.5)).unwrap();
        assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-12));
        let y = l.forward(ArrayD::from_elem(IxDyn(&[1, 9, 1]), -2.5)).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pool_examples() {
        let mut p = MaxPool1d::new(2, 2);
        assert_eq!(p.output_shape(&[1, 192, 32]).unwrap(), vec![1, 96, 32]);
        let y = p.forward(ArrayD::from_shape_vec(IxDyn(&[1, 4, 1]), vec![1.0, 5.0, 3.0, 2.0]).unwrap()).unwrap();
        assert_eq!(y.iter().copied().collect::<Vec<_>>(), vec![5.0, 3.0]);
        let mono: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let y = p.forward(ArrayD::from_shape_vec(IxDyn(&[1, 9, 1]), mono).unwrap()).unwrap();
        assert_eq!(y.iter().copied().collect::<Vec<_>>(), vec![1.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn cam_cases() {
        let c = 32;
        let mut l = Cam::new(c, c, 0.0, Activation::Linear, &mut rng(0)).unwrap();
        l.weight.value.fill(0.0);
        l.bias.value.fill(1.0);
        let x = rand3(2, 4, c, 1);
        let y = l.forward(x.clone().into_dyn()).unwrap();
        assert_eq!(y, x.clone().into_dyn());
        l.bias.value.fill(0.0);
        assert!(l.forward(x.clone().into_dyn()).unwrap().iter().all(|v| *v == 0.0));

        let mut l = Cam::new(c, c, 0.0, Activation::Linear, &mut rng(3)).unwrap();
        l.bias.value = ArrayD::from_shape_fn(IxDyn(&[c]), |i| i[0] as f64 * 0.01);
        let x = rand3(1, 4, c, 2);
        let y = as3(l.forward(x.clone().into_dyn()).unwrap(), "t").unwrap();
        let w = view2(&l.weight).to_owned();
        for t in 0..4 {
            for j in 0..c {
                let a: f64 = (0..c).map(|i| x[[0, t, i]] * w[[i, j]]).sum::<f64>() + l.bias.value[j];
                assert!((y[[0, t, j]] - a * x[[0, t, j]]).abs() < 1e-12);
            }
        }
        assert!(Cam::new(32, 16, 0.0, Activation::Sigmoid, &mut rng(0)).is_err());
    }

    #[test]
    fn dense_identity() {
        let w = Param::new("w", ArrayD::from_shape_fn(IxDyn(&[3, 3]), |i| if i[0] == i[1] { 1.0 } else { 0.0 }), 0.0);
        let mut l = Dense::from_params(w, Param::new("b", ArrayD::zeros(IxDyn(&[3])), 0.0), Activation::Linear);
        let x = ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        assert_eq!(l.forward(x.clone()).unwrap(), x);
    }

    #[test]
    fn dropout_modes() {
        let mut d = Dropout::new(0.4, 1).unwrap();
        let x = ArrayD::from_elem(IxDyn(&[100, 100]), 1.0);
        assert_eq!(d.forward(x.clone(), false).unwrap(), x);
        let y = d.forward(x.clone(), true).unwrap();
        let mean = y.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.03, "{mean}");
        let zeros = y.iter().filter(|v| **v == 0.0).count() as f64 / 1e4;
        assert!((zeros - 0.4).abs() < 0.03);
        assert!(Dropout::new(1.0, 0).is_err());
    }

    #[test]
    fn backward_without_forward() {
        let mut l = Layer::Dense(Dense::new("d", 3, 2, 0.0, Activation::Linear, &mut rng(0)));
        assert_eq!(l.backward(ArrayD::zeros(IxDyn(&[1, 2]))).unwrap_err(), NnError::NoGraph("dense"));
        let mut p = Layer::MaxPool1d(MaxPool1d::new(2, 2));
        assert_eq!(p.backward(ArrayD::zeros(IxDyn(&[1, 2, 1]))).unwrap_err(), NnError::NoGraph("maxpool1d"));
    }
}
