use std::fmt::Debug;
use std::ops::AddAssign;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayView3, Axis, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{param_count, Activation, LayerKind, NetworkSpec};
use crate::error::{Error, Result};

/// Floating-point type the network can run in.
pub trait Scalar:
    LinalgScalar + Float + ScalarOperand + AddAssign + Debug + Default + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("representable constant")
    }
    fn as_f64(self) -> f64 {
        <Self as num_traits::ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Forward-pass mode. Training mode draws dropout masks from the given
/// stream; evaluation mode is deterministic.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    params: Vec<Array2<T>>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

struct LstmCache<T> {
    xs: Vec<Array2<T>>,
    /// h_0 .. h_l
    hs: Vec<Array2<T>>,
    /// c_0 .. c_l
    cs: Vec<Array2<T>>,
    /// post-activation gates [i | f | g | o] per step
    gates: Vec<Array2<T>>,
    tanh_c: Vec<Array2<T>>,
}

struct DenseCache<T> {
    input: Array2<T>,
    /// Activation output before dropout.
    active: Array2<T>,
    mask: Option<Array2<T>>,
    relu: bool,
}

enum Cache<T> {
    Lstm(LstmCache<T>),
    Dense(DenseCache<T>),
}

enum Flow<T> {
    Seq(Vec<Array2<T>>),
    Flat(Array2<T>),
}

impl<T: Scalar> Network<T> {
    /// Randomly initialized weights: uniform `+-sqrt(6 / fan_in)` for
    /// hidden dense layers, `+-sqrt(6 / (fan_in + fan_out))` for the output,
    /// `+-1 / sqrt(h)` for recurrent weights, zero biases except the
    /// forget gate (1).
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut width = spec.input;
        let n_layers = spec.layers.len();
        for (idx, layer) in spec.layers.iter().enumerate() {
            let u = layer.units();
            let mut uniform = |rows: usize, cols: usize, limit: f64| {
                Array2::from_shape_fn((rows, cols), |_| T::of(rng.random_range(-limit..limit)))
            };
            if layer.is_lstm() {
                let limit = 1.0 / (u as f64).sqrt();
                params.push(uniform(width, 4 * u, limit));
                params.push(uniform(u, 4 * u, limit));
                let mut b = Array2::zeros((1, 4 * u));
                b.slice_mut(s![.., u..2 * u]).fill(T::one());
                params.push(b);
            } else {
                let limit = if idx + 1 == n_layers {
                    (6.0 / (width + u) as f64).sqrt()
                } else {
                    (6.0 / width as f64).sqrt()
                };
                params.push(uniform(width, u, limit));
                params.push(Array2::zeros((1, u)));
            }
            width = u;
        }
        Ok(Network { spec, params })
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec.param_shapes().into_iter().map(Array2::zeros).collect();
        Ok(Network { spec, params })
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<Array2<T>>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        let got: Vec<(usize, usize)> = params.iter().map(|p| p.dim()).collect();
        if got != shapes {
            return Err(Error::ShapeMismatch {
                expected: format!("{shapes:?}"),
                got: format!("{got:?}"),
            });
        }
        Ok(Network { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Array2<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<T>] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Array2::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            params: self
                .params
                .iter()
                .map(|p| p.mapv(|v| U::of(v.as_f64())))
                .collect(),
        }
    }

    fn check_input(&self, x: &ArrayView3<T>) -> Result<()> {
        let (b, l, f) = x.dim();
        if l != self.spec.series_len || f != self.spec.input || b == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("(b >= 1, {}, {})", self.spec.series_len, self.spec.input),
                got: format!("({b}, {l}, {f})"),
            });
        }
        Ok(())
    }

    /// Class probabilities for a batch of shape `(b, l, f)`. Dense-only
    /// networks take `l = 1`.
    pub fn forward(&self, x: ArrayView3<T>, mode: Mode<'_>) -> Result<Array2<T>> {
        Ok(softmax(self.logits(x, mode)?))
    }

    /// Pre-softmax outputs.
    pub fn logits(&self, x: ArrayView3<T>, mode: Mode<'_>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        Ok(self.run(x, mode, false).0)
    }

    /// Mean cross-entropy of the batch.
    pub fn loss(&self, x: ArrayView3<T>, labels: &[u32], mode: Mode<'_>) -> Result<T> {
        self.check_input(&x)?;
        self.check_labels(x.dim().0, labels)?;
        let (logits, _) = self.run(x, mode, false);
        Ok(cross_entropy(&logits, labels))
    }

    fn check_labels(&self, b: usize, labels: &[u32]) -> Result<()> {
        if labels.len() != b {
            return Err(Error::ShapeMismatch {
                expected: format!("{b} labels"),
                got: format!("{}", labels.len()),
            });
        }
        let k = self.spec.classes();
        if let Some(&label) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        Ok(())
    }

    /// Training-mode loss and the gradient of every weight array, in
    /// declaration order. Dropout masks come from `rng`.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView3<T>,
        labels: &[u32],
        rng: &mut ChaCha8Rng,
    ) -> Result<(T, Vec<Array2<T>>, Array2<T>)> {
        self.check_input(&x)?;
        self.check_labels(x.dim().0, labels)?;
        let (logits, caches) = self.run(x, Mode::Train(rng), true);
        let loss = cross_entropy(&logits, labels);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0 });
        }
        let probs = softmax(logits);
        let b = T::of(labels.len() as f64);
        let mut delta = probs.clone();
        for (r, &y) in labels.iter().enumerate() {
            delta[(r, y as usize)] = delta[(r, y as usize)] - T::one();
        }
        delta.mapv_inplace(|v| v / b);
        let grads = self.backward(delta, caches);
        Ok((loss, grads, probs))
    }

    /// Predicted labels (argmax, ties to the lowest index) and probabilities.
    pub fn predict(&self, x: ArrayView3<T>) -> Result<(Vec<u32>, Array2<T>)> {
        let probs = self.forward(x, Mode::Eval)?;
        Ok((argmax_rows(&probs.view()), probs))
    }

    fn layer_param_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.spec.layers.len());
        let mut k = 0;
        for l in &self.spec.layers {
            offsets.push(k);
            k += if l.is_lstm() { 3 } else { 2 };
        }
        offsets
    }

    fn run(&self, x: ArrayView3<T>, mut mode: Mode<'_>, keep: bool) -> (Array2<T>, Vec<Cache<T>>) {
        let offsets = self.layer_param_offsets();
        let n = self.spec.layers.len();
        let mut flow = if self.spec.layers[0].is_lstm() {
            Flow::Seq(
                (0..x.dim().1)
                    .map(|t| x.slice(s![.., t, ..]).to_owned())
                    .collect(),
            )
        } else {
            Flow::Flat(x.index_axis(Axis(1), 0).to_owned())
        };
        let mut caches = Vec::new();
        for (idx, layer) in self.spec.layers.iter().enumerate() {
            let p = &self.params[offsets[idx]..];
            flow = match (layer.kind, flow) {
                (LayerKind::Lstm { .. }, Flow::Seq(xs)) => {
                    let next_is_lstm = self.spec.layers.get(idx + 1).is_some_and(|l| l.is_lstm());
                    let (hs, cache) = lstm_forward(&p[0], &p[1], &p[2], xs, keep);
                    if let Some(c) = cache {
                        caches.push(Cache::Lstm(c));
                    }
                    if next_is_lstm {
                        Flow::Seq(hs)
                    } else {
                        Flow::Flat(hs.into_iter().last().expect("at least one step"))
                    }
                }
                (LayerKind::Dense { activation, .. }, Flow::Flat(input)) => {
                    let relu = activation == Activation::Relu;
                    let mut out = affine(&input, &p[0], &p[1]);
                    if relu {
                        out.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
                    }
                    let mask = match &mut mode {
                        Mode::Train(rng) if layer.dropout > 0.0 => {
                            Some(dropout_mask(out.dim(), layer.dropout, rng))
                        }
                        _ => None,
                    };
                    let dropped = match &mask {
                        Some(m) => &out * m,
                        None => out.clone(),
                    };
                    if keep {
                        caches.push(Cache::Dense(DenseCache {
                            input,
                            active: out,
                            mask,
                            relu,
                        }));
                    }
                    Flow::Flat(dropped)
                }
                (LayerKind::Softmax { .. }, Flow::Flat(input)) => {
                    let logits = affine(&input, &p[0], &p[1]);
                    if keep {
                        caches.push(Cache::Dense(DenseCache {
                            input,
                            active: Array2::zeros((0, 0)),
                            mask: None,
                            relu: false,
                        }));
                    }
                    debug_assert_eq!(idx + 1, n);
                    Flow::Flat(logits)
                }
                _ => unreachable!("layer order is validated"),
            };
        }
        match flow {
            Flow::Flat(logits) => (logits, caches),
            Flow::Seq(_) => unreachable!("softmax output is last"),
        }
    }

    fn backward(&self, delta: Array2<T>, caches: Vec<Cache<T>>) -> Vec<Array2<T>> {
        let offsets = self.layer_param_offsets();
        let mut grads: Vec<Array2<T>> =
            self.params.iter().map(|p| Array2::zeros(p.dim())).collect();
        let mut upstream = Flow::Flat(delta);
        let n = self.spec.layers.len();
        for (idx, cache) in caches.into_iter().enumerate().rev() {
            let off = offsets[idx];
            let need_input_grad = idx > 0;
            upstream = match (cache, upstream) {
                (Cache::Dense(c), Flow::Flat(mut d)) => {
                    if idx + 1 < n {
                        if let Some(m) = &c.mask {
                            d = d * m;
                        }
                        if c.relu {
                            ndarray::Zip::from(&mut d).and(&c.active).for_each(|g, &a| {
                                if a <= T::zero() {
                                    *g = T::zero();
                                }
                            });
                        }
                    }
                    let (gw, rest) = grads[off..].split_at_mut(1);
                    general_mat_mul(T::one(), &c.input.t(), &d, T::one(), &mut gw[0]);
                    rest[0] += &d.sum_axis(Axis(0)).insert_axis(Axis(0));
                    if need_input_grad {
                        Flow::Flat(d.dot(&self.params[off].t()))
                    } else {
                        Flow::Flat(Array2::zeros((0, 0)))
                    }
                }
                (Cache::Lstm(c), up) => {
                    let steps = c.xs.len();
                    let dh_out: Vec<Option<Array2<T>>> = match up {
                        Flow::Seq(seq) => seq.into_iter().map(Some).collect(),
                        Flow::Flat(last) => {
                            let mut v: Vec<Option<Array2<T>>> = (0..steps).map(|_| None).collect();
                            v[steps - 1] = Some(last);
                            v
                        }
                    };
                    let (g0, rest) = grads[off..].split_at_mut(1);
                    let (g1, g2) = rest.split_at_mut(1);
                    let dxs = lstm_backward(
                        &self.params[off],
                        &self.params[off + 1],
                        &c,
                        dh_out,
                        (&mut g0[0], &mut g1[0], &mut g2[0]),
                        need_input_grad,
                    );
                    Flow::Seq(dxs)
                }
                _ => unreachable!("cache and gradient flow agree"),
            };
        }
        grads
    }
}

fn affine<T: Scalar>(x: &Array2<T>, w: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let mut out = b
        .broadcast((x.nrows(), w.ncols()))
        .expect("bias row")
        .to_owned();
    general_mat_mul(T::one(), x, w, T::one(), &mut out);
    out
}

fn dropout_mask<T: Scalar>(dim: (usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> Array2<T> {
    let keep = 1.0 - rate;
    let scale = T::of(1.0 / keep);
    Array2::from_shape_simple_fn(dim, || {
        if rng.random::<f64>() < keep {
            scale
        } else {
            T::zero()
        }
    })
}

/// Row-wise softmax.
pub fn softmax<T: Scalar>(mut logits: Array2<T>) -> Array2<T> {
    for mut row in logits.rows_mut() {
        let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    logits
}

/// Mean of `-log softmax(logits)[label]`, computed via log-sum-exp.
pub fn cross_entropy<T: Scalar>(logits: &Array2<T>, labels: &[u32]) -> T {
    let mut total = 0.0f64;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let max = row.fold(T::neg_infinity(), |m, &v| m.max(v)).as_f64();
        let lse = max
            + row
                .iter()
                .map(|v| (v.as_f64() - max).exp())
                .sum::<f64>()
                .ln();
        total += lse - row[y as usize].as_f64();
    }
    T::of(total / labels.len() as f64)
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(probs: &ArrayView2<T>) -> Vec<u32> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}

fn lstm_forward<T: Scalar>(
    wx: &Array2<T>,
    wh: &Array2<T>,
    b: &Array2<T>,
    xs: Vec<Array2<T>>,
    keep: bool,
) -> (Vec<Array2<T>>, Option<LstmCache<T>>) {
    let batch = xs[0].nrows();
    let h = wh.nrows();
    let mut h_prev = Array2::<T>::zeros((batch, h));
    let mut c_prev = Array2::<T>::zeros((batch, h));
    let steps = xs.len();
    let mut out = Vec::with_capacity(steps);
    let mut cache = keep.then(|| LstmCache {
        xs: Vec::new(),
        hs: vec![h_prev.clone()],
        cs: vec![c_prev.clone()],
        gates: Vec::with_capacity(steps),
        tanh_c: Vec::with_capacity(steps),
    });
    for x in xs {
        let mut z = b.broadcast((batch, 4 * h)).expect("bias row").to_owned();
        general_mat_mul(T::one(), &x, wx, T::one(), &mut z);
        general_mat_mul(T::one(), &h_prev, wh, T::one(), &mut z);
        let mut c = Array2::<T>::zeros((batch, h));
        let mut hn = Array2::<T>::zeros((batch, h));
        let mut tc = Array2::<T>::zeros((batch, h));
        for r in 0..batch {
            let mut zr = z.row_mut(r);
            let zr = zr.as_slice_mut().expect("contiguous gates");
            let cp = c_prev.row(r);
            let (mut cr, mut hr, mut tr) = (c.row_mut(r), hn.row_mut(r), tc.row_mut(r));
            for j in 0..h {
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[h + j]);
                let g = zr[2 * h + j].tanh();
                let o = sigmoid(zr[3 * h + j]);
                zr[j] = i;
                zr[h + j] = f;
                zr[2 * h + j] = g;
                zr[3 * h + j] = o;
                let cv = f * cp[j] + i * g;
                let t = cv.tanh();
                cr[j] = cv;
                tr[j] = t;
                hr[j] = o * t;
            }
        }
        if let Some(cache) = cache.as_mut() {
            cache.xs.push(x);
            cache.hs.push(hn.clone());
            cache.cs.push(c.clone());
            cache.gates.push(z);
            cache.tanh_c.push(tc);
        }
        out.push(hn.clone());
        h_prev = hn;
        c_prev = c;
    }
    (out, cache)
}

fn lstm_backward<T: Scalar>(
    wx: &Array2<T>,
    wh: &Array2<T>,
    cache: &LstmCache<T>,
    dh_out: Vec<Option<Array2<T>>>,
    grads: (&mut Array2<T>, &mut Array2<T>, &mut Array2<T>),
    need_dx: bool,
) -> Vec<Array2<T>> {
    let (gwx, gwh, gb) = grads;
    let steps = cache.xs.len();
    let batch = cache.xs[0].nrows();
    let h = wh.nrows();
    let mut dh_next = Array2::<T>::zeros((batch, h));
    let mut dc_next = Array2::<T>::zeros((batch, h));
    let mut dxs = vec![Array2::zeros((0, 0)); if need_dx { steps } else { 0 }];
    let one = T::one();
    for (t, dh_t) in dh_out.into_iter().enumerate().rev() {
        let mut dh = dh_next;
        if let Some(d) = dh_t {
            dh += &d;
        }
        let gates = &cache.gates[t];
        let tc = &cache.tanh_c[t];
        let c_prev = &cache.cs[t];
        let mut dz = Array2::<T>::zeros((batch, 4 * h));
        for r in 0..batch {
            let gr = gates.row(r);
            let mut dzr = dz.row_mut(r);
            let mut dcr = dc_next.row_mut(r);
            let (dhr, tcr, cpr) = (dh.row(r), tc.row(r), c_prev.row(r));
            for j in 0..h {
                let (i, f, g, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                let tcv = tcr[j];
                let dc = dhr[j] * o * (one - tcv * tcv) + dcr[j];
                dzr[j] = dc * g * i * (one - i);
                dzr[h + j] = dc * cpr[j] * f * (one - f);
                dzr[2 * h + j] = dc * i * (one - g * g);
                dzr[3 * h + j] = dhr[j] * tcv * o * (one - o);
                dcr[j] = dc * f;
            }
        }
        general_mat_mul(one, &cache.xs[t].t(), &dz, one, gwx);
        general_mat_mul(one, &cache.hs[t].t(), &dz, one, gwh);
        *gb += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
        if need_dx {
            dxs[t] = dz.dot(&wx.t());
        }
        dh_next = dz.dot(&wh.t());
    }
    dxs
}

impl<T: Scalar> Network<T> {
    /// Consistency check between the stored arrays and the closed form.
    pub fn check_param_count(&self) -> bool {
        self.n_params() == param_count(&self.spec)
    }
}
