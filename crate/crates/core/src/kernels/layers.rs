use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::FeatureMap;
use crate::error::{Error, Result};
use crate::rng::{hashed_uniform, SeededRng};

pub const BN_EPS: f64 = 1e-5;

fn uniform(len: usize, bound: f64, rng: &mut SeededRng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    /// Leaky ReLU with slope 0.2.
    Leaky,
    Gelu,
}

const SQRT_1_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Leaky => {
                if x >= 0.0 {
                    x
                } else {
                    0.2 * x
                }
            }
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x * SQRT_1_2)),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Leaky => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.2
                }
            }
            Activation::Gelu => {
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                0.5 * (1.0 + libm::erf(x * SQRT_1_2)) + x * pdf
            }
        }
    }
}

/// Inference-mode batch normalization over channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNorm {
    pub fn identity(c: usize) -> BatchNorm {
        BatchNorm {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            mean: vec![0.0; c],
            var: vec![1.0; c],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel (scale, shift) such that `bn(x) = x·scale + shift`.
    pub fn affine(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = self
            .gamma
            .iter()
            .zip(&self.var)
            .map(|(g, v)| g / (v + BN_EPS).sqrt())
            .collect();
        let shift = self
            .beta
            .iter()
            .zip(&self.mean)
            .zip(&scale)
            .map(|((b, m), s)| b - m * s)
            .collect();
        (scale, shift)
    }
}

/// Applies batch norm then the activation in place on channel-innermost
/// data.
pub fn bn_act(data: &mut [f64], bn: &BatchNorm, act: Activation) {
    let (scale, shift) = bn.affine();
    let c = scale.len();
    data.par_chunks_mut(c).for_each(|row| {
        for ((x, s), t) in row.iter_mut().zip(&scale).zip(&shift) {
            *x = act.apply(*x * s + t);
        }
    });
}

/// 3D convolution (cross-correlation), cubic kernel, stride 1, symmetric
/// zero padding. Weights are `[k³][in][out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub pad: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

fn nonzero_voxels(x: &FeatureMap) -> Vec<bool> {
    (0..x.voxels()).map(|v| x.voxel(v).iter().any(|&a| a != 0.0)).collect()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

impl Conv3d {
    pub fn init(in_c: usize, out_c: usize, k: usize, pad: usize, rng: &mut SeededRng) -> Conv3d {
        let bound = 1.0 / ((in_c * k * k * k) as f64).sqrt();
        Conv3d {
            in_c,
            out_c,
            k,
            pad,
            weight: uniform(k * k * k * in_c * out_c, bound, rng),
            bias: vec![0.0; out_c],
        }
    }

    pub fn output_resolution(&self, r: usize) -> usize {
        r + 2 * self.pad + 1 - self.k
    }

    pub fn forward(&self, x: &FeatureMap, layer: &str) -> Result<FeatureMap> {
        if x.channels() != self.in_c {
            return Err(Error::shape(layer, format!("expected {} input channels, got {}", self.in_c, x.channels())));
        }
        let (r, k, pad) = (x.resolution() as isize, self.k as isize, self.pad as isize);
        if r + 2 * pad < k {
            return Err(Error::shape(layer, format!("input {r}³ smaller than kernel {k}³")));
        }
        let ro = self.output_resolution(x.resolution());
        let live = nonzero_voxels(x);
        let (ic_n, oc_n) = (self.in_c, self.out_c);
        let mut out = FeatureMap::zeros(ro, oc_n);
        out.data_mut().par_chunks_mut(oc_n).enumerate().for_each(|(o, acc)| {
            acc.copy_from_slice(&self.bias);
            let ox = (o % ro) as isize;
            let oy = ((o / ro) % ro) as isize;
            let oz = (o / (ro * ro)) as isize;
            for kz in 0..k {
                let iz = oz + kz - pad;
                if iz < 0 || iz >= r {
                    continue;
                }
                for ky in 0..k {
                    let iy = oy + ky - pad;
                    if iy < 0 || iy >= r {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = ox + kx - pad;
                        if ix < 0 || ix >= r {
                            continue;
                        }
                        let iv = ((iz * r + iy) * r + ix) as usize;
                        if !live[iv] {
                            continue;
                        }
                        let kidx = ((kz * k + ky) * k + kx) as usize;
                        let wk = &self.weight[kidx * ic_n * oc_n..(kidx + 1) * ic_n * oc_n];
                        for (ic, &v) in x.voxel(iv).iter().enumerate() {
                            if v != 0.0 {
                                axpy(v, &wk[ic * oc_n..(ic + 1) * oc_n], acc);
                            }
                        }
                    }
                }
            }
        });
        Ok(out)
    }
}

/// Transposed 3D convolution, cubic kernel, stride `s`, output cropped by
/// `crop` voxels per side. Weights are `[k³][in][out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose3d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub crop: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvTranspose3d {
    pub fn init(in_c: usize, out_c: usize, k: usize, stride: usize, crop: usize, rng: &mut SeededRng) -> ConvTranspose3d {
        let bound = 1.0 / ((out_c * k * k * k) as f64).sqrt();
        ConvTranspose3d {
            in_c,
            out_c,
            k,
            stride,
            crop,
            weight: uniform(k * k * k * in_c * out_c, bound, rng),
            bias: vec![0.0; out_c],
        }
    }

    pub fn output_resolution(&self, r: usize) -> usize {
        (r - 1) * self.stride + self.k - 2 * self.crop
    }

    pub fn forward(&self, x: &FeatureMap, layer: &str) -> Result<FeatureMap> {
        if x.channels() != self.in_c {
            return Err(Error::shape(layer, format!("expected {} input channels, got {}", self.in_c, x.channels())));
        }
        let r = x.resolution() as isize;
        let (k, s, crop) = (self.k as isize, self.stride as isize, self.crop as isize);
        let ro = self.output_resolution(x.resolution());
        let live = nonzero_voxels(x);
        let (ic_n, oc_n) = (self.in_c, self.out_c);
        // input voxel i and tap t reach full-size output i·s + t
        let taps = |o: isize| -> Vec<(isize, isize)> {
            let full = o + crop;
            (0..k)
                .filter_map(|t| {
                    let d = full - t;
                    (d >= 0 && d % s == 0 && d / s < r).then_some((d / s, t))
                })
                .collect()
        };
        let axis_taps: Vec<Vec<(isize, isize)>> = (0..ro as isize).map(taps).collect();
        let mut out = FeatureMap::zeros(ro, oc_n);
        out.data_mut().par_chunks_mut(oc_n).enumerate().for_each(|(o, acc)| {
            acc.copy_from_slice(&self.bias);
            let (ox, oy, oz) = (o % ro, (o / ro) % ro, o / (ro * ro));
            for &(iz, tz) in &axis_taps[oz] {
                for &(iy, ty) in &axis_taps[oy] {
                    for &(ix, tx) in &axis_taps[ox] {
                        let iv = ((iz * r + iy) * r + ix) as usize;
                        if !live[iv] {
                            continue;
                        }
                        let kidx = ((tz * k + ty) * k + tx) as usize;
                        let wk = &self.weight[kidx * ic_n * oc_n..(kidx + 1) * ic_n * oc_n];
                        for (ic, &v) in x.voxel(iv).iter().enumerate() {
                            if v != 0.0 {
                                axpy(v, &wk[ic * oc_n..(ic + 1) * oc_n], acc);
                            }
                        }
                    }
                }
            }
        });
        Ok(out)
    }
}

/// 2³ max pooling with stride 2; odd trailing voxels are dropped.
pub fn max_pool2(x: &FeatureMap) -> FeatureMap {
    let (r, c) = (x.resolution(), x.channels());
    let ro = r / 2;
    let mut out = FeatureMap::zeros(ro, c);
    out.data_mut().par_chunks_mut(c).enumerate().for_each(|(o, acc)| {
        let (ox, oy, oz) = (o % ro, (o / ro) % ro, o / (ro * ro));
        acc.fill(f64::NEG_INFINITY);
        for v in 0..8 {
            let iv = x.index(2 * ox + (v & 1), 2 * oy + (v >> 1 & 1), 2 * oz + (v >> 2 & 1));
            for (a, &b) in acc.iter_mut().zip(x.voxel(iv)) {
                *a = a.max(b);
            }
        }
    });
    out
}

/// Fully connected layer stored densely, weights `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_f: usize,
    pub out_f: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn init(in_f: usize, out_f: usize, rng: &mut SeededRng) -> Linear {
        let bound = 1.0 / (in_f as f64).sqrt();
        Linear {
            in_f,
            out_f,
            weight: uniform(in_f * out_f, bound, rng),
            bias: uniform(out_f, bound, rng),
        }
    }

    /// Row-batched `x Wᵀ + b`.
    pub fn forward_rows(&self, x: &[f64], layer: &str) -> Result<Vec<f64>> {
        if self.in_f == 0 || x.len() % self.in_f != 0 {
            return Err(Error::shape(layer, format!("input width is not a multiple of {}", self.in_f)));
        }
        let rows = x.len() / self.in_f;
        let mut y = vec![0.0; rows * self.out_f];
        y.par_chunks_mut(self.out_f)
            .zip(x.par_chunks(self.in_f))
            .for_each(|(yr, xr)| {
                for (o, yo) in yr.iter_mut().enumerate() {
                    let w = &self.weight[o * self.in_f..(o + 1) * self.in_f];
                    *yo = self.bias[o] + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                }
            });
        Ok(y)
    }
}

/// Fully connected layer whose weights are regenerated on the fly from a
/// key: `w[o][i] = scale · hashed_uniform(key, o·in + i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProceduralLinear {
    pub in_f: usize,
    pub out_f: usize,
    pub key: u64,
    pub scale: f64,
    pub bias: Vec<f64>,
}

impl ProceduralLinear {
    pub fn init(in_f: usize, out_f: usize, rng: &mut SeededRng) -> ProceduralLinear {
        ProceduralLinear {
            in_f,
            out_f,
            key: rng.gen(),
            scale: 1.0 / (in_f as f64).sqrt(),
            bias: vec![0.0; out_f],
        }
    }

    pub fn weight(&self, o: usize, i: usize) -> f64 {
        self.scale * hashed_uniform(self.key, (o * self.in_f + i) as u64)
    }

    pub fn forward(&self, x: &[f64], layer: &str) -> Result<Vec<f64>> {
        if x.len() != self.in_f {
            return Err(Error::shape(layer, format!("expected {} inputs, got {}", self.in_f, x.len())));
        }
        let live: Vec<(usize, f64)> = x.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect();
        Ok((0..self.out_f)
            .into_par_iter()
            .map(|o| {
                let base = (o * self.in_f) as u64;
                let s: f64 = live
                    .iter()
                    .map(|&(i, v)| v * hashed_uniform(self.key, base + i as u64))
                    .sum();
                self.bias[o] + self.scale * s
            })
            .collect())
    }
}

/// One dense layer of a shared per-row MLP: linear, optional batch norm,
/// activation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayer {
    pub linear: Linear,
    pub bn: Option<BatchNorm>,
    pub act: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<MlpLayer>,
}

/// Activations kept for the backward pass.
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Mlp {
    /// `dims[0] → dims[1] → …`; hidden layers use `hidden`, the last `last`.
    pub fn init(dims: &[usize], hidden: Activation, last: Activation, bn_hidden: bool, rng: &mut SeededRng) -> Mlp {
        let n = dims.len() - 1;
        Mlp {
            layers: (0..n)
                .map(|l| {
                    let is_last = l + 1 == n;
                    MlpLayer {
                        linear: Linear::init(dims[l], dims[l + 1], &mut rng.derive(format!("layer{l}"))),
                        bn: (bn_hidden && !is_last).then(|| BatchNorm::identity(dims[l + 1])),
                        act: if is_last { last } else { hidden },
                    }
                })
                .collect(),
        }
    }

    pub fn in_features(&self) -> usize {
        self.layers[0].linear.in_f
    }

    pub fn out_features(&self) -> usize {
        self.layers.last().map_or(0, |l| l.linear.out_f)
    }

    pub fn forward(&self, x: &[f64], name: &str) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x, name)?.0)
    }

    pub fn forward_cached(&self, x: &[f64], name: &str) -> Result<(Vec<f64>, MlpCache)> {
        let mut cache = MlpCache {
            inputs: Vec::new(),
            pre: Vec::new(),
        };
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.linear.forward_rows(&h, &format!("{name}.fc{l}"))?;
            if let Some(bn) = &layer.bn {
                let (s, t) = bn.affine();
                let c = s.len();
                z.par_chunks_mut(c).for_each(|row| {
                    for ((v, a), b) in row.iter_mut().zip(&s).zip(&t) {
                        *v = *v * a + b;
                    }
                });
            }
            let a: Vec<f64> = z.par_iter().map(|&v| layer.act.apply(v)).collect();
            cache.inputs.push(h);
            cache.pre.push(z);
            h = a;
        }
        Ok((h, cache))
    }

    /// Backpropagates `dy` (rows × out) and returns per-layer parameter
    /// gradients plus the gradient with respect to the input rows.
    pub fn backward(&self, cache: &MlpCache, dy: &[f64]) -> (Vec<LinearGrad>, Vec<f64>) {
        let mut grads = vec![
            LinearGrad {
                weight: Vec::new(),
                bias: Vec::new()
            };
            self.layers.len()
        ];
        let mut d = dy.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (in_f, out_f) = (layer.linear.in_f, layer.linear.out_f);
            let scale = layer.bn.as_ref().map(|bn| bn.affine().0);
            let pre = &cache.pre[l];
            // d/dz
            let dz: Vec<f64> = d
                .iter()
                .zip(pre)
                .enumerate()
                .map(|(idx, (g, &u))| {
                    let s = scale.as_ref().map_or(1.0, |s| s[idx % out_f]);
                    g * layer.act.derivative(u) * s
                })
                .collect();
            let x = &cache.inputs[l];
            let rows = x.len() / in_f;
            let weight: Vec<f64> = (0..out_f)
                .into_par_iter()
                .flat_map_iter(|o| {
                    let mut acc = vec![0.0; in_f];
                    for n in 0..rows {
                        let g = dz[n * out_f + o];
                        if g != 0.0 {
                            axpy(g, &x[n * in_f..(n + 1) * in_f], &mut acc);
                        }
                    }
                    acc
                })
                .collect();
            let bias = (0..out_f).map(|o| (0..rows).map(|n| dz[n * out_f + o]).sum()).collect();
            let w = &layer.linear.weight;
            let mut dx = vec![0.0; rows * in_f];
            dx.par_chunks_mut(in_f).zip(dz.par_chunks(out_f)).for_each(|(dxr, dzr)| {
                for (o, &g) in dzr.iter().enumerate() {
                    if g != 0.0 {
                        axpy(g, &w[o * in_f..(o + 1) * in_f], dxr);
                    }
                }
            });
            grads[l] = LinearGrad { weight, bias };
            d = dx;
        }
        (grads, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_conv(c: &Conv3d, x: &FeatureMap) -> FeatureMap {
        let r = x.resolution() as isize;
        let ro = c.output_resolution(x.resolution());
        let mut out = FeatureMap::zeros(ro, c.out_c);
        for oz in 0..ro {
            for oy in 0..ro {
                for ox in 0..ro {
                    for oc in 0..c.out_c {
                        let mut s = c.bias[oc];
                        for kz in 0..c.k {
                            for ky in 0..c.k {
                                for kx in 0..c.k {
                                    let (iz, iy, ix) = (
                                        (oz + kz) as isize - c.pad as isize,
                                        (oy + ky) as isize - c.pad as isize,
                                        (ox + kx) as isize - c.pad as isize,
                                    );
                                    if [iz, iy, ix].iter().any(|&a| a < 0 || a >= r) {
                                        continue;
                                    }
                                    let iv = x.index(ix as usize, iy as usize, iz as usize);
                                    for ic in 0..c.in_c {
                                        let kidx = (kz * c.k + ky) * c.k + kx;
                                        s += x.voxel(iv)[ic] * c.weight[(kidx * c.in_c + ic) * c.out_c + oc];
                                    }
                                }
                            }
                        }
                        let o = out.index(ox, oy, oz);
                        out.voxel_mut(o)[oc] = s;
                    }
                }
            }
        }
        out
    }

    fn random_map(r: usize, c: usize, rng: &mut SeededRng) -> FeatureMap {
        let data = (0..r * r * r * c)
            .map(|i| if i % 5 == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) })
            .collect();
        FeatureMap::from_data(r, c, data).unwrap()
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = SeededRng::new(1);
        let c = Conv3d::init(3, 2, 4, 2, &mut rng);
        let x = random_map(5, 3, &mut rng);
        let y = c.forward(&x, "t").unwrap();
        assert_eq!(y.resolution(), 6);
        let b = brute_conv(&c, &x);
        for (a, b) in y.data().iter().zip(b.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_conv_matches_scatter() {
        let mut rng = SeededRng::new(2);
        let t = ConvTranspose3d::init(2, 3, 4, 2, 1, &mut rng);
        let x = random_map(3, 2, &mut rng);
        let y = t.forward(&x, "t").unwrap();
        assert_eq!(y.resolution(), 6);
        let full = 2 * 3 + 2;
        let mut refm = vec![0.0; full * full * full * 3];
        for iz in 0..3 {
            for iy in 0..3 {
                for ix in 0..3 {
                    let iv = x.index(ix, iy, iz);
                    for kz in 0..4 {
                        for ky in 0..4 {
                            for kx in 0..4 {
                                let (oz, oy, ox) = (iz * 2 + kz, iy * 2 + ky, ix * 2 + kx);
                                let kidx = (kz * 4 + ky) * 4 + kx;
                                for ic in 0..2 {
                                    for oc in 0..3 {
                                        refm[((oz * full + oy) * full + ox) * 3 + oc] +=
                                            x.voxel(iv)[ic] * t.weight[(kidx * 2 + ic) * 3 + oc];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        for oz in 0..6 {
            for oy in 0..6 {
                for ox in 0..6 {
                    for oc in 0..3 {
                        let a = y.voxel(y.index(ox, oy, oz))[oc];
                        let b = refm[(((oz + 1) * full + oy + 1) * full + ox + 1) * 3 + oc];
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn pool_floors_odd_sizes() {
        let mut rng = SeededRng::new(3);
        let x = random_map(5, 2, &mut rng);
        let p = max_pool2(&x);
        assert_eq!(p.shape(), (2, 2));
        let want = (0..8)
            .map(|v| x.voxel(x.index(2 + (v & 1), v >> 1 & 1, v >> 2 & 1))[1])
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(p.voxel(p.index(1, 0, 0))[1], want);
    }

    #[test]
    fn procedural_linear_matches_materialized() {
        let mut rng = SeededRng::new(4);
        let mut p = ProceduralLinear::init(30, 7, &mut rng);
        p.bias = (0..7).map(|i| i as f64).collect();
        let x: Vec<f64> = (0..30).map(|i| if i % 3 == 0 { 0.0 } else { (i as f64).sin() }).collect();
        let y = p.forward(&x, "t").unwrap();
        for o in 0..7 {
            let s: f64 = (0..30).map(|i| p.weight(o, i) * x[i]).sum();
            assert!((y[o] - (p.bias[o] + s)).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_derivative() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let e = 1e-6;
            let fd = (Activation::Gelu.apply(x + e) - Activation::Gelu.apply(x - e)) / (2.0 * e);
            assert!((fd - Activation::Gelu.derivative(x)).abs() < 1e-8);
        }
        assert!((Activation::Gelu.apply(1.0) - 0.841_344_746_068_543).abs() < 1e-12);
    }

    #[test]
    fn mlp_backward_matches_differences() {
        let mut rng = SeededRng::new(5);
        let mlp = Mlp::init(&[4, 6, 3], Activation::Gelu, Activation::Identity, true, &mut rng);
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = mlp.forward_cached(&x, "m").unwrap();
        let (grads, dx) = mlp.backward(&cache, &up);
        let loss = |m: &Mlp, x: &[f64]| -> f64 { m.forward(x, "m").unwrap().iter().zip(&up).map(|(a, b)| a * b).sum() };
        let e = 1e-6;
        for i in 0..mlp.layers[0].linear.weight.len() {
            let (mut p, mut m) = (mlp.clone(), mlp.clone());
            p.layers[0].linear.weight[i] += e;
            m.layers[0].linear.weight[i] -= e;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * e);
            assert!((fd - grads[0].weight[i]).abs() < 1e-7);
        }
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += e;
            m[i] -= e;
            let fd = (loss(&mlp, &p) - loss(&mlp, &m)) / (2.0 * e);
            assert!((fd - dx[i]).abs() < 1e-7);
        }
    }
}
