use std::ops::Range;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, SrError, SrInput};
use crate::patchset::DriverKind;

const K: usize = 3;
const K2: usize = K * K;

/// Layer widths of the residual branch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub in_channels: usize,
    /// Feature maps of each hidden layer; the last layer always has α² maps.
    pub hidden: Vec<usize>,
    pub alpha: usize,
}

impl Topology {
    /// Three 3×3 layers with 16 feature maps.
    pub fn new(in_channels: usize, alpha: usize) -> Self {
        Self {
            in_channels,
            hidden: vec![16, 16],
            alpha,
        }
    }

    /// `(in, out)` channels per layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.in_channels];
        widths.extend(&self.hidden);
        widths.push(self.alpha * self.alpha);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| o * i * K2 + o).sum()
    }
}

/// Bicubic skip path on channel 0 plus a convolutional residual branch
/// ending in a pixel shuffle.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvModel {
    topology: Topology,
    drivers: Vec<DriverKind>,
    seed: u64,
    params: Vec<f64>,
}

/// Intermediate values kept for the backward pass.
struct Trace {
    cols: Vec<Array2<f64>>,
    acts: Vec<Array2<f64>>,
    out: Array2<f64>,
}

impl ConvModel {
    /// He-uniform weights, zero biases and a zero final layer, so the
    /// untrained model reproduces the bicubic baseline.
    pub fn new(topology: Topology, drivers: Vec<DriverKind>, seed: u64) -> Self {
        Self::init(topology, drivers, seed, true)
    }

    /// Like [`ConvModel::new`] but with a random final layer too.
    pub fn new_random(topology: Topology, drivers: Vec<DriverKind>, seed: u64) -> Self {
        Self::init(topology, drivers, seed, false)
    }

    fn init(topology: Topology, drivers: Vec<DriverKind>, seed: u64, zero_final: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = topology.layers();
        let mut params = Vec::with_capacity(topology.n_params());
        for (l, &(cin, cout)) in layers.iter().enumerate() {
            let bound = (6.0 / (cin * K2) as f64).sqrt();
            let zero = zero_final && l + 1 == layers.len();
            for _ in 0..cout * cin * K2 {
                params.push(if zero { 0.0 } else { rng.random_range(-bound..bound) });
            }
            params.extend(std::iter::repeat_n(0.0, cout));
        }
        Self {
            topology,
            drivers,
            seed,
            params,
        }
    }

    pub fn from_parts(topology: Topology, drivers: Vec<DriverKind>, seed: u64, params: Vec<f64>) -> Result<Self> {
        if params.len() != topology.n_params() {
            return Err(SrError::BadModel(format!(
                "topology needs {} weights, got {}",
                topology.n_params(),
                params.len()
            )));
        }
        if !drivers.is_empty() && drivers.len() + 1 != topology.in_channels {
            return Err(SrError::BadModel("driver list does not match the channel count".into()));
        }
        Ok(Self {
            topology,
            drivers,
            seed,
            params,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn drivers(&self) -> &[DriverKind] {
        &self.drivers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Index ranges of layer `l`'s weights and biases in [`Self::params`].
    pub fn layer_ranges(&self, l: usize) -> (Range<usize>, Range<usize>) {
        let mut off = 0;
        for (k, &(cin, cout)) in self.topology.layers().iter().enumerate() {
            let w = off..off + cout * cin * K2;
            let b = w.end..w.end + cout;
            if k == l {
                return (w, b);
            }
            off = b.end;
        }
        panic!("layer {l} out of range");
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, &[f64]) {
        let (cin, cout) = self.topology.layers()[l];
        let (w, b) = self.layer_ranges(l);
        let w = ArrayView2::from_shape((cout, cin * K2), &self.params[w]).expect("layer shape");
        (w, &self.params[b])
    }

    fn check(&self, input: &SrInput) -> Result<()> {
        if input.n_channels() != self.topology.in_channels {
            return Err(SrError::ChannelMismatch {
                got: input.n_channels(),
                want: self.topology.in_channels,
            });
        }
        if input.alpha() != self.topology.alpha {
            return Err(SrError::AlphaMismatch {
                got: input.alpha(),
                want: self.topology.alpha,
            });
        }
        Ok(())
    }

    fn run(&self, input: &SrInput) -> Trace {
        let (h, w) = (input.height(), input.width());
        let a = self.topology.alpha;
        // channels-last [H·W, C]
        let mut x = input
            .channels()
            .view()
            .into_shape_with_order((input.n_channels(), h * w))
            .expect("contiguous input")
            .t()
            .to_owned();
        let n_layers = self.topology.layers().len();
        let mut cols = Vec::with_capacity(n_layers);
        let mut acts = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (wt, b) = self.layer(l);
            let c = im2col(&x, h, w);
            let mut z = c.dot(&wt.t());
            for mut row in z.rows_mut() {
                for (v, bias) in row.iter_mut().zip(b) {
                    *v += bias;
                }
            }
            if l + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
                acts.push(z.clone());
            }
            cols.push(c);
            x = z;
        }
        let mut out = input.skip();
        for i in 0..h {
            for j in 0..w {
                for da in 0..a {
                    for db in 0..a {
                        out[[a * i + da, a * j + db]] += x[[i * w + j, da * a + db]];
                    }
                }
            }
        }
        Trace { cols, acts, out }
    }

    /// Unclamped output.
    pub fn forward(&self, input: &SrInput) -> Result<Array2<f64>> {
        self.check(input)?;
        Ok(self.run(input).out)
    }

    /// Mean squared error against `target` (unclamped output).
    pub fn loss(&self, input: &SrInput, target: ArrayView2<'_, f64>) -> Result<f64> {
        let out = self.forward(input)?;
        check_target(&out, target)?;
        Ok((&out - &target).mapv(|d| d * d).mean().unwrap_or(0.0))
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, input: &SrInput, target: ArrayView2<'_, f64>) -> Result<(f64, Vec<f64>)> {
        self.check(input)?;
        let trace = self.run(input);
        check_target(&trace.out, target)?;
        let (h, w) = (input.height(), input.width());
        let a = self.topology.alpha;
        let diff = &trace.out - &target;
        let n = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;

        let mut dz = Array2::zeros((h * w, a * a));
        for i in 0..h {
            for j in 0..w {
                for da in 0..a {
                    for db in 0..a {
                        dz[[i * w + j, da * a + db]] = 2.0 * diff[[a * i + da, a * j + db]] / n;
                    }
                }
            }
        }
        let mut grad = vec![0.0; self.params.len()];
        let layers = self.topology.layers();
        for l in (0..layers.len()).rev() {
            let (wr, br) = self.layer_ranges(l);
            let dw = dz.t().dot(&trace.cols[l]);
            grad[wr].copy_from_slice(dw.as_slice().expect("standard layout"));
            for (g, col) in grad[br].iter_mut().zip(dz.axis_iter(Axis(1))) {
                *g = col.sum();
            }
            if l == 0 {
                break;
            }
            let (wt, _) = self.layer(l);
            let dcols = dz.dot(&wt);
            let mut da_prev = col2im(&dcols, h, w, layers[l].0);
            let act = &trace.acts[l - 1];
            ndarray::Zip::from(&mut da_prev).and(act).for_each(|g, &v| {
                if v <= 0.0 {
                    *g = 0.0;
                }
            });
            dz = da_prev;
        }
        Ok((loss, grad))
    }
}

fn check_target(out: &Array2<f64>, target: ArrayView2<'_, f64>) -> Result<()> {
    if out.dim() != target.dim() {
        return Err(SrError::InvalidInput(format!(
            "target shape {:?} differs from output {:?}",
            target.dim(),
            out.dim()
        )));
    }
    Ok(())
}

/// `[H·W, C] → [H·W, C·9]`, zero padding; column `c·9 + ky·3 + kx`.
fn im2col(x: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    let c = x.ncols();
    let mut out = Array2::zeros((h * w, c * K2));
    for i in 0..h {
        for j in 0..w {
            let mut row = out.row_mut(i * w + j);
            for ky in 0..K {
                let y = i as isize + ky as isize - 1;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for kx in 0..K {
                    let xx = j as isize + kx as isize - 1;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let src = x.row(y as usize * w + xx as usize);
                    for ch in 0..c {
                        row[ch * K2 + ky * K + kx] = src[ch];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`].
fn col2im(cols: &Array2<f64>, h: usize, w: usize, c: usize) -> Array2<f64> {
    let mut out = Array2::zeros((h * w, c));
    for i in 0..h {
        for j in 0..w {
            let row = cols.row(i * w + j);
            for ky in 0..K {
                let y = i as isize + ky as isize - 1;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for kx in 0..K {
                    let xx = j as isize + kx as isize - 1;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let mut dst = out.row_mut(y as usize * w + xx as usize);
                    for ch in 0..c {
                        dst[ch] += row[ch * K2 + ky * K + kx];
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn random_input(c: usize, h: usize, w: usize, seed: u64) -> SrInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SrInput::new(Array3::from_shape_fn((c, h, w), |_| rng.random::<f64>()), 2).unwrap()
    }

    /// Direct zero-padded 3×3 convolution on `[C, H, W]` arrays.
    fn conv_direct(x: &Array3<f64>, wts: &[f64], bias: &[f64], cout: usize) -> Array3<f64> {
        let (cin, h, w) = x.dim();
        Array3::from_shape_fn((cout, h, w), |(o, i, j)| {
            let mut s = bias[o];
            for c in 0..cin {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (y, xx) = (i as isize + ky as isize - 1, j as isize + kx as isize - 1);
                        if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                            s += wts[((o * cin + c) * 3 + ky) * 3 + kx] * x[[c, y as usize, xx as usize]];
                        }
                    }
                }
            }
            s
        })
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let topo = Topology {
            in_channels: 2,
            hidden: vec![3],
            alpha: 2,
        };
        let m = ConvModel::new_random(topo, vec![], 4);
        let input = random_input(2, 5, 6, 1);
        let got = m.forward(&input).unwrap();

        let (w0, b0) = m.layer_ranges(0);
        let (w1, b1) = m.layer_ranges(1);
        let p = m.params();
        let hidden = conv_direct(input.channels(), &p[w0], &p[b0], 3).mapv(|v| v.max(0.0));
        let last = conv_direct(&hidden, &p[w1], &p[b1], 4);
        let skip = input.skip();
        for i in 0..10 {
            for j in 0..12 {
                let want = skip[[i, j]] + last[[(i % 2) * 2 + j % 2, i / 2, j / 2]];
                assert!((got[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_final_layer_reproduces_bicubic() {
        let m = ConvModel::new(Topology::new(3, 2), vec![], 9);
        let input = random_input(3, 15, 15, 2);
        assert_eq!(m.forward(&input).unwrap(), input.skip());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let topo = Topology {
            in_channels: 2,
            hidden: vec![4],
            alpha: 2,
        };
        let m = ConvModel::new_random(topo, vec![], 3);
        let input = random_input(2, 6, 6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let target = Array2::from_shape_fn((12, 12), |_| rng.random::<f64>());
        let (_, grad) = m.loss_and_grad(&input, target.view()).unwrap();
        let eps = 1e-5;
        for k in 0..m.params().len() {
            let mut plus = m.clone();
            plus.params_mut()[k] += eps;
            let mut minus = m.clone();
            minus.params_mut()[k] -= eps;
            let fd = (plus.loss(&input, target.view()).unwrap() - minus.loss(&input, target.view()).unwrap()) / (2.0 * eps);
            let scale = grad[k].abs().max(fd.abs());
            if scale > 1e-8 {
                assert!((grad[k] - fd).abs() / scale <= 1e-4, "param {k}: {} vs {fd}", grad[k]);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let m = ConvModel::new(Topology::new(2, 2), vec![], 0);
        assert!(matches!(
            m.forward(&random_input(1, 4, 4, 0)),
            Err(SrError::ChannelMismatch { got: 1, want: 2 })
        ));
    }

    #[test]
    fn parameter_layout() {
        let t = Topology::new(2, 2);
        assert_eq!(t.layers(), vec![(2, 16), (16, 16), (16, 4)]);
        assert_eq!(t.n_params(), 2 * 16 * 9 + 16 + 16 * 16 * 9 + 16 + 16 * 4 * 9 + 4);
        let m = ConvModel::new(t.clone(), vec![DriverKind::Cl], 1);
        let (w, b) = m.layer_ranges(2);
        assert!(m.params()[w].iter().chain(&m.params()[b]).all(|&v| v == 0.0));
        assert!(ConvModel::from_parts(t, vec![DriverKind::Cl, DriverKind::Tc], 0, vec![0.0; 10]).is_err());
    }
}
