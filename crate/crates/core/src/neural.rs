//! Tanh feedforward coefficient network.
//!
//! The network maps a point of the domain to a scalar coefficient value.
//! Besides plain evaluation we need the spatial gradient (for the
//! penalty term) and the parameter gradient of `s * q(x) + t . grad q(x)`
//! (to chain pointwise loss sensitivities through both the value and the
//! spatial gradient), all exact to floating point.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::CoefficientField;
use crate::mesh::Point;
use crate::scalar::Real;

/// Pointwise box bounds of the admissible coefficient set.
#[derive(Debug, Clone, Copy)]
pub struct BoxBounds<T> {
    pub c0: T,
    pub c1: T,
}

impl<T: Real> BoxBounds<T> {
    pub fn new(c0: T, c1: T) -> Result<Self> {
        if !(c0 > T::zero() && c0 < c1 && c1.is_finite()) {
            return Err(Error::invalid("box bounds require 0 < c0 < c1 < inf"));
        }
        Ok(BoxBounds { c0, c1 })
    }
}

/// Pointwise clamp into `[c0, c1]`. The flag is the projection
/// subgradient: true (1) on the closed box, false (0) strictly outside.
pub fn project_box<T: Real>(v: T, bounds: BoxBounds<T>) -> (T, bool) {
    if v < bounds.c0 {
        (bounds.c0, false)
    } else if v > bounds.c1 {
        (bounds.c1, false)
    } else {
        (v, true)
    }
}

/// Weights and biases of a tanh feedforward network; hidden layers apply
/// tanh componentwise, the last layer is affine with scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    layer_sizes: Vec<usize>,
    /// `weights[l]` is `d_{l+1} x d_l`, row-major.
    weights: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
}

impl<T: Real> MlpParams<T> {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("network needs at least one affine layer"));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(Error::invalid("output dimension must be 1"));
        }
        if layer_sizes.iter().any(|&d| d == 0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        let l = layer_sizes.len() - 1;
        let weights = (0..l)
            .map(|i| vec![T::zero(); layer_sizes[i + 1] * layer_sizes[i]])
            .collect();
        let biases = (0..l).map(|i| vec![T::zero(); layer_sizes[i + 1]]).collect();
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// Uniform Glorot initialization with zero biases, seeded for
    /// reproducible training runs.
    pub fn glorot(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut params = Self::zeros(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..params.weights.len() {
            let bound = (6.0 / (layer_sizes[l] + layer_sizes[l + 1]) as f64).sqrt();
            for w in params.weights[l].iter_mut() {
                *w = T::of(rng.gen_range(-bound..bound));
            }
        }
        Ok(params)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Number of affine layers L.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Max layer size, inputs and output included.
    pub fn width(&self) -> usize {
        *self.layer_sizes.iter().max().unwrap()
    }

    /// Max-norm of the parameter vector.
    pub fn max_norm(&self) -> T {
        let mut r = T::zero();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for &v in w.iter().chain(b.iter()) {
                r = r.max(v.abs());
            }
        }
        r
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Flat layout: for each layer, weight matrix (row-major) then bias.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn assign_from_flat(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.param_count());
        let mut pos = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let wn = w.len();
            w.copy_from_slice(&flat[pos..pos + wn]);
            pos += wn;
            let bn = b.len();
            b.copy_from_slice(&flat[pos..pos + bn]);
            pos += bn;
        }
    }

    pub fn from_flat(layer_sizes: &[usize], flat: &[T]) -> Result<Self> {
        let mut p = Self::zeros(layer_sizes)?;
        if flat.len() != p.param_count() {
            return Err(Error::invalid("flat parameter length mismatch"));
        }
        p.assign_from_flat(flat);
        Ok(p)
    }

    fn run(&self, x: &Point<T>) -> ForwardCache<T> {
        let d = self.input_dim();
        let l = self.depth();
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(l);
        let mut jacs: Vec<Vec<T>> = Vec::with_capacity(l);
        let mut pres: Vec<Vec<T>> = Vec::with_capacity(l.saturating_sub(1));
        acts.push(x[..d].to_vec());
        let mut j0 = vec![T::zero(); d * d];
        for k in 0..d {
            j0[k * d + k] = T::one();
        }
        jacs.push(j0);
        for li in 0..l - 1 {
            let (din, dout) = (self.layer_sizes[li], self.layer_sizes[li + 1]);
            let w = &self.weights[li];
            let prev = &acts[li];
            let jprev = &jacs[li];
            let mut act = vec![T::zero(); dout];
            let mut p = vec![T::zero(); dout * d];
            for i in 0..dout {
                let mut z = self.biases[li][i];
                for jj in 0..din {
                    z += w[i * din + jj] * prev[jj];
                }
                act[i] = z.tanh();
                for k in 0..d {
                    let mut s = T::zero();
                    for jj in 0..din {
                        s += w[i * din + jj] * jprev[jj * d + k];
                    }
                    p[i * d + k] = s;
                }
            }
            let mut jac = vec![T::zero(); dout * d];
            for i in 0..dout {
                let dtanh = T::one() - act[i] * act[i];
                for k in 0..d {
                    jac[i * d + k] = dtanh * p[i * d + k];
                }
            }
            acts.push(act);
            jacs.push(jac);
            pres.push(p);
        }
        // Output layer: affine, scalar.
        let din = self.layer_sizes[l - 1];
        let w = &self.weights[l - 1];
        let prev = &acts[l - 1];
        let jprev = &jacs[l - 1];
        let mut value = self.biases[l - 1][0];
        for jj in 0..din {
            value += w[jj] * prev[jj];
        }
        let mut grad = [T::zero(); 2];
        for k in 0..d {
            let mut s = T::zero();
            for jj in 0..din {
                s += w[jj] * jprev[jj * d + k];
            }
            grad[k] = s;
        }
        ForwardCache {
            acts,
            jacs,
            pres,
            value,
            grad,
        }
    }

    pub fn forward(&self, x: &Point<T>) -> T {
        self.run(x).value
    }

    /// Spatial gradient of the network output at `x` (second component
    /// zero for one-dimensional inputs).
    pub fn input_gradient(&self, x: &Point<T>) -> [T; 2] {
        self.run(x).grad
    }

    pub fn forward_with_gradient(&self, x: &Point<T>) -> (T, [T; 2]) {
        let c = self.run(x);
        (c.value, c.grad)
    }

    /// Accumulate into `acc` (flat layout) the parameter gradient of
    /// `seed_value * q(x) + seed_grad . grad_x q(x)`.
    pub fn param_vjp(&self, x: &Point<T>, seed_value: T, seed_grad: [T; 2], acc: &mut [T]) {
        assert_eq!(acc.len(), self.param_count());
        if seed_value == T::zero() && seed_grad[0] == T::zero() && seed_grad[1] == T::zero() {
            return;
        }
        let d = self.input_dim();
        let l = self.depth();
        let cache = self.run(x);

        // Flat offsets of each layer's weight block.
        let mut offsets = Vec::with_capacity(l);
        let mut pos = 0;
        for li in 0..l {
            offsets.push(pos);
            pos += self.layer_sizes[li + 1] * self.layer_sizes[li] + self.layer_sizes[li + 1];
        }

        // Output layer adjoints.
        let din = self.layer_sizes[l - 1];
        let w_out = &self.weights[l - 1];
        {
            let off = offsets[l - 1];
            for jj in 0..din {
                let mut g = seed_value * cache.acts[l - 1][jj];
                for k in 0..d {
                    g += seed_grad[k] * cache.jacs[l - 1][jj * d + k];
                }
                acc[off + jj] += g;
            }
            acc[off + din] += seed_value;
        }
        let mut act_bar: Vec<T> = (0..din).map(|jj| seed_value * w_out[jj]).collect();
        let mut jac_bar: Vec<T> = {
            let mut jb = vec![T::zero(); din * d];
            for jj in 0..din {
                for k in 0..d {
                    jb[jj * d + k] = w_out[jj] * seed_grad[k];
                }
            }
            jb
        };

        // Hidden layers, last to first.
        for li in (0..l - 1).rev() {
            let (din, dout) = (self.layer_sizes[li], self.layer_sizes[li + 1]);
            let w = &self.weights[li];
            let off = offsets[li];
            let act = &cache.acts[li + 1];
            let p = &cache.pres[li];
            let prev_act = &cache.acts[li];
            let prev_jac = &cache.jacs[li];

            let mut z_bar = vec![T::zero(); dout];
            let mut p_bar = vec![T::zero(); dout * d];
            for i in 0..dout {
                let rho = act[i];
                let d1 = T::one() - rho * rho;
                let d2 = -(T::of(2.0)) * rho * d1;
                let mut jp = T::zero();
                for k in 0..d {
                    jp += jac_bar[i * d + k] * p[i * d + k];
                    p_bar[i * d + k] = jac_bar[i * d + k] * d1;
                }
                z_bar[i] = act_bar[i] * d1 + d2 * jp;
            }
            for i in 0..dout {
                for jj in 0..din {
                    let mut g = z_bar[i] * prev_act[jj];
                    for k in 0..d {
                        g += p_bar[i * d + k] * prev_jac[jj * d + k];
                    }
                    acc[off + i * din + jj] += g;
                }
                acc[off + dout * din + i] += z_bar[i];
            }
            if li > 0 {
                let mut new_act_bar = vec![T::zero(); din];
                let mut new_jac_bar = vec![T::zero(); din * d];
                for i in 0..dout {
                    for jj in 0..din {
                        let wij = w[i * din + jj];
                        new_act_bar[jj] += z_bar[i] * wij;
                        for k in 0..d {
                            new_jac_bar[jj * d + k] += p_bar[i * d + k] * wij;
                        }
                    }
                }
                act_bar = new_act_bar;
                jac_bar = new_jac_bar;
            }
        }
    }

    /// Write a parameter checkpoint: layer sizes, then per layer the
    /// row-major weight matrix and the bias vector.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "# coeffrec mlp checkpoint v1")?;
        writeln!(
            f,
            "layers {}",
            self.layer_sizes
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        )?;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            write!(f, "A{} ", l + 1)?;
            for v in w {
                write!(f, "{:.17e} ", v.as_f64())?;
            }
            writeln!(f)?;
            write!(f, "b{} ", l + 1)?;
            for v in b {
                write!(f, "{:.17e} ", v.as_f64())?;
            }
            writeln!(f)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(f);
        let mut layer_sizes: Option<Vec<usize>> = None;
        let mut blocks: Vec<(String, Vec<T>)> = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let tag = parts.next().unwrap().to_string();
            if tag == "layers" {
                let sizes: std::result::Result<Vec<usize>, _> =
                    parts.map(str::parse::<usize>).collect();
                layer_sizes =
                    Some(sizes.map_err(|e| Error::invalid(format!("bad layer sizes: {e}")))?);
            } else {
                let vals: std::result::Result<Vec<f64>, _> =
                    parts.map(str::parse::<f64>).collect();
                let vals = vals.map_err(|e| Error::invalid(format!("bad values: {e}")))?;
                blocks.push((tag, vals.into_iter().map(T::of).collect()));
            }
        }
        let layer_sizes = layer_sizes.ok_or_else(|| Error::invalid("missing layers line"))?;
        let mut params = Self::zeros(&layer_sizes)?;
        for (tag, vals) in blocks {
            let (kind, idx) = tag.split_at(1);
            let l: usize = idx
                .parse()
                .map_err(|_| Error::invalid(format!("bad block tag {tag}")))?;
            if l == 0 || l > params.depth() {
                return Err(Error::invalid(format!("layer index {l} out of range")));
            }
            let target = match kind {
                "A" => &mut params.weights[l - 1],
                "b" => &mut params.biases[l - 1],
                _ => return Err(Error::invalid(format!("unknown block tag {tag}"))),
            };
            if vals.len() != target.len() {
                return Err(Error::invalid(format!(
                    "block {tag} has {} values, expected {}",
                    vals.len(),
                    target.len()
                )));
            }
            target.copy_from_slice(&vals);
        }
        Ok(params)
    }
}

struct ForwardCache<T> {
    /// Inputs to each affine layer: acts[0] = x, acts[l] = tanh output.
    acts: Vec<Vec<T>>,
    /// d(acts[l]) / dx, row-major d_l x d.
    jacs: Vec<Vec<T>>,
    /// Pre-activation input Jacobians A^l J^{l-1} for hidden layers.
    pres: Vec<Vec<T>>,
    value: T,
    grad: [T; 2],
}

/// Network output clamped into the box; the gradient carries the
/// projection subgradient (zero strictly outside the box).
pub struct ProjectedNetwork<'a, T> {
    pub params: &'a MlpParams<T>,
    pub bounds: BoxBounds<T>,
}

impl<T: Real> CoefficientField<T> for ProjectedNetwork<'_, T> {
    fn value(&self, _elem: usize, x: &Point<T>) -> T {
        project_box(self.params.forward(x), self.bounds).0
    }

    fn gradient(&self, _elem: usize, x: &Point<T>) -> Option<[T; 2]> {
        let (v, g) = self.params.forward_with_gradient(x);
        let (_, active) = project_box(v, self.bounds);
        Some(if active { g } else { [T::zero(); 2] })
    }
}

/// Unprojected network view; the penalty term acts on this one.
pub struct RawNetwork<'a, T>(pub &'a MlpParams<T>);

impl<T: Real> CoefficientField<T> for RawNetwork<'_, T> {
    fn value(&self, _elem: usize, x: &Point<T>) -> T {
        self.0.forward(x)
    }

    fn gradient(&self, _elem: usize, x: &Point<T>) -> Option<[T; 2]> {
        Some(self.0.input_gradient(x))
    }
}

/// Sampled sup-norms of the first three derivative orders against the
/// architecture bounds `R^L W^{L-1}`, `2 R^{2L} W^{2L-2}` and
/// `10 R^{3L} W^{3L-3}`, valid when `R W >= 2`.
#[derive(Debug, Clone)]
pub struct DerivativeBoundReport {
    pub applicable: bool,
    pub max_norm: f64,
    pub width: usize,
    pub depth: usize,
    /// Sampled sup-norms of first/second/third partials.
    pub sampled: [f64; 3],
    pub bounds: [f64; 3],
    pub violations: usize,
}

pub fn derivative_bound_report<T: Real>(
    params: &MlpParams<T>,
    sample_count: usize,
) -> DerivativeBoundReport {
    let r = params.max_norm().as_f64();
    let width = params.width();
    let depth = params.depth();
    let lf = depth as f64;
    let wf = width as f64;
    let bounds = [
        r.powf(lf) * wf.powf(lf - 1.0),
        2.0 * r.powf(2.0 * lf) * wf.powf(2.0 * lf - 2.0),
        10.0 * r.powf(3.0 * lf) * wf.powf(3.0 * lf - 3.0),
    ];
    let applicable = r * wf >= 2.0;

    let d = params.input_dim();
    let step = T::of(1e-3);
    let grad_at = |x: &Point<T>| params.input_gradient(x);
    let second = |x: &Point<T>, k: usize, m: usize| {
        let mut xp = *x;
        let mut xm = *x;
        xp[m] += step;
        xm[m] -= step;
        (grad_at(&xp)[k] - grad_at(&xm)[k]) / (T::of(2.0) * step)
    };
    let third = |x: &Point<T>, k: usize, m: usize, n: usize| {
        let mut xp = *x;
        let mut xm = *x;
        xp[n] += step;
        xm[n] -= step;
        (second(&xp, k, m) - second(&xm, k, m)) / (T::of(2.0) * step)
    };

    let mut sampled = [0.0f64; 3];
    let grid: Vec<Point<T>> = if d == 1 {
        (0..sample_count)
            .map(|i| [T::of(i as f64 / (sample_count.max(2) - 1) as f64), T::zero()])
            .collect()
    } else {
        let g = (sample_count as f64).sqrt().ceil() as usize;
        let g = g.max(2);
        let mut pts = Vec::with_capacity(g * g);
        for iy in 0..g {
            for ix in 0..g {
                pts.push([
                    T::of(ix as f64 / (g - 1) as f64),
                    T::of(iy as f64 / (g - 1) as f64),
                ]);
            }
        }
        pts
    };
    for x in &grid {
        let g = grad_at(x);
        for k in 0..d {
            sampled[0] = sampled[0].max(g[k].abs().as_f64());
            for m in 0..d {
                sampled[1] = sampled[1].max(second(x, k, m).abs().as_f64());
                for n in 0..d {
                    sampled[2] = sampled[2].max(third(x, k, m, n).abs().as_f64());
                }
            }
        }
    }
    let mut violations = 0;
    if applicable {
        for i in 0..3 {
            if sampled[i] > bounds[i] {
                violations += 1;
            }
        }
    }
    DerivativeBoundReport {
        applicable,
        max_norm: r,
        width,
        depth,
        sampled,
        bounds,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn single_neuron(a: f64, w: f64, b: f64) -> MlpParams<f64> {
        // a * tanh(w x + b)
        let mut p = MlpParams::zeros(&[1, 1, 1]).unwrap();
        p.weights[0][0] = w;
        p.biases[0][0] = b;
        p.weights[1][0] = a;
        p
    }

    #[test]
    fn zero_params_zero_output() {
        let p = MlpParams::<f64>::zeros(&[1, 4, 4, 1]).unwrap();
        for x in [0.0, 0.3, 1.0] {
            assert_eq!(p.forward(&[x, 0.0]), 0.0);
            assert_eq!(p.input_gradient(&[x, 0.0]), [0.0, 0.0]);
        }
    }

    #[test]
    fn single_affine_layer() {
        let mut p = MlpParams::<f64>::zeros(&[1, 1]).unwrap();
        p.weights[0][0] = 2.0;
        p.biases[0][0] = 1.0;
        assert!((p.forward(&[0.5, 0.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn identity_tanh_net() {
        let p = single_neuron(1.0, 1.0, 0.0);
        assert!((p.forward(&[1.0, 0.0]) - 1.0f64.tanh()).abs() < 1e-12);
        assert!((p.forward(&[1.0, 0.0]) - 0.761594).abs() < 1e-6);
    }

    #[test]
    fn single_neuron_gradient_closed_form() {
        let (a, w, b) = (1.7, -0.8, 0.3);
        let p = single_neuron(a, w, b);
        for x in [0.0, 0.25, 0.9] {
            let t = (w * x + b).tanh();
            let want = a * w * (1.0 - t * t);
            let got = p.input_gradient(&[x, 0.0])[0];
            assert!((got - want).abs() < 1e-13);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = rand::rngs::mock::StepRng::new(42, 0x9E3779B97F4A7C15);
        for case in 0..100 {
            let sizes: &[usize] = if case % 2 == 0 { &[1, 5, 3, 1] } else { &[2, 4, 1] };
            let p = MlpParams::<f64>::glorot(sizes, case as u64).unwrap();
            let x = [
                (rng.next_u64() % 1000) as f64 / 1000.0,
                (rng.next_u64() % 1000) as f64 / 1000.0,
            ];
            let g = p.input_gradient(&x);
            let h = 1e-6;
            for k in 0..sizes[0] {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fd = (p.forward(&xp) - p.forward(&xm)) / (2.0 * h);
                let denom = fd.abs().max(1e-3);
                assert!(
                    ((g[k] - fd) / denom).abs() < 1e-6,
                    "case {case}: got {} fd {}",
                    g[k],
                    fd
                );
            }
        }
    }

    use rand::RngCore;

    #[test]
    fn vjp_zero_seeds() {
        let p = MlpParams::<f64>::glorot(&[1, 3, 1], 1).unwrap();
        let mut acc = vec![0.0; p.param_count()];
        p.param_vjp(&[0.4, 0.0], 0.0, [0.0, 0.0], &mut acc);
        assert!(acc.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vjp_single_neuron_value_seed() {
        let (a, w, b) = (1.3, 0.7, -0.2);
        let p = single_neuron(a, w, b);
        let x = 0.6;
        let mut acc = vec![0.0; p.param_count()];
        p.param_vjp(&[x, 0.0], 1.0, [0.0, 0.0], &mut acc);
        // Flat layout: [w, b, a, b_out]; d/da = tanh(w x + b).
        let d_a = acc[2];
        assert!((d_a - (w * x + b).tanh()).abs() < 1e-13);
        // d/dw = a (1 - tanh^2) x.
        let t = (w * x + b).tanh();
        assert!((acc[0] - a * (1.0 - t * t) * x).abs() < 1e-13);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        // F(theta) = s q(x) + t . grad q(x) for random seeds, 1D and 2D.
        for case in 0..20u64 {
            let sizes: &[usize] = if case % 2 == 0 { &[1, 4, 3, 1] } else { &[2, 5, 1] };
            let p = MlpParams::<f64>::glorot(sizes, 100 + case).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(case);
            let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let s: f64 = rng.gen_range(-1.0..1.0);
            let t = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let t = if sizes[0] == 1 { [t[0], 0.0] } else { t };

            let mut grad = vec![0.0; p.param_count()];
            p.param_vjp(&x, s, t, &mut grad);

            let flat = p.flatten();
            let h = 1e-6;
            let eval = |theta: &[f64]| {
                let q = MlpParams::from_flat(sizes, theta).unwrap();
                let (v, g) = q.forward_with_gradient(&x);
                s * v + t[0] * g[0] + t[1] * g[1]
            };
            for i in 0..flat.len() {
                let mut fp = flat.clone();
                let mut fm = flat.clone();
                fp[i] += h;
                fm[i] -= h;
                let fd = (eval(&fp) - eval(&fm)) / (2.0 * h);
                let denom = fd.abs().max(1e-4);
                assert!(
                    ((grad[i] - fd) / denom).abs() < 1e-5,
                    "case {case} param {i}: got {} fd {}",
                    grad[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn project_box_cases() {
        let b = BoxBounds::new(1.0, 3.0).unwrap();
        assert_eq!(project_box(5.0, b), (3.0, false));
        assert_eq!(project_box(2.0, b), (2.0, true));
        assert_eq!(project_box(1.0, b), (1.0, true));
    }

    #[test]
    fn bad_bounds_rejected() {
        assert!(BoxBounds::new(0.0, 1.0).is_err());
        assert!(BoxBounds::new(2.0, 1.0).is_err());
        assert!(BoxBounds::new(1.0, f64::INFINITY).is_err());
    }

    proptest! {
        #[test]
        fn projection_properties(w in -100.0f64..100.0, v in 0.0f64..1.0) {
            let b = BoxBounds::new(1.0, 3.0).unwrap();
            let v_in = 1.0 + 2.0 * v; // arbitrary point of the box
            let (pw, _) = project_box(w, b);
            prop_assert!(pw >= b.c0 && pw <= b.c1);
            // Idempotent.
            prop_assert_eq!(project_box(pw, b).0, pw);
            // Pointwise contraction toward any admissible value.
            prop_assert!((pw - v_in).abs() <= (w - v_in).abs() + 1e-15);
        }
    }

    #[test]
    fn derivative_report_zero_net_not_applicable() {
        let p = MlpParams::<f64>::zeros(&[1, 4, 1]).unwrap();
        let rep = derivative_bound_report(&p, 20);
        assert!(!rep.applicable);
        assert_eq!(rep.sampled, [0.0; 3]);
    }

    #[test]
    fn derivative_report_single_neuron() {
        // a = w = 1 gives R = 1, W = 1, so R W < 2 and the bounds do
        // not apply; the sampled second derivative still stays <= 1.
        let p = single_neuron(1.0, 1.0, 0.0);
        let rep = derivative_bound_report(&p, 200);
        assert!(rep.sampled[1] <= 1.0 + 1e-6);
        if rep.applicable {
            assert_eq!(rep.violations, 0);
        }
    }

    #[test]
    fn derivative_bounds_hold_for_random_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let sizes: Vec<usize> = vec![1, 4, 4, 1];
            let mut p = MlpParams::<f64>::zeros(&sizes).unwrap();
            let r = 1.5;
            let flat: Vec<f64> = (0..p.param_count()).map(|_| rng.gen_range(-r..r)).collect();
            p.assign_from_flat(&flat);
            let rep = derivative_bound_report(&p, 60);
            if rep.applicable {
                assert_eq!(rep.violations, 0, "report {rep:?}");
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let p = MlpParams::<f64>::glorot(&[2, 8, 8, 1], 42).unwrap();
        p.save(&path).unwrap();
        let q = MlpParams::<f64>::load(&path).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn projected_network_field_masks_gradient() {
        let p = single_neuron(10.0, 1.0, 0.0); // exceeds c1 = 3 for larger x
        let bounds = BoxBounds::new(1.0, 3.0).unwrap();
        let f = ProjectedNetwork {
            params: &p,
            bounds,
        };
        // At x = 0.9, 10 tanh(0.9) > 3: clamped, zero gradient.
        assert_eq!(f.value(0, &[0.9, 0.0]), 3.0);
        assert_eq!(f.gradient(0, &[0.9, 0.0]).unwrap(), [0.0, 0.0]);
    }
}
