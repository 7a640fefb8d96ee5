//! Four-layer recurrent networks: tanh dense → GRU → tanh dense → linear.
//!
//! Parameters live in one flat vector so optimizers and checkpoints can treat
//! them uniformly. Policy networks append a state-independent log-std vector
//! and act as a diagonal Gaussian.

use crate::linalg::{add_column_sums, add_transposed, affine, gemm, View};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("expected {expected} inputs, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("parameter vector has {got} entries, layout needs {expected}")]
    ParameterCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub obs_dim: usize,
    pub out_dim: usize,
    pub h1: usize,
    pub h2: usize,
    pub h3: usize,
    /// Whether a learnable log-std follows the output layer.
    pub gaussian: bool,
}

fn geometric_width(h1: usize, h3: usize) -> usize {
    ((h1 * h3) as f64).sqrt().round() as usize
}

impl NetworkSpec {
    pub fn policy(obs_dim: usize, act_dim: usize) -> Self {
        let (h1, h3) = (10 * obs_dim, 10 * act_dim);
        Self {
            obs_dim,
            out_dim: act_dim,
            h1,
            h2: geometric_width(h1, h3),
            h3,
            gaussian: true,
        }
    }

    pub fn value(obs_dim: usize) -> Self {
        let (h1, h3) = (10 * obs_dim, 5);
        Self {
            obs_dim,
            out_dim: 1,
            h1,
            h2: geometric_width(h1, h3),
            h3,
            gaussian: false,
        }
    }

    pub fn widths(&self) -> [usize; 4] {
        [self.h1, self.h2, self.h3, self.out_dim]
    }

    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let g = 3 * self.h2;
        let w1 = take(self.h1 * self.obs_dim);
        let b1 = take(self.h1);
        let wg = take(g * self.h1);
        let ug = take(g * self.h2);
        let bg = take(g);
        let w3 = take(self.h3 * self.h2);
        let b3 = take(self.h3);
        let w4 = take(self.out_dim * self.h3);
        let b4 = take(self.out_dim);
        let log_std = take(if self.gaussian { self.out_dim } else { 0 });
        Layout {
            w1,
            b1,
            wg,
            ug,
            bg,
            w3,
            b3,
            w4,
            b4,
            log_std,
            total: at,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    wg: usize,
    ug: usize,
    bg: usize,
    w3: usize,
    b3: usize,
    w4: usize,
    b4: usize,
    log_std: usize,
    total: usize,
}

/// Named parameter blocks, for diagnostics and tests.
pub fn parameter_blocks(spec: &NetworkSpec) -> Vec<(&'static str, std::ops::Range<usize>)> {
    let l = spec.layout();
    let mut v = vec![
        ("w1", l.w1..l.b1),
        ("b1", l.b1..l.wg),
        ("gru_w", l.wg..l.ug),
        ("gru_u", l.ug..l.bg),
        ("gru_b", l.bg..l.w3),
        ("w3", l.w3..l.b3),
        ("b3", l.b3..l.w4),
        ("w4", l.w4..l.b4),
        ("b4", l.b4..l.log_std),
    ];
    if spec.gaussian {
        v.push(("log_std", l.log_std..l.total));
    }
    v
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Vec<f64>,
}

/// Activations kept from a sequence forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct SequenceCache {
    len: usize,
    obs: Vec<f64>,
    a1: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    h_prev: Vec<f64>,
    rh: Vec<f64>,
    h: Vec<f64>,
    a3: Vec<f64>,
    out: Vec<f64>,
}

impl SequenceCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Row-major `len × out_dim` outputs.
    pub fn outputs(&self) -> &[f64] {
        &self.out
    }

    /// Row-major `len × h2` hidden states after each step.
    pub fn hidden(&self) -> &[f64] {
        &self.h
    }
}

impl Network {
    pub fn zeros(spec: NetworkSpec) -> Self {
        Self {
            params: vec![0.0; spec.param_count()],
            spec,
        }
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Self, NetworkError> {
        let expected = spec.param_count();
        if params.len() != expected {
            return Err(NetworkError::ParameterCount { expected, got: params.len() });
        }
        Ok(Self { spec, params })
    }

    /// Fan-in scaled uniform weights, zero biases, log-std 0 (unit std).
    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Self {
        let mut net = Self::zeros(spec);
        let l = spec.layout();
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let s = (1.0 / fan_in as f64).sqrt();
            for p in &mut net.params[range] {
                *p = rng.random_range(-s..s);
            }
        };
        fill(l.w1..l.b1, spec.obs_dim);
        fill(l.wg..l.ug, spec.h1);
        fill(l.ug..l.bg, spec.h2);
        fill(l.w3..l.b3, spec.h2);
        fill(l.w4..l.b4, spec.h3);
        net
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.spec.h2]
    }

    /// Effective (clamped) log-std of a Gaussian head.
    pub fn log_std(&self) -> Vec<f64> {
        let l = self.spec.layout();
        self.params[l.log_std..l.total].iter().map(|s| s.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn gru_step(&self, gx: &mut [f64], h: &[f64], z: &mut [f64], r: &mut [f64], n: &mut [f64], rh: &mut [f64], h_next: &mut [f64]) {
        let h2 = self.spec.h2;
        let l = self.spec.layout();
        let u = &self.params[l.ug..l.bg];
        for i in 0..2 * h2 {
            gx[i] += crate::linalg::dot(&u[i * h2..(i + 1) * h2], h);
        }
        for i in 0..h2 {
            z[i] = sigmoid(gx[i]);
            r[i] = sigmoid(gx[h2 + i]);
            rh[i] = r[i] * h[i];
        }
        let un = &u[2 * h2 * h2..];
        for i in 0..h2 {
            n[i] = (gx[2 * h2 + i] + crate::linalg::dot(&un[i * h2..(i + 1) * h2], rh)).tanh();
            h_next[i] = (1.0 - z[i]) * n[i] + z[i] * h[i];
        }
    }

    /// One step of the recurrent forward pass; `h` is updated in place.
    pub fn step(&self, obs: &[f64], h: &mut [f64]) -> Result<Vec<f64>, NetworkError> {
        let s = &self.spec;
        if obs.len() != s.obs_dim {
            return Err(NetworkError::Dimension { expected: s.obs_dim, got: obs.len() });
        }
        let l = s.layout();
        let p = &self.params;
        let mut a1 = vec![0.0; s.h1];
        affine(&p[l.w1..l.b1], &p[l.b1..l.wg], obs, &mut a1);
        a1.iter_mut().for_each(|x| *x = x.tanh());
        let mut gx = vec![0.0; 3 * s.h2];
        affine(&p[l.wg..l.ug], &p[l.bg..l.w3], &a1, &mut gx);
        let (mut z, mut r, mut n, mut rh, mut h_next) = (vec![0.0; s.h2], vec![0.0; s.h2], vec![0.0; s.h2], vec![0.0; s.h2], vec![0.0; s.h2]);
        self.gru_step(&mut gx, h, &mut z, &mut r, &mut n, &mut rh, &mut h_next);
        h.copy_from_slice(&h_next);
        let mut a3 = vec![0.0; s.h3];
        affine(&p[l.w3..l.b3], &p[l.b3..l.w4], h, &mut a3);
        a3.iter_mut().for_each(|x| *x = x.tanh());
        let mut out = vec![0.0; s.out_dim];
        affine(&p[l.w4..l.b4], &p[l.b4..l.log_std], &a3, &mut out);
        Ok(out)
    }

    /// Forward pass over a whole episode from a zero hidden state.
    /// `obs` is row-major `len × obs_dim`.
    pub fn forward_sequence(&self, obs: &[f64]) -> Result<SequenceCache, NetworkError> {
        let s = &self.spec;
        if !obs.len().is_multiple_of(s.obs_dim) {
            return Err(NetworkError::Dimension { expected: s.obs_dim, got: obs.len() % s.obs_dim });
        }
        let t = obs.len() / s.obs_dim;
        let l = s.layout();
        let p = &self.params;
        let (h1, h2, h3, g) = (s.h1, s.h2, s.h3, 3 * s.h2);

        let mut a1 = vec![0.0; t * h1];
        for row in a1.chunks_mut(h1) {
            row.copy_from_slice(&p[l.b1..l.wg]);
        }
        gemm(1.0, View::new(obs, t, s.obs_dim), View::new(&p[l.w1..l.b1], h1, s.obs_dim).t(), 1.0, &mut a1, h1);
        a1.iter_mut().for_each(|x| *x = x.tanh());

        let mut gx = vec![0.0; t * g];
        for row in gx.chunks_mut(g) {
            row.copy_from_slice(&p[l.bg..l.w3]);
        }
        gemm(1.0, View::new(&a1, t, h1), View::new(&p[l.wg..l.ug], g, h1).t(), 1.0, &mut gx, g);

        let mut c = SequenceCache {
            len: t,
            obs: obs.to_vec(),
            a1,
            z: vec![0.0; t * h2],
            r: vec![0.0; t * h2],
            n: vec![0.0; t * h2],
            h_prev: vec![0.0; t * h2],
            rh: vec![0.0; t * h2],
            h: vec![0.0; t * h2],
            a3: vec![0.0; t * h3],
            out: vec![0.0; t * s.out_dim],
        };
        let mut h = vec![0.0; h2];
        for k in 0..t {
            let span = k * h2..(k + 1) * h2;
            c.h_prev[span.clone()].copy_from_slice(&h);
            self.gru_step(
                &mut gx[k * g..(k + 1) * g],
                &h,
                &mut c.z[span.clone()],
                &mut c.r[span.clone()],
                &mut c.n[span.clone()],
                &mut c.rh[span.clone()],
                &mut c.h[span.clone()],
            );
            h.copy_from_slice(&c.h[span]);
        }

        for row in c.a3.chunks_mut(h3) {
            row.copy_from_slice(&p[l.b3..l.w4]);
        }
        gemm(1.0, View::new(&c.h, t, h2), View::new(&p[l.w3..l.b3], h3, h2).t(), 1.0, &mut c.a3, h3);
        c.a3.iter_mut().for_each(|x| *x = x.tanh());
        for row in c.out.chunks_mut(s.out_dim) {
            row.copy_from_slice(&p[l.b4..l.log_std]);
        }
        gemm(1.0, View::new(&c.a3, t, h3), View::new(&p[l.w4..l.b4], s.out_dim, h3).t(), 1.0, &mut c.out, s.out_dim);
        Ok(c)
    }

    /// Backpropagation through time. `d_out` is `∂loss/∂outputs` (row-major
    /// `len × out_dim`); gradients are accumulated into `grad`. The log-std
    /// block of `grad` is left to the caller.
    pub fn backward_sequence(&self, c: &SequenceCache, d_out: &[f64], grad: &mut [f64]) {
        let s = &self.spec;
        let l = s.layout();
        assert_eq!(grad.len(), l.total);
        assert_eq!(d_out.len(), c.len * s.out_dim);
        let p = &self.params;
        let (t, h1, h2, h3, g) = (c.len, s.h1, s.h2, s.h3, 3 * s.h2);
        if t == 0 {
            return;
        }

        // output layer
        gemm(1.0, View::new(d_out, t, s.out_dim).t(), View::new(&c.a3, t, h3), 1.0, &mut grad[l.w4..l.b4], h3);
        add_column_sums(d_out, t, s.out_dim, &mut grad[l.b4..l.log_std]);
        let mut dz3 = vec![0.0; t * h3];
        gemm(1.0, View::new(d_out, t, s.out_dim), View::new(&p[l.w4..l.b4], s.out_dim, h3), 0.0, &mut dz3, h3);
        for (d, a) in dz3.iter_mut().zip(&c.a3) {
            *d *= 1.0 - a * a;
        }
        gemm(1.0, View::new(&dz3, t, h3).t(), View::new(&c.h, t, h2), 1.0, &mut grad[l.w3..l.b3], h2);
        add_column_sums(&dz3, t, h3, &mut grad[l.b3..l.w4]);
        let mut dh_out = vec![0.0; t * h2];
        gemm(1.0, View::new(&dz3, t, h3), View::new(&p[l.w3..l.b3], h3, h2), 0.0, &mut dh_out, h2);

        // recurrence
        let u = &p[l.ug..l.bg];
        let (u_zr, u_n) = u.split_at(2 * h2 * h2);
        let mut dgx = vec![0.0; t * g];
        let mut dh_next = vec![0.0; h2];
        let mut d_rh = vec![0.0; h2];
        for k in (0..t).rev() {
            let span = k * h2..(k + 1) * h2;
            let (z, r, n, hp) = (&c.z[span.clone()], &c.r[span.clone()], &c.n[span.clone()], &c.h_prev[span.clone()]);
            let dg = &mut dgx[k * g..(k + 1) * g];
            let mut dh_prev = vec![0.0; h2];
            for i in 0..h2 {
                let dh = dh_out[k * h2 + i] + dh_next[i];
                let dn = dh * (1.0 - z[i]);
                let dzi = dh * (hp[i] - n[i]);
                dh_prev[i] = dh * z[i];
                dg[2 * h2 + i] = dn * (1.0 - n[i] * n[i]);
                dg[i] = dzi * z[i] * (1.0 - z[i]);
            }
            d_rh.iter_mut().for_each(|x| *x = 0.0);
            add_transposed(u_n, &dg[2 * h2..], &mut d_rh);
            for i in 0..h2 {
                dg[h2 + i] = d_rh[i] * hp[i] * r[i] * (1.0 - r[i]);
                dh_prev[i] += d_rh[i] * r[i];
            }
            add_transposed(u_zr, &dg[..2 * h2], &mut dh_prev);
            dh_next = dh_prev;
        }
        let du = &mut grad[l.ug..l.bg];
        let (du_zr, du_n) = du.split_at_mut(2 * h2 * h2);
        gemm(1.0, View::strided(&dgx, t, 2 * h2, g).t(), View::new(&c.h_prev, t, h2), 1.0, du_zr, h2);
        gemm(1.0, View::strided(&dgx[2 * h2..], t, h2, g).t(), View::new(&c.rh, t, h2), 1.0, du_n, h2);
        add_column_sums(&dgx, t, g, &mut grad[l.bg..l.w3]);
        gemm(1.0, View::new(&dgx, t, g).t(), View::new(&c.a1, t, h1), 1.0, &mut grad[l.wg..l.ug], h1);

        // first layer
        let mut dz1 = vec![0.0; t * h1];
        gemm(1.0, View::new(&dgx, t, g), View::new(&p[l.wg..l.ug], g, h1), 0.0, &mut dz1, h1);
        for (d, a) in dz1.iter_mut().zip(&c.a1) {
            *d *= 1.0 - a * a;
        }
        gemm(1.0, View::new(&dz1, t, h1).t(), View::new(&c.obs, t, s.obs_dim), 1.0, &mut grad[l.w1..l.b1], s.obs_dim);
        add_column_sums(&dz1, t, h1, &mut grad[l.b1..l.wg]);
    }

    /// Add `d_log_std` into the log-std block of `grad`, zeroing components
    /// where the clamp is active.
    pub fn accumulate_log_std_grad(&self, d_log_std: &[f64], grad: &mut [f64]) {
        let l = self.spec.layout();
        for (i, d) in d_log_std.iter().enumerate() {
            let raw = self.params[l.log_std + i];
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                grad[l.log_std + i] += d;
            }
        }
    }
}

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let zs = (a - m) / ls.exp();
            -0.5 * zs * zs - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// `(∂logp/∂mean, ∂logp/∂log_std)` for a diagonal Gaussian.
pub fn gaussian_log_prob_grad(mean: &[f64], log_std: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut dm = Vec::with_capacity(mean.len());
    let mut ds = Vec::with_capacity(mean.len());
    for ((m, ls), a) in mean.iter().zip(log_std).zip(action) {
        let var = (2.0 * ls).exp();
        dm.push((a - m) / var);
        ds.push((a - m) * (a - m) / var - 1.0);
    }
    (dm, ds)
}

/// `KL(old ‖ new)` between diagonal Gaussians.
pub fn gaussian_kl(mean_old: &[f64], log_std_old: &[f64], mean_new: &[f64], log_std_new: &[f64]) -> f64 {
    let mut kl = 0.0;
    for i in 0..mean_old.len() {
        let (vo, vn) = ((2.0 * log_std_old[i]).exp(), (2.0 * log_std_new[i]).exp());
        let dm = mean_old[i] - mean_new[i];
        kl += log_std_new[i] - log_std_old[i] + (vo + dm * dm) / (2.0 * vn) - 0.5;
    }
    kl
}

pub fn sample_gaussian<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> Vec<f64> {
    mean.iter()
        .zip(log_std)
        .map(|(m, ls)| {
            let e: f64 = StandardNormal.sample(rng);
            m + ls.exp() * e
        })
        .collect()
}
