use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{self, Geometry};
use super::tape::{Node, Tape, Var};
use super::Tensor;
use crate::error::{FreaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running per-channel statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

pub(crate) enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Geometry,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Geometry,
    },
    Relu {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Upsample {
        x: Var,
        rows: Vec<(usize, usize, f64)>,
        cols: Vec<(usize, usize, f64)>,
    },
    AvgPool {
        x: Var,
        factor: usize,
    },
    Concat {
        a: Var,
        b: Var,
    },
    SliceChannels {
        x: Var,
        start: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Sum {
        x: Var,
    },
    ChannelDot {
        f: Var,
        g: Var,
    },
    SpatialSoftmax {
        x: Var,
    },
    Gate {
        f: Var,
        scores: Var,
    },
    MseLoss {
        pred: Var,
        target: Tensor,
    },
    MaeLoss {
        pred: Var,
        target: Tensor,
    },
    WeightedSum {
        terms: Vec<(Var, f64)>,
    },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Conv2d { x, w, b, .. } | ConvTranspose2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Relu { x }
            | Tanh { x }
            | Dropout { x, .. }
            | Upsample { x, .. }
            | AvgPool { x, .. }
            | SliceChannels { x, .. }
            | Scale { x, .. }
            | Sum { x }
            | SpatialSoftmax { x } => vec![*x],
            BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Concat { a, b } | Add { a, b } | Sub { a, b } | Mul { a, b } => vec![*a, *b],
            ChannelDot { f, g } => vec![*f, *g],
            Gate { f, scores } => vec![*f, *scores],
            MseLoss { pred, .. } | MaeLoss { pred, .. } => vec![*pred],
            WeightedSum { terms } => terms.iter().map(|(v, _)| *v).collect(),
        }
    }

    /// Adjoint contributions to each input given the output adjoint `g`.
    pub(crate) fn backward(&self, nodes: &[Node], idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let val = |v: &Var| nodes[v.0].value.data();
        let out = nodes[idx].value.data();
        let needs = |v: &Var| nodes[v.0].requires_grad;
        let mut res = Vec::new();
        match self {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                if needs(x) {
                    let mut gx = vec![0.0; val(x).len()];
                    conv::scatter(geom, g, val(w), &mut gx);
                    res.push((*x, gx));
                }
                if needs(w) {
                    let mut gw = vec![0.0; val(w).len()];
                    conv::weight_grad(geom, g, val(x), &mut gw);
                    res.push((*w, gw));
                }
                if let Some(b) = b {
                    res.push((*b, bias_grad(g, geom.batch, geom.small_ch)));
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                if needs(x) {
                    let mut gx = vec![0.0; val(x).len()];
                    conv::gather(geom, g, val(w), &mut gx);
                    res.push((*x, gx));
                }
                if needs(w) {
                    let mut gw = vec![0.0; val(w).len()];
                    conv::weight_grad(geom, val(x), g, &mut gw);
                    res.push((*w, gw));
                }
                if let Some(b) = b {
                    res.push((*b, bias_grad(g, geom.batch, geom.big_ch)));
                }
            }
            Op::Relu { x } => {
                let gx = val(x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                res.push((*x, gx));
            }
            Op::Tanh { x } => {
                let gx = out.iter().zip(g).map(|(&y, &gv)| gv * (1.0 - y * y)).collect();
                res.push((*x, gx));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (n, c, h, w) = nodes[x.0].value.nchw().expect("rank checked at record");
                let plane = h * w;
                let m = (n * plane) as f64;
                let gam = val(gamma);
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        for i in off..off + plane {
                            ggamma[ch] += g[i] * xhat[i];
                            gbeta[ch] += g[i];
                        }
                    }
                }
                if needs(x) {
                    let mut gx = vec![0.0; g.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * plane;
                            let k = gam[ch] * inv_std[ch];
                            for i in off..off + plane {
                                gx[i] = if *train {
                                    k * (g[i] - gbeta[ch] / m - xhat[i] * ggamma[ch] / m)
                                } else {
                                    k * g[i]
                                };
                            }
                        }
                    }
                    res.push((*x, gx));
                }
                res.push((*gamma, ggamma));
                res.push((*beta, gbeta));
            }
            Op::Dropout { x, mask } => {
                res.push((*x, g.iter().zip(mask).map(|(a, b)| a * b).collect()));
            }
            Op::Upsample { x, rows, cols } => {
                let (n, c, h, w) = nodes[x.0].value.nchw().expect("rank checked at record");
                let (oh, ow) = (rows.len(), cols.len());
                let mut gx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    let src = &mut gx[p * h * w..][..h * w];
                    let go = &g[p * oh * ow..][..oh * ow];
                    for (r, &(r0, r1, ly)) in rows.iter().enumerate() {
                        for (q, &(c0, c1, lx)) in cols.iter().enumerate() {
                            let gv = go[r * ow + q];
                            src[r0 * w + c0] += gv * (1.0 - ly) * (1.0 - lx);
                            src[r0 * w + c1] += gv * (1.0 - ly) * lx;
                            src[r1 * w + c0] += gv * ly * (1.0 - lx);
                            src[r1 * w + c1] += gv * ly * lx;
                        }
                    }
                }
                res.push((*x, gx));
            }
            Op::AvgPool { x, factor } => {
                let (n, c, h, w) = nodes[x.0].value.nchw().expect("rank checked at record");
                let (oh, ow) = (h / factor, w / factor);
                let inv = 1.0 / (factor * factor) as f64;
                let mut gx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    for i in 0..h {
                        for j in 0..w {
                            gx[(p * h + i) * w + j] =
                                g[(p * oh + i / factor) * ow + j / factor] * inv;
                        }
                    }
                }
                res.push((*x, gx));
            }
            Op::Concat { a, b } => {
                let (n, ca, h, w) = nodes[a.0].value.nchw().expect("rank checked at record");
                let cb = nodes[b.0].value.shape()[1];
                let plane = h * w;
                let mut ga = Vec::with_capacity(n * ca * plane);
                let mut gb = Vec::with_capacity(n * cb * plane);
                for s in 0..n {
                    let base = s * (ca + cb) * plane;
                    ga.extend_from_slice(&g[base..base + ca * plane]);
                    gb.extend_from_slice(&g[base + ca * plane..base + (ca + cb) * plane]);
                }
                res.push((*a, ga));
                res.push((*b, gb));
            }
            Op::SliceChannels { x, start } => {
                let (n, c, h, w) = nodes[x.0].value.nchw().expect("rank checked at record");
                let len = nodes[idx].value.shape()[1];
                let plane = h * w;
                let mut gx = vec![0.0; n * c * plane];
                for s in 0..n {
                    let dst = (s * c + start) * plane;
                    gx[dst..dst + len * plane]
                        .copy_from_slice(&g[s * len * plane..(s + 1) * len * plane]);
                }
                res.push((*x, gx));
            }
            Op::Add { a, b } => {
                res.push((*a, g.to_vec()));
                res.push((*b, g.to_vec()));
            }
            Op::Sub { a, b } => {
                res.push((*a, g.to_vec()));
                res.push((*b, g.iter().map(|v| -v).collect()));
            }
            Op::Mul { a, b } => {
                res.push((*a, g.iter().zip(val(b)).map(|(x, y)| x * y).collect()));
                res.push((*b, g.iter().zip(val(a)).map(|(x, y)| x * y).collect()));
            }
            Op::Scale { x, factor } => {
                res.push((*x, g.iter().map(|v| v * factor).collect()));
            }
            Op::Sum { x } => {
                res.push((*x, vec![g[0]; val(x).len()]));
            }
            Op::ChannelDot { f, g: gv } => {
                let (n, c, h, w) = nodes[f.0].value.nchw().expect("rank checked at record");
                let plane = h * w;
                let (fv, gg) = (val(f), val(gv));
                let mut gf = vec![0.0; fv.len()];
                let mut ggv = vec![0.0; gg.len()];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * plane;
                        for p in 0..plane {
                            let up = g[s * plane + p];
                            gf[off + p] = up * gg[off + p];
                            ggv[off + p] = up * fv[off + p];
                        }
                    }
                }
                res.push((*f, gf));
                res.push((*gv, ggv));
            }
            Op::SpatialSoftmax { x } => {
                let (n, _, h, w) = nodes[x.0].value.nchw().expect("rank checked at record");
                let plane = h * w;
                let mut gx = vec![0.0; out.len()];
                for s in 0..n {
                    let o = &out[s * plane..][..plane];
                    let go = &g[s * plane..][..plane];
                    let dot: f64 = o.iter().zip(go).map(|(a, b)| a * b).sum();
                    for p in 0..plane {
                        gx[s * plane + p] = o[p] * (go[p] - dot);
                    }
                }
                res.push((*x, gx));
            }
            Op::Gate { f, scores } => {
                let (n, c, h, w) = nodes[f.0].value.nchw().expect("rank checked at record");
                let plane = h * w;
                let (fv, sv) = (val(f), val(scores));
                let mut gf = vec![0.0; fv.len()];
                let mut gs = vec![0.0; sv.len()];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * plane;
                        for p in 0..plane {
                            let factor = sv[s * plane + p] * plane as f64;
                            gf[off + p] = g[off + p] * factor;
                            gs[s * plane + p] += g[off + p] * fv[off + p] * plane as f64;
                        }
                    }
                }
                res.push((*f, gf));
                res.push((*scores, gs));
            }
            Op::MseLoss { pred, target } => {
                let k = 2.0 * g[0] / target.len() as f64;
                let gp = val(pred)
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| k * (p - t))
                    .collect();
                res.push((*pred, gp));
            }
            Op::MaeLoss { pred, target } => {
                let k = g[0] / target.len() as f64;
                let gp = val(pred)
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| k * sign(p - t))
                    .collect();
                res.push((*pred, gp));
            }
            Op::WeightedSum { terms } => {
                for (v, wt) in terms {
                    res.push((*v, vec![g[0] * wt]));
                }
            }
        }
        res
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn bias_grad(g: &[f64], batch: usize, channels: usize) -> Vec<f64> {
    let plane = g.len() / (batch * channels);
    let mut gb = vec![0.0; channels];
    for s in 0..batch {
        for (c, acc) in gb.iter_mut().enumerate() {
            *acc += g[(s * channels + c) * plane..][..plane].iter().sum::<f64>();
        }
    }
    gb
}

fn add_bias(out: &mut [f64], bias: &[f64], batch: usize) {
    let channels = bias.len();
    let plane = out.len() / (batch * channels);
    for s in 0..batch {
        for (c, &b) in bias.iter().enumerate() {
            out[(s * channels + c) * plane..][..plane]
                .iter_mut()
                .for_each(|v| *v += b);
        }
    }
}

/// Source taps `(i0, i1, frac)` for half-pixel-centred linear interpolation.
pub(crate) fn linear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl Tape {
    fn nchw(&self, v: Var, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        self.value(v).nchw().map_err(|_| {
            FreaError::shape(
                op,
                format!("expected NCHW input, got {:?}", self.value(v).shape()),
            )
        })
    }

    fn check_bias(&self, b: Option<Var>, channels: usize, op: &'static str) -> Result<()> {
        if let Some(b) = b {
            if self.value(b).len() != channels {
                return Err(FreaError::shape(
                    op,
                    format!("bias has {} entries, expected {channels}", self.value(b).len()),
                ));
            }
        }
        Ok(())
    }

    /// Cross-correlation of an NCHW input with an `O×I×K×K` kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd) = self.nchw(x, "conv2d")?;
        let (o, i, kh, kw) = self.nchw(w, "conv2d")?;
        if i != c {
            return Err(FreaError::shape(
                "conv2d",
                format!("input has {c} channels, weight expects {i}"),
            ));
        }
        if kh != kw {
            return Err(FreaError::shape("conv2d", format!("non-square kernel {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(FreaError::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kh {
            return Err(FreaError::shape(
                "conv2d",
                format!("kernel {kh} does not fit padded input {h}x{wd} (pad {pad})"),
            ));
        }
        self.check_bias(b, o, "conv2d")?;
        let geom = Geometry {
            batch: n,
            small_ch: o,
            big_ch: c,
            small_h: (h + 2 * pad - kh) / stride + 1,
            small_w: (wd + 2 * pad - kh) / stride + 1,
            big_h: h,
            big_w: wd,
            k: kh,
            stride,
            pad,
        };
        let mut out = vec![0.0; n * o * geom.small_h * geom.small_w];
        conv::gather(&geom, self.value(x).data(), self.value(w).data(), &mut out);
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data(), n);
        }
        let value = Tensor::new(vec![n, o, geom.small_h, geom.small_w], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }))
    }

    /// Transposed convolution with an `I×O×K×K` kernel; the adjoint of
    /// [`Tape::conv2d`] for the same weight.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (n, c, h, wd) = self.nchw(x, "conv_transpose2d")?;
        let (i, o, kh, kw) = self.nchw(w, "conv_transpose2d")?;
        if i != c {
            return Err(FreaError::shape(
                "conv_transpose2d",
                format!("input has {c} channels, weight expects {i}"),
            ));
        }
        if kh != kw {
            return Err(FreaError::shape(
                "conv_transpose2d",
                format!("non-square kernel {kh}x{kw}"),
            ));
        }
        if stride == 0 {
            return Err(FreaError::InvalidArgument(
                "conv_transpose2d stride must be >= 1".into(),
            ));
        }
        let full_h = (h - 1) * stride + kh;
        let full_w = (wd - 1) * stride + kh;
        if h == 0 || wd == 0 || full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(FreaError::shape(
                "conv_transpose2d",
                format!("padding {pad} leaves no output for input {h}x{wd}"),
            ));
        }
        self.check_bias(b, o, "conv_transpose2d")?;
        let geom = Geometry {
            batch: n,
            small_ch: c,
            big_ch: o,
            small_h: h,
            small_w: wd,
            big_h: full_h - 2 * pad,
            big_w: full_w - 2 * pad,
            k: kh,
            stride,
            pad,
        };
        let mut out = vec![0.0; n * o * geom.big_h * geom.big_w];
        conv::scatter(&geom, self.value(x).data(), self.value(w).data(), &mut out);
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data(), n);
        }
        let value = Tensor::new(vec![n, o, geom.big_h, geom.big_w], out)?;
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, geom }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(value, Op::Relu { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh { x })
    }

    /// Per-channel batch normalization. In train mode the batch statistics
    /// are used and, when `update_stats` is set, folded into `stats` with
    /// the given momentum; eval mode normalizes with `stats`.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats,
        mode: Mode,
        momentum: f64,
        eps: f64,
        update_stats: bool,
    ) -> Result<Var> {
        let (n, c, h, w) = self.nchw(x, "batch_norm")?;
        if self.value(gamma).len() != c || self.value(beta).len() != c || stats.mean.len() != c {
            return Err(FreaError::shape(
                "batch_norm",
                format!("input has {c} channels but affine/stat parameters disagree"),
            ));
        }
        let plane = h * w;
        let count = n * plane;
        if count == 0 {
            return Err(FreaError::shape("batch_norm", "zero spatial extent"));
        }
        let data = self.value(x).data();
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += data[(b * c + ch) * plane..][..plane].iter().sum::<f64>();
                    }
                    mean[ch] = s / count as f64;
                    let mut sq = 0.0;
                    for b in 0..n {
                        sq += data[(b * c + ch) * plane..][..plane]
                            .iter()
                            .map(|v| (v - mean[ch]) * (v - mean[ch]))
                            .sum::<f64>();
                    }
                    var[ch] = sq / count as f64;
                }
                if update_stats {
                    for ch in 0..c {
                        let unbiased = if count > 1 {
                            var[ch] * count as f64 / (count - 1) as f64
                        } else {
                            var[ch]
                        };
                        stats.mean[ch] = (1.0 - momentum) * stats.mean[ch] + momentum * mean[ch];
                        stats.var[ch] = (1.0 - momentum) * stats.var[ch] + momentum * unbiased;
                    }
                }
                (mean, var)
            }
            Mode::Eval => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gam, bet) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    xhat[i] = (data[i] - mean[ch]) * inv_std[ch];
                    out[i] = gam[ch] * xhat[i] + bet[ch];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
        ))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` so eval mode is
    /// the identity. Returns `x` itself when nothing is dropped.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(FreaError::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() >= p { keep } else { 0.0 })
            .collect();
        let value = Tensor::new(
            self.value(x).shape().to_vec(),
            self.value(x).data().iter().zip(&mask).map(|(a, m)| a * m).collect(),
        )?;
        Ok(self.push(value, Op::Dropout { x, mask }))
    }

    /// Bilinear resize with half-pixel centres (`align_corners = false`).
    pub fn upsample_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (n, c, h, w) = self.nchw(x, "upsample_bilinear")?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(FreaError::shape("upsample_bilinear", "zero-sized dimension"));
        }
        let rows = linear_taps(h, out_h);
        let cols = linear_taps(w, out_w);
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c * out_h * out_w];
        for p in 0..n * c {
            let plane = &src[p * h * w..][..h * w];
            let dst = &mut out[p * out_h * out_w..][..out_h * out_w];
            for (r, &(r0, r1, ly)) in rows.iter().enumerate() {
                for (q, &(c0, c1, lx)) in cols.iter().enumerate() {
                    let top = (1.0 - lx) * plane[r0 * w + c0] + lx * plane[r0 * w + c1];
                    let bot = (1.0 - lx) * plane[r1 * w + c0] + lx * plane[r1 * w + c1];
                    dst[r * out_w + q] = (1.0 - ly) * top + ly * bot;
                }
            }
        }
        let value = Tensor::new(vec![n, c, out_h, out_w], out)?;
        Ok(self.push(value, Op::Upsample { x, rows, cols }))
    }

    /// Non-overlapping mean pooling by an integer factor.
    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (n, c, h, w) = self.nchw(x, "avg_pool")?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(FreaError::shape(
                "avg_pool",
                format!("factor {factor} does not divide {h}x{w}"),
            ));
        }
        if factor == 1 {
            return Ok(x);
        }
        let (oh, ow) = (h / factor, w / factor);
        let inv = 1.0 / (factor * factor) as f64;
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            for i in 0..h {
                for j in 0..w {
                    out[(p * oh + i / factor) * ow + j / factor] += src[(p * h + i) * w + j];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(value, Op::AvgPool { x, factor }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca, ha, wa) = self.nchw(a, "concat_channels")?;
        let (nb, cb, hb, wb) = self.nchw(b, "concat_channels")?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(FreaError::shape(
                "concat_channels",
                format!("N/H/W differ: {:?} vs {:?}", (na, ha, wa), (nb, hb, wb)),
            ));
        }
        let plane = ha * wa;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(na * (ca + cb) * plane);
        for s in 0..na {
            out.extend_from_slice(&da[s * ca * plane..(s + 1) * ca * plane]);
            out.extend_from_slice(&db[s * cb * plane..(s + 1) * cb * plane]);
        }
        let value = Tensor::new(vec![na, ca + cb, ha, wa], out)?;
        Ok(self.push(value, Op::Concat { a, b }))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, h, w) = self.nchw(x, "slice_channels")?;
        if start + len > c {
            return Err(FreaError::shape(
                "slice_channels",
                format!("channels {start}..{} out of {c}", start + len),
            ));
        }
        let plane = h * w;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * plane);
        for s in 0..n {
            let base = (s * c + start) * plane;
            out.extend_from_slice(&src[base..base + len * plane]);
        }
        let value = Tensor::new(vec![n, len, h, w], out)?;
        Ok(self.push(value, Op::SliceChannels { x, start }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).scale(factor);
        self.push(value, Op::Scale { x, factor })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum { x })
    }

    /// Per-position dot product over channels: `N×C×H×W, N×C×H×W -> N×1×H×W`.
    pub fn channel_dot(&mut self, f: Var, g: Var) -> Result<Var> {
        let (n, c, h, w) = self.nchw(f, "channel_dot")?;
        if self.value(g).shape() != self.value(f).shape() {
            return Err(FreaError::shape(
                "channel_dot",
                format!(
                    "features {:?} vs descriptor {:?}",
                    self.value(f).shape(),
                    self.value(g).shape()
                ),
            ));
        }
        let plane = h * w;
        let (fv, gv) = (self.value(f).data(), self.value(g).data());
        let mut out = vec![0.0; n * plane];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                for p in 0..plane {
                    out[s * plane + p] += fv[off + p] * gv[off + p];
                }
            }
        }
        let value = Tensor::new(vec![n, 1, h, w], out)?;
        Ok(self.push(value, Op::ChannelDot { f, g }))
    }

    /// Softmax over all spatial positions of each sample of an `N×1×H×W` map.
    pub fn spatial_softmax(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.nchw(x, "spatial_softmax")?;
        if c != 1 {
            return Err(FreaError::shape("spatial_softmax", format!("expected 1 channel, got {c}")));
        }
        let plane = h * w;
        let src = self.value(x).data();
        let mut out = vec![0.0; n * plane];
        for s in 0..n {
            let row = &src[s * plane..][..plane];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[s * plane..][..plane];
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = (v - max).exp();
            }
            let total: f64 = dst.iter().sum();
            dst.iter_mut().for_each(|d| *d /= total);
        }
        let value = Tensor::new(vec![n, 1, h, w], out)?;
        Ok(self.push(value, Op::SpatialSoftmax { x }))
    }

    /// Multiplies features by `n·scores` broadcast over channels, where `n`
    /// is the number of spatial positions. Uniform scores `1/n` are an exact
    /// identity when `n` is a power of two.
    pub fn gate(&mut self, f: Var, scores: Var) -> Result<Var> {
        let (n, c, h, w) = self.nchw(f, "gate")?;
        if self.value(scores).shape() != [n, 1, h, w] {
            return Err(FreaError::shape(
                "gate",
                format!(
                    "scores {:?} do not match features {:?}",
                    self.value(scores).shape(),
                    self.value(f).shape()
                ),
            ));
        }
        let plane = h * w;
        let (fv, sv) = (self.value(f).data(), self.value(scores).data());
        let mut out = vec![0.0; fv.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                for p in 0..plane {
                    let factor = sv[s * plane + p] * plane as f64;
                    out[off + p] = fv[off + p] * factor;
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(value, Op::Gate { f, scores }))
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        self.value(pred).expect_same_shape(target, "mse_loss")?;
        let n = target.len() as f64;
        let s: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(
            Tensor::scalar(s / n),
            Op::MseLoss {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// Mean absolute error against a constant target; subgradient 0 at ties.
    pub fn mae_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        self.value(pred).expect_same_shape(target, "mae_loss")?;
        let n = target.len() as f64;
        let s: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t).abs())
            .sum();
        Ok(self.push(
            Tensor::scalar(s / n),
            Op::MaeLoss {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// `sum_i w_i * x_i` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, wt) in terms {
            if self.value(v).len() != 1 {
                return Err(FreaError::shape("weighted_sum", "terms must be scalars"));
            }
            total += wt * self.value(v).item();
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
        ))
    }
}
