use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::attention::{attention_apply, attention_scores, global_descriptor};
use super::config::{ModelConfig, DEPTH};
use crate::error::{FreaError, Result};
use crate::tensor::{BatchNormStats, Mode, Tape, Tensor, Var};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
const KERNEL: usize = 4;
/// Decoder layers (1-based) followed by dropout.
const DROPOUT_LAYERS: usize = 3;

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    weight: usize,
    bias: usize,
    norm: Option<Norm>,
}

#[derive(Debug, Clone, Copy)]
struct Proj {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: Vec<Block>,
    decoder: Vec<Block>,
    fuse: Proj,
    low_head: Proj,
    high_head: Proj,
    low_att: Proj,
    high_att: Proj,
    output: Proj,
}

/// How pass B weights the branch features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateMode {
    /// Scores from the compatibility of features with the global descriptor.
    Learned,
    /// Every position scored `1/n`; an exact identity on the features.
    Uniform,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    pub gates: GateMode,
    pub dropout_seed: u64,
    /// Fold batch statistics into the running averages (train mode only).
    pub update_stats: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            gates: GateMode::Learned,
            dropout_seed: 0,
            update_stats: false,
        }
    }
}

/// Tape handles of one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardGraph {
    /// Parameter leaves in build order.
    pub params: Vec<Var>,
    pub low_pred: Option<Var>,
    pub high_pred: Option<Var>,
    pub final_out: Var,
    /// Output layer applied to the attention-free penultimate activation.
    pub pass_a_final: Var,
    /// Penultimate activation of the attention-free pass (the global descriptor source).
    pub pass_a_penultimate: Var,
    /// `[low, high]` post-softmax score maps, when pass B ran.
    pub attention: Option<[Var; 2]>,
}

/// Values of one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub low_pred: Option<Tensor>,
    pub high_pred: Option<Tensor>,
    pub final_out: Tensor,
    /// `[low, high]` score maps, `N×1×h×w`; uniform when attention is off.
    pub attention_maps: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct FreaUnetModel {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    stats: Vec<BatchNormStats>,
    layout: Layout,
    mode: Mode,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    stats: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.names.len() - 1
    }

    fn block(&mut self, prefix: &str, wshape: [usize; 4], out: usize, norm: bool) -> Block {
        let weight = self.add(format!("{prefix}.weight"), wshape.to_vec());
        let bias = self.add(format!("{prefix}.bias"), vec![out]);
        let norm = norm.then(|| {
            let gamma = self.add(format!("{prefix}.bn.gamma"), vec![out]);
            let beta = self.add(format!("{prefix}.bn.beta"), vec![out]);
            self.stats += 1;
            Norm {
                gamma,
                beta,
                stats: self.stats - 1,
            }
        });
        Block { weight, bias, norm }
    }

    fn proj(&mut self, prefix: &str, inp: usize, out: usize) -> Proj {
        let b = self.block(prefix, [out, inp, 1, 1], out, false);
        Proj {
            weight: b.weight,
            bias: b.bias,
        }
    }
}

impl FreaUnetModel {
    /// Builds the network with every parameter drawn from `N(0, init_std²)`
    /// in build order from `rng_seed`.
    ///
    /// All heads and projections are allocated whatever the ablation
    /// switches say, so arms built from the same seed share every weight.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let enc = &config.encoder_filters;
        let dec = &config.decoder_filters;
        let mut b = Builder {
            names: Vec::new(),
            shapes: Vec::new(),
            stats: 0,
        };
        let mut encoder = Vec::with_capacity(DEPTH);
        let mut in_ch = 1;
        for (i, &out) in enc.iter().enumerate() {
            // No norm on the outermost layer, nor on the innermost one whose
            // map shrinks to a few pixels at batch size 1.
            let norm = i != 0 && i != DEPTH - 1;
            encoder.push(b.block(&format!("enc{}", i + 1), [out, in_ch, KERNEL, KERNEL], out, norm));
            in_ch = out;
        }
        let mut decoder = Vec::with_capacity(DEPTH);
        for (j, &out) in dec.iter().enumerate() {
            let in_ch = if j == 0 { enc[DEPTH - 1] } else { dec[j - 1] + enc[DEPTH - 1 - j] };
            decoder.push(b.block(&format!("dec{}", j + 1), [in_ch, out, KERNEL, KERNEL], out, true));
        }
        let (lo, hi) = (config.low_branch_layer - 1, config.high_branch_layer - 1);
        let last = dec[DEPTH - 1];
        let layout = Layout {
            encoder,
            decoder,
            fuse: b.proj("fuse", dec[lo], dec[hi]),
            low_head: b.proj("low_head", dec[lo], 1),
            high_head: b.proj("high_head", dec[hi], 1),
            low_att: b.proj("low_att", last, dec[lo]),
            high_att: b.proj("high_att", last, dec[hi]),
            output: b.proj("output", last, 1),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let normal = Normal::new(0.0, config.init_std)
            .map_err(|e| FreaError::Config(format!("init_std: {e}")))?;
        let params = b
            .shapes
            .iter()
            .map(|s| Tensor::from_fn(s, |_| normal.sample(&mut rng)))
            .collect();
        let mut stats = Vec::with_capacity(b.stats);
        for block in layout.encoder.iter().chain(&layout.decoder) {
            if block.norm.is_some() {
                stats.push(BatchNormStats::new(b.shapes[block.bias][0]));
            }
        }
        Ok(FreaUnetModel {
            config,
            names: b.names,
            params,
            stats,
            layout,
            mode: Mode::Train,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn bn_stats(&self) -> &[BatchNormStats] {
        &self.stats
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        params: Vec<Tensor>,
        stats: Vec<BatchNormStats>,
    ) -> Result<Self> {
        let mut model = Self::build(config)?;
        if params.len() != model.params.len() || stats.len() != model.stats.len() {
            return Err(FreaError::format(
                "checkpoint",
                format!(
                    "expected {} tensors and {} norm layers, found {} and {}",
                    model.params.len(),
                    model.stats.len(),
                    params.len(),
                    stats.len()
                ),
            ));
        }
        for (i, (have, want)) in params.iter().zip(&model.params).enumerate() {
            if have.shape() != want.shape() {
                return Err(FreaError::format(
                    "checkpoint",
                    format!("{}: shape {:?}, expected {:?}", model.names[i], have.shape(), want.shape()),
                ));
            }
        }
        for (have, want) in stats.iter().zip(&model.stats) {
            if have.mean.len() != want.mean.len() || have.var.len() != want.var.len() {
                return Err(FreaError::format("checkpoint", "running stats width mismatch"));
            }
        }
        model.params = params;
        model.stats = stats;
        Ok(model)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn train(&mut self) {
        self.mode = Mode::Train;
    }

    pub fn eval(&mut self) {
        self.mode = Mode::Eval;
    }

    /// Records a full forward evaluation of `mr` (`N×1×S×S`, normalized) on `tape`.
    ///
    /// Pass A runs the decoder with identity gates and yields the
    /// penultimate activation. When attention is on, pass B scores the two
    /// branch layers against descriptors pooled from that activation, gates
    /// them, and re-runs the fusion and every decoder layer after it.
    pub fn forward_graph(
        &mut self,
        tape: &mut Tape,
        mr: &Tensor,
        opts: &ForwardOptions,
    ) -> Result<ForwardGraph> {
        let s = self.config.input_size;
        let (_, c, h, w) = mr.nchw()?;
        if c != 1 || h != s || w != s {
            return Err(FreaError::shape(
                "forward",
                format!("expected N×1×{s}×{s} input, got {:?}", mr.shape()),
            ));
        }
        if !mr.is_finite() {
            return Err(FreaError::NonFinite("model input"));
        }
        let p: Vec<Var> = self.params.iter().map(|t| tape.param(t.clone())).collect();
        let x = tape.constant(mr.clone());

        let mut skips = Vec::with_capacity(DEPTH);
        let mut cur = x;
        for i in 0..DEPTH {
            let block = self.layout.encoder[i];
            let y = tape.conv2d(cur, p[block.weight], Some(p[block.bias]), 2, 1)?;
            cur = self.activate(tape, &p, block, y, opts.update_stats)?;
            skips.push(cur);
        }

        let (lo, hi) = (self.config.low_branch_layer - 1, self.config.high_branch_layer - 1);
        let mut feats = Vec::with_capacity(hi + 1);
        let mut stream = skips[DEPTH - 1];
        for j in 0..=hi {
            let y = self.decoder_layer(tape, &p, j, stream, &skips, opts, opts.update_stats)?;
            feats.push(y);
            stream = y;
        }
        let (f_low, f_high) = (feats[lo], feats[hi]);

        let use_attention = self.config.use_attention;
        let (pass_a_penultimate, pass_a_final) =
            self.tail(tape, &p, f_low, f_high, &skips, opts, opts.update_stats && !use_attention)?;

        let mut attention = None;
        let (mut g_low, mut g_high) = (f_low, f_high);
        let mut final_out = pass_a_final;
        if use_attention {
            let (s_low, s_high) = match opts.gates {
                GateMode::Learned => {
                    let (lh, hh) = (feat_side(tape, f_low)?, feat_side(tape, f_high)?);
                    let la = self.layout.low_att;
                    let ha = self.layout.high_att;
                    let d_low = global_descriptor(tape, pass_a_penultimate, p[la.weight], p[la.bias], lh)?;
                    let d_high = global_descriptor(tape, pass_a_penultimate, p[ha.weight], p[ha.bias], hh)?;
                    (
                        attention_scores(tape, f_low, d_low)?,
                        attention_scores(tape, f_high, d_high)?,
                    )
                }
                GateMode::Uniform => (uniform_scores(tape, f_low)?, uniform_scores(tape, f_high)?),
            };
            g_low = attention_apply(tape, f_low, s_low)?;
            g_high = attention_apply(tape, f_high, s_high)?;
            let (_, out) = self.tail(tape, &p, g_low, g_high, &skips, opts, opts.update_stats)?;
            final_out = out;
            attention = Some([s_low, s_high]);
        }

        let (mut low_pred, mut high_pred) = (None, None);
        if self.config.use_freq_branches {
            low_pred = Some(self.branch_head(tape, &p, self.layout.low_head, g_low)?);
            high_pred = Some(self.branch_head(tape, &p, self.layout.high_head, g_high)?);
        }
        Ok(ForwardGraph {
            params: p,
            low_pred,
            high_pred,
            final_out,
            pass_a_final,
            pass_a_penultimate,
            attention,
        })
    }

    /// Forward evaluation in the current mode with default options.
    pub fn forward(&mut self, mr: &Tensor) -> Result<ForwardOutput> {
        self.forward_with(mr, &ForwardOptions::default())
    }

    pub fn forward_with(&mut self, mr: &Tensor, opts: &ForwardOptions) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let g = self.forward_graph(&mut tape, mr, opts)?;
        let attention_maps = match g.attention {
            Some(maps) => maps.iter().map(|v| tape.value(*v).clone()).collect(),
            None => {
                let n = mr.shape()[0];
                let (_, dec) = self.config.spatial_trace();
                [self.config.low_branch_layer, self.config.high_branch_layer]
                    .iter()
                    .map(|&l| {
                        let side = dec[l - 1];
                        Tensor::full(&[n, 1, side, side], 1.0 / (side * side) as f64)
                    })
                    .collect()
            }
        };
        Ok(ForwardOutput {
            low_pred: g.low_pred.map(|v| tape.value(v).clone()),
            high_pred: g.high_pred.map(|v| tape.value(v).clone()),
            final_out: tape.value(g.final_out).clone(),
            attention_maps,
        })
    }

    /// ReLU, then batch norm when the block has one.
    fn activate(&mut self, tape: &mut Tape, p: &[Var], block: Block, y: Var, update: bool) -> Result<Var> {
        let y = tape.relu(y);
        match block.norm {
            Some(n) => tape.batch_norm(
                y,
                p[n.gamma],
                p[n.beta],
                &mut self.stats[n.stats],
                self.mode,
                BN_MOMENTUM,
                BN_EPS,
                update,
            ),
            None => Ok(y),
        }
    }

    /// Decoder layer `j` (0-based) on `stream`, concatenated with the mirror
    /// encoder output for every layer after the first.
    #[allow(clippy::too_many_arguments)]
    fn decoder_layer(
        &mut self,
        tape: &mut Tape,
        p: &[Var],
        j: usize,
        stream: Var,
        skips: &[Var],
        opts: &ForwardOptions,
        update: bool,
    ) -> Result<Var> {
        let input = if j == 0 {
            stream
        } else {
            tape.concat_channels(stream, skips[DEPTH - 1 - j])?
        };
        let block = self.layout.decoder[j];
        let y = tape.conv_transpose2d(input, p[block.weight], Some(p[block.bias]), 2, 1)?;
        let y = self.activate(tape, p, block, y, update)?;
        if j < DROPOUT_LAYERS {
            let seed = opts.dropout_seed.wrapping_mul(31).wrapping_add(j as u64);
            tape.dropout(y, self.config.dropout_p, self.mode, seed)
        } else {
            Ok(y)
        }
    }

    /// Fusion of the two branch streams, remaining decoder layers, and the
    /// output layer. Returns `(penultimate, final)`.
    #[allow(clippy::too_many_arguments)]
    fn tail(
        &mut self,
        tape: &mut Tape,
        p: &[Var],
        low: Var,
        high: Var,
        skips: &[Var],
        opts: &ForwardOptions,
        update: bool,
    ) -> Result<(Var, Var)> {
        let side = feat_side(tape, high)?;
        let up = tape.upsample_bilinear(low, side, side)?;
        let fuse = self.layout.fuse;
        let projected = tape.conv2d(up, p[fuse.weight], Some(p[fuse.bias]), 1, 0)?;
        let mut stream = tape.add(high, projected)?;
        for j in self.config.high_branch_layer..DEPTH {
            stream = self.decoder_layer(tape, p, j, stream, skips, opts, update)?;
        }
        let out = self.layout.output;
        let y = tape.conv2d(stream, p[out.weight], Some(p[out.bias]), 1, 0)?;
        Ok((stream, tape.tanh(y)))
    }

    fn branch_head(&self, tape: &mut Tape, p: &[Var], head: Proj, feats: Var) -> Result<Var> {
        let y = tape.conv2d(feats, p[head.weight], Some(p[head.bias]), 1, 0)?;
        let y = tape.tanh(y);
        let s = self.config.input_size;
        tape.upsample_bilinear(y, s, s)
    }
}

fn feat_side(tape: &Tape, v: Var) -> Result<usize> {
    Ok(tape.value(v).nchw()?.2)
}

fn uniform_scores(tape: &mut Tape, f: Var) -> Result<Var> {
    let (n, _, h, w) = tape.value(f).nchw()?;
    let zeros = tape.constant(Tensor::zeros(&[n, 1, h, w]));
    tape.spatial_softmax(zeros)
}
