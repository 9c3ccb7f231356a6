use rand::Rng;

use super::config::ArchConfig;
use super::prior::SpatialPrior;
use crate::dataset::Montage;
use crate::error::{shape_err, Result};
use crate::tensor::{NodeId, ParamKind, ParameterSet, Tape, Tensor, EPS};
use crate::util::rng_from;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running-statistic updates are reported in [`Forward::bn_updates`].
    Train,
    /// Running statistics.
    Eval,
}

/// Tape nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Reconstruction `[N, 13, T]` on the normalized scale.
    pub output: NodeId,
    /// Encoder outputs per stage, `[N*4, C_s, L_s]`.
    pub stages: Vec<NodeId>,
    /// Source embeddings `[N, 4, embed_dim]`.
    pub embeddings: NodeId,
    /// Raw attention `[N, 13, 4*B]`.
    pub attention: NodeId,
    /// Graph-attention weights `[N, 13, k]`.
    pub alpha: NodeId,
    /// Refined attention `[N, 13, 4*B]`.
    pub refined: NodeId,
    /// Signed-normalized attention `[N, 13, 4, B]`.
    pub mixing: NodeId,
    /// Skip weights `[N, 13, 4]`.
    pub skip_weights: NodeId,
    /// `(parameter prefix, batch-norm node)` pairs for running-statistic updates.
    pub bn_updates: Vec<(String, NodeId)>,
}

/// The reconstruction network: parameter layout plus the fixed spatial prior.
#[derive(Clone, Debug)]
pub struct Network {
    cfg: ArchConfig,
    prior: SpatialPrior,
    sources: usize,
    targets: usize,
}

fn uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (3.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

struct Builder<'a, R: Rng> {
    set: ParameterSet,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<()> {
        let t = uniform(shape, fan_in, self.rng);
        self.set.insert(name, ParamKind::Decayed, t).map(|_| ())
    }

    fn zeros(&mut self, name: String, n: usize) -> Result<()> {
        self.set.insert(name, ParamKind::NotDecayed, Tensor::zeros(&[n])).map(|_| ())
    }

    fn norm(&mut self, prefix: &str, n: usize, running: bool) -> Result<()> {
        self.set.insert(format!("{prefix}.gamma"), ParamKind::NotDecayed, Tensor::full(&[n], 1.0))?;
        self.set.insert(format!("{prefix}.beta"), ParamKind::NotDecayed, Tensor::zeros(&[n]))?;
        if running {
            self.set.insert(format!("{prefix}.running_mean"), ParamKind::Buffer, Tensor::zeros(&[n]))?;
            self.set.insert(format!("{prefix}.running_var"), ParamKind::Buffer, Tensor::full(&[n], 1.0))?;
        }
        Ok(())
    }
}

impl Network {
    pub fn new(cfg: ArchConfig, montage: &Montage) -> Result<Self> {
        cfg.validate()?;
        let prior = SpatialPrior::new(montage, cfg.prior_tau, cfg.neighbors)?;
        Ok(Self {
            sources: montage.sources().len(),
            targets: montage.targets().len(),
            cfg,
            prior,
        })
    }

    pub fn standard(cfg: ArchConfig) -> Result<Self> {
        Self::new(cfg, &Montage::standard())
    }

    pub fn config(&self) -> &ArchConfig {
        &self.cfg
    }

    pub fn prior(&self) -> &SpatialPrior {
        &self.prior
    }

    /// Fresh parameters; identical seeds give bit-identical sets.
    pub fn init(&self, seed: u64) -> Result<ParameterSet> {
        let c = &self.cfg;
        let mut rng = rng_from(&[seed, 0x1417]);
        let mut b = Builder {
            set: ParameterSet::new(),
            rng: &mut rng,
        };
        let mut cin = 1;
        for (s, &w) in c.widths.iter().enumerate() {
            for &k in &c.kernels {
                b.weight(format!("enc.{s}.k{k}"), &[w, cin, k], cin * k)?;
            }
            b.norm(&format!("enc.{s}.bn"), w, true)?;
            cin = w;
        }

        let cf = c.final_width();
        b.weight("embed.fc1.weight".into(), &[c.embed_hidden, 4 * cf], 4 * cf)?;
        b.zeros("embed.fc1.bias".into(), c.embed_hidden)?;
        b.norm("embed.bn", c.embed_hidden, true)?;
        b.weight("embed.fc2.weight".into(), &[c.embed_dim, c.embed_hidden], c.embed_hidden)?;
        b.zeros("embed.fc2.bias".into(), c.embed_dim)?;
        b.norm("embed.ln", c.embed_dim, false)?;

        let es = self.sources * c.embed_dim;
        let d = c.attn_dim();
        for t in 0..self.targets {
            b.weight(format!("attn.{t}.weight"), &[c.attn_hidden, es], es)?;
            b.zeros(format!("attn.{t}.bias"), c.attn_hidden)?;
        }
        b.weight("attn.shared.weight".into(), &[d, c.attn_hidden], c.attn_hidden)?;
        b.zeros("attn.shared.bias".into(), d)?;

        b.weight("gat.src.weight".into(), &[c.gat_dim, d], d)?;
        b.zeros("gat.src.bias".into(), c.gat_dim)?;
        b.weight("gat.dst.weight".into(), &[c.gat_dim, d], d)?;
        b.weight("gat.score".into(), &[1, c.gat_dim], c.gat_dim)?;
        b.set
            .insert("gat.lambda", ParamKind::NotDecayed, Tensor::full(&[1], c.lambda_init))?;
        b.weight("gat.message.weight".into(), &[d, d], d)?;
        b.weight("gat.gate.weight".into(), &[d, 2 * d], 2 * d)?;
        b.zeros("gat.gate.bias".into(), d)?;

        b.weight("dec.adapter.weight".into(), &[cf, cf, 1], cf)?;
        b.zeros("dec.adapter.bias".into(), cf)?;
        let mut cin = cf;
        for (s, &w) in c.decoder_widths.iter().enumerate() {
            b.weight(format!("dec.up{s}.weight"), &[cin, w, 4], cin * 2)?;
            let skip_c = c.widths[c.widths.len() - 2 - s];
            b.weight(format!("dec.skip{s}.weight"), &[w, skip_c, 1], skip_c)?;
            b.norm(&format!("dec.up{s}.bn"), w, true)?;
            cin = w;
        }
        b.weight("dec.up3.weight".into(), &[cin, 1, 4], cin * 2)?;
        b.weight("dec.proj.weight".into(), &[1, 1, 1], 1)?;
        b.zeros("dec.proj.bias".into(), 1)?;
        Ok(b.set)
    }

    fn norm_bn(
        &self,
        tape: &mut Tape,
        params: &ParameterSet,
        x: NodeId,
        prefix: &str,
        mode: Mode,
        updates: &mut Vec<(String, NodeId)>,
    ) -> Result<NodeId> {
        let g = tape.param(params, &format!("{prefix}.gamma"))?;
        let b = tape.param(params, &format!("{prefix}.beta"))?;
        match mode {
            Mode::Train => {
                let y = tape.batch_norm(x, g, b, self.cfg.norm_eps)?;
                updates.push((prefix.to_string(), y));
                Ok(y)
            }
            Mode::Eval => {
                let rm = running(params, prefix, "running_mean")?;
                let rv = running(params, prefix, "running_var")?;
                tape.batch_norm_eval(x, g, b, rm, rv, self.cfg.norm_eps)
            }
        }
    }

    /// Shared encoder over `[M, 1, T]`; returns every stage output.
    pub fn encode(
        &self,
        tape: &mut Tape,
        params: &ParameterSet,
        x: NodeId,
        mode: Mode,
        updates: &mut Vec<(String, NodeId)>,
    ) -> Result<Vec<NodeId>> {
        let mut h = x;
        let mut stages = Vec::with_capacity(self.cfg.widths.len());
        for s in 0..self.cfg.widths.len() {
            let mut acc: Option<NodeId> = None;
            for &k in &self.cfg.kernels {
                let w = tape.param(params, &format!("enc.{s}.k{k}"))?;
                let y = tape.conv1d(h, w, None, 2, k / 2)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, y)?,
                    None => y,
                });
            }
            let y = self.norm_bn(tape, params, acc.unwrap(), &format!("enc.{s}.bn"), mode, updates)?;
            h = tape.elu(y)?;
            stages.push(h);
        }
        Ok(stages)
    }

    /// `[M, C, L]` → `[M, 4C]` (mean, std, max, min over time).
    pub fn state_descriptor(&self, tape: &mut Tape, h: NodeId) -> Result<NodeId> {
        let parts = [
            tape.mean_axis(h, -1)?,
            tape.std_axis(h, -1)?,
            tape.max_axis(h, -1)?,
            tape.min_axis(h, -1)?,
        ];
        tape.concat(&parts, -1)
    }

    /// Refines attention vectors `z: [N, 13, D]`; returns `(refined, alpha)`.
    pub fn refine(&self, tape: &mut Tape, params: &ParameterSet, z: NodeId) -> Result<(NodeId, NodeId)> {
        let shape = tape.shape(z).to_vec();
        let (n, t, d) = (shape[0], shape[1], shape[2]);
        if t != self.targets || d != self.cfg.attn_dim() {
            return Err(shape_err("refine", format!("attention {shape:?}")));
        }
        let k = self.cfg.neighbors;
        let g = self.cfg.gat_dim;
        let flat: Vec<usize> = self.prior.neighbors.iter().flatten().copied().collect();
        let log_prior: Vec<f64> = self
            .prior
            .neighbors
            .iter()
            .enumerate()
            .flat_map(|(a, nb)| nb.iter().map(move |&b| (a, b)))
            .map(|(a, b)| (self.prior.get(a, b) + EPS).ln())
            .collect();

        let ws = tape.param(params, "gat.src.weight")?;
        let bs = tape.param(params, "gat.src.bias")?;
        let wu = tape.param(params, "gat.dst.weight")?;
        let own = tape.linear(z, ws, Some(bs))?;
        let own = tape.reshape(own, &[n, t, 1, g])?;
        let other = tape.linear(z, wu, None)?;
        let other = tape.index_select(other, 1, &flat)?;
        let other = tape.reshape(other, &[n, t, k, g])?;
        let pre = tape.add(own, other)?;
        let act = tape.leaky_relu(pre, 0.2)?;
        let a = tape.param(params, "gat.score")?;
        let score = tape.linear(act, a, None)?;
        let score = tape.reshape(score, &[n, t, k])?;
        let lambda = tape.param(params, "gat.lambda")?;
        let lp = tape.constant(Tensor::new(vec![t, k], log_prior)?)?;
        let bias = tape.mul(lambda, lp)?;
        let logits = tape.add(score, bias)?;
        let alpha = tape.softmax(logits)?;

        let wm = tape.param(params, "gat.message.weight")?;
        let msg = tape.linear(z, wm, None)?;
        let msg = tape.index_select(msg, 1, &flat)?;
        let msg = tape.reshape(msg, &[n * t, k, d])?;
        let a3 = tape.reshape(alpha, &[n * t, 1, k])?;
        let m = tape.bmm(a3, msg)?;
        let m = tape.reshape(m, &[n, t, d])?;

        let zm = tape.concat(&[z, m], -1)?;
        let wg = tape.param(params, "gat.gate.weight")?;
        let bg = tape.param(params, "gat.gate.bias")?;
        let gate = tape.linear(zm, wg, Some(bg))?;
        let gate = tape.sigmoid(gate)?;
        let upd = tape.mul(gate, m)?;
        Ok((tape.add(z, upd)?, alpha))
    }

    /// Full forward pass on normalized sources `x: [N, 4, T]`.
    pub fn forward(&self, tape: &mut Tape, params: &ParameterSet, x: NodeId, mode: Mode) -> Result<Forward> {
        let c = &self.cfg;
        let xs = tape.shape(x).to_vec();
        if xs.len() != 3 || xs[1] != self.sources || xs[2] != c.samples {
            return Err(shape_err(
                "forward",
                format!("expected [N, {}, {}], got {xs:?}", self.sources, c.samples),
            ));
        }
        let (n, s, t) = (xs[0], self.sources, self.targets);
        let mut updates = Vec::new();

        let flat = tape.reshape(x, &[n * s, 1, c.samples])?;
        let stages = self.encode(tape, params, flat, mode, &mut updates)?;
        let top = *stages.last().unwrap();

        let desc = self.state_descriptor(tape, top)?;
        let w1 = tape.param(params, "embed.fc1.weight")?;
        let b1 = tape.param(params, "embed.fc1.bias")?;
        let e = tape.linear(desc, w1, Some(b1))?;
        let e = self.norm_bn(tape, params, e, "embed.bn", mode, &mut updates)?;
        let e = tape.elu(e)?;
        let w2 = tape.param(params, "embed.fc2.weight")?;
        let b2 = tape.param(params, "embed.fc2.bias")?;
        let e = tape.linear(e, w2, Some(b2))?;
        let lg = tape.param(params, "embed.ln.gamma")?;
        let lb = tape.param(params, "embed.ln.beta")?;
        let e = tape.layer_norm(e, lg, lb, c.norm_eps)?;
        let embeddings = tape.reshape(e, &[n, s, c.embed_dim])?;
        let joint = tape.reshape(e, &[n, s * c.embed_dim])?;

        let d = c.attn_dim();
        let ws = tape.param(params, "attn.shared.weight")?;
        let bs = tape.param(params, "attn.shared.bias")?;
        let mut rows = Vec::with_capacity(t);
        for ti in 0..t {
            let w = tape.param(params, &format!("attn.{ti}.weight"))?;
            let b = tape.param(params, &format!("attn.{ti}.bias"))?;
            let hdn = tape.linear(joint, w, Some(b))?;
            let hdn = tape.elu(hdn)?;
            let a = tape.linear(hdn, ws, Some(bs))?;
            rows.push(tape.reshape(a, &[n, 1, d])?);
        }
        let attention = tape.concat(&rows, 1)?;

        let (refined, alpha) = self.refine(tape, params, attention)?;
        let blocks = tape.reshape(refined, &[n, t, s, c.blocks])?;
        let mixing = tape.signed_normalize(blocks, 2, EPS)?;
        let mag = tape.abs(mixing)?;
        let skip_weights = tape.mean_axis(mag, -1)?;
        let skip_w = tape.reshape(skip_weights, &[n, t, s, 1])?;

        let agg = tape.block_mix(mixing, top)?;
        let wa = tape.param(params, "dec.adapter.weight")?;
        let ba = tape.param(params, "dec.adapter.bias")?;
        let mut h = tape.conv1d(agg, wa, Some(ba), 1, 0)?;
        let lens = c.stage_lengths();
        for j in 0..c.decoder_widths.len() {
            let enc = c.widths.len() - 2 - j;
            let w = tape.param(params, &format!("dec.up{j}.weight"))?;
            let up = tape.conv_transpose1d(h, w, None, 2, 1, Some(lens[enc]))?;
            let skip = tape.block_mix(skip_w, stages[enc])?;
            let wsk = tape.param(params, &format!("dec.skip{j}.weight"))?;
            let skip = tape.conv1d(skip, wsk, None, 1, 0)?;
            let sum = tape.add(up, skip)?;
            let y = self.norm_bn(tape, params, sum, &format!("dec.up{j}.bn"), mode, &mut updates)?;
            h = tape.elu(y)?;
        }
        let w = tape.param(params, "dec.up3.weight")?;
        let h = tape.conv_transpose1d(h, w, None, 2, 1, Some(c.samples))?;
        let wp = tape.param(params, "dec.proj.weight")?;
        let bp = tape.param(params, "dec.proj.bias")?;
        let y = tape.conv1d(h, wp, Some(bp), 1, 0)?;
        let output = tape.reshape(y, &[n, t, c.samples])?;

        Ok(Forward {
            output,
            stages,
            embeddings,
            attention,
            alpha,
            refined,
            mixing,
            skip_weights,
            bn_updates: updates,
        })
    }

    /// Inference helper: eval-mode reconstruction of normalized sources `[N, 4, T]`.
    pub fn predict(&self, params: &ParameterSet, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone())?;
        let f = self.forward(&mut tape, params, xi, Mode::Eval)?;
        Ok(tape.value(f.output).clone())
    }
}

fn running<'p>(params: &'p ParameterSet, prefix: &str, which: &str) -> Result<&'p [f64]> {
    let name = format!("{prefix}.{which}");
    params
        .get(&name)
        .map(|t| t.data())
        .ok_or_else(|| crate::error::invalid(format!("missing buffer `{name}`")))
}

/// Folds batch statistics from a training pass into the running buffers.
pub fn update_running_stats(
    params: &mut ParameterSet,
    tape: &Tape,
    updates: &[(String, NodeId)],
    momentum: f64,
) -> Result<()> {
    for (prefix, node) in updates {
        let (mean, var) = tape
            .batch_stats(*node)
            .ok_or_else(|| crate::error::invalid(format!("`{prefix}` is not a training batch norm")))?;
        for (which, stat) in [("running_mean", mean), ("running_var", var)] {
            let name = format!("{prefix}.{which}");
            let buf = params
                .get_mut(&name)
                .ok_or_else(|| crate::error::invalid(format!("missing buffer `{name}`")))?;
            for (r, v) in buf.data_mut().iter_mut().zip(stat) {
                *r = (1.0 - momentum) * *r + momentum * v;
            }
        }
    }
    Ok(())
}
