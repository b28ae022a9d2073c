use super::config::{ModelConfig, ModelKind};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{
    BatchNorm, Cnn3dBlock, CnnBlock, Conv2d, Dense, Feeds, Forward, InterweavingModule, ParamStore, StatId, Trace,
};
use crate::autodiff::BatchStats;
use crate::tensor::ops::Mode;
use crate::tensor::{Scalar, Tensor};

/// A batch of windows, one tensor per input stream.
///
/// Frames are `[N, T, H, W, 3]`, flows `[N, T-1, H, W, 2]` with channels `(d_v, d_h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch<T> {
    pub side_frames: Tensor<T>,
    pub side_flows: Tensor<T>,
    pub front_frames: Tensor<T>,
    pub front_flows: Tensor<T>,
}

impl<T: Scalar> WindowBatch<T> {
    pub fn len(&self) -> usize {
        self.side_frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All-zero batch matching `cfg`.
    pub fn zeros(cfg: &ModelConfig, n: usize) -> Result<Self> {
        let [h, w] = cfg.input_dims();
        Ok(WindowBatch {
            side_frames: Tensor::zeros(&[n, cfg.frames, h, w, 3])?,
            side_flows: Tensor::zeros(&[n, cfg.flows, h, w, 2])?,
            front_frames: Tensor::zeros(&[n, cfg.frames, h, w, 3])?,
            front_flows: Tensor::zeros(&[n, cfg.flows, h, w, 2])?,
        })
    }

    pub fn streams(&self) -> [&Tensor<T>; 4] {
        [&self.side_frames, &self.side_flows, &self.front_frames, &self.front_flows]
    }

    pub fn streams_mut(&mut self) -> [&mut Tensor<T>; 4] {
        [
            &mut self.side_frames,
            &mut self.side_flows,
            &mut self.front_frames,
            &mut self.front_flows,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    SideFrames,
    SideFlows,
    FrontFrames,
    FrontFlows,
}

impl Stream {
    pub fn tag(self) -> &'static str {
        match self {
            Stream::SideFrames => "side_spatial",
            Stream::SideFlows => "side_temporal",
            Stream::FrontFrames => "front_spatial",
            Stream::FrontFlows => "front_temporal",
        }
    }

    fn channels(self) -> usize {
        match self {
            Stream::SideFrames | Stream::FrontFrames => 3,
            Stream::SideFlows | Stream::FrontFlows => 2,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// 1x1 conv + BN + SELU squeezing the folded time axis.
#[derive(Debug, Clone)]
struct Transition {
    conv: Conv2d,
    bn: BatchNorm,
}

impl Transition {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Transition {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, 1, 1, Feeds::Selu)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout)?,
        })
    }

    fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        let y = self.bn.forward(f, y)?;
        Ok(f.tape.selu(y))
    }

    fn trace(&self, shape: &[usize], t: &mut Trace) -> Vec<usize> {
        let out = self.conv.trace(shape, t);
        self.bn.trace(&out, t);
        t.flops += out.iter().product::<usize>() as u64;
        out
    }
}

#[derive(Debug, Clone)]
enum Body {
    Single(Vec<CnnBlock>),
    Interweave(Vec<InterweavingModule>),
}

/// Stream stacks, fusion, 2D body and head.
#[derive(Debug, Clone)]
struct Network {
    streams: Vec<(Stream, Vec<Cnn3dBlock>)>,
    /// One per fused pair (or the lone folded stream).
    transitions: Vec<Transition>,
    body: Body,
    hidden: Dense,
    logits: Dense,
}

/// A network plus its parameters.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub seed: u64,
    net: Network,
}

/// Result of a train-mode forward pass.
pub struct TrainPass<T: Scalar> {
    pub loss: T,
    pub logits: Tensor<T>,
    pub grads: Vec<Tensor<T>>,
    pub stat_updates: Vec<(StatId, BatchStats<T>)>,
}

pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Model<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new(seed);
    let w = cfg.base_width;
    let used: &[Stream] = match cfg.model {
        ModelKind::PlainCnn => &[Stream::SideFrames],
        ModelKind::Tscnn => &[Stream::SideFrames, Stream::SideFlows],
        ModelKind::Intercnn => &[
            Stream::SideFrames,
            Stream::SideFlows,
            Stream::FrontFrames,
            Stream::FrontFlows,
        ],
    };
    let mut streams = Vec::new();
    for &s in used {
        let mut blocks = Vec::new();
        let mut cin = s.channels();
        for i in 0..cfg.stream_depth {
            blocks.push(Cnn3dBlock::new(&mut store, &format!("{}.{i}", s.tag()), cin, w)?);
            cin = w;
        }
        streams.push((s, blocks));
    }

    let stem = cfg.stem_width();
    let folded = match cfg.model {
        ModelKind::PlainCnn => cfg.frames * w,
        _ => (cfg.frames + cfg.flows) * w,
    };
    let views: &[&str] = if cfg.model == ModelKind::Intercnn {
        &["side", "front"]
    } else {
        &["side"]
    };
    let transitions = views
        .iter()
        .map(|v| Transition::new(&mut store, &format!("{v}_fuse"), folded, stem))
        .collect::<Result<Vec<_>>>()?;

    let plan = cfg.body_plan();
    let body = if cfg.model == ModelKind::Intercnn {
        let mods = plan
            .iter()
            .enumerate()
            .map(|(i, &(s, cin, cout))| {
                InterweavingModule::new(&mut store, &format!("inter.{i}"), cfg.block, cin, cout, s)
            })
            .collect::<Result<Vec<_>>>()?;
        Body::Interweave(mods)
    } else {
        let blocks = plan
            .iter()
            .enumerate()
            .map(|(i, &(s, cin, cout))| CnnBlock::new(&mut store, &format!("block.{i}"), cfg.block, cin, cout, s))
            .collect::<Result<Vec<_>>>()?;
        Body::Single(blocks)
    };
    let last = plan.last().map_or(stem, |p| p.2);
    let pooled = if cfg.model == ModelKind::Intercnn { 2 * last } else { last };
    let hidden = Dense::new(&mut store, "head.hidden", pooled, 4 * cfg.classes)?;
    let logits = Dense::new(&mut store, "head.logits", 4 * cfg.classes, cfg.classes)?;
    Ok(Model {
        config: cfg.clone(),
        params: store,
        seed,
        net: Network {
            streams,
            transitions,
            body,
            hidden,
            logits,
        },
    })
}

impl<T: Scalar> Model<T> {
    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Per-sample FLOPs and declared activation shapes.
    pub fn trace(&self) -> Trace {
        let cfg = &self.config;
        let [h, w] = cfg.input_dims();
        let mut t = Trace::default();
        let mut outs = Vec::new();
        for (s, blocks) in &self.net.streams {
            let depth = match s {
                Stream::SideFrames | Stream::FrontFrames => cfg.frames,
                _ => cfg.flows,
            };
            let mut shape = vec![depth, h, w, s.channels()];
            for b in blocks {
                shape = b.trace(&shape, &mut t);
            }
            t.record(s.tag(), &shape);
            outs.push(shape);
        }
        let folded_c: usize = outs
            .iter()
            .take(if cfg.model == ModelKind::PlainCnn { 1 } else { 2 })
            .map(|s| s[0] * s[3])
            .sum();
        let folded = vec![h, w, folded_c];
        let tags = ["side_fused", "front_fused"];
        let mut fused = Vec::new();
        for (i, tr) in self.net.transitions.iter().enumerate() {
            fused = tr.trace(&folded, &mut t);
            t.record(tags[i], &fused);
        }
        let mut shape = fused;
        match &self.net.body {
            Body::Single(blocks) => {
                for (i, b) in blocks.iter().enumerate() {
                    shape = b.trace(&shape, &mut t);
                    t.record(format!("block.{i}"), &shape);
                }
            }
            Body::Interweave(mods) => {
                for (i, m) in mods.iter().enumerate() {
                    shape = m.trace(&shape, &mut t);
                    t.record(format!("inter.{i}.side"), &shape);
                    t.record(format!("inter.{i}.front"), &shape);
                }
                shape[2] *= 2;
            }
        }
        t.flops += shape.iter().product::<usize>() as u64;
        t.record("pooled", &[shape[2]]);
        let hid = self.net.hidden.trace(&mut t);
        t.flops += hid[0] as u64;
        t.record("hidden", &hid);
        let out = self.net.logits.trace(&mut t);
        t.record("logits", &out);
        t
    }

    pub fn flop_count(&self) -> u64 {
        self.trace().flops
    }

    /// Names accepted by activation capture.
    pub fn tags(&self) -> Vec<String> {
        self.trace().shapes.into_iter().map(|(t, _)| t).collect()
    }

    fn check_batch(&self, batch: &WindowBatch<T>) -> Result<()> {
        let cfg = &self.config;
        let [h, w] = cfg.input_dims();
        let n = batch.side_frames.shape()[0];
        let want = [
            [n, cfg.frames, h, w, 3],
            [n, cfg.flows, h, w, 2],
            [n, cfg.frames, h, w, 3],
            [n, cfg.flows, h, w, 2],
        ];
        for (i, (t, want)) in batch.streams().iter().zip(&want).enumerate() {
            if t.shape() != want {
                return Err(Error::shape(
                    "model_forward",
                    format!("stream {i} has shape {:?}, expected {want:?}", t.shape()),
                ));
            }
        }
        Ok(())
    }

    /// Builds the forward graph on `f.tape` and returns the logits `[N, K]`.
    pub fn forward(&self, f: &mut Forward<'_, T>, batch: &WindowBatch<T>) -> Result<Var> {
        self.check_batch(batch)?;
        let inputs = batch.streams();
        let mut outs = Vec::new();
        for (s, blocks) in &self.net.streams {
            let mut x = f.tape.constant(inputs[s.index()].clone());
            for b in blocks {
                x = b.forward(f, x)?;
            }
            f.tag(s.tag(), x);
            outs.push(x);
        }
        let tags = ["side_fused", "front_fused"];
        let mut fused = Vec::new();
        for (i, tr) in self.net.transitions.iter().enumerate() {
            let folded = if self.config.model == ModelKind::PlainCnn {
                f.tape.fold_time(outs[0])?
            } else {
                f.tape.temporal_fuse(outs[2 * i], outs[2 * i + 1])?
            };
            let y = tr.forward(f, folded)?;
            f.tag(tags[i], y);
            fused.push(y);
        }
        let feat = match &self.net.body {
            Body::Single(blocks) => {
                let mut x = fused[0];
                for (i, b) in blocks.iter().enumerate() {
                    x = b.forward(f, x)?;
                    f.tag(&format!("block.{i}"), x);
                }
                x
            }
            Body::Interweave(mods) => {
                let (mut a, mut b) = (fused[0], fused[1]);
                for (i, m) in mods.iter().enumerate() {
                    (a, b) = m.forward(f, a, b)?;
                    f.tag(&format!("inter.{i}.side"), a);
                    f.tag(&format!("inter.{i}.front"), b);
                }
                f.tape.concat_channels(a, b)?
            }
        };
        let pooled = f.tape.global_avg_pool(feat)?;
        f.tag("pooled", pooled);
        let hid = self.net.hidden.forward(f, pooled)?;
        let hid = f.tape.selu(hid);
        f.tag("hidden", hid);
        let logits = self.net.logits.forward(f, hid)?;
        f.tag("logits", logits);
        Ok(logits)
    }

    /// Forward pass without gradient bookkeeping beyond the tape itself.
    pub fn logits(&self, batch: &WindowBatch<T>, mode: Mode) -> Result<Tensor<T>> {
        Ok(self.forward_capture(batch, mode, &[])?.0)
    }

    /// Forward pass that also returns the requested tagged activations.
    pub fn forward_capture(
        &self,
        batch: &WindowBatch<T>,
        mode: Mode,
        tags: &[String],
    ) -> Result<(Tensor<T>, Vec<(String, Tensor<T>)>)> {
        if !tags.is_empty() {
            let known = self.tags();
            if let Some(bad) = tags.iter().find(|t| !known.contains(t)) {
                return Err(Error::UnknownTag(bad.clone()));
            }
        }
        let mut tape = Tape::new();
        let mut f = Forward::bind(&mut tape, &self.params, mode).capturing(tags);
        let y = self.forward(&mut f, batch)?;
        let (_, captured) = f.into_parts();
        Ok((tape.value(y).clone(), captured))
    }

    /// Train-mode forward plus backward; parameters are left untouched.
    pub fn train_pass(&self, batch: &WindowBatch<T>, labels: &[usize]) -> Result<TrainPass<T>> {
        let mut tape = Tape::new();
        let mut f = Forward::bind(&mut tape, &self.params, Mode::Train);
        let logits = self.forward(&mut f, batch)?;
        let vars = f.param_vars().to_vec();
        let (stat_updates, _) = f.into_parts();
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        let mut g = tape.backward(loss)?;
        let grads = vars
            .iter()
            .zip(self.params.values())
            .map(|(&v, p)| g.take(v).unwrap_or_else(|| Tensor::zeros_like(p)))
            .collect();
        Ok(TrainPass {
            loss: tape.value(loss).data()[0],
            logits: tape.value(logits).clone(),
            grads,
            stat_updates,
        })
    }
}

impl Model<f64> {
    /// Cross-entropy of the model over `batch` as a function of the parameter
    /// variables, for finite-difference checks.
    pub fn loss_graph(&self, tape: &mut Tape<f64>, vars: &[Var], batch: &WindowBatch<f64>, labels: &[usize]) -> Result<Var> {
        let mut f = Forward::with_vars(tape, vars.to_vec(), self.params.stats(), Mode::Train);
        let logits = self.forward(&mut f, batch)?;
        drop(f);
        tape.softmax_cross_entropy(logits, labels)
    }
}
