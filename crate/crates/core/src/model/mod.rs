//! Best-EarNet and the plain ShuffleNetV2_X0_5 classifier as tape-recorded graphs.

mod config;
mod params;
pub mod weights;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::nn::{BatchNormState, BatchStats, ConvSpec, DropBlockParams, PoolKind};
use crate::tensor::{Float, ReduceKind, Tape, Tensor, Var};
use crate::SeededRng;

pub use config::{ModelConfig, ModelKind, Widths};
pub use params::{ParamEntry, ParamRole, ParamStore};
pub use weights::{load_weights, save_weights};

use config::STAGE_REPEATS;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
struct Conv {
    weight: usize,
    bias: Option<usize>,
    spec: ConvSpec,
}

#[derive(Clone, Debug)]
struct Bn {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Clone, Debug)]
struct ConvBn {
    conv: Conv,
    bn: Bn,
    relu: bool,
}

#[derive(Clone, Debug)]
enum Unit {
    Down { branch1: Vec<ConvBn>, branch2: Vec<ConvBn> },
    Basic { branch2: Vec<ConvBn> },
}

#[derive(Clone, Debug)]
struct BranchPath {
    pool: usize,
    pw: Conv,
    eca: usize,
    bn: Bn,
}

#[derive(Clone, Debug)]
struct Fusion {
    gpw: ConvBn,
    sa_weight: usize,
    sa_bias: usize,
}

#[derive(Clone, Debug)]
struct Head {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
enum Tail {
    Fused { branch: BranchPath, fhigh: ConvBn, fusion: Fusion, heads: [Head; 3] },
    Plain { conv5: ConvBn, head: Head },
}

/// A network with its named parameters. Frozen (eval-mode) models are
/// immutable during inference and may be shared across threads.
#[derive(Clone, Debug)]
pub struct Model<T = f32> {
    pub config: ModelConfig,
    pub kind: ModelKind,
    pub params: ParamStore<T>,
    pub mode: Mode,
    stem: ConvBn,
    stages: Vec<Vec<Unit>>,
    tail: Tail,
}

/// Running-statistics update produced by one training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    mean: usize,
    var: usize,
    stats: BatchStats<T>,
}

/// Intermediate activations, mainly for shape checks and debugging.
#[derive(Clone, Debug)]
pub struct StageActivations {
    /// After the stem max-pool.
    pub stem: Var,
    pub stage2: Var,
    pub stage3: Var,
    pub stage4: Var,
    pub flow: Option<Var>,
    pub fhigh: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    /// Auxiliary head on stage 2 (fused model only).
    pub logits1: Option<Var>,
    /// Auxiliary head on stage 3 (fused model only).
    pub logits2: Option<Var>,
    /// The prediction head.
    pub logits3: Var,
    /// Fusion output (fused model) or final feature map (plain model);
    /// the Grad-CAM target layer.
    pub lgsff: Var,
    pub stages: StageActivations,
    pub bn_updates: Vec<BnUpdate<T>>,
}

/// Parameters of a model placed on a tape, indexed like the [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Option<Var>>,
}

impl Binding {
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx].expect("trainable parameter is bound")
    }

    /// `(store index, tape var)` for every trainable parameter.
    pub fn trainable(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.vars.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v)))
    }
}

struct Builder<'a, T: Float> {
    store: ParamStore<T>,
    rng: &'a mut SeededRng,
}

impl<T: Float> Builder<'_, T> {
    fn kaiming(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let bound = (6.0 / fan_in as f64).sqrt();
        let t = Tensor::uniform(shape, -bound, bound, self.rng);
        self.store.insert(name, t, ParamRole::Trainable)
    }

    fn bias(&mut self, name: String, len: usize, fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let t = Tensor::uniform(vec![len], -bound, bound, self.rng);
        self.store.insert(name, t, ParamRole::Trainable)
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, spec: ConvSpec, bias: bool) -> Conv {
        let fan_in = cin / spec.groups * k * k;
        let weight = self.kaiming(format!("{name}.weight"), vec![cout, cin / spec.groups, k, k], fan_in);
        let bias = bias.then(|| self.bias(format!("{name}.bias"), cout, fan_in));
        Conv { weight, bias, spec }
    }

    fn bn(&mut self, name: &str, c: usize) -> Bn {
        let s = &mut self.store;
        Bn {
            gamma: s.insert(format!("{name}.gamma"), Tensor::ones(vec![c]), ParamRole::Trainable),
            beta: s.insert(format!("{name}.beta"), Tensor::zeros(vec![c]), ParamRole::Trainable),
            mean: s.insert(format!("{name}.running_mean"), Tensor::zeros(vec![c]), ParamRole::RunningMean),
            var: s.insert(format!("{name}.running_var"), Tensor::ones(vec![c]), ParamRole::RunningVar),
        }
    }

    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize, k: usize, spec: ConvSpec, relu: bool) -> ConvBn {
        let conv = self.conv(&format!("{name}.conv"), cin, cout, k, spec, false);
        let bn = self.bn(&format!("{name}.bn"), cout);
        ConvBn { conv, bn, relu }
    }

    fn head(&mut self, name: &str, cin: usize, classes: usize) -> Head {
        let weight = self.kaiming(format!("{name}.weight"), vec![classes, cin], cin);
        let bias = self.bias(format!("{name}.bias"), classes, cin);
        Head { weight, bias }
    }

    /// PW → BN → ReLU → DW3×3 → BN → PW → BN → ReLU.
    fn transform(&mut self, name: &str, cin: usize, c: usize, stride: usize) -> Vec<ConvBn> {
        vec![
            self.conv_bn(&format!("{name}.0"), cin, c, 1, ConvSpec::default(), true),
            self.conv_bn(&format!("{name}.1"), c, c, 3, ConvSpec::new(stride, 1, c), false),
            self.conv_bn(&format!("{name}.2"), c, c, 1, ConvSpec::default(), true),
        ]
    }

    fn backbone(&mut self, w: &Widths) -> (ConvBn, Vec<Vec<Unit>>) {
        let stem = self.conv_bn("stem", 3, w.stem, 3, ConvSpec::new(2, 1, 1), true);
        let mut cin = w.stem;
        let mut stages = Vec::new();
        for (s, (&cout, &repeats)) in w.stages.iter().zip(&STAGE_REPEATS).enumerate() {
            let half = cout / 2;
            let mut units = Vec::with_capacity(repeats);
            for u in 0..repeats {
                let name = format!("stage{}.{u}", s + 2);
                units.push(if u == 0 {
                    Unit::Down {
                        branch1: vec![
                            self.conv_bn(&format!("{name}.branch1.0"), cin, cin, 3, ConvSpec::new(2, 1, cin), false),
                            self.conv_bn(&format!("{name}.branch1.1"), cin, half, 1, ConvSpec::default(), true),
                        ],
                        branch2: self.transform(&format!("{name}.branch2"), cin, half, 2),
                    }
                } else {
                    Unit::Basic { branch2: self.transform(&format!("{name}.branch2"), half, half, 1) }
                });
            }
            stages.push(units);
            cin = cout;
        }
        (stem, stages)
    }
}

impl<T: Float> Model<T> {
    /// Best-EarNet: backbone, branch path from stage 2, high-level 3×3 conv
    /// from stage 4, fusion, and three classification heads.
    pub fn best_earnet(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let w = config.widths();
        let mut b = Builder { store: ParamStore::new(), rng };
        let (stem, stages) = b.backbone(&w);
        let [s2, s3, s4] = w.stages;
        let sp = config.spatial();
        let branch = BranchPath {
            pool: sp[1] / sp[3],
            pw: b.conv("branch.pw", s2, w.fhigh, 1, ConvSpec::default(), false),
            eca: b.kaiming("branch.eca.weight".into(), vec![1, 1, 1, config.eca_kernel], config.eca_kernel),
            bn: b.bn("branch.bn", w.fhigh),
        };
        let fhigh = b.conv_bn("fhigh", s4, w.fhigh, 3, ConvSpec::new(1, 1, 1), true);
        let gpw = b.conv_bn("lgsff.gpw", w.fhigh, w.fhigh, 1, ConvSpec::new(1, 0, config.lgsff_groups), true);
        let sa = b.conv("lgsff.sa", 2, 1, 3, ConvSpec::new(1, 1, 1), true);
        let fusion = Fusion { gpw, sa_weight: sa.weight, sa_bias: sa.bias.expect("bias requested") };
        let heads = [b.head("head1", s2, config.num_classes), b.head("head2", s3, config.num_classes), b.head("head3", w.fhigh, config.num_classes)];
        Ok(Self {
            kind: ModelKind::BestEarNet,
            params: b.store,
            mode: Mode::Train,
            stem,
            stages,
            tail: Tail::Fused { branch, fhigh, fusion, heads },
            config,
        })
    }

    /// Standard ShuffleNetV2_X0_5: backbone, 1×1 expansion, pool, linear.
    pub fn shufflenet_baseline(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let w = config.widths();
        let mut b = Builder { store: ParamStore::new(), rng };
        let (stem, stages) = b.backbone(&w);
        let conv5 = b.conv_bn("conv5", w.stages[2], w.baseline_head, 1, ConvSpec::default(), true);
        let head = b.head("fc", w.baseline_head, config.num_classes);
        Ok(Self {
            kind: ModelKind::ShuffleNetV2,
            params: b.store,
            mode: Mode::Train,
            stem,
            stages,
            tail: Tail::Plain { conv5, head },
            config,
        })
    }

    pub fn build(kind: ModelKind, config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        match kind {
            ModelKind::BestEarNet => Self::best_earnet(config, rng),
            ModelKind::ShuffleNetV2 => Self::shufflenet_baseline(config, rng),
        }
    }

    pub fn train(&mut self) {
        self.mode = Mode::Train;
    }

    pub fn eval(&mut self) {
        self.mode = Mode::Eval;
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count_trainable()
    }

    /// Same graph with parameters converted to another precision.
    pub fn cast<U: Float>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            kind: self.kind,
            params: self.params.cast(),
            mode: self.mode,
            stem: self.stem.clone(),
            stages: self.stages.clone(),
            tail: self.tail.clone(),
        }
    }

    /// Places every trainable tensor on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Binding {
        let vars = self
            .params
            .iter()
            .map(|(_, e)| (e.role == ParamRole::Trainable).then(|| tape.leaf(e.tensor.clone(), requires_grad)))
            .collect();
        Binding { vars }
    }

    /// Like [`Model::bind`] but with replacement values for the trainable
    /// tensors, given in store order.
    pub fn bind_with(&self, tape: &mut Tape<T>, trainable: &[Tensor<T>], requires_grad: bool) -> Result<Binding> {
        let mut supplied = trainable.iter();
        let mut vars = Vec::with_capacity(self.params.len());
        for (name, e) in self.params.iter() {
            if e.role != ParamRole::Trainable {
                vars.push(None);
                continue;
            }
            let t = supplied.next().ok_or_else(|| Error::Input("too few trainable tensors supplied".into()))?;
            if t.shape() != e.tensor.shape() {
                return Err(shape_err!("{name}: expected {:?}, got {:?}", e.tensor.shape(), t.shape()));
            }
            vars.push(Some(tape.leaf(t.clone(), requires_grad)));
        }
        if supplied.next().is_some() {
            return Err(Error::Input("too many trainable tensors supplied".into()));
        }
        Ok(Binding { vars })
    }

    /// Current trainable tensors in store order.
    pub fn trainable_tensors(&self) -> Vec<Tensor<T>> {
        self.params.trainable().map(|i| self.params.tensor(i).clone()).collect()
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        for u in updates {
            let mut state = BatchNormState {
                running_mean: self.params.tensor(u.mean).data().to_vec(),
                running_var: self.params.tensor(u.var).data().to_vec(),
                ..BatchNormState::new(0)
            };
            state.update(&u.stats);
            self.params.tensor_mut(u.mean).data_mut().copy_from_slice(&state.running_mean);
            self.params.tensor_mut(u.var).data_mut().copy_from_slice(&state.running_var);
        }
    }

    fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let s = self.config.input_size;
        match shape {
            [n, 3, h, w] if *n > 0 && *h == s && *w == s => Ok(()),
            _ => Err(shape_err!("expected N×3×{s}×{s} input, got {shape:?}")),
        }
    }

    /// Records the whole network on `tape`. `rng` drives DropBlock in
    /// training mode and is untouched in eval mode.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &Binding, x: Var, rng: &mut SeededRng) -> Result<ForwardOutput<T>> {
        self.check_input(tape.shape(x))?;
        let mut f = Pass { model: self, tape, bound, updates: Vec::new() };
        let conv = f.conv_bn(x, &self.stem)?;
        let stem = f.tape.pool2d(conv, PoolKind::Max, (3, 3), (2, 2), (1, 1))?;
        let mut acts = Vec::with_capacity(3);
        let mut h = stem;
        for units in &self.stages {
            for unit in units {
                h = f.unit(h, unit)?;
            }
            acts.push(h);
        }
        let [stage2, stage3, stage4] = acts[..] else { unreachable!("three stages") };
        let mut stages = StageActivations { stem, stage2, stage3, stage4, flow: None, fhigh: None };
        let (logits1, logits2, logits3, lgsff) = match &self.tail {
            Tail::Fused { branch, fhigh, fusion, heads } => {
                let flow = f.branch_path(stage2, branch, rng)?;
                let high = f.conv_bn(stage4, fhigh)?;
                stages.flow = Some(flow);
                stages.fhigh = Some(high);
                let fused = f.lgsff(flow, high, fusion, rng)?;
                let l1 = f.head(stage2, &heads[0])?;
                let l2 = f.head(stage3, &heads[1])?;
                let l3 = f.head(fused, &heads[2])?;
                (Some(l1), Some(l2), l3, fused)
            }
            Tail::Plain { conv5, head } => {
                let feat = f.conv_bn(stage4, conv5)?;
                (None, None, f.head(feat, head)?, feat)
            }
        };
        let bn_updates = f.updates;
        Ok(ForwardOutput { logits1, logits2, logits3, lgsff, stages, bn_updates })
    }

    /// Eval-style inference without gradient bookkeeping; returns the
    /// prediction-head logits. Uses the current mode for batch norm.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let mut rng = <SeededRng as rand::SeedableRng>::seed_from_u64(0);
        let out = self.forward(&mut tape, &bound, xv, &mut rng)?;
        Ok(tape.value(out.logits3).clone())
    }

    /// Arg-max of the prediction head per sample.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.argmax_rows())
    }
}

struct Pass<'a, T: Float> {
    model: &'a Model<T>,
    tape: &'a mut Tape<T>,
    bound: &'a Binding,
    updates: Vec<BnUpdate<T>>,
}

impl<T: Float> Pass<'_, T> {
    fn conv(&mut self, x: Var, c: &Conv) -> Result<Var> {
        let w = self.bound.var(c.weight);
        let b = c.bias.map(|i| self.bound.var(i));
        self.tape.conv2d(x, w, b, c.spec)
    }

    fn bn(&mut self, x: Var, bn: &Bn) -> Result<Var> {
        let p = &self.model.params;
        let state = BatchNormState {
            running_mean: p.tensor(bn.mean).data().to_vec(),
            running_var: p.tensor(bn.var).data().to_vec(),
            ..BatchNormState::new(0)
        };
        let (g, b) = (self.bound.var(bn.gamma), self.bound.var(bn.beta));
        let (y, stats) = self.tape.batchnorm2d(x, g, b, &state, self.model.is_train())?;
        if let Some(stats) = stats {
            self.updates.push(BnUpdate { mean: bn.mean, var: bn.var, stats });
        }
        Ok(y)
    }

    fn conv_bn(&mut self, x: Var, l: &ConvBn) -> Result<Var> {
        let y = self.conv(x, &l.conv)?;
        let y = self.bn(y, &l.bn)?;
        if l.relu {
            self.tape.relu(y)
        } else {
            Ok(y)
        }
    }

    fn chain(&mut self, mut x: Var, layers: &[ConvBn]) -> Result<Var> {
        for l in layers {
            x = self.conv_bn(x, l)?;
        }
        Ok(x)
    }

    fn unit(&mut self, x: Var, unit: &Unit) -> Result<Var> {
        let joined = match unit {
            Unit::Down { branch1, branch2 } => {
                let a = self.chain(x, branch1)?;
                let b = self.chain(x, branch2)?;
                self.tape.concat(&[a, b], 1)?
            }
            Unit::Basic { branch2 } => {
                let c = self.tape.shape(x)[1];
                let keep = self.tape.narrow(x, 1, 0, c / 2)?;
                let rest = self.tape.narrow(x, 1, c / 2, c - c / 2)?;
                let b = self.chain(rest, branch2)?;
                self.tape.concat(&[keep, b], 1)?
            }
        };
        self.tape.channel_shuffle(joined, 2)
    }

    fn dropblock(&mut self, x: Var, rng: &mut impl Rng) -> Result<Var> {
        let shape = self.tape.shape(x);
        let p: DropBlockParams = self.model.config.dropblock.fitted(shape[2], shape[3]);
        self.tape.dropblock(x, &p, self.model.is_train(), rng)
    }

    /// Avg pool → PW → DropBlock → ECA → BN → ReLU.
    fn branch_path(&mut self, x: Var, bp: &BranchPath, rng: &mut impl Rng) -> Result<Var> {
        let (_, _, h, w) = self.tape.value(x).dims4()?;
        if h % bp.pool != 0 || w % bp.pool != 0 {
            return Err(Error::Config(format!("branch input {h}×{w} is not divisible by pool size {}", bp.pool)));
        }
        let y = self.tape.pool2d(x, PoolKind::Avg, (bp.pool, bp.pool), (bp.pool, bp.pool), (0, 0))?;
        let y = self.conv(y, &bp.pw)?;
        let y = self.dropblock(y, rng)?;
        let y = self.tape.eca(y, self.bound.var(bp.eca))?;
        let y = self.bn(y, &bp.bn)?;
        self.tape.relu(y)
    }

    /// Gated fusion of the low- and high-level maps.
    fn lgsff(&mut self, flow: Var, fhigh: Var, fu: &Fusion, rng: &mut impl Rng) -> Result<Var> {
        if self.tape.shape(flow) != self.tape.shape(fhigh) {
            return Err(shape_err!("fusion inputs differ: {:?} vs {:?}", self.tape.shape(flow), self.tape.shape(fhigh)));
        }
        let sum = self.tape.add(flow, fhigh)?;
        let merged = self.conv_bn(sum, &fu.gpw)?;
        let sa = self.tape.spatial_attention(merged, self.bound.var(fu.sa_weight), Some(self.bound.var(fu.sa_bias)))?;
        let gate = self.tape.sigmoid(sa)?;
        let high = self.dropblock(fhigh, rng)?;
        self.tape.gated_blend(gate, flow, high)
    }

    fn head(&mut self, x: Var, h: &Head) -> Result<Var> {
        class_head(self.tape, x, self.bound.var(h.weight), self.bound.var(h.bias))
    }
}

/// Global average pool followed by a linear layer; raw logits.
pub fn class_head<T: Float>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let (n, c, _, _) = tape.value(x).dims4()?;
    if tape.shape(weight).get(1) != Some(&c) {
        return Err(shape_err!("head expects {:?} input features, got {c}", tape.shape(weight).get(1)));
    }
    let pooled = tape.reduce(x, &[2, 3], ReduceKind::Mean)?;
    let flat = tape.reshape(pooled, &[n, c])?;
    tape.linear(flat, weight, Some(bias))
}

/// Fusion on bare tensors with eval-mode batch norm, for property checks
/// and tools that hold the two maps directly.
pub fn lgsff_eval<T: Float>(model: &Model<T>, flow: &Tensor<T>, fhigh: &Tensor<T>) -> Result<Tensor<T>> {
    let Tail::Fused { fusion, .. } = &model.tail else {
        return Err(Error::Config("model has no fusion module".into()));
    };
    let mut eval = model.clone();
    eval.eval();
    let mut tape = Tape::new();
    let bound = eval.bind(&mut tape, false);
    let a = tape.constant(flow.clone());
    let b = tape.constant(fhigh.clone());
    let mut rng = <SeededRng as rand::SeedableRng>::seed_from_u64(0);
    let mut pass = Pass { model: &eval, tape: &mut tape, bound: &bound, updates: Vec::new() };
    let out = pass.lgsff(a, b, fusion, &mut rng)?;
    Ok(tape.value(out).clone())
}
