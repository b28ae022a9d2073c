use crate::autodiff::{BatchStats, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::ops::{Mode, BN_EPSILON, BN_MOMENTUM};
use crate::tensor::{init_tensor, InitScheme, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StatId(pub(crate) usize);

/// Running mean/variance of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Named trainable tensors plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    stat_names: Vec<String>,
    stats: Vec<RunningStats<T>>,
    seed: u64,
}

fn mix(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            stat_names: Vec::new(),
            stats: Vec::new(),
            seed,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], scheme: InitScheme) -> Result<ParamId> {
        let name = name.into();
        if name.is_empty() || self.names.contains(&name) {
            return Err(Error::Config(format!("parameter name `{name}` is empty or duplicated")));
        }
        let t = init_tensor(shape, scheme, mix(self.seed, self.values.len() as u64))?;
        self.names.push(name);
        self.values.push(t);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn add_stats(&mut self, name: impl Into<String>, channels: usize) -> StatId {
        self.stat_names.push(name.into());
        self.stats.push(RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        });
        StatId(self.stats.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn stat_names(&self) -> &[String] {
        &self.stat_names
    }

    pub fn stats(&self) -> &[RunningStats<T>] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.stats
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn apply_stat_updates(&mut self, updates: &[(StatId, BatchStats<T>)], momentum: T) {
        for (id, b) in updates {
            let s = &mut self.stats[id.0];
            for (m, &bm) in s.mean.iter_mut().zip(&b.mean) {
                *m = momentum * *m + (T::one() - momentum) * bm;
            }
            for (v, &bv) in s.var.iter_mut().zip(&b.var) {
                *v = momentum * *v + (T::one() - momentum) * bv;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            stat_names: self.stat_names.clone(),
            stats: self
                .stats
                .iter()
                .map(|s| RunningStats {
                    mean: s.mean.iter().map(|&v| U::of(v.as_f64())).collect(),
                    var: s.var.iter().map(|&v| U::of(v.as_f64())).collect(),
                })
                .collect(),
            seed: self.seed,
        }
    }
}

/// Records captured activations during a forward pass.
#[derive(Debug, Default)]
pub struct Capture<T> {
    pub wanted: Vec<String>,
    pub taken: Vec<(String, Tensor<T>)>,
}

/// Per-pass state threaded through every layer: the tape, bound parameter
/// variables, read-only running statistics and pending statistic updates.
pub struct Forward<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    vars: Vec<Var>,
    stats: &'a [RunningStats<T>],
    pub mode: Mode,
    pub eps: T,
    updates: Vec<(StatId, BatchStats<T>)>,
    capture: Option<Capture<T>>,
}

impl<'a, T: Scalar> Forward<'a, T> {
    /// Binds every parameter of `store` onto `tape` as a gradient-tracked leaf.
    pub fn bind(tape: &'a mut Tape<T>, store: &'a ParamStore<T>, mode: Mode) -> Self {
        let vars = store.values.iter().map(|v| tape.param(v.clone())).collect();
        Self::with_vars(tape, vars, &store.stats, mode)
    }

    /// Uses caller-supplied variables for the parameters (same order as the store).
    pub fn with_vars(tape: &'a mut Tape<T>, vars: Vec<Var>, stats: &'a [RunningStats<T>], mode: Mode) -> Self {
        Forward {
            tape,
            vars,
            stats,
            mode,
            eps: T::of(BN_EPSILON),
            updates: Vec::new(),
            capture: None,
        }
    }

    pub fn capturing(mut self, tags: &[String]) -> Self {
        self.capture = Some(Capture {
            wanted: tags.to_vec(),
            taken: Vec::new(),
        });
        self
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn stats(&self, id: StatId) -> &RunningStats<T> {
        &self.stats[id.0]
    }

    pub(crate) fn record_stats(&mut self, id: StatId, stats: BatchStats<T>) {
        self.updates.push((id, stats));
    }

    /// Saves the value of `v` if `tag` was requested.
    pub fn tag(&mut self, tag: &str, v: Var) {
        if let Some(c) = &mut self.capture {
            if c.wanted.iter().any(|w| w == tag) {
                c.taken.push((tag.to_string(), self.tape.value(v).clone()));
            }
        }
    }

    pub fn into_parts(self) -> (Vec<(StatId, BatchStats<T>)>, Vec<(String, Tensor<T>)>) {
        (self.updates, self.capture.map(|c| c.taken).unwrap_or_default())
    }
}

/// Default running-statistics momentum as the element type.
pub fn bn_momentum<T: Scalar>() -> T {
    T::of(BN_MOMENTUM)
}
