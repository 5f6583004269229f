use std::collections::HashMap;

use super::param::{ParamId, ParamKind, ParamStore};
use crate::error::Result;
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running-statistic update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchNormUpdate<T: Scalar> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
    pub momentum: f64,
}

impl<T: Scalar> BatchNormUpdate<T> {
    /// `running <- momentum * running + (1 - momentum) * batch`
    pub fn apply(&self, store: &mut ParamStore<T>) {
        let m = T::lit(self.momentum);
        let one_m = T::lit(1.0 - self.momentum);
        for (id, batch) in [
            (self.running_mean, &self.batch_mean),
            (self.running_var, &self.batch_var),
        ] {
            for (r, &b) in store.get_mut(id).data_mut().iter_mut().zip(batch) {
                *r = m * *r + one_m * b;
            }
        }
    }
}

/// Post-activation output of a dense layer that carries an activity penalty.
#[derive(Clone, Copy, Debug)]
pub struct ActivityRecord {
    pub layer: ParamId,
    pub activity: Var,
}

/// One forward pass: the graph under construction plus the bookkeeping
/// layers need (parameter leaves, activity records, batch-norm updates).
pub struct Forward<'s, T: Scalar = f32> {
    pub graph: Graph<T>,
    store: &'s ParamStore<T>,
    mode: Mode,
    track_all: bool,
    param_vars: HashMap<ParamId, Var>,
    activities: Vec<ActivityRecord>,
    bn_updates: Vec<BatchNormUpdate<T>>,
}

impl<'s, T: Scalar> Forward<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: Mode) -> Self {
        Forward {
            graph: Graph::new(),
            store,
            mode,
            track_all: false,
            param_vars: HashMap::new(),
            activities: Vec::new(),
            bn_updates: Vec::new(),
        }
    }

    /// Tracks gradients through frozen parameters as well, so intermediate
    /// activations always receive gradients (used for attribution maps).
    pub fn track_all_params(mut self) -> Self {
        self.track_all = true;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    /// Graph leaf for a stored parameter; repeated uses share one leaf.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let entry = self.store.entry(id);
        let track = match entry.kind {
            ParamKind::Trainable => true,
            ParamKind::Frozen => self.track_all,
            ParamKind::Buffer => false,
        };
        let v = self
            .graph
            .leaf(entry.tensor.clone().with_requires_grad(track));
        self.param_vars.insert(id, v);
        v
    }

    pub fn input(&mut self, tensor: Tensor<T>) -> Var {
        self.graph.constant(tensor)
    }

    pub fn record_activity(&mut self, layer: ParamId, activity: Var) {
        self.activities.push(ActivityRecord { layer, activity });
    }

    pub fn activities(&self) -> &[ActivityRecord] {
        &self.activities
    }

    pub fn record_bn_update(&mut self, update: BatchNormUpdate<T>) {
        self.bn_updates.push(update);
    }

    pub fn bn_updates(&self) -> &[BatchNormUpdate<T>] {
        &self.bn_updates
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.graph.backward(loss)
    }

    /// Gradients of every trainable parameter used in this pass, in store
    /// order.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<T>)> {
        let mut out: Vec<(ParamId, Vec<T>)> = self
            .param_vars
            .iter()
            .filter(|(id, _)| self.store.kind(**id) == ParamKind::Trainable)
            .filter_map(|(&id, &v)| self.graph.grad(v).map(|g| (id, g.to_vec())))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn into_bn_updates(self) -> Vec<BatchNormUpdate<T>> {
        self.bn_updates
    }
}
