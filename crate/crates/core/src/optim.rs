//! Adafactor, AdamW and RAdam over a [`ParamStore`].
//!
//! State is kept per trainable tensor with its own step counter; tensors
//! without a gradient in a step (or frozen by the mask) are left untouched.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{Gradients, ParamStore, Tensor, TrainableMask, OPT_PREFIX};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdafactorConfig {
    /// Second-moment decay is `1 - t^(-decay_exponent)`.
    pub decay_exponent: f64,
    pub eps: f64,
    pub clip_threshold: f64,
}

impl Default for AdafactorConfig {
    fn default() -> Self {
        Self {
            decay_exponent: 0.8,
            eps: 1e-30,
            clip_threshold: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adafactor(AdafactorConfig),
    AdamW(AdamConfig),
    /// Uses `beta1`, `beta2` and `eps`; weight decay is ignored.
    RAdam(AdamConfig),
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adafactor(_) => "adafactor",
            OptimizerKind::AdamW(_) => "adamw",
            OptimizerKind::RAdam(_) => "radam",
        }
    }

    /// Default hyperparameters for `adafactor`, `adamw` or `radam`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "adafactor" => Ok(OptimizerKind::Adafactor(AdafactorConfig::default())),
            "adamw" => Ok(OptimizerKind::AdamW(AdamConfig::default())),
            "radam" => Ok(OptimizerKind::RAdam(AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            })),
            other => Err(Error::invalid(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Slot {
    /// Row and column sums of the squared-gradient moving average.
    Factored { row: Vec<f64>, col: Vec<f64> },
    Full { v: Vec<f64> },
    Moments { m: Vec<f64>, v: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotState {
    pub step: u64,
    pub slot: Slot,
}

impl SlotState {
    /// Number of stored second-moment values.
    pub fn second_moment_len(&self) -> usize {
        match &self.slot {
            Slot::Factored { row, col } => row.len() + col.len(),
            Slot::Full { v } | Slot::Moments { v, .. } => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// One entry per parameter tensor, created on its first update.
    pub slots: Vec<Option<SlotState>>,
}

/// `outer(row, col) / sum(row)`, the factored second-moment estimate.
pub fn factored_second_moment(row: &[f64], col: &[f64]) -> Vec<f64> {
    let total: f64 = row.iter().sum();
    let mut out = Vec::with_capacity(row.len() * col.len());
    for &r in row {
        for &c in col {
            out.push(if total > 0.0 { r * c / total } else { 0.0 });
        }
    }
    out
}

/// RAdam rectification factor at step `t`, or `None` while the variance
/// estimate is not yet tractable (`rho_t <= 4`).
pub fn radam_rectification(beta2: f64, t: u64) -> Option<f64> {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let b2t = beta2.powf(t as f64);
    let rho_t = rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t);
    (rho_t > 4.0).then(|| {
        ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt()
    })
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamStore) -> Self {
        Self {
            kind,
            lr,
            slots: vec![None; params.len()],
        }
    }

    /// Applies one update to every trainable tensor that has a gradient.
    /// Any non-finite gradient aborts before anything changes.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, mask: &TrainableMask) -> Result<()> {
        if grads.len() != params.len() || self.slots.len() != params.len() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: grads.len(),
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.len() != params.tensors()[i].data.len() {
                    return Err(Error::LengthMismatch {
                        left: params.tensors()[i].data.len(),
                        right: g.len(),
                    });
                }
                if mask.is_trainable(i) && g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged);
                }
            }
        }
        let (kind, lr) = (self.kind, self.lr);
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            let Some(g) = grads[i].as_ref() else { continue };
            if !mask.is_trainable(i) {
                continue;
            }
            let state = self.slots[i].get_or_insert_with(|| SlotState {
                step: 0,
                slot: fresh_slot(kind, t),
            });
            state.step += 1;
            match kind {
                OptimizerKind::Adafactor(c) => adafactor_update(&c, lr, t, g, state),
                OptimizerKind::AdamW(c) => adam_update(&c, lr, &mut t.data, g, state, false),
                OptimizerKind::RAdam(c) => adam_update(&c, lr, &mut t.data, g, state, true),
            }
        }
        Ok(())
    }

    /// State as `opt/`-prefixed tensors: `opt/<param>/step` plus
    /// `row`/`col`, `v`, or `m`/`v` depending on the slot.
    pub fn state_tensors(&self, params: &ParamStore) -> Vec<Tensor> {
        let mut out = Vec::new();
        for (i, s) in self.slots.iter().enumerate() {
            let Some(s) = s else { continue };
            let p = format!("{OPT_PREFIX}{}", params.tensors()[i].name);
            out.push(Tensor::new(format!("{p}/step"), vec![1], vec![s.step as f64]));
            let vec_t = |n: &str, v: &[f64]| Tensor::new(format!("{p}/{n}"), vec![v.len()], v.to_vec());
            match &s.slot {
                Slot::Factored { row, col } => {
                    out.push(vec_t("row", row));
                    out.push(vec_t("col", col));
                }
                Slot::Full { v } => out.push(vec_t("v", v)),
                Slot::Moments { m, v } => {
                    out.push(vec_t("m", m));
                    out.push(vec_t("v", v));
                }
            }
        }
        out
    }

    /// Rebuilds state written by [`Optimizer::state_tensors`].
    pub fn restore(kind: OptimizerKind, lr: f64, params: &ParamStore, tensors: &[Tensor]) -> Result<Self> {
        let by_name: BTreeMap<&str, &Tensor> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut opt = Self::new(kind, lr, params);
        for (i, t) in params.tensors().iter().enumerate() {
            let p = format!("{OPT_PREFIX}{}", t.name);
            let Some(step) = by_name.get(format!("{p}/step").as_str()) else { continue };
            let get = |n: &str| {
                by_name
                    .get(format!("{p}/{n}").as_str())
                    .map(|t| t.data.clone())
                    .ok_or_else(|| Error::IncompatibleCheckpoint(format!("missing optimizer tensor {p}/{n}")))
            };
            let slot = match fresh_slot(kind, t) {
                Slot::Factored { .. } => Slot::Factored {
                    row: get("row")?,
                    col: get("col")?,
                },
                Slot::Full { .. } => Slot::Full { v: get("v")? },
                Slot::Moments { .. } => Slot::Moments {
                    m: get("m")?,
                    v: get("v")?,
                },
            };
            if !same_shape(&slot, &fresh_slot(kind, t)) {
                return Err(Error::IncompatibleCheckpoint(format!("optimizer state shape for {}", t.name)));
            }
            opt.slots[i] = Some(SlotState {
                step: step.data[0] as u64,
                slot,
            });
        }
        Ok(opt)
    }
}

fn fresh_slot(kind: OptimizerKind, t: &Tensor) -> Slot {
    match kind {
        OptimizerKind::Adafactor(_) if t.is_matrix() => Slot::Factored {
            row: vec![0.0; t.rows()],
            col: vec![0.0; t.cols()],
        },
        OptimizerKind::Adafactor(_) => Slot::Full {
            v: vec![0.0; t.data.len()],
        },
        _ => Slot::Moments {
            m: vec![0.0; t.data.len()],
            v: vec![0.0; t.data.len()],
        },
    }
}

fn same_shape(a: &Slot, b: &Slot) -> bool {
    match (a, b) {
        (Slot::Factored { row, col }, Slot::Factored { row: r, col: c }) => row.len() == r.len() && col.len() == c.len(),
        (Slot::Full { v }, Slot::Full { v: w }) => v.len() == w.len(),
        (Slot::Moments { m, v }, Slot::Moments { m: a, v: b }) => m.len() == a.len() && v.len() == b.len(),
        _ => false,
    }
}

fn adafactor_update(c: &AdafactorConfig, lr: f64, t: &mut Tensor, g: &[f64], state: &mut SlotState) {
    let beta = 1.0 - (state.step as f64).powf(-c.decay_exponent);
    let v_hat = match &mut state.slot {
        Slot::Factored { row, col } => {
            let n = col.len();
            for (r, rv) in row.iter_mut().enumerate() {
                let s: f64 = g[r * n..(r + 1) * n].iter().map(|x| x * x).sum();
                *rv = beta * *rv + (1.0 - beta) * s;
            }
            for (j, cv) in col.iter_mut().enumerate() {
                let s: f64 = g.iter().skip(j).step_by(n).map(|x| x * x).sum();
                *cv = beta * *cv + (1.0 - beta) * s;
            }
            factored_second_moment(row, col)
        }
        Slot::Full { v } => {
            for (vv, x) in v.iter_mut().zip(g) {
                *vv = beta * *vv + (1.0 - beta) * x * x;
            }
            v.clone()
        }
        Slot::Moments { .. } => unreachable!("adafactor never creates moment slots"),
    };
    let u: Vec<f64> = g.iter().zip(&v_hat).map(|(x, v)| x / (v + c.eps).sqrt()).collect();
    let rms = (u.iter().map(|x| x * x).sum::<f64>() / u.len() as f64).sqrt();
    let denom = (rms / c.clip_threshold).max(1.0);
    for (p, x) in t.data.iter_mut().zip(&u) {
        *p -= lr * x / denom;
    }
}

fn adam_update(c: &AdamConfig, lr: f64, p: &mut [f64], g: &[f64], state: &mut SlotState, rectified: bool) {
    let Slot::Moments { m, v } = &mut state.slot else {
        unreachable!("adam-family slots hold moments")
    };
    let t = state.step;
    if !rectified && c.weight_decay != 0.0 {
        p.iter_mut().for_each(|x| *x -= lr * c.weight_decay * *x);
    }
    let bc1 = 1.0 - c.beta1.powf(t as f64);
    let bc2 = 1.0 - c.beta2.powf(t as f64);
    let rect = if rectified { radam_rectification(c.beta2, t) } else { Some(1.0) };
    for i in 0..p.len() {
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        p[i] -= match rect {
            Some(r) => lr * r * m_hat / ((v[i] / bc2).sqrt() + c.eps),
            None => lr * m_hat,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(shape: Vec<usize>, data: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::default();
        s.push(Tensor::new("w", shape, data));
        s
    }

    #[test]
    fn factored_estimate_is_exact_for_rank_one() {
        let u = [0.5, -2.0, 1.5];
        let v = [3.0, -0.25];
        let g: Vec<f64> = u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
        let mut p = store(vec![3, 2], vec![0.0; 6]);
        let mut opt = Optimizer::new(OptimizerKind::from_name("adafactor").unwrap(), 0.1, &p);
        opt.step(&mut p, &vec![Some(g.clone())], &TrainableMask(vec![true])).unwrap();
        let Some(SlotState {
            slot: Slot::Factored { row, col },
            ..
        }) = &opt.slots[0]
        else {
            panic!("expected factored slot")
        };
        assert_eq!(row.len() + col.len(), 5);
        for (e, x) in factored_second_moment(row, col).iter().zip(&g) {
            assert!((e - x * x).abs() < 1e-12);
        }
    }

    #[test]
    fn adafactor_scalar_step_tends_to_lr() {
        let mut p = store(vec![1], vec![0.0]);
        let mut opt = Optimizer::new(OptimizerKind::from_name("adafactor").unwrap(), 0.01, &p);
        let mut last = 0.0;
        for _ in 0..200 {
            let before = p.tensors()[0].data[0];
            opt.step(&mut p, &vec![Some(vec![0.3])], &TrainableMask(vec![true])).unwrap();
            last = before - p.tensors()[0].data[0];
        }
        assert!((last - 0.01).abs() < 1e-9);
    }

    #[test]
    fn adamw_first_step_is_signed_lr() {
        let mut p = store(vec![2], vec![1.0, -1.0]);
        let kind = OptimizerKind::AdamW(AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        });
        let mut opt = Optimizer::new(kind, 0.05, &p);
        opt.step(&mut p, &vec![Some(vec![2.0, -0.5])], &TrainableMask(vec![true])).unwrap();
        assert!((p.tensors()[0].data[0] - 0.95).abs() < 1e-8);
        assert!((p.tensors()[0].data[1] + 0.95).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_without_decay_changes_nothing() {
        let mut p = store(vec![2], vec![1.0, -1.0]);
        let kind = OptimizerKind::AdamW(AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        });
        let mut opt = Optimizer::new(kind, 0.05, &p);
        opt.step(&mut p, &vec![Some(vec![0.0, 0.0])], &TrainableMask(vec![true])).unwrap();
        assert_eq!(p.tensors()[0].data, vec![1.0, -1.0]);
    }

    #[test]
    fn radam_starts_with_momentum_only() {
        assert!(radam_rectification(0.999, 1).is_none());
        let r = radam_rectification(0.999, 1_000_000).unwrap();
        assert!((r - 1.0).abs() < 1e-3);
        let mut p = store(vec![1], vec![0.0]);
        let mut opt = Optimizer::new(OptimizerKind::from_name("radam").unwrap(), 0.1, &p);
        opt.step(&mut p, &vec![Some(vec![2.0])], &TrainableMask(vec![true])).unwrap();
        assert!((p.tensors()[0].data[0] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn frozen_and_nonfinite() {
        let mut p = store(vec![2], vec![1.0, 2.0]);
        let mut opt = Optimizer::new(OptimizerKind::from_name("adamw").unwrap(), 0.1, &p);
        opt.step(&mut p, &vec![Some(vec![1.0, 1.0])], &TrainableMask(vec![false])).unwrap();
        assert_eq!(p.tensors()[0].data, vec![1.0, 2.0]);
        let err = opt.step(&mut p, &vec![Some(vec![f64::NAN, 1.0])], &TrainableMask(vec![true]));
        assert!(matches!(err, Err(Error::Diverged)));
        assert_eq!(p.tensors()[0].data, vec![1.0, 2.0]);
    }

    #[test]
    fn state_round_trips_through_tensors() {
        let mut p = ParamStore::default();
        p.push(Tensor::new("a", vec![2, 3], vec![0.1; 6]));
        p.push(Tensor::new("b", vec![3], vec![0.2; 3]));
        for name in ["adafactor", "adamw", "radam"] {
            let kind = OptimizerKind::from_name(name).unwrap();
            let mut opt = Optimizer::new(kind, 0.01, &p);
            let g = vec![Some(vec![0.5, -0.25, 0.125, 1.0, 2.0, -4.0]), Some(vec![1.0, 0.5, 0.25])];
            let mut q = p.clone();
            let mask = TrainableMask::all(&q);
            opt.step(&mut q, &g, &mask).unwrap();
            let back = Optimizer::restore(kind, 0.01, &q, &opt.state_tensors(&q)).unwrap();
            assert_eq!(back, opt, "{name}");
        }
    }
}
