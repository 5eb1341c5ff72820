//! Adam optimizer and the step-halving learning-rate schedule.

use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators mirroring the parameter store, plus the
/// shared step counter.
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore<f32>) -> Self {
        let m = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        let v = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        AdamState { m, v, step: 0 }
    }
}

/// One bias-corrected Adam update. Every trainable parameter must have a
/// gradient entry; zero gradients leave the parameter value unchanged.
pub fn adam_step(
    store: &mut ParamStore<f32>,
    grads: &[Option<Vec<f32>>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::Contract(format!(
            "gradient list has {} entries for {} parameters",
            grads.len(),
            store.len()
        )));
    }
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for id in store.ids().collect::<Vec<_>>() {
        let i = id.index();
        let g = grads[i].as_ref().ok_or_else(|| {
            Error::Contract(format!("missing gradient for parameter `{}`", store.name(id)))
        })?;
        let p = store.get_mut(id);
        debug_assert_eq!(g.len(), p.numel());
        let data = p.data_mut();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..data.len() {
            let gj = g[j] as f64;
            let mj = ADAM_BETA1 * m[j] as f64 + (1.0 - ADAM_BETA1) * gj;
            let vj = ADAM_BETA2 * v[j] as f64 + (1.0 - ADAM_BETA2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let m_hat = mj / bc1;
            let v_hat = vj / bc2;
            data[j] = (data[j] as f64 - lr * m_hat / (v_hat.sqrt() + ADAM_EPS)) as f32;
        }
    }
    Ok(())
}

/// Global-norm gradient clipping; returns the pre-clip norm. Used only when
/// explicitly enabled; the reference training setup leaves it off.
pub fn clip_global_norm(grads: &mut [Option<Vec<f32>>], max_norm: f32) -> f32 {
    let mut sq = 0.0f64;
    for g in grads.iter().flatten() {
        for &v in g {
            sq += (v as f64) * (v as f64);
        }
    }
    let norm = sq.sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Learning-rate schedule: the base rate halves after each listed epoch.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub base_lr: f64,
    pub halve_epochs: Vec<usize>,
    pub total_epochs: usize,
    pub batch_size: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            base_lr: 0.0002,
            halve_epochs: vec![100, 150],
            total_epochs: 200,
            batch_size: 4,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_epochs == 0 {
            return Err(Error::Config("batch size and total epochs must be >= 1".to_string()));
        }
        let increasing = self.halve_epochs.windows(2).all(|w| w[0] < w[1]);
        if !increasing || self.halve_epochs.iter().any(|&e| e >= self.total_epochs) {
            return Err(Error::Config(format!(
                "halve epochs {:?} must be strictly increasing and < {}",
                self.halve_epochs, self.total_epochs
            )));
        }
        Ok(())
    }
}

/// Learning rate in effect for `epoch`: base / 2^(halvings passed).
pub fn lr_at(epoch: usize, schedule: &Schedule) -> Result<f64> {
    if epoch >= schedule.total_epochs {
        return Err(Error::Input(format!(
            "epoch {epoch} out of range (total {})",
            schedule.total_epochs
        )));
    }
    let halvings = schedule.halve_epochs.iter().filter(|&&e| e <= epoch).count();
    Ok(schedule.base_lr / f64::powi(2.0, halvings as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(value: f32) -> ParamStore<f32> {
        let mut store = ParamStore::new();
        store.add("p", Tensor::scalar(value)).unwrap();
        store
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        let mut store = scalar_store(1.0);
        let mut state = AdamState::new(&store);
        adam_step(&mut store, &[Some(vec![1.0])], &mut state, 0.0002).unwrap();
        let p = store.get(store.id_of("p").unwrap()).data()[0];
        assert!((p - 0.9998).abs() < 1e-6, "{p}");
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut store = scalar_store(0.37);
        let mut state = AdamState::new(&store);
        for _ in 0..3 {
            adam_step(&mut store, &[Some(vec![0.0])], &mut state, 0.1).unwrap();
        }
        assert_eq!(store.get(store.id_of("p").unwrap()).data()[0], 0.37);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut store = scalar_store(1.0);
        let mut state = AdamState::new(&store);
        let err = adam_step(&mut store, &[None], &mut state, 0.1).unwrap_err().to_string();
        assert!(err.contains("`p`"), "{err}");
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut store = scalar_store(0.5);
            let mut state = AdamState::new(&store);
            let mut trace = Vec::new();
            for i in 0..10 {
                let g = ((i * 31 % 7) as f32 - 3.0) * 0.1;
                adam_step(&mut store, &[Some(vec![g])], &mut state, 0.01).unwrap();
                trace.push(store.get(store.id_of("p").unwrap()).data()[0]);
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_anchor_rates() {
        let s = Schedule::default();
        s.validate().unwrap();
        assert_eq!(lr_at(0, &s).unwrap(), 0.0002);
        assert_eq!(lr_at(120, &s).unwrap(), 0.0001);
        assert_eq!(lr_at(180, &s).unwrap(), 0.00005);
        assert!(lr_at(200, &s).is_err());
    }

    #[test]
    fn lr_is_non_increasing() {
        let s = Schedule::default();
        let mut prev = f64::INFINITY;
        for e in 0..s.total_epochs {
            let lr = lr_at(e, &s).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn invalid_schedules_rejected() {
        let mut s = Schedule::default();
        s.halve_epochs = vec![150, 100];
        assert!(s.validate().is_err());
        s.halve_epochs = vec![100, 300];
        assert!(s.validate().is_err());
    }

    #[test]
    fn clipping_preserves_direction() {
        let mut grads = vec![Some(vec![3.0f32, 4.0])];
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-6);
        let g = grads[0].as_ref().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-6 && (g[1] - 0.8).abs() < 1e-6);
    }
}
