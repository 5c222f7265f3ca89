//! AdamW with decoupled weight decay and a linear warmup/decay schedule.

use ndarray::Array2;

use crate::backbone::{EncoderBackbone, ParamGrads};

use super::{IntentModel, ModelGrads};

/// Linear warmup to the peak over `warmup_steps`, then linear decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl LinearSchedule {
    pub fn new(total_steps: usize, warmup_frac: f64) -> Self {
        let warmup_steps = (warmup_frac * total_steps as f64).ceil() as usize;
        Self {
            total_steps,
            warmup_steps: warmup_steps.min(total_steps),
        }
    }

    /// Multiplier applied to the peak learning rate at optimizer step `step` (0-based).
    pub fn factor(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return step as f64 / self.warmup_steps.max(1) as f64;
        }
        let remaining = self.total_steps.saturating_sub(step) as f64;
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        (remaining / span).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

struct Moments {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Moments {
    fn for_shapes<'a>(shapes: impl Iterator<Item = &'a Array2<f64>>) -> Self {
        let m: Vec<_> = shapes.map(|t| Array2::zeros(t.raw_dim())).collect();
        let v = m.clone();
        Self { m, v }
    }

    fn update(
        &mut self,
        params: Vec<&mut Array2<f64>>,
        grads: &ParamGrads,
        lr: f64,
        hp: &AdamWParams,
        t: i32,
    ) {
        let bc1 = 1.0 - hp.beta1.powi(t);
        let bc2 = 1.0 - hp.beta2.powi(t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(&grads.0)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *p -= lr * hp.weight_decay * *p;
                    *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
                    *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + hp.eps);
                });
        }
    }
}

/// Two parameter groups with independent learning rates.
pub struct AdamW {
    hp: AdamWParams,
    plm: Moments,
    cls: Moments,
    steps: i32,
}

impl AdamW {
    pub fn new<B: EncoderBackbone>(model: &IntentModel<B>, hp: AdamWParams) -> Self {
        Self {
            hp,
            plm: Moments::for_shapes(model.backbone.tensors().into_iter().map(|(_, t)| t)),
            cls: Moments::for_shapes(model.head.tensors().into_iter().map(|(_, t)| t)),
            steps: 0,
        }
    }

    /// Applies one update. A frozen encoder group keeps its parameters and moments untouched.
    pub fn step<B: EncoderBackbone>(
        &mut self,
        model: &mut IntentModel<B>,
        grads: &ModelGrads,
        lr_plm: f64,
        lr_cls: f64,
        freeze_plm: bool,
    ) {
        self.steps += 1;
        if !freeze_plm {
            self.plm
                .update(model.backbone.tensors_mut(), &grads.plm, lr_plm, &self.hp, self.steps);
        }
        self.cls
            .update(model.head.tensors_mut(), &grads.cls, lr_cls, &self.hp, self.steps);
    }

    pub fn steps_taken(&self) -> usize {
        self.steps as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays_to_zero() {
        let s = LinearSchedule::new(200, 0.05);
        assert_eq!(s.warmup_steps, 10);
        assert_eq!(s.factor(0), 0.0);
        assert!(s.factor(0) < s.factor(10));
        assert_eq!(s.factor(10), 1.0);
        assert!((s.factor(105) - 0.5).abs() < 1e-12);
        assert!(s.factor(199) <= s.factor(1));
        assert_eq!(s.factor(200), 0.0);
        let peak = (0..200).map(|i| s.factor(i)).fold(0.0, f64::max);
        assert_eq!(peak, 1.0);
    }

    #[test]
    fn warmup_rounds_up() {
        let s = LinearSchedule::new(30, 0.05);
        assert_eq!(s.warmup_steps, 2);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let hp = AdamWParams {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut m = Moments::for_shapes([Array2::<f64>::zeros((1, 2))].iter());
        let mut p = Array2::from_elem((1, 2), 1.0);
        let g = ParamGrads(vec![ndarray::array![[0.5, -2.0]]]);
        m.update(vec![&mut p], &g, 0.1, &hp, 1);
        assert!((p[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p[[0, 1]] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let hp = AdamWParams {
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut m = Moments::for_shapes([Array2::<f64>::zeros((1, 1))].iter());
        let mut p = Array2::from_elem((1, 1), 2.0);
        m.update(vec![&mut p], &ParamGrads(vec![Array2::zeros((1, 1))]), 0.1, &hp, 1);
        assert!((p[[0, 0]] - 1.9).abs() < 1e-12);
    }
}
