use super::{ParamStore, Real, Result, Tensor, TensorError};

/// Adam with bias correction.
///
/// Moments are kept per parameter tensor and updated in `f64`. Parameters
/// whose gradient is `None` for a step are left untouched, moments included.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` is indexed by parameter id.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        for (id, g) in params.ids().zip(grads) {
            if let Some(g) = g {
                if g.shape() != params.get(id).shape() || self.m[id.index()].shape() != g.shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "adam_step",
                        lhs: params.get(id).shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (id, g) in params.ids().zip(grads) {
            let Some(g) = g else { continue };
            let i = id.index();
            let p = params.get_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((pv, mv), vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                let gv = gv.as_f64();
                let m_new = self.beta1 * mv.as_f64() + (1.0 - self.beta1) * gv;
                let v_new = self.beta2 * vv.as_f64() + (1.0 - self.beta2) * gv * gv;
                *mv = T::from_f64(m_new);
                *vv = T::from_f64(v_new);
                let update = self.lr * (m_new / c1) / ((v_new / c2).sqrt() + self.eps);
                *pv = T::from_f64(pv.as_f64() - update);
            }
        }
        Ok(())
    }
}
