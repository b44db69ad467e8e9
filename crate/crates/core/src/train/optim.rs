use crate::param::{ParamGroup, ParamStore};

/// Hyperparameters of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub exempt_norm_and_gates: bool,
}

/// Nesterov momentum SGD with coupled weight decay, per parameter:
///
/// ```text
/// g   ← grad + wd·value
/// buf ← μ·buf + g
/// value ← value − lr·(g + μ·buf)
/// ```
///
/// Gradients are cleared afterwards; a parameter that received no gradient
/// holds zeros and is treated as such. Frozen parameters are left untouched
/// together with their momentum.
pub fn sgd_nesterov_step(store: &mut ParamStore, p: SgdParams) {
    for param in store.params_mut() {
        if !param.frozen {
            let wd = if p.exempt_norm_and_gates && param.group == ParamGroup::NormOrGate {
                0.0
            } else {
                p.weight_decay
            };
            let value = param.value.data_mut();
            let buf = param.momentum.data_mut();
            for ((v, b), &grad) in value.iter_mut().zip(buf.iter_mut()).zip(param.grad.data()) {
                let g = grad + wd * *v;
                *b = p.momentum * *b + g;
                *v -= p.lr * (g + p.momentum * *b);
            }
        }
        param.grad.data_mut().fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_vec(vec![value]), ParamGroup::Weight).unwrap();
        s
    }

    fn step(s: &mut ParamStore, grad: f64, lr: f64, momentum: f64, weight_decay: f64) -> f64 {
        s.params_mut()[0].grad = Tensor::from_vec(vec![grad]);
        sgd_nesterov_step(
            s,
            SgdParams {
                lr,
                momentum,
                weight_decay,
                exempt_norm_and_gates: false,
            },
        );
        s.params()[0].value.data()[0]
    }

    #[test]
    fn plain_sgd() {
        let mut s = single(1.0);
        assert_eq!(step(&mut s, 0.5, 0.1, 0.0, 0.0), 0.95);
        assert_eq!(s.params()[0].grad.data(), &[0.0]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = single(0.7);
        for _ in 0..10 {
            assert_eq!(step(&mut s, 0.0, 0.1, 0.9, 0.0), 0.7);
        }
    }

    #[test]
    fn two_nesterov_steps() {
        let mut s = single(0.0);
        assert!((step(&mut s, 1.0, 0.1, 0.9, 0.0) - -0.19).abs() < 1e-15);
        // buf = 1.9, update = 0.1 · (1 + 0.9 · 1.9) = 0.271
        assert!((step(&mut s, 1.0, 0.1, 0.9, 0.0) - -0.461).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_and_exemption() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_vec(vec![2.0]), ParamGroup::Weight).unwrap();
        s.add("g", Tensor::from_vec(vec![2.0]), ParamGroup::NormOrGate).unwrap();
        let p = SgdParams {
            lr: 0.5,
            momentum: 0.0,
            weight_decay: 0.1,
            exempt_norm_and_gates: true,
        };
        sgd_nesterov_step(&mut s, p);
        assert_eq!(s.params()[0].value.data(), &[1.9]);
        assert_eq!(s.params()[1].value.data(), &[2.0]);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut s = single(1.0);
        s.params_mut()[0].frozen = true;
        assert_eq!(step(&mut s, 3.0, 0.1, 0.9, 0.1), 1.0);
        assert_eq!(s.params()[0].momentum.data(), &[0.0]);
    }
}
