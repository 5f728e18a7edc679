//! Trainable parameters, the Adam optimizer, and gradient verification.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// One named trainable tensor with its gradient accumulator.
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    /// Row 0 is a pad slot: kept at zero, gradient discarded.
    pub freeze_row0: bool,
    pub trainable: bool,
}

impl Parameter {
    pub fn rows(&self) -> usize {
        self.value.rows()
    }

    pub fn cols(&self) -> usize {
        self.value.cols()
    }
}

/// Ordered collection of parameters; one optimizer owns one set.
#[derive(Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, freeze_row0: bool) -> Result<usize> {
        if self.by_name.contains_key(name) {
            return Err(Error::Invalid(format!("duplicate parameter {name}")));
        }
        let numel = value.numel();
        let idx = self.params.len();
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad: vec![0.0; numel],
            freeze_row0,
            trainable: true,
        });
        self.by_name.insert(name.to_string(), idx);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, idx: usize) -> &Parameter {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Parameter {
        &mut self.params[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.index_of(name).map(|i| self.get(i))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        let i = self.index_of(name)?;
        Some(self.get_mut(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn add_grad(&mut self, idx: usize, contribution: &[f64]) {
        let p = &mut self.params[idx];
        debug_assert_eq!(p.grad.len(), contribution.len());
        for (g, &c) in p.grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Push every parameter as a tape leaf; trainable parameters get
    /// `requires_grad`. Returns leaf ids aligned with parameter indices.
    pub fn leaves(&self, tape: &mut Tape) -> Result<Vec<NodeId>> {
        self.params
            .iter()
            .map(|p| tape.leaf_tensor(&p.value, p.trainable))
            .collect()
    }

    /// Pull gradients off a finished backward pass into the accumulators.
    pub fn absorb(&mut self, tape_grads: &crate::tape::Gradients, leaf_ids: &[NodeId]) {
        for idx in 0..self.params.len() {
            if !self.params[idx].trainable {
                continue;
            }
            if let Some(g) = tape_grads.get(leaf_ids[idx]) {
                let contribution = g.to_vec();
                self.add_grad(idx, &contribution);
            }
        }
    }
}

/// Adam with bias correction. Moment buffers are keyed by parameter index and
/// must see the same parameter layout every step.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step_count: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over all trainable parameters; gradients are zeroed after.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.grad.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.grad.len()]).collect();
        } else if self.m.len() != params.len() {
            return Err(Error::Train(format!(
                "optimizer saw {} parameters, now {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for idx in 0..params.len() {
            let p = params.get_mut(idx);
            if !p.trainable {
                p.grad.fill(0.0);
                continue;
            }
            if let Some(bad) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::Train(format!(
                    "non-finite gradient in parameter {} at flat index {bad}",
                    p.name
                )));
            }
            if p.freeze_row0 {
                let c = p.cols();
                p.grad[..c].fill(0.0);
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let w = p.value.data_mut();
            for k in 0..w.len() {
                let g = p.grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                w[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            if p.freeze_row0 {
                let c = p.value.cols();
                debug_assert!(p.value.data()[..c].iter().all(|&x| x == 0.0));
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }
}

/// A recorded forward pass: the tape, its scalar loss root, and the leaf id
/// of every parameter that was pushed.
pub struct TapeBuild {
    pub tape: Tape,
    pub root: NodeId,
    pub leaves: Vec<NodeId>,
}

/// Compare analytic gradients against central finite differences.
///
/// `build` must deterministically reconstruct the same scalar function of the
/// current parameter values (any dropout must use a fixed mask). At most
/// `coords_per_param` coordinates are probed per parameter (0 = all). Returns
/// the max over probed coordinates of
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)`. The 1e-6 floor
/// keeps near-zero gradients from being judged by central-difference noise,
/// which sits around 1e-11 for O(1) losses and would otherwise dominate.
pub fn grad_check<F, R>(
    params: &mut ParamSet,
    eps: f64,
    coords_per_param: usize,
    rng: &mut R,
    build: F,
) -> Result<f64>
where
    F: Fn(&ParamSet) -> Result<TapeBuild>,
    R: Rng,
{
    let built = build(params)?;
    let loss0 = built.tape.scalar_value(built.root);
    if !loss0.is_finite() {
        return Err(Error::NonFinite("grad_check loss".to_string()));
    }
    let grads = built.tape.backward(built.root)?;
    let analytic: Vec<Vec<f64>> = (0..params.len())
        .map(|i| grads.get_or_zeros(built.leaves[i], params.get(i).value.numel()))
        .collect();

    let mut max_rel = 0.0_f64;
    for idx in 0..params.len() {
        let p = params.get(idx);
        if !p.trainable {
            continue;
        }
        let numel = p.value.numel();
        let cols = p.cols();
        let start = if p.freeze_row0 { cols } else { 0 };
        let mut coords: Vec<usize> = (start..numel).collect();
        if coords_per_param > 0 && coords.len() > coords_per_param {
            coords.shuffle(rng);
            coords.truncate(coords_per_param);
        }
        for k in coords {
            let orig = params.get(idx).value.data()[k];
            params.get_mut(idx).value.data_mut()[k] = orig + eps;
            let plus = build(params)?;
            let f_plus = plus.tape.scalar_value(plus.root);
            params.get_mut(idx).value.data_mut()[k] = orig - eps;
            let minus = build(params)?;
            let f_minus = minus.tape.scalar_value(minus.root);
            params.get_mut(idx).value.data_mut()[k] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::NonFinite("grad_check perturbed loss".to_string()));
            }
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[idx][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_param(set: &mut ParamSet, name: &str, w: f64) -> usize {
        set.add(name, Tensor::new(vec![1, 1], vec![w]).unwrap(), false).unwrap()
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut set = ParamSet::new();
        let i = scalar_param(&mut set, "w", 1.5);
        let mut opt = Adam::new(0.1);
        opt.step(&mut set).unwrap();
        assert_eq!(set.get(i).value.data()[0], 1.5);
    }

    #[test]
    fn single_step_descends_on_square() {
        let mut set = ParamSet::new();
        let i = scalar_param(&mut set, "w", 1.0);
        set.add_grad(i, &[2.0]); // d/dw w² at w=1
        let mut opt = Adam::new(0.1);
        opt.step(&mut set).unwrap();
        assert!(set.get(i).value.data()[0] < 1.0);
        assert_eq!(set.get(i).grad, vec![0.0]);
    }

    #[test]
    fn converges_to_quadratic_minimum() {
        let mut set = ParamSet::new();
        let i = scalar_param(&mut set, "w", 0.0);
        let mut opt = Adam::new(0.1);
        for _ in 0..200 {
            let w = set.get(i).value.data()[0];
            set.add_grad(i, &[2.0 * (w - 3.0)]);
            opt.step(&mut set).unwrap();
        }
        let w = set.get(i).value.data()[0];
        assert!((w - 3.0).abs() < 0.1, "w = {w}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut set = ParamSet::new();
        let i = scalar_param(&mut set, "w_bad", 0.0);
        set.add_grad(i, &[f64::NAN]);
        let mut opt = Adam::new(0.1);
        let err = opt.step(&mut set).unwrap_err().to_string();
        assert!(err.contains("w_bad"), "message: {err}");
    }

    #[test]
    fn frozen_row_stays_zero() {
        let mut set = ParamSet::new();
        let t = Tensor::new(vec![3, 2], vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let i = set.add("emb", t, true).unwrap();
        set.add_grad(i, &[9.0, 9.0, 1.0, 1.0, 1.0, 1.0]);
        let mut opt = Adam::new(0.5);
        opt.step(&mut set).unwrap();
        let v = set.get(i).value.data();
        assert_eq!(&v[..2], &[0.0, 0.0]);
        assert!(v[2] < 1.0 && v[3] < 2.0);
    }

    #[test]
    fn non_trainable_untouched() {
        let mut set = ParamSet::new();
        let i = scalar_param(&mut set, "w", 2.0);
        set.get_mut(i).trainable = false;
        set.add_grad(i, &[5.0]);
        let mut opt = Adam::new(0.5);
        opt.step(&mut set).unwrap();
        assert_eq!(set.get(i).value.data()[0], 2.0);
    }

    #[test]
    fn grad_check_sum_of_squares() {
        let mut set = ParamSet::new();
        set.add("w", Tensor::new(vec![2, 3], vec![0.3, -1.2, 0.7, 2.0, -0.4, 0.9]).unwrap(), false)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let max_rel = grad_check(&mut set, 1e-5, 0, &mut rng, |ps| {
            let mut tape = Tape::new();
            let leaves = ps.leaves(&mut tape)?;
            let root = tape.sum_squares(leaves[0])?;
            Ok(TapeBuild { tape, root, leaves })
        })
        .unwrap();
        assert!(max_rel < 1e-6, "max rel = {max_rel}");
    }

    #[test]
    fn grad_check_through_nonlinear_graph() {
        let mut set = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = crate::tensor::init_params(&[3, 3], crate::tensor::InitScheme::GlorotUniform, &mut rng);
        let x = crate::tensor::init_params(&[2, 3], crate::tensor::InitScheme::GlorotUniform, &mut rng);
        set.add("w", w, false).unwrap();
        set.add("x", x, false).unwrap();
        let max_rel = grad_check(&mut set, 1e-5, 0, &mut rng, |ps| {
            let mut tape = Tape::new();
            let leaves = ps.leaves(&mut tape)?;
            let h = tape.matmul(leaves[1], leaves[0])?;
            let a = tape.leaky_relu(h, 0.2)?;
            let s = tape.softmax_rows(a, None)?;
            let root = tape.sum_squares(s)?;
            Ok(TapeBuild { tape, root, leaves })
        })
        .unwrap();
        assert!(max_rel < 1e-4, "max rel = {max_rel}");
    }

    #[test]
    fn adam_deterministic_across_runs() {
        let run = || {
            let mut set = ParamSet::new();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let w = crate::tensor::init_params(&[4, 4], crate::tensor::InitScheme::GlorotUniform, &mut rng);
            let i = set.add("w", w, false).unwrap();
            let mut opt = Adam::new(0.01);
            for step in 0..50 {
                let snapshot: Vec<f64> = set.get(i).value.data().to_vec();
                let g: Vec<f64> = snapshot.iter().map(|x| x * (step as f64 % 3.0 + 0.5)).collect();
                set.add_grad(i, &g);
                opt.step(&mut set).unwrap();
            }
            set.get(i).value.data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
