//! Losses, backpropagation through time for MGU + readout, and the
//! central-difference gradient oracle.

use crate::error::{Error, Result};
use crate::mgu::{
    mgu_forward, readout_apply, MguParams, Model, ReadoutParams, StepCache, PARAM_NAMES,
};
use crate::tasks::{Batch, Targets};
use crate::tensor::{gemm, Matrix, Trans};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    SoftmaxXent,
}

/// Class indices laid out `steps x batch`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassTargets {
    steps: usize,
    batch: usize,
    data: Vec<usize>,
}

impl ClassTargets {
    pub fn zeros(steps: usize, batch: usize) -> Self {
        Self {
            steps,
            batch,
            data: vec![0; steps * batch],
        }
    }

    pub fn from_vec(steps: usize, batch: usize, data: Vec<usize>) -> Result<Self> {
        if data.len() != steps * batch {
            return Err(Error::arg(format!(
                "{} class indices cannot fill {steps} steps x {batch} samples",
                data.len()
            )));
        }
        Ok(Self { steps, batch, data })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn get(&self, step: usize, j: usize) -> usize {
        self.data[step * self.batch + j]
    }

    pub fn set(&mut self, step: usize, j: usize, class: usize) {
        self.data[step * self.batch + j] = class;
    }
}

/// One gradient matrix per model parameter, shape-congruent with [`Model`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub d_wf_h: Matrix,
    pub d_wf_x: Matrix,
    pub d_bf: Matrix,
    pub d_w_h: Matrix,
    pub d_w_x: Matrix,
    pub d_b: Matrix,
    pub d_v: Matrix,
    pub d_c: Matrix,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        let [wf_h, wf_x, bf, w_h, w_x, b, v, c] =
            model.params().map(|m| Matrix::zeros(m.rows(), m.cols()));
        Self {
            d_wf_h: wf_h,
            d_wf_x: wf_x,
            d_bf: bf,
            d_w_h: w_h,
            d_w_x: w_x,
            d_b: b,
            d_v: v,
            d_c: c,
        }
    }

    /// Gradients in [`PARAM_NAMES`] order.
    pub fn as_array(&self) -> [&Matrix; 8] {
        [
            &self.d_wf_h,
            &self.d_wf_x,
            &self.d_bf,
            &self.d_w_h,
            &self.d_w_x,
            &self.d_b,
            &self.d_v,
            &self.d_c,
        ]
    }

    pub fn as_array_mut(&mut self) -> [&mut Matrix; 8] {
        [
            &mut self.d_wf_h,
            &mut self.d_wf_x,
            &mut self.d_bf,
            &mut self.d_w_h,
            &mut self.d_w_x,
            &mut self.d_b,
            &mut self.d_v,
            &mut self.d_c,
        ]
    }

    pub fn norm(&self) -> f64 {
        self.as_array()
            .iter()
            .map(|m| m.sum_sq())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.as_array().iter().all(|m| m.all_finite())
    }

    pub fn scale_inplace(&mut self, s: f64) {
        for m in self.as_array_mut() {
            m.map_inplace(|x| x * s);
        }
    }

    /// Checks that every gradient has the shape of the matching parameter.
    pub fn check_congruent(&self, model: &Model) -> Result<()> {
        for ((g, p), name) in self.as_array().iter().zip(model.params()).zip(PARAM_NAMES) {
            if g.shape() != p.shape() {
                return Err(Error::Shape {
                    op: name,
                    left: p.shape(),
                    right: g.shape(),
                });
            }
        }
        Ok(())
    }
}

/// Mean squared error over all `O x B` entries, with its gradient.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    let diff = pred.sub(target)?;
    let n = (diff.rows() * diff.cols()) as f64;
    let loss = diff.sum_sq() / n;
    Ok((loss, diff.scale(2.0 / n)))
}

/// Cross-entropy of column `j` of `z` against class `y`, with the max logit
/// and the shifted softmax denominator.
fn xent_term(z: &Matrix, j: usize, y: usize) -> (f64, f64, f64) {
    let classes = z.rows();
    let max = (0..classes)
        .map(|k| z.get(k, j))
        .fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = (0..classes).map(|k| (z.get(k, j) - max).exp()).sum();
    (denom.ln() - (z.get(y, j) - max), max, denom)
}

/// Softmax cross-entropy averaged over all `T x B` positions.
pub fn softmax_xent_loss(logits: &[Matrix], targets: &ClassTargets) -> Result<(f64, Vec<Matrix>)> {
    if logits.len() != targets.steps() {
        return Err(Error::arg(format!(
            "{} logit steps but {} target steps",
            logits.len(),
            targets.steps()
        )));
    }
    let batch = targets.batch();
    let n = (logits.len() * batch) as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (t, z) in logits.iter().enumerate() {
        if z.cols() != batch {
            return Err(Error::shape(
                "softmax_xent_loss",
                (z.rows(), batch),
                z.shape(),
            ));
        }
        let classes = z.rows();
        let mut g = Matrix::zeros(classes, batch);
        for j in 0..batch {
            let y = targets.get(t, j);
            if y >= classes {
                return Err(Error::arg(format!(
                    "class index {y} out of range for {classes} classes (step {t}, sample {j})"
                )));
            }
            let (term, max, denom) = xent_term(z, j, y);
            total += term;
            for k in 0..classes {
                let p = (z.get(k, j) - max).exp() / denom;
                let onehot = if k == y { 1.0 } else { 0.0 };
                g.set(k, j, (p - onehot) / n);
            }
        }
        grads.push(g);
    }
    Ok((total / n, grads))
}

/// Loss gradient flowing into the readout.
#[derive(Clone, Debug)]
pub enum Upstream {
    /// Only the final step is supervised.
    Final(Matrix),
    /// Every step is supervised.
    PerStep(Vec<Matrix>),
}

/// Exact reverse-mode gradients of the loss through the unrolled cell and
/// the readout. `h0` must be the initial state used in the forward pass.
pub fn mgu_backward(
    p: &MguParams,
    r: &ReadoutParams,
    caches: &[StepCache],
    d_outputs: &Upstream,
    h0: &Matrix,
) -> Result<Gradients> {
    let steps = caches.len();
    if steps == 0 {
        return Err(Error::arg("mgu_backward needs at least one cached step"));
    }
    if let Upstream::PerStep(d) = d_outputs {
        if d.len() != steps {
            return Err(Error::arg(format!(
                "{} upstream gradients for {steps} cached steps",
                d.len()
            )));
        }
    }
    let h = p.hidden_size();
    let batch = caches[0].h_t.cols();
    if h0.shape() != (h, batch) {
        return Err(Error::shape("mgu_backward h0", (h, batch), h0.shape()));
    }

    let mut g = Gradients {
        d_wf_h: Matrix::zeros(h, h),
        d_wf_x: Matrix::zeros(h, p.input_size()),
        d_bf: Matrix::zeros(h, 1),
        d_w_h: Matrix::zeros(h, h),
        d_w_x: Matrix::zeros(h, p.input_size()),
        d_b: Matrix::zeros(h, 1),
        d_v: Matrix::zeros(r.output_size(), h),
        d_c: Matrix::zeros(r.output_size(), 1),
    };

    let mut dh = Matrix::zeros(h, batch);
    let mut d_cand = Matrix::zeros(h, batch);
    let mut d_gate = Matrix::zeros(h, batch);
    let mut d_gated = Matrix::zeros(h, batch);
    let mut gated = Matrix::zeros(h, batch);
    let mut d_f = Matrix::zeros(h, batch);
    let mut dh_prev = Matrix::zeros(h, batch);

    for t in (0..steps).rev() {
        let cache = &caches[t];
        let h_prev = if t == 0 { h0 } else { &cache.h_prev };

        let d_out = match d_outputs {
            Upstream::PerStep(d) => Some(&d[t]),
            Upstream::Final(d) if t == steps - 1 => Some(d),
            Upstream::Final(_) => None,
        };
        if let Some(d_out) = d_out {
            if d_out.shape() != (r.output_size(), batch) {
                return Err(Error::shape(
                    "mgu_backward upstream",
                    (r.output_size(), batch),
                    d_out.shape(),
                ));
            }
            gemm(
                1.0,
                d_out,
                Trans::No,
                &cache.h_t,
                Trans::Yes,
                1.0,
                &mut g.d_v,
            )?;
            g.d_c.axpy(1.0, &d_out.row_sums())?;
            gemm(1.0, &r.v, Trans::Yes, d_out, Trans::No, 1.0, &mut dh)?;
        }

        // h_t = (1 - f) h_prev + f h~ ;  h~ = tanh(W_h (f h_prev) + W_x x + b)
        for (i, &dhv) in dh.data().iter().enumerate() {
            let f = cache.f_t.data()[i];
            let ht = cache.h_tilde.data()[i];
            let hp = h_prev.data()[i];
            d_cand.data_mut()[i] = dhv * f * (1.0 - ht * ht);
            d_f.data_mut()[i] = dhv * (ht - hp);
            dh_prev.data_mut()[i] = dhv * (1.0 - f);
            gated.data_mut()[i] = f * hp;
        }
        gemm(
            1.0,
            &d_cand,
            Trans::No,
            &gated,
            Trans::Yes,
            1.0,
            &mut g.d_w_h,
        )?;
        gemm(
            1.0,
            &d_cand,
            Trans::No,
            &cache.x_t,
            Trans::Yes,
            1.0,
            &mut g.d_w_x,
        )?;
        g.d_b.axpy(1.0, &d_cand.row_sums())?;
        gemm(
            1.0,
            &p.w_h,
            Trans::Yes,
            &d_cand,
            Trans::No,
            0.0,
            &mut d_gated,
        )?;

        // f enters through the state blend, the candidate blend and the gated
        // previous state; h_prev through the blend, the gated product and the gate.
        for i in 0..d_gate.data().len() {
            let f = cache.f_t.data()[i];
            let hp = h_prev.data()[i];
            let dg = d_gated.data()[i];
            let df = d_f.data()[i] + dg * hp;
            dh_prev.data_mut()[i] += dg * f;
            d_gate.data_mut()[i] = df * f * (1.0 - f);
        }
        gemm(
            1.0,
            &d_gate,
            Trans::No,
            h_prev,
            Trans::Yes,
            1.0,
            &mut g.d_wf_h,
        )?;
        gemm(
            1.0,
            &d_gate,
            Trans::No,
            &cache.x_t,
            Trans::Yes,
            1.0,
            &mut g.d_wf_x,
        )?;
        g.d_bf.axpy(1.0, &d_gate.row_sums())?;
        gemm(
            1.0,
            &p.wf_h,
            Trans::Yes,
            &d_gate,
            Trans::No,
            1.0,
            &mut dh_prev,
        )?;

        std::mem::swap(&mut dh, &mut dh_prev);
    }
    Ok(g)
}

struct ForwardPass {
    loss: f64,
    caches: Vec<StepCache>,
    upstream: Upstream,
    h0: Matrix,
}

fn forward_and_loss(model: &Model, batch: &Batch) -> Result<ForwardPass> {
    let h0 = Matrix::zeros(model.hidden_size(), batch.batch_size());
    let (hs, caches) = mgu_forward(&model.cell, &batch.xs, &h0)?;
    let (loss, upstream) = match &batch.targets {
        Targets::Regression(y) => {
            let last = hs.last().expect("forward returns one state per step");
            let pred = readout_apply(&model.readout, last)?;
            let (loss, d) = mse_loss(&pred, y)?;
            (loss, Upstream::Final(d))
        }
        Targets::Classes(y) => {
            let logits = hs
                .iter()
                .map(|h| readout_apply(&model.readout, h))
                .collect::<Result<Vec<_>>>()?;
            let (loss, d) = softmax_xent_loss(&logits, y)?;
            (loss, Upstream::PerStep(d))
        }
    };
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss}")));
    }
    Ok(ForwardPass {
        loss,
        caches,
        upstream,
        h0,
    })
}

/// Forward pass and loss, no gradients.
pub fn batch_loss(model: &Model, batch: &Batch) -> Result<f64> {
    forward_and_loss(model, batch).map(|f| f.loss)
}

/// The individual loss terms whose mean is the batch loss: one squared error
/// per output entry (adding) or one cross-entropy per position (copy).
pub fn loss_terms(model: &Model, batch: &Batch) -> Result<Vec<f64>> {
    let h0 = Matrix::zeros(model.hidden_size(), batch.batch_size());
    let (hs, _) = mgu_forward(&model.cell, &batch.xs, &h0)?;
    let terms = match &batch.targets {
        Targets::Regression(y) => {
            let last = hs.last().expect("forward returns one state per step");
            let pred = readout_apply(&model.readout, last)?;
            pred.sub(y)?.data().iter().map(|d| d * d).collect()
        }
        Targets::Classes(y) => {
            let mut terms = Vec::with_capacity(hs.len() * batch.batch_size());
            for (t, h) in hs.iter().enumerate() {
                let z = readout_apply(&model.readout, h)?;
                for j in 0..z.cols() {
                    terms.push(xent_term(&z, j, y.get(t, j)).0);
                }
            }
            terms
        }
    };
    if let Some(bad) = terms.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("loss term is {bad}")));
    }
    Ok(terms)
}

/// Loss and exact gradients for one batch, starting from a zero state.
pub fn loss_and_gradients(model: &Model, batch: &Batch) -> Result<(f64, Gradients)> {
    let fwd = forward_and_loss(model, batch)?;
    let grads = mgu_backward(
        &model.cell,
        &model.readout,
        &fwd.caches,
        &fwd.upstream,
        &fwd.h0,
    )?;
    Ok((fwd.loss, grads))
}

/// Largest relative disagreement between backpropagated gradients and
/// central finite differences, over every scalar parameter.
pub fn grad_check(model: &Model, batch: &Batch, eps: f64) -> Result<f64> {
    let (_, analytic) = loss_and_gradients(model, batch)?;
    grad_check_against(model, batch, eps, &analytic)
}

/// Like [`grad_check`], but compares the oracle against caller-supplied
/// gradients.
///
/// `L(θ+eps) - L(θ-eps)` is evaluated as the mean of per-term differences.
/// This is the same quantity, but it skips rounding each loss to a double
/// first. That rounding alone is a few ulps of `L`, which swamps gradients
/// below about 1e-6 once `eps` is 1e-6.
pub fn grad_check_against(
    model: &Model,
    batch: &Batch,
    eps: f64,
    analytic: &Gradients,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::arg(format!("eps must be positive, got {eps}")));
    }
    analytic.check_congruent(model)?;
    let mut work = model.clone();
    let mut worst: f64 = 0.0;
    for (pi, grad) in analytic.as_array().into_iter().enumerate() {
        for k in 0..grad.data().len() {
            let orig = work.params()[pi].data()[k];
            work.params_mut()[pi].data_mut()[k] = orig + eps;
            let plus = loss_terms(&work, batch)?;
            work.params_mut()[pi].data_mut()[k] = orig - eps;
            let minus = loss_terms(&work, batch)?;
            work.params_mut()[pi].data_mut()[k] = orig;
            let diff: f64 = plus.iter().zip(&minus).map(|(p, m)| p - m).sum();
            let numeric = diff / plus.len() as f64 / (2.0 * eps);
            let a = grad.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mgu::{init_model, InitKind, InitSpec};
    use crate::tasks::{gen_adding, gen_copy};
    use crate::tensor::RngState;
    use proptest::prelude::*;

    fn small_model(d: usize, o: usize, kind: InitKind, seed: u64) -> Model {
        let spec = InitSpec::new(kind, 14).unwrap();
        init_model(8, d, o, spec, &mut RngState::new(seed)).unwrap()
    }

    /// Small weights keep the instance well conditioned; bigger random biases
    /// exercise the gate nonlinearity.
    fn perturbed(mut model: Model, seed: u64) -> Model {
        let mut rng = RngState::with_stream(seed, 7);
        for p in model.params_mut() {
            let noise = rng.uniform(-0.3, 0.3, p.rows(), p.cols()).unwrap();
            p.axpy(1.0, &noise).unwrap();
        }
        model
    }

    #[test]
    fn mse_examples() {
        let a = Matrix::from_rows(&[[0.5, -1.0]]).unwrap();
        let (loss, d) = mse_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(d, Matrix::zeros(1, 2));
        let (loss, _) = mse_loss(&a.map(|x| x + 1.0), &a).unwrap();
        assert_eq!(loss, 1.0);
        assert!(mse_loss(&a, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn constant_guess_against_adding_targets() {
        let b = gen_adding(10, 100_000, &mut RngState::new(3)).unwrap();
        let Targets::Regression(y) = &b.targets else {
            unreachable!()
        };
        let (loss, _) = mse_loss(&Matrix::filled(1, y.cols(), 1.0), y).unwrap();
        assert!((loss - 1.0 / 6.0).abs() < 0.005, "loss {loss}");
    }

    #[test]
    fn xent_examples() {
        let targets = ClassTargets::from_vec(2, 3, vec![0, 4, 9, 1, 1, 2]).unwrap();
        let logits = vec![Matrix::zeros(10, 3); 2];
        let (loss, grads) = softmax_xent_loss(&logits, &targets).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        for g in &grads {
            for j in 0..3 {
                assert!(g.column(j).iter().sum::<f64>().abs() < 1e-12);
            }
        }

        let mut sharp = Matrix::zeros(10, 1);
        sharp.set(3, 0, 1000.0);
        let t = ClassTargets::from_vec(1, 1, vec![3]).unwrap();
        let (loss, _) = softmax_xent_loss(&[sharp], &t).unwrap();
        assert!(loss < 1e-9);

        let bad = ClassTargets::from_vec(1, 1, vec![10]).unwrap();
        assert!(softmax_xent_loss(&[Matrix::zeros(10, 1)], &bad).is_err());
    }

    #[test]
    fn memoryless_copy_predictor_hits_the_baseline() {
        // Dummy class predicted with certainty where it is the target, a flat
        // distribution over symbols 1..=8 at the recall steps.
        let b = gen_copy(50, 16, &mut RngState::new(4)).unwrap();
        let Targets::Classes(y) = &b.targets else {
            unreachable!()
        };
        let logits: Vec<Matrix> = (0..b.steps())
            .map(|t| {
                let mut z = Matrix::filled(10, 16, -1000.0);
                for j in 0..16 {
                    if t >= 60 {
                        (1..=8).for_each(|k| z.set(k, j, 0.0));
                    } else {
                        z.set(0, j, 0.0);
                    }
                }
                z
            })
            .collect();
        let (loss, _) = softmax_xent_loss(&logits, y).unwrap();
        assert!((loss - 0.2971).abs() < 1e-4, "loss {loss}");
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let model = small_model(2, 1, InitKind::ChronoPositive, 1);
        let b = gen_adding(12, 4, &mut RngState::new(2)).unwrap();
        let h0 = Matrix::zeros(8, 4);
        let (_, caches) = mgu_forward(&model.cell, &b.xs, &h0).unwrap();
        let g = mgu_backward(
            &model.cell,
            &model.readout,
            &caches,
            &Upstream::Final(Matrix::zeros(1, 4)),
            &h0,
        )
        .unwrap();
        assert_eq!(g, Gradients::zeros_like(&model));
        let per = Upstream::PerStep(vec![Matrix::zeros(1, 4); 12]);
        let g = mgu_backward(&model.cell, &model.readout, &caches, &per, &h0).unwrap();
        assert_eq!(g, Gradients::zeros_like(&model));
        let short = Upstream::PerStep(vec![Matrix::zeros(1, 4); 11]);
        assert!(mgu_backward(&model.cell, &model.readout, &caches, &short, &h0).is_err());
    }

    #[test]
    fn trivial_minimum_has_zero_gradient() {
        let zero = |r, c| Matrix::zeros(r, c);
        let model = Model {
            cell: MguParams {
                wf_h: zero(1, 1),
                wf_x: zero(1, 1),
                bf: zero(1, 1),
                w_h: zero(1, 1),
                w_x: zero(1, 1),
                b: zero(1, 1),
            },
            readout: ReadoutParams {
                v: zero(1, 1),
                c: zero(1, 1),
            },
        };
        let batch = Batch {
            xs: vec![zero(1, 1)],
            targets: Targets::Regression(zero(1, 1)),
            meta: crate::tasks::BatchMeta {
                task: crate::tasks::Task::Adding,
                size: 1,
                seed: 0,
            },
        };
        let (loss, g) = loss_and_gradients(&model, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g, Gradients::zeros_like(&model));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..4 {
            for kind in [InitKind::ChronoPositive, InitKind::ConstantOne] {
                let model = perturbed(small_model(2, 3, kind, seed), seed);
                // Adding-style inputs but three regression outputs.
                let mut b = gen_adding(12, 4, &mut RngState::new(seed + 100)).unwrap();
                b.targets =
                    Targets::Regression(RngState::new(seed).uniform(-1.0, 1.0, 3, 4).unwrap());
                let err = grad_check(&model, &b, 1e-5).unwrap();
                assert!(err < 1e-4, "mse seed {seed} {kind}: {err}");

                // Copy batches leave most input columns blank, so some input
                // weights get gradients near 1e-8 where central differences
                // are pure roundoff. Random one-hot inputs keep them resolvable.
                let model = perturbed(small_model(10, 10, kind, seed), seed);
                let mut b = gen_copy(2, 4, &mut RngState::new(seed + 200)).unwrap();
                let mut rng = RngState::new(seed + 300);
                for x in b.xs.iter_mut() {
                    x.fill(0.0);
                    for j in 0..4 {
                        x.set(rng.below(10), j, 1.0);
                    }
                }
                let err = grad_check(&model, &b, 1e-5).unwrap();
                assert!(err < 1e-4, "xent seed {seed} {kind}: {err}");
            }
        }
    }

    #[test]
    fn loss_terms_average_to_the_batch_loss() {
        let model = perturbed(small_model(2, 1, InitKind::ChronoPositive, 3), 3);
        let b = gen_adding(12, 5, &mut RngState::new(4)).unwrap();
        let terms = loss_terms(&model, &b).unwrap();
        assert_eq!(terms.len(), 5);
        let mean = terms.iter().sum::<f64>() / 5.0;
        assert!((mean - batch_loss(&model, &b).unwrap()).abs() < 1e-15);

        let model = perturbed(small_model(10, 10, InitKind::ConstantOne, 3), 3);
        let b = gen_copy(2, 3, &mut RngState::new(4)).unwrap();
        let terms = loss_terms(&model, &b).unwrap();
        assert_eq!(terms.len(), 22 * 3);
        let mean = terms.iter().sum::<f64>() / terms.len() as f64;
        assert!((mean - batch_loss(&model, &b).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn grad_check_is_deterministic_and_step_robust() {
        let model = perturbed(small_model(2, 1, InitKind::ChronoPositive, 5), 5);
        let b = gen_adding(12, 4, &mut RngState::new(6)).unwrap();
        let a = grad_check(&model, &b, 1e-5).unwrap();
        assert_eq!(a, grad_check(&model, &b, 1e-5).unwrap());
        assert!(a < 1e-4);
        assert!(grad_check(&model, &b, 1e-6).unwrap() < 1e-4);
        assert!(grad_check(&model, &b, 0.0).is_err());
    }

    #[test]
    fn corrupted_gradients_are_caught() {
        let model = perturbed(small_model(2, 1, InitKind::ConstantOne, 5), 5);
        let b = gen_adding(12, 4, &mut RngState::new(6)).unwrap();
        let (_, mut g) = loss_and_gradients(&model, &b).unwrap();
        g.d_w_h.map_inplace(|x| x * 1.01);
        assert!(grad_check_against(&model, &b, 1e-5, &g).unwrap() > 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn directional_derivative_matches(seed in any::<u64>()) {
            let model = perturbed(small_model(10, 10, InitKind::ChronoPositive, seed), seed);
            let b = gen_copy(3, 3, &mut RngState::new(seed)).unwrap();
            let (_, g) = loss_and_gradients(&model, &b).unwrap();

            let mut rng = RngState::with_stream(seed, 9);
            let mut dir: Vec<Matrix> = model
                .params()
                .iter()
                .map(|p| rng.uniform(-1.0, 1.0, p.rows(), p.cols()).unwrap())
                .collect();
            let norm = dir.iter().map(Matrix::sum_sq).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|d| d.map_inplace(|x| x / norm));

            let eps = 1e-5;
            let shifted = |s: f64| {
                let mut m = model.clone();
                for (p, d) in m.params_mut().into_iter().zip(&dir) {
                    p.axpy(s * eps, d).unwrap();
                }
                batch_loss(&m, &b).unwrap()
            };
            let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
            let analytic: f64 = g
                .as_array()
                .iter()
                .zip(&dir)
                .map(|(gm, d)| gm.data().iter().zip(d.data()).map(|(x, y)| x * y).sum::<f64>())
                .sum();
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            prop_assert!(rel < 1e-4, "analytic {} numeric {}", analytic, numeric);
        }

        #[test]
        fn mse_gradient_inner_product(vals in prop::collection::vec(-5f64..5.0, 2..20)) {
            let n = vals.len() / 2;
            let pred = Matrix::from_vec(1, n, vals[..n].to_vec()).unwrap();
            let target = Matrix::from_vec(1, n, vals[n..2 * n].to_vec()).unwrap();
            let (loss, d) = mse_loss(&pred, &target).unwrap();
            let diff = pred.sub(&target).unwrap();
            let inner: f64 = d.data().iter().zip(diff.data()).map(|(a, b)| a * b).sum();
            prop_assert!((inner - 2.0 * loss).abs() < 1e-12 * (1.0 + loss));
        }

        #[test]
        fn softmax_gradient_columns_sum_to_zero(
            logits in prop::collection::vec(-50f64..50.0, 30),
            classes in prop::collection::vec(0usize..10, 3),
        ) {
            let z = Matrix::from_vec(10, 3, logits).unwrap();
            let t = ClassTargets::from_vec(1, 3, classes).unwrap();
            let (loss, g) = softmax_xent_loss(&[z], &t).unwrap();
            prop_assert!(loss.is_finite() && loss >= 0.0);
            for j in 0..3 {
                prop_assert!(g[0].column(j).iter().sum::<f64>().abs() < 1e-12);
            }
        }
    }
}
