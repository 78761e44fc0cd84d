//! The Minimal Gated Unit cell, its readout layer and gate-bias initializers.
//!
//! One gate `f` drives both the candidate and the state update:
//!
//! ```text
//! f_t  = sigmoid(Wf_h h_{t-1} + Wf_x x_t + b_f)
//! h~_t = tanh(W_h (f_t * h_{t-1}) + W_x x_t + b)
//! h_t  = (1 - f_t) * h_{t-1} + f_t * h~_t
//! ```
//!
//! States are `hidden x batch`, inputs `input x batch`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{gemm, sigmoid_scalar, tanh_scalar, Matrix, RngState, Trans};

/// Names of the eight learnable matrices, in the canonical order used by
/// [`Model::params`], gradients, optimizer state and checkpoints.
pub const PARAM_NAMES: [&str; 8] = ["wf_h", "wf_x", "bf", "w_h", "w_x", "b", "v", "c"];

#[derive(Clone, Debug, PartialEq)]
pub struct MguParams {
    /// Gate weights on the previous state, `H x H`.
    pub wf_h: Matrix,
    /// Gate weights on the input, `H x D`.
    pub wf_x: Matrix,
    /// Gate bias, `H x 1`. The initialization under study.
    pub bf: Matrix,
    /// Candidate weights on the gated previous state, `H x H`.
    pub w_h: Matrix,
    /// Candidate weights on the input, `H x D`.
    pub w_x: Matrix,
    /// Candidate bias, `H x 1`.
    pub b: Matrix,
}

/// Affine map from the hidden state to task outputs: `V h + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutParams {
    pub v: Matrix,
    pub c: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cell: MguParams,
    pub readout: ReadoutParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InitKind {
    /// `b_f ~ ln U[1, t_max - 1]`, the chrono initializer as written.
    ChronoPositive,
    /// `b_f ~ -ln U[1, t_max - 1]`, pushing gates toward keeping the state.
    ChronoNegative,
    /// Every gate-bias entry set to exactly 1.
    ConstantOne,
}

impl InitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InitKind::ChronoPositive => "chrono",
            InitKind::ChronoNegative => "chrono-neg",
            InitKind::ConstantOne => "const",
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chrono" => Ok(InitKind::ChronoPositive),
            "chrono-neg" => Ok(InitKind::ChronoNegative),
            "const" => Ok(InitKind::ConstantOne),
            other => Err(Error::arg(format!(
                "unknown init `{other}` (expected chrono, chrono-neg or const)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InitSpec {
    pub kind: InitKind,
    /// Longest dependency range the chrono initializer should cover.
    pub t_max: usize,
}

impl InitSpec {
    pub fn new(kind: InitKind, t_max: usize) -> Result<Self> {
        let spec = Self { kind, t_max };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != InitKind::ConstantOne && self.t_max < 2 {
            return Err(Error::arg(format!(
                "chrono initialization needs t_max >= 2, got {}",
                self.t_max
            )));
        }
        Ok(())
    }

    /// Draws an `h x 1` gate bias.
    pub fn sample_gate_bias(&self, h: usize, rng: &mut RngState) -> Result<Matrix> {
        self.validate()?;
        let upper = (self.t_max as f64) - 1.0;
        let sign = match self.kind {
            InitKind::ConstantOne => return Ok(Matrix::filled(h, 1, 1.0)),
            InitKind::ChronoPositive => 1.0,
            InitKind::ChronoNegative => -1.0,
        };
        // U[1, 1] is a point mass; ln 1 = 0 without touching the generator.
        if upper <= 1.0 {
            return Ok(Matrix::zeros(h, 1));
        }
        let mut bias = rng.uniform(1.0, upper, h, 1)?;
        bias.map_inplace(|u| sign * u.ln());
        Ok(bias)
    }
}

/// Intermediates of one timestep, kept for backpropagation through time.
#[derive(Clone, Debug)]
pub struct StepCache {
    pub x_t: Matrix,
    pub h_prev: Matrix,
    pub f_t: Matrix,
    pub h_tilde: Matrix,
    pub h_t: Matrix,
}

impl MguParams {
    pub fn hidden_size(&self) -> usize {
        self.wf_h.rows()
    }

    pub fn input_size(&self) -> usize {
        self.wf_x.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_size();
        let d = self.input_size();
        let expect = [
            (&self.wf_h, (h, h)),
            (&self.wf_x, (h, d)),
            (&self.bf, (h, 1)),
            (&self.w_h, (h, h)),
            (&self.w_x, (h, d)),
            (&self.b, (h, 1)),
        ];
        for (m, want) in expect {
            if m.shape() != want {
                return Err(Error::shape("mgu params", want, m.shape()));
            }
        }
        Ok(())
    }
}

impl ReadoutParams {
    pub fn output_size(&self) -> usize {
        self.v.rows()
    }

    pub fn validate(&self, hidden: usize) -> Result<()> {
        let o = self.output_size();
        if self.v.shape() != (o, hidden) {
            return Err(Error::shape("readout v", (o, hidden), self.v.shape()));
        }
        if self.c.shape() != (o, 1) {
            return Err(Error::shape("readout c", (o, 1), self.c.shape()));
        }
        Ok(())
    }
}

impl Model {
    pub fn hidden_size(&self) -> usize {
        self.cell.hidden_size()
    }

    pub fn input_size(&self) -> usize {
        self.cell.input_size()
    }

    pub fn output_size(&self) -> usize {
        self.readout.output_size()
    }

    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        self.readout.validate(self.hidden_size())
    }

    /// All parameters in [`PARAM_NAMES`] order.
    pub fn params(&self) -> [&Matrix; 8] {
        let (c, r) = (&self.cell, &self.readout);
        [&c.wf_h, &c.wf_x, &c.bf, &c.w_h, &c.w_x, &c.b, &r.v, &r.c]
    }

    pub fn params_mut(&mut self) -> [&mut Matrix; 8] {
        let (c, r) = (&mut self.cell, &mut self.readout);
        [
            &mut c.wf_h,
            &mut c.wf_x,
            &mut c.bf,
            &mut c.w_h,
            &mut c.w_x,
            &mut c.b,
            &mut r.v,
            &mut r.c,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|m| m.rows() * m.cols()).sum()
    }
}

fn scaled_uniform(rng: &mut RngState, rows: usize, cols: usize) -> Result<Matrix> {
    let bound = 1.0 / (cols as f64).sqrt();
    rng.uniform(-bound, bound, rows, cols)
}

/// Builds a fresh model with `h` hidden units, `d` inputs and `o` outputs.
///
/// Weights are uniform on `±1/sqrt(fan_in)`; `b` and `c` start at zero. All
/// weights are drawn before the gate bias, so two specs sharing an `rng`
/// seed produce identical weights and differ only in `bf`.
pub fn init_model(
    h: usize,
    d: usize,
    o: usize,
    spec: InitSpec,
    rng: &mut RngState,
) -> Result<Model> {
    if h == 0 || d == 0 || o == 0 {
        return Err(Error::arg(format!(
            "model dimensions must be positive, got h={h} d={d} o={o}"
        )));
    }
    spec.validate()?;
    let wf_h = scaled_uniform(rng, h, h)?;
    let wf_x = scaled_uniform(rng, h, d)?;
    let w_h = scaled_uniform(rng, h, h)?;
    let w_x = scaled_uniform(rng, h, d)?;
    let v = scaled_uniform(rng, o, h)?;
    let bf = spec.sample_gate_bias(h, rng)?;
    Ok(Model {
        cell: MguParams {
            wf_h,
            wf_x,
            bf,
            w_h,
            w_x,
            b: Matrix::zeros(h, 1),
        },
        readout: ReadoutParams {
            v,
            c: Matrix::zeros(o, 1),
        },
    })
}

/// `(1 - f) * h_prev + f * h_tilde`, entrywise.
pub fn combine_state(h_prev: &Matrix, f: &Matrix, h_tilde: &Matrix) -> Result<Matrix> {
    if h_prev.shape() != f.shape() || f.shape() != h_tilde.shape() {
        return Err(Error::shape("combine_state", h_prev.shape(), f.shape()));
    }
    let data = h_prev
        .data()
        .iter()
        .zip(f.data())
        .zip(h_tilde.data())
        .map(|((&hp, &g), &ht)| (1.0 - g) * hp + g * ht)
        .collect();
    Matrix::from_vec(h_prev.rows(), h_prev.cols(), data)
}

/// One MGU step over a batch.
pub fn mgu_step(p: &MguParams, h_prev: &Matrix, x_t: &Matrix) -> Result<(Matrix, StepCache)> {
    let h = p.hidden_size();
    let batch = h_prev.cols();
    if h_prev.rows() != h {
        return Err(Error::shape("mgu_step h_prev", (h, batch), h_prev.shape()));
    }
    if x_t.shape() != (p.input_size(), batch) {
        return Err(Error::shape(
            "mgu_step x_t",
            (p.input_size(), batch),
            x_t.shape(),
        ));
    }

    let mut f_t = Matrix::zeros(h, batch);
    f_t.add_column(&p.bf)?;
    gemm(1.0, &p.wf_h, Trans::No, h_prev, Trans::No, 1.0, &mut f_t)?;
    gemm(1.0, &p.wf_x, Trans::No, x_t, Trans::No, 1.0, &mut f_t)?;
    f_t.map_inplace(sigmoid_scalar);

    let gated = f_t.mul(h_prev)?;
    let mut h_tilde = Matrix::zeros(h, batch);
    h_tilde.add_column(&p.b)?;
    gemm(1.0, &p.w_h, Trans::No, &gated, Trans::No, 1.0, &mut h_tilde)?;
    gemm(1.0, &p.w_x, Trans::No, x_t, Trans::No, 1.0, &mut h_tilde)?;
    h_tilde.map_inplace(tanh_scalar);

    let h_t = combine_state(h_prev, &f_t, &h_tilde)?;
    let cache = StepCache {
        x_t: x_t.clone(),
        h_prev: h_prev.clone(),
        f_t,
        h_tilde,
        h_t: h_t.clone(),
    };
    Ok((h_t, cache))
}

/// Unrolls [`mgu_step`] over `xs`, starting from `h0`.
pub fn mgu_forward(
    p: &MguParams,
    xs: &[Matrix],
    h0: &Matrix,
) -> Result<(Vec<Matrix>, Vec<StepCache>)> {
    if xs.is_empty() {
        return Err(Error::arg("mgu_forward needs at least one timestep"));
    }
    p.validate()?;
    let mut hs = Vec::with_capacity(xs.len());
    let mut caches = Vec::with_capacity(xs.len());
    let mut h = h0.clone();
    for x in xs {
        let (next, cache) = mgu_step(p, &h, x)?;
        hs.push(next.clone());
        caches.push(cache);
        h = next;
    }
    Ok((hs, caches))
}

pub fn readout_apply(r: &ReadoutParams, h: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(r.output_size(), h.cols());
    out.add_column(&r.c)?;
    gemm(1.0, &r.v, Trans::No, h, Trans::No, 1.0, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zero_cell(h: usize, d: usize) -> MguParams {
        MguParams {
            wf_h: Matrix::zeros(h, h),
            wf_x: Matrix::zeros(h, d),
            bf: Matrix::zeros(h, 1),
            w_h: Matrix::zeros(h, h),
            w_x: Matrix::zeros(h, d),
            b: Matrix::zeros(h, 1),
        }
    }

    fn col(v: &[f64]) -> Matrix {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn zero_params_halve_the_state() {
        let p = zero_cell(1, 1);
        let (h, cache) = mgu_step(&p, &col(&[0.8]), &col(&[0.0])).unwrap();
        assert_eq!(cache.f_t.get(0, 0), 0.5);
        assert_eq!(cache.h_tilde.get(0, 0), 0.0);
        assert!((h.get(0, 0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn saturated_gates() {
        let mut p = zero_cell(3, 2);
        let h_prev = col(&[0.9, -0.3, 0.5]);
        let x = col(&[0.0, 0.0]);

        p.bf = Matrix::filled(3, 1, 100.0);
        let (h, cache) = mgu_step(&p, &h_prev, &x).unwrap();
        assert!(cache.f_t.data().iter().all(|&f| (1.0 - f) < 1e-12));
        assert!(h.max_abs() < 1e-12);

        p.bf = Matrix::filled(3, 1, -100.0);
        p.w_x = Matrix::filled(3, 2, 0.7);
        let (h, _) = mgu_step(&p, &h_prev, &col(&[1.0, -2.0])).unwrap();
        for (a, b) in h.data().iter().zip(h_prev.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_gate_combination_is_exact() {
        let h_prev = col(&[0.123, -4.5, 7.0]);
        let h_tilde = col(&[0.9, 0.1, -0.99]);
        let out = combine_state(&h_prev, &Matrix::zeros(3, 1), &h_tilde).unwrap();
        assert_eq!(out, h_prev);
    }

    #[test]
    fn forward_halves_each_step() {
        let p = zero_cell(1, 1);
        let xs = vec![Matrix::zeros(1, 1); 10];
        let (hs, caches) = mgu_forward(&p, &xs, &col(&[1.0])).unwrap();
        assert_eq!(hs.len(), 10);
        assert_eq!(caches.len(), 10);
        for (t, h) in hs.iter().enumerate() {
            assert_eq!(h.get(0, 0), 0.5f64.powi(t as i32 + 1));
        }
    }

    #[test]
    fn forward_of_one_step_equals_step() {
        let mut rng = RngState::new(5);
        let spec = InitSpec::new(InitKind::ChronoPositive, 20).unwrap();
        let model = init_model(4, 3, 2, spec, &mut rng).unwrap();
        let x = rng.uniform(-1.0, 1.0, 3, 5).unwrap();
        let h0 = rng.uniform(-1.0, 1.0, 4, 5).unwrap();
        let (hs, _) = mgu_forward(&model.cell, std::slice::from_ref(&x), &h0).unwrap();
        let (h, _) = mgu_step(&model.cell, &h0, &x).unwrap();
        assert_eq!(hs[0], h);
    }

    #[test]
    fn caches_replay_the_forward_pass() {
        let mut rng = RngState::new(9);
        let spec = InitSpec::new(InitKind::ConstantOne, 2).unwrap();
        let model = init_model(6, 2, 1, spec, &mut rng).unwrap();
        let xs: Vec<_> = (0..7)
            .map(|_| rng.uniform(0.0, 1.0, 2, 3).unwrap())
            .collect();
        let (hs, caches) = mgu_forward(&model.cell, &xs, &Matrix::zeros(6, 3)).unwrap();
        for (h, c) in hs.iter().zip(&caches) {
            assert_eq!(&combine_state(&c.h_prev, &c.f_t, &c.h_tilde).unwrap(), h);
            assert_eq!(&c.h_t, h);
        }
        for w in caches.windows(2) {
            assert_eq!(w[0].h_t, w[1].h_prev);
        }
    }

    #[test]
    fn forward_rejects_empty_and_misshapen_input() {
        let p = zero_cell(2, 2);
        assert!(matches!(
            mgu_forward(&p, &[], &Matrix::zeros(2, 1)),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            mgu_step(&p, &Matrix::zeros(2, 1), &Matrix::zeros(3, 1)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn readout_examples() {
        let h = Matrix::from_rows(&[[2.0, -1.0], [5.0, 0.5]]).unwrap();
        let r = ReadoutParams {
            v: Matrix::zeros(1, 2),
            c: col(&[3.0]),
        };
        assert_eq!(readout_apply(&r, &h).unwrap(), Matrix::filled(1, 2, 3.0));
        let r = ReadoutParams {
            v: Matrix::identity(2),
            c: Matrix::zeros(2, 1),
        };
        assert_eq!(readout_apply(&r, &h).unwrap(), h);
        let r = ReadoutParams {
            v: Matrix::from_rows(&[[1.0, 1.0]]).unwrap(),
            c: Matrix::zeros(1, 1),
        };
        assert_eq!(readout_apply(&r, &col(&[2.0, 5.0])).unwrap(), col(&[7.0]));
    }

    #[test]
    fn gate_bias_initializers() {
        let mut rng = RngState::new(1);
        let degenerate = InitSpec::new(InitKind::ChronoPositive, 2).unwrap();
        assert_eq!(
            degenerate.sample_gate_bias(5, &mut rng).unwrap(),
            Matrix::zeros(5, 1)
        );
        let ones = InitSpec::new(InitKind::ConstantOne, 2).unwrap();
        assert_eq!(
            ones.sample_gate_bias(5, &mut rng).unwrap(),
            Matrix::filled(5, 1, 1.0)
        );
        assert!(InitSpec::new(InitKind::ChronoNegative, 1).is_err());
        assert!(InitSpec::new(InitKind::ConstantOne, 0).is_ok());
    }

    #[test]
    fn chrono_bias_mean_matches_analytic_integral() {
        // E[ln U(1, 50)] = (50 ln 50 - 49) / 49
        let want = (50.0 * 50f64.ln() - 49.0) / 49.0;
        assert!((want - 2.992).abs() < 1e-3);
        let spec = InitSpec::new(InitKind::ChronoPositive, 51).unwrap();
        let bias = spec
            .sample_gate_bias(100_000, &mut RngState::new(2))
            .unwrap();
        assert!(bias.data().iter().all(|&b| (0.0..=50f64.ln()).contains(&b)));
        let mean = bias.sum() / 1e5;
        assert!((mean - want).abs() < 0.05, "mean {mean}");

        let neg = InitSpec::new(InitKind::ChronoNegative, 51).unwrap();
        let nbias = neg
            .sample_gate_bias(100_000, &mut RngState::new(2))
            .unwrap();
        assert_eq!(nbias, bias.scale(-1.0));
    }

    #[test]
    fn init_model_shapes_and_determinism() {
        let spec = InitSpec::new(InitKind::ChronoPositive, 51).unwrap();
        let a = init_model(8, 2, 1, spec, &mut RngState::new(3)).unwrap();
        let b = init_model(8, 2, 1, spec, &mut RngState::new(3)).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.param_count(), 64 + 16 + 8 + 64 + 16 + 8 + 8 + 1);
        assert_eq!(a.cell.b, Matrix::zeros(8, 1));
        assert_eq!(a.readout.c, Matrix::zeros(1, 1));
        let bound = 1.0 / 8f64.sqrt();
        assert!(a.cell.wf_h.max_abs() <= bound);
        assert!(a.cell.w_x.max_abs() <= 1.0 / 2f64.sqrt());

        let c = init_model(
            8,
            2,
            1,
            InitSpec::new(InitKind::ConstantOne, 51).unwrap(),
            &mut RngState::new(3),
        )
        .unwrap();
        assert_eq!(c.cell.wf_h, a.cell.wf_h);
        assert_eq!(c.readout.v, a.readout.v);
        assert_eq!(c.cell.bf, Matrix::filled(8, 1, 1.0));
        assert!(init_model(0, 2, 1, spec, &mut RngState::new(3)).is_err());
    }

    #[test]
    fn init_kind_round_trips_through_str() {
        for k in [
            InitKind::ChronoPositive,
            InitKind::ChronoNegative,
            InitKind::ConstantOne,
        ] {
            assert_eq!(k.as_str().parse::<InitKind>().unwrap(), k);
        }
        assert!("chrono+".parse::<InitKind>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gates_open_and_state_bounded(seed in any::<u64>(), scale in 0.1f64..20.0) {
            let mut rng = RngState::new(seed);
            let spec = InitSpec::new(InitKind::ChronoNegative, 100).unwrap();
            let mut model = init_model(6, 3, 1, spec, &mut rng).unwrap();
            for p in model.params_mut() {
                p.map_inplace(|w| w * scale);
            }
            let mut h = rng.uniform(-3.0, 3.0, 6, 2).unwrap();
            for _ in 0..100 {
                let x = rng.uniform(-5.0, 5.0, 3, 2).unwrap();
                let (next, cache) = mgu_step(&model.cell, &h, &x).unwrap();
                prop_assert!(cache.f_t.data().iter().all(|&f| f > 0.0 && f < 1.0));
                prop_assert!(cache.h_tilde.data().iter().all(|&v| v > -1.0 && v < 1.0));
                for (n, p) in next.data().iter().zip(h.data()) {
                    prop_assert!(n.abs() <= p.abs().max(1.0) + 1e-15);
                }
                h = next;
            }
        }

        #[test]
        fn chrono_bias_bounds(seed in any::<u64>(), t_max in 2usize..400) {
            let mut rng = RngState::new(seed);
            let pos = InitSpec::new(InitKind::ChronoPositive, t_max).unwrap();
            let hi = ((t_max - 1) as f64).ln();
            let bias = pos.sample_gate_bias(64, &mut rng).unwrap();
            prop_assert!(bias.data().iter().all(|&b| b >= 0.0 && b <= hi));
            let neg = InitSpec::new(InitKind::ChronoNegative, t_max).unwrap();
            let bias = neg.sample_gate_bias(64, &mut rng).unwrap();
            prop_assert!(bias.data().iter().all(|&b| b <= 0.0 && b >= -hi));
        }
    }
}
