//! Statistics networks `T(x, y)` and their optimizers.
//!
//! Every critic maps a batch of `N` aligned pairs to an `N × N` score matrix
//! whose entry `(i, j)` is `T(xs[i], ys[j])`. The diagonal holds joint pairs;
//! off-diagonal entries act as samples from the product of marginals.

use std::collections::HashMap;

mod checkpoint;
mod optim;

pub use checkpoint::{Checkpoint, NamedParam};
pub use optim::{Optimizer, OptimizerSpec};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    None,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    /// `T(x, y) = MLP([x ; y])`.
    Concat,
    /// `T(x1, x2) = f(x1) · f(x2)` with a shared embedder.
    Separable,
    /// `T(x, y) = f(x) · o(y)` where `o(y)` is the one-hot label.
    OneHotLabel,
}

/// Layer widths and activations of an MLP, input width first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    #[serde(default)]
    pub output: OutputActivation,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, seed: u64) -> Self {
        Self {
            widths,
            output: OutputActivation::None,
            seed,
        }
    }

    pub fn with_output(mut self, output: OutputActivation) -> Self {
        self.output = output;
        self
    }
}

/// One affine layer, `h · weight + bias` with `weight` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    kind: CriticKind,
    layers: Vec<Layer>,
    output: OutputActivation,
    /// Constant added to every score; zero unless a shift probe sets it.
    output_shift: f64,
}

/// Tape handles for a critic's parameters, in [`Critic::param_names`] order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    layers: Vec<(Var, Option<Var>)>,
}

impl ParamVars {
    pub fn iter(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers
            .iter()
            .flat_map(|(w, b)| std::iter::once(*w).chain(b.iter().copied()))
    }
}

/// Builds a critic with fan-in uniform weights `U(-√(1/fan_in), √(1/fan_in))`
/// and zero biases. The concat critic's output layer has no bias.
pub fn build_critic(spec: &MlpSpec, kind: CriticKind) -> Result<Critic> {
    let w = &spec.widths;
    if w.len() < 2 {
        return Err(Error::InvalidCritic(format!(
            "need at least input and output widths, got {w:?}"
        )));
    }
    if w.contains(&0) {
        return Err(Error::InvalidCritic(format!(
            "widths must be positive: {w:?}"
        )));
    }
    if kind == CriticKind::Concat {
        if *w.last().unwrap() != 1 {
            return Err(Error::InvalidCritic(format!(
                "concat critic must end in width 1: {w:?}"
            )));
        }
        if !w[0].is_multiple_of(2) {
            return Err(Error::InvalidCritic(format!(
                "concat input width {} must split evenly into x and y",
                w[0]
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_layers = w.len() - 1;
    let layers = (0..n_layers)
        .map(|l| {
            let (fan_in, fan_out) = (w[l], w[l + 1]);
            let bound = (1.0 / fan_in as f64).sqrt();
            let weight = Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..=bound));
            let last = l + 1 == n_layers;
            let bias = (!(last && kind == CriticKind::Concat)).then(|| Matrix::zeros(1, fan_out));
            Layer { weight, bias }
        })
        .collect();
    Ok(Critic {
        kind,
        layers,
        output: spec.output,
        output_shift: 0.0,
    })
}

impl Critic {
    /// Assembles a critic from explicit layers.
    pub fn from_layers(
        kind: CriticKind,
        layers: Vec<Layer>,
        output: OutputActivation,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidCritic("no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].weight.cols() != pair[1].weight.rows() {
                return Err(Error::InvalidCritic(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].weight.cols(),
                    i + 1,
                    pair[1].weight.rows()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if let Some(b) = &l.bias {
                if b.shape() != (1, l.weight.cols()) {
                    return Err(Error::InvalidCritic(format!(
                        "layer {i} bias shape {:?}",
                        b.shape()
                    )));
                }
            }
        }
        if kind == CriticKind::Concat
            && (layers.last().unwrap().weight.cols() != 1
                || !layers[0].weight.rows().is_multiple_of(2))
        {
            return Err(Error::InvalidCritic(
                "concat critic needs even input and scalar output".into(),
            ));
        }
        Ok(Self {
            kind,
            layers,
            output,
            output_shift: 0.0,
        })
    }

    pub fn kind(&self) -> CriticKind {
        self.kind
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weight.rows()];
        w.extend(self.layers.iter().map(|l| l.weight.cols()));
        w
    }

    pub fn output_shift(&self) -> f64 {
        self.output_shift
    }

    /// Adds `c` to every score the critic produces. Used to probe the shift
    /// invariance of DV-type bounds.
    pub fn set_output_shift(&mut self, c: f64) {
        self.output_shift = c;
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            names.push(format!("layer{i}.weight"));
            if l.bias.is_some() {
                names.push(format!("layer{i}.bias"));
            }
        }
        names
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(&l.weight).chain(l.bias.iter()))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| std::iter::once(&mut l.weight).chain(l.bias.iter_mut()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Groups existing tape handles, given in [`params`](Self::params) order.
    pub fn param_vars(&self, vars: &[Var]) -> Result<ParamVars> {
        if vars.len() != self.params().len() {
            return Err(Error::Shape(format!(
                "{} handles for {} parameters",
                vars.len(),
                self.params().len()
            )));
        }
        let mut it = vars.iter().copied();
        let layers = self
            .layers
            .iter()
            .map(|l| (it.next().unwrap(), l.bias.as_ref().and_then(|_| it.next())))
            .collect();
        Ok(ParamVars { layers })
    }

    /// Records the parameters as tape leaves.
    pub fn params_on(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        tape.leaf(l.weight.clone()),
                        l.bias.as_ref().map(|b| tape.leaf(b.clone())),
                    )
                })
                .collect(),
        }
    }

    /// Runs layers `from..` on `h`, applying ReLU between layers.
    fn forward_from(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        mut h: Var,
        from: usize,
        preact: bool,
    ) -> Result<Var> {
        let n = self.layers.len();
        for l in from..n {
            if !preact || l > from {
                let (w, b) = vars.layers[l];
                h = tape.matmul(h, w)?;
                if let Some(b) = b {
                    h = tape.add_row(h, b)?;
                }
            }
            if l + 1 < n {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Embeds a batch through the MLP (separable and one-hot-label critics).
    pub fn embed_on(&self, tape: &mut Tape, vars: &ParamVars, xs: Var) -> Result<Var> {
        let cols = tape.value(xs).cols();
        if cols != self.layers[0].weight.rows() {
            return Err(Error::Shape(format!(
                "input width {cols} does not match critic input {}",
                self.layers[0].weight.rows()
            )));
        }
        self.forward_from(tape, vars, xs, 0, false)
    }

    /// Records the `N × N` score matrix for aligned batches `xs`, `ys`.
    pub fn score_matrix_on(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        xs: &Matrix,
        ys: &Matrix,
    ) -> Result<Var> {
        let n = xs.rows();
        if ys.rows() != n {
            return Err(Error::Shape(format!("{} xs vs {} ys", n, ys.rows())));
        }
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let scores = match self.kind {
            CriticKind::Concat => {
                // Repeated inputs are scored once.
                let (ux, rows) = unique_rows(xs);
                let (uy, cols) = unique_rows(ys);
                if ux.rows() < n || uy.rows() < n {
                    let grid = self.concat_scores(tape, vars, &ux, &uy)?;
                    tape.gather(grid, rows, cols)?
                } else {
                    self.concat_scores(tape, vars, xs, ys)?
                }
            }
            CriticKind::Separable => {
                let x = tape.leaf(xs.clone());
                let y = tape.leaf(ys.clone());
                if xs.cols() != ys.cols() {
                    return Err(Error::Shape(
                        "separable critic needs equal x and y widths".into(),
                    ));
                }
                let fx = self.embed_on(tape, vars, x)?;
                let fy = self.embed_on(tape, vars, y)?;
                tape.matmul_nt(fx, fy)?
            }
            CriticKind::OneHotLabel => {
                let x = tape.leaf(xs.clone());
                let y = tape.leaf(ys.clone());
                let k = self.layers.last().unwrap().weight.cols();
                if ys.cols() != k {
                    return Err(Error::Shape(format!(
                        "label encoding width {} does not match {k} logits",
                        ys.cols()
                    )));
                }
                let fx = self.embed_on(tape, vars, x)?;
                tape.matmul_nt(fx, y)?
            }
        };
        let scores = match self.output {
            OutputActivation::None => scores,
            OutputActivation::Softplus => tape.softplus(scores),
        };
        Ok(if self.output_shift != 0.0 {
            tape.add_scalar(scores, self.output_shift)
        } else {
            scores
        })
    }

    /// `T(x_i, y_j)` for every pair, before the output activation.
    fn concat_scores(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        xs: &Matrix,
        ys: &Matrix,
    ) -> Result<Var> {
        let (n, m) = (xs.rows(), ys.rows());
        let x = tape.leaf(xs.clone());
        let y = tape.leaf(ys.clone());
        {
            {
                let in_w = self.layers[0].weight.rows();
                let dx = in_w / 2;
                if xs.cols() != dx || ys.cols() != in_w - dx {
                    return Err(Error::Shape(format!(
                        "concat critic expects {dx}+{} input columns, got {}+{}",
                        in_w - dx,
                        xs.cols(),
                        ys.cols()
                    )));
                }
                // First layer on all pairs: [x_i ; y_j]·W = x_i·W_x + y_j·W_y.
                let (w0, b0) = vars.layers[0];
                let wx = tape.slice_rows(w0, 0, dx)?;
                let wy = tape.slice_rows(w0, dx, in_w)?;
                let ax = tape.matmul(x, wx)?;
                let mut by = tape.matmul(y, wy)?;
                if let Some(b0) = b0 {
                    by = tape.add_row(by, b0)?;
                }
                let pre = tape.pair_sum(ax, by)?;
                let out = self.forward_from(tape, vars, pre, 0, true)?;
                Ok(tape.reshape(out, n, m)?)
            }
        }
    }

    /// The score matrix as a plain value.
    pub fn score_matrix(&self, xs: &Matrix, ys: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.params_on(&mut tape);
        let s = self.score_matrix_on(&mut tape, &vars, xs, ys)?;
        Ok(tape.value(s).clone())
    }

    /// The embedder output `f(xs)` as a plain value.
    pub fn embed(&self, xs: &Matrix) -> Result<Matrix> {
        if self.kind == CriticKind::Concat {
            return Err(Error::InvalidCritic(
                "concat critics have no embedder".into(),
            ));
        }
        let mut tape = Tape::new();
        let vars = self.params_on(&mut tape);
        let x = tape.leaf(xs.clone());
        let f = self.embed_on(&mut tape, &vars, x)?;
        Ok(tape.value(f).clone())
    }
}

/// Maps inputs to embedding rows; implemented by critics and by oracles in
/// accuracy evaluation.
pub trait Embedder {
    fn embed_batch(&self, xs: &Matrix) -> Result<Matrix>;

    /// The critic architecture behind the embedder, if any.
    fn critic_kind(&self) -> Option<CriticKind> {
        None
    }
}

impl Embedder for Critic {
    fn embed_batch(&self, xs: &Matrix) -> Result<Matrix> {
        self.embed(xs)
    }

    fn critic_kind(&self) -> Option<CriticKind> {
        Some(self.kind)
    }
}

/// Distinct rows in order of first appearance, and each row's index among them.
fn unique_rows(m: &Matrix) -> (Matrix, Vec<usize>) {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut data = Vec::new();
    let index = (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            let key = row.iter().map(|v| v.to_bits()).collect();
            *seen.entry(key).or_insert_with(|| {
                data.extend_from_slice(row);
                data.len() / m.cols().max(1) - 1
            })
        })
        .collect();
    (
        Matrix::from_vec(seen.len(), m.cols(), data).expect("unique rows"),
        index,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_separable() -> Critic {
        let layer = Layer {
            weight: Matrix::scalar(1.0),
            bias: Some(Matrix::zeros(1, 1)),
        };
        Critic::from_layers(CriticKind::Separable, vec![layer], OutputActivation::None).unwrap()
    }

    #[test]
    fn default_architectures() {
        let onehot = build_critic(&MlpSpec::new(vec![32, 256, 1], 0), CriticKind::Concat).unwrap();
        assert_eq!(onehot.widths(), vec![32, 256, 1]);
        assert!(onehot.layers()[1].bias.is_none());
        assert!(onehot.layers()[0].bias.is_some());
        let gauss =
            build_critic(&MlpSpec::new(vec![40, 256, 256, 1], 0), CriticKind::Concat).unwrap();
        assert_eq!(gauss.widths(), vec![40, 256, 256, 1]);
        assert_eq!(gauss.num_params(), 40 * 256 + 256 + 256 * 256 + 256 + 256);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = MlpSpec::new(vec![32, 256, 1], 7);
        let a = build_critic(&spec, CriticKind::Concat).unwrap();
        let b = build_critic(&spec, CriticKind::Concat).unwrap();
        assert_eq!(a, b);
        let c = build_critic(&MlpSpec::new(vec![32, 256, 1], 8), CriticKind::Concat).unwrap();
        assert_ne!(a, c);
        let bound = (1.0f64 / 32.0).sqrt();
        assert!(a.layers()[0]
            .weight
            .as_slice()
            .iter()
            .all(|w| w.abs() <= bound));
        assert!(a.layers()[0]
            .bias
            .as_ref()
            .unwrap()
            .as_slice()
            .iter()
            .all(|&b| b == 0.0));
    }

    #[test]
    fn invalid_widths() {
        assert!(build_critic(&MlpSpec::new(vec![32], 0), CriticKind::Concat).is_err());
        assert!(build_critic(&MlpSpec::new(vec![32, 0, 1], 0), CriticKind::Concat).is_err());
        assert!(build_critic(&MlpSpec::new(vec![32, 8, 2], 0), CriticKind::Concat).is_err());
        assert!(build_critic(&MlpSpec::new(vec![31, 8, 1], 0), CriticKind::Concat).is_err());
        assert!(build_critic(&MlpSpec::new(vec![4, 8, 3], 0), CriticKind::Separable).is_ok());
    }

    #[test]
    fn separable_identity_outer_product() {
        let c = identity_separable();
        let xs = Matrix::column(vec![1.0, 2.0]);
        let s = c.score_matrix(&xs, &xs).unwrap();
        assert_eq!(s, Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap());
    }

    #[test]
    fn softplus_output_on_separable_scores() {
        let layer = Layer {
            weight: Matrix::scalar(1.0),
            bias: Some(Matrix::zeros(1, 1)),
        };
        let c = Critic::from_layers(
            CriticKind::Separable,
            vec![layer],
            OutputActivation::Softplus,
        )
        .unwrap();
        let xs = Matrix::column(vec![-1.0, 2.0]);
        let s = c.score_matrix(&xs, &xs).unwrap();
        for (got, raw) in s.as_slice().iter().zip([1.0, -2.0, -2.0, 4.0]) {
            assert!((got - (1.0 + f64::exp(raw)).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_label_orthogonal_is_zero() {
        let layer = Layer {
            weight: Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            bias: None,
        };
        let c = Critic::from_layers(CriticKind::OneHotLabel, vec![layer], OutputActivation::None)
            .unwrap();
        let xs = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let ys = Matrix::from_rows(&[[0.0, 1.0], [0.0, 1.0]]).unwrap();
        let s = c.score_matrix(&xs, &ys).unwrap();
        assert_eq!(s.get(0, 0), 0.0);
    }

    #[test]
    fn concat_shape_and_batch_errors() {
        let c = build_critic(&MlpSpec::new(vec![6, 5, 1], 1), CriticKind::Concat).unwrap();
        let xs = Matrix::from_fn(4, 3, |r, k| (r + k) as f64 * 0.1);
        let s = c.score_matrix(&xs, &xs).unwrap();
        assert_eq!(s.shape(), (4, 4));
        let one = Matrix::zeros(1, 3);
        assert!(matches!(
            c.score_matrix(&one, &one),
            Err(Error::BatchTooSmall(1))
        ));
        assert!(c
            .score_matrix(&Matrix::zeros(4, 2), &Matrix::zeros(4, 4))
            .is_err());
    }

    #[test]
    fn concat_matches_direct_per_pair_evaluation() {
        let c = build_critic(&MlpSpec::new(vec![4, 7, 3, 1], 3), CriticKind::Concat).unwrap();
        let mut c = c;
        // non-zero biases so the split first layer is exercised fully
        for p in c.params_mut() {
            if p.rows() == 1 {
                p.as_mut_slice()
                    .iter_mut()
                    .enumerate()
                    .for_each(|(i, v)| *v = 0.1 * i as f64 - 0.2);
            }
        }
        let xs = Matrix::from_fn(3, 2, |r, k| (r as f64 - k as f64) * 0.7);
        let distinct = Matrix::from_fn(3, 2, |r, k| (r * k) as f64 * 0.3 - 0.5);
        let repeated = Matrix::from_fn(3, 2, |r, k| (r % 2 * k) as f64 * 0.3 - 0.5);
        for ys in [distinct, repeated] {
            let s = c.score_matrix(&xs, &ys).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let mut h: Vec<f64> = xs.row(i).iter().chain(ys.row(j)).copied().collect();
                    for (l, layer) in c.layers().iter().enumerate() {
                        let mut next = vec![0.0; layer.weight.cols()];
                        for (o, out) in next.iter_mut().enumerate() {
                            *out = h
                                .iter()
                                .enumerate()
                                .map(|(k, v)| v * layer.weight.get(k, o))
                                .sum::<f64>()
                                + layer.bias.as_ref().map_or(0.0, |b| b.get(0, o));
                            if l + 1 < c.layers().len() {
                                *out = out.max(0.0);
                            }
                        }
                        h = next;
                    }
                    assert!((s.get(i, j) - h[0]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn repeated_inputs_gradients_match_finite_differences() {
        use crate::autodiff::grad_check;
        let c = build_critic(&MlpSpec::new(vec![4, 6, 1], 5), CriticKind::Concat).unwrap();
        let xs = Matrix::from_fn(5, 2, |r, k| ((r % 2) + k) as f64 * 0.4 - 0.3);
        let ys = Matrix::from_fn(5, 2, |r, k| ((r % 3) * k) as f64 * 0.5 - 0.2);
        let params: Vec<Matrix> = c.params().into_iter().cloned().collect();
        let weights = Matrix::from_fn(5, 5, |r, k| (r * 5 + k) as f64 * 0.01 - 0.1);
        let check = grad_check(
            |tape, vars| {
                let pv = c.param_vars(vars)?;
                let s = c.score_matrix_on(tape, &pv, &xs, &ys)?;
                let w = tape.leaf(weights.clone());
                let prod = tape.mul(s, w)?;
                Ok::<_, Error>(tape.sum(prod))
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(check.max_relative_error < 1e-6, "{check:?}");
    }

    #[test]
    fn output_shift_moves_every_score() {
        let mut c = build_critic(&MlpSpec::new(vec![4, 8, 1], 5), CriticKind::Concat).unwrap();
        let xs = Matrix::from_fn(5, 2, |r, k| ((r * 3 + k) as f64).sin());
        let base = c.score_matrix(&xs, &xs).unwrap();
        c.set_output_shift(2.5);
        let shifted = c.score_matrix(&xs, &xs).unwrap();
        for (a, b) in base.as_slice().iter().zip(shifted.as_slice()) {
            assert_eq!(b - a, 2.5);
        }
    }
}
