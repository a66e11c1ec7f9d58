use crate::critics::{CriticKind, Embedder};
use crate::datasets::{ClusterMode, ClusterTask};
use crate::error::{Error, Result};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const CHUNK: usize = 1000;

/// Fraction of `test_n` fresh draws whose label the critic recovers.
///
/// Supervised tasks predict `argmax_y f(x) · o(y)`. Contrastive tasks predict
/// the label of the pool sample whose embedding has the largest dot product
/// with `f(x)`. The test stream comes from `task` reseeded with `seed`.
pub fn evaluate_accuracy(
    embedder: &dyn Embedder,
    task: &ClusterTask,
    test_n: usize,
    pool_size: usize,
    seed: u64,
) -> Result<f64> {
    let expected = match task.mode() {
        ClusterMode::Supervised => CriticKind::OneHotLabel,
        ClusterMode::Contrastive => CriticKind::Separable,
    };
    if let Some(kind) = embedder.critic_kind() {
        if kind != expected {
            return Err(Error::Config(format!(
                "{:?} task needs a {expected:?} critic, got {kind:?}",
                task.mode()
            )));
        }
    }
    if test_n == 0 {
        return Err(Error::Empty("evaluate_accuracy"));
    }
    let mut stream = task.reseeded(seed);
    let pool = match task.mode() {
        ClusterMode::Supervised => None,
        ClusterMode::Contrastive => {
            if pool_size == 0 {
                return Err(Error::Empty("contrastive training pool"));
            }
            let (xs, labels) = stream.sample_labeled(pool_size);
            Some((embedder.embed_batch(&xs)?, labels))
        }
    };

    let mut correct = 0usize;
    let mut left = test_n;
    while left > 0 {
        let n = left.min(CHUNK);
        left -= n;
        let (xs, labels) = stream.sample_labeled(n);
        let f = embedder.embed_batch(&xs)?;
        let logits = match &pool {
            None => {
                if f.cols() != task.classes() {
                    return Err(Error::Shape(format!(
                        "{} logits for {} classes",
                        f.cols(),
                        task.classes()
                    )));
                }
                f
            }
            Some((pool_f, _)) => {
                if pool_f.cols() != f.cols() {
                    return Err(Error::Shape(
                        "pool and test embeddings differ in width".into(),
                    ));
                }
                f.matmul(&pool_f.transpose()).expect("widths checked")
            }
        };
        for (r, &y) in labels.iter().enumerate() {
            let k = argmax(logits.row(r));
            let predicted = match &pool {
                None => k,
                Some((_, pool_labels)) => pool_labels[k],
            };
            correct += usize::from(predicted == y);
        }
    }
    Ok(correct as f64 / test_n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critics::{build_critic, MlpSpec};
    use crate::matrix::Matrix;

    /// Embeds a point as the one-hot code of its nearest center.
    struct Oracle<'a>(&'a ClusterTask);

    impl Embedder for Oracle<'_> {
        fn embed_batch(&self, xs: &Matrix) -> Result<Matrix> {
            let k = self.0.classes();
            Ok(Matrix::from_fn(xs.rows(), k, |r, c| {
                if self.0.nearest_center(xs.row(r)) == c {
                    1.0
                } else {
                    0.0
                }
            }))
        }
    }

    struct Flat(usize);

    impl Embedder for Flat {
        fn embed_batch(&self, xs: &Matrix) -> Result<Matrix> {
            Ok(Matrix::zeros(xs.rows(), self.0))
        }
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn oracle_is_perfect() {
        for mode in [ClusterMode::Supervised, ClusterMode::Contrastive] {
            let t = ClusterTask::new(10, 16, 1.0, 20.0, mode, 1).unwrap();
            assert_eq!(
                evaluate_accuracy(&Oracle(&t), &t, 2000, 1000, 5).unwrap(),
                1.0
            );
        }
    }

    #[test]
    fn constant_logits_pick_class_zero() {
        let t = ClusterTask::new(10, 16, 1.0, 20.0, ClusterMode::Supervised, 1).unwrap();
        let acc = evaluate_accuracy(&Flat(10), &t, 10_000, 0, 3).unwrap();
        assert!((acc - 0.1).abs() < 0.02);
    }

    #[test]
    fn mismatched_critic_or_empty_pool() {
        let t = ClusterTask::new(10, 16, 1.0, 20.0, ClusterMode::Contrastive, 1).unwrap();
        assert!(evaluate_accuracy(&Oracle(&t), &t, 10, 0, 0).is_err());
        let c = build_critic(&MlpSpec::new(vec![16, 8, 10], 0), CriticKind::OneHotLabel).unwrap();
        assert!(evaluate_accuracy(&c, &t, 10, 10, 0).is_err());
    }
}
