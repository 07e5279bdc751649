use std::ops::AddAssign;

use super::MetricsError;
use crate::data::LabelMap;

/// `K x K` pixel counts; entry `(t, p)` counts pixels of true class `t`
/// predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    /// Row-major counts, truth along rows.
    pub fn from_counts(counts: Vec<u64>) -> Result<Self, MetricsError> {
        let k = (counts.len() as f64).sqrt().round() as usize;
        if k == 0 || k * k != counts.len() {
            return Err(MetricsError::BadCounts(counts.len()));
        }
        Ok(Self { k, counts })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, c)).sum::<u64>() - self.tp(c)
    }

    pub fn fn_(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.get(c, p)).sum::<u64>() - self.tp(c)
    }

    pub fn tn(&self, c: usize) -> u64 {
        self.total() - self.tp(c) - self.fp(c) - self.fn_(c)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::new(self.k);
        for t in 0..self.k {
            for p in 0..self.k {
                out.counts[p * self.k + t] = self.get(t, p);
            }
        }
        out
    }

    /// Relabels predictions: column `p` moves to column `perm[p]`.
    pub fn permute_predictions(&self, perm: &[usize]) -> Self {
        let mut out = Self::new(self.k);
        for t in 0..self.k {
            for p in 0..self.k {
                out.counts[t * self.k + perm[p]] += self.get(t, p);
            }
        }
        out
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        assert_eq!(self.k, rhs.k, "confusion matrices of different sizes");
        for (a, b) in self.counts.iter_mut().zip(&rhs.counts) {
            *a += b;
        }
    }
}

pub fn confusion(
    pred: &LabelMap,
    truth: &LabelMap,
    k: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if pred.dims() != truth.dims() {
        return Err(MetricsError::DimensionMismatch {
            pred: pred.dims(),
            truth: truth.dims(),
        });
    }
    let mut cm = ConfusionMatrix::new(k);
    for (pixel, (&p, &t)) in pred.as_slice().iter().zip(truth.as_slice()).enumerate() {
        for class in [p, t] {
            if class as usize >= k {
                return Err(MetricsError::ClassOutOfRange {
                    class,
                    pixel,
                    classes: k,
                });
            }
        }
        cm.counts[t as usize * k + p as usize] += 1;
    }
    Ok(cm)
}
