use crate::error::{check_len, Result};
use crate::model::{logistic, Graph};
use crate::structure::StructuralParams;

/// Confusion counts of the thresholded belief against a reference graph,
/// over learnable edges only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureSummary {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

impl StructureSummary {
    pub fn tpr(&self) -> f64 {
        ratio(self.true_positives, self.true_positives + self.false_negatives)
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.false_positives, self.false_positives + self.true_negatives)
    }

    /// Edges are directed input → output and cannot be reversed, so SHD is
    /// the count of additions plus deletions.
    pub fn shd(&self) -> usize {
        self.false_positives + self.false_negatives
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// An edge counts as present only when its probability is strictly above `threshold`.
pub fn evaluate_structure(sp: &StructuralParams, truth: &Graph, threshold: f64) -> Result<StructureSummary> {
    check_len("truth state features", sp.d_s(), truth.d_s())?;
    check_len("truth action features", sp.d_a(), truth.d_a())?;
    let mut s = StructureSummary {
        true_positives: 0,
        false_positives: 0,
        false_negatives: 0,
        true_negatives: 0,
    };
    for (i, k) in sp.learnable() {
        let predicted = logistic(sp.logit(i, k)) > threshold;
        match (predicted, truth.has_edge(i, k)) {
            (true, true) => s.true_positives += 1,
            (true, false) => s.false_positives += 1,
            (false, true) => s.false_negatives += 1,
            (false, false) => s.true_negatives += 1,
        }
    }
    Ok(s)
}
