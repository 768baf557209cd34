use serde::{Deserialize, Serialize};

/// Objectives whose similarity-evaluation cost has a closed form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountedMethod {
    Cocoa,
    Cmc,
}

impl CountedMethod {
    pub fn name(self) -> &'static str {
        match self {
            CountedMethod::Cocoa => "cocoa",
            CountedMethod::Cmc => "cmc",
        }
    }
}

/// Unique similarity evaluations of one loss call on `views` modalities and batch `batch`.
///
/// cocoa: `N·V(V−1)/2 + V·N(N−1)/2`; cmc: `V(V−1)/2 · N²`.
pub fn count_formula(method: CountedMethod, views: usize, batch: usize) -> u64 {
    let (v, n) = (views as u64, batch as u64);
    let pairs = v * v.saturating_sub(1) / 2;
    match method {
        CountedMethod::Cocoa => n * pairs + v * n * n.saturating_sub(1) / 2,
        CountedMethod::Cmc => pairs * n * n,
    }
}
