//! Deterministic fixtures shared by the benchmarks.

use lmturk_core::harness::dataset::Dataset;
use lmturk_core::quality::TrainingItem;
use lmturk_core::student::Featurizer;
use lmturk_core::synthetic::{generate, SyntheticConfig};
use lmturk_core::{Annotation, Example, FeaturizerConfig, LabelSet, WorkerProfile};

pub const N_LABELS: usize = 5;

pub fn dataset(n_examples: usize) -> Dataset {
    generate(&SyntheticConfig {
        n_examples,
        ..Default::default()
    })
    .expect("valid synthetic config")
}

pub fn featurizer() -> Featurizer {
    FeaturizerConfig::default().featurizer().expect("default featurizer")
}

/// Featurized examples with their gold labels attached.
pub fn examples(n_examples: usize) -> (LabelSet, Vec<Example>) {
    let data = dataset(n_examples);
    let f = featurizer();
    let (labeled, _) = data.featurize(&f);
    let examples = labeled.into_iter().map(|l| l.example.with_gold(l.label)).collect();
    (data.label_set, examples)
}

pub fn gold_items(examples: &[Example]) -> Vec<TrainingItem> {
    examples
        .iter()
        .map(|e| TrainingItem::gold(e.clone(), e.gold.expect("fixture examples carry gold"), N_LABELS))
        .collect()
}

/// `n_items` committees of `k` workers with pseudo-random logits.
pub fn committees(n_items: usize, k: usize) -> Vec<Vec<Annotation>> {
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 6.0 - 3.0
    };
    (0..n_items)
        .map(|_| {
            (0..k)
                .map(|w| {
                    let logits: Vec<f64> = (0..N_LABELS).map(|_| next()).collect();
                    Annotation::from_logits(format!("w{w}"), logits).expect("finite logits")
                })
                .collect()
        })
        .collect()
}

pub fn profiles(k: usize) -> Vec<WorkerProfile> {
    (0..k).map(|w| WorkerProfile::new(format!("w{w}"), 0.9 - 0.05 * w as f64)).collect()
}
