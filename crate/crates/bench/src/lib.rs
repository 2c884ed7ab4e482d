//! Shared fixtures for the benchmarks.

use bt_core::model::{train_model, ModelConfig, TranslationModel};
use bt_core::toy::{generate_toy, ToyConfig, ToyTask};

pub fn task(bitext: usize) -> ToyTask {
    generate_toy(&ToyConfig {
        bitext,
        mono: 200,
        valid: 50,
        test: 50,
        ..Default::default()
    })
}

/// Forward model trained on `task`'s bitext with the default settings.
pub fn model(task: &ToyTask) -> TranslationModel {
    let weighted: Vec<_> = task.bitext.iter().map(|p| (p, 1u64)).collect();
    train_model(&weighted, &ModelConfig::default()).expect("toy bitext trains")
}
