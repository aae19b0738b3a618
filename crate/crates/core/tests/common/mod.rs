#![allow(dead_code)]

use contcap::harness::{task_data, TaskData, TrainConfig};
use contcap::model::ModelConfig;
use contcap::splitter::{generate_synthetic, partition, split_disjoint, PartitionConfig, SyntheticSpec, TaskDef};

/// Disjoint single-category tasks on the default synthetic generator.
pub fn synthetic_tasks(images_per_category: usize, tasks: usize, holdout: f64) -> Vec<TaskData> {
    let spec = SyntheticSpec { num_categories: tasks, images_per_category, ..Default::default() };
    let data = generate_synthetic(&spec).unwrap();
    let defs: Vec<TaskDef> = (0..tasks)
        .map(|c| TaskDef { name: format!("task{c}"), categories: vec![c] })
        .collect();
    let cfg = PartitionConfig { valid_fraction: holdout, test_fraction: holdout, ..Default::default() };
    task_data(&data, &partition(split_disjoint(&data, &defs).unwrap(), &cfg).unwrap()).unwrap()
}

/// Small model for quick runs.
pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 16,
        seed: 5,
        model: ModelConfig { d_emb: 12, d_hidden: 16, ..Default::default() },
        ..Default::default()
    }
}
