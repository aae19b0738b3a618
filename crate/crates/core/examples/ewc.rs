//! Elastic weight consolidation: Fisher importance after the first task and
//! its effect on forgetting.
//!
//! Run with `cargo run --release --example ewc`.

use contcap::ewc::EwcConfig;
use contcap::harness::{run_sequence, task_data, Method, TrainConfig};
use contcap::metrics::report_csv;
use contcap::model::ModelConfig;
use contcap::splitter::{generate_synthetic, partition, split_disjoint, PartitionConfig, SyntheticSpec, TaskDef};

fn main() -> contcap::Result<()> {
    let data = generate_synthetic(&SyntheticSpec { images_per_category: 300, ..Default::default() })?;
    let defs: Vec<TaskDef> = (0..3).map(|c| TaskDef { name: format!("task{c}"), categories: vec![c] }).collect();
    let tasks = task_data(&data, &partition(split_disjoint(&data, &defs)?, &PartitionConfig::default())?)?;

    for (method, lambda) in [(Method::Ft, 0.0), (Method::Ewc, 100.0), (Method::Ewc, 10_000.0)] {
        let cfg = TrainConfig {
            method,
            epochs: 5,
            seed: 3,
            model: ModelConfig { d_emb: 32, d_hidden: 64, ..Default::default() },
            ewc: EwcConfig { lambda, fisher_samples: 500 },
            ..Default::default()
        };
        let out = run_sequence(&tasks, &cfg)?;
        println!("== {} (lambda = {lambda})", method.name());
        print!("{}", report_csv(&out.report));
        if let Some(f) = out.report.fisher.first() {
            let top: Vec<String> = f.mean_importance.iter().map(|(n, v)| format!("{n} {v:.1e}")).collect();
            println!("mean Fisher after task 0: {}", top.join(", "));
        }
    }
    Ok(())
}
