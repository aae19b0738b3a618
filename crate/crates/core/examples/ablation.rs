//! Progressive mask ablation: hidden mask only, then the classifier
//! (vocabulary) mask, then the embedding mask, compared with fine-tuning.
//!
//! Run with `cargo run --release --example ablation`.

use contcap::harness::{run_sequence, task_data, Method, TrainConfig};
use contcap::ratt::RattConfig;
use contcap::splitter::{generate_synthetic, partition, split_disjoint, PartitionConfig, SyntheticSpec, TaskDef};

fn main() -> contcap::Result<()> {
    let data = generate_synthetic(&SyntheticSpec::default())?;
    let defs: Vec<TaskDef> = (0..3)
        .map(|c| TaskDef { name: format!("task{c}"), categories: vec![c] })
        .collect();
    let split = partition(
        split_disjoint(&data, &defs)?,
        &PartitionConfig { valid_fraction: 1.0 / 7.0, test_fraction: 1.0 / 7.0, ..Default::default() },
    )?;
    let tasks = task_data(&data, &split)?;

    let variants = [
        ("ft", Method::Ft, (false, false, false)),
        ("h", Method::Ratt, (false, true, false)),
        ("h+cls", Method::Ratt, (false, true, true)),
        ("h+cls+emb", Method::Ratt, (true, true, true)),
    ];
    println!("{:<10} {:>10} {:>10} {:>10}", "variant", "forget t0", "forget t1", "mean");
    for (name, method, (mask_embed, mask_hidden, mask_vocab)) in variants {
        let cfg = TrainConfig {
            method,
            seed: 7,
            ratt: RattConfig { mask_embed, mask_hidden, mask_vocab, ..Default::default() },
            ..Default::default()
        };
        let report = run_sequence(&tasks, &cfg)?.report;
        let f: Vec<f64> = report.forgetting.iter().filter_map(|r| r.percent).collect();
        println!(
            "{name:<10} {:>10.2} {:>10.2} {:>10.2}",
            f[0],
            f[1],
            report.mean_forgetting().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
