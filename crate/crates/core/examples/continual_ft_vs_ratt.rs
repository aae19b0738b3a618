//! Fine-tuning versus RATT on three synthetic captioning tasks.
//!
//! Run with `cargo run --release --example continual_ft_vs_ratt`.

use contcap::harness::{run_sequence_with, task_data, Event, Method, TrainConfig};
use contcap::metrics::report_csv;
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

    for method in [Method::Ft, Method::Ratt] {
        let cfg = TrainConfig { method, seed: 7, ..Default::default() };
        let start = std::time::Instant::now();
        let out = run_sequence_with(&tasks, &cfg, &mut |e| {
            if let Event::Epoch { task, record } = e {
                eprintln!("  task {task} epoch {:>2}: loss {:.3}, valid BLEU-4 {:.4}", record.epoch, record.train_loss, record.valid_bleu);
            }
        })?;
        println!("== {} ({:.1?})", method.name(), start.elapsed());
        print!("{}", report_csv(&out.report));
        if let Some(m) = out.report.mean_forgetting() {
            println!("mean forgetting: {m:.2}%");
        }
    }
    Ok(())
}
