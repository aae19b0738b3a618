//! Disjoint and incremental task splits of a multi-label image collection.
//!
//! Run with `cargo run --release --example split_dataset`.

use contcap::splitter::{
    generate_synthetic, partition, random_multilabel, split, vocab_stats, PartitionConfig, Procedure, SyntheticSpec, TaskDef,
};

fn main() -> contcap::Result<()> {
    let defs = vec![
        TaskDef { name: "animals".into(), categories: vec![0, 1] },
        TaskDef { name: "vehicles".into(), categories: vec![2, 3] },
        TaskDef { name: "food".into(), categories: vec![4] },
    ];
    let labels = random_multilabel(1000, 6, 0.25, 5);
    for procedure in [Procedure::Disjoint, Procedure::Incremental] {
        let s = split(&labels, &defs, procedure)?;
        let kept: Vec<String> = s.tasks.iter().map(|t| format!("{} {}/{}", t.name, t.examples.len(), t.candidates)).collect();
        println!("{procedure:?}: retained/candidates {}", kept.join(", "));
    }

    // captioned data: partition and vocabulary overlap
    let data = generate_synthetic(&SyntheticSpec { num_categories: 5, images_per_category: 200, overlap_rate: 0.2, ..Default::default() })?;
    let s = partition(split(&data, &defs, Procedure::Incremental)?, &PartitionConfig { max_examples: Some(300), ..Default::default() })?;
    print!("{}", vocab_stats(&s).table());
    Ok(())
}
