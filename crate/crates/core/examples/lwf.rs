//! Recurrent learning without forgetting: distillation terms and a short
//! comparison with fine-tuning.
//!
//! Run with `cargo run --release --example lwf`.

use contcap::harness::{run_sequence, task_data, Method, TrainConfig};
use contcap::linalg::{Rng, Vector};
use contcap::lwf::{distill_forward, distill_grad, distill_loss, LwfConfig, TeacherSnapshot};
use contcap::metrics::report_csv;
use contcap::model::{Example, ModelConfig, ModelDims, ModelParams, Support};
use contcap::splitter::{generate_synthetic, partition, split_disjoint, PartitionConfig, SyntheticSpec, TaskDef};

fn main() -> contcap::Result<()> {
    // a student that grew three words past its teacher
    let dims = ModelDims { d_feat: 4, d_emb: 3, d_hidden: 5, vocab_size: 6 };
    let mut rng = Rng::new(1);
    let teacher = ModelParams::init(dims, &ModelConfig::default(), &mut rng)?;
    let mut student = teacher.clone();
    student.expand_vocab(3, 0.1, &mut rng);
    let snapshot = TeacherSnapshot::new(teacher, Support::full(6))?;
    let ex = Example { features: Vector(vec![0.5, -1.0, 0.25, 2.0]), caption: vec![0, 7, 8, 1] };
    let cfg = LwfConfig::default();
    let pair = distill_forward(&student, &snapshot, &ex, &Support::from_ids(9, [0, 1, 6, 7, 8]))?;
    let g = distill_grad(&pair.student_old, &pair.teacher_old, &cfg);
    let gmax = g.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    println!(
        "student = teacher on old words: distillation loss {:.6}, gradient max-norm {gmax:.1e}",
        distill_loss(&pair.student_old, &pair.teacher_old, &cfg)
    );

    let data = generate_synthetic(&SyntheticSpec { images_per_category: 300, ..Default::default() })?;
    let defs: Vec<TaskDef> = (0..3).map(|c| TaskDef { name: format!("task{c}"), categories: vec![c] }).collect();
    let tasks = task_data(&data, &partition(split_disjoint(&data, &defs)?, &PartitionConfig::default())?)?;
    for (method, lambda) in [(Method::Ft, 0.0), (Method::Lwf, 1.0), (Method::Lwf, 5.0)] {
        let cfg = TrainConfig {
            method,
            epochs: 5,
            seed: 3,
            model: ModelConfig { d_emb: 32, d_hidden: 64, ..Default::default() },
            lwf: LwfConfig { lambda, temperature: 2.0 },
            ..Default::default()
        };
        let out = run_sequence(&tasks, &cfg)?;
        println!("== {} (lambda = {lambda})", method.name());
        print!("{}", report_csv(&out.report));
    }
    Ok(())
}
