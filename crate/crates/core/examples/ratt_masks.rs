//! Task attention masks: annealing, cumulative masks, backward masks and the
//! bit-exact freezing of protected weights.
//!
//! Run with `cargo run --release --example ratt_masks`.

use contcap::linalg::{Matrix, Rng};
use contcap::model::{ModelDims, ParamKind};
use contcap::ratt::{
    anneal_s, apply_masked_update, backward_masks, compute_masks, update_cumulative, AnnealSchedule, CumulativeMasks,
    MaskUsage, TaskEmbeddings,
};

fn main() -> contcap::Result<()> {
    let dims = ModelDims { d_feat: 8, d_emb: 6, d_hidden: 8, vocab_size: 10 };
    let sched = AnnealSchedule { s_max: 400.0, batches: 50 };
    println!("s(1) = {}, s(25) = {:.4}, s(50) = {}", anneal_s(1, &sched)?, anneal_s(25, &sched)?, anneal_s(50, &sched)?);

    let emb = TaskEmbeddings::init(dims.d_emb, dims.d_hidden, 2, 1.0, &mut Rng::new(3))?;
    let vocab0: Vec<bool> = (0..dims.vocab_size).map(|w| w < 6).collect();
    let vocab1: Vec<bool> = (0..dims.vocab_size).map(|w| w < 2 || w >= 5).collect();

    let soft = compute_masks(&emb, 0, anneal_s(1, &sched)?, &vocab0)?;
    let hard = compute_masks(&emb, 0, sched.s_max, &vocab0)?;
    println!("task 0 hidden mask at s = 1/s_max: {:.3?}", soft.a_h.as_slice());
    println!("task 0 hidden mask at s = s_max:   {:.3?}", hard.a_h.as_slice());

    let cum0 = update_cumulative(&CumulativeMasks::empty(dims.d_emb, dims.d_hidden), &hard)?;
    let task1 = compute_masks(&emb, 1, sched.s_max, &vocab1)?;
    let cum1 = update_cumulative(&cum0, &task1)?;
    for m in [&hard, &task1] {
        let u = MaskUsage::measure(m, &cum1);
        println!(
            "task {}: {}/{} embedding units, {}/{} hidden units, {} words",
            u.task, u.embed_used, u.embed_total, u.hidden_used, u.hidden_total, u.vocab_words
        );
    }

    // weights protected by task 0 while task 1 trains
    let b = backward_masks(&cum0, dims);
    for kind in [ParamKind::S, ParamKind::C, ParamKind::V, ParamKind::Wih] {
        let m = b.for_kind(kind);
        let frozen = m.iter().filter(|&&v| v == 0.0).count();
        println!("{:>4}: {frozen}/{} entries frozen", kind.name(), m.len());
    }

    let (rows, cols) = (dims.d_emb, dims.vocab_size);
    let mut rng = Rng::new(9);
    let w = Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect())?;
    let g = Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect())?;
    let mask = Matrix::new(rows, cols, b.for_kind(ParamKind::S).to_vec())?;
    let updated = apply_masked_update(&w, &g, &mask, 0.1)?;
    let untouched = (0..rows * cols)
        .filter(|&i| mask.as_slice()[i] == 0.0)
        .all(|i| updated.as_slice()[i].to_bits() == w.as_slice()[i].to_bits());
    println!("frozen embedding entries bit-identical after a step: {untouched}");
    Ok(())
}
