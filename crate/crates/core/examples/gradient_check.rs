//! Backpropagation through time against central finite differences.
//!
//! Run with `cargo run --release --example gradient_check`.

use contcap::linalg::{Rng, Vector};
use contcap::model::{backward, ce_loss, forward_teacher_forced, Example, ModelConfig, ModelDims, ModelParams, Modulation, ParamKind, Support};

fn loss(params: &ModelParams, ex: &Example, support: &Support) -> f64 {
    let trace = forward_teacher_forced(ex, params, support, Modulation::NONE).unwrap();
    ce_loss(&trace, &ex.caption).unwrap()
}

fn main() -> contcap::Result<()> {
    let dims = ModelDims { d_feat: 5, d_emb: 4, d_hidden: 6, vocab_size: 9 };
    let mut rng = Rng::new(42);
    for standard_cell_output in [false, true] {
        let cfg = ModelConfig { standard_cell_output, init_range: 0.5, ..Default::default() };
        let params = ModelParams::init(dims, &cfg, &mut rng)?;
        let ex = Example {
            features: Vector((0..dims.d_feat).map(|_| rng.normal()).collect()),
            caption: vec![0, 4, 2, 7, 7, 3, 1],
        };
        // words 5, 6 and 8 are outside the task
        let support = Support::from_ids(dims.vocab_size, [0, 1, 2, 3, 4, 7]);
        let trace = forward_teacher_forced(&ex, &params, &support, Modulation::NONE)?;
        let grads = backward(&params, &trace, &ex.caption)?;

        let h = 1e-5;
        println!("h = {} (standard_cell_output = {standard_cell_output})", if standard_cell_output { "o*tanh(c)" } else { "o*c" });
        for kind in ParamKind::ALL {
            let mut worst: f64 = 0.0;
            for i in 0..params.tensor(kind).len() {
                let mut p = params.clone();
                p.tensor_mut(kind)[i] += h;
                let up = loss(&p, &ex, &support);
                p.tensor_mut(kind)[i] -= 2.0 * h;
                let down = loss(&p, &ex, &support);
                let fd = (up - down) / (2.0 * h);
                worst = worst.max((fd - grads.tensor(kind)[i]).abs());
            }
            println!("  {:>4}: max |analytic - numeric| = {worst:.2e}", kind.name());
        }
    }
    Ok(())
}
