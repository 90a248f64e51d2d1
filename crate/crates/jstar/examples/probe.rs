// Scratch probe: reorder-task metrics with chunk-aligned word geometry.

use std::time::Instant;

use jstar::harness::{
    evaluate_mt, gen_toy_reorder_mt, train, Dataset, MtMode, OptimConfig, Split, Task,
};
use jstar::model::ModelConfig;

fn main() {
    let ds: Dataset = gen_toy_reorder_mt(5000, 10, 1, MtMode::SwapPairs);
    let cfg = ModelConfig::desk_mt();
    for steps in [800usize, 1600] {
        let optim = OptimConfig {
            steps,
            batch_size: 16,
            seed: 1,
            dev_every: 400,
            ..OptimConfig::default()
        };
        let t = Instant::now();
        let outcome = train(&ds, &cfg, &optim, Task::ToyMtReorder, None).unwrap();
        let train_time = t.elapsed();
        let curve: Vec<String> =
            outcome.dev_curve.iter().map(|(s, l)| format!("{s}:{l:.3}")).collect();
        let test: Vec<_> = ds.split(Split::Test).into_iter().take(100).collect();
        let t = Instant::now();
        let report = evaluate_mt(&outcome.model, &test, 4, 4).unwrap();
        println!(
            "steps {steps} ({train_time:?} train, {:?} eval): dev [{}], bleu {:.2}, exact {:.3}, src_wer {:.3}, align {:.3}",
            t.elapsed(),
            curve.join(" "),
            report.bleu,
            report.exact_acc,
            report.src_wer,
            report.align_acc
        );
    }
}
