//! Sequential vs data-parallel execution of the three fan-out points:
//! batch gradients, episode collection and planner evaluation. Without the
//! `parallel` feature both variants run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use switchtt::dataset::{collect, prepare_suite, Budget, CollectConfig};
use switchtt::gridworld::{LayoutFamily, TaskSpec};
use switchtt::models::{batch_loss_and_grad, tile_windows, ModelSpec, SeqModel};
use switchtt::nn::{FfnKind, Preset, TransformerConfig};
use switchtt::planner::{run_episodes, Models, PlanMode, PlannerConfig, Simulator};
use switchtt::switch::SwitchConfig;
use switchtt::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn tasks() -> Vec<TaskSpec> {
    vec![TaskSpec::new(0, LayoutFamily::Empty, 6, 6), TaskSpec::new(1, LayoutFamily::FourRooms, 9, 9).with_seed(1)]
}

fn batch_gradient(c: &mut Criterion) {
    let d = collect(&tasks(), &CollectConfig::new(Budget::Timesteps(2000), vec![0.0, 0.3, 1.0], 0)).unwrap();
    let mut group = c.benchmark_group("batch_gradient");
    group.sample_size(10);
    for (ffn_name, ffn) in [("dense", FfnKind::Dense), ("switch", FfnKind::Switch(SwitchConfig::default()))] {
        let t = TransformerConfig::preset(Preset::Small, 10, ffn);
        let m = SeqModel::new(ModelSpec::action(t, d.tasks.len(), d.schema.vocab(), true, 1.0, 0)).unwrap();
        let batch: Vec<_> = tile_windows(&m, &d, Some(0)).into_iter().take(16).collect();
        for (name, exec) in MODES {
            group.bench_function(BenchmarkId::new(ffn_name, name), |b| b.iter(|| batch_loss_and_grad(&m, &d, &batch, exec).unwrap()));
        }
    }
    group.finish();
}

fn collection(c: &mut Criterion) {
    let mut group = c.benchmark_group("collect");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = CollectConfig { exec, ..CollectConfig::new(Budget::Timesteps(5000), vec![0.0, 0.3, 1.0], 0) };
        group.bench_function(name, |b| b.iter(|| collect(&tasks(), &cfg).unwrap()));
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let (schema, instances) = prepare_suite(&tasks()).unwrap();
    let sim = Simulator::new(schema, instances.iter().cloned());
    let seeds: Vec<u64> = (0..32).collect();
    let mut group = c.benchmark_group("eval");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = PlannerConfig { mode: PlanMode::DtDirect, exec, ..PlannerConfig::default() };
        group.bench_function(name, |b| {
            b.iter(|| {
                for inst in &instances {
                    run_episodes(&cfg, Models::greedy(&sim), inst, &schema, &seeds).unwrap();
                }
            })
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradient, collection, evaluation);
criterion_main!(benches);
