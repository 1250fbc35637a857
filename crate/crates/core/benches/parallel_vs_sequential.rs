use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use sncbf_core::barrier::{BarrierArch, BarrierHyper, BarrierModel};
use sncbf_core::baselines::{PotentialFieldParams, SpfmController};
use sncbf_core::dynamics::{ControlBounds, DynamicsKind, EgoPredictor, TrueDynamics};
use sncbf_core::exec::Execution;
use sncbf_core::inference::{BarrierSet, SelectConfig, SncbfController};
use sncbf_core::sim::{run_batch, Controller, ObstacleModel, Scenario};

fn scenarios(n: usize) -> Vec<Scenario> {
    (0..n)
        .map(|i| {
            let mut s = Scenario::new(DynamicsKind::Dubins, 24, i as u64);
            s.max_steps = 60;
            s
        })
        .collect()
}

fn bench_batches(c: &mut Criterion) {
    let kind = DynamicsKind::Dubins;
    let pred: Arc<dyn EgoPredictor> = Arc::new(TrueDynamics::new(kind, 0.1));
    let bounds = ControlBounds::default_for(kind);
    let spfm = SpfmController { field: PotentialFieldParams::default(), predictor: pred.clone(), bounds: bounds.clone(), samples: 64 };
    let model = BarrierModel::new(BarrierArch::new(kind), BarrierHyper::default(), 0).unwrap();
    let sncbf = SncbfController::new(BarrierSet::Single(model), pred, bounds, SelectConfig::default()).unwrap();
    let batch = scenarios(8);
    let controllers: [(&str, &dyn Controller); 2] = [("spfm", &spfm), ("sncbf", &sncbf)];
    let mut group = c.benchmark_group("episode_batch");
    group.sample_size(10);
    for (name, ctl) in controllers {
        for (mode, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_function(format!("{name}/{mode}"), |b| {
                b.iter(|| run_batch(&batch, ctl, ObstacleModel::Orca(batch[0].orca), exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_batches);
criterion_main!(benches);
