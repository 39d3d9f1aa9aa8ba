use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use ndt_core::divergence::DivergenceKind;
use ndt_core::netsim::{Scenario, Simulator};
use ndt_core::oda::{TrainerConfig, TrainerState};
use ndt_core::types::{normalize, CellId, FeatureBounds, ObservationVector};

const SCENARIO: &str = r#"
sample_rate = 20.0
duration = 30.0
seed = 7
workspace = { lower = [0.0, 0.0], upper = [30.0, 20.0] }
stations = [
  { id = 1, position = [-15.0, 10.0], tx_power = 30.0 },
  { id = 2, position = [45.0, 10.0], tx_power = 30.0 },
]
radio = { pl0 = 40.0, n_pl = 2.5, shadow_sigma = 1.5, d_corr = 10.0, noise_floor = -100.0, meas_noise = 0.5 }
handover = { hysteresis = 0.5, time_to_trigger = 0.1 }
trajectory = { kind = "lawnmower", spacing = 6.667, speed = 12.0 }
events = []
"#;

fn scenario() -> Scenario {
    toml::from_str(SCENARIO).expect("bench scenario parses")
}

fn grid_state(k: usize) -> TrainerState {
    let init: Vec<(Vec<f64>, CellId)> = (0..k)
        .map(|i| {
            let f = i as f64 / k as f64;
            (
                vec![f, (f * 7.0).fract(), 1.0 - f, (f * 3.0).fract()],
                1 + (i % 2) as CellId,
            )
        })
        .collect();
    TrainerState::with_codevectors(
        TrainerConfig::default(),
        DivergenceKind::euclidean(vec![50.0, 50.0, 8.0, 8.0]),
        0.06,
        &init,
    )
    .expect("valid state")
}

fn annealer(c: &mut Criterion) {
    let z = ObservationVector {
        z: vec![0.4, 0.6, 0.5, 0.3],
        label: 1,
    };
    for k in [16, 64, 256] {
        let state = grid_state(k);
        c.bench_function(&format!("gibbs_association/k{k}"), |b| {
            b.iter(|| black_box(state.gibbs_association(black_box(&z)).unwrap()))
        });
        c.bench_function(&format!("sa_step/k{k}"), |b| {
            b.iter_batched_ref(
                || state.clone(),
                |s| s.sa_step(black_box(&z)).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
}

fn simulator(c: &mut Criterion) {
    let sc = scenario();
    c.bench_function("simulate/600_obs", |b| {
        b.iter(|| {
            let sim = Simulator::new(black_box(&sc)).unwrap();
            black_box(sim.observations().count())
        })
    });
}

fn twin(c: &mut Criterion) {
    let sc = scenario();
    let sim = Simulator::new(&sc).unwrap();
    let stream: Vec<_> = sim.observations().collect();
    let bounds = FeatureBounds {
        w_x: 50.0,
        w_q: 8.0,
        ..FeatureBounds::from_workspace(&sc.workspace, vec![-75.0, -10.0], vec![-30.0, 20.0])
    };
    let mut state = TrainerState::new(
        TrainerConfig {
            lambda_decay: 0.8,
            probe_window: 20,
            max_obs_per_level: 40,
            prune_mass: 1e-4,
            ..TrainerConfig::default()
        },
        DivergenceKind::euclidean(bounds.component_weights()),
    )
    .unwrap();
    let mut annealer = ndt_core::oda::Annealer::new(state.clone());
    for o in &stream {
        annealer.observe(&normalize(o, &bounds).unwrap()).unwrap();
    }
    state = annealer.state.clone();
    let model = ndt_core::twin::HybridNdtModel::new(
        annealer.effective_codevectors(),
        bounds.clone(),
        Default::default(),
    )
    .unwrap();
    let x = [12.5, 7.5];
    c.bench_function(&format!("predict_quality/k{}", model.k()), |b| {
        b.iter(|| black_box(model.predict_quality(black_box(&x)).unwrap()))
    });
    c.bench_function(&format!("evaluate_grid_100x100/k{}", model.k()), |b| {
        b.iter(|| black_box(model.evaluate_grid(100, 100).unwrap().len()))
    });
    let z = normalize(&stream[0], &bounds).unwrap();
    c.bench_function(&format!("sa_step/trained_k{}", state.k()), |b| {
        b.iter_batched_ref(
            || state.clone(),
            |s| s.sa_step(black_box(&z)).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, annealer, simulator, twin);
criterion_main!(benches);
