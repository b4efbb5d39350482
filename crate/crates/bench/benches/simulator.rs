use std::hint::black_box;

use areasearch_core::learner::{build_samples, collect_rollouts, minibatch_loss, RolloutContext};
use areasearch_core::{
    generate_map, observe_team, JointScope, Mlp, MlpSpec, PrimitiveAction, ScenarioPreset, TrainConfig, Trainer,
    RewardWeights,
};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn world_step(c: &mut Criterion) {
    let scenario = ScenarioPreset::Hard.config(8);
    let mut world = generate_map(&scenario).unwrap();
    world.initial_sense();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let actions: Vec<Vec<PrimitiveAction>> = (0..256)
        .map(|_| (0..8).map(|_| PrimitiveAction::ALL[rng.gen_range(0..5)]).collect())
        .collect();
    c.bench_function("world_step_hard_8", |b| {
        b.iter_batched(
            || world.clone(),
            |mut w| {
                for a in &actions[..32] {
                    w.step(a).unwrap();
                }
                w
            },
            BatchSize::SmallInput,
        )
    });
    c.bench_function("observe_team_hard_8", |b| b.iter(|| observe_team(black_box(&world), JointScope::Global)));
}

fn mlp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = Mlp::init(MlpSpec::new(vec![100, 64, 32, 5]).unwrap(), 0.01, &mut rng);
    let input: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grad = vec![0.1; 5];
    c.bench_function("mlp_forward", |b| b.iter(|| net.forward(black_box(&input)).unwrap()));
    c.bench_function("mlp_backward", |b| b.iter(|| net.backward(black_box(&input), &grad).unwrap()));
}

fn loss(c: &mut Criterion) {
    let scenario = ScenarioPreset::Desk.config(2);
    let config = TrainConfig { batch_size: 400, minibatch_size: 200, ..Default::default() };
    let trainer = Trainer::new(scenario.clone(), config.clone(), RewardWeights::default(), 3).unwrap();
    let ctx = RolloutContext { scenario: &scenario, config: &config, weights: trainer.weights, b_e: trainer.b_e().unwrap() };
    let buffer = collect_rollouts(&trainer.agent, ctx, 3, 0).unwrap();
    let samples = build_samples(&buffer, &config).unwrap();
    c.bench_function("collect_rollouts_desk_400", |b| b.iter(|| collect_rollouts(&trainer.agent, ctx, 3, 0).unwrap()));
    c.bench_function("minibatch_loss_200", |b| {
        b.iter(|| minibatch_loss(&trainer.agent, black_box(&samples[..200]), &config).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = world_step, mlp, loss
}
criterion_main!(benches);
