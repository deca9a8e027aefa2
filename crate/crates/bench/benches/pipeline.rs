use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use retouch_bench::test_image;
use retouch_core::{
    apply_filter, Agents, FilterKind, RetouchStep, ScoreKind, Session, SessionConfig, StatsProvider,
};

fn filters(c: &mut Criterion) {
    let img = test_image(512, 384);
    let mut group = c.benchmark_group("filter");
    for kind in FilterKind::ALL {
        let step = RetouchStep::new(kind, 0.5).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(kind), &step, |b, step| {
            b.iter(|| apply_filter(&img, *step).unwrap())
        });
    }
    group.finish();
}

fn scoring(c: &mut Criterion) {
    let img = test_image(512, 384);
    let refs: Vec<_> = (0..5)
        .map(|i| apply_filter(&img, RetouchStep::new(FilterKind::Exposure, 0.1 * i as f64).unwrap()).unwrap())
        .collect();
    let mut group = c.benchmark_group("score");
    for kind in [ScoreKind::ClipKlGlobal, ScoreKind::RgbHist, ScoreKind::YuvHist] {
        let target = kind.scorer(Arc::new(StatsProvider)).target(&refs).unwrap();
        group.bench_function(format!("{kind:?}"), |b| b.iter(|| target.score(&img).unwrap()));
    }
    group.finish();
}

fn iteration(c: &mut Criterion) {
    let img = test_image(256, 192);
    let target = apply_filter(&img, RetouchStep::new(FilterKind::Exposure, 0.6).unwrap()).unwrap();
    let scorer = ScoreKind::ClipKlGlobal.scorer(Arc::new(StatsProvider));
    let config = SessionConfig { warm_start: false, ..SessionConfig::default() };
    let agents = Agents::rule();
    c.bench_function("rule iteration", |b| {
        b.iter_batched(
            || Session::new_reference(img.clone(), vec![target.clone()], config.clone(), &scorer).unwrap(),
            |mut session| session.run_iteration(&agents).map(|r| r.outcome.clone()).unwrap(),
            criterion::BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, filters, scoring, iteration);
criterion_main!(benches);
