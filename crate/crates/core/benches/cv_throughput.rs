use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use chrono::NaiveDate;
use wxkrig_core::covariance::SphericalModel;
use wxkrig_core::evaluation::{cv_daily, kfold_split, run_two_stage, EvalConfig};
use wxkrig_core::indexes::IndexKind;
use wxkrig_core::interpolators::Method;
use wxkrig_core::par::Execution;
use wxkrig_core::synthetic::demo_panel;

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn panel(stations: usize, days: usize) -> wxkrig_core::ObservationPanel {
    let model = SphericalModel::new(1.0, 300.0, 0.0).unwrap();
    let start = NaiveDate::from_ymd_opt(1990, 1, 1).unwrap();
    demo_panel(stations, start, days, &model, 42).unwrap()
}

fn cv_daily_modes(c: &mut Criterion) {
    let p = panel(138, 60);
    let ids: Vec<&str> = p.stations.iter().map(|s| s.id.as_str()).collect();
    let folds = kfold_split(&ids, 10, 42).unwrap();
    let mut group = c.benchmark_group("cv_daily");
    group.sample_size(10);
    group.throughput(Throughput::Elements(p.n_days() as u64));
    for method in [Method::Idw, Method::Ok, Method::Tgk] {
        for (name, execution) in MODES {
            let cfg = EvalConfig {
                execution,
                ..EvalConfig::default()
            };
            group.bench_with_input(BenchmarkId::new(method.as_str(), name), &cfg, |b, cfg| {
                b.iter(|| cv_daily(black_box(&p), method, &folds, cfg).unwrap())
            });
        }
    }
    group.finish();
}

fn two_stage_modes(c: &mut Criterion) {
    let p = panel(60, 365);
    let ids: Vec<&str> = p.stations.iter().map(|s| s.id.as_str()).collect();
    let folds = kfold_split(&ids, 10, 42).unwrap();
    let mut group = c.benchmark_group("two_stage_mfp_idw");
    group.sample_size(10);
    for (name, execution) in MODES {
        let cfg = EvalConfig {
            execution,
            ..EvalConfig::default()
        };
        group.bench_function(name, |b| {
            b.iter(|| run_two_stage(black_box(&p), IndexKind::Mfp, Method::Idw, &folds, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, cv_daily_modes, two_stage_modes);
criterion_main!(benches);
