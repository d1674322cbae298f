use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use curvjm_core::config::FitConfig;
use curvjm_core::evalreport::psis_loo;
use curvjm_core::jointmodel::Posterior;
use curvjm_core::pipeline::build_model;
use curvjm_core::simgen::{generate, Case, ScenarioConfig};
use curvjm_core::splinecore::{build_ortho_basis, KnotConfig};
use curvjm_core::trajectory::{Representation, WivKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn basis(c: &mut Criterion) {
    let cfg = KnotConfig::uniform_cubic(40, 0.0, 10.0).unwrap();
    c.bench_function("bspline/eval_nonzero_d2", |b| {
        let mut t = 0.0;
        b.iter(|| {
            t = (t + 0.137) % 10.0;
            black_box(cfg.eval_nonzero(black_box(t), 2).unwrap())
        })
    });
    let ext = cfg.clone().with_extended_boundary();
    c.bench_function("ortho/build_k40_grid401", |b| b.iter(|| black_box(build_ortho_basis(&ext, 401, 0.999).unwrap())));
}

fn gradient(c: &mut Criterion) {
    let ds = generate(&ScenarioConfig::new(Case::Case1, WivKind::Current, 300, 1)).unwrap().dataset;
    let mut group = c.benchmark_group("log_density_and_grad/n300");
    for (rep, wiv) in [
        (Representation::Rspline, WivKind::Current),
        (Representation::Pspline, WivKind::Current),
        (Representation::Pspline, WivKind::Cumulative),
        (Representation::Fpca, WivKind::Current),
    ] {
        let cfg = FitConfig { representation: rep, wiv, ..FitConfig::default() };
        let post = Posterior::new(build_model(&cfg, &ds).unwrap(), &ds).unwrap();
        let x = post.initial_point(3).unwrap();
        let mut g = vec![0.0; post.dim()];
        group.bench_function(format!("{}/{wiv:?}", rep.label()), |b| {
            b.iter(|| black_box(post.log_density_and_grad(black_box(&x), &mut g)))
        });
    }
    group.finish();
}

fn loo(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<Vec<f64>> = (0..2000).map(|_| (0..300).map(|_| -rng.random_range(0.1..4.0f64)).collect()).collect();
    let ids: Vec<u64> = (0..300).collect();
    c.bench_function("psis_loo/2000x300", |b| {
        b.iter_batched(|| rows.clone(), |r| black_box(psis_loo(&r, &ids).unwrap()), BatchSize::LargeInput)
    });
}

criterion_group!(benches, basis, gradient, loo);
criterion_main!(benches);
