use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use ndarray::Array2;
use npmm_core::dependence::{hypoexp_cdf_unchecked, BrownResnickSampler, DeltaField, DependenceParams, SiteSet};
use npmm_core::rng::stream_rng;
use npmm_core::spqr::{synthetic_loglik, Design, DesignRecord, Mlp, NetSpec, SiteModel, SplineBasis, SurrogateModel};
use npmm_core::vecchia::build_structure;

fn grid(n: usize) -> Vec<[f64; 2]> {
    let side = (n as f64).sqrt().ceil() as usize;
    (0..n)
        .map(|i| [(i % side) as f64 / side as f64, (i / side) as f64 / side as f64])
        .collect()
}

fn hypoexp(c: &mut Criterion) {
    c.bench_function("hypoexp_cdf x1000", |b| {
        b.iter(|| {
            let mut s = 0.0;
            for i in 0..1000 {
                let v = 0.01 * i as f64;
                s += hypoexp_cdf_unchecked(black_box(v), black_box(0.3));
            }
            s
        })
    });
}

fn brown_resnick(c: &mut Criterion) {
    let sampler = BrownResnickSampler::new(&grid(55), 1.0).unwrap();
    let mut rng = stream_rng(1, 0);
    c.bench_function("brown_resnick 55 sites", |b| b.iter(|| sampler.sample(black_box(0.076), &mut rng)));
}

fn surrogate(n: usize, m: usize) -> SurrogateModel {
    let coords = grid(n);
    let region = (0..n).map(|i| if i % 2 == 0 { 1 } else { 2 }).collect();
    let sites = SiteSet::new(coords, region).unwrap();
    let structure = build_structure(&sites, m).unwrap();
    let spec = NetSpec::default_for(m + 4);
    let mut rng = stream_rng(2, 0);
    let models = (1..n)
        .map(|p| SiteModel {
            position: p,
            net: Mlp::init(&spec, &mut rng).unwrap(),
            loss_trace: Vec::new(),
        })
        .collect();
    SurrogateModel {
        sites,
        structure,
        spec,
        basis: SplineBasis::cubic15(),
        design: DesignRecord {
            design: Design::default(),
            rows: 0,
            seed: 0,
        },
        models,
    }
}

fn network(c: &mut Criterion) {
    let spec = NetSpec::default_for(14);
    let net = Mlp::init(&spec, &mut stream_rng(3, 0)).unwrap();
    let x = Array2::from_shape_fn((1000, 14), |(i, j)| ((i * 7 + j * 3) % 100) as f64 / 100.0);
    c.bench_function("mlp forward 1000x14", |b| b.iter(|| net.forward(black_box(x.view())).unwrap()));
}

fn loglik(c: &mut Criterion) {
    let model = surrogate(55, 10);
    let u: Vec<f64> = (0..55).map(|i| (i as f64 + 0.5) / 55.0).collect();
    let params = DependenceParams {
        beta10: -1.0,
        beta11: 1.8,
        beta20: 0.2,
        beta21: 2.0,
        rho: 0.4,
        r: 0.88,
    };
    let deltas = DeltaField::constant(0.3, 0.6, 1);
    c.bench_function("synthetic_loglik 55 sites", |b| {
        b.iter(|| synthetic_loglik(black_box(&u), &params, &deltas, 0, &model, &model.structure).unwrap())
    });
}

criterion_group!(benches, hypoexp, brown_resnick, network, loglik);
criterion_main!(benches);
