use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nalgebra::DVector;

use raysense_core::beam::{self, BeamState};
use raysense_core::caustics;
use raysense_core::flow;
use raysense_core::xray::{self, TestFunction};
use raysense_core::{Domain, Tolerance, VelocityField};

fn lens() -> VelocityField {
    VelocityField::gaussian_lens(Domain::unit_ball(3), 0.3, 0.5).unwrap()
}

fn kernels(c: &mut Criterion) {
    let f = lens();
    let tol = Tolerance::default();
    let p0 = flow::entering_line(&f, &[1.0, 0.2, 0.1], &[0.0, 0.2, -0.1]).unwrap();

    c.bench_function("scattering_relation", |b| {
        b.iter(|| flow::scattering_relation(&f, black_box(&p0), &tol, 20.0).unwrap())
    });

    let g = TestFunction::bump(&[0.2, -0.1, 0.1], 0.3, &[0.3, -0.2, 0.5, 1.0, 0.4, -0.7]);
    c.bench_function("transform_one_ray", |b| b.iter(|| xray::transform(&f, &g, black_box(&p0), &tol).unwrap()));

    let s0 = BeamState::initial(p0.x.clone(), p0.xi.clone(), 0.0);
    c.bench_function("beam_propagate", |b| {
        b.iter(|| beam::propagate_beam(&f, black_box(&s0), 0.0, 2.0, &tol).unwrap())
    });

    let x = DVector::from_vec(vec![0.3, 0.1, 0.0]);
    let xi = DVector::from_vec(vec![1.2, 0.3, -0.4]);
    let tt = caustics::tight_tolerance();
    c.bench_function("dphi", |b| b.iter(|| caustics::dphi(&f, &x, black_box(&xi), &tt).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = kernels
}
criterion_main!(benches);
