use criterion::{criterion_group, criterion_main, Criterion};
use mrgan::geom::{dense_grid, extract_view, EquirectImage, Interp};
use mrgan::model::{Generator, GeneratorConfig};
use mrgan::tensor::eager::conv2d;
use mrgan::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn convolution(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random(&[24, 64, 64], &mut rng);
    let k = random(&[24, 24, 3, 3], &mut rng);
    let b = random(&[24], &mut rng);
    for d in [1, 4] {
        c.bench_function(&format!("conv2d 24x64x64 3x3 dilation {d}"), |bench| {
            bench.iter(|| conv2d(black_box(&x), &k, Some(&b), d).unwrap())
        });
    }
}

fn viewport(c: &mut Criterion) {
    let erp = EquirectImage::from_fn(512, 3, |lon, lat| vec![lon.to_radians().sin(), lat.to_radians().cos(), 0.5]).unwrap();
    let views = dense_grid(10.0, 90.0, 128, 128).unwrap();
    let view = &views[views.len() / 3];
    for interp in [Interp::Nearest, Interp::Bilinear] {
        c.bench_function(&format!("extract_view 512x256 to 128x128 {interp:?}"), |bench| {
            bench.iter(|| extract_view(black_box(&erp), view, interp).unwrap())
        });
    }
}

fn generator(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gen = Generator::init(GeneratorConfig::default(), &mut rng).unwrap();
    let image = random(&[3, 32, 32], &mut rng);
    let mut group = c.benchmark_group("generator 32x32");
    group.sample_size(10);
    for stages in [1, 3] {
        group.bench_function(format!("{stages} stages"), |bench| bench.iter(|| gen.predict(black_box(&image), stages).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, convolution, viewport, generator);
criterion_main!(benches);
