use criterion::{black_box, criterion_group, criterion_main, Criterion};
use eer_core::data::{generate_induction_batch, TaskMode};
use eer_core::loss::{seq_loss_components, total_loss};
use eer_core::model::{forward_batch, forward_logits, looped_forward, ModelDims};
use eer_core::tape::Tape;
use eer_core::train::EERConfig;
use eer_core::{AttentionMap, ModelWeights, SeededRng, Tensor};

fn bench_matmul(c: &mut Criterion) {
    let mut rng = SeededRng::new(1);
    let a = Tensor::from_fn(64, 64, |_, _| rng.uniform(-1.0, 1.0));
    let b = Tensor::from_fn(64, 8, |_, _| rng.uniform(-1.0, 1.0));
    c.bench_function("matmul_64x64_64x8", |bench| {
        bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap())
    });
}

fn bench_row_softmax(c: &mut Criterion) {
    let mut rng = SeededRng::new(2);
    let logits = Tensor::from_fn(64, 64, |_, _| rng.uniform(-3.0, 3.0));
    c.bench_function("row_softmax_64x64", |bench| {
        bench.iter(|| black_box(&logits).row_softmax(1.0).unwrap())
    });
}

fn bench_forward(c: &mut Criterion) {
    let cfg = EERConfig::default();
    let mut rng = SeededRng::new(3);
    let weights = ModelWeights::init(&cfg.dims(), &mut rng);
    let batch = generate_induction_batch(&mut rng, 4, 1, 64, TaskMode::FullSequence).unwrap();
    let fwd = cfg.forward_config();
    c.bench_function("forward_logits_L64_T25", |bench| {
        bench.iter(|| forward_logits(black_box(batch.tokens(0)), &weights, &fwd).unwrap())
    });
}

fn bench_backward(c: &mut Criterion) {
    let cfg = EERConfig::default();
    let mut rng = SeededRng::new(4);
    let weights = ModelWeights::init(&cfg.dims(), &mut rng);
    let batch = generate_induction_batch(&mut rng, 4, 1, 32, TaskMode::FullSequence).unwrap();
    let fwd = cfg.forward_config();
    let loss_cfg = cfg.loss_config();
    c.bench_function("train_step_seq_L32_T25", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let tracked = weights.tracked(&mut tape);
            let trace = looped_forward(&mut tape, batch.tokens(0), &tracked, &fwd).unwrap();
            let parts =
                seq_loss_components(&mut tape, &trace, batch.targets(0), &loss_cfg).unwrap();
            let scalar = tape.affine(&parts.ce_sum, 1e-2, 0.0).unwrap();
            black_box(tape.backward(&scalar).unwrap());
        })
    });
}

fn bench_certificate(c: &mut Criterion) {
    let dims = ModelDims {
        d: 8,
        d_ff: 32,
        vocab: 4,
    };
    let mut rng = SeededRng::new(5);
    let weights = ModelWeights::init(&dims, &mut rng);
    let logits = Tensor::from_fn(16, 16, |_, _| rng.uniform(-2.0, 2.0));
    let map = AttentionMap::new(logits.row_softmax(1.0).unwrap()).unwrap();
    c.bench_function("contraction_certificate_16", |bench| {
        bench.iter(|| {
            eer_core::bounds::contraction_certificate(black_box(&weights), &map, 1.5, 25).unwrap()
        })
    });
}

fn bench_total_loss(c: &mut Criterion) {
    let cfg = EERConfig::default();
    let mut rng = SeededRng::new(6);
    let weights = ModelWeights::init(&cfg.dims(), &mut rng);
    let batch = generate_induction_batch(&mut rng, 4, 4, 32, TaskMode::FullSequence).unwrap();
    let fwd = cfg.forward_config();
    let loss_cfg = cfg.loss_config();
    c.bench_function("total_loss_B4_L32_T25", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let traces = forward_batch(&mut tape, &batch, &weights, &fwd).unwrap();
            black_box(total_loss(&mut tape, &traces, &batch, &loss_cfg).unwrap());
        })
    });
}

criterion_group!(
    benches,
    bench_matmul,
    bench_row_softmax,
    bench_forward,
    bench_backward,
    bench_certificate,
    bench_total_loss
);
criterion_main!(benches);
