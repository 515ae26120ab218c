//! Benchmarks for the pipeline hot paths: per-sample augmentation, epoch
//! sampling over a full-size record list, the tiny backbone's training step,
//! probability fusion, and confusion tallying.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use ndarray::Array4;
use rand::Rng;

use derma_core::rng::seeded_rng;
use derma_core::train::softmax_cross_entropy_grad;
use derma_core::*;

fn records_like_the_training_set() -> Vec<SampleRecord> {
    let counts = [1113usize, 6705, 514, 327, 1099, 115, 142];
    LesionClass::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&class, count)| {
            (0..count).map(move |k| SampleRecord {
                image_id: format!("{class}_{k}"),
                image_path: format!("{class}_{k}.jpg").into(),
                label: class,
            })
        })
        .collect()
}

fn bench_augmentation(c: &mut Criterion) {
    let mut rng = seeded_rng(1);
    let image = ImageBuffer::from_fn(224, 224, |_, _, _| rng.random());
    let spec = AugmentationSpec::default();
    c.bench_function("augment_224px_default_spec", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            let mut rng = seeded_rng(seed);
            black_box(apply_augmentation(&image, &spec, &mut rng).unwrap())
        })
    });
}

fn bench_epoch_sampling(c: &mut Criterion) {
    let records = records_like_the_training_set();
    let plan = build_oversample_plan(&class_distribution(&records), 7007).unwrap();
    c.bench_function("sample_epoch_10015_records_7007_draws", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            let mut rng = seeded_rng(seed);
            black_box(sample_epoch(&records, &plan, &mut rng).unwrap())
        })
    });
}

fn bench_training_step(c: &mut Criterion) {
    let descriptor = BackboneDescriptor::lookup("tiny-test").unwrap();
    let mut rng = seeded_rng(2);
    let batch = Array4::from_shape_fn((4, 3, 32, 32), |_| rng.random::<f64>());
    let labels = vec![
        LesionClass::Mel,
        LesionClass::Nv,
        LesionClass::Bcc,
        LesionClass::Df,
    ];
    c.bench_function("tiny_backbone_forward_backward_batch4", |b| {
        b.iter_batched(
            || {
                let mut model = build_classifier(&descriptor, None, 3).unwrap();
                model.set_trainable(TrainabilityMode::All);
                model
            },
            |mut model| {
                let (logits, cache) = model.forward_logits(&batch).unwrap();
                let (loss, dlogits) = softmax_cross_entropy_grad(&logits, &labels);
                model.zero_grads();
                model.backward(&cache, &dlogits);
                black_box(loss)
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_fusion(c: &mut Criterion) {
    let mut rng = seeded_rng(4);
    let mut simplex = || {
        let mut values = [0.0f64; NUM_CLASSES];
        let mut sum = 0.0;
        for v in &mut values {
            *v = rng.random::<f64>() + 1e-3;
            sum += *v;
        }
        for v in &mut values {
            *v /= sum;
        }
        ProbabilityVector::new(values).unwrap()
    };
    let members: Vec<PredictionSet> = (0..4)
        .map(|m| {
            PredictionSet::from_entries(
                &format!("m{m}"),
                (0..193).map(|i| (format!("ISIC_{i:07}"), simplex())),
            )
            .unwrap()
        })
        .collect();
    c.bench_function("fuse_4_members_193_images", |b| {
        b.iter(|| black_box(fuse(&members, None, FusionMode::Arithmetic).unwrap()))
    });
}

fn bench_confusion(c: &mut Criterion) {
    let records = records_like_the_training_set();
    let mut rng = seeded_rng(5);
    let predictions = PredictionSet::from_entries(
        "bench",
        records.iter().map(|r| {
            let mut values = [0.02f64; NUM_CLASSES];
            values[rng.random_range(0..NUM_CLASSES)] = 0.88;
            (
                r.image_id.clone(),
                ProbabilityVector::new(values).unwrap(),
            )
        }),
    )
    .unwrap();
    c.bench_function("confusion_10015_records", |b| {
        b.iter(|| black_box(confusion(&predictions, &records).unwrap()))
    });
}

criterion_group!(
    benches,
    bench_augmentation,
    bench_epoch_sampling,
    bench_training_step,
    bench_fusion,
    bench_confusion
);
criterion_main!(benches);
