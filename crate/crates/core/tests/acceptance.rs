//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Criteria are property-based: the published headline scores need the full
//! dataset, GPU training of four large backbones, and the retired challenge
//! server, so what is checked here is that every pipeline stage is exact,
//! deterministic, and correct against independent oracles, within stated
//! runtime budgets on CPU.

mod common;

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::Array4;
use rand::Rng;

use derma_core::rng::seeded_rng;
use derma_core::*;

fn criterion<F>(number: u32, name: &str, budget: Option<Duration>, body: F)
where
    F: FnOnce(),
{
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    let in_budget = budget.map_or(true, |b| elapsed <= b);
    let status = if result.is_ok() && in_budget { "PASS" } else { "FAIL" };
    println!("acceptance criterion {number:02} ({name}): {status} [{elapsed:.2?}]");
    if let Err(panic) = result {
        resume_unwind(panic);
    }
    if let Some(budget) = budget {
        assert!(
            in_budget,
            "criterion {number} took {elapsed:?}, budget {budget:?}"
        );
    }
}

fn tiny_model(seed: u64) -> ClassifierModel {
    build_classifier(&BackboneDescriptor::lookup("tiny-test").unwrap(), None, seed).unwrap()
}

fn overfit_schedule(seed: u64) -> TrainSchedule {
    TrainSchedule {
        phase1_epochs: 1,
        phase1_lr: 1e-4,
        phase2_lr: 1e-2,
        max_epochs: 60,
        early_stop_patience: 100,
        batch_size: 4,
        seed,
    }
}

fn random_simplex(rng: &mut rand_chacha::ChaCha8Rng) -> ProbabilityVector {
    let mut values = [0.0; NUM_CLASSES];
    let mut sum = 0.0;
    for v in &mut values {
        *v = rng.random::<f64>() + 1e-3;
        sum += *v;
    }
    for v in &mut values {
        *v /= sum;
    }
    ProbabilityVector::new(values).unwrap()
}

#[test]
fn criterion_01_dataset_fidelity() {
    criterion(1, "dataset fidelity", Some(Duration::from_secs(10)), || {
        // The official table when available, otherwise a synthetic file with
        // the published row counts.
        let (_guard, path) = match std::env::var("ISIC2018_TASK3_GROUND_TRUTH") {
            Ok(path) if std::path::Path::new(&path).is_file() => (None, path.into()),
            _ => {
                let (dir, path) = common::synthetic_ground_truth(common::OFFICIAL_COUNTS);
                (Some(dir), path)
            }
        };
        let records =
            load_ground_truth(&path, std::path::Path::new("images"), ".jpg").unwrap();
        assert_eq!(records.len(), 10015);
        let dist = class_distribution(&records);
        for (class, expected) in LesionClass::ALL.iter().zip(common::OFFICIAL_COUNTS) {
            assert_eq!(dist.count(*class), expected, "count for {class}");
        }
        assert_eq!(dist.total(), 10015);
    });
}

#[test]
fn criterion_02_oversampling_balance() {
    criterion(2, "oversampling balance", Some(Duration::from_secs(5)), || {
        let records: Vec<SampleRecord> = LesionClass::ALL
            .iter()
            .zip(common::OFFICIAL_COUNTS)
            .flat_map(|(&class, count)| {
                (0..count).map(move |k| SampleRecord {
                    image_id: format!("{class}_{k}"),
                    image_path: format!("{class}_{k}.jpg").into(),
                    label: class,
                })
            })
            .collect();
        let dist = class_distribution(&records);
        let plan = build_oversample_plan(&dist, 7007).unwrap();
        for class in LesionClass::ALL {
            assert_eq!(plan.draws(class), 1001);
        }

        let epoch = sample_epoch(&records, &plan, &mut seeded_rng(17)).unwrap();
        assert_eq!(epoch.len(), 7007);
        let mut tally = [0usize; NUM_CLASSES];
        for &index in &epoch {
            tally[records[index].label.ordinal()] += 1;
        }
        assert_eq!(tally, [1001; NUM_CLASSES]);

        let replay = sample_epoch(&records, &plan, &mut seeded_rng(17)).unwrap();
        assert_eq!(epoch, replay);
        let other = sample_epoch(&records, &plan, &mut seeded_rng(18)).unwrap();
        assert_ne!(epoch, other);
    });
}

#[test]
fn criterion_03_augmentation_invariants() {
    criterion(3, "augmentation invariants", Some(Duration::from_secs(30)), || {
        let mut rng = seeded_rng(300);
        let image = ImageBuffer::from_fn(32, 32, |_, _, _| 0.1 + 0.8 * rng.random::<f64>());

        // Identity spec is a bitwise fixed point.
        let identity =
            apply_augmentation(&image, &AugmentationSpec::identity(), &mut seeded_rng(1)).unwrap();
        assert_eq!(identity, image);

        // Double horizontal flip restores the original exactly.
        let flip = AugmentationSpec {
            horizontal_flip_prob: 1.0,
            ..AugmentationSpec::identity()
        };
        let once = apply_augmentation(&image, &flip, &mut seeded_rng(2)).unwrap();
        let twice = apply_augmentation(&once, &flip, &mut seeded_rng(3)).unwrap();
        assert_eq!(twice, image);

        // Quarter turn against an index-permutation oracle.
        let quarter = AugmentationSpec {
            rotation_degrees: ValueRange::fixed(90.0),
            ..AugmentationSpec::identity()
        };
        let rotated = apply_augmentation(&image, &quarter, &mut seeded_rng(4)).unwrap();
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    assert_eq!(rotated.get(c, y, x), image.get(c, 31 - x, y));
                }
            }
        }

        // Same (image, spec, seed) is bit-identical across repeated runs and
        // across worker counts.
        let spec = AugmentationSpec::default();
        let epoch_seed = 777u64;
        let run_epoch = |threads: usize| -> Vec<ImageBuffer> {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                use rayon::prelude::*;
                (0..16u64)
                    .into_par_iter()
                    .map(|position| {
                        let mut rng = derma_core::train::augmentation_rng(epoch_seed, position);
                        apply_augmentation(&image, &spec, &mut rng).unwrap()
                    })
                    .collect()
            })
        };
        let single = run_epoch(1);
        let single_again = run_epoch(1);
        assert_eq!(single, single_again);
        for threads in [2usize, 4] {
            assert_eq!(run_epoch(threads), single, "worker count {threads}");
        }
    });
}

#[test]
fn criterion_04_preprocessing_oracles() {
    criterion(4, "preprocessing oracles", None, || {
        let mut rng = seeded_rng(404);
        let rgb = image::RgbImage::from_fn(23, 17, |_, _| {
            image::Rgb([rng.random(), rng.random(), rng.random()])
        });
        let dynamic = image::DynamicImage::ImageRgb8(rgb.clone());

        // Unit-range round trip is exact.
        let unit = to_unit_range(&dynamic).unwrap();
        for y in 0..17usize {
            for x in 0..23usize {
                for c in 0..3 {
                    let reconstructed = (unit.get(c, y, x) * 255.0).round() as u8;
                    assert_eq!(reconstructed, rgb.get_pixel(x as u32, y as u32)[c]);
                }
            }
        }

        // Mean subtraction inverts within 1e-12.
        let params = NormalizationParams::new([0.485, 0.456, 0.406]).unwrap();
        let centered = subtract_mean(&unit, &params);
        for c in 0..3 {
            for y in 0..17 {
                for x in 0..23 {
                    let restored = centered.get(c, y, x) + params.channel_means[c];
                    assert!((restored - unit.get(c, y, x)).abs() < 1e-12);
                }
            }
        }

        // Resize to own size is the identity within 1e-9 (bitwise, in fact).
        let resized = resize(&unit, 17, 23).unwrap();
        for (a, b) in resized.data().iter().zip(unit.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    });
}

#[test]
fn criterion_05_frozen_phase_contract() {
    criterion(5, "frozen-phase contract", Some(Duration::from_secs(60)), || {
        let fixture = common::image_fixture([2; 7], 32);
        let records = fixture.records.clone();
        let data = TrainData {
            train: &records,
            holdout: &records,
        };
        let plan = build_oversample_plan(&class_distribution(&records), 14).unwrap();
        let model = tiny_model(55);
        let before = model.snapshot();
        let mut trainer = Trainer::new(
            model,
            TrainSchedule {
                phase1_epochs: 2,
                max_epochs: 3,
                ..overfit_schedule(505)
            },
            AugmentationSpec::default(),
            plan,
            NormalizationParams::zero(),
        )
        .unwrap();

        let bits = |arrays: &[NamedArray], prefix: &str| -> Vec<u64> {
            arrays
                .iter()
                .filter(|a| a.name.starts_with(prefix))
                .flat_map(|a| a.data.iter().map(|v| v.to_bits()))
                .collect()
        };

        trainer.step_epoch(&data, None).unwrap();
        trainer.step_epoch(&data, None).unwrap();
        let after_phase1 = trainer.model().snapshot();
        assert_eq!(bits(&before, "backbone."), bits(&after_phase1, "backbone."));
        assert_ne!(bits(&before, "head."), bits(&after_phase1, "head."));

        let record = trainer.step_epoch(&data, None).unwrap();
        assert_eq!(record.trainability, TrainabilityMode::All);
        let after_phase2 = trainer.model().snapshot();
        assert_ne!(
            bits(&after_phase1, "backbone."),
            bits(&after_phase2, "backbone.")
        );
    });
}

#[test]
fn criterion_06_gradient_correctness() {
    criterion(6, "head gradient check", None, || {
        let mut model = tiny_model(66);
        let mut rng = seeded_rng(606);
        let batch = Array4::from_shape_fn((2, 3, 32, 32), |_| rng.random::<f64>());
        let labels = vec![LesionClass::Mel, LesionClass::Bkl];

        let (logits, cache) = model.forward_logits(&batch).unwrap();
        let (_, dlogits) = train::softmax_cross_entropy_grad(&logits, &labels);
        model.zero_grads();
        model.backward(&cache, &dlogits);
        let analytic: Vec<(String, Vec<f64>)> = model
            .grad_views()
            .into_iter()
            .filter(|v| v.name.starts_with("head."))
            .map(|v| (v.name.to_string(), v.values.to_vec()))
            .collect();

        let loss_of = |model: &ClassifierModel| -> f64 {
            let (logits, _) = model.forward_logits(&batch).unwrap();
            train::softmax_cross_entropy_grad(&logits, &labels).0
        };

        let step = 1e-5;
        let head_params: Vec<NamedArray> = model
            .snapshot()
            .into_iter()
            .filter(|a| a.name.starts_with("head."))
            .collect();
        let mut checked = 0usize;
        for array in &head_params {
            let grads = &analytic
                .iter()
                .find(|(name, _)| name == &array.name)
                .expect("gradient for every head param")
                .1;
            for index in 0..array.data.len() {
                let mut plus = array.data.clone();
                plus[index] += step;
                model.set_param(&array.name, &plus).unwrap();
                let loss_plus = loss_of(&model);

                let mut minus = array.data.clone();
                minus[index] -= step;
                model.set_param(&array.name, &minus).unwrap();
                let loss_minus = loss_of(&model);

                model.set_param(&array.name, &array.data).unwrap();
                let fd = (loss_plus - loss_minus) / (2.0 * step);
                let a = grads[index];
                let denom = a.abs().max(fd.abs()).max(1e-8);
                assert!(
                    ((a - fd) / denom).abs() < 1e-3,
                    "{}[{index}]: analytic {a} vs central difference {fd}",
                    array.name
                );
                checked += 1;
            }
        }
        assert_eq!(checked, NUM_CLASSES * 16 + NUM_CLASSES);
    });
}

#[test]
fn criterion_07_overfit_oracle() {
    criterion(7, "overfit oracle", Some(Duration::from_secs(180)), || {
        let mut per_class = [1usize; 7];
        per_class[LesionClass::Nv.ordinal()] = 2;
        let fixture = common::image_fixture(per_class, 32);
        let records = fixture.records.clone();
        assert_eq!(records.len(), 8);
        let plan = build_oversample_plan(&class_distribution(&records), 56).unwrap();

        let run = || -> (f64, Vec<f64>) {
            let mut trainer = Trainer::new(
                tiny_model(70),
                overfit_schedule(707),
                AugmentationSpec::identity(),
                plan.clone(),
                NormalizationParams::zero(),
            )
            .unwrap();
            trainer
                .run(
                    &TrainData {
                        train: &records,
                        holdout: &records,
                    },
                    None,
                )
                .unwrap();
            let predictions = predict_records(
                trainer.model(),
                &records,
                &NormalizationParams::zero(),
                4,
                "memo",
            )
            .unwrap();
            let labels: Vec<LesionClass> = records.iter().map(|r| r.label).collect();
            let probs: Vec<ProbabilityVector> = records
                .iter()
                .map(|r| *predictions.get(&r.image_id).unwrap())
                .collect();
            (
                mean_cross_entropy(&probs, &labels),
                trainer.history().iter().map(|r| r.train_loss).collect(),
            )
        };

        // Single-threaded for the reproducibility clause.
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let (mean_a, losses_a) = pool.install(&run);
        assert!(
            mean_a < 0.05,
            "mean training cross-entropy {mean_a} after {} epochs",
            losses_a.len()
        );
        let (_, losses_b) = pool.install(&run);
        assert_eq!(losses_a.len(), losses_b.len());
        for (a, b) in losses_a.iter().zip(&losses_b) {
            assert!((a - b).abs() < 1e-9, "loss replay differs: {a} vs {b}");
        }
    });
}

#[test]
fn criterion_08_early_stopping_semantics() {
    criterion(8, "early stopping semantics", None, || {
        // Enumerate every monotone or unimodal score sequence of length <= 8
        // over an 8-level score alphabet (rise then fall, either part may be
        // empty; plateaus allowed).
        const LEVELS: usize = 8;
        fn record(epoch: usize, score: f64) -> EpochRecord {
            EpochRecord {
                epoch,
                train_loss: 1.0,
                validation_score: score,
                learning_rate: 1e-4,
                trainability: TrainabilityMode::HeadOnly,
                wall_seconds: 0.0,
            }
        }

        fn check_sequence(scores: &[f64], checked: &mut u64) {
            for patience in 1usize..=3 {
                // Independent oracle: scan prefixes, tracking the earliest
                // argmax by explicit comparison.
                let mut expected_fire = None;
                for t in 1..=scores.len() {
                    let mut best = 0usize;
                    for i in 0..t {
                        if scores[i] > scores[best] {
                            best = i;
                        }
                    }
                    if (t - 1) - best > patience {
                        expected_fire = Some((t, best + 1));
                        break;
                    }
                }
                if let Some((fire, best_epoch)) = expected_fire {
                    // The check fires exactly at best + patience + 1.
                    assert_eq!(fire, best_epoch + patience + 1);
                }

                let history: Vec<EpochRecord> = scores
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| record(i + 1, s))
                    .collect();
                for t in 1..=scores.len() {
                    let fired = early_stop_check(&history[..t], patience);
                    let expected = matches!(expected_fire, Some((fire, _)) if t == fire);
                    if t < expected_fire.map_or(usize::MAX, |(fire, _)| fire) {
                        assert!(!fired, "fired early at {t} for {scores:?} p={patience}");
                    }
                    if expected {
                        assert!(fired, "did not fire at {t} for {scores:?} p={patience}");
                    }
                }
                *checked += 1;
            }
        }

        // Depth-first enumeration; the up/down phase switch is deterministic
        // per value sequence, so each sequence is visited exactly once.
        fn extend(seq: &mut Vec<usize>, rising: bool, checked: &mut u64) {
            if seq.len() == 8 {
                return;
            }
            for next in 0..LEVELS {
                let last = *seq.last().unwrap();
                let ok = if rising { true } else { next <= last };
                if !ok {
                    continue;
                }
                let next_rising = rising && next >= last;
                if !rising && next > last {
                    continue;
                }
                seq.push(next);
                let scores: Vec<f64> = seq.iter().map(|&v| 0.1 + v as f64 / 10.0).collect();
                check_sequence(&scores, checked);
                extend(seq, next_rising, checked);
                seq.pop();
            }
        }

        let mut checked = 0u64;
        for first in 0..LEVELS {
            let mut seq = vec![first];
            let scores = vec![0.1 + first as f64 / 10.0];
            check_sequence(&scores, &mut checked);
            extend(&mut seq, true, &mut checked);
        }
        assert!(checked > 100_000, "only {checked} sequence/patience pairs");
    });
}

#[test]
fn criterion_09_ensemble_properties() {
    criterion(9, "ensemble properties", None, || {
        let mut rng = seeded_rng(909);
        for case in 0..1000u32 {
            let member_count = rng.random_range(1..=4usize);
            let image_count = rng.random_range(1..=5usize);
            let ids: Vec<String> = (0..image_count).map(|i| format!("img_{i}")).collect();
            let members: Vec<PredictionSet> = (0..member_count)
                .map(|m| {
                    PredictionSet::from_entries(
                        &format!("m{m}"),
                        ids.iter().map(|id| (id.clone(), random_simplex(&mut rng))),
                    )
                    .unwrap()
                })
                .collect();
            let weights: Option<Vec<f64>> = if rng.random::<f64>() < 0.5 {
                Some((0..member_count).map(|_| rng.random::<f64>() + 0.1).collect())
            } else {
                None
            };

            let fused = fuse(&members, weights.as_deref(), FusionMode::Arithmetic).unwrap();
            for (id, vector) in fused.iter() {
                let values = vector.values();
                let sum: f64 = values.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9, "case {case}");
                for class in 0..NUM_CLASSES {
                    let column: Vec<f64> = members
                        .iter()
                        .map(|m| m.get(id).unwrap().values()[class])
                        .collect();
                    let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    assert!(values[class] >= lo - 1e-12 && values[class] <= hi + 1e-12);
                }
            }

            if member_count == 1 {
                for (id, vector) in members[0].iter() {
                    let out = fused.get(id).unwrap().values();
                    for (a, b) in out.iter().zip(vector.values().iter()) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }

            // Permutation invariance under uniform weights.
            if weights.is_none() && member_count > 1 {
                let mut reversed = members.clone();
                reversed.reverse();
                let fused_reversed = fuse(&reversed, None, FusionMode::Arithmetic).unwrap();
                for (id, vector) in fused.iter() {
                    let other = fused_reversed.get(id).unwrap();
                    for (a, b) in vector.values().iter().zip(other.values().iter()) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }

        // Ensemble of four identical sets equals any member.
        let member = PredictionSet::from_entries(
            "same",
            (0..6).map(|i| (format!("x{i}"), random_simplex(&mut rng))),
        )
        .unwrap();
        let fused = fuse(
            &[member.clone(), member.clone(), member.clone(), member.clone()],
            None,
            FusionMode::Arithmetic,
        )
        .unwrap();
        for (id, vector) in member.iter() {
            let out = fused.get(id).unwrap();
            for (a, b) in out.values().iter().zip(vector.values().iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(out.argmax().0, vector.argmax().0);
        }
    });
}

#[test]
fn criterion_10_metric_oracles() {
    criterion(10, "metric oracles", None, || {
        let mut rng = seeded_rng(1010);
        for case in 0..100u32 {
            let n = rng.random_range(1..=60usize);
            let pairs: Vec<(LesionClass, LesionClass)> = (0..n)
                .map(|_| {
                    (
                        LesionClass::from_ordinal(rng.random_range(0..NUM_CLASSES)).unwrap(),
                        LesionClass::from_ordinal(rng.random_range(0..NUM_CLASSES)).unwrap(),
                    )
                })
                .collect();

            // Drive the real confusion path through prediction vectors whose
            // argmax is the chosen predicted class.
            let truth: Vec<SampleRecord> = pairs
                .iter()
                .enumerate()
                .map(|(i, &(t, _))| SampleRecord {
                    image_id: format!("case{case}_{i}"),
                    image_path: format!("case{case}_{i}.jpg").into(),
                    label: t,
                })
                .collect();
            let predictions = PredictionSet::from_entries(
                "oracle",
                pairs.iter().enumerate().map(|(i, &(_, p))| {
                    let mut values = [0.02; NUM_CLASSES];
                    values[p.ordinal()] = 0.88;
                    (
                        format!("case{case}_{i}"),
                        ProbabilityVector::new(values).unwrap(),
                    )
                }),
            )
            .unwrap();
            let matrix = confusion(&predictions, &truth).unwrap();

            // Independent tallies straight from the pairs.
            let mut cells = [[0usize; NUM_CLASSES]; NUM_CLASSES];
            for &(t, p) in &pairs {
                cells[t.ordinal()][p.ordinal()] += 1;
            }
            let mut correct = 0usize;
            for (i, row) in cells.iter().enumerate() {
                correct += row[i];
                for (j, &count) in row.iter().enumerate() {
                    let t = LesionClass::from_ordinal(i).unwrap();
                    let p = LesionClass::from_ordinal(j).unwrap();
                    assert_eq!(matrix.get(t, p), count);
                }
            }
            assert_eq!(matrix.total(), n);
            assert_eq!(matrix.trace(), correct);

            let plain = accuracy(&matrix).unwrap();
            assert!((plain - correct as f64 / n as f64).abs() < 1e-12);

            let mut recall_sum = 0.0;
            let mut present = 0usize;
            for i in 0..NUM_CLASSES {
                let row: usize = cells[i].iter().sum();
                if row > 0 {
                    recall_sum += cells[i][i] as f64 / row as f64;
                    present += 1;
                }
            }
            let balanced = balanced_accuracy(&matrix).unwrap();
            assert!((balanced - recall_sum / present as f64).abs() < 1e-12);

            let per_class = per_class_metrics(&matrix);
            for i in 0..NUM_CLASSES {
                let tp = cells[i][i];
                let row: usize = cells[i].iter().sum();
                let column: usize = (0..NUM_CLASSES).map(|r| cells[r][i]).sum();
                let fp = column - tp;
                let tn = n - row - fp;
                let metrics = per_class[i];
                match metrics.sensitivity {
                    Some(s) => assert!((s - tp as f64 / row as f64).abs() < 1e-12),
                    None => assert_eq!(row, 0),
                }
                match metrics.specificity {
                    Some(s) => assert!((s - tn as f64 / (tn + fp) as f64).abs() < 1e-12),
                    None => assert_eq!(tn + fp, 0),
                }
            }
        }

        // Perfect predictions score 1.0 everywhere.
        let mut perfect = ConfusionMatrix::new();
        for class in LesionClass::ALL {
            for _ in 0..3 {
                perfect.increment(class, class);
            }
        }
        assert_eq!(balanced_accuracy(&perfect).unwrap(), 1.0);
        assert_eq!(accuracy(&perfect).unwrap(), 1.0);

        // Cross-entropy of the uniform prediction is ln 7.
        let ce = cross_entropy(&ProbabilityVector::uniform(), LesionClass::Df);
        assert!((ce - 7f64.ln()).abs() < 1e-9);
    });
}

#[test]
fn criterion_11_submission_round_trip() {
    criterion(11, "submission round trip", None, || {
        let mut rng = seeded_rng(1111);
        let entries: Vec<(String, ProbabilityVector)> = (0..193)
            .map(|i| (format!("ISIC_{i:07}"), random_simplex(&mut rng)))
            .collect();
        let predictions = PredictionSet::from_entries("validation", entries).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path_a = dir.path().join("a.csv");
        let path_b = dir.path().join("b.csv");
        write_submission(&predictions, &path_a).unwrap();
        write_submission(&predictions, &path_b).unwrap();

        let bytes_a = std::fs::read(&path_a).unwrap();
        let bytes_b = std::fs::read(&path_b).unwrap();
        assert_eq!(bytes_a, bytes_b, "submission files must be byte-stable");

        let text = String::from_utf8(bytes_a).unwrap();
        assert_eq!(text.lines().count(), 194, "header plus 193 rows");

        let loaded = read_submission(&path_a, "validation").unwrap();
        assert_eq!(loaded.len(), 193);
        for (id, vector) in predictions.iter() {
            let out = loaded.get(id).unwrap().values();
            for (a, b) in out.iter().zip(vector.values().iter()) {
                assert!((a - b).abs() < 5e-7);
            }
        }
    });
}

#[test]
fn criterion_12_resume_equivalence() {
    criterion(12, "resume equivalence", Some(Duration::from_secs(120)), || {
        let fixture = common::image_fixture([2; 7], 32);
        let records = fixture.records.clone();
        let plan = build_oversample_plan(&class_distribution(&records), 14).unwrap();
        let schedule = TrainSchedule {
            max_epochs: 3,
            ..overfit_schedule(1212)
        };
        let data = TrainData {
            train: &records,
            holdout: &records,
        };

        let mut full = Trainer::new(
            tiny_model(12),
            schedule,
            AugmentationSpec::default(),
            plan.clone(),
            NormalizationParams::zero(),
        )
        .unwrap();
        full.run(&data, None).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut interrupted = Trainer::new(
            tiny_model(12),
            TrainSchedule {
                max_epochs: 2,
                ..schedule
            },
            AugmentationSpec::default(),
            plan.clone(),
            NormalizationParams::zero(),
        )
        .unwrap();
        interrupted.run(&data, Some(dir.path())).unwrap();

        let checkpoint = load_checkpoint(&dir.path().join("last.ckpt")).unwrap();
        let mut resumed = Trainer::resume(
            checkpoint,
            schedule,
            AugmentationSpec::default(),
            plan,
            NormalizationParams::zero(),
        )
        .unwrap();
        resumed.run(&data, None).unwrap();

        assert_eq!(full.history().len(), 3);
        assert_eq!(resumed.history().len(), 3);
        for (a, b) in full.history().iter().zip(resumed.history()) {
            assert!(
                (a.train_loss - b.train_loss).abs() < 1e-9,
                "epoch {} loss {} vs {}",
                a.epoch,
                a.train_loss,
                b.train_loss
            );
            assert!((a.validation_score - b.validation_score).abs() < 1e-9);
        }
    });
}
