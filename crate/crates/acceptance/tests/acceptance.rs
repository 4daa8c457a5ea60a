//! Exit criteria. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any fails.

use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use fer_core::eval::{render_comparison_report, EvalMetrics, LabeledDataset, BASELINES};
use fer_core::gradcheck::{grad_check, GradCheckReport};
use fer_core::model::ferw::{self, FormatError};
use fer_core::model::{LayerSpec, ModelSpec};
use fer_core::ops::{self, BatchNormParams, ConvParams, InputGrad, Mode};
use fer_core::train::{
    compute_class_weights, train, AdamHyper, AdamState, CheckpointPolicy, InMemorySamples, SampleSource, TrainConfig,
    Trainer,
};
use fer_core::{build_table1_model, fixtures, ClassificationResult, EmotionLabel, Model, Tensor};
use fer_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { name: "shape chain", budget: Some(Duration::from_secs(1)), run: shape_chain },
        Criterion { name: "gradient correctness", budget: Some(Duration::from_secs(60)), run: gradients },
        Criterion { name: "convolution oracle", budget: Some(Duration::from_secs(30)), run: conv_oracle },
        Criterion { name: "adam trace", budget: None, run: adam_trace },
        Criterion { name: "class-weight arithmetic", budget: None, run: class_weights },
        Criterion { name: "memorization sanity", budget: Some(Duration::from_secs(600)), run: memorization },
        Criterion { name: "frequency-bias mitigation", budget: None, run: bias_mitigation },
        Criterion { name: "serialization", budget: Some(Duration::from_secs(10)), run: serialization },
        Criterion { name: "metrics algebra", budget: None, run: metrics_algebra },
        Criterion { name: "report fidelity", budget: None, run: report_fidelity },
        Criterion { name: "service contract", budget: Some(Duration::from_secs(60)), run: service_contract },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let mut outcome = (c.run)();
        let elapsed = start.elapsed();
        if let (Ok(detail), Some(budget)) = (&outcome, c.budget) {
            if elapsed > budget {
                outcome = Err(format!("{detail}; took {elapsed:.1?}, budget {budget:?}"));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS  {:<26} {detail} ({elapsed:.2?})", c.name),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:<26} {detail} ({elapsed:.2?})", c.name);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn check(condition: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if condition {
        Ok(())
    } else {
        Err(message())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn shape_chain() -> Outcome {
    let trace = ModelSpec::table1().trace().map_err(err)?;
    let width = trace.flatten_width();
    check(width == Some(2048), || format!("flatten width {width:?}"))?;
    let model = build_table1_model(0);
    let sample = model.trace_shapes(&Tensor::zeros(&[224, 224, 3])).map_err(err)?;
    check(sample.flatten_width() == Some(2048), || "runtime trace disagrees".into())?;
    Ok("224×224×3 flattens to 2048".into())
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values at least 0.01 apart so no finite-difference step changes an argmax.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Tensor::new(shape, order.into_iter().map(|i| i as f64 * 0.01 - 0.5).collect()).unwrap()
}

/// Uniform values kept at least 0.05 away from zero.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn gradients() -> Outcome {
    const INSTANCES: u64 = 20;
    const TOLERANCE: f64 = 1e-4;
    type Check = fn(&mut ChaCha8Rng, u64) -> fer_core::Result<GradCheckReport>;
    let layers: [(&str, Check); 7] = [
        ("conv2d", |rng, seed| {
            let (n, h, w, cin, cout, k) = (
                rng.random_range(1..3),
                rng.random_range(3..7),
                rng.random_range(3..7),
                rng.random_range(1..3),
                rng.random_range(1..3),
                rng.random_range(1..4),
            );
            let k = k.min(h).min(w);
            let inputs = [
                ("input", uniform(&[n, h, w, cin], rng, -1.0, 1.0)),
                ("kernel", uniform(&[k, k, cin, cout], rng, -1.0, 1.0)),
                ("bias", uniform(&[cout], rng, -1.0, 1.0)),
            ];
            grad_check(
                &inputs,
                |v| ops::conv2d_forward(&v[0], &ConvParams::new(v[1].clone(), v[2].clone())?),
                |v, dy| {
                    let params = ConvParams::new(v[1].clone(), v[2].clone())?;
                    let (_, tape) = ops::conv2d(&v[0], &params)?;
                    let g = tape.backward(&params, dy, InputGrad::Compute)?;
                    Ok(vec![g.input.expect("requested"), g.kernel, g.bias])
                },
                TOLERANCE,
                seed,
            )
        }),
        ("relu", |rng, seed| {
            let shape = [rng.random_range(1..4), rng.random_range(1..9)];
            grad_check(
                &[("input", away_from_zero(&shape, rng))],
                |v| Ok(ops::relu(&v[0]).0),
                |v, dy| Ok(vec![ops::relu(&v[0]).1.backward(dy)?]),
                TOLERANCE,
                seed,
            )
        }),
        ("maxpool2", |rng, seed| {
            let shape = [rng.random_range(1..3), rng.random_range(2..7), rng.random_range(2..7), rng.random_range(1..3)];
            grad_check(
                &[("input", distinct(&shape, rng))],
                |v| Ok(ops::maxpool2(&v[0])?.0),
                |v, dy| Ok(vec![ops::maxpool2(&v[0])?.1.backward(dy)?]),
                TOLERANCE,
                seed,
            )
        }),
        ("batch_norm (train)", |rng, seed| {
            let c = rng.random_range(1..4);
            let shape = [rng.random_range(2..4), rng.random_range(1..4), rng.random_range(1..4), c];
            let inputs = [
                ("input", uniform(&shape, rng, -1.0, 1.0)),
                ("gamma", uniform(&[c], rng, 0.5, 1.5)),
                ("beta", uniform(&[c], rng, -0.5, 0.5)),
            ];
            let params = |v: &[Tensor<f64>]| BatchNormParams {
                gamma: v[1].clone(),
                beta: v[2].clone(),
                ..BatchNormParams::identity(v[1].len())
            };
            grad_check(
                &inputs,
                |v| Ok(ops::batch_norm(&v[0], &mut params(v), Mode::Train)?.0),
                |v, dy| {
                    let mut p = params(v);
                    let (_, tape) = ops::batch_norm(&v[0], &mut p, Mode::Train)?;
                    let g = tape.backward(&p, dy)?;
                    Ok(vec![g.input, g.gamma, g.beta])
                },
                TOLERANCE,
                seed,
            )
        }),
        ("dense", |rng, seed| {
            let (n, din, dout) = (rng.random_range(1..4), rng.random_range(1..8), rng.random_range(1..8));
            let inputs = [
                ("input", uniform(&[n, din], rng, -1.0, 1.0)),
                ("weight", uniform(&[din, dout], rng, -1.0, 1.0)),
                ("bias", uniform(&[dout], rng, -1.0, 1.0)),
            ];
            grad_check(
                &inputs,
                |v| ops::dense_forward(&v[0], &v[1], &v[2]),
                |v, dy| {
                    let (_, tape) = ops::dense(&v[0], &v[1], &v[2])?;
                    let g = tape.backward(&v[1], dy)?;
                    Ok(vec![g.input, g.weight, g.bias])
                },
                TOLERANCE,
                seed,
            )
        }),
        ("softmax", |rng, seed| {
            let shape = [rng.random_range(1..4), rng.random_range(2..9)];
            grad_check(
                &[("logits", uniform(&shape, rng, -3.0, 3.0))],
                |v| Ok(ops::softmax(&v[0])?.0),
                |v, dy| Ok(vec![ops::softmax(&v[0])?.1.backward(dy)?]),
                TOLERANCE,
                seed,
            )
        }),
        ("weighted cross-entropy", |rng, seed| {
            let (n, k) = (rng.random_range(1..5), rng.random_range(2..9));
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..3.0)).collect();
            let logits = uniform(&[n, k], rng, -3.0, 3.0);
            let loss = |v: &[Tensor<f64>]| -> fer_core::Result<f64> {
                let (p, _) = ops::softmax(&v[0])?;
                Ok(ops::weighted_cross_entropy(&p, &labels, &weights)?.0)
            };
            grad_check(
                &[("logits", logits)],
                |v| Tensor::new(&[1], vec![loss(v)?]),
                |v, dy| {
                    let (p, _) = ops::softmax(&v[0])?;
                    let (_, tape) = ops::weighted_cross_entropy(&p, &labels, &weights)?;
                    Ok(vec![tape.backward().scale(dy.data()[0])])
                },
                TOLERANCE,
                seed,
            )
        }),
    ];
    let mut summary = Vec::new();
    for (name, run) in layers {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let report = run(&mut rng, i).map_err(|e| format!("{name} instance {i}: {e}"))?;
            worst = worst.max(report.max_relative_error());
            if !report.passed() {
                let f = report.failures().next().expect("failed report has a failure");
                return Err(format!(
                    "{name} instance {i}: {} relative error {:.2e} (analytic {}, numeric {})",
                    f.name, f.max_relative_error, f.analytic, f.numeric
                ));
            }
        }
        summary.push(format!("{name} {worst:.1e}"));
    }
    Ok(format!("{INSTANCES} instances each, worst relative error: {}", summary.join(", ")))
}

fn naive_conv(x: &Tensor<f64>, kernel: &Tensor<f64>, bias: &Tensor<f64>) -> Vec<f64> {
    let [n, h, w, cin] = x.shape().try_into().unwrap();
    let [k, _, _, cout] = kernel.shape().try_into().unwrap();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut out = Vec::with_capacity(n * ho * wo * cout);
    for b in 0..n {
        for i in 0..ho {
            for j in 0..wo {
                for o in 0..cout {
                    let mut acc = bias.data()[o];
                    for di in 0..k {
                        for dj in 0..k {
                            for c in 0..cin {
                                acc += x.get(&[b, i + di, j + dj, c]).unwrap()
                                    * kernel.get(&[di, dj, c, o]).unwrap();
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for instance in 0..100 {
        let (h, w) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let k = rng.random_range(1..=h.min(w).min(5));
        let (n, cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4));
        let x = uniform(&[n, h, w, cin], &mut rng, -1.0, 1.0);
        let kernel = uniform(&[k, k, cin, cout], &mut rng, -1.0, 1.0);
        let bias = uniform(&[cout], &mut rng, -1.0, 1.0);
        let want = naive_conv(&x, &kernel, &bias);
        let params = ConvParams::new(kernel.convert::<f32>(), bias.convert::<f32>()).map_err(err)?;
        let got = ops::conv2d_forward(&x.convert::<f32>(), &params).map_err(err)?;
        check(got.shape() == [n, h - k + 1, w - k + 1, cout], || format!("instance {instance}: shape {:?}", got.shape()))?;
        // Oracle computed in f64 on the f32-rounded operands.
        let want32 = naive_conv(
            &x.convert::<f32>().convert(),
            &params.kernel.convert(),
            &params.bias.convert(),
        );
        for ((&g, _), &w32) in got.data().iter().zip(&want).zip(&want32) {
            let e = (g as f64 - w32).abs();
            worst = worst.max(e);
            check(e <= 1e-5, || format!("instance {instance}: |{g} - {w32}| = {e:.2e}"))?;
        }
    }
    Ok(format!("100 instances, max abs error {worst:.1e}"))
}

fn adam_trace() -> Outcome {
    let hyper = AdamHyper::default();
    // Minimize f(x) = (x - 3)² + sin(5x) from x = 0.
    let grad = |x: f64| 2.0 * (x - 3.0) + 5.0 * (5.0 * x).cos();

    let mut param = Tensor::new(&[1], vec![0.0f64]).map_err(err)?;
    let mut state = AdamState::<f64>::new([&param]);
    let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
    let mut worst = 0.0f64;
    for t in 1..=100 {
        let g = grad(param.data()[0]);
        state
            .step(&mut [&mut param], &[Tensor::new(&[1], vec![g]).map_err(err)?], &hyper)
            .map_err(err)?;

        let g_ref = grad(x);
        m = 0.9 * m + 0.1 * g_ref;
        v = 0.999 * v + 0.001 * g_ref * g_ref;
        let m_hat = m / (1.0 - 0.9f64.powi(t));
        let v_hat = v / (1.0 - 0.999f64.powi(t));
        x -= 0.001 * m_hat / (v_hat.sqrt() + 1e-8);

        let diff = (param.data()[0] - x).abs();
        worst = worst.max(diff);
        check(diff <= 1e-10, || format!("step {t}: engine {} vs reference {x}", param.data()[0]))?;
    }
    Ok(format!("100 steps, x = {x:.6}, max deviation {worst:.1e}"))
}

fn class_weights() -> Outcome {
    let mut counts = [0u64; 8];
    counts[EmotionLabel::Neutral.index()] = 74_874;
    counts[EmotionLabel::Happy.index()] = 134_915;
    counts[EmotionLabel::Sad.index()] = 25_459;
    counts[EmotionLabel::Surprise.index()] = 14_090;
    counts[EmotionLabel::Fear.index()] = 6_378;
    counts[EmotionLabel::Disgust.index()] = 3_803;
    counts[EmotionLabel::Anger.index()] = 24_882;
    counts[EmotionLabel::Contempt.index()] = 4_250;
    let w = compute_class_weights(&counts).map_err(err)?;
    let ratio = w[EmotionLabel::Contempt.index()] / w[EmotionLabel::Happy.index()];
    check((ratio - 31.745).abs() <= 1e-3, || format!("ratio {ratio}"))?;
    let n: u64 = counts.iter().sum();
    let mean: f64 = counts.iter().zip(&w).map(|(&c, &w)| c as f64 * w).sum::<f64>() / n as f64;
    check((mean - 1.0).abs() <= 1e-9, || format!("sample-weighted mean {mean}"))?;
    Ok(format!("contempt/happy = {ratio:.4}, weighted mean - 1 = {:.1e}", mean - 1.0))
}

fn memorization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let images: Vec<Tensor> = (0..8)
        .map(|_| Tensor::from_fn(&[224, 224, 3], |_| rng.random::<f32>()))
        .collect();
    let labels: Vec<usize> = (0..8).collect();
    let batch = Tensor::stack(&images.iter().collect::<Vec<_>>()).map_err(err)?;
    let mut trainer = Trainer::new(build_table1_model(7), AdamHyper::default(), vec![1.0; 8]).map_err(err)?;
    for step in 1..=300 {
        let stats = trainer.step(&batch, &labels).map_err(err)?;
        if stats.correct == 8 {
            return Ok(format!("8/8 training accuracy after {step} steps (loss {:.4})", stats.loss));
        }
    }
    Err("did not reach 8/8 within 300 steps".into())
}

fn bias_mitigation() -> Outcome {
    let linear = ModelSpec {
        name: "linear".into(),
        input_shape: vec![2],
        classes: 2,
        layers: vec![
            LayerSpec::Dense {
                name: "out".into(),
                inputs: 2,
                outputs: 2,
            },
            LayerSpec::Softmax,
        ],
    };
    let sample = |n_major: usize, n_minor: usize, rng: &mut ChaCha8Rng| {
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for (class, count, center) in [(0usize, n_major, -1.0f32), (1, n_minor, 1.0)] {
            for _ in 0..count {
                let gauss = |rng: &mut ChaCha8Rng| {
                    // Box-Muller.
                    let (u, v): (f32, f32) = (rng.random_range(1e-7..1.0), rng.random());
                    (-2.0 * u.ln()).sqrt() * (std::f32::consts::TAU * v).cos()
                };
                let x = vec![center + gauss(rng), center + gauss(rng)];
                inputs.push(Tensor::new(&[2], x).unwrap());
                labels.push(class);
            }
        }
        InMemorySamples::new(inputs, labels).unwrap()
    };
    let recall = |model: &Model, data: &InMemorySamples| -> f64 {
        let batch = Tensor::stack(&data.inputs.iter().collect::<Vec<_>>()).unwrap();
        let probs = model.forward(&batch).unwrap();
        let (mut hits, mut total) = (0, 0);
        for (row, &y) in probs.data().chunks(2).zip(&data.labels) {
            if y == 1 {
                total += 1;
                hits += usize::from(row[1] > row[0]);
            }
        }
        hits as f64 / total as f64
    };
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let train_set = sample(1000, 10, &mut rng);
        let test_set = sample(500, 500, &mut rng);
        let run = |weighted: bool| -> fer_core::Result<Model> {
            let config = TrainConfig {
                epochs: 10,
                batch_size: 32,
                seed,
                class_weighting: weighted,
                checkpoint: CheckpointPolicy::Last,
                adam: AdamHyper {
                    alpha: 0.01,
                    ..AdamHyper::default()
                },
            };
            Ok(train(Model::init(linear.clone(), seed)?, &train_set, &train_set, &config)?.model)
        };
        let weighted = recall(&run(true).map_err(err)?, &test_set);
        let plain = recall(&run(false).map_err(err)?, &test_set);
        wins += usize::from(weighted > plain);
        rows.push(format!("{weighted:.2}/{plain:.2}"));
    }
    let detail = format!("weighted beat unweighted minority recall in {wins}/5 seeds ({})", rows.join(" "));
    check(wins >= 3, || detail.clone())?;
    Ok(detail)
}

fn serialization() -> Outcome {
    let model = build_table1_model(3);
    let bytes = ferw::to_bytes(&model);
    let loaded = ferw::from_bytes(&bytes).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = Tensor::from_fn(&[2, 224, 224, 3], |_| rng.random::<f32>());
    let before = model.forward(&batch).map_err(err)?;
    let after = loaded.forward(&batch).map_err(err)?;
    let identical = before.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    check(identical, || "predictions differ after round trip".into())?;
    check(ferw::to_bytes(&loaded) == bytes, || "re-serialization differs".into())?;

    // Locate the f32 payload of every tensor from the documented layout.
    let manifest_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut offset = 12 + manifest_len;
    let mut payload = Vec::new();
    for (name, t) in model.tensors() {
        offset += 2 + name.len() + 2 + 4 * t.rank();
        payload.push(offset..offset + 4 * t.len());
        offset += 4 * t.len();
    }
    check(offset + 4 == bytes.len(), || format!("layout walk ended at {offset}, file is {}", bytes.len()))?;

    let mut corrupted = bytes.clone();
    let mut corruptions = 0;
    for i in 0..48 {
        let range = payload[i % payload.len()].clone();
        let pos = rng.random_range(range);
        let mask = rng.random_range(1..=255u8);
        corrupted[pos] ^= mask;
        let result = ferw::from_bytes(&corrupted);
        corrupted[pos] ^= mask;
        check(matches!(result, Err(FormatError::Checksum { .. })), || {
            format!("corrupting byte {pos} gave {:?}", result.err())
        })?;
        corruptions += 1;
    }
    for pos in [0, 5, 9, 20, bytes.len() - 1] {
        corrupted[pos] ^= 0x10;
        let result = ferw::from_bytes(&corrupted);
        corrupted[pos] ^= 0x10;
        check(result.is_err(), || format!("corrupting byte {pos} went undetected"))?;
        corruptions += 1;
    }
    Ok(format!("{} bytes round-trip bit-identical; {corruptions} single-byte corruptions rejected", bytes.len()))
}

fn metrics_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..200 {
        let n = rng.random_range(1..=1000);
        let mut metrics = EvalMetrics::default();
        let mut counts = [0u64; 8];
        for _ in 0..n {
            let truth = rng.random_range(0..8);
            counts[truth] += 1;
            let dist: Vec<f32> = (0..8).map(|_| rng.random_range(0..4) as f32 / 4.0 + 0.01).collect();
            let prediction = ClassificationResult::from_distribution(&dist, 3).map_err(err)?;
            metrics.record(EmotionLabel::ALL[truth], &prediction);
        }
        let trace: u64 = (0..8).map(|c| metrics.confusion[c][c]).sum();
        check(trace as f64 / n as f64 == metrics.top1(), || format!("trial {trial}: trace/N != top-1"))?;
        check(metrics.top3() >= metrics.top1(), || format!("trial {trial}: top-3 < top-1"))?;
        check(metrics.class_counts() == counts, || format!("trial {trial}: row sums differ"))?;
        check(metrics.total() == n as u64, || format!("trial {trial}: total"))?;
    }
    Ok("200 randomized sets (N ≤ 1000)".into())
}

fn report_fidelity() -> Outcome {
    let published = [
        "2Att-2Mt 0.635",
        "VGGNet Variant 0.58",
        "MobileNet Variant 0.58",
        "Our Model 0.5509",
        "2Att-Mt 0.539",
        "2Att-CNN 0.487",
        "CNN 0.470",
        "SVR 0.277",
    ];
    let report = render_comparison_report(None, &BASELINES);
    let rows: Vec<&str> = report.lines().skip(1).collect();
    check(rows == published, || format!("baseline rows {rows:?}"))?;

    let mut metrics = EvalMetrics::default();
    metrics.confusion[1][1] = 5509;
    metrics.confusion[1][2] = 4491;
    let report = render_comparison_report(Some(("evaluated", &metrics)), &BASELINES);
    let rows: Vec<&str> = report.lines().skip(1).take(9).collect();
    let pos = rows.iter().position(|r| *r == "evaluated 0.5509").ok_or("evaluated row missing")?;
    let above = rows[..pos].iter().any(|r| r.ends_with(" 0.58"));
    let below = rows[pos + 1..].iter().any(|r| r.ends_with(" 0.539"));
    check(above && below, || format!("evaluated row at {pos} in {rows:?}"))?;
    for row in published {
        check(rows.contains(&row), || format!("{row} missing with evaluated model inserted"))?;
    }
    Ok("8 published rows verbatim; 0.5509 sorts between 0.58 and 0.539".into())
}

fn service_contract() -> Outcome {
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(err)?;
    runtime.block_on(service_checks())
}

async fn service_checks() -> Outcome {
    const BOUNDARY: &str = "acceptance";
    let dir = tempfile::tempdir().map_err(err)?;
    let root = dir.path().join("store");
    let config = ServiceConfig::new("127.0.0.1:0".parse().unwrap(), root.clone());
    let state = AppState::open(&root).map_err(err)?;
    let (entry, _) = state
        .models
        .install(&ferw::to_bytes(&fixtures::stub_happy_model()), None)
        .map_err(err)?;
    let app = router(state.clone(), &config);

    let send = |request: Request<Body>| {
        let app = app.clone();
        async move {
            let response = app.oneshot(request).await.map_err(err)?;
            let status = response.status();
            let body = response.into_body().collect().await.map_err(err)?.to_bytes();
            Ok::<_, String>((status, body.to_vec()))
        }
    };
    let classify = |image: Vec<u8>, meta: Value| {
        let mut body = format!(
            "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"f.png\"\r\n\r\n"
        )
        .into_bytes();
        body.extend_from_slice(&image);
        body.extend_from_slice(
            format!(
                "\r\n--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"meta\"\r\n\r\n{meta}\r\n--{BOUNDARY}--\r\n"
            )
            .as_bytes(),
        );
        Request::post("/api/classify")
            .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
            .body(Body::from(body))
            .unwrap()
    };

    let happy = fixtures::class_png(EmotionLabel::Happy, 32).map_err(err)?;
    let (status, body) = send(classify(happy.clone(), json!({"consent": false}))).await?;
    check(status == StatusCode::OK, || format!("classify status {status}"))?;
    let response: Value = serde_json::from_slice(&body).map_err(err)?;
    let top = response["top"].as_array().ok_or("top missing")?;
    check(top.len() == 3, || "top is not three entries".into())?;
    check(
        top.iter().all(|t| t["label"].is_string() && t["confidence"].as_f64().is_some_and(|c| (0.0..=1.0).contains(&c))),
        || format!("malformed top {top:?}"),
    )?;
    check(top[0]["label"] == "happy", || format!("top-1 {}", top[0]["label"]))?;
    let distribution = response["distribution"].as_object().ok_or("distribution missing")?;
    check(
        distribution.len() == 8 && EmotionLabel::ALL.iter().all(|l| distribution[l.name()].is_number()),
        || format!("distribution {distribution:?}"),
    )?;
    check(response["model_id"] == json!(entry.model_id), || "model_id mismatch".into())?;
    check(response["stored"] == json!(false) && response["record_id"].is_null(), || {
        "consent=false response claims storage".into()
    })?;
    check(state.store.records().map_err(err)?.is_empty(), || "consent=false wrote a record".into())?;

    let (_, body) = send(classify(happy.clone(), json!({"consent": true, "user_label": "happy"}))).await?;
    let stored: Value = serde_json::from_slice(&body).map_err(err)?;
    let expected_id = fer_service::store::content_id(&happy);
    check(stored["record_id"] == json!(expected_id), || format!("record id {}", stored["record_id"]))?;
    let records = state.store.records().map_err(err)?;
    check(records.len() == 1 && records[0].id == expected_id && records[0].consent, || {
        format!("{} records after one consented request", records.len())
    })?;

    let sad = fixtures::class_png(EmotionLabel::Sad, 32).map_err(err)?;
    send(classify(sad, json!({"consent": true}))).await?;
    let (status, archive) = send(Request::get("/api/dataset/export").body(Body::empty()).unwrap()).await?;
    check(status == StatusCode::OK, || format!("export status {status}"))?;
    let out = tempfile::tempdir().map_err(err)?;
    tar::Archive::new(archive.as_slice()).unpack(out.path()).map_err(err)?;
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(out.path().join("manifest.json")).map_err(err)?).map_err(err)?;
    let human = LabeledDataset::load(out.path()).map_err(err)?;
    let predicted = LabeledDataset::load(&out.path().join("predicted")).map_err(err)?;
    let reimported = human.len() + predicted.len();
    check(manifest["record_count"] == json!(2) && reimported == 2, || {
        format!("manifest {} vs re-imported {reimported}", manifest["record_count"])
    })?;
    check(human.counts()[EmotionLabel::Happy.index()] == 1, || "user label lost on export".into())?;
    Ok("schema, consent gate, content addressing and export round trip hold".into())
}
