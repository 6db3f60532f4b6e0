//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.
//!
//! Run with `cargo test -p afc-core --test acceptance`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use afc_core::classify::{DecisionTree, ForestParams, KnnModel, MaxFeatures, RandomForest, Samples, TreeParams};
use afc_core::evaluate::{binary_contingency, final_accuracy, metrics, multiclass_micro};
use afc_core::ingest::MergedDataset;
use afc_core::pipeline::{self, PipelineConfig, Prepared};
use afc_core::preprocess;
use afc_core::regressor::{gradient_check, layer_param_counts, LstmStack, DEFAULT_WIDTHS};
use afc_core::synth::{self, SynthSpec};
use afc_core::windowing::{build_windows, WindowSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, ok: impl Into<String>, bad: impl Into<String>) -> Outcome {
    if cond {
        Ok(ok.into())
    } else {
        Err(bad.into())
    }
}

// ---------------------------------------------------------------- 1

fn param_counts() -> Outcome {
    let expected = [1_329_152, 787_456, 197_120, 49_408, 12_416, 3_136, 193];
    let per_layer = layer_param_counts(&DEFAULT_WIDTHS, 12, 136);
    let model = LstmStack::zeros(&DEFAULT_WIDTHS, 12, 136).map_err(|e| e.to_string())?;
    let total = model.count_params();
    check(
        per_layer == expected && total == 2_378_881 && model.params().len() == total,
        format!("total {total}, per layer {per_layer:?}"),
        format!("total {total} (want 2378881), per layer {per_layer:?}"),
    )
}

// ---------------------------------------------------------------- 2

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for seed in 0..4u64 {
        let mut model = LstmStack::new(&[3], 3, 2, seed).map_err(|e| e.to_string())?;
        // spread the weights so every gate operates away from its linear regime
        for p in model.params_mut() {
            *p = rng.random_range(-1.5..1.5);
        }
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        for y in [0.0, 1.0] {
            let err = gradient_check(&model, &x, y, 1e-5).map_err(|e| e.to_string())?;
            worst = worst.max(err);
        }
    }
    check(worst < 1e-4, format!("max relative error {worst:.3e}"), format!("max relative error {worst:.3e} >= 1e-4"))
}

// ---------------------------------------------------------------- 3

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    };
    let ratio = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
    for trial in 0..20 {
        let n = 1000;
        let bias = rng.random_range(0.05..0.95);
        let pred: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(bias))).collect();
        let truth: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
        let m = metrics(&binary_contingency(&pred, &truth).map_err(|e| e.to_string())?);

        let (mut tp, mut fp, mut fn_, mut correct) = (0, 0, 0, 0);
        for i in 0..n {
            match (pred[i], truth[i]) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => {}
            }
            correct += usize::from(pred[i] == truth[i]);
        }
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        let f1 = match (p, r) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        let ok = close(m.accuracy, ratio(correct, n)) && close(m.precision, p) && close(m.recall, r) && close(m.f1, f1);
        if !ok {
            return Err(format!("binary trial {trial}: {m:?} vs tally tp={tp} fp={fp} fn={fn_}"));
        }

        let k = rng.random_range(2..6u32);
        let tags: Vec<u32> = (0..n).map(|_| rng.random_range(1..=k)).collect();
        let guess: Vec<u32> = tags
            .iter()
            .map(|&t| if rng.random_bool(0.7) { t } else { rng.random_range(1..=k) })
            .collect();
        let mm = multiclass_micro(&guess, &tags).map_err(|e| e.to_string())?;
        // pooled one-vs-rest tallies
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for c in 1..=k {
            for i in 0..n {
                let (p, t) = (guess[i] == c, tags[i] == c);
                tp += usize::from(p && t);
                fp += usize::from(p && !t);
                fn_ += usize::from(!p && t);
            }
        }
        let frac = guess.iter().zip(&tags).filter(|(a, b)| a == b).count();
        let ok = close(mm.recall, ratio(tp, tp + fn_))
            && close(mm.precision, ratio(tp, tp + fp))
            && close(mm.accuracy, ratio(frac, n));
        if !ok {
            return Err(format!("multiclass trial {trial}: {mm:?}"));
        }
    }
    Ok("20 x 1000 binary and multiclass pairs match to 1e-12".into())
}

// ---------------------------------------------------------------- 4

fn fpaf_example() -> Outcome {
    // 10 windows, 7 flagged; 6 of the flagged carry a true alarm, 5 of those tagged right
    let reg = [1, 1, 1, 1, 1, 1, 1, 0, 0, 0];
    let truth_bin = [1, 1, 1, 1, 1, 1, 0, 0, 1, 0];
    let truth_tags = [2, 1, 3, 2, 1, 1, 0];
    let preds = [2, 1, 3, 2, 1, 3, 2];
    let r = final_accuracy(&reg, &truth_bin, &preds, &truth_tags).map_err(|e| e.to_string())?;
    check(
        r.final_accuracy == Some(5.0 / 7.0) && r.fpaf_fraction == Some(1.0 / 7.0) && r.classifier_correct == 5,
        format!("final accuracy {:?}, fpaf {:?}", r.final_accuracy, r.fpaf_fraction),
        format!("got {r:?}"),
    )
}

// ---------------------------------------------------------------- 5

fn knn_oracle_predict(data: &[f64], tags: &[u32], dim: usize, k: usize, q: &[f64]) -> u32 {
    let mut scored: Vec<(f64, usize)> = (0..tags.len())
        .map(|i| {
            let d: f64 = (0..dim).map(|j| (data[i * dim + j] - q[j]).powi(2)).sum();
            (d, i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
    for &(_, i) in &scored[..k] {
        *votes.entry(tags[i]).or_default() += 1;
    }
    let top = *votes.values().max().unwrap();
    *votes.iter().find(|(_, &v)| v == top).unwrap().0
}

fn knn_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 3;
    // coarse integer grid so that distance and vote ties actually occur
    let data: Vec<f64> = (0..200 * dim).map(|_| rng.random_range(0..5) as f64).collect();
    let tags: Vec<u32> = (0..200).map(|_| rng.random_range(1..=4)).collect();
    let queries: Vec<f64> = (0..50 * dim).map(|_| rng.random_range(0..5) as f64 + 0.5 * rng.random_range(0..2) as f64).collect();
    let samples = Samples::new(dim, data.clone(), tags.clone()).map_err(|e| e.to_string())?;
    for k in [1, 3, 5] {
        let model = KnnModel::fit(&samples, k).map_err(|e| e.to_string())?;
        for (qi, q) in queries.chunks(dim).enumerate() {
            let got = model.predict(q).map_err(|e| e.to_string())?;
            let want = knn_oracle_predict(&data, &tags, dim, k, q);
            if got != want {
                return Err(format!("k={k} query {qi}: predicted {got}, oracle {want}"));
            }
        }
    }
    Ok("k in {1,3,5}, 50 queries each, identical to exhaustive scan".into())
}

// ---------------------------------------------------------------- 6

fn forest_degenerate() -> Outcome {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let dim = rng.random_range(2..8);
        let n = rng.random_range(40..150);
        let data: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tags: Vec<u32> = (0..n).map(|_| rng.random_range(1..=3)).collect();
        let s = Samples::new(dim, data, tags).map_err(|e| e.to_string())?;
        let params = ForestParams { n_trees: 1, max_features: MaxFeatures::All, bootstrap: false, tree: TreeParams::default() };
        let rf = RandomForest::fit(&s, &params, seed).map_err(|e| e.to_string())?;
        let dt = DecisionTree::fit(&s, &TreeParams::default()).map_err(|e| e.to_string())?;
        for i in 0..200 {
            let q: Vec<f64> = if i < n { s.row(i).to_vec() } else { (0..dim).map(|_| rng.random_range(-1.2..1.2)).collect() };
            if rf.predict(&q).unwrap() != dt.predict(&q).unwrap() {
                return Err(format!("dataset {seed}: query {i} differs"));
            }
        }
    }
    Ok("5 datasets, 200 queries each, identical predictions".into())
}

// ---------------------------------------------------------------- 7

fn toy_dataset(n: usize, m: usize) -> MergedDataset {
    MergedDataset {
        turbine_id: "T".into(),
        timestamps: (0..n as i64).map(|i| i * 600).collect(),
        param_ids: (0..m).map(|j| format!("p{j}")).collect(),
        values: (0..n * m).map(|v| v as f64).collect(),
        y1: (0..n).map(|i| u8::from(i % 3 == 0)).collect(),
        y2: (0..n).map(|i| if i % 3 == 0 { (i % 7) as u32 + 1 } else { 0 }).collect(),
    }
}

fn windowing_algebra() -> Outcome {
    let m = 2;
    let mut cases = 0;
    for n in 12..=40usize {
        for l in [2usize, 12] {
            for f in 0..=3usize {
                let ds = toy_dataset(n, m);
                let ws = build_windows(&ds, WindowSpec::new(l, m, f).unwrap()).map_err(|e| e.to_string())?;
                let mut brute = Vec::new();
                for g in 0..n {
                    if g + l - 1 + f < n {
                        brute.push(g);
                    }
                }
                let formula = (n as i64 - l as i64 + 1 - f as i64).max(0) as usize;
                if ws.len() != brute.len() || ws.len() != formula {
                    return Err(format!("N={n} L={l} f={f}: {} windows, brute {}", ws.len(), brute.len()));
                }
                for (k, &g) in brute.iter().enumerate() {
                    let t = g + l - 1 + f;
                    if ws.window(k) != &ds.values[g * m..(g + l) * m] || ws.y1[k] != ds.y1[t] || ws.y2[k] != ds.y2[t] {
                        return Err(format!("N={n} L={l} f={f}: window {k} misaligned"));
                    }
                }
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} (N, L, f) cases match brute-force enumeration"))
}

// ---------------------------------------------------------------- 8

fn scaling_retention() -> Outcome {
    let mut spec = SynthSpec::planted(3, 2000, 8, 2, 8);
    // straddle the 20% cut: 0.19 and 0.20 stay, 0.21 and above go
    spec.nan_fraction = vec![0.0, 0.05, 0.19, 0.20, 0.21, 0.25, 0.5, 0.0];
    let out = synth::generate(&spec).map_err(|e| e.to_string())?;
    let mut sets: Vec<MergedDataset> = out.turbines.iter().map(|t| t.dataset.clone()).collect();
    // a sibling turbine with heavy gaps in a column the reference keeps
    for i in 0..1500 {
        sets[1].values[i * 8 + 1] = f64::NAN;
    }
    let mask = preprocess::compute_retention(&sets[0], 0.20).map_err(|e| e.to_string())?;
    let want: Vec<String> = [0, 1, 2, 3, 7].iter().map(|&j| SynthSpec::param_id(j)).collect();
    if mask.retained != want {
        return Err(format!("retained {:?}, want {want:?}", mask.retained));
    }
    let reduced: Vec<MergedDataset> = sets
        .iter()
        .map(|d| preprocess::apply_retention(d, &mask).map(|d| preprocess::impute(&d)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    if reduced.iter().any(|d| d.param_ids != want) {
        return Err("retained parameter sets differ across turbines".into());
    }
    if reduced.iter().any(|d| d.values.iter().any(|v| v.is_nan())) {
        return Err("NaN left after imputation".into());
    }
    let train: Vec<&MergedDataset> = reduced[..2].iter().collect();
    let scaler = preprocess::fit_scaler(&train).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for d in &reduced[..2] {
        let s = preprocess::apply_scaler(d, &scaler).map_err(|e| e.to_string())?;
        if s.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(format!("{}: scaled training value outside [0, 1]", d.turbine_id));
        }
        let m = d.n_params();
        for (i, (&x, &sx)) in d.values.iter().zip(&s.values).enumerate() {
            let j = i % m;
            let back = scaler.unscale(j, sx);
            let scale = x.abs().max(scaler.max[j] - scaler.min[j]).max(f64::MIN_POSITIVE);
            worst = worst.max((back - x).abs() / scale);
        }
    }
    check(
        worst < 1e-9,
        format!("retained {} of 8, homogeneous across 3 turbines, inverse error {worst:.1e}", want.len()),
        format!("inverse relative error {worst:.3e}"),
    )
}

// ---------------------------------------------------------------- 9-11

fn planted_config(spec: &SynthSpec) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        turbines: (0..spec.n_turbines).map(SynthSpec::turbine_id).collect(),
        layer_widths: vec![16],
        ..PipelineConfig::default()
    };
    cfg.train.learning_rate = 3e-3;
    cfg.classifiers.forest.n_trees = 50;
    cfg.set_seed(spec.seed);
    cfg
}

fn planted(seed: u64) -> Result<(PipelineConfig, Prepared), String> {
    let spec = SynthSpec::planted(5, 5000, 8, 3, seed);
    let out = synth::generate(&spec).map_err(|e| e.to_string())?;
    let cfg = planted_config(&spec).resolve().map_err(|e| e.to_string())?;
    let prepared = pipeline::prepare(&cfg, pipeline::raw_from_synth(&out)).map_err(|e| e.to_string())?;
    Ok((cfg, prepared))
}

fn end_to_end() -> Outcome {
    let (cfg, prepared) = planted(1)?;
    if (cfg.train_turbines.len(), cfg.test_turbines.len()) != (3, 2) {
        return Err(format!("split {:?} / {:?}", cfg.train_turbines, cfg.test_turbines));
    }
    let models = pipeline::train_models(&cfg, &prepared, 1).map_err(|e| e.to_string())?;
    let reports = pipeline::evaluate_models(&cfg, &prepared, &models).map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    let mut ok = true;
    for r in &reports {
        let recall = r.regression.metrics.recall.unwrap_or(0.0);
        let fin = r.final_accuracy.unwrap_or(0.0);
        ok &= recall >= 0.95 && fin >= 0.90;
        detail.push(format!("{}: recall {recall:.4} final {fin:.4} ({})", r.turbine, r.chosen_model));
    }
    check(ok, detail.join("; "), detail.join("; "))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn fw_trend() -> Outcome {
    let mut per_fw: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for seed in 0..5 {
        let (cfg, prepared) = planted(20 + seed)?;
        for fw in 1..=3 {
            let (_, fin) = pipeline::train_and_score(&cfg, &prepared, fw).map_err(|e| e.to_string())?;
            per_fw.entry(fw).or_default().push(fin.unwrap_or(0.0));
        }
    }
    let med: Vec<f64> = per_fw.into_values().map(median).collect();
    let ok = med.windows(2).all(|w| w[1] <= w[0]);
    check(
        ok,
        format!("median final accuracy FW1..3 = {med:.4?}"),
        format!("median final accuracy FW1..3 = {med:.4?} is not non-increasing"),
    )
}

fn run_full(data_dir: &Path, out_dir: &Path) -> Result<(), String> {
    let text = format!(
        "data_dir = {}\nout_dir = {}\nlayer_widths = 16\nlearning_rate = 0.003\nrf_n_trees = 50\nseed = 7\n",
        data_dir.display(),
        out_dir.display()
    );
    let cfg = PipelineConfig::from_kv(&text, Path::new("/")).map_err(|e| e.to_string())?;
    pipeline::run_preprocess(&cfg).map_err(|e| e.to_string())?;
    pipeline::run_train(&cfg, 1).map_err(|e| e.to_string())?;
    pipeline::run_evaluate(&cfg, &[1]).map_err(|e| e.to_string())?;
    Ok(())
}

fn collect_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let out = synth::generate(&SynthSpec::planted(5, 5000, 8, 3, 7)).map_err(|e| e.to_string())?;
    synth::write_output(&out, &data).map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("run_a"), tmp.path().join("run_b"));
    run_full(&data, &a)?;
    run_full(&data, &b)?;
    let (fa, fb) = (collect_files(&a), collect_files(&b));
    let reports = fa.keys().filter(|k| k.contains("reports")).count();
    if reports == 0 {
        return Err("no report files written".into());
    }
    if fa.keys().ne(fb.keys()) {
        return Err("runs wrote different file sets".into());
    }
    let differing: Vec<&String> = fa.iter().filter(|(k, v)| fb[*k] != **v).map(|(k, _)| k).collect();
    check(
        differing.is_empty(),
        format!("{} files ({reports} reports) byte-identical across runs", fa.len()),
        format!("files differ: {differing:?}"),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("parameter-count fidelity", param_counts),
        ("gradient correctness", gradients),
        ("metric-formula oracle", metric_oracle),
        ("FPAF worked example", fpaf_example),
        ("KNN oracle equivalence", knn_equivalence),
        ("RF degenerate equivalence", forest_degenerate),
        ("windowing algebra", windowing_algebra),
        ("scaling/retention invariants", scaling_retention),
        ("end-to-end planted data", end_to_end),
        ("FW degradation trend", fw_trend),
        ("determinism", determinism),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if let Some(fl) = &filter {
            if fl.parse::<usize>().ok() != Some(id) && !name.contains(fl.as_str()) {
                continue;
            }
        }
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {id:>2} PASS  {name} [{secs:.1}s]: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name} [{secs:.1}s]: {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
