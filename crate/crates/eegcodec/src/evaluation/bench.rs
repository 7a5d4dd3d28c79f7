//! Downstream classification harness.
//!
//! Random-forest (200 trees) and depth-8 decision-tree classifiers are
//! trained on frequency-domain features of reconstructed recordings for
//! each coding mode, plus a baseline on the original signals, under a
//! subject-disjoint split. The synthetic benchmark is separable by
//! construction: positive recordings carry an extra 6 Hz component.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_io::{synth_eeg, ChannelMeta, Recording};
use crate::error::{Error, Result};
use crate::evaluation::features::{extract_features, RecordingFeatures};
use crate::evaluation::forest::{accuracy, DecisionTree, RandomForest};
use crate::preprocess::Window;

pub const BENCH_CHANNELS: [&str; 4] = ["C3", "C4", "O1", "O2"];

/// Class labels per task: index 0 = negative, 1 = positive.
pub fn task_labels(task: &str) -> Result<[&'static str; 2]> {
    match task {
        "epilepsy" => Ok(["no_epilepsy", "epilepsy"]),
        "abnormal" | "tuab" => Ok(["normal", "abnormal"]),
        other => Err(Error::Config(format!("unknown task {other:?}"))),
    }
}

/// Synthetic labeled recordings; class 1 carries an added 6 Hz component on
/// every channel.
pub fn synth_benchmark_set(
    task: &str,
    n_recordings: usize,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<Recording>> {
    let labels = task_labels(task)?;
    let mut out = Vec::with_capacity(n_recordings);
    for i in 0..n_recordings {
        let rec_seed = seed.wrapping_mul(1000).wrapping_add(i as u64);
        let base = synth_eeg(BENCH_CHANNELS.len(), duration_s, 512.0, rec_seed)?;
        let positive = i % 2 == 1;
        let mut data = base.data.clone();
        if positive {
            let mut rng = ChaCha8Rng::seed_from_u64(rec_seed ^ 0x6EE6);
            for c in 0..data.nrows() {
                let amp = rng.gen_range(28.0..40.0f64);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                for i in 0..data.ncols() {
                    let t = i as f64 / 512.0;
                    data[[c, i]] +=
                        (amp * (std::f64::consts::TAU * 6.0 * t + phase).sin()) as f32;
                }
            }
        }
        let channels: Vec<ChannelMeta> =
            BENCH_CHANNELS.iter().map(|&n| ChannelMeta::new(n)).collect();
        out.push(Recording::new(
            format!("bench-{task}-{i:03}"),
            channels,
            data,
            512.0,
            Some(labels[positive as usize].to_string()),
        )?);
    }
    Ok(out)
}

/// Feature matrix plus labels for one coding mode (or the baseline).
pub struct LabeledSet {
    pub ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Build features per recording from its windows. `windows_by_recording`
/// pairs a recording id and label with its (possibly reconstructed) windows.
pub fn features_for_recordings(
    windows_by_recording: &[(String, usize, Vec<Window>)],
) -> Result<LabeledSet> {
    let mut ids = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (id, label, windows) in windows_by_recording {
        let RecordingFeatures { values, .. } = extract_features(windows)?;
        if let Some(w) = width {
            if values.len() != w {
                return Err(Error::Data(format!(
                    "recording {id} has {} features, expected {w}",
                    values.len()
                )));
            }
        } else {
            width = Some(values.len());
        }
        ids.push(id.clone());
        features.push(values);
        labels.push(*label);
    }
    Ok(LabeledSet { ids, features, labels })
}

/// Seeded subject-disjoint split: recording ids are shuffled and cut; the
/// same id never lands on both sides. Draws that leave one side
/// single-class are deterministically re-shuffled (up to 16 derived seeds)
/// before giving up, which only happens for genuinely degenerate label
/// distributions.
pub fn split_subject_disjoint(
    set: &LabeledSet,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    for attempt in 0..16u64 {
        let mut unique: Vec<String> = set.ids.clone();
        unique.sort();
        unique.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0xA5A5)));
        for i in (1..unique.len()).rev() {
            let j = rng.gen_range(0..=i);
            unique.swap(i, j);
        }
        let n_test = ((unique.len() as f64 * test_fraction).round() as usize)
            .clamp(1, unique.len().saturating_sub(1).max(1));
        let test_ids: std::collections::HashSet<&String> = unique[..n_test].iter().collect();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, id) in set.ids.iter().enumerate() {
            if test_ids.contains(id) {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        let classes = |idx: &[usize]| -> std::collections::HashSet<usize> {
            idx.iter().map(|&i| set.labels[i]).collect()
        };
        if classes(&train).len() >= 2 && classes(&test).len() >= 2 {
            return Ok((train, test));
        }
    }
    Err(Error::Config(
        "subject-disjoint split left a single-class side; need more recordings".into(),
    ))
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub task: String,
    pub mode: String,
    pub classifier: String,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

/// Train both classifiers on the train side and score the test side.
pub fn run_classifiers(
    set: &LabeledSet,
    train: &[usize],
    test: &[usize],
    seed: u64,
) -> Vec<(String, f64)> {
    let xtr: Vec<Vec<f64>> = train.iter().map(|&i| set.features[i].clone()).collect();
    let ytr: Vec<usize> = train.iter().map(|&i| set.labels[i]).collect();
    let xte: Vec<Vec<f64>> = test.iter().map(|&i| set.features[i].clone()).collect();
    let yte: Vec<usize> = test.iter().map(|&i| set.labels[i]).collect();

    let forest = RandomForest::fit(&xtr, &ytr, 2, 200, seed);
    let fp: Vec<usize> = xte.iter().map(|r| forest.predict(r)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD7);
    let n_features = xtr[0].len();
    let tree = DecisionTree::fit(&xtr, &ytr, 2, 8, n_features, &mut rng);
    let tp: Vec<usize> = xte.iter().map(|r| tree.predict(r)).collect();

    vec![
        ("random-forest".to_string(), accuracy(&fp, &yte)),
        ("decision-tree".to_string(), accuracy(&tp, &yte)),
    ]
}

/// Score every mode's feature set (the baseline set should be included
/// under the mode name "baseline") on one shared subject-disjoint split.
pub fn benchmark_downstream(
    task: &str,
    sets_by_mode: &[(String, LabeledSet)],
    seed: u64,
) -> Result<Vec<BenchmarkResult>> {
    task_labels(task)?;
    let Some((_, reference)) = sets_by_mode.first() else {
        return Err(Error::Config("no feature sets to benchmark".into()));
    };
    let (train, test) = split_subject_disjoint(reference, 0.3, seed)?;
    let mut out = Vec::new();
    for (mode, set) in sets_by_mode {
        if set.ids != reference.ids {
            return Err(Error::Data(format!(
                "mode {mode} covers a different recording set than the baseline"
            )));
        }
        for (classifier, acc) in run_classifiers(set, &train, &test, seed) {
            out.push(BenchmarkResult {
                task: task.to_string(),
                mode: mode.clone(),
                classifier,
                accuracy: acc,
                n_train: train.len(),
                n_test: test.len(),
                seed,
            });
        }
    }
    Ok(out)
}

/// Benchmark report rows as TSV.
pub fn report_to_tsv(results: &[BenchmarkResult], bits_by_mode: &[(String, f64)]) -> String {
    let mut out = String::from("task\tmode\tclassifier\taccuracy\tn_train\tn_test\tseed\tbits_per_second_per_channel\n");
    for r in results {
        let bits = bits_by_mode
            .iter()
            .find(|(m, _)| *m == r.mode)
            .map(|(_, b)| format!("{b:.4}"))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.4}\t{}\t{}\t{}\t{}\n",
            r.task, r.mode, r.classifier, r.accuracy, r.n_train, r.n_test, r.seed, bits
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{preprocess_recording, PreprocessConfig};

    fn quick_prep() -> PreprocessConfig {
        PreprocessConfig {
            window_s: 10.0,
            drop_initial_s: 0.0,
            ..Default::default()
        }
    }

    fn feature_sets(n: usize, seed: u64) -> LabeledSet {
        let recs = synth_benchmark_set("epilepsy", n, 20.0, seed).unwrap();
        let cfg = quick_prep();
        let rows: Vec<(String, usize, Vec<Window>)> = recs
            .iter()
            .map(|rec| {
                let windows = preprocess_recording(rec, &cfg).unwrap();
                let label = (rec.annotation.as_deref() == Some("epilepsy")) as usize;
                (rec.id.clone(), label, windows)
            })
            .collect();
        features_for_recordings(&rows).unwrap()
    }

    #[test]
    fn benchmark_set_is_balanced_and_labeled() {
        let recs = synth_benchmark_set("abnormal", 6, 12.0, 1).unwrap();
        let positives = recs
            .iter()
            .filter(|r| r.annotation.as_deref() == Some("abnormal"))
            .count();
        assert_eq!(positives, 3);
        assert!(recs.iter().all(|r| r.n_channels() == 4));
        assert!(synth_benchmark_set("bogus", 2, 10.0, 1).is_err());
    }

    #[test]
    fn baseline_separates_the_6hz_class() {
        let set = feature_sets(24, 5);
        let (train, test) = split_subject_disjoint(&set, 0.3, 1).unwrap();
        let results = run_classifiers(&set, &train, &test, 1);
        let best = results.iter().map(|(_, a)| *a).fold(0.0, f64::max);
        assert!(best > 0.95, "baseline accuracy {best}");
    }

    #[test]
    fn permuted_labels_drop_to_chance() {
        let mut set = feature_sets(24, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in (1..set.labels.len()).rev() {
            let j = rng.gen_range(0..=i);
            set.labels.swap(i, j);
        }
        // re-pair ids so the split still works
        let (train, test) = split_subject_disjoint(&set, 0.3, 3).unwrap();
        let results = run_classifiers(&set, &train, &test, 3);
        for (name, acc) in results {
            assert!((acc - 0.5).abs() <= 0.25, "{name} at {acc} after permutation");
        }
    }

    #[test]
    fn split_is_subject_disjoint() {
        let set = feature_sets(12, 7);
        let (train, test) = split_subject_disjoint(&set, 0.3, 4).unwrap();
        let train_ids: std::collections::HashSet<&String> =
            train.iter().map(|&i| &set.ids[i]).collect();
        for &i in &test {
            assert!(!train_ids.contains(&set.ids[i]));
        }
    }

    #[test]
    fn mismatched_mode_sets_are_rejected() {
        let a = feature_sets(12, 8);
        let mut b = feature_sets(12, 8);
        b.ids[0] = "other".into();
        let err = benchmark_downstream(
            "epilepsy",
            &[("baseline".into(), a), ("sc".into(), b)],
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
