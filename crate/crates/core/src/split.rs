//! Dataset splits: fixed train/test, leave-one-subject-out, stratified fraction.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    FixedTrainTest,
    Loso,
    Fraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Training fraction for `fraction` mode, in (0, 1].
    #[serde(default = "one")]
    pub fraction: f64,
    /// Subject held out in `loso` mode.
    #[serde(default)]
    pub held_out_subject: Option<String>,
    /// Fraction of recordings held out per class in `fixed-train-test` mode.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn default_test_fraction() -> f64 {
    0.25
}

/// Indices into a sample list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn label_of(s: &Sample) -> Result<usize> {
    s.label
        .ok_or_else(|| Error::InvalidArgument(format!("sample {} has no label", s.id())))
}

/// Number of items to take from each class so the total is `⌈fraction·N⌉`
/// and every class is within one item of its proportional share.
fn stratified_quota(counts: &BTreeMap<usize, usize>, fraction: f64) -> BTreeMap<usize, usize> {
    let n: usize = counts.values().sum();
    let target = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut quota: BTreeMap<usize, usize> = BTreeMap::new();
    let mut rems: Vec<(f64, usize)> = Vec::new();
    for (&class, &count) in counts {
        let exact = fraction * count as f64;
        let base = (exact.floor() as usize).min(count);
        quota.insert(class, base);
        rems.push((exact - base as f64, class));
    }
    let mut assigned: usize = quota.values().sum();
    // Largest remainder first; ties broken by class id.
    rems.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, class) in rems.iter().cycle().take(rems.len() * 2) {
        if assigned >= target {
            break;
        }
        let q = quota.get_mut(class).expect("class present");
        if *q < counts[class] {
            *q += 1;
            assigned += 1;
        }
    }
    quota
}

/// Class-stratified, seed-deterministic subset of `⌈fraction·N⌉` indices,
/// returned in ascending order.
pub fn stratified_subset(labels: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let counts = by_class.iter().map(|(&c, v)| (c, v.len())).collect();
    let quota = stratified_quota(&counts, fraction);
    let mut picked = Vec::new();
    for (class, mut idx) in by_class {
        let mut r = rng::substream(seed, &[class as u64]);
        idx.shuffle(&mut r);
        picked.extend_from_slice(&idx[..quota[&class]]);
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Sorted list of distinct subject ids.
pub fn subjects(samples: &[Sample]) -> Vec<String> {
    samples
        .iter()
        .map(|s| s.subject_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub fn split(samples: &[Sample], spec: &SplitSpec) -> Result<Split> {
    match spec.mode {
        SplitMode::Fraction => {
            let labels = samples.iter().map(label_of).collect::<Result<Vec<_>>>()?;
            let train = stratified_subset(&labels, spec.fraction, spec.seed)?;
            let chosen: BTreeSet<_> = train.iter().copied().collect();
            let test = (0..samples.len()).filter(|i| !chosen.contains(i)).collect();
            Ok(Split { train, test })
        }
        SplitMode::Loso => {
            let held = spec
                .held_out_subject
                .as_deref()
                .ok_or_else(|| Error::Config("loso split needs held_out_subject".into()))?;
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..samples.len()).partition(|&i| samples[i].subject_id == held);
            if test.is_empty() {
                return Err(Error::InvalidArgument(format!("no samples for subject {held}")));
            }
            if train.is_empty() {
                return Err(Error::InvalidArgument("loso needs at least two subjects".into()));
            }
            Ok(Split { train, test })
        }
        SplitMode::FixedTrainTest => {
            if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
                return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
            }
            // Hold out whole recordings so no window leaks across the split.
            let mut rec_label: BTreeMap<String, usize> = BTreeMap::new();
            for s in samples {
                rec_label.insert(s.source_recording.clone(), label_of(s)?);
            }
            let recs: Vec<&String> = rec_label.keys().collect();
            let labels: Vec<usize> = rec_label.values().copied().collect();
            let held = stratified_subset(&labels, spec.test_fraction, spec.seed)?;
            let held: BTreeSet<&String> = held.iter().map(|&i| recs[i]).collect();
            let (test, train) = (0..samples.len())
                .partition(|&i| held.contains(&samples[i].source_recording));
            Ok(Split { train, test })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn sample(rec: &str, subject: &str, label: usize) -> Sample {
        Sample {
            data: Array2::zeros((1, 4)),
            source_recording: rec.into(),
            subject_id: subject.into(),
            offset: 0,
            label: Some(label),
        }
    }

    proptest! {
        #[test]
        fn fraction_is_stratified(labels in proptest::collection::vec(0usize..4, 1..200),
                                  fraction in 0.01f64..=1.0, seed in 0u64..1000) {
            let picked = stratified_subset(&labels, fraction, seed).unwrap();
            let n = labels.len();
            prop_assert_eq!(picked.len(), ((fraction * n as f64) - 1e-9).ceil() as usize);
            for class in 0..4 {
                let total = labels.iter().filter(|&&l| l == class).count() as f64;
                let got = picked.iter().filter(|&&i| labels[i] == class).count() as f64;
                prop_assert!((got - fraction * total).abs() <= 1.0 + 1e-9);
            }
            prop_assert_eq!(&picked, &stratified_subset(&labels, fraction, seed).unwrap());
        }
    }

    #[test]
    fn full_fraction_keeps_everything_in_order() {
        let labels = vec![1, 0, 1, 1, 0];
        assert_eq!(stratified_subset(&labels, 1.0, 9).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(stratified_subset(&labels, 0.0, 9).is_err());
    }

    #[test]
    fn ten_percent_subset() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let picked = stratified_subset(&labels, 0.1, 3).unwrap();
        assert_eq!(picked.len(), 10);
        assert_eq!(picked.iter().filter(|&&i| labels[i] == 0).count(), 5);
    }

    #[test]
    fn loso_partitions_by_subject() {
        let samples = vec![
            sample("a", "s0", 0),
            sample("b", "s1", 1),
            sample("c", "s0", 1),
        ];
        let spec = SplitSpec {
            mode: SplitMode::Loso,
            fraction: 1.0,
            held_out_subject: Some("s0".into()),
            test_fraction: 0.25,
            seed: 0,
        };
        let s = split(&samples, &spec).unwrap();
        assert_eq!(s.test, vec![0, 2]);
        assert_eq!(s.train, vec![1]);
        assert_eq!(subjects(&samples), vec!["s0", "s1"]);
    }

    #[test]
    fn fixed_split_holds_out_whole_recordings() {
        let mut samples = Vec::new();
        for r in 0..8 {
            for _ in 0..3 {
                samples.push(sample(&format!("r{r}"), "s", r % 2));
            }
        }
        let spec = SplitSpec {
            mode: SplitMode::FixedTrainTest,
            fraction: 1.0,
            held_out_subject: None,
            test_fraction: 0.25,
            seed: 1,
        };
        let s = split(&samples, &spec).unwrap();
        assert_eq!(s.test.len(), 6);
        let test_recs: BTreeSet<_> = s.test.iter().map(|&i| &samples[i].source_recording).collect();
        for &i in &s.train {
            assert!(!test_recs.contains(&samples[i].source_recording));
        }
    }
}
