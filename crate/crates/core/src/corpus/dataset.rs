use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Label, LabeledSequence, RecordJson};
use crate::error::{Error, Result};

/// Reads a line-delimited JSON dataset. Each nonblank line holds parallel
/// `tokens` and `labels` arrays, labels being `1` (preserve) or `0` (discard).
pub fn load_dataset(path: &Path) -> Result<Vec<LabeledSequence>> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, path)
}

/// Parses dataset text; `path` is only used in error messages.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Vec<LabeledSequence>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: RecordJson = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let labels = rec
            .labels
            .iter()
            .map(|&l| match l {
                0 => Ok(Label::Discard),
                1 => Ok(Label::Preserve),
                other => Err(err(format!("label {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(LabeledSequence::new(rec.tokens, labels).map_err(err)?);
    }
    Ok(out)
}

pub fn to_jsonl(dataset: &[LabeledSequence]) -> String {
    let mut out = String::new();
    for seq in dataset {
        let rec = RecordJson {
            tokens: seq.tokens().to_vec(),
            labels: seq.labels().iter().map(|l| l.class() as i64).collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("records always serialize"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, dataset: &[LabeledSequence]) -> Result<()> {
    fs::write(path, to_jsonl(dataset))?;
    Ok(())
}

/// Train/validation fractions and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    train_fraction: f64,
    validation_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, validation_fraction: f64, seed: u64) -> Result<Self> {
        let valid = |f: f64| f.is_finite() && (0.0..=1.0).contains(&f);
        if !valid(train_fraction) || !valid(validation_fraction) {
            return Err(Error::Split("fractions must lie in [0, 1]".into()));
        }
        if (train_fraction + validation_fraction - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!(
                "fractions {train_fraction} + {validation_fraction} do not sum to 1"
            )));
        }
        Ok(SplitSpec {
            train_fraction,
            validation_fraction,
            seed,
        })
    }

    /// The 80/20 split used for model selection.
    pub fn standard(seed: u64) -> Self {
        SplitSpec {
            train_fraction: 0.8,
            validation_fraction: 0.2,
            seed,
        }
    }

    pub fn train_fraction(&self) -> f64 {
        self.train_fraction
    }

    pub fn validation_fraction(&self) -> f64 {
        self.validation_fraction
    }
}

/// Shuffles deterministically by seed, then takes `floor(n * train_fraction)`
/// records for training and the remainder for validation.
pub fn split<T: Clone>(dataset: &[T], spec: SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    if dataset.is_empty() {
        return Err(Error::Split("dataset is empty".into()));
    }
    let n = dataset.len();
    // The small bias keeps e.g. 0.29 * 100 from flooring to 28.
    let n_train = ((n as f64 * spec.train_fraction) + 1e-9).floor() as usize;
    let n_train = n_train.min(n);
    if n_train == n {
        return Err(Error::Split(format!(
            "{n} records at train fraction {} leave no validation records",
            spec.train_fraction
        )));
    }
    if n_train == 0 {
        return Err(Error::Split(format!(
            "{n} records at train fraction {} leave no training records",
            spec.train_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let train = order[..n_train].iter().map(|&i| dataset[i].clone()).collect();
    let validation = order[n_train..].iter().map(|&i| dataset[i].clone()).collect();
    Ok((train, validation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn parse(text: &str) -> Result<Vec<LabeledSequence>> {
        parse_dataset(text, &PathBuf::from("mem.jsonl"))
    }

    #[test]
    fn parses_record() {
        let ds = parse(r#"{"tokens":["a","b"],"labels":[1,0]}"#).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds[0].preserve_indices(), vec![0]);
        assert_eq!(ds[0].discard_indices(), vec![1]);
    }

    #[test]
    fn single_class_record_is_accepted() {
        let ds = parse(r#"{"tokens":["a","b"],"labels":[1,1]}"#).unwrap();
        assert!(ds[0].discard_indices().is_empty());
    }

    #[test]
    fn length_mismatch_names_line() {
        let text = "{\"tokens\":[\"a\"],\"labels\":[0]}\n{\"tokens\":[\"a\",\"b\"],\"labels\":[1]}\n";
        match parse(text) {
            Err(Error::Record { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("2 tokens but 1 labels"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_label_is_rejected() {
        let err = parse(r#"{"tokens":["a"],"labels":[2]}"#).unwrap_err();
        assert!(err.to_string().contains("label 2"));
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("\n\n").unwrap().is_empty());
    }

    #[test]
    fn jsonl_round_trip() {
        let text = "{\"tokens\":[\"x\",\",\"],\"labels\":[1,0]}\n";
        let ds = parse(text).unwrap();
        assert_eq!(to_jsonl(&ds), text);
    }

    #[test]
    fn split_sizes() {
        let data: Vec<u32> = (0..10).collect();
        let (t, v) = split(&data, SplitSpec::new(0.8, 0.2, 7).unwrap()).unwrap();
        assert_eq!((t.len(), v.len()), (8, 2));
        let (t2, v2) = split(&data, SplitSpec::new(0.8, 0.2, 7).unwrap()).unwrap();
        assert_eq!((t, v), (t2, v2));

        let five: Vec<u32> = (0..5).collect();
        let (t, v) = split(&five, SplitSpec::standard(1)).unwrap();
        assert_eq!((t.len(), v.len()), (4, 1));
    }

    #[test]
    fn split_is_a_permutation() {
        let data: Vec<u32> = (0..37).collect();
        let (mut t, v) = split(&data, SplitSpec::standard(3)).unwrap();
        t.extend(v);
        t.sort();
        assert_eq!(t, data);
    }

    #[test]
    fn split_errors() {
        assert!(split::<u32>(&[], SplitSpec::standard(1)).is_err());
        assert!(split(&[1u32], SplitSpec::standard(1)).is_err());
        assert!(split(&[1u32, 2], SplitSpec::new(1.0, 0.0, 1).unwrap()).is_err());
        assert!(SplitSpec::new(0.7, 0.2, 1).is_err());
    }
}
