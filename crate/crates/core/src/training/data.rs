use std::collections::BTreeSet;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub a: String,
    pub b: String,
    /// Gold similarity in `[0, 1]`.
    pub label: f64,
}

impl PairRecord {
    pub fn new(a: impl Into<String>, b: impl Into<String>, label: f64) -> Self {
        Self {
            a: a.into(),
            b: b.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Labelled pairs in train/dev/test splits.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PairDataset {
    pub train: Vec<PairRecord>,
    pub dev: Vec<PairRecord>,
    pub test: Vec<PairRecord>,
}

impl PairDataset {
    /// Checks labels and split disjointness.
    pub fn new(
        train: Vec<PairRecord>,
        dev: Vec<PairRecord>,
        test: Vec<PairRecord>,
    ) -> Result<Self, TrainError> {
        let ds = Self { train, dev, test };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let mut seen: BTreeSet<(&str, &str)> = BTreeSet::new();
        for (split, records) in [
            (Split::Train, &self.train),
            (Split::Dev, &self.dev),
            (Split::Test, &self.test),
        ] {
            let mut here = BTreeSet::new();
            for (i, r) in records.iter().enumerate() {
                check_label(r.label, i)?;
                here.insert(pair_key(r));
            }
            if let Some(dup) = here.iter().find(|k| seen.contains(*k)) {
                return Err(TrainError::Overlap {
                    split,
                    a: dup.0.to_string(),
                    b: dup.1.to_string(),
                });
            }
            seen.extend(here);
        }
        Ok(())
    }

    /// Shuffles `records` with `seed` and cuts 80/10/10; duplicate pairs
    /// (in either order) are dropped first so the splits are disjoint.
    pub fn split(records: Vec<PairRecord>, seed: u64) -> Result<Self, TrainError> {
        let mut seen = BTreeSet::new();
        let mut unique: Vec<PairRecord> = records
            .into_iter()
            .filter(|r| {
                let (x, y) = pair_key(r);
                seen.insert((x.to_string(), y.to_string()))
            })
            .collect();
        unique.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = unique.len();
        let n_train = n * 8 / 10;
        let n_dev = n / 10;
        let test = unique.split_off(n_train + n_dev);
        let dev = unique.split_off(n_train);
        Self::new(unique, dev, test)
    }

    pub fn get(&self, split: Split) -> &[PairRecord] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every sentence in the training split, in record order.
    pub fn train_texts(&self) -> impl Iterator<Item = &str> {
        self.train.iter().flat_map(|r| [r.a.as_str(), r.b.as_str()])
    }
}

fn pair_key(r: &PairRecord) -> (&str, &str) {
    if r.a <= r.b {
        (&r.a, &r.b)
    } else {
        (&r.b, &r.a)
    }
}

fn check_label(label: f64, line: usize) -> Result<(), TrainError> {
    if (0.0..=1.0).contains(&label) {
        Ok(())
    } else {
        Err(TrainError::Label { line, label })
    }
}

/// Reads `sentence_a \t sentence_b \t label` records.
pub fn read_pairs<R: io::Read>(input: R, has_header: bool) -> Result<Vec<PairRecord>, TrainError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(has_header)
        .quoting(false)
        .flexible(false)
        .from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1 + usize::from(has_header);
        let rec = rec?;
        if rec.len() != 3 {
            return Err(TrainError::Format {
                line,
                detail: format!("expected 3 tab-separated columns, found {}", rec.len()),
            });
        }
        let label: f64 = rec[2].trim().parse().map_err(|_| TrainError::Format {
            line,
            detail: format!("label {:?} is not a number", &rec[2]),
        })?;
        check_label(label, line)?;
        out.push(PairRecord::new(&rec[0], &rec[1], label));
    }
    Ok(out)
}

pub fn write_pairs<W: io::Write>(records: &[PairRecord], out: W) -> Result<(), TrainError> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(out);
    for r in records {
        w.write_record([r.a.as_str(), r.b.as_str(), &r.label.to_string()])?;
    }
    w.flush().map_err(|e| TrainError::Io {
        path: "<output>".into(),
        source: e,
    })
}

pub fn load_pairs(path: impl AsRef<Path>, has_header: bool) -> Result<Vec<PairRecord>, TrainError> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| TrainError::Io {
        path: path.as_ref().display().to_string(),
        source: e,
    })?;
    read_pairs(io::BufReader::new(file), has_header)
}

pub fn save_pairs(records: &[PairRecord], path: impl AsRef<Path>) -> Result<(), TrainError> {
    let file = std::fs::File::create(path.as_ref()).map_err(|e| TrainError::Io {
        path: path.as_ref().display().to_string(),
        source: e,
    })?;
    write_pairs(records, io::BufWriter::new(file))
}
