//! Datasets: synthetic class-correlated data, label-noise injection, CSV I/O
//! and stratified splitting.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embeddings::EmotionVocabulary;
use crate::error::{Error, Result};
use crate::nn::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub x: Vec<f64>,
    /// Numerical label, 1-based.
    pub label: usize,
    pub flipped: Option<bool>,
    pub true_label: Option<usize>,
    /// Secondary class mixed into a compound sample, 1-based.
    pub compound_with: Option<usize>,
}

impl Sample {
    pub fn new(id: impl Into<String>, x: Vec<f64>, label: usize) -> Self {
        Self {
            id: id.into(),
            x,
            label,
            flipped: None,
            true_label: None,
            compound_with: None,
        }
    }

    /// Zero-based class index of the (possibly noisy) label.
    pub fn class(&self) -> usize {
        self.label - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    classes: usize,
    dim: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(classes: usize, samples: Vec<Sample>) -> Result<Self> {
        let dim = samples.first().map_or(0, |s| s.x.len());
        for s in &samples {
            if s.x.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "sample features",
                    expected: dim,
                    got: s.x.len(),
                });
            }
            for label in std::iter::once(s.label)
                .chain(s.true_label)
                .chain(s.compound_with)
            {
                if label == 0 || label > classes {
                    return Err(Error::LabelOutOfRange { label, classes });
                }
            }
        }
        Ok(Self {
            classes,
            dim,
            samples,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Present only when every sample carries a flip flag.
    pub fn flip_mask(&self) -> Option<Vec<bool>> {
        self.samples.iter().map(|s| s.flipped).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.samples {
            counts[s.class()] += 1;
        }
        counts
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            classes: self.classes,
            dim: self.dim,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    /// Per-coordinate standard deviation of the isotropic Gaussian noise.
    pub cluster_spread: f64,
    pub compound_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 7,
            input_dim: 16,
            samples_per_class: 300,
            cluster_spread: 0.12,
            compound_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.input_dim + 1 < self.classes {
            return bad(format!(
                "input_dim {} cannot hold {} class means (need at least classes - 1)",
                self.input_dim, self.classes
            ));
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class must be positive".into());
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return bad(format!("invalid cluster_spread {}", self.cluster_spread));
        }
        if !(0.0..=1.0).contains(&self.compound_fraction) {
            return bad(format!(
                "compound_fraction {} outside [0, 1]",
                self.compound_fraction
            ));
        }
        Ok(())
    }
}

/// Class means whose pairwise Euclidean distances are `sqrt(2 (1 - cos))` of
/// the word vectors (a monotone map of the semantic distance), embedded by
/// classical multidimensional scaling and rescaled to unit mean pairwise
/// distance. Rows are classes, columns the `input_dim` coordinates.
pub fn class_means(spec: &SyntheticSpec, vocab: &EmotionVocabulary) -> Result<Matrix> {
    spec.validate()?;
    if vocab.classes() != spec.classes {
        return Err(Error::DimensionMismatch {
            context: "synthetic classes vs vocabulary",
            expected: vocab.classes(),
            got: spec.classes,
        });
    }
    let c = spec.classes;
    let sim = vocab.similarity_matrix().values;
    let sq = DMatrix::from_fn(c, c, |j, k| {
        if j == k {
            0.0
        } else {
            2.0 * (1.0 - 0.5 * (sim[(j, k)] + sim[(k, j)]))
        }
    });
    // Double centering: B = -1/2 J D² J.
    let centering = DMatrix::from_fn(c, c, |j, k| {
        if j == k {
            1.0 - 1.0 / c as f64
        } else {
            -1.0 / c as f64
        }
    });
    let gram = -0.5 * &centering * sq * &centering;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut means = Matrix::zeros(c, spec.input_dim);
    for (axis, &e) in order.iter().take(spec.input_dim.min(c)).enumerate() {
        let scale = eig.eigenvalues[e].max(0.0).sqrt();
        for k in 0..c {
            means[(k, axis)] = eig.eigenvectors[(k, e)] * scale;
        }
    }

    let mut total = 0.0;
    for j in 0..c {
        for k in j + 1..c {
            total += crate::nn::linalg::squared_distance(means.row(j), means.row(k)).sqrt();
        }
    }
    let mean_distance = total / (c * (c - 1) / 2) as f64;
    if mean_distance > 0.0 {
        means
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v /= mean_distance);
    }
    Ok(means)
}

/// Zero-based indices of the `count` classes most similar to `class`.
fn nearest_classes(sim: &Matrix, class: usize, count: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..sim.rows()).filter(|&k| k != class).collect();
    others.sort_by(|&a, &b| sim[(class, b)].total_cmp(&sim[(class, a)]).then(a.cmp(&b)));
    others.truncate(count);
    others
}

/// Number of semantically nearest classes a compound sample may borrow from.
/// With one partner the mixture always leans toward the closest neighbour.
pub const COMPOUND_PARTNERS: usize = 1;

/// Generates `samples_per_class` samples for every class. Pure samples are
/// the class mean plus isotropic noise; the compound share of each class is
/// `λ μ_a + (1 − λ) μ_b` plus the same noise, with `λ ~ U(0.5, 0.9)` and `b`
/// drawn from the [`COMPOUND_PARTNERS`] classes most similar to `a`. Compound
/// samples keep the dominant label `a`.
pub fn generate_synthetic(spec: &SyntheticSpec, vocab: &EmotionVocabulary) -> Result<Dataset> {
    let means = class_means(spec, vocab)?;
    let sim = vocab.similarity_matrix().values;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.cluster_spread)
        .map_err(|e| Error::InvalidConfig(format!("cluster_spread: {e}")))?;
    let compound_per_class =
        (spec.compound_fraction * spec.samples_per_class as f64).round() as usize;

    let mut samples = Vec::with_capacity(spec.classes * spec.samples_per_class);
    for class in 0..spec.classes {
        let partners = nearest_classes(&sim, class, COMPOUND_PARTNERS);
        for s in 0..spec.samples_per_class {
            let compound = s >= spec.samples_per_class - compound_per_class;
            let (mut x, partner) = if compound {
                let b = partners[rng.random_range(0..partners.len())];
                let lambda = rng.random_range(0.5..0.9);
                let x = means
                    .row(class)
                    .iter()
                    .zip(means.row(b))
                    .map(|(ma, mb)| lambda * ma + (1.0 - lambda) * mb)
                    .collect::<Vec<f64>>();
                (x, Some(b + 1))
            } else {
                (means.row(class).to_vec(), None)
            };
            for v in &mut x {
                *v += noise.sample(&mut rng);
            }
            let mut sample = Sample::new(format!("s{:05}", samples.len()), x, class + 1);
            sample.compound_with = partner;
            samples.push(sample);
        }
    }
    Dataset::new(spec.classes, samples)
}

/// Replaces exactly `round(ratio · n)` labels, chosen uniformly without
/// replacement, by a uniformly drawn different label. Every sample of the
/// result carries its flip flag and original label.
pub fn inject_noise(dataset: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Vec<bool>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidConfig(format!(
            "noise ratio {ratio} outside [0, 1]"
        )));
    }
    let n = dataset.len();
    let flips = (ratio * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; n];
    for i in index::sample(&mut rng, n, flips) {
        mask[i] = true;
    }
    let c = dataset.classes();
    let mut samples = dataset.samples.clone();
    for (sample, &flip) in samples.iter_mut().zip(&mask) {
        sample.true_label = Some(sample.true_label.unwrap_or(sample.label));
        sample.flipped = Some(sample.flipped.unwrap_or(false) || flip);
        if flip {
            // Uniform over the other c - 1 labels.
            let mut new = rng.random_range(1..c);
            if new >= sample.label {
                new += 1;
            }
            sample.label = new;
        }
    }
    let noisy = Dataset {
        classes: c,
        dim: dataset.dim,
        samples,
    };
    Ok((noisy, mask))
}

/// Stratified split by (given) label. Each class contributes
/// `round(test_fraction · n_k)` samples to the test side, clamped so both
/// sides keep at least one member; original order is preserved.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction {test_fraction} outside (0, 1)"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.classes()];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.class()].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::CannotStratify {
                class: class + 1,
                members: members.len(),
            });
        }
        let take = ((test_fraction * members.len() as f64).round() as usize)
            .clamp(1, members.len() - 1);
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..take]);
    }
    let mut is_test = vec![false; dataset.len()];
    for &i in &test {
        is_test[i] = true;
    }
    let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
        (0..dataset.len()).partition(|&i| is_test[i]);
    Ok((dataset.subset(&train_idx), dataset.subset(&test_idx)))
}

const ID: &str = "id";
const LABEL: &str = "label";
const FLIPPED: &str = "flipped";
const TRUE_LABEL: &str = "true_label";
const COMPOUND_WITH: &str = "compound_with";

/// Serializes to CSV: `id,label[,flipped,true_label][,compound_with],f0,…`.
/// Optional columns appear when any sample carries the field. Floats use the
/// shortest representation that round-trips exactly.
pub fn to_csv_bytes(dataset: &Dataset) -> Result<Vec<u8>> {
    let noisy = dataset
        .samples
        .iter()
        .any(|s| s.flipped.is_some() || s.true_label.is_some());
    let compound = dataset.samples.iter().any(|s| s.compound_with.is_some());
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec![ID.to_string(), LABEL.to_string()];
    if noisy {
        header.push(FLIPPED.into());
        header.push(TRUE_LABEL.into());
    }
    if compound {
        header.push(COMPOUND_WITH.into());
    }
    header.extend((0..dataset.dim).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    let opt = |v: Option<usize>| v.map(|l| l.to_string()).unwrap_or_default();
    for s in &dataset.samples {
        let mut row = vec![s.id.clone(), s.label.to_string()];
        if noisy {
            row.push(s.flipped.map(|f| f.to_string()).unwrap_or_default());
            row.push(opt(s.true_label));
        }
        if compound {
            row.push(opt(s.compound_with));
        }
        row.extend(s.x.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv_bytes(dataset)?).map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: &Path, classes: usize) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, classes)
}

pub fn read_csv<R: std::io::Read>(reader: R, classes: usize) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let malformed = |line: usize, message: String| Error::Malformed { line, message };
    let (Some(id_col), Some(label_col)) = (col(ID), col(LABEL)) else {
        return Err(malformed(1, "header must contain id and label".into()));
    };
    let flipped_col = col(FLIPPED);
    let true_col = col(TRUE_LABEL);
    let compound_col = col(COMPOUND_WITH);
    let feature_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| {
            h.strip_prefix('f')
                .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
        })
        .map(|(i, _)| i)
        .collect();
    for (k, &c) in feature_cols.iter().enumerate() {
        if header[c] != format!("f{k}") {
            return Err(malformed(1, format!("feature column {} out of order", header[c])));
        }
    }
    let known = 2
        + feature_cols.len()
        + [flipped_col, true_col, compound_col].iter().flatten().count();
    if known != header.len() {
        return Err(malformed(1, "unknown column in header".into()));
    }

    let mut samples = Vec::new();
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(malformed(
                line,
                format!("expected {} columns, found {}", header.len(), record.len()),
            ));
        }
        let parse_label = |c: usize| -> Result<usize> {
            let field = &record[c];
            let label: usize = field
                .parse()
                .map_err(|_| malformed(line, format!("label {field:?} is not an integer")))?;
            if label == 0 || label > classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
            Ok(label)
        };
        let parse_opt_label = |c: Option<usize>| -> Result<Option<usize>> {
            match c {
                Some(c) if !record[c].is_empty() => parse_label(c).map(Some),
                _ => Ok(None),
            }
        };
        let flipped = match flipped_col.map(|c| &record[c]) {
            None | Some("") => None,
            Some("true") | Some("1") => Some(true),
            Some("false") | Some("0") => Some(false),
            Some(other) => return Err(malformed(line, format!("bad flipped value {other:?}"))),
        };
        let x = feature_cols
            .iter()
            .map(|&c| {
                record[c]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| malformed(line, format!("bad feature value {:?}", &record[c])))
            })
            .collect::<Result<Vec<f64>>>()?;
        samples.push(Sample {
            id: record[id_col].to_string(),
            x,
            label: parse_label(label_col)?,
            flipped,
            true_label: parse_opt_label(true_col)?,
            compound_with: parse_opt_label(compound_col)?,
        });
    }
    Dataset::new(classes, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            samples_per_class: 20,
            seed: 9,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn zero_spread_samples_sit_on_their_means() {
        let vocab = EmotionVocabulary::fixture();
        let spec = SyntheticSpec {
            cluster_spread: 0.0,
            ..small_spec()
        };
        let means = class_means(&spec, &vocab).unwrap();
        let data = generate_synthetic(&spec, &vocab).unwrap();
        for s in data.samples() {
            assert_eq!(s.x.as_slice(), means.row(s.class()));
            // nearest-mean classification is exact
            let nearest = (0..7)
                .min_by(|&a, &b| {
                    crate::nn::linalg::squared_distance(&s.x, means.row(a))
                        .total_cmp(&crate::nn::linalg::squared_distance(&s.x, means.row(b)))
                })
                .unwrap();
            assert_eq!(nearest, s.class());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let vocab = EmotionVocabulary::fixture();
        let spec = SyntheticSpec {
            compound_fraction: 0.3,
            ..small_spec()
        };
        assert_eq!(
            generate_synthetic(&spec, &vocab).unwrap(),
            generate_synthetic(&spec, &vocab).unwrap()
        );
    }

    #[test]
    fn compound_share_and_partners() {
        let vocab = EmotionVocabulary::fixture();
        let spec = SyntheticSpec {
            compound_fraction: 0.3,
            ..small_spec()
        };
        let data = generate_synthetic(&spec, &vocab).unwrap();
        let sim = vocab.similarity_matrix().values;
        let compound: Vec<&Sample> = data
            .samples()
            .iter()
            .filter(|s| s.compound_with.is_some())
            .collect();
        assert_eq!(compound.len(), 7 * 6);
        for s in compound {
            let b = s.compound_with.unwrap() - 1;
            assert_ne!(b, s.class());
            assert!(nearest_classes(&sim, s.class(), COMPOUND_PARTNERS).contains(&b));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let vocab = EmotionVocabulary::fixture();
        for spec in [
            SyntheticSpec { classes: 1, ..small_spec() },
            SyntheticSpec { input_dim: 3, ..small_spec() },
            SyntheticSpec { compound_fraction: 1.5, ..small_spec() },
            SyntheticSpec { cluster_spread: -1.0, ..small_spec() },
            SyntheticSpec { samples_per_class: 0, ..small_spec() },
            SyntheticSpec { classes: 6, input_dim: 16, ..small_spec() },
        ] {
            assert!(generate_synthetic(&spec, &vocab).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn noise_ratio_zero_is_identity_on_labels() {
        let data = generate_synthetic(&small_spec(), &EmotionVocabulary::fixture()).unwrap();
        let (noisy, mask) = inject_noise(&data, 0.0, 1).unwrap();
        assert!(mask.iter().all(|&m| !m));
        assert_eq!(noisy.labels(), data.labels());
    }

    #[test]
    fn full_noise_changes_every_label() {
        let data = generate_synthetic(&small_spec(), &EmotionVocabulary::fixture()).unwrap();
        let (noisy, mask) = inject_noise(&data, 1.0, 1).unwrap();
        assert!(mask.iter().all(|&m| m));
        for (a, b) in noisy.samples().iter().zip(data.samples()) {
            assert_ne!(a.label, b.label);
            assert_eq!(a.true_label, Some(b.label));
        }
    }

    #[test]
    fn exact_flip_count() {
        let spec = SyntheticSpec {
            classes: 2,
            input_dim: 4,
            samples_per_class: 50,
            ..SyntheticSpec::default()
        };
        let vocab = EmotionVocabulary::new(
            vec!["a".into(), "b".into()],
            Matrix::from_rows(&[vec![1.0, 0.2], vec![0.1, 1.0]]).unwrap(),
        )
        .unwrap();
        let data = generate_synthetic(&spec, &vocab).unwrap();
        let (noisy, mask) = inject_noise(&data, 0.2, 3).unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 20);
        assert_eq!(noisy.flip_mask().unwrap(), mask);
        assert!(inject_noise(&data, 1.2, 3).is_err());
        assert!(inject_noise(&data, -0.1, 3).is_err());
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let vocab = EmotionVocabulary::fixture();
        let spec = SyntheticSpec {
            compound_fraction: 0.25,
            ..small_spec()
        };
        let data = generate_synthetic(&spec, &vocab).unwrap();
        let (noisy, _) = inject_noise(&data, 0.3, 5).unwrap();
        for d in [&data, &noisy] {
            let bytes = to_csv_bytes(d).unwrap();
            assert_eq!(&read_csv(bytes.as_slice(), 7).unwrap(), d);
        }
    }

    #[test]
    fn csv_errors_name_the_line() {
        let text = "id,label,f0,f1\na,1,0.5,0.25\nb,2,0.5\n";
        match read_csv(text.as_bytes(), 2) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_label_range_checked() {
        for text in ["id,label,f0\na,0,1.0\n", "id,label,f0\na,3,1.0\n"] {
            assert!(matches!(
                read_csv(text.as_bytes(), 2),
                Err(Error::LabelOutOfRange { .. })
            ));
        }
    }

    #[test]
    fn csv_without_optional_columns() {
        let d = read_csv("id,label,f0,f1\nx,2,1,-1e-3\n".as_bytes(), 2).unwrap();
        assert_eq!(d.samples()[0].x, vec![1.0, -1e-3]);
        assert_eq!(d.flip_mask(), None);
    }

    #[test]
    fn stratified_halves() {
        let spec = SyntheticSpec {
            samples_per_class: 10,
            ..small_spec()
        };
        let data = generate_synthetic(&spec, &EmotionVocabulary::fixture()).unwrap();
        let (train, test) = split(&data, 0.5, 4).unwrap();
        assert_eq!(train.class_counts(), vec![5; 7]);
        assert_eq!(test.class_counts(), vec![5; 7]);
        let mut ids: Vec<&str> = train
            .samples()
            .iter()
            .chain(test.samples())
            .map(|s| s.id.as_str())
            .collect();
        assert_eq!(ids.len(), data.len());
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), data.len());
        assert_eq!(split(&data, 0.5, 4).unwrap(), (train, test));
    }

    #[test]
    fn singleton_class_cannot_stratify() {
        let d = Dataset::new(
            2,
            vec![
                Sample::new("a", vec![0.0], 1),
                Sample::new("b", vec![1.0], 2),
                Sample::new("c", vec![2.0], 2),
            ],
        )
        .unwrap();
        assert!(matches!(
            split(&d, 0.5, 0),
            Err(Error::CannotStratify { class: 1, .. })
        ));
        assert!(split(&d, 1.0, 0).is_err());
    }
}
