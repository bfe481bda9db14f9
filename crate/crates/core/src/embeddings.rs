//! Emotion-word vectors: loading from word2vec text tables, label lookup and
//! the pairwise similarity analysis.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::linalg::{norm, Matrix};
use crate::nn::loss::cosine_similarity;

/// Label words in numerical-label order (label 1 is `surprised`).
pub const DEFAULT_WORDS: [&str; 7] = [
    "surprised",
    "fear",
    "disgusted",
    "happy",
    "sad",
    "angry",
    "neutral",
];

const FIXTURE: &str = include_str!(concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../fixtures/emotions_16d.vec"
));

/// Ordered label words and their vectors. Row `k` belongs to numerical label `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionVocabulary {
    words: Vec<String>,
    vectors: Matrix,
}

impl EmotionVocabulary {
    pub fn new(words: Vec<String>, vectors: Matrix) -> Result<Self> {
        if words.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "vocabulary needs at least 2 words, got {}",
                words.len()
            )));
        }
        if vectors.rows() != words.len() {
            return Err(Error::DimensionMismatch {
                context: "vocabulary rows",
                expected: words.len(),
                got: vectors.rows(),
            });
        }
        let mut seen = HashMap::new();
        for (i, w) in words.iter().enumerate() {
            if seen.insert(w.as_str(), i).is_some() {
                return Err(Error::DuplicateWord {
                    word: w.clone(),
                    line: i + 1,
                });
            }
        }
        if !vectors.is_finite() {
            return Err(Error::NonFinite("word vectors"));
        }
        if vectors.iter_rows().any(|row| norm(row) == 0.0) {
            return Err(Error::ZeroNorm("word vector"));
        }
        Ok(Self { words, vectors })
    }

    /// The bundled seven-emotion, 16-dimensional table in [`DEFAULT_WORDS`] order.
    pub fn fixture() -> Self {
        let words: Vec<String> = DEFAULT_WORDS.iter().map(|w| w.to_string()).collect();
        parse_word2vec_text(FIXTURE, &words).expect("bundled fixture is valid")
    }

    pub fn fixture_text() -> &'static str {
        FIXTURE
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn classes(&self) -> usize {
        self.words.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        let word = word.to_ascii_lowercase();
        self.words.iter().position(|w| *w == word)
    }

    /// Vector of numerical label `label` (1-based).
    pub fn word_vector(&self, label: usize) -> Result<&[f64]> {
        if label == 0 || label > self.classes() {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.classes(),
            });
        }
        Ok(self.vectors.row(label - 1))
    }

    pub fn similarity_matrix(&self) -> SimilarityMatrix {
        let c = self.classes();
        let mut values = Matrix::zeros(c, c);
        for j in 0..c {
            for k in 0..c {
                values[(j, k)] = cosine_similarity(self.vectors.row(j), self.vectors.row(k))
                    .expect("vocabulary vectors have positive norm");
            }
        }
        SimilarityMatrix {
            words: self.words.clone(),
            values,
        }
    }

    /// Serializes in word2vec text layout with shortest round-trip float formatting.
    pub fn to_word2vec_text(&self) -> String {
        let mut out = format!("{} {}\n", self.classes(), self.dim());
        for (word, row) in self.words.iter().zip(self.vectors.iter_rows()) {
            out.push_str(word);
            for v in row {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save_word2vec_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_word2vec_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub words: Vec<String>,
    pub values: Matrix,
}

impl SimilarityMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let ia = self.words.iter().position(|w| w == a)?;
        let ib = self.words.iter().position(|w| w == b)?;
        Some(self.values[(ia, ib)])
    }

    /// CSV with a `word` header column followed by one column per word.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("word");
        for w in &self.words {
            write!(out, ",{w}").unwrap();
        }
        out.push('\n');
        for (w, row) in self.words.iter().zip(self.values.iter_rows()) {
            out.push_str(w);
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_word2vec_text(path: &Path, required_words: &[String]) -> Result<EmotionVocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_word2vec_text(&text, required_words)
}

/// Parses a word2vec text table and keeps exactly `required_words`, in that
/// order. Words are matched after ASCII lowercasing.
pub fn parse_word2vec_text(text: &str, required_words: &[String]) -> Result<EmotionVocabulary> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or(Error::Malformed {
        line: 1,
        message: "missing header".into(),
    })?;
    let header: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str| {
        s.parse::<usize>().map_err(|_| Error::Malformed {
            line: 1,
            message: format!("header field {s:?} is not an integer"),
        })
    };
    let (count, dim) = match header.as_slice() {
        [count, dim] => (parse_usize(count)?, parse_usize(dim)?),
        _ => {
            return Err(Error::Malformed {
                line: 1,
                message: "header must be \"<count> <dim>\"".into(),
            })
        }
    };
    if dim == 0 {
        return Err(Error::Malformed {
            line: 1,
            message: "dimension must be positive".into(),
        });
    }

    let wanted: HashMap<String, usize> = required_words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.to_ascii_lowercase(), i))
        .collect();
    if wanted.len() != required_words.len() {
        return Err(Error::InvalidConfig(
            "required word list contains duplicates".into(),
        ));
    }

    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut found: Vec<Option<Vec<f64>>> = vec![None; required_words.len()];
    let mut entries = 0;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        entries += 1;
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("non-empty line").to_ascii_lowercase();
        let values = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Malformed {
                    line: line_no,
                    message: format!("{f:?} is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(Error::Malformed {
                line: line_no,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        if let Some(first) = seen.insert(word.clone(), line_no) {
            log::debug!("{word:?} first seen at line {first}");
            return Err(Error::DuplicateWord {
                word,
                line: line_no,
            });
        }
        if let Some(&slot) = wanted.get(&word) {
            found[slot] = Some(values);
        }
    }
    if entries != count {
        return Err(Error::Malformed {
            line: 1,
            message: format!("header declares {count} entries, file has {entries}"),
        });
    }

    let mut rows = Vec::with_capacity(required_words.len());
    for (word, vector) in required_words.iter().zip(found) {
        rows.push(vector.ok_or_else(|| Error::MissingWord(word.clone()))?);
    }
    let words = required_words
        .iter()
        .map(|w| w.to_ascii_lowercase())
        .collect();
    EmotionVocabulary::new(words, Matrix::from_rows(&rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn verbatim_two_word_table() {
        let v = parse_word2vec_text("2 2\nhappy 1 0\nsad 0 1", &words(&["happy", "sad"])).unwrap();
        assert_eq!(v.vectors(), &Matrix::identity(2));
        assert_eq!(v.similarity_matrix().values, Matrix::identity(2));
    }

    #[test]
    fn required_order_is_respected() {
        let v = parse_word2vec_text("2 2\nhappy 1 0\nsad 0 1", &words(&["sad", "happy"])).unwrap();
        assert_eq!(v.word_vector(1).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn missing_word() {
        let r = parse_word2vec_text("2 2\nhappy 1 0\nsad 0 1", &words(&["happy", "neutral"]));
        assert!(matches!(r, Err(Error::MissingWord(w)) if w == "neutral"));
    }

    #[test]
    fn short_line_is_malformed() {
        let r = parse_word2vec_text("2 3\nhappy 1 0 0\nsad 0 1", &words(&["happy", "sad"]));
        assert!(matches!(r, Err(Error::Malformed { line: 3, .. })));
    }

    #[test]
    fn non_numeric_value_is_malformed() {
        let r = parse_word2vec_text("2 2\nhappy 1 x\nsad 0 1", &words(&["happy", "sad"]));
        assert!(matches!(r, Err(Error::Malformed { line: 2, .. })));
    }

    #[test]
    fn duplicate_word_is_an_error() {
        let r = parse_word2vec_text(
            "3 2\nhappy 1 0\nsad 0 1\nHappy 1 1",
            &words(&["happy", "sad"]),
        );
        assert!(matches!(r, Err(Error::DuplicateWord { line: 4, .. })));
    }

    #[test]
    fn matching_is_case_insensitive() {
        let v = parse_word2vec_text("2 2\nHAPPY 1 0\nSad 0 1", &words(&["happy", "SAD"])).unwrap();
        assert_eq!(v.words(), &["happy".to_string(), "sad".to_string()]);
    }

    #[test]
    fn word_vector_range() {
        let v = EmotionVocabulary::fixture();
        assert_eq!(v.word_vector(1).unwrap(), v.vectors().row(0));
        assert_eq!(v.word_vector(7).unwrap(), v.vectors().row(6));
        assert!(matches!(
            v.word_vector(8),
            Err(Error::LabelOutOfRange { label: 8, classes: 7 })
        ));
        assert!(v.word_vector(0).is_err());
    }

    #[test]
    fn fixture_encodes_expected_orderings() {
        let s = EmotionVocabulary::fixture().similarity_matrix();
        let sim = |a, b| s.get(a, b).unwrap();
        assert!(sim("surprised", "happy") > sim("surprised", "neutral"));
        assert!(sim("disgusted", "angry") > sim("disgusted", "happy"));
    }

    #[test]
    fn similarity_matrix_is_symmetric_with_unit_diagonal() {
        let v = EmotionVocabulary::fixture();
        let s = v.similarity_matrix();
        for j in 0..7 {
            assert!((s.values[(j, j)] - 1.0).abs() < 1e-9);
            for k in 0..7 {
                assert!((s.values[(j, k)] - s.values[(k, j)]).abs() < 1e-9);
                assert_eq!(
                    s.values[(j, k)],
                    cosine_similarity(v.vectors().row(j), v.vectors().row(k)).unwrap()
                );
            }
        }
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let v = EmotionVocabulary::fixture();
        let again = parse_word2vec_text(&v.to_word2vec_text(), v.words()).unwrap();
        assert_eq!(v, again);
    }

    #[test]
    fn zero_vector_rejected() {
        let r = parse_word2vec_text("2 2\nhappy 0 0\nsad 0 1", &words(&["happy", "sad"]));
        assert!(matches!(r, Err(Error::ZeroNorm(_))));
    }
}
