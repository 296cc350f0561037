//! Token datasets: schema, synthetic generator, file I/O and the
//! masked-adjacency relation.
//!
//! # File format
//!
//! JSON Lines, UTF-8, one object per line, `\n` terminated.
//!
//! Line 1 is the header:
//!
//! ```text
//! {"format":"maskdp-dataset","version":1,"n":N,"tokens_per_sample":K,
//!  "d_in":D,"n_classes":C,"generator":G}
//! ```
//!
//! where `G` is `null` or `{"seed":S,"config":{...GeneratorConfig...},"split":"train"|"test"}`.
//! Each following line is one record:
//!
//! ```text
//! {"tokens":[[f64; D]; K],"mask":[0|1; K],"label":L}
//! ```
//!
//! Reals are written in shortest round-trip decimal form. Readers check that
//! the record count equals `n`, every token has length `D`, masks have one
//! bit per token, and `L < C`. A file with no lines at all reads as an empty
//! dataset.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::mechanism::{RandomSeed, Stream};
use crate::model::TokenSubset;

pub const FORMAT_NAME: &str = "maskdp-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: validation error: {message}")]
    Validation { line: usize, message: String },
    #[error("dataset shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-token privacy mask; `true` marks a protected (private) token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask(Vec<bool>);

impl TokenMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn all(value: bool, len: usize) -> Self {
        Self(vec![value; len])
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn private_count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

impl Serialize for TokenMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|&b| u8::from(b)))
    }
}

impl<'de> Deserialize<'de> for TokenMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = Vec::<u8>::deserialize(d)?;
        raw.into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!(
                    "mask bit must be 0 or 1, got {other}"
                ))),
            })
            .collect::<Result<_, _>>()
            .map(TokenMask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedSample {
    pub tokens: Vec<Vec<f64>>,
    pub mask: TokenMask,
    pub label: usize,
}

impl TokenizedSample {
    /// Splits the tokens into `(private, public)` subsets, preserving order.
    pub fn tokenize(&self) -> (TokenSubset<'_>, TokenSubset<'_>) {
        let mut private = Vec::new();
        let mut public = Vec::new();
        for (token, &is_private) in self.tokens.iter().zip(self.mask.bits()) {
            if is_private {
                private.push(token.as_slice());
            } else {
                public.push(token.as_slice());
            }
        }
        (TokenSubset::new(private), TokenSubset::new(public))
    }

    pub fn all_tokens(&self) -> TokenSubset<'_> {
        TokenSubset::from_tokens(&self.tokens)
    }
}

/// Free-function form of [`TokenizedSample::tokenize`].
pub fn tokenize(sample: &TokenizedSample) -> (TokenSubset<'_>, TokenSubset<'_>) {
    sample.tokenize()
}

/// Which half of a generated dataset a file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub seed: u64,
    pub config: GeneratorConfig,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub tokens_per_sample: usize,
    pub d_in: usize,
    pub n_classes: usize,
    pub generator: Option<GeneratorRecord>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    #[serde(flatten)]
    meta: DatasetMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    meta: DatasetMeta,
    samples: Vec<TokenizedSample>,
}

impl Dataset {
    /// Builds a dataset, checking that every sample agrees with `meta`.
    pub fn new(meta: DatasetMeta, samples: Vec<TokenizedSample>) -> Result<Self, DataError> {
        if meta.n != samples.len() {
            return Err(DataError::Validation {
                line: 0,
                message: format!("header declares {} samples, got {}", meta.n, samples.len()),
            });
        }
        for (i, s) in samples.iter().enumerate() {
            validate_sample(&meta, s).map_err(|message| DataError::Validation {
                line: i + 2,
                message,
            })?;
        }
        Ok(Self { meta, samples })
    }

    pub fn empty() -> Self {
        Self {
            meta: DatasetMeta {
                n: 0,
                tokens_per_sample: 0,
                d_in: 0,
                n_classes: 0,
                generator: None,
            },
            samples: Vec::new(),
        }
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn samples(&self) -> &[TokenizedSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Copy with every mask replaced by `mask_for(index, sample)`.
    pub fn with_masks(
        &self,
        mut mask_for: impl FnMut(usize, &TokenizedSample) -> TokenMask,
    ) -> Result<Self, DataError> {
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| TokenizedSample {
                tokens: s.tokens.clone(),
                mask: mask_for(i, s),
                label: s.label,
            })
            .collect();
        Self::new(self.meta.clone(), samples)
    }

    /// Copy with sample `index` replaced.
    pub fn with_sample(&self, index: usize, sample: TokenizedSample) -> Result<Self, DataError> {
        let mut samples = self.samples.clone();
        samples[index] = sample;
        Self::new(self.meta.clone(), samples)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), DataError> {
        let header = Header {
            format: FORMAT_NAME.to_owned(),
            version: FORMAT_VERSION,
            meta: self.meta.clone(),
        };
        serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        for s in &self.samples {
            serde_json::to_writer(&mut w, s).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    /// Parses the line format. Returns the dataset and any warnings.
    pub fn read_from<R: BufRead>(r: R) -> Result<(Self, Vec<String>), DataError> {
        let mut lines = r.lines();
        let header_line = match lines.next() {
            None => {
                return Ok((
                    Self::empty(),
                    vec!["dataset file is empty; using an empty dataset".to_owned()],
                ))
            }
            Some(l) => l?,
        };
        let header: Header = serde_json::from_str(&header_line).map_err(|e| DataError::Parse {
            line: 1,
            message: format!("invalid header: {e}"),
        })?;
        if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(DataError::Parse {
                line: 1,
                message: format!(
                    "unsupported format {:?} version {}",
                    header.format, header.version
                ),
            });
        }
        let meta = header.meta;
        let mut samples = Vec::with_capacity(meta.n);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let sample: TokenizedSample =
                serde_json::from_str(&line).map_err(|e| DataError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            validate_sample(&meta, &sample).map_err(|message| DataError::Validation {
                line: line_no,
                message,
            })?;
            samples.push(sample);
        }
        if samples.len() != meta.n {
            return Err(DataError::Validation {
                line: 1,
                message: format!(
                    "header declares {} samples, file holds {}",
                    meta.n,
                    samples.len()
                ),
            });
        }
        let mut warnings = Vec::new();
        if samples.is_empty() {
            warnings.push("dataset holds no samples".to_owned());
        }
        Ok((Self { meta, samples }, warnings))
    }
}

fn validate_sample(meta: &DatasetMeta, s: &TokenizedSample) -> Result<(), String> {
    if s.mask.len() != s.tokens.len() {
        return Err(format!(
            "mask length {} does not match token count {}",
            s.mask.len(),
            s.tokens.len()
        ));
    }
    if s.tokens.len() != meta.tokens_per_sample {
        return Err(format!(
            "sample has {} tokens, header declares {}",
            s.tokens.len(),
            meta.tokens_per_sample
        ));
    }
    if let Some((k, t)) = s
        .tokens
        .iter()
        .enumerate()
        .find(|(_, t)| t.len() != meta.d_in)
    {
        return Err(format!(
            "token {k} has dimension {}, header declares {}",
            t.len(),
            meta.d_in
        ));
    }
    if s.tokens.iter().flatten().any(|v| !v.is_finite()) {
        return Err("token values must be finite".to_owned());
    }
    if s.label >= meta.n_classes {
        return Err(format!(
            "label {} out of range for {} classes",
            s.label, meta.n_classes
        ));
    }
    Ok(())
}

/// Writes `dataset` to `path`.
pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    dataset.write_to(BufWriter::new(File::create(path)?))
}

/// Reads a dataset; warnings (e.g. an empty file) go to stderr.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let (dataset, warnings) = Dataset::read_from(BufReader::new(File::open(path)?))?;
    for w in warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(dataset)
}

/// Whether `a` and `b` differ in protected tokens of exactly one record.
///
/// Labels count as unprotected record content.
pub fn masked_adjacent(a: &Dataset, b: &Dataset) -> Result<bool, DataError> {
    let (ma, mb) = (a.meta(), b.meta());
    if ma.n != mb.n || ma.tokens_per_sample != mb.tokens_per_sample || ma.d_in != mb.d_in {
        return Err(DataError::ShapeMismatch(format!(
            "(n, K, d_in) = ({}, {}, {}) vs ({}, {}, {})",
            ma.n, ma.tokens_per_sample, ma.d_in, mb.n, mb.tokens_per_sample, mb.d_in
        )));
    }
    if let Some(i) = a
        .samples()
        .iter()
        .zip(b.samples())
        .position(|(ra, rb)| ra.mask != rb.mask)
    {
        return Err(DataError::ShapeMismatch(format!(
            "record {i} has different masks"
        )));
    }
    let mut differing = None;
    for (i, (ra, rb)) in a.samples().iter().zip(b.samples()).enumerate() {
        if ra != rb {
            if differing.is_some() {
                return Ok(false);
            }
            differing = Some(i);
        }
    }
    let Some(i) = differing else {
        return Ok(false);
    };
    let (ra, rb) = (&a.samples()[i], &b.samples()[i]);
    if ra.label != rb.label {
        return Ok(false);
    }
    let mut protected_change = false;
    for ((ta, tb), &private) in ra.tokens.iter().zip(&rb.tokens).zip(ra.mask.bits()) {
        if ta != tb {
            if !private {
                return Ok(false);
            }
            protected_change = true;
        }
    }
    Ok(protected_change)
}

/// Parameters of the synthetic surrogate for an anonymised video dataset.
///
/// Public tokens stand for synthetic avatars and carry the class signal
/// `public_signal * mu_y`. Private tokens stand for real background: a weaker
/// class signal `private_signal * mu_y` plus `nuisance * nu_i`, a per-sample
/// identifying direction. All tokens get unit Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Training samples.
    pub n: usize,
    /// Held-out samples drawn from the same class directions.
    pub n_test: usize,
    pub tokens_per_sample: usize,
    pub d_in: usize,
    pub n_classes: usize,
    /// Fraction of tokens marked private; `ceil(fraction * K)` per sample.
    pub private_fraction: f64,
    pub public_signal: f64,
    pub private_signal: f64,
    pub nuisance: f64,
}

impl Default for GeneratorConfig {
    /// The frozen default dataset of the acceptance experiment.
    fn default() -> Self {
        Self {
            n: 4000,
            n_test: 1000,
            tokens_per_sample: 8,
            d_in: 16,
            n_classes: 10,
            private_fraction: 0.5,
            public_signal: 3.5,
            private_signal: 1.0,
            nuisance: 1.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.tokens_per_sample == 0 || self.d_in == 0 || self.n_classes == 0 {
            return bad("tokens_per_sample, d_in and n_classes must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.private_fraction) {
            return bad(format!(
                "private_fraction {} outside [0, 1]",
                self.private_fraction
            ));
        }
        for (name, v) in [
            ("public_signal", self.public_signal),
            ("private_signal", self.private_signal),
            ("nuisance", self.nuisance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }

    pub fn private_tokens(&self) -> usize {
        ((self.private_fraction * self.tokens_per_sample as f64).ceil() as usize)
            .min(self.tokens_per_sample)
    }
}

/// Train and test halves of one synthetic draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
}

fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Unit class directions, Gram-Schmidt orthonormalised while the classes fit
/// in `dim` dimensions.
fn class_directions<R: Rng>(n_classes: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    while dirs.len() < n_classes {
        let mut v = random_unit(dim, rng);
        if dirs.len() < dim {
            for d in &dirs {
                let proj: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(d).for_each(|(a, b)| *a -= proj * b);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-6 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
        }
        dirs.push(v);
    }
    dirs
}

/// Draws a synthetic train/test pair. Fully determined by `(config, seed)`.
pub fn generate_synthetic(config: &GeneratorConfig, seed: u64) -> Result<SyntheticData, DataError> {
    config.validate()?;
    let mut rng = RandomSeed(seed).stream(Stream::DataGeneration);
    let dirs = class_directions(config.n_classes, config.d_in, &mut rng);
    let k = config.tokens_per_sample;
    let n_private = config.private_tokens();

    let mut draw = |count: usize| -> Vec<TokenizedSample> {
        (0..count)
            .map(|_| {
                let label = rng.random_range(0..config.n_classes);
                let nuisance_dir = random_unit(config.d_in, &mut rng);
                let mut bits = vec![false; k];
                for idx in sample_indices(&mut rng, k, n_private) {
                    bits[idx] = true;
                }
                let mu = &dirs[label];
                let tokens = bits
                    .iter()
                    .map(|&private| {
                        (0..config.d_in)
                            .map(|d| {
                                let noise: f64 = rng.sample(StandardNormal);
                                if private {
                                    config.private_signal * mu[d]
                                        + config.nuisance * nuisance_dir[d]
                                        + noise
                                } else {
                                    config.public_signal * mu[d] + noise
                                }
                            })
                            .collect()
                    })
                    .collect();
                TokenizedSample {
                    tokens,
                    mask: TokenMask::new(bits),
                    label,
                }
            })
            .collect()
    };
    let train_samples = draw(config.n);
    let test_samples = draw(config.n_test);

    let meta = |n: usize, split: Split| DatasetMeta {
        n,
        tokens_per_sample: k,
        d_in: config.d_in,
        n_classes: config.n_classes,
        generator: Some(GeneratorRecord {
            seed,
            config: config.clone(),
            split,
        }),
    };
    Ok(SyntheticData {
        train: Dataset::new(meta(config.n, Split::Train), train_samples)?,
        test: Dataset::new(meta(config.n_test, Split::Test), test_samples)?,
    })
}
