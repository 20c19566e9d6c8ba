//! Inference-side preparation for voice conversion and the speaker
//! similarity harness.
//!
//! A conversion run needs three frame-aligned operands: content tokens from
//! the source features, the source F0 moved to the target singer's register,
//! and the target speaker embedding. Pitch is moved by adding the difference
//! between the target and source F0 modes to every voiced frame.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::features::{F0Track, FeatureMatrix, SpeakerEmbedding};
use crate::fmt::significant;
use crate::quantizer::{encode, TokenSequence};

/// Feature and F0 extractors may disagree on the frame count by this much.
pub const FRAME_TOLERANCE: usize = 2;

/// Cosine of the angle between two embeddings.
pub fn cosine_similarity(a: &SpeakerEmbedding, b: &SpeakerEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNormEmbedding);
    }
    let dot: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Element-wise mean of several embeddings of the same speaker, e.g. one
/// per reference clip.
pub fn mean_pool(embeddings: &[SpeakerEmbedding]) -> Result<SpeakerEmbedding> {
    let dim = embeddings
        .first()
        .map(SpeakerEmbedding::dim)
        .ok_or(Error::Empty("no embeddings to pool"))?;
    let mut sum = vec![0f64; dim];
    for e in embeddings {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: e.dim(),
            });
        }
        for (s, &v) in sum.iter_mut().zip(e.values()) {
            *s += f64::from(v);
        }
    }
    let n = embeddings.len() as f64;
    SpeakerEmbedding::new(sum.into_iter().map(|s| (s / n) as f32).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShiftMode {
    /// `hz + (target_mode − source_mode)`
    #[default]
    AdditiveHz,
    /// `hz · target_mode / source_mode`, which keeps musical intervals.
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Options {
    /// Width of the histogram bins used for the mode, in Hz.
    pub bin_width: f32,
    /// Shifted voiced frames are clamped to at least this value.
    pub floor_hz: f32,
    pub mode: ShiftMode,
}

impl Default for F0Options {
    fn default() -> Self {
        Self {
            bin_width: 1.0,
            floor_hz: 1.0,
            mode: ShiftMode::AdditiveHz,
        }
    }
}

fn bin_of(hz: f32, width: f32) -> i64 {
    (f64::from(hz) / f64::from(width)).round() as i64
}

/// Most frequent voiced F0 after rounding to integer Hz. Ties go to the
/// lower frequency.
pub fn f0_mode(track: &F0Track) -> Result<f32> {
    f0_mode_binned(track, 1.0)
}

/// [`f0_mode`] with bins `bin_width` Hz wide; returns the winning bin's center.
pub fn f0_mode_binned(track: &F0Track, bin_width: f32) -> Result<f32> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Config(format!("bin width {bin_width} must be positive")));
    }
    let mut bins: Vec<i64> = track
        .hz()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| bin_of(v, bin_width))
        .collect();
    if bins.is_empty() {
        return Err(Error::NoVoicedFrames);
    }
    bins.sort_unstable();
    let mut best = (bins[0], 0usize);
    for run in bins.chunk_by(|a, b| a == b) {
        if run.len() > best.1 {
            best = (run[0], run.len());
        }
    }
    Ok((best.0 as f64 * f64::from(bin_width)) as f32)
}

/// Result of [`f0_shift_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct F0Shift {
    pub track: F0Track,
    pub source_mode: f32,
    pub target_mode: f32,
    /// `target_mode − source_mode` in Hz.
    pub delta: f32,
}

/// Moves `source` so its mode lands on `target_mode`, adding the mode
/// difference to every voiced frame. Unvoiced frames stay 0.
pub fn f0_shift(source: &F0Track, target_mode: f32) -> Result<F0Track> {
    Ok(f0_shift_with(source, target_mode, &F0Options::default())?.track)
}

pub fn f0_shift_with(source: &F0Track, target_mode: f32, options: &F0Options) -> Result<F0Shift> {
    if !(target_mode > 0.0 && target_mode.is_finite()) {
        return Err(Error::Config(format!("target mode {target_mode} Hz must be positive")));
    }
    if !(options.floor_hz > 0.0 && options.floor_hz.is_finite()) {
        return Err(Error::Config(format!("F0 floor {} Hz must be positive", options.floor_hz)));
    }
    let source_mode = f0_mode_binned(source, options.bin_width)?;
    let delta = target_mode - source_mode;
    let width = options.bin_width;
    let bin_step = f64::from(delta) / f64::from(width);
    let whole_bins = (bin_step.fract() == 0.0).then_some(bin_step as i64);

    let hz = source
        .hz()
        .iter()
        .map(|&v| {
            if v == 0.0 {
                return 0.0;
            }
            let shifted = match options.mode {
                ShiftMode::AdditiveHz => {
                    let mut s = (f64::from(v) + f64::from(delta)) as f32;
                    if let Some(step) = whole_bins {
                        // Rounding the sum to f32 must not push a frame that sat
                        // just inside a bin edge into the neighbouring bin.
                        let want = bin_of(v, width) + step;
                        while bin_of(s, width) > want {
                            s = s.next_down();
                        }
                        while bin_of(s, width) < want {
                            s = s.next_up();
                        }
                    }
                    s
                }
                ShiftMode::Ratio => (f64::from(v) * f64::from(target_mode) / f64::from(source_mode)) as f32,
            };
            shifted.max(options.floor_hz)
        })
        .collect();
    Ok(F0Shift {
        track: F0Track::from_trusted(hz),
        source_mode,
        target_mode,
        delta,
    })
}

/// Pads with trailing unvoiced frames or truncates `f0` to `n_frames` when
/// the lengths differ by at most [`FRAME_TOLERANCE`].
pub fn reconcile_frames(f0: &F0Track, n_frames: usize) -> Result<F0Track> {
    let have = f0.n_frames();
    if have.abs_diff(n_frames) > FRAME_TOLERANCE {
        return Err(Error::FrameCountMismatch {
            features: n_frames,
            f0: have,
            tolerance: FRAME_TOLERANCE,
        });
    }
    let mut hz = f0.hz().to_vec();
    hz.resize(n_frames, 0.0);
    Ok(F0Track::from_trusted(hz))
}

/// The frame-aligned operands of one conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversionInput {
    pub tokens: TokenSequence,
    pub f0: F0Track,
    pub speaker: SpeakerEmbedding,
}

/// Tokens from the source features, source F0 shifted to `target_f0_mode`,
/// and the target speaker. The tokens depend only on the features and the
/// codebook.
pub fn prepare_conversion(
    source_features: &FeatureMatrix,
    source_f0: &F0Track,
    target_f0_mode: f32,
    target_speaker: &SpeakerEmbedding,
    codebook: &Codebook,
) -> Result<ConversionInput> {
    prepare_conversion_with(
        source_features,
        source_f0,
        target_f0_mode,
        target_speaker,
        codebook,
        &F0Options::default(),
    )
}

pub fn prepare_conversion_with(
    source_features: &FeatureMatrix,
    source_f0: &F0Track,
    target_f0_mode: f32,
    target_speaker: &SpeakerEmbedding,
    codebook: &Codebook,
    options: &F0Options,
) -> Result<ConversionInput> {
    let aligned = reconcile_frames(source_f0, source_features.n_frames())?;
    let tokens = encode(source_features, codebook)?;
    let f0 = f0_shift_with(&aligned, target_f0_mode, options)?.track;
    Ok(ConversionInput {
        tokens,
        f0,
        speaker: target_speaker.clone(),
    })
}

/// Mean speaker similarity of converted outputs to their sources and targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityResult {
    pub src_sim: f64,
    pub tgt_sim: f64,
    pub n_pairs: usize,
}

impl SimilarityResult {
    pub const CSV_HEADER: &'static str = "src_sim,tgt_sim,n_pairs";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        writeln!(
            out,
            "{},{},{}",
            significant(self.src_sim, 6),
            significant(self.tgt_sim, 6),
            self.n_pairs
        )
    }
}

/// `converted[i]` is compared with `source_refs[i]` and `target_refs[i]`.
pub fn evaluate_similarity(
    converted: &[SpeakerEmbedding],
    source_refs: &[SpeakerEmbedding],
    target_refs: &[SpeakerEmbedding],
) -> Result<SimilarityResult> {
    if converted.is_empty() {
        return Err(Error::Empty("no converted embeddings"));
    }
    if source_refs.len() != converted.len() || target_refs.len() != converted.len() {
        return Err(Error::LengthMismatch(format!(
            "{} converted, {} source refs, {} target refs",
            converted.len(),
            source_refs.len(),
            target_refs.len()
        )));
    }
    let pairs: Vec<(f64, f64)> = converted
        .par_iter()
        .zip(source_refs.par_iter().zip(target_refs.par_iter()))
        .map(|(c, (s, t))| Ok((cosine_similarity(c, s)?, cosine_similarity(c, t)?)))
        .collect::<Result<_>>()?;
    // summed in index order so the result does not depend on thread count
    let (src, tgt) = pairs
        .iter()
        .fold((0.0, 0.0), |(a, b), &(s, t)| (a + s, b + t));
    let n = pairs.len() as f64;
    Ok(SimilarityResult {
        src_sim: src / n,
        tgt_sim: tgt / n,
        n_pairs: pairs.len(),
    })
}

/// One row of a pairing file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingRow {
    pub converted: PathBuf,
    pub source_ref: PathBuf,
    pub target_ref: PathBuf,
}

const PAIRING_HEADER: [&str; 3] = ["converted_path", "source_ref_path", "target_ref_path"];

/// Parses `converted_path,source_ref_path,target_ref_path` rows. A header
/// row with those names is optional. Relative paths resolve against `base`.
pub fn parse_pairing_csv(text: &str, base: &Path) -> Result<Vec<PairingRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Pairing(e.to_string()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if line == 0 && record.iter().eq(PAIRING_HEADER) {
            continue;
        }
        if record.len() != 3 || record.iter().any(str::is_empty) {
            return Err(Error::Pairing(format!(
                "record {} has {} fields, expected 3 non-empty paths",
                line + 1,
                record.len()
            )));
        }
        rows.push(PairingRow {
            converted: base.join(&record[0]),
            source_ref: base.join(&record[1]),
            target_ref: base.join(&record[2]),
        });
    }
    if rows.is_empty() {
        return Err(Error::Empty("pairing file lists no rows"));
    }
    Ok(rows)
}
