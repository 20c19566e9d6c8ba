//! Feature matrices to discrete tokens and back.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codebook::{sidecar_path, Codebook, CodebookId};
use crate::error::{Error, Result};
use crate::features::{read_file, write_file, FeatureMatrix};
use crate::kmeans::assign_batch;
use crate::npy;

/// Per-frame center indices together with the id of the codebook that
/// produced them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<u32>,
    codebook_id: CodebookId,
}

impl TokenSequence {
    pub fn new(tokens: Vec<u32>, codebook_id: CodebookId) -> Self {
        Self {
            tokens,
            codebook_id,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn codebook_id(&self) -> CodebookId {
        self.codebook_id
    }

    /// Writes `<path>` (a 1-D `<u4` array) and `<path>.meta.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_file(path, &npy::encode_u32(&[self.tokens.len()], &self.tokens))?;
        let sidecar = TokenSidecar {
            codebook_id: self.codebook_id,
            n_frames: self.tokens.len(),
        };
        let mut json = serde_json::to_vec_pretty(&sidecar)?;
        json.push(b'\n');
        write_file(&sidecar_path(path), &json)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let tokens = tokens_from_bytes(&read_file(path)?).map_err(|e| e.in_file(path))?;
        let meta_path = sidecar_path(path);
        Self::with_sidecar(tokens, &read_file(&meta_path)?).map_err(|e| e.in_file(&meta_path))
    }

    /// Token array bytes plus the bytes of its JSON sidecar.
    pub fn from_bytes(tokens: &[u8], sidecar_json: &[u8]) -> Result<Self> {
        Self::with_sidecar(tokens_from_bytes(tokens)?, sidecar_json)
    }

    fn with_sidecar(tokens: Vec<u32>, sidecar_json: &[u8]) -> Result<Self> {
        let sidecar: TokenSidecar = serde_json::from_slice(sidecar_json)?;
        if sidecar.n_frames != tokens.len() {
            return Err(Error::LengthMismatch(format!(
                "sidecar records {} frames, file holds {}",
                sidecar.n_frames,
                tokens.len()
            )));
        }
        Ok(Self::new(tokens, sidecar.codebook_id))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenSidecar {
    codebook_id: CodebookId,
    n_frames: usize,
}

/// Decodes a 1-D `<u4` token array.
pub fn tokens_from_bytes(bytes: &[u8]) -> Result<Vec<u32>> {
    let (shape, tokens) = npy::decode_u32(bytes)?;
    if shape.len() != 1 {
        return Err(Error::Shape {
            expected: "1",
            found: shape,
        });
    }
    Ok(tokens)
}

/// Nearest-center token for every frame.
pub fn encode(features: &FeatureMatrix, codebook: &Codebook) -> Result<TokenSequence> {
    let assignment = assign_batch(features, codebook)?;
    Ok(TokenSequence::new(assignment.indices, codebook.id()))
}

/// Replaces every token with its center vector.
pub fn decode(tokens: &TokenSequence, codebook: &Codebook) -> Result<FeatureMatrix> {
    if tokens.codebook_id != codebook.id() {
        return Err(Error::CodebookMismatch {
            expected: tokens.codebook_id.to_string(),
            found: codebook.id().to_string(),
        });
    }
    let k = codebook.k();
    let mut data = Vec::with_capacity(tokens.n_frames() * codebook.dim());
    for (frame, &token) in tokens.tokens.iter().enumerate() {
        if token as usize >= k {
            return Err(Error::TokenOutOfRange { frame, token, k });
        }
        data.extend_from_slice(codebook.center(token as usize));
    }
    Ok(FeatureMatrix::from_trusted(tokens.n_frames(), codebook.dim(), data))
}

/// Mean Euclidean distance from each frame to its nearest center. This is
/// the same quantity as [`crate::metrics::amd`].
pub fn quantization_error(features: &FeatureMatrix, codebook: &Codebook) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::Empty("no frames to quantize"));
    }
    Ok(assign_batch(features, codebook)?.mean_distance())
}
