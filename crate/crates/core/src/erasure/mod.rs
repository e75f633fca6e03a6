//! MDS erasure codec with a byte backend and a symbolic backend.
//!
//! The byte backend carries real payloads through a systematic Cauchy code
//! and is limited to `n <= 256`. The symbolic backend tracks EFIs only and
//! has no size limit; its verdicts match the byte backend exactly.

pub mod cauchy;
pub mod gf256;
pub mod symbolic;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cauchy::CauchyCodec;

pub type ObjectId = u32;
pub type Efi = u32;
pub type Payload = Arc<[u8]>;
type Sources = Vec<Vec<u8>>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("EFI {efi} outside [0, {n})")]
    UnknownEfi { efi: Efi, n: u32 },
    #[error("insufficient fragments: {have} distinct EFIs, need {need}")]
    Insufficient { have: usize, need: usize },
    #[error("fragments belong to different objects")]
    MixedObjects,
    #[error("fragment payload lengths differ")]
    LengthMismatch,
    #[error("byte backend supports n <= {max}, got n = {n}")]
    TooManyFragments { n: usize, max: usize },
    #[error("invalid codec parameters: {0}")]
    BadParams(String),
    #[error("byte backend needs payloads")]
    MissingPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Byte,
    Symbolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecParams {
    pub n: u32,
    pub k: u32,
    /// Fragment size in bits.
    pub flen: u64,
}

impl CodecParams {
    pub fn new(n: u32, k: u32, flen: u64) -> Result<Self, CodecError> {
        if k == 0 || k > n {
            return Err(CodecError::BadParams(format!("need 1 <= k <= n, got k = {k}, n = {n}")));
        }
        if flen == 0 {
            return Err(CodecError::BadParams("flen must be positive".into()));
        }
        Ok(Self { n, k, flen })
    }

    pub fn r(&self) -> u32 {
        self.n - self.k
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub object: ObjectId,
    pub efi: Efi,
    pub payload: Option<Payload>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectData {
    pub object: ObjectId,
    /// `k * flen` bits, present in byte mode only.
    pub content: Option<Payload>,
}

#[derive(Debug, Clone)]
pub struct Codec {
    params: CodecParams,
    bytes: Option<Arc<CauchyCodec>>,
}

impl Codec {
    pub fn new(params: CodecParams, backend: Backend) -> Result<Self, CodecError> {
        let bytes = match backend {
            Backend::Symbolic => None,
            Backend::Byte => {
                if !params.flen.is_multiple_of(8) {
                    return Err(CodecError::BadParams(format!(
                        "byte backend needs flen divisible by 8, got {}",
                        params.flen
                    )));
                }
                Some(Arc::new(CauchyCodec::new(params.k as usize, params.n as usize)?))
            }
        };
        Ok(Self { params, bytes })
    }

    /// Byte backend when `n` fits the field, symbolic otherwise.
    pub fn auto(params: CodecParams, prefer: Backend) -> Result<Self, CodecError> {
        let backend = if params.n as usize > CauchyCodec::MAX_N { Backend::Symbolic } else { prefer };
        Self::new(params, backend)
    }

    pub fn params(&self) -> CodecParams {
        self.params
    }

    pub fn backend(&self) -> Backend {
        if self.bytes.is_some() {
            Backend::Byte
        } else {
            Backend::Symbolic
        }
    }

    pub fn flen_bytes(&self) -> usize {
        (self.params.flen / 8) as usize
    }

    fn check_efi(&self, efi: Efi) -> Result<(), CodecError> {
        if efi >= self.params.n {
            return Err(CodecError::UnknownEfi { efi, n: self.params.n });
        }
        Ok(())
    }

    /// Symbolic verdict shared by both backends.
    pub fn decodable(&self, efis: impl IntoIterator<Item = Efi>) -> bool {
        symbolic::distinct_efis(efis, self.params.n) >= self.params.k as usize
    }

    pub fn encode(&self, object: &ObjectData, efis: &[Efi]) -> Result<Vec<Fragment>, CodecError> {
        for &e in efis {
            self.check_efi(e)?;
        }
        let Some(codec) = &self.bytes else {
            return Ok(efis.iter().map(|&efi| Fragment { object: object.object, efi, payload: None }).collect());
        };
        let content = object.content.as_ref().ok_or(CodecError::MissingPayload)?;
        let fl = self.flen_bytes();
        if content.len() != fl * self.params.k as usize {
            return Err(CodecError::LengthMismatch);
        }
        let sources: Vec<&[u8]> = content.chunks(fl).collect();
        efis.iter()
            .map(|&efi| {
                Ok(Fragment { object: object.object, efi, payload: Some(codec.encode_one(&sources, efi)?.into()) })
            })
            .collect()
    }

    /// Source blocks are `None` in symbolic mode.
    fn reconstruct(&self, fragments: &[Fragment]) -> Result<(ObjectId, Option<Sources>), CodecError> {
        let object = fragments
            .first()
            .map(|f| f.object)
            .ok_or(CodecError::Insufficient { have: 0, need: self.params.k as usize })?;
        if fragments.iter().any(|f| f.object != object) {
            return Err(CodecError::MixedObjects);
        }
        for f in fragments {
            self.check_efi(f.efi)?;
        }
        let have = symbolic::distinct_efis(fragments.iter().map(|f| f.efi), self.params.n);
        if have < self.params.k as usize {
            return Err(CodecError::Insufficient { have, need: self.params.k as usize });
        }
        let Some(codec) = &self.bytes else {
            return Ok((object, None));
        };
        let fl = self.flen_bytes();
        let mut parts = Vec::with_capacity(fragments.len());
        for f in fragments {
            let p = f.payload.as_deref().ok_or(CodecError::MissingPayload)?;
            if p.len() != fl {
                return Err(CodecError::LengthMismatch);
            }
            parts.push((f.efi, p));
        }
        Ok((object, Some(codec.reconstruct(&parts)?)))
    }

    pub fn decode(&self, fragments: &[Fragment]) -> Result<ObjectData, CodecError> {
        let (object, sources) = self.reconstruct(fragments)?;
        Ok(ObjectData { object, content: sources.map(|s| s.concat().into()) })
    }

    pub fn regenerate(&self, fragments: &[Fragment], target: Efi) -> Result<Fragment, CodecError> {
        Ok(self.regenerate_many(fragments, &[target])?.pop().expect("one target"))
    }

    /// Regenerates several EFIs with a single decode.
    pub fn regenerate_many(&self, fragments: &[Fragment], targets: &[Efi]) -> Result<Vec<Fragment>, CodecError> {
        for &e in targets {
            self.check_efi(e)?;
        }
        let (object, sources) = self.reconstruct(fragments)?;
        let (Some(codec), Some(sources)) = (&self.bytes, sources) else {
            return Ok(targets.iter().map(|&efi| Fragment { object, efi, payload: None }).collect());
        };
        let refs: Vec<&[u8]> = sources.iter().map(Vec::as_slice).collect();
        targets
            .iter()
            .map(|&efi| Ok(Fragment { object, efi, payload: Some(codec.encode_one(&refs, efi)?.into()) }))
            .collect()
    }
}
