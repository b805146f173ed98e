//! JSON checkpoints: `{"format", "format_version", "checksum", "params"}`,
//! where `checksum` is the SHA-256 of the compact `params` JSON. Floats are
//! written with round-trip precision, so load-then-save is byte-identical.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use super::params::PolicyParams;

pub const CHECKPOINT_FORMAT: &str = "driftlab.policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    format_version: u32,
    checksum: String,
    params: PolicyParams,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_checkpoint(params: &PolicyParams) -> Result<String> {
    params.validate()?;
    let body = serde_json::to_string(params)?;
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        format_version: CHECKPOINT_VERSION,
        checksum: sha256_hex(body.as_bytes()),
        params: params.clone(),
    };
    Ok(serde_json::to_string(&ck)? + "\n")
}

pub fn decode_checkpoint(text: &str, origin: &str) -> Result<PolicyParams> {
    let ck: Checkpoint = serde_json::from_str(text)?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(Error::Config(format!("{origin}: not a policy checkpoint (format {:?})", ck.format)));
    }
    if ck.format_version != CHECKPOINT_VERSION {
        return Err(Error::FormatVersion {
            what: "checkpoint".into(),
            found: ck.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let found = sha256_hex(serde_json::to_string(&ck.params)?.as_bytes());
    if found != ck.checksum {
        return Err(Error::Checksum { path: origin.into(), expected: ck.checksum, found });
    }
    ck.params.validate()?;
    Ok(ck.params)
}

pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams> {
    decode_checkpoint(&std::fs::read_to_string(path)?, &path.display().to_string())
}
