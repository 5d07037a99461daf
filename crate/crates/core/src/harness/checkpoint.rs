//! Trial checkpoints: a small text header, a SHA-256 of the payload, and a
//! JSON payload with exact float round-tripping.
//!
//! ```text
//! SVRDQN-CHECKPOINT
//! version 1
//! sha256 <hex>
//! <json>
//! ```

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::hex_digest;
use super::curves::EvalRecord;
use crate::env::AnyEnv;
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::rl::{BufferMeta, OptimizerKind, QLearner, ReplayBuffer};

pub const CHECKPOINT_MAGIC: &str = "SVRDQN-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to continue a trial exactly where it stopped.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialCheckpoint {
    /// Fingerprint of the experiment config the trial belongs to.
    pub config_fingerprint: String,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub frame: u64,
    pub env: AnyEnv,
    pub observation: Vec<f64>,
    pub learner: QLearner,
    pub adam: AdamState,
    pub agent_rng: ChaCha8Rng,
    pub variance_rng: ChaCha8Rng,
    pub buffer_meta: BufferMeta,
    /// Present only when buffer persistence is on.
    pub buffer: Option<ReplayBuffer>,
    pub loss_sum: f64,
    pub loss_count: u64,
    pub records: Vec<EvalRecord>,
}

pub fn encode_checkpoint(ckpt: &TrialCheckpoint) -> Result<Vec<u8>> {
    let payload = serde_json::to_vec(ckpt).map_err(|e| Error::Corrupt(format!("encode: {e}")))?;
    let mut out = format!(
        "{CHECKPOINT_MAGIC}\nversion {CHECKPOINT_VERSION}\nsha256 {}\n",
        hex_digest(&payload)
    )
    .into_bytes();
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrialCheckpoint> {
    let mut parts = bytes.splitn(4, |&b| b == b'\n');
    let mut line = |what: &str| -> Result<&str> {
        let raw = parts.next().ok_or_else(|| Error::Corrupt(format!("missing {what}")))?;
        std::str::from_utf8(raw).map_err(|_| Error::Corrupt(format!("{what} is not text")))
    };
    if line("magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Corrupt("not a checkpoint file".into()));
    }
    let version: u32 = line("version")?
        .strip_prefix("version ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Corrupt("malformed version line".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let digest = line("checksum")?
        .strip_prefix("sha256 ")
        .ok_or_else(|| Error::Corrupt("malformed checksum line".into()))?
        .to_string();
    let payload = parts.next().ok_or_else(|| Error::Corrupt("missing payload".into()))?;
    if hex_digest(payload) != digest {
        return Err(Error::Corrupt("checksum mismatch (truncated or modified file)".into()));
    }
    serde_json::from_slice(payload).map_err(|e| Error::Corrupt(format!("payload: {e}")))
}

/// Writes via a temporary sibling and a rename, so a crash never leaves a
/// half-written checkpoint under the final name.
pub fn save_checkpoint(path: &Path, ckpt: &TrialCheckpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrialCheckpoint> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GridWorld;
    use crate::mlp::{Activation, Architecture, MlpNetwork};
    use crate::optim::AdamHyper;
    use crate::rl::Transition;
    use rand::SeedableRng;

    fn sample() -> TrialCheckpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let arch = Architecture::new(vec![16, 8, 4], Activation::Relu).unwrap();
        let net = MlpNetwork::init(arch.clone(), &mut rng);
        let mut buffer = ReplayBuffer::new(4).unwrap();
        for i in 0..6 {
            buffer.push(Transition {
                state: vec![i as f64 / 3.0],
                action: i % 4,
                reward: 0.1 * i as f64,
                next_state: vec![1.0 / 7.0],
                terminal: i == 5,
            });
        }
        TrialCheckpoint {
            config_fingerprint: "abc".into(),
            optimizer: OptimizerKind::SvrDqn,
            seed: 3,
            frame: 40,
            env: AnyEnv::Gridworld(GridWorld::default_4x4(5)),
            observation: vec![0.0; 16],
            learner: QLearner::new(net, 0.99, 10).unwrap(),
            adam: AdamState::new(arch.layout(), AdamHyper::default()).unwrap(),
            agent_rng: rng.clone(),
            variance_rng: ChaCha8Rng::seed_from_u64(9),
            buffer_meta: buffer.meta(),
            buffer: Some(buffer),
            loss_sum: 0.1 + 0.2,
            loss_count: 2,
            records: vec![],
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = sample();
        let back = decode_checkpoint(&encode_checkpoint(&c).unwrap()).unwrap();
        assert_eq!(back.learner.online().weights(), c.learner.online().weights());
        assert_eq!(back.learner.target().weights(), c.learner.target().weights());
        assert_eq!(back.adam, c.adam);
        assert_eq!(back.agent_rng, c.agent_rng);
        assert_eq!(back.loss_sum.to_bits(), c.loss_sum.to_bits());
        assert_eq!(back.buffer_meta, c.buffer_meta);
        let a: Vec<_> = back.buffer.unwrap().iter_ordered().cloned().collect();
        let b: Vec<_> = c.buffer.unwrap().iter_ordered().cloned().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn truncation_and_tampering_are_corrupt() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        for cut in [0, 5, 30, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        let last = flipped.len() - 2;
        flipped[last] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Corrupt(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        let text = String::from_utf8(bytes).unwrap().replacen("version 1", "version 7", 1);
        assert!(matches!(
            decode_checkpoint(text.as_bytes()),
            Err(Error::VersionMismatch { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        let c = sample();
        save_checkpoint(&path, &c).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.learner.online().weights(), c.learner.online().weights());
        assert!(!dir.path().join("t.ckpt.tmp").exists());
    }
}
