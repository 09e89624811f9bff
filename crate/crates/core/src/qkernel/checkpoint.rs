use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamState, EmbeddingAdam};
use super::params::{Dims, ExperientialWeights, SharedParams};
use super::KernelError;

pub const CHECKPOINT_MAGIC: &str = "DUALIGHT-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position, decimal (exceeds JSON's integer range).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, KernelError> {
        use rand::SeedableRng;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| KernelError::Checkpoint(format!("bad rng word position {}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything needed to resume training or run a trained policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dims: Dims,
    pub scenario_sizes: Vec<usize>,
    /// One entry when parameters are shared across scenarios, otherwise one
    /// per scenario.
    pub online: Vec<SharedParams>,
    pub target: Vec<SharedParams>,
    pub emb: ExperientialWeights,
    pub shared_adam: Vec<AdamState>,
    pub emb_adam: EmbeddingAdam,
    pub rng: Vec<RngState>,
    pub episodes_done: usize,
    pub global_step: u64,
    /// Free-form run metadata (resolved training configuration).
    pub meta: serde_json::Value,
}

impl Checkpoint {
    /// Header line followed by one JSON document.
    pub fn to_bytes(&self) -> Result<Vec<u8>, KernelError> {
        let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n").into_bytes();
        serde_json::to_writer(&mut out, self).map_err(|e| KernelError::Checkpoint(e.to_string()))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_reader(reader: impl std::io::Read) -> Result<Self, KernelError> {
        let mut reader = BufReader::new(reader);
        let mut header = String::new();
        reader
            .read_line(&mut header)
            .map_err(|e| KernelError::Checkpoint(e.to_string()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CHECKPOINT_MAGIC) {
            return Err(KernelError::Checkpoint("not a checkpoint file".into()));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| KernelError::Checkpoint("missing version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(KernelError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let ckpt: Checkpoint =
            serde_json::from_reader(reader).map_err(|e| KernelError::Checkpoint(e.to_string()))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KernelError> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path.as_ref())
            .map_err(|e| KernelError::Checkpoint(format!("{}: {e}", path.as_ref().display())))?;
        f.write_all(&bytes)
            .map_err(|e| KernelError::Checkpoint(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KernelError> {
        let f = std::fs::File::open(path.as_ref())
            .map_err(|e| KernelError::Checkpoint(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_reader(f)
    }

    fn validate(&self) -> Result<(), KernelError> {
        let k = self.scenario_sizes.len();
        let bad = |m: &str| Err(KernelError::Checkpoint(m.to_string()));
        if self.online.is_empty() || !(self.online.len() == 1 || self.online.len() == k) {
            return bad("parameter set count must be 1 or the scenario count");
        }
        if self.target.len() != self.online.len() || self.shared_adam.len() != self.online.len() {
            return bad("target/optimizer count differs from online parameter count");
        }
        if !self
            .online
            .iter()
            .chain(&self.target)
            .all(|p| p.dims_match(&self.dims))
        {
            return bad("parameter shapes differ from recorded dimensions");
        }
        if self.emb.scenario_sizes() != self.scenario_sizes {
            return bad("embedding tables differ from recorded scenario sizes");
        }
        if self
            .emb
            .tables
            .iter()
            .any(|t| t.int.cols != self.dims.nodes() || t.fea.cols != self.dims.feat)
        {
            return bad("embedding table widths differ from recorded dimensions");
        }
        Ok(())
    }
}
