//! Binary posterior checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "CALIBRA\0"
//! version    u32
//! input_dim  u32
//! classes    u32
//! activation u8       0 = relu, 1 = tanh
//! depth      u32      followed by `depth` u32 hidden widths
//! n          u64      parameter count
//! mu         n * f64
//! rho        n * f64
//! prior      2 * f64  mean, std
//! seed       u64
//! sha256     32 bytes of everything above
//! ```

use calibra::models::{Activation, MlpSpec};
use calibra::variational::{GaussianPrior, VariationalPosterior};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"CALIBRA\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: MlpSpec,
    pub posterior: VariationalPosterior,
    pub prior: GaussianPrior,
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.spec.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.spec.class_count as u32).to_le_bytes());
        out.push(match self.spec.activation {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        });
        out.extend_from_slice(&(self.spec.hidden_dims.len() as u32).to_le_bytes());
        for &h in &self.spec.hidden_dims {
            out.extend_from_slice(&(h as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.posterior.len() as u64).to_le_bytes());
        for v in self.posterior.mu().iter().chain(self.posterior.rho()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.prior.mean.to_le_bytes());
        out.extend_from_slice(&self.prior.std.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| CliError::Checkpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch (file is corrupt or truncated)"));
        }
        let mut r = Reader { buf: &body[MAGIC.len()..] };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CliError::Checkpoint(format!("unsupported version {version}")));
        }
        let input_dim = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let activation = match r.take(1)?[0] {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            other => return Err(CliError::Checkpoint(format!("unknown activation code {other}"))),
        };
        let depth = r.u32()? as usize;
        let hidden = (0..depth).map(|_| r.u32().map(|h| h as usize)).collect::<Result<Vec<_>>>()?;
        let spec = MlpSpec::new(input_dim, hidden, classes, activation)
            .map_err(|e| CliError::Checkpoint(e.to_string()))?;
        let n = r.u64()? as usize;
        if n != spec.param_count() {
            return Err(CliError::Checkpoint(format!(
                "{n} parameters stored, architecture has {}",
                spec.param_count()
            )));
        }
        let mu = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let rho = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let prior = GaussianPrior::new(r.f64()?, r.f64()?).map_err(|e| CliError::Checkpoint(e.to_string()))?;
        let seed = r.u64()?;
        if !r.buf.is_empty() {
            return Err(bad("trailing bytes"));
        }
        if !mu.iter().chain(&rho).all(|v| v.is_finite()) {
            return Err(bad("non-finite parameter"));
        }
        let posterior = VariationalPosterior::new(mu, rho).map_err(|e| CliError::Checkpoint(e.to_string()))?;
        Ok(Self { spec, posterior, prior, seed })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(CliError::Checkpoint("unexpected end of data".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
