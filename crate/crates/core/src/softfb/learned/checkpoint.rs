//! Binary checkpoints: a magic string and version, the model shape, then
//! the parameter arrays as little-endian `f64`. Fourier features are
//! rebuilt from their seed.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::softfb::learned::{FbParams, FourierFeatures, LearnedFbModel};
use crate::softfb::PolicyMode;

const MAGIC: &[u8; 8] = b"SFBCKPT\0";
const VERSION: u32 = 1;

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    put_u64(out, xs.len() as u64);
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() < n {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("size overflow".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let n = self.usize()?;
        if n != expected {
            return Err(Error::Format(format!("{what} has {n} entries, expected {expected}")));
        }
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl LearnedFbModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * (self.params.w.len() + self.params.h.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for x in [
            self.n_states,
            self.n_actions,
            self.d,
            self.features.n_features,
        ] {
            put_u64(&mut out, x as u64);
        }
        put_u64(&mut out, self.features.seed);
        put_u64(&mut out, self.features.bandwidth.to_bits());
        put_u64(&mut out, self.gamma.to_bits());
        out.push(match self.mode {
            PolicyMode::Hard => 0,
            PolicyMode::Soft => 1,
        });
        put_f64s(&mut out, &self.params.w);
        put_f64s(&mut out, &self.params.b);
        put_f64s(&mut out, &self.params.h);
        put_f64s(&mut out, &self.rho);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf: bytes };
        if c.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let n_states = c.usize()?;
        let n_actions = c.usize()?;
        let d = c.usize()?;
        let n_features = c.usize()?;
        let seed = c.u64()?;
        let bandwidth = c.f64()?;
        let gamma = c.f64()?;
        let mode = match c.take(1)?[0] {
            0 => PolicyMode::Hard,
            1 => PolicyMode::Soft,
            m => return Err(Error::Format(format!("unknown policy mode tag {m}"))),
        };
        let features = FourierFeatures::new(d, n_features, bandwidth, seed)?;
        let n_pairs = n_states * n_actions;
        let w = c.f64s(n_pairs * d * features.len(), "W")?;
        let b = c.f64s(n_states * d, "B")?;
        let h = c.f64s(n_pairs * features.len(), "critic")?;
        let rho = c.f64s(n_states, "rho")?;
        if !c.buf.is_empty() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            d,
            gamma,
            mode,
            features,
            params: FbParams { w, b, h },
            rho,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::softfb::learned::ModelSpec;

    #[test]
    fn round_trip_is_exact() {
        let spec = ModelSpec {
            d: 3,
            n_features: 5,
            feature_seed: 17,
            mode: PolicyMode::Hard,
            ..ModelSpec::default()
        };
        let mut m = LearnedFbModel::new(3, 2, 0.7, vec![0.2, 0.3, 0.5], &spec).unwrap();
        m.params_mut().h[4] = std::f64::consts::PI;
        let back = LearnedFbModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let m = LearnedFbModel::new(2, 2, 0.5, vec![0.5, 0.5], &ModelSpec::default()).unwrap();
        let bytes = m.to_bytes();
        assert!(LearnedFbModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(LearnedFbModel::from_bytes(b"garbage!garbage!").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(LearnedFbModel::from_bytes(&extra).is_err());
    }
}
