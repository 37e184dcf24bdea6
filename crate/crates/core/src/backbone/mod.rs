//! Sequential encoders mapping enhanced item rows (L x h) to per-position
//! user representations.

mod gru;
mod sasrec;

pub use gru::{GruCache, GruLayer, GruParams};
pub use sasrec::{SasBlock, SasRecCache, SasRecParams};

use std::path::Path;

use crate::binio::{put_f32s, put_header, read_bytes, Reader};
use crate::error::{GraspError, Result};
use crate::nn::{self, Mat, Params, Vector};
use crate::rng::Rng;

/// Checkpoint layout: magic | version u16 | kind u8 | h, max_seq_len,
/// n_layers, n_heads as u32 | dropout f64 | tensors as f32 in registry order.
const GBKB_MAGIC: &[u8; 4] = b"GBKB";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Gru4Rec,
    SasRec,
}

impl BackboneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::Gru4Rec => "gru4rec",
            BackboneKind::SasRec => "sasrec",
        }
    }

    fn code(self) -> u8 {
        match self {
            BackboneKind::Gru4Rec => 1,
            BackboneKind::SasRec => 2,
        }
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = GraspError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru4rec" | "gru" => Ok(BackboneKind::Gru4Rec),
            "sasrec" => Ok(BackboneKind::SasRec),
            other => Err(GraspError::Argument(format!(
                "unknown backbone {other:?} (gru4rec|sasrec)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub h: usize,
    pub max_seq_len: usize,
    pub n_layers: usize,
    /// SASRec only.
    pub n_heads: usize,
    pub dropout: f64,
}

impl BackboneConfig {
    pub fn sasrec(h: usize) -> Self {
        Self {
            kind: BackboneKind::SasRec,
            h,
            max_seq_len: 100,
            n_layers: 2,
            n_heads: 1,
            dropout: 0.2,
        }
    }

    pub fn gru4rec(h: usize) -> Self {
        Self {
            kind: BackboneKind::Gru4Rec,
            h,
            max_seq_len: 100,
            n_layers: 1,
            n_heads: 1,
            dropout: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.max_seq_len == 0 || self.n_layers == 0 {
            return Err(GraspError::Argument(
                "h, max_seq_len and n_layers must be positive".into(),
            ));
        }
        if self.kind == BackboneKind::SasRec && (self.n_heads == 0 || !self.h.is_multiple_of(self.n_heads)) {
            return Err(GraspError::Argument(format!(
                "h = {} is not divisible by n_heads = {}",
                self.h, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GraspError::Argument(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::sasrec(64)
    }
}

/// Per-position outputs; `final` is the last row.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutput {
    pub per_position: Mat,
}

impl SequenceOutput {
    pub fn final_state(&self) -> Vector {
        self.per_position.row(self.per_position.nrows() - 1).to_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    Gru(GruParams),
    SasRec(SasRecParams),
}

#[derive(Debug)]
pub enum BackboneCache {
    Gru(GruCache),
    SasRec(SasRecCache),
}

impl Backbone {
    pub fn init(cfg: BackboneConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.kind {
            BackboneKind::Gru4Rec => Backbone::Gru(GruParams::init(cfg, rng)),
            BackboneKind::SasRec => Backbone::SasRec(SasRecParams::init(cfg, rng)),
        })
    }

    pub fn config(&self) -> BackboneConfig {
        match self {
            Backbone::Gru(p) => p.cfg,
            Backbone::SasRec(p) => p.cfg,
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Backbone::Gru(p) => Backbone::Gru(p.zeros_like()),
            Backbone::SasRec(p) => Backbone::SasRec(p.zeros_like()),
        }
    }

    /// Forward pass. Dropout is active only when a random stream is given.
    pub fn forward(&self, inputs: &Mat, dropout: Option<&mut Rng>) -> Result<(SequenceOutput, BackboneCache)> {
        let h = self.config().h;
        if inputs.ncols() != h {
            return Err(GraspError::Argument(format!(
                "inputs have {} columns, backbone h = {h}",
                inputs.ncols()
            )));
        }
        if inputs.nrows() == 0 {
            return Err(GraspError::Argument("empty sequence".into()));
        }
        match self {
            Backbone::Gru(p) => {
                let (out, cache) = p.forward(inputs, dropout);
                Ok((SequenceOutput { per_position: out }, BackboneCache::Gru(cache)))
            }
            Backbone::SasRec(p) => {
                let (out, cache) = p.forward(inputs, dropout)?;
                Ok((SequenceOutput { per_position: out }, BackboneCache::SasRec(cache)))
            }
        }
    }

    /// Evaluation-mode forward.
    pub fn encode(&self, inputs: &Mat) -> Result<SequenceOutput> {
        Ok(self.forward(inputs, None)?.0)
    }

    /// Parameter gradients and the gradient with respect to the inputs.
    pub fn backward(&self, cache: &BackboneCache, d_out: &Mat) -> (Backbone, Mat) {
        match (self, cache) {
            (Backbone::Gru(p), BackboneCache::Gru(c)) => {
                let (g, dx) = p.backward(c, d_out);
                (Backbone::Gru(g), dx)
            }
            (Backbone::SasRec(p), BackboneCache::SasRec(c)) => {
                let (g, dx) = p.backward(c, d_out);
                (Backbone::SasRec(g), dx)
            }
            _ => panic!("backbone cache does not match backbone kind"),
        }
    }

    pub fn encode_checkpoint(&self) -> Vec<u8> {
        let cfg = self.config();
        let mut out = Vec::new();
        put_header(&mut out, GBKB_MAGIC);
        out.push(cfg.kind.code());
        for n in [cfg.h, cfg.max_seq_len, cfg.n_layers, cfg.n_heads] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        out.extend_from_slice(&cfg.dropout.to_le_bytes());
        for t in self.tensors() {
            put_f32s(&mut out, t);
        }
        out
    }

    pub fn decode_checkpoint(bytes: &[u8], what: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, what);
        r.magic(GBKB_MAGIC)?;
        r.version()?;
        let at = r.offset();
        let kind = match r.u8()? {
            1 => BackboneKind::Gru4Rec,
            2 => BackboneKind::SasRec,
            k => return Err(r.err(at, format!("unknown backbone kind {k}"))),
        };
        let h = r.u32()? as usize;
        let max_seq_len = r.u32()? as usize;
        let n_layers = r.u32()? as usize;
        let n_heads = r.u32()? as usize;
        let dropout = f64::from_bits(r.u64()?);
        let cfg = BackboneConfig {
            kind,
            h,
            max_seq_len,
            n_layers,
            n_heads,
            dropout,
        };
        cfg.validate().map_err(|e| r.err(at, e.to_string()))?;
        let mut model = match kind {
            BackboneKind::Gru4Rec => Backbone::Gru(GruParams::zeros(cfg)),
            BackboneKind::SasRec => Backbone::SasRec(SasRecParams::zeros(cfg)),
        };
        for t in model.tensors_mut() {
            for v in t.iter_mut() {
                *v = r.f32()? as f64;
            }
        }
        r.finish()?;
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_checkpoint()).map_err(|e| GraspError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path, "expected a backbone checkpoint (GBKB)")?;
        Self::decode_checkpoint(&bytes, &path.display().to_string())
    }
}

impl Params for Backbone {
    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Backbone::Gru(p) => p.tensors(),
            Backbone::SasRec(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Backbone::Gru(p) => p.tensors_mut(),
            Backbone::SasRec(p) => p.tensors_mut(),
        }
    }
}

/// sigma(o . item)
pub fn score(o: &[f64], item_repr: &[f64]) -> f64 {
    nn::sigmoid(nn::dot(o, item_repr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::uniform_mat;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn score_examples() {
        assert_eq!(score(&[1.0, 0.0], &[0.0, 5.0]), 0.5);
        assert_abs_diff_eq!(score(&[1.0, 0.0], &[3.0, 0.0]), 0.9525741, epsilon = 1e-7);
        let a = [0.3, -0.7, 1.1];
        let b = [2.0, 0.1, -0.4];
        assert_eq!(score(&a, &b), score(&b, &a));
    }

    #[test]
    fn config_validation() {
        let mut cfg = BackboneConfig::sasrec(6);
        cfg.n_heads = 4;
        assert!(cfg.validate().is_err());
        cfg.n_heads = 3;
        assert!(cfg.validate().is_ok());
        cfg.max_seq_len = 0;
        assert!(cfg.validate().is_err());
        assert!(BackboneConfig {
            dropout: 1.0,
            ..BackboneConfig::gru4rec(4)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn checkpoint_round_trip_both_kinds() {
        for cfg in [BackboneConfig::gru4rec(4), BackboneConfig::sasrec(4)] {
            let mut m = Backbone::init(cfg, &mut stream(3, &[])).unwrap();
            m.round_to_f32();
            let back = Backbone::decode_checkpoint(&m.encode_checkpoint(), "t").unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn shape_and_finiteness() {
        for cfg in [BackboneConfig::gru4rec(8), BackboneConfig::sasrec(8)] {
            let mut rng = stream(4, &[]);
            let m = Backbone::init(cfg, &mut rng).unwrap();
            let x = uniform_mat(&mut rng, 7, 8, 1) * 3.0;
            let out = m.encode(&x).unwrap();
            assert_eq!(out.per_position.dim(), (7, 8));
            assert!(out.per_position.iter().all(|v| v.is_finite()));
            assert_eq!(out.final_state(), out.per_position.row(6).to_owned());
            assert!(m.encode(&Mat::zeros((0, 8))).is_err());
            assert!(m.encode(&Mat::zeros((2, 5))).is_err());
        }
    }

    #[test]
    fn deterministic_init() {
        let a = Backbone::init(BackboneConfig::sasrec(8), &mut stream(11, &[])).unwrap();
        let b = Backbone::init(BackboneConfig::sasrec(8), &mut stream(11, &[])).unwrap();
        assert_eq!(a, b);
    }
}
