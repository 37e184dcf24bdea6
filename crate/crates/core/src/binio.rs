//! Little-endian binary helpers shared by the on-disk formats.

use ndarray::Array2;

use crate::error::{GraspError, Result};

pub(crate) const VERSION: u16 = 1;

/// Little-endian cursor that reports byte offsets in errors.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'a str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn err(&self, offset: usize, msg: impl Into<String>) -> GraspError {
        GraspError::format(format!("{} byte offset {offset}", self.what), msg)
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(self.pos, format!("truncated: need {n} more bytes")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(self.err(
                0,
                format!("bad magic {got:?}, expected {:?}", String::from_utf8_lossy(expected)),
            ));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        let at = self.pos;
        let v = f32::from_le_bytes(self.take(4)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(self.err(at, "non-finite value"));
        }
        Ok(v)
    }

    pub(crate) fn version(&mut self) -> Result<()> {
        let at = self.pos;
        let v = self.u16()?;
        if v != VERSION {
            return Err(self.err(at, format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(self.pos, "trailing bytes"));
        }
        Ok(())
    }

    pub(crate) fn f32_matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let mut out = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 28));
        for _ in 0..rows * cols {
            out.push(self.f32()? as f64);
        }
        Ok(Array2::from_shape_vec((rows, cols), out).expect("sized"))
    }
}

pub(crate) fn put_f32s<'a>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub(crate) fn read_bytes(path: &std::path::Path, hint: &str) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            GraspError::MissingFile {
                path: path.to_path_buf(),
                hint: hint.into(),
            }
        } else {
            GraspError::io(path, e)
        }
    })
}

pub(crate) fn put_header(out: &mut Vec<u8>, magic: &[u8; 4]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
}
