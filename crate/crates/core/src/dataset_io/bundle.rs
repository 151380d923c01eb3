// SPDX-License-Identifier: Apache-2.0

//! `FingerprintBundle` and its little-endian binary layout:
//!
//! ```text
//! "PRNU" 0x01                      magic + version
//! u32 rows, u32 cols, u32 L
//! u8 flags  (bit0 zero_meaned, bit1 dft_wiener, bit2 whitened)
//! u8 has_R, u8 has_seed, u8 reserved = 0
//! u16 id_len, id_len bytes of UTF-8 denoiser id
//! [u64 seed]                       if has_seed
//! rows*cols f64 fingerprint        row-major
//! [rows*cols f64 normalizer R]     if has_R
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::ImageMatrix;

const MAGIC: &[u8; 4] = b"PRNU";
const VERSION: u8 = 0x01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct PostprocessFlags(u8);

impl PostprocessFlags {
    pub const ZERO_MEANED: PostprocessFlags = PostprocessFlags(0b001);
    pub const DFT_WIENER: PostprocessFlags = PostprocessFlags(0b010);
    pub const WHITENED: PostprocessFlags = PostprocessFlags(0b100);
    const ALL: u8 = 0b111;

    pub const fn empty() -> Self {
        PostprocessFlags(0)
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits & !Self::ALL == 0).then_some(PostprocessFlags(bits))
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn contains(self, other: PostprocessFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: PostprocessFlags) {
        self.0 |= other.0;
    }

    pub fn names(self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.contains(Self::ZERO_MEANED) {
            v.push("zero_meaned");
        }
        if self.contains(Self::DFT_WIENER) {
            v.push("dft_wiener");
        }
        if self.contains(Self::WHITENED) {
            v.push("whitened");
        }
        v
    }
}

/// Persisted fingerprint estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct FingerprintBundle {
    pub fingerprint: ImageMatrix,
    /// `R = Σ X̂∘X̂`; required by the genie NP detector.
    pub normalizer: Option<ImageMatrix>,
    pub image_count: u32,
    pub flags: PostprocessFlags,
    pub denoiser_id: String,
    pub seed: Option<u64>,
}

impl FingerprintBundle {
    /// Checks shape agreement, strict positivity of `R` and, when the
    /// zero-mean flag is set, the row/column mean condition.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if self.flags.contains(PostprocessFlags::ZERO_MEANED) {
            let worst = max_abs_row_col_mean(&self.fingerprint);
            if worst > 1e-9 {
                return Err(Error::Format(format!(
                    "zero_meaned flag set but a row/column mean is {worst:e}"
                )));
            }
        }
        Ok(())
    }

    pub fn validate_structure(&self) -> Result<()> {
        if let Some(r) = &self.normalizer {
            self.fingerprint.ensure_shape(r)?;
            if let Some(i) = r.data().iter().position(|&v| !(v > 0.0)) {
                return Err(Error::Format(format!("normalizer not strictly positive at index {i}")));
            }
        }
        if self.denoiser_id.len() > u16::MAX as usize {
            return Err(Error::Format("denoiser id longer than 65535 bytes".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        self.fingerprint.shape()
    }
}

/// Largest absolute row or column mean.
pub fn max_abs_row_col_mean(m: &ImageMatrix) -> f64 {
    let (rows, cols) = m.shape();
    let mut worst = 0.0f64;
    let mut col_sums = vec![0.0; cols];
    for r in 0..rows {
        let row = m.row(r);
        worst = worst.max((row.iter().sum::<f64>() / cols as f64).abs());
        for (s, v) in col_sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    col_sums
        .iter()
        .fold(worst, |w, s| w.max((s / rows as f64).abs()))
}

pub fn encode_bundle(bundle: &FingerprintBundle) -> Result<Vec<u8>> {
    bundle.validate_structure()?;
    let (rows, cols) = bundle.dims();
    let rows32 = u32::try_from(rows).map_err(|_| Error::Format("row count exceeds u32".into()))?;
    let cols32 = u32::try_from(cols).map_err(|_| Error::Format("column count exceeds u32".into()))?;
    let id = bundle.denoiser_id.as_bytes();
    let planes = 1 + usize::from(bundle.normalizer.is_some());

    let mut out = Vec::with_capacity(32 + id.len() + planes * rows * cols * 8);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&rows32.to_le_bytes());
    out.extend_from_slice(&cols32.to_le_bytes());
    out.extend_from_slice(&bundle.image_count.to_le_bytes());
    out.push(bundle.flags.bits());
    out.push(u8::from(bundle.normalizer.is_some()));
    out.push(u8::from(bundle.seed.is_some()));
    out.push(0);
    out.extend_from_slice(&(id.len() as u16).to_le_bytes());
    out.extend_from_slice(id);
    if let Some(seed) = bundle.seed {
        out.extend_from_slice(&seed.to_le_bytes());
    }
    for v in bundle.fingerprint.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(r) = &bundle.normalizer {
        for v in r.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated payload at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn plane(&mut self, rows: usize, cols: usize) -> Result<ImageMatrix> {
        let bytes = self.take(rows * cols * 8)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ImageMatrix::new(rows, cols, data).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn decode_bundle(buf: &[u8]) -> Result<FingerprintBundle> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4).map_err(|_| Error::Format("bad magic".into()))? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = cur.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let image_count = cur.u32()?;
    let flags_raw = cur.u8()?;
    let flags = PostprocessFlags::from_bits(flags_raw)
        .ok_or_else(|| Error::Format(format!("unknown flag bits {flags_raw:#04x}")))?;
    let has_r = read_bool(cur.u8()?, "has_R")?;
    let has_seed = read_bool(cur.u8()?, "has_seed")?;
    if cur.u8()? != 0 {
        return Err(Error::Format("reserved byte is not zero".into()));
    }
    let id_len = cur.u16()? as usize;
    let denoiser_id = std::str::from_utf8(cur.take(id_len)?)
        .map_err(|e| Error::Format(format!("denoiser id is not UTF-8: {e}")))?
        .to_owned();
    let seed = if has_seed { Some(cur.u64()?) } else { None };

    if rows == 0 || cols == 0 {
        return Err(Error::Format(format!("zero dimension {rows}x{cols}")));
    }
    let plane_bytes = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format(format!("dimension overflow {rows}x{cols}")))?;
    let planes = 1 + usize::from(has_r);
    if plane_bytes
        .checked_mul(planes)
        .map_or(true, |need| need > buf.len() - cur.pos)
    {
        return Err(Error::Format("truncated payload".into()));
    }
    let fingerprint = cur.plane(rows, cols)?;
    let normalizer = if has_r { Some(cur.plane(rows, cols)?) } else { None };
    if cur.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - cur.pos)));
    }
    let bundle = FingerprintBundle {
        fingerprint,
        normalizer,
        image_count,
        flags,
        denoiser_id,
        seed,
    };
    bundle.validate_structure()?;
    Ok(bundle)
}

fn read_bool(v: u8, what: &str) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::Format(format!("{what} must be 0 or 1, got {v}"))),
    }
}

/// Writes atomically: the payload goes to a sibling temp file that is renamed
/// over `path`, so a failed save never leaves a partial bundle.
pub fn save_bundle(bundle: &FingerprintBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_bundle(bundle)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<FingerprintBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(with_r: bool, seed: Option<u64>) -> FingerprintBundle {
        FingerprintBundle {
            fingerprint: ImageMatrix::from_fn(3, 4, |r, c| (r as f64 - 1.0) * 0.01 + c as f64 * -0.003),
            normalizer: with_r.then(|| ImageMatrix::from_fn(3, 4, |r, c| 1.0 + (r * 4 + c) as f64)),
            image_count: 12,
            flags: PostprocessFlags::DFT_WIENER,
            denoiser_id: "mihcak-db8-l4-s5.0".into(),
            seed,
        }
    }

    #[test]
    fn header_layout_is_exact() {
        let b = sample(false, Some(0x0102_0304_0506_0708));
        let bytes = encode_bundle(&b).unwrap();
        assert_eq!(&bytes[..5], b"PRNU\x01");
        assert_eq!(&bytes[5..9], &3u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &4u32.to_le_bytes());
        assert_eq!(&bytes[13..17], &12u32.to_le_bytes());
        assert_eq!(&bytes[17..21], &[0b010, 0, 1, 0]);
        assert_eq!(&bytes[21..23], &18u16.to_le_bytes());
        assert_eq!(&bytes[23..41], b"mihcak-db8-l4-s5.0");
        assert_eq!(&bytes[41..49], &0x0102_0304_0506_0708u64.to_le_bytes());
        assert_eq!(bytes.len(), 49 + 12 * 8);
    }

    #[test]
    fn roundtrip_with_and_without_r() {
        for b in [sample(true, Some(9)), sample(false, None)] {
            let back = decode_bundle(&encode_bundle(&b).unwrap()).unwrap();
            assert_eq!(back, b);
        }
    }

    #[test]
    fn wrong_magic_and_version_rejected() {
        let mut bytes = encode_bundle(&sample(true, None)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_bundle(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_bundle(&sample(true, None)).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_bundle(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_and_trailing_bytes_rejected() {
        let bytes = encode_bundle(&sample(true, Some(1))).unwrap();
        for cut in [0, 3, 10, 22, 40, bytes.len() - 1] {
            assert!(decode_bundle(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode_bundle(&longer).is_err());
    }

    #[test]
    fn dimension_overflow_rejected() {
        let mut bytes = encode_bundle(&sample(false, None)).unwrap();
        bytes[5..9].copy_from_slice(&u32::MAX.to_le_bytes());
        bytes[9..13].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_bundle(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn non_positive_normalizer_rejected() {
        let mut b = sample(true, None);
        b.normalizer = Some(ImageMatrix::zeros(3, 4));
        assert!(encode_bundle(&b).is_err());
    }

    #[test]
    fn zero_mean_flag_is_checked() {
        let mut b = sample(false, None);
        b.flags.insert(PostprocessFlags::ZERO_MEANED);
        assert!(b.validate().is_err());
        b.fingerprint = ImageMatrix::zeros(3, 4);
        assert!(b.validate().is_ok());
    }

    #[test]
    fn save_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.prnu");
        let b = sample(true, Some(3));
        save_bundle(&b, &p).unwrap();
        assert_eq!(load_bundle(&p).unwrap(), b);
        assert!(!dir.path().join("k.prnu.partial").exists());
    }
}
