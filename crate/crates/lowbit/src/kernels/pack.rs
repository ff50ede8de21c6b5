//! Bit-plane packing of quantized matrices.
//!
//! Elements pack 64 per machine word along each row: element `c` of a row
//! lands in word `c / 64` at bit `c % 64`, words in little-endian order, and
//! bits past the logical column count are always zero so popcount-based dot
//! products never see padding.

use crate::quant::{Granularity, QuantKind, QuantizedTensor};
use anyhow::{bail, ensure, Result};
use std::io::{Read, Write};

/// Level set of a packed matrix, fixing which planes it carries.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PackScheme {
    /// Levels {-1, +1}: `plane_pos` marks +1; `plane_neg` is its complement
    /// within the valid bits.
    Binary,
    /// Levels {-1, 0, +1}: `plane_pos` marks +1, `plane_neg` marks -1.
    Ternary,
    /// Levels {0, 1}: `plane_pos` marks 1.
    BinaryNonNeg,
    /// Levels {0, 1, 2}: `plane_pos` marks 1, `plane_two` marks 2.
    TernaryNonNeg,
}

impl PackScheme {
    /// Scheme byte used in the packed-weight file format.
    pub fn tag(self) -> u8 {
        match self {
            PackScheme::Binary => 0,
            PackScheme::Ternary => 1,
            PackScheme::BinaryNonNeg => 2,
            PackScheme::TernaryNonNeg => 3,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => PackScheme::Binary,
            1 => PackScheme::Ternary,
            2 => PackScheme::BinaryNonNeg,
            3 => PackScheme::TernaryNonNeg,
            other => bail!("unknown packed scheme tag {other}"),
        })
    }

    /// Planes persisted to disk. Binary stores only `plane_pos` (the
    /// negative plane is its complement and is rebuilt on load); the
    /// nonnegative schemes store the planes they actually use.
    fn stored_planes(self) -> usize {
        match self {
            PackScheme::Binary | PackScheme::BinaryNonNeg => 1,
            PackScheme::Ternary | PackScheme::TernaryNonNeg => 2,
        }
    }
}

/// A quantized matrix stored as bit planes plus per-row scales.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub scheme: PackScheme,
    /// Plane of +1 levels (or of level 1 for nonnegative schemes).
    pub plane_pos: Vec<u64>,
    /// Plane of -1 levels; complement of `plane_pos` for Binary, all zero
    /// for the nonnegative schemes.
    pub plane_neg: Vec<u64>,
    /// Plane of level-2 elements; empty unless the scheme is TernaryNonNeg.
    pub plane_two: Vec<u64>,
    /// One positive scale per row (activation matrices replicate their
    /// single tensor-wide scale).
    pub row_scales: Vec<f64>,
}

impl PackedMatrix {
    /// Words per packed row.
    pub fn words_per_row(&self) -> usize {
        words_for(self.cols)
    }

    /// Level of element (row, col), by reading the planes back.
    pub fn level_at(&self, row: usize, col: usize) -> i32 {
        let idx = row * self.words_per_row() + col / 64;
        let bit = 1u64 << (col % 64);
        let pos = self.plane_pos[idx] & bit != 0;
        let neg = self.plane_neg[idx] & bit != 0;
        let two = self
            .plane_two
            .get(idx)
            .map(|w| w & bit != 0)
            .unwrap_or(false);
        match self.scheme {
            PackScheme::Binary => {
                if pos {
                    1
                } else {
                    -1
                }
            }
            PackScheme::Ternary => {
                if pos {
                    1
                } else if neg {
                    -1
                } else {
                    0
                }
            }
            PackScheme::BinaryNonNeg => pos as i32,
            PackScheme::TernaryNonNeg => {
                if two {
                    2
                } else {
                    pos as i32
                }
            }
        }
    }

    /// Reconstructs the full level matrix, row-major.
    pub fn unpack_levels(&self) -> Vec<i32> {
        let mut levels = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                levels.push(self.level_at(r, c));
            }
        }
        levels
    }

    /// Serialized byte size in the packed file format.
    pub fn file_size(&self) -> usize {
        let plane_bytes = self.rows * self.words_per_row() * 8;
        1 + 4 + 4 + self.rows * 4 + self.scheme.stored_planes() * plane_bytes
    }

    /// Writes the file-format encoding: header {scheme u8, rows u32, cols
    /// u32}, per-row scales as little-endian f32, then the stored planes as
    /// little-endian u64 words.
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(&[self.scheme.tag()])?;
        out.write_all(&(self.rows as u32).to_le_bytes())?;
        out.write_all(&(self.cols as u32).to_le_bytes())?;
        for &s in &self.row_scales {
            out.write_all(&(s as f32).to_le_bytes())?;
        }
        let mut write_plane = |plane: &[u64]| -> Result<()> {
            for &w in plane {
                out.write_all(&w.to_le_bytes())?;
            }
            Ok(())
        };
        match self.scheme {
            PackScheme::Binary | PackScheme::BinaryNonNeg => write_plane(&self.plane_pos)?,
            PackScheme::Ternary => {
                write_plane(&self.plane_pos)?;
                write_plane(&self.plane_neg)?;
            }
            PackScheme::TernaryNonNeg => {
                write_plane(&self.plane_pos)?;
                write_plane(&self.plane_two)?;
            }
        }
        Ok(())
    }

    /// Reads one matrix back from the file format, rebuilding any derived
    /// planes (Binary's negative plane). Scales widen from f32.
    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut tag = [0u8; 1];
        input.read_exact(&mut tag)?;
        let scheme = PackScheme::from_tag(tag[0])?;
        let mut u32buf = [0u8; 4];
        input.read_exact(&mut u32buf)?;
        let rows = u32::from_le_bytes(u32buf) as usize;
        input.read_exact(&mut u32buf)?;
        let cols = u32::from_le_bytes(u32buf) as usize;
        ensure!(rows > 0 && cols > 0, "empty packed matrix in file");
        let mut row_scales = Vec::with_capacity(rows);
        for _ in 0..rows {
            input.read_exact(&mut u32buf)?;
            row_scales.push(f32::from_le_bytes(u32buf) as f64);
        }
        let words = rows * words_for(cols);
        let read_plane = |input: &mut dyn Read| -> Result<Vec<u64>> {
            let mut plane = Vec::with_capacity(words);
            let mut u64buf = [0u8; 8];
            for _ in 0..words {
                input.read_exact(&mut u64buf)?;
                plane.push(u64::from_le_bytes(u64buf));
            }
            Ok(plane)
        };
        let (plane_pos, plane_neg, plane_two) = match scheme {
            PackScheme::Binary => {
                let pos = read_plane(input)?;
                let neg = complement_within(&pos, rows, cols);
                (pos, neg, Vec::new())
            }
            PackScheme::BinaryNonNeg => {
                let pos = read_plane(input)?;
                let zeros = vec![0u64; words];
                (pos, zeros, Vec::new())
            }
            PackScheme::Ternary => {
                let pos = read_plane(input)?;
                let neg = read_plane(input)?;
                (pos, neg, Vec::new())
            }
            PackScheme::TernaryNonNeg => {
                let pos = read_plane(input)?;
                let two = read_plane(input)?;
                let zeros = vec![0u64; words];
                (pos, zeros, two)
            }
        };
        let m = PackedMatrix {
            rows,
            cols,
            scheme,
            plane_pos,
            plane_neg,
            plane_two,
            row_scales,
        };
        m.check_invariants();
        Ok(m)
    }

    /// Asserts plane disjointness and zeroed padding bits.
    pub fn check_invariants(&self) {
        let wpr = self.words_per_row();
        for r in 0..self.rows {
            for w in 0..wpr {
                let idx = r * wpr + w;
                let valid = valid_mask(self.cols, w);
                assert_eq!(
                    self.plane_pos[idx] & !valid,
                    0,
                    "padding bits set in positive plane at row {r}"
                );
                assert_eq!(
                    self.plane_neg[idx] & !valid,
                    0,
                    "padding bits set in negative plane at row {r}"
                );
                assert_eq!(
                    self.plane_pos[idx] & self.plane_neg[idx],
                    0,
                    "element marked both +1 and -1 at row {r}"
                );
                if self.scheme == PackScheme::Binary {
                    assert_eq!(
                        self.plane_pos[idx] ^ self.plane_neg[idx],
                        valid,
                        "binary planes are not complementary at row {r}"
                    );
                }
                if let Some(&two) = self.plane_two.get(idx) {
                    assert_eq!(two & !valid, 0, "padding bits set in two plane at row {r}");
                    assert_eq!(
                        two & (self.plane_pos[idx] | self.plane_neg[idx]),
                        0,
                        "element marked both 2 and ±1 at row {r}"
                    );
                }
            }
        }
    }
}

fn words_for(cols: usize) -> usize {
    cols.div_ceil(64)
}

/// Mask of valid (non-padding) bits for word `w` of a row with `cols`
/// elements.
fn valid_mask(cols: usize, w: usize) -> u64 {
    let start = w * 64;
    let remaining = cols.saturating_sub(start);
    if remaining >= 64 {
        u64::MAX
    } else if remaining == 0 {
        0
    } else {
        (1u64 << remaining) - 1
    }
}

fn complement_within(plane: &[u64], rows: usize, cols: usize) -> Vec<u64> {
    let wpr = words_for(cols);
    let mut out = vec![0u64; plane.len()];
    for r in 0..rows {
        for w in 0..wpr {
            out[r * wpr + w] = !plane[r * wpr + w] & valid_mask(cols, w);
        }
    }
    out
}

/// Maps a quantizer kind onto its packed level set.
fn scheme_for(kind: QuantKind) -> Result<PackScheme> {
    Ok(match kind {
        QuantKind::TernaryWeight | QuantKind::TernaryActSigned | QuantKind::BaselineTernary => {
            PackScheme::Ternary
        }
        QuantKind::BinaryWeight | QuantKind::BinaryActSigned | QuantKind::BaselineBinary => {
            PackScheme::Binary
        }
        QuantKind::TernaryActNonNeg => PackScheme::TernaryNonNeg,
        QuantKind::BinaryActNonNeg => PackScheme::BinaryNonNeg,
        other => bail!("{other:?} tensors have no packed representation"),
    })
}

/// Packs a quantized matrix (or row vector) into bit planes. Lossless:
/// `unpack_levels` returns the input levels exactly.
pub fn pack(q: &QuantizedTensor) -> Result<PackedMatrix> {
    let scheme = scheme_for(q.scheme.kind)?;
    let (rows, cols) = (q.rows(), q.cols());
    ensure!(rows > 0 && cols > 0, "cannot pack an empty tensor");
    ensure!(
        cols < (1usize << 31),
        "row length {cols} exceeds the accumulator guard"
    );
    ensure!(q.levels.len() == rows * cols, "level count mismatch");
    q.check_levels();
    let wpr = words_for(cols);
    let words = rows * wpr;
    let mut plane_pos = vec![0u64; words];
    let mut plane_neg = vec![0u64; words];
    let mut plane_two = if scheme == PackScheme::TernaryNonNeg {
        vec![0u64; words]
    } else {
        Vec::new()
    };
    for r in 0..rows {
        for c in 0..cols {
            let level = q.levels[r * cols + c];
            let idx = r * wpr + c / 64;
            let bit = 1u64 << (c % 64);
            match (scheme, level) {
                (_, 0) => {}
                (PackScheme::TernaryNonNeg, 1) | (_, 1) => plane_pos[idx] |= bit,
                (PackScheme::TernaryNonNeg, 2) => plane_two[idx] |= bit,
                (_, -1) => plane_neg[idx] |= bit,
                (s, l) => bail!("level {l} invalid for scheme {s:?}"),
            }
        }
    }
    let row_scales = match q.scheme.granularity {
        Granularity::PerRow => q.alpha.clone(),
        Granularity::PerTensor => vec![q.alpha[0]; rows],
    };
    let m = PackedMatrix {
        rows,
        cols,
        scheme,
        plane_pos,
        plane_neg,
        plane_two,
        row_scales,
    };
    m.check_invariants();
    Ok(m)
}
