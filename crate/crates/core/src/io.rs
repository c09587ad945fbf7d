//! Matrix serialization: a small binary container plus CSV dumps for
//! debugging.
//!
//! Container layout (little-endian throughout):
//!
//! ```text
//! bytes 0..8   magic "CMATRX01"
//! bytes 8..16  rows as u64
//! bytes 16..24 cols as u64
//! then rows*cols complex entries in row-major order,
//! each as two f64 words: re, im
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::linalg::CMat;

pub const MAGIC: [u8; 8] = *b"CMATRX01";

pub fn write_cmat<W: Write>(mut w: W, m: &CMat) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m.get(i, j);
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_cmat<R: Read>(mut r: R) -> Result<CMat> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CoreError::Container(format!(
            "bad magic {magic:02x?}, expected {MAGIC:02x?}"
        )));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    if rows.checked_mul(cols).is_none() || rows * cols > (1 << 28) {
        return Err(CoreError::Container(format!(
            "implausible dimensions {rows}x{cols}"
        )));
    }
    let mut m = CMat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            r.read_exact(&mut word)?;
            let re = f64::from_le_bytes(word);
            r.read_exact(&mut word)?;
            let im = f64::from_le_bytes(word);
            m.set(i, j, num_complex::Complex64::new(re, im));
        }
    }
    Ok(m)
}

pub fn save_cmat(path: &Path, m: &CMat) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_cmat(BufWriter::new(f), m)
}

pub fn load_cmat(path: &Path) -> Result<CMat> {
    let f = std::fs::File::open(path)?;
    read_cmat(BufReader::new(f))
}

/// Debug CSV dump: one row per matrix row, entries as `re` and `im` column
/// pairs (`re_0,im_0,re_1,im_1,...`).
pub fn write_cmat_csv<W: Write>(mut w: W, m: &CMat) -> Result<()> {
    for i in 0..m.nrows() {
        let mut first = true;
        for j in 0..m.ncols() {
            let z = m.get(i, j);
            if !first {
                write!(w, ",")?;
            }
            write!(w, "{:.17e},{:.17e}", z.re, z.im)?;
            first = false;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_magic() {
        let bytes = b"NOTMAGIC\x00\x00\x00\x00\x00\x00\x00\x00".to_vec();
        assert!(read_cmat(&bytes[..]).is_err());
    }

    #[test]
    fn rejects_truncated_payload() {
        let m = CMat::identity(3);
        let mut buf = Vec::new();
        write_cmat(&mut buf, &m).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(read_cmat(&buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn container_round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            use rand::prelude::*;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = CMat::from_fn(rows, cols, |_, _| {
                Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            let mut buf = Vec::new();
            write_cmat(&mut buf, &m).unwrap();
            let back = read_cmat(&buf[..]).unwrap();
            prop_assert_eq!(m, back);
        }
    }
}
