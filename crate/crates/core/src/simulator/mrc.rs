//! MRC2014 reader/writer for float32 volumes and image stacks.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{c, Real};

const HEADER_LEN: usize = 1024;
const MODE_FLOAT32: i32 = 2;

/// Grid of `nx × ny × nz` float32 values, x fastest. A stack of `n` images of
/// side `d` is `d × d × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MrcData {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub pixel_size: f64,
    /// `true` for a stack of 2D images (space group 0), `false` for a volume.
    pub is_stack: bool,
    pub data: Vec<f32>,
}

impl MrcData {
    pub fn from_real<T: Real>(nx: usize, ny: usize, nz: usize, pixel_size: f64, is_stack: bool, v: &[T]) -> Self {
        Self {
            nx,
            ny,
            nz,
            pixel_size,
            is_stack,
            data: v.iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect(),
        }
    }

    pub fn to_real<T: Real>(&self) -> Vec<T> {
        self.data.iter().map(|&x| c(x as f64)).collect()
    }

    pub fn section<T: Real>(&self, k: usize) -> Vec<T> {
        let n = self.nx * self.ny;
        self.data[k * n..(k + 1) * n].iter().map(|&x| c(x as f64)).collect()
    }

    fn header(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        let put_i = |h: &mut [u8; HEADER_LEN], word: usize, v: i32| {
            h[word * 4..word * 4 + 4].copy_from_slice(&v.to_le_bytes())
        };
        let put_f = |h: &mut [u8; HEADER_LEN], word: usize, v: f32| {
            h[word * 4..word * 4 + 4].copy_from_slice(&v.to_le_bytes())
        };
        let (nx, ny, nz) = (self.nx as i32, self.ny as i32, self.nz as i32);
        put_i(&mut h, 0, nx);
        put_i(&mut h, 1, ny);
        put_i(&mut h, 2, nz);
        put_i(&mut h, 3, MODE_FLOAT32);
        // nxstart..nzstart stay 0
        put_i(&mut h, 7, nx);
        put_i(&mut h, 8, ny);
        put_i(&mut h, 9, if self.is_stack { 1 } else { nz });
        let px = self.pixel_size as f32;
        put_f(&mut h, 10, px * nx as f32);
        put_f(&mut h, 11, px * ny as f32);
        put_f(&mut h, 12, px * if self.is_stack { 1.0 } else { nz as f32 });
        for w in 13..16 {
            put_f(&mut h, w, 90.0);
        }
        put_i(&mut h, 16, 1);
        put_i(&mut h, 17, 2);
        put_i(&mut h, 18, 3);
        let (mut lo, mut hi, mut sum) = (f32::INFINITY, f32::NEG_INFINITY, 0.0f64);
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v as f64;
        }
        let n = self.data.len().max(1) as f64;
        let mean = sum / n;
        let rms = (self.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        put_f(&mut h, 19, lo);
        put_f(&mut h, 20, hi);
        put_f(&mut h, 21, mean as f32);
        put_i(&mut h, 22, if self.is_stack { 0 } else { 1 });
        h[104..108].copy_from_slice(b"MRCO");
        put_i(&mut h, 27, 20140);
        h[208..212].copy_from_slice(b"MAP ");
        h[212..216].copy_from_slice(&[0x44, 0x44, 0x00, 0x00]);
        put_f(&mut h, 54, rms as f32);
        put_i(&mut h, 55, 0);
        h
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        if self.data.len() != self.nx * self.ny * self.nz {
            return Err(Error::Format("MRC payload size does not match dimensions".into()));
        }
        out.write_all(&self.header())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn write_path(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut h = [0u8; HEADER_LEN];
        input.read_exact(&mut h)?;
        let word = |w: usize| [h[w * 4], h[w * 4 + 1], h[w * 4 + 2], h[w * 4 + 3]];
        if h[212] != 0x44 {
            return Err(Error::Format("only little-endian MRC files are supported".into()));
        }
        let gi = |w: usize| i32::from_le_bytes(word(w));
        let gf = |w: usize| f32::from_le_bytes(word(w));
        let (nx, ny, nz, mode) = (gi(0), gi(1), gi(2), gi(3));
        if mode != MODE_FLOAT32 {
            return Err(Error::Format(format!("unsupported MRC mode {mode}")));
        }
        if nx <= 0 || ny <= 0 || nz <= 0 {
            return Err(Error::Format("non-positive MRC dimensions".into()));
        }
        let next = gi(23).max(0) as usize;
        let mut skip = vec![0u8; next];
        input.read_exact(&mut skip)?;
        let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
        let mut raw = vec![0u8; nx * ny * nz * 4];
        input.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mx = gi(7).max(1) as f64;
        Ok(Self {
            nx,
            ny,
            nz,
            pixel_size: gf(10) as f64 / mx,
            is_stack: gi(22) == 0,
            data,
        })
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }
}
