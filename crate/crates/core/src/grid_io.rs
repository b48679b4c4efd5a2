//! Binary grid files: a fixed little-endian header followed by the row-major
//! payload, `f64` samples or interleaved `(re, im)` pairs.
//!
//! Header layout: magic (8 bytes), version `u32`, dtype `u32`, dims `[u64; 4]`
//! slowest axis first, spacings `[f64; 4]`, origin `[f64; 4]`, tag (32 bytes).
//! Unused trailing axes have extent 1; an irregular axis has spacing 0.

use std::io::{self, Read, Write};

use num_complex::Complex64;

use crate::fields::{LateralField, Plane, PotentialField};

pub const MAGIC: [u8; 8] = *b"DNSGRID\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Real,
    Complex,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl GridData {
    pub fn len(&self) -> usize {
        match self {
            GridData::Real(v) => v.len(),
            GridData::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            GridData::Real(_) => DType::Real,
            GridData::Complex(_) => DType::Complex,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub dims: [u64; 4],
    pub spacings: [f64; 4],
    pub origin: [f64; 4],
    /// Caller-defined provenance tag, e.g. a hash of the run configuration.
    pub tag: [u8; 32],
    pub data: GridData,
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

impl GridFile {
    /// Potential samples on the `(z, y, x)` lattice.
    pub fn from_potential(q: &PotentialField, tag: [u8; 32]) -> Self {
        let l = &q.lattice;
        GridFile {
            dims: [l.nz as u64, l.ny as u64, l.nx as u64, 1],
            spacings: [l.hz, l.hy, l.hx, 0.0],
            origin: [l.z0, l.origin[1], l.origin[0], 0.0],
            tag,
            data: GridData::Real(q.values.clone()),
        }
    }

    /// Lateral samples on `(time, trace point, z)`; trace points are irregular.
    pub fn from_lateral(f: &LateralField, tag: [u8; 32]) -> Self {
        GridFile {
            dims: [f.n_times as u64, f.n_trace() as u64, f.nz as u64, 1],
            spacings: [f.dt, 0.0, f.hz, 0.0],
            origin: [0.0, 0.0, f.z0, 0.0],
            tag,
            data: GridData::Complex(f.values.clone()),
        }
    }

    /// A stack of equally shaped planes on `(slice, y, x)`; slices may be irregular.
    pub fn from_planes(planes: &[Plane], slices: &[f64], tag: [u8; 32]) -> Self {
        let p0 = &planes[0];
        let hz = match slices {
            [a, b, ..] => b - a,
            _ => 0.0,
        };
        let regular = slices
            .windows(2)
            .all(|w| ((w[1] - w[0]) - hz).abs() <= 1e-12 * hz.abs().max(1.0));
        GridFile {
            dims: [planes.len() as u64, p0.ny as u64, p0.nx as u64, 1],
            spacings: [if regular { hz } else { 0.0 }, p0.hy, p0.hx, 0.0],
            origin: [
                slices.first().copied().unwrap_or(0.0),
                p0.origin[1],
                p0.origin[0],
                0.0,
            ],
            tag,
            data: GridData::Real(
                planes
                    .iter()
                    .flat_map(|p| p.values.iter().copied())
                    .collect(),
            ),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        let n: u64 = self.dims.iter().product();
        if n as usize != self.data.len() {
            return Err(invalid(format!(
                "dims hold {n} samples, payload has {}",
                self.data.len()
            )));
        }
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let dtype: u32 = match self.data.dtype() {
            DType::Real => 0,
            DType::Complex => 1,
        };
        w.write_all(&dtype.to_le_bytes())?;
        for d in self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        for v in self.spacings.iter().chain(&self.origin) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.tag)?;
        let mut buf = Vec::with_capacity(16 * self.data.len());
        match &self.data {
            GridData::Real(v) => v
                .iter()
                .for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            GridData::Complex(v) => v.iter().for_each(|z| {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
        w.write_all(&buf)
    }

    pub fn read_from(r: &mut impl Read) -> io::Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(invalid("not a grid file"));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(invalid(format!("unsupported grid file version {version}")));
        }
        let dtype = match read_u32(r)? {
            0 => DType::Real,
            1 => DType::Complex,
            d => return Err(invalid(format!("unknown dtype {d}"))),
        };
        let mut dims = [0u64; 4];
        for d in &mut dims {
            *d = read_u64(r)?;
        }
        let mut spacings = [0.0; 4];
        let mut origin = [0.0; 4];
        for v in spacings.iter_mut().chain(origin.iter_mut()) {
            *v = f64::from_bits(read_u64(r)?);
        }
        let mut tag = [0u8; 32];
        r.read_exact(&mut tag)?;
        let n = dims
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .ok_or_else(|| invalid("dims overflow"))? as usize;
        let mut next = || read_u64(r).map(f64::from_bits);
        let data = match dtype {
            DType::Real => GridData::Real((0..n).map(|_| next()).collect::<io::Result<_>>()?),
            DType::Complex => GridData::Complex(
                (0..n)
                    .map(|_| Ok(Complex64::new(next()?, next()?)))
                    .collect::<io::Result<_>>()?,
            ),
        };
        Ok(GridFile {
            dims,
            spacings,
            origin,
            tag,
            data,
        })
    }
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, CrossSection, Resolution};
    use crate::phantom::{Phantom, PhantomSpec};

    fn round_trip(g: &GridFile) -> GridFile {
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        GridFile::read_from(&mut buf.as_slice()).unwrap()
    }

    #[test]
    fn potential_round_trips_bit_for_bit() {
        let grid = build_grid(
            CrossSection::Disk { radius: 0.5 },
            Resolution::new(9, 9, 21),
            2.0,
            0.3,
        )
        .unwrap();
        let q = Phantom {
            alpha: 0.5,
            bound: 1.0,
            terms: vec![PhantomSpec::Bump {
                amplitude: 1.0,
                center: [0.0; 3],
                radius: 0.3,
            }],
        }
        .sample(&grid)
        .unwrap();
        let g = GridFile::from_potential(&q, [7; 32]);
        let back = round_trip(&g);
        assert_eq!(back, g);
        assert_eq!(back.dims, [21, 9, 9, 1]);
    }

    #[test]
    fn complex_payload_is_interleaved() {
        let g = GridFile {
            dims: [2, 1, 1, 1],
            spacings: [0.5, 0.0, 0.0, 0.0],
            origin: [0.0; 4],
            tag: [0; 32],
            data: GridData::Complex(vec![Complex64::new(1.0, -2.0), Complex64::new(3.0, 4.0)]),
        };
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        let header = 8 + 4 + 4 + 32 + 64 + 32;
        assert_eq!(buf.len(), header + 32);
        assert_eq!(&buf[header..header + 8], &1.0f64.to_le_bytes());
        assert_eq!(&buf[header + 8..header + 16], &(-2.0f64).to_le_bytes());
        assert_eq!(round_trip(&g), g);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let g = GridFile {
            dims: [3, 1, 1, 1],
            spacings: [1.0, 0.0, 0.0, 0.0],
            origin: [0.0; 4],
            tag: [0; 32],
            data: GridData::Real(vec![1.0, 2.0, 3.0]),
        };
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert!(GridFile::read_from(&mut &buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(GridFile::read_from(&mut bad.as_slice()).is_err());
        let short = GridFile {
            dims: [4, 1, 1, 1],
            ..g
        };
        assert!(short.write_to(&mut Vec::new()).is_err());
    }
}
