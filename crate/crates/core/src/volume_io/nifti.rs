//! Single-file NIfTI-1 (`.nii` / `.nii.gz`) reading and writing.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::MultiGzDecoder;
use flate2::{Compression, GzBuilder};

use crate::error::{Error, Result};
use crate::volume::Volume;

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const DEFAULT_VOX_OFFSET: usize = 352;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIRED: &[u8; 4] = b"ni1\0";

/// Voxel storage types accepted on read and offered on write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NiftiDatatype {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl NiftiDatatype {
    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Self::Uint8),
            4 => Ok(Self::Int16),
            8 => Ok(Self::Int32),
            16 => Ok(Self::Float32),
            64 => Ok(Self::Float64),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    pub fn code(self) -> i16 {
        match self {
            Self::Uint8 => 2,
            Self::Int16 => 4,
            Self::Int32 => 8,
            Self::Float32 => 16,
            Self::Float64 => 64,
        }
    }

    pub fn bitpix(self) -> i16 {
        match self {
            Self::Uint8 => 8,
            Self::Int16 => 16,
            Self::Int32 | Self::Float32 => 32,
            Self::Float64 => 64,
        }
    }

    pub fn bytes_per_voxel(self) -> usize {
        self.bitpix() as usize / 8
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Uint8 => "uint8",
            Self::Int16 => "int16",
            Self::Int32 => "int32",
            Self::Float32 => "float32",
            Self::Float64 => "float64",
        }
    }
}

impl std::str::FromStr for NiftiDatatype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uint8" => Ok(Self::Uint8),
            "int16" => Ok(Self::Int16),
            "int32" => Ok(Self::Int32),
            "float32" => Ok(Self::Float32),
            "float64" => Ok(Self::Float64),
            other => Err(Error::InvalidConfig(format!("unknown datatype {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

/// The subset of NIfTI-1 header fields this crate interprets.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub endianness: Endianness,
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
    pub magic: [u8; 4],
}

impl NiftiHeader {
    /// Parses and validates the first 348 bytes of a NIfTI-1 file.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::BadMagic(format!(
                "file of {} bytes is shorter than a NIfTI-1 header",
                bytes.len()
            )));
        }
        let le = LittleEndian::read_i32(&bytes[0..4]);
        let be = BigEndian::read_i32(&bytes[0..4]);
        if le == HEADER_SIZE as i32 {
            Self::parse_with::<LittleEndian>(bytes, Endianness::Little)
        } else if be == HEADER_SIZE as i32 {
            Self::parse_with::<BigEndian>(bytes, Endianness::Big)
        } else {
            Err(Error::BadMagic(format!("sizeof_hdr is neither 348 LE nor BE (read {le})")))
        }
    }

    fn parse_with<B: ByteOrder>(b: &[u8], endianness: Endianness) -> Result<Self> {
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&b[offsets::MAGIC..offsets::MAGIC + 4]);
        if &magic == MAGIC_PAIRED {
            return Err(Error::BadMagic("paired .hdr/.img NIfTI (ni1) is not supported".into()));
        }
        if &magic != MAGIC_SINGLE {
            return Err(Error::BadMagic(format!("magic {magic:?} is not n+1")));
        }
        let mut dim = [0i16; 8];
        B::read_i16_into(&b[offsets::DIM..offsets::DIM + 16], &mut dim);
        let mut pixdim = [0f32; 8];
        B::read_f32_into(&b[offsets::PIXDIM..offsets::PIXDIM + 32], &mut pixdim);
        let mut quatern = [0f32; 3];
        B::read_f32_into(&b[offsets::QUATERN_B..offsets::QUATERN_B + 12], &mut quatern);
        let mut qoffset = [0f32; 3];
        B::read_f32_into(&b[offsets::QOFFSET_X..offsets::QOFFSET_X + 12], &mut qoffset);
        let mut srow = [[0f32; 4]; 3];
        for (r, row) in srow.iter_mut().enumerate() {
            let start = offsets::SROW_X + 16 * r;
            B::read_f32_into(&b[start..start + 16], row);
        }
        let header = NiftiHeader {
            endianness,
            sizeof_hdr: B::read_i32(&b[offsets::SIZEOF_HDR..]),
            dim,
            datatype: B::read_i16(&b[offsets::DATATYPE..]),
            bitpix: B::read_i16(&b[offsets::BITPIX..]),
            pixdim,
            vox_offset: B::read_f32(&b[offsets::VOX_OFFSET..]),
            scl_slope: B::read_f32(&b[offsets::SCL_SLOPE..]),
            scl_inter: B::read_f32(&b[offsets::SCL_INTER..]),
            qform_code: B::read_i16(&b[offsets::QFORM_CODE..]),
            sform_code: B::read_i16(&b[offsets::SFORM_CODE..]),
            quatern,
            qoffset,
            srow,
            magic,
        };
        header.validate()?;
        Ok(header)
    }

    fn validate(&self) -> Result<()> {
        let ndim = self.dim[0];
        if !(ndim == 3 || ndim == 4) {
            return Err(Error::InvalidHeader(format!("dim[0] = {ndim}, expected 3 or 4")));
        }
        if ndim == 4 && self.dim[4] != 1 {
            return Err(Error::InvalidHeader(format!(
                "4-D volume with {} timepoints; only one is supported",
                self.dim[4]
            )));
        }
        if self.dim[1..4].iter().any(|&d| d < 1) {
            return Err(Error::InvalidHeader(format!("non-positive extent in {:?}", self.dim)));
        }
        let dtype = NiftiDatatype::from_code(self.datatype)?;
        if dtype.bitpix() != self.bitpix {
            return Err(Error::InvalidHeader(format!(
                "bitpix {} inconsistent with datatype {}",
                self.bitpix, self.datatype
            )));
        }
        if !(self.vox_offset.is_finite() && self.vox_offset >= HEADER_SIZE as f32) {
            return Err(Error::InvalidHeader(format!("vox_offset {}", self.vox_offset)));
        }
        if self.pixdim[1..4].iter().any(|p| !(p.is_finite() && *p != 0.0)) {
            return Err(Error::InvalidHeader(format!("pixdim {:?}", &self.pixdim[1..4])));
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.dim[1] as usize, self.dim[2] as usize, self.dim[3] as usize]
    }

    pub fn datatype(&self) -> NiftiDatatype {
        // validated in parse
        NiftiDatatype::from_code(self.datatype).expect("validated datatype")
    }

    pub fn spacing(&self) -> [f64; 3] {
        [
            self.pixdim[1].abs() as f64,
            self.pixdim[2].abs() as f64,
            self.pixdim[3].abs() as f64,
        ]
    }

    /// Direction cosines and origin: sform when present, else qform, else identity.
    pub fn orientation(&self) -> ([[f64; 3]; 3], [f64; 3]) {
        let spacing = self.spacing();
        if self.sform_code > 0 {
            let mut dir = [[0.0; 3]; 3];
            for (k, axis) in dir.iter_mut().enumerate() {
                let col = [self.srow[0][k] as f64, self.srow[1][k] as f64, self.srow[2][k] as f64];
                let norm = col.iter().map(|c| c * c).sum::<f64>().sqrt();
                let scale = if norm > 0.0 { norm } else { spacing[k] };
                for r in 0..3 {
                    axis[r] = col[r] / scale;
                }
            }
            if dir.iter().all(|a| a.iter().any(|c| *c != 0.0)) {
                let origin = [self.srow[0][3] as f64, self.srow[1][3] as f64, self.srow[2][3] as f64];
                return (dir, origin);
            }
        }
        if self.qform_code > 0 {
            let [b, c, d] = self.quatern.map(|v| v as f64);
            let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
            let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
            let r = [
                [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
                [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
                [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
            ];
            let mut dir = [[0.0; 3]; 3];
            for (k, axis) in dir.iter_mut().enumerate() {
                let sign = if k == 2 { qfac } else { 1.0 };
                for row in 0..3 {
                    axis[row] = r[row][k] * sign;
                }
            }
            return (dir, self.qoffset.map(|v| v as f64));
        }
        (crate::volume::IDENTITY_DIRECTION, [0.0; 3])
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

fn wants_gzip(path: &Path) -> bool {
    path.to_string_lossy().to_ascii_lowercase().ends_with(".gz")
}

/// Reads a `.nii` or `.nii.gz` file into a float64 volume.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut vol = decode_nifti(&raw)?;
    vol.source_id = path.display().to_string();
    Ok(vol)
}

/// Decodes an in-memory NIfTI-1 image, transparently inflating gzip content.
pub fn decode_nifti(raw: &[u8]) -> Result<Volume> {
    let inflated;
    let bytes = if is_gzip(raw) {
        let mut buf = Vec::new();
        MultiGzDecoder::new(raw)
            .read_to_end(&mut buf)
            .map_err(|e| Error::BadMagic(format!("gzip stream: {e}")))?;
        inflated = buf;
        &inflated[..]
    } else {
        raw
    };
    let header = NiftiHeader::parse(bytes)?;
    let shape = header.shape();
    let n: usize = shape.iter().product();
    let dtype = header.datatype();
    let start = header.vox_offset as usize;
    let needed = start as u64 + (n * dtype.bytes_per_voxel()) as u64;
    if (bytes.len() as u64) < needed {
        return Err(Error::TruncatedPixelData {
            needed,
            actual: bytes.len() as u64,
        });
    }
    let payload = &bytes[start..needed as usize];
    let mut data = match header.endianness {
        Endianness::Little => decode_payload::<LittleEndian>(payload, dtype, n),
        Endianness::Big => decode_payload::<BigEndian>(payload, dtype, n),
    };
    let slope = header.scl_slope as f64;
    if slope != 0.0 && slope.is_finite() {
        let inter = header.scl_inter as f64;
        let inter = if inter.is_finite() { inter } else { 0.0 };
        if slope != 1.0 || inter != 0.0 {
            for v in &mut data {
                *v = *v * slope + inter;
            }
        }
    }
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteVoxel { index });
    }
    let (direction, origin) = header.orientation();
    let vol = Volume {
        data,
        shape,
        spacing: header.spacing(),
        direction,
        origin,
        source_id: String::new(),
    };
    vol.validate()?;
    Ok(vol)
}

fn decode_payload<B: ByteOrder>(payload: &[u8], dtype: NiftiDatatype, n: usize) -> Vec<f64> {
    match dtype {
        NiftiDatatype::Uint8 => payload.iter().map(|&v| v as f64).collect(),
        NiftiDatatype::Int16 => payload.chunks_exact(2).map(|c| B::read_i16(c) as f64).collect(),
        NiftiDatatype::Int32 => payload.chunks_exact(4).map(|c| B::read_i32(c) as f64).collect(),
        NiftiDatatype::Float32 => payload.chunks_exact(4).map(|c| B::read_f32(c) as f64).collect(),
        NiftiDatatype::Float64 => {
            let mut out = vec![0.0; n];
            B::read_f64_into(payload, &mut out);
            out
        }
    }
}

/// Writes `vol` as a single-file NIfTI-1, gzip-compressed when the path ends in `.gz`.
pub fn write_nifti(vol: &Volume, path: impl AsRef<Path>, dtype: NiftiDatatype) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(vol, dtype, Endianness::Little)?;
    let out = if wants_gzip(path) {
        // mtime pinned so identical volumes give identical files
        let mut enc = GzBuilder::new().mtime(0).write(Vec::new(), Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Serializes a volume to uncompressed NIfTI-1 bytes in the requested byte order.
pub fn encode_nifti(vol: &Volume, dtype: NiftiDatatype, endianness: Endianness) -> Result<Vec<u8>> {
    vol.validate()?;
    if vol.shape.iter().any(|&n| n > i16::MAX as usize) {
        return Err(Error::InvalidVolume(format!("extent {:?} exceeds NIfTI-1 limits", vol.shape)));
    }
    check_representable(&vol.data, dtype)?;
    match endianness {
        Endianness::Little => Ok(encode_with::<LittleEndian>(vol, dtype)),
        Endianness::Big => Ok(encode_with::<BigEndian>(vol, dtype)),
    }
}

fn check_representable(data: &[f64], dtype: NiftiDatatype) -> Result<()> {
    let (lo, hi) = match dtype {
        NiftiDatatype::Uint8 => (0.0, u8::MAX as f64),
        NiftiDatatype::Int16 => (i16::MIN as f64, i16::MAX as f64),
        NiftiDatatype::Int32 => (i32::MIN as f64, i32::MAX as f64),
        NiftiDatatype::Float32 => (f32::MIN as f64, f32::MAX as f64),
        NiftiDatatype::Float64 => return Ok(()),
    };
    match data.iter().find(|v| v.round() < lo || v.round() > hi) {
        Some(&value) => Err(Error::ValueOutOfRangeForDtype {
            value,
            dtype: dtype.name(),
        }),
        None => Ok(()),
    }
}

fn encode_with<B: ByteOrder>(vol: &Volume, dtype: NiftiDatatype) -> Vec<u8> {
    let n = vol.data.len();
    let mut out = vec![0u8; DEFAULT_VOX_OFFSET + n * dtype.bytes_per_voxel()];
    let h = &mut out[..HEADER_SIZE];
    B::write_i32(&mut h[offsets::SIZEOF_HDR..], HEADER_SIZE as i32);
    let dim: [i16; 8] = [3, vol.shape[0] as i16, vol.shape[1] as i16, vol.shape[2] as i16, 1, 1, 1, 1];
    B::write_i16_into(&dim, &mut h[offsets::DIM..offsets::DIM + 16]);
    B::write_i16(&mut h[offsets::DATATYPE..], dtype.code());
    B::write_i16(&mut h[offsets::BITPIX..], dtype.bitpix());
    let pixdim: [f32; 8] = [
        1.0,
        vol.spacing[0] as f32,
        vol.spacing[1] as f32,
        vol.spacing[2] as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    B::write_f32_into(&pixdim, &mut h[offsets::PIXDIM..offsets::PIXDIM + 32]);
    B::write_f32(&mut h[offsets::VOX_OFFSET..], DEFAULT_VOX_OFFSET as f32);
    B::write_f32(&mut h[offsets::SCL_SLOPE..], 1.0);
    B::write_f32(&mut h[offsets::SCL_INTER..], 0.0);
    // mm + seconds
    h[offsets::XYZT_UNITS] = 2 | 8;
    B::write_i16(&mut h[offsets::SFORM_CODE..], 1);
    for r in 0..3 {
        let row: [f32; 4] = [
            (vol.direction[0][r] * vol.spacing[0]) as f32,
            (vol.direction[1][r] * vol.spacing[1]) as f32,
            (vol.direction[2][r] * vol.spacing[2]) as f32,
            vol.origin[r] as f32,
        ];
        let start = offsets::SROW_X + 16 * r;
        B::write_f32_into(&row, &mut h[start..start + 16]);
    }
    h[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(MAGIC_SINGLE);

    let body = &mut out[DEFAULT_VOX_OFFSET..];
    match dtype {
        NiftiDatatype::Uint8 => {
            for (dst, v) in body.iter_mut().zip(&vol.data) {
                *dst = v.round() as u8;
            }
        }
        NiftiDatatype::Int16 => {
            for (dst, v) in body.chunks_exact_mut(2).zip(&vol.data) {
                B::write_i16(dst, v.round() as i16);
            }
        }
        NiftiDatatype::Int32 => {
            for (dst, v) in body.chunks_exact_mut(4).zip(&vol.data) {
                B::write_i32(dst, v.round() as i32);
            }
        }
        NiftiDatatype::Float32 => {
            for (dst, v) in body.chunks_exact_mut(4).zip(&vol.data) {
                B::write_f32(dst, *v as f32);
            }
        }
        NiftiDatatype::Float64 => B::write_f64_into(&vol.data, body),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: [usize; 3]) -> Volume {
        let n = shape.iter().product();
        Volume::new((0..n).map(|i| i as f64 * 0.5 - 3.0).collect(), shape, [0.8, 0.9, 2.5]).unwrap()
    }

    #[test]
    fn header_starts_with_little_endian_348() {
        let bytes = encode_nifti(&ramp([2, 2, 2]), NiftiDatatype::Float32, Endianness::Little).unwrap();
        assert_eq!(&bytes[0..4], &[0x5C, 0x01, 0x00, 0x00]);
        let h = NiftiHeader::parse(&bytes).unwrap();
        assert_eq!(h.endianness, Endianness::Little);
        assert_eq!(&bytes[344..348], b"n+1\0");
    }

    #[test]
    fn all_zero_float32_file_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.nii");
        write_nifti(&Volume::zeros([2, 2, 2], [1.0; 3]), &path, NiftiDatatype::Float32).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 352 + 32);
        let back = read_nifti(&path).unwrap();
        assert_eq!(back.spacing, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn truncated_payload_reports_required_size() {
        let vol = Volume::zeros([64, 64, 64], [1.0; 3]);
        let bytes = encode_nifti(&vol, NiftiDatatype::Float32, Endianness::Little).unwrap();
        assert_eq!(bytes.len(), 1_048_928);
        match decode_nifti(&bytes[..bytes.len() - 1]) {
            Err(Error::TruncatedPixelData { needed, actual }) => {
                assert_eq!(needed, 1_048_928);
                assert_eq!(actual, 1_048_927);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn uint8_out_of_range_is_rejected() {
        let mut vol = Volume::zeros([2, 2, 2], [1.0; 3]);
        vol.data[3] = 300.0;
        let err = encode_nifti(&vol, NiftiDatatype::Uint8, Endianness::Little).unwrap_err();
        assert!(matches!(err, Error::ValueOutOfRangeForDtype { value, .. } if value == 300.0));
    }

    #[test]
    fn big_and_little_endian_decode_identically() {
        let vol = ramp([3, 4, 5]);
        for dtype in [NiftiDatatype::Int16, NiftiDatatype::Int32, NiftiDatatype::Float32, NiftiDatatype::Float64] {
            let le = decode_nifti(&encode_nifti(&vol, dtype, Endianness::Little).unwrap()).unwrap();
            let be_bytes = encode_nifti(&vol, dtype, Endianness::Big).unwrap();
            assert_eq!(&be_bytes[0..4], &[0, 0, 1, 0x5C]);
            let be = decode_nifti(&be_bytes).unwrap();
            assert_eq!(le, be, "{dtype:?}");
        }
    }

    #[test]
    fn paired_magic_and_bad_datatypes_rejected() {
        let vol = ramp([2, 2, 2]);
        let mut bytes = encode_nifti(&vol, NiftiDatatype::Float32, Endianness::Little).unwrap();
        bytes[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(decode_nifti(&bytes), Err(Error::BadMagic(_))));

        let mut bytes = encode_nifti(&vol, NiftiDatatype::Float32, Endianness::Little).unwrap();
        LittleEndian::write_i16(&mut bytes[70..], 32);
        assert!(matches!(decode_nifti(&bytes), Err(Error::UnsupportedDatatype(32))));

        let mut bytes = encode_nifti(&vol, NiftiDatatype::Float32, Endianness::Little).unwrap();
        LittleEndian::write_i16(&mut bytes[72..], 64);
        assert!(matches!(decode_nifti(&bytes), Err(Error::InvalidHeader(_))));
    }

    #[test]
    fn four_d_requires_single_timepoint() {
        let vol = ramp([2, 2, 2]);
        let mut bytes = encode_nifti(&vol, NiftiDatatype::Float32, Endianness::Little).unwrap();
        LittleEndian::write_i16(&mut bytes[40..], 4);
        assert!(decode_nifti(&bytes).is_ok());
        LittleEndian::write_i16(&mut bytes[48..], 2);
        assert!(matches!(decode_nifti(&bytes), Err(Error::InvalidHeader(_))));
    }

    #[test]
    fn nan_voxel_is_a_load_error() {
        let vol = ramp([2, 2, 2]);
        let mut bytes = encode_nifti(&vol, NiftiDatatype::Float32, Endianness::Little).unwrap();
        LittleEndian::write_f32(&mut bytes[352 + 4 * 5..], f32::NAN);
        assert!(matches!(decode_nifti(&bytes), Err(Error::NonFiniteVoxel { index: 5 })));
    }

    #[test]
    fn scaling_is_applied() {
        let mut vol = Volume::zeros([2, 2, 2], [1.0; 3]);
        vol.data[0] = 10.0;
        let mut bytes = encode_nifti(&vol, NiftiDatatype::Int16, Endianness::Little).unwrap();
        LittleEndian::write_f32(&mut bytes[112..], 2.0);
        LittleEndian::write_f32(&mut bytes[116..], -1.0);
        let back = decode_nifti(&bytes).unwrap();
        assert_eq!(back.data[0], 19.0);
        assert_eq!(back.data[1], -1.0);
    }

    #[test]
    fn gzip_round_trip_keeps_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii.gz");
        let mut vol = ramp([4, 3, 2]);
        vol.direction = [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        vol.origin = [10.0, -20.0, 5.5];
        write_nifti(&vol, &path, NiftiDatatype::Float64).unwrap();
        let raw = fs::read(&path).unwrap();
        assert!(is_gzip(&raw));
        let back = read_nifti(&path).unwrap();
        assert_eq!(back.data, vol.data);
        assert_eq!(back.direction, vol.direction);
        assert_eq!(back.origin, vol.origin);
        for k in 0..3 {
            assert!((back.spacing[k] - vol.spacing[k]).abs() < 1e-6);
        }
    }
}
