//! Minimal reader for uncompressed, Explicit VR Little Endian, monochrome DICOM series.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::volume::Volume;

pub const EXPLICIT_VR_LITTLE_ENDIAN: &str = "1.2.840.10008.1.2.1";

type Tag = (u16, u16);

const TRANSFER_SYNTAX: Tag = (0x0002, 0x0010);
const SAMPLES_PER_PIXEL: Tag = (0x0028, 0x0002);
const PHOTOMETRIC: Tag = (0x0028, 0x0004);
const ROWS: Tag = (0x0028, 0x0010);
const COLUMNS: Tag = (0x0028, 0x0011);
const PIXEL_SPACING: Tag = (0x0028, 0x0030);
const BITS_ALLOCATED: Tag = (0x0028, 0x0100);
const PIXEL_REPRESENTATION: Tag = (0x0028, 0x0103);
const RESCALE_INTERCEPT: Tag = (0x0028, 0x1052);
const RESCALE_SLOPE: Tag = (0x0028, 0x1053);
const SLICE_THICKNESS: Tag = (0x0018, 0x0050);
const IMAGE_POSITION: Tag = (0x0020, 0x0032);
const IMAGE_ORIENTATION: Tag = (0x0020, 0x0037);
const PIXEL_DATA: Tag = (0x7FE0, 0x0010);

const ITEM: Tag = (0xFFFE, 0xE000);
const ITEM_DELIMITER: Tag = (0xFFFE, 0xE00D);
const SEQUENCE_DELIMITER: Tag = (0xFFFE, 0xE0DD);
const UNDEFINED_LENGTH: u32 = 0xFFFF_FFFF;

fn has_long_length(vr: &[u8]) -> bool {
    matches!(
        vr,
        b"OB" | b"OD" | b"OF" | b"OL" | b"OV" | b"OW" | b"SQ" | b"SV" | b"UC" | b"UN" | b"UR" | b"UT" | b"UV"
    )
}

/// Top-level data elements of one Part-10 file, keyed by tag.
struct DataSet<'a> {
    file: String,
    elements: HashMap<Tag, &'a [u8]>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> Cursor<'a> {
    fn malformed(&self, what: &str) -> Error {
        Error::MalformedDicom(format!("{}: {what} at byte {}", self.file, self.pos))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.malformed("unexpected end of data"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.take(2)?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }

    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    /// Reads one explicit-VR element header: (tag, vr, length).
    fn element_header(&mut self) -> Result<(Tag, [u8; 2], u32)> {
        let tag = (self.u16()?, self.u16()?);
        if tag.0 == 0xFFFE {
            let len = self.u32()?;
            return Ok((tag, *b"--", len));
        }
        let vr_bytes = self.take(2)?;
        let vr = [vr_bytes[0], vr_bytes[1]];
        if !vr.iter().all(|b| b.is_ascii_uppercase()) {
            return Err(self.malformed("invalid VR (not explicit VR?)"));
        }
        let len = if has_long_length(&vr) {
            self.take(2)?;
            self.u32()?
        } else {
            self.u16()? as u32
        };
        Ok((tag, vr, len))
    }

    /// Skips a sequence of undefined length, including nested sequences.
    fn skip_undefined_sequence(&mut self) -> Result<()> {
        loop {
            let (tag, _, len) = self.element_header()?;
            match tag {
                SEQUENCE_DELIMITER => return Ok(()),
                ITEM if len == UNDEFINED_LENGTH => self.skip_undefined_item()?,
                ITEM => {
                    self.take(len as usize)?;
                }
                _ => return Err(self.malformed("expected sequence item")),
            }
        }
    }

    fn skip_undefined_item(&mut self) -> Result<()> {
        loop {
            let (tag, vr, len) = self.element_header()?;
            if tag == ITEM_DELIMITER {
                return Ok(());
            }
            if len == UNDEFINED_LENGTH {
                if &vr == b"SQ" {
                    self.skip_undefined_sequence()?;
                } else {
                    return Err(self.malformed("undefined length on non-sequence element"));
                }
            } else {
                self.take(len as usize)?;
            }
        }
    }
}

impl<'a> DataSet<'a> {
    fn parse(bytes: &'a [u8], file: &'a str) -> Result<Self> {
        if bytes.len() < 132 || &bytes[128..132] != b"DICM" {
            return Err(Error::MalformedDicom(format!("{file}: missing DICM preamble")));
        }
        let mut cur = Cursor { bytes, pos: 132, file };
        let mut elements = HashMap::new();
        let mut syntax_checked = false;
        while !cur.at_end() {
            if cur.pos + 2 > bytes.len() {
                return Err(cur.malformed("trailing bytes"));
            }
            let group = LittleEndian::read_u16(&bytes[cur.pos..]);
            if group != 0x0002 && !syntax_checked {
                let ts: &[u8] = elements.get(&TRANSFER_SYNTAX).copied().unwrap_or(b"");
                let ts = text(ts);
                if ts != EXPLICIT_VR_LITTLE_ENDIAN {
                    return Err(Error::UnsupportedTransferSyntax(if ts.is_empty() {
                        format!("{file}: no transfer syntax in file meta")
                    } else {
                        format!("{file}: {ts}")
                    }));
                }
                syntax_checked = true;
            }
            let (tag, vr, len) = cur.element_header()?;
            if len == UNDEFINED_LENGTH {
                if &vr == b"SQ" {
                    cur.skip_undefined_sequence()?;
                    continue;
                }
                if tag == PIXEL_DATA {
                    return Err(Error::UnsupportedTransferSyntax(format!(
                        "{file}: encapsulated pixel data"
                    )));
                }
                return Err(cur.malformed("undefined length"));
            }
            let value = cur.take(len as usize)?;
            elements.insert(tag, value);
        }
        if !syntax_checked {
            return Err(Error::MalformedDicom(format!("{file}: no data set after file meta")));
        }
        Ok(DataSet {
            file: file.to_string(),
            elements,
        })
    }

    fn required(&self, tag: Tag) -> Result<&'a [u8]> {
        self.elements.get(&tag).copied().ok_or_else(|| Error::MissingRequiredTag {
            group: tag.0,
            element: tag.1,
            file: self.file.clone(),
        })
    }

    fn us(&self, tag: Tag) -> Result<Option<u16>> {
        match self.elements.get(&tag) {
            None => Ok(None),
            Some(v) if v.len() >= 2 => Ok(Some(LittleEndian::read_u16(v))),
            Some(_) => Err(Error::MalformedDicom(format!("{}: short US value", self.file))),
        }
    }

    fn ds(&self, tag: Tag) -> Result<Option<Vec<f64>>> {
        let Some(raw) = self.elements.get(&tag) else {
            return Ok(None);
        };
        let s = text(raw);
        s.split('\\')
            .map(|p| {
                p.trim().parse::<f64>().map_err(|_| {
                    Error::MalformedDicom(format!("{}: bad decimal string {s:?} in ({:04X},{:04X})", self.file, tag.0, tag.1))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn ds_n(&self, tag: Tag, n: usize) -> Result<Vec<f64>> {
        self.required(tag)?;
        let v = self.ds(tag)?.unwrap_or_default();
        if v.len() != n {
            return Err(Error::MalformedDicom(format!(
                "{}: ({:04X},{:04X}) has {} values, expected {n}",
                self.file,
                tag.0,
                tag.1,
                v.len()
            )));
        }
        Ok(v)
    }
}

fn text(raw: &[u8]) -> &str {
    std::str::from_utf8(raw).unwrap_or("").trim_end_matches(['\0', ' '])
}

struct Slice {
    rows: usize,
    columns: usize,
    pixel_spacing: [f64; 2],
    position: [f64; 3],
    row_dir: [f64; 3],
    col_dir: [f64; 3],
    thickness: Option<f64>,
    values: Vec<f64>,
}

fn read_slice(path: &Path) -> Result<Slice> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let ds = DataSet::parse(&bytes, &name)?;
    let rows = ds.us(ROWS)?.ok_or_else(|| missing(ROWS, &name))? as usize;
    let columns = ds.us(COLUMNS)?.ok_or_else(|| missing(COLUMNS, &name))? as usize;
    let ps = ds.ds_n(PIXEL_SPACING, 2)?;
    let ipp = ds.ds_n(IMAGE_POSITION, 3)?;
    let iop = ds.ds_n(IMAGE_ORIENTATION, 6)?;
    let pixel = ds.required(PIXEL_DATA)?;
    if let Some(spp) = ds.us(SAMPLES_PER_PIXEL)? {
        if spp != 1 {
            return Err(Error::MalformedDicom(format!("{name}: {spp} samples per pixel, expected monochrome")));
        }
    }
    if let Some(pi) = ds.elements.get(&PHOTOMETRIC) {
        let pi = text(pi);
        if !pi.starts_with("MONOCHROME") {
            return Err(Error::MalformedDicom(format!("{name}: photometric interpretation {pi}")));
        }
    }
    let bits = ds.us(BITS_ALLOCATED)?.unwrap_or(16);
    let signed = ds.us(PIXEL_REPRESENTATION)?.unwrap_or(0) == 1;
    let slope = ds.ds(RESCALE_SLOPE)?.and_then(|v| v.first().copied()).unwrap_or(1.0);
    let intercept = ds.ds(RESCALE_INTERCEPT)?.and_then(|v| v.first().copied()).unwrap_or(0.0);
    let thickness = ds.ds(SLICE_THICKNESS)?.and_then(|v| v.first().copied());

    let n = rows * columns;
    let stored: Vec<f64> = match (bits, signed) {
        (8, false) => pixel.iter().take(n).map(|&v| v as f64).collect(),
        (8, true) => pixel.iter().take(n).map(|&v| v as i8 as f64).collect(),
        (16, false) => pixel.chunks_exact(2).take(n).map(|c| LittleEndian::read_u16(c) as f64).collect(),
        (16, true) => pixel.chunks_exact(2).take(n).map(|c| LittleEndian::read_i16(c) as f64).collect(),
        (32, false) => pixel.chunks_exact(4).take(n).map(|c| LittleEndian::read_u32(c) as f64).collect(),
        (32, true) => pixel.chunks_exact(4).take(n).map(|c| LittleEndian::read_i32(c) as f64).collect(),
        (b, _) => return Err(Error::MalformedDicom(format!("{name}: {b} bits allocated"))),
    };
    if stored.len() != n {
        return Err(Error::MalformedDicom(format!(
            "{name}: pixel data holds {} values, expected {rows}x{columns}",
            stored.len()
        )));
    }
    Ok(Slice {
        rows,
        columns,
        pixel_spacing: [ps[0], ps[1]],
        position: [ipp[0], ipp[1], ipp[2]],
        row_dir: [iop[0], iop[1], iop[2]],
        col_dir: [iop[3], iop[4], iop[5]],
        thickness,
        values: stored.into_iter().map(|v| v * slope + intercept).collect(),
    })
}

fn missing(tag: Tag, file: &str) -> Error {
    Error::MissingRequiredTag {
        group: tag.0,
        element: tag.1,
        file: file.to_string(),
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalized(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        [v[0] / n, v[1] / n, v[2] / n]
    } else {
        v
    }
}

/// Loads every regular file in `dir` as one slice of a series and stacks them geometrically.
pub fn read_dicom_series(dir: impl AsRef<Path>) -> Result<Volume> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::MalformedDicom(format!("{}: no files in series directory", dir.display())));
    }
    let mut slices = paths.iter().map(|p| read_slice(p)).collect::<Result<Vec<_>>>()?;

    let first = &slices[0];
    let (rows, columns, pixel_spacing) = (first.rows, first.columns, first.pixel_spacing);
    let (row_dir, col_dir) = (first.row_dir, first.col_dir);
    for s in &slices[1..] {
        if s.rows != first.rows || s.columns != first.columns {
            return Err(Error::InconsistentGeometry(format!(
                "slice size {}x{} differs from {}x{}",
                s.rows, s.columns, first.rows, first.columns
            )));
        }
        if s.pixel_spacing != first.pixel_spacing {
            return Err(Error::InconsistentGeometry(format!(
                "pixel spacing {:?} differs from {:?}",
                s.pixel_spacing, first.pixel_spacing
            )));
        }
    }
    let row_dir = normalized(row_dir);
    let col_dir = normalized(col_dir);
    let normal = normalized(cross(row_dir, col_dir));
    // position ties fall back to file name order, which `paths` already sorted
    slices.sort_by(|a, b| dot(a.position, normal).total_cmp(&dot(b.position, normal)));

    let z_spacing = if slices.len() == 1 {
        slices[0].thickness.filter(|t| *t > 0.0).unwrap_or(1.0)
    } else {
        let gaps: Vec<f64> = slices
            .windows(2)
            .map(|w| dot(w[1].position, normal) - dot(w[0].position, normal))
            .collect();
        let mut sorted = gaps.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        if median <= 0.0 {
            return Err(Error::InconsistentGeometry("slices share the same position".into()));
        }
        let max_deviation = gaps.iter().map(|g| (g - median).abs()).fold(0.0, f64::max);
        if max_deviation > 0.1 * median {
            return Err(Error::NonUniformSliceGap { median, max_deviation });
        }
        median
    };

    let (nx, ny, nz) = (columns, rows, slices.len());
    let spacing = [pixel_spacing[1], pixel_spacing[0], z_spacing];
    let origin = slices[0].position;
    let mut data = Vec::with_capacity(nx * ny * nz);
    for s in &slices {
        data.extend_from_slice(&s.values);
    }
    let vol = Volume {
        data,
        shape: [nx, ny, nz],
        spacing,
        direction: [row_dir, col_dir, normal],
        origin,
        source_id: dir.display().to_string(),
    };
    vol.validate()?;
    Ok(vol)
}

/// Builds synthetic Part-10 slices for fixtures and round-trip tests.
pub mod synth {
    use byteorder::{ByteOrder, LittleEndian};

    /// Description of one synthetic 16-bit slice.
    #[derive(Debug, Clone)]
    pub struct SliceSpec {
        pub rows: u16,
        pub columns: u16,
        pub pixel_spacing: [f64; 2],
        pub position: [f64; 3],
        pub orientation: [f64; 6],
        pub slope: Option<f64>,
        pub intercept: Option<f64>,
        pub transfer_syntax: String,
        /// Row-major stored values.
        pub pixels: Vec<u16>,
    }

    impl SliceSpec {
        pub fn axial(rows: u16, columns: u16, z: f64) -> Self {
            SliceSpec {
                rows,
                columns,
                pixel_spacing: [1.0, 1.0],
                position: [0.0, 0.0, z],
                orientation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
                slope: None,
                intercept: None,
                transfer_syntax: super::EXPLICIT_VR_LITTLE_ENDIAN.to_string(),
                pixels: vec![0; rows as usize * columns as usize],
            }
        }
    }

    fn push_element(out: &mut Vec<u8>, group: u16, element: u16, vr: &[u8; 2], value: &[u8]) {
        let mut value = value.to_vec();
        if value.len() % 2 == 1 {
            value.push(if vr == b"UI" || vr == b"OB" { 0 } else { b' ' });
        }
        let mut buf = [0u8; 4];
        LittleEndian::write_u16(&mut buf[0..2], group);
        LittleEndian::write_u16(&mut buf[2..4], element);
        out.extend_from_slice(&buf);
        out.extend_from_slice(vr);
        if super::has_long_length(vr) {
            out.extend_from_slice(&[0, 0]);
            out.extend_from_slice(&(value.len() as u32).to_le_bytes());
        } else {
            out.extend_from_slice(&(value.len() as u16).to_le_bytes());
        }
        out.extend_from_slice(&value);
    }

    fn ds(values: &[f64]) -> Vec<u8> {
        values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join("\\").into_bytes()
    }

    pub fn encode(spec: &SliceSpec) -> Vec<u8> {
        let mut out = vec![0u8; 128];
        out.extend_from_slice(b"DICM");
        push_element(&mut out, 0x0002, 0x0010, b"UI", spec.transfer_syntax.as_bytes());
        push_element(&mut out, 0x0008, 0x0060, b"CS", b"MR");
        // an empty defined-length sequence must be skipped transparently
        push_element(&mut out, 0x0008, 0x1140, b"SQ", &[]);
        push_element(&mut out, 0x0020, 0x0032, b"DS", &ds(&spec.position));
        push_element(&mut out, 0x0020, 0x0037, b"DS", &ds(&spec.orientation));
        push_element(&mut out, 0x0028, 0x0002, b"US", &1u16.to_le_bytes());
        push_element(&mut out, 0x0028, 0x0004, b"CS", b"MONOCHROME2");
        push_element(&mut out, 0x0028, 0x0010, b"US", &spec.rows.to_le_bytes());
        push_element(&mut out, 0x0028, 0x0011, b"US", &spec.columns.to_le_bytes());
        push_element(&mut out, 0x0028, 0x0030, b"DS", &ds(&spec.pixel_spacing));
        push_element(&mut out, 0x0028, 0x0100, b"US", &16u16.to_le_bytes());
        push_element(&mut out, 0x0028, 0x0103, b"US", &0u16.to_le_bytes());
        if let Some(i) = spec.intercept {
            push_element(&mut out, 0x0028, 0x1052, b"DS", &ds(&[i]));
        }
        if let Some(s) = spec.slope {
            push_element(&mut out, 0x0028, 0x1053, b"DS", &ds(&[s]));
        }
        let mut px = vec![0u8; spec.pixels.len() * 2];
        LittleEndian::write_u16_into(&spec.pixels, &mut px);
        push_element(&mut out, 0x7FE0, 0x0010, b"OW", &px);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::synth::{encode, SliceSpec};
    use super::*;

    fn write_series(dir: &Path, specs: &[SliceSpec]) {
        for (i, s) in specs.iter().enumerate() {
            fs::write(dir.join(format!("im{i:03}.dcm")), encode(s)).unwrap();
        }
    }

    #[test]
    fn spacing_from_median_gap() {
        let dir = tempfile::tempdir().unwrap();
        let specs: Vec<_> = [5.0, 0.0, 2.5]
            .iter()
            .map(|&z| {
                let mut s = SliceSpec::axial(4, 6, z);
                s.pixel_spacing = [0.78, 0.78];
                s.pixels = vec![z as u16; 24];
                s
            })
            .collect();
        write_series(dir.path(), &specs);
        let vol = read_dicom_series(dir.path()).unwrap();
        assert_eq!(vol.shape, [6, 4, 3]);
        assert_eq!(vol.spacing, [0.78, 0.78, 2.5]);
        // sorted by position, not by file name
        assert_eq!(vol.get(0, 0, 0), 0.0);
        assert_eq!(vol.get(0, 0, 1), 2.0);
        assert_eq!(vol.get(0, 0, 2), 5.0);
        assert_eq!(vol.origin, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn rescale_is_applied() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = SliceSpec::axial(2, 2, 0.0);
        s.pixels = vec![1000, 0, 0, 0];
        s.slope = Some(2.0);
        s.intercept = Some(-1024.0);
        write_series(dir.path(), &[s]);
        let vol = read_dicom_series(dir.path()).unwrap();
        assert_eq!(vol.data[0], 976.0);
        assert_eq!(vol.data[1], -1024.0);
    }

    #[test]
    fn mixed_sizes_are_inconsistent() {
        let dir = tempfile::tempdir().unwrap();
        write_series(dir.path(), &[SliceSpec::axial(512, 512, 0.0), SliceSpec::axial(256, 256, 1.0)]);
        assert!(matches!(read_dicom_series(dir.path()), Err(Error::InconsistentGeometry(_))));
    }

    #[test]
    fn compressed_syntax_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = SliceSpec::axial(2, 2, 0.0);
        s.transfer_syntax = "1.2.840.10008.1.2.4.90".into();
        write_series(dir.path(), &[s]);
        let err = read_dicom_series(dir.path()).unwrap_err();
        assert_eq!(err.name(), "UnsupportedTransferSyntax");
    }

    #[test]
    fn uneven_gaps_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let specs: Vec<_> = [0.0, 1.0, 2.0, 3.5].iter().map(|&z| SliceSpec::axial(2, 2, z)).collect();
        write_series(dir.path(), &specs);
        assert!(matches!(read_dicom_series(dir.path()), Err(Error::NonUniformSliceGap { .. })));
    }

    #[test]
    fn missing_tag_reported() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = encode(&SliceSpec::axial(2, 2, 0.0));
        // cut the pixel data element off entirely
        let cut = bytes.len() - 8 - 12;
        fs::write(dir.path().join("a.dcm"), &bytes[..cut]).unwrap();
        let err = read_dicom_series(dir.path()).unwrap_err();
        assert!(
            matches!(err, Error::MissingRequiredTag { group: 0x7FE0, element: 0x0010, .. }),
            "{err}"
        );
    }
}
