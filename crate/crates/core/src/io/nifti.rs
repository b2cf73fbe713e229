//! Single-file NIfTI-1 (`.nii`, optionally gzip-compressed) volumes.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("not NIfTI-1: sizeof_hdr is {0}, expected 348")]
    NotNifti1(i32),
    #[error("bad NIfTI-1 magic {0:?} (only single-file \"n+1\" is supported)")]
    BadMagic([u8; 4]),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("truncated NIfTI file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("invalid NIfTI header: {0}")]
    InvalidHeader(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl NiftiError {
    /// Stable numeric code per failure kind.
    pub fn code(&self) -> u8 {
        match self {
            NiftiError::NotNifti1(_) => 1,
            NiftiError::BadMagic(_) => 2,
            NiftiError::UnsupportedDatatype(_) => 3,
            NiftiError::Truncated { .. } => 4,
            NiftiError::InvalidHeader(_) => 5,
            NiftiError::Io { .. } => 6,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        NiftiError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Storage type of the voxel payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl DataType {
    pub fn code(self) -> i16 {
        match self {
            DataType::U8 => 2,
            DataType::I16 => 4,
            DataType::I32 => 8,
            DataType::F32 => 16,
            DataType::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self, NiftiError> {
        Ok(match code {
            2 => DataType::U8,
            4 => DataType::I16,
            8 => DataType::I32,
            16 => DataType::F32,
            64 => DataType::F64,
            other => return Err(NiftiError::UnsupportedDatatype(other)),
        })
    }

    pub fn size(self) -> usize {
        match self {
            DataType::U8 => 1,
            DataType::I16 => 2,
            DataType::I32 | DataType::F32 => 4,
            DataType::F64 => 8,
        }
    }
}

/// Raw voxel payload in file order (first axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl VolumeData {
    pub fn datatype(&self) -> DataType {
        match self {
            VolumeData::U8(_) => DataType::U8,
            VolumeData::I16(_) => DataType::I16,
            VolumeData::I32(_) => DataType::I32,
            VolumeData::F32(_) => DataType::F32,
            VolumeData::F64(_) => DataType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VolumeData::U8(d) => d.len(),
            VolumeData::I16(d) => d.len(),
            VolumeData::I32(d) => d.len(),
            VolumeData::F32(d) => d.len(),
            VolumeData::F64(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn raw_f64(&self) -> Vec<f64> {
        match self {
            VolumeData::U8(d) => d.iter().map(|&x| x as f64).collect(),
            VolumeData::I16(d) => d.iter().map(|&x| x as f64).collect(),
            VolumeData::I32(d) => d.iter().map(|&x| x as f64).collect(),
            VolumeData::F32(d) => d.iter().map(|&x| x as f64).collect(),
            VolumeData::F64(d) => d.clone(),
        }
    }
}

/// A NIfTI-1 image: geometry, intensity scaling and payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    /// Extent along each used axis (1 to 7 axes).
    pub dims: Vec<usize>,
    /// Spacing along each used axis.
    pub pixdim: Vec<f32>,
    /// Voxel-to-world transform.
    pub affine: [[f64; 4]; 4],
    pub scl_slope: f32,
    pub scl_inter: f32,
    /// NIfTI xyzt_units byte (default 2 = mm).
    pub xyzt_units: u8,
    pub descrip: String,
    pub data: VolumeData,
}

impl Volume {
    /// A volume with a diagonal affine built from `pixdim`.
    pub fn new(dims: Vec<usize>, pixdim: Vec<f32>, data: VolumeData) -> Result<Self, NiftiError> {
        if dims.is_empty() || dims.len() > 7 || dims.iter().any(|&d| d == 0 || d > i16::MAX as usize) {
            return Err(NiftiError::InvalidHeader(format!("bad dims {dims:?}")));
        }
        if pixdim.len() != dims.len() {
            return Err(NiftiError::InvalidHeader("pixdim length must match dims".into()));
        }
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(NiftiError::InvalidHeader(format!(
                "payload has {} values, dims imply {expected}",
                data.len()
            )));
        }
        let mut affine = [[0.0; 4]; 4];
        for a in 0..3 {
            affine[a][a] = pixdim.get(a).map_or(1.0, |&p| p as f64);
        }
        affine[3][3] = 1.0;
        Ok(Volume {
            dims,
            pixdim,
            affine,
            scl_slope: 0.0,
            scl_inter: 0.0,
            xyzt_units: 2,
            descrip: String::new(),
            data,
        })
    }

    pub fn with_affine(mut self, affine: [[f64; 4]; 4]) -> Self {
        self.affine = affine;
        self
    }

    pub fn with_scaling(mut self, slope: f32, inter: f32) -> Self {
        self.scl_slope = slope;
        self.scl_inter = inter;
        self
    }

    pub fn datatype(&self) -> DataType {
        self.data.datatype()
    }

    /// Spatial extent (first three axes, padded with 1).
    pub fn spatial_dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.dims.get(a).copied().unwrap_or(1))
    }

    /// Number of 3D volumes (product of axes 4 and up).
    pub fn n_volumes(&self) -> usize {
        self.dims.iter().skip(3).product()
    }

    /// Voxel values with `scl_slope`/`scl_inter` applied when the slope is nonzero.
    pub fn values(&self) -> Vec<f64> {
        let mut v = self.data.raw_f64();
        if self.scl_slope != 0.0 && self.scl_slope.is_finite() {
            let (a, b) = (self.scl_slope as f64, self.scl_inter as f64);
            for x in &mut v {
                *x = a * *x + b;
            }
        }
        v
    }
}

/// Reads a `.nii` or gzip-compressed `.nii.gz` file (detected from content).
pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume, NiftiError> {
    let path = path.as_ref();
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| NiftiError::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| NiftiError::io(path, e))?;
        raw = out;
    }
    parse_nifti(&raw)
}

/// Parses an in-memory single-file NIfTI-1 image.
pub fn parse_nifti(raw: &[u8]) -> Result<Volume, NiftiError> {
    if raw.len() < HEADER_SIZE {
        return Err(NiftiError::Truncated {
            expected: HEADER_SIZE,
            found: raw.len(),
        });
    }
    if LittleEndian::read_i32(&raw[0..4]) == HEADER_SIZE as i32 {
        parse_with::<LittleEndian>(raw)
    } else if BigEndian::read_i32(&raw[0..4]) == HEADER_SIZE as i32 {
        parse_with::<BigEndian>(raw)
    } else {
        Err(NiftiError::NotNifti1(LittleEndian::read_i32(&raw[0..4])))
    }
}

fn parse_with<E: ByteOrder>(raw: &[u8]) -> Result<Volume, NiftiError> {
    let magic: [u8; 4] = raw[344..348].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(NiftiError::BadMagic(magic));
    }
    let i16_at = |off: usize| E::read_i16(&raw[off..off + 2]);
    let f32_at = |off: usize| E::read_f32(&raw[off..off + 4]);

    let ndim = i16_at(40);
    if !(1..=7).contains(&ndim) {
        return Err(NiftiError::InvalidHeader(format!("dim[0] = {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    for a in 0..ndim as usize {
        let d = i16_at(42 + 2 * a);
        if d < 1 {
            return Err(NiftiError::InvalidHeader(format!("dim[{}] = {d}", a + 1)));
        }
        dims.push(d as usize);
    }
    let datatype = DataType::from_code(i16_at(70))?;
    let pixdim: Vec<f32> = (0..ndim as usize).map(|a| f32_at(80 + 4 * a)).collect();
    let qfac = if f32_at(76) < 0.0 { -1.0 } else { 1.0 };
    let vox_offset = f32_at(108);
    if !(vox_offset >= HEADER_SIZE as f32) {
        return Err(NiftiError::InvalidHeader(format!("vox_offset = {vox_offset}")));
    }
    let offset = vox_offset as usize;
    let scl_slope = f32_at(112);
    let scl_inter = f32_at(116);
    let xyzt_units = raw[123];
    let descrip = String::from_utf8_lossy(&raw[148..228])
        .trim_end_matches('\0')
        .to_string();
    let qform_code = i16_at(252);
    let sform_code = i16_at(254);

    let affine = if sform_code > 0 {
        let mut a = [[0.0; 4]; 4];
        for (r, row) in a.iter_mut().take(3).enumerate() {
            for (c, x) in row.iter_mut().enumerate() {
                *x = f32_at(280 + 16 * r + 4 * c) as f64;
            }
        }
        a[3][3] = 1.0;
        a
    } else if qform_code > 0 {
        let quat = [f32_at(256), f32_at(260), f32_at(264)].map(|x| x as f64);
        let offs = [f32_at(268), f32_at(272), f32_at(276)].map(|x| x as f64);
        let spacing = [0, 1, 2].map(|a| pixdim.get(a).map_or(1.0, |&p| p as f64));
        quaternion_affine(quat, offs, spacing, qfac)
    } else {
        let mut a = [[0.0; 4]; 4];
        for (ax, row) in a.iter_mut().take(3).enumerate() {
            row[ax] = pixdim.get(ax).map_or(1.0, |&p| p as f64);
        }
        a[3][3] = 1.0;
        a
    };

    let count: usize = dims.iter().product();
    let needed = offset + count * datatype.size();
    if raw.len() < needed {
        return Err(NiftiError::Truncated {
            expected: needed,
            found: raw.len(),
        });
    }
    let bytes = &raw[offset..needed];
    let data = match datatype {
        DataType::U8 => VolumeData::U8(bytes.to_vec()),
        DataType::I16 => {
            let mut v = vec![0; count];
            E::read_i16_into(bytes, &mut v);
            VolumeData::I16(v)
        }
        DataType::I32 => {
            let mut v = vec![0; count];
            E::read_i32_into(bytes, &mut v);
            VolumeData::I32(v)
        }
        DataType::F32 => {
            let mut v = vec![0.0; count];
            E::read_f32_into(bytes, &mut v);
            VolumeData::F32(v)
        }
        DataType::F64 => {
            let mut v = vec![0.0; count];
            E::read_f64_into(bytes, &mut v);
            VolumeData::F64(v)
        }
    };
    Ok(Volume {
        dims,
        pixdim,
        affine,
        scl_slope,
        scl_inter,
        xyzt_units,
        descrip,
        data,
    })
}

fn quaternion_affine(q: [f64; 3], offset: [f64; 3], spacing: [f64; 3], qfac: f64) -> [[f64; 4]; 4] {
    let [b, c, d] = q;
    let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
    let r = [
        [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
        [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
        [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - b * b - c * c],
    ];
    let scale = [spacing[0], spacing[1], spacing[2] * qfac];
    let mut out = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = r[i][j] * scale[j];
        }
        out[i][3] = offset[i];
    }
    out[3][3] = 1.0;
    out
}

/// Serializes a volume as little-endian single-file NIfTI-1.
pub fn encode_nifti(vol: &Volume) -> Result<Vec<u8>, NiftiError> {
    let expected: usize = vol.dims.iter().product();
    if vol.dims.is_empty() || vol.dims.len() > 7 || vol.data.len() != expected {
        return Err(NiftiError::InvalidHeader(format!(
            "dims {:?} do not match {} values",
            vol.dims,
            vol.data.len()
        )));
    }
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut [u8], off: usize, v: i16| LittleEndian::write_i16(&mut h[off..off + 2], v);
    let put_f32 = |h: &mut [u8], off: usize, v: f32| LittleEndian::write_f32(&mut h[off..off + 4], v);

    LittleEndian::write_i32(&mut h[0..4], HEADER_SIZE as i32);
    h[38] = b'r';
    put_i16(&mut h, 40, vol.dims.len() as i16);
    for a in 0..7 {
        put_i16(&mut h, 42 + 2 * a, vol.dims.get(a).map_or(1, |&d| d as i16));
    }
    let dt = vol.datatype();
    put_i16(&mut h, 70, dt.code());
    put_i16(&mut h, 72, (8 * dt.size()) as i16);
    put_f32(&mut h, 76, 1.0);
    for a in 0..7 {
        put_f32(&mut h, 80 + 4 * a, vol.pixdim.get(a).copied().unwrap_or(1.0));
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, vol.scl_slope);
    put_f32(&mut h, 116, vol.scl_inter);
    h[123] = vol.xyzt_units;
    let descrip = vol.descrip.as_bytes();
    let len = descrip.len().min(79);
    h[148..148 + len].copy_from_slice(&descrip[..len]);
    put_i16(&mut h, 252, 0);
    put_i16(&mut h, 254, 1);
    for r in 0..3 {
        for c in 0..4 {
            put_f32(&mut h, 280 + 16 * r + 4 * c, vol.affine[r][c] as f32);
        }
    }
    h[344..348].copy_from_slice(MAGIC);

    let mut out = h;
    out.reserve(expected * dt.size());
    match &vol.data {
        VolumeData::U8(d) => out.extend_from_slice(d),
        VolumeData::I16(d) => d.iter().for_each(|&x| out.write_i16::<LittleEndian>(x).expect("vec write")),
        VolumeData::I32(d) => d.iter().for_each(|&x| out.write_i32::<LittleEndian>(x).expect("vec write")),
        VolumeData::F32(d) => d.iter().for_each(|&x| out.write_f32::<LittleEndian>(x).expect("vec write")),
        VolumeData::F64(d) => d.iter().for_each(|&x| out.write_f64::<LittleEndian>(x).expect("vec write")),
    }
    Ok(out)
}

/// Writes a volume; a `.gz` extension selects gzip compression.
pub fn write_nifti(vol: &Volume, path: impl AsRef<Path>) -> Result<(), NiftiError> {
    let path = path.as_ref();
    let bytes = encode_nifti(vol)?;
    let file = File::create(path).map_err(|e| NiftiError::io(path, e))?;
    let gz = path.extension().is_some_and(|e| e == "gz");
    let result = if gz {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(&bytes).and_then(|_| enc.finish()).and_then(|mut w| w.flush())
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(&bytes).and_then(|_| w.flush())
    };
    result.map_err(|e| NiftiError::io(path, e))
}
