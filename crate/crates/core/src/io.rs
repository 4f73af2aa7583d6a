//! Raster file I/O: single-channel TIFF stacks and NPY arrays.
//!
//! Every reader returns 32-bit floats regardless of the stored sample type.
//! Multi-page TIFFs are read as 3D volumes with pages along the first axis.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor};
use std::path::Path;

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use ndarray_npy::{ReadNpyExt, WriteNpyExt};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::ColorType;

use crate::error::{Error, Result};
use crate::tensor::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    Tiff,
    Npy,
}

impl RasterFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("tif") | Some("tiff") => Ok(Self::Tiff),
            Some("npy") => Ok(Self::Npy),
            _ => Err(Error::format(path, "expected a .tif, .tiff or .npy file")),
        }
    }
}

pub fn read_array(path: impl AsRef<Path>) -> Result<ArrayD<f32>> {
    let path = path.as_ref();
    match RasterFormat::from_path(path)? {
        RasterFormat::Tiff => read_tiff(path),
        RasterFormat::Npy => read_npy(path),
    }
}

pub fn write_array(path: impl AsRef<Path>, data: &ArrayD<f32>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    match RasterFormat::from_path(path)? {
        RasterFormat::Tiff => write_tiff(path, data),
        RasterFormat::Npy => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            data.as_standard_layout()
                .write_npy(BufWriter::new(file))
                .map_err(|e| Error::format(path, e))
        }
    }
}

/// Reads an image with the default `[0, 1]` nominal range.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    Image::new(read_array(path)?)
}

pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    write_array(path, img.data())
}

fn read_npy(path: &Path) -> Result<ArrayD<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    macro_rules! attempt {
        ($t:ty) => {
            if let Ok(arr) = ArrayD::<$t>::read_npy(Cursor::new(&bytes)) {
                return Ok(arr.mapv(|v| v as f32));
            }
        };
    }
    attempt!(f32);
    attempt!(f64);
    attempt!(u8);
    attempt!(u16);
    attempt!(i16);
    attempt!(i32);
    attempt!(u32);
    attempt!(i64);
    Err(Error::format(path, "unsupported or malformed NPY array"))
}

fn read_tiff(path: &Path) -> Result<ArrayD<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = Decoder::new(BufReader::new(file)).map_err(|e| Error::format(path, e))?;
    let mut pages: Vec<Array2<f32>> = Vec::new();
    loop {
        let (w, h) = decoder.dimensions().map_err(|e| Error::format(path, e))?;
        match decoder.colortype().map_err(|e| Error::format(path, e))? {
            ColorType::Gray(_) => {}
            other => {
                return Err(Error::format(
                    path,
                    format!("only single-channel images are supported, found {other:?}"),
                ))
            }
        }
        let values: Vec<f32> = match decoder.read_image().map_err(|e| Error::format(path, e))? {
            DecodingResult::U8(v) => v.into_iter().map(|x| x as f32).collect(),
            DecodingResult::U16(v) => v.into_iter().map(|x| x as f32).collect(),
            DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
            DecodingResult::U64(v) => v.into_iter().map(|x| x as f32).collect(),
            DecodingResult::I8(v) => v.into_iter().map(|x| x as f32).collect(),
            DecodingResult::I16(v) => v.into_iter().map(|x| x as f32).collect(),
            DecodingResult::I32(v) => v.into_iter().map(|x| x as f32).collect(),
            DecodingResult::I64(v) => v.into_iter().map(|x| x as f32).collect(),
            DecodingResult::F32(v) => v,
            DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        };
        let page = Array2::from_shape_vec((h as usize, w as usize), values)
            .map_err(|e| Error::format(path, e))?;
        if let Some(first) = pages.first() {
            if first.dim() != page.dim() {
                return Err(Error::format(path, "pages differ in size"));
            }
        }
        pages.push(page);
        if !decoder.more_images() {
            break;
        }
        decoder.next_image().map_err(|e| Error::format(path, e))?;
    }
    if pages.len() == 1 {
        return Ok(pages.pop().unwrap().into_dyn());
    }
    let views: Vec<_> = pages.iter().map(|p| p.view()).collect();
    let stacked = ndarray::stack(Axis(0), &views).map_err(|e| Error::format(path, e))?;
    Ok(stacked.into_dyn())
}

fn write_tiff(path: &Path, data: &ArrayD<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = TiffEncoder::new(BufWriter::new(file)).map_err(|e| Error::format(path, e))?;
    let data = data.as_standard_layout();
    let pages: Vec<ArrayD<f32>> = match data.ndim() {
        2 => vec![data.to_owned()],
        3 => data.outer_iter().map(|p| p.to_owned()).collect(),
        n => return Err(Error::Shape(format!("cannot write a {n}D array as TIFF"))),
    };
    for page in pages {
        let (h, w) = (page.shape()[0], page.shape()[1]);
        let flat: Vec<f32> = page.iter().copied().collect();
        encoder
            .write_image::<colortype::Gray32Float>(w as u32, h as u32, &flat)
            .map_err(|e| Error::format(path, e))?;
    }
    Ok(())
}

/// Shape helper for callers that build arrays from raw buffers.
pub fn array_from_vec(shape: &[usize], values: Vec<f32>) -> Result<ArrayD<f32>> {
    ArrayD::from_shape_vec(IxDyn(shape), values).map_err(|e| Error::Shape(e.to_string()))
}
