//! Grayscale rasters, masks and probability maps, plus the codecs and
//! resampling used to bring dataset images into a uniform 8-bit format.

use std::io::Cursor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("malformed image file: {0}")]
    MalformedFile(String),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("invalid dimensions {width}x{height} for {len} samples")]
    InvalidDimensions { width: usize, height: usize, len: usize },
    #[error("sample value {0} outside the allowed range")]
    InvalidValue(f64),
    #[error("png encoding failed: {0}")]
    Encode(String),
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<(), ImageError> {
    if width == 0 || height == 0 || width.checked_mul(height) != Some(len) {
        return Err(ImageError::InvalidDimensions { width, height, len });
    }
    Ok(())
}

/// Owned 8-bit grayscale raster in row-major order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        check_dims(width, height, data.len())?;
        Ok(Self { width, height, data })
    }

    /// Image filled with a single intensity. Panics on a zero dimension.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.data
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, u8> {
        self.data.chunks_exact(self.width)
    }

    /// Applies `f` to every pixel, keeping the dimensions.
    pub fn map(&self, f: impl Fn(u8) -> u8) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (u8, u8) {
        self.data
            .iter()
            .fold((u8::MAX, u8::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Per-pixel tumor likelihoods in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        check_dims(width, height, data.len())?;
        if let Some(&bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::InvalidValue(bad));
        }
        Ok(Self { width, height, data })
    }

    /// Reads 8-bit intensities as probabilities `v / 255`.
    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            data: img.data.iter().map(|&v| f64::from(v) / 255.0).collect(),
        }
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

impl From<&BinaryMask> for ProbabilityMap {
    fn from(mask: &BinaryMask) -> Self {
        Self {
            width: mask.width,
            height: mask.height,
            data: mask.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Binary segmentation labels, 1 = tumor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        check_dims(width, height, data.len())?;
        if let Some(&bad) = data.iter().find(|&&v| v > 1) {
            return Err(ImageError::InvalidValue(f64::from(bad)));
        }
        Ok(Self { width, height, data })
    }

    /// Binarizes an 8-bit mask image: values `>= 128` become 1.
    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            data: img.data.iter().map(|&v| u8::from(v >= 128)).collect(),
        }
    }

    /// Renders labels as 0/255 for storage.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v * 255).collect(),
        }
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.data
    }
}

/// Maps `p >= t` to 1 and everything else to 0.
pub fn threshold(p: &ProbabilityMap, t: f64) -> BinaryMask {
    BinaryMask {
        width: p.width,
        height: p.height,
        data: p.data.iter().map(|&v| u8::from(v >= t)).collect(),
    }
}

/// Integer BT.601 luma with round-half-up.
fn luma(r: u8, g: u8, b: u8) -> u8 {
    let weighted = 299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b);
    ((weighted + 500) / 1000) as u8
}

/// Decodes a PNG or binary PGM (P5) file into 8-bit gray.
pub fn decode_image(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' && bytes[1].is_ascii_digit() {
        Err(ImageError::UnsupportedFormat(format!(
            "netpbm variant P{} (only P5 is read)",
            bytes[1] as char
        )))
    } else {
        Err(ImageError::MalformedFile("unrecognized file signature".into()))
    }
}

fn decode_png(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| ImageError::MalformedFile(e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(ImageError::UnsupportedFormat(format!("{depth:?}-bit png")));
    }
    if !matches!(color, png::ColorType::Grayscale | png::ColorType::Rgb) {
        return Err(ImageError::UnsupportedFormat(format!("png color type {color:?}")));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::MalformedFile("png dimensions overflow".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| ImageError::MalformedFile(e.to_string()))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let channels = if info.color_type == png::ColorType::Rgb {
        3
    } else {
        1
    };
    let mut data = Vec::with_capacity(width * height);
    for row in buf.chunks_exact(info.line_size).take(height) {
        let row = &row[..width * channels];
        if channels == 1 {
            data.extend_from_slice(row);
        } else {
            data.extend(row.chunks_exact(3).map(|px| luma(px[0], px[1], px[2])));
        }
    }
    GrayImage::new(width, height, data)
}

struct PgmHeader {
    width: usize,
    height: usize,
    maxval: usize,
    offset: usize,
}

fn parse_pgm_header(bytes: &[u8]) -> Result<PgmHeader, ImageError> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and '#' comments may precede every field
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::MalformedFile("truncated pgm header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::MalformedFile("pgm header value out of range".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(ImageError::MalformedFile("missing separator after maxval".into())),
    }
    let [width, height, maxval] = fields;
    Ok(PgmHeader {
        width,
        height,
        maxval,
        offset: pos,
    })
}

fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let header = parse_pgm_header(bytes)?;
    if header.maxval == 0 || header.maxval >= 65536 {
        return Err(ImageError::MalformedFile(format!("pgm maxval {}", header.maxval)));
    }
    if header.maxval > 255 {
        return Err(ImageError::UnsupportedFormat("16-bit pgm".into()));
    }
    if header.width == 0 || header.height == 0 {
        return Err(ImageError::MalformedFile("pgm with zero dimension".into()));
    }
    let count = header
        .width
        .checked_mul(header.height)
        .ok_or_else(|| ImageError::MalformedFile("pgm dimensions overflow".into()))?;
    let payload = bytes
        .get(header.offset..)
        .filter(|p| p.len() >= count)
        .ok_or_else(|| ImageError::MalformedFile("truncated pgm raster".into()))?;
    let payload = &payload[..count];
    let maxval = header.maxval as u32;
    if let Some(&bad) = payload.iter().find(|&&v| u32::from(v) > maxval) {
        return Err(ImageError::MalformedFile(format!(
            "sample {bad} exceeds maxval {maxval}"
        )));
    }
    let data = if maxval == 255 {
        payload.to_vec()
    } else {
        payload
            .iter()
            .map(|&v| ((2 * 255 * u32::from(v) + maxval) / (2 * maxval)) as u8)
            .collect()
    };
    GrayImage::new(header.width, header.height, data)
}

/// Binary PGM (P5, maxval 255).
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.data.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&img.data);
    out
}

/// 8-bit grayscale PNG.
pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| ImageError::Encode(e.to_string()))?;
        writer
            .write_image_data(&img.data)
            .map_err(|e| ImageError::Encode(e.to_string()))?;
        writer.finish().map_err(|e| ImageError::Encode(e.to_string()))?;
    }
    Ok(out)
}

#[derive(Clone, Copy)]
struct AxisSample {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_samples(src: usize, dst: usize) -> Vec<AxisSample> {
    let scale = src as f64 / dst as f64;
    let last = (src - 1) as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = s.floor() as usize;
            AxisSample {
                lo,
                hi: (lo + 1).min(src - 1),
                frac: s - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resize with half-pixel centers, rounding half-up.
///
/// Source coordinates are clamped to the image, so the output never leaves the
/// input's intensity range. Panics if a target dimension is zero.
pub fn resize(img: &GrayImage, out_w: usize, out_h: usize) -> GrayImage {
    assert!(out_w > 0 && out_h > 0, "resize target must be positive");
    if (out_w, out_h) == img.dimensions() {
        return img.clone();
    }
    let xs = axis_samples(img.width, out_w);
    let ys = axis_samples(img.height, out_h);
    let mut data = Vec::with_capacity(out_w * out_h);
    for sy in &ys {
        let top = &img.data[sy.lo * img.width..(sy.lo + 1) * img.width];
        let bottom = &img.data[sy.hi * img.width..(sy.hi + 1) * img.width];
        for sx in &xs {
            let lerp = |row: &[u8]| {
                let a = f64::from(row[sx.lo]);
                a + sx.frac * (f64::from(row[sx.hi]) - a)
            };
            let t = lerp(top);
            let v = t + sy.frac * (lerp(bottom) - t);
            data.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage {
        width: out_w,
        height: out_h,
        data,
    }
}
