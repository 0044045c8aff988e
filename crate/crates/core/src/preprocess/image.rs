use std::fs;
use std::path::Path;

use crate::codes::validate_user_id;
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor3;

/// Single-channel image with real intensities, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return shape_err(format!("image dims must be >= 1, got {rows}x{cols}"));
        }
        if data.len() != rows * cols {
            return shape_err(format!("{rows}x{cols} image needs {} pixels, got {}", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("image contains non-finite values".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn constant(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The `height x width` window whose top-left corner is `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, height: usize, width: usize) -> Result<GrayImage> {
        if height == 0 || width == 0 || r0 + height > self.rows || c0 + width > self.cols {
            return shape_err(format!("crop {height}x{width} at ({r0},{c0}) outside {}x{}", self.rows, self.cols));
        }
        let mut data = Vec::with_capacity(height * width);
        for r in r0..r0 + height {
            data.extend_from_slice(&self.data[r * self.cols + c0..r * self.cols + c0 + width]);
        }
        Ok(GrayImage { rows: height, cols: width, data })
    }

    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3::from_vec(1, self.rows, self.cols, self.data.clone()).expect("image dims are valid")
    }
}

/// An image tagged with the user it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub user: String,
    pub image: GrayImage,
}

/// Parses an 8-bit binary PGM (`P5`).
///
/// Header grammar: `P5`, then width, height and maxval as ASCII decimals,
/// separated by whitespace, with `#` comments running to end of line
/// allowed before each number. Exactly one whitespace byte follows maxval,
/// then `width * height` raster bytes, rows top to bottom. `maxval` must be
/// in `1..=255`; pixels map to `value / maxval`.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let err = |m: &str| Error::Parse(format!("pgm: {m}"));
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(err("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(err("truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(err("expected a decimal number in header"));
        }
        *field =
            std::str::from_utf8(&bytes[start..pos]).unwrap().parse().map_err(|_| err("header number out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err("missing whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(err("zero image dimension"));
    }
    if !(1..=255).contains(&maxval) {
        return Err(err("only 8-bit maxval (1..=255) is supported"));
    }
    let n = width.checked_mul(height).ok_or_else(|| err("dimensions overflow"))?;
    let raster = &bytes[pos..];
    if raster.len() < n {
        return Err(err(&format!("truncated raster: {} of {n} bytes", raster.len())));
    }
    if raster.len() > n {
        return Err(err("trailing bytes after raster"));
    }
    let scale = maxval as f64;
    GrayImage::new(height, width, raster.iter().map(|&b| b as f64 / scale).collect())
}

/// Writes `P5\n<width> <height>\n255\n` followed by the raster, each pixel
/// clamped to `[0, 1]` and rounded to the nearest of 256 levels.
pub fn write_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.cols, image.rows).into_bytes();
    out.extend(image.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    parse_pgm(&fs::read(path)?).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_image(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_pgm(image))?;
    Ok(())
}

/// Reads `<root>/<user_id>/<sample>.pgm`. Users and samples come back in
/// lexicographic order; non-PGM files are ignored.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<LabeledImage>> {
    let mut users: Vec<_> = fs::read_dir(root)?.filter_map(|e| e.ok()).filter(|e| e.path().is_dir()).collect();
    users.sort_by_key(|e| e.file_name());
    let mut out = Vec::new();
    for u in users {
        let user = u.file_name().to_string_lossy().into_owned();
        validate_user_id(&user)?;
        let mut files: Vec<_> = fs::read_dir(u.path())?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
            .collect();
        files.sort();
        for f in files {
            out.push(LabeledImage { user: user.clone(), image: load_image(&f)? });
        }
    }
    Ok(out)
}

/// Writes samples as `<root>/<user>/<nnnn>.pgm`, numbering each user's
/// samples from zero in the given order.
pub fn save_dataset(samples: &[LabeledImage], root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    let mut counts = std::collections::BTreeMap::<&str, usize>::new();
    for s in samples {
        validate_user_id(&s.user)?;
        let dir = root.join(&s.user);
        fs::create_dir_all(&dir)?;
        let n = counts.entry(&s.user).or_insert(0);
        save_image(&s.image, dir.join(format!("{:04}.pgm", *n)))?;
        *n += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_by_two() {
        let mut f = b"P5\n2 2\n255\n".to_vec();
        f.extend_from_slice(&[0, 85, 170, 255]);
        let img = parse_pgm(&f).unwrap();
        let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in img.pixels().iter().zip(want) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn header_comments_and_maxval() {
        let mut f = b"P5 # comment\n3 # w\n1\n# max\n15\n".to_vec();
        f.extend_from_slice(&[0, 15, 5]);
        let img = parse_pgm(&f).unwrap();
        assert_eq!((img.rows(), img.cols()), (1, 3));
        assert_eq!(img.pixels(), &[0.0, 1.0, 1.0 / 3.0]);
    }

    #[test]
    fn malformed_files_rejected() {
        assert!(parse_pgm(b"P2\n1 1\n255\n\x00").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x00\x01\x02").is_err());
        assert!(parse_pgm(b"P5\n2 2\n").is_err());
        assert!(parse_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(parse_pgm(b"P5\n0 1\n255\n").is_err());
        assert!(parse_pgm(b"P5\n1 1\n255\n\x00\x00").is_err());
        assert!(parse_pgm(b"P5\nx 1\n255\n\x00").is_err());
    }

    #[test]
    fn write_then_parse_within_quantization() {
        let img = GrayImage::from_fn(5, 7, |r, c| ((r * 7 + c) as f64 * 0.173).fract()).unwrap();
        let back = parse_pgm(&write_pgm(&img)).unwrap();
        assert_eq!((back.rows(), back.cols()), (5, 7));
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn crop_bounds() {
        let img = GrayImage::from_fn(4, 4, |r, c| (r * 4 + c) as f64).unwrap();
        let c = img.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.pixels(), &[6.0, 7.0, 10.0, 11.0]);
        assert!(img.crop(3, 3, 2, 1).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(GrayImage::new(1, 1, vec![f64::NAN]).is_err());
    }
}
