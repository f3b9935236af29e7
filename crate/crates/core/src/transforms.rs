//! Orthonormal 2-D Haar wavelets, image sparsification and PGM files.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayViewMut1};

use crate::error::{Error, Result};
use crate::linmap::LinearMap;
use crate::recovery::hard_threshold;
use crate::scalar::Real;

fn check_square_pow2<T>(a: &Array2<T>) -> Result<usize> {
    let (h, w) = a.dim();
    if h != w || w == 0 || !w.is_power_of_two() {
        return Err(Error::BadDimensions(format!(
            "expected a square image with power-of-two side, got {h}x{w}"
        )));
    }
    Ok(w)
}

/// One analysis step on the first `len` entries: averages then details.
fn haar_step<T: Real>(mut v: ArrayViewMut1<T>, len: usize, buf: &mut Vec<T>) {
    let half = len / 2;
    let r = T::FRAC_1_SQRT_2();
    buf.clear();
    buf.extend((0..half).map(|i| (v[2 * i] + v[2 * i + 1]) * r));
    buf.extend((0..half).map(|i| (v[2 * i] - v[2 * i + 1]) * r));
    for (i, &b) in buf.iter().enumerate() {
        v[i] = b;
    }
}

fn haar_step_inverse<T: Real>(mut v: ArrayViewMut1<T>, len: usize, buf: &mut Vec<T>) {
    let half = len / 2;
    let r = T::FRAC_1_SQRT_2();
    buf.clear();
    for i in 0..half {
        let (a, d) = (v[i], v[half + i]);
        buf.push((a + d) * r);
        buf.push((a - d) * r);
    }
    for (i, &b) in buf.iter().enumerate() {
        v[i] = b;
    }
}

/// Full-depth orthonormal 2-D Haar analysis (Mallat pyramid: rows then
/// columns of the remaining low-pass square, down to `1x1`).
pub fn haar2d_forward<T: Real>(image: &Array2<T>) -> Result<Array2<T>> {
    let w = check_square_pow2(image)?;
    let mut c = image.clone();
    let mut buf = Vec::with_capacity(w);
    let mut len = w;
    while len > 1 {
        for i in 0..len {
            haar_step(c.slice_mut(s![i, ..]), len, &mut buf);
        }
        for j in 0..len {
            haar_step(c.slice_mut(s![.., j]), len, &mut buf);
        }
        len /= 2;
    }
    Ok(c)
}

pub fn haar2d_inverse<T: Real>(coeffs: &Array2<T>) -> Result<Array2<T>> {
    let w = check_square_pow2(coeffs)?;
    let mut img = coeffs.clone();
    let mut buf = Vec::with_capacity(w);
    let mut len = 2;
    while len <= w {
        for j in 0..len {
            haar_step_inverse(img.slice_mut(s![.., j]), len, &mut buf);
        }
        for i in 0..len {
            haar_step_inverse(img.slice_mut(s![i, ..]), len, &mut buf);
        }
        len *= 2;
    }
    Ok(img)
}

/// A pixel-domain map precomposed with Haar synthesis, so it acts on
/// row-major flattened `side x side` coefficient arrays.
#[derive(Debug, Clone)]
pub struct HaarSynthesisMap<M> {
    pub inner: M,
    side: usize,
}

impl<M> HaarSynthesisMap<M> {
    pub fn new<T: Real>(inner: M) -> Result<Self>
    where
        M: LinearMap<T>,
    {
        let n = inner.ncols();
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n || !side.is_power_of_two() {
            return Err(Error::BadDimensions(format!("{n} pixels is not a power-of-two square")));
        }
        Ok(HaarSynthesisMap { inner, side })
    }

    pub fn side(&self) -> usize {
        self.side
    }
}

fn as_square<T: Real>(v: &[T], side: usize) -> Array2<T> {
    Array2::from_shape_vec((side, side), v.to_vec()).expect("square shape")
}

impl<T: Real, M: LinearMap<T>> LinearMap<T> for HaarSynthesisMap<M> {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    fn ncols(&self) -> usize {
        self.side * self.side
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        let img = haar2d_inverse(&as_square(x, self.side)).expect("validated side");
        self.inner.apply(img.as_slice().expect("standard layout"))
    }

    fn adjoint(&self, y: &[T]) -> Vec<T> {
        // Orthonormal, so the adjoint of synthesis is analysis.
        let back = self.inner.adjoint(y);
        haar2d_forward(&as_square(&back, self.side))
            .expect("validated side")
            .into_raw_vec_and_offset()
            .0
    }
}

/// Peak signal-to-noise ratio in dB for images with the given peak value;
/// `+inf` for identical images.
pub fn psnr<T: Real>(reference: &Array2<T>, test: &Array2<T>, peak: f64) -> f64 {
    let mse = reference
        .iter()
        .zip(test.iter())
        .map(|(&a, &b)| (a - b).as_f64().powi(2))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sparsified<T> {
    /// Haar coefficients with all but the `s` largest zeroed.
    pub coeffs: Array2<T>,
    /// The image synthesized from `coeffs`.
    pub approx: Array2<T>,
    /// PSNR of `approx` against the input (`+inf` when lossless).
    pub psnr: f64,
}

/// Best `s`-term Haar approximation of an image with pixel values on
/// `[0, peak]`.
pub fn sparsify_image<T: Real>(image: &Array2<T>, s: usize, peak: f64) -> Result<Sparsified<T>> {
    let w = check_square_pow2(image)?;
    let full = haar2d_forward(image)?;
    let flat: Vec<T> = full.iter().copied().collect();
    let kept = hard_threshold(&flat, s)?;
    let coeffs = Array2::from_shape_vec((w, w), kept).expect("square shape");
    let approx = haar2d_inverse(&coeffs)?;
    let psnr = if s >= w * w { f64::INFINITY } else { psnr(image, &approx, peak) };
    Ok(Sparsified { coeffs, approx, psnr })
}

/// Deterministic piecewise-smooth test image on `[0, 1]`: a shaded
/// background with a disc, a bar and a small checkerboard patch.
pub fn test_pattern<T: Real>(w: usize) -> Array2<T> {
    let wf = w as f64;
    Array2::from_shape_fn((w, w), |(i, j)| {
        let (y, x) = (i as f64 / wf, j as f64 / wf);
        let mut v = 0.25 + 0.15 * x + 0.1 * y;
        if (x - 0.62).powi(2) + (y - 0.38).powi(2) < 0.05 {
            v = 0.85;
        }
        if (0.15..0.35).contains(&x) && (0.55..0.9).contains(&y) {
            v = 0.1;
        }
        if (0.7..0.9).contains(&x) && (0.7..0.9).contains(&y) && ((i / 4 + j / 4) % 2 == 0) {
            v = 0.6;
        }
        T::lit(v)
    })
}

fn next_token<R: Read>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            // Comment to end of line.
            while r.read(&mut byte)? == 1 && byte[0] != b'\n' {}
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c as char);
    }
    if tok.is_empty() {
        return Err(Error::Parse("truncated PGM header".into()));
    }
    Ok(tok)
}

/// Reads a binary (P5) PGM and scales pixels to `[0, 1]`.
pub fn read_pgm<T: Real, R: Read>(mut r: R) -> Result<Array2<T>> {
    if next_token(&mut r)? != "P5" {
        return Err(Error::Parse("only binary PGM (P5) is supported".into()));
    }
    let mut num = |what: &str| -> Result<usize> {
        next_token(&mut r)?
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad PGM {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse(format!("bad PGM maxval {maxval}")));
    }
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let mut raw = vec![0u8; width * height * bytes_per];
    r.read_exact(&mut raw)?;
    let scale = 1.0 / maxval as f64;
    let pixels: Vec<T> = if bytes_per == 1 {
        raw.iter().map(|&b| T::lit(b as f64 * scale)).collect()
    } else {
        raw.chunks_exact(2)
            .map(|c| T::lit(u16::from_be_bytes([c[0], c[1]]) as f64 * scale))
            .collect()
    };
    Ok(Array2::from_shape_vec((height, width), pixels).expect("pixel count"))
}

/// Writes an 8-bit P5 PGM from pixels on `[0, 1]` (clamped).
pub fn write_pgm<T: Real, W: Write>(image: &Array2<T>, mut w: W) -> Result<()> {
    let (h, wd) = image.dim();
    write!(w, "P5\n{wd} {h}\n255\n")?;
    let bytes: Vec<u8> = image
        .iter()
        .map(|&v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn load_pgm<T: Real>(path: &Path) -> Result<Array2<T>> {
    read_pgm(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn save_pgm<T: Real>(image: &Array2<T>, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_pgm(image, &mut f)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_image_has_one_coefficient() {
        let c = 0.37;
        let img = Array2::<f64>::from_elem((16, 16), c);
        let coeffs = haar2d_forward(&img).unwrap();
        assert!((coeffs[[0, 0]] - c * 16.0).abs() < 1e-12);
        let rest: f64 = coeffs.iter().skip(1).map(|v| v.abs()).sum();
        assert!(rest < 1e-12);
    }

    #[test]
    fn round_trip_and_parseval() {
        let img = test_pattern::<f64>(64);
        let coeffs = haar2d_forward(&img).unwrap();
        let back = haar2d_inverse(&coeffs).unwrap();
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let e1: f64 = img.iter().map(|v| v * v).sum::<f64>().sqrt();
        let e2: f64 = coeffs.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((e1 - e2).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_by_hand() {
        let img = ndarray::array![[1.0_f64, 2.0], [3.0, 4.0]];
        let c = haar2d_forward(&img).unwrap();
        // Orthonormal: LL = sum/2, then the three detail combinations.
        let expected = ndarray::array![[5.0, -1.0], [-2.0, 0.0]];
        for (a, b) in c.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(
            haar2d_forward(&Array2::<f64>::zeros((6, 6))),
            Err(Error::BadDimensions(_))
        ));
        assert!(haar2d_forward(&Array2::<f64>::zeros((8, 4))).is_err());
    }

    #[test]
    fn sparsify_extremes() {
        let img = test_pattern::<f64>(32);
        let full = sparsify_image(&img, 32 * 32, 1.0).unwrap();
        assert_eq!(full.psnr, f64::INFINITY);
        let none = sparsify_image(&img, 0, 1.0).unwrap();
        assert!(none.approx.iter().all(|&v| v == 0.0));
        assert!(matches!(sparsify_image(&img, 32 * 32 + 1, 1.0), Err(Error::InvalidSparsity { .. })));
    }

    #[test]
    fn s_term_target_has_exactly_s_coefficients() {
        let img = test_pattern::<f64>(64);
        let sp = sparsify_image(&img, 256, 1.0).unwrap();
        assert!(sp.coeffs.iter().filter(|v| **v != 0.0).count() <= 256);
        assert!(sp.psnr.is_finite() && sp.psnr > 20.0);
    }

    #[test]
    fn psnr_is_monotone_in_s() {
        let img = test_pattern::<f64>(32);
        let mut last = f64::NEG_INFINITY;
        for s in [4, 16, 64, 128, 256, 512, 1023] {
            let p = sparsify_image(&img, s, 1.0).unwrap().psnr;
            assert!(p >= last, "s = {s}");
            last = p;
        }
    }

    #[test]
    fn pgm_round_trip() {
        let img = test_pattern::<f64>(16);
        let mut bytes = Vec::new();
        write_pgm(&img, &mut bytes).unwrap();
        assert!(bytes.starts_with(b"P5\n16 16\n255\n"));
        let back: Array2<f64> = read_pgm(&bytes[..]).unwrap();
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn pgm_header_with_comment_and_16_bit() {
        let mut bytes = b"P5\n# made by hand\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff, 0x00, 0x00]);
        let img: Array2<f64> = read_pgm(&bytes[..]).unwrap();
        assert_eq!(img, ndarray::array![[1.0, 0.0]]);
        assert!(read_pgm::<f64, _>(&b"P2\n1 1\n255\n0"[..]).is_err());
    }

    #[test]
    fn synthesis_map_adjoint() {
        use crate::scalar::dot;
        let inner = Array2::from_shape_fn((10, 64), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let map = HaarSynthesisMap::new(inner).unwrap();
        let x: Vec<f64> = (0..64).map(|j| (j as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..10).map(|i| (i as f64 * 1.3).cos()).collect();
        let lhs = dot(&map.apply(&x), &y);
        let rhs = dot(&x, &map.adjoint(&y));
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        assert!(HaarSynthesisMap::new(Array2::<f64>::zeros((3, 48))).is_err());
    }

    proptest! {
        #[test]
        fn haar_is_orthonormal(values in proptest::collection::vec(-10.0f64..10.0, 64)) {
            let img = Array2::from_shape_vec((8, 8), values).unwrap();
            let c = haar2d_forward(&img).unwrap();
            let back = haar2d_inverse(&c).unwrap();
            let e1: f64 = img.iter().map(|v| v * v).sum();
            let e2: f64 = c.iter().map(|v| v * v).sum();
            prop_assert!((e1 - e2).abs() < 1e-9 * (1.0 + e1));
            for (a, b) in img.iter().zip(back.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
