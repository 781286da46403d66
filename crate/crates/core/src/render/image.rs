//! Binary PPM/PGM output and image metrics.

use std::io::Write;

use crate::error::{Error, Result};

/// `round(clamp(x, 0, 1) * 255)`; NaN maps to 0.
pub fn to_byte(x: f64) -> u8 {
    if x.is_nan() {
        0
    } else {
        (x.clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

/// Binary RGB pixmap (`P6`, max value 255), `rgb` row-major with three
/// values per pixel.
pub fn write_ppm<W: Write>(w: &mut W, width: usize, height: usize, rgb: &[f64]) -> Result<()> {
    if rgb.len() != 3 * width * height {
        return Err(Error::shape("write_ppm", &[rgb.len()], &[height, width, 3]));
    }
    write!(w, "P6\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = rgb.iter().map(|&x| to_byte(x)).collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Binary graymap (`P5`, max value 255).
pub fn write_pgm<W: Write>(w: &mut W, width: usize, height: usize, gray: &[f64]) -> Result<()> {
    if gray.len() != width * height {
        return Err(Error::shape("write_pgm", &[gray.len()], &[height, width]));
    }
    write!(w, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = gray.iter().map(|&x| to_byte(x)).collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("psnr", &[a.len()], &[b.len()]));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(-10.0 * mse.log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_bytes() {
        let mut buf = Vec::new();
        write_ppm(&mut buf, 2, 1, &[0.0, 0.5, 1.0, -1.0, 2.0, 0.2]).unwrap();
        assert_eq!(&buf[..11], b"P6\n2 1\n255\n");
        assert_eq!(&buf[11..], &[0, 128, 255, 0, 255, 51]);
    }

    #[test]
    fn pgm_bytes() {
        let mut buf = Vec::new();
        write_pgm(&mut buf, 1, 2, &[0.25, f64::NAN]).unwrap();
        assert_eq!(buf, b"P5\n1 2\n255\n\x40\x00");
        assert!(write_pgm(&mut buf, 2, 2, &[0.0]).is_err());
    }

    #[test]
    fn psnr_of_uniform_error() {
        let p = psnr(&[0.1; 4], &[0.2; 4]).unwrap();
        assert!((p - 20.0).abs() < 1e-9);
        assert!(psnr(&[0.3], &[0.3]).unwrap().is_infinite());
    }
}
