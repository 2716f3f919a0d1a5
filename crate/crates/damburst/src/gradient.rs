//! Gradient operators: the Haar box-difference operator driven by an integral
//! image, and a normalized Sobel baseline for comparison.

use crate::error::{Error, Result};
use crate::raster::{integral, IntegralField, Rect, ScalarField};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Side length of the Haar sampling boxes. Restricted to the supported odd
/// widths so every width has tuned edge thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoxWidth(u32);

impl BoxWidth {
    pub const SUPPORTED: [u32; 6] = [5, 7, 9, 11, 13, 15];

    pub fn new(width: u32) -> Result<Self> {
        if Self::SUPPORTED.contains(&width) {
            Ok(Self(width))
        } else {
            Err(Error::InvalidParameter(format!(
                "box width must be one of {:?}, got {width}",
                Self::SUPPORTED
            )))
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    fn half(self) -> i64 {
        (self.0 as i64 - 1) / 2
    }
}

/// Per-pixel gradient planes. `magnitude` is the L2 norm of (gx, gy);
/// `gy` grows downward, matching row order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
    magnitude: Vec<f64>,
}

impl GradientField {
    /// Assembles a field from raw component planes, deriving the magnitude.
    /// Lets suppression and later stages run on gradients from any operator.
    pub fn from_components(
        width: usize,
        height: usize,
        gx: Vec<f64>,
        gy: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension);
        }
        if gx.len() != width * height || gy.len() != gx.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values per plane, got {} and {}",
                width * height,
                gx.len(),
                gy.len()
            )));
        }
        if gx.iter().chain(gy.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "non-finite gradient component".into(),
            ));
        }
        let magnitude = gx
            .iter()
            .zip(&gy)
            .map(|(a, b)| (a * a + b * b).sqrt())
            .collect();
        Ok(Self {
            width,
            height,
            gx,
            gy,
            magnitude,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn gx(&self) -> &[f64] {
        &self.gx
    }

    pub fn gy(&self) -> &[f64] {
        &self.gy
    }

    pub fn magnitude(&self) -> &[f64] {
        &self.magnitude
    }

    pub fn gx_at(&self, x: usize, y: usize) -> f64 {
        self.gx[y * self.width + x]
    }

    pub fn gy_at(&self, x: usize, y: usize) -> f64 {
        self.gy[y * self.width + x]
    }

    pub fn magnitude_at(&self, x: usize, y: usize) -> f64 {
        self.magnitude[y * self.width + x]
    }
}

/// Fills one output row of the Haar operator.
///
/// Each component is the mean over a w x w box ahead of the pixel minus the
/// mean over the mirror box behind it; the pixel row/column itself is skipped.
/// Boxes are clamped to the image, and a component whose boxes do not both
/// intersect the image is 0, so a constant image maps to zero everywhere.
fn haar_row(
    integ: &IntegralField,
    width: BoxWidth,
    y: usize,
    gx_row: &mut [f64],
    gy_row: &mut [f64],
    mag_row: &mut [f64],
) {
    let w = width.0 as i64;
    let half = width.half();
    let yy = y as i64;
    for x in 0..gx_row.len() {
        let xx = x as i64;
        let right = integ.box_mean_clamped(Rect::new(xx + 1, xx + w, yy - half, yy + half));
        let left = integ.box_mean_clamped(Rect::new(xx - w, xx - 1, yy - half, yy + half));
        let gx = match (left, right) {
            (Some(l), Some(r)) => r - l,
            _ => 0.0,
        };
        let below = integ.box_mean_clamped(Rect::new(xx - half, xx + half, yy + 1, yy + w));
        let above = integ.box_mean_clamped(Rect::new(xx - half, xx + half, yy - w, yy - 1));
        let gy = match (above, below) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        };
        gx_row[x] = gx;
        gy_row[x] = gy;
        mag_row[x] = (gx * gx + gy * gy).sqrt();
    }
}

/// Haar box-difference gradient of `field`.
///
/// Runs row-parallel when the `parallel` feature is on; output is identical
/// to [`haar_gradient_seq`] either way.
pub fn haar_gradient(field: &ScalarField, width: BoxWidth) -> GradientField {
    #[cfg(feature = "parallel")]
    {
        let (w, h) = (field.width(), field.height());
        let integ = integral(field);
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        let mut mag = vec![0.0; w * h];
        gx.par_chunks_mut(w)
            .zip(gy.par_chunks_mut(w))
            .zip(mag.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, ((gx_row, gy_row), mag_row))| {
                haar_row(&integ, width, y, gx_row, gy_row, mag_row);
            });
        GradientField {
            width: w,
            height: h,
            gx,
            gy,
            magnitude: mag,
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        haar_gradient_seq(field, width)
    }
}

/// Single-threaded Haar gradient; the reference for the parallel path.
pub fn haar_gradient_seq(field: &ScalarField, width: BoxWidth) -> GradientField {
    let (w, h) = (field.width(), field.height());
    let integ = integral(field);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut mag = vec![0.0; w * h];
    for y in 0..h {
        let (gx_row, gy_row, mag_row) = (
            &mut gx[y * w..(y + 1) * w],
            &mut gy[y * w..(y + 1) * w],
            &mut mag[y * w..(y + 1) * w],
        );
        haar_row(&integ, width, y, gx_row, gy_row, mag_row);
    }
    GradientField {
        width: w,
        height: h,
        gx,
        gy,
        magnitude: mag,
    }
}

/// Clamped sample lookup with border replication.
#[inline]
fn sample(field: &ScalarField, x: i64, y: i64) -> f64 {
    let xc = x.clamp(0, field.width() as i64 - 1) as usize;
    let yc = y.clamp(0, field.height() as i64 - 1) as usize;
    field.get(xc, yc)
}

/// Fills one output row of the Sobel operator. The 3x3 kernels are divided
/// by 4 so an intensity step of height h reads back as a response of h.
fn sobel_row(
    field: &ScalarField,
    y: usize,
    gx_row: &mut [f64],
    gy_row: &mut [f64],
    mag_row: &mut [f64],
) {
    let yy = y as i64;
    for x in 0..gx_row.len() {
        let xx = x as i64;
        let s = |dx: i64, dy: i64| sample(field, xx + dx, yy + dy);
        let gx = ((s(1, -1) - s(-1, -1)) + 2.0 * (s(1, 0) - s(-1, 0)) + (s(1, 1) - s(-1, 1))) / 4.0;
        let gy = ((s(-1, 1) - s(-1, -1)) + 2.0 * (s(0, 1) - s(0, -1)) + (s(1, 1) - s(1, -1))) / 4.0;
        gx_row[x] = gx;
        gy_row[x] = gy;
        mag_row[x] = (gx * gx + gy * gy).sqrt();
    }
}

/// Normalized Sobel gradient with replicated borders.
///
/// Errors when the image is smaller than 3x3.
pub fn sobel_gradient(field: &ScalarField) -> Result<GradientField> {
    #[cfg(feature = "parallel")]
    {
        let (w, h) = (field.width(), field.height());
        check_sobel_size(w, h)?;
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        let mut mag = vec![0.0; w * h];
        gx.par_chunks_mut(w)
            .zip(gy.par_chunks_mut(w))
            .zip(mag.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, ((gx_row, gy_row), mag_row))| {
                sobel_row(field, y, gx_row, gy_row, mag_row);
            });
        Ok(GradientField {
            width: w,
            height: h,
            gx,
            gy,
            magnitude: mag,
        })
    }
    #[cfg(not(feature = "parallel"))]
    {
        sobel_gradient_seq(field)
    }
}

/// Single-threaded Sobel gradient; the reference for the parallel path.
pub fn sobel_gradient_seq(field: &ScalarField) -> Result<GradientField> {
    let (w, h) = (field.width(), field.height());
    check_sobel_size(w, h)?;
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut mag = vec![0.0; w * h];
    for y in 0..h {
        let (gx_row, gy_row, mag_row) = (
            &mut gx[y * w..(y + 1) * w],
            &mut gy[y * w..(y + 1) * w],
            &mut mag[y * w..(y + 1) * w],
        );
        sobel_row(field, y, gx_row, gy_row, mag_row);
    }
    Ok(GradientField {
        width: w,
        height: h,
        gx,
        gy,
        magnitude: mag,
    })
}

fn check_sobel_size(w: usize, h: usize) -> Result<()> {
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall(format!(
            "sobel needs at least 3x3, got {w}x{h}"
        )));
    }
    Ok(())
}
