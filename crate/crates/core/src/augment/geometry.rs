use rand::Rng;

use super::params::AffineParams;
use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// Placement of the scaled content inside a square letterboxed canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Letterbox {
    pub content_width: u32,
    pub content_height: u32,
    pub left: u32,
    pub top: u32,
}

impl Letterbox {
    pub fn compute(width: u32, height: u32, target: u32) -> Letterbox {
        let scaled = |short: u32, long: u32| -> u32 {
            ((f64::from(short) * f64::from(target) / f64::from(long)).round() as u32).clamp(1, target)
        };
        let (cw, ch) = if width >= height {
            (target, scaled(height, width))
        } else {
            (scaled(width, height), target)
        };
        Letterbox {
            content_width: cw,
            content_height: ch,
            left: (target - cw) / 2,
            top: (target - ch) / 2,
        }
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Bilinear sample with edge clamping.
fn sample_clamped(img: &RasterImage, x: f64, y: f64) -> [f64; 3] {
    let maxx = f64::from(img.width() - 1);
    let maxy = f64::from(img.height() - 1);
    let x = x.clamp(0.0, maxx);
    let y = y.clamp(0.0, maxy);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as u32, y0 as u32);
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let (a, b, c, d) = (
        img.pixel(x0, y0),
        img.pixel(x1, y0),
        img.pixel(x0, y1),
        img.pixel(x1, y1),
    );
    let mut out = [0.0; 3];
    for ch in 0..3 {
        let top = f64::from(a[ch]) * (1.0 - fx) + f64::from(b[ch]) * fx;
        let bot = f64::from(c[ch]) * (1.0 - fx) + f64::from(d[ch]) * fx;
        out[ch] = top * (1.0 - fy) + bot * fy;
    }
    out
}

/// Bilinear sample where everything outside the raster is black.
fn sample_black(img: &RasterImage, x: f64, y: f64) -> [f64; 3] {
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    let (w, h) = (i64::from(img.width()), i64::from(img.height()));
    if x0f < -1.0 || y0f < -1.0 || x0f >= w as f64 || y0f >= h as f64 {
        return [0.0; 3];
    }
    let (x0, y0) = (x0f as i64, y0f as i64);
    let fetch = |xx: i64, yy: i64| -> [f64; 3] {
        if xx < 0 || yy < 0 || xx >= w || yy >= h {
            [0.0; 3]
        } else {
            img.pixel(xx as u32, yy as u32).map(f64::from)
        }
    };
    let (a, b, c, d) = (
        fetch(x0, y0),
        fetch(x0 + 1, y0),
        fetch(x0, y0 + 1),
        fetch(x0 + 1, y0 + 1),
    );
    let mut out = [0.0; 3];
    for ch in 0..3 {
        let top = a[ch] * (1.0 - fx) + b[ch] * fx;
        let bot = c[ch] * (1.0 - fx) + d[ch] * fx;
        out[ch] = top * (1.0 - fy) + bot * fy;
    }
    out
}

/// Bilinear resize to exactly `w x h` (pixel-centre aligned).
fn resize_exact(img: &RasterImage, w: u32, h: u32) -> RasterImage {
    if w == img.width() && h == img.height() {
        return img.clone();
    }
    let sx = f64::from(img.width()) / f64::from(w);
    let sy = f64::from(img.height()) / f64::from(h);
    let mut out = RasterImage::new(w, h).expect("non-zero target");
    for y in 0..h {
        let src_y = (f64::from(y) + 0.5) * sy - 0.5;
        for x in 0..w {
            let src_x = (f64::from(x) + 0.5) * sx - 0.5;
            out.put_pixel(x, y, sample_clamped(img, src_x, src_y).map(to_u8));
        }
    }
    out
}

/// Scales the longest side to `target` and centres the result on a black
/// `target x target` canvas; odd padding puts the extra row/column on the
/// bottom/right.
pub fn resize_preserve_aspect(img: &RasterImage, target: u32) -> Result<RasterImage> {
    if target == 0 {
        return Err(Error::InvalidArgument("resize target must be >= 1".into()));
    }
    let lb = Letterbox::compute(img.width(), img.height(), target);
    let content = resize_exact(img, lb.content_width, lb.content_height);
    if lb.content_width == target && lb.content_height == target {
        return Ok(content);
    }
    let mut out = RasterImage::new(target, target)?;
    for y in 0..lb.content_height {
        for x in 0..lb.content_width {
            out.put_pixel(x + lb.left, y + lb.top, content.pixel(x, y));
        }
    }
    Ok(out)
}

fn flipped(img: &RasterImage, hflip: bool, vflip: bool) -> RasterImage {
    if !hflip && !vflip {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let mut out = RasterImage::new(w, h).expect("same dimensions");
    for y in 0..h {
        let sy = if vflip { h - 1 - y } else { y };
        for x in 0..w {
            let sx = if hflip { w - 1 - x } else { x };
            out.put_pixel(x, y, img.pixel(sx, sy));
        }
    }
    out
}

/// Applies flips, then shear, then zoom about the centre, then shift.
/// Pixels mapped from outside the source are black.
pub fn apply_affine(img: &RasterImage, p: &AffineParams) -> RasterImage {
    let base = flipped(img, p.hflip, p.vflip);
    if p.shear_deg == 0.0 && p.zoom == 1.0 && p.shift_x == 0.0 && p.shift_y == 0.0 {
        return base;
    }
    let (w, h) = (base.width(), base.height());
    let cx = (f64::from(w) - 1.0) / 2.0;
    let cy = (f64::from(h) - 1.0) / 2.0;
    let tan = p.shear_deg.to_radians().tan();
    let mut out = RasterImage::new(w, h).expect("same dimensions");
    for y in 0..h {
        for x in 0..w {
            // invert shift, zoom and shear in turn
            let ux = (f64::from(x) - cx - p.shift_x) / p.zoom;
            let uy = (f64::from(y) - cy - p.shift_y) / p.zoom;
            let sx = ux - tan * uy + cx;
            let sy = uy + cy;
            out.put_pixel(x, y, sample_black(&base, sx, sy).map(to_u8));
        }
    }
    out
}

/// Crops a `size x size` window at a uniformly drawn offset.
pub fn random_crop<R: Rng + ?Sized>(img: &RasterImage, size: u32, rng: &mut R) -> Result<RasterImage> {
    check_crop(img, size)?;
    let x0 = rng.random_range(0..=img.width() - size);
    let y0 = rng.random_range(0..=img.height() - size);
    img.crop(x0, y0, size, size)
}

/// Deterministic centre crop, used at inference time.
pub fn center_crop(img: &RasterImage, size: u32) -> Result<RasterImage> {
    check_crop(img, size)?;
    img.crop((img.width() - size) / 2, (img.height() - size) / 2, size, size)
}

fn check_crop(img: &RasterImage, size: u32) -> Result<()> {
    if size == 0 || img.width() < size || img.height() < size {
        return Err(Error::InvalidArgument(format!(
            "cannot crop {size}x{size} from {}x{} image",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}
