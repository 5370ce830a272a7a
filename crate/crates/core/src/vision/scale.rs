//! Gaussian scale space and difference-of-Gaussian pyramid.

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Real-valued raster, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_image(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.pixels().iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Edge-replicating access.
    #[inline]
    pub fn clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.at(x, y)
    }

    /// Central-difference gradient at an integer pixel.
    pub fn gradient(&self, x: usize, y: usize) -> (f64, f64) {
        let (x, y) = (x as isize, y as isize);
        (
            0.5 * (self.clamped(x + 1, y) - self.clamped(x - 1, y)),
            0.5 * (self.clamped(x, y + 1) - self.clamped(x, y - 1)),
        )
    }

    /// 2x2 box average; a trailing odd row or column is dropped.
    pub fn half(&self) -> Self {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = Self::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] = 0.25
                    * (self.at(2 * x, 2 * y)
                        + self.at(2 * x + 1, 2 * y)
                        + self.at(2 * x, 2 * y + 1)
                        + self.at(2 * x + 1, 2 * y + 1));
            }
        }
        out
    }

    fn sub(&self, other: &Plane) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }
}

pub fn kernel_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Unnormalized 1D Gaussian samples `exp(-x^2 / 2s^2) / (sqrt(2 pi) s)` on
/// `-r..=r`; the 2D kernel is the outer product.
pub fn raw_kernel_1d(sigma: f64) -> Vec<f64> {
    let r = kernel_radius(sigma) as isize;
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
    (-r..=r)
        .map(|x| norm * (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

pub fn kernel_1d(sigma: f64) -> Vec<f64> {
    let mut k = raw_kernel_1d(sigma);
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with edge replication.
pub fn blur(p: &Plane, sigma: f64) -> Result<Plane> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let k = kernel_1d(sigma);
    let support = k.len();
    if p.width < support || p.height < support {
        return Err(Error::ImageTooSmall {
            width: p.width,
            height: p.height,
            support,
        });
    }
    let r = (support / 2) as isize;
    let mut tmp = Plane::new(p.width, p.height);
    for y in 0..p.height {
        for x in 0..p.width {
            let mut acc = 0.0;
            for (i, w) in k.iter().enumerate() {
                acc += w * p.clamped(x as isize + i as isize - r, y as isize);
            }
            tmp.data[y * p.width + x] = acc;
        }
    }
    let mut out = Plane::new(p.width, p.height);
    for y in 0..p.height {
        for x in 0..p.width {
            let mut acc = 0.0;
            for (i, w) in k.iter().enumerate() {
                acc += w * tmp.clamped(x as isize, y as isize + i as isize - r);
            }
            out.data[y * p.width + x] = acc;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Octave {
    /// `scales + 3` Gaussian levels.
    pub gaussians: Vec<Plane>,
    /// Differences of consecutive Gaussian levels.
    pub dogs: Vec<Plane>,
}

#[derive(Debug, Clone)]
pub struct Pyramid {
    pub octaves: Vec<Octave>,
    pub sigma0: f64,
    pub scales: usize,
}

impl Pyramid {
    /// Blur of Gaussian level `i` relative to its own octave's pixel grid.
    pub fn level_sigma(&self, i: usize) -> f64 {
        self.sigma0 * 2f64.powf(i as f64 / self.scales as f64)
    }
}

fn build_octave(base: Plane, sigma0: f64, scales: usize) -> Result<Octave> {
    let mut gaussians = vec![base];
    for i in 1..scales + 3 {
        let s = sigma0 * 2f64.powf(i as f64 / scales as f64);
        let inc = (s * s - sigma0 * sigma0).sqrt();
        gaussians.push(blur(&gaussians[0], inc)?);
    }
    let dogs = gaussians.windows(2).map(|w| w[1].sub(&w[0])).collect();
    Ok(Octave { gaussians, dogs })
}

/// Gaussian pyramid of `octaves` octaves, each halving the previous one.
/// Octaves whose raster would be smaller than the widest kernel are not
/// built; an input too small for the first octave is an error.
pub fn scale_space(img: &Plane, sigma0: f64, octaves: usize, scales: usize) -> Result<Pyramid> {
    if img.width == 0 || img.height == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    if !(sigma0 > 0.0) || octaves == 0 || scales == 0 {
        return Err(Error::InvalidArgument(
            "scale space needs sigma0 > 0 and nonzero counts".into(),
        ));
    }
    let top = sigma0 * 2f64.powf((scales + 2) as f64 / scales as f64);
    let widest = 2 * kernel_radius((top * top - sigma0 * sigma0).sqrt()) + 1;
    let mut out = Vec::with_capacity(octaves);
    let mut base = blur(img, sigma0)?;
    for o in 0..octaves {
        if o > 0 {
            base = out
                .last()
                .map(|oc: &Octave| oc.gaussians[scales].half())
                .expect("previous octave");
            if base.width < widest || base.height < widest {
                break;
            }
        }
        out.push(build_octave(base.clone(), sigma0, scales)?);
    }
    Ok(Pyramid {
        octaves: out,
        sigma0,
        scales,
    })
}
