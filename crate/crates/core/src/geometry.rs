//! Topology description functions for moving morphable components.
//!
//! Each component is a straight-skeleton bar with a quadratically varying
//! half-thickness. Its description function is positive inside the bar, zero on
//! its boundary and negative outside; the structure is the max-union of all
//! component functions.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, ParseError, Result};

/// Number of scalar parameters per component.
pub const PARAMS_PER_COMPONENT: usize = 7;

/// Default hyperelliptic exponent.
pub const DEFAULT_EXPONENT: u32 = 6;

/// Names of the per-component parameters, in flattening order.
pub const PARAM_NAMES: [&str; PARAMS_PER_COMPONENT] = ["x0", "y0", "L", "t1", "t2", "t3", "theta"];

/// Value of [`Component::level`] at the component center.
const LEVEL_CAP: f64 = 1e6;

const THICKNESS_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub x0: f64,
    pub y0: f64,
    /// Half-length of the skeleton.
    pub half_length: f64,
    /// Half-thickness at the left end, middle and right end of the skeleton.
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    /// Inclination of the skeleton, radians.
    pub theta: f64,
}

impl Component {
    pub fn from_params(p: &[f64]) -> Self {
        assert_eq!(p.len(), PARAMS_PER_COMPONENT);
        Self {
            x0: p[0],
            y0: p[1],
            half_length: p[2],
            t1: p[3],
            t2: p[4],
            t3: p[5],
            theta: p[6],
        }
    }

    pub fn params(&self) -> [f64; PARAMS_PER_COMPONENT] {
        [
            self.x0,
            self.y0,
            self.half_length,
            self.t1,
            self.t2,
            self.t3,
            self.theta,
        ]
    }

    /// Returns a copy with parameter `index` (flattening order) set to `value`.
    pub fn with_param(&self, index: usize, value: f64) -> Self {
        let mut p = self.params();
        p[index] = value;
        Self::from_params(&p)
    }

    /// Point expressed in the component frame: translated to the center and
    /// rotated by the inclination angle.
    pub fn local_coords(&self, point: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let dx = point.0 - self.x0;
        let dy = point.1 - self.y0;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Inverse of [`Component::local_coords`].
    pub fn global_coords(&self, local: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.x0 + c * local.0 - s * local.1, self.y0 + s * local.0 + c * local.1)
    }

    /// Quadratic half-thickness through (-L, t1), (0, t2), (L, t3).
    pub fn thickness(&self, x_local: f64) -> f64 {
        let l = self.half_length;
        self.t2
            + (self.t3 - self.t1) / (2.0 * l) * x_local
            + (self.t1 + self.t3 - 2.0 * self.t2) / (2.0 * l * l) * x_local * x_local
    }

    /// Minimum of the thickness profile over the skeleton `[-L, L]`.
    pub fn min_thickness(&self) -> f64 {
        let l = self.half_length;
        let a = (self.t1 + self.t3 - 2.0 * self.t2) / (2.0 * l * l);
        let b = (self.t3 - self.t1) / (2.0 * l);
        let mut m = self.t1.min(self.t3);
        if a > 0.0 {
            let vertex = -b / (2.0 * a);
            if vertex.abs() < l {
                m = m.min(self.thickness(vertex));
            }
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let fields = self.params();
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("component has a non-finite field".into()));
        }
        if self.half_length <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "half-length must be positive, got {}",
                self.half_length
            )));
        }
        if self.t1 <= 0.0 || self.t2 <= 0.0 || self.t3 <= 0.0 {
            return Err(Error::InvalidArgument("thicknesses must be positive".into()));
        }
        let m = self.min_thickness();
        if m <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "thickness profile dips to {m} inside the skeleton"
            )));
        }
        Ok(())
    }

    /// Topology description function with exponent `p`: `1 - (x'/L)^p - (y'/f(x'))^p`.
    pub fn phi(&self, point: (f64, f64), p: u32) -> f64 {
        let (xl, yl) = self.local_coords(point);
        let f = self.thickness(xl).max(THICKNESS_FLOOR);
        let p = p as i32;
        1.0 - (xl / self.half_length).powi(p) - (yl / f).powi(p)
    }

    /// Signed level with the same zero set and sign as [`Component::phi`],
    /// scaled to approximate the distance to the boundary near it:
    /// `(1 - R) / |grad R|` with `R = ((x'/L)^p + (y'/f)^p)^(2/p)`.
    /// Beyond the skeleton ends the thickness is frozen at its end value, so
    /// the level keeps growing in magnitude away from the tips instead of
    /// collapsing where the profile pinches. Grows without bound towards the
    /// component center.
    pub fn level(&self, point: (f64, f64), p: u32) -> f64 {
        let (xl, yl) = self.local_coords(point);
        let l = self.half_length;
        let xc = xl.clamp(-l, l);
        let raw = self.thickness(xc);
        let f = raw.max(THICKNESS_FLOOR);
        let df = if xc != xl || raw < THICKNESS_FLOOR {
            0.0
        } else {
            (self.t3 - self.t1) / (2.0 * l) + (self.t1 + self.t3 - 2.0 * self.t2) / (l * l) * xl
        };
        let pi = p as i32;
        let a = xl / l;
        let b = yl / f;
        let m = a.abs().max(b.abs());
        if m == 0.0 {
            return LEVEL_CAP;
        }
        // everything below is scaled by powers of m to stay finite
        let (an, bn) = (a / m, b / m);
        let s = (an.powi(pi) + bn.powi(pi)).powf(1.0 / p as f64);
        let gx = an.powi(pi - 1) / l - bn.powi(pi) * m * df / f;
        let gy = bn.powi(pi - 1) / f;
        let g = gx.hypot(gy);
        if g == 0.0 {
            return LEVEL_CAP;
        }
        let r = m * s;
        ((1.0 / m - r * s) * s.powi(pi - 2) / (2.0 * g)).min(LEVEL_CAP)
    }

    /// Central-difference derivative of [`Component::level`] with respect to
    /// parameter `index`.
    pub fn level_param_derivative(&self, point: (f64, f64), p: u32, index: usize, step: f64) -> f64 {
        let base = self.params()[index];
        let plus = self.with_param(index, base + step).level(point, p);
        let minus = self.with_param(index, base - step).level(point, p);
        (plus - minus) / (2.0 * step)
    }

    /// Central-difference derivative of [`Component::phi`] with respect to
    /// parameter `index`.
    pub fn phi_param_derivative(&self, point: (f64, f64), p: u32, index: usize, step: f64) -> f64 {
        let base = self.params()[index];
        let plus = self.with_param(index, base + step).phi(point, p);
        let minus = self.with_param(index, base - step).phi(point, p);
        (plus - minus) / (2.0 * step)
    }
}

/// Free-function form of [`Component::local_coords`].
pub fn local_coords(point: (f64, f64), c: &Component) -> (f64, f64) {
    c.local_coords(point)
}

pub fn thickness_profile(x_local: f64, c: &Component) -> f64 {
    c.thickness(x_local)
}

pub fn phi_component(point: (f64, f64), c: &Component, p: u32) -> f64 {
    c.phi(point, p)
}

/// Lower/upper box for one component's parameters, shared by every component
/// of a design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBounds {
    pub lower: [f64; PARAMS_PER_COMPONENT],
    pub upper: [f64; PARAMS_PER_COMPONENT],
}

impl ParamBounds {
    pub fn unbounded() -> Self {
        Self {
            lower: [f64::NEG_INFINITY; PARAMS_PER_COMPONENT],
            upper: [f64::INFINITY; PARAMS_PER_COMPONENT],
        }
    }

    pub fn contains(&self, c: &Component) -> bool {
        c.params()
            .iter()
            .enumerate()
            .all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignVector {
    pub components: Vec<Component>,
    pub exponent: u32,
    pub bounds: ParamBounds,
}

impl DesignVector {
    pub fn new(components: Vec<Component>, bounds: ParamBounds) -> Self {
        Self {
            components,
            exponent: DEFAULT_EXPONENT,
            bounds,
        }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.components.iter().flat_map(|c| c.params()).collect()
    }

    pub fn unflatten(&self, values: &[f64]) -> Self {
        assert_eq!(values.len(), PARAMS_PER_COMPONENT * self.len());
        Self {
            components: values
                .chunks_exact(PARAMS_PER_COMPONENT)
                .map(Component::from_params)
                .collect(),
            exponent: self.exponent,
            bounds: self.bounds,
        }
    }

    /// Flattened lower and upper bounds.
    pub fn flat_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let lo = (0..n).flat_map(|_| self.bounds.lower).collect();
        let hi = (0..n).flat_map(|_| self.bounds.upper).collect();
        (lo, hi)
    }

    /// Max-union of the component functions at `point`.
    pub fn phi(&self, point: (f64, f64)) -> Result<f64> {
        self.phi_argmax(point).map(|(v, _)| v)
    }

    /// Max-union value and the index of the component attaining it (lowest
    /// index on ties).
    pub fn phi_argmax(&self, point: (f64, f64)) -> Result<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, c) in self.components.iter().enumerate() {
            let v = c.phi(point, self.exponent);
            match best {
                Some((b, _)) if v <= b => {}
                _ => best = Some((v, i)),
            }
        }
        best.ok_or(Error::EmptyDesign)
    }

    /// Max-union of the component levels and the attaining index (lowest on ties).
    pub fn level_argmax(&self, point: (f64, f64)) -> Result<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, c) in self.components.iter().enumerate() {
            let v = c.level(point, self.exponent);
            match best {
                Some((b, _)) if v <= b => {}
                _ => best = Some((v, i)),
            }
        }
        best.ok_or(Error::EmptyDesign)
    }

    /// Serialize as `mmc-design v1` text.
    pub fn to_text(&self) -> String {
        let mut out = format!("mmc-design v1 n={} p={}\n", self.len(), self.exponent);
        for c in &self.components {
            let fields: Vec<String> = c.params().iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", fields.join(" "));
        }
        out
    }

    /// Parse `mmc-design v1` text. Bounds are left unbounded.
    pub fn from_text(text: &str) -> Result<Self, ParseError> {
        const FMT: &str = "mmc-design";
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| ParseError::new(FMT, 1, "missing header"))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("mmc-design") || parts.next() != Some("v1") {
            return Err(ParseError::new(FMT, 1, "expected `mmc-design v1`"));
        }
        let n: usize = header_field(parts.next(), "n", FMT)?;
        let p: u32 = header_field(parts.next(), "p", FMT)?;
        if parts.next().is_some() {
            return Err(ParseError::new(FMT, 1, "trailing header fields"));
        }
        if p < 2 || !p.is_multiple_of(2) {
            return Err(ParseError::new(
                FMT,
                1,
                format!("exponent must be even and >= 2, got {p}"),
            ));
        }
        let mut components = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let values = parse_floats(line, FMT, idx + 1)?;
            if values.len() != PARAMS_PER_COMPONENT {
                return Err(ParseError::new(
                    FMT,
                    idx + 1,
                    format!("expected 7 values, got {}", values.len()),
                ));
            }
            components.push(Component::from_params(&values));
        }
        if components.len() != n {
            return Err(ParseError::new(
                FMT,
                1,
                format!("header says n={n} but found {} components", components.len()),
            ));
        }
        if n == 0 {
            return Err(ParseError::new(FMT, 1, "design has no components"));
        }
        Ok(Self {
            components,
            exponent: p,
            bounds: ParamBounds::unbounded(),
        })
    }
}

pub fn phi_structure(point: (f64, f64), d: &DesignVector) -> Result<f64> {
    d.phi(point)
}

pub(crate) fn header_field<T: std::str::FromStr>(
    token: Option<&str>,
    key: &str,
    format: &'static str,
) -> Result<T, ParseError> {
    let token = token.ok_or_else(|| ParseError::new(format, 1, format!("missing `{key}=`")))?;
    let value = token
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| ParseError::new(format, 1, format!("expected `{key}=`, got `{token}`")))?;
    value
        .parse()
        .map_err(|_| ParseError::new(format, 1, format!("bad value for `{key}`: `{value}`")))
}

pub(crate) fn parse_floats(line: &str, format: &'static str, lineno: usize) -> Result<Vec<f64>, ParseError> {
    line.split_whitespace()
        .map(|tok| {
            let v: f64 = tok
                .parse()
                .map_err(|_| ParseError::new(format, lineno, format!("bad number `{tok}`")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(ParseError::new(format, lineno, format!("non-finite number `{tok}`")))
            }
        })
        .collect()
}

/// Exact step: 0 for `x <= 0`, 1 otherwise.
pub fn heaviside(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        1.0
    }
}

/// C1 piecewise-cubic regularized step with floor `alpha` and half-width `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothHeaviside {
    eps: f64,
    alpha: f64,
}

impl SmoothHeaviside {
    pub fn new(eps: f64, alpha: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1), got {alpha}")));
        }
        Ok(Self { eps, alpha })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn value(&self, x: f64) -> f64 {
        let (eps, alpha) = (self.eps, self.alpha);
        if x <= -eps {
            alpha
        } else if x >= eps {
            1.0
        } else {
            let t = x / eps;
            3.0 * (1.0 - alpha) / 4.0 * (t - t * t * t / 3.0) + (1.0 + alpha) / 2.0
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        if x <= -self.eps || x >= self.eps {
            0.0
        } else {
            let t = x / self.eps;
            3.0 * (1.0 - self.alpha) / (4.0 * self.eps) * (1.0 - t * t)
        }
    }
}

pub fn heaviside_smooth(x: f64, eps: f64, alpha: f64) -> Result<f64> {
    Ok(SmoothHeaviside::new(eps, alpha)?.value(x))
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    fn contains_open(&self, x: f64, y: f64) -> bool {
        x > self.x0 && x < self.x1 && y > self.y0 && y < self.y1
    }
}

/// Rectangular design domain, optionally minus a rectangular cutout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignDomain {
    pub width: f64,
    pub height: f64,
    pub cutout: Option<Rect>,
}

impl DesignDomain {
    pub fn rectangle(width: f64, height: f64) -> Result<Self> {
        Self::with_cutout(width, height, None)
    }

    pub fn with_cutout(width: f64, height: f64, cutout: Option<Rect>) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "domain must have positive size, got {width} x {height}"
            )));
        }
        if let Some(r) = cutout {
            let inside = r.x0 >= 0.0 && r.y0 >= 0.0 && r.x1 <= width && r.y1 <= height;
            if !(r.x0 < r.x1 && r.y0 < r.y1) || !inside {
                return Err(Error::InvalidArgument(
                    "cutout must be a proper sub-rectangle of the domain".into(),
                ));
            }
            if r.x0 <= 0.0 && r.y0 <= 0.0 && r.x1 >= width && r.y1 >= height {
                return Err(Error::InvalidArgument("cutout removes the whole domain".into()));
            }
        }
        Ok(Self { width, height, cutout })
    }

    /// True if the point lies in the closed bounding box and outside the open cutout.
    pub fn is_active(&self, x: f64, y: f64) -> bool {
        let in_box = (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y);
        in_box && !self.cutout.is_some_and(|r| r.contains_open(x, y))
    }

    /// Parameter box for components living in this domain.
    pub fn component_bounds(&self) -> ParamBounds {
        let (w, h) = (self.width, self.height);
        ParamBounds {
            lower: [0.0, 0.0, 0.01 * w, 0.01 * h, 0.01 * h, 0.01 * h, -PI],
            upper: [w, h, 0.8 * w, 0.3 * h, 0.3 * h, 0.3 * h, PI],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn comp(x0: f64, y0: f64, l: f64, t: [f64; 3], theta: f64) -> Component {
        Component {
            x0,
            y0,
            half_length: l,
            t1: t[0],
            t2: t[1],
            t3: t[2],
            theta,
        }
    }

    #[test]
    fn local_coords_identity_rotation() {
        let c = comp(0.4, 0.7, 1.0, [0.1; 3], 0.0);
        let (x, y) = c.local_coords((0.4 + 0.25, 0.7 - 0.125));
        assert!((x - 0.25).abs() < 1e-15 && (y + 0.125).abs() < 1e-15);
    }

    #[test]
    fn local_coords_quarter_turn() {
        let c = comp(2.0, 3.0, 1.0, [0.1; 3], PI / 2.0);
        let (x, y) = c.local_coords((3.0, 3.0));
        assert!(x.abs() < 1e-15);
        assert!((y + 1.0).abs() < 1e-15);
    }

    #[test]
    fn local_coords_matches_matrix_oracle() {
        let c = comp(1.0, 0.5, 1.0, [0.1; 3], PI / 6.0);
        let th = PI / 6.0;
        let m = [[th.cos(), th.sin()], [-th.sin(), th.cos()]];
        let v = [1.3 - 1.0, 0.7 - 0.5];
        let expect = [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]];
        let got = local_coords((1.3, 0.7), &c);
        assert!((got.0 - expect[0]).abs() < 1e-15);
        assert!((got.1 - expect[1]).abs() < 1e-15);
        // frozen: cos(pi/6)*0.3 + sin(pi/6)*0.2, -sin(pi/6)*0.3 + cos(pi/6)*0.2
        assert!((got.0 - 0.3598076211353316).abs() < 1e-15);
        assert!((got.1 - 0.02320508075688779).abs() < 1e-15);
    }

    #[test]
    fn thickness_nodes_and_constant_profile() {
        let c = comp(0.0, 0.0, 0.7, [0.1, 0.2, 0.05], 0.3);
        assert_eq!(c.thickness(0.0), 0.2);
        assert!((c.thickness(-0.7) - 0.1).abs() < 1e-15);
        assert!((c.thickness(0.7) - 0.05).abs() < 1e-15);
        let flat = comp(0.0, 0.0, 0.7, [0.13; 3], 0.0);
        for x in [-3.0, -0.2, 0.0, 0.5, 9.0] {
            assert!((thickness_profile(x, &flat) - 0.13).abs() < 1e-15);
        }
    }

    #[test]
    fn thickness_matches_polyfit_oracle() {
        // Cramer's rule on the 3x3 Vandermonde system through the control thicknesses.
        let (l, t) = (1.0_f64, [0.1, 0.2, 0.1]);
        let xs = [-l, 0.0, l];
        let det3 = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let v: [[f64; 3]; 3] = std::array::from_fn(|i| [xs[i] * xs[i], xs[i], 1.0]);
        let d = det3(v);
        let coef: Vec<f64> = (0..3)
            .map(|col| {
                let mut m = v;
                for row in 0..3 {
                    m[row][col] = t[row];
                }
                det3(m) / d
            })
            .collect();
        let oracle = coef[0] * 0.25 + coef[1] * 0.5 + coef[2];
        let c = comp(0.0, 0.0, l, t, 0.0);
        assert!((c.thickness(0.5) - oracle).abs() < 1e-14);
        assert!((c.thickness(0.5) - 0.175).abs() < 1e-14);
    }

    #[test]
    fn phi_center_endpoint_and_flank() {
        let c = comp(0.3, 0.2, 0.5, [0.05, 0.08, 0.05], 0.4);
        assert_eq!(phi_component((0.3, 0.2), &c, 6), 1.0);
        let tip = (0.3 + 0.5 * 0.4f64.cos(), 0.2 + 0.5 * 0.4f64.sin());
        assert!(phi_component(tip, &c, 6).abs() < 1e-12);
        let flat = comp(0.3, 0.2, 0.5, [0.05, 0.08, 0.05], 0.0);
        assert!(phi_component((0.3, 0.28), &flat, 6).abs() < 1e-12);
        assert!(phi_component((0.3, 0.12), &flat, 6).abs() < 1e-12);
    }

    #[test]
    fn phi_structure_singleton_and_empty() {
        let c = comp(0.5, 0.5, 0.4, [0.05, 0.1, 0.05], 0.2);
        let d = DesignVector::new(vec![c], ParamBounds::unbounded());
        let pt = (0.61, 0.47);
        assert_eq!(phi_structure(pt, &d).unwrap(), c.phi(pt, 6));
        let empty = DesignVector::new(vec![], ParamBounds::unbounded());
        assert!(matches!(phi_structure(pt, &empty), Err(Error::EmptyDesign)));
    }

    #[test]
    fn phi_structure_positive_inside_one_member() {
        let cs = vec![
            comp(0.2, 0.2, 0.1, [0.02; 3], 0.0),
            comp(1.0, 0.5, 0.3, [0.05; 3], 0.5),
            comp(1.8, 0.8, 0.1, [0.02; 3], 0.0),
        ];
        let d = DesignVector::new(cs.clone(), ParamBounds::unbounded());
        assert!(cs[0].phi((1.0, 0.5), 6) < 0.0 && cs[2].phi((1.0, 0.5), 6) < 0.0);
        assert!(d.phi((1.0, 0.5)).unwrap() > 0.0);
    }

    #[test]
    fn phi_structure_matches_bruteforce_max() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let cs: Vec<Component> = (0..5)
                .map(|_| {
                    comp(
                        rng.gen_range(0.0..2.0),
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(0.05..0.8),
                        [
                            rng.gen_range(0.01..0.3),
                            rng.gen_range(0.01..0.3),
                            rng.gen_range(0.01..0.3),
                        ],
                        rng.gen_range(-PI..PI),
                    )
                })
                .collect();
            let pt = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..1.0));
            let mut brute = f64::NEG_INFINITY;
            for c in &cs {
                let v = c.phi(pt, 6);
                if v > brute {
                    brute = v;
                }
            }
            let d = DesignVector::new(cs, ParamBounds::unbounded());
            assert_eq!(d.phi(pt).unwrap(), brute);
        }
    }

    #[test]
    fn heaviside_exact_step() {
        assert_eq!(heaviside(-0.3), 0.0);
        assert_eq!(heaviside(0.0), 0.0);
        assert_eq!(heaviside(0.3), 1.0);
    }

    #[test]
    fn heaviside_smooth_values() {
        let alpha = 1e-3;
        assert!((heaviside_smooth(0.0, 0.1, alpha).unwrap() - (1.0 + alpha) / 2.0).abs() < 1e-15);
        // exact rational value 5401/6400
        assert!((heaviside_smooth(0.05, 0.1, alpha).unwrap() - 5401.0 / 6400.0).abs() < 1e-14);
        assert_eq!(heaviside_smooth(-0.2, 0.1, alpha).unwrap(), alpha);
        assert_eq!(heaviside_smooth(0.2, 0.1, alpha).unwrap(), 1.0);
        assert!(heaviside_smooth(0.0, 0.0, alpha).is_err());
        assert!(heaviside_smooth(0.0, -1.0, alpha).is_err());
    }

    #[test]
    fn heaviside_smooth_converges_to_step() {
        for x in [-0.5, -0.05, 0.05, 0.5] {
            let errs: Vec<f64> = [1e-1, 1e-2, 1e-3]
                .iter()
                .map(|&e| (heaviside_smooth(x, e, 0.0).unwrap() - heaviside(x)).abs())
                .collect();
            assert!(errs[2] <= errs[1] && errs[1] <= errs[0]);
            assert!(errs[2] < 1e-12);
        }
    }

    #[test]
    fn smooth_heaviside_derivative_matches_fd() {
        let h = SmoothHeaviside::new(0.1, 1e-3).unwrap();
        for x in [-0.09, -0.03, 0.0, 0.04, 0.095] {
            let fd = (h.value(x + 1e-7) - h.value(x - 1e-7)) / 2e-7;
            assert!((fd - h.derivative(x)).abs() < 1e-6);
        }
        assert_eq!(h.derivative(0.2), 0.0);
        assert_eq!(h.derivative(-0.1), 0.0);
    }

    #[test]
    fn min_thickness_detects_negative_dip() {
        let c = comp(0.0, 0.0, 1.0, [0.3, 0.01, 0.01], 0.0);
        assert!(c.min_thickness() < 0.0);
        assert!(c.validate().is_err());
        let ok = comp(0.0, 0.0, 1.0, [0.3, 0.01, 0.3], 0.0);
        assert!((ok.min_thickness() - 0.01).abs() < 1e-15);
        ok.validate().unwrap();
    }

    #[test]
    fn design_text_round_trip_and_errors() {
        let d = DesignVector::new(
            vec![
                comp(0.1, 0.2, 0.3, [0.04, 0.05, 0.06], -1.234567890123),
                comp(1.0 / 3.0, 0.5, 0.25, [0.1, 0.2, 0.1], PI),
            ],
            ParamBounds::unbounded(),
        );
        let text = d.to_text();
        assert!(text.starts_with("mmc-design v1 n=2 p=6\n"));
        let back = DesignVector::from_text(&text).unwrap();
        assert_eq!(back, d);
        assert!(DesignVector::from_text("mmc-design v1 n=1 p=6\n1 2 3\n").is_err());
        assert!(DesignVector::from_text("mmc-design v1 n=2 p=6\n1 2 3 4 5 6 7\n").is_err());
        assert!(DesignVector::from_text("mmc-design v1 n=1 p=5\n1 2 3 4 5 6 7\n").is_err());
        assert!(DesignVector::from_text("mmc-design v2 n=1 p=6\n1 2 3 4 5 6 7\n").is_err());
        assert!(DesignVector::from_text("").is_err());
    }

    #[test]
    fn domain_predicate_and_bounds() {
        let cut = Rect {
            x0: 0.4,
            y0: 0.6,
            x1: 1.0,
            y1: 1.0,
        };
        let d = DesignDomain::with_cutout(1.0, 1.0, Some(cut)).unwrap();
        assert!(d.is_active(0.2, 0.9));
        assert!(!d.is_active(0.7, 0.8));
        assert!(d.is_active(0.4, 0.8));
        assert!(!d.is_active(1.1, 0.1));
        assert!(DesignDomain::rectangle(0.0, 1.0).is_err());
        assert!(DesignDomain::with_cutout(
            1.0,
            1.0,
            Some(Rect {
                x0: 0.5,
                y0: 0.5,
                x1: 1.5,
                y1: 0.8
            })
        )
        .is_err());
        let b = DesignDomain::rectangle(2.0, 1.0).unwrap().component_bounds();
        assert_eq!(b.upper[2], 1.6);
        assert_eq!(b.lower[3], 0.01);
    }

    fn arb_component() -> impl Strategy<Value = Component> {
        (
            -1.0..1.0f64,
            -1.0..1.0f64,
            0.05..1.0f64,
            0.02..0.3f64,
            0.02..0.3f64,
            0.02..0.3f64,
            -PI..PI,
        )
            .prop_map(|(x0, y0, l, a, b, c, th)| comp(x0, y0, l, [a, b, c], th))
    }

    #[test]
    fn level_near_boundary_is_distance_like() {
        let c = Component {
            x0: 0.0,
            y0: 0.0,
            half_length: 1.0,
            t1: 0.1,
            t2: 0.1,
            t3: 0.1,
            theta: 0.0,
        };
        // across the flat middle the level is the signed offset from y' = t
        for d in [-0.01, -0.001, 0.001, 0.01] {
            let l = c.level((0.0, 0.1 - d), 6);
            assert!((l - d).abs() < 0.2 * d.abs(), "{d}: {l}");
        }
        assert_eq!(c.level((0.0, 0.0), 6), LEVEL_CAP);
    }

    #[test]
    fn level_does_not_collapse_past_a_pinched_tip() {
        // concave profile reaches zero thickness just past the right tip
        let c = Component {
            x0: 0.0,
            y0: 0.0,
            half_length: 0.1,
            t1: 0.02,
            t2: 0.02,
            t3: 0.012,
            theta: 0.0,
        };
        for x in [0.15, 0.3, 0.6] {
            let l = c.level((x, 0.05), 6);
            assert!(l < -0.02, "{x}: {l}");
        }
    }

    proptest! {
        #[test]
        fn flatten_unflatten_identity(cs in proptest::collection::vec(arb_component(), 1..6)) {
            let d = DesignVector::new(cs, ParamBounds::unbounded());
            let flat = d.flatten();
            prop_assert_eq!(flat.len(), 7 * d.len());
            prop_assert_eq!(d.unflatten(&flat), d);
        }

        #[test]
        fn local_coords_invertible(c in arb_component(), x in -2.0..2.0f64, y in -2.0..2.0f64) {
            let back = c.global_coords(c.local_coords((x, y)));
            prop_assert!((back.0 - x).abs() < 1e-12 && (back.1 - y).abs() < 1e-12);
        }

        #[test]
        fn sign_matches_open_hyperellipse(c in arb_component(), x in -2.0..2.0f64, y in -2.0..2.0f64) {
            let (xl, yl) = c.local_coords((x, y));
            let f = c.thickness(xl);
            prop_assume!(f > 1e-6);
            let inside = (xl / c.half_length).powi(6) + (yl / f).powi(6) < 1.0;
            let v = c.phi((x, y), 6);
            prop_assume!(v.abs() > 1e-12);
            prop_assert_eq!(v > 0.0, inside);
        }

        #[test]
        fn rotation_equivariance(c in arb_component(), x in -2.0..2.0f64, y in -2.0..2.0f64, rot in -PI..PI) {
            let (s, co) = rot.sin_cos();
            let (dx, dy) = (x - c.x0, y - c.y0);
            let rotated = (c.x0 + co * dx - s * dy, c.y0 + s * dx + co * dy);
            let c2 = Component { theta: c.theta + rot, ..c };
            let a = c.phi((x, y), 6);
            let b = c2.phi(rotated, 6);
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }

        #[test]
        fn max_composition(cs in proptest::collection::vec(arb_component(), 1..6), x in -1.0..1.0f64, y in -1.0..1.0f64) {
            let d = DesignVector::new(cs, ParamBounds::unbounded());
            let s = d.phi((x, y)).unwrap();
            let vals: Vec<f64> = d.components.iter().map(|c| c.phi((x, y), 6)).collect();
            prop_assert!(vals.iter().all(|v| s >= *v));
            prop_assert!(vals.contains(&s));
        }

        #[test]
        fn level_sign_matches_phi(c in arb_component(), x in -2.0..2.0f64, y in -2.0..2.0f64) {
            let v = c.phi((x, y), 6);
            prop_assume!(v.abs() > 1e-9);
            let l = c.level((x, y), 6);
            prop_assert!(l.is_finite());
            prop_assert_eq!(l > 0.0, v > 0.0);
        }
    }
}
