//! CPU raycaster: perspective camera, trilinear RGBA sampling and
//! front-to-back compositing with opacity correction.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::tfgen::ColorVolume;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
    #[error("invalid render settings: {0}")]
    InvalidSettings(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png: {0}")]
    Png(String),
}

type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Perspective camera in world units (voxel index times spacing).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub eye: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Degrees, in `(0, 180)`.
    pub vertical_fov: f64,
}

impl Camera {
    /// Camera on a sphere around `center`, angles in degrees, `+z` up.
    pub fn orbit(center: Vec3, distance: f64, azimuth: f64, elevation: f64, vertical_fov: f64) -> Self {
        let (az, el) = (azimuth.to_radians(), elevation.to_radians());
        let offset = [
            distance * el.cos() * az.cos(),
            distance * el.cos() * az.sin(),
            distance * el.sin(),
        ];
        Self {
            eye: add(center, offset),
            look_at: center,
            up: [0.0, 0.0, 1.0],
            vertical_fov,
        }
    }

    /// Three-quarter view that frames the whole volume.
    pub fn preset(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        let extent: Vec3 = std::array::from_fn(|a| (dims[a] - 1) as f64 * spacing[a]);
        let center = scale(extent, 0.5);
        let radius = norm(extent) / 2.0;
        let fov: f64 = 40.0;
        let distance = radius / (fov.to_radians() / 2.0).sin() * 1.05;
        Self::orbit(center, distance, 30.0, 20.0, fov)
    }

    /// Orthonormal `(forward, right, up)` basis.
    pub fn basis(&self) -> Result<(Vec3, Vec3, Vec3), RenderError> {
        if !(self.vertical_fov > 0.0 && self.vertical_fov < 180.0) {
            return Err(RenderError::DegenerateCamera(format!(
                "vertical_fov {} outside (0, 180)",
                self.vertical_fov
            )));
        }
        let view = sub(self.look_at, self.eye);
        let len = norm(view);
        if !(len > 0.0 && len.is_finite()) {
            return Err(RenderError::DegenerateCamera("eye coincides with look_at".into()));
        }
        let forward = scale(view, 1.0 / len);
        let side = cross(forward, self.up);
        let side_len = norm(side);
        if !side_len.is_finite() || side_len <= 1e-12 * norm(self.up).max(1e-300) {
            return Err(RenderError::DegenerateCamera("up is parallel to the view direction".into()));
        }
        let right = scale(side, 1.0 / side_len);
        let up = cross(right, forward);
        Ok((forward, right, up))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    pub width: u32,
    pub height: u32,
    /// Sampling distance in voxel units.
    pub step: f64,
    pub early_stop_alpha: f64,
    /// Straight RGBA in `[0, 1]`.
    pub background: [f64; 4],
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            step: 0.5,
            early_stop_alpha: 0.99,
            background: [0.0, 0.0, 0.0, 1.0],
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: &str| Err(RenderError::InvalidSettings(m.into()));
        if self.width == 0 || self.height == 0 {
            return bad("image must be at least 1x1");
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad("step must be positive");
        }
        if !(self.early_stop_alpha > 0.0 && self.early_stop_alpha <= 1.0) {
            return bad("early_stop_alpha must lie in (0, 1]");
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("background channels must lie in [0, 1]");
        }
        Ok(())
    }
}

/// 8-bit RGBA, row-major from the top-left corner.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl RenderedImage {
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 4] {
        let i = 4 * (y as usize * self.width as usize + x as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2], self.pixels[i + 3]]
    }
}

/// `1 - (1 - a)^step`: opacity of a sample spanning `step` voxels.
pub fn corrected_opacity(alpha: f64, step: f64) -> f64 {
    1.0 - (1.0 - alpha).powf(step)
}

/// Front-to-back accumulator in premultiplied form.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Compositor {
    pub color: [f64; 3],
    pub alpha: f64,
}

impl Compositor {
    /// `C += (1 - A) a c`, `A += (1 - A) a` for a sample of straight colour
    /// `c` and already corrected opacity `a`.
    pub fn add(&mut self, color: [f64; 3], opacity: f64) {
        let w = (1.0 - self.alpha) * opacity;
        for c in 0..3 {
            self.color[c] += w * color[c];
        }
        self.alpha += w;
    }

    /// Composites the accumulated ray over a straight-RGBA background.
    pub fn over(&self, background: [f64; 4]) -> [f64; 4] {
        let rest = (1.0 - self.alpha) * background[3];
        [
            self.color[0] + rest * background[0],
            self.color[1] + rest * background[1],
            self.color[2] + rest * background[2],
            self.alpha + rest,
        ]
    }
}

/// Round half up after scaling to `0..=255`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Trilinearly interpolated RGBA at a point in voxel coordinates (clamped).
pub fn sample_trilinear(cv: &ColorVolume, p: Vec3) -> [f64; 4] {
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let max = (cv.dims[a] - 1) as f64;
        let c = p[a].clamp(0.0, max);
        let i = (c.floor() as usize).min(cv.dims[a] - 2);
        base[a] = i;
        frac[a] = c - i as f64;
    }
    let mut out = [0.0; 4];
    for corner in 0..8 {
        let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let mut w = 1.0;
        for a in 0..3 {
            w *= if o[a] == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if w == 0.0 {
            continue;
        }
        let s = cv.at(base[0] + o[0], base[1] + o[1], base[2] + o[2]);
        for c in 0..4 {
            out[c] += w * f64::from(s[c]);
        }
    }
    out
}

/// Entry/exit distances of a ray against the axis-aligned box `[0, hi]`.
fn intersect_box(origin: Vec3, dir: Vec3, hi: Vec3) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < 0.0 || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut near, mut far) = ((0.0 - origin[a]) * inv, (hi[a] - origin[a]) * inv);
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
    }
    (t0 < t1).then_some((t0, t1))
}

/// Marches one ray (unit `dir`, world units) and returns the unquantized
/// pixel composited over the background.
pub fn trace_ray(cv: &ColorVolume, origin: Vec3, dir: Vec3, settings: &RenderSettings) -> [f64; 4] {
    let mut acc = Compositor::default();
    let extent: Vec3 = std::array::from_fn(|a| (cv.dims[a] - 1) as f64 * cv.spacing[a]);
    if let Some((t_in, t_out)) = intersect_box(origin, dir, extent) {
        let world_step = settings.step * cv.spacing.iter().copied().fold(f64::INFINITY, f64::min);
        let mut k = 0u64;
        loop {
            let t = t_in + (k as f64 + 0.5) * world_step;
            if t >= t_out {
                break;
            }
            let w = add(origin, scale(dir, t));
            let p = [w[0] / cv.spacing[0], w[1] / cv.spacing[1], w[2] / cv.spacing[2]];
            let s = sample_trilinear(cv, p);
            if s[3] > 0.0 {
                acc.add([s[0], s[1], s[2]], corrected_opacity(s[3], settings.step));
                if acc.alpha >= settings.early_stop_alpha {
                    break;
                }
            }
            k += 1;
        }
    }
    acc.over(settings.background)
}

/// Renders `cv`; output is independent of the worker count.
pub fn raycast(cv: &ColorVolume, camera: &Camera, settings: &RenderSettings) -> Result<RenderedImage, RenderError> {
    settings.validate()?;
    let (forward, right, up) = camera.basis()?;
    let (w, h) = (settings.width as usize, settings.height as usize);
    let tan = (camera.vertical_fov.to_radians() / 2.0).tan();
    let aspect = w as f64 / h as f64;
    let rows = par::map_indices(h, |y| {
        let mut row = Vec::with_capacity(4 * w);
        let sy = (1.0 - 2.0 * (y as f64 + 0.5) / h as f64) * tan;
        for x in 0..w {
            let sx = (2.0 * (x as f64 + 0.5) / w as f64 - 1.0) * tan * aspect;
            let d = add(forward, add(scale(right, sx), scale(up, sy)));
            let d = scale(d, 1.0 / norm(d));
            let px = trace_ray(cv, camera.eye, d, settings);
            row.extend(px.map(quantize));
        }
        row
    });
    Ok(RenderedImage {
        width: settings.width,
        height: settings.height,
        pixels: rows.concat(),
    })
}

/// PNG bytes with fixed encoder settings (identical images give identical bytes).
pub fn encode_png(img: &RenderedImage) -> Result<Vec<u8>, RenderError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        enc.set_filter(png::Filter::Adaptive);
        let mut writer = enc.write_header().map_err(|e| RenderError::Png(e.to_string()))?;
        writer
            .write_image_data(&img.pixels)
            .map_err(|e| RenderError::Png(e.to_string()))?;
        writer.finish().map_err(|e| RenderError::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<RenderedImage, RenderError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| RenderError::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RenderError::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| RenderError::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Rgba || info.bit_depth != png::BitDepth::Eight {
        return Err(RenderError::Png("expected 8-bit RGBA".into()));
    }
    buf.truncate(info.buffer_size());
    Ok(RenderedImage {
        width: info.width,
        height: info.height,
        pixels: buf,
    })
}

pub fn write_png(img: &RenderedImage, path: &Path) -> Result<(), RenderError> {
    let bytes = encode_png(img)?;
    let io = |source| RenderError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io)?;
    file.write_all(&bytes).map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn homogeneous(n: usize, rgba: [f32; 4]) -> ColorVolume {
        ColorVolume {
            dims: [n, n, n],
            spacing: [1.0; 3],
            rgba: vec![rgba; n * n * n],
        }
    }

    fn single_pixel() -> RenderSettings {
        RenderSettings {
            width: 1,
            height: 1,
            ..Default::default()
        }
    }

    #[test]
    fn transparent_volume_shows_background() {
        let cv = ColorVolume::transparent([8, 8, 8], [1.0; 3]);
        let settings = RenderSettings {
            width: 9,
            height: 5,
            background: [0.2, 0.4, 0.6, 1.0],
            ..Default::default()
        };
        let img = raycast(&cv, &Camera::preset([8, 8, 8], [1.0; 3]), &settings).unwrap();
        let bg = settings.background.map(quantize);
        for y in 0..5 {
            for x in 0..9 {
                assert_eq!(img.pixel(x, y), bg);
            }
        }
    }

    #[test]
    fn opaque_first_hit() {
        let mut acc = Compositor::default();
        acc.add([1.0, 0.0, 0.0], 1.0);
        acc.add([0.0, 0.0, 1.0], 1.0);
        assert_eq!(acc.over([0.0, 0.0, 0.0, 1.0]).map(quantize), [255, 0, 0, 255]);

        let cv = homogeneous(4, [1.0, 0.0, 0.0, 1.0]);
        let cam = Camera::orbit([1.5, 1.5, 1.5], 10.0, 0.0, 0.0, 30.0);
        let img = raycast(&cv, &cam, &single_pixel()).unwrap();
        assert_eq!(img.pixel(0, 0), [255, 0, 0, 255]);
    }

    #[test]
    fn two_sample_composite() {
        let mut acc = Compositor::default();
        acc.add([1.0, 0.0, 0.0], 0.5);
        acc.add([0.0, 0.0, 1.0], 1.0);
        let px = acc.over([0.0, 0.0, 0.0, 1.0]);
        assert_eq!(px, [0.5, 0.0, 0.5, 1.0]);
        assert_eq!(px.map(quantize), [128, 0, 128, 255]);
    }

    #[test]
    fn slab_alpha_matches_closed_form() {
        // 11 voxels along x: slab thickness 10 voxel units.
        for (a, step) in [(0.1, 0.5), (0.3, 0.25), (0.05, 1.0), (0.2, 0.1)] {
            let cv = homogeneous(11, [0.0, 1.0, 0.0, a as f32]);
            let settings = RenderSettings {
                early_stop_alpha: 1.0,
                background: [0.0; 4],
                step,
                ..single_pixel()
            };
            let px = trace_ray(&cv, [-5.0, 5.0, 5.0], [1.0, 0.0, 0.0], &settings);
            let closed = 1.0 - (1.0 - f64::from(a as f32)).powf(10.0);
            assert!((px[3] - closed).abs() < 1e-6, "a={a} step={step}: {} vs {closed}", px[3]);
        }
    }

    #[test]
    fn accumulators_stay_bounded() {
        let mut acc = Compositor::default();
        for i in 0..200 {
            let a = ((i * 37) % 100) as f64 / 99.0;
            acc.add([1.0, (i % 2) as f64, 0.3], a);
            assert!((0.0..=1.0).contains(&acc.alpha));
            assert!(acc.color.iter().all(|c| (0.0..=1.0 + 1e-12).contains(c)));
        }
    }

    #[test]
    fn degenerate_camera() {
        let cv = ColorVolume::transparent([2, 2, 2], [1.0; 3]);
        let mut cam = Camera::preset([2, 2, 2], [1.0; 3]);
        cam.up = sub(cam.look_at, cam.eye);
        assert!(matches!(
            raycast(&cv, &cam, &single_pixel()),
            Err(RenderError::DegenerateCamera(_))
        ));
        let mut cam = Camera::preset([2, 2, 2], [1.0; 3]);
        cam.vertical_fov = 180.0;
        assert!(raycast(&cv, &cam, &single_pixel()).is_err());
        cam.vertical_fov = 40.0;
        cam.eye = cam.look_at;
        assert!(raycast(&cv, &cam, &single_pixel()).is_err());
    }

    #[test]
    fn trilinear_midpoint() {
        let mut cv = ColorVolume::transparent([2, 2, 2], [1.0; 3]);
        cv.rgba[1] = [1.0, 0.0, 0.0, 1.0];
        let s = sample_trilinear(&cv, [0.5, 0.0, 0.0]);
        assert_eq!(s, [0.5, 0.0, 0.0, 0.5]);
        let s = sample_trilinear(&cv, [1.0, 0.0, 0.0]);
        assert_eq!(s, [1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn png_round_trip_and_stable_bytes() {
        let red = RenderedImage {
            width: 1,
            height: 1,
            pixels: vec![255, 0, 0, 255],
        };
        assert_eq!(decode_png(&encode_png(&red).unwrap()).unwrap(), red);
        let checker = RenderedImage {
            width: 2,
            height: 2,
            pixels: vec![0, 0, 0, 255, 255, 255, 255, 255, 255, 255, 255, 255, 0, 0, 0, 255],
        };
        assert_eq!(decode_png(&encode_png(&checker).unwrap()).unwrap(), checker);

        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        write_png(&checker, &a).unwrap();
        write_png(&checker, &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        assert!(matches!(
            write_png(&red, &dir.path().join("missing/x.png")),
            Err(RenderError::Io { .. })
        ));
    }
}
