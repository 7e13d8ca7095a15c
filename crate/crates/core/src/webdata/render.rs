//! Procedural frame rendering: moving shapes, domain styles, and clutter
//! distractors.
//!
//! Frames are [3, h, w] f32 in [0, 1]. Shapes are drawn with signed distance
//! functions and a one-pixel soft edge; motion paths wrap around the frame
//! (or reflect, for bounce) so that classes differing only in motion have
//! identical single-frame appearance statistics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
    Diamond,
    Ring,
    Bar,
    Ell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    SlideRight,
    SlideDown,
    Hold,
    Bounce,
    Orbit,
}

/// Per-domain rendering style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftParams {
    /// Number of 3x3 box blur passes.
    pub blur_passes: usize,
    pub contrast: f32,
    pub brightness: f32,
    pub bg_color: [f32; 3],
    /// Uniform per-item background jitter amplitude.
    pub bg_jitter: f32,
    /// Uniform per-item shape color jitter amplitude.
    pub color_jitter: f32,
    /// Uniform per-pixel noise amplitude.
    pub pixel_noise: f32,
    /// Amplitude of a diagonal background stripe texture (0 disables).
    #[serde(default)]
    pub bg_stripe: f32,
    /// HSV value (brightness) of rendered shape colors.
    #[serde(default = "default_shape_value")]
    pub shape_value: f32,
}

fn default_shape_value() -> f32 {
    0.8
}

/// Continuous shape pose within a frame.
#[derive(Debug, Clone, Copy)]
pub struct Pose {
    pub cx: f32,
    pub cy: f32,
    pub size: f32,
}

/// Starting state for a motion path.
#[derive(Debug, Clone, Copy)]
pub struct MotionState {
    pub x0: f32,
    pub y0: f32,
    pub size: f32,
    pub speed: f32,
    pub phase: f32,
}

impl MotionState {
    pub fn sample(rng: &mut ChaCha8Rng, frame: usize) -> Self {
        let fs = frame as f32;
        MotionState {
            x0: rng.gen_range(0.0..fs),
            y0: rng.gen_range(0.0..fs),
            size: rng.gen_range(0.38..0.52) * fs,
            speed: rng.gen_range(1.2..2.2),
            phase: rng.gen_range(0.0..std::f32::consts::TAU),
        }
    }
}

/// Shape pose at frame index `t` for the given motion.
pub fn pose_at(motion: Motion, st: &MotionState, t: usize, frame: usize) -> Pose {
    let fs = frame as f32;
    let tf = t as f32;
    let wrap = |v: f32| v.rem_euclid(fs);
    match motion {
        Motion::SlideRight => Pose {
            cx: wrap(st.x0 + st.speed * tf),
            cy: st.y0,
            size: st.size,
        },
        Motion::SlideDown => Pose {
            cx: st.x0,
            cy: wrap(st.y0 + st.speed * tf),
            size: st.size,
        },
        Motion::Hold => Pose {
            cx: st.x0,
            cy: st.y0,
            size: st.size,
        },
        Motion::Bounce => {
            // reflect between margins with period 2*(fs - 2*margin)
            let margin = st.size;
            let span = (fs - 2.0 * margin).max(1.0);
            let raw = (st.y0 - margin + st.speed * tf).rem_euclid(2.0 * span);
            let y = if raw < span { raw } else { 2.0 * span - raw };
            Pose {
                cx: st.x0,
                cy: margin + y,
                size: st.size,
            }
        }
        Motion::Orbit => {
            let r = 0.55 * st.size + 2.0;
            let omega = st.speed * 0.22;
            let ang = st.phase + omega * tf;
            Pose {
                cx: wrap(st.x0 + r * ang.cos()),
                cy: wrap(st.y0 + r * ang.sin()),
                size: st.size,
            }
        }
    }
}

fn sd_box(dx: f32, dy: f32, hx: f32, hy: f32) -> f32 {
    let qx = dx.abs() - hx;
    let qy = dy.abs() - hy;
    let ox = qx.max(0.0);
    let oy = qy.max(0.0);
    (ox * ox + oy * oy).sqrt() + qx.max(qy).min(0.0)
}

/// Signed distance from pixel (x, y) to the shape boundary; negative inside.
/// Distances account for wraparound by evaluating the nearest torus image.
pub fn shape_sdf(shape: Shape, pose: &Pose, x: f32, y: f32, frame: usize) -> f32 {
    let fs = frame as f32;
    // nearest periodic image of the center
    let mut dx = x - pose.cx;
    let mut dy = y - pose.cy;
    if dx > fs / 2.0 {
        dx -= fs;
    } else if dx < -fs / 2.0 {
        dx += fs;
    }
    if dy > fs / 2.0 {
        dy -= fs;
    } else if dy < -fs / 2.0 {
        dy += fs;
    }
    let r = pose.size / 2.0;
    match shape {
        Shape::Circle => (dx * dx + dy * dy).sqrt() - r,
        Shape::Square => sd_box(dx, dy, r * 0.85, r * 0.85),
        Shape::Diamond => (dx.abs() + dy.abs()) * std::f32::consts::FRAC_1_SQRT_2 - r * 0.9,
        Shape::Ring => ((dx * dx + dy * dy).sqrt() - r * 0.85).abs() - r * 0.32,
        Shape::Cross => {
            let a = sd_box(dx, dy, r, r * 0.32);
            let b = sd_box(dx, dy, r * 0.32, r);
            a.min(b)
        }
        Shape::Bar => sd_box(dx, dy, r, r * 0.34),
        Shape::Ell => {
            let a = sd_box(dx + r * 0.45, dy, r * 0.32, r);
            let b = sd_box(dx, dy + r * 0.68, r, r * 0.3);
            a.min(b)
        }
        Shape::Triangle => {
            // equilateral triangle pointing up: max of three half-plane distances
            let e = r * 1.1;
            let h = e * 0.866;
            let d1 = dy - h * 0.5; // bottom edge y = h/2 (inside above)
            let d2 = 0.866 * dx - 0.5 * dy - h * 0.5;
            let d3 = -0.866 * dx - 0.5 * dy - h * 0.5;
            d1.max(d2).max(d3)
        }
    }
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(1.0)) * 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Per-item appearance: shape color and background, stable across frames.
#[derive(Debug, Clone, Copy)]
pub struct ItemLook {
    pub shape_rgb: [f32; 3],
    pub bg_rgb: [f32; 3],
}

impl ItemLook {
    pub fn sample(rng: &mut ChaCha8Rng, style: &ShiftParams) -> Self {
        let hue = rng.gen_range(0.0..0.22);
        let mut shape_rgb = hsv_to_rgb(hue, 0.85, style.shape_value);
        for c in shape_rgb.iter_mut() {
            *c = (*c + style.color_jitter * (rng.gen_range(0.0f32..1.0) - 0.5)).clamp(0.0, 1.0);
        }
        let mut bg_rgb = style.bg_color;
        for c in bg_rgb.iter_mut() {
            *c = (*c + style.bg_jitter * (rng.gen_range(0.0f32..1.0) - 0.5)).clamp(0.0, 1.0);
        }
        ItemLook { shape_rgb, bg_rgb }
    }
}

/// Renders one shape frame into a [3, frame, frame] buffer.
pub fn render_shape_frame(
    shape: Shape,
    pose: &Pose,
    look: &ItemLook,
    frame: usize,
    stripe: f32,
) -> Vec<f32> {
    let hw = frame * frame;
    let mut out = vec![0.0f32; 3 * hw];
    for y in 0..frame {
        for x in 0..frame {
            let sdf = shape_sdf(shape, pose, x as f32 + 0.5, y as f32 + 0.5, frame);
            let cov = (0.5 - sdf).clamp(0.0, 1.0);
            let tex = stripe_at(stripe, x, y);
            let idx = y * frame + x;
            for c in 0..3 {
                let bg = (look.bg_rgb[c] + tex).clamp(0.0, 1.0);
                out[c * hw + idx] = bg * (1.0 - cov) + look.shape_rgb[c] * cov;
            }
        }
    }
    out
}

/// Diagonal stripe texture offset for a pixel.
pub fn stripe_at(amp: f32, x: usize, y: usize) -> f32 {
    if amp == 0.0 {
        return 0.0;
    }
    if ((x + y) / 3) % 2 == 0 {
        amp
    } else {
        -amp
    }
}

/// Renders a text-clutter distractor frame (rows of glyph-like blocks),
/// scrolled horizontally by `scroll` pixels.
pub fn render_clutter_frame(rng_layout: &mut ChaCha8Rng, look: &ItemLook, frame: usize, scroll: usize, stripe: f32) -> Vec<f32> {
    // layout is drawn once per item from rng_layout; scroll shifts it
    let hw = frame * frame;
    let mut out = vec![0.0f32; 3 * hw];
    for y in 0..frame {
        for x in 0..frame {
            let tex = stripe_at(stripe, x, y);
            for c in 0..3 {
                out[c * hw + y * frame + x] = (look.bg_rgb[c] + tex).clamp(0.0, 1.0);
            }
        }
    }
    let rows = rng_layout.gen_range(3..6);
    for _ in 0..rows {
        let ry = rng_layout.gen_range(1..frame.saturating_sub(3).max(2));
        let rh = rng_layout.gen_range(2..4).min(frame - ry);
        let dark = rng_layout.gen_range(0.0f32..1.0) < 0.7;
        let mut x = 0usize;
        while x < frame {
            let bw = rng_layout.gen_range(2..6);
            let gap = rng_layout.gen_range(1..3);
            let on = rng_layout.gen_range(0.0f32..1.0) < 0.75;
            if on {
                let shade: f32 = if dark {
                    rng_layout.gen_range(0.0..0.25)
                } else {
                    rng_layout.gen_range(0.75..1.0)
                };
                for yy in ry..(ry + rh).min(frame) {
                    for xx in x..(x + bw).min(frame + bw) {
                        let sx = (xx + scroll) % frame;
                        let idx = yy * frame + sx;
                        for ch in 0..3 {
                            out[ch * hw + idx] = shade;
                        }
                    }
                }
            }
            x += bw + gap;
        }
    }
    out
}

/// Applies contrast, brightness, blur, and pixel noise in place.
pub fn apply_style(frame_px: &mut [f32], frame: usize, style: &ShiftParams, rng: &mut ChaCha8Rng) {
    for v in frame_px.iter_mut() {
        *v = ((*v - 0.5) * style.contrast + 0.5) * style.brightness;
    }
    let hw = frame * frame;
    for _ in 0..style.blur_passes {
        for c in 0..3 {
            box_blur3(&mut frame_px[c * hw..(c + 1) * hw], frame);
        }
    }
    if style.pixel_noise > 0.0 {
        for v in frame_px.iter_mut() {
            *v += style.pixel_noise * (rng.gen_range(0.0f32..1.0) * 2.0 - 1.0);
        }
    }
    for v in frame_px.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

fn box_blur3(ch: &mut [f32], frame: usize) {
    let src = ch.to_vec();
    for y in 0..frame {
        for x in 0..frame {
            let mut acc = 0.0f32;
            let mut n = 0.0f32;
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let yy = y as i32 + dy;
                    let xx = x as i32 + dx;
                    if yy >= 0 && yy < frame as i32 && xx >= 0 && xx < frame as i32 {
                        acc += src[yy as usize * frame + xx as usize];
                        n += 1.0;
                    }
                }
            }
            ch[y * frame + x] = acc / n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng;

    fn style() -> ShiftParams {
        ShiftParams {
            blur_passes: 1,
            contrast: 0.9,
            brightness: 1.0,
            bg_color: [0.9, 0.9, 0.88],
            bg_jitter: 0.05,
            color_jitter: 0.1,
            pixel_noise: 0.01,
        }
    }

    #[test]
    fn rendered_frames_stay_in_unit_range() {
        let mut r = rng::stream(1, "render.test");
        for &shape in &[Shape::Circle, Shape::Triangle, Shape::Cross, Shape::Ell, Shape::Ring] {
            let st = MotionState::sample(&mut r, 32);
            let look = ItemLook::sample(&mut r, &style());
            for t in 0..4 {
                let pose = pose_at(Motion::Orbit, &st, t, 32);
                let mut px = render_shape_frame(shape, &pose, &look, 32, 0.05);
                apply_style(&mut px, 32, &style(), &mut r);
                assert!(px.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn hold_motion_gives_identical_frames() {
        let mut r = rng::stream(2, "render.hold");
        let st = MotionState::sample(&mut r, 32);
        let look = ItemLook::sample(&mut r, &style());
        let p0 = pose_at(Motion::Hold, &st, 0, 32);
        let p5 = pose_at(Motion::Hold, &st, 5, 32);
        let f0 = render_shape_frame(Shape::Square, &p0, &look, 32, 0.0);
        let f5 = render_shape_frame(Shape::Square, &p5, &look, 32, 0.0);
        assert_eq!(f0, f5);
    }

    #[test]
    fn slide_right_moves_the_shape() {
        let mut r = rng::stream(3, "render.slide");
        let st = MotionState::sample(&mut r, 32);
        let p0 = pose_at(Motion::SlideRight, &st, 0, 32);
        let p4 = pose_at(Motion::SlideRight, &st, 4, 32);
        assert!((p4.cx - p0.cx).abs() > 1.0 || (p0.cx - p4.cx).rem_euclid(32.0) > 1.0);
        assert_eq!(p0.cy, p4.cy);
    }

    #[test]
    fn clutter_scroll_shifts_pixels() {
        let mut layout = rng::stream(4, "render.clutter");
        let look = ItemLook {
            shape_rgb: [0.0; 3],
            bg_rgb: [0.85, 0.85, 0.85],
        };
        let a = render_clutter_frame(&mut layout.clone(), &look, 32, 0, 0.0);
        let b = render_clutter_frame(&mut layout, &look, 32, 3, 0.0);
        // same layout scrolled right by 3: b at x+3 equals a at x
        let hw = 32 * 32;
        let mut matched = 0;
        for y in 0..32 {
            for x in 0..32 {
                let xb = (x + 3) % 32;
                if (a[y * 32 + x] - b[y * 32 + xb]).abs() < 1e-6 {
                    matched += 1;
                }
            }
        }
        assert!(matched > hw * 9 / 10, "scroll mismatch: {matched}/{hw}");
    }
}
