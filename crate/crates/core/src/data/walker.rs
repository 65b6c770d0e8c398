//! Procedural walking figure used as a stand-in for restricted gait corpora.
//!
//! A subject is a set of body proportions and gait dynamics drawn from a
//! seed. The body is articulated in 3-D (lateral `x`, vertical `y`, forward
//! `z`), projected onto the image plane of a camera at `view_deg` (90° is the
//! side view), and rasterised as a union of capsules.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sequence::{Condition, SilhouetteSequence};

/// Body proportions (in units of standing height) and gait dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkerSpec {
    pub subject_seed: u64,
    pub thigh: f64,
    pub shin: f64,
    pub torso: f64,
    pub head_radius: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub hip_half_width: f64,
    pub shoulder_half_width: f64,
    pub torso_half_width: f64,
    pub torso_half_depth: f64,
    pub limb_thickness: f64,
    /// Gait cycles per frame.
    pub stride_frequency: f64,
    /// Peak hip swing in radians.
    pub stride_amplitude: f64,
    pub knee_amplitude: f64,
    pub arm_amplitude: f64,
    pub sway_amplitude: f64,
    pub bob_amplitude: f64,
    pub bag: bool,
    pub coat: bool,
}

impl WalkerSpec {
    /// Draws a subject from `subject_seed`. Identical seeds give identical specs.
    pub fn from_seed(subject_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(subject_seed ^ 0x5eed_0f_9a17);
        Self {
            subject_seed,
            thigh: rng.gen_range(0.21..0.29),
            shin: rng.gen_range(0.20..0.28),
            torso: rng.gen_range(0.27..0.35),
            head_radius: rng.gen_range(0.052..0.072),
            upper_arm: rng.gen_range(0.15..0.20),
            forearm: rng.gen_range(0.13..0.18),
            hip_half_width: rng.gen_range(0.055..0.09),
            shoulder_half_width: rng.gen_range(0.10..0.145),
            torso_half_width: rng.gen_range(0.095..0.14),
            torso_half_depth: rng.gen_range(0.06..0.10),
            limb_thickness: rng.gen_range(0.8..1.25),
            // whole-frame periods keep clips exactly cyclic
            stride_frequency: 1.0 / rng.gen_range(18..=32) as f64,
            stride_amplitude: rng.gen_range(0.30..0.60),
            knee_amplitude: rng.gen_range(0.3..0.75),
            arm_amplitude: rng.gen_range(0.15..0.65),
            sway_amplitude: rng.gen_range(0.005..0.035),
            bob_amplitude: rng.gen_range(0.008..0.03),
            bag: false,
            coat: false,
        }
    }

    /// Same walker with the covariate flags of `condition`.
    pub fn with_condition(&self, condition: Condition) -> Self {
        Self { bag: condition == Condition::Bg, coat: condition == Condition::Cl, ..self.clone() }
    }

    fn leg(&self) -> f64 {
        self.thigh + self.shin
    }

    /// Standing height before normalisation.
    fn raw_height(&self) -> f64 {
        self.leg() + self.torso + 0.03 + 2.0 * self.head_radius
    }
}

/// Raster target for the walker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Canvas {
    pub height: usize,
    pub width: usize,
    /// Standing body height in pixels.
    pub body_px: f64,
    /// Rows of empty space below the feet.
    pub floor_margin: f64,
}

impl Default for Canvas {
    fn default() -> Self {
        Self { height: 128, width: 88, body_px: 104.0, floor_margin: 10.0 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Capsule {
    a: [f64; 2],
    b: [f64; 2],
    r: f64,
}

/// Per-sequence variation drawn from the phase seed.
struct SequenceJitter {
    phase: f64,
    amplitude: f64,
}

impl SequenceJitter {
    fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0fa5_e5eed);
        Self { phase: rng.gen_range(0.0..1.0), amplitude: rng.gen_range(0.95..1.05) }
    }
}

/// 3-D point → image-plane `(u, v)` for a camera at `view_deg`; `v` points up.
fn project(p: [f64; 3], cos_v: f64, sin_v: f64) -> [f64; 2] {
    [p[0] * cos_v + p[2] * sin_v, p[1]]
}

fn limb(origin: [f64; 3], length: f64, angle: f64) -> [f64; 3] {
    [origin[0], origin[1] - length * angle.cos(), origin[2] + length * angle.sin()]
}

/// Body capsules at gait phase `phi` (radians), in normalised body units.
fn pose(spec: &WalkerSpec, phi: f64, amp: f64, view_deg: f64) -> Vec<Capsule> {
    let (sin_v, cos_v) = view_deg.to_radians().sin_cos();
    let h = spec.raw_height();
    let s = |v: f64| v / h;
    let th = spec.limb_thickness;
    let coat: f64 = if spec.coat { 1.35 } else { 1.0 };

    let sway = s(spec.sway_amplitude) * phi.sin();
    let hip_y = s(spec.leg()) * (1.0 - spec.bob_amplitude * 0.5 * (1.0 + (2.0 * phi).cos()));
    let neck_y = hip_y + s(spec.torso);
    let hip_c = [sway, hip_y, 0.0];
    let neck_c = [sway, neck_y, 0.0];
    let mut caps = Vec::with_capacity(14);
    let mut push = |a: [f64; 3], b: [f64; 3], r: f64| {
        caps.push(Capsule { a: project(a, cos_v, sin_v), b: project(b, cos_v, sin_v), r })
    };

    for side in [1.0, -1.0] {
        // legs: the left leg (side +1) leads at phi = π/2
        let hip_angle = side * amp * spec.stride_amplitude * phi.sin();
        let offset = if side > 0.0 { 0.0 } else { PI };
        let knee = amp * spec.knee_amplitude * 0.5 * (1.0 - (phi + offset).cos());
        let hip = [sway + side * s(spec.hip_half_width), hip_y, 0.0];
        let knee_p = limb(hip, s(spec.thigh), hip_angle);
        let ankle = limb(knee_p, s(spec.shin), hip_angle - knee);
        let toe = [ankle[0], ankle[1] - 0.01, ankle[2] + 0.06];
        push(hip, knee_p, 0.05 * th * if spec.coat { 1.15 } else { 1.0 });
        push(knee_p, ankle, 0.04 * th);
        push(ankle, toe, 0.025 * th);

        // arms swing against the same-side leg
        let arm_angle = -side * amp * spec.arm_amplitude * phi.sin();
        let shoulder = [sway + side * s(spec.shoulder_half_width), neck_y - 0.02, 0.0];
        let elbow = limb(shoulder, s(spec.upper_arm), arm_angle);
        let hand = limb(elbow, s(spec.forearm), arm_angle + 0.25);
        push(shoulder, elbow, 0.037 * th * coat.sqrt());
        push(elbow, hand, 0.032 * th);
    }

    let (a, b) = (s(spec.torso_half_width) * coat, s(spec.torso_half_depth) * coat);
    let torso_r = ((a * cos_v).powi(2) + (b * sin_v).powi(2)).sqrt();
    let torso_bottom = if spec.coat { [sway, hip_y - s(0.16), 0.0] } else { hip_c };
    push(torso_bottom, [neck_c[0], neck_c[1] - torso_r * 0.5, 0.0], torso_r);
    let head_r = s(spec.head_radius);
    let head_c = [sway, neck_y + 0.03 / h + head_r, 0.0];
    push(neck_c, head_c, 0.03 * th);
    push(head_c, head_c, head_r);

    if spec.bag {
        let bag_c = [sway + s(spec.shoulder_half_width) + 0.06, hip_y + 0.04, -0.03];
        push(bag_c, [bag_c[0], bag_c[1] - 0.06, bag_c[2] + 0.02], 0.085);
    }
    caps
}

fn seg_dist2(p: [f64; 2], c: &Capsule) -> f64 {
    let d = [c.b[0] - c.a[0], c.b[1] - c.a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - c.a[0]) * d[0] + (p[1] - c.a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    };
    let q = [c.a[0] + t * d[0] - p[0], c.a[1] + t * d[1] - p[1]];
    q[0] * q[0] + q[1] * q[1]
}

fn rasterise(caps: &[Capsule], canvas: &Canvas, out: &mut [u8]) {
    let floor = canvas.height as f64 - canvas.floor_margin;
    let cx = canvas.width as f64 / 2.0;
    let to_px = |p: [f64; 2]| [cx + p[0] * canvas.body_px, floor - p[1] * canvas.body_px];
    for c in caps {
        let (pa, pb) = (to_px(c.a), to_px(c.b));
        let rp = c.r * canvas.body_px;
        let r0 = ((pa[1].min(pb[1]) - rp).floor().max(0.0)) as usize;
        let r1 = ((pa[1].max(pb[1]) + rp).ceil().min(canvas.height as f64 - 1.0)).max(0.0) as usize;
        let c0 = ((pa[0].min(pb[0]) - rp).floor().max(0.0)) as usize;
        let c1 = ((pa[0].max(pb[0]) + rp).ceil().min(canvas.width as f64 - 1.0)).max(0.0) as usize;
        let cap_px = Capsule { a: pa, b: pb, r: rp };
        for row in r0..=r1 {
            for col in c0..=c1 {
                if seg_dist2([col as f64, row as f64], &cap_px) <= rp * rp {
                    out[row * canvas.width + col] = 255;
                }
            }
        }
    }
}

/// Renders `num_frames` binary frames of the walker seen from `view_deg`.
pub fn render_walker_sequence(spec: &WalkerSpec, view_deg: u32, num_frames: usize, phase_seed: u64, canvas: &Canvas) -> Vec<u8> {
    let jitter = SequenceJitter::from_seed(phase_seed);
    let n = canvas.height * canvas.width;
    let mut frames = vec![0u8; n * num_frames];
    for t in 0..num_frames {
        let phi = 2.0 * PI * (spec.stride_frequency * t as f64 + jitter.phase);
        let caps = pose(spec, phi, jitter.amplitude, view_deg as f64);
        rasterise(&caps, canvas, &mut frames[t * n..(t + 1) * n]);
    }
    frames
}

/// Unaligned synthetic sequence on the default canvas. Deterministic in all arguments.
pub fn generate_walker_sequence(spec: &WalkerSpec, view_deg: u32, num_frames: usize, phase_seed: u64) -> SilhouetteSequence {
    let canvas = Canvas::default();
    let condition = if spec.bag {
        Condition::Bg
    } else if spec.coat {
        Condition::Cl
    } else {
        Condition::Nm
    };
    SilhouetteSequence {
        subject_id: 0,
        view_deg,
        condition,
        seq_index: 0,
        height: canvas.height,
        width: canvas.width,
        frames: render_walker_sequence(spec, view_deg, num_frames, phase_seed, &canvas),
    }
}
