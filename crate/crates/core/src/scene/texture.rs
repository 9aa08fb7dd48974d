//! Deterministic lattice value noise evaluated in world coordinates, so the
//! same surface point has the same albedo in every view.

fn hash(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub(crate) fn unit_hash(seed: u64, a: i64, b: i64, c: i64) -> f64 {
    let h = hash(seed ^ hash(a as u64 ^ hash(b as u64 ^ hash(c as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(seed: u64, x: f64, y: f64, z: f64) -> f64 {
    let (x0, y0, z0) = (x.floor(), y.floor(), z.floor());
    let (tx, ty, tz) = (smooth(x - x0), smooth(y - y0), smooth(z - z0));
    let (ix, iy, iz) = (x0 as i64, y0 as i64, z0 as i64);
    let corner = |dx: i64, dy: i64, dz: i64| unit_hash(seed, ix + dx, iy + dy, iz + dz);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let x00 = lerp(corner(0, 0, 0), corner(1, 0, 0), tx);
    let x10 = lerp(corner(0, 1, 0), corner(1, 1, 0), tx);
    let x01 = lerp(corner(0, 0, 1), corner(1, 0, 1), tx);
    let x11 = lerp(corner(0, 1, 1), corner(1, 1, 1), tx);
    lerp(lerp(x00, x10, ty), lerp(x01, x11, ty), tz)
}

/// Fractal value noise in `[0, 1]`, with features of roughly `scale` meters
/// down to an eighth of that.
pub(crate) fn fbm(seed: u64, p: [f64; 3], scale: f64) -> f64 {
    let mut total = 0.0;
    let mut amp = 1.0;
    let mut norm = 0.0;
    let mut f = 1.0 / scale;
    for octave in 0..4u64 {
        total += amp * value_noise(seed.wrapping_add(octave), p[0] * f, p[1] * f, p[2] * f);
        norm += amp;
        amp *= 0.55;
        f *= 2.0;
    }
    total / norm
}
