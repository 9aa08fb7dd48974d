use nalgebra::{Point3, Vector3};

use super::SceneDescription;
use crate::imaging::ClassId;

const EPS: f64 = 1e-9;
const CELL: f64 = 4.0;

/// Which surface a ray hit. Indices refer to the scene's primitive lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    Ground,
    Marker(usize),
    Trunk(usize),
    Canopy(usize),
    Bush(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Point3<f64>,
    pub normal: Vector3<f64>,
    pub kind: SurfaceKind,
}

/// Uniform xy grid of primitive ids. Ids `0..T` are trunks, `T..2T` canopies
/// and the rest bushes.
#[derive(Clone, Default, PartialEq)]
pub(crate) struct PrimitiveGrid {
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
    z_top: f64,
}

impl std::fmt::Debug for PrimitiveGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PrimitiveGrid {{ {}x{} }}", self.nx, self.ny)
    }
}

fn cell_range(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let a = (lo / CELL).floor();
    let b = (hi / CELL).floor();
    if b < 0.0 || a >= n as f64 {
        return None;
    }
    Some((a.max(0.0) as usize, (b as usize).min(n - 1)))
}

impl PrimitiveGrid {
    pub(crate) fn build(scene: &SceneDescription) -> Self {
        let n = ((scene.extent / CELL).ceil() as usize).max(1);
        let mut grid = Self { nx: n, ny: n, cells: vec![Vec::new(); n * n], z_top: scene.max_height() + 1.0 };
        let t = scene.trees.len();
        let mut insert = |id: usize, cx: f64, cy: f64, r: f64| {
            let (Some((x0, x1)), Some((y0, y1))) = (cell_range(cx - r, cx + r, n), cell_range(cy - r, cy + r, n))
            else {
                return;
            };
            for j in y0..=y1 {
                for i in x0..=x1 {
                    grid.cells[j * n + i].push(id as u32);
                }
            }
        };
        for (k, tree) in scene.trees.iter().enumerate() {
            insert(k, tree.trunk.center_x, tree.trunk.center_y, tree.trunk.radius);
            let c = tree.canopy.center;
            insert(t + k, c.x, c.y, tree.canopy.semi_axes.x.max(tree.canopy.semi_axes.y));
        }
        for (k, b) in scene.bushes.iter().enumerate() {
            insert(2 * t + k, b.center.x, b.center.y, b.radius);
        }
        grid
    }

    /// Primitive ids whose cells the ray crosses while above the ground.
    fn candidates(&self, scene: &SceneDescription, o: &Point3<f64>, d: &Vector3<f64>, out: &mut Vec<u32>) {
        out.clear();
        if self.cells.is_empty() {
            return;
        }
        let z_lo = scene.ground.min - 1.0;
        let (t0, t1) = if d.z.abs() < EPS {
            if o.z < z_lo || o.z > self.z_top {
                return;
            }
            (0.0, 4.0 * scene.extent)
        } else {
            let a = (self.z_top - o.z) / d.z;
            let b = (z_lo - o.z) / d.z;
            (a.min(b).max(0.0), a.max(b))
        };
        if t1 < t0 {
            return;
        }
        let (xa, xb) = (o.x + t0 * d.x, o.x + t1 * d.x);
        let (ya, yb) = (o.y + t0 * d.y, o.y + t1 * d.y);
        let (Some((x0, x1)), Some((y0, y1))) =
            (cell_range(xa.min(xb), xa.max(xb), self.nx), cell_range(ya.min(yb), ya.max(yb), self.ny))
        else {
            return;
        };
        for j in y0..=y1 {
            for i in x0..=x1 {
                out.extend_from_slice(&self.cells[j * self.nx + i]);
            }
        }
        out.sort_unstable();
        out.dedup();
    }
}

fn smallest_positive_root(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    if a.abs() < 1e-300 {
        return None;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    // numerically stable pair of roots
    let q = -0.5 * (b + b.signum() * s);
    let (mut r0, mut r1) = (q / a, if q != 0.0 { c / q } else { -b / (2.0 * a) });
    if r0 > r1 {
        std::mem::swap(&mut r0, &mut r1);
    }
    Some((r0, r1))
}

fn hit_trunk(scene: &SceneDescription, k: usize, o: &Point3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let tr = &scene.trees[k].trunk;
    let (ox, oy) = (o.x - tr.center_x, o.y - tr.center_y);
    let mut best: Option<(f64, Vector3<f64>)> = None;
    if let Some((r0, r1)) = smallest_positive_root(
        d.x * d.x + d.y * d.y,
        2.0 * (ox * d.x + oy * d.y),
        ox * ox + oy * oy - tr.radius * tr.radius,
    ) {
        for t in [r0, r1] {
            if t > EPS {
                let z = o.z + t * d.z;
                if z >= tr.base_z && z <= tr.top_z {
                    let n = Vector3::new(ox + t * d.x, oy + t * d.y, 0.0) / tr.radius;
                    best = Some((t, n));
                    break;
                }
            }
        }
    }
    if d.z.abs() > EPS {
        let t = (tr.top_z - o.z) / d.z;
        let (x, y) = (ox + t * d.x, oy + t * d.y);
        if t > EPS && x * x + y * y <= tr.radius * tr.radius && best.is_none_or(|b| t < b.0) {
            best = Some((t, Vector3::z()));
        }
    }
    best
}

fn hit_ellipsoid(
    c: &Point3<f64>,
    axes: &Vector3<f64>,
    o: &Point3<f64>,
    d: &Vector3<f64>,
) -> Option<(f64, Vector3<f64>)> {
    let oc = (o - c).component_div(axes);
    let dd = d.component_div(axes);
    let (r0, r1) = smallest_positive_root(dd.norm_squared(), 2.0 * oc.dot(&dd), oc.norm_squared() - 1.0)?;
    let t = if r0 > EPS {
        r0
    } else if r1 > EPS {
        r1
    } else {
        return None;
    };
    let p = o + t * d;
    let n = (p - c).component_div(&axes.component_mul(axes)).normalize();
    Some((t, n))
}

fn hit_ground(scene: &SceneDescription, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let g = &scene.ground;
    let f = |t: f64| o.z + t * d.z - g.height(o.x + t * d.x, o.y + t * d.y);
    if d.z >= -EPS {
        return None;
    }
    if g.max == g.min {
        let t = (g.min - o.z) / d.z;
        return (t > EPS).then_some(t);
    }
    let t_start = ((g.max - o.z) / d.z).max(0.0);
    let t_end = (g.min - o.z) / d.z;
    if t_end <= EPS || f(t_start) < 0.0 {
        return None;
    }
    // march so that the ray moves at most half a grid cell per step
    let horizontal = (d.x * d.x + d.y * d.y).sqrt();
    let span = t_end - t_start;
    let steps = ((span * horizontal) / (0.5 * g.spacing)).ceil().max(1.0) as usize;
    let (mut a, mut fa) = (t_start, f(t_start));
    for s in 1..=steps {
        let b = t_start + span * s as f64 / steps as f64;
        let fb = f(b);
        if fb <= 0.0 {
            // Illinois variant of regula falsi
            let (mut lo, mut flo, mut hi, mut fhi) = (a, fa, b, fb);
            let mut side = 0;
            for _ in 0..100 {
                let m = (lo * fhi - hi * flo) / (fhi - flo);
                let fm = f(m);
                if fm.abs() < 1e-12 || (hi - lo) < 1e-12 {
                    return Some(m);
                }
                if fm > 0.0 {
                    lo = m;
                    flo = fm;
                    if side == 1 {
                        fhi *= 0.5;
                    }
                    side = 1;
                } else {
                    hi = m;
                    fhi = fm;
                    if side == -1 {
                        flo *= 0.5;
                    }
                    side = -1;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        a = b;
        fa = fb;
    }
    None
}

fn primitive_hit(
    scene: &SceneDescription,
    id: usize,
    o: &Point3<f64>,
    d: &Vector3<f64>,
) -> Option<(f64, Vector3<f64>, SurfaceKind)> {
    let t = scene.trees.len();
    if id < t {
        hit_trunk(scene, id, o, d).map(|(s, n)| (s, n, SurfaceKind::Trunk(id)))
    } else if id < 2 * t {
        let c = &scene.trees[id - t].canopy;
        hit_ellipsoid(&c.center, &c.semi_axes, o, d).map(|(s, n)| (s, n, SurfaceKind::Canopy(id - t)))
    } else {
        let b = &scene.bushes[id - 2 * t];
        let axes = Vector3::repeat(b.radius);
        hit_ellipsoid(&b.center, &axes, o, d).map(|(s, n)| (s, n, SurfaceKind::Bush(id - 2 * t)))
    }
}

fn marker_at(scene: &SceneDescription, x: f64, y: f64) -> Option<usize> {
    scene.markers.iter().position(|m| (m.center.x - x).powi(2) + (m.center.y - y).powi(2) <= m.radius * m.radius)
}

pub(crate) fn cast(scene: &SceneDescription, o: &Point3<f64>, d: &Vector3<f64>, indexed: bool) -> Option<Hit> {
    let mut best: Option<(f64, Vector3<f64>, SurfaceKind)> = None;
    let mut consider = |h: Option<(f64, Vector3<f64>, SurfaceKind)>| {
        if let Some(h) = h {
            if best.is_none_or(|b| h.0 < b.0) {
                best = Some(h);
            }
        }
    };
    if indexed {
        thread_local! {
            static SCRATCH: std::cell::RefCell<Vec<u32>> = const { std::cell::RefCell::new(Vec::new()) };
        }
        SCRATCH.with(|s| {
            let mut ids = s.borrow_mut();
            scene.index.candidates(scene, o, d, &mut ids);
            for &id in ids.iter() {
                consider(primitive_hit(scene, id as usize, o, d));
            }
        });
    } else {
        let n = 2 * scene.trees.len() + scene.bushes.len();
        for id in 0..n {
            consider(primitive_hit(scene, id, o, d));
        }
    }
    if let Some(t) = hit_ground(scene, o, d) {
        if best.is_none_or(|b| t < b.0) {
            let p = o + t * d;
            let kind = marker_at(scene, p.x, p.y).map_or(SurfaceKind::Ground, SurfaceKind::Marker);
            best = Some((t, scene.ground.normal(p.x, p.y), kind));
        }
    }
    best.map(|(t, normal, kind)| Hit { t, point: o + t * d, normal, kind })
}

pub(crate) fn surface_classes_near(scene: &SceneDescription, p: &Point3<f64>, tolerance: f64) -> Vec<ClassId> {
    let mut dists: Vec<(f64, ClassId)> = Vec::new();
    let n = scene.ground.normal(p.x, p.y);
    let ground_class = if marker_at(scene, p.x, p.y).is_some() { ClassId::GCP_MARKER } else { ClassId::GROUND };
    dists.push(((p.z - scene.ground.height(p.x, p.y)).abs() * n.z, ground_class));
    for tree in &scene.trees {
        let tr = &tree.trunk;
        let radial = ((p.x - tr.center_x).powi(2) + (p.y - tr.center_y).powi(2)).sqrt() - tr.radius;
        let axial = (tr.base_z - p.z).max(p.z - tr.top_z).max(0.0);
        let d = if axial == 0.0 { radial.abs() } else { (radial.max(0.0).powi(2) + axial * axial).sqrt() };
        dists.push((d, ClassId::TRUNK));
        let c = &tree.canopy;
        dists.push((ellipsoid_distance(&c.center, &c.semi_axes, p), ClassId::CANOPY));
    }
    for b in &scene.bushes {
        dists.push((((p - b.center).norm() - b.radius).abs(), ClassId::UNDERSTOREY));
    }
    let nearest = dists.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
    let mut classes: Vec<ClassId> = dists.iter().filter(|d| d.0 <= nearest + tolerance).map(|d| d.1).collect();
    classes.sort();
    classes.dedup();
    classes
}

/// Radial approximation of the distance to an ellipsoid surface; exact for
/// spheres.
fn ellipsoid_distance(c: &Point3<f64>, axes: &Vector3<f64>, p: &Point3<f64>) -> f64 {
    let v = p - c;
    let k = v.component_div(axes).norm();
    if k < 1e-12 {
        return axes.min();
    }
    v.norm() * (1.0 - 1.0 / k).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn indexed_cast_matches_brute_force() {
        let params = SceneParams { extent: 60.0, tree_count: 25, bush_count: 30, ..SceneParams::default() };
        let scene = generate_scene(11, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3000 {
            let o =
                Point3::new(rng.random_range(-10.0..70.0), rng.random_range(-10.0..70.0), rng.random_range(25.0..60.0));
            let d = Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), -1.0).normalize();
            let a = scene.cast_ray(&o, &d);
            let b = scene.cast_ray_brute_force(&o, &d);
            assert_eq!(a.map(|h| h.kind), b.map(|h| h.kind));
            if let (Some(a), Some(b)) = (a, b) {
                assert!((a.t - b.t).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ground_hit_lies_on_heightfield() {
        let scene = generate_scene(4, &SceneParams { tree_count: 0, bush_count: 0, ..SceneParams::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let o = Point3::new(rng.random_range(0.0..165.0), rng.random_range(0.0..165.0), 75.0);
            let d = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), -1.0).normalize();
            let h = scene.cast_ray(&o, &d).unwrap();
            assert!((h.point.z - scene.ground.height(h.point.x, h.point.y)).abs() < 1e-8);
        }
    }

    #[test]
    fn ellipsoid_normal_points_outward() {
        let c = Point3::new(0.0, 0.0, 10.0);
        let axes = Vector3::new(2.0, 2.0, 1.0);
        let (t, n) = hit_ellipsoid(&c, &axes, &Point3::new(0.0, 0.0, 20.0), &-Vector3::z()).unwrap();
        assert!((t - 9.0).abs() < 1e-12);
        assert!((n - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn nearest_surface_prefers_canopy_over_far_ground() {
        let params =
            SceneParams { extent: 40.0, tree_count: 1, bush_count: 0, ground_amplitude: 0.0, ..SceneParams::default() };
        let scene = generate_scene(1, &params).unwrap();
        let c = scene.trees[0].canopy;
        let top = c.center + Vector3::new(0.0, 0.0, c.semi_axes.z);
        assert_eq!(scene.surface_classes_near(&top, 0.5), vec![ClassId::CANOPY]);
        let ground = Point3::new(c.center.x + c.semi_axes.x + 5.0, c.center.y, 0.0);
        if ground.x < 40.0 {
            assert_eq!(scene.surface_classes_near(&ground, 0.5), vec![ClassId::GROUND]);
        }
    }
}
