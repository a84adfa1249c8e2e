/// Semantic classes of generated scenes.
pub const GROUND: i32 = 0;
pub const BUILDING: i32 = 1;
pub const VEHICLE: i32 = 2;
pub const VEGETATION: i32 = 3;

pub const CLASS_NAMES: [&str; 4] = ["ground", "building", "vehicle", "vegetation"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// Axis-aligned box.
    Cuboid { min: [f64; 3], max: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
    /// Cylinder with a vertical (y) axis through `(x, z)`, spanning `y0..y1`.
    Column { x: f64, z: f64, radius: f64, y0: f64, y1: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Solid {
    pub shape: Shape,
    pub class: i32,
    pub albedo: [f32; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: [f64; 3],
    pub class: i32,
    pub albedo: [f32; 3],
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

impl Shape {
    /// Nearest positive hit distance along `origin + t·dir` and the surface normal.
    pub fn intersect(&self, o: [f64; 3], d: [f64; 3]) -> Option<(f64, [f64; 3])> {
        const EPS: f64 = 1e-9;
        match *self {
            Shape::Cuboid { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                let mut axis = 0;
                for k in 0..3 {
                    if d[k].abs() < EPS {
                        if o[k] < min[k] || o[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((min[k] - o[k]) / d[k], (max[k] - o[k]) / d[k]);
                    let (near, far) = if a < b { (a, b) } else { (b, a) };
                    if near > t0 {
                        t0 = near;
                        axis = k;
                    }
                    t1 = t1.min(far);
                }
                if t0 > t1 || t0 <= EPS {
                    return None;
                }
                let mut n = [0.0; 3];
                n[axis] = -d[axis].signum();
                Some((t0, n))
            }
            Shape::Sphere { center, radius } => {
                let oc = [o[0] - center[0], o[1] - center[1], o[2] - center[2]];
                let a = dot(d, d);
                let b = dot(oc, d);
                let c = dot(oc, oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / a;
                if t <= EPS {
                    return None;
                }
                let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
                Some((t, normalize([p[0] - center[0], p[1] - center[1], p[2] - center[2]])))
            }
            Shape::Column { x, z, radius, y0, y1 } => {
                let (ox, oz) = (o[0] - x, o[2] - z);
                let a = d[0] * d[0] + d[2] * d[2];
                if a < EPS {
                    return None;
                }
                let b = ox * d[0] + oz * d[2];
                let c = ox * ox + oz * oz - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / a;
                if t <= EPS {
                    return None;
                }
                let y = o[1] + t * d[1];
                if y < y0 || y > y1 {
                    return None;
                }
                let (px, pz) = (ox + t * d[0], oz + t * d[2]);
                Some((t, normalize([px, 0.0, pz])))
            }
        }
    }
}

/// Ground plane at `y = ground_y` (y points down) plus solids.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub ground_y: f64,
    pub ground_albedo: [f32; 3],
    pub solids: Vec<Solid>,
}

impl World {
    pub fn cast(&self, o: [f64; 3], d: [f64; 3]) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        if d[1] > 1e-9 {
            let t = (self.ground_y - o[1]) / d[1];
            if t > 0.0 {
                best = Some(Hit {
                    t,
                    normal: [0.0, -1.0, 0.0],
                    class: GROUND,
                    albedo: self.ground_albedo,
                });
            }
        }
        for s in &self.solids {
            if let Some((t, normal)) = s.shape.intersect(o, d) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit {
                        t,
                        normal,
                        class: s.class,
                        albedo: s.albedo,
                    });
                }
            }
        }
        best
    }
}
