use serde::Serialize;

use crate::error::{invalid, Result};
use crate::util::sha256_hex;

/// Measured frontal electrodes, in row order.
pub const SOURCE_NAMES: [&str; 4] = ["Fp1", "Fp2", "F7", "F8"];

/// Estimated electrodes, in row order.
pub const TARGET_NAMES: [&str; 13] = [
    "F3", "Fz", "F4", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz", "P4", "T6",
];

/// Electrode position as `(inclination from vertex, azimuth from nose towards the right ear)` in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Angles {
    pub inclination: f64,
    pub azimuth: f64,
}

/// Channel geometry: unit-sphere points and their azimuthal-equidistant projection.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Montage {
    names: Vec<String>,
    xyz: Vec<[f64; 3]>,
    plane: Vec<[f64; 2]>,
    sources: Vec<usize>,
    targets: Vec<usize>,
}

fn from_angles(a: Angles) -> [f64; 3] {
    let (inc, az) = (a.inclination.to_radians(), a.azimuth.to_radians());
    [inc.sin() * az.sin(), inc.sin() * az.cos(), inc.cos()]
}

fn normalized_sum(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    let s = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
    let n = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
    [s[0] / n, s[1] / n, s[2] / n]
}

/// Azimuthal-equidistant projection centred on the vertex: radius equals inclination in radians.
pub fn project(p: [f64; 3]) -> [f64; 2] {
    let inc = p[2].clamp(-1.0, 1.0).acos();
    let az = p[0].atan2(p[1]);
    if inc == 0.0 {
        return [0.0, 0.0];
    }
    [inc * az.sin(), inc * az.cos()]
}

impl Montage {
    /// Builds a montage from named unit-sphere points; sources and targets select rows by name.
    pub fn new(points: Vec<(String, [f64; 3])>, sources: &[&str], targets: &[&str]) -> Result<Self> {
        let mut names = Vec::with_capacity(points.len());
        let mut xyz = Vec::with_capacity(points.len());
        for (name, p) in points {
            if names.contains(&name) {
                return Err(invalid(format!("duplicate electrode `{name}`")));
            }
            let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if !(norm > 0.0) {
                return Err(invalid(format!("electrode `{name}` has no direction")));
            }
            names.push(name);
            xyz.push([p[0] / norm, p[1] / norm, p[2] / norm]);
        }
        let lookup = |set: &[&str]| -> Result<Vec<usize>> {
            set.iter()
                .map(|s| {
                    names
                        .iter()
                        .position(|n| n == s)
                        .ok_or_else(|| invalid(format!("electrode `{s}` missing from montage")))
                })
                .collect()
        };
        let sources = lookup(sources)?;
        let targets = lookup(targets)?;
        let plane = xyz.iter().map(|&p| project(p)).collect();
        Ok(Self {
            names,
            xyz,
            plane,
            sources,
            targets,
        })
    }

    /// Built-in 10-20 layout. Rim electrodes sit on the 90 degree circle at
    /// 36 degree steps from Fp1/Fp2; Fz, Pz, C3, C4 sit halfway between the
    /// vertex and the rim; F3, F4, P3, P4 are the normalized midpoints of
    /// their lateral and midline neighbours.
    pub fn standard() -> Self {
        let ang = |inclination, azimuth| from_angles(Angles { inclination, azimuth });
        let fp1 = ang(90.0, -18.0);
        let fp2 = ang(90.0, 18.0);
        let f7 = ang(90.0, -54.0);
        let f8 = ang(90.0, 54.0);
        let t3 = ang(90.0, -90.0);
        let t4 = ang(90.0, 90.0);
        let t5 = ang(90.0, -126.0);
        let t6 = ang(90.0, 126.0);
        let cz = ang(0.0, 0.0);
        let fz = ang(45.0, 0.0);
        let pz = ang(45.0, 180.0);
        let c3 = ang(45.0, -90.0);
        let c4 = ang(45.0, 90.0);
        let f3 = normalized_sum(f7, fz);
        let f4 = normalized_sum(f8, fz);
        let p3 = normalized_sum(t5, pz);
        let p4 = normalized_sum(t6, pz);
        let table = [
            ("Fp1", fp1),
            ("Fp2", fp2),
            ("F7", f7),
            ("F8", f8),
            ("F3", f3),
            ("Fz", fz),
            ("F4", f4),
            ("T3", t3),
            ("C3", c3),
            ("Cz", cz),
            ("C4", c4),
            ("T4", t4),
            ("T5", t5),
            ("P3", p3),
            ("Pz", pz),
            ("P4", p4),
            ("T6", t6),
        ];
        Self::new(
            table.iter().map(|(n, p)| (n.to_string(), *p)).collect(),
            &SOURCE_NAMES,
            &TARGET_NAMES,
        )
        .expect("built-in montage is valid")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn xyz(&self, i: usize) -> [f64; 3] {
        self.xyz[i]
    }

    pub fn plane(&self, i: usize) -> [f64; 2] {
        self.plane[i]
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn source_names(&self) -> Vec<&str> {
        self.sources.iter().map(|&i| self.names[i].as_str()).collect()
    }

    pub fn target_names(&self) -> Vec<&str> {
        self.targets.iter().map(|&i| self.names[i].as_str()).collect()
    }

    /// Straight-line distance between two electrodes on the unit sphere.
    pub fn chord(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.xyz[i], self.xyz[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    pub fn cos_angle(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.xyz[i], self.xyz[j]);
        (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0)
    }

    /// Squared distance between projected 2-D positions.
    pub fn plane_dist2(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.plane[i], self.plane[j]);
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
    }

    /// Stable hash of names and coordinates (12 significant digits).
    pub fn fingerprint(&self) -> String {
        let mut text = String::new();
        for (n, p) in self.names.iter().zip(&self.xyz) {
            text.push_str(&format!("{n}:{:.12e},{:.12e},{:.12e};", p[0], p[1], p[2]));
        }
        sha256_hex(text.as_bytes())
    }
}
