//! Built-in 10-20 electrode positions on the unit sphere.
//!
//! Coordinate frame: +x right, +y front (nasion), +z up. The outer ring
//! (FP1/2, F7/8, T3/4, T5/6, O1/2) sits on the equator at 10% steps of the
//! head circumference; midline sites sit on the nasion-inion arc; F3/F4 and
//! P3/P4 are great-circle midpoints of their neighbouring sites; A1/A2 hang
//! 20 degrees below the ear points.

/// Canonical channel ordering used for deterministic iteration and for the
/// multi-channel model's channel vocabulary default.
pub const CANONICAL_ORDER: [&str; 21] = [
    "FP1", "FP2", "F3", "F4", "F7", "F8", "FZ", "CZ", "PZ", "C3", "C4", "P3", "P4", "T3", "T4",
    "T5", "T6", "O1", "O2", "A1", "A2",
];

fn equator(azimuth_deg: f64) -> [f64; 3] {
    let a = azimuth_deg.to_radians();
    [a.cos(), a.sin(), 0.0]
}

fn midline(angle_from_nasion_deg: f64) -> [f64; 3] {
    let a = angle_from_nasion_deg.to_radians();
    [0.0, a.cos(), a.sin()]
}

fn normalized_midpoint(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    let m = [
        0.5 * (a[0] + b[0]),
        0.5 * (a[1] + b[1]),
        0.5 * (a[2] + b[2]),
    ];
    let n = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
    [m[0] / n, m[1] / n, m[2] / n]
}

fn mirror_x(p: [f64; 3]) -> [f64; 3] {
    [-p[0], p[1], p[2]]
}

/// Unit-sphere position of a canonical 10-20 label, if it is a scalp site.
fn table(label: &str) -> Option<[f64; 3]> {
    let fp2 = equator(72.0);
    let f8 = equator(36.0);
    let t4 = equator(0.0);
    let t6 = equator(-36.0);
    let o2 = equator(-72.0);
    let fz = midline(54.0);
    let cz = [0.0, 0.0, 1.0];
    let pz = midline(126.0);
    let c4 = [std::f64::consts::FRAC_1_SQRT_2, 0.0, std::f64::consts::FRAC_1_SQRT_2];
    let f4 = normalized_midpoint(f8, fz);
    let p4 = normalized_midpoint(t6, pz);
    let a2 = [(20.0f64.to_radians()).cos(), 0.0, -(20.0f64.to_radians()).sin()];
    Some(match label {
        "FP1" => mirror_x(fp2),
        "FP2" => fp2,
        "F3" => mirror_x(f4),
        "F4" => f4,
        "F7" => mirror_x(f8),
        "F8" => f8,
        "FZ" => fz,
        "CZ" => cz,
        "PZ" => pz,
        "C3" => mirror_x(c4),
        "C4" => c4,
        "P3" => mirror_x(p4),
        "P4" => p4,
        "T3" => mirror_x(t4),
        "T4" => t4,
        "T5" => mirror_x(t6),
        "T6" => t6,
        "O1" => mirror_x(o2),
        "O2" => o2,
        "A1" => mirror_x(a2),
        "A2" => a2,
        _ => return None,
    })
}

/// Reduce a dataset label to its canonical 10-20 form: uppercase, strip the
/// `EEG ` prefix and `-REF`/`-LE`/`-AVG` suffixes, and fold the modern
/// T7/T8/P7/P8 names onto T3/T4/T5/T6.
pub fn canonical_label(name: &str) -> String {
    let mut s = name.trim().to_uppercase();
    if let Some(rest) = s.strip_prefix("EEG ") {
        s = rest.to_string();
    }
    for suffix in ["-REF", "-LE", "-AVG"] {
        if let Some(rest) = s.strip_suffix(suffix) {
            s = rest.to_string();
            break;
        }
    }
    match s.as_str() {
        "T7" => "T3".into(),
        "T8" => "T4".into(),
        "P7" => "T5".into(),
        "P8" => "T6".into(),
        other => other.to_string(),
    }
}

/// Position for an arbitrary dataset label, via canonicalization.
pub fn position_for(name: &str) -> Option<[f64; 3]> {
    table(&canonical_label(name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_position_is_on_the_unit_sphere() {
        for label in CANONICAL_ORDER {
            let p = table(label).unwrap_or_else(|| panic!("{label} missing"));
            let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "{label} has norm {norm}");
        }
    }

    #[test]
    fn dataset_labels_canonicalize() {
        assert_eq!(canonical_label("EEG FP1-REF"), "FP1");
        assert_eq!(canonical_label("EEG T7-LE"), "T3");
        assert_eq!(canonical_label("cz"), "CZ");
        assert_eq!(canonical_label("EEG EKG1-REF"), "EKG1");
    }

    #[test]
    fn prefixed_labels_resolve_to_same_position() {
        assert_eq!(position_for("EEG FP1-REF"), position_for("FP1"));
        assert!(position_for("EEG EKG1-REF").is_none());
        assert!(position_for("PG1").is_none());
    }

    #[test]
    fn left_right_symmetry() {
        let c3 = table("C3").unwrap();
        let c4 = table("C4").unwrap();
        assert_eq!(c3[0], -c4[0]);
        assert_eq!(c3[1], c4[1]);
        assert_eq!(c3[2], c4[2]);
    }
}
