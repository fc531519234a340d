//! Results CSV in the BOP submission format.

use std::fmt::Write as _;
use std::path::Path;

use super::BopError;
use crate::Pose;

pub const RESULTS_HEADER: &str = "scene_id,im_id,obj_id,score,R,t,time";

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub scene_id: u32,
    pub im_id: u32,
    pub obj_id: u32,
    pub score: f64,
    pub pose: Pose,
    /// Seconds; `-1` when not measured.
    pub time: f64,
}

fn num(x: f64) -> String {
    // "-0" reads back fine but is noise in a diff
    if x == 0.0 { "0".to_string() } else { x.to_string() }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|&x| num(x)).collect::<Vec<_>>().join(" ")
}

/// Sorted by (scene, image, object), then by descending score.
pub fn write_results_csv(estimates: &[EstimateRecord], path: &Path) -> Result<(), BopError> {
    let mut sorted: Vec<&EstimateRecord> = estimates.iter().collect();
    sorted.sort_by(|a, b| {
        (a.scene_id, a.im_id, a.obj_id).cmp(&(b.scene_id, b.im_id, b.obj_id)).then(b.score.total_cmp(&a.score))
    });
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for e in sorted {
        writeln!(
            out,
            "{},{},{},{:?},{},{},{:?}",
            e.scene_id,
            e.im_id,
            e.obj_id,
            e.score,
            join(&e.pose.rotation_row_major()),
            join(&e.pose.translation_array()),
            e.time
        )
        .expect("write to string");
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| BopError::Io { path: dir.display().to_string(), source })?;
    }
    std::fs::write(path, out).map_err(|source| BopError::Io { path: path.display().to_string(), source })
}

pub fn read_results_csv(path: &Path) -> Result<Vec<EstimateRecord>, BopError> {
    if !path.exists() {
        return Err(BopError::MissingFile { path: path.to_path_buf() });
    }
    let text = std::fs::read_to_string(path).map_err(|source| BopError::Io { path: path.display().to_string(), source })?;
    let err = |line: usize, msg: String| BopError::Csv { path: path.display().to_string(), line, msg };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RESULTS_HEADER => {}
        _ => return Err(err(1, format!("expected header '{RESULTS_HEADER}'"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(err(i + 1, format!("expected 7 fields, got {}", f.len())));
        }
        let int = |s: &str, name: &str| s.trim().parse::<u32>().map_err(|_| err(i + 1, format!("bad {name} '{s}'")));
        let float = |s: &str, name: &str| s.trim().parse::<f64>().map_err(|_| err(i + 1, format!("bad {name} '{s}'")));
        let list = |s: &str, name: &str, n: usize| -> Result<Vec<f64>, BopError> {
            let v = s.split_whitespace().map(|x| float(x, name)).collect::<Result<Vec<_>, _>>()?;
            if v.len() != n {
                return Err(err(i + 1, format!("{name} needs {n} values, got {}", v.len())));
            }
            Ok(v)
        };
        let r = list(f[4], "R", 9)?;
        let t = list(f[5], "t", 3)?;
        let rm = nalgebra::Matrix3::from_row_slice(&r);
        let tv = nalgebra::Vector3::new(t[0], t[1], t[2]);
        let pose = Pose::new(rm, tv)
            .or_else(|_| Pose::from_approx_rotation(rm, tv))
            .map_err(|e| err(i + 1, format!("bad pose: {e}")))?;
        out.push(EstimateRecord {
            scene_id: int(f[0], "scene_id")?,
            im_id: int(f[1], "im_id")?,
            obj_id: int(f[2], "obj_id")?,
            score: float(f[3], "score")?,
            pose,
            time: float(f[6], "time")?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_rotation;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_line_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let e = EstimateRecord {
            scene_id: 1,
            im_id: 1,
            obj_id: 5,
            score: 1.0,
            pose: Pose::from_translation(Vector3::new(0.0, 0.0, 1000.0)),
            time: 0.2,
        };
        write_results_csv(&[e], &p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "scene_id,im_id,obj_id,score,R,t,time\n1,1,5,1.0,1 0 0 0 1 0 0 0 1,0 0 1000,0.2\n"
        );
    }

    #[test]
    fn empty_list_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_results_csv(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), format!("{RESULTS_HEADER}\n"));
        assert!(read_results_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn roundtrip_is_exact_and_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let recs: Vec<EstimateRecord> = (0..40)
            .map(|i| EstimateRecord {
                scene_id: rng.random_range(1..4),
                im_id: rng.random_range(0..5),
                obj_id: rng.random_range(1..3),
                score: i as f64 / 40.0,
                pose: Pose::new(random_rotation(&mut rng), Vector3::new(rng.random(), rng.random(), 700.0 + rng.random::<f64>()))
                    .unwrap(),
                time: -1.0,
            })
            .collect();
        write_results_csv(&recs, &p).unwrap();
        let back = read_results_csv(&p).unwrap();
        let mut expect = recs.clone();
        expect.sort_by(|a, b| (a.scene_id, a.im_id, a.obj_id).cmp(&(b.scene_id, b.im_id, b.obj_id)).then(b.score.total_cmp(&a.score)));
        assert_eq!(back, expect);
    }

    #[test]
    fn malformed_lines_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, format!("{RESULTS_HEADER}\n1,1,5,1.0,1 0 0,0 0 1000,0.2\n")).unwrap();
        assert!(matches!(read_results_csv(&p), Err(BopError::Csv { line: 2, .. })));
    }
}
