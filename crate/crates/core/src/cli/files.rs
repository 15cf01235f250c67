//! File formats. IMU streams are `t,gx,gy,gz,ax,ay,az` in SI units;
//! trajectories are `t,x,y,z,roll,pitch,yaw` with angles in degrees. Every
//! write goes to a temporary file in the target directory first and is
//! renamed into place.

use super::config::AppConfig;
use super::CliError;
use crate::geom::Vec3;
use crate::model::{ImuRole, ImuSample, Mode, TrajPoint, Trajectory, Topology};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize, Deserialize)]
struct ImuRecord {
    t: f64,
    gx: f64,
    gy: f64,
    gz: f64,
    ax: f64,
    ay: f64,
    az: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajRecord {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    roll: f64,
    pitch: f64,
    yaw: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644)).map_err(io_err(path))?;
    }
    tmp.persist(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| CliError::Format { path: path.to_path_buf(), reason: format!("record {}: {e}", i + 1) }))
        .collect()
}

pub fn write_imu(path: &Path, samples: &[ImuSample]) -> Result<(), CliError> {
    let rows = samples.iter().map(|s| ImuRecord {
        t: s.t,
        gx: s.gyro.x,
        gy: s.gyro.y,
        gz: s.gyro.z,
        ax: s.accel.x,
        ay: s.accel.y,
        az: s.accel.z,
    });
    write_atomic(path, &to_csv(rows))
}

pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>, CliError> {
    let rows: Vec<ImuRecord> = read_csv(path)?;
    let out: Vec<ImuSample> = rows.into_iter().map(|r| ImuSample::new(r.t, Vec3::new(r.gx, r.gy, r.gz), Vec3::new(r.ax, r.ay, r.az))).collect();
    if let Some(k) = out.iter().position(|s| !s.is_finite()) {
        return Err(CliError::Format { path: path.to_path_buf(), reason: format!("record {}: non-finite value", k + 1) });
    }
    Ok(out)
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let rows = traj.iter().map(|p| TrajRecord {
        t: p.t,
        x: p.pos.x,
        y: p.pos.y,
        z: p.pos.z,
        roll: p.euler.x.to_degrees(),
        pitch: p.euler.y.to_degrees(),
        yaw: p.euler.z.to_degrees(),
    });
    write_atomic(path, &to_csv(rows))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    let rows: Vec<TrajRecord> = read_csv(path)?;
    Ok(rows
        .into_iter()
        .map(|r| TrajPoint {
            t: r.t,
            pos: Vec3::new(r.x, r.y, r.z),
            euler: Vec3::new(r.roll.to_radians(), r.pitch.to_radians(), r.yaw.to_radians()),
        })
        .collect())
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let s = toml::to_string(value).map_err(|e| CliError::Format { path: path.to_path_buf(), reason: e.to_string() })?;
    write_atomic(path, s.as_bytes())
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let s = std::fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&s).map_err(|e| CliError::Format { path: path.to_path_buf(), reason: e.to_string() })
}

/// Inputs of a filter run. Written by `simulate`, or by hand for recorded
/// data. Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// External configuration file; applied over `config`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<Topology>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    /// IMU stream per role name (`left_wheel`, `right_wheel`, `body`).
    pub streams: BTreeMap<ImuRole, PathBuf>,
    /// Configuration the inputs were produced with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<AppConfig>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let m: Self = read_toml(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, dir))
    }

    /// Stream files for `topology`, in its role order. Fails naming the
    /// first role without a stream, then the first missing file.
    pub fn stream_paths(&self, dir: &Path, topology: Topology) -> Result<Vec<PathBuf>, CliError> {
        let paths = topology
            .roles()
            .iter()
            .map(|role| {
                self.streams.get(role).map(|p| (role, dir.join(p))).ok_or_else(|| {
                    CliError::Validation(format!("topology {} needs a {} stream; the manifest has none", topology.name(), role.name()))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        for (role, p) in &paths {
            if !p.is_file() {
                return Err(CliError::Io {
                    path: p.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} stream not found", role.name())),
                });
            }
        }
        Ok(paths.into_iter().map(|(_, p)| p).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imu_and_trajectory_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<ImuSample> =
            (0..5).map(|k| ImuSample::new(k as f64 * 0.005, Vec3::new(0.1, -0.2, 1.0 / 3.0), Vec3::new(0.0, 1e-9, -9.8))).collect();
        let p = dir.path().join("imu.csv");
        write_imu(&p, &samples).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("t,gx,gy,gz,ax,ay,az\n"));
        assert_eq!(read_imu(&p).unwrap(), samples);

        let traj: Trajectory =
            (0..4).map(|k| TrajPoint { t: k as f64, pos: Vec3::new(1.0, 2.0, 3.0 * k as f64), euler: Vec3::new(0.01, -0.02, 3.0) }).collect();
        let p = dir.path().join("traj.csv");
        write_trajectory(&p, &traj).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("t,x,y,z,roll,pitch,yaw\n"));
        let back = read_trajectory(&p).unwrap();
        for (a, b) in back.iter().zip(&traj) {
            assert_eq!((a.t, a.pos), (b.t, b.pos));
            assert!((a.euler - b.euler).amax() < 1e-15);
        }
    }

    #[test]
    fn atomic_write_replaces_without_leftovers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn malformed_stream_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "t,gx,gy,gz,ax,ay,az\n0,1,2,3,4,5\n").unwrap();
        let err = read_imu(&p).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }

    #[test]
    fn manifest_names_missing_role() {
        let m = RunManifest {
            config_file: None,
            seed: None,
            topology: None,
            mode: None,
            out: None,
            truth: None,
            streams: BTreeMap::from([(ImuRole::LeftWheel, PathBuf::from("l.csv"))]),
            config: None,
        };
        let err = m.stream_paths(Path::new("."), Topology::BodyWheel).unwrap_err();
        assert!(err.to_string().contains("body"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}
