//! Scenes shipped with the crate, addressable by name from the CLI.

use std::path::Path;

use super::config::{MeshConfig, ObstacleConfig, SceneConfig};
use super::AppError;

/// `(name, TOML text)` of every bundled scene.
pub const BUNDLED: &[(&str, &str)] = &[
    ("wind", include_str!("../../scenes/wind.toml")),
    ("slope", include_str!("../../scenes/slope.toml")),
    ("napkin_bowl", include_str!("../../scenes/napkin_bowl.toml")),
    ("sphere_sysid", include_str!("../../scenes/sphere_sysid.toml")),
    ("wind_sysid", include_str!("../../scenes/wind_sysid.toml")),
];

pub fn names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

/// Parses a bundled scene.
pub fn bundled(name: &str) -> Option<Result<SceneConfig, AppError>> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| SceneConfig::parse(text))
}

/// Loads `arg` as a config file when it exists on disk, otherwise as the name
/// of a bundled scene.
pub fn resolve(arg: &str) -> Result<SceneConfig, AppError> {
    let path = Path::new(arg);
    if path.exists() {
        return SceneConfig::load(path);
    }
    bundled(arg).unwrap_or_else(|| {
        Err(AppError::Config {
            path: arg.into(),
            message: format!("no such file and no bundled scene of that name; bundled scenes: {}", names().join(", ")),
        })
    })
}

/// The slope scene with the plane and the ribbon inclined by `theta_deg`.
pub fn slope_at(theta_deg: f64) -> SceneConfig {
    let mut cfg = bundled("slope").expect("slope is bundled").expect("bundled scenes parse");
    let t = theta_deg.to_radians();
    if let MeshConfig::Grid { rotate_deg, .. } = &mut cfg.mesh {
        *rotate_deg = [0.0, theta_deg, 0.0];
    }
    if let Some(ObstacleConfig::Plane { normal, .. }) = cfg.obstacles.first_mut() {
        *normal = [t.sin(), 0.0, t.cos()];
    }
    cfg
}
