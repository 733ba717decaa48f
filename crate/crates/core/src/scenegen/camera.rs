use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.fx > 0.0) {
            bad.push(format!("fx must be > 0 (got {})", self.fx));
        }
        if !(self.fy > 0.0) {
            bad.push(format!("fy must be > 0 (got {})", self.fy));
        }
        if !(self.cx >= 0.0 && self.cx < f64::from(self.width)) {
            bad.push(format!("cx must lie in [0, {}) (got {})", self.width, self.cx));
        }
        if !(self.cy >= 0.0 && self.cy < f64::from(self.height)) {
            bad.push(format!("cy must lie in [0, {}) (got {})", self.height, self.cy));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(bad.join("; ")))
        }
    }
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            fx: 700.0,
            fy: 700.0,
            cx: 640.0,
            cy: 480.0,
            width: 1280,
            height: 960,
        }
    }
}

/// Rigid world-to-camera transform: `p_cam = R p_world + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Camera centered at `center` (world), turned by `yaw` radians about the
    /// vertical (y) axis.
    pub fn from_center_yaw(center: [f64; 3], yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        // world->camera rotation is the transpose of the camera's orientation
        let rotation = [[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]];
        let mut translation = [0.0; 3];
        for (i, t) in translation.iter_mut().enumerate() {
            *t = -(0..3).map(|j| rotation[i][j] * center[j]).sum::<f64>();
        }
        Self {
            rotation,
            translation,
        }
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let mut out = self.translation;
        for (i, o) in out.iter_mut().enumerate() {
            *o += r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
        }
        out
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        let mut c = [0.0; 3];
        for (j, cj) in c.iter_mut().enumerate() {
            *cj = -(0..3).map(|i| r[i][j] * t[i]).sum::<f64>();
        }
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Result<Self> {
        intrinsics.validate()?;
        Ok(Self { intrinsics, pose })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    /// Whether `(u, v)` falls inside the image.
    pub in_view: bool,
}

/// Pinhole projection of a world point. Points at or behind the image plane
/// are an error; points outside the image are flagged, not rejected.
pub fn project_to_image(point: [f64; 3], camera: &CameraModel) -> Result<Projection> {
    let [x, y, z] = camera.pose.to_camera(point);
    if z <= 0.0 {
        return Err(Error::BehindCamera { depth: z });
    }
    let k = &camera.intrinsics;
    let u = k.fx * x / z + k.cx;
    let v = k.fy * y / z + k.cy;
    let in_view = u >= 0.0 && v >= 0.0 && u < f64::from(k.width) && v < f64::from(k.height);
    Ok(Projection {
        u,
        v,
        depth: z,
        in_view,
    })
}

/// Camera-frame point for pixel `(u, v)` at `depth`.
pub fn back_project(u: f64, v: f64, depth: f64, k: &Intrinsics) -> [f64; 3] {
    [(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cam() -> CameraModel {
        CameraModel::new(Intrinsics::default(), Pose::identity()).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = project_to_image([0.0, 0.0, 10.0], &cam()).unwrap();
        assert_eq!((p.u, p.v, p.depth), (640.0, 480.0, 10.0));
        assert!(p.in_view);
    }

    #[test]
    fn lateral_offset() {
        let p = project_to_image([1.0, 0.0, 10.0], &cam()).unwrap();
        assert_eq!(p.u, 710.0);
    }

    #[test]
    fn behind_camera_is_error() {
        assert!(matches!(
            project_to_image([0.0, 0.0, -1.0], &cam()),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn out_of_view_is_flagged() {
        let p = project_to_image([100.0, 0.0, 10.0], &cam()).unwrap();
        assert!(!p.in_view);
    }

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(Intrinsics::new(0.0, 700.0, 640.0, 480.0, 1280, 960).is_err());
        assert!(Intrinsics::new(700.0, 700.0, 1280.0, 480.0, 1280, 960).is_err());
    }

    #[test]
    fn pose_center_round_trip() {
        let pose = Pose::from_center_yaw([1.0, -0.5, 4.0], 0.1);
        let c = pose.center();
        for (a, b) in c.iter().zip([1.0, -0.5, 4.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let at_center = pose.to_camera([1.0, -0.5, 4.0]);
        assert!(at_center.iter().all(|v| v.abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn back_projection_recovers_point(
            x in -20.0f64..20.0, y in -10.0f64..10.0, z in 0.5f64..80.0,
            yaw in -0.3f64..0.3, cx in -3.0f64..3.0, cz in -3.0f64..3.0,
        ) {
            let camera = CameraModel::new(Intrinsics::default(), Pose::from_center_yaw([cx, 0.0, cz], yaw)).unwrap();
            let pc = camera.pose.to_camera([x, y, z]);
            prop_assume!(pc[2] > 0.1);
            let p = project_to_image([x, y, z], &camera).unwrap();
            let back = back_project(p.u, p.v, p.depth, &camera.intrinsics);
            for (a, b) in back.iter().zip(pc) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
