use std::ops::{Add, Mul, Sub};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub fn x(self) -> f64 {
        self.0[0]
    }
    pub fn y(self) -> f64 {
        self.0[1]
    }
    pub fn z(self) -> f64 {
        self.0[2]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        Vec3([self.0[0] / n, self.0[1] / n, self.0[2] / n])
    }

    /// Unit direction for `(longitude°, latitude°)`.
    pub fn from_lonlat(lon: f64, lat: f64) -> Vec3 {
        let (lon, lat) = (lon.to_radians(), lat.to_radians());
        Vec3([lat.cos() * lon.sin(), lat.sin(), lat.cos() * lon.cos()])
    }

    /// `(longitude°, latitude°)` of a (not necessarily unit) direction.
    pub fn lonlat(self) -> (f64, f64) {
        let n = self.norm();
        let lon = self.x().atan2(self.z()).to_degrees();
        let lat = (self.y() / n).clamp(-1.0, 1.0).asin().to_degrees();
        (lon, lat)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Rotation about `+y` taking `+z` toward `+x`.
    pub fn yaw(deg: f64) -> Mat3 {
        let (s, c) = deg.to_radians().sin_cos();
        Mat3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    /// Rotation about `+x` taking `+z` toward `+y` (looking up).
    pub fn pitch(deg: f64) -> Mat3 {
        let (s, c) = deg.to_radians().sin_cos();
        Mat3([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])
    }

    /// Rotation about `+z` taking `+x` toward `+y`.
    pub fn roll(deg: f64) -> Mat3 {
        let (s, c) = deg.to_radians().sin_cos();
        Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn from_euler(yaw: f64, pitch: f64, roll: f64) -> Mat3 {
        Mat3::yaw(yaw) * Mat3::pitch(pitch) * Mat3::roll(roll)
    }

    /// Inverse of [`Mat3::from_euler`]: `(yaw ∈ [0, 360), pitch ∈ [−90, 90],
    /// roll)` in degrees. At the poles roll is folded into yaw.
    pub fn to_euler(self) -> (f64, f64, f64) {
        let m = self.0;
        // columns: camera right, up, forward
        let (rx, ry, rz) = (m[0][0], m[1][0], m[2][0]);
        let (uy, fx, fy, fz) = (m[1][1], m[0][2], m[1][2], m[2][2]);
        let pitch = fy.clamp(-1.0, 1.0).asin().to_degrees();
        let cos_pitch = (fx * fx + fz * fz).sqrt();
        let (yaw, roll) = if cos_pitch > 1e-9 {
            (fx.atan2(fz).to_degrees(), ry.atan2(uy).to_degrees())
        } else {
            ((-rz).atan2(rx).to_degrees(), 0.0)
        };
        (yaw.rem_euclid(360.0), pitch, roll)
    }

    pub fn transpose(self) -> Mat3 {
        let m = self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn max_abs_diff(self, o: Mat3) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.0[i][j] - o.0[i][j]).abs());
            }
        }
        d
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(r)
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        let m = self.0;
        Vec3([
            m[0][0] * v.0[0] + m[0][1] * v.0[1] + m[0][2] * v.0[2],
            m[1][0] * v.0[0] + m[1][1] * v.0[1] + m[1][2] * v.0[2],
            m[2][0] * v.0[0] + m[2][1] * v.0[1] + m[2][2] * v.0[2],
        ])
    }
}
