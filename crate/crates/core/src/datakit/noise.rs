use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::jointmap::JointTrack;

/// Gaussian joint noise with standard deviation `alpha · (W, H)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub alpha: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(alpha: f64, seed: u64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise ratio must be >= 0, got {alpha}")));
        }
        Ok(NoiseSpec { alpha, seed })
    }

    /// `(σ_x, σ_y)` for frames of `width × height`.
    pub fn sigma(&self, width: f64, height: f64) -> (f64, f64) {
        (self.alpha * width, self.alpha * height)
    }
}

/// Adds independent zero-mean Gaussian noise to every joint in every
/// frame. Draws are made frame by frame, joint by joint, x before y.
/// Coordinates are not clamped.
pub fn add_joint_noise(joints: &JointTrack, spec: &NoiseSpec, width: f64, height: f64) -> JointTrack {
    if spec.alpha == 0.0 {
        return joints.clone();
    }
    let (sx, sy) = spec.sigma(width, height);
    let nx = Normal::new(0.0, sx).expect("finite sigma");
    let ny = Normal::new(0.0, sy).expect("finite sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    joints.map_xy(|x, y| {
        let dx = nx.sample(&mut rng);
        let dy = ny.sample(&mut rng);
        (x + dx, y + dy)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jointmap::JointPoint;

    fn track(n: usize, t: usize) -> JointTrack {
        JointTrack::new(n, t, vec![], vec![JointPoint { x: 100.0, y: 50.0, visible: true }; n * t]).unwrap()
    }

    #[test]
    fn zero_alpha_is_identity() {
        let tr = track(3, 4);
        assert_eq!(add_joint_noise(&tr, &NoiseSpec::new(0.0, 1).unwrap(), 320.0, 240.0), tr);
    }

    #[test]
    fn sigma_scales_with_frame() {
        let s = NoiseSpec::new(0.3, 0).unwrap();
        let (sx, sy) = s.sigma(320.0, 240.0);
        assert!((sx - 96.0).abs() < 1e-12 && (sy - 72.0).abs() < 1e-12);
        assert!(NoiseSpec::new(-0.1, 0).is_err());
    }

    #[test]
    fn empirical_std_matches() {
        let tr = track(10, 10_000);
        let spec = NoiseSpec::new(0.3, 42).unwrap();
        let noisy = add_joint_noise(&tr, &spec, 320.0, 240.0);
        let n = noisy.points().len() as f64;
        let (mut mx, mut my) = (0.0, 0.0);
        for p in noisy.points() {
            mx += p.x - 100.0;
            my += p.y - 50.0;
        }
        mx /= n;
        my /= n;
        let (mut vx, mut vy) = (0.0, 0.0);
        for p in noisy.points() {
            vx += (p.x - 100.0 - mx).powi(2);
            vy += (p.y - 50.0 - my).powi(2);
        }
        let (sx, sy) = ((vx / n).sqrt(), (vy / n).sqrt());
        assert!((sx / 96.0 - 1.0).abs() < 0.02, "sx {sx}");
        assert!((sy / 72.0 - 1.0).abs() < 0.02, "sy {sy}");
        assert_eq!(noisy.points().iter().filter(|p| !p.visible).count(), 0);
    }

    #[test]
    fn same_seed_same_noise() {
        let tr = track(2, 5);
        let s = NoiseSpec::new(0.1, 7).unwrap();
        assert_eq!(add_joint_noise(&tr, &s, 32.0, 32.0), add_joint_noise(&tr, &s, 32.0, 32.0));
    }
}
