use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::vec::{UnitVec3, Vec3};
use crate::error::{Error, Result};

/// Draws one uniformly distributed direction by normalizing an isotropic
/// Gaussian 3-vector. The zero vector is resampled.
pub fn random_direction<R: Rng + ?Sized>(rng: &mut R) -> UnitVec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if let Some(u) = v.try_normalize() {
            return u;
        }
    }
}

/// `count` uniform directions on the unit sphere, reproducible per `seed`.
pub fn sample_sphere_uniform(count: usize, seed: u64) -> Result<Vec<UnitVec3>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| random_direction(&mut rng)).collect())
}
