//! Loss terms and the weighted objective.
//!
//! Value-level implementations over forward outputs; the training graph in
//! [`crate::train`] assembles the same terms on the tape for gradients, and
//! the two are cross-checked in tests.

use crate::error::{Error, Result};
use crate::model::LatentCode;
use crate::motion::{velocity, MotionSequence};
use crate::scalar::Scalar;
use ndarray::ArrayViewD;
use serde::{Deserialize, Serialize};

/// Weights of the generator objective and the discriminator objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_m: f64,
    pub lambda_v: f64,
    pub lambda_e: f64,
    pub lambda_g: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_m: 0.001,
            lambda_v: 0.1,
            lambda_e: 0.1,
            lambda_g: 0.001,
        }
    }
}

impl LossWeights {
    pub fn reconstruction_only() -> Self {
        LossWeights {
            lambda_m: 0.0,
            lambda_v: 0.0,
            lambda_e: 0.0,
            lambda_g: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_m", self.lambda_m),
            ("lambda_v", self.lambda_v),
            ("lambda_e", self.lambda_e),
            ("lambda_g", self.lambda_g),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Named scalar loss terms plus the weighted totals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    /// L_R: pose prediction (both decode paths vs ground truth).
    pub reconstruction: f64,
    /// L_M: manifold reconstruction from re-encoded generated poses.
    pub manifold: f64,
    /// L_V: velocity reconstruction.
    pub velocity: f64,
    /// L_E: pose/sentence embedding similarity.
    pub embedding: f64,
    /// L_G: generator side of the adversarial pair.
    pub generator_adv: f64,
    /// L_D: discriminator loss.
    pub discriminator: f64,
    pub total_generator: f64,
    pub total_discriminator: f64,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        [
            self.reconstruction,
            self.manifold,
            self.velocity,
            self.embedding,
            self.generator_adv,
            self.discriminator,
            self.total_generator,
            self.total_discriminator,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Assemble the weighted totals from the terms.
    pub fn with_totals(mut self, w: &LossWeights) -> Self {
        self.total_generator = self.reconstruction
            + w.lambda_m * self.manifold
            + w.lambda_v * self.velocity
            + w.lambda_e * self.embedding
            + w.lambda_g * self.generator_adv;
        self.total_discriminator = w.lambda_g * self.discriminator;
        self
    }
}

/// Smooth L1 distance, averaged over elements: quadratic below the unit
/// transition point, linear above.
pub fn smooth_l1<S: Scalar>(a: ArrayViewD<'_, S>, b: ArrayViewD<'_, S>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "smooth_l1",
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    if a.is_empty() {
        return Err(Error::Empty("smooth_l1 operands".into()));
    }
    let mut total = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let d = x.to_f64_lossy() - y.to_f64_lossy();
        total += if d.abs() < 1.0 { 0.5 * d * d } else { d.abs() - 0.5 };
    }
    Ok(total / a.len() as f64)
}

fn smooth_l1_codes<S: Scalar>(a: &LatentCode<S>, b: &LatentCode<S>) -> Result<f64> {
    match (a, b) {
        (LatentCode::TwoStream { ub: au, lb: al }, LatentCode::TwoStream { ub: bu, lb: bl }) => {
            Ok(smooth_l1(au.view().into_dyn(), bu.view().into_dyn())?
                + smooth_l1(al.view().into_dyn(), bl.view().into_dyn())?)
        }
        (LatentCode::Single(a), LatentCode::Single(b)) => {
            smooth_l1(a.view().into_dyn(), b.view().into_dyn())
        }
        _ => Err(Error::Config("latent kinds differ".into())),
    }
}

/// Binary cross-entropy of a probability against a 0/1 target.
pub fn bce_prob(p: f64, target: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Value-level objective over one sample's forward outputs.
///
/// `d_fake_p` carries the discriminator's score of the pose-conditioned
/// sequence when that path also feeds the adversary; fake scores are
/// averaged so the loss scale does not depend on how many paths are
/// included.
#[allow(clippy::too_many_arguments)]
pub fn compute_losses<S: Scalar>(
    gt: &MotionSequence<S>,
    p_hat_p: &MotionSequence<S>,
    p_hat_s: &MotionSequence<S>,
    z_p: &LatentCode<S>,
    z_s: &LatentCode<S>,
    z_p_re: &LatentCode<S>,
    d_real: f64,
    d_fake_s: f64,
    d_fake_p: Option<f64>,
    weights: &LossWeights,
) -> Result<LossBundle> {
    weights.validate()?;
    let gt_m = gt.channel_matrix();
    let ps_m = p_hat_s.channel_matrix();
    let pp_m = p_hat_p.channel_matrix();
    let reconstruction = smooth_l1(ps_m.view().into_dyn(), gt_m.view().into_dyn())?
        + smooth_l1(pp_m.view().into_dyn(), gt_m.view().into_dyn())?;

    let manifold = smooth_l1_codes(z_p_re, z_p)?;

    let velocity_loss = if gt.len() >= 2 {
        let gt_v = velocity(gt)?;
        let gen_v = velocity(p_hat_s)?;
        smooth_l1(gen_v.view().into_dyn(), gt_v.view().into_dyn())?
    } else {
        0.0
    };

    let embedding = smooth_l1_codes(z_p, z_s)?;

    let mut fake_terms_g = vec![bce_prob(d_fake_s, 1.0)];
    let mut fake_terms_d = vec![bce_prob(d_fake_s, 0.0)];
    if let Some(p) = d_fake_p {
        fake_terms_g.push(bce_prob(p, 1.0));
        fake_terms_d.push(bce_prob(p, 0.0));
    }
    let generator_adv = fake_terms_g.iter().sum::<f64>() / fake_terms_g.len() as f64;
    let discriminator = fake_terms_d.iter().sum::<f64>() / fake_terms_d.len() as f64 + bce_prob(d_real, 1.0);

    let bundle = LossBundle {
        reconstruction,
        manifold,
        velocity: velocity_loss,
        embedding,
        generator_adv,
        discriminator,
        total_generator: 0.0,
        total_discriminator: 0.0,
    }
    .with_totals(weights);
    if !bundle.is_finite() {
        return Err(Error::NonFinite("loss bundle".into()));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn smooth_l1_identity_is_zero() {
        let a = arr1(&[1.0f64, -2.0, 3.0]).into_dyn();
        assert_eq!(smooth_l1(a.view(), a.view()).unwrap(), 0.0);
    }

    #[test]
    fn smooth_l1_quadratic_branch() {
        let a = arr1(&[0.5f64]).into_dyn();
        let z = arr1(&[0.0f64]).into_dyn();
        assert!((smooth_l1(a.view(), z.view()).unwrap() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn smooth_l1_linear_branch() {
        let a = arr1(&[3.0f64]).into_dyn();
        let z = arr1(&[0.0f64]).into_dyn();
        assert!((smooth_l1(a.view(), z.view()).unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn smooth_l1_shape_mismatch() {
        let a = arr1(&[1.0f64, 2.0]).into_dyn();
        let b = arr1(&[1.0f64]).into_dyn();
        assert!(matches!(smooth_l1(a.view(), b.view()), Err(Error::Shape { .. })));
    }

    #[test]
    fn perfect_reconstruction_zeroes_every_term() {
        let mut gt = MotionSequence::<f64>::zeros(5, 21, 12.5);
        gt.frames_mut().mapv_inplace(|_| 0.25);
        let z = LatentCode::TwoStream {
            ub: arr1(&[0.5, -0.5]),
            lb: arr1(&[1.0, 2.0]),
        };
        let b = compute_losses(
            &gt,
            &gt.clone(),
            &gt.clone(),
            &z,
            &z.clone(),
            &z.clone(),
            0.5,
            0.5,
            Some(0.5),
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!(b.reconstruction, 0.0);
        assert_eq!(b.manifold, 0.0);
        assert_eq!(b.velocity, 0.0);
        assert_eq!(b.embedding, 0.0);
    }

    #[test]
    fn half_probability_gives_ln2_terms() {
        let gt = MotionSequence::<f64>::zeros(3, 21, 12.5);
        let z = LatentCode::Single(arr1(&[0.0]));
        let b = compute_losses(
            &gt,
            &gt.clone(),
            &gt.clone(),
            &z,
            &z.clone(),
            &z.clone(),
            0.5,
            0.5,
            None,
            &LossWeights::default(),
        )
        .unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((b.generator_adv - ln2).abs() < 1e-9, "L_G = -ln 0.5");
        assert!((b.discriminator - 2.0 * ln2).abs() < 1e-9, "L_D = -ln 0.5 per term pair");
    }

    #[test]
    fn totals_match_weighted_sum_exactly() {
        let b = LossBundle {
            reconstruction: 0.7,
            manifold: 0.3,
            velocity: 0.9,
            embedding: 0.11,
            generator_adv: 0.77,
            discriminator: 1.3,
            total_generator: 0.0,
            total_discriminator: 0.0,
        };
        let w = LossWeights::default();
        let b = b.with_totals(&w);
        // removing a term and re-adding its weighted value reproduces the total
        let without_v = b.total_generator - w.lambda_v * b.velocity;
        let re_added = without_v + w.lambda_v * b.velocity;
        assert!((re_added - b.total_generator).abs() < 1e-12);
        let expect = 0.7 + 0.001 * 0.3 + 0.1 * 0.9 + 0.1 * 0.11 + 0.001 * 0.77;
        assert!((b.total_generator - expect).abs() < 1e-15);
        assert!((b.total_discriminator - 0.001 * 1.3).abs() < 1e-15);
    }

    #[test]
    fn negative_weights_rejected() {
        let w = LossWeights {
            lambda_m: -0.1,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }
}
