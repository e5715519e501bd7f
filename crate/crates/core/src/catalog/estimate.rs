//! Analytical latency, power, and energy estimators.
//!
//! The stage model is separable: latency is affine in the frame count, linear
//! in denoising steps, and linear in pixel count, scaled by the hardware's
//! performance multiplier. Sequence parallelism accelerates only the DiT
//! stage; the VAE stages run on a single GPU regardless of the parallel
//! degree. A frequency cap slows every stage by the same multiplier.

use super::{Catalog, FrequencySetting, HardwareSku, ModelProfile, QualityConfig};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which stages to include in a latency estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageSet {
    All,
    /// Encoders plus the DiT denoising loop (disaggregated DiT component).
    DitOnly,
    /// VAE encode/decode only (disaggregated VAE component).
    VaeOnly,
}

/// Per-stage latency estimate, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LatencyBreakdown {
    pub encode: f64,
    pub dit: f64,
    pub vae_encode: f64,
    pub vae_decode: f64,
}

impl LatencyBreakdown {
    pub fn total(&self) -> f64 {
        self.encode + self.dit + self.vae_encode + self.vae_decode
    }

    pub fn vae(&self) -> f64 {
        self.vae_encode + self.vae_decode
    }
}

/// Latency slowdown as a function of the frequency fraction x = f/f_max:
/// m(x) = alpha + beta/x + gamma/x^2 with m(1) = 1 held exactly.
///
/// The two published anchors (8% slower at a 15% cap, 52% slower at a 45%
/// cap) cannot both be met within tolerance by a single fixed-fraction
/// hyperbola, so the model carries a quadratic term; the constrained
/// least-squares fit then interpolates both anchors exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyModel {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl FrequencyModel {
    /// Fit to (fraction, slowdown) anchors subject to m(1) = 1.
    ///
    /// With alpha = 1 - beta - gamma the model is linear in (beta, gamma):
    /// m(x) - 1 = beta (1/x - 1) + gamma (1/x^2 - 1), solved by least squares
    /// over the anchors (exact interpolation for two anchors).
    pub fn fit(anchors: &[(f64, f64)]) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(Error::InsufficientPoints {
                got: anchors.len(),
                need: 2,
            });
        }
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x, m) in anchors {
            if !(x > 0.0 && x <= 1.0) {
                return Err(Error::config("frequency fractions must be in (0, 1]"));
            }
            let u1 = 1.0 / x - 1.0;
            let u2 = 1.0 / (x * x) - 1.0;
            let r = m - 1.0;
            a11 += u1 * u1;
            a12 += u1 * u2;
            a22 += u2 * u2;
            b1 += u1 * r;
            b2 += u2 * r;
        }
        let det = a11 * a22 - a12 * a12;
        if det.abs() < 1e-12 {
            return Err(Error::DegenerateDesign(
                "frequency anchors are collinear".into(),
            ));
        }
        let beta = (b1 * a22 - b2 * a12) / det;
        let gamma = (a11 * b2 - a12 * b1) / det;
        Ok(FrequencyModel {
            alpha: 1.0 - beta - gamma,
            beta,
            gamma,
        })
    }

    /// Latency multiplier at frequency fraction `x`; m(1) = 1 exactly.
    pub fn slowdown(&self, x: f64) -> f64 {
        debug_assert!(x > 0.0 && x <= 1.0);
        if x >= 1.0 {
            return 1.0;
        }
        self.alpha + self.beta / x + self.gamma / (x * x)
    }
}

impl Default for FrequencyModel {
    /// Fit to the two published A100 anchors.
    fn default() -> Self {
        FrequencyModel::fit(&[(0.85, 1.08), (0.55, 1.52)]).expect("anchors are well-formed")
    }
}

/// Latency slowdown multiplier for a frequency setting under the default
/// frequency model.
pub fn frequency_slowdown(freq: FrequencySetting) -> f64 {
    FrequencyModel::default().slowdown(freq.fraction_of_max)
}

/// Power draw and energy for one task execution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerEnergy {
    /// Peak draw per GPU, watts.
    pub peak_watts: f64,
    /// Busy-average draw per GPU, watts.
    pub average_watts: f64,
    /// Total energy across all GPUs over the task, joules.
    pub joules: f64,
}

/// Peak per-GPU power at a frequency fraction: idle + (tdp - idle) x^2.
pub fn peak_power_watts(sku: &HardwareSku, fraction_of_max: f64) -> f64 {
    let x = fraction_of_max.clamp(0.0, 1.0);
    sku.idle_power_per_gpu + (sku.tdp_per_gpu - sku.idle_power_per_gpu) * x * x
}

impl Catalog {
    fn check_compat(
        &self,
        profile: &ModelProfile,
        cfg: &QualityConfig,
        sku: &HardwareSku,
        gpus: u32,
    ) -> Result<()> {
        if gpus < 1 || !profile.gpus_compatible(gpus) {
            return Err(Error::IncompatibleParallelism {
                model: profile.name.clone(),
                heads: profile.attention_heads,
                gpus,
            });
        }
        let c = profile.vae_spatial_compression;
        if cfg.width % c != 0 || cfg.height % c != 0 {
            return Err(Error::UnsupportedResolution {
                model: profile.name.clone(),
                width: cfg.width,
                height: cfg.height,
                compression: c,
            });
        }
        // Resolve through the catalog so stale SKU references surface.
        self.sku(&sku.name)?;
        Ok(())
    }

    /// Per-stage and total execution latency of one task.
    pub fn estimate_latency(
        &self,
        profile: &ModelProfile,
        cfg: &QualityConfig,
        sku: &HardwareSku,
        gpus: u32,
        freq: FrequencySetting,
        stages: StageSet,
    ) -> Result<LatencyBreakdown> {
        self.check_compat(profile, cfg, sku, gpus)?;
        let sc = &profile.stage_costs;
        let r = &profile.reference_shape;

        let pixel_scale = cfg.pixels() / r.pixels();
        let frame_scale =
            (profile.frame_overhead + cfg.frames as f64) / (profile.frame_overhead + r.frames as f64);
        let perf = sku.perf_multiplier;
        let speedup = profile.parallel_speedup(gpus);
        let slow = self.frequency_model().slowdown(freq.fraction_of_max);
        let quant = match profile.fp8_latency_multiplier {
            Some(q) if sku.flash_attention_tier == super::FlashAttentionTier::FA3 => q,
            _ => 1.0,
        };

        let shape = pixel_scale * frame_scale;
        let mut out = LatencyBreakdown::default();
        if stages != StageSet::VaeOnly {
            out.encode = sc.encode_base * slow * quant;
            out.dit = cfg.steps as f64 * sc.dit_per_step * shape / (perf * speedup) * slow * quant;
        }
        if stages != StageSet::DitOnly {
            // USP applies only to the DiT stage; VAE sees no parallel speedup.
            out.vae_encode = sc.vae_encode * shape / perf * slow * quant;
            out.vae_decode = sc.vae_decode * shape / perf * slow * quant;
        }
        Ok(out)
    }

    /// Peak/average per-GPU power and total energy for one task execution.
    pub fn estimate_power_energy(
        &self,
        profile: &ModelProfile,
        cfg: &QualityConfig,
        sku: &HardwareSku,
        gpus: u32,
        freq: FrequencySetting,
    ) -> Result<PowerEnergy> {
        let latency = self
            .estimate_latency(profile, cfg, sku, gpus, freq, StageSet::All)?
            .total();
        let peak = peak_power_watts(sku, freq.fraction_of_max);
        let average = peak * self.config.busy_power_ratio;
        Ok(PowerEnergy {
            peak_watts: peak,
            average_watts: average,
            joules: average * gpus as f64 * latency,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{QualityLevel, StageSet};

    fn wan_cfg(frames: u32, width: u32, height: u32, steps: u32) -> QualityConfig {
        QualityConfig {
            width,
            height,
            steps,
            frames,
            fps: 16.0,
            quality_level: QualityLevel::MEDIUM,
        }
    }

    #[test]
    fn reference_video_latency_matches_measured_anchor() {
        let cat = Catalog::builtin();
        let wan = cat.model("wan21").unwrap();
        let a100 = cat.sku("A100").unwrap();
        let t = cat
            .estimate_latency(
                wan,
                &wan_cfg(81, 640, 400, 10),
                a100,
                1,
                FrequencySetting::max(),
                StageSet::All,
            )
            .unwrap();
        // 81 frames at 640x400 with 10 steps on one A100: ~93 s.
        assert!((t.total() - 93.0).abs() / 93.0 < 0.05, "total {}", t.total());
    }

    #[test]
    fn per_second_rates_track_the_frame_sweep() {
        let cat = Catalog::builtin();
        let wan = cat.model("wan21").unwrap();
        let a100 = cat.sku("A100").unwrap();
        let run = |frames: u32| {
            cat.estimate_latency(
                wan,
                &wan_cfg(frames, 640, 400, 10),
                a100,
                1,
                FrequencySetting::max(),
                StageSet::All,
            )
            .unwrap()
            .total()
        };
        // seconds of compute per second of generated video at 16 FPS
        let rate = |frames: u32| run(frames) / (frames as f64 / 16.0);
        for (frames, expect) in [(1u32, 66.0), (21, 23.0), (81, 18.0)] {
            let r = rate(frames);
            assert!(
                (r - expect).abs() / expect < 0.15,
                "{frames} frames: {r} vs {expect}"
            );
        }
    }

    #[test]
    fn quadrupling_pixels_quadruples_dit() {
        let cat = Catalog::builtin();
        let wan = cat.model("wan21").unwrap();
        let a100 = cat.sku("A100").unwrap();
        let lo = cat
            .estimate_latency(wan, &wan_cfg(81, 640, 400, 10), a100, 1, FrequencySetting::max(), StageSet::All)
            .unwrap();
        let hi = cat
            .estimate_latency(wan, &wan_cfg(81, 1280, 800, 10), a100, 1, FrequencySetting::max(), StageSet::All)
            .unwrap();
        assert!((hi.dit / lo.dit - 4.0).abs() < 1e-9);
    }

    #[test]
    fn zero_steps_leaves_encode_plus_vae() {
        let cat = Catalog::builtin();
        let wan = cat.model("wan21").unwrap();
        let a100 = cat.sku("A100").unwrap();
        let t = cat
            .estimate_latency(wan, &wan_cfg(81, 640, 400, 0), a100, 1, FrequencySetting::max(), StageSet::All)
            .unwrap();
        assert_eq!(t.dit, 0.0);
        assert!((t.total() - (t.encode + t.vae())).abs() < 1e-12);
    }

    #[test]
    fn eight_gpus_cut_dit_by_more_than_five() {
        let cat = Catalog::builtin();
        let wan = cat.model("wan21").unwrap();
        let a100 = cat.sku("A100").unwrap();
        let one = cat
            .estimate_latency(wan, &wan_cfg(81, 640, 400, 10), a100, 1, FrequencySetting::max(), StageSet::All)
            .unwrap();
        let eight = cat
            .estimate_latency(wan, &wan_cfg(81, 640, 400, 10), a100, 8, FrequencySetting::max(), StageSet::All)
            .unwrap();
        assert!(eight.dit <= one.dit / 5.0);
        // VAE is untouched by parallelism.
        assert!((eight.vae() - one.vae()).abs() < 1e-12);
    }

    #[test]
    fn parallelism_errors_on_indivisible_gpu_counts() {
        let cat = Catalog::builtin();
        let wan = cat.model("wan21").unwrap(); // 40 heads
        let a100 = cat.sku("A100").unwrap();
        let err = cat
            .estimate_latency(wan, &wan_cfg(81, 640, 400, 10), a100, 16, FrequencySetting::max(), StageSet::All)
            .unwrap_err();
        assert!(matches!(err, Error::IncompatibleParallelism { .. }));
    }

    #[test]
    fn resolution_must_respect_vae_compression() {
        let cat = Catalog::builtin();
        let wan = cat.model("wan21").unwrap();
        let a100 = cat.sku("A100").unwrap();
        let err = cat
            .estimate_latency(wan, &wan_cfg(81, 854, 480, 10), a100, 1, FrequencySetting::max(), StageSet::All)
            .unwrap_err();
        assert!(matches!(err, Error::UnsupportedResolution { .. }));
    }

    #[test]
    fn frequency_model_hits_the_published_anchors() {
        let m = FrequencyModel::default();
        assert_eq!(m.slowdown(1.0), 1.0);
        assert!((m.slowdown(0.85) - 1.08).abs() <= 0.02);
        assert!((m.slowdown(0.55) - 1.52).abs() <= 0.02);
    }

    #[test]
    fn power_curve_matches_the_published_points() {
        let cat = Catalog::builtin();
        let a100 = cat.sku("A100").unwrap();
        assert!((peak_power_watts(a100, 1.0) - 400.0).abs() < 1e-9);
        // 15% frequency cut lowers peak power by ~23%.
        let drop = 1.0 - peak_power_watts(a100, 0.85) / 400.0;
        assert!((drop - 0.23).abs() < 0.03, "drop {drop}");
        // The zero-frequency limit is the idle floor.
        assert!((peak_power_watts(a100, 0.0) - 63.0).abs() < 1e-9);
    }

    #[test]
    fn energy_has_an_interior_minimum_in_frequency() {
        let cat = Catalog::builtin();
        let a100 = cat.sku("A100").unwrap();
        let m = FrequencyModel::default();
        // Energy per unit of work ~ P(x) * m(x); scan a frequency grid.
        let xs: Vec<f64> = (20..=100).map(|i| i as f64 / 100.0).collect();
        let energy: Vec<f64> = xs
            .iter()
            .map(|&x| peak_power_watts(a100, x) * m.slowdown(x))
            .collect();
        let (mut best_i, mut best) = (0, f64::INFINITY);
        for (i, &e) in energy.iter().enumerate() {
            if e < best {
                best = e;
                best_i = i;
            }
        }
        assert!(best_i > 0 && best_i < xs.len() - 1, "minimum must be interior");
        assert!(best < energy[xs.len() - 1], "capped frequency saves energy");
    }
}
