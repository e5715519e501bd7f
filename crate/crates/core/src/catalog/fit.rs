//! Profile calibration from benchmark measurements.
//!
//! On-boarding benchmarks a handful of configurations and fits the separable
//! stage model (affine in frames, linear in steps, linear in pixels) by least
//! squares. When the benchmark set only varies one dimension, the fit reduces
//! to the affine curve along that dimension; the full stage split needs both
//! frame and step variation.

use super::{Curve, QualityConfig, ReferenceShape, StageCosts};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// One measured configuration.
#[derive(Debug, Clone)]
pub struct BenchmarkPoint {
    pub cfg: QualityConfig,
    pub gpus: u32,
    /// Hardware speedup relative to the A100 baseline.
    pub perf_multiplier: f64,
    /// Measured wall time, seconds.
    pub seconds: f64,
}

impl BenchmarkPoint {
    pub fn single_gpu(cfg: QualityConfig, seconds: f64) -> Self {
        BenchmarkPoint {
            cfg,
            gpus: 1,
            perf_multiplier: 1.0,
            seconds,
        }
    }
}

/// Fitted coefficients plus per-point residuals.
#[derive(Debug, Clone)]
pub struct ProfileFit {
    pub encode_base: f64,
    /// Seconds per step at the reference shape.
    pub dit_per_step: f64,
    /// Combined VAE encode+decode seconds at the reference shape (the split
    /// is not identifiable from end-to-end timings).
    pub vae_total: f64,
    /// Affine intercept of the frame curve, in frames.
    pub frame_overhead: f64,
    /// d(latency)/d(frames) at the first point's operating shape.
    pub frame_slope: f64,
    /// Extrapolated latency at zero frames at the same shape.
    pub frame_intercept: f64,
    /// predicted - measured, seconds, per input point.
    pub residuals: Vec<f64>,
    /// |residual| / measured, per input point.
    pub relative_errors: Vec<f64>,
}

impl ProfileFit {
    /// Materialize stage costs, splitting the VAE mass by a decode share.
    pub fn stage_costs(&self, vae_decode_share: f64) -> StageCosts {
        StageCosts {
            encode_base: self.encode_base,
            dit_per_step: self.dit_per_step,
            vae_encode: self.vae_total * (1.0 - vae_decode_share),
            vae_decode: self.vae_total * vae_decode_share,
        }
    }
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for v in values {
        if !out.iter().any(|o| (o - v).abs() < 1e-9) {
            out.push(v);
        }
    }
    out
}

fn lstsq(rows: &[Vec<f64>], targets: &[f64]) -> Vec<f64> {
    let m = rows.len();
    let n = rows[0].len();
    let a = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(targets);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-12)
        .expect("SVD solve on finite inputs")
        .iter()
        .copied()
        .collect()
}

/// Fit stage-model coefficients from benchmark points.
///
/// `reference` anchors the returned coefficients; `parallel` supplies the DiT
/// speedup curve for multi-GPU points (flat when absent).
pub fn fit_profile(
    points: &[BenchmarkPoint],
    reference: ReferenceShape,
    parallel: Option<&Curve>,
) -> Result<ProfileFit> {
    if points.len() < 2 {
        return Err(Error::InsufficientPoints {
            got: points.len(),
            need: 2,
        });
    }
    let frames = distinct(points.iter().map(|p| p.cfg.frames as f64));
    let steps = distinct(points.iter().map(|p| p.cfg.steps as f64));
    let pixels = distinct(points.iter().map(|p| p.cfg.pixels()));
    if frames.len() < 2 && steps.len() < 2 && pixels.len() < 2 {
        return Err(Error::DegenerateDesign(
            "all points share one shape".into(),
        ));
    }

    let speedup = |gpus: u32| -> f64 {
        parallel.map(|c| c.eval(gpus as f64)).unwrap_or(1.0)
    };
    let ref_px = reference.pixels();
    let seconds: Vec<f64> = points.iter().map(|p| p.seconds).collect();

    if frames.len() >= 2 && steps.len() >= 2 {
        if points.len() < 4 {
            return Err(Error::InsufficientPoints {
                got: points.len(),
                need: 4,
            });
        }
        // Full separable fit: t = E + (d0 + d1 n) s p / h_dit + (v0 + v1 n) p / h_vae
        let rows: Vec<Vec<f64>> = points
            .iter()
            .map(|p| {
                let px = p.cfg.pixels() / ref_px;
                let h_d = p.perf_multiplier * speedup(p.gpus);
                let h_v = p.perf_multiplier;
                let s = p.cfg.steps as f64;
                let n = p.cfg.frames as f64;
                vec![1.0, s * px / h_d, s * px * n / h_d, px / h_v, px * n / h_v]
            })
            .collect();
        let theta = lstsq(&rows, &seconds);
        let (e, d0, d1, v0, v1) = (theta[0], theta[1], theta[2], theta[3], theta[4]);

        // Shared frame intercept, weighted by each stage's frame slope.
        let mut c = 0.0;
        let w = d1.abs() + v1.abs();
        if w > 1e-12 {
            let cd = if d1.abs() > 1e-12 { d0 / d1 } else { 0.0 };
            let cv = if v1.abs() > 1e-12 { v0 / v1 } else { 0.0 };
            c = (d1.abs() * cd + v1.abs() * cv) / w;
        }
        let nr = reference.frames as f64;
        let fit = ProfileFit {
            encode_base: e,
            dit_per_step: d0 + d1 * nr,
            vae_total: v0 + v1 * nr,
            frame_overhead: c.max(0.0),
            frame_slope: {
                let p0 = &points[0];
                let px = p0.cfg.pixels() / ref_px;
                let s = p0.cfg.steps as f64;
                d1 * s * px / (p0.perf_multiplier * speedup(p0.gpus)) + v1 * px / p0.perf_multiplier
            },
            frame_intercept: {
                let p0 = &points[0];
                let px = p0.cfg.pixels() / ref_px;
                let s = p0.cfg.steps as f64;
                e + d0 * s * px / (p0.perf_multiplier * speedup(p0.gpus)) + v0 * px / p0.perf_multiplier
            },
            residuals: Vec::new(),
            relative_errors: Vec::new(),
        };
        return Ok(finish(fit, &rows, &theta, &seconds));
    }

    // Reduced fits: a single dimension varies, everything else must be fixed.
    let one_dim = |xs: Vec<f64>| -> Result<(f64, f64, Vec<Vec<f64>>)> {
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x]).collect();
        let theta = lstsq(&rows, &seconds);
        Ok((theta[0], theta[1], rows))
    };

    if frames.len() >= 2 {
        if steps.len() > 1 || pixels.len() > 1 {
            return Err(Error::DegenerateDesign(
                "frame sweep mixed with step/pixel variation needs >= 4 points with both frames and steps varying".into(),
            ));
        }
        let (a, b, rows) = one_dim(points.iter().map(|p| p.cfg.frames as f64).collect())?;
        // Attribute the whole frame-dependent mass to the DiT term; the
        // DiT/VAE split is not identifiable without step variation.
        let p0 = &points[0];
        let px = p0.cfg.pixels() / ref_px;
        let h_d = p0.perf_multiplier * speedup(p0.gpus);
        let s = (p0.cfg.steps as f64).max(1.0);
        let c = if b.abs() > 1e-12 { (a / b).max(0.0) } else { 0.0 };
        let nr = reference.frames as f64;
        let fit = ProfileFit {
            encode_base: 0.0,
            dit_per_step: b * (c + nr) * h_d / (s * px),
            vae_total: 0.0,
            frame_overhead: c,
            frame_slope: b,
            frame_intercept: a,
            residuals: Vec::new(),
            relative_errors: Vec::new(),
        };
        let theta = vec![a, b];
        return Ok(finish(fit, &rows, &theta, &seconds));
    }

    if steps.len() >= 2 {
        if pixels.len() > 1 {
            return Err(Error::DegenerateDesign(
                "step sweep mixed with pixel variation needs frame variation too".into(),
            ));
        }
        let (a, b, rows) = one_dim(points.iter().map(|p| p.cfg.steps as f64).collect())?;
        let p0 = &points[0];
        let px = p0.cfg.pixels() / ref_px;
        let h_d = p0.perf_multiplier * speedup(p0.gpus);
        let n = p0.cfg.frames as f64;
        let frame_scale = n / reference.frames as f64;
        let fit = ProfileFit {
            encode_base: a.max(0.0),
            dit_per_step: b * h_d / (px * frame_scale.max(1e-12)),
            vae_total: 0.0,
            frame_overhead: 0.0,
            frame_slope: 0.0,
            frame_intercept: a,
            residuals: Vec::new(),
            relative_errors: Vec::new(),
        };
        let theta = vec![a, b];
        return Ok(finish(fit, &rows, &theta, &seconds));
    }

    Err(Error::DegenerateDesign(
        "no frame or step variation in the benchmark set".into(),
    ))
}

fn finish(mut fit: ProfileFit, rows: &[Vec<f64>], theta: &[f64], seconds: &[f64]) -> ProfileFit {
    for (row, &t) in rows.iter().zip(seconds) {
        let pred: f64 = row.iter().zip(theta).map(|(x, th)| x * th).sum();
        let res = pred - t;
        fit.residuals.push(res);
        fit.relative_errors.push(res.abs() / t.abs().max(1e-12));
    }
    fit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Catalog, FrequencySetting, QualityLevel, StageSet};

    fn cfg(frames: u32, width: u32, height: u32, steps: u32) -> QualityConfig {
        QualityConfig {
            width,
            height,
            steps,
            frames,
            fps: 16.0,
            quality_level: QualityLevel::MEDIUM,
        }
    }

    const WAN_REF: ReferenceShape = ReferenceShape {
        width: 640,
        height: 400,
        frames: 81,
    };

    #[test]
    fn two_point_frame_sweep_recovers_the_affine_frame_curve() {
        // Hand-solved 2x2 system from the measured per-second rates:
        // 66 s/s at 1 frame (4.125 s) and 18 s/s at 81 frames (93 s).
        let points = vec![
            BenchmarkPoint::single_gpu(cfg(1, 640, 400, 10), 4.125),
            BenchmarkPoint::single_gpu(cfg(81, 640, 400, 10), 93.0),
        ];
        let fit = fit_profile(&points, WAN_REF, None).unwrap();
        assert!((fit.frame_slope - 1.11).abs() < 0.01, "slope {}", fit.frame_slope);
        assert!((fit.frame_intercept - 3.0).abs() < 0.05, "intercept {}", fit.frame_intercept);
    }

    #[test]
    fn exact_generator_round_trips_with_zero_residuals() {
        let cat = Catalog::builtin();
        let wan = cat.model("wan21").unwrap();
        let a100 = cat.sku("A100").unwrap();
        let mut points = Vec::new();
        for &frames in &[1u32, 21, 49, 81] {
            for &steps in &[5u32, 10, 20] {
                for &(w, h) in &[(640u32, 400u32), (1280, 800)] {
                    let c = cfg(frames, w, h, steps);
                    let t = cat
                        .estimate_latency(wan, &c, a100, 1, FrequencySetting::max(), StageSet::All)
                        .unwrap()
                        .total();
                    points.push(BenchmarkPoint::single_gpu(c, t));
                }
            }
        }
        let fit = fit_profile(&points, wan.reference_shape, Some(&wan.parallel_efficiency)).unwrap();
        let sc = &wan.stage_costs;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
        assert!(rel(fit.encode_base, sc.encode_base) <= 1e-9);
        assert!(rel(fit.dit_per_step, sc.dit_per_step) <= 1e-9);
        assert!(rel(fit.vae_total, sc.vae_encode + sc.vae_decode) <= 1e-9);
        assert!(rel(fit.frame_overhead, wan.frame_overhead) <= 1e-9);
        for r in &fit.relative_errors {
            assert!(*r <= 1e-9, "residual {r}");
        }
    }

    #[test]
    fn identical_shapes_are_rank_deficient() {
        let points = vec![
            BenchmarkPoint::single_gpu(cfg(81, 640, 400, 10), 93.0),
            BenchmarkPoint::single_gpu(cfg(81, 640, 400, 10), 92.5),
            BenchmarkPoint::single_gpu(cfg(81, 640, 400, 10), 93.5),
        ];
        assert!(matches!(
            fit_profile(&points, WAN_REF, None),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn too_few_points_for_the_full_fit() {
        let points = vec![
            BenchmarkPoint::single_gpu(cfg(1, 640, 400, 5), 2.0),
            BenchmarkPoint::single_gpu(cfg(81, 640, 400, 10), 93.0),
            BenchmarkPoint::single_gpu(cfg(41, 640, 400, 20), 95.0),
        ];
        assert!(matches!(
            fit_profile(&points, WAN_REF, None),
            Err(Error::InsufficientPoints { need: 4, .. })
        ));
        assert!(matches!(
            fit_profile(&[], WAN_REF, None),
            Err(Error::InsufficientPoints { need: 2, .. })
        ));
    }
}
