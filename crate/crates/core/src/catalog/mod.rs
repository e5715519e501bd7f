//! Model and hardware catalogs plus the calibrated analytical estimators
//! consumed by every other module.
//!
//! Catalogs are immutable after load and safe to share across any number of
//! concurrent readers.

mod estimate;
mod fit;

pub use estimate::{FrequencyModel, LatencyBreakdown, PowerEnergy, StageSet};
pub use fit::{fit_profile, BenchmarkPoint, ProfileFit};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Generative task families a model can serve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskClass {
    /// Large language model (screenplay generation).
    LLM,
    /// Audio to text.
    A2T,
    /// Text to speech.
    TTS,
    /// Text to image.
    T2I,
    /// Image to image (crops, edits).
    I2I,
    /// Image to video.
    I2V,
    /// Video plus audio synchronization.
    VplusA,
    /// Resolution upscaling.
    UPSCALE,
}

impl TaskClass {
    pub const ALL: [TaskClass; 8] = [
        TaskClass::LLM,
        TaskClass::A2T,
        TaskClass::TTS,
        TaskClass::T2I,
        TaskClass::I2I,
        TaskClass::I2V,
        TaskClass::VplusA,
        TaskClass::UPSCALE,
    ];

    /// Classes whose backbone is an iterative denoising transformer.
    pub fn is_diffusion(self) -> bool {
        matches!(
            self,
            TaskClass::T2I | TaskClass::I2V | TaskClass::VplusA
        )
    }
}

/// FlashAttention support level of a GPU generation.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub enum FlashAttentionTier {
    #[default]
    NONE,
    FA2,
    FA3,
}

/// Output quality tier used by the adaptive ladder.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub enum QualityLevel {
    #[default]
    HIGH,
    MEDIUM,
    LOW,
    /// Pre-rendered static content; no GPU work at all.
    STATIC,
}

/// Shape and fidelity of one generation task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityConfig {
    pub width: u32,
    pub height: u32,
    /// Denoising steps; 0 means no diffusion work (static content).
    pub steps: u32,
    /// Frames produced by the task (1 for images).
    pub frames: u32,
    /// Output frame rate.
    pub fps: f64,
    pub quality_level: QualityLevel,
}

impl QualityConfig {
    pub fn pixels(&self) -> f64 {
        self.width as f64 * self.height as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.quality_level == QualityLevel::STATIC && self.steps != 0 {
            return Err(Error::config("STATIC quality requires steps = 0"));
        }
        if self.fps <= 0.0 {
            return Err(Error::config("fps must be positive"));
        }
        Ok(())
    }
}

/// A GPU clock setting expressed both absolutely and relative to the SKU peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencySetting {
    pub frequency_mhz: f64,
    /// In (0, 1].
    pub fraction_of_max: f64,
}

impl FrequencySetting {
    /// Run the SKU at its maximum frequency.
    pub fn max() -> Self {
        FrequencySetting {
            frequency_mhz: f64::NAN, // resolved against the SKU on use
            fraction_of_max: 1.0,
        }
    }

    /// A fraction of the SKU's maximum frequency.
    pub fn of_fraction(sku: &HardwareSku, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::config("frequency fraction must be in (0, 1]"));
        }
        Ok(FrequencySetting {
            frequency_mhz: sku.max_frequency_mhz * fraction,
            fraction_of_max: fraction,
        })
    }
}

impl Default for FrequencySetting {
    fn default() -> Self {
        FrequencySetting::max()
    }
}

/// Per-stage latency coefficients at the profile's reference shape on the
/// A100 baseline (perf multiplier 1.0, single GPU, max frequency).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCosts {
    /// Fixed text/image/audio encoding cost per invocation, seconds.
    pub encode_base: f64,
    /// Seconds per denoising step at the reference shape.
    pub dit_per_step: f64,
    /// VAE encode seconds at the reference shape.
    pub vae_encode: f64,
    /// VAE decode seconds at the reference shape.
    pub vae_decode: f64,
}

/// Reference shape the stage costs were measured at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceShape {
    pub width: u32,
    pub height: u32,
    pub frames: u32,
}

impl ReferenceShape {
    pub fn pixels(&self) -> f64 {
        self.width as f64 * self.height as f64
    }
}

/// A piecewise-linear curve over sorted sample points. Evaluation clamps flat
/// beyond the first and last point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Curve(pub Vec<(f64, f64)>);

impl Curve {
    pub fn flat(y: f64) -> Self {
        Curve(vec![(1.0, y)])
    }

    pub fn eval(&self, x: f64) -> f64 {
        let pts = &self.0;
        if pts.is_empty() {
            return 1.0;
        }
        if x <= pts[0].0 {
            return pts[0].1;
        }
        if x >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        for w in pts.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x <= x1 {
                let t = (x - x0) / (x1 - x0);
                return y0 + t * (y1 - y0);
            }
        }
        pts[pts.len() - 1].1
    }

    fn validate(&self, what: &str, entry: &str) -> Result<()> {
        for w in self.0.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidCatalog {
                    entry: entry.into(),
                    reason: format!("{what} x-values must be strictly increasing"),
                });
            }
        }
        Ok(())
    }
}

/// Batching gain curves per stage family: x = batch size, y = throughput gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEfficiency {
    pub encode: Curve,
    pub dit: Curve,
    pub vae: Curve,
}

impl Default for BatchEfficiency {
    fn default() -> Self {
        BatchEfficiency {
            encode: Curve(vec![(1.0, 1.0), (4.0, 3.6), (8.0, 6.5), (16.0, 11.0)]),
            dit: Curve(vec![(1.0, 1.0), (4.0, 1.04)]),
            vae: Curve(vec![(1.0, 1.0), (2.0, 0.95)]),
        }
    }
}

/// Analytical latency/power/memory model of one generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    pub name: String,
    pub task_class: TaskClass,
    /// Parameter count in billions.
    pub param_count: f64,
    /// GPU memory footprint once loaded, GB.
    pub mem_footprint: f64,
    /// Weight loading time, seconds.
    pub load_time: f64,
    /// First warm-up request (compilation), seconds.
    pub warmup_time: f64,
    /// Frame rate the model was trained at.
    pub native_fps: f64,
    /// Generation-length limit in frames per invocation.
    pub max_frames: u32,
    pub attention_heads: u32,
    pub vae_spatial_compression: u32,
    pub vae_temporal_compression: u32,
    pub stage_costs: StageCosts,
    pub reference_shape: ReferenceShape,
    /// Affine intercept of the frame scaling curve, expressed in frames:
    /// latency scales with (frame_overhead + frames).
    #[serde(default)]
    pub frame_overhead: f64,
    /// (gpu_count, DiT speedup) samples; speedup(1) = 1.
    pub parallel_efficiency: Curve,
    #[serde(default)]
    pub batch_efficiency: BatchEfficiency,
    /// Audio-sync drift limit, seconds; only video/audio sync models have one.
    #[serde(default)]
    pub max_sync_duration: Option<f64>,
    /// Opaque quality score carried as metadata.
    pub elo: f64,
    /// Whether DiT and VAE can be scheduled as separate components.
    #[serde(default)]
    pub disaggregatable: bool,
    /// Minimum attention kernel generation the model requires.
    #[serde(default)]
    pub min_attention_tier: FlashAttentionTier,
    /// Whether the model is small enough to run on the CPU pseudo-SKU.
    #[serde(default)]
    pub cpu_capable: bool,
    /// Optional FP8 latency multiplier, applied on FA3-capable SKUs.
    #[serde(default)]
    pub fp8_latency_multiplier: Option<f64>,
}

impl ModelProfile {
    /// DiT parallel speedup for a GPU count; flat beyond the sampled points.
    pub fn parallel_speedup(&self, gpus: u32) -> f64 {
        self.parallel_efficiency.eval(gpus as f64)
    }

    /// Whether `gpus` is a legal parallel degree for this model.
    pub fn gpus_compatible(&self, gpus: u32) -> bool {
        gpus >= 1 && self.attention_heads % gpus == 0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| -> Error {
            Error::InvalidCatalog {
                entry: self.name.clone(),
                reason: reason.into(),
            }
        };
        if self.mem_footprint <= 0.0 || self.param_count <= 0.0 {
            return Err(bad("sizes must be strictly positive"));
        }
        if self.load_time < 0.0 || self.warmup_time < 0.0 {
            return Err(bad("load/warmup times must be non-negative"));
        }
        if self.native_fps <= 0.0 || self.max_frames == 0 {
            return Err(bad("fps and max_frames must be strictly positive"));
        }
        if self.vae_spatial_compression < 1 || self.vae_temporal_compression < 1 {
            return Err(bad("VAE compressions must be >= 1"));
        }
        let sc = &self.stage_costs;
        if sc.encode_base < 0.0 || sc.dit_per_step < 0.0 || sc.vae_encode < 0.0 || sc.vae_decode < 0.0
        {
            return Err(bad("stage costs must be non-negative"));
        }
        if self.frame_overhead < 0.0 {
            return Err(bad("frame_overhead must be non-negative"));
        }
        self.parallel_efficiency
            .validate("parallel_efficiency", &self.name)?;
        if (self.parallel_efficiency.eval(1.0) - 1.0).abs() > 1e-9 {
            return Err(bad("parallel speedup at 1 GPU must be 1.0"));
        }
        let mut prev = 0.0;
        for &(_, y) in &self.parallel_efficiency.0 {
            if y < prev {
                return Err(bad("parallel speedup must be non-decreasing"));
            }
            prev = y;
        }
        if self.batch_efficiency.dit.eval(4.0) > 1.05 {
            return Err(bad("DiT batch-4 gain must not exceed 1.05"));
        }
        if self.batch_efficiency.vae.eval(2.0) > 1.0 {
            return Err(bad("VAE batching must not improve throughput"));
        }
        if self.task_class == TaskClass::VplusA && self.max_sync_duration.is_none() {
            return Err(bad("VplusA models must declare max_sync_duration"));
        }
        if let Some(d) = self.max_sync_duration {
            if d <= 0.0 {
                return Err(bad("max_sync_duration must be strictly positive"));
            }
        }
        Ok(())
    }
}

/// A server type: pricing, power, memory, and relative performance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSku {
    pub name: String,
    pub gpus_per_server: u32,
    /// Dollars per server-hour, longest reservation term.
    pub price_reserved: f64,
    /// Dollars per server-hour on spot capacity.
    pub price_spot: f64,
    pub tdp_per_gpu: f64,
    pub idle_power_per_gpu: f64,
    /// GB of memory per GPU.
    pub mem_per_gpu: f64,
    /// Speedup relative to the A100 baseline.
    pub perf_multiplier: f64,
    pub flash_attention_tier: FlashAttentionTier,
    pub max_frequency_mhz: f64,
    /// Pseudo-SKU backed by CPUs rather than GPUs.
    #[serde(default)]
    pub is_cpu: bool,
    /// Regions where this SKU can be provisioned.
    pub regions: Vec<String>,
}

impl HardwareSku {
    /// Dollars per single-GPU hour.
    pub fn price_per_gpu_hour(&self, spot: bool) -> f64 {
        let p = if spot { self.price_spot } else { self.price_reserved };
        p / self.gpus_per_server as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| -> Error {
            Error::InvalidCatalog {
                entry: self.name.clone(),
                reason: reason.into(),
            }
        };
        if self.price_spot >= self.price_reserved {
            return Err(bad("spot price must be below reserved price"));
        }
        if self.perf_multiplier <= 0.0 {
            return Err(bad("perf_multiplier must be positive"));
        }
        if self.idle_power_per_gpu >= self.tdp_per_gpu {
            return Err(bad("idle power must be below TDP"));
        }
        if self.gpus_per_server == 0 || self.mem_per_gpu <= 0.0 || self.max_frequency_mhz <= 0.0 {
            return Err(bad("capacities must be strictly positive"));
        }
        Ok(())
    }

    /// Whether a model may run on this SKU at all.
    pub fn supports(&self, profile: &ModelProfile) -> bool {
        if self.flash_attention_tier < profile.min_attention_tier {
            return false;
        }
        if self.is_cpu && !profile.cpu_capable {
            return false;
        }
        true
    }
}

/// Inter-region latency/bandwidth and per-(region, SKU) GPU quotas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RegionGraph {
    pub regions: Vec<String>,
    /// One-way latency in seconds per ordered pair "a->b".
    pub latency: BTreeMap<String, f64>,
    /// Bandwidth in bytes/second per ordered pair "a->b".
    pub bandwidth: BTreeMap<String, f64>,
    /// GPU quota per "region/sku".
    pub availability: BTreeMap<String, f64>,
}

impl RegionGraph {
    fn pair_key(a: &str, b: &str) -> String {
        format!("{a}->{b}")
    }

    pub fn single_region(name: &str, quotas: &[(&str, f64)]) -> Self {
        let mut g = RegionGraph {
            regions: vec![name.to_string()],
            ..Default::default()
        };
        for (sku, q) in quotas {
            g.availability.insert(format!("{name}/{sku}"), *q);
        }
        g
    }

    pub fn latency_between(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 0.0;
        }
        self.latency
            .get(&Self::pair_key(a, b))
            .or_else(|| self.latency.get(&Self::pair_key(b, a)))
            .copied()
            .unwrap_or(0.0)
    }

    /// Bytes per second between two regions; effectively unbounded locally.
    pub fn bandwidth_between(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 1e12;
        }
        self.bandwidth
            .get(&Self::pair_key(a, b))
            .or_else(|| self.bandwidth.get(&Self::pair_key(b, a)))
            .copied()
            .unwrap_or(1.25e9)
    }

    /// Transfer time for `bytes` from region `a` to region `b`.
    pub fn transfer_seconds(&self, a: &str, b: &str, bytes: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        bytes / self.bandwidth_between(a, b) + self.latency_between(a, b)
    }

    pub fn quota(&self, region: &str, sku: &str) -> f64 {
        self.availability
            .get(&format!("{region}/{sku}"))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in &self.latency {
            if *v < 0.0 {
                return Err(Error::config(format!("negative latency for {k}")));
            }
            if let Some((a, b)) = k.split_once("->") {
                if a == b && *v != 0.0 {
                    return Err(Error::config(format!("self-latency of {a} must be 0")));
                }
                // Symmetric within 10% when both directions are given.
                if let Some(rev) = self.latency.get(&Self::pair_key(b, a)) {
                    if (*v - *rev).abs() > 0.1 * v.max(*rev) + 1e-9 {
                        return Err(Error::config(format!("latency for {k} is asymmetric")));
                    }
                }
            }
        }
        for (k, v) in &self.availability {
            if *v < 0.0 {
                return Err(Error::config(format!("negative quota for {k}")));
            }
        }
        Ok(())
    }
}

/// Global tuning constants carried with the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalogConfig {
    /// Busy average power as a fraction of peak; the paper pins it within 10%.
    pub busy_power_ratio: f64,
    /// VM provisioning lead time before a model can start loading, seconds.
    pub provision_lead_time: f64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        CatalogConfig {
            busy_power_ratio: 0.95,
            provision_lead_time: 120.0,
        }
    }
}

/// The loaded, validated catalog. Immutable after construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub models: Vec<ModelProfile>,
    pub skus: Vec<HardwareSku>,
    #[serde(default)]
    pub config: CatalogConfig,
    #[serde(skip)]
    frequency_model: FrequencyModel,
}

/// Bundled defaults encoding the published hardware table and the measured
/// model anchors.
const BUILTIN_CATALOG: &str = include_str!("../../data/catalog.json");
const BUILTIN_REGIONS: &str = include_str!("../../data/regions.json");

impl Catalog {
    pub fn from_json(json: &str) -> Result<Self> {
        let mut cat: Catalog =
            serde_json::from_str(json).map_err(|e| Error::config(format!("catalog: {e}")))?;
        cat.frequency_model = FrequencyModel::default();
        cat.validate()?;
        Ok(cat)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The bundled default catalog.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_CATALOG).expect("builtin catalog must validate")
    }

    /// The bundled default region graph.
    pub fn builtin_regions() -> RegionGraph {
        let g: RegionGraph =
            serde_json::from_str(BUILTIN_REGIONS).expect("builtin regions must parse");
        g.validate().expect("builtin regions must validate");
        g
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.models {
            m.validate()?;
        }
        for s in &self.skus {
            s.validate()?;
        }
        if let Some(a100) = self.skus.iter().find(|s| s.name == "A100") {
            if (a100.perf_multiplier - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidCatalog {
                    entry: "A100".into(),
                    reason: "baseline perf_multiplier must be 1.0".into(),
                });
            }
        }
        Ok(())
    }

    pub fn model(&self, name: &str) -> Result<&ModelProfile> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::UnknownModel(name.to_string()))
    }

    pub fn sku(&self, name: &str) -> Result<&HardwareSku> {
        self.skus
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::UnknownSku(name.to_string()))
    }

    pub fn models_of_class(&self, class: TaskClass) -> Vec<&ModelProfile> {
        self.models.iter().filter(|m| m.task_class == class).collect()
    }

    pub fn frequency_model(&self) -> &FrequencyModel {
        &self.frequency_model
    }

    /// Dollars to run `gpus` GPUs of `sku_name` for `duration` seconds.
    /// Fractional GPU shares bill the fraction.
    pub fn estimate_cost(
        &self,
        sku_name: &str,
        gpus: f64,
        spot: bool,
        duration: f64,
    ) -> Result<f64> {
        let sku = self.sku(sku_name)?;
        debug_assert!(duration >= 0.0);
        let price = if spot { sku.price_spot } else { sku.price_reserved };
        Ok(price * (gpus / sku.gpus_per_server as f64) * (duration / 3600.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalog_loads_and_validates() {
        let cat = Catalog::builtin();
        assert!(cat.models.len() >= 8);
        assert!(cat.sku("A100").is_ok());
        assert!(cat.model("wan21").is_ok());
    }

    #[test]
    fn builtin_regions_load() {
        let g = Catalog::builtin_regions();
        assert!(g.quota("westus", "A100") >= 256.0);
        assert!(g.latency_between("westus", "eastus") > 0.0);
        assert_eq!(g.latency_between("westus", "westus"), 0.0);
    }

    #[test]
    fn table_prices_follow_the_hardware_table() {
        let cat = Catalog::builtin();
        // 8xA100 reserved for one hour bills one full server-hour.
        let c = cat.estimate_cost("A100", 8.0, false, 3600.0).unwrap();
        assert!((c - 14.42).abs() < 1e-9);
        // 4xH100 spot for half an hour.
        let c = cat.estimate_cost("H100", 4.0, true, 1800.0).unwrap();
        assert!((c - 32.22 * 0.5 * 0.5).abs() < 1e-9);
        // Zero duration bills zero.
        let c = cat.estimate_cost("GB200", 4.0, false, 0.0).unwrap();
        assert_eq!(c, 0.0);
        assert!(matches!(
            cat.estimate_cost("nope", 1.0, false, 1.0),
            Err(Error::UnknownSku(_))
        ));
    }

    #[test]
    fn sku_support_rules() {
        let cat = Catalog::builtin();
        let wan = cat.model("wan21").unwrap();
        let kokoro = cat.model("kokoro").unwrap();
        let v100 = cat.sku("V100").unwrap();
        let cpu = cat.sku("CPU").unwrap();
        let a100 = cat.sku("A100").unwrap();
        assert!(!v100.supports(wan), "V100 lacks FlashAttention for DiT models");
        assert!(!cpu.supports(wan), "CPU cannot run diffusion models");
        assert!(cpu.supports(kokoro));
        assert!(a100.supports(wan));
    }

    #[test]
    fn curve_interpolates_and_clamps() {
        let c = Curve(vec![(1.0, 1.0), (2.0, 1.9), (4.0, 3.6)]);
        assert_eq!(c.eval(0.5), 1.0);
        assert_eq!(c.eval(8.0), 3.6);
        assert!((c.eval(3.0) - 2.75).abs() < 1e-12);
    }
}
