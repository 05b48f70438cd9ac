use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::model::{ModelError, SasNet};
use crate::tensor::Real;

pub const BENCH_WARMUP: usize = 10;
pub const BENCH_REPETITIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Interleaved frame size; each pass registers one `height x width/2` half.
    pub height: usize,
    pub width: usize,
    pub warmup: usize,
    pub repetitions: usize,
    pub mean_ms: f64,
    /// Sample standard deviation.
    pub std_ms: f64,
    /// `1000 / mean_ms`.
    pub fps: f64,
    pub device: String,
    pub timings_ms: Vec<f64>,
}

/// Wall-clock latency of one registration pass `G(E_S(even), E_A(odd))` on
/// a `height x width` interleaved frame. The first `warmup` runs are
/// discarded.
pub fn benchmark_inference<T: Real>(
    net: &SasNet<T>,
    height: usize,
    width: usize,
    warmup: usize,
    repetitions: usize,
) -> Result<BenchReport, ModelError> {
    if !width.is_multiple_of(2) {
        return Err(ModelError::ShapeMismatch(format!("frame width {width} is odd")));
    }
    if repetitions == 0 {
        return Err(ModelError::InvalidConfig("repetitions must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut noise = || Image::from_fn(height, width / 2, |_, _| rng.random::<f64>());
    let odd = noise();
    let even = noise();
    net.config().check_dims(height, width / 2)?;
    for _ in 0..warmup {
        std::hint::black_box(net.register(&odd, &even)?);
    }
    let mut timings_ms = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        std::hint::black_box(net.register(&odd, &even)?);
        timings_ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let n = timings_ms.len() as f64;
    let mean_ms = timings_ms.iter().sum::<f64>() / n;
    let std_ms = if timings_ms.len() > 1 {
        (timings_ms.iter().map(|t| (t - mean_ms).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(BenchReport {
        height,
        width,
        warmup,
        repetitions,
        mean_ms,
        std_ms,
        fps: 1000.0 / mean_ms,
        device: "cpu".to_string(),
        timings_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn protocol_counts_and_fps_identity() {
        let cfg = ModelConfig {
            c_s: 4,
            c_a: 4,
            base_channels: 4,
            levels: 2,
            appearance_channels: 2,
            ..ModelConfig::default()
        };
        let net = SasNet::<f32>::new(cfg, 0).unwrap();
        let r = benchmark_inference(&net, 16, 32, BENCH_WARMUP, BENCH_REPETITIONS).unwrap();
        assert_eq!(r.timings_ms.len(), 100);
        assert_eq!((r.warmup, r.repetitions), (10, 100));
        assert!((r.fps - 1000.0 / r.mean_ms).abs() < 1e-6);
        assert!(benchmark_inference(&net, 16, 31, 0, 1).is_err());
        assert!(benchmark_inference(&net, 10, 32, 0, 1).is_err());
    }
}
