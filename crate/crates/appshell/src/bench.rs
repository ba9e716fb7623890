//! Stage timings for the guided pipeline.

use std::time::Instant;

use cofkit_core::fixtures::{make_fixture, Fixture};
use cofkit_core::{ColorImage, Image};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::pipeline::{self, PipelineError, Stage};

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub window: usize,
    pub k: usize,
    pub threads: usize,
    pub quantize_s: f64,
    pub collect_s: f64,
    pub hard2soft_s: f64,
    pub cooc2pmi_s: f64,
    pub filter_s: f64,
}

impl BenchReport {
    /// Everything between quantization and filtering.
    pub fn collection_s(&self) -> f64 {
        self.collect_s + self.hard2soft_s + self.cooc2pmi_s
    }

    pub fn to_text(&self) -> String {
        let side = 2 * self.window + 1;
        format!(
            "image        {}x{} ({:.2} MP)\nwindow       {side}x{side}\nk            {}\nthreads      {}\n\
             quantize     {:.3} s\ncollect      {:.3} s\nhard2soft    {:.3} s\ncooc2pmi     {:.3} s\n\
             collection   {:.3} s\nfilter       {:.3} s\n",
            self.width,
            self.height,
            (self.width * self.height) as f64 / 1e6,
            self.k,
            self.threads,
            self.quantize_s,
            self.collect_s,
            self.hard2soft_s,
            self.cooc2pmi_s,
            self.collection_s(),
            self.filter_s,
        )
    }
}

/// A colorful synthetic input: checkerboard regions in red, a ramp in green
/// and stripes in blue.
pub fn bench_image(size: usize, seed: u64) -> ColorImage {
    let r = make_fixture(Fixture::TwoRegionCheckerboard, size, 0.03, seed).expect("valid fixture");
    let g = make_fixture(Fixture::Ramp, size, 0.03, seed + 1).expect("valid fixture");
    let b = make_fixture(Fixture::StepStripes, size, 0.03, seed + 2).expect("valid fixture");
    let data = r
        .pixels()
        .iter()
        .zip(g.pixels())
        .zip(b.pixels())
        .map(|((&r, &g), &b)| [r, g, b])
        .collect();
    Image::new(size, size, data).expect("fixture samples are in range")
}

fn at(stage: Stage) -> impl Fn(cofkit_core::CofError) -> PipelineError {
    move |source| PipelineError { stage, source }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Times each stage once on `img` in the current rayon pool.
pub fn run_bench(cfg: &PipelineConfig, img: &ColorImage) -> Result<BenchReport, PipelineError> {
    use cofkit_core::cooc::{collect_hard, hard_to_soft, normalize_pmi, soft_histogram};
    use cofkit_core::quantize::{cluster_affinity, default_sigma_r};

    let (guidance, quantize_s) = timed(|| pipeline::quantize(cfg, img));
    let guidance = guidance?;
    let (collected, collect_s) = timed(|| collect_hard(&guidance.guide, cfg.sigma_s(), cfg.window, None));
    let (c, h) = collected.map_err(at(Stage::Collect))?;
    let (soft, hard2soft_s) = timed(|| {
        let sigma_r = match cfg.sigma_r {
            Some(r) => Ok(r),
            None if guidance.palette.k() < 2 => Ok(0.0),
            None => default_sigma_r(&guidance.palette),
        }?;
        let affinity = cluster_affinity(&guidance.palette, sigma_r)?;
        Ok((hard_to_soft(&c, &affinity)?, soft_histogram(&h, &affinity)?, sigma_r))
    });
    let (c_soft, h_soft, sigma_r) = soft.map_err(at(Stage::Hard2Soft))?;
    let (matrix, cooc2pmi_s) = timed(|| normalize_pmi(&c_soft, &h_soft, cfg.epsilon));
    let stats = pipeline::Statistics {
        matrix: matrix.map_err(at(Stage::Cooc2Pmi))?,
        sigma_r,
    };
    let single = PipelineConfig {
        iterations: 1,
        ..cfg.clone()
    };
    let (filtered, filter_s) = timed(|| pipeline::apply_cof(&single, img, &guidance, &stats));
    filtered?;
    Ok(BenchReport {
        width: img.width(),
        height: img.height(),
        window: cfg.window,
        k: guidance.palette.k(),
        threads: rayon::current_num_threads(),
        quantize_s,
        collect_s,
        hard2soft_s,
        cooc2pmi_s,
        filter_s,
    })
}
