//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Built without the libtest harness so the lines are printed under a plain
//! `cargo test`. Checks run one after another so the timing criteria are not
//! disturbed by concurrent tests; the process exits nonzero if any line
//! failed.

use std::time::{Duration, Instant};

use cofkit::bench::{bench_image, run_bench};
use cofkit::pipeline::{prepare, run_pipeline_detailed, select};
use cofkit::PipelineConfig;
use cofkit_core::color::{rgb_to_gray, rgb_to_lab};
use cofkit_core::cooc::{
    brute_soft, collect_gray, collect_hard, hard_to_soft, normalize_pmi, PmiMatrix, SoftModel,
};
use cofkit_core::filter::{
    bilateral, cof_gray, gaussian_filter, guided_cof, FilterParams, ScribbleSet, Stroke,
};
use cofkit_core::fixtures::{checkerboard, make_fixture, Fixture};
use cofkit_core::quantize::{assign_hard, cluster_affinity, kmeans_palette, GuidanceImage, Palette};
use cofkit_core::{ColorImage, GrayImage, Image, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Frozen boundary/texture fixture: 256x256, noise sigma 0.02, seed 1.
///
/// Pilot with the default configuration: in-patch std 0.4004 -> 0.0026
/// (153x), region step 0.1998 -> 0.1977 (1.03% change), 10-iteration MSD
/// final/first 2.7e-4, scribble masks 100% / 0%. The thresholds below were
/// fixed after that run.
const FIXTURE_SIZE: usize = 256;
const FIXTURE_NOISE: f64 = 0.02;
const FIXTURE_SEED: u64 = 1;

const MIN_TEXTURE_REDUCTION: f64 = 10.0;
const MAX_STEP_CHANGE: f64 = 0.05;

struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        let line = format!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((pass, line));
    }

    fn info(&self, name: &str, detail: String) {
        println!("INFO {name}: {detail}");
    }
}

fn fixture() -> GrayImage {
    make_fixture(Fixture::TwoRegionCheckerboard, FIXTURE_SIZE, FIXTURE_NOISE, FIXTURE_SEED).unwrap()
}

fn random_gray(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
    Image::new(w, h, (0..w * h).map(|_| rng.random()).collect()).unwrap()
}

fn random_color(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ColorImage {
    Image::new(w, h, (0..w * h).map(|_| [rng.random(), rng.random(), rng.random()]).collect()).unwrap()
}

fn random_labels(rng: &mut ChaCha8Rng, w: usize, h: usize, k: usize) -> GuidanceImage {
    let labels = (0..w * h).map(|_| rng.random_range(0..k as u16)).collect();
    GuidanceImage::new(w, h, labels, k).unwrap()
}

fn max_abs_diff<P: Sample>(a: &Image<P>, b: &Image<P>) -> f64 {
    a.pixels()
        .iter()
        .zip(b.pixels())
        .flat_map(|(p, q)| p.channels().iter().zip(q.channels()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

fn gray_level(v: f64) -> usize {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as usize
}

/// Direct double loop over the clipped window; one channel vector per pixel.
fn naive_filter<P: Sample>(
    img: &Image<P>,
    window: usize,
    sigma_s: f64,
    range: impl Fn(usize, usize) -> f64,
) -> Vec<Vec<f64>> {
    let (w, h) = img.dimensions();
    let r = window as isize;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = (y as usize) * w + x as usize;
            let mut num = vec![0.0; P::CHANNELS];
            let mut den = 0.0;
            for qy in y - r..=y + r {
                for qx in x - r..=x + r {
                    if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                        continue;
                    }
                    let q = (qy as usize) * w + qx as usize;
                    let d2 = ((qx - x).pow(2) + (qy - y).pow(2)) as f64;
                    let weight = (-d2 / (2.0 * sigma_s * sigma_s)).exp() * range(p, q);
                    for (n, v) in num.iter_mut().zip(img.pixels()[q].channels()) {
                        *n += weight * v;
                    }
                    den += weight;
                }
            }
            out.push(if den > 0.0 {
                num.iter().map(|n| n / den).collect()
            } else {
                img.pixels()[p].channels().to_vec()
            });
        }
    }
    out
}

fn max_diff_to_naive<P: Sample>(img: &Image<P>, naive: &[Vec<f64>]) -> f64 {
    img.pixels()
        .iter()
        .zip(naive)
        .flat_map(|(p, q)| p.channels().iter().zip(q).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Soft co-occurrence evaluated pixel pair by pixel pair, with memberships
/// taken from each pixel's hard cluster center.
fn soft_oracle(guide: &GuidanceImage, palette: &Palette, sigma_r: f64, sigma: f64, window: usize) -> Vec<f64> {
    let k = palette.k();
    let centers = palette.centers();
    let member: Vec<Vec<f64>> = (0..k)
        .map(|a| {
            let raw: Vec<f64> = centers
                .iter()
                .map(|c| {
                    let d2 = (centers[a].l - c.l).powi(2) + (centers[a].a - c.a).powi(2) + (centers[a].b - c.b).powi(2);
                    (-d2 / (2.0 * sigma_r * sigma_r)).exp()
                })
                .collect();
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / z).collect()
        })
        .collect();
    let (w, h) = guide.dimensions();
    let r = window as isize;
    let mut c = vec![0.0; k * k];
    for py in 0..h as isize {
        for px in 0..w as isize {
            let mp = &member[guide.label(px as usize, py as usize)];
            for qy in (py - r).max(0)..=(py + r).min(h as isize - 1) {
                for qx in (px - r).max(0)..=(px + r).min(w as isize - 1) {
                    let d2 = ((qx - px).pow(2) + (qy - py).pow(2)) as f64;
                    let g = (-d2 / (2.0 * sigma * sigma)).exp();
                    let mq = &member[guide.label(qx as usize, qy as usize)];
                    for a in 0..k {
                        for b in 0..k {
                            c[a * k + b] += g * mp[a] * mq[b];
                        }
                    }
                }
            }
        }
    }
    c
}

fn rel_frobenius(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn std_dev(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Samples inside the checkerboard patches, two pixels away from their edges.
fn patch_samples(img: &GrayImage) -> Vec<f64> {
    let mut out = Vec::new();
    for (x0, y0, x1, y1) in checkerboard::patches(img.width()) {
        for y in y0 + 2..y1 - 2 {
            for x in x0 + 2..x1 - 2 {
                out.push(img.get(x, y));
            }
        }
    }
    out
}

/// Mean difference across the vertical boundary between the two halves.
fn region_step(img: &GrayImage) -> f64 {
    let c = img.width() / 2;
    (0..img.height()).map(|y| img.get(c, y) - img.get(c - 1, y)).sum::<f64>() / img.height() as f64
}

fn delta_limit(report: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let params = FilterParams::default();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (w, h) = (rng.random_range(24..64), rng.random_range(24..64));
        let levels: Vec<u8> = (0..w * h).map(|_| rng.random()).collect();
        let gray = GrayImage::from_levels(w, h, &levels).unwrap();
        let (c, hist) = collect_gray(&gray, 0.0, params.window, None).unwrap();
        let m = normalize_pmi(&c, &hist, 1e-8).unwrap();
        worst = worst.max(max_abs_diff(&cof_gray(&gray, &m, &params).unwrap(), &gray));

        let k = rng.random_range(2..12);
        let guide = random_labels(&mut rng, w, h, k);
        let colors: Vec<[f64; 3]> = (0..k).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let img = Image::new(w, h, guide.labels().iter().map(|&l| colors[usize::from(l)]).collect()).unwrap();
        let (c, hist) = collect_hard(&guide, 0.0, params.window, None).unwrap();
        let m = normalize_pmi(&c, &hist, 1e-8).unwrap();
        worst = worst.max(max_abs_diff(&guided_cof(&img, &guide, &m, &params).unwrap(), &img));
    }
    let elapsed = start.elapsed();
    report.record(
        "delta-filter limit",
        worst <= 1e-9 && elapsed < Duration::from_secs(10),
        format!("max |out - in| = {worst:.2e} (<= 1e-9) over 20 images, {:.2} s (< 10 s)", elapsed.as_secs_f64()),
    );
}

fn gaussian_limit(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (w, h) = (rng.random_range(16..64), rng.random_range(16..64));
        let params = FilterParams::with_window(rng.random_range(1..8), rng.random_range(0.8..5.0));
        let gray = random_gray(&mut rng, w, h);
        let out = cof_gray(&gray, &PmiMatrix::all_ones(256), &params).unwrap();
        worst = worst.max(max_abs_diff(&out, &gaussian_filter(&gray, &params).unwrap()));

        let k = rng.random_range(1..16);
        let guide = random_labels(&mut rng, w, h, k);
        let img = random_color(&mut rng, w, h);
        let out = guided_cof(&img, &guide, &PmiMatrix::all_ones(k), &params).unwrap();
        worst = worst.max(max_abs_diff(&out, &gaussian_filter(&img, &params).unwrap()));
    }
    report.record(
        "gaussian limit",
        worst <= 1e-9,
        format!("max |cof - gaussian| = {worst:.2e} (<= 1e-9) over 20 images"),
    );
}

fn soft_equivalence(report: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut worst_brute, mut worst_oracle) = (0.0f64, 0.0f64);
    for i in 0..50 {
        let img = random_color(&mut rng, 32, 32);
        let lab = rgb_to_lab(&img);
        let palette = kmeans_palette(&lab, rng.random_range(1..=8), 2, i).unwrap();
        let guide = assign_hard(&lab, &palette);
        let sigma_r = rng.random_range(2.0..60.0);
        let sigma = rng.random_range(0.5..4.0);
        let window = rng.random_range(1..=5);
        let (c, _) = collect_hard(&guide, sigma, window, None).unwrap();
        let fast = hard_to_soft(&c, &cluster_affinity(&palette, sigma_r).unwrap()).unwrap();
        let brute = brute_soft(&lab, &guide, &palette, sigma_r, sigma, window, SoftModel::Approximate).unwrap();
        worst_brute = worst_brute.max(rel_frobenius(fast.values(), brute.values()));
        let oracle = soft_oracle(&guide, &palette, sigma_r, sigma, window);
        worst_oracle = worst_oracle.max(rel_frobenius(fast.values(), &oracle));
    }
    let elapsed = start.elapsed();
    report.record(
        "soft co-occurrence oracle equivalence",
        worst_brute <= 1e-10 && worst_oracle <= 1e-10 && elapsed < Duration::from_secs(60),
        format!(
            "relative Frobenius vs brute_soft {worst_brute:.2e}, vs pairwise oracle {worst_oracle:.2e} (<= 1e-10) \
             over 50 instances, {:.2} s (< 60 s)",
            elapsed.as_secs_f64()
        ),
    );
}

fn brute_force_filters(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = [0.0f64; 4];
    for _ in 0..100 {
        let (w, h) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let window = rng.random_range(0..=5);
        let sigma_s = rng.random_range(0.5..4.0);
        let params = FilterParams {
            sigma_r: rng.random_range(0.05..0.5),
            ..FilterParams::with_window(window, sigma_s)
        };

        let gray = random_gray(&mut rng, w, h);
        let (c, hist) = collect_gray(&gray, rng.random_range(0.5..3.0), rng.random_range(1..4), None).unwrap();
        let m = normalize_pmi(&c, &hist, 1e-8).unwrap();
        let naive = naive_filter(&gray, window, sigma_s, |p, q| {
            m.get(gray_level(gray.pixels()[p]), gray_level(gray.pixels()[q]))
        });
        worst[0] = worst[0].max(max_diff_to_naive(&cof_gray(&gray, &m, &params).unwrap(), &naive));

        let k = rng.random_range(1..=6);
        let guide = random_labels(&mut rng, w, h, k);
        let mut values: Vec<f64> = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..=a {
                let v = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..5.0) };
                values[a * k + b] = v;
                values[b * k + a] = v;
            }
        }
        let m = PmiMatrix::from_values(k, values).unwrap();
        let color = random_color(&mut rng, w, h);
        let labels = guide.labels();
        let naive = naive_filter(&color, window, sigma_s, |p, q| {
            m.get(usize::from(labels[p]), usize::from(labels[q]))
        });
        worst[1] = worst[1].max(max_diff_to_naive(&guided_cof(&color, &guide, &m, &params).unwrap(), &naive));

        let range = |d2: f64| (-d2 / (2.0 * params.sigma_r * params.sigma_r)).exp();
        let naive = naive_filter(&gray, window, sigma_s, |p, q| range((gray.pixels()[p] - gray.pixels()[q]).powi(2)));
        worst[2] = worst[2].max(max_diff_to_naive(&bilateral(&gray, &params).unwrap(), &naive));
        let naive = naive_filter(&color, window, sigma_s, |p, q| {
            let (a, b) = (color.pixels()[p], color.pixels()[q]);
            range((0..3).map(|c| (a[c] - b[c]).powi(2)).sum())
        });
        worst[2] = worst[2].max(max_diff_to_naive(&bilateral(&color, &params).unwrap(), &naive));

        let naive = naive_filter(&color, window, sigma_s, |_, _| 1.0);
        worst[3] = worst[3].max(max_diff_to_naive(&gaussian_filter(&color, &params).unwrap(), &naive));
    }
    let pass = worst.iter().all(|&d| d <= 1e-12);
    report.record(
        "brute-force filter equivalence",
        pass,
        format!(
            "max diff cof_gray {:.1e}, guided_cof {:.1e}, bilateral {:.1e}, gaussian {:.1e} (<= 1e-12) over 100 instances",
            worst[0], worst[1], worst[2], worst[3]
        ),
    );
}

fn ramp(report: &mut Report) {
    let ramp = make_fixture(Fixture::Ramp, 256, 0.0, 0).unwrap();
    let run = |sigma_r: Option<f64>| {
        let cfg = PipelineConfig {
            sigma_r,
            ..Default::default()
        };
        let out = run_pipeline_detailed(&cfg, &ramp.to_color()).unwrap();
        let gray = rgb_to_gray(&out.image);
        let mse = gray.pixels().iter().zip(ramp.pixels()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            / ramp.len() as f64;
        (mse, out.statistics.sigma_r)
    };
    let (soft, sigma_r) = run(None);
    let (hard, _) = run(Some(0.0));

    let params = FilterParams::default();
    let (c, h) = collect_gray(&ramp, params.sigma_s, params.window, None).unwrap();
    let m = normalize_pmi(&c, &h, 1e-8).unwrap();
    let out = cof_gray(&ramp, &m, &params).unwrap();
    let mae = out.pixels().iter().zip(ramp.pixels()).map(|(a, b)| (a - b).abs()).sum::<f64>() / ramp.len() as f64;
    report.record(
        "ramp",
        soft < hard && mae < 1.0 / 255.0,
        format!(
            "k=32 MSE soft (sigma_r {sigma_r:.2}) {soft:.3e} < hard {hard:.3e}; gray CoF MAE {:.3} levels (< 1)",
            mae * 255.0
        ),
    );
}

fn boundary_vs_texture(report: &mut Report) {
    let img = fixture();
    let out = rgb_to_gray(&run_pipeline_detailed(&PipelineConfig::default(), &img.to_color()).unwrap().image);
    let (sd_in, sd_out) = (std_dev(&patch_samples(&img)), std_dev(&patch_samples(&out)));
    let (step_in, step_out) = (region_step(&img), region_step(&out));
    let reduction = sd_in / sd_out;
    let change = (step_out - step_in).abs() / step_in.abs();
    report.record(
        "boundary vs texture",
        reduction >= MIN_TEXTURE_REDUCTION && change <= MAX_STEP_CHANGE,
        format!(
            "patch std {sd_in:.4} -> {sd_out:.4} ({reduction:.1}x, >= {MIN_TEXTURE_REDUCTION}x); \
             step {step_in:.4} -> {step_out:.4} ({:.2}%, <= {:.0}%)",
            change * 100.0,
            MAX_STEP_CHANGE * 100.0
        ),
    );
}

fn convergence(report: &mut Report) {
    let cfg = PipelineConfig {
        iterations: 10,
        ..Default::default()
    };
    let msd = run_pipeline_detailed(&cfg, &fixture().to_color()).unwrap().msd;
    let ratio = msd[msd.len() - 1] / msd[0];
    report.record(
        "convergence",
        msd.len() == 10 && ratio < 0.01,
        format!("MSD first {:.3e}, last {:.3e}, ratio {ratio:.2e} (< 1e-2)", msd[0], msd[msd.len() - 1]),
    );
}

fn scale_invariance(report: &mut Report) {
    let img = fixture().to_color();
    let cfg = PipelineConfig::default();
    let (guidance, stats) = prepare(&cfg, &img).unwrap();
    let params = cfg.filter_params();
    let base = guided_cof(&img, &guidance.guide, &stats.matrix, &params).unwrap();
    let mut identical = true;
    let mut worst_entrywise = 0.0f64;
    for c in [1e-3, 1.0, 1e3] {
        let scaled = stats.matrix.scaled(c).unwrap();
        identical &= guided_cof(&img, &guidance.guide, &scaled, &params).unwrap() == base;
        let values = stats.matrix.to_values().iter().map(|v| v * c).collect();
        let rebuilt = PmiMatrix::from_values(stats.matrix.dim(), values).unwrap();
        let out = guided_cof(&img, &guidance.guide, &rebuilt, &params).unwrap();
        worst_entrywise = worst_entrywise.max(max_abs_diff(&out, &base));
    }
    report.record(
        "scale invariance",
        identical,
        format!("c*M for c in {{1e-3, 1, 1e3}}: bit-identical = {identical}"),
    );
    report.info(
        "scale invariance",
        format!("matrices rebuilt from multiplied entries differ by at most {worst_entrywise:.1e}"),
    );
}

fn performance(report: &mut Report) {
    let img = bench_image(1024, 7);
    let cfg = PipelineConfig::default();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let bench = pool.install(|| run_bench(&cfg, &img)).unwrap();
    let (collection, filter) = (bench.collection_s(), bench.filter_s);
    report.record(
        "performance",
        bench.threads == 1 && collection <= 10.0 && filter <= 6.0,
        format!(
            "{}x{} window {}x{} k={} threads={}: collection {collection:.2} s (<= 10 s), filter {filter:.2} s (<= 6 s), \
             quantize {:.2} s",
            bench.width,
            bench.height,
            2 * bench.window + 1,
            2 * bench.window + 1,
            bench.k,
            bench.threads,
            bench.quantize_s
        ),
    );
}

fn scribble_propagation(report: &mut Report) {
    let img = fixture();
    let s = FIXTURE_SIZE;
    let cfg = PipelineConfig::default();
    let (guidance, total) = prepare(&cfg, &img.to_color()).unwrap();
    let mut strokes = ScribbleSet::blank(s, s);
    for y in s / 8..7 * s / 8 {
        strokes.set(s / 4, y, Stroke::Foreground);
        strokes.set(3 * s / 4, y, Stroke::Background);
    }
    let mask = select(&cfg, &guidance, &total, &strokes).unwrap().mask;
    let (mut left, mut right) = (0usize, 0usize);
    for y in 0..s {
        for x in 0..s {
            if mask.contains(x, y) {
                if x < s / 2 {
                    left += 1;
                } else {
                    right += 1;
                }
            }
        }
    }
    let half = (s * s / 2) as f64;
    let (inside, outside) = (left as f64 / half, right as f64 / half);
    report.record(
        "scribble propagation",
        inside >= 0.9 && outside <= 0.05,
        format!(
            "one line stroke per half: stroked half {:.1}% (>= 90%), other half {:.1}% (<= 5%)",
            inside * 100.0,
            outside * 100.0
        ),
    );
}

fn main() {
    let mut report = Report { lines: Vec::new() };
    delta_limit(&mut report);
    gaussian_limit(&mut report);
    soft_equivalence(&mut report);
    brute_force_filters(&mut report);
    ramp(&mut report);
    boundary_vs_texture(&mut report);
    convergence(&mut report);
    scale_invariance(&mut report);
    performance(&mut report);
    scribble_propagation(&mut report);
    let failed = report.lines.iter().filter(|(pass, _)| !pass).count();
    println!("acceptance: {} passed, {failed} failed", report.lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
