//! Independent reference implementations and fixtures shared by the integration tests.
//! Written as plain loops over the definitions, without calling into the library.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn entropy_of_counts<'a>(counts: impl IntoIterator<Item = &'a f64>) -> f64 {
    let counts: Vec<f64> = counts.into_iter().copied().filter(|&c| c > 0.0).collect();
    let total: f64 = counts.iter().sum();
    let mut h = 0.0;
    for c in counts {
        let p = c / total;
        h -= p * p.log2();
    }
    h
}

pub fn naive_shannon(pixels: &[u8]) -> f64 {
    let mut counts: BTreeMap<u8, f64> = BTreeMap::new();
    for &p in pixels {
        *counts.entry(p).or_default() += 1.0;
    }
    entropy_of_counts(counts.values())
}

pub fn naive_glcm_entropy(pixels: &[u8], w: usize, h: usize, levels: usize, offset: (i32, i32), symmetric: bool) -> f64 {
    let mut counts = vec![vec![0.0f64; levels]; levels];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (nx, ny) = (x + offset.0 as i64, y + offset.1 as i64);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let a = pixels[(y as usize) * w + x as usize] as usize * levels / 256;
            let b = pixels[(ny as usize) * w + nx as usize] as usize * levels / 256;
            counts[a][b] += 1.0;
            if symmetric {
                counts[b][a] += 1.0;
            }
        }
    }
    entropy_of_counts(counts.iter().flatten())
}

/// Gradients from an explicitly edge-padded copy of the image.
pub fn naive_gradients(pixels: &[u8], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let (pw, ph) = (w + 2, h + 2);
    let mut padded = vec![0.0f64; pw * ph];
    for py in 0..ph {
        for px in 0..pw {
            let sx = px.clamp(1, w) - 1;
            let sy = py.clamp(1, h) - 1;
            padded[py * pw + px] = pixels[sy * w + sx] as f64;
        }
    }
    let mut fx = Vec::new();
    let mut fy = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x + 1, y + 1);
            let (l, r) = (padded[py * pw + px - 1], padded[py * pw + px + 1]);
            let (u, d) = (padded[(py - 1) * pw + px], padded[(py + 1) * pw + px]);
            fx.push((r - l) / 2.0);
            fy.push((d - u) / 2.0);
        }
    }
    (fx, fy)
}

pub fn naive_delentropy(pixels: &[u8], w: usize, h: usize, bins: usize, half: bool) -> f64 {
    let (fx, fy) = naive_gradients(pixels, w, h);
    let limit = 127.5;
    let bin = |v: f64| -> usize {
        let t = ((v + limit) * bins as f64 / (2.0 * limit)).floor();
        if t < 0.0 {
            0
        } else if t >= bins as f64 {
            bins - 1
        } else {
            t as usize
        }
    };
    let mut counts: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (a, b) in fx.iter().zip(&fy) {
        *counts.entry((bin(*a), bin(*b))).or_default() += 1.0;
    }
    let h = entropy_of_counts(counts.values());
    if half {
        h / 2.0
    } else {
        h
    }
}

/// All (distance, index) pairs for sample `i`, sorted, self excluded.
pub fn naive_neighbors(points: &[Vec<f64>], i: usize) -> Vec<(f64, usize)> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for (j, p) in points.iter().enumerate() {
        if j == i {
            continue;
        }
        let mut s = 0.0;
        for (a, b) in points[i].iter().zip(p) {
            s += (a - b) * (a - b);
        }
        out.push((s.sqrt(), j));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    out
}

pub fn naive_mle(row: &[f64], k: usize) -> f64 {
    let tk = row[k - 1];
    let mut s = 0.0;
    for &t in &row[..k - 1] {
        s += (tk / t).ln();
    }
    (k - 1) as f64 / s
}

fn ab_sse(min_dist: f64, spread: f64, a: f64, b: f64) -> f64 {
    let n = 300;
    let mut sse = 0.0;
    for i in 0..n {
        let x = 3.0 * spread * i as f64 / (n - 1) as f64;
        let y = if x <= min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() };
        let f = 1.0 / (1.0 + a * x.powf(2.0 * b));
        sse += (f - y) * (f - y);
    }
    sse
}

/// Nelder-Mead on the same least-squares target, from a different start.
pub fn oracle_fit_ab(min_dist: f64, spread: f64) -> (f64, f64) {
    let f = |p: [f64; 2]| {
        if p[0] <= 0.0 || p[1] <= 0.0 {
            f64::INFINITY
        } else {
            ab_sse(min_dist, spread, p[0], p[1])
        }
    };
    let mut simplex = [[0.5, 0.5], [2.0, 0.5], [0.5, 2.0]];
    for _ in 0..5000 {
        simplex.sort_by(|a, b| f(*a).partial_cmp(&f(*b)).unwrap());
        let [best, mid, worst] = simplex;
        let centroid = [(best[0] + mid[0]) / 2.0, (best[1] + mid[1]) / 2.0];
        let at = |t: f64| [centroid[0] + t * (worst[0] - centroid[0]), centroid[1] + t * (worst[1] - centroid[1])];
        let refl = at(-1.0);
        if f(refl) < f(best) {
            let exp = at(-2.0);
            simplex[2] = if f(exp) < f(refl) { exp } else { refl };
        } else if f(refl) < f(mid) {
            simplex[2] = refl;
        } else {
            let con = at(0.5);
            if f(con) < f(worst) {
                simplex[2] = con;
            } else {
                for p in simplex.iter_mut().skip(1) {
                    p[0] = best[0] + 0.5 * (p[0] - best[0]);
                    p[1] = best[1] + 0.5 * (p[1] - best[1]);
                }
            }
        }
        let spread_f = (f(simplex[0]) - f(simplex[2])).abs();
        if spread_f < 1e-16 {
            break;
        }
    }
    simplex.sort_by(|a, b| f(*a).partial_cmp(&f(*b)).unwrap());
    (simplex[0][0], simplex[0][1])
}

/// Orthonormal `d`-frame in `ambient` dimensions via Gram-Schmidt on Gaussian vectors.
pub fn random_frame(d: usize, ambient: usize, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < d {
        let mut v: Vec<f64> = (0..ambient).map(|_| StandardNormal.sample(r)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// `n` points uniform on the unit `d`-cube, isometrically placed in `ambient` dimensions.
pub fn embedded_hypercube(n: usize, d: usize, ambient: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let frame = random_frame(d, ambient, &mut r);
    (0..n)
        .map(|_| {
            let u: Vec<f64> = (0..d).map(|_| r.random::<f64>()).collect();
            let mut x = vec![0.0; ambient];
            for (c, b) in u.iter().zip(&frame) {
                for (xi, bi) in x.iter_mut().zip(b) {
                    *xi += c * bi;
                }
            }
            x
        })
        .collect()
}

/// Two Gaussian blobs of `per` points each in `dim` dimensions, centers `sep` apart.
pub fn two_clusters(per: usize, dim: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng(seed);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for label in 0..2 {
        for _ in 0..per {
            let mut p: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
            p[0] += sep * label as f64;
            points.push(p);
            labels.push(label);
        }
    }
    (points, labels)
}

pub fn random_pixels(len: usize, r: &mut ChaCha8Rng) -> Vec<u8> {
    // mix of full-range and narrow-range images so sparse and dense histograms both occur
    let span: u16 = if r.random_bool(0.5) { 256 } else { r.random_range(1..=16) };
    let base: u16 = r.random_range(0..=(256 - span));
    (0..len).map(|_| (base + r.random_range(0..span)) as u8).collect()
}

pub fn write_png(path: &Path, w: u32, h: u32, pixels: Vec<u8>) {
    image::GrayImage::from_raw(w, h, pixels).expect("buffer size").save(path).expect("png write");
}

/// Which synthetic family to generate for the end-to-end ordering fixtures.
#[derive(Debug, Clone, Copy)]
pub enum Family {
    /// Linear ramps over a narrow gray span, random direction and offset.
    Smooth,
    /// Sinusoidal gratings of mid spatial frequency with random orientation and phase.
    Texture,
    /// Independent uniform pixels.
    Noise,
}

pub fn synth_image(family: Family, side: usize, r: &mut ChaCha8Rng) -> Vec<u8> {
    let mut px = Vec::with_capacity(side * side);
    match family {
        Family::Smooth => {
            let theta: f64 = r.random_range(0.0..std::f64::consts::TAU);
            let base: f64 = r.random_range(40.0..160.0);
            let span = 48.0;
            for y in 0..side {
                for x in 0..side {
                    let t = (x as f64 * theta.cos() + y as f64 * theta.sin()) / side as f64;
                    px.push((base + span * t * 0.5).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Family::Texture => {
            let theta: f64 = r.random_range(0.0..std::f64::consts::PI);
            let period: f64 = r.random_range(6.0..12.0);
            let phase: f64 = r.random_range(0.0..std::f64::consts::TAU);
            for y in 0..side {
                for x in 0..side {
                    let t = (x as f64 * theta.cos() + y as f64 * theta.sin()) * std::f64::consts::TAU / period;
                    px.push((128.0 + 90.0 * (t + phase).sin()).round() as u8);
                }
            }
        }
        Family::Noise => {
            for _ in 0..side * side {
                px.push(r.random::<u8>());
            }
        }
    }
    px
}
