//! Straight-line reference implementations written independently of the
//! library kernels (no im2col, no GEMM, no band helpers).

#![allow(dead_code)]

use gaitmm::model::{
    bme_forward, gem_pool, lma_forward, msma_forward, pme_forward, sefc_forward, Conv3dWeights, DepthwiseSeparable3dWeights,
    HeadParams, LmaParams, Linear, ModelConfig, ModelParams, MsmaParams, PartConv, PartFilterBank, PmeMode,
};
use gaitmm::{FeatureMap, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_map<R: Rng>(rng: &mut R, c: usize, t: usize, h: usize, w: usize) -> FeatureMap<f64> {
    FeatureMap::from_fn(c, t, h, w, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Zero-padded read from a slab `[row0, row0 + rows)` treated as its own tensor.
fn padded(x: &FeatureMap<f64>, c: usize, t: isize, h: isize, w: isize, row0: usize, rows: usize) -> f64 {
    if t < 0 || h < 0 || w < 0 || t as usize >= x.frames() || h as usize >= rows || w as usize >= x.width() {
        0.0
    } else {
        x.get(c, t as usize, row0 + h as usize, w as usize)
    }
}

/// 3×3×3 convolution, padding 1, stride 1, over one height slab.
pub fn conv3d_slab(x: &FeatureMap<f64>, w: &Conv3dWeights<f64>, row0: usize, rows: usize) -> FeatureMap<f64> {
    let (cout, cin) = (w.out_channels, w.in_channels);
    let mut y = FeatureMap::zeros(cout, x.frames(), rows, x.width());
    for o in 0..cout {
        for t in 0..x.frames() {
            for h in 0..rows {
                for col in 0..x.width() {
                    let mut acc = w.bias[o];
                    for i in 0..cin {
                        for kt in 0..3 {
                            for kh in 0..3 {
                                for kw in 0..3 {
                                    let k = w.kernel[(((o * cin + i) * 3 + kt) * 3 + kh) * 3 + kw];
                                    let v = padded(
                                        x,
                                        i,
                                        t as isize + kt as isize - 1,
                                        h as isize + kh as isize - 1,
                                        col as isize + kw as isize - 1,
                                        row0,
                                        rows,
                                    );
                                    acc += k * v;
                                }
                            }
                        }
                    }
                    y.set(o, t, h, col, acc);
                }
            }
        }
    }
    y
}

pub fn dw_conv_slab(x: &FeatureMap<f64>, w: &DepthwiseSeparable3dWeights<f64>, row0: usize, rows: usize) -> FeatureMap<f64> {
    let (cout, cin) = (w.out_channels, w.in_channels);
    let mut depth = FeatureMap::zeros(cin, x.frames(), rows, x.width());
    for i in 0..cin {
        for t in 0..x.frames() {
            for h in 0..rows {
                for col in 0..x.width() {
                    let mut acc = 0.0;
                    for kt in 0..3 {
                        for kh in 0..3 {
                            for kw in 0..3 {
                                let k = w.depthwise[i * 27 + (kt * 3 + kh) * 3 + kw];
                                acc += k * padded(
                                    x,
                                    i,
                                    t as isize + kt as isize - 1,
                                    h as isize + kh as isize - 1,
                                    col as isize + kw as isize - 1,
                                    row0,
                                    rows,
                                );
                            }
                        }
                    }
                    depth.set(i, t, h, col, acc);
                }
            }
        }
    }
    let mut y = FeatureMap::zeros(cout, x.frames(), rows, x.width());
    for o in 0..cout {
        for t in 0..x.frames() {
            for h in 0..rows {
                for col in 0..x.width() {
                    let mut acc = w.bias[o];
                    for i in 0..cin {
                        acc += w.pointwise[o * cin + i] * depth.get(i, t, h, col);
                    }
                    y.set(o, t, h, col, acc);
                }
            }
        }
    }
    y
}

fn paste_rows(dst: &mut FeatureMap<f64>, row0: usize, src: &FeatureMap<f64>) {
    for c in 0..src.channels() {
        for t in 0..src.frames() {
            for h in 0..src.height() {
                for w in 0..src.width() {
                    dst.set(c, t, row0 + h, w, src.get(c, t, h, w));
                }
            }
        }
    }
}

pub fn bme_oracle(x: &FeatureMap<f64>, w: &Conv3dWeights<f64>) -> FeatureMap<f64> {
    conv3d_slab(x, w, 0, x.height())
}

/// Each bank convolves its own slab; slabs are concatenated along height.
pub fn pme_oracle(x: &FeatureMap<f64>, bank: &PartFilterBank<f64>) -> FeatureMap<f64> {
    let k = bank.banks.len();
    let rows = x.height() / k;
    let cout = match &bank.banks[0] {
        PartConv::Standard(w) => w.out_channels,
        PartConv::DepthwiseSeparable(w) => w.out_channels,
    };
    let mut y = FeatureMap::zeros(cout, x.frames(), x.height(), x.width());
    for (j, b) in bank.banks.iter().enumerate() {
        let part = match b {
            PartConv::Standard(w) => conv3d_slab(x, w, j * rows, rows),
            PartConv::DepthwiseSeparable(w) => dw_conv_slab(x, w, j * rows, rows),
        };
        paste_rows(&mut y, j * rows, &part);
    }
    y
}

pub fn leaky(v: f64, slope: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        slope * v
    }
}

pub fn ffsl_oracle(x: &FeatureMap<f64>, bme: &Conv3dWeights<f64>, pme: Option<&PartFilterBank<f64>>, slope: f64) -> FeatureMap<f64> {
    let mut y = bme_oracle(x, bme);
    if let Some(bank) = pme {
        let p = pme_oracle(x, bank);
        for (a, b) in y.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *a += b;
        }
    }
    y.map(|v| leaky(v, slope))
}

/// `p1·max + p2·mean` over non-overlapping windows of 3 frames, on rows `[row0, row0 + rows)`.
pub fn lma_oracle(x: &FeatureMap<f64>, p: &LmaParams<f64>, row0: usize, rows: usize) -> FeatureMap<f64> {
    let mut y = FeatureMap::zeros(x.channels(), x.frames() / 3, rows, x.width());
    for c in 0..x.channels() {
        for t in 0..x.frames() / 3 {
            for h in 0..rows {
                for w in 0..x.width() {
                    let vals = [x.get(c, 3 * t, row0 + h, w), x.get(c, 3 * t + 1, row0 + h, w), x.get(c, 3 * t + 2, row0 + h, w)];
                    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mean = (vals[0] + vals[1] + vals[2]) / 3.0;
                    y.set(c, t, h, w, p.p1 * max + p.p2 * mean);
                }
            }
        }
    }
    y
}

/// Global LMA plus the concatenation of per-slab LMAs.
pub fn msma_oracle(x: &FeatureMap<f64>, mp: &MsmaParams<f64>) -> FeatureMap<f64> {
    let mut y = lma_oracle(x, &mp.global_lma, 0, x.height());
    let l = mp.part_lmas.len();
    let rows = x.height() / l;
    for (j, p) in mp.part_lmas.iter().enumerate() {
        let part = lma_oracle(x, p, j * rows, rows);
        for c in 0..part.channels() {
            for t in 0..part.frames() {
                for h in 0..rows {
                    for w in 0..part.width() {
                        let v = y.get(c, t, j * rows + h, w) + part.get(c, t, h, w);
                        y.set(c, t, j * rows + h, w, v);
                    }
                }
            }
        }
    }
    y
}

pub fn temporal_max_oracle(x: &FeatureMap<f64>) -> FeatureMap<f64> {
    FeatureMap::from_fn(x.channels(), 1, x.height(), x.width(), |c, _, h, w| {
        (0..x.frames()).map(|t| x.get(c, t, h, w)).fold(f64::NEG_INFINITY, f64::max)
    })
}

/// `(mean(max(v, eps)^δ))^(1/δ)` over each horizontal strip, per channel.
pub fn gem_oracle(x: &FeatureMap<f64>, delta: f64, strips: usize, eps: f64) -> Matrix<f64> {
    let rows = x.height() / strips;
    Matrix::from_fn(strips, x.channels(), |s, c| {
        let mut acc = 0.0;
        let mut n = 0.0;
        for h in s * rows..(s + 1) * rows {
            for w in 0..x.width() {
                acc += x.get(c, 0, h, w).max(eps).powf(delta);
                n += 1.0;
            }
        }
        (acc / n).powf(1.0 / delta)
    })
}

/// Separate fully connected layer per strip.
pub fn sefc_oracle(strips: &Matrix<f64>, head: &HeadParams<f64>) -> Matrix<f64> {
    let out_dim = head.sefc_weights[0].out_dim;
    Matrix::from_fn(strips.rows(), out_dim, |s, o| {
        let l = &head.sefc_weights[s];
        let mut acc = l.bias[o];
        for i in 0..l.in_dim {
            acc += l.weight[o * l.in_dim + i] * strips.get(s, i);
        }
        acc
    })
}

pub fn classifier_oracle(emb: &Matrix<f64>, head: &HeadParams<f64>) -> Matrix<f64> {
    let classes = head.classifier_weights[0].out_dim;
    Matrix::from_fn(emb.rows(), classes, |s, o| {
        let l = &head.classifier_weights[s];
        let mut acc = l.bias[o];
        for i in 0..l.in_dim {
            acc += l.weight[o * l.in_dim + i] * emb.get(s, i);
        }
        acc
    })
}

/// Whole network composed from the oracles above: (embedding, logits).
pub fn network_oracle(x: &FeatureMap<f64>, p: &ModelParams<f64>, cfg: &ModelConfig) -> (Matrix<f64>, Matrix<f64>) {
    let mut cur = x.clone();
    for (b, block) in p.blocks.iter().enumerate() {
        let pme = if cfg.ablation.use_pme { block.pme.as_ref() } else { None };
        cur = ffsl_oracle(&cur, &block.bme, pme, cfg.leaky_slope);
        if cfg.ablation.use_msma && b + 1 == cfg.msma_after_block {
            cur = msma_oracle(&cur, p.msma.as_ref().unwrap());
        }
    }
    let pooled = temporal_max_oracle(&cur);
    let gem = gem_oracle(&pooled, p.head.gem_delta, cfg.num_strips, cfg.gem_eps);
    let emb = sefc_oracle(&gem, &p.head);
    let logits = classifier_oracle(&emb, &p.head);
    (emb, logits)
}

/// Small network for oracle and gradient tests.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        in_channels: 2,
        input_height: 16,
        input_width: 8,
        stage_channels: vec![2, 3, 2],
        num_strips: 4,
        embed_dim: 3,
        num_classes: 3,
        ..ModelConfig::default()
    }
}

/// Random small shapes `(c_in, c_out, frames, parts, rows_per_part, width)`.
fn random_shape<R: Rng>(rng: &mut R) -> (usize, usize, usize, usize, usize, usize) {
    (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..4), rng.gen_range(1..6))
}

/// Largest deviation of `bme_forward` from the loop oracle over `cases` random inputs.
pub fn bme_oracle_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (cin, cout, t, k, r, w) = random_shape(&mut rng);
        let x = random_map(&mut rng, cin, t, k * r, w);
        let mut wts = Conv3dWeights::init(cout, cin, &mut rng);
        wts.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        let got = bme_forward(&x, &wts).unwrap();
        worst = worst.max(max_abs_diff(got.as_slice(), bme_oracle(&x, &wts).as_slice()));
    }
    worst
}

pub fn pme_oracle_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let (cin, cout, t, k, r, w) = random_shape(&mut rng);
        let mode = if case % 2 == 0 { PmeMode::Standard } else { PmeMode::DepthwiseSeparable };
        let x = random_map(&mut rng, cin, t, k * r, w);
        let bank = PartFilterBank::init(mode, k, cout, cin, &mut rng);
        let got = pme_forward(&x, &bank).unwrap();
        worst = worst.max(max_abs_diff(got.as_slice(), pme_oracle(&x, &bank).as_slice()));
    }
    worst
}

pub fn msma_oracle_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (c, _, t3, l, r, w) = random_shape(&mut rng);
        let x = random_map(&mut rng, c, 3 * t3, l * r, w);
        let mut mp = MsmaParams::init(l, 0.5);
        mp.global_lma = LmaParams::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        for p in &mut mp.part_lmas {
            *p = LmaParams::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let got = msma_forward(&x, &mp).unwrap();
        worst = worst.max(max_abs_diff(got.as_slice(), msma_oracle(&x, &mp).as_slice()));
    }
    worst
}

pub fn sefc_oracle_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (strips, cin, dim) = (rng.gen_range(1..6), rng.gen_range(1..7), rng.gen_range(1..7));
        let x = Matrix::from_fn(strips, cin, |_, _| rng.gen_range(-2.0..2.0));
        let mut sefc: Vec<Linear<f64>> = (0..strips).map(|_| Linear::init(cin, dim, &mut rng)).collect();
        for l in &mut sefc {
            l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        }
        let head = HeadParams { gem_delta: 6.5, sefc_weights: sefc, classifier_weights: Vec::new() };
        let got = sefc_forward(&x, &head).unwrap();
        worst = worst.max(max_abs_diff(got.as_slice(), sefc_oracle(&x, &head).as_slice()));
    }
    worst
}

/// Worst deviation of LMA from strided max-pool at `(1, 0)` and from
/// strided mean-pool at `(0, 1)`.
pub fn lma_pooling_error(cases: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut max_err, mut mean_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..cases {
        let (c, _, t3, _, h, w) = random_shape(&mut rng);
        let x = random_map(&mut rng, c, 3 * t3, h, w);
        let pooled = |f: fn(&[f64]) -> f64| {
            FeatureMap::from_fn(c, t3, h, w, |ch, t, i, j| f(&[x.get(ch, 3 * t, i, j), x.get(ch, 3 * t + 1, i, j), x.get(ch, 3 * t + 2, i, j)]))
        };
        let maxp = pooled(|v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let meanp = pooled(|v| v.iter().sum::<f64>() / 3.0);
        let a = lma_forward(&x, &LmaParams::new(1.0, 0.0)).unwrap();
        let b = lma_forward(&x, &LmaParams::new(0.0, 1.0)).unwrap();
        max_err = max_err.max(max_abs_diff(a.as_slice(), maxp.as_slice()));
        mean_err = mean_err.max(max_abs_diff(b.as_slice(), meanp.as_slice()));
    }
    (max_err, mean_err)
}

/// Single-frame nonnegative map with `strips` bands.
pub fn random_band_map<R: Rng>(rng: &mut R, channels: usize, strips: usize, rows: usize, width: usize) -> FeatureMap<f64> {
    FeatureMap::from_fn(channels, 1, strips * rows, width, |_, _, _, _| rng.gen_range(0.0..3.0))
}

/// Worst deviation of GeM at exponent 1 from the band mean.
pub fn gem_mean_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (c, s, r, w) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..4), rng.gen_range(1..6));
        let x = random_band_map(&mut rng, c, s, r, w);
        let got = gem_pool(&x, 1.0, s, 1e-6).unwrap();
        let mean = Matrix::from_fn(s, c, |si, ch| {
            let vals: Vec<f64> = (si * r..(si + 1) * r).flat_map(|h| (0..w).map(move |j| (h, j))).map(|(h, j)| x.get(ch, 0, h, j)).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        });
        worst = worst.max(max_abs_diff(got.as_slice(), mean.as_slice()));
    }
    worst
}

pub const GEM_EXPONENTS: [f64; 6] = [1.0, 2.0, 4.0, 6.5, 16.0, 64.0];

/// Number of bands, out of `bands`, whose GeM value decreases somewhere
/// along [`GEM_EXPONENTS`].
pub fn gem_monotonicity_violations(bands: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..bands {
        let (r, w) = (rng.gen_range(1..5), rng.gen_range(1..8));
        let x = random_band_map(&mut rng, 1, 1, r, w);
        let vals: Vec<f64> = GEM_EXPONENTS.iter().map(|&d| gem_pool(&x, d, 1, 1e-6).unwrap().get(0, 0)).collect();
        if vals.windows(2).any(|p| p[1] < p[0] * (1.0 - 1e-12)) {
            bad += 1;
        }
    }
    bad
}

/// Whether perturbing PME bank `j` and MSMA part LMA `j` alters only slab
/// `j` of the respective outputs (bit-exact comparison elsewhere).
pub fn part_independence_holds(parts: usize, j: usize, seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = 2;
    let h = parts * rows;
    let x = random_map(&mut rng, 2, 6, h, 3);
    let outside = |a: &FeatureMap<f64>, b: &FeatureMap<f64>| {
        (0..a.channels()).all(|c| {
            (0..a.frames()).all(|t| {
                (0..h).filter(|r| r / rows != j).all(|r| (0..a.width()).all(|w| a.get(c, t, r, w).to_bits() == b.get(c, t, r, w).to_bits()))
            })
        })
    };
    let inside_changed = |a: &FeatureMap<f64>, b: &FeatureMap<f64>| a.rows(j * rows, rows) != b.rows(j * rows, rows);

    let mut ok = true;
    for mode in [PmeMode::Standard, PmeMode::DepthwiseSeparable] {
        let bank = PartFilterBank::init(mode, parts, 3, 2, &mut rng);
        let mut perturbed = bank.clone();
        match &mut perturbed.banks[j] {
            PartConv::Standard(w) => w.kernel.iter_mut().for_each(|v| *v += 0.25),
            PartConv::DepthwiseSeparable(w) => w.depthwise.iter_mut().for_each(|v| *v += 0.25),
        }
        let a = pme_forward(&x, &bank).unwrap();
        let b = pme_forward(&x, &perturbed).unwrap();
        ok &= outside(&a, &b) && inside_changed(&a, &b);
    }
    let mp = MsmaParams::init(parts, 0.5);
    let mut perturbed = mp.clone();
    perturbed.part_lmas[j] = LmaParams::new(0.9, -0.3);
    let a = msma_forward(&x, &mp).unwrap();
    let b = msma_forward(&x, &perturbed).unwrap();
    ok && outside(&a, &b) && inside_changed(&a, &b)
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

/// One compared coordinate: `(tensor name, index, analytic, numeric)`.
pub type GradSample = (String, usize, f64, f64);

/// Analytic vs central-difference gradients of the combined loss on a
/// 2-subject × 2-clip batch through `tiny_config`. Checks every LMA weight,
/// the GeM exponent and about 1% of conv weights (at least two per tensor).
pub fn network_gradient_samples_h(seed: u64, h: f64) -> Vec<GradSample> {
    use gaitmm::losses::LossWeights;
    use gaitmm::train::batch_gradients;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tiny_config();
    let params = ModelParams::<f64>::init(&cfg, &mut rng).unwrap();
    let clips: Vec<FeatureMap<f64>> = (0..4).map(|_| FeatureMap::from_fn(2, 6, 16, 8, |_, _, _, _| rng.gen_range(0.0..1.0))).collect();
    let labels = [0, 0, 1, 1];
    let loss = |p: &ModelParams<f64>| batch_gradients(&clips, &labels, p, &cfg, 0.2, LossWeights::default()).unwrap().0.total;
    let (_, grads) = batch_gradients(&clips, &labels, &params, &cfg, 0.2, LossWeights::default()).unwrap();

    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(<[f64]>::to_vec).collect();
    let mut out = Vec::new();
    for (t, name) in names.iter().enumerate() {
        let len = analytic[t].len();
        let picks: Vec<usize> = if name.starts_with("msma") || name == "gem.delta" {
            (0..len).collect()
        } else if name.starts_with("bme") || name.starts_with("pme") {
            let n = (len / 100).max(2).min(len);
            (0..n).map(|_| rng.gen_range(0..len)).collect()
        } else {
            continue;
        };
        for i in picks {
            let mut plus = params.clone();
            plus.tensors_mut()[t][i] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t][i] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            out.push((name.clone(), i, analytic[t][i], numeric));
        }
    }
    out
}

/// Worst relative error of triplet and cross-entropy gradients with respect
/// to their inputs on a random tiny batch.
pub fn loss_input_gradient_error(seed: u64) -> f64 {
    use gaitmm::losses::{cross_entropy_loss, triplet_loss};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = [0, 0, 1, 1, 2, 2];
    let emb: Vec<Matrix<f64>> = (0..6).map(|_| Matrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0))).collect();
    let logits: Vec<Matrix<f64>> = (0..6).map(|_| Matrix::from_fn(2, 3, |_, _| rng.gen_range(-2.0..2.0))).collect();
    let h = 1e-4;
    let mut worst: f64 = 0.0;

    let trip = |e: &[Matrix<f64>]| triplet_loss(e, &labels, 0.2, false).unwrap().loss;
    let g = triplet_loss(&emb, &labels, 0.2, true).unwrap().grad.unwrap();
    for b in 0..emb.len() {
        for i in 0..emb[b].as_slice().len() {
            let (mut p, mut m) = (emb.clone(), emb.clone());
            p[b].as_mut_slice()[i] += h;
            m[b].as_mut_slice()[i] -= h;
            worst = worst.max(relative_error(g[b].as_slice()[i], (trip(&p) - trip(&m)) / (2.0 * h)));
        }
    }

    let ce = |l: &[Matrix<f64>]| cross_entropy_loss(l, &labels, false).unwrap().0;
    let g = cross_entropy_loss(&logits, &labels, true).unwrap().1.unwrap();
    for b in 0..logits.len() {
        for i in 0..logits[b].as_slice().len() {
            let (mut p, mut m) = (logits.clone(), logits.clone());
            p[b].as_mut_slice()[i] += h;
            m[b].as_mut_slice()[i] -= h;
            worst = worst.max(relative_error(g[b].as_slice()[i], (ce(&p) - ce(&m)) / (2.0 * h)));
        }
    }
    worst
}

pub const FD_STEPS: [f64; 3] = [1e-4, 1e-5, 1e-6];

#[derive(Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates where the ±1e-4 difference straddles a max-pool or
    /// leaky-ReLU kink and a finer step had to decide.
    pub rechecked: usize,
    pub failures: Vec<(String, usize, f64)>,
}

/// Central differences at each of [`FD_STEPS`] in turn; a coordinate passes
/// at the first step whose relative error is below 1e-4.
pub fn network_gradient_check(seed: u64) -> GradCheckReport {
    let runs: Vec<Vec<GradSample>> = FD_STEPS.iter().map(|&h| network_gradient_samples_h(seed, h)).collect();
    let mut r = GradCheckReport { checked: runs[0].len(), ..Default::default() };
    for (i, (name, idx, a, n)) in runs[0].iter().enumerate() {
        if relative_error(*a, *n) < 1e-4 {
            continue;
        }
        r.rechecked += 1;
        let best = runs[1..].iter().map(|run| relative_error(*a, run[i].3)).fold(f64::INFINITY, f64::min);
        if best >= 1e-4 {
            r.failures.push((name.clone(), *idx, best));
        }
    }
    r
}

/// Very small network on 16×11 input for end-to-end training tests.
pub fn micro_model(num_classes: usize) -> ModelConfig {
    ModelConfig {
        input_height: 16,
        input_width: 11,
        stage_channels: vec![4, 4, 4],
        num_strips: 4,
        embed_dim: 8,
        num_classes,
        ..ModelConfig::default()
    }
}

pub fn micro_train(iterations: u64) -> gaitmm::train::TrainConfig {
    gaitmm::train::TrainConfig {
        iterations,
        base_lr: 1e-3,
        decay_at: iterations,
        decayed_lr: 1e-4,
        p: 2,
        k: 2,
        frames: 6,
        checkpoint_every: 0,
        log_every: 0,
        ..Default::default()
    }
}

/// Synthetic corpus held in memory under the SYNTH protocol.
pub fn micro_data(subjects: usize, views: &[u32], frames: usize) -> gaitmm::data::LoadedDataset {
    use gaitmm::data::{generate_synthetic_corpus, LoadedDataset, ProtocolKind, SynthCorpusOptions};
    let opts = SynthCorpusOptions { subjects, views: views.to_vec(), seqs_per_condition: [6, 2, 2], frames, ..Default::default() };
    LoadedDataset::from_sequences(ProtocolKind::Synth, generate_synthetic_corpus(&opts).unwrap()).unwrap()
}

pub fn max_param_diff<T: gaitmm::Scalar>(a: &ModelParams<T>, b: &ModelParams<T>) -> f64 {
    a.tensors()
        .iter()
        .zip(b.tensors())
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p.as_f64() - q.as_f64()).abs()))
        .fold(0.0, f64::max)
}

/// Labelled random embeddings for evaluator tests: one NM-1 gallery
/// sequence per subject and view, plus random probes from NM 5-6, BG 1-2 and
/// CL 1-2, `total` in all. Embeddings cluster loosely around a per-subject centre.
pub fn random_eval_embeddings(
    seed: u64,
    subjects: u32,
    views: &[u32],
    total: usize,
) -> (Vec<gaitmm::eval::GaitEmbedding<f64>>, Vec<gaitmm::eval::GaitEmbedding<f64>>) {
    use gaitmm::data::{Condition, SequenceKey};
    use gaitmm::eval::GaitEmbedding;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Matrix<f64>> = (0..subjects).map(|_| Matrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0))).collect();
    let make = |rng: &mut ChaCha8Rng, subject_id: u32, condition, seq_index, view_deg| {
        let c = &centres[(subject_id - 1) as usize];
        let strips = Matrix::from_fn(2, 4, |r, k| c.get(r, k) + rng.gen_range(-0.9..0.9));
        GaitEmbedding { key: SequenceKey { subject_id, condition, seq_index, view_deg }, strips }
    };
    let mut gallery = Vec::new();
    for s in 1..=subjects {
        for &v in views {
            gallery.push(make(&mut rng, s, Condition::Nm, 1, v));
        }
    }
    let mut pool = Vec::new();
    for s in 1..=subjects {
        for &v in views {
            for (cond, seqs) in [(Condition::Nm, [5, 6]), (Condition::Bg, [1, 2]), (Condition::Cl, [1, 2])] {
                for q in seqs {
                    pool.push((s, cond, q, v));
                }
            }
        }
    }
    let want = total.saturating_sub(gallery.len()).min(pool.len());
    let picks = rand::seq::index::sample(&mut rng, pool.len(), want);
    let probes = picks.into_iter().map(|i| pool[i]).map(|(s, c, q, v)| make(&mut rng, s, c, q, v)).collect();
    (gallery, probes)
}

/// Brute-force rank-1 cells `[condition][probe view][gallery view]`: for
/// each probe, scan every gallery embedding of the gallery view and keep the
/// first one at minimal `transform(distance)`.
pub fn rank1_oracle(
    gallery: &[gaitmm::eval::GaitEmbedding<f64>],
    probes: &[gaitmm::eval::GaitEmbedding<f64>],
    protocol: &gaitmm::data::SplitProtocol,
    transform: impl Fn(f64) -> f64,
) -> Vec<Vec<Vec<Option<f64>>>> {
    let dist = |a: &Matrix<f64>, b: &Matrix<f64>| {
        let mut s = 0.0;
        for r in 0..a.rows() {
            let mut d2 = 0.0;
            for c in 0..a.cols() {
                d2 += (a.get(r, c) - b.get(r, c)).powi(2);
            }
            s += d2.sqrt();
        }
        transform(s / a.rows() as f64)
    };
    let mut out = Vec::new();
    for set in &protocol.probes {
        let mut table = Vec::new();
        for &pv in &protocol.views {
            let ps: Vec<_> = probes.iter().filter(|p| p.key.view_deg == pv && set.selector.matches(&p.key)).collect();
            let mut row = Vec::new();
            for &gv in &protocol.views {
                if ps.is_empty() {
                    row.push(None);
                    continue;
                }
                let mut hits = 0;
                for p in &ps {
                    let mut best = f64::INFINITY;
                    let mut who = 0;
                    for g in gallery.iter().filter(|g| g.key.view_deg == gv && protocol.is_gallery(&g.key)) {
                        let d = dist(&p.strips, &g.strips);
                        if d < best {
                            best = d;
                            who = g.key.subject_id;
                        }
                    }
                    hits += (who == p.key.subject_id) as usize;
                }
                row.push(Some(hits as f64 / ps.len() as f64));
            }
            table.push(row);
        }
        out.push(table);
    }
    out
}

/// Report cells reshaped like [`rank1_oracle`] output.
pub fn report_cells(report: &gaitmm::eval::RankOneReport) -> Vec<Vec<Vec<Option<f64>>>> {
    report
        .conditions
        .iter()
        .map(|c| (0..c.views.len()).map(|p| (0..c.views.len()).map(|g| c.cell(p, g)).collect()).collect())
        .collect()
}
