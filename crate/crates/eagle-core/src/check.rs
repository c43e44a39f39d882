//! Self-check suites wired to the `check` CLI command and the acceptance
//! tests. Each suite returns one outcome per property, with tolerances
//! pinned here.

use crate::cbam::Cbam;
use crate::cvssb::{ChannelRule, Cvssb, Daffn};
use crate::gradcheck;
use crate::haar::{haar_forward, haar_inverse, Hwtb};
use crate::loss::{combined_loss, LossWeights};
use crate::model::{Eagle, EagleConfig};
use crate::rng::Rng;
use crate::ss2d::{
    flatten_direction, selective_scan_parallel, selective_scan_seq, unflatten_direction,
    ScanDirection, ScanInput, Ss2dBlock, Ss2dConfig,
};
use crate::tensor::{conv::conv2d, norm::layer_norm_channels, ops, Mode, Result, Tensor};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub const HAAR_ROUNDTRIP_TOL: f64 = 1e-6;
pub const HAAR_PARSEVAL_TOL: f64 = 1e-5;
pub const SCAN_EQUIV_TOL: f64 = 1e-5;
pub const GRAD_TOL_PRIMITIVE: f64 = 1e-5;
pub const GRAD_TOL_LOSS: f64 = 1e-6;
pub const GRAD_TOL_COMPOSITE: f64 = 1e-3;

/// Round-trip and Parseval over 100 random tensors up to 8x64x64 (32-bit).
pub fn haar_suite() -> Result<Vec<CheckOutcome>> {
    let mut rng = Rng::new(0xaa01);
    let mut worst_roundtrip = 0.0f64;
    let mut worst_parseval = 0.0f64;
    for _ in 0..100 {
        let c = 1 + rng.below(8);
        let h = 2 * (1 + rng.below(32));
        let w = 2 * (1 + rng.below(32));
        let data: Vec<f32> = (0..c * h * w).map(|_| rng.uniform(-2.0, 2.0) as f32).collect();
        let x = Tensor::from_vec(&[c, h, w], data)?;
        let bands = haar_forward(&x)?;
        let back = haar_inverse(&bands)?;
        let rt = x
            .to_vec()
            .iter()
            .zip(back.to_vec())
            .map(|(a, b)| (a - b).abs() as f64)
            .fold(0.0, f64::max);
        worst_roundtrip = worst_roundtrip.max(rt);

        let energy = |t: &Tensor<f32>| -> f64 { t.with_data(|d| d.iter().map(|v| (*v as f64) * (*v as f64)).sum()) };
        let e_in = energy(&x);
        let e_bands = energy(&bands.low) + energy(&bands.vert) + energy(&bands.horiz) + energy(&bands.diag);
        worst_parseval = worst_parseval.max((e_in - e_bands).abs() / e_in.max(1e-12));
    }
    Ok(vec![
        CheckOutcome::new(
            "haar.roundtrip",
            worst_roundtrip < HAAR_ROUNDTRIP_TOL,
            format!("max |inv(fwd(x)) - x| = {worst_roundtrip:.3e} (tol {HAAR_ROUNDTRIP_TOL:.0e})"),
        ),
        CheckOutcome::new(
            "haar.parseval",
            worst_parseval < HAAR_PARSEVAL_TOL,
            format!("max relative energy drift = {worst_parseval:.3e} (tol {HAAR_PARSEVAL_TOL:.0e})"),
        ),
    ])
}

struct ScanBuffers {
    u: Vec<f32>,
    delta: Vec<f32>,
    a: Vec<f32>,
    b_in: Vec<f32>,
    c_in: Vec<f32>,
    d_skip: Vec<f32>,
}

fn draw_scan(rng: &mut Rng, d: usize, n: usize, l: usize) -> ScanBuffers {
    ScanBuffers {
        u: (0..d * l).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
        delta: (0..d * l).map(|_| rng.uniform(0.01, 0.5) as f32).collect(),
        a: (0..d * n).map(|_| -rng.uniform(0.05, 2.0) as f32).collect(),
        b_in: (0..n * l).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
        c_in: (0..n * l).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
        d_skip: (0..d).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
    }
}

impl ScanBuffers {
    fn input(&self, d: usize, n: usize, l: usize) -> ScanInput<'_, f32> {
        ScanInput {
            u: &self.u,
            delta: &self.delta,
            a: &self.a,
            b_in: &self.b_in,
            c_in: &self.c_in,
            d_skip: &self.d_skip,
            batch: 1,
            dim: d,
            state: n,
            len: l,
        }
    }
}

/// Parallel-vs-sequential equivalence (20 draws per length), causality, and
/// the reversal identity, all at 32-bit.
pub fn scan_suite() -> Result<Vec<CheckOutcome>> {
    let mut rng = Rng::new(0xaa02);
    let (d, n) = (2, 4);
    let mut out = Vec::new();

    for l in [1usize, 2, 255, 1024] {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let buffers = draw_scan(&mut rng, d, n, l);
            let input = buffers.input(d, n, l);
            let ys = selective_scan_seq(&input)?;
            let yp = selective_scan_parallel(&input)?;
            let diff = ys
                .iter()
                .zip(&yp)
                .map(|(a, b)| (a - b).abs() as f64)
                .fold(0.0, f64::max);
            worst = worst.max(diff);
        }
        out.push(CheckOutcome::new(
            format!("scan.oracle_equivalence.L{l}"),
            worst < SCAN_EQUIV_TOL,
            format!("max |parallel - seq| = {worst:.3e} over 20 draws (tol {SCAN_EQUIV_TOL:.0e})"),
        ));
    }

    // causality: mutating the suffix never changes the prefix
    let l = 64;
    let mut causal = true;
    for _ in 0..5 {
        let buffers = draw_scan(&mut rng, d, n, l);
        let y_ref = selective_scan_seq(&buffers.input(d, n, l))?;
        let t_keep = 1 + rng.below(l - 1);
        let mut mutated = buffers;
        for di in 0..d {
            for t in t_keep..l {
                mutated.u[di * l + t] = rng.uniform(-5.0, 5.0) as f32;
                mutated.delta[di * l + t] = rng.uniform(0.01, 1.0) as f32;
            }
        }
        for ni in 0..n {
            for t in t_keep..l {
                mutated.b_in[ni * l + t] = rng.uniform(-5.0, 5.0) as f32;
                mutated.c_in[ni * l + t] = rng.uniform(-5.0, 5.0) as f32;
            }
        }
        let y_mut = selective_scan_seq(&mutated.input(d, n, l))?;
        for di in 0..d {
            for t in 0..t_keep {
                if y_ref[di * l + t] != y_mut[di * l + t] {
                    causal = false;
                }
            }
        }
    }
    out.push(CheckOutcome::new(
        "scan.causality",
        causal,
        "prefix outputs invariant to suffix edits",
    ));

    // reversal: row_bwd of x equals rot180 . row_fwd . rot180 with shared params
    let mut rng64 = Rng::new(0xaa03);
    let cfg = Ss2dConfig {
        dim: 4,
        expand: 2,
        state_dim: 2,
        dwconv_kernel: 3,
        dt_rank: 1,
    };
    let mut block = Ss2dBlock::<f64>::new(cfg, &mut rng64)?;
    block.share_direction_params(0, 1);
    let (h, w) = (4, 6);
    let x = gradcheck::random_input::<f64>(&[1, 8, h, w], 0xaa04, 0.0);
    let rot180 = |t: &Tensor<f64>| -> Result<Tensor<f64>> {
        let mut dv = t.to_vec();
        let hw = h * w;
        for c in 0..8 {
            dv[c * hw..(c + 1) * hw].reverse();
        }
        Tensor::from_vec(&[1, 8, h, w], dv)
    };
    let run = |input: &Tensor<f64>, dir: ScanDirection| -> Result<Tensor<f64>> {
        let u = flatten_direction(input, dir)?;
        let y = block.direction_params(0).scan_sequence(&u)?;
        unflatten_direction(&y, dir, h, w)
    };
    let lhs = run(&rot180(&x)?, ScanDirection::RowFwd)?;
    let rhs = rot180(&run(&x, ScanDirection::RowBwd)?)?;
    let rev_diff = lhs
        .to_vec()
        .iter()
        .zip(rhs.to_vec())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    out.push(CheckOutcome::new(
        "scan.reversal",
        rev_diff < 1e-10,
        format!("row_bwd == rot180 . row_fwd . rot180, max diff {rev_diff:.3e}"),
    ));
    Ok(out)
}

fn grad_outcome<T: crate::precision::Real>(
    name: &str,
    varied: &Tensor<T>,
    f: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
    rtol: f64,
) -> Result<CheckOutcome> {
    let report = gradcheck::compare_gradients(varied, f, 0.1)?;
    Ok(CheckOutcome::new(
        name,
        report.passes(rtol),
        format!("max normalized gradient error {:.3e} (tol {rtol:.0e})", report.max_err),
    ))
}

/// Finite-difference checks for every block: primitives at 64-bit, composite
/// blocks at 32-bit.
pub fn grad_suite() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();

    // primitives, 64-bit
    let x = gradcheck::random_input::<f64>(&[1, 2, 5, 5], 0xbb01, 0.0);
    let w = gradcheck::random_input::<f64>(&[3, 2, 3, 3], 0xbb02, 0.0);
    out.push(grad_outcome(
        "grad.conv2d.weight",
        &w,
        |wv| {
            let y = conv2d(&x, wv, None, 1, 1, 1)?;
            Ok(ops::mean_all(&ops::mul(&y, &y)?))
        },
        GRAD_TOL_PRIMITIVE,
    )?);
    out.push(grad_outcome(
        "grad.conv2d.input",
        &x,
        |xv| {
            let y = conv2d(xv, &w, None, 1, 1, 1)?;
            Ok(ops::mean_all(&ops::mul(&y, &y)?))
        },
        GRAD_TOL_PRIMITIVE,
    )?);
    let gamma = gradcheck::random_input::<f64>(&[3], 0xbb03, 1.0);
    let beta = gradcheck::random_input::<f64>(&[3], 0xbb04, 0.0);
    let xln = gradcheck::random_input::<f64>(&[2, 3, 3, 3], 0xbb05, 0.0);
    out.push(grad_outcome(
        "grad.layer_norm",
        &xln,
        |xv| {
            let y = layer_norm_channels(xv, &gamma, &beta, 1e-5)?;
            Ok(ops::mean_all(&ops::mul(&y, &y)?))
        },
        GRAD_TOL_PRIMITIVE,
    )?);
    let xact = gradcheck::random_input::<f64>(&[24], 0xbb06, 0.3);
    out.push(grad_outcome(
        "grad.silu",
        &xact,
        |xv| Ok(ops::mean_all(&ops::mul(&ops::silu(xv), &ops::silu(xv))?)),
        GRAD_TOL_PRIMITIVE,
    )?);

    // losses, 64-bit
    let mut rng = Rng::new(0xbb07);
    let target = Tensor::<f64>::from_vec(
        &[16],
        (0..16).map(|_| if rng.bool() { 1.0 } else { 0.0 }).collect(),
    )?;
    let prob = Tensor::<f64>::from_vec(&[16], (0..16).map(|_| rng.uniform(0.05, 0.95)).collect())?;
    out.push(grad_outcome(
        "grad.combined_loss",
        &prob,
        |p| combined_loss(&target, p, &LossWeights::default()),
        GRAD_TOL_LOSS,
    )?);

    // composite blocks, 32-bit
    let mut rng32 = Rng::new(0xbb08);
    let ss2d_cfg = Ss2dConfig {
        dim: 4,
        expand: 2,
        state_dim: 2,
        dwconv_kernel: 3,
        dt_rank: 1,
    };

    let daffn = Daffn::<f32>::new(4, 8, &mut rng32);
    let xd = gradcheck::random_input::<f32>(&[1, 4, 6, 6], 0xbb09, 0.0);
    out.push(grad_outcome(
        "grad.daffn",
        &xd,
        |xv| {
            let y = daffn.forward(xv)?;
            Ok(ops::mean_all(&ops::mul(&y, &y)?))
        },
        GRAD_TOL_COMPOSITE,
    )?);

    let ss2d = Ss2dBlock::<f32>::new(ss2d_cfg, &mut rng32)?;
    let xs = gradcheck::random_input::<f32>(&[1, 4, 4, 4], 0xbb0a, 0.0);
    out.push(grad_outcome(
        "grad.ss2d_block",
        &xs,
        |xv| {
            let y = ss2d.forward(xv)?;
            Ok(ops::mean_all(&ops::mul(&y, &y)?))
        },
        GRAD_TOL_COMPOSITE,
    )?);

    let cvssb = Cvssb::<f32>::new(4, ChannelRule::Keep, ss2d_cfg, &mut rng32)?;
    let xc = gradcheck::random_input::<f32>(&[1, 4, 4, 4], 0xbb0b, 0.0);
    out.push(grad_outcome(
        "grad.cvssb",
        &xc,
        |xv| {
            let y = cvssb.forward(xv)?;
            Ok(ops::mean_all(&ops::mul(&y, &y)?))
        },
        GRAD_TOL_COMPOSITE,
    )?);

    let cbam = Cbam::<f32>::new(4, 2, &mut rng32)?;
    let xb = gradcheck::random_input::<f32>(&[1, 4, 5, 5], 0xbb0c, 0.25);
    out.push(grad_outcome(
        "grad.cbam",
        &xb,
        |xv| {
            let y = cbam.forward(xv)?;
            Ok(ops::mean_all(&ops::mul(&y, &y)?))
        },
        GRAD_TOL_COMPOSITE,
    )?);

    let hwtb = Hwtb::<f32>::new(2, &mut rng32);
    let xh = gradcheck::random_input::<f32>(&[1, 2, 4, 4], 0xbb0d, 0.3);
    out.push(grad_outcome(
        "grad.hwtb",
        &xh,
        |xv| {
            let y = hwtb.forward(xv, Mode::Train)?;
            Ok(ops::mean_all(&ops::mul(&y, &y)?))
        },
        GRAD_TOL_COMPOSITE,
    )?);

    Ok(out)
}

/// Encoder shape formula at 64 and 128 plus construction (and analytic
/// shapes) at 256, all on the full-width configuration.
pub fn shape_suite() -> Result<Vec<CheckOutcome>> {
    let cfg = EagleConfig::default();
    let mut out = Vec::new();

    for (h, run_forward) in [(64usize, true), (128, true)] {
        let model = Eagle::<f32>::new(cfg.clone(), 99)?;
        let x = gradcheck::random_input::<f32>(&[1, 1, h, h], 0xcc00 + h as u64, 0.0);
        let feats = crate::tensor::no_grad(|| model.encode(&x, Mode::Eval))?;
        let mut ok = true;
        let mut detail = String::new();
        for (i, (c, fh, fw)) in cfg.feature_shapes(h, h).iter().enumerate() {
            let got = feats.f[i].shape().to_vec();
            if got != [1, *c, *fh, *fw] {
                ok = false;
                detail = format!("F{}: got {:?}, want [1, {}, {}, {}]", i + 1, got, c, fh, fw);
                break;
            }
        }
        out.push(CheckOutcome::new(
            format!("shapes.encoder.{h}"),
            ok,
            if ok { format!("all five pyramid levels match the formula at {h}x{h}") } else { detail },
        ));
        if run_forward {
            let y = crate::tensor::no_grad(|| model.decode(&feats))?;
            let good = y.shape() == [1, 1, h, h] && y.to_vec().iter().all(|v| *v > 0.0 && *v < 1.0);
            out.push(CheckOutcome::new(
                format!("shapes.output.{h}"),
                good,
                format!("decode emits [1, 1, {h}, {h}] probabilities"),
            ));
        }
    }

    // 256: construction only (runtime bound), formula checked analytically
    let model = Eagle::<f32>::new(cfg.clone(), 100)?;
    let shapes = cfg.feature_shapes(256, 256);
    let f5_ok = shapes[4] == (512, 4, 4);
    out.push(CheckOutcome::new(
        "shapes.encoder.256.analytic",
        f5_ok,
        format!("F5 formula at 256x256 gives {:?} (want (512, 4, 4))", shapes[4]),
    ));
    out.push(CheckOutcome::new(
        "shapes.construction.256",
        model.count_params() > 0,
        format!("[2,2,4,2]/[32..512] constructs with {} parameters", model.count_params()),
    ));
    Ok(out)
}

/// All four suites in order.
pub fn all_suites() -> Result<Vec<CheckOutcome>> {
    let mut out = haar_suite()?;
    out.extend(scan_suite()?);
    out.extend(grad_suite()?);
    out.extend(shape_suite()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_suite_passes() {
        assert!(haar_suite().unwrap().iter().all(|o| o.passed));
    }

    #[test]
    fn scan_suite_passes() {
        for o in scan_suite().unwrap() {
            assert!(o.passed, "{}: {}", o.name, o.detail);
        }
    }
}
