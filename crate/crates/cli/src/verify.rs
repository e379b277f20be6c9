//! Self-contained property suite run by `combnet verify`.

use combnet::analysis::{
    lower_to_sparse, random_case, random_comb_instance, receptive_field, GradOp,
};
use combnet::mask::{make_mask, mask_value, MaskConfig};
use combnet::ops::{comb_conv_forward, comb_conv_forward_dense, CombConvLayer, ConvMode};
use combnet::{Kernel4, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const EQUIVALENCE_INSTANCES: usize = 200;
pub const GRAD_INSTANCES: usize = 20;
pub const GRAD_TOLERANCE: f64 = 1e-5;
pub const GRAD_STEP: f64 = 1e-4;
pub const SPMV_TOLERANCE: f64 = 1e-12;

pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, result: Result<std::result::Result<String, String>>) -> Outcome {
    match result {
        Ok(Ok(detail)) => Outcome {
            name,
            passed: true,
            detail,
        },
        Ok(Err(detail)) => Outcome {
            name,
            passed: false,
            detail,
        },
        Err(e) => Outcome {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

type Check = Result<std::result::Result<String, String>>;

/// Checkerboard law, complementarity and interleave shift over 64×64, j < 8.
pub fn mask_law() -> Check {
    for interleave in [false, true] {
        for phase in 0..2u8 {
            let cfg = MaskConfig::new(3, 1, 1, interleave, phase)?;
            let mask = make_mask(64, 64, 8, &cfg);
            for j in 0..8 {
                for p in 0..64 {
                    for q in 0..64 {
                        let expect = (p + q + j * usize::from(interleave) + phase as usize) % 2 == 0;
                        let m = mask_value(p, q, j, &cfg);
                        if m != expect || (mask.at(0, j, p, q)? == 1.0) != m {
                            return Ok(Err(format!("mask wrong at ({p},{q}) j={j} phase={phase}")));
                        }
                        if q + 1 < 64 && mask_value(p, q + 1, j, &cfg) == m {
                            return Ok(Err(format!("neighbours equal at ({p},{q}) j={j}")));
                        }
                        let flipped = MaskConfig::new(3, 1, 1, interleave, 1 - phase)?;
                        if mask_value(p, q, j, &flipped) == m {
                            return Ok(Err(format!("phases not complementary at ({p},{q})")));
                        }
                    }
                }
            }
        }
    }
    Ok(Ok("64x64, j<8, both phases".into()))
}

/// Fast path against the dense mask-combined formula, bitwise.
pub fn comb_vs_dense(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..EQUIVALENCE_INSTANCES {
        let (layer, x) = random_comb_instance(&mut rng);
        let fast = comb_conv_forward(&x, &layer)?;
        let dense = comb_conv_forward_dense(&x, &layer)?;
        if fast.data() != dense.data() {
            return Ok(Err(format!("instance {i} differs ({layer:?})")));
        }
    }
    Ok(Ok(format!("{EQUIVALENCE_INSTANCES} instances bitwise equal")))
}

/// Central finite differences for every differentiable kernel.
pub fn gradients(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for op in GradOp::ALL {
        for i in 0..GRAD_INSTANCES {
            let err = random_case(op, &mut rng, GRAD_STEP)?;
            if !(err < GRAD_TOLERANCE) {
                return Ok(Err(format!("{} instance {i}: relative error {err:e}", op.name())));
            }
            worst = worst.max(err);
        }
    }
    Ok(Ok(format!("worst relative error {worst:.2e}")))
}

/// The 4×4 single-channel example plus spmv against the forward pass.
pub fn lowering(seed: u64) -> Check {
    let mask = MaskConfig::new(3, 1, 0, false, 0)?;
    let w = Kernel4::from_vec(1, 1, 3, (10..19).map(f64::from).collect())?;
    let layer = CombConvLayer::new(1, 1, 1, mask, ConvMode::Comb)?.with_weights(w)?;
    let m = lower_to_sparse(&layer, [1, 4, 4])?.to_dense();
    for (r, (u0, v0)) in [(0usize, (0usize, 0usize)), (3, (1, 1))] {
        for (col, &val) in m[r].iter().enumerate() {
            let (y, x) = (col / 4, col % 4);
            let inside = (u0..u0 + 3).contains(&y) && (v0..v0 + 3).contains(&x);
            let expect = if inside {
                (10 + (y - u0) * 3 + (x - v0)) as f64
            } else {
                0.0
            };
            if val != expect {
                return Ok(Err(format!("stencil row {r} column {col} is {val}")));
            }
        }
    }
    for (r, col) in [(1usize, 6usize), (2, 9)] {
        let nz: Vec<(usize, f64)> = m[r]
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(c, &v)| (c, v))
            .collect();
        if nz != [(col, 1.0)] {
            return Ok(Err(format!("uniform row {r} is {nz:?}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..EQUIVALENCE_INSTANCES {
        let (layer, x) = random_comb_instance(&mut rng);
        let [n, c, h, w] = x.shape();
        let s = lower_to_sparse(&layer, [c, h, w])?;
        let y = comb_conv_forward(&x, &layer)?;
        let per_in = c * h * w;
        let per_out = y.len() / n;
        for b in 0..n {
            let got = s.spmv(&x.data()[b * per_in..(b + 1) * per_in])?;
            let want = &y.data()[b * per_out..(b + 1) * per_out];
            for (g, w) in got.iter().zip(want) {
                if (g - w).abs() > SPMV_TOLERANCE * w.abs().max(1.0) {
                    return Ok(Err(format!("instance {i}: spmv {g} vs forward {w}")));
                }
            }
        }
    }
    Ok(Ok(format!("4x16 pattern exact; {EQUIVALENCE_INSTANCES} spmv instances")))
}

/// Two-layer stacks on 12×12 with two interleaved channels: every mask=1
/// unit of the second comb layer sees exactly what the standard stack sees.
pub fn receptive_field_claim() -> Check {
    let stack = |mode| -> Result<Vec<CombConvLayer>> {
        (0..2u8)
            .map(|phase| CombConvLayer::new(2, 2, 1, MaskConfig::new(3, 1, 1, true, phase)?, mode))
            .collect()
    };
    let comb = stack(ConvMode::Comb)?;
    let standard = stack(ConvMode::Standard)?;
    let mut checked = 0;
    for j in 0..2 {
        for p in 0..12 {
            for q in 0..12 {
                if !comb[1].is_conv_site(p, q, j) {
                    continue;
                }
                let a = receptive_field(&comb, [2, 12, 12], 1, j, p, q)?;
                let b = receptive_field(&standard, [2, 12, 12], 1, j, p, q)?;
                if a.input_coords != b.input_coords {
                    return Ok(Err(format!(
                        "unit ({j},{p},{q}): {} points vs {} standard",
                        a.len(),
                        b.len()
                    )));
                }
                let interior = (2..10).contains(&p) && (2..10).contains(&q);
                if interior && a.len() != 25 {
                    return Ok(Err(format!("interior unit ({j},{p},{q}) has {} points", a.len())));
                }
                checked += 1;
            }
        }
    }
    Ok(Ok(format!("{checked} conv-site units match the standard stack")))
}

/// Runs every property in order.
pub fn run_all(seed: u64) -> Vec<Outcome> {
    vec![
        outcome("mask_law", mask_law()),
        outcome("comb_vs_dense", comb_vs_dense(seed)),
        outcome("gradients", gradients(seed)),
        outcome("lowering", lowering(seed)),
        outcome("receptive_field", receptive_field_claim()),
    ]
}
