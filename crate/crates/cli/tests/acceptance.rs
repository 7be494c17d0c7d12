//! Acceptance gate: ten criteria, one PASS/FAIL line each on stderr.
//!
//! `cargo test -p pimdc-cli --test acceptance`

use std::collections::HashSet;
use std::io::Write;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use pimdc_core::infer::Tensor;
use pimdc_core::net_ir::{self, Dims, LayerSpec, NetworkSpec};
use pimdc_core::pim_map::{self, ArraySpec, MappingOptions};
use pimdc_core::robustness::{
    self, fixtures, inject_noise, quantize_tensor, EvalConfig, NoiseMode, NoiseOptions, NoiseSpec,
    QuantSpec, StreamKey,
};
use pimdc_core::zoo::{self, ZooEntry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn phi(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

// ---------------------------------------------------------------------------
// Random layers shared by criteria 1 and 2.

#[derive(Debug, Clone, Copy)]
struct Case {
    h: usize,
    w: usize,
    c: usize,
    r: usize,
    s: usize,
    m: usize,
    stride: usize,
    pad: usize,
}

impl Case {
    fn random(rng: &mut ChaCha8Rng) -> Case {
        loop {
            let case = Case {
                h: rng.random_range(1..=8),
                w: rng.random_range(1..=8),
                c: rng.random_range(1..=8),
                r: rng.random_range(1..=8),
                s: rng.random_range(1..=8),
                m: rng.random_range(1..=8),
                stride: rng.random_range(1..=3),
                pad: rng.random_range(0..=2),
            };
            if case.r <= case.h + 2 * case.pad && case.s <= case.w + 2 * case.pad {
                return case;
            }
        }
    }

    fn net(&self) -> NetworkSpec {
        NetworkSpec::new(
            "case",
            Dims::new(self.h, self.w, self.c),
            vec![LayerSpec::conv(
                "l",
                self.r,
                self.s,
                self.m,
                self.stride,
                self.pad,
                &[],
            )],
        )
    }
}

fn slide(input: usize, window: usize, stride: usize, pad: usize) -> usize {
    let mut n = 0;
    let mut y = -(pad as i64);
    while y + window as i64 <= (input + pad) as i64 {
        n += 1;
        y += stride as i64;
    }
    n
}

// ---------------------------------------------------------------------------

fn c1_counting_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..200 {
        let k = Case::random(&mut rng);
        let (e, f) = (
            slide(k.h, k.r, k.stride, k.pad),
            slide(k.w, k.s, k.stride, k.pad),
        );
        let mut weights = HashSet::new();
        let mut outputs = HashSet::new();
        let mut macs = 0u64;
        for m in 0..k.m {
            for y in 0..e {
                for x in 0..f {
                    outputs.insert((m, y, x));
                    for c in 0..k.c {
                        for r in 0..k.r {
                            for s in 0..k.s {
                                weights.insert((m, c, r, s));
                                macs += 1;
                            }
                        }
                    }
                }
            }
        }
        let inputs = (0..k.h)
            .flat_map(|y| (0..k.w).flat_map(move |x| (0..k.c).map(move |c| (y, x, c))))
            .count();
        let got = net_ir::count(&k.net()).map_err(|e| e.to_string())?.total;
        check(
            got.num_weights == weights.len() as u64
                && got.num_macs == macs
                && got.num_input_activations == inputs as u64
                && got.num_output_activations == outputs.len() as u64,
            || format!("case {i} {k:?}: {got:?}"),
        )?;
    }
    let took = start.elapsed();
    check(took < Duration::from_secs(10), || format!("took {took:?}"))?;
    Ok(format!("200 layers exact, {:.2?}", took))
}

struct Sim {
    passes: u64,
    reads: u64,
    reuse: u64,
    cells: u64,
}

/// Tile the filter matrix on an explicit grid and stream positions through it.
fn simulate(
    filter_rows: usize,
    filters: usize,
    positions: usize,
    array: ArraySpec,
    replicate: bool,
) -> Sim {
    let mut tiles = Vec::new();
    let mut r0 = 0;
    while r0 < filter_rows {
        let mut c0 = 0;
        while c0 < filters {
            tiles.push((
                array.rows.min(filter_rows - r0),
                array.cols.min(filters - c0),
            ));
            c0 += array.cols;
        }
        r0 += array.rows;
    }
    let mut copies = 1;
    if replicate && tiles.len() == 1 {
        while (copies + 1) * filter_rows <= array.rows && (copies + 1) * filters <= array.cols {
            copies += 1;
        }
    }
    let mut sim = Sim {
        passes: 0,
        reads: 0,
        reuse: 0,
        cells: 0,
    };
    for &(tr, tc) in &tiles {
        let mut grid = vec![false; array.rows * array.cols];
        for i in 0..tr {
            for j in 0..tc {
                grid[i * array.cols + j] = true;
            }
        }
        sim.cells += grid.iter().filter(|&&b| b).count() as u64;
        let mut left = positions;
        let mut reads = 0u64;
        while left > 0 {
            let batch = copies.min(left);
            sim.passes += 1;
            reads += (batch * tr) as u64;
            left -= batch;
        }
        sim.reads += reads;
        sim.reuse += reads * tc as u64;
    }
    sim
}

fn c2_mapping_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..200 {
        let k = Case::random(&mut rng);
        let net = k.net();
        let shape = net_ir::infer_shapes(&net)
            .map_err(|e| e.to_string())?
            .layers[0];
        let counts = net_ir::count(&net).map_err(|e| e.to_string())?.total;
        let array = ArraySpec::new(rng.random_range(1..=64), rng.random_range(1..=64)).unwrap();
        let replication = rng.random_bool(0.5);
        let cost = pim_map::report(&net, array, MappingOptions { replication })
            .map_err(|e| e.to_string())?
            .layers
            .remove(0);
        let sim = simulate(
            k.r * k.s * k.c,
            k.m,
            shape.e() * shape.f(),
            array,
            replication,
        );
        let tile_cells: u64 = cost.mapping.tiles().map(|t| (t.rows * t.cols) as u64).sum();
        check(
            tile_cells == counts.num_weights
                && sim.cells == counts.num_weights
                && sim.reuse == counts.num_macs
                && cost.input_reads == sim.reads
                && cost.passes == sim.passes
                && cost.utilization > 0.0
                && cost.utilization <= 1.0,
            || format!("pair {i} {k:?} on {}x{}: {cost:?}", array.rows, array.cols),
        )?;
    }
    for chain in 0..50 {
        let k = Case::random(&mut rng);
        let net = k.net();
        let replication = chain % 2 == 1;
        let (mut rows, mut cols) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let mut prev: Option<(u64, u64)> = None;
        for _ in 0..6 {
            let rep = pim_map::report(
                &net,
                ArraySpec::new(rows, cols).unwrap(),
                MappingOptions { replication },
            )
            .map_err(|e| e.to_string())?;
            let now = (rep.total.passes, rep.total.input_reads);
            if let Some(p) = prev {
                check(now.0 <= p.0 && now.1 <= p.1, || {
                    format!("chain {chain} grew at {rows}x{cols}: {p:?} -> {now:?}")
                })?;
            }
            prev = Some(now);
            rows += rng.random_range(0..=24);
            cols += rng.random_range(0..=24);
        }
    }
    Ok("200 pairs conserve weights and MACs; 50 chains monotone".into())
}

fn c3_wide_vs_deep() -> Outcome {
    let deep = zoo::build("deep-narrow").map_err(|e| e.to_string())?;
    let wide = zoo::build("shallow-wide").map_err(|e| e.to_string())?;
    let (cd, cw) = (
        net_ir::count(&deep).unwrap().total,
        net_ir::count(&wide).unwrap().total,
    );
    check(
        cd.num_macs == 115_605_504 && cw.num_macs == 115_605_504,
        || format!("MACs {} vs {}", cd.num_macs, cw.num_macs),
    )?;
    let array = ArraySpec::square(4096).unwrap();
    let plain = MappingOptions { replication: false };
    let d = pim_map::report(&deep, array, plain).unwrap().total;
    let w = pim_map::report(&wide, array, plain).unwrap().total;
    check(w.passes == 784 && d.passes == 3136, || {
        format!("passes {} vs {}", w.passes, d.passes)
    })?;
    check(
        w.input_reads == 903_168 && d.input_reads == 1_806_336,
        || format!("reads {} vs {}", w.input_reads, d.input_reads),
    )?;
    check(w.utilization == 4.0 * d.utilization, || {
        format!("utilization {} vs {}", w.utilization, d.utilization)
    })?;
    let rep = MappingOptions { replication: true };
    let (dr, wr) = (
        pim_map::report(&deep, array, rep).unwrap().total,
        pim_map::report(&wide, array, rep).unwrap().total,
    );
    Ok(format!(
        "passes 784 vs 3136, reads 903168 vs 1806336, utilization {:.4} vs {:.4} (with replication: passes {} vs {})",
        w.utilization, d.utilization, wr.passes, dr.passes
    ))
}

fn c4_noise_statistics() -> Outcome {
    let n = 1_000_000;
    let x = Tensor::zeros(Dims::new(1, 1, n));
    let mut rng = StreamKey::new(4, 0, 0, 0).rng(0);
    let y = inject_noise(&x, &NoiseSpec::Fixed { sigma: 0.5 }, None, &mut rng)
        .map_err(|e| e.to_string())?;
    let mean = y.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let var = y
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / (n - 1) as f64;
    let std = var.sqrt();
    let se = 0.5 / (n as f64).sqrt();
    check((std / 0.5 - 1.0).abs() < 0.01, || format!("std {std}"))?;
    check(mean.abs() < 3.0 * se, || {
        format!("mean {mean} (3 SE = {})", 3.0 * se)
    })?;

    let mut src = ChaCha8Rng::seed_from_u64(40);
    let clean = Tensor::flat((0..4096).map(|_| src.random_range(-1e6f32..1e6)).collect());
    let same = inject_noise(&clean, &NoiseSpec::Fixed { sigma: 0.0 }, None, &mut rng).unwrap();
    let exact = clean
        .data()
        .iter()
        .zip(same.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    check(exact, || "sigma = 0 changed values".into())?;
    Ok(format!("std {std:.5}, mean {mean:.2e}, sigma=0 bit-exact"))
}

fn monte_carlo(f: &fixtures::Fixture, sigma: f64, trials: usize) -> Result<f64, String> {
    let cfg = EvalConfig::new(trials, 5);
    let rep = robustness::sweep_noise(
        &f.net,
        &f.weights,
        &f.data,
        NoiseMode::Fixed,
        &[sigma],
        &cfg,
        NoiseOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    Ok(rep.rows[0].accuracy_mean)
}

fn c5_depth_oracle() -> Outcome {
    let start = Instant::now();
    let trials = 10_000;
    let mut prev = f64::INFINITY;
    let mut seen = Vec::new();
    for d in [1usize, 4, 16] {
        let f = fixtures::unit_chain(d, 1.0);
        let acc = monte_carlo(&f, 0.5, trials)?;
        let p = phi(1.0 / (0.5 * (d as f64).sqrt()));
        let se = (p * (1.0 - p) / (trials * f.data.len()) as f64).sqrt();
        check((acc - p).abs() <= 3.0 * se, || {
            format!("D={d}: {acc} vs {p:.4} (3 SE = {:.4})", 3.0 * se)
        })?;
        check(acc < prev, || format!("not decreasing at D={d}"))?;
        prev = acc;
        seen.push(format!("D={d}: {acc:.4}~{p:.4}"));
    }
    let took = start.elapsed();
    check(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!("{}, {:.2?}", seen.join(", "), took))
}

fn c6_filter_size_oracle() -> Outcome {
    let (m, sigma, trials) = (0.25, 0.5, 10_000);
    let mut prev = 0.0;
    let mut seen = Vec::new();
    for k in [1usize, 4, 16] {
        let f = fixtures::averaging(k, m as f32);
        let acc = monte_carlo(&f, sigma, trials)?;
        let p = phi(m * (k as f64).sqrt() / sigma);
        let se = (p * (1.0 - p) / (trials * f.data.len()) as f64).sqrt();
        check((acc - p).abs() <= 3.0 * se, || {
            format!("k={k}: {acc} vs {p:.4} (3 SE = {:.4})", 3.0 * se)
        })?;
        check(acc > prev, || format!("not increasing at k={k}"))?;
        prev = acc;
        seen.push(format!("k={k}: {acc:.4}~{p:.4}"));
    }
    Ok(seen.join(", "))
}

fn c7_rank_change() -> Outcome {
    let (a, b) = fixtures::noise_rank_pair();
    let cfg = EvalConfig::new(2000, 7);
    let sweep = |f: &fixtures::Fixture| {
        robustness::sweep_noise(
            &f.net,
            &f.weights,
            &f.data,
            NoiseMode::Fixed,
            &[0.0, 0.25, 0.5, 1.0],
            &cfg,
            NoiseOptions::default(),
        )
        .map_err(|e| e.to_string())
    };
    let (ra, rb) = (sweep(&a)?, sweep(&b)?);
    check(ra.rows[0].accuracy_mean > rb.rows[0].accuracy_mean, || {
        "clean order not A > B".into()
    })?;
    let flip = ra
        .rows
        .iter()
        .zip(&rb.rows)
        .find(|(x, y)| x.axis_value > 0.0 && x.accuracy_mean < y.accuracy_mean)
        .map(|(x, _)| x.axis_value)
        .ok_or("noise never inverts the order")?;

    let (qa, qb) = fixtures::quant_rank_pair();
    let bits = [2, 3, 4, 6, 8, 16];
    let sa = robustness::sweep_quant(&qa.net, &qa.weights, &qa.data, &bits, None)
        .map_err(|e| e.to_string())?;
    let sb = robustness::sweep_quant(&qb.net, &qb.weights, &qb.data, &bits, None)
        .map_err(|e| e.to_string())?;
    let clean_a = robustness::accuracy(
        &pimdc_core::infer::Model::new(&qa.net, &qa.weights).unwrap(),
        &qa.data,
    )
    .unwrap();
    let clean_b = robustness::accuracy(
        &pimdc_core::infer::Model::new(&qb.net, &qb.weights).unwrap(),
        &qb.data,
    )
    .unwrap();
    check(clean_a > clean_b, || {
        format!("clean {clean_a} vs {clean_b}")
    })?;
    let qflip = sa
        .rows
        .iter()
        .zip(&sb.rows)
        .find(|(x, y)| x.accuracy_mean < y.accuracy_mean)
        .map(|(x, _)| x.axis_value)
        .ok_or("quantization never inverts the order")?;
    Ok(format!(
        "noise flips order at sigma={flip}, quantization at {qflip} bits"
    ))
}

fn c8_quantizer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..10_000 {
        let len = rng.random_range(1..=64);
        let magnitude = 10f32.powi(rng.random_range(-4..=4));
        let v: Vec<f32> = (0..len)
            .map(|_| rng.random_range(-1.0f32..1.0) * magnitude)
            .collect();
        let spec = QuantSpec::new(rng.random_range(2..=16)).unwrap();
        let (q, scale) = quantize_tensor(&v, spec);
        let (qq, _) = quantize_tensor(&q, spec);
        check(qq == q, || format!("tensor {i}: not idempotent"))?;
        let max = v.iter().fold(0.0f32, |m, x| m.max(x.abs()));
        for (&a, &b) in v.iter().zip(&q) {
            let bound = scale / 2.0 + b.abs() as f64 * f32::EPSILON as f64;
            check(((a - b) as f64).abs() <= bound, || {
                format!("tensor {i}: {a} -> {b}, scale {scale}")
            })?;
            check(a.abs() != max || a == b, || {
                format!("tensor {i}: extreme {a} -> {b}")
            })?;
        }
    }
    let (q, _) = quantize_tensor(&[0.5, -1.0, 0.25], QuantSpec::new(2).unwrap());
    check(q == [1.0, -1.0, 0.0], || format!("hand example gave {q:?}"))?;
    Ok("10^4 tensors; [0.5, -1, 0.25]@2b -> [1, -1, 0]".into())
}

fn pimdc(args: &[&str], env: &[(&str, &str)]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pimdc"))
        .args(args)
        .envs(env.iter().copied())
        .output()
        .expect("run pimdc")
}

fn ok_stdout(o: Output) -> Result<String, String> {
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    String::from_utf8(o.stdout).map_err(|e| e.to_string())
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path().to_str().unwrap();
    ok_stdout(pimdc(&["fixture", "rank-deep", "--dir", d], &[]))?;
    let p = |f: &str| dir.path().join(f).to_str().unwrap().to_string();
    let (net, w, data) = (p("net.json"), p("weights.json"), p("data.json"));
    let run = |threads: &str| {
        ok_stdout(pimdc(
            &[
                "sweep-noise",
                "--net",
                &net,
                "--weights",
                &w,
                "--data",
                &data,
                "--mode",
                "fixed",
                "--points",
                "0,0.25,0.5,1",
                "--trials",
                "200",
                "--seed",
                "99",
            ],
            &[("PIMDC_THREADS", threads)],
        ))
    };
    let one = run("1")?;
    for t in ["2", "8"] {
        check(run(t)? == one, || format!("{t} threads differ from 1"))?;
    }
    Ok(format!(
        "{} CSV bytes identical at 1, 2, 8 threads",
        one.len()
    ))
}

fn c10_golden() -> Outcome {
    let csv = ok_stdout(pimdc(&["analyze", "--zoo", "alexnet"], &[]))?;
    let conv1 = csv
        .lines()
        .find(|l| l.starts_with("conv1,"))
        .ok_or("no conv1 row")?;
    check(conv1.starts_with("conv1,conv,34848,105415200,"), || {
        conv1.to_string()
    })?;
    let entries = ZooEntry::catalog();
    for entry in &entries {
        let name = entry.to_string();
        let spec = ok_stdout(pimdc(&["zoo", "emit", &name], &[]))?;
        let mut child = Command::new(env!("CARGO_BIN_EXE_pimdc"))
            .args(["analyze", "--net", "-"])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| e.to_string())?;
        child
            .stdin
            .take()
            .unwrap()
            .write_all(spec.as_bytes())
            .map_err(|e| e.to_string())?;
        let piped = ok_stdout(child.wait_with_output().map_err(|e| e.to_string())?)?;
        let direct = ok_stdout(pimdc(&["analyze", "--zoo", &name], &[]))?;
        check(piped == direct, || format!("{name}: round trip differs"))?;
    }
    Ok(format!(
        "conv1 {conv1}; {} zoo entries round-trip",
        entries.len()
    ))
}

/// Straight to the process stderr, bypassing libtest capture, so the report
/// shows up in every run.
fn report(line: &str) {
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("counting oracle", c1_counting_oracle),
        ("mapping conservation", c2_mapping_conservation),
        ("wide vs deep", c3_wide_vs_deep),
        ("noise statistics", c4_noise_statistics),
        ("depth oracle", c5_depth_oracle),
        ("filter-size oracle", c6_filter_size_oracle),
        ("rank change", c7_rank_change),
        ("quantizer properties", c8_quantizer),
        ("determinism", c9_determinism),
        ("golden snapshots", c10_golden),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => report(&format!("[{:>2}] PASS {name}: {detail}", i + 1)),
            Err(why) => {
                report(&format!("[{:>2}] FAIL {name}: {why}", i + 1));
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
