//! Acceptance battery: one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use dnnsim::analytic::{self, AnalyticInputs, MechanismFlags, Which};
use dnnsim::engine::{Link, NodeId, SimResult, SwitchHop};
use dnnsim::experiments::{rank_mechanisms, run_sweep, Axis, MechanismEntry, ResultTable, SweepSpec};
use dnnsim::mechanisms::{
    simulate, ClusterConfig, DistributionOrder, Mechanism, PsOptions, RingOptions, Scenario, Variance,
};
use dnnsim::oracle::{compare, random_instance};
use dnnsim::trace::{
    compute_heavy_module, inception_v3_like, network_heavy_module, resnet101_like, resnet200_like, synthesize_profile,
    vgg16_like, ModelProfile, ParamSpec, ProfileSpec,
};

type Outcome = Result<String, String>;

fn profile_of(spec: ProfileSpec) -> ModelProfile {
    synthesize_profile(&spec, 0).expect("preset synthesizes")
}

fn vgg() -> ModelProfile {
    profile_of(vgg16_like())
}

fn ps(multicast: bool, in_net_agg: bool) -> Mechanism {
    Mechanism::Ps(PsOptions { multicast, in_net_agg, ..PsOptions::default() })
}

fn scenario(profile: ModelProfile, workers: usize, b: f64, mechanism: Mechanism) -> Scenario {
    Scenario { profile, cluster: ClusterConfig::new(workers, b), mechanism }
}

fn run(s: &Scenario) -> Result<SimResult, String> {
    simulate(s).map_err(|e| e.to_string())
}

fn time(s: &Scenario) -> Result<f64, String> {
    run(s).map(|r| r.iteration_time)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs()
}

const RESNET200: AnalyticInputs = AnalyticInputs { m: 1.6e9, w: 1, p: 1, b: 25e9, c_f: 0.16962, c_b: 0.3838 };
const VGG_MAXWELL: AnalyticInputs = AnalyticInputs { m: 6.58e9, w: 1, p: 1, b: 25e9, c_f: 0.17261, c_b: 0.41587 };

fn thresholds(inp: &AnalyticInputs, want: (usize, usize)) -> Outcome {
    let got = (
        analytic::mechanism_threshold(inp, Which::Multicast),
        analytic::mechanism_threshold(inp, Which::InNetAgg),
    );
    ensure(got == want, || format!("multicast={} agg={}, expected {want:?}", got.0, got.1))?;
    Ok(format!("multicast={} agg={}", got.0, got.1))
}

fn c1() -> Outcome {
    let start = Instant::now();
    let out = thresholds(&RESNET200, (3, 6))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 1.0, || format!("took {secs} s"))?;
    Ok(out)
}

fn c2() -> Outcome {
    thresholds(&VGG_MAXWELL, (1, 2))
}

fn c3() -> Outcome {
    let p = vgg();
    let inp = AnalyticInputs { m: p.total_size(), w: 1, p: 1, b: 25e9, c_f: p.c_f(), c_b: p.c_b() };
    let t_a = analytic::step_times(&inp, MechanismFlags::NONE).t_a;
    ensure(within(t_a, 0.263, 0.005), || format!("t_a = {t_a}"))?;
    Ok(format!("t_a = {t_a:.5} s"))
}

fn zero_compute(p: &ModelProfile) -> ModelProfile {
    let params = p.params().iter().map(|q| ParamSpec { bp_compute: 0.0, fp_compute: 0.0, ..q.clone() }).collect();
    ModelProfile::new(p.name(), params).unwrap()
}

fn c4() -> Outcome {
    let p = zero_compute(&vgg());
    ensure(p.max_param() == 5.44e9, || format!("max param {}", p.max_param()))?;
    let t = time(&scenario(p, 32, 10e9, Mechanism::RingReduce(RingOptions::default())))?;
    ensure(within(t, 33.7, 0.05) && within(t, 34.0, 0.10), || format!("iteration {t} s"))?;
    Ok(format!("iteration {t:.3} s (33.7 analytic, 34.0 published)"))
}

fn bp_span(r: &SimResult) -> f64 {
    let start = r.event_log.iter().filter(|e| e.kind == "bp_start").map(|e| e.t).fold(f64::INFINITY, f64::min);
    r.iteration_time - start
}

fn c5() -> Outcome {
    // Three ops, 3 s of backprop and 3 s on the wire each.
    let params = (0..3).map(|i| ParamSpec { name: format!("op{i}"), size: 3.0, bp_compute: 3.0, fp_compute: 0.0 }).collect();
    let toy = ModelProfile::new("toy", params).unwrap();
    let span = |opts: PsOptions| run(&scenario(toy.clone(), 2, 1.0, Mechanism::Ps(opts))).map(|r| bp_span(&r));
    // Multicast distribution starts every backprop together; round robin staggers them.
    let same_base = span(PsOptions { multicast: true, ..PsOptions::default() })?;
    let same_agg = span(PsOptions { multicast: true, in_net_agg: true, ..PsOptions::default() })?;
    let stag_base = span(PsOptions::default())?;
    let stag_agg = span(PsOptions { in_net_agg: true, ..PsOptions::default() })?;
    let gain = |b: f64, a: f64| 100.0 * (b - a) / b;
    let summary = format!(
        "simultaneous {same_base}->{same_agg} s ({:.1}%), staggered {stag_base}->{stag_agg} s ({:.1}%), 2 workers",
        gain(same_base, same_agg),
        gain(stag_base, stag_agg)
    );
    ensure(same_base == 21.0 && same_agg == 12.0 && stag_base == 21.0, || summary.clone())?;
    ensure((gain(stag_base, stag_agg) - 28.0).abs() <= 2.0, || summary.clone())?;
    Ok(summary)
}

fn hockey(inp: &AnalyticInputs, which: Which) -> Result<(), String> {
    let th = analytic::mechanism_threshold(inp, which);
    let ws: Vec<usize> = (1..=th + 40).collect();
    let flags = MechanismFlags::only(which);
    let curve = analytic::speedup_curve(inp, flags, &ws);
    for &(w, s) in &curve {
        if w < th {
            ensure(s == 1.0, || format!("{which:?}: speedup {s} at w={w} below threshold {th}"))?;
        }
    }
    for pair in curve.windows(2).filter(|p| p[0].0 >= th - 1) {
        ensure(pair[1].1 > pair[0].1, || format!("{which:?}: not increasing at w={}", pair[1].0))?;
    }
    // Linear growth of the time saved once both steps are network-bound.
    let saved: Vec<f64> = ws
        .iter()
        .map(|&w| {
            let at = inp.with_workers(w);
            analytic::iteration_time(&at, MechanismFlags::NONE) - analytic::iteration_time(&at, flags)
        })
        .collect();
    let tail = &saved[saved.len() - 10..];
    let step = tail[1] - tail[0];
    for d in tail.windows(2) {
        ensure(within(d[1] - d[0], step, 1e-9), || format!("{which:?}: saving not linear: {tail:?}"))?;
    }
    ensure(within(step, inp.m / inp.b, 1e-9), || format!("{which:?}: slope {step}"))?;
    Ok(())
}

fn c6() -> Outcome {
    for (name, inp) in [("resnet200", RESNET200), ("vgg16", VGG_MAXWELL)] {
        for which in [Which::Multicast, Which::InNetAgg] {
            hockey(&inp, which).map_err(|e| format!("{name}: {e}"))?;
        }
    }
    Ok("flat at 1.0 below threshold, strictly increasing, time saved grows by m/b per worker".into())
}

fn c7() -> Outcome {
    let (m, b) = (8.0e6, 1.0e9);
    let single = ModelProfile::new("single", vec![ParamSpec { name: "w".into(), size: m, bp_compute: 0.0, fp_compute: 0.0 }]).unwrap();
    let mut worst: f64 = 0.0;
    for w in [1, 2, 4, 8] {
        for (multicast, in_net_agg) in [(false, false), (true, false), (false, true), (true, true)] {
            let opts = PsOptions { multicast, in_net_agg, distribution_order: DistributionOrder::Concurrent, ..PsOptions::default() };
            let got = time(&scenario(single.clone(), w, b, Mechanism::Ps(opts)))?;
            let inp = AnalyticInputs { m, w, p: 1, b, c_f: 0.0, c_b: 0.0 };
            let want = analytic::iteration_time(&inp, MechanismFlags { multicast, in_net_agg });
            let rel = (got - want).abs() / want;
            worst = worst.max(rel);
            ensure(rel <= 1e-9, || format!("w={w} mc={multicast} agg={in_net_agg}: {got} vs {want}"))?;
        }
    }
    Ok(format!("16 cases, worst relative gap {worst:.1e}"))
}

const RANKED: [&str; 6] = ["ring", "multicast_agg", "butterfly", "multicast", "agg", "baseline"];

fn ranking(hop: SwitchHop) -> Result<(ResultTable, Vec<String>), String> {
    let mut base = scenario(vgg(), 32, 25e9, Mechanism::baseline());
    base.cluster.switch_hop = hop;
    let spec = SweepSpec {
        base,
        axis: Axis::Workers,
        values: vec![32.0],
        mechanisms: RANKED.iter().map(|m| MechanismEntry::preset(m).unwrap()).collect(),
    };
    let table = run_sweep(&spec, 4, None).map_err(|e| e.to_string())?;
    let order = rank_mechanisms(&table, 32.0, &RANKED).map_err(|e| e.to_string())?;
    let shown = order
        .iter()
        .map(|r| format!("{}{}={:.3}", if r.tied_with_previous { "~" } else { "" }, r.mechanism, r.iteration_s))
        .collect();
    Ok((table, shown))
}

fn c8() -> Outcome {
    let (table, shown) = ranking(SwitchHop::Charged)?;
    let t = |m: &str| table.time(32.0, m).unwrap();
    for pair in RANKED.windows(2) {
        ensure(t(pair[0]) <= t(pair[1]), || format!("{} slower than {}: {}", pair[0], pair[1], shown.join(" ")))?;
    }
    let sp = |m: &str| table.rows.iter().find(|r| r.mechanism == m).unwrap().speedup;
    ensure(sp("multicast_agg") > sp("multicast") && sp("multicast_agg") > sp("agg"), || {
        format!("combined speedup {} not above singles", sp("multicast_agg"))
    })?;
    let (_, free) = ranking(SwitchHop::Free)?;
    Ok(format!(
        "charged switch hop: {}; combined speedup {:.2}x; free hop order: {}",
        shown.join(" <= "),
        sp("multicast_agg"),
        free.join(" ")
    ))
}

fn c9() -> Outcome {
    let mut worst = (0.0, 0);
    for seed in 0..200 {
        let gap = compare(&random_instance(seed), None, 5_000).map_err(|e| format!("seed {seed}: {e}"))?;
        if gap > worst.0 {
            worst = (gap, seed);
        }
    }
    ensure(worst.0 <= 1e-3, || format!("seed {} off by {:.3e}", worst.1, worst.0))?;
    Ok(format!("200 instances, worst gap {:.2e} (seed {})", worst.0, worst.1))
}

fn c10() -> Outcome {
    let p = profile_of(inception_v3_like());
    let m = p.total_size();
    let server = NodeId::ps(0);
    for w in [1, 4, 16] {
        let base = run(&scenario(p.clone(), w, 25e9, ps(false, false)))?;
        let agg = run(&scenario(p.clone(), w, 25e9, ps(false, true)))?;
        let mc = run(&scenario(p.clone(), w, 25e9, ps(true, false)))?;
        let down = |r: &SimResult| r.bits_on(Link::down(server));
        ensure(down(&base) == w as f64 * m, || format!("w={w}: baseline PS ingress {}", down(&base)))?;
        ensure(down(&agg) == m, || format!("w={w}: agg PS ingress {}", down(&agg)))?;
        let up = mc.bits_on(Link::up(server));
        ensure(up == m, || format!("w={w}: multicast PS egress {up}"))?;
    }
    let mechanisms = [
        ps(false, false),
        ps(true, true),
        Mechanism::RingReduce(RingOptions { messaging: true, multicast_second_ring: true }),
        Mechanism::Butterfly,
    ];
    for mech in mechanisms {
        let mut s = scenario(p.clone(), 8, 25e9, mech);
        s.cluster.variance = Variance::Lognormal { sigma: 0.25 };
        s.cluster.seed = 11;
        let (a, b) = (run(&s)?, run(&s)?);
        ensure(a == b, || format!("{:?} reruns differ", s.mechanism))?;
        ensure(a.iteration_time.to_bits() == b.iteration_time.to_bits(), || "iteration bits differ".into())?;
    }
    Ok("exact byte counts at w=1,4,16; bit-identical reruns of four mechanisms".into())
}

fn c11() -> Outcome {
    let mut gaps = Vec::new();
    for spec in [resnet200_like(), resnet101_like()] {
        let p = profile_of(spec);
        let ring = |mc| Mechanism::RingReduce(RingOptions { messaging: true, multicast_second_ring: mc });
        let plain = time(&scenario(p.clone(), 32, 25e9, ring(false)))?;
        let multi = time(&scenario(p.clone(), 32, 25e9, ring(true)))?;
        let gap = (plain - multi).abs() / plain;
        ensure(gap < 0.05, || format!("{}: {plain} vs {multi}", p.name()))?;
        gaps.push(format!("{} {:.2}%", p.name(), 100.0 * gap));
    }
    Ok(gaps.join(", "))
}

fn c12() -> Outcome {
    let mut checked = Vec::new();
    for spec in [vgg16_like(), inception_v3_like(), resnet200_like(), resnet101_like()] {
        let p = profile_of(spec);
        for b in [10e9, 100e9] {
            if !analytic::block_matches_agg(&p, b) {
                continue;
            }
            let block = Mechanism::Ps(PsOptions { distribution_order: DistributionOrder::Block, ..PsOptions::default() });
            let tb = time(&scenario(p.clone(), 32, b, block))?;
            let ta = time(&scenario(p.clone(), 32, b, ps(false, true)))?;
            let gap = (tb - ta).abs() / ta;
            ensure(gap <= 0.10, || format!("{} at {b}: block {tb} vs agg {ta}", p.name()))?;
            checked.push(format!("{}@{}G {:.1}%", p.name(), b / 1e9, 100.0 * gap));
        }
    }
    ensure(!checked.is_empty(), || "no profile satisfies block_matches_agg".into())?;
    Ok(checked.join(", "))
}

fn layer_sweep(template: ParamSpec, values: &[f64], mechanisms: &[&str]) -> Result<ResultTable, String> {
    let spec = SweepSpec {
        base: scenario(profile_of(inception_v3_like()), 32, 25e9, Mechanism::baseline()),
        axis: Axis::AddedLayers { template, position: None },
        values: values.to_vec(),
        mechanisms: mechanisms.iter().map(|m| MechanismEntry::preset(m).unwrap()).collect(),
    };
    run_sweep(&spec, 4, None).map_err(|e| e.to_string())
}

fn c13() -> Outcome {
    let counts = [0.0, 1.0, 5.0, 25.0, 125.0];
    let compute = layer_sweep(compute_heavy_module(), &counts, &["agg", "multicast"])?;
    let speedup = |v: f64, m: &str| compute.rows.iter().find(|r| r.value == v && r.mechanism == m).unwrap().speedup;
    let speedups: Vec<f64> = counts.iter().map(|&v| speedup(v, "agg")).collect();
    for pair in speedups.windows(2) {
        ensure(pair[1] <= pair[0] && pair[1] >= 1.0, || format!("agg speedups not falling towards 1: {speedups:?}"))?;
    }
    let last = *speedups.last().unwrap();
    ensure(last - 1.0 < 0.5 * (speedups[0] - 1.0), || format!("agg benefit barely shrinks: {speedups:?}"))?;
    // Multicast keeps saving the same absolute time however many layers are added.
    let saved: Vec<f64> =
        counts.iter().map(|&v| compute.time(v, "baseline").unwrap() - compute.time(v, "multicast").unwrap()).collect();
    ensure(saved.iter().all(|s| within(*s, saved[0], 0.05)), || format!("multicast savings drift: {saved:?}"))?;

    let net = network_heavy_module();
    let ns = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0];
    let heavy = layer_sweep(net.clone(), &ns, &[])?;
    let t: Vec<f64> = ns.iter().map(|&v| heavy.time(v, "baseline").unwrap()).collect();
    let slopes: Vec<f64> = (1..ns.len()).map(|i| (t[i] - t[i - 1]) / (ns[i] - ns[i - 1])).collect();
    let predicted = 2.0 * 32.0 * net.size / 25e9;
    for s in &slopes[1..] {
        ensure(within(*s, predicted, 0.01), || format!("slopes {slopes:?}, expected {predicted}"))?;
    }
    Ok(format!(
        "agg speedup {} over {:?} modules; multicast saves {:.3} s throughout; baseline slope {:.5} s/module vs 2*W*s/b = {predicted:.5}",
        speedups.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join(" "),
        counts,
        saved[0],
        slopes.last().unwrap()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("analytic thresholds resnet200", c1),
        ("analytic thresholds vgg16", c2),
        ("aggregation wire time vgg16 at 25 Gbps", c3),
        ("ring-reduce magnitude", c4),
        ("toy staggering experiment", c5),
        ("hockey-stick speedup curves", c6),
        ("simulator matches analytic model", c7),
        ("qualitative mechanism ranking", c8),
        ("fluid oracle equivalence", c9),
        ("conservation and determinism", c10),
        ("second-ring multicast equivalence", c11),
        ("block distribution parity", c12),
        ("synthetic sweep shapes", c13),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.2}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
