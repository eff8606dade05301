use std::fs;
use std::path::Path;

use serde_json::Value;

use dnnsim::analytic::{self, AnalyticInputs, MechanismFlags, Which};
use dnnsim::experiments::{run_sweep, SweepSpec};
use dnnsim::mechanisms::{simulate as run_scenario, Scenario};
use dnnsim::selfcheck::{self, SelfCheckOptions};
use dnnsim::trace::{
    compute_heavy_module, mutate_profile, network_heavy_module, normalize, parse_trace, partition_iteration, preset,
    profile_from_trace, synthesize_profile, ModelProfile, ParamSpec, ProfileSpec, PRESET_NAMES,
};

use crate::error::{invariant, io, parse, validation, CliError};
use crate::{AnalyticArgs, SelfcheckArgs, SimulateArgs, SweepArgs, TraceCommand};

type Result<T> = std::result::Result<T, CliError>;

// Stdout writes that tolerate a closed pipe (`dnnsim ... | head`).
macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout().lock(), $($t)*);
    }};
}

/// Twelve significant digits, fixed notation.
fn sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.11}");
    }
    let decimals = (11 - x.abs().log10().floor() as i64).clamp(0, 40) as usize;
    format!("{x:.decimals$}")
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io(format!("{}: {e}", path.display())))
}

fn json(path: &Path) -> Result<Value> {
    serde_json::from_str(&read(path)?).map_err(|e| parse(format!("{}: {e}", path.display())))
}

fn from_value<T: serde::de::DeserializeOwned>(v: Value, what: &Path) -> Result<T> {
    serde_json::from_value(v).map_err(|e| parse(format!("{}: {e}", what.display())))
}

/// `NETSIM_SEED`, if set, replaces the seed in any config file.
fn env_seed() -> Result<Option<u64>> {
    match std::env::var("NETSIM_SEED") {
        Ok(s) => s.trim().parse().map(Some).map_err(|e| parse(format!("NETSIM_SEED={s:?}: {e}"))),
        Err(_) => Ok(None),
    }
}

fn synth_preset(name: &str, seed: u64) -> Result<ModelProfile> {
    let spec = preset(name)
        .ok_or_else(|| parse(format!("unknown preset {name:?}; expected one of {}", PRESET_NAMES.join(", "))))?;
    synthesize_profile(&spec, seed).map_err(validation)
}

/// Profiles in config files may be written as a preset name, as
/// `{"synth": <spec>, "seed": n}`, or in full.
fn resolve_profile(v: &mut Value) -> Result<()> {
    let resolved = match v {
        Value::String(name) => synth_preset(name, 0)?,
        Value::Object(map) if map.contains_key("synth") => {
            let seed = match map.get("seed") {
                None => 0,
                Some(s) => s.as_u64().ok_or_else(|| parse("profile seed must be a non-negative integer"))?,
            };
            if let Some(extra) = map.keys().find(|k| *k != "synth" && *k != "seed") {
                return Err(parse(format!("unknown profile key {extra:?}")));
            }
            let spec: ProfileSpec = serde_json::from_value(map["synth"].clone()).map_err(|e| parse(format!("profile synth: {e}")))?;
            synthesize_profile(&spec, seed).map_err(validation)?
        }
        _ => return Ok(()),
    };
    *v = serde_json::to_value(resolved).expect("profile serializes");
    Ok(())
}

fn template(name: &str) -> Result<ParamSpec> {
    match name {
        "compute_heavy" => Ok(compute_heavy_module()),
        "network_heavy" => Ok(network_heavy_module()),
        path => from_value(json(Path::new(path))?, Path::new(path)),
    }
}

fn resolve_template(v: &mut Value) -> Result<()> {
    if let Value::String(name) = v {
        if name == "compute_heavy" || name == "network_heavy" {
            *v = serde_json::to_value(template(name)?).expect("param serializes");
        }
    }
    Ok(())
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    let mut v = json(path)?;
    if let Some(p) = v.get_mut("profile") {
        resolve_profile(p)?;
    }
    let mut s: Scenario = from_value(v, path)?;
    if let Some(seed) = env_seed()? {
        s.cluster.seed = seed;
    }
    Ok(s)
}

pub fn analytic(a: &AnalyticArgs) -> Result<()> {
    let inp = AnalyticInputs { m: a.m, w: a.w, p: a.p, b: a.b, c_f: a.cf, c_b: a.cb };
    inp.validate().map_err(validation)?;
    let flags = MechanismFlags { multicast: a.multicast, in_net_agg: a.agg };
    if a.thresholds {
        outln!("multicast,{}", analytic::mechanism_threshold(&inp, Which::Multicast));
        outln!("agg,{}", analytic::mechanism_threshold(&inp, Which::InNetAgg));
        return Ok(());
    }
    if let Some(ws) = &a.curve {
        if ws.iter().any(|&w| w < 1) {
            return Err(validation("curve worker counts must be at least 1"));
        }
        outln!("workers,speedup");
        for (w, s) in analytic::speedup_curve(&inp, flags, ws) {
            outln!("{w},{}", sig(s));
        }
        return Ok(());
    }
    let st = analytic::step_times(&inp, flags);
    outln!("quantity,value");
    outln!("t_d,{}", sig(st.t_d));
    outln!("t_a,{}", sig(st.t_a));
    outln!("d,{}", sig(st.d));
    outln!("a,{}", sig(st.a));
    outln!("iteration_s,{}", sig(analytic::iteration_time(&inp, flags)));
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let scenario = load_scenario(&a.scenario)?;
    let r = run_scenario(&scenario)?;
    r.check_invariants().map_err(invariant)?;
    if let Some(path) = &a.log {
        let mut buf = Vec::new();
        r.write_event_log(&mut buf).map_err(|e| io(format!("{}: {e}", path.display())))?;
        fs::write(path, buf).map_err(|e| io(format!("{}: {e}", path.display())))?;
    }
    if a.json {
        outln!("{}", serde_json::to_string_pretty(&r).expect("result serializes"));
        return Ok(());
    }
    outln!("iteration_s,{}", sig(r.iteration_time));
    outln!("node,phase,iteration,start_s,end_s");
    for (node, spans) in &r.timeline {
        for s in spans {
            outln!("{node},{},{},{},{}", s.phase, s.iteration, sig(s.start), sig(s.end));
        }
    }
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    if a.jobs < 1 {
        return Err(validation("--jobs must be at least 1"));
    }
    let mut v = json(&a.sweep)?;
    if let Some(p) = v.pointer_mut("/base/profile") {
        resolve_profile(p)?;
    }
    if let Some(t) = v.pointer_mut("/axis/added_layers/template") {
        resolve_template(t)?;
    }
    let mut spec: SweepSpec = from_value(v, &a.sweep)?;
    if let Some(seed) = env_seed()? {
        spec.base.cluster.seed = seed;
    }
    if let Some(dir) = &a.log_dir {
        fs::create_dir_all(dir).map_err(|e| io(format!("{}: {e}", dir.display())))?;
    }
    let table = run_sweep(&spec, a.jobs, a.log_dir.as_deref())?;
    let text = if a.json { table.to_json() + "\n" } else { table.to_csv() };
    match &a.out {
        Some(path) => write(path, &text),
        None => {
            out!("{text}");
            Ok(())
        }
    }
}

fn load_trace(path: &Path) -> Result<dnnsim::trace::Trace> {
    parse_trace(&read(path)?).map_err(|e| parse(format!("{}: {e}", path.display())))
}

fn print_profile(p: &ModelProfile) {
    outln!("{}", serde_json::to_string_pretty(p).expect("profile serializes"));
}

pub fn trace(t: &TraceCommand) -> Result<()> {
    match t {
        TraceCommand::Parse { trace } => {
            let parsed = load_trace(trace)?;
            out!("{}", parsed.to_csv());
        }
        TraceCommand::Partition { trace, cf } => {
            let parsed = load_trace(trace)?;
            let norm = normalize(&parsed).map_err(validation)?;
            let part = partition_iteration(&norm).map_err(validation)?;
            let profile = profile_from_trace(&part.distribution, &part.aggregation, *cf).map_err(validation)?;
            print_profile(&profile);
        }
        TraceCommand::Synth { preset: name, spec, seed } => {
            let seed = match seed {
                Some(s) => *s,
                None => env_seed()?.unwrap_or(0),
            };
            let profile = match (name, spec) {
                (Some(n), _) => synth_preset(n, seed)?,
                (None, Some(path)) => {
                    let spec: ProfileSpec = from_value(json(path)?, path)?;
                    synthesize_profile(&spec, seed).map_err(validation)?
                }
                (None, None) => unreachable!("clap requires one of --preset and --spec"),
            };
            print_profile(&profile);
        }
        TraceCommand::Mutate { profile, template: tmpl, count, position } => {
            let mut v = json(profile)?;
            resolve_profile(&mut v)?;
            let base: ModelProfile = from_value(v, profile)?;
            let at = position.unwrap_or(base.len().saturating_sub(1));
            let out = mutate_profile(&base, &template(tmpl)?, *count, at).map_err(validation)?;
            print_profile(&out);
        }
    }
    Ok(())
}

pub fn selfcheck(a: &SelfcheckArgs) -> Result<()> {
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let report = selfcheck::run(&SelfCheckOptions { seed, instances: a.instances, fault: a.inject_fault });
    for c in &report.checks {
        outln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(invariant(format!("self-check failed: {}", failed.join(" "))))
    }
}
