use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use fieldtier::collections::DurableMap;
use fieldtier::par::Exec;
use fieldtier::placement::{emit_tags, solve, sweep, PlacementProblem, SweepAxis, SweepParam};
use fieldtier::profiling::{cost_matrix, iterative_recompute, microbench_device, DeviceProfile, FieldProfile, Profile, ProfileSession, DEFAULT_SIZES};
use fieldtier::schema::{compute_layout, parse_schema, ObjectSchema};
use fieldtier::store::{parse_tier_configs, Store, Value};
use fieldtier::tiers::{TierConfig, TierId};
use fieldtier::workloads::graph::{self, GraphParams};
use fieldtier::workloads::kmeans;
use fieldtier::workloads::{standard_tiers, BenchReport, DatasetReader, LayoutMode, RunOptions, StorageLayout};

use crate::{BenchArgs, Cli, Command, Costs, IterativeArgs, OptimizeArgs, ProfileBenchArgs, ProfileSource, StoreDemoArgs, SweepArgs, UsageError, Workload, WorkloadArgs};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Layout { schema, assign } => layout(cli, schema, assign),
        Command::Profile { source } => match source {
            ProfileSource::Bench(a) => profile_bench(cli, a),
            ProfileSource::Iterative(a) => {
                let p = iterative_profile(a)?;
                emit(cli, &p.to_csv())
            }
        },
        Command::Optimize(a) => optimize(cli, a),
        Command::Sweep(a) => sweep_cmd(cli, a),
        Command::Bench(a) => bench(cli, a),
        Command::StoreDemo(a) => store_demo(cli, a),
    }
}

fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn read_schema(path: &Path) -> Result<ObjectSchema> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_schema(&text).with_context(|| format!("parsing {}", path.display()))
}

fn split_pair<'a>(s: &'a str, what: &str) -> Result<(&'a str, &'a str)> {
    s.split_once('=')
        .map(|(a, b)| (a.trim(), b.trim()))
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .ok_or_else(|| usage(format!("expected {what}, got `{s}`")))
}

fn layout(cli: &Cli, schema_path: &Path, assign: &[String]) -> Result<()> {
    let schema = read_schema(schema_path)?;
    let mut assignment = schema.preferred_assignment();
    for a in assign {
        let (field, tier) = split_pair(a, "FIELD=TIER")?;
        if schema.field(field).is_none() {
            return Err(usage(format!("schema has no field `{field}`")));
        }
        let id = TierId::from_name(tier).ok_or_else(|| usage(format!("unknown tier `{tier}`")))?;
        assignment.insert(field.to_string(), id);
    }
    // an override replaces the field's tags
    let plan = compute_layout(&schema.retagged(&assignment)?, &assignment)?;
    let mut out = String::from("field,kind,tier,offset,width\n");
    for e in &plan.entries {
        writeln!(out, "{},{},{},{},{}", e.name, e.kind, e.tier, e.offset, e.width)?;
    }
    writeln!(out, "# {}: {} bytes per record on {}", schema.name, plan.record_size, plan.record_tier)?;
    emit(cli, &out)
}

/// Tier configs from `--tiers`, or dram/pmem/disk defaults, rooted at `dir`.
fn tier_configs(cli: &Cli, dir: &Path) -> Result<Vec<TierConfig>> {
    match &cli.tiers {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(parse_tier_configs(&text, dir)?)
        }
        None => Ok(standard_tiers(dir, 2 << 30, 64 << 30)),
    }
}

fn iterative_profile(a: &IterativeArgs) -> Result<Profile> {
    if a.access_ns.len() != 2 {
        return Err(usage("--access-ns takes two values: dram,pmem"));
    }
    if a.iters.is_empty() {
        return Err(usage("--iters needs at least one value"));
    }
    let fields: Vec<FieldProfile> = (0..a.iters.len())
        .map(|i| FieldProfile {
            name: format!("field{}", i + 1),
            f: a.accesses,
            b: a.bytes,
        })
        .collect();
    let devices = ["dram", "pmem"]
        .iter()
        .map(|d| DeviceProfile {
            name: d.to_string(),
            s: a.capacity,
            p: a.failure,
        })
        .collect();
    let r = iterative_recompute(&a.iters, a.ns_per_iter, &[false, true], a.durable_ns);
    let profile = Profile {
        c: vec![a.access_ns.clone(); fields.len()],
        r,
        fields,
        devices,
    };
    profile.validate()?;
    Ok(profile)
}

fn apply_capacities(problem: &mut PlacementProblem, caps: &[String]) -> Result<()> {
    for c in caps {
        let (dev, bytes) = split_pair(c, "DEVICE=BYTES")?;
        let j = problem.device_index(dev).ok_or_else(|| usage(format!("profile has no device `{dev}`")))?;
        problem.s[j] = bytes.parse().map_err(|_| usage(format!("bad capacity `{bytes}`")))?;
    }
    Ok(())
}

fn optimize(cli: &Cli, a: &OptimizeArgs) -> Result<()> {
    let text = fs::read_to_string(&a.profile).with_context(|| format!("reading {}", a.profile.display()))?;
    let profile = Profile::from_csv(&text).with_context(|| format!("parsing {}", a.profile.display()))?;
    let mut problem = profile.to_problem(a.objects);
    apply_capacities(&mut problem, &a.capacity)?;
    let solution = solve(&problem)?;
    let csv = solution.to_csv(&problem);
    let Some(schema_path) = &a.schema else {
        return emit(cli, &csv);
    };
    let tagged = emit_tags(&solution, &problem, &read_schema(schema_path)?)?;
    match (&a.schema_out, &cli.out) {
        (Some(p), _) => {
            fs::write(p, &tagged).with_context(|| format!("writing {}", p.display()))?;
            emit(cli, &csv)
        }
        (None, Some(_)) => {
            emit(cli, &csv)?;
            print!("{tagged}");
            Ok(())
        }
        (None, None) => emit(cli, &format!("{csv}\n{tagged}")),
    }
}

fn sweep_cmd(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let profile = match &a.profile {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Profile::from_csv(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => iterative_profile(&IterativeArgs {
            iters: vec![1.0, 10.0],
            ns_per_iter: 100_000.0,
            access_ns: vec![100.0, 1000.0],
            durable_ns: 10_000.0,
            failure: 0.01,
            accesses: 10.0,
            bytes: 8,
            capacity: 1 << 30,
        })?,
    };
    let template = profile.to_problem(a.objects);
    let (axis1, axis2) = match (&a.axis1, &a.axis2) {
        (Some(x), y) => (SweepAxis::parse(x, &template)?, y.as_deref().map(|y| SweepAxis::parse(y, &template)).transpose()?),
        (None, Some(_)) => return Err(usage("--axis2 needs --axis1")),
        (None, None) => {
            // iterations of field1 and field2 on dram, 0..=20
            let axis = |field| SweepAxis::linear(SweepParam::Iters { field, device: 0, ns_per_iter: 100_000.0 }, 0.0, 20.0, 21);
            (axis(0), Some(axis(1)))
        }
    };
    let exec = if a.parallel { Exec::Parallel } else { Exec::Sequential };
    let grid = sweep(&template, &axis1, axis2.as_ref(), exec)?;
    if a.map {
        eprint!("{grid}");
    }
    emit(cli, &grid.to_csv())
}

struct Prepared {
    _tmp: Option<TempDir>,
    work: PathBuf,
    dataset: PathBuf,
    schema: ObjectSchema,
    query: Vec<(String, String)>,
}

fn parse_query(w: &WorkloadArgs) -> Result<Vec<(String, String)>> {
    if w.query.is_empty() {
        return Ok(graph::default_query());
    }
    w.query
        .iter()
        .map(|q| split_pair(q, "FEATURE=VALUE").map(|(f, v)| (f.to_string(), v.to_string())))
        .collect()
}

/// Work directory plus a dataset for `workload`, generated unless it exists.
fn prepare(cli: &Cli, workload: Workload, w: &WorkloadArgs) -> Result<Prepared> {
    let (tmp, work) = match &w.work {
        Some(d) => {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
            (None, d.clone())
        }
        None => {
            let t = TempDir::new()?;
            let p = t.path().to_path_buf();
            (Some(t), p)
        }
    };
    if w.snap.is_some() && workload != Workload::Graph {
        return Err(usage("--snap only applies to the graph workload"));
    }
    let dataset = match &w.dataset {
        Some(p) => p.clone(),
        None => match workload {
            Workload::Kmeans => work.join(format!("kmeans-{}-{}-{}-{}.ds", w.records.unwrap_or(100_000), w.dims, w.k, cli.seed)),
            Workload::Graph => work.join(format!("graph-{}-{}-{}.ds", w.records.unwrap_or(10_000), w.payload, cli.seed)),
        },
    };
    if !dataset.exists() {
        match workload {
            Workload::Kmeans => {
                kmeans::gen_points(&dataset, w.records.unwrap_or(100_000), w.dims, w.k, cli.seed)?;
            }
            Workload::Graph => {
                let nodes = w.records.unwrap_or(10_000);
                let p = GraphParams {
                    nodes,
                    edges: w.edges.unwrap_or(5 * nodes),
                    features: w.features,
                    payload_bytes: w.payload,
                    planted_fraction: w.planted,
                    seed: cli.seed,
                };
                match &w.snap {
                    Some(edges) => graph::load_snap_edges(edges, &dataset, &p)?,
                    None => graph::gen_graph(&dataset, &p)?,
                };
            }
        }
    }
    let schema = DatasetReader::open(&dataset)?.schema().clone();
    Ok(Prepared {
        _tmp: tmp,
        work,
        dataset,
        schema,
        query: parse_query(w)?,
    })
}

fn run_workload(workload: Workload, store: &Store, prep: &Prepared, w: &WorkloadArgs, layout: &StorageLayout, opts: RunOptions) -> Result<BenchReport> {
    Ok(match workload {
        Workload::Kmeans => kmeans::kmeans(store, &prep.dataset, w.k, w.iters, layout, opts)?.report,
        Workload::Graph => graph::graph_search(store, &prep.dataset, &prep.query, layout, opts)?.report,
    })
}

fn mode_layout(workload: Workload, mode: LayoutMode, prep: &Prepared) -> Result<StorageLayout> {
    Ok(match workload {
        Workload::Kmeans => kmeans::kmeans_layout(mode, &prep.schema)?,
        Workload::Graph => graph::graph_layout(mode, &prep.schema, &prep.query)?,
    })
}

fn exec_of(w: &WorkloadArgs) -> Exec {
    if w.parallel {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let prep = prepare(cli, a.workload, &a.w)?;
    let (layout, label) = match (&a.schema, a.mode) {
        (Some(p), _) => {
            let schema = read_schema(p)?;
            let label = format!("schema:{}", p.file_name().map_or("".into(), |f| f.to_string_lossy()));
            (StorageLayout::fielded(&schema)?, label)
        }
        (None, Some(m)) => {
            let m = LayoutMode::from(m);
            (mode_layout(a.workload, m, &prep)?, m.to_string())
        }
        (None, None) => return Err(usage("give --mode or --schema")),
    };
    let store_dir = TempDir::new_in(&prep.work)?;
    let store = Store::open(&tier_configs(cli, store_dir.path())?)?;
    let opts = RunOptions {
        exec: exec_of(&a.w),
        profile: None,
        label: Some(&label),
    };
    let mut report = run_workload(a.workload, &store, &prep, &a.w, &layout, opts)?;
    if a.no_timing {
        report.load_ns = 0;
        report.exec_ns = 0;
    }
    emit(cli, &report.to_csv())
}

fn profile_bench(cli: &Cli, a: &ProfileBenchArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.failure) {
        return Err(usage("--failure must be in [0, 1]"));
    }
    let prep = prepare(cli, a.workload, &a.w)?;
    let layout = match a.mode {
        Some(m) => mode_layout(a.workload, m.into(), &prep)?,
        None => StorageLayout::fielded(&prep.schema)?,
    };
    let store_dir = TempDir::new_in(&prep.work)?;
    let configs = tier_configs(cli, store_dir.path())?;
    let store = Store::open(&configs)?;
    let tiers: Vec<_> = store.tiers().cloned().collect();
    let names: Vec<&str> = tiers.iter().map(|t| t.name()).collect();
    let session = ProfileSession::for_schema(&prep.schema, &names);
    let opts = RunOptions {
        exec: exec_of(&a.w),
        profile: Some(&session),
        label: None,
    };
    run_workload(a.workload, &store, &prep, &a.w, &layout, opts)?;

    let fields = session.field_profiles();
    let devices: Vec<DeviceProfile> = tiers.iter().map(|t| DeviceProfile::from_tier(t.as_ref(), a.failure)).collect();
    let c = match a.costs {
        Costs::Measured => {
            let lat = tiers
                .iter()
                .map(|t| microbench_device(t.as_ref(), &DEFAULT_SIZES, a.reps))
                .collect::<Result<Vec<_>, _>>()?;
            cost_matrix(&fields, &lat)
        }
        Costs::Configured => {
            let mut per_device = Vec::new();
            for t in &tiers {
                let cfg = configs.iter().find(|c| c.name == t.name()).expect("store tiers come from configs");
                match cfg.latency {
                    Some(l) if l.per_access_ns > 0.0 || l.read_ns_per_byte > 0.0 => per_device.push(l),
                    _ => bail!(usage(format!("tier `{}` has no configured latency; give one in --tiers", t.name()))),
                }
            }
            fields
                .iter()
                .map(|f| per_device.iter().map(|l| l.cost_ns(f.b, false).max(f64::MIN_POSITIVE)).collect())
                .collect()
        }
    };
    let iterations = match a.workload {
        Workload::Kmeans => a.w.iters as f64,
        Workload::Graph => 1.0,
    };
    let durable: Vec<bool> = tiers.iter().map(|t| t.is_durable()).collect();
    let r = iterative_recompute(&vec![iterations; fields.len()], a.recompute_ns, &durable, 0.0);
    let profile = Profile { fields, devices, c, r };
    profile.validate()?;
    if let Some(p) = &a.schema_out {
        fs::write(p, prep.schema.to_string()).with_context(|| format!("writing {}", p.display()))?;
    }
    emit(cli, &profile.to_csv())
}

fn person_schema() -> ObjectSchema {
    parse_schema("object person {\n    age: i32 @pmem\n    image: bytes @pmem @disk\n    place: string @pmem\n    name: string @pmem\n}\n")
        .expect("built-in schema parses")
}

fn person_values(i: u64, image: usize, rng: &mut ChaCha8Rng) -> (String, Vec<Value>) {
    let name = format!("person-{i:06}");
    let mut img = vec![0u8; image];
    rng.fill_bytes(&mut img);
    let values = vec![
        Value::I32(rng.random_range(0..120)),
        Value::Bytes(img),
        Value::Str(format!("city-{}", rng.random_range(0..50u32))),
        Value::Str(name.clone()),
    ];
    (name, values)
}

fn store_demo(cli: &Cli, a: &StoreDemoArgs) -> Result<()> {
    let (_tmp, dir) = match &a.dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            (None, d.clone())
        }
        None => {
            let t = TempDir::new()?;
            let p = t.path().to_path_buf();
            (Some(t), p)
        }
    };
    let configs = match &cli.tiers {
        Some(_) => tier_configs(cli, &dir)?,
        None => standard_tiers(&dir, 256 << 20, 4 << 30),
    };
    let schema = person_schema();
    let plan = std::sync::Arc::new(compute_layout(&schema, &schema.preferred_assignment())?);
    let demotions;
    {
        let store = Store::open(&configs)?;
        let root = store.root(TierId::PMEM)?;
        let mut map = if root.is_null() {
            DurableMap::new(&store, &plan, TierId::PMEM)?
        } else {
            DurableMap::open(&store, root, &plan)?
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
        for i in 0..a.objects {
            let (name, values) = person_values(i, a.image, &mut rng);
            let obj = store.create_object(&plan)?;
            for (idx, v) in values.into_iter().enumerate() {
                store.set_field_at(&obj, idx, v)?;
            }
            map.put(&store, name.as_bytes(), &obj)?;
        }
        store.set_root(TierId::PMEM, map.header())?;
        store.sync()?;
        demotions = store.demotion_log().len();
    }
    let store = Store::open(&configs)?;
    let map = DurableMap::open(&store, store.root(TierId::PMEM)?, &plan)?;
    let before = store.metrics();
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let (mut recovered, mut mismatched) = (0u64, 0u64);
    for i in 0..a.objects {
        let (name, values) = person_values(i, a.image, &mut rng);
        match map.get(&store, name.as_bytes())? {
            Some(obj) => {
                let all: Vec<usize> = (0..values.len()).collect();
                let got = store.get_fields(&obj, &all)?;
                if got.into_iter().zip(values).all(|(g, v)| g == Some(v)) {
                    recovered += 1;
                } else {
                    mismatched += 1;
                }
            }
            None => mismatched += 1,
        }
    }
    let metrics = store.metrics().since(&before);
    let mut out = String::from("counter,value\n");
    writeln!(out, "written,{}", a.objects)?;
    writeln!(out, "recovered,{recovered}")?;
    writeln!(out, "mismatched,{mismatched}")?;
    writeln!(out, "demotions,{demotions}")?;
    out.push_str(metrics.to_csv().split_once('\n').map_or("", |(_, rest)| rest));
    emit(cli, &out)?;
    if mismatched > 0 {
        bail!("{mismatched} objects did not survive reopen");
    }
    Ok(())
}
