use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use periodic_ldp::config::ModelConfig;
use periodic_ldp::contract::{self as con, ContractionProblem, ContractionSettings};
use periodic_ldp::entropy::{gc_check, GcInput, GcReport, Relation};
use periodic_ldp::grid::{current_from_flow, lambda_a_membership, lambda_membership, Tolerances};
use periodic_ldp::io::{fmt_f64, read_current, read_density, read_flow, write_current, write_density, write_flow, Header};
use periodic_ldp::ldp::{rate_i, rate_i_hat, RateValue};
use periodic_ldp::model::{validate_protocol, RateProtocol};
use periodic_ldp::sample::{SampleSpec, DEFAULT_EPS};
use periodic_ldp::simulate::{accumulate_replicas, average_triples, path_entropy_flows, replica_rng, sample_replicas};
use periodic_ldp::steady::{accompanying_distribution, oscillatory_state, two_state_pi};
use periodic_ldp::Error;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::Common;

pub struct CliError {
    pub code: u8,
    pub message: String,
}

/// Exit code 1: bad input. Exit code 2: a run that failed or did not meet
/// its tolerance.
fn input(message: impl Into<String>) -> CliError {
    CliError { code: 1, message: message.into() }
}

fn runtime(message: impl Into<String>) -> CliError {
    CliError { code: 2, message: message.into() }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) => runtime(e.to_string()),
            _ => input(e.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

struct Loaded {
    protocol: RateProtocol,
    hash: String,
}

fn load(c: &Common) -> Result<Loaded, CliError> {
    if c.bins.is_some_and(|b| b < 2) {
        return Err(input("--bins must be at least 2"));
    }
    if c.periods == 0 || c.replicas == 0 {
        return Err(input("--periods and --replicas must be at least 1"));
    }
    let text = fs::read_to_string(&c.model).map_err(|e| input(format!("{}: {e}", c.model.display())))?;
    let hash: String = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    let protocol = ModelConfig::parse(&text)?.protocol(c.bins)?;
    Ok(Loaded { protocol, hash })
}

fn header(c: &Common, l: &Loaded, command: &str) -> Header {
    Header::new()
        .with("tool", format!("pldp {}", env!("CARGO_PKG_VERSION")))
        .with("command", command)
        .with("config_sha256", &l.hash)
        .with("seed", c.seed)
        .with("bins", l.protocol.grid().bins())
        .with("periods", c.periods)
}

fn write(dir: &Path, name: &str, text: &str) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn show(v: &RateValue) -> String {
    match v {
        RateValue::Finite(x) => fmt_f64(*x),
        RateValue::Infinite(r) => format!("inf ({r})"),
    }
}

pub fn validate(c: &Common) -> CliResult {
    let l = load(c)?;
    let violations = validate_protocol(&l.protocol);
    if violations.is_empty() {
        println!("ok: {} states, {} edges, {} bins", l.protocol.n_states(), l.protocol.graph().n_edges(), l.protocol.grid().bins());
        return Ok(());
    }
    for v in &violations {
        println!("violation {v}");
    }
    Err(input(format!("{} violation(s)", violations.len())))
}

pub fn simulate(c: &Common, x0: Option<&str>) -> CliResult {
    let l = load(c)?;
    let p = &l.protocol;
    let graph = p.graph_arc().clone();
    let start = match x0 {
        Some(label) => graph.state_id(label).ok_or_else(|| input(format!("unknown state `{label}`")))?,
        None => 0,
    };
    let h = header(c, &l, "simulate").with("replicas", c.replicas);
    let paths = sample_replicas(p, start, c.periods, c.seed, c.replicas)?;
    let triples = accumulate_replicas(&paths, &graph, p.grid())?;
    let (mu, q) = average_triples(&triples)?;
    write(&c.out, "mu.csv", &write_density(&h, &mu, &graph))?;
    write(&c.out, "q.csv", &write_flow(&h, &q))?;
    write(&c.out, "j.csv", &write_current(&h, &current_from_flow(&q)))?;

    let w = accompanying_distribution(p)?;
    let mut summary = h.render();
    summary.push_str("replica,jumps,final_state,sigma_naive,sigma_tot,sigma_ex\n");
    for (i, path) in paths.iter().enumerate() {
        let flows = path_entropy_flows(path, p, &w).ok();
        let cell = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), fmt_f64);
        let _ = writeln!(
            summary,
            "{i},{},{},{},{},{}",
            path.events.len(),
            graph.label(path.final_state()),
            cell(flows.map(|f| f.naive)),
            cell(flows.map(|f| f.tot)),
            cell(flows.map(|f| f.ex))
        );
    }
    write(&c.out, "summary.csv", &summary)?;
    let mut events = h.render();
    events.push_str("time,from,to\n");
    for ev in &paths[0].events {
        let _ = writeln!(events, "{},{},{}", fmt_f64(ev.time), graph.label(ev.from), graph.label(ev.to));
    }
    write(&c.out, "events.csv", &events)?;
    let jumps: usize = paths.iter().map(|p| p.events.len()).sum();
    println!("{} replica(s), {} periods, {jumps} jumps; wrote mu.csv q.csv j.csv summary.csv events.csv", c.replicas, c.periods);
    Ok(())
}

pub fn steady(c: &Common) -> CliResult {
    let l = load(c)?;
    let p = &l.protocol;
    let graph = p.graph_arc().clone();
    let h = header(c, &l, "steady");
    let st = oscillatory_state(p)?;
    write(&c.out, "pi.csv", &write_density(&h, &st.pi, &graph))?;
    write(&c.out, "q_pi.csv", &write_flow(&h, &st.q_pi))?;
    write(&c.out, "w.csv", &write_density(&h, &accompanying_distribution(p)?, &graph))?;
    if p.n_states() != 2 {
        println!("wrote pi.csv q_pi.csv w.csv");
        return Ok(());
    }
    let closed = two_state_pi(p)?;
    let mut table = h.render();
    table.push_str("state,bin,monodromy,closed_form,abs_diff\n");
    let mut worst: f64 = 0.0;
    for k in 0..p.grid().bins() {
        for y in 0..2 {
            let (a, b) = (st.pi.get(y, k), closed.get(y, k));
            worst = worst.max((a - b).abs());
            let _ = writeln!(table, "{},{k},{},{},{}", graph.label(y), fmt_f64(a), fmt_f64(b), fmt_f64((a - b).abs()));
        }
    }
    write(&c.out, "comparison.csv", &table)?;
    println!("wrote pi.csv q_pi.csv w.csv comparison.csv; max |monodromy - closed form| = {worst:.3e}");
    if worst > c.tol {
        return Err(runtime(format!("steady-state comparison {worst:.3e} exceeds --tol {:e}", c.tol)));
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

pub fn rate(c: &Common, mu: &Path, flow: Option<&Path>, current: Option<&Path>) -> CliResult {
    let l = load(c)?;
    let p = &l.protocol;
    let graph = p.graph_arc().clone();
    let mu = read_density(&read_file(mu)?, &graph, p.grid())?;
    let tol = Tolerances::default();
    let j = match (flow, current) {
        (Some(f), _) => {
            let q = read_flow(&read_file(f)?, graph.clone(), p.grid())?;
            let v = lambda_membership(&mu, &q, &tol);
            println!("Lambda membership: {}", if v.is_empty() { "ok".to_string() } else { format!("{} violation(s)", v.len()) });
            for x in &v {
                println!("  {x}");
            }
            println!("I = {}", show(&rate_i(&mu, &q, p)?));
            if !graph.is_symmetric() {
                return Ok(());
            }
            current_from_flow(&q)
        }
        (None, Some(f)) => read_current(&read_file(f)?, graph.clone(), p.grid())?,
        (None, None) => return Err(input("one of --flow or --current is required")),
    };
    let v = lambda_a_membership(&mu, &j, &tol);
    println!("Lambda_a membership: {}", if v.is_empty() { "ok".to_string() } else { format!("{} violation(s)", v.len()) });
    for x in &v {
        println!("  {x}");
    }
    let ih = rate_i_hat(&mu, &j, p)?;
    println!("I_hat (minimal flow form) = {}", show(&ih.phi_form));
    println!("I_hat (current form) = {}", show(&ih.psi_form));
    println!("difference = {}", fmt_f64(ih.difference));
    Ok(())
}

fn gc_row(out: &mut String, label: &str, r: &GcReport, seed: u64) {
    let _ = writeln!(
        out,
        "{},{label},{},{},{},{},{seed}",
        r.relation,
        fmt_f64(r.lhs),
        fmt_f64(r.rhs),
        fmt_f64(r.residual),
        r.bins
    );
}

pub fn gc(c: &Common, relation: &str) -> CliResult {
    let l = load(c)?;
    let p = &l.protocol;
    p.graph().require_symmetric()?;
    let relations: Vec<Relation> =
        if relation == "all" { Relation::ALL.to_vec() } else { vec![relation.parse::<Relation>()?] };
    let graph = p.graph_arc().clone();
    let h = header(c, &l, "gc").with("replicas", c.replicas).with("eps", DEFAULT_EPS);
    let columns = "relation,sample,lhs,rhs,residual,bins,seed\n";

    let mut table = h.render();
    table.push_str(columns);
    let mut worst: f64 = 0.0;
    for &rel in &relations {
        let reports: Vec<GcReport> = (0..c.replicas as u64)
            .into_par_iter()
            .map(|i| {
                let spec = SampleSpec::draw(graph.clone(), p.grid().period(), DEFAULT_EPS, &mut replica_rng(c.seed, i));
                let (mu, q) = spec.tabulate(p.grid())?;
                if rel.uses_current() {
                    gc_check(rel, GcInput::Current(&mu, &current_from_flow(&q)), p)
                } else {
                    gc_check(rel, GcInput::Flow(&mu, &q), p)
                }
            })
            .collect::<Result<_, _>>()?;
        for (i, r) in reports.iter().enumerate() {
            worst = worst.max(r.residual);
            gc_row(&mut table, &i.to_string(), r, c.seed);
        }
    }
    write(&c.out, "gc.csv", &table)?;

    // steady pair: discretization error O(1/M), reported apart
    let st = oscillatory_state(p)?;
    let mut steady = h.render();
    steady.push_str(columns);
    for &rel in &relations {
        let r = if rel.uses_current() {
            gc_check(rel, GcInput::Current(&st.pi, &current_from_flow(&st.q_pi)), p)
        } else {
            gc_check(rel, GcInput::Flow(&st.pi, &st.q_pi), p)
        };
        match r {
            Ok(r) => gc_row(&mut steady, "steady", &r, c.seed),
            Err(e) => {
                let _ = writeln!(steady, "{rel},steady,nan,nan,nan,{},{}", p.grid().bins(), c.seed);
                eprintln!("warning: {rel} on the steady pair: {e}");
            }
        }
    }
    write(&c.out, "gc_steady.csv", &steady)?;
    println!(
        "{} rows in gc.csv, max residual {worst:.3e} (tol {:e}); steady pair in gc_steady.csv",
        relations.len() * c.replicas,
        c.tol
    );
    if worst > c.tol {
        return Err(runtime(format!("max residual {worst:.3e} exceeds --tol {:e}", c.tol)));
    }
    Ok(())
}

pub fn contract(c: &Common, mu_target: Option<Vec<f64>>, q_target: Option<Vec<f64>>, max_iterations: usize) -> CliResult {
    let l = load(c)?;
    let p = &l.protocol;
    let graph = p.graph_arc().clone();
    let settings = ContractionSettings { max_iterations, ..ContractionSettings::default() };
    let list = |v: &Option<Vec<f64>>| {
        v.as_ref().map_or_else(|| "free".to_string(), |v| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" "))
    };
    let h = header(c, &l, "contract")
        .with("mu_target", list(&mu_target))
        .with("q_target", list(&q_target))
        .with("max_iterations", settings.max_iterations)
        .with("constraint_tol", settings.constraint_tol)
        .with("objective_tol", settings.objective_tol)
        .with("floor", settings.floor);
    let res = con::contract(&ContractionProblem {
        protocol: p.clone(),
        bar_mu: mu_target.clone(),
        bar_q: q_target.clone(),
        settings,
    })?;
    let mut table = h.render();
    table.push_str("quantity,value\n");
    let mut row = |k: &str, v: String| {
        let _ = writeln!(table, "{k},{v}");
    };
    row("value", show(&res.value));
    row("value_unfloored", fmt_f64(res.value_unfloored));
    row("constraint_residual", fmt_f64(res.constraint_residual));
    row("continuity_residual", fmt_f64(res.continuity_residual));
    row("converged", res.converged.to_string());
    row("iterations", res.iterations.to_string());
    row("outer_iterations", res.outer_iterations.to_string());
    let closed = match (&mu_target, &q_target) {
        (None, Some(q)) if q.len() == 2 && q[0] == q[1] => con::two_state_flow_rate(p, q[0]).ok(),
        _ => None,
    };
    if let Some(cf) = &closed {
        row("closed_form", fmt_f64(cf.value));
        row("abs_diff", fmt_f64((cf.value - res.value.value()).abs()));
    }
    write(&c.out, "contract.csv", &table)?;
    if res.value.is_finite() {
        write(&c.out, "contract_mu.csv", &write_density(&h, &res.mu, &graph))?;
        write(&c.out, "contract_q.csv", &write_flow(&h, &res.q))?;
    }
    print!("value = {}", show(&res.value));
    if let Some(cf) = &closed {
        print!(", closed form = {}", fmt_f64(cf.value));
    }
    println!(", constraint residual = {:.3e}, converged = {}", res.constraint_residual, res.converged);
    if !res.converged {
        return Err(runtime(format!("optimizer stopped after {} iterations without converging", res.iterations)));
    }
    Ok(())
}
