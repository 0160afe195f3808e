//! `dpv` — scenario runner and report emitter for the verification library.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::Value;

use dpv_core::bench;
use dpv_core::scenario::{self, Scenario};
use dpv_core::simharness::DeliveryMode;

#[derive(Parser)]
#[command(name = "dpv", version, about = "Distributed data-plane verification at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify every requirement over every control plane and script step.
    Verify {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario's delivery mode (fifo|reorder).
        #[arg(long, value_parser = parse_delivery)]
        delivery: Option<DeliveryMode>,
        /// Emit the report as JSON.
        #[arg(long)]
        json: bool,
        /// Include the built DV-Network in every report row.
        #[arg(long)]
        dump_dag: bool,
    },
    /// Verify each ranked control plane, compose, and emit unified tables.
    Compose {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_delivery)]
        delivery: Option<DeliveryMode>,
        #[arg(long)]
        json: bool,
    },
    /// Distribute one control plane's FIB state and replay the script.
    Fsd {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_delivery)]
        delivery: Option<DeliveryMode>,
        #[arg(long)]
        json: bool,
        /// Print every device's table of local equivalence classes.
        #[arg(long)]
        dump_lec: bool,
    },
    /// Sweep the generated benchmark topologies and print a metrics table.
    Bench {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_delivery)]
        delivery: Option<DeliveryMode>,
        #[arg(long)]
        json: bool,
    },
}

fn parse_delivery(s: &str) -> Result<DeliveryMode, String> {
    match s {
        "fifo" => Ok(DeliveryMode::Fifo),
        "reorder" => Ok(DeliveryMode::reorder()),
        other => Err(format!("unknown delivery mode `{other}` (expected fifo|reorder)")),
    }
}

fn load(path: &Path, seed: Option<u64>, delivery: Option<DeliveryMode>) -> anyhow::Result<Scenario> {
    let mut sc = scenario::load_scenario(path)
        .with_context(|| format!("loading scenario {}", path.display()))?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(d) = delivery {
        sc.delivery = d;
    }
    Ok(sc)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Verify {
            scenario,
            seed,
            delivery,
            json,
            dump_dag,
        } => {
            let sc = load(&scenario, seed, delivery)?;
            let report = scenario::run_verify(&sc, dump_dag)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print_verify(&report);
            }
        }
        Command::Compose {
            scenario,
            seed,
            delivery,
            json,
        } => {
            let sc = load(&scenario, seed, delivery)?;
            let report = scenario::run_compose(&sc)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print_compose(&report);
            }
        }
        Command::Fsd {
            scenario,
            seed,
            delivery,
            json,
            dump_lec,
        } => {
            let sc = load(&scenario, seed, delivery)?;
            let report = scenario::run_fsd(&sc)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print_fsd(&report, dump_lec);
            }
        }
        Command::Bench {
            seed,
            delivery,
            json,
        } => {
            let rows = bench::sweep(delivery.unwrap_or(DeliveryMode::Fifo), seed);
            if json {
                println!("{}", serde_json::to_string_pretty(&Value::Array(rows))?);
            } else {
                print_bench(&rows);
            }
        }
    }
    Ok(())
}

fn s<'a>(v: &'a Value, key: &str) -> &'a str {
    v[key].as_str().unwrap_or("?")
}

fn n(v: &Value, key: &str) -> u64 {
    v[key].as_u64().unwrap_or(0)
}

fn print_verdict_line(label: &str, v: &Value) {
    let status = if v["holds"].as_bool().unwrap_or(false) {
        "holds"
    } else {
        "VIOLATED"
    };
    println!(
        "  {label:<20} {status:<9} verified={}  violated={}",
        s(v, "verified"),
        s(v, "violated")
    );
}

fn print_verify(report: &Value) {
    for row in report["rows"].as_array().into_iter().flatten() {
        println!(
            "requirement {} · cp {} · source {} ({} DV-nodes)",
            s(row, "requirement"),
            s(row, "cp"),
            s(row, "source"),
            row["nodes"]
        );
        print_verdict_line("init", &row["initial"]);
        for step in row["steps"].as_array().into_iter().flatten() {
            let label = format!("t{} {}", step["t"], s(step, "kind"));
            print_verdict_line(&label, &step["verdict"]);
        }
        print_verdict_line("final", &row["final"]);
        let m = &row["metrics"];
        println!("  {} messages, {} bytes", m["messages"], m["bytes"]);
        if let Some(dag) = row.get("dvnet") {
            println!("  dv-network: {dag}");
        }
        println!();
    }
}

fn hop_text(h: &Value) -> String {
    match h.get("rewrite").and_then(Value::as_str) {
        Some(rw) => format!("{} ({rw})", s(h, "dev")),
        None => s(h, "dev").to_string(),
    }
}

fn print_compose(report: &Value) {
    println!("composition over {}", s(report, "space"));
    for r in report["results"].as_array().into_iter().flatten() {
        println!(
            "  ({}, {}) verified: {}",
            s(r, "requirement"),
            s(r, "cp"),
            s(r, "verified")
        );
    }
    println!("assignment:");
    for p in report["assignment"]["pieces"].as_array().into_iter().flatten() {
        println!(
            "  {}  ->  ({}, {})",
            s(p, "space"),
            s(p, "requirement"),
            s(p, "cp")
        );
    }
    println!("  residue (dropped): {}", s(&report["assignment"], "residue"));
    if let Some(d) = report["decider"].as_str() {
        println!("decider: {d}");
    }
    println!("emitted tables:");
    for (dev, entries) in report["tables"].as_object().into_iter().flatten() {
        println!("  {dev}:");
        for e in entries.as_array().into_iter().flatten() {
            let hops: Vec<String> = e["nexthops"]
                .as_array()
                .into_iter()
                .flatten()
                .map(hop_text)
                .collect();
            println!("    {}  ->  {}", s(e, "match"), hops.join(" | "));
        }
    }
}

fn print_fsd(report: &Value, dump_lec: bool) {
    println!("fib-state distribution of control plane `{}`", s(report, "cp"));
    for st in report["stages"].as_array().into_iter().flatten() {
        let c = &st["counts"];
        println!(
            "  t{} {:<12} broadcasts={} requests={} replies={}",
            st["t"],
            s(st, "kind"),
            c["broadcasts"],
            c["requests"],
            c["replies"]
        );
    }
    println!(
        "consistent with a fresh initialization: {}",
        report["consistent"]
    );
    let m = &report["metrics"];
    println!("{} messages, {} bytes", m["messages"], m["bytes"]);
    if dump_lec {
        for (dev, entries) in report["tables"].as_object().into_iter().flatten() {
            println!("{dev}:");
            for e in entries.as_array().into_iter().flatten() {
                let path = match e["path"].as_array() {
                    Some(p) => {
                        let devs: Vec<&str> =
                            p.iter().map(|d| d.as_str().unwrap_or("?")).collect();
                        let joined = devs.join("");
                        if e["complete"].as_bool() == Some(false) {
                            format!("{joined}… (truncated)")
                        } else {
                            joined
                        }
                    }
                    None => "NULL".to_string(),
                };
                println!("  {}  ->  {}", s(e, "space"), path);
            }
        }
    }
}

fn print_bench(rows: &[Value]) {
    println!(
        "{:<12} {:>7} {:>6} {:>9} {:>11} {:>6}  {:<28} {:>9} {:>11} {:>6}",
        "case",
        "devices",
        "nodes",
        "init msg",
        "init bytes",
        "ticks",
        "event",
        "msg",
        "bytes",
        "ticks"
    );
    for r in rows {
        println!(
            "{:<12} {:>7} {:>6} {:>9} {:>11} {:>6}  {:<28} {:>9} {:>11} {:>6}",
            s(r, "case"),
            n(r, "devices"),
            n(r, "nodes"),
            n(r, "init_messages"),
            n(r, "init_bytes"),
            n(r, "init_ticks"),
            s(r, "event"),
            n(r, "event_messages"),
            n(r, "event_bytes"),
            n(r, "event_ticks")
        );
    }
}
