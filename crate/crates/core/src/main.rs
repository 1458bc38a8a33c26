use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use r1complex::classify::{self, decomposition_equal, Decomposition};
use r1complex::cli::{self, Overrides};
use r1complex::complex::Complex;
use r1complex::invariants;
use r1complex::oracle::{self, SearchBudget};
use r1complex::random;
use r1complex::twostory::TwoStoryComplex;

#[derive(Parser)]
#[command(name = "r1cx", version, about = "Decompose bigraded complexes over F[U,V]/(UV)")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Override the field characteristic of the input.
    #[arg(long = "char", global = true)]
    characteristic: Option<u32>,
    /// Override the ring of the input (r1 or fuv).
    #[arg(long, global = true)]
    ring: Option<String>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum RenderFormat {
    Txt,
    Svg,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check complexes (files or bundled corpus names).
    Validate { inputs: Vec<String> },
    /// Split into snakes, local systems and zero complexes.
    Decompose { inputs: Vec<String> },
    /// Homology type, Ord_U/Ord_V, symmetry, drift and the simplified-basis verdict.
    Invariants { inputs: Vec<String> },
    /// Print the complex with U and V exchanged.
    Bar { input: String },
    /// Print the direct sum of the complexes described by the descriptors.
    Realize { descriptors: Vec<String> },
    /// Draw the complex.
    Render {
        input: String,
        #[arg(long, value_enum, default_value = "txt")]
        render: RenderFormat,
        /// Also list the immersed-curve descriptors of the summands.
        #[arg(long)]
        curves: bool,
    },
    /// Run the corpus checks and a randomized comparison with the oracle.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest rank used in the oracle comparison.
        #[arg(long, default_value_t = 4)]
        budget: usize,
    },
}

fn overrides(args: &Args) -> Result<Overrides> {
    let ring = match &args.ring {
        None => None,
        Some(r) => Some(cli::parse_ring(r).ok_or_else(|| anyhow!("unknown ring `{r}`"))?),
    };
    Ok(Overrides {
        characteristic: args.characteristic,
        ring,
    })
}

fn load(input: &str, ov: Overrides) -> Result<Complex> {
    let text = if Path::new(input).exists() {
        std::fs::read_to_string(input).with_context(|| format!("reading {input}"))?
    } else if let Some(t) = cli::corpus_text(input) {
        t.to_string()
    } else {
        bail!("{input}: no such file or corpus entry");
    };
    cli::parse(&text, ov).with_context(|| format!("parsing {input}"))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(args: &Args) -> Result<bool> {
    let ov = overrides(args)?;
    match &args.command {
        Command::Validate { inputs } => {
            for input in inputs {
                let c = load(input, ov)?;
                if args.json {
                    print_json(&serde_json::json!({"input": input, "rank": c.rank(), "char": c.p, "ring": c.ring.name()}))?;
                } else {
                    println!("{input}: ok, rank {}, char {}, ring {}", c.rank(), c.p, c.ring.name());
                }
            }
        }
        Command::Decompose { inputs } => {
            for input in inputs {
                let c = load(input, ov)?;
                let d = classify::decompose(&c);
                if d.basis_change.is_none() && c.rank() > 0 {
                    eprintln!("{input}: warning: no isomorphism to the realized sum was found");
                }
                if args.json {
                    print_json(&serde_json::json!({"input": input, "decomposition": d}))?;
                } else {
                    println!("{input}:");
                    print!("{d}");
                }
            }
        }
        Command::Invariants { inputs } => {
            for input in inputs {
                let c = load(input, ov)?;
                let r = invariants::report(&c);
                if args.json {
                    print_json(&serde_json::json!({"input": input, "invariants": r}))?;
                } else {
                    println!("{input}:");
                    println!("  homology type: {:?}", r.homology_type);
                    println!("  Ord_U = {}, Ord_V = {}", r.ord_u, r.ord_v);
                    println!("  symmetric: {}", r.symmetric);
                    println!("  essentially infinite: {}", r.essentially_infinite);
                    println!("  simplified basis: {}", serde_json::to_value(r.simplified_basis)?.as_str().unwrap_or("?"));
                    for n in &r.notes {
                        println!("  note: {n}");
                    }
                }
            }
        }
        Command::Bar { input } => {
            let c = load(input, ov)?;
            print!("{}", cli::print(&c.bar()));
        }
        Command::Realize { descriptors } => {
            let p = args.characteristic.unwrap_or(2);
            let ds = descriptors
                .iter()
                .map(|t| classify::parse_descriptor(t))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let d = Decomposition::from_descriptors(p, &ds);
            let c = classify::realize_decomposition(&d)?;
            print!("{}", cli::print(&c));
        }
        Command::Render { input, render, curves } => {
            let c = load(input, ov)?;
            match render {
                RenderFormat::Txt => print!("{}", cli::render_text(&c)),
                RenderFormat::Svg => print!("{}", cli::render_svg(&c)),
            }
            if *curves {
                let d = classify::decompose_unverified(&c);
                for line in cli::curve_descriptors(&d) {
                    println!("{line}");
                }
            }
        }
        Command::Selftest { seed, budget } => return selftest(*seed, *budget, args.json),
    }
    Ok(true)
}

fn selftest(seed: u64, budget: usize, json: bool) -> Result<bool> {
    let mut results: Vec<(String, bool)> = Vec::new();
    for (name, _) in cli::CORPUS {
        let c = cli::corpus(name, Overrides::default()).unwrap();
        let d = classify::decompose(&c);
        let back = classify::realize_decomposition(&d).map(|s| classify::decompose_unverified(&s));
        let ok = d.basis_change.is_some() && back.is_ok_and(|b| decomposition_equal(&b, &d));
        let two = TwoStoryComplex::build(&c).and_then(|t| t.run_to_depth_infinity());
        let ok = ok && two.is_ok_and(|t| t.check_invariants().is_ok());
        results.push((format!("corpus {name}"), ok));
    }
    let mut agree = 0;
    let mut total = 0;
    for k in 0..50u64 {
        let s = seed.wrapping_mul(1000).wrapping_add(k);
        let p = if k % 2 == 0 { 2 } else { 3 };
        let c = random::random_complex(1 + (k as usize % budget.max(1)), p, s, true);
        let Ok(o) = oracle::brute_force_decompose(&c, &SearchBudget::for_rank(budget, p)) else {
            continue;
        };
        total += 1;
        if decomposition_equal(&o, &classify::decompose_unverified(&c)) {
            agree += 1;
        }
    }
    results.push((format!("oracle agreement {agree}/{total}"), agree == total));
    let ok = results.iter().all(|(_, b)| *b);
    if json {
        print_json(&results.iter().map(|(n, b)| serde_json::json!({"check": n, "pass": b})).collect::<Vec<_>>())?;
    } else {
        for (n, b) in &results {
            println!("{} {n}", if *b { "PASS" } else { "FAIL" });
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
