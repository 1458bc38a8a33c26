use std::time::{Duration, Instant};

use rand::Rng;

use r1complex::classify::{
    self, decomposition_equal, drift, Decomposition, Descriptor, LocalSystemDescriptor, SnakeDescriptor, SnakeKind,
};
use r1complex::cli::{self, Overrides};
use r1complex::complex::Complex;
use r1complex::gf;
use r1complex::invariants::{self, Verdict};
use r1complex::oracle::{self, SearchBudget};
use r1complex::random;
use r1complex::reduce::Engine;
use r1complex::simplify;
use r1complex::twostory::TwoStoryComplex;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn corpus(name: &str, p: Option<u32>) -> Complex {
    cli::corpus(
        name,
        Overrides {
            characteristic: p,
            ring: None,
        },
    )
    .unwrap()
}

fn corpus_suite() -> Vec<(String, Complex)> {
    let mut v: Vec<(String, Complex)> = cli::CORPUS
        .iter()
        .map(|(n, _)| (n.to_string(), corpus(n, None)))
        .collect();
    v.push(("example_E/char3".into(), corpus("example_E", Some(3))));
    v
}

fn oracle_suite() -> Vec<Complex> {
    let mut v = oracle::all_complexes(3, 2, 4);
    for seed in 0..500u64 {
        let p = if seed % 2 == 0 { 2 } else { 3 };
        v.push(random::random_complex(1 + (seed % 5) as usize, p, 10_000 + seed, true));
    }
    v
}

fn uniqueness_suite() -> Vec<Complex> {
    (0..1000u64)
        .map(|seed| {
            let p = if seed % 3 == 0 { 3 } else { 2 };
            random::random_complex(1 + (seed % 6) as usize, p, 20_000 + seed, true)
        })
        .collect()
}

fn corpus_reproduction() -> Outcome {
    let mut failures = Vec::new();
    let mut slowest = Duration::ZERO;
    let mut timed = |name: &str, p: Option<u32>| {
        let c = corpus(name, p);
        let t = Instant::now();
        let d = classify::decompose(&c);
        let r = invariants::report(&c);
        slowest = slowest.max(t.elapsed());
        (d, r)
    };
    let (d, _) = timed("trefoil_f2", None);
    let lengths_ok = d.snakes.len() == 1 && {
        let mut l: Vec<u64> = d.snakes[0].sequence.iter().map(|x| x.unsigned_abs()).collect();
        l.sort();
        l == [1, 1] && d.snakes[0].kind == SnakeKind::Standard
    };
    if !(lengths_ok && d.local_systems.is_empty() && d.zeros == 0) {
        failures.push(format!("trefoil: {d}"));
    }
    let (d, _) = timed("figure_eight_f3", None);
    let ok = d.snakes.len() == 1
        && d.snakes[0].sequence.is_empty()
        && d.local_systems.len() == 1
        && d.local_systems[0].width == 1
        && d.local_systems[0].shape.len() == 4
        && d.local_systems[0].holonomy != vec![vec![1]];
    if !ok {
        failures.push(format!("figure-eight: {d}"));
    }
    let (d, _) = timed("example_E", Some(2));
    let ok = d.snakes.is_empty()
        && d.zeros == 0
        && d.local_systems.len() == 2
        && d
            .local_systems
            .iter()
            .all(|l| l.width == 1 && l.shape.len() == 4 && l.holonomy == vec![vec![1]]);
    if !ok {
        failures.push(format!("E mod 2: {d}"));
    }
    let (d, _) = timed("example_E", Some(3));
    if !(d.snakes.is_empty() && d.local_systems.is_empty() && d.zeros == 4) {
        failures.push(format!("E mod 3: {d}"));
    }
    for name in ["example_T", "example_D"] {
        let (d, r) = timed(name, None);
        if !(r.essentially_infinite && d.local_systems.iter().any(|l| drift(&l.shape) != 0)) {
            failures.push(format!("{name}: not essentially infinite"));
        }
    }
    let (_, r) = timed("example_P", None);
    if r.simplified_basis != Verdict::No {
        failures.push(format!("P: simplified basis {:?}", r.simplified_basis));
    }
    let (_, r) = timed("fig9", None);
    if r.simplified_basis != Verdict::Yes {
        failures.push(format!("fig9: simplified basis {:?}", r.simplified_basis));
    }
    if slowest > Duration::from_secs(1) {
        failures.push(format!("slowest entry took {slowest:?}"));
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("8 corpus checks, slowest {slowest:.0?}")
        } else {
            failures.join("; ")
        },
    )
}

fn oracle_equivalence(suite: &[Complex]) -> Outcome {
    let mut mismatches = 0;
    let mut skipped = 0;
    let mut first = String::new();
    for c in suite {
        let budget = SearchBudget::for_rank(c.rank().max(1), c.p);
        let o = match oracle::brute_force_decompose(c, &budget) {
            Ok(o) => o,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let d = classify::decompose(c);
        if !decomposition_equal(&o, &d) || (c.rank() > 0 && d.basis_change.is_none()) {
            mismatches += 1;
            if first.is_empty() {
                first = format!("first mismatch: {}", cli::print(c).replace('\n', " | "));
            }
        }
    }
    outcome(
        mismatches == 0 && skipped == 0,
        format!("{} complexes, {mismatches} mismatches, {skipped} over budget {first}", suite.len()),
    )
}

fn uniqueness(suite: &[Complex]) -> Outcome {
    let mut bad = 0;
    for (k, c) in suite.iter().enumerate() {
        let seed = 30_000 + k as u64;
        let d = classify::decompose_unverified(c);
        let perm = random::random_permutation(c.rank(), seed);
        let permuted = c.permuted(&perm);
        let changed = c.apply_basis_change(&random::random_basis_change(c, seed)).unwrap();
        let both = permuted
            .apply_basis_change(&random::random_basis_change(&permuted, seed + 1))
            .unwrap();
        for other in [permuted, changed, both] {
            if !decomposition_equal(&d, &classify::decompose_unverified(&other)) {
                bad += 1;
            }
        }
    }
    outcome(bad == 0, format!("{} complexes × 3 variants, {bad} differences", suite.len()))
}

/// A standard, horizontal or vertical snake in its canonical reading.
fn random_snake<R: Rng>(r: &mut R) -> Option<SnakeDescriptor> {
    let kind = [SnakeKind::Standard, SnakeKind::Horizontal, SnakeKind::Vertical][r.gen_range(0..3)];
    let len = match kind {
        SnakeKind::Standard => 2 * r.gen_range(0..=2),
        _ => 2 * r.gen_range(0..=1) + 1,
    };
    let seq: Vec<i64> = (0..len)
        .map(|_| r.gen_range(1..=3) * if r.gen_bool(0.5) { 1 } else { -1 })
        .collect();
    let sequence = if kind == SnakeKind::Standard {
        seq
    } else {
        // The path read from its other end has the same kind.
        let rev: Vec<i64> = seq.iter().rev().map(|x| -x).collect();
        if rev == seq {
            return None;
        }
        match twostory_order(&seq, &rev) {
            std::cmp::Ordering::Less => rev,
            _ => seq,
        }
    };
    Some(SnakeDescriptor {
        kind,
        sequence,
        anchor: (r.gen_range(-4..=4), r.gen_range(-4..=4)),
    })
}

fn twostory_order(a: &[i64], b: &[i64]) -> std::cmp::Ordering {
    r1complex::twostory::unusual_compare(a, b, None)
}

fn random_local_system<R: Rng>(r: &mut R, p: u32) -> Option<LocalSystemDescriptor> {
    let half = r.gen_range(1..=2);
    let mut seq: Vec<i64> = (0..2 * half)
        .map(|_| r.gen_range(1..=2) * if r.gen_bool(0.5) { 1 } else { -1 })
        .collect();
    let odd: i64 = seq.iter().step_by(2).sum();
    let even: i64 = seq.iter().skip(1).step_by(2).sum();
    if odd != even {
        let last = seq.len() - 1;
        seq[last] += odd - even;
        if seq[last] == 0 {
            return None;
        }
    }
    let shape = classify::canonical_shape(&seq).ok()?;
    let width = r.gen_range(1..=2usize);
    let a = random::random_invertible(r, p, width);
    let a = gf::rational_canonical_form(&a).ok()?;
    Some(LocalSystemDescriptor {
        shape,
        anchor: (r.gen_range(-4..=4), r.gen_range(-4..=4)),
        width,
        holonomy: a.to_rows(),
    })
}

fn random_multiset(seed: u64) -> (u32, Vec<Descriptor>) {
    let mut r = random::rng(seed);
    let p = [2, 3, 5][r.gen_range(0..3)];
    let mut ds = Vec::new();
    let mut rank = 0;
    for _ in 0..r.gen_range(0..=4) {
        let d = match r.gen_range(0..5) {
            0 | 1 => random_snake(&mut r).map(Descriptor::Snake),
            2 | 3 => random_local_system(&mut r, p).map(Descriptor::LocalSystem),
            _ => Some(Descriptor::Zero((r.gen_range(-3..=3), r.gen_range(-3..=3)))),
        };
        let Some(d) = d else { continue };
        let k = classify::realize(&d, p).map(|c| c.rank()).unwrap_or(usize::MAX);
        if rank + k <= 10 {
            rank += k;
            ds.push(d);
        }
    }
    (p, ds)
}

fn round_trip() -> Outcome {
    let mut bad = 0;
    let mut first = String::new();
    let mut kinds = [0usize; 3];
    for seed in 0..1000u64 {
        let (p, ds) = random_multiset(40_000 + seed);
        let expected = Decomposition::from_descriptors(p, &ds);
        kinds[0] += expected.snakes.len();
        kinds[1] += expected.local_systems.len();
        kinds[2] += expected.zeros;
        let got = classify::realize_decomposition(&expected).map(|c| classify::decompose_unverified(&c));
        if !got.as_ref().is_ok_and(|g| decomposition_equal(g, &expected) && g.zero_anchors == expected.zero_anchors) {
            bad += 1;
            if first.is_empty() {
                first = format!("first failure: {expected}").replace('\n', " ");
            }
        }
    }
    outcome(bad == 0, format!(
        "1000 multisets ({} snakes, {} local systems, {} zeros), {bad} failures {first}",
        kinds[0], kinds[1], kinds[2]
    ))
}

fn termination(suites: &[&[Complex]]) -> Outcome {
    let mut worst = 0usize;
    let mut over = 0;
    let mut errors = 0;
    let mut total = 0;
    let mut rounds_seen = 0;
    for suite in suites {
        for (k, c) in suite.iter().enumerate() {
            // Each input is also run behind a random basis change, which
            // gives the engine arrows to remove.
            let scrambled = c.apply_basis_change(&random::random_basis_change(c, 50_000 + k as u64)).unwrap();
            for x in [c, &scrambled] {
                total += 1;
                let n = x.rank();
                let bound = n * n.saturating_sub(1);
                match TwoStoryComplex::build(x).and_then(|t| t.run_to_depth_infinity()) {
                    Ok(t) => {
                        rounds_seen += t.rounds();
                        worst = worst.max(t.rounds());
                        if t.rounds() > bound || t.depth().is_some() {
                            over += 1;
                        }
                    }
                    Err(_) => errors += 1,
                }
            }
        }
    }
    outcome(
        over == 0 && errors == 0,
        format!("{total} runs, {rounds_seen} rounds in total, at most {worst} per run, {over} over the bound, {errors} errors"),
    )
}

fn ord_cross_check(suites: &[&[Complex]]) -> Outcome {
    let mut bad = 0;
    let mut total = 0;
    for suite in suites {
        for c in suite.iter() {
            total += 1;
            if invariants::ord_u(c) != invariants::ord_u_from_torsion(c) {
                bad += 1;
            }
        }
    }
    outcome(bad == 0, format!("{total} complexes, {bad} disagreements"))
}

/// The bar image of a decomposition, summand by summand.
fn bar_image(d: &Decomposition) -> Decomposition {
    let mut ds = Vec::new();
    for x in d.descriptors() {
        let c = classify::realize(&x, d.characteristic).unwrap();
        ds.extend(classify::decompose_unverified(&c.bar()).descriptors());
    }
    Decomposition::from_descriptors(d.characteristic, &ds)
}

fn symmetry(suites: &[&[Complex]]) -> Outcome {
    let s = |n: &str| invariants::is_symmetric(&corpus(n, None));
    let (d, p, t) = (s("example_D"), s("example_P"), s("example_T"));
    let mut bad = 0;
    let mut total = 0;
    for suite in suites {
        for c in suite.iter() {
            total += 1;
            let lhs = classify::decompose_unverified(&c.bar());
            if !decomposition_equal(&lhs, &bar_image(&classify::decompose_unverified(c))) {
                bad += 1;
            }
        }
    }
    outcome(
        d && p && !t && bad == 0,
        format!("D {d}, P {p}, T {t}; bar commutes on {total} complexes with {bad} failures"),
    )
}

fn floor_discipline() -> Outcome {
    let mut steps = 0usize;
    let mut failures = Vec::new();
    for (name, c) in corpus_suite() {
        for seed in 0..4u64 {
            let input = if seed == 0 {
                c.clone()
            } else {
                c.apply_basis_change(&random::random_basis_change(&c, 60_000 + seed)).unwrap()
            };
            let t = match TwoStoryComplex::build(&input) {
                Ok(t) => t,
                Err(e) => {
                    failures.push(format!("{name}: {e}"));
                    continue;
                }
            };
            if let Err(e) = t.check_invariants() {
                failures.push(format!("{name} initial: {e}"));
            }
            let mut first: Option<String> = None;
            let run = t.run_to_depth_infinity_with(&mut |t, what| {
                steps += 1;
                if first.is_none() {
                    first = t.check_invariants().err().map(|e| format!("{what}: {e}"));
                }
            });
            if let Err(e) = run {
                failures.push(format!("{name}/{seed}: {e}"));
            }
            if let Some(f) = first {
                failures.push(format!("{name}/{seed}: {f}"));
            }
            // The class-based engine behind decompose, traced step by step.
            let (stripped, _, _) = input.with_ring(r1complex::complex::Ring::R1).strip_zero_complexes();
            let td = simplify::transition_data(&stripped).unwrap();
            let mut engine = Engine::new(&td);
            let mut bad = None;
            engine.run_with(|e| {
                steps += 1;
                if bad.is_none() {
                    bad = e.check().err();
                }
                if bad.is_none() {
                    let c = r1complex::reduce::realize_transition(&td, &e.transition());
                    if !r1complex::iso::isomorphic(&c, &stripped, 1) {
                        bad = Some("engine transition does not reassemble".into());
                    }
                }
            });
            if let Some(b) = bad {
                failures.push(format!("{name}/{seed} engine: {b}"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{steps} traced steps over the corpus and scrambled copies")
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let started = Instant::now();
    let corpus: Vec<Complex> = corpus_suite().into_iter().map(|(_, c)| c).collect();
    let oracle_cases = oracle_suite();
    let unique_cases = uniqueness_suite();
    let suites: [&[Complex]; 3] = [&corpus, &oracle_cases, &unique_cases];
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 corpus reproduction", Box::new(corpus_reproduction)),
        ("2 oracle equivalence", Box::new(|| oracle_equivalence(&oracle_cases))),
        ("3 uniqueness under permutation and basis change", Box::new(|| uniqueness(&unique_cases))),
        ("4 descriptor round trip", Box::new(round_trip)),
        ("5 termination bound", Box::new(|| termination(&suites))),
        ("6 Ord_U cross-check", Box::new(|| ord_cross_check(&suites))),
        ("7 symmetry", Box::new(|| symmetry(&suites))),
        ("8 floor discipline and reassembly", Box::new(floor_discipline)),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let t = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {} ({:.1?})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed()
        );
    }
    println!("{} of 8 criteria passed in {:.1?}", 8 - failed, started.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}
