//! The complex file format, the bundled corpus and the reports produced by
//! the command-line front end.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::classify::{Decomposition, Descriptor, SnakeKind};
use crate::complex::{Complex, Generator, Ring};
use crate::gf;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("invalid complex: {0}")]
    Validation(String),
}

pub const CORPUS: &[(&str, &str)] = &[
    ("trefoil_f2", include_str!("../corpus/trefoil_f2.cx")),
    ("figure_eight_f3", include_str!("../corpus/figure_eight_f3.cx")),
    ("example_T", include_str!("../corpus/example_T.cx")),
    ("example_D", include_str!("../corpus/example_D.cx")),
    ("example_P", include_str!("../corpus/example_P.cx")),
    ("example_E", include_str!("../corpus/example_E.cx")),
    ("fig9", include_str!("../corpus/fig9.cx")),
];

pub fn corpus_text(name: &str) -> Option<&'static str> {
    CORPUS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Options that override the file header.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub characteristic: Option<u32>,
    pub ring: Option<Ring>,
}

pub fn parse_ring(s: &str) -> Option<Ring> {
    match s.to_ascii_lowercase().as_str() {
        "r1" => Some(Ring::R1),
        "fuv" => Some(Ring::FUV),
        _ => None,
    }
}

/// Parses a complex file. Lines are `char p`, `ring r1|fuv`,
/// `anchor id u v`, generator lines `id [gr_u gr_v]` and differential
/// lines `source target λ u v`; `#` starts a comment. Coefficients are
/// reduced mod p and terms that vanish are dropped. Generators given
/// without gradings are graded from the anchor.
pub fn parse(text: &str, ov: Overrides) -> Result<Complex, ParseError> {
    let syntax = |line: usize, msg: String| ParseError::Syntax { line, msg };
    let mut p = None;
    let mut ring = None;
    let mut anchor: Option<(String, i64, i64, usize)> = None;
    let mut gens: Vec<(String, Option<(i64, i64)>)> = Vec::new();
    let mut raw_terms: Vec<(usize, String, String, i64, u32, u32)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        let tok: Vec<&str> = content.split_whitespace().collect();
        let int = |s: &str| s.parse::<i64>().map_err(|_| syntax(line, format!("expected an integer, found `{s}`")));
        match (tok[0], tok.len()) {
            ("char", 2) => {
                let v = tok[1]
                    .parse::<u32>()
                    .map_err(|_| syntax(line, format!("bad characteristic `{}`", tok[1])))?;
                p = Some(v);
            }
            ("ring", 2) => ring = Some(parse_ring(tok[1]).ok_or_else(|| syntax(line, format!("unknown ring `{}`", tok[1])))?),
            ("anchor", 4) => anchor = Some((tok[1].to_string(), int(tok[2])?, int(tok[3])?, line)),
            (_, 1) => gens.push((tok[0].to_string(), None)),
            (_, 3) => gens.push((tok[0].to_string(), Some((int(tok[1])?, int(tok[2])?)))),
            (_, 5) => {
                let u = u32::try_from(int(tok[3])?).map_err(|_| syntax(line, "negative exponent".into()))?;
                let v = u32::try_from(int(tok[4])?).map_err(|_| syntax(line, "negative exponent".into()))?;
                raw_terms.push((line, tok[0].to_string(), tok[1].to_string(), int(tok[2])?, u, v));
            }
            _ => return Err(syntax(line, format!("unrecognized line `{content}`"))),
        }
    }
    let p = ov.characteristic.or(p).ok_or_else(|| syntax(0, "missing `char` line".into()))?;
    gf::check_prime(p).map_err(|e| syntax(0, e.to_string()))?;
    let ring = ov.ring.or(ring).unwrap_or(Ring::R1);
    let mut seen = HashSet::new();
    for (id, _) in &gens {
        if !seen.insert(id.clone()) {
            return Err(ParseError::Validation(format!("duplicate generator {id}")));
        }
    }
    let index = |id: &str, line: usize| {
        gens.iter()
            .position(|(g, _)| g == id)
            .ok_or_else(|| syntax(line, format!("unknown generator `{id}`")))
    };
    let mut terms = Vec::new();
    let mut keys = HashSet::new();
    for (line, s, t, lambda, u, v) in &raw_terms {
        let (s, t) = (index(s, *line)?, index(t, *line)?);
        if !keys.insert((s, t, *u, *v)) {
            return Err(syntax(*line, "duplicate differential term".into()));
        }
        let c = gf::reduce(*lambda, p);
        if c != 0 && ring.admits(*u, *v) {
            terms.push((s, t, c, *u, *v));
        }
    }
    let provisional: Vec<Generator> = gens
        .iter()
        .map(|(id, g)| {
            let (a, b) = g.unwrap_or((0, 0));
            Generator::new(id.clone(), a, b)
        })
        .collect();
    let mut c = Complex::new(ring, p, provisional, &terms).map_err(|e| ParseError::Validation(e.to_string()))?;
    if gens.iter().any(|(_, g)| g.is_none()) {
        let mut anchors: Vec<(usize, (i64, i64))> = gens
            .iter()
            .enumerate()
            .filter_map(|(i, (_, g))| g.map(|g| (i, g)))
            .collect();
        if let Some((id, a, b, line)) = &anchor {
            anchors.push((index(id, *line)?, (*a, *b)));
        }
        c = c.infer_gradings(&anchors).map_err(|e| ParseError::Validation(e.to_string()))?;
    } else if let Some((id, a, b, line)) = &anchor {
        let i = index(id, *line)?;
        if c.generator(i).gr() != (*a, *b) {
            return Err(syntax(*line, format!("anchor disagrees with the grading of {id}")));
        }
    }
    if let Err(v) = c.validate() {
        let msgs: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
        return Err(ParseError::Validation(msgs.join("; ")));
    }
    Ok(c)
}

/// Writes a complex in the file format; `parse` reads it back unchanged.
pub fn print(c: &Complex) -> String {
    let mut out = String::new();
    writeln!(out, "char {}", c.p).unwrap();
    writeln!(out, "ring {}", c.ring.name()).unwrap();
    out.push('\n');
    for g in c.generators() {
        writeln!(out, "{} {} {}", g.id, g.gr_u, g.gr_v).unwrap();
    }
    out.push('\n');
    for (s, t, m) in c.terms() {
        writeln!(
            out,
            "{} {} {} {} {}",
            c.generator(s).id,
            c.generator(t).id,
            m.coeff.value(),
            m.u_exp,
            m.v_exp
        )
        .unwrap();
    }
    out
}

/// Parses a bundled corpus entry.
pub fn corpus(name: &str, ov: Overrides) -> Option<Complex> {
    corpus_text(name).map(|t| parse(t, ov).expect("bundled corpus parses"))
}


fn arrow_label(u: u32, v: u32) -> String {
    match (u, v) {
        (0, 0) => "1".into(),
        (u, 0) => format!("U^{u}"),
        (0, v) => format!("V^{v}"),
        (u, v) => format!("U^{u}V^{v}"),
    }
}

/// Text picture: generators placed on the (gr_U, gr_V) lattice, one cell
/// per occupied bigrading, followed by the list of arrows.
pub fn render_text(c: &Complex) -> String {
    let mut out = String::new();
    let blocks = c.grading_blocks();
    if blocks.is_empty() {
        return "(empty complex)\n".into();
    }
    let us: Vec<i64> = blocks.keys().map(|g| g.0).collect();
    let (umin, umax) = (*us.iter().min().unwrap(), *us.iter().max().unwrap());
    let mut vs: Vec<i64> = blocks.keys().map(|g| g.1).collect();
    vs.sort();
    vs.dedup();
    let cell = |g: (i64, i64)| -> String {
        blocks
            .get(&g)
            .map(|ix| ix.iter().map(|&i| c.generator(i).id.clone()).collect::<Vec<_>>().join(","))
            .unwrap_or_default()
    };
    let width = blocks.keys().map(|&g| cell(g).len()).max().unwrap_or(1).max(3);
    write!(out, "{:>5} |", "v\\u").unwrap();
    for u in umin..=umax {
        write!(out, " {u:>width$}").unwrap();
    }
    out.push('\n');
    for &v in vs.iter().rev() {
        write!(out, "{v:>5} |").unwrap();
        for u in umin..=umax {
            let t = cell((u, v));
            let t = if t.is_empty() { ".".to_string() } else { t };
            write!(out, " {t:>width$}").unwrap();
        }
        out.push('\n');
    }
    out.push('\n');
    for (s, t, m) in c.terms() {
        let coeff = if m.coeff.value() == 1 { String::new() } else { format!("{}·", m.coeff.value()) };
        writeln!(
            out,
            "{} --{}{}--> {}",
            c.generator(s).id,
            coeff,
            arrow_label(m.u_exp, m.v_exp),
            c.generator(t).id
        )
        .unwrap();
    }
    out
}

/// Vector picture: generators at (gr_U, gr_V) with U-arrows drawn solid
/// and V-arrows dashed.
pub fn render_svg(c: &Complex) -> String {
    let scale = 40i64;
    let pos: Vec<(i64, i64)> = c.generators().iter().map(|g| g.gr()).collect();
    let (umin, umax) = pos.iter().fold((0, 0), |(a, b), g| (a.min(g.0), b.max(g.0)));
    let (vmin, vmax) = pos.iter().fold((0, 0), |(a, b), g| (a.min(g.1), b.max(g.1)));
    let w = (umax - umin + 2) * scale;
    let h = (vmax - vmin + 2) * scale;
    // Several generators in one bigrading are fanned out horizontally.
    let mut seen: BTreeMap<(i64, i64), i64> = BTreeMap::new();
    let xy: Vec<(i64, i64)> = pos
        .iter()
        .map(|&g| {
            let k = seen.entry(g).or_insert(0);
            *k += 1;
            ((g.0 - umin + 1) * scale + (*k - 1) * 8, (vmax - g.1 + 1) * scale)
        })
        .collect();
    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    for (s, t, m) in c.terms() {
        let (a, b) = (xy[s], xy[t]);
        let dash = if m.v_exp > 0 { r#" stroke-dasharray="4 3""# } else { "" };
        writeln!(
            out,
            r#"  <line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"{dash}><title>{}</title></line>"#,
            a.0,
            a.1,
            b.0,
            b.1,
            arrow_label(m.u_exp, m.v_exp)
        )
        .unwrap();
    }
    for (i, g) in c.generators().iter().enumerate() {
        let (x, y) = xy[i];
        writeln!(out, r#"  <circle cx="{x}" cy="{y}" r="4" fill="black"/>"#).unwrap();
        writeln!(out, r#"  <text x="{}" y="{}" font-size="10">{}</text>"#, x + 5, y - 5, g.id).unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Immersed-curve descriptors: each snake is an arc, each local system a
/// closed curve with its holonomy; zero complexes leave no trace.
pub fn curve_descriptors(d: &Decomposition) -> Vec<String> {
    d.descriptors()
        .iter()
        .filter_map(|x| match x {
            Descriptor::Snake(s) => {
                let ends = match s.kind {
                    SnakeKind::Standard => "both ends at the marked line",
                    SnakeKind::Horizontal => "ends on opposite sides, horizontal last",
                    SnakeKind::Vertical => "ends on opposite sides, vertical first",
                };
                Some(format!("arc {s} from ({},{}) ({ends})", s.anchor.0, s.anchor.1))
            }
            Descriptor::LocalSystem(l) => Some(format!(
                "closed curve shape [{}] through ({},{}) with local system of rank {} and holonomy {:?}",
                l.shape.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                l.anchor.0,
                l.anchor.1,
                l.width,
                l.holonomy
            )),
            Descriptor::Zero(_) => None,
        })
        .collect()
}
