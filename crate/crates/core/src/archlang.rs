//! Text notation for hierarchical point-set networks.
//!
//! ```text
//! SA(512,0.2,[64,64,128]) -> SA(128,0.4,[128,128,256]) -> SA([256,512,1024])
//!     -> FC(512,0.5) -> FC(256,0.5) -> FC(40)
//! ```
//!
//! Levels:
//! * `SA(K, r, [l1,...,ld])` single-scale set abstraction with `K` centroids;
//! * `SA(K, [r1,...,rm], [[...],...,[...]])` multi-scale set abstraction;
//! * `SA([l1,...,ld])` global set abstraction (whole set to one vector);
//! * `FC(l, dp)` fully connected layer with dropout `dp` (`FC(l)` means `dp = 0`);
//! * `FP(l1,...,ld)` feature propagation level;
//! * `MRG{branch1: ...; branch2: ...; branch3: ...; branch4: ...}` the
//!   multi-resolution block, followed by `FC` levels.
//!
//! Trailing options follow `;`: `cap=<int>` (group size, default 32),
//! `group=ball|knn`, `fp_dropout=<real>` (dropout on the two layers before
//! the final score layer of a segmentation head). `#` starts a comment.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Parse failure with the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("architecture parse error at byte {offset}: {message}")]
pub struct ArchError {
    pub offset: usize,
    pub message: String,
}

fn fail<T>(offset: usize, message: impl Into<String>) -> Result<T, ArchError> {
    Err(ArchError {
        offset,
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Level {
    /// Single-scale grouping.
    Sa {
        centroids: usize,
        radius: f64,
        widths: Vec<usize>,
    },
    /// Multi-scale grouping: one `(radius, widths)` pair per scale.
    Msg {
        centroids: usize,
        radii: Vec<f64>,
        widths: Vec<Vec<usize>>,
    },
    /// Global set abstraction over the whole set.
    GlobalSa { widths: Vec<usize> },
    Fc { width: usize, dropout: f64 },
    Fp { widths: Vec<usize> },
    Mrg(Box<MrgSpec>),
}

/// Multi-resolution block. Branch 1 abstracts the input hierarchically;
/// branch 2 encodes raw points around branch 1's final centroids; branch 4
/// globally abstracts the concatenation of branches 1 and 2; branch 3 is a
/// global encoding of all raw points. Branches 3 and 4 are concatenated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrgSpec {
    pub branch1: Vec<Level>,
    pub branch2: Level,
    pub branch3: Level,
    pub branch4: Level,
}

impl Level {
    pub fn name(&self) -> &'static str {
        match self {
            Level::Sa { .. } => "SA",
            Level::Msg { .. } => "SA(MSG)",
            Level::GlobalSa { .. } => "SA(global)",
            Level::Fc { .. } => "FC",
            Level::Fp { .. } => "FP",
            Level::Mrg(_) => "MRG",
        }
    }

    pub fn is_abstraction(&self) -> bool {
        matches!(self, Level::Sa { .. } | Level::Msg { .. } | Level::GlobalSa { .. })
    }

    /// Output feature width of this level alone.
    pub fn output_width(&self) -> usize {
        match self {
            Level::Sa { widths, .. } | Level::GlobalSa { widths } | Level::Fp { widths } => {
                widths.last().copied().unwrap_or(0)
            }
            Level::Msg { widths, .. } => widths.iter().map(|w| w.last().copied().unwrap_or(0)).sum(),
            Level::Fc { width, .. } => *width,
            Level::Mrg(m) => m.branch3.output_width() + m.branch4.output_width(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Classification,
    Segmentation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Grouping {
    Ball,
    Knn,
}

pub const DEFAULT_GROUP_CAP: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkBlueprint {
    pub levels: Vec<Level>,
    pub head: Head,
    /// Maximum members per local region (`k` when grouping is kNN).
    pub group_cap: usize,
    pub grouping: Grouping,
    pub fp_dropout: f64,
}

impl NetworkBlueprint {
    pub fn new(levels: Vec<Level>) -> Self {
        let head = if levels.iter().any(|l| matches!(l, Level::Fp { .. })) {
            Head::Segmentation
        } else {
            Head::Classification
        };
        Self {
            levels,
            head,
            group_cap: DEFAULT_GROUP_CAP,
            grouping: Grouping::Ball,
            fp_dropout: 0.0,
        }
    }

    /// Width of the final output (class count the blueprint was built for).
    pub fn output_width(&self) -> usize {
        self.levels.last().map_or(0, Level::output_width)
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Arrow,
    Semi,
    Colon,
    Equals,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Number(s) => format!("number `{s}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Equals => "`=`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ArchError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'(' | b')' | b'[' | b']' | b'{' | b'}' | b',' | b';' | b':' | b'=' => {
                let t = match c {
                    b'(' => Tok::LParen,
                    b')' => Tok::RParen,
                    b'[' => Tok::LBracket,
                    b']' => Tok::RBracket,
                    b'{' => Tok::LBrace,
                    b'}' => Tok::RBrace,
                    b',' => Tok::Comma,
                    b';' => Tok::Semi,
                    b':' => Tok::Colon,
                    _ => Tok::Equals,
                };
                out.push((t, i));
                i += 1;
            }
            b'-' if bytes.get(i + 1) == Some(&b'>') => {
                out.push((Tok::Arrow, i));
                i += 2;
            }
            b'0'..=b'9' | b'.' | b'-' | b'+' => {
                let start = i;
                i += 1;
                while i < bytes.len() {
                    let d = bytes[i];
                    let exp_sign = (d == b'-' || d == b'+') && matches!(bytes[i - 1], b'e' | b'E');
                    if d.is_ascii_digit() || d == b'.' || d == b'e' || d == b'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                out.push((Tok::Number(text[start..i].to_string()), start));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return fail(i, format!("unexpected character `{}`", ch.escape_debug()));
            }
        }
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

enum Arg {
    Number(String, usize),
    List(Vec<Arg>, usize),
}

impl Arg {
    fn offset(&self) -> usize {
        match self {
            Arg::Number(_, o) | Arg::List(_, o) => *o,
        }
    }
}

fn as_int(arg: &Arg, what: &str) -> Result<usize, ArchError> {
    match arg {
        Arg::Number(s, o) => match s.parse::<usize>() {
            Ok(0) => fail(*o, format!("{what} must be at least 1")),
            Ok(v) => Ok(v),
            Err(_) => fail(*o, format!("expected a positive integer for {what}, found `{s}`")),
        },
        Arg::List(_, o) => fail(*o, format!("expected an integer for {what}, found a list")),
    }
}

fn as_real(arg: &Arg, what: &str) -> Result<f64, ArchError> {
    match arg {
        Arg::Number(s, o) => match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => fail(*o, format!("expected a real number for {what}, found `{s}`")),
        },
        Arg::List(_, o) => fail(*o, format!("expected a number for {what}, found a list")),
    }
}

fn as_int_list(arg: &Arg, what: &str) -> Result<Vec<usize>, ArchError> {
    match arg {
        Arg::List(items, o) => {
            if items.is_empty() {
                return fail(*o, format!("{what} must not be empty"));
            }
            items.iter().map(|a| as_int(a, "width")).collect()
        }
        Arg::Number(_, o) => fail(*o, format!("expected `[` starting {what}")),
    }
}

fn is_list(arg: &Arg) -> bool {
    matches!(arg, Arg::List(..))
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<usize, ArchError> {
        if *self.peek() == want {
            Ok(self.bump().1)
        } else {
            fail(
                self.offset(),
                format!("expected {}, found {}", want.describe(), self.peek().describe()),
            )
        }
    }

    fn arg(&mut self, depth: usize) -> Result<Arg, ArchError> {
        let at = self.offset();
        match self.peek().clone() {
            Tok::Number(s) => {
                self.bump();
                Ok(Arg::Number(s, at))
            }
            Tok::LBracket => {
                if depth > 2 {
                    return fail(at, "lists nest at most two deep");
                }
                self.bump();
                let mut items = Vec::new();
                if *self.peek() != Tok::RBracket {
                    loop {
                        items.push(self.arg(depth + 1)?);
                        if *self.peek() == Tok::Comma {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::RBracket)?;
                Ok(Arg::List(items, at))
            }
            other => fail(at, format!("expected a number or `[`, found {}", other.describe())),
        }
    }

    fn args(&mut self) -> Result<(Vec<Arg>, usize), ArchError> {
        let open = self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                args.push(self.arg(1)?);
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen)?;
        Ok((args, open))
    }

    fn level(&mut self) -> Result<Level, ArchError> {
        let at = self.offset();
        let name = match self.bump().0 {
            Tok::Ident(s) => s,
            other => return fail(at, format!("expected a level name (SA, FC, FP, MRG), found {}", other.describe())),
        };
        match name.as_str() {
            "SA" => {
                let (args, open) = self.args()?;
                sa_level(&args, open)
            }
            "FC" => {
                let (args, open) = self.args()?;
                match args.as_slice() {
                    [w] => Ok(Level::Fc {
                        width: as_int(w, "FC width")?,
                        dropout: 0.0,
                    }),
                    [w, dp] => {
                        let dropout = as_real(dp, "FC dropout")?;
                        if !(0.0..1.0).contains(&dropout) {
                            return fail(dp.offset(), "dropout ratio must be in [0, 1)");
                        }
                        Ok(Level::Fc {
                            width: as_int(w, "FC width")?,
                            dropout,
                        })
                    }
                    _ => fail(open, format!("FC takes (width) or (width, dropout), got {} arguments", args.len())),
                }
            }
            "FP" => {
                let (args, open) = self.args()?;
                if args.is_empty() {
                    return fail(open, "FP needs at least one width");
                }
                Ok(Level::Fp {
                    widths: args.iter().map(|a| as_int(a, "FP width")).collect::<Result<_, _>>()?,
                })
            }
            "MRG" => self.mrg(at),
            _ => fail(at, format!("unknown level `{name}` (expected SA, FC, FP or MRG)")),
        }
    }

    fn chain(&mut self) -> Result<Vec<Level>, ArchError> {
        let mut levels = vec![self.level()?];
        while *self.peek() == Tok::Arrow {
            self.bump();
            levels.push(self.level()?);
        }
        Ok(levels)
    }

    fn mrg(&mut self, at: usize) -> Result<Level, ArchError> {
        self.expect(Tok::LBrace)?;
        let mut branches: [Option<Vec<Level>>; 4] = Default::default();
        loop {
            let bat = self.offset();
            let name = match self.bump().0 {
                Tok::Ident(s) => s,
                other => return fail(bat, format!("expected a branch name, found {}", other.describe())),
            };
            let slot = match name.as_str() {
                "branch1" => 0,
                "branch2" => 1,
                "branch3" => 2,
                "branch4" => 3,
                _ => return fail(bat, format!("unknown MRG branch `{name}` (expected branch1..branch4)")),
            };
            if branches[slot].is_some() {
                return fail(bat, format!("duplicate MRG branch `{name}`"));
            }
            self.expect(Tok::Colon)?;
            branches[slot] = Some(self.chain()?);
            if *self.peek() == Tok::Semi {
                self.bump();
            } else {
                break;
            }
        }
        self.expect(Tok::RBrace)?;
        let [b1, b2, b3, b4] = branches;
        let (Some(b1), Some(b2), Some(b3), Some(b4)) = (b1, b2, b3, b4) else {
            return fail(at, "MRG needs branch1, branch2, branch3 and branch4");
        };
        let single = |mut v: Vec<Level>, name: &str| -> Result<Level, ArchError> {
            if v.len() != 1 {
                return fail(at, format!("MRG {name} must be a single level"));
            }
            Ok(v.remove(0))
        };
        Ok(Level::Mrg(Box::new(MrgSpec {
            branch1: b1,
            branch2: single(b2, "branch2")?,
            branch3: single(b3, "branch3")?,
            branch4: single(b4, "branch4")?,
        })))
    }

    fn options(&mut self, bp: &mut NetworkBlueprint) -> Result<(), ArchError> {
        while *self.peek() == Tok::Semi {
            self.bump();
            let at = self.offset();
            let key = match self.bump().0 {
                Tok::Ident(s) => s,
                other => return fail(at, format!("expected an option name, found {}", other.describe())),
            };
            self.expect(Tok::Equals)?;
            let vat = self.offset();
            let value = match self.bump().0 {
                Tok::Ident(s) | Tok::Number(s) => s,
                other => return fail(vat, format!("expected an option value, found {}", other.describe())),
            };
            match key.as_str() {
                "cap" => {
                    bp.group_cap = as_int(&Arg::Number(value, vat), "cap")?;
                }
                "group" => {
                    bp.grouping = match value.as_str() {
                        "ball" => Grouping::Ball,
                        "knn" => Grouping::Knn,
                        _ => return fail(vat, format!("group must be `ball` or `knn`, found `{value}`")),
                    }
                }
                "fp_dropout" => {
                    let v = as_real(&Arg::Number(value, vat), "fp_dropout")?;
                    if !(0.0..1.0).contains(&v) {
                        return fail(vat, "fp_dropout must be in [0, 1)");
                    }
                    bp.fp_dropout = v;
                }
                _ => return fail(at, format!("unknown option `{key}` (expected cap, group or fp_dropout)")),
            }
        }
        Ok(())
    }
}

fn sa_level(args: &[Arg], open: usize) -> Result<Level, ArchError> {
    match args {
        [list] if is_list(list) => Ok(Level::GlobalSa {
            widths: as_int_list(list, "width list")?,
        }),
        [k, radii, lists] if is_list(radii) => {
            let centroids = as_int(k, "centroid count")?;
            let Arg::List(rs, ro) = radii else { unreachable!() };
            let Arg::List(ls, lo) = lists else {
                return fail(lists.offset(), "expected `[[...],...]` with one width list per radius");
            };
            if rs.len() < 2 {
                return fail(*ro, "multi-scale grouping needs at least two radii");
            }
            if rs.len() != ls.len() {
                return fail(*lo, format!("{} radii but {} width lists", rs.len(), ls.len()));
            }
            let radii: Vec<f64> = rs.iter().map(|r| positive_radius(r)).collect::<Result<_, _>>()?;
            for (i, r) in radii.iter().enumerate() {
                if radii[..i].contains(r) {
                    return fail(rs[i].offset(), "multi-scale radii must be distinct");
                }
            }
            Ok(Level::Msg {
                centroids,
                radii,
                widths: ls.iter().map(|l| as_int_list(l, "width list")).collect::<Result<_, _>>()?,
            })
        }
        [k, r, list] => Ok(Level::Sa {
            centroids: as_int(k, "centroid count")?,
            radius: positive_radius(r)?,
            widths: as_int_list(list, "width list")?,
        }),
        [_, _] => fail(open, "SA(K, r) is missing its width list: expected SA(K, r, [l1,...,ld])"),
        _ => fail(
            open,
            format!(
                "SA takes ([widths]), (K, r, [widths]) or (K, [radii], [[widths],...]); got {} arguments",
                args.len()
            ),
        ),
    }
}

fn positive_radius(arg: &Arg) -> Result<f64, ArchError> {
    let r = as_real(arg, "radius")?;
    if r <= 0.0 {
        return fail(arg.offset(), "radius must be positive");
    }
    Ok(r)
}

/// Parses blueprint text. Structural width checks against concrete inputs
/// happen in [`validate_chain`].
pub fn parse_blueprint(text: &str) -> Result<NetworkBlueprint, ArchError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    if *p.peek() == Tok::End {
        return fail(0, "empty blueprint");
    }
    let levels = p.chain()?;
    let mut bp = NetworkBlueprint::new(levels);
    p.options(&mut bp)?;
    if *p.peek() != Tok::End {
        return fail(p.offset(), format!("expected `->`, `;` or end of input, found {}", p.peek().describe()));
    }
    structure_check(&bp).map_err(|d| ArchError {
        offset: 0,
        message: d.to_string(),
    })?;
    Ok(bp)
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Sa {
                centroids,
                radius,
                widths,
            } => write!(f, "SA({centroids},{radius},[{}])", join(widths)),
            Level::Msg {
                centroids,
                radii,
                widths,
            } => {
                let lists: Vec<String> = widths.iter().map(|w| format!("[{}]", join(w))).collect();
                write!(f, "SA({centroids},[{}],[{}])", join(radii), lists.join(","))
            }
            Level::GlobalSa { widths } => write!(f, "SA([{}])", join(widths)),
            Level::Fc { width, dropout } => write!(f, "FC({width},{dropout})"),
            Level::Fp { widths } => write!(f, "FP({})", join(widths)),
            Level::Mrg(m) => {
                let b1: Vec<String> = m.branch1.iter().map(ToString::to_string).collect();
                write!(
                    f,
                    "MRG{{branch1: {}; branch2: {}; branch3: {}; branch4: {}}}",
                    b1.join(" -> "),
                    m.branch2,
                    m.branch3,
                    m.branch4
                )
            }
        }
    }
}

/// Canonical text: levels joined by ` -> `, non-default options appended.
pub fn render_blueprint(bp: &NetworkBlueprint) -> String {
    let mut s = bp
        .levels
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" -> ");
    if bp.group_cap != DEFAULT_GROUP_CAP {
        s.push_str(&format!("; cap={}", bp.group_cap));
    }
    if bp.grouping == Grouping::Knn {
        s.push_str("; group=knn");
    }
    if bp.fp_dropout != 0.0 {
        s.push_str(&format!("; fp_dropout={}", bp.fp_dropout));
    }
    s
}

impl fmt::Display for NetworkBlueprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_blueprint(self))
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// First problem found while checking a blueprint; `level` is 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub level: usize,
    pub level_name: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "level {} ({}): {}", self.level + 1, self.level_name, self.message)
    }
}

fn diag<T>(level: usize, bp_level: &Level, message: impl Into<String>) -> Result<T, Diagnostic> {
    Err(Diagnostic {
        level,
        level_name: bp_level.to_string(),
        message: message.into(),
    })
}

/// Input and output width of one level after chaining.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelWidths {
    pub level: usize,
    pub input: usize,
    pub output: usize,
}

fn check_sa_shape(i: usize, level: &Level, prev_centroids: &mut Option<usize>) -> Result<(), Diagnostic> {
    let centroids = match level {
        Level::Sa { centroids, .. } | Level::Msg { centroids, .. } => Some(*centroids),
        _ => None,
    };
    if let Level::Msg { radii, widths, .. } = level {
        if radii.len() < 2 || radii.len() != widths.len() {
            return diag(i, level, "multi-scale level needs at least two radii, one width list each");
        }
    }
    if let (Some(c), Some(p)) = (centroids, *prev_centroids) {
        if c > p {
            return diag(i, level, format!("{c} centroids exceeds the {p} points of the previous level"));
        }
    }
    if centroids.is_some() {
        *prev_centroids = centroids;
    }
    Ok(())
}

/// Order rules independent of input dimensions.
fn structure_check(bp: &NetworkBlueprint) -> Result<(), Diagnostic> {
    let levels = &bp.levels;
    if let Some(pos) = levels.iter().position(|l| matches!(l, Level::Mrg(_))) {
        if pos != 0 {
            return diag(pos, &levels[pos], "MRG block must be the first level");
        }
        let Level::Mrg(m) = &levels[0] else { unreachable!() };
        let mut prev = None;
        if m.branch1.is_empty() {
            return diag(0, &levels[0], "branch1 needs at least one level");
        }
        for l in &m.branch1 {
            if !matches!(l, Level::Sa { .. } | Level::Msg { .. }) {
                return diag(0, &levels[0], format!("branch1 may only hold local SA levels, found {l}"));
            }
            check_sa_shape(0, l, &mut prev)?;
        }
        if !matches!(m.branch2, Level::Sa { .. }) {
            return diag(0, &levels[0], "branch2 must be a single-scale SA(K, r, [...]) level");
        }
        for (name, b) in [("branch3", &m.branch3), ("branch4", &m.branch4)] {
            if !matches!(b, Level::GlobalSa { .. }) {
                return diag(0, &levels[0], format!("{name} must be a global SA([...]) level"));
            }
        }
        for (i, l) in levels.iter().enumerate().skip(1) {
            if !matches!(l, Level::Fc { .. }) {
                return diag(i, l, "only FC levels may follow an MRG block");
            }
        }
        if levels.len() < 2 {
            return diag(0, &levels[0], "MRG block needs an FC head");
        }
        return Ok(());
    }

    let n_abs = levels.iter().take_while(|l| l.is_abstraction()).count();
    if n_abs == 0 {
        return diag(0, &levels[0], "a blueprint starts with a set abstraction level");
    }
    let mut prev = None;
    for (i, l) in levels[..n_abs].iter().enumerate() {
        if matches!(l, Level::GlobalSa { .. }) && i + 1 != n_abs {
            return diag(i + 1, &levels[i + 1], "no set abstraction may follow a global SA");
        }
        check_sa_shape(i, l, &mut prev)?;
    }
    let rest = &levels[n_abs..];
    if rest.is_empty() {
        return diag(n_abs - 1, &levels[n_abs - 1], "blueprint needs an FC or FP head");
    }
    match &rest[0] {
        Level::Fc { .. } => {
            if !matches!(levels[n_abs - 1], Level::GlobalSa { .. }) {
                return diag(n_abs, &rest[0], "FC head must follow a global SA level");
            }
            if let Some(j) = rest.iter().position(|l| !matches!(l, Level::Fc { .. })) {
                return diag(n_abs + j, &rest[j], "classification head may only contain FC levels");
            }
        }
        Level::Fp { .. } => {
            if let Some(j) = rest.iter().position(|l| !matches!(l, Level::Fp { .. })) {
                return diag(n_abs + j, &rest[j], "segmentation head may only contain FP levels");
            }
            if rest.len() != n_abs {
                let bad = n_abs + rest.len().min(n_abs);
                let at = bad.min(levels.len() - 1);
                return diag(
                    at,
                    &levels[at],
                    format!(
                        "{} FP levels for {n_abs} SA levels: each FP level needs the skip link of one SA level",
                        rest.len()
                    ),
                );
            }
        }
        other => return diag(n_abs, other, "expected FC or FP after the set abstraction levels"),
    }
    Ok(())
}

/// Checks the blueprint against concrete input dimensions and class count.
/// Set abstraction inputs include the `d` localized coordinates; feature
/// propagation inputs include the skip-linked features.
pub fn validate_chain(
    bp: &NetworkBlueprint,
    input_d: usize,
    input_c: usize,
    num_classes: usize,
) -> Result<Vec<LevelWidths>, Diagnostic> {
    chain_widths(bp, input_d, input_c, num_classes)
}

pub(crate) fn chain_widths(
    bp: &NetworkBlueprint,
    localized: usize,
    input_c: usize,
    num_classes: usize,
) -> Result<Vec<LevelWidths>, Diagnostic> {
    structure_check(bp)?;
    let levels = &bp.levels;
    let mut out = Vec::with_capacity(levels.len());
    let mut width = input_c;
    // Feature widths entering each SA level, for FP skip links.
    let mut skips = Vec::new();
    for (i, level) in levels.iter().enumerate() {
        let input = match level {
            Level::Sa { .. } | Level::Msg { .. } | Level::GlobalSa { .. } => {
                skips.push(width);
                localized + width
            }
            Level::Fc { .. } => width,
            Level::Fp { .. } => {
                let skip = skips.pop().unwrap_or(0);
                width + skip
            }
            Level::Mrg(m) => {
                // Branch inputs are raw points; report the raw width.
                let _ = m;
                localized + width
            }
        };
        if input == 0 {
            return diag(i, level, "level has no input channels (d=0 and C=0 upstream)");
        }
        let output = level.output_width();
        out.push(LevelWidths { level: i, input, output });
        width = output;
    }
    let last = levels.len() - 1;
    if width != num_classes {
        return diag(
            last,
            &levels[last],
            format!("head emits {width} scores but {num_classes} classes were requested"),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SSG: &str = "SA(512,0.2,[64,64,128]) -> SA(128,0.4,[128,128,256]) -> SA([256,512,1024]) -> FC(512,0.5) -> FC(256,0.5) -> FC(40)";

    #[test]
    fn parses_ssg_listing() {
        let bp = parse_blueprint(SSG).unwrap();
        assert_eq!(bp.levels.len(), 6);
        assert_eq!(bp.head, Head::Classification);
        assert!(!bp.levels.iter().any(|l| matches!(l, Level::Msg { .. })));
        assert_eq!(bp.output_width(), 40);
        let widths = validate_chain(&bp, 3, 0, 40).unwrap();
        assert_eq!(widths[0], LevelWidths { level: 0, input: 3, output: 128 });
        assert_eq!(widths[1].input, 131);
        assert_eq!(widths[2].input, 259);
    }

    #[test]
    fn parses_msg_level_width() {
        let bp = parse_blueprint("SA(512,[0.1,0.2,0.4],[[32,32,64],[64,64,128],[64,96,128]]) -> SA([64]) -> FC(2)").unwrap();
        match &bp.levels[0] {
            Level::Msg { radii, .. } => assert_eq!(radii.len(), 3),
            other => panic!("{other:?}"),
        }
        assert_eq!(bp.levels[0].output_width(), 320);
    }

    #[test]
    fn width_list_required() {
        let err = parse_blueprint("SA(512,0.2)").unwrap_err();
        assert!(err.message.contains("width list"), "{err}");
        assert_eq!(err.offset, 2);
    }

    #[test]
    fn errors_carry_offsets() {
        let err = parse_blueprint("SA([8]) -> XX(3)").unwrap_err();
        assert_eq!(err.offset, 11);
        assert!(err.message.contains("unknown level"));
        let err = parse_blueprint("SA([8]) -> FC(a)").unwrap_err();
        assert_eq!(err.offset, 14);
        let err = parse_blueprint("SA([8]) -> FC(2.5)").unwrap_err();
        assert!(err.message.contains("integer"));
        assert!(parse_blueprint("SA(4,[0.1,0.1],[[4],[4]]) -> SA([4]) -> FC(2)").is_err());
        assert!(parse_blueprint("").is_err());
    }

    #[test]
    fn canonical_fc_rendering() {
        let bp = parse_blueprint("SA([4]) -> FC( 10 , 0.0 )").unwrap();
        assert_eq!(render_blueprint(&bp), "SA([4]) -> FC(10,0)");
    }

    #[test]
    fn classes_mismatch_is_diagnosed_at_head() {
        let bp = parse_blueprint(&SSG.replace("FC(40)", "FC(39)")).unwrap();
        let d = validate_chain(&bp, 3, 0, 40).unwrap_err();
        assert_eq!(d.level, 5);
    }

    #[test]
    fn options_round_trip() {
        let bp = parse_blueprint("SA(8,0.5,[4]) -> SA([8]) -> FP(4) -> FP(4,3); cap=16; group=knn; fp_dropout=0.5").unwrap();
        assert_eq!(bp.group_cap, 16);
        assert_eq!(bp.grouping, Grouping::Knn);
        assert_eq!(bp.fp_dropout, 0.5);
        assert_eq!(bp.head, Head::Segmentation);
        assert_eq!(parse_blueprint(&render_blueprint(&bp)).unwrap(), bp);
    }

    #[test]
    fn comments_and_whitespace_are_ignored() {
        let text = "# SSG\nSA(512, 0.2, [64, 64, 128])  # first\n -> SA([256])\n->FC(3)\n";
        let bp = parse_blueprint(text).unwrap();
        assert_eq!(render_blueprint(&bp), "SA(512,0.2,[64,64,128]) -> SA([256]) -> FC(3,0)");
    }

    mod round_trip {
        use super::*;
        use proptest::prelude::*;

        fn widths() -> impl Strategy<Value = Vec<usize>> {
            prop::collection::vec(1usize..300, 1..4)
        }

        fn radius() -> impl Strategy<Value = f64> {
            (1u32..4000).prop_map(|r| f64::from(r) / 1000.0)
        }

        fn local_level(centroids: usize) -> impl Strategy<Value = Level> {
            prop_oneof![
                (radius(), widths()).prop_map(move |(radius, widths)| Level::Sa { centroids, radius, widths }),
                (prop::collection::btree_set(1u32..4000, 2..4), prop::collection::vec(widths(), 3)).prop_map(
                    move |(radii, mut widths)| {
                        let radii: Vec<f64> = radii.into_iter().map(|r| f64::from(r) / 1000.0).collect();
                        widths.truncate(radii.len());
                        Level::Msg { centroids, radii, widths }
                    }
                ),
            ]
        }

        fn blueprint() -> impl Strategy<Value = NetworkBlueprint> {
            let locals = prop::collection::vec(1usize..2048, 1..4).prop_flat_map(|mut c| {
                c.sort_unstable_by(|a, b| b.cmp(a));
                c.into_iter().map(local_level).collect::<Vec<_>>()
            });
            let fc = (1usize..600, 0u32..10).prop_map(|(width, d)| Level::Fc { width, dropout: f64::from(d) / 10.0 });
            let classify = (locals.clone(), widths(), prop::collection::vec(fc, 1..4)).prop_map(|(mut l, g, head)| {
                l.push(Level::GlobalSa { widths: g });
                l.extend(head);
                l
            });
            let segment = (locals, widths()).prop_flat_map(|(l, g)| {
                let n = l.len() + 1;
                (Just(l), Just(g), prop::collection::vec(widths(), n)).prop_map(|(mut l, g, fps)| {
                    l.push(Level::GlobalSa { widths: g });
                    l.extend(fps.into_iter().map(|widths| Level::Fp { widths }));
                    l
                })
            });
            (prop_oneof![classify, segment], 1usize..100, any::<bool>(), 0u32..10).prop_map(
                |(levels, cap, knn, fpd)| {
                    let mut bp = NetworkBlueprint::new(levels);
                    bp.group_cap = cap;
                    bp.grouping = if knn { Grouping::Knn } else { Grouping::Ball };
                    if bp.head == Head::Segmentation {
                        bp.fp_dropout = f64::from(fpd) / 10.0;
                    }
                    bp
                },
            )
        }

        proptest! {
            #[test]
            fn render_then_parse_is_identity(bp in blueprint()) {
                let text = render_blueprint(&bp);
                let back = parse_blueprint(&text).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
                prop_assert_eq!(&back, &bp);
                prop_assert_eq!(render_blueprint(&back), text);
            }
        }
    }
}
