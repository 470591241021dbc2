//! Gate-level netlist IR and a parser for a flat structural-Verilog subset.
//!
//! Accepted grammar, one module per source:
//!
//! ```text
//! module NAME ( [input|output] port, ... );
//!   input a, b;  output y;  wire w1, w2;
//!   and g1 (w1, a, b);                 // positional: output first
//!   NAND2X1 U7 (.A(a), .B(w1), .Y(y)); // named pins, via CellLibrary
//! endmodule
//! ```
//!
//! Wire ids are dense and assigned in class order: primary inputs, then
//! internal wires, then primary outputs; inside each class by first
//! appearance among the declarations. Ports without an explicit direction
//! are inputs when no gate drives them and outputs otherwise.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Gate vocabulary. `None` only ever appears as locality padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GateKind {
    And,
    Nand,
    Or,
    Nor,
    Xor,
    Xnor,
    Inv,
    Buf,
    Dff,
    Mux,
    None,
}

impl GateKind {
    /// Canonical vocabulary order; feature slots follow it.
    pub const VOCAB: [GateKind; 11] = [
        GateKind::And,
        GateKind::Nand,
        GateKind::Or,
        GateKind::Nor,
        GateKind::Xor,
        GateKind::Xnor,
        GateKind::Inv,
        GateKind::Buf,
        GateKind::Dff,
        GateKind::Mux,
        GateKind::None,
    ];

    pub const VOCAB_SIZE: usize = Self::VOCAB.len();

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::And => "AND",
            GateKind::Nand => "NAND",
            GateKind::Or => "OR",
            GateKind::Nor => "NOR",
            GateKind::Xor => "XOR",
            GateKind::Xnor => "XNOR",
            GateKind::Inv => "INV",
            GateKind::Buf => "BUF",
            GateKind::Dff => "DFF",
            GateKind::Mux => "MUX",
            GateKind::None => "NONE",
        }
    }

    pub fn from_name(name: &str) -> Option<GateKind> {
        Self::VOCAB.iter().copied().find(|k| k.name().eq_ignore_ascii_case(name))
    }

    /// Keyword used when pretty-printing a gate of this kind.
    pub fn keyword(self) -> &'static str {
        match self {
            GateKind::And => "and",
            GateKind::Nand => "nand",
            GateKind::Or => "or",
            GateKind::Nor => "nor",
            GateKind::Xor => "xor",
            GateKind::Xnor => "xnor",
            GateKind::Inv => "not",
            GateKind::Buf => "buf",
            GateKind::Dff => "dff",
            GateKind::Mux => "mux",
            GateKind::None => "none",
        }
    }

    fn arity_ok(self, n: usize) -> bool {
        match self {
            GateKind::Inv | GateKind::Buf | GateKind::Dff => n == 1,
            GateKind::Mux => n == 3,
            GateKind::None => false,
            _ => n >= 2,
        }
    }

    fn arity_text(self) -> &'static str {
        match self {
            GateKind::Inv | GateKind::Buf | GateKind::Dff => "exactly 1",
            GateKind::Mux => "exactly 3",
            _ => "at least 2",
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type WireId = usize;
pub type GateId = usize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    pub id: GateId,
    pub kind: GateKind,
    pub inputs: Vec<WireId>,
    pub output: WireId,
    pub instance_name: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Netlist {
    pub module_name: String,
    wire_names: Vec<String>,
    wire_lookup: HashMap<String, WireId>,
    pub gates: Vec<Gate>,
    pub primary_inputs: Vec<WireId>,
    pub primary_outputs: Vec<WireId>,
}

impl Netlist {
    pub fn wire_count(&self) -> usize {
        self.wire_names.len()
    }

    pub fn gate_count(&self) -> usize {
        self.gates.len()
    }

    pub fn wire_name(&self, id: WireId) -> &str {
        &self.wire_names[id]
    }

    pub fn wire_names(&self) -> &[String] {
        &self.wire_names
    }

    pub fn wire_id(&self, name: &str) -> Option<WireId> {
        self.wire_lookup.get(name).copied()
    }

    /// Driver gate of every wire, `None` for undriven wires.
    pub fn drivers(&self) -> Vec<Option<GateId>> {
        let mut out = vec![None; self.wire_count()];
        for g in &self.gates {
            out[g.output] = Some(g.id);
        }
        out
    }

    /// Builds a netlist directly from parts. Used by generators; wire
    /// order is taken as given.
    pub fn from_parts(
        module_name: impl Into<String>,
        wire_names: Vec<String>,
        gates: Vec<Gate>,
        primary_inputs: Vec<WireId>,
        primary_outputs: Vec<WireId>,
    ) -> Result<Netlist, ParseError> {
        let mut wire_lookup = HashMap::with_capacity(wire_names.len());
        for (i, n) in wire_names.iter().enumerate() {
            if wire_lookup.insert(n.clone(), i).is_some() {
                return Err(ParseError::new(
                    ParseErrorKind::Syntax(format!("duplicate wire name `{n}`")),
                    0,
                    0,
                ));
            }
        }
        let mut driven = vec![false; wire_names.len()];
        for (i, g) in gates.iter().enumerate() {
            if g.id != i || g.output >= wire_names.len() || g.inputs.iter().any(|&w| w >= wire_names.len()) {
                return Err(ParseError::new(
                    ParseErrorKind::UndeclaredWire(g.instance_name.clone()),
                    0,
                    0,
                ));
            }
            if std::mem::replace(&mut driven[g.output], true) {
                return Err(ParseError::new(
                    ParseErrorKind::MultipleDrivers(wire_names[g.output].clone()),
                    0,
                    0,
                ));
            }
        }
        Ok(Netlist {
            module_name: module_name.into(),
            wire_names,
            wire_lookup,
            gates,
            primary_inputs,
            primary_outputs,
        })
    }
}

/// Canonical structural-Verilog rendering. Reparsing yields an identical
/// netlist.
impl fmt::Display for Netlist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ports: Vec<&str> = self
            .primary_inputs
            .iter()
            .chain(&self.primary_outputs)
            .map(|&w| self.wire_name(w))
            .collect();
        writeln!(f, "module {}({});", self.module_name, ports.join(", "))?;
        let is_port: HashSet<WireId> =
            self.primary_inputs.iter().chain(&self.primary_outputs).copied().collect();
        let list = |ids: &[WireId]| ids.iter().map(|&w| self.wire_name(w)).collect::<Vec<_>>().join(", ");
        if !self.primary_inputs.is_empty() {
            writeln!(f, "  input {};", list(&self.primary_inputs))?;
        }
        if !self.primary_outputs.is_empty() {
            writeln!(f, "  output {};", list(&self.primary_outputs))?;
        }
        let internal: Vec<WireId> = (0..self.wire_count()).filter(|w| !is_port.contains(w)).collect();
        if !internal.is_empty() {
            writeln!(f, "  wire {};", list(&internal))?;
        }
        for g in &self.gates {
            let mut pins = vec![self.wire_name(g.output)];
            pins.extend(g.inputs.iter().map(|&w| self.wire_name(w)));
            writeln!(f, "  {} {}({});", g.kind.keyword(), g.instance_name, pins.join(", "))?;
        }
        writeln!(f, "endmodule")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("wire `{0}` has more than one driver")]
    MultipleDrivers(String),
    #[error("undeclared wire `{0}`")]
    UndeclaredWire(String),
    #[error("gate `{name}` of kind {kind} needs {expected} inputs, got {got}")]
    Arity {
        name: String,
        kind: GateKind,
        expected: &'static str,
        got: usize,
    },
    #[error("{0}")]
    Syntax(String),
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub column: usize,
}

impl ParseError {
    fn new(kind: ParseErrorKind, line: usize, column: usize) -> Self {
        ParseError { kind, line, column }
    }
}

/// Maps vendor cell names onto the gate vocabulary.
///
/// Lookups try the exact name first, then the name with a trailing drive
/// strength suffix (`X1`, `_4`, ...) and fan-in digits stripped, so
/// `NAND3X1` resolves through a `NAND` entry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellLibrary {
    pub cells: BTreeMap<String, GateKind>,
    /// Pin names treated as the cell output in named connections.
    pub output_pins: Vec<String>,
    /// Pins dropped entirely (clocks, resets, enables of flops).
    pub ignored_pins: Vec<String>,
}

impl Default for CellLibrary {
    fn default() -> Self {
        let mut cells = BTreeMap::new();
        let aliases: [(&str, GateKind); 22] = [
            ("and", GateKind::And),
            ("nand", GateKind::Nand),
            ("or", GateKind::Or),
            ("nor", GateKind::Nor),
            ("xor", GateKind::Xor),
            ("xnor", GateKind::Xnor),
            ("not", GateKind::Inv),
            ("inv", GateKind::Inv),
            ("buf", GateKind::Buf),
            ("dff", GateKind::Dff),
            ("mux", GateKind::Mux),
            ("mux2", GateKind::Mux),
            ("dffpos", GateKind::Dff),
            ("dffneg", GateKind::Dff),
            ("dffsr", GateKind::Dff),
            ("dffr", GateKind::Dff),
            ("sdff", GateKind::Dff),
            ("buff", GateKind::Buf),
            ("xnr", GateKind::Xnor),
            ("xo", GateKind::Xor),
            ("an", GateKind::And),
            ("nr", GateKind::Nor),
        ];
        for (name, kind) in aliases {
            cells.insert(name.to_string(), kind);
        }
        CellLibrary {
            cells,
            output_pins: ["Y", "Z", "ZN", "Q", "QN", "O", "OUT"].iter().map(|s| s.to_string()).collect(),
            ignored_pins: ["CLK", "CK", "CP", "C", "R", "S", "RN", "SN", "E", "EN"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl CellLibrary {
    pub fn resolve(&self, cell: &str) -> Option<GateKind> {
        let lower = cell.to_ascii_lowercase();
        if let Some(k) = self.cells.get(&lower) {
            return Some(*k);
        }
        // strip drive strength (X1, X2, _1, ...) then fan-in digits
        let mut base = lower.as_str();
        if let Some(pos) = base.rfind(['x', '_']) {
            if pos > 0 && base[pos + 1..].chars().all(|c| c.is_ascii_digit()) && pos + 1 < base.len() {
                base = &base[..pos];
            }
        }
        let base = base.trim_end_matches(|c: char| c.is_ascii_digit());
        self.cells.get(base).copied()
    }

    fn is_output_pin(&self, pin: &str) -> bool {
        self.output_pins.iter().any(|p| p.eq_ignore_ascii_case(pin))
    }

    fn is_ignored_pin(&self, pin: &str) -> bool {
        self.ignored_pins.iter().any(|p| p.eq_ignore_ascii_case(pin))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Punct(char),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

struct Cursor {
    chars: Vec<char>,
    i: usize,
    line: usize,
    col: usize,
}

impl Cursor {
    fn peek(&self, ahead: usize) -> Option<char> {
        self.chars.get(self.i + ahead).copied()
    }

    fn bump(&mut self) -> char {
        let c = self.chars[self.i];
        self.i += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        c
    }
}

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut cur = Cursor { chars: text.chars().collect(), i: 0, line: 1, col: 1 };
    while let Some(c) = cur.peek(0) {
        let (line, column) = (cur.line, cur.col);
        if c.is_whitespace() {
            cur.bump();
        } else if c == '/' && cur.peek(1) == Some('/') {
            while cur.peek(0).is_some_and(|c| c != '\n') {
                cur.bump();
            }
        } else if c == '/' && cur.peek(1) == Some('*') {
            cur.bump();
            cur.bump();
            loop {
                match (cur.peek(0), cur.peek(1)) {
                    (None, _) => {
                        return Err(ParseError::new(
                            ParseErrorKind::Syntax("unterminated block comment".into()),
                            line,
                            column,
                        ))
                    }
                    (Some('*'), Some('/')) => {
                        cur.bump();
                        cur.bump();
                        break;
                    }
                    _ => {
                        cur.bump();
                    }
                }
            }
        } else if c == '\\' {
            // escaped identifier runs to the next whitespace
            cur.bump();
            let mut s = String::new();
            while cur.peek(0).is_some_and(|c| !c.is_whitespace()) {
                s.push(cur.bump());
            }
            if s.is_empty() {
                return Err(ParseError::new(ParseErrorKind::Syntax("empty escaped identifier".into()), line, column));
            }
            out.push(Token { tok: Tok::Ident(s), line, column });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while cur.peek(0).is_some_and(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$') {
                s.push(cur.bump());
            }
            // bit-blasted names like n[3] keep their index
            if cur.peek(0) == Some('[') {
                let mut j = 1;
                while cur.peek(j).is_some_and(|c| c.is_ascii_digit()) {
                    j += 1;
                }
                if j > 1 && cur.peek(j) == Some(']') {
                    for _ in 0..=j {
                        s.push(cur.bump());
                    }
                }
            }
            out.push(Token { tok: Tok::Ident(s), line, column });
        } else if "();,.".contains(c) {
            cur.bump();
            out.push(Token { tok: Tok::Punct(c), line, column });
        } else {
            return Err(ParseError::new(
                ParseErrorKind::Syntax(format!("unexpected character `{c}`")),
                line,
                column,
            ));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Dir {
    Unspecified,
    Input,
    Output,
    Wire,
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    lib: &'a CellLibrary,
}

struct PendingGate {
    kind: GateKind,
    name: String,
    output: (String, usize, usize),
    inputs: Vec<(String, usize, usize)>,
}

impl Parser<'_> {
    fn eof_pos(&self) -> (usize, usize) {
        self.toks.last().map(|t| (t.line, t.column)).unwrap_or((1, 1))
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let (l, c) = match self.toks.get(self.pos) {
            Some(t) => (t.line, t.column),
            None => self.eof_pos(),
        };
        Err(ParseError::new(ParseErrorKind::Syntax(msg.into()), l, c))
    }

    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn next_ident(&mut self, what: &str) -> Result<(String, usize, usize), ParseError> {
        match self.toks.get(self.pos) {
            Some(Token { tok: Tok::Ident(s), line, column }) => {
                let r = (s.clone(), *line, *column);
                self.pos += 1;
                Ok(r)
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    fn expect(&mut self, p: char) -> Result<(), ParseError> {
        match self.toks.get(self.pos) {
            Some(Token { tok: Tok::Punct(c), .. }) if *c == p => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err(format!("expected `{p}`")),
        }
    }

    fn eat(&mut self, p: char) -> bool {
        if matches!(self.peek(), Some(Token { tok: Tok::Punct(c), .. }) if *c == p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident_list(&mut self) -> Result<Vec<(String, usize, usize)>, ParseError> {
        let mut names = vec![self.next_ident("identifier")?];
        while self.eat(',') {
            names.push(self.next_ident("identifier")?);
        }
        self.expect(';')?;
        Ok(names)
    }

    fn connection(&mut self) -> Result<(Option<String>, (String, usize, usize)), ParseError> {
        if self.eat('.') {
            let (pin, ..) = self.next_ident("pin name")?;
            self.expect('(')?;
            let net = self.next_ident("net name")?;
            self.expect(')')?;
            Ok((Some(pin), net))
        } else {
            Ok((None, self.next_ident("net name")?))
        }
    }

    fn instance(&mut self, cell: (String, usize, usize)) -> Result<PendingGate, ParseError> {
        let (cell_name, line, column) = cell;
        let kind = self
            .lib
            .resolve(&cell_name)
            .ok_or_else(|| ParseError::new(ParseErrorKind::UnknownPrimitive(cell_name.clone()), line, column))?;
        let (name, ..) = self.next_ident("instance name")?;
        self.expect('(')?;
        let mut conns = vec![self.connection()?];
        while self.eat(',') {
            conns.push(self.connection()?);
        }
        self.expect(')')?;
        self.expect(';')?;

        let named = conns.iter().filter(|(p, _)| p.is_some()).count();
        let (output, inputs) = if named == 0 {
            let mut it = conns.into_iter().map(|(_, n)| n);
            let out = it.next().expect("at least one connection");
            (out, it.collect::<Vec<_>>())
        } else if named == conns.len() {
            let mut output = None;
            let mut inputs = Vec::new();
            for (pin, net) in conns {
                let pin = pin.expect("all named");
                if self.lib.is_output_pin(&pin) {
                    if output.replace(net).is_some() {
                        return Err(ParseError::new(
                            ParseErrorKind::Syntax(format!("instance `{name}` has more than one output pin")),
                            line,
                            column,
                        ));
                    }
                } else if !self.lib.is_ignored_pin(&pin) || kind != GateKind::Dff {
                    inputs.push(net);
                }
            }
            match output {
                Some(o) => (o, inputs),
                None => {
                    return Err(ParseError::new(
                        ParseErrorKind::Syntax(format!("instance `{name}` has no output pin")),
                        line,
                        column,
                    ))
                }
            }
        } else {
            return Err(ParseError::new(
                ParseErrorKind::Syntax(format!("instance `{name}` mixes named and positional pins")),
                line,
                column,
            ));
        };
        if !kind.arity_ok(inputs.len()) {
            return Err(ParseError::new(
                ParseErrorKind::Arity { name, kind, expected: kind.arity_text(), got: inputs.len() },
                line,
                column,
            ));
        }
        Ok(PendingGate { kind, name, output, inputs })
    }
}

pub fn parse_netlist(text: &str) -> Result<Netlist, ParseError> {
    parse_netlist_with(text, &CellLibrary::default())
}

pub fn parse_netlist_with(text: &str, lib: &CellLibrary) -> Result<Netlist, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, pos: 0, lib };

    match p.next_ident("`module`")? {
        (kw, ..) if kw == "module" => {}
        (_, l, c) => return Err(ParseError::new(ParseErrorKind::Syntax("expected `module`".into()), l, c)),
    }
    let (module_name, ..) = p.next_ident("module name")?;

    // name -> (direction, first-appearance order)
    let mut decl: HashMap<String, (Dir, usize)> = HashMap::new();
    let mut order = 0usize;
    let mut declare = |decl: &mut HashMap<String, (Dir, usize)>, name: &str, dir: Dir| {
        let e = decl.entry(name.to_string()).or_insert_with(|| {
            order += 1;
            (Dir::Unspecified, order)
        });
        if matches!(dir, Dir::Input | Dir::Output) && matches!(e.0, Dir::Unspecified | Dir::Wire) {
            e.0 = dir;
        }
    };

    let mut port_names = Vec::new();
    if p.eat('(') {
        if !p.eat(')') {
            loop {
                let mut dir = Dir::Unspecified;
                let (mut name, ..) = p.next_ident("port")?;
                if name == "input" || name == "output" {
                    dir = if name == "input" { Dir::Input } else { Dir::Output };
                    name = p.next_ident("port")?.0;
                    if name == "wire" {
                        name = p.next_ident("port")?.0;
                    }
                }
                declare(&mut decl, &name, dir);
                port_names.push(name);
                if p.eat(')') {
                    break;
                }
                p.expect(',')?;
            }
        }
    }
    p.expect(';')?;

    let mut pending = Vec::new();
    loop {
        let Some(tok) = p.peek().cloned() else {
            return p.err("missing `endmodule`");
        };
        let Tok::Ident(word) = &tok.tok else {
            return p.err("expected declaration or instance");
        };
        match word.as_str() {
            "endmodule" => {
                p.pos += 1;
                break;
            }
            "input" | "output" | "wire" => {
                p.pos += 1;
                let dir = match word.as_str() {
                    "input" => Dir::Input,
                    "output" => Dir::Output,
                    _ => Dir::Wire,
                };
                for (n, ..) in p.ident_list()? {
                    declare(&mut decl, &n, dir);
                }
            }
            "assign" | "always" | "reg" | "initial" | "module" => {
                return p.err(format!("unsupported construct `{word}`"));
            }
            _ => {
                p.pos += 1;
                let g = p.instance((word.clone(), tok.line, tok.column))?;
                pending.push(g);
            }
        }
    }
    if p.pos < p.toks.len() {
        return p.err("trailing input after `endmodule`");
    }

    // resolve wire references and the single-driver rule
    let mut driven: HashMap<&str, ()> = HashMap::new();
    for g in &pending {
        for (n, l, c) in std::iter::once(&g.output).chain(&g.inputs) {
            if !decl.contains_key(n) {
                return Err(ParseError::new(ParseErrorKind::UndeclaredWire(n.clone()), *l, *c));
            }
        }
        let (o, l, c) = &g.output;
        if driven.insert(o.as_str(), ()).is_some() {
            return Err(ParseError::new(ParseErrorKind::MultipleDrivers(o.clone()), *l, *c));
        }
    }

    let class_of = |name: &str, dir: Dir| -> u8 {
        match dir {
            Dir::Input => 0,
            Dir::Output => 2,
            Dir::Wire => 1,
            Dir::Unspecified => {
                if port_names.iter().any(|p| p == name) {
                    if driven.contains_key(name) {
                        2
                    } else {
                        0
                    }
                } else {
                    1
                }
            }
        }
    };
    let mut ordered: Vec<(u8, usize, &String)> =
        decl.iter().map(|(n, &(dir, ord))| (class_of(n, dir), ord, n)).collect();
    ordered.sort();

    let mut wire_names = Vec::with_capacity(ordered.len());
    let mut wire_lookup = HashMap::with_capacity(ordered.len());
    let mut primary_inputs = Vec::new();
    let mut primary_outputs = Vec::new();
    for (id, (class, _, name)) in ordered.into_iter().enumerate() {
        wire_names.push(name.clone());
        wire_lookup.insert(name.clone(), id);
        match class {
            0 => primary_inputs.push(id),
            2 => primary_outputs.push(id),
            _ => {}
        }
    }

    let gates = pending
        .into_iter()
        .enumerate()
        .map(|(id, g)| Gate {
                id,
                kind: g.kind,
                inputs: g.inputs.iter().map(|(n, ..)| wire_lookup[n]).collect(),
                output: wire_lookup[&g.output.0],
                instance_name: g.name,
        })
        .collect();

    Ok(Netlist { module_name, wire_names, wire_lookup, gates, primary_inputs, primary_outputs })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WireLabel {
    NonTrojan,
    Trojan,
}

impl WireLabel {
    pub fn class(self) -> u8 {
        match self {
            WireLabel::NonTrojan => 0,
            WireLabel::Trojan => 1,
        }
    }
}

/// Ground truth per wire; total over the netlist's wires.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    labels: Vec<WireLabel>,
}

impl LabelMap {
    pub fn all_clean(wire_count: usize) -> Self {
        LabelMap { labels: vec![WireLabel::NonTrojan; wire_count] }
    }

    pub fn from_trojan_wires(wire_count: usize, trojans: impl IntoIterator<Item = WireId>) -> Self {
        let mut m = Self::all_clean(wire_count);
        for w in trojans {
            m.labels[w] = WireLabel::Trojan;
        }
        m
    }

    pub fn get(&self, wire: WireId) -> WireLabel {
        self.labels[wire]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn trojan_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == WireLabel::Trojan).count()
    }

    pub fn trojan_wires(&self) -> impl Iterator<Item = WireId> + '_ {
        self.labels.iter().enumerate().filter(|(_, l)| **l == WireLabel::Trojan).map(|(i, _)| i)
    }

    /// Per-wire classes (0 clean, 1 Trojan) in wire-id order.
    pub fn classes(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.class()).collect()
    }

    /// Renders the label file: Trojan wire names, one per line.
    pub fn to_text(&self, netlist: &Netlist) -> String {
        let mut s = String::new();
        for w in self.trojan_wires() {
            s.push_str(netlist.wire_name(w));
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum LabelError {
    #[error("line {line}: unknown wire name `{name}`")]
    UnknownWireName { line: usize, name: String },
}

pub fn parse_labels(text: &str, netlist: &Netlist) -> Result<LabelMap, LabelError> {
    let mut map = LabelMap::all_clean(netlist.wire_count());
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let id = netlist
            .wire_id(line)
            .ok_or_else(|| LabelError::UnknownWireName { line: i + 1, name: line.to_string() })?;
        map.labels[id] = WireLabel::Trojan;
    }
    Ok(map)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetlistStats {
    pub module: String,
    pub wires: usize,
    pub gates: usize,
    pub primary_inputs: usize,
    pub primary_outputs: usize,
    /// Every real gate kind, including zero counts.
    pub gate_kinds: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trojan_wires: Option<usize>,
}

pub fn netlist_stats(netlist: &Netlist, labels: Option<&LabelMap>) -> NetlistStats {
    let mut gate_kinds: BTreeMap<String, usize> = GateKind::VOCAB
        .iter()
        .filter(|k| **k != GateKind::None)
        .map(|k| (k.name().to_string(), 0))
        .collect();
    for g in &netlist.gates {
        *gate_kinds.get_mut(g.kind.name()).expect("vocab kind") += 1;
    }
    NetlistStats {
        module: netlist.module_name.clone(),
        wires: netlist.wire_count(),
        gates: netlist.gate_count(),
        primary_inputs: netlist.primary_inputs.len(),
        primary_outputs: netlist.primary_outputs.len(),
        gate_kinds,
        trojan_wires: labels.map(LabelMap::trojan_count),
    }
}
