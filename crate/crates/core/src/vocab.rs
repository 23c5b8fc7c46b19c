//! The finite vocabulary of elementary flow maps, exact closed-form word
//! evaluation, sentence composition, and the sentence text format.
//!
//! A word is one elementary flow map: a generator family plus sign, indices,
//! and a symbolic time tag (1 or √2). Indices are stored 0-based; the text
//! format is 1-based.

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Sign of a word's generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Pos,
    Neg,
}

impl Sign {
    pub fn flip(self) -> Sign {
        match self {
            Sign::Pos => Sign::Neg,
            Sign::Neg => Sign::Pos,
        }
    }

    pub fn factor<F: Scalar>(self) -> F {
        match self {
            Sign::Pos => F::one(),
            Sign::Neg => -F::one(),
        }
    }

    /// Sign of a real coefficient; zero maps to `Pos`.
    pub fn of<F: Scalar>(v: F) -> Sign {
        if v < F::zero() {
            Sign::Neg
        } else {
            Sign::Pos
        }
    }

    fn symbol(self) -> char {
        match self {
            Sign::Pos => '+',
            Sign::Neg => '-',
        }
    }
}

/// Symbolic flow time: exactly 1 or √2, materialized only at evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tau {
    One,
    Sqrt2,
}

impl Tau {
    pub fn value<F: Scalar>(self) -> F {
        match self {
            Tau::One => F::one(),
            Tau::Sqrt2 => F::SQRT_2(),
        }
    }

    fn symbol(self) -> char {
        match self {
            Tau::One => '1',
            Tau::Sqrt2 => 's',
        }
    }
}

/// Generator family and indices of an elementary flow, without sign or time.
///
/// * `Translate { axis }` — constant field `e_axis`.
/// * `Linear { row, col }` — linear field `E_{row,col} x` (reads coordinate
///   `col`, writes coordinate `row`).
/// * `NegPart { axis }` — field equal to `x_axis` where negative, 0 elsewhere.
/// * `PosPart { axis }` — field equal to `x_axis` where nonnegative, 0 elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    Translate { axis: u32 },
    Linear { row: u32, col: u32 },
    NegPart { axis: u32 },
    PosPart { axis: u32 },
}

impl Basis {
    /// Largest 0-based coordinate index the generator touches.
    pub fn max_index(&self) -> u32 {
        match *self {
            Basis::Translate { axis } | Basis::NegPart { axis } | Basis::PosPart { axis } => axis,
            Basis::Linear { row, col } => row.max(col),
        }
    }

    /// Applies the exact time-`t` flow of this generator in place.
    ///
    /// All four families integrate in closed form for arbitrary real `t`,
    /// so no numerical stepping is involved:
    /// translations shift, diagonal linear flows scale by `e^t`, off-diagonal
    /// linear flows are the nilpotent shear `I + t·E`, and the leaky
    /// generators scale one half-line of a coordinate by `e^t`.
    pub fn apply_flow<F: Scalar>(&self, t: F, x: &mut [F]) {
        match *self {
            Basis::Translate { axis } => {
                let i = axis as usize;
                x[i] = x[i] + t;
            }
            Basis::Linear { row, col } => {
                let (i, j) = (row as usize, col as usize);
                if i == j {
                    x[i] = x[i] * t.exp();
                } else {
                    x[i] = x[i] + t * x[j];
                }
            }
            Basis::NegPart { axis } => {
                let i = axis as usize;
                if x[i] < F::zero() {
                    x[i] = x[i] * t.exp();
                }
            }
            Basis::PosPart { axis } => {
                let i = axis as usize;
                if x[i] >= F::zero() {
                    x[i] = x[i] * t.exp();
                }
            }
        }
    }

    /// Value of the generator field at a point.
    pub fn field<F: Scalar>(&self, x: &[F], out: &mut [F]) {
        match *self {
            Basis::Translate { axis } => out[axis as usize] = out[axis as usize] + F::one(),
            Basis::Linear { row, col } => {
                out[row as usize] = out[row as usize] + x[col as usize]
            }
            Basis::NegPart { axis } => {
                let i = axis as usize;
                if x[i] < F::zero() {
                    out[i] = out[i] + x[i];
                }
            }
            Basis::PosPart { axis } => {
                let i = axis as usize;
                if x[i] >= F::zero() {
                    out[i] = out[i] + x[i];
                }
            }
        }
    }
}

/// One elementary flow map from the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Word {
    pub basis: Basis,
    pub sign: Sign,
    pub tau: Tau,
}

impl Word {
    pub fn new(basis: Basis, sign: Sign, tau: Tau) -> Word {
        Word { basis, sign, tau }
    }

    /// Signed evaluation time `±τ`.
    pub fn signed_time<F: Scalar>(&self) -> F {
        self.sign.factor::<F>() * self.tau.value::<F>()
    }

    /// The sentence-format token for this word, e.g. `L-1.2@s`.
    pub fn token(&self) -> String {
        let f = match self.basis {
            Basis::Translate { .. } => 'T',
            Basis::Linear { .. } => 'L',
            Basis::NegPart { .. } => 'N',
            Basis::PosPart { .. } => 'P',
        };
        let idx = match self.basis {
            Basis::Translate { axis } | Basis::NegPart { axis } | Basis::PosPart { axis } => {
                format!("{}", axis + 1)
            }
            Basis::Linear { row, col } => format!("{}.{}", row + 1, col + 1),
        };
        format!("{}{}{}@{}", f, self.sign.symbol(), idx, self.tau.symbol())
    }
}

/// Enumerates the full vocabulary for ambient dimension `d`.
///
/// Every word appears exactly once; the cardinality is `4d² + 12d`
/// (2 signs × 2 times × (d² linear + d translation + 2d leaky generators)).
/// Order is deterministic: translations, then linear generators row-major,
/// then negative-part, then positive-part; within a generator, sign `+`
/// before `-` and time 1 before √2.
pub fn vocabulary(d: usize) -> Vec<Word> {
    assert!(d >= 1, "dimension must be positive");
    let d = d as u32;
    let mut bases = Vec::new();
    for i in 0..d {
        bases.push(Basis::Translate { axis: i });
    }
    for i in 0..d {
        for j in 0..d {
            bases.push(Basis::Linear { row: i, col: j });
        }
    }
    for i in 0..d {
        bases.push(Basis::NegPart { axis: i });
    }
    for i in 0..d {
        bases.push(Basis::PosPart { axis: i });
    }

    let mut words = Vec::with_capacity(bases.len() * 4);
    for basis in bases {
        for sign in [Sign::Pos, Sign::Neg] {
            for tau in [Tau::One, Tau::Sqrt2] {
                words.push(Word::new(basis, sign, tau));
            }
        }
    }
    words
}

/// Applies a word's exact closed form in place.
pub fn apply_word_in_place<F: Scalar>(w: &Word, x: &mut [F]) {
    w.basis.apply_flow(w.signed_time::<F>(), x);
}

/// Applies a word's exact closed form, returning the image point.
pub fn apply_word<F: Scalar>(w: &Word, x: &[F]) -> Vec<F> {
    let mut y = x.to_vec();
    apply_word_in_place(w, &mut y);
    y
}

/// The word realizing the inverse flow map: same generator, flipped sign.
pub fn inverse_word(w: &Word) -> Word {
    Word { sign: w.sign.flip(), ..*w }
}

/// A run of `count` consecutive copies of the same word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub word: Word,
    pub count: u32,
}

/// An ordered word sequence with left-to-right composition semantics:
/// the first word is applied first.
///
/// Compiled sentences contain long runs of repeated words, so the storage is
/// run-length encoded; the text format and iteration both expand runs, and a
/// run of `k` equal words evaluates in one step as the generator flow at `k`
/// times the signed word time (the closed forms make this exact).
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    dim: usize,
    runs: Vec<Run>,
    len: u64,
}

impl Sentence {
    pub fn new(dim: usize) -> Sentence {
        assert!(dim >= 1, "dimension must be positive");
        Sentence { dim, runs: Vec::new(), len: 0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total number of words (runs expanded).
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    /// Appends one word, validating its indices against the dimension.
    pub fn push(&mut self, word: Word) -> Result<()> {
        self.push_run(word, 1)
    }

    /// Appends `count` copies of a word.
    pub fn push_run(&mut self, word: Word, count: u32) -> Result<()> {
        if word.basis.max_index() as usize >= self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: word.basis.max_index() as usize + 1,
            });
        }
        if count == 0 {
            return Ok(());
        }
        self.len += count as u64;
        if let Some(last) = self.runs.last_mut() {
            if last.word == word {
                last.count += count;
                return Ok(());
            }
        }
        self.runs.push(Run { word, count });
        Ok(())
    }

    /// Appends another sentence of the same dimension.
    pub fn extend(&mut self, other: &Sentence) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        for run in &other.runs {
            self.push_run(run.word, run.count)?;
        }
        Ok(())
    }

    /// Iterates over the expanded word sequence.
    pub fn iter(&self) -> impl Iterator<Item = Word> + '_ {
        self.runs
            .iter()
            .flat_map(|r| std::iter::repeat_n(r.word, r.count as usize))
    }

    /// Applies the sentence in place; the empty sentence is the identity.
    ///
    /// Consecutive words with the same generator commute, so their times are
    /// summed and the closed form applied once. This evaluates the same real
    /// map as the word-by-word fold but stays well-conditioned on the long
    /// forward/backward power runs the time expansion produces, whose
    /// intermediate states would otherwise leave the range of the float
    /// type.
    pub fn apply_in_place<F: Scalar>(&self, x: &mut [F]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        let mut k = 0;
        while k < self.runs.len() {
            let basis = self.runs[k].word.basis;
            let mut t = F::zero();
            while k < self.runs.len() && self.runs[k].word.basis == basis {
                let run = &self.runs[k];
                t = t + run.word.signed_time::<F>() * F::from_u32(run.count).unwrap();
                k += 1;
            }
            basis.apply_flow(t, x);
        }
        Ok(())
    }

    /// Applies the sentence, returning the image point.
    pub fn apply<F: Scalar>(&self, x: &[F]) -> Result<Vec<F>> {
        let mut y = x.to_vec();
        self.apply_in_place(&mut y)?;
        Ok(y)
    }

    /// Applies the sentence strictly word by word, without collapsing runs.
    /// Used by tests to cross-check the run-collapsed evaluation.
    pub fn apply_word_by_word<F: Scalar>(&self, x: &[F]) -> Result<Vec<F>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        let mut y = x.to_vec();
        for w in self.iter() {
            apply_word_in_place(&w, &mut y);
        }
        Ok(y)
    }
}

/// Applies a sentence to a point (left-to-right composition).
pub fn apply_sentence<F: Scalar>(s: &Sentence, x: &[F]) -> Result<Vec<F>> {
    s.apply(x)
}

const TOKENS_PER_LINE: usize = 16;

/// Formats a sentence in the bit-exact text format: a `#dim d` header line
/// followed by whitespace-separated tokens, 16 per line, no trailing newline.
pub fn format_sentence(s: &Sentence) -> String {
    let mut out = format!("#dim {}", s.dim());
    let mut col = TOKENS_PER_LINE; // force a newline before the first token
    for w in s.iter() {
        if col == TOKENS_PER_LINE {
            out.push('\n');
            col = 0;
        } else {
            out.push(' ');
        }
        out.push_str(&w.token());
        col += 1;
    }
    out
}

/// Parses the sentence text format.
///
/// Grammar: first line `#dim <d>`; tokens `<F><sign><idx>@<tau>` with
/// `F ∈ {T,L,N,P}`, sign `+`/`-`, `idx` either `<i>` or `<i>.<j>` (1-based),
/// and tau `1` or `s` (√2). Lines after the header starting with `#` are
/// comments. Errors carry 1-based line and column positions.
pub fn parse_sentence(text: &str) -> Result<Sentence> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(1, 1, "empty input, missing #dim header"))?;
    let dim = parse_header(header)?;
    let mut sentence = Sentence::new(dim);

    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim_start().starts_with('#') {
            continue;
        }
        let mut col = 0usize;
        for piece in line.split_whitespace() {
            // Column of this token within the raw line, 1-based.
            col = line[col..].find(piece).map(|p| col + p).unwrap_or(col);
            let word = parse_token(piece, lineno + 1, col + 1, dim)?;
            sentence.push(word).map_err(|_| {
                Error::parse(lineno + 1, col + 1, format!("index out of range for dim {dim}: {piece}"))
            })?;
            col += piece.len();
        }
    }
    Ok(sentence)
}

fn parse_header(line: &str) -> Result<usize> {
    let rest = line
        .strip_prefix("#dim")
        .ok_or_else(|| Error::parse(1, 1, "missing #dim header"))?;
    let dim: usize = rest
        .trim()
        .parse()
        .map_err(|_| Error::parse(1, 6, format!("invalid dimension {:?}", rest.trim())))?;
    if dim == 0 {
        return Err(Error::parse(1, 6, "dimension must be positive"));
    }
    Ok(dim)
}

fn parse_token(tok: &str, line: usize, col: usize, dim: usize) -> Result<Word> {
    let bad = |msg: &str| Error::parse(line, col, format!("{msg}: {tok:?}"));
    let mut chars = tok.chars();
    let family = chars.next().ok_or_else(|| bad("empty token"))?;
    let sign = match chars.next() {
        Some('+') => Sign::Pos,
        Some('-') => Sign::Neg,
        _ => return Err(bad("expected sign '+' or '-'")),
    };
    let rest: String = chars.collect();
    let (idx_str, tau_str) = rest
        .split_once('@')
        .ok_or_else(|| bad("expected '@<tau>' suffix"))?;
    let tau = match tau_str {
        "1" => Tau::One,
        "s" => Tau::Sqrt2,
        _ => return Err(bad("tau must be '1' or 's'")),
    };
    let parse_idx = |s: &str| -> Result<u32> {
        let i: u32 = s.parse().map_err(|_| bad("invalid index"))?;
        if i == 0 || i as usize > dim {
            return Err(Error::parse(
                line,
                col,
                format!("index {i} out of range 1..={dim} in {tok:?}"),
            ));
        }
        Ok(i - 1)
    };
    let basis = match family {
        'L' => {
            let (r, c) = idx_str
                .split_once('.')
                .ok_or_else(|| bad("linear token needs '<i>.<j>' indices"))?;
            Basis::Linear { row: parse_idx(r)?, col: parse_idx(c)? }
        }
        'T' | 'N' | 'P' => {
            if idx_str.contains('.') {
                return Err(bad("only linear tokens take '<i>.<j>' indices"));
            }
            let axis = parse_idx(idx_str)?;
            match family {
                'T' => Basis::Translate { axis },
                'N' => Basis::NegPart { axis },
                _ => Basis::PosPart { axis },
            }
        }
        _ => return Err(bad("family must be one of T, L, N, P")),
    };
    Ok(Word::new(basis, sign, tau))
}
