//! Sequence ingestion and context counting.
//!
//! For a lag set `S`, a window `(m, n)` and order `d`, the countable positions
//! are `t in [m + d + 1, n]` (1-based). `N_{m,n}(x_S, a)` counts positions with
//! `X_{t+j} = x_j` for `j in S` and `X_t = a`. Contexts are kept sparsely: only
//! contexts with a positive total are stored, in order of first occurrence.

use std::io::{Read, Write};
use std::path::Path;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::lags::LagSet;
use crate::model::Alphabet;

/// Observed sample `X_{1:n}` as alphabet indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolSequence {
    data: Vec<usize>,
    alphabet: Alphabet,
}

impl SymbolSequence {
    pub fn new(data: Vec<usize>, alphabet: Alphabet) -> Result<Self> {
        let na = alphabet.size();
        if let Some(pos) = data.iter().position(|&s| s >= na) {
            return Err(contract(format!(
                "symbol index {} at position {pos} outside alphabet of size {na}",
                data[pos]
            )));
        }
        Ok(Self { data, alphabet })
    }

    pub fn data(&self) -> &[usize] {
        &self.data
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Applies a symbol bijection `perm[old] = new`.
    pub fn relabeled(&self, perm: &[usize], alphabet: Alphabet) -> Result<Self> {
        Self::new(self.data.iter().map(|&s| perm[s]).collect(), alphabet)
    }

    /// One label per line, as written by `simulate`.
    pub fn write_lines<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = String::with_capacity(self.data.len() * 2);
        for &s in &self.data {
            buf.push_str(self.alphabet.label(s));
            buf.push('\n');
        }
        w.write_all(buf.as_bytes())?;
        Ok(())
    }
}

/// Packed representation of a context `x_S`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContextKey {
    /// Base-`|A|` integer, coordinate `i` weighted by `|A|^i`.
    Packed(u64),
    /// Used when `|S| log2 |A| > 64`.
    Wide(Box<[u32]>),
}

/// Encodes contexts over a fixed lag set.
#[derive(Clone, Debug)]
pub struct ContextCodec {
    base: usize,
    len: usize,
    /// `Some(powers)` when contexts fit in a `u64`.
    powers: Option<Vec<u64>>,
}

impl ContextCodec {
    pub fn new(base: usize, len: usize) -> Self {
        // packed iff base^len <= 2^64
        let mut powers = Vec::with_capacity(len);
        let mut p: u128 = 1;
        let mut fits = true;
        for _ in 0..len {
            powers.push(p as u64);
            p *= base as u128;
            if p > 1u128 << 64 {
                fits = false;
                break;
            }
        }
        Self {
            base,
            len,
            powers: fits.then_some(powers),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_packed(&self) -> bool {
        self.powers.is_some()
    }

    pub fn encode(&self, ctx: &[usize]) -> ContextKey {
        debug_assert_eq!(ctx.len(), self.len);
        match &self.powers {
            Some(p) => ContextKey::Packed(ctx.iter().zip(p).map(|(&s, &w)| s as u64 * w).sum()),
            None => ContextKey::Wide(ctx.iter().map(|&s| s as u32).collect()),
        }
    }

    pub fn decode(&self, key: &ContextKey) -> Vec<usize> {
        (0..self.len).map(|i| self.coord(key, i)).collect()
    }

    pub fn coord(&self, key: &ContextKey, pos: usize) -> usize {
        match key {
            ContextKey::Packed(v) => {
                let p = self.powers.as_ref().expect("packed codec")[pos];
                ((v / p) % self.base as u64) as usize
            }
            ContextKey::Wide(w) => w[pos] as usize,
        }
    }

    /// The context equal to `key` except at coordinate `pos`.
    pub fn replace(&self, key: &ContextKey, pos: usize, sym: usize) -> ContextKey {
        match key {
            ContextKey::Packed(v) => {
                let p = self.powers.as_ref().expect("packed codec")[pos];
                let old = (v / p) % self.base as u64;
                ContextKey::Packed(v - old * p + sym as u64 * p)
            }
            ContextKey::Wide(w) => {
                let mut w = w.clone();
                w[pos] = sym as u32;
                ContextKey::Wide(w)
            }
        }
    }

    /// Context of the lags `distances` read backwards from 0-based index `t0`.
    #[inline]
    pub(crate) fn key_at(&self, data: &[usize], t0: usize, distances: &[usize]) -> ContextKey {
        match &self.powers {
            Some(p) => {
                let mut v = 0u64;
                for (k, w) in distances.iter().zip(p) {
                    v += data[t0 - k] as u64 * w;
                }
                ContextKey::Packed(v)
            }
            None => ContextKey::Wide(distances.iter().map(|k| data[t0 - k] as u32).collect()),
        }
    }
}

/// Checks `n - m > d` and `n <= len`, returning the 0-based range of
/// countable positions.
pub(crate) fn countable_range(
    len: usize,
    m: usize,
    n: usize,
    d: usize,
) -> Result<std::ops::Range<usize>> {
    if n > len {
        return Err(contract(format!(
            "window end {n} exceeds sequence length {len}"
        )));
    }
    if n <= m || n - m <= d {
        return Err(Error::WindowTooShort { n, m, d });
    }
    Ok(m + d..n)
}

/// `N_{m,n}(x_S, a)` for every observed context.
#[derive(Clone, Debug)]
pub struct ContextCounts {
    lag_set: LagSet,
    window: (usize, usize),
    n_symbols: usize,
    codec: ContextCodec,
    index: FxHashMap<ContextKey, usize>,
    keys: Vec<ContextKey>,
    counts: Vec<u64>,
    totals: Vec<u64>,
}

/// Counts contexts over positions `t in [m + d + 1, n]` with `d = S.order()`.
pub fn count_contexts(
    seq: &SymbolSequence,
    lag_set: &LagSet,
    m: usize,
    n: usize,
) -> Result<ContextCounts> {
    let d = lag_set.order();
    let range = countable_range(seq.len(), m, n, d)?;
    let na = seq.alphabet().size();
    let codec = ContextCodec::new(na, lag_set.len());
    let dist = lag_set.distances();
    let data = seq.data();

    let mut index: FxHashMap<ContextKey, usize> = FxHashMap::default();
    let mut keys = Vec::new();
    let mut counts = Vec::new();
    let mut totals = Vec::new();
    for t0 in range {
        let key = codec.key_at(data, t0, dist);
        let id = match index.get(&key) {
            Some(&id) => id,
            None => {
                let id = keys.len();
                index.insert(key.clone(), id);
                keys.push(key);
                counts.extend(std::iter::repeat_n(0, na));
                totals.push(0);
                id
            }
        };
        counts[id * na + data[t0]] += 1;
        totals[id] += 1;
    }
    Ok(ContextCounts {
        lag_set: lag_set.clone(),
        window: (m, n),
        n_symbols: na,
        codec,
        index,
        keys,
        counts,
        totals,
    })
}

impl ContextCounts {
    pub fn lag_set(&self) -> &LagSet {
        &self.lag_set
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn codec(&self) -> &ContextCodec {
        &self.codec
    }

    /// Number of observed contexts.
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// `n - m - d`.
    pub fn total_positions(&self) -> u64 {
        let (m, n) = self.window;
        (n - m - self.lag_set.order()) as u64
    }

    pub fn id_of(&self, key: &ContextKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn lookup(&self, ctx: &[usize]) -> Option<usize> {
        if ctx.len() != self.codec.len() || ctx.iter().any(|&s| s >= self.n_symbols) {
            return None;
        }
        self.id_of(&self.codec.encode(ctx))
    }

    pub fn key(&self, id: usize) -> &ContextKey {
        &self.keys[id]
    }

    pub fn context(&self, id: usize) -> Vec<usize> {
        self.codec.decode(&self.keys[id])
    }

    /// `N(x_S, .)`.
    pub fn counts(&self, id: usize) -> &[u64] {
        &self.counts[id * self.n_symbols..(id + 1) * self.n_symbols]
    }

    /// `N̄(x_S)`.
    pub fn total(&self, id: usize) -> u64 {
        self.totals[id]
    }

    /// `N̄(x_S)` for any context, zero when unseen.
    pub fn total_of(&self, ctx: &[usize]) -> u64 {
        self.lookup(ctx).map_or(0, |id| self.totals[id])
    }

    pub fn p_hat(&self, id: usize) -> Vec<f64> {
        let tot = self.totals[id] as f64;
        self.counts(id).iter().map(|&c| c as f64 / tot).collect()
    }

    /// `p̂(. | x_S)`, or the uniform law when `x_S` was never observed.
    pub fn empirical_transition(&self, ctx: &[usize]) -> Vec<f64> {
        match self.lookup(ctx) {
            Some(id) => self.p_hat(id),
            None => vec![1.0 / self.n_symbols as f64; self.n_symbols],
        }
    }

    /// `P̂(x_S) = N̄(x_S) / (n - m - d)`.
    pub fn empirical_marginal(&self, ctx: &[usize]) -> f64 {
        self.total_of(ctx) as f64 / self.total_positions() as f64
    }

    /// Id of the context equal to `id`'s except `sym` at coordinate `pos`.
    pub fn sibling(&self, id: usize, pos: usize, sym: usize) -> Option<usize> {
        self.id_of(&self.codec.replace(&self.keys[id], pos, sym))
    }

    /// Writes `context,symbol,count` rows for every nonzero cell.
    pub fn write_csv<W: Write>(&self, alphabet: &Alphabet, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["context", "symbol", "count"])?;
        for id in 0..self.len() {
            let ctx = format_context(alphabet, &self.context(id));
            for (a, &c) in self.counts(id).iter().enumerate() {
                if c > 0 {
                    wr.write_record([ctx.as_str(), alphabet.label(a), &c.to_string()])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Space-separated symbol labels in lag-set order.
pub fn format_context(alphabet: &Alphabet, ctx: &[usize]) -> String {
    ctx.iter()
        .map(|&s| alphabet.label(s))
        .collect::<Vec<_>>()
        .join(" ")
}

/// `d_TV(p, q) = 1/2 sum |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Input layout of a sequence file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceFormat {
    /// Tokens separated by arbitrary whitespace.
    Whitespace,
    /// One token per line; blank lines are skipped.
    Lines,
    /// A single column of a CSV file.
    Csv { column: CsvColumn, header: bool },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsvColumn {
    Index(usize),
    Name(String),
}

/// Parses `"0,1"` or `"dry=0,rain=1"` into an alphabet whose labels are the
/// tokens expected in sequence files.
pub fn parse_symbol_table(spec: &str) -> Result<Alphabet> {
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (i, item) in spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .enumerate()
    {
        match item.split_once('=') {
            Some((tok, val)) => {
                let v: f64 = val
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad symbol value {val:?}")))?;
                labels.push(tok.trim().to_string());
                values.push(v);
            }
            None => {
                labels.push(item.to_string());
                values.push(item.parse().unwrap_or(i as f64));
            }
        }
    }
    Alphabet::with_labels(values, labels)
}

/// Sorted distinct tokens; numeric order when every token is a number.
fn infer_alphabet(tokens: &[(String, usize)]) -> Result<Alphabet> {
    let mut distinct: Vec<&str> = tokens.iter().map(|(t, _)| t.as_str()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let numeric: Option<Vec<f64>> = distinct.iter().map(|t| t.parse::<f64>().ok()).collect();
    match numeric {
        Some(mut pairs_v) => {
            let mut pairs: Vec<(f64, &str)> = pairs_v.drain(..).zip(distinct).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            Alphabet::with_labels(
                pairs.iter().map(|p| p.0).collect(),
                pairs.iter().map(|p| p.1.to_string()).collect(),
            )
        }
        None => Alphabet::with_labels(
            (0..distinct.len()).map(|i| i as f64).collect(),
            distinct.into_iter().map(String::from).collect(),
        ),
    }
}

/// Tokenizes `input` as `(token, 1-based line)` pairs.
fn tokenize<R: Read>(mut input: R, format: &SequenceFormat) -> Result<Vec<(String, usize)>> {
    let mut out = Vec::new();
    match format {
        SequenceFormat::Whitespace | SequenceFormat::Lines => {
            let mut s = String::new();
            input.read_to_string(&mut s)?;
            for (ln, line) in s.lines().enumerate() {
                match format {
                    SequenceFormat::Lines => {
                        let t = line.trim();
                        if !t.is_empty() {
                            out.push((t.to_string(), ln + 1));
                        }
                    }
                    _ => out.extend(line.split_whitespace().map(|t| (t.to_string(), ln + 1))),
                }
            }
        }
        SequenceFormat::Csv { column, header } => {
            let mut rd = csv::ReaderBuilder::new()
                .has_headers(*header)
                .flexible(true)
                .from_reader(input);
            let col = match column {
                CsvColumn::Index(i) => *i,
                CsvColumn::Name(name) => {
                    if !header {
                        return Err(Error::Config(
                            "CSV column by name needs a header row".into(),
                        ));
                    }
                    rd.headers()?
                        .iter()
                        .position(|h| h.trim() == name)
                        .ok_or_else(|| Error::Config(format!("no CSV column named {name:?}")))?
                }
            };
            for rec in rd.records() {
                let rec = rec?;
                let line = rec.position().map_or(0, |p| p.line() as usize);
                let tok = rec
                    .get(col)
                    .ok_or_else(|| Error::Parse(format!("line {line}: missing column {col}")))?
                    .trim();
                if !tok.is_empty() {
                    out.push((tok.to_string(), line));
                }
            }
        }
    }
    Ok(out)
}

/// Reads a sequence from any reader. With `symbols = None` the alphabet is
/// inferred from the distinct tokens.
pub fn read_sequence<R: Read>(
    input: R,
    format: &SequenceFormat,
    symbols: Option<&Alphabet>,
) -> Result<SymbolSequence> {
    let tokens = tokenize(input, format)?;
    if tokens.is_empty() {
        return Err(Error::EmptyInput("sequence file has no symbols".into()));
    }
    let alphabet = match symbols {
        Some(a) => a.clone(),
        None => infer_alphabet(&tokens)?,
    };
    let lookup: FxHashMap<&str, usize> = alphabet
        .labels()
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut data = Vec::with_capacity(tokens.len());
    for (i, (tok, line)) in tokens.iter().enumerate() {
        match lookup.get(tok.as_str()) {
            Some(&s) => data.push(s),
            None => {
                return Err(Error::UnknownSymbol {
                    token: tok.clone(),
                    index: i + 1,
                    line: *line,
                })
            }
        }
    }
    SymbolSequence::new(data, alphabet)
}

pub fn load_sequence(
    path: &Path,
    format: &SequenceFormat,
    symbols: Option<&Alphabet>,
) -> Result<SymbolSequence> {
    let f = std::fs::File::open(path)?;
    read_sequence(std::io::BufReader::new(f), format, symbols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(data: &[usize]) -> SymbolSequence {
        SymbolSequence::new(data.to_vec(), Alphabet::binary()).unwrap()
    }

    #[test]
    fn alternating_sequence_counts() {
        let seq = binary(&[0, 1, 0, 1, 0, 1]);
        let s = LagSet::full(1);
        let c = count_contexts(&seq, &s, 0, 6).unwrap();
        let id0 = c.lookup(&[0]).unwrap();
        let id1 = c.lookup(&[1]).unwrap();
        assert_eq!(c.counts(id0), &[0, 3]);
        assert_eq!(c.counts(id1), &[2, 0]);
        assert_eq!(c.total(id0) + c.total(id1), 5);
        assert_eq!(c.total_positions(), 5);
        assert_eq!(c.empirical_transition(&[0]), vec![0.0, 1.0]);
        assert!((c.empirical_marginal(&[0]) - 0.6).abs() < 1e-15);
        assert!((c.empirical_marginal(&[1]) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn constant_sequence_has_one_context() {
        let seq = binary(&[0, 0, 0, 0]);
        let c = count_contexts(&seq, &LagSet::full(1), 0, 4).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.counts(0), &[3, 0]);
        assert_eq!(c.empirical_marginal(&[0]), 1.0);
    }

    #[test]
    fn unseen_context_falls_back_to_uniform() {
        let seq = binary(&[0, 0, 0, 0]);
        let c = count_contexts(&seq, &LagSet::full(1), 0, 4).unwrap();
        assert_eq!(c.empirical_transition(&[1]), vec![0.5, 0.5]);
        assert_eq!(c.empirical_marginal(&[1]), 0.0);
    }

    #[test]
    fn balanced_counts_give_half() {
        let seq = binary(&[0, 0, 0, 1, 0, 0, 0, 1]);
        let c = count_contexts(&seq, &LagSet::full(1), 0, 8).unwrap();
        // after 0: 0,0,1,0,0,1 -> 4 zeros, 2 ones; check the other pairing
        assert_eq!(c.counts(c.lookup(&[0]).unwrap()), &[4, 2]);
        let seq = binary(&[1, 0, 1, 1]);
        let c = count_contexts(&seq, &LagSet::full(1), 0, 4).unwrap();
        assert_eq!(c.empirical_transition(&[1]), vec![0.5, 0.5]);
    }

    #[test]
    fn window_must_exceed_order() {
        let seq = binary(&[0, 1, 0, 1]);
        assert!(matches!(
            count_contexts(&seq, &LagSet::full(3), 1, 4),
            Err(Error::WindowTooShort { .. })
        ));
        assert!(count_contexts(&seq, &LagSet::full(3), 0, 4).is_ok());
        assert!(count_contexts(&seq, &LagSet::full(1), 0, 5).is_err());
    }

    #[test]
    fn window_offsets_positions() {
        // positions t in [m+d+1, n] = [4, 6] (1-based)
        let seq = binary(&[1, 1, 1, 0, 1, 0]);
        let c = count_contexts(&seq, &LagSet::full(1), 2, 6).unwrap();
        assert_eq!(c.total_positions(), 3);
        assert_eq!(c.counts(c.lookup(&[1]).unwrap()), &[2, 0]);
        assert_eq!(c.counts(c.lookup(&[0]).unwrap()), &[0, 1]);
    }

    #[test]
    fn empty_lag_set_counts_symbols() {
        let seq = binary(&[0, 1, 1, 1, 0]);
        let c = count_contexts(&seq, &LagSet::empty(2), 0, 5).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.counts(0), &[1, 2]);
    }

    #[test]
    fn wide_codec_matches_packed_semantics() {
        let codec = ContextCodec::new(3, 50);
        assert!(!codec.is_packed());
        let ctx: Vec<usize> = (0..50).map(|i| i % 3).collect();
        let key = codec.encode(&ctx);
        assert_eq!(codec.decode(&key), ctx);
        let r = codec.replace(&key, 7, 2);
        assert_eq!(codec.coord(&r, 7), 2);

        let packed = ContextCodec::new(2, 64);
        assert!(packed.is_packed());
        let ctx = vec![1usize; 64];
        assert_eq!(packed.decode(&packed.encode(&ctx)), ctx);
        assert!(!ContextCodec::new(2, 65).is_packed());
        assert!(ContextCodec::new(4, 32).is_packed());
        assert!(!ContextCodec::new(3, 41).is_packed());
        assert!(ContextCodec::new(3, 40).is_packed());
    }

    #[test]
    fn reads_whitespace_tokens() {
        let s = read_sequence(
            "0 1\n1 0".as_bytes(),
            &SequenceFormat::Whitespace,
            Some(&Alphabet::binary()),
        )
        .unwrap();
        assert_eq!(s.data(), &[0, 1, 1, 0]);
    }

    #[test]
    fn unknown_token_names_position() {
        let e = read_sequence(
            "2 0 1".as_bytes(),
            &SequenceFormat::Whitespace,
            Some(&Alphabet::binary()),
        )
        .unwrap_err();
        match e {
            Error::UnknownSymbol { token, index, line } => {
                assert_eq!(token, "2");
                assert_eq!(index, 1);
                assert_eq!(line, 1);
            }
            other => panic!("{other:?}"),
        }
        let e = read_sequence(
            "0\n1\nx\n".as_bytes(),
            &SequenceFormat::Lines,
            Some(&Alphabet::binary()),
        )
        .unwrap_err();
        assert!(matches!(
            e,
            Error::UnknownSymbol {
                line: 3,
                index: 3,
                ..
            }
        ));
    }

    #[test]
    fn empty_file_is_an_error() {
        let e = read_sequence("\n \n".as_bytes(), &SequenceFormat::Lines, None).unwrap_err();
        assert!(matches!(e, Error::EmptyInput(_)));
    }

    #[test]
    fn csv_column_with_declared_mapping() {
        let csv = "date,rain\n1,rain\n2,dry\n3,dry\n4,rain\n";
        let table = parse_symbol_table("dry=0,rain=1").unwrap();
        let fmt = SequenceFormat::Csv {
            column: CsvColumn::Name("rain".into()),
            header: true,
        };
        let s = read_sequence(csv.as_bytes(), &fmt, Some(&table)).unwrap();
        assert_eq!(s.data(), &[1, 0, 0, 1]);
        assert_eq!(s.alphabet().values(), &[0.0, 1.0]);
    }

    #[test]
    fn inferred_alphabet_is_numerically_sorted() {
        let s =
            read_sequence("10 2 2 10 -1".as_bytes(), &SequenceFormat::Whitespace, None).unwrap();
        assert_eq!(s.alphabet().values(), &[-1.0, 2.0, 10.0]);
        assert_eq!(s.data(), &[2, 1, 1, 2, 0]);
    }

    #[test]
    fn counts_export_csv() {
        let seq = binary(&[0, 1, 0, 1, 0, 1]);
        let c = count_contexts(&seq, &LagSet::full(1), 0, 6).unwrap();
        let mut out = Vec::new();
        c.write_csv(seq.alphabet(), &mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s, "context,symbol,count\n0,1,3\n1,0,2\n");
    }
}
