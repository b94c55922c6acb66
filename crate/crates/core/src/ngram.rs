//! Class-conditional N-gram language models scored by perplexity.
//!
//! Three estimators share one count store:
//!
//! * Katz back-off with Good-Turing discounting of counts below a cutoff.
//!   When `n_{r+1}` is zero below the cutoff, the missing count-of-counts is
//!   taken from a log-log regression of `n_r` on `r`.
//! * Interpolated Kneser-Ney with a fixed absolute discount and continuation
//!   counts for every lower order.
//! * Unsmoothed maximum likelihood, used as a reference in tests.
//!
//! Every conditional distribution is over the predictable vocabulary: all
//! types except the start marker, so `</s>` and `<unk>` are included.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

const UNK_ID: u32 = 0;
const BOS_ID: u32 = 1;
const EOS_ID: u32 = 2;

/// Backoff mass below this is treated as exhausted.
const MIN_BACKOFF_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Smoothing {
    GoodTuring,
    KneserNey,
    /// Raw relative frequencies; unseen events get probability zero.
    Mle,
}

impl fmt::Display for Smoothing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Smoothing::GoodTuring => "good-turing",
            Smoothing::KneserNey => "kneser-ney",
            Smoothing::Mle => "mle",
        })
    }
}

impl FromStr for Smoothing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "good-turing" | "gt" | "goodturing" => Ok(Smoothing::GoodTuring),
            "kneser-ney" | "kn" | "kneserney" => Ok(Smoothing::KneserNey),
            "mle" | "none" => Ok(Smoothing::Mle),
            other => Err(Error::Parse(format!("unknown smoothing `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramOptions {
    pub order: usize,
    pub smoothing: Smoothing,
    /// Absolute discount for Kneser-Ney, in `[0, 1]`.
    pub discount: f64,
    /// Words seen at most this many times are mapped to `<unk>`.
    pub unk_threshold: u64,
    /// Good-Turing adjusts counts strictly below this value.
    pub katz_cutoff: u64,
}

impl Default for NgramOptions {
    fn default() -> Self {
        Self {
            order: 2,
            smoothing: Smoothing::GoodTuring,
            discount: 0.75,
            unk_threshold: 1,
            katz_cutoff: 5,
        }
    }
}

impl NgramOptions {
    pub fn new(order: usize, smoothing: Smoothing) -> Self {
        Self { order, smoothing, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.order) {
            return Err(Error::Config(format!("ngram order must be in 1..=4, got {}", self.order)));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::Config(format!(
                "Kneser-Ney discount must be in [0, 1], got {}",
                self.discount
            )));
        }
        if self.katz_cutoff < 1 {
            return Err(Error::Config("katz_cutoff must be at least 1".into()));
        }
        Ok(())
    }
}

/// `n_r`: number of distinct n-grams observed exactly `r` times. An entry for
/// `r = 0` may hold the number of unseen events when the caller knows it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CountsOfCounts(pub BTreeMap<u64, u64>);

impl CountsOfCounts {
    pub fn from_counts<I: IntoIterator<Item = u64>>(counts: I) -> Self {
        let mut m = BTreeMap::new();
        for c in counts.into_iter().filter(|&c| c > 0) {
            *m.entry(c).or_insert(0) += 1;
        }
        Self(m)
    }

    pub fn get(&self, r: u64) -> u64 {
        self.0.get(&r).copied().unwrap_or(0)
    }

    /// `sum_r r * n_r`.
    pub fn total_tokens(&self) -> u64 {
        self.0.iter().map(|(r, n)| r * n).sum()
    }

    /// Log-log least squares fit of `n_r` against `r` over observed `r >= 1`,
    /// returning `(intercept, slope)`.
    fn loglog_fit(&self) -> (f64, f64) {
        let pts: Vec<(f64, f64)> = self
            .0
            .iter()
            .filter(|(&r, &n)| r >= 1 && n > 0)
            .map(|(&r, &n)| ((r as f64).ln(), (n as f64).ln()))
            .collect();
        if pts.len() < 2 {
            // a single point pins the level; use a Zipf-like slope
            let (x, y) = pts.first().copied().unwrap_or((0.0, 0.0));
            return (y + 2.0 * x, -2.0);
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let slope = sxy / sxx;
        (my - slope * mx, slope)
    }

    /// Regression-smoothed `n_r`.
    pub fn smoothed(&self, r: u64) -> f64 {
        let (a, b) = self.loglog_fit();
        (a + b * (r as f64).ln()).exp()
    }
}

/// Good-Turing adjusted count `r* = (r + 1) n_{r+1} / n_r` for `r` below the
/// cutoff, `r` itself otherwise. A zero `n_{r+1}` falls back to the
/// regression-smoothed value.
pub fn good_turing_adjust(coc: &CountsOfCounts, r: u64, cutoff: u64) -> Result<f64> {
    if r >= cutoff {
        return Ok(r as f64);
    }
    let n_r = coc.get(r);
    if n_r == 0 {
        return Err(Error::Internal(format!("n_{r} is zero for an adjusted count")));
    }
    let next = match coc.get(r + 1) {
        0 => coc.smoothed(r + 1),
        n => n as f64,
    };
    Ok((r + 1) as f64 * next / n_r as f64)
}

/// Outcome of fitting Katz discounts for one order.
#[derive(Debug, Clone, PartialEq)]
pub struct KatzDiscounts {
    /// `ratios[r]` multiplies count `r`; counts at or above `cutoff` keep 1.
    ratios: Vec<f64>,
    pub cutoff: u64,
    pub used_regression: bool,
}

impl KatzDiscounts {
    fn none() -> Self {
        Self { ratios: vec![1.0], cutoff: 1, used_regression: false }
    }

    pub fn ratio(&self, r: u64) -> f64 {
        self.ratios.get(r as usize).copied().unwrap_or(1.0)
    }

    /// Katz-renormalized discounts so the removed mass is exactly `n_1`
    /// (absent regression). Lowers the cutoff until every ratio is in (0, 1];
    /// with no valid cutoff, counts are left undiscounted.
    pub fn fit(coc: &CountsOfCounts, max_cutoff: u64) -> Result<Self> {
        let n1 = coc.get(1) as f64;
        'cutoff: for cutoff in (2..=max_cutoff).rev() {
            if n1 == 0.0 {
                break;
            }
            let mu = cutoff as f64 * coc.get(cutoff) as f64 / n1;
            if mu >= 1.0 {
                continue;
            }
            let mut ratios = vec![1.0; cutoff as usize];
            let mut used_regression = false;
            for r in 1..cutoff {
                if coc.get(r) == 0 {
                    continue;
                }
                used_regression |= coc.get(r + 1) == 0;
                let r_star = good_turing_adjust(coc, r, cutoff)?;
                let d = (r_star / r as f64 - mu) / (1.0 - mu);
                if !(d > 0.0 && d <= 1.0) {
                    continue 'cutoff;
                }
                ratios[r as usize] = d;
            }
            return Ok(Self { ratios, cutoff, used_regression });
        }
        Ok(Self::none())
    }
}

#[derive(Debug, Clone)]
struct ContextEntry {
    /// Sum of follower counts (raw at the top order, continuation for
    /// Kneser-Ney lower orders).
    total: f64,
    /// `(word, count)` sorted by word id.
    followers: Vec<(u32, u64)>,
    /// Multiplier on the discounted seen-word estimate.
    seen_scale: f64,
    /// Katz: alpha(c). Kneser-Ney: D * N1+(c.) / total. MLE: 0.
    backoff: f64,
}

impl ContextEntry {
    fn count(&self, w: u32) -> u64 {
        self.followers
            .binary_search_by_key(&w, |&(id, _)| id)
            .map_or(0, |i| self.followers[i].1)
    }
}

#[derive(Debug, Clone)]
struct OrderTable {
    contexts: HashMap<Vec<u32>, ContextEntry>,
    katz: KatzDiscounts,
    coc: CountsOfCounts,
}

/// Trained order-N model.
#[derive(Debug, Clone)]
pub struct NgramModel {
    opts: NgramOptions,
    words: Vec<String>,
    index: HashMap<String, u32>,
    /// Raw counts of full-order n-grams (context ++ word).
    top_counts: HashMap<Vec<u32>, u64>,
    /// `tables[n - 1]` holds order-n contexts (length `n - 1`).
    tables: Vec<OrderTable>,
    unigram: Vec<f64>,
}

impl NgramModel {
    pub fn train(corpus: &[TokenSequence], opts: &NgramOptions) -> Result<Self> {
        opts.validate()?;
        if corpus.is_empty() || corpus.iter().all(TokenSequence::is_empty) {
            return Err(Error::Training("empty training corpus".into()));
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for seq in corpus {
            for t in seq.tokens() {
                *freq.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<String> = freq
            .iter()
            .filter(|(w, &c)| c > opts.unk_threshold && ![UNK, BOS, EOS].contains(w))
            .map(|(w, _)| w.to_string())
            .collect();
        kept.sort();
        let mut words = vec![UNK.to_string(), BOS.to_string(), EOS.to_string()];
        words.extend(kept);

        let index = build_index(&words);
        let n = opts.order;
        let mut top_counts: HashMap<Vec<u32>, u64> = HashMap::new();
        for seq in corpus {
            let padded = pad(seq.tokens().iter().map(|t| lookup(&index, t)), n);
            for i in (n - 1)..padded.len() {
                *top_counts.entry(padded[i + 1 - n..=i].to_vec()).or_insert(0) += 1;
            }
        }
        Self::from_counts(opts.clone(), words, top_counts)
    }

    fn from_counts(
        opts: NgramOptions,
        words: Vec<String>,
        top_counts: HashMap<Vec<u32>, u64>,
    ) -> Result<Self> {
        let index = build_index(&words);
        let n = opts.order;

        // Raw counts at each order are suffix marginals of the top order,
        // since every order is counted at the same predicted positions.
        let mut raw: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); n];
        for (gram, &c) in &top_counts {
            for k in 1..=n {
                *raw[k - 1].entry(gram[n - k..].to_vec()).or_insert(0) += c;
            }
        }
        let counts: Vec<HashMap<Vec<u32>, u64>> = if opts.smoothing == Smoothing::KneserNey {
            (1..=n)
                .map(|k| {
                    if k == n {
                        raw[k - 1].clone()
                    } else {
                        let mut cont: HashMap<Vec<u32>, u64> = HashMap::new();
                        for gram in raw[k].keys() {
                            *cont.entry(gram[1..].to_vec()).or_insert(0) += 1;
                        }
                        cont
                    }
                })
                .collect()
        } else {
            raw
        };

        let mut model = NgramModel {
            opts,
            words,
            index,
            top_counts,
            tables: Vec::with_capacity(n),
            unigram: Vec::new(),
        };
        for (k, table_counts) in counts.into_iter().enumerate() {
            let table = model.build_order(k + 1, table_counts)?;
            model.tables.push(table);
            if k == 0 {
                model.unigram = model.unigram_distribution();
            }
        }
        Ok(model)
    }

    fn build_order(&self, order: usize, counts: HashMap<Vec<u32>, u64>) -> Result<OrderTable> {
        let coc = CountsOfCounts::from_counts(counts.values().copied());
        let katz = match self.opts.smoothing {
            Smoothing::GoodTuring => KatzDiscounts::fit(&coc, self.opts.katz_cutoff)?,
            _ => KatzDiscounts::none(),
        };
        let mut grouped: HashMap<Vec<u32>, Vec<(u32, u64)>> = HashMap::new();
        for (gram, c) in counts {
            let (w, ctx) = gram.split_last().expect("n-grams are non-empty");
            grouped.entry(ctx.to_vec()).or_default().push((*w, c));
        }
        let mut table = OrderTable { contexts: HashMap::new(), katz, coc };
        let n_pred = self.words.len() - 1;
        for (ctx, mut followers) in grouped {
            followers.sort_unstable();
            let total = followers.iter().map(|&(_, c)| c as f64).sum::<f64>();
            let mut entry = ContextEntry { total, followers, seen_scale: 1.0, backoff: 0.0 };
            match self.opts.smoothing {
                Smoothing::Mle => {}
                Smoothing::KneserNey => {
                    entry.backoff = self.opts.discount * entry.followers.len() as f64 / total;
                }
                Smoothing::GoodTuring => {
                    let seen: f64 = entry
                        .followers
                        .iter()
                        .map(|&(_, r)| table.katz.ratio(r) * r as f64 / total)
                        .sum();
                    let unseen_types = n_pred - entry.followers.len();
                    let mut beta = 1.0 - seen;
                    if unseen_types == 0 {
                        entry.seen_scale = 1.0 / seen;
                        beta = 0.0;
                    } else if beta <= MIN_BACKOFF_MASS {
                        // no discounted mass left; reserve one pseudo-event
                        entry.seen_scale = total / (total + 1.0);
                        beta = 1.0 - entry.seen_scale * seen;
                    }
                    if beta > 0.0 {
                        let lower_unseen = if order == 1 {
                            unseen_types as f64 / n_pred as f64
                        } else {
                            self.lower_unseen_mass(order - 1, &ctx[1..], &entry.followers)
                        };
                        entry.backoff = beta / lower_unseen;
                    }
                }
            }
            table.contexts.insert(ctx, entry);
        }
        Ok(table)
    }

    /// Lower-order probability mass of the words *not* in `followers`.
    fn lower_unseen_mass(&self, order: usize, ctx: &[u32], followers: &[(u32, u64)]) -> f64 {
        let seen: f64 = followers.iter().map(|&(w, _)| self.prob_ids(order, ctx, w)).sum();
        let rest = 1.0 - seen;
        if rest > 1e-6 {
            return rest;
        }
        (0..self.words.len() as u32)
            .filter(|&w| w != BOS_ID && followers.binary_search_by_key(&w, |&(id, _)| id).is_err())
            .map(|w| self.prob_ids(order, ctx, w))
            .sum::<f64>()
            .max(f64::MIN_POSITIVE)
    }

    fn unigram_distribution(&self) -> Vec<f64> {
        let entry = self.tables[0].contexts.get(&Vec::new());
        let n_pred = (self.words.len() - 1) as f64;
        (0..self.words.len() as u32)
            .map(|w| {
                if w == BOS_ID {
                    return 0.0;
                }
                let Some(e) = entry else { return 1.0 / n_pred };
                let c = e.count(w);
                match self.opts.smoothing {
                    Smoothing::Mle => c as f64 / e.total,
                    Smoothing::KneserNey => {
                        (c as f64 - self.opts.discount).max(0.0) / e.total + e.backoff / n_pred
                    }
                    Smoothing::GoodTuring => {
                        if c > 0 {
                            e.seen_scale * self.tables[0].katz.ratio(c) * c as f64 / e.total
                        } else {
                            e.backoff / n_pred
                        }
                    }
                }
            })
            .collect()
    }

    fn prob_ids(&self, order: usize, ctx: &[u32], w: u32) -> f64 {
        debug_assert_eq!(ctx.len(), order - 1);
        if order == 1 {
            return self.unigram[w as usize];
        }
        let table = &self.tables[order - 1];
        let Some(e) = table.contexts.get(ctx) else {
            return self.prob_ids(order - 1, &ctx[1..], w);
        };
        let c = e.count(w);
        match self.opts.smoothing {
            Smoothing::Mle => c as f64 / e.total,
            Smoothing::KneserNey => {
                (c as f64 - self.opts.discount).max(0.0) / e.total
                    + e.backoff * self.prob_ids(order - 1, &ctx[1..], w)
            }
            Smoothing::GoodTuring => {
                if c > 0 {
                    e.seen_scale * table.katz.ratio(c) * c as f64 / e.total
                } else {
                    e.backoff * self.prob_ids(order - 1, &ctx[1..], w)
                }
            }
        }
    }

    pub fn options(&self) -> &NgramOptions {
        &self.opts
    }

    pub fn order(&self) -> usize {
        self.opts.order
    }

    pub fn smoothing(&self) -> Smoothing {
        self.opts.smoothing
    }

    /// Every vocabulary type, reserved markers first.
    pub fn vocab(&self) -> &[String] {
        &self.words
    }

    /// Types that can be predicted: everything except `<s>`.
    pub fn predictable(&self) -> impl Iterator<Item = &str> {
        self.words.iter().filter(|w| w.as_str() != BOS).map(String::as_str)
    }

    /// Maps a surface word to its vocabulary form (`<unk>` when unknown).
    pub fn map_word<'a>(&'a self, word: &'a str) -> &'a str {
        &self.words[lookup(&self.index, word) as usize]
    }

    /// `P(word | context)`; the context may be any length and is truncated or
    /// padded with `<s>` on the left to `order - 1` tokens.
    pub fn prob(&self, word: &str, context: &[&str]) -> f64 {
        let n = self.opts.order;
        let mut ctx: Vec<u32> = context.iter().map(|t| lookup(&self.index, t)).collect();
        if ctx.len() >= n {
            ctx.drain(..ctx.len() + 1 - n);
        }
        while ctx.len() < n - 1 {
            ctx.insert(0, BOS_ID);
        }
        self.prob_ids(n, &ctx, lookup(&self.index, word))
    }

    /// Observed contexts at `order` (1-based; the unigram context is empty).
    pub fn observed_contexts(&self, order: usize) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = self.tables[order - 1]
            .contexts
            .keys()
            .map(|c| c.iter().map(|&i| self.words[i as usize].clone()).collect())
            .collect();
        out.sort();
        out
    }

    /// Largest `|sum_w P(w | h) - 1|` over every observed context at every
    /// order, plus one context made only of unknown words.
    pub fn max_normalization_error(&self) -> f64 {
        let vocab: Vec<&str> = self.predictable().collect();
        let n = self.opts.order;
        let mut contexts: Vec<Vec<String>> = (1..=n)
            .flat_map(|order| {
                self.observed_contexts(order).into_iter().map(move |ctx| {
                    let mut full = vec![BOS.to_string(); n - order];
                    full.extend(ctx);
                    full
                })
            })
            .collect();
        contexts.push(vec!["\u{1}unseen".to_string(); n - 1]);
        contexts
            .iter()
            .map(|ctx| {
                let ctx: Vec<&str> = ctx.iter().map(String::as_str).collect();
                let sum: f64 = vocab.iter().map(|w| self.prob(w, &ctx)).sum();
                (sum - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Raw count of a full-order n-gram given as surface tokens.
    pub fn count(&self, gram: &[&str]) -> u64 {
        let ids: Vec<u32> = gram.iter().map(|t| lookup(&self.index, t)).collect();
        if ids.len() == self.opts.order {
            return self.top_counts.get(&ids).copied().unwrap_or(0);
        }
        self.top_counts
            .iter()
            .filter(|(g, _)| g.ends_with(&ids))
            .map(|(_, c)| c)
            .sum()
    }

    pub fn counts_of_counts(&self, order: usize) -> &CountsOfCounts {
        &self.tables[order - 1].coc
    }

    pub fn katz_discounts(&self, order: usize) -> &KatzDiscounts {
        &self.tables[order - 1].katz
    }

    /// Fraction of order-n tokens removed by Good-Turing discounting, i.e.
    /// `sum_r (1 - d_r) r n_r / sum_r r n_r`.
    pub fn discounted_mass(&self, order: usize) -> f64 {
        let t = &self.tables[order - 1];
        let removed: f64 =
            t.coc.0.iter().map(|(&r, &n)| (1.0 - t.katz.ratio(r)) * (r * n) as f64).sum();
        removed / t.coc.total_tokens() as f64
    }

    /// Perplexity `exp(-(1/k) sum log P)`, over the tokens plus `</s>`.
    pub fn perplexity(&self, sequence: &TokenSequence) -> Result<f64> {
        if sequence.is_empty() {
            return Err(Error::Scoring("cannot score an empty token sequence".into()));
        }
        let n = self.opts.order;
        let padded = pad(sequence.tokens().iter().map(|t| lookup(&self.index, t)), n);
        let mut log_sum = 0.0;
        let mut k = 0usize;
        for i in (n - 1)..padded.len() {
            log_sum += self.prob_ids(n, &padded[i + 1 - n..i], padded[i]).ln();
            k += 1;
        }
        Ok((-log_sum / k as f64).exp())
    }

    /// Versioned text serialization with deterministic ordering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let o = &self.opts;
        s.push_str("speechmark-ngram 1\n");
        s.push_str(&format!("order {}\n", o.order));
        s.push_str(&format!("smoothing {}\n", o.smoothing));
        s.push_str(&format!("discount {:?}\n", o.discount));
        s.push_str(&format!("unk_threshold {}\n", o.unk_threshold));
        s.push_str(&format!("katz_cutoff {}\n", o.katz_cutoff));
        s.push_str(&format!("vocab {}\n", self.words.len()));
        for w in &self.words {
            s.push_str(w);
            s.push('\n');
        }
        let mut grams: Vec<(Vec<&str>, u64)> = self
            .top_counts
            .iter()
            .map(|(g, &c)| (g.iter().map(|&i| self.words[i as usize].as_str()).collect(), c))
            .collect();
        grams.sort();
        s.push_str(&format!("ngrams {}\n", grams.len()));
        for (g, c) in grams {
            s.push_str(&g.join(" "));
            s.push('\t');
            s.push_str(&c.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Codec(format!("ngram model: {m}"));
        let mut lines = text.lines();
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing `{key}`")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected `{key}`, found `{line}`")))
        };
        if field("speechmark-ngram")? != "1" {
            return Err(bad("unsupported version"));
        }
        let num = |s: String| s.parse::<u64>().map_err(|e| bad(&e.to_string()));
        let order = num(field("order")?)? as usize;
        let smoothing: Smoothing = field("smoothing")?.parse()?;
        let discount = field("discount")?.parse::<f64>().map_err(|e| bad(&e.to_string()))?;
        let unk_threshold = num(field("unk_threshold")?)?;
        let katz_cutoff = num(field("katz_cutoff")?)?;
        let n_vocab = num(field("vocab")?)? as usize;
        let words: Vec<String> = (0..n_vocab)
            .map(|_| lines.next().map(str::to_string).ok_or_else(|| bad("truncated vocab")))
            .collect::<Result<_>>()?;
        if words.get(..3) != Some(&[UNK.to_string(), BOS.to_string(), EOS.to_string()][..]) {
            return Err(bad("vocab must start with <unk> <s> </s>"));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing `{key}`")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected `{key}`")))
        };
        let n_grams = num(field("ngrams")?)? as usize;
        let index = build_index(&words);
        let mut top_counts = HashMap::with_capacity(n_grams);
        for _ in 0..n_grams {
            let line = lines.next().ok_or_else(|| bad("truncated n-gram list"))?;
            let (g, c) = line.split_once('\t').ok_or_else(|| bad("n-gram line without count"))?;
            let ids: Vec<u32> = g
                .split(' ')
                .map(|t| index.get(t).copied().ok_or_else(|| bad(&format!("unknown token `{t}`"))))
                .collect::<Result<_>>()?;
            if ids.len() != order {
                return Err(bad("n-gram length differs from order"));
            }
            top_counts.insert(ids, c.parse::<u64>().map_err(|e| bad(&e.to_string()))?);
        }
        let opts = NgramOptions { order, smoothing, discount, unk_threshold, katz_cutoff };
        opts.validate()?;
        Self::from_counts(opts, words, top_counts)
    }
}

fn build_index(words: &[String]) -> HashMap<String, u32> {
    words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect()
}

fn lookup(index: &HashMap<String, u32>, word: &str) -> u32 {
    index.get(word).copied().unwrap_or(UNK_ID)
}

fn pad(ids: impl Iterator<Item = u32>, order: usize) -> Vec<u32> {
    let mut v = vec![BOS_ID; order - 1];
    v.extend(ids);
    v.push(EOS_ID);
    v
}

pub fn train_ngram(corpus: &[TokenSequence], opts: &NgramOptions) -> Result<NgramModel> {
    NgramModel::train(corpus, opts)
}

pub fn perplexity(model: &NgramModel, sequence: &TokenSequence) -> Result<f64> {
    model.perplexity(sequence)
}

/// Perplexities of one case under the two class models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerplexityPair {
    pub ppl_dementia: f64,
    pub ppl_control: f64,
}

pub fn score_case(
    model_dementia: &NgramModel,
    model_control: &NgramModel,
    sequence: &TokenSequence,
) -> Result<PerplexityPair> {
    if model_dementia.order() != model_control.order()
        || model_dementia.smoothing() != model_control.smoothing()
    {
        return Err(Error::Config(
            "class models must share order and smoothing".into(),
        ));
    }
    Ok(PerplexityPair {
        ppl_dementia: model_dementia.perplexity(sequence)?,
        ppl_control: model_control.perplexity(sequence)?,
    })
}
