//! Interpolated modified Kneser-Ney n-gram model.
//!
//! The highest order uses raw counts; lower orders use continuation counts
//! (number of distinct left neighbours), with occurrences at the very start
//! of an item counted as raw counts since they have no left neighbour. Each
//! order has three discounts estimated from its count-of-counts; when those
//! statistics are degenerate every discount falls back to 0.75. The unigram
//! level interpolates with the uniform distribution over the vocabulary, so
//! every word has non-zero probability and each context sums to one.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use crate::container::{Container, Record};
use crate::error::{Error, Result};
use crate::textcorpus::EncodedCorpus;

pub const FALLBACK_DISCOUNT: f64 = 0.75;

#[derive(Clone, Debug, PartialEq)]
struct ContextStats {
    total: f64,
    gamma: f64,
    counts: HashMap<u32, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab_size: usize,
    /// `discounts[m-1]` = (D1, D2, D3+) for order m.
    discounts: Vec<[f64; 3]>,
    /// `tables[m-1]` maps a context of length m−1 to its statistics.
    tables: Vec<HashMap<Vec<u32>, ContextStats>>,
}

/// Modified Kneser-Ney discounts from count-of-counts n1..n4.
fn estimate_discounts(count_of_counts: [usize; 4]) -> [f64; 3] {
    let [n1, n2, n3, n4] = count_of_counts.map(|n| n as f64);
    if n1 == 0.0 || n2 == 0.0 || n3 == 0.0 || n4 == 0.0 {
        return [FALLBACK_DISCOUNT; 3];
    }
    let y = n1 / (n1 + 2.0 * n2);
    let d = [1.0 - 2.0 * y * n2 / n1, 2.0 - 3.0 * y * n3 / n2, 3.0 - 4.0 * y * n4 / n3];
    let sane = d
        .iter()
        .enumerate()
        .all(|(i, &x)| x.is_finite() && x > 0.0 && x < (i + 1) as f64);
    if sane {
        d
    } else {
        [FALLBACK_DISCOUNT; 3]
    }
}

fn discount_for(d: &[f64; 3], count: f64) -> f64 {
    if count >= 3.0 {
        d[2]
    } else if count >= 2.0 {
        d[1]
    } else {
        d[0]
    }
}

impl NGramModel {
    /// Trains on all predicted positions of `corpus` (tokens after each
    /// item's leading `<s>`).
    pub fn train(corpus: &EncodedCorpus, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("n-gram order must be at least 1".into()));
        }
        if corpus.predicted_tokens() == 0 {
            return Err(Error::EmptyCorpus);
        }
        let v = corpus.vocab_size;
        for &id in corpus.items.iter().flatten() {
            if id as usize >= v {
                return Err(Error::IdOutOfRange { id: id as usize, size: v });
            }
        }

        // per order: gram -> (raw-or-start count, distinct left neighbours)
        type Grams = HashMap<Vec<u32>, (usize, HashSet<u32>)>;
        let mut grams: Vec<Grams> = vec![HashMap::new(); order];
        for item in &corpus.items {
            for i in 1..item.len() {
                for m in 1..=order.min(i + 1) {
                    let start = i + 1 - m;
                    let g = item[start..=i].to_vec();
                    let entry = grams[m - 1].entry(g).or_default();
                    if m == order || start == 0 {
                        entry.0 += 1;
                    } else {
                        entry.1.insert(item[start - 1]);
                    }
                }
            }
        }

        let adjusted: Vec<Vec<(Vec<u32>, f64)>> = grams
            .into_iter()
            .map(|table| {
                table
                    .into_iter()
                    .map(|(g, (raw, left))| (g, (raw + left.len()) as f64))
                    .collect()
            })
            .collect();

        let discounts = adjusted
            .iter()
            .map(|table| {
                let mut coc = [0usize; 4];
                for (_, c) in table {
                    let c = *c as usize;
                    if (1..=4).contains(&c) {
                        coc[c - 1] += 1;
                    }
                }
                estimate_discounts(coc)
            })
            .collect();
        Ok(Self::assemble(order, v, discounts, adjusted))
    }

    fn assemble(order: usize, vocab_size: usize, discounts: Vec<[f64; 3]>, adjusted: Vec<Vec<(Vec<u32>, f64)>>) -> Self {
        let mut tables = Vec::with_capacity(order);
        for (m, table) in adjusted.into_iter().enumerate() {
            let d = discounts[m];
            let mut ctxs: HashMap<Vec<u32>, ContextStats> = HashMap::new();
            for (g, c) in table {
                let (ctx, w) = g.split_at(g.len() - 1);
                let st = ctxs.entry(ctx.to_vec()).or_insert_with(|| ContextStats {
                    total: 0.0,
                    gamma: 0.0,
                    counts: HashMap::new(),
                });
                st.total += c;
                *st.counts.entry(w[0]).or_default() += c;
            }
            for st in ctxs.values_mut() {
                let mass: f64 = st.counts.values().map(|&c| discount_for(&d, c).min(c)).sum();
                st.gamma = mass / st.total;
            }
            tables.push(ctxs);
        }
        Self {
            order,
            vocab_size,
            discounts,
            tables,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn discounts(&self) -> &[[f64; 3]] {
        &self.discounts
    }

    pub fn has_context(&self, context: &[u32]) -> bool {
        let m = context.len() + 1;
        m <= self.order && self.tables[m - 1].contains_key(context)
    }

    /// p(word | history); only the last `order − 1` history tokens are used.
    pub fn prob(&self, history: &[u32], word: u32) -> f64 {
        let mut p = 1.0 / self.vocab_size as f64;
        for m in 1..=self.order {
            if history.len() < m - 1 {
                break;
            }
            let ctx = &history[history.len() + 1 - m..];
            let Some(st) = self.tables[m - 1].get(ctx) else {
                break;
            };
            let c = st.counts.get(&word).copied().unwrap_or(0.0);
            let d = discount_for(&self.discounts[m - 1], c);
            p = (c - d).max(0.0) / st.total + st.gamma * p;
        }
        p
    }

    /// Natural-log probabilities of `tokens[1..]`.
    pub fn score(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(Error::IdOutOfRange {
                id: bad as usize,
                size: self.vocab_size,
            });
        }
        Ok((1..tokens.len())
            .map(|i| {
                let start = (i + 1).saturating_sub(self.order);
                self.prob(&tokens[start..i], tokens[i]).ln()
            })
            .collect())
    }

    pub fn to_container(&self) -> Result<Container> {
        if self.vocab_size >= 1 << 24 {
            return Err(Error::Format("vocabulary too large for f32 id storage".into()));
        }
        let discounts = self
            .discounts
            .iter()
            .map(|d| format!("{:?},{:?},{:?}", d[0], d[1], d[2]))
            .collect::<Vec<_>>()
            .join(";");
        let config = vec![
            ("arch".to_owned(), "kn4".to_owned()),
            ("order".to_owned(), self.order.to_string()),
            ("vocab_size".to_owned(), self.vocab_size.to_string()),
            ("discounts".to_owned(), discounts),
        ];
        let mut records = Vec::with_capacity(self.order);
        for (m, table) in self.tables.iter().enumerate() {
            let mut rows: BTreeMap<(Vec<u32>, u32), f64> = BTreeMap::new();
            for (ctx, st) in table {
                for (&w, &c) in &st.counts {
                    rows.insert((ctx.clone(), w), c);
                }
            }
            let width = m + 2;
            let mut data = Vec::with_capacity(rows.len() * width);
            for ((ctx, w), c) in &rows {
                data.extend(ctx.iter().map(|&x| x as f32));
                data.push(*w as f32);
                data.push(*c as f32);
            }
            records.push(Record {
                name: format!("order.{}", m + 1),
                dims: vec![rows.len(), width],
                data,
            });
        }
        Ok(Container { config, records })
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.require("arch")? != "kn4" {
            return Err(Error::ArchMismatch {
                expected: "kn4".into(),
                got: c.require("arch")?.into(),
            });
        }
        let order: usize = c.parse("order")?;
        let vocab_size: usize = c.parse("vocab_size")?;
        let discounts = c
            .require("discounts")?
            .split(';')
            .map(|part| {
                let v: Vec<f64> = part
                    .split(',')
                    .map(|x| x.parse().map_err(|_| Error::Format(format!("bad discount {x:?}"))))
                    .collect::<Result<_>>()?;
                <[f64; 3]>::try_from(v).map_err(|_| Error::Format("discounts need 3 values".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        if order == 0 || discounts.len() != order || c.records.len() != order {
            return Err(Error::Format(format!(
                "expected {order} orders, found {} discount sets and {} tables",
                discounts.len(),
                c.records.len()
            )));
        }
        let mut adjusted = Vec::with_capacity(order);
        for (m, r) in c.records.iter().enumerate() {
            let width = m + 2;
            if r.name != format!("order.{}", m + 1) || r.dims.len() != 2 || r.dims[1] != width {
                return Err(Error::Format(format!("unexpected table {} {:?}", r.name, r.dims)));
            }
            let mut table = Vec::with_capacity(r.dims[0]);
            for row in r.data.chunks(width) {
                let gram: Vec<u32> = row[..width - 1].iter().map(|&x| x as u32).collect();
                if gram.iter().any(|&id| id as usize >= vocab_size) {
                    return Err(Error::Format("token id outside vocabulary".into()));
                }
                table.push((gram, row[width - 1] as f64));
            }
            adjusted.push(table);
        }
        Ok(Self::assemble(order, vocab_size, discounts, adjusted))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}
