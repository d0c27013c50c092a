//! Word embedding tables: text-format loading, token lookup and exact
//! nearest-neighbour search.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OovPolicy {
    /// Out-of-vocabulary tokens become zero vectors, keeping positions aligned.
    #[default]
    Zero,
    Skip,
    Error,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

/// Token → dense vector map. All rows share one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    vectors: Array2<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut tokens = Vec::new();
        let mut flat = Vec::new();
        let mut index = HashMap::new();
        let mut dim = None;
        for (token, vector) in entries {
            let d = *dim.get_or_insert(vector.len());
            if vector.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: vector.len(),
                });
            }
            if index.insert(token.clone(), tokens.len()).is_some() {
                return Err(Error::invalid(format!("duplicate token `{token}`")));
            }
            tokens.push(token);
            flat.extend(vector);
        }
        let dim = dim.ok_or(Error::Empty("embedding table has no rows"))?;
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let vectors =
            Array2::from_shape_vec((tokens.len(), dim), flat).expect("row lengths checked");
        Ok(Self {
            tokens,
            vectors,
            index,
        })
    }

    pub fn dimension(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn get(&self, token: &str) -> Option<ArrayView1<'_, f64>> {
        self.index.get(token).map(|&i| self.vectors.row(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ArrayView1<'_, f64>)> {
        self.tokens
            .iter()
            .zip(self.vectors.rows())
            .map(|(t, v)| (t.as_str(), v))
    }

    /// Rounds every component to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        self.vectors.mapv_inplace(|x| x as f32 as f64);
    }
}

/// Reads the text embedding format: `token v1 ... vd` per line, with an
/// optional `count dim` header line.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut header: Option<(usize, usize, usize)> = None;
    let mut tokens = Vec::new();
    let mut flat: Vec<f64> = Vec::new();
    let mut index = HashMap::new();
    let mut dim: Option<usize> = None;

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();

        if tokens.is_empty() && header.is_none() && rest.len() == 1 {
            if let (Ok(count), Ok(d)) = (token.parse::<usize>(), rest[0].parse::<usize>()) {
                header = Some((count, d, line_no));
                continue;
            }
        }

        let values = rest
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| parse_err(line_no, format!("bad number: {e}")))?;
        if values.is_empty() {
            return Err(parse_err(line_no, format!("token `{token}` has no vector")));
        }
        let d = *dim.get_or_insert(values.len());
        if values.len() != d {
            return Err(parse_err(
                line_no,
                format!("expected dimension {d}, found {}", values.len()),
            ));
        }
        if index.insert(token.to_string(), tokens.len()).is_some() {
            return Err(parse_err(line_no, format!("duplicate token `{token}`")));
        }
        tokens.push(token.to_string());
        flat.extend(values);
    }

    let Some(dim) = dim else {
        return Err(parse_err(
            1,
            "no embedding rows; dimension undefined".into(),
        ));
    };
    if let Some((count, d, line)) = header {
        if d != dim || count != tokens.len() {
            return Err(parse_err(
                line,
                format!(
                    "header declares {count} x {d} but file holds {} x {dim}",
                    tokens.len()
                ),
            ));
        }
    }
    let vectors = Array2::from_shape_vec((tokens.len(), dim), flat).expect("row lengths checked");
    Ok(EmbeddingTable {
        tokens,
        vectors,
        index,
    })
}

/// Looks up one vector per token, handling unknown tokens per `policy`.
pub fn embed_tokens<S: AsRef<str>>(
    table: &EmbeddingTable,
    tokens: &[S],
    policy: OovPolicy,
) -> Result<Array2<f64>> {
    if tokens.is_empty() {
        return Err(Error::Empty("no tokens to embed"));
    }
    let dim = table.dimension();
    let mut rows = Vec::with_capacity(tokens.len() * dim);
    let mut n = 0;
    for token in tokens {
        let token = token.as_ref();
        match table.get(token) {
            Some(v) => rows.extend(v.iter()),
            None => match policy {
                OovPolicy::Zero => rows.extend(std::iter::repeat_n(0.0, dim)),
                OovPolicy::Skip => continue,
                OovPolicy::Error => return Err(Error::OutOfVocabulary(token.to_string())),
            },
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("every token is out of vocabulary"));
    }
    Ok(Array2::from_shape_vec((n, dim), rows).expect("row count tracked"))
}

fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let denom = a.dot(&a).sqrt() * b.dot(&b).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        a.dot(&b) / denom
    }
}

fn euclidean(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Exact k-nearest-neighbour scan. Cosine scores sort descending, Euclidean
/// distances ascending; ties fall back to token order.
pub fn nearest_neighbors(
    table: &EmbeddingTable,
    query: ArrayView1<'_, f64>,
    k: usize,
    metric: Metric,
) -> Result<Vec<(String, f64)>> {
    if table.is_empty() {
        return Err(Error::Empty("embedding table"));
    }
    if query.len() != table.dimension() {
        return Err(Error::Dimension {
            expected: table.dimension(),
            got: query.len(),
        });
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let query: Array1<f64> = match metric {
        Metric::Cosine => {
            let norm = query.dot(&query).sqrt();
            if norm > 0.0 {
                &query / norm
            } else {
                query.to_owned()
            }
        }
        Metric::Euclidean => query.to_owned(),
    };
    let mut scored: Vec<(&str, f64)> = table
        .iter()
        .map(|(t, v)| {
            let s = match metric {
                Metric::Cosine => cosine(query.view(), v),
                Metric::Euclidean => euclidean(query.view(), v),
            };
            (t, s)
        })
        .collect();
    scored.sort_by(|a, b| {
        let primary = match metric {
            Metric::Cosine => b.1.partial_cmp(&a.1),
            Metric::Euclidean => a.1.partial_cmp(&b.1),
        };
        primary
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.cmp(b.0))
    });
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(t, s)| (t.to_string(), s))
        .collect())
}
