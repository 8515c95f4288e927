//! Line-oriented text formats: embeddings, idf, cluster models, CTR
//! snapshots. Floats are written with Rust's shortest round-trip
//! formatting, so save followed by load is bit-exact.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use newsrec_core::cluster::{Algorithm, MinHashParams, MinHasher};
use newsrec_core::ctr::Cell;
use newsrec_core::{ClusterModel, CtrTable, EmbeddingTable, IdfTable, ModelBody};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn bad(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Parse { line, msg: msg.into() }
}

/// Non-empty, non-comment lines with their 1-based numbers.
fn content_lines<R: BufRead>(r: R) -> impl Iterator<Item = Result<(usize, String), FormatError>> {
    r.lines().enumerate().filter_map(|(i, l)| match l {
        Err(e) => Some(Err(e.into())),
        Ok(l) => {
            let t = l.trim();
            (!t.is_empty() && !t.starts_with('#')).then(|| Ok((i + 1, t.to_string())))
        }
    })
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T, FormatError> {
    s.parse().map_err(|_| bad(line, format!("invalid {what}: {s:?}")))
}

fn join_f64(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 12);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&v.to_string());
    }
    out
}

fn parse_f64s<'a>(parts: impl Iterator<Item = &'a str>, line: usize) -> Result<Vec<f64>, FormatError> {
    parts.map(|p| parse_num(p, line, "number")).collect()
}

// ---- embeddings ---------------------------------------------------------

/// `DIM d` header, then `token v1 .. vd` per line.
pub fn write_embeddings<W: Write>(mut w: W, table: &EmbeddingTable) -> Result<(), FormatError> {
    writeln!(w, "DIM {}", table.dim())?;
    for (token, v) in table.iter() {
        writeln!(w, "{token} {}", join_f64(v))?;
    }
    Ok(())
}

/// Like [`write_embeddings`] with a fixed number of decimals.
pub fn write_embeddings_fixed<W: Write>(mut w: W, table: &EmbeddingTable, decimals: usize) -> Result<(), FormatError> {
    writeln!(w, "DIM {}", table.dim())?;
    for (token, v) in table.iter() {
        write!(w, "{token}")?;
        for x in v {
            write!(w, " {x:.decimals$}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_embeddings<R: BufRead>(r: R) -> Result<EmbeddingTable, FormatError> {
    let mut table: Option<EmbeddingTable> = None;
    for item in content_lines(r) {
        let (n, line) = item?;
        let mut parts = line.split_whitespace();
        let head = parts.next().expect("non-empty line");
        if head == "DIM" {
            if table.is_some() {
                return Err(bad(n, "DIM must be the first line"));
            }
            let d: usize = parse_num(parts.next().unwrap_or(""), n, "dimension")?;
            table = Some(EmbeddingTable::new(d).map_err(|e| bad(n, e.to_string()))?);
            continue;
        }
        let values = parse_f64s(parts, n)?;
        let t = match &mut table {
            Some(t) => t,
            None => table.insert(EmbeddingTable::new(values.len()).map_err(|e| bad(n, e.to_string()))?),
        };
        t.insert(head, values).map_err(|e| bad(n, e.to_string()))?;
    }
    table.ok_or_else(|| bad(0, "no embeddings"))
}

// ---- idf ----------------------------------------------------------------

/// `DOCS n` header, then `token idf` per line.
pub fn write_idf<W: Write>(mut w: W, idf: &IdfTable) -> Result<(), FormatError> {
    writeln!(w, "DOCS {}", idf.doc_count())?;
    for (token, v) in idf.iter() {
        writeln!(w, "{token} {v}")?;
    }
    Ok(())
}

pub fn read_idf<R: BufRead>(r: R) -> Result<IdfTable, FormatError> {
    let mut docs = None;
    let mut entries = Vec::new();
    for item in content_lines(r) {
        let (n, line) = item?;
        let mut parts = line.split_whitespace();
        let head = parts.next().expect("non-empty line");
        let value = parts.next().ok_or_else(|| bad(n, "missing value"))?;
        if head == "DOCS" && docs.is_none() && entries.is_empty() {
            docs = Some(parse_num::<u64>(value, n, "document count")?);
        } else {
            entries.push((head.to_string(), parse_num::<f64>(value, n, "idf")?));
        }
    }
    let docs = docs.ok_or_else(|| bad(0, "missing DOCS header"))?;
    IdfTable::from_entries(docs, entries).map_err(|e| bad(0, e.to_string()))
}

// ---- cluster models -----------------------------------------------------

const MODEL_MAGIC: &str = "NEWSREC-MODEL 1";

/// Writes a model as tagged lines; see the README for the layout.
pub fn write_model<W: Write>(mut w: W, model: &ClusterModel) -> Result<(), FormatError> {
    writeln!(w, "{MODEL_MAGIC}")?;
    writeln!(w, "algorithm {}", model.algorithm().tag())?;
    writeln!(w, "version {}", model.version)?;
    writeln!(w, "k {}", model.k)?;
    match &model.body {
        ModelBody::KMeans { centroids } => {
            writeln!(w, "dim {}", centroids.first().map_or(0, Vec::len))?;
            for c in centroids {
                writeln!(w, "centroid {}", join_f64(c))?;
            }
        }
        ModelBody::MinHash { hasher, keys } => {
            writeln!(w, "hasher {} {} {}", hasher.num_hashes, hasher.key_len, hasher.seed)?;
            for key in keys {
                let parts: Vec<String> = key.iter().map(u64::to_string).collect();
                writeln!(w, "key {}", parts.join(" "))?;
            }
        }
        ModelBody::Nmf { basis, articles, memberships } => {
            for a in articles {
                writeln!(w, "article {a}")?;
            }
            for row in basis {
                writeln!(w, "basis {}", join_f64(row))?;
            }
            for (user, weights) in memberships {
                writeln!(w, "member {user} {}", join_f64(weights))?;
            }
        }
    }
    for (user, c) in &model.assignments {
        writeln!(w, "assign {user} {c}")?;
    }
    Ok(())
}

pub fn read_model<R: BufRead>(r: R) -> Result<ClusterModel, FormatError> {
    let mut lines = content_lines(r);
    match lines.next() {
        Some(Ok((_, l))) if l == MODEL_MAGIC => {}
        Some(Ok((n, _))) => return Err(bad(n, "not a model file")),
        Some(Err(e)) => return Err(e),
        None => return Err(bad(0, "empty model file")),
    }
    let mut algorithm = None;
    let mut version = None;
    let mut k = None;
    let mut dim = None;
    let mut centroids = Vec::new();
    let mut hasher = None;
    let mut keys = Vec::new();
    let mut articles = Vec::new();
    let mut basis = Vec::new();
    let mut memberships = BTreeMap::new();
    let mut assignments = BTreeMap::new();
    for item in lines {
        let (n, line) = item?;
        let mut parts = line.split_whitespace();
        let tag = parts.next().expect("non-empty line");
        match tag {
            "algorithm" => {
                let t = parts.next().unwrap_or("");
                algorithm = Some(Algorithm::from_tag(t).ok_or_else(|| bad(n, format!("unknown algorithm {t:?}")))?);
            }
            "version" => version = Some(parse_num::<u64>(parts.next().unwrap_or(""), n, "version")?),
            "k" => k = Some(parse_num::<usize>(parts.next().unwrap_or(""), n, "k")?),
            "dim" => dim = Some(parse_num::<usize>(parts.next().unwrap_or(""), n, "dim")?),
            "centroid" => centroids.push(parse_f64s(parts, n)?),
            "hasher" => {
                let nums: Vec<u64> = parts.map(|p| parse_num(p, n, "hasher field")).collect::<Result<_, _>>()?;
                let [num_hashes, key_len, seed] = nums[..] else {
                    return Err(bad(n, "hasher needs three fields"));
                };
                let params = MinHashParams {
                    num_hashes: num_hashes as usize,
                    key_len: key_len as usize,
                    seed,
                };
                hasher = Some(MinHasher::new(&params).map_err(|e| bad(n, e.to_string()))?);
            }
            "key" => keys.push(parts.map(|p| parse_num(p, n, "key")).collect::<Result<Vec<u64>, _>>()?),
            "article" => articles.push(parts.next().ok_or_else(|| bad(n, "missing article id"))?.to_string()),
            "basis" => basis.push(parse_f64s(parts, n)?),
            "member" => {
                let user = parts.next().ok_or_else(|| bad(n, "missing user"))?.to_string();
                memberships.insert(user, parse_f64s(parts, n)?);
            }
            "assign" => {
                let user = parts.next().ok_or_else(|| bad(n, "missing user"))?.to_string();
                let c: usize = parse_num(parts.next().unwrap_or(""), n, "cluster")?;
                assignments.insert(user, c);
            }
            other => return Err(bad(n, format!("unknown record {other:?}"))),
        }
    }
    let algorithm = algorithm.ok_or_else(|| bad(0, "missing algorithm"))?;
    let version = version.ok_or_else(|| bad(0, "missing version"))?;
    let k = k.ok_or_else(|| bad(0, "missing k"))?;
    let body = match algorithm {
        Algorithm::KMeans => {
            if centroids.len() != k {
                return Err(bad(0, format!("expected {k} centroids, found {}", centroids.len())));
            }
            if let Some(d) = dim {
                if centroids.iter().any(|c| c.len() != d) {
                    return Err(bad(0, "centroid length differs from dim"));
                }
            }
            ModelBody::KMeans { centroids }
        }
        Algorithm::MinHash => ModelBody::MinHash {
            hasher: hasher.ok_or_else(|| bad(0, "missing hasher"))?,
            keys,
        },
        Algorithm::Nmf => {
            if basis.len() != k || basis.iter().any(|r| r.len() != articles.len()) {
                return Err(bad(0, "basis shape does not match k and articles"));
            }
            ModelBody::Nmf {
                basis,
                articles,
                memberships,
            }
        }
    };
    if assignments.values().any(|&c| c >= k) {
        return Err(bad(0, "assignment outside [0, k)"));
    }
    Ok(ClusterModel {
        version,
        k,
        assignments,
        body,
    })
}

// ---- CTR snapshots ------------------------------------------------------

/// Header line with window bounds, version and cluster count, then
/// `cluster article impressions clicks` per cell.
pub fn write_ctr<W: Write>(mut w: W, table: &CtrTable) -> Result<(), FormatError> {
    writeln!(
        w,
        "CTR window_start={} window_end={} model_version={} clusters={} anomalies={}",
        table.window_start,
        table.window_end,
        table.model_version,
        table.num_clusters,
        table.anomalies()
    )?;
    for (c, a, cell) in table.cells() {
        writeln!(w, "{c} {a} {} {}", cell.impressions, cell.clicks)?;
    }
    Ok(())
}

pub fn read_ctr<R: BufRead>(r: R) -> Result<CtrTable, FormatError> {
    let mut lines = content_lines(r);
    let (n, header) = lines.next().ok_or_else(|| bad(0, "empty CTR file"))??;
    let mut fields = BTreeMap::new();
    let mut parts = header.split_whitespace();
    if parts.next() != Some("CTR") {
        return Err(bad(n, "missing CTR header"));
    }
    for p in parts {
        let (k, v) = p.split_once('=').ok_or_else(|| bad(n, format!("bad header field {p:?}")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(n, format!("missing {k}")));
    let start: i64 = parse_num(get("window_start")?, n, "window_start")?;
    let end: i64 = parse_num(get("window_end")?, n, "window_end")?;
    let version: u64 = parse_num(get("model_version")?, n, "model_version")?;
    let clusters: usize = parse_num(get("clusters")?, n, "clusters")?;
    let anomalies: u64 = match fields.get("anomalies") {
        Some(v) => parse_num(v, n, "anomalies")?,
        None => 0,
    };
    let mut table = CtrTable::new(clusters, version, start, end).map_err(|e| bad(n, e.to_string()))?;
    table.add_anomalies(anomalies);
    for item in lines {
        let (n, line) = item?;
        let p: Vec<&str> = line.split_whitespace().collect();
        let [c, a, imps, clicks] = p[..] else {
            return Err(bad(n, "expected: cluster article impressions clicks"));
        };
        let cell = Cell {
            impressions: parse_num(imps, n, "impressions")?,
            clicks: parse_num(clicks, n, "clicks")?,
        };
        table
            .add_cell(parse_num(c, n, "cluster")?, a, cell)
            .map_err(|e| bad(n, e.to_string()))?;
    }
    Ok(table)
}
