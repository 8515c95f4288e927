//! Per-(cluster, article) impression and click counts over time windows.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CtrError {
    #[error("unknown cluster index {cluster} (table has {num_clusters} clusters)")]
    UnknownCluster { cluster: usize, num_clusters: usize },
    #[error("timestamp {ts} outside window [{start}, {end})")]
    OutsideWindow { ts: Timestamp, start: Timestamp, end: Timestamp },
    #[error("invalid window [{start}, {end})")]
    InvalidWindow { start: Timestamp, end: Timestamp },
    #[error("tables disagree on model version or cluster count")]
    IncompatibleTables,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interaction {
    Impression,
    Click,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cell {
    pub impressions: u64,
    pub clicks: u64,
}

impl Cell {
    fn absorb(&mut self, other: Cell) {
        self.impressions += other.impressions;
        self.clicks += other.clicks;
    }
}

/// Additive smoothing `(clicks + alpha) / (impressions + beta)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Smoothing {
    pub alpha: f64,
    pub beta: f64,
}

impl Smoothing {
    pub const NONE: Smoothing = Smoothing { alpha: 0.0, beta: 0.0 };

    #[inline]
    pub fn rate(&self, cell: Cell) -> f64 {
        let den = cell.impressions as f64 + self.beta;
        if den <= 0.0 {
            0.0
        } else {
            (cell.clicks as f64 + self.alpha) / den
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordOutcome {
    Counted,
    /// A click arrived for a pair with no recorded impressions; it is still counted.
    ClickBeforeImpression,
}

/// Counts for one model version over `[window_start, window_end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CtrTable {
    pub window_start: Timestamp,
    pub window_end: Timestamp,
    pub model_version: u64,
    pub num_clusters: usize,
    /// article → cluster → counts
    cells: BTreeMap<String, BTreeMap<usize, Cell>>,
    anomalies: u64,
}

impl CtrTable {
    pub fn new(
        num_clusters: usize,
        model_version: u64,
        window_start: Timestamp,
        window_end: Timestamp,
    ) -> Result<Self, CtrError> {
        if window_start > window_end {
            return Err(CtrError::InvalidWindow {
                start: window_start,
                end: window_end,
            });
        }
        Ok(Self {
            window_start,
            window_end,
            model_version,
            num_clusters,
            cells: BTreeMap::new(),
            anomalies: 0,
        })
    }

    fn check_cluster(&self, cluster: usize) -> Result<(), CtrError> {
        if cluster >= self.num_clusters {
            return Err(CtrError::UnknownCluster {
                cluster,
                num_clusters: self.num_clusters,
            });
        }
        Ok(())
    }

    pub fn record(
        &mut self,
        interaction: Interaction,
        cluster: usize,
        article_id: &str,
        ts: Timestamp,
    ) -> Result<RecordOutcome, CtrError> {
        self.check_cluster(cluster)?;
        if ts < self.window_start || ts >= self.window_end {
            return Err(CtrError::OutsideWindow {
                ts,
                start: self.window_start,
                end: self.window_end,
            });
        }
        let cell = self.cell_mut(cluster, article_id);
        match interaction {
            Interaction::Impression => {
                cell.impressions += 1;
                Ok(RecordOutcome::Counted)
            }
            Interaction::Click => {
                let anomalous = cell.impressions == 0;
                cell.clicks += 1;
                if anomalous {
                    self.anomalies += 1;
                    Ok(RecordOutcome::ClickBeforeImpression)
                } else {
                    Ok(RecordOutcome::Counted)
                }
            }
        }
    }

    /// Adds a whole cell, e.g. when loading an exported snapshot.
    pub fn add_cell(&mut self, cluster: usize, article_id: &str, cell: Cell) -> Result<(), CtrError> {
        self.check_cluster(cluster)?;
        self.cell_mut(cluster, article_id).absorb(cell);
        Ok(())
    }

    fn cell_mut(&mut self, cluster: usize, article_id: &str) -> &mut Cell {
        if !self.cells.contains_key(article_id) {
            self.cells.insert(String::from(article_id), BTreeMap::new());
        }
        self.cells
            .get_mut(article_id)
            .expect("inserted above")
            .entry(cluster)
            .or_default()
    }

    pub fn cell(&self, cluster: usize, article_id: &str) -> Option<Cell> {
        self.cells.get(article_id)?.get(&cluster).copied()
    }

    pub fn ctr(&self, cluster: usize, article_id: &str, smoothing: Smoothing) -> f64 {
        smoothing.rate(self.cell(cluster, article_id).unwrap_or_default())
    }

    pub fn clicks(&self, cluster: usize, article_id: &str) -> u64 {
        self.cell(cluster, article_id).map(|c| c.clicks).unwrap_or(0)
    }

    /// Every cell, ordered by article id then cluster.
    pub fn cells(&self) -> impl Iterator<Item = (usize, &str, Cell)> {
        self.cells
            .iter()
            .flat_map(|(a, row)| row.iter().map(move |(c, cell)| (*c, a.as_str(), *cell)))
    }

    /// Per-cluster counts of one article.
    pub fn article_cells(&self, article_id: &str) -> impl Iterator<Item = (usize, Cell)> + '_ {
        self.cells
            .get(article_id)
            .into_iter()
            .flat_map(|row| row.iter().map(|(c, cell)| (*c, *cell)))
    }

    /// Number of non-empty `(cluster, article)` cells.
    pub fn len(&self) -> usize {
        self.cells.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Clicks that arrived before any impression of their pair.
    pub fn anomalies(&self) -> u64 {
        self.anomalies
    }

    /// Carries anomaly counts over from an exported snapshot.
    pub fn add_anomalies(&mut self, n: u64) {
        self.anomalies += n;
    }

    /// Impressions of one article summed over clusters.
    pub fn article_impressions(&self, article_id: &str) -> u64 {
        self.article_cells(article_id).map(|(_, c)| c.impressions).sum()
    }

    pub fn total_impressions(&self) -> u64 {
        self.cells().map(|(_, _, c)| c.impressions).sum()
    }

    pub fn total_clicks(&self) -> u64 {
        self.cells().map(|(_, _, c)| c.clicks).sum()
    }

    /// Closes this window at `now` and opens `[now, now + window_len)`.
    pub fn roll_window(mut self, now: Timestamp, window_len: i64) -> (CtrTable, CtrTable) {
        let close_at = now.max(self.window_start);
        self.window_end = close_at;
        let fresh = CtrTable {
            window_start: close_at,
            window_end: close_at + window_len.max(0),
            model_version: self.model_version,
            num_clusters: self.num_clusters,
            cells: BTreeMap::new(),
            anomalies: 0,
        };
        (self, fresh)
    }

    /// Union of several windows of the same model version.
    pub fn merge<'a>(tables: impl IntoIterator<Item = &'a CtrTable>) -> Result<Option<CtrTable>, CtrError> {
        let mut out: Option<CtrTable> = None;
        for t in tables {
            match &mut out {
                None => out = Some(t.clone()),
                Some(acc) => {
                    if acc.model_version != t.model_version || acc.num_clusters != t.num_clusters {
                        return Err(CtrError::IncompatibleTables);
                    }
                    acc.window_start = acc.window_start.min(t.window_start);
                    acc.window_end = acc.window_end.max(t.window_end);
                    acc.anomalies += t.anomalies;
                    for (c, a, cell) in t.cells() {
                        acc.cell_mut(c, a).absorb(cell);
                    }
                }
            }
        }
        Ok(out)
    }

    /// All clusters folded into a single cluster `0`.
    pub fn pooled(&self) -> CtrTable {
        let cells = self
            .cells
            .iter()
            .map(|(a, row)| {
                let mut total = Cell::default();
                row.values().for_each(|c| total.absorb(*c));
                (a.clone(), BTreeMap::from([(0, total)]))
            })
            .collect();
        CtrTable {
            window_start: self.window_start,
            window_end: self.window_end,
            model_version: self.model_version,
            num_clusters: 1,
            cells,
            anomalies: self.anomalies,
        }
    }

    /// Distinct article ids with at least one cell.
    pub fn articles(&self) -> Vec<&str> {
        self.cells.keys().map(String::as_str).collect()
    }
}

/// How many closed windows a snapshot spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    /// Union of the most recent `n` closed windows.
    Windows(usize),
    /// Everything since the aggregator started.
    Cumulative,
}

/// Tumbling-window accumulation with a bounded history of closed windows.
///
/// Windows are aligned to `start + i * window_len`; ingesting an event past
/// the open window's end first closes every window up to it.
#[derive(Debug, Clone)]
pub struct CtrAggregator {
    window_len: i64,
    horizon: Horizon,
    open: CtrTable,
    closed: VecDeque<CtrTable>,
}

impl CtrAggregator {
    pub fn new(
        num_clusters: usize,
        model_version: u64,
        start: Timestamp,
        window_len: i64,
        horizon: Horizon,
    ) -> Result<Self, CtrError> {
        if window_len <= 0 {
            return Err(CtrError::InvalidWindow {
                start,
                end: start + window_len,
            });
        }
        Ok(Self {
            window_len,
            horizon,
            open: CtrTable::new(num_clusters, model_version, start, start + window_len)?,
            closed: VecDeque::new(),
        })
    }

    pub fn model_version(&self) -> u64 {
        self.open.model_version
    }

    pub fn num_clusters(&self) -> usize {
        self.open.num_clusters
    }

    pub fn open_window(&self) -> &CtrTable {
        &self.open
    }

    pub fn closed_windows(&self) -> impl Iterator<Item = &CtrTable> {
        self.closed.iter()
    }

    fn close_open(&mut self) {
        let end = self.open.window_end;
        let placeholder = CtrTable {
            window_start: end,
            window_end: end,
            model_version: self.open.model_version,
            num_clusters: self.open.num_clusters,
            cells: BTreeMap::new(),
            anomalies: 0,
        };
        let open = core::mem::replace(&mut self.open, placeholder);
        let (frozen, fresh) = open.roll_window(end, self.window_len);
        self.open = fresh;
        match self.horizon {
            Horizon::Windows(n) => {
                self.closed.push_back(frozen);
                while self.closed.len() > n {
                    self.closed.pop_front();
                }
            }
            Horizon::Cumulative => match self.closed.back_mut() {
                Some(acc) => {
                    acc.window_end = frozen.window_end;
                    acc.anomalies += frozen.anomalies;
                    for (c, a, cell) in frozen.cells() {
                        acc.cell_mut(c, a).absorb(cell);
                    }
                }
                None => self.closed.push_back(frozen),
            },
        }
    }

    /// Closes every window that ends at or before `now`.
    pub fn advance_to(&mut self, now: Timestamp) {
        if now < self.open.window_end {
            return;
        }
        // Empty windows that would be closed only to be dropped again are skipped.
        let keep = match self.horizon {
            Horizon::Windows(n) => n as i64,
            Horizon::Cumulative => 0,
        };
        let behind = (now - self.open.window_end) / self.window_len;
        if behind > keep + 1 {
            self.close_open();
            if let Horizon::Windows(_) = self.horizon {
                self.closed.clear();
            }
            let aligned = self.open.window_start + (behind - keep) * self.window_len;
            self.open.window_start = aligned;
            self.open.window_end = aligned + self.window_len;
        }
        while now >= self.open.window_end {
            self.close_open();
        }
    }

    pub fn ingest(
        &mut self,
        interaction: Interaction,
        cluster: usize,
        article_id: &str,
        ts: Timestamp,
    ) -> Result<RecordOutcome, CtrError> {
        self.advance_to(ts);
        self.open.record(interaction, cluster, article_id, ts)
    }

    /// Immutable union of the retained closed windows.
    pub fn snapshot(&self) -> CtrTable {
        match CtrTable::merge(self.closed.iter()).expect("same aggregator") {
            Some(t) => t,
            None => CtrTable {
                window_start: self.open.window_start,
                window_end: self.open.window_start,
                model_version: self.open.model_version,
                num_clusters: self.open.num_clusters,
                cells: BTreeMap::new(),
                anomalies: 0,
            },
        }
    }

    /// Closed windows plus the partially filled open one.
    pub fn snapshot_with_open(&self) -> CtrTable {
        CtrTable::merge(self.closed.iter().chain(core::iter::once(&self.open)))
            .expect("same aggregator")
            .expect("open window present")
    }
}

/// Dense article-major CTR and click matrix for fast scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct CtrMatrix {
    pub model_version: u64,
    pub k: usize,
    articles: Vec<String>,
    index: BTreeMap<String, usize>,
    ctr: Vec<f64>,
    clicks: Vec<f64>,
    /// CTR of an empty cell under the smoothing used to build the matrix.
    pub empty_rate: f64,
}

impl CtrMatrix {
    /// One row per article in `table`, sorted by id.
    pub fn from_table(table: &CtrTable, smoothing: Smoothing) -> Self {
        let ids: Vec<String> = table.articles().into_iter().map(String::from).collect();
        Self::with_rows(table, ids, smoothing)
    }

    /// Rows in the given order; articles absent from `table` get empty cells.
    pub fn with_rows(table: &CtrTable, articles: Vec<String>, smoothing: Smoothing) -> Self {
        let k = table.num_clusters;
        let index: BTreeMap<String, usize> = articles.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        let empty = smoothing.rate(Cell::default());
        let mut ctr = vec![empty; articles.len() * k];
        let mut clicks = vec![0.0; articles.len() * k];
        for (cluster, article, cell) in table.cells() {
            if let Some(&row) = index.get(article) {
                ctr[row * k + cluster] = smoothing.rate(cell);
                clicks[row * k + cluster] = cell.clicks as f64;
            }
        }
        Self {
            model_version: table.model_version,
            k,
            articles,
            index,
            ctr,
            clicks,
            empty_rate: empty,
        }
    }

    pub fn row_of(&self, article_id: &str) -> Option<usize> {
        self.index.get(article_id).copied()
    }

    pub fn article(&self, row: usize) -> &str {
        &self.articles[row]
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    /// Multiplies every CTR entry by `factor`.
    pub fn scale_ctr(&mut self, factor: f64) {
        self.ctr.iter_mut().for_each(|x| *x *= factor);
        self.empty_rate *= factor;
    }

    #[inline]
    pub fn ctr_row(&self, row: usize) -> &[f64] {
        &self.ctr[row * self.k..(row + 1) * self.k]
    }

    #[inline]
    pub fn clicks_row(&self, row: usize) -> &[f64] {
        &self.clicks[row * self.k..(row + 1) * self.k]
    }
}
