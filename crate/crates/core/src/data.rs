//! Observation containers, level grouping, contingency tables and CSV ingestion.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether the outcome column holds final levels or the sign of the change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TableMode {
    /// K×K: outcome is the final level `1..=K`.
    #[default]
    Standard,
    /// K×3: outcome is Δ ∈ {−1, 0, +1} stored as columns 1, 2, 3.
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    X,
    Y,
}

/// A feature column addressed by side and position within that side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureId {
    pub side: Side,
    pub index: usize,
}

impl FeatureId {
    pub fn x(index: usize) -> Self {
        FeatureId { side: Side::X, index }
    }
    pub fn y(index: usize) -> Self {
        FeatureId { side: Side::Y, index }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    /// Cell values are indices into `categories`.
    Categorical { categories: Vec<String> },
}

impl FeatureKind {
    pub fn is_categorical(&self) -> bool {
        matches!(self, FeatureKind::Categorical { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: FeatureKind,
    /// Continuous columns are z-scored at fit time when set.
    pub standardize: bool,
}

impl FeatureColumn {
    pub fn continuous(name: impl Into<String>) -> Self {
        FeatureColumn {
            name: name.into(),
            kind: FeatureKind::Continuous,
            standardize: true,
        }
    }

    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Self {
        FeatureColumn {
            name: name.into(),
            kind: FeatureKind::Categorical { categories },
            standardize: false,
        }
    }
}

/// Observations with pre-transition features `x`, transition-period features
/// `y`, and initial/final levels. Levels are 1-based; `None` marks a missing
/// level. Missing feature cells hold `0.0` and are flagged in the masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub(crate) x: Array2<f64>,
    pub(crate) y: Array2<f64>,
    pub(crate) x_missing: Array2<bool>,
    pub(crate) y_missing: Array2<bool>,
    pub(crate) x_columns: Vec<FeatureColumn>,
    pub(crate) y_columns: Vec<FeatureColumn>,
    pub(crate) c_initial: Vec<Option<usize>>,
    pub(crate) c_final: Vec<Option<usize>>,
    pub(crate) k: usize,
    pub(crate) mode: TableMode,
}

impl Dataset {
    /// Build a fully observed dataset, validating every invariant.
    pub fn new(
        x: Array2<f64>,
        y: Array2<f64>,
        x_columns: Vec<FeatureColumn>,
        y_columns: Vec<FeatureColumn>,
        c_initial: Vec<usize>,
        c_final: Vec<usize>,
        k: usize,
    ) -> Result<Self> {
        let x_missing = Array2::from_elem(x.raw_dim(), false);
        let y_missing = Array2::from_elem(y.raw_dim(), false);
        Self::with_missing(
            x,
            y,
            x_missing,
            y_missing,
            x_columns,
            y_columns,
            c_initial.into_iter().map(Some).collect(),
            c_final.into_iter().map(Some).collect(),
            k,
            TableMode::Standard,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_missing(
        x: Array2<f64>,
        y: Array2<f64>,
        x_missing: Array2<bool>,
        y_missing: Array2<bool>,
        x_columns: Vec<FeatureColumn>,
        y_columns: Vec<FeatureColumn>,
        c_initial: Vec<Option<usize>>,
        c_final: Vec<Option<usize>>,
        k: usize,
        mode: TableMode,
    ) -> Result<Self> {
        let ds = Dataset {
            x,
            y,
            x_missing,
            y_missing,
            x_columns,
            y_columns,
            c_initial,
            c_final,
            k,
            mode,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.c_initial.len();
        if n == 0 {
            return Err(Error::Dimension("dataset needs at least one observation".into()));
        }
        if self.k == 0 {
            return Err(Error::Dimension("number of levels must be positive".into()));
        }
        if self.c_final.len() != n
            || self.x.nrows() != n
            || self.y.nrows() != n
            || self.x_missing.dim() != self.x.dim()
            || self.y_missing.dim() != self.y.dim()
            || self.x.ncols() != self.x_columns.len()
            || self.y.ncols() != self.y_columns.len()
        {
            return Err(Error::Dimension(format!(
                "n={n}, x={:?}, y={:?}, c_final={}, columns=({}, {})",
                self.x.dim(),
                self.y.dim(),
                self.c_final.len(),
                self.x_columns.len(),
                self.y_columns.len()
            )));
        }
        let out_max = self.n_outcome_levels();
        for (r, (ci, cf)) in self.c_initial.iter().zip(&self.c_final).enumerate() {
            if let Some(v) = *ci {
                if v == 0 || v > self.k {
                    return Err(Error::LevelOutOfRange {
                        column: "c_initial".into(),
                        record: r,
                        value: v as i64,
                        max: self.k,
                    });
                }
            }
            if let Some(v) = *cf {
                if v == 0 || v > out_max {
                    return Err(Error::LevelOutOfRange {
                        column: "c_final".into(),
                        record: r,
                        value: v as i64,
                        max: out_max,
                    });
                }
            }
        }
        for (values, mask, cols) in [
            (&self.x, &self.x_missing, &self.x_columns),
            (&self.y, &self.y_missing, &self.y_columns),
        ] {
            for (c, col) in cols.iter().enumerate() {
                for r in 0..n {
                    if mask[[r, c]] {
                        continue;
                    }
                    let v = values[[r, c]];
                    match &col.kind {
                        FeatureKind::Continuous if !v.is_finite() => {
                            return Err(Error::NonNumeric {
                                column: col.name.clone(),
                                record: r,
                                value: v.to_string(),
                            })
                        }
                        FeatureKind::Categorical { categories }
                            if v.fract() != 0.0 || v < 0.0 || v as usize >= categories.len() =>
                        {
                            return Err(Error::UnknownCategory {
                                column: col.name.clone(),
                                record: r,
                                value: v.to_string(),
                            })
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        self.c_initial.len()
    }
    /// Number of initial levels K.
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn mode(&self) -> TableMode {
        self.mode
    }
    /// Number of outcome columns: K in standard mode, 3 in delta mode.
    pub fn n_outcome_levels(&self) -> usize {
        match self.mode {
            TableMode::Standard => self.k,
            TableMode::Delta => 3,
        }
    }
    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }
    pub fn y(&self) -> &Array2<f64> {
        &self.y
    }
    pub fn x_columns(&self) -> &[FeatureColumn] {
        &self.x_columns
    }
    pub fn y_columns(&self) -> &[FeatureColumn] {
        &self.y_columns
    }
    pub fn x_missing(&self) -> &Array2<bool> {
        &self.x_missing
    }
    pub fn y_missing(&self) -> &Array2<bool> {
        &self.y_missing
    }
    pub fn c_initial(&self) -> &[Option<usize>] {
        &self.c_initial
    }
    pub fn c_final(&self) -> &[Option<usize>] {
        &self.c_final
    }

    pub fn column(&self, id: FeatureId) -> &FeatureColumn {
        match id.side {
            Side::X => &self.x_columns[id.index],
            Side::Y => &self.y_columns[id.index],
        }
    }

    /// All feature ids, x side first.
    pub fn feature_ids(&self) -> Vec<FeatureId> {
        (0..self.x_columns.len())
            .map(FeatureId::x)
            .chain((0..self.y_columns.len()).map(FeatureId::y))
            .collect()
    }

    pub fn value(&self, row: usize, id: FeatureId) -> Option<f64> {
        let (vals, mask) = self.side(id.side);
        if mask[[row, id.index]] {
            None
        } else {
            Some(vals[[row, id.index]])
        }
    }

    /// Set one feature cell; `None` marks it missing.
    pub fn set_value(&mut self, row: usize, id: FeatureId, value: Option<f64>) {
        let (vals, mask) = match id.side {
            Side::X => (&mut self.x, &mut self.x_missing),
            Side::Y => (&mut self.y, &mut self.y_missing),
        };
        match value {
            Some(v) => {
                vals[[row, id.index]] = v;
                mask[[row, id.index]] = false;
            }
            None => {
                vals[[row, id.index]] = 0.0;
                mask[[row, id.index]] = true;
            }
        }
    }

    fn side(&self, side: Side) -> (&Array2<f64>, &Array2<bool>) {
        match side {
            Side::X => (&self.x, &self.x_missing),
            Side::Y => (&self.y, &self.y_missing),
        }
    }

    pub fn missing_count(&self, id: FeatureId) -> usize {
        let (_, mask) = self.side(id.side);
        mask.column(id.index).iter().filter(|m| **m).count()
    }

    pub fn has_missing_features(&self) -> bool {
        self.x_missing.iter().chain(self.y_missing.iter()).any(|m| *m)
    }

    /// Levels as `(c_initial, c_final)` pairs, failing on the first missing one.
    pub fn level_pairs(&self) -> Result<Vec<(usize, usize)>> {
        self.c_initial
            .iter()
            .zip(&self.c_final)
            .enumerate()
            .map(|(r, (ci, cf))| match (ci, cf) {
                (Some(i), Some(j)) => Ok((*i, *j)),
                _ => Err(Error::MissingLevel(r)),
            })
            .collect()
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let pick = |m: &Array2<f64>| m.select(ndarray::Axis(0), idx);
        let pick_b = |m: &Array2<bool>| m.select(ndarray::Axis(0), idx);
        Dataset {
            x: pick(&self.x),
            y: pick(&self.y),
            x_missing: pick_b(&self.x_missing),
            y_missing: pick_b(&self.y_missing),
            x_columns: self.x_columns.clone(),
            y_columns: self.y_columns.clone(),
            c_initial: idx.iter().map(|&r| self.c_initial[r]).collect(),
            c_final: idx.iter().map(|&r| self.c_final[r]).collect(),
            k: self.k,
            mode: self.mode,
        }
    }

    /// Copy with the outcome column replaced.
    pub fn with_final_levels(&self, c_final: Vec<usize>) -> Result<Dataset> {
        if c_final.len() != self.n_obs() {
            return Err(Error::Dimension("outcome length differs from n_obs".into()));
        }
        let mut ds = self.clone();
        ds.c_final = c_final.into_iter().map(Some).collect();
        ds.validate()?;
        Ok(ds)
    }

    pub(crate) fn set_mode(&mut self, mode: TableMode) {
        self.mode = mode;
    }
}

/// Monotone many-to-one map from raw ordinal scores onto groups `1..=K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelGrouping {
    groups: Vec<Vec<usize>>,
    map: BTreeMap<usize, usize>,
}

impl LevelGrouping {
    /// `groups[g]` lists the raw scores that map to group `g + 1`.
    pub fn new(groups: Vec<Vec<usize>>) -> Result<Self> {
        if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
            return Err(Error::InvalidGrouping("every group must be non-empty".into()));
        }
        let mut map = BTreeMap::new();
        for (g, members) in groups.iter().enumerate() {
            for &raw in members {
                if map.insert(raw, g + 1).is_some() {
                    return Err(Error::InvalidGrouping(format!(
                        "score {raw} appears in more than one group"
                    )));
                }
            }
        }
        // Contiguous domain and non-decreasing group index.
        let mut prev: Option<(usize, usize)> = None;
        for (&raw, &g) in &map {
            if let Some((pr, pg)) = prev {
                if raw != pr + 1 {
                    return Err(Error::InvalidGrouping(format!(
                        "domain is not contiguous between {pr} and {raw}"
                    )));
                }
                if g < pg {
                    return Err(Error::InvalidGrouping(format!(
                        "grouping is not monotone at score {raw}"
                    )));
                }
            }
            prev = Some((raw, g));
        }
        Ok(LevelGrouping { groups, map })
    }

    pub fn identity(k: usize) -> Self {
        Self::new((1..=k).map(|l| vec![l]).collect()).expect("identity grouping is valid")
    }

    /// Scores 1..7 into {1}, {2,3}, {4,5,6,7}.
    pub fn rankin_three() -> Self {
        Self::new(vec![vec![1], vec![2, 3], vec![4, 5, 6, 7]]).expect("valid grouping")
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_of(&self, raw: usize) -> Result<usize> {
        self.map.get(&raw).copied().ok_or(Error::OutsideGrouping(raw))
    }
}

/// Replace both level columns by their group index.
pub fn apply_grouping(ds: &Dataset, grouping: &LevelGrouping) -> Result<Dataset> {
    if ds.mode != TableMode::Standard {
        return Err(Error::InvalidArgument(
            "grouping applies to level outcomes, not delta outcomes".into(),
        ));
    }
    let map = |v: &[Option<usize>]| -> Result<Vec<Option<usize>>> {
        v.iter()
            .map(|l| l.map(|raw| grouping.group_of(raw)).transpose())
            .collect()
    };
    let mut out = ds.clone();
    out.c_initial = map(&ds.c_initial)?;
    out.c_final = map(&ds.c_final)?;
    out.k = grouping.n_groups();
    out.validate()?;
    Ok(out)
}

/// Counts `n_ij` of observations with initial level i and outcome column j.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    counts: Array2<u64>,
    mode: TableMode,
}

impl ContingencyTable {
    pub fn new(counts: Array2<u64>, mode: TableMode) -> Result<Self> {
        let (r, c) = counts.dim();
        let ok = match mode {
            TableMode::Standard => r == c && r > 0,
            TableMode::Delta => c == 3 && r > 0,
        };
        if !ok {
            return Err(Error::Dimension(format!("{r}x{c} table in {mode:?} mode")));
        }
        Ok(ContingencyTable { counts, mode })
    }

    /// Square table from nested rows.
    pub fn from_rows(rows: &[&[u64]]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("table rows must all have length K".into()));
        }
        let flat: Vec<u64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let counts = Array2::from_shape_vec((k, k), flat)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(counts, TableMode::Standard)
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }
    pub fn mode(&self) -> TableMode {
        self.mode
    }
    pub fn n_rows(&self) -> usize {
        self.counts.nrows()
    }
    pub fn n_cols(&self) -> usize {
        self.counts.ncols()
    }
    /// Count at 1-based `(i, j)`.
    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[[i - 1, j - 1]]
    }
    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    /// Observations that stayed at their level: the diagonal in standard
    /// mode, the Δ = 0 column in delta mode.
    pub fn unchanged(&self) -> u64 {
        match self.mode {
            TableMode::Standard => self.counts.diag().sum(),
            TableMode::Delta => self.counts.column(1).sum(),
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<u64>> {
        self.counts.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

impl fmt::Display for ContingencyTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.counts.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
            writeln!(f, "{}", cells.join(""))?;
        }
        Ok(())
    }
}

pub fn build_contingency(ds: &Dataset) -> Result<ContingencyTable> {
    let mut counts = Array2::<u64>::zeros((ds.k(), ds.n_outcome_levels()));
    for (i, j) in ds.level_pairs()? {
        counts[[i - 1, j - 1]] += 1;
    }
    ContingencyTable::new(counts, ds.mode())
}

// ---------------------------------------------------------------------------
// Manifest and CSV ingestion

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    X,
    Y,
    CInitial,
    CFinal,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    #[default]
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub kind: Kind,
    /// Declared category labels; inferred from the data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_true() -> bool {
    true
}

fn default_missing() -> Vec<String> {
    vec![String::new(), "NA".into()]
}

/// Column roles, level range, grouping and missing sentinels for a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Declared number of raw levels; inferred as the maximum observed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    /// Outcome encoding of the `c_final` column.
    #[serde(default)]
    pub mode: TableMode,
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    /// Raw-score groups applied after ingestion, e.g. `[[1], [2, 3], [4, 5, 6, 7]]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping: Option<Vec<Vec<usize>>>,
    pub columns: Vec<ColumnSpec>,
}

impl Manifest {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Manifest describing a dataset as written by [`write_csv`].
    pub fn for_dataset(ds: &Dataset) -> Self {
        let spec = |col: &FeatureColumn, role: Role| match &col.kind {
            FeatureKind::Continuous => ColumnSpec {
                name: col.name.clone(),
                role,
                kind: Kind::Continuous,
                categories: None,
                standardize: col.standardize,
            },
            FeatureKind::Categorical { categories } => ColumnSpec {
                name: col.name.clone(),
                role,
                kind: Kind::Categorical,
                categories: Some(categories.clone()),
                standardize: col.standardize,
            },
        };
        let mut columns: Vec<ColumnSpec> = ds
            .x_columns
            .iter()
            .map(|c| spec(c, Role::X))
            .chain(ds.y_columns.iter().map(|c| spec(c, Role::Y)))
            .collect();
        for (name, role) in [(C_INITIAL, Role::CInitial), (C_FINAL, Role::CFinal)] {
            columns.push(ColumnSpec {
                name: name.into(),
                role,
                kind: Kind::Continuous,
                categories: None,
                standardize: false,
            });
        }
        Manifest {
            levels: Some(ds.k),
            mode: ds.mode,
            missing: default_missing(),
            grouping: None,
            columns,
        }
    }

    pub fn level_grouping(&self) -> Result<Option<LevelGrouping>> {
        self.grouping.clone().map(LevelGrouping::new).transpose()
    }
}

pub const C_INITIAL: &str = "c_initial";
pub const C_FINAL: &str = "c_final";

/// Assemble a dataset from string records according to `manifest`.
///
/// Grouping declared in the manifest is not applied here; see [`apply_grouping`].
pub fn build_dataset(headers: &[String], records: &[Vec<String>], manifest: &Manifest) -> Result<Dataset> {
    let mut seen = HashSet::new();
    for spec in &manifest.columns {
        if !seen.insert(spec.name.as_str()) {
            return Err(Error::Manifest(format!("column {} declared twice", spec.name)));
        }
        if !headers.iter().any(|h| h == &spec.name) {
            return Err(Error::UnknownColumn(spec.name.clone()));
        }
    }
    for h in headers {
        if !seen.contains(h.as_str()) {
            return Err(Error::Manifest(format!("column {h} has no role")));
        }
    }
    let position = |name: &str| headers.iter().position(|h| h == name).expect("checked above");
    let by_role = |role: Role| -> Vec<&ColumnSpec> {
        manifest.columns.iter().filter(|c| c.role == role).collect()
    };
    let single = |role: Role, what: &str| -> Result<usize> {
        match by_role(role).as_slice() {
            [one] => Ok(position(&one.name)),
            other => Err(Error::Manifest(format!(
                "expected exactly one {what} column, found {}",
                other.len()
            ))),
        }
    };
    let ci_pos = single(Role::CInitial, C_INITIAL)?;
    let cf_pos = single(Role::CFinal, C_FINAL)?;
    let is_missing = |s: &str| manifest.missing.iter().any(|m| m == s.trim());

    let n = records.len();
    for (r, rec) in records.iter().enumerate() {
        if rec.len() != headers.len() {
            return Err(Error::Dimension(format!(
                "record {r} has {} fields, header has {}",
                rec.len(),
                headers.len()
            )));
        }
    }

    let parse_levels = |pos: usize, name: &str| -> Result<Vec<Option<i64>>> {
        records
            .iter()
            .enumerate()
            .map(|(r, rec)| {
                let s = rec[pos].trim();
                if is_missing(s) {
                    return Ok(None);
                }
                s.parse::<i64>().map(Some).map_err(|_| Error::NonNumeric {
                    column: name.to_string(),
                    record: r,
                    value: s.to_string(),
                })
            })
            .collect()
    };
    let ci_name = headers[ci_pos].clone();
    let cf_name = headers[cf_pos].clone();
    let ci_raw = parse_levels(ci_pos, &ci_name)?;
    let cf_raw = parse_levels(cf_pos, &cf_name)?;

    let observed_max = ci_raw.iter().chain(&cf_raw).flatten().copied().max().unwrap_or(1);
    let k = match manifest.levels {
        Some(k) => k,
        None => observed_max.max(1) as usize,
    };
    let out_max = match manifest.mode {
        TableMode::Standard => k,
        TableMode::Delta => 3,
    };
    let check = |v: Vec<Option<i64>>, name: &str, max: usize| -> Result<Vec<Option<usize>>> {
        v.into_iter()
            .enumerate()
            .map(|(r, l)| match l {
                Some(val) if val < 1 || val as usize > max => Err(Error::LevelOutOfRange {
                    column: name.to_string(),
                    record: r,
                    value: val,
                    max,
                }),
                other => Ok(other.map(|v| v as usize)),
            })
            .collect()
    };
    let c_initial = check(ci_raw, &ci_name, k)?;
    let c_final = check(cf_raw, &cf_name, out_max)?;

    let build_side = |role: Role| -> Result<(Array2<f64>, Array2<bool>, Vec<FeatureColumn>)> {
        let specs = by_role(role);
        let mut values = Array2::<f64>::zeros((n, specs.len()));
        let mut mask = Array2::from_elem((n, specs.len()), false);
        let mut cols = Vec::with_capacity(specs.len());
        for (c, spec) in specs.iter().enumerate() {
            let pos = position(&spec.name);
            match spec.kind {
                Kind::Continuous => {
                    for (r, rec) in records.iter().enumerate() {
                        let s = rec[pos].trim();
                        if is_missing(s) {
                            mask[[r, c]] = true;
                            continue;
                        }
                        let v: f64 = s.parse().map_err(|_| Error::NonNumeric {
                            column: spec.name.clone(),
                            record: r,
                            value: s.to_string(),
                        })?;
                        if !v.is_finite() {
                            return Err(Error::NonNumeric {
                                column: spec.name.clone(),
                                record: r,
                                value: s.to_string(),
                            });
                        }
                        values[[r, c]] = v;
                    }
                    cols.push(FeatureColumn {
                        name: spec.name.clone(),
                        kind: FeatureKind::Continuous,
                        standardize: spec.standardize,
                    });
                }
                Kind::Categorical => {
                    let categories = match &spec.categories {
                        Some(cats) => cats.clone(),
                        None => infer_categories(
                            records
                                .iter()
                                .map(|rec| rec[pos].trim())
                                .filter(|s| !is_missing(s)),
                        ),
                    };
                    for (r, rec) in records.iter().enumerate() {
                        let s = rec[pos].trim();
                        if is_missing(s) {
                            mask[[r, c]] = true;
                            continue;
                        }
                        let idx = categories.iter().position(|cat| cat == s).ok_or_else(|| {
                            Error::UnknownCategory {
                                column: spec.name.clone(),
                                record: r,
                                value: s.to_string(),
                            }
                        })?;
                        values[[r, c]] = idx as f64;
                    }
                    cols.push(FeatureColumn {
                        name: spec.name.clone(),
                        kind: FeatureKind::Categorical { categories },
                        standardize: false,
                    });
                }
            }
        }
        Ok((values, mask, cols))
    };
    let (x, x_missing, x_columns) = build_side(Role::X)?;
    let (y, y_missing, y_columns) = build_side(Role::Y)?;

    Dataset::with_missing(
        x,
        y,
        x_missing,
        y_missing,
        x_columns,
        y_columns,
        c_initial,
        c_final,
        k,
        manifest.mode,
    )
}

/// Distinct labels, numerically ordered when they all parse as numbers.
fn infer_categories<'a>(values: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut uniq: Vec<String> = Vec::new();
    for v in values {
        if !uniq.iter().any(|u| u == v) {
            uniq.push(v.to_string());
        }
    }
    if uniq.iter().all(|u| u.parse::<f64>().is_ok()) {
        uniq.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .partial_cmp(&b.parse::<f64>().unwrap())
                .unwrap()
        });
    } else {
        uniq.sort();
    }
    uniq
}

/// Read a CSV with a header row.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_from(file)
}

pub fn read_csv_from<R: std::io::Read>(reader: R) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut records = Vec::new();
    for rec in rdr.records() {
        records.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((headers, records))
}

/// Read a CSV and its manifest, applying the manifest's grouping if declared.
pub fn load_dataset(data: &Path, manifest: &Manifest) -> Result<Dataset> {
    let (headers, records) = read_csv(data)?;
    let ds = build_dataset(&headers, &records, manifest)?;
    match manifest.level_grouping()? {
        Some(g) => apply_grouping(&ds, &g),
        None => Ok(ds),
    }
}

/// Serialize as CSV: x columns, y columns, then `c_initial`, `c_final`.
/// Missing cells are written as `NA`.
pub fn write_csv<W: std::io::Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds
        .x_columns
        .iter()
        .chain(&ds.y_columns)
        .map(|c| c.name.as_str())
        .collect();
    header.push(C_INITIAL);
    header.push(C_FINAL);
    w.write_record(&header)?;
    let ids = ds.feature_ids();
    let mut rec = Vec::with_capacity(header.len());
    for r in 0..ds.n_obs() {
        rec.clear();
        for &id in &ids {
            rec.push(match (ds.value(r, id), &ds.column(id).kind) {
                (None, _) => "NA".to_string(),
                (Some(v), FeatureKind::Continuous) => format!("{v}"),
                (Some(v), FeatureKind::Categorical { categories }) => categories[v as usize].clone(),
            });
        }
        for l in [ds.c_initial[r], ds.c_final[r]] {
            rec.push(l.map_or_else(|| "NA".to_string(), |v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ds, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn manifest() -> Manifest {
        Manifest::from_toml_str(
            r#"
levels = 5
[[columns]]
name = "age"
role = "x"
[[columns]]
name = "smoker"
role = "x"
kind = "categorical"
[[columns]]
name = "aspirin"
role = "y"
kind = "categorical"
categories = ["0", "1"]
[[columns]]
name = "id"
role = "ignore"
[[columns]]
name = "admit"
role = "c_initial"
[[columns]]
name = "discharge"
role = "c_final"
"#,
        )
        .unwrap()
    }

    fn headers() -> Vec<String> {
        s(&["id", "age", "smoker", "aspirin", "admit", "discharge"])
    }

    #[test]
    fn builds_with_missing_cells() {
        let recs = vec![
            s(&["1", "61", "yes", "1", "3", "2"]),
            s(&["2", "NA", "no", "", "4", "4"]),
            s(&["3", "70.5", "", "0", "2", "1"]),
        ];
        let ds = build_dataset(&headers(), &recs, &manifest()).unwrap();
        assert_eq!(ds.n_obs(), 3);
        assert_eq!(ds.k(), 5);
        assert_eq!(ds.x().ncols(), 2);
        assert_eq!(ds.y().ncols(), 1);
        assert!(ds.x_missing()[[1, 0]]);
        assert!(ds.x_missing()[[2, 1]]);
        assert!(ds.y_missing()[[1, 0]]);
        assert_eq!(ds.value(0, FeatureId::x(0)), Some(61.0));
        // inferred categories are sorted: ["no", "yes"]
        assert_eq!(ds.value(0, FeatureId::x(1)), Some(1.0));
        assert_eq!(ds.c_initial(), &[Some(3), Some(4), Some(2)]);
    }

    #[test]
    fn level_out_of_range_is_rejected() {
        let recs = vec![s(&["1", "61", "yes", "1", "3", "9"])];
        let err = build_dataset(&headers(), &recs, &manifest()).unwrap_err();
        assert!(matches!(err, Error::LevelOutOfRange { value: 9, max: 5, .. }), "{err}");
        assert!(err.to_string().contains("level out of range"));
    }

    #[test]
    fn unknown_manifest_column_is_rejected() {
        let mut m = manifest();
        m.columns.push(ColumnSpec {
            name: "ghost".into(),
            role: Role::Y,
            kind: Kind::Continuous,
            categories: None,
            standardize: true,
        });
        let err = build_dataset(&headers(), &[], &m).unwrap_err();
        assert!(matches!(err, Error::UnknownColumn(ref c) if c == "ghost"));
    }

    #[test]
    fn non_numeric_continuous_is_rejected() {
        let recs = vec![s(&["1", "old", "yes", "1", "3", "2"])];
        let err = build_dataset(&headers(), &recs, &manifest()).unwrap_err();
        assert!(matches!(err, Error::NonNumeric { .. }));
    }

    #[test]
    fn undeclared_category_is_rejected() {
        let recs = vec![s(&["1", "50", "yes", "2", "3", "2"])];
        let err = build_dataset(&headers(), &recs, &manifest()).unwrap_err();
        assert!(matches!(err, Error::UnknownCategory { .. }));
    }

    #[test]
    fn degenerate_single_record_without_features() {
        let m = Manifest::from_toml_str(
            "[[columns]]\nname = \"a\"\nrole = \"c_initial\"\n[[columns]]\nname = \"b\"\nrole = \"c_final\"\n",
        )
        .unwrap();
        let ds = build_dataset(&s(&["a", "b"]), &[s(&["2", "1"])], &m).unwrap();
        assert_eq!(ds.n_obs(), 1);
        assert_eq!(ds.x().ncols(), 0);
        assert_eq!(ds.y().ncols(), 0);
        assert_eq!(ds.k(), 2);
    }

    #[test]
    fn declared_k_wins_over_inferred() {
        let m = Manifest::from_toml_str(
            "levels = 4\n[[columns]]\nname = \"a\"\nrole = \"c_initial\"\n[[columns]]\nname = \"b\"\nrole = \"c_final\"\n",
        )
        .unwrap();
        let ds = build_dataset(&s(&["a", "b"]), &[s(&["2", "1"])], &m).unwrap();
        assert_eq!(ds.k(), 4);
    }

    #[test]
    fn rankin_grouping() {
        let g = LevelGrouping::rankin_three();
        assert_eq!(g.group_of(4).unwrap(), 3);
        assert_eq!(g.group_of(2).unwrap(), 2);
        assert_eq!(g.group_of(1).unwrap(), 1);
        assert_eq!(g.group_of(7).unwrap(), 3);
        assert!(matches!(g.group_of(8), Err(Error::OutsideGrouping(8))));
    }

    #[test]
    fn invalid_groupings() {
        assert!(LevelGrouping::new(vec![vec![2], vec![1]]).is_err());
        assert!(LevelGrouping::new(vec![vec![1], vec![3]]).is_err());
        assert!(LevelGrouping::new(vec![vec![1, 2], vec![2]]).is_err());
        assert!(LevelGrouping::new(vec![vec![]]).is_err());
    }

    fn tiny() -> Dataset {
        Dataset::new(
            Array2::zeros((4, 0)),
            Array2::zeros((4, 0)),
            vec![],
            vec![],
            vec![1, 2, 2, 3],
            vec![1, 1, 2, 3],
            3,
        )
        .unwrap()
    }

    #[test]
    fn identity_grouping_is_noop() {
        let ds = tiny();
        let g = apply_grouping(&ds, &LevelGrouping::identity(3)).unwrap();
        assert_eq!(g, ds);
    }

    #[test]
    fn grouping_outside_domain_errors() {
        let ds = tiny();
        let err = apply_grouping(&ds, &LevelGrouping::identity(2)).unwrap_err();
        assert!(matches!(err, Error::OutsideGrouping(3)));
    }

    #[test]
    fn contingency_single_observation() {
        let ds = Dataset::new(
            Array2::zeros((1, 0)),
            Array2::zeros((1, 0)),
            vec![],
            vec![],
            vec![2],
            vec![1],
            3,
        )
        .unwrap();
        let t = build_contingency(&ds).unwrap();
        assert_eq!(t.total(), 1);
        assert_eq!(t.count(2, 1), 1);
        assert_eq!(t.counts().iter().filter(|v| **v > 0).count(), 1);
    }

    #[test]
    fn contingency_requires_levels() {
        let mut ds = tiny();
        ds.c_final[2] = None;
        assert!(matches!(build_contingency(&ds), Err(Error::MissingLevel(2))));
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            s(&["1", "61.123456789012345", "yes", "1", "3", "2"]),
            s(&["2", "NA", "no", "", "4", "4"]),
            s(&["3", "-0.1", "", "0", "2", "1"]),
        ];
        let ds = build_dataset(&headers(), &recs, &manifest()).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let (h, r) = read_csv_from(buf.as_slice()).unwrap();
        let back = build_dataset(&h, &r, &Manifest::for_dataset(&ds)).unwrap();
        assert_eq!(back, ds);
    }
}
