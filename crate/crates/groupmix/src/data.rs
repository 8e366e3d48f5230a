//! Deterministic generators for group-structured datasets and the
//! annotation-level access control around them.
//!
//! A dataset always carries full group truth internally; what a *consumer*
//! may see is governed by its annotation level:
//!
//! - `fine_grained`: confounder, group and partition visible on every split;
//! - `coarse`: the train split exposes only the majority/minority partition,
//!   the validation split exposes groups (for model selection);
//! - `validation_only`: groups visible on the validation split only;
//! - `none`: nothing visible anywhere.
//!
//! Held-out evaluation goes through [`Dataset::privileged`], a separate view
//! that bypasses the mask. Every privileged access (and every successful
//! public read of a group field) bumps a sentinel counter, so a test can
//! prove that a training run never touched withheld information.

use std::fmt;
use std::io::{BufRead, Write as _};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::textfmt::fmt_sig;

/// Group identity: confounder value paired with class label. Ordering is
/// lexicographic on `(c, y)` and fixes every per-group output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupId {
    pub c: usize,
    pub y: usize,
}

impl GroupId {
    pub fn new(c: usize, y: usize) -> Self {
        Self { c, y }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.c, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Partition {
    Majority,
    Minority,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationLevel {
    FineGrained,
    Coarse,
    ValidationOnly,
    None,
}

impl AnnotationLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationLevel::FineGrained => "fine_grained",
            AnnotationLevel::Coarse => "coarse",
            AnnotationLevel::ValidationOnly => "validation_only",
            AnnotationLevel::None => "none",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "fine_grained" => Some(AnnotationLevel::FineGrained),
            "coarse" => Some(AnnotationLevel::Coarse),
            "validation_only" => Some(AnnotationLevel::ValidationOnly),
            "none" => Some(AnnotationLevel::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "validation" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        }
    }
}

/// One group of the Gaussian generator: its identity, its share of the train
/// and test distributions, and the isotropic normal it draws from.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GroupSpec {
    pub c: usize,
    pub y: usize,
    pub train_proportion: f64,
    pub test_proportion: f64,
    pub mean: Vec<f64>,
    pub sigma: f64,
}

impl GroupSpec {
    pub fn group(&self) -> GroupId {
        GroupId::new(self.c, self.y)
    }
}

/// Masked per-sample view: withheld fields come back as `None` / `Unknown`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub y: usize,
    pub c: Option<usize>,
    pub group: Option<GroupId>,
    pub partition: Partition,
}

/// Full truth for one sample; never leaves this module unmasked.
#[derive(Debug, Clone)]
struct Record {
    features: Vec<f64>,
    y: usize,
    c: usize,
    minority: bool,
}

pub struct Dataset {
    records: Vec<Record>,
    annotation: AnnotationLevel,
    split: Split,
    n_classes: usize,
    n_confounders: usize,
    feature_dim: usize,
    restricted_reads: AtomicU64,
}

impl fmt::Debug for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dataset")
            .field("len", &self.records.len())
            .field("annotation", &self.annotation)
            .field("split", &self.split)
            .field("n_classes", &self.n_classes)
            .field("n_confounders", &self.n_confounders)
            .field("feature_dim", &self.feature_dim)
            .finish()
    }
}

impl Dataset {
    fn from_records(
        records: Vec<Record>,
        annotation: AnnotationLevel,
        split: Split,
        n_classes: usize,
        n_confounders: usize,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        let feature_dim = records[0].features.len();
        let mut class_seen = vec![false; n_classes];
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != feature_dim {
                return Err(Error::Data(format!(
                    "sample {i} has {} features, expected {feature_dim}",
                    r.features.len()
                )));
            }
            if r.y >= n_classes || r.c >= n_confounders {
                return Err(Error::Data(format!(
                    "sample {i} has group ({}, {}) outside the declared {}x{} grid",
                    r.c, r.y, n_confounders, n_classes
                )));
            }
            class_seen[r.y] = true;
        }
        if let Some(y) = class_seen.iter().position(|seen| !seen) {
            return Err(Error::Data(format!(
                "class {y} has no samples in the {} split",
                split.as_str()
            )));
        }
        Ok(Self {
            records,
            annotation,
            split,
            n_classes,
            n_confounders,
            feature_dim,
            restricted_reads: AtomicU64::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn annotation_level(&self) -> AnnotationLevel {
        self.annotation
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_confounders(&self) -> usize {
        self.n_confounders
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_groups(&self) -> usize {
        self.n_classes * self.n_confounders
    }

    /// The declared group set: the full `(c, y)` cross product in
    /// lexicographic order. Dense group indices are positions in this list.
    pub fn groups(&self) -> Vec<GroupId> {
        let mut out = Vec::with_capacity(self.n_groups());
        for c in 0..self.n_confounders {
            for y in 0..self.n_classes {
                out.push(GroupId::new(c, y));
            }
        }
        out
    }

    pub fn group_index(&self, group: GroupId) -> usize {
        group.c * self.n_classes + group.y
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.records[i].features
    }

    pub fn label(&self, i: usize) -> usize {
        self.records[i].y
    }

    /// Sentinel value: number of group-field reads served, public or
    /// privileged. A run that must not see group information keeps this 0.
    pub fn restricted_reads(&self) -> u64 {
        self.restricted_reads.load(Ordering::Relaxed)
    }

    fn exposes_groups(&self) -> bool {
        match self.annotation {
            AnnotationLevel::FineGrained => true,
            AnnotationLevel::Coarse | AnnotationLevel::ValidationOnly => {
                self.split == Split::Validation
            }
            AnnotationLevel::None => false,
        }
    }

    fn exposes_partition(&self) -> bool {
        match self.annotation {
            AnnotationLevel::FineGrained => true,
            AnnotationLevel::Coarse => self.split != Split::Test,
            AnnotationLevel::ValidationOnly => self.split == Split::Validation,
            AnnotationLevel::None => false,
        }
    }

    fn withheld(&self, field: &str) -> Error {
        Error::Withheld {
            level: self.annotation.as_str().into(),
            field: format!("{field} on {} split", self.split.as_str()),
        }
    }

    pub fn confounder(&self, i: usize) -> Result<usize> {
        if !self.exposes_groups() {
            return Err(self.withheld("confounder"));
        }
        self.restricted_reads.fetch_add(1, Ordering::Relaxed);
        Ok(self.records[i].c)
    }

    pub fn group_of(&self, i: usize) -> Result<GroupId> {
        if !self.exposes_groups() {
            return Err(self.withheld("group"));
        }
        self.restricted_reads.fetch_add(1, Ordering::Relaxed);
        let r = &self.records[i];
        Ok(GroupId::new(r.c, r.y))
    }

    pub fn partition(&self, i: usize) -> Result<Partition> {
        if !self.exposes_partition() {
            return Err(self.withheld("partition"));
        }
        self.restricted_reads.fetch_add(1, Ordering::Relaxed);
        Ok(if self.records[i].minority {
            Partition::Minority
        } else {
            Partition::Majority
        })
    }

    /// Masked view of one sample; withheld fields are simply absent.
    pub fn sample(&self, i: usize) -> Sample {
        let r = &self.records[i];
        let (c, group) = if self.exposes_groups() {
            (Some(r.c), Some(GroupId::new(r.c, r.y)))
        } else {
            (None, None)
        };
        let partition = if self.exposes_partition() {
            if r.minority {
                Partition::Minority
            } else {
                Partition::Majority
            }
        } else {
            Partition::Unknown
        };
        Sample {
            features: r.features.clone(),
            y: r.y,
            c,
            group,
            partition,
        }
    }

    /// Privileged, mask-free view for held-out evaluation and oracles.
    pub fn privileged(&self) -> PrivilegedView<'_> {
        self.restricted_reads.fetch_add(1, Ordering::Relaxed);
        PrivilegedView { ds: self }
    }

    pub fn gather_features(&self, indices: &[usize]) -> Vec<Vec<f64>> {
        indices.iter().map(|&i| self.records[i].features.clone()).collect()
    }

    pub fn gather_onehot_targets(&self, indices: &[usize]) -> Vec<Vec<f64>> {
        indices
            .iter()
            .map(|&i| crate::nn::one_hot(self.records[i].y, self.n_classes))
            .collect()
    }

    /// Write the dataset: a header line `dims classes annotation split`,
    /// then one space-separated record per sample with features at 9
    /// significant digits followed by `y c minority`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!(
            "{} {} {} {}\n",
            self.feature_dim,
            self.n_classes,
            self.annotation.as_str(),
            self.split.as_str()
        ));
        for r in &self.records {
            let mut line = String::new();
            for (d, v) in r.features.iter().enumerate() {
                if d > 0 {
                    line.push(' ');
                }
                line.push_str(&fmt_sig(*v, 9));
            }
            line.push_str(&format!(" {} {} {}\n", r.y, r.c, u8::from(r.minority)));
            out.push_str(&line);
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::format(path, "missing header line"))?;
        let header = header.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::format(path, "header must be: dims classes annotation split"));
        }
        let dims: usize = fields[0]
            .parse()
            .map_err(|_| Error::format(path, format!("bad dims field {:?}", fields[0])))?;
        let n_classes: usize = fields[1]
            .parse()
            .map_err(|_| Error::format(path, format!("bad classes field {:?}", fields[1])))?;
        let annotation = AnnotationLevel::parse(fields[2])
            .ok_or_else(|| Error::format(path, format!("unknown annotation level {:?}", fields[2])))?;
        let split = Split::parse(fields[3])
            .ok_or_else(|| Error::format(path, format!("unknown split {:?}", fields[3])))?;

        let mut records = Vec::new();
        let mut max_c = 0usize;
        for (lineno, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != dims + 3 {
                return Err(Error::format(
                    path,
                    format!("line {}: expected {} fields, got {}", lineno + 1, dims + 3, fields.len()),
                ));
            }
            let mut features = Vec::with_capacity(dims);
            for raw in &fields[..dims] {
                features.push(raw.parse::<f64>().map_err(|_| {
                    Error::format(path, format!("line {}: bad feature {:?}", lineno + 1, raw))
                })?);
            }
            let y: usize = fields[dims].parse().map_err(|_| {
                Error::format(path, format!("line {}: bad label", lineno + 1))
            })?;
            let c: usize = fields[dims + 1].parse().map_err(|_| {
                Error::format(path, format!("line {}: bad confounder", lineno + 1))
            })?;
            let minority = match fields[dims + 2] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::format(
                        path,
                        format!("line {}: bad partition flag {other:?}", lineno + 1),
                    ))
                }
            };
            max_c = max_c.max(c);
            records.push(Record {
                features,
                y,
                c,
                minority,
            });
        }
        Self::from_records(records, annotation, split, n_classes, max_c + 1)
    }
}

/// Mask-free access for evaluation and oracle construction.
pub struct PrivilegedView<'a> {
    ds: &'a Dataset,
}

impl PrivilegedView<'_> {
    pub fn group_of(&self, i: usize) -> GroupId {
        let r = &self.ds.records[i];
        GroupId::new(r.c, r.y)
    }

    pub fn confounder(&self, i: usize) -> usize {
        self.ds.records[i].c
    }

    pub fn is_minority(&self, i: usize) -> bool {
        self.ds.records[i].minority
    }

    pub fn minority_mask(&self) -> Vec<bool> {
        self.ds.records.iter().map(|r| r.minority).collect()
    }

    /// Dense group index per sample.
    pub fn group_indices(&self) -> Vec<usize> {
        self.ds
            .records
            .iter()
            .map(|r| r.c * self.ds.n_classes + r.y)
            .collect()
    }
}

/// Exact integer apportionment of `n` by proportions: floor everything, then
/// hand the leftover units to the largest remainders (ties to lower index).
fn largest_remainder(n: usize, proportions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &g in order.iter().take(n - assigned) {
        counts[g] += 1;
    }
    counts
}

fn check_proportions(tag: &str, props: &[f64]) -> Result<()> {
    let mut sum = 0.0;
    for (g, &p) in props.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!(
                "{tag} proportion of group {g} is {p}, outside [0,1]"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "{tag} proportions sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Draw a dataset from per-group isotropic normals `N(mean_g, sigma_g^2 I)`.
///
/// Counts follow largest-remainder rounding of `n * proportion` (train
/// proportions for the train and validation splits, test proportions for the
/// test split). A group is marked minority when its train proportion falls
/// strictly below the uniform share `1/m`.
pub fn gen_gaussian_groups(
    specs: &[GroupSpec],
    n: usize,
    split: Split,
    annotation: AnnotationLevel,
    seed: u64,
) -> Result<Dataset> {
    if specs.is_empty() {
        return Err(Error::Config("no group specs".into()));
    }
    if n < specs.len() {
        return Err(Error::Config(format!(
            "n = {n} is smaller than the number of groups {}",
            specs.len()
        )));
    }
    let dim = specs[0].mean.len();
    let n_classes = specs.iter().map(|s| s.y).max().unwrap() + 1;
    let n_confounders = specs.iter().map(|s| s.c).max().unwrap() + 1;
    if specs.len() != n_classes * n_confounders {
        return Err(Error::Config(format!(
            "expected the full {}x{} group cross product, got {} specs",
            n_confounders,
            n_classes,
            specs.len()
        )));
    }
    let mut seen = vec![false; n_classes * n_confounders];
    for spec in specs {
        if spec.mean.len() != dim {
            return Err(Error::Config(format!(
                "group {} mean has {} entries, expected {dim}",
                spec.group(),
                spec.mean.len()
            )));
        }
        if !(spec.sigma > 0.0) {
            return Err(Error::Config(format!(
                "group {} sigma must be positive, got {}",
                spec.group(),
                spec.sigma
            )));
        }
        let idx = spec.c * n_classes + spec.y;
        if seen[idx] {
            return Err(Error::Config(format!("duplicate group {}", spec.group())));
        }
        seen[idx] = true;
    }
    check_proportions("train", &specs.iter().map(|s| s.train_proportion).collect::<Vec<_>>())?;
    check_proportions("test", &specs.iter().map(|s| s.test_proportion).collect::<Vec<_>>())?;

    let proportions: Vec<f64> = match split {
        Split::Train | Split::Validation => specs.iter().map(|s| s.train_proportion).collect(),
        Split::Test => specs.iter().map(|s| s.test_proportion).collect(),
    };
    let counts = largest_remainder(n, &proportions);
    if split == Split::Test {
        if let Some(g) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Config(format!(
                "test split must be group-complete, but group {} rounds to 0 samples",
                specs[g].group()
            )));
        }
    }

    let uniform_share = 1.0 / specs.len() as f64;
    let mut rng = stream(seed, "gaussian", &[split.tag()]);
    let mut records = Vec::with_capacity(n);
    for (spec, &count) in specs.iter().zip(&counts) {
        let minority = spec.train_proportion < uniform_share - 1e-12;
        for _ in 0..count {
            let mut features = Vec::with_capacity(dim);
            for &mu in &spec.mean {
                let normal = Normal::new(mu, spec.sigma).expect("sigma > 0");
                features.push(normal.sample(&mut rng));
            }
            records.push(Record {
                features,
                y: spec.y,
                c: spec.c,
                minority,
            });
        }
    }
    Dataset::from_records(records, annotation, split, n_classes, n_confounders)
}

/// Configuration of the spurious-feature generator: binary labels, a low
/// signal-to-noise "core" feature block aligned with the label, and a high
/// signal-to-noise "spurious" block aligned with a confounder that agrees
/// with the label on `rho_train` of the train split (0.5 at test time).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpuriousConfig {
    pub dim_core: usize,
    pub dim_spurious: usize,
    pub rho_train: f64,
    pub mu_core: f64,
    pub sigma_core: f64,
    pub mu_spurious: f64,
    pub sigma_spurious: f64,
}

impl SpuriousConfig {
    pub fn new(dim_core: usize, dim_spurious: usize, rho_train: f64) -> Self {
        Self {
            dim_core,
            dim_spurious,
            rho_train,
            mu_core: 1.0,
            sigma_core: 2.0,
            mu_spurious: 1.0,
            sigma_spurious: 0.5,
        }
    }
}

/// Generate the spurious-feature analogue dataset: `y` uniform over {0,1},
/// `c == y` with probability `rho_train` on train/validation and 0.5 on
/// test; samples with `c != y` are the minority partition.
pub fn gen_spurious_features(
    cfg: &SpuriousConfig,
    n: usize,
    split: Split,
    annotation: AnnotationLevel,
    seed: u64,
) -> Result<Dataset> {
    if cfg.dim_core == 0 || cfg.dim_spurious == 0 {
        return Err(Error::Config("feature blocks must be non-empty".into()));
    }
    if !(0.5..=1.0).contains(&cfg.rho_train) {
        return Err(Error::Config(format!(
            "rho_train must lie in [0.5, 1], got {}",
            cfg.rho_train
        )));
    }
    if n < 2 {
        return Err(Error::Config(format!("n = {n} is too small")));
    }
    let rho = match split {
        Split::Train | Split::Validation => cfg.rho_train,
        Split::Test => 0.5,
    };
    let mut rng = stream(seed, "spurious", &[split.tag()]);
    let core = Normal::new(0.0, cfg.sigma_core).expect("sigma > 0");
    let spurious = Normal::new(0.0, cfg.sigma_spurious).expect("sigma > 0");
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let y = usize::from(rng.random_range(0.0..1.0) < 0.5);
        let aligned = rng.random_range(0.0..1.0) < rho;
        let c = if aligned { y } else { 1 - y };
        let mut features = Vec::with_capacity(cfg.dim_core + cfg.dim_spurious);
        let y_sign = 2.0 * y as f64 - 1.0;
        let c_sign = 2.0 * c as f64 - 1.0;
        for _ in 0..cfg.dim_core {
            features.push(cfg.mu_core * y_sign + core.sample(&mut rng));
        }
        for _ in 0..cfg.dim_spurious {
            features.push(cfg.mu_spurious * c_sign + spurious.sample(&mut rng));
        }
        records.push(Record {
            features,
            y,
            c,
            minority: c != y,
        });
    }
    Dataset::from_records(records, annotation, split, 2, 2)
}

/// The generator-declared minority mask (true = minority), regardless of the
/// public annotation level. Uses the privileged view.
pub fn oracle_partition(ds: &Dataset) -> Result<Vec<bool>> {
    Ok(ds.privileged().minority_mask())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_specs(sigma: f64, minority_fraction: f64) -> Vec<GroupSpec> {
        let mut specs = Vec::new();
        for c in 0..2usize {
            for y in 0..2usize {
                let minority = c != y;
                specs.push(GroupSpec {
                    c,
                    y,
                    train_proportion: if minority {
                        minority_fraction / 2.0
                    } else {
                        (1.0 - minority_fraction) / 2.0
                    },
                    test_proportion: 0.25,
                    mean: vec![c as f64, y as f64],
                    sigma,
                });
            }
        }
        specs
    }

    #[test]
    fn balanced_test_counts_and_means() {
        let specs = toy_specs(0.25, 0.05);
        let ds = gen_gaussian_groups(&specs, 400, Split::Test, AnnotationLevel::FineGrained, 0)
            .unwrap();
        let view = ds.privileged();
        let mut count = vec![0usize; 4];
        let mut mean = vec![vec![0.0; 2]; 4];
        for i in 0..ds.len() {
            let g = view.group_of(i);
            let idx = ds.group_index(g);
            count[idx] += 1;
            for d in 0..2 {
                mean[idx][d] += ds.features(i)[d];
            }
        }
        assert_eq!(count, vec![100; 4]);
        for (idx, g) in ds.groups().iter().enumerate() {
            let expected = [g.c as f64, g.y as f64];
            for d in 0..2 {
                let m = mean[idx][d] / count[idx] as f64;
                assert!(
                    (m - expected[d]).abs() < 0.1,
                    "group {g} coord {d}: {m} vs {}",
                    expected[d]
                );
            }
        }
    }

    #[test]
    fn train_proportions_hit_minority_share() {
        let specs = toy_specs(0.25, 0.05);
        let ds = gen_gaussian_groups(&specs, 2000, Split::Train, AnnotationLevel::FineGrained, 1)
            .unwrap();
        let mask = oracle_partition(&ds).unwrap();
        let minority = mask.iter().filter(|&&m| m).count();
        assert_eq!(minority, 100); // 5% of 2000, exact by largest remainder
    }

    #[test]
    fn degenerate_sigma_concentrates_on_means() {
        let specs = toy_specs(1e-6, 0.05);
        let ds = gen_gaussian_groups(&specs, 40, Split::Test, AnnotationLevel::FineGrained, 3)
            .unwrap();
        let view = ds.privileged();
        for i in 0..ds.len() {
            let g = view.group_of(i);
            assert!((ds.features(i)[0] - g.c as f64).abs() < 1e-4);
            assert!((ds.features(i)[1] - g.y as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn proportion_validation_and_test_completeness() {
        let mut specs = toy_specs(0.25, 0.05);
        specs[0].train_proportion = 0.9;
        let err =
            gen_gaussian_groups(&specs, 100, Split::Train, AnnotationLevel::FineGrained, 0)
                .unwrap_err();
        assert!(matches!(err, Error::Config(_)));

        let mut specs = toy_specs(0.25, 0.05);
        for s in specs.iter_mut() {
            s.test_proportion = match (s.c, s.y) {
                (0, 0) => 1.0,
                _ => 0.0,
            };
        }
        let err = gen_gaussian_groups(&specs, 100, Split::Test, AnnotationLevel::FineGrained, 0)
            .unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("group-complete")));
    }

    #[test]
    fn seed_determinism_and_split_independence() {
        let specs = toy_specs(0.25, 0.05);
        let a = gen_gaussian_groups(&specs, 100, Split::Train, AnnotationLevel::FineGrained, 7)
            .unwrap();
        let b = gen_gaussian_groups(&specs, 100, Split::Train, AnnotationLevel::FineGrained, 7)
            .unwrap();
        for i in 0..a.len() {
            assert_eq!(a.features(i), b.features(i));
            assert_eq!(a.label(i), b.label(i));
        }
        let t = gen_gaussian_groups(&specs, 100, Split::Test, AnnotationLevel::FineGrained, 7)
            .unwrap();
        assert_ne!(a.features(0), t.features(0));
    }

    #[test]
    fn largest_remainder_is_exact() {
        assert_eq!(largest_remainder(400, &[0.25; 4]), vec![100; 4]);
        assert_eq!(
            largest_remainder(2000, &[0.475, 0.475, 0.025, 0.025]),
            vec![950, 950, 50, 50]
        );
        assert_eq!(largest_remainder(10, &[0.34, 0.33, 0.33]), vec![4, 3, 3]);
        let counts = largest_remainder(7, &[0.5, 0.5]);
        assert_eq!(counts.iter().sum::<usize>(), 7);
        assert_eq!(counts, vec![4, 3]); // tie on remainders goes to index 0
    }

    #[test]
    fn oracle_partition_rules() {
        // Forced: exactly the two low-proportion groups are minority.
        let specs = toy_specs(0.25, 0.05);
        let ds = gen_gaussian_groups(&specs, 200, Split::Train, AnnotationLevel::FineGrained, 0)
            .unwrap();
        let mask = oracle_partition(&ds).unwrap();
        let view = ds.privileged();
        for i in 0..ds.len() {
            let g = view.group_of(i);
            assert_eq!(mask[i], g.c != g.y, "sample {i} group {g}");
        }

        // Balanced proportions: no group is below average, mask all false.
        let mut specs = toy_specs(0.25, 0.05);
        for s in specs.iter_mut() {
            s.train_proportion = 0.25;
        }
        let ds = gen_gaussian_groups(&specs, 200, Split::Train, AnnotationLevel::FineGrained, 0)
            .unwrap();
        assert!(oracle_partition(&ds).unwrap().iter().all(|&m| !m));
    }

    #[test]
    fn spurious_minority_rate_tracks_rho() {
        let cfg = SpuriousConfig::new(2, 2, 0.95);
        let ds = gen_spurious_features(&cfg, 4000, Split::Train, AnnotationLevel::FineGrained, 5)
            .unwrap();
        let mask = oracle_partition(&ds).unwrap();
        let rate = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
        assert!((rate - 0.05).abs() < 0.015, "minority rate {rate}");

        let balanced =
            gen_spurious_features(&cfg, 4000, Split::Test, AnnotationLevel::FineGrained, 5)
                .unwrap();
        let mask = oracle_partition(&balanced).unwrap();
        let rate = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
        assert!((rate - 0.5).abs() < 0.03, "balanced rate {rate}");
    }

    #[test]
    fn rho_out_of_range_is_a_config_error() {
        let cfg = SpuriousConfig::new(2, 2, 0.3);
        let err = gen_spurious_features(&cfg, 100, Split::Train, AnnotationLevel::None, 0)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    /// Independent oracle: single-block logistic probes fit by gradient
    /// descent. The spurious block must be the easier one on the train split.
    #[test]
    fn spurious_block_is_easier_than_core_block() {
        let cfg = SpuriousConfig::new(2, 2, 0.95);
        let ds = gen_spurious_features(&cfg, 2000, Split::Train, AnnotationLevel::FineGrained, 11)
            .unwrap();

        let accuracy_of_block = |lo: usize, hi: usize| -> f64 {
            let mut w = vec![0.0; hi - lo];
            let mut b = 0.0;
            for _ in 0..300 {
                let mut gw = vec![0.0; w.len()];
                let mut gb = 0.0;
                for i in 0..ds.len() {
                    let x = &ds.features(i)[lo..hi];
                    let z: f64 = w.iter().zip(x).map(|(wv, xv)| wv * xv).sum::<f64>() + b;
                    let p = 1.0 / (1.0 + (-z).exp());
                    let err = p - ds.label(i) as f64;
                    for (g, xv) in gw.iter_mut().zip(x) {
                        *g += err * xv;
                    }
                    gb += err;
                }
                for (wv, g) in w.iter_mut().zip(&gw) {
                    *wv -= 0.5 * g / ds.len() as f64;
                }
                b -= 0.5 * gb / ds.len() as f64;
            }
            let correct = (0..ds.len())
                .filter(|&i| {
                    let x = &ds.features(i)[lo..hi];
                    let z: f64 = w.iter().zip(x).map(|(wv, xv)| wv * xv).sum::<f64>() + b;
                    usize::from(z > 0.0) == ds.label(i)
                })
                .count();
            correct as f64 / ds.len() as f64
        };

        let core_acc = accuracy_of_block(0, 2);
        let spurious_acc = accuracy_of_block(2, 4);
        assert!(
            spurious_acc > core_acc,
            "spurious probe {spurious_acc} should beat core probe {core_acc}"
        );
    }

    #[test]
    fn annotation_masking_per_level() {
        let specs = toy_specs(0.25, 0.05);
        let gen = |annotation, split| {
            gen_gaussian_groups(&specs, 100, split, annotation, 0).unwrap()
        };

        let fine = gen(AnnotationLevel::FineGrained, Split::Train);
        assert!(fine.group_of(0).is_ok());
        assert!(fine.partition(0).is_ok());

        let coarse = gen(AnnotationLevel::Coarse, Split::Train);
        assert!(coarse.group_of(0).is_err());
        assert!(coarse.confounder(0).is_err());
        assert!(coarse.partition(0).is_ok());
        let coarse_val = gen(AnnotationLevel::Coarse, Split::Validation);
        assert!(coarse_val.group_of(0).is_ok());

        let val_only = gen(AnnotationLevel::ValidationOnly, Split::Train);
        assert!(val_only.group_of(0).is_err());
        assert!(val_only.partition(0).is_err());
        let val_only_val = gen(AnnotationLevel::ValidationOnly, Split::Validation);
        assert!(val_only_val.group_of(0).is_ok());

        let none = gen(AnnotationLevel::None, Split::Train);
        assert!(none.group_of(0).is_err());
        assert!(none.partition(0).is_err());
        assert_eq!(none.sample(0).partition, Partition::Unknown);
        assert_eq!(none.sample(0).group, None);

        // Denied reads do not count as restricted accesses; privileged does.
        assert_eq!(none.restricted_reads(), 0);
        let _ = none.privileged();
        assert_eq!(none.restricted_reads(), 1);
    }

    #[test]
    fn save_load_round_trip_preserves_labels_and_flags() {
        let specs = toy_specs(0.25, 0.05);
        let ds = gen_gaussian_groups(&specs, 120, Split::Train, AnnotationLevel::Coarse, 9)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.txt");
        ds.save(&path).unwrap();
        let loaded = Dataset::load(&path).unwrap();
        assert_eq!(loaded.len(), ds.len());
        assert_eq!(loaded.annotation_level(), AnnotationLevel::Coarse);
        assert_eq!(loaded.split(), Split::Train);
        assert_eq!(loaded.n_classes(), 2);
        let a = ds.privileged();
        let b = loaded.privileged();
        for i in 0..ds.len() {
            assert_eq!(ds.label(i), loaded.label(i));
            assert_eq!(a.group_of(i), b.group_of(i));
            assert_eq!(a.is_minority(i), b.is_minority(i));
            for (x, y) in ds.features(i).iter().zip(loaded.features(i)) {
                assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0));
            }
        }
    }
}
