//! Interaction data: file ingestion, implicit conversion, per-user 4:1
//! train/test split, negative sampling, and target-item selection.
//!
//! Ratings are converted to implicit feedback (any rating makes a positive
//! instance) and user/item ids are densely re-indexed from zero in order of
//! first appearance. Duplicate (user, item) records collapse to one
//! positive.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Supported dataset file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// Lines `userId::itemId::rating::timestamp`, integer ids.
    Ml1m,
    /// Comma-separated `user,item,rating,timestamp`, optional header line.
    Csv,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ml-1m" | "ml1m" => Ok(DataFormat::Ml1m),
            "csv" => Ok(DataFormat::Csv),
            other => Err(Error::InvalidParameter(format!(
                "unknown data format `{other}` (expected ml-1m or csv)"
            ))),
        }
    }
}

/// All benign users' positive interactions, split into train and test.
///
/// Train and test lists per user are disjoint; `item_train_counts[i]`
/// equals the number of users whose train list contains item `i`. Before
/// [`split_per_user`] runs, every positive sits in the train lists and the
/// test lists are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionData {
    num_users: usize,
    num_items: usize,
    train: Vec<Vec<usize>>,
    test: Vec<Vec<usize>>,
    item_train_counts: Vec<usize>,
}

impl InteractionData {
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// One user's train positives, in first-appearance order.
    pub fn train_items(&self, user: usize) -> &[usize] {
        &self.train[user]
    }

    pub fn test_items(&self, user: usize) -> &[usize] {
        &self.test[user]
    }

    pub fn item_train_count(&self, item: usize) -> usize {
        self.item_train_counts[item]
    }

    pub fn total_train_positives(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }

    pub fn total_test_positives(&self) -> usize {
        self.test.iter().map(Vec::len).sum()
    }

    /// Mean train-profile length over all users.
    pub fn mean_train_profile(&self) -> f64 {
        if self.num_users == 0 {
            return 0.0;
        }
        self.total_train_positives() as f64 / self.num_users as f64
    }

    /// Build pre-split data from explicit per-user positive lists. Lists
    /// must hold distinct item indices below `num_items`.
    pub fn from_train_lists(num_items: usize, train: Vec<Vec<usize>>) -> Result<Self> {
        for (user, items) in train.iter().enumerate() {
            let mut seen = vec![false; num_items];
            for &i in items {
                if i >= num_items {
                    return Err(Error::ItemOutOfRange {
                        item: i,
                        num_items,
                    });
                }
                if seen[i] {
                    return Err(Error::InvalidParameter(format!(
                        "user {user} lists item {i} twice"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(Self::from_positives(train.len(), num_items, train))
    }

    /// Overwrite the test lists (fixture helper for in-crate tests).
    #[cfg(test)]
    pub(crate) fn set_test_lists(&mut self, tests: Vec<Vec<usize>>) {
        assert_eq!(tests.len(), self.num_users);
        self.test = tests;
    }

    fn from_positives(num_users: usize, num_items: usize, train: Vec<Vec<usize>>) -> Self {
        let mut counts = vec![0usize; num_items];
        for items in &train {
            for &i in items {
                counts[i] += 1;
            }
        }
        InteractionData {
            num_users,
            num_items,
            test: vec![Vec::new(); num_users],
            train,
            item_train_counts: counts,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::MalformedRecord {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Load a rating file and convert it to implicit positives (pre-split:
/// everything lands in the train lists).
///
/// Any rating value becomes a positive interaction. Ids are re-indexed
/// densely from 0 in first-appearance order; duplicates collapse. Ratings
/// and timestamps are parsed for validity even though only the (user, item)
/// pair is kept.
pub fn load_interactions(path: impl AsRef<Path>, format: DataFormat) -> Result<InteractionData> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);

    let mut user_ids: HashMap<u64, usize> = HashMap::new();
    let mut item_ids: HashMap<u64, usize> = HashMap::new();
    let mut train: Vec<Vec<usize>> = Vec::new();
    let mut seen: Vec<HashMap<usize, ()>> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            DataFormat::Ml1m => line.split("::").collect(),
            DataFormat::Csv => line.split(',').collect(),
        };
        if fields.len() != 4 {
            return Err(malformed(
                path,
                line_no,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let user_raw = fields[0].trim();
        if format == DataFormat::Csv && line_no == 1 && user_raw.parse::<u64>().is_err() {
            // Optional header line.
            continue;
        }
        let user_id: u64 = user_raw
            .parse()
            .map_err(|_| malformed(path, line_no, format!("bad user id `{user_raw}`")))?;
        let item_id: u64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| malformed(path, line_no, format!("bad item id `{}`", fields[1].trim())))?;
        let _rating: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| malformed(path, line_no, format!("bad rating `{}`", fields[2].trim())))?;
        let _timestamp: i64 = fields[3].trim().parse().map_err(|_| {
            malformed(path, line_no, format!("bad timestamp `{}`", fields[3].trim()))
        })?;

        let next_user = user_ids.len();
        let user = *user_ids.entry(user_id).or_insert(next_user);
        if user == train.len() {
            train.push(Vec::new());
            seen.push(HashMap::new());
        }
        let next_item = item_ids.len();
        let item = *item_ids.entry(item_id).or_insert(next_item);
        if seen[user].insert(item, ()).is_none() {
            train[user].push(item);
        }
    }

    if train.is_empty() {
        return Err(Error::EmptyDataset(format!("{} holds no records", path.display())));
    }
    Ok(InteractionData::from_positives(
        train.len(),
        item_ids.len(),
        train,
    ))
}

/// Move one fifth of every user's positives to the test set (4:1 split).
///
/// The `floor(count / 5)` test interactions are chosen uniformly without
/// replacement from a per-user stream derived from `seed`; users with
/// fewer than 5 interactions keep everything in train. Both lists preserve
/// the original relative order. Item train counts are recomputed.
pub fn split_per_user(data: InteractionData, seed: u64) -> InteractionData {
    let mut train = Vec::with_capacity(data.num_users);
    let mut test = Vec::with_capacity(data.num_users);
    for (user, items) in data.train.into_iter().enumerate() {
        let n = items.len();
        let k = n / 5;
        if k == 0 {
            train.push(items);
            test.push(Vec::new());
            continue;
        }
        let mut rng = rng::stream(rng::split_seed(seed, user));
        let mut to_test = vec![false; n];
        for pos in index::sample(&mut rng, n, k) {
            to_test[pos] = true;
        }
        let mut tr = Vec::with_capacity(n - k);
        let mut te = Vec::with_capacity(k);
        for (pos, item) in items.into_iter().enumerate() {
            if to_test[pos] {
                te.push(item);
            } else {
                tr.push(item);
            }
        }
        train.push(tr);
        test.push(te);
    }
    let mut out = InteractionData::from_positives(data.num_users, data.num_items, train);
    out.test = test;
    out
}

/// One user's local training instances: train positives plus sampled
/// negatives at ratio `r:1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub user: usize,
    /// (item, label) pairs: positives first (train order), then negatives
    /// in draw order.
    pub pairs: Vec<(usize, bool)>,
    /// Set when fewer than `r * positives` un-interacted items existed, so
    /// every available one was taken.
    pub truncated: bool,
}

impl TrainingSet {
    pub fn num_positives(&self) -> usize {
        self.pairs.iter().filter(|(_, l)| *l).count()
    }

    pub fn num_negatives(&self) -> usize {
        self.pairs.len() - self.num_positives()
    }
}

/// Draw `count` distinct items outside `positives`, uniformly without
/// replacement. Returns the draws plus a truncation flag when fewer than
/// `count` items were available.
pub(crate) fn sample_negative_items(
    positives: &[usize],
    num_items: usize,
    count: usize,
    rng: &mut impl Rng,
) -> (Vec<usize>, bool) {
    let mut excluded = vec![false; num_items];
    for &i in positives {
        excluded[i] = true;
    }
    let available = num_items - positives.len();
    if count >= available {
        // Degenerate: take every un-interacted item, ascending.
        let all: Vec<usize> = (0..num_items).filter(|&i| !excluded[i]).collect();
        let truncated = count > available;
        return (all, truncated);
    }
    if 2 * count <= available {
        // Rejection sampling is cheap while the target is a minority of the pool.
        let mut drawn = Vec::with_capacity(count);
        while drawn.len() < count {
            let i = rng.random_range(0..num_items);
            if !excluded[i] {
                excluded[i] = true;
                drawn.push(i);
            }
        }
        (drawn, false)
    } else {
        let pool: Vec<usize> = (0..num_items).filter(|&i| !excluded[i]).collect();
        let drawn = index::sample(rng, pool.len(), count)
            .into_iter()
            .map(|p| pool[p])
            .collect();
        (drawn, false)
    }
}

/// Build one user's training set for one epoch: all train positives plus
/// `r` negatives per positive, resampled fresh each epoch from a stream
/// derived from (seed, epoch, user).
pub fn sample_negatives(
    user: usize,
    data: &InteractionData,
    r: usize,
    seed: u64,
    epoch: u64,
) -> TrainingSet {
    let positives = data.train_items(user);
    let mut rng = rng::stream(rng::negatives_seed(seed, epoch, user));
    let (negatives, truncated) =
        sample_negative_items(positives, data.num_items, r * positives.len(), &mut rng);
    let mut pairs = Vec::with_capacity(positives.len() + negatives.len());
    pairs.extend(positives.iter().map(|&i| (i, true)));
    pairs.extend(negatives.into_iter().map(|i| (i, false)));
    TrainingSet {
        user,
        pairs,
        truncated,
    }
}

/// The `t` items with the fewest train interactions, ties broken by
/// ascending item index. Returned in selection order.
pub fn select_target_items(data: &InteractionData, t: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..data.num_items).collect();
    order.sort_by_key(|&i| (data.item_train_counts[i], i));
    order.truncate(t);
    order
}

/// Synthetic implicit-feedback dataset with power-law item popularity and
/// latent taste groups.
///
/// Each user gets a profile size drawn uniformly from
/// `[min_interactions, max_interactions]` and fills it with distinct items
/// drawn proportionally to `(item_index + 1)^-exponent`, so low indices are
/// popular and the tail is cold. With `taste_groups > 1`, users and items
/// are assigned to groups round-robin and a user's draws are boosted by
/// `taste_boost` for items of their own group; that gives the data the
/// collaborative structure real interaction logs have, while the marginal
/// item popularity stays power-law. Returned pre-split.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub min_interactions: usize,
    pub max_interactions: usize,
    pub exponent: f64,
    pub taste_groups: usize,
    pub taste_boost: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_users: 200,
            num_items: 100,
            min_interactions: 20,
            max_interactions: 30,
            exponent: 1.2,
            taste_groups: 4,
            taste_boost: 8.0,
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<InteractionData> {
    if spec.num_users == 0 || spec.num_items == 0 {
        return Err(Error::InvalidParameter("synthetic spec needs users and items".into()));
    }
    if spec.min_interactions > spec.max_interactions
        || spec.max_interactions > spec.num_items
    {
        return Err(Error::InvalidParameter(
            "synthetic interaction bounds must satisfy min <= max <= num_items".into(),
        ));
    }
    if spec.taste_groups == 0 || spec.taste_boost < 0.0 {
        return Err(Error::InvalidParameter(
            "taste_groups must be >= 1 and taste_boost non-negative".into(),
        ));
    }
    let mut rng = rng::stream(seed);
    let popularity: Vec<f64> = (0..spec.num_items)
        .map(|i| ((i + 1) as f64).powf(-spec.exponent))
        .collect();

    let mut train = Vec::with_capacity(spec.num_users);
    let mut cumulative = vec![0.0; spec.num_items];
    for user in 0..spec.num_users {
        let group = user % spec.taste_groups;
        // Cumulative weights for this user's group, for binary-search draws.
        let mut total = 0.0;
        for (i, c) in cumulative.iter_mut().enumerate() {
            let boost = if i % spec.taste_groups == group {
                1.0 + spec.taste_boost
            } else {
                1.0
            };
            total += popularity[i] * boost;
            *c = total;
        }
        let size = rng.random_range(spec.min_interactions..=spec.max_interactions);
        let mut taken = vec![false; spec.num_items];
        let mut profile = Vec::with_capacity(size);
        while profile.len() < size {
            let u: f64 = rng.random_range(0.0..total);
            let item = cumulative.partition_point(|&c| c <= u);
            if !taken[item] {
                taken[item] = true;
                profile.push(item);
            }
        }
        train.push(profile);
    }
    Ok(InteractionData::from_positives(
        spec.num_users,
        spec.num_items,
        train,
    ))
}

/// Write interactions as CSV lines `user,item,rating,timestamp` (1-based
/// ids, unit ratings, running timestamps), loadable with `DataFormat::Csv`.
pub fn write_csv(data: &InteractionData, path: impl AsRef<Path>) -> Result<()> {
    use std::io::Write;
    let path: &Path = path.as_ref();
    let mut out =
        std::io::BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let mut stamp = 0u64;
    for user in 0..data.num_users {
        for &item in data.train_items(user).iter().chain(data.test_items(user)) {
            stamp += 1;
            writeln!(out, "{},{},1,{stamp}", user + 1, item + 1).map_err(|e| io_err(path, e))?;
        }
    }
    Ok(())
}

/// Location of an on-disk dataset, kept for error messages.
pub type DatasetPath = PathBuf;
