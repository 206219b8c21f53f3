//! Evaluation: top-K recommendation lists, the exposure ratio of target
//! items, and standard utility metrics (hit ratio, NDCG).
//!
//! Evaluation reads each benign user's current local embedding through the
//! simulator's omniscient view; the simulated server has no such access.
//! Ranking excludes only the user's train positives, so test positives
//! remain rankable. Ties break by ascending item index for determinism.

use std::cmp::Ordering;

use crate::data::InteractionData;
use crate::error::Result;
use crate::federation::{ClientState, Role};
use crate::model::{self, ForwardTape, GlobalParams};

/// One user's top-K recommendation list.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKList {
    pub user: usize,
    /// Items by descending score, ties by ascending index.
    pub items: Vec<usize>,
    /// Set when fewer than K eligible items existed (all were returned).
    pub truncated: bool,
}

fn rank_cmp(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    // Descending score, then ascending item index. Scores are finite by
    // construction (forward clamps logits), so the comparison is total.
    b.1.partial_cmp(&a.1)
        .expect("finite scores")
        .then_with(|| a.0.cmp(&b.0))
}

/// Score every item the user has not interacted with (train positives
/// excluded) and return the K best.
pub fn top_k(
    user: usize,
    embedding: &[f64],
    params: &GlobalParams,
    k: usize,
    train_positives: &[usize],
) -> Result<TopKList> {
    let num_items = params.num_items();
    let mut excluded = vec![false; num_items];
    for &i in train_positives {
        excluded[i] = true;
    }
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(num_items - train_positives.len());
    let mut tape = ForwardTape::default();
    for item in 0..num_items {
        if excluded[item] {
            continue;
        }
        let score = model::forward_into(embedding, item, params, &mut tape)?;
        scored.push((item, score));
    }
    let truncated = k > scored.len();
    let take = k.min(scored.len());
    if take > 0 && take < scored.len() {
        scored.select_nth_unstable_by(take - 1, rank_cmp);
        scored.truncate(take);
    }
    scored.sort_unstable_by(rank_cmp);
    Ok(TopKList {
        user,
        items: scored.into_iter().map(|(i, _)| i).collect(),
        truncated,
    })
}

/// Top-K lists of all benign clients, in client order.
pub fn benign_top_k_lists(
    clients: &[ClientState],
    data: &InteractionData,
    params: &GlobalParams,
    k: usize,
) -> Result<Vec<TopKList>> {
    let mut lists = Vec::new();
    for client in clients.iter().filter(|c| c.role == Role::Benign) {
        lists.push(top_k(
            client.user,
            &client.embedding,
            params,
            k,
            data.train_items(client.user),
        )?);
    }
    Ok(lists)
}

/// Exposure ratio of one item at one K.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExposureValue {
    pub value: f64,
    /// Set when no benign user was eligible (value is 0 then).
    pub degenerate: bool,
}

/// Fraction of eligible benign users whose top-K contains `target`.
///
/// A user is eligible when their train set holds no positive for the
/// target. `lists` must be the benign users' lists; entries longer than
/// `k` are cut to their first `k` items.
pub fn er_at_k(
    target: usize,
    k: usize,
    lists: &[TopKList],
    data: &InteractionData,
) -> ExposureValue {
    let mut eligible = 0usize;
    let mut hits = 0usize;
    for list in lists {
        if data.train_items(list.user).contains(&target) {
            continue;
        }
        eligible += 1;
        let cut = k.min(list.items.len());
        if list.items[..cut].contains(&target) {
            hits += 1;
        }
    }
    if eligible == 0 {
        return ExposureValue {
            value: 0.0,
            degenerate: true,
        };
    }
    ExposureValue {
        value: hits as f64 / eligible as f64,
        degenerate: false,
    }
}

/// Per-target exposure ratios for every configured K, plus the mean over
/// targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureResult {
    pub epoch: u64,
    pub ks: Vec<usize>,
    /// `per_target[ki][ti]` is ER at `ks[ki]` of `targets[ti]`.
    pub per_target: Vec<Vec<f64>>,
    /// Mean over targets, one entry per K.
    pub mean: Vec<f64>,
}

pub fn exposure(
    targets: &[usize],
    ks: &[usize],
    lists: &[TopKList],
    data: &InteractionData,
    epoch: u64,
) -> ExposureResult {
    let mut per_target = Vec::with_capacity(ks.len());
    let mut mean = Vec::with_capacity(ks.len());
    for &k in ks {
        let values: Vec<f64> = targets
            .iter()
            .map(|&t| er_at_k(t, k, lists, data).value)
            .collect();
        let m = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        per_target.push(values);
        mean.push(m);
    }
    ExposureResult {
        epoch,
        ks: ks.to_vec(),
        per_target,
        mean,
    }
}

/// Hit ratio and NDCG at K over users with non-empty test sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityMetrics {
    pub hit_ratio: f64,
    pub ndcg: f64,
}

/// Standard leave-out utility: a user scores a hit when any test positive
/// appears in their top-K; NDCG discounts each found test positive by its
/// rank against the ideal ordering. Users without test positives are
/// skipped.
pub fn utility_metrics(lists: &[TopKList], k: usize, data: &InteractionData) -> UtilityMetrics {
    let mut evaluated = 0usize;
    let mut hits = 0usize;
    let mut ndcg_sum = 0.0;
    for list in lists {
        let test = data.test_items(list.user);
        if test.is_empty() {
            continue;
        }
        evaluated += 1;
        let cut = k.min(list.items.len());
        let mut dcg = 0.0;
        let mut found = 0usize;
        for (rank, item) in list.items[..cut].iter().enumerate() {
            if test.contains(item) {
                dcg += 1.0 / ((rank + 2) as f64).log2();
                found += 1;
            }
        }
        if found > 0 {
            hits += 1;
        }
        let ideal_len = test.len().min(k);
        let idcg: f64 = (0..ideal_len).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
        ndcg_sum += dcg / idcg;
    }
    if evaluated == 0 {
        return UtilityMetrics {
            hit_ratio: 0.0,
            ndcg: 0.0,
        };
    }
    UtilityMetrics {
        hit_ratio: hits as f64 / evaluated as f64,
        ndcg: ndcg_sum / evaluated as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{self, InteractionData, SyntheticSpec};
    use crate::model::HyperParams;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn three_item_model(scores_raw: &[f64]) -> (GlobalParams, Vec<f64>) {
        // Identity-ish model: embed_dim 1, one layer passing q through, so
        // the logit equals the item embedding (user half zero-weighted).
        let hyper = HyperParams {
            embed_dim: 1,
            layer_dims: vec![2],
            learning_rate: 1.0,
        };
        let mut params = GlobalParams::zeros(&hyper, scores_raw.len());
        // Two units cover positive and negative logits: relu(q) - relu(-q).
        params.layers[0].weights.set(1, 0, 1.0);
        params.layers[0].weights.set(1, 1, -1.0);
        params.output_weights = vec![1.0, -1.0];
        for (i, &s) in scores_raw.iter().enumerate() {
            params.item_embeddings.set(i, 0, s);
        }
        (params, vec![0.0])
    }

    #[test]
    fn top_k_picks_highest_and_excludes_train() {
        let (params, p) = three_item_model(&[5.0, 2.0, -1.0]);
        let list = top_k(0, &p, &params, 1, &[0]).unwrap();
        assert_eq!(list.items, vec![1]);
        assert!(!list.truncated);
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        let hyper = HyperParams::default();
        let params = GlobalParams::zeros(&hyper, 5);
        let p = vec![0.0; 8];
        let list = top_k(0, &p, &params, 3, &[1]).unwrap();
        assert_eq!(list.items, vec![0, 2, 3]);
    }

    #[test]
    fn top_k_flags_truncation() {
        let (params, p) = three_item_model(&[1.0, 2.0, 3.0]);
        let list = top_k(0, &p, &params, 10, &[2]).unwrap();
        assert_eq!(list.items.len(), 2);
        assert!(list.truncated);
    }

    #[test]
    fn top_k_matches_exhaustive_sort_oracle() {
        let hyper = HyperParams {
            embed_dim: 2,
            layer_dims: vec![4, 3],
            learning_rate: 1.0,
        };
        let mut rng = rng::stream(0xFEED);
        for round in 0..20 {
            let mut params = model::init_params(&hyper, 20, round).unwrap();
            for v in params.item_embeddings.as_mut_slice() {
                *v = rng.random_range(-1.0..1.0);
            }
            let p: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let train: Vec<usize> = (0..20).filter(|_| rng.random_range(0..4) == 0).collect();
            let k = rng.random_range(1..8);

            let list = top_k(0, &p, &params, k, &train).unwrap();

            // Oracle: full sort of every eligible item.
            let mut scored: Vec<(usize, f64)> = (0..20)
                .filter(|i| !train.contains(i))
                .map(|i| {
                    let (s, _) = model::forward(&p, i, &params).unwrap();
                    (i, s)
                })
                .collect();
            scored.sort_by(|a, b| {
                b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0))
            });
            let expected: Vec<usize> = scored.iter().take(k).map(|&(i, _)| i).collect();
            assert_eq!(list.items, expected, "round {round}");
        }
    }

    #[test]
    fn er_counts_single_user() {
        let data = InteractionData::from_train_lists(3, vec![vec![0]]).unwrap();
        let lists = vec![TopKList {
            user: 0,
            items: vec![1, 2],
            truncated: false,
        }];
        let er = er_at_k(1, 2, &lists, &data);
        assert_eq!(er.value, 1.0);
        assert!(!er.degenerate);
        assert_eq!(er_at_k(2, 1, &lists, &data).value, 0.0);
    }

    #[test]
    fn er_degenerate_when_everyone_interacted() {
        let data = InteractionData::from_train_lists(2, vec![vec![0], vec![0, 1]]).unwrap();
        let lists = vec![
            TopKList {
                user: 0,
                items: vec![1],
                truncated: false,
            },
            TopKList {
                user: 1,
                items: vec![],
                truncated: true,
            },
        ];
        let er = er_at_k(0, 1, &lists, &data);
        assert!(er.degenerate);
        assert_eq!(er.value, 0.0);
    }

    #[test]
    fn er_matches_brute_force_recount_on_toy_instance() {
        let spec = SyntheticSpec {
            num_users: 50,
            num_items: 30,
            min_interactions: 3,
            max_interactions: 10,
            exponent: 1.0,
            taste_groups: 1,
            taste_boost: 0.0,
        };
        let data = data::generate_synthetic(&spec, 77).unwrap();
        let hyper = HyperParams {
            embed_dim: 2,
            layer_dims: vec![4],
            learning_rate: 1.0,
        };
        let mut params = model::init_params(&hyper, 30, 3).unwrap();
        let mut rng = rng::stream(4);
        for v in params.item_embeddings.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
        let embeddings: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();

        let k = 5;
        let lists: Vec<TopKList> = (0..50)
            .map(|u| top_k(u, &embeddings[u], &params, k, data.train_items(u)).unwrap())
            .collect();
        let target = 29;
        let er = er_at_k(target, k, &lists, &data);

        // Brute force: rescore and fully sort everything per user.
        let mut hits = 0;
        let mut eligible = 0;
        for u in 0..50 {
            if data.train_items(u).contains(&target) {
                continue;
            }
            eligible += 1;
            let mut scored: Vec<(usize, f64)> = (0..30)
                .filter(|i| !data.train_items(u).contains(i))
                .map(|i| (i, model::forward(&embeddings[u], i, &params).unwrap().0))
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
            if scored.iter().take(k).any(|&(i, _)| i == target) {
                hits += 1;
            }
        }
        assert_eq!(er.value, hits as f64 / eligible as f64);
        assert!(!er.degenerate);
    }

    #[test]
    fn er_with_flat_scores_equals_index_prefix_fraction() {
        // All-zero parameters: every score is 0.5, so the top-K holds the
        // first K eligible indices for each user.
        let data = InteractionData::from_train_lists(
            6,
            vec![vec![0, 1], vec![2], vec![], vec![3, 4, 5]],
        )
        .unwrap();
        let hyper = HyperParams {
            embed_dim: 2,
            layer_dims: vec![3],
            learning_rate: 1.0,
        };
        let params = GlobalParams::zeros(&hyper, 6);
        let k = 2;
        let lists: Vec<TopKList> = (0..4)
            .map(|u| top_k(u, &[0.0, 0.0], &params, k, data.train_items(u)).unwrap())
            .collect();
        for target in 0..6 {
            let expected = {
                let mut hits = 0;
                let mut eligible = 0;
                for u in 0..4 {
                    if data.train_items(u).contains(&target) {
                        continue;
                    }
                    eligible += 1;
                    let prefix: Vec<usize> = (0..6)
                        .filter(|i| !data.train_items(u).contains(i))
                        .take(k)
                        .collect();
                    if prefix.contains(&target) {
                        hits += 1;
                    }
                }
                hits as f64 / eligible as f64
            };
            assert_eq!(er_at_k(target, k, &lists, &data).value, expected, "target {target}");
        }
    }

    #[test]
    fn utility_on_hand_computed_instance() {
        let mut data = InteractionData::from_train_lists(5, vec![vec![0], vec![1]]).unwrap();
        // Splice in test sets directly via the split machinery is overkill
        // here; construct via split of a crafted profile instead.
        // User 0 tests {1}; user 1 tests {} (skipped).
        data = with_test_sets(data, vec![vec![1], vec![]]);

        let lists = vec![
            TopKList {
                user: 0,
                items: vec![1, 2, 3],
                truncated: false,
            },
            TopKList {
                user: 1,
                items: vec![0, 2, 3],
                truncated: false,
            },
        ];
        let m = utility_metrics(&lists, 3, &data);
        // Only user 0 evaluated; test item ranked first: NDCG exactly 1.
        assert_eq!(m.hit_ratio, 1.0);
        assert_eq!(m.ndcg, 1.0);

        let lists_miss = vec![TopKList {
            user: 0,
            items: vec![2, 3, 4],
            truncated: false,
        }];
        let m = utility_metrics(&lists_miss, 3, &data);
        assert_eq!(m.hit_ratio, 0.0);
        assert_eq!(m.ndcg, 0.0);

        // Test item at rank 2 of K=3 with one relevant item:
        // NDCG = (1/log2(3)) / (1/log2(2)) = log(2)/log(3).
        let lists_second = vec![TopKList {
            user: 0,
            items: vec![2, 1, 3],
            truncated: false,
        }];
        let m = utility_metrics(&lists_second, 3, &data);
        assert_eq!(m.hit_ratio, 1.0);
        let expected = (2f64).ln() / (3f64).ln();
        assert!((m.ndcg - expected).abs() < 1e-12, "ndcg = {}", m.ndcg);
    }

    /// Replace test sets for hand-built fixtures.
    fn with_test_sets(data: InteractionData, tests: Vec<Vec<usize>>) -> InteractionData {
        // Round-trip through csv to keep construction on public paths, then
        // overwrite is not possible; instead rebuild directly.
        let train: Vec<Vec<usize>> = (0..data.num_users())
            .map(|u| data.train_items(u).to_vec())
            .collect();
        let mut rebuilt = InteractionData::from_train_lists(data.num_items(), train).unwrap();
        rebuilt.set_test_lists(tests);
        rebuilt
    }

    proptest! {
        /// ER@K is monotone non-decreasing in K.
        #[test]
        fn er_monotone_in_k(seed in 0u64..200) {
            let spec = SyntheticSpec {
                num_users: 15,
                num_items: 12,
                min_interactions: 2,
                max_interactions: 6,
                exponent: 1.0,
                taste_groups: 1,
                taste_boost: 0.0,
            };
            let data = data::generate_synthetic(&spec, seed).unwrap();
            let hyper = HyperParams { embed_dim: 2, layer_dims: vec![3], learning_rate: 1.0 };
            let params = model::init_params(&hyper, 12, seed).unwrap();
            let lists: Vec<TopKList> = (0..15)
                .map(|u| {
                    let p = model::init_user_embedding(2, seed ^ (u as u64 + 1));
                    top_k(u, &p, &params, 12, data.train_items(u)).unwrap()
                })
                .collect();
            let target = (seed % 12) as usize;
            let mut last = 0.0;
            for k in 1..=12 {
                let er = er_at_k(target, k, &lists, &data).value;
                prop_assert!(er >= last, "ER@{} = {} < ER@{} = {}", k, er, k - 1, last);
                last = er;
            }
        }

        /// A user's own train positives never appear in their list.
        #[test]
        fn top_k_never_recommends_train_positives(seed in 0u64..100) {
            let spec = SyntheticSpec {
                num_users: 8,
                num_items: 15,
                min_interactions: 3,
                max_interactions: 8,
                exponent: 1.2,
                taste_groups: 1,
                taste_boost: 0.0,
            };
            let data = data::generate_synthetic(&spec, seed).unwrap();
            let hyper = HyperParams { embed_dim: 2, layer_dims: vec![3], learning_rate: 1.0 };
            let params = model::init_params(&hyper, 15, seed).unwrap();
            for u in 0..8 {
                let p = model::init_user_embedding(2, seed ^ (u as u64 + 31));
                let list = top_k(u, &p, &params, 10, data.train_items(u)).unwrap();
                for item in &list.items {
                    prop_assert!(!data.train_items(u).contains(item));
                }
            }
        }
    }
}
