mod common;

use std::collections::{BTreeMap, HashSet};

use astpath::abstraction::{abstract_path, decode_id, encode_labels, AbstractionKind};
use astpath::paths::{
    downsample, extract_all, extract_leafwise, extract_semi, extract_to_target, path_between, path_length,
    path_width, Direction, ExtractionConfig, TARGET_PLACEHOLDER,
};
use astpath::synth::random_tree;
use astpath::tree::{parse_tree, NodeId, SyntaxTree};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tree_from(seed: u64) -> SyntaxTree {
    random_tree(&mut ChaCha8Rng::seed_from_u64(seed), 30)
}

fn dfs_values(tree: &SyntaxTree, n: NodeId, out: &mut Vec<NodeId>) {
    let node = &tree.nodes()[n.index()];
    if node.value.is_some() {
        out.push(n);
    }
    for &c in &node.children {
        dfs_values(tree, c, out);
    }
}

fn multiset(contexts: &[astpath::paths::PathContext]) -> BTreeMap<(Vec<NodeId>, String, String), usize> {
    let mut m = BTreeMap::new();
    for c in contexts {
        *m.entry((c.path.nodes().to_vec(), c.start_value.clone(), c.end_value.clone()))
            .or_default() += 1;
    }
    m
}

#[test]
fn item_to_index_width_by_hand() {
    // item is child 0 of VarDef; i sits under Sub, which is child 1.
    let tree = item_array_i();
    let path = path_between(&tree, find_terminal(&tree, "item"), find_terminal(&tree, "i")).unwrap();
    assert_eq!(path_length(&path), 3);
    assert_eq!(path_width(&tree, &path), 1);
    let array_i = path_between(&tree, find_terminal(&tree, "array"), find_terminal(&tree, "i")).unwrap();
    assert_eq!(path_width(&tree, &array_i), 1);
    assert_eq!(path_length(&array_i), 2);
}

#[test]
fn lca_oracle_on_fifty_trees() {
    for seed in 0..50 {
        let tree = tree_from(seed);
        let terms = tree.terminals();
        for &a in terms {
            for &b in terms {
                if a == b {
                    continue;
                }
                let got = path_between(&tree, a, b).unwrap();
                let want = oracle_path(&tree, a, b);
                assert_eq!(got.nodes(), &want.nodes[..]);
                assert_eq!(path_length(&got), want.length);
                assert_eq!(path_width(&tree, &got), want.width);
                assert_eq!(got.top_index(), want.ups);
            }
        }
    }
}

#[test]
fn terminals_match_recursive_dfs() {
    for seed in 100..200 {
        let tree = tree_from(seed);
        let mut want = Vec::new();
        dfs_values(&tree, tree.root(), &mut want);
        assert_eq!(tree.terminals(), &want[..]);
    }
}

#[test]
fn keep_half_of_ten_thousand() {
    let items: Vec<u32> = (0..10_000).collect();
    let kept = downsample(items.clone(), 0.5, 77);
    assert!((4_700..=5_300).contains(&kept.len()), "{}", kept.len());
    assert_eq!(kept, downsample(items, 0.5, 77));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn leafwise_equals_brute_force(seed in any::<u64>(), l in 1usize..10, w in 0usize..5) {
        let tree = tree_from(seed);
        let mut got: Vec<Vec<NodeId>> = extract_leafwise(&tree, &ExtractionConfig::new(l, w))
            .iter()
            .map(|c| c.path.nodes().to_vec())
            .collect();
        got.sort();
        prop_assert_eq!(got, oracle_leafwise(&tree, l, w));
    }

    #[test]
    fn raising_limits_never_drops_contexts(seed in any::<u64>(), l in 1usize..8, w in 0usize..4, dl in 0usize..3, dw in 0usize..3) {
        let tree = tree_from(seed);
        let small = multiset(&extract_leafwise(&tree, &ExtractionConfig::new(l, w)));
        let large = multiset(&extract_leafwise(&tree, &ExtractionConfig::new(l + dl, w + dw)));
        for (k, n) in &small {
            prop_assert!(large.get(k).copied().unwrap_or(0) >= *n);
        }
    }

    #[test]
    fn emitted_paths_obey_movement_rules(seed in any::<u64>()) {
        let tree = tree_from(seed);
        let cfg = ExtractionConfig { include_semi_paths: true, ..ExtractionConfig::new(7, 3) };
        for c in extract_all(&tree, &cfg) {
            let nodes = c.path.nodes();
            let dirs = c.path.directions();
            prop_assert_eq!(dirs.len() + 1, nodes.len());
            prop_assert!(!dirs.is_empty());
            for (i, d) in dirs.iter().enumerate() {
                match d {
                    Direction::Up => prop_assert_eq!(tree.parent(nodes[i]).unwrap(), Some(nodes[i + 1])),
                    Direction::Down => prop_assert_eq!(tree.parent(nodes[i + 1]).unwrap(), Some(nodes[i])),
                }
            }
            let ups = dirs.iter().take_while(|&&d| d == Direction::Up).count();
            prop_assert!(dirs[ups..].iter().all(|&d| d == Direction::Down));
            prop_assert_eq!(tree.value(c.start_node()), Some(c.start_value.as_str()));
            if tree.is_terminal(c.end_node()) {
                prop_assert_eq!(tree.value(c.end_node()), Some(c.end_value.as_str()));
            }
        }
    }

    #[test]
    fn reversal_symmetry(seed in any::<u64>()) {
        let tree = tree_from(seed);
        let n = tree.len() as u32;
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    let ab = path_between(&tree, NodeId(a), NodeId(b)).unwrap();
                    let ba = path_between(&tree, NodeId(b), NodeId(a)).unwrap();
                    prop_assert_eq!(ab.reversed(), ba);
                }
            }
        }
    }

    #[test]
    fn extraction_is_deterministic(seed in any::<u64>(), keep in 0.0f64..=1.0) {
        let tree = tree_from(seed);
        let cfg = ExtractionConfig { include_semi_paths: true, keep_prob: keep, seed, ..Default::default() };
        let once = downsample(extract_all(&tree, &cfg), keep, seed);
        let twice = downsample(extract_all(&tree, &cfg), keep, seed);
        prop_assert_eq!(format!("{once:?}"), format!("{twice:?}"));
    }

    #[test]
    fn semi_path_count_closed_form(seed in any::<u64>(), l in 1usize..9) {
        let tree = tree_from(seed);
        let want: usize = tree.terminals().iter().map(|&t| (tree.depth(t) as usize).min(l)).sum();
        let semi = extract_semi(&tree, &ExtractionConfig::new(l, 0));
        prop_assert_eq!(semi.len(), want);
        for c in &semi {
            prop_assert!(c.path.directions().iter().all(|&d| d == Direction::Up));
            prop_assert_eq!(path_width(&tree, &c.path), 0);
            prop_assert_eq!(c.end_value.as_str(), tree.kind(c.end_node()));
        }
    }

    #[test]
    fn to_target_equals_brute_force(seed in any::<u64>(), l in 1usize..8, w in 0usize..4) {
        let tree = tree_from(seed);
        let cfg = ExtractionConfig::new(l, w);
        for &target in tree.preorder().iter().filter(|&&n| !tree.is_terminal(n)) {
            let got: Vec<Vec<NodeId>> = extract_to_target(&tree, target, &cfg)
                .unwrap()
                .iter()
                .map(|c| {
                    assert_eq!(c.end_value, TARGET_PLACEHOLDER);
                    c.path.nodes().to_vec()
                })
                .collect();
            let want: Vec<Vec<NodeId>> = tree
                .terminals()
                .iter()
                .map(|&t| oracle_path(&tree, t, target))
                .filter(|p| p.length <= l && p.width <= w)
                .map(|p| p.nodes)
                .collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn parent_inverts_children(seed in any::<u64>()) {
        let tree = tree_from(seed);
        prop_assert_eq!(tree.parent(tree.root()).unwrap(), None);
        let mut edges = 0;
        for node in tree.nodes() {
            for (i, &c) in node.children.iter().enumerate() {
                prop_assert_eq!(tree.parent(c).unwrap(), Some(node.id));
                prop_assert_eq!(tree.child_index(c) as usize, i);
                edges += 1;
            }
        }
        prop_assert_eq!(edges, tree.len() - 1);
        let valued = tree.nodes().iter().filter(|n| n.value.is_some()).count();
        prop_assert_eq!(tree.terminals().len(), valued);
    }

    #[test]
    fn serialization_round_trips(seed in any::<u64>()) {
        let tree = tree_from(seed);
        let back = parse_tree(tree.to_json().as_bytes()).unwrap();
        prop_assert_eq!(back, tree);
    }

    #[test]
    fn coarser_abstractions_merge_never_split(seed in any::<u64>()) {
        use AbstractionKind::*;
        let tree = tree_from(seed);
        let paths: Vec<_> = extract_leafwise(&tree, &ExtractionConfig::new(100, 100)).into_iter().map(|c| c.path).collect();
        let chains = [(Id, NoArrows), (NoArrows, ForgetOrder), (Id, FirstTopLast), (FirstTopLast, FirstLast), (FirstTopLast, Top), (Top, NoPaths)];
        for (fine, coarse) in chains {
            let enc: Vec<_> = paths.iter().map(|p| (abstract_path(&tree, p, fine), abstract_path(&tree, p, coarse))).collect();
            for x in &enc {
                for y in &enc {
                    if x.0 == y.0 {
                        prop_assert_eq!(&x.1, &y.1);
                    }
                }
            }
        }
    }

    #[test]
    fn id_encoding_decodes_and_is_injective(seed in any::<u64>()) {
        let tree = tree_from(seed);
        let mut seen = HashSet::new();
        let mut sequences = HashSet::new();
        for c in extract_leafwise(&tree, &ExtractionConfig::new(100, 100)) {
            let enc = abstract_path(&tree, &c.path, AbstractionKind::Id);
            let labels: Vec<String> = c.path.nodes().iter().map(|&n| tree.kind(n).to_string()).collect();
            let (l, d) = decode_id(enc.as_str()).unwrap();
            prop_assert_eq!(&l, &labels);
            prop_assert_eq!(&d[..], c.path.directions());
            let refs: Vec<&str> = l.iter().map(String::as_str).collect();
            for kind in AbstractionKind::ALL {
                prop_assert_eq!(encode_labels(&refs, &d, kind), abstract_path(&tree, &c.path, kind));
            }
            seen.insert(enc);
            sequences.insert((labels, c.path.directions().to_vec()));
        }
        prop_assert_eq!(seen.len(), sequences.len());
    }
}
