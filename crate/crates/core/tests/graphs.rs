mod oracles;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use kare_core::cluster::{refine_graph, ClusterMapping};
use kare_core::concept_sets::filter_concept_sets;
use kare_core::cooccur::collect_cooccurrence;
use kare_core::ehr::{MedicalCode, Vocabulary};
use kare_core::kg::{k_hop_triples, union_global, ConceptKg, Source, Triple};
use kare_core::paths::{bidirectional_shortest_paths, extract_kg_subgraph, PathParams};
use kare_core::synth::{generate_synthetic_cohort, VocabSizes};
use kare_core::text::parse_bracketed_triples;
use kare_core::vector::top_n_by_cosine;
use oracles::{all_shortest_paths, external_graph, bfs, count_shortest_paths, random_edges};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn name(i: usize) -> String {
    format!("v{i:03}")
}

#[test]
fn bidirectional_search_matches_bfs_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100 {
        let n = rng.gen_range(2..=200);
        let m = rng.gen_range(1..=n * 2);
        let edges = random_edges(&mut rng, n, m);
        let (g, adj, to_graph) = external_graph(n, &edges);
        let present: Vec<usize> = (0..n).filter(|&i| to_graph[i].is_some()).collect();
        if present.len() < 2 {
            continue;
        }
        for _ in 0..10 {
            let pair: Vec<&usize> = present.choose_multiple(&mut rng, 2).collect();
            let (s, t) = (*pair[0], *pair[1]);
            let params = PathParams { max_length: rng.gen_range(1..=8), max_paths: rng.gen_range(1..=40), max_nodes: 12_000 };
            let paths = bidirectional_shortest_paths(&g, to_graph[s].unwrap(), to_graph[t].unwrap(), params).unwrap();
            let dist = bfs(&adj, s)[t];
            match dist {
                Some(d) if d <= params.max_length => {
                    let expected = count_shortest_paths(&adj, s, t).min(params.max_paths as u128);
                    assert_eq!(paths.len() as u128, expected, "case {case}");
                    let distinct: BTreeSet<&Vec<usize>> = paths.iter().collect();
                    assert_eq!(distinct.len(), paths.len());
                    for p in &paths {
                        assert_eq!(p.len(), d + 1, "case {case}: length differs from BFS distance");
                        assert_eq!((p[0], p[d]), (to_graph[s].unwrap(), to_graph[t].unwrap()));
                        for w in p.windows(2) {
                            assert!(g.neighbours(w[0]).contains(&w[1]));
                        }
                    }
                }
                _ => assert!(paths.is_empty(), "case {case}: expected no path"),
            }
        }
    }
}

#[test]
fn subgraph_is_union_of_all_shortest_path_edges() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..30 {
        let n = rng.gen_range(6..25);
        let edges = random_edges(&mut rng, n, n * 2);
        let (g, adj, to_graph) = external_graph(n, &edges);
        let present: Vec<usize> = (0..n).filter(|&i| to_graph[i].is_some()).collect();
        if present.len() < 3 {
            continue;
        }
        let picked: Vec<usize> = present.choose_multiple(&mut rng, 4.min(present.len())).copied().collect();
        let code = |i: usize| MedicalCode::new(Vocabulary::Condition, format!("C{i}"), name(i)).unwrap();
        let concept = code(picked[0]);
        let related: Vec<MedicalCode> = picked[1..].iter().map(|&i| code(i)).collect();
        let params = PathParams { max_length: 7, max_paths: 100_000, max_nodes: 12_000 };
        let got: BTreeSet<Triple> = extract_kg_subgraph(&g, &concept, &related, params).kg.triples.into_keys().collect();

        let mut want = BTreeSet::new();
        for &t in &picked[1..] {
            if bfs(&adj, picked[0])[t].is_some_and(|d| d <= 7) {
                for p in all_shortest_paths(&adj, picked[0], t) {
                    for w in p.windows(2) {
                        for &(a, b) in &edges {
                            if (a, b) == (w[0], w[1]) || (a, b) == (w[1], w[0]) {
                                want.insert(Triple::new(&name(a), "r", &name(b)).unwrap());
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(got, want);
    }
}

fn depth_oracle(triples: &[Triple], start: &str, hops: usize) -> BTreeSet<Triple> {
    let mut dist: BTreeMap<&str, usize> = BTreeMap::from([(start, 0)]);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for t in triples {
            let next = if t.head == u { &t.tail } else if t.tail == u { &t.head } else { continue };
            if !dist.contains_key(next.as_str()) {
                dist.insert(next, dist[u] + 1);
                queue.push_back(next);
            }
        }
    }
    let near = |s: &str| dist.get(s).is_some_and(|&d| d < hops);
    triples.iter().filter(|t| dist.contains_key(start) && (near(&t.head) || near(&t.tail))).cloned().collect()
}

#[test]
fn k_hop_subgraphs_match_depth_limited_bfs() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let n = rng.gen_range(3..30);
        let edges = random_edges(&mut rng, n, n + 5);
        let triples: Vec<Triple> = edges.iter().map(|&(a, b)| Triple::new(&name(a), "rel", &name(b)).unwrap()).collect();
        for start in 0..n {
            for hops in 1..=4 {
                let got: BTreeSet<Triple> = k_hop_triples(&triples, &name(start), hops).into_iter().collect();
                assert_eq!(got, depth_oracle(&triples, &name(start), hops));
            }
        }
    }
}

#[test]
fn union_size_matches_inclusion_exclusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let pool: Vec<Triple> = (0..40).map(|i| Triple::new(&format!("h{}", i % 7), "r", &format!("t{i}")).unwrap()).collect();
    for _ in 0..50 {
        let concepts: Vec<MedicalCode> =
            (0..3).map(|i| MedicalCode::new(Vocabulary::Condition, format!("C{i}"), format!("c{i}")).unwrap()).collect();
        let parts: Vec<ConceptKg> = concepts
            .iter()
            .map(|c| {
                let mut kg = ConceptKg::new(c.clone());
                for t in pool.choose_multiple(&mut rng, 15) {
                    kg.insert(t.clone(), [Source::Kg, Source::Bc, Source::Llm][rng.gen_range(0..3)]);
                }
                kg
            })
            .collect();
        let sets: Vec<BTreeSet<&Triple>> = parts.iter().map(|p| p.triples.keys().collect()).collect();
        let inter = |a: &BTreeSet<&Triple>, b: &BTreeSet<&Triple>| a.intersection(b).count();
        let abc = sets[0].iter().filter(|t| sets[1].contains(*t) && sets[2].contains(*t)).count();
        let expected = sets.iter().map(BTreeSet::len).sum::<usize>()
            - inter(&sets[0], &sets[1])
            - inter(&sets[0], &sets[2])
            - inter(&sets[1], &sets[2])
            + abc;
        let g = union_global(&parts);
        assert_eq!(g.len(), expected);
        for (t, sources) in &g.triples {
            let want: BTreeSet<Source> = parts.iter().filter_map(|p| p.triples.get(t)).flatten().copied().collect();
            assert_eq!(sources, &want);
        }
    }
}

#[test]
fn cooccurrence_matches_pairwise_counter() {
    let sizes = VocabSizes { condition: 8, procedure: 4, medication: 5 };
    let cohort = generate_synthetic_cohort(31, 10, sizes, 0.3).unwrap().records;
    let table = collect_cooccurrence(&cohort, 20);
    let concepts: BTreeSet<&MedicalCode> = cohort.iter().flat_map(|r| r.concepts()).collect();
    for a in &concepts {
        let mut counts: Vec<(MedicalCode, u32)> = concepts
            .iter()
            .filter(|b| *b != a)
            .map(|b| {
                let n = cohort.iter().filter(|r| r.concepts().contains(a) && r.concepts().contains(b)).count() as u32;
                ((*b).clone(), n)
            })
            .filter(|(_, n)| *n > 0)
            .collect();
        counts.sort_by(|x, y| y.1.cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
        counts.truncate(20);
        assert_eq!(table.get(a), counts.as_slice());
    }
}

#[test]
fn concept_set_filter_matches_pairwise_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let sets: Vec<BTreeSet<u32>> = (0..50).map(|_| (0..rng.gen_range(1..10)).map(|_| rng.gen_range(0..15)).collect()).collect();
    let mut kept: Vec<BTreeSet<u32>> = Vec::new();
    for s in &sets {
        let far = kept.iter().all(|k| k.difference(s).count() + s.difference(k).count() >= 5);
        if far {
            kept.push(s.clone());
        }
    }
    assert_eq!(filter_concept_sets(&sets, 5), kept);
}

#[test]
fn document_ranking_matches_exhaustive_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let ids: Vec<String> = (0..100).map(|i| format!("D{i:03}")).collect();
    let docs: Vec<Vec<f32>> = (0..100).map(|_| (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let rows: Vec<(&str, &[f32])> = ids.iter().map(String::as_str).zip(docs.iter().map(Vec::as_slice)).collect();
    for _ in 0..20 {
        let q: Vec<f32> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut all: Vec<(f64, &str)> = rows.iter().map(|(id, v)| (oracles::cos(&q, v), *id)).collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let got: Vec<&str> = top_n_by_cosine(&q, &rows, 10).into_iter().map(|(id, _)| id).collect();
        let want: Vec<&str> = all.iter().take(10).map(|x| x.1).collect();
        assert_eq!(got, want);
    }
    let top = top_n_by_cosine(&docs[42], &rows, 1);
    assert_eq!(top[0].0, "D042");
}

#[test]
fn triple_parsing_fixture() {
    let fixture = [
        ("[[sepsis, causes, organ failure]]", vec![("sepsis", "causes", "organ failure")]),
        ("[[a, r]]", vec![]),
        ("[[a, r, b, c]]", vec![]),
        ("[[\"heart failure\", 'treated by', `diuretics`]]", vec![("heart failure", "treated by", "diuretics")]),
        ("Here you go: [[x, y, z], [p, q, r]] done", vec![("x", "y", "z"), ("p", "q", "r")]),
        ("[[ , r, b]]", vec![]),
        ("[]", vec![]),
        ("no brackets at all", vec![]),
        ("[[a, r, b], [broken], [c, s, d]]", vec![("a", "r", "b"), ("c", "s", "d")]),
        ("[[a,r,b]]", vec![("a", "r", "b")]),
        ("[[  spaced  ,  rel  ,  tail  ]]", vec![("spaced", "rel", "tail")]),
        ("[[a, r, b]", vec![("a", "r", "b")]),
        ("[a, r, b]]", vec![("a", "r", "b")]),
        ("[[a, r\u{1}s, b]]", vec![]),
        ("[[aspirin, reduces risk of, stroke], [aspirin, r]]", vec![("aspirin", "reduces risk of", "stroke")]),
        ("```\n[[k, v, w]]\n```", vec![("k", "v", "w")]),
        ("[[\"\", r, b]]", vec![]),
        ("[[1, 2, 3]]", vec![("1", "2", "3")]),
        ("[[a, r, b]] and later [[c, r, d]]", vec![("a", "r", "b"), ("c", "r", "d")]),
        ("[[insulin, lowers, blood glucose], [insulin, lowers, blood glucose]]", vec![
            ("insulin", "lowers", "blood glucose"),
            ("insulin", "lowers", "blood glucose"),
        ]),
    ];
    assert_eq!(fixture.len(), 20);
    for (text, want) in fixture {
        let want: Vec<(String, String, String)> =
            want.into_iter().map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string())).collect();
        assert_eq!(parse_bracketed_triples(text), want, "{text:?}");
    }
}

#[test]
fn refined_node_count_equals_image_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..30 {
        let n = rng.gen_range(3..40);
        let edges = random_edges(&mut rng, n, n * 2);
        let mut kg = ConceptKg::new(MedicalCode::new(Vocabulary::Condition, "C1", "c1").unwrap());
        for &(a, b) in &edges {
            kg.insert(Triple::new(&name(a), "r", &name(b)).unwrap(), Source::Kg);
        }
        let g = union_global([&kg]);
        let mut mapping = ClusterMapping::identity(&g);
        let nodes: Vec<String> = g.nodes().into_iter().map(String::from).collect();
        for v in &nodes {
            mapping.entities.insert(v.clone(), nodes.choose(&mut rng).unwrap().clone());
        }
        let refined = refine_graph(&g, &mapping).unwrap();
        let image: BTreeSet<&String> = g
            .triples
            .keys()
            .flat_map(|t| [&mapping.entities[&t.head], &mapping.entities[&t.tail]])
            .collect();
        let image_triples: BTreeSet<(&String, &String)> =
            g.triples.keys().map(|t| (&mapping.entities[&t.head], &mapping.entities[&t.tail])).collect();
        assert_eq!(refined.nodes().len(), image.len());
        assert_eq!(refined.len(), image_triples.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_returned_path_is_a_shortest_simple_path(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges = random_edges(&mut rng, n, n * 2);
        let (g, adj, to_graph) = external_graph(n, &edges);
        let present: Vec<usize> = (0..n).filter(|&i| to_graph[i].is_some()).collect();
        prop_assume!(present.len() >= 2);
        let (s, t) = (present[0], present[present.len() - 1]);
        let paths = bidirectional_shortest_paths(&g, to_graph[s].unwrap(), to_graph[t].unwrap(), PathParams::default()).unwrap();
        let mut sorted = paths.clone();
        sorted.sort();
        prop_assert_eq!(&sorted, &paths);
        for p in &paths {
            let distinct: BTreeSet<&usize> = p.iter().collect();
            prop_assert_eq!(distinct.len(), p.len());
            prop_assert_eq!(Some(p.len() - 1), bfs(&adj, s)[t]);
        }
    }

    #[test]
    fn parser_never_panics_and_yields_clean_parts(text in ".{0,200}") {
        for (a, b, c) in parse_bracketed_triples(&text) {
            for part in [a, b, c] {
                prop_assert!(!part.is_empty());
                prop_assert_eq!(part.trim(), part.as_str());
            }
        }
    }
}
