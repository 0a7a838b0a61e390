use fogstore_core::testkit::random_topology;
use fogstore_core::topology::Topology;

/// Cheapest simple path by exhaustive DFS over the link list.
fn enumerate_cheapest(topo: &Topology, from: usize, to: usize) -> f64 {
    let n = topo.len();
    let mut adj = vec![Vec::new(); n];
    for l in topo.links() {
        let (a, b) = (topo.ix(&l.a).unwrap(), topo.ix(&l.b).unwrap());
        adj[a].push((b, l.latency_ms));
        adj[b].push((a, l.latency_ms));
    }
    fn dfs(adj: &[Vec<(usize, f64)>], at: usize, to: usize, seen: &mut Vec<bool>, cost: f64, best: &mut f64) {
        if at == to {
            *best = best.min(cost);
            return;
        }
        for &(next, w) in &adj[at] {
            if !seen[next] {
                seen[next] = true;
                dfs(adj, next, to, seen, cost + w, best);
                seen[next] = false;
            }
        }
    }
    let mut seen = vec![false; n];
    seen[from] = true;
    let mut best = f64::INFINITY;
    dfs(&adj, from, to, &mut seen, 0.0, &mut best);
    best
}

#[test]
fn matches_exhaustive_path_enumeration() {
    for seed in 0..200 {
        let topo = random_topology(seed, 8);
        for a in 0..topo.len() {
            for b in 0..topo.len() {
                let expected = enumerate_cheapest(&topo, a, b);
                assert_eq!(topo.latency_between(a, b), expected, "seed {seed}, {a}->{b}");
            }
        }
    }
}

#[test]
fn triangle_inequality_and_symmetry() {
    for seed in 0..200 {
        let topo = random_topology(seed, 12);
        let n = topo.len();
        for a in 0..n {
            assert_eq!(topo.latency_between(a, a), 0.0);
            for b in 0..n {
                assert_eq!(topo.latency_between(a, b), topo.latency_between(b, a));
                for c in 0..n {
                    let via = topo.latency_between(a, c) + topo.latency_between(c, b);
                    assert!(topo.latency_between(a, b) <= via);
                }
            }
        }
    }
}
