/// Re-execution of the greedy position selection from its definition: a
/// full score table per iteration, best score first, lowest index on ties.
pub fn greedy_oracle(g: &[f64], k: usize, lambda: f64) -> Vec<usize> {
    let l = g.len();
    let max = g.iter().cloned().fold(f64::MIN, f64::max);
    let mut chosen: Vec<usize> = vec![];
    while chosen.len() < k {
        let mut table: Vec<(f64, usize)> = (1..=l)
            .filter(|p| !chosen.contains(p))
            .map(|p| {
                let dmin = chosen.iter().map(|&q| (p as i64 - q as i64).unsigned_abs()).min();
                let penalty = dmin.map_or(0.0, |d| d as f64 / l as f64);
                (g[p - 1] / max + lambda * penalty, p)
            })
            .collect();
        table.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        chosen.push(table[0].1);
    }
    chosen
}
