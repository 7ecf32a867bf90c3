/// Exact top-`n` ids by inner product, ties by id, over plain iterator sums.
pub fn exact_top_n(ids: &[String], vectors: &[Vec<f64>], query: &[f64], n: usize) -> Vec<String> {
    let mut scored: Vec<(f64, &String)> = ids
        .iter()
        .zip(vectors)
        .map(|(id, v)| (v.iter().zip(query).map(|(a, b)| a * b).sum::<f64>(), id))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.into_iter().take(n).map(|(_, id)| id.clone()).collect()
}
