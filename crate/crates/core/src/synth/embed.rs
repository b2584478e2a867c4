use crate::rng::fnv1a;

fn bucket(token: &str, kind: u8, dim: usize) -> usize {
    let mut bytes = Vec::with_capacity(token.len() + 1);
    bytes.push(kind);
    bytes.extend_from_slice(token.as_bytes());
    (fnv1a(&bytes) % dim as u64) as usize
}

/// Hashed unigram+bigram bag of a click path: mean of one-hot buckets,
/// L2-normalized when nonzero. Bigrams make it order-sensitive.
pub fn embed_click_path<S: AsRef<str>>(path: &[S], dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    if dim == 0 || path.is_empty() {
        return v;
    }
    for b in click_path_buckets(path, dim) {
        v[b] += 1.0;
    }
    let count = (2 * path.len() - 1) as f64;
    v.iter_mut().for_each(|x| *x /= count);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Bucket index of every unigram then every bigram, in path order.
pub fn click_path_buckets<S: AsRef<str>>(path: &[S], dim: usize) -> Vec<usize> {
    let unigrams = path.iter().map(|a| bucket(a.as_ref(), b'u', dim));
    let bigrams = path
        .windows(2)
        .map(|w| bucket(&format!("{}\u{1f}{}", w[0].as_ref(), w[1].as_ref()), b'b', dim));
    unigrams.chain(bigrams).collect()
}
