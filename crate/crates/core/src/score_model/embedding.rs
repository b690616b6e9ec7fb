/// Sinusoidal embedding of a diffusion step.
///
/// Entry `2k` is `sin(t·f_k)` and entry `2k+1` is `cos(t·f_k)` with
/// geometric frequencies `f_k = 10000^{-k/(dim/2)}`. Panics on odd `dim`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    assert!(dim.is_multiple_of(2), "time embedding dimension must be even, got {dim}");
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out
}
